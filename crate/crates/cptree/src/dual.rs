//! Dual martingale measure: maximise the expected value of a fixed concave
//! utility of terminal wealth over strategies, normalise the marginal
//! utility at the maximiser into a density, and verify the martingale
//! property plus the moment diagnostics backing the search module.
//!
//! The utility is `U(x) = x - 1/2` on `x >= 0` and `-(x - 1)^2 / 2` below,
//! so `U' = max(1, 1 - x) >= 1` everywhere and the resulting density is
//! bounded away from zero together with its reciprocal.

use crate::error::{Error, Result};
use crate::market::{
    check_robust_na, pack_strategy, unpack_strategy, wealth, NaCertificate, ScenarioTree, Strategy,
};
use crate::numerics::cholesky_solve;

/// The fixed concave utility behind the dual construction.
#[derive(Debug, Clone, Copy, Default)]
pub struct UtilityU;

impl UtilityU {
    pub fn value(x: f64) -> f64 {
        if x >= 0.0 {
            x - 0.5
        } else {
            -0.5 * (x - 1.0) * (x - 1.0)
        }
    }

    /// Continuously differentiable across 0: `U'(0) = 1`.
    pub fn derivative(x: f64) -> f64 {
        if x >= 0.0 {
            1.0
        } else {
            1.0 - x
        }
    }

    /// Piecewise constant; the left limit is used at the kink.
    pub fn second(x: f64) -> f64 {
        if x < 0.0 {
            -1.0
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolverTrace {
    pub iterations: usize,
    pub grad_norms: Vec<f64>,
    pub objective: f64,
}

/// Settings for [`construct_q`].
#[derive(Debug, Clone, Copy)]
pub struct ConstructConfig {
    /// Convergence tolerance on the gradient sup-norm.
    pub tol: f64,
    pub max_iter: usize,
    /// Directions probed by the no-arbitrage precheck.
    pub direction_grid: usize,
    /// Largest acceptable martingale residual of the returned density.
    pub residual_threshold: f64,
}

impl Default for ConstructConfig {
    fn default() -> Self {
        ConstructConfig {
            tol: 1e-10,
            max_iter: 500,
            direction_grid: 64,
            residual_threshold: 1e-8,
        }
    }
}

/// A density of an equivalent martingale measure on the terminal atoms,
/// with its per-node conditional expectations and the maximising strategy
/// that produced it.
#[derive(Debug, Clone)]
pub struct MartingaleDensity {
    /// `rho` per terminal atom, aligned with `tree.leaves()`.
    pub rho: Vec<f64>,
    /// `E_P[rho | node]` per node id; equals 1 at the root.
    pub rho_t: Vec<f64>,
    /// Path probability of each leaf under the physical measure.
    pub leaf_p: Vec<f64>,
    /// Path probability of each leaf under the constructed measure.
    pub leaf_q: Vec<f64>,
    pub phi_star: Strategy,
    pub min_rho: f64,
    pub max_rho: f64,
    /// Martingale residual of the returned density (see
    /// [`verify_martingale`]).
    pub residual: f64,
    pub trace: SolverTrace,
}

impl MartingaleDensity {
    /// Probability of `node` under the constructed measure.
    pub fn q_node(&self, tree: &ScenarioTree, node: usize) -> f64 {
        tree.node(node).path_prob * self.rho_t[node]
    }

    /// Conditional branch probabilities under the constructed measure:
    /// `(child, q(child | node))` pairs.
    pub fn q_branches(&self, tree: &ScenarioTree, node: usize) -> Vec<(usize, f64)> {
        let parent = tree.node(node);
        parent
            .children
            .iter()
            .map(|&c| {
                (
                    c,
                    tree.node(c).branch_prob * self.rho_t[c] / self.rho_t[node],
                )
            })
            .collect()
    }
}

fn objective(tree: &ScenarioTree, x: &[f64]) -> f64 {
    let s = unpack_strategy(tree, x);
    let w = wealth(tree, 0.0, &s).expect("packed strategy has the right shape");
    tree.leaves()
        .iter()
        .map(|&l| tree.node(l).path_prob * UtilityU::value(w.values[l]))
        .sum()
}

/// Objective, gradient and (negated) Hessian of `E_P U(X_T^0(phi))` in the
/// stacked strategy coordinates. The gradient block of an information node
/// is `E_P[U'(X_T) dS 1_node]`.
fn objective_grad_hess(tree: &ScenarioTree, x: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let d = tree.assets();
    let n = x.len();
    let block_of: std::collections::HashMap<usize, usize> = tree
        .non_terminal()
        .iter()
        .enumerate()
        .map(|(k, &id)| (id, k))
        .collect();
    let s = unpack_strategy(tree, x);
    let w = wealth(tree, 0.0, &s).expect("packed strategy has the right shape");
    let mut f = 0.0;
    let mut grad = vec![0.0; n];
    let mut neg_hess = vec![0.0; n * n];
    let mut path_edges: Vec<(usize, Vec<f64>)> = Vec::new();
    for &leaf in tree.leaves() {
        let p = tree.node(leaf).path_prob;
        let xt = w.values[leaf];
        f += p * UtilityU::value(xt);
        let u1 = UtilityU::derivative(xt);
        let u2 = UtilityU::second(xt);
        path_edges.clear();
        let mut cur = leaf;
        while let Some(parent) = tree.node(cur).parent {
            path_edges.push((block_of[&parent], tree.delta_s(cur)));
            cur = parent;
        }
        for (bi, dsi) in &path_edges {
            for a in 0..d {
                grad[bi * d + a] += p * u1 * dsi[a];
            }
            if u2 != 0.0 {
                for (bj, dsj) in &path_edges {
                    for a in 0..d {
                        for c in 0..d {
                            // accumulate -H so the Newton system is s.p.d.
                            neg_hess[(bi * d + a) * n + bj * d + c] -= p * u2 * dsi[a] * dsj[c];
                        }
                    }
                }
            }
        }
    }
    (f, grad, neg_hess)
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Construct an equivalent martingale measure by maximising
/// `E_P U(X_T^0(phi))` with damped Newton steps (gradient fallback on the
/// flat region where the Hessian vanishes) and normalising
/// `U'(X_T^0(phi*))` by its expectation.
///
/// Refuses to run when the robust no-arbitrage check fails, since the
/// supremum may then be unattained.
pub fn construct_q(tree: &ScenarioTree, config: &ConstructConfig) -> Result<MartingaleDensity> {
    let na = check_robust_na(tree, config.direction_grid);
    if let Some(failure) = na.failure {
        return Err(Error::NoArbitrage {
            node: failure.node,
            detail: format!(
                "direction {:?} never loses; the dual maximisation may be unbounded",
                failure.direction
            ),
        });
    }
    let n = tree.non_terminal().len() * tree.assets();
    let mut x = pack_strategy(tree, &Strategy::zero(tree));
    let mut grad_norms = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for iter in 0..config.max_iter {
        iterations = iter;
        let (f, grad, neg_hess) = objective_grad_hess(tree, &x);
        let gnorm = sup_norm(&grad);
        grad_norms.push(gnorm);
        if gnorm <= config.tol {
            converged = true;
            break;
        }
        // Levenberg-style damping keeps the system positive definite even
        // on the flat (linear) region of U.
        let diag_scale = (0..n).map(|i| neg_hess[i * n + i]).fold(0.0f64, f64::max);
        let mut mu = 1e-10 * (1.0 + diag_scale);
        let mut direction = None;
        for _ in 0..8 {
            let mut a = neg_hess.clone();
            for i in 0..n {
                a[i * n + i] += mu;
            }
            if let Some(dir) = cholesky_solve(&a, n, &grad) {
                direction = Some(dir);
                break;
            }
            mu *= 100.0;
        }
        let mut dir = direction.unwrap_or_else(|| grad.clone());
        // with mu > 0 the direction is an ascent direction by construction
        let slope: f64 = dir.iter().zip(&grad).map(|(a, b)| a * b).sum();
        let mut slope = slope;
        if slope <= 0.0 {
            dir = grad.clone();
            slope = grad.iter().map(|g| g * g).sum();
        }
        // keep the trial step bounded; backtracking does the rest
        let dmax = sup_norm(&dir);
        let cap = 1e3 * (1.0 + sup_norm(&x));
        if dmax > cap {
            let scale = cap / dmax;
            for v in &mut dir {
                *v *= scale;
            }
            slope *= scale;
        }
        // The damped Newton step contracts the gradient near the maximiser
        // even when the objective improvement is below floating resolution,
        // so test it on gradient contraction first; far from the optimum it
        // falls through to Armijo backtracking on the objective.
        let full: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + b).collect();
        let (_, full_grad, _) = objective_grad_hess(tree, &full);
        if sup_norm(&full_grad) < 0.9 * gnorm {
            x = full;
            continue;
        }
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..70 {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + step * b).collect();
            if trial == x {
                break;
            }
            if objective(tree, &trial) >= f + 1e-4 * step * slope {
                x = trial;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // no progress representable in floating point
            break;
        }
    }
    let (f_final, grad, _) = objective_grad_hess(tree, &x);
    let gnorm = sup_norm(&grad);
    if !converged && gnorm > config.tol {
        return Err(Error::NonConvergence {
            iters: config.max_iter,
            grad_norm: gnorm,
        });
    }
    let phi_star = unpack_strategy(tree, &x);
    let w = wealth(tree, 0.0, &phi_star)?;
    let normaliser: f64 = tree
        .leaves()
        .iter()
        .map(|&l| tree.node(l).path_prob * UtilityU::derivative(w.values[l]))
        .sum();
    let rho: Vec<f64> = tree
        .leaves()
        .iter()
        .map(|&l| UtilityU::derivative(w.values[l]) / normaliser)
        .collect();
    let leaf_p: Vec<f64> = tree
        .leaves()
        .iter()
        .map(|&l| tree.node(l).path_prob)
        .collect();
    let leaf_q: Vec<f64> = leaf_p.iter().zip(&rho).map(|(p, r)| p * r).collect();
    // conditional expectations of rho, bottom-up
    let mut rho_t = vec![0.0; tree.len()];
    for (k, &l) in tree.leaves().iter().enumerate() {
        rho_t[l] = rho[k];
    }
    for depth in (0..tree.horizon()).rev() {
        for &id in tree.level(depth) {
            let node = tree.node(id);
            if node.children.is_empty() {
                continue;
            }
            rho_t[id] = node
                .children
                .iter()
                .map(|&c| tree.node(c).branch_prob * rho_t[c])
                .sum();
        }
    }
    let min_rho = rho.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_rho = rho.iter().cloned().fold(0.0f64, f64::max);
    let mut density = MartingaleDensity {
        rho,
        rho_t,
        leaf_p,
        leaf_q,
        phi_star,
        min_rho,
        max_rho,
        residual: 0.0,
        trace: SolverTrace {
            iterations,
            grad_norms,
            objective: f_final,
        },
    };
    density.residual = verify_martingale(tree, &density);
    if density.residual > config.residual_threshold {
        return Err(Error::NonConvergence {
            iters: iterations,
            grad_norm: density.residual,
        });
    }
    Ok(density)
}

/// Maximum over non-terminal nodes and coordinates of
/// `|E_Q[dS_{t+1} | node]|`, computed exactly from the tree. A value at
/// working precision certifies the martingale property of the density.
pub fn verify_martingale(tree: &ScenarioTree, density: &MartingaleDensity) -> f64 {
    let mut worst = 0.0f64;
    for &id in tree.non_terminal() {
        let node = tree.node(id);
        let mut acc = vec![0.0; tree.assets()];
        for &c in &node.children {
            let q = tree.node(c).branch_prob * density.rho_t[c] / density.rho_t[id];
            for (a, ds) in acc.iter_mut().zip(tree.delta_s(c)) {
                *a += q * ds;
            }
        }
        for a in acc {
            worst = worst.max(a.abs());
        }
    }
    worst
}

/// The admissible exponent ceiling for the negative-part moment bound:
/// exponents in `(1, min(beta/delta, 1 + r/2))` are achievable given the
/// envelope shape and a benchmark integrability order `r`.
pub fn pi_admissible_sup(beta: f64, delta: f64, r: f64) -> f64 {
    (beta / delta).min(1.0 + 0.5 * r)
}

/// Exact moment diagnostics of a strategy under the constructed measure.
#[derive(Debug, Clone)]
pub struct MomentReport {
    pub pi: f64,
    /// `E_Q (X_T)_-^pi`.
    pub terminal_neg_moment: f64,
    /// `E_Q (X_T)_+`.
    pub terminal_pos_mean: f64,
    /// `E_Q [ sup_t (X_t)_-^pi ]`.
    pub running_neg_moment: f64,
    /// `E_Q |X_t|` for `t = 0..=T`.
    pub abs_mean: Vec<f64>,
    /// `E_Q |theta_t|^{1/2}` for `t = 1..=T`.
    pub theta_half_moment: Vec<f64>,
    /// `E_Q (theta_t . dS_t)_+` for `t = 1..=T`.
    pub theta_gain_mean: Vec<f64>,
    /// `max_t |E_Q X_t - z|`: the martingale-transform identity residual.
    pub identity_residual: f64,
    /// `max` over edges of `(theta_t . dS_t)_+ - (X_t)_+ - (X_{t-1})_-`;
    /// non-positive when the pointwise gain bound holds on every atom.
    pub pointwise_gain_violation: f64,
}

pub fn moment_diagnostics(
    tree: &ScenarioTree,
    density: &MartingaleDensity,
    z: f64,
    theta: &Strategy,
    pi: f64,
) -> Result<MomentReport> {
    if pi.is_nan() || pi <= 1.0 {
        return Err(Error::Domain(format!("pi must exceed 1, got {pi}")));
    }
    let w = wealth(tree, z, theta)?;
    let t_max = tree.horizon();
    let q_node = |id: usize| density.q_node(tree, id);

    let mut terminal_neg_moment = 0.0;
    let mut terminal_pos_mean = 0.0;
    let mut running_neg_moment = 0.0;
    for (k, &l) in tree.leaves().iter().enumerate() {
        let q = density.leaf_q[k];
        let xt = w.values[l];
        terminal_neg_moment += q * (-xt).max(0.0).powf(pi);
        terminal_pos_mean += q * xt.max(0.0);
        // running maximum of the negative part along the path
        let mut sup_neg = 0.0f64;
        let mut cur = l;
        loop {
            sup_neg = sup_neg.max((-w.values[cur]).max(0.0));
            match tree.node(cur).parent {
                Some(p) => cur = p,
                None => break,
            }
        }
        running_neg_moment += q * sup_neg.powf(pi);
    }

    let mut abs_mean = Vec::with_capacity(t_max + 1);
    let mut identity_residual = 0.0f64;
    for t in 0..=t_max {
        let mut abs_acc = 0.0;
        let mut mean_acc = 0.0;
        for &id in tree.level(t) {
            let q = q_node(id);
            abs_acc += q * w.values[id].abs();
            mean_acc += q * w.values[id];
        }
        abs_mean.push(abs_acc);
        identity_residual = identity_residual.max((mean_acc - z).abs());
    }

    let mut theta_half_moment = Vec::with_capacity(t_max);
    let mut theta_gain_mean = Vec::with_capacity(t_max);
    let mut pointwise_gain_violation = f64::NEG_INFINITY;
    for t in 1..=t_max {
        let mut half = 0.0;
        let mut gain = 0.0;
        for &id in tree.level(t - 1) {
            half += q_node(id) * theta.norm_at(id).sqrt();
            for &c in &tree.node(id).children {
                let ds = tree.delta_s(c);
                let inc: f64 = theta.theta(id).iter().zip(&ds).map(|(a, b)| a * b).sum();
                gain += q_node(c) * inc.max(0.0);
                let slack = inc.max(0.0) - w.values[c].max(0.0) - (-w.values[id]).max(0.0);
                pointwise_gain_violation = pointwise_gain_violation.max(slack);
            }
        }
        theta_half_moment.push(half);
        theta_gain_mean.push(gain);
    }

    Ok(MomentReport {
        pi,
        terminal_neg_moment,
        terminal_pos_mean,
        running_neg_moment,
        abs_mean,
        theta_half_moment,
        theta_gain_mean,
        identity_residual,
        pointwise_gain_violation,
    })
}

/// Per-time pair `(E_Q |theta_t|^{1/2}, bound)` where the bound is the
/// square root of `E_Q <theta_t, dS_t>_+` times the certificate-weighted
/// reciprocal-density factor
/// `E_Q[ rho_{t-1} kappa_{t-1}^{-1} beta_{t-1}^{-2} E_P[rho_t^{-1} | F_{t-1}] ]`.
///
/// Exact for one-asset trees, where the certificate's constants are exact
/// over both unit directions.
pub fn theta_half_moment_bounds(
    tree: &ScenarioTree,
    density: &MartingaleDensity,
    certificate: &NaCertificate,
    theta: &Strategy,
) -> Result<Vec<(f64, f64)>> {
    if !certificate.pass {
        return Err(Error::Precondition(
            "the no-arbitrage certificate must pass before bounding strategy moments".into(),
        ));
    }
    let mut out = Vec::with_capacity(tree.horizon());
    for t in 1..=tree.horizon() {
        let mut lhs = 0.0;
        let mut gain = 0.0;
        let mut factor = 0.0;
        for &id in tree.level(t - 1) {
            let q = density.q_node(tree, id);
            lhs += q * theta.norm_at(id).sqrt();
            let cert = certificate
                .cert(id)
                .ok_or_else(|| Error::Precondition(format!("no certificate at node {id}")))?;
            let mut recip = 0.0;
            for &c in &tree.node(id).children {
                let ds = tree.delta_s(c);
                let inc: f64 = theta.theta(id).iter().zip(&ds).map(|(a, b)| a * b).sum();
                gain += density.q_node(tree, c) * inc.max(0.0);
                recip += tree.node(c).branch_prob / density.rho_t[c];
            }
            factor += q * density.rho_t[id] / (cert.kappa * cert.beta * cert.beta) * recip;
        }
        out.push((lhs, (gain * factor).sqrt()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn build(tree: &ScenarioTree) -> MartingaleDensity {
        construct_q(tree, &ConstructConfig::default()).unwrap()
    }

    #[test]
    fn symmetric_binomial_keeps_the_physical_measure() {
        let tree = fixtures::symmetric_binomial();
        let q = build(&tree);
        // the one-block objective is maximised at zero holdings, so rho = 1
        assert!(q.phi_star.max_abs().abs() < 1e-12);
        for r in &q.rho {
            assert!((r - 1.0).abs() < 1e-12);
        }
        assert!(q.residual < 1e-12);
        assert!((q.rho_t[tree.root()] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn skewed_binomial_recovers_the_complete_market_measure() {
        // first-order condition: theta* = 2, rho_up = 5/9, Q(up) = 1/3
        let tree = fixtures::skewed_binomial();
        let q = build(&tree);
        let q_up = q.leaf_q[0];
        assert!((q_up - 1.0 / 3.0).abs() < 1e-9, "Q(up) = {q_up}");
        assert!((q.phi_star.theta(0)[0] - 2.0).abs() < 1e-7);
        assert!(verify_martingale(&tree, &q) <= 1e-9);
    }

    #[test]
    fn rho_normalises_and_stays_positive() {
        for seed in 0..10 {
            let tree = fixtures::random_tree(seed);
            let q = build(&tree);
            let total: f64 = q.leaf_q.iter().sum();
            assert!((total - 1.0).abs() < 1e-10);
            assert!(q.min_rho > 0.0);
            assert!(q.max_rho.is_finite());
            assert!(q.residual <= 1e-8, "seed {seed} residual {}", q.residual);
        }
    }

    #[test]
    fn physical_measure_fails_verification_under_drift() {
        let tree = fixtures::skewed_binomial();
        let mut q = build(&tree);
        // overwrite with rho = 1: P itself, which has drift 0.8
        q.rho = vec![1.0, 1.0];
        q.rho_t = vec![1.0; tree.len()];
        let res = verify_martingale(&tree, &q);
        assert!((res - 0.8).abs() < 1e-12);
    }

    #[test]
    fn refuses_arbitrage_markets() {
        let tree = fixtures::one_sided_tree();
        let err = construct_q(&tree, &ConstructConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NoArbitrage { .. }));
    }

    #[test]
    fn gradient_tolerance_controls_the_residual() {
        let tree = fixtures::random_tree(42);
        let q = build(&tree);
        let tol = ConstructConfig::default().tol;
        // provable relation: residual <= tol / (E_P U' * min_node Q(node))
        let phi_w = wealth(&tree, 0.0, &q.phi_star).unwrap();
        let e_u1: f64 = tree
            .leaves()
            .iter()
            .map(|&l| tree.node(l).path_prob * UtilityU::derivative(phi_w.values[l]))
            .sum();
        let min_q = tree
            .non_terminal()
            .iter()
            .map(|&id| q.q_node(&tree, id))
            .fold(f64::INFINITY, f64::min);
        assert!(q.residual <= tol / (e_u1 * min_q) + 1e-12);
    }

    #[test]
    fn zero_strategy_diagnostics() {
        let tree = fixtures::two_step_binomial();
        let q = build(&tree);
        let z = -0.75;
        let report = moment_diagnostics(&tree, &q, z, &Strategy::zero(&tree), 1.5).unwrap();
        assert!(report.theta_half_moment.iter().all(|&m| m == 0.0));
        assert!(report.identity_residual < 1e-12);
        assert!((report.terminal_neg_moment - 0.75f64.powf(1.5)).abs() < 1e-12);
        assert!(report.pointwise_gain_violation <= 1e-15);
    }

    #[test]
    fn skewed_binomial_hand_sums() {
        let tree = fixtures::skewed_binomial();
        let q = build(&tree);
        let s = Strategy::constant(&tree, &[3.0]).unwrap();
        let report = moment_diagnostics(&tree, &q, 0.0, &s, 1.5).unwrap();
        // Q = (1/3, 2/3); theta = 3 gives X_T in {6, -3}
        assert!((report.theta_half_moment[0] - 3.0f64.sqrt()).abs() < 1e-9);
        assert!((report.theta_gain_mean[0] - 2.0).abs() < 1e-9);
        assert!((report.terminal_pos_mean - 2.0).abs() < 1e-9);
        assert!((report.terminal_neg_moment - (2.0 / 3.0) * 3.0f64.powf(1.5)).abs() < 1e-8);
        assert!(report.identity_residual < 1e-9);
    }

    #[test]
    fn martingale_transform_identity_for_random_strategies() {
        for seed in 0..10 {
            let tree = fixtures::random_tree(seed);
            let q = build(&tree);
            let theta = fixtures::random_strategy(&tree, seed + 100, 2.0);
            let report = moment_diagnostics(&tree, &q, 1.0, &theta, 1.25).unwrap();
            assert!(report.identity_residual < 1e-8, "seed {seed}");
            assert!(report.pointwise_gain_violation <= 1e-12, "seed {seed}");
            // positive-part mean is controlled by |z| plus the negative part
            let neg_mean = report.abs_mean.last().unwrap() - report.terminal_pos_mean;
            assert!(report.terminal_pos_mean <= 1.0f64.abs() + neg_mean + 1e-8);
        }
    }

    #[test]
    fn theta_half_bound_holds_on_one_asset_fixtures() {
        let tree = fixtures::two_step_binomial();
        let q = build(&tree);
        let cert = check_robust_na(&tree, 64);
        for seed in 0..20 {
            let theta = fixtures::random_strategy(&tree, seed, 4.0);
            for (lhs, rhs) in theta_half_moment_bounds(&tree, &q, &cert, &theta).unwrap() {
                assert!(lhs <= rhs + 1e-10, "lhs {lhs} rhs {rhs}");
            }
        }
    }

    #[test]
    fn pi_ceiling_combines_envelope_and_benchmark_orders() {
        assert!((pi_admissible_sup(0.9, 0.8, 1.0) - 1.125).abs() < 1e-15);
        assert!((pi_admissible_sup(2.0, 0.5, 0.5) - 1.25).abs() < 1e-15);
    }
}
