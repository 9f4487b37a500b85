//! Derivative-free maximisation of the distorted objective over predictable
//! strategies: seeded multistart compass search on the stacked holding
//! vector, with per-iterate moment diagnostics along the accepted sequence.
//!
//! The objective is piecewise smooth with kinks wherever terminal atoms tie
//! or change sign against the benchmark, so polling beats gradients here.
//! No claim of global optimality is ever made.

use rayon::prelude::*;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::cpt::{cpt_value, CptSpec};
use crate::dual::{theta_half_moment_bounds, MartingaleDensity};
use crate::error::{Error, Result};
use crate::gate::{classify, BenchmarkMode, ParameterVerdict, VerdictTag};
use crate::market::{
    pack_strategy, terminal_distribution, unpack_strategy, NaCertificate, ScenarioTree, Strategy,
};

#[derive(Debug, Clone, Copy)]
pub struct OptimizeConfig {
    /// Number of start points (>= 1); the first is the zero strategy.
    pub starts: usize,
    pub seed: u64,
    /// Initial pattern step.
    pub initial_step: f64,
    /// Step contraction factor in (0, 1), applied when no poll improves.
    pub contraction: f64,
    /// Terminate a start once the step falls below this.
    pub min_step: f64,
    /// Total objective-evaluation budget, split evenly across starts.
    pub budget: usize,
    /// Refuse to run unless the parameter gate reports a well-posed tuple.
    pub require_gate: bool,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        OptimizeConfig {
            starts: 6,
            seed: 0,
            initial_step: 1.0,
            contraction: 0.5,
            min_step: 1e-7,
            budget: 100_000,
            require_gate: false,
        }
    }
}

impl OptimizeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.starts == 0 {
            return Err(Error::Config("starts must be at least 1".into()));
        }
        if !(self.contraction > 0.0 && self.contraction < 1.0) {
            return Err(Error::Config(format!(
                "contraction {} must lie in (0, 1)",
                self.contraction
            )));
        }
        if self.budget < self.starts {
            return Err(Error::Config(
                "budget must cover at least one evaluation per start".into(),
            ));
        }
        if !(self.initial_step > 0.0 && self.min_step > 0.0 && self.min_step <= self.initial_step) {
            return Err(Error::Config("need 0 < min_step <= initial_step".into()));
        }
        Ok(())
    }
}

/// Density and no-arbitrage certificate used to record per-iterate moment
/// diagnostics along the accepted sequence.
#[derive(Clone, Copy)]
pub struct Diagnostics<'a> {
    pub density: &'a MartingaleDensity,
    pub certificate: &'a NaCertificate,
}

/// Objective triple `(V, V_+, V_-)`.
type Valuation = (f64, f64, f64);

/// Per-iterate diagnostics: the per-period half-moments and the
/// `(lhs, bound)` pairs of the strategy-moment inequality.
type DiagRow = (Vec<f64>, Vec<(f64, f64)>);

/// One accepted iterate of one start.
#[derive(Debug, Clone)]
pub struct TraceRow {
    pub start: usize,
    /// Objective evaluations consumed by this start up to acceptance.
    pub evals: usize,
    pub v: f64,
    pub v_plus: f64,
    pub v_minus: f64,
    /// Best objective seen so far within this start.
    pub best_v: f64,
    /// `E_Q |theta_t|^{1/2}` per period (empty without diagnostics).
    pub theta_half_moment: Vec<f64>,
    /// Per-period `(lhs, bound)` pairs of the strategy-moment inequality
    /// (empty without diagnostics).
    pub moment_bounds: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct StartSummary {
    pub start: usize,
    pub best_v: f64,
    pub evals: usize,
    pub final_step: f64,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct OptimizeResult {
    pub theta_star: Strategy,
    pub v_star: f64,
    pub v_plus: f64,
    pub v_minus: f64,
    pub winner_start: usize,
    /// All starts terminated by step collapse rather than budget.
    pub converged: bool,
    pub evaluations: usize,
    /// Largest loss part seen along all accepted iterates.
    pub sup_v_minus: f64,
    pub trace: Vec<TraceRow>,
    pub starts: Vec<StartSummary>,
    pub gate: Option<ParameterVerdict>,
}

/// `(V, V_+, V_-)` of a strategy: terminal law composed with the distorted
/// functionals.
pub fn evaluate_strategy(
    tree: &ScenarioTree,
    spec: &CptSpec,
    z: f64,
    theta: &Strategy,
) -> Result<(f64, f64, f64)> {
    let dist = terminal_distribution(tree, z, theta)?;
    cpt_value(&dist, spec)
}

/// Admissibility of a strategy at initial capital `z`.
///
/// On a finite tree every strategy has a finite loss part, so this is
/// identically true; it is kept as an explicit hook so call sites read the
/// same against backends with infinite-support laws.
pub fn admissible(_tree: &ScenarioTree, _z: f64, _theta: &Strategy) -> bool {
    true
}

struct StartOutcome {
    summary: StartSummary,
    best_x: Vec<f64>,
    best: Valuation,
    rows: Vec<TraceRow>,
}

fn start_points(
    tree: &ScenarioTree,
    config: &OptimizeConfig,
    diagnostics: Option<&Diagnostics>,
) -> Vec<Vec<f64>> {
    let dim = tree.non_terminal().len() * tree.assets();
    let mut points = Vec::with_capacity(config.starts);
    points.push(vec![0.0; dim]);
    if let Some(diag) = diagnostics {
        if points.len() < config.starts {
            points.push(pack_strategy(tree, &diag.density.phi_star));
        }
    }
    // per-coordinate scale 1/kappa of the owning node, when certified
    let mut scales = vec![1.0; dim];
    if let Some(diag) = diagnostics {
        for (k, &id) in tree.non_terminal().iter().enumerate() {
            if let Some(cert) = diag.certificate.cert(id) {
                for a in 0..tree.assets() {
                    scales[k * tree.assets() + a] = 1.0 / cert.kappa;
                }
            }
        }
    }
    let mut idx = points.len();
    while points.len() < config.starts {
        let mut rng = ChaCha8Rng::seed_from_u64(
            config.seed ^ (idx as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        );
        let x: Vec<f64> = scales
            .iter()
            .map(|s| s * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
            .collect();
        points.push(x);
        idx += 1;
    }
    points
}

fn run_start(
    tree: &ScenarioTree,
    spec: &CptSpec,
    z: f64,
    config: &OptimizeConfig,
    diagnostics: Option<&Diagnostics>,
    start: usize,
    x0: Vec<f64>,
) -> Result<StartOutcome> {
    let budget = config.budget / config.starts;
    let dim = x0.len();
    let eval = |x: &[f64]| -> Result<Valuation> {
        evaluate_strategy(tree, spec, z, &unpack_strategy(tree, x))
    };
    let diag_row = |x: &[f64]| -> Result<DiagRow> {
        match diagnostics {
            Some(d) => {
                let theta = unpack_strategy(tree, x);
                let bounds = theta_half_moment_bounds(tree, d.density, d.certificate, &theta)?;
                let halves = bounds.iter().map(|b| b.0).collect();
                Ok((halves, bounds))
            }
            None => Ok((Vec::new(), Vec::new())),
        }
    };
    let mut x = x0;
    let mut current = eval(&x)?;
    let mut evals = 1usize;
    let mut rows = Vec::new();
    let (halves, bounds) = diag_row(&x)?;
    rows.push(TraceRow {
        start,
        evals,
        v: current.0,
        v_plus: current.1,
        v_minus: current.2,
        best_v: current.0,
        theta_half_moment: halves,
        moment_bounds: bounds,
    });
    let mut step = config.initial_step;
    let mut converged = false;
    'outer: loop {
        if step < config.min_step {
            converged = true;
            break;
        }
        if evals >= budget {
            break;
        }
        // best-improvement poll over all +-step coordinate moves; the
        // best-of-all rule keeps the trajectory equivariant under
        // relabelings of the information nodes
        let mut best_move: Option<(usize, f64, Valuation)> = None;
        for i in 0..dim {
            for sign in [1.0f64, -1.0] {
                if evals >= budget {
                    if best_move.is_none() {
                        break 'outer;
                    }
                    break;
                }
                let old = x[i];
                x[i] = old + sign * step;
                let cand = eval(&x)?;
                x[i] = old;
                evals += 1;
                if cand.0 > current.0 {
                    let better = match &best_move {
                        Some((_, _, inc)) => cand.0 > inc.0,
                        None => true,
                    };
                    if better {
                        best_move = Some((i, sign, cand));
                    }
                }
            }
        }
        match best_move {
            Some((i, sign, cand)) => {
                x[i] += sign * step;
                current = cand;
                let (halves, bounds) = diag_row(&x)?;
                let best_v = rows
                    .last()
                    .map(|r: &TraceRow| r.best_v.max(current.0))
                    .unwrap();
                rows.push(TraceRow {
                    start,
                    evals,
                    v: current.0,
                    v_plus: current.1,
                    v_minus: current.2,
                    best_v,
                    theta_half_moment: halves,
                    moment_bounds: bounds,
                });
            }
            None => step *= config.contraction,
        }
    }
    Ok(StartOutcome {
        summary: StartSummary {
            start,
            best_v: current.0,
            evals,
            final_step: step,
            converged,
        },
        best_x: x,
        best: current,
        rows,
    })
}

/// Multistart compass search over the stacked strategy coordinates.
/// Starts run in parallel; the winner is the best final value with ties
/// broken by the lower start index, so results are reproducible for a
/// fixed seed.
///
/// The search treats the objective as continuous in the holdings; the
/// power family guarantees that, custom utilities and distortions are
/// expected to as well.
pub fn maximize_cpt(
    tree: &ScenarioTree,
    spec: &CptSpec,
    z: f64,
    config: &OptimizeConfig,
    diagnostics: Option<Diagnostics>,
) -> Result<OptimizeResult> {
    config.validate()?;
    let gate = if config.require_gate {
        let e = &spec.envelope;
        let verdict = classify(e.alpha, e.beta, e.gamma, e.delta, BenchmarkMode::Ba)?;
        match verdict.tag {
            VerdictTag::WellPosedA | VerdictTag::WellPosedB => Some(verdict),
            _ => {
                return Err(Error::Precondition(format!(
                    "gate refused the parameter tuple: {:?} ({})",
                    verdict.tag, verdict.witness
                )))
            }
        }
    } else {
        None
    };
    let points = start_points(tree, config, diagnostics.as_ref());
    let outcomes: Result<Vec<StartOutcome>> = points
        .into_par_iter()
        .enumerate()
        .map(|(idx, x0)| run_start(tree, spec, z, config, diagnostics.as_ref(), idx, x0))
        .collect();
    let outcomes = outcomes?;
    let winner = outcomes
        .iter()
        .enumerate()
        .max_by(|(ia, a), (ib, b)| {
            a.best
                .0
                .partial_cmp(&b.best.0)
                .expect("objective values are finite")
                .then(ib.cmp(ia)) // prefer the lower start index on ties
        })
        .map(|(i, _)| i)
        .expect("at least one start");
    let total_evals = outcomes.iter().map(|o| o.summary.evals).sum();
    let converged = outcomes.iter().all(|o| o.summary.converged);
    let sup_v_minus = outcomes
        .iter()
        .flat_map(|o| o.rows.iter().map(|r| r.v_minus))
        .fold(0.0f64, f64::max);
    let best = &outcomes[winner];
    let theta_star = unpack_strategy(tree, &best.best_x);
    let mut trace = Vec::new();
    let mut starts = Vec::new();
    for o in &outcomes {
        trace.extend(o.rows.iter().cloned());
        starts.push(o.summary.clone());
    }
    Ok(OptimizeResult {
        theta_star,
        v_star: best.best.0,
        v_plus: best.best.1,
        v_minus: best.best.2,
        winner_start: winner,
        converged,
        evaluations: total_evals,
        sup_v_minus,
        trace,
        starts,
        gate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cpt::UtilityFn;
    use crate::dual::{construct_q, ConstructConfig};
    use crate::fixtures;
    use crate::market::check_robust_na;

    fn grid_oracle(tree: &ScenarioTree, spec: &CptSpec, z: f64) -> (f64, f64) {
        // dense one-dimensional search, step 1e-3 over [-50, 50]
        let mut best = (f64::NEG_INFINITY, 0.0);
        let mut k = -50_000i64;
        while k <= 50_000 {
            let theta = k as f64 * 1e-3;
            let s = Strategy::constant(tree, &[theta]).unwrap();
            let (v, _, _) = evaluate_strategy(tree, spec, z, &s).unwrap();
            if v > best.0 {
                best = (v, theta);
            }
            k += 1;
        }
        best
    }

    #[test]
    fn trivial_evaluations() {
        let tree = fixtures::two_step_binomial();
        let spec = CptSpec::power(0.5, 0.9, 0.6, 0.8).unwrap();
        let zero = Strategy::zero(&tree);
        let (v, vp, vm) = evaluate_strategy(&tree, &spec, 4.0, &zero).unwrap();
        assert!((v - 2.0).abs() < 1e-12 && (vp - 2.0).abs() < 1e-12 && vm == 0.0);
        let (v, vp, vm) = evaluate_strategy(&tree, &spec, -4.0, &zero).unwrap();
        assert!(vp == 0.0 && (vm - 4.0f64.powf(0.9)).abs() < 1e-12);
        assert!((v + 4.0f64.powf(0.9)).abs() < 1e-12);
    }

    #[test]
    fn evaluation_matches_the_composed_oracles() {
        // independent route: enumerate paths into a law, then integrate
        // both tails with the brute Riemann oracle
        let tree = fixtures::two_step_binomial();
        let spec = CptSpec::power(0.5, 0.9, 0.6, 0.8).unwrap();
        let z = 0.75;
        let theta = fixtures::random_strategy(&tree, 4, 2.0);
        let (v, v_plus, v_minus) = evaluate_strategy(&tree, &spec, z, &theta).unwrap();
        let mut atoms: Vec<(f64, f64)> = Vec::new();
        for &leaf in tree.leaves() {
            let mut x = z;
            let mut prob = 1.0;
            let mut cur = leaf;
            while let Some(p) = tree.node(cur).parent {
                let ds = tree.delta_s(cur);
                x += theta.theta(p)[0] * ds[0];
                prob *= tree.node(cur).branch_prob;
                cur = p;
            }
            atoms.push((x - tree.node(leaf).benchmark, prob));
        }
        let law = crate::cpt::DiscreteDistribution::new(atoms).unwrap();
        let step = 1e-6;
        let cutoff = law.max_value().abs().max(law.min_value().abs()).max(1.0) + 1.0;
        let brute_plus = crate::cpt::choquet_brute(
            &law,
            |x| spec.u_plus.eval(x.max(0.0)),
            |p| spec.w_plus.eval(p),
            step,
            cutoff,
        )
        .unwrap();
        let brute_minus = crate::cpt::choquet_brute(
            &law,
            |x| spec.u_minus.eval((-x).max(0.0)),
            |p| spec.w_minus.eval(p),
            step,
            cutoff,
        )
        .unwrap();
        assert!((v_plus - brute_plus).abs() <= 10.0 * step);
        assert!((v_minus - brute_minus).abs() <= 10.0 * step);
        assert!((v - (brute_plus - brute_minus)).abs() <= 20.0 * step);
    }

    #[test]
    fn matches_dense_grid_on_the_complete_market() {
        // gains sqrt, losses twice as steep, undistorted
        let tree = fixtures::symmetric_binomial();
        let spec = CptSpec::power_with_coeffs(0.5, 0.5, 1.0, 1.0, 1.0, 2.0).unwrap();
        let z = 1.0;
        let (oracle_v, _) = grid_oracle(&tree, &spec, z);
        let config = OptimizeConfig {
            starts: 4,
            seed: 7,
            budget: 40_000,
            ..OptimizeConfig::default()
        };
        let res = maximize_cpt(&tree, &spec, z, &config, None).unwrap();
        assert!(
            (res.v_star - oracle_v).abs() < 1e-4,
            "search {} vs grid {oracle_v}",
            res.v_star
        );
        assert!(res.converged);
        // recomputable
        let (v, _, _) = evaluate_strategy(&tree, &spec, z, &res.theta_star).unwrap();
        assert_eq!(v, res.v_star);
    }

    #[test]
    fn gainless_preferences_keep_the_zero_strategy() {
        let tree = fixtures::symmetric_binomial();
        let spec = CptSpec {
            u_plus: UtilityFn::custom(|_| 0.0),
            ..CptSpec::power(0.5, 0.9, 1.0, 1.0).unwrap()
        };
        let res = maximize_cpt(
            &tree,
            &spec,
            0.0,
            &OptimizeConfig {
                starts: 3,
                budget: 10_000,
                ..OptimizeConfig::default()
            },
            None,
        )
        .unwrap();
        assert_eq!(res.v_star, 0.0);
        assert_eq!(res.theta_star.max_abs(), 0.0);
        assert_eq!(res.winner_start, 0);
    }

    #[test]
    fn flat_blocks_terminate_with_collapsed_step() {
        let tree = fixtures::flat_block_tree();
        let spec = CptSpec::power(0.5, 0.9, 0.6, 0.8).unwrap();
        let config = OptimizeConfig {
            starts: 1,
            budget: 20_000,
            ..OptimizeConfig::default()
        };
        let res = maximize_cpt(&tree, &spec, 0.5, &config, None).unwrap();
        assert!(res.converged);
        assert!(res.starts[0].final_step < config.min_step);
    }

    #[test]
    fn zero_start_keeps_v_at_least_v0() {
        for seed in 0..5 {
            let tree = fixtures::random_tree(seed);
            let spec = CptSpec::power(0.5, 0.9, 0.6, 0.8).unwrap();
            let z = 0.3;
            let (v0, _, _) = evaluate_strategy(&tree, &spec, z, &Strategy::zero(&tree)).unwrap();
            let res = maximize_cpt(
                &tree,
                &spec,
                z,
                &OptimizeConfig {
                    starts: 3,
                    seed,
                    budget: 9_000,
                    ..OptimizeConfig::default()
                },
                None,
            )
            .unwrap();
            assert!(res.v_star >= v0 - 1e-15);
        }
    }

    #[test]
    fn identical_seeds_reproduce_bitwise() {
        let tree = fixtures::two_step_binomial();
        let spec = CptSpec::power(0.5, 0.9, 0.6, 0.8).unwrap();
        let config = OptimizeConfig {
            starts: 5,
            seed: 1234,
            budget: 15_000,
            ..OptimizeConfig::default()
        };
        let a = maximize_cpt(&tree, &spec, 0.5, &config, None).unwrap();
        let b = maximize_cpt(&tree, &spec, 0.5, &config, None).unwrap();
        assert_eq!(a.v_star.to_bits(), b.v_star.to_bits());
        assert_eq!(a.winner_start, b.winner_start);
        for (&id_a, &id_b) in tree.non_terminal().iter().zip(tree.non_terminal()) {
            assert_eq!(
                a.theta_star.theta(id_a)[0].to_bits(),
                b.theta_star.theta(id_b)[0].to_bits()
            );
        }
    }

    #[test]
    fn sibling_relabeling_preserves_the_value() {
        // the same filtered market with the two depth-1 subtrees swapped
        let build = |swapped: bool| {
            let mut b = crate::market::TreeBuilder::new(1, vec![10.0]);
            let specs = if swapped {
                [(0.4, 9.0), (0.6, 11.0)]
            } else {
                [(0.6, 11.0), (0.4, 9.0)]
            };
            for (p, s) in specs {
                let mid = b.add_child(0, p, vec![s]);
                b.add_child(mid, 0.7, vec![s + 1.0]);
                b.add_child(mid, 0.3, vec![s - 1.5]);
            }
            b.build().unwrap()
        };
        let spec = CptSpec::power(0.5, 0.9, 0.6, 0.8).unwrap();
        let config = OptimizeConfig {
            starts: 1, // deterministic zero start; polling is equivariant
            budget: 30_000,
            ..OptimizeConfig::default()
        };
        let a = maximize_cpt(&build(false), &spec, 0.5, &config, None).unwrap();
        let b = maximize_cpt(&build(true), &spec, 0.5, &config, None).unwrap();
        assert!((a.v_star - b.v_star).abs() < 1e-10);
    }

    #[test]
    fn gate_refusal_blocks_ill_posed_tuples() {
        let tree = fixtures::symmetric_binomial();
        let spec = CptSpec::power(0.9, 0.8, 1.0, 1.0).unwrap();
        let err = maximize_cpt(
            &tree,
            &spec,
            0.0,
            &OptimizeConfig {
                require_gate: true,
                ..OptimizeConfig::default()
            },
            None,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
    }

    #[test]
    fn diagnostics_rows_satisfy_the_moment_bound() {
        let tree = fixtures::two_step_binomial();
        let density = construct_q(&tree, &ConstructConfig::default()).unwrap();
        let cert = check_robust_na(&tree, 64);
        let spec = CptSpec::power(0.5, 0.9, 0.6, 0.8).unwrap();
        let res = maximize_cpt(
            &tree,
            &spec,
            0.5,
            &OptimizeConfig {
                starts: 4,
                seed: 3,
                budget: 8_000,
                ..OptimizeConfig::default()
            },
            Some(Diagnostics {
                density: &density,
                certificate: &cert,
            }),
        )
        .unwrap();
        assert!(!res.trace.is_empty());
        for row in &res.trace {
            for &(lhs, rhs) in &row.moment_bounds {
                assert!(lhs <= rhs + 1e-10, "lhs {lhs} rhs {rhs}");
            }
        }
        // best-so-far is nondecreasing within each start
        for s in 0..4 {
            let mut prev = f64::NEG_INFINITY;
            for row in res.trace.iter().filter(|r| r.start == s) {
                assert!(row.best_v >= prev);
                prev = row.best_v;
            }
        }
        assert!(res.sup_v_minus.is_finite());
    }
}
