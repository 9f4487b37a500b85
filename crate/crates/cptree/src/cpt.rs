//! Power-like utilities, probability distortions, and exact Choquet
//! evaluation of the gain/loss functionals on finite discrete laws.
//!
//! The central quantity is the distorted tail integral
//! `∫_0^∞ w(P(u(X) > y)) dy`, which on a discrete law is a finite step sum:
//! with `v_1 > v_2 > ... > v_n > 0` the distinct positive values of `u(X)`
//! and `P_k = P(u(X) >= v_k)` cumulated from the top, the integral equals
//! `Σ_k (v_k - v_{k+1}) w(P_k)` with `v_{n+1} := 0`. The strict tail
//! `P(u > y)` and the closed tail `P(u >= y)` differ only at the jump
//! points, a Lebesgue-null set, so using closed cumulatives at the jumps
//! evaluates the strict-tail integrand exactly.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::log_sum_exp;

/// Tolerance on the atom probability sum of a discrete law.
pub const PROB_SUM_TOL: f64 = 1e-12;

type DynFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Utility function on the non-negative half line, `u(0) = 0`.
#[derive(Clone)]
pub enum UtilityFn {
    /// `u(x) = coeff * x^exponent` with `coeff, exponent > 0`.
    Power { coeff: f64, exponent: f64 },
    /// Arbitrary user function; envelope constants must be supplied
    /// explicitly on the owning [`CptSpec`].
    Custom(DynFn),
}

impl UtilityFn {
    pub fn power(coeff: f64, exponent: f64) -> Self {
        UtilityFn::Power { coeff, exponent }
    }

    pub fn custom(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        UtilityFn::Custom(Arc::new(f))
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            UtilityFn::Power { coeff, exponent } => {
                if x == 0.0 {
                    0.0
                } else {
                    coeff * x.powf(*exponent)
                }
            }
            UtilityFn::Custom(f) => f(x),
        }
    }

    /// `ln u(exp(ln_x))` where available in closed form (power family).
    pub fn log_eval(&self, ln_x: f64) -> Option<f64> {
        match self {
            UtilityFn::Power { coeff, exponent } => Some(coeff.ln() + exponent * ln_x),
            UtilityFn::Custom(_) => None,
        }
    }

    pub fn is_power(&self) -> bool {
        matches!(self, UtilityFn::Power { .. })
    }
}

impl fmt::Debug for UtilityFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UtilityFn::Power { coeff, exponent } => {
                write!(f, "Power {{ coeff: {coeff}, exponent: {exponent} }}")
            }
            UtilityFn::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// Probability distortion on `[0, 1]` with `w(0) = 0`, `w(1) = 1`,
/// required nondecreasing.
#[derive(Clone)]
pub enum DistortionFn {
    /// `w(p) = p^exponent`; the coefficient is pinned to 1 so that
    /// `w(1) = 1` holds identically.
    Power {
        exponent: f64,
    },
    Custom(DynFn),
}

impl DistortionFn {
    pub fn power(exponent: f64) -> Self {
        DistortionFn::Power { exponent }
    }

    pub fn identity() -> Self {
        DistortionFn::Power { exponent: 1.0 }
    }

    pub fn custom(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        DistortionFn::Custom(Arc::new(f))
    }

    pub fn eval(&self, p: f64) -> f64 {
        match self {
            DistortionFn::Power { exponent } => {
                if p == 0.0 {
                    0.0
                } else {
                    p.powf(*exponent)
                }
            }
            DistortionFn::Custom(f) => f(p),
        }
    }

    /// `ln w(exp(ln_p))` where available in closed form.
    pub fn log_eval(&self, ln_p: f64) -> Option<f64> {
        match self {
            DistortionFn::Power { exponent } => Some(exponent * ln_p),
            DistortionFn::Custom(_) => None,
        }
    }

    pub fn is_power(&self) -> bool {
        matches!(self, DistortionFn::Power { .. })
    }
}

impl fmt::Debug for DistortionFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DistortionFn::Power { exponent } => write!(f, "Power {{ exponent: {exponent} }}"),
            DistortionFn::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// Envelope constants bounding the four functions by powers:
/// `u_+(x) <= k_+ (x^alpha + 1)`, `u_-(x) >= k_- (x^beta - 1)`,
/// `w_+(p) <= g_+ p^gamma`, `w_-(p) >= g_- p^delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub k_plus: f64,
    pub k_minus: f64,
    pub g_plus: f64,
    pub g_minus: f64,
}

impl Envelope {
    pub fn validate(&self) -> Result<()> {
        let vals = [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("delta", self.delta),
            ("k_plus", self.k_plus),
            ("k_minus", self.k_minus),
            ("g_plus", self.g_plus),
            ("g_minus", self.g_minus),
        ];
        for (name, v) in vals {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidSpec(format!(
                    "envelope constant {name} must be finite and > 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// The four functions of a behavioural preference plus their envelope
/// constants. Gains and losses are valued by `u_plus`/`u_minus`, tail
/// probabilities are reweighted by `w_plus`/`w_minus`.
#[derive(Debug, Clone)]
pub struct CptSpec {
    pub u_plus: UtilityFn,
    pub u_minus: UtilityFn,
    pub w_plus: DistortionFn,
    pub w_minus: DistortionFn,
    pub envelope: Envelope,
}

impl CptSpec {
    /// Canonical pure-power family: `u_+(x) = k_+ x^alpha`,
    /// `u_-(x) = k_- x^beta`, `w_+(p) = p^gamma`, `w_-(p) = p^delta`,
    /// with envelope constants `g_± = 1`.
    pub fn power(alpha: f64, beta: f64, gamma: f64, delta: f64) -> Result<Self> {
        Self::power_with_coeffs(alpha, beta, gamma, delta, 1.0, 1.0)
    }

    /// Pure-power family with explicit utility coefficients.
    pub fn power_with_coeffs(
        alpha: f64,
        beta: f64,
        gamma: f64,
        delta: f64,
        k_plus: f64,
        k_minus: f64,
    ) -> Result<Self> {
        let envelope = Envelope {
            alpha,
            beta,
            gamma,
            delta,
            k_plus,
            k_minus,
            g_plus: 1.0,
            g_minus: 1.0,
        };
        envelope.validate()?;
        Ok(CptSpec {
            u_plus: UtilityFn::power(k_plus, alpha),
            u_minus: UtilityFn::power(k_minus, beta),
            w_plus: DistortionFn::power(gamma),
            w_minus: DistortionFn::power(delta),
            envelope,
        })
    }

    /// Undistorted expected utility with linear gain/loss values.
    pub fn expected_utility() -> Self {
        Self::power(1.0, 1.0, 1.0, 1.0).expect("unit parameters are valid")
    }

    /// The 1992 Tversky-Kahneman calibration: value exponents 0.88, loss
    /// aversion 2.25 and inverse-S weighting `p^c / (p^c + (1-p)^c)^{1/c}`
    /// with `c = 0.61` on gains and `0.69` on losses.
    ///
    /// Envelope constants: subadditivity of `x -> x^c` gives
    /// `w(p) <= p^c` (so `g_+ = 1`), and `p^c + (1-p)^c <= 2^{1-c}` gives
    /// `w(p) >= 2^{-(1-c)/c} p^c`, the `g_-` used here.
    pub fn kt1992() -> Self {
        let gamma = 0.61;
        let delta = 0.69;
        let tk = |c: f64| {
            move |p: f64| {
                if p <= 0.0 {
                    0.0
                } else if p >= 1.0 {
                    1.0
                } else {
                    let a = p.powf(c);
                    a / (a + (1.0 - p).powf(c)).powf(1.0 / c)
                }
            }
        };
        CptSpec {
            u_plus: UtilityFn::power(1.0, 0.88),
            u_minus: UtilityFn::power(2.25, 0.88),
            w_plus: DistortionFn::custom(tk(gamma)),
            w_minus: DistortionFn::custom(tk(delta)),
            envelope: Envelope {
                alpha: 0.88,
                beta: 0.88,
                gamma,
                delta,
                k_plus: 1.0,
                k_minus: 2.25,
                g_plus: 1.0,
                g_minus: (2.0f64).powf(-(1.0 - delta) / delta),
            },
        }
    }

    /// Check the defining identities and envelope inequalities on a sample
    /// grid of `grid` points per axis, and that both distortions are
    /// nondecreasing on that grid.
    pub fn validate(&self, grid: usize) -> Result<()> {
        self.envelope.validate()?;
        let n = grid.max(8);
        let tol = 1e-9;
        if self.u_plus.eval(0.0).abs() > tol || self.u_minus.eval(0.0).abs() > tol {
            return Err(Error::InvalidSpec(
                "u_plus(0) and u_minus(0) must be 0".into(),
            ));
        }
        for (name, w) in [("w_plus", &self.w_plus), ("w_minus", &self.w_minus)] {
            if w.eval(0.0).abs() > tol {
                return Err(Error::InvalidSpec(format!("{name}(0) must be 0")));
            }
            if (w.eval(1.0) - 1.0).abs() > tol {
                return Err(Error::InvalidSpec(format!("{name}(1) must be 1")));
            }
        }
        // x samples spread over several orders of magnitude
        let e = &self.envelope;
        for i in 0..n {
            let t = i as f64 / (n - 1) as f64;
            let x = 1e-6 * (1e9f64).powf(t); // 1e-6 .. 1e3
            if self.u_plus.eval(x) > e.k_plus * (x.powf(e.alpha) + 1.0) + tol {
                return Err(Error::InvalidSpec(format!(
                    "u_plus violates its envelope at x = {x}"
                )));
            }
            if self.u_minus.eval(x) < e.k_minus * (x.powf(e.beta) - 1.0) - tol {
                return Err(Error::InvalidSpec(format!(
                    "u_minus violates its envelope at x = {x}"
                )));
            }
        }
        let mut prev_plus = 0.0;
        let mut prev_minus = 0.0;
        for i in 0..=n {
            let p = i as f64 / n as f64;
            let wp = self.w_plus.eval(p);
            let wm = self.w_minus.eval(p);
            if wp > e.g_plus * p.powf(e.gamma) + tol {
                return Err(Error::InvalidSpec(format!(
                    "w_plus violates its envelope at p = {p}"
                )));
            }
            if wm < e.g_minus * p.powf(e.delta) - tol {
                return Err(Error::InvalidSpec(format!(
                    "w_minus violates its envelope at p = {p}"
                )));
            }
            if wp < prev_plus - tol || wm < prev_minus - tol {
                return Err(Error::InvalidSpec(format!(
                    "distortion decreases near p = {p}; nondecreasing w is required"
                )));
            }
            prev_plus = wp;
            prev_minus = wm;
        }
        Ok(())
    }
}

/// A finite discrete law: atoms `(value, probability)` with positive
/// probabilities summing to one. Equal values are merged on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistribution {
    atoms: Vec<(f64, f64)>,
}

impl DiscreteDistribution {
    pub fn new(mut atoms: Vec<(f64, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::Domain("distribution needs at least one atom".into()));
        }
        let mut total = 0.0;
        for &(v, p) in &atoms {
            if !v.is_finite() || !p.is_finite() {
                return Err(Error::Domain("non-finite atom in distribution".into()));
            }
            if p <= 0.0 {
                return Err(Error::Domain(format!("atom probability {p} must be > 0")));
            }
            total += p;
        }
        if (total - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::Domain(format!(
                "atom probabilities sum to {total}, expected 1 within {PROB_SUM_TOL:e}"
            )));
        }
        atoms.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite values"));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
        for (v, p) in atoms {
            match merged.last_mut() {
                Some(last) if last.0 == v => last.1 += p,
                _ => merged.push((v, p)),
            }
        }
        Ok(DiscreteDistribution { atoms: merged })
    }

    pub fn degenerate(value: f64) -> Self {
        DiscreteDistribution {
            atoms: vec![(value, 1.0)],
        }
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn expectation(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.atoms.iter().map(|&(v, p)| p * f(v)).sum()
    }

    /// The law of `c * X` (exact; re-sorts and re-merges for `c <= 0`).
    pub fn scaled(&self, c: f64) -> Self {
        let atoms = self.atoms.iter().map(|&(v, p)| (c * v, p)).collect();
        DiscreteDistribution::new(atoms).expect("scaling preserves validity")
    }

    pub fn max_value(&self) -> f64 {
        self.atoms.last().map(|a| a.0).unwrap_or(0.0)
    }

    pub fn min_value(&self) -> f64 {
        self.atoms.first().map(|a| a.0).unwrap_or(0.0)
    }
}

/// Distinct positive transformed values in decreasing order paired with
/// top-down cumulative probabilities (`P(u >= v_k)`).
fn descending_tail_pairs(
    dist: &DiscreteDistribution,
    u: impl Fn(f64) -> f64,
) -> Result<Vec<(f64, f64)>> {
    let mut vals: Vec<(f64, f64)> = Vec::with_capacity(dist.atoms().len());
    for &(x, p) in dist.atoms() {
        let v = u(x);
        if !v.is_finite() && !(v == f64::INFINITY) {
            return Err(Error::Domain(format!("u({x}) is not a number")));
        }
        if v < -1e-12 {
            return Err(Error::Domain(format!(
                "u must be non-negative; u({x}) = {v}"
            )));
        }
        if v > 0.0 {
            vals.push((v, p));
        }
    }
    vals.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("comparable values"));
    let mut merged: Vec<(f64, f64)> = Vec::with_capacity(vals.len());
    let mut cum = 0.0;
    for (v, p) in vals {
        cum += p;
        match merged.last_mut() {
            Some(last) if last.0 == v => last.1 = cum,
            _ => merged.push((v, cum)),
        }
    }
    Ok(merged)
}

/// Exact distorted tail integral `∫_0^∞ w(P(u(X) > y)) dy` on a finite law.
///
/// `w` must be nondecreasing; a decrease detected along the cumulative
/// sequence is reported as a specification error.
pub fn distorted_tail_integral(
    dist: &DiscreteDistribution,
    u: impl Fn(f64) -> f64,
    w: impl Fn(f64) -> f64,
) -> Result<f64> {
    let pairs = descending_tail_pairs(dist, u)?;
    let mut out = 0.0;
    let mut prev_w = 0.0;
    for (k, &(v, cum)) in pairs.iter().enumerate() {
        let wk = w(cum);
        if !wk.is_finite() {
            return Err(Error::InvalidSpec(format!("w({cum}) is not finite")));
        }
        if wk < prev_w - 1e-12 {
            return Err(Error::InvalidSpec(format!(
                "distortion decreases along the tail (w({cum}) = {wk} < {prev_w})"
            )));
        }
        prev_w = wk;
        let v_next = pairs.get(k + 1).map(|p| p.0).unwrap_or(0.0);
        out += (v - v_next) * wk;
    }
    Ok(out)
}

/// Gain functional: `∫_0^∞ w_+(P(u_+(X_+) > y)) dy`.
pub fn choquet_plus(dist: &DiscreteDistribution, spec: &CptSpec) -> Result<f64> {
    distorted_tail_integral(
        dist,
        |x| spec.u_plus.eval(x.max(0.0)),
        |p| spec.w_plus.eval(p),
    )
}

/// Loss functional: `∫_0^∞ w_-(P(u_-(X_-) > y)) dy`.
pub fn choquet_minus(dist: &DiscreteDistribution, spec: &CptSpec) -> Result<f64> {
    distorted_tail_integral(
        dist,
        |x| spec.u_minus.eval((-x).max(0.0)),
        |p| spec.w_minus.eval(p),
    )
}

/// `(V, V_+, V_-)` with `V = V_+ - V_-`.
pub fn cpt_value(dist: &DiscreteDistribution, spec: &CptSpec) -> Result<(f64, f64, f64)> {
    let plus = choquet_plus(dist, spec)?;
    let minus = choquet_minus(dist, spec)?;
    Ok((plus - minus, plus, minus))
}

/// `(ln V_+, ln V_-)` evaluated in the log domain when both the relevant
/// utility and distortion are pure powers, so that very large leverages do
/// not overflow. Falls back to the linear evaluation (then `ln`) for
/// custom functions. Zero parts map to `-inf`.
pub fn log_cpt_parts(dist: &DiscreteDistribution, spec: &CptSpec) -> Result<(f64, f64)> {
    let plus = log_distorted_tail(dist, &spec.u_plus, &spec.w_plus, false)?;
    let minus = log_distorted_tail(dist, &spec.u_minus, &spec.w_minus, true)?;
    Ok((plus, minus))
}

fn log_distorted_tail(
    dist: &DiscreteDistribution,
    u: &UtilityFn,
    w: &DistortionFn,
    negative_part: bool,
) -> Result<f64> {
    if !(u.is_power() && w.is_power()) {
        let part = if negative_part {
            distorted_tail_integral(dist, |x| u.eval((-x).max(0.0)), |p| w.eval(p))?
        } else {
            distorted_tail_integral(dist, |x| u.eval(x.max(0.0)), |p| w.eval(p))?
        };
        return Ok(part.ln());
    }
    // (ln u(part), p) over atoms with a strictly positive part
    let mut vals: Vec<(f64, f64)> = Vec::new();
    for &(x, p) in dist.atoms() {
        let part = if negative_part { -x } else { x };
        if part > 0.0 {
            let lv = u.log_eval(part.ln()).expect("power utility");
            vals.push((lv, p));
        }
    }
    if vals.is_empty() {
        return Ok(f64::NEG_INFINITY);
    }
    vals.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("comparable values"));
    let mut merged: Vec<(f64, f64)> = Vec::with_capacity(vals.len());
    let mut cum = 0.0;
    for (lv, p) in vals {
        cum += p;
        match merged.last_mut() {
            Some(last) if last.0 == lv => last.1 = cum,
            _ => merged.push((lv, cum)),
        }
    }
    let mut terms = Vec::with_capacity(merged.len());
    for (k, &(lv, cum)) in merged.iter().enumerate() {
        let lw = w.log_eval(cum.ln()).expect("power distortion");
        let gap = match merged.get(k + 1) {
            // ln(v_k - v_{k+1}) = lv + ln(1 - exp(lv_next - lv))
            Some(&(lv_next, _)) => lv + (-((lv_next - lv).exp()) + 1.0).ln(),
            None => lv,
        };
        terms.push(gap + lw);
    }
    Ok(log_sum_exp(&terms))
}

/// Left-endpoint Riemann sum of `y -> w(P(u(X) > y))` over `[0, cutoff)`
/// with the given step: the independent brute-force oracle for the exact
/// step-sum evaluators above.
///
/// The sum is accumulated segment-by-segment between consecutive jumps of
/// the tail function, counting the grid points `j * step` inside each
/// segment; this reproduces the literal left-endpoint loop value while
/// staying O(atoms). Against the true integral the error is bounded by
/// `O(step * number_of_jumps * max_jump_of_w)`.
pub fn choquet_brute(
    dist: &DiscreteDistribution,
    u: impl Fn(f64) -> f64,
    w: impl Fn(f64) -> f64,
    step: f64,
    cutoff: f64,
) -> Result<f64> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Domain(format!("step must be > 0, got {step}")));
    }
    let pairs = descending_tail_pairs(dist, u)?;
    let max_u = pairs.first().map(|p| p.0).unwrap_or(0.0);
    if cutoff < max_u {
        return Err(Error::OracleDomain(format!(
            "cutoff {cutoff} is below the largest transformed value {max_u}"
        )));
    }
    // Smallest j with j*step >= x, consistent with f64 multiplication.
    let first_index_at_or_above = |x: f64| -> i64 {
        if x <= 0.0 {
            return 0;
        }
        let mut j = (x / step).ceil() as i64;
        while j > 0 && (j - 1) as f64 * step >= x {
            j -= 1;
        }
        while (j as f64) * step < x {
            j += 1;
        }
        j
    };
    let j_cutoff = first_index_at_or_above(cutoff);
    let mut total = 0.0;
    // Segment above the largest value: integrand w(0).
    let w0 = w(0.0);
    if w0 != 0.0 {
        let j_top = first_index_at_or_above(max_u);
        total += w0 * (j_cutoff - j_top) as f64;
    }
    for (k, &(v, cum)) in pairs.iter().enumerate() {
        let v_next = pairs.get(k + 1).map(|p| p.0).unwrap_or(0.0);
        // y in [v_next, v) has {u > y} = {u >= v}, tail mass `cum`
        let j_lo = first_index_at_or_above(v_next);
        let j_hi = first_index_at_or_above(v).min(j_cutoff);
        if j_hi > j_lo {
            total += w(cum) * (j_hi - j_lo) as f64;
        }
    }
    Ok(total * step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dist(atoms: &[(f64, f64)]) -> DiscreteDistribution {
        DiscreteDistribution::new(atoms.to_vec()).unwrap()
    }

    /// Literal left-endpoint Riemann loop, kept only as a cross-check for
    /// the segment-counted oracle.
    fn brute_naive(
        d: &DiscreteDistribution,
        u: impl Fn(f64) -> f64,
        w: impl Fn(f64) -> f64,
        step: f64,
        cutoff: f64,
    ) -> f64 {
        let mut total = 0.0;
        let mut j = 0i64;
        loop {
            let y = j as f64 * step;
            if y >= cutoff {
                break;
            }
            let tail: f64 = d
                .atoms()
                .iter()
                .filter(|&&(x, _)| u(x) > y)
                .map(|&(_, p)| p)
                .sum();
            total += w(tail) * step;
            j += 1;
        }
        total
    }

    #[test]
    fn constant_gain_returns_utility() {
        let spec = CptSpec::power(0.5, 0.9, 0.7, 0.8).unwrap();
        let d = DiscreteDistribution::degenerate(4.0);
        let v = choquet_plus(&d, &spec).unwrap();
        assert!((v - 2.0).abs() < 1e-12); // u_+(4) = 4^0.5
    }

    #[test]
    fn two_atom_gain_matches_closed_form_and_oracle() {
        // X in {2, 0.5} each w.p. 0.5, u(x) = x^0.5, w(p) = p^0.7
        let spec = CptSpec::power(0.5, 1.0, 0.7, 1.0).unwrap();
        let d = dist(&[(2.0, 0.5), (0.5, 0.5)]);
        let expected = (2f64.sqrt() - 0.5f64.sqrt()) * 0.5f64.powf(0.7) + 0.5f64.sqrt();
        let v = choquet_plus(&d, &spec).unwrap();
        assert!((v - expected).abs() < 1e-12);
        let step = 1e-6;
        let brute = choquet_brute(
            &d,
            |x| spec.u_plus.eval(x.max(0.0)),
            |p| spec.w_plus.eval(p),
            step,
            2.0,
        )
        .unwrap();
        assert!((v - brute).abs() <= 10.0 * step);
    }

    #[test]
    fn identity_distortion_reduces_to_expectation() {
        let spec = CptSpec::power_with_coeffs(0.5, 1.0, 1.0, 1.0, 1.3, 1.0).unwrap();
        let d = dist(&[(3.0, 0.25), (1.0, 0.5), (-2.0, 0.25)]);
        let v = choquet_plus(&d, &spec).unwrap();
        let direct = d.expectation(|x| spec.u_plus.eval(x.max(0.0)));
        assert!((v - direct).abs() <= 1e-12 * direct.abs().max(1.0));
    }

    #[test]
    fn minus_of_nonnegative_law_is_zero() {
        let spec = CptSpec::power(0.5, 0.9, 0.7, 0.8).unwrap();
        let d = dist(&[(0.0, 0.5), (2.0, 0.5)]);
        assert_eq!(choquet_minus(&d, &spec).unwrap(), 0.0);
    }

    #[test]
    fn symmetric_square_loss_expectation() {
        // X in {-1, 1} each 0.5, u_-(x) = x^2, w_- identity -> 0.5
        let spec = CptSpec::power(1.0, 2.0, 1.0, 1.0).unwrap();
        let d = dist(&[(-1.0, 0.5), (1.0, 0.5)]);
        let v = choquet_minus(&d, &spec).unwrap();
        assert!((v - 0.5).abs() < 1e-14);
    }

    #[test]
    fn cpt_value_vanishes_on_symmetric_linear_case() {
        let spec = CptSpec::expected_utility();
        let d = dist(&[(1.0, 0.5), (-1.0, 0.5)]);
        let (v, _, _) = cpt_value(&d, &spec).unwrap();
        assert!(v.abs() < 1e-14);
        let (v0, p0, m0) = cpt_value(&DiscreteDistribution::degenerate(0.0), &spec).unwrap();
        assert_eq!((v0, p0, m0), (0.0, 0.0, 0.0));
    }

    #[test]
    fn mixed_four_atom_loss_matches_oracle() {
        let spec = CptSpec::power(0.5, 0.8, 0.7, 0.9).unwrap();
        let d = dist(&[(-3.0, 0.2), (-0.5, 0.3), (1.0, 0.4), (4.0, 0.1)]);
        let v = choquet_minus(&d, &spec).unwrap();
        let step = 1e-6;
        let brute = choquet_brute(
            &d,
            |x| spec.u_minus.eval((-x).max(0.0)),
            |p| spec.w_minus.eval(p),
            step,
            4.0,
        )
        .unwrap();
        assert!((v - brute).abs() <= 10.0 * step);
    }

    #[test]
    fn brute_segment_count_equals_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..25 {
            let n = rng.gen_range(1..=8);
            let mut atoms: Vec<(f64, f64)> = (0..n)
                .map(|_| (rng.gen_range(0.0..10.0), rng.gen_range(0.1..1.0)))
                .collect();
            let total: f64 = atoms.iter().map(|a| a.1).sum();
            for a in &mut atoms {
                a.1 /= total;
            }
            let d = DiscreteDistribution::new(atoms).unwrap();
            let u = |x: f64| x.max(0.0).powf(0.7);
            let w = |p: f64| p.powf(0.8);
            let step = 1e-3;
            let cutoff = d.max_value().powf(0.7) + 1.0;
            let fast = choquet_brute(&d, u, w, step, cutoff).unwrap();
            let naive = brute_naive(&d, u, w, step, cutoff);
            assert!((fast - naive).abs() < 1e-12, "fast {fast} vs naive {naive}");
        }
    }

    #[test]
    fn brute_constant_within_step_and_halving_halves_bound() {
        let d = DiscreteDistribution::degenerate(3.0);
        let u = |x: f64| x;
        let w = |p: f64| p;
        for &step in &[1e-3, 5e-4] {
            let v = choquet_brute(&d, u, w, step, 4.0).unwrap();
            assert!((v - 3.0).abs() <= step);
        }
        // documented bound: step * jumps * max jump; one jump of size 1 here
        let bound = |step: f64| step * 1.0 * 1.0;
        assert_eq!(bound(5e-4), bound(1e-3) / 2.0);
        let spec = CptSpec::power(0.6, 1.0, 0.8, 1.0).unwrap();
        let d2 = dist(&[(1.0, 0.3), (2.5, 0.3), (7.0, 0.4)]);
        let exact = choquet_plus(&d2, &spec).unwrap();
        let uu = |x: f64| spec.u_plus.eval(x.max(0.0));
        let ww = |p: f64| spec.w_plus.eval(p);
        for &step in &[1e-4, 5e-5] {
            let err = (choquet_brute(&d2, uu, ww, step, 8.0).unwrap() - exact).abs();
            assert!(err <= step * 4.0);
        }
    }

    #[test]
    fn brute_rejects_low_cutoff() {
        let d = DiscreteDistribution::degenerate(3.0);
        let r = choquet_brute(&d, |x| x, |p| p, 1e-3, 2.0);
        assert!(matches!(r, Err(Error::OracleDomain(_))));
    }

    #[test]
    fn non_monotone_distortion_is_reported() {
        let spec = CptSpec {
            w_plus: DistortionFn::custom(|p| if p < 0.5 { p } else { 1.5 - 2.0 * p }),
            ..CptSpec::expected_utility()
        };
        let d = dist(&[(1.0, 0.4), (2.0, 0.6)]);
        assert!(matches!(
            choquet_plus(&d, &spec),
            Err(Error::InvalidSpec(_))
        ));
    }

    #[test]
    fn log_parts_agree_with_linear_values() {
        let spec = CptSpec::power(0.9, 0.8, 1.0, 1.0).unwrap();
        let d = dist(&[(5.0, 0.5), (-3.0, 0.5)]);
        let (lp, lm) = log_cpt_parts(&d, &spec).unwrap();
        let (_, p, m) = cpt_value(&d, &spec).unwrap();
        assert!((lp - p.ln()).abs() < 1e-12);
        assert!((lm - m.ln()).abs() < 1e-12);
        // all-gain law: loss part is -inf
        let d2 = dist(&[(1.0, 1.0)]);
        let (_, lm2) = log_cpt_parts(&d2, &spec).unwrap();
        assert_eq!(lm2, f64::NEG_INFINITY);
    }

    #[test]
    fn kt1992_passes_validation() {
        CptSpec::kt1992().validate(128).unwrap();
        CptSpec::expected_utility().validate(64).unwrap();
    }

    #[test]
    fn merged_atoms_and_scaling() {
        let d = dist(&[(1.0, 0.25), (1.0, 0.25), (2.0, 0.5)]);
        assert_eq!(d.atoms().len(), 2);
        let s = d.scaled(-2.0);
        assert_eq!(s.atoms()[0].0, -4.0);
        assert_eq!(s.min_value(), -4.0);
        assert_eq!(s.max_value(), -2.0);
    }

    fn arbitrary_law() -> impl Strategy<Value = DiscreteDistribution> {
        proptest::collection::vec((0.0f64..10.0, 0.05f64..1.0), 1..12).prop_map(|raw| {
            let total: f64 = raw.iter().map(|a| a.1).sum();
            DiscreteDistribution::new(raw.into_iter().map(|(v, p)| (v, p / total)).collect())
                .unwrap()
        })
    }

    proptest! {
        #[test]
        fn atom_order_invariance(law in arbitrary_law(), seed in 0u64..1000) {
            let spec = CptSpec::power(0.5, 0.9, 0.7, 0.8).unwrap();
            let mut atoms = law.atoms().to_vec();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in (1..atoms.len()).rev() {
                let j = rng.gen_range(0..=i);
                atoms.swap(i, j);
            }
            let shuffled = DiscreteDistribution::new(atoms).unwrap();
            prop_assert_eq!(
                choquet_plus(&law, &spec).unwrap(),
                choquet_plus(&shuffled, &spec).unwrap()
            );
            prop_assert_eq!(
                choquet_minus(&law.scaled(-1.0), &spec).unwrap(),
                choquet_minus(&shuffled.scaled(-1.0), &spec).unwrap()
            );
        }

        #[test]
        fn pointwise_domination_is_monotone(law in arbitrary_law(), bump in 0.0f64..3.0) {
            let spec = CptSpec::power(0.5, 0.9, 0.7, 0.8).unwrap();
            let shifted = DiscreteDistribution::new(
                law.atoms().iter().map(|&(v, p)| (v + bump, p)).collect()
            ).unwrap();
            prop_assert!(choquet_plus(&shifted, &spec).unwrap()
                >= choquet_plus(&law, &spec).unwrap() - 1e-12);
            prop_assert!(choquet_minus(&shifted, &spec).unwrap()
                <= choquet_minus(&law, &spec).unwrap() + 1e-12);
        }

        #[test]
        fn positive_homogeneity_of_power_specs(law in arbitrary_law(), c in 0.1f64..20.0) {
            let alpha = 0.6;
            let spec = CptSpec::power(alpha, 0.9, 0.7, 0.8).unwrap();
            let lhs = choquet_plus(&law.scaled(c), &spec).unwrap();
            let rhs = c.powf(alpha) * choquet_plus(&law, &spec).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-10 * rhs.abs().max(1.0));
        }
    }
}
