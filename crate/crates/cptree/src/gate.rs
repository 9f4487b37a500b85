//! Well-posedness gate: classify parameter tuples by the closed-form
//! inequality tests, and probe the objective along leverage rays for
//! empirical evidence of an infinite supremum.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cpt::{log_cpt_parts, CptSpec};
use crate::error::{Error, Result};
use crate::market::{terminal_distribution, ScenarioTree, Strategy};
use crate::numerics::least_squares_line;

/// Which benchmark integrability assumption the caller intends to rely on:
/// `Ba` (a moment bound) or `Bb` (domination by a self-financing
/// portfolio). On finite trees both hold automatically, so the mode only
/// affects reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BenchmarkMode {
    Ba,
    Bb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VerdictTag {
    /// `alpha < beta` and `alpha/gamma < 1 < beta/delta`.
    WellPosedA,
    /// `delta <= 1`, `alpha < beta` and `alpha/gamma < beta`.
    WellPosedB,
    /// A necessary condition fails: `alpha >= beta` or
    /// `alpha/gamma > beta/delta`. The supremum is infinite.
    IllPosedNecessary,
    /// Necessary conditions hold but neither sufficient set does; whether
    /// such tuples are well-posed is open.
    Indeterminate,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParameterVerdict {
    pub tag: VerdictTag,
    /// The inequality chain that produced the verdict, as text.
    pub witness: String,
    /// Benchmark assumption paired with the verdict (`Ba` for the first
    /// sufficient set, `Bb` for the second).
    pub required_benchmark: Option<BenchmarkMode>,
    /// Whether the caller's declared mode matches `required_benchmark`.
    pub mode_compatible: bool,
    /// Both sufficient parameter sets hold (the first is reported).
    pub both_hold: bool,
}

/// Classify a parameter tuple. All four parameters must be strictly
/// positive.
pub fn classify(
    alpha: f64,
    beta: f64,
    gamma: f64,
    delta: f64,
    mode: BenchmarkMode,
) -> Result<ParameterVerdict> {
    for (name, v) in [
        ("alpha", alpha),
        ("beta", beta),
        ("gamma", gamma),
        ("delta", delta),
    ] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::Domain(format!(
                "{name} must be finite and > 0, got {v}"
            )));
        }
    }
    let cond_a = alpha < beta && alpha / gamma < 1.0 && 1.0 < beta / delta;
    let cond_b = delta <= 1.0 && alpha < beta && alpha / gamma < beta;
    let necessary = alpha < beta && alpha / gamma <= beta / delta;
    let (tag, witness, required) = if cond_a {
        (
            VerdictTag::WellPosedA,
            format!(
                "alpha<beta ({alpha:.4}<{beta:.4}) and alpha/gamma={:.4} < 1 < beta/delta={:.4}{}",
                alpha / gamma,
                beta / delta,
                if cond_b {
                    " (second sufficient set also holds)"
                } else {
                    ""
                }
            ),
            Some(BenchmarkMode::Ba),
        )
    } else if cond_b {
        (
            VerdictTag::WellPosedB,
            format!(
                "delta<=1 ({delta:.4}), alpha<beta ({alpha:.4}<{beta:.4}), alpha/gamma={:.4} < beta={beta:.4}",
                alpha / gamma
            ),
            Some(BenchmarkMode::Bb),
        )
    } else if !necessary {
        let witness = if alpha >= beta {
            format!("necessary condition fails: alpha>=beta ({alpha:.4}>={beta:.4})")
        } else {
            format!(
                "necessary condition fails: alpha/gamma={:.4} > beta/delta={:.4}",
                alpha / gamma,
                beta / delta
            )
        };
        (VerdictTag::IllPosedNecessary, witness, None)
    } else {
        (
            VerdictTag::Indeterminate,
            format!(
                "necessary conditions hold (alpha<beta, alpha/gamma={:.4} <= beta/delta={:.4}) but neither sufficient set does",
                alpha / gamma,
                beta / delta
            ),
            None,
        )
    };
    Ok(ParameterVerdict {
        tag,
        witness,
        required_benchmark: required,
        mode_compatible: required.map(|r| r == mode).unwrap_or(true),
        both_hold: cond_a && cond_b,
    })
}

/// Settings for [`ray_probe`]. The leverage schedule is geometric:
/// `lambda_k = base^k`, `k = 0 .. count-1`.
#[derive(Debug, Clone, Copy)]
pub struct RayProbeConfig {
    pub lambda_base: f64,
    pub lambda_count: usize,
    /// Tail window used for slope fits and the divergence decision.
    pub window: usize,
    /// Absolute level above which growing values are flagged divergent.
    pub divergence_threshold: f64,
}

impl Default for RayProbeConfig {
    fn default() -> Self {
        RayProbeConfig {
            lambda_base: 2.0,
            lambda_count: 21,
            window: 5,
            divergence_threshold: 1e12,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RayPoint {
    pub lambda: f64,
    pub log_v_plus: f64,
    pub log_v_minus: f64,
    /// `V = V_+ - V_-`; `+-inf` when only representable in logs.
    pub v: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RayTrace {
    pub direction: usize,
    pub points: Vec<RayPoint>,
    /// Log-log slope of `V_+` over the tail window.
    pub slope_plus: Option<f64>,
    /// Log-log slope of `V_-` over the tail window.
    pub slope_minus: Option<f64>,
    /// Log-log slope of `|V|` over the tail window, when `V` keeps one
    /// sign there.
    pub net_slope: Option<f64>,
    pub divergent: bool,
    /// `V` decreases across the whole tail window.
    pub eventually_decreasing: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RayProbeReport {
    pub rays: Vec<RayTrace>,
    /// Some probed ray exceeds the divergence threshold with a positive
    /// fitted slope: empirical evidence (not proof) of ill-posedness.
    pub divergent: bool,
    /// `V` is eventually decreasing along every probed ray.
    pub certified_bounded: bool,
}

/// Default probe directions: both signs of each coordinate held only over
/// the first period, plus eight seeded random predictable directions.
pub fn default_directions(tree: &ScenarioTree, seed: u64) -> Vec<Strategy> {
    let d = tree.assets();
    let mut dirs = Vec::with_capacity(2 * d + 8);
    for i in 0..d {
        for sign in [1.0, -1.0] {
            let mut s = Strategy::zero(tree);
            let mut e = vec![0.0; d];
            e[i] = sign;
            s.set_theta(tree.root(), &e);
            dirs.push(s);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..8 {
        let mut s = Strategy::zero(tree);
        for &id in tree.non_terminal() {
            let theta: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            s.set_theta(id, &theta);
        }
        if s.max_abs() > 0.0 {
            dirs.push(s);
        }
    }
    dirs
}

/// Evaluate `V(z, lambda * theta_dir)` along each ray, fit tail slopes of
/// the gain and loss parts in the log-log scale, and flag empirical
/// divergence or eventual decrease. Evaluation runs in the log domain for
/// power specifications, so large leverages cannot overflow.
pub fn ray_probe(
    tree: &ScenarioTree,
    spec: &CptSpec,
    z: f64,
    directions: &[Strategy],
    config: &RayProbeConfig,
) -> Result<RayProbeReport> {
    if directions.is_empty() {
        return Err(Error::Precondition("no probe directions supplied".into()));
    }
    for (i, dir) in directions.iter().enumerate() {
        if dir.max_abs() == 0.0 {
            return Err(Error::Precondition(format!(
                "probe direction {i} is the zero strategy"
            )));
        }
    }
    if config.lambda_count < config.window + 1 || config.window < 2 {
        return Err(Error::Config(
            "need at least window+1 lambda points and a window of at least 2".into(),
        ));
    }
    let lambdas: Vec<f64> = (0..config.lambda_count)
        .map(|k| config.lambda_base.powi(k as i32))
        .collect();
    let mut rays = Vec::with_capacity(directions.len());
    for (di, dir) in directions.iter().enumerate() {
        let mut points = Vec::with_capacity(lambdas.len());
        for &lambda in &lambdas {
            let dist = terminal_distribution(tree, z, &dir.scaled(lambda))?;
            let (lp, lm) = log_cpt_parts(&dist, spec)?;
            let v = signed_difference(lp, lm);
            points.push(RayPoint {
                lambda,
                log_v_plus: lp,
                log_v_minus: lm,
                v,
            });
        }
        let tail = &points[points.len() - config.window..];
        let slope_plus = least_squares_line(
            &tail
                .iter()
                .map(|p| (p.lambda.ln(), p.log_v_plus))
                .collect::<Vec<_>>(),
        )
        .map(|(s, _, _)| s);
        let slope_minus = least_squares_line(
            &tail
                .iter()
                .map(|p| (p.lambda.ln(), p.log_v_minus))
                .collect::<Vec<_>>(),
        )
        .map(|(s, _, _)| s);
        let same_sign = tail.iter().all(|p| p.v > 0.0) || tail.iter().all(|p| p.v < 0.0);
        let net_slope = if same_sign {
            least_squares_line(
                &tail
                    .iter()
                    .map(|p| {
                        (
                            p.lambda.ln(),
                            log_abs_difference(p.log_v_plus, p.log_v_minus),
                        )
                    })
                    .collect::<Vec<_>>(),
            )
            .map(|(s, _, _)| s)
        } else {
            None
        };
        let increasing = tail.windows(2).all(|w| w[1].v > w[0].v);
        let eventually_decreasing = tail.windows(2).all(|w| w[1].v < w[0].v);
        let divergent = increasing
            && tail
                .last()
                .map(|p| p.v > config.divergence_threshold)
                .unwrap_or(false)
            && net_slope.map(|s| s > 0.0).unwrap_or(false);
        rays.push(RayTrace {
            direction: di,
            points,
            slope_plus,
            slope_minus,
            net_slope,
            divergent,
            eventually_decreasing,
        });
    }
    let divergent = rays.iter().any(|r| r.divergent);
    let certified_bounded = rays.iter().all(|r| r.eventually_decreasing);
    Ok(RayProbeReport {
        rays,
        divergent,
        certified_bounded,
    })
}

/// `exp(lp) - exp(lm)` with overflow mapped to signed infinity.
fn signed_difference(lp: f64, lm: f64) -> f64 {
    if lp.max(lm) < 700.0 {
        let a = if lp == f64::NEG_INFINITY {
            0.0
        } else {
            lp.exp()
        };
        let b = if lm == f64::NEG_INFINITY {
            0.0
        } else {
            lm.exp()
        };
        a - b
    } else if lp > lm {
        f64::INFINITY
    } else if lm > lp {
        f64::NEG_INFINITY
    } else {
        0.0
    }
}

/// `ln |exp(lp) - exp(lm)|` evaluated stably.
fn log_abs_difference(lp: f64, lm: f64) -> f64 {
    let (hi, lo) = if lp >= lm { (lp, lm) } else { (lm, lp) };
    if hi == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (-((lo - hi).exp()) + 1.0).ln()
}
