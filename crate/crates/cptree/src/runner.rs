//! Configuration ingestion, run orchestration and artifact persistence for
//! the command-line front end.
//!
//! Every run writes a directory `run-<id>` containing `manifest.json`,
//! `result.json` and any CSV traces, where `<id>` is a content hash of the
//! effective configuration, so identical configurations land in identical
//! directories with byte-identical numeric outputs. All randomness flows
//! from the single `seed` field.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::{json, Value};

use crate::cpt::CptSpec;
use crate::dual::{construct_q, pi_admissible_sup, ConstructConfig, MartingaleDensity};
use crate::error::{Error, Result};
use crate::gate::{classify, default_directions, ray_probe, BenchmarkMode, RayProbeConfig};
use crate::innovations::{
    build_chain, chi_square_uniform_4x4, gaussian_samples, ks_uniform_statistic,
    pearson_correlation, JointDensity, CHI2_9DF_999, DEFAULT_CORR_THRESHOLD, DEFAULT_KS_THRESHOLD,
};
use crate::lemmas::{check_moz1, check_moz2, check_suti, InequalityReport, StressFamily};
use crate::market::{check_robust_na, ScenarioTree, Strategy, TreeBuilder};
use crate::numerics::fnv1a64;
use crate::optimize::{maximize_cpt, Diagnostics, OptimizeConfig};

/// Exit status: success.
pub const EXIT_OK: i32 = 0;
/// Exit status: configuration or validation failure.
pub const EXIT_VALIDATION: i32 = 2;
/// Exit status: numeric non-convergence.
pub const EXIT_NONCONVERGENCE: i32 = 3;
/// Exit status: usage error (unknown subcommand, bad flags).
pub const EXIT_USAGE: i32 = 64;

pub const SUBCOMMANDS: [&str; 8] = [
    "gate",
    "construct-q",
    "na-check",
    "evaluate",
    "optimize",
    "probe",
    "lemmas",
    "rosenblatt",
];

/// Command-line overrides applied on top of the configuration file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub threads: Option<usize>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub run_dir: Option<PathBuf>,
}

// ---------------------------------------------------------------------------
// configuration schemas
// ---------------------------------------------------------------------------

/// Branch probability: a JSON number, or an exact fraction "a/b" whose
/// per-node sum is verified in integer arithmetic.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum ProbValue {
    Number(f64),
    Fraction(String),
}

impl ProbValue {
    fn parts(&self) -> Result<(f64, Option<(i128, i128)>)> {
        match self {
            ProbValue::Number(x) => Ok((*x, None)),
            ProbValue::Fraction(s) => {
                let (a, b) = s
                    .split_once('/')
                    .ok_or_else(|| Error::Config(format!("bad fraction '{s}'")))?;
                let num: i128 = a
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad fraction numerator '{s}'")))?;
                let den: i128 = b
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad fraction denominator '{s}'")))?;
                if den <= 0 || num <= 0 {
                    return Err(Error::Config(format!(
                        "fraction '{s}' must be strictly positive"
                    )));
                }
                Ok((num as f64 / den as f64, Some((num, den))))
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeConfig {
    #[serde(default)]
    p: Option<ProbValue>,
    #[serde(rename = "S")]
    price: Vec<f64>,
    #[serde(rename = "B", default)]
    benchmark: Option<f64>,
    #[serde(default)]
    children: Vec<NodeConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct TreeConfig {
    assets: usize,
    root: NodeConfig,
}

fn gcd(a: i128, b: i128) -> i128 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

impl TreeConfig {
    fn build(&self) -> Result<ScenarioTree> {
        if self.root.p.is_some() {
            return Err(Error::Config("the root node must not carry 'p'".into()));
        }
        let mut builder = TreeBuilder::new(self.assets, self.root.price.clone());
        Self::attach(&mut builder, 0, &self.root)?;
        builder.build()
    }

    fn attach(builder: &mut TreeBuilder, parent: usize, node: &NodeConfig) -> Result<()> {
        if node.children.is_empty() {
            if node.benchmark.is_none() {
                return Err(Error::Config(
                    "terminal nodes must carry the benchmark field 'B'".into(),
                ));
            }
            return Ok(());
        }
        if node.benchmark.is_some() {
            return Err(Error::Config(
                "only terminal nodes may carry the benchmark field 'B'".into(),
            ));
        }
        // exact rational sum check when every child probability is a fraction
        let mut rational_sum: Option<(i128, i128)> = Some((0, 1));
        for child in &node.children {
            let p = child
                .p
                .as_ref()
                .ok_or_else(|| Error::Config("non-root nodes must carry 'p'".into()))?;
            let (value, frac) = p.parts()?;
            rational_sum = match (rational_sum, frac) {
                (Some((num, den)), Some((a, b))) => {
                    let n = num * b + a * den;
                    let d = den * b;
                    let g = gcd(n, d);
                    Some((n / g, d / g))
                }
                _ => None,
            };
            let id = builder.add_child(parent, value, child.price.clone());
            if let Some(bench) = child.benchmark {
                builder.set_benchmark(id, bench);
            }
            Self::attach(builder, id, child)?;
        }
        if let Some((num, den)) = rational_sum {
            if num != den {
                return Err(Error::Config(format!(
                    "rational branch probabilities sum to {num}/{den}, expected exactly 1"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecConfig {
    #[serde(default)]
    preset: Option<String>,
    #[serde(default)]
    family: Option<String>,
    #[serde(default)]
    alpha: Option<f64>,
    #[serde(default)]
    beta: Option<f64>,
    #[serde(default)]
    gamma: Option<f64>,
    #[serde(default)]
    delta: Option<f64>,
    #[serde(default)]
    k_plus: Option<f64>,
    #[serde(default)]
    k_minus: Option<f64>,
    #[serde(default)]
    g_plus: Option<f64>,
    #[serde(default)]
    g_minus: Option<f64>,
}

impl SpecConfig {
    fn build(&self) -> Result<CptSpec> {
        let spec = match (&self.preset, &self.family) {
            (Some(name), None) => match name.as_str() {
                "expected_utility" => CptSpec::expected_utility(),
                "kt1992" => CptSpec::kt1992(),
                other => {
                    return Err(Error::Config(format!(
                        "unknown preset '{other}' (expected 'expected_utility' or 'kt1992')"
                    )))
                }
            },
            (None, Some(fam)) if fam == "power" => {
                let get = |name: &str, v: Option<f64>| {
                    v.ok_or_else(|| Error::Config(format!("power family needs '{name}'")))
                };
                let mut spec = CptSpec::power_with_coeffs(
                    get("alpha", self.alpha)?,
                    get("beta", self.beta)?,
                    get("gamma", self.gamma)?,
                    get("delta", self.delta)?,
                    self.k_plus.unwrap_or(1.0),
                    self.k_minus.unwrap_or(1.0),
                )?;
                spec.envelope.g_plus = self.g_plus.unwrap_or(1.0);
                spec.envelope.g_minus = self.g_minus.unwrap_or(1.0);
                spec
            }
            (None, Some(other)) => {
                return Err(Error::Config(format!(
                    "unknown function family '{other}' (expected 'power')"
                )))
            }
            _ => {
                return Err(Error::Config(
                    "the spec needs exactly one of 'preset' or 'family'".into(),
                ))
            }
        };
        spec.validate(64)
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum ThetaConfig {
    Zero { zero: bool },
    Constant { constant: Vec<f64> },
    Levels { levels: Vec<Vec<Vec<f64>>> },
}

impl ThetaConfig {
    fn build(&self, tree: &ScenarioTree) -> Result<Strategy> {
        match self {
            ThetaConfig::Zero { zero } => {
                if !zero {
                    return Err(Error::Config("'zero' must be true when present".into()));
                }
                Ok(Strategy::zero(tree))
            }
            ThetaConfig::Constant { constant } => Strategy::constant(tree, constant),
            ThetaConfig::Levels { levels } => Strategy::from_levels(tree, levels),
        }
    }
}

fn strategy_levels(tree: &ScenarioTree, s: &Strategy) -> Vec<Vec<Vec<f64>>> {
    (0..tree.horizon())
        .map(|t| {
            tree.level(t)
                .iter()
                .map(|&id| s.theta(id).to_vec())
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct GateFile {
    alpha: f64,
    beta: f64,
    gamma: f64,
    delta: f64,
    #[serde(default)]
    benchmark_mode: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct NaCheckFile {
    tree: TreeConfig,
    #[serde(default = "default_grid")]
    direction_grid: usize,
}

fn default_grid() -> usize {
    64
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConstructQFile {
    tree: TreeConfig,
    #[serde(default = "default_tol")]
    tol: f64,
    #[serde(default = "default_max_iter")]
    max_iter: usize,
    #[serde(default = "default_grid")]
    direction_grid: usize,
    #[serde(default = "default_residual")]
    residual_threshold: f64,
}

fn default_tol() -> f64 {
    1e-10
}

fn default_max_iter() -> usize {
    500
}

fn default_residual() -> f64 {
    1e-8
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvaluateFile {
    tree: TreeConfig,
    spec: SpecConfig,
    z: f64,
    theta: ThetaConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizeFile {
    tree: TreeConfig,
    spec: SpecConfig,
    z: f64,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default = "default_starts")]
    starts: usize,
    #[serde(default = "default_initial_step")]
    initial_step: f64,
    #[serde(default = "default_contraction")]
    contraction: f64,
    #[serde(default = "default_min_step")]
    min_step: f64,
    #[serde(default = "default_budget")]
    budget: usize,
    #[serde(default)]
    require_gate: bool,
    /// Construct the dual measure and record per-iterate moment
    /// diagnostics along the accepted sequence.
    #[serde(default)]
    diagnostics: bool,
}

fn default_starts() -> usize {
    6
}

fn default_initial_step() -> f64 {
    1.0
}

fn default_contraction() -> f64 {
    0.5
}

fn default_min_step() -> f64 {
    1e-7
}

fn default_budget() -> usize {
    100_000
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProbeFile {
    tree: TreeConfig,
    spec: SpecConfig,
    z: f64,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default = "default_lambda_base")]
    lambda_base: f64,
    #[serde(default = "default_lambda_count")]
    lambda_count: usize,
    #[serde(default = "default_window")]
    window: usize,
    #[serde(default = "default_divergence")]
    divergence_threshold: f64,
    #[serde(default)]
    directions: Option<Vec<ThetaConfig>>,
}

fn default_lambda_base() -> f64 {
    2.0
}

fn default_lambda_count() -> usize {
    21
}

fn default_window() -> usize {
    5
}

fn default_divergence() -> f64 {
    1e12
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct FamilyConfig {
    #[serde(default)]
    seed: Option<u64>,
    count: usize,
    #[serde(default = "default_atoms")]
    atoms: (usize, usize),
    #[serde(default = "default_values")]
    values: (f64, f64),
}

fn default_atoms() -> (usize, usize) {
    (1, 12)
}

fn default_values() -> (f64, f64) {
    (0.0, 10.0)
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct LemmasFile {
    which: String,
    family: FamilyConfig,
    #[serde(default)]
    a: Option<f64>,
    #[serde(default)]
    b: Option<f64>,
    #[serde(default)]
    s: Option<f64>,
    #[serde(default)]
    alpha: Option<f64>,
    #[serde(default)]
    beta: Option<f64>,
    #[serde(default)]
    gamma: Option<f64>,
    #[serde(default)]
    delta: Option<f64>,
    #[serde(default)]
    m: Option<f64>,
    /// Market carrying the reference density for the mean-constrained
    /// check; defaults to the symmetric one-step binomial.
    #[serde(default)]
    tree: Option<TreeConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct DensityConfig {
    #[serde(default)]
    preset: Option<String>,
    #[serde(default)]
    dim: Option<usize>,
    #[serde(default)]
    rho: Option<f64>,
    #[serde(default)]
    covariance: Option<Vec<Vec<f64>>>,
    #[serde(default = "default_half_width")]
    half_width: f64,
    #[serde(default = "default_nodes")]
    nodes_per_axis: usize,
    #[serde(default)]
    grid_file: Option<PathBuf>,
}

fn default_half_width() -> f64 {
    5.0
}

fn default_nodes() -> usize {
    513
}

impl DensityConfig {
    fn build(&self) -> Result<(JointDensity, Option<Vec<Vec<f64>>>)> {
        if let Some(path) = &self.grid_file {
            return Ok((JointDensity::from_grid_file(path)?, None));
        }
        match self.preset.as_deref() {
            Some("product_normal") => {
                let dim = self
                    .dim
                    .ok_or_else(|| Error::Config("product_normal needs 'dim'".into()))?;
                let cov: Vec<Vec<f64>> = (0..dim)
                    .map(|i| (0..dim).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                    .collect();
                Ok((
                    JointDensity::product_normal(dim, self.half_width, self.nodes_per_axis)?,
                    Some(cov),
                ))
            }
            Some("correlated_normal") => {
                let cov = match (&self.covariance, self.rho) {
                    (Some(c), None) => c.clone(),
                    (None, Some(r)) => vec![vec![1.0, r], vec![r, 1.0]],
                    _ => {
                        return Err(Error::Config(
                            "correlated_normal needs 'covariance' or 'rho'".into(),
                        ))
                    }
                };
                Ok((
                    JointDensity::correlated_normal(&cov, self.half_width, self.nodes_per_axis)?,
                    Some(cov),
                ))
            }
            Some(other) => Err(Error::Config(format!("unknown density preset '{other}'"))),
            None => Err(Error::Config(
                "density needs a 'preset' or a 'grid_file'".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlockConfig {
    t: usize,
    n: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct SamplesConfig {
    #[serde(default)]
    count: Option<usize>,
    #[serde(default)]
    file: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RosenblattFile {
    density: DensityConfig,
    block: BlockConfig,
    samples: SamplesConfig,
    #[serde(default)]
    seed: Option<u64>,
}

// ---------------------------------------------------------------------------
// execution
// ---------------------------------------------------------------------------

struct Artifacts {
    result: Value,
    csv: Vec<(String, String)>,
    summary: Vec<String>,
    converged: bool,
}

fn benchmark_mode(name: Option<&str>) -> Result<BenchmarkMode> {
    match name.unwrap_or("Ba") {
        "Ba" => Ok(BenchmarkMode::Ba),
        "Bb" => Ok(BenchmarkMode::Bb),
        other => Err(Error::Config(format!(
            "benchmark_mode must be 'Ba' or 'Bb', got '{other}'"
        ))),
    }
}

fn run_gate(cfg: GateFile) -> Result<Artifacts> {
    let mode = benchmark_mode(cfg.benchmark_mode.as_deref())?;
    let verdict = classify(cfg.alpha, cfg.beta, cfg.gamma, cfg.delta, mode)?;
    let result = json!({
        "tag": format!("{:?}", verdict.tag),
        "witness": verdict.witness,
        "required_benchmark": verdict.required_benchmark.map(|m| format!("{m:?}")),
        "mode_compatible": verdict.mode_compatible,
        "both_hold": verdict.both_hold,
    });
    let summary = vec![
        format!(
            "verdict  {:?}  (alpha={}, beta={}, gamma={}, delta={})",
            verdict.tag, cfg.alpha, cfg.beta, cfg.gamma, cfg.delta
        ),
        format!("witness  {}", verdict.witness),
        match verdict.required_benchmark {
            Some(required) => format!(
                "pairs with benchmark assumption {required:?} (declared {mode:?}, compatible: {})",
                verdict.mode_compatible
            ),
            None => format!("no benchmark assumption applies (declared {mode:?})"),
        },
    ];
    Ok(Artifacts {
        result,
        csv: Vec::new(),
        summary,
        converged: true,
    })
}

fn run_na_check(cfg: NaCheckFile) -> Result<Artifacts> {
    let tree = cfg.tree.build()?;
    let cert = check_robust_na(&tree, cfg.direction_grid);
    let nodes: Vec<Value> = tree
        .non_terminal()
        .iter()
        .filter_map(|&id| {
            cert.cert(id).map(|c| {
                json!({
                    "node": id,
                    "depth": tree.node(id).depth,
                    "kappa": c.kappa,
                    "beta": c.beta,
                })
            })
        })
        .collect();
    let result = json!({
        "pass": cert.pass,
        "nodes": nodes,
        "failure": cert.failure.as_ref().map(|f| json!({
            "node": f.node,
            "direction": f.direction,
        })),
    });
    let mut summary = vec![format!(
        "robust no-arbitrage: {}",
        if cert.pass { "PASS" } else { "FAIL" }
    )];
    match &cert.failure {
        Some(f) => summary.push(format!(
            "node {} admits no loss in direction {:?}",
            f.node, f.direction
        )),
        None => {
            for &id in tree.non_terminal() {
                let c = cert.cert(id).expect("certified node");
                summary.push(format!(
                    "node {id} (depth {}): kappa={:.6} beta={:.6}",
                    tree.node(id).depth,
                    c.kappa,
                    c.beta
                ));
            }
        }
    }
    Ok(Artifacts {
        result,
        csv: Vec::new(),
        summary,
        converged: true,
    })
}

fn density_json(tree: &ScenarioTree, density: &MartingaleDensity) -> Value {
    let leaves: Vec<Value> = tree
        .leaves()
        .iter()
        .enumerate()
        .map(|(k, &l)| {
            json!({
                "leaf": l,
                "p": density.leaf_p[k],
                "rho": density.rho[k],
                "q": density.leaf_q[k],
            })
        })
        .collect();
    let branches: Vec<Value> = tree
        .non_terminal()
        .iter()
        .map(|&id| {
            let children: Vec<Value> = density
                .q_branches(tree, id)
                .into_iter()
                .map(|(c, q)| json!({"child": c, "q": q}))
                .collect();
            json!({"node": id, "children": children})
        })
        .collect();
    json!({
        "leaves": leaves,
        "q_branches": branches,
        "rho_t": density.rho_t,
        "min_rho": density.min_rho,
        "max_rho": density.max_rho,
        "residual": density.residual,
        "objective": density.trace.objective,
        "iterations": density.trace.iterations,
        "phi_star": strategy_levels(tree, &density.phi_star),
    })
}

fn run_construct_q(cfg: ConstructQFile) -> Result<Artifacts> {
    let tree = cfg.tree.build()?;
    let config = ConstructConfig {
        tol: cfg.tol,
        max_iter: cfg.max_iter,
        direction_grid: cfg.direction_grid,
        residual_threshold: cfg.residual_threshold,
    };
    let density = construct_q(&tree, &config)?;
    let mut csv = String::from("iteration,grad_norm\n");
    for (i, g) in density.trace.grad_norms.iter().enumerate() {
        let _ = writeln!(csv, "{i},{g}");
    }
    let summary = vec![
        format!(
            "converged in {} iterations; martingale residual {:.3e}",
            density.trace.iterations, density.residual
        ),
        format!(
            "density range [{:.6}, {:.6}]; objective {:.9}",
            density.min_rho, density.max_rho, density.trace.objective
        ),
    ];
    Ok(Artifacts {
        result: density_json(&tree, &density),
        csv: vec![("solver_trace.csv".into(), csv)],
        summary,
        converged: true,
    })
}

fn run_evaluate(cfg: EvaluateFile) -> Result<Artifacts> {
    let tree = cfg.tree.build()?;
    let spec = cfg.spec.build()?;
    let theta = cfg.theta.build(&tree)?;
    let (v, v_plus, v_minus) = crate::optimize::evaluate_strategy(&tree, &spec, cfg.z, &theta)?;
    Ok(Artifacts {
        result: json!({"v": v, "v_plus": v_plus, "v_minus": v_minus}),
        csv: Vec::new(),
        summary: vec![format!(
            "V = {v:.9} (gains {v_plus:.9}, losses {v_minus:.9})"
        )],
        converged: true,
    })
}

fn run_optimize(cfg: OptimizeFile, seed_override: Option<u64>) -> Result<Artifacts> {
    let tree = cfg.tree.build()?;
    let spec = cfg.spec.build()?;
    let config = OptimizeConfig {
        starts: cfg.starts,
        seed: seed_override.or(cfg.seed).unwrap_or(0),
        initial_step: cfg.initial_step,
        contraction: cfg.contraction,
        min_step: cfg.min_step,
        budget: cfg.budget,
        require_gate: cfg.require_gate,
    };
    let dual = if cfg.diagnostics {
        Some((
            construct_q(&tree, &ConstructConfig::default())?,
            check_robust_na(&tree, 64),
        ))
    } else {
        None
    };
    let diagnostics = dual.as_ref().map(|(density, certificate)| Diagnostics {
        density,
        certificate,
    });
    let res = maximize_cpt(&tree, &spec, cfg.z, &config, diagnostics)?;
    let mut csv = String::from("start,evals,v,v_plus,v_minus,best_v\n");
    for row in &res.trace {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            row.start, row.evals, row.v, row.v_plus, row.v_minus, row.best_v
        );
    }
    let e = &spec.envelope;
    let result = json!({
        "v_star": res.v_star,
        "v_plus": res.v_plus,
        "v_minus": res.v_minus,
        "winner_start": res.winner_start,
        "converged": res.converged,
        "evaluations": res.evaluations,
        "sup_v_minus": res.sup_v_minus,
        "theta_star": strategy_levels(&tree, &res.theta_star),
        "gate": res.gate.as_ref().map(|g| format!("{:?}", g.tag)),
        "pi_admissible_sup": pi_admissible_sup(e.beta, e.delta, 1.0),
    });
    let summary = vec![
        format!(
            "V* = {:.9} (gains {:.9}, losses {:.9}), start {} of {}",
            res.v_star, res.v_plus, res.v_minus, res.winner_start, cfg.starts
        ),
        format!(
            "{} evaluations; {}",
            res.evaluations,
            if res.converged {
                "all starts converged".to_string()
            } else {
                "budget exhausted before convergence".to_string()
            }
        ),
        format!(
            "sup of the loss part along accepted iterates: {:.9}",
            res.sup_v_minus
        ),
    ];
    Ok(Artifacts {
        result,
        csv: vec![("trace.csv".into(), csv)],
        summary,
        converged: res.converged,
    })
}

fn run_probe(cfg: ProbeFile, seed_override: Option<u64>) -> Result<Artifacts> {
    let tree = cfg.tree.build()?;
    let spec = cfg.spec.build()?;
    let seed = seed_override.or(cfg.seed).unwrap_or(0);
    let directions = match &cfg.directions {
        Some(list) => list
            .iter()
            .map(|t| t.build(&tree))
            .collect::<Result<Vec<_>>>()?,
        None => default_directions(&tree, seed),
    };
    let config = RayProbeConfig {
        lambda_base: cfg.lambda_base,
        lambda_count: cfg.lambda_count,
        window: cfg.window,
        divergence_threshold: cfg.divergence_threshold,
    };
    let report = ray_probe(&tree, &spec, cfg.z, &directions, &config)?;
    let mut csv = String::from("direction_id,lambda,V_plus,V_minus,V\n");
    for ray in &report.rays {
        for p in &ray.points {
            let _ = writeln!(
                csv,
                "{},{},{},{},{}",
                ray.direction,
                p.lambda,
                p.log_v_plus.exp(),
                p.log_v_minus.exp(),
                p.v
            );
        }
    }
    let rays: Vec<Value> = report
        .rays
        .iter()
        .map(|r| {
            json!({
                "direction": r.direction,
                "slope_plus": r.slope_plus,
                "slope_minus": r.slope_minus,
                "net_slope": r.net_slope,
                "divergent": r.divergent,
                "eventually_decreasing": r.eventually_decreasing,
            })
        })
        .collect();
    let result = json!({
        "divergent": report.divergent,
        "certified_bounded": report.certified_bounded,
        "rays": rays,
    });
    let summary = vec![
        format!(
            "divergence evidence: {}; eventually decreasing on all rays: {}",
            report.divergent, report.certified_bounded
        ),
        format!(
            "{} rays, {} leverage points each",
            report.rays.len(),
            cfg.lambda_count
        ),
    ];
    Ok(Artifacts {
        result,
        csv: vec![("probe.csv".into(), csv)],
        summary,
        converged: true,
    })
}

fn lemmas_json(report: &InequalityReport) -> Value {
    json!({
        "empirical_constant": report.empirical_constant,
        "intercept": report.intercept,
        "fitted_exponent": report.fitted_exponent,
        "exponent_residual": report.exponent_residual,
        "trend_slope": report.trend_slope,
        "scale_max_ratios": report.scale_max_ratios,
        "prefix_constants": report.prefix_constants,
        "pass": report.pass,
    })
}

fn run_lemmas(cfg: LemmasFile, seed_override: Option<u64>) -> Result<Artifacts> {
    let family = StressFamily {
        seed: seed_override.or(cfg.family.seed).unwrap_or(0),
        count: cfg.family.count,
        atoms: cfg.family.atoms,
        values: cfg.family.values,
        q_mean: None,
    };
    let need = |name: &str, v: Option<f64>| {
        v.ok_or_else(|| Error::Config(format!("check '{}' needs '{name}'", cfg.which)))
    };
    let report = match cfg.which.as_str() {
        "suti" => check_suti(
            &family,
            need("a", cfg.a)?,
            need("b", cfg.b)?,
            need("s", cfg.s)?,
        )?,
        "moz2" => check_moz2(
            &family,
            need("a", cfg.a)?,
            need("b", cfg.b)?,
            need("s", cfg.s)?,
        )?,
        "moz1" => {
            let tree = match &cfg.tree {
                Some(t) => t.build()?,
                None => crate::fixtures::symmetric_binomial(),
            };
            let density = construct_q(&tree, &ConstructConfig::default())?;
            check_moz1(
                &family,
                &density,
                need("alpha", cfg.alpha)?,
                need("beta", cfg.beta)?,
                need("gamma", cfg.gamma)?,
                need("delta", cfg.delta)?,
                cfg.m.unwrap_or(0.0),
            )?
        }
        other => {
            return Err(Error::Config(format!(
                "unknown check '{other}' (expected 'suti', 'moz1' or 'moz2')"
            )))
        }
    };
    let mut csv = String::from("member,scale_exp,lhs,rhs,ratio\n");
    for r in &report.rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            r.member, r.scale_exp, r.lhs, r.rhs, r.ratio
        );
    }
    let summary = vec![
        format!(
            "check '{}': {}",
            cfg.which,
            if report.pass { "stable" } else { "UNSTABLE" }
        ),
        format!(
            "constant {:.6}, intercept {:?}, fitted exponent {:?}, trend slope {:.3e}",
            report.empirical_constant, report.intercept, report.fitted_exponent, report.trend_slope
        ),
    ];
    Ok(Artifacts {
        result: lemmas_json(&report),
        csv: vec![("lemmas.csv".into(), csv)],
        summary,
        converged: true,
    })
}

fn parse_samples_file(path: &Path, dim: usize) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad sample value on line {}", lineno + 1)))
            })
            .collect::<Result<_>>()?;
        if row.len() != dim {
            return Err(Error::Config(format!(
                "sample line {} has {} coordinates, expected {dim}",
                lineno + 1,
                row.len()
            )));
        }
        out.push(row);
    }
    Ok(out)
}

fn run_rosenblatt(cfg: RosenblattFile, seed_override: Option<u64>) -> Result<Artifacts> {
    let (density, cov) = cfg.density.build()?;
    let dim = density.dim();
    if cfg.block.t * cfg.block.n != dim {
        return Err(Error::Config(format!(
            "block structure {} x {} does not match density dimension {dim}",
            cfg.block.t, cfg.block.n
        )));
    }
    let seed = seed_override.or(cfg.seed).unwrap_or(0);
    let samples = match (&cfg.samples.file, cfg.samples.count) {
        (Some(path), None) => parse_samples_file(path, dim)?,
        (None, Some(count)) => {
            let cov = cov.ok_or_else(|| {
                Error::Config(
                    "sampling needs a normal preset; tabulated densities require a samples file"
                        .into(),
                )
            })?;
            gaussian_samples(&cov, count, seed, density.lo(), density.hi())?
        }
        _ => {
            return Err(Error::Config(
                "samples need exactly one of 'count' or 'file'".into(),
            ))
        }
    };
    let chain = build_chain(&density)?;
    let transformed: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| chain.forward(s))
        .collect::<Result<_>>()?;
    let coords: Vec<Vec<f64>> = (0..dim)
        .map(|a| transformed.iter().map(|u| u[a]).collect())
        .collect();
    let ks: Vec<f64> = coords.iter().map(|c| ks_uniform_statistic(c)).collect();
    let mut correlations = Vec::new();
    let mut chi2 = Vec::new();
    let mut max_corr = 0.0f64;
    for i in 0..dim {
        for j in i + 1..dim {
            let corr = pearson_correlation(&coords[i], &coords[j]);
            max_corr = max_corr.max(corr.abs());
            correlations.push(json!({"i": i, "j": j, "corr": corr}));
            chi2.push(json!({
                "i": i,
                "j": j,
                "chi_square": chi_square_uniform_4x4(&coords[i], &coords[j]),
            }));
        }
    }
    let mut csv = String::new();
    let header: Vec<String> = (0..dim).map(|a| format!("u{a}")).collect();
    csv.push_str(&header.join(","));
    csv.push('\n');
    for row in &transformed {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        csv.push_str(&cells.join(","));
        csv.push('\n');
    }
    let max_ks = ks.iter().cloned().fold(0.0, f64::max);
    let result = json!({
        "samples": transformed.len(),
        "ks": ks,
        "max_ks": max_ks,
        "correlations": correlations,
        "max_abs_correlation": max_corr,
        "chi_square": chi2,
        "thresholds": {
            "ks": DEFAULT_KS_THRESHOLD,
            "correlation": DEFAULT_CORR_THRESHOLD,
            "chi_square_999": CHI2_9DF_999,
        },
        "stage_axes": chain.stage_axes(),
    });
    let summary = vec![
        format!("{} samples through a {dim}-stage chain", transformed.len()),
        format!("max uniformity gap {max_ks:.4} (threshold {DEFAULT_KS_THRESHOLD})"),
        format!("max |pairwise correlation| {max_corr:.4} (threshold {DEFAULT_CORR_THRESHOLD})"),
    ];
    Ok(Artifacts {
        result,
        csv: vec![("uniforms.csv".into(), csv)],
        summary,
        converged: true,
    })
}

// ---------------------------------------------------------------------------
// orchestration
// ---------------------------------------------------------------------------

fn classify_exit(err: &Error) -> i32 {
    match err {
        Error::NonConvergence { .. } => EXIT_NONCONVERGENCE,
        _ => EXIT_VALIDATION,
    }
}

fn dispatch(subcommand: &str, config: &Value, seed: Option<u64>) -> Result<Artifacts> {
    match subcommand {
        "gate" => run_gate(parse(config)?),
        "na-check" => run_na_check(parse(config)?),
        "construct-q" => run_construct_q(parse(config)?),
        "evaluate" => run_evaluate(parse(config)?),
        "optimize" => run_optimize(parse(config)?, seed),
        "probe" => run_probe(parse(config)?, seed),
        "lemmas" => run_lemmas(parse(config)?, seed),
        "rosenblatt" => run_rosenblatt(parse(config)?, seed),
        other => Err(Error::Config(format!("unknown subcommand '{other}'"))),
    }
}

fn parse<T: serde::de::DeserializeOwned>(config: &Value) -> Result<T> {
    serde_json::from_value(config.clone()).map_err(Error::Json)
}

/// Execute a subcommand against a configuration file, writing a run
/// directory and printing a human-readable summary. Returns the process
/// exit code together with the run directory; no run directory is created
/// when the configuration fails to parse or validate.
pub fn run(subcommand: &str, config_path: &Path, overrides: &Overrides) -> RunOutcome {
    if !SUBCOMMANDS.contains(&subcommand) {
        eprintln!(
            "unknown subcommand '{subcommand}'; expected one of {}",
            SUBCOMMANDS.join(", ")
        );
        return RunOutcome {
            exit_code: EXIT_USAGE,
            run_dir: None,
        };
    }
    let raw = match std::fs::read_to_string(config_path) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("cannot read {}: {e}", config_path.display());
            return RunOutcome {
                exit_code: EXIT_VALIDATION,
                run_dir: None,
            };
        }
    };
    let mut config: Value = match serde_json::from_str(&raw) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("config does not parse as JSON: {e}");
            return RunOutcome {
                exit_code: EXIT_VALIDATION,
                run_dir: None,
            };
        }
    };
    if let (Some(seed), Some(obj)) = (overrides.seed, config.as_object_mut()) {
        obj.insert("seed".into(), json!(seed));
    }
    let artifacts = match dispatch(subcommand, &config, overrides.seed) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("{subcommand}: {e}");
            return RunOutcome {
                exit_code: classify_exit(&e),
                run_dir: None,
            };
        }
    };
    let canonical = serde_json::to_string(&config).expect("config re-serialises");
    let run_id = format!(
        "{:016x}",
        fnv1a64(format!("{subcommand}\n{canonical}").as_bytes())
    );
    let out_dir = overrides
        .out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs"));
    let run_dir = out_dir.join(format!("run-{run_id}"));
    if let Err(e) = persist(&run_dir, subcommand, &config, &run_id, &artifacts) {
        eprintln!("cannot write run directory: {e}");
        return RunOutcome {
            exit_code: EXIT_VALIDATION,
            run_dir: None,
        };
    }
    println!("run {run_id} ({subcommand}) -> {}", run_dir.display());
    for line in &artifacts.summary {
        println!("  {line}");
    }
    RunOutcome {
        exit_code: if artifacts.converged {
            EXIT_OK
        } else {
            EXIT_NONCONVERGENCE
        },
        run_dir: Some(run_dir),
    }
}

fn persist(
    run_dir: &Path,
    subcommand: &str,
    config: &Value,
    run_id: &str,
    artifacts: &Artifacts,
) -> Result<()> {
    std::fs::create_dir_all(run_dir)?;
    let mut outputs = vec!["result.json".to_string()];
    outputs.extend(artifacts.csv.iter().map(|(name, _)| name.clone()));
    let timestamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let manifest = json!({
        "run_id": run_id,
        "timestamp_unix": timestamp,
        "subcommand": subcommand,
        "config": config,
        "artifact_version": env!("CARGO_PKG_VERSION"),
        "outputs": outputs,
    });
    std::fs::write(
        run_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    std::fs::write(
        run_dir.join("result.json"),
        serde_json::to_string_pretty(&artifacts.result)?,
    )?;
    for (name, content) in &artifacts.csv {
        std::fs::write(run_dir.join(name), content)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn skewed_tree_json() -> Value {
        json!({
            "assets": 1,
            "root": {
                "S": [1.0],
                "children": [
                    {"p": 0.6, "S": [3.0], "B": 0.0},
                    {"p": 0.4, "S": [0.0], "B": 0.0},
                ],
            },
        })
    }

    #[test]
    fn tree_config_builds_and_validates() {
        let cfg: TreeConfig = serde_json::from_value(skewed_tree_json()).unwrap();
        let tree = cfg.build().unwrap();
        assert_eq!(tree.horizon(), 1);
        assert_eq!(tree.leaves().len(), 2);
    }

    #[test]
    fn rational_probabilities_are_checked_exactly() {
        let ok = json!({
            "assets": 1,
            "root": {"S": [1.0], "children": [
                {"p": "1/3", "S": [2.0], "B": 0.0},
                {"p": "2/3", "S": [0.5], "B": 0.0},
            ]},
        });
        let cfg: TreeConfig = serde_json::from_value(ok).unwrap();
        assert!(cfg.build().is_ok());

        let bad = json!({
            "assets": 1,
            "root": {"S": [1.0], "children": [
                {"p": "1/3", "S": [2.0], "B": 0.0},
                {"p": "1/3", "S": [0.5], "B": 0.0},
            ]},
        });
        let cfg: TreeConfig = serde_json::from_value(bad).unwrap();
        assert!(matches!(cfg.build(), Err(Error::Config(_))));
    }

    #[test]
    fn terminal_nodes_need_benchmarks() {
        let missing = json!({
            "assets": 1,
            "root": {"S": [1.0], "children": [
                {"p": 0.5, "S": [2.0]},
                {"p": 0.5, "S": [0.5], "B": 0.0},
            ]},
        });
        let cfg: TreeConfig = serde_json::from_value(missing).unwrap();
        assert!(cfg.build().is_err());
    }

    #[test]
    fn spec_config_presets_and_power() {
        let p: SpecConfig = serde_json::from_value(json!({"preset": "kt1992"})).unwrap();
        assert!(p.build().is_ok());
        let f: SpecConfig = serde_json::from_value(json!({
            "family": "power", "alpha": 0.5, "beta": 0.9, "gamma": 0.6, "delta": 0.8,
        }))
        .unwrap();
        assert!(f.build().is_ok());
        let bad: SpecConfig = serde_json::from_value(json!({"preset": "nope"})).unwrap();
        assert!(bad.build().is_err());
    }

    #[test]
    fn dispatch_rejects_unknown_fields() {
        let cfg = json!({"alpha": 0.5, "beta": 0.9, "gamma": 0.6, "delta": 0.8, "extra": 1});
        assert!(dispatch("gate", &cfg, None).is_err());
    }

    #[test]
    fn gate_artifacts_round_trip() {
        let cfg = json!({"alpha": 0.5, "beta": 0.9, "gamma": 0.6, "delta": 0.8});
        let a = dispatch("gate", &cfg, None).unwrap();
        assert_eq!(a.result["tag"], "WellPosedA");
        // the reported verdict is re-derivable from the config
        let v = classify(0.5, 0.9, 0.6, 0.8, BenchmarkMode::Ba).unwrap();
        assert_eq!(a.result["witness"], v.witness);
    }

    #[test]
    fn construct_q_artifacts_match_the_complete_market() {
        let cfg = json!({"tree": skewed_tree_json()});
        let a = dispatch("construct-q", &cfg, None).unwrap();
        let q_up = a.result["leaves"][0]["q"].as_f64().unwrap();
        assert!((q_up - 1.0 / 3.0).abs() < 1e-8);
        assert!(a.result["residual"].as_f64().unwrap() <= 1e-8);
    }

    #[test]
    fn theta_levels_round_trip() {
        let tree_cfg: TreeConfig = serde_json::from_value(skewed_tree_json()).unwrap();
        let tree = tree_cfg.build().unwrap();
        let theta: ThetaConfig = serde_json::from_value(json!({"levels": [[[2.5]]]})).unwrap();
        let s = theta.build(&tree).unwrap();
        assert_eq!(strategy_levels(&tree, &s), vec![vec![vec![2.5]]]);
    }
}
