//! The `mmot` command-line front end.
//!
//! Every command writes JSON reports (plus CSV companions for tabular data)
//! into `--out`. Reports are deterministic for fixed inputs and seeds; wall
//! clock times go to a separate `metadata.json`.
//!
//! Exit codes: 0 on success, 2 when a condition verdict fails, 1 on errors.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::conditions::{self, SegmentOptions, Verdict};
use crate::costs::{CostModel, CostSpec};
use crate::diagnostics::{self, ProbeOptions};
use crate::duality::{self, DualProbeOptions, Potentials};
use crate::geometry::{DiscreteMarginal, DomainBox};
use crate::presets::{self, Preset, WeightKind};
use crate::solver::{self, EntropicOptions, Instance};
use crate::{Error, Result};

pub const EXIT_OK: u8 = 0;
pub const EXIT_ERROR: u8 = 1;
pub const EXIT_CONDITION_FAILED: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "mmot", version, about = "Discrete multi-marginal optimal transport toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    Lp,
    Entropic,
}

/// Options shared by all commands. Unset flags fall back to `--config`, then to defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// JSON run configuration; explicit flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Instance file `{"marginals": [paths], "cost": path}`.
    #[arg(long, global = true)]
    pub instance: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub preset: Option<Preset>,
    /// Marginal count for presets.
    #[arg(long, global = true)]
    pub m: Option<usize>,
    /// Atoms per marginal for presets.
    #[arg(long, global = true)]
    pub n: Option<usize>,
    /// Dimension of every factor for presets.
    #[arg(long, global = true)]
    pub dim: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub weights: Option<WeightKind>,
    #[arg(long, global = true, value_enum)]
    pub solver: Option<SolverKind>,
    /// Entropic regularization; defaults to 0.01 times the cost range.
    #[arg(long, global = true)]
    pub epsilon: Option<f64>,
    #[arg(long, global = true)]
    pub samples: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub trials: Option<usize>,
    #[arg(long, global = true)]
    pub mass_tol: Option<f64>,
    #[arg(long, global = true)]
    pub det_tol: Option<f64>,
    #[arg(long, global = true)]
    pub twist_tol: Option<f64>,
    /// Negative-definiteness margin for the tensor scan.
    #[arg(long, global = true)]
    pub margin: Option<f64>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write sampled marginals, a cost spec and an instance file.
    Gen,
    /// Solve the Kantorovich problem; write coupling, dual certificate and slackness report.
    Solve,
    /// Scan twist and non-degeneracy of (first, last) and negativity of T.
    CheckConditions,
    /// Run the conjugation pass from given potentials (default: LP duals).
    Conjugate {
        #[arg(long)]
        potentials: Option<PathBuf>,
    },
    /// Graph extraction, pushforward check and uniqueness probes on the LP solution.
    Diagnose,
    /// Segment certificate for endpoints `{"x0", "u0_grad", "start", "end", "last_seed"?}`.
    Certify {
        #[arg(long)]
        endpoints: PathBuf,
        #[arg(long, default_value_t = conditions::DEFAULT_STEPS)]
        steps: usize,
    },
}

/// Fully resolved settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub instance: Option<PathBuf>,
    pub preset: Option<Preset>,
    pub m: usize,
    pub n: usize,
    pub dim: usize,
    pub weights: WeightKind,
    pub solver: SolverKind,
    pub epsilon: Option<f64>,
    pub samples: usize,
    pub seed: u64,
    pub trials: usize,
    pub mass_tol: f64,
    pub det_tol: f64,
    pub twist_tol: f64,
    pub margin: f64,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            instance: None,
            preset: None,
            m: 3,
            n: 5,
            dim: 2,
            weights: WeightKind::Uniform,
            solver: SolverKind::Lp,
            epsilon: None,
            samples: 100,
            seed: 0,
            trials: 5,
            mass_tol: diagnostics::MASS_TOL,
            det_tol: conditions::DET_TOL,
            twist_tol: conditions::TWIST_TOL,
            margin: 0.0,
            out: PathBuf::from("."),
        }
    }
}

impl RunConfig {
    pub fn resolve(common: &Common) -> Result<Self> {
        let mut cfg = match &common.config {
            Some(path) => serde_json::from_str(&read(path)?).map_err(|source| json_err(path, source))?,
            None => Self::default(),
        };
        macro_rules! take {
            ($($f:ident),*) => { $(if let Some(v) = common.$f.clone() { cfg.$f = v; })* };
        }
        take!(m, n, dim, weights, solver, samples, seed, trials, mass_tol, det_tol, twist_tol, margin, out);
        if common.instance.is_some() {
            cfg.instance = common.instance.clone();
        }
        if common.preset.is_some() {
            cfg.preset = common.preset;
        }
        if common.epsilon.is_some() {
            cfg.epsilon = common.epsilon;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [("mass-tol", self.mass_tol), ("det-tol", self.det_tol), ("twist-tol", self.twist_tol)] {
            if !(v > 0.0) {
                return Err(Error::InvalidParameter(format!("--{name} must be positive")));
            }
        }
        if let Some(e) = self.epsilon {
            if !(e > 0.0) {
                return Err(Error::InvalidParameter("--epsilon must be positive".into()));
            }
        }
        if self.samples == 0 || self.n == 0 || self.dim == 0 {
            return Err(Error::InvalidParameter("--samples, --n and --dim must be positive".into()));
        }
        Ok(())
    }
}

/// `{"marginals": [...], "cost": ...}`; relative paths resolve against the file's directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceFile {
    pub marginals: Vec<PathBuf>,
    pub cost: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap: Option<usize>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io { path: path.display().to_string(), source })
}

fn json_err(path: &Path, source: serde_json::Error) -> Error {
    Error::Json { path: path.display().to_string(), source }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read(path)?).map_err(|source| json_err(path, source))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|source| Error::Io { path: path.display().to_string(), source })
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(value).map_err(|source| json_err(&path, source))?;
    text.push('\n');
    write(&path, &text)
}

/// Marginals, cost and domains from `--instance` or `--preset`.
struct Loaded {
    marginals: Vec<DiscreteMarginal>,
    cost: CostModel,
    cap: usize,
}

impl Loaded {
    fn domains(&self) -> Vec<DomainBox> {
        self.marginals.iter().map(|mu| mu.domain().clone()).collect()
    }

    fn instance(&self) -> Result<Instance> {
        Instance::with_cap(self.marginals.clone(), self.cost.clone(), self.cap)
    }
}

fn load(cfg: &RunConfig) -> Result<Loaded> {
    match (&cfg.instance, cfg.preset) {
        (Some(path), _) => {
            let file: InstanceFile = read_json(path)?;
            let dir = path.parent().unwrap_or(Path::new("."));
            let marginals = file.marginals.iter().map(|p| read_json(&dir.join(p))).collect::<Result<Vec<DiscreteMarginal>>>()?;
            let spec: CostSpec = read_json(&dir.join(&file.cost))?;
            let cost = spec.build()?;
            Ok(Loaded { marginals, cost, cap: file.cap.unwrap_or(solver::DEFAULT_MATERIALIZATION_CAP) })
        }
        (None, Some(preset)) => Ok(Loaded {
            marginals: presets::marginals(preset, cfg.m, cfg.n, cfg.dim, cfg.seed, cfg.weights)?,
            cost: preset.cost(cfg.m, cfg.dim)?,
            cap: solver::DEFAULT_MATERIALIZATION_CAP,
        }),
        (None, None) => Err(Error::InvalidParameter("give --instance or --preset".into())),
    }
}

/// Parse arguments, configure the thread pool and run; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    if let Some(n) = std::env::var("MMOT_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

pub fn run(cli: &Cli) -> Result<u8> {
    let cfg = RunConfig::resolve(&cli.common)?;
    fs::create_dir_all(&cfg.out).map_err(|source| Error::Io { path: cfg.out.display().to_string(), source })?;
    let started = unix_seconds();
    let (name, code) = match &cli.command {
        Command::Gen => ("gen", gen(&cfg)?),
        Command::Solve => ("solve", solve(&cfg)?),
        Command::CheckConditions => ("check-conditions", check_conditions(&cfg)?),
        Command::Conjugate { potentials } => ("conjugate", conjugate(&cfg, potentials.as_deref())?),
        Command::Diagnose => ("diagnose", diagnose(&cfg)?),
        Command::Certify { endpoints, steps } => ("certify", certify(&cfg, endpoints, *steps)?),
    };
    write_json(
        &cfg.out,
        "metadata.json",
        &json!({
            "command": name,
            "version": env!("CARGO_PKG_VERSION"),
            "started_unix": started,
            "finished_unix": unix_seconds(),
            "exit_code": code,
        }),
    )?;
    Ok(code)
}

fn unix_seconds() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

fn gen(cfg: &RunConfig) -> Result<u8> {
    let preset = cfg.preset.ok_or_else(|| Error::InvalidParameter("gen needs --preset".into()))?;
    let marginals = presets::marginals(preset, cfg.m, cfg.n, cfg.dim, cfg.seed, cfg.weights)?;
    let mut names = Vec::new();
    for (i, mu) in marginals.iter().enumerate() {
        let name = format!("marginal_{i}.json");
        write_json(&cfg.out, &name, mu)?;
        names.push(PathBuf::from(name));
    }
    write_json(&cfg.out, "cost.json", &preset.cost_spec(cfg.m, cfg.dim)?)?;
    write_json(&cfg.out, "instance.json", &InstanceFile { marginals: names, cost: "cost.json".into(), cap: None })?;
    Ok(EXIT_OK)
}

fn coupling_csv(inst: &Instance, coupling: &solver::Coupling) -> String {
    let m = inst.marginal_count();
    let mut s = (0..m).map(|i| format!("a{i}")).collect::<Vec<_>>().join(",");
    s.push_str(",mass,cost\n");
    for (idx, mass) in coupling.entries() {
        let cols: Vec<String> = idx.iter().map(usize::to_string).collect();
        let _ = writeln!(s, "{},{mass:e},{:e}", cols.join(","), inst.entry(idx));
    }
    s
}

fn potentials_csv(pot: &Potentials) -> String {
    let mut s = String::from("marginal,atom,value\n");
    for (i, v) in pot.values().iter().enumerate() {
        for (a, u) in v.iter().enumerate() {
            let _ = writeln!(s, "{i},{a},{u:e}");
        }
    }
    s
}

fn solve(cfg: &RunConfig) -> Result<u8> {
    let inst = load(cfg)?.instance()?;
    let (coupling, duals, summary) = match cfg.solver {
        SolverKind::Lp => {
            let sol = solver::solve_lp(&inst)?;
            let summary = json!({
                "solver": "lp",
                "objective": sol.primal_objective(),
                "dual_objective": sol.duals.dual_objective(&inst),
                "iterations": sol.iterations,
                "support_size": sol.coupling.len(),
                "marginal_error": sol.coupling.max_marginal_error(&inst),
            });
            (sol.coupling, sol.duals, summary)
        }
        SolverKind::Entropic => {
            let eps = cfg.epsilon.unwrap_or_else(|| 0.01 * positive_range(&inst));
            let sol = solver::solve_entropic(&inst, &EntropicOptions::new(eps))?;
            let duals = feasible_conjugate(&inst, Potentials::new(finite(&sol.potentials)))?;
            let summary = json!({
                "solver": "entropic",
                "epsilon": eps,
                "objective": sol.objective(),
                "iterations": sol.iterations,
                "converged": sol.converged,
                "marginal_error": sol.marginal_error,
                "note": if sol.converged { "" } else { "not converged: best iterate, inconclusive" },
            });
            (sol.coupling, duals, summary)
        }
    };
    let slack = duality::verify_slackness(&inst, &coupling, &duals)?;
    write_json(&cfg.out, "coupling.json", &coupling)?;
    write(&cfg.out.join("coupling.csv"), &coupling_csv(&inst, &coupling))?;
    write_json(&cfg.out, "duals.json", &duals)?;
    write(&cfg.out.join("duals.csv"), &potentials_csv(&duals))?;
    write_json(&cfg.out, "slackness.json", &slack)?;
    write_json(&cfg.out, "summary.json", &summary)?;
    Ok(EXIT_OK)
}

fn positive_range(inst: &Instance) -> f64 {
    let r = inst.cost_range();
    if r > 0.0 {
        r
    } else {
        1.0
    }
}

/// Entropic scalings are `-inf` on uncharged atoms; any finite value works there before conjugation.
fn finite(values: &[Vec<f64>]) -> Vec<Vec<f64>> {
    values.iter().map(|v| v.iter().map(|&u| if u.is_finite() { u } else { -1e300 }).collect()).collect()
}

/// Shift `u_0` down to feasibility, then conjugate.
fn feasible_conjugate(inst: &Instance, pot: Potentials) -> Result<Potentials> {
    let violation = pot.max_violation(inst);
    let mut offsets = vec![0.0; inst.marginal_count()];
    offsets[0] = -violation.max(0.0);
    Ok(duality::conjugate_pass(inst, &pot.shifted(&offsets))?.potentials)
}

fn check_conditions(cfg: &RunConfig) -> Result<u8> {
    let loaded = load(cfg)?;
    let cost = &loaded.cost;
    let domains = loaded.domains();
    let last = cost.marginal_count() - 1;
    let pairs = 4;
    let reports = vec![
        conditions::check_twist(cost, &domains, 0, last, cfg.samples, pairs, cfg.seed, cfg.twist_tol)?,
        conditions::check_nondegenerate(cost, &domains, 0, last, cfg.samples, cfg.seed, cfg.det_tol)?,
        conditions::scan_t_negative(cost, &domains, cfg.samples, cfg.seed, cfg.margin, cfg.det_tol)?,
    ];
    write_json(&cfg.out, "conditions.json", &reports)?;
    let mut csv = String::from("condition,verdict,samples_tested,worst_value,threshold\n");
    for r in &reports {
        let cond = serde_json::to_value(r.condition).unwrap_or_default();
        let verdict = serde_json::to_value(r.verdict).unwrap_or_default();
        let _ = writeln!(
            csv,
            "{},{},{},{:e},{:e}",
            cond.as_str().unwrap_or(""),
            verdict.as_str().unwrap_or(""),
            r.samples_tested,
            r.worst_value,
            r.threshold
        );
    }
    write(&cfg.out.join("conditions.csv"), &csv)?;
    Ok(if reports.iter().any(|r| r.verdict == Verdict::Fail) { EXIT_CONDITION_FAILED } else { EXIT_OK })
}

fn conjugate(cfg: &RunConfig, start: Option<&Path>) -> Result<u8> {
    let inst = load(cfg)?.instance()?;
    let start = match start {
        Some(path) => read_json::<Potentials>(path)?,
        None => solver::solve_lp(&inst)?.duals,
    };
    let out = duality::conjugate_pass(&inst, &start)?;
    write_json(&cfg.out, "potentials.json", &out.potentials)?;
    write(&cfg.out.join("potentials.csv"), &potentials_csv(&out.potentials))?;
    write_json(
        &cfg.out,
        "conjugate.json",
        &json!({
            "start_dual_objective": start.dual_objective(&inst),
            "dual_objective": out.potentials.dual_objective(&inst),
            "conjugacy_residual": duality::conjugacy_residual(&inst, &out.potentials),
            "max_violation": out.potentials.max_violation(&inst),
            "argmin": out.argmin,
        }),
    )?;
    Ok(EXIT_OK)
}

fn diagnose(cfg: &RunConfig) -> Result<u8> {
    let inst = load(cfg)?.instance()?;
    let verdict = match cfg.solver {
        SolverKind::Lp => diagnostics::graph_extract(&inst, &solver::solve_lp(&inst)?.coupling, cfg.mass_tol),
        SolverKind::Entropic => {
            let eps = cfg.epsilon.unwrap_or_else(|| 0.01 * positive_range(&inst));
            let sol = solver::solve_entropic(&inst, &EntropicOptions::new(eps))?;
            diagnostics::graph_extract_approximate(&inst, &sol.coupling)
        }
    };
    write_json(&cfg.out, "graph.json", &verdict)?;
    if let Some(maps) = &verdict.maps {
        let mut csv = (0..inst.marginal_count()).map(|i| format!("a{i}")).collect::<Vec<_>>().join(",");
        csv.push('\n');
        for a in 0..inst.shape()[0] {
            let targets: Option<Vec<String>> = maps.iter().map(|map| map[a].map(|b| b.to_string())).collect();
            if let Some(t) = targets {
                let _ = writeln!(csv, "{a},{}", t.join(","));
            }
        }
        write(&cfg.out.join("maps.csv"), &csv)?;
        write_json(&cfg.out, "pushforward.json", &diagnostics::pushforward_check(&inst, &verdict)?)?;
    }
    let probe = ProbeOptions { mass_tol: cfg.mass_tol, ..ProbeOptions::default() };
    write_json(&cfg.out, "uniqueness.json", &diagnostics::uniqueness_probe(&inst, cfg.trials.max(2), cfg.seed, &probe)?)?;
    let dual = duality::dual_uniqueness_probe(&inst, &DualProbeOptions::new(cfg.trials.max(2), cfg.seed))?;
    write_json(&cfg.out, "dual_uniqueness.json", &dual)?;
    Ok(EXIT_OK)
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct Endpoints {
    x0: Vec<f64>,
    u0_grad: Vec<f64>,
    start: Vec<Vec<f64>>,
    end: Vec<Vec<f64>>,
    #[serde(default)]
    last_seed: Option<Vec<f64>>,
}

fn certify(cfg: &RunConfig, endpoints: &Path, steps: usize) -> Result<u8> {
    let loaded = load(cfg)?;
    let ends: Endpoints = read_json(endpoints)?;
    let domains = loaded.domains();
    let mut opts = SegmentOptions::new(steps);
    opts.det_tol = cfg.det_tol;
    opts.last_seed = ends.last_seed.clone();
    opts.last_domain = domains.last().cloned();
    opts.h_eigen_bound = Some(conditions::h_part_bound(&loaded.cost, &domains, cfg.samples, cfg.seed, cfg.det_tol)?);
    let cert = conditions::segment_certificate(&loaded.cost, &ends.x0, &ends.u0_grad, &ends.start, &ends.end, &opts)?;
    let verdict = if cert.value < 0.0 { Verdict::Pass } else { Verdict::Fail };
    write_json(&cfg.out, "certificate.json", &json!({ "certificate": cert, "verdict": verdict }))?;
    Ok(if verdict == Verdict::Fail { EXIT_CONDITION_FAILED } else { EXIT_OK })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        fs::write(&path, r#"{"seed": 7, "samples": 3, "preset": "gs"}"#).unwrap();
        let cli = Cli::try_parse_from(["mmot", "solve", "--config", path.to_str().unwrap(), "--samples", "9"]).unwrap();
        let cfg = RunConfig::resolve(&cli.common).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.samples, 9);
        assert_eq!(cfg.preset, Some(Preset::Gs));
    }

    #[test]
    fn nonpositive_tolerance_is_rejected() {
        let cli = Cli::try_parse_from(["mmot", "solve", "--preset", "gs", "--det-tol", "0"]).unwrap();
        assert!(RunConfig::resolve(&cli.common).is_err());
    }

    #[test]
    fn unknown_config_key_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        fs::write(&path, r#"{"sed": 7}"#).unwrap();
        let cli = Cli::try_parse_from(["mmot", "solve", "--config", path.to_str().unwrap()]).unwrap();
        assert!(matches!(RunConfig::resolve(&cli.common), Err(Error::Json { .. })));
    }
}
