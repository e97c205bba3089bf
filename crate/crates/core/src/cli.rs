//! Configuration resolution and command execution for the `theta-ergodic`
//! binary.
//!
//! Every parameter has a per-command default. A JSON config file overrides
//! the defaults and command-line flags override the file. The resolved
//! configuration is written to `<out>/resolved_config.json` before anything
//! runs, and feeding that file back through `--config` reproduces the run.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, ValueEnum};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lyapunov::{
    drift_constants, minorization_probe, verify_drift_mc, verify_geometric_decay, DecayPoint, DriftVerdict,
    LyapunovSpec, MinorizationReport, SE_BAND,
};
use crate::problem::{
    check_coercivity, check_lemma_inequality, check_monotonicity, check_nondegeneracy, AssumptionReport, SampleSpec,
    SodeProblem,
};
use crate::spde::{
    allen_cahn_constants, drift_constants_spde, power_spectrum, verify_drift_mc_spde, DiegStepper, SpdeProblem,
    SpectralSpace,
};
use crate::stats::{default_initial_fields, oscillation, run_sode_experiment, run_spde_experiment, TestFunctional};
use crate::stm::StmConfig;

pub const RESOLVED_CONFIG: &str = "resolved_config.json";
pub const SUMMARY: &str = "summary.csv";

/// KS distance thresholds for the terminal-sample comparison.
pub const KS_WITHIN_THETA: f64 = 0.05;
pub const KS_ACROSS_THETA: f64 = 0.10;
/// Relative agreement required between SPDE time averages from different
/// initial data.
pub const TIMEAVG_AGREEMENT: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    VerifyAssumptions,
    SodeDensity,
    SodeDrift,
    SodeDecay,
    SodeMinorization,
    SpdeTimeavg,
    SpdeDrift,
}

impl Command {
    fn is_spde(self) -> bool {
        matches!(self, Command::SpdeTimeavg | Command::SpdeDrift)
    }

    fn needs_certificate(self) -> bool {
        matches!(self, Command::SodeDrift | Command::SodeDecay)
    }
}

/// Fully resolved run parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ExperimentConfig {
    pub command: Command,
    pub preset: String,
    /// Overrides of the preset structural constants (`null` keeps them).
    pub l1: Option<f64>,
    pub l2: Option<f64>,
    pub l3: Option<f64>,
    pub theta: Vec<f64>,
    /// `null` selects `2 theta - 1`.
    pub lambda: Option<f64>,
    pub tau: f64,
    #[serde(rename = "N")]
    pub modes: usize,
    pub epsilon: f64,
    pub eps_margin: f64,
    #[serde(rename = "K2")]
    pub k2: f64,
    pub q_spectrum_exponent: f64,
    pub n: usize,
    pub paths: usize,
    pub mc_paths: usize,
    pub seed: u64,
    pub burn_in: usize,
    #[serde(rename = "box")]
    pub sample_box: [f64; 2],
    pub samples: usize,
    pub tolerance: f64,
    pub lemma_rho: f64,
    pub lemma_beta: f64,
    pub x0: Vec<f64>,
    pub grid: usize,
    pub probe: [f64; 2],
    #[serde(rename = "unsafe")]
    pub unsafe_theta: bool,
}

/// Partial configuration: the config file schema and the flag set.
#[derive(Clone, Debug, Default, PartialEq, Deserialize, Args)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ConfigOverrides {
    #[arg(skip)]
    pub command: Option<Command>,
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub l1: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub l2: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub l3: Option<f64>,
    /// Comma-separated list.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub theta: Option<Vec<f64>>,
    #[arg(long, allow_hyphen_values = true)]
    pub lambda: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub tau: Option<f64>,
    #[serde(rename = "N")]
    #[arg(long = "N")]
    pub modes: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub epsilon: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub eps_margin: Option<f64>,
    #[serde(rename = "K2")]
    #[arg(long = "K2", allow_hyphen_values = true)]
    pub k2: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub q_spectrum_exponent: Option<f64>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub paths: Option<usize>,
    #[arg(long)]
    pub mc_paths: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    /// `lower,upper`.
    #[serde(rename = "box")]
    #[arg(long = "box", value_delimiter = ',', allow_hyphen_values = true)]
    pub sample_box: Option<Vec<f64>>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub lemma_rho: Option<f64>,
    #[arg(long)]
    pub lemma_beta: Option<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Option<Vec<f64>>,
    #[arg(long)]
    pub grid: Option<usize>,
    /// `lower,upper`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub probe: Option<Vec<f64>>,
    /// Allow theta below 1/2, outside the certified range.
    #[serde(rename = "unsafe")]
    #[arg(long = "unsafe", num_args = 0..=1, default_missing_value = "true")]
    pub unsafe_theta: Option<bool>,
}

#[derive(Debug, Parser)]
#[command(name = "theta-ergodic", version, about = "Ergodicity certificates for the stochastic theta method")]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    /// JSON config file (same keys as the flags).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "results")]
    pub out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    #[command(flatten)]
    pub overrides: ConfigOverrides,
}

fn pair(v: Vec<f64>, key: &str) -> Result<[f64; 2]> {
    <[f64; 2]>::try_from(v).map_err(|v| Error::usage(key, format!("expected two values, got {}", v.len())))
}

impl ExperimentConfig {
    pub fn defaults(command: Command) -> Self {
        let (theta, x0, n, paths) = match command {
            Command::SodeDensity => (vec![0.5, 0.75, 1.0], vec![-5.0, 5.0, 15.0], 5000, 10_000),
            Command::SodeDrift => (vec![1.0], vec![-5.0, -2.0, 0.0, 2.0, 5.0, 15.0], 1, 1),
            Command::SodeDecay => (vec![1.0], vec![15.0], 200, 1),
            Command::SpdeTimeavg | Command::SpdeDrift => (vec![1.0], vec![], 2000, 1000),
            _ => (vec![1.0], vec![], 1, 1),
        };
        Self {
            command,
            preset: if command.is_spde() { "allen-cahn" } else { "example1" }.into(),
            l1: None,
            l2: None,
            l3: None,
            theta,
            lambda: None,
            tau: 0.1,
            modes: 10,
            epsilon: 0.5,
            eps_margin: 1.0,
            k2: -1.0,
            q_spectrum_exponent: 2.0,
            n,
            paths,
            mc_paths: if command == Command::SodeDrift { 100_000 } else { 10_000 },
            seed: 0,
            burn_in: 0,
            sample_box: [-10.0, 10.0],
            samples: 10_000,
            tolerance: 1e-10,
            lemma_rho: 0.2,
            lemma_beta: 0.1,
            x0,
            grid: 200,
            probe: [-1.0, 1.0],
            unsafe_theta: false,
        }
    }

    pub fn apply(&mut self, o: &ConfigOverrides) -> Result<()> {
        macro_rules! set {
            ($($f:ident),*) => {$(if let Some(v) = &o.$f { self.$f = v.clone(); })*};
        }
        macro_rules! set_opt {
            ($($f:ident),*) => {$(if o.$f.is_some() { self.$f = o.$f; })*};
        }
        set!(preset, theta, tau, modes, epsilon, eps_margin, k2, q_spectrum_exponent, n, paths, mc_paths);
        set!(seed, burn_in, samples, tolerance, lemma_rho, lemma_beta, x0, grid, unsafe_theta);
        set_opt!(l1, l2, l3, lambda);
        if let Some(b) = &o.sample_box {
            self.sample_box = pair(b.clone(), "box")?;
        }
        if let Some(p) = &o.probe {
            self.probe = pair(p.clone(), "probe")?;
        }
        Ok(())
    }

    fn sode_problem(&self) -> Result<SodeProblem> {
        let p = SodeProblem::preset(&self.preset)?;
        if self.l1.is_none() && self.l2.is_none() && self.l3.is_none() {
            return Ok(p);
        }
        let (l1, l2, l3) = (self.l1.unwrap_or(p.l1), self.l2.unwrap_or(p.l2), self.l3.unwrap_or(p.l3));
        p.with_constants(l1, l2, l3).map_err(|e| Error::usage("l1/l2/l3", e.to_string()))
    }

    fn spde_stepper(&self) -> Result<DiegStepper> {
        if self.preset != "allen-cahn" {
            return Err(Error::usage("preset", format!("unknown SPDE preset '{}' (expected allen-cahn)", self.preset)));
        }
        if self.modes == 0 {
            return Err(Error::usage("N", "at least one mode required"));
        }
        if !self.q_spectrum_exponent.is_finite() {
            return Err(Error::usage("q-spectrum-exponent", "must be finite"));
        }
        let q = power_spectrum(self.modes, self.q_spectrum_exponent);
        let params = allen_cahn_constants(self.epsilon, self.k2, &q).map_err(|e| {
            let key = if self.k2 >= 0.0 { "K2" } else { "epsilon" };
            Error::usage(key, e.to_string())
        })?;
        let space = SpectralSpace::new(self.modes).map_err(|e| Error::usage("N", e.to_string()))?;
        DiegStepper::new(space, SpdeProblem::allen_cahn(&params), self.tau).map_err(|e| Error::usage("tau", e.to_string()))
    }

    fn lyapunov_spec(&self, theta: f64) -> Result<LyapunovSpec> {
        let lambda = self.lambda.unwrap_or((2.0 * theta - 1.0).max(0.0));
        LyapunovSpec::new(theta, lambda, self.tau).map_err(|e| Error::usage("lambda", e.to_string()))
    }

    /// Checks every precondition of the targeted operations.
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::usage("tau", format!("must lie in (0, 1) (got {})", self.tau)));
        }
        if self.n == 0 {
            return Err(Error::usage("n", "at least one step required"));
        }
        if self.paths == 0 {
            return Err(Error::usage("paths", "at least one path required"));
        }
        if self.command.is_spde() {
            let stepper = self.spde_stepper()?;
            match self.command {
                Command::SpdeTimeavg if self.burn_in >= self.n => {
                    return Err(Error::usage("burn-in", format!("must be below n = {}", self.n)));
                }
                Command::SpdeDrift => {
                    if self.mc_paths < 1000 {
                        return Err(Error::usage("mc-paths", "at least 1000 Monte Carlo paths required"));
                    }
                    drift_constants_spde(stepper.problem(), stepper.space(), self.tau, self.eps_margin)
                        .map_err(|e| Error::usage("eps-margin", e.to_string()))?;
                }
                _ => {}
            }
            return Ok(());
        }
        let problem = self.sode_problem()?;
        if self.command != Command::VerifyAssumptions {
            if self.theta.is_empty() {
                return Err(Error::usage("theta", "at least one theta required"));
            }
            for &theta in &self.theta {
                if !(0.0..=1.0).contains(&theta) {
                    return Err(Error::usage("theta", format!("θ must lie in [0, 1] (got {theta})")));
                }
                let certified = (0.5..=1.0).contains(&theta);
                if !certified && (!self.unsafe_theta || self.command.needs_certificate()) {
                    return Err(Error::usage(
                        "theta",
                        format!("θ ∈ [1/2,1] required for certificates (got {theta})"),
                    ));
                }
                let lt = problem.l1 * theta * self.tau;
                if lt >= 2.0 {
                    return Err(Error::usage(
                        "tau",
                        format!("L1·θ·τ < 2 violated: {} · {theta} · {} = {lt}", problem.l1, self.tau),
                    ));
                }
                if self.command.needs_certificate() {
                    let spec = self.lyapunov_spec(theta)?;
                    if self.command == Command::SodeDecay && spec.is_trapezoidal() {
                        return Err(Error::usage("theta", "geometric decay needs θ > 1/2"));
                    }
                }
            }
        }
        match self.command {
            Command::VerifyAssumptions => {
                let [a, b] = self.sample_box;
                if !(a < b) {
                    return Err(Error::usage("box", format!("lower bound must be below upper ({a}, {b})")));
                }
                if self.samples == 0 {
                    return Err(Error::usage("samples", "at least one sample required"));
                }
                if !(self.tolerance >= 0.0) {
                    return Err(Error::usage("tolerance", "must be nonnegative"));
                }
            }
            Command::SodeDensity | Command::SodeDrift | Command::SodeDecay => {
                if self.x0.is_empty() {
                    return Err(Error::usage("x0", "at least one initial value required"));
                }
                if problem.dim() != 1 {
                    return Err(Error::usage("preset", "scalar problems only for this command"));
                }
                if self.command != Command::SodeDensity && self.mc_paths < 1000 {
                    return Err(Error::usage("mc-paths", "at least 1000 Monte Carlo paths required"));
                }
            }
            Command::SodeMinorization => {
                if self.grid < 2 {
                    return Err(Error::usage("grid", "at least 2 grid points required"));
                }
                let [a, b] = self.probe;
                if !(a <= b) {
                    return Err(Error::usage("probe", format!("lower bound must not exceed upper ({a}, {b})")));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Finds the first key of a JSON object that fails to deserialize on its own.
fn offending_key(map: &serde_json::Map<String, serde_json::Value>) -> Option<String> {
    map.iter().find_map(|(k, v)| {
        let single = serde_json::Value::Object([(k.clone(), v.clone())].into_iter().collect());
        serde_json::from_value::<ConfigOverrides>(single).is_err().then(|| k.clone())
    })
}

pub fn read_config_file(path: &Path) -> Result<ConfigOverrides> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::usage("config", e.to_string()))?;
    let serde_json::Value::Object(map) = &value else {
        return Err(Error::usage("config", "config file must hold a JSON object"));
    };
    serde_json::from_value(value.clone()).map_err(|e| {
        let key = offending_key(map).unwrap_or_else(|| "config".into());
        Error::usage(key, e.to_string())
    })
}

/// Defaults, then the config file, then flags; validated.
pub fn parse_config(
    command: Command,
    file: Option<&Path>,
    flags: &ConfigOverrides,
) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::defaults(command);
    if let Some(path) = file {
        let from_file = read_config_file(path)?;
        if let Some(c) = from_file.command {
            if c != command {
                return Err(Error::usage("command", format!("config file is for {c:?}, not {command:?}")));
            }
        }
        config.apply(&from_file)?;
    }
    config.apply(flags)?;
    config.validate()?;
    Ok(config)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Verdict {
    pub check_id: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Summary {
    pub verdicts: Vec<Verdict>,
}

impl Summary {
    fn push(&mut self, check_id: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.verdicts.push(Verdict {
            check_id: check_id.into(),
            passed,
            detail: detail.into().replace(',', ";"),
        });
    }

    pub fn all_passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("check_id,passed,detail\n");
        for v in &self.verdicts {
            let _ = writeln!(s, "{},{},{}", v.check_id, v.passed, v.detail);
        }
        s
    }
}

fn write(dir: &Path, name: &str, body: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, body).map_err(|e| Error::io(path, e))
}

/// Executes `config`, writing the resolved config, the command's CSVs and
/// `summary.csv` into `out`.
pub fn run(config: &ExperimentConfig, out: &Path) -> Result<Summary> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let resolved = serde_json::to_string_pretty(config).expect("config serializes");
    write(out, RESOLVED_CONFIG, &(resolved + "\n"))?;
    info!("running {:?} into {}", config.command, out.display());
    let mut summary = Summary::default();
    match config.command {
        Command::VerifyAssumptions => verify_assumptions(config, out, &mut summary)?,
        Command::SodeDensity => sode_density(config, out, &mut summary)?,
        Command::SodeDrift => sode_drift(config, out, &mut summary)?,
        Command::SodeDecay => sode_decay(config, out, &mut summary)?,
        Command::SodeMinorization => sode_minorization(config, out, &mut summary)?,
        Command::SpdeTimeavg => spde_timeavg(config, out, &mut summary)?,
        Command::SpdeDrift => spde_drift(config, out, &mut summary)?,
    }
    write(out, SUMMARY, &summary.to_csv())?;
    Ok(summary)
}

fn verify_assumptions(c: &ExperimentConfig, out: &Path, summary: &mut Summary) -> Result<()> {
    let problem = c.sode_problem()?;
    let spec = SampleSpec::in_box(c.sample_box[0], c.sample_box[1], c.samples)
        .with_seed(c.seed)
        .with_tolerance(c.tolerance);
    let reports: Vec<AssumptionReport> = vec![
        check_monotonicity(&problem, &spec)?,
        check_coercivity(&problem, &spec)?,
        check_nondegeneracy(&problem, &spec)?,
        check_lemma_inequality(&problem, c.lemma_rho, c.lemma_beta, &spec)?,
    ];
    let mut csv = format!("{}\n", AssumptionReport::CSV_HEADER);
    for r in &reports {
        csv.push_str(&r.csv_row());
        csv.push('\n');
        summary.push(r.assumption.to_string(), r.passed, format!("worst_margin={}", r.worst_margin));
    }
    write(out, "assumptions.csv", &csv)
}

fn sode_density(c: &ExperimentConfig, out: &Path, summary: &mut Summary) -> Result<()> {
    let problem = c.sode_problem()?;
    let configs = c
        .theta
        .iter()
        .map(|&t| StmConfig::new(t, c.tau))
        .collect::<Result<Vec<_>>>()?;
    let report = run_sode_experiment(&problem, &configs, &c.x0, c.n, c.paths, c.seed)?;
    report.write_csv_dir(out)?;
    for w in &report.warnings {
        warn!("{w}");
    }
    if !report.warnings.is_empty() {
        write(out, "warnings.txt", &(report.warnings.join("\n") + "\n"))?;
    }
    for (i, a) in report.cells.iter().enumerate() {
        for b in &report.cells[i + 1..] {
            let ks = report.distance(&a.id(), &b.id()).unwrap_or(f64::NAN);
            let limit = if a.theta == b.theta { KS_WITHIN_THETA } else { KS_ACROSS_THETA };
            summary.push(
                format!("ks_{}_vs_{}", a.id(), b.id()),
                ks < limit,
                format!("ks={ks} limit={limit}"),
            );
        }
    }
    Ok(())
}

fn sode_drift(c: &ExperimentConfig, out: &Path, summary: &mut Summary) -> Result<()> {
    let problem = c.sode_problem()?;
    let mut csv = format!("theta,{}\n", DriftVerdict::CSV_HEADER);
    for &theta in &c.theta {
        let spec = c.lyapunov_spec(theta)?;
        for &x in &c.x0 {
            let v = verify_drift_mc(&[x], &problem, &spec, c.mc_paths, c.seed)?;
            let _ = writeln!(csv, "{theta},{}", v.csv_row());
            summary.push(
                format!("drift_theta{theta}_x{x}"),
                v.passed,
                format!("lhs={} se={} bound={}", v.lhs_estimate, v.std_error, v.bound),
            );
        }
    }
    write(out, "drift.csv", &csv)
}

fn sode_decay(c: &ExperimentConfig, out: &Path, summary: &mut Summary) -> Result<()> {
    let problem = c.sode_problem()?;
    let mut csv = format!("theta,x0,{}\n", DecayPoint::CSV_HEADER);
    for &theta in &c.theta {
        let spec = c.lyapunov_spec(theta)?;
        let level = drift_constants(&problem, &spec)?.stationary_level();
        for &x0 in &c.x0 {
            let points = verify_geometric_decay(&[x0], &problem, &spec, c.n, c.mc_paths, c.seed)?;
            for p in &points {
                let _ = writeln!(csv, "{theta},{x0},{}", p.csv_row());
            }
            let failed = points.iter().filter(|p| !p.passed).count();
            summary.push(
                format!("decay_theta{theta}_x0{x0}"),
                failed == 0,
                format!("{failed} of {} steps above the bound", points.len()),
            );
            let last = points.last().expect("decay returns at least one point");
            summary.push(
                format!("level_theta{theta}_x0{x0}"),
                last.ev_estimate <= level + SE_BAND * last.std_error,
                format!("terminal={} level={level} se={}", last.ev_estimate, last.std_error),
            );
        }
    }
    write(out, "decay.csv", &csv)
}

fn sode_minorization(c: &ExperimentConfig, out: &Path, summary: &mut Summary) -> Result<()> {
    let problem = c.sode_problem()?;
    let mut csv = format!("theta,{}\n", MinorizationReport::CSV_HEADER);
    for &theta in &c.theta {
        let cfg = StmConfig::new(theta, c.tau)?;
        let r = minorization_probe(&problem, &cfg, (c.probe[0], c.probe[1]), c.grid)?;
        let _ = writeln!(csv, "{theta},{}", r.csv_row());
        summary.push(
            format!("minorization_theta{theta}"),
            r.passed,
            format!("radius={} lower_bound={}", r.small_set_radius, r.measure_lower_bound),
        );
    }
    write(out, "minorization.csv", &csv)
}

fn spde_timeavg(c: &ExperimentConfig, out: &Path, summary: &mut Summary) -> Result<()> {
    let stepper = c.spde_stepper()?;
    let fields = default_initial_fields(c.modes);
    let functionals = TestFunctional::standard_set();
    let report = run_spde_experiment(&stepper, &fields, c.n, c.paths, &functionals, c.seed, c.burn_in)?;
    report.write_csv_dir(out)?;
    for f in &functionals {
        let finals: Vec<f64> = fields
            .iter()
            .filter_map(|(ic, _)| report.curve(&f.name, ic).map(|cv| cv.last()))
            .collect();
        let mut worst = 0.0f64;
        for (i, a) in finals.iter().enumerate() {
            for b in &finals[i + 1..] {
                worst = worst.max((a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE));
            }
        }
        summary.push(
            format!("agreement_{}", f.name),
            worst <= TIMEAVG_AGREEMENT,
            format!("max_relative_gap={worst} limit={TIMEAVG_AGREEMENT}"),
        );
        for (ic, _) in &fields {
            if let Some(cv) = report.curve(&f.name, ic) {
                let len = cv.points.len();
                let (q2, q4) = (oscillation(&cv.points, len / 4..len / 2), oscillation(&cv.points, 3 * len / 4..len));
                summary.push(
                    format!("settling_{}_{}", f.name, ic),
                    q4 < q2,
                    format!("q2_oscillation={q2} q4_oscillation={q4}"),
                );
            }
        }
    }
    Ok(())
}

fn spde_drift(c: &ExperimentConfig, out: &Path, summary: &mut Summary) -> Result<()> {
    let stepper = c.spde_stepper()?;
    let consts = drift_constants_spde(stepper.problem(), stepper.space(), c.tau, c.eps_margin)?;
    summary.push("drift_constants", true, format!("rho={} kappa={}", consts.rho, consts.kappa));
    let mut csv = format!("field,{}\n", DriftVerdict::CSV_HEADER);
    for (name, x) in default_initial_fields(c.modes) {
        let v = verify_drift_mc_spde(&x, &stepper, c.eps_margin, c.mc_paths, c.seed)?;
        let _ = writeln!(csv, "{name},{}", v.csv_row());
        summary.push(
            format!("drift_{name}"),
            v.passed,
            format!("lhs={} se={} bound={}", v.lhs_estimate, v.std_error, v.bound),
        );
    }
    write(out, "drift.csv", &csv)
}

/// Exit status: 0 when every verdict passes, 1 when a verdict fails, 2 on a
/// usage error and 3 on a runtime failure.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            warn!("could not size the worker pool: {e}");
        }
    }
    let config = match parse_config(cli.command, cli.config.as_deref(), &cli.overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return if matches!(e, Error::Usage { .. }) { 2 } else { 3 };
        }
    };
    match run(&config, &cli.out) {
        Ok(summary) => {
            for v in &summary.verdicts {
                println!("[{}] {} {}", if v.passed { "PASS" } else { "FAIL" }, v.check_id, v.detail);
            }
            if summary.all_passed() {
                0
            } else {
                1
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            3
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flags(args: &[&str]) -> (Command, ConfigOverrides) {
        let cli = Cli::try_parse_from(std::iter::once("theta-ergodic").chain(args.iter().copied())).unwrap();
        (cli.command, cli.overrides)
    }

    fn usage_key(e: Error) -> String {
        match e {
            Error::Usage { key, .. } => key,
            other => panic!("expected usage error, got {other}"),
        }
    }

    #[test]
    fn density_defaults() {
        let (cmd, o) = flags(&["sode-density"]);
        let c = parse_config(cmd, None, &o).unwrap();
        assert_eq!(c.theta, [0.5, 0.75, 1.0]);
        assert_eq!(c.x0, [-5.0, 5.0, 15.0]);
        assert_eq!((c.tau, c.n, c.seed), (0.1, 5000, 0));
    }

    #[test]
    fn theta_gate() {
        let (cmd, o) = flags(&["sode-density", "--theta", "0.25"]);
        let e = parse_config(cmd, None, &o).unwrap_err();
        assert!(e.to_string().contains("θ ∈ [1/2,1] required for certificates"));
        let (cmd, o) = flags(&["sode-density", "--theta", "0.25", "--unsafe"]);
        assert!(parse_config(cmd, None, &o).is_ok());
        let (cmd, o) = flags(&["sode-drift", "--theta", "0.25", "--unsafe"]);
        assert_eq!(usage_key(parse_config(cmd, None, &o).unwrap_err()), "theta");
    }

    #[test]
    fn step_size_gate() {
        let (cmd, o) = flags(&["sode-density", "--tau", "0.9", "--theta", "1", "--preset", "example1"]);
        let e = parse_config(cmd, None, &o).unwrap_err();
        assert!(e.to_string().contains("L1·θ·τ < 2 violated"), "{e}");
        assert_eq!(usage_key(e), "tau");
    }

    #[test]
    fn negative_values_and_lists() {
        let (cmd, o) = flags(&["sode-drift", "--x0", "-5,-2,0", "--K2", "-3"]);
        assert_eq!(cmd, Command::SodeDrift);
        assert_eq!(o.x0.unwrap(), [-5.0, -2.0, 0.0]);
        assert_eq!(o.k2, Some(-3.0));
        let (_, o) = flags(&["verify-assumptions", "--box", "-4,4"]);
        assert_eq!(o.sample_box.unwrap(), [-4.0, 4.0]);
    }

    #[test]
    fn file_errors_name_the_key() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"tau": 0.2, "bogus": 1}"#).unwrap();
        let e = parse_config(Command::SodeDrift, Some(&path), &ConfigOverrides::default()).unwrap_err();
        assert_eq!(usage_key(e), "bogus");
        fs::write(&path, r#"{"tau": "fast"}"#).unwrap();
        let e = parse_config(Command::SodeDrift, Some(&path), &ConfigOverrides::default()).unwrap_err();
        assert_eq!(usage_key(e), "tau");
    }

    #[test]
    fn precedence_flags_over_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"tau": 0.2, "seed": 7}"#).unwrap();
        let (cmd, o) = flags(&["sode-drift", "--tau", "0.05"]);
        let c = parse_config(cmd, Some(&path), &o).unwrap();
        assert_eq!((c.tau, c.seed), (0.05, 7));
    }

    #[test]
    fn resolved_config_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let (cmd, o) = flags(&["spde-drift", "--epsilon", "0.7", "--seed", "3"]);
        let c = parse_config(cmd, None, &o).unwrap();
        let path = dir.path().join(RESOLVED_CONFIG);
        fs::write(&path, serde_json::to_string_pretty(&c).unwrap()).unwrap();
        let again = parse_config(cmd, Some(&path), &ConfigOverrides::default()).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn spde_gates() {
        let (cmd, o) = flags(&["spde-drift", "--eps-margin", "20"]);
        assert_eq!(usage_key(parse_config(cmd, None, &o).unwrap_err()), "eps-margin");
        let (cmd, o) = flags(&["spde-timeavg", "--epsilon", "0.1", "--tau", "0.5"]);
        assert_eq!(usage_key(parse_config(cmd, None, &o).unwrap_err()), "tau");
        let (cmd, o) = flags(&["spde-timeavg", "--K2", "1"]);
        assert_eq!(usage_key(parse_config(cmd, None, &o).unwrap_err()), "K2");
    }
}
