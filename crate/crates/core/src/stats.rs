//! Ergodic diagnostics: running time averages, Gaussian kernel density
//! estimates, two-sample Kolmogorov–Smirnov distances, and the SODE and SPDE
//! experiments comparing the long-time behaviour from several initial data.

use std::f64::consts::PI;
use std::fmt;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::norm_sq;
use crate::montecarlo::path_moments;
use crate::problem::SodeProblem;
use crate::rng::NoiseStream;
use crate::spde::{DiegStepper, SpectralField};
use crate::stm::{StmConfig, Stepper};

pub const KDE_GRID: usize = 512;

pub type StateFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// A named observable `phi` of the state (coordinates or Galerkin
/// coefficients; for the latter the Euclidean norm is the L² norm).
#[derive(Clone)]
pub struct TestFunctional {
    pub name: String,
    pub phi: StateFn,
}

impl fmt::Debug for TestFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestFunctional").field("name", &self.name).finish()
    }
}

impl TestFunctional {
    pub fn new(name: impl Into<String>, phi: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            name: name.into(),
            phi: Arc::new(phi),
        }
    }

    pub fn exp_neg_norm2() -> Self {
        Self::new("exp_neg_norm2", |x| (-norm_sq(x)).exp())
    }

    pub fn sin_norm2() -> Self {
        Self::new("sin_norm2", |x| norm_sq(x).sin())
    }

    pub fn norm2() -> Self {
        Self::new("norm2", norm_sq)
    }

    /// `exp(-|x|^2)`, `sin |x|^2` and `|x|^2`.
    pub fn standard_set() -> Vec<Self> {
        vec![Self::exp_neg_norm2(), Self::sin_norm2(), Self::norm2()]
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.phi)(x)
    }
}

/// Running averages from per-step totals: `step_sums[k]` is the sum of `phi`
/// over all paths at step `k`. Returns `(n, A(n))` for `n > burn_in`, with
/// `A(n)` the mean over steps `burn_in + 1..=n` and all paths.
pub fn running_average(step_sums: &[f64], paths: usize, burn_in: usize) -> Result<Vec<(usize, f64)>> {
    let n = step_sums.len().saturating_sub(1);
    if burn_in >= n {
        return Err(Error::invalid(format!("burn_in ({burn_in}) must be below the step count ({n})")));
    }
    if paths == 0 {
        return Err(Error::InsufficientData("time average over zero paths".into()));
    }
    let mut acc = 0.0;
    Ok((burn_in + 1..=n)
        .map(|k| {
            acc += step_sums[k];
            (k, acc / ((k - burn_in) * paths) as f64)
        })
        .collect())
}

/// Running time average of `phi` over stored paths (`paths[p][k]` is the
/// state of path `p` at step `k`; all paths must have equal length).
pub fn time_average(paths: &[Vec<Vec<f64>>], phi: &TestFunctional, burn_in: usize) -> Result<Vec<(usize, f64)>> {
    let len = paths.first().map_or(0, Vec::len);
    if paths.iter().any(|p| p.len() != len) {
        return Err(Error::invalid("all paths must share the same step grid"));
    }
    let sums: Vec<f64> = (0..len).map(|k| paths.iter().map(|p| phi.eval(&p[k])).sum()).collect();
    running_average(&sums, paths.len(), burn_in)
}

/// `max - min` of the curve values over `range` of its entries.
pub fn oscillation(curve: &[(usize, f64)], range: std::ops::Range<usize>) -> f64 {
    let vals = curve[range].iter().map(|p| p.1);
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    hi - lo
}

#[derive(Clone, Debug, PartialEq)]
pub struct Kde {
    pub bandwidth: f64,
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
}

impl Kde {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,density\n");
        for (x, d) in self.grid.iter().zip(&self.density) {
            let _ = writeln!(s, "{x},{d}");
        }
        s
    }

    /// Trapezoid integral over the grid.
    pub fn mass(&self) -> f64 {
        self.grid
            .windows(2)
            .zip(self.density.windows(2))
            .map(|(x, d)| 0.5 * (x[1] - x[0]) * (d[0] + d[1]))
            .sum()
    }
}

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Silverman's rule `0.9 min(sd, IQR / 1.34) n^(-1/5)`.
pub fn silverman_bandwidth(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let sd = (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * n.powf(-0.2)
}

/// Gaussian KDE on a 512-point grid over `[min - 3h, max + 3h]`.
pub fn empirical_density(samples: &[f64], bandwidth: Option<f64>) -> Result<Kde> {
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("samples must be finite"));
    }
    let (min, max) = samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if samples.len() < 2 || min == max {
        return Err(Error::InsufficientData(
            "density estimate needs at least 2 distinct samples".into(),
        ));
    }
    let h = match bandwidth {
        Some(h) if h > 0.0 && h.is_finite() => h,
        Some(h) => return Err(Error::invalid(format!("bandwidth must be positive (got {h})"))),
        None => silverman_bandwidth(samples),
    };
    let lo = min - 3.0 * h;
    let dx = (max - min + 6.0 * h) / (KDE_GRID - 1) as f64;
    let grid: Vec<f64> = (0..KDE_GRID).map(|i| lo + i as f64 * dx).collect();
    let norm = 1.0 / (samples.len() as f64 * h * (2.0 * PI).sqrt());
    let density = grid
        .par_iter()
        .map(|&g| {
            samples
                .iter()
                .map(|s| {
                    let z = (g - s) / h;
                    (-0.5 * z * z).exp()
                })
                .sum::<f64>()
                * norm
        })
        .collect();
    Ok(Kde {
        bandwidth: h,
        grid,
        density,
    })
}

/// Sup distance between the empirical CDFs of `a` and `b`.
pub fn ks_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InsufficientData("KS distance needs two nonempty samples".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let t = a[i].min(b[j]);
        while i < a.len() && a[i] <= t {
            i += 1;
        }
        while j < b.len() && b[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// Asymptotic two-sample critical value at level `alpha`.
pub fn ks_critical_value(n: usize, m: usize, alpha: f64) -> f64 {
    let (n, m) = (n as f64, m as f64);
    ((2.0 / alpha).ln() / 2.0).sqrt() * ((n + m) / (n * m)).sqrt()
}

/// Asymptotic p-value of a two-sample distance `d` (Kolmogorov series).
pub fn ks_p_value(d: f64, n: usize, m: usize) -> f64 {
    let ne = (n as f64 * m as f64) / (n + m) as f64;
    let l = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    if l < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * l * l).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimeAverageCurve {
    pub functional: String,
    pub initial: String,
    pub points: Vec<(usize, f64)>,
}

impl TimeAverageCurve {
    pub fn last(&self) -> f64 {
        self.points.last().map_or(f64::NAN, |p| p.1)
    }
}

/// Terminal samples of one `(theta, x0)` cell of the SODE experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleCell {
    pub theta: f64,
    pub initial: String,
    pub terminal: Vec<f64>,
    pub kde: Option<Kde>,
}

impl SampleCell {
    pub fn id(&self) -> String {
        format!("theta{}_x0{}", self.theta, self.initial)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellDistance {
    pub cell_a: String,
    pub cell_b: String,
    pub ks: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ErgodicReport {
    pub time_averages: Vec<TimeAverageCurve>,
    pub cells: Vec<SampleCell>,
    pub distances: Vec<CellDistance>,
    pub warnings: Vec<String>,
}

impl ErgodicReport {
    pub fn curve(&self, functional: &str, initial: &str) -> Option<&TimeAverageCurve> {
        self.time_averages
            .iter()
            .find(|c| c.functional == functional && c.initial == initial)
    }

    pub fn distance(&self, a: &str, b: &str) -> Option<f64> {
        self.distances
            .iter()
            .find(|d| (d.cell_a == a && d.cell_b == b) || (d.cell_a == b && d.cell_b == a))
            .map(|d| d.ks)
    }

    /// Writes `timeavg_<phi>_<ic>.csv`, `kde_<theta>_<ic>.csv` and
    /// `distances.csv` (the latter only when cells exist). Returns the file
    /// names written, in order.
    pub fn write_csv_dir(&self, dir: &Path) -> Result<Vec<String>> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut written = Vec::new();
        let mut put = |name: String, body: String| -> Result<()> {
            let path = dir.join(&name);
            fs::write(&path, body).map_err(|e| Error::io(path, e))?;
            written.push(name);
            Ok(())
        };
        for c in &self.time_averages {
            let mut s = String::from("n,A\n");
            for (n, a) in &c.points {
                let _ = writeln!(s, "{n},{a}");
            }
            put(format!("timeavg_{}_{}.csv", c.functional, c.initial), s)?;
        }
        for cell in &self.cells {
            if let Some(kde) = &cell.kde {
                put(format!("kde_{}_{}.csv", cell.theta, cell.initial), kde.to_csv())?;
            }
        }
        if !self.cells.is_empty() {
            let mut s = String::from("cell_a,cell_b,ks\n");
            for d in &self.distances {
                let _ = writeln!(s, "{},{},{}", d.cell_a, d.cell_b, d.ks);
            }
            put("distances.csv".into(), s)?;
        }
        Ok(written)
    }
}

/// Minimum sample count for a density estimate in the experiments.
pub const MIN_KDE_SAMPLES: usize = 100;

/// For every `(theta, x0)` pair, simulates `paths` independent trajectories
/// of `n` steps and keeps the terminal values. Cell `c` (row-major over
/// configs then initial data) uses noise streams `c * paths + p`.
pub fn run_sode_experiment(
    problem: &SodeProblem,
    configs: &[StmConfig],
    initial_data: &[f64],
    n: usize,
    paths: usize,
    seed: u64,
) -> Result<ErgodicReport> {
    if problem.dim() != 1 {
        return Err(Error::UnsupportedDimension {
            dim: problem.dim(),
            what: "terminal-sample densities need a scalar state",
        });
    }
    if paths == 0 {
        return Err(Error::invalid("paths must be positive"));
    }
    let steppers = configs
        .iter()
        .map(|c| Stepper::new(problem.clone(), *c))
        .collect::<Result<Vec<_>>>()?;
    let m = problem.noise_dim();
    let mut report = ErgodicReport::default();
    for (ci, stepper) in steppers.iter().enumerate() {
        for (xi, &x0) in initial_data.iter().enumerate() {
            let cell_index = (ci * initial_data.len() + xi) as u64;
            let theta = stepper.config().theta;
            let label = format!("theta{theta}_x0{x0}");
            let terminal = (0..paths)
                .into_par_iter()
                .map_init(
                    || stepper.workspace(),
                    |ws, p| {
                        let mut noise = NoiseStream::new(seed, cell_index * paths as u64 + p as u64, m);
                        stepper.run_path(&[x0], n, &mut noise, ws, |_, _| {}).map(|x| x[0])
                    },
                )
                .collect::<Result<Vec<f64>>>()
                .map_err(|e| e.in_cell(label.clone()))?;
            let kde = if paths < MIN_KDE_SAMPLES {
                report.warnings.push(format!(
                    "{label}: {paths} terminal samples, density estimate skipped (needs {MIN_KDE_SAMPLES})"
                ));
                None
            } else {
                match empirical_density(&terminal, None) {
                    Ok(k) => Some(k),
                    Err(e) => {
                        report.warnings.push(format!("{label}: density estimate skipped: {e}"));
                        None
                    }
                }
            };
            report.cells.push(SampleCell {
                theta,
                initial: x0.to_string(),
                terminal,
                kde,
            });
        }
    }
    let cells = &report.cells;
    let mut distances = Vec::new();
    for a in 0..cells.len() {
        for b in a + 1..cells.len() {
            distances.push(CellDistance {
                cell_a: cells[a].id(),
                cell_b: cells[b].id(),
                ks: ks_distance(&cells[a].terminal, &cells[b].terminal)?,
            });
        }
    }
    report.distances = distances;
    Ok(report)
}

/// Initial data `0`, `sin(pi xi)` and `sum_{k <= 10} sin(k pi xi)` in `V_N`.
pub fn default_initial_fields(modes: usize) -> Vec<(String, SpectralField)> {
    vec![
        ("zero".into(), SpectralField::zeros(modes)),
        ("sin".into(), SpectralField::sine_sum(modes, [1])),
        ("sum_sin".into(), SpectralField::sine_sum(modes, 1..=modes.min(10))),
    ]
}

/// Running time averages of every functional from every initial field,
/// averaged over `paths` paths. Field `i` uses noise streams `i * paths + p`.
pub fn run_spde_experiment(
    stepper: &DiegStepper,
    initial_fields: &[(String, SpectralField)],
    n: usize,
    paths: usize,
    functionals: &[TestFunctional],
    seed: u64,
    burn_in: usize,
) -> Result<ErgodicReport> {
    if burn_in >= n {
        return Err(Error::invalid(format!("burn_in ({burn_in}) must be below n ({n})")));
    }
    let modes = stepper.space().modes();
    let len = n + 1;
    let mut report = ErgodicReport::default();
    for (fi, (name, x0)) in initial_fields.iter().enumerate() {
        let moments = path_moments(paths, functionals.len() * len, |p, out| {
            let mut noise = NoiseStream::new(seed, (fi * paths + p) as u64, modes);
            let mut ws = stepper.workspace();
            stepper.run_path(x0, n, &mut noise, &mut ws, |k, x| {
                for (j, f) in functionals.iter().enumerate() {
                    out[j * len + k] = f.eval(x);
                }
            })?;
            Ok(())
        })
        .map_err(|e| e.in_cell(name.clone()))?;
        for (j, f) in functionals.iter().enumerate() {
            let sums = &moments.sum[j * len..(j + 1) * len];
            if sums.iter().any(|s| !s.is_finite()) {
                return Err(Error::NonFinite {
                    what: "test functional along a path",
                    point: x0.coeffs.clone(),
                }
                .in_cell(name.clone()));
            }
            report.time_averages.push(TimeAverageCurve {
                functional: f.name.clone(),
                initial: name.clone(),
                points: running_average(sums, paths, burn_in)?,
            });
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::uniform_stream;
    use crate::spde::{allen_cahn_constants, power_spectrum, SpdeProblem, SpectralSpace};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn normals(count: usize, seed: u64) -> Vec<f64> {
        let mut s = NoiseStream::new(seed, 0, count);
        let mut out = vec![0.0; count];
        s.standard_normals(0, &mut out);
        out
    }

    #[test]
    fn constant_and_fixed_point_averages() {
        let paths = vec![vec![vec![1.0], vec![2.0], vec![3.0]]; 4];
        let c = time_average(&paths, &TestFunctional::new("c", |_| 2.5), 0).unwrap();
        assert!(c.iter().all(|p| p.1 == 2.5));
        let fixed = vec![vec![vec![0.7]; 5]];
        let a = time_average(&fixed, &TestFunctional::norm2(), 1).unwrap();
        assert_eq!(a.len(), 3);
        assert!(a.iter().all(|p| (p.1 - 0.49).abs() < 1e-15));
        assert!(time_average(&fixed, &TestFunctional::norm2(), 4).is_err());
    }

    #[test]
    fn kde_errors_and_normal_peak() {
        assert!(empirical_density(&[1.0; 200], None).is_err());
        let s = normals(100_000, 11);
        let kde = empirical_density(&s, None).unwrap();
        assert_eq!(kde.grid.len(), KDE_GRID);
        let i = kde
            .grid
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .unwrap()
            .0;
        // interpolate to 0
        let (x0, x1) = (kde.grid[i], kde.grid[i + 1]);
        let d0 = kde.density[i] + (0.0 - x0) / (x1 - x0) * (kde.density[i + 1] - kde.density[i]);
        assert!((d0 - 0.398_942).abs() < 0.02, "{d0}");
        assert_abs_diff_eq!(kde.mass(), 1.0, epsilon = 1e-3);
    }

    #[test]
    fn ks_basics() {
        let a = [0.1, 0.5, 0.9];
        assert_eq!(ks_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(ks_distance(&[-3.0, -1.0], &[1.0, 4.0, 5.0]).unwrap(), 1.0);
        assert_eq!(ks_distance(&[0.0, 0.0, 1.0], &[0.0, 1.0, 1.0]).unwrap(), 1.0 / 3.0);
        assert!(ks_distance(&[], &a).is_err());
        let d = ks_distance(&normals(10_000, 1), &normals(10_000, 2)).unwrap();
        assert!(d < 0.03, "{d}");
        assert!(ks_p_value(d, 10_000, 10_000) > 0.001);
        assert_abs_diff_eq!(ks_critical_value(10_000, 10_000, 0.01), 1.6276 * (2e-4f64).sqrt(), epsilon = 1e-4);
        assert!(ks_p_value(0.5, 1000, 1000) < 1e-10);
    }

    #[test]
    fn sode_experiment_small_and_deterministic() {
        let p = SodeProblem::example1();
        let configs = [StmConfig::new(1.0, 0.1).unwrap()];
        let r1 = run_sode_experiment(&p, &configs, &[-5.0, 5.0], 50, 200, 9).unwrap();
        let r2 = run_sode_experiment(&p, &configs, &[-5.0, 5.0], 50, 200, 9).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(r1.distances.len(), 1);
        assert!(r1.cells.iter().all(|c| c.kde.is_some()));
        let single = run_sode_experiment(&p, &configs, &[-5.0, 5.0], 10, 1, 9).unwrap();
        assert_eq!(single.warnings.len(), 2);
        assert!(single.cells.iter().all(|c| c.terminal.len() == 1 && c.kde.is_none()));
        let dir = tempfile::tempdir().unwrap();
        let files = r1.write_csv_dir(dir.path()).unwrap();
        assert_eq!(files, ["kde_1_-5.csv", "kde_1_5.csv", "distances.csv"]);
    }

    fn ac_stepper(q_scale: f64) -> DiegStepper {
        let q: Vec<f64> = power_spectrum(10, 2.0).iter().map(|q| q * q_scale).collect();
        let params = allen_cahn_constants(0.5, -1.0, &q).unwrap();
        DiegStepper::new(SpectralSpace::new(10).unwrap(), SpdeProblem::allen_cahn(&params), 0.1).unwrap()
    }

    #[test]
    fn spde_zero_field_without_noise_stays_zero() {
        let mut stepper = ac_stepper(1.0);
        let mut problem = stepper.problem().clone();
        problem.q_spectrum = vec![0.0; 10];
        stepper = DiegStepper::new(stepper.space().clone(), problem, 0.1).unwrap();
        let fields = vec![("zero".to_string(), SpectralField::zeros(10))];
        let r = run_spde_experiment(&stepper, &fields, 20, 3, &[TestFunctional::norm2()], 0, 0).unwrap();
        assert!(r.time_averages[0].points.iter().all(|p| p.1 == 0.0));
    }

    #[test]
    fn spde_experiment_writes_nine_curves() {
        let stepper = ac_stepper(1.0);
        let r = run_spde_experiment(
            &stepper,
            &default_initial_fields(10),
            30,
            8,
            &TestFunctional::standard_set(),
            4,
            0,
        )
        .unwrap();
        assert_eq!(r.time_averages.len(), 9);
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(r.write_csv_dir(dir.path()).unwrap().len(), 9);
        assert!(dir.path().join("timeavg_norm2_sum_sin.csv").exists());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn time_average_is_affine(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let mut u = uniform_stream(seed, 0);
            let paths: Vec<Vec<Vec<f64>>> = (0..4).map(|_| (0..20).map(|_| vec![u() * 4.0 - 2.0]).collect()).collect();
            let f = TestFunctional::norm2();
            let g = TestFunctional::sin_norm2();
            let h = TestFunctional::new("h", move |x| a * x[0] * x[0] + b * x[0].powi(2).sin());
            let (af, ag, ah) = (
                time_average(&paths, &f, 2).unwrap(),
                time_average(&paths, &g, 2).unwrap(),
                time_average(&paths, &h, 2).unwrap(),
            );
            for i in 0..ah.len() {
                prop_assert!((ah[i].1 - (a * af[i].1 + b * ag[i].1)).abs() <= 1e-12);
            }
        }

        #[test]
        fn ks_is_a_pseudometric(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            use rand::Rng;
            let mut draw = |n: usize| (0..n).map(|_| rng.random::<f64>()).collect::<Vec<_>>();
            let (x, y, z) = (draw(30), draw(45), draw(20));
            let dxy = ks_distance(&x, &y).unwrap();
            prop_assert_eq!(dxy, ks_distance(&y, &x).unwrap());
            let dxz = ks_distance(&x, &z).unwrap();
            let dzy = ks_distance(&z, &y).unwrap();
            prop_assert!(dxy <= dxz + dzy + 1e-15);
            prop_assert!((0.0..=1.0).contains(&dxy));
        }

        #[test]
        fn kde_location_equivariance(seed in 0u64..1000, c in -50.0f64..50.0) {
            let s = normals(200, seed);
            let shifted: Vec<f64> = s.iter().map(|x| x + c).collect();
            let k1 = empirical_density(&s, None).unwrap();
            let k2 = empirical_density(&shifted, None).unwrap();
            for i in 0..KDE_GRID {
                prop_assert!((k2.grid[i] - k1.grid[i] - c).abs() <= 1e-12 * (1.0 + c.abs()));
                prop_assert!((k2.density[i] - k1.density[i]).abs() <= 1e-12);
            }
        }
    }
}
