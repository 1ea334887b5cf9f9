//! Out-of-distribution estimation benchmarks: the 2-D anti-causal comparison
//! and the sample-size sweep over the four preset settings.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{exact_brd, sgd_brd, DynamicsParams, Penalty};
use crate::error::{Error, Result};
use crate::population::{pooled_empirical_erm, EnvironmentMoments};
use crate::sem::{preset_with, sample_environment, EnvSample, PresetOptions, Setting};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Method {
    ClrgSgd,
    ClrgExact,
    Ulrg,
    RinfLrg,
    R2Lrg,
    Erm,
    Oracle,
}

impl Method {
    pub const ALL: [Method; 7] =
        [Method::ClrgSgd, Method::ClrgExact, Method::Ulrg, Method::RinfLrg, Method::R2Lrg, Method::Erm, Method::Oracle];

    pub fn name(self) -> &'static str {
        match self {
            Method::ClrgSgd => "CLRG_SGD",
            Method::ClrgExact => "CLRG_EXACT",
            Method::Ulrg => "ULRG",
            Method::RinfLrg => "RINF_LRG",
            Method::R2Lrg => "R2_LRG",
            Method::Erm => "ERM",
            Method::Oracle => "ORACLE",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        Method::ALL
            .into_iter()
            .find(|m| m.name() == norm)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown method '{s}'")))
    }
}

/// `||w - (1_p, 0_q)||^2`.
pub fn estimation_error(w: &[f64], p: usize, q: usize) -> Result<f64> {
    if w.len() != p + q {
        return Err(Error::DimensionMismatch(format!("model has {} coefficients, expected {}", w.len(), p + q)));
    }
    Ok(w.iter().enumerate().map(|(i, v)| if i < p { (v - 1.0).powi(2) } else { v * v }).sum())
}

/// Fits one method on the given environments. Gradient-based methods use
/// `params`; the unconstrained and penalized games ignore `params.w_sup`.
pub fn fit_method(method: Method, samples: &[EnvSample], params: &DynamicsParams, p: usize) -> Result<Vec<f64>> {
    let d = samples.first().ok_or(Error::EmptySample)?.x.cols();
    let unconstrained = |penalty| DynamicsParams { w_sup: f64::INFINITY, penalty, ..params.clone() };
    match method {
        Method::ClrgSgd => Ok(sgd_brd(samples, &DynamicsParams { penalty: Penalty::None, ..params.clone() })?.final_ensemble()),
        Method::ClrgExact => {
            if samples.len() != 2 {
                return Err(Error::InvalidParameter("exact best responses are implemented for two environments".into()));
            }
            let m1 = EnvironmentMoments::from_sample(&samples[0])?;
            let m2 = EnvironmentMoments::from_sample(&samples[1])?;
            Ok(exact_brd(&m1, &m2, params)?.final_ensemble())
        }
        Method::Ulrg => Ok(sgd_brd(samples, &unconstrained(Penalty::None))?.final_ensemble()),
        Method::RinfLrg => Ok(sgd_brd(samples, &unconstrained(Penalty::Linf))?.final_ensemble()),
        Method::R2Lrg => Ok(sgd_brd(samples, &unconstrained(Penalty::L2))?.final_ensemble()),
        Method::Erm => pooled_empirical_erm(samples),
        Method::Oracle => {
            let mut w = vec![1.0; p.min(d)];
            w.resize(d, 0.0);
            Ok(w)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSpec {
    pub setting: Setting,
    pub p: usize,
    pub q: usize,
    /// Samples per environment.
    pub sample_sizes: Vec<usize>,
    pub trials: usize,
    pub methods: Vec<Method>,
    pub seed: u64,
    pub dynamics: DynamicsParams,
    pub preset: PresetOptions,
    /// Reuse one SEM instance for every trial instead of redrawing it.
    pub fixed_instance: bool,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            setting: Setting::FHom,
            p: 5,
            q: 5,
            sample_sizes: vec![20, 100, 250, 500, 750, 1000],
            trials: 10,
            methods: vec![Method::ClrgSgd, Method::Erm],
            seed: 0,
            dynamics: DynamicsParams::default(),
            preset: PresetOptions::default(),
            fixed_instance: false,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidParameter("trials must be at least 1".into()));
        }
        if self.sample_sizes.is_empty() || self.sample_sizes.contains(&0) {
            return Err(Error::InvalidParameter("sample sizes must be non-empty and positive".into()));
        }
        if self.sample_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter("sample sizes must be strictly ascending".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidParameter("no methods selected".into()));
        }
        if self.p == 0 || self.q == 0 {
            return Err(Error::InvalidParameter("p and q must be at least 1".into()));
        }
        self.dynamics.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub method: Method,
    pub n: usize,
    pub mean_error: f64,
    pub stderr: f64,
    /// Errors of the successful trials, in trial order.
    pub errors: Vec<f64>,
    /// `(trial, message)` for trials where fitting failed.
    pub failures: Vec<(usize, String)>,
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub setting: Setting,
    pub p: usize,
    pub q: usize,
    pub cells: Vec<CellReport>,
}

impl ExperimentReport {
    pub fn cell(&self, method: Method, n: usize) -> Option<&CellReport> {
        self.cells.iter().find(|c| c.method == method && c.n == n)
    }

    /// CSV with columns `setting,method,n,mean_error,stderr,trials`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("setting,method,n,mean_error,stderr,trials\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{:.17e},{:.17e},{}\n",
                self.setting,
                c.method,
                c.n,
                c.mean_error,
                c.stderr,
                c.errors.len()
            ));
        }
        out
    }
}

/// Sample mean and standard error (sample std / sqrt(count)).
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// SplitMix64 finalizer, used to derive independent per-cell seeds.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        let mut z = h ^ p.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

/// Draws both environments of a two-environment config.
pub fn sample_pair(cfg: &crate::sem::SemConfig, n: usize, seed: u64) -> Result<Vec<EnvSample>> {
    (0..cfg.envs.len()).map(|e| sample_environment(cfg, e, n, seed)).collect()
}

struct CellResult {
    trial: usize,
    n: usize,
    outcomes: Vec<(Method, Result<f64>, f64)>,
}

fn run_cell(spec: &ExperimentSpec, trial: usize, n: usize) -> CellResult {
    let cfg_seed = if spec.fixed_instance { mix_seed(&[spec.seed]) } else { mix_seed(&[spec.seed, trial as u64]) };
    let sample_seed = mix_seed(&[spec.seed, trial as u64, n as u64]);
    let prepared = preset_with(spec.setting, spec.p, spec.q, cfg_seed, &spec.preset)
        .and_then(|cfg| sample_pair(&cfg, n, sample_seed));
    let params = DynamicsParams { seed: mix_seed(&[sample_seed, 1]), ..spec.dynamics.clone() };
    let outcomes = spec
        .methods
        .iter()
        .map(|&m| {
            let start = Instant::now();
            let err = prepared
                .as_ref()
                .map_err(Clone::clone)
                .and_then(|s| fit_method(m, s, &params, spec.p))
                .and_then(|w| {
                    if w.iter().all(|v| v.is_finite()) {
                        estimation_error(&w, spec.p, spec.q)
                    } else {
                        Err(Error::InvalidParameter("fitted model is not finite".into()))
                    }
                });
            (m, err, start.elapsed().as_secs_f64())
        })
        .collect();
    CellResult { trial, n, outcomes }
}

/// Size of the benchmark worker pool: `CLRG_THREADS` if set, otherwise the
/// available parallelism.
pub fn thread_count() -> usize {
    std::env::var("CLRG_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|n| *n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    let cells: Vec<(usize, usize)> =
        (0..spec.trials).flat_map(|t| spec.sample_sizes.iter().map(move |&n| (t, n))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count())
        .build()
        .map_err(|e| Error::InvalidParameter(format!("cannot start worker pool: {e}")))?;
    let results: Vec<CellResult> = pool.install(|| cells.par_iter().map(|&(t, n)| run_cell(spec, t, n)).collect());

    let mut out = Vec::new();
    for &n in &spec.sample_sizes {
        for &method in &spec.methods {
            let mut errors = Vec::new();
            let mut failures = Vec::new();
            let mut wall = 0.0;
            for r in results.iter().filter(|r| r.n == n) {
                for (m, res, secs) in &r.outcomes {
                    if *m != method {
                        continue;
                    }
                    wall += secs;
                    match res {
                        Ok(e) => errors.push(*e),
                        Err(e) => failures.push((r.trial, e.to_string())),
                    }
                }
            }
            let (mean_error, stderr) = mean_stderr(&errors);
            out.push(CellReport { method, n, mean_error, stderr, errors, failures, wall_time_secs: wall });
        }
    }
    Ok(ExperimentReport { setting: spec.setting, p: spec.p, q: spec.q, cells: out })
}

/// One row of the 2-D comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanarRow {
    pub label: String,
    pub model: Vec<f64>,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanarReport {
    pub seed: u64,
    pub n: usize,
    pub rows: Vec<PlanarRow>,
}

impl PlanarReport {
    pub fn row(&self, label: &str) -> Option<&PlanarRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{:<22} {:>22} {:>10}\n", "method", "model", "error");
        for r in &self.rows {
            let model = r.model.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(", ");
            s.push_str(&format!("{:<22} {:>22} {:>10.4}\n", r.label, format!("({model})"), r.error));
        }
        s
    }
}

pub const PLANAR_N: usize = 1000;

/// The 2-D (p = q = 1) anti-causal F-HOM comparison with `PLANAR_N`
/// samples per environment.
pub fn planar_comparison(seed: u64) -> Result<PlanarReport> {
    planar_comparison_with(seed, PLANAR_N, &DynamicsParams::default())
}

pub fn planar_comparison_with(seed: u64, n: usize, params: &DynamicsParams) -> Result<PlanarReport> {
    let cfg = preset_with(Setting::FHom, 1, 1, mix_seed(&[seed]), &PresetOptions::default())?;
    let samples = sample_pair(&cfg, n, mix_seed(&[seed, n as u64]))?;
    let params = DynamicsParams { seed: mix_seed(&[seed, 1]), ..params.clone() };
    let runs: [(&str, Method, f64); 8] = [
        ("C-LRG (w_sup=2)", Method::ClrgSgd, 2.0),
        ("C-LRG (w_sup=5)", Method::ClrgSgd, 5.0),
        ("C-LRG exact (w_sup=2)", Method::ClrgExact, 2.0),
        ("U-LRG", Method::Ulrg, f64::INFINITY),
        ("R-inf-LRG", Method::RinfLrg, f64::INFINITY),
        ("R2-LRG", Method::R2Lrg, f64::INFINITY),
        ("ERM", Method::Erm, f64::INFINITY),
        ("Oracle", Method::Oracle, f64::INFINITY),
    ];
    let rows = runs
        .par_iter()
        .map(|&(label, method, w_sup)| {
            let p = DynamicsParams { w_sup, ..params.clone() };
            let model = fit_method(method, &samples, &p, 1)?;
            let error = estimation_error(&model, 1, 1)?;
            Ok(PlanarRow { label: label.to_string(), model, error })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PlanarReport { seed, n, rows })
}

/// Published mean errors for the 10-D sweep, `(method, n, mean, std)`, kept
/// for side-by-side plots. These are literature values, not computed here.
pub fn literature_values(setting: Setting) -> &'static [(&'static str, usize, f64, f64)] {
    match setting {
        Setting::FHet => &[
            ("IRM", 20, 2.72, 0.53), ("ICP", 20, 4.85, 0.10), ("ERM", 20, 2.82, 0.49), ("C-LRG", 20, 7.96, 0.67),
            ("IRM", 100, 0.96, 0.17), ("ICP", 100, 3.46, 0.37), ("ERM", 100, 1.16, 0.06), ("C-LRG", 100, 7.98, 0.59),
            ("IRM", 250, 0.59, 0.10), ("ICP", 250, 0.42, 0.21), ("ERM", 250, 1.12, 0.05), ("C-LRG", 250, 1.11, 0.05),
            ("IRM", 500, 0.90, 0.09), ("ICP", 500, 0.01, 0.001), ("ERM", 500, 1.17, 0.03), ("C-LRG", 500, 0.65, 0.04),
            ("IRM", 750, 0.54, 0.10), ("ICP", 750, 0.005, 0.0001), ("ERM", 750, 1.09, 0.03), ("C-LRG", 750, 0.42, 0.02),
            ("IRM", 1000, 0.51, 0.11), ("ICP", 1000, 0.002, 0.0003), ("ERM", 1000, 1.12, 0.03), ("C-LRG", 1000, 0.43, 0.02),
        ],
        Setting::PHet => &[
            ("IRM", 20, 2.48, 0.34), ("ICP", 20, 5.00, 0.00), ("ERM", 20, 3.59, 0.51), ("C-LRG", 20, 9.31, 0.87),
            ("IRM", 100, 1.28, 0.20), ("ICP", 100, 3.49, 0.56), ("ERM", 100, 1.37, 0.10), ("C-LRG", 100, 9.86, 1.08),
            ("IRM", 250, 0.95, 0.16), ("ICP", 250, 2.33, 0.69), ("ERM", 250, 1.22, 0.07), ("C-LRG", 250, 1.23, 0.08),
            ("IRM", 500, 1.01, 0.11), ("ICP", 500, 3.01, 0.77), ("ERM", 500, 1.33, 0.09), ("C-LRG", 500, 0.89, 0.09),
            ("IRM", 750, 0.85, 0.15), ("ICP", 750, 2.01, 0.77), ("ERM", 750, 1.18, 0.05), ("C-LRG", 750, 0.53, 0.04),
            ("IRM", 1000, 0.88, 0.14), ("ICP", 1000, 2.50, 0.79), ("ERM", 1000, 1.19, 0.05), ("C-LRG", 1000, 0.55, 0.03),
        ],
        Setting::FHom => &[
            ("IRM", 20, 3.89, 0.50), ("ICP", 20, 5.02, 0.02), ("ERM", 20, 4.82, 0.57), ("C-LRG", 20, 6.14, 0.66),
            ("IRM", 100, 3.06, 0.12), ("ICP", 100, 7.91, 0.46), ("ERM", 100, 4.35, 0.12), ("C-LRG", 100, 4.22, 0.55),
            ("IRM", 250, 2.83, 0.06), ("ICP", 250, 7.95, 0.47), ("ERM", 250, 4.29, 0.12), ("C-LRG", 250, 3.52, 0.24),
            ("IRM", 500, 3.21, 0.09), ("ICP", 500, 6.50, 0.58), ("ERM", 500, 4.45, 0.05), ("C-LRG", 500, 0.38, 0.05),
            ("IRM", 750, 2.99, 0.04), ("ICP", 750, 5.00, 0.00), ("ERM", 750, 4.47, 0.04), ("C-LRG", 750, 0.05, 0.008),
            ("IRM", 1000, 3.04, 0.06), ("ICP", 1000, 5.00, 0.00), ("ERM", 1000, 4.51, 0.07), ("C-LRG", 1000, 0.03, 0.003),
        ],
        Setting::PHom => &[
            ("IRM", 20, 4.03, 0.41), ("ICP", 20, 5.38, 0.14), ("ERM", 20, 4.57, 0.69), ("C-LRG", 20, 8.03, 0.56),
            ("IRM", 100, 3.39, 0.32), ("ICP", 100, 6.55, 0.52), ("ERM", 100, 4.25, 0.17), ("C-LRG", 100, 6.24, 0.77),
            ("IRM", 250, 2.95, 0.09), ("ICP", 250, 5.00, 0.00), ("ERM", 250, 4.10, 0.18), ("C-LRG", 250, 3.27, 0.26),
            ("IRM", 500, 3.02, 0.09), ("ICP", 500, 5.00, 0.00), ("ERM", 500, 4.54, 0.13), ("C-LRG", 500, 0.56, 0.09),
            ("IRM", 750, 2.81, 0.10), ("ICP", 750, 5.00, 0.00), ("ERM", 750, 4.39, 0.09), ("C-LRG", 750, 0.08, 0.009),
            ("IRM", 1000, 2.88, 0.06), ("ICP", 1000, 5.00, 0.00), ("ERM", 1000, 4.35, 0.12), ("C-LRG", 1000, 0.05, 0.009),
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_examples() {
        assert_eq!(estimation_error(&[1.0, 1.0, 0.0], 2, 1).unwrap(), 0.0);
        assert_eq!(estimation_error(&[0.0; 5], 3, 2).unwrap(), 3.0);
        assert!((estimation_error(&[0.95, 0.05], 1, 1).unwrap() - 0.005).abs() < 1e-15);
        assert!(estimation_error(&[1.0], 1, 1).is_err());
    }

    #[test]
    fn mean_and_stderr() {
        let (m, s) = mean_stderr(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        let sd = (5.0f64 / 3.0).sqrt();
        assert!((s - sd / 2.0).abs() < 1e-15);
        assert_eq!(mean_stderr(&[7.0]), (7.0, 0.0));
    }

    #[test]
    fn method_names_roundtrip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert_eq!("clrg-sgd".parse::<Method>().unwrap(), Method::ClrgSgd);
        assert!("IRM".parse::<Method>().is_err());
    }

    #[test]
    fn oracle_single_trial_is_exact() {
        let spec = ExperimentSpec { trials: 1, sample_sizes: vec![50], methods: vec![Method::Oracle], ..Default::default() };
        let rep = run_experiment(&spec).unwrap();
        assert_eq!(rep.cells[0].errors, vec![0.0]);
        assert_eq!(rep.cells[0].stderr, 0.0);
    }

    #[test]
    fn spec_validation() {
        let bad = ExperimentSpec { sample_sizes: vec![100, 50], ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = ExperimentSpec { trials: 0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn seeds_are_order_sensitive() {
        assert_ne!(mix_seed(&[1, 2]), mix_seed(&[2, 1]));
        assert_eq!(mix_seed(&[1, 2]), mix_seed(&[1, 2]));
    }
}
