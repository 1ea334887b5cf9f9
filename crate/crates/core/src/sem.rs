//! Linear structural equation model with confounders and anti-causal
//! features, plus the four benchmark presets.
//!
//! Per environment `e` and draw:
//!
//! ```text
//! X1 ~ N(0, diag(sigma_x1^2)),  H ~ N(0, sigma_h^2 I),  eps ~ N(0, sigma_eps^2)
//! Y  = gamma' X1 + eta_e' H + eps
//! X2 = alpha_e Y + Theta_e H + zeta,   zeta ~ N(0, diag(sigma_zeta^2))
//! ```

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::population::confounder_closed_form;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvParams {
    pub alpha: Vec<f64>,
    /// q x s confounder loading.
    pub theta: Matrix,
    pub eta: Vec<f64>,
    pub sigma_eps: f64,
    pub sigma_zeta: Vec<f64>,
    pub sigma_h: f64,
    pub sigma_x1: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemConfig {
    pub p: usize,
    pub q: usize,
    pub s: usize,
    pub gamma: Vec<f64>,
    pub envs: Vec<EnvParams>,
}

impl SemConfig {
    pub fn dim(&self) -> usize {
        self.p + self.q
    }

    pub fn env(&self, index: usize) -> Result<&EnvParams> {
        self.envs.get(index).ok_or(Error::InvalidEnvIndex { index, count: self.envs.len() })
    }

    /// The ideal predictor `(gamma, 0_q)`.
    pub fn ideal(&self) -> Vec<f64> {
        let mut w = self.gamma.clone();
        w.resize(self.dim(), 0.0);
        w
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.p == 0 {
            return bad("p must be at least 1".into());
        }
        if self.gamma.len() != self.p {
            return bad(format!("gamma has {} entries, p={}", self.gamma.len(), self.p));
        }
        if self.envs.len() < 2 {
            return bad("at least two environments are required".into());
        }
        for (e, env) in self.envs.iter().enumerate() {
            if env.alpha.len() != self.q
                || env.sigma_zeta.len() != self.q
                || env.eta.len() != self.s
                || env.sigma_x1.len() != self.p
                || env.theta.rows() != self.q
                || env.theta.cols() != self.s
            {
                return bad(format!("environment {e} has inconsistent dimensions"));
            }
            if !(env.sigma_eps > 0.0) {
                return bad(format!("environment {e}: sigma_eps must be positive"));
            }
            if env.sigma_zeta.iter().any(|v| !(*v > 0.0)) {
                return bad(format!("environment {e}: noise in spurious features must have positive variance"));
            }
            if !(env.sigma_h >= 0.0) {
                return bad(format!("environment {e}: sigma_h must be non-negative"));
            }
            if env.sigma_x1.iter().any(|v| !(*v > 0.0)) {
                return bad(format!("environment {e}: causal features must have positive variance"));
            }
        }
        Ok(())
    }
}

/// Noise/confounding regime of a preset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Setting {
    #[serde(rename = "F-HOM")]
    FHom,
    #[serde(rename = "P-HOM")]
    PHom,
    #[serde(rename = "F-HET")]
    FHet,
    #[serde(rename = "P-HET")]
    PHet,
}

impl Setting {
    pub const ALL: [Setting; 4] = [Setting::FHom, Setting::PHom, Setting::FHet, Setting::PHet];

    /// Partially observed: confounders are present.
    pub fn confounded(self) -> bool {
        matches!(self, Setting::PHom | Setting::PHet)
    }

    pub fn heteroskedastic(self) -> bool {
        matches!(self, Setting::FHet | Setting::PHet)
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Setting::FHom => "F-HOM",
            Setting::PHom => "P-HOM",
            Setting::FHet => "F-HET",
            Setting::PHet => "P-HET",
        })
    }
}

impl FromStr for Setting {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('_', "-").as_str() {
            "F-HOM" => Ok(Setting::FHom),
            "P-HOM" => Ok(Setting::PHom),
            "F-HET" => Ok(Setting::FHet),
            "P-HET" => Ok(Setting::PHet),
            _ => Err(Error::InvalidParameter(format!("unknown setting '{s}' (expected F-HOM, P-HOM, F-HET or P-HET)"))),
        }
    }
}

/// Knobs for preset generation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PresetOptions {
    /// Draw alpha, Theta and eta once and reuse them in both environments.
    /// When false each environment gets an independent draw.
    pub shared_parameters: bool,
    pub sigma_x1: f64,
}

impl Default for PresetOptions {
    fn default() -> Self {
        Self { shared_parameters: true, sigma_x1: 1.0 }
    }
}

/// Random stream for `(seed, stream)`; streams never overlap.
pub(crate) fn rng_for(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normals(rng: &mut ChaCha20Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

const PARAM_STREAM: u64 = 1 << 32;

pub fn preset(setting: Setting, p: usize, q: usize, seed: u64) -> Result<SemConfig> {
    preset_with(setting, p, q, seed, &PresetOptions::default())
}

pub fn preset_with(setting: Setting, p: usize, q: usize, seed: u64, opts: &PresetOptions) -> Result<SemConfig> {
    if p == 0 || q == 0 {
        return Err(Error::InvalidParameter("presets need p >= 1 and q >= 1".into()));
    }
    let s = if setting.confounded() { q } else { 0 };
    let (sigma_eps, sigma_zeta) = if setting.heteroskedastic() { ([1.0, 1.0], [0.2, 2.0]) } else { ([0.2, 2.0], [1.0, 1.0]) };
    let sigma_h = [0.2, 2.0];

    let draw = |stream: u64| {
        let mut rng = rng_for(seed, PARAM_STREAM + stream);
        let alpha = normals(&mut rng, q);
        let theta = Matrix::new(q, s, normals(&mut rng, q * s)).expect("finite normals");
        let eta = normals(&mut rng, s);
        (alpha, theta, eta)
    };
    let shared = draw(0);

    let envs = (0..2)
        .map(|e| {
            let (alpha, theta, eta) = if opts.shared_parameters { shared.clone() } else { draw(e as u64 + 1) };
            EnvParams {
                alpha,
                theta,
                eta,
                sigma_eps: sigma_eps[e],
                sigma_zeta: vec![sigma_zeta[e]; q],
                sigma_h: sigma_h[e],
                sigma_x1: vec![opts.sigma_x1; p],
            }
        })
        .collect();
    let cfg = SemConfig { p, q, s, gamma: vec![1.0; p], envs };
    cfg.validate()?;
    Ok(cfg)
}

/// Samples drawn from one environment; columns are `X1` then `X2`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvSample {
    pub env_index: usize,
    pub x: Matrix,
    pub y: Vec<f64>,
}

impl EnvSample {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

pub fn sample_environment(cfg: &SemConfig, env: usize, n: usize, seed: u64) -> Result<EnvSample> {
    let params = cfg.env(env)?;
    if n == 0 {
        return Err(Error::EmptySample);
    }
    let (p, q, s) = (cfg.p, cfg.q, cfg.s);
    let mut rng = rng_for(seed, env as u64);
    let mut data = Vec::with_capacity(n * (p + q));
    let mut y = Vec::with_capacity(n);
    let mut h = vec![0.0; s];
    for _ in 0..n {
        let row_start = data.len();
        let mut yi = 0.0;
        for j in 0..p {
            let z: f64 = StandardNormal.sample(&mut rng);
            let x = params.sigma_x1[j] * z;
            yi += cfg.gamma[j] * x;
            data.push(x);
        }
        for (k, hk) in h.iter_mut().enumerate() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *hk = params.sigma_h * z;
            yi += params.eta[k] * *hk;
        }
        let z: f64 = StandardNormal.sample(&mut rng);
        yi += params.sigma_eps * z;
        for i in 0..q {
            let z: f64 = StandardNormal.sample(&mut rng);
            let conf: f64 = (0..s).map(|k| params.theta[(i, k)] * h[k]).sum();
            data.push(params.alpha[i] * yi + conf + params.sigma_zeta[i] * z);
        }
        debug_assert_eq!(data.len() - row_start, p + q);
        y.push(yi);
    }
    Ok(EnvSample { env_index: env, x: Matrix::new(n, p + q, data)?, y })
}

/// Confounder-only two-environment config together with the result of the
/// "spurious coefficients vary across environments" check.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfounderOnly {
    pub config: SemConfig,
    pub spurious_vary: bool,
}

/// Tolerance for deciding that two spurious coefficient vectors differ.
pub const VARY_TOL: f64 = 1e-9;

/// Builds a two-environment config with `alpha = 0`, a shared orthogonal
/// `theta`, unit causal weights and unit-variance confounders.
pub fn confounder_only_config(
    p: usize,
    theta: &Matrix,
    eta1: &[f64],
    eta2: &[f64],
    sigma_zeta1: &[f64],
    sigma_zeta2: &[f64],
) -> Result<ConfounderOnly> {
    let q = theta.rows();
    if !theta.is_square() {
        return Err(Error::DimensionMismatch(format!("theta must be square, got {}x{}", q, theta.cols())));
    }
    let tt = theta.matmul(&theta.transpose())?;
    let deviation = tt.sub(&Matrix::identity(q))?.max_abs();
    if deviation > 1e-8 {
        return Err(Error::NotOrthogonal { deviation });
    }
    let env = |eta: &[f64], sz: &[f64]| EnvParams {
        alpha: vec![0.0; q],
        theta: theta.clone(),
        eta: eta.to_vec(),
        sigma_eps: 1.0,
        sigma_zeta: sz.to_vec(),
        sigma_h: 1.0,
        sigma_x1: vec![1.0; p],
    };
    let config = SemConfig { p, q, s: q, gamma: vec![1.0; p], envs: vec![env(eta1, sigma_zeta1), env(eta2, sigma_zeta2)] };
    config.validate()?;
    let w1 = confounder_closed_form(&config, 0)?;
    let w2 = confounder_closed_form(&config, 1)?;
    let spurious_vary = w1.w_star[p..].iter().zip(&w2.w_star[p..]).any(|(a, b)| (a - b).abs() > VARY_TOL);
    Ok(ConfounderOnly { config, spurious_vary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::empirical_moments;

    #[test]
    fn f_preset_has_no_confounding() {
        let cfg = preset(Setting::FHom, 5, 5, 1).unwrap();
        for e in &cfg.envs {
            assert_eq!(e.theta.rows(), 5);
            assert!(e.theta.as_slice().iter().all(|v| *v == 0.0));
            assert!(e.eta.iter().all(|v| *v == 0.0));
        }
        assert_eq!(cfg.gamma, vec![1.0; 5]);
        assert_eq!(cfg.envs[0].sigma_eps, 0.2);
        assert_eq!(cfg.envs[1].sigma_eps, 2.0);
    }

    #[test]
    fn p_het_noise_levels() {
        let cfg = preset(Setting::PHet, 5, 5, 1).unwrap();
        assert_eq!(cfg.envs[0].sigma_zeta, vec![0.2; 5]);
        assert_eq!(cfg.envs[1].sigma_zeta, vec![2.0; 5]);
        assert_eq!(cfg.envs[0].sigma_eps, 1.0);
        assert_eq!(cfg.envs[1].sigma_eps, 1.0);
        assert_eq!(cfg.s, 5);
        assert_eq!((cfg.envs[0].sigma_h, cfg.envs[1].sigma_h), (0.2, 2.0));
    }

    #[test]
    fn preset_is_deterministic() {
        assert_eq!(preset(Setting::PHom, 3, 4, 11).unwrap(), preset(Setting::PHom, 3, 4, 11).unwrap());
        assert_ne!(preset(Setting::PHom, 3, 4, 11).unwrap(), preset(Setting::PHom, 3, 4, 12).unwrap());
    }

    #[test]
    fn independent_draws_differ_per_env() {
        let opts = PresetOptions { shared_parameters: false, ..Default::default() };
        let cfg = preset_with(Setting::PHom, 2, 3, 5, &opts).unwrap();
        assert_ne!(cfg.envs[0].alpha, cfg.envs[1].alpha);
        let shared = preset(Setting::PHom, 2, 3, 5).unwrap();
        assert_eq!(shared.envs[0].alpha, shared.envs[1].alpha);
    }

    #[test]
    fn setting_parse_roundtrip() {
        for s in Setting::ALL {
            assert_eq!(s.to_string().parse::<Setting>().unwrap(), s);
        }
        assert!("X-HOM".parse::<Setting>().is_err());
    }

    #[test]
    fn noiseless_label_is_sum_of_causal_features() {
        let mut cfg = preset(Setting::FHom, 3, 2, 4).unwrap();
        for e in &mut cfg.envs {
            e.sigma_eps = 1e-8;
            e.sigma_zeta = vec![1e-8; 2];
        }
        let s = sample_environment(&cfg, 0, 50, 8).unwrap();
        for i in 0..50 {
            let sum: f64 = s.x.row(i)[..3].iter().sum();
            assert!((s.y[i] - sum).abs() < 1e-6);
        }
    }

    #[test]
    fn sampling_is_deterministic_and_env_checked() {
        let cfg = preset(Setting::PHet, 2, 2, 4).unwrap();
        assert_eq!(sample_environment(&cfg, 1, 20, 3).unwrap(), sample_environment(&cfg, 1, 20, 3).unwrap());
        assert_ne!(sample_environment(&cfg, 0, 20, 3).unwrap().y, sample_environment(&cfg, 1, 20, 3).unwrap().y);
        assert!(matches!(sample_environment(&cfg, 2, 20, 3), Err(Error::InvalidEnvIndex { .. })));
    }

    #[test]
    fn independent_spurious_features_are_uncorrelated() {
        let mut cfg = preset(Setting::FHom, 2, 2, 4).unwrap();
        for e in &mut cfg.envs {
            e.alpha = vec![0.0; 2];
        }
        let s = sample_environment(&cfg, 0, 100_000, 1).unwrap();
        let (_, rho, _) = empirical_moments(&s.x, &s.y).unwrap();
        assert!(rho[2].abs() < 0.05 && rho[3].abs() < 0.05, "{rho:?}");
    }

    #[test]
    fn confounder_only_flag() {
        let id = Matrix::identity(2);
        let c = confounder_only_config(1, &id, &[1.0, -0.5], &[-1.0, 0.5], &[1.0; 2], &[1.0; 2]).unwrap();
        assert!(c.spurious_vary);
        let c = confounder_only_config(1, &id, &[1.0, 0.5], &[1.0, 0.5], &[1.0; 2], &[1.0; 2]).unwrap();
        assert!(!c.spurious_vary);
        // (I + diag(s^2))^-1 eta: (1/2, 1) versus (1/5, 2/5)
        let c = confounder_only_config(1, &id, &[1.0, 2.0], &[1.0, 2.0], &[1.0; 2], &[2.0; 2]).unwrap();
        assert!(c.spurious_vary);
        let skew = Matrix::from_rows(&[vec![1.0, 0.5], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(
            confounder_only_config(1, &skew, &[1.0, 2.0], &[1.0, 2.0], &[1.0; 2], &[2.0; 2]),
            Err(Error::NotOrthogonal { .. })
        ));
    }
}
