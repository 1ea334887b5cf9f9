//! Per-environment least squares, the confounder-only closed form and ERM.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{self, dot, solve_spd, Matrix};
use crate::sem::{EnvSample, SemConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentSource {
    Analytic,
    Empirical { n: usize },
}

/// Second moment `sigma`, label cross moment `rho` and mean `mu` of one
/// environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentMoments {
    pub sigma: Matrix,
    pub rho: Vec<f64>,
    pub mu: Vec<f64>,
    pub source: MomentSource,
}

impl EnvironmentMoments {
    pub fn new(sigma: Matrix, rho: Vec<f64>) -> Result<Self> {
        let d = rho.len();
        if sigma.rows() != d || sigma.cols() != d {
            return Err(Error::DimensionMismatch(format!("sigma is {}x{}, rho has {d} entries", sigma.rows(), sigma.cols())));
        }
        if !sigma.is_symmetric(numerics::SYMMETRY_TOL) {
            return Err(Error::InvalidParameter("sigma must be symmetric".into()));
        }
        Ok(Self { sigma, rho, mu: vec![0.0; d], source: MomentSource::Analytic })
    }

    pub fn from_sample(sample: &EnvSample) -> Result<Self> {
        let (sigma, rho, mu) = numerics::empirical_moments(&sample.x, &sample.y)?;
        Ok(Self { sigma, rho, mu, source: MomentSource::Empirical { n: sample.len() } })
    }

    pub fn dim(&self) -> usize {
        self.rho.len()
    }

    /// Squared-loss risk of predictor `w` up to the additive `E[Y^2]` term.
    pub fn risk(&self, w: &[f64]) -> f64 {
        let sw = self.sigma.matvec(w).expect("dimension checked by caller");
        dot(w, &sw) - 2.0 * dot(&self.rho, w)
    }

    /// Gradient of [`risk`](Self::risk) at `w`.
    pub fn risk_gradient(&self, w: &[f64]) -> Vec<f64> {
        let sw = self.sigma.matvec(w).expect("dimension checked by caller");
        sw.iter().zip(&self.rho).map(|(s, r)| 2.0 * (s - r)).collect()
    }
}

/// Least-squares coefficients; the first `split` entries are the causal block
/// when the moments come from a SEM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeastSquaresSolution {
    pub w_star: Vec<f64>,
    pub split: usize,
}

impl LeastSquaresSolution {
    pub fn invariant(&self) -> &[f64] {
        &self.w_star[..self.split]
    }

    pub fn variant(&self) -> &[f64] {
        &self.w_star[self.split..]
    }
}

pub fn least_squares(m: &EnvironmentMoments) -> Result<LeastSquaresSolution> {
    Ok(LeastSquaresSolution { w_star: solve_spd(&m.sigma, &m.rho)?, split: m.dim() })
}

/// Same as [`least_squares`] but records the causal/spurious split point.
pub fn least_squares_split(m: &EnvironmentMoments, split: usize) -> Result<LeastSquaresSolution> {
    if split > m.dim() {
        return Err(Error::InvalidParameter(format!("split {split} exceeds dimension {}", m.dim())));
    }
    let mut s = least_squares(m)?;
    s.split = split;
    Ok(s)
}

fn check_no_anticausal(cfg: &SemConfig, env: usize) -> Result<()> {
    if cfg.env(env)?.alpha.iter().any(|a| *a != 0.0) {
        return Err(Error::AntiCausalPresent { env: env + 1 });
    }
    Ok(())
}

/// Spurious-block covariance `sigma_h^2 Theta Theta' + diag(sigma_zeta^2)`
/// and cross moment `sigma_h^2 Theta eta` for an environment with `alpha = 0`.
fn spurious_block(cfg: &SemConfig, env: usize) -> Result<(Matrix, Vec<f64>)> {
    let e = cfg.env(env)?;
    let h2 = e.sigma_h * e.sigma_h;
    let tt = e.theta.matmul(&e.theta.transpose())?.scale(h2);
    let zeta = Matrix::from_diag(&e.sigma_zeta.iter().map(|s| s * s).collect::<Vec<_>>());
    let sigma = tt.add(&zeta)?;
    let rho = numerics::scale(&e.theta.matvec(&e.eta)?, h2);
    Ok((sigma, rho))
}

/// Closed-form least-squares solution `(gamma, (h2 TT' + diag s^2)^-1 h2 T eta)`
/// of a confounder-only environment (`h2` is the confounder variance).
pub fn confounder_closed_form(cfg: &SemConfig, env: usize) -> Result<LeastSquaresSolution> {
    check_no_anticausal(cfg, env)?;
    let (sigma, rho) = spurious_block(cfg, env)?;
    let var = if cfg.q == 0 { Vec::new() } else { solve_spd(&sigma, &rho)? };
    let mut w_star = cfg.gamma.clone();
    w_star.extend(var);
    Ok(LeastSquaresSolution { w_star, split: cfg.p })
}

/// Population moments of an environment with no anti-causal weights.
pub fn analytic_moments(cfg: &SemConfig, env: usize) -> Result<EnvironmentMoments> {
    check_no_anticausal(cfg, env)?;
    let e = cfg.env(env)?;
    let (p, d) = (cfg.p, cfg.dim());
    let var_x1: Vec<f64> = e.sigma_x1.iter().map(|s| s * s).collect();
    let (block, rho2) = spurious_block(cfg, env)?;
    let mut sigma = Matrix::zeros(d, d);
    sigma.set_block(0, 0, &Matrix::from_diag(&var_x1));
    sigma.set_block(p, p, &block);
    let mut rho: Vec<f64> = var_x1.iter().zip(&cfg.gamma).map(|(v, g)| v * g).collect();
    rho.extend(rho2);
    Ok(EnvironmentMoments { sigma, rho, mu: vec![0.0; d], source: MomentSource::Analytic })
}

/// Population moments of any environment, including anti-causal weights.
///
/// With `v = Var(Y)` and `c = sigma_h^2 Theta eta`:
/// `Sigma_12 = (s1^2 * gamma) alpha'`,
/// `Sigma_22 = v alpha alpha' + alpha c' + c alpha' + sigma_h^2 Theta Theta' + diag(sigma_zeta^2)`,
/// `rho = (s1^2 * gamma, v alpha + c)`.
pub fn population_moments(cfg: &SemConfig, env: usize) -> Result<EnvironmentMoments> {
    let e = cfg.env(env)?;
    let (p, q, d) = (cfg.p, cfg.q, cfg.dim());
    let h2 = e.sigma_h * e.sigma_h;
    let rho1: Vec<f64> = e.sigma_x1.iter().zip(&cfg.gamma).map(|(s, g)| s * s * g).collect();
    let var_y = dot(&rho1, &cfg.gamma) + h2 * dot(&e.eta, &e.eta) + e.sigma_eps * e.sigma_eps;
    let (block, c) = spurious_block(cfg, env)?;
    let mut sigma = Matrix::zeros(d, d);
    for j in 0..p {
        sigma[(j, j)] = e.sigma_x1[j] * e.sigma_x1[j];
        for i in 0..q {
            sigma[(j, p + i)] = rho1[j] * e.alpha[i];
            sigma[(p + i, j)] = rho1[j] * e.alpha[i];
        }
    }
    for i in 0..q {
        for k in 0..q {
            let a = &e.alpha;
            sigma[(p + i, p + k)] = block[(i, k)] + var_y * a[i] * a[k] + a[i] * c[k] + c[i] * a[k];
        }
    }
    let mut rho = rho1;
    rho.extend((0..q).map(|i| var_y * e.alpha[i] + c[i]));
    Ok(EnvironmentMoments { sigma, rho, mu: vec![0.0; d], source: MomentSource::Analytic })
}

/// Minimizer of the `pi1`-weighted mixture of the two environment risks.
pub fn erm_solution(m1: &EnvironmentMoments, m2: &EnvironmentMoments, pi1: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&pi1) {
        return Err(Error::InvalidParameter(format!("mixture weight {pi1} outside [0, 1]")));
    }
    if m1.dim() != m2.dim() {
        return Err(Error::DimensionMismatch(format!("environments have dims {} and {}", m1.dim(), m2.dim())));
    }
    let sigma = m1.sigma.scale(pi1).add(&m2.sigma.scale(1.0 - pi1))?;
    let rho = numerics::add(&numerics::scale(&m1.rho, pi1), &numerics::scale(&m2.rho, 1.0 - pi1));
    solve_spd(&sigma, &rho)
}

/// Ordinary least squares on all samples pooled together.
pub fn pooled_empirical_erm(samples: &[EnvSample]) -> Result<Vec<f64>> {
    let first = samples.first().ok_or(Error::EmptySample)?;
    let d = first.x.cols();
    let mut sigma = Matrix::zeros(d, d);
    let mut rho = vec![0.0; d];
    let mut total = 0usize;
    for s in samples {
        if s.x.cols() != d {
            return Err(Error::DimensionMismatch("samples have different feature counts".into()));
        }
        if s.is_empty() {
            continue;
        }
        let m = EnvironmentMoments::from_sample(s)?;
        let n = s.len() as f64;
        sigma = sigma.add(&m.sigma.scale(n))?;
        rho = numerics::add(&rho, &numerics::scale(&m.rho, n));
        total += s.len();
    }
    if total == 0 {
        return Err(Error::EmptySample);
    }
    let inv = 1.0 / total as f64;
    solve_spd(&sigma.scale(inv), &numerics::scale(&rho, inv))
}
