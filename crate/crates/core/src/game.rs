//! Closed-form Nash equilibria of the constrained regression game, the
//! unconstrained existence test, dominance over ERM and the variational
//! stability diagnostic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{self, check_same_len, min_eigenvalue, norm2, Matrix};
use crate::population::{analytic_moments, confounder_closed_form, erm_solution, EnvironmentMoments};
use crate::sem::{SemConfig, VARY_TOL};

pub const DEFAULT_TOL: f64 = 1e-9;
/// Strategies within this distance of `±w_sup` are reported as on the boundary.
pub const BOUNDARY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GameConfig {
    pub w_sup: f64,
    pub tolerance: f64,
}

impl GameConfig {
    pub fn new(w_sup: f64) -> Result<Self> {
        let cfg = Self { w_sup, tolerance: DEFAULT_TOL };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.w_sup > 0.0 && self.w_sup.is_finite()) {
            return Err(Error::InvalidParameter(format!("w_sup must be positive and finite, got {}", self.w_sup)));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::InvalidParameter("tolerance must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryStatus {
    Upper,
    Lower,
    Interior,
}

impl BoundaryStatus {
    pub fn of(value: f64, w_sup: f64) -> Self {
        if (value - w_sup).abs() <= BOUNDARY_TOL {
            BoundaryStatus::Upper
        } else if (value + w_sup).abs() <= BOUNDARY_TOL {
            BoundaryStatus::Lower
        } else {
            BoundaryStatus::Interior
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameSolution {
    /// One strategy per environment.
    pub strategies: Vec<Vec<f64>>,
    pub ensemble: Vec<f64>,
    /// `boundary_flags[e][i]` describes component `i` of environment `e`.
    pub boundary_flags: Vec<Vec<BoundaryStatus>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexSplit {
    /// Components whose least-squares coefficients agree across environments.
    pub u_set: Vec<usize>,
    /// Components whose coefficients differ.
    pub v_set: Vec<usize>,
}

pub fn index_split(w1: &[f64], w2: &[f64], tol: f64) -> Result<IndexSplit> {
    check_same_len(w1, w2)?;
    let (u_set, v_set) = (0..w1.len()).partition(|&i| (w1[i] - w2[i]).abs() <= tol);
    Ok(IndexSplit { u_set, v_set })
}

fn sign_tol(x: f64, tol: f64) -> f64 {
    if x.abs() <= tol {
        0.0
    } else {
        x.signum()
    }
}

/// Two-environment equilibrium rule for one component: zero on strictly
/// opposite signs, otherwise the smaller magnitude (ties keep `a`).
fn pair_rule(a: f64, b: f64, tol: f64) -> f64 {
    if sign_tol(a, tol) * sign_tol(b, tol) < 0.0 {
        0.0
    } else if b.abs() >= a.abs() {
        a
    } else {
        b
    }
}

/// Ensemble predictor at the Nash equilibrium of the two-environment game.
pub fn nash_ensemble(w1: &[f64], w2: &[f64]) -> Result<Vec<f64>> {
    nash_ensemble_tol(w1, w2, DEFAULT_TOL)
}

pub fn nash_ensemble_tol(w1: &[f64], w2: &[f64], tol: f64) -> Result<Vec<f64>> {
    check_same_len(w1, w2)?;
    Ok(w1.iter().zip(w2).map(|(a, b)| pair_rule(*a, *b, tol)).collect())
}

pub(crate) fn check_realizable(env: usize, w: &[f64], w_sup: f64) -> Result<()> {
    match w.iter().position(|v| v.abs() > w_sup) {
        Some(index) => Err(Error::RealizabilityViolated { env: env + 1, index: index + 1, value: w[index], w_sup }),
        None => Ok(()),
    }
}

fn solution_from(strategies: Vec<Vec<f64>>, w_sup: f64) -> GameSolution {
    let d = strategies[0].len();
    let ensemble = (0..d).map(|i| strategies.iter().map(|s| s[i]).sum()).collect();
    let boundary_flags =
        strategies.iter().map(|s| s.iter().map(|v| BoundaryStatus::of(*v, w_sup)).collect()).collect();
    GameSolution { strategies, ensemble, boundary_flags }
}

/// Equilibrium strategies of both environments. Components where the two
/// least-squares coefficients agree are split evenly; any split summing to
/// the common value is also an equilibrium.
pub fn nash_strategies(w1: &[f64], w2: &[f64], cfg: &GameConfig) -> Result<GameSolution> {
    check_same_len(w1, w2)?;
    cfg.validate()?;
    check_realizable(0, w1, cfg.w_sup)?;
    check_realizable(1, w2, cfg.w_sup)?;
    let (w_sup, tol) = (cfg.w_sup, cfg.tolerance);
    let mut s1 = Vec::with_capacity(w1.len());
    let mut s2 = Vec::with_capacity(w1.len());
    for (&a, &b) in w1.iter().zip(w2) {
        let (x, y) = if (a - b).abs() <= tol {
            (a / 2.0, a / 2.0)
        } else if sign_tol(a, tol) * sign_tol(b, tol) < 0.0 {
            (a.signum() * w_sup, b.signum() * w_sup)
        } else if a.abs() <= b.abs() {
            let sg = b.signum();
            ((a - sg * w_sup).clamp(-w_sup, w_sup), sg * w_sup)
        } else {
            let sg = a.signum();
            (sg * w_sup, (b - sg * w_sup).clamp(-w_sup, w_sup))
        };
        s1.push(x);
        s2.push(y);
    }
    Ok(solution_from(vec![s1, s2], w_sup))
}

/// Equilibrium ensemble for `r >= 2` environments: componentwise median for
/// odd `r`, the two-environment rule on the middle pair for even `r`.
pub fn nash_ensemble_multi(ws: &[Vec<f64>], cfg: &GameConfig) -> Result<Vec<f64>> {
    if ws.len() < 2 {
        return Err(Error::InvalidParameter("need at least two environments".into()));
    }
    let d = ws[0].len();
    for (e, w) in ws.iter().enumerate() {
        check_same_len(&ws[0], w)?;
        check_realizable(e, w, cfg.w_sup)?;
    }
    let r = ws.len();
    let mut col = vec![0.0; r];
    Ok((0..d)
        .map(|i| {
            for (c, w) in col.iter_mut().zip(ws) {
                *c = w[i];
            }
            col.sort_by(|a, b| a.total_cmp(b));
            if r % 2 == 1 {
                col[r / 2]
            } else {
                pair_rule(col[r / 2 - 1], col[r / 2], cfg.tolerance)
            }
        })
        .collect())
}

/// The unconstrained game has a pure equilibrium only when both environments
/// share the same least-squares solution.
pub fn ulrg_ne_exists(w1: &[f64], w2: &[f64], tol: f64) -> Result<bool> {
    check_same_len(w1, w2)?;
    Ok(numerics::dist_inf(w1, w2) <= tol)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilityVerdict {
    StableEqual,
    StablePsdZeroMin,
    Unknown,
}

const STABILITY_TOL: f64 = 1e-9;

/// Sufficient conditions for variational stability of the equilibrium set
/// when the spurious features are not uncorrelated.
pub fn variational_stability_check(sigma1: &Matrix, sigma2: &Matrix) -> Result<StabilityVerdict> {
    let diff = sigma2.sub(sigma1)?;
    if diff.max_abs() <= STABILITY_TOL {
        return Ok(StabilityVerdict::StableEqual);
    }
    for m in [diff.clone(), diff.scale(-1.0)] {
        if min_eigenvalue(&m)?.abs() <= STABILITY_TOL {
            return Ok(StabilityVerdict::StablePsdZeroMin);
        }
    }
    Ok(StabilityVerdict::Unknown)
}

/// KKT test that `own` minimizes the environment's risk of `own + other`
/// over the box `[-w_sup, w_sup]^d`.
pub fn is_box_best_response(m: &EnvironmentMoments, own: &[f64], other: &[f64], w_sup: f64, tol: f64) -> bool {
    let g = m.risk_gradient(&numerics::add(own, other));
    own.iter().zip(&g).all(|(w, gi)| match BoundaryStatus::of(*w, w_sup) {
        BoundaryStatus::Upper => *gi <= tol,
        BoundaryStatus::Lower => *gi >= -tol,
        BoundaryStatus::Interior => gi.abs() <= tol,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominancePoint {
    pub pi1: f64,
    pub erm: Vec<f64>,
    pub d_erm: f64,
    pub d_erm_sq: f64,
    /// ERM coincides with the equilibrium ensemble here (a measure-zero case).
    pub exception: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominanceReport {
    pub ensemble: Vec<f64>,
    pub d_ne: f64,
    pub d_ne_sq: f64,
    pub points: Vec<DominancePoint>,
}

impl DominanceReport {
    /// Smallest `d_erm_sq - d_ne_sq` over the non-exceptional grid points.
    pub fn min_margin(&self) -> Option<f64> {
        self.points.iter().filter(|p| !p.exception).map(|p| p.d_erm_sq - self.d_ne_sq).reduce(f64::min)
    }
}

/// Compares the distance of the equilibrium ensemble and of ERM (for each
/// mixture weight in `pi_grid`) to the `ideal` predictor on a confounder-only
/// instance with orthogonal loadings.
pub fn dominance_certificate(cfg: &SemConfig, pi_grid: &[f64], ideal: &[f64]) -> Result<DominanceReport> {
    if cfg.envs.len() != 2 {
        return Err(Error::HypothesisViolated("exactly two environments are required".into()));
    }
    if ideal.len() != cfg.dim() {
        return Err(Error::DimensionMismatch(format!("ideal has {} entries, model has {}", ideal.len(), cfg.dim())));
    }
    for (e, env) in cfg.envs.iter().enumerate() {
        if env.alpha.iter().any(|a| *a != 0.0) {
            return Err(Error::HypothesisViolated(format!("environment {} has anti-causal weights", e + 1)));
        }
        let th = &env.theta;
        let orth = th.is_square()
            && th.matmul(&th.transpose())?.sub(&Matrix::identity(th.rows()))?.max_abs() <= 1e-8;
        if !orth {
            return Err(Error::HypothesisViolated(format!("theta of environment {} is not orthogonal", e + 1)));
        }
    }
    let w1 = confounder_closed_form(cfg, 0)?.w_star;
    let w2 = confounder_closed_form(cfg, 1)?.w_star;
    if !w1[cfg.p..].iter().zip(&w2[cfg.p..]).any(|(a, b)| (a - b).abs() > VARY_TOL) {
        return Err(Error::HypothesisViolated("spurious coefficients do not vary across environments".into()));
    }
    let m1 = analytic_moments(cfg, 0)?;
    let m2 = analytic_moments(cfg, 1)?;
    let ensemble = nash_ensemble(&w1, &w2)?;
    let d_ne = norm2(&numerics::sub(&ensemble, ideal));
    let points = pi_grid
        .iter()
        .map(|&pi1| {
            let erm = erm_solution(&m1, &m2, pi1)?;
            let d_erm = norm2(&numerics::sub(&erm, ideal));
            let exception = numerics::dist_inf(&erm, &ensemble) <= DEFAULT_TOL;
            Ok(DominancePoint { pi1, erm, d_erm, d_erm_sq: d_erm * d_erm, exception })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DominanceReport { ensemble, d_ne, d_ne_sq: d_ne * d_ne, points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sem::confounder_only_config;

    fn cfg2() -> GameConfig {
        GameConfig::new(2.0).unwrap()
    }

    #[test]
    fn split_examples() {
        let s = index_split(&[1.0, 0.5], &[1.0, -0.3], 1e-9).unwrap();
        assert_eq!(s, IndexSplit { u_set: vec![0], v_set: vec![1] });
        assert!(index_split(&[1.0, 2.0], &[1.0, 2.0], 1e-9).unwrap().v_set.is_empty());
        assert!(index_split(&[1.0], &[1.0, 2.0], 1e-9).is_err());
    }

    #[test]
    fn ensemble_examples() {
        assert_eq!(nash_ensemble(&[1.0, 0.5], &[1.0, -0.3]).unwrap(), vec![1.0, 0.0]);
        assert_eq!(nash_ensemble(&[2.0, 0.4], &[2.0, 0.9]).unwrap(), vec![2.0, 0.4]);
        assert_eq!(nash_ensemble(&[0.3, -0.7], &[0.3, -0.7]).unwrap(), vec![0.3, -0.7]);
        assert_eq!(nash_ensemble(&[-0.8, 0.1], &[-0.2, 0.6]).unwrap(), vec![-0.2, 0.1]);
    }

    #[test]
    fn strategy_examples() {
        let sol = nash_strategies(&[-0.4, 0.5, 1.0], &[0.7, 0.9, 1.0], &cfg2()).unwrap();
        assert_eq!(sol.strategies[0], vec![-2.0, -1.5, 0.5]);
        assert_eq!(sol.strategies[1], vec![2.0, 2.0, 0.5]);
        assert_eq!(sol.ensemble, vec![0.0, 0.5, 1.0]);
        assert_eq!(sol.boundary_flags[0][0], BoundaryStatus::Lower);
        assert_eq!(sol.boundary_flags[1][1], BoundaryStatus::Upper);
        assert_eq!(sol.boundary_flags[0][1], BoundaryStatus::Interior);
    }

    #[test]
    fn strategies_reject_unrealizable() {
        let err = nash_strategies(&[0.1, 0.2, 0.3], &[0.1, 0.2, 2.4], &cfg2()).unwrap_err();
        assert_eq!(err, Error::RealizabilityViolated { env: 2, index: 3, value: 2.4, w_sup: 2.0 });
        assert!(err.to_string().contains("realizability"));
    }

    #[test]
    fn multi_examples() {
        let c = cfg2();
        let ws = |v: &[f64]| v.iter().map(|x| vec![*x]).collect::<Vec<_>>();
        assert_eq!(nash_ensemble_multi(&ws(&[-1.0, 0.2, 1.9]), &c).unwrap(), vec![0.2]);
        assert_eq!(nash_ensemble_multi(&ws(&[-1.0, -0.3, 0.6, 1.5]), &c).unwrap(), vec![0.0]);
        assert_eq!(nash_ensemble_multi(&ws(&[-1.0, 0.3, 0.6, 1.5]), &c).unwrap(), vec![0.3]);
        assert_eq!(nash_ensemble_multi(&ws(&[-1.0, -0.3, -0.6, 1.5]), &c).unwrap(), vec![-0.3]);
    }

    #[test]
    fn ulrg_existence() {
        assert!(ulrg_ne_exists(&[1.0, 0.5], &[1.0, 0.5], 1e-9).unwrap());
        assert!(!ulrg_ne_exists(&[1.0, 0.5], &[1.0, 0.6], 1e-9).unwrap());
    }

    #[test]
    fn stability_verdicts() {
        let s1 = Matrix::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap();
        assert_eq!(variational_stability_check(&s1, &s1).unwrap(), StabilityVerdict::StableEqual);
        let s2 = s1.add(&Matrix::from_diag(&[0.0, 1.0])).unwrap();
        assert_eq!(variational_stability_check(&s1, &s2).unwrap(), StabilityVerdict::StablePsdZeroMin);
        assert_eq!(variational_stability_check(&s2, &s1).unwrap(), StabilityVerdict::StablePsdZeroMin);
        let s3 = s1.add(&Matrix::from_diag(&[1.0, -1.0])).unwrap();
        assert_eq!(variational_stability_check(&s1, &s3).unwrap(), StabilityVerdict::Unknown);
    }

    #[test]
    fn dominance_exact_recovery_and_exception() {
        let id = Matrix::identity(2);
        let c = confounder_only_config(1, &id, &[1.0, -0.5], &[-1.0, 0.5], &[1.0; 2], &[1.0; 2]).unwrap();
        let rep = dominance_certificate(&c.config, &[0.2, 0.5, 0.7], &[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(rep.d_ne, 0.0);

        // env1 strictly smaller, same signs: ERM at pi1 = 1 is the equilibrium ensemble
        let c = confounder_only_config(1, &id, &[0.5, 0.4], &[1.5, 1.2], &[1.0; 2], &[1.0; 2]).unwrap();
        let rep = dominance_certificate(&c.config, &[0.5, 1.0], &[1.0, 0.0, 0.0]).unwrap();
        assert!(!rep.points[0].exception && rep.points[0].d_erm_sq > rep.d_ne_sq);
        assert!(rep.points[1].exception);
        assert!((rep.points[1].d_erm - rep.d_ne).abs() < 1e-12);

        let same = confounder_only_config(1, &id, &[0.5, 0.4], &[0.5, 0.4], &[1.0; 2], &[1.0; 2]).unwrap();
        assert!(matches!(
            dominance_certificate(&same.config, &[0.5], &[1.0, 0.0, 0.0]),
            Err(Error::HypothesisViolated(_))
        ));
    }
}
