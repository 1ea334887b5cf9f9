//! Learning dynamics for the regression game: exact best responses, the
//! clamp recursion, signed-gradient updates and minibatch SGD best responses.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{check_realizable, IndexSplit};
use crate::numerics::{self, dot, dist_inf, norm_inf, solve_spd, Matrix};
use crate::population::EnvironmentMoments;
use crate::sem::{rng_for, EnvSample};

/// Inner tolerance of the box-constrained coordinate minimization.
pub const INNER_TOL: f64 = 1e-12;
/// Longest limit cycle the signed-gradient dynamic looks for.
const MAX_CYCLE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Penalty {
    #[default]
    None,
    Linf,
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Tolerance,
    MaxRounds,
    OscillationDetected,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DynamicsParams {
    /// Radius of the strategy box; `f64::INFINITY` gives the unconstrained game.
    pub w_sup: f64,
    pub tol: f64,
    pub max_rounds: usize,
    /// Step size for the gradient dynamics.
    pub step: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub penalty: Penalty,
    pub lambda: f64,
    pub seed: u64,
    /// Let environment 2 move first.
    pub env2_first: bool,
    /// Stop with [`StopReason::Diverged`] once any strategy exceeds this norm.
    pub divergence_threshold: Option<f64>,
    /// Record every k-th round (SGD records per epoch).
    pub record_every: usize,
}

impl Default for DynamicsParams {
    fn default() -> Self {
        Self {
            w_sup: 2.0,
            tol: 1e-10,
            max_rounds: 100_000,
            step: 0.005,
            batch_size: 128,
            epochs: 200,
            penalty: Penalty::None,
            lambda: 0.1,
            seed: 0,
            env2_first: false,
            divergence_threshold: None,
            record_every: 1,
        }
    }
}

impl DynamicsParams {
    pub fn with_w_sup(w_sup: f64) -> Self {
        Self { w_sup, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if !(self.w_sup > 0.0) {
            return bad("w_sup must be positive");
        }
        if !(self.tol > 0.0) {
            return bad("tol must be positive");
        }
        if self.max_rounds == 0 {
            return bad("max_rounds must be at least 1");
        }
        if !(self.step > 0.0) {
            return bad("step must be positive");
        }
        if self.batch_size == 0 || self.record_every == 0 {
            return bad("batch_size and record_every must be at least 1");
        }
        if !(self.lambda >= 0.0) {
            return bad("lambda must be non-negative");
        }
        Ok(())
    }

    fn order(&self, r: usize) -> Vec<usize> {
        let mut o: Vec<usize> = (0..r).collect();
        if self.env2_first && r >= 2 {
            o.swap(0, 1);
        }
        o
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// Environment that moved in this record, `None` for simultaneous updates.
    pub mover: Option<usize>,
    pub strategies: Vec<Vec<f64>>,
    pub ensemble: Vec<f64>,
    /// Per-environment risk of the ensemble (up to each environment's constant).
    pub risks: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsTrace {
    pub rounds: Vec<RoundRecord>,
    pub converged: bool,
    pub stop_reason: StopReason,
    /// Completed rounds (one round = every environment moved once).
    pub iterations: usize,
    /// Centre of the limit cycle for oscillating dynamics.
    pub band_center: Option<Vec<f64>>,
    pub final_strategies: Vec<Vec<f64>>,
}

impl DynamicsTrace {
    pub fn final_ensemble(&self) -> Vec<f64> {
        ensemble_of(&self.final_strategies)
    }

    pub fn max_abs_strategy(&self) -> f64 {
        self.rounds.iter().flat_map(|r| r.strategies.iter()).map(|s| norm_inf(s)).fold(0.0, f64::max)
    }
}

fn ensemble_of(strategies: &[Vec<f64>]) -> Vec<f64> {
    let d = strategies.first().map_or(0, Vec::len);
    (0..d).map(|i| strategies.iter().map(|s| s[i]).sum()).collect()
}

fn record(round: usize, mover: Option<usize>, strategies: &[Vec<f64>], risk: impl Fn(usize, &[f64]) -> f64) -> RoundRecord {
    let ensemble = ensemble_of(strategies);
    let risks = (0..strategies.len()).map(|e| risk(e, &ensemble)).collect();
    RoundRecord { round, mover, strategies: strategies.to_vec(), ensemble, risks }
}

fn sum_others(strategies: &[Vec<f64>], skip: usize) -> Vec<f64> {
    let d = strategies[0].len();
    (0..d).map(|i| strategies.iter().enumerate().filter(|(e, _)| *e != skip).map(|(_, s)| s[i]).sum()).collect()
}

/// Minimizes `(u+o)' S (u+o) - 2 r'(u+o)` over `u` in the box by cyclic
/// coordinate minimization, then re-solves the free coordinates exactly.
pub fn box_best_response(sigma: &Matrix, rho: &[f64], other: &[f64], w_sup: f64, start: &[f64]) -> Result<Vec<f64>> {
    let d = rho.len();
    if w_sup.is_infinite() {
        let target = solve_spd(sigma, rho)?;
        return Ok(numerics::sub(&target, other));
    }
    let mut u = start.to_vec();
    let mut total = numerics::add(&u, other);
    for j in 0..d {
        if !(sigma[(j, j)] > 0.0) {
            return Err(Error::NotPositiveDefinite { index: j, pivot: sigma[(j, j)] });
        }
    }
    for _sweep in 0..100_000 {
        let mut change: f64 = 0.0;
        for j in 0..d {
            let g = dot(sigma.row(j), &total) - rho[j];
            let new = (u[j] - g / sigma[(j, j)]).clamp(-w_sup, w_sup);
            let delta = new - u[j];
            if delta != 0.0 {
                u[j] = new;
                total[j] += delta;
                change = change.max(delta.abs());
            }
        }
        if change <= INNER_TOL {
            break;
        }
    }
    Ok(polish(sigma, rho, other, w_sup, u))
}

/// Active-set refinement: keeps coordinates at the bounds fixed and solves
/// the stationarity equations for the rest. Falls back to `u` when the
/// refined point is not a valid box optimum.
fn polish(sigma: &Matrix, rho: &[f64], other: &[f64], w_sup: f64, u: Vec<f64>) -> Vec<f64> {
    let d = rho.len();
    let (free, _): (Vec<usize>, Vec<usize>) = (0..d).partition(|&i| u[i].abs() < w_sup);
    if free.is_empty() {
        return u;
    }
    let mut total = numerics::add(&u, other);
    for &i in &free {
        total[i] = 0.0;
    }
    let sf = sigma.principal(&free);
    let rhs: Vec<f64> = free.iter().map(|&i| rho[i] - dot(sigma.row(i), &total)).collect();
    let Ok(tf) = solve_spd(&sf, &rhs) else { return u };
    let mut cand = u.clone();
    for (k, &i) in free.iter().enumerate() {
        cand[i] = tf[k] - other[i];
        if cand[i].abs() > w_sup {
            return u;
        }
    }
    let total = numerics::add(&cand, other);
    let scale = 1.0 + norm_inf(rho) + sigma.max_abs() * norm_inf(&total);
    let ok = (0..d).all(|i| {
        let g = dot(sigma.row(i), &total) - rho[i];
        if free.contains(&i) {
            true
        } else if u[i] >= w_sup {
            g <= 1e-9 * scale
        } else {
            g >= -1e-9 * scale
        }
    });
    if ok && dist_inf(&cand, &u) <= 1e-6 * (1.0 + w_sup) {
        cand
    } else {
        u
    }
}

/// Alternating exact best responses for two environments, starting at zero.
pub fn exact_brd(m1: &EnvironmentMoments, m2: &EnvironmentMoments, params: &DynamicsParams) -> Result<DynamicsTrace> {
    exact_brd_multi(&[m1.clone(), m2.clone()], params)
}

/// Exact best-response dynamics for any number of environments; each takes
/// its turn in order within a round.
pub fn exact_brd_multi(ms: &[EnvironmentMoments], params: &DynamicsParams) -> Result<DynamicsTrace> {
    params.validate()?;
    if ms.is_empty() {
        return Err(Error::InvalidParameter("no environments".into()));
    }
    let d = ms[0].dim();
    if ms.iter().any(|m| m.dim() != d) {
        return Err(Error::DimensionMismatch("environments have different dimensions".into()));
    }
    for m in ms {
        numerics::Cholesky::factor(&m.sigma)?;
    }
    let r = ms.len();
    let order = params.order(r);
    let mut strategies = vec![vec![0.0; d]; r];
    let mut rounds = Vec::new();
    let risk = |e: usize, w: &[f64]| ms[e].risk(w);
    for round in 1..=params.max_rounds {
        let mut max_diff: f64 = 0.0;
        for &e in &order {
            let other = sum_others(&strategies, e);
            let new = box_best_response(&ms[e].sigma, &ms[e].rho, &other, params.w_sup, &strategies[e])?;
            max_diff = max_diff.max(dist_inf(&new, &strategies[e]));
            strategies[e] = new;
            rounds.push(record(round, Some(e), &strategies, risk));
        }
        if max_diff <= params.tol {
            return Ok(finish(rounds, true, StopReason::Tolerance, round, None, strategies));
        }
    }
    Ok(finish(rounds, false, StopReason::MaxRounds, params.max_rounds, None, strategies))
}

fn finish(
    rounds: Vec<RoundRecord>,
    converged: bool,
    stop_reason: StopReason,
    iterations: usize,
    band_center: Option<Vec<f64>>,
    final_strategies: Vec<Vec<f64>>,
) -> DynamicsTrace {
    DynamicsTrace { rounds, converged, stop_reason, iterations, band_center, final_strategies }
}

fn check_targets(w1: &[f64], w2: &[f64], w_sup: f64) -> Result<()> {
    numerics::check_same_len(w1, w2)?;
    if w_sup.is_finite() {
        check_realizable(0, w1, w_sup)?;
        check_realizable(1, w2, w_sup)?;
    }
    Ok(())
}

fn target_risk(targets: [&[f64]; 2]) -> impl Fn(usize, &[f64]) -> f64 + '_ {
    move |e, w| {
        let diff = numerics::sub(w, targets[e]);
        dot(&diff, &diff)
    }
}

/// Alternating projected best responses `w_e = clamp(w_e* - w_other)` for an
/// environment pair with identity second moments. Risks are reported as
/// `||w - w_e*||^2`.
pub fn clamp_brd(w1_star: &[f64], w2_star: &[f64], params: &DynamicsParams) -> Result<DynamicsTrace> {
    params.validate()?;
    check_targets(w1_star, w2_star, params.w_sup)?;
    let targets = [w1_star, w2_star];
    let risk = target_risk(targets);
    let d = w1_star.len();
    let mut strategies = vec![vec![0.0; d]; 2];
    let mut rounds = Vec::new();
    let order = params.order(2);
    for round in 1..=params.max_rounds {
        let mut max_diff: f64 = 0.0;
        for &e in &order {
            let other = &strategies[1 - e];
            let new = numerics::clamp_linf(&numerics::sub(targets[e], other), params.w_sup);
            max_diff = max_diff.max(dist_inf(&new, &strategies[e]));
            strategies[e] = new;
            let diverged = params.divergence_threshold.is_some_and(|limit| norm_inf(&strategies[e]) > limit);
            if round % params.record_every == 0 || round == 1 || diverged {
                rounds.push(record(round, Some(e), &strategies, &risk));
            }
            if diverged {
                return Ok(finish(rounds, false, StopReason::Diverged, round, None, strategies));
            }
        }
        if max_diff <= params.tol {
            return Ok(finish(rounds, true, StopReason::Tolerance, round, None, strategies));
        }
    }
    Ok(finish(rounds, false, StopReason::MaxRounds, params.max_rounds, None, strategies))
}

fn sgn(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Simultaneous signed-gradient updates
/// `w_e <- clamp(w_e + step * sgn(w_e* - w_bar))` with `sgn(0) = +1`.
///
/// The dynamic ends in a short limit cycle rather than a point; when one is
/// detected (state repeats within 1e-12) the trace reports the mean ensemble
/// over the cycle as `band_center`.
pub fn signed_grad_brd(w1_star: &[f64], w2_star: &[f64], params: &DynamicsParams) -> Result<DynamicsTrace> {
    params.validate()?;
    check_targets(w1_star, w2_star, params.w_sup)?;
    let targets = [w1_star, w2_star];
    let risk = target_risk(targets);
    let d = w1_star.len();
    let beta = params.step;
    let mut strategies = vec![vec![0.0; d]; 2];
    let mut history: Vec<Vec<Vec<f64>>> = vec![strategies.clone()];
    let mut rounds = Vec::new();
    for round in 1..=params.max_rounds {
        let ens = ensemble_of(&strategies);
        strategies = (0..2)
            .map(|e| {
                let moved: Vec<f64> =
                    (0..d).map(|i| strategies[e][i] + beta * sgn(targets[e][i] - ens[i])).collect();
                numerics::clamp_linf(&moved, params.w_sup)
            })
            .collect();
        if round % params.record_every == 0 {
            rounds.push(record(round, None, &strategies, &risk));
        }
        if let Some(limit) = params.divergence_threshold {
            if strategies.iter().any(|s| norm_inf(s) > limit) {
                return Ok(finish(rounds, false, StopReason::Diverged, round, None, strategies));
            }
        }
        let period = history.iter().rev().take(MAX_CYCLE).position(|old| {
            old.iter().zip(&strategies).all(|(a, b)| dist_inf(a, b) <= INNER_TOL)
        });
        if let Some(k) = period {
            let cycle = &history[history.len() - 1 - k..];
            let mut center = vec![0.0; d];
            for st in cycle {
                for (c, v) in center.iter_mut().zip(ensemble_of(st)) {
                    *c += v / cycle.len() as f64;
                }
            }
            if rounds.last().is_none_or(|r| r.round != round) {
                rounds.push(record(round, None, &strategies, &risk));
            }
            return Ok(finish(rounds, true, StopReason::OscillationDetected, round, Some(center), strategies));
        }
        history.push(strategies.clone());
        if history.len() > MAX_CYCLE {
            history.remove(0);
        }
    }
    let last = ensemble_of(&strategies);
    let prev = ensemble_of(history.last().expect("history is never empty"));
    let center = last.iter().zip(&prev).map(|(a, b)| 0.5 * (a + b)).collect();
    Ok(finish(rounds, false, StopReason::MaxRounds, params.max_rounds, Some(center), strategies))
}

/// Shuffled-epoch minibatch iterator over one environment's rows.
struct BatchStream {
    perm: Vec<usize>,
    pos: usize,
    rng: rand_chacha::ChaCha20Rng,
}

impl BatchStream {
    fn new(n: usize, seed: u64, env: usize) -> Self {
        let mut rng = rng_for(seed, (1u64 << 40) + env as u64);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        Self { perm, pos: 0, rng }
    }

    fn next(&mut self, size: usize) -> &[usize] {
        if self.pos >= self.perm.len() {
            self.perm.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let start = self.pos;
        self.pos = (start + size).min(self.perm.len());
        &self.perm[start..self.pos]
    }
}

fn penalty_gradient(w: &[f64], penalty: Penalty, lambda: f64) -> Vec<f64> {
    match penalty {
        Penalty::None => vec![0.0; w.len()],
        Penalty::L2 => w.iter().map(|v| 2.0 * lambda * v).collect(),
        Penalty::Linf => {
            let m = norm_inf(w);
            if m == 0.0 {
                return vec![0.0; w.len()];
            }
            let ties = w.iter().filter(|v| v.abs() == m).count() as f64;
            w.iter().map(|v| if v.abs() == m { lambda * v.signum() / ties } else { 0.0 }).collect()
        }
    }
}

fn sample_risk(s: &EnvSample, w: &[f64]) -> f64 {
    let n = s.len() as f64;
    (0..s.len()).map(|i| (dot(s.x.row(i), w) - s.y[i]).powi(2)).sum::<f64>() / n
}

/// Alternating projected minibatch gradient steps: environment turns follow
/// the configured order, each step using one minibatch from that
/// environment's shuffled epoch. Runs `epochs` passes of
/// `max_e ceil(n_e / batch_size)` rounds and records state once per
/// `record_every` epochs.
pub fn sgd_brd(samples: &[EnvSample], params: &DynamicsParams) -> Result<DynamicsTrace> {
    params.validate()?;
    if samples.is_empty() || samples.iter().any(EnvSample::is_empty) {
        return Err(Error::EmptySample);
    }
    let d = samples[0].x.cols();
    if samples.iter().any(|s| s.x.cols() != d) {
        return Err(Error::DimensionMismatch("samples have different feature counts".into()));
    }
    let r = samples.len();
    let order = params.order(r);
    let bsz = params.batch_size;
    let per_epoch = samples.iter().map(|s| s.len().div_ceil(bsz)).max().unwrap_or(1);
    let mut streams: Vec<BatchStream> =
        samples.iter().enumerate().map(|(e, s)| BatchStream::new(s.len(), params.seed, e)).collect();
    let mut strategies = vec![vec![0.0; d]; r];
    let mut ens = vec![0.0; d];
    let mut rounds = Vec::new();
    let risk = |e: usize, w: &[f64]| sample_risk(&samples[e], w);
    let mut grad = vec![0.0; d];
    for epoch in 1..=params.epochs {
        for _ in 0..per_epoch {
            for &e in &order {
                let s = &samples[e];
                let batch = streams[e].next(bsz);
                grad.iter_mut().for_each(|g| *g = 0.0);
                for &i in batch {
                    let row = s.x.row(i);
                    let resid = dot(row, &ens) - s.y[i];
                    for (g, x) in grad.iter_mut().zip(row) {
                        *g += x * resid;
                    }
                }
                let scale = 2.0 / batch.len() as f64;
                let pen = penalty_gradient(&strategies[e], params.penalty, params.lambda);
                for j in 0..d {
                    let old = strategies[e][j];
                    let new = (old - params.step * (scale * grad[j] + pen[j])).clamp(-params.w_sup, params.w_sup);
                    strategies[e][j] = new;
                    ens[j] += new - old;
                }
            }
        }
        // resynchronize the running ensemble to avoid drift from incremental updates
        ens = ensemble_of(&strategies);
        if ens.iter().any(|v| !v.is_finite()) {
            return Ok(finish(rounds, false, StopReason::Diverged, epoch, None, strategies));
        }
        if epoch % params.record_every == 0 || epoch == params.epochs {
            rounds.push(record(epoch, None, &strategies, risk));
        }
    }
    Ok(finish(rounds, false, StopReason::MaxRounds, params.epochs, None, strategies))
}

/// Upper bound `2 w_sup / min_{i in V} |w1_i - w2_i|` on the number of best
/// response minimizations.
pub fn iteration_bound(w1_star: &[f64], w2_star: &[f64], w_sup: f64, split: &IndexSplit) -> Result<f64> {
    numerics::check_same_len(w1_star, w2_star)?;
    let delta_min = split.v_set.iter().map(|&i| (w1_star[i] - w2_star[i]).abs()).reduce(f64::min).ok_or(Error::EmptyVSet)?;
    Ok(2.0 * w_sup / delta_min)
}
