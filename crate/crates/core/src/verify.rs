//! Randomized instance generators and a quick property suite that exercises
//! the invariants of every module. Used by the `verify` subcommand and the
//! test suites.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::StandardNormal;

use crate::dynamics::{clamp_brd, exact_brd, iteration_bound, sgd_brd, DynamicsParams};
use crate::game::{
    index_split, is_box_best_response, nash_ensemble, nash_ensemble_multi, nash_strategies, BoundaryStatus, GameConfig,
};
use crate::numerics::{self, clamp_linf, dist_inf, dot, empirical_moments, min_eigenvalue, norm2, solve_spd, Matrix};
use crate::population::{analytic_moments, confounder_closed_form, erm_solution, least_squares, EnvironmentMoments};
use crate::sem::{preset, sample_environment, Setting};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_spd(d: usize, rng: &mut impl Rng) -> Matrix {
    let a = Matrix::new(d, d, (0..d * d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).expect("finite");
    a.matmul(&a.transpose()).expect("square").scale(1.0 / d as f64).add(&Matrix::identity(d).scale(0.5)).expect("square")
}

/// Random orthogonal matrix via Gram-Schmidt on Gaussian columns.
pub fn random_orthogonal(q: usize, rng: &mut impl Rng) -> Matrix {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(q);
    while cols.len() < q {
        let mut v: Vec<f64> = (0..q).map(|_| rng.sample(StandardNormal)).collect();
        for _ in 0..2 {
            for c in &cols {
                let proj = dot(&v, c);
                v.iter_mut().zip(c).for_each(|(a, b)| *a -= proj * b);
            }
        }
        let n = norm2(&v);
        if n > 1e-6 {
            cols.push(v.iter().map(|x| x / n).collect());
        }
    }
    let mut m = Matrix::zeros(q, q);
    for (j, c) in cols.iter().enumerate() {
        for i in 0..q {
            m[(i, j)] = c[i];
        }
    }
    m
}

/// Two-environment game whose differing coefficients belong to features that
/// are uncorrelated with every other feature.
#[derive(Debug, Clone)]
pub struct SeparableInstance {
    pub m1: EnvironmentMoments,
    pub m2: EnvironmentMoments,
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
    pub w_sup: f64,
}

/// Draws a random instance with `d <= max_d` features, `|w*| <= 0.9 w_sup`
/// and gaps of at least `min_gap` on the differing coefficients.
pub fn separable_instance(rng: &mut impl Rng, max_d: usize, w_sup: f64, min_gap: f64) -> SeparableInstance {
    let d = rng.gen_range(1..=max_d);
    let n_u = rng.gen_range(0..=d);
    let lim = 0.9 * w_sup;
    let mut w1 = Vec::with_capacity(d);
    let mut w2 = Vec::with_capacity(d);
    for _ in 0..n_u {
        let v = rng.gen_range(-lim..=lim);
        w1.push(v);
        w2.push(v);
    }
    for _ in n_u..d {
        loop {
            let (a, b) = (rng.gen_range(-lim..=lim), rng.gen_range(-lim..=lim));
            if (a - b).abs() >= min_gap {
                w1.push(a);
                w2.push(b);
                break;
            }
        }
    }
    fn sigma(rng: &mut impl Rng, d: usize, n_u: usize) -> Matrix {
        let mut s = Matrix::zeros(d, d);
        if n_u > 0 {
            s.set_block(0, 0, &random_spd(n_u, rng));
        }
        for i in n_u..d {
            s[(i, i)] = rng.gen_range(0.5..2.0);
        }
        s
    }
    let s1 = sigma(rng, d, n_u);
    let s2 = sigma(rng, d, n_u);
    let mut perm: Vec<usize> = (0..d).collect();
    perm.shuffle(rng);
    let permute_m = |s: &Matrix| s.principal(&perm);
    let permute_v = |v: &[f64]| perm.iter().map(|&i| v[i]).collect::<Vec<_>>();
    let (s1, s2, w1, w2) = (permute_m(&s1), permute_m(&s2), permute_v(&w1), permute_v(&w2));
    let moments = |s: Matrix, w: &[f64]| {
        let rho = s.matvec(w).expect("square");
        EnvironmentMoments::new(s, rho).expect("symmetric")
    };
    SeparableInstance { m1: moments(s1, &w1), m2: moments(s2, &w2), w1, w2, w_sup }
}

/// `r` environments with diagonal second moments and random coefficients.
pub fn separable_multi_instance(rng: &mut impl Rng, r: usize, max_d: usize, w_sup: f64) -> Vec<(EnvironmentMoments, Vec<f64>)> {
    let d = rng.gen_range(1..=max_d);
    let lim = 0.9 * w_sup;
    (0..r)
        .map(|_| {
            let w: Vec<f64> = (0..d).map(|_| rng.gen_range(-lim..=lim)).collect();
            let s = Matrix::from_diag(&(0..d).map(|_| rng.gen_range(0.5..2.0)).collect::<Vec<_>>());
            let rho = s.matvec(&w).expect("square");
            (EnvironmentMoments::new(s, rho).expect("diagonal"), w)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, f: impl FnOnce() -> Result<String, String>) -> Check {
    match f() {
        Ok(detail) => Check { name, passed: true, detail },
        Err(detail) => Check { name, passed: false, detail },
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Runs the whole property suite with the given seed.
pub fn run_all(seed: u64) -> Vec<Check> {
    let mut out = Vec::new();

    out.push(check("spd solve residual", || {
        let mut r = rng(seed);
        for d in [1, 2, 5, 10, 25, 50] {
            let a = random_spd(d, &mut r);
            let b: Vec<f64> = (0..d).map(|_| r.gen_range(-3.0..3.0)).collect();
            let x = solve_spd(&a, &b).map_err(|e| e.to_string())?;
            let res = norm2(&numerics::sub(&a.matvec(&x).unwrap(), &b));
            ensure(res <= 1e-8 * (a.frobenius_norm() * norm2(&x) + norm2(&b)), || format!("d={d} residual {res:e}"))?;
        }
        Ok("6 sizes up to 50".into())
    }));

    out.push(check("moments symmetric and psd", || {
        let mut r = rng(seed + 1);
        let x = Matrix::new(30, 6, (0..180).map(|_| r.gen_range(-2.0..2.0)).collect()).unwrap();
        let y: Vec<f64> = (0..30).map(|_| r.gen_range(-1.0..1.0)).collect();
        let (s, _, _) = empirical_moments(&x, &y).map_err(|e| e.to_string())?;
        ensure(s.is_symmetric(0.0), || "not exactly symmetric".into())?;
        let lam = min_eigenvalue(&s).unwrap();
        ensure(lam >= -1e-10, || format!("min eigenvalue {lam:e}"))?;
        Ok(format!("min eigenvalue {lam:.3e}"))
    }));

    out.push(check("clamp idempotent and non-expansive", || {
        let mut r = rng(seed + 2);
        for _ in 0..1000 {
            let u: Vec<f64> = (0..5).map(|_| r.gen_range(-5.0..5.0)).collect();
            let v: Vec<f64> = (0..5).map(|_| r.gen_range(-5.0..5.0)).collect();
            let (cu, cv) = (clamp_linf(&u, 2.0), clamp_linf(&v, 2.0));
            ensure(clamp_linf(&cu, 2.0) == cu, || "not idempotent".into())?;
            ensure(dist_inf(&cu, &cv) <= dist_inf(&u, &v), || "expansive".into())?;
        }
        Ok("1000 pairs".into())
    }));

    out.push(check("min eigenvalue below rayleigh quotients", || {
        let mut r = rng(seed + 3);
        for _ in 0..50 {
            let a = random_spd(6, &mut r).sub(&Matrix::identity(6)).unwrap();
            let lam = min_eigenvalue(&a).unwrap();
            let v: Vec<f64> = (0..6).map(|_| r.sample(StandardNormal)).collect();
            let q = dot(&v, &a.matvec(&v).unwrap()) / dot(&v, &v);
            ensure(lam <= q + 1e-8, || format!("{lam} > {q}"))?;
        }
        Ok("50 matrices".into())
    }));

    out.push(check("equilibrium ensemble symmetry and scaling", || {
        let mut r = rng(seed + 4);
        for _ in 0..2000 {
            let a: Vec<f64> = (0..4).map(|_| r.gen_range(-2.0..2.0)).collect();
            let mut b: Vec<f64> = (0..4).map(|_| r.gen_range(-2.0..2.0)).collect();
            b[0] = a[0];
            let ab = nash_ensemble(&a, &b).unwrap();
            let ba = nash_ensemble(&b, &a).unwrap();
            ensure(ab == ba, || format!("asymmetric at {a:?} {b:?}"))?;
            for c in [0.5, 3.0, -2.0] {
                let scaled = nash_ensemble(&numerics::scale(&a, c), &numerics::scale(&b, c)).unwrap();
                ensure(dist_inf(&scaled, &numerics::scale(&ab, c)) <= 1e-12, || format!("scale {c}"))?;
            }
        }
        Ok("2000 pairs".into())
    }));

    out.push(check("two-environment multi rule matches pair rule", || {
        let mut r = rng(seed + 5);
        let cfg = GameConfig::new(2.0).unwrap();
        for _ in 0..10_000 {
            let a: Vec<f64> = (0..3).map(|_| r.gen_range(-2.0..2.0)).collect();
            let b: Vec<f64> = (0..3).map(|_| r.gen_range(-2.0..2.0)).collect();
            ensure(nash_ensemble_multi(&[a.clone(), b.clone()], &cfg).unwrap() == nash_ensemble(&a, &b).unwrap(), || {
                format!("{a:?} {b:?}")
            })?;
        }
        Ok("10000 pairs".into())
    }));

    out.push(check("equilibrium strategies feasible and best responses", || {
        let mut r = rng(seed + 6);
        for _ in 0..200 {
            let inst = separable_instance(&mut r, 8, 2.0, 1e-3);
            let cfg = GameConfig::new(inst.w_sup).unwrap();
            let sol = nash_strategies(&inst.w1, &inst.w2, &cfg).map_err(|e| e.to_string())?;
            let ne = nash_ensemble(&inst.w1, &inst.w2).unwrap();
            ensure(dist_inf(&sol.ensemble, &ne) <= 1e-12, || "ensemble differs from closed form".into())?;
            for (e, s) in sol.strategies.iter().enumerate() {
                ensure(numerics::norm_inf(s) <= inst.w_sup + 1e-12, || "strategy outside box".into())?;
                for (i, v) in s.iter().enumerate() {
                    ensure(sol.boundary_flags[e][i] == BoundaryStatus::of(*v, inst.w_sup), || "flag mismatch".into())?;
                }
            }
            let ok1 = is_box_best_response(&inst.m1, &sol.strategies[0], &sol.strategies[1], inst.w_sup, 1e-9);
            let ok2 = is_box_best_response(&inst.m2, &sol.strategies[1], &sol.strategies[0], inst.w_sup, 1e-9);
            ensure(ok1 && ok2, || format!("KKT fails for {:?} / {:?}", inst.w1, inst.w2))?;
        }
        Ok("200 instances".into())
    }));

    out.push(check("least-squares routes agree on confounder presets", || {
        for setting in [Setting::PHom, Setting::PHet] {
            let mut cfg = preset(setting, 3, 4, seed).map_err(|e| e.to_string())?;
            for e in &mut cfg.envs {
                e.alpha = vec![0.0; 4];
            }
            for env in 0..2 {
                let a = least_squares(&analytic_moments(&cfg, env).unwrap()).unwrap().w_star;
                let b = confounder_closed_form(&cfg, env).unwrap();
                ensure(dist_inf(&a, &b.w_star) <= 1e-8, || format!("{setting} env {env}"))?;
                ensure(b.invariant() == cfg.gamma.as_slice(), || "causal block differs from gamma".into())?;
            }
        }
        Ok("P-HOM and P-HET".into())
    }));

    out.push(check("erm continuous in mixture weight", || {
        let mut r = rng(seed + 7);
        let inst = separable_instance(&mut r, 6, 2.0, 0.1);
        for k in 0..=10 {
            let pi = k as f64 / 10.0 * (1.0 - 1e-6);
            let a = erm_solution(&inst.m1, &inst.m2, pi).unwrap();
            let b = erm_solution(&inst.m1, &inst.m2, pi + 1e-6).unwrap();
            ensure(norm2(&numerics::sub(&a, &b)) <= 1e-3, || format!("jump at {pi}"))?;
        }
        Ok("11 grid points".into())
    }));

    out.push(check("best-response dynamics reach the closed form", || {
        let mut r = rng(seed + 8);
        let params = DynamicsParams::with_w_sup(2.0);
        for _ in 0..100 {
            let inst = separable_instance(&mut r, 6, 2.0, 0.05);
            let ne = nash_ensemble(&inst.w1, &inst.w2).unwrap();
            let ex = exact_brd(&inst.m1, &inst.m2, &params).map_err(|e| e.to_string())?;
            let cl = clamp_brd(&inst.w1, &inst.w2, &params).map_err(|e| e.to_string())?;
            ensure(ex.converged && cl.converged, || "did not converge".into())?;
            ensure(dist_inf(&ex.final_ensemble(), &ne) <= 1e-8, || "exact dynamic off".into())?;
            ensure(dist_inf(&cl.final_ensemble(), &ne) <= 1e-8, || "clamp dynamic off".into())?;
            for rec in &ex.rounds {
                ensure(rec.strategies.iter().all(|s| numerics::norm_inf(s) <= 2.0 + 1e-12), || "left the box".into())?;
            }
            let split = index_split(&inst.w1, &inst.w2, 1e-9).unwrap();
            if let Ok(bound) = iteration_bound(&inst.w1, &inst.w2, 2.0, &split) {
                ensure(ex.iterations as f64 <= bound.ceil() + 2.0, || format!("{} rounds > bound {bound}", ex.iterations))?;
            }
        }
        Ok("100 instances".into())
    }));

    out.push(check("acting environment never increases its risk", || {
        let mut r = rng(seed + 9);
        for _ in 0..50 {
            let inst = separable_instance(&mut r, 6, 2.0, 0.05);
            let t = exact_brd(&inst.m1, &inst.m2, &DynamicsParams::with_w_sup(2.0)).unwrap();
            let mut prev = vec![0.0, 0.0];
            for rec in &t.rounds {
                let e = rec.mover.unwrap();
                ensure(rec.risks[e] <= prev[e] + 1e-12, || format!("risk rose {} -> {}", prev[e], rec.risks[e]))?;
                prev = rec.risks.clone();
            }
        }
        Ok("50 instances".into())
    }));

    out.push(check("unconstrained dynamic diverges", || {
        let mut r = rng(seed + 10);
        let params = DynamicsParams { divergence_threshold: Some(1e3), ..DynamicsParams::with_w_sup(1e6) };
        for _ in 0..20 {
            let w1: Vec<f64> = (0..3).map(|_| r.gen_range(-1.0..1.0)).collect();
            let w2: Vec<f64> = (0..3).map(|_| r.gen_range(-1.0..1.0)).collect();
            let t = clamp_brd(&w1, &w2, &params).unwrap();
            ensure(t.max_abs_strategy() > 1e3, || "no growth".into())?;
        }
        Ok("20 instances".into())
    }));

    out.push(check("sampling and sgd are seed deterministic", || {
        let cfg = preset(Setting::FHom, 2, 2, seed).unwrap();
        let s: Vec<_> = (0..2).map(|e| sample_environment(&cfg, e, 200, seed).unwrap()).collect();
        let again: Vec<_> = (0..2).map(|e| sample_environment(&cfg, e, 200, seed).unwrap()).collect();
        ensure(s == again, || "samples differ".into())?;
        let params = DynamicsParams { epochs: 5, seed, ..DynamicsParams::default() };
        ensure(sgd_brd(&s, &params).unwrap() == sgd_brd(&s, &params).unwrap(), || "traces differ".into())?;
        Ok("identical reruns".into())
    }));

    out
}
