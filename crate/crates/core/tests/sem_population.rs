use clrg::numerics::{dist_inf, Matrix};
use clrg::population::{
    analytic_moments, confounder_closed_form, erm_solution, least_squares, least_squares_split, population_moments,
    EnvironmentMoments,
};
use clrg::sem::{confounder_only_config, preset, preset_with, sample_environment, PresetOptions, Setting};
use clrg::Error;

#[test]
fn preset_noise_levels() {
    let hom = preset(Setting::PHom, 3, 4, 5).unwrap();
    assert_eq!((hom.envs[0].sigma_eps, hom.envs[1].sigma_eps), (0.2, 2.0));
    assert_eq!(hom.envs[1].sigma_zeta, vec![1.0; 4]);
    assert_eq!(hom.s, 4);
    let het = preset(Setting::FHet, 3, 4, 5).unwrap();
    assert_eq!((het.envs[0].sigma_eps, het.envs[1].sigma_eps), (1.0, 1.0));
    assert_eq!(het.envs[0].sigma_zeta, vec![0.2; 4]);
    assert_eq!(het.envs[1].sigma_zeta, vec![2.0; 4]);
    assert_eq!(het.gamma, vec![1.0; 3]);
    assert_eq!(het.ideal(), vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    assert!(preset(Setting::FHom, 0, 2, 1).is_err());
}

#[test]
fn shared_and_independent_parameters() {
    let shared = preset(Setting::PHom, 2, 3, 9).unwrap();
    assert_eq!(shared.envs[0].alpha, shared.envs[1].alpha);
    assert_eq!(shared.envs[0].theta, shared.envs[1].theta);
    let opts = PresetOptions { shared_parameters: false, ..PresetOptions::default() };
    let indep = preset_with(Setting::PHom, 2, 3, 9, &opts).unwrap();
    assert_ne!(indep.envs[0].alpha, indep.envs[1].alpha);
}

#[test]
fn sampling_is_deterministic_and_seed_sensitive() {
    let cfg = preset(Setting::FHet, 2, 2, 3).unwrap();
    let a = sample_environment(&cfg, 0, 50, 11).unwrap();
    assert_eq!(a, sample_environment(&cfg, 0, 50, 11).unwrap());
    assert_ne!(a, sample_environment(&cfg, 0, 50, 12).unwrap());
    assert_ne!(a.y, sample_environment(&cfg, 1, 50, 11).unwrap().y);
    assert_eq!((a.x.rows(), a.x.cols(), a.len()), (50, 4, 50));
    assert!(matches!(sample_environment(&cfg, 2, 5, 0), Err(Error::InvalidEnvIndex { .. })));
}

#[test]
fn closed_form_with_identity_loadings() {
    // Theta = I, sigma_h = 1: spurious coefficient i is eta_i / (1 + sigma_zeta_i^2)
    let c = confounder_only_config(1, &Matrix::identity(2), &[1.0, -2.0], &[0.5, 1.0], &[1.0, 0.5], &[2.0, 1.0]).unwrap();
    assert!(c.spurious_vary);
    let w1 = confounder_closed_form(&c.config, 0).unwrap();
    let w2 = confounder_closed_form(&c.config, 1).unwrap();
    assert!(dist_inf(&w1.w_star, &[1.0, 0.5, -1.6]) < 1e-14);
    assert!(dist_inf(&w2.w_star, &[1.0, 0.1, 0.5]) < 1e-14);
    let ls = least_squares(&analytic_moments(&c.config, 0).unwrap()).unwrap();
    assert!(dist_inf(&ls.w_star, &w1.w_star) < 1e-12);
    let same = confounder_only_config(1, &Matrix::identity(1), &[1.0], &[1.0], &[1.0], &[1.0]).unwrap();
    assert!(!same.spurious_vary);
}

#[test]
fn non_orthogonal_loadings_rejected() {
    let theta = Matrix::from_rows(&[vec![1.0, 0.5], vec![0.0, 1.0]]).unwrap();
    let r = confounder_only_config(1, &theta, &[1.0, 1.0], &[1.0, 1.0], &[1.0, 1.0], &[1.0, 1.0]);
    assert!(matches!(r, Err(Error::NotOrthogonal { .. })));
}

#[test]
fn anticausal_configs_need_general_moments() {
    let cfg = preset(Setting::FHom, 2, 2, 4).unwrap();
    assert!(matches!(analytic_moments(&cfg, 0), Err(Error::AntiCausalPresent { .. })));
    assert!(population_moments(&cfg, 0).is_ok());
    let mut zero = cfg.clone();
    for e in &mut zero.envs {
        e.alpha = vec![0.0; 2];
    }
    let a = analytic_moments(&zero, 1).unwrap();
    let b = population_moments(&zero, 1).unwrap();
    assert!(a.sigma.sub(&b.sigma).unwrap().max_abs() < 1e-12);
    assert!(dist_inf(&a.rho, &b.rho) < 1e-12);
}

#[test]
fn population_moments_match_monte_carlo() {
    for setting in Setting::ALL {
        let cfg = preset(setting, 2, 2, 21).unwrap();
        for env in 0..2 {
            let m = population_moments(&cfg, env).unwrap();
            let s = EnvironmentMoments::from_sample(&sample_environment(&cfg, env, 200_000, 5).unwrap()).unwrap();
            let scale = 1.0 + m.sigma.max_abs();
            let ds = m.sigma.sub(&s.sigma).unwrap().max_abs() / scale;
            let dr = dist_inf(&m.rho, &s.rho) / scale;
            assert!(ds < 0.03 && dr < 0.03, "{setting} env {env}: {ds} {dr}");
        }
    }
}

#[test]
fn erm_mixture_of_diagonal_environments() {
    let m1 = EnvironmentMoments::new(Matrix::from_diag(&[1.0, 2.0]), vec![1.0, 2.0]).unwrap();
    let m2 = EnvironmentMoments::new(Matrix::from_diag(&[3.0, 1.0]), vec![-3.0, 0.5]).unwrap();
    // per component (pi s1 w1 + (1-pi) s2 w2) / (pi s1 + (1-pi) s2)
    let w = erm_solution(&m1, &m2, 0.25).unwrap();
    let expect = [(0.25 * 1.0 - 0.75 * 3.0) / (0.25 + 2.25), (0.25 * 2.0 + 0.75 * 0.5) / (0.5 + 0.75)];
    assert!(dist_inf(&w, &expect) < 1e-14);
    assert!(dist_inf(&erm_solution(&m1, &m2, 1.0).unwrap(), &[1.0, 1.0]) < 1e-15);
    assert!(erm_solution(&m1, &m2, 1.5).is_err());
}

#[test]
fn split_views() {
    let m = EnvironmentMoments::new(Matrix::from_diag(&[2.0, 4.0, 1.0]), vec![2.0, 2.0, -1.0]).unwrap();
    let s = least_squares_split(&m, 1).unwrap();
    assert_eq!((s.invariant().len(), s.variant().len()), (1, 2));
    assert!(dist_inf(s.invariant(), &[1.0]) < 1e-15);
    assert!(dist_inf(s.variant(), &[0.5, -1.0]) < 1e-15);
    assert!(least_squares_split(&m, 4).is_err());
}
