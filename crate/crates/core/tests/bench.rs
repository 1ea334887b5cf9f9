use clrg::bench::{
    estimation_error, fit_method, literature_values, mean_stderr, mix_seed, run_experiment, planar_comparison_with, ExperimentSpec,
    Method,
};
use clrg::dynamics::DynamicsParams;
use clrg::sem::{preset, sample_environment, Setting};

#[test]
fn mean_and_standard_error() {
    let (m, se) = mean_stderr(&[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(m, 2.5);
    // sample variance 5/3
    assert!((se - (5.0f64 / 3.0).sqrt() / 2.0).abs() < 1e-15);
    assert_eq!(mean_stderr(&[7.0]), (7.0, 0.0));
}

#[test]
fn seeds_mix_all_parts() {
    assert_eq!(mix_seed(&[1, 2]), mix_seed(&[1, 2]));
    assert_ne!(mix_seed(&[1, 2]), mix_seed(&[2, 1]));
    assert_ne!(mix_seed(&[1]), mix_seed(&[1, 0]));
}

#[test]
fn method_names_round_trip() {
    for m in Method::ALL {
        assert_eq!(m.name().parse::<Method>().unwrap(), m);
    }
    assert_eq!("clrg-sgd".parse::<Method>().unwrap(), Method::ClrgSgd);
    assert!("nope".parse::<Method>().is_err());
}

#[test]
fn oracle_and_erm_fits() {
    let cfg = preset(Setting::FHom, 2, 3, 1).unwrap();
    let s: Vec<_> = (0..2).map(|e| sample_environment(&cfg, e, 100, 1).unwrap()).collect();
    let p = DynamicsParams::default();
    let oracle = fit_method(Method::Oracle, &s, &p, 2).unwrap();
    assert_eq!(estimation_error(&oracle, 2, 3).unwrap(), 0.0);
    assert_eq!(fit_method(Method::Erm, &s, &p, 2).unwrap().len(), 5);
}

#[test]
fn experiment_report_layout_and_determinism() {
    let spec = ExperimentSpec {
        p: 2,
        q: 2,
        sample_sizes: vec![30, 60],
        trials: 3,
        methods: vec![Method::ClrgSgd, Method::Erm, Method::Oracle],
        seed: 5,
        dynamics: DynamicsParams { epochs: 10, ..DynamicsParams::default() },
        ..ExperimentSpec::default()
    };
    let a = run_experiment(&spec).unwrap();
    let b = run_experiment(&spec).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
    let csv = a.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "setting,method,n,mean_error,stderr,trials");
    assert_eq!(lines.len(), 1 + 2 * 3);
    assert!(lines[1].starts_with("F-HOM,"));
    let oracle = a.cell(Method::Oracle, 60).unwrap();
    assert_eq!((oracle.mean_error, oracle.errors.len()), (0.0, 3));
    assert!(ExperimentSpec { sample_sizes: vec![60, 30], ..spec.clone() }.validate().is_err());
    assert!(ExperimentSpec { trials: 0, ..spec }.validate().is_err());
}

#[test]
fn two_dimensional_comparison_rows() {
    let params = DynamicsParams { epochs: 20, ..DynamicsParams::default() };
    let rep = planar_comparison_with(3, 200, &params).unwrap();
    assert_eq!(rep.rows.len(), 8);
    assert_eq!(rep.row("Oracle").unwrap().error, 0.0);
    let c = rep.row("C-LRG exact (w_sup=2)").unwrap();
    assert!(c.model.iter().all(|v| v.abs() <= 4.0));
    assert_eq!(rep, planar_comparison_with(3, 200, &params).unwrap());
    assert!(rep.to_text().contains("ERM"));
}

#[test]
fn literature_tables_are_complete() {
    for s in Setting::ALL {
        let rows = literature_values(s);
        assert_eq!(rows.len(), 24);
        assert!(rows.iter().all(|r| r.2 >= 0.0 && r.3 >= 0.0));
    }
}
