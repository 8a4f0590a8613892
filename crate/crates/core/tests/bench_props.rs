use corrdrift::bench::{
    integrated_sq_error, mean_std, mise, parametric_rate_check, run_study, tab0_stats, trace_bound_check, BasisChoice,
    CorrelationFamily, ExperimentConfig, TraceBoundSpec,
};
use corrdrift::estimator::{fit_fixed_m, GateSpec};
use corrdrift::simulate::{simulate_ensemble, SimulationSpec};
use corrdrift::{Basis, CorrelationMatrix, ModelId, ModelSpec};

fn small_config() -> ExperimentConfig {
    ExperimentConfig {
        models: vec![ModelId::Ex1, ModelId::Ex2],
        bases: vec![BasisChoice::Hermite, BasisChoice::Cosine],
        n_paths: 10,
        horizon: 10.0,
        replicates: 3,
        rhos: vec![0.0, 0.5],
        ..Default::default()
    }
}

#[test]
fn mise_of_exact_and_offset_estimates() {
    let model = ModelSpec::paper(ModelId::Ex1).unwrap();
    let (a, b) = model.interval();
    assert!(integrated_sq_error(|x| model.drift(x), |x| model.drift(x), (a, b), 500).unwrap().abs() < 1e-30);
    let c = 0.3;
    let err = integrated_sq_error(|x| model.drift(x) + c, |x| model.drift(x), (a, b), 500).unwrap();
    assert!((err - c * c * (b - a)).abs() < 1e-10);
    assert!(integrated_sq_error(|x: f64| x, |x| x, (a, b), 1).is_err());
}

#[test]
fn mise_grid_refinement() {
    let model = ModelSpec::paper(ModelId::Ex1).unwrap();
    let r = CorrelationMatrix::identity(20).unwrap();
    let ens = simulate_ensemble(&model, &SimulationSpec::new(20, 20.0, 0.1, 1), &r).unwrap();
    let basis = Basis::hermite(5).unwrap();
    let est = fit_fixed_m(&ens, &basis, 5, None, &GateSpec::default()).unwrap();
    let coarse = mise(&est, &model, 500).unwrap();
    let fine = mise(&est, &model, 5000).unwrap();
    assert!(((coarse - fine) / fine).abs() < 1e-4, "{coarse} vs {fine}");
}

#[test]
fn mean_std_conventions() {
    assert_eq!(mean_std(&[3.0]), (3.0, 0.0));
    let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(m, 2.5);
    assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
}

#[test]
fn study_is_deterministic_and_complete() {
    let cfg = small_config();
    let a = run_study(&cfg).unwrap();
    let b = run_study(&cfg).unwrap();
    assert_eq!(a.rows, b.rows);
    assert_eq!(a.rows.len(), 2 * 2 * 2);
    assert!(a.failures.is_empty());
    for row in &a.rows {
        assert_eq!(row.replicates, 3);
        assert!(row.std_mise_x100 >= 0.0 && row.std_dim >= 0.0);
        let recs: Vec<_> = a.records_for(row.model, row.basis, row.rho).collect();
        assert_eq!(recs.len(), 3);
        for r in recs {
            assert!(r.oracle_mise <= r.mise + 1e-15);
        }
    }
    let other = run_study(&ExperimentConfig { seed: 2, ..cfg }).unwrap();
    assert_ne!(a.rows, other.rows);
}

#[test]
fn single_replicate_has_zero_spread() {
    let cfg = ExperimentConfig { replicates: 1, ..small_config() };
    for row in run_study(&cfg).unwrap().rows {
        assert_eq!(row.std_mise_x100, 0.0);
        assert_eq!(row.std_dim, 0.0);
    }
}

#[test]
fn config_validation() {
    let bad = [
        ExperimentConfig { replicates: 0, ..Default::default() },
        ExperimentConfig { n_paths: 0, ..Default::default() },
        ExperimentConfig { dt: -0.1, ..Default::default() },
        ExperimentConfig { rhos: vec![1.5], ..Default::default() },
        ExperimentConfig { mise_grid: 1, ..Default::default() },
    ];
    for cfg in bad {
        assert!(cfg.validate().is_err(), "{cfg:?}");
    }
    assert!(ExperimentConfig::default().validate().is_ok());
}

#[test]
fn parametric_formulas() {
    let (n, t, s) = (50usize, 2.0, 0.7);
    let nt = n as f64 * t;
    let id = parametric_rate_check(t, &CorrelationMatrix::identity(n).unwrap(), 0.1, s, 10, 0).unwrap();
    assert!((id.formula_mse - s * s / nt).abs() < 1e-15);
    let rho = 0.3;
    let eq = parametric_rate_check(t, &CorrelationMatrix::equicorrelated(n, rho).unwrap(), 0.1, s, 10, 0).unwrap();
    assert!((eq.formula_mse - s * s / nt * (1.0 + (n - 1) as f64 * rho)).abs() < 1e-12);
    let a = 0.4;
    let tri = parametric_rate_check(t, &CorrelationMatrix::tridiagonal_factor(n, a).unwrap(), 0.1, s, 10, 0).unwrap();
    let want = s * s / nt * (1.0 + 2.0 * (1.0 - 1.0 / n as f64) * (a * (1.0 - a)).sqrt());
    assert!((tri.formula_mse - want).abs() < 1e-12);
}

#[test]
fn parametric_equicorrelated_does_not_vanish() {
    // (σ²/NT)(1 + (N−1)ρ) → σ²ρ/T as N grows.
    let rho = 0.5;
    let small = parametric_rate_check(1.0, &CorrelationMatrix::equicorrelated(10, rho).unwrap(), 0.0, 1.0, 10, 0).unwrap();
    let large = parametric_rate_check(1.0, &CorrelationMatrix::equicorrelated(200, rho).unwrap(), 0.0, 1.0, 10, 0).unwrap();
    assert!(large.formula_mse > 0.45 && small.formula_mse > large.formula_mse);
}

#[test]
fn parametric_monte_carlo_concentrates() {
    let r = CorrelationMatrix::toeplitz(30, 0.5).unwrap();
    let reps = 10_000;
    let c = parametric_rate_check(1.0, &r, 0.2, 1.0, reps, 17).unwrap();
    assert!((c.mc_mse / c.formula_mse - 1.0).abs() < 3.0 * 5.0 / (reps as f64).sqrt());
}

#[test]
fn tab0_values() {
    let rows = tab0_stats(100, &[0.0, 0.5, 0.9]).unwrap();
    assert_eq!((rows[0].abs_sum, rows[0].op_norm), (1.0, 1.0));
    assert!((rows[1].abs_sum - 2.96).abs() < 0.01);
    assert!((rows[2].abs_sum - 17.2).abs() < 0.01);
    assert!((rows[1].op_norm - 2.99).abs() < 0.05);
    assert!((rows[2].op_norm - 17.9).abs() < 0.05);
}

#[test]
fn correlation_families_build() {
    for fam in [
        CorrelationFamily::Identity,
        CorrelationFamily::Toeplitz,
        CorrelationFamily::Tridiagonal,
        CorrelationFamily::Equicorrelated,
        CorrelationFamily::BlockToeplitz { block: 5 },
    ] {
        let r = fam.build::<f64>(20, 0.3).unwrap();
        assert_eq!(r.size(), 20);
        assert!(r.cholesky().is_ok());
    }
}

#[test]
fn trace_bound_holds_on_a_small_run() {
    let model = ModelSpec::paper(ModelId::Ex1).unwrap();
    let (a, b) = model.interval();
    let basis = Basis::cosine(a, b, 3).unwrap();
    let r = CorrelationMatrix::toeplitz(10, 0.5).unwrap();
    let spec = TraceBoundSpec { m: 3, n_paths: 10, horizon: 10.0, dt: 0.1, replicates: 40, seed: 1 };
    let rep = trace_bound_check(&model, &basis, &r, &spec).unwrap();
    assert!(rep.trace > 0.0);
    assert!(rep.trace <= 1.1 * rep.bound, "{} vs {}", rep.trace, rep.bound);
    assert!(rep.psi.is_symmetric(1e-12) && rep.psi_sigma.is_symmetric(1e-12));
    let transformed = ModelSpec::paper(ModelId::Ex4).unwrap();
    assert!(trace_bound_check(&transformed, &basis, &r, &spec).is_err());
}

#[test]
fn more_paths_lower_mise() {
    // Statistical: doubling N at ρ = 0 lowers the mean risk.
    let base = ExperimentConfig { n_paths: 20, horizon: 20.0, replicates: 50, ..Default::default() };
    let small = run_study(&base).unwrap().rows[0].mean_mise_x100;
    let large = run_study(&ExperimentConfig { n_paths: 40, ..base }).unwrap().rows[0].mean_mise_x100;
    assert!(large < small, "{large} vs {small}");
}
