use corrdrift::estimator::{
    contrast, empirical_gram, empirical_norm_sq, empirical_target, fit_fixed_m, noise_projection, EmpiricalMoments,
    GateSpec,
};
use corrdrift::simulate::{simulate_ensemble, simulate_with_factor, SimulationSpec};
use corrdrift::{Basis, CorrelationMatrix, Matrix, ModelId, ModelSpec, PathEnsemble};

fn ex1_ensemble(rho: f64, seed: u64) -> PathEnsemble {
    let model = ModelSpec::paper(ModelId::Ex1).unwrap();
    let r = CorrelationMatrix::toeplitz(20, rho).unwrap();
    simulate_ensemble(&model, &SimulationSpec::new(20, 20.0, 0.1, seed), &r).unwrap()
}

fn sigma1(x: f64) -> f64 {
    ModelSpec::paper(ModelId::Ex1).unwrap().diffusion(x)
}

/// Solves `y = f(y)`-free ODE `y' = b(y)` with RK4 substeps, sampled every `dt`.
fn ode_ensemble(b: impl Fn(f64) -> f64, x0s: &[f64], horizon: f64, dt: f64) -> PathEnsemble {
    let n_steps = (horizon / dt).round() as usize;
    let sub = 50;
    let h = dt / sub as f64;
    let values = Matrix::from_fn(x0s.len(), n_steps + 1, |_, _| 0.0);
    let mut values = values;
    for (i, &x0) in x0s.iter().enumerate() {
        let mut y = x0;
        values[(i, 0)] = y;
        for k in 1..=n_steps {
            for _ in 0..sub {
                let k1 = b(y);
                let k2 = b(y + h / 2.0 * k1);
                let k3 = b(y + h / 2.0 * k2);
                let k4 = b(y + h * k3);
                y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            }
            values[(i, k)] = y;
        }
    }
    PathEnsemble::new(values, dt, 0, ModelId::Custom, "none").unwrap()
}

#[test]
fn gram_matches_naive_double_loop() {
    let ens = ex1_ensemble(0.5, 1);
    let basis = Basis::hermite(8).unwrap();
    let g = empirical_gram(&ens, &basis, 8, Some(&sigma1)).unwrap();
    let nt = ens.total_time();
    let mut naive = vec![vec![0.0; 8]; 8];
    let mut naive_s = vec![vec![0.0; 8]; 8];
    for p in ens.paths() {
        for &x in &p[..p.len() - 1] {
            for j in 0..8 {
                for l in 0..8 {
                    let v = basis.eval(j + 1, x).unwrap() * basis.eval(l + 1, x).unwrap() * ens.dt() / nt;
                    naive[j][l] += v;
                    naive_s[j][l] += v * sigma1(x) * sigma1(x);
                }
            }
        }
    }
    let ps = g.psi_hat_sigma.as_ref().unwrap();
    for j in 0..8 {
        for l in 0..8 {
            assert!((g.psi_hat[(j, l)] - naive[j][l]).abs() < 1e-12);
            assert!((ps[(j, l)] - naive_s[j][l]).abs() < 1e-12);
        }
    }
}

#[test]
fn gram_nesting_and_target_nesting() {
    let ens = ex1_ensemble(0.9, 2);
    let basis = Basis::cosine(-0.9, 0.8, 12).unwrap();
    let moments = EmpiricalMoments::compute(&ens, &basis, 12, None).unwrap();
    let big = moments.gram(12).unwrap();
    let big_target = moments.target(12).unwrap();
    for m in 1..12 {
        let small = empirical_gram(&ens, &basis, m, None).unwrap();
        assert!(small.psi_hat.max_abs_diff(&big.psi_hat.leading(m)) < 1e-14);
        let t = empirical_target(&ens, &basis, m).unwrap();
        for j in 0..m {
            assert!((t[j] - big_target[j]).abs() < 1e-14);
        }
    }
}

#[test]
fn contrast_identity_and_monotone_norm() {
    let ens = ex1_ensemble(0.5, 3);
    for basis in [Basis::hermite(10).unwrap(), Basis::cosine(-0.9, 0.8, 10).unwrap()] {
        let mut prev = 0.0;
        let mut checked = 0;
        for m in 1..=10 {
            let est = fit_fixed_m(&ens, &basis, m, None, &GateSpec::default()).unwrap();
            if est.truncated {
                continue;
            }
            checked += 1;
            let norm = empirical_norm_sq(&ens, &basis, &est.theta);
            let gamma = contrast(&ens, |x| est.eval(x));
            assert!((gamma + norm).abs() < 1e-10, "m={m}: γ={gamma} ‖·‖²={norm}");
            assert!(norm >= prev - 1e-12, "norm decreased at m={m}");
            prev = norm;
        }
        assert!(checked >= 5);
    }
}

#[test]
fn target_splits_into_drift_and_noise_parts() {
    // X̂_m = ⟨b, φ⟩_N + Ê_m exactly for the Euler chain.
    let model = ModelSpec::paper(ModelId::Ex1).unwrap();
    let r = CorrelationMatrix::toeplitz(10, 0.5).unwrap();
    let sim = simulate_with_factor(&model, &SimulationSpec::new(10, 10.0, 0.1, 4), &r.cholesky().unwrap(), "toeplitz").unwrap();
    let basis = Basis::hermite(6).unwrap();
    let target = empirical_target(&sim.ensemble, &basis, 6).unwrap();
    let noise = noise_projection(&sim.ensemble, &sim.increments, &basis, 6, &sigma1).unwrap();
    let nt = sim.ensemble.total_time();
    for j in 0..6 {
        let drift_part: f64 = sim
            .ensemble
            .paths()
            .map(|p| p[..p.len() - 1].iter().map(|&x| model.drift(x) * basis.eval(j + 1, x).unwrap()).sum::<f64>())
            .sum::<f64>()
            * sim.ensemble.dt()
            / nt;
        assert!((target[j] - drift_part - noise[j]).abs() < 1e-12);
    }
}

#[test]
fn noiseless_target_approaches_drift_projection() {
    let basis = Basis::cosine(0.0, 1.0, 2).unwrap();
    let b = |x: f64| 2.0 * basis.eval(1, x).unwrap() + basis.eval(2, x).unwrap();
    let x0s: Vec<f64> = (0..10).map(|i| i as f64 / 40.0).collect();
    let mut errs = Vec::new();
    for dt in [2e-3, 1e-3] {
        let ens = ode_ensemble(b, &x0s, 0.2, dt);
        let target = empirical_target(&ens, &basis, 2).unwrap();
        let gram = empirical_gram(&ens, &basis, 2, None).unwrap();
        // ⟨b, φ_j⟩_N = (Ψ̂ (2, 1))_j
        let proj = gram.psi_hat.matvec(&[2.0, 1.0]).unwrap();
        errs.push((target[0] - proj[0]).abs().max((target[1] - proj[1]).abs()));
    }
    assert!(errs[1] < 1e-2);
    assert!(errs[0] / errs[1] > 1.8, "{errs:?}");
}

#[test]
fn constant_paths_give_zero_target() {
    let ens = PathEnsemble::new(Matrix::from_fn(3, 11, |i, _| i as f64 * 0.1), 0.1, 0, ModelId::Custom, "none").unwrap();
    let t = empirical_target(&ens, &Basis::hermite(4).unwrap(), 4).unwrap();
    assert!(t.iter().all(|&v| v == 0.0));
}

#[test]
fn first_cosine_target_telescopes() {
    let ens = ex1_ensemble(0.0, 5);
    let (a, b) = (-10.0, 10.0);
    let basis = Basis::cosine(a, b, 1).unwrap();
    let t = empirical_target(&ens, &basis, 1).unwrap()[0];
    let sum: f64 = ens.paths().map(|p| p[p.len() - 1] - p[0]).sum();
    let want = (b - a as f64).powf(-0.5) * sum / ens.total_time();
    assert!((t - want).abs() < 1e-12);
}

#[test]
fn failed_gate_gives_zero_estimate() {
    let ens = ex1_ensemble(0.0, 6);
    let basis = Basis::hermite(5).unwrap();
    for gate in [GateSpec::default(), GateSpec::truncation(12.0), GateSpec::collection(12.0)] {
        let est = fit_fixed_m(&ens, &basis, 5, None, &gate.with_scale(0.0)).unwrap();
        assert!(est.truncated);
        assert!(est.theta.iter().all(|&v| v == 0.0));
        assert_eq!(est.eval(0.3), 0.0);
    }
}

#[test]
fn f32_fit_tracks_f64() {
    let ens = ex1_ensemble(0.0, 7);
    let values32 = corrdrift::linalg::Matrix::<f32>::from_fn(ens.n_paths(), ens.n_steps() + 1, |i, k| ens.path(i)[k] as f32);
    let ens32 = corrdrift::PathEnsemble32::new(values32, 0.1, 7, ModelId::Ex1, "identity").unwrap();
    let e64 = fit_fixed_m(&ens, &Basis::hermite(4).unwrap(), 4, None, &GateSpec::default()).unwrap();
    let e32 = fit_fixed_m(&ens32, &corrdrift::Basis32::hermite(4).unwrap(), 4, None, &GateSpec::default()).unwrap();
    for (a, b) in e64.theta.iter().zip(&e32.theta) {
        assert!((a - *b as f64).abs() < 1e-3);
    }
}
