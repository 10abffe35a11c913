//! The `checks` subcommand: run the discrete-identity suite on the
//! configured grid and report one PASS/FAIL line per check.

use std::time::Instant;

use awlab_core::adjoint::{
    adjoint_inner_product, adjoint_norm, solve_backward, AdjointState,
};
use awlab_core::forward::{boundary_pairing, simulate, ControlSignal};
use awlab_core::grid::{
    boundary_laplace_beltrami, dirichlet_interior, geometric_condition_check, laplacian,
    quadrature_boundary, trace_gamma1,
};
use awlab_core::hum::{
    make_cutoff, obs_norm_sq, random_unit_adjoint, smooth_step, HumSetup, ObsNorm,
};
use awlab_core::model::{
    self, adjoint_dissipativity_residual, dissipativity_residual, energy, hooke_invariant,
    inner_product, mean_interior, project_constraints, PhysicalParams, StateVector,
};
use awlab_core::stochastic::{sample_increment, sde_step, NoiseModel};
use awlab_core::stepper::{StepDirection, Stepper};
use awlab_core::AnnulusGrid;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::config::ExperimentConfig;
use crate::CliError;

type CheckResult = Result<(), String>;

fn random_state(g: &AnnulusGrid, p: &PhysicalParams, seed: u64) -> StateVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_unit_adjoint(g, p, &mut rng).as_state()
}

fn check_summation_by_parts(p: &PhysicalParams, g: &AnnulusGrid) -> CheckResult {
    let _ = p;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10 {
        let mut a = g.zero_interior();
        let mut b = g.zero_interior();
        a.mapv_inplace(|_| rng.random::<f64>() - 0.5);
        b.mapv_inplace(|_| rng.random::<f64>() - 0.5);
        let phi = ndarray::Array1::from_iter((0..g.ntheta).map(|_| rng.random::<f64>() - 0.5));
        let la = laplacian(&a, &phi, g);
        let mut lhs = 0.0;
        for i in 0..g.nr {
            for j in 0..g.ntheta {
                lhs += g.cell_weights[i] * la[[i, j]] * b[[i, j]];
            }
        }
        lhs += dirichlet_interior(&a, &b, g);
        let rhs = boundary_pairing(&phi, &trace_gamma1(&b, g), g);
        let scale = 1.0 + lhs.abs().max(rhs.abs());
        if (lhs - rhs).abs() > 1e-11 * scale {
            return Err(format!("SBP residual {:.3e} (scale {scale:.3e})", (lhs - rhs).abs()));
        }
    }
    Ok(())
}

fn check_dissipativity(p: &PhysicalParams, g: &AnnulusGrid) -> CheckResult {
    for seed in 0..5 {
        let s = random_state(g, p, 100 + seed);
        let n2 = inner_product(&s, &s, p, g).map_err(|e| e.to_string())?;
        let fwd = dissipativity_residual(&s, p, g);
        let adj = adjoint_dissipativity_residual(&s, p, g);
        if fwd.abs() > 1e-12 * (1.0 + n2) {
            return Err(format!("forward generator residual {fwd:.3e}"));
        }
        if adj.abs() > 1e-12 * (1.0 + n2) {
            return Err(format!("adjoint generator residual {adj:.3e}"));
        }
    }
    Ok(())
}

fn check_inner_product_symmetry(p: &PhysicalParams, g: &AnnulusGrid) -> CheckResult {
    for seed in 0..100 {
        let a = random_state(g, p, 200 + seed);
        let b = random_state(g, p, 300 + seed);
        let ab = inner_product(&a, &b, p, g).map_err(|e| e.to_string())?;
        let ba = inner_product(&b, &a, p, g).map_err(|e| e.to_string())?;
        if (ab - ba).abs() > 1e-14 * (1.0 + ab.abs()) {
            return Err(format!("asymmetry {:.3e}", (ab - ba).abs()));
        }
    }
    Ok(())
}

fn check_quotient_invariance(p: &PhysicalParams, g: &AnnulusGrid) -> CheckResult {
    for seed in 0..20 {
        let s = random_state(g, p, 400 + seed);
        let mut shifted = s.clone();
        shifted.u.mapv_inplace(|x| x + 3.7);
        let e0 = energy(&s, p, g).map_err(|e| e.to_string())?.total;
        let e1 = energy(&shifted, p, g).map_err(|e| e.to_string())?.total;
        if (e0 - e1).abs() > 1e-12 * (1.0 + e0) {
            return Err(format!("energy changed by {:.3e} under constant shift", (e0 - e1).abs()));
        }
    }
    Ok(())
}

fn check_projection(p: &PhysicalParams, g: &AnnulusGrid) -> CheckResult {
    for seed in 0..10 {
        let s = random_state(g, p, 500 + seed);
        let pr = project_constraints(&s, p, g);
        if mean_interior(&pr.u, g).abs() > 1e-12 {
            return Err(format!("mean after projection {:.3e}", mean_interior(&pr.u, g)));
        }
        if hooke_invariant(&pr, p, g).abs() > 1e-11 {
            return Err(format!("hooke after projection {:.3e}", hooke_invariant(&pr, p, g)));
        }
        let pr2 = project_constraints(&pr, p, g);
        let diff = pr2.sub(&pr);
        if model::h_norm(&diff, p, g) > 1e-13 * (1.0 + model::h_norm(&pr, p, g)) {
            return Err("projection is not idempotent".into());
        }
    }
    Ok(())
}

fn check_free_ledger(p: &PhysicalParams, g: &AnnulusGrid, t: f64, dt: f64) -> CheckResult {
    let s0 = project_constraints(&random_state(g, p, 600), p, g);
    let (_, ledger) = simulate(&s0, None, t, dt, p, g, 50).map_err(|e| e.to_string())?;
    let e0 = ledger.energy[0];
    if ledger.max_abs_residual() > 1e-9 * e0 {
        return Err(format!("ledger residual {:.3e} vs E0 {:.3e}", ledger.max_abs_residual(), e0));
    }
    for w in ledger.energy.windows(2) {
        if w[1] > w[0] * (1.0 + 1e-12) {
            return Err(format!("energy increased {:.6e} -> {:.6e}", w[0], w[1]));
        }
    }
    let drift = ledger.max_hooke_drift();
    if drift > 1e-10 * (1.0 + ledger.hooke[0].abs()) {
        return Err(format!("hooke invariant drift {drift:.3e}"));
    }
    Ok(())
}

fn check_forced_ledger(p: &PhysicalParams, g: &AnnulusGrid, t: f64, dt: f64) -> CheckResult {
    let s0 = project_constraints(&random_state(g, p, 601), p, g);
    let f = ControlSignal::from_fn(t, dt, g, |tt, th| (2.0 * tt).sin() * th.cos())
        .map_err(|e| e.to_string())?;
    let (_, ledger) = simulate(&s0, Some(&f), t, dt, p, g, 50).map_err(|e| e.to_string())?;
    let scale = ledger.energy.iter().cloned().fold(1.0f64, f64::max);
    if ledger.max_abs_residual() > 1e-9 * scale {
        return Err(format!("forced ledger residual {:.3e}", ledger.max_abs_residual()));
    }
    Ok(())
}

fn check_backward_energy(p: &PhysicalParams, g: &AnnulusGrid, t: f64, dt: f64) -> CheckResult {
    let z = AdjointState::from(project_constraints(&random_state(g, p, 700), p, g));
    let (traj, record) = solve_backward(&z, t, dt, p, g, usize::MAX).map_err(|e| e.to_string())?;
    let e_t = traj.energies[traj.n_steps];
    let res = traj.energy_identity_residual(&record, p, g);
    if res > 1e-9 * e_t {
        return Err(format!("backward identity residual {res:.3e} vs E(T) {e_t:.3e}"));
    }
    for w in traj.energies.windows(2) {
        if w[0] > w[1] * (1.0 + 1e-12) {
            return Err("backward energy not monotone".into());
        }
    }
    Ok(())
}

fn check_duality(p: &PhysicalParams, g: &AnnulusGrid, dt: f64) -> CheckResult {
    let t = 1.0;
    let mut rng = ChaCha8Rng::seed_from_u64(800);
    for k in 0..3 {
        let control = ControlSignal::from_fn(t, dt, g, |tt, th| {
            ((k + 1) as f64 * tt).sin() * (th + k as f64).cos()
        })
        .map_err(|e| e.to_string())?;
        let z = random_unit_adjoint(g, p, &mut rng);
        let check = awlab_core::adjoint::duality_residual(&control, &z, t, dt, p, g)
            .map_err(|e| e.to_string())?;
        if check.relative_residual() > 1e-8 {
            return Err(format!("duality relative residual {:.3e}", check.relative_residual()));
        }
    }
    Ok(())
}

fn check_gramian(p: &PhysicalParams, g: &AnnulusGrid, dt: f64, eps0: f64) -> CheckResult {
    let t = 1.0;
    let cutoff = make_cutoff(t, dt, eps0.min(0.4)).map_err(|e| e.to_string())?;
    let hum = HumSetup::new(p, g, t, dt, &cutoff).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(900);
    for _ in 0..2 {
        let a = random_unit_adjoint(g, p, &mut rng);
        let b = random_unit_adjoint(g, p, &mut rng);
        let ga = hum.gramian_apply(&a).map_err(|e| e.to_string())?;
        let gb = hum.gramian_apply(&b).map_err(|e| e.to_string())?;
        let lhs = adjoint_inner_product(&ga, &b, p, g);
        let rhs = adjoint_inner_product(&gb, &a, p, g);
        let scale = adjoint_norm(&ga, p, g).max(adjoint_norm(&gb, p, g)).max(1e-300);
        if (lhs - rhs).abs() > 1e-8 * scale {
            return Err(format!("gramian asymmetry {:.3e}", (lhs - rhs).abs() / scale));
        }
        let quad = adjoint_inner_product(&ga, &a, p, g);
        let (_, record) = solve_backward(&a, t, dt, p, g, usize::MAX).map_err(|e| e.to_string())?;
        let direct = obs_norm_sq(&record, ObsNorm::Cutoff, &cutoff, g);
        if quad < -1e-12 || (quad - direct).abs() > 1e-8 * direct.max(1e-300) {
            return Err(format!("gramian quadratic form {quad:.6e} vs observation {direct:.6e}"));
        }
    }
    Ok(())
}

fn check_geometry(g: &AnnulusGrid) -> CheckResult {
    let rep = geometric_condition_check(g, (0.0, 0.0));
    if !rep.satisfied {
        return Err(format!(
            "center fails the boundary condition: min_gamma0 {:.3e}, min_gamma1 {:.3e}",
            rep.min_gamma0, rep.min_gamma1
        ));
    }
    if (rep.min_gamma0 + g.r0).abs() > 1e-12 || (rep.min_gamma1 - g.r1).abs() > 1e-12 {
        return Err("geometric margins differ from ±r".into());
    }
    Ok(())
}

fn check_cutoff(t: f64, dt: f64, eps0: f64) -> CheckResult {
    let c = make_cutoff(t, dt, eps0).map_err(|e| e.to_string())?;
    let n = c.n_steps();
    if c.samples[0] != 0.0 || c.samples[n] != 0.0 {
        return Err("cut-off does not vanish at the endpoints".into());
    }
    if (c.samples[n / 2] - 1.0).abs() > 1e-15 {
        return Err("cut-off is not 1 on the plateau".into());
    }
    if (smooth_step(0.5) - 0.5).abs() > 1e-15 {
        return Err("smooth step is not symmetric".into());
    }
    Ok(())
}

fn check_beltrami(g: &AnnulusGrid) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    for _ in 0..100 {
        let v = ndarray::Array1::from_iter((0..g.ntheta).map(|_| rng.random::<f64>() - 0.5));
        let lb = boundary_laplace_beltrami(&v, g);
        let quad = boundary_pairing(&lb, &v, g);
        if quad > 1e-12 {
            return Err(format!("Rayleigh quotient positive: {quad:.3e}"));
        }
        if lb.sum().abs() > 1e-11 {
            return Err(format!("beltrami output mean {:.3e}", lb.sum()));
        }
    }
    let ones = ndarray::Array1::from_elem(g.ntheta, 1.0);
    let total = quadrature_boundary(&ones, g);
    if (total - 2.0 * std::f64::consts::PI * g.r1).abs() > 1e-12 {
        return Err("boundary quadrature of 1 is not 2πr1".into());
    }
    Ok(())
}

fn check_zero_noise(p: &PhysicalParams, g: &AnnulusGrid, dt: f64, seed: u64) -> CheckResult {
    let nm = NoiseModel::new(3, 0.0, 2.0, seed).map_err(|e| e.to_string())?;
    let s0 = project_constraints(&random_state(g, p, 1100), p, g);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stoch = sde_step(&s0, dt, &nm, &mut rng, p, g).map_err(|e| e.to_string())?;
    let mut det = Stepper::new(p, g, dt, StepDirection::Forward).map_err(|e| e.to_string())?;
    let expect = det.step(&s0, None).map_err(|e| e.to_string())?;
    if stoch != expect {
        return Err("zero-noise path differs from the deterministic step".into());
    }
    Ok(())
}

fn check_noise_isometry(p: &PhysicalParams, g: &AnnulusGrid, seed: u64) -> CheckResult {
    let _ = p;
    let nm = NoiseModel::new((g.ntheta / 2).min(6), 0.7, 2.0, seed).map_err(|e| e.to_string())?;
    let dt = 0.01;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_draws = 20_000;
    let mut acc = 0.0;
    let mut acc2 = 0.0;
    for _ in 0..n_draws {
        let dw = sample_increment(&nm, dt, g, &mut rng).map_err(|e| e.to_string())?;
        let sq = boundary_pairing(&dw, &dw, g);
        acc += sq;
        acc2 += sq * sq;
    }
    let mean = acc / n_draws as f64;
    let se = ((acc2 / n_draws as f64 - mean * mean) / n_draws as f64).sqrt();
    let expect = dt * nm.trace();
    if (mean - expect).abs() > 4.0 * se {
        return Err(format!("isometry mean {mean:.6e} vs {expect:.6e} (se {se:.1e})"));
    }
    Ok(())
}

pub fn run_checks(cfg: &ExperimentConfig, quiet: bool) -> Result<(), CliError> {
    let p = cfg.physics()?;
    let g = cfg.grid()?;
    // identity checks run on shortened horizons; the identities hold per
    // step, so the horizon only scales runtime
    let t_short = cfg.t_final.min(2.0);
    let dt = cfg.dt;

    let checks: Vec<(&str, Box<dyn Fn() -> CheckResult>)> = vec![
        ("summation_by_parts", Box::new(|| check_summation_by_parts(&p, &g))),
        ("generator_dissipativity", Box::new(|| check_dissipativity(&p, &g))),
        ("inner_product_symmetry", Box::new(|| check_inner_product_symmetry(&p, &g))),
        ("quotient_invariance", Box::new(|| check_quotient_invariance(&p, &g))),
        ("constraint_projection", Box::new(|| check_projection(&p, &g))),
        ("boundary_beltrami", Box::new(|| check_beltrami(&g))),
        ("geometric_condition", Box::new(|| check_geometry(&g))),
        ("cutoff_profile", Box::new(|| check_cutoff(cfg.t_final, dt, cfg.eps0))),
        ("free_energy_ledger", Box::new(|| check_free_ledger(&p, &g, t_short, dt))),
        ("forced_energy_ledger", Box::new(|| check_forced_ledger(&p, &g, t_short, dt))),
        ("backward_energy_identity", Box::new(|| check_backward_energy(&p, &g, t_short, dt))),
        ("forward_adjoint_duality", Box::new(|| check_duality(&p, &g, dt))),
        ("gramian_symmetry_psd", Box::new(|| check_gramian(&p, &g, dt, cfg.eps0))),
        ("zero_noise_reduction", Box::new(|| check_zero_noise(&p, &g, dt, cfg.seed))),
        ("noise_ito_isometry", Box::new(|| check_noise_isometry(&p, &g, cfg.seed))),
    ];

    let mut first_failure: Option<(String, String)> = None;
    for (name, check) in checks {
        let start = Instant::now();
        match check() {
            Ok(()) => {
                if !quiet {
                    println!("check {name}: PASS ({:.2?})", start.elapsed());
                }
            }
            Err(detail) => {
                println!("check {name}: FAIL — {detail}");
                if first_failure.is_none() {
                    first_failure = Some((name.to_string(), detail));
                }
            }
        }
    }
    if let Some((name, detail)) = first_failure {
        return Err(CliError::Numerical(format!("check `{name}` failed: {detail}")));
    }
    if !quiet {
        println!("all checks passed");
    }
    Ok(())
}
