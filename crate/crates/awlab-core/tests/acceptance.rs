//! Acceptance suite: one test per acceptance criterion, each printing a
//! PASS line with the measured quantities (visible with
//! `cargo test --test acceptance -- --nocapture`).
//!
//! Canonical configuration: annulus r0 = 0.5, r1 = 1, 24 × 48 grid,
//! ρ = κ = m = d = k = 1, σ = 0.1, horizon T = 5, dt = 2·10⁻³, ε0 = 0.5.

mod common;

use std::time::Instant;

use awlab_core::adjoint::{adjoint_norm, duality_residual, solve_backward, AdjointState};
use awlab_core::forward::{simulate, simulate_forced, ControlSignal};
use awlab_core::grid::{build_grid, AnnulusGrid};
use awlab_core::hum::{
    estimate_observability, make_cutoff, random_unit_adjoint, verify_exact_control,
    verify_null_control, CgOptions, HumSetup, ObsNorm, ObservabilityOptions, NULL_CONTROL_SIGN,
};
use awlab_core::model::{self, hooke_invariant, PhysicalParams, StateVector};
use awlab_core::stochastic::{
    mixing_experiment, moment_bound_check, run_ensemble, NoiseModel, ObservableSet,
};

use common::{demo_state, demo_state_shifted};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn canonical() -> (PhysicalParams, AnnulusGrid) {
    (PhysicalParams::canonical(), build_grid(0.5, 1.0, 24, 48).unwrap())
}

fn reduced() -> (PhysicalParams, AnnulusGrid) {
    (PhysicalParams::canonical(), build_grid(0.5, 1.0, 8, 16).unwrap())
}

#[test]
fn acceptance_01_discrete_dissipation_identity() {
    let (p, g) = canonical();
    let s0 = demo_state(&g, &p);
    let start = Instant::now();
    let (_, ledger) = simulate(&s0, None, 5.0, 2e-3, &p, &g, 50).unwrap();
    let elapsed = start.elapsed();
    assert_eq!(ledger.energy.len(), 2501, "2500 steps expected");
    let e0 = ledger.energy[0];
    let res = ledger.max_abs_residual();
    assert!(res <= 1e-9 * e0, "ledger residual {res:.3e} exceeds 1e-9·E(0) = {:.3e}", 1e-9 * e0);
    for w in ledger.energy.windows(2) {
        assert!(w[1] <= w[0] * (1.0 + 1e-12), "energy not contracting: {} -> {}", w[0], w[1]);
    }
    assert!(elapsed.as_secs_f64() <= 30.0, "runtime {elapsed:?} exceeds 30 s");
    println!(
        "criterion 01 dissipation identity: PASS (residual {res:.3e} ≤ 1e-9·E0 = {:.3e}, {elapsed:.2?})",
        1e-9 * e0
    );
}

#[test]
fn acceptance_02_hooke_conservation() {
    let (p, g) = canonical();
    // projected data (invariant = 0) and raw data (invariant ≠ 0): the
    // integral is conserved along the flow either way
    let s_projected = demo_state(&g, &p);
    let mut s_raw = demo_state(&g, &p);
    s_raw.ut.mapv_inplace(|x| x + 0.37);
    let mut worst: f64 = 0.0;
    for s0 in [s_projected, s_raw] {
        let h0 = hooke_invariant(&s0, &p, &g);
        let (_, ledger) = simulate(&s0, None, 5.0, 2e-3, &p, &g, 2500).unwrap();
        let drift = ledger.max_hooke_drift();
        let tol = 1e-10 * (1.0 + h0.abs());
        assert!(drift <= tol, "hooke drift {drift:.3e} exceeds {tol:.3e} (h0 = {h0:.3e})");
        worst = worst.max(drift / (1.0 + h0.abs()));
    }
    println!("criterion 02 hooke conservation: PASS (relative drift {worst:.3e} ≤ 1e-10)");
}

#[test]
fn acceptance_03_adjoint_energy_growth() {
    let (p, g) = canonical();
    let z = AdjointState::from(demo_state(&g, &p));
    let (traj, record) = solve_backward(&z, 5.0, 2e-3, &p, &g, usize::MAX).unwrap();
    let e_t = traj.energies[traj.n_steps];
    let res = traj.energy_identity_residual(&record, &p, &g);
    assert!(res <= 1e-9 * e_t, "backward identity residual {res:.3e} vs 1e-9·E(T) = {:.3e}", 1e-9 * e_t);
    for w in traj.energies.windows(2) {
        assert!(w[0] <= w[1] * (1.0 + 1e-12), "E(s) ≤ E(T) violated: {} > {}", w[0], w[1]);
    }
    println!(
        "criterion 03 adjoint energy growth: PASS (residual {res:.3e} ≤ 1e-9·E(T) = {:.3e})",
        1e-9 * e_t
    );
}

#[test]
fn acceptance_04_discrete_duality() {
    let (p, g) = canonical();
    let (t, dt) = (1.0, 2e-3);
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    let mut worst = 0.0f64;
    for pair in 0..20 {
        let (a, b, c) = (
            0.5 + rng.random::<f64>(),
            1.0 + 2.0 * rng.random::<f64>(),
            rng.random::<f64>() * std::f64::consts::TAU,
        );
        let modes = 1 + (pair % 4);
        let control = ControlSignal::from_fn(t, dt, &g, |tt, th| {
            a * (b * tt).sin() * (modes as f64 * th + c).cos()
        })
        .unwrap();
        let z = random_unit_adjoint(&g, &p, &mut rng);
        let check = duality_residual(&control, &z, t, dt, &p, &g).unwrap();
        let rel = check.relative_residual();
        assert!(rel <= 1e-8, "pair {pair}: duality relative residual {rel:.3e} > 1e-8");
        worst = worst.max(rel);
    }
    println!("criterion 04 discrete duality: PASS (20 pairs, worst relative residual {worst:.3e})");
}

#[test]
fn acceptance_05_gradient_central_differences() {
    let (p, g) = canonical();
    let (t, dt) = (1.0, 2e-3);
    let cutoff = make_cutoff(t, dt, 0.3).unwrap();
    let hum = HumSetup::new(&p, &g, t, dt, &cutoff).unwrap();
    let s0 = demo_state(&g, &p);
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let z = random_unit_adjoint(&g, &p, &mut rng).scaled(0.9);
    let grad = hum.j_gradient(&z, &s0).unwrap();
    let z_norm = adjoint_norm(&z, &p, &g);
    let mut worst = 0.0f64;
    for dir in 0..10 {
        let w = random_unit_adjoint(&g, &p, &mut rng);
        let h = 1e-4 * z_norm;
        let mut zp = z.clone();
        zp.axpy(h, &w);
        let mut zm = z.clone();
        zm.axpy(-h, &w);
        let fd = (hum.j_value(&zp, &s0).unwrap() - hum.j_value(&zm, &s0).unwrap()) / (2.0 * h);
        let direct = awlab_core::adjoint::adjoint_inner_product(&grad, &w, &p, &g);
        let rel = (fd - direct).abs() / direct.abs().max(1e-12);
        assert!(rel <= 1e-5, "direction {dir}: gradient mismatch {rel:.3e} > 1e-5");
        worst = worst.max(rel);
    }
    println!("criterion 05 gradient vs central differences: PASS (10 directions, worst {worst:.3e})");
}

#[test]
fn acceptance_06_null_and_exact_control() {
    let p = PhysicalParams::canonical();
    let g = build_grid(0.5, 1.0, 16, 32).unwrap();
    let (t, dt) = (5.0, 2e-3);
    let cutoff = make_cutoff(t, dt, 0.5).unwrap();
    let hum = HumSetup::new(&p, &g, t, dt, &cutoff).unwrap();
    let s0 = demo_state(&g, &p);
    let opts = CgOptions { tol: 2e-3, max_iter: 200, tikhonov: 0.0 };

    let start = Instant::now();
    let (z_hat, cg) = hum.minimize_j(&s0, &opts).unwrap();
    assert!(cg.converged, "CG did not converge: residual {:.3e}", cg.relative_residual);
    assert!(cg.iterations <= 200, "CG took {} iterations", cg.iterations);
    let control = hum.control_for(&z_hat, NULL_CONTROL_SIGN).unwrap();
    let verify = verify_null_control(&s0, &control, t, dt, &p, &g).unwrap();
    assert!(verify.ratio <= 0.01, "null-control ratio {:.3e} > 0.01", verify.ratio);

    // exact control to a reachable target
    let probe = ControlSignal::from_fn(t, dt, &g, |tt, th| {
        0.5 * (1.3 * tt).sin() * (2.0 * th).cos()
    })
    .unwrap();
    let exact = verify_exact_control(&s0, &probe, &hum, &opts).unwrap();
    let rel = exact.terminal_error / exact.target_norm;
    assert!(
        rel <= 0.01,
        "exact-control terminal error {:.3e} exceeds 1% of target norm {:.3e}",
        exact.terminal_error,
        exact.target_norm
    );
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() <= 600.0, "runtime {elapsed:?} exceeds 10 min");
    println!(
        "criterion 06 null control: PASS (ratio {:.3e} in {} iterations, exact-control error {:.3e} rel, {elapsed:.2?})",
        verify.ratio, cg.iterations, rel
    );
}

#[test]
fn acceptance_07_observability_horizon() {
    let (p, g) = reduced();
    let dt = 5e-3;
    let eigen_at = |t: f64| {
        let opts = ObservabilityOptions {
            n_samples: 5,
            mode: ObsNorm::Cutoff,
            eps0: 0.2,
            seed: 42,
            power_iterations: 20,
        };
        estimate_observability(t, dt, &p, &g, &opts).unwrap()
    };
    let short = eigen_at(0.5);
    let r2 = eigen_at(2.0);
    let r35 = eigen_at(3.5);
    let r5 = eigen_at(5.0);

    assert!(r5.rayleigh_min > 1e-8, "rayleigh_min(5) = {:.3e} not > 1e-8", r5.rayleigh_min);
    let short_floor = short.rayleigh_min.max(0.0);
    assert!(
        r5.rayleigh_min > 100.0 * short_floor,
        "rayleigh_min(5) = {:.3e} not 100× above rayleigh_min(0.5) = {:.3e}",
        r5.rayleigh_min,
        short.rayleigh_min
    );
    let slack = 1.0 + 1e-9;
    assert!(
        r2.rayleigh_min <= r35.rayleigh_min * slack && r35.rayleigh_min <= r5.rayleigh_min * slack,
        "monotonicity violated: {:.3e}, {:.3e}, {:.3e}",
        r2.rayleigh_min,
        r35.rayleigh_min,
        r5.rayleigh_min
    );
    // sampled constant and eigenvalue agree once the refined direction is
    // included in the samples
    let consistency = r5.ct_estimate * r5.rayleigh_min;
    assert!(
        (consistency - 1.0).abs() <= 0.05,
        "ct_estimate·rayleigh_min = {consistency:.4} deviates by more than 5%"
    );
    println!(
        "criterion 07 observability: PASS (λ(0.5) = {:.1e}, λ(2) = {:.3e}, λ(3.5) = {:.3e}, λ(5) = {:.3e}, ct·λ = {:.4})",
        short.rayleigh_min, r2.rayleigh_min, r35.rayleigh_min, r5.rayleigh_min, consistency
    );
}

#[test]
fn acceptance_08_moment_bound() {
    let (p, g) = reduced();
    let dt = 0.02;
    let checkpoints = [2.5, 10.0, 25.0, 50.0];
    let s0 = demo_state(&g, &p);
    let obs = ObservableSet::probes_at_quarters(&g);

    let run = |q0: f64| {
        let nm = NoiseModel::new(6, q0, 2.0, 42).unwrap();
        let stats =
            run_ensemble(&s0, &nm, 50.0, dt, &checkpoints, 2000, 0, &p, &g, &obs).unwrap();
        moment_bound_check(&stats, &s0, &nm, dt, &p, &g).unwrap()
    };
    let start = Instant::now();
    let rep1 = run(1.0);
    let rep2 = run(2.0);
    let elapsed = start.elapsed();

    let max_se = rep1.standard_errors.iter().cloned().fold(0.0f64, f64::max);
    assert!(rep1.satisfied && rep1.margin > 0.0, "moment bound violated: margin {:.3e}", rep1.margin);
    assert!(
        rep1.margin > 3.0 * max_se,
        "margin {:.3e} not clear of sampling noise {:.3e}",
        rep1.margin,
        max_se
    );
    // the bound constant is exactly linear in q0; the measured stationary
    // excess follows within the Monte-Carlo tolerance
    let bound_ratio = rep2.bound_const / rep1.bound_const;
    assert!((bound_ratio - 2.0).abs() <= 1e-9, "bound constant ratio {bound_ratio}");
    let free_sq = {
        let (traj, _) = simulate(&s0, None, 50.0, dt, &p, &g, usize::MAX).unwrap();
        model::inner_product(&traj.final_state, &traj.final_state, &p, &g).unwrap()
    };
    let excess1 = rep1.mean_sq.last().unwrap() - free_sq;
    let excess2 = rep2.mean_sq.last().unwrap() - free_sq;
    let excess_ratio = excess2 / excess1;
    assert!(
        (excess_ratio - 2.0).abs() <= 0.2,
        "measured excess ratio {excess_ratio:.3} outside 2 ± 10%"
    );
    println!(
        "criterion 08 moment bound: PASS (margin {:.3e} > 3·SE = {:.3e}, bound ratio {bound_ratio:.9}, excess ratio {excess_ratio:.3}, {elapsed:.2?})",
        rep1.margin, 3.0 * max_se
    );
}

#[test]
fn acceptance_09_mixing() {
    let (p, g) = reduced();
    let dt = 0.02;
    let checkpoints = [2.5, 10.0, 25.0, 50.0];
    let nm = NoiseModel::new(6, 1.0, 2.0, 42).unwrap();
    let a = demo_state(&g, &p);
    let b = demo_state_shifted(&g, &p);

    let start = Instant::now();
    let report =
        mixing_experiment(&a, &b, 50.0, dt, &checkpoints, 2000, &nm, &p, &g, 199).unwrap();
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() <= 1200.0, "runtime {elapsed:?} exceeds 20 min");

    // the ensembles start visibly distinct...
    assert!(
        report.dist_series[0] > report.critical_values[0],
        "initial laws not distinguishable: {:.3e} vs {:.3e}",
        report.dist_series[0],
        report.critical_values[0]
    );
    // ...and have merged by the final checkpoint
    let last = report.times.len() - 1;
    assert!(
        report.dist_series[last] <= report.critical_values[last],
        "laws not merged at t = 50: distance {:.3e} vs critical {:.3e}",
        report.dist_series[last],
        report.critical_values[last]
    );
    let max_z = report.max_abs_z();
    assert!(max_z <= 3.0, "covariance z-score {max_z:.3} exceeds 3");
    println!(
        "criterion 09 mixing: PASS (d(2.5) = {:.2e} > crit, d(50) = {:.2e} ≤ crit = {:.2e}, max |z| = {max_z:.2}, {elapsed:.2?})",
        report.dist_series[0], report.dist_series[last], report.critical_values[last]
    );
}

#[test]
fn acceptance_10_convergence_order() {
    // manufactured solution u* = cos(t)(r−r0)²cos(2θ), v* from the flux
    // condition, with the induced interior and boundary forcings
    fn exact_state(t: f64, g: &AnnulusGrid) -> StateVector {
        let r0 = g.r0;
        let mut s = StateVector::zero(g);
        for i in 0..g.nr {
            for j in 0..g.ntheta {
                let r = g.node_radii[i];
                let c2t = (2.0 * g.theta(j)).cos();
                let rr = (r - r0) * (r - r0);
                s.u[[i, j]] = t.cos() * rr * c2t;
                s.ut[[i, j]] = -t.sin() * rr * c2t;
            }
        }
        let rp1 = 2.0 * (g.r1 - r0);
        for j in 0..g.ntheta {
            let c2t = (2.0 * g.theta(j)).cos();
            s.v[j] = t.sin() * rp1 * c2t;
            s.vt[j] = t.cos() * rp1 * c2t;
        }
        s
    }

    fn run_error(nr: usize, nt: usize, dt: f64) -> f64 {
        let p = PhysicalParams::canonical();
        let g = build_grid(0.5, 1.0, nr, nt).unwrap();
        let t_final = 1.0;
        let r0 = g.r0;
        let c2 = p.c_squared();
        let rr = |r: f64| (r - r0) * (r - r0);
        let rp = |r: f64| 2.0 * (r - r0);
        let lap_r = |r: f64| 2.0 + rp(r) / r - 4.0 * rr(r) / (r * r);
        let rp1 = rp(g.r1);

        let g_for_interior = g.clone();
        let interior = move |t: f64| {
            let mut f = g_for_interior.zero_interior();
            for i in 0..g_for_interior.nr {
                for j in 0..g_for_interior.ntheta {
                    let r = g_for_interior.node_radii[i];
                    let c2t = (2.0 * g_for_interior.theta(j)).cos();
                    f[[i, j]] = (-t.cos() * rr(r) - c2 * t.cos() * lap_r(r)) * c2t;
                }
            }
            f
        };
        let sigma_lb = -4.0 / (g.r1 * g.r1);
        let coeff_sin = p.rho * rr(g.r1) + p.m * rp1 + p.sigma * sigma_lb * rp1 - p.k * rp1;
        let coeff_cos = -p.d * rp1;
        let control = ControlSignal::from_fn(t_final, dt, &g, move |t, th| {
            (coeff_sin * t.sin() + coeff_cos * t.cos()) * (2.0 * th).cos()
        })
        .unwrap();

        let s0 = exact_state(0.0, &g);
        let (traj, _) = simulate_forced(
            &s0,
            Some(&control),
            Some(&interior),
            t_final,
            dt,
            &p,
            &g,
            usize::MAX,
        )
        .unwrap();
        let exact = exact_state(t_final, &g);
        let diff = traj.final_state.sub(&exact);
        model::h_norm(&diff, &p, &g) / model::h_norm(&exact, &p, &g)
    }

    let e0 = run_error(13, 16, 0.02);
    let e1 = run_error(25, 32, 0.01);
    let e2 = run_error(49, 64, 0.005);
    let f1 = e0 / e1;
    let f2 = e1 / e2;
    assert!(f1 >= 3.6, "first refinement factor {f1:.3} < 3.6 (errors {e0:.3e}, {e1:.3e})");
    assert!(f2 >= 3.6, "second refinement factor {f2:.3} < 3.6 (errors {e1:.3e}, {e2:.3e})");
    println!(
        "criterion 10 convergence order: PASS (errors {e0:.3e} → {e1:.3e} → {e2:.3e}, factors {f1:.2}, {f2:.2})"
    );
}
