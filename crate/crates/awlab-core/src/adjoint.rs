//! Backward integration of the homogeneous adjoint system and the discrete
//! duality check against the forward solver.
//!
//! The adjoint generator is `A* = −A` with the damping sign flipped, so the
//! backward implicit-midpoint sweep is the exact phase-space adjoint of the
//! forward one. Along the backward chain the energy identity
//! `E(Z_{n+1}) = E(Z_n) + dt·(d/ρ)‖(δ_t,n + δ_t,n+1)/2‖²` is exact.

use std::fmt::Write as _;

use ndarray::Array1;

use crate::error::CoreError;
use crate::forward::{boundary_pairing, n_steps, simulate, ControlSignal};
use crate::grid::{self, AnnulusGrid, BoundaryField};
use crate::model::{self, PhysicalParams, StateVector};
use crate::stepper::{StepDirection, Stepper};

/// Adjoint quadruple `(φ, δ, φ_t, δ_t)`; same constraint structure as the
/// forward state.
#[derive(Debug, Clone)]
pub struct AdjointState {
    pub phi: grid::InteriorField,
    pub delta: BoundaryField,
    pub phit: grid::InteriorField,
    pub deltat: BoundaryField,
}

impl AdjointState {
    pub fn zero(g: &AnnulusGrid) -> Self {
        StateVector::zero(g).into()
    }

    pub fn as_state(&self) -> StateVector {
        StateVector {
            u: self.phi.clone(),
            v: self.delta.clone(),
            ut: self.phit.clone(),
            vt: self.deltat.clone(),
        }
    }

    pub fn scaled(&self, a: f64) -> AdjointState {
        AdjointState {
            phi: &self.phi * a,
            delta: &self.delta * a,
            phit: &self.phit * a,
            deltat: &self.deltat * a,
        }
    }

    pub fn axpy(&mut self, a: f64, x: &AdjointState) {
        self.phi.scaled_add(a, &x.phi);
        self.delta.scaled_add(a, &x.delta);
        self.phit.scaled_add(a, &x.phit);
        self.deltat.scaled_add(a, &x.deltat);
    }

    pub fn sub(&self, x: &AdjointState) -> AdjointState {
        let mut out = self.clone();
        out.axpy(-1.0, x);
        out
    }
}

impl From<StateVector> for AdjointState {
    fn from(s: StateVector) -> Self {
        AdjointState { phi: s.u, delta: s.v, phit: s.ut, deltat: s.vt }
    }
}

impl From<AdjointState> for StateVector {
    fn from(z: AdjointState) -> Self {
        StateVector { u: z.phi, v: z.delta, ut: z.phit, vt: z.deltat }
    }
}

/// Phase-space inner product of adjoint states (same formula as for forward
/// states).
pub fn adjoint_inner_product(
    a: &AdjointState,
    b: &AdjointState,
    p: &PhysicalParams,
    g: &AnnulusGrid,
) -> f64 {
    model::inner_product_unchecked(&a.as_state(), &b.as_state(), p, g)
}

pub fn adjoint_norm(z: &AdjointState, p: &PhysicalParams, g: &AnnulusGrid) -> f64 {
    adjoint_inner_product(z, z, p, g).max(0.0).sqrt()
}

/// Project adjoint data onto the constraint manifold (mean-zero `φ`, zero
/// Hooke-type link between `φ_t` and `δ`).
pub fn project_adjoint(z: &AdjointState, p: &PhysicalParams, g: &AnnulusGrid) -> AdjointState {
    model::project_constraints(&z.as_state(), p, g).into()
}

/// Backward trajectory summary: per-node times and energies plus the full
/// state at `t = 0`.
#[derive(Debug, Clone)]
pub struct AdjointTrajectory {
    pub dt: f64,
    pub n_steps: usize,
    pub times: Vec<f64>,
    /// `E(Z_n)` per step node.
    pub energies: Vec<f64>,
    /// Decimated full states (always includes the terminal and initial node).
    pub states: Vec<(usize, AdjointState)>,
    /// State at `t = 0`.
    pub initial_state: AdjointState,
}

impl AdjointTrajectory {
    /// `max_n |E(T) − E(t_n) − (d/ρ)·Σ_{k ≥ n} dt‖δ̄_t‖²|`, the backward
    /// energy-identity residual (computed from the stored observation).
    pub fn energy_identity_residual(&self, record: &ObservationRecord, p: &PhysicalParams, g: &AnnulusGrid) -> f64 {
        let n = self.n_steps;
        let e_t = self.energies[n];
        let mut acc = 0.0;
        let mut worst: f64 = 0.0;
        // walk from the terminal node down, accumulating the dissipation
        for k in (0..n).rev() {
            let mut vbar2 = 0.0;
            for j in 0..g.ntheta {
                let vbar = 0.5 * (record.deltat_series[k][j] + record.deltat_series[k + 1][j]);
                vbar2 += vbar * vbar;
            }
            acc += self.dt * (p.d / p.rho) * g.arc_weight * vbar2;
            worst = worst.max((e_t - self.energies[k] - acc).abs());
        }
        worst
    }
}

/// Boundary observation of a backward run: `δ_t` at every node and the
/// boundary acceleration `δ_tt` evaluated algebraically from the membrane
/// equation (no double time-differencing).
#[derive(Debug, Clone)]
pub struct ObservationRecord {
    pub dt: f64,
    /// `δ_t(t_n, ·)`, length `n_steps + 1`.
    pub deltat_series: Vec<BoundaryField>,
    /// `δ_tt(t_n, ·) = (1/m)[−ρ·φ_t + σ·Δ_Γ δ + d·δ_t − k·δ]`, per node.
    pub deltatt_series: Vec<BoundaryField>,
    /// `∫(‖δ_t‖² + ‖δ_tt‖²)dt` in the staggered quadrature (plain norm,
    /// no cut-off weight).
    pub obs_norm_sq: f64,
}

impl ObservationRecord {
    pub fn n_steps(&self) -> usize {
        self.deltat_series.len() - 1
    }

    /// Interval-midpoint value of `δ_t` on step interval `n`.
    pub fn deltat_mid(&self, n: usize) -> BoundaryField {
        (&self.deltat_series[n] + &self.deltat_series[n + 1]) * 0.5
    }

    /// Centered difference of `δ_t` at interior node `k`; equals the
    /// average of the adjacent interval accelerations of the scheme.
    pub fn deltat_centered_derivative(&self, k: usize) -> BoundaryField {
        (&self.deltat_series[k + 1] - &self.deltat_series[k - 1]) / (2.0 * self.dt)
    }

    /// CSV rows `t, deltat_norm_sq, deltatt_norm_sq, cumulative_obs`.
    pub fn to_csv(&self, g: &AnnulusGrid) -> String {
        let mut out = String::from("t,deltat_norm_sq,deltatt_norm_sq,cumulative_obs\n");
        let n = self.n_steps();
        let mut cum = 0.0;
        for k in 0..=n {
            let dn = boundary_pairing(&self.deltat_series[k], &self.deltat_series[k], g);
            let an = boundary_pairing(&self.deltatt_series[k], &self.deltatt_series[k], g);
            if k > 0 {
                // completed interval k−1 plus, past the first node, the
                // acceleration term attached to node k−1
                let mid = self.deltat_mid(k - 1);
                cum += self.dt * boundary_pairing(&mid, &mid, g);
                if k >= 2 {
                    let dc = self.deltat_centered_derivative(k - 1);
                    cum += self.dt * boundary_pairing(&dc, &dc, g);
                }
            }
            let _ = writeln!(
                out,
                "{:.12e},{:.17e},{:.17e},{:.17e}",
                k as f64 * self.dt,
                dn,
                an,
                cum
            );
        }
        out
    }
}

/// Staggered plain observation norm
/// `Σ_n dt‖δ̄_t‖² + Σ_{k=1}^{N−1} dt‖(δ_t,k+1 − δ_t,k−1)/2dt‖²`.
pub fn obs_norm_plain(record: &ObservationRecord, g: &AnnulusGrid) -> f64 {
    let n = record.n_steps();
    let mut acc = 0.0;
    for k in 0..n {
        let mid = record.deltat_mid(k);
        acc += record.dt * boundary_pairing(&mid, &mid, g);
    }
    for k in 1..n {
        let dc = record.deltat_centered_derivative(k);
        acc += record.dt * boundary_pairing(&dc, &dc, g);
    }
    acc
}

/// Integrate the homogeneous backward system from terminal data at `t = T`
/// down to `t = 0`.
pub fn solve_backward(
    terminal: &AdjointState,
    t_final: f64,
    dt: f64,
    p: &PhysicalParams,
    g: &AnnulusGrid,
    decimation: usize,
) -> Result<(AdjointTrajectory, ObservationRecord), CoreError> {
    let n = n_steps(t_final, dt)?;
    let term_state = terminal.as_state();
    term_state.check_grid(g)?;
    let decimation = decimation.max(1);

    let mut stepper = Stepper::new(p, g, dt, StepDirection::AdjointBackward)?;
    let mut deltat_series = vec![g.zero_boundary(); n + 1];
    let mut deltatt_series = vec![g.zero_boundary(); n + 1];
    let mut energies = vec![0.0; n + 1];
    let mut states: Vec<(usize, AdjointState)> = Vec::new();

    let alg_acceleration = |s: &StateVector| -> BoundaryField {
        let lb = grid::boundary_laplace_beltrami(&s.v, g);
        let tr = grid::trace_gamma1(&s.ut, g);
        Array1::from_iter((0..g.ntheta).map(|j| {
            (-p.rho * tr[j] + p.sigma * lb[j] + p.d * s.vt[j] - p.k * s.v[j]) / p.m
        }))
    };

    let mut z = term_state;
    energies[n] = model::energy(&z, p, g)?.total;
    deltat_series[n] = z.vt.clone();
    deltatt_series[n] = alg_acceleration(&z);
    states.push((n, AdjointState::from(z.clone())));

    let mut next = StateVector::zero(g);
    for back in (0..n).rev() {
        stepper.step_into(&z, None, None, &mut next)?;
        std::mem::swap(&mut z, &mut next);
        energies[back] = model::energy(&z, p, g)?.total;
        deltat_series[back] = z.vt.clone();
        deltatt_series[back] = alg_acceleration(&z);
        if back % decimation == 0 || back == 0 {
            states.push((back, AdjointState::from(z.clone())));
        }
    }
    states.reverse();

    let times = (0..=n).map(|k| k as f64 * dt).collect();
    let initial_state = AdjointState::from(z);
    let mut record = ObservationRecord {
        dt,
        deltat_series,
        deltatt_series,
        obs_norm_sq: 0.0,
    };
    record.obs_norm_sq = obs_norm_plain(&record, g);
    let traj = AdjointTrajectory { dt, n_steps: n, times, energies, states, initial_state };
    Ok((traj, record))
}

/// Both sides of the discrete duality identity
/// `⟨F_T f, z⟩_H = −(1/ρ)·Σ_n dt ⟨f̄_n, (δ_t,n + δ_t,n+1)/2⟩_{Γ1}`.
#[derive(Debug, Clone, Copy)]
pub struct DualityCheck {
    /// `⟨F_T f, z⟩_H` from a forward solve started at the zero state.
    pub forward_side: f64,
    /// The boundary pairing of the control with the backward observation.
    pub adjoint_side: f64,
}

impl DualityCheck {
    pub fn residual(&self) -> f64 {
        (self.forward_side - self.adjoint_side).abs()
    }

    pub fn relative_residual(&self) -> f64 {
        self.residual() / self.forward_side.abs().max(self.adjoint_side.abs()).max(1e-300)
    }
}

/// Evaluate the duality identity for a control/terminal-data pair.
pub fn duality_residual(
    control: &ControlSignal,
    terminal: &AdjointState,
    t_final: f64,
    dt: f64,
    p: &PhysicalParams,
    g: &AnnulusGrid,
) -> Result<DualityCheck, CoreError> {
    let zero = StateVector::zero(g);
    let (traj, _) = simulate(&zero, Some(control), t_final, dt, p, g, usize::MAX)?;
    let forward_side =
        model::inner_product(&traj.final_state, &terminal.as_state(), p, g)?;

    let (_, record) = solve_backward(terminal, t_final, dt, p, g, usize::MAX)?;
    let mut pair = 0.0;
    for n in 0..record.n_steps() {
        let mid = record.deltat_mid(n);
        pair += dt * boundary_pairing(&control.values[n], &mid, g);
    }
    let adjoint_side = -pair / p.rho;
    Ok(DualityCheck { forward_side, adjoint_side })
}
