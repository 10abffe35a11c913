//! Forward time integration of the controlled system with an energy ledger.
//!
//! The implicit-midpoint step makes the discrete dissipation identity exact:
//! with interval-average boundary velocity `v̄t` and interval force `f̄`,
//!
//! ```text
//! E_{n+1} − E_n = −dt·(d/ρ)‖v̄t‖²_{Γ1} − dt·(1/ρ)(f̄, v̄t)_{Γ1}
//! ```
//!
//! so the ledger residual is round-off, not discretization error.

use std::fmt::Write as _;

use ndarray::Array1;

use crate::error::CoreError;
use crate::grid::{AnnulusGrid, BoundaryField, InteriorField};
use crate::model::{self, PhysicalParams, StateVector};
use crate::stepper::{StepDirection, Stepper};

/// Boundary control sampled on the step-interval midpoints.
///
/// `values[n]` is the force on `(t_n, t_{n+1})`; the implicit-midpoint step
/// consumes exactly this interval sample, so controls synthesized by the
/// Hilbert-uniqueness machinery reproduce their defining quadratic form to
/// round-off. Node-sampled data can be adapted via
/// [`ControlSignal::from_node_samples`], which averages adjacent samples.
#[derive(Debug, Clone)]
pub struct ControlSignal {
    pub dt: f64,
    pub t_final: f64,
    pub values: Vec<BoundaryField>,
}

impl ControlSignal {
    pub fn zero(t_final: f64, dt: f64, g: &AnnulusGrid) -> Result<Self, CoreError> {
        let n = n_steps(t_final, dt)?;
        Ok(ControlSignal {
            dt,
            t_final,
            values: vec![g.zero_boundary(); n],
        })
    }

    /// Build from midpoint samples `f(t_n + dt/2, θ_j)`.
    pub fn from_fn(
        t_final: f64,
        dt: f64,
        g: &AnnulusGrid,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Self, CoreError> {
        let n = n_steps(t_final, dt)?;
        let values = (0..n)
            .map(|step| {
                let t = (step as f64 + 0.5) * dt;
                Array1::from_iter((0..g.ntheta).map(|j| f(t, g.theta(j))))
            })
            .collect();
        Ok(ControlSignal { dt, t_final, values })
    }

    /// Adapt node samples `f(t_0), …, f(t_N)` by averaging adjacent pairs.
    pub fn from_node_samples(
        t_final: f64,
        dt: f64,
        nodes: &[BoundaryField],
    ) -> Result<Self, CoreError> {
        let n = n_steps(t_final, dt)?;
        if nodes.len() != n + 1 {
            return Err(CoreError::dimension(format!(
                "expected {} node samples, got {}",
                n + 1,
                nodes.len()
            )));
        }
        let values = (0..n).map(|i| (&nodes[i] + &nodes[i + 1]) * 0.5).collect();
        Ok(ControlSignal { dt, t_final, values })
    }

    pub fn n_intervals(&self) -> usize {
        self.values.len()
    }

    pub fn scaled(&self, a: f64) -> ControlSignal {
        ControlSignal {
            dt: self.dt,
            t_final: self.t_final,
            values: self.values.iter().map(|v| v * a).collect(),
        }
    }

    pub fn add(&self, other: &ControlSignal) -> Result<ControlSignal, CoreError> {
        if self.values.len() != other.values.len() {
            return Err(CoreError::dimension("control signals have different lengths"));
        }
        Ok(ControlSignal {
            dt: self.dt,
            t_final: self.t_final,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    /// CSV rows `t, theta_index, f` with `t` the interval midpoint.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,theta_index,f\n");
        for (n, field) in self.values.iter().enumerate() {
            let t = (n as f64 + 0.5) * self.dt;
            for (j, f) in field.iter().enumerate() {
                let _ = writeln!(out, "{t:.12e},{j},{f:.17e}");
            }
        }
        out
    }

    /// Parse the format produced by [`ControlSignal::to_csv`].
    pub fn from_csv(text: &str, t_final: f64, dt: f64, g: &AnnulusGrid) -> Result<Self, CoreError> {
        let n = n_steps(t_final, dt)?;
        let mut values = vec![g.zero_boundary(); n];
        let mut seen = vec![0usize; n];
        for (lineno, line) in text.lines().enumerate() {
            if lineno == 0 || line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let err = |what: &str| {
                CoreError::dimension(format!("control csv line {}: {what}", lineno + 1))
            };
            let t: f64 = parts
                .next()
                .ok_or_else(|| err("missing t"))?
                .trim()
                .parse()
                .map_err(|_| err("bad t"))?;
            let j: usize = parts
                .next()
                .ok_or_else(|| err("missing theta_index"))?
                .trim()
                .parse()
                .map_err(|_| err("bad theta_index"))?;
            let f: f64 = parts
                .next()
                .ok_or_else(|| err("missing f"))?
                .trim()
                .parse()
                .map_err(|_| err("bad f"))?;
            let idx = ((t / dt) - 0.5).round() as i64;
            if idx < 0 || idx as usize >= n {
                return Err(err("time outside horizon"));
            }
            if j >= g.ntheta {
                return Err(err("theta_index outside grid"));
            }
            values[idx as usize][j] = f;
            seen[idx as usize] += 1;
        }
        if seen.iter().any(|&c| c != g.ntheta) {
            return Err(CoreError::dimension("control csv does not cover the full grid"));
        }
        Ok(ControlSignal { dt, t_final, values })
    }
}

/// Number of implicit-midpoint steps covering `[0, T]`.
pub fn n_steps(t_final: f64, dt: f64) -> Result<usize, CoreError> {
    if !(dt > 0.0) || !(t_final > 0.0) {
        return Err(CoreError::config(format!(
            "horizon and step must be positive, got T = {t_final}, dt = {dt}"
        )));
    }
    Ok((t_final / dt - 1e-9).ceil().max(1.0) as usize)
}

/// Recorded (decimated) snapshot of a trajectory.
#[derive(Debug, Clone)]
pub struct RecordedState {
    pub step: usize,
    pub state: StateVector,
}

/// Forward trajectory: decimated interior snapshots plus the dense boundary
/// velocity history needed by the adjoint machinery.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub dt: f64,
    pub n_steps: usize,
    /// All step timestamps `t_0 … t_N`.
    pub times: Vec<f64>,
    /// Decimated snapshots (always includes step 0 and step N).
    pub states: Vec<RecordedState>,
    /// `v_t` at every step node.
    pub boundary_history: Vec<BoundaryField>,
    pub final_state: StateVector,
}

impl Trajectory {
    /// Centered second difference of `v_t` at an interior node, the discrete
    /// boundary acceleration used by the control synthesis.
    pub fn vt_centered_derivative(&self, k: usize) -> BoundaryField {
        assert!(k >= 1 && k < self.n_steps, "interior step nodes only");
        (&self.boundary_history[k + 1] - &self.boundary_history[k - 1]) / (2.0 * self.dt)
    }
}

/// Per-step energy accounting. All columns are sampled at step nodes.
#[derive(Debug, Clone)]
pub struct EnergyLedger {
    pub times: Vec<f64>,
    pub energy: Vec<f64>,
    /// Cumulative `(d/ρ)∫∫ v̄_t²` (interval-midpoint quadrature).
    pub dissipated: Vec<f64>,
    /// Cumulative control work `−(1/ρ)∫∫ f̄·v̄_t`.
    pub work_in: Vec<f64>,
    /// `E(t) − E(0) + dissipated − work_in`, zero to round-off.
    pub residual: Vec<f64>,
    pub hooke: Vec<f64>,
}

impl EnergyLedger {
    pub fn max_abs_residual(&self) -> f64 {
        self.residual.iter().fold(0.0, |a, r| a.max(r.abs()))
    }

    pub fn max_hooke_drift(&self) -> f64 {
        let h0 = self.hooke[0];
        self.hooke.iter().fold(0.0, |a, h| a.max((h - h0).abs()))
    }

    /// CSV rows `t, E, dissipated, work_in, residual, hooke`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,E,dissipated,work_in,residual,hooke\n");
        for i in 0..self.times.len() {
            let _ = writeln!(
                out,
                "{:.12e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
                self.times[i],
                self.energy[i],
                self.dissipated[i],
                self.work_in[i],
                self.residual[i],
                self.hooke[i]
            );
        }
        out
    }
}

/// One implicit-midpoint step from node samples of the force (averaged onto
/// the interval). Convenience wrapper that builds a solver per call; loops
/// should construct a [`Stepper`] once and reuse it.
pub fn step(
    s: &StateVector,
    f_now: &BoundaryField,
    f_next: &BoundaryField,
    dt: f64,
    p: &PhysicalParams,
    g: &AnnulusGrid,
) -> Result<StateVector, CoreError> {
    s.check_grid(g)?;
    g.check_boundary(f_now, "f_now")?;
    g.check_boundary(f_next, "f_next")?;
    let f_mid = (f_now + f_next) * 0.5;
    let mut st = Stepper::new(p, g, dt, StepDirection::Forward)?;
    st.step(s, Some(&f_mid))
}

/// Integrate the controlled system over `[0, T]`.
///
/// `control = None` means free evolution. `decimation` controls how often a
/// full interior snapshot is kept (the boundary history is always dense).
pub fn simulate(
    s0: &StateVector,
    control: Option<&ControlSignal>,
    t_final: f64,
    dt: f64,
    p: &PhysicalParams,
    g: &AnnulusGrid,
    decimation: usize,
) -> Result<(Trajectory, EnergyLedger), CoreError> {
    simulate_forced(s0, control, None, t_final, dt, p, g, decimation)
}

/// [`simulate`] with an optional interior forcing `g_int(t_mid)` of the wave
/// equation, used by manufactured-solution studies.
#[allow(clippy::too_many_arguments)]
pub fn simulate_forced(
    s0: &StateVector,
    control: Option<&ControlSignal>,
    interior_forcing: Option<&dyn Fn(f64) -> InteriorField>,
    t_final: f64,
    dt: f64,
    p: &PhysicalParams,
    g: &AnnulusGrid,
    decimation: usize,
) -> Result<(Trajectory, EnergyLedger), CoreError> {
    s0.check_grid(g)?;
    let n = n_steps(t_final, dt)?;
    if let Some(c) = control {
        if c.n_intervals() != n || (c.dt - dt).abs() > 1e-12 * dt {
            return Err(CoreError::dimension(format!(
                "control covers {} intervals at dt = {}, run needs {} at dt = {}",
                c.n_intervals(),
                c.dt,
                n,
                dt
            )));
        }
        for (i, f) in c.values.iter().enumerate() {
            g.check_boundary(f, &format!("control[{i}]"))?;
        }
    }
    let decimation = decimation.max(1);

    let mut stepper = Stepper::new(p, g, dt, StepDirection::Forward)?;
    let mut times = Vec::with_capacity(n + 1);
    let mut boundary_history = Vec::with_capacity(n + 1);
    let mut states = Vec::new();
    let mut energy = Vec::with_capacity(n + 1);
    let mut dissipated = Vec::with_capacity(n + 1);
    let mut work_in = Vec::with_capacity(n + 1);
    let mut residual = Vec::with_capacity(n + 1);
    let mut hooke = Vec::with_capacity(n + 1);

    let mut s = s0.clone();
    let e0 = model::energy(&s, p, g)?.total;
    times.push(0.0);
    boundary_history.push(s.vt.clone());
    states.push(RecordedState { step: 0, state: s.clone() });
    energy.push(e0);
    dissipated.push(0.0);
    work_in.push(0.0);
    residual.push(0.0);
    hooke.push(model::hooke_invariant(&s, p, g));

    let mut next = StateVector::zero(g);
    let mut diss_acc = 0.0;
    let mut work_acc = 0.0;
    for step_idx in 0..n {
        let f_mid = control.map(|c| &c.values[step_idx]);
        let gi = interior_forcing.map(|f| f((step_idx as f64 + 0.5) * dt));
        stepper.step_into(&s, f_mid, gi.as_ref(), &mut next)?;

        // exact interval quadratures for the ledger
        let mut vt_bar2 = 0.0;
        let mut f_pair = 0.0;
        for j in 0..g.ntheta {
            let vbar = 0.5 * (s.vt[j] + next.vt[j]);
            vt_bar2 += vbar * vbar;
            if let Some(f) = f_mid {
                f_pair += f[j] * vbar;
            }
        }
        diss_acc += dt * (p.d / p.rho) * g.arc_weight * vt_bar2;
        work_acc -= dt * (1.0 / p.rho) * g.arc_weight * f_pair;

        std::mem::swap(&mut s, &mut next);
        let t = (step_idx + 1) as f64 * dt;
        times.push(t);
        boundary_history.push(s.vt.clone());
        let e = model::energy(&s, p, g)?.total;
        energy.push(e);
        dissipated.push(diss_acc);
        work_in.push(work_acc);
        residual.push(e - e0 + diss_acc - work_acc);
        hooke.push(model::hooke_invariant(&s, p, g));
        if (step_idx + 1) % decimation == 0 || step_idx + 1 == n {
            states.push(RecordedState { step: step_idx + 1, state: s.clone() });
        }
    }

    let traj = Trajectory {
        dt,
        n_steps: n,
        times: times.clone(),
        states,
        boundary_history,
        final_state: s,
    };
    let ledger = EnergyLedger { times, energy, dissipated, work_in, residual, hooke };
    Ok((traj, ledger))
}

/// Terminal state of a probe run: an element of the reachable set used as a
/// guaranteed-attainable target in exact-control demonstrations.
pub fn reachable_target(
    s0: &StateVector,
    probe_control: Option<&ControlSignal>,
    t_final: f64,
    dt: f64,
    p: &PhysicalParams,
    g: &AnnulusGrid,
) -> Result<StateVector, CoreError> {
    let (traj, _) = simulate(s0, probe_control, t_final, dt, p, g, usize::MAX)?;
    Ok(traj.final_state)
}

/// Quadrature inner product of two boundary fields, `∫_Γ1 a·b dΓ`.
pub fn boundary_pairing(a: &BoundaryField, b: &BoundaryField, g: &AnnulusGrid) -> f64 {
    let mut acc = 0.0;
    for j in 0..g.ntheta {
        acc += a[j] * b[j];
    }
    acc * g.arc_weight
}
