//! Implicit-midpoint (Cayley) time stepping for the coupled system.
//!
//! One step solves `(I − h·A)·s' = (I + h·A)·s + dt·forcing` with `h = dt/2`.
//! The backward adjoint map is the same solve with `h → −h` and `d → −d`
//! (because `A* = −A|_{d→−d}`), which makes the backward scheme the exact
//! phase-space adjoint of the forward one.
//!
//! The linear system is eliminated exactly down to a boundary Schur
//! complement: the interior block `K = I − h²c²·L₀` is symmetric positive
//! definite in the quadrature inner product and is inverted by CG, while the
//! `ntheta × ntheta` boundary block is assembled once per
//! (grid, params, dt) and LU-factorized. A step therefore costs one interior
//! CG solve plus dense boundary work.

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;

use crate::error::CoreError;
use crate::grid::{self, AnnulusGrid, BoundaryField, InteriorField};
use crate::model::{PhysicalParams, StateVector};

/// Relative tolerance of the interior CG solve. The step contract
/// (relative residual ≤ 1e-11) holds with margin.
const CG_TOL: f64 = 1e-13;
const CG_MAX_ITER: usize = 800;

/// Direction of the Cayley map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepDirection {
    /// `s_{n+1} = (I − hA)⁻¹[(I + hA)s_n + dt·forcing]`.
    Forward,
    /// `Z_n = (I − hA*)⁻¹(I + hA*)·Z_{n+1}` — the exact adjoint of the
    /// forward map, used to integrate the backward system from `t = T`.
    AdjointBackward,
}

/// Cached solver for repeated implicit-midpoint steps.
pub struct Stepper {
    p: PhysicalParams,
    g: AnnulusGrid,
    dt: f64,
    /// Effective half step (negative for the backward map).
    h: f64,
    /// Effective damping (negative for the backward map).
    d_eff: f64,
    /// Columns of `K⁻¹F` stored row-per-boundary-node: shape `(ntheta, nr·ntheta)`.
    kif_t: Array2<f64>,
    s_lu: nalgebra::linalg::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    // scratch buffers
    lap: InteriorField,
    q: InteriorField,
    cg_r: InteriorField,
    cg_p: InteriorField,
    cg_x: InteriorField,
    lb: BoundaryField,
    rhs_s: DVector<f64>,
    zero_flux: BoundaryField,
}

impl Stepper {
    /// Build the solver for a fixed `(params, grid, dt, direction)`.
    /// `dt` may be negative for time-reversal experiments.
    pub fn new(
        p: &PhysicalParams,
        g: &AnnulusGrid,
        dt: f64,
        dir: StepDirection,
    ) -> Result<Self, CoreError> {
        p.validate()?;
        if dt == 0.0 || !dt.is_finite() {
            return Err(CoreError::config(format!("step size must be nonzero, got dt = {dt}")));
        }
        let (h, d_eff) = match dir {
            StepDirection::Forward => (0.5 * dt, p.d),
            StepDirection::AdjointBackward => (-0.5 * dt, -p.d),
        };

        let n_int = g.nr * g.ntheta;

        let mut solver = Stepper {
            p: *p,
            g: g.clone(),
            dt,
            h,
            d_eff,
            kif_t: Array2::zeros((g.ntheta, n_int)),
            // placeholder; replaced below
            s_lu: nalgebra::linalg::LU::new(DMatrix::identity(1, 1)),
            lap: g.zero_interior(),
            q: g.zero_interior(),
            cg_r: g.zero_interior(),
            cg_p: g.zero_interior(),
            cg_x: g.zero_interior(),
            lb: g.zero_boundary(),
            rhs_s: DVector::zeros(g.ntheta),
            zero_flux: g.zero_boundary(),
        };

        // K⁻¹F columns: F e_j injects arc_weight/m_outer = 2/dr at node (nr−1, j).
        let inject = 2.0 / g.dr;
        let nt = g.ntheta;
        for j in 0..nt {
            let mut b = g.zero_interior();
            b[[g.nr - 1, j]] = inject;
            let y = solver.solve_k(&b, 1e-14)?;
            for (idx, val) in y.iter().enumerate() {
                solver.kif_t[[j, idx]] = *val;
            }
        }

        // Boundary Schur complement.
        let h2 = h * h;
        let diag = 1.0 + h * d_eff / p.m + h2 * p.k / p.m;
        let lb_c = 1.0 / (g.r1 * g.r1 * g.dtheta * g.dtheta);
        let trace_row = g.nr - 1;
        let mut s_mat = DMatrix::zeros(nt, nt);
        for j in 0..nt {
            let jp = (j + 1) % nt;
            let jm = (j + nt - 1) % nt;
            s_mat[(j, j)] += diag + h2 * p.sigma / p.m * 2.0 * lb_c;
            s_mat[(j, jp)] -= h2 * p.sigma / p.m * lb_c;
            s_mat[(j, jm)] -= h2 * p.sigma / p.m * lb_c;
        }
        let coupling = h2 * p.rho * p.c_squared() / p.m;
        for j in 0..nt {
            for j2 in 0..nt {
                s_mat[(j2, j)] += coupling * solver.kif_t[[j, trace_row * nt + j2]];
            }
        }
        let lu = nalgebra::linalg::LU::new(s_mat);
        solver.s_lu = lu;
        Ok(solver)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn grid(&self) -> &AnnulusGrid {
        &self.g
    }

    pub fn params(&self) -> &PhysicalParams {
        &self.p
    }

    /// Apply `K = I − h²c²L₀` (zero-flux Laplacian).
    fn apply_k(&mut self, x: &InteriorField, out: &mut InteriorField) {
        grid::laplacian_into(x, &self.zero_flux, &self.g, &mut self.lap);
        let a = self.h * self.h * self.p.c_squared();
        out.zip_mut_with(x, |o, &xv| *o = xv);
        out.zip_mut_with(&self.lap, |o, &l| *o -= a * l);
    }

    fn dot_m(&self, a: &InteriorField, b: &InteriorField) -> f64 {
        let (nr, nt) = (self.g.nr, self.g.ntheta);
        let mut acc = 0.0;
        for i in 0..nr {
            let w = self.g.cell_weights[i];
            for j in 0..nt {
                acc += w * a[[i, j]] * b[[i, j]];
            }
        }
        acc
    }

    /// CG on the SPD interior block, in the quadrature inner product.
    fn solve_k(&mut self, b: &InteriorField, tol: f64) -> Result<InteriorField, CoreError> {
        let b_norm2 = self.dot_m(b, b);
        if b_norm2 == 0.0 {
            return Ok(self.g.zero_interior());
        }
        // start from b: K ≈ I so the initial residual is already O(h²‖L‖)
        self.cg_x.assign(b);
        let mut x = std::mem::replace(&mut self.cg_x, self.g.zero_interior());
        let mut kx = self.g.zero_interior();
        self.apply_k(&x, &mut kx);
        self.cg_r.assign(b);
        self.cg_r.zip_mut_with(&kx, |r, &k| *r -= k);
        self.cg_p.assign(&self.cg_r);
        let mut rs = self.dot_m(&self.cg_r, &self.cg_r);
        let target = tol * tol * b_norm2;
        let mut iterations = 0;
        while rs > target {
            if iterations >= CG_MAX_ITER {
                let residual = (rs / b_norm2).sqrt();
                self.cg_x = x;
                return Err(CoreError::SolverDiverged { iterations, residual });
            }
            let p_dir = std::mem::replace(&mut self.cg_p, self.g.zero_interior());
            self.apply_k(&p_dir, &mut kx);
            let alpha = rs / self.dot_m(&p_dir, &kx);
            x.scaled_add(alpha, &p_dir);
            self.cg_r.scaled_add(-alpha, &kx);
            let rs_new = self.dot_m(&self.cg_r, &self.cg_r);
            let beta = rs_new / rs;
            self.cg_p = p_dir;
            self.cg_p.zip_mut_with(&self.cg_r, |p, &r| *p = r + beta * *p);
            rs = rs_new;
            iterations += 1;
        }
        self.cg_x = self.g.zero_interior();
        Ok(x)
    }

    /// One implicit-midpoint step.
    ///
    /// `force_mid` is the boundary force sampled on the step interval
    /// (entering the membrane equation as `−f/m`); `interior_mid` is an
    /// optional interior forcing of the wave equation (used by manufactured
    /// solutions). The result overwrites `out`.
    pub fn step_into(
        &mut self,
        s: &StateVector,
        force_mid: Option<&BoundaryField>,
        interior_mid: Option<&InteriorField>,
        out: &mut StateVector,
    ) -> Result<(), CoreError> {
        let (p, h, dt) = (self.p, self.h, self.dt);
        let g = self.g.clone();
        let nt = g.ntheta;
        let trace_row = g.nr - 1;

        // rhs of (I − hA)x = (I + hA)s + dt·forcing
        out.u.assign(&s.u);
        out.u.scaled_add(h, &s.ut);
        out.v.assign(&s.v);
        out.v.scaled_add(h, &s.vt);

        grid::laplacian_into(&s.u, &s.vt, &g, &mut self.lap);
        let c2 = p.c_squared();
        out.ut.assign(&s.ut);
        out.ut.zip_mut_with(&self.lap, |o, &l| *o += h * c2 * l);
        if let Some(gi) = interior_mid {
            out.ut.scaled_add(dt, gi);
        }

        grid::boundary_laplace_beltrami_into(&s.v, &g, &mut self.lb);
        for j in 0..nt {
            let mut acc = s.vt[j]
                + h / p.m
                    * (p.sigma * self.lb[j]
                        - self.d_eff * s.vt[j]
                        - p.k * s.v[j]
                        - p.rho * s.ut[[trace_row, j]]);
            if let Some(f) = force_mid {
                acc -= dt * f[j] / p.m;
            }
            out.vt[j] = acc;
        }

        // interior elimination: K x_ut = rhs_ut + h c² L₀(rhs_u) + h c² F x_vt
        grid::laplacian_into(&out.u, &self.zero_flux, &g, &mut self.lap);
        self.q.assign(&out.ut);
        let hq = h * c2;
        self.q.zip_mut_with(&self.lap, |qv, &l| *qv += hq * l);
        let q_owned = std::mem::replace(&mut self.q, g.zero_interior());
        let w = self.solve_k(&q_owned, CG_TOL)?;
        self.q = q_owned;

        // boundary Schur solve
        grid::boundary_laplace_beltrami_into(&out.v, &g, &mut self.lb);
        for j in 0..nt {
            self.rhs_s[j] = out.vt[j] + h / p.m * (p.sigma * self.lb[j] - p.k * out.v[j])
                - h * p.rho / p.m * w[[trace_row, j]];
        }
        let x_vt = self
            .s_lu
            .solve(&self.rhs_s)
            .ok_or_else(|| CoreError::numerical("stepper", "boundary Schur block is singular"))?;

        // x_ut = w + h c² (K⁻¹F) x_vt
        out.ut.assign(&w);
        {
            let out_flat = out.ut.as_slice_mut().expect("contiguous field");
            for j in 0..nt {
                let coeff = h * c2 * x_vt[j];
                if coeff != 0.0 {
                    let row = self.kif_t.row(j);
                    let row = row.as_slice().expect("contiguous kif row");
                    for (o, &kv) in out_flat.iter_mut().zip(row.iter()) {
                        *o += coeff * kv;
                    }
                }
            }
        }

        // back-substitute the displacement components (rhs stored in out.u/out.v)
        out.u.scaled_add(h, &out.ut);
        for j in 0..nt {
            out.v[j] += h * x_vt[j];
            out.vt[j] = x_vt[j];
        }
        Ok(())
    }

    /// Convenience allocating variant of [`Stepper::step_into`].
    pub fn step(
        &mut self,
        s: &StateVector,
        force_mid: Option<&BoundaryField>,
    ) -> Result<StateVector, CoreError> {
        let mut out = StateVector::zero(&self.g);
        self.step_into(s, force_mid, None, &mut out)?;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;
    use crate::model::{self, GeneratorKind};

    fn setup() -> (PhysicalParams, AnnulusGrid) {
        (PhysicalParams::canonical(), build_grid(0.5, 1.0, 9, 16).unwrap())
    }

    fn residual_of_step(
        p: &PhysicalParams,
        g: &AnnulusGrid,
        s: &StateVector,
        s_next: &StateVector,
        dt: f64,
        force_mid: Option<&BoundaryField>,
    ) -> f64 {
        // (I − hA)s' − (I + hA)s − dt·B f should vanish
        let h = 0.5 * dt;
        let a_next = model::apply_generator(s_next, p, g, GeneratorKind::Forward);
        let a_prev = model::apply_generator(s, p, g, GeneratorKind::Forward);
        let mut lhs = s_next.clone();
        lhs.axpy(-h, &a_next);
        let mut rhs = s.clone();
        rhs.axpy(h, &a_prev);
        if let Some(f) = force_mid {
            for j in 0..g.ntheta {
                rhs.vt[j] -= dt * f[j] / p.m;
            }
        }
        let diff = lhs.sub(&rhs);
        let scale = model::h_norm(s, p, g) + model::h_norm(s_next, p, g) + 1.0;
        model::h_norm(&diff, p, g) / scale
    }

    #[test]
    fn zero_state_stays_zero() {
        let (p, g) = setup();
        let mut st = Stepper::new(&p, &g, 1e-2, StepDirection::Forward).unwrap();
        let z = StateVector::zero(&g);
        let next = st.step(&z, None).unwrap();
        assert!(model::h_norm(&next, &p, &g) == 0.0);
    }

    #[test]
    fn step_satisfies_midpoint_equations() {
        let (p, g) = setup();
        let mut st = Stepper::new(&p, &g, 5e-3, StepDirection::Forward).unwrap();
        let s = model::random_state_for_tests(&g, 5);
        let next = st.step(&s, None).unwrap();
        let res = residual_of_step(&p, &g, &s, &next, 5e-3, None);
        assert!(res <= 1e-11, "midpoint residual {res}");

        let mut f = g.zero_boundary();
        for j in 0..g.ntheta {
            f[j] = (g.theta(j)).cos();
        }
        let next_f = st.step(&s, Some(&f)).unwrap();
        let res_f = residual_of_step(&p, &g, &s, &next_f, 5e-3, Some(&f));
        assert!(res_f <= 1e-11, "forced midpoint residual {res_f}");
    }

    #[test]
    fn step_is_linear() {
        let (p, g) = setup();
        let mut st = Stepper::new(&p, &g, 5e-3, StepDirection::Forward).unwrap();
        let a = model::random_state_for_tests(&g, 1);
        let b = model::random_state_for_tests(&g, 2);
        let mut combo = a.scaled(0.7);
        combo.axpy(-1.3, &b);
        let lhs = st.step(&combo, None).unwrap();
        let sa = st.step(&a, None).unwrap();
        let sb = st.step(&b, None).unwrap();
        let mut rhs = sa.scaled(0.7);
        rhs.axpy(-1.3, &sb);
        let diff = lhs.sub(&rhs);
        let scale = model::h_norm(&lhs, &p, &g) + 1.0;
        assert!(model::h_norm(&diff, &p, &g) <= 1e-10 * scale);
    }

    #[test]
    fn forward_backward_round_trip() {
        // the Cayley map with −dt is the exact inverse of the map with +dt,
        // damping included, so a forward/backward sweep returns the state
        let (p, g) = setup();
        let s0 = model::random_state_for_tests(&g, 9);
        let mut fwd = Stepper::new(&p, &g, 4e-3, StepDirection::Forward).unwrap();
        let mut bwd = Stepper::new(&p, &g, -4e-3, StepDirection::Forward).unwrap();
        let mut s = s0.clone();
        for _ in 0..20 {
            s = fwd.step(&s, None).unwrap();
        }
        for _ in 0..20 {
            s = bwd.step(&s, None).unwrap();
        }
        let diff = s.sub(&s0);
        let scale = model::h_norm(&s0, &p, &g);
        assert!(
            model::h_norm(&diff, &p, &g) <= 1e-10 * scale,
            "round trip error {}",
            model::h_norm(&diff, &p, &g) / scale
        );
    }

    #[test]
    fn backward_stepper_is_exact_adjoint() {
        // ⟨Φ a, b⟩_H = ⟨a, Φ* b⟩_H where Φ* is one backward step
        let (p, g) = setup();
        let dt = 3e-3;
        let mut fwd = Stepper::new(&p, &g, dt, StepDirection::Forward).unwrap();
        let mut bwd = Stepper::new(&p, &g, dt, StepDirection::AdjointBackward).unwrap();
        for seed in 0..5u64 {
            let a = model::random_state_for_tests(&g, seed);
            let b = model::random_state_for_tests(&g, seed + 100);
            let fa = fwd.step(&a, None).unwrap();
            let ab = bwd.step(&b, None).unwrap();
            let lhs = model::inner_product(&fa, &b, &p, &g).unwrap();
            let rhs = model::inner_product(&a, &ab, &p, &g).unwrap();
            let scale = model::h_norm(&a, &p, &g) * model::h_norm(&b, &p, &g);
            assert!(
                (lhs - rhs).abs() <= 1e-11 * scale,
                "adjoint defect {}",
                (lhs - rhs).abs() / scale
            );
        }
    }
}
