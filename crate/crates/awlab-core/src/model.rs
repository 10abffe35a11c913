//! Physical parameters, the constrained phase space, its inner product and
//! energy, the conserved integral invariant, and the generator of the
//! coupled dynamics together with its adjoint.

use ndarray::Array1;

use crate::error::CoreError;
use crate::grid::{
    self, AnnulusGrid, BoundaryField, InteriorField,
};

/// Constants of the coupled model. `c` is always derived from `kappa` and
/// `rho` (`c² = 1/(κρ)` holds exactly because only `c_squared` is ever used).
#[derive(Debug, Clone, Copy)]
pub struct PhysicalParams {
    pub rho: f64,
    pub kappa: f64,
    /// Membrane mass per unit area.
    pub m: f64,
    /// Effective tangential stiffness.
    pub sigma: f64,
    /// Boundary resistivity (damping).
    pub d: f64,
    /// Spring constant.
    pub k: f64,
}

impl PhysicalParams {
    pub fn new(rho: f64, kappa: f64, m: f64, sigma: f64, d: f64, k: f64) -> Result<Self, CoreError> {
        let p = PhysicalParams { rho, kappa, m, sigma, d, k };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        let pos = [("rho", self.rho), ("kappa", self.kappa), ("m", self.m), ("d", self.d)];
        for (name, v) in pos {
            if !(v > 0.0) || !v.is_finite() {
                return Err(CoreError::config(format!("{name} must be positive, got {v}")));
            }
        }
        let nonneg = [("sigma", self.sigma), ("k", self.k)];
        for (name, v) in nonneg {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(CoreError::config(format!("{name} must be nonnegative, got {v}")));
            }
        }
        Ok(())
    }

    /// Wave speed `sqrt(1/(κρ))`.
    pub fn c(&self) -> f64 {
        self.c_squared().sqrt()
    }

    /// `c² = 1/(κρ)` computed directly so that `ρc² = 1/κ` to round-off.
    pub fn c_squared(&self) -> f64 {
        1.0 / (self.kappa * self.rho)
    }

    /// With `k = σ = 0` the phase-space norm does not control the boundary
    /// displacement; configurations like that are accepted but flagged in
    /// every report.
    pub fn seminorm_warning(&self) -> bool {
        self.k == 0.0 && self.sigma == 0.0
    }

    /// Canonical desk-scale configuration (`c = 1`).
    pub fn canonical() -> Self {
        PhysicalParams { rho: 1.0, kappa: 1.0, m: 1.0, sigma: 0.1, d: 1.0, k: 1.0 }
    }
}

/// State quadruple `(u, v, u_t, v_t)` on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    pub u: InteriorField,
    pub v: BoundaryField,
    pub ut: InteriorField,
    pub vt: BoundaryField,
}

impl StateVector {
    pub fn zero(g: &AnnulusGrid) -> Self {
        StateVector {
            u: g.zero_interior(),
            v: g.zero_boundary(),
            ut: g.zero_interior(),
            vt: g.zero_boundary(),
        }
    }

    pub fn check_grid(&self, g: &AnnulusGrid) -> Result<(), CoreError> {
        g.check_interior(&self.u, "state.u")?;
        g.check_boundary(&self.v, "state.v")?;
        g.check_interior(&self.ut, "state.ut")?;
        g.check_boundary(&self.vt, "state.vt")
    }

    pub fn scaled(&self, a: f64) -> StateVector {
        StateVector {
            u: &self.u * a,
            v: &self.v * a,
            ut: &self.ut * a,
            vt: &self.vt * a,
        }
    }

    pub fn axpy(&mut self, a: f64, x: &StateVector) {
        self.u.scaled_add(a, &x.u);
        self.v.scaled_add(a, &x.v);
        self.ut.scaled_add(a, &x.ut);
        self.vt.scaled_add(a, &x.vt);
    }

    pub fn add(&self, x: &StateVector) -> StateVector {
        let mut out = self.clone();
        out.axpy(1.0, x);
        out
    }

    pub fn sub(&self, x: &StateVector) -> StateVector {
        let mut out = self.clone();
        out.axpy(-1.0, x);
        out
    }
}

/// Decomposition of the total energy `½‖s‖²_H` into its five quadratures.
#[derive(Debug, Clone, Copy)]
pub struct EnergyBreakdown {
    /// `½∫ c⁻²·u_t²`
    pub kinetic_interior: f64,
    /// `½∫ |∇u|²`
    pub potential_interior: f64,
    /// `½∫_Γ1 (m/ρ)·v_t²`
    pub kinetic_boundary: f64,
    /// `½∫_Γ1 (σ/ρ)·|∇_Γ v|²`
    pub membrane: f64,
    /// `½∫_Γ1 (k/ρ)·v²`
    pub spring: f64,
    /// Sum of the five parts, in field order.
    pub total: f64,
}

/// Phase-space inner product
/// `∫[c⁻²·a_ut·b_ut + ∇a_u·∇b_u] + ∫_Γ1[(m/ρ)a_vt·b_vt + (σ/ρ)∇_Γa_v·∇_Γb_v + (k/ρ)a_v·b_v]`.
pub fn inner_product(
    a: &StateVector,
    b: &StateVector,
    p: &PhysicalParams,
    g: &AnnulusGrid,
) -> Result<f64, CoreError> {
    a.check_grid(g)?;
    b.check_grid(g)?;
    Ok(inner_product_unchecked(a, b, p, g))
}

pub(crate) fn inner_product_unchecked(
    a: &StateVector,
    b: &StateVector,
    p: &PhysicalParams,
    g: &AnnulusGrid,
) -> f64 {
    let inv_c2 = 1.0 / p.c_squared();
    let mut acc = 0.0;
    for i in 0..g.nr {
        let w = g.cell_weights[i] * inv_c2;
        for j in 0..g.ntheta {
            acc += w * a.ut[[i, j]] * b.ut[[i, j]];
        }
    }
    acc += grid::dirichlet_interior(&a.u, &b.u, g);
    let wb = g.arc_weight;
    let mr = p.m / p.rho;
    let kr = p.k / p.rho;
    for j in 0..g.ntheta {
        acc += wb * (mr * a.vt[j] * b.vt[j] + kr * a.v[j] * b.v[j]);
    }
    acc += (p.sigma / p.rho) * grid::dirichlet_boundary(&a.v, &b.v, g);
    acc
}

/// Norm induced by [`inner_product`].
pub fn h_norm(s: &StateVector, p: &PhysicalParams, g: &AnnulusGrid) -> f64 {
    inner_product_unchecked(s, s, p, g).max(0.0).sqrt()
}

/// Energy ledger entry: the five quadratures and their sum; `total` equals
/// `½·inner_product(s,s)` up to round-off.
pub fn energy(s: &StateVector, p: &PhysicalParams, g: &AnnulusGrid) -> Result<EnergyBreakdown, CoreError> {
    s.check_grid(g)?;
    let inv_c2 = 1.0 / p.c_squared();
    let mut kin_i = 0.0;
    for i in 0..g.nr {
        let w = g.cell_weights[i];
        for j in 0..g.ntheta {
            kin_i += w * s.ut[[i, j]] * s.ut[[i, j]];
        }
    }
    let kinetic_interior = 0.5 * inv_c2 * kin_i;
    let potential_interior = 0.5 * grid::dirichlet_interior(&s.u, &s.u, g);
    let mut v2 = 0.0;
    let mut vt2 = 0.0;
    for j in 0..g.ntheta {
        v2 += s.v[j] * s.v[j];
        vt2 += s.vt[j] * s.vt[j];
    }
    let kinetic_boundary = 0.5 * (p.m / p.rho) * g.arc_weight * vt2;
    let membrane = 0.5 * (p.sigma / p.rho) * grid::dirichlet_boundary(&s.v, &s.v, g);
    let spring = 0.5 * (p.k / p.rho) * g.arc_weight * v2;
    let total = kinetic_interior + potential_interior + kinetic_boundary + membrane + spring;
    Ok(EnergyBreakdown {
        kinetic_interior,
        potential_interior,
        kinetic_boundary,
        membrane,
        spring,
        total,
    })
}

/// The conserved integral `ρ∫_Ω u_t dx − (1/κ)∫_Γ1 v dΓ` (macroscopic
/// Hooke's law; zero on admissible data, constant along homogeneous
/// trajectories).
pub fn hooke_invariant(s: &StateVector, p: &PhysicalParams, g: &AnnulusGrid) -> f64 {
    p.rho * grid::quadrature_interior(&s.ut, g) - grid::quadrature_boundary(&s.v, g) / p.kappa
}

/// Mean of the interior potential under the grid quadrature.
pub fn mean_interior(u: &InteriorField, g: &AnnulusGrid) -> f64 {
    grid::quadrature_interior(u, g) / g.interior_area()
}

/// Project onto the constraint manifold: subtract the interior mean from `u`
/// and shift `ut` by the constant that zeroes the Hooke invariant.
/// Idempotent.
pub fn project_constraints(s: &StateVector, p: &PhysicalParams, g: &AnnulusGrid) -> StateVector {
    let mut out = s.clone();
    let mu = mean_interior(&s.u, g);
    out.u.mapv_inplace(|x| x - mu);
    let h = hooke_invariant(s, p, g);
    let shift = h / (p.rho * g.interior_area());
    out.ut.mapv_inplace(|x| x - shift);
    out
}

/// Which side of the duality the generator realizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneratorKind {
    /// `A(u,v,u_t,v_t) = (u_t, v_t, c²Δu, (1/m)[σΔ_Γv − d·v_t − k·v − ρ·u_t|Γ1])`
    Forward,
    /// `A* = −A` with the damping sign flipped.
    Adjoint,
}

/// Apply the discrete generator to a state. The flux `∂_n u = v_t` on the
/// outer ring is folded into the Laplacian row (same convention in both
/// directions, matching the operator domains).
pub fn apply_generator(
    s: &StateVector,
    p: &PhysicalParams,
    g: &AnnulusGrid,
    kind: GeneratorKind,
) -> StateVector {
    let c2 = p.c_squared();
    let mut ut_dot = g.zero_interior();
    grid::laplacian_into(&s.u, &s.vt, g, &mut ut_dot);
    ut_dot.mapv_inplace(|x| x * c2);

    let mut lb = g.zero_boundary();
    grid::boundary_laplace_beltrami_into(&s.v, g, &mut lb);
    let trace_ut = grid::trace_gamma1(&s.ut, g);
    let d_eff = match kind {
        GeneratorKind::Forward => p.d,
        GeneratorKind::Adjoint => -p.d,
    };
    let mut vt_dot = Array1::zeros(g.ntheta);
    for j in 0..g.ntheta {
        vt_dot[j] =
            (p.sigma * lb[j] - d_eff * s.vt[j] - p.k * s.v[j] - p.rho * trace_ut[j]) / p.m;
    }

    match kind {
        GeneratorKind::Forward => StateVector { u: s.ut.clone(), v: s.vt.clone(), ut: ut_dot, vt: vt_dot },
        GeneratorKind::Adjoint => StateVector {
            u: s.ut.mapv(|x| -x),
            v: s.vt.mapv(|x| -x),
            ut: ut_dot.mapv_into(|x| -x),
            vt: vt_dot.mapv_into(|x| -x),
        },
    }
}

/// `Re⟨A_h s, s⟩_H + (d/ρ)∫_Γ1 v_t²` — zero to round-off by the discrete
/// summation-by-parts identities.
pub fn dissipativity_residual(s: &StateVector, p: &PhysicalParams, g: &AnnulusGrid) -> f64 {
    let a_s = apply_generator(s, p, g, GeneratorKind::Forward);
    let quad = inner_product_unchecked(&a_s, s, p, g);
    let mut vt2 = 0.0;
    for j in 0..g.ntheta {
        vt2 += s.vt[j] * s.vt[j];
    }
    quad + (p.d / p.rho) * g.arc_weight * vt2
}

/// Same identity for the adjoint generator: `Re⟨A*_h z, z⟩_H + (d/ρ)‖z_vt‖²`.
pub fn adjoint_dissipativity_residual(s: &StateVector, p: &PhysicalParams, g: &AnnulusGrid) -> f64 {
    let a_s = apply_generator(s, p, g, GeneratorKind::Adjoint);
    let quad = inner_product_unchecked(&a_s, s, p, g);
    let mut vt2 = 0.0;
    for j in 0..g.ntheta {
        vt2 += s.vt[j] * s.vt[j];
    }
    quad + (p.d / p.rho) * g.arc_weight * vt2
}

/// Reproducible dense random state, used across the test suites.
#[cfg(test)]
pub(crate) fn random_state_for_tests(g: &AnnulusGrid, seed: u64) -> StateVector {
    use rand::prelude::*;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut s = StateVector::zero(g);
    s.u.mapv_inplace(|_| rng.random::<f64>() - 0.5);
    s.ut.mapv_inplace(|_| rng.random::<f64>() - 0.5);
    s.v.mapv_inplace(|_| rng.random::<f64>() - 0.5);
    s.vt.mapv_inplace(|_| rng.random::<f64>() - 0.5);
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_grid;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn grid() -> AnnulusGrid {
        build_grid(0.5, 1.0, 9, 16).unwrap()
    }

    fn random_state(g: &AnnulusGrid, seed: u64) -> StateVector {
        random_state_for_tests(g, seed)
    }

    #[test]
    fn params_validation() {
        assert!(PhysicalParams::new(1.0, 1.0, 1.0, 0.0, 1.0, 0.0).is_ok());
        assert!(PhysicalParams::new(0.0, 1.0, 1.0, 0.1, 1.0, 1.0).is_err());
        assert!(PhysicalParams::new(1.0, 1.0, 1.0, -0.1, 1.0, 1.0).is_err());
        assert!(PhysicalParams::new(1.0, 1.0, 1.0, 0.1, 0.0, 1.0).is_err());
    }

    #[test]
    fn wave_speed_identity() {
        for (rho, kappa) in [(1.0, 1.0), (2.5, 0.3), (0.7, 4.0)] {
            let p = PhysicalParams::new(rho, kappa, 1.0, 0.1, 1.0, 1.0).unwrap();
            // ρ·c² agrees with 1/κ to a few ulps because c² is computed directly
            assert_relative_eq!(p.rho * p.c_squared(), 1.0 / p.kappa, max_relative = 1e-15);
            assert_relative_eq!(p.c() * p.c(), p.c_squared(), max_relative = 1e-15);
        }
    }

    #[test]
    fn seminorm_flag() {
        let mut p = PhysicalParams::canonical();
        assert!(!p.seminorm_warning());
        p.k = 0.0;
        p.sigma = 0.0;
        assert!(p.seminorm_warning());
    }

    #[test]
    fn inner_product_zero_and_constant_shift() {
        let g = grid();
        let p = PhysicalParams::canonical();
        let z = StateVector::zero(&g);
        assert_abs_diff_eq!(inner_product(&z, &z, &p, &g).unwrap(), 0.0);

        // u ≡ constant only: gradient vanishes, so the pairing is 0 even
        // before mean projection.
        let mut s = StateVector::zero(&g);
        s.u.fill(4.0);
        assert_abs_diff_eq!(inner_product(&s, &s, &p, &g).unwrap(), 0.0, epsilon = 1e-14);
        let proj = project_constraints(&s, &p, &g);
        assert_abs_diff_eq!(h_norm(&proj, &p, &g), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn inner_product_boundary_spring_closed_form() {
        // a = b = (0, v≡1, 0, 0), k = ρ = 1, σ = 0: ⟨a,a⟩ = (k/ρ)·|Γ1| = 2π·r1,
        // and the ½ shows up in the energy decomposition (spring = π·r1).
        let g = build_grid(0.5, 1.0, 9, 16).unwrap();
        let p = PhysicalParams::new(1.0, 1.0, 1.0, 0.0, 1.0, 1.0).unwrap();
        let mut s = StateVector::zero(&g);
        s.v.fill(1.0);
        let ip = inner_product(&s, &s, &p, &g).unwrap();
        assert_relative_eq!(ip, 2.0 * PI * g.r1, max_relative = 1e-13);
        let e = energy(&s, &p, &g).unwrap();
        assert_relative_eq!(e.spring, PI * g.r1, max_relative = 1e-13);
    }

    #[test]
    fn inner_product_grid_mismatch() {
        let g = grid();
        let g2 = build_grid(0.5, 1.0, 10, 16).unwrap();
        let a = StateVector::zero(&g);
        let b = StateVector::zero(&g2);
        assert!(inner_product(&a, &b, &PhysicalParams::canonical(), &g).is_err());
    }

    #[test]
    fn energy_zero_and_boundary_kinetic() {
        let g = grid();
        let p = PhysicalParams::canonical();
        let e0 = energy(&StateVector::zero(&g), &p, &g).unwrap();
        assert_abs_diff_eq!(e0.total, 0.0);

        let mut s = StateVector::zero(&g);
        s.vt.fill(1.0);
        let e = energy(&s, &p, &g).unwrap();
        assert_relative_eq!(e.kinetic_boundary, PI * g.r1, max_relative = 1e-13);
        assert_abs_diff_eq!(e.kinetic_interior, 0.0);
        assert_abs_diff_eq!(e.potential_interior, 0.0);
        assert_abs_diff_eq!(e.membrane, 0.0);
        assert_abs_diff_eq!(e.spring, 0.0);
    }

    #[test]
    fn energy_matches_half_inner_product() {
        let g = grid();
        let p = PhysicalParams::canonical();
        for seed in 0..5u64 {
            let s = random_state(&g, seed);
            let e = energy(&s, &p, &g).unwrap();
            let ip = inner_product(&s, &s, &p, &g).unwrap();
            assert_relative_eq!(e.total, 0.5 * ip, max_relative = 1e-12);
            let sum = e.kinetic_interior + e.potential_interior + e.kinetic_boundary
                + e.membrane
                + e.spring;
            assert_abs_diff_eq!(e.total, sum);
        }
    }

    #[test]
    fn hooke_invariant_area() {
        // ut ≡ 1, v ≡ 0, ρ = 1 on the (½,1) annulus → 3π/4.
        let g = grid();
        let p = PhysicalParams::canonical();
        let mut s = StateVector::zero(&g);
        s.ut.fill(1.0);
        assert_relative_eq!(hooke_invariant(&s, &p, &g), 0.75 * PI, max_relative = 1e-13);
        assert_abs_diff_eq!(hooke_invariant(&StateVector::zero(&g), &p, &g), 0.0);
    }

    #[test]
    fn projection_zeroes_and_is_idempotent() {
        let g = grid();
        let p = PhysicalParams::canonical();
        let s = random_state(&g, 42);
        let pr = project_constraints(&s, &p, &g);
        assert_abs_diff_eq!(mean_interior(&pr.u, &g), 0.0, epsilon = 1e-13);
        assert_abs_diff_eq!(hooke_invariant(&pr, &p, &g), 0.0, epsilon = 1e-12);
        let pr2 = project_constraints(&pr, &p, &g);
        let diff = pr2.sub(&pr);
        let scale = h_norm(&pr, &p, &g);
        assert!(h_norm(&diff, &p, &g) <= 1e-14 * (1.0 + scale));

        // u ≡ 5 → u ≡ 0
        let mut c = StateVector::zero(&g);
        c.u.fill(5.0);
        let pc = project_constraints(&c, &p, &g);
        for x in pc.u.iter() {
            assert_abs_diff_eq!(*x, 0.0, epsilon = 1e-13);
        }

        // ut ≡ 1 → shifted to zero once the invariant is removed
        let mut t = StateVector::zero(&g);
        t.ut.fill(1.0);
        let pt = project_constraints(&t, &p, &g);
        for x in pt.ut.iter() {
            assert_abs_diff_eq!(*x, 0.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn dissipativity_identity_exact() {
        let g = grid();
        for params in [
            PhysicalParams::canonical(),
            PhysicalParams::new(2.0, 0.5, 1.5, 0.3, 0.7, 2.0).unwrap(),
        ] {
            for seed in 0..5u64 {
                let s = random_state(&g, seed);
                let n2 = inner_product(&s, &s, &params, &g).unwrap();
                let res = dissipativity_residual(&s, &params, &g);
                assert!(
                    res.abs() <= 1e-12 * (1.0 + n2),
                    "forward residual {res} vs norm² {n2}"
                );
                let res_adj = adjoint_dissipativity_residual(&s, &params, &g);
                assert!(
                    res_adj.abs() <= 1e-12 * (1.0 + n2),
                    "adjoint residual {res_adj} vs norm² {n2}"
                );
            }
        }
    }

    #[test]
    fn dissipativity_zero_state_and_no_boundary_velocity() {
        let g = grid();
        let p = PhysicalParams::canonical();
        assert_abs_diff_eq!(dissipativity_residual(&StateVector::zero(&g), &p, &g), 0.0);
        let mut s = random_state(&g, 3);
        s.vt.fill(0.0);
        let n2 = inner_product(&s, &s, &p, &g).unwrap();
        // with vt = 0 the skew part is all that remains
        assert!(dissipativity_residual(&s, &p, &g).abs() <= 1e-12 * (1.0 + n2));
    }

    #[test]
    fn generator_respects_hooke_direction() {
        // the Hooke functional annihilates the range of A, which is what
        // makes the invariant conserved by the midpoint flow
        let g = grid();
        let p = PhysicalParams::canonical();
        for seed in 0..4u64 {
            let s = random_state(&g, seed);
            let a_s = apply_generator(&s, &p, &g, GeneratorKind::Forward);
            let h = hooke_invariant(&a_s, &p, &g);
            assert_abs_diff_eq!(h, 0.0, epsilon = 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn prop_inner_product_symmetric(seed_a in 0u64..5000, seed_b in 0u64..5000) {
            let g = build_grid(0.5, 1.0, 6, 8).unwrap();
            let p = PhysicalParams::canonical();
            let a = random_state(&g, seed_a);
            let b = random_state(&g, seed_b);
            let ab = inner_product(&a, &b, &p, &g).unwrap();
            let ba = inner_product(&b, &a, &p, &g).unwrap();
            let scale = h_norm(&a, &p, &g) * h_norm(&b, &p, &g);
            prop_assert!((ab - ba).abs() <= 1e-14 * (1.0 + scale));
        }

        #[test]
        fn prop_quotient_invariance(seed in 0u64..5000, shift in -10.0f64..10.0) {
            let g = build_grid(0.5, 1.0, 6, 8).unwrap();
            let p = PhysicalParams::canonical();
            let s = random_state(&g, seed);
            let mut shifted = s.clone();
            shifted.u.mapv_inplace(|x| x + shift);
            let e0 = energy(&s, &p, &g).unwrap().total;
            let e1 = energy(&shifted, &p, &g).unwrap().total;
            prop_assert!((e0 - e1).abs() <= 1e-12 * (1.0 + e0.abs()));
        }

        #[test]
        fn prop_projection_idempotent(seed in 0u64..5000) {
            let g = build_grid(0.5, 1.0, 6, 8).unwrap();
            let p = PhysicalParams::canonical();
            let s = project_constraints(&random_state(&g, seed), &p, &g);
            let s2 = project_constraints(&s, &p, &g);
            let d = s2.sub(&s);
            prop_assert!(h_norm(&d, &p, &g) <= 1e-13 * (1.0 + h_norm(&s, &p, &g)));
        }
    }
}
