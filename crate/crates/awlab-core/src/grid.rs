//! Annulus geometry and the polar-grid differential operators.
//!
//! The annulus `r0 ≤ r ≤ r1`, `0 ≤ θ < 2π` is discretized with `nr` radial
//! node rings (nodes at `r0` and `r1` included) and `ntheta` periodic angular
//! nodes. Interior quadrature uses trapezoid-in-r cell weights `c_i·r_i·Δr·Δθ`
//! (half weight on the two boundary rings), boundary quadrature uses the
//! uniform arc weight `r1·Δθ`.
//!
//! The discrete gradient is the staggered (half-point) difference pair and the
//! Laplacian is its flux-form divergence with the prescribed normal flux on
//! the outer ring folded into the outermost row. This makes the
//! summation-by-parts identity
//!
//! ```text
//! ∫ laplacian(a, φ)·b + ∫ ∇a·∇b = ∫_Γ1 φ·b
//! ```
//!
//! hold to round-off, which is what the energy, dissipativity and duality
//! identities downstream rely on.

use ndarray::{Array1, Array2};

use crate::error::CoreError;

/// Scalar field on the interior grid, shape `(nr, ntheta)`.
pub type InteriorField = Array2<f64>;

/// Scalar field on the outer-boundary nodes, length `ntheta` (periodic).
pub type BoundaryField = Array1<f64>;

/// Polar grid on the annulus with precomputed quadrature weights.
#[derive(Debug, Clone)]
pub struct AnnulusGrid {
    pub r0: f64,
    pub r1: f64,
    pub nr: usize,
    pub ntheta: usize,
    pub dr: f64,
    pub dtheta: f64,
    /// Node radii `r_i = r0 + i·dr`, length `nr`.
    pub node_radii: Array1<f64>,
    /// Interior quadrature weight per ring: `c_i·r_i·dr·dθ` with `c = 1/2`
    /// on the boundary rings. Node `(i,j)` carries `cell_weights[i]`.
    pub cell_weights: Array1<f64>,
    /// Boundary quadrature weight `r1·dθ` (uniform).
    pub arc_weight: f64,
    /// Radial stiffness coefficients `r_{i+1/2}·dθ/dr`, length `nr−1`.
    grad_r_coeff: Array1<f64>,
    /// Angular stiffness coefficients `c_i·dr/(r_i·dθ)`, length `nr`.
    grad_theta_coeff: Array1<f64>,
}

/// Build an annulus grid. Fails when the radii are not ordered, the node
/// counts are too small or `ntheta` is odd.
pub fn build_grid(r0: f64, r1: f64, nr: usize, ntheta: usize) -> Result<AnnulusGrid, CoreError> {
    if !(r0.is_finite() && r1.is_finite()) || r0 <= 0.0 {
        return Err(CoreError::config(format!("inner radius must be positive, got r0 = {r0}")));
    }
    if r1 <= r0 {
        return Err(CoreError::config(format!(
            "outer radius must exceed inner radius, got r0 = {r0}, r1 = {r1}"
        )));
    }
    if nr < 4 {
        return Err(CoreError::config(format!("need at least 4 radial nodes, got nr = {nr}")));
    }
    if ntheta < 8 || ntheta % 2 != 0 {
        return Err(CoreError::config(format!(
            "need an even angular count of at least 8, got ntheta = {ntheta}"
        )));
    }

    let dr = (r1 - r0) / (nr - 1) as f64;
    let dtheta = 2.0 * std::f64::consts::PI / ntheta as f64;
    let node_radii = Array1::from_iter((0..nr).map(|i| r0 + i as f64 * dr));
    let ring_factor = |i: usize| if i == 0 || i == nr - 1 { 0.5 } else { 1.0 };
    let cell_weights =
        Array1::from_iter((0..nr).map(|i| ring_factor(i) * node_radii[i] * dr * dtheta));
    let grad_r_coeff =
        Array1::from_iter((0..nr - 1).map(|i| (node_radii[i] + 0.5 * dr) * dtheta / dr));
    let grad_theta_coeff =
        Array1::from_iter((0..nr).map(|i| ring_factor(i) * dr / (node_radii[i] * dtheta)));

    Ok(AnnulusGrid {
        r0,
        r1,
        nr,
        ntheta,
        dr,
        dtheta,
        node_radii,
        cell_weights,
        arc_weight: r1 * dtheta,
        grad_r_coeff,
        grad_theta_coeff,
    })
}

impl AnnulusGrid {
    pub fn zero_interior(&self) -> InteriorField {
        Array2::zeros((self.nr, self.ntheta))
    }

    pub fn zero_boundary(&self) -> BoundaryField {
        Array1::zeros(self.ntheta)
    }

    pub fn theta(&self, j: usize) -> f64 {
        j as f64 * self.dtheta
    }

    /// Total interior quadrature weight; equals `π(r1²−r0²)` exactly because
    /// trapezoid-in-r integrates `r·dr` without error.
    pub fn interior_area(&self) -> f64 {
        self.cell_weights.sum() * self.ntheta as f64
    }

    pub fn check_interior(&self, f: &InteriorField, what: &str) -> Result<(), CoreError> {
        if f.dim() != (self.nr, self.ntheta) {
            return Err(CoreError::dimension(format!(
                "{what}: expected interior field of shape ({}, {}), got {:?}",
                self.nr,
                self.ntheta,
                f.dim()
            )));
        }
        Ok(())
    }

    pub fn check_boundary(&self, f: &BoundaryField, what: &str) -> Result<(), CoreError> {
        if f.len() != self.ntheta {
            return Err(CoreError::dimension(format!(
                "{what}: expected boundary field of length {}, got {}",
                self.ntheta,
                f.len()
            )));
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &AnnulusGrid) -> bool {
        self.nr == other.nr
            && self.ntheta == other.ntheta
            && self.r0 == other.r0
            && self.r1 == other.r1
    }
}

/// Weighted interior integral `∫_Ω f dx` (trapezoid-in-r, uniform-in-θ).
pub fn quadrature_interior(f: &InteriorField, g: &AnnulusGrid) -> f64 {
    let mut acc = 0.0;
    for i in 0..g.nr {
        let w = g.cell_weights[i];
        for j in 0..g.ntheta {
            acc += w * f[[i, j]];
        }
    }
    acc
}

/// Weighted boundary integral `∫_Γ1 v dΓ` (uniform arc weights, exact for
/// trigonometric polynomials below the grid Nyquist mode).
pub fn quadrature_boundary(v: &BoundaryField, g: &AnnulusGrid) -> f64 {
    g.arc_weight * v.sum()
}

/// Restriction of an interior field to the outer ring `r = r1`.
pub fn trace_gamma1(f: &InteriorField, g: &AnnulusGrid) -> BoundaryField {
    f.row(g.nr - 1).to_owned()
}

/// Discrete Dirichlet form `∫_Ω ∇a·∇b dx` built from the staggered
/// half-point differences. This is the quadratic form whose flux-form
/// divergence is [`laplacian`].
pub fn dirichlet_interior(a: &InteriorField, b: &InteriorField, g: &AnnulusGrid) -> f64 {
    let nt = g.ntheta;
    let mut acc = 0.0;
    for i in 0..g.nr - 1 {
        let c = g.grad_r_coeff[i];
        for j in 0..nt {
            acc += c * (a[[i + 1, j]] - a[[i, j]]) * (b[[i + 1, j]] - b[[i, j]]);
        }
    }
    for i in 0..g.nr {
        let c = g.grad_theta_coeff[i];
        for j in 0..nt {
            let jp = if j + 1 == nt { 0 } else { j + 1 };
            acc += c * (a[[i, jp]] - a[[i, j]]) * (b[[i, jp]] - b[[i, j]]);
        }
    }
    acc
}

/// Discrete tangential Dirichlet form `∫_Γ1 ∇_Γ a·∇_Γ b dΓ` on the boundary
/// circle (periodic differences).
pub fn dirichlet_boundary(a: &BoundaryField, b: &BoundaryField, g: &AnnulusGrid) -> f64 {
    let nt = g.ntheta;
    let c = 1.0 / (g.r1 * g.dtheta);
    let mut acc = 0.0;
    for j in 0..nt {
        let jp = if j + 1 == nt { 0 } else { j + 1 };
        acc += c * (a[jp] - a[j]) * (b[jp] - b[j]);
    }
    acc
}

/// Flux-form polar Laplacian with prescribed outward normal derivative
/// `flux_r1` on the outer circle and the built-in rigid condition
/// `∂_n u = 0` on the inner circle.
///
/// Satisfies `∫ laplacian(a,φ)·b + ∫ ∇a·∇b = ∫_Γ1 φ·b` to round-off for all
/// `a`, `b`, `φ` (summation by parts).
pub fn laplacian(u: &InteriorField, flux_r1: &BoundaryField, g: &AnnulusGrid) -> InteriorField {
    let mut out = g.zero_interior();
    laplacian_into(u, flux_r1, g, &mut out);
    out
}

/// In-place variant of [`laplacian`]; `out` is overwritten.
pub fn laplacian_into(
    u: &InteriorField,
    flux_r1: &BoundaryField,
    g: &AnnulusGrid,
    out: &mut InteriorField,
) {
    let nr = g.nr;
    let nt = g.ntheta;
    for i in 0..nr {
        let inv_m = 1.0 / g.cell_weights[i];
        let gr_lo = if i > 0 { g.grad_r_coeff[i - 1] } else { 0.0 };
        let gr_hi = if i + 1 < nr { g.grad_r_coeff[i] } else { 0.0 };
        let gt = g.grad_theta_coeff[i];
        for j in 0..nt {
            let jp = if j + 1 == nt { 0 } else { j + 1 };
            let jm = if j == 0 { nt - 1 } else { j - 1 };
            let mut acc = 0.0;
            if i + 1 < nr {
                acc += gr_hi * (u[[i + 1, j]] - u[[i, j]]);
            } else {
                acc += g.arc_weight * flux_r1[j];
            }
            if i > 0 {
                acc -= gr_lo * (u[[i, j]] - u[[i - 1, j]]);
            }
            acc += gt * (u[[i, jp]] - 2.0 * u[[i, j]] + u[[i, jm]]);
            out[[i, j]] = acc * inv_m;
        }
    }
}

/// Periodic three-point Laplace–Beltrami operator on the boundary circle,
/// `(1/r1²)·∂²_θθ`. Callers apply the stiffness σ themselves.
pub fn boundary_laplace_beltrami(v: &BoundaryField, g: &AnnulusGrid) -> BoundaryField {
    let mut out = g.zero_boundary();
    boundary_laplace_beltrami_into(v, g, &mut out);
    out
}

pub fn boundary_laplace_beltrami_into(v: &BoundaryField, g: &AnnulusGrid, out: &mut BoundaryField) {
    let nt = g.ntheta;
    let c = 1.0 / (g.r1 * g.r1 * g.dtheta * g.dtheta);
    for j in 0..nt {
        let jp = if j + 1 == nt { 0 } else { j + 1 };
        let jm = if j == 0 { nt - 1 } else { j - 1 };
        out[j] = c * (v[jp] - 2.0 * v[j] + v[jm]);
    }
}

/// Outcome of checking the boundary geometry against the multiplier
/// condition: `(x−x0)·n ≤ 0` on the inner circle and `(x−x0)·n > 0` on the
/// outer circle.
#[derive(Debug, Clone, Copy)]
pub struct GeometricConditionReport {
    /// min over inner-circle samples of `(x−x0)·n` (n points toward the center).
    pub min_gamma0: f64,
    /// min over outer-circle samples of `(x−x0)·n` (n points outward).
    pub min_gamma1: f64,
    pub satisfied: bool,
}

/// Sample the geometric condition at every angular node for observation
/// point `x0`.
pub fn geometric_condition_check(g: &AnnulusGrid, x0: (f64, f64)) -> GeometricConditionReport {
    let mut min_gamma0 = f64::INFINITY;
    let mut min_gamma1 = f64::INFINITY;
    for j in 0..g.ntheta {
        let (s, c) = g.theta(j).sin_cos();
        // Γ0: x = r0·(c,s), outward normal of the annulus is −(c,s).
        let g0 = -((g.r0 * c - x0.0) * c + (g.r0 * s - x0.1) * s);
        // Γ1: x = r1·(c,s), outward normal is +(c,s).
        let g1 = (g.r1 * c - x0.0) * c + (g.r1 * s - x0.1) * s;
        min_gamma0 = min_gamma0.min(g0);
        min_gamma1 = min_gamma1.min(g1);
    }
    GeometricConditionReport {
        min_gamma0,
        min_gamma1,
        satisfied: min_gamma0 <= 0.0 && min_gamma1 > 0.0,
    }
}
