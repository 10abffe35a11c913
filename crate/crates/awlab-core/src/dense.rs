//! Dense state-space operators on reduced grids.
//!
//! For grids whose flattened state dimension stays below [`DENSE_LIMIT`] the
//! generator, the Cayley step maps, the phase-space Gram matrix and a
//! W-orthonormal basis of the constraint subspace are assembled explicitly.
//! This backs the observability-Gramian eigenvalue estimates, the stationary
//! covariance oracle and the dense cross-checks of the control machinery.
//!
//! Flattening layout: `[u (nr·nθ) | v (nθ) | ut (nr·nθ) | vt (nθ)]`.

use nalgebra::{DMatrix, DVector};

use crate::error::CoreError;
use crate::grid::AnnulusGrid;
use crate::model::{self, GeneratorKind, PhysicalParams, StateVector};
use crate::stochastic::NoiseModel;

/// Largest flattened dimension for which dense assembly is allowed.
pub const DENSE_LIMIT: usize = 700;

/// Dense operators for one `(params, grid)` pair.
pub struct DenseOps {
    pub p: PhysicalParams,
    pub g: AnnulusGrid,
    pub dim: usize,
    /// Phase-space Gram matrix (positive semidefinite; the interior-constant
    /// direction of `u` is its only kernel).
    pub w: DMatrix<f64>,
    /// W-orthonormal basis of the constraint subspace, `dim × (dim−2)`.
    pub basis: DMatrix<f64>,
}

impl DenseOps {
    pub fn state_dim(g: &AnnulusGrid) -> usize {
        2 * g.nr * g.ntheta + 2 * g.ntheta
    }

    pub fn new(p: &PhysicalParams, g: &AnnulusGrid) -> Result<Self, CoreError> {
        let dim = Self::state_dim(g);
        if dim > DENSE_LIMIT {
            return Err(CoreError::config(format!(
                "dense assembly needs state dimension ≤ {DENSE_LIMIT}, got {dim}; use a reduced grid"
            )));
        }
        let w = assemble_h_gram(p, g);
        let basis = constraint_basis(p, g, &w)?;
        Ok(DenseOps { p: *p, g: g.clone(), dim, w, basis })
    }

    pub fn flatten(&self, s: &StateVector) -> DVector<f64> {
        flatten_state(s, &self.g)
    }

    pub fn unflatten(&self, x: &DVector<f64>) -> StateVector {
        unflatten_state(x, &self.g)
    }

    /// `⟨a, b⟩_H` through the Gram matrix.
    pub fn h_inner(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        (&self.w * b).dot(a)
    }

    /// Generator matrix (columns by application).
    pub fn generator_matrix(&self, kind: GeneratorKind) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.dim, self.dim);
        let mut e = DVector::zeros(self.dim);
        for col in 0..self.dim {
            e[col] = 1.0;
            let s = self.unflatten(&e);
            let out = model::apply_generator(&s, &self.p, &self.g, kind);
            let v = self.flatten(&out);
            a.set_column(col, &v);
            e[col] = 0.0;
        }
        a
    }

    /// Cayley step maps for a step `dt`: the forward map
    /// `Φ = (I−hA)⁻¹(I+hA)` and the exact-adjoint backward map
    /// `Φ* = (I−hA*)⁻¹(I+hA*)`.
    pub fn cayley_maps(&self, dt: f64) -> Result<(DMatrix<f64>, DMatrix<f64>), CoreError> {
        let h = 0.5 * dt;
        let build = |a: &DMatrix<f64>| -> Result<DMatrix<f64>, CoreError> {
            let minus = DMatrix::identity(self.dim, self.dim) - a * h;
            let plus = DMatrix::identity(self.dim, self.dim) + a * h;
            let lu = nalgebra::linalg::LU::new(minus);
            lu.solve(&plus)
                .ok_or_else(|| CoreError::numerical("dense cayley", "I − hA is singular"))
        };
        let a_fwd = self.generator_matrix(GeneratorKind::Forward);
        let a_adj = self.generator_matrix(GeneratorKind::Adjoint);
        Ok((build(&a_fwd)?, build(&a_adj)?))
    }

    /// Noise injection matrix: column per Fourier mode, `(0,0,0,e_b/m)`.
    pub fn noise_matrix(&self, nm: &NoiseModel) -> DMatrix<f64> {
        let modes = nm.mode_matrix(&self.g);
        let nb = self.g.ntheta;
        let ni = self.g.nr * self.g.ntheta;
        let vt_off = 2 * ni + nb;
        let mut n = DMatrix::zeros(self.dim, modes.ncols());
        for b in 0..modes.ncols() {
            for j in 0..nb {
                n[(vt_off + j, b)] = modes[(j, b)] / self.p.m;
            }
        }
        n
    }

    /// Per-step noise covariance `dt·N diag(q) Nᵀ` of the semi-implicit
    /// stochastic step.
    pub fn step_noise_covariance(&self, nm: &NoiseModel, dt: f64) -> DMatrix<f64> {
        let n = self.noise_matrix(nm);
        let q = nm.mode_variances_on(&self.g);
        let mut nq = n.clone();
        for b in 0..q.len() {
            let s = q[b] * dt;
            for r in 0..self.dim {
                nq[(r, b)] *= s;
            }
        }
        nq * n.transpose()
    }

    /// Stationary covariance of the discrete chain `X ← ΦX + ξ`,
    /// `ξ ~ N(0, D)`: the fixed point of `P ← ΦPΦᵀ + D`, found by doubling.
    /// Returns the covariance and the certified residual
    /// `‖ΦPΦᵀ + D − P‖ / (dt·‖P‖)`.
    pub fn stationary_covariance(
        &self,
        phi: &DMatrix<f64>,
        d: &DMatrix<f64>,
        dt: f64,
        tol: f64,
        max_doublings: usize,
    ) -> Result<(DMatrix<f64>, f64), CoreError> {
        let mut s = d.clone();
        let mut m = phi.clone();
        for _ in 0..max_doublings {
            let ms = &m * &s;
            let incr = &ms * m.transpose();
            let incr_norm = incr.norm();
            s += incr;
            m = &m * &m;
            if incr_norm <= 0.5 * tol * dt * s.norm() {
                break;
            }
        }
        // exact residual of the fixed-point equation
        let res = (phi * &s) * phi.transpose() + d - &s;
        let rel = res.norm() / (dt * s.norm().max(f64::MIN_POSITIVE));
        if rel > tol {
            return Err(CoreError::numerical(
                "lyapunov",
                format!(
                    "stationary covariance did not converge: residual {rel:.3e} (insufficient damping or degenerate k = σ = 0?)"
                ),
            ));
        }
        Ok((s, rel))
    }

    /// Covariance accumulated over exactly `n` steps of the same chain
    /// (zero initial state), by binary composition.
    pub fn covariance_over_steps(
        &self,
        phi: &DMatrix<f64>,
        d: &DMatrix<f64>,
        n: usize,
    ) -> DMatrix<f64> {
        // s_acc: covariance of the steps taken so far;
        // (s_blk, m_blk): covariance and propagator of the current
        // power-of-two block (the chain is time homogeneous, so appending a
        // block maps S ↦ S_blk + M_blk·S·M_blkᵀ)
        let mut s_acc = DMatrix::zeros(self.dim, self.dim);
        let mut s_blk = d.clone();
        let mut m_blk = phi.clone();
        let mut k = n;
        while k > 0 {
            if k & 1 == 1 {
                s_acc = &s_blk + &(&m_blk * &s_acc) * m_blk.transpose();
            }
            k >>= 1;
            if k > 0 {
                s_blk = &s_blk + &(&m_blk * &s_blk) * m_blk.transpose();
                m_blk = &m_blk * &m_blk;
            }
        }
        s_acc
    }

    /// Trace of a full-coordinate covariance in the phase-space metric,
    /// `E‖X‖²_H = Tr(W·C)`.
    pub fn trace_h(&self, c: &DMatrix<f64>) -> f64 {
        let wc = &self.w * c;
        wc.trace()
    }

    /// Reduce a full-coordinate symmetric form `F` onto the constraint
    /// subspace: `Qᵀ F Q`.
    pub fn reduce_form(&self, f: &DMatrix<f64>) -> DMatrix<f64> {
        let fq = f * &self.basis;
        self.basis.transpose() * fq
    }

    /// Assemble the reduced observation-Gramian form over `n_steps` steps of
    /// size `dt`:
    /// `Σ_n dt‖δ̄_t‖² + Σ_k dt·w_k‖(δ_t,k+1−δ_t,k−1)/2dt‖²`
    /// with node weights `w_k` (the squared cut-off for the control norm,
    /// ones for the plain norm).
    pub fn gramian_form_reduced(
        &self,
        phi_adj: &DMatrix<f64>,
        dt: f64,
        n_steps: usize,
        node_weights: &[f64],
    ) -> Result<DMatrix<f64>, CoreError> {
        if node_weights.len() != n_steps + 1 {
            return Err(CoreError::dimension(format!(
                "need {} node weights, got {}",
                n_steps + 1,
                node_weights.len()
            )));
        }
        let k_dim = self.basis.ncols();
        let nb = self.g.ntheta;
        let ni = self.g.nr * self.g.ntheta;
        let vt_off = 2 * ni + nb;
        let arcw = self.g.arc_weight;

        let vt_rows =
            |z: &DMatrix<f64>| -> DMatrix<f64> { z.view((vt_off, 0), (nb, k_dim)).into_owned() };

        let mut gram = DMatrix::zeros(k_dim, k_dim);
        let mut z_next = self.basis.clone();
        // rolling window of δ_t blocks, newest (smallest node index) first
        let mut vt_window: Vec<DMatrix<f64>> = vec![vt_rows(&z_next)];
        for back in (0..n_steps).rev() {
            let z = phi_adj * &z_next;
            let vt_now = vt_rows(&z);
            {
                let vt_next = &vt_window[0];
                let v_mid = (&vt_now + vt_next) * 0.5;
                gram.gemm_tr(dt * arcw, &v_mid, &v_mid, 1.0);
            }
            vt_window.insert(0, vt_now);
            if vt_window.len() == 3 {
                // node term at k = back + 1 pairs δ_t at nodes k−1 and k+1
                let k_node = back + 1;
                let wgt = node_weights[k_node];
                if wgt != 0.0 {
                    let dc = (&vt_window[0] - &vt_window[2]) / (2.0 * dt);
                    gram.gemm_tr(dt * wgt * arcw, &dc, &dc, 1.0);
                }
                vt_window.pop();
            }
            z_next = z;
        }
        Ok(gram)
    }

    /// Smallest eigenvalue of a symmetric reduced form, plus the
    /// corresponding direction mapped back to full coordinates.
    pub fn smallest_eigenpair(&self, form: &DMatrix<f64>) -> (f64, DVector<f64>) {
        let sym = (form + form.transpose()) * 0.5;
        let eig = nalgebra::linalg::SymmetricEigen::new(sym);
        let mut min_idx = 0;
        for i in 1..eig.eigenvalues.len() {
            if eig.eigenvalues[i] < eig.eigenvalues[min_idx] {
                min_idx = i;
            }
        }
        let dir_reduced = eig.eigenvectors.column(min_idx).into_owned();
        (eig.eigenvalues[min_idx], &self.basis * dir_reduced)
    }

    /// All eigenvalues of a symmetric reduced form, ascending.
    pub fn eigenvalues(&self, form: &DMatrix<f64>) -> Vec<f64> {
        let sym = (form + form.transpose()) * 0.5;
        let eig = nalgebra::linalg::SymmetricEigen::new(sym);
        let mut v: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v
    }

    /// Inverse-power iteration on a symmetric positive semidefinite reduced
    /// form; returns the final Rayleigh quotient and the direction in full
    /// coordinates. The solve is shifted slightly to stay well-posed when
    /// the form is numerically singular.
    pub fn inverse_power_min(
        &self,
        form: &DMatrix<f64>,
        iterations: usize,
        seed: u64,
    ) -> Result<(f64, DVector<f64>), CoreError> {
        use rand::prelude::*;
        let k_dim = form.nrows();
        let sym = (form + form.transpose()) * 0.5;
        let mu = 1e-14 * sym.trace().abs().max(f64::MIN_POSITIVE) / k_dim as f64;
        let shifted = &sym + DMatrix::identity(k_dim, k_dim) * mu;
        let lu = nalgebra::linalg::LU::new(shifted);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut x = DVector::from_fn(k_dim, |_, _| rng.random::<f64>() - 0.5);
        x /= x.norm();
        for _ in 0..iterations {
            let y = lu
                .solve(&x)
                .ok_or_else(|| CoreError::numerical("inverse power", "singular shifted Gramian"))?;
            let n = y.norm();
            if !n.is_finite() || n == 0.0 {
                return Err(CoreError::numerical("inverse power", "iterate collapsed"));
            }
            x = y / n;
        }
        let rayleigh = (&sym * &x).dot(&x);
        Ok((rayleigh, &self.basis * x))
    }
}

/// Flatten `(u, v, ut, vt)` into one coordinate vector.
pub fn flatten_state(s: &StateVector, g: &AnnulusGrid) -> DVector<f64> {
    let ni = g.nr * g.ntheta;
    let nb = g.ntheta;
    let mut x = DVector::zeros(2 * ni + 2 * nb);
    for (idx, val) in s.u.iter().enumerate() {
        x[idx] = *val;
    }
    for j in 0..nb {
        x[ni + j] = s.v[j];
    }
    for (idx, val) in s.ut.iter().enumerate() {
        x[ni + nb + idx] = *val;
    }
    for j in 0..nb {
        x[2 * ni + nb + j] = s.vt[j];
    }
    x
}

pub fn unflatten_state(x: &DVector<f64>, g: &AnnulusGrid) -> StateVector {
    let ni = g.nr * g.ntheta;
    let nb = g.ntheta;
    let mut s = StateVector::zero(g);
    for (idx, val) in s.u.iter_mut().enumerate() {
        *val = x[idx];
    }
    for j in 0..nb {
        s.v[j] = x[ni + j];
    }
    for (idx, val) in s.ut.iter_mut().enumerate() {
        *val = x[ni + nb + idx];
    }
    for j in 0..nb {
        s.vt[j] = x[2 * ni + nb + j];
    }
    s
}

/// Assemble the phase-space Gram matrix in flattened coordinates.
fn assemble_h_gram(p: &PhysicalParams, g: &AnnulusGrid) -> DMatrix<f64> {
    let ni = g.nr * g.ntheta;
    let nb = g.ntheta;
    let dim = 2 * ni + 2 * nb;
    let mut w = DMatrix::zeros(dim, dim);
    let nt = g.ntheta;
    let idx = |i: usize, j: usize| i * nt + j;

    // u block: interior Dirichlet stiffness
    for i in 0..g.nr - 1 {
        let c = (g.node_radii[i] + 0.5 * g.dr) * g.dtheta / g.dr;
        for j in 0..nt {
            let a = idx(i, j);
            let b = idx(i + 1, j);
            w[(a, a)] += c;
            w[(b, b)] += c;
            w[(a, b)] -= c;
            w[(b, a)] -= c;
        }
    }
    for i in 0..g.nr {
        let ring = if i == 0 || i == g.nr - 1 { 0.5 } else { 1.0 };
        let c = ring * g.dr / (g.node_radii[i] * g.dtheta);
        for j in 0..nt {
            let a = idx(i, j);
            let b = idx(i, (j + 1) % nt);
            w[(a, a)] += c;
            w[(b, b)] += c;
            w[(a, b)] -= c;
            w[(b, a)] -= c;
        }
    }

    // v block: spring mass + membrane stiffness
    let v_off = ni;
    for j in 0..nt {
        let a = v_off + j;
        w[(a, a)] += (p.k / p.rho) * g.arc_weight;
        let c = (p.sigma / p.rho) / (g.r1 * g.dtheta);
        let b = v_off + (j + 1) % nt;
        w[(a, a)] += c;
        w[(b, b)] += c;
        w[(a, b)] -= c;
        w[(b, a)] -= c;
    }

    // ut block: weighted mass
    let ut_off = ni + nb;
    let inv_c2 = 1.0 / p.c_squared();
    for i in 0..g.nr {
        for j in 0..nt {
            let a = ut_off + idx(i, j);
            w[(a, a)] += inv_c2 * g.cell_weights[i];
        }
    }

    // vt block
    let vt_off = 2 * ni + nb;
    for j in 0..nt {
        let a = vt_off + j;
        w[(a, a)] += (p.m / p.rho) * g.arc_weight;
    }
    w
}

/// W-orthonormal basis of `{mean(u) = 0} ∩ {hooke = 0}`.
fn constraint_basis(
    p: &PhysicalParams,
    g: &AnnulusGrid,
    w: &DMatrix<f64>,
) -> Result<DMatrix<f64>, CoreError> {
    let ni = g.nr * g.ntheta;
    let nb = g.ntheta;
    let dim = 2 * ni + 2 * nb;
    let nt = g.ntheta;
    let w_flat: Vec<f64> = (0..ni).map(|idx| g.cell_weights[idx / nt]).collect();
    let w_tot: f64 = w_flat.iter().sum();

    let mut raw: Vec<DVector<f64>> = Vec::with_capacity(dim - 2);
    // mean-zero u directions
    for i in 1..ni {
        let mut v = DVector::zeros(dim);
        v[i] = 1.0;
        v[0] = -w_flat[i] / w_flat[0];
        raw.push(v);
    }
    // v directions with a compensating constant in ut (keeps hooke = 0)
    let comp = g.arc_weight / (p.kappa * p.rho * w_tot);
    for j in 0..nb {
        let mut v = DVector::zeros(dim);
        v[ni + j] = 1.0;
        for i in 0..ni {
            v[ni + nb + i] = comp;
        }
        raw.push(v);
    }
    // hooke-neutral ut directions
    for i in 1..ni {
        let mut v = DVector::zeros(dim);
        v[ni + nb + i] = 1.0;
        v[ni + nb] = -w_flat[i] / w_flat[0];
        raw.push(v);
    }
    // vt directions
    for j in 0..nb {
        let mut v = DVector::zeros(dim);
        v[2 * ni + nb + j] = 1.0;
        raw.push(v);
    }

    // modified Gram–Schmidt in the W-inner product
    let k_dim = raw.len();
    let mut q = DMatrix::zeros(dim, k_dim);
    let mut kept = 0;
    for mut v in raw {
        for prev in 0..kept {
            let qp = q.column(prev).into_owned();
            let wv = w * &v;
            let coeff = wv.dot(&qp);
            v -= qp * coeff;
        }
        let wv = w * &v;
        let n2 = wv.dot(&v);
        if n2 <= 1e-24 {
            return Err(CoreError::numerical(
                "constraint basis",
                "degenerate direction during orthonormalization (k = σ = 0 seminorm?)",
            ));
        }
        v /= n2.sqrt();
        q.set_column(kept, &v);
        kept += 1;
    }
    if kept != dim - 2 {
        return Err(CoreError::numerical(
            "constraint basis",
            format!("expected {} basis vectors, got {kept}", dim - 2),
        ));
    }
    Ok(q)
}
