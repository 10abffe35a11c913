//! Q-Wiener boundary forcing, stochastic time stepping, moment-bound
//! checks, the stationary-covariance oracle and mixing diagnostics.
//!
//! Noise enters only the membrane velocity equation (the abstract injection
//! `diag{0,0,0,1/m}`), with a covariance that is diagonal in the real
//! Fourier basis of the boundary circle and summable, `q_j = q0(1+j²)^{−s}`.
//! Paths use counter-based ChaCha streams keyed by `(seed, path index)`, so
//! ensembles are reproducible bit for bit regardless of scheduling.

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use std::fmt::Write as _;

use crate::dense::DenseOps;
use crate::error::CoreError;
use crate::grid::{AnnulusGrid, BoundaryField};
use crate::model::{self, PhysicalParams, StateVector};
use crate::stats::{energy_distance_permutation_test, EnergyDistanceTest};
use crate::stepper::{StepDirection, Stepper};

/// Fourier-diagonal boundary noise with finite trace.
#[derive(Debug, Clone, Copy)]
pub struct NoiseModel {
    /// Number of Fourier wavenumbers including mode 0.
    pub n_modes: usize,
    /// Overall intensity (`q0 = 0` switches the noise off).
    pub q0: f64,
    /// Spectral decay exponent, `> 1` so the trace is summable.
    pub decay_s: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn new(n_modes: usize, q0: f64, decay_s: f64, seed: u64) -> Result<Self, CoreError> {
        if n_modes == 0 {
            return Err(CoreError::config("noise needs at least the constant mode"));
        }
        if !(q0 >= 0.0) || !q0.is_finite() {
            return Err(CoreError::config(format!("q0 must be nonnegative, got {q0}")));
        }
        if !(decay_s > 1.0) {
            return Err(CoreError::config(format!(
                "decay exponent must exceed 1 for a trace-class covariance, got {decay_s}"
            )));
        }
        Ok(NoiseModel { n_modes, q0, decay_s, seed })
    }

    /// `q_j = q0·(1+j²)^{−s}`.
    pub fn q_of(&self, j: usize) -> f64 {
        self.q0 * (1.0 + (j * j) as f64).powf(-self.decay_s)
    }

    /// Variance per basis function: `[q_0, q_1, q_1, q_2, q_2, …]`
    /// (cosine and sine share the wavenumber variance). On a grid with
    /// `n_modes = ntheta/2 + 1` the last wavenumber is the Nyquist mode,
    /// which carries a cosine only.
    pub fn mode_variances(&self) -> Vec<f64> {
        self.mode_variances_for(usize::MAX)
    }

    fn mode_variances_for(&self, nyquist: usize) -> Vec<f64> {
        let mut q = Vec::with_capacity(2 * self.n_modes - 1);
        q.push(self.q_of(0));
        for j in 1..self.n_modes {
            let qj = self.q_of(j);
            q.push(qj);
            if j < nyquist {
                q.push(qj);
            }
        }
        q
    }

    /// `Tr Q = q_0 + 2Σ_{j≥1} q_j` (the Nyquist cosine, when present,
    /// counts once).
    pub fn trace(&self) -> f64 {
        self.mode_variances().iter().sum()
    }

    /// Per-grid variance list (accounts for a Nyquist cosine).
    pub fn mode_variances_on(&self, g: &AnnulusGrid) -> Vec<f64> {
        self.mode_variances_for(g.ntheta / 2)
    }

    /// Discrete trace on a particular grid.
    pub fn trace_on(&self, g: &AnnulusGrid) -> f64 {
        self.mode_variances_on(g).iter().sum()
    }

    /// Orthonormal real Fourier basis sampled on the boundary nodes:
    /// `1/√(2πr1)`, then `cos(jθ)/√(πr1)`, `sin(jθ)/√(πr1)` per wavenumber;
    /// the Nyquist cosine (allowed as the last mode) is normalized like the
    /// constant. The boundary quadrature reproduces orthonormality exactly.
    pub fn mode_matrix(&self, g: &AnnulusGrid) -> DMatrix<f64> {
        self.validate_for_grid(g).expect("noise model fits the grid");
        let nb = g.ntheta;
        let nyquist = nb / 2;
        let n_basis = self.mode_variances_on(g).len();
        let mut m = DMatrix::zeros(nb, n_basis);
        let c0 = 1.0 / (2.0 * std::f64::consts::PI * g.r1).sqrt();
        let cj = 1.0 / (std::f64::consts::PI * g.r1).sqrt();
        for row in 0..nb {
            let th = g.theta(row);
            m[(row, 0)] = c0;
            let mut col = 1;
            for j in 1..self.n_modes {
                if j < nyquist {
                    m[(row, col)] = cj * (j as f64 * th).cos();
                    m[(row, col + 1)] = cj * (j as f64 * th).sin();
                    col += 2;
                } else {
                    m[(row, col)] = c0 * (j as f64 * th).cos();
                    col += 1;
                }
            }
        }
        m
    }

    pub fn validate_for_grid(&self, g: &AnnulusGrid) -> Result<(), CoreError> {
        if self.n_modes > g.ntheta / 2 + 1 {
            return Err(CoreError::config(format!(
                "{} noise modes exceed the angular Nyquist limit of ntheta = {}",
                self.n_modes, g.ntheta
            )));
        }
        Ok(())
    }
}

/// Cached sampler for one `(noise, grid, dt)` triple.
pub struct BoundaryNoise {
    /// `sqrt(q_b·dt)` per basis function.
    scale: Vec<f64>,
    /// Basis values, one row per basis function (`(2J−1) × ntheta`).
    modes_t: Array2<f64>,
}

impl BoundaryNoise {
    pub fn new(nm: &NoiseModel, g: &AnnulusGrid, dt: f64) -> Result<Self, CoreError> {
        nm.validate_for_grid(g)?;
        let m = nm.mode_matrix(g);
        let nb = g.ntheta;
        let nbasis = m.ncols();
        let mut modes_t = Array2::zeros((nbasis, nb));
        for b in 0..nbasis {
            for j in 0..nb {
                modes_t[[b, j]] = m[(j, b)];
            }
        }
        let scale = nm.mode_variances_on(g).iter().map(|q| (q * dt).sqrt()).collect();
        Ok(BoundaryNoise { scale, modes_t })
    }

    /// Draw `ΔW = Σ_b sqrt(q_b·dt)·ξ_b·e_b(θ)` into `out`.
    pub fn sample_into(&self, rng: &mut ChaCha8Rng, out: &mut BoundaryField) {
        out.fill(0.0);
        for (b, &s) in self.scale.iter().enumerate() {
            let xi: f64 = rng.sample(StandardNormal);
            let coeff = s * xi;
            let row = self.modes_t.row(b);
            for (o, &e) in out.iter_mut().zip(row.iter()) {
                *o += coeff * e;
            }
        }
    }
}

/// One Q-Wiener increment over a step of size `dt` (advances `rng`).
pub fn sample_increment(
    nm: &NoiseModel,
    dt: f64,
    g: &AnnulusGrid,
    rng: &mut ChaCha8Rng,
) -> Result<BoundaryField, CoreError> {
    if dt < 0.0 {
        return Err(CoreError::config("increment needs dt ≥ 0"));
    }
    let noise = BoundaryNoise::new(nm, g, dt)?;
    let mut out = g.zero_boundary();
    noise.sample_into(rng, &mut out);
    Ok(out)
}

/// One semi-implicit stochastic step: deterministic implicit-midpoint drift
/// followed by the additive increment `(1/m)·ΔW` in the membrane velocity.
/// With `q0 = 0` this is bit-identical to the deterministic step.
pub fn sde_step(
    s: &StateVector,
    dt: f64,
    nm: &NoiseModel,
    rng: &mut ChaCha8Rng,
    p: &PhysicalParams,
    g: &AnnulusGrid,
) -> Result<StateVector, CoreError> {
    let mut stepper = Stepper::new(p, g, dt, StepDirection::Forward)?;
    let noise = BoundaryNoise::new(nm, g, dt)?;
    let mut out = StateVector::zero(g);
    stepper.step_into(s, None, None, &mut out)?;
    let mut dw = g.zero_boundary();
    noise.sample_into(rng, &mut dw);
    for j in 0..g.ntheta {
        out.vt[j] += dw[j] / p.m;
    }
    Ok(out)
}

/// Boundary probes plus the total energy, the observable vector used by the
/// mixing diagnostics: `v` and `v_t` at four angles and `E`.
#[derive(Debug, Clone)]
pub struct ObservableSet {
    pub probe_indices: Vec<usize>,
}

impl ObservableSet {
    pub fn probes_at_quarters(g: &AnnulusGrid) -> Self {
        let nt = g.ntheta;
        ObservableSet { probe_indices: vec![0, nt / 4, nt / 2, 3 * nt / 4] }
    }

    pub fn dim(&self) -> usize {
        2 * self.probe_indices.len() + 1
    }

    pub fn names(&self, g: &AnnulusGrid) -> Vec<String> {
        let mut names = Vec::new();
        for &j in &self.probe_indices {
            names.push(format!("v(theta={:.3})", g.theta(j)));
        }
        for &j in &self.probe_indices {
            names.push(format!("vt(theta={:.3})", g.theta(j)));
        }
        names.push("energy".to_string());
        names
    }

    pub fn eval(&self, s: &StateVector, p: &PhysicalParams, g: &AnnulusGrid) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        for &j in &self.probe_indices {
            out.push(s.v[j]);
        }
        for &j in &self.probe_indices {
            out.push(s.vt[j]);
        }
        out.push(model::energy(s, p, g).expect("grid-consistent state").total);
        out
    }
}

/// Per-checkpoint ensemble statistics.
pub struct EnsembleStats {
    pub checkpoint_times: Vec<f64>,
    pub checkpoint_steps: Vec<usize>,
    /// Per checkpoint: `(n_paths × obs_dim)` observable samples.
    pub observables: Vec<Array2<f64>>,
    /// Per checkpoint: squared phase-space norm per path.
    pub sq_norms: Vec<Vec<f64>>,
}

impl EnsembleStats {
    pub fn mean_sq_norm(&self, checkpoint: usize) -> f64 {
        let v = &self.sq_norms[checkpoint];
        v.iter().sum::<f64>() / v.len() as f64
    }

    pub fn sq_norm_standard_error(&self, checkpoint: usize) -> f64 {
        let v = &self.sq_norms[checkpoint];
        let n = v.len() as f64;
        let mean = self.mean_sq_norm(checkpoint);
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    }
}

fn checkpoint_steps(t_final: f64, dt: f64, checkpoints: &[f64]) -> Result<Vec<usize>, CoreError> {
    let n = crate::forward::n_steps(t_final, dt)?;
    let mut steps = Vec::with_capacity(checkpoints.len());
    for &t in checkpoints {
        let k = (t / dt).round() as i64;
        if k < 0 || k as usize > n {
            return Err(CoreError::config(format!("checkpoint {t} outside [0, {t_final}]")));
        }
        if ((k as f64) * dt - t).abs() > 1e-9 * dt.max(1.0) {
            return Err(CoreError::config(format!("checkpoint {t} is not a multiple of dt = {dt}")));
        }
        steps.push(k as usize);
    }
    Ok(steps)
}

/// Evolve an ensemble of `n_paths` stochastic paths from `s0`, recording the
/// observable vector and the squared phase-space norm at each checkpoint.
///
/// Path `i` draws from the ChaCha stream `stream_offset + i` of
/// `nm.seed`, so results are independent of scheduling and hardware.
#[allow(clippy::too_many_arguments)]
pub fn run_ensemble(
    s0: &StateVector,
    nm: &NoiseModel,
    t_final: f64,
    dt: f64,
    checkpoints: &[f64],
    n_paths: usize,
    stream_offset: u64,
    p: &PhysicalParams,
    g: &AnnulusGrid,
    obs: &ObservableSet,
) -> Result<EnsembleStats, CoreError> {
    s0.check_grid(g)?;
    nm.validate_for_grid(g)?;
    if n_paths == 0 {
        return Err(CoreError::config("ensemble needs at least one path"));
    }
    let steps = checkpoint_steps(t_final, dt, checkpoints)?;
    let n_total = crate::forward::n_steps(t_final, dt)?;
    let obs_dim = obs.dim();
    let n_cp = checkpoints.len();

    let per_path: Vec<(Vec<Vec<f64>>, Vec<f64>)> = (0..n_paths)
        .into_par_iter()
        .map_init(
            || {
                let stepper = Stepper::new(p, g, dt, StepDirection::Forward)
                    .expect("validated configuration");
                let noise = BoundaryNoise::new(nm, g, dt).expect("validated configuration");
                (stepper, noise, StateVector::zero(g), g.zero_boundary())
            },
            |(stepper, noise, next, dw), path| {
                let mut rng = ChaCha8Rng::seed_from_u64(nm.seed);
                rng.set_stream(stream_offset + path as u64);
                let mut s = s0.clone();
                let mut obs_rows: Vec<Vec<f64>> = Vec::with_capacity(n_cp);
                let mut sqs: Vec<f64> = Vec::with_capacity(n_cp);
                let mut cp_iter = steps.iter().peekable();
                // checkpoint at step 0, if requested
                while cp_iter.peek() == Some(&&0) {
                    obs_rows.push(obs.eval(&s, p, g));
                    sqs.push(model::inner_product_unchecked(&s, &s, p, g));
                    cp_iter.next();
                }
                for step_idx in 1..=n_total {
                    stepper.step_into(&s, None, None, next).expect("inner solve");
                    noise.sample_into(&mut rng, dw);
                    for j in 0..g.ntheta {
                        next.vt[j] += dw[j] / p.m;
                    }
                    std::mem::swap(&mut s, next);
                    while cp_iter.peek() == Some(&&step_idx) {
                        obs_rows.push(obs.eval(&s, p, g));
                        sqs.push(model::inner_product_unchecked(&s, &s, p, g));
                        cp_iter.next();
                    }
                }
                (obs_rows, sqs)
            },
        )
        .collect();

    let mut observables = vec![Array2::zeros((n_paths, obs_dim)); n_cp];
    let mut sq_norms = vec![vec![0.0; n_paths]; n_cp];
    for (path, (rows, sqs)) in per_path.into_iter().enumerate() {
        for (cp, row) in rows.into_iter().enumerate() {
            for (k, v) in row.into_iter().enumerate() {
                observables[cp][[path, k]] = v;
            }
        }
        for (cp, v) in sqs.into_iter().enumerate() {
            sq_norms[cp][path] = v;
        }
    }
    Ok(EnsembleStats {
        checkpoint_times: checkpoints.to_vec(),
        checkpoint_steps: steps,
        observables,
        sq_norms,
    })
}

/// Uniform-in-time moment bound report: `sup_t E‖X(t)‖²_H` against
/// `E‖X(0)‖²_H + bound_const` with `bound_const = Tr_H(P∞)` from the
/// stationary-covariance oracle (the discrete `sup_t Tr Q_t`).
#[derive(Debug, Clone)]
pub struct MomentBoundReport {
    pub checkpoint_times: Vec<f64>,
    pub mean_sq: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub initial_sq: f64,
    pub bound_const: f64,
    pub trace_q: f64,
    /// `initial + bound_const − sup_t mean`, positive when the bound holds.
    pub margin: f64,
    pub satisfied: bool,
    pub seminorm_warning: bool,
}

impl MomentBoundReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,mean_sq_norm,standard_error,bound\n");
        let bound = self.initial_sq + self.bound_const;
        for i in 0..self.checkpoint_times.len() {
            let _ = writeln!(
                out,
                "{:.12e},{:.17e},{:.17e},{:.17e}",
                self.checkpoint_times[i], self.mean_sq[i], self.standard_errors[i], bound
            );
        }
        out
    }
}

/// Check the uniform moment bound on an ensemble started at `s0`.
#[allow(clippy::too_many_arguments)]
pub fn moment_bound_check(
    stats: &EnsembleStats,
    s0: &StateVector,
    nm: &NoiseModel,
    dt: f64,
    p: &PhysicalParams,
    g: &AnnulusGrid,
) -> Result<MomentBoundReport, CoreError> {
    let oracle = stationary_covariance_oracle(p, g, nm, dt, &ObservableSet::probes_at_quarters(g))?;
    let bound_const = oracle.trace_h;
    let initial_sq = model::inner_product(s0, s0, p, g)?;
    let n_cp = stats.checkpoint_times.len();
    let mean_sq: Vec<f64> = (0..n_cp).map(|c| stats.mean_sq_norm(c)).collect();
    let ses: Vec<f64> = (0..n_cp).map(|c| stats.sq_norm_standard_error(c)).collect();
    let sup = mean_sq.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let margin = initial_sq + bound_const - sup;
    Ok(MomentBoundReport {
        checkpoint_times: stats.checkpoint_times.clone(),
        mean_sq,
        standard_errors: ses,
        initial_sq,
        bound_const,
        trace_q: nm.trace(),
        margin,
        satisfied: margin >= 0.0,
        seminorm_warning: p.seminorm_warning(),
    })
}

/// Stationary covariance of the discretized stochastic flow together with
/// its projection onto the observables.
pub struct CovarianceOracle {
    pub dense: DenseOps,
    /// Full-coordinate stationary covariance of the chain.
    pub covariance: DMatrix<f64>,
    /// `Tr_H(P∞) = sup_t Tr Q_t`.
    pub trace_h: f64,
    /// Certified fixed-point residual (relative, per unit time).
    pub residual: f64,
    pub observables: ObservableSet,
}

impl CovarianceOracle {
    /// Covariance of the observable vector for the Gaussian state
    /// `X ~ N(μ, C)`; the energy observable is quadratic and is handled
    /// through the full covariance.
    pub fn observable_covariance(&self, mu: &DVector<f64>) -> DMatrix<f64> {
        let k = self.observables.dim();
        let nlin = k - 1;
        let ni = self.dense.g.nr * self.dense.g.ntheta;
        let nb = self.dense.g.ntheta;
        let mut rows: Vec<DVector<f64>> = Vec::with_capacity(nlin);
        for &j in &self.observables.probe_indices {
            let mut r = DVector::zeros(self.dense.dim);
            r[ni + j] = 1.0;
            rows.push(r);
        }
        for &j in &self.observables.probe_indices {
            let mut r = DVector::zeros(self.dense.dim);
            r[2 * ni + nb + j] = 1.0;
            rows.push(r);
        }
        let c = &self.covariance;
        let w = &self.dense.w;
        let wc = w * c;
        let wmu = w * mu;
        let cwmu = c * &wmu;

        let mut out = DMatrix::zeros(k, k);
        for i in 0..nlin {
            for j in 0..nlin {
                out[(i, j)] = (c * &rows[j]).dot(&rows[i]);
            }
        }
        // energy = ½ XᵀWX with X = μ + G
        for i in 0..nlin {
            let cov_le = rows[i].dot(&cwmu);
            out[(i, nlin)] = cov_le;
            out[(nlin, i)] = cov_le;
        }
        let wcwc = &wc * &wc;
        out[(nlin, nlin)] = 0.5 * wcwc.trace() + wmu.dot(&cwmu);
        out
    }

    /// Zero mean vector in the oracle's coordinates.
    pub fn zero_mean(&self) -> DVector<f64> {
        DVector::zeros(self.dense.dim)
    }

    /// Mean of the observable vector for `X ~ N(μ, C)`.
    pub fn observable_mean(&self, mu: &DVector<f64>) -> DVector<f64> {
        let k = self.observables.dim();
        let nlin = k - 1;
        let ni = self.dense.g.nr * self.dense.g.ntheta;
        let nb = self.dense.g.ntheta;
        let mut out = DVector::zeros(k);
        for (i, &j) in self.observables.probe_indices.iter().enumerate() {
            out[i] = mu[ni + j];
            out[self.observables.probe_indices.len() + i] = mu[2 * ni + nb + j];
        }
        let w = &self.dense.w;
        let wc = w * &self.covariance;
        out[nlin] = 0.5 * (wc.trace() + (w * mu).dot(mu));
        out
    }

    /// CSV of the full observable covariance.
    pub fn to_csv(&self, g: &AnnulusGrid, mu: &DVector<f64>) -> String {
        let names = self.observables.names(g);
        let cov = self.observable_covariance(mu);
        let mut out = String::from("observable_i,observable_j,oracle_cov\n");
        for i in 0..names.len() {
            for j in 0..names.len() {
                let _ = writeln!(out, "{},{},{:.17e}", names[i], names[j], cov[(i, j)]);
            }
        }
        out
    }
}

/// Solve the discrete Lyapunov fixed point of the stochastic step chain.
pub fn stationary_covariance_oracle(
    p: &PhysicalParams,
    g: &AnnulusGrid,
    nm: &NoiseModel,
    dt: f64,
    observables: &ObservableSet,
) -> Result<CovarianceOracle, CoreError> {
    if p.seminorm_warning() {
        return Err(CoreError::numerical(
            "lyapunov",
            "k = σ = 0: boundary displacement is not controlled by the phase-space norm",
        ));
    }
    let dense = DenseOps::new(p, g)?;
    let (phi, _) = dense.cayley_maps(dt)?;
    let d = dense.step_noise_covariance(nm, dt);
    let (cov, residual) = dense.stationary_covariance(&phi, &d, dt, 1e-10, 120)?;
    let trace_h = dense.trace_h(&cov);
    Ok(CovarianceOracle {
        dense,
        covariance: cov,
        trace_h,
        residual,
        observables: observables.clone(),
    })
}

/// Mixing diagnostics between two ensembles.
#[derive(Debug, Clone)]
pub struct MixingReport {
    pub times: Vec<f64>,
    pub dist_series: Vec<f64>,
    pub critical_values: Vec<f64>,
    pub p_values: Vec<f64>,
    pub observable_names: Vec<String>,
    pub stationary_cov_mc: DMatrix<f64>,
    pub stationary_cov_oracle: DMatrix<f64>,
    pub standard_errors: DMatrix<f64>,
    pub z_scores: DMatrix<f64>,
    pub seminorm_warning: bool,
}

impl MixingReport {
    pub fn max_abs_z(&self) -> f64 {
        self.z_scores.iter().fold(0.0f64, |a, z| a.max(z.abs()))
    }

    pub fn distances_csv(&self) -> String {
        let mut out = String::from("checkpoint,distance,critical_value,p_value\n");
        for i in 0..self.times.len() {
            let _ = writeln!(
                out,
                "{:.12e},{:.17e},{:.17e},{:.6}",
                self.times[i], self.dist_series[i], self.critical_values[i], self.p_values[i]
            );
        }
        out
    }

    pub fn covariance_csv(&self) -> String {
        let mut out = String::from("observable_i,observable_j,mc_cov,oracle_cov,z\n");
        let k = self.observable_names.len();
        for i in 0..k {
            for j in 0..k {
                let _ = writeln!(
                    out,
                    "{},{},{:.17e},{:.17e},{:.6}",
                    self.observable_names[i],
                    self.observable_names[j],
                    self.stationary_cov_mc[(i, j)],
                    self.stationary_cov_oracle[(i, j)],
                    self.z_scores[(i, j)]
                );
            }
        }
        out
    }
}

/// Sample covariance and entrywise standard errors (moment-based, valid for
/// non-Gaussian observables such as the energy).
pub fn sample_covariance(samples: &Array2<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = samples.nrows();
    let k = samples.ncols();
    let nf = n as f64;
    let mut mean = vec![0.0; k];
    for row in samples.rows() {
        for (m, v) in mean.iter_mut().zip(row.iter()) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= nf;
    }
    let mut cov = DMatrix::zeros(k, k);
    for row in samples.rows() {
        for i in 0..k {
            let di = row[i] - mean[i];
            for j in 0..k {
                cov[(i, j)] += di * (row[j] - mean[j]);
            }
        }
    }
    cov /= nf - 1.0;
    // SE via the empirical fourth moments of the centered products
    let mut se = DMatrix::zeros(k, k);
    for row in samples.rows() {
        for i in 0..k {
            let di = row[i] - mean[i];
            for j in 0..k {
                let dev = di * (row[j] - mean[j]) - cov[(i, j)];
                se[(i, j)] += dev * dev;
            }
        }
    }
    for i in 0..k {
        for j in 0..k {
            let v: f64 = se[(i, j)];
            se[(i, j)] = (v / (nf * (nf - 1.0))).sqrt();
        }
    }
    (cov, se)
}

/// Evolve two ensembles from distinct initial states and track the distance
/// between their observable laws; at the final checkpoint compare the first
/// ensemble's covariance to the stationary oracle.
#[allow(clippy::too_many_arguments)]
pub fn mixing_experiment(
    s0_a: &StateVector,
    s0_b: &StateVector,
    t_final: f64,
    dt: f64,
    checkpoints: &[f64],
    n_paths: usize,
    nm: &NoiseModel,
    p: &PhysicalParams,
    g: &AnnulusGrid,
    n_permutations: usize,
) -> Result<MixingReport, CoreError> {
    if checkpoints.is_empty() {
        return Err(CoreError::config("mixing experiment needs at least one checkpoint"));
    }
    let obs = ObservableSet::probes_at_quarters(g);
    let stats_a =
        run_ensemble(s0_a, nm, t_final, dt, checkpoints, n_paths, 0, p, g, &obs)?;
    let stats_b = run_ensemble(
        s0_b,
        nm,
        t_final,
        dt,
        checkpoints,
        n_paths,
        n_paths as u64,
        p,
        g,
        &obs,
    )?;

    let mut dist_series = Vec::with_capacity(checkpoints.len());
    let mut critical_values = Vec::with_capacity(checkpoints.len());
    let mut p_values = Vec::with_capacity(checkpoints.len());
    for cp in 0..checkpoints.len() {
        let test: EnergyDistanceTest = energy_distance_permutation_test(
            &stats_a.observables[cp],
            &stats_b.observables[cp],
            n_permutations,
            0.05,
            nm.seed ^ 0x9e3779b97f4a7c15 ^ cp as u64,
        );
        dist_series.push(test.statistic);
        critical_values.push(test.critical_value);
        p_values.push(test.p_value);
    }

    // final-time covariance of ensemble A against the oracle
    let oracle = stationary_covariance_oracle(p, g, nm, dt, &obs)?;
    let n_final = *stats_a.checkpoint_steps.last().unwrap();
    // deterministic mean of the chain after n_final steps
    let mu = {
        let mut stepper = Stepper::new(p, g, dt, StepDirection::Forward)?;
        let mut s = s0_a.clone();
        let mut next = StateVector::zero(g);
        for _ in 0..n_final {
            stepper.step_into(&s, None, None, &mut next)?;
            std::mem::swap(&mut s, &mut next);
        }
        oracle.dense.flatten(&s)
    };
    // covariance after a finite horizon; at mixing times this is already the
    // stationary one, but the exact finite-time value keeps the comparison
    // bias-free at any horizon
    let (phi, _) = oracle.dense.cayley_maps(dt)?;
    let d = oracle.dense.step_noise_covariance(nm, dt);
    let cov_t = oracle.dense.covariance_over_steps(&phi, &d, n_final);
    let finite_oracle = CovarianceOracle {
        covariance: cov_t,
        trace_h: oracle.trace_h,
        residual: oracle.residual,
        observables: obs.clone(),
        dense: oracle.dense,
    };
    let oracle_cov = finite_oracle.observable_covariance(&mu);

    let last = checkpoints.len() - 1;
    let (mc_cov, se) = sample_covariance(&stats_a.observables[last]);
    let mut z = DMatrix::zeros(obs.dim(), obs.dim());
    for i in 0..obs.dim() {
        for j in 0..obs.dim() {
            let denom = se[(i, j)].max(f64::MIN_POSITIVE);
            z[(i, j)] = (mc_cov[(i, j)] - oracle_cov[(i, j)]) / denom;
        }
    }

    Ok(MixingReport {
        times: checkpoints.to_vec(),
        dist_series,
        critical_values,
        p_values,
        observable_names: obs.names(g),
        stationary_cov_mc: mc_cov,
        stationary_cov_oracle: oracle_cov,
        standard_errors: se,
        z_scores: z,
        seminorm_warning: p.seminorm_warning(),
    })
}
