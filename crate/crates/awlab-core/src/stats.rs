//! Two-sample energy distance with a permutation test.
//!
//! The energy distance `E(X,Y) = 2·E|X−Y| − E|X−X'| − E|Y−Y'|` metrizes weak
//! convergence of the observable laws; the permutation test makes it
//! distribution-free. Pairwise distances are precomputed once (condensed
//! upper triangle, f32) so each permutation is a relabelling pass.

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// Result of the two-sample test at one checkpoint.
#[derive(Debug, Clone)]
pub struct EnergyDistanceTest {
    pub statistic: f64,
    /// Empirical `1−alpha` quantile of the permutation null.
    pub critical_value: f64,
    pub p_value: f64,
    pub n_permutations: usize,
}

/// Condensed pairwise-distance table for a pooled sample.
struct CondensedDistances {
    n: usize,
    d: Vec<f32>,
}

impl CondensedDistances {
    fn new(pooled: &Array2<f64>) -> Self {
        let n = pooled.nrows();
        let dim = pooled.ncols();
        let data = pooled.as_slice().expect("contiguous sample matrix");
        let mut d = vec![0.0f32; n * (n - 1) / 2];
        let mut idx = 0;
        for i in 0..n {
            let ri = &data[i * dim..(i + 1) * dim];
            for j in i + 1..n {
                let rj = &data[j * dim..(j + 1) * dim];
                let mut acc = 0.0f64;
                for k in 0..dim {
                    let diff = ri[k] - rj[k];
                    acc += diff * diff;
                }
                d[idx] = acc.sqrt() as f32;
                idx += 1;
            }
        }
        CondensedDistances { n, d }
    }

    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < j);
        let idx = i * self.n - i * (i + 1) / 2 + (j - i - 1);
        self.d[idx] as f64
    }

    fn total_sum(&self) -> f64 {
        self.d.iter().map(|&x| x as f64).sum()
    }

    /// Sum of pairwise distances within an index set (indices ascending).
    fn within_sum(&self, idx: &[usize]) -> f64 {
        let mut acc = 0.0;
        for (a, &i) in idx.iter().enumerate() {
            for &j in &idx[a + 1..] {
                acc += self.get(i, j);
            }
        }
        acc
    }
}

fn statistic_from_sums(s_aa: f64, s_bb: f64, s_ab: f64, na: usize, nb: usize) -> f64 {
    let (na_f, nb_f) = (na as f64, nb as f64);
    let mean_ab = s_ab / (na_f * nb_f);
    let mean_aa = if na > 1 { 2.0 * s_aa / (na_f * (na_f - 1.0)) } else { 0.0 };
    let mean_bb = if nb > 1 { 2.0 * s_bb / (nb_f * (nb_f - 1.0)) } else { 0.0 };
    2.0 * mean_ab - mean_aa - mean_bb
}

/// Energy distance between two samples (rows = observations).
pub fn energy_distance(x: &Array2<f64>, y: &Array2<f64>) -> f64 {
    assert_eq!(x.ncols(), y.ncols(), "observable dimensions differ");
    let (na, nb) = (x.nrows(), y.nrows());
    let mut pooled = Array2::zeros((na + nb, x.ncols()));
    pooled.slice_mut(ndarray::s![..na, ..]).assign(x);
    pooled.slice_mut(ndarray::s![na.., ..]).assign(y);
    let cd = CondensedDistances::new(&pooled);
    let a_idx: Vec<usize> = (0..na).collect();
    let b_idx: Vec<usize> = (na..na + nb).collect();
    let s_aa = cd.within_sum(&a_idx);
    let s_bb = cd.within_sum(&b_idx);
    let s_ab = cd.total_sum() - s_aa - s_bb;
    statistic_from_sums(s_aa, s_bb, s_ab, na, nb)
}

/// Energy-distance permutation test: statistic, `1−alpha` critical value
/// and p-value under random relabelling of the pooled sample.
pub fn energy_distance_permutation_test(
    x: &Array2<f64>,
    y: &Array2<f64>,
    n_permutations: usize,
    alpha: f64,
    seed: u64,
) -> EnergyDistanceTest {
    assert_eq!(x.ncols(), y.ncols(), "observable dimensions differ");
    let (na, nb) = (x.nrows(), y.nrows());
    let n = na + nb;
    let mut pooled = Array2::zeros((n, x.ncols()));
    pooled.slice_mut(ndarray::s![..na, ..]).assign(x);
    pooled.slice_mut(ndarray::s![na.., ..]).assign(y);
    let cd = CondensedDistances::new(&pooled);
    let total = cd.total_sum();

    let stat_for = |labels: &[usize]| -> f64 {
        // labels = ascending indices of the A-group
        let s_aa = cd.within_sum(labels);
        let mut b_idx = Vec::with_capacity(nb);
        let mut it = labels.iter().peekable();
        for i in 0..n {
            if it.peek() == Some(&&i) {
                it.next();
            } else {
                b_idx.push(i);
            }
        }
        let s_bb = cd.within_sum(&b_idx);
        statistic_from_sums(s_aa, s_bb, total - s_aa - s_bb, na, nb)
    };

    let observed = {
        let a_idx: Vec<usize> = (0..na).collect();
        stat_for(&a_idx)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..n).collect();
    let mut null = Vec::with_capacity(n_permutations);
    let mut ge = 0usize;
    for _ in 0..n_permutations {
        indices.shuffle(&mut rng);
        let mut a_idx: Vec<usize> = indices[..na].to_vec();
        a_idx.sort_unstable();
        let s = stat_for(&a_idx);
        if s >= observed {
            ge += 1;
        }
        null.push(s);
    }
    null.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = (((1.0 - alpha) * n_permutations as f64).ceil() as usize)
        .clamp(1, n_permutations)
        - 1;
    EnergyDistanceTest {
        statistic: observed,
        critical_value: null[rank],
        p_value: (ge + 1) as f64 / (n_permutations + 1) as f64,
        n_permutations,
    }
}
