//! Exact factorizations `Y = θ*·Φ*` with selectively windowed columns of θ*.
//!
//! A latent `k` is windowed when some data column `j` satisfies
//! `Φ*(:, j) = e_k` (so `Y(:, j)` is a copy of `θ*(:, k)`), and a set `J` of
//! `r − 1` other data columns has `Φ*(k, J) = 0` with `rank(Y(:, J)) = r − 1`.
//! Under these two conditions column `k` of θ* is identifiable up to scale.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::Matrix;
use crate::error::{BndlError, Result};
use crate::rng::run_stream;

pub const MAX_ATTEMPTS: usize = 100;
/// Relative singular-value gap used for every rank decision.
pub const RANK_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Prop1Instance {
    /// `m × r`, column-stochastic.
    pub theta_star: Matrix,
    /// `r × n`, column-stochastic.
    pub phi_star: Matrix,
    /// `m × n`, column-stochastic.
    pub y: Matrix,
    /// Windowed latents (columns of θ*), ascending.
    pub window_cols: Vec<usize>,
    /// `window_data_cols[w]` is the data column with `Φ*(:, j) = e_{window_cols[w]}`.
    pub window_data_cols: Vec<usize>,
    /// `zero_sets[w]`: the `r − 1` data columns `J` with `Φ*(window_cols[w], J) = 0`.
    pub zero_sets: Vec<Vec<usize>>,
    pub rank: usize,
}

impl Prop1Instance {
    pub fn m(&self) -> usize {
        self.theta_star.rows()
    }

    pub fn n(&self) -> usize {
        self.phi_star.cols()
    }

    /// Re-verifies both identifiability conditions and the rank of `Y`.
    pub fn check(&self) -> Result<()> {
        let r = self.rank;
        if matrix_rank(&self.y) != r {
            return Err(BndlError::Generation(format!("rank(Y) != {r}")));
        }
        for (w, &k) in self.window_cols.iter().enumerate() {
            let j = self.window_data_cols[w];
            for i in 0..r {
                let v = self.phi_star.get(i, j);
                let ok = if i == k { v > 0.0 } else { v == 0.0 };
                if !ok {
                    return Err(BndlError::Generation(format!(
                        "latent {k}: data column {j} is not a selective window"
                    )));
                }
            }
            let zs = &self.zero_sets[w];
            if zs.len() != r - 1 || zs.iter().any(|&c| self.phi_star.get(k, c) != 0.0) {
                return Err(BndlError::Generation(format!(
                    "latent {k}: sparsity set is not r-1 zero columns"
                )));
            }
            if matrix_rank(&self.y.select_columns(zs)) != r - 1 {
                return Err(BndlError::Generation(format!(
                    "latent {k}: rank(Y(:, J)) != r-1"
                )));
            }
        }
        Ok(())
    }
}

pub(crate) fn matrix_rank(m: &Matrix) -> usize {
    m.rank(RANK_TOL)
}

pub fn gen_prop1_instance(
    m: usize,
    n: usize,
    r: usize,
    n_window: usize,
    seed: u64,
) -> Result<Prop1Instance> {
    if r < 2 || m <= r || n <= r {
        return Err(BndlError::Config(format!(
            "need r >= 2, m > r and n > r; got m={m} n={n} r={r}"
        )));
    }
    if n_window > r {
        return Err(BndlError::Config(format!(
            "n_window={n_window} exceeds r={r}"
        )));
    }
    let mut rng = run_stream(seed, 0);
    for _ in 0..MAX_ATTEMPTS {
        let inst = attempt(&mut rng, m, n, r, n_window)?;
        if inst.check().is_ok() {
            return Ok(inst);
        }
    }
    Err(BndlError::Generation(format!(
        "no instance with rank {r} after {MAX_ATTEMPTS} attempts"
    )))
}

fn attempt<R: Rng + ?Sized>(
    rng: &mut R,
    m: usize,
    n: usize,
    r: usize,
    n_window: usize,
) -> Result<Prop1Instance> {
    let mut latents: Vec<usize> = (0..r).collect();
    latents.shuffle(rng);
    let mut window_cols = latents[..n_window].to_vec();
    window_cols.sort_unstable();
    let mut data_cols: Vec<usize> = (0..n).collect();
    data_cols.shuffle(rng);
    let window_data_cols = data_cols[..n_window].to_vec();
    let free_cols = &data_cols[n_window..];

    let mut theta = Matrix::from_fn(m, r, |_, _| rng.random::<f64>());
    let mut phi = Matrix::from_fn(r, n, |_, _| rng.random::<f64>());
    for (&k, &j) in window_cols.iter().zip(&window_data_cols) {
        for i in 0..r {
            phi.set(i, j, if i == k { 1.0 } else { 0.0 });
        }
    }
    let mut zero_sets = Vec::with_capacity(n_window);
    for (w, &k) in window_cols.iter().enumerate() {
        // Other windows already vanish on row k.
        let mut zs: Vec<usize> = window_data_cols
            .iter()
            .enumerate()
            .filter(|&(v, _)| v != w)
            .map(|(_, &j)| j)
            .collect();
        let mut extra = free_cols.to_vec();
        extra.shuffle(rng);
        for j in extra {
            if zs.len() >= r - 1 {
                break;
            }
            // Keep at least one positive entry in the column.
            let others: f64 = (0..r).filter(|&i| i != k).map(|i| phi.get(i, j)).sum();
            if others > 0.0 {
                phi.set(k, j, 0.0);
                zs.push(j);
            }
        }
        zs.truncate(r - 1);
        zs.sort_unstable();
        zero_sets.push(zs);
    }
    normalize_columns(&mut theta);
    normalize_columns(&mut phi);
    let y = theta.matmul(&phi)?;
    Ok(Prop1Instance {
        theta_star: theta,
        phi_star: phi,
        y,
        window_cols,
        window_data_cols,
        zero_sets,
        rank: r,
    })
}

/// Scales every non-zero column to unit sum.
pub fn normalize_columns(a: &mut Matrix) {
    for j in 0..a.cols() {
        let s: f64 = (0..a.rows()).map(|i| a.get(i, j)).sum();
        if s > 0.0 {
            for i in 0..a.rows() {
                a.set(i, j, a.get(i, j) / s);
            }
        }
    }
}
