//! Exact non-negative matrix factorization `Y ≈ θΦ` by alternating updates.

use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;

use crate::data::Matrix;
use crate::error::{BndlError, Result};
use crate::rng::run_stream;

const MU_EPS: f64 = 1e-300;
const RESTART_STREAM_BASE: u64 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NmfSolver {
    /// Lee–Seung multiplicative updates; the Frobenius objective never increases.
    Multiplicative,
    /// Hierarchical alternating least squares: exact projected block updates
    /// of one row of Φ or column of θ at a time.
    Hals,
}

impl FromStr for NmfSolver {
    type Err = BndlError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mu" | "multiplicative" => Ok(Self::Multiplicative),
            "hals" => Ok(Self::Hals),
            _ => Err(BndlError::Config(format!("unknown NMF solver `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NmfConfig {
    pub restarts: usize,
    pub iters: usize,
    pub seed: u64,
    pub solver: NmfSolver,
    /// Stop a restart once the relative residual falls below this.
    pub tol: f64,
    /// Residual is evaluated (and recorded) every this many iterations.
    pub check_every: usize,
}

impl Default for NmfConfig {
    fn default() -> Self {
        Self {
            restarts: 10,
            iters: 5000,
            seed: 0,
            solver: NmfSolver::Hals,
            tol: 1e-9,
            check_every: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NmfFit {
    pub theta: Matrix,
    pub phi: Matrix,
    /// `‖Y − θΦ‖_F / ‖Y‖_F`.
    pub residual: f64,
    pub best_restart: usize,
    /// Relative residuals of the best restart, starting with the initialization.
    pub history: Vec<f64>,
}

pub fn relative_residual(y: &Matrix, theta: &Matrix, phi: &Matrix) -> f64 {
    let ny = y.frobenius_norm();
    let mut acc = 0.0;
    for i in 0..y.rows() {
        let ti = theta.row(i);
        for j in 0..y.cols() {
            let mut s = 0.0;
            for (k, t) in ti.iter().enumerate() {
                s += t * phi.get(k, j);
            }
            acc += (y.get(i, j) - s).powi(2);
        }
    }
    if ny > 0.0 {
        acc.sqrt() / ny
    } else {
        acc.sqrt()
    }
}

/// Best of `cfg.restarts` random non-negative initializations.
pub fn fit_exact_nmf(y: &Matrix, r: usize, cfg: &NmfConfig) -> Result<NmfFit> {
    if r == 0 || r > y.rows().min(y.cols()) {
        return Err(BndlError::Config(format!(
            "rank {r} must lie in 1..={}",
            y.rows().min(y.cols())
        )));
    }
    if y.as_slice().iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(BndlError::Domain(
            "NMF input must be finite and non-negative".into(),
        ));
    }
    if cfg.restarts == 0 || cfg.check_every == 0 {
        return Err(BndlError::Config(
            "restarts and check_every must be positive".into(),
        ));
    }
    let fits: Vec<NmfFit> = (0..cfg.restarts)
        .into_par_iter()
        .map(|restart| {
            let mut rng = run_stream(cfg.seed, RESTART_STREAM_BASE + restart as u64);
            let (theta, phi) = random_init(&mut rng, y, r);
            let mut fit = run_solver(y, theta, phi, cfg);
            fit.best_restart = restart;
            fit
        })
        .collect();
    Ok(fits
        .into_iter()
        .min_by(|a, b| a.residual.total_cmp(&b.residual))
        .expect("at least one restart"))
}

fn random_init<R: Rng + ?Sized>(rng: &mut R, y: &Matrix, r: usize) -> (Matrix, Matrix) {
    let theta = Matrix::from_fn(y.rows(), r, |_, _| rng.random::<f64>() + 1e-3);
    let mut phi = Matrix::from_fn(r, y.cols(), |_, _| rng.random::<f64>() + 1e-3);
    // Match the total mass of Y.
    let prod = theta.matmul(&phi).expect("conformable");
    let ratio = y.as_slice().iter().sum::<f64>() / prod.as_slice().iter().sum::<f64>();
    if ratio.is_finite() && ratio > 0.0 {
        phi.as_mut_slice().iter_mut().for_each(|v| *v *= ratio);
    }
    (theta, phi)
}

/// Runs one restart of the configured solver from the given factors.
pub fn run_solver(y: &Matrix, mut theta: Matrix, mut phi: Matrix, cfg: &NmfConfig) -> NmfFit {
    let mut history = vec![relative_residual(y, &theta, &phi)];
    for it in 1..=cfg.iters {
        match cfg.solver {
            NmfSolver::Multiplicative => mu_step(y, &mut theta, &mut phi),
            NmfSolver::Hals => hals_step(y, &mut theta, &mut phi),
        }
        if it % cfg.check_every == 0 || it == cfg.iters {
            let res = relative_residual(y, &theta, &phi);
            history.push(res);
            if res < cfg.tol {
                break;
            }
        }
    }
    let residual = *history.last().expect("non-empty");
    NmfFit {
        theta,
        phi,
        residual,
        best_restart: 0,
        history,
    }
}

fn gram_cols(a: &Matrix) -> Matrix {
    a.transpose().matmul(a).expect("conformable")
}

fn gram_rows(a: &Matrix) -> Matrix {
    a.matmul(&a.transpose()).expect("conformable")
}

fn mu_step(y: &Matrix, theta: &mut Matrix, phi: &mut Matrix) {
    let tty = theta.transpose().matmul(y).expect("conformable");
    let ttt_phi = gram_cols(theta).matmul(phi).expect("conformable");
    for (p, (num, den)) in phi
        .as_mut_slice()
        .iter_mut()
        .zip(tty.as_slice().iter().zip(ttt_phi.as_slice()))
    {
        *p *= num / (den + MU_EPS);
    }
    let ypt = y.matmul(&phi.transpose()).expect("conformable");
    let t_ppt = theta.matmul(&gram_rows(phi)).expect("conformable");
    for (t, (num, den)) in theta
        .as_mut_slice()
        .iter_mut()
        .zip(ypt.as_slice().iter().zip(t_ppt.as_slice()))
    {
        *t *= num / (den + MU_EPS);
    }
}

fn hals_step(y: &Matrix, theta: &mut Matrix, phi: &mut Matrix) {
    let r = theta.cols();
    // Rows of Φ.
    let tty = theta.transpose().matmul(y).expect("conformable");
    let ttt = gram_cols(theta);
    for k in 0..r {
        let d = ttt.get(k, k);
        if d <= 0.0 {
            continue;
        }
        for j in 0..phi.cols() {
            let mut s = 0.0;
            for l in 0..r {
                s += ttt.get(k, l) * phi.get(l, j);
            }
            let v = phi.get(k, j) + (tty.get(k, j) - s) / d;
            phi.set(k, j, v.max(0.0));
        }
    }
    // Columns of θ.
    let ypt = y.matmul(&phi.transpose()).expect("conformable");
    let ppt = gram_rows(phi);
    for k in 0..r {
        let d = ppt.get(k, k);
        if d <= 0.0 {
            continue;
        }
        for i in 0..theta.rows() {
            let mut s = 0.0;
            for l in 0..r {
                s += theta.get(i, l) * ppt.get(l, k);
            }
            let v = theta.get(i, k) + (ypt.get(i, k) - s) / d;
            theta.set(i, k, v.max(0.0));
        }
    }
    // Balance scale between the factors.
    for k in 0..r {
        let nt = theta.column(k).iter().map(|v| v * v).sum::<f64>().sqrt();
        let np = phi.row(k).iter().map(|v| v * v).sum::<f64>().sqrt();
        if nt > 0.0 && np > 0.0 {
            let s = (np / nt).sqrt();
            for i in 0..theta.rows() {
                theta.set(i, k, theta.get(i, k) * s);
            }
            phi.row_mut(k).iter_mut().for_each(|v| *v /= s);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthlab::prop1::gen_prop1_instance;

    #[test]
    fn rank_one_exact() {
        let u = [1.0, 2.0, 0.5, 3.0];
        let v = [0.2, 1.0, 4.0];
        let y = Matrix::from_fn(4, 3, |i, j| u[i] * v[j]);
        for solver in [NmfSolver::Multiplicative, NmfSolver::Hals] {
            let cfg = NmfConfig {
                restarts: 3,
                iters: 2000,
                solver,
                ..Default::default()
            };
            let fit = fit_exact_nmf(&y, 1, &cfg).unwrap();
            assert!(fit.residual < 1e-6, "{solver:?}: {}", fit.residual);
            let t = fit.theta.column(0);
            for i in 0..4 {
                assert!((t[i] / t[0] - u[i] / u[0]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn multiplicative_updates_are_monotone() {
        let inst = gen_prop1_instance(12, 10, 3, 1, 5).unwrap();
        let cfg = NmfConfig {
            restarts: 1,
            iters: 500,
            solver: NmfSolver::Multiplicative,
            check_every: 1,
            tol: 0.0,
            ..Default::default()
        };
        let fit = fit_exact_nmf(&inst.y, 3, &cfg).unwrap();
        for w in fit.history.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let y = Matrix::from_fn(3, 3, |i, j| (i + j) as f64);
        assert!(fit_exact_nmf(&y, 4, &NmfConfig::default()).is_err());
        let mut neg = y.clone();
        neg.set(0, 0, -1.0);
        assert!(fit_exact_nmf(&neg, 2, &NmfConfig::default()).is_err());
    }
}
