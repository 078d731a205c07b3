//! Gaussian-cluster classification data.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{Dataset, Matrix};
use crate::error::{BndlError, Result};
use crate::rng::run_stream;

/// Center radius in units of `spread` when `overlap = 0`.
pub const SEPARATED_RADIUS: f64 = 8.0;

const CENTER_STREAM: u64 = 10;
const POINT_STREAM: u64 = 11;

#[derive(Debug, Clone, PartialEq)]
pub struct BlobsSpec {
    pub n: usize,
    pub dim: usize,
    pub classes: usize,
    /// Explicit `classes × dim` centers; generated from the seed when absent.
    pub centers: Option<Matrix>,
    /// Isotropic standard deviation of every cluster.
    pub spread: f64,
    /// Generated centers sit at radius `SEPARATED_RADIUS·spread / (1 + overlap)`.
    pub overlap: f64,
    pub seed: u64,
}

impl BlobsSpec {
    pub fn new(n: usize, dim: usize, classes: usize, overlap: f64, seed: u64) -> Self {
        Self {
            n,
            dim,
            classes,
            centers: None,
            spread: 1.0,
            overlap,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.classes == 0 {
            return Err(BndlError::Config(
                "blobs need dim >= 1 and classes >= 1".into(),
            ));
        }
        if self.n < self.classes {
            return Err(BndlError::Config(format!(
                "blobs need n >= classes, got n={} classes={}",
                self.n, self.classes
            )));
        }
        if !(self.spread > 0.0 && self.spread.is_finite()) {
            return Err(BndlError::Config(format!(
                "spread must be positive, got {}",
                self.spread
            )));
        }
        if !(self.overlap >= 0.0 && self.overlap.is_finite()) {
            return Err(BndlError::Config(format!(
                "overlap must be non-negative, got {}",
                self.overlap
            )));
        }
        if let Some(c) = &self.centers {
            if c.rows() != self.classes || c.cols() != self.dim {
                return Err(BndlError::Shape(format!(
                    "centers are {}x{}, expected {}x{}",
                    c.rows(),
                    c.cols(),
                    self.classes,
                    self.dim
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Blobs {
    pub dataset: Dataset,
    pub centers: Matrix,
}

pub fn gen_blobs(spec: &BlobsSpec) -> Result<Dataset> {
    Ok(gen_blobs_with_centers(spec)?.dataset)
}

/// Balanced clusters: sample `i` belongs to class `i mod classes`.
pub fn gen_blobs_with_centers(spec: &BlobsSpec) -> Result<Blobs> {
    spec.validate()?;
    let centers = match &spec.centers {
        Some(c) => c.clone(),
        None => {
            let mut rng = run_stream(spec.seed, CENTER_STREAM);
            let radius = SEPARATED_RADIUS * spec.spread / (1.0 + spec.overlap);
            let mut c = Matrix::zeros(spec.classes, spec.dim);
            for k in 0..spec.classes {
                let dir = random_direction(&mut rng, spec.dim);
                c.row_mut(k)
                    .iter_mut()
                    .zip(dir)
                    .for_each(|(x, d)| *x = radius * d);
            }
            c
        }
    };
    let mut rng = run_stream(spec.seed, POINT_STREAM);
    let mut features = Matrix::zeros(spec.n, spec.dim);
    let mut labels = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let y = i % spec.classes;
        for (j, x) in features.row_mut(i).iter_mut().enumerate() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *x = centers.get(y, j) + spec.spread * z;
        }
        labels.push(y);
    }
    Ok(Blobs {
        dataset: Dataset::new(features, labels, spec.classes)?,
        centers,
    })
}

fn random_direction<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Accuracy of the Bayes rule (nearest center, since clusters share an
/// isotropic covariance and equal weights) on `data`.
pub fn bayes_accuracy(centers: &Matrix, data: &Dataset) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let hits = (0..data.len())
        .filter(|&i| {
            let h = data.features.row(i);
            let nearest = (0..centers.rows())
                .map(|k| {
                    let d: f64 = h
                        .iter()
                        .zip(centers.row(k))
                        .map(|(a, b)| (a - b).powi(2))
                        .sum();
                    (k, d)
                })
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(k, _)| k)
                .unwrap_or(0);
            nearest == data.label(i)
        })
        .count();
    hits as f64 / data.len() as f64
}
