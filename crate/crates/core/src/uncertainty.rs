//! Monte Carlo uncertainty: top-2 Welch t-tests, PAvPU and binned curves.
//!
//! For every sample the raw scores θΦ are drawn `samples` times. The two
//! classes with the highest mean score are compared with a two-sample Welch
//! t-test; a prediction is *certain* when the resulting p-value is below the
//! threshold.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Matrix};
use crate::distributions::open_uniform;
use crate::error::{BndlError, Result};
use crate::model::{raw_scores, sample_phi, sample_theta, GlobalPosterior, ModelParams};
use crate::numkernel::student_t_two_sided_p;
use crate::rng::sample_stream;

/// p-value reported when both columns are constant but differ.
pub const EPS_P: f64 = 1e-300;

pub const DEFAULT_MC_SAMPLES: usize = 20;
pub const DEFAULT_P_THRESHOLD: f64 = 0.05;
pub const DEFAULT_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyConfig {
    pub samples: usize,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for UncertaintyConfig {
    fn default() -> Self {
        Self {
            samples: DEFAULT_MC_SAMPLES,
            threshold: DEFAULT_P_THRESHOLD,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyRecord {
    pub sample_id: usize,
    pub predicted: usize,
    pub true_class: usize,
    pub p_value: f64,
    pub certain: bool,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PavpuReport {
    pub n_ac: usize,
    pub n_au: usize,
    pub n_ic: usize,
    pub n_iu: usize,
    pub pavpu: f64,
    pub accuracy: f64,
    pub threshold: f64,
    pub mc_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub bin: usize,
    pub mean_p: f64,
    pub accuracy: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinCurve {
    pub bins: Vec<Bin>,
}

fn mc_scores_with<R: Rng + ?Sized>(
    p: &ModelParams,
    h: &[f64],
    gp: &GlobalPosterior,
    samples: usize,
    rng: &mut R,
) -> Result<Matrix> {
    if samples < 2 {
        return Err(BndlError::Config(format!(
            "the t-test needs at least 2 MC samples, got {samples}"
        )));
    }
    let dims = p.dims();
    let lp = p.infer_local(h)?;
    let mut out = Matrix::zeros(samples, dims.classes);
    let mut eps_theta = vec![0.0; dims.latent];
    for s in 0..samples {
        eps_theta.iter_mut().for_each(|e| *e = open_uniform(rng));
        let theta = sample_theta(&lp, &eps_theta)?;
        let eps_phi = Matrix::from_fn(dims.latent, dims.classes, |_, _| open_uniform(rng));
        let phi = sample_phi(gp, &eps_phi)?;
        out.row_mut(s).copy_from_slice(&raw_scores(&theta, &phi));
    }
    Ok(out)
}

/// `samples` independent draws of the raw scores θΦ, one row per draw.
pub fn mc_scores<R: Rng + ?Sized>(
    p: &ModelParams,
    h: &[f64],
    samples: usize,
    rng: &mut R,
) -> Result<Matrix> {
    mc_scores_with(p, h, &p.infer_global(), samples, rng)
}

/// Mean and unbiased variance, summed in sorted order so the result does not
/// depend on row order.
fn column_moments(mut col: Vec<f64>) -> (f64, f64) {
    col.sort_by(f64::total_cmp);
    let n = col.len() as f64;
    let mean = col.iter().sum::<f64>() / n;
    let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Top-2 classes by mean score and the Welch t-test p-value between them.
pub fn p_value_top2(scores: &Matrix) -> Result<(usize, f64)> {
    let (s, c) = (scores.rows(), scores.cols());
    if c < 2 {
        return Err(BndlError::Config(format!(
            "top-2 test needs C >= 2, got {c}"
        )));
    }
    if s < 2 {
        return Err(BndlError::Config(format!(
            "top-2 test needs S >= 2, got {s}"
        )));
    }
    let moments: Vec<(f64, f64)> = (0..c).map(|j| column_moments(scores.column(j))).collect();
    let mut first = 0;
    for j in 1..c {
        if moments[j].0 > moments[first].0 {
            first = j;
        }
    }
    let mut second = if first == 0 { 1 } else { 0 };
    for j in 0..c {
        if j != first && moments[j].0 > moments[second].0 {
            second = j;
        }
    }
    let (m1, v1) = moments[first];
    let (m2, v2) = moments[second];
    let n = s as f64;
    let (a, b) = (v1 / n, v2 / n);
    let se2 = a + b;
    if se2 == 0.0 {
        let p = if m1 == m2 { 1.0 } else { EPS_P };
        return Ok((first, p));
    }
    let t = (m1 - m2) / se2.sqrt();
    let dof = se2 * se2 / (a * a / (n - 1.0) + b * b / (n - 1.0));
    Ok((first, student_t_two_sided_p(t, dof)?))
}

/// Builds the PAvPU tally from per-sample records.
pub fn pavpu_report(
    records: &[UncertaintyRecord],
    threshold: f64,
    mc_samples: usize,
) -> PavpuReport {
    let (mut n_ac, mut n_au, mut n_ic, mut n_iu) = (0, 0, 0, 0);
    for r in records {
        match (r.correct, r.certain) {
            (true, true) => n_ac += 1,
            (true, false) => n_au += 1,
            (false, true) => n_ic += 1,
            (false, false) => n_iu += 1,
        }
    }
    let total = (n_ac + n_au + n_ic + n_iu) as f64;
    let (pavpu, accuracy) = if total > 0.0 {
        ((n_ac + n_iu) as f64 / total, (n_ac + n_au) as f64 / total)
    } else {
        (0.0, 0.0)
    };
    PavpuReport {
        n_ac,
        n_au,
        n_ic,
        n_iu,
        pavpu,
        accuracy,
        threshold,
        mc_samples,
    }
}

/// Runs the MC t-test protocol over every sample of `data`.
pub fn evaluate_uncertainty(
    p: &ModelParams,
    data: &Dataset,
    cfg: &UncertaintyConfig,
) -> Result<(Vec<UncertaintyRecord>, PavpuReport)> {
    if cfg.samples < 2 {
        return Err(BndlError::Config(format!(
            "the t-test needs at least 2 MC samples, got {}",
            cfg.samples
        )));
    }
    let gp = p.infer_global();
    let records: Vec<UncertaintyRecord> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_stream(cfg.seed, i);
            let scores = mc_scores_with(p, data.features.row(i), &gp, cfg.samples, &mut rng)?;
            let (predicted, p_value) = p_value_top2(&scores)?;
            let true_class = data.label(i);
            Ok(UncertaintyRecord {
                sample_id: i,
                predicted,
                true_class,
                p_value,
                certain: p_value < cfg.threshold,
                correct: predicted == true_class,
            })
        })
        .collect::<Result<_>>()?;
    let report = pavpu_report(&records, cfg.threshold, cfg.samples);
    Ok((records, report))
}

/// Sorts records by p-value and splits them into `n_bins` near-equal bins.
pub fn uncertainty_bins(records: &[UncertaintyRecord], n_bins: usize) -> Result<BinCurve> {
    if records.is_empty() {
        return Err(BndlError::Config("no records to bin".into()));
    }
    if n_bins == 0 || n_bins > records.len() {
        return Err(BndlError::Config(format!(
            "{n_bins} bins requested for {} records",
            records.len()
        )));
    }
    let mut sorted: Vec<&UncertaintyRecord> = records.iter().collect();
    sorted.sort_by(|a, b| {
        a.p_value
            .total_cmp(&b.p_value)
            .then(a.sample_id.cmp(&b.sample_id))
    });
    let base = records.len() / n_bins;
    let extra = records.len() % n_bins;
    let mut bins = Vec::with_capacity(n_bins);
    let mut start = 0;
    for bin in 0..n_bins {
        let count = base + usize::from(bin < extra);
        let chunk = &sorted[start..start + count];
        start += count;
        let mean_p = chunk.iter().map(|r| r.p_value).sum::<f64>() / count as f64;
        let accuracy = chunk.iter().filter(|r| r.correct).count() as f64 / count as f64;
        bins.push(Bin {
            bin,
            mean_p,
            accuracy,
            count,
        });
    }
    Ok(BinCurve { bins })
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|a, b| v[*a].total_cmp(&v[*b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties. `None` when either
/// input is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum::<f64>().sqrt();
    let sy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum::<f64>().sqrt();
    if sx == 0.0 || sy == 0.0 {
        None
    } else {
        Some(cov / (sx * sy))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: usize, p: f64, correct: bool, threshold: f64) -> UncertaintyRecord {
        UncertaintyRecord {
            sample_id: id,
            predicted: 0,
            true_class: if correct { 0 } else { 1 },
            p_value: p,
            certain: p < threshold,
            correct,
        }
    }

    #[test]
    fn identical_columns_give_p_one() {
        let m = Matrix::from_fn(6, 2, |i, _| i as f64 * 0.3 + 1.0);
        let (pred, p) = p_value_top2(&m).unwrap();
        assert_eq!(pred, 0);
        assert_eq!(p, 1.0);
    }

    #[test]
    fn constant_distinct_columns_give_eps() {
        let m = Matrix::from_fn(4, 2, |_, j| if j == 0 { 1.0 } else { 0.0 });
        assert_eq!(p_value_top2(&m).unwrap(), (0, EPS_P));
    }

    #[test]
    fn top2_preconditions() {
        assert!(p_value_top2(&Matrix::zeros(5, 1)).is_err());
        assert!(p_value_top2(&Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn pavpu_arithmetic() {
        let t = 0.05;
        let mut recs = Vec::new();
        for i in 0..8 {
            recs.push(rec(i, 0.001, true, t)); // accurate-certain
        }
        recs.push(rec(8, 0.5, false, t)); // inaccurate-uncertain
        recs.push(rec(9, 0.5, true, t)); // accurate-uncertain
        let r = pavpu_report(&recs, t, 20);
        assert_eq!((r.n_ac, r.n_au, r.n_ic, r.n_iu), (8, 1, 0, 1));
        assert!((r.pavpu - 0.9).abs() < 1e-15);
    }

    #[test]
    fn bins_partition_and_order() {
        let recs: Vec<_> = (0..23)
            .map(|i| rec(i, (23 - i) as f64 / 23.0, i % 3 != 0, 0.05))
            .collect();
        let curve = uncertainty_bins(&recs, 10).unwrap();
        assert_eq!(curve.bins.iter().map(|b| b.count).sum::<usize>(), 23);
        let counts: Vec<usize> = curve.bins.iter().map(|b| b.count).collect();
        assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
        assert!(curve.bins.windows(2).all(|w| w[0].mean_p <= w[1].mean_p));
        assert!(uncertainty_bins(&recs, 24).is_err());
        assert!(uncertainty_bins(&[], 1).is_err());
    }

    #[test]
    fn anticorrelated_records_give_decreasing_bins() {
        // low p -> correct, high p -> wrong, with a graded mix in between
        let n = 100;
        let recs: Vec<_> = (0..n)
            .map(|i| {
                let p = i as f64 / n as f64;
                let correct = (i % 10) as f64 >= (i / 10) as f64;
                rec(i, p, correct, 0.05)
            })
            .collect();
        let curve = uncertainty_bins(&recs, 10).unwrap();
        for w in curve.bins.windows(2) {
            assert!(w[0].accuracy > w[1].accuracy, "{curve:?}");
        }
    }

    #[test]
    fn spearman_basics() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0], &[1.0, 5.0, 9.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!(spearman(&[1.0, 1.0], &[0.0, 1.0]).is_none());
    }
}
