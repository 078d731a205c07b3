#![allow(dead_code, clippy::excessive_precision, clippy::needless_range_loop)]

use bndl::data::Dataset;
use bndl::synthlab::{gen_blobs, gen_blobs_with_centers, BlobsSpec};
use bndl::training::{OptimizerConfig, TrainConfig};
use statrs::function::gamma::ln_gamma;

// QUADPACK qk15 nodes and weights.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

fn kronrod15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    (k * h, g * h)
}

fn adaptive(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let (k, g) = kronrod15(f, a, b);
    if (k - g).abs() <= tol || depth >= 40 {
        return k;
    }
    let m = 0.5 * (a + b);
    adaptive(f, a, m, 0.5 * tol, depth + 1) + adaptive(f, m, b, 0.5 * tol, depth + 1)
}

/// Adaptive Gauss–Kronrod integral of `f` over `[a, b]`.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    adaptive(&f, a, b, tol, 0)
}

/// KL(Weibull(k, λ) ‖ Gamma(α, β)) by quadrature over u = ln x.
///
/// With t = (x/λ)^k the Weibull density in u is k·t·e^{−t}; the range covers
/// t ∈ [1e-30, 120], outside which the integrand is below double precision.
pub fn kl_quadrature(k: f64, lambda: f64, alpha: f64, beta: f64) -> f64 {
    let ln_l = lambda.ln();
    let lo = ln_l + (1e-30f64).ln() / k;
    let hi = ln_l + (120.0f64).ln() / k;
    let log_g_norm = alpha * beta.ln() - ln_gamma(alpha);
    let f = |u: f64| {
        let t = (k * (u - ln_l)).exp();
        let dens = k * t * (-t).exp();
        if dens == 0.0 {
            return 0.0;
        }
        let ln_w = k.ln() - ln_l + (k - 1.0) * (u - ln_l) - t;
        let ln_g = log_g_norm + (alpha - 1.0) * u - beta * u.exp();
        dens * (ln_w - ln_g)
    };
    integrate(f, lo, hi, 1e-12)
}

pub const KL_GRID_K: [f64; 5] = [0.3, 0.7, 1.0, 2.0, 5.0];
pub const KL_GRID_LAMBDA: [f64; 3] = [0.1, 1.0, 10.0];
pub const KL_GRID_ALPHA: [f64; 3] = [0.5, 1.0, 2.0];
pub const KL_GRID_BETA: [f64; 3] = [0.5, 1.0, 2.0];

pub fn kl_grid() -> Vec<(f64, f64, f64, f64)> {
    let mut out = Vec::new();
    for k in KL_GRID_K {
        for l in KL_GRID_LAMBDA {
            for a in KL_GRID_ALPHA {
                for b in KL_GRID_BETA {
                    out.push((k, l, a, b));
                }
            }
        }
    }
    out
}

/// Settings used for every blobs classification run in the test suites.
pub fn blobs_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        latent_dim: 16,
        epochs: 200,
        batch_size: 500,
        seed,
        kl_scale_local: 0.01,
        optimizer: OptimizerConfig {
            learning_rate: 0.01,
            ..Default::default()
        },
        ..Default::default()
    }
}

/// Training set plus a held-out set drawn from the same mixture.
pub fn blobs_pair(
    n: usize,
    dim: usize,
    classes: usize,
    overlap: f64,
    seed: u64,
) -> (Dataset, Dataset) {
    let train = gen_blobs_with_centers(&BlobsSpec::new(n, dim, classes, overlap, seed)).unwrap();
    let mut spec = BlobsSpec::new(n, dim, classes, overlap, seed + 1000);
    spec.centers = Some(train.centers.clone());
    (train.dataset, gen_blobs(&spec).unwrap())
}

pub fn single_thread<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(f)
}
