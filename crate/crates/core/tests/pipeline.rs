mod common;

use std::sync::OnceLock;

use rayon::prelude::*;

use bndl::cli_io::{load_dataset, read_csv_dataset, save_dataset, write_csv_dataset};
use bndl::metrics::{accuracy, PredictionMode};
use bndl::model::init_model;
use bndl::model::Dims;
use bndl::rng::run_stream;
use bndl::synthlab::{
    bndl_identifiability_run, fit_exact_nmf, gen_blobs, gen_prop1_instance, BlobsSpec,
    IdentifiabilityConfig, NmfConfig,
};
use bndl::training::{
    elbo_batch, load_checkpoint, random_grad_check, save_checkpoint, train, Checkpoint,
    GradCheckSpec, Noise, ObjectiveScale, TrainOutcome,
};

use common::{blobs_train_config, single_thread};

fn trained_blobs() -> &'static (bndl::data::Dataset, TrainOutcome) {
    static CELL: OnceLock<(bndl::data::Dataset, TrainOutcome)> = OnceLock::new();
    CELL.get_or_init(|| {
        let data = gen_blobs(&BlobsSpec::new(2000, 16, 4, 0.0, 0)).unwrap();
        let out = train(&data, &blobs_train_config(0)).unwrap();
        (data, out)
    })
}

#[test]
fn training_is_deterministic() {
    let data = gen_blobs(&BlobsSpec::new(300, 6, 3, 0.5, 4)).unwrap();
    let mut cfg = blobs_train_config(4);
    cfg.epochs = 15;
    cfg.batch_size = 64;
    let a = single_thread(|| train(&data, &cfg).unwrap());
    let b = single_thread(|| train(&data, &cfg).unwrap());
    assert_eq!(a.history, b.history);
    assert_eq!(a.params.values(), b.params.values());
    let c = train(&data, &cfg).unwrap();
    assert_eq!(a.history, c.history, "thread count changed the result");
}

#[test]
fn objective_rises_over_early_epochs() {
    // Sixteen steps per epoch; with four, single-draw noise exceeds per-epoch progress.
    let (data, _) = trained_blobs();
    for seed in 0..3 {
        let mut cfg = blobs_train_config(seed);
        cfg.epochs = 20;
        cfg.batch_size = 128;
        let out = train(data, &cfg).unwrap();
        let elbo: Vec<f64> = out.history.epochs.iter().map(|e| e.elbo).collect();
        let dips = elbo.windows(2).filter(|w| w[1] < w[0]).count();
        assert!(dips <= 2, "seed {seed}: {dips} dips: {elbo:?}");
    }
}

#[test]
fn expected_and_mc_predictions_agree() {
    let (data, out) = trained_blobs();
    let e = accuracy(&out.params, data, PredictionMode::Expected, 0).unwrap();
    let m = accuracy(&out.params, data, PredictionMode::MonteCarlo(200), 0).unwrap();
    assert!((e - m).abs() <= 0.01, "expected {e}, mc {m}");
}

#[test]
fn checkpoint_files_round_trip() {
    let (data, out) = trained_blobs();
    let dir = tempfile::tempdir().unwrap();
    let (p1, p2) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    let ck = Checkpoint {
        params: out.params.clone(),
        optimizer: Some(out.optimizer.clone()),
        config: blobs_train_config(0),
        rng_word_pos: out.rng_word_pos,
    };
    save_checkpoint(&p1, &ck).unwrap();
    let back = load_checkpoint(&p1).unwrap();
    save_checkpoint(&p2, &back).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    for i in 0..20 {
        let h = data.features.row(i);
        assert_eq!(
            out.params.expected_forward(h).unwrap(),
            back.params.expected_forward(h).unwrap()
        );
    }
    let bytes = std::fs::read(&p1).unwrap();
    std::fs::write(&p2, &bytes[..bytes.len() / 2]).unwrap();
    assert!(matches!(
        load_checkpoint(&p2),
        Err(bndl::BndlError::Format { .. })
    ));
}

#[test]
fn csv_and_binary_datasets_agree() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_blobs(&BlobsSpec::new(50, 5, 3, 1.0, 9)).unwrap();
    let (f, l, c) = (
        dir.path().join("f"),
        dir.path().join("l"),
        dir.path().join("d.csv"),
    );
    save_dataset(&data, &f, &l).unwrap();
    let bin = load_dataset(&f, &l).unwrap();
    write_csv_dataset(&c, &bin).unwrap();
    let csv = read_csv_dataset(&c, Some(3)).unwrap();
    assert_eq!(bin.features, csv.features);
    assert_eq!(bin.labels(), csv.labels());
    assert_eq!(bin.n_classes, csv.n_classes);
}

#[test]
fn global_kl_is_divided_by_dataset_size() {
    let data = gen_blobs(&BlobsSpec::new(32, 4, 3, 1.0, 1)).unwrap();
    let p = init_model(Dims::new(4, 5, 3).unwrap(), 0.0, 2).unwrap();
    let idx: Vec<usize> = (0..16).collect();
    let noise = Noise::draw(&mut run_stream(3, 0), 1, idx.len(), p.dims());
    let at = |n| {
        let s = ObjectiveScale {
            n_total: n,
            kl_scale_local: 1.0,
            row_weight: 1.0,
        };
        elbo_batch(&p, &data, &idx, &noise, s).unwrap()
    };
    let (a, b) = (at(100), at(200));
    let want = a.global_kl * (1.0 / 100.0 - 1.0 / 200.0);
    assert!((b.objective - a.objective - want).abs() < 1e-12);
}

#[test]
fn central_differences_converge_quadratically() {
    let err = |h| {
        let spec = GradCheckSpec {
            fd_step: h,
            ..Default::default()
        };
        random_grad_check(1, spec).unwrap()
    };
    let (coarse, fine) = (err(1e-2), err(1e-3));
    assert_eq!(
        coarse.skipped_kinks + coarse.checked,
        fine.skipped_kinks + fine.checked
    );
    let ratio = coarse.max_rel_error / fine.max_rel_error;
    assert!(ratio > 30.0, "error ratio {ratio}");
    assert!(err(1e-5).max_rel_error < fine.max_rel_error);
}

#[test]
fn exact_nmf_fits_planted_factorization() {
    let inst = gen_prop1_instance(50, 40, 5, 2, 3).unwrap();
    let fit = fit_exact_nmf(&inst.y, 5, &NmfConfig::default()).unwrap();
    assert!(fit.residual < 1e-3, "{}", fit.residual);
}

#[test]
fn collapse_mode_matches_exact_factorization() {
    // Same protocol as `fit_exact_nmf`: best of ten restarts by residual.
    for seed in 0..4u64 {
        let inst = gen_prop1_instance(50, 40, 5, 2, seed).unwrap();
        let best = (0..10u64)
            .into_par_iter()
            .map(|restart| {
                let mut cfg =
                    IdentifiabilityConfig::for_instance(&inst, 0.0, seed * 1000 + restart);
                cfg.collapse = true;
                bndl_identifiability_run(&inst, &cfg)
                    .unwrap()
                    .residual
                    .unwrap()
            })
            .reduce(|| f64::INFINITY, f64::min);
        assert!(best < 1e-2, "seed {seed}: best residual {best}");
    }
}
