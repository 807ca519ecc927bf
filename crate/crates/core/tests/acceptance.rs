//! End-to-end acceptance checks. Each test writes one `criterion N: PASS|FAIL`
//! line straight to stderr so the summary is visible even when output is
//! captured.

use std::f64::consts::TAU;
use std::io::Write;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use shapedm::baselines::{efd_coeffs, efd_normalize, region_props, RegionFeatures};
use shapedm::contour::{roll, BinaryMask, ContourSequence, Point};
use shapedm::dataset::{
    make_synthetic_shapes, random_transform, star_polygon, transform_points, transform_polygon, SimilarityTransform,
    SyntheticOptions, SyntheticShape,
};
use shapedm::distmat::{edm, mirror_both, normalize, reindex, DistanceMatrix, RawMatrix, Reindexing};
use shapedm::eval::{append_size, cross_validate, invariance_report, latent_table, FeatureTable, LogRegConfig};
use shapedm::loss::{rec_loss, LossWeights, RecMode};
use shapedm::mds::{procrustes_align, reconstruct_outline, MdsConfig};
use shapedm::nn::{Model, ModelConfig};
use shapedm::tensor::Padding;
use shapedm::train::{grad_check, train, GradCheckConfig, TrainConfig, Trainer};

fn report(id: u32, pass: bool, detail: String) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {id}: {verdict} ({detail})");
    assert!(pass, "criterion {id} failed: {detail}");
}

fn random_contour(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point> {
    (0..n)
        .map(|i| {
            let phi = TAU * (i as f64 + rng.random_range(-0.3..0.3)) / n as f64;
            let r = rng.random_range(0.5..1.5);
            [r * phi.cos(), r * phi.sin()]
        })
        .collect()
}

#[test]
fn c01_reindexing_matches_rolled_points() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut mismatches = 0;
    for c in 0..1000 {
        let n = [8, 16, 32][c % 3];
        let pts = random_contour(&mut rng, n);
        let d = edm(&pts);
        for r in Reindexing::enumerate(n) {
            let rolled = edm(roll(&pts, r.origin, r.direction.sign() as i8));
            if reindex(&d, r).unwrap().entries() != rolled.entries() {
                mismatches += 1;
            }
        }
    }
    let t = start.elapsed();
    report(
        1,
        mismatches == 0 && t < Duration::from_secs(10),
        format!("{mismatches} mismatches, {:.2}s", t.as_secs_f64()),
    );
}

#[test]
fn c02_similarity_invariance() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let pts = random_contour(&mut rng, 32);
        let base = normalize(&edm(&pts)).unwrap();
        for _ in 0..20 {
            let t = SimilarityTransform {
                theta: rng.random_range(0.0..TAU),
                tx: rng.random_range(-10.0..10.0),
                ty: rng.random_range(-10.0..10.0),
                scale: 10f64.powf(rng.random_range(-1.0..1.0)),
                reflect: false,
            };
            let moved = normalize(&edm(transform_points(&pts, &t).unwrap())).unwrap();
            for (a, b) in moved.entries().iter().zip(base.entries()) {
                if *b != 0.0 {
                    worst = worst.max((a - b).abs() / b.abs());
                } else {
                    worst = worst.max(a.abs());
                }
            }
        }
    }
    let t = start.elapsed();
    report(
        2,
        worst < 1e-9 && t < Duration::from_secs(10),
        format!("max relative deviation {worst:.2e}, {:.2}s", t.as_secs_f64()),
    );
}

#[test]
fn c03_loss_invariance() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 16;
    let mut unequal = 0;
    for _ in 0..100 {
        let d = normalize(&edm(random_contour(&mut rng, n))).unwrap();
        let pred = RawMatrix::new(n, (0..n * n).map(|_| rng.random_range(-0.05..0.2)).collect()).unwrap();
        let (base, _) = rec_loss(&pred, &d).unwrap();
        for r in Reindexing::enumerate(n) {
            let (v, _) = rec_loss(&pred, &reindex(&d, r).unwrap()).unwrap();
            if v.to_bits() != base.to_bits() {
                unequal += 1;
            }
        }
    }
    let t = start.elapsed();
    report(
        3,
        unequal == 0 && t < Duration::from_secs(30),
        format!("{unequal} unequal losses, {:.2}s", t.as_secs_f64()),
    );
}

#[test]
fn c04_reflection_invariance_is_bitwise() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut unequal = 0;
    for seed in 0..100 {
        let model = Model::<f32>::init(ModelConfig::new(16, 8, 2, 4, seed)).unwrap();
        let d = normalize(&edm(random_contour(&mut rng, 16))).unwrap();
        let a = model.encode(&d).unwrap();
        let b = model.encode(&mirror_both(&d)).unwrap();
        if a.mu != b.mu || a.logvar != b.logvar {
            unequal += 1;
        }
    }
    let t = start.elapsed();
    report(
        4,
        unequal == 0 && t < Duration::from_secs(60),
        format!("{unequal} differing encodings, {:.2}s", t.as_secs_f64()),
    );
}

#[test]
fn c05_gradient_check() {
    let start = Instant::now();
    let model = Model::<f64>::init(ModelConfig::new(16, 8, 2, 4, 11)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let batch: Vec<DistanceMatrix> = (0..2)
        .map(|_| normalize(&edm(random_contour(&mut rng, 16))).unwrap())
        .collect();
    let r = grad_check(&model, &batch, &GradCheckConfig::default()).unwrap();
    let t = start.elapsed();
    report(
        5,
        r.max_rel_error < 1e-4 && r.checked >= 200 && t < Duration::from_secs(300),
        format!(
            "max relative error {:.2e} over {} coordinates ({} kinks excluded), {:.1}s",
            r.max_rel_error,
            r.checked,
            r.kinks,
            t.as_secs_f64()
        ),
    );
}

#[test]
fn c06_mds_round_trip() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for i in 0..100 {
        let pts = random_contour(&mut rng, 64);
        let d = normalize(&edm(&pts)).unwrap();
        let raw = RawMatrix::new(64, d.entries().to_vec()).unwrap();
        let cfg = MdsConfig {
            seed: i,
            ..Default::default()
        };
        let rec = reconstruct_outline(&raw, d.frobenius_norm().unwrap(), &cfg).unwrap();
        let fit = procrustes_align(&rec.points, &pts).unwrap();
        let diam = ContourSequence::new(pts).unwrap().diameter();
        worst = worst.max(fit.rmse / diam);
    }
    let t = start.elapsed();
    report(
        6,
        worst < 1e-3 && t < Duration::from_secs(120),
        format!("worst RMSE/diameter {worst:.2e}, {:.1}s", t.as_secs_f64()),
    );
}

const DESK_N: usize = 32;
const DESK_PER_CLASS: usize = 200;
const DESK_EPOCHS: usize = 50;
const DATA_SEED: u64 = 2024;

fn desk_config(seed: u64) -> ModelConfig {
    ModelConfig::new(DESK_N, 32, 3, 4, seed)
}

/// Distance-matrix runs see every object under a fresh random reindexing
/// each epoch.
fn train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: DESK_EPOCHS,
        seed,
        augment_reindex: true,
        ..Default::default()
    }
}

struct DeskData {
    shapes: Vec<SyntheticShape>,
    matrices: Vec<DistanceMatrix>,
    labels: Vec<usize>,
    class_names: Vec<String>,
    ids: Vec<String>,
}

fn desk_data() -> &'static DeskData {
    static DATA: OnceLock<DeskData> = OnceLock::new();
    DATA.get_or_init(|| {
        let opts = SyntheticOptions {
            n_points: DESK_N,
            ..Default::default()
        };
        let (manifest, shapes) = make_synthetic_shapes(DESK_PER_CLASS, DATA_SEED, &opts).unwrap();
        let matrices = shapes
            .iter()
            .map(|s| normalize(&edm(s.contour.points())).unwrap())
            .collect();
        DeskData {
            matrices,
            labels: manifest.labels(),
            class_names: manifest.class_table().keys().cloned().collect(),
            ids: manifest.records().iter().map(|r| r.object_id.clone()).collect(),
            shapes,
        }
    })
}

fn cv_f1(table: &FeatureTable) -> f64 {
    cross_validate(table, 5, 1, &LogRegConfig::default()).unwrap().f1.mean
}

struct Run {
    model: Model<f32>,
    f1: f64,
    seconds: f64,
}

fn train_full(seed: u64) -> Run {
    let data = desk_data();
    let start = Instant::now();
    let (model, _) = train(Model::init(desk_config(seed)).unwrap(), &data.matrices, train_config(seed)).unwrap();
    let seconds = start.elapsed().as_secs_f64();
    let table = latent_table(
        &model,
        &data.matrices,
        data.ids.clone(),
        data.labels.clone(),
        data.class_names.clone(),
    )
    .unwrap();
    Run {
        f1: cv_f1(&table),
        model,
        seconds,
    }
}

/// Full model for seeds 0..3; seed 0 is the reference run.
fn full_runs() -> &'static Vec<Run> {
    static RUNS: OnceLock<Vec<Run>> = OnceLock::new();
    RUNS.get_or_init(|| (0..3).map(train_full).collect())
}

fn reference_run() -> &'static Run {
    &full_runs()[0]
}

#[test]
fn c07_desk_scale_end_to_end() {
    let run = reference_run();
    report(
        7,
        run.f1 >= 0.90 && run.seconds < 20.0 * 60.0,
        format!("5-fold macro-F1 {:.4}, training {:.0}s", run.f1, run.seconds),
    );
}

/// Zero padding, no reindexing search in the loss.
fn train_no_index_invariance(seed: u64) -> f64 {
    let data = desk_data();
    let mut cfg = desk_config(seed);
    cfg.padding = Padding::Zero;
    let mut tc = train_config(seed);
    tc.rec_mode = RecMode::Plain;
    let (model, _) = train(Model::init(cfg).unwrap(), &data.matrices, tc).unwrap();
    let table = latent_table(
        &model,
        &data.matrices,
        data.ids.clone(),
        data.labels.clone(),
        data.class_names.clone(),
    )
    .unwrap();
    cv_f1(&table)
}

/// Each polygon drawn into a 32 x 32 binary image over the window [-3, 3]^2.
fn mask_input(shape: &SyntheticShape) -> Vec<f32> {
    let side = DESK_N;
    let px = (side - 1) as f64 / 6.0;
    let poly: Vec<Point> = shape
        .polygon
        .vertices()
        .iter()
        .map(|p| [(p[0] + 3.0) * px, (p[1] + 3.0) * px])
        .collect();
    let mask = BinaryMask::rasterize(&poly, side, side).unwrap();
    mask.pixels().iter().map(|&b| f32::from(u8::from(b))).collect()
}

/// Plain convolutional VAE on binary masks with the same layer sizes.
fn train_mask_vae(seed: u64) -> f64 {
    let data = desk_data();
    let inputs: Vec<Vec<f32>> = data.shapes.iter().map(mask_input).collect();
    let mut cfg = desk_config(seed);
    cfg.padding = Padding::Zero;
    cfg.mirror_sum = false;
    let mut tc = train_config(seed);
    // reindexing has no meaning for an image input
    tc.augment_reindex = false;
    tc.rec_mode = RecMode::Plain;
    tc.weights = LossWeights {
        gamma: 0.0,
        delta: 0.0,
        epsilon: 0.0,
        ..Default::default()
    };
    let mut trainer = Trainer::new(Model::init(cfg).unwrap(), tc).unwrap();
    trainer.fit(&inputs, DESK_EPOCHS).unwrap();
    let model = trainer.into_model();
    let rows = inputs
        .iter()
        .map(|x| {
            let x: Vec<f64> = x.iter().map(|&v| f64::from(v)).collect();
            model.encode_raw(&x).unwrap().mu
        })
        .collect();
    let names = (0..model.config().latent_dim).map(|i| format!("z{i}")).collect();
    let table = FeatureTable::new(data.ids.clone(), data.labels.clone(), data.class_names.clone(), names, rows).unwrap();
    cv_f1(&table)
}

#[test]
fn c08_ablations_trail_full_model() {
    let full: Vec<f64> = full_runs().iter().map(|r| r.f1).collect();
    let plain: Vec<f64> = (0..3).map(train_no_index_invariance).collect();
    let masks: Vec<f64> = (0..3).map(train_mask_vae).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (f, a, b) = (mean(&full), mean(&plain), mean(&masks));
    report(
        8,
        f - a >= 0.05 && f - b >= 0.05,
        format!(
            "mean macro-F1 full {f:.4} {full:.3?}, zero padding + plain loss {a:.4} {plain:.3?}, mask VAE {b:.4} {masks:.3?}"
        ),
    );
}

#[test]
fn c09_size_column_separates_scale_classes() {
    let model = &reference_run().model;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let star = star_polygon();
    let mut mats = Vec::new();
    let mut labels = Vec::new();
    let mut norms = Vec::new();
    for (class, range) in [(0.5, 0.8), (1.2, 1.5)].into_iter().enumerate() {
        let opts = SyntheticOptions {
            n_points: DESK_N,
            scale_range: range,
            ..Default::default()
        };
        for _ in 0..100 {
            let t = random_transform(&mut rng, &opts);
            let poly = shapedm::contour::ensure_ccw(transform_polygon(&star, &t).unwrap()).unwrap();
            let origin = rng.random_range(0.0..poly.perimeter());
            let c = shapedm::contour::resample_uniform(&poly, DESK_N, origin).unwrap();
            let d = normalize(&edm(c.points())).unwrap();
            norms.push(d.frobenius_norm().unwrap());
            mats.push(d);
            labels.push(class);
        }
    }
    let ids = (0..mats.len()).map(|i| format!("s{i}")).collect();
    let table = latent_table(model, &mats, ids, labels, vec!["small".into(), "large".into()]).unwrap();
    let without = cv_f1(&table);
    let with = cv_f1(&append_size(&table, &norms).unwrap());
    report(
        9,
        with - without >= 0.2,
        format!("macro-F1 without size {without:.4}, with size {with:.4}"),
    );
}

#[test]
fn c10_baseline_sanity() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let pts = random_contour(&mut rng, 64);
        let base = efd_normalize(&efd_coeffs(&pts, 30).unwrap()).unwrap().flatten();
        assert_eq!(base.len(), 120);
        let t = SimilarityTransform {
            theta: rng.random_range(0.0..TAU),
            tx: rng.random_range(-5.0..5.0),
            ty: rng.random_range(-5.0..5.0),
            scale: rng.random_range(0.2..5.0),
            reflect: false,
        };
        let moved = roll(&transform_points(&pts, &t).unwrap(), rng.random_range(0..64), 1);
        let got = efd_normalize(&efd_coeffs(&moved, 30).unwrap()).unwrap().flatten();
        for (a, b) in got.iter().zip(&base) {
            worst = worst.max((a - b).abs());
        }
    }

    #[derive(serde::Deserialize)]
    struct Case {
        rows: Vec<String>,
        props: RegionFeatures,
    }
    #[derive(serde::Deserialize)]
    struct Fixture {
        masks: Vec<Case>,
    }
    let fixture: Fixture = serde_json::from_str(include_str!("fixtures/reference.json")).unwrap();
    let mut region_worst = 0.0f64;
    let mut near_zero = 0;
    let mut near_zero_ok = true;
    for case in &fixture.masks {
        let rows: Vec<&str> = case.rows.iter().map(String::as_str).collect();
        let got = region_props(&BinaryMask::from_rows(&rows).unwrap()).unwrap().to_vec();
        for (g, w) in got.iter().zip(case.props.to_vec()) {
            let err = (g - w).abs();
            if w.abs() > 1e-8 {
                region_worst = region_worst.max(err / w.abs());
            } else {
                // zero up to rounding in the reference (high-order Hu moments)
                near_zero += 1;
                near_zero_ok &= err < 1e-10;
            }
        }
    }
    report(
        10,
        worst < 1e-6 && region_worst < 1e-3 && near_zero_ok && fixture.masks.len() == 20,
        format!(
            "EFD max deviation {worst:.2e}; region features over {} masks: worst relative error {region_worst:.2e}, \
             {near_zero} near-zero values within 1e-10",
            fixture.masks.len()
        ),
    );
}

#[test]
fn c11_reindexing_drift_on_trained_model() {
    let model = &reference_run().model;
    let data = desk_data();
    // every tenth object, balanced across classes
    let contours: Vec<ContourSequence> = data.shapes.iter().step_by(10).map(|s| s.contour.clone()).collect();
    let all: Vec<Reindexing> = Reindexing::enumerate(DESK_N).collect();
    let r = invariance_report(model, &contours, &[], &all).unwrap();
    let drift = r.reindexing.unwrap();
    report(
        11,
        drift.median < 0.05,
        format!(
            "median relative drift {:.4} (max {:.4}) over {} variants; reflection max {:.1e}",
            drift.median, drift.max, drift.count, r.reflection.max
        ),
    );
}
