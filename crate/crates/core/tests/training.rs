use shapedm::dataset::{make_synthetic_shapes, SyntheticOptions};
use shapedm::distmat::{edm, normalize, DistanceMatrix};
use shapedm::loss::{LossWeights, RecMode};
use shapedm::nn::{load_checkpoint, Model, ModelConfig};
use shapedm::train::{grad_check, train, GradCheckConfig, TrainConfig, Trainer};

fn matrices(n_per_class: usize, n: usize, seed: u64) -> Vec<DistanceMatrix> {
    let opts = SyntheticOptions {
        n_points: n,
        ..Default::default()
    };
    let (_, shapes) = make_synthetic_shapes(n_per_class, seed, &opts).unwrap();
    shapes
        .iter()
        .map(|s| normalize(&edm(s.contour.points())).unwrap())
        .collect()
}

fn tiny_config(seed: u64) -> ModelConfig {
    ModelConfig::new(16, 8, 2, 4, seed)
}

#[test]
fn gradient_check_default_weights() {
    let model = Model::<f64>::init(tiny_config(3)).unwrap();
    let batch = matrices(1, 16, 5);
    let r = grad_check(&model, &batch, &GradCheckConfig::default()).unwrap();
    assert!(r.checked >= 200);
    assert!(r.max_rel_error < 1e-4, "{r:?}");
}

#[test]
fn gradient_check_heavy_regularizers() {
    let model = Model::<f64>::init(tiny_config(4)).unwrap();
    let batch = matrices(1, 16, 6);
    let cfg = GradCheckConfig {
        weights: LossWeights {
            beta: 0.1,
            gamma: 0.5,
            delta: 0.5,
            epsilon: 0.5,
        },
        seed: 9,
        ..Default::default()
    };
    let r = grad_check(&model, &batch, &cfg).unwrap();
    assert!(r.max_rel_error < 1e-4, "{r:?}");
}

#[test]
fn gradient_check_zero_padding_plain_loss() {
    let mut cfg = tiny_config(5);
    cfg.padding = shapedm::tensor::Padding::Zero;
    cfg.mirror_sum = false;
    let model = Model::<f64>::init(cfg).unwrap();
    let batch = matrices(1, 16, 7);
    let gc = GradCheckConfig {
        rec_mode: RecMode::Plain,
        ..Default::default()
    };
    let r = grad_check(&model, &batch, &gc).unwrap();
    assert!(r.max_rel_error < 1e-4, "{r:?}");
}

#[test]
fn gradient_check_is_reproducible() {
    let model = Model::<f64>::init(tiny_config(3)).unwrap();
    let batch = matrices(1, 16, 5);
    let cfg = GradCheckConfig {
        coordinates: 20,
        ..Default::default()
    };
    assert_eq!(
        grad_check(&model, &batch, &cfg).unwrap(),
        grad_check(&model, &batch, &cfg).unwrap()
    );
}

fn short_config(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 3,
        batch_size: 8,
        seed,
        ..Default::default()
    }
}

#[test]
fn deterministic_training_repeats_exactly() {
    let data = matrices(6, 16, 1);
    let (a, ha) = train(Model::init(tiny_config(1)).unwrap(), &data, short_config(2)).unwrap();
    let (b, hb) = train(Model::init(tiny_config(1)).unwrap(), &data, short_config(2)).unwrap();
    assert_eq!(a.params(), b.params());
    assert_eq!(ha.losses(), hb.losses());
    let mut par = short_config(2);
    par.deterministic = false;
    let (c, _) = train(Model::init(tiny_config(1)).unwrap(), &data, par).unwrap();
    assert_eq!(a.params(), c.params());
}

#[test]
fn oversized_batch_is_a_single_batch() {
    let data = matrices(2, 16, 1);
    let mut cfg = short_config(0);
    cfg.batch_size = 1000;
    cfg.epochs = 1;
    let (_, h) = train(Model::init(tiny_config(1)).unwrap(), &data, cfg).unwrap();
    assert_eq!(h.epochs.len(), 1);
}

#[test]
fn resume_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let data: Vec<Vec<f32>> = matrices(4, 16, 3).iter().map(|d| d.to_f32()).collect();
    let ck = dir.path().join("model.ckpt");

    let mut full = Trainer::new(Model::init(tiny_config(8)).unwrap(), short_config(4)).unwrap();
    full.fit(&data, 5).unwrap();

    let mut cfg = short_config(4);
    cfg.checkpoint_path = Some(ck.clone());
    let mut first = Trainer::new(Model::init(tiny_config(8)).unwrap(), cfg.clone()).unwrap();
    first.fit(&data, 2).unwrap();
    let (model, snap) = load_checkpoint(&ck).unwrap();
    let mut second = Trainer::resume(model, snap.unwrap(), cfg).unwrap();
    assert_eq!(second.epochs_done(), 2);
    second.fit(&data, 3).unwrap();
    assert_eq!(second.model().params(), full.model().params());
}

#[test]
fn log_csv_has_header_and_one_row_per_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("log.csv");
    let mut cfg = short_config(0);
    cfg.log_path = Some(log.clone());
    let data = matrices(2, 16, 1);
    train(Model::init(tiny_config(1)).unwrap(), &data, cfg).unwrap();
    let text = std::fs::read_to_string(&log).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "epoch,rec,kl,diag,nonneg,sym,total");
    assert_eq!(lines.len(), 4);
    assert!(lines[3].starts_with("3,"));
}

#[test]
fn outputs_vary_across_inputs_after_one_step() {
    let data = matrices(4, 16, 2);
    let mut cfg = short_config(0);
    cfg.epochs = 1;
    let (model, _) = train(Model::init(tiny_config(2)).unwrap(), &data, cfg).unwrap();
    let outs: Vec<Vec<f64>> = data
        .iter()
        .map(|d| {
            let z = model.encode(d).unwrap().mu;
            model.decode(&z).unwrap().entries().to_vec()
        })
        .collect();
    let var: f64 = (0..outs[0].len())
        .map(|k| {
            let m = outs.iter().map(|o| o[k]).sum::<f64>() / outs.len() as f64;
            outs.iter().map(|o| (o[k] - m).powi(2)).sum::<f64>()
        })
        .sum();
    assert!(var > 0.0);
}

#[test]
fn reindex_augmentation_is_seeded() {
    let data = matrices(3, 16, 4);
    let mut cfg = short_config(5);
    cfg.augment_reindex = true;
    let (a, _) = train(Model::init(tiny_config(2)).unwrap(), &data, cfg.clone()).unwrap();
    let (b, _) = train(Model::init(tiny_config(2)).unwrap(), &data, cfg).unwrap();
    let (c, _) = train(Model::init(tiny_config(2)).unwrap(), &data, short_config(5)).unwrap();
    assert_eq!(a.params(), b.params());
    assert_ne!(a.params(), c.params());
}
