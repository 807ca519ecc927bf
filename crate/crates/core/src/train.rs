//! Mini-batch Adam training, checkpoint/resume and finite-difference gradient
//! verification.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distmat::{reindex_entries, Direction, DistanceMatrix, Reindexing};
use crate::error::{Error, Result};
use crate::loss::{LossBreakdown, LossWeights, RecMode, ReindexTable};
use crate::nn::{save_checkpoint, Model, OptimizerSnapshot};
use crate::tensor::Scalar;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

/// One bias-corrected Adam update in place. Parameters are untouched when the
/// gradient contains a non-finite value.
pub fn adam_step(params: &mut [f32], grads: &[f32], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::Shape("parameter, gradient and moment lengths differ".into()));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::TrainingDiverged(format!(
            "non-finite gradient at parameter {i} (step {})",
            state.step + 1
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    let (b1, b2) = (ADAM_BETA1 as f32, ADAM_BETA2 as f32);
    let (c1, c2, lr, eps) = (c1 as f32, c2 as f32, lr as f32, ADAM_EPS as f32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub weights: LossWeights,
    /// Single worker; results are identical either way because per-sample
    /// gradients are always reduced in index order.
    pub deterministic: bool,
    pub rec_mode: RecMode,
    /// Present each input under a fresh random reindexing every epoch.
    pub augment_reindex: bool,
    pub checkpoint_path: Option<PathBuf>,
    /// Also checkpoint every this many epochs (0 = only at the end).
    pub checkpoint_every: usize,
    pub log_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 50,
            batch_size: 32,
            seed: 0,
            weights: LossWeights::default(),
            deterministic: true,
            rec_mode: RecMode::Invariant,
            augment_reindex: false,
            checkpoint_path: None,
            checkpoint_every: 0,
            log_path: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        self.weights.check()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn totals(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss.total).collect()
    }

    /// Loss records without timings, for reproducibility comparisons.
    pub fn losses(&self) -> Vec<LossBreakdown> {
        self.epochs.iter().map(|e| e.loss).collect()
    }
}

/// Training session over a fixed set of `N x N` inputs.
pub struct Trainer {
    model: Model<f32>,
    adam: AdamState,
    epoch: usize,
    config: TrainConfig,
    table: ReindexTable,
}

impl Trainer {
    pub fn new(model: Model<f32>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = AdamState::new(model.param_count());
        let table = ReindexTable::new(model.config().matrix_size);
        Ok(Self {
            model,
            adam,
            epoch: 0,
            config,
            table,
        })
    }

    /// Continues from a checkpointed optimizer state.
    pub fn resume(model: Model<f32>, snapshot: OptimizerSnapshot, config: TrainConfig) -> Result<Self> {
        let mut t = Self::new(model, config)?;
        if snapshot.m.len() != t.model.param_count() || snapshot.v.len() != t.model.param_count() {
            return Err(Error::Checkpoint("optimizer state does not match the model".into()));
        }
        t.adam = AdamState {
            step: snapshot.step,
            m: snapshot.m,
            v: snapshot.v,
        };
        t.epoch = snapshot.epoch as usize;
        Ok(t)
    }

    pub fn model(&self) -> &Model<f32> {
        &self.model
    }

    pub fn into_model(self) -> Model<f32> {
        self.model
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    pub fn snapshot(&self) -> OptimizerSnapshot {
        OptimizerSnapshot {
            step: self.adam.step,
            epoch: self.epoch as u64,
            m: self.adam.m.clone(),
            v: self.adam.v.clone(),
        }
    }

    fn save(&self) -> Result<()> {
        if let Some(p) = &self.config.checkpoint_path {
            save_checkpoint(p, &self.model, Some(&self.snapshot()))?;
        }
        Ok(())
    }

    /// One pass over `inputs` in a seeded shuffled order.
    pub fn run_epoch(&mut self, inputs: &[Vec<f32>]) -> Result<EpochRecord> {
        if inputs.is_empty() {
            return Err(Error::NoData("no training inputs".into()));
        }
        let n = self.model.config().matrix_size;
        let n2 = n * n;
        if let Some(x) = inputs.iter().find(|x| x.len() != n2) {
            return Err(Error::Shape(format!("input has {} entries, expected {n2}", x.len())));
        }
        let start = Instant::now();
        let d = self.model.config().latent_dim;
        // Each epoch has its own stream so a resumed run draws the same numbers.
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(self.epoch as u64);
        let mut order: Vec<usize> = (0..inputs.len()).collect();
        order.shuffle(&mut rng);

        let mut parts = Vec::with_capacity(inputs.len());
        let bs = self.config.batch_size.min(inputs.len());
        for batch in order.chunks(bs) {
            let noise: Vec<Vec<f32>> = batch
                .iter()
                .map(|_| (0..d).map(|_| StandardNormal.sample(&mut rng)).collect())
                .collect();
            let augmented: Vec<Option<Vec<f32>>> = batch
                .iter()
                .map(|&i| {
                    self.config.augment_reindex.then(|| {
                        let direction = if rng.random_bool(0.5) { Direction::Forward } else { Direction::Reverse };
                        let r = Reindexing::new(rng.random_range(0..n), direction);
                        reindex_entries(&inputs[i], n, r)
                    })
                })
                .collect();
            let step = |((&i, eps), aug): ((&usize, &Vec<f32>), &Option<Vec<f32>>)| {
                self.model.sample_step(
                    aug.as_deref().unwrap_or(&inputs[i]),
                    eps,
                    &self.config.weights,
                    &self.table,
                    self.config.rec_mode,
                )
            };
            let steps: Vec<_> = if self.config.deterministic {
                batch.iter().zip(&noise).zip(&augmented).map(step).collect::<Result<_>>()?
            } else {
                batch.par_iter().zip(&noise).zip(&augmented).map(step).collect::<Result<_>>()?
            };
            let mut grads = vec![0f32; self.model.param_count()];
            for s in &steps {
                grads.iter_mut().zip(&s.grads).for_each(|(a, b)| *a += b);
                parts.push(s.breakdown);
            }
            let inv = 1.0 / steps.len() as f32;
            grads.iter_mut().for_each(|g| *g *= inv);
            adam_step(self.model.params_mut(), &grads, &mut self.adam, self.config.learning_rate)?;
        }
        self.epoch += 1;
        let loss = LossBreakdown::mean(&parts);
        if !loss.total.is_finite() {
            return Err(Error::TrainingDiverged(format!("loss is {} at epoch {}", loss.total, self.epoch)));
        }
        Ok(EpochRecord {
            epoch: self.epoch,
            loss,
            seconds: start.elapsed().as_secs_f64(),
        })
    }

    /// Runs `epochs` more epochs, logging and checkpointing per the config.
    pub fn fit(&mut self, inputs: &[Vec<f32>], epochs: usize) -> Result<TrainHistory> {
        let mut log = match &self.config.log_path {
            None => None,
            Some(p) => {
                let fresh = self.epoch == 0 || !p.exists();
                let mut f = OpenOptions::new()
                    .create(true)
                    .write(true)
                    .append(!fresh)
                    .truncate(fresh)
                    .open(p)?;
                if fresh {
                    writeln!(f, "{}", LossBreakdown::CSV_HEADER)?;
                }
                Some(f)
            }
        };
        let mut history = TrainHistory::default();
        for _ in 0..epochs {
            let rec = self.run_epoch(inputs)?;
            log::info!(
                "epoch {} total {:.6e} rec {:.6e} ({:.2}s)",
                rec.epoch,
                rec.loss.total,
                rec.loss.rec,
                rec.seconds
            );
            if let Some(f) = log.as_mut() {
                writeln!(f, "{}", rec.loss.csv_row(rec.epoch))?;
                f.flush()?;
            }
            history.epochs.push(rec);
            let every = self.config.checkpoint_every;
            if every > 0 && self.epoch % every == 0 {
                self.save()?;
            }
        }
        self.save()?;
        Ok(history)
    }
}

pub fn matrices_to_inputs(data: &[DistanceMatrix]) -> Vec<Vec<f32>> {
    data.iter().map(|d| d.to_f32()).collect()
}

/// Trains for `config.epochs` epochs on normalized distance matrices.
pub fn train(model: Model<f32>, data: &[DistanceMatrix], config: TrainConfig) -> Result<(Model<f32>, TrainHistory)> {
    let n = model.config().matrix_size;
    if let Some(d) = data.iter().find(|d| d.n() != n) {
        return Err(Error::Shape(format!("matrix side {} differs from model side {n}", d.n())));
    }
    let epochs = config.epochs;
    let mut t = Trainer::new(model, config)?;
    let h = t.fit(&matrices_to_inputs(data), epochs)?;
    Ok((t.into_model(), h))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckConfig {
    pub step: f64,
    pub coordinates: usize,
    pub seed: u64,
    pub weights: LossWeights,
    pub rec_mode: RecMode,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-4,
            coordinates: 200,
            seed: 0,
            weights: LossWeights::default(),
            rec_mode: RecMode::Invariant,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinates compared.
    pub checked: usize,
    /// Coordinates where both gradients are below `1e-10` in magnitude.
    pub skipped: usize,
    /// Coordinates whose difference stencil straddles a non-smooth point
    /// (rectifier kink, clamp, hinge or a change of selected reindexing).
    pub kinks: usize,
    /// Parameter index with the largest relative error.
    pub worst: Option<usize>,
}

struct Probe<'a> {
    inputs: &'a [Vec<f64>],
    noise: &'a [Vec<f64>],
    cfg: &'a GradCheckConfig,
    table: &'a ReindexTable,
}

impl Probe<'_> {
    fn objective(&self, model: &Model<f64>) -> Result<(f64, Vec<f64>)> {
        let mut total = 0.0;
        let mut grads = vec![0.0; model.param_count()];
        for (x, eps) in self.inputs.iter().zip(self.noise) {
            let s = model.sample_step(x, eps, &self.cfg.weights, self.table, self.cfg.rec_mode)?;
            total += s.breakdown.total;
            grads.iter_mut().zip(&s.grads).for_each(|(a, b)| *a += b);
        }
        let k = self.inputs.len() as f64;
        grads.iter_mut().for_each(|g| *g /= k);
        Ok((total / k, grads))
    }

    fn signature(&self, model: &Model<f64>) -> Result<Vec<u32>> {
        let mut sig = Vec::new();
        for (x, eps) in self.inputs.iter().zip(self.noise) {
            sig.extend(model.branch_signature(x, eps, &self.cfg.weights, self.table, self.cfg.rec_mode)?);
        }
        Ok(sig)
    }
}

/// Compares the analytic gradient of the batch-mean objective with central
/// differences in 64-bit arithmetic, on randomly drawn parameters until
/// `cfg.coordinates` comparisons on smooth stencils have been made.
pub fn grad_check<T: Scalar>(model: &Model<T>, batch: &[DistanceMatrix], cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    if batch.is_empty() {
        return Err(Error::NoData("empty gradient-check batch".into()));
    }
    let mut model = model.cast::<f64>();
    let table = ReindexTable::new(model.config().matrix_size);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = model.config().latent_dim;
    let noise: Vec<Vec<f64>> = batch
        .iter()
        .map(|_| (0..d).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    let inputs: Vec<Vec<f64>> = batch.iter().map(|m| m.entries().to_vec()).collect();
    let probe = Probe {
        inputs: &inputs,
        noise: &noise,
        cfg,
        table: &table,
    };
    let (_, analytic) = probe.objective(&model)?;
    let base = probe.signature(&model)?;

    let mut coords: Vec<usize> = (0..model.param_count()).collect();
    coords.shuffle(&mut rng);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
        kinks: 0,
        worst: None,
    };
    for c in coords {
        if report.checked >= cfg.coordinates {
            break;
        }
        let orig = model.params()[c];
        model.params_mut()[c] = orig + cfg.step;
        let (fp, _) = probe.objective(&model)?;
        let sp = probe.signature(&model)?;
        model.params_mut()[c] = orig - cfg.step;
        let (fm, _) = probe.objective(&model)?;
        let sm = probe.signature(&model)?;
        model.params_mut()[c] = orig;
        if sp != base || sm != base {
            report.kinks += 1;
            continue;
        }
        let numeric = (fp - fm) / (2.0 * cfg.step);
        let a = analytic[c];
        let scale = a.abs().max(numeric.abs());
        if scale < 1e-10 {
            report.skipped += 1;
            continue;
        }
        report.checked += 1;
        let rel = (a - numeric).abs() / scale;
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst = Some(c);
        }
    }
    Ok(report)
}
