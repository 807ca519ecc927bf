//! `shapedm`: file-based pipeline from binary masks to shape descriptors,
//! classification reports and reconstructed outlines.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use shapedm::baselines::{efd_coeffs, efd_feature_names, efd_normalize, region_props, REGION_FEATURE_NAMES};
use shapedm::contour::{
    ensure_ccw, extract_outline, read_outlines_csv, resample_uniform, write_outlines_csv, BinaryMask, ContourSequence,
    Point,
};
use shapedm::dataset::{
    load_mask, make_synthetic_shapes, save_mask, scan_dataset, Manifest, ManifestRecord, SimilarityTransform,
    SyntheticOptions,
};
use shapedm::distmat::{edm, normalize, DistanceMatrix, Reindexing, SedmFile, SedmRecord};
use shapedm::eval::{
    append_size, class_mean_decode, cross_validate, decode_outline, invariance_report, latent_table, sample_latent,
    FeatureTable, LogRegConfig, SIZE_COLUMN,
};
use shapedm::loss::{LossWeights, RecMode};
use shapedm::mds::{outlines_to_svg, MdsConfig};
use shapedm::nn::{load_checkpoint, Model, ModelConfig};
use shapedm::tensor::Padding;
use shapedm::train::{TrainConfig, Trainer};
use shapedm::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "shapedm", version, about = "Contour distance-matrix shape descriptors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Command {
    /// Masks under <root>/<class>/ -> manifest, contours and distance matrices.
    Preprocess(PreprocessArgs),
    /// Distance matrices -> model checkpoint and per-epoch loss log.
    Train(TrainArgs),
    /// Checkpoint + distance matrices -> latent feature CSV.
    Embed(EmbedArgs),
    /// Checkpoint + distance matrices or latents -> outlines (CSV and SVG).
    Reconstruct(ReconstructArgs),
    /// Classical descriptors as a feature CSV.
    #[command(subcommand)]
    Baseline(Baseline),
    /// Feature CSV -> cross-validated classification report.
    Evaluate(EvaluateArgs),
    /// Outlines decoded from prior samples.
    Sample(SampleArgs),
    /// Outlines decoded from per-class mean latents.
    Classmeans(ClassmeansArgs),
    /// Latent drift under similarity transforms, mirroring and reindexing.
    Invariance(InvarianceArgs),
    /// Synthetic three-class dataset (contours, matrices, optional masks).
    Synth(SynthArgs),
    /// Re-runs the command recorded in a run.json.
    Replay(ReplayArgs),
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct PreprocessArgs {
    /// Dataset root with one subdirectory per class.
    #[arg(long)]
    root: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Points per outline (power of two).
    #[arg(long, default_value_t = 64)]
    n: usize,
    /// Marching-squares iso level.
    #[arg(long, default_value_t = 0.5)]
    level: f64,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum PaddingArg {
    Circular,
    Zero,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct TrainArgs {
    /// Distance-matrix container from `preprocess` or `synth`.
    #[arg(long)]
    sedm: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 128)]
    latent_dim: usize,
    /// Encoder/decoder resolution steps.
    #[arg(long, default_value_t = 3)]
    blocks: usize,
    /// Channels after the first convolution.
    #[arg(long, default_value_t = 8)]
    channels: usize,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// KL weight.
    #[arg(long, default_value_t = 1e-10)]
    beta: f64,
    /// Zero-diagonal penalty weight.
    #[arg(long, default_value_t = 1e-5)]
    gamma: f64,
    /// Non-negativity penalty weight.
    #[arg(long, default_value_t = 1e-5)]
    delta: f64,
    /// Symmetry penalty weight.
    #[arg(long, default_value_t = 1e-5)]
    epsilon: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = PaddingArg::Circular)]
    padding: PaddingArg,
    /// Disable summing encoder features of the input and its mirrored copy.
    #[arg(long)]
    no_mirror_sum: bool,
    /// Plain MSE instead of the minimum over reindexings.
    #[arg(long)]
    plain_loss: bool,
    /// Feed every matrix under a fresh random reindexing each epoch.
    #[arg(long)]
    #[serde(default)]
    augment_reindex: bool,
    /// Single-threaded training (results are identical either way).
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    deterministic: bool,
    /// Checkpoint every this many epochs (0 = only at the end).
    #[arg(long, default_value_t = 0)]
    checkpoint_every: usize,
    /// Continue from this checkpoint (optimizer state included).
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct EmbedArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    sedm: PathBuf,
    /// Manifest providing class labels.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Append each object's pre-normalization size as a feature.
    #[arg(long)]
    append_size: bool,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct ReconstructArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Reconstruct these matrices through the model, at their stored size.
    #[arg(long, conflicts_with = "latents", required_unless_present = "latents")]
    sedm: Option<PathBuf>,
    /// Decode these latent vectors (unit size unless a size column is present).
    #[arg(long)]
    latents: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand, Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Baseline {
    /// Normalized elliptic Fourier descriptors of each outline.
    Efd(EfdArgs),
    /// Region-property features of each mask.
    Regionprops(RegionArgs),
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct EfdArgs {
    /// Outline CSV from `preprocess` or `synth`.
    #[arg(long)]
    contours: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 30)]
    order: usize,
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct RegionArgs {
    /// Manifest whose source paths point at the masks.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct EvaluateArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Weight of the L2 penalty on classifier weights.
    #[arg(long, default_value_t = 1.0)]
    l2: f64,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct SampleArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 16)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct ClassmeansArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Latent CSV from `embed`.
    #[arg(long)]
    latents: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct InvarianceArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Outline CSV; each outline must have the model's point count.
    #[arg(long)]
    contours: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Random rotation/translation/scale draws per object.
    #[arg(long, default_value_t = 5)]
    transforms: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    per_class: usize,
    #[arg(long, default_value_t = 64)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Canonical pose only: no scaling, rotation, translation or reindexing.
    #[arg(long)]
    canonical: bool,
    /// Also write each shape as a PNG mask of this side length.
    #[arg(long)]
    masks: Option<usize>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct ReplayArgs {
    /// A run.json written by an earlier invocation.
    #[arg(long)]
    run: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct RunRecord {
    tool: String,
    version: String,
    command: Command,
}

fn write_run_json(out: &Path, command: &Command) -> Result<()> {
    let rec = RunRecord {
        tool: "shapedm".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.clone(),
    };
    fs::write(out.join("run.json"), serde_json::to_string_pretty(&rec)?)?;
    Ok(())
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn model_mds(seed: u64) -> MdsConfig {
    MdsConfig {
        seed,
        ..Default::default()
    }
}

fn load_model(path: &Path) -> Result<Model<f32>> {
    Ok(load_checkpoint(path)?.0)
}

fn load_matrices(path: &Path) -> Result<(Vec<String>, Vec<DistanceMatrix>)> {
    let file = SedmFile::load(path)?;
    let mats = file
        .records
        .iter()
        .map(|r| r.to_matrix(file.n))
        .collect::<Result<Vec<_>>>()?;
    Ok((file.records.into_iter().map(|r| r.object_id).collect(), mats))
}

/// Class index of each id, plus the class names, from a manifest.
fn labels_for(manifest: &Manifest, ids: &[String]) -> Result<(Vec<usize>, Vec<String>)> {
    let by_id: HashMap<&str, &str> = manifest
        .records()
        .iter()
        .map(|r| (r.object_id.as_str(), r.label.as_str()))
        .collect();
    let labels = ids
        .iter()
        .map(|id| {
            let l = by_id
                .get(id.as_str())
                .ok_or_else(|| Error::Label(format!("object {id} is not in the manifest")))?;
            manifest.class_index(l)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((labels, manifest.class_table().keys().cloned().collect()))
}

fn mask_to_contour(mask: &BinaryMask, n: usize, level: f64) -> Result<ContourSequence> {
    let outline = ensure_ccw(extract_outline(mask, level)?)?;
    resample_uniform(&outline, n, 0.0)
}

fn write_matrices(out: &Path, ids: &[String], contours: &[ContourSequence]) -> Result<()> {
    let n = contours[0].len();
    let records = ids
        .iter()
        .zip(contours)
        .map(|(id, c)| SedmRecord::from_normalized(id, &normalize(&edm(c.points()))?))
        .collect::<Result<Vec<_>>>()?;
    SedmFile { n, records }.save(out.join("sedm.bin"))?;
    let outlines: Vec<(String, Vec<Point>)> = ids
        .iter()
        .cloned()
        .zip(contours.iter().map(|c| c.points().to_vec()))
        .collect();
    write_outlines_csv(out.join("contours.csv"), &outlines)
}

fn write_outlines(out: &Path, outlines: &[(String, Vec<Point>)]) -> Result<()> {
    write_outlines_csv(out.join("outlines.csv"), outlines)?;
    let pts: Vec<Vec<Point>> = outlines.iter().map(|(_, p)| p.clone()).collect();
    fs::write(out.join("outlines.svg"), outlines_to_svg(&pts))?;
    Ok(())
}

fn preprocess(a: &PreprocessArgs) -> Result<()> {
    let manifest = scan_dataset(&a.root)?;
    let contours = pool(a.workers)?.install(|| {
        manifest
            .records()
            .par_iter()
            .map(|r| {
                let mask = load_mask(&r.source_path)?;
                mask_to_contour(&mask, a.n, a.level)
                    .map_err(|e| Error::Contour(format!("{}: {e}", r.object_id)))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    manifest.write_csv(a.out.join("manifest.csv"))?;
    let ids: Vec<String> = manifest.records().iter().map(|r| r.object_id.clone()).collect();
    write_matrices(&a.out, &ids, &contours)?;
    log::info!("preprocessed {} objects at N={}", ids.len(), a.n);
    Ok(())
}

fn train(a: &TrainArgs) -> Result<()> {
    let (_, mats) = load_matrices(&a.sedm)?;
    if mats.is_empty() {
        return Err(Error::NoData(format!("{} holds no matrices", a.sedm.display())));
    }
    let ckpt = a.out.join("model.ckpt");
    let config = TrainConfig {
        learning_rate: a.lr,
        epochs: a.epochs,
        batch_size: a.batch_size,
        seed: a.seed,
        weights: LossWeights {
            beta: a.beta,
            gamma: a.gamma,
            delta: a.delta,
            epsilon: a.epsilon,
        },
        deterministic: a.deterministic,
        rec_mode: if a.plain_loss { RecMode::Plain } else { RecMode::Invariant },
        augment_reindex: a.augment_reindex,
        checkpoint_path: Some(ckpt),
        checkpoint_every: a.checkpoint_every,
        log_path: Some(a.out.join("train_log.csv")),
    };
    config.validate()?;
    let mut trainer = match &a.resume {
        Some(path) => {
            let (model, snap) = load_checkpoint(path)?;
            let snap = snap.ok_or_else(|| Error::Checkpoint(format!("{} has no optimizer state", path.display())))?;
            Trainer::resume(model, snap, config)?
        }
        None => {
            let mut mc = ModelConfig::new(mats[0].n(), a.latent_dim, a.blocks, a.channels, a.seed);
            mc.padding = match a.padding {
                PaddingArg::Circular => Padding::Circular,
                PaddingArg::Zero => Padding::Zero,
            };
            mc.mirror_sum = !a.no_mirror_sum;
            mc.validate()?;
            Trainer::new(Model::init(mc)?, config)?
        }
    };
    if trainer.model().config().matrix_size != mats[0].n() {
        return Err(Error::Shape("matrix size differs from the model".into()));
    }
    let inputs: Vec<Vec<f32>> = mats.iter().map(DistanceMatrix::to_f32).collect();
    let remaining = a.epochs.saturating_sub(trainer.epochs_done());
    let history = trainer.fit(&inputs, remaining)?;
    if let Some(last) = history.epochs.last() {
        log::info!("finished epoch {} with total loss {:.6e}", last.epoch, last.loss.total);
    }
    Ok(())
}

fn embed(a: &EmbedArgs) -> Result<()> {
    let model = load_model(&a.checkpoint)?;
    let (ids, mats) = load_matrices(&a.sedm)?;
    let manifest = Manifest::read_csv(&a.manifest)?;
    let (labels, classes) = labels_for(&manifest, &ids)?;
    let mut table = latent_table(&model, &mats, ids, labels, classes)?;
    if a.append_size {
        let norms: Vec<f64> = mats.iter().map(|d| d.frobenius_norm().unwrap_or(1.0)).collect();
        table = append_size(&table, &norms)?;
    }
    table.write_csv(a.out.join("latents.csv"))
}

fn reconstruct(a: &ReconstructArgs) -> Result<()> {
    let model = load_model(&a.checkpoint)?;
    let mds = model_mds(a.seed);
    let d = model.config().latent_dim;
    let jobs: Vec<(String, Vec<f64>, f64)> = match (&a.sedm, &a.latents) {
        (Some(path), _) => {
            let (ids, mats) = load_matrices(path)?;
            ids.into_iter()
                .zip(&mats)
                .map(|(id, m)| Ok((id, model.encode(m)?.mu, m.frobenius_norm().unwrap_or(1.0))))
                .collect::<Result<_>>()?
        }
        (None, Some(path)) => {
            let t = FeatureTable::read_csv(path)?;
            if t.dim() < d {
                return Err(Error::Shape(format!("{} has {} columns, model needs {d}", path.display(), t.dim())));
            }
            t.object_ids
                .iter()
                .zip(&t.rows)
                .map(|(id, r)| {
                    let size = if t.size_column { r[t.dim() - 1] } else { 1.0 };
                    (id.clone(), r[..d].to_vec(), size)
                })
                .collect()
        }
        (None, None) => return Err(Error::Config("one of --sedm or --latents is required".into())),
    };
    let outlines = jobs
        .iter()
        .map(|(id, z, norm)| Ok((id.clone(), decode_outline(&model, z, *norm, &mds)?)))
        .collect::<Result<Vec<_>>>()?;
    write_outlines(&a.out, &outlines)
}

fn baseline_efd(a: &EfdArgs) -> Result<()> {
    let outlines = read_outlines_csv(&a.contours)?;
    let manifest = Manifest::read_csv(&a.manifest)?;
    let ids: Vec<String> = outlines.iter().map(|(id, _)| id.clone()).collect();
    let (labels, classes) = labels_for(&manifest, &ids)?;
    let rows = pool(a.workers)?.install(|| {
        outlines
            .par_iter()
            .map(|(_, pts)| Ok(efd_normalize(&efd_coeffs(pts, a.order)?)?.flatten()))
            .collect::<Result<Vec<_>>>()
    })?;
    FeatureTable::new(ids, labels, classes, efd_feature_names(a.order), rows)?.write_csv(a.out.join("efd.csv"))
}

fn baseline_regionprops(a: &RegionArgs) -> Result<()> {
    let manifest = Manifest::read_csv(&a.manifest)?;
    let rows = pool(a.workers)?.install(|| {
        manifest
            .records()
            .par_iter()
            .map(|r| Ok(region_props(&load_mask(&r.source_path)?)?.to_vec()))
            .collect::<Result<Vec<_>>>()
    })?;
    let ids: Vec<String> = manifest.records().iter().map(|r| r.object_id.clone()).collect();
    let names = REGION_FEATURE_NAMES.iter().map(|s| s.to_string()).collect();
    FeatureTable::new(ids, manifest.labels(), manifest.class_table().keys().cloned().collect(), names, rows)?
        .write_csv(a.out.join("regionprops.csv"))
}

fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let table = FeatureTable::read_csv(&a.features)?;
    let cfg = LogRegConfig {
        l2: a.l2,
        ..Default::default()
    };
    let report = cross_validate(&table, a.folds, a.seed, &cfg)?;
    let json = report.to_json()?;
    fs::write(a.out.join("report.json"), &json)?;
    report.write_csv(a.out.join("report.csv"))?;
    println!("{json}");
    Ok(())
}

fn sample(a: &SampleArgs) -> Result<()> {
    let model = load_model(&a.checkpoint)?;
    let outlines = sample_latent(&model, a.count, a.seed, &model_mds(a.seed))?;
    let named: Vec<(String, Vec<Point>)> = outlines
        .into_iter()
        .enumerate()
        .map(|(i, p)| (format!("sample_{i:04}"), p))
        .collect();
    write_outlines(&a.out, &named)
}

fn classmeans(a: &ClassmeansArgs) -> Result<()> {
    let model = load_model(&a.checkpoint)?;
    let mut table = FeatureTable::read_csv(&a.latents)?;
    if table.size_column {
        table.feature_names.retain(|n| n != SIZE_COLUMN);
        table.rows.iter_mut().for_each(|r| {
            r.pop();
        });
    }
    let outlines = class_mean_decode(&table, &model, &model_mds(a.seed))?;
    write_outlines(&a.out, &outlines)
}

fn invariance(a: &InvarianceArgs) -> Result<()> {
    let model = load_model(&a.checkpoint)?;
    let n = model.config().matrix_size;
    let contours = read_outlines_csv(&a.contours)?
        .into_iter()
        .map(|(id, p)| {
            if p.len() != n {
                return Err(Error::Shape(format!("outline {id} has {} points, model needs {n}", p.len())));
            }
            ContourSequence::new(p)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let transforms: Vec<SimilarityTransform> = (0..a.transforms)
        .map(|_| SimilarityTransform {
            theta: rng.random_range(0.0..std::f64::consts::TAU),
            tx: rng.random_range(-1.0..1.0),
            ty: rng.random_range(-1.0..1.0),
            scale: rng.random_range(0.5..2.0),
            reflect: false,
        })
        .collect();
    let all: Vec<Reindexing> = Reindexing::enumerate(n).collect();
    let report = invariance_report(&model, &contours, &transforms, &all)?;
    let json = serde_json::to_string_pretty(&report)?;
    fs::write(a.out.join("invariance.json"), &json)?;
    println!("{json}");
    Ok(())
}

fn synth(a: &SynthArgs) -> Result<()> {
    let opts = if a.canonical {
        SyntheticOptions::canonical(a.n)
    } else {
        SyntheticOptions {
            n_points: a.n,
            ..Default::default()
        }
    };
    let (mut manifest, shapes) = make_synthetic_shapes(a.per_class, a.seed, &opts)?;
    if let Some(side) = a.masks {
        if side < 8 {
            return Err(Error::Config("mask side must be at least 8".into()));
        }
        // Fixed window [-3, 3]^2 covers every generated pose.
        let px = (side - 1) as f64 / 6.0;
        let mut records = Vec::with_capacity(shapes.len());
        for (rec, s) in manifest.records().iter().zip(&shapes) {
            let poly: Vec<Point> = s
                .polygon
                .vertices()
                .iter()
                .map(|p| [(p[0] + 3.0) * px, (p[1] + 3.0) * px])
                .collect();
            let dir = a.out.join("masks").join(&rec.label);
            fs::create_dir_all(&dir)?;
            let stem = rec.object_id.replace('/', "_");
            let path = dir.join(format!("{stem}.png"));
            save_mask(&BinaryMask::rasterize(&poly, side, side)?, &path)?;
            records.push(ManifestRecord {
                source_path: path.to_string_lossy().into_owned(),
                ..rec.clone()
            });
        }
        manifest = Manifest::new(records)?;
    }
    manifest.write_csv(a.out.join("manifest.csv"))?;
    let ids: Vec<String> = manifest.records().iter().map(|r| r.object_id.clone()).collect();
    let contours: Vec<ContourSequence> = shapes.into_iter().map(|s| s.contour).collect();
    write_matrices(&a.out, &ids, &contours)
}

fn out_dir(command: &Command) -> Option<&Path> {
    Some(match command {
        Command::Preprocess(a) => &a.out,
        Command::Train(a) => &a.out,
        Command::Embed(a) => &a.out,
        Command::Reconstruct(a) => &a.out,
        Command::Baseline(Baseline::Efd(a)) => &a.out,
        Command::Baseline(Baseline::Regionprops(a)) => &a.out,
        Command::Evaluate(a) => &a.out,
        Command::Sample(a) => &a.out,
        Command::Classmeans(a) => &a.out,
        Command::Invariance(a) => &a.out,
        Command::Synth(a) => &a.out,
        Command::Replay(_) => return None,
    })
}

fn run(command: Command) -> Result<()> {
    if let Command::Replay(a) = &command {
        let rec: RunRecord = serde_json::from_str(&fs::read_to_string(&a.run)?)?;
        if rec.version != env!("CARGO_PKG_VERSION") {
            log::warn!("run.json was written by version {}", rec.version);
        }
        return run(rec.command);
    }
    let out = out_dir(&command).expect("non-replay commands have an output directory");
    fs::create_dir_all(out)?;
    write_run_json(out, &command)?;
    match &command {
        Command::Preprocess(a) => preprocess(a),
        Command::Train(a) => train(a),
        Command::Embed(a) => embed(a),
        Command::Reconstruct(a) => reconstruct(a),
        Command::Baseline(Baseline::Efd(a)) => baseline_efd(a),
        Command::Baseline(Baseline::Regionprops(a)) => baseline_regionprops(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Sample(a) => sample(a),
        Command::Classmeans(a) => classmeans(a),
        Command::Invariance(a) => invariance(a),
        Command::Synth(a) => synth(a),
        Command::Replay(_) => unreachable!(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.kind());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
