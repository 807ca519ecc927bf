//! Downstream evaluation: multinomial logistic regression with stratified
//! cross-validation, classification metrics, and latent-space probes.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::contour::{ContourSequence, Point};
use crate::dataset::{transform_contour, SimilarityTransform};
use crate::distmat::{edm, mirror_both, normalize, reindex, DistanceMatrix, Reindexing};
use crate::error::{Error, Result};
use crate::mds::{reconstruct_outline, MdsConfig};
use crate::nn::Model;
use crate::tensor::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTable {
    pub object_ids: Vec<String>,
    /// Class index per row, into `class_names`.
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
    pub feature_names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    /// Set once a size column has been appended.
    pub size_column: bool,
}

impl FeatureTable {
    pub fn new(
        object_ids: Vec<String>,
        labels: Vec<usize>,
        class_names: Vec<String>,
        feature_names: Vec<String>,
        rows: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let t = Self {
            object_ids,
            labels,
            class_names,
            feature_names,
            rows,
            size_column: false,
        };
        t.check()?;
        Ok(t)
    }

    fn check(&self) -> Result<()> {
        let n = self.rows.len();
        if n == 0 {
            return Err(Error::NoData("feature table has no rows".into()));
        }
        if self.labels.len() != n || self.object_ids.len() != n {
            return Err(Error::Shape("ids, labels and rows differ in length".into()));
        }
        let d = self.feature_names.len();
        if let Some(r) = self.rows.iter().find(|r| r.len() != d) {
            return Err(Error::Shape(format!("row has {} features, expected {d}", r.len())));
        }
        if self.rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Format("feature table contains non-finite values".into()));
        }
        if let Some(&l) = self.labels.iter().find(|&&l| l >= self.class_names.len()) {
            return Err(Error::Label(format!("label index {l} outside the class set")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    fn subset(&self, idx: &[usize]) -> FeatureTable {
        FeatureTable {
            object_ids: idx.iter().map(|&i| self.object_ids[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
            feature_names: self.feature_names.clone(),
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            size_column: self.size_column,
        }
    }

    /// CSV with header `object_id,label,<feature names...>`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["object_id".to_string(), "label".to_string()];
        header.extend(self.feature_names.iter().cloned());
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec = vec![self.object_ids[i].clone(), self.class_names[self.labels[i]].clone()];
            rec.extend(self.rows[i].iter().map(|v| format!("{v:e}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a feature CSV; classes are indexed in lexicographic order. A
    /// trailing column named `size` sets the size flag.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = csv::Reader::from_path(path)?;
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header.len() < 3 || header[0] != "object_id" || header[1] != "label" {
            return Err(Error::Format(format!(
                "{}: expected header object_id,label,<features...>",
                path.display()
            )));
        }
        let mut ids = Vec::new();
        let mut names = Vec::new();
        let mut rows = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            ids.push(rec[0].to_string());
            names.push(rec[1].to_string());
            let row = rec
                .iter()
                .skip(2)
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Format(format!("{}: row {}: {e}", path.display(), line + 2)))?;
            rows.push(row);
        }
        let classes: Vec<String> = {
            let mut c = names.clone();
            c.sort();
            c.dedup();
            c
        };
        let labels = names
            .iter()
            .map(|n| classes.binary_search(n).unwrap())
            .collect();
        let feature_names: Vec<String> = header[2..].to_vec();
        let size_column = feature_names.last().map(String::as_str) == Some(SIZE_COLUMN);
        let mut t = FeatureTable::new(ids, labels, classes, feature_names, rows)?;
        t.size_column = size_column;
        Ok(t)
    }
}

pub const SIZE_COLUMN: &str = "size";

/// Appends the per-object pre-normalization size as one more feature. The
/// column is stored raw and standardized with the other features inside the
/// classifier, from training rows only.
pub fn append_size(table: &FeatureTable, norms: &[f64]) -> Result<FeatureTable> {
    if table.size_column {
        return Err(Error::Shape("size column already appended".into()));
    }
    if norms.len() != table.len() {
        return Err(Error::Shape(format!(
            "{} norms for {} rows",
            norms.len(),
            table.len()
        )));
    }
    let mut t = table.clone();
    for (row, &n) in t.rows.iter_mut().zip(norms) {
        row.push(n);
    }
    t.feature_names.push(SIZE_COLUMN.into());
    t.size_column = true;
    t.check()?;
    Ok(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRegConfig {
    /// Penalty `l2 / 2 * |W|^2` on weights (not intercepts).
    pub l2: f64,
    pub max_iter: usize,
    /// Stop when the largest gradient component falls below this.
    pub tol: f64,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        Self {
            l2: 1.0,
            max_iter: 100,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticRegression {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// `n_classes x (dim + 1)`, intercept last.
    pub coef: Vec<Vec<f64>>,
    pub converged: bool,
    pub iterations: usize,
}

fn softmax(z: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    z.iter_mut().for_each(|v| *v /= s);
}

impl LogisticRegression {
    fn standardized(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .chain(std::iter::once(1.0))
            .collect()
    }

    pub fn predict_proba(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rows.iter()
            .map(|r| {
                let x = self.standardized(r);
                let mut z: Vec<f64> = self
                    .coef
                    .iter()
                    .map(|w| w.iter().zip(&x).map(|(a, b)| a * b).sum())
                    .collect();
                softmax(&mut z);
                z
            })
            .collect()
    }

    pub fn predict(&self, rows: &[Vec<f64>]) -> Vec<usize> {
        self.predict_proba(rows).iter().map(|p| argmax(p)).collect()
    }
}

fn argmax(p: &[f64]) -> usize {
    p.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
        .0
}

/// Objective value, gradient and Hessian of the penalized multinomial
/// log-likelihood at `w` (flattened `k x (d+1)`).
fn logreg_terms(x: &[Vec<f64>], y: &[usize], k: usize, w: &[f64], l2: f64) -> (f64, DVector<f64>, DMatrix<f64>) {
    let p1 = x[0].len();
    let dim = k * p1;
    let mut f = 0.0;
    let mut g = DVector::zeros(dim);
    let mut h = DMatrix::zeros(dim, dim);
    for (xi, &yi) in x.iter().zip(y) {
        let mut z: Vec<f64> = (0..k)
            .map(|c| w[c * p1..(c + 1) * p1].iter().zip(xi).map(|(a, b)| a * b).sum())
            .collect();
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        f += lse - z[yi];
        z.iter_mut().for_each(|v| *v = (*v - lse).exp());
        for c in 0..k {
            let r = z[c] - f64::from(u8::from(c == yi));
            for j in 0..p1 {
                g[c * p1 + j] += r * xi[j];
            }
            for c2 in 0..k {
                let s = z[c] * (f64::from(u8::from(c == c2)) - z[c2]);
                if s == 0.0 {
                    continue;
                }
                for a in 0..p1 {
                    let sa = s * xi[a];
                    for b in 0..p1 {
                        h[(c * p1 + a, c2 * p1 + b)] += sa * xi[b];
                    }
                }
            }
        }
    }
    for c in 0..k {
        for j in 0..p1 - 1 {
            let i = c * p1 + j;
            f += 0.5 * l2 * w[i] * w[i];
            g[i] += l2 * w[i];
            h[(i, i)] += l2;
        }
    }
    (f, g, h)
}

/// Fits the classifier by damped Newton iterations on standardized features.
pub fn fit_logreg(table: &FeatureTable, cfg: &LogRegConfig) -> Result<LogisticRegression> {
    table.check()?;
    let k = table.n_classes();
    let mut counts = vec![0usize; k];
    table.labels.iter().for_each(|&l| counts[l] += 1);
    if counts.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::Label("need at least two classes present".into()));
    }
    if !(cfg.l2 >= 0.0) || cfg.max_iter == 0 || !(cfg.tol > 0.0) {
        return Err(Error::Config("invalid logistic regression settings".into()));
    }
    let d = table.dim();
    let n = table.len() as f64;
    let mean: Vec<f64> = (0..d).map(|j| table.rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let scale: Vec<f64> = (0..d)
        .map(|j| {
            let v = table.rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
            if v > 0.0 {
                v.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let mut model = LogisticRegression {
        mean,
        scale,
        coef: vec![vec![0.0; d + 1]; k],
        converged: false,
        iterations: 0,
    };
    let x: Vec<Vec<f64>> = table.rows.iter().map(|r| model.standardized(r)).collect();
    let p1 = d + 1;
    let mut w = vec![0.0; k * p1];
    for it in 0..cfg.max_iter {
        let (f, g, mut h) = logreg_terms(&x, &table.labels, k, &w, cfg.l2);
        if g.amax() <= cfg.tol {
            model.converged = true;
            model.iterations = it;
            break;
        }
        // Intercepts are unpenalized and jointly shift-invariant; a tiny ridge
        // keeps the system definite without moving the optimum.
        for c in 0..k {
            h[(c * p1 + d, c * p1 + d)] += 1e-10 * n;
        }
        let step = match h.clone().cholesky() {
            Some(ch) => ch.solve(&g),
            None => {
                let mut hd = h;
                for i in 0..k * p1 {
                    hd[(i, i)] += 1e-6 * n;
                }
                hd.cholesky()
                    .ok_or_else(|| Error::Config("singular Hessian in logistic regression".into()))?
                    .solve(&g)
            }
        };
        let slope = -g.dot(&step);
        let mut t = 1.0;
        loop {
            let cand: Vec<f64> = w.iter().zip(step.iter()).map(|(a, s)| a - t * s).collect();
            let (fc, _, _) = logreg_terms(&x, &table.labels, k, &cand, cfg.l2);
            if fc <= f + 1e-4 * t * slope || t < 1e-12 {
                w = cand;
                break;
            }
            t *= 0.5;
        }
        model.iterations = it + 1;
    }
    if !model.converged {
        let (_, g, _) = logreg_terms(&x, &table.labels, k, &w, cfg.l2);
        model.converged = g.amax() <= cfg.tol;
        if !model.converged {
            log::warn!("logistic regression stopped after {} iterations without converging", cfg.max_iter);
        }
    }
    model.coef = w.chunks(p1).map(<[f64]>::to_vec).collect();
    Ok(model)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub f1: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub log_loss: f64,
}

/// Macro-averaged F1, precision and recall over `n_classes` classes,
/// accuracy, and clipped log loss.
pub fn metrics(y_true: &[usize], y_pred: &[usize], probs: &[Vec<f64>], n_classes: usize) -> Result<Metrics> {
    let n = y_true.len();
    if y_pred.len() != n || probs.len() != n || n == 0 {
        return Err(Error::Shape("labels, predictions and probabilities differ in length".into()));
    }
    for &l in y_true.iter().chain(y_pred) {
        if l >= n_classes {
            return Err(Error::Label(format!("label {l} outside {n_classes} classes")));
        }
    }
    for p in probs {
        if p.len() != n_classes || (p.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
            return Err(Error::Shape("probability rows must have one entry per class and sum to 1".into()));
        }
    }
    let mut tp = vec![0.0; n_classes];
    let mut pred_count = vec![0.0; n_classes];
    let mut true_count = vec![0.0; n_classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        true_count[t] += 1.0;
        pred_count[p] += 1.0;
        if t == p {
            tp[t] += 1.0;
        }
    }
    let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { 0.0 };
    let (mut ps, mut rs, mut fs) = (0.0, 0.0, 0.0);
    for c in 0..n_classes {
        let p = ratio(tp[c], pred_count[c]);
        let r = ratio(tp[c], true_count[c]);
        ps += p;
        rs += r;
        fs += ratio(2.0 * p * r, p + r);
    }
    let k = n_classes as f64;
    const CLIP: f64 = 1e-15;
    let log_loss = -y_true
        .iter()
        .zip(probs)
        .map(|(&t, p)| p[t].clamp(CLIP, 1.0 - CLIP).ln())
        .sum::<f64>()
        / n as f64;
    Ok(Metrics {
        f1: fs / k,
        accuracy: tp.iter().sum::<f64>() / n as f64,
        precision: ps / k,
        recall: rs / k,
        log_loss,
    })
}

/// Fold index per row: each class is shuffled and dealt round-robin, with
/// the dealing position carried across classes so fold sizes stay balanced.
pub fn stratified_folds(labels: &[usize], folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::Config("need at least two folds".into()));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    if let Some((c, m)) = by_class.iter().find(|(_, m)| m.len() < folds) {
        return Err(Error::Stratification(format!(
            "class {c} has {} members, fewer than {folds} folds",
            m.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assign = vec![0; labels.len()];
    let mut pos = 0;
    for members in by_class.values_mut() {
        members.shuffle(&mut rng);
        for &i in members.iter() {
            assign[i] = pos % folds;
            pos += 1;
        }
    }
    Ok(assign)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
    pub folds: Vec<f64>,
}

impl MetricSummary {
    fn from_values(v: Vec<f64>) -> Self {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        Self { mean, std, folds: v }
    }
}

/// Cross-validation summary; serializes as `{metric: {mean, std, folds}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub f1: MetricSummary,
    pub accuracy: MetricSummary,
    pub precision: MetricSummary,
    pub recall: MetricSummary,
    pub log_loss: MetricSummary,
}

impl CvReport {
    fn entries(&self) -> [(&'static str, &MetricSummary); 5] {
        [
            ("f1", &self.f1),
            ("accuracy", &self.accuracy),
            ("precision", &self.precision),
            ("recall", &self.recall),
            ("log_loss", &self.log_loss),
        ]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// `metric,mean,std,fold_1,...,fold_k`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let k = self.f1.folds.len();
        let mut header = vec!["metric".to_string(), "mean".into(), "std".into()];
        header.extend((1..=k).map(|i| format!("fold_{i}")));
        w.write_record(&header)?;
        for (name, m) in self.entries() {
            let mut rec = vec![name.to_string(), m.mean.to_string(), m.std.to_string()];
            rec.extend(m.folds.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Stratified k-fold evaluation of the logistic-regression classifier.
pub fn cross_validate(table: &FeatureTable, folds: usize, seed: u64, cfg: &LogRegConfig) -> Result<CvReport> {
    table.check()?;
    let assign = stratified_folds(&table.labels, folds, seed)?;
    let mut per_fold = Vec::with_capacity(folds);
    for f in 0..folds {
        let train: Vec<usize> = (0..table.len()).filter(|&i| assign[i] != f).collect();
        let test: Vec<usize> = (0..table.len()).filter(|&i| assign[i] == f).collect();
        let model = fit_logreg(&table.subset(&train), cfg)?;
        let test = table.subset(&test);
        let probs = model.predict_proba(&test.rows);
        let pred: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
        per_fold.push(metrics(&test.labels, &pred, &probs, table.n_classes())?);
    }
    let col = |g: fn(&Metrics) -> f64| MetricSummary::from_values(per_fold.iter().map(g).collect());
    Ok(CvReport {
        f1: col(|m| m.f1),
        accuracy: col(|m| m.accuracy),
        precision: col(|m| m.precision),
        recall: col(|m| m.recall),
        log_loss: col(|m| m.log_loss),
    })
}

/// Posterior means of a set of inputs as a feature table.
pub fn latent_table<T: Scalar>(
    model: &Model<T>,
    matrices: &[DistanceMatrix],
    object_ids: Vec<String>,
    labels: Vec<usize>,
    class_names: Vec<String>,
) -> Result<FeatureTable> {
    let rows = matrices
        .iter()
        .map(|d| model.encode(d).map(|c| c.mu))
        .collect::<Result<Vec<_>>>()?;
    let names = (0..model.config().latent_dim).map(|i| format!("z{i}")).collect();
    FeatureTable::new(object_ids, labels, class_names, names, rows)
}

/// Decoded, sanitized and embedded outline of one latent vector.
pub fn decode_outline<T: Scalar>(model: &Model<T>, z: &[f64], norm: f64, mds: &MdsConfig) -> Result<Vec<Point>> {
    let raw = model.decode(z)?;
    Ok(reconstruct_outline(&raw, norm, mds)?.points)
}

/// Per-class mean latent decoded to an outline. Uses the first `latent_dim`
/// columns (a trailing size column is ignored); classes without rows are
/// skipped.
pub fn class_mean_decode<T: Scalar>(
    latents: &FeatureTable,
    model: &Model<T>,
    mds: &MdsConfig,
) -> Result<Vec<(String, Vec<Point>)>> {
    let d = model.config().latent_dim;
    if latents.dim() < d {
        return Err(Error::Shape(format!("latent table has {} columns, model needs {d}", latents.dim())));
    }
    let mut out = Vec::new();
    for (c, name) in latents.class_names.iter().enumerate() {
        let members: Vec<&Vec<f64>> = latents
            .rows
            .iter()
            .zip(&latents.labels)
            .filter(|(_, &l)| l == c)
            .map(|(r, _)| r)
            .collect();
        if members.is_empty() {
            log::warn!("class {name} has no members; skipped");
            continue;
        }
        let k = members.len() as f64;
        let mean: Vec<f64> = (0..d).map(|j| members.iter().map(|r| r[j]).sum::<f64>() / k).collect();
        out.push((name.clone(), decode_outline(model, &mean, 1.0, mds)?));
    }
    Ok(out)
}

/// Decodes `count` standard-normal latent draws to outlines.
pub fn sample_latent<T: Scalar>(model: &Model<T>, count: usize, seed: u64, mds: &MdsConfig) -> Result<Vec<Vec<Point>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = model.config().latent_dim;
    (0..count)
        .map(|_| {
            let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            decode_outline(model, &z, 1.0, mds)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftStats {
    pub max: f64,
    pub median: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    /// Median pairwise distance between the objects' latent means.
    pub reference_distance: f64,
    /// Relative drift (distance to the original latent mean divided by
    /// `reference_distance`) per variant type.
    pub similarity: Option<DriftStats>,
    pub reflection: DriftStats,
    pub reindexing: Option<DriftStats>,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn drift_stats(mut v: Vec<f64>) -> DriftStats {
    let max = v.iter().copied().fold(0.0, f64::max);
    let count = v.len();
    DriftStats {
        max,
        median: median(&mut v),
        count,
    }
}

/// Latent drift of each object under contour-level similarity transforms,
/// double mirroring, and the given reindexings.
pub fn invariance_report<T: Scalar>(
    model: &Model<T>,
    contours: &[ContourSequence],
    transforms: &[SimilarityTransform],
    reindexings: &[Reindexing],
) -> Result<InvarianceReport> {
    if contours.len() < 2 {
        return Err(Error::NoData("need at least two objects".into()));
    }
    let mats = contours
        .iter()
        .map(|c| normalize(&edm(c.points())))
        .collect::<Result<Vec<_>>>()?;
    let mus = mats
        .iter()
        .map(|d| model.encode(d).map(|c| c.mu))
        .collect::<Result<Vec<_>>>()?;
    let mut pair = Vec::new();
    for i in 0..mus.len() {
        for j in i + 1..mus.len() {
            pair.push(euclid(&mus[i], &mus[j]));
        }
    }
    let reference = median(&mut pair);
    if !(reference > 0.0) {
        return Err(Error::DegenerateShape("all objects share one latent mean".into()));
    }
    let (mut sim, mut refl, mut re) = (Vec::new(), Vec::new(), Vec::new());
    for ((c, d), mu) in contours.iter().zip(&mats).zip(&mus) {
        for t in transforms {
            let tc = transform_contour(c, t)?;
            let td = normalize(&edm(tc.points()))?;
            sim.push(euclid(&model.encode(&td)?.mu, mu) / reference);
        }
        refl.push(euclid(&model.encode(&mirror_both(d))?.mu, mu) / reference);
        for &r in reindexings {
            re.push(euclid(&model.encode(&reindex(d, r)?)?.mu, mu) / reference);
        }
    }
    Ok(InvarianceReport {
        reference_distance: reference,
        similarity: (!sim.is_empty()).then(|| drift_stats(sim)),
        reflection: drift_stats(refl),
        reindexing: (!re.is_empty()).then(|| drift_stats(re)),
    })
}
