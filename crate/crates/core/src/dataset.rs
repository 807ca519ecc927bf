//! Mask datasets on disk, object manifests, stratified splits, similarity
//! transforms and the synthetic three-class shape generator.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::contour::{self, BinaryMask, ContourSequence, Point, Polygon};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub object_id: String,
    pub label: String,
    pub source_path: String,
}

/// Object list with a label → class-index table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    records: Vec<ManifestRecord>,
    class_table: BTreeMap<String, usize>,
}

impl Manifest {
    /// Builds a manifest; class indices follow lexicographic label order.
    pub fn new(records: Vec<ManifestRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::NoData("manifest has no records".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for r in &records {
            if !seen.insert(r.object_id.as_str()) {
                return Err(Error::Format(format!("duplicate object id {}", r.object_id)));
            }
        }
        let mut labels: Vec<&str> = records.iter().map(|r| r.label.as_str()).collect();
        labels.sort_unstable();
        labels.dedup();
        let class_table = labels
            .into_iter()
            .enumerate()
            .map(|(i, l)| (l.to_string(), i))
            .collect();
        Ok(Self {
            records,
            class_table,
        })
    }

    fn with_class_table(
        records: Vec<ManifestRecord>,
        class_table: BTreeMap<String, usize>,
    ) -> Self {
        Self {
            records,
            class_table,
        }
    }

    pub fn records(&self) -> &[ManifestRecord] {
        &self.records
    }

    pub fn class_table(&self) -> &BTreeMap<String, usize> {
        &self.class_table
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn class_index(&self, label: &str) -> Result<usize> {
        self.class_table
            .get(label)
            .copied()
            .ok_or_else(|| Error::Label(format!("unknown label {label}")))
    }

    /// Integer class per record.
    pub fn labels(&self) -> Vec<usize> {
        self.records
            .iter()
            .map(|r| self.class_table[&r.label])
            .collect()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut rd = csv::Reader::from_path(path)?;
        let records = rd
            .deserialize()
            .collect::<std::result::Result<Vec<ManifestRecord>, _>>()?;
        Self::new(records)
    }
}

fn is_image_file(path: &Path) -> bool {
    matches!(
        path.extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref(),
        Some("png" | "bmp" | "tif" | "tiff" | "pgm" | "pbm" | "pnm")
    )
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?;
    out.sort();
    Ok(out)
}

/// Walks `root/<class>/<file>` and returns one record per image, with every
/// file decoded once to make sure it is readable.
pub fn scan_dataset(root: impl AsRef<Path>) -> Result<Manifest> {
    let root = root.as_ref();
    let mut records = Vec::new();
    for class_dir in sorted_entries(root)? {
        if !class_dir.is_dir() {
            continue;
        }
        let label = class_dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::Format(format!("bad class directory {class_dir:?}")))?
            .to_string();
        for file in sorted_entries(&class_dir)? {
            if !file.is_file() || !is_image_file(&file) {
                continue;
            }
            load_mask(&file)?;
            let stem = file
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default();
            records.push(ManifestRecord {
                object_id: format!("{label}/{stem}"),
                label: label.clone(),
                source_path: file.to_string_lossy().into_owned(),
            });
        }
    }
    if records.is_empty() {
        return Err(Error::NoData(format!("no mask images under {}", root.display())));
    }
    Manifest::new(records)
}

/// Decodes an 8-bit grayscale image; nonzero pixels are foreground.
pub fn load_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let path = path.as_ref();
    let decode_err = |e: image::ImageError| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let img = image::ImageReader::open(path)?
        .with_guessed_format()?
        .decode()
        .map_err(decode_err)?
        .to_luma8();
    let (w, h) = img.dimensions();
    let pixels = img.pixels().map(|p| p.0[0] != 0).collect();
    BinaryMask::new(w as usize, h as usize, pixels)
}

/// Writes a mask as an 8-bit PNG (foreground 255).
pub fn save_mask(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    let buf: Vec<u8> = mask.pixels().iter().map(|&p| if p { 255 } else { 0 }).collect();
    let img = image::GrayImage::from_raw(mask.width() as u32, mask.height() as u32, buf)
        .ok_or_else(|| Error::Shape("mask buffer size mismatch".into()))?;
    img.save(path.as_ref()).map_err(|e| Error::Decode {
        path: path.as_ref().to_path_buf(),
        message: e.to_string(),
    })
}

/// Splits every class independently so that its test share is
/// `round(count * test_fraction)` clamped to `[1, count - 1]`.
pub fn split_stratified(
    manifest: &Manifest,
    test_fraction: f64,
    seed: u64,
) -> Result<(Manifest, Manifest)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in manifest.records.iter().enumerate() {
        by_class.entry(r.label.as_str()).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut is_test = vec![false; manifest.len()];
    for (label, mut idx) in by_class {
        let count = idx.len();
        if count < 2 {
            return Err(Error::Stratification(format!(
                "class {label} has {count} record(s); need at least 2"
            )));
        }
        let n_test = ((count as f64 * test_fraction).round() as usize).clamp(1, count - 1);
        idx.shuffle(&mut rng);
        for &i in &idx[..n_test] {
            is_test[i] = true;
        }
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (r, t) in manifest.records.iter().zip(is_test) {
        if t {
            test.push(r.clone());
        } else {
            train.push(r.clone());
        }
    }
    Ok((
        Manifest::with_class_table(train, manifest.class_table.clone()),
        Manifest::with_class_table(test, manifest.class_table.clone()),
    ))
}

/// Scale, optional reflection, rotation and translation of the plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform {
    pub theta: f64,
    pub tx: f64,
    pub ty: f64,
    pub scale: f64,
    pub reflect: bool,
}

impl Default for SimilarityTransform {
    fn default() -> Self {
        Self {
            theta: 0.0,
            tx: 0.0,
            ty: 0.0,
            scale: 1.0,
            reflect: false,
        }
    }
}

impl SimilarityTransform {
    pub fn apply(&self, p: Point) -> Point {
        let (s, c) = self.theta.sin_cos();
        let x = self.scale * p[0];
        let mut y = self.scale * p[1];
        if self.reflect {
            y = -y;
        }
        [x * c - y * s + self.tx, x * s + y * c + self.ty]
    }

    fn check(&self) -> Result<()> {
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(Error::InvalidTransform(format!(
                "scale must be positive, got {}",
                self.scale
            )));
        }
        Ok(())
    }
}

/// Maps every point; with `reflect` the order is reversed (keeping the first
/// point first) so the sequence stays counterclockwise.
pub fn transform_points(points: &[Point], t: &SimilarityTransform) -> Result<Vec<Point>> {
    t.check()?;
    let mut out: Vec<Point> = points.iter().map(|&p| t.apply(p)).collect();
    if t.reflect && out.len() > 1 {
        out[1..].reverse();
    }
    Ok(out)
}

pub fn transform_contour(
    contour: &ContourSequence,
    t: &SimilarityTransform,
) -> Result<ContourSequence> {
    ContourSequence::new(transform_points(contour.points(), t)?)
}

pub fn transform_polygon(polygon: &Polygon, t: &SimilarityTransform) -> Result<Polygon> {
    Polygon::new(transform_points(polygon.vertices(), t)?)
}

/// Randomization applied to each synthetic instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticOptions {
    /// Number of resampled outline points.
    pub n_points: usize,
    /// Uniform scale range `[lo, hi]`.
    pub scale_range: (f64, f64),
    /// Uniform rotation in `[0, 2π)` when set.
    pub rotation: bool,
    /// Translation drawn uniformly from `[-t, t]` per axis.
    pub translation: f64,
    /// Random arc-length origin for the resampled outline.
    pub random_origin: bool,
    /// Random mirror reflection (which also flips the travel direction).
    pub reflect: bool,
}

impl Default for SyntheticOptions {
    fn default() -> Self {
        Self {
            n_points: 64,
            scale_range: (0.5, 1.5),
            rotation: true,
            translation: 0.5,
            random_origin: true,
            reflect: true,
        }
    }
}

impl SyntheticOptions {
    /// Canonical shapes only: no scaling, rotation, translation or reindexing.
    pub fn canonical(n_points: usize) -> Self {
        Self {
            n_points,
            scale_range: (1.0, 1.0),
            rotation: false,
            translation: 0.0,
            random_origin: false,
            reflect: false,
        }
    }
}

pub const SYNTHETIC_CLASSES: [&str; 3] = ["ellipse", "rectangle", "star"];

const SHAPE_SAMPLES: usize = 256;

pub fn ellipse_polygon(axis_ratio: f64) -> Polygon {
    let v = (0..SHAPE_SAMPLES)
        .map(|i| {
            let phi = TAU * i as f64 / SHAPE_SAMPLES as f64;
            [phi.cos(), phi.sin() / axis_ratio]
        })
        .collect();
    Polygon::new(v).expect("ellipse vertices are distinct")
}

pub fn rectangle_polygon(aspect: f64) -> Polygon {
    let h = 1.0 / aspect;
    Polygon::new(vec![[-1.0, -h], [1.0, -h], [1.0, h], [-1.0, h]]).expect("valid rectangle")
}

/// Three-lobed star `r(φ) = 1 + 0.4 cos 3φ`.
pub fn star_polygon() -> Polygon {
    let v = (0..SHAPE_SAMPLES)
        .map(|i| {
            let phi = TAU * i as f64 / SHAPE_SAMPLES as f64;
            let r = 1.0 + 0.4 * (3.0 * phi).cos();
            [r * phi.cos(), r * phi.sin()]
        })
        .collect();
    Polygon::new(v).expect("star vertices are distinct")
}

/// Draws a random similarity transform from the option ranges.
pub fn random_transform<R: Rng>(rng: &mut R, opts: &SyntheticOptions) -> SimilarityTransform {
    let (lo, hi) = opts.scale_range;
    let scale = if hi > lo { rng.random_range(lo..hi) } else { lo };
    let theta = if opts.rotation {
        rng.random_range(0.0..TAU)
    } else {
        0.0
    };
    let (tx, ty) = if opts.translation > 0.0 {
        (
            rng.random_range(-opts.translation..opts.translation),
            rng.random_range(-opts.translation..opts.translation),
        )
    } else {
        (0.0, 0.0)
    };
    let reflect = opts.reflect && rng.random_bool(0.5);
    SimilarityTransform {
        theta,
        tx,
        ty,
        scale,
        reflect,
    }
}

/// One generated object: its class, transformed polygon and resampled outline.
#[derive(Debug, Clone)]
pub struct SyntheticShape {
    pub label: String,
    pub polygon: Polygon,
    pub contour: ContourSequence,
    pub transform: SimilarityTransform,
}

/// `n_per_class` ellipses (axis ratio in [1.5, 3]), rectangles (aspect in
/// [1.5, 3]) and three-lobed stars, each under its own random transform.
pub fn make_synthetic_shapes(
    n_per_class: usize,
    seed: u64,
    opts: &SyntheticOptions,
) -> Result<(Manifest, Vec<SyntheticShape>)> {
    if n_per_class == 0 {
        return Err(Error::Config("n_per_class must be at least 1".into()));
    }
    if !(opts.scale_range.0 > 0.0 && opts.scale_range.1 >= opts.scale_range.0) {
        return Err(Error::Config(format!(
            "invalid scale range {:?}",
            opts.scale_range
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(3 * n_per_class);
    let mut shapes = Vec::with_capacity(3 * n_per_class);
    for class in SYNTHETIC_CLASSES {
        for i in 0..n_per_class {
            let canonical = match class {
                "ellipse" => ellipse_polygon(rng.random_range(1.5..3.0)),
                "rectangle" => rectangle_polygon(rng.random_range(1.5..3.0)),
                _ => star_polygon(),
            };
            let t = random_transform(&mut rng, opts);
            let polygon = transform_polygon(&canonical, &t)?;
            let polygon = contour::ensure_ccw(polygon)?;
            let origin = if opts.random_origin {
                rng.random_range(0.0..polygon.perimeter())
            } else {
                0.0
            };
            let contour = contour::resample_uniform(&polygon, opts.n_points, origin)?;
            let object_id = format!("{class}_{i:04}");
            records.push(ManifestRecord {
                object_id,
                label: class.to_string(),
                source_path: "synthetic".to_string(),
            });
            shapes.push(SyntheticShape {
                label: class.to_string(),
                polygon,
                contour,
                transform: t,
            });
        }
    }
    Ok((Manifest::new(records)?, shapes))
}
