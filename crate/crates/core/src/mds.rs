//! Outline recovery from distance matrices: SMACOF stress majorization and
//! rigid Procrustes alignment for scoring reconstructions.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::contour::Point;
use crate::distmat::{sanitize, DistanceMatrix, RawMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MdsConfig {
    pub max_iter: usize,
    /// Stop once the relative stress decrease of one iteration falls below this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for MdsConfig {
    fn default() -> Self {
        Self {
            max_iter: 2000,
            tol: 1e-12,
            seed: 0,
        }
    }
}

impl MdsConfig {
    fn check(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config("tol must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MdsResult {
    pub points: Vec<Point>,
    /// Raw stress `sum_{i<j} (d_ij - |p_i - p_j|)^2` of the returned points.
    pub stress: f64,
    pub iterations: usize,
}

/// Raw stress of a configuration against target distances.
pub fn stress(d: &DistanceMatrix, points: &[Point]) -> f64 {
    let n = d.n();
    let mut s = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let e = d.get(i, j) - crate::contour::dist(points[i], points[j]);
            s += e * e;
        }
    }
    s
}

/// Metric SMACOF in two dimensions from a seeded standard-normal start.
pub fn smacof(d: &DistanceMatrix, config: &MdsConfig) -> Result<MdsResult> {
    config.check()?;
    let n = d.n();
    if n < 2 {
        return Err(Error::Precondition("need at least two points".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut x: Vec<Point> = (0..n)
        .map(|_| [StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)])
        .collect();
    let mut current = stress(d, &x);
    let mut next = vec![[0.0; 2]; n];
    let mut iterations = 0;
    for _ in 0..config.max_iter {
        iterations += 1;
        // Guttman transform: X <- B(X) X / n.
        for i in 0..n {
            let mut acc = [0.0; 2];
            let mut diag = 0.0;
            for j in 0..n {
                if i == j {
                    continue;
                }
                let delta = crate::contour::dist(x[i], x[j]);
                let b = if delta > 0.0 { -d.get(i, j) / delta } else { 0.0 };
                diag -= b;
                acc[0] += b * x[j][0];
                acc[1] += b * x[j][1];
            }
            next[i] = [
                (acc[0] + diag * x[i][0]) / n as f64,
                (acc[1] + diag * x[i][1]) / n as f64,
            ];
        }
        std::mem::swap(&mut x, &mut next);
        let updated = stress(d, &x);
        let decrease = current - updated;
        current = updated;
        if updated == 0.0 || decrease < config.tol * (current + decrease) {
            break;
        }
    }
    Ok(MdsResult {
        points: x,
        stress: current,
        iterations,
    })
}

/// Rigid motion `p -> R(θ) F p + t`, with `F` negating `y` when `reflect`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: f64,
    pub reflect: bool,
    pub translation: [f64; 2],
}

impl RigidTransform {
    pub fn apply(&self, p: Point) -> Point {
        let (s, c) = self.rotation.sin_cos();
        let y = if self.reflect { -p[1] } else { p[1] };
        [
            c * p[0] - s * y + self.translation[0],
            s * p[0] + c * y + self.translation[1],
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentResult {
    pub aligned_points: Vec<Point>,
    pub rmse: f64,
    pub transform: RigidTransform,
}

fn centroid(p: &[Point]) -> Point {
    let n = p.len() as f64;
    let (sx, sy) = p.iter().fold((0.0, 0.0), |a, q| (a.0 + q[0], a.1 + q[1]));
    [sx / n, sy / n]
}

/// Best rigid superposition (rotation, optional reflection, translation; no
/// scaling) of `b` onto `a`.
pub fn procrustes_align(a: &[Point], b: &[Point]) -> Result<AlignmentResult> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "point sets differ in size: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::Shape("need at least two points to align".into()));
    }
    let ca = centroid(a);
    let cb = centroid(b);

    let solve = |reflect: bool| -> AlignmentResult {
        let (mut dot, mut cross) = (0.0, 0.0);
        for (p, q) in a.iter().zip(b) {
            let u = [p[0] - ca[0], p[1] - ca[1]];
            let mut v = [q[0] - cb[0], q[1] - cb[1]];
            if reflect {
                v[1] = -v[1];
            }
            dot += v[0] * u[0] + v[1] * u[1];
            cross += v[0] * u[1] - v[1] * u[0];
        }
        let rotation = cross.atan2(dot);
        let (s, c) = rotation.sin_cos();
        let fy = if reflect { -cb[1] } else { cb[1] };
        let translation = [ca[0] - (c * cb[0] - s * fy), ca[1] - (s * cb[0] + c * fy)];
        let transform = RigidTransform {
            rotation,
            reflect,
            translation,
        };
        let aligned_points: Vec<Point> = b.iter().map(|&q| transform.apply(q)).collect();
        let sq: f64 = aligned_points
            .iter()
            .zip(a)
            .map(|(p, q)| (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2))
            .sum();
        AlignmentResult {
            aligned_points,
            rmse: (sq / a.len() as f64).sqrt(),
            transform,
        }
    };
    let plain = solve(false);
    let mirrored = solve(true);
    Ok(if mirrored.rmse < plain.rmse {
        mirrored
    } else {
        plain
    })
}

/// Sanitizes a decoder output, restores its scale and embeds it in 2D.
pub fn reconstruct_outline(m: &RawMatrix, norm: f64, config: &MdsConfig) -> Result<MdsResult> {
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::Precondition(format!("norm must be positive, got {norm}")));
    }
    let clean = sanitize(m);
    let scaled = DistanceMatrix::new(
        clean.n(),
        clean.entries().iter().map(|v| v * norm).collect(),
    )?;
    smacof(&scaled, config)
}

/// Closed polylines as an SVG document, one `<polygon>` per outline.
pub fn outlines_to_svg(outlines: &[Vec<Point>]) -> String {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in outlines.iter().flatten() {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    if !lo[0].is_finite() {
        lo = [0.0; 2];
        hi = [1.0; 2];
    }
    let pad = 0.05 * (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-9);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="{} {} {} {}">"#,
        lo[0] - pad,
        lo[1] - pad,
        hi[0] - lo[0] + 2.0 * pad,
        hi[1] - lo[1] + 2.0 * pad
    );
    for outline in outlines {
        let pts: Vec<String> = outline.iter().map(|p| format!("{},{}", p[0], p[1])).collect();
        let _ = writeln!(
            s,
            r#"  <polygon points="{}" fill="none" stroke="black" stroke-width="{}"/>"#,
            pts.join(" "),
            pad * 0.1
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distmat::edm;

    fn square() -> Vec<Point> {
        vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]
    }

    #[test]
    fn square_is_recovered_exactly() {
        let d = edm(square());
        let res = smacof(&d, &MdsConfig::default()).unwrap();
        assert!(res.stress < 1e-10, "stress {}", res.stress);
        let al = procrustes_align(&square(), &res.points).unwrap();
        assert!(al.rmse < 1e-6);
    }

    #[test]
    fn same_seed_same_points() {
        let d = edm(square());
        let cfg = MdsConfig {
            seed: 42,
            ..Default::default()
        };
        assert_eq!(smacof(&d, &cfg).unwrap(), smacof(&d, &cfg).unwrap());
    }

    #[test]
    fn unsanitized_input_is_rejected() {
        assert!(matches!(
            DistanceMatrix::new(2, vec![1.0, 2.0, 2.0, 0.0]),
            Err(Error::Precondition(_))
        ));
        let raw = RawMatrix::new(2, vec![1.0, 2.0, 2.0, 0.0]).unwrap();
        assert!(reconstruct_outline(&raw, 0.0, &MdsConfig::default()).is_err());
        assert!(reconstruct_outline(&raw, -1.0, &MdsConfig::default()).is_err());
    }

    #[test]
    fn rotated_translated_copy_aligns() {
        let a = vec![[0.0, 0.0], [2.0, 0.3], [1.5, 1.7], [-0.2, 1.1]];
        let t = RigidTransform {
            rotation: 0.9,
            reflect: false,
            translation: [3.0, -2.0],
        };
        let b: Vec<Point> = a.iter().map(|&p| t.apply(p)).collect();
        let al = procrustes_align(&a, &b).unwrap();
        assert!(al.rmse < 1e-10);
        assert!(!al.transform.reflect);
    }

    #[test]
    fn reflected_copy_aligns_with_flag() {
        let a = vec![[0.0, 0.0], [2.0, 0.3], [1.5, 1.7], [-0.2, 1.1]];
        let b: Vec<Point> = a.iter().map(|p| [p[0], -p[1]]).collect();
        let al = procrustes_align(&a, &b).unwrap();
        assert!(al.rmse < 1e-10);
        assert!(al.transform.reflect);
    }

    #[test]
    fn identical_sets_give_identity() {
        let a = vec![[0.0, 0.0], [2.0, 0.3], [1.5, 1.7], [-0.2, 1.1]];
        let al = procrustes_align(&a, &a).unwrap();
        assert!(al.rmse < 1e-12);
        assert_eq!(al.transform.rotation, 0.0);
        assert!(!al.transform.reflect);
    }

    #[test]
    fn size_mismatch_is_shape_error() {
        let a = square();
        assert!(matches!(
            procrustes_align(&a, &a[..3]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn unit_norm_is_plain_smacof() {
        let d = edm(square());
        let cfg = MdsConfig::default();
        let a = reconstruct_outline(&RawMatrix::from(d.clone()), 1.0, &cfg).unwrap();
        let b = smacof(&d, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn svg_contains_one_polygon_per_outline() {
        let svg = outlines_to_svg(&[square(), square()]);
        assert_eq!(svg.matches("<polygon").count(), 2);
    }
}
