//! Classical descriptors: elliptic Fourier coefficients of outlines and
//! region-property features of binary masks.

use std::f64::consts::{PI, SQRT_2, TAU};

use serde::{Deserialize, Serialize};

use crate::contour::{BinaryMask, Point};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfdCoefficients {
    pub order: usize,
    /// `order` rows of `[a_n, b_n, c_n, d_n]`.
    pub coeffs: Vec<[f64; 4]>,
    pub normalized: bool,
}

impl EfdCoefficients {
    /// Row-major flattening: `4 * order` values.
    pub fn flatten(&self) -> Vec<f64> {
        self.coeffs.iter().flatten().copied().collect()
    }
}

/// Segment increments of the closed polyline, dropping zero-length steps.
fn closed_steps(points: &[Point]) -> Vec<(f64, f64, f64)> {
    let n = points.len();
    (0..n)
        .filter_map(|i| {
            let p = points[i];
            let q = points[(i + 1) % n];
            let (dx, dy) = (q[0] - p[0], q[1] - p[1]);
            let dt = dx.hypot(dy);
            (dt > 0.0).then_some((dx, dy, dt))
        })
        .collect()
}

/// Kuhl-Giardina coefficients of the closed piecewise-linear outline.
pub fn efd_coeffs(points: &[Point], order: usize) -> Result<EfdCoefficients> {
    if order == 0 {
        return Err(Error::Config("EFD order must be at least 1".into()));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Contour("non-finite outline coordinates".into()));
    }
    let steps = closed_steps(points);
    if steps.len() < 2 {
        return Err(Error::Contour("outline has fewer than two distinct points".into()));
    }
    let mut t = Vec::with_capacity(steps.len() + 1);
    t.push(0.0);
    for s in &steps {
        t.push(t.last().unwrap() + s.2);
    }
    let period = *t.last().unwrap();
    let mut coeffs = Vec::with_capacity(order);
    for n in 1..=order {
        let nf = n as f64;
        let k = period / (2.0 * nf * nf * PI * PI);
        let (mut a, mut b, mut c, mut d) = (0.0, 0.0, 0.0, 0.0);
        for (i, &(dx, dy, dt)) in steps.iter().enumerate() {
            let p0 = TAU * nf * t[i] / period;
            let p1 = TAU * nf * t[i + 1] / period;
            let dcos = p1.cos() - p0.cos();
            let dsin = p1.sin() - p0.sin();
            a += dx / dt * dcos;
            b += dx / dt * dsin;
            c += dy / dt * dcos;
            d += dy / dt * dsin;
        }
        coeffs.push([k * a, k * b, k * c, k * d]);
    }
    Ok(EfdCoefficients {
        order,
        coeffs,
        normalized: false,
    })
}

/// Zeroth-order (centre) term of the closed outline.
pub fn efd_locus(points: &[Point]) -> Result<Point> {
    let steps = closed_steps(points);
    if steps.is_empty() {
        return Err(Error::Contour("outline has no extent".into()));
    }
    let period: f64 = steps.iter().map(|s| s.2).sum();
    let (mut a0, mut c0) = (0.0, 0.0);
    let (mut t, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for &(dx, dy, dt) in &steps {
        let t1 = t + dt;
        sx += dx;
        sy += dy;
        let xi = sx - dx / dt * t1;
        let delta = sy - dy / dt * t1;
        a0 += dx / (2.0 * dt) * (t1 * t1 - t * t) + xi * dt;
        c0 += dy / (2.0 * dt) * (t1 * t1 - t * t) + delta * dt;
        t = t1;
    }
    Ok([points[0][0] + a0 / period, points[0][1] + c0 / period])
}

/// Rotation, scale and starting-point normalization of the coefficients.
///
/// The first harmonic becomes `[1, 0, 0, ±minor/major]`. The starting-point
/// phase is only defined up to a half turn, which flips the sign of every
/// even harmonic; the sign is fixed so that the even coefficient of largest
/// magnitude is positive.
pub fn efd_normalize(c: &EfdCoefficients) -> Result<EfdCoefficients> {
    let [a1, b1, c1, d1] = c.coeffs[0];
    if a1 * a1 + b1 * b1 + c1 * c1 + d1 * d1 == 0.0 {
        return Err(Error::DegenerateShape("first harmonic vanishes".into()));
    }
    let theta = 0.5 * (2.0 * (a1 * b1 + c1 * d1)).atan2(a1 * a1 - b1 * b1 + c1 * c1 - d1 * d1);
    let mut out: Vec<[f64; 4]> = c
        .coeffs
        .iter()
        .enumerate()
        .map(|(i, &[a, b, cc, d])| {
            let (s, co) = ((i + 1) as f64 * theta).sin_cos();
            [a * co + b * s, -a * s + b * co, cc * co + d * s, -cc * s + d * co]
        })
        .collect();
    let psi = out[0][2].atan2(out[0][0]);
    let (s, co) = psi.sin_cos();
    for row in &mut out {
        let [a, b, cc, d] = *row;
        *row = [co * a + s * cc, co * b + s * d, -s * a + co * cc, -s * b + co * d];
    }
    let scale = out[0][0].abs();
    if !(scale > 0.0) {
        return Err(Error::DegenerateShape("first harmonic has no major axis".into()));
    }
    for row in &mut out {
        row.iter_mut().for_each(|v| *v /= scale);
    }
    let even = out.iter().skip(1).step_by(2).flatten();
    let pivot = even.fold(0.0f64, |m, &v| if v.abs() > m.abs() { v } else { m });
    if pivot < 0.0 {
        for row in out.iter_mut().skip(1).step_by(2) {
            row.iter_mut().for_each(|v| *v = -*v);
        }
    }
    Ok(EfdCoefficients {
        order: c.order,
        coeffs: out,
        normalized: true,
    })
}

/// Samples the Fourier series at `t = j / count`, `j = 0..count`.
pub fn efd_synthesize(c: &EfdCoefficients, locus: Point, count: usize) -> Vec<Point> {
    (0..count)
        .map(|j| {
            let t = j as f64 / count as f64;
            let mut p = locus;
            for (i, &[a, b, cc, d]) in c.coeffs.iter().enumerate() {
                let (s, co) = (TAU * (i + 1) as f64 * t).sin_cos();
                p[0] += a * co + b * s;
                p[1] += cc * co + d * s;
            }
            p
        })
        .collect()
}

pub fn efd_feature_names(order: usize) -> Vec<String> {
    (1..=order)
        .flat_map(|n| ["a", "b", "c", "d"].map(|k| format!("efd_{k}{n}")))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionFeatures {
    pub area: f64,
    pub convex_area: f64,
    pub perimeter: f64,
    pub axis_major_length: f64,
    pub axis_minor_length: f64,
    pub extent: f64,
    pub eccentricity: f64,
    pub solidity: f64,
    pub feret_diameter_max: f64,
    pub hu_moments: [f64; 7],
    pub bbox_width: f64,
    pub bbox_height: f64,
}

pub const REGION_FEATURE_NAMES: [&str; 18] = [
    "area",
    "convex_area",
    "perimeter",
    "axis_major_length",
    "axis_minor_length",
    "extent",
    "eccentricity",
    "solidity",
    "feret_diameter_max",
    "hu_1",
    "hu_2",
    "hu_3",
    "hu_4",
    "hu_5",
    "hu_6",
    "hu_7",
    "bbox_width",
    "bbox_height",
];

impl RegionFeatures {
    /// Values in [`REGION_FEATURE_NAMES`] order.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![
            self.area,
            self.convex_area,
            self.perimeter,
            self.axis_major_length,
            self.axis_minor_length,
            self.extent,
            self.eccentricity,
            self.solidity,
            self.feret_diameter_max,
        ];
        v.extend(self.hu_moments);
        v.push(self.bbox_width);
        v.push(self.bbox_height);
        v
    }
}

/// Rows and columns of foreground pixels.
fn pixel_coords(mask: &BinaryMask) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for r in 0..mask.height() {
        for c in 0..mask.width() {
            if mask.get(r, c) {
                out.push((r, c));
            }
        }
    }
    out
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Counter-clockwise convex hull (monotone chain), collinear points dropped.
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Point> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Pixels whose centres lie inside or on the hull of all pixel-edge midpoints.
fn convex_image(mask: &BinaryMask, coords: &[(usize, usize)]) -> BinaryMask {
    let mut pts = Vec::with_capacity(coords.len() * 4);
    for &(r, c) in coords {
        let (r, c) = (r as f64, c as f64);
        pts.extend([[r - 0.5, c], [r + 0.5, c], [r, c - 0.5], [r, c + 0.5]]);
    }
    let hull = convex_hull(&pts);
    let (h, w) = (mask.height(), mask.width());
    let mut pixels = vec![false; h * w];
    let m = hull.len();
    for r in 0..h {
        for c in 0..w {
            let p = [r as f64, c as f64];
            pixels[r * w + c] = (0..m).all(|i| cross(hull[i], hull[(i + 1) % m], p) >= 0.0);
        }
    }
    BinaryMask::new(w, h, pixels).expect("same shape as the input mask")
}

/// Boundary-crossing perimeter estimate over 4-connected border pixels.
fn crofton_perimeter(mask: &BinaryMask) -> f64 {
    let (h, w) = (mask.height() as i64, mask.width() as i64);
    let at = |r: i64, c: i64| r >= 0 && c >= 0 && r < h && c < w && mask.get(r as usize, c as usize);
    let border = |r: i64, c: i64| {
        at(r, c) && !(at(r - 1, c) && at(r + 1, c) && at(r, c - 1) && at(r, c + 1))
    };
    let mut total = 0.0;
    for r in 0..h {
        for c in 0..w {
            let mut code = 0;
            for dr in -1..=1 {
                for dc in -1..=1 {
                    if border(r + dr, c + dc) {
                        code += match (dr, dc) {
                            (0, 0) => 1,
                            (0, _) | (_, 0) => 2,
                            _ => 10,
                        };
                    }
                }
            }
            total += match code {
                5 | 7 | 15 | 17 | 25 | 27 => 1.0,
                21 | 33 => SQRT_2,
                13 | 23 => (1.0 + SQRT_2) / 2.0,
                _ => 0.0,
            };
        }
    }
    total
}

/// Largest distance between level-0.5 crossings of the convex image.
fn feret_max(convex: &BinaryMask) -> f64 {
    let (h, w) = (convex.height(), convex.width());
    let mut pts: Vec<Point> = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let v = convex.get(r, c);
            // Crossings with the zero padding around the image count as well.
            let down = if r + 1 < h { convex.get(r + 1, c) } else { false };
            let right = if c + 1 < w { convex.get(r, c + 1) } else { false };
            if v != down {
                pts.push([r as f64 + 0.5, c as f64]);
            }
            if v != right {
                pts.push([r as f64, c as f64 + 0.5]);
            }
            if r == 0 && v {
                pts.push([-0.5, c as f64]);
            }
            if c == 0 && v {
                pts.push([r as f64, -0.5]);
            }
        }
    }
    let hull = convex_hull(&pts);
    let mut best = 0.0f64;
    for i in 0..hull.len() {
        for j in i + 1..hull.len() {
            best = best.max((hull[i][0] - hull[j][0]).powi(2) + (hull[i][1] - hull[j][1]).powi(2));
        }
    }
    best.sqrt()
}

/// Region properties of the (largest) foreground component.
pub fn region_props(mask: &BinaryMask) -> Result<RegionFeatures> {
    if mask.count() == 0 {
        return Err(Error::Contour("mask has no foreground pixels".into()));
    }
    let mask = mask.largest_component()?;
    let coords = pixel_coords(&mask);
    let area = coords.len() as f64;

    let (rbar, cbar) = coords
        .iter()
        .fold((0.0, 0.0), |a, &(r, c)| (a.0 + r as f64, a.1 + c as f64));
    let (rbar, cbar) = (rbar / area, cbar / area);
    // mu[p][q] = sum (r - rbar)^p (c - cbar)^q for p, q <= 3
    let mut mu = [[0.0f64; 4]; 4];
    for &(r, c) in &coords {
        let dr = r as f64 - rbar;
        let dc = c as f64 - cbar;
        let mut rp = 1.0;
        for row in &mut mu {
            let mut cq = 1.0;
            for v in row.iter_mut() {
                *v += rp * cq;
                cq *= dc;
            }
            rp *= dr;
        }
    }
    let (t00, t11, t01) = (mu[0][2] / area, mu[2][0] / area, -mu[1][1] / area);
    let mean = 0.5 * (t00 + t11);
    let disc = (0.25 * (t00 - t11).powi(2) + t01 * t01).sqrt();
    let l1 = mean + disc;
    let l2 = (mean - disc).max(0.0);
    let eccentricity = if l1 == 0.0 { 0.0 } else { (1.0 - l2 / l1).sqrt() };

    let nu = |p: usize, q: usize| mu[p][q] / area.powf((p + q) as f64 / 2.0 + 1.0);
    let (n20, n02, n11) = (nu(2, 0), nu(0, 2), nu(1, 1));
    let (n30, n03, n21, n12) = (nu(3, 0), nu(0, 3), nu(2, 1), nu(1, 2));
    let s1 = n30 + n12;
    let s2 = n21 + n03;
    let d1 = n30 - 3.0 * n12;
    let d2 = 3.0 * n21 - n03;
    let hu_moments = [
        n20 + n02,
        (n20 - n02).powi(2) + 4.0 * n11 * n11,
        d1 * d1 + d2 * d2,
        s1 * s1 + s2 * s2,
        d1 * s1 * (s1 * s1 - 3.0 * s2 * s2) + d2 * s2 * (3.0 * s1 * s1 - s2 * s2),
        (n20 - n02) * (s1 * s1 - s2 * s2) + 4.0 * n11 * s1 * s2,
        d2 * s1 * (s1 * s1 - 3.0 * s2 * s2) - d1 * s2 * (3.0 * s1 * s1 - s2 * s2),
    ];

    let (rmin, rmax) = coords.iter().fold((usize::MAX, 0), |a, &(r, _)| (a.0.min(r), a.1.max(r)));
    let (cmin, cmax) = coords.iter().fold((usize::MAX, 0), |a, &(_, c)| (a.0.min(c), a.1.max(c)));
    let bbox_height = (rmax - rmin + 1) as f64;
    let bbox_width = (cmax - cmin + 1) as f64;

    let convex = convex_image(&mask, &coords);
    let convex_area = convex.count() as f64;

    Ok(RegionFeatures {
        area,
        convex_area,
        perimeter: crofton_perimeter(&mask),
        axis_major_length: 4.0 * l1.sqrt(),
        axis_minor_length: 4.0 * l2.sqrt(),
        extent: area / (bbox_height * bbox_width),
        eccentricity,
        solidity: area / convex_area,
        feret_diameter_max: feret_max(&convex),
        hu_moments,
        bbox_width,
        bbox_height,
    })
}
