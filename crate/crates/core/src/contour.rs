//! Outline extraction from binary masks and uniform arc-length resampling.
//!
//! Coordinates follow the pixel grid: `x` is the column index and `y` the row
//! index of a pixel center. Orientation is measured with the shoelace formula
//! in that `(x, y)` frame, so "counterclockwise" means positive signed area.

use std::collections::{HashMap, VecDeque};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Row-major boolean pixel grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    pixels: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, pixels: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(Error::Shape(format!(
                "mask of {width}x{height} needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Builds a mask from rows of text where `#` (or `1`) marks foreground.
    pub fn from_rows(rows: &[&str]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map(|r| r.len()).unwrap_or(0);
        let mut pixels = Vec::with_capacity(width * height);
        for row in rows {
            if row.len() != width {
                return Err(Error::Shape("ragged mask rows".into()));
            }
            pixels.extend(row.bytes().map(|b| b == b'#' || b == b'1'));
        }
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[bool] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.pixels[row * self.width + col]
    }

    pub fn count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p).count()
    }

    /// Labels 4-connected foreground components; returns (labels, sizes) with
    /// label 0 meaning background and component `i` stored as label `i + 1`.
    pub fn components(&self) -> (Vec<u32>, Vec<usize>) {
        let mut labels = vec![0u32; self.pixels.len()];
        let mut sizes = Vec::new();
        let mut queue = VecDeque::new();
        for start in 0..self.pixels.len() {
            if !self.pixels[start] || labels[start] != 0 {
                continue;
            }
            let label = sizes.len() as u32 + 1;
            labels[start] = label;
            queue.push_back(start);
            let mut size = 0;
            while let Some(idx) = queue.pop_front() {
                size += 1;
                let (r, c) = (idx / self.width, idx % self.width);
                let mut visit = |nr: usize, nc: usize| {
                    let n = nr * self.width + nc;
                    if self.pixels[n] && labels[n] == 0 {
                        labels[n] = label;
                        queue.push_back(n);
                    }
                };
                if r > 0 {
                    visit(r - 1, c);
                }
                if r + 1 < self.height {
                    visit(r + 1, c);
                }
                if c > 0 {
                    visit(r, c - 1);
                }
                if c + 1 < self.width {
                    visit(r, c + 1);
                }
            }
            sizes.push(size);
        }
        (labels, sizes)
    }

    /// Keeps only the largest 4-connected component (first one on ties).
    pub fn largest_component(&self) -> Result<BinaryMask> {
        let (labels, sizes) = self.components();
        if sizes.is_empty() {
            return Err(Error::Contour("mask has no foreground pixels".into()));
        }
        if sizes.len() > 1 {
            log::warn!(
                "mask has {} connected components; keeping the largest",
                sizes.len()
            );
        }
        let best = sizes
            .iter()
            .enumerate()
            .fold((0, 0), |acc, (i, &s)| if s > acc.1 { (i, s) } else { acc })
            .0 as u32
            + 1;
        let pixels = labels.iter().map(|&l| l == best).collect();
        BinaryMask::new(self.width, self.height, pixels)
    }

    /// Rasterizes a closed polygon onto a `width x height` grid: a pixel is
    /// foreground when its center lies inside (even-odd rule).
    pub fn rasterize(polygon: &[Point], width: usize, height: usize) -> Result<BinaryMask> {
        let mut pixels = vec![false; width * height];
        let n = polygon.len();
        for row in 0..height {
            let y = row as f64;
            let mut crossings: Vec<f64> = Vec::new();
            for i in 0..n {
                let a = polygon[i];
                let b = polygon[(i + 1) % n];
                if (a[1] <= y && b[1] > y) || (b[1] <= y && a[1] > y) {
                    let t = (y - a[1]) / (b[1] - a[1]);
                    crossings.push(a[0] + t * (b[0] - a[0]));
                }
            }
            crossings.sort_by(|a, b| a.total_cmp(b));
            for pair in crossings.chunks_exact(2) {
                let lo = pair[0].ceil().max(0.0);
                let hi = pair[1];
                let mut col = lo as usize;
                while (col as f64) < hi && col < width {
                    pixels[row * width + col] = true;
                    col += 1;
                }
            }
        }
        BinaryMask::new(width, height, pixels)
    }
}

/// Closed polygon; the last vertex connects back to the first.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    vertices: Vec<Point>,
}

impl Polygon {
    pub fn new(vertices: Vec<Point>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::Contour(format!(
                "polygon needs at least 3 vertices, got {}",
                vertices.len()
            )));
        }
        let n = vertices.len();
        for i in 0..n {
            if vertices[i] == vertices[(i + 1) % n] {
                return Err(Error::Contour(format!("repeated vertex at index {i}")));
            }
        }
        Ok(Self { vertices })
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn into_vertices(self) -> Vec<Point> {
        self.vertices
    }

    pub fn signed_area(&self) -> f64 {
        signed_area(&self.vertices)
    }

    pub fn perimeter(&self) -> f64 {
        perimeter(&self.vertices)
    }
}

/// `N` ordered outline points with `N` a power of two (at least 4) and
/// counterclockwise orientation.
#[derive(Debug, Clone, PartialEq)]
pub struct ContourSequence {
    points: Vec<Point>,
}

impl ContourSequence {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        let n = points.len();
        if n < 4 || !n.is_power_of_two() {
            return Err(Error::Config(format!(
                "contour length must be a power of two >= 4, got {n}"
            )));
        }
        if points.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(Error::Contour("non-finite contour coordinate".into()));
        }
        if signed_area(&points) <= 0.0 {
            return Err(Error::Contour(
                "contour must be counterclockwise (positive signed area)".into(),
            ));
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point> {
        self.points
    }

    /// Largest distance between any two points.
    pub fn diameter(&self) -> f64 {
        diameter(&self.points)
    }
}

impl AsRef<[Point]> for ContourSequence {
    fn as_ref(&self) -> &[Point] {
        &self.points
    }
}

pub fn signed_area(points: &[Point]) -> f64 {
    let n = points.len();
    let mut acc = 0.0;
    for i in 0..n {
        let a = points[i];
        let b = points[(i + 1) % n];
        acc += a[0] * b[1] - b[0] * a[1];
    }
    0.5 * acc
}

pub fn perimeter(points: &[Point]) -> f64 {
    let n = points.len();
    (0..n).map(|i| dist(points[i], points[(i + 1) % n])).sum()
}

pub fn diameter(points: &[Point]) -> f64 {
    let mut best: f64 = 0.0;
    for (i, &a) in points.iter().enumerate() {
        for &b in &points[i + 1..] {
            best = best.max(dist(a, b));
        }
    }
    best
}

#[inline]
pub(crate) fn dist(a: Point, b: Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    (dx * dx + dy * dy).sqrt()
}

/// Reorders a point list to start at `origin` and travel in `direction`
/// (`+1` keeps the order, `-1` reverses it): element `i` of the result is
/// `points[(i * direction + origin) mod N]`.
pub fn roll(points: &[Point], origin: usize, direction: i8) -> Vec<Point> {
    let n = points.len() as i64;
    (0..n)
        .map(|i| points[(i * direction as i64 + origin as i64).rem_euclid(n) as usize])
        .collect()
}

// Grid-edge identifier of a marching-squares crossing: (row, col, vertical?).
type EdgeKey = (usize, usize, bool);

/// Marching-squares iso-contour of the mask at `level`.
///
/// The mask is reduced to its largest 4-connected component, zero-padded by
/// one pixel, and every closed iso-line is traced; the one with the greatest
/// perimeter is returned. Crossings are linearly interpolated along cell
/// edges. Saddle cells are resolved by comparing the mean of the four corner
/// values against `level`: above joins the high corners, otherwise the high
/// corners stay separate.
pub fn extract_outline(mask: &BinaryMask, level: f64) -> Result<Polygon> {
    let mask = mask.largest_component()?;
    let loops = iso_contours(&mask, level)?;
    loops
        .into_iter()
        .map(|p| {
            let per = perimeter(&p);
            (p, per)
        })
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or_else(|| Error::Contour("no closed contour found".into()))
        .and_then(|(p, _)| Polygon::new(p))
}

/// All closed iso-lines of a mask (no component filtering).
pub fn iso_contours(mask: &BinaryMask, level: f64) -> Result<Vec<Vec<Point>>> {
    let (h, w) = (mask.height() + 2, mask.width() + 2);
    let value = |r: usize, c: usize| -> f64 {
        if r == 0 || c == 0 || r == h - 1 || c == w - 1 {
            0.0
        } else if mask.get(r - 1, c - 1) {
            1.0
        } else {
            0.0
        }
    };

    // Undirected adjacency between edge crossings.
    let mut adjacency: HashMap<EdgeKey, Vec<EdgeKey>> = HashMap::new();
    let mut order: Vec<EdgeKey> = Vec::new();
    let mut link = |a: EdgeKey, b: EdgeKey, order: &mut Vec<EdgeKey>| {
        for (x, y) in [(a, b), (b, a)] {
            let entry = adjacency.entry(x).or_insert_with(|| {
                order.push(x);
                Vec::new()
            });
            entry.push(y);
        }
    };

    for r in 0..h - 1 {
        for c in 0..w - 1 {
            let tl = value(r, c);
            let tr = value(r, c + 1);
            let br = value(r + 1, c + 1);
            let bl = value(r + 1, c);
            let (htl, htr, hbr, hbl) = (tl > level, tr > level, br > level, bl > level);
            let top: EdgeKey = (r, c, false);
            let bottom: EdgeKey = (r + 1, c, false);
            let left: EdgeKey = (r, c, true);
            let right: EdgeKey = (r, c + 1, true);
            let mut crossed = Vec::with_capacity(4);
            if htl != htr {
                crossed.push(top);
            }
            if htr != hbr {
                crossed.push(right);
            }
            if hbl != hbr {
                crossed.push(bottom);
            }
            if htl != hbl {
                crossed.push(left);
            }
            match crossed.len() {
                0 => {}
                2 => link(crossed[0], crossed[1], &mut order),
                4 => {
                    let center_high = (tl + tr + br + bl) / 4.0 > level;
                    // Diagonal pair tl/br shares a state, as does tr/bl.
                    let corners_high_tl_br = htl;
                    if center_high == corners_high_tl_br {
                        // tl and br are joined; cut off tr and bl.
                        link(top, right, &mut order);
                        link(left, bottom, &mut order);
                    } else {
                        // tr and bl are joined; cut off tl and br.
                        link(top, left, &mut order);
                        link(right, bottom, &mut order);
                    }
                }
                _ => unreachable!("a cell has 0, 2 or 4 crossed edges"),
            }
        }
    }

    let point_of = |key: EdgeKey| -> Point {
        let (r, c, vertical) = key;
        let (va, vb, (ra, ca), (rb, cb)) = if vertical {
            (value(r, c), value(r + 1, c), (r, c), (r + 1, c))
        } else {
            (value(r, c), value(r, c + 1), (r, c), (r, c + 1))
        };
        let t = (level - va) / (vb - va);
        let row = ra as f64 + t * (rb as f64 - ra as f64);
        let col = ca as f64 + t * (cb as f64 - ca as f64);
        // Undo the one-pixel pad.
        [col - 1.0, row - 1.0]
    };

    let mut visited: HashMap<EdgeKey, bool> = HashMap::with_capacity(order.len());
    let mut loops = Vec::new();
    for &start in &order {
        if visited.contains_key(&start) {
            continue;
        }
        let mut ring = vec![point_of(start)];
        visited.insert(start, true);
        let mut prev = start;
        let mut current = adjacency[&start][0];
        let mut closed = false;
        loop {
            if current == start {
                closed = true;
                break;
            }
            if visited.contains_key(&current) {
                break;
            }
            visited.insert(current, true);
            ring.push(point_of(current));
            let nbrs = &adjacency[&current];
            let next = if nbrs[0] != prev { nbrs[0] } else { nbrs[1] };
            prev = current;
            current = next;
        }
        if closed && ring.len() >= 3 {
            loops.push(ring);
        }
    }
    if loops.is_empty() {
        return Err(Error::Contour("mask produced no closed contour".into()));
    }
    Ok(loops)
}

/// Returns the polygon oriented counterclockwise (positive shoelace area).
pub fn ensure_ccw(polygon: Polygon) -> Result<Polygon> {
    let area = polygon.signed_area();
    let scale = polygon.perimeter().powi(2);
    if area.abs() <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::Contour("polygon has zero area".into()));
    }
    if area > 0.0 {
        Ok(polygon)
    } else {
        let mut v = polygon.into_vertices();
        v.reverse();
        Ok(Polygon { vertices: v })
    }
}

/// Samples `n` points at equal arc-length spacing `perimeter / n` along the
/// closed polyline, starting `origin` arc-length units past vertex 0.
pub fn resample_uniform(polygon: &Polygon, n: usize, origin: f64) -> Result<ContourSequence> {
    if n < 4 || !n.is_power_of_two() {
        return Err(Error::Config(format!(
            "sample count must be a power of two >= 4, got {n}"
        )));
    }
    let points = resample_points(polygon.vertices(), n, origin)?;
    ContourSequence::new(points)
}

/// Uniform arc-length resampling of a closed polyline without the
/// orientation/power-of-two checks of [`ContourSequence`].
pub fn resample_points(vertices: &[Point], n: usize, origin: f64) -> Result<Vec<Point>> {
    let m = vertices.len();
    let mut cumulative = Vec::with_capacity(m + 1);
    cumulative.push(0.0);
    for i in 0..m {
        let len = dist(vertices[i], vertices[(i + 1) % m]);
        cumulative.push(cumulative[i] + len);
    }
    let total = cumulative[m];
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::Contour("polygon perimeter must be positive".into()));
    }
    let spacing = total / n as f64;
    let mut out = Vec::with_capacity(n);
    for j in 0..n {
        let s = (origin + j as f64 * spacing).rem_euclid(total);
        // Last segment whose start is <= s.
        let seg = match cumulative.partition_point(|&c| c <= s) {
            0 => 0,
            k => (k - 1).min(m - 1),
        };
        let a = vertices[seg];
        let b = vertices[(seg + 1) % m];
        let len = cumulative[seg + 1] - cumulative[seg];
        let t = if len > 0.0 {
            (s - cumulative[seg]) / len
        } else {
            0.0
        };
        out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
    }
    Ok(out)
}

/// Writes outlines as CSV rows `object_id,index,x,y`.
pub fn write_outlines_csv(path: impl AsRef<std::path::Path>, outlines: &[(String, Vec<Point>)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["object_id", "index", "x", "y"])?;
    for (id, pts) in outlines {
        for (i, p) in pts.iter().enumerate() {
            w.write_record([id.clone(), i.to_string(), format!("{:e}", p[0]), format!("{:e}", p[1])])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads outlines written by [`write_outlines_csv`], in file order.
pub fn read_outlines_csv(path: impl AsRef<std::path::Path>) -> Result<Vec<(String, Vec<Point>)>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path)?;
    let mut out: Vec<(String, Vec<Point>)> = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| Error::Format(format!("{}: row {}: bad {what}", path.display(), line + 2));
        if rec.len() != 4 {
            return Err(bad("column count"));
        }
        let index: usize = rec[1].trim().parse().map_err(|_| bad("index"))?;
        let x: f64 = rec[2].trim().parse().map_err(|_| bad("x"))?;
        let y: f64 = rec[3].trim().parse().map_err(|_| bad("y"))?;
        match out.last_mut() {
            Some((id, pts)) if id == &rec[0] => {
                if index != pts.len() {
                    return Err(bad("index"));
                }
                pts.push([x, y]);
            }
            _ => {
                if index != 0 {
                    return Err(bad("index"));
                }
                out.push((rec[0].to_string(), vec![[x, y]]));
            }
        }
    }
    if out.is_empty() {
        return Err(Error::NoData(format!("{}: no outlines", path.display())));
    }
    Ok(out)
}
