//! Planar geometry over community polygons: area/chord/aspect summaries, the
//! community-specific analysis radius, point-in-polygon tests, and the
//! isotropic edge-correction weights used by the K estimators.
//!
//! All coordinates are meters in a projected CRS. Polygons are simple rings
//! without holes; both orientations are accepted.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bounding-box aspect ratio above which a polygon counts as elongated.
pub const COMPACT_ASPECT_LIMIT: f64 = 1.5;
/// Chord fraction bounding `r_max` for elongated polygons.
pub const ELONGATED_CHORD_FACTOR: f64 = 0.8;
/// Fraction of `r_max` actually used for estimation.
pub const EFFECTIVE_RANGE_FACTOR: f64 = 0.9;
/// Number of circumference samples for edge-correction weights (0.5° steps).
pub const EDGE_WEIGHT_SAMPLES: usize = 720;
/// Default cap on edge-correction weights; bounds estimator variance near
/// slivers at the cost of a small bias.
pub const DEFAULT_WEIGHT_CAP: f64 = 10.0;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("polygon needs at least 3 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("polygon has zero area")]
    ZeroArea,
    #[error("polygon is self-intersecting (edges {0} and {1})")]
    SelfIntersecting(usize, usize),
    #[error("polygon has repeated consecutive vertices at index {0}")]
    RepeatedVertex(usize),
    #[error("circle center lies outside the polygon")]
    CenterOutside,
    #[error("radius must be positive, got {0}")]
    NonPositiveRadius(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn dist2(&self, other: &Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    #[inline]
    pub fn dist(&self, other: &Point) -> f64 {
        self.dist2(other).sqrt()
    }
}

#[inline]
fn cross(ox: f64, oy: f64, ax: f64, ay: f64) -> f64 {
    ox * ay - oy * ax
}

/// A simple planar polygon stored as an open vertex ring.
#[derive(Debug, Clone)]
pub struct Polygon {
    vertices: Vec<Point>,
    /// Coordinate magnitude bound, cached for boundary tolerances.
    scale: f64,
}

impl Polygon {
    /// Builds a polygon from a vertex ring, rejecting degenerate and
    /// self-intersecting rings. A closing vertex equal to the first is
    /// dropped.
    pub fn new(mut vertices: Vec<Point>) -> Result<Self, GeometryError> {
        if vertices.len() >= 2 && vertices.first() == vertices.last() {
            vertices.pop();
        }
        if vertices.len() < 3 {
            return Err(GeometryError::TooFewVertices(vertices.len()));
        }
        for i in 0..vertices.len() {
            let j = (i + 1) % vertices.len();
            if vertices[i] == vertices[j] {
                return Err(GeometryError::RepeatedVertex(i));
            }
        }
        let scale = vertices
            .iter()
            .map(|p| p.x.abs().max(p.y.abs()))
            .fold(1.0, f64::max);
        let poly = Self { vertices, scale };
        poly.check_simple()?;
        if poly.area() <= f64::EPSILON * scale * scale {
            return Err(GeometryError::ZeroArea);
        }
        Ok(poly)
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    fn scale(&self) -> f64 {
        self.scale
    }

    /// Shoelace area, absolute value.
    pub fn area(&self) -> f64 {
        let n = self.vertices.len();
        let mut acc = 0.0;
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            acc += a.x * b.y - b.x * a.y;
        }
        (acc / 2.0).abs()
    }

    pub fn bbox(&self) -> (Point, Point) {
        let mut lo = Point::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &self.vertices {
            lo.x = lo.x.min(p.x);
            lo.y = lo.y.min(p.y);
            hi.x = hi.x.max(p.x);
            hi.y = hi.y.max(p.y);
        }
        (lo, hi)
    }

    /// Even-odd ray-casting containment; boundary points count as inside.
    /// The parity test runs first; only points it classifies as outside pay
    /// for the boundary sweep (a boundary point rated inside by parity gives
    /// the same answer either way).
    pub fn contains(&self, p: Point) -> bool {
        let n = self.vertices.len();
        let mut inside = false;
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            if (a.y > p.y) != (b.y > p.y) {
                let x_cross = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
                if p.x < x_cross {
                    inside = !inside;
                }
            }
        }
        inside || self.on_boundary(p)
    }

    fn on_boundary(&self, p: Point) -> bool {
        let eps = 1e-9 * self.scale();
        let eps2 = eps * eps;
        let n = self.vertices.len();
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            let ex = b.x - a.x;
            let ey = b.y - a.y;
            let px = p.x - a.x;
            let py = p.y - a.y;
            let c = cross(ex, ey, px, py);
            let len2 = ex * ex + ey * ey;
            // |c| = distance·|edge|, so c² ≤ eps²·len² tests distance ≤ eps.
            if c * c > eps2 * len2 {
                continue;
            }
            let dot = px * ex + py * ey;
            let slack = eps * (1.0 + len2);
            if dot >= -slack && dot <= len2 + slack {
                return true;
            }
        }
        false
    }

    /// O(n²) pairwise proper-intersection test over non-adjacent edges.
    fn check_simple(&self) -> Result<(), GeometryError> {
        let n = self.vertices.len();
        for i in 0..n {
            let a1 = self.vertices[i];
            let a2 = self.vertices[(i + 1) % n];
            for j in (i + 1)..n {
                // Skip edges sharing a vertex with edge i.
                if j == i || (j + 1) % n == i || (i + 1) % n == j {
                    continue;
                }
                let b1 = self.vertices[j];
                let b2 = self.vertices[(j + 1) % n];
                if segments_properly_intersect(a1, a2, b1, b2) {
                    return Err(GeometryError::SelfIntersecting(i, j));
                }
            }
        }
        Ok(())
    }

    /// Distances from `center` along direction `(cos θ, sin θ)` at which the
    /// ray crosses the polygon boundary, sorted ascending. Shared edge
    /// endpoints are half-open so a crossing at a vertex is counted once.
    fn ray_crossings(&self, center: Point, dir_x: f64, dir_y: f64, out: &mut Vec<f64>) {
        out.clear();
        let n = self.vertices.len();
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            let ex = b.x - a.x;
            let ey = b.y - a.y;
            let denom = cross(dir_x, dir_y, ex, ey);
            if denom.abs() < 1e-14 {
                continue;
            }
            let wx = a.x - center.x;
            let wy = a.y - center.y;
            let t = cross(wx, wy, ex, ey) / denom;
            let u = cross(wx, wy, dir_x, dir_y) / denom;
            if t > 0.0 && (0.0..1.0).contains(&u) {
                out.push(t);
            }
        }
        out.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    }
}

fn segments_properly_intersect(a1: Point, a2: Point, b1: Point, b2: Point) -> bool {
    let d1 = cross(a2.x - a1.x, a2.y - a1.y, b1.x - a1.x, b1.y - a1.y);
    let d2 = cross(a2.x - a1.x, a2.y - a1.y, b2.x - a1.x, b2.y - a1.y);
    let d3 = cross(b2.x - b1.x, b2.y - b1.y, a1.x - b1.x, a1.y - b1.y);
    let d4 = cross(b2.x - b1.x, b2.y - b1.y, a2.x - b1.x, a2.y - b1.y);
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

/// Ray-casting containment as a free function.
pub fn point_in_polygon(polygon: &Polygon, point: Point) -> bool {
    polygon.contains(point)
}

/// Raw polygon shape measures.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PolygonMetrics {
    /// Shoelace area, m².
    pub area: f64,
    /// Axis-aligned bounding-box aspect ratio, ≥ 1.
    pub bbox_aspect: f64,
    /// Maximum pairwise distance over boundary vertices, m.
    pub max_chord: f64,
}

/// Computes area, bounding-box aspect, and maximum chord of a polygon.
pub fn polygon_metrics(polygon: &Polygon) -> PolygonMetrics {
    let area = polygon.area();
    let (lo, hi) = polygon.bbox();
    let w = hi.x - lo.x;
    let h = hi.y - lo.y;
    let bbox_aspect = if w >= h { w / h } else { h / w };
    let verts = polygon.vertices();
    let mut max_chord: f64 = 0.0;
    for i in 0..verts.len() {
        for j in (i + 1)..verts.len() {
            max_chord = max_chord.max(verts[i].dist2(&verts[j]));
        }
    }
    PolygonMetrics { area, bbox_aspect, max_chord: max_chord.sqrt() }
}

/// Maximum analysis distance from polygon shape: the area-based reference
/// radius `r_c = sqrt(area/π)` for compact polygons, clipped by a chord
/// fraction for elongated ones.
pub fn compute_r_max(metrics: &PolygonMetrics) -> f64 {
    let r_c = (metrics.area / std::f64::consts::PI).sqrt();
    if metrics.bbox_aspect <= COMPACT_ASPECT_LIMIT {
        r_c
    } else {
        r_c.min(ELONGATED_CHORD_FACTOR * metrics.max_chord)
    }
}

/// Full per-community geometric summary.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GeometrySummary {
    pub area: f64,
    pub bbox_aspect: f64,
    pub max_chord: f64,
    /// Area-based reference radius `sqrt(area/π)`.
    pub r_c: f64,
    pub r_max: f64,
    /// Effective analysis distance `0.9 · r_max`.
    pub r_eff: f64,
}

impl GeometrySummary {
    pub fn from_polygon(polygon: &Polygon) -> Self {
        let m = polygon_metrics(polygon);
        let r_c = (m.area / std::f64::consts::PI).sqrt();
        let r_max = compute_r_max(&m);
        Self {
            area: m.area,
            bbox_aspect: m.bbox_aspect,
            max_chord: m.max_chord,
            r_c,
            r_max,
            r_eff: EFFECTIVE_RANGE_FACTOR * r_max,
        }
    }
}

/// Fraction of the circumference of the circle `(center, radius)` lying
/// inside the polygon, by uniform angular sampling.
pub fn circle_inside_fraction(polygon: &Polygon, center: Point, radius: f64) -> f64 {
    let mut inside = 0usize;
    for k in 0..EDGE_WEIGHT_SAMPLES {
        let theta = 2.0 * std::f64::consts::PI * k as f64 / EDGE_WEIGHT_SAMPLES as f64;
        let p = Point::new(center.x + radius * theta.cos(), center.y + radius * theta.sin());
        if polygon.contains(p) {
            inside += 1;
        }
    }
    inside as f64 / EDGE_WEIGHT_SAMPLES as f64
}

/// Isotropic edge-correction weight: the reciprocal of the circumference
/// fraction inside the polygon, capped at `cap`.
pub fn edge_weight(
    polygon: &Polygon,
    center: Point,
    radius: f64,
    cap: f64,
) -> Result<f64, GeometryError> {
    if radius <= 0.0 {
        return Err(GeometryError::NonPositiveRadius(radius));
    }
    if !polygon.contains(center) {
        return Err(GeometryError::CenterOutside);
    }
    let f = circle_inside_fraction(polygon, center, radius);
    if f <= 0.0 {
        return Ok(cap);
    }
    Ok((1.0 / f).min(cap))
}

/// Precomputed edge-correction weights for a fixed set of centers on a
/// radius grid scaled to the community (`max_radius / n_bins` per bin).
///
/// The table is immutable after construction and safe to share across
/// workers. Lookups quantize the query distance to the nearest bin radius;
/// the per-bin values reproduce the angular-sampling weights by tracking,
/// per sampled direction, the boundary crossings along the radial ray.
#[derive(Debug, Clone)]
pub struct EdgeWeightTable {
    n_bins: usize,
    inv_bin_width: f64,
    weights: Vec<f64>,
}

impl EdgeWeightTable {
    pub const DEFAULT_BINS: usize = 1024;

    pub fn build(
        polygon: &Polygon,
        centers: &[Point],
        max_radius: f64,
        n_bins: usize,
        cap: f64,
    ) -> Self {
        assert!(max_radius > 0.0 && n_bins > 0);
        let bin_width = max_radius / n_bins as f64;
        let mut weights = vec![0.0; centers.len() * n_bins];
        let mut crossings: Vec<f64> = Vec::new();
        // (distance, parity delta) of every ray's boundary crossings, merged.
        let mut events: Vec<(f64, i32)> = Vec::new();
        for (ci, &center) in centers.iter().enumerate() {
            events.clear();
            let start_inside = polygon.contains(center);
            for k in 0..EDGE_WEIGHT_SAMPLES {
                let theta = 2.0 * std::f64::consts::PI * k as f64 / EDGE_WEIGHT_SAMPLES as f64;
                polygon.ray_crossings(center, theta.cos(), theta.sin(), &mut crossings);
                let mut inside = start_inside;
                for &t in crossings.iter() {
                    events.push((t, if inside { -1 } else { 1 }));
                    inside = !inside;
                }
            }
            events.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            let mut count = if start_inside { EDGE_WEIGHT_SAMPLES as i64 } else { 0 };
            let mut ev = 0usize;
            let row = &mut weights[ci * n_bins..(ci + 1) * n_bins];
            for (b, slot) in row.iter_mut().enumerate() {
                let radius = (b + 1) as f64 * bin_width;
                while ev < events.len() && events[ev].0 <= radius {
                    count += i64::from(events[ev].1);
                    ev += 1;
                }
                let f = count.max(0) as f64 / EDGE_WEIGHT_SAMPLES as f64;
                *slot = if f > 0.0 { (1.0 / f).min(cap) } else { cap };
            }
        }
        Self { n_bins, inv_bin_width: 1.0 / bin_width, weights }
    }

    /// Weight for the circle centered at `centers[center_idx]` with the query
    /// distance snapped to the nearest bin radius.
    #[inline]
    pub fn weight(&self, center_idx: usize, dist: f64) -> f64 {
        self.row(center_idx).weight(dist)
    }

    /// Borrowed view of one center's weights, for hot loops that hold a
    /// source fixed.
    #[inline]
    pub fn row(&self, center_idx: usize) -> WeightRow<'_> {
        WeightRow {
            weights: &self.weights[center_idx * self.n_bins..(center_idx + 1) * self.n_bins],
            inv_bin_width: self.inv_bin_width,
        }
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }
}

/// One center's edge-correction weights over the radius bins.
#[derive(Clone, Copy)]
pub struct WeightRow<'a> {
    weights: &'a [f64],
    inv_bin_width: f64,
}

impl WeightRow<'_> {
    /// Weight at the nearest bin radius (half-up rounding via a truncating
    /// cast, which stays on the SSE2 fast path).
    #[inline(always)]
    pub fn weight(&self, dist: f64) -> f64 {
        let bin = (dist * self.inv_bin_width + 0.5) as usize;
        let bin = bin.clamp(1, self.weights.len());
        self.weights[bin - 1]
    }
}
