//! Road networks: segment graph with polyline centerlines, JSON I/O and a
//! Manhattan-grid generator.

use std::collections::HashMap;
use std::f64::consts::FRAC_PI_2;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum gap between a segment's end and each successor's start (m).
pub const CONTINUITY_TOLERANCE: f64 = 0.01;

/// Piecewise-linear curve with cumulative arc length.
#[derive(Clone, Debug, PartialEq)]
pub struct Polyline {
    points: Vec<[f64; 2]>,
    cumulative: Vec<f64>,
}

/// Closest point on a polyline whose end pieces extend to infinity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    /// Arc length of the foot point; negative before the start, beyond
    /// `length()` past the end.
    pub s: f64,
    pub distance: f64,
    /// Positive to the left of the direction of travel.
    pub lateral: f64,
    pub heading: f64,
}

impl Polyline {
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidConfig("polyline needs at least two points".into()));
        }
        let mut cumulative = Vec::with_capacity(points.len());
        cumulative.push(0.0);
        for w in points.windows(2) {
            let d = dist(w[0], w[1]);
            if !(d > 0.0) {
                return Err(Error::InvalidConfig("polyline has repeated points".into()));
            }
            cumulative.push(cumulative.last().unwrap() + d);
        }
        Ok(Polyline { points, cumulative })
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    pub fn start(&self) -> [f64; 2] {
        self.points[0]
    }

    pub fn end(&self) -> [f64; 2] {
        *self.points.last().unwrap()
    }

    /// Point at arc length `s`, extrapolating along the end tangents.
    pub fn point_at(&self, s: f64) -> [f64; 2] {
        let last = self.points.len() - 2;
        let i = match self.cumulative.binary_search_by(|c| c.total_cmp(&s)) {
            Ok(i) | Err(i) => i.saturating_sub(1).min(last),
        };
        let (a, b) = (self.points[i], self.points[i + 1]);
        let t = (s - self.cumulative[i]) / (self.cumulative[i + 1] - self.cumulative[i]);
        [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
    }

    /// Projection onto the polyline with extended end pieces.
    pub fn project(&self, p: [f64; 2]) -> Projection {
        let last = self.points.len() - 2;
        let mut best = Projection {
            s: 0.0,
            distance: f64::INFINITY,
            lateral: 0.0,
            heading: 0.0,
        };
        for i in 0..=last {
            let (a, b) = (self.points[i], self.points[i + 1]);
            let len = self.cumulative[i + 1] - self.cumulative[i];
            let (tx, ty) = ((b[0] - a[0]) / len, (b[1] - a[1]) / len);
            let (dx, dy) = (p[0] - a[0], p[1] - a[1]);
            let mut along = dx * tx + dy * ty;
            if i > 0 {
                along = along.max(0.0);
            }
            if i < last {
                along = along.min(len);
            }
            let (fx, fy) = (a[0] + along * tx, a[1] + along * ty);
            let d = ((p[0] - fx).powi(2) + (p[1] - fy).powi(2)).sqrt();
            if d < best.distance {
                best = Projection {
                    s: self.cumulative[i] + along,
                    distance: d,
                    lateral: tx * dy - ty * dx,
                    heading: ty.atan2(tx),
                };
            }
        }
        best
    }

    /// Euclidean distance to the curve itself, without extension.
    pub fn distance(&self, p: [f64; 2]) -> f64 {
        self.points
            .windows(2)
            .map(|w| {
                let (a, b) = (w[0], w[1]);
                let (ex, ey) = (b[0] - a[0], b[1] - a[1]);
                let t = (((p[0] - a[0]) * ex + (p[1] - a[1]) * ey) / (ex * ex + ey * ey)).clamp(0.0, 1.0);
                ((p[0] - a[0] - t * ex).powi(2) + (p[1] - a[1] - t * ey).powi(2)).sqrt()
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Concatenation, dropping the duplicated joint point.
    pub fn join(&self, next: &Polyline) -> Result<Polyline> {
        let mut pts = self.points.clone();
        let skip = usize::from(dist(self.end(), next.start()) < 1e-9);
        pts.extend_from_slice(&next.points[skip..]);
        Polyline::new(pts)
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentSpec {
    pub id: String,
    pub centerline: Vec<[f64; 2]>,
    pub half_width: f64,
    pub successors: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub id: String,
    pub centerline: Polyline,
    pub half_width: f64,
    pub successors: Vec<String>,
}

/// Directed segment graph; multi-successor segments end at intersections.
#[derive(Clone, Debug, PartialEq)]
pub struct RoadNetwork {
    segments: Vec<Segment>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct NetworkFile {
    segments: Vec<SegmentSpec>,
}

impl RoadNetwork {
    pub fn new(specs: Vec<SegmentSpec>) -> Result<Self> {
        let mut index = HashMap::with_capacity(specs.len());
        let mut segments = Vec::with_capacity(specs.len());
        for (i, s) in specs.into_iter().enumerate() {
            if index.insert(s.id.clone(), i).is_some() {
                return Err(Error::InvalidConfig(format!("duplicate segment id {}", s.id)));
            }
            if !(s.half_width > 0.0) {
                return Err(Error::InvalidConfig(format!("segment {} has non-positive half width", s.id)));
            }
            segments.push(Segment {
                centerline: Polyline::new(s.centerline)?,
                id: s.id,
                half_width: s.half_width,
                successors: s.successors,
            });
        }
        let net = RoadNetwork { segments, index };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        for seg in &self.segments {
            for next in &seg.successors {
                let n = self.segment(next)?;
                let gap = dist(seg.centerline.end(), n.centerline.start());
                if gap > CONTINUITY_TOLERANCE {
                    return Err(Error::InvalidConfig(format!(
                        "segments {} and {next} are {gap:.3} m apart",
                        seg.id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, id: &str) -> Result<&Segment> {
        self.index
            .get(id)
            .map(|&i| &self.segments[i])
            .ok_or_else(|| Error::UnknownSegment(id.to_string()))
    }

    /// Centerline of `id` followed by its chain of unique successors until
    /// at least `extra` metres past its end.
    pub fn route(&self, id: &str, extra: f64) -> Result<Polyline> {
        let first = self.segment(id)?;
        let mut line = first.centerline.clone();
        let mut cur = first;
        let mut added = 0.0;
        while added < extra && cur.successors.len() == 1 {
            cur = self.segment(&cur.successors[0])?;
            line = line.join(&cur.centerline)?;
            added += cur.centerline.length();
        }
        Ok(line)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: NetworkFile = serde_json::from_str(text)?;
        RoadNetwork::new(file.segments)
    }

    pub fn load(path: &Path) -> Result<Self> {
        RoadNetwork::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        let file = NetworkFile {
            segments: self
                .segments
                .iter()
                .map(|s| SegmentSpec {
                    id: s.id.clone(),
                    centerline: s.centerline.points().to_vec(),
                    half_width: s.half_width,
                    successors: s.successors.clone(),
                })
                .collect(),
        };
        crate::io::to_json_17(&file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }
}

/// Heading directions on the grid.
const DIRECTIONS: [(char, i64, i64); 4] = [('E', 1, 0), ('N', 0, 1), ('W', -1, 0), ('S', 0, -1)];

/// Axis-aligned grid of two-way roads joined at every node by straight,
/// left and right connectors. Each connector starts with a straight lead-in
/// and turns along a quarter arc.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManhattanGrid {
    pub cols: usize,
    pub rows: usize,
    /// Node spacing (m).
    pub block: f64,
    /// Turn arc radius (m).
    pub radius: f64,
    /// Straight approach included in every connector (m).
    pub lead: f64,
    pub half_width: f64,
    /// Points per quarter arc.
    pub arc_points: usize,
}

impl Default for ManhattanGrid {
    fn default() -> Self {
        ManhattanGrid {
            cols: 3,
            rows: 3,
            block: 60.0,
            radius: 6.0,
            lead: 10.0,
            half_width: 1.75,
            arc_points: 16,
        }
    }
}

impl ManhattanGrid {
    /// Id of the road leaving node `(i, j)` heading `dir`.
    pub fn road_id(i: usize, j: usize, dir: char) -> String {
        format!("r{i}_{j}{dir}")
    }

    /// Id of the connector at node `(i, j)` from heading `from` to `to`.
    pub fn connector_id(i: usize, j: usize, from: char, to: char) -> String {
        format!("c{i}_{j}{from}{to}")
    }

    pub fn node(&self, i: usize, j: usize) -> [f64; 2] {
        [i as f64 * self.block, j as f64 * self.block]
    }

    fn inside(&self, i: i64, j: i64) -> bool {
        i >= 0 && j >= 0 && (i as usize) < self.cols && (j as usize) < self.rows
    }

    pub fn build(&self) -> Result<RoadNetwork> {
        if self.cols == 0 || self.rows == 0 || self.cols * self.rows < 2 {
            return Err(Error::InvalidConfig("grid needs at least two nodes".into()));
        }
        if !(self.radius > 0.0) || !(self.lead >= 0.0) || self.arc_points < 2 {
            return Err(Error::InvalidConfig("grid radius must be positive and lead nonnegative".into()));
        }
        if !(self.block > 2.0 * self.radius + self.lead) {
            return Err(Error::InvalidConfig("grid block must exceed the connector footprint".into()));
        }
        let r = self.radius;
        let mut specs = Vec::new();
        for i in 0..self.cols {
            for j in 0..self.rows {
                let p = self.node(i, j);
                for &(d, di, dj) in &DIRECTIONS {
                    let (ni, nj) = (i as i64 + di, j as i64 + dj);
                    if !self.inside(ni, nj) {
                        continue;
                    }
                    let (ni, nj) = (ni as usize, nj as usize);
                    let q = self.node(ni, nj);
                    let (ux, uy) = (di as f64, dj as f64);
                    let start = [p[0] + r * ux, p[1] + r * uy];
                    let end = [q[0] - (r + self.lead) * ux, q[1] - (r + self.lead) * uy];
                    let successors = DIRECTIONS
                        .iter()
                        .filter(|&&(_, oi, oj)| (oi, oj) != (-di, -dj) && self.inside(ni as i64 + oi, nj as i64 + oj))
                        .map(|&(o, _, _)| ManhattanGrid::connector_id(ni, nj, d, o))
                        .collect();
                    specs.push(SegmentSpec {
                        id: ManhattanGrid::road_id(i, j, d),
                        centerline: vec![start, end],
                        half_width: self.half_width,
                        successors,
                    });
                }
                for &(from, fi, fj) in &DIRECTIONS {
                    if !self.inside(i as i64 - fi, j as i64 - fj) {
                        continue;
                    }
                    for &(to, ti, tj) in &DIRECTIONS {
                        if (ti, tj) == (-fi, -fj) || !self.inside(i as i64 + ti, j as i64 + tj) {
                            continue;
                        }
                        specs.push(SegmentSpec {
                            id: ManhattanGrid::connector_id(i, j, from, to),
                            centerline: self.connector(p, (fi as f64, fj as f64), (ti as f64, tj as f64)),
                            half_width: self.half_width,
                            successors: vec![ManhattanGrid::road_id(i, j, to)],
                        });
                    }
                }
            }
        }
        RoadNetwork::new(specs)
    }

    fn connector(&self, p: [f64; 2], from: (f64, f64), to: (f64, f64)) -> Vec<[f64; 2]> {
        let r = self.radius;
        let approach = [p[0] - (r + self.lead) * from.0, p[1] - (r + self.lead) * from.1];
        let start = [p[0] - r * from.0, p[1] - r * from.1];
        let end = [p[0] + r * to.0, p[1] + r * to.1];
        if from == to {
            return vec![approach, end];
        }
        // Quarter arc about the corner shared by both tangents.
        let center = [start[0] + r * to.0, start[1] + r * to.1];
        let a0 = (start[1] - center[1]).atan2(start[0] - center[0]);
        let cross = from.0 * to.1 - from.1 * to.0;
        let sweep = FRAC_PI_2 * cross.signum();
        let n = self.arc_points;
        let lead_in = (self.lead > 0.0).then_some(approach);
        lead_in
            .into_iter()
            .chain((0..=n).map(|k| {
                if k == 0 {
                    start
                } else if k == n {
                    end
                } else {
                    let a = a0 + sweep * k as f64 / n as f64;
                    [center[0] + r * a.cos(), center[1] + r * a.sin()]
                }
            }))
            .collect()
    }
}
