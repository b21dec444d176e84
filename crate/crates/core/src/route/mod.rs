//! Exploration-route sampling over synthetic walkable scenes.
//!
//! Pipeline per attempt: pick two random navmesh vertices, take the Dijkstra
//! shortest path, Laplacian-smooth it, drop it if shorter than the minimum
//! length, resample it at a fixed physical stride and drop it if any step
//! clips an obstacle box.

mod collision;
mod delaunay;
mod graph;
mod rng;

use std::fmt;
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::plucker::CameraPose;
use crate::sphere::EulerAngles;

pub use collision::{Aabb, Collision};
pub use delaunay::{delaunay_triangulate, Edge, NavMesh};
pub use graph::WeightedGraph;
pub use rng::SplitMix64;

pub const DEFAULT_CAMERA_HEIGHT: f64 = 1.6;
pub const DEFAULT_STRIDE: f64 = 0.10;
pub const DEFAULT_MIN_LENGTH: f64 = 18.0;

fn default_camera_height() -> f64 {
    DEFAULT_CAMERA_HEIGHT
}

/// Walkable sample points on the ground plane plus obstacle boxes, meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkableScene {
    pub points: Vec<[f64; 2]>,
    #[serde(default)]
    pub obstacles: Vec<Aabb>,
    #[serde(default)]
    pub ground_z: f64,
    #[serde(default = "default_camera_height")]
    pub camera_height: f64,
}

impl WalkableScene {
    pub fn validate(&self) -> Result<()> {
        if self.points.len() < 3 {
            return Err(domain(format!("scene needs >= 3 points, has {}", self.points.len())));
        }
        if let Some(i) = self.obstacles.iter().position(|b| !b.is_valid()) {
            return Err(domain(format!("obstacle {i} must have min < max on every axis")));
        }
        if !(self.ground_z.is_finite() && self.camera_height.is_finite()) {
            return Err(domain("ground_z and camera_height must be finite"));
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let scene: Self = serde_json::from_str(s)?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Height at which the camera travels.
    pub fn eye_z(&self) -> f64 {
        self.ground_z + self.camera_height
    }

    /// Obstacle-free square grid of `n x n` points spaced `spacing` apart,
    /// starting at the origin.
    pub fn open_grid(n: usize, spacing: f64) -> Self {
        let points = (0..n)
            .flat_map(|i| (0..n).map(move |j| [i as f64 * spacing, j as f64 * spacing]))
            .collect();
        Self { points, obstacles: Vec::new(), ground_z: 0.0, camera_height: DEFAULT_CAMERA_HEIGHT }
    }
}

/// Ordered 2D points, at least two, consecutive points distinct.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    points: Vec<[f64; 2]>,
}

impl Polyline {
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self> {
        if points.len() < 2 {
            return Err(domain("polyline needs at least 2 points"));
        }
        if let Some(i) = points.windows(2).position(|w| w[0] == w[1]) {
            return Err(domain(format!("polyline points {i} and {} coincide", i + 1)));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn length(&self) -> f64 {
        self.points.windows(2).map(|w| delaunay::dist(w[0], w[1])).sum()
    }

    /// `sum |p[i+1] - 2 p[i] + p[i-1]|^2` over interior points.
    pub fn turning_energy(&self) -> f64 {
        self.points
            .windows(3)
            .map(|w| {
                let dx = w[2][0] - 2.0 * w[1][0] + w[0][0];
                let dy = w[2][1] - 2.0 * w[1][1] + w[0][1];
                dx * dx + dy * dy
            })
            .sum()
    }
}

/// Shortest mesh path between vertices `a` and `b`.
pub fn shortest_path(mesh: &NavMesh, a: usize, b: usize) -> Result<Polyline> {
    if a == b {
        return Err(domain("shortest path endpoints must differ"));
    }
    let (ids, _) = WeightedGraph::from_mesh(mesh).dijkstra(a, b)?;
    Polyline::new(ids.iter().map(|&i| mesh.vertices()[i]).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothConfig {
    pub lambda: f64,
    pub iterations: usize,
}

impl Default for SmoothConfig {
    fn default() -> Self {
        Self { lambda: 0.5, iterations: 10 }
    }
}

/// Moves every interior point toward the midpoint of its neighbors by
/// `lambda` per iteration (simultaneous update); endpoints stay put.
/// Paths with fewer than three points are returned unchanged.
pub fn laplacian_smooth(path: &Polyline, lambda: f64, iterations: usize) -> Result<Polyline> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(domain(format!("smoothing lambda must be in (0, 1], got {lambda}")));
    }
    let mut pts = path.points.clone();
    if pts.len() < 3 {
        return Ok(path.clone());
    }
    let mut next = pts.clone();
    for _ in 0..iterations {
        for i in 1..pts.len() - 1 {
            for k in 0..2 {
                let mid = 0.5 * (pts[i - 1][k] + pts[i + 1][k]);
                next[i][k] = pts[i][k] + lambda * (mid - pts[i][k]);
            }
        }
        std::mem::swap(&mut pts, &mut next);
    }
    pts.dedup();
    Polyline::new(pts)
}

/// First segment of `path` (lifted to camera height) that touches an
/// obstacle; within that segment the lowest obstacle index is reported.
pub fn collision_check(path: &Polyline, scene: &WalkableScene) -> Option<Collision> {
    let z = scene.eye_z();
    path.points.windows(2).enumerate().find_map(|(segment, w)| {
        let p0 = [w[0][0], w[0][1], z];
        let p1 = [w[1][0], w[1][1], z];
        scene
            .obstacles
            .iter()
            .position(|b| b.intersects_segment(p0, p1))
            .map(|obstacle| Collision { segment, obstacle })
    })
}

/// Orientation policy for resampled frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Heading {
    /// Yaw follows the direction of travel, pitch = roll = 0.
    Tangent,
    Fixed(EulerAngles<f64>),
}

/// Per-frame poses spaced `stride` meters apart.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplorationRoute {
    pub frames: Vec<CameraPose<f64>>,
    pub stride: f64,
}

impl ExplorationRoute {
    /// Sum of straight-line distances between consecutive frames.
    pub fn length(&self) -> f64 {
        self.frames
            .windows(2)
            .map(|w| {
                let (a, b) = (w[0].position, w[1].position);
                ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2) + (b[2] - a[2]).powi(2)).sqrt()
            })
            .sum()
    }

    pub fn ground_track(&self) -> Result<Polyline> {
        Polyline::new(self.frames.iter().map(|f| [f.position[0], f.position[1]]).collect())
    }

    /// One JSON object per line: `{"t","x","y","z","yaw","pitch","roll"}`.
    pub fn write_jsonl<W: Write>(&self, w: &mut W) -> Result<()> {
        for (t, f) in self.frames.iter().enumerate() {
            let line = RouteLine {
                t,
                x: f.position[0],
                y: f.position[1],
                z: f.position[2],
                yaw: f.orientation.yaw,
                pitch: f.orientation.pitch,
                roll: f.orientation.roll,
            };
            serde_json::to_writer(&mut *w, &line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Reads a route file. The stride is taken from the first step.
    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut frames = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: RouteLine = serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("route line {}: {e}", i + 1)))?;
            if rec.t != frames.len() {
                return Err(Error::Format(format!(
                    "route line {}: expected t = {}, got {}",
                    i + 1,
                    frames.len(),
                    rec.t
                )));
            }
            frames.push(CameraPose::new(
                [rec.x, rec.y, rec.z],
                EulerAngles::new(rec.yaw, rec.pitch, rec.roll),
            ));
        }
        if frames.is_empty() {
            return Err(Error::Format("route file has no frames".into()));
        }
        let mut route = Self { frames, stride: 0.0 };
        if route.frames.len() > 1 {
            route.stride = Self { frames: route.frames[..2].to_vec(), stride: 0.0 }.length();
        }
        Ok(route)
    }
}

#[derive(Serialize, Deserialize)]
struct RouteLine {
    t: usize,
    x: f64,
    y: f64,
    z: f64,
    yaw: f64,
    pitch: f64,
    roll: f64,
}

/// Walks `path` placing frames so consecutive frames are exactly `stride`
/// apart in a straight line. Each next frame is the first point further
/// along the path at distance `stride` from the current one; the sub-stride
/// tail is dropped.
pub fn normalize_route(
    path: &Polyline,
    stride: f64,
    heading: Heading,
    scene: &WalkableScene,
) -> Result<ExplorationRoute> {
    if !(stride > 0.0 && stride.is_finite()) {
        return Err(domain(format!("stride must be positive, got {stride}")));
    }
    let total = path.length();
    if total < stride {
        return Err(domain(format!("path length {total} is shorter than stride {stride}")));
    }
    let pts = &path.points;
    let mut positions = vec![pts[0]];
    let (mut seg, mut s_min) = (0usize, 0.0f64);
    'walk: loop {
        let c = *positions.last().expect("non-empty");
        while seg + 1 < pts.len() {
            if let Some(s) = circle_hit(pts[seg], pts[seg + 1], c, stride, s_min) {
                let (a, b) = (pts[seg], pts[seg + 1]);
                positions.push([a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])]);
                s_min = s;
                continue 'walk;
            }
            seg += 1;
            s_min = 0.0;
        }
        break;
    }
    if positions.len() < 2 {
        return Err(domain("path folds back within one stride; cannot resample"));
    }

    let z = scene.eye_z();
    let n = positions.len();
    let frames = positions
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let orientation = match heading {
                Heading::Fixed(e) => e,
                Heading::Tangent => {
                    let (a, b) = if i + 1 < n { (p, &positions[i + 1]) } else { (&positions[i - 1], p) };
                    EulerAngles::new((b[1] - a[1]).atan2(b[0] - a[0]), 0.0, 0.0)
                }
            };
            CameraPose::new([p[0], p[1], z], orientation)
        })
        .collect();
    Ok(ExplorationRoute { frames, stride })
}

/// The `s` in `[s_min, 1]` with `|a + s (b - a) - c| = r`, given that the
/// point at `s_min` lies inside the circle. The squared distance is convex in
/// `s`, so this is the larger root.
fn circle_hit(a: [f64; 2], b: [f64; 2], c: [f64; 2], r: f64, s_min: f64) -> Option<f64> {
    let d = [b[0] - a[0], b[1] - a[1]];
    let f = [a[0] - c[0], a[1] - c[1]];
    let qa = d[0] * d[0] + d[1] * d[1];
    let qb = 2.0 * (f[0] * d[0] + f[1] * d[1]);
    let qc = f[0] * f[0] + f[1] * f[1] - r * r;
    let disc = qb * qb - 4.0 * qa * qc;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let s = if qb >= 0.0 { 2.0 * qc / (-qb - sq) } else { (-qb + sq) / (2.0 * qa) };
    // accept a hit up to 1 nm past the segment end and snap it onto the end,
    // so rounding cannot drop a frame that lands exactly on a vertex
    let overshoot = 1e-9 / qa.sqrt();
    (s >= s_min - 1e-12 && s <= 1.0 + overshoot).then(|| s.clamp(s_min, 1.0))
}

/// Why attempts were rejected.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectionStats {
    pub attempts: usize,
    pub no_path: usize,
    pub too_short: usize,
    pub collision: usize,
    pub degenerate: usize,
}

impl RejectionStats {
    pub fn rejected(&self) -> usize {
        self.no_path + self.too_short + self.collision + self.degenerate
    }

    fn record(&mut self, r: Rejection) {
        match r {
            Rejection::NoPath => self.no_path += 1,
            Rejection::TooShort => self.too_short += 1,
            Rejection::Collision => self.collision += 1,
            Rejection::Degenerate => self.degenerate += 1,
        }
    }
}

impl fmt::Display for RejectionStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "attempts={} no_path={} too_short={} collision={} degenerate={}",
            self.attempts, self.no_path, self.too_short, self.collision, self.degenerate
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Rejection {
    NoPath,
    TooShort,
    Collision,
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleConfig {
    pub seed: u64,
    pub min_length: f64,
    pub max_attempts: usize,
    pub stride: f64,
    pub heading: Heading,
    pub smoothing: SmoothConfig,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            min_length: DEFAULT_MIN_LENGTH,
            max_attempts: 1000,
            stride: DEFAULT_STRIDE,
            heading: Heading::Tangent,
            smoothing: SmoothConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledRoute {
    pub route: ExplorationRoute,
    /// Vertex pair the accepted attempt started from.
    pub endpoints: (usize, usize),
    pub stats: RejectionStats,
}

const ATTEMPT_BATCH: usize = 32;

/// Samples one route. Attempt `i` draws from its own generator seeded with
/// output `i` of `SplitMix64(seed)`; the accepted route is the successful
/// attempt with the lowest index, so the result does not depend on how
/// attempts are scheduled.
pub fn sample_route(scene: &WalkableScene, config: &SampleConfig) -> Result<SampledRoute> {
    scene.validate()?;
    let mesh = delaunay_triangulate(&scene.points)?;
    let graph = WeightedGraph::from_mesh(&mesh);
    let mut stats = RejectionStats::default();

    let mut start = 0;
    while start < config.max_attempts {
        let end = (start + ATTEMPT_BATCH).min(config.max_attempts);
        let outcomes: Vec<_> = (start..end)
            .into_par_iter()
            .map(|i| run_attempt(scene, &mesh, &graph, config, i as u64))
            .collect();
        for outcome in outcomes {
            stats.attempts += 1;
            match outcome {
                Ok((route, endpoints)) => return Ok(SampledRoute { route, endpoints, stats }),
                Err(r) => stats.record(r),
            }
        }
        start = end;
    }
    Err(Error::Exhausted { stats })
}

fn run_attempt(
    scene: &WalkableScene,
    mesh: &NavMesh,
    graph: &WeightedGraph,
    config: &SampleConfig,
    attempt: u64,
) -> Result<(ExplorationRoute, (usize, usize)), Rejection> {
    let mut rng = SplitMix64::new(SplitMix64::nth_output(config.seed, attempt));
    let n = mesh.vertices().len();
    let a = rng.below(n);
    let mut b = rng.below(n - 1);
    if b >= a {
        b += 1;
    }
    let (ids, _) = graph.dijkstra(a, b).map_err(|_| Rejection::NoPath)?;
    let raw = Polyline::new(ids.iter().map(|&i| mesh.vertices()[i]).collect())
        .map_err(|_| Rejection::Degenerate)?;
    let smooth = laplacian_smooth(&raw, config.smoothing.lambda, config.smoothing.iterations)
        .map_err(|_| Rejection::Degenerate)?;
    if smooth.length() < config.min_length {
        return Err(Rejection::TooShort);
    }
    let route = normalize_route(&smooth, config.stride, config.heading, scene)
        .map_err(|_| Rejection::Degenerate)?;
    if route.length() < config.min_length {
        return Err(Rejection::TooShort);
    }
    let track = route.ground_track().map_err(|_| Rejection::Degenerate)?;
    if collision_check(&track, scene).is_some() || collision_check(&smooth, scene).is_some() {
        return Err(Rejection::Collision);
    }
    Ok((route, (a, b)))
}
