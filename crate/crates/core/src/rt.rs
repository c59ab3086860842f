//! Deterministic desk-scale ray tracer and trajectory generator.
//!
//! Geometry is a set of planar rectangles. Supported mechanisms:
//! free-space line of sight, image-method specular reflections up to fourth
//! order and single knife-edge diffraction over marked rectangle edges.
//! Output records follow the trace conventions: departure angles point from
//! the transmitter toward the first interaction, arrival angles from the
//! receiver toward the last one, and the phase is the total phase at the
//! carrier.

use std::f64::consts::PI;

use rayon::prelude::*;
use thiserror::Error;

use crate::array::{wrap_angle, Direction, SPEED_OF_LIGHT};
use crate::channel::NodeState;
use crate::trace::{LinkId, MpcRecord, PathType, Snapshot, TraceSet};

pub type Vec3 = [f64; 3];

/// Highest supported reflection order.
pub const MAX_REFLECTION_ORDER: usize = 4;

/// Default amplitude reflection coefficient.
pub const DEFAULT_REFLECTION_COEFFICIENT: f64 = 0.7;

/// Tolerance on the diffraction point along an edge, meters.
const EDGE_SEARCH_TOLERANCE: f64 = 1e-9;

/// Relative margin that keeps segment endpoints from counting as hits.
const SEGMENT_EPS: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("rectangle {0}: edge vectors are parallel or degenerate")]
    DegenerateRectangle(usize),
    #[error("rectangle {index}: reflection coefficient {gamma} outside [0, 1]")]
    ReflectionCoefficient { index: usize, gamma: f64 },
    #[error("trajectory: {0}")]
    Trajectory(String),
    #[error("no trajectory sample for t={0}")]
    NotCovered(f64),
}

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

fn distance(a: Vec3, b: Vec3) -> f64 {
    norm(sub(a, b))
}

/// Planar rectangle `corner + s·edge_u + t·edge_v`, `s, t ∈ [0, 1]`.
///
/// Edges are numbered 0: `t = 0`, 1: `s = 1`, 2: `t = 1`, 3: `s = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rectangle {
    pub corner: Vec3,
    pub edge_u: Vec3,
    pub edge_v: Vec3,
    /// Amplitude reflection coefficient in `[0, 1]`.
    pub gamma: f64,
    pub diffracting_edges: [bool; 4],
}

impl Rectangle {
    pub fn new(corner: Vec3, edge_u: Vec3, edge_v: Vec3) -> Self {
        Self {
            corner,
            edge_u,
            edge_v,
            gamma: DEFAULT_REFLECTION_COEFFICIENT,
            diffracting_edges: [false; 4],
        }
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn with_diffracting_edge(mut self, edge: usize) -> Self {
        self.diffracting_edges[edge] = true;
        self
    }

    pub fn normal(&self) -> Vec3 {
        let n = cross(self.edge_u, self.edge_v);
        scale(n, 1.0 / norm(n))
    }

    /// Endpoints of edge `i`.
    pub fn edge(&self, i: usize) -> (Vec3, Vec3) {
        let c = self.corner;
        let cu = add(c, self.edge_u);
        let cv = add(c, self.edge_v);
        let cuv = add(cu, self.edge_v);
        match i {
            0 => (c, cu),
            1 => (cu, cuv),
            2 => (cv, cuv),
            3 => (c, cv),
            _ => panic!("rectangle edge index {i} out of range"),
        }
    }

    /// In-plane coordinates `(s, t)` of a point assumed to lie on the plane.
    fn plane_coords(&self, p: Vec3) -> (f64, f64) {
        let d = sub(p, self.corner);
        let uu = dot(self.edge_u, self.edge_u);
        let vv = dot(self.edge_v, self.edge_v);
        let uv = dot(self.edge_u, self.edge_v);
        let du = dot(d, self.edge_u);
        let dv = dot(d, self.edge_v);
        let det = uu * vv - uv * uv;
        ((du * vv - dv * uv) / det, (dv * uu - du * uv) / det)
    }

    fn contains(&self, p: Vec3) -> bool {
        let (s, t) = self.plane_coords(p);
        let tol = 1e-12;
        (-tol..=1.0 + tol).contains(&s) && (-tol..=1.0 + tol).contains(&t)
    }

    /// Parameter `λ` of the crossing of the line `a + λ(b - a)` with the
    /// plane, if not parallel.
    fn plane_crossing(&self, a: Vec3, b: Vec3) -> Option<f64> {
        let n = self.normal();
        let denom = dot(n, sub(b, a));
        if denom.abs() < 1e-15 {
            return None;
        }
        Some(dot(n, sub(self.corner, a)) / denom)
    }

    /// True when the open segment `(a, b)` passes through the rectangle.
    pub fn blocks(&self, a: Vec3, b: Vec3) -> bool {
        match self.plane_crossing(a, b) {
            Some(l) if l > SEGMENT_EPS && l < 1.0 - SEGMENT_EPS => {
                self.contains(add(a, scale(sub(b, a), l)))
            }
            _ => false,
        }
    }

    /// Mirror image of a point across the rectangle's plane.
    pub fn mirror(&self, p: Vec3) -> Vec3 {
        let n = self.normal();
        let d = dot(sub(p, self.corner), n);
        sub(p, scale(n, 2.0 * d))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Environment {
    pub rectangles: Vec<Rectangle>,
}

impl Environment {
    pub fn new(rectangles: Vec<Rectangle>) -> Result<Self, GeometryError> {
        for (i, r) in rectangles.iter().enumerate() {
            let n = norm(cross(r.edge_u, r.edge_v));
            if !(n > 1e-12 * norm(r.edge_u) * norm(r.edge_v)) || !n.is_finite() {
                return Err(GeometryError::DegenerateRectangle(i));
            }
            if !(0.0..=1.0).contains(&r.gamma) {
                return Err(GeometryError::ReflectionCoefficient { index: i, gamma: r.gamma });
            }
        }
        Ok(Self { rectangles })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    fn segment_clear(&self, a: Vec3, b: Vec3) -> bool {
        !self.rectangles.iter().any(|r| r.blocks(a, b))
    }
}

/// True iff the open segment between the nodes crosses any rectangle.
pub fn los_blocked(p_tx: Vec3, p_rx: Vec3, env: &Environment) -> bool {
    !env.segment_clear(p_tx, p_rx)
}

/// Knife-edge diffraction loss in dB for Fresnel parameter `nu`.
pub fn knife_edge_loss_db(nu: f64) -> f64 {
    if nu > -0.78 {
        let x = nu - 0.1;
        6.9 + 20.0 * ((x * x + 1.0).sqrt() + x).log10()
    } else {
        0.0
    }
}

/// Free-space amplitude gain `λ/(4πd)`.
pub fn friis_amplitude(distance_m: f64, wavelength: f64) -> f64 {
    wavelength / (4.0 * PI * distance_m)
}

fn angles(v: Vec3) -> (f64, f64) {
    let d = Direction::from_vector(v);
    (d.azimuth_deg(), d.zenith_deg())
}

/// A record with geometry-derived fields; ids and time are filled by the caller.
fn path_record(
    path_type: PathType,
    length: f64,
    amplitude: f64,
    wavelength: f64,
    first_leg: Vec3,
    last_leg_reversed: Vec3,
) -> MpcRecord {
    let (aod_az, aod_zen) = angles(first_leg);
    let (aoa_az, aoa_zen) = angles(last_leg_reversed);
    MpcRecord {
        t: 0.0,
        tx_id: 0,
        rx_id: 0,
        path_id: 0,
        path_type,
        delay_s: length / SPEED_OF_LIGHT,
        gain_mag: amplitude,
        phase_rad: wrap_angle(-2.0 * PI * (length / wavelength).fract()),
        aod_az_deg: aod_az,
        aod_zen_deg: aod_zen,
        aoa_az_deg: aoa_az,
        aoa_zen_deg: aoa_zen,
    }
}

/// Direct path, or `None` when occluded.
pub fn trace_los(p_tx: Vec3, p_rx: Vec3, env: &Environment, carrier_hz: f64) -> Option<MpcRecord> {
    if los_blocked(p_tx, p_rx, env) {
        return None;
    }
    let wavelength = SPEED_OF_LIGHT / carrier_hz;
    let d = distance(p_tx, p_rx);
    Some(path_record(
        PathType::Los,
        d,
        friis_amplitude(d, wavelength),
        wavelength,
        sub(p_rx, p_tx),
        sub(p_tx, p_rx),
    ))
}

/// Specular paths via every ordered rectangle sequence up to `max_order`
/// (capped at four), without repeating a rectangle back to back.
pub fn trace_reflections(
    p_tx: Vec3,
    p_rx: Vec3,
    env: &Environment,
    max_order: usize,
    carrier_hz: f64,
) -> Vec<MpcRecord> {
    let wavelength = SPEED_OF_LIGHT / carrier_hz;
    let n = env.rectangles.len();
    let mut out = Vec::new();
    let mut sequence = Vec::with_capacity(MAX_REFLECTION_ORDER);
    for order in 1..=max_order.min(MAX_REFLECTION_ORDER) {
        enumerate_sequences(n, order, &mut sequence, &mut |seq| {
            if let Some(points) = reflection_points(p_tx, p_rx, env, seq) {
                let mut length = 0.0;
                let mut prev = p_tx;
                for p in points.iter().chain(std::iter::once(&p_rx)) {
                    length += distance(prev, *p);
                    prev = *p;
                }
                let gamma: f64 = seq.iter().map(|&i| env.rectangles[i].gamma).product();
                out.push(path_record(
                    PathType::Reflection,
                    length,
                    friis_amplitude(length, wavelength) * gamma,
                    wavelength,
                    sub(points[0], p_tx),
                    sub(points[points.len() - 1], p_rx),
                ));
            }
        });
    }
    out
}

fn enumerate_sequences(n: usize, order: usize, seq: &mut Vec<usize>, visit: &mut impl FnMut(&[usize])) {
    if seq.len() == order {
        visit(seq);
        return;
    }
    for i in 0..n {
        if seq.last() == Some(&i) {
            continue;
        }
        seq.push(i);
        enumerate_sequences(n, order, seq, visit);
        seq.pop();
    }
}

/// Reflection points of one rectangle sequence, or `None` if the path is
/// geometrically invalid or occluded.
fn reflection_points(p_tx: Vec3, p_rx: Vec3, env: &Environment, seq: &[usize]) -> Option<Vec<Vec3>> {
    let mut images = Vec::with_capacity(seq.len());
    let mut source = p_tx;
    for &i in seq {
        source = env.rectangles[i].mirror(source);
        images.push(source);
    }
    let mut points = vec![[0.0; 3]; seq.len()];
    let mut target = p_rx;
    for (j, &i) in seq.iter().enumerate().rev() {
        let rect = &env.rectangles[i];
        let l = rect.plane_crossing(images[j], target)?;
        if !(l > SEGMENT_EPS && l < 1.0 - SEGMENT_EPS) {
            return None;
        }
        let p = add(images[j], scale(sub(target, images[j]), l));
        if !rect.contains(p) {
            return None;
        }
        points[j] = p;
        target = p;
    }
    let mut prev = p_tx;
    for p in points.iter().chain(std::iter::once(&p_rx)) {
        if !env.segment_clear(prev, *p) {
            return None;
        }
        prev = *p;
    }
    Some(points)
}

/// Point on segment `[a, b]` minimizing `|p_tx - q| + |q - p_rx|`.
fn shortest_point_on_edge(p_tx: Vec3, p_rx: Vec3, a: Vec3, b: Vec3) -> Vec3 {
    let edge = sub(b, a);
    let len = norm(edge);
    let total = |s: f64| {
        let q = add(a, scale(edge, s));
        distance(p_tx, q) + distance(q, p_rx)
    };
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while (hi - lo) * len > EDGE_SEARCH_TOLERANCE {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if total(m1) <= total(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    add(a, scale(edge, 0.5 * (lo + hi)))
}

/// Distance from `q` to the infinite line through `a` and `b`.
fn distance_to_line(q: Vec3, a: Vec3, b: Vec3) -> f64 {
    let ab = sub(b, a);
    norm(cross(sub(q, a), ab)) / norm(ab)
}

/// Knife-edge paths over every marked edge. Emitted only when the direct
/// path is blocked.
pub fn trace_diffraction(p_tx: Vec3, p_rx: Vec3, env: &Environment, carrier_hz: f64) -> Vec<MpcRecord> {
    if !los_blocked(p_tx, p_rx, env) {
        return Vec::new();
    }
    let wavelength = SPEED_OF_LIGHT / carrier_hz;
    let mut out = Vec::new();
    for rect in &env.rectangles {
        for edge in (0..4).filter(|&e| rect.diffracting_edges[e]) {
            let (a, b) = rect.edge(edge);
            let q = shortest_point_on_edge(p_tx, p_rx, a, b);
            if !env.segment_clear(p_tx, q) || !env.segment_clear(q, p_rx) {
                continue;
            }
            let d1 = distance(p_tx, q);
            let d2 = distance(q, p_rx);
            if d1 <= 0.0 || d2 <= 0.0 {
                continue;
            }
            // Positive clearance when the edge's own surface obstructs the direct ray.
            let sign = if rect.blocks(p_tx, p_rx) { 1.0 } else { -1.0 };
            let h = sign * distance_to_line(q, p_tx, p_rx);
            let nu = h * (2.0 * (d1 + d2) / (wavelength * d1 * d2)).sqrt();
            let loss_db = knife_edge_loss_db(nu);
            let amplitude = friis_amplitude(d1 + d2, wavelength) * 10f64.powf(-loss_db / 20.0);
            out.push(path_record(
                PathType::Diffraction,
                d1 + d2,
                amplitude,
                wavelength,
                sub(q, p_tx),
                sub(q, p_rx),
            ));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySample {
    pub t: f64,
    pub position: Vec3,
    pub velocity: Vec3,
}

impl TrajectorySample {
    pub fn state(&self) -> NodeState {
        NodeState {
            position: self.position,
            velocity: self.velocity,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrajectoryKind {
    Static {
        position: Vec3,
    },
    Linear {
        start: Vec3,
        velocity: Vec3,
    },
    /// Horizontal circle around `center` at the center's height.
    Circular {
        center: Vec3,
        radius: f64,
        initial_angle_deg: f64,
        angular_rate_deg_s: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    samples: Vec<TrajectorySample>,
}

impl Trajectory {
    /// User-provided samples; times must be strictly increasing.
    pub fn from_samples(samples: Vec<TrajectorySample>) -> Result<Self, GeometryError> {
        if samples.is_empty() {
            return Err(GeometryError::Trajectory("no samples".into()));
        }
        if samples.windows(2).any(|w| w[1].t <= w[0].t) {
            return Err(GeometryError::Trajectory("sample times must strictly increase".into()));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[TrajectorySample] {
        &self.samples
    }

    /// State at `t`: an exact sample when one lies within 1 ns, otherwise
    /// linear interpolation between the neighbouring samples.
    pub fn state_at(&self, t: f64) -> Result<NodeState, GeometryError> {
        let idx = self.samples.partition_point(|s| s.t < t - 1e-9);
        if let Some(s) = self.samples.get(idx) {
            if (s.t - t).abs() <= 1e-9 {
                return Ok(s.state());
            }
        }
        if idx == 0 || idx >= self.samples.len() {
            return Err(GeometryError::NotCovered(t));
        }
        let (a, b) = (&self.samples[idx - 1], &self.samples[idx]);
        let w = (t - a.t) / (b.t - a.t);
        let lerp = |x: Vec3, y: Vec3| add(scale(x, 1.0 - w), scale(y, w));
        Ok(NodeState {
            position: lerp(a.position, b.position),
            velocity: lerp(a.velocity, b.velocity),
        })
    }
}

/// `n` samples at `t0 + i·dt` with analytic velocities.
pub fn make_trajectory(kind: &TrajectoryKind, t0: f64, dt: f64, n: usize) -> Result<Trajectory, GeometryError> {
    if !(dt > 0.0) || n == 0 {
        return Err(GeometryError::Trajectory(format!("need dt > 0 and n >= 1, got dt={dt}, n={n}")));
    }
    if let TrajectoryKind::Circular { radius, .. } = kind {
        if !(*radius > 0.0) {
            return Err(GeometryError::Trajectory(format!("circular radius must be positive, got {radius}")));
        }
    }
    let samples = (0..n)
        .map(|i| {
            let elapsed = i as f64 * dt;
            let t = t0 + elapsed;
            match kind {
                TrajectoryKind::Static { position } => TrajectorySample {
                    t,
                    position: *position,
                    velocity: [0.0; 3],
                },
                TrajectoryKind::Linear { start, velocity } => TrajectorySample {
                    t,
                    position: add(*start, scale(*velocity, elapsed)),
                    velocity: *velocity,
                },
                TrajectoryKind::Circular {
                    center,
                    radius,
                    initial_angle_deg,
                    angular_rate_deg_s,
                } => {
                    let omega = angular_rate_deg_s.to_radians();
                    let angle = initial_angle_deg.to_radians() + omega * elapsed;
                    let (s, c) = angle.sin_cos();
                    TrajectorySample {
                        t,
                        position: add(*center, [radius * c, radius * s, 0.0]),
                        velocity: [-radius * omega * s, radius * omega * c, 0.0],
                    }
                }
            }
        })
        .collect();
    Trajectory::from_samples(samples)
}

/// Everything needed to synthesize a trace for one link.
#[derive(Debug, Clone)]
pub struct TraceScenario {
    pub environment: Environment,
    pub tx: Trajectory,
    pub rx: Trajectory,
    pub link: LinkId,
    pub carrier_hz: f64,
    pub max_reflection_order: usize,
    pub times: Vec<f64>,
}

/// Paths of one node pair, ids and times unset.
pub fn trace_paths(p_tx: Vec3, p_rx: Vec3, env: &Environment, max_order: usize, carrier_hz: f64) -> Vec<MpcRecord> {
    let mut paths = Vec::new();
    match trace_los(p_tx, p_rx, env, carrier_hz) {
        Some(los) => paths.push(los),
        None => paths.extend(trace_diffraction(p_tx, p_rx, env, carrier_hz)),
    }
    paths.extend(trace_reflections(p_tx, p_rx, env, max_order, carrier_hz));
    paths
}

/// Traces every snapshot time. Snapshots without any path are kept as
/// empty outage groups.
pub fn generate_trace(scenario: &TraceScenario) -> Result<TraceSet, GeometryError> {
    let snapshots: Result<Vec<Snapshot>, GeometryError> = scenario
        .times
        .par_iter()
        .map(|&t| {
            let tx = scenario.tx.state_at(t)?;
            let rx = scenario.rx.state_at(t)?;
            let records = trace_paths(
                tx.position,
                rx.position,
                &scenario.environment,
                scenario.max_reflection_order,
                scenario.carrier_hz,
            )
            .into_iter()
            .enumerate()
            .map(|(i, mut r)| {
                r.t = t;
                r.tx_id = scenario.link.tx_id;
                r.rx_id = scenario.link.rx_id;
                r.path_id = i as u32;
                r
            })
            .collect();
            Ok(Snapshot {
                t,
                link: scenario.link,
                records,
            })
        })
        .collect();
    Ok(TraceSet::from_snapshots(snapshots?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::validate_trace;
    use proptest::prelude::*;

    const FC: f64 = 28e9;

    fn wall_y5() -> Rectangle {
        // plane y = 5, x in [-50, 50], z in [0, 20]
        Rectangle::new([-50.0, 5.0, 0.0], [100.0, 0.0, 0.0], [0.0, 0.0, 20.0]).with_gamma(0.7)
    }

    #[test]
    fn empty_environment_never_blocks() {
        assert!(!los_blocked([0.0; 3], [10.0, 3.0, 1.0], &Environment::empty()));
    }

    #[test]
    fn midplane_rectangle_blocks() {
        let env = Environment::new(vec![Rectangle::new([5.0, -1.0, -1.0], [0.0, 2.0, 0.0], [0.0, 0.0, 2.0])]).unwrap();
        assert!(los_blocked([0.0; 3], [10.0, 0.0, 0.0], &env));
    }

    #[test]
    fn parallel_offset_rectangle_does_not_block() {
        let env = Environment::new(vec![Rectangle::new([0.0, 1.0, -1.0], [10.0, 0.0, 0.0], [0.0, 0.0, 2.0])]).unwrap();
        assert!(!los_blocked([0.0; 3], [10.0, 0.0, 0.0], &env));
    }

    #[test]
    fn endpoint_on_rectangle_does_not_block() {
        let env = Environment::new(vec![Rectangle::new([10.0, -1.0, -1.0], [0.0, 2.0, 0.0], [0.0, 0.0, 2.0])]).unwrap();
        assert!(!los_blocked([0.0; 3], [10.0, 0.0, 0.0], &env));
    }

    #[test]
    fn degenerate_rectangle_rejected() {
        let r = Rectangle::new([0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]);
        assert_eq!(Environment::new(vec![r]), Err(GeometryError::DegenerateRectangle(0)));
        let r = Rectangle::new([0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]).with_gamma(1.5);
        assert!(Environment::new(vec![r]).is_err());
    }

    #[test]
    fn free_space_at_100_m() {
        let rec = trace_los([0.0; 3], [100.0, 0.0, 0.0], &Environment::empty(), FC).unwrap();
        let power_db = 20.0 * rec.gain_mag.log10();
        assert!((power_db + 101.39).abs() < 0.01, "{power_db}");
        assert!((rec.delay_s - 333.56e-9).abs() < 0.01e-9);
        assert_eq!((rec.aod_az_deg, rec.aod_zen_deg), (0.0, 90.0));
        assert_eq!(rec.aoa_az_deg, -180.0);
        assert_eq!(rec.path_type, PathType::Los);
        assert!((-PI..PI).contains(&rec.phase_rad));
    }

    #[test]
    fn blocked_los_gives_none() {
        let env = Environment::new(vec![Rectangle::new([5.0, -1.0, -1.0], [0.0, 2.0, 0.0], [0.0, 0.0, 2.0])]).unwrap();
        assert!(trace_los([0.0; 3], [10.0, 0.0, 0.0], &env, FC).is_none());
    }

    #[test]
    fn single_wall_first_order() {
        let env = Environment::new(vec![wall_y5()]).unwrap();
        let refl = trace_reflections([0.0, 0.0, 2.0], [10.0, 0.0, 2.0], &env, 1, FC);
        assert_eq!(refl.len(), 1);
        let length = refl[0].delay_s * SPEED_OF_LIGHT;
        assert!((length - 14.142135623730951).abs() < 1e-9);
        let expected = friis_amplitude(14.142135623730951, SPEED_OF_LIGHT / FC) * 0.7;
        assert!((refl[0].gain_mag - expected).abs() < 1e-12 * expected);
        // Departure toward the reflection point at (5, 5, 2).
        assert!((refl[0].aod_az_deg - 45.0).abs() < 1e-9);
        assert!((refl[0].aoa_az_deg - 135.0).abs() < 1e-9);
    }

    #[test]
    fn empty_environment_has_no_reflections() {
        assert!(trace_reflections([0.0; 3], [1.0, 2.0, 3.0], &Environment::empty(), 4, FC).is_empty());
    }

    #[test]
    fn two_parallel_walls_second_order() {
        let wall_a = Rectangle::new([-50.0, 5.0, 0.0], [100.0, 0.0, 0.0], [0.0, 0.0, 20.0]);
        let wall_b = Rectangle::new([-50.0, -5.0, 0.0], [100.0, 0.0, 0.0], [0.0, 0.0, 20.0]);
        let env = Environment::new(vec![wall_a.clone(), wall_b.clone()]).unwrap();
        let tx = [0.0, 1.0, 2.0];
        let rx = [10.0, -2.0, 2.0];
        let refl = trace_reflections(tx, rx, &env, 2, FC);
        let lengths: Vec<f64> = refl.iter().map(|r| r.delay_s * SPEED_OF_LIGHT).collect();
        // Iterated mirrors: A then B, B then A.
        let ab = distance(wall_b.mirror(wall_a.mirror(tx)), rx);
        let ba = distance(wall_a.mirror(wall_b.mirror(tx)), rx);
        for expected in [ab, ba] {
            assert!(lengths.iter().any(|l| (l - expected).abs() < 1e-9), "{expected} not in {lengths:?}");
        }
        assert_eq!(refl.len(), 4);
    }

    #[test]
    fn knife_edge_reference_values() {
        assert!((knife_edge_loss_db(0.0) - 6.03).abs() < 0.01);
        assert!((knife_edge_loss_db(2.4) - 20.5).abs() < 0.05);
        assert_eq!(knife_edge_loss_db(-1.0), 0.0);
    }

    #[test]
    fn no_marked_edges_no_diffraction() {
        let env = Environment::new(vec![Rectangle::new([5.0, -10.0, 0.0], [0.0, 20.0, 0.0], [0.0, 0.0, 10.0])]).unwrap();
        assert!(trace_diffraction([0.0, 0.0, 2.0], [10.0, 0.0, 2.0], &env, FC).is_empty());
    }

    #[test]
    fn rooftop_diffraction_path() {
        // Wall x = 5, top edge (edge 2) at z = 10 marked.
        let wall = Rectangle::new([5.0, -10.0, 0.0], [0.0, 20.0, 0.0], [0.0, 0.0, 10.0]).with_diffracting_edge(2);
        let env = Environment::new(vec![wall]).unwrap();
        let tx = [0.0, 0.0, 2.0];
        let rx = [10.0, 0.0, 2.0];
        let paths = trace_diffraction(tx, rx, &env, FC);
        assert_eq!(paths.len(), 1);
        let d = 2.0 * (25.0f64 + 64.0).sqrt();
        assert!((paths[0].delay_s * SPEED_OF_LIGHT - d).abs() < 1e-6);
        let lambda = SPEED_OF_LIGHT / FC;
        let nu = 8.0 * (2.0 * d / (lambda * d * d / 4.0)).sqrt();
        let expected = friis_amplitude(d, lambda) * 10f64.powf(-knife_edge_loss_db(nu) / 20.0);
        assert!((paths[0].gain_mag - expected).abs() < 1e-6 * expected);
        assert_eq!(paths[0].path_type, PathType::Diffraction);
    }

    #[test]
    fn diffraction_only_when_blocked() {
        let wall = Rectangle::new([5.0, 1.0, 0.0], [0.0, 20.0, 0.0], [0.0, 0.0, 10.0]).with_diffracting_edge(3);
        let env = Environment::new(vec![wall]).unwrap();
        assert!(trace_diffraction([0.0, 0.0, 2.0], [10.0, 0.0, 2.0], &env, FC).is_empty());
    }

    #[test]
    fn trajectories() {
        let s = make_trajectory(&TrajectoryKind::Static { position: [1.0, 2.0, 3.0] }, 0.0, 0.1, 3).unwrap();
        assert_eq!(s.samples().len(), 3);
        assert!(s.samples().iter().all(|x| x.position == [1.0, 2.0, 3.0] && x.velocity == [0.0; 3]));

        let c = make_trajectory(
            &TrajectoryKind::Circular {
                center: [0.0, 0.0, 1.5],
                radius: 80.0,
                initial_angle_deg: 0.0,
                angular_rate_deg_s: 10.0,
            },
            0.0,
            0.1,
            91,
        )
        .unwrap();
        for w in c.samples().windows(2) {
            let a0 = w[0].position[1].atan2(w[0].position[0]).to_degrees();
            let a1 = w[1].position[1].atan2(w[1].position[0]).to_degrees();
            assert!((a1 - a0 - 1.0).abs() < 1e-9);
        }

        let l = make_trajectory(
            &TrajectoryKind::Linear {
                start: [0.0; 3],
                velocity: [1.5, 0.0, 0.0],
            },
            0.0,
            0.5,
            501,
        )
        .unwrap();
        let last = l.samples().last().unwrap();
        assert!((last.t - 250.0).abs() < 1e-9);
        assert!((distance(last.position, [0.0; 3]) - 375.0).abs() < 1e-9);

        assert!(make_trajectory(
            &TrajectoryKind::Circular {
                center: [0.0; 3],
                radius: 0.0,
                initial_angle_deg: 0.0,
                angular_rate_deg_s: 1.0
            },
            0.0,
            0.1,
            2
        )
        .is_err());
    }

    #[test]
    fn circular_velocity_matches_central_difference() {
        let c = make_trajectory(
            &TrajectoryKind::Circular {
                center: [3.0, -2.0, 1.5],
                radius: 40.0,
                initial_angle_deg: 15.0,
                angular_rate_deg_s: 10.0,
            },
            0.0,
            0.01,
            50,
        )
        .unwrap();
        let s = c.samples();
        for i in 1..s.len() - 1 {
            let fd = scale(sub(s[i + 1].position, s[i - 1].position), 1.0 / (s[i + 1].t - s[i - 1].t));
            let err = norm(sub(fd, s[i].velocity));
            assert!(err <= 1e-6 * norm(s[i].velocity), "{err}");
        }
    }

    #[test]
    fn trajectory_lookup_and_coverage() {
        let l = make_trajectory(&TrajectoryKind::Linear { start: [0.0; 3], velocity: [1.0, 0.0, 0.0] }, 0.0, 1.0, 3).unwrap();
        assert!((l.state_at(1.5).unwrap().position[0] - 1.5).abs() < 1e-12);
        assert!(l.state_at(5.0).is_err());
        assert!(Trajectory::from_samples(vec![]).is_err());
    }

    #[test]
    fn static_link_in_free_space_has_one_los_per_snapshot() {
        let tx = make_trajectory(&TrajectoryKind::Static { position: [0.0, 0.0, 10.0] }, 0.0, 0.1, 5).unwrap();
        let rx = make_trajectory(&TrajectoryKind::Static { position: [40.0, 10.0, 1.5] }, 0.0, 0.1, 5).unwrap();
        let scenario = TraceScenario {
            environment: Environment::empty(),
            tx,
            rx,
            link: LinkId { tx_id: 0, rx_id: 1 },
            carrier_hz: FC,
            max_reflection_order: 4,
            times: (0..5).map(|i| i as f64 * 0.1).collect(),
        };
        let trace = generate_trace(&scenario).unwrap();
        assert_eq!(trace.snapshots().len(), 5);
        for s in trace.snapshots() {
            assert_eq!(s.records.len(), 1);
            assert_eq!(s.records[0].path_type, PathType::Los);
        }
        assert!(validate_trace(&trace).is_empty());
    }

    fn corner_env() -> Environment {
        // Wall A (x = 20) with a marked roof edge and wall B (y = 0) meeting it at (20, 0).
        let a = Rectangle::new([20.0, 0.0, 0.0], [0.0, 60.0, 0.0], [0.0, 0.0, 8.0]).with_diffracting_edge(2);
        let b = Rectangle::new([5.0, 0.0, 0.0], [15.0, 0.0, 0.0], [0.0, 0.0, 8.0]);
        Environment::new(vec![a, b]).unwrap()
    }

    #[test]
    fn corner_walk_los_tracks_occlusion() {
        let env = corner_env();
        let tx = [0.0, -10.0, 10.0];
        for i in 0..60 {
            let rx = [24.0, 30.0 - i as f64, 1.5];
            let paths = trace_paths(tx, rx, &env, 4, FC);
            let has_los = paths.iter().any(|p| p.path_type == PathType::Los);
            assert_eq!(has_los, !los_blocked(tx, rx, &env));
            let has_diff = paths.iter().any(|p| p.path_type == PathType::Diffraction);
            assert!(!(has_los && has_diff));
        }
    }

    fn arb_point() -> impl Strategy<Value = Vec3> {
        (-30.0..30.0f64, -30.0..30.0f64, 0.5..15.0f64).prop_map(|(x, y, z)| [x, y, z])
    }

    fn assert_reciprocal(fwd: &[MpcRecord], rev: &[MpcRecord]) -> Result<(), TestCaseError> {
        prop_assert_eq!(fwd.len(), rev.len());
        for f in fwd {
            let m = rev.iter().find(|r| {
                r.path_type == f.path_type && ((r.delay_s - f.delay_s) * SPEED_OF_LIGHT).abs() < 1e-6
            });
            prop_assert!(m.is_some(), "no reverse match for {:?}", f);
            let r = m.unwrap();
            prop_assert!((r.gain_mag - f.gain_mag).abs() <= 1e-9 * f.gain_mag.max(1e-30));
            let same = |a: (f64, f64), b: (f64, f64)| {
                let da = (a.0 - b.0).rem_euclid(360.0);
                (!(1e-6..=360.0 - 1e-6).contains(&da) || !(1e-6..=180.0 - 1e-6).contains(&a.1)) && (a.1 - b.1).abs() < 1e-6
            };
            prop_assert!(same((f.aod_az_deg, f.aod_zen_deg), (r.aoa_az_deg, r.aoa_zen_deg)));
            prop_assert!(same((f.aoa_az_deg, f.aoa_zen_deg), (r.aod_az_deg, r.aod_zen_deg)));
        }
        Ok(())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn reciprocity(tx in arb_point(), rx in arb_point()) {
            prop_assume!(distance(tx, rx) > 1.0);
            let env = corner_env();
            let fwd = trace_paths(tx, rx, &env, 3, FC);
            let rev = trace_paths(rx, tx, &env, 3, FC);
            assert_reciprocal(&fwd, &rev)?;
        }

        #[test]
        fn reflections_are_longer_than_los(tx in arb_point(), rx in arb_point()) {
            prop_assume!(distance(tx, rx) > 1.0);
            let env = corner_env();
            let d = distance(tx, rx);
            for r in trace_reflections(tx, rx, &env, 1, FC) {
                prop_assert!(r.delay_s * SPEED_OF_LIGHT >= d - 1e-9);
            }
        }

        #[test]
        fn gains_never_exceed_free_space(tx in arb_point(), rx in arb_point()) {
            prop_assume!(distance(tx, rx) > 1.0);
            let env = corner_env();
            let lambda = SPEED_OF_LIGHT / FC;
            for r in trace_paths(tx, rx, &env, 4, FC) {
                let free = friis_amplitude(r.delay_s * SPEED_OF_LIGHT, lambda);
                prop_assert!(r.gain_mag <= free * (1.0 + 1e-12));
            }
        }

        #[test]
        fn diffraction_point_is_fermat_optimal(
            tx in arb_point(), rx in arb_point(),
        ) {
            let (a, b) = ([20.0, 0.0, 8.0], [20.0, 60.0, 8.0]);
            let q = shortest_point_on_edge(tx, rx, a, b);
            let edge = sub(b, a);
            let s = dot(sub(q, a), edge) / dot(edge, edge);
            let total = |s: f64| {
                let p = add(a, scale(edge, s));
                distance(tx, p) + distance(p, rx)
            };
            let base = total(s);
            for ds in [-1e-4, 1e-4] {
                let s2 = (s + ds).clamp(0.0, 1.0);
                prop_assert!(total(s2) >= base - 1e-9);
            }
        }
    }
}
