//! Scenario configuration files.
//!
//! A scenario is a TOML document. It either points at an existing trace
//! (`trace_path`) or describes geometry and node trajectories from which a
//! trace is generated. Every physical quantity is given in SI units except
//! where the key name says otherwise (`_dbm`, `_db`, `_deg`).

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::array::{PlanarArray, SPEED_OF_LIGHT};
use crate::beam::CodebookGrid;
use crate::channel::SubbandGrid;
use crate::link::{dbm_to_watts, AmcTable, DelayModel, LinkBudget, NodeMotion, SimulationSetup};
use crate::rt::{make_trajectory, Environment, Rectangle, TraceScenario, Trajectory, TrajectoryKind, TrajectorySample};
use crate::trace::{parse_trace, LinkId, Snapshot, TraceError, TraceSet};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config: {0}")]
    Invalid(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("trace {path}: {source}")]
    Trace {
        path: PathBuf,
        #[source]
        source: TraceError,
    },
}

impl ConfigError {
    /// True for failures of the filesystem rather than of the content.
    pub fn is_io(&self) -> bool {
        match self {
            ConfigError::Io { .. } => true,
            ConfigError::Trace { source, .. } => matches!(source, TraceError::Io(_)),
            ConfigError::Invalid(_) => false,
        }
    }
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayConfig {
    pub rows: usize,
    pub cols: usize,
    pub spacing: f64,
    pub bearing_deg: f64,
}

/// One side of the codebook. Either zenith bounds or elevation bounds.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodebookConfig {
    pub az_min: f64,
    pub az_max: f64,
    pub az_step: f64,
    pub zen_min: Option<f64>,
    pub zen_max: Option<f64>,
    pub zen_step: Option<f64>,
    pub el_min: Option<f64>,
    pub el_max: Option<f64>,
    pub el_step: Option<f64>,
}

impl CodebookConfig {
    fn grid(&self, side: &str) -> Result<CodebookGrid, ConfigError> {
        match (
            (self.zen_min, self.zen_max, self.zen_step),
            (self.el_min, self.el_max, self.el_step),
        ) {
            ((Some(zen_min), Some(zen_max), Some(zen_step)), (None, None, None)) => Ok(CodebookGrid {
                az_min: self.az_min,
                az_max: self.az_max,
                az_step: self.az_step,
                zen_min,
                zen_max,
                zen_step,
            }),
            ((None, None, None), (Some(lo), Some(hi), Some(step))) => Ok(CodebookGrid::from_elevation(
                self.az_min,
                self.az_max,
                self.az_step,
                lo,
                hi,
                step,
            )),
            ((None, None, None), _) => {
                let missing = if self.el_min.is_none() && self.el_max.is_none() && self.el_step.is_none() {
                    "zen_min"
                } else {
                    [("el_min", self.el_min), ("el_max", self.el_max), ("el_step", self.el_step)]
                        .iter()
                        .find(|(_, v)| v.is_none())
                        .map(|(k, _)| *k)
                        .unwrap_or("zen_min")
                };
                Err(invalid(format!("codebook.{side}: missing field `{missing}`")))
            }
            ((zmin, zmax, zstep), (None, None, None)) => {
                let missing = [("zen_min", zmin), ("zen_max", zmax), ("zen_step", zstep)]
                    .iter()
                    .find(|(_, v)| v.is_none())
                    .map(|(k, _)| *k)
                    .unwrap_or("zen_min");
                Err(invalid(format!("codebook.{side}: missing field `{missing}`")))
            }
            _ => Err(invalid(format!(
                "codebook.{side}: give either zen_min/zen_max/zen_step or el_min/el_max/el_step, not both"
            ))),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodebookPair {
    pub tx: CodebookConfig,
    pub rx: CodebookConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RectangleConfig {
    pub corner: [f64; 3],
    pub edge_u: [f64; 3],
    pub edge_v: [f64; 3],
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Indices 0..=3 of diffracting edges.
    #[serde(default)]
    pub diffracting_edges: Vec<usize>,
}

fn default_gamma() -> f64 {
    crate::rt::DEFAULT_REFLECTION_COEFFICIENT
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentConfig {
    #[serde(default, rename = "rectangle")]
    pub rectangles: Vec<RectangleConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum TrajectoryConfig {
    Static {
        position: [f64; 3],
    },
    Linear {
        start: [f64; 3],
        velocity: [f64; 3],
    },
    Circular {
        center: [f64; 3],
        radius: f64,
        initial_angle_deg: f64,
        angular_rate_deg_s: f64,
    },
    /// User-provided `[t, x, y, z, vx, vy, vz]` rows.
    Samples {
        samples: Vec<[f64; 7]>,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryPair {
    pub tx: TrajectoryConfig,
    pub rx: TrajectoryConfig,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkConfig {
    pub tx_id: u32,
    pub rx_id: u32,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self { tx_id: 0, rx_id: 1 }
    }
}

/// Raw scenario file contents.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub carrier_hz: f64,
    pub bandwidth_hz: f64,
    pub subbands: usize,
    pub txpower_dbm: f64,
    pub noise_figure_db: f64,
    pub tx_array: ArrayConfig,
    pub rx_array: ArrayConfig,
    pub codebook: CodebookPair,
    pub training_period_s: f64,
    pub offered_bps: f64,
    pub overhead: f64,
    pub snapshot_dt_s: f64,
    pub duration_s: f64,
    #[serde(default)]
    pub link: LinkConfig,
    pub amc_table: Option<PathBuf>,
    pub temperature_k: Option<f64>,
    pub base_delay_s: Option<f64>,
    pub saturation_delay_s: Option<f64>,
    pub max_reflection_order: Option<usize>,
    pub trace_path: Option<PathBuf>,
    pub environment: Option<EnvironmentConfig>,
    pub trajectory: Option<TrajectoryPair>,
}

/// Where the scenario's trace comes from.
#[derive(Debug, Clone)]
pub enum TraceSource {
    File(PathBuf),
    Generated(TraceScenario),
}

/// A validated scenario ready to run.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub setup: SimulationSetup,
    pub source: TraceSource,
    pub snapshot_dt_s: f64,
    pub times: Vec<f64>,
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let de = toml::Deserializer::parse(text).map_err(|e| invalid(e.to_string()))?;
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner().message().to_string();
            if path == "." || path.is_empty() {
                invalid(inner)
            } else {
                invalid(format!("{path}: {inner}"))
            }
        })
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }
}

fn require_positive(name: &str, v: f64) -> Result<f64, ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(invalid(format!("`{name}` must be positive, got {v}")))
    }
}

fn build_array(name: &str, cfg: &ArrayConfig, wavelength: f64) -> Result<PlanarArray, ConfigError> {
    PlanarArray::new(cfg.rows, cfg.cols, cfg.spacing, cfg.bearing_deg, wavelength)
        .map_err(|e| invalid(format!("{name}: {e}")))
}

fn build_trajectory(side: &str, cfg: &TrajectoryConfig, times: &[f64], dt: f64) -> Result<Trajectory, ConfigError> {
    let err = |e: crate::rt::GeometryError| invalid(format!("trajectory.{side}: {e}"));
    let t0 = times.first().copied().unwrap_or(0.0);
    let kind = match cfg {
        TrajectoryConfig::Static { position } => TrajectoryKind::Static { position: *position },
        TrajectoryConfig::Linear { start, velocity } => TrajectoryKind::Linear {
            start: *start,
            velocity: *velocity,
        },
        TrajectoryConfig::Circular {
            center,
            radius,
            initial_angle_deg,
            angular_rate_deg_s,
        } => TrajectoryKind::Circular {
            center: *center,
            radius: *radius,
            initial_angle_deg: *initial_angle_deg,
            angular_rate_deg_s: *angular_rate_deg_s,
        },
        TrajectoryConfig::Samples { samples } => {
            let samples = samples
                .iter()
                .map(|s| TrajectorySample {
                    t: s[0],
                    position: [s[1], s[2], s[3]],
                    velocity: [s[4], s[5], s[6]],
                })
                .collect();
            let traj = Trajectory::from_samples(samples).map_err(err)?;
            for &t in times {
                traj.state_at(t).map_err(err)?;
            }
            return Ok(traj);
        }
    };
    make_trajectory(&kind, t0, dt, times.len()).map_err(err)
}

impl Scenario {
    /// Validates a config. Relative paths resolve against `base_dir`.
    pub fn from_config(cfg: &ScenarioConfig, base_dir: &Path) -> Result<Self, ConfigError> {
        let carrier = require_positive("carrier_hz", cfg.carrier_hz)?;
        let bandwidth = require_positive("bandwidth_hz", cfg.bandwidth_hz)?;
        if cfg.subbands == 0 {
            return Err(invalid("`subbands` must be at least 1"));
        }
        let training = require_positive("training_period_s", cfg.training_period_s)?;
        let dt = require_positive("snapshot_dt_s", cfg.snapshot_dt_s)?;
        let duration = require_positive("duration_s", cfg.duration_s)?;
        if !(cfg.offered_bps >= 0.0 && cfg.offered_bps.is_finite()) {
            return Err(invalid(format!("`offered_bps` must be non-negative, got {}", cfg.offered_bps)));
        }
        if !(0.0..1.0).contains(&cfg.overhead) {
            return Err(invalid(format!("`overhead` must lie in [0, 1), got {}", cfg.overhead)));
        }
        if !cfg.txpower_dbm.is_finite() || !cfg.noise_figure_db.is_finite() {
            return Err(invalid("`txpower_dbm` and `noise_figure_db` must be finite"));
        }

        let wavelength = SPEED_OF_LIGHT / carrier;
        let tx_array = build_array("tx_array", &cfg.tx_array, wavelength)?;
        let rx_array = build_array("rx_array", &cfg.rx_array, wavelength)?;
        let grid = SubbandGrid::new(carrier, bandwidth, cfg.subbands).map_err(|e| invalid(e.to_string()))?;

        let mut budget = LinkBudget::new(dbm_to_watts(cfg.txpower_dbm), cfg.noise_figure_db, bandwidth)
            .map_err(|e| invalid(e.to_string()))?;
        if let Some(t) = cfg.temperature_k {
            budget.temperature_k = require_positive("temperature_k", t)?;
        }

        let amc = match &cfg.amc_table {
            Some(p) => {
                let path = base_dir.join(p);
                let file = File::open(&path).map_err(|source| ConfigError::Io {
                    path: path.clone(),
                    source,
                })?;
                AmcTable::from_csv(BufReader::new(file)).map_err(|e| invalid(format!("{}: {e}", path.display())))?
            }
            None => AmcTable::default(),
        };
        let mut delay = DelayModel::default();
        if let Some(v) = cfg.base_delay_s {
            delay.base_delay_s = require_positive("base_delay_s", v)?;
        }
        if let Some(v) = cfg.saturation_delay_s {
            delay.saturation_delay_s = require_positive("saturation_delay_s", v)?;
        }

        let n = (duration / dt + 1e-9).floor() as usize + 1;
        let times: Vec<f64> = (0..n).map(|i| i as f64 * dt).collect();
        let link = LinkId {
            tx_id: cfg.link.tx_id,
            rx_id: cfg.link.rx_id,
        };

        let (source, motion) = match (&cfg.trace_path, &cfg.trajectory) {
            (Some(_), Some(_)) => {
                return Err(invalid("`trace_path` and a `trajectory` section are mutually exclusive"));
            }
            (Some(_), None) if cfg.environment.is_some() => {
                return Err(invalid("`trace_path` and an `environment` section are mutually exclusive"));
            }
            (Some(p), None) => (TraceSource::File(base_dir.join(p)), None),
            (None, None) => {
                return Err(invalid(
                    "missing field `trajectory` (or `trace_path`): a scenario needs a trace or trajectories",
                ));
            }
            (None, Some(traj)) => {
                let tx = build_trajectory("tx", &traj.tx, &times, dt)?;
                let rx = build_trajectory("rx", &traj.rx, &times, dt)?;
                let rects = cfg
                    .environment
                    .as_ref()
                    .map(|e| e.rectangles.as_slice())
                    .unwrap_or_default()
                    .iter()
                    .enumerate()
                    .map(|(i, r)| {
                        let mut rect = Rectangle::new(r.corner, r.edge_u, r.edge_v).with_gamma(r.gamma);
                        for &e in &r.diffracting_edges {
                            if e > 3 {
                                return Err(invalid(format!(
                                    "environment.rectangle[{i}]: diffracting edge index {e} outside 0..=3"
                                )));
                            }
                            rect = rect.with_diffracting_edge(e);
                        }
                        Ok(rect)
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                let environment = Environment::new(rects).map_err(|e| invalid(format!("environment: {e}")))?;
                let order = cfg.max_reflection_order.unwrap_or(crate::rt::MAX_REFLECTION_ORDER);
                if order > crate::rt::MAX_REFLECTION_ORDER {
                    return Err(invalid(format!("`max_reflection_order` must be at most 4, got {order}")));
                }
                let motion = NodeMotion {
                    tx: tx.clone(),
                    rx: rx.clone(),
                };
                (
                    TraceSource::Generated(TraceScenario {
                        environment,
                        tx,
                        rx,
                        link,
                        carrier_hz: carrier,
                        max_reflection_order: order,
                        times: times.clone(),
                    }),
                    Some(motion),
                )
            }
        };

        let setup = SimulationSetup {
            link,
            tx_array,
            rx_array,
            tx_codebook: cfg.codebook.tx.grid("tx")?,
            rx_codebook: cfg.codebook.rx.grid("rx")?,
            grid,
            budget,
            amc,
            delay,
            training_period_s: training,
            offered_bps: cfg.offered_bps,
            overhead: cfg.overhead,
            motion,
        };
        // Surface empty grids at load time rather than mid-run.
        setup.tx_codebook.azimuths().and(setup.tx_codebook.zeniths()).map_err(|e| invalid(format!("codebook.tx: {e}")))?;
        setup.rx_codebook.azimuths().and(setup.rx_codebook.zeniths()).map_err(|e| invalid(format!("codebook.rx: {e}")))?;

        Ok(Self {
            setup,
            source,
            snapshot_dt_s: dt,
            times,
        })
    }

    /// Reads and validates a scenario file.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let cfg = ScenarioConfig::from_path(path)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_config(&cfg, base)
    }

    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        Self::from_config(&ScenarioConfig::from_toml_str(text)?, base_dir)
    }

    pub fn is_generative(&self) -> bool {
        matches!(self.source, TraceSource::Generated(_))
    }

    /// Trace of the scenario: parsed from file or generated.
    pub fn trace(&self) -> Result<TraceSet, ConfigError> {
        match &self.source {
            TraceSource::File(path) => {
                let file = File::open(path).map_err(|source| ConfigError::Io {
                    path: path.clone(),
                    source,
                })?;
                parse_trace(BufReader::new(file)).map_err(|source| ConfigError::Trace {
                    path: path.clone(),
                    source,
                })
            }
            TraceSource::Generated(sc) => crate::rt::generate_trace(sc).map_err(|e| invalid(e.to_string())),
        }
    }

    /// Snapshot of the scenario's link nearest to `t`, within half a
    /// snapshot interval. Scheduled instants absent from the trace are
    /// returned as empty snapshots.
    pub fn snapshot_near(&self, trace: &TraceSet, t: f64) -> Result<Snapshot, ConfigError> {
        if !t.is_finite() {
            return Err(invalid(format!("time {t} is not finite")));
        }
        let link = self.setup.link;
        let recorded = trace.link_snapshots(link);
        let nearest_recorded = recorded
            .iter()
            .min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs()));
        let nearest_scheduled = self
            .times
            .iter()
            .copied()
            .min_by(|a, b| (a - t).abs().total_cmp(&(b - t).abs()));
        let half = 0.5 * self.snapshot_dt_s;
        match (nearest_recorded, nearest_scheduled) {
            (Some(s), sched) if (s.t - t).abs() <= half && sched.is_none_or(|u| (s.t - t).abs() <= (u - t).abs() + 1e-9) => {
                Ok((*s).clone())
            }
            (_, Some(u)) if (u - t).abs() <= half => Ok(Snapshot {
                t: u,
                link,
                records: Vec::new(),
            }),
            _ => Err(invalid(format!("no snapshot within {half} s of t = {t} s"))),
        }
    }
}
