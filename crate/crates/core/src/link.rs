//! Link-level abstraction: SINR, adaptive modulation and coding, throughput
//! and delay, and the per-snapshot simulation loop.

use std::fmt;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::Deserialize;
use thiserror::Error;

use crate::array::{Direction, PlanarArray};
use crate::beam::{beam_pair_powers, generate_codebook, ideal_beam_sweep, select_best_pair, BeamCodebook, BeamError, BeamSelection, CodebookGrid};
use crate::channel::{beamformed_power, build_channel_matrices, ChannelError, NodeState, SubbandGrid};
use crate::rt::{GeometryError, Trajectory};
use crate::trace::{LinkId, MpcRecord, PathType, Snapshot, TraceSet};

/// Boltzmann constant, J/K.
pub const BOLTZMANN: f64 = 1.380649e-23;

/// SINR reported for zero received power, dB.
pub const SINR_FLOOR_DB: f64 = -200.0;

/// Header of the metrics CSV.
pub const METRICS_HEADER: &str =
    "t,los,tx_beam_az_deg,tx_beam_zen_deg,rx_beam_az_deg,rx_beam_zen_deg,sinr_db,mcs,offered_bps,delivered_bps,delay_s";

#[derive(Debug, Error)]
pub enum LinkError {
    #[error("trace has no snapshots for link {0}")]
    MissingLink(LinkId),
    #[error("AMC table: {0}")]
    Amc(String),
    #[error("invalid link budget: {0}")]
    Budget(String),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Beam(#[from] BeamError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkBudget {
    pub tx_power_w: f64,
    pub noise_figure_db: f64,
    pub bandwidth_hz: f64,
    pub temperature_k: f64,
    /// Held at zero in single-cell scenarios.
    pub interference_w: f64,
}

impl LinkBudget {
    pub fn new(tx_power_w: f64, noise_figure_db: f64, bandwidth_hz: f64) -> Result<Self, LinkError> {
        let b = Self {
            tx_power_w,
            noise_figure_db,
            bandwidth_hz,
            temperature_k: 290.0,
            interference_w: 0.0,
        };
        b.check()?;
        Ok(b)
    }

    fn check(&self) -> Result<(), LinkError> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.tx_power_w) {
            return Err(LinkError::Budget(format!("tx power {} W", self.tx_power_w)));
        }
        if !positive(self.bandwidth_hz) {
            return Err(LinkError::Budget(format!("bandwidth {} Hz", self.bandwidth_hz)));
        }
        if !positive(self.temperature_k) {
            return Err(LinkError::Budget(format!("temperature {} K", self.temperature_k)));
        }
        if !self.noise_figure_db.is_finite() {
            return Err(LinkError::Budget(format!("noise figure {} dB", self.noise_figure_db)));
        }
        if !(self.interference_w >= 0.0) {
            return Err(LinkError::Budget(format!("interference {} W", self.interference_w)));
        }
        Ok(())
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}

/// Thermal noise `k_B·T·B·10^(NF/10)` in watts.
pub fn noise_power(budget: &LinkBudget) -> f64 {
    BOLTZMANN * budget.temperature_k * budget.bandwidth_hz * 10f64.powf(budget.noise_figure_db / 10.0)
}

/// `10·log10(P/(N + I))`, floored at [`SINR_FLOOR_DB`].
pub fn compute_sinr(rx_power_w: f64, budget: &LinkBudget) -> f64 {
    if rx_power_w <= 0.0 {
        return SINR_FLOOR_DB;
    }
    let sinr = 10.0 * (rx_power_w / (noise_power(budget) + budget.interference_w)).log10();
    sinr.max(SINR_FLOOR_DB)
}

/// True iff the snapshot carries a line-of-sight path.
pub fn classify_los(records: &[MpcRecord]) -> bool {
    records.iter().any(|r| r.path_type == PathType::Los)
}

/// Spectral efficiency ladder of the default table, bits/s/Hz.
const DEFAULT_SPECTRAL_EFFICIENCY: [f64; 29] = [
    0.2344, 0.3066, 0.3770, 0.6016, 0.8770, 1.1758, 1.4766, 1.6953, 1.9141, 2.1602, 2.4063, 2.5703, 2.7305,
    3.0293, 3.3223, 3.6094, 3.9023, 4.2129, 4.5234, 4.8164, 5.1152, 5.3320, 5.5547, 5.8906, 6.2266, 6.5703,
    6.9141, 7.1602, 7.4063,
];

/// SNR gap to capacity of the default thresholds, dB.
pub const DEFAULT_SNR_GAP_DB: f64 = 3.0;

/// MCS ladder: SINR switching thresholds and spectral efficiencies.
#[derive(Debug, Clone, PartialEq)]
pub struct AmcTable {
    thresholds_db: Vec<f64>,
    spectral_efficiency: Vec<f64>,
}

impl AmcTable {
    pub const LEVELS: usize = 29;

    pub fn new(thresholds_db: Vec<f64>, spectral_efficiency: Vec<f64>) -> Result<Self, LinkError> {
        if thresholds_db.len() != Self::LEVELS || spectral_efficiency.len() != Self::LEVELS {
            return Err(LinkError::Amc(format!(
                "expected {} levels, got {} thresholds and {} efficiencies",
                Self::LEVELS,
                thresholds_db.len(),
                spectral_efficiency.len()
            )));
        }
        if thresholds_db.windows(2).any(|w| !(w[1] > w[0])) || thresholds_db.iter().any(|t| !t.is_finite()) {
            return Err(LinkError::Amc("thresholds must be finite and strictly increasing".into()));
        }
        if spectral_efficiency.windows(2).any(|w| !(w[1] > w[0])) || !(spectral_efficiency[0] > 0.0) {
            return Err(LinkError::Amc("spectral efficiencies must be positive and strictly increasing".into()));
        }
        Ok(Self {
            thresholds_db,
            spectral_efficiency,
        })
    }

    /// Thresholds from the gap approximation `10·log10(2^SE - 1) + gap`.
    pub fn from_spectral_efficiency(se: &[f64], gap_db: f64) -> Result<Self, LinkError> {
        let thresholds = se.iter().map(|s| 10.0 * (2f64.powf(*s) - 1.0).log10() + gap_db).collect();
        Self::new(thresholds, se.to_vec())
    }

    /// Reads `mcs,sinr_threshold_db,spectral_efficiency` rows.
    pub fn from_csv<R: Read>(input: R) -> Result<Self, LinkError> {
        #[derive(Deserialize)]
        struct Row {
            mcs: usize,
            sinr_threshold_db: f64,
            spectral_efficiency: f64,
        }
        let mut rows: Vec<Row> = csv::Reader::from_reader(input)
            .deserialize()
            .collect::<Result<_, _>>()
            .map_err(|e| LinkError::Amc(e.to_string()))?;
        rows.sort_by_key(|r| r.mcs);
        if rows.iter().enumerate().any(|(i, r)| r.mcs != i) {
            return Err(LinkError::Amc("MCS indices must be 0..=28 without gaps".into()));
        }
        Self::new(
            rows.iter().map(|r| r.sinr_threshold_db).collect(),
            rows.iter().map(|r| r.spectral_efficiency).collect(),
        )
    }

    pub fn threshold_db(&self, mcs: usize) -> f64 {
        self.thresholds_db[mcs]
    }

    pub fn spectral_efficiency(&self, mcs: usize) -> f64 {
        self.spectral_efficiency[mcs]
    }

    pub fn thresholds_db(&self) -> &[f64] {
        &self.thresholds_db
    }

    pub fn max_mcs(&self) -> usize {
        self.thresholds_db.len() - 1
    }
}

impl Default for AmcTable {
    fn default() -> Self {
        Self::from_spectral_efficiency(&DEFAULT_SPECTRAL_EFFICIENCY, DEFAULT_SNR_GAP_DB)
            .expect("default ladder is strictly increasing")
    }
}

/// Largest MCS whose threshold does not exceed `sinr_db`; `None` below the
/// first threshold.
pub fn select_mcs(sinr_db: f64, table: &AmcTable) -> Option<usize> {
    table.thresholds_db.partition_point(|t| *t <= sinr_db).checked_sub(1)
}

/// Two-plateau delay model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayModel {
    /// Delay of an unsaturated link, seconds.
    pub base_delay_s: f64,
    /// Extra delay of a fully saturated link, seconds.
    pub saturation_delay_s: f64,
}

impl Default for DelayModel {
    fn default() -> Self {
        Self {
            base_delay_s: 0.5e-3,
            saturation_delay_s: 7.5e-3,
        }
    }
}

/// Delivered rate and delay for a chosen MCS.
///
/// Capacity is `SE·B·(1 - overhead)`; `None` (below the lowest threshold)
/// carries no goodput. Delay grows with the unserved fraction of the load.
pub fn throughput_delay(
    mcs: Option<usize>,
    table: &AmcTable,
    bandwidth_hz: f64,
    offered_bps: f64,
    overhead: f64,
    delay: &DelayModel,
) -> (f64, f64) {
    let capacity = mcs.map_or(0.0, |m| table.spectral_efficiency(m) * bandwidth_hz * (1.0 - overhead));
    let delivered = offered_bps.min(capacity);
    let penalty = if offered_bps > 0.0 {
        delay.saturation_delay_s * (1.0 - capacity / offered_bps).max(0.0)
    } else {
        0.0
    };
    (delivered, delay.base_delay_s + penalty)
}

/// One row of the simulation output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkMetrics {
    pub t: f64,
    pub los: bool,
    pub selection: BeamSelection,
    pub sinr_db: f64,
    pub mcs: Option<usize>,
    pub offered_bps: f64,
    pub delivered_bps: f64,
    pub delay_s: f64,
}

impl fmt::Display for LinkMetrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = &self.selection;
        write!(
            f,
            "{},{},{},{},{},{},{},",
            self.t,
            u8::from(self.los),
            s.tx_direction.azimuth_deg(),
            s.tx_direction.zenith_deg(),
            s.rx_direction.azimuth_deg(),
            s.rx_direction.zenith_deg(),
            self.sinr_db
        )?;
        match self.mcs {
            Some(m) => write!(f, "{m}")?,
            None => f.write_str("NONE")?,
        }
        write!(f, ",{},{},{}", self.offered_bps, self.delivered_bps, self.delay_s)
    }
}

pub fn write_metrics<W: Write>(rows: &[LinkMetrics], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{METRICS_HEADER}")?;
    for r in rows {
        writeln!(out, "{r}")?;
    }
    out.flush()
}

/// Node motion used for Doppler; nodes are static when absent.
#[derive(Debug, Clone)]
pub struct NodeMotion {
    pub tx: Trajectory,
    pub rx: Trajectory,
}

/// Everything the simulation loop needs besides the trace.
#[derive(Debug, Clone)]
pub struct SimulationSetup {
    pub link: LinkId,
    pub tx_array: PlanarArray,
    pub rx_array: PlanarArray,
    pub tx_codebook: CodebookGrid,
    pub rx_codebook: CodebookGrid,
    pub grid: SubbandGrid,
    pub budget: LinkBudget,
    pub amc: AmcTable,
    pub delay: DelayModel,
    pub training_period_s: f64,
    pub offered_bps: f64,
    pub overhead: f64,
    pub motion: Option<NodeMotion>,
}

/// Indices of the snapshots where beams are retrained: the first one, then
/// every snapshot at least one training period after the previous training.
pub fn training_schedule(times: &[f64], period_s: f64) -> Vec<usize> {
    let mut out = Vec::new();
    let mut last: Option<f64> = None;
    for (i, &t) in times.iter().enumerate() {
        if last.is_none_or(|l| t - l >= period_s - 1e-9) {
            out.push(i);
            last = Some(t);
        }
    }
    out
}

impl SimulationSetup {
    /// Node states at `t`; both nodes are at rest without motion.
    pub fn node_states(&self, t: f64) -> Result<(NodeState, NodeState), LinkError> {
        match &self.motion {
            Some(m) => Ok((m.tx.state_at(t)?, m.rx.state_at(t)?)),
            None => Ok((NodeState::default(), NodeState::default())),
        }
    }

    pub fn codebooks(&self) -> Result<(BeamCodebook, BeamCodebook), LinkError> {
        Ok((
            generate_codebook(&self.tx_array, self.tx_codebook)?,
            generate_codebook(&self.rx_array, self.rx_codebook)?,
        ))
    }
}

pub const SWEEP_HEADER: &str = "tx_az,tx_zen,rx_az,rx_zen,power_dbm";
/// Reported power of beam pairs that receive nothing.
pub const POWER_FLOOR_DBM: f64 = -200.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub tx_direction: Direction,
    pub rx_direction: Direction,
    pub power_w: f64,
}

impl SweepRow {
    pub fn power_dbm(&self) -> f64 {
        if self.power_w > 0.0 {
            watts_to_dbm(self.power_w).max(POWER_FLOOR_DBM)
        } else {
            POWER_FLOOR_DBM
        }
    }
}

/// Power of every beam pair at one snapshot, transmit beam outermost.
#[derive(Debug, Clone)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub best: usize,
}

impl SweepTable {
    pub fn best_row(&self) -> &SweepRow {
        &self.rows[self.best]
    }

    /// Writes every pair, then the winning pair once more as the last row.
    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{SWEEP_HEADER}")?;
        for r in self.rows.iter().chain(std::iter::once(self.best_row())) {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.tx_direction.azimuth_deg(),
                r.tx_direction.zenith_deg(),
                r.rx_direction.azimuth_deg(),
                r.rx_direction.zenith_deg(),
                r.power_dbm()
            )?;
        }
        out.flush()
    }
}

/// Exhaustive sweep of one snapshot, evaluated at its own time.
pub fn sweep_snapshot(snapshot: &Snapshot, setup: &SimulationSetup) -> Result<SweepTable, LinkError> {
    let (cb_tx, cb_rx) = setup.codebooks()?;
    let (tx, rx) = setup.node_states(snapshot.t)?;
    let h = build_channel_matrices(snapshot, &setup.tx_array, &setup.rx_array, &tx, &rx, &setup.grid, snapshot.t)?;
    let powers = beam_pair_powers(&h, &cb_tx, &cb_rx, setup.budget.tx_power_w)?;
    let (best_tx, best_rx) = select_best_pair(&powers);
    let mut rows = Vec::with_capacity(cb_tx.len() * cb_rx.len());
    for (i, etx) in cb_tx.entries.iter().enumerate() {
        for (j, erx) in cb_rx.entries.iter().enumerate() {
            rows.push(SweepRow {
                tx_direction: etx.direction,
                rx_direction: erx.direction,
                power_w: powers[[j, i]],
            });
        }
    }
    Ok(SweepTable {
        rows,
        best: best_tx * cb_rx.len() + best_rx,
    })
}

/// Runs the per-snapshot loop over every snapshot of the configured link.
///
/// Beam training is resolved first (in parallel over training instants),
/// then every snapshot is evaluated independently with the weights of the
/// latest training. Output is identical for any worker count.
pub fn run_simulation(trace: &TraceSet, setup: &SimulationSetup) -> Result<Vec<LinkMetrics>, LinkError> {
    let snapshots: Vec<&Snapshot> = trace.link_snapshots(setup.link);
    if snapshots.is_empty() {
        return Err(LinkError::MissingLink(setup.link));
    }
    if !(0.0..1.0).contains(&setup.overhead) {
        return Err(LinkError::Budget(format!("overhead {} outside [0, 1)", setup.overhead)));
    }
    setup.budget.check()?;
    let (cb_tx, cb_rx) = setup.codebooks()?;
    let times: Vec<f64> = snapshots.iter().map(|s| s.t).collect();
    let schedule = training_schedule(&times, setup.training_period_s);

    let selections: Vec<BeamSelection> = schedule
        .par_iter()
        .map(|&i| {
            let snap = snapshots[i];
            let (tx, rx) = setup.node_states(snap.t)?;
            let h = build_channel_matrices(snap, &setup.tx_array, &setup.rx_array, &tx, &rx, &setup.grid, snap.t)?;
            Ok(ideal_beam_sweep(&h, &cb_tx, &cb_rx, setup.budget.tx_power_w)?)
        })
        .collect::<Result<_, LinkError>>()?;

    let mut active = Vec::with_capacity(snapshots.len());
    let mut current = 0;
    for i in 0..snapshots.len() {
        if current + 1 < schedule.len() && schedule[current + 1] == i {
            current += 1;
        }
        active.push(current);
    }

    snapshots
        .par_iter()
        .zip(active.par_iter())
        .map(|(snap, &train)| {
            let trained = selections[train];
            let (tx, rx) = setup.node_states(snap.t)?;
            let h = build_channel_matrices(snap, &setup.tx_array, &setup.rx_array, &tx, &rx, &setup.grid, snap.t)?;
            let power = beamformed_power(
                &h,
                &cb_tx.entries[trained.tx_index].weights,
                &cb_rx.entries[trained.rx_index].weights,
                setup.budget.tx_power_w,
            )?
            .total;
            let sinr_db = compute_sinr(power, &setup.budget);
            let mcs = select_mcs(sinr_db, &setup.amc);
            let (delivered_bps, delay_s) = throughput_delay(
                mcs,
                &setup.amc,
                setup.budget.bandwidth_hz,
                setup.offered_bps,
                setup.overhead,
                &setup.delay,
            );
            Ok(LinkMetrics {
                t: snap.t,
                los: classify_los(&snap.records),
                selection: BeamSelection { power, ..trained },
                sinr_db,
                mcs,
                offered_bps: setup.offered_bps,
                delivered_bps,
                delay_s,
            })
        })
        .collect()
}
