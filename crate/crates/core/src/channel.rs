//! Frequency-domain MIMO channel synthesis from multipath components.
//!
//! For a snapshot at time `t` evaluated at `t_eval`, subband `k` is
//!
//! ```text
//! H_k = Σ_p g_p e^{jφ_p} e^{-j2πΔf_k τ_p} e^{j2πν_p(t_eval - t)} a_rx(aoa_p) a_tx(aod_p)^H
//! ```
//!
//! The trace phase already contains the carrier-delay term, so only the
//! baseband offset of each subband is applied to the delay. Doppler enters
//! as a phase ramp from the snapshot timestamp.

use std::f64::consts::PI;

use ndarray::{Array2, Array3, ArrayView2, Axis};
use num_complex::Complex64;
use thiserror::Error;

use crate::array::{ArrayError, BeamWeights, Direction, PlanarArray, SPEED_OF_LIGHT};
use crate::trace::{MpcRecord, Snapshot};

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("path {path_id} at t={t} has a non-finite field")]
    NonFinite { t: f64, path_id: u32 },
    #[error("evaluation time {t_eval} precedes snapshot time {t}")]
    EvalBeforeSnapshot { t: f64, t_eval: f64 },
    #[error("invalid subband grid: {0}")]
    Grid(String),
    #[error("transmit power must be positive, got {0} W")]
    TxPower(f64),
    #[error(transparent)]
    Weights(#[from] ArrayError),
}

/// Subband layout of the simulated bandwidth.
#[derive(Debug, Clone, PartialEq)]
pub struct SubbandGrid {
    pub carrier_hz: f64,
    pub bandwidth_hz: f64,
    pub n_subbands: usize,
}

impl SubbandGrid {
    pub fn new(carrier_hz: f64, bandwidth_hz: f64, n_subbands: usize) -> Result<Self, ChannelError> {
        if !(carrier_hz > 0.0 && carrier_hz.is_finite()) {
            return Err(ChannelError::Grid(format!("carrier {carrier_hz} Hz")));
        }
        if !(bandwidth_hz > 0.0 && bandwidth_hz.is_finite()) {
            return Err(ChannelError::Grid(format!("bandwidth {bandwidth_hz} Hz")));
        }
        if n_subbands == 0 {
            return Err(ChannelError::Grid("zero subbands".into()));
        }
        Ok(Self {
            carrier_hz,
            bandwidth_hz,
            n_subbands,
        })
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_hz
    }

    /// Baseband center offsets `(k + 0.5)·B/K - B/2`.
    pub fn offsets(&self) -> Vec<f64> {
        let k = self.n_subbands as f64;
        (0..self.n_subbands)
            .map(|i| (i as f64 + 0.5) * self.bandwidth_hz / k - self.bandwidth_hz / 2.0)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NodeState {
    pub position: [f64; 3],
    pub velocity: [f64; 3],
}

impl NodeState {
    pub fn fixed(position: [f64; 3]) -> Self {
        Self {
            position,
            velocity: [0.0; 3],
        }
    }
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn aod_direction(r: &MpcRecord) -> Direction {
    Direction::from_degrees(r.aod_az_deg, r.aod_zen_deg)
}

pub(crate) fn aoa_direction(r: &MpcRecord) -> Direction {
    Direction::from_degrees(r.aoa_az_deg, r.aoa_zen_deg)
}

/// Doppler shift of a path in Hz: `(v_tx·d̂ - v_rx·â)/λ`, where `d̂` is the
/// departure direction and `â = -r̂(aoa)` the propagation direction into the
/// receiver.
pub fn doppler_shift(record: &MpcRecord, tx: &NodeState, rx: &NodeState, wavelength: f64) -> f64 {
    let departure = aod_direction(record).unit_vector();
    let toward_arrival = aoa_direction(record).unit_vector();
    (dot(tx.velocity, departure) + dot(rx.velocity, toward_arrival)) / wavelength
}

/// Per-subband `N_rx × N_tx` channel matrices of one link snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrixSet {
    pub grid: SubbandGrid,
    /// Snapshot time the paths belong to.
    pub t: f64,
    /// Shape `(K, N_rx, N_tx)`.
    pub matrices: Array3<Complex64>,
}

impl ChannelMatrixSet {
    pub fn zeros(grid: SubbandGrid, t: f64, n_rx: usize, n_tx: usize) -> Self {
        let k = grid.n_subbands;
        Self {
            grid,
            t,
            matrices: Array3::zeros((k, n_rx, n_tx)),
        }
    }

    pub fn n_subbands(&self) -> usize {
        self.matrices.dim().0
    }

    pub fn n_rx(&self) -> usize {
        self.matrices.dim().1
    }

    pub fn n_tx(&self) -> usize {
        self.matrices.dim().2
    }

    pub fn subband(&self, k: usize) -> ArrayView2<'_, Complex64> {
        self.matrices.index_axis(Axis(0), k)
    }

    pub fn is_zero(&self) -> bool {
        self.matrices.iter().all(|h| *h == Complex64::new(0.0, 0.0))
    }
}

/// Complex coefficient of each path on each subband, shape `(K, P)`.
fn path_coefficients(
    records: &[MpcRecord],
    tx: &NodeState,
    rx: &NodeState,
    grid: &SubbandGrid,
    elapsed: f64,
) -> Array2<Complex64> {
    let offsets = grid.offsets();
    let wavelength = grid.wavelength();
    let mut coeffs = Array2::zeros((offsets.len(), records.len()));
    for (p, r) in records.iter().enumerate() {
        let nu = doppler_shift(r, tx, rx, wavelength);
        let base = r.phase_rad + 2.0 * PI * nu * elapsed;
        for (k, df) in offsets.iter().enumerate() {
            let phase = base - 2.0 * PI * df * r.delay_s;
            coeffs[[k, p]] = Complex64::from_polar(r.gain_mag, phase);
        }
    }
    coeffs
}

/// Builds the channel of one snapshot at time `t_eval`.
///
/// Empty snapshots are outages and yield all-zero matrices.
pub fn build_channel_matrices(
    snapshot: &Snapshot,
    tx_array: &PlanarArray,
    rx_array: &PlanarArray,
    tx: &NodeState,
    rx: &NodeState,
    grid: &SubbandGrid,
    t_eval: f64,
) -> Result<ChannelMatrixSet, ChannelError> {
    if t_eval < snapshot.t {
        return Err(ChannelError::EvalBeforeSnapshot {
            t: snapshot.t,
            t_eval,
        });
    }
    if let Some(bad) = snapshot.records.iter().find(|r| r.is_non_finite()) {
        return Err(ChannelError::NonFinite {
            t: bad.t,
            path_id: bad.path_id,
        });
    }
    let n_rx = rx_array.element_count();
    let n_tx = tx_array.element_count();
    let k = grid.n_subbands;
    let paths = &snapshot.records;
    if paths.is_empty() {
        return Ok(ChannelMatrixSet::zeros(grid.clone(), snapshot.t, n_rx, n_tx));
    }

    // Rank-one spatial signature of every path, flattened row-major.
    let mut signatures = Array2::<Complex64>::zeros((paths.len(), n_rx * n_tx));
    for (p, r) in paths.iter().enumerate() {
        let a_rx = rx_array.steering_vector(aoa_direction(r));
        let a_tx = tx_array.steering_vector(aod_direction(r));
        let mut row = signatures.row_mut(p);
        for (u, ar) in a_rx.entries.iter().enumerate() {
            for (s, at) in a_tx.entries.iter().enumerate() {
                row[u * n_tx + s] = ar * at.conj();
            }
        }
    }
    let coeffs = path_coefficients(paths, tx, rx, grid, t_eval - snapshot.t);
    let flat = coeffs.dot(&signatures);
    let matrices = flat
        .into_shape_with_order((k, n_rx, n_tx))
        .expect("shape matches by construction");
    Ok(ChannelMatrixSet {
        grid: grid.clone(),
        t: snapshot.t,
        matrices,
    })
}

/// `w_rx^H H w_tx` for one subband.
pub fn beamformed_response(h: ArrayView2<'_, Complex64>, w_tx: &[Complex64], w_rx: &[Complex64]) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for (row, wr) in h.outer_iter().zip(w_rx) {
        let mut inner = Complex64::new(0.0, 0.0);
        for (hs, wt) in row.iter().zip(w_tx) {
            inner += hs * wt;
        }
        acc += wr.conj() * inner;
    }
    acc
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamformedPower {
    /// Watts per subband.
    pub per_subband: Vec<f64>,
    /// Watts.
    pub total: f64,
}

/// Received power with transmit power split evenly across subbands:
/// `P_k = (p_tx/K)·|w_rx^H H_k w_tx|²`.
pub fn beamformed_power(
    h: &ChannelMatrixSet,
    w_tx: &BeamWeights,
    w_rx: &BeamWeights,
    p_tx: f64,
) -> Result<BeamformedPower, ChannelError> {
    if !(p_tx > 0.0 && p_tx.is_finite()) {
        return Err(ChannelError::TxPower(p_tx));
    }
    for (w, n) in [(w_tx, h.n_tx()), (w_rx, h.n_rx())] {
        if w.len() != n {
            return Err(ArrayError::LengthMismatch {
                expected: n,
                got: w.len(),
            }
            .into());
        }
        let norm = w.norm();
        if (norm - 1.0).abs() > BeamWeights::NORM_TOLERANCE {
            return Err(ArrayError::NotUnitNorm(norm).into());
        }
    }
    let share = p_tx / h.n_subbands() as f64;
    let per_subband: Vec<f64> = (0..h.n_subbands())
        .map(|k| share * beamformed_response(h.subband(k), w_tx.as_slice(), w_rx.as_slice()).norm_sqr())
        .collect();
    let total = per_subband.iter().sum();
    Ok(BeamformedPower { per_subband, total })
}
