//! Beam codebooks and exhaustive ("ideal") beam sweeps.
//!
//! Codebook grids are expressed in the array's local frame: azimuth is
//! measured from boresight, zenith from +z. Each entry stores its steered
//! direction in the global frame.

use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::array::{BeamWeights, Direction, PlanarArray};
use crate::channel::ChannelMatrixSet;

/// Relative power difference under which two beam pairs count as tied.
pub const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum BeamError {
    #[error("codebook grid is empty: {0}")]
    EmptyGrid(String),
    #[error("codebook has {codebook} elements per beam, channel expects {channel}")]
    ArrayMismatch { codebook: usize, channel: usize },
}

/// Azimuth/zenith grid in degrees, local to the array.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CodebookGrid {
    pub az_min: f64,
    pub az_max: f64,
    pub az_step: f64,
    pub zen_min: f64,
    pub zen_max: f64,
    pub zen_step: f64,
}

impl CodebookGrid {
    /// Grid with elevation bounds; zenith = 90° - elevation.
    pub fn from_elevation(az_min: f64, az_max: f64, az_step: f64, el_min: f64, el_max: f64, el_step: f64) -> Self {
        Self {
            az_min,
            az_max,
            az_step,
            zen_min: 90.0 - el_max,
            zen_max: 90.0 - el_min,
            zen_step: el_step,
        }
    }

    fn axis(min: f64, max: f64, step: f64, name: &str) -> Result<Vec<f64>, BeamError> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(BeamError::EmptyGrid(format!("{name} step {step}")));
        }
        if !(max >= min) || !min.is_finite() || !max.is_finite() {
            return Err(BeamError::EmptyGrid(format!("{name} range [{min}, {max}]")));
        }
        let n = ((max - min) / step + 1e-9).floor() as usize + 1;
        Ok((0..n).map(|i| min + i as f64 * step).collect())
    }

    pub fn azimuths(&self) -> Result<Vec<f64>, BeamError> {
        Self::axis(self.az_min, self.az_max, self.az_step, "azimuth")
    }

    pub fn zeniths(&self) -> Result<Vec<f64>, BeamError> {
        Self::axis(self.zen_min, self.zen_max, self.zen_step, "zenith")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodebookEntry {
    /// Steered direction in the global frame.
    pub direction: Direction,
    pub weights: BeamWeights,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamCodebook {
    pub grid: CodebookGrid,
    pub entries: Vec<CodebookEntry>,
}

impl BeamCodebook {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn element_count(&self) -> usize {
        self.entries.first().map_or(0, |e| e.weights.len())
    }

    /// Weights as columns of an `N × B` matrix.
    fn weight_matrix(&self) -> Array2<Complex64> {
        let n = self.element_count();
        let mut m = Array2::zeros((n, self.len()));
        for (b, e) in self.entries.iter().enumerate() {
            for (i, w) in e.weights.as_slice().iter().enumerate() {
                m[[i, b]] = *w;
            }
        }
        m
    }
}

/// One entry per grid point, azimuth outer and zenith inner. Weights are the
/// matched (unit-norm) steering vectors of each grid direction.
pub fn generate_codebook(array: &PlanarArray, grid: CodebookGrid) -> Result<BeamCodebook, BeamError> {
    let azimuths = grid.azimuths()?;
    let zeniths = grid.zeniths()?;
    let mut entries = Vec::with_capacity(azimuths.len() * zeniths.len());
    for az in &azimuths {
        for zen in &zeniths {
            let direction = array.to_global(Direction::from_degrees(*az, *zen));
            let sv = array.steering_vector(direction);
            entries.push(CodebookEntry {
                direction,
                weights: BeamWeights::matched(&sv),
            });
        }
    }
    Ok(BeamCodebook { grid, entries })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamSelection {
    pub tx_index: usize,
    pub rx_index: usize,
    pub tx_direction: Direction,
    pub rx_direction: Direction,
    /// Watts.
    pub power: f64,
}

/// Received power of every beam pair, indexed `[rx, tx]`, in watts.
pub fn beam_pair_powers(
    h: &ChannelMatrixSet,
    cb_tx: &BeamCodebook,
    cb_rx: &BeamCodebook,
    p_tx: f64,
) -> Result<Array2<f64>, BeamError> {
    if cb_tx.element_count() != h.n_tx() {
        return Err(BeamError::ArrayMismatch {
            codebook: cb_tx.element_count(),
            channel: h.n_tx(),
        });
    }
    if cb_rx.element_count() != h.n_rx() {
        return Err(BeamError::ArrayMismatch {
            codebook: cb_rx.element_count(),
            channel: h.n_rx(),
        });
    }
    let mut powers = Array2::<f64>::zeros((cb_rx.len(), cb_tx.len()));
    if h.is_zero() {
        return Ok(powers);
    }
    let w_tx = cb_tx.weight_matrix();
    let w_rx_h = cb_rx.weight_matrix().t().mapv(|w| w.conj());
    let share = p_tx / h.n_subbands() as f64;
    for k in 0..h.n_subbands() {
        let projected = h.subband(k).dot(&w_tx);
        let gains = w_rx_h.dot(&projected);
        powers.zip_mut_with(&gains, |p, g| *p += share * g.norm_sqr());
    }
    Ok(powers)
}

/// Index of the winning pair among precomputed powers: the highest power,
/// with pairs within [`TIE_TOLERANCE`] of it resolved to the lowest
/// `(tx, rx)` index.
pub fn select_best_pair(powers: &Array2<f64>) -> (usize, usize) {
    let (n_rx, n_tx) = powers.dim();
    let max = (0..n_tx)
        .into_par_iter()
        .map(|tx| (0..n_rx).map(|rx| powers[[rx, tx]]).fold(0.0f64, f64::max))
        .reduce(|| 0.0, f64::max);
    let floor = max * (1.0 - TIE_TOLERANCE);
    (0..n_tx)
        .into_par_iter()
        .filter_map(|tx| (0..n_rx).find(|&rx| powers[[rx, tx]] >= floor).map(|rx| (tx, rx)))
        .min()
        .unwrap_or((0, 0))
}

/// Exhaustive joint transmit/receive sweep.
pub fn ideal_beam_sweep(
    h: &ChannelMatrixSet,
    cb_tx: &BeamCodebook,
    cb_rx: &BeamCodebook,
    p_tx: f64,
) -> Result<BeamSelection, BeamError> {
    let powers = beam_pair_powers(h, cb_tx, cb_rx, p_tx)?;
    let (tx_index, rx_index) = select_best_pair(&powers);
    Ok(BeamSelection {
        tx_index,
        rx_index,
        tx_direction: cb_tx.entries[tx_index].direction,
        rx_direction: cb_rx.entries[rx_index].direction,
        power: powers[[rx_index, tx_index]],
    })
}
