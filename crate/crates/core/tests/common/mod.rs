//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use num_complex::Complex64;
use rand::rngs::StdRng;
use rand::Rng;

use sitechan::array::{PlanarArray, SPEED_OF_LIGHT};
use sitechan::channel::{ChannelMatrixSet, NodeState, SubbandGrid};
use sitechan::trace::{MpcRecord, PathType};

pub const FC: f64 = 28e9;

pub fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

pub fn random_record(rng: &mut StdRng, path_id: u32) -> MpcRecord {
    MpcRecord {
        t: 0.0,
        tx_id: 0,
        rx_id: 1,
        path_id,
        path_type: if path_id == 0 { PathType::Los } else { PathType::Reflection },
        delay_s: rng.random_range(1e-8..2e-6),
        gain_mag: rng.random_range(1e-7..1e-3),
        phase_rad: rng.random_range(-PI..PI),
        aod_az_deg: rng.random_range(-180.0..180.0),
        aod_zen_deg: rng.random_range(0.0..180.0),
        aoa_az_deg: rng.random_range(-180.0..180.0),
        aoa_zen_deg: rng.random_range(0.0..180.0),
    }
}

pub fn random_array(rng: &mut StdRng, max_side: usize) -> PlanarArray {
    PlanarArray::new(
        rng.random_range(1..=max_side),
        rng.random_range(1..=max_side),
        rng.random_range(0.3..0.8),
        rng.random_range(-180.0..180.0),
        SPEED_OF_LIGHT / FC,
    )
    .unwrap()
}

pub fn random_state(rng: &mut StdRng) -> NodeState {
    NodeState {
        position: [0.0; 3],
        velocity: [rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), rng.random_range(-2.0..2.0)],
    }
}

pub fn unit(az_deg: f64, zen_deg: f64) -> [f64; 3] {
    let (az, zen) = (az_deg.to_radians(), zen_deg.to_radians());
    [zen.sin() * az.cos(), zen.sin() * az.sin(), zen.cos()]
}

/// Element response computed from global element coordinates.
pub fn element_response(array: &PlanarArray, row: usize, col: usize, az_deg: f64, zen_deg: f64) -> Complex64 {
    let pitch = array.spacing * array.wavelength;
    let b = array.bearing_deg.to_radians();
    let y = col as f64 * pitch;
    let p = [-y * b.sin(), y * b.cos(), row as f64 * pitch];
    let r = unit(az_deg, zen_deg);
    let proj = p[0] * r[0] + p[1] * r[1] + p[2] * r[2];
    Complex64::from_polar(1.0, 2.0 * PI / array.wavelength * proj)
}

/// Path x rx-element x tx-element reference.
pub fn reference_channel(
    records: &[MpcRecord],
    tx_array: &PlanarArray,
    rx_array: &PlanarArray,
    tx: &NodeState,
    rx: &NodeState,
    grid: &SubbandGrid,
    elapsed: f64,
) -> Vec<Array2<Complex64>> {
    let lambda = SPEED_OF_LIGHT / grid.carrier_hz;
    let k_total = grid.n_subbands;
    let (n_rx, n_tx) = (rx_array.element_count(), tx_array.element_count());
    (0..k_total)
        .map(|k| {
            let df = grid.bandwidth_hz * ((k as f64 + 0.5) / k_total as f64 - 0.5);
            let mut h = Array2::<Complex64>::zeros((n_rx, n_tx));
            for r in records {
                let d = unit(r.aod_az_deg, r.aod_zen_deg);
                let a = unit(r.aoa_az_deg, r.aoa_zen_deg);
                let nu = (tx.velocity.iter().zip(d).map(|(v, u)| v * u).sum::<f64>()
                    + rx.velocity.iter().zip(a).map(|(v, u)| v * u).sum::<f64>())
                    / lambda;
                let c = Complex64::from_polar(
                    r.gain_mag,
                    r.phase_rad - 2.0 * PI * df * r.delay_s + 2.0 * PI * nu * elapsed,
                );
                for u in 0..n_rx {
                    let ar = element_response(rx_array, u / rx_array.n_cols, u % rx_array.n_cols, r.aoa_az_deg, r.aoa_zen_deg);
                    for s in 0..n_tx {
                        let at = element_response(tx_array, s / tx_array.n_cols, s % tx_array.n_cols, r.aod_az_deg, r.aod_zen_deg);
                        h[[u, s]] += c * ar * at.conj();
                    }
                }
            }
            h
        })
        .collect()
}

pub fn relative_error(h: &ChannelMatrixSet, reference: &[Array2<Complex64>]) -> f64 {
    let mut diff = 0.0;
    let mut norm = 0.0;
    for (k, r) in reference.iter().enumerate() {
        for (a, b) in h.subband(k).iter().zip(r.iter()) {
            diff += (a - b).norm_sqr();
            norm += b.norm_sqr();
        }
    }
    (diff / norm).sqrt()
}

