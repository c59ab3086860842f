//! Uniform planar array geometry and array response vectors.
//!
//! Elements sit on a regular grid in the local y–z plane with boresight
//! along local +x. The only supported rotation is a bearing about global z.
//! Directions use the azimuth/zenith convention: zenith is measured from +z
//! and azimuth from +x toward +y.

use std::f64::consts::PI;

use num_complex::Complex64;
use thiserror::Error;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Error, PartialEq)]
pub enum ArrayError {
    #[error("array needs at least one row and one column, got {rows}x{cols}")]
    EmptyArray { rows: usize, cols: usize },
    #[error("element spacing must be positive, got {0}")]
    Spacing(f64),
    #[error("carrier wavelength must be positive, got {0}")]
    Wavelength(f64),
    #[error("beam weights must have unit norm, got norm {0}")]
    NotUnitNorm(f64),
    #[error("beam weights have {got} entries, array has {expected} elements")]
    LengthMismatch { expected: usize, got: usize },
}

/// Wraps an angle in radians to `[-pi, pi)`.
pub fn wrap_angle(x: f64) -> f64 {
    let w = (x + PI).rem_euclid(2.0 * PI) - PI;
    if w >= PI {
        -PI
    } else {
        w
    }
}

/// Wraps an angle in degrees to `[-180, 180)`.
pub fn wrap_degrees(x: f64) -> f64 {
    let w = (x + 180.0).rem_euclid(360.0) - 180.0;
    if w >= 180.0 {
        -180.0
    } else {
        w
    }
}

/// A direction in the global frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Direction {
    /// Azimuth, radians in `[-pi, pi)`.
    pub azimuth: f64,
    /// Zenith, radians in `[0, pi]`.
    pub zenith: f64,
}

impl Direction {
    pub fn new(azimuth: f64, zenith: f64) -> Self {
        Self {
            azimuth: wrap_angle(azimuth),
            zenith: zenith.clamp(0.0, PI),
        }
    }

    pub fn from_degrees(azimuth_deg: f64, zenith_deg: f64) -> Self {
        Self::new(azimuth_deg.to_radians(), zenith_deg.to_radians())
    }

    /// Direction of a (not necessarily unit) vector. The zero vector maps to
    /// the +z pole.
    pub fn from_vector(v: [f64; 3]) -> Self {
        let horiz = v[0].hypot(v[1]);
        Self::new(v[1].atan2(v[0]), horiz.atan2(v[2]))
    }

    pub fn azimuth_deg(&self) -> f64 {
        wrap_degrees(self.azimuth.to_degrees())
    }

    pub fn zenith_deg(&self) -> f64 {
        self.zenith.to_degrees()
    }

    pub fn unit_vector(&self) -> [f64; 3] {
        direction_unit_vector(*self)
    }
}

/// `(sinθ cosφ, sinθ sinφ, cosθ)`.
pub fn direction_unit_vector(d: Direction) -> [f64; 3] {
    let (st, ct) = d.zenith.sin_cos();
    let (sp, cp) = d.azimuth.sin_cos();
    [st * cp, st * sp, ct]
}

/// Radiation pattern of a single element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ElementPattern {
    #[default]
    Isotropic,
}

impl ElementPattern {
    /// Field amplitude gain toward a direction given in the array's local frame.
    pub fn field_gain(self, _local: Direction) -> f64 {
        match self {
            ElementPattern::Isotropic => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanarArray {
    /// Extent along local z.
    pub n_rows: usize,
    /// Extent along local y.
    pub n_cols: usize,
    /// Element pitch in wavelengths.
    pub spacing: f64,
    /// Rotation of boresight about global z, degrees.
    pub bearing_deg: f64,
    pub wavelength: f64,
    pub pattern: ElementPattern,
}

impl PlanarArray {
    pub fn new(
        n_rows: usize,
        n_cols: usize,
        spacing: f64,
        bearing_deg: f64,
        wavelength: f64,
    ) -> Result<Self, ArrayError> {
        if n_rows == 0 || n_cols == 0 {
            return Err(ArrayError::EmptyArray {
                rows: n_rows,
                cols: n_cols,
            });
        }
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(ArrayError::Spacing(spacing));
        }
        if !(wavelength > 0.0 && wavelength.is_finite()) {
            return Err(ArrayError::Wavelength(wavelength));
        }
        Ok(Self {
            n_rows,
            n_cols,
            spacing,
            bearing_deg,
            wavelength,
            pattern: ElementPattern::Isotropic,
        })
    }

    /// Half-wavelength array for a carrier frequency.
    pub fn half_wavelength(n_rows: usize, n_cols: usize, carrier_hz: f64) -> Result<Self, ArrayError> {
        Self::new(n_rows, n_cols, 0.5, 0.0, SPEED_OF_LIGHT / carrier_hz)
    }

    pub fn with_bearing(mut self, bearing_deg: f64) -> Self {
        self.bearing_deg = bearing_deg;
        self
    }

    pub fn element_count(&self) -> usize {
        self.n_rows * self.n_cols
    }

    /// Global direction expressed in the array's own frame.
    pub fn to_local(&self, d: Direction) -> Direction {
        Direction::new(d.azimuth - self.bearing_deg.to_radians(), d.zenith)
    }

    /// Local-frame direction expressed in the global frame.
    pub fn to_global(&self, d: Direction) -> Direction {
        Direction::new(d.azimuth + self.bearing_deg.to_radians(), d.zenith)
    }

    /// Element positions in meters, row-major (row outer, column inner),
    /// rotated by the bearing.
    pub fn element_positions(&self) -> Vec<[f64; 3]> {
        let pitch = self.spacing * self.wavelength;
        let (sb, cb) = self.bearing_deg.to_radians().sin_cos();
        let mut out = Vec::with_capacity(self.element_count());
        for r in 0..self.n_rows {
            for c in 0..self.n_cols {
                let y = c as f64 * pitch;
                let z = r as f64 * pitch;
                // rotation of (0, y, z) about z
                out.push([-y * sb, y * cb, z]);
            }
        }
        out
    }

    /// Array response toward `d`: entry for element at `p` is
    /// `exp(j·2π/λ·p·r̂(d))`, scaled by the element pattern. Not normalized.
    pub fn steering_vector(&self, d: Direction) -> SteeringVector {
        let local = self.to_local(d);
        let u = local.zenith.sin() * local.azimuth.sin();
        let v = local.zenith.cos();
        let amp = self.pattern.field_gain(local);
        let k = 2.0 * PI * self.spacing;
        let mut entries = Vec::with_capacity(self.element_count());
        for r in 0..self.n_rows {
            for c in 0..self.n_cols {
                let phase = k * (c as f64 * u + r as f64 * v);
                entries.push(Complex64::from_polar(amp, phase));
            }
        }
        SteeringVector {
            entries,
            direction: d,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteeringVector {
    pub entries: Vec<Complex64>,
    pub direction: Direction,
}

impl SteeringVector {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Unit-norm beamforming vector `w`.
///
/// The array combines (or excites) through `w^H`, so the per-element
/// multipliers physically applied are `conj(w)`. Built from a steering
/// vector `a`, `w = a/√N` and the applied multipliers are the conjugate
/// steering vector `conj(a)/√N`.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamWeights(Vec<Complex64>);

impl BeamWeights {
    pub const NORM_TOLERANCE: f64 = 1e-9;

    pub fn new(w: Vec<Complex64>) -> Result<Self, ArrayError> {
        let norm = w.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > Self::NORM_TOLERANCE {
            return Err(ArrayError::NotUnitNorm(norm));
        }
        Ok(Self(w))
    }

    /// Normalizes an arbitrary non-zero vector.
    pub fn normalized(w: Vec<Complex64>) -> Result<Self, ArrayError> {
        let norm = w.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(ArrayError::NotUnitNorm(norm));
        }
        Ok(Self(w.into_iter().map(|x| x / norm).collect()))
    }

    /// Matched weights toward the steering vector's direction.
    pub fn matched(sv: &SteeringVector) -> Self {
        let scale = 1.0 / (sv.len() as f64).sqrt();
        Self(sv.entries.iter().map(|a| a * scale).collect())
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: [f64; 3], b: [f64; 3], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    /// Independent per-element evaluation from global positions.
    fn brute_steering(arr: &PlanarArray, d: Direction) -> Vec<Complex64> {
        let r = direction_unit_vector(d);
        arr.element_positions()
            .iter()
            .map(|p| {
                let proj = p[0] * r[0] + p[1] * r[1] + p[2] * r[2];
                Complex64::new(0.0, 2.0 * PI / arr.wavelength * proj).exp()
            })
            .collect()
    }

    #[test]
    fn invalid_arrays_rejected() {
        assert!(PlanarArray::new(0, 4, 0.5, 0.0, 0.01).is_err());
        assert!(PlanarArray::new(4, 4, 0.0, 0.0, 0.01).is_err());
        assert!(PlanarArray::new(4, 4, 0.5, 0.0, -1.0).is_err());
    }

    #[test]
    fn single_element_at_origin() {
        let arr = PlanarArray::new(1, 1, 0.5, 0.0, 0.01).unwrap();
        assert_eq!(arr.element_positions(), vec![[0.0, 0.0, 0.0]]);
    }

    #[test]
    fn two_by_two_positions() {
        let arr = PlanarArray::new(2, 2, 0.5, 0.0, 0.01).unwrap();
        let pos = arr.element_positions();
        let expected = [
            [0.0, 0.0, 0.0],
            [0.0, 0.005, 0.0],
            [0.0, 0.0, 0.005],
            [0.0, 0.005, 0.005],
        ];
        for (p, e) in pos.iter().zip(expected) {
            assert!(close(*p, e, 1e-15), "{p:?} vs {e:?}");
        }
    }

    #[test]
    fn sixteen_square_in_yz_plane() {
        let arr = PlanarArray::new(16, 16, 0.5, 0.0, 0.0107).unwrap();
        let pos = arr.element_positions();
        assert_eq!(pos.len(), 256);
        assert!(pos.iter().all(|p| p[0] == 0.0));
    }

    #[test]
    fn unit_vectors_at_axes() {
        assert!(close(Direction::from_degrees(0.0, 90.0).unit_vector(), [1.0, 0.0, 0.0], 1e-15));
        assert!(close(Direction::from_degrees(90.0, 90.0).unit_vector(), [0.0, 1.0, 0.0], 1e-15));
        for az in [-170.0, 0.0, 33.0, 120.0] {
            assert!(close(Direction::from_degrees(az, 0.0).unit_vector(), [0.0, 0.0, 1.0], 0.0));
        }
    }

    #[test]
    fn boresight_entries_are_one() {
        for bearing in [0.0, 30.0, -135.0] {
            let arr = PlanarArray::new(4, 8, 0.5, bearing, 0.0107).unwrap();
            let sv = arr.steering_vector(Direction::from_degrees(bearing, 90.0));
            for e in &sv.entries {
                assert!((e - Complex64::new(1.0, 0.0)).norm() < 1e-14, "{e}");
            }
        }
    }

    #[test]
    fn half_wave_pair_along_y() {
        let arr = PlanarArray::new(1, 2, 0.5, 0.0, 0.01).unwrap();
        let sv = arr.steering_vector(Direction::from_degrees(90.0, 90.0));
        assert!((sv.entries[0] - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        assert!((sv.entries[1] - Complex64::new(-1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn matches_brute_force_for_random_directions() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        let arr = PlanarArray::new(16, 16, 0.5, 0.0, 0.0107069).unwrap();
        for _ in 0..50 {
            let d = Direction::new(rng.random_range(-PI..PI), rng.random_range(0.0..PI));
            let fast = arr.steering_vector(d);
            let slow = brute_steering(&arr, d);
            for (a, b) in fast.entries.iter().zip(&slow) {
                assert!((a - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn matched_weights_have_unit_norm() {
        let arr = PlanarArray::new(16, 128, 0.5, 0.0, 0.0107).unwrap();
        let w = BeamWeights::matched(&arr.steering_vector(Direction::from_degrees(12.0, 97.0)));
        assert!((w.norm() - 1.0).abs() < 1e-12);
        assert!(BeamWeights::new(vec![Complex64::new(0.5, 0.0)]).is_err());
    }

    #[test]
    fn wrap_helpers() {
        assert_eq!(wrap_degrees(180.0), -180.0);
        assert_eq!(wrap_degrees(-180.0), -180.0);
        assert!((wrap_degrees(370.0) - 10.0).abs() < 1e-12);
        assert_eq!(wrap_angle(PI), -PI);
    }

    proptest! {
        #[test]
        fn entries_have_unit_magnitude(
            rows in 1usize..8, cols in 1usize..8,
            az in -PI..PI, zen in 0.0..PI, bearing in -180.0..180.0f64,
        ) {
            let arr = PlanarArray::new(rows, cols, 0.5, bearing, 0.0107).unwrap();
            for e in arr.steering_vector(Direction::new(az, zen)).entries {
                prop_assert!((e.norm() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn conjugate_match_gain_is_element_count(
            rows in 1usize..32, cols in 1usize..64, az in -PI..PI, zen in 0.0..PI,
        ) {
            let arr = PlanarArray::new(rows, cols, 0.5, 0.0, 0.0107).unwrap();
            let sv = arr.steering_vector(Direction::new(az, zen));
            let gain: Complex64 = sv.entries.iter().map(|a| a.conj() * a).sum();
            let n = arr.element_count() as f64;
            prop_assert!((gain.norm() - n).abs() <= 1e-9 * n);
        }

        #[test]
        fn bearing_equivariance(
            az in -PI..PI, zen in 0.0..PI, bearing in -180.0..180.0f64,
        ) {
            let rotated = PlanarArray::new(4, 6, 0.5, bearing, 0.0107).unwrap();
            let plain = PlanarArray::new(4, 6, 0.5, 0.0, 0.0107).unwrap();
            let a = rotated.steering_vector(Direction::new(az, zen));
            let b = plain.steering_vector(Direction::new(az - bearing.to_radians(), zen));
            for (x, y) in a.entries.iter().zip(&b.entries) {
                prop_assert!((x - y).norm() < 1e-12);
            }
        }

        #[test]
        fn unit_vector_norm(az in -PI..PI, zen in 0.0..PI) {
            let v = Direction::new(az, zen).unit_vector();
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            prop_assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn conjugate_match_gain_largest_array() {
        let arr = PlanarArray::new(16, 128, 0.5, 20.0, 0.0107).unwrap();
        let sv = arr.steering_vector(Direction::from_degrees(71.0, 103.0));
        let gain: Complex64 = sv.entries.iter().map(|a| a.conj() * a).sum();
        assert!((gain.norm() - 2048.0).abs() < 1e-9);
    }
}
