//! Unit-vector geometry: normalization, inner-product similarity, and the
//! closed-form angular-margin bounds the loss grid search relies on.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norm tolerance accepted when constructing a [`UnitVector`] from raw parts.
pub const UNIT_NORM_TOL: f64 = 1e-9;

/// Norm below which a vector is treated as zero.
pub const ZERO_NORM_TOL: f64 = 1e-12;

/// A point on the d-dimensional unit hypersphere (d >= 2).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitVector(Vec<f64>);

impl UnitVector {
    /// Wraps components that are already unit-norm (within 1e-9).
    pub fn new(components: Vec<f64>) -> Result<Self> {
        if components.len() < 2 {
            return Err(Error::DimensionMismatch {
                left: components.len(),
                right: 2,
            });
        }
        let norm = l2_norm(&components);
        if (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::ZeroVector { norm });
        }
        Ok(Self(components))
    }

    /// Dimension of the ambient space.
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_components(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for UnitVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Upper bounds for the between-class (`a1_max`) and within-class (`a2_max`)
/// angular margins, in cosine-difference units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginBounds {
    pub a1_max: f64,
    pub a2_max: f64,
}

/// Euclidean norm of a raw vector.
pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Inner product of two raw vectors of equal length.
pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    debug_assert_eq!(u.len(), v.len());
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// Squared Euclidean distance between two raw vectors.
pub fn squared_distance(u: &[f64], v: &[f64]) -> f64 {
    debug_assert_eq!(u.len(), v.len());
    u.iter()
        .zip(v)
        .map(|(a, b)| {
            let d = a - b;
            d * d
        })
        .sum()
}

/// Projects a raw vector onto the unit hypersphere.
///
/// Fails with [`Error::ZeroVector`] when the norm is below 1e-12, which
/// signals degenerate encoder output rather than a recoverable condition.
pub fn normalize(v: &[f64]) -> Result<UnitVector> {
    if v.len() < 2 {
        return Err(Error::DimensionMismatch {
            left: v.len(),
            right: 2,
        });
    }
    let norm = l2_norm(v);
    if norm < ZERO_NORM_TOL {
        return Err(Error::ZeroVector { norm });
    }
    Ok(UnitVector(v.iter().map(|x| x / norm).collect()))
}

/// Inner-product similarity of two unit vectors, clamped to [-1, 1] so that
/// downstream exp/log never sees out-of-range values.
pub fn cos_sim(u: &UnitVector, v: &UnitVector) -> Result<f64> {
    if u.dim() != v.dim() {
        return Err(Error::DimensionMismatch {
            left: u.dim(),
            right: v.dim(),
        });
    }
    Ok(dot(u.as_slice(), v.as_slice()).clamp(-1.0, 1.0))
}

/// Closed-form upper bounds for the two angular margins, from the extreme 2-D
/// configuration where every class collapses to a single point:
/// `a1_max = cos(0) - cos(2*pi/C)` and `a2_max = cos(0) - cos(2*pi*L_c/L)`.
///
/// These bound the grid search for `a1`/`a2`; they make no claim about
/// optimal packings in higher dimensions.
pub fn margin_upper_bounds(
    num_classes: usize,
    class_size: usize,
    total_size: usize,
) -> Result<MarginBounds> {
    if num_classes < 2 || class_size < 1 || class_size > total_size {
        return Err(Error::InvalidCounts {
            classes: num_classes,
            class_size,
            total: total_size,
        });
    }
    let tau = 2.0 * std::f64::consts::PI;
    let a1_max = 1.0 - (tau / num_classes as f64).cos();
    let a2_max = 1.0 - (tau * class_size as f64 / total_size as f64).cos();
    Ok(MarginBounds { a1_max, a2_max })
}
