//! Points on the unit torus `T^d = R^d / Z^d`.

use crate::error::{Error, Result};

/// Reduces a real coordinate into `[0, 1)`.
#[inline]
pub fn wrap_coord(c: f64) -> f64 {
    let r = c - c.floor();
    // `c - floor(c)` rounds to 1.0 for tiny negative inputs.
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Wraps every coordinate of `x` in place.
#[inline]
pub fn wrap_in_place(x: &mut [f64]) {
    for c in x.iter_mut() {
        *c = wrap_coord(*c);
    }
}

/// Signed shortest displacement from `a` to `b` along one circle, in `[-1/2, 1/2)`.
#[inline]
pub fn circle_delta(a: f64, b: f64) -> f64 {
    let d = b - a;
    d - (d + 0.5).floor()
}

/// Torus distance between two coordinate slices: per-axis `min(|Δ|, 1 - |Δ|)`, combined
/// in the Euclidean norm.
pub fn torus_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = (x - y).abs().rem_euclid(1.0);
            let d = d.min(1.0 - d);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TorusPoint {
    coords: Vec<f64>,
}

impl TorusPoint {
    /// Wraps a raw vector onto the torus. Fails on non-finite entries.
    pub fn wrap(raw: &[f64]) -> Result<Self> {
        let mut coords = Vec::with_capacity(raw.len());
        for (index, &value) in raw.iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::NonFinite { index, value });
            }
            coords.push(wrap_coord(value));
        }
        Ok(Self { coords })
    }

    /// Builds a point from coordinates already known to lie in `[0, 1)`.
    pub(crate) fn from_wrapped(coords: Vec<f64>) -> Self {
        debug_assert!(coords.iter().all(|c| (0.0..1.0).contains(c)));
        Self { coords }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    pub fn distance(&self, other: &TorusPoint) -> f64 {
        torus_distance(&self.coords, &other.coords)
    }
}

impl AsRef<[f64]> for TorusPoint {
    fn as_ref(&self) -> &[f64] {
        &self.coords
    }
}

/// Wraps a raw vector; the free-function form of [`TorusPoint::wrap`].
pub fn wrap(raw: &[f64]) -> Result<TorusPoint> {
    TorusPoint::wrap(raw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn wraps_negative_and_large() {
        let p = wrap(&[1.25, -0.3]).unwrap();
        assert!((p.coords()[0] - 0.25).abs() < 1e-15);
        assert!((p.coords()[1] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn identity_on_range() {
        let p = wrap(&[0.0, 0.999]).unwrap();
        assert_eq!(p.coords(), &[0.0, 0.999]);
    }

    #[test]
    fn distance_wraps_around() {
        let a = wrap(&[0.05, 0.0]).unwrap();
        let b = wrap(&[0.95, 0.0]).unwrap();
        assert!((a.distance(&b) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(matches!(wrap(&[0.1, f64::NAN]), Err(Error::NonFinite { index: 1, .. })));
        assert!(wrap(&[f64::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn tiny_negative_does_not_round_to_one() {
        assert_eq!(wrap_coord(-1e-18), 0.0);
    }

    proptest! {
        #[test]
        fn wrapped_coordinates_in_unit_interval(xs in prop::collection::vec(-1e6f64..1e6, 2..6)) {
            let p = wrap(&xs).unwrap();
            for (&c, &raw) in p.coords().iter().zip(&xs) {
                prop_assert!((0.0..1.0).contains(&c));
                let k = raw - c;
                prop_assert!((k - k.round()).abs() < 1e-6);
            }
        }

        #[test]
        fn circle_delta_is_shortest(a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let d = circle_delta(a, b);
            prop_assert!((-0.5..0.5).contains(&d));
            prop_assert!((wrap_coord(a + d) - b).abs() < 1e-12 || (wrap_coord(a + d) - b).abs() > 1.0 - 1e-12);
        }
    }
}
