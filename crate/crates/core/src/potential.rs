//! Periodic potentials `U` on the unit torus with analytic or interpolated derivatives.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::spline::PeriodicSpline;

const GRID_MAGIC: &[u8; 8] = b"TORUSPOT";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PotentialKind {
    Zero,
    DoubleWell2d,
    Separable,
    CustomGrid,
}

impl PotentialKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PotentialKind::Zero => "zero",
            PotentialKind::DoubleWell2d => "double-well-2d",
            PotentialKind::Separable => "separable",
            PotentialKind::CustomGrid => "custom-grid",
        }
    }
}

/// One-dimensional factor `Ũ` of a separable potential `U(x) = Σ Ũ(x_i)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Profile1d {
    /// `sin²(πy)`
    SinSquared,
    Table(PeriodicSpline),
}

impl Profile1d {
    pub fn from_table(values: &[f64]) -> Result<Self> {
        Ok(Profile1d::Table(PeriodicSpline::new(1, values.len(), values)?))
    }

    /// `(Ũ, Ũ', Ũ'')` at `y`.
    #[inline]
    pub fn eval(&self, y: f64) -> (f64, f64, f64) {
        match self {
            Profile1d::SinSquared => {
                let s = (PI * y).sin();
                let (s2, c2) = (2.0 * PI * y).sin_cos();
                (s * s, PI * s2, 2.0 * PI * PI * c2)
            }
            Profile1d::Table(spline) => {
                let mut g = [0.0];
                let mut h = [0.0];
                let v = spline.eval_full(&[y], Some(&mut g), Some(&mut h));
                (v, g[0], h[0])
            }
        }
    }
}

/// `(s, s′, s″)` of `s(x₁−¾), s(x₂−0.7), s(x₁+¾), s(x₂+0.7)` with `s = sin²(π·)`.
/// The shifts by `±¾` differ by `3/2`, so one `sin_cos` per coordinate suffices.
#[inline]
fn double_well_factors(x: &[f64]) -> [(f64, f64, f64); 4] {
    let (s1, c1) = (2.0 * PI * (x[0] - 0.75)).sin_cos();
    let (s2, c2) = (2.0 * PI * (x[1] - 0.7)).sin_cos();
    // sin 2π(x₂+0.7) = sin(2π(x₂−0.7) + 2.8π); rotate by 0.8π instead of recomputing.
    let (sr, cr) = (0.8 * PI).sin_cos();
    let (s3, c3) = (s2 * cr + c2 * sr, c2 * cr - s2 * sr);
    let f = |s: f64, c: f64| (0.5 * (1.0 - c), PI * s, 2.0 * PI * PI * c);
    [f(s1, c1), f(s2, c2), f(-s1, -c1), f(s3, c3)]
}

/// The potential `U`. All variants are 1-periodic in every coordinate.
#[derive(Debug, Clone, PartialEq)]
pub enum Potential {
    Zero { dim: usize },
    /// `U = P·Q` with `P = s(x₁−¾) + s(x₂−0.7)`, `Q = s(x₁+¾) + s(x₂+0.7)`, `s = sin²(π·)`.
    /// Minima at (0.25, 0.3) and (0.75, 0.7).
    DoubleWell,
    Separable { dim: usize, profile: Profile1d },
    Grid(PeriodicSpline),
}

impl Potential {
    pub fn zero(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Ok(Potential::Zero { dim })
    }

    pub fn separable(dim: usize, profile: Profile1d) -> Result<Self> {
        check_dim(dim)?;
        Ok(Potential::Separable { dim, profile })
    }

    pub fn grid(dim: usize, n: usize, samples: &[f64]) -> Result<Self> {
        check_dim(dim)?;
        Ok(Potential::Grid(PeriodicSpline::new(dim, n, samples)?))
    }

    pub fn dim(&self) -> usize {
        match self {
            Potential::Zero { dim } | Potential::Separable { dim, .. } => *dim,
            Potential::DoubleWell => 2,
            Potential::Grid(s) => s.dim(),
        }
    }

    pub fn kind(&self) -> PotentialKind {
        match self {
            Potential::Zero { .. } => PotentialKind::Zero,
            Potential::DoubleWell => PotentialKind::DoubleWell2d,
            Potential::Separable { .. } => PotentialKind::Separable,
            Potential::Grid(_) => PotentialKind::CustomGrid,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Potential::Zero { .. })
    }

    /// Known global minimizers, when the potential has named ones.
    pub fn minima(&self) -> Option<Vec<Vec<f64>>> {
        match self {
            Potential::DoubleWell => Some(vec![vec![0.25, 0.3], vec![0.75, 0.7]]),
            _ => None,
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Potential::Zero { .. } => 0.0,
            Potential::DoubleWell => {
                let [(a, ..), (b, ..), (c, ..), (e, ..)] = double_well_factors(x);
                (a + b) * (c + e)
            }
            Potential::Separable { dim, profile } => {
                x[..*dim].iter().map(|&y| profile.eval(y).0).sum()
            }
            Potential::Grid(s) => s.value(x),
        }
    }

    /// Writes `∇U(x)` into `out` and returns `U(x)`.
    pub fn value_grad(&self, x: &[f64], out: &mut [f64]) -> f64 {
        match self {
            Potential::Zero { dim } => {
                out[..*dim].fill(0.0);
                0.0
            }
            Potential::DoubleWell => {
                let [(a, da, _), (b, db, _), (c, dc, _), (e, de, _)] = double_well_factors(x);
                let p = a + b;
                let q = c + e;
                out[0] = da * q + p * dc;
                out[1] = db * q + p * de;
                p * q
            }
            Potential::Separable { dim, profile } => {
                let mut u = 0.0;
                for k in 0..*dim {
                    let (v, d, _) = profile.eval(x[k]);
                    u += v;
                    out[k] = d;
                }
                u
            }
            Potential::Grid(s) => s.eval_full(x, Some(out), None),
        }
    }

    pub fn gradient(&self, x: &[f64], out: &mut [f64]) {
        self.value_grad(x, out);
    }

    /// Row-major `d×d` Hessian into `out`.
    pub fn hessian(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim();
        match self {
            Potential::Zero { .. } => out[..d * d].fill(0.0),
            Potential::DoubleWell => {
                let [(a, da, dda), (b, db, ddb), (c, dc, ddc), (e, de, dde)] = double_well_factors(x);
                let p = a + b;
                let q = c + e;
                out[0] = dda * q + 2.0 * da * dc + p * ddc;
                out[3] = ddb * q + 2.0 * db * de + p * dde;
                let off = da * de + db * dc;
                out[1] = off;
                out[2] = off;
            }
            Potential::Separable { profile, .. } => {
                out[..d * d].fill(0.0);
                for k in 0..d {
                    out[k * d + k] = profile.eval(x[k]).2;
                }
            }
            Potential::Grid(s) => {
                s.eval_full(x, None, Some(out));
            }
        }
    }

    /// Laplacian `ΔU(x)`.
    pub fn laplacian(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        let mut h = [0.0; 9];
        self.hessian(x, &mut h[..d * d]);
        (0..d).map(|k| h[k * d + k]).sum()
    }

    /// Reads a custom grid table: `TORUSPOT`, `u32 d`, `u32 n`, then `n^d` little-endian f64, row-major.
    pub fn read_grid_file(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::parse_grid_bytes(&bytes)
    }

    pub fn parse_grid_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != GRID_MAGIC {
            return Err(Error::Format("missing TORUSPOT header".into()));
        }
        let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let n = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        check_dim(dim)?;
        if dim > 3 {
            return Err(Error::UnsupportedDimension { dim, reason: "grid tables support d <= 3" });
        }
        let count = n.checked_pow(dim as u32).ok_or_else(|| Error::Format("grid too large".into()))?;
        let body = &bytes[16..];
        if body.len() != count * 8 {
            return Err(Error::Format(format!(
                "expected {} bytes of samples, found {}",
                count * 8,
                body.len()
            )));
        }
        let samples: Vec<f64> =
            body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Self::grid(dim, n, &samples)
    }

    pub fn write_grid_file(path: impl AsRef<Path>, dim: usize, n: usize, samples: &[f64]) -> Result<()> {
        let expected = n.pow(dim as u32);
        if samples.len() != expected {
            return Err(Error::DimensionMismatch { expected, got: samples.len() });
        }
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(GRID_MAGIC)?;
        f.write_all(&(dim as u32).to_le_bytes())?;
        f.write_all(&(n as u32).to_le_bytes())?;
        for v in samples {
            f.write_all(&v.to_le_bytes())?;
        }
        f.flush()?;
        Ok(())
    }
}

fn check_dim(dim: usize) -> Result<()> {
    if dim < 2 {
        return Err(Error::UnsupportedDimension { dim, reason: "the torus must have d >= 2" });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn potentials() -> Vec<Potential> {
        let n = 64;
        let mut table = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let (x, y) = (i as f64 / n as f64, j as f64 / n as f64);
                table.push((2.0 * PI * x).cos() * (2.0 * PI * y).sin() + (4.0 * PI * y).cos());
            }
        }
        vec![
            Potential::zero(2).unwrap(),
            Potential::DoubleWell,
            Potential::separable(3, Profile1d::SinSquared).unwrap(),
            Potential::grid(2, n, &table).unwrap(),
        ]
    }

    #[test]
    fn double_well_minima_are_zero() {
        let u = Potential::DoubleWell;
        assert!(u.value(&[0.25, 0.3]).abs() < 1e-15);
        assert!(u.value(&[0.75, 0.7]).abs() < 1e-15);
        assert!(u.value(&[0.5, 0.5]) > 0.1);
        let mut g = [1.0; 2];
        u.gradient(&[0.25, 0.3], &mut g);
        assert!(g[0].abs() < 1e-14 && g[1].abs() < 1e-14);
    }

    #[test]
    fn periodic_across_seams() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for u in potentials() {
            let d = u.dim();
            for _ in 0..1000 {
                let x: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
                for k in 0..d {
                    let mut y = x.clone();
                    y[k] += 1.0;
                    assert!((u.value(&x) - u.value(&y)).abs() <= 1e-10, "{:?}", u.kind());
                }
            }
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 1e-5;
        for u in potentials() {
            let d = u.dim();
            let mut g = vec![0.0; d];
            for _ in 0..1000 {
                let x: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
                u.gradient(&x, &mut g);
                let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                for k in 0..d {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[k] += h;
                    xm[k] -= h;
                    let fd = (u.value(&xp) - u.value(&xm)) / (2.0 * h);
                    assert!((fd - g[k]).abs() <= 1e-5 * norm.max(1.0), "{:?} {k}", u.kind());
                }
            }
        }
    }

    #[test]
    fn hessian_matches_gradient_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = 1e-5;
        for u in potentials() {
            let d = u.dim();
            let mut hs = vec![0.0; d * d];
            let mut gp = vec![0.0; d];
            let mut gm = vec![0.0; d];
            for _ in 0..200 {
                let x: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
                u.hessian(&x, &mut hs);
                for k in 0..d {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[k] += h;
                    xm[k] -= h;
                    u.gradient(&xp, &mut gp);
                    u.gradient(&xm, &mut gm);
                    for l in 0..d {
                        let fd = (gp[l] - gm[l]) / (2.0 * h);
                        assert!((fd - hs[l * d + k]).abs() < 1e-4 * (1.0 + fd.abs()), "{:?}", u.kind());
                    }
                }
            }
        }
    }

    #[test]
    fn grid_file_round_trip() {
        let dir = std::env::temp_dir().join(format!("mixdrift-pot-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("u.bin");
        let n = 16;
        let samples: Vec<f64> = (0..n * n).map(|k| ((k % n) as f64 * 0.3).sin()).collect();
        Potential::write_grid_file(&path, 2, n, &samples).unwrap();
        let u = Potential::read_grid_file(&path).unwrap();
        assert_eq!(u.kind(), PotentialKind::CustomGrid);
        assert!((u.value(&[0.0, 3.0 / 16.0]) - samples[3]).abs() < 1e-12);
        assert!(Potential::parse_grid_bytes(b"NOTMAGIC\0\0\0\0\0\0\0\0").is_err());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn one_dimensional_torus_rejected() {
        assert!(Potential::zero(1).is_err());
    }
}
