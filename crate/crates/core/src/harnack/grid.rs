use serde::Serialize;

use crate::error::{Error, Result};
use crate::group::{GroupPoint, HTypeGroup};

pub const MIN_RESOLUTION: usize = 8;

/// Tensor grid on a box in exponential coordinates `(x, t)`. The first
/// coordinate varies fastest in the node numbering.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridSpec {
    pub center: Vec<f64>,
    pub half_widths: Vec<f64>,
    pub resolution: Vec<usize>,
}

impl GridSpec {
    pub fn new(center: Vec<f64>, half_widths: Vec<f64>, resolution: Vec<usize>) -> Result<Self> {
        let dim = center.len();
        if half_widths.len() != dim || resolution.len() != dim {
            return Err(Error::Dimension(format!(
                "grid has {} centre coordinates, {} half-widths and {} resolutions",
                dim,
                half_widths.len(),
                resolution.len()
            )));
        }
        if let Some(r) = resolution.iter().find(|&&r| r < MIN_RESOLUTION) {
            return Err(Error::Domain(format!("grid resolution {r} is below {MIN_RESOLUTION}")));
        }
        if half_widths.iter().any(|&h| !(h > 0.0 && h.is_finite())) {
            return Err(Error::Structural("grid spacing must be positive".into()));
        }
        Ok(Self {
            center,
            half_widths,
            resolution,
        })
    }

    /// Box around `B_R(0)` with horizontal half-width `margin R` per frame
    /// direction and centre half-width `margin^2 R^2 / 4`, so that the centre
    /// spacing follows the square of the horizontal spacing. The same
    /// resolution is used on every axis.
    pub fn for_origin_ball(g: &HTypeGroup, radius: f64, margin: f64, resolution: usize) -> Result<Self> {
        let (m, n) = (g.m(), g.n());
        let mut half = Vec::with_capacity(m + n);
        for j in 0..m {
            half.push(margin * radius / g.scale()[j]);
        }
        for _ in 0..n {
            half.push(0.25 * (margin * radius).powi(2));
        }
        Self::new(vec![0.0; m + n], half, vec![resolution; m + n])
    }

    /// Same box, resolution per axis replaced.
    pub fn with_resolution(&self, resolution: usize) -> Result<Self> {
        Self::new(self.center.clone(), self.half_widths.clone(), vec![resolution; self.dim()])
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn len(&self) -> usize {
        self.resolution.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        2.0 * self.half_widths[axis] / (self.resolution[axis] - 1) as f64
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.resolution[..axis].iter().product()
    }

    pub fn lower(&self, axis: usize) -> f64 {
        self.center[axis] - self.half_widths[axis]
    }

    pub fn multi_index(&self, mut idx: usize) -> Vec<usize> {
        self.resolution
            .iter()
            .map(|&r| {
                let i = idx % r;
                idx /= r;
                i
            })
            .collect()
    }

    pub fn coords(&self, idx: usize) -> Vec<f64> {
        self.multi_index(idx)
            .iter()
            .enumerate()
            .map(|(a, &i)| self.lower(a) + i as f64 * self.spacing(a))
            .collect()
    }

    pub fn point(&self, m: usize, idx: usize) -> GroupPoint {
        GroupPoint::from_coords(m, &self.coords(idx))
    }

    pub fn is_boundary(&self, idx: usize) -> bool {
        self.multi_index(idx)
            .iter()
            .zip(&self.resolution)
            .any(|(&i, &r)| i == 0 || i + 1 == r)
    }

    /// Index of the node at the given position, if it is a grid node up to 1e-9
    /// of a spacing.
    pub fn node_at(&self, coords: &[f64]) -> Option<usize> {
        let mut idx = 0;
        for (a, &c) in coords.iter().enumerate() {
            let s = (c - self.lower(a)) / self.spacing(a);
            let i = s.round();
            if (s - i).abs() > 1e-9 || i < 0.0 || i as usize >= self.resolution[a] {
                return None;
            }
            idx += i as usize * self.stride(a);
        }
        Some(idx)
    }

    /// Multilinear interpolation of nodal `values` at `coords`; `None` outside the box.
    pub fn interpolate(&self, values: &[f64], coords: &[f64]) -> Option<f64> {
        let dim = self.dim();
        let mut base = 0;
        let mut frac = Vec::with_capacity(dim);
        for (a, &c) in coords.iter().enumerate() {
            let s = (c - self.lower(a)) / self.spacing(a);
            let top = (self.resolution[a] - 1) as f64;
            if !(-1e-9..=top + 1e-9).contains(&s) {
                return None;
            }
            let s = s.clamp(0.0, top);
            let i = (s.floor() as usize).min(self.resolution[a] - 2);
            frac.push(s - i as f64);
            base += i * self.stride(a);
        }
        let mut total = 0.0;
        for corner in 0..(1usize << dim) {
            let mut w = 1.0;
            let mut idx = base;
            for (a, f) in frac.iter().enumerate() {
                if corner >> a & 1 == 1 {
                    w *= f;
                    idx += self.stride(a);
                } else {
                    w *= 1.0 - f;
                }
            }
            if w != 0.0 {
                total += w * values[idx];
            }
        }
        Some(total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_roundtrip() {
        let g = GridSpec::new(vec![0.0, 1.0, 0.0], vec![1.0, 2.0, 0.5], vec![8, 9, 10]).unwrap();
        assert_eq!(g.len(), 720);
        for idx in [0, 17, 333, 719] {
            assert_eq!(g.node_at(&g.coords(idx)), Some(idx));
        }
        assert!(g.is_boundary(0));
        assert!(!g.is_boundary(g.stride(0) + g.stride(1) + g.stride(2)));
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(GridSpec::new(vec![0.0], vec![1.0], vec![4]).is_err());
        assert!(matches!(
            GridSpec::new(vec![0.0], vec![0.0], vec![9]),
            Err(Error::Structural(_))
        ));
        assert!(GridSpec::new(vec![0.0, 0.0], vec![1.0], vec![9, 9]).is_err());
    }

    #[test]
    fn interpolation_is_exact_on_multilinear_data() {
        let g = GridSpec::new(vec![0.0, 0.0, 0.0], vec![1.0, 1.0, 0.25], vec![9, 8, 11]).unwrap();
        let f = |c: &[f64]| 1.0 + 2.0 * c[0] - c[1] + 3.0 * c[2] + c[0] * c[1] * c[2];
        let vals: Vec<f64> = (0..g.len()).map(|i| f(&g.coords(i))).collect();
        for c in [[0.13, -0.71, 0.2], [1.0, 1.0, 0.25], [-1.0, 0.3, -0.1]] {
            assert!((g.interpolate(&vals, &c).unwrap() - f(&c)).abs() < 1e-12);
        }
        assert!(g.interpolate(&vals, &[1.5, 0.0, 0.0]).is_none());
    }
}
