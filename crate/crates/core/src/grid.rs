//! Uniform tensor grid on the truncation box `[−R, R]^d`.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    radius: f64,
    counts: Vec<usize>,
    spacing: Vec<f64>,
    strides: Vec<usize>,
    len: usize,
}

impl Grid {
    pub fn new(dim: usize, radius: f64, nodes_per_axis: &[usize]) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::InvalidRadius(radius));
        }
        if nodes_per_axis.len() != dim || dim == 0 {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: nodes_per_axis.len(),
            });
        }
        if let Some((axis, &nodes)) = nodes_per_axis.iter().enumerate().find(|(_, &n)| n < 3) {
            return Err(Error::NoInterior { axis, nodes });
        }
        let spacing = nodes_per_axis
            .iter()
            .map(|&n| 2.0 * radius / (n - 1) as f64)
            .collect();
        let mut strides = vec![1; dim];
        for k in 1..dim {
            strides[k] = strides[k - 1] * nodes_per_axis[k - 1];
        }
        Ok(Grid {
            radius,
            counts: nodes_per_axis.to_vec(),
            spacing,
            strides,
            len: nodes_per_axis.iter().product(),
        })
    }

    /// Same node count on every axis.
    pub fn uniform(dim: usize, radius: f64, nodes: usize) -> Result<Self> {
        Self::new(dim, radius, &vec![nodes; dim])
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn max_spacing(&self) -> f64 {
        self.spacing.iter().copied().fold(0.0, f64::max)
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    pub fn interior_count(&self) -> usize {
        self.counts.iter().map(|n| n - 2).product()
    }

    pub fn multi_index(&self, flat: usize) -> Vec<usize> {
        self.counts
            .iter()
            .zip(&self.strides)
            .map(|(n, s)| (flat / s) % n)
            .collect()
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn axis_coordinate(&self, axis: usize, i: usize) -> f64 {
        if i + 1 == self.counts[axis] {
            self.radius
        } else {
            -self.radius + i as f64 * self.spacing[axis]
        }
    }

    pub fn coordinates(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat)
            .into_iter()
            .enumerate()
            .map(|(k, i)| self.axis_coordinate(k, i))
            .collect()
    }

    pub fn is_boundary(&self, flat: usize) -> bool {
        self.multi_index(flat)
            .iter()
            .zip(&self.counts)
            .any(|(&i, &n)| i == 0 || i + 1 == n)
    }

    pub fn interior_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len).filter(move |&i| !self.is_boundary(i))
    }

    /// Neighbor of `flat` shifted by `offset` along each axis, if it exists.
    pub fn offset(&self, flat: usize, offset: &[isize]) -> Option<usize> {
        let mut out = flat;
        for (k, &o) in offset.iter().enumerate() {
            if o == 0 {
                continue;
            }
            let i = (flat / self.strides[k]) % self.counts[k];
            let j = i as isize + o;
            if j < 0 || j >= self.counts[k] as isize {
                return None;
            }
            out = (out as isize + o * self.strides[k] as isize) as usize;
        }
        Some(out)
    }

    /// Axis index nearest to `x` on the infinite lattice through the grid
    /// (may fall outside `0..n`).
    pub fn lattice_index(&self, axis: usize, x: f64) -> isize {
        ((x + self.radius) / self.spacing[axis]).round() as isize
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        let tol = 1e-12 * self.radius;
        x.iter().all(|v| v.abs() <= self.radius + tol)
    }

    /// Nearest grid node, after clamping `x` into the box.
    pub fn nearest_node(&self, x: &[f64]) -> usize {
        let mut flat = 0;
        for (k, &v) in x.iter().enumerate() {
            let i = self.lattice_index(k, v).clamp(0, self.counts[k] as isize - 1) as usize;
            flat += i * self.strides[k];
        }
        flat
    }

    /// Node nearest the origin; value functions are pinned to zero here.
    pub fn reference_node(&self) -> usize {
        self.nearest_node(&vec![0.0; self.dim()])
    }
}
