//! Tensor-product space-time meshes and grid-sampled scalar fields.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("invalid grid parameter {name} = {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("index out of range: layer {layer}, node {node:?}")]
    OutOfRange { layer: usize, node: Vec<usize> },
    #[error("extrapolation: {what} = {value} outside [{lo}, {hi}]")]
    Extrapolation {
        what: String,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("grids differ")]
    GridMismatch,
    #[error("non-finite value at layer {layer}, node {node}")]
    NonFinite { layer: usize, node: usize },
}

/// Uniform mesh on [center − R, center + R]^d × [0, T].
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    center: Vec<f64>,
    half_width: f64,
    n_x: usize,
    n_t: usize,
    horizon: f64,
}

impl Grid {
    pub fn new(
        center: Vec<f64>,
        half_width: f64,
        n_x: usize,
        n_t: usize,
        horizon: f64,
    ) -> Result<Self, GridError> {
        if center.is_empty() {
            return Err(GridError::InvalidParameter {
                name: "dimension",
                value: 0.0,
            });
        }
        if let Some(c) = center.iter().find(|c| !c.is_finite()) {
            return Err(GridError::InvalidParameter {
                name: "center",
                value: *c,
            });
        }
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(GridError::InvalidParameter {
                name: "R_x",
                value: half_width,
            });
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(GridError::InvalidParameter {
                name: "T",
                value: horizon,
            });
        }
        if n_x < 3 {
            return Err(GridError::InvalidParameter {
                name: "n_x",
                value: n_x as f64,
            });
        }
        if n_t < 1 {
            return Err(GridError::InvalidParameter {
                name: "n_t",
                value: n_t as f64,
            });
        }
        Ok(Self {
            center,
            half_width,
            n_x,
            n_t,
            horizon,
        })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }
    pub fn center(&self) -> &[f64] {
        &self.center
    }
    pub fn half_width(&self) -> f64 {
        self.half_width
    }
    pub fn n_x(&self) -> usize {
        self.n_x
    }
    pub fn n_t(&self) -> usize {
        self.n_t
    }
    pub fn horizon(&self) -> f64 {
        self.horizon
    }
    /// Number of time layers, n_t + 1 (t = 0 and t = T included).
    pub fn n_layers(&self) -> usize {
        self.n_t + 1
    }
    pub fn h(&self) -> f64 {
        2.0 * self.half_width / (self.n_x - 1) as f64
    }
    pub fn dt(&self) -> f64 {
        self.horizon / self.n_t as f64
    }
    pub fn n_nodes(&self) -> usize {
        self.n_x.pow(self.dim() as u32)
    }

    /// Coordinate of node k on `axis`: center − R + k h.
    pub fn axis_coord(&self, axis: usize, k: usize) -> f64 {
        self.center[axis] - self.half_width + k as f64 * self.h()
    }

    pub fn time(&self, layer: usize) -> f64 {
        if layer == self.n_t {
            self.horizon
        } else {
            layer as f64 * self.dt()
        }
    }

    /// Flat index → multi-index (first axis varies slowest).
    pub fn unravel(&self, mut flat: usize) -> Vec<usize> {
        let d = self.dim();
        let mut idx = vec![0; d];
        for a in (0..d).rev() {
            idx[a] = flat % self.n_x;
            flat /= self.n_x;
        }
        idx
    }

    pub fn ravel(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &i| acc * self.n_x + i)
    }

    /// Stride of `axis` in the flat layout.
    pub fn stride(&self, axis: usize) -> usize {
        self.n_x.pow((self.dim() - 1 - axis) as u32)
    }

    /// Position of a flat node along `axis`.
    #[inline]
    pub fn axis_index(&self, flat: usize, axis: usize) -> usize {
        (flat / self.stride(axis)) % self.n_x
    }

    pub fn node_coords(&self, flat: usize) -> Vec<f64> {
        self.unravel(flat)
            .iter()
            .enumerate()
            .map(|(a, &k)| self.axis_coord(a, k))
            .collect()
    }

    /// Whether every coordinate lies within `fraction` of the half-width
    /// around the center (the certificate core box).
    pub fn in_core(&self, flat: usize, fraction: f64) -> bool {
        let r = fraction * self.half_width * (1.0 + 1e-12);
        (0..self.dim()).all(|a| {
            (self.axis_coord(a, self.axis_index(flat, a)) - self.center[a]).abs() <= r
        })
    }

    pub fn core_nodes(&self, fraction: f64) -> Vec<usize> {
        (0..self.n_nodes()).filter(|&i| self.in_core(i, fraction)).collect()
    }

    /// Clamps a point into the spatial box.
    pub fn clamp_point(&self, x: &[f64]) -> (Vec<f64>, bool) {
        let mut outside = false;
        let p = x
            .iter()
            .zip(&self.center)
            .map(|(&xi, &c)| {
                let (lo, hi) = (c - self.half_width, c + self.half_width);
                if xi < lo || xi > hi {
                    outside = true;
                }
                xi.clamp(lo, hi)
            })
            .collect();
        (p, outside)
    }

    /// Multilinear interpolation weights: (flat node, weight) pairs, plus the
    /// bracketing time layers and weight of the later one.
    pub(crate) fn space_weights(&self, x: &[f64]) -> Vec<(usize, f64)> {
        let d = self.dim();
        let mut base = vec![0usize; d];
        let mut frac = vec![0.0; d];
        for a in 0..d {
            (base[a], frac[a]) = self.cell(a, x[a]);
        }
        let mut out = Vec::with_capacity(1 << d);
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut flat = 0;
            for a in 0..d {
                let bit = (corner >> (d - 1 - a)) & 1;
                w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
                flat = flat * self.n_x + base[a] + bit;
            }
            if w != 0.0 {
                out.push((flat, w));
            }
        }
        out
    }

    /// Lower cell index along `axis` containing `xa`, and the offset in it.
    #[inline]
    pub(crate) fn cell(&self, axis: usize, xa: f64) -> (usize, f64) {
        let s = (xa - (self.center[axis] - self.half_width)) / self.h();
        let k = (s.floor() as isize).clamp(0, self.n_x as isize - 2) as usize;
        (k, (s - k as f64).clamp(0.0, 1.0))
    }

    pub(crate) fn time_weights(&self, t: f64) -> (usize, usize, f64) {
        let s = t / self.dt();
        let k = (s.floor() as isize).clamp(0, self.n_t as isize - 1) as usize;
        let w = (s - k as f64).clamp(0.0, 1.0);
        (k, k + 1, w)
    }

    pub(crate) fn check_inside(&self, t: f64, x: &[f64]) -> Result<(), GridError> {
        if x.len() != self.dim() {
            return Err(GridError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let eps = 1e-12 * (1.0 + self.horizon);
        if !(t >= -eps && t <= self.horizon + eps) {
            return Err(GridError::Extrapolation {
                what: "t".into(),
                value: t,
                lo: 0.0,
                hi: self.horizon,
            });
        }
        for (a, (&xi, &c)) in x.iter().zip(&self.center).enumerate() {
            let (lo, hi) = (c - self.half_width, c + self.half_width);
            let eps = 1e-12 * (1.0 + self.half_width);
            if !(xi >= lo - eps && xi <= hi + eps) {
                return Err(GridError::Extrapolation {
                    what: format!("x_{}", a + 1),
                    value: xi,
                    lo,
                    hi,
                });
            }
        }
        Ok(())
    }
}

/// Scalar field sampled on every node of every time layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueFunction {
    grid: Grid,
    values: Vec<f64>,
}

impl ValueFunction {
    pub fn zeros(grid: Grid) -> Self {
        let n = grid.n_layers() * grid.n_nodes();
        Self {
            grid,
            values: vec![0.0; n],
        }
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self, GridError> {
        let n = grid.n_layers() * grid.n_nodes();
        if values.len() != n {
            return Err(GridError::DimensionMismatch {
                expected: n,
                got: values.len(),
            });
        }
        Ok(Self { grid, values })
    }

    /// Samples `f(t, x)` at every node.
    pub fn from_fn(grid: Grid, f: impl Fn(f64, &[f64]) -> f64) -> Self {
        let nn = grid.n_nodes();
        let mut values = Vec::with_capacity(grid.n_layers() * nn);
        for layer in 0..grid.n_layers() {
            let t = grid.time(layer);
            for i in 0..nn {
                values.push(f(t, &grid.node_coords(i)));
            }
        }
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn layer(&self, layer: usize) -> &[f64] {
        let nn = self.grid.n_nodes();
        &self.values[layer * nn..(layer + 1) * nn]
    }

    pub fn layer_mut(&mut self, layer: usize) -> &mut [f64] {
        let nn = self.grid.n_nodes();
        &mut self.values[layer * nn..(layer + 1) * nn]
    }

    pub fn value(&self, layer: usize, node: usize) -> f64 {
        self.layer(layer)[node]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn check_finite(&self) -> Result<(), GridError> {
        let nn = self.grid.n_nodes();
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(k) => Err(GridError::NonFinite {
                layer: k / nn,
                node: k % nn,
            }),
            None => Ok(()),
        }
    }

    /// Gradient at a node by multi-index, with range checking.
    pub fn gradient_at(&self, layer: usize, node: &[usize]) -> Result<Vec<f64>, GridError> {
        if layer >= self.grid.n_layers()
            || node.len() != self.grid.dim()
            || node.iter().any(|&k| k >= self.grid.n_x())
        {
            return Err(GridError::OutOfRange {
                layer,
                node: node.to_vec(),
            });
        }
        Ok(layer_gradient(&self.grid, self.layer(layer), self.grid.ravel(node)))
    }

    /// Multilinear in space, linear in time.
    pub fn interpolate(&self, t: f64, x: &[f64]) -> Result<f64, GridError> {
        self.grid.check_inside(t, x)?;
        let (k0, k1, wt) = self.grid.time_weights(t);
        let sw = self.grid.space_weights(x);
        let (l0, l1) = (self.layer(k0), self.layer(k1));
        let mut v0 = 0.0;
        let mut v1 = 0.0;
        for &(i, w) in &sw {
            v0 += w * l0[i];
            v1 += w * l1[i];
        }
        Ok(if wt == 0.0 {
            v0
        } else if wt == 1.0 {
            v1
        } else {
            (1.0 - wt) * v0 + wt * v1
        })
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64, GridError> {
        if self.grid != other.grid {
            return Err(GridError::GridMismatch);
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

/// Central differences at interior nodes, one-sided at boundary nodes.
pub fn layer_gradient(grid: &Grid, layer: &[f64], flat: usize) -> Vec<f64> {
    let h = grid.h();
    let n = grid.n_x();
    (0..grid.dim())
        .map(|a| {
            let s = grid.stride(a);
            let k = grid.axis_index(flat, a);
            if k == 0 {
                (layer[flat + s] - layer[flat]) / h
            } else if k == n - 1 {
                (layer[flat] - layer[flat - s]) / h
            } else {
                (layer[flat + s] - layer[flat - s]) / (2.0 * h)
            }
        })
        .collect()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g1(r: f64, n_x: usize) -> Grid {
        Grid::new(vec![0.0], r, n_x, 4, 1.0).unwrap()
    }

    #[test]
    fn spacings_and_nodes() {
        let g = g1(1.0, 3);
        assert_eq!(
            (0..3).map(|k| g.axis_coord(0, k)).collect::<Vec<_>>(),
            vec![-1.0, 0.0, 1.0]
        );
        assert_eq!(g1(2.0, 5).h(), 1.0);
        assert_eq!(g.dt(), 0.25);
        assert_eq!(g.n_layers(), 5);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(Grid::new(vec![0.0], -1.0, 5, 4, 1.0).is_err());
        assert!(Grid::new(vec![0.0], 1.0, 5, 4, 0.0).is_err());
        assert!(Grid::new(vec![0.0], 1.0, 2, 4, 1.0).is_err());
        assert!(Grid::new(vec![0.0], 1.0, 5, 0, 1.0).is_err());
    }

    #[test]
    fn ravel_roundtrip_2d() {
        let g = Grid::new(vec![0.0, 1.0], 1.0, 4, 2, 1.0).unwrap();
        for i in 0..g.n_nodes() {
            assert_eq!(g.ravel(&g.unravel(i)), i);
        }
        assert_eq!(g.unravel(1), vec![0, 1]);
        assert_eq!(g.node_coords(4), vec![-1.0 + 2.0 / 3.0, 0.0]);
    }

    #[test]
    fn gradient_examples() {
        let g = g1(1.0, 5);
        let lin = ValueFunction::from_fn(g.clone(), |_, x| x[0]);
        for k in 0..5 {
            assert!((lin.gradient_at(0, &[k]).unwrap()[0] - 1.0).abs() < 1e-14);
        }
        let c = ValueFunction::from_fn(g.clone(), |_, _| 5.0);
        assert_eq!(c.gradient_at(2, &[0]).unwrap(), vec![0.0]);
        let sq = ValueFunction::from_fn(g.clone(), |_, x| x[0] * x[0]);
        assert_eq!(sq.gradient_at(0, &[2]).unwrap(), vec![0.0]);
        assert!(sq.gradient_at(0, &[5]).is_err());
        assert!(sq.gradient_at(9, &[0]).is_err());
    }

    #[test]
    fn gradient_orders_on_square() {
        // interior: exact for quadratics; boundary: first order
        let err = |n_x: usize| {
            let g = g1(1.0, n_x);
            let u = ValueFunction::from_fn(g.clone(), |_, x| x[0] * x[0]);
            let b = (u.gradient_at(0, &[0]).unwrap()[0] - (-2.0)).abs();
            let i = (u.gradient_at(0, &[1]).unwrap()[0] - 2.0 * g.axis_coord(0, 1)).abs();
            (b, i)
        };
        let (b1, i1) = err(9);
        let (b2, i2) = err(17);
        assert!((b1 / b2 - 2.0).abs() < 1e-9);
        assert!(i1 < 1e-12 && i2 < 1e-12);
    }

    #[test]
    fn interpolation_examples() {
        let g = g1(1.0, 3);
        let mut u = ValueFunction::zeros(g.clone());
        for l in 0..g.n_layers() {
            u.layer_mut(l).copy_from_slice(&[0.0, 1.0, 7.0]);
        }
        assert_eq!(u.interpolate(0.5, &[0.0]).unwrap(), 1.0);
        assert_eq!(u.interpolate(0.3, &[-0.5]).unwrap(), 0.5);
        assert!(matches!(
            u.interpolate(0.3, &[1.5]),
            Err(GridError::Extrapolation { .. })
        ));
        assert!(u.interpolate(1.5, &[0.0]).is_err());
    }

    #[test]
    fn interpolation_exact_on_affine_2d() {
        let g = Grid::new(vec![0.5, -0.5], 2.0, 7, 3, 2.0).unwrap();
        let f = |t: f64, x: &[f64]| 0.3 - 1.2 * t + 2.0 * x[0] - 0.7 * x[1];
        let u = ValueFunction::from_fn(g, f);
        for (t, x) in [(0.1, [0.2, 0.3]), (1.9, [-1.4, 1.49]), (2.0, [2.5, -2.5])] {
            assert!((u.interpolate(t, &x).unwrap() - f(t, &x)).abs() < 1e-12);
        }
    }

    #[test]
    fn core_box_selection() {
        let g = g1(4.0, 129);
        let core = g.core_nodes(0.6);
        assert!(core.iter().all(|&i| g.axis_coord(0, i).abs() <= 2.4 + 1e-9));
        assert_eq!(core.len(), 77);
    }
}
