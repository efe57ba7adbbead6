//! Tensor-product cubic spline over a grid table.
//!
//! Each axis uses the uniform cubic B-spline basis on the node positions,
//! extended by one knot on each side, with the not-a-knot conditions (no jump
//! in the third derivative at the second and second-to-last node). Those
//! conditions are a vanishing fourth difference of the coefficients, which
//! together with interpolation gives a square system per axis. The solved
//! coefficients for all three outcome classes are stored interleaved.

use nalgebra::DMatrix;

use super::{GridSpec, GridTable};
use crate::physics::{wrap_phase, GateParams, OutcomeDistribution};
use crate::{Error, Result};

/// Map from `n` node values to `n + 2` B-spline coefficients, row-major.
fn coefficient_map(n: usize) -> Result<Vec<f64>> {
    let m = n + 2;
    let mut a = DMatrix::<f64>::zeros(m, m);
    // coefficient j multiplies the B-spline centred on node j - 1
    for k in 0..n {
        a[(k, k)] = 1.0 / 6.0;
        a[(k, k + 1)] = 4.0 / 6.0;
        a[(k, k + 2)] = 1.0 / 6.0;
    }
    for (row, knot) in [(n, 1usize), (n + 1, n - 2)] {
        // fourth difference centred on the knot: c_{k-2} .. c_{k+2}
        for (off, w) in [1.0, -4.0, 6.0, -4.0, 1.0].iter().enumerate() {
            a[(row, knot + off - 1)] = *w;
        }
    }
    let inv = a
        .try_inverse()
        .ok_or_else(|| Error::InvalidParameter(format!("spline system singular for {n} nodes")))?;
    let mut out = vec![0.0; m * n];
    for r in 0..m {
        for c in 0..n {
            out[r * n + c] = inv[(r, c)];
        }
    }
    Ok(out)
}

/// Contract `data` (shape `dims`, 3 values per entry) along `axis` with the
/// `(n + 2) × n` map, returning the new buffer and shape.
fn apply_axis(data: &[f64], dims: [usize; 4], axis: usize, map: &[f64]) -> (Vec<f64>, [usize; 4]) {
    let n = dims[axis];
    let m = n + 2;
    let mut out_dims = dims;
    out_dims[axis] = m;
    let outer: usize = dims[..axis].iter().product();
    let inner: usize = dims[axis + 1..].iter().product::<usize>() * 3;
    let mut out = vec![0.0; outer * m * inner];
    for o in 0..outer {
        for r in 0..m {
            let dst = &mut out[(o * m + r) * inner..(o * m + r + 1) * inner];
            for c in 0..n {
                let w = map[r * n + c];
                if w == 0.0 {
                    continue;
                }
                let src = &data[(o * n + c) * inner..(o * n + c + 1) * inner];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
    }
    (out, out_dims)
}

/// Cubic B-spline weights for fractional offset `t ∈ [0, 1]`.
#[inline]
fn weights(t: f64) -> [f64; 4] {
    let s = 1.0 - t;
    let t2 = t * t;
    let t3 = t2 * t;
    [
        s * s * s / 6.0,
        (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0,
        (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0,
        t3 / 6.0,
    ]
}

/// Smooth interpolation of a [`GridTable`].
#[derive(Debug, Clone)]
pub struct Interpolator {
    spec: GridSpec,
    rabi_opt: f64,
    strides: [usize; 4],
    coef: Vec<f64>,
}

impl Interpolator {
    pub fn new(table: &GridTable) -> Result<Self> {
        let spec = table.spec.clone();
        spec.validate()?;
        if table.values.len() != spec.node_count() {
            return Err(Error::InvalidParameter("table size does not match its spec".into()));
        }
        let mut data: Vec<f64> = table.values.iter().flat_map(|v| v.to_array()).collect();
        let mut dims = spec.shape();
        for axis in (0..4).rev() {
            let map = coefficient_map(dims[axis])?;
            let (d, nd) = apply_axis(&data, dims, axis, &map);
            data = d;
            dims = nd;
        }
        let strides = [
            dims[1] * dims[2] * dims[3] * 3,
            dims[2] * dims[3] * 3,
            dims[3] * 3,
            3,
        ];
        Ok(Self {
            rabi_opt: spec.model.rabi_opt(),
            spec,
            strides,
            coef: data,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    /// `Ω_opt` of the grid's model.
    pub fn rabi_opt(&self) -> f64 {
        self.rabi_opt
    }

    /// Raw spline values at grid coordinates `(Ω/Ω_opt, ω_cl, δ, Δφ)`,
    /// before clamping. The phase is wrapped first.
    pub fn evaluate(&self, x: [f64; 4]) -> Result<[f64; 3]> {
        let mut base = 0usize;
        let mut w = [[0.0; 4]; 4];
        for d in 0..4 {
            let axis = &self.spec.axes[d];
            let v = if d == 3 { wrap_phase(x[d]) } else { x[d] };
            if !axis.contains(v) {
                return Err(Error::OutsideGridSupport);
            }
            let u = (v - axis.min) / axis.step();
            let cell = (u.floor() as usize).min(axis.count - 2);
            w[d] = weights(u - cell as f64);
            // coefficients for node `cell - 1 .. cell + 2` sit at `cell .. cell + 3`
            base += cell * self.strides[d];
        }
        let mut acc = [0.0; 3];
        for (a, wa) in w[0].iter().enumerate() {
            let pa = base + a * self.strides[0];
            for (b, wb) in w[1].iter().enumerate() {
                let pb = pa + b * self.strides[1];
                let wab = wa * wb;
                for (c, wc) in w[2].iter().enumerate() {
                    let pc = pb + c * self.strides[2];
                    let blk = &self.coef[pc..pc + 12];
                    let (w3, wabc) = (&w[3], wab * wc);
                    for k in 0..3 {
                        acc[k] += wabc
                            * (w3[0] * blk[k] + w3[1] * blk[3 + k] + w3[2] * blk[6 + k] + w3[3] * blk[9 + k]);
                    }
                }
            }
        }
        Ok(acc)
    }

    /// Interpolated outcome distribution at grid coordinates, clamped to
    /// `[0, 1]` and renormalized.
    pub fn interpolate_coords(&self, x: [f64; 4]) -> Result<OutcomeDistribution> {
        Ok(OutcomeDistribution::from_array(self.evaluate(x)?).clamped())
    }

    /// Interpolated outcome distribution at parameters of the grid's model.
    pub fn interpolate(&self, theta: &GateParams) -> Result<OutcomeDistribution> {
        self.interpolate_coords(self.spec.coordinates(theta, self.rabi_opt))
    }

    #[cfg(test)]
    pub(crate) fn coefficient_dims(&self) -> [usize; 4] {
        let s = self.strides;
        [self.coef.len() / s[0], s[0] / s[1], s[1] / s[2], s[2] / 3]
    }
}
