//! Symmetric half-model mesh.
//!
//! The bar `[-L/2, L/2]` is discretized with an odd number of elements
//! `N_e = 2n + 1`. Only the right half is stored: `h[0]` is the central
//! element, `h[1..=n]` the right off-center elements (mirrored on the left),
//! and the nodes sit at `x[0] = h[0]/2`, `x[i] = x[i-1] + h[i]`, with the
//! closure `h[0] + 2 sum h[i] = L` pinning `x[n] = L/2`. Nodal damage `d[i]`
//! lives at node `x[i]`; `d[0]` is the peak value by symmetry.

use crate::model::{MaterialParams, ModelKind};
use crate::{Error, Result};

/// Floor applied to element sizes during optimization, relative to `L`.
pub const H_MIN_REL: f64 = 1e-12;

/// Right half of the symmetric mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfMesh {
    /// Bar length `L`.
    pub length: f64,
    /// Element sizes `h[0..=n]`, `h[0]` central.
    pub h: Vec<f64>,
}

impl HalfMesh {
    pub fn new(length: f64, h: Vec<f64>) -> Result<Self> {
        if h.len() < 2 {
            return Err(Error::Mesh("need at least 3 elements (n >= 1)".into()));
        }
        let mesh = HalfMesh { length, h };
        mesh.check_closure()?;
        Ok(mesh)
    }

    /// Number of off-center elements per side.
    pub fn n(&self) -> usize {
        self.h.len() - 1
    }

    pub fn h_min(&self) -> f64 {
        H_MIN_REL * self.length
    }

    fn check_closure(&self) -> Result<()> {
        if self.h.iter().any(|&v| v < 0.0) {
            return Err(Error::Mesh("negative element size".into()));
        }
        let closure = self.closure_residual();
        if closure.abs() > 1e-12 * self.length {
            return Err(Error::Mesh(format!(
                "element sizes do not close the bar: residual {closure:e}"
            )));
        }
        Ok(())
    }

    /// `h0 + 2 sum h_i - L`.
    pub fn closure_residual(&self) -> f64 {
        sum_lengths(&self.h) - self.length
    }

    /// Node positions `x[0..=n]`; the last one is forced to exactly `L/2`.
    pub fn node_positions(&self) -> Vec<f64> {
        node_positions_of(&self.h, self.length)
    }

    /// Uniform mesh whose element size best resolves the fully damaged band.
    ///
    /// The band width is `pi lc / 2` for phase-field and `lc` for lip-field;
    /// `n_c` is the number of elements per band width.
    pub fn build_uniform(model: ModelKind, params: &MaterialParams, n_c: usize) -> Result<Self> {
        if n_c < 1 {
            return Err(Error::Mesh("n_c must be >= 1".into()));
        }
        let band = match model {
            ModelKind::PhaseField => 0.5 * std::f64::consts::PI * params.lc,
            ModelKind::LipField => params.lc,
        };
        let target = band / n_c as f64;
        let k = params.length / target;
        let ne = (2.0 * ((k - 1.0) / 2.0).round() + 1.0).max(1.0) as usize;
        if ne < 3 {
            return Err(Error::Mesh(format!(
                "n_c = {n_c} would give {ne} element(s); need at least 3"
            )));
        }
        let h = params.length / ne as f64;
        let n = (ne - 1) / 2;
        Ok(HalfMesh {
            length: params.length,
            h: vec![h; n + 1],
        })
    }
}

/// Positions implied by raw element sizes (shared with the optimizer, which
/// works on slices rather than validated meshes).
pub fn node_positions_of(h: &[f64], length: f64) -> Vec<f64> {
    let n = h.len() - 1;
    let mut x = Vec::with_capacity(n + 1);
    let mut acc = 0.5 * h[0];
    x.push(acc);
    for &hi in &h[1..] {
        acc += hi;
        x.push(acc);
    }
    x[n] = 0.5 * length;
    x
}

pub fn sum_lengths(h: &[f64]) -> f64 {
    h[0] + 2.0 * h[1..].iter().sum::<f64>()
}

/// Piecewise-linear interpolation of a symmetric nodal field at position `p`.
///
/// Inside the central element the two end values coincide by symmetry, so the
/// field is flat there and equal to `d[0]`.
pub fn interpolate(d: &[f64], x: &[f64], length: f64, p: f64) -> Result<f64> {
    let q = p.abs();
    if q > 0.5 * length * (1.0 + 1e-12) {
        return Err(Error::Domain(format!("position {p} outside the bar")));
    }
    Ok(interpolate_unchecked(d, x, q))
}

pub(crate) fn interpolate_unchecked(d: &[f64], x: &[f64], q: f64) -> f64 {
    let n = d.len() - 1;
    if q <= x[0] {
        return d[0];
    }
    if q >= x[n] {
        return d[n];
    }
    // binary search for the segment [x[i], x[i+1]] containing q
    let (mut lo, mut hi) = (0usize, n);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if x[mid] <= q {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let w = if x[hi] == x[lo] {
        0.0
    } else {
        (q - x[lo]) / (x[hi] - x[lo])
    };
    d[lo] + w * (d[hi] - d[lo])
}

/// Converged state of the previous load increment, used by the
/// irreversibility constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct PrevSnapshot {
    pub x: Vec<f64>,
    pub d: Vec<f64>,
    pub h: Vec<f64>,
}

impl PrevSnapshot {
    pub fn undamaged(mesh: &HalfMesh) -> Self {
        PrevSnapshot {
            x: mesh.node_positions(),
            d: vec![0.0; mesh.n() + 1],
            h: mesh.h.clone(),
        }
    }
}

/// Feasibility report of a `(d, h)` pair against the constraint sets.
#[derive(Debug, Clone, Copy)]
pub struct ConstraintReport {
    /// `|h0 + 2 sum h_i - L|`.
    pub length_residual: f64,
    /// Largest violation of `0 <= d <= 1`.
    pub box_violation: f64,
    /// Largest violation of `prev(x_i) <= d_i` (previous field at current nodes).
    pub irr_forward: f64,
    /// Largest violation of `prev_d_i <= d(prev_x_i)` (current field at previous nodes).
    pub irr_backward: f64,
    /// Largest violation of `|d_{i+1} - d_i| <= h_i / lc` (lip model only; 0 otherwise).
    pub lip_violation: f64,
}

impl ConstraintReport {
    pub fn max_violation(&self) -> f64 {
        self.box_violation
            .max(self.irr_forward)
            .max(self.irr_backward)
            .max(self.lip_violation)
    }

    pub fn feasible(&self, length: f64, tol: f64) -> bool {
        self.length_residual <= 1e-10 * length && self.max_violation() <= tol
    }
}

/// Evaluate all constraint residuals for a candidate `(d, h)` against the
/// previous snapshot.
pub fn constraint_residuals(
    d: &[f64],
    h: &[f64],
    length: f64,
    lc: f64,
    prev: &PrevSnapshot,
    model: ModelKind,
) -> ConstraintReport {
    let x = node_positions_of(h, length);
    let length_residual = (sum_lengths(h) - length).abs();
    let mut box_violation: f64 = 0.0;
    for &di in d {
        box_violation = box_violation.max(-di).max(di - 1.0);
    }
    let mut irr_forward: f64 = 0.0;
    for (i, &xi) in x.iter().enumerate() {
        let prev_here = interpolate_unchecked(&prev.d, &prev.x, xi);
        irr_forward = irr_forward.max(prev_here - d[i]);
    }
    let mut irr_backward: f64 = 0.0;
    for (j, &pxj) in prev.x.iter().enumerate() {
        let cur_here = interpolate_unchecked(d, &x, pxj.min(0.5 * length));
        irr_backward = irr_backward.max(prev.d[j] - cur_here);
    }
    let mut lip_violation: f64 = 0.0;
    if model == ModelKind::LipField {
        for i in 1..d.len() {
            lip_violation = lip_violation.max((d[i] - d[i - 1]).abs() - h[i] / lc);
        }
    }
    ConstraintReport {
        length_residual,
        box_violation,
        irr_forward,
        irr_backward,
        lip_violation,
    }
}
