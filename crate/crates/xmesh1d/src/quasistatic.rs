//! Quasi-static displacement-driven loading.
//!
//! Each load increment minimizes the incremental potential under
//! irreversibility (and, for the lip model, Lipschitz) constraints, warm
//! started from the previous converged state. In `Fixed` mode only the nodal
//! damage moves; in `XMesh` mode element sizes are unknowns too, tied by the
//! bar-length closure, and a fully damaged central element collapsing to the
//! size floor represents the displacement jump of a broken bar.

use crate::analytic::{Analytic, ProfileCache};
use crate::mesh::{
    self, constraint_residuals, ConstraintReport, HalfMesh, PrevSnapshot,
};
use crate::model::{MaterialParams, ModelKind};
use crate::optimizer::{minimize, NlpProblem, ScalarFn, SolveStatus, SolverOptions};
use crate::potential::PotentialCtx;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshMode {
    Fixed,
    XMesh,
}

impl MeshMode {
    pub fn name(&self) -> &'static str {
        match self {
            MeshMode::Fixed => "fixed",
            MeshMode::XMesh => "xmesh",
        }
    }
}

/// Monotone list of imposed elongations, starting at zero.
#[derive(Debug, Clone)]
pub struct LoadSchedule {
    pub u: Vec<f64>,
}

impl LoadSchedule {
    pub fn uniform(u_max: f64, steps: usize) -> Result<Self> {
        if steps < 2 {
            return Err(Error::InvalidParameter(format!(
                "schedule needs at least 2 steps, got {steps}"
            )));
        }
        if !(u_max > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "u_max must be positive, got {u_max}"
            )));
        }
        let u = (0..steps)
            .map(|k| u_max * k as f64 / (steps - 1) as f64)
            .collect();
        Ok(LoadSchedule { u })
    }

    /// Insert `extra` additional uniformly spaced points inside `[lo, hi]`.
    pub fn refine(mut self, lo: f64, hi: f64, extra: usize) -> Self {
        if extra > 0 && hi > lo {
            for k in 0..extra {
                self.u
                    .push(lo + (hi - lo) * (k + 1) as f64 / (extra + 1) as f64);
            }
            self.u.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let span = *self.u.last().unwrap();
            self.u.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * span);
        }
        self
    }
}

/// Converged (or synthesized) state of one load increment.
#[derive(Debug, Clone)]
pub struct StepState {
    pub step: usize,
    pub u: f64,
    pub d: Vec<f64>,
    pub h: Vec<f64>,
    /// Node positions for `h`.
    pub x: Vec<f64>,
    /// Nodal displacements on the right half (antisymmetric).
    pub disp: Vec<f64>,
    pub sigma: f64,
    pub k: f64,
    pub w: f64,
    pub f_value: f64,
    /// Dissipated energy up to this step (external work minus stored energy).
    pub w_diss: f64,
    /// Relative L2 error of element-midpoint displacements vs the closed form.
    pub err2: f64,
    pub broken: bool,
    pub converged: bool,
    pub kkt_residual: f64,
    /// Physical multiplier of the bar-length closure (X-Mesh solves only).
    pub lambda: Option<f64>,
    pub constraints: ConstraintReport,
}

/// Full loading history of one run.
#[derive(Debug, Clone)]
pub struct History {
    pub model: ModelKind,
    pub mode: MeshMode,
    pub params: MaterialParams,
    pub n_c: usize,
    pub steps: Vec<StepState>,
    /// First broken step and its elongation, if the bar broke.
    pub broken_at: Option<(usize, f64)>,
}

impl History {
    /// Elongation at which the bar broke.
    pub fn u_star(&self) -> Option<f64> {
        self.broken_at.map(|(_, u)| u)
    }

    pub fn final_dissipation(&self) -> f64 {
        self.steps.last().map(|s| s.w_diss).unwrap_or(0.0)
    }
}

pub fn run(
    model: ModelKind,
    mode: MeshMode,
    params: MaterialParams,
    n_c: usize,
    schedule: &LoadSchedule,
) -> Result<History> {
    run_with(model, mode, params, n_c, schedule, &SolverOptions::default())
}

pub fn run_with(
    model: ModelKind,
    mode: MeshMode,
    params: MaterialParams,
    n_c: usize,
    schedule: &LoadSchedule,
    sopts: &SolverOptions,
) -> Result<History> {
    let ctx = PotentialCtx::new(model, params)?;
    let analytic = Analytic::new(model, params)?;
    let mesh = HalfMesh::build_uniform(model, &params, n_c)?;
    let nv = mesh.n() + 1;
    let length = params.length;
    let uc = ctx.derived.uc;

    let mut prev = PrevSnapshot::undamaged(&mesh);
    let mut warm: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut steps: Vec<StepState> = Vec::with_capacity(schedule.u.len());
    let mut broken_at: Option<(usize, f64)> = None;
    let mut work = 0.0f64; // trapezoid accumulation of sigma dU
    let mut damaged_yet = false;
    let mut pin_hint: Vec<(usize, usize)> = Vec::new();
    let mut cache: Option<(f64, ProfileCache)> = None;

    for (step, &u) in schedule.u.iter().enumerate() {
        let state = if broken_at.is_some() {
            // frozen post-break continuation: rigid halves, zero stress
            let d = prev.d.clone();
            let h = prev.h.clone();
            let w = ctx.w_dissipation(&d, &h)?;
            let disp = vec![0.5 * u; nv];
            let constraints = constraint_residuals(&d, &h, length, params.lc, &prev, model);
            StepState {
                step,
                u,
                x: prev.x.clone(),
                d,
                h,
                disp,
                sigma: 0.0,
                k: 0.0,
                w,
                f_value: params.gc * w,
                w_diss: 0.0, // filled below
                err2: 0.0,
                broken: true,
                converged: true,
                kkt_residual: 0.0,
                lambda: None,
                constraints,
            }
        } else if !damaged_yet && u <= uc * (1.0 + 1e-12) {
            // purely elastic branch: d = 0 is the minimizer, solve skipped
            let d = vec![0.0; nv];
            let h = prev.h.clone();
            let x = prev.x.clone();
            let disp = ctx.displacement_from(&d, &h, u)?;
            let sigma = params.e_modulus * u / length;
            let constraints = constraint_residuals(&d, &h, length, params.lc, &prev, model);
            StepState {
                step,
                u,
                d,
                h,
                x,
                disp,
                sigma,
                k: 1.0,
                w: 0.0,
                f_value: ctx.elastic_energy(u),
                w_diss: 0.0,
                err2: 0.0,
                broken: false,
                converged: true,
                kkt_residual: 0.0,
                lambda: None,
                constraints,
            }
        } else {
            // constrained incremental solve
            let (d_init, h_init) = if !damaged_yet {
                seed_increment(&analytic, mode, &prev, u)?
            } else {
                (prev.d.clone(), prev.h.clone())
            };
            let t0 = std::time::Instant::now();
            let (res, pins_used) =
                solve_increment(&ctx, mode, &prev, u, &d_init, &h_init, &warm, &pin_hint, sopts);
            if std::env::var_os("QS_TIME").is_some() {
                eprintln!("step={step} solve {:.0} ms", t0.elapsed().as_secs_f64() * 1e3);
            }
            let (mut d, mut h) = match mode {
                MeshMode::Fixed => (res.x.clone(), h_init),
                MeshMode::XMesh => {
                    // element sizes travel through the solver scaled by 1/L
                    let (dd, hh) = res.x.split_at(nv);
                    (dd.to_vec(), hh.iter().map(|&v| v * params.length).collect())
                }
            };
            warm = Some((res.lambda_eq.clone(), res.mu_ineq.clone()));
            pin_hint = pins_used;
            let mut forced_break = false;
            let viol_now = if mode == MeshMode::XMesh && damaged_yet {
                constraint_residuals(&d, &h, length, params.lc, &prev, model).max_violation()
            } else {
                0.0
            };
            if mode == MeshMode::XMesh
                && damaged_yet
                && res.status != SolveStatus::Converged
                && viol_now > 1e-6
            {
                // At the limit point the descent path to the broken state
                // leaves the incremental feasible set, so a badly infeasible
                // solve is the snap-back signature. Resolve it by branch
                // comparison: build the canonical fully broken state and
                // adopt it when it carries the lower incremental potential.
                let h_min = ctx.h_min();
                let mut h_b = prev.h.clone();
                h_b[0] = h_min;
                let rest: f64 = h_b[1..].iter().sum();
                if rest > 0.0 {
                    let fac = 0.5 * (length - h_min) / rest;
                    for hi in h_b[1..].iter_mut() {
                        *hi *= fac;
                    }
                }
                let x_b = mesh::node_positions_of(&h_b, length);
                let mut d_b = vec![0.0; nv];
                for i in 0..nv {
                    let old = mesh::interpolate_unchecked(&prev.d, &prev.x, x_b[i]);
                    let a = analytic.damage_profile(1.0, x_b[i]).unwrap_or(0.0);
                    d_b[i] = a.max(old).min(1.0);
                }
                d_b[0] = 1.0;
                if model == ModelKind::LipField {
                    for i in 1..nv {
                        let bound = h_b[i] / params.lc;
                        if d_b[i] < d_b[i - 1] - bound {
                            d_b[i] = d_b[i - 1] - bound;
                        }
                    }
                }
                let f_b = params.gc * ctx.w_dissipation(&d_b, &h_b)?;
                // the solve result is infeasible, so compare against the
                // still-feasible fields carried over from the last step
                let f_now = ctx.f_potential(&prev.d, &prev.h, u)?.value;
                if f_b < f_now {
                    d = d_b;
                    h = h_b;
                    forced_break = true;
                } else {
                    d = prev.d.clone();
                    h = prev.h.clone();
                }
            }
            let eval = ctx.f_potential(&d, &h, u)?;
            let h_floor_hit = mode == MeshMode::XMesh && h[0] <= 1e-6 * length;
            let is_broken = eval.k == 0.0 || (d[0] >= 1.0 - 1e-9 && h_floor_hit);
            if is_broken {
                // the final catastrophic solve may stop short of full
                // feasibility, so synthesize a canonical broken state:
                // full central damage and an exactly length-preserving mesh
                d[0] = 1.0;
                let rest: f64 = h[1..].iter().sum();
                if rest > 0.0 {
                    let fac = 0.5 * (length - h[0]) / rest;
                    for hi in h[1..].iter_mut() {
                        *hi *= fac;
                    }
                }
                if model == ModelKind::LipField {
                    // restore the slope bound that the catastrophic solve (or
                    // the mesh rescale above) may have left slightly violated;
                    // raising nodal damage never conflicts with irreversibility
                    for i in 1..d.len() {
                        let bound = h[i] / params.lc;
                        if d[i] < d[i - 1] - bound {
                            d[i] = d[i - 1] - bound;
                        }
                    }
                }
                broken_at = Some((step, u));
            }
            damaged_yet = damaged_yet || d.iter().any(|&v| v > 1e-12);
            let w = ctx.w_dissipation(&d, &h)?;
            let (k, sigma, f_value) = if is_broken {
                (0.0, 0.0, params.gc * w)
            } else {
                (eval.k, eval.sigma, eval.value)
            };
            let disp = if is_broken {
                vec![0.5 * u; nv]
            } else {
                ctx.displacement_from(&d, &h, u)?
            };
            let x = mesh::node_positions_of(&h, length);
            let err2 = if is_broken {
                0.0
            } else {
                l2_error(&analytic, &mut cache, &h, &disp, u)?
            };
            let constraints = constraint_residuals(&d, &h, length, params.lc, &prev, model);
            if std::env::var_os("QS_DUMP").is_some() && constraints.max_violation() > 1e-6 {
                eprintln!(
                    "step={step} VIOL box={:.2e} fwd={:.2e} bwd={:.2e} lip={:.2e} broken={is_broken}",
                    constraints.box_violation,
                    constraints.irr_forward,
                    constraints.irr_backward,
                    constraints.lip_violation
                );
            }
            if std::env::var_os("QS_DUMP").is_some() && res.status != SolveStatus::Converged {
                let new_x = mesh::node_positions_of(&h, length);
                let mut nearest = f64::INFINITY;
                fn inner(v: &[f64]) -> &[f64] {
                    &v[1..v.len().saturating_sub(1)]
                }
                for &xo in inner(&prev.x) {
                    for &xn in inner(&new_x) {
                        nearest = nearest.min((xn - xo).abs());
                    }
                }
                eprintln!(
                    "step={step} kkt={:.2e} nearest node gap={:.3e} (rel {:.3e})",
                    res.kkt_residual,
                    nearest,
                    nearest / length
                );
            }
            let lambda = match mode {
                MeshMode::XMesh => Some(res.lambda_eq[0] / length),
                MeshMode::Fixed => None,
            };
            StepState {
                step,
                u,
                d,
                h,
                x,
                disp,
                sigma,
                k,
                w,
                f_value,
                w_diss: 0.0,
                err2,
                broken: is_broken,
                converged: res.status == SolveStatus::Converged || forced_break,
                kkt_residual: if forced_break { 0.0 } else { res.kkt_residual },
                lambda,
                constraints,
            }
        };

        let mut state = state;
        if step > 0 {
            let last = &steps[step - 1];
            work += 0.5 * (state.sigma + last.sigma) * (state.u - last.u);
        }
        state.w_diss = work - ctx.elastic_energy(u) * state.k;
        prev = PrevSnapshot {
            x: state.x.clone(),
            d: state.d.clone(),
            h: state.h.clone(),
        };
        steps.push(state);
    }

    Ok(History {
        model,
        mode,
        params,
        n_c,
        steps,
        broken_at,
    })
}

/// Analytic damage profile sampled at the current nodes, used to seed the
/// first increment past the elastic limit.
fn seed_profile(analytic: &Analytic, prev: &PrevSnapshot, u: f64) -> Result<Vec<f64>> {
    let d0 = analytic.d0_of_u(u).min(1.0 - 1e-6);
    prev.x
        .iter()
        .map(|&xi| analytic.damage_profile(d0, xi))
        .collect()
}

/// Seed for the first damaging increment: damage field and mesh.
///
/// On a fixed mesh only the analytic profile is sampled. In X-Mesh mode the
/// incipient damage band can be far narrower than any element of the uniform
/// starting mesh (the lip-field band opens at width `d0 lc` with `d0` jumping
/// to a finite value just past the elastic limit), and a solve started from
/// an unresolving mesh falls into a spurious wide-plateau minimum. The seed
/// mesh therefore zooms half of the elements into the analytic band.
fn seed_increment(
    analytic: &Analytic,
    mode: MeshMode,
    prev: &PrevSnapshot,
    u: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if mode == MeshMode::Fixed {
        return Ok((seed_profile(analytic, prev, u)?, prev.h.clone()));
    }
    let length = analytic.params.length;
    let d0 = analytic.d0_of_u(u).min(1.0 - 1e-6);
    if d0 <= 0.0 {
        return Ok((seed_profile(analytic, prev, u)?, prev.h.clone()));
    }
    let nv = prev.d.len();
    let band = analytic.band_halfwidth(d0)?.min(0.4 * length);
    let nb = ((nv - 1) / 2).max(1);
    let no = nv - 1 - nb;
    let h0 = band / (2 * nb) as f64;
    let mut h = vec![h0];
    let wb = (band - 0.5 * h0) / nb as f64;
    h.extend(std::iter::repeat(wb).take(nb));
    if no > 0 {
        let wo = (0.5 * length - band) / no as f64;
        h.extend(std::iter::repeat(wo).take(no));
    }
    let x = mesh::node_positions_of(&h, length);
    let d = x
        .iter()
        .map(|&xi| analytic.damage_profile(d0, xi))
        .collect::<Result<Vec<f64>>>()?;
    Ok((d, h))
}

// Raw cumulative node positions (no end pinning), shared by the constraint
// closures so gradients in h are exact.
fn positions_raw(h: &[f64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(h.len());
    let mut acc = 0.5 * h[0];
    x.push(acc);
    for &hi in &h[1..] {
        acc += hi;
        x.push(acc);
    }
    x
}

/// Piecewise-linear value and slope of a symmetric nodal field at `q >= 0`.
fn interp_slope(d: &[f64], x: &[f64], q: f64) -> (f64, f64) {
    let (lo, hi, w) = interp_nodes(x, q);
    if lo == hi {
        return (d[lo], 0.0);
    }
    let s = (d[hi] - d[lo]) / (x[hi] - x[lo]);
    (d[lo] + w * (d[hi] - d[lo]), s)
}

/// Segment index pair and weight for interpolation at `q >= 0`; `lo == hi`
/// in the flat central and tail regions.
fn interp_nodes(x: &[f64], q: f64) -> (usize, usize, f64) {
    let n = x.len() - 1;
    if q <= x[0] {
        return (0, 0, 0.0);
    }
    if q >= x[n] {
        return (n, n, 0.0);
    }
    let (mut lo, mut hi) = (0usize, n);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if x[mid] <= q {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let dx = x[hi] - x[lo];
    if dx <= 0.0 {
        return (lo, lo, 0.0);
    }
    (lo, hi, (q - x[lo]) / dx)
}

// Chain rule for node positions: dx_i/dh_0 = 1/2, dx_i/dh_k = 1 for 1 <= k <= i.
fn add_position_grad(grad_h: &mut [f64], node: usize, coef: f64) {
    grad_h[0] += 0.5 * coef;
    for g in grad_h[1..=node].iter_mut() {
        *g += coef;
    }
}

fn solve_increment(
    ctx: &PotentialCtx,
    mode: MeshMode,
    prev: &PrevSnapshot,
    u: f64,
    d_init: &[f64],
    h_init: &[f64],
    warm: &Option<(Vec<f64>, Vec<f64>)>,
    hint: &[(usize, usize)],
    sopts: &SolverOptions,
) -> (crate::optimizer::NlpResult, Vec<(usize, usize)>) {
    let nv = d_init.len();
    let lc = ctx.params.lc;
    let length = ctx.params.length;
    let ctx = *ctx;
    let prev_damaged = prev.d.iter().any(|&v| v > 0.0);

    // Constraint closures overwrite the whole gradient buffer.
    let mut ineq: Vec<ScalarFn> = Vec::new();
    match mode {
        MeshMode::Fixed => {
            let h_fixed = h_init.to_vec();
            let objective: ScalarFn = {
                let h = h_fixed.clone();
                Box::new(move |z, grad| match ctx.f_potential(z, &h, u) {
                    Ok(ev) => {
                        grad.copy_from_slice(&ev.grad_d);
                        ev.value
                    }
                    Err(_) => {
                        grad.fill(0.0);
                        f64::INFINITY
                    }
                })
            };
            if ctx.model == ModelKind::LipField {
                for i in 1..nv {
                    let bound = h_fixed[i] / lc;
                    for sign in [1.0f64, -1.0] {
                        ineq.push(Box::new(move |z: &[f64], g: &mut [f64]| {
                            g.fill(0.0);
                            g[i] = sign;
                            g[i - 1] = -sign;
                            sign * (z[i] - z[i - 1]) - bound
                        }));
                    }
                }
            }
            // irreversibility on a frozen mesh is just a lower bound
            let lower: Vec<f64> = prev.d.iter().map(|&v| v.clamp(0.0, 1.0)).collect();
            let problem = NlpProblem {
                x0: d_init.to_vec(),
                lower,
                upper: vec![1.0; nv],
                objective,
                eq: Vec::new(),
                ineq,
                lambda0: warm.as_ref().map(|(l, _)| l.clone()),
                mu0: warm.as_ref().map(|(_, m)| m.clone()),
            };
            (minimize(&problem, sopts), Vec::new())
        }
        MeshMode::XMesh => {
            // Element sizes enter the solver scaled by 1/L so all unknowns
            // are O(1); otherwise the d/h curvature mismatch stalls the
            // quasi-Newton iteration well above the optimality tolerance.
            let unscale = move |z: &[f64]| -> Vec<f64> {
                z[nv..].iter().map(|&v| v * length).collect()
            };
            let make_objective = move || -> ScalarFn<'static> {
                Box::new(move |z, grad| {
                    let h = unscale(z);
                    match ctx.f_potential(&z[..nv], &h, u) {
                        Ok(ev) => {
                            grad[..nv].copy_from_slice(&ev.grad_d);
                            for (gi, &gh) in grad[nv..].iter_mut().zip(ev.grad_h.iter()) {
                                *gi = gh * length;
                            }
                            ev.value
                        }
                        Err(_) => {
                            grad.fill(0.0);
                            f64::INFINITY
                        }
                    }
                })
            };
            // Constraint sets are rebuilt when the solve is repeated with
            // node pins, so generate them from a closure.
            let build_eq = |pins: &[(usize, f64)]| -> Vec<ScalarFn<'static>> {
                // bar-length closure, already O(1) in scaled sizes
                let mut eq: Vec<ScalarFn> = vec![Box::new(move |z: &[f64], g: &mut [f64]| {
                    g.fill(0.0);
                    g[nv] = 1.0;
                    for gi in g[nv + 1..].iter_mut() {
                        *gi = 2.0;
                    }
                    mesh::sum_lengths(&z[nv..]) - 1.0
                })];
                for &(node, target) in pins {
                    eq.push(Box::new(move |z: &[f64], g: &mut [f64]| {
                        g.fill(0.0);
                        let h = unscale(z);
                        let x = positions_raw(&h);
                        add_position_grad(&mut g[nv..], node, 1.0);
                        (x[node] - target) / length
                    }));
                }
                eq
            };
            let build_ineq = || -> Vec<ScalarFn<'static>> {
                let mut ineq: Vec<ScalarFn> = Vec::new();
                if ctx.model == ModelKind::LipField {
                    let ratio = length / lc;
                    for i in 1..nv {
                        for sign in [1.0f64, -1.0] {
                            ineq.push(Box::new(move |z: &[f64], g: &mut [f64]| {
                                g.fill(0.0);
                                g[i] = sign;
                                g[i - 1] = -sign;
                                g[nv + i] = -ratio;
                                sign * (z[i] - z[i - 1]) - z[nv + i] * ratio
                            }));
                        }
                    }
                }
                if prev_damaged {
                    // previous field must not exceed the new one at the new nodes...
                    for i in 0..nv {
                        let (px, pd) = (prev.x.clone(), prev.d.clone());
                        ineq.push(Box::new(move |z: &[f64], g: &mut [f64]| {
                            g.fill(0.0);
                            let h = unscale(z);
                            let x = positions_raw(&h);
                            let (v, slope) = interp_slope(&pd, &px, x[i]);
                            g[i] = -1.0;
                            if slope != 0.0 {
                                add_position_grad(&mut g[nv..], i, slope * length);
                            }
                            v - z[i]
                        }));
                    }
                    // ...and the new field must not drop below the old nodal values.
                    for j in 0..nv {
                        let (pxj, pdj) = (prev.x[j], prev.d[j]);
                        ineq.push(Box::new(move |z: &[f64], g: &mut [f64]| {
                            g.fill(0.0);
                            let h = unscale(z);
                            let d = &z[..nv];
                            let x = positions_raw(&h);
                            let (lo, hi, w) = interp_nodes(&x, pxj);
                            let v = d[lo] + w * (d[hi] - d[lo]);
                            g[lo] -= 1.0 - w;
                            if hi != lo {
                                g[hi] -= w;
                                let s = (d[hi] - d[lo]) / (x[hi] - x[lo]);
                                add_position_grad(&mut g[nv..], lo, s * (1.0 - w) * length);
                                add_position_grad(&mut g[nv..], hi, s * w * length);
                            }
                            pdj - v
                        }));
                    }
                }
                ineq
            };
            let h_min = ctx.h_min();
            let mut lower = vec![0.0; 2 * nv];
            let upper = vec![1.0; 2 * nv];
            for lo in lower[nv..].iter_mut() {
                *lo = h_min / length;
            }
            let mut x0 = Vec::with_capacity(2 * nv);
            x0.extend_from_slice(d_init);
            x0.extend(h_init.iter().map(|&v| v / length));
            // Solve with the coincident nodes pinned structurally: within
            // each run of elements between consecutive pinned nodes, the
            // last element length is the segment remainder. Probes and line
            // searches in the reduced coordinates then never cross the kink,
            // where the constraints are smooth, while the kink manifold
            // itself stays exact. Returns the result in full coordinates.
            let solve_pinned = |pins: &[(usize, f64)],
                                x_full: &[f64],
                                lambda0: Vec<f64>,
                                mu0_full: Vec<f64>|
             -> crate::optimizer::NlpResult {
                let mut elim: Vec<(usize, Vec<(usize, f64)>, f64)> = Vec::new();
                let mut seg_start = 0usize; // first element index of current segment
                let mut prev_target = 0.0f64;
                for &(node, target) in pins {
                    // node position: x_node = h0/2 + sum_{1..node} h_k, so the
                    // segment since the previous pin has a fixed length and
                    // its last element is the remainder of the kept ones
                    let mut terms: Vec<(usize, f64)> = Vec::new();
                    if seg_start == 0 {
                        if node == 0 {
                            // h0/2 = target
                            elim.push((0, terms, 2.0 * target / length));
                        } else {
                            terms.push((0, -0.5));
                            for k in 1..node {
                                terms.push((k, -1.0));
                            }
                            elim.push((node, terms, target / length));
                        }
                    } else {
                        for k in seg_start..node {
                            terms.push((k, -1.0));
                        }
                        elim.push((node, terms, (target - prev_target) / length));
                    }
                    seg_start = node + 1;
                    prev_target = target;
                }
                let elim_idx: Vec<usize> = elim.iter().map(|&(e, _, _)| e).collect();
                let keep: Vec<usize> = (0..2 * nv)
                    .filter(|&j| j < nv || !elim_idx.contains(&(j - nv)))
                    .collect();
                let elim = std::sync::Arc::new(elim);
                let keep = std::sync::Arc::new(keep);
                let expand = {
                    let (elim, keep) = (elim.clone(), keep.clone());
                    move |q: &[f64]| -> Vec<f64> {
                        let mut z = vec![0.0; 2 * nv];
                        for (j, &full) in keep.iter().enumerate() {
                            z[full] = q[j];
                        }
                        for (e, terms, offset) in elim.iter() {
                            let mut v = *offset;
                            for &(src, coef) in terms {
                                v += coef * z[nv + src];
                            }
                            z[nv + e] = v;
                        }
                        z
                    }
                };
                let contract = {
                    let (elim, keep) = (elim.clone(), keep.clone());
                    move |gz: &[f64], gq: &mut [f64]| {
                        let mut gz = gz.to_vec();
                        for (e, terms, _) in elim.iter() {
                            let ge = gz[nv + e];
                            for &(src, coef) in terms {
                                gz[nv + src] += coef * ge;
                            }
                        }
                        for (j, &full) in keep.iter().enumerate() {
                            gq[j] = gz[full];
                        }
                    }
                };
                let wrap = |f: ScalarFn<'static>| -> ScalarFn<'static> {
                    let (expand, contract) = (expand.clone(), contract.clone());
                    Box::new(move |q: &[f64], gq: &mut [f64]| {
                        let z = expand(q);
                        let mut gz = vec![0.0; 2 * nv];
                        let v = f(&z, &mut gz);
                        contract(&gz, gq);
                        v
                    })
                };
                let mut r_ineq: Vec<ScalarFn<'static>> =
                    build_ineq().into_iter().map(&wrap).collect();
                let n_orig_ineq = r_ineq.len();
                // bounds of the eliminated element lengths become inequalities
                let h_min_s = h_min / length;
                for (_, terms, offset) in elim.iter() {
                    let (terms, offset) = (terms.clone(), *offset);
                    let keep = keep.clone();
                    r_ineq.push(Box::new(move |q: &[f64], g: &mut [f64]| {
                        g.fill(0.0);
                        let mut v = offset;
                        for &(src, coef) in &terms {
                            let pos = keep.iter().position(|&k| k == nv + src).unwrap();
                            v += coef * q[pos];
                            g[pos] = -coef;
                        }
                        h_min_s - v
                    }));
                }
                let r_eq: Vec<ScalarFn<'static>> =
                    build_eq(&[]).into_iter().map(&wrap).collect();
                let mut mu0 = mu0_full;
                mu0.resize(r_ineq.len(), 0.0);
                let reduced = NlpProblem {
                    x0: keep.iter().map(|&j| x_full[j]).collect(),
                    lower: keep.iter().map(|&j| lower[j]).collect(),
                    upper: keep.iter().map(|&j| upper[j]).collect(),
                    objective: wrap(make_objective()),
                    eq: r_eq,
                    ineq: r_ineq,
                    lambda0: Some(lambda0),
                    mu0: Some(mu0),
                };
                let mut out = minimize(&reduced, sopts);
                out.x = expand(&out.x);
                out.mu_ineq.truncate(n_orig_ineq);
                out
            };
            // On long stretches the same nodes stay parked on the same old
            // node positions, so try last step's pin structure first and
            // validate it with a cheap budget-limited unpinned probe; the
            // expensive full solve then only runs when the pin set changes.
            if !hint.is_empty() && prev_damaged {
                let pins: Vec<(usize, f64)> =
                    hint.iter().map(|&(i, j)| (i, prev.x[j])).collect();
                let lam0 = warm
                    .as_ref()
                    .map(|(l, _)| l[..1].to_vec())
                    .unwrap_or_else(|| vec![0.0]);
                let mu0 = warm.as_ref().map(|(_, m)| m.clone()).unwrap_or_default();
                let hp = solve_pinned(&pins, &x0, lam0, mu0);
                // a quasistatic increment continues the current local branch,
                // but on the kink manifold nothing blocks a slide into a
                // different basin, so only accept a nearby solution
                let moved = hp
                    .x
                    .iter()
                    .zip(&x0)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f64, f64::max);
                if hp.status == SolveStatus::Converged && moved < 0.05 {
                    let popts = SolverOptions {
                        max_outer: 4,
                        max_inner: 200,
                        ..*sopts
                    };
                    let probe_problem = NlpProblem {
                        x0: hp.x.clone(),
                        lower: lower.clone(),
                        upper: upper.clone(),
                        objective: make_objective(),
                        eq: build_eq(&[]),
                        ineq: build_ineq(),
                        lambda0: Some(hp.lambda_eq.clone()),
                        mu0: Some(hp.mu_ineq.clone()),
                    };
                    let probe = minimize(&probe_problem, &popts);
                    let scale = hp.f.abs().max(1.0);
                    if probe.f >= hp.f - 1e-9 * scale {
                        if std::env::var_os("QS_DUMP").is_some() {
                            eprintln!("  return hint f={:.6e}", hp.f);
                        }
                        return (hp, hint.to_vec());
                    }
                    if probe.status == SolveStatus::Converged {
                        if std::env::var_os("QS_DUMP").is_some() {
                            eprintln!("  return probe f={:.6e} (hp {:.6e})", probe.f, hp.f);
                        }
                        return (probe, Vec::new());
                    }
                    // a kink released and the probe found real descent
                    // without converging: rerun the full machinery below
                }
            }
            let problem = NlpProblem {
                x0,
                lower: lower.clone(),
                upper: upper.clone(),
                objective: make_objective(),
                eq: build_eq(&[]),
                ineq: build_ineq(),
                lambda0: warm.as_ref().map(|(l, _)| l[..1].to_vec()),
                mu0: warm.as_ref().map(|(_, m)| m.clone()),
            };
            let mut res = minimize(&problem, sopts);
            if prev_damaged {
                // The start (last step's fields) is feasible, so a result
                // above it means the warm-started outer iteration jumped a
                // ridge into a different basin. Re-solve cold, then inside a
                // trust region around the start; keep the lowest outcome.
                let mut g0 = vec![0.0; 2 * nv];
                let f0 = (problem.objective)(&problem.x0, &mut g0);
                let scale = f0.abs().max(1.0);
                if res.f > f0 + 1e-9 * scale {
                    if std::env::var_os("QS_DUMP").is_some() {
                        eprintln!("  warm hop: f0={f0:.6e} res.f={:.6e} kkt={:.1e}", res.f, res.kkt_residual);
                    }
                    let cold = NlpProblem {
                        x0: problem.x0.clone(),
                        lower: lower.clone(),
                        upper: upper.clone(),
                        objective: make_objective(),
                        eq: build_eq(&[]),
                        ineq: build_ineq(),
                        lambda0: None,
                        mu0: None,
                    };
                    let alt = minimize(&cold, sopts);
                    if std::env::var_os("QS_DUMP").is_some() {
                        eprintln!("  cold: f={:.6e} kkt={:.1e} {:?}", alt.f, alt.kkt_residual, alt.status);
                    }
                    if alt.f < res.f && alt.feas_residual <= sopts.feas_tol.max(res.feas_residual)
                    {
                        res = alt;
                    }
                }
                if res.f > f0 + 1e-9 * scale {
                    let radius = 0.05;
                    let t_lower: Vec<f64> = problem
                        .x0
                        .iter()
                        .zip(&lower)
                        .map(|(&x, &lo)| lo.max(x - radius))
                        .collect();
                    let t_upper: Vec<f64> = problem
                        .x0
                        .iter()
                        .zip(&upper)
                        .map(|(&x, &up)| up.min(x + radius))
                        .collect();
                    let trust = NlpProblem {
                        x0: problem.x0.clone(),
                        lower: t_lower,
                        upper: t_upper,
                        objective: make_objective(),
                        eq: build_eq(&[]),
                        ineq: build_ineq(),
                        lambda0: None,
                        mu0: None,
                    };
                    let alt = minimize(&trust, sopts);
                    if std::env::var_os("QS_DUMP").is_some() {
                        eprintln!("  trust: f={:.6e} kkt={:.1e} {:?}", alt.f, alt.kkt_residual, alt.status);
                    }
                    if alt.f < res.f && alt.feas_residual <= sopts.feas_tol.max(res.feas_residual)
                    {
                        res = alt;
                    }
                }
            }
            if std::env::var_os("QS_DUMP").is_some() {
                eprintln!(
                    "  full solve {:?} f={:.6e} kkt={:.2e}",
                    res.status, res.f, res.kkt_residual
                );
            }
            if res.status == SolveStatus::Converged || res.kkt_residual > 1e-2 || !prev_damaged
            {
                return (res, Vec::new());
            }
            // The optimum often parks a node exactly on an old node position,
            // which is a kink of the piecewise-linear irreversibility
            // constraints: no smooth KKT point exists there and the residual
            // stalls. Re-solving on the kink manifold removes the kink; the
            // restriction is accepted only when it converges without raising
            // the objective.
            let mut best = res;
            let mut best_pins: Vec<(usize, usize)> = Vec::new();
            let mut prev_pins: Vec<(usize, f64)> = Vec::new();
            for _ in 0..3 {
                if best.status == SolveStatus::Converged {
                    break;
                }
                let h = unscale(&best.x);
                let x = positions_raw(&h);
                let mut pins: Vec<(usize, f64)> = Vec::new();
                let mut pin_ids: Vec<(usize, usize)> = Vec::new();
                for (i, &xi) in x.iter().enumerate().take(nv.saturating_sub(1)) {
                    for (j, &xo) in prev.x.iter().enumerate().take(nv.saturating_sub(1)) {
                        if (xi - xo).abs() < 1e-7 * length {
                            pins.push((i, xo));
                            pin_ids.push((i, j));
                            break;
                        }
                    }
                }
                if pins.is_empty() || pins == prev_pins {
                    break;
                }
                prev_pins = pins.clone();
                let pinned =
                    solve_pinned(&pins, &best.x, best.lambda_eq.clone(), best.mu_ineq.clone());
                if std::env::var_os("QS_DUMP").is_some() {
                    eprintln!(
                        "  pins={} pinned status={:?} kkt={:.2e} df={:.2e}",
                        pins.len(),
                        pinned.status,
                        pinned.kkt_residual,
                        pinned.f - best.f
                    );
                }
                // The reduced solution expands to a point feasible for the
                // original constraints, so adopt it whenever it is at least
                // as good; converged restrictions must not raise the
                // objective.
                let scale = best.f.abs().max(1.0);
                let feasible_enough =
                    pinned.feas_residual <= sopts.feas_tol.max(best.feas_residual);
                let improved = feasible_enough
                    && pinned.kkt_residual < best.kkt_residual
                    && pinned.f <= best.f + 1e-9 * scale;
                if improved {
                    best = pinned;
                    best_pins = pin_ids;
                } else {
                    break;
                }
            }
            (best, best_pins)
        }
    }
}

/// Relative L2 norm (element midpoints, length-weighted) of the displacement
/// discrepancy against the closed-form solution at the same elongation.
fn l2_error(
    analytic: &Analytic,
    cache: &mut Option<(f64, ProfileCache)>,
    h: &[f64],
    disp: &[f64],
    u: f64,
) -> Result<f64> {
    if u <= 0.0 {
        return Ok(0.0);
    }
    let length = analytic.params.length;
    let d0 = analytic.d0_of_u(u);
    let exact = |m: f64, cache: &Option<(f64, ProfileCache)>| -> f64 {
        if d0 == 0.0 {
            u * m / length
        } else {
            cache.as_ref().unwrap().1.displacement_at(m, u)
        }
    };
    if d0 > 0.0 && cache.as_ref().map(|(c, _)| *c != d0).unwrap_or(true) {
        *cache = Some((d0, ProfileCache::new(*analytic, d0)?));
    }
    let x = mesh::node_positions_of(h, length);
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 1..h.len() {
        let m = 0.5 * (x[i - 1] + x[i]);
        let u_num = 0.5 * (disp[i - 1] + disp[i]);
        let u_ex = exact(m, cache);
        num += 2.0 * h[i] * (u_num - u_ex) * (u_num - u_ex);
        den += 2.0 * h[i] * u_ex * u_ex;
    }
    // central element midpoint sits at x = 0 where both fields vanish
    if den <= 0.0 {
        return Ok(0.0);
    }
    Ok((num / den).sqrt())
}

/// Stationarity diagnostics of a converged X-Mesh step.
#[derive(Debug, Clone)]
pub struct ResidualReport {
    pub step: usize,
    pub u: f64,
    /// `|sigma/sigma_c - (1 - d0)|` (phase-field) or `|sigma/sigma_c - (1 - d0^2)|`
    /// (lip-field), only while `0 < d0 < 1`.
    pub stress_law: Option<f64>,
    /// Largest per-element residual of the stationarity condition in h over
    /// elements with no active bound, scaled by `Gc/(c lc)`.
    pub hopti_max: f64,
    /// Phase-field only: largest `|lc |dd|/h - H(dbar, d0)|` over damaged elements.
    pub pf_grad_max: f64,
    /// Lip-field slope classification counts over damaged off-center elements.
    pub lip_zero: usize,
    pub lip_unit: usize,
    pub lip_other: usize,
    pub lambda: Option<f64>,
    /// `-(1/2) E K^2 (U/L)^2`.
    pub lambda_expected: f64,
}

pub fn xmesh_residuals(ctx: &PotentialCtx, st: &StepState) -> Result<ResidualReport> {
    let nv = st.d.len();
    let params = &ctx.params;
    let (lc, length) = (params.lc, params.length);
    let d0 = st.d[0];
    let eval = ctx.f_potential(&st.d, &st.h, st.u)?;
    let lambda_expected =
        -0.5 * params.e_modulus * eval.k * eval.k * (st.u / length) * (st.u / length);
    let stress_law = if d0 > 0.0 && d0 < 1.0 {
        let law = match ctx.model {
            ModelKind::PhaseField => 1.0 - d0,
            ModelKind::LipField => 1.0 - d0 * d0,
        };
        Some((st.sigma / params.sigc - law).abs())
    } else {
        None
    };

    let lambda = st.lambda.unwrap_or(lambda_expected);
    let h_scale = params.gc / (ctx.model.c() * lc);
    let dbar = ctx.midpoint_damage(&st.d);
    let mut hopti_max = 0.0f64;
    let mut pf_grad_max = 0.0f64;
    let (mut lip_zero, mut lip_unit, mut lip_other) = (0usize, 0usize, 0usize);
    for e in 0..nv {
        let weight = if e == 0 { 1.0 } else { 2.0 };
        let dd = if e == 0 { 0.0 } else { st.d[e] - st.d[e - 1] };
        let lip_active = ctx.model == ModelKind::LipField
            && e > 0
            && dd.abs() >= st.h[e] / lc - 1e-6 * (st.h[e] / lc).max(1e-3);
        let floor_active = st.h[e] <= 10.0 * ctx.h_min();
        if !lip_active && !floor_active {
            // stationarity of F + lambda (h0 + 2 sum h - L) in h_e, per element
            let res = eval.grad_h[e] / weight + lambda;
            hopti_max = hopti_max.max((res / h_scale).abs());
        }
        if e > 0 && dbar[e] > 1e-6 {
            match ctx.model {
                ModelKind::PhaseField => {
                    if d0 < 1.0 && dbar[e] <= d0 {
                        if let Ok(hk) = crate::analytic::h_kernel(dbar[e], d0) {
                            pf_grad_max = pf_grad_max.max((lc * dd.abs() / st.h[e] - hk).abs());
                        }
                    }
                }
                ModelKind::LipField => {
                    let s = dd.abs() * lc / st.h[e];
                    if s <= 1e-3 {
                        lip_zero += 1;
                    } else if (s - 1.0).abs() <= 1e-3 {
                        lip_unit += 1;
                    } else {
                        lip_other += 1;
                    }
                }
            }
        }
    }
    Ok(ResidualReport {
        step: st.step,
        u: st.u,
        stress_law,
        hopti_max,
        pf_grad_max,
        lip_zero,
        lip_unit,
        lip_other,
        lambda: st.lambda,
        lambda_expected,
    })
}

/// Elastic-reloading episodes: maximal runs of steps where the stress rises
/// after damage has started while the dissipation stalls. Returns half-open
/// step ranges.
pub fn detect_reloading(history: &History) -> Vec<(usize, usize)> {
    let sigc = history.params.sigc;
    let gc = history.params.gc;
    let steps = &history.steps;
    let mut episodes = Vec::new();
    let mut start: Option<usize> = None;
    for k in 1..steps.len() {
        let reloading = steps[k - 1].d[0] > 1e-9
            && !steps[k].broken
            && steps[k].sigma > steps[k - 1].sigma + 1e-9 * sigc
            && (steps[k].w_diss - steps[k - 1].w_diss) <= 1e-12 * gc;
        match (reloading, start) {
            (true, None) => start = Some(k),
            (false, Some(s)) => {
                episodes.push((s, k));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        episodes.push((s, steps.len()));
    }
    episodes
}

/// Potential value along the reduced triangle ansatz `d_i = max(0, d0 - x_i/lc)`
/// on a fixed mesh, for each requested peak value.
pub fn basin_scan(
    ctx: &PotentialCtx,
    mesh: &HalfMesh,
    u: f64,
    d0_values: &[f64],
) -> Result<Vec<(f64, f64)>> {
    let x = mesh.node_positions();
    let mut out = Vec::with_capacity(d0_values.len());
    for &d0 in d0_values {
        let d: Vec<f64> = x
            .iter()
            .map(|&xi| (d0 - xi / ctx.params.lc).clamp(0.0, 1.0))
            .collect();
        let value = if d[0] >= 1.0 {
            params_broken_value(ctx, &d, &mesh.h)?
        } else {
            ctx.f_potential(&d, &mesh.h, u)?.value
        };
        out.push((d0, value));
    }
    Ok(out)
}

// On a fixed mesh a fully damaged node zeroes the stiffness; only the
// dissipation term remains.
fn params_broken_value(ctx: &PotentialCtx, d: &[f64], h: &[f64]) -> Result<f64> {
    Ok(ctx.params.gc * ctx.w_dissipation(d, h)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MaterialParams;

    #[test]
    fn schedule_shapes() {
        let s = LoadSchedule::uniform(1.0, 5).unwrap();
        assert_eq!(s.u, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        let s = s.refine(0.5, 0.75, 3);
        assert_eq!(s.u.len(), 8);
        assert!(s.u.windows(2).all(|w| w[1] > w[0]));
        // refine deduplicates points that collide with existing ones
        let s2 = LoadSchedule::uniform(1.0, 5).unwrap().refine(0.0, 1.0, 3);
        assert_eq!(s2.u.len(), 5);
        assert!(LoadSchedule::uniform(1.0, 1).is_err());
        assert!(LoadSchedule::uniform(0.0, 10).is_err());
    }

    #[test]
    fn elastic_phase_is_exact() {
        let params = MaterialParams::table1();
        let uc = params.derive().unwrap().uc;
        let schedule = LoadSchedule::uniform(0.9 * uc, 10).unwrap();
        let hist = run(
            ModelKind::PhaseField,
            MeshMode::Fixed,
            params,
            5,
            &schedule,
        )
        .unwrap();
        assert!(hist.broken_at.is_none());
        for st in &hist.steps {
            assert_eq!(st.d[0], 0.0);
            let sigma_exact = params.e_modulus * st.u / params.length;
            assert!((st.sigma - sigma_exact).abs() <= 1e-12 * params.sigc);
            assert_eq!(st.err2, 0.0);
            assert!(st.w_diss.abs() <= 1e-9 * params.gc);
        }
    }

    #[test]
    fn interp_helpers_match() {
        let x = [0.5, 1.5, 3.0];
        let d = [1.0, 0.4, 0.1];
        let (v, s) = interp_slope(&d, &x, 1.0);
        assert!((v - 0.7).abs() < 1e-15);
        assert!((s + 0.6).abs() < 1e-15);
        let (v, s) = interp_slope(&d, &x, 0.2);
        assert_eq!((v, s), (1.0, 0.0));
        let (v, s) = interp_slope(&d, &x, 5.0);
        assert_eq!((v, s), (0.1, 0.0));
        let (lo, hi, w) = interp_nodes(&x, 2.25);
        assert_eq!((lo, hi), (1, 2));
        assert!((w - 0.5).abs() < 1e-15);
    }

    #[test]
    fn fixed_lip_increment_matches_triangle_scan() {
        // one damaging increment; the minimizer must at least match the best
        // triangle-ansatz value on the same mesh
        let params = MaterialParams::table1();
        let derived = params.derive().unwrap();
        let ctx = PotentialCtx::new(ModelKind::LipField, params).unwrap();
        let mesh = HalfMesh::build_uniform(ModelKind::LipField, &params, 5).unwrap();
        let u = 0.5 * (derived.uc + derived.wc);
        let schedule = LoadSchedule { u: vec![0.0, u] };
        let hist = run(ModelKind::LipField, MeshMode::Fixed, params, 5, &schedule).unwrap();
        let st = hist.steps.last().unwrap();
        assert!(st.converged, "kkt = {}", st.kkt_residual);
        let grid: Vec<f64> = (0..=400).map(|i| i as f64 / 400.0).collect();
        let scan = basin_scan(&ctx, &mesh, u, &grid).unwrap();
        let best = scan.iter().map(|&(_, f)| f).fold(f64::INFINITY, f64::min);
        assert!(
            st.f_value <= best + 1e-6 * best.abs(),
            "solver {} vs scan {}",
            st.f_value,
            best
        );
        assert!(st.d[0] > 0.0 && st.d[0] < 1.0);
        assert!(st.constraints.feasible(params.length, 1e-8));
    }

    #[test]
    fn reload_detector_on_synthetic_history() {
        let params = MaterialParams::table1();
        let mk = |u: f64, sigma: f64, d0: f64, wd: f64| StepState {
            step: 0,
            u,
            d: vec![d0],
            h: vec![params.length],
            x: vec![0.5 * params.length],
            disp: vec![0.5 * u],
            sigma,
            k: 1.0,
            w: 0.0,
            f_value: 0.0,
            w_diss: wd,
            err2: 0.0,
            broken: false,
            converged: true,
            kkt_residual: 0.0,
            lambda: None,
            constraints: ConstraintReport {
                length_residual: 0.0,
                box_violation: 0.0,
                irr_forward: 0.0,
                irr_backward: 0.0,
                lip_violation: 0.0,
            },
        };
        let gc = params.gc;
        let hist = History {
            model: ModelKind::LipField,
            mode: MeshMode::Fixed,
            params,
            n_c: 5,
            steps: vec![
                mk(0.0, 0.0, 0.0, 0.0),       // elastic
                mk(1.0, 1e6, 0.0, 0.0),       // elastic rise: not an episode (d0 = 0)
                mk(2.0, 2e6, 0.2, 0.1 * gc),  // damaging
                mk(3.0, 2.5e6, 0.2, 0.1 * gc), // reload: rise + stall
                mk(4.0, 3.0e6, 0.2, 0.1 * gc), // reload continues
                mk(5.0, 1.0e6, 0.4, 0.3 * gc), // damaging again
            ],
            broken_at: None,
        };
        let eps = detect_reloading(&hist);
        assert_eq!(eps, vec![(3, 5)]);
    }
}
