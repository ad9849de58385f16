//! Deterministic constrained minimizer for the per-increment problems.
//!
//! Structure: an augmented-Lagrangian outer loop over the equality and
//! inequality constraints, with a projected quasi-Newton (L-BFGS) inner solve
//! over the box constraints. The lip-field objective is nonsmooth at
//! Lipschitz-activation corners; when the quasi-Newton direction fails the
//! sufficient-decrease test the inner solver falls back to a backtracking
//! projected-gradient step, which guarantees progress at corner points.
//!
//! No randomness anywhere: identical inputs produce identical outputs.

/// A differentiable scalar function: returns the value and fills `grad`.
pub type ScalarFn<'a> = Box<dyn Fn(&[f64], &mut [f64]) -> f64 + 'a>;

/// Constrained problem statement.
pub struct NlpProblem<'a> {
    pub x0: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub objective: ScalarFn<'a>,
    /// Equality constraints `c(x) = 0`.
    pub eq: Vec<ScalarFn<'a>>,
    /// Inequality constraints `g(x) <= 0`.
    pub ineq: Vec<ScalarFn<'a>>,
    /// Warm-started multipliers from a previous related solve.
    pub lambda0: Option<Vec<f64>>,
    pub mu0: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    /// First-order optimality tolerance, scaled by `max(1, |f|)`.
    pub kkt_tol: f64,
    /// Constraint violation tolerance.
    pub feas_tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    /// Initial quadratic penalty.
    pub rho0: f64,
    /// Penalty multiplier applied when feasibility stalls.
    pub rho_factor: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            kkt_tol: 1e-8,
            feas_tol: 1e-10,
            max_outer: 30,
            max_inner: 500,
            rho0: 100.0,
            rho_factor: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    MaxIter,
}

#[derive(Debug, Clone)]
pub struct NlpResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub lambda_eq: Vec<f64>,
    pub mu_ineq: Vec<f64>,
    pub status: SolveStatus,
    /// Scaled projected-gradient norm of the Lagrangian at the solution.
    pub kkt_residual: f64,
    /// Largest constraint violation at the solution.
    pub feas_residual: f64,
    pub outer_iters: usize,
    pub inner_iters: usize,
}

/// Per-constraint multiplier/complementarity diagnostics.
#[derive(Debug, Clone)]
pub struct MultiplierReport {
    pub lambda_eq: Vec<f64>,
    pub mu_ineq: Vec<f64>,
    /// `|mu_i * g_i(x)|` per inequality.
    pub complementarity: Vec<f64>,
}

fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lower[i], upper[i]);
    }
}

fn projected_gradient_norm(x: &[f64], g: &[f64], lower: &[f64], upper: &[f64]) -> f64 {
    let mut norm = 0.0f64;
    for i in 0..x.len() {
        let step = (x[i] - g[i]).clamp(lower[i], upper[i]) - x[i];
        norm = norm.max(step.abs());
    }
    norm
}

/// Minimize the problem. Deterministic local minimization: the returned point
/// lies in the warm-start basin.
pub fn minimize(problem: &NlpProblem, opts: &SolverOptions) -> NlpResult {
    let n = problem.x0.len();
    let mut x = problem.x0.clone();
    project(&mut x, &problem.lower, &problem.upper);
    repair_equalities(problem, &mut x);

    let n_eq = problem.eq.len();
    let n_ineq = problem.ineq.len();
    let mut lambda = problem
        .lambda0
        .clone()
        .filter(|v| v.len() == n_eq)
        .unwrap_or_else(|| vec![0.0; n_eq]);
    let mut mu = problem
        .mu0
        .clone()
        .filter(|v| v.len() == n_ineq)
        .unwrap_or_else(|| vec![0.0; n_ineq]);
    let mut rho = opts.rho0;
    let mut viol_prev = f64::INFINITY;
    let mut kkt_prev = f64::INFINITY;
    let mut total_inner = 0usize;
    let mut kkt = f64::INFINITY;
    let mut feas = f64::INFINITY;
    let mut f_val = f64::INFINITY;
    let mut status = SolveStatus::MaxIter;
    let mut outer_done = 0usize;
    let mut inner_tol_scale: f64 = 1e-3;

    let mut cg = vec![0.0; n]; // scratch constraint gradient
    for outer in 0..opts.max_outer {
        outer_done = outer + 1;
        // augmented Lagrangian for the current (lambda, mu, rho)
        let al = |z: &[f64], grad: &mut [f64]| -> f64 {
            let mut cbuf = vec![0.0; n];
            let mut val = (problem.objective)(z, grad);
            for (j, c_fn) in problem.eq.iter().enumerate() {
                let c = c_fn(z, &mut cbuf);
                val += lambda[j] * c + 0.5 * rho * c * c;
                let w = lambda[j] + rho * c;
                for (gi, ci) in grad.iter_mut().zip(cbuf.iter()) {
                    *gi += w * ci;
                }
            }
            for (i, g_fn) in problem.ineq.iter().enumerate() {
                let g = g_fn(z, &mut cbuf);
                let t = mu[i] + rho * g;
                if t > 0.0 {
                    val += (t * t - mu[i] * mu[i]) / (2.0 * rho);
                    for (gi, ci) in grad.iter_mut().zip(cbuf.iter()) {
                        *gi += t * ci;
                    }
                }
            }
            val
        };

        if std::env::var_os("OPT_FDCHECK").is_some() {
            let mut g_an = vec![0.0; n];
            let f0 = al(&x, &mut g_an);
            let mut worst = (0.0f64, 0usize);
            for i in 0..n {
                let eps = 1e-7 * x[i].abs().max(1e-4);
                // skip coordinates near their bounds: kinks are expected there
                if x[i] - problem.lower[i] < 10.0 * eps || problem.upper[i] - x[i] < 10.0 * eps {
                    continue;
                }
                let mut xp = x.clone();
                xp[i] += eps;
                let mut xm = x.clone();
                xm[i] -= eps;
                let mut scratch = vec![0.0; n];
                let fd = (al(&xp, &mut scratch) - al(&xm, &mut scratch)) / (2.0 * eps);
                let err = (fd - g_an[i]).abs() / g_an[i].abs().max(1.0);
                if err > worst.0 {
                    worst = (err, i);
                }
            }
            eprintln!("FD outer={outer} f0={f0:.6e} worst_rel_err={:.2e} at coord {}", worst.0, worst.1);
        }
        let inner_tol = inner_tol_scale.max(0.3 * opts.kkt_tol);
        let (x_new, _phi, iters) = inner_minimize(
            &al,
            &problem.lower,
            &problem.upper,
            &x,
            inner_tol,
            opts.max_inner,
        );
        x = x_new;
        total_inner += iters;

        // first-order multiplier update and violation measure
        let mut viol = 0.0f64;
        let mut c_vals = Vec::with_capacity(n_eq);
        for (j, c_fn) in problem.eq.iter().enumerate() {
            let c = c_fn(&x, &mut cg);
            c_vals.push(c);
            lambda[j] += rho * c;
            viol = viol.max(c.abs());
        }
        let mut g_vals = Vec::with_capacity(n_ineq);
        for (i, g_fn) in problem.ineq.iter().enumerate() {
            let g = g_fn(&x, &mut cg);
            g_vals.push(g);
            mu[i] = (mu[i] + rho * g).max(0.0);
            viol = viol.max(g.max(0.0));
        }

        // The first-order update converges slowly for stiff objectives and
        // carries rho-amplified rounding noise, so refine the multipliers by
        // least squares on the stationarity system and keep whichever
        // estimate gives the smaller KKT residual.
        let (f_fo, pg_fo) = lagrangian_pg(problem, &x, &lambda, &mu);
        let (lambda_ls, mu_ls) = least_squares_multipliers(problem, &x, &mu);
        let (_, pg_ls) = lagrangian_pg(problem, &x, &lambda_ls, &mu_ls);
        f_val = f_fo;
        let pg = if pg_ls < pg_fo {
            lambda = lambda_ls;
            mu = mu_ls;
            pg_ls
        } else {
            pg_fo
        };
        let scale = f_val.abs().max(1.0);
        kkt = pg / scale;
        feas = viol;
        if std::env::var_os("OPT_DEBUG").is_some() {
            eprintln!(
                "outer={outer} rho={rho:.1e} viol={viol:.2e} kkt={kkt:.2e} pg_fo={pg_fo:.2e} pg_ls={pg_ls:.2e} f={f_val:.6e} inner={iters}"
            );
        }
        if kkt <= opts.kkt_tol && viol <= opts.feas_tol {
            status = SolveStatus::Converged;
            break;
        }
        if viol > 0.25 * viol_prev && viol > opts.feas_tol {
            rho = (rho * opts.rho_factor).min(1e12);
        } else if kkt > 0.5 * kkt_prev {
            // feasibility is fine but the multipliers stopped improving: the
            // contraction rate of the first-order update scales like
            // curvature / rho, so stiff objectives need a larger penalty.
            // Capped well below the feasibility-driven limit because the
            // update lambda += rho * c turns rounding noise in c into
            // multiplier jitter once rho approaches 1/eps.
            rho = (rho * opts.rho_factor).min(1e6);
        }
        viol_prev = viol;
        kkt_prev = kkt;
        inner_tol_scale = (inner_tol_scale * 0.2).max(opts.kkt_tol * 0.1);
    }

    if std::env::var_os("OPT_DUMP").is_some() && kkt > opts.kkt_tol {
        let n = x.len();
        let (lambda_d, mu_d) = least_squares_multipliers(problem, &x, &mu);
        let mut g = vec![0.0; n];
        (problem.objective)(&x, &mut g);
        let mut scratch = vec![0.0; n];
        for (i, eq) in problem.eq.iter().enumerate() {
            scratch.fill(0.0);
            (eq)(&x, &mut scratch);
            for j in 0..n {
                g[j] += lambda_d[i] * scratch[j];
            }
        }
        for (i, ineq) in problem.ineq.iter().enumerate() {
            scratch.fill(0.0);
            let gv = (ineq)(&x, &mut scratch);
            if mu_d[i] != 0.0 {
                for j in 0..n {
                    g[j] += mu_d[i] * scratch[j];
                }
            }
            if gv > -1e-6 || mu_d[i] != 0.0 {
                eprintln!("  ineq[{i}] g={gv:.3e} mu={:.3e}", mu_d[i]);
            }
        }
        for j in 0..n {
            let lo = problem.lower[j];
            let hi = problem.upper[j];
            let pg = if x[j] - lo < 1e-12 * (hi - lo) {
                g[j].min(0.0)
            } else if hi - x[j] < 1e-12 * (hi - lo) {
                g[j].max(0.0)
            } else {
                g[j]
            };
            if pg.abs() > 1e-7 || x[j] - lo < 1e-8 || hi - x[j] < 1e-8 {
                eprintln!(
                    "  x[{j}]={:.6e} dlo={:.2e} dhi={:.2e} gL={:.3e} pg={pg:.3e}",
                    x[j],
                    x[j] - lo,
                    hi - x[j],
                    g[j]
                );
            }
        }
    }

    // The first-order loop zigzags once several constraints are exactly
    // active; finish with an active-set Newton polish on the KKT system,
    // which converges quadratically from the iterate the loop produced.
    if kkt > opts.kkt_tol || feas > opts.feas_tol {
        // Only states at least as feasible as this may be returned; the
        // watchdog below briefly tolerates worse iterates while Newton
        // restores feasibility, and `fallback` guards against ending there.
        let feas_cap = feas.max(opts.feas_tol);
        let measure =
            |k: f64, v: f64| -> f64 { (k / opts.kkt_tol).max(v / opts.feas_tol) };
        let mut fallback = (x.clone(), lambda.clone(), mu.clone(), f_val, kkt, feas);
        let mut watchdog = false;
        let mut ridge = 1e-10;
        let mut rounds = 0;
        while rounds < 25 {
            rounds += 1;
            let Some((x_full, lambda_full, mu_full)) =
                newton_polish(problem, &x, &lambda, &mu, ridge)
            else {
                if std::env::var_os("OPT_DEBUG").is_some() {
                    eprintln!("polish ridge={ridge:.1e} solve failed");
                }
                if ridge < 1e-2 {
                    ridge *= 100.0;
                    continue;
                }
                break;
            };
            // The objective is nonconvex, so a full Newton step can overshoot;
            // backtrack on the combined optimality/feasibility measure.
            let before = measure(kkt, feas);
            let mut best: Option<(Vec<f64>, Vec<f64>, Vec<f64>, f64, f64, f64)> = None;
            let mut relaxed: Option<(Vec<f64>, Vec<f64>, Vec<f64>, f64, f64, f64)> = None;
            let mut first_try: Option<(f64, f64)> = None;
            let mut alpha = 1.0;
            for _ in 0..9 {
                let x_c: Vec<f64> = x
                    .iter()
                    .zip(x_full.iter())
                    .map(|(&a, &b)| a + alpha * (b - a))
                    .collect();
                let lambda_c: Vec<f64> = lambda
                    .iter()
                    .zip(lambda_full.iter())
                    .map(|(&a, &b)| a + alpha * (b - a))
                    .collect();
                let mu_c: Vec<f64> = mu
                    .iter()
                    .zip(mu_full.iter())
                    .map(|(&a, &b)| (a + alpha * (b - a)).max(0.0))
                    .collect();
                let (f_c, pg_c) = lagrangian_pg(problem, &x_c, &lambda_c, &mu_c);
                // The interpolated duals can be poor for damped steps; the
                // least-squares estimate gives the fairest optimality score.
                let (lambda_r, mu_r) = least_squares_multipliers(problem, &x_c, &mu_c);
                let (_, pg_r) = lagrangian_pg(problem, &x_c, &lambda_r, &mu_r);
                let (lambda_c, mu_c, pg_c) = if pg_r < pg_c {
                    (lambda_r, mu_r, pg_r)
                } else {
                    (lambda_c, mu_c, pg_c)
                };
                let viol_c = constraint_violation(problem, &x_c);
                let kkt_c = pg_c / f_c.abs().max(1.0);
                let after = measure(kkt_c, viol_c);
                if first_try.is_none() {
                    first_try = Some((kkt_c, viol_c));
                }
                if after.is_finite() && after < 0.7 * before && viol_c <= feas_cap {
                    best = Some((x_c, lambda_c, mu_c, f_c, kkt_c, viol_c));
                    break;
                }
                // A full Newton step often trades a large optimality gain for
                // a small nonlinear feasibility loss; remember it so the next
                // round can restore feasibility from there.
                if relaxed.is_none()
                    && kkt_c.is_finite()
                    && kkt_c < 0.3 * kkt
                    && viol_c <= 1e-5
                {
                    relaxed = Some((x_c, lambda_c, mu_c, f_c, kkt_c, viol_c));
                }
                alpha *= 0.5;
            }
            let accepted = match best {
                Some(state) => {
                    watchdog = false;
                    Some(state)
                }
                None => {
                    if !watchdog {
                        if let Some(state) = relaxed {
                            watchdog = true;
                            Some(state)
                        } else {
                            None
                        }
                    } else {
                        None
                    }
                }
            };
            let Some((x_c, lambda_c, mu_c, f_c, kkt_c, viol_c)) = accepted else {
                if std::env::var_os("OPT_DEBUG").is_some() {
                    let (k1, v1) = first_try.unwrap_or((f64::NAN, f64::NAN));
                    eprintln!(
                        "polish ridge={ridge:.1e} no improving alpha (kkt={kkt:.2e} viol={feas:.2e}; alpha=1 kkt={k1:.2e} viol={v1:.2e})"
                    );
                }
                // An indefinite Hessian can defeat the raw Newton step; retry
                // with a stronger diagonal shift before giving up.
                if ridge < 1e-2 {
                    ridge *= 100.0;
                    continue;
                }
                break;
            };
            if std::env::var_os("OPT_DEBUG").is_some() {
                eprintln!(
                    "polish alpha={alpha:.3} ridge={ridge:.1e} watchdog={watchdog} kkt {kkt:.2e}->{kkt_c:.2e} viol {feas:.2e}->{viol_c:.2e}"
                );
            }
            x = x_c;
            lambda = lambda_c;
            mu = mu_c;
            f_val = f_c;
            kkt = kkt_c;
            feas = viol_c;
            ridge = 1e-10;
            if feas <= feas_cap && measure(kkt, feas) < measure(fallback.4, fallback.5) {
                fallback = (x.clone(), lambda.clone(), mu.clone(), f_val, kkt, feas);
            }
            if kkt <= opts.kkt_tol && feas <= opts.feas_tol {
                status = SolveStatus::Converged;
                break;
            }
        }
        // Never return a watchdog iterate that is less feasible than the
        // best state actually achieved.
        if feas > feas_cap || measure(kkt, feas) > measure(fallback.4, fallback.5) {
            (x, lambda, mu, f_val, kkt, feas) = fallback;
        }
    }

    NlpResult {
        x,
        f: f_val,
        lambda_eq: lambda,
        mu_ineq: mu,
        status,
        kkt_residual: kkt,
        feas_residual: feas,
        outer_iters: outer_done,
        inner_iters: total_inner,
    }
}

// Largest constraint violation at `x`.
fn constraint_violation(problem: &NlpProblem, x: &[f64]) -> f64 {
    let mut cg = vec![0.0; x.len()];
    let mut viol = 0.0f64;
    for c_fn in &problem.eq {
        viol = viol.max(c_fn(x, &mut cg).abs());
    }
    for g_fn in &problem.ineq {
        viol = viol.max(g_fn(x, &mut cg).max(0.0));
    }
    viol
}

/// Multiplier and complementarity report for a converged result.
pub fn multiplier_report(problem: &NlpProblem, result: &NlpResult) -> MultiplierReport {
    let n = result.x.len();
    let mut cg = vec![0.0; n];
    let complementarity = problem
        .ineq
        .iter()
        .zip(result.mu_ineq.iter())
        .map(|(g_fn, &mu)| (mu * g_fn(&result.x, &mut cg)).abs())
        .collect();
    MultiplierReport {
        lambda_eq: result.lambda_eq.clone(),
        mu_ineq: result.mu_ineq.clone(),
        complementarity,
    }
}

// One active-set Newton step on the KKT system: freeze the bound-active
// coordinates, linearize the active constraints, build a finite-difference
// Hessian of the Lagrangian over the free coordinates and solve
//   [H A'; A 0] [dx; m] = [-grad L; -c]
// for the step and fresh multipliers. Returns the stepped candidate, or
// `None` when no step can be formed.
fn newton_polish(
    problem: &NlpProblem,
    x: &[f64],
    lambda: &[f64],
    mu: &[f64],
    ridge: f64,
) -> Option<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let n = x.len();
    let n_eq = problem.eq.len();
    let mut cg = vec![0.0; n];
    let free: Vec<usize> = (0..n)
        .filter(|&i| {
            let span = (problem.upper[i] - problem.lower[i]).abs().max(1.0);
            x[i] - problem.lower[i] > 1e-9 * span && problem.upper[i] - x[i] > 1e-9 * span
        })
        .collect();
    let nf = free.len();
    if nf == 0 {
        return None;
    }
    // Active inequalities whose gradient actually acts on a free coordinate;
    // constraints living entirely on bound-frozen coordinates would insert
    // zero rows into the KKT matrix.
    let mut active: Vec<usize> = (0..problem.ineq.len())
        .filter(|&i| {
            let gv = (problem.ineq[i])(x, &mut cg);
            (mu[i] > 0.0 || gv >= -1e-9)
                && free.iter().any(|&j| cg[j].abs() > 1e-12)
        })
        .collect();

    // gradient of the Lagrangian, with the loop's multipliers held fixed
    let grad_l = |z: &[f64], out: &mut Vec<f64>, cg: &mut Vec<f64>, act: &[usize]| {
        (problem.objective)(z, out);
        for (j, c_fn) in problem.eq.iter().enumerate() {
            c_fn(z, cg);
            for (gi, ci) in out.iter_mut().zip(cg.iter()) {
                *gi += lambda[j] * ci;
            }
        }
        for &i in act {
            (problem.ineq[i])(z, cg);
            for (gi, ci) in out.iter_mut().zip(cg.iter()) {
                *gi += mu[i] * ci;
            }
        }
    };

    loop {
        let n_act = active.len();
        let m = nf + n_eq + n_act;
        let mut kkt = vec![vec![0.0f64; m + 1]; m];

        // finite-difference Hessian over the free coordinates
        let mut gp = vec![0.0; n];
        let mut gm = vec![0.0; n];
        for (col, &j) in free.iter().enumerate() {
            // Step relative to the coordinate span: a step keyed to |x| gets
            // too small near zero and the differenced gradients lose all
            // their significant digits.
            let span = (problem.upper[j] - problem.lower[j]).max(x[j].abs()).max(1e-6);
            let eps = 1e-7 * span;
            let mut zp = x.to_vec();
            zp[j] += eps;
            let mut zm = x.to_vec();
            zm[j] -= eps;
            grad_l(&zp, &mut gp, &mut cg, &active);
            if !gp.iter().all(|v| v.is_finite()) {
                return None;
            }
            grad_l(&zm, &mut gm, &mut cg, &active);
            if !gm.iter().all(|v| v.is_finite()) {
                return None;
            }
            for (row, &i) in free.iter().enumerate() {
                kkt[row][col] += 0.5 * (gp[i] - gm[i]) / (2.0 * eps);
                kkt[col][row] += 0.5 * (gp[i] - gm[i]) / (2.0 * eps);
            }
        }
        let diag_max = (0..nf).fold(0.0f64, |acc, i| acc.max(kkt[i][i].abs()));
        for i in 0..nf {
            kkt[i][i] += ridge * diag_max.max(1e-300);
        }
        // regularize the constraint block so linearly dependent active
        // constraints (duplicated interpolation rows) stay solvable
        for i in nf..m {
            kkt[i][i] -= 1e-12 * diag_max.max(1.0);
        }

        // constraint rows/columns and right-hand side
        let mut g0 = vec![0.0; n];
        grad_l(x, &mut g0, &mut cg, &active);
        for (row, &i) in free.iter().enumerate() {
            kkt[row][m] = -g0[i];
        }
        for (k, c_fn) in problem.eq.iter().enumerate() {
            let c = c_fn(x, &mut cg);
            for (col, &i) in free.iter().enumerate() {
                kkt[nf + k][col] = cg[i];
                kkt[col][nf + k] = cg[i];
            }
            kkt[nf + k][m] = -c;
        }
        for (k, &a) in active.iter().enumerate() {
            let g = (problem.ineq[a])(x, &mut cg);
            for (col, &i) in free.iter().enumerate() {
                kkt[nf + n_eq + k][col] = cg[i];
                kkt[col][nf + n_eq + k] = cg[i];
            }
            kkt[nf + n_eq + k][m] = -g;
        }

        let sol = lu_solve(&mut kkt)?;
        // multipliers of active inequalities must stay nonnegative; drop the
        // most negative one and re-solve
        let mut worst: Option<(usize, f64)> = None;
        for (k, &a) in active.iter().enumerate() {
            let mu_new = mu[a] + sol[nf + n_eq + k];
            if mu_new < 0.0 && worst.is_none_or(|(_, w)| mu_new < w) {
                worst = Some((a, mu_new));
            }
        }
        if let Some((a, _)) = worst {
            active.retain(|&i| i != a);
            continue;
        }

        let mut x_new = x.to_vec();
        for (col, &i) in free.iter().enumerate() {
            x_new[i] = (x[i] + sol[col]).clamp(problem.lower[i], problem.upper[i]);
        }
        let mut lambda_new = lambda.to_vec();
        for k in 0..n_eq {
            lambda_new[k] += sol[nf + k];
        }
        let mut mu_new = vec![0.0; problem.ineq.len()];
        for (k, &a) in active.iter().enumerate() {
            mu_new[a] = mu[a] + sol[nf + n_eq + k];
        }
        return Some((x_new, lambda_new, mu_new));
    }
}

// Solve the square augmented system `[A | b]` in place by Gaussian
// elimination with partial pivoting; `None` on a vanishing pivot.
fn lu_solve(a: &mut [Vec<f64>]) -> Option<Vec<f64>> {
    let m = a.len();
    for p in 0..m {
        let piv = (p..m).max_by(|&i, &j| a[i][p].abs().partial_cmp(&a[j][p].abs()).unwrap())?;
        a.swap(p, piv);
        let d = a[p][p];
        if d.abs() <= 1e-300 {
            return None;
        }
        for r in 0..m {
            if r == p {
                continue;
            }
            let fac = a[r][p] / d;
            if fac == 0.0 {
                continue;
            }
            for c in p..=m {
                a[r][c] -= fac * a[p][c];
            }
        }
    }
    Some((0..m).map(|i| a[i][m] / a[i][i]).collect())
}

// Objective value and projected-gradient norm of the Lagrangian at `x` for
// the given multipliers.
fn lagrangian_pg(problem: &NlpProblem, x: &[f64], lambda: &[f64], mu: &[f64]) -> (f64, f64) {
    let n = x.len();
    let mut grad_l = vec![0.0; n];
    let mut cg = vec![0.0; n];
    let f_val = (problem.objective)(x, &mut grad_l);
    for (j, c_fn) in problem.eq.iter().enumerate() {
        c_fn(x, &mut cg);
        for (gi, ci) in grad_l.iter_mut().zip(cg.iter()) {
            *gi += lambda[j] * ci;
        }
    }
    for (i, g_fn) in problem.ineq.iter().enumerate() {
        if mu[i] > 0.0 {
            g_fn(x, &mut cg);
            for (gi, ci) in grad_l.iter_mut().zip(cg.iter()) {
                *gi += mu[i] * ci;
            }
        }
    }
    let pg = projected_gradient_norm(x, &grad_l, &problem.lower, &problem.upper);
    (f_val, pg)
}

// Multiplier recovery: least-squares fit of the stationarity condition
// grad f + A' lambda + G' mu = 0 over the coordinates strictly inside the
// box, restricted to the active inequalities, with mu kept nonnegative by
// dropping columns whose fitted coefficient comes out negative.
fn least_squares_multipliers(
    problem: &NlpProblem,
    x: &[f64],
    mu_hint: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let n_eq = problem.eq.len();
    let n_ineq = problem.ineq.len();
    let mut g0 = vec![0.0; n];
    (problem.objective)(x, &mut g0);
    let mut cg = vec![0.0; n];
    let free: Vec<usize> = (0..n)
        .filter(|&i| {
            let span = (problem.upper[i] - problem.lower[i]).abs().max(1.0);
            x[i] - problem.lower[i] > 1e-10 * span && problem.upper[i] - x[i] > 1e-10 * span
        })
        .collect();
    let mut lambda = vec![0.0; n_eq];
    let mut mu = vec![0.0; n_ineq];
    if free.is_empty() {
        return (lambda, mu);
    }
    let rhs: Vec<f64> = free.iter().map(|&i| -g0[i]).collect();
    let mut eq_cols: Vec<Vec<f64>> = Vec::with_capacity(n_eq);
    for c_fn in &problem.eq {
        c_fn(x, &mut cg);
        eq_cols.push(free.iter().map(|&i| cg[i]).collect());
    }
    // constraints are formulated in O(1) scaled units, so a fixed activity
    // threshold is appropriate
    let mut active: Vec<usize> = (0..n_ineq)
        .filter(|&i| {
            let gv = (problem.ineq[i])(x, &mut cg);
            mu_hint[i] > 0.0 || gv >= -1e-6
        })
        .collect();
    let ineq_col = |i: usize, cg: &mut Vec<f64>| -> Vec<f64> {
        (problem.ineq[i])(x, cg);
        free.iter().map(|&j| cg[j]).collect()
    };
    loop {
        let m = n_eq + active.len();
        if m == 0 {
            return (lambda, mu);
        }
        let mut cols: Vec<Vec<f64>> = eq_cols.clone();
        for &i in &active {
            cols.push(ineq_col(i, &mut cg));
        }
        let coef = solve_normal_equations(&cols, &rhs);
        // enforce mu >= 0 by deactivating the most negative coefficient
        let mut worst: Option<(usize, f64)> = None;
        for (k, &i) in active.iter().enumerate() {
            let v = coef[n_eq + k];
            if v < 0.0 && worst.is_none_or(|(_, w)| v < w) {
                worst = Some((i, v));
            }
        }
        match worst {
            Some((i, _)) => active.retain(|&j| j != i),
            None => {
                lambda.copy_from_slice(&coef[..n_eq]);
                for (k, &i) in active.iter().enumerate() {
                    mu[i] = coef[n_eq + k];
                }
                return (lambda, mu);
            }
        }
    }
}

// Solve min ||rhs - sum coef_k cols_k||_2 via lightly regularized normal
// equations with Gaussian elimination; sufficient at the tiny sizes here.
fn solve_normal_equations(cols: &[Vec<f64>], rhs: &[f64]) -> Vec<f64> {
    let m = cols.len();
    let mut a = vec![vec![0.0f64; m + 1]; m];
    let mut diag_max = 0.0f64;
    for r in 0..m {
        for c in 0..m {
            a[r][c] = cols[r].iter().zip(cols[c].iter()).map(|(p, q)| p * q).sum();
        }
        a[r][m] = cols[r].iter().zip(rhs.iter()).map(|(p, q)| p * q).sum();
        diag_max = diag_max.max(a[r][r]);
    }
    let ridge = 1e-12 * diag_max.max(1e-300);
    for (r, row) in a.iter_mut().enumerate() {
        row[r] += ridge;
    }
    for p in 0..m {
        let piv = (p..m)
            .max_by(|&i, &j| a[i][p].abs().partial_cmp(&a[j][p].abs()).unwrap())
            .unwrap();
        a.swap(p, piv);
        let d = a[p][p];
        if d.abs() <= 1e-300 {
            continue;
        }
        for r in p + 1..m {
            let fac = a[r][p] / d;
            for c in p..=m {
                a[r][c] -= fac * a[p][c];
            }
        }
    }
    let mut coef = vec![0.0; m];
    for p in (0..m).rev() {
        let mut s = a[p][m];
        for c in p + 1..m {
            s -= a[p][c] * coef[c];
        }
        coef[p] = if a[p][p].abs() > 1e-300 { s / a[p][p] } else { 0.0 };
    }
    coef
}

// Alternating projection onto box and (linearized) equalities; the length
// closure is linear so a couple of sweeps land exactly on it.
fn repair_equalities(problem: &NlpProblem, x: &mut [f64]) {
    let n = x.len();
    let mut cg = vec![0.0; n];
    for _ in 0..10 {
        let mut worst = 0.0f64;
        for c_fn in &problem.eq {
            let c = c_fn(x, &mut cg);
            worst = worst.max(c.abs());
            let gg: f64 = cg.iter().map(|v| v * v).sum();
            if gg > 0.0 {
                let step = c / gg;
                for (xi, ci) in x.iter_mut().zip(cg.iter()) {
                    *xi -= step * ci;
                }
            }
        }
        project(x, &problem.lower, &problem.upper);
        if worst <= 1e-14 {
            break;
        }
    }
}

/// Projected L-BFGS with Armijo line search on the projected arc and a
/// projected-gradient fallback. Returns `(x, phi(x), iterations)`.
fn inner_minimize(
    phi: &dyn Fn(&[f64], &mut [f64]) -> f64,
    lower: &[f64],
    upper: &[f64],
    x0: &[f64],
    tol: f64,
    max_iter: usize,
) -> (Vec<f64>, f64, usize) {
    const MEM: usize = 10;
    const C1: f64 = 1e-4;
    let n = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, lower, upper);
    let mut g = vec![0.0; n];
    let mut f = phi(&x, &mut g);
    let mut s_mem: Vec<Vec<f64>> = Vec::new();
    let mut y_mem: Vec<Vec<f64>> = Vec::new();
    let mut bb_step = 1.0 / g.iter().fold(1.0f64, |m, &v| m.max(v.abs()));
    let mut iters = 0usize;
    // step scale of the gradient-norm polish, persisted across iterations so
    // stiff penalty directions only pay the halving search once
    let mut t_polish = 1.0f64;

    for _ in 0..max_iter {
        let scale = f.abs().max(1.0);
        let pg = projected_gradient_norm(&x, &g, lower, upper);
        if pg <= tol * scale {
            break;
        }
        iters += 1;

        // quasi-Newton direction via two-loop recursion
        let mut dir = two_loop(&g, &s_mem, &y_mem);
        for v in dir.iter_mut() {
            *v = -*v;
        }

        let mut accepted = false;
        let mut x_new = vec![0.0; n];
        let mut g_new = vec![0.0; n];
        let mut f_new = f;
        // Armijo on the projected arc x(t) = P(x + t dir)
        let mut t = 1.0;
        for _ in 0..25 {
            for i in 0..n {
                x_new[i] = (x[i] + t * dir[i]).clamp(lower[i], upper[i]);
            }
            let decrease: f64 = g
                .iter()
                .zip(x_new.iter().zip(x.iter()))
                .map(|(gi, (xn, xo))| gi * (xn - xo))
                .sum();
            if decrease > -1e-18 * scale {
                break; // direction not a descent direction after projection
            }
            f_new = phi(&x_new, &mut g_new);
            if f_new <= f + C1 * decrease {
                accepted = true;
                break;
            }
            t *= 0.5;
        }

        if !accepted {
            // fallback: backtracking projected gradient with a spectral step
            let mut t = bb_step.max(1e-16);
            for _ in 0..60 {
                for i in 0..n {
                    x_new[i] = (x[i] - t * g[i]).clamp(lower[i], upper[i]);
                }
                let decrease: f64 = g
                    .iter()
                    .zip(x_new.iter().zip(x.iter()))
                    .map(|(gi, (xn, xo))| gi * (xn - xo))
                    .sum();
                if decrease > -1e-18 * scale {
                    break;
                }
                f_new = phi(&x_new, &mut g_new);
                if f_new <= f + C1 * decrease {
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
        }

        if !accepted {
            // Near the optimum the Armijo decrease falls below one ulp of the
            // objective and the comparison is pure rounding noise. Accept a
            // quasi-Newton step anyway if it shrinks the projected gradient;
            // that polishes the iterate past the value-resolution floor.
            let mut t = t_polish;
            for _ in 0..60 {
                for i in 0..n {
                    x_new[i] = (x[i] + t * dir[i]).clamp(lower[i], upper[i]);
                }
                f_new = phi(&x_new, &mut g_new);
                let pg_new = projected_gradient_norm(&x_new, &g_new, lower, upper);
                if f_new.is_finite() && f_new <= f + 1e-12 * scale && pg_new < 0.99 * pg {
                    accepted = true;
                    t_polish = (t * 4.0).min(1.0);
                    break;
                }
                t *= 0.5;
                if t < 1e-18 {
                    break;
                }
            }
        }
        if !accepted {
            break; // no progress possible at working precision
        }

        // curvature pair update
        let s: Vec<f64> = x_new.iter().zip(x.iter()).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(g.iter()).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
        let ss: f64 = s.iter().map(|v| v * v).sum();
        let yy: f64 = y.iter().map(|v| v * v).sum();
        if sy > 1e-12 * ss.sqrt() * yy.sqrt() && sy.is_finite() {
            s_mem.push(s);
            y_mem.push(y);
            if s_mem.len() > MEM {
                s_mem.remove(0);
                y_mem.remove(0);
            }
            bb_step = (ss / sy).clamp(1e-16, 1e16);
        }
        x = x_new;
        g = g_new;
        f = f_new;
    }
    (x, f, iters)
}

fn two_loop(g: &[f64], s_mem: &[Vec<f64>], y_mem: &[Vec<f64>]) -> Vec<f64> {
    let mut q = g.to_vec();
    let m = s_mem.len();
    if m == 0 {
        let gmax = g.iter().fold(0.0f64, |acc, &v| acc.max(v.abs()));
        let scale = if gmax > 0.0 { 1.0 / gmax } else { 1.0 };
        for v in q.iter_mut() {
            *v *= scale;
        }
        return q;
    }
    let mut alpha = vec![0.0; m];
    let mut rho = vec![0.0; m];
    for k in (0..m).rev() {
        let sy: f64 = s_mem[k].iter().zip(y_mem[k].iter()).map(|(a, b)| a * b).sum();
        rho[k] = 1.0 / sy;
        alpha[k] = rho[k] * s_mem[k].iter().zip(q.iter()).map(|(a, b)| a * b).sum::<f64>();
        for (qi, yi) in q.iter_mut().zip(y_mem[k].iter()) {
            *qi -= alpha[k] * yi;
        }
    }
    // initial Hessian scaling
    let k = m - 1;
    let sy: f64 = s_mem[k].iter().zip(y_mem[k].iter()).map(|(a, b)| a * b).sum();
    let yy: f64 = y_mem[k].iter().map(|v| v * v).sum();
    let gamma = if yy > 0.0 { sy / yy } else { 1.0 };
    for v in q.iter_mut() {
        *v *= gamma;
    }
    for k in 0..m {
        let beta = rho[k] * y_mem[k].iter().zip(q.iter()).map(|(a, b)| a * b).sum::<f64>();
        for (qi, si) in q.iter_mut().zip(s_mem[k].iter()) {
            *qi += (alpha[k] - beta) * si;
        }
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;

    fn box_problem<'a>(
        x0: Vec<f64>,
        lower: Vec<f64>,
        upper: Vec<f64>,
        obj: ScalarFn<'a>,
    ) -> NlpProblem<'a> {
        NlpProblem {
            x0,
            lower,
            upper,
            objective: obj,
            eq: Vec::new(),
            ineq: Vec::new(),
            lambda0: None,
            mu0: None,
        }
    }

    #[test]
    fn quadratic_interior_minimum() {
        let target = [0.3, -0.2, 0.7];
        let p = box_problem(
            vec![0.0; 3],
            vec![-1.0; 3],
            vec![1.0; 3],
            Box::new(move |x, g| {
                let mut f = 0.0;
                for i in 0..3 {
                    let r = x[i] - target[i];
                    f += (i + 1) as f64 * r * r;
                    g[i] = 2.0 * (i + 1) as f64 * r;
                }
                f
            }),
        );
        let r = minimize(&p, &SolverOptions::default());
        assert_eq!(r.status, SolveStatus::Converged);
        for i in 0..3 {
            assert!((r.x[i] - target[i]).abs() < 1e-7, "{:?}", r.x);
        }
    }

    #[test]
    fn simplex_equality_symmetry() {
        // min sum x_i^2 s.t. sum x_i = 1, n = 4 -> x_i = 1/4
        let p = NlpProblem {
            x0: vec![0.9, 0.05, 0.03, 0.02],
            lower: vec![-10.0; 4],
            upper: vec![10.0; 4],
            objective: Box::new(|x, g| {
                let mut f = 0.0;
                for i in 0..4 {
                    f += x[i] * x[i];
                    g[i] = 2.0 * x[i];
                }
                f
            }),
            eq: vec![Box::new(|x: &[f64], g: &mut [f64]| {
                g.fill(1.0);
                x.iter().sum::<f64>() - 1.0
            })],
            ineq: Vec::new(),
            lambda0: None,
            mu0: None,
        };
        let r = minimize(&p, &SolverOptions::default());
        assert_eq!(r.status, SolveStatus::Converged);
        for &xi in &r.x {
            assert!((xi - 0.25).abs() < 1e-7, "{:?}", r.x);
        }
        // lambda for min x'x s.t. 1'x = 1 is -0.5 (stationarity: 2x + lambda = 0)
        assert!((r.lambda_eq[0] + 0.5).abs() < 1e-5);
        assert!(r.feas_residual <= 1e-10);
    }

    #[test]
    fn active_inequality_and_complementarity() {
        // min (x-2)^2 s.t. x <= 1 -> x = 1, mu = 2
        let p = NlpProblem {
            x0: vec![0.0],
            lower: vec![-10.0],
            upper: vec![10.0],
            objective: Box::new(|x, g| {
                g[0] = 2.0 * (x[0] - 2.0);
                (x[0] - 2.0) * (x[0] - 2.0)
            }),
            eq: Vec::new(),
            ineq: vec![Box::new(|x: &[f64], g: &mut [f64]| {
                g[0] = 1.0;
                x[0] - 1.0
            })],
            lambda0: None,
            mu0: None,
        };
        let r = minimize(&p, &SolverOptions::default());
        assert_eq!(r.status, SolveStatus::Converged);
        assert!((r.x[0] - 1.0).abs() < 1e-8);
        assert!((r.mu_ineq[0] - 2.0).abs() < 1e-4);
        let rep = multiplier_report(&p, &r);
        assert!(rep.complementarity[0] <= 1e-8);
    }

    #[test]
    fn inactive_inequality_has_zero_multiplier() {
        let p = NlpProblem {
            x0: vec![0.0],
            lower: vec![-10.0],
            upper: vec![10.0],
            objective: Box::new(|x, g| {
                g[0] = 2.0 * x[0];
                x[0] * x[0]
            }),
            ineq: vec![Box::new(|x: &[f64], g: &mut [f64]| {
                g[0] = 1.0;
                x[0] - 5.0
            })],
            eq: Vec::new(),
            lambda0: None,
            mu0: None,
        };
        let r = minimize(&p, &SolverOptions::default());
        assert_eq!(r.status, SolveStatus::Converged);
        assert!(r.mu_ineq[0].abs() <= 1e-10);
    }

    #[test]
    fn determinism_and_descent() {
        let make = || {
            NlpProblem {
                x0: vec![0.8, 0.1],
                lower: vec![0.0, 0.0],
                upper: vec![1.0, 1.0],
                objective: Box::new(|x, g| {
                    // Rosenbrock-ish, nonconvex
                    let a = x[1] - x[0] * x[0];
                    let b = 1.0 - x[0];
                    g[0] = -400.0 * a * x[0] - 2.0 * b;
                    g[1] = 200.0 * a;
                    100.0 * a * a + b * b
                }),
                eq: Vec::new(),
                ineq: Vec::new(),
                lambda0: None,
                mu0: None,
            }
        };
        let opts = SolverOptions::default();
        let r1 = minimize(&make(), &opts);
        let r2 = minimize(&make(), &opts);
        assert_eq!(r1.x, r2.x);
        assert_eq!(r1.inner_iters, r2.inner_iters);
        // descent relative to the warm start
        let mut g = vec![0.0; 2];
        let f0 = (make().objective)(&[0.8, 0.1], &mut g);
        assert!(r1.f <= f0 * (1.0 + 1e-12) + 1e-12);
    }

    #[test]
    fn nonsmooth_corner_objective() {
        // |x - 0.3| + x^2 has a corner minimum at x = 0.3 region; the
        // fallback step must still converge near the kink.
        let p = box_problem(
            vec![0.9],
            vec![0.0],
            vec![1.0],
            Box::new(|x, g| {
                let r = x[0] - 0.3;
                g[0] = r.signum() + 2.0 * x[0];
                r.abs() + x[0] * x[0]
            }),
        );
        let mut opts = SolverOptions::default();
        opts.kkt_tol = 1e-6;
        let r = minimize(&p, &opts);
        assert!((r.x[0] - 0.3).abs() < 1e-6, "{:?}", r.x);
    }
}
