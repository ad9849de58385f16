//! Artifact emission: deterministic CSV files, optional SVG line plots, and
//! side-by-side comparison of two completed runs.
//!
//! All floating-point values are written with 17 significant digits so that
//! repeated runs are byte-identical and round-trip exactly.

use std::fs;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::five_elem::FiveElemSetup;
use crate::potential::PotentialCtx;
use crate::quasistatic::{self, History, LoadSchedule, MeshMode, StepState};
use crate::{Error, Result};

/// Format one float with 17 significant digits.
pub fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

/// Run a configuration end to end and write its artifacts.
///
/// Returns the process exit code: 0 if every step converged, 2 otherwise.
/// The output directory resolves as: `XMESH1D_OUT` env var, then `out_override`,
/// then the config's `out` key, then `./xmesh1d-out`.
pub fn execute(cfg: &RunConfig, out_override: Option<&Path>) -> Result<i32> {
    let dir = resolve_out_dir(cfg, out_override);
    fs::create_dir_all(&dir)?;
    let mut written: Vec<PathBuf> = Vec::new();
    let result = execute_into(cfg, &dir, &mut written);
    if result.is_err() {
        for p in &written {
            let _ = fs::remove_file(p);
        }
    }
    result
}

fn resolve_out_dir(cfg: &RunConfig, out_override: Option<&Path>) -> PathBuf {
    if let Ok(env_dir) = std::env::var("XMESH1D_OUT") {
        if !env_dir.is_empty() {
            return PathBuf::from(env_dir);
        }
    }
    if let Some(p) = out_override {
        return p.to_path_buf();
    }
    cfg.out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("xmesh1d-out"))
}

fn execute_into(cfg: &RunConfig, dir: &Path, written: &mut Vec<PathBuf>) -> Result<i32> {
    if cfg.five_elem {
        write_stages(cfg, dir, written)?;
        return Ok(0);
    }
    let derived = cfg.params.derive()?;
    let mut schedule = LoadSchedule::uniform(cfg.umax_factor * derived.wc, cfg.steps)?;
    if let Some(z) = cfg.zoom {
        schedule = schedule.refine(z.lo * derived.wc, z.hi * derived.wc, z.extra);
    }
    let history = quasistatic::run(cfg.model, cfg.mode, cfg.params, cfg.n_c, &schedule)?;
    write_history(&history, cfg, dir, written)?;
    let all_converged = history.steps.iter().all(|s| s.converged);
    Ok(if all_converged { 0 } else { 2 })
}

pub fn write_history(
    history: &History,
    cfg: &RunConfig,
    dir: &Path,
    written: &mut Vec<PathBuf>,
) -> Result<()> {
    // steps.csv
    let mut steps_csv =
        String::from("step,U,sigma,d0,h0,K,Wd,err2,broken,solver_status,kkt_residual\n");
    for st in &history.steps {
        steps_csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            st.step,
            fmt(st.u),
            fmt(st.sigma),
            fmt(st.d[0]),
            fmt(st.h[0]),
            fmt(st.k),
            fmt(st.w_diss),
            fmt(st.err2),
            u8::from(st.broken),
            if st.converged { "converged" } else { "maxiter" },
            fmt(st.kkt_residual),
        ));
    }
    write_file(dir.join("steps.csv"), &steps_csv, written)?;

    // field snapshots at 10 evenly spaced steps
    let n_steps = history.steps.len();
    let mut snap_ids: Vec<usize> = (0..10).map(|i| i * (n_steps - 1) / 9).collect();
    snap_ids.dedup();
    for &k in &snap_ids {
        let st = &history.steps[k];
        if !st
            .constraints
            .feasible(history.params.length, 1e-6)
        {
            return Err(Error::Infeasible(format!(
                "step {k} field snapshot violates feasibility: max violation {:e}",
                st.constraints.max_violation()
            )));
        }
        write_file(
            dir.join(format!("fields_{k}.csv")),
            &fields_csv(st),
            written,
        )?;
    }

    // residuals.csv for xmesh runs
    if history.mode == MeshMode::XMesh {
        let ctx = PotentialCtx::new(history.model, history.params)?;
        let mut csv = String::from(
            "step,U,stress_law,hopti_max,pf_grad_max,lip_zero,lip_unit,lip_other,lambda,lambda_expected\n",
        );
        for st in &history.steps {
            let rep = quasistatic::xmesh_residuals(&ctx, st)?;
            csv.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                rep.step,
                fmt(rep.u),
                rep.stress_law.map(fmt).unwrap_or_else(|| "nan".into()),
                fmt(rep.hopti_max),
                fmt(rep.pf_grad_max),
                rep.lip_zero,
                rep.lip_unit,
                rep.lip_other,
                rep.lambda.map(fmt).unwrap_or_else(|| "nan".into()),
                fmt(rep.lambda_expected),
            ));
        }
        write_file(dir.join("residuals.csv"), &csv, written)?;
    }

    if cfg.emit_svg {
        write_svg_plots(history, dir, written)?;
    }
    Ok(())
}

// Full mirrored bar: nodes -x_n..-x_0, x_0..x_n with antisymmetric u.
fn fields_csv(st: &StepState) -> String {
    let mut csv = String::from("x,u,d\n");
    let n = st.x.len() - 1;
    for i in (0..=n).rev() {
        csv.push_str(&format!(
            "{},{},{}\n",
            fmt(-st.x[i]),
            fmt(-st.disp[i]),
            fmt(st.d[i])
        ));
    }
    for i in 0..=n {
        csv.push_str(&format!(
            "{},{},{}\n",
            fmt(st.x[i]),
            fmt(st.disp[i]),
            fmt(st.d[i])
        ));
    }
    csv
}

fn write_stages(cfg: &RunConfig, dir: &Path, written: &mut Vec<PathBuf>) -> Result<()> {
    let setup = FiveElemSetup::new(cfg.params)?;
    let wc = setup.derived.wc;
    let mut csv = String::from("U,stage,n_minima,d0_global,f_global\n");
    let sweeps = cfg.steps.max(2);
    for k in 0..sweeps {
        let u = 1.2 * wc * k as f64 / (sweeps - 1) as f64;
        let rep = setup.classify_stage(u, 2000)?;
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            fmt(u),
            rep.stage.label(),
            rep.minima.len(),
            fmt(rep.global.0),
            fmt(rep.global.1),
        ));
    }
    write_file(dir.join("stages.csv"), &csv, written)?;
    Ok(())
}

fn write_file(path: PathBuf, content: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    fs::write(&path, content)?;
    written.push(path);
    Ok(())
}

/// Comparison summary of two completed runs with identical load schedules.
#[derive(Debug, Clone)]
pub struct CompareReport {
    pub final_wd_a: f64,
    pub final_wd_b: f64,
    pub u_star_a: Option<f64>,
    pub u_star_b: Option<f64>,
    pub max_err2_gap: f64,
    pub max_sigma_gap: f64,
}

impl CompareReport {
    pub fn summary(&self) -> String {
        let star = |v: Option<f64>| v.map(fmt).unwrap_or_else(|| "never".into());
        format!(
            "final Wd A: {}\nfinal Wd B: {}\nbreak U* A: {}\nbreak U* B: {}\nmax |err2 A - err2 B|: {}\nmax |sigma A - sigma B|: {}\n",
            fmt(self.final_wd_a),
            fmt(self.final_wd_b),
            star(self.u_star_a),
            star(self.u_star_b),
            fmt(self.max_err2_gap),
            fmt(self.max_sigma_gap),
        )
    }
}

/// Merge two `steps.csv` series into `compare.csv` (written to `out_dir`) and
/// return the summary report.
pub fn compare(dir_a: &Path, dir_b: &Path, out_dir: &Path) -> Result<CompareReport> {
    let a = read_steps(&dir_a.join("steps.csv"))?;
    let b = read_steps(&dir_b.join("steps.csv"))?;
    if a.len() != b.len() {
        return Err(Error::ScheduleMismatch(format!(
            "run A has {} steps, run B has {}",
            a.len(),
            b.len()
        )));
    }
    let u_scale = a.last().map(|r| r.u.abs()).unwrap_or(1.0).max(1e-300);
    let mut csv = String::from("step,U,sigma_a,sigma_b,d0_a,d0_b,Wd_a,Wd_b,err2_a,err2_b\n");
    let mut max_err2_gap = 0.0f64;
    let mut max_sigma_gap = 0.0f64;
    for (ra, rb) in a.iter().zip(b.iter()) {
        if (ra.u - rb.u).abs() > 1e-12 * u_scale {
            return Err(Error::ScheduleMismatch(format!(
                "step {}: U = {} vs {}",
                ra.step, ra.u, rb.u
            )));
        }
        max_err2_gap = max_err2_gap.max((ra.err2 - rb.err2).abs());
        max_sigma_gap = max_sigma_gap.max((ra.sigma - rb.sigma).abs());
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            ra.step,
            fmt(ra.u),
            fmt(ra.sigma),
            fmt(rb.sigma),
            fmt(ra.d0),
            fmt(rb.d0),
            fmt(ra.wd),
            fmt(rb.wd),
            fmt(ra.err2),
            fmt(rb.err2),
        ));
    }
    let report = CompareReport {
        final_wd_a: a.last().map(|r| r.wd).unwrap_or(0.0),
        final_wd_b: b.last().map(|r| r.wd).unwrap_or(0.0),
        u_star_a: a.iter().find(|r| r.broken).map(|r| r.u),
        u_star_b: b.iter().find(|r| r.broken).map(|r| r.u),
        max_err2_gap,
        max_sigma_gap,
    };
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("compare.csv"), csv)?;
    fs::write(out_dir.join("compare_summary.txt"), report.summary())?;
    Ok(report)
}

struct StepsRow {
    step: usize,
    u: f64,
    sigma: f64,
    d0: f64,
    wd: f64,
    err2: f64,
    broken: bool,
}

fn read_steps(path: &Path) -> Result<Vec<StepsRow>> {
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() < 11 {
            return Err(Error::Config {
                line: idx + 1,
                msg: format!("steps.csv row has {} columns, expected 11", cols.len()),
            });
        }
        let num = |j: usize| -> Result<f64> {
            cols[j].parse().map_err(|_| Error::Config {
                line: idx + 1,
                msg: format!("bad number {:?}", cols[j]),
            })
        };
        rows.push(StepsRow {
            step: cols[0].parse().unwrap_or(idx - 1),
            u: num(1)?,
            sigma: num(2)?,
            d0: num(3)?,
            wd: num(6)?,
            err2: num(7)?,
            broken: cols[8] == "1",
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// SVG line plots

fn write_svg_plots(history: &History, dir: &Path, written: &mut Vec<PathBuf>) -> Result<()> {
    let us: Vec<f64> = history.steps.iter().map(|s| s.u).collect();
    let sigmas: Vec<f64> = history.steps.iter().map(|s| s.sigma).collect();
    let wds: Vec<f64> = history.steps.iter().map(|s| s.w_diss).collect();
    write_file(
        dir.join("sigma_vs_u.svg"),
        &line_plot("stress vs elongation", &[("sigma", &us, &sigmas)]),
        written,
    )?;
    write_file(
        dir.join("wd_vs_u.svg"),
        &line_plot("dissipated energy vs elongation", &[("Wd", &us, &wds)]),
        written,
    )?;
    if let Some(st) = history.steps.last() {
        let n = st.x.len();
        let mut x_full = Vec::with_capacity(2 * n);
        let mut d_full = Vec::with_capacity(2 * n);
        let mut u_full = Vec::with_capacity(2 * n);
        for i in (0..n).rev() {
            x_full.push(-st.x[i]);
            d_full.push(st.d[i]);
            u_full.push(-st.disp[i]);
        }
        for i in 0..n {
            x_full.push(st.x[i]);
            d_full.push(st.d[i]);
            u_full.push(st.disp[i]);
        }
        write_file(
            dir.join("damage_final.svg"),
            &line_plot("final damage field", &[("d", &x_full, &d_full)]),
            written,
        )?;
        write_file(
            dir.join("displacement_final.svg"),
            &line_plot("final displacement field", &[("u", &x_full, &u_full)]),
            written,
        )?;
    }
    Ok(())
}

/// Minimal polyline SVG: one fixed-size canvas, one polyline per series.
fn line_plot(title: &str, series: &[(&str, &[f64], &[f64])]) -> String {
    const W: f64 = 800.0;
    const H: f64 = 520.0;
    const M: f64 = 60.0;
    let mut xmin = f64::INFINITY;
    let mut xmax = f64::NEG_INFINITY;
    let mut ymin = f64::INFINITY;
    let mut ymax = f64::NEG_INFINITY;
    for (_, xs, ys) in series {
        for &x in *xs {
            xmin = xmin.min(x);
            xmax = xmax.max(x);
        }
        for &y in *ys {
            ymin = ymin.min(y);
            ymax = ymax.max(y);
        }
    }
    if !xmin.is_finite() || xmax <= xmin {
        xmax = xmin + 1.0;
    }
    if !ymin.is_finite() || ymax <= ymin {
        ymax = ymin + 1.0;
    }
    let sx = |x: f64| M + (x - xmin) / (xmax - xmin) * (W - 2.0 * M);
    let sy = |y: f64| H - M - (y - ymin) / (ymax - ymin) * (H - 2.0 * M);
    let palette = ["#1f6fb2", "#c23b22", "#3a7d44", "#7a4fa3"];
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" font-size=\"16\" text-anchor=\"middle\">{title}</text>\n\
         <line x1=\"{M}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{M}\" y1=\"{M}\" x2=\"{M}\" y2=\"{}\" stroke=\"black\"/>\n",
        W / 2.0,
        H - M,
        W - M,
        H - M,
        H - M,
    );
    svg.push_str(&format!(
        "<text x=\"{M}\" y=\"{}\" font-size=\"11\">{:.6e}</text>\n\
         <text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"end\">{:.6e}</text>\n\
         <text x=\"8\" y=\"{}\" font-size=\"11\">{:.6e}</text>\n\
         <text x=\"8\" y=\"{M}\" font-size=\"11\">{:.6e}</text>\n",
        H - M + 16.0,
        xmin,
        W - M,
        H - M + 16.0,
        xmax,
        H - M,
        ymin,
        ymax,
    ));
    for (si, (label, xs, ys)) in series.iter().enumerate() {
        let color = palette[si % palette.len()];
        let points: Vec<String> = xs
            .iter()
            .zip(ys.iter())
            .map(|(&x, &y)| format!("{:.3},{:.3}", sx(x), sy(y)))
            .collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n\
             <text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"{color}\">{label}</text>\n",
            points.join(" "),
            W - M + 4.0 - 40.0,
            M + 16.0 * (si as f64 + 1.0),
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fmt_has_17_significant_digits() {
        assert_eq!(fmt(1.0), "1.0000000000000000e0");
        assert_eq!(fmt(-0.25), "-2.5000000000000000e-1");
        // round-trips exactly
        let v = std::f64::consts::PI * 1e-5;
        assert_eq!(fmt(v).parse::<f64>().unwrap(), v);
    }

    #[test]
    fn line_plot_is_wellformed() {
        let xs = [0.0, 1.0, 2.0];
        let ys = [0.0, 1.0, 0.5];
        let svg = line_plot("test", &[("y", &xs, &ys)]);
        assert!(svg.starts_with("<svg"));
        assert!(svg.ends_with("</svg>\n"));
        assert!(svg.contains("polyline"));
    }

    #[test]
    fn compare_identical_runs_gives_zero_gaps() {
        let tmp = std::env::temp_dir().join(format!("xmesh1d-test-{}", std::process::id()));
        let a = tmp.join("a");
        let b = tmp.join("b");
        fs::create_dir_all(&a).unwrap();
        fs::create_dir_all(&b).unwrap();
        let csv = "step,U,sigma,d0,h0,K,Wd,err2,broken,solver_status,kkt_residual\n\
                   0,0.0,0.0,0.0,0.008,1.0,0.0,0.0,0,converged,0.0\n\
                   1,1e-5,1.5e6,0.0,0.008,1.0,0.0,0.0,0,converged,0.0\n";
        fs::write(a.join("steps.csv"), csv).unwrap();
        fs::write(b.join("steps.csv"), csv).unwrap();
        let rep = compare(&a, &b, &tmp).unwrap();
        assert_eq!(rep.max_err2_gap, 0.0);
        assert_eq!(rep.max_sigma_gap, 0.0);
        assert!(rep.u_star_a.is_none());
        assert!(tmp.join("compare.csv").exists());
        // mismatched lengths rejected
        let csv_short = "step,U,sigma,d0,h0,K,Wd,err2,broken,solver_status,kkt_residual\n\
                         0,0.0,0.0,0.0,0.008,1.0,0.0,0.0,0,converged,0.0\n";
        fs::write(b.join("steps.csv"), csv_short).unwrap();
        assert!(compare(&a, &b, &tmp).is_err());
        let _ = fs::remove_dir_all(&tmp);
    }
}
