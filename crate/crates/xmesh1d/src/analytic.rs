//! Closed-form and semi-analytical reference solutions.
//!
//! The lip-field profile and displacement are fully closed-form. The
//! phase-field profile is defined implicitly through the kernel
//! `H(d, d0)`; inverting it requires integrals with inverse-square-root
//! endpoint singularities, which are removed by substitution before the
//! adaptive quadrature runs (`d = d0 - s^2` at the band centre and
//! `2d - d^2 = t^2` at the band edge).

use crate::model::{self, DerivedParams, MaterialParams, ModelKind};
use crate::quad::integrate;
use crate::{Error, Result};

const QUAD_TOL: f64 = 1e-9;

/// Profile kernel `H(d, d0) = sqrt((2d - d^2)(1 - ((1-d0)/(1-d))^2))`.
pub fn h_kernel(d: f64, d0: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&d0) || !(0.0..=1.0).contains(&d) || d > d0 || d >= 1.0 {
        return Err(Error::Domain(format!(
            "h_kernel requires 0 <= d <= d0 <= 1 and d < 1, got d={d}, d0={d0}"
        )));
    }
    let ratio = (1.0 - d0) / (1.0 - d);
    let v = (2.0 * d - d * d) * (1.0 - ratio * ratio);
    Ok(v.max(0.0).sqrt())
}

/// Semi-analytical solution state for one model and parameter set.
#[derive(Debug, Clone, Copy)]
pub struct Analytic {
    pub model: ModelKind,
    pub params: MaterialParams,
    pub derived: DerivedParams,
}

impl Analytic {
    pub fn new(model: ModelKind, params: MaterialParams) -> Result<Self> {
        let derived = params.derive()?;
        Ok(Analytic {
            model,
            params,
            derived,
        })
    }

    /// Peak damage as a function of imposed elongation.
    pub fn d0_of_u(&self, u: f64) -> f64 {
        let (uc, wc) = (self.derived.uc, self.derived.wc);
        if u <= uc {
            0.0
        } else if u >= wc {
            1.0
        } else {
            let ramp = (u - uc) / (wc - uc);
            match self.model {
                ModelKind::PhaseField => ramp,
                ModelKind::LipField => ramp.sqrt(),
            }
        }
    }

    /// Inverse of [`Analytic::d0_of_u`] on the damaging branch.
    pub fn u_of_d0(&self, d0: f64) -> f64 {
        let (uc, wc) = (self.derived.uc, self.derived.wc);
        let ramp = match self.model {
            ModelKind::PhaseField => d0,
            ModelKind::LipField => d0 * d0,
        };
        uc + ramp * (wc - uc)
    }

    /// Uniform bar stress as a function of the peak damage.
    pub fn stress_of_d0(&self, d0: f64) -> f64 {
        match self.model {
            ModelKind::PhaseField => self.params.sigc * (1.0 - d0),
            ModelKind::LipField => self.params.sigc * (1.0 - d0 * d0),
        }
    }

    /// Linear cohesive traction at opening `w`.
    pub fn cohesive_law(&self, w: f64) -> f64 {
        self.params.sigc * (1.0 - w / self.derived.wc)
    }

    /// Half-width of the damage band.
    ///
    /// Phase-field yields `(pi/2) lc` independently of `d0`; lip-field yields
    /// the triangle half-support `d0 lc`.
    pub fn band_halfwidth(&self, d0: f64) -> Result<f64> {
        match self.model {
            ModelKind::LipField => Ok(d0 * self.params.lc),
            ModelKind::PhaseField => {
                if d0 >= 1.0 {
                    return Ok(0.5 * std::f64::consts::PI * self.params.lc);
                }
                Ok(self.params.lc * integral_to_peak(d0, 0.0, |_| 1.0)?)
            }
        }
    }

    /// Damage profile at position `x` (symmetric, zero outside the band).
    pub fn damage_profile(&self, d0: f64, x: f64) -> Result<f64> {
        let half = 0.5 * self.params.length;
        if x.abs() > half * (1.0 + 1e-12) {
            return Err(Error::Domain(format!("x = {x} outside the bar")));
        }
        let ax = x.abs();
        match self.model {
            ModelKind::LipField => Ok((d0 - ax / self.params.lc).max(0.0)),
            ModelKind::PhaseField => {
                if d0 == 0.0 {
                    return Ok(0.0);
                }
                if d0 >= 1.0 {
                    let arg = ax / self.params.lc;
                    return Ok(if arg >= 0.5 * std::f64::consts::PI {
                        0.0
                    } else {
                        1.0 - arg.sin()
                    });
                }
                let band = self.band_halfwidth(d0)?;
                if ax >= band {
                    return Ok(0.0);
                }
                self.invert_profile(d0, ax)
            }
        }
    }

    // Bisection on the monotone map d -> x(d) = lc * int_d^d0 1/H.
    fn invert_profile(&self, d0: f64, ax: f64) -> Result<f64> {
        let lc = self.params.lc;
        let x_of = |d: f64| -> Result<f64> { Ok(lc * integral_to_peak(d0, d, |_| 1.0)?) };
        let (mut lo, mut hi) = (0.0f64, d0);
        // x(lo) = band >= ax, x(hi) = 0 <= ax
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let xm = x_of(mid)?;
            if (xm - ax).abs() <= 1e-12 * lc || (hi - lo) < 1e-15 {
                return Ok(mid);
            }
            if xm > ax {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Displacement at position `x` for peak damage `d0` (antisymmetric).
    pub fn displacement_profile(&self, d0: f64, x: f64) -> Result<f64> {
        let half = 0.5 * self.params.length;
        if x.abs() > half * (1.0 + 1e-12) {
            return Err(Error::Domain(format!("x = {x} outside the bar")));
        }
        if x == 0.0 {
            return Ok(0.0);
        }
        let sign = x.signum();
        if d0 >= 1.0 {
            return Ok(sign * 0.5 * self.derived.wc);
        }
        let ax = x.abs();
        let p = &self.params;
        match self.model {
            ModelKind::LipField => {
                let gamma = self.derived.gamma;
                let fac = p.sigc * (1.0 - d0 * d0) / p.e_modulus;
                let dl = (d0 - ax / p.lc).max(0.0);
                let core = d0 - dl + (1.0 / gamma) * (1.0 / (1.0 - d0 * d0) - 1.0 / (1.0 - dl * dl));
                if ax <= d0 * p.lc {
                    Ok(sign * fac * p.lc * core)
                } else {
                    Ok(sign * fac * (p.lc * core + ax - d0 * p.lc))
                }
            }
            ModelKind::PhaseField => {
                if d0 == 0.0 {
                    // pure elastic branch has no meaning here without U; treat as zero state
                    return Ok(0.0);
                }
                let gamma = self.derived.gamma;
                let omega_inv = |d: f64| 1.0 / model::omega(ModelKind::PhaseField, d, gamma).unwrap();
                let band = self.band_halfwidth(d0)?;
                let fac = p.sigc * (1.0 - d0) / p.e_modulus;
                if ax >= band {
                    let j = integral_to_peak(d0, 0.0, omega_inv)?;
                    Ok(sign * fac * (p.lc * j + ax - band))
                } else {
                    let dpx = self.invert_profile(d0, ax)?;
                    let j = integral_to_peak(d0, dpx, omega_inv)?;
                    Ok(sign * fac * p.lc * j)
                }
            }
        }
    }
}

/// `int_a^d0 phi(d) / H(d, d0) dd` with both endpoint singularities removed
/// by substitution. Requires `0 <= a <= d0 < 1` and `d0 > 0`.
fn integral_to_peak(d0: f64, a: f64, phi: impl Fn(f64) -> f64) -> Result<f64> {
    if d0 <= 0.0 {
        return Ok(0.0);
    }
    if a >= d0 {
        return Ok(0.0);
    }
    let mid = 0.5 * (a + d0);
    // Lower part [a, mid]: substitute 2d - d^2 = t^2, i.e. d = 1 - sqrt(1 - t^2).
    // dd / H = dt / (sqrt(1 - t^2) * g(d)) with g(d) = sqrt(1 - ((1-d0)/(1-d))^2).
    let t_of = |d: f64| (2.0 * d - d * d).max(0.0).sqrt();
    let lower = integrate(
        |t| {
            let d = 1.0 - (1.0 - t * t).max(0.0).sqrt();
            let ratio = (1.0 - d0) / (1.0 - d);
            let g = (1.0 - ratio * ratio).max(1e-300).sqrt();
            phi(d) / ((1.0 - t * t).max(1e-300).sqrt() * g)
        },
        t_of(a),
        t_of(mid),
        QUAD_TOL,
    )?;
    // Upper part [mid, d0]: substitute d = d0 - s^2.
    // dd / H = 2 (1-d) / sqrt(alpha(d) (2 - d - d0)) ds.
    let upper = integrate(
        |s| {
            let d = d0 - s * s;
            let alpha = (2.0 * d - d * d).max(1e-300);
            2.0 * (1.0 - d) * phi(d) / (alpha * (2.0 - d - d0).max(1e-300)).sqrt()
        },
        0.0,
        (d0 - mid).sqrt(),
        QUAD_TOL,
    )?;
    Ok(lower.value + upper.value)
}

/// Tabulated phase-field profile for fast repeated evaluation.
///
/// Builds cumulative tables of `x(d)` and the displacement integral once per
/// `(model, d0)` pair; the quasi-static loop queries it at every element
/// midpoint of every step.
pub struct ProfileCache {
    analytic: Analytic,
    d0: f64,
    /// Damage grid, increasing from 0 to d0.
    d_grid: Vec<f64>,
    /// x positions, decreasing from the band half-width to 0 (same index as d_grid).
    x_grid: Vec<f64>,
    /// Displacement integral int_d^d0 1/(H omega), same indexing.
    i_grid: Vec<f64>,
    band: f64,
    /// Total displacement integral over the whole band.
    i_total: f64,
}

impl ProfileCache {
    pub fn new(analytic: Analytic, d0: f64) -> Result<Self> {
        let mut cache = ProfileCache {
            analytic,
            d0,
            d_grid: Vec::new(),
            x_grid: Vec::new(),
            i_grid: Vec::new(),
            band: 0.0,
            i_total: 0.0,
        };
        if analytic.model == ModelKind::PhaseField && d0 > 0.0 && d0 < 1.0 {
            cache.build_tables()?;
        } else if analytic.model == ModelKind::PhaseField {
            cache.band = analytic.band_halfwidth(d0.min(1.0))?;
        } else {
            cache.band = d0 * analytic.params.lc;
        }
        Ok(cache)
    }

    fn build_tables(&mut self) -> Result<()> {
        const M: usize = 2000;
        let d0 = self.d0;
        let gamma = self.analytic.derived.gamma;
        let lc = self.analytic.params.lc;
        let omega_inv = |d: f64| 1.0 / model::omega(ModelKind::PhaseField, d, gamma).unwrap();
        // Cosine-clustered grid: dense near both singular endpoints.
        let mut d_grid = Vec::with_capacity(M + 1);
        for j in 0..=M {
            let theta = std::f64::consts::PI * j as f64 / M as f64;
            d_grid.push(d0 * 0.5 * (1.0 - theta.cos()));
        }
        let mut x_grid = vec![0.0; M + 1];
        let mut i_grid = vec![0.0; M + 1];
        // Accumulate from the peak downwards.
        for j in (0..M).rev() {
            let seg_x = segment_integral(d0, d_grid[j], d_grid[j + 1], |_| 1.0)?;
            let seg_i = segment_integral(d0, d_grid[j], d_grid[j + 1], omega_inv)?;
            x_grid[j] = x_grid[j + 1] + lc * seg_x;
            i_grid[j] = i_grid[j + 1] + seg_i;
        }
        self.band = x_grid[0];
        self.i_total = i_grid[0];
        self.d_grid = d_grid;
        self.x_grid = x_grid;
        self.i_grid = i_grid;
        Ok(())
    }

    pub fn band_halfwidth(&self) -> f64 {
        self.band
    }

    /// Damage at position `x`.
    pub fn damage_at(&self, x: f64) -> f64 {
        let ax = x.abs();
        match self.analytic.model {
            ModelKind::LipField => (self.d0 - ax / self.analytic.params.lc).max(0.0),
            ModelKind::PhaseField => {
                if self.d0 >= 1.0 {
                    let arg = ax / self.analytic.params.lc;
                    if arg >= 0.5 * std::f64::consts::PI {
                        0.0
                    } else {
                        1.0 - arg.sin()
                    }
                } else if self.d0 == 0.0 || ax >= self.band {
                    0.0
                } else {
                    self.lookup(ax).0
                }
            }
        }
    }

    /// Displacement at position `x`, given the elongation `u_total` imposed at
    /// the bar ends (used only for the fully broken state).
    pub fn displacement_at(&self, x: f64, u_total: f64) -> f64 {
        if x == 0.0 {
            return 0.0;
        }
        let sign = x.signum();
        let ax = x.abs();
        let a = &self.analytic;
        if self.d0 >= 1.0 {
            // Broken branch: rigid halves carried apart by the imposed elongation.
            return sign * 0.5 * u_total.max(a.derived.wc);
        }
        match a.model {
            ModelKind::LipField => a.displacement_profile(self.d0, x).unwrap_or(0.0),
            ModelKind::PhaseField => {
                if self.d0 == 0.0 {
                    return sign * 0.5 * u_total * (ax / (0.5 * a.params.length));
                }
                let fac = a.params.sigc * (1.0 - self.d0) / a.params.e_modulus;
                if ax >= self.band {
                    sign * fac * (a.params.lc * self.i_total + ax - self.band)
                } else {
                    let (_, i_val) = self.lookup(ax);
                    sign * fac * a.params.lc * i_val
                }
            }
        }
    }

    // Locate |x| in the decreasing x_grid; linear interpolation of d and I.
    fn lookup(&self, ax: f64) -> (f64, f64) {
        let xg = &self.x_grid;
        let m = xg.len() - 1;
        if ax >= xg[0] {
            return (self.d_grid[0], self.i_grid[0]);
        }
        let (mut lo, mut hi) = (0usize, m);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if xg[mid] > ax {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let w = if xg[lo] == xg[hi] {
            0.0
        } else {
            (xg[lo] - ax) / (xg[lo] - xg[hi])
        };
        (
            self.d_grid[lo] + w * (self.d_grid[hi] - self.d_grid[lo]),
            self.i_grid[lo] + w * (self.i_grid[hi] - self.i_grid[lo]),
        )
    }
}

/// Segment integral `int_a^b phi/H dd` for `0 <= a < b <= d0`, picking the
/// substitution that matches which endpoint (if any) is singular.
fn segment_integral(d0: f64, a: f64, b: f64, phi: impl Fn(f64) -> f64) -> Result<f64> {
    if b >= d0 * (1.0 - 1e-15) {
        return integral_to_peak(d0, a, phi);
    }
    // No upper singularity: the band-edge substitution alone is uniformly valid.
    let t_of = |d: f64| (2.0 * d - d * d).max(0.0).sqrt();
    Ok(integrate(
        |t| {
            let d = 1.0 - (1.0 - t * t).max(0.0).sqrt();
            let ratio = (1.0 - d0) / (1.0 - d);
            let g = (1.0 - ratio * ratio).max(1e-300).sqrt();
            phi(d) / ((1.0 - t * t).max(1e-300).sqrt() * g)
        },
        t_of(a),
        t_of(b),
        QUAD_TOL,
    )?
    .value)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pf() -> Analytic {
        Analytic::new(ModelKind::PhaseField, MaterialParams::table1()).unwrap()
    }

    fn lip() -> Analytic {
        Analytic::new(ModelKind::LipField, MaterialParams::table1()).unwrap()
    }

    #[test]
    fn d0_of_u_branches() {
        for a in [pf(), lip()] {
            assert_eq!(a.d0_of_u(a.derived.uc), 0.0);
            assert_eq!(a.d0_of_u(a.derived.wc), 1.0);
            assert_eq!(a.d0_of_u(0.0), 0.0);
            assert_eq!(a.d0_of_u(2.0 * a.derived.wc), 1.0);
        }
        let mid = 0.5 * (pf().derived.uc + pf().derived.wc);
        assert!((pf().d0_of_u(mid) - 0.5).abs() < 1e-14);
        assert!((lip().d0_of_u(mid) - 0.5f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn stress_of_d0_values() {
        let sigc = 3e6;
        assert_eq!(pf().stress_of_d0(0.0), sigc);
        assert_eq!(pf().stress_of_d0(1.0), 0.0);
        assert!((pf().stress_of_d0(0.5) - 0.5 * sigc).abs() < 1e-9);
        assert!((lip().stress_of_d0(0.5) - 0.75 * sigc).abs() < 1e-9);
    }

    #[test]
    fn stress_monotone_in_u() {
        for a in [pf(), lip()] {
            let mut prev = f64::INFINITY;
            for j in 0..=600 {
                let u = 1.5 * a.derived.wc * j as f64 / 600.0;
                let s = a.stress_of_d0(a.d0_of_u(u));
                assert!(s <= prev + 1e-9);
                prev = s;
            }
        }
    }

    #[test]
    fn h_kernel_values() {
        assert_eq!(h_kernel(0.0, 0.5).unwrap(), 0.0);
        assert!(h_kernel(0.5, 0.5).unwrap().abs() < 1e-12);
        assert!((h_kernel(0.5, 0.75).unwrap() - 0.75).abs() < 1e-12);
        assert!(h_kernel(0.8, 0.5).is_err());
    }

    #[test]
    fn band_width_independent_of_d0() {
        let a = pf();
        let expect = 0.5 * std::f64::consts::PI * a.params.lc;
        for d0 in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let band = a.band_halfwidth(d0).unwrap();
            assert!(
                (band - expect).abs() <= 1e-6 * a.params.lc,
                "d0={d0}: band={band}, expect={expect}"
            );
        }
        // lip triangle support
        let l = lip();
        assert!((l.band_halfwidth(1.0).unwrap() - l.params.lc).abs() < 1e-15);
        assert!((l.band_halfwidth(0.25).unwrap() - 0.25 * l.params.lc).abs() < 1e-15);
    }

    #[test]
    fn damage_profile_values() {
        let a = pf();
        // closed form at d0 = 1
        let d = a.damage_profile(1.0, 0.5 * a.params.lc).unwrap();
        assert!((d - (1.0 - 0.5f64.sin())).abs() < 1e-12);
        // peak by symmetry
        assert!((a.damage_profile(0.7, 0.0).unwrap() - 0.7).abs() < 1e-9);
        let l = lip();
        assert!((l.damage_profile(0.6, 0.3 * l.params.lc).unwrap() - 0.3).abs() < 1e-14);
        assert!((l.damage_profile(0.6, 0.0).unwrap() - 0.6).abs() < 1e-14);
    }

    #[test]
    fn profile_inversion_round_trip() {
        let a = pf();
        for d0 in [0.3, 0.7, 0.99] {
            let band = a.band_halfwidth(d0).unwrap();
            for frac in [0.15, 0.45, 0.85] {
                let x = frac * band;
                let d = a.damage_profile(d0, x).unwrap();
                // forward map x(d)
                let x_back = a.params.lc * super::integral_to_peak(d0, d, |_| 1.0).unwrap();
                assert!(
                    (x_back - x).abs() <= 1e-8 * a.params.lc,
                    "d0={d0}, x={x}: back={x_back}"
                );
            }
        }
    }

    #[test]
    fn displacement_consistency_with_elongation() {
        // 2 u(L/2) must reproduce the elongation implied by d0.
        for a in [pf(), lip()] {
            for d0 in [0.1, 0.3, 0.5, 0.7, 0.9] {
                let u_expect = a.u_of_d0(d0);
                let u_edge = a.displacement_profile(d0, 0.5 * a.params.length).unwrap();
                assert!(
                    (2.0 * u_edge - u_expect).abs() <= 1e-8 * u_expect,
                    "{:?} d0={d0}: 2u(L/2)={}, U={}",
                    a.model,
                    2.0 * u_edge,
                    u_expect
                );
            }
        }
    }

    #[test]
    fn displacement_step_when_broken() {
        for a in [pf(), lip()] {
            let x = 1e-6 * a.params.length;
            assert_eq!(a.displacement_profile(1.0, x).unwrap(), 0.5 * a.derived.wc);
            assert_eq!(a.displacement_profile(1.0, -x).unwrap(), -0.5 * a.derived.wc);
            assert_eq!(a.displacement_profile(1.0, 0.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn lip_displacement_joins_outer_branch() {
        let a = lip();
        for d0 in [0.2, 0.5, 0.8] {
            let xb = d0 * a.params.lc;
            let inner = a.displacement_profile(d0, xb * (1.0 - 1e-12)).unwrap();
            let outer = a.displacement_profile(d0, xb * (1.0 + 1e-12)).unwrap();
            assert!((inner - outer).abs() <= 1e-10 * a.derived.wc);
        }
    }

    #[test]
    fn cohesive_triangle_area_is_gc() {
        let a = pf();
        // closed form: sigc * wc / 2
        let area = 0.5 * a.params.sigc * a.derived.wc;
        assert!((area - a.params.gc).abs() <= 1e-12 * a.params.gc);
        assert_eq!(a.cohesive_law(0.0), a.params.sigc);
        assert!(a.cohesive_law(a.derived.wc).abs() < 1e-9);
    }

    #[test]
    fn cache_matches_direct_evaluation() {
        let a = pf();
        let cache = ProfileCache::new(a, 0.6).unwrap();
        for frac in [0.0, 0.2, 0.6, 0.95, 1.3] {
            let x = frac * cache.band_halfwidth();
            let direct = a.damage_profile(0.6, x).unwrap();
            assert!(
                (cache.damage_at(x) - direct).abs() < 1e-6,
                "x={x}: cache={} direct={direct}",
                cache.damage_at(x)
            );
            let du = a.displacement_profile(0.6, x.max(1e-12)).unwrap();
            assert!((cache.displacement_at(x.max(1e-12), 0.0) - du).abs() < 1e-6 * a.derived.wc);
        }
    }
}
