//! Material parameters, model functions and scaling constants.
//!
//! Both regularizations share the same structure: a degradation function
//! `omega(d)` multiplying the elastic stiffness and a dissipation shape
//! `alpha(d)`, normalized by a constant `c` so that a fully developed damage
//! band dissipates exactly `Gc`. The phase-field variant carries a damage
//! gradient term (`r = 1`, `c = pi`); the lip-field variant carries none
//! (`r = 0`, `c = 1`) and relies on a Lipschitz bound instead.

use crate::{Error, Result};

/// Damage regularization variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    PhaseField,
    LipField,
}

impl ModelKind {
    /// Weight of the damage-gradient term in the potential.
    pub fn r(self) -> f64 {
        match self {
            ModelKind::PhaseField => 1.0,
            ModelKind::LipField => 0.0,
        }
    }

    /// Normalization constant of the dissipation term.
    pub fn c(self) -> f64 {
        match self {
            ModelKind::PhaseField => std::f64::consts::PI,
            ModelKind::LipField => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::PhaseField => "phase",
            ModelKind::LipField => "lip",
        }
    }

    /// Upper bound on `gamma` that keeps `omega` convex in `d`.
    pub fn gamma_convexity_bound(self) -> f64 {
        match self {
            ModelKind::PhaseField => 8.0 / (3.0 * std::f64::consts::PI),
            ModelKind::LipField => 0.5,
        }
    }
}

/// Bar geometry and material constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaterialParams {
    /// Bar length [m].
    pub length: f64,
    /// Regularization length [m].
    pub lc: f64,
    /// Young's modulus [Pa].
    pub e_modulus: f64,
    /// Fracture toughness [N/m].
    pub gc: f64,
    /// Critical tensile stress [Pa].
    pub sigc: f64,
}

impl MaterialParams {
    /// The reference data set used throughout the convergence studies.
    pub fn table1() -> Self {
        MaterialParams {
            length: 0.2,
            lc: 0.04,
            e_modulus: 3e10,
            gc: 120.0,
            sigc: 3e6,
        }
    }

    /// The short-bar data set of the five-element study.
    pub fn table2() -> Self {
        MaterialParams {
            length: 0.22,
            lc: 0.2,
            e_modulus: 3e10,
            gc: 120.0,
            sigc: 3e6,
        }
    }

    pub fn check(&self) -> Result<()> {
        let fields = [
            ("L", self.length),
            ("lc", self.lc),
            ("E", self.e_modulus),
            ("Gc", self.gc),
            ("sigc", self.sigc),
        ];
        for (name, v) in fields {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be strictly positive, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Derived scaling quantities.
    pub fn derive(&self) -> Result<DerivedParams> {
        self.check()?;
        let lch = self.e_modulus * self.gc / (self.sigc * self.sigc);
        Ok(DerivedParams {
            lch,
            gamma: self.lc / lch,
            wc: 2.0 * self.gc / self.sigc,
            uc: self.length * self.sigc / self.e_modulus,
        })
    }
}

/// Quantities derived from [`MaterialParams`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedParams {
    /// Characteristic material length `E Gc / sigc^2` [m].
    pub lch: f64,
    /// `lc / lch` [-].
    pub gamma: f64,
    /// Critical opening `2 Gc / sigc` [m].
    pub wc: f64,
    /// Damage-onset elongation `L sigc / E` [m].
    pub uc: f64,
}

impl DerivedParams {
    /// Whether `gamma` is inside the convexity range of `omega` for `model`.
    /// Out-of-range values are a warning, not an error: the five-element study
    /// deliberately sits at the lip bound `gamma = 1/2`.
    pub fn convexity_ok(&self, model: ModelKind) -> bool {
        self.gamma <= model.gamma_convexity_bound() + 1e-12
    }

    /// Bar-length validity report for `model`.
    pub fn validity(&self, model: ModelKind, params: &MaterialParams) -> ValidityReport {
        // Cohesive equivalence requires the damage band to fit in the bar;
        // the upper bound excludes snap-back.
        let (ratio, hi) = match model {
            ModelKind::PhaseField => (
                params.length / (std::f64::consts::PI * params.lc),
                2.0 / (std::f64::consts::PI * self.gamma),
            ),
            ModelKind::LipField => (params.length / params.lc, 2.0 / self.gamma),
        };
        ValidityReport {
            ratio,
            lower: 1.0,
            upper: hi,
            cohesive_ok: ratio >= 1.0 - 1e-12,
            no_snapback: ratio <= hi + 1e-12,
            gamma_convex: self.convexity_ok(model),
        }
    }
}

/// Outcome of the bar-length validity check.
#[derive(Debug, Clone, Copy)]
pub struct ValidityReport {
    /// `L / (pi lc)` for phase-field, `L / lc` for lip-field.
    pub ratio: f64,
    pub lower: f64,
    pub upper: f64,
    /// Damage band fits strictly inside the bar.
    pub cohesive_ok: bool,
    /// Bar short enough to exclude snap-back.
    pub no_snapback: bool,
    /// `gamma` within the convexity range (warning only).
    pub gamma_convex: bool,
}

impl ValidityReport {
    pub fn simulation_ok(&self) -> bool {
        self.cohesive_ok && self.no_snapback
    }
}

/// Degradation function `omega(d)`.
///
/// The endpoint `d = 1` returns exactly zero: the stiffness factor relies on
/// exact degeneracy there.
pub fn omega(model: ModelKind, d: f64, gamma: f64) -> Result<f64> {
    check_damage(d)?;
    if d == 1.0 {
        return Ok(0.0);
    }
    Ok(match model {
        ModelKind::PhaseField => {
            let q = (1.0 - d) * (1.0 - d);
            q / (q + 2.0 * alpha_raw(model, d) / (std::f64::consts::PI * gamma))
        }
        ModelKind::LipField => {
            let q = (1.0 - d * d) * (1.0 - d * d);
            q / (q + 2.0 * d / gamma)
        }
    })
}

/// `d omega / d d`. Zero at both endpoints for the lip variant and at `d = 1`
/// for the phase-field variant.
pub fn omega_prime(model: ModelKind, d: f64, gamma: f64) -> Result<f64> {
    check_damage(d)?;
    Ok(match model {
        ModelKind::PhaseField => {
            let k = 2.0 / (std::f64::consts::PI * gamma);
            let q = (1.0 - d) * (1.0 - d);
            let den = q + k * alpha_raw(model, d);
            -2.0 * k * (1.0 - d) / (den * den)
        }
        ModelKind::LipField => {
            let m = 2.0 / gamma;
            let q = (1.0 - d * d) * (1.0 - d * d);
            let den = q + m * d;
            -m * (1.0 - d * d) * (1.0 + 3.0 * d * d) / (den * den)
        }
    })
}

/// Dissipation shape `alpha(d)`.
pub fn alpha(model: ModelKind, d: f64) -> Result<f64> {
    check_damage(d)?;
    Ok(alpha_raw(model, d))
}

pub fn alpha_prime(model: ModelKind, d: f64) -> Result<f64> {
    check_damage(d)?;
    Ok(match model {
        ModelKind::PhaseField => 2.0 - 2.0 * d,
        ModelKind::LipField => 1.0,
    })
}

#[inline]
fn alpha_raw(model: ModelKind, d: f64) -> f64 {
    match model {
        ModelKind::PhaseField => 2.0 * d - d * d,
        ModelKind::LipField => d,
    }
}

fn check_damage(d: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&d) {
        return Err(Error::Domain(format!("damage {d} outside [0, 1]")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::integrate;

    const GAMMA: f64 = 0.1;

    #[test]
    fn derive_table1() {
        let p = MaterialParams::table1();
        let d = p.derive().unwrap();
        assert!((d.gamma - 0.1).abs() < 1e-14);
        assert!((d.lch - 0.4).abs() < 1e-14);
        assert!((d.wc - 8e-5).abs() < 1e-18);
        assert!((d.uc - 2e-5).abs() < 1e-18);
    }

    #[test]
    fn derive_identity_gamma() {
        let mut p = MaterialParams::table1();
        p.lc = 0.4; // lc = lch
        let d = p.derive().unwrap();
        assert!((d.gamma - 1.0).abs() < 1e-14);
        assert!(!d.convexity_ok(ModelKind::LipField));
    }

    #[test]
    fn derive_rejects_nonpositive() {
        let mut p = MaterialParams::table1();
        p.gc = 0.0;
        assert!(p.derive().is_err());
        p.gc = -1.0;
        assert!(p.derive().is_err());
    }

    #[test]
    fn omega_endpoints() {
        for model in [ModelKind::PhaseField, ModelKind::LipField] {
            assert_eq!(omega(model, 0.0, GAMMA).unwrap(), 1.0);
            assert_eq!(omega(model, 1.0, GAMMA).unwrap(), 0.0);
        }
    }

    #[test]
    fn omega_hand_values() {
        // 0.25 / (0.25 + 1.5/(0.1 pi))
        let w = omega(ModelKind::PhaseField, 0.5, GAMMA).unwrap();
        let expect = 0.25 / (0.25 + 1.5 / (0.1 * std::f64::consts::PI));
        assert!((w - expect).abs() < 1e-15);
        assert!((w - 0.049755).abs() < 1e-6);

        // 0.5625 / (0.5625 + 10)
        let w = omega(ModelKind::LipField, 0.5, GAMMA).unwrap();
        assert!((w - 0.5625 / 10.5625).abs() < 1e-15);
        assert!((w - 0.053254).abs() < 1e-6);
    }

    #[test]
    fn omega_domain_violation() {
        assert!(omega(ModelKind::PhaseField, -0.1, GAMMA).is_err());
        assert!(omega(ModelKind::LipField, 1.1, GAMMA).is_err());
    }

    #[test]
    fn alpha_values() {
        for model in [ModelKind::PhaseField, ModelKind::LipField] {
            assert_eq!(alpha(model, 0.0).unwrap(), 0.0);
            assert_eq!(alpha(model, 1.0).unwrap(), 1.0);
        }
        assert!((alpha(ModelKind::PhaseField, 0.5).unwrap() - 0.75).abs() < 1e-15);
        assert!((alpha(ModelKind::LipField, 0.25).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn omega_monotone_and_prime_consistent() {
        for model in [ModelKind::PhaseField, ModelKind::LipField] {
            let n = 2000;
            for j in 0..n {
                let d = j as f64 / n as f64;
                let dn = (j + 1) as f64 / n as f64;
                let w0 = omega(model, d, GAMMA).unwrap();
                let w1 = omega(model, dn, GAMMA).unwrap();
                let slope = (w1 - w0) / (dn - d);
                assert!(slope <= 1e-12, "{model:?} slope {slope} at d={d}");
                // finite-difference check of omega_prime at midpoint
                let mid = 0.5 * (d + dn);
                let wp = omega_prime(model, mid, GAMMA).unwrap();
                assert!(
                    (wp - slope).abs() <= 1e-4 * (1.0 + wp.abs()),
                    "{model:?} prime mismatch at {mid}: {wp} vs {slope}"
                );
            }
        }
    }

    #[test]
    fn omega_convex_for_gamma_table1() {
        for model in [ModelKind::PhaseField, ModelKind::LipField] {
            let n = 1000;
            let h = 1.0 / n as f64;
            for j in 1..n {
                let d = j as f64 * h;
                let w0 = omega(model, d - h, GAMMA).unwrap();
                let w1 = omega(model, d, GAMMA).unwrap();
                let w2 = omega(model, d + h, GAMMA).unwrap();
                assert!(w0 - 2.0 * w1 + w2 > 0.0, "{model:?} not convex at d={d}");
            }
        }
    }

    #[test]
    fn normalization_constants() {
        // 4 * int_0^1 sqrt(alpha_P) = pi, 2 * int_0^1 alpha_L = 1.
        let cp = 4.0
            * integrate(|d| (2.0 * d - d * d).sqrt(), 0.0, 1.0, 1e-10)
                .unwrap()
                .value;
        assert!((cp - std::f64::consts::PI).abs() < 1e-8);
        let cl = 2.0 * integrate(|d| d, 0.0, 1.0, 1e-13).unwrap().value;
        assert!((cl - 1.0).abs() < 1e-12);
    }

    #[test]
    fn validity_table1() {
        let p = MaterialParams::table1();
        let d = p.derive().unwrap();
        let pf = d.validity(ModelKind::PhaseField, &p);
        assert!((pf.ratio - 0.2 / (std::f64::consts::PI * 0.04)).abs() < 1e-12);
        assert!(pf.simulation_ok());
        let lip = d.validity(ModelKind::LipField, &p);
        assert!((lip.ratio - 5.0).abs() < 1e-12);
        assert!((lip.upper - 20.0).abs() < 1e-12);
        assert!(lip.simulation_ok());
    }

    #[test]
    fn validity_short_bar() {
        let mut p = MaterialParams::table1();
        p.length = 0.5 * std::f64::consts::PI * p.lc;
        let d = p.derive().unwrap();
        let rep = d.validity(ModelKind::PhaseField, &p);
        assert!(!rep.cohesive_ok);
        assert!(!rep.simulation_ok());
    }
}
