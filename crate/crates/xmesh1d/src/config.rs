//! Plain `key=value` run configuration.
//!
//! One pair per line, `#` starts a comment. Unknown keys are rejected with
//! their line number; semantic problems are collected and reported together.
//!
//! Keys and defaults:
//!
//! | key           | default  | meaning                                        |
//! |---------------|----------|------------------------------------------------|
//! | `model`       | `phase`  | `phase` or `lip`                               |
//! | `mesh`        | `fixed`  | `fixed` or `xmesh`                             |
//! | `nc`          | `5`      | elements per damage-band width                 |
//! | `L`           | `0.2`    | bar length [m]                                 |
//! | `lc`          | `0.04`   | regularization length [m]                      |
//! | `E`           | `3e10`   | Young's modulus [Pa]                           |
//! | `Gc`          | `120`    | fracture energy [N/m]                          |
//! | `sigc`        | `3e6`    | peak stress [Pa]                               |
//! | `steps`       | `200`    | number of load increments (including U = 0)    |
//! | `umax_factor` | `1.1`    | final elongation as a multiple of `w_c`        |
//! | `zoom`        | `off`    | `on`, `off`, or `lo,hi,extra` (multiples of `w_c`) |
//! | `out`         | unset    | output directory                               |
//! | `svg`         | `false`  | also emit SVG plots                            |
//! | `five_elem`   | `false`  | run the five-element study instead of the bar  |

use std::path::PathBuf;

use crate::model::MaterialParams;
use crate::quasistatic::MeshMode;
use crate::model::ModelKind;
use crate::{Error, Result};

/// Zoom window (multiples of `w_c`) with extra increments inserted inside.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZoomSpec {
    pub lo: f64,
    pub hi: f64,
    pub extra: usize,
}

impl ZoomSpec {
    /// Window used by the stress-drop studies.
    pub fn standard() -> Self {
        ZoomSpec {
            lo: 0.95,
            hi: 1.01,
            extra: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelKind,
    pub mode: MeshMode,
    pub n_c: usize,
    pub params: MaterialParams,
    pub steps: usize,
    pub umax_factor: f64,
    pub zoom: Option<ZoomSpec>,
    pub out_dir: Option<PathBuf>,
    pub emit_svg: bool,
    pub five_elem: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelKind::PhaseField,
            mode: MeshMode::Fixed,
            n_c: 5,
            params: MaterialParams::table1(),
            steps: 200,
            umax_factor: 1.1,
            zoom: None,
            out_dir: None,
            emit_svg: false,
            five_elem: false,
        }
    }
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let stripped = raw.split('#').next().unwrap_or("").trim();
        if stripped.is_empty() {
            continue;
        }
        let (key, value) = stripped.split_once('=').ok_or_else(|| Error::Config {
            line,
            msg: format!("expected key=value, got {stripped:?}"),
        })?;
        let (key, value) = (key.trim(), value.trim());
        let bad = |msg: String| Error::Config { line, msg };
        match key {
            "model" => {
                cfg.model = match value {
                    "phase" => ModelKind::PhaseField,
                    "lip" => ModelKind::LipField,
                    _ => return Err(bad(format!("model must be phase or lip, got {value:?}"))),
                }
            }
            "mesh" => {
                cfg.mode = match value {
                    "fixed" => MeshMode::Fixed,
                    "xmesh" => MeshMode::XMesh,
                    _ => return Err(bad(format!("mesh must be fixed or xmesh, got {value:?}"))),
                }
            }
            "nc" => cfg.n_c = parse_num(value, line, "nc")?,
            "steps" => cfg.steps = parse_num(value, line, "steps")?,
            "L" => cfg.params.length = parse_num(value, line, "L")?,
            "lc" => cfg.params.lc = parse_num(value, line, "lc")?,
            "E" => cfg.params.e_modulus = parse_num(value, line, "E")?,
            "Gc" => cfg.params.gc = parse_num(value, line, "Gc")?,
            "sigc" => cfg.params.sigc = parse_num(value, line, "sigc")?,
            "umax_factor" => cfg.umax_factor = parse_num(value, line, "umax_factor")?,
            "zoom" => {
                cfg.zoom = match value {
                    "off" => None,
                    "on" => Some(ZoomSpec::standard()),
                    spec => {
                        let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
                        if parts.len() != 3 {
                            return Err(bad(format!(
                                "zoom must be on, off or lo,hi,extra — got {value:?}"
                            )));
                        }
                        Some(ZoomSpec {
                            lo: parse_num(parts[0], line, "zoom lo")?,
                            hi: parse_num(parts[1], line, "zoom hi")?,
                            extra: parse_num(parts[2], line, "zoom extra")?,
                        })
                    }
                }
            }
            "out" => cfg.out_dir = Some(PathBuf::from(value)),
            "svg" => cfg.emit_svg = parse_bool(value, line, "svg")?,
            "five_elem" => cfg.five_elem = parse_bool(value, line, "five_elem")?,
            _ => {
                return Err(bad(format!("unknown key {key:?}")));
            }
        }
    }
    validate(&cfg)?;
    Ok(cfg)
}

fn parse_num<T: std::str::FromStr>(value: &str, line: usize, key: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config {
        line,
        msg: format!("cannot parse {key} value {value:?}"),
    })
}

fn parse_bool(value: &str, line: usize, key: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config {
            line,
            msg: format!("{key} must be true or false, got {value:?}"),
        }),
    }
}

// All semantic problems reported at once.
fn validate(cfg: &RunConfig) -> Result<()> {
    let mut problems = Vec::new();
    if cfg.n_c < 1 {
        problems.push("nc must be >= 1".to_string());
    }
    if cfg.steps < 2 {
        problems.push("steps must be >= 2".to_string());
    }
    if !(cfg.umax_factor > 0.0) {
        problems.push("umax_factor must be positive".to_string());
    }
    if let Some(z) = cfg.zoom {
        if !(z.hi > z.lo) || !(z.lo >= 0.0) {
            problems.push("zoom window must satisfy 0 <= lo < hi".to_string());
        }
    }
    match cfg.params.derive() {
        Err(e) => problems.push(e.to_string()),
        Ok(derived) => {
            if !cfg.five_elem {
                let validity = derived.validity(cfg.model, &cfg.params);
                if !validity.simulation_ok() {
                    problems.push(format!(
                        "bar length outside the cohesive-validity window: L ratio {} not in [{}, {}]",
                        validity.ratio, validity.lower, validity.upper
                    ));
                }
            }
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(problems.join("; ")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_all_defaults() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.n_c, 5);
        assert_eq!(cfg.steps, 200);
        assert_eq!(cfg.umax_factor, 1.1);
        assert_eq!(cfg.model, ModelKind::PhaseField);
        assert_eq!(cfg.mode, MeshMode::Fixed);
    }

    #[test]
    fn parses_keys_and_comments() {
        let cfg = parse_config("# comment\nmodel=lip\nmesh=xmesh\nnc=9 # trailing\n\nzoom=on\n")
            .unwrap();
        assert_eq!(cfg.model, ModelKind::LipField);
        assert_eq!(cfg.mode, MeshMode::XMesh);
        assert_eq!(cfg.n_c, 9);
        assert_eq!(cfg.zoom, Some(ZoomSpec::standard()));
        let cfg = parse_config("zoom=0.9,1.0,50").unwrap();
        assert_eq!(
            cfg.zoom,
            Some(ZoomSpec {
                lo: 0.9,
                hi: 1.0,
                extra: 50
            })
        );
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        let err = parse_config("model=phase\nwat=1\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        let err = parse_config("just words\n").unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
        let err = parse_config("nc=three\n").unwrap_err();
        assert!(err.to_string().contains("nc"), "{err}");
    }

    #[test]
    fn semantic_errors_are_exhaustive() {
        let err = parse_config("nc=0\nsteps=1\numax_factor=0\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("nc must be >= 1"), "{msg}");
        assert!(msg.contains("steps must be >= 2"), "{msg}");
        assert!(msg.contains("umax_factor must be positive"), "{msg}");
    }

    #[test]
    fn validity_window_enforced_for_bar_runs() {
        // a bar much shorter than the damage band cannot host the profile
        let err = parse_config("L=0.05\n").unwrap_err();
        assert!(err.to_string().contains("validity"), "{err}");
        // but the five-element study uses its own geometry
        let cfg = parse_config("L=0.22\nlc=0.2\nmodel=lip\nfive_elem=true\n").unwrap();
        assert!(cfg.five_elem);
    }
}
