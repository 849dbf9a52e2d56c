//! Experiment configuration: versioned JSON with unknown keys rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::crossing::TransferConvention;
use crate::error::{Error, Result};
use crate::gaussian::{PolyGaussian, SiegelMatrix};
use crate::linalg::{c64, CMat};
use crate::models::{
    make_bloch, make_scalar, make_scalar_separable, make_schrodinger, make_two_level, FdControls, ModelSpec,
    ScalarField,
};
use crate::poly::Poly;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    /// Closed-form transfer against direct quadrature on random parameters.
    Transfer,
    /// Fourier intertwining of the transfer operator.
    Fourier,
    /// Symplecticity, Siegel cone and parallel transport along trajectories.
    Invariants,
    /// Gapped model: adiabatic wave packet against the grid oracle.
    Adiabatic,
    /// Codimension-one crossing: two-branch solution against the grid oracle.
    Crossing,
    /// Second-order expansion of the composed phase at the crossing.
    PhaseExpansion,
    /// Herman–Kluk propagation against the oracle or the exact thawed packet.
    HermanKluk,
    /// Unitarity and time-step self-convergence of the grid oracle.
    Oracle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "family", rename_all = "snake_case")]
pub enum ModelConfig {
    Schrodinger {
        d: usize,
        kinetic: String,
        w: String,
        g: String,
        u: [String; 3],
        #[serde(default)]
        fd: Option<FdConfig>,
    },
    Bloch {
        d: usize,
        a0: String,
        g: String,
        u: [String; 3],
        w: String,
        #[serde(default)]
        fd: Option<FdConfig>,
    },
    TwoLevel {
        d: usize,
        v: String,
        f: String,
        u: [String; 3],
        #[serde(default)]
        fd: Option<FdConfig>,
    },
    Scalar {
        d: usize,
        h: String,
        #[serde(default)]
        fd: Option<FdConfig>,
    },
    ScalarSeparable {
        d: usize,
        kinetic: String,
        potential: String,
        #[serde(default)]
        fd: Option<FdConfig>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FdConfig {
    pub step: f64,
    #[serde(default = "yes")]
    pub richardson: bool,
}

fn yes() -> bool {
    true
}

fn field(key: &str, s: &str) -> Result<ScalarField> {
    ScalarField::parse(s).map_err(|e| Error::Config { key: key.into(), message: e.to_string() })
}

fn fields3(key: &str, u: &[String; 3]) -> Result<[ScalarField; 3]> {
    Ok([field(&format!("{key}[0]"), &u[0])?, field(&format!("{key}[1]"), &u[1])?, field(&format!("{key}[2]"), &u[2])?])
}

impl ModelConfig {
    pub fn build(&self) -> Result<ModelSpec> {
        let wrap = |r: Result<ModelSpec>| r.map_err(|e| Error::Config { key: "model".into(), message: e.to_string() });
        let (m, fd) = match self {
            ModelConfig::Schrodinger { d, kinetic, w, g, u, fd } => (
                wrap(make_schrodinger(
                    *d,
                    field("model.kinetic", kinetic)?,
                    field("model.w", w)?,
                    field("model.g", g)?,
                    fields3("model.u", u)?,
                ))?,
                fd,
            ),
            ModelConfig::Bloch { d, a0, g, u, w, fd } => (
                wrap(make_bloch(
                    *d,
                    field("model.a0", a0)?,
                    field("model.g", g)?,
                    fields3("model.u", u)?,
                    field("model.w", w)?,
                ))?,
                fd,
            ),
            ModelConfig::TwoLevel { d, v, f, u, fd } => (
                wrap(make_two_level(*d, field("model.v", v)?, field("model.f", f)?, fields3("model.u", u)?))?,
                fd,
            ),
            ModelConfig::Scalar { d, h, fd } => (wrap(make_scalar(*d, field("model.h", h)?))?, fd),
            ModelConfig::ScalarSeparable { d, kinetic, potential, fd } => (
                wrap(make_scalar_separable(*d, field("model.kinetic", kinetic)?, field("model.potential", potential)?))?,
                fd,
            ),
        };
        Ok(match fd {
            Some(c) => {
                if !(c.step > 0.0) {
                    return Err(Error::Config { key: "model.fd.step".into(), message: "must be positive".into() });
                }
                let base = m.fd;
                m.with_fd(FdControls { step: c.step, richardson: c.richardson, ..base })
            }
            None => m,
        })
    }

    pub fn d(&self) -> usize {
        match self {
            ModelConfig::Schrodinger { d, .. }
            | ModelConfig::Bloch { d, .. }
            | ModelConfig::TwoLevel { d, .. }
            | ModelConfig::Scalar { d, .. }
            | ModelConfig::ScalarSeparable { d, .. } => *d,
        }
    }
}

/// Initial packet `WP_{z0}(P e^{i gamma y.y/2})` on `band`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub z0: Vec<f64>,
    /// Row-major `(re, im)` entries of the width.
    pub gamma: Vec<[f64; 2]>,
    /// Terms `[exponents, re, im]` of the polynomial prefactor; empty means 1.
    #[serde(default)]
    pub poly: Vec<(Vec<u32>, f64, f64)>,
    #[serde(default = "one")]
    pub band: usize,
    #[serde(default)]
    pub degree_cap: Option<usize>,
}

fn one() -> usize {
    1
}

impl InitialConfig {
    pub fn profile(&self, d: usize) -> Result<PolyGaussian> {
        let bad = |k: &str, m: &str| Error::Config { key: format!("initial.{k}"), message: m.into() };
        if self.z0.len() != 2 * d {
            return Err(bad("z0", "needs 2d entries"));
        }
        if self.gamma.len() != d * d {
            return Err(bad("gamma", "needs d*d complex entries"));
        }
        let m = CMat::from_row_iterator(d, d, self.gamma.iter().map(|[re, im]| c64(*re, *im)));
        let width = SiegelMatrix::new(m).map_err(|e| bad("gamma", &e.to_string()))?;
        let g = if self.poly.is_empty() {
            PolyGaussian::unit(width)
        } else {
            let mut p = Poly::zero(d);
            for (exps, re, im) in &self.poly {
                if exps.len() != d {
                    return Err(bad("poly", "exponent vectors need d entries"));
                }
                p.add_term(exps.clone(), c64(*re, *im));
            }
            let g = PolyGaussian::new(width, c64(1.0, 0.0), p).map_err(|e| bad("poly", &e.to_string()))?;
            let n = g.norm();
            if !(n > 0.0) {
                return Err(bad("poly", "profile has zero norm"));
            }
            g.scaled(c64(1.0 / n, 0.0))
        };
        Ok(match self.degree_cap {
            Some(cap) => g.with_cap(cap).map_err(|e| bad("degree_cap", &e.to_string()))?,
            None => g,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    #[serde(default)]
    pub t0: f64,
    /// Final time; for crossing studies, `after_crossing` may be given instead.
    #[serde(default)]
    pub t_end: Option<f64>,
    #[serde(default)]
    pub after_crossing: Option<f64>,
    #[serde(default)]
    pub sample_times: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SemiclassicalConfig {
    #[serde(default)]
    pub with_b1: bool,
    #[serde(default)]
    pub convention: TransferConvention,
    #[serde(default = "yes")]
    pub first_order_eigvec: bool,
}

impl Default for SemiclassicalConfig {
    fn default() -> Self {
        SemiclassicalConfig { with_b1: false, convention: TransferConvention::default(), first_order_eigvec: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    #[serde(default = "yes")]
    pub enabled: bool,
    /// Largest momentum the grid must resolve.
    #[serde(default = "default_p_max")]
    pub p_max: f64,
    /// Distance kept between packet centers and the box boundary.
    #[serde(default = "default_margin")]
    pub margin: f64,
    /// Time step as a multiple of eps.
    #[serde(default = "default_dt_factor")]
    pub dt_factor: f64,
    /// Fixed box instead of the automatic one: `[lower, upper, points]` per axis.
    #[serde(default)]
    pub domain: Option<Vec<(f64, f64, usize)>>,
}

fn default_p_max() -> f64 {
    5.0
}
fn default_margin() -> f64 {
    3.0
}
fn default_dt_factor() -> f64 {
    0.05
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            enabled: true,
            p_max: default_p_max(),
            margin: default_margin(),
            dt_factor: default_dt_factor(),
            domain: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HkReference {
    #[default]
    Oracle,
    /// The semiclassical packet, exact for quadratic Hamiltonians.
    Thawed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HkConfig {
    /// Half-width of the phase-space box in units of sqrt(eps).
    #[serde(default = "default_radius")]
    pub radius: f64,
    /// Node spacing in units of sqrt(eps).
    #[serde(default = "default_spacing")]
    pub spacing: f64,
    #[serde(default)]
    pub reference: HkReference,
}

fn default_radius() -> f64 {
    11.0
}
fn default_spacing() -> f64 {
    0.5
}

impl Default for HkConfig {
    fn default() -> Self {
        HkConfig { radius: default_radius(), spacing: default_spacing(), reference: HkReference::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomConfig {
    #[serde(default = "default_cases")]
    pub cases: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_cases() -> usize {
    20
}

impl Default for RandomConfig {
    fn default() -> Self {
        RandomConfig { cases: default_cases(), seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputsConfig {
    #[serde(default = "yes")]
    pub solution_json: bool,
    #[serde(default)]
    pub grid_dumps: bool,
    #[serde(default)]
    pub trace_csv: bool,
    #[serde(default)]
    pub seed_csv: bool,
}

/// Thresholds checked at the end of a study; absent entries are not checked.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    pub max_error: Option<f64>,
    pub min_order: Option<f64>,
    pub min_overlap: Option<f64>,
    pub mass_rel: Option<f64>,
    /// The eps at which overlap and mass are checked (default: the smallest).
    pub check_eps: Option<f64>,
    pub symplectic: Option<f64>,
    pub norm: Option<f64>,
    pub eigenspace: Option<f64>,
    pub hermitian: Option<f64>,
    pub rel: Option<f64>,
    pub drift: Option<f64>,
    pub ratio_range: Option<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub study: String,
    pub kind: StudyKind,
    /// Acceptance criterion ids this study reports on.
    #[serde(default)]
    pub criteria: Vec<u32>,
    #[serde(default)]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub initial: Option<InitialConfig>,
    #[serde(default)]
    pub eps: Vec<f64>,
    #[serde(default)]
    pub time: Option<TimeConfig>,
    #[serde(default)]
    pub semiclassical: SemiclassicalConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub hk: HkConfig,
    #[serde(default)]
    pub random: RandomConfig,
    #[serde(default)]
    pub outputs: OutputsConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
}

impl ExperimentConfig {
    pub fn from_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            Error::Config { key: if key == "." { "<root>".into() } else { key }, message: e.inner().to_string() }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config { key: "<file>".into(), message: format!("{}: {e}", path.display()) })?;
        Self::from_str(&text)
    }

    fn need<T>(&self, v: &Option<T>, key: &str) -> Result<()> {
        if v.is_none() {
            return Err(Error::Config { key: key.into(), message: format!("required for kind {:?}", self.kind) });
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |k: &str, m: &str| Err(Error::Config { key: k.into(), message: m.into() });
        if self.schema_version != SCHEMA_VERSION {
            return bad("schema_version", &format!("expected {SCHEMA_VERSION}"));
        }
        if self.study.is_empty() || !self.study.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return bad("study", "must be a non-empty identifier of [A-Za-z0-9_-]");
        }
        if self.eps.iter().any(|e| !(*e > 0.0)) {
            return bad("eps", "values must be positive");
        }
        if self.eps.windows(2).any(|w| w[1] >= w[0]) {
            return bad("eps", "values must be strictly decreasing");
        }
        use StudyKind::*;
        match self.kind {
            Transfer | Fourier => {}
            Invariants | PhaseExpansion => {
                self.need(&self.model, "model")?;
                self.need(&self.initial, "initial")?;
                self.need(&self.time, "time")?;
            }
            Adiabatic | Crossing | HermanKluk | Oracle => {
                self.need(&self.model, "model")?;
                self.need(&self.initial, "initial")?;
                self.need(&self.time, "time")?;
                if self.eps.is_empty() {
                    return bad("eps", "at least one value required");
                }
            }
        }
        if let (Some(m), Some(i)) = (&self.model, &self.initial) {
            i.profile(m.d())?;
            if i.band != 1 && i.band != 2 {
                return bad("initial.band", "must be 1 or 2");
            }
            m.build()?;
        }
        if let Some(t) = &self.time {
            match (self.kind, t.t_end, t.after_crossing) {
                (Crossing, None, None) => return bad("time", "give t_end or after_crossing"),
                (Crossing, _, _) => {}
                (_, None, _) => return bad("time.t_end", "required"),
                _ => {}
            }
            if let Some(te) = t.t_end {
                if te < t.t0 {
                    return bad("time.t_end", "must not precede t0");
                }
            }
        }
        if self.oracle.dt_factor <= 0.0 || self.oracle.p_max <= 0.0 || self.oracle.margin < 0.0 {
            return bad("oracle", "dt_factor and p_max must be positive, margin non-negative");
        }
        if self.hk.radius <= 0.0 || self.hk.spacing <= 0.0 {
            return bad("hk", "radius and spacing must be positive");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "schema_version": 1,
        "study": "demo",
        "kind": "adiabatic",
        "model": {"family": "scalar_separable", "d": 1, "kinetic": "0.5*p^2", "potential": "0.5*q^2"},
        "initial": {"z0": [0.0, 1.0], "gamma": [[0.0, 1.0]]},
        "eps": [0.02, 0.01],
        "time": {"t_end": 1.0}
    }"#;

    #[test]
    fn parses_minimal() {
        let c = ExperimentConfig::from_str(MINIMAL).unwrap();
        assert_eq!(c.kind, StudyKind::Adiabatic);
        assert!(c.oracle.enabled);
        assert_eq!(c.semiclassical.convention, TransferConvention::Derived);
        let m = c.model.as_ref().unwrap().build().unwrap();
        assert!(m.separable.is_some());
    }

    #[test]
    fn unknown_key_is_named() {
        let text = MINIMAL.replace("\"t_end\"", "\"t_edn\"");
        match ExperimentConfig::from_str(&text) {
            Err(Error::Config { key, .. }) => assert!(key.contains("time"), "{key}"),
            other => panic!("{other:?}"),
        }
        let text = MINIMAL.replace("\"kinetic\"", "\"kinetik\"");
        match ExperimentConfig::from_str(&text) {
            Err(Error::Config { key, message }) => assert!(key.contains("model") && message.contains("kinetik"), "{key} {message}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_bad_values() {
        for (from, to, key) in [
            ("[0.02, 0.01]", "[0.01, 0.02]", "eps"),
            ("\"schema_version\": 1", "\"schema_version\": 2", "schema_version"),
            ("[[0.0, 1.0]]", "[[0.0, -1.0]]", "initial.gamma"),
            ("\"0.5*q^2\"", "\"0.5*q^\"", "model.potential"),
        ] {
            match ExperimentConfig::from_str(&MINIMAL.replace(from, to)) {
                Err(Error::Config { key: k, .. }) => assert_eq!(k, key),
                other => panic!("{to}: {other:?}"),
            }
        }
    }
}
