//! Run configuration: one JSON document that selects a pipeline mode and
//! fixes every numeric knob. The parsed form is echoed verbatim into the
//! report, so a report always carries the configuration that produced it.

use std::path::{Path, PathBuf};

use num_rational::Rational64;
use serde::{Deserialize, Serialize};

use crate::cell_solver::SolverConfig;
use crate::error::{Error, Result};
use crate::homogenize1d::Profile1d;
use crate::microstructure::PresetSpec;
use crate::tensors::TwoScaleMode;

/// Pipeline selector. `All` runs every suite the configuration supports.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Tensors,
    BlochVerify,
    Bounds,
    TransformCheck,
    #[serde(rename = "converge-1d")]
    Converge1d,
    Variational,
    All,
}

impl Mode {
    pub const NAMES: [&'static str; 7] = [
        "tensors",
        "bloch-verify",
        "bounds",
        "transform-check",
        "converge-1d",
        "variational",
        "all",
    ];

    pub fn from_arg(s: &str) -> Result<Mode> {
        match s {
            "tensors" => Ok(Mode::Tensors),
            "bloch-verify" => Ok(Mode::BlochVerify),
            "bounds" => Ok(Mode::Bounds),
            "transform-check" => Ok(Mode::TransformCheck),
            "converge-1d" => Ok(Mode::Converge1d),
            "variational" => Ok(Mode::Variational),
            "all" => Ok(Mode::All),
            other => Err(Error::Config(format!(
                "unknown mode '{other}'; expected one of {}",
                Mode::NAMES.join(", ")
            ))),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Mode::Tensors => "tensors",
            Mode::BlochVerify => "bloch-verify",
            Mode::Bounds => "bounds",
            Mode::TransformCheck => "transform-check",
            Mode::Converge1d => "converge-1d",
            Mode::Variational => "variational",
            Mode::All => "all",
        }
    }
}

/// Exact rational entered either as an integer or as a "p/q" string.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RationalSpec {
    Int(i64),
    Text(String),
}

impl RationalSpec {
    pub fn to_rational(&self) -> Result<Rational64> {
        let r = match self {
            RationalSpec::Int(k) => Rational64::from_integer(*k),
            RationalSpec::Text(s) => {
                let parse = |t: &str| -> Result<i64> {
                    t.trim().parse::<i64>().map_err(|_| {
                        Error::Config(format!("'{s}' is not an integer or p/q rational"))
                    })
                };
                match s.split_once('/') {
                    Some((p, q)) => {
                        let den = parse(q)?;
                        if den == 0 {
                            return Err(Error::Config(format!("'{s}' has a zero denominator")));
                        }
                        Rational64::new(parse(p)?, den)
                    }
                    None => Rational64::from_integer(parse(s)?),
                }
            }
        };
        Ok(r)
    }
}

/// Commensurate period ratio between the B and A oscillations, and which
/// side of the ratio the resampling acts on.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoScaleConfig {
    pub factor: RationalSpec,
    #[serde(default = "default_twoscale_mode")]
    pub mode: TwoScaleMode,
}

fn default_twoscale_mode() -> TwoScaleMode {
    TwoScaleMode::TRatio
}

/// Knobs for the spectral-verification pipelines: the dispersion sweep and
/// the transform sweeps over cell counts.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlochConfig {
    /// Half-width of the dispersion sweep along axis 1; must stay inside
    /// the first dual cell.
    #[serde(default = "default_eta_max")]
    pub eta_max: f64,
    #[serde(default = "default_eta_samples")]
    pub eta_samples: usize,
    /// Cell counts for the transform sweeps, strictly increasing.
    #[serde(default = "default_cells")]
    pub cells: Vec<usize>,
    /// Cell-grid resolution for the transform sweeps. Dense bases cap the
    /// cell grid at 1024 nodes, so this defaults to the run resolution
    /// clamped to that cap.
    #[serde(default)]
    pub cell_resolution: Option<usize>,
}

fn default_eta_max() -> f64 {
    3.0
}

fn default_eta_samples() -> usize {
    9
}

fn default_cells() -> Vec<usize> {
    vec![8, 16, 32, 64]
}

impl Default for BlochConfig {
    fn default() -> Self {
        BlochConfig {
            eta_max: default_eta_max(),
            eta_samples: default_eta_samples(),
            cells: default_cells(),
            cell_resolution: None,
        }
    }
}

/// Piecewise-constant profile with exact rational breakpoints; breakpoints
/// are right endpoints and the last one must be 1.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileConfig {
    pub breakpoints: Vec<RationalSpec>,
    pub values: Vec<f64>,
}

impl ProfileConfig {
    pub fn to_profile(&self) -> Result<Profile1d> {
        let breaks = self
            .breakpoints
            .iter()
            .map(|b| b.to_rational())
            .collect::<Result<Vec<_>>>()?;
        Profile1d::new(breaks, self.values.clone())
    }
}

/// Right-hand side of the 1D experiment, fixed in closed form so the run is
/// reproducible from the configuration alone.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SourceConfig {
    Constant {
        value: f64,
    },
    Sine {
        amplitude: f64,
        frequency: i64,
        #[serde(default)]
        offset: f64,
    },
}

impl Default for SourceConfig {
    fn default() -> Self {
        SourceConfig::Constant { value: 1.0 }
    }
}

impl SourceConfig {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            SourceConfig::Constant { value } => *value,
            SourceConfig::Sine {
                amplitude,
                frequency,
                offset,
            } => offset + amplitude * (crate::grid::TWO_PI * *frequency as f64 * x).sin(),
        }
    }

    fn validate(&self) -> Result<()> {
        let finite = match self {
            SourceConfig::Constant { value } => value.is_finite(),
            SourceConfig::Sine {
                amplitude,
                frequency,
                offset,
            } => amplitude.is_finite() && offset.is_finite() && *frequency >= 1,
        };
        if finite {
            Ok(())
        } else {
            Err(Error::Config("source parameters must be finite".into()))
        }
    }
}

/// The 1D epsilon experiment: dyadic period counts, oscillation profiles,
/// and the source term.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsilonConfig {
    /// Periods m per epsilon = 1/m, dyadic and strictly increasing.
    pub periods: Vec<usize>,
    #[serde(default = "default_per_cell")]
    pub per_cell: usize,
    pub profile_a: ProfileConfig,
    pub profile_b: ProfileConfig,
    #[serde(default)]
    pub source: SourceConfig,
}

fn default_per_cell() -> usize {
    32
}

/// Saddle-point spot checks: random direction count and RNG seed.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariationalConfig {
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_count() -> usize {
    20
}

fn default_seed() -> u64 {
    7
}

impl Default for VariationalConfig {
    fn default() -> Self {
        VariationalConfig {
            count: default_count(),
            seed: default_seed(),
        }
    }
}

fn default_fd_step() -> f64 {
    1e-3
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// Full run configuration. The CLI fills `mode` from its positional
/// argument; library callers set it directly.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub mode: Option<Mode>,
    pub dim: usize,
    pub resolution: usize,
    pub a: PresetSpec,
    pub b: PresetSpec,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default = "default_fd_step")]
    pub fd_step: f64,
    #[serde(default)]
    pub two_scale: Option<TwoScaleConfig>,
    #[serde(default)]
    pub bloch: BlochConfig,
    #[serde(default)]
    pub epsilon: Option<EpsilonConfig>,
    #[serde(default)]
    pub variational: VariationalConfig,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

/// Largest node count any configured grid may carry.
pub const MAX_GRID_NODES: usize = 1 << 22;

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// The two-scale factor, 1 when no block is configured. The ratio is
    /// kept small because grid sizes scale with its numerator and
    /// denominator.
    pub fn factor(&self) -> Result<Rational64> {
        match &self.two_scale {
            None => Ok(Rational64::from_integer(1)),
            Some(ts) => {
                let f = ts.factor.to_rational()?;
                if f <= Rational64::from_integer(0) {
                    return Err(Error::Config(format!(
                        "two-scale factor must be positive, got {f}"
                    )));
                }
                if *f.numer() > 64 || *f.denom() > 64 {
                    return Err(Error::Config(format!(
                        "two-scale factor {f} is out of range; numerator and \
                         denominator are capped at 64"
                    )));
                }
                Ok(f)
            }
        }
    }

    /// Cell-grid resolution the transform sweeps run at.
    pub fn transform_resolution(&self) -> usize {
        self.bloch.cell_resolution.unwrap_or_else(|| {
            let cap = if self.dim == 2 { 32 } else { 1024 };
            self.resolution.min(cap)
        })
    }

    fn wants(&self, mode: Mode, part: Mode) -> bool {
        mode == part || mode == Mode::All
    }

    /// Check every invariant the selected mode relies on. Violations are
    /// configuration errors and abort before any artifact is written.
    pub fn validate(&self, mode: Mode) -> Result<()> {
        if !(1..=2).contains(&self.dim) {
            return Err(Error::Config(format!(
                "dim must be 1 or 2, got {}",
                self.dim
            )));
        }
        if self.resolution < 4 || self.resolution % 2 != 0 {
            return Err(Error::Config(format!(
                "resolution must be an even integer of at least 4, got {}",
                self.resolution
            )));
        }
        if self.resolution.pow(self.dim as u32) > MAX_GRID_NODES {
            return Err(Error::Config(format!(
                "resolution {} exceeds the {} node cap in dimension {}",
                self.resolution, MAX_GRID_NODES, self.dim
            )));
        }
        self.solver.validated()?;
        if !(self.fd_step > 0.0 && self.fd_step <= 0.25) {
            return Err(Error::Config(format!(
                "FD step must lie in (0, 0.25], got {}",
                self.fd_step
            )));
        }
        self.factor()?;

        if self.wants(mode, Mode::BlochVerify) {
            if !(self.bloch.eta_max > 0.0 && self.bloch.eta_max < std::f64::consts::PI) {
                return Err(Error::Config(format!(
                    "eta_max must lie in (0, pi), got {}",
                    self.bloch.eta_max
                )));
            }
            if self.bloch.eta_samples < 2 {
                return Err(Error::Config(
                    "eta_samples must be at least 2 for a sweep".into(),
                ));
            }
        }

        if self.wants(mode, Mode::TransformCheck) {
            let cells = &self.bloch.cells;
            if cells.len() < 3 {
                return Err(Error::Config(
                    "transform sweeps need at least 3 cell counts".into(),
                ));
            }
            for w in cells.windows(2) {
                if w[1] <= w[0] {
                    return Err(Error::Config(
                        "transform cell counts must increase strictly".into(),
                    ));
                }
            }
            if cells.iter().filter(|&&c| c >= 16).count() < 2 {
                return Err(Error::Config(
                    "transform sweeps need at least 2 cell counts of 16 or more".into(),
                ));
            }
            let n_t = self.transform_resolution();
            if n_t < 4 || n_t % 2 != 0 {
                return Err(Error::Config(format!(
                    "transform cell resolution must be an even integer of at least 4, \
                     got {n_t}"
                )));
            }
            let cell_nodes = n_t.pow(self.dim as u32);
            if cell_nodes > 1024 {
                return Err(Error::Config(format!(
                    "transform-check holds dense bases; the cell grid is capped at \
                     1024 nodes, got {cell_nodes}"
                )));
            }
        }

        match &self.epsilon {
            Some(eps) => {
                if eps.per_cell < 32 {
                    return Err(Error::Config(format!(
                        "per_cell must be at least 32, got {}",
                        eps.per_cell
                    )));
                }
                eps.profile_a.to_profile()?;
                eps.profile_b.to_profile()?;
                eps.source.validate()?;
            }
            None => {
                if mode == Mode::Converge1d {
                    return Err(Error::Config(
                        "mode converge-1d requires the 'epsilon' block".into(),
                    ));
                }
            }
        }

        if self.wants(mode, Mode::Variational)
            && !(1..=10_000).contains(&self.variational.count)
        {
            return Err(Error::Config(format!(
                "variational count must lie in 1..=10000, got {}",
                self.variational.count
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> serde_json::Value {
        serde_json::json!({
            "dim": 1,
            "resolution": 64,
            "a": { "kind": "constant", "value": 1.0 },
            "b": { "kind": "constant", "value": 2.0 }
        })
    }

    #[test]
    fn minimal_config_parses_and_validates() {
        let cfg: RunConfig = serde_json::from_value(minimal()).unwrap();
        cfg.validate(Mode::Tensors).unwrap();
        assert_eq!(cfg.factor().unwrap(), Rational64::from_integer(1));
        assert_eq!(cfg.fd_step, 1e-3);
        assert_eq!(cfg.out, PathBuf::from("out"));
    }

    #[test]
    fn unknown_field_is_rejected() {
        let mut v = minimal();
        v["resolutoin"] = serde_json::json!(32);
        assert!(serde_json::from_value::<RunConfig>(v).is_err());
    }

    #[test]
    fn missing_b_is_rejected() {
        let mut v = minimal();
        v.as_object_mut().unwrap().remove("b");
        assert!(serde_json::from_value::<RunConfig>(v).is_err());
    }

    #[test]
    fn rational_forms_parse() {
        assert_eq!(
            RationalSpec::Text("3/2".into()).to_rational().unwrap(),
            Rational64::new(3, 2)
        );
        assert_eq!(
            RationalSpec::Int(2).to_rational().unwrap(),
            Rational64::from_integer(2)
        );
        assert!(RationalSpec::Text("3/0".into()).to_rational().is_err());
        assert!(RationalSpec::Text("a/2".into()).to_rational().is_err());
    }

    #[test]
    fn mode_names_round_trip() {
        for name in Mode::NAMES {
            let m = Mode::from_arg(name).unwrap();
            assert_eq!(m.label(), name);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{name}\""));
        }
        assert!(Mode::from_arg("spectral").is_err());
    }

    #[test]
    fn converge_mode_requires_epsilon_block() {
        let cfg: RunConfig = serde_json::from_value(minimal()).unwrap();
        assert!(cfg.validate(Mode::Converge1d).is_err());
        assert!(cfg.validate(Mode::All).is_ok());
    }

    #[test]
    fn odd_resolution_is_rejected() {
        let mut v = minimal();
        v["resolution"] = serde_json::json!(63);
        let cfg: RunConfig = serde_json::from_value(v).unwrap();
        assert!(cfg.validate(Mode::Tensors).is_err());
    }
}
