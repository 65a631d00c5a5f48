//! Report assembly and artifact emission. Every verification outcome is a
//! named check with explicit bounds and a pass flag; the JSON layout and
//! the CSV files are deterministic functions of the numeric results.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::{Mode, RunConfig};
use crate::error::Result;
use crate::homogenize1d::{ConvergenceTable, Limits1d};
use crate::matrix::SymMat;
use crate::tensors::{BoundsReport, HomogTensor};

/// One verification outcome: the measured value against its declared
/// bounds. A check passes when the value is finite and inside the bounds.
#[derive(Clone, Debug, Serialize)]
pub struct CheckEntry {
    pub name: String,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
    pub pass: bool,
}

impl CheckEntry {
    fn check(name: impl Into<String>, value: f64, min: Option<f64>, max: Option<f64>) -> Self {
        let pass = value.is_finite()
            && min.is_none_or(|m| value >= m)
            && max.is_none_or(|m| value <= m);
        CheckEntry {
            name: name.into(),
            value,
            min,
            max,
            pass,
        }
    }

    pub fn upper(name: impl Into<String>, value: f64, max: f64) -> Self {
        CheckEntry::check(name, value, None, Some(max))
    }

    pub fn lower(name: impl Into<String>, value: f64, min: f64) -> Self {
        CheckEntry::check(name, value, Some(min), None)
    }

    pub fn between(name: impl Into<String>, value: f64, min: f64, max: f64) -> Self {
        CheckEntry::check(name, value, Some(min), Some(max))
    }

    /// Bounds in human-readable form for terminal summaries.
    pub fn bounds_label(&self) -> String {
        match (self.min, self.max) {
            (Some(a), Some(b)) => format!("in [{a:.3e}, {b:.3e}]"),
            (Some(a), None) => format!(">= {a:.3e}"),
            (None, Some(b)) => format!("<= {b:.3e}"),
            (None, None) => "finite".into(),
        }
    }
}

/// A matrix result in the report: effective tensors and spectral Hessians
/// share this shape.
#[derive(Clone, Debug, Serialize)]
pub struct TensorEntry {
    pub name: String,
    pub n: usize,
    pub dim: usize,
    pub matrix: Vec<Vec<f64>>,
    pub asymmetry: f64,
}

impl TensorEntry {
    pub fn from_tensor(t: &HomogTensor) -> Self {
        TensorEntry {
            name: t.provenance.label().to_string(),
            n: t.n,
            dim: t.matrix.dim(),
            matrix: t.matrix.rows_vec(),
            asymmetry: t.asymmetry,
        }
    }

    pub fn from_matrix(name: impl Into<String>, n: usize, m: &SymMat) -> Self {
        TensorEntry {
            name: name.into(),
            n,
            dim: m.dim(),
            matrix: m.rows_vec(),
            asymmetry: 0.0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TensorsSection {
    pub entries: Vec<TensorEntry>,
    pub checks: Vec<CheckEntry>,
}

/// One dispersion sample: quasimomentum against the three first-band
/// quantities.
#[derive(Clone, Debug, Serialize)]
pub struct DispersionRow {
    pub eta: [f64; 2],
    pub lambda1: f64,
    pub mu1: f64,
    pub nu1: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BlochSection {
    pub hessians: Vec<TensorEntry>,
    pub lambda1_at_zero: f64,
    pub nu1_at_zero: f64,
    pub grad_lambda1_max: f64,
    pub grad_nu1_max: f64,
    pub dispersion: Vec<DispersionRow>,
    pub checks: Vec<CheckEntry>,
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundsSection {
    pub report: BoundsReport,
    pub checks: Vec<CheckEntry>,
}

/// One sweep sample of a transform error measure.
#[derive(Clone, Debug, Serialize)]
pub struct TransformRow {
    pub cells: usize,
    pub epsilon: f64,
    pub value: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct TransformSection {
    pub parseval_residual: f64,
    pub roundtrip_error: f64,
    pub dominance: Vec<TransformRow>,
    pub fourier: Vec<TransformRow>,
    pub checks: Vec<CheckEntry>,
}

/// The analytic limit coefficients next to the same three numbers from the
/// discrete cell solve.
#[derive(Clone, Debug, Serialize)]
pub struct OracleComparison {
    pub resolution: usize,
    pub analytic: Limits1d,
    pub assembled: Limits1d,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvergeSection {
    pub table: ConvergenceTable,
    pub oracle: OracleComparison,
    pub checks: Vec<CheckEntry>,
}

#[derive(Clone, Debug, Serialize)]
pub struct VariationalRow {
    pub lambda: [f64; 2],
    pub value: f64,
    pub quadratic: f64,
    pub cross: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct VariationalSection {
    pub rows: Vec<VariationalRow>,
    pub checks: Vec<CheckEntry>,
}

/// Schema identifier written into every report.
pub const SCHEMA_VERSION: u32 = 1;

/// Complete run outcome. Sections are present exactly when their pipeline
/// ran; `pass` is the conjunction of every check in every section.
#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub mode: Mode,
    pub pass: bool,
    pub config: RunConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tensors: Option<TensorsSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bloch: Option<BlochSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bounds: Option<BoundsSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transform: Option<TransformSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub converge_1d: Option<ConvergeSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variational: Option<VariationalSection>,
}

impl RunReport {
    pub fn new(mode: Mode, config: RunConfig) -> Self {
        RunReport {
            schema_version: SCHEMA_VERSION,
            mode,
            pass: true,
            config,
            tensors: None,
            bloch: None,
            bounds: None,
            transform: None,
            converge_1d: None,
            variational: None,
        }
    }

    /// Every check across all sections, in report order.
    pub fn checks(&self) -> Vec<&CheckEntry> {
        let mut out = Vec::new();
        if let Some(s) = &self.tensors {
            out.extend(s.checks.iter());
        }
        if let Some(s) = &self.bloch {
            out.extend(s.checks.iter());
        }
        if let Some(s) = &self.bounds {
            out.extend(s.checks.iter());
        }
        if let Some(s) = &self.transform {
            out.extend(s.checks.iter());
        }
        if let Some(s) = &self.converge_1d {
            out.extend(s.checks.iter());
        }
        if let Some(s) = &self.variational {
            out.extend(s.checks.iter());
        }
        out
    }

    /// Recompute the overall pass flag from the collected checks.
    pub fn finalize(&mut self) {
        self.pass = self.checks().iter().all(|c| c.pass);
    }
}

fn push_tensor_rows(out: &mut String, t: &TensorEntry) {
    for i in 0..t.dim {
        for j in 0..t.dim {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                t.name,
                t.n,
                i + 1,
                j + 1,
                t.matrix[i][j]
            ));
        }
    }
}

/// Write report.json plus whichever CSV artifacts the report's sections
/// call for. Returns the paths written.
pub fn emit_report(report: &RunReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let json_path = dir.join("report.json");
    let mut body = serde_json::to_string_pretty(report)
        .map_err(|e| crate::error::Error::Numeric(format!("report serialization: {e}")))?;
    body.push('\n');
    fs::write(&json_path, body)?;
    written.push(json_path);

    let tensor_entries: Vec<&TensorEntry> = report
        .tensors
        .iter()
        .flat_map(|s| s.entries.iter())
        .chain(report.bloch.iter().flat_map(|s| s.hessians.iter()))
        .collect();
    if !tensor_entries.is_empty() {
        let mut csv = String::from("tensor,n,i,j,value\n");
        for t in tensor_entries {
            push_tensor_rows(&mut csv, t);
        }
        let path = dir.join("tensors.csv");
        fs::write(&path, csv)?;
        written.push(path);
    }

    if let Some(bloch) = &report.bloch {
        let mut csv = String::from("eta1,eta2,lambda1,mu1,nu1\n");
        for row in &bloch.dispersion {
            csv.push_str(&format!(
                "{},{},{},{},{}\n",
                row.eta[0], row.eta[1], row.lambda1, row.mu1, row.nu1
            ));
        }
        let path = dir.join("dispersion.csv");
        fs::write(&path, csv)?;
        written.push(path);
    }

    if let Some(conv) = &report.converge_1d {
        let mut csv = String::from("eps,errU,errSigma,errZ\n");
        for row in &conv.table.rows {
            csv.push_str(&format!(
                "{},{},{},{}\n",
                row.epsilon, row.err_u, row.err_sigma, row.err_z
            ));
        }
        let path = dir.join("convergence.csv");
        fs::write(&path, csv)?;
        written.push(path);
    }

    Ok(written)
}
