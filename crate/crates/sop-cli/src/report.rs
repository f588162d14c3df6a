//! Machine-readable fit artifacts: `report.json`, `curve.csv`, `lambda.csv`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sop_core::{EdBounds, FitResult, MixedModelSpec, Prediction};

/// Which curve model produced a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Adaptive,
    Pspline,
    Hierarchical,
    Factor,
}

/// Sizes and settings that identify the fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDescriptor {
    pub kind: ModelKind,
    pub family: String,
    pub observations: usize,
    pub fixed_rank: usize,
    pub coefficients: usize,
    pub basis: Vec<usize>,
    pub penalty_order: usize,
    pub variance_parameters: usize,
}

/// One variance parameter in the summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceRow {
    pub block: usize,
    pub name: String,
    pub sigma2: f64,
    pub ed: f64,
    pub ed_bound: f64,
    pub floored: bool,
}

/// The complete fit summary written as `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub model: ModelDescriptor,
    pub variance_table: Vec<VarianceRow>,
    pub phi: f64,
    pub phi_estimated: bool,
    pub total_ed: f64,
    pub converged: bool,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub deviance_trace: Vec<f64>,
    /// Wall-clock of the fit alone, in milliseconds. The only field that
    /// differs between identical runs.
    pub timing_ms: u64,
}

impl FitReport {
    pub fn assemble(
        model: ModelDescriptor,
        spec: &MixedModelSpec,
        fit: &FitResult,
        bounds: &EdBounds,
        timing_ms: u64,
    ) -> FitReport {
        let mut variance_table = Vec::with_capacity(spec.p_total());
        for (k, block) in spec.blocks().iter().enumerate() {
            for l in 0..block.p() {
                variance_table.push(VarianceRow {
                    block: k,
                    name: block.label(l).to_string(),
                    sigma2: fit.state.block(k)[l],
                    ed: fit.ed.get(k, l),
                    ed_bound: bounds.per_atom[k][l],
                    floored: fit.floored.contains(&(k, l)),
                });
            }
        }
        FitReport {
            model,
            variance_table,
            phi: fit.state.phi,
            phi_estimated: spec.family().estimates_phi(),
            total_ed: fit.total_ed(spec),
            converged: fit.converged,
            outer_iterations: fit.outer_iterations,
            inner_iterations: fit.inner_iterations,
            deviance_trace: fit.deviance_trace.clone(),
            timing_ms,
        }
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        let mut file = std::fs::File::create(dir.join("report.json"))?;
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        file.write_all(text.as_bytes())?;
        file.write_all(b"\n")
    }
}

/// One exported curve: a label, evaluation points, and pointwise summaries.
pub struct CurveBlock {
    pub label: String,
    pub x: Vec<f64>,
    pub prediction: Prediction,
}

/// Write all exported curves as `curve.csv` with one row per grid point.
pub fn write_curves(dir: &Path, curves: &[CurveBlock]) -> std::io::Result<()> {
    let mut wtr = csv::Writer::from_path(dir.join("curve.csv"))?;
    wtr.write_record(["curve", "x", "eta", "se_eta", "fitted", "lower", "upper"])?;
    for c in curves {
        let p = &c.prediction;
        for i in 0..c.x.len() {
            wtr.write_record([
                c.label.as_str(),
                &format!("{}", c.x[i]),
                &format!("{}", p.eta[i]),
                &format!("{}", p.se_eta[i]),
                &format!("{}", p.fitted[i]),
                &format!("{}", p.lower[i]),
                &format!("{}", p.upper[i]),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Write the local smoothing-parameter field as `lambda.csv`, one row per
/// coefficient difference.
pub fn write_lambda(dir: &Path, lambda: &[f64]) -> std::io::Result<()> {
    let mut wtr = csv::Writer::from_path(dir.join("lambda.csv"))?;
    wtr.write_record(["index", "lambda"])?;
    for (i, v) in lambda.iter().enumerate() {
        wtr.write_record([&format!("{}", i + 1), &format!("{v}")])?;
    }
    wtr.flush()?;
    Ok(())
}
