//! The JSON result envelope.

use pamkit_core::asymptotics::{GrowthIndexReport, LyapunovEstimate};
use pamkit_core::chaos::{BoundTerm, ChaosSeries};
use pamkit_core::covariance::ValidationReport;
use pamkit_core::functional::MomentEstimate;
use pamkit_core::variational::VariationalResult;
use serde::Serialize;

use crate::config::{Experiment, RunConfig};
use crate::selftest::SelftestReport;

#[derive(Clone, Debug, Serialize)]
pub struct ChaosResults {
    pub series: ChaosSeries,
    pub bounds: Vec<BoundTerm>,
}

#[derive(Clone, Debug, Serialize)]
pub struct LyapunovResults {
    /// Variational value behind the upper constant, if any.
    pub e: Option<f64>,
    pub estimate: LyapunovEstimate,
}

#[derive(Clone, Debug, Serialize)]
pub struct IndicesResults {
    pub report: GrowthIndexReport,
    /// `given` or `solver`.
    pub e_source: String,
    pub solver_converged: Option<bool>,
}

#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Results {
    Moment(MomentEstimate),
    Chaos(ChaosResults),
    Variational(Box<VariationalResult>),
    Lyapunov(LyapunovResults),
    Indices(IndicesResults),
    Validate(ValidationReport),
    Selftest(SelftestReport),
}

/// Wall-clock data; the only part of an envelope allowed to differ
/// between identical runs.
#[derive(Clone, Debug, Serialize)]
pub struct Timing {
    pub started_unix: f64,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Envelope {
    pub build_id: String,
    pub experiment: Experiment,
    pub config: RunConfig,
    pub results: Results,
    pub timing: Timing,
}

impl Envelope {
    pub fn to_json(&self) -> serde_json::Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// Envelope text with the `timing` field removed, for reproducibility checks.
pub fn strip_timing(json: &str) -> serde_json::Result<String> {
    let mut v: serde_json::Value = serde_json::from_str(json)?;
    if let Some(obj) = v.as_object_mut() {
        obj.remove("timing");
    }
    serde_json::to_string(&v)
}
