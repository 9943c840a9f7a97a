//! JSON document schemas emitted by the CLI.

use serde::{Deserialize, Serialize};

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct FitReportDocument {
    pub metadata: Metadata,
    pub process: ProcessBlock,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bootstrap: Option<BootstrapBlock>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trimmed: Option<TrimmedBlock>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct Metadata {
    pub input: String,
    pub n: usize,
    pub p: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub log_time: bool,
    pub version: String,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ProcessBlock {
    pub breakpoints: Vec<f64>,
    pub coefficients: Vec<Vec<f64>>,
    pub tau_end: f64,
    pub tau_unique: f64,
    pub flags: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct BootstrapBlock {
    pub taus: Vec<f64>,
    pub replicates: usize,
    pub point: Vec<Vec<f64>>,
    pub se: Vec<Vec<f64>>,
    pub ci_lower: Vec<Vec<f64>>,
    pub ci_upper: Vec<Vec<f64>>,
    pub excluded: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct TrimmedBlock {
    pub tau1: f64,
    pub tau2: f64,
    pub estimate: Vec<f64>,
    pub se: Vec<f64>,
    pub ci_lower: Vec<f64>,
    pub ci_upper: Vec<f64>,
    pub excluded: usize,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct KmDocument {
    pub n: usize,
    pub distribution: StepBlock,
    pub nelson_aalen: NelsonAalenBlock,
    pub inverse: InverseBlock,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct StepBlock {
    pub initial_value: f64,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct NelsonAalenBlock {
    pub times: Vec<f64>,
    pub increments: Vec<f64>,
    pub cumulative: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct InverseBlock {
    /// Segment start probabilities of the quantile function.
    pub probability_starts: Vec<f64>,
    /// Quantile value on each probability segment.
    pub quantiles: Vec<f64>,
    pub last_followup: f64,
    pub mass: f64,
}
