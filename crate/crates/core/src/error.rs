use thiserror::Error;

/// A single failed invariant, located by device (if any) and field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub device: Option<String>,
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.device {
            Some(id) => write!(f, "device `{id}`: {}: {}", self.field, self.message),
            None => write!(f, "{}: {}", self.field, self.message),
        }
    }
}

fn join_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| format!("  - {x}"))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation failed:\n{}", join_violations(.0))]
    Invalid(Vec<Violation>),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("device `{device}` has no {backend} throughput for quant format {quant}")]
    MissingThroughput {
        device: String,
        backend: &'static str,
        quant: String,
    },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IlpError {
    #[error("k = {k} does not divide L = {layers}")]
    NotADivisor { k: u32, layers: u32 },
    #[error("instance exceeds the enumeration guard (W = {window} > 24 or M = {devices} > 4)")]
    TooLarge { window: u32, devices: usize },
    #[error("internal solver failure: {0}")]
    Internal(String),
}

#[derive(Debug, Error)]
pub enum PlanError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Ilp(#[from] IlpError),
    #[error("cluster has {devices} compute devices but the model only has {layers} layers")]
    TooManyDevices { devices: usize, layers: u32 },
    #[error("no feasible plan for any k; last reasons: {}", .0.join("; "))]
    Infeasible(Vec<String>),
    #[error("set assignment did not converge within {iterations} iterations")]
    NonConvergence {
        iterations: usize,
        best: Option<Box<crate::latency_model::PartitionPlan>>,
    },
    #[error("pruning would leave zero compute devices")]
    NoComputeDevices,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("plan does not match the cluster: {0}")]
    PlanMismatch(String),
    #[error("decode_tokens must be at least 1")]
    NoTokens,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error)]
#[error("unknown trace format `{0}` (expected `csv` or `trace-event`)")]
pub struct UnknownFormat(pub String);
