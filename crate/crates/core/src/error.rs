use std::path::PathBuf;

/// Every failure the library can report.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("degenerate vector{}: norm {norm:e} is below the floor {floor:e}", row_suffix(.row))]
    DegenerateVector {
        row: Option<usize>,
        norm: f64,
        floor: f64,
    },

    #[error("non-finite value: {0}")]
    NumericDomain(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("cannot generate {kind} negative for {source_id}: {reason}")]
    GenerationImpossible {
        kind: &'static str,
        source_id: String,
        reason: String,
    },

    #[error("inconsistent data: {0}")]
    Inconsistency(String),

    #[error("resource guard: {0}")]
    Resource(String),

    #[error("infeasible program: {steps} steps cannot fit in {frames} frames")]
    InfeasibleProgram { steps: usize, frames: usize },

    #[error("sequence length {len} exceeds the maximum {max}")]
    Length { len: usize, max: usize },

    #[error("unknown vocabulary token {0:?}")]
    UnknownToken(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("non-finite loss at step {step}; last good checkpoint: {}", last_good.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "none".into()))]
    Diverged {
        step: u64,
        last_good: Option<PathBuf>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn row_suffix(row: &Option<usize>) -> String {
    match row {
        Some(r) => format!(" at row {r}"),
        None => String::new(),
    }
}

pub type Result<T> = std::result::Result<T, Error>;
