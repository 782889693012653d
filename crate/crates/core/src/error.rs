use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("reparameterization chart does not cover this line ({0})")]
    DegenerateLine(&'static str),
    #[error("line is not an SL2 line: ad - bc = {0}")]
    NotSl2(f64),
    #[error("height {0} is too close to 0 for the projected segment")]
    DegenerateHeight(f64),
    #[error("curve is degenerate at t = {0}")]
    DegenerateCurve(f64),
    #[error("delta = {0} is too coarse (must be <= 1/16)")]
    BadScale(f64),
    #[error("generation exhausted after {rejects} consecutive rejections ({accepted} accepted)")]
    GenerationExhausted { accepted: usize, rejects: usize },
    #[error("standard error {stderr} at radius {r} exceeds 25% of the bound {bound}")]
    InsufficientSamples { r: f64, stderr: f64, bound: f64 },
    #[error("grid of {cells} cells exceeds the budget of {budget}")]
    GridTooLarge { cells: u64, budget: u64 },
    #[error("function has zero L^p norm")]
    ZeroFunction,
    #[error("need at least {needed} usable rows, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
