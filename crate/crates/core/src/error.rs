use thiserror::Error;

/// Errors surfaced by the simulation and recursion layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("offspring law puts mass {0} on zero children; leaves are not supported")]
    ZeroOffspringMass(f64),
    #[error("offspring probabilities sum to {0}, expected 1")]
    NotNormalized(f64),
    #[error("mean offspring {0} must exceed 1")]
    SubcriticalMean(f64),
    #[error("probability for k = {k} is negative ({p})")]
    NegativeProbability { k: usize, p: f64 },
    #[error("offspring support exceeds the maximum of {max} children (got k = {k})")]
    SupportTooLarge { k: usize, max: usize },
    #[error("cannot parse offspring law: {0}")]
    Parse(String),

    #[error("tree arena exceeded its cap of {cap} nodes")]
    ArenaOverflow { cap: usize },
    #[error("node {0} is not on the frontier")]
    NotFrontier(u32),
    #[error("subtree below node {node} is not expanded to the required depth {required}")]
    InsufficientDepth { node: u32, required: i64 },
    #[error("node {0} is not adjacent to the current root")]
    NotAdjacent(u32),

    #[error("regeneration buffer must be at least 1")]
    BufferTooSmall,
    #[error("no confirmed regeneration block within the simulated path")]
    PathTooShort,
    #[error("escape-probability limit did not converge before depth {depth}")]
    NoConvergence { depth: usize },
    #[error("linear system is singular")]
    SingularSystem,
    #[error("parameter outside its domain: {0}")]
    Domain(String),
    #[error("need at least two samples for a standard error (got {0})")]
    TooFewSamples(u64),

    #[error("replica {replica} failed ({failures} failures total): {source}")]
    Replica {
        replica: u64,
        failures: usize,
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
