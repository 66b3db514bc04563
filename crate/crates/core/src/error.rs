use std::fmt;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Pipeline stage a failure is attributed to by the experiment runner.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Sample,
    Load,
    Noise,
    Regularize,
    Graph,
    Spectrum,
    Classify,
    Output,
    Config,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Sample => "sample",
            Stage::Load => "load",
            Stage::Noise => "noise",
            Stage::Regularize => "regularize",
            Stage::Graph => "graph",
            Stage::Spectrum => "spectrum",
            Stage::Classify => "classify",
            Stage::Output => "output",
            Stage::Config => "config",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),
    #[error("unsupported noise mode: {0}")]
    UnsupportedMode(String),
    #[error("vector is not unit norm (|v| = {0})")]
    NotUnitNorm(f64),
    #[error("invalid neighbour count k = {k} for n = {n} points")]
    InvalidK { k: usize, n: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("row {0} of the weight matrix sums to zero")]
    ZeroRowSum(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("node {0} is isolated (zero degree)")]
    IsolatedNode(usize),
    #[error("all neighbour scales are zero (every point duplicated)")]
    DegenerateScale,
    #[error("eigensolver did not converge after {iterations} restarts (max residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("distance perturbation eta = {eta} is not smaller than eps = {eps}")]
    EtaTooLarge { eta: f64, eps: f64 },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("graph is disconnected ({components} components)")]
    DisconnectedGraph { components: usize },
    #[error("probit optimisation did not converge (gradient norm {grad_norm:e})")]
    ProbitNoConvergence { grad_norm: f64 },
    #[error("insufficient labels: {0}")]
    InsufficientLabels(String),
    #[error("bad IDX magic number: expected {expected}, found {found}")]
    BadMagic { expected: u32, found: u32 },
    #[error("truncated file: {0}")]
    TruncatedFile(String),
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("[{stage}] {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Innermost error, with stage tags stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }
}

/// Attach a pipeline stage to an error.
pub trait StageExt<T> {
    fn stage(self, stage: Stage) -> Result<T>;
}

impl<T, E: Into<Error>> StageExt<T> for std::result::Result<T, E> {
    fn stage(self, stage: Stage) -> Result<T> {
        self.map_err(|e| Error::Stage {
            stage,
            source: Box::new(e.into()),
        })
    }
}
