use thiserror::Error;

/// Errors surfaced by the core library.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: String, detail: String },

    #[error("backward requires a scalar (1x1) loss node, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },

    #[error("non-finite gradient in parameter block '{name}'")]
    NonFiniteGradient { name: String },

    #[error("non-finite loss at training step {step} (batch seed {seed})")]
    NonFiniteLoss { step: u64, seed: u64 },

    #[error("non-finite state during ODE sampling at step {step}")]
    NonFiniteOdeState { step: usize },

    #[error("trajectory {index} diverged (|state| > {threshold:e})")]
    Divergence { index: usize, threshold: f64 },

    #[error(
        "dataset generation aborted: {rejected} of {attempted} trajectories diverged \
         (> 1% rejection rate); inspect system parameters or noise scale"
    )]
    TooManyRejections { rejected: usize, attempted: usize },

    #[error("unknown system '{0}' (expected one of: lorenz, fitzhugh_nagumo, lotka_volterra, brusselator, van_der_pol)")]
    UnknownSystem(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("constant ground truth in dimension {dim}: NRMSE undefined (zero variance)")]
    ConstantTruth { dim: usize },

    #[error("CRPS requires at least 2 samples, got {0}")]
    TooFewSamples(usize),

    #[error("quantiles require at least 2 samples, got {0}")]
    TooFewQuantileSamples(usize),

    #[error("Cholesky factorization failed at pivot {pivot}: matrix not positive-definite")]
    CholeskyFailure { pivot: usize },

    #[error("model bundle error: {0}")]
    Bundle(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error at {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },

    #[error("json error at {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

impl CoreError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        CoreError::Io { path: path.into(), source }
    }

    pub fn csv(path: impl Into<String>, source: csv::Error) -> Self {
        CoreError::Csv { path: path.into(), source }
    }

    pub fn json(path: impl Into<String>, source: serde_json::Error) -> Self {
        CoreError::Json { path: path.into(), source }
    }
}
