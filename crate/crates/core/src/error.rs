use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used for exit codes and machine-readable messages.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Category {
    Usage,
    Data,
    Numerical,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::Usage => "usage",
            Category::Data => "data",
            Category::Numerical => "numerical",
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            Category::Usage => 2,
            Category::Data => 3,
            Category::Numerical => 4,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("correlation matrix of size {size} is ill-conditioned (last nugget tried: {nugget:e})")]
    IllConditioned { size: usize, nugget: f64 },

    #[error("singular trend system; collinear experience-matrix columns: {}", columns.join(", "))]
    SingularSystem { columns: Vec<String> },

    #[error("insufficient data at level {level}: {detail}")]
    InsufficientData { level: usize, detail: String },

    #[error("degenerate posterior: {0}")]
    DegeneratePosterior(String),

    #[error("invalid level structure: {0}")]
    Structural(String),

    #[error("nesting violation at level {level}: point {index} ({coords}) has no match in level {below}", below = level - 1)]
    Nesting { level: usize, index: usize, coords: String },

    #[error("estimation failed at level {level}: {source}")]
    Estimation {
        level: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("hyperparameter optimization failed: {0}")]
    OptimizationFailed(String),

    #[error("invalid prior: {0}")]
    InvalidPrior(String),

    #[error("invalid design request: {0}")]
    Size(String),

    #[error("{0}")]
    Undefined(String),

    #[error("parse error at {path}:{line}: {detail}")]
    Parse { path: String, line: usize, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid archive: {0}")]
    Archive(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn category(&self) -> Category {
        match self {
            Error::IllConditioned { .. }
            | Error::SingularSystem { .. }
            | Error::DegeneratePosterior(_)
            | Error::OptimizationFailed(_) => Category::Numerical,
            Error::Estimation { source, .. } => source.category(),
            Error::Config(_) => Category::Usage,
            _ => Category::Data,
        }
    }

    pub(crate) fn at_level(self, level: usize) -> Error {
        match self {
            e @ (Error::Estimation { .. } | Error::Nesting { .. } | Error::InsufficientData { .. }) => e,
            other => Error::Estimation { level, source: Box::new(other) },
        }
    }
}
