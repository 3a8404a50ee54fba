use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A time argument fell outside the kernel's domain.
    #[error("{name} = {value} is outside the domain [{lo}, {hi}]")]
    Domain {
        name: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    /// A model parameter is outside its admissible range.
    #[error("parameter {name} = {value}: {reason}")]
    Parameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("grid too large for exhaustive enumeration: {points} points on an axis (limit {limit})")]
    Size { points: usize, limit: usize },

    /// Successive dyadic refinements did not settle within the allowed number of levels.
    #[error("no convergence after {levels} levels: last iterates {previous} and {last}")]
    Convergence { levels: usize, previous: f64, last: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("local variance vanishes at u = {0} > 0")]
    InvalidLocalVariance(f64),

    /// The mesh-rate exponent is nonpositive, i.e. `r >= 2 / (2 gamma - 1)`.
    #[error("inadmissible exponent: r = {r} with gamma = {gamma} requires 1 < r < 2/max(2 gamma - 1, 0)")]
    InadmissibleExponent { r: f64, gamma: f64 },

    #[error("partition sequence fails the mesh-rate condition: {0}")]
    MeshRate(String),

    #[error("entry ({i}, {j}): {source}")]
    Entry {
        i: usize,
        j: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// True for errors caused by invalid input rather than numerical breakdown.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Convergence { .. } | Error::Numerical(_) => false,
            Error::Entry { source, .. } => source.is_validation(),
            _ => true,
        }
    }

    pub(crate) fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }
}
