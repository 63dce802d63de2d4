use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("loss is not finite ({0})")]
    NonFiniteLoss(f64),

    #[error("output scale is degenerate: {0}")]
    DegenerateScale(f64),

    #[error("residual category {0:?} is not a boundary category")]
    BadCategory(crate::physics::Category),

    #[error("collocation profile infeasible: {0}")]
    ProfileInfeasible(String),

    #[error("line search failed to find a strong-Wolfe point")]
    LineSearchFailed,

    #[error("explicit step {dt:e} s exceeds the stability bound {bound:e} s")]
    UnstableStep { dt: f64, bound: f64 },

    #[error("non-finite temperature field at t = {0} s")]
    NonFinite(f64),

    #[error("reference field sequence is empty")]
    EmptyReference,

    #[error("location {0:?} lies outside the domain")]
    OutOfDomain([f64; 3]),

    #[error("no oracle available for {0}")]
    MissingOracle(String),

    #[error("training diverged at epoch {epoch}: {source}")]
    Diverged {
        epoch: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown material `{0}`")]
    UnknownMaterial(String),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures caused by the numerics rather than by the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteLoss(_)
                | Error::DegenerateScale(_)
                | Error::LineSearchFailed
                | Error::UnstableStep { .. }
                | Error::NonFinite(_)
                | Error::Diverged { .. }
        )
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }
}
