use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("ellipticity violated at point {point:?} (frame condition number {condition:.3e})")]
    Ellipticity { point: Vec<f64>, condition: f64 },

    #[error("frame degenerated: |det| = {det:.3e}")]
    FrameDegenerate { det: f64 },

    #[error("frame is not orthogonal: deviation {deviation:.3e}")]
    NotOrthogonal { deviation: f64 },

    #[error("state is off the surface: residual {residual:.3e}")]
    OffSurface { residual: f64 },

    #[error("invariant restoration failed: residual {residual:.3e} before restoration")]
    Restoration { residual: f64 },

    #[error("scheme `{scheme}` requires a system flagged flat, `{system}` is not")]
    NotFlat { scheme: &'static str, system: String },

    #[error("need at least 3 usable points for an order fit, found {usable}")]
    TooFewPoints { usable: usize },

    #[error("step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn at_step(self, step: usize) -> Error {
        match self {
            e @ Error::Step { .. } => e,
            e => Error::Step {
                step,
                source: Box::new(e),
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
