use std::fmt::Display;

/// A command failure together with its exit code class.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags or inputs; exit code 2.
    Usage(anyhow::Error),
    /// Anything that went wrong after validation; exit code 1.
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn usage(msg: impl Display) -> Self {
        Failure::Usage(anyhow::anyhow!("{msg}"))
    }

    pub fn runtime(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }

    pub fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Usage(e) | Failure::Runtime(e) => e,
        }
    }
}

fn innermost(e: &frameflow::Error) -> &frameflow::Error {
    match e {
        frameflow::Error::Step { source, .. } => innermost(source),
        other => other,
    }
}

impl From<frameflow::Error> for Failure {
    fn from(e: frameflow::Error) -> Self {
        use frameflow::Error as E;
        match innermost(&e) {
            E::InvalidParameter(_) | E::Dimension { .. } | E::TooFewPoints { .. } | E::NotFlat { .. } => {
                Failure::Usage(e.into())
            }
            _ => Failure::Runtime(e.into()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}
