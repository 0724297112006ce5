//! Command failures and their process exit codes.

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Success = 0,
    Failure = 1,
    Validation = 2,
    NonConvergence = 3,
    Divergence = 4,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    NonConvergence(String),
    #[error(transparent)]
    Core(#[from] ndebias::Error),
    #[error(transparent)]
    Other(#[from] anyhow::Error),
}

impl CliError {
    pub fn validation(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }

    pub fn code(&self) -> ExitCode {
        use ndebias::Error as E;
        match self {
            CliError::Validation(_) => ExitCode::Validation,
            CliError::NonConvergence(_) => ExitCode::NonConvergence,
            CliError::Core(e) => match e {
                E::Diverged { .. } | E::NonFiniteLoss { .. } => ExitCode::Divergence,
                E::Io { .. }
                | E::Format { .. }
                | E::NonFinite { .. }
                | E::Dimension { .. }
                | E::UnknownAttribute(_)
                | E::Labels { .. }
                | E::Config(_) => ExitCode::Validation,
                E::Invariant(_) | E::Singular { .. } | E::Degenerate(_) => ExitCode::Failure,
            },
            CliError::Other(_) => ExitCode::Failure,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes() {
        assert_eq!(CliError::validation("x").code() as i32, 2);
        assert_eq!(CliError::NonConvergence("x".into()).code() as i32, 3);
        let div = CliError::from(ndebias::Error::Diverged {
            epoch: 3,
            loss: 1.0,
            initial: 0.1,
        });
        assert_eq!(div.code() as i32, 4);
        let missing = CliError::from(ndebias::Error::UnknownAttribute("age".into()));
        assert_eq!(missing.code() as i32, 2);
    }
}
