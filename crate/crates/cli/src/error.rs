use std::fmt;

/// Failure classes, each with its own process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Threshold,
    Config,
    External,
}

impl Kind {
    pub fn code(self) -> u8 {
        match self {
            Kind::Threshold => 1,
            Kind::Config => 2,
            Kind::External => 3,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub error: anyhow::Error,
}

impl CliError {
    pub fn config(msg: impl fmt::Display) -> Self {
        Self {
            kind: Kind::Config,
            error: anyhow::anyhow!("{msg}"),
        }
    }

    pub fn external(msg: impl fmt::Display) -> Self {
        Self {
            kind: Kind::External,
            error: anyhow::anyhow!("{msg}"),
        }
    }

    pub fn threshold(msg: impl fmt::Display) -> Self {
        Self {
            kind: Kind::Threshold,
            error: anyhow::anyhow!("{msg}"),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Attach a failure class and context to any error.
pub trait Classify<T> {
    fn or_config(self, ctx: impl fmt::Display) -> CliResult<T>;
    fn or_external(self, ctx: impl fmt::Display) -> CliResult<T>;
}

impl<T, E> Classify<T> for Result<T, E>
where
    E: Into<anyhow::Error>,
{
    fn or_config(self, ctx: impl fmt::Display) -> CliResult<T> {
        self.map_err(|e| CliError {
            kind: Kind::Config,
            error: e.into().context(ctx.to_string()),
        })
    }

    fn or_external(self, ctx: impl fmt::Display) -> CliResult<T> {
        self.map_err(|e| CliError {
            kind: Kind::External,
            error: e.into().context(ctx.to_string()),
        })
    }
}
