use std::fmt;

/// Error carrying the process exit code it maps to.
#[derive(Debug)]
pub enum Failure {
    Usage(anyhow::Error),
    Data(anyhow::Error),
    Checkpoint(anyhow::Error),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Data(_) => 3,
            Failure::Checkpoint(_) => 4,
        }
    }

    pub fn usage(msg: impl fmt::Display) -> Self {
        Failure::Usage(anyhow::anyhow!("{msg}"))
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (kind, e) = match self {
            Failure::Usage(e) => ("usage error", e),
            Failure::Data(e) => ("data error", e),
            Failure::Checkpoint(e) => ("checkpoint error", e),
        };
        write!(f, "{kind}: {e:#}")
    }
}

pub type CliResult<T = ()> = Result<T, Failure>;

/// Attaches context and classifies a failure.
pub trait Classify<T> {
    fn data(self, what: impl FnOnce() -> String) -> CliResult<T>;
    fn checkpoint(self, what: impl FnOnce() -> String) -> CliResult<T>;
}

impl<T, E> Classify<T> for Result<T, E>
where
    E: Into<anyhow::Error>,
{
    fn data(self, what: impl FnOnce() -> String) -> CliResult<T> {
        self.map_err(|e| {
            let e: anyhow::Error = e.into();
            // A checkpoint problem surfacing through a data path keeps its code.
            let is_ckpt = matches!(
                e.downcast_ref::<remaster_core::Error>(),
                Some(remaster_core::Error::Checkpoint(_))
            );
            let e = e.context(what());
            if is_ckpt {
                Failure::Checkpoint(e)
            } else {
                Failure::Data(e)
            }
        })
    }

    fn checkpoint(self, what: impl FnOnce() -> String) -> CliResult<T> {
        self.map_err(|e| Failure::Checkpoint(e.into().context(what())))
    }
}
