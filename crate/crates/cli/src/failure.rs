use vulnwatch_core::report::{FailureClass, PipelineError};

/// An error plus the class that picks the exit code.
#[derive(Debug)]
pub struct Failure {
    pub class: FailureClass,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self.class {
            FailureClass::Usage => 1,
            FailureClass::Data => 2,
            FailureClass::External => 3,
        }
    }
}

pub fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure { class: FailureClass::Usage, error: e.into() }
}

pub fn data(e: impl Into<anyhow::Error>) -> Failure {
    Failure { class: FailureClass::Data, error: e.into() }
}

pub fn external(e: impl Into<anyhow::Error>) -> Failure {
    Failure { class: FailureClass::External, error: e.into() }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure { class: e.class(), error: e.into() }
    }
}

pub type CliResult<T = ()> = Result<T, Failure>;
