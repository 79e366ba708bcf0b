use mgaopt::bodies::CatalogError;
use mgaopt::capture::CaptureError;
use mgaopt::dfet::DfetError;
use mgaopt::impulsive::ImpulsiveError;
use mgaopt::phasing::PhasingError;
use mgaopt::sep::SepError;
use mgaopt::sot::SotError;
use mgaopt::time::DateError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("no solution: {0}")]
    NoSolution(String),
    #[error("computation failed: {0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::NoSolution(_) | CliError::Failed(_) => 1,
            CliError::Config(_) | CliError::Io(_) => 2,
        }
    }
}

impl From<CatalogError> for CliError {
    fn from(e: CatalogError) -> Self {
        match e {
            CatalogError::KeplerDiverged { .. } => CliError::Failed(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<DateError> for CliError {
    fn from(e: DateError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<SepError> for CliError {
    fn from(e: SepError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<PhasingError> for CliError {
    fn from(e: PhasingError) -> Self {
        match e {
            PhasingError::Catalog(c) => c.into(),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<SotError> for CliError {
    fn from(e: SotError) -> Self {
        match e {
            SotError::Catalog(c) => c.into(),
            SotError::NoSolution { .. } | SotError::NoIntersection(_) => CliError::NoSolution(e.to_string()),
            SotError::Infeasible { .. } | SotError::Invalid(_) => CliError::Config(e.to_string()),
        }
    }
}

impl From<CaptureError> for CliError {
    fn from(e: CaptureError) -> Self {
        match e {
            CaptureError::Catalog(c) => c.into(),
            CaptureError::NoCapture { .. } => CliError::NoSolution(e.to_string()),
            CaptureError::SubEscape { .. } | CaptureError::Invalid(_) => CliError::Config(e.to_string()),
        }
    }
}

impl From<ImpulsiveError> for CliError {
    fn from(e: ImpulsiveError) -> Self {
        match e {
            ImpulsiveError::Catalog(c) => c.into(),
            ImpulsiveError::Invalid(_) | ImpulsiveError::Sizing { .. } => CliError::Config(e.to_string()),
            ImpulsiveError::LegInfeasible { .. } => CliError::NoSolution(e.to_string()),
            _ => CliError::Failed(e.to_string()),
        }
    }
}

impl From<DfetError> for CliError {
    fn from(e: DfetError) -> Self {
        match e {
            DfetError::Catalog(c) => c.into(),
            DfetError::Invalid(_) | DfetError::Sep(_) => CliError::Config(e.to_string()),
            _ => CliError::Failed(e.to_string()),
        }
    }
}
