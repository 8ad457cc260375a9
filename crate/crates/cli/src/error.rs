use std::process::ExitCode;

use citsci_core::onboarding::OnboardingError;
use citsci_core::storage::StorageError;
use citsci_core::workload::WorkloadError;
use citsci_core::PlatformError;
use thiserror::Error;

/// Failure classes, each with its own exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Class {
    /// Malformed input files, flags or configuration.
    Input = 3,
    /// A named campaign, session or invite does not exist.
    NotFound = 4,
    /// The request conflicts with current state (published, locked, ...).
    Conflict = 5,
    /// Reading or writing the data directory or output failed.
    Io = 6,
    /// The simulator's service or client failed.
    Service = 7,
}

#[derive(Debug, Error)]
#[error("{message}")]
pub struct CliError {
    pub class: Class,
    pub message: String,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn new(class: Class, message: impl Into<String>) -> Self {
        Self {
            class,
            message: message.into(),
        }
    }

    pub fn input(message: impl Into<String>) -> Self {
        Self::new(Class::Input, message)
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.class as u8)
    }
}

impl From<PlatformError> for CliError {
    fn from(e: PlatformError) -> Self {
        let class = match &e {
            PlatformError::Onboarding(o) => match o {
                OnboardingError::UnknownCampaign(_)
                | OnboardingError::UnknownInvite
                | OnboardingError::UnknownSession(_) => Class::NotFound,
                OnboardingError::InvalidConfig(_)
                | OnboardingError::MissingDisclosure { .. }
                | OnboardingError::UnknownChannel(_) => Class::Input,
                _ => Class::Conflict,
            },
            PlatformError::Workload(WorkloadError::UnknownLease(_)) => Class::NotFound,
            PlatformError::Workload(_) | PlatformError::Store(_) | PlatformError::ConsentMissing(_) => Class::Conflict,
            PlatformError::Analytics(_) | PlatformError::Corpus(_) => Class::Input,
            PlatformError::Storage(s) => return s_error(s),
        };
        Self::new(class, e.to_string())
    }
}

fn s_error(e: &StorageError) -> CliError {
    let class = match e {
        StorageError::Locked(_) => {
            return CliError::new(
                Class::Conflict,
                format!("{e}; stop the server or use the HTTP API while it is running"),
            )
        }
        StorageError::DatasetMissing(_) => Class::NotFound,
        StorageError::DatasetMismatch { .. } | StorageError::DatasetInUse(_) => Class::Conflict,
        StorageError::Corpus(_) => Class::Input,
        StorageError::Io { .. } | StorageError::CorruptJournal { .. } | StorageError::CorruptSnapshot(_) => Class::Io,
    };
    CliError::new(class, e.to_string())
}

impl From<StorageError> for CliError {
    fn from(e: StorageError) -> Self {
        s_error(&e)
    }
}

impl From<citsci_core::corpus::CorpusError> for CliError {
    fn from(e: citsci_core::corpus::CorpusError) -> Self {
        let class = match e {
            citsci_core::corpus::CorpusError::Io { .. } => Class::Io,
            _ => Class::Input,
        };
        Self::new(class, e.to_string())
    }
}
