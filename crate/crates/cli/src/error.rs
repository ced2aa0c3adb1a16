use std::fmt;

use pnrcal::CalibError;

/// Process exit codes. Stable across releases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    /// Anything not covered below (I/O, unexpected numerical failure).
    Other,
    /// Bad command line or configuration file.
    Config,
    /// A histogram fit failed, or a closure test completed for too few seeds.
    Fit,
    /// An estimator hit an uninformative bin. Reports are still written.
    Uninformative,
}

impl ExitKind {
    pub fn code(self) -> u8 {
        match self {
            ExitKind::Other => 1,
            ExitKind::Config => 2,
            ExitKind::Fit => 3,
            ExitKind::Uninformative => 4,
        }
    }

    fn label(self) -> &'static str {
        match self {
            ExitKind::Other => "runtime",
            ExitKind::Config => "config",
            ExitKind::Fit => "fit",
            ExitKind::Uninformative => "uninformative_bin",
        }
    }
}

/// Error carrying its exit code and the fields of its stderr line.
#[derive(Debug)]
pub struct CliError {
    pub kind: ExitKind,
    pub field: Option<String>,
    pub message: String,
}

impl CliError {
    pub fn new(kind: ExitKind, message: impl Into<String>) -> Self {
        Self {
            kind,
            field: None,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(ExitKind::Config, message)
    }

    pub fn config_field(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: Some(field.into()),
            ..Self::config(message)
        }
    }

    pub fn fit(message: impl Into<String>) -> Self {
        Self::new(ExitKind::Fit, message)
    }

    /// The single `key=value` diagnostic line written to stderr.
    pub fn diagnostic(&self) -> String {
        let mut line = format!("error={}", self.kind.label());
        if let Some(field) = &self.field {
            line.push_str(&format!(" field={field}"));
        }
        line.push_str(&format!(" message={}", quote(&self.message)));
        line
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<CalibError> for CliError {
    fn from(e: CalibError) -> Self {
        let kind = match &e {
            CalibError::Config(_)
            | CalibError::Parse(_)
            | CalibError::Csv(_)
            | CalibError::Json(_) => ExitKind::Config,
            CalibError::FitFailure { .. } | CalibError::Initialization { .. } => ExitKind::Fit,
            CalibError::UninformativeBin { .. } => ExitKind::Uninformative,
            _ => ExitKind::Other,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::new(ExitKind::Other, e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::new(ExitKind::Other, e.to_string())
    }
}

/// Quotes a value for a `key=value` line, flattening newlines.
pub fn quote(s: &str) -> String {
    let flat = s.split_whitespace().collect::<Vec<_>>().join(" ");
    format!("\"{}\"", flat.replace('\\', "\\\\").replace('"', "\\\""))
}

pub type CliResult<T> = std::result::Result<T, CliError>;
