use sglmm_core::SglmmError;

/// Failures sorted by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad input, configuration or files: exit 2.
    Input(String),
    /// The statistics did not work out: exit 3.
    Statistical(String),
}

pub const EXIT_INPUT: u8 = 2;
pub const EXIT_STATISTICAL: u8 = 3;

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Statistical(_) => EXIT_STATISTICAL,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) | CliError::Statistical(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<SglmmError> for CliError {
    fn from(e: SglmmError) -> Self {
        match e {
            SglmmError::InvalidInput(_)
            | SglmmError::Unsupported(_)
            | SglmmError::Parse { .. }
            | SglmmError::RankDeficient { .. }
            | SglmmError::Io(_) => CliError::Input(e.to_string()),
            _ => CliError::Statistical(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Input(format!("JSON: {e}"))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Input(format!("CSV: {e}"))
    }
}
