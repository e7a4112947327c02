use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] rdvae::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::Core(rdvae::Error::Json(e))
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;
pub const EXIT_IO: i32 = 4;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use rdvae::Error as E;
        match self {
            Self::Config(_) => EXIT_CONFIG,
            Self::Io(_) | Self::Csv(_) => EXIT_IO,
            Self::Core(e) => match e {
                E::Divergence { .. } | E::NonFinite(_) => EXIT_DIVERGENCE,
                E::Io(_) | E::Parse { .. } => EXIT_IO,
                E::Config(_) | E::Shape(_) | E::InvalidArgument(_) | E::Json(_) => EXIT_CONFIG,
            },
        }
    }
}
