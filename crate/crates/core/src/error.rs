use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A row of an input file could not be parsed. `line` is 1-based.
    #[error("{}:{line}: field `{field}`: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        field: String,
        message: String,
    },

    #[error("duplicate txid {0}")]
    DuplicateTxid(String),

    #[error("output {txid}:{vout} is spent by both {first} and {second}")]
    DoubleSpend {
        txid: String,
        vout: u32,
        first: String,
        second: String,
    },

    #[error("transaction {spender} references missing output {txid}:{vout}")]
    MissingOutput {
        spender: String,
        txid: String,
        vout: u32,
    },

    #[error("transaction {0} creates more value than it spends")]
    ValueCreation(String),

    #[error("unknown address {0}")]
    UnknownAddress(String),

    #[error("no price for {date}; nearest available: {nearest}")]
    MissingPrice { date: String, nearest: String },

    #[error("empty seed set")]
    EmptySeeds,

    #[error("empty known set")]
    EmptyKnownSet,

    #[error("label source collision: independent labels share source tag `{0}` with detector labels")]
    LabelSourceCollision(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing output of stage `{stage}` (expected {})", path.display())]
    MissingStage { stage: String, path: PathBuf },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable snake_case name of the variant.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::DuplicateTxid(_) => "duplicate_txid",
            Error::DoubleSpend { .. } => "double_spend",
            Error::MissingOutput { .. } => "missing_output",
            Error::ValueCreation(_) => "value_creation",
            Error::UnknownAddress(_) => "unknown_address",
            Error::MissingPrice { .. } => "missing_price",
            Error::EmptySeeds => "empty_seeds",
            Error::EmptyKnownSet => "empty_known_set",
            Error::LabelSourceCollision(_) => "label_source_collision",
            Error::Config(_) => "config",
            Error::MissingStage { .. } => "missing_stage",
            Error::Io { .. } => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn parse(
        path: impl Into<PathBuf>,
        line: usize,
        field: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
