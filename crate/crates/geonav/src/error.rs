use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("coordinate out of range: {name} = {value}")]
    CoordinateRange { name: &'static str, value: f64 },

    #[error("point outside field coverage: lon {lon_deg:.6}, lat {lat_deg:.6}")]
    OutOfCoverage { lon_deg: f64, lat_deg: f64 },

    #[error("grid parse error at line {line}: {msg}")]
    GridParse { line: usize, msg: String },

    #[error("grid geometry violation: {0}")]
    GridGeometry(String),

    #[error("degenerate task: {0}")]
    DegenerateTask(String),

    #[error("heading prediction indeterminate (numerator and denominator both vanish)")]
    IndeterminateHeading,

    #[error("task sampling exhausted after {attempts} attempts")]
    SamplingExhausted { attempts: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("architecture mismatch: expected {expected}, got {got}")]
    ArchMismatch { expected: String, got: String },

    #[error("episode already finished; call reset")]
    EpisodeDone,

    #[error("no active episode; call reset first")]
    NoEpisode,

    #[error("empty battery: no episode records")]
    EmptyBattery,

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("scenario assertion failed:\n{0}")]
    ScenarioFailed(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("toml error in {path}: {msg}")]
    Toml { path: String, msg: String },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Exit code contract: 2 for runtime aborts (non-finite numerics), 1 for
    /// everything else that reaches the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFinite(_) => 2,
            _ => 1,
        }
    }
}
