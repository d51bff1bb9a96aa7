use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config error:\n  {0}")]
    Config(String),

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<StageFailure>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum StageFailure {
    #[error(transparent)]
    Core(#[from] h2r_core::Error),
    #[error(transparent)]
    Model(#[from] h2r_model::Error),
    #[error("{0}")]
    Other(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// 0 success, 2 configuration, 3 stage failure, 4 remote transport.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Io { .. } => 3,
            Error::Stage { source, .. } => match source.as_ref() {
                StageFailure::Core(e) => core_code(e),
                StageFailure::Model(h2r_model::Error::Core(e)) => core_code(e),
                StageFailure::Model(h2r_model::Error::Config(_)) => 2,
                _ => 3,
            },
        }
    }
}

fn core_code(e: &h2r_core::Error) -> i32 {
    match e.root() {
        h2r_core::Error::Config(_) => 2,
        h2r_core::Error::Transport { .. } | h2r_core::Error::Remote { .. } => 4,
        _ => 3,
    }
}

/// Tag a stage's failure with its name.
pub trait StageContext<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T, E: Into<StageFailure>> StageContext<T> for std::result::Result<T, E> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| Error::Stage { stage, source: Box::new(e.into()) })
    }
}
