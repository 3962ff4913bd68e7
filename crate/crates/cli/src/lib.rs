//! Library surface of the experiment CLI, kept separate from argument
//! parsing so integration tests can drive the commands directly.

pub mod commands;
pub mod config;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Encoder(#[from] idattn::encoder::EncoderError),
    #[error(transparent)]
    Net(#[from] idattn::net::NetError),
    #[error(transparent)]
    Linalg(#[from] idattn::linalg::LinalgError),
    #[error(transparent)]
    Ident(#[from] idattn::identifiability::IdentError),
    #[error(transparent)]
    Data(#[from] idattn::data::DataError),
    #[error(transparent)]
    Train(#[from] idattn::train::TrainError),
}
