//! Command failures and their process exit codes.

use std::fmt;

use crate::checkpoint::CheckpointError;
use crate::config::{CheckError, ConfigError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Other,
    Config,
    Data,
    Numerical,
    Checkpoint,
    Dimension,
    Gradcheck,
}

impl Kind {
    pub fn exit_code(self) -> i32 {
        match self {
            Kind::Other => 1,
            Kind::Config => 2,
            Kind::Data => 3,
            Kind::Numerical => 4,
            Kind::Checkpoint => 5,
            Kind::Dimension => 6,
            Kind::Gradcheck => 7,
        }
    }
}

#[derive(Debug)]
pub struct Failure {
    pub kind: Kind,
    pub message: String,
}

macro_rules! ctor {
    ($name:ident, $kind:ident) => {
        pub fn $name(e: impl fmt::Display) -> Self {
            Failure {
                kind: Kind::$kind,
                message: e.to_string(),
            }
        }
    };
}

impl Failure {
    ctor!(other, Other);
    ctor!(config, Config);
    ctor!(data, Data);
    ctor!(numerical, Numerical);
    ctor!(checkpoint, Checkpoint);
    ctor!(dimension, Dimension);
    ctor!(gradcheck, Gradcheck);

    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::config(e)
    }
}

impl From<CheckError> for Failure {
    fn from(e: CheckError) -> Self {
        match e {
            CheckError::Config(e) => Failure::config(e),
            CheckError::Data(e) => Failure::data(e),
        }
    }
}

impl From<CheckpointError> for Failure {
    fn from(e: CheckpointError) -> Self {
        Failure::checkpoint(e)
    }
}
