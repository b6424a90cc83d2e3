use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {what}: expected {expected}, found {found}")]
    Shape {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    /// `I - 2λA` is singular for the chosen step; the exact update cannot be formed.
    #[error("singular metric update (det of 2x2 core = {det:e})")]
    SingularUpdate { det: f64 },
    #[error("neighbor store is empty")]
    EmptyStore,
    #[error("query error: {0}")]
    Query(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid example: {0}")]
    InvalidExample(String),
}
