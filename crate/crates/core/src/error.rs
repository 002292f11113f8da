use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("singular orbital elements: {reason} (a = {a}, e = {e}, i = {i})")]
    SingularElements {
        reason: &'static str,
        a: f64,
        e: f64,
        i: f64,
    },

    #[error("invalid orbital elements: {0}")]
    InvalidElements(String),

    #[error("invalid weight matrix: {0}")]
    InvalidWeightMatrix(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("step size underflow at t = {t} s (h = {h:e} s)")]
    StepSizeUnderflow { t: f64, h: f64 },

    #[error("integration failed at t = {t} s: {source}")]
    Integration {
        t: f64,
        #[source]
        source: Box<Error>,
    },
}
