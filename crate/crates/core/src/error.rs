use thiserror::Error;

/// Errors raised by the barrier toolkit.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An input lies outside the set on which an operation is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// Malformed or inconsistent configuration (degenerate boxes, bad dimensions, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Non-finite values or singular linear algebra.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A standing assumption of the construction does not hold for the given inputs.
    #[error("Assumption {which} violated: {detail}")]
    Assumption { which: u8, detail: String },

    /// The parameter synthesis could not produce a certified tuple.
    #[error("synthesis failure: {0}")]
    Synthesis(String),

    /// The zero-order-hold margin for the requested period exceeds the certified margin.
    #[error(
        "sampling period too large: eta(T) = {eta_t:.6} exceeds eta_bar = {eta_bar:.6}; \
         largest admissible period is T_max = {t_max:.6e} s"
    )]
    SamplingTooLarge { eta_t: f64, eta_bar: f64, t_max: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite {what}")))
    }
}
