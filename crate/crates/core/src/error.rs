use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes are incompatible.
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    /// An operation that needs at least one element received none.
    Empty(&'static str),
    /// A caller-supplied argument is outside its domain.
    InvalidArgument(String),
    /// A value that must stay finite became NaN or infinite.
    NonFinite { context: String },
    /// The caller broke an API contract, e.g. reused a stale forward cache.
    Contract(String),
    /// Statistical input is degenerate (too few samples, zero variance).
    Degenerate(&'static str),
    /// A toy trajectory left the admissible region.
    Diverged { step: usize, value: f64 },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { op, left, right } => write!(
                f,
                "shape mismatch in {op}: {}x{} vs {}x{}",
                left.0, left.1, right.0, right.1
            ),
            Error::Empty(what) => write!(f, "{what} must not be empty"),
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::NonFinite { context } => write!(f, "non-finite value in {context}"),
            Error::Contract(msg) => write!(f, "contract violation: {msg}"),
            Error::Degenerate(what) => write!(f, "degenerate input: {what}"),
            Error::Diverged { step, value } => {
                write!(f, "trajectory diverged at step {step} (w = {value})")
            }
        }
    }
}

impl core::error::Error for Error {}
