use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand extents do not fit the operation.
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// A precondition on an argument value was violated.
    Argument(String),
    /// Training produced a non-finite loss.
    Diverged { iteration: usize, epoch: usize },
}

impl Error {
    pub(crate) fn dimension(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Self::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn argument(msg: impl Into<String>) -> Self {
        Self::Argument(msg.into())
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Dimension { op, lhs, rhs } => {
                write!(f, "dimension error in {op}: lhs={lhs:?}, rhs={rhs:?}")
            }
            Self::Argument(msg) => write!(f, "invalid argument: {msg}"),
            Self::Diverged { iteration, epoch } => write!(
                f,
                "training diverged (non-finite loss) at iteration {iteration}, epoch {epoch}"
            ),
        }
    }
}

impl core::error::Error for Error {}
