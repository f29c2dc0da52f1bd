use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A normal or information matrix has no inverse.
    #[error("singular matrix: eigenvalue {eigenvalue:e} is below the positivity floor {floor:e}")]
    SingularMatrix { eigenvalue: f64, floor: f64 },

    /// The model carries no excitation, e.g. an all-zero current block.
    #[error("singular model: {0}")]
    SingularModel(String),

    /// The two smallest eigenvalues of the augmented information matrix coincide.
    #[error("total least squares solution is not unique (eigenvalue gap {gap:e})")]
    NonUniqueSolution { gap: f64 },

    /// The last component of the null vector vanished; no finite parameter fits.
    #[error("total least squares solution is vertical (no finite parameter explains the data)")]
    VerticalSolution,

    #[error("recursive total least squares has no estimate yet (batch {batch})")]
    ColdStart { batch: usize },

    #[error("numerical failure at batch {batch}: {detail}")]
    NumericalFailure { batch: usize, detail: String },

    #[error("undefined SNR: {0}")]
    UndefinedSnr(String),

    #[error("parse error at line {line}: {detail}")]
    Parse { line: usize, detail: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by bad input or configuration rather than numerics.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_)
                | Error::Parse { .. }
                | Error::Format(_)
                | Error::Config(_)
                | Error::Io(_)
                | Error::UndefinedSnr(_)
        )
    }
}
