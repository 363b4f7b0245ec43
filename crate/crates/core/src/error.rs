use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix dimension must be at least 2, got {0}")]
    DimTooSmall(usize),

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimMismatch { expected: usize, found: usize },

    #[error("operator dimension {m} exceeds the cap of {cap}")]
    DimCapExceeded { m: usize, cap: usize },

    #[error("matrix is not symmetric: |A[{i}][{j}] - A[{j}][{i}]| = {gap:e}")]
    NotSymmetric { i: usize, j: usize, gap: f64 },

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("empty panel")]
    EmptyPanel,

    #[error("panel shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("frequency {value} at SNP {snp}, population {pop} is outside [0, 1]")]
    NotAFrequency {
        snp: String,
        pop: String,
        value: f64,
    },

    #[error("empty pairing")]
    EmptyPairing,

    #[error("pair index {index} out of range for a panel of {n} SNPs")]
    PairIndexOutOfRange { index: usize, n: usize },

    #[error("SNP index {0} appears in more than one pair")]
    RepeatedPairIndex(usize),

    #[error("sample size {size} at SNP {snp}, population {pop} is below 2")]
    SampleSizeTooSmall { snp: String, pop: String, size: u32 },

    #[error("pairing infeasible: largest chromosome exceeds the others combined (counts: {0})")]
    PairingInfeasible(String),

    #[error("subspace basis is rank deficient (Gram condition number {0:e})")]
    RankDeficient(f64),

    #[error("subspace basis element {index} is not in the zero-sum space (entry sum {sum:e})")]
    NotInVSpace { index: usize, sum: f64 },

    #[error("W-hat does not match W(V-hat): Frobenius gap {0:e}")]
    InconsistentInputs(f64),

    #[error("exhaustive root search supports at most {cap} populations, got {m}")]
    TooManyPopulations { m: usize, cap: usize },

    #[error("invalid tree: {0}")]
    InvalidTree(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{path}, line {line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn parse(path: &str, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.to_string(),
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
