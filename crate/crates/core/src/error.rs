use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("tensor has no slices or a slice of width zero")]
    Empty,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite entry in slice {slice} at ({row}, {col})")]
    NonFinite { slice: usize, row: usize, col: usize },

    #[error("slice index {index} out of range for {len} slices")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("column count mismatch: {left} vs {right}")]
    ColumnMismatch { left: usize, right: usize },

    #[error("tensor has zero total norm")]
    ZeroTensor,

    #[error("factor B_{slice} has zero norm")]
    DegenerateFactor { slice: usize },

    #[error("rank {rank} exceeds width {width} of slice {slice}")]
    RankExceedsWidth { rank: usize, width: usize, slice: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}
