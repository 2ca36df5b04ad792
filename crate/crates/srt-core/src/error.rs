//! Error type shared by every module in the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, SrtError>;

#[derive(Debug, Error)]
pub enum SrtError {
    /// Tensor shapes are incompatible with the requested kernel.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A kernel produced (or was handed) a NaN or infinity.
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    /// Malformed PPM/PGM data.
    #[error("image format error: {0}")]
    ImageFormat(String),

    /// Malformed or inconsistent weight container.
    #[error("weight container error: {0}")]
    Container(String),

    /// Requested tap layer is outside the model depth.
    #[error("layer {layer} out of range; valid range is 0..={depth}")]
    Layer { layer: usize, depth: usize },

    /// A shift exceeds the image extent.
    #[error("shift ({du},{dv}) exceeds image extent {h}x{w}")]
    ShiftExtent { du: i32, dv: i32, h: usize, w: usize },

    /// A shift violates the half-patch magnitude bound.
    #[error(
        "shift ({du},{dv}) exceeds the half-patch bound (|du| <= {max_du}, |dv| <= {max_dv}); \
         pass the override flag to allow it"
    )]
    ShiftBound { du: i32, dv: i32, max_du: i32, max_dv: i32 },

    /// A pooled cell or pixel received no valid samples.
    #[error("coverage error: {0}")]
    Coverage(String),

    /// Covariance rank too low for a 3-component basis.
    #[error("degenerate basis: covariance rank {rank} < 3")]
    DegenerateBasis { rank: usize },

    /// Statistic not supported by the requested execution path.
    #[error("unsupported statistic for this path: {0}")]
    UnsupportedStatistic(String),

    /// Field is in the wrong accumulation state for the operation.
    #[error("field state error: {0}")]
    FieldState(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("header JSON error: {0}")]
    Json(#[from] serde_json::Error),
}
