use thiserror::Error;

/// Crate-wide error type. Shape problems carry the offending axis so callers
/// can report which dimension disagreed.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch on {axis} axis (expected {expected}, got {got})")]
    ShapeMismatch {
        op: &'static str,
        axis: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("window underflow: {len} frames on the {axis} axis, kernel needs {kernel}")]
    WindowUnderflow {
        axis: &'static str,
        len: usize,
        kernel: usize,
    },
    #[error("input too short for pad-free encoder: {got} frames, minimum {min}")]
    InputTooShort { got: usize, min: usize },
    #[error("audio shorter than window: {frames} frames < F_0 = {window}")]
    AudioTooShort { frames: usize, window: usize },
    #[error("fast scheme requires pad-free encoder")]
    PadFreeRequired,
    #[error("insufficient samples: waveform has {samples} samples, one frame needs {frame}")]
    InsufficientSamples { samples: usize, frame: usize },
    #[error("config error: {0}")]
    Config(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
