use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    Shape { expected: (usize, usize), actual: (usize, usize) },
    #[error("image {width}x{height} is smaller than the {kernel}x{kernel} kernel")]
    TooSmall { width: usize, height: usize, kernel: usize },
    #[error("point is behind the camera (depth {depth})")]
    BehindCamera { depth: f64 },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("node {node_id} has no pose for frame {frame}")]
    MissingNodePose { node_id: u32, frame: usize },
    #[error("scene has no primitives")]
    EmptyScene,
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("restoration of trajectory {trajectory} failed: {reason}")]
    Restorer { trajectory: usize, reason: String },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
