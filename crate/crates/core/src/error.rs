use std::fmt;

/// Shapes as they appear in error messages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dims(pub Vec<usize>);

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|d| d.to_string()).collect();
        write!(f, "[{}]", parts.join("x"))
    }
}

impl From<&[usize]> for Dims {
    fn from(s: &[usize]) -> Self {
        Dims(s.to_vec())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch {lhs} vs {rhs}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Dims,
        rhs: Dims,
    },
    #[error("{op}: expected {expected}, got shape {got}")]
    BadRank {
        op: &'static str,
        expected: &'static str,
        got: Dims,
    },
    #[error("reshape: cannot view {from} ({from_len} elements) as {to} ({to_len} elements)")]
    ElementCount {
        from: Dims,
        from_len: usize,
        to: Dims,
        to_len: usize,
    },
    #[error("axis {axis} out of range for rank {rank}")]
    AxisOutOfRange { axis: usize, rank: usize },
    #[error("invalid axis permutation {0:?}")]
    BadPermutation(Vec<usize>),
    #[error(
        "{op}: effective kernel {kernel_h}x{kernel_w} exceeds padded input {padded_h}x{padded_w}"
    )]
    KernelTooLarge {
        op: &'static str,
        kernel_h: usize,
        kernel_w: usize,
        padded_h: usize,
        padded_w: usize,
    },
    #[error("maxpool2d: input {h}x{w} smaller than the 2x2 window")]
    PoolTooSmall { h: usize, w: usize },
    #[error("backward: loss must be a scalar, got shape {0}")]
    NonScalarLoss(Dims),
    #[error("channel attention: expected {expected} channels, got {got}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("concat-residual aggregation requires the previous backbone's feature map")]
    MissingBackbone,
    #[error("target class {value} at (n={n}, y={y}, x={x}) is outside [0, {classes})")]
    TargetOutOfRange {
        value: usize,
        n: usize,
        y: usize,
        x: usize,
        classes: usize,
    },
    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("layer {index} ({name}): {reason}")]
    LayerShape {
        index: usize,
        name: String,
        reason: String,
    },
    #[error("input {h}x{w} is not accepted by this model; nearest valid sizes: {suggestions}")]
    IncompatibleInput {
        h: usize,
        w: usize,
        suggestions: String,
    },
    #[error("config line {line}: {msg}")]
    ConfigParse { line: usize, msg: String },
    #[error("{what}: malformed data at byte {offset}: {msg}")]
    Format {
        what: &'static str,
        offset: usize,
        msg: String,
    },
    #[error("palette has no entry for color ({0}, {1}, {2})")]
    UnmappedColor(u8, u8, u8),
    #[error("class map has no entry for label {0}")]
    UnmappedLabel(u8),
    #[error("crop {crop_h}x{crop_w} larger than image {h}x{w}")]
    CropTooLarge {
        crop_h: usize,
        crop_w: usize,
        h: usize,
        w: usize,
    },
    #[error("batch mixes spatial sizes {a} and {b}")]
    MixedSizes { a: Dims, b: Dims },
    #[error("{0}")]
    Dataset(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
