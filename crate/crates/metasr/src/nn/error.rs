use thiserror::Error;

/// Errors from tensor construction, graph ops, and the optimizer.
#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape {shape:?} holds {expected} values but {got} were provided")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op} expects a rank-{expected} input, got shape {shape:?}")]
    BadRank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("conv2d: input has {input_channels} channels but weight expects {weight_channels} (input {input_shape:?}, weight {weight_shape:?})")]
    ChannelMismatch {
        input_channels: usize,
        weight_channels: usize,
        input_shape: Vec<usize>,
        weight_shape: Vec<usize>,
    },
    #[error("conv2d kernel size must be odd, got {0}")]
    EvenKernel(usize),
    #[error("conv2d output would be empty for input {input:?}, kernel {kernel}, stride {stride}, padding {padding}")]
    EmptyConvOutput {
        input: Vec<usize>,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    #[error("batch_norm2d in training mode needs at least 2 values per channel, got {0}")]
    DegenerateBatch(usize),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("backward was already called on this graph; rebuild the graph before differentiating again")]
    BackwardConsumed,
    #[error("no gradient for parameter \"{0}\"; run backward on a loss that reaches it")]
    MissingGradient(String),
    #[error("unknown parameter \"{0}\"")]
    UnknownParameter(String),
    #[error("parameter \"{name}\" has shape {param:?} but the store provides {stored:?}")]
    ParameterShape {
        name: String,
        param: Vec<usize>,
        stored: Vec<usize>,
    },
}

/// Errors from reading or writing `MSRG` checkpoint files.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic bytes: expected \"MSRG\", got {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {got} (this build reads version {supported})")]
    VersionMismatch { got: u8, supported: u8 },
    #[error("truncated checkpoint: {0}")]
    Truncated(String),
    #[error("entry name is not valid UTF-8")]
    BadName,
    #[error("duplicate entry \"{0}\"")]
    DuplicateEntry(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
