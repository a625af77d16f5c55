use std::fmt;
use std::io;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors emitted by the numerical core, mesh/basis construction, data
/// generation and training.
#[derive(Debug)]
pub enum Error {
    /// Operand shapes are incompatible for the named operation.
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    /// Buffer length does not match the product of the shape extents.
    DataLength { expected: usize, got: usize },
    /// Backward was requested from a node that is not a scalar.
    NonScalarRoot { shape: Vec<usize> },
    /// A parameter or argument is outside its admissible range.
    InvalidArgument { name: &'static str, reason: String },
    /// A value that must be finite is NaN or infinite.
    NonFinite { what: String },
    /// OFF header is missing or malformed.
    OffHeader(String),
    /// OFF face that is not a triangle.
    NonTriangleFace { face: usize, arity: usize },
    /// Vertex index outside `[0, V)`.
    IndexOutOfRange { face: usize, index: usize, vertices: usize },
    /// Triangle with (numerically) zero area.
    DegenerateTriangle { face: usize, area: f64 },
    /// Mesh has more than one connected component.
    Disconnected { components: usize },
    /// Generic OFF parse failure (bad number, truncated file).
    OffParse { line: usize, reason: String },
    /// More eigenpairs requested than the reduced problem provides.
    TooManyEigenpairs { requested: usize, available: usize },
    /// Implicit QL iteration did not converge.
    EigenNoConvergence { index: usize },
    /// Fourier mode count at or above the grid Nyquist limit.
    AboveNyquist { axis: &'static str, modes: usize, points: usize },
    /// Chebyshev tensor product lost rank during orthonormalization.
    RankDeficient { degree: (usize, usize) },
    /// Conjugate gradients failed to reach the requested tolerance.
    CgNoConvergence {
        iterations: usize,
        residual_history: Vec<f64>,
    },
    /// Geometry of a sample and the basis a model was built with disagree.
    GeometryMismatch { expected: String, found: String },
    /// Stored archive or file does not match the expected format.
    Format(String),
    /// Underlying I/O failure.
    Io(io::Error),
    /// JSON (de)serialization failure.
    Json(serde_json::Error),
    /// Optimization produced non-finite values.
    Diverged { step: usize, reason: String },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::ShapeMismatch { op, left, right } => {
                write!(f, "{op}: incompatible shapes {left:?} and {right:?}")
            }
            Self::DataLength { expected, got } => {
                write!(f, "data length {got} does not match shape volume {expected}")
            }
            Self::NonScalarRoot { shape } => {
                write!(f, "backward requires a scalar root, got shape {shape:?}")
            }
            Self::InvalidArgument { name, reason } => write!(f, "invalid {name}: {reason}"),
            Self::NonFinite { what } => write!(f, "non-finite value in {what}"),
            Self::OffHeader(msg) => write!(f, "malformed OFF header: {msg}"),
            Self::NonTriangleFace { face, arity } => {
                write!(f, "face {face} has {arity} vertices, only triangles are supported")
            }
            Self::IndexOutOfRange { face, index, vertices } => {
                write!(f, "face {face} references vertex {index} but the mesh has {vertices}")
            }
            Self::DegenerateTriangle { face, area } => {
                write!(f, "triangle {face} is degenerate (area {area:e})")
            }
            Self::Disconnected { components } => {
                write!(f, "mesh is not connected ({components} components)")
            }
            Self::OffParse { line, reason } => write!(f, "OFF line {line}: {reason}"),
            Self::TooManyEigenpairs { requested, available } => {
                write!(f, "requested {requested} eigenpairs but only {available} are available")
            }
            Self::EigenNoConvergence { index } => {
                write!(f, "tridiagonal QL failed to converge for eigenvalue {index}")
            }
            Self::AboveNyquist { axis, modes, points } => write!(
                f,
                "{modes} modes along {axis} need 2*modes <= points-1, but there are {points} points"
            ),
            Self::RankDeficient { degree } => write!(
                f,
                "Chebyshev product of degree ({}, {}) is linearly dependent on the grid",
                degree.0, degree.1
            ),
            Self::CgNoConvergence { iterations, residual_history } => write!(
                f,
                "conjugate gradients did not converge after {iterations} iterations (last residual {:e})",
                residual_history.last().copied().unwrap_or(f64::NAN)
            ),
            Self::GeometryMismatch { expected, found } => {
                write!(f, "geometry mismatch: model basis {expected}, sample {found}")
            }
            Self::Format(msg) => write!(f, "format error: {msg}"),
            Self::Io(e) => write!(f, "i/o error: {e}"),
            Self::Json(e) => write!(f, "json error: {e}"),
            Self::Diverged { step, reason } => write!(f, "training diverged at step {step}: {reason}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Self::Io(e) => Some(e),
            Self::Json(e) => Some(e),
            _ => None,
        }
    }
}

impl From<io::Error> for Error {
    fn from(e: io::Error) -> Self {
        Self::Io(e)
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Self::Json(e)
    }
}

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidArgument {
        name,
        reason: reason.into(),
    }
}
