//! Crate-wide error type.

/// Errors surfaced by the localization pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Two points that must be distinct coincide, or a direction vector has
    /// zero length, or an anchor layout makes a solve singular.
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    /// An NLOS path illuminates the back side of a RIS (cos(theta)*cos(phi) <= 0).
    #[error("shadowed path: angular factor {angular_factor} is not positive")]
    ShadowedPath { angular_factor: f64 },

    /// Requested more orthogonal codes than the sequence length supports.
    #[error("code capacity exceeded: index {index} with {symbols} symbols")]
    CodeCapacity { index: usize, symbols: usize },

    /// Index outside the valid range for the addressed collection.
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    /// A projected vector carries no usable signal energy.
    #[error("no signal: path {path_index} at receiver {rx_index}")]
    NoSignal { path_index: usize, rx_index: usize },

    /// Fewer than three usable receivers for a position solve.
    #[error("under-determined geometry: {usable} usable receivers, need at least 3")]
    UnderDetermined { usable: usize },

    /// The closed-form initializer produced no viable candidate.
    #[error("initializer failed: {0}")]
    InitFailure(String),

    /// Two position candidates fit the measurements comparably well and the
    /// prior region does not discriminate between them.
    #[error(
        "ambiguous geometry: candidate objectives {objective_a} and {objective_b} are comparable"
    )]
    AmbiguousGeometry { objective_a: f64, objective_b: f64 },

    /// Configuration file could not be parsed.
    #[error("config parse error in {path}: {message}")]
    ConfigParse { path: String, message: String },

    /// Configuration violates one or more invariants.
    #[error("invalid configuration:\n{}", .0.join("\n"))]
    InvalidConfig(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
