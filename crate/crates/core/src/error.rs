use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeomError {
    #[error("degenerate rotation: columns are zero or parallel")]
    DegenerateRotation,
    #[error("box half-extents must be strictly positive, got {0:?}")]
    NonPositiveExtent([f64; 3]),
    #[error("non-finite geometry")]
    NonFinite,
}

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("degenerate scene bounds")]
    DegenerateBounds,
    #[error("cell size must be positive, got {0}")]
    BadCellSize(f64),
    #[error("duplicate object id `{0}`")]
    DuplicateId(String),
    #[error("object `{0}` lies outside the scene bounds")]
    OutOfBounds(String),
    #[error("invalid distance range [{0}, {1}]")]
    BadDistanceRange(f64, f64),
    #[error("no valid placement found after {0} attempts")]
    PlacementFailed(usize),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error("scene file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Raised when the surrogate integrator meets non-finite inputs.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("simulation fault: {0}")]
pub struct SimFault(pub &'static str);

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("endpoint {0:?} is blocked or outside the grid")]
    InvalidEndpoint((i64, i64)),
    #[error("no path between {from:?} and {to:?}")]
    NoPath {
        from: (usize, usize),
        to: (usize, usize),
    },
    #[error("trajectory needs at least two points")]
    TooShort,
    #[error("speed must be positive, got {0}")]
    BadSpeed(f64),
    #[error("could not generate a trajectory inside the bounds after {0} attempts")]
    GenerationFailed(usize),
    #[error("trajectory timestamps must be increasing and start at 0")]
    BadTimestamps,
    #[error("unknown object `{0}`")]
    UnknownObject(String),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("plan file: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("trajectory csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum NetError {
    #[error("layer shape mismatch: {0}")]
    Shape(String),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{0}")]
    Invalid(String),
    #[error("pose database is empty or missing for task {0}")]
    MissingPoseDatabase(&'static str),
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
