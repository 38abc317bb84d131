use crate::hexworld::CellId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("no navigable cells")]
    NoNavigableCells,
    #[error("invalid bounding box: {0}")]
    InvalidBbox(String),
    #[error("cell size must be positive, got {0}")]
    InvalidCellSize(f64),
    #[error("cell ({}, {}) is not part of the grid", .0.q, .0.r)]
    UnknownCell(CellId),
    #[error("off-grid position ({lat}, {lon})")]
    OffGrid { lat: f64, lon: f64 },
    #[error("degenerate trajectory: {0}")]
    DegenerateTrajectory(String),
    #[error("invalid trajectory point: {0}")]
    InvalidPoint(String),
    #[error("cell ({}, {}) is not a node of the traffic graph", .0.q, .0.r)]
    UnknownNode(CellId),
    #[error("unreachable goal: ({}, {}) -> ({}, {})", .from.q, .from.r, .to.q, .to.r)]
    Unreachable { from: CellId, to: CellId },
    #[error("degenerate range [{min}, {max}]")]
    DegenerateRange { min: f64, max: f64 },
    #[error("wind field has no sample for {0}")]
    MissingWind(String),
    #[error("time {0} h is outside the wind field")]
    WindTimeOutOfRange(f64),
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("episode is over; call reset first")]
    EpisodeOver,
    #[error("route is not edge-connected at step {0}")]
    BrokenRoute(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
