use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParam { name: &'static str, reason: String },
    #[error("schedule: {0}")]
    Schedule(String),
    #[error("geometry: {0}")]
    Geometry(String),
    #[error("flow: {0}")]
    Flow(String),
    #[error("bifurcation-adjacent trajectory at t = {t}, x = ({x}, {y})")]
    Bifurcation { t: f64, x: f64, y: f64 },
    #[error("empty arrival set: {0}")]
    EmptyArrivals(String),
    #[error("sde: {0}")]
    Sde(String),
    #[error("solver: {0}")]
    Solver(String),
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
