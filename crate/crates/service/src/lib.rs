//! HTTP service that hands out pairs, records responses durably and serves
//! live scores.

mod app;
pub mod config;
pub mod error;
pub mod store;

pub use app::{build, run, start, AppState, Server};
pub use config::{LiveRating, ServiceConfig};
pub use error::{ApiError, Result, ServiceError};
pub use store::{read_log, Choice, ResponseLog, ResponseRecord, Snapshot};
