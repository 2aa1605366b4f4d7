//! Kinematic search for a coarse path and its segmentation into an initial
//! guess for the trajectory optimizer.

mod gridmap;
mod search;
mod segment;

use serde::Serialize;

pub use gridmap::GridMap;
pub use search::{path_is_free, search, CoarsePath, PathPoint, SearchParams, Vehicle};
pub use segment::{segment_path, InitialGuess, SegmentationParams, MIN_RUN_LENGTH};

use crate::error::Result;

#[derive(Serialize)]
struct DebugPoint {
    x: f64,
    y: f64,
    theta: f64,
    eta: i32,
}

/// Path as a JSON polyline with direction labels.
pub fn path_to_json(path: &CoarsePath) -> Result<String> {
    let pts: Vec<DebugPoint> = path
        .points
        .iter()
        .map(|p| DebugPoint {
            x: p.pose.x,
            y: p.pose.y,
            theta: p.pose.theta,
            eta: p.dir.eta() as i32,
        })
        .collect();
    Ok(serde_json::to_string(&pts)?)
}
