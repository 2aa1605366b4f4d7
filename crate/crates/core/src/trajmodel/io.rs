//! JSON trajectory files.
//!
//! ```json
//! {"agents": [{"segments": [{"eta": 1, "T": 0.8, "M": 2,
//!   "coeffs": [[[x0..x5], [y0..y5]], [[x0..x5], [y0..y5]]]}]}]}
//! ```
//!
//! Coefficients are in ascending monomial order. Floats are written with the
//! shortest representation that parses back to the same bits.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AgentTrajectory, Coeffs, Direction, PolyPiece, Segment};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct TrajectoryFile {
    agents: Vec<AgentRecord>,
}

#[derive(Serialize, Deserialize)]
struct AgentRecord {
    segments: Vec<SegmentRecord>,
}

#[derive(Serialize, Deserialize)]
struct SegmentRecord {
    eta: Direction,
    #[serde(rename = "T")]
    duration: f64,
    #[serde(rename = "M")]
    pieces: usize,
    coeffs: Vec<[[f64; 6]; 2]>,
}

fn to_record(tr: &AgentTrajectory) -> AgentRecord {
    AgentRecord {
        segments: tr
            .segments()
            .iter()
            .map(|s| SegmentRecord {
                eta: s.eta(),
                duration: s.piece_duration(),
                pieces: s.piece_count(),
                coeffs: s
                    .pieces()
                    .iter()
                    .map(|p| {
                        let c = p.coeffs();
                        [
                            std::array::from_fn(|i| c[(i, 0)]),
                            std::array::from_fn(|i| c[(i, 1)]),
                        ]
                    })
                    .collect(),
            })
            .collect(),
    }
}

fn from_record(rec: AgentRecord) -> Result<AgentTrajectory> {
    let segments = rec
        .segments
        .into_iter()
        .map(|s| {
            if s.coeffs.len() != s.pieces {
                return Err(Error::Input(format!(
                    "segment declares M = {} but has {} coefficient blocks",
                    s.pieces,
                    s.coeffs.len()
                )));
            }
            let pieces = s
                .coeffs
                .iter()
                .map(|[x, y]| PolyPiece::new(Coeffs::from_fn(|i, a| if a == 0 { x[i] } else { y[i] }), s.duration))
                .collect::<Result<Vec<_>>>()?;
            Segment::new(s.eta, pieces)
        })
        .collect::<Result<Vec<_>>>()?;
    AgentTrajectory::new(segments)
}

pub fn trajectories_to_json(trajs: &[AgentTrajectory]) -> String {
    let file = TrajectoryFile {
        agents: trajs.iter().map(to_record).collect(),
    };
    serde_json::to_string_pretty(&file).expect("trajectory records always serialize")
}

pub fn trajectories_from_json(s: &str) -> Result<Vec<AgentTrajectory>> {
    let file: TrajectoryFile = serde_json::from_str(s)?;
    file.agents.into_iter().map(from_record).collect()
}

pub fn write_trajectories(path: &Path, trajs: &[AgentTrajectory]) -> Result<()> {
    fs::write(path, trajectories_to_json(trajs))?;
    Ok(())
}

pub fn read_trajectories(path: &Path) -> Result<Vec<AgentTrajectory>> {
    trajectories_from_json(&fs::read_to_string(path)?)
}
