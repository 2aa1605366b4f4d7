use nalgebra::Vector2;

use crate::error::{Error, Result};
use crate::geometry::Circle;

/// Occupancy grid rasterized from circular obstacles inflated by the robot
/// radius. A cell is occupied when its center lies within an inflated
/// circle; everything outside the bounds counts as occupied.
#[derive(Debug, Clone)]
pub struct GridMap {
    bounds: [f64; 4],
    resolution: f64,
    nx: usize,
    ny: usize,
    occupied: Vec<bool>,
}

impl GridMap {
    pub fn new(bounds: [f64; 4], resolution: f64, circles: &[Circle], inflation: f64) -> Result<Self> {
        let [xmin, xmax, ymin, ymax] = bounds;
        if !(resolution > 0.0) || !(xmax > xmin) || !(ymax > ymin) {
            return Err(Error::Input(format!(
                "bad grid: bounds {bounds:?}, resolution {resolution}"
            )));
        }
        let nx = ((xmax - xmin) / resolution).ceil() as usize;
        let ny = ((ymax - ymin) / resolution).ceil() as usize;
        let mut occupied = vec![false; nx * ny];
        for c in circles {
            let r = c.radius + inflation;
            let (cx, cy) = (c.center[0], c.center[1]);
            let i0 = (((cx - r - xmin) / resolution).floor().max(0.0)) as usize;
            let i1 = ((((cx + r - xmin) / resolution).ceil()).max(0.0) as usize).min(nx);
            let j0 = (((cy - r - ymin) / resolution).floor().max(0.0)) as usize;
            let j1 = ((((cy + r - ymin) / resolution).ceil()).max(0.0) as usize).min(ny);
            for j in j0..j1 {
                for i in i0..i1 {
                    let px = xmin + (i as f64 + 0.5) * resolution;
                    let py = ymin + (j as f64 + 0.5) * resolution;
                    if (px - cx).powi(2) + (py - cy).powi(2) <= r * r {
                        occupied[j * nx + i] = true;
                    }
                }
            }
        }
        Ok(Self {
            bounds,
            resolution,
            nx,
            ny,
            occupied,
        })
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn bounds(&self) -> [f64; 4] {
        self.bounds
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn cell(&self, p: Vector2<f64>) -> Option<(usize, usize)> {
        let [xmin, xmax, ymin, ymax] = self.bounds;
        if !(p.x >= xmin && p.x < xmax && p.y >= ymin && p.y < ymax) {
            return None;
        }
        let i = (((p.x - xmin) / self.resolution) as usize).min(self.nx - 1);
        let j = (((p.y - ymin) / self.resolution) as usize).min(self.ny - 1);
        Some((i, j))
    }

    pub fn is_free(&self, p: Vector2<f64>) -> bool {
        match self.cell(p) {
            Some((i, j)) => !self.occupied[j * self.nx + i],
            None => false,
        }
    }
}
