use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{homogeneity, mutual_information};
use crate::error::{Error, Result};
use crate::io::read_json;
use crate::material::{ImageGrid, MapStack};
use crate::math::round_to_odd;

pub const DEFAULT_MI_BINS: usize = 64;
/// Below this, H(input) and MI count as zero and the guarded ratio is +inf.
const GUARD: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapThresholds {
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
}

/// Thresholds for the specular and roughness maps plus the box filter size
/// per pixel-per-inch. Stored on disk as JSON with exactly these fields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArtifactThresholds {
    pub specular: MapThresholds,
    pub roughness: MapThresholds,
    pub box_size_factor: f64,
}

impl Default for ArtifactThresholds {
    fn default() -> Self {
        Self {
            specular: MapThresholds { t1: 0.01, t2: 1.41, t3: 1.33 },
            roughness: MapThresholds { t1: 0.01, t2: 0.99, t3: 3.12 },
            box_size_factor: 0.1275,
        }
    }
}

impl ArtifactThresholds {
    pub fn validate(&self) -> Result<()> {
        for t in [self.specular, self.roughness] {
            for v in [t.t1, t.t2, t.t3] {
                if !(v > 0.0) {
                    return Err(Error::InvalidValue(format!("threshold {v} must be positive")));
                }
            }
        }
        if !(self.box_size_factor > 0.0) {
            return Err(Error::InvalidValue(format!("box size factor {}", self.box_size_factor)));
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let t: Self = read_json(path)?;
        t.validate()?;
        Ok(t)
    }

    /// Box filter size in pixels for an image of the given resolution.
    pub fn box_size(&self, ppi: f64) -> usize {
        round_to_odd(self.box_size_factor * ppi)
    }
}

/// e1 = H(map), e2 = H(map) / H(input), e3 = 1 / MI(input, map).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapScores {
    pub e1: f64,
    pub e2: f64,
    pub e3: f64,
    pub exceeded: [bool; 3],
    pub verdict: bool,
}

impl MapScores {
    fn new(e: [f64; 3], t: MapThresholds) -> Self {
        let exceeded = [e[0] > t.t1, e[1] > t.t2, e[2] > t.t3];
        let votes = exceeded.iter().filter(|&&b| b).count();
        Self { e1: e[0], e2: e[1], e3: e[2], exceeded, verdict: votes >= 2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArtifactReport {
    pub specular: MapScores,
    pub roughness: MapScores,
    pub box_size: usize,
    pub stack_verdict: bool,
}

/// Flags specular and roughness maps whose low-frequency structure is not
/// explained by the input image. A map is flagged when at least two of its
/// three scores exceed their thresholds; the stack when any map is flagged.
pub fn detect_artifacts(input: &ImageGrid, stack: &MapStack, th: &ArtifactThresholds) -> Result<ArtifactReport> {
    stack.check_size(input.width(), input.height(), "input")?;
    let box_size = th.box_size(input.ppi());
    let input = input.luminance();
    let h_input = homogeneity(&input, box_size)?;
    let score = |map: &ImageGrid, t: MapThresholds| -> Result<MapScores> {
        let h = homogeneity(map, box_size)?;
        let e2 = if h_input < GUARD { f64::INFINITY } else { h / h_input };
        let mi = mutual_information(&input, map, DEFAULT_MI_BINS)?;
        let e3 = if mi < GUARD { f64::INFINITY } else { 1.0 / mi };
        Ok(MapScores::new([h, e2, e3], t))
    };
    let specular = score(&stack.specular, th.specular)?;
    let roughness = score(&stack.roughness, th.roughness)?;
    Ok(ArtifactReport {
        specular,
        roughness,
        box_size,
        stack_verdict: specular.verdict || roughness.verdict,
    })
}
