//! Learned fidelity positions and the cross-source correlations they imply.

use serde::{Deserialize, Serialize};

use super::kernel::{fidelity_position, squared_distance};
use super::{EmulatorError, FittedEmulator};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityManifold {
    pub hf_index: usize,
    /// `h(s)` for every source.
    pub points: Vec<Vec<f64>>,
    pub distances: Vec<Vec<f64>>,
    /// `exp(-d²)` for every pair of sources.
    pub correlations: Vec<Vec<f64>>,
}

impl FidelityManifold {
    pub fn from_points(points: Vec<Vec<f64>>, hf_index: usize) -> Self {
        let ds = points.len();
        let mut distances = vec![vec![0.0; ds]; ds];
        let mut correlations = vec![vec![1.0; ds]; ds];
        for i in 0..ds {
            for j in 0..ds {
                let d2 = squared_distance(&points[i], &points[j]);
                distances[i][j] = d2.sqrt();
                correlations[i][j] = (-d2).exp();
            }
        }
        Self { hf_index, points, distances, correlations }
    }

    pub fn num_sources(&self) -> usize {
        self.points.len()
    }

    pub fn distance_to_hf(&self, source: usize) -> f64 {
        self.distances[self.hf_index][source]
    }

    pub fn correlation_to_hf(&self, source: usize) -> f64 {
        self.correlations[self.hf_index][source]
    }

    /// Header `source_id,h_1,..,h_dh` then one row per source.
    pub fn to_csv(&self) -> String {
        let dh = self.points.first().map_or(0, Vec::len);
        let mut out = String::from("source_id");
        for c in 1..=dh {
            out.push_str(&format!(",h_{c}"));
        }
        out.push('\n');
        for (s, h) in self.points.iter().enumerate() {
            out.push_str(&s.to_string());
            for v in h {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

pub fn extract_manifold(emulator: &FittedEmulator) -> Result<FidelityManifold, EmulatorError> {
    let space = emulator.space();
    let fidelity = emulator.hyperparameters().fidelity.as_ref();
    if space.num_sources() < 2 || fidelity.is_none() {
        return Err(EmulatorError::SingleSource);
    }
    let points = (0..space.num_sources()).map(|s| fidelity_position(s, fidelity)).collect();
    Ok(FidelityManifold::from_points(points, space.hf_index()))
}
