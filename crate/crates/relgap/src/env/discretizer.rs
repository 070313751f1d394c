//! Bins the four-dimensional CartPole state into a flat tabular index.

use crate::env::CartPoleState;
use crate::error::{Error, Result};

/// Per-dimension interior bin edges over (position, velocity, angle, angular
/// velocity). A dimension with `n` bins carries `n - 1` strictly increasing
/// edges; values outside the range clamp into the boundary bins.
#[derive(Debug, Clone)]
pub struct Discretizer {
    edges: [Vec<f64>; 4],
    bins: [usize; 4],
}

impl Discretizer {
    pub fn new(edges: [Vec<f64>; 4]) -> Result<Self> {
        for dim in &edges {
            for pair in dim.windows(2) {
                if pair[0] >= pair[1] || pair[0].is_nan() || pair[1].is_nan() {
                    return Err(Error::InvalidValue(format!(
                        "bin edges must be strictly increasing, got {} then {}",
                        pair[0], pair[1]
                    )));
                }
            }
        }
        let bins = [
            edges[0].len() + 1,
            edges[1].len() + 1,
            edges[2].len() + 1,
            edges[3].len() + 1,
        ];
        Ok(Self { edges, bins })
    }

    /// Uniform edges over `[low, high]` per dimension.
    pub fn uniform(ranges: [(f64, f64); 4], bins: [usize; 4]) -> Result<Self> {
        let mut edges: [Vec<f64>; 4] = [Vec::new(), Vec::new(), Vec::new(), Vec::new()];
        for (dim, ((low, high), n)) in ranges.into_iter().zip(bins).enumerate() {
            if low >= high || low.is_nan() || high.is_nan() || n == 0 {
                return Err(Error::InvalidValue(format!(
                    "dimension {dim}: need low < high and at least one bin"
                )));
            }
            let width = (high - low) / n as f64;
            edges[dim] = (1..n).map(|i| low + i as f64 * width).collect();
        }
        Self::new(edges)
    }

    /// Default CartPole binning: (6, 6, 12, 12) bins over position within
    /// the failure bounds, velocity clipped at +-3, angle within the failure
    /// bounds and angular velocity clipped at +-3.5.
    pub fn default_cartpole(position_threshold: f64, angle_threshold: f64) -> Self {
        Self::uniform(
            [
                (-position_threshold, position_threshold),
                (-3.0, 3.0),
                (-angle_threshold, angle_threshold),
                (-3.5, 3.5),
            ],
            [6, 6, 12, 12],
        )
        .expect("default binning is valid")
    }

    pub fn bins(&self) -> [usize; 4] {
        self.bins
    }

    pub fn n_cells(&self) -> usize {
        self.bins.iter().product()
    }

    fn bin_of(&self, dim: usize, value: f64) -> usize {
        self.edges[dim].partition_point(|edge| *edge <= value)
    }

    /// Row-major flat index of the cell containing `state`.
    pub fn index(&self, state: &CartPoleState) -> usize {
        let mut idx = 0;
        for (dim, value) in state.as_array().into_iter().enumerate() {
            idx = idx * self.bins[dim] + self.bin_of(dim, value);
        }
        idx
    }
}
