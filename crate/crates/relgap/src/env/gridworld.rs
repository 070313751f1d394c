//! A small slippery gridworld pair: same layout and rewards, different slip
//! probabilities in the source and target.

use ndarray::{Array1, Array3};

use crate::error::{Error, Result};
use crate::mdp::TabularMdp;

const MOVES: [(i64, i64); 4] = [(0, -1), (1, 0), (0, 1), (-1, 0)]; // up, right, down, left

fn build_transition(width: usize, height: usize, slip: f64) -> Array3<f64> {
    let n = width * height;
    let goal = n - 1;
    let mut p = Array3::zeros((n, 4, n));
    let cell = |x: i64, y: i64| -> usize {
        let cx = x.clamp(0, width as i64 - 1) as usize;
        let cy = y.clamp(0, height as i64 - 1) as usize;
        cy * width + cx
    };
    for s in 0..n {
        if s == goal {
            for a in 0..4 {
                p[[s, a, s]] = 1.0; // absorbing
            }
            continue;
        }
        let x = (s % width) as i64;
        let y = (s / width) as i64;
        for (a, (dx, dy)) in MOVES.into_iter().enumerate() {
            let intended = cell(x + dx, y + dy);
            p[[s, a, intended]] += 1.0 - slip;
            // Slip to either perpendicular direction.
            let (px, py) = (dy, dx);
            p[[s, a, cell(x + px, y + py)]] += slip / 2.0;
            p[[s, a, cell(x - px, y - py)]] += slip / 2.0;
        }
    }
    p
}

/// Builds a source/target gridworld pair over a `width x height` grid with
/// four movement actions. Entering the goal (last cell) pays 1 and the goal
/// absorbs. Both MDPs share rewards, initial state (first cell) and
/// discount; only the slip probability differs.
pub fn slippery_gridworld_pair(
    width: usize,
    height: usize,
    slip_source: f64,
    slip_target: f64,
    gamma: f64,
) -> Result<(TabularMdp, TabularMdp)> {
    if width < 2 || height < 2 {
        return Err(Error::InvalidValue(
            "gridworld needs at least a 2x2 grid".into(),
        ));
    }
    for slip in [slip_source, slip_target] {
        if !(0.0..=1.0).contains(&slip) {
            return Err(Error::InvalidValue(format!(
                "slip probability {slip} outside [0, 1]"
            )));
        }
    }
    let n = width * height;
    let goal = n - 1;
    let mut reward = Array3::zeros((n, 4, n));
    for s in 0..n {
        if s == goal {
            continue;
        }
        for a in 0..4 {
            reward[[s, a, goal]] = 1.0;
        }
    }
    let mut rho = Array1::zeros(n);
    rho[0] = 1.0;
    let source = TabularMdp::new(
        build_transition(width, height, slip_source),
        reward.clone(),
        rho.clone(),
        gamma,
    )?;
    let target = TabularMdp::new(
        build_transition(width, height, slip_target),
        reward,
        rho,
        gamma,
    )?;
    Ok((source, target))
}
