//! Driving-request-aware communication: request maps, budgeted selection,
//! message packing and the impaired channel.

mod channel;
mod message;
mod select;

pub use channel::{Channel, ChannelConfig, Transmit};
pub use message::{pack_message, DetectionMessage, LevelPayload, Message, WIRE_VERSION};
pub use select::{pool_masks, solve_selection, SelectionMask, SelectionMaskPyramid};

use crate::error::{Error, Result};
use crate::grid::{Cell, GridSpec, ScalarGrid};

/// Denominator of the budget formula: `Σ_l 2^{-l}` over three levels.
pub const LEVEL_WEIGHT: f64 = 1.75;

/// Gaussian proximity of each level-0 cell to the nearest planned waypoint.
#[derive(Debug, Clone, PartialEq)]
pub struct RequestMap {
    pub grid: ScalarGrid,
    pub sigma_m: f64,
}

impl RequestMap {
    /// Requests everything equally (confidence-only selection).
    pub fn uniform(spec: GridSpec) -> Self {
        RequestMap {
            grid: ScalarGrid::filled(spec, 0, 1.0),
            sigma_m: 0.0,
        }
    }

    /// Requests nothing (agents without a driving task).
    pub fn empty(spec: GridSpec) -> Self {
        RequestMap {
            grid: ScalarGrid::zeros(spec, 0),
            sigma_m: 0.0,
        }
    }
}

/// `R = exp(−d²/2σ²)` with `d` the distance from the cell centre to the
/// nearest ego-frame waypoint; a cell that contains a waypoint scores 1.
pub fn build_request_map(waypoints: &[(f64, f64)], sigma_m: f64, spec: &GridSpec) -> Result<RequestMap> {
    if waypoints.is_empty() {
        return Err(Error::EmptyWaypoints);
    }
    if !(sigma_m > 0.0 && sigma_m.is_finite()) {
        return Err(Error::Config(format!("request sigma must be positive, got {sigma_m}")));
    }
    let mut grid = ScalarGrid::zeros(*spec, 0);
    let k = 1.0 / (2.0 * sigma_m * sigma_m);
    for row in 0..grid.rows {
        for col in 0..grid.cols {
            let c = spec.cell_center(0, Cell::new(row, col));
            let d2 = waypoints
                .iter()
                .map(|w| (c.0 - w.0).powi(2) + (c.1 - w.1).powi(2))
                .fold(f64::INFINITY, f64::min);
            grid.values[row * grid.cols + col] = (-d2 * k).exp();
        }
    }
    for w in waypoints {
        if let Some(c) = spec.cell_of_local(0, *w) {
            grid.set(c, 1.0);
        }
    }
    Ok(RequestMap { grid, sigma_m })
}

/// Level-0 cell budget `b = floor(B / (1.75·D))` for a budget of `B` feature
/// elements.
pub fn budget_to_cells(budget: f64, channels: usize) -> usize {
    if !(budget > 0.0) || channels == 0 {
        return 0;
    }
    (budget / (LEVEL_WEIGHT * channels as f64)).floor() as usize
}

/// Element budget that buys exactly `cells` level-0 cells.
pub fn cells_to_budget(cells: usize, channels: usize) -> f64 {
    cells as f64 * LEVEL_WEIGHT * channels as f64
}

/// Communication volume `log2(X·Y·ratio·C·4)` in bytes, where `ratio` is the
/// fraction of selected level-0 cells. Zero traffic maps to `−∞`.
pub fn comm_volume_log2(x: usize, y: usize, ratio: f64, channels: usize) -> f64 {
    let bytes = x as f64 * y as f64 * ratio * channels as f64 * 4.0;
    if bytes > 0.0 {
        bytes.log2()
    } else {
        f64::NEG_INFINITY
    }
}
