//! Neighborhood selection, the social tensor, and the pooling strategies.
//!
//! A pooling strategy turns the hidden states of a scene's vehicles into a
//! fixed-length vector summarizing the interaction context:
//!
//! * `slstm` — grid social tensor, per-cell affine embedding, sum-pooling.
//! * `csp`   — grid social tensor, conv / leaky-ReLU stack, max-pooling.
//! * `sgan`  — per-neighbor MLP over hidden state + relative (dx, dy),
//!   elementwise max across neighbors.
//! * `polar` — as `sgan` with relative (r, phi) instead.
//! * `polar_vr` — as `polar` plus the radial velocity signal.
//!
//! Output length never depends on the neighbor count; an empty neighborhood
//! pools to a zero vector.

use crate::error::{Error, Result};
use crate::geometry::FramePoint;
use crate::nn::params::{Bound, ParamStore};
use crate::nn::tape::{Tape, Var};
use crate::nn::LEAKY_RELU_SLOPE;
use crate::rng::Rng;
use serde::{Deserialize, Serialize};

/// Spatial grid around the ego: 13 rows of one car length (15 ft) and one
/// column per lane (ego lane and its two adjacent lanes).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub rows: usize,
    pub cols: usize,
    /// Longitudinal spacing between rows (m); 15 ft.
    pub row_pitch: f64,
    /// Nominal lane width (m), used for cell-center distances; 12 ft.
    pub lane_width: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            rows: 13,
            cols: 3,
            row_pitch: 15.0 * crate::geometry::FEET_TO_METERS,
            lane_width: 12.0 * crate::geometry::FEET_TO_METERS,
        }
    }
}

impl GridConfig {
    pub fn center_row(&self) -> usize {
        self.rows / 2
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "grid rows must be odd so the ego sits on the center row, got {}",
                self.rows
            )));
        }
        if self.row_pitch <= 0.0 || self.lane_width <= 0.0 {
            return Err(Error::Config("grid pitch must be positive".into()));
        }
        Ok(())
    }
}

/// Lateral/longitudinal extents of the interaction neighborhood. Defaults
/// match the spatial grid: half of 3 lanes at 12 ft and half of 13 rows at
/// 15 ft.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeighborhoodConfig {
    pub d_lat: f64,
    pub d_lon: f64,
}

impl Default for NeighborhoodConfig {
    fn default() -> Self {
        NeighborhoodConfig {
            d_lat: 18.0 * crate::geometry::FEET_TO_METERS,
            d_lon: 97.5 * crate::geometry::FEET_TO_METERS,
        }
    }
}

impl NeighborhoodConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_lat <= 0.0 || self.d_lon <= 0.0 {
            return Err(Error::Config("neighborhood extents must be positive".into()));
        }
        Ok(())
    }

    /// Closed-interval membership test: a vehicle exactly on the boundary
    /// counts as a neighbor.
    pub fn contains(&self, dx: f64, dy: f64) -> bool {
        dx.abs() <= self.d_lat && dy.abs() <= self.d_lon
    }
}

/// The five benchmarked pooling strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolingStrategy {
    Slstm,
    Csp,
    Sgan,
    Polar,
    PolarVr,
}

pub const ALL_STRATEGIES: [PoolingStrategy; 5] = [
    PoolingStrategy::Slstm,
    PoolingStrategy::Csp,
    PoolingStrategy::Sgan,
    PoolingStrategy::Polar,
    PoolingStrategy::PolarVr,
];

/// Relative-position flavor for the MLP + max pooling strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelationalMode {
    Euclidean,
    Polar,
    PolarVr,
}

impl PoolingStrategy {
    pub fn key(&self) -> &'static str {
        match self {
            PoolingStrategy::Slstm => "slstm",
            PoolingStrategy::Csp => "csp",
            PoolingStrategy::Sgan => "sgan",
            PoolingStrategy::Polar => "polar",
            PoolingStrategy::PolarVr => "polar_vr",
        }
    }

    pub fn from_key(key: &str) -> Result<Self> {
        match key {
            "slstm" => Ok(PoolingStrategy::Slstm),
            "csp" => Ok(PoolingStrategy::Csp),
            "sgan" => Ok(PoolingStrategy::Sgan),
            "polar" => Ok(PoolingStrategy::Polar),
            "polar_vr" => Ok(PoolingStrategy::PolarVr),
            other => Err(Error::Usage(format!(
                "unknown pooling strategy `{other}`; valid keys: slstm, csp, sgan, polar, polar_vr"
            ))),
        }
    }

    /// Per-frame input features fed to the encoder under this strategy.
    pub fn feature_dim(&self) -> usize {
        match self {
            PoolingStrategy::PolarVr => 3,
            _ => 2,
        }
    }

    pub fn relational_mode(&self) -> Option<RelationalMode> {
        match self {
            PoolingStrategy::Sgan => Some(RelationalMode::Euclidean),
            PoolingStrategy::Polar => Some(RelationalMode::Polar),
            PoolingStrategy::PolarVr => Some(RelationalMode::PolarVr),
            _ => None,
        }
    }

    pub fn uses_grid(&self) -> bool {
        self.relational_mode().is_none()
    }
}

impl RelationalMode {
    pub fn rel_dim(&self) -> usize {
        match self {
            RelationalMode::Euclidean | RelationalMode::Polar => 2,
            RelationalMode::PolarVr => 3,
        }
    }

    /// Relative-position features, with position-like components scaled by
    /// `pos_scale` (angles pass through).
    pub fn rel_features(&self, p: &FramePoint, pos_scale: f64) -> Vec<f64> {
        match self {
            RelationalMode::Euclidean => vec![p.dx * pos_scale, p.dy * pos_scale],
            RelationalMode::Polar => vec![p.r * pos_scale, p.phi],
            RelationalMode::PolarVr => vec![p.r * pos_scale, p.phi, p.v_r * pos_scale],
        }
    }
}

// Internal channel sizes of the grid strategies. The embedded social tensor
// is pooled over the 13x3 grid exactly.
pub const GRID_EMBED_CHANNELS: usize = 64;
/// Default per-cell embedding width of the grid strategies; configurable
/// per model.
pub const DEFAULT_GRID_EMBED: usize = GRID_EMBED_CHANNELS;
pub const CSP_CONV1_CHANNELS: usize = 16;
pub const CSP_CONV2_CHANNELS: usize = 16;
/// Sum-pooling window over the embedded social tensor.
pub const SLSTM_POOL_WINDOW: (usize, usize) = (4, 3);
/// Sum-pooling stride; with a 13x3 grid this yields a 4x1 pooled extent.
pub const SLSTM_POOL_STRIDE: (usize, usize) = (3, 3);

/// A candidate vehicle position relative to the ego at the anchor time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborCandidate {
    pub id: u64,
    pub dx: f64,
    pub dy: f64,
    pub lane: u32,
}

/// Vehicles within the lateral/longitudinal window, ego excluded by
/// construction (it is not in the candidate list).
pub fn select_neighbors(
    candidates: &[NeighborCandidate],
    cfg: &NeighborhoodConfig,
) -> Vec<NeighborCandidate> {
    candidates
        .iter()
        .filter(|c| cfg.contains(c.dx, c.dy))
        .copied()
        .collect()
}

/// Grid cell of a neighbor: one column per lane offset, rows by rounded
/// longitudinal displacement. Out-of-grid positions map to `None`.
pub fn grid_cell_of(
    dx: f64,
    dy: f64,
    ego_lane: u32,
    nb_lane: u32,
    g: &GridConfig,
) -> Option<(usize, usize)> {
    let _ = dx;
    let col = nb_lane as i64 - ego_lane as i64 + 1;
    if col < 0 || col >= g.cols as i64 {
        return None;
    }
    let row = (dy / g.row_pitch).round() as i64 + g.center_row() as i64;
    if row < 0 || row >= g.rows as i64 {
        return None;
    }
    Some((row as usize, col as usize))
}

/// Occupancy assignment for the social tensor: each vehicle mapped to its
/// cell, collisions resolved in favor of the vehicle nearest the cell
/// center (ties to the lower vehicle id). The ego always holds the center
/// cell. Returns (state index into `entries`, cell) pairs; index 0 is the
/// ego, indices 1.. are the neighbors in order.
fn assign_cells(
    neighbors: &[NeighborCandidate],
    ego_lane: u32,
    g: &GridConfig,
) -> Vec<(usize, (usize, usize))> {
    let ego_cell = (g.center_row(), 1usize);
    let mut best: std::collections::BTreeMap<(usize, usize), (usize, f64, u64)> =
        std::collections::BTreeMap::new();
    for (i, nb) in neighbors.iter().enumerate() {
        if let Some(cell) = grid_cell_of(nb.dx, nb.dy, ego_lane, nb.lane, g) {
            if cell == ego_cell {
                continue;
            }
            let center_dy = (cell.0 as f64 - g.center_row() as f64) * g.row_pitch;
            let center_dx = (cell.1 as f64 - 1.0) * g.lane_width;
            let d2 = (nb.dx - center_dx).powi(2) + (nb.dy - center_dy).powi(2);
            match best.get(&cell) {
                Some(&(_, cur_d2, cur_id))
                    if cur_d2 < d2 || (cur_d2 == d2 && cur_id <= nb.id) => {}
                _ => {
                    best.insert(cell, (i + 1, d2, nb.id));
                }
            }
        }
    }
    let mut out = vec![(0usize, ego_cell)];
    out.extend(best.iter().map(|(cell, &(idx, _, _))| (idx, *cell)));
    out
}

/// Populate the grid with LSTM states: the ego at the center cell, each
/// in-grid neighbor at its cell, empty cells zero. `hiddens[i]` is the
/// state of `neighbors[i]`.
pub fn build_social_tensor(
    tape: &mut Tape,
    neighbors: &[NeighborCandidate],
    hiddens: &[Var],
    ego_hidden: Var,
    ego_lane: u32,
    g: &GridConfig,
) -> Result<Var> {
    if neighbors.len() != hiddens.len() {
        return Err(Error::Usage(format!(
            "{} neighbors but {} hidden states",
            neighbors.len(),
            hiddens.len()
        )));
    }
    let assignment = assign_cells(neighbors, ego_lane, g);
    let mut states = Vec::with_capacity(assignment.len());
    let mut cells = Vec::with_capacity(assignment.len());
    for (idx, cell) in assignment {
        states.push(if idx == 0 { ego_hidden } else { hiddens[idx - 1] });
        cells.push(cell);
    }
    tape.grid_scatter(&states, &cells, g.rows, g.cols)
}

/// Register the learnable parameters of a strategy under `prefix`.
pub fn init_pool_params(
    store: &mut ParamStore,
    prefix: &str,
    strategy: PoolingStrategy,
    enc_hidden: usize,
    mlp_width: usize,
    grid_embed: usize,
    rng: &mut Rng,
) {
    match strategy {
        PoolingStrategy::Slstm => {
            store.init_uniform(
                format!("{prefix}.embed.k"),
                &[grid_embed, enc_hidden, 1, 1],
                rng,
            );
            store.insert_zeros(format!("{prefix}.embed.b"), &[grid_embed]);
        }
        PoolingStrategy::Csp => {
            store.init_uniform(
                format!("{prefix}.embed.k"),
                &[grid_embed, enc_hidden, 1, 1],
                rng,
            );
            store.insert_zeros(format!("{prefix}.embed.b"), &[grid_embed]);
            store.init_uniform(
                format!("{prefix}.conv1.k"),
                &[CSP_CONV1_CHANNELS, grid_embed, 3, 3],
                rng,
            );
            store.insert_zeros(format!("{prefix}.conv1.b"), &[CSP_CONV1_CHANNELS]);
            store.init_uniform(
                format!("{prefix}.conv2.k"),
                &[CSP_CONV2_CHANNELS, CSP_CONV1_CHANNELS, 3, 1],
                rng,
            );
            store.insert_zeros(format!("{prefix}.conv2.b"), &[CSP_CONV2_CHANNELS]);
        }
        PoolingStrategy::Sgan | PoolingStrategy::Polar | PoolingStrategy::PolarVr => {
            let rel = strategy.relational_mode().unwrap().rel_dim();
            store.init_uniform(
                format!("{prefix}.mlp.w"),
                &[mlp_width, enc_hidden + rel],
                rng,
            );
            store.insert_zeros(format!("{prefix}.mlp.b"), &[mlp_width]);
        }
    }
}

/// Length of the pooled vector, fixed by the strategy and configuration.
pub fn pooled_len(
    strategy: PoolingStrategy,
    g: &GridConfig,
    mlp_width: usize,
    grid_embed: usize,
) -> usize {
    match strategy {
        PoolingStrategy::Slstm => {
            let oh = (g.rows - SLSTM_POOL_WINDOW.0) / SLSTM_POOL_STRIDE.0 + 1;
            let ow = (g.cols - SLSTM_POOL_WINDOW.1) / SLSTM_POOL_STRIDE.1 + 1;
            grid_embed * oh * ow
        }
        PoolingStrategy::Csp => {
            let (h1, w1) = (g.rows - 2, g.cols - 2); // conv 3x3
            let (h2, w2) = (h1 - 2, w1); // conv 3x1
            let (h3, w3) = ((h2 - 2) / 2 + 1, w1.min(w2)); // maxpool (2,1)
            CSP_CONV2_CHANNELS * h3 * w3
        }
        PoolingStrategy::Sgan | PoolingStrategy::Polar | PoolingStrategy::PolarVr => mlp_width,
    }
}

/// Per-cell affine embedding of the social tensor followed by sum-pooling.
pub fn pool_slstm(tape: &mut Tape, bound: &Bound, prefix: &str, social: Var) -> Result<Var> {
    let embedded = tape.conv2d(bound.var(&format!("{prefix}.embed.k")), social)?;
    let biased = tape.add_channel_bias(embedded, bound.var(&format!("{prefix}.embed.b")))?;
    let pooled = tape.sumpool2d(biased, SLSTM_POOL_WINDOW, SLSTM_POOL_STRIDE)?;
    Ok(tape.flatten(pooled))
}

/// Convolutional social pooling: conv 3x3, conv 3x1, max-pool 2x1 over the
/// embedded social tensor.
pub fn pool_csp(tape: &mut Tape, bound: &Bound, prefix: &str, social: Var) -> Result<Var> {
    let embedded = tape.conv2d(bound.var(&format!("{prefix}.embed.k")), social)?;
    let embedded = tape.add_channel_bias(embedded, bound.var(&format!("{prefix}.embed.b")))?;

    let c1 = tape.conv2d(bound.var(&format!("{prefix}.conv1.k")), embedded)?;
    let c1 = tape.add_channel_bias(c1, bound.var(&format!("{prefix}.conv1.b")))?;
    let a1 = tape.leaky_relu(c1, LEAKY_RELU_SLOPE);

    let c2 = tape.conv2d(bound.var(&format!("{prefix}.conv2.k")), a1)?;
    let c2 = tape.add_channel_bias(c2, bound.var(&format!("{prefix}.conv2.b")))?;
    let a2 = tape.leaky_relu(c2, LEAKY_RELU_SLOPE);

    let pooled = tape.maxpool2d(a2, (2, 1), (2, 1))?;
    Ok(tape.flatten(pooled))
}

/// MLP + elementwise max pooling over (hidden state, relative position)
/// pairs. `neighbors` carries each neighbor's hidden state and its position
/// at the anchor time; an empty list pools to zeros.
pub fn pool_relational(
    tape: &mut Tape,
    bound: &Bound,
    prefix: &str,
    neighbors: &[(Var, FramePoint)],
    mode: RelationalMode,
    mlp_width: usize,
    pos_scale: f64,
) -> Result<Var> {
    if neighbors.is_empty() {
        return Ok(tape.zeros(&[mlp_width]));
    }
    let w = bound.var(&format!("{prefix}.mlp.w"));
    let b = bound.var(&format!("{prefix}.mlp.b"));
    let mut outputs = Vec::with_capacity(neighbors.len());
    for (hidden, point) in neighbors {
        let rel = tape.leaf_vector(mode.rel_features(point, pos_scale));
        let joint = tape.concat(&[*hidden, rel])?;
        let affine = tape.affine(w, b, joint)?;
        outputs.push(tape.leaky_relu(affine, LEAKY_RELU_SLOPE));
    }
    tape.max_many(&outputs)
}
