//! Synthetic occlusion-aware BEV encoder and the non-learned detection path:
//! class heatmaps, box regression, NMS, occupancy rasterization and the
//! confidence map.
//!
//! Feature layout per level-0 cell (`D` channels): the first `D − 6`
//! channels hold `evidence · emb[class]`, the last six hold the box
//! regression `(dx, dy, w, l, cos α, sin α)` relative to the cell centre in
//! the sensing agent's frame.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{bev_iou, ObjectClass, OrientedBox};
use crate::grid::{Cell, FeatureLevel, FeaturePyramid, GridSpec, Pose, ScalarGrid, LEVELS};
use crate::par;
use crate::rng;
use crate::world::WorldState;

pub const REGRESSION_CHANNELS: usize = 6;

/// Fixed per-class embedding vectors shared by every agent.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassCodebook {
    pub channels: usize,
    pub emb: Vec<Vec<f32>>,
}

impl ClassCodebook {
    /// Disjoint-block unit vectors over the first `channels − 6` dims.
    pub fn new(channels: usize, classes: usize) -> Result<Self> {
        let sem = channels
            .checked_sub(REGRESSION_CHANNELS)
            .ok_or_else(|| Error::Config(format!("D = {channels} leaves no semantic channels")))?;
        if classes == 0 || sem < classes {
            return Err(Error::Config(format!(
                "D = {channels} too small for {classes} classes"
            )));
        }
        let block = sem / classes;
        let v = (1.0 / (block as f64).sqrt()) as f32;
        let emb = (0..classes)
            .map(|k| {
                let mut e = vec![0.0f32; sem];
                e[k * block..(k + 1) * block].iter_mut().for_each(|x| *x = v);
                e
            })
            .collect();
        Ok(ClassCodebook { channels, emb })
    }

    pub fn classes(&self) -> usize {
        self.emb.len()
    }

    pub fn semantic(&self) -> usize {
        self.channels - REGRESSION_CHANNELS
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorModel {
    pub max_range: f64,
    pub evidence_mean: f64,
    pub feature_noise_sigma: f64,
}

impl Default for SensorModel {
    fn default() -> Self {
        SensorModel {
            max_range: 50.0,
            evidence_mean: 0.95,
            feature_noise_sigma: 0.02,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub score_threshold: f64,
    pub iou_threshold: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            score_threshold: 0.15,
            iou_threshold: 0.15,
        }
    }
}

/// Where a sensor sits and what it is.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorAgent {
    pub pose: Pose,
    /// Roadside units see over everything except buildings.
    pub elevated: bool,
    /// The actor carrying the sensor, excluded from its own view.
    pub actor_id: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: OrientedBox,
    pub score: f64,
}

impl Detection {
    pub fn class(&self) -> ObjectClass {
        self.bbox.class
    }
}

struct Occluder {
    id: Option<u32>,
    bbox: OrientedBox,
    radius: f64,
}

fn occluders(world: &WorldState, agent: &SensorAgent) -> Vec<Occluder> {
    let mut out: Vec<Occluder> = world
        .layout
        .obstacles
        .iter()
        .filter(|o| o.tall || !agent.elevated)
        .map(|o| Occluder {
            id: None,
            bbox: o.bbox,
            radius: o.bbox.radius(),
        })
        .collect();
    if !agent.elevated {
        out.extend(
            world
                .actors
                .iter()
                .filter(|a| a.occludes_ground_sensors && Some(a.id) != agent.actor_id)
                .map(|a| Occluder {
                    id: Some(a.id),
                    bbox: a.bbox,
                    radius: a.bbox.radius(),
                }),
        );
    }
    out
}

/// Whether the segment `from → to`, sampled every `step` meters, passes
/// through any occluder other than `skip`.
fn segment_blocked(
    from: (f64, f64),
    to: (f64, f64),
    occ: &[Occluder],
    skip: Option<u32>,
    step: f64,
) -> bool {
    let (dx, dy) = (to.0 - from.0, to.1 - from.1);
    let len = dx.hypot(dy);
    let n = (len / step).ceil().max(1.0) as usize;
    for o in occ {
        if skip.is_some() && o.id == skip {
            continue;
        }
        // Distance from the occluder centre to the segment.
        let t = if len > 0.0 {
            (((o.bbox.cx - from.0) * dx + (o.bbox.cy - from.1) * dy) / (len * len)).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let (qx, qy) = (from.0 + t * dx, from.1 + t * dy);
        if (o.bbox.cx - qx).hypot(o.bbox.cy - qy) > o.radius {
            continue;
        }
        for i in 1..=n {
            let f = i as f64 / n as f64;
            if o.bbox.contains((from.0 + f * dx, from.1 + f * dy)) {
                return true;
            }
        }
    }
    false
}

/// Level-0 visibility from a sensor: 1 where the line of sight to the cell
/// centre is clear and within range.
pub fn visibility_mask(
    world: &WorldState,
    agent: &SensorAgent,
    spec: &GridSpec,
    sensor: &SensorModel,
) -> ScalarGrid {
    let occ = occluders(world, agent);
    let cols = spec.cols();
    let step = spec.cell_m / 2.0;
    let values = par::map_range(spec.cells(), |i| {
        let local = spec.cell_center(0, Cell::new(i / cols, i % cols));
        if local.0.hypot(local.1) > sensor.max_range {
            return 0.0;
        }
        let target = agent.pose.to_world(local);
        let from = (agent.pose.x, agent.pose.y);
        if segment_blocked(from, target, &occ, None, step) {
            0.0
        } else {
            1.0
        }
    });
    ScalarGrid {
        spec: *spec,
        level: 0,
        rows: spec.rows(),
        cols,
        values,
    }
}

/// Level-0 cells an ego-frame box covers: cells whose centre lies inside,
/// plus the cell holding the box centre so small boxes never vanish.
pub fn footprint_cells(spec: &GridSpec, b: &OrientedBox) -> Vec<Cell> {
    let r = b.radius();
    let lo_r = ((b.cx - r - spec.x_min) / spec.cell_m).floor().max(0.0) as usize;
    let hi_r = (((b.cx + r - spec.x_min) / spec.cell_m).ceil().max(0.0) as usize).min(spec.rows());
    let lo_c = ((b.cy - r - spec.y_min) / spec.cell_m).floor().max(0.0) as usize;
    let hi_c = (((b.cy + r - spec.y_min) / spec.cell_m).ceil().max(0.0) as usize).min(spec.cols());
    let mut out = Vec::new();
    for row in lo_r..hi_r {
        for col in lo_c..hi_c {
            let c = Cell::new(row, col);
            if b.contains(spec.cell_center(0, c)) {
                out.push(c);
            }
        }
    }
    if let Some(c) = spec.cell_of_local(0, (b.cx, b.cy)) {
        if !out.contains(&c) {
            out.push(c);
        }
    }
    out
}

/// Synthetic BEV encoder. `noise_seed` keys the per-row noise streams; the
/// runner derives it from `(episode seed, agent, step)`.
pub fn encode(
    world: &WorldState,
    agent: &SensorAgent,
    spec: &GridSpec,
    codebook: &ClassCodebook,
    sensor: &SensorModel,
    noise_seed: u64,
) -> FeaturePyramid {
    let d = codebook.channels;
    let sem = codebook.semantic();
    let rows = spec.rows();
    let cols = spec.cols();
    let vis = visibility_mask(world, agent, spec, sensor);
    let sigma = sensor.feature_noise_sigma as f32;

    let mut l0 = FeatureLevel::zeros(rows, cols, d, true);
    par::for_each_row(&mut l0.data, cols * d, |r, row| {
        if sigma <= 0.0 {
            return;
        }
        let mut g = rng::stream(noise_seed, &[r as u64]);
        for c in 0..cols {
            // Draw for every cell so the stream position is layout-independent.
            let visible = vis.values[r * cols + c] > 0.0;
            for x in row[c * d..(c + 1) * d].iter_mut() {
                let n: f32 = g.sample(StandardNormal);
                if visible {
                    *x = sigma * n;
                }
            }
        }
    });

    // Object cells: nearest object centre wins a contested cell.
    let occ = occluders(world, agent);
    let step = spec.cell_m / 2.0;
    let from = (agent.pose.x, agent.pose.y);
    let mut owner: Vec<Option<(f64, usize)>> = vec![None; rows * cols];
    let mut local_boxes = Vec::new();
    for a in &world.actors {
        if Some(a.id) == agent.actor_id {
            continue;
        }
        let Some(k) = a.bbox.class.index() else { continue };
        if k >= codebook.classes() {
            continue;
        }
        let lb = a.bbox.to_frame(&agent.pose);
        if lb.cx.hypot(lb.cy) > sensor.max_range + lb.radius() {
            continue;
        }
        let slot = local_boxes.len();
        local_boxes.push((a.id, k, lb));
        for cell in footprint_cells(spec, &lb) {
            let center = spec.cell_center(0, cell);
            if center.0.hypot(center.1) > sensor.max_range {
                continue;
            }
            let target = agent.pose.to_world(center);
            if segment_blocked(from, target, &occ, Some(a.id), step) {
                continue;
            }
            let dist = (center.0 - lb.cx).hypot(center.1 - lb.cy);
            let i = cell.row * cols + cell.col;
            if owner[i].is_none_or(|(best, _)| dist < best) {
                owner[i] = Some((dist, slot));
            }
        }
    }
    let evidence = sensor.evidence_mean as f32;
    for (i, o) in owner.iter().enumerate() {
        let Some((_, slot)) = o else { continue };
        let (_, k, lb) = local_boxes[*slot];
        let center = spec.cell_center(0, Cell::new(i / cols, i % cols));
        let v = l0.vector_mut(i);
        for (x, e) in v[..sem].iter_mut().zip(&codebook.emb[k]) {
            *x += evidence * e;
        }
        let reg = [
            lb.cx - center.0,
            lb.cy - center.1,
            lb.w,
            lb.l,
            lb.yaw.cos(),
            lb.yaw.sin(),
        ];
        for (x, r) in v[sem..].iter_mut().zip(reg) {
            *x += r as f32;
        }
    }
    build_pyramid(*spec, l0)
}

/// Complete a pyramid from its level-0 map: each coarser level is a 2×2
/// average pool of the level below with channels duplicated to `2^l · D`.
pub fn build_pyramid(spec: GridSpec, l0: FeatureLevel) -> FeaturePyramid {
    let d = l0.channels;
    let mut levels = vec![l0];
    for l in 1..LEVELS {
        let prev = &levels[l - 1];
        let pc = prev.channels;
        let rows = prev.rows / 2;
        let cols = prev.cols / 2;
        let mut next = FeatureLevel::zeros(rows, cols, d << l, true);
        par::for_each_row(&mut next.data, cols * (d << l), |r, row| {
            for c in 0..cols {
                let out = &mut row[c * 2 * pc..(c + 1) * 2 * pc];
                for (dr, dc) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let src = prev.vector((2 * r + dr) * prev.cols + 2 * c + dc);
                    for (o, s) in out[..pc].iter_mut().zip(src) {
                        *o += 0.25 * s;
                    }
                }
                let (a, b) = out.split_at_mut(pc);
                b.copy_from_slice(a);
            }
        });
        levels.push(next);
    }
    FeaturePyramid {
        spec,
        base_channels: d,
        levels,
    }
}

/// Per-class heatmaps and per-cell regression decoded from one D-channel
/// map.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedHeads {
    pub scores: Vec<ScalarGrid>,
    pub regression: Vec<[f64; 6]>,
}

pub fn decode_heads(
    feature: &FeatureLevel,
    spec: &GridSpec,
    codebook: &ClassCodebook,
) -> Result<DecodedHeads> {
    if feature.channels != codebook.channels {
        return Err(Error::DimensionMismatch(format!(
            "feature has {} channels, codebook expects {}",
            feature.channels, codebook.channels
        )));
    }
    if feature.rows != spec.rows() || feature.cols != spec.cols() {
        return Err(Error::DimensionMismatch("feature map is not level-0 sized".into()));
    }
    let sem = codebook.semantic();
    let n = feature.cells();
    let per_cell: Vec<(Vec<f64>, [f64; 6])> = par::map_range(n, |i| {
        let f = feature.vector(i);
        let s = codebook
            .emb
            .iter()
            .map(|e| {
                let dot: f64 = f[..sem].iter().zip(e).map(|(a, b)| *a as f64 * *b as f64).sum();
                dot.clamp(0.0, 1.0)
            })
            .collect();
        let mut reg = [0.0; 6];
        for (r, x) in reg.iter_mut().zip(&f[sem..]) {
            *r = *x as f64;
        }
        (s, reg)
    });
    let mut scores: Vec<ScalarGrid> = (0..codebook.classes())
        .map(|_| ScalarGrid::zeros(*spec, 0))
        .collect();
    let mut regression = Vec::with_capacity(n);
    for (i, (s, reg)) in per_cell.into_iter().enumerate() {
        for (k, v) in s.into_iter().enumerate() {
            scores[k].values[i] = v;
        }
        regression.push(reg);
    }
    Ok(DecodedHeads { scores, regression })
}

/// Box implied by a cell's regression vector. The orientation pair is unit
/// length when the vector is undiluted, so its norm undoes uniform
/// attenuation from pooling and fusion.
pub fn reconstruct_box(spec: &GridSpec, cell: Cell, reg: &[f64; 6], class: ObjectClass) -> Option<OrientedBox> {
    let m = reg[4].hypot(reg[5]);
    if m < 1e-3 {
        return None;
    }
    let c = spec.cell_center(0, cell);
    Some(OrientedBox::new(
        c.0 + reg[0] / m,
        c.1 + reg[1] / m,
        (reg[2] / m).max(0.1),
        (reg[3] / m).max(0.1),
        reg[5].atan2(reg[4]),
        class,
    ))
}

/// Greedy class-wise NMS over above-threshold cells. Candidates are ranked by
/// score, ties by row-major cell index then class.
pub fn nms(heads: &DecodedHeads, cfg: &DetectorConfig, spec: &GridSpec) -> Vec<Detection> {
    let cols = spec.cols();
    let mut cands: Vec<(f64, usize, usize, OrientedBox)> = Vec::new();
    for (k, grid) in heads.scores.iter().enumerate() {
        let class = ObjectClass::from_index(k);
        for (i, &s) in grid.values.iter().enumerate() {
            if s >= cfg.score_threshold && s > 0.0 {
                let cell = Cell::new(i / cols, i % cols);
                if let Some(b) = reconstruct_box(spec, cell, &heads.regression[i], class) {
                    cands.push((s, i, k, b));
                }
            }
        }
    }
    cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    suppress(cands.into_iter().map(|(s, _, _, b)| Detection { bbox: b, score: s }), cfg.iou_threshold)
}

/// Greedy suppression over detections already sorted by descending score.
pub fn suppress(sorted: impl IntoIterator<Item = Detection>, iou_threshold: f64) -> Vec<Detection> {
    let mut kept: Vec<Detection> = Vec::new();
    for d in sorted {
        let dup = kept
            .iter()
            .any(|k| k.bbox.class == d.bbox.class && bev_iou(&k.bbox, &d.bbox) > iou_threshold);
        if !dup {
            kept.push(d);
        }
    }
    kept
}

/// Binary occupancy: a cell is set when its centre lies in a detection box
/// (or holds the box centre).
pub fn rasterize_occupancy(dets: &[Detection], spec: &GridSpec) -> ScalarGrid {
    let mut g = ScalarGrid::zeros(*spec, 0);
    for d in dets {
        for c in footprint_cells(spec, &d.bbox) {
            g.set(c, 1.0);
        }
    }
    g
}

/// Per-cell maximum over class heatmaps.
pub fn confidence_map(scores: &[ScalarGrid]) -> ScalarGrid {
    let mut out = scores[0].clone();
    for s in &scores[1..] {
        for (o, v) in out.values.iter_mut().zip(&s.values) {
            *o = o.max(*v);
        }
    }
    out
}
