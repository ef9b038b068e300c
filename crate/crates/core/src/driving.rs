//! Reference waypoint planner and the dual-PID controller.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::grid::{Cell, GridSpec, Pose, ScalarGrid};
use crate::world::RoadLayout;

pub const WAYPOINT_COUNT: usize = 10;
pub const HISTORY_FRAMES: usize = 5;
pub const HORIZON_S: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlCommand {
    /// Positive steers left.
    pub steer: f64,
    pub throttle: f64,
    pub brake: f64,
}

impl ControlCommand {
    pub fn clamped(self) -> Self {
        ControlCommand {
            steer: finite_or_zero(self.steer).clamp(-1.0, 1.0),
            throttle: finite_or_zero(self.throttle).clamp(0.0, 1.0),
            brake: finite_or_zero(self.brake).clamp(0.0, 1.0),
        }
    }
}

fn finite_or_zero(x: f64) -> f64 {
    if x.is_finite() {
        x
    } else {
        0.0
    }
}

/// `[K_P, K_I, K_D, N]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidGains {
    pub k_p: f64,
    pub k_i: f64,
    pub k_d: f64,
    pub n: usize,
}

impl PidGains {
    pub const LATERAL: PidGains = PidGains {
        k_p: 1.0,
        k_i: 0.2,
        k_d: 0.1,
        n: 5,
    };
    pub const LONGITUDINAL: PidGains = PidGains {
        k_p: 5.0,
        k_i: 1.0,
        k_d: 0.1,
        n: 20,
    };
}

#[derive(Debug, Clone, PartialEq)]
pub struct PidState {
    pub gains: PidGains,
    history: VecDeque<f64>,
}

impl PidState {
    pub fn new(gains: PidGains) -> Self {
        let n = gains.n.max(2);
        PidState {
            gains,
            history: std::iter::repeat_n(0.0, n).collect(),
        }
    }

    pub fn history(&self) -> impl Iterator<Item = f64> + '_ {
        self.history.iter().copied()
    }

    /// `x' = K_P·x + K_I·mean(E) + K_D·(E[−1] − E[−2])` after pushing `x`.
    pub fn step(&mut self, x: f64) -> f64 {
        self.history.pop_front();
        self.history.push_back(x);
        let n = self.history.len();
        let mean = self.history.iter().sum::<f64>() / n as f64;
        let d = self.history[n - 1] - self.history[n - 2];
        self.gains.k_p * x + self.gains.k_i * mean + self.gains.k_d * d
    }
}

/// `T_f` future points in the ego frame, one per `HORIZON_S / T_f` seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoints(pub [(f64, f64); WAYPOINT_COUNT]);

impl Waypoints {
    pub fn stopped() -> Self {
        Waypoints([(0.0, 0.0); WAYPOINT_COUNT])
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.0
    }

    pub fn is_stop(&self) -> bool {
        self.0.iter().all(|p| p.0 == 0.0 && p.1 == 0.0)
    }

    /// Same points expressed in another agent's frame.
    pub fn to_world(&self, ego: &Pose) -> Vec<(f64, f64)> {
        self.0.iter().map(|p| ego.to_world(*p)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub cruise_mps: f64,
    pub hazard_stop_radius_m: f64,
    pub ego_half_width_m: f64,
    pub dilation_margin_m: f64,
    pub obstacle_cost: f64,
    pub offroad_cost: f64,
    /// How far ahead moving blobs are swept along their velocity.
    pub sweep_s: f64,
    pub frame_dt: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            cruise_mps: 5.0,
            hazard_stop_radius_m: 4.0,
            ego_half_width_m: 1.0,
            dilation_margin_m: 0.3,
            obstacle_cost: 1000.0,
            offroad_cost: 50.0,
            sweep_s: 1.0,
            frame_dt: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    pub lateral: PidGains,
    pub longitudinal: PidGains,
    pub max_steer_rad: f64,
    /// Maps the filtered speed error to throttle.
    pub k_e: f64,
    pub stop_speed_mps: f64,
    pub brake_margin_mps: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            lateral: PidGains::LATERAL,
            longitudinal: PidGains::LONGITUDINAL,
            max_steer_rad: 0.6,
            k_e: 0.1,
            stop_speed_mps: 0.1,
            brake_margin_mps: 1.0,
        }
    }
}

/// Planner interface: occupancy history (oldest first, already in the
/// current ego frame), goal and drivable area.
#[derive(Debug, Clone, Copy)]
pub struct PlannerInput<'a> {
    pub history: &'a [ScalarGrid],
    pub goal: (f64, f64),
    pub drivable: &'a ScalarGrid,
}

/// Ego-frame drivable grid sampled at level-0 cell centres.
pub fn ego_drivable(layout: &RoadLayout, ego: &Pose, spec: &GridSpec) -> ScalarGrid {
    let mut g = ScalarGrid::zeros(*spec, 0);
    for row in 0..spec.rows() {
        for col in 0..spec.cols() {
            let c = Cell::new(row, col);
            if layout.is_drivable(ego.to_world(spec.cell_center(0, c))) {
                g.set(c, 1.0);
            }
        }
    }
    g
}

fn components(grid: &ScalarGrid) -> Vec<Vec<Cell>> {
    let (rows, cols) = (grid.rows, grid.cols);
    let mut seen = vec![false; rows * cols];
    let mut out = Vec::new();
    for start in 0..rows * cols {
        if seen[start] || grid.values[start] <= 0.0 {
            continue;
        }
        seen[start] = true;
        let mut stack = vec![start];
        let mut comp = Vec::new();
        while let Some(i) = stack.pop() {
            let (r, c) = ((i / cols) as i64, (i % cols) as i64);
            comp.push(Cell::new(r as usize, c as usize));
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let (nr, nc) = (r + dr, c + dc);
                    if nr < 0 || nc < 0 || nr >= rows as i64 || nc >= cols as i64 {
                        continue;
                    }
                    let j = nr as usize * cols + nc as usize;
                    if !seen[j] && grid.values[j] > 0.0 {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        comp.sort();
        out.push(comp);
    }
    out
}

fn centroid(spec: &GridSpec, comp: &[Cell]) -> (f64, f64) {
    let n = comp.len() as f64;
    let (sx, sy) = comp.iter().fold((0.0, 0.0), |acc, c| {
        let p = spec.cell_center(0, *c);
        (acc.0 + p.0, acc.1 + p.1)
    });
    (sx / n, sy / n)
}

/// Latest occupancy plus moving blobs swept along their displacement since
/// the oldest frame.
pub fn predicted_occupancy(history: &[ScalarGrid], cfg: &PlannerConfig) -> ScalarGrid {
    let latest = history.last().expect("non-empty history");
    let mut out = latest.clone();
    if history.len() < 2 || cfg.sweep_s <= 0.0 {
        return out;
    }
    let spec = latest.spec;
    let elapsed = (history.len() - 1) as f64 * cfg.frame_dt;
    let old: Vec<(f64, f64)> = components(&history[0])
        .iter()
        .map(|c| centroid(&spec, c))
        .collect();
    let max_match = 3.0 + 10.0 * elapsed;
    for comp in components(latest) {
        let c = centroid(&spec, &comp);
        let nearest = old
            .iter()
            .map(|o| (c.0 - o.0, c.1 - o.1))
            .min_by(|a, b| a.0.hypot(a.1).total_cmp(&b.0.hypot(b.1)));
        let Some(disp) = nearest else { continue };
        let dist = disp.0.hypot(disp.1);
        if !(0.5..=max_match).contains(&dist) {
            continue;
        }
        let v = (disp.0 / elapsed, disp.1 / elapsed);
        let steps = (cfg.sweep_s / cfg.frame_dt).round() as usize;
        for k in 1..=steps {
            let t = k as f64 * cfg.frame_dt;
            for cell in &comp {
                let p = spec.cell_center(0, *cell);
                if let Some(moved) = spec.cell_of_local(0, (p.0 + v.0 * t, p.1 + v.1 * t)) {
                    out.set(moved, 1.0);
                }
            }
        }
    }
    out
}

fn dilate(grid: &ScalarGrid, radius_m: f64) -> ScalarGrid {
    let spec = grid.spec;
    let r = (radius_m / spec.cell_m).ceil() as i64;
    let r2 = (radius_m / spec.cell_m).powi(2);
    let mut out = grid.clone();
    let (rows, cols) = (grid.rows as i64, grid.cols as i64);
    for i in 0..grid.values.len() {
        if grid.values[i] <= 0.0 {
            continue;
        }
        let (row, col) = ((i / grid.cols) as i64, (i % grid.cols) as i64);
        for dr in -r..=r {
            for dc in -r..=r {
                if (dr * dr + dc * dc) as f64 > r2 {
                    continue;
                }
                let (nr, nc) = (row + dr, col + dc);
                if nr >= 0 && nc >= 0 && nr < rows && nc < cols {
                    out.values[(nr * cols + nc) as usize] = 1.0;
                }
            }
        }
    }
    out
}

#[derive(Clone, Copy, PartialEq)]
struct Open {
    f: f64,
    idx: usize,
}

impl Eq for Open {}

impl Ord for Open {
    fn cmp(&self, other: &Self) -> Ordering {
        other.f.total_cmp(&self.f).then(other.idx.cmp(&self.idx))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// 8-connected A* over per-cell entry penalties; step costs 1 or √2.
fn astar(penalty: &[f64], rows: usize, cols: usize, start: usize, goal: usize) -> Option<Vec<usize>> {
    let n = rows * cols;
    let mut g = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let (gr, gc) = ((goal / cols) as f64, (goal % cols) as f64);
    let h = |i: usize| {
        let dr = ((i / cols) as f64 - gr).abs();
        let dc = ((i % cols) as f64 - gc).abs();
        dr.max(dc) + (std::f64::consts::SQRT_2 - 1.0) * dr.min(dc)
    };
    let mut heap = BinaryHeap::new();
    g[start] = 0.0;
    heap.push(Open { f: h(start), idx: start });
    while let Some(Open { idx, .. }) = heap.pop() {
        if closed[idx] {
            continue;
        }
        if idx == goal {
            let mut path = vec![idx];
            let mut cur = idx;
            while parent[cur] != usize::MAX {
                cur = parent[cur];
                path.push(cur);
            }
            path.reverse();
            return Some(path);
        }
        closed[idx] = true;
        let (r, c) = ((idx / cols) as i64, (idx % cols) as i64);
        for dr in -1..=1i64 {
            for dc in -1..=1i64 {
                if dr == 0 && dc == 0 {
                    continue;
                }
                let (nr, nc) = (r + dr, c + dc);
                if nr < 0 || nc < 0 || nr >= rows as i64 || nc >= cols as i64 {
                    continue;
                }
                let j = nr as usize * cols + nc as usize;
                if closed[j] {
                    continue;
                }
                let step = if dr != 0 && dc != 0 {
                    std::f64::consts::SQRT_2
                } else {
                    1.0
                };
                let cand = g[idx] + step + penalty[j];
                if cand < g[j] {
                    g[j] = cand;
                    parent[j] = idx;
                    heap.push(Open { f: cand + h(j), idx: j });
                }
            }
        }
    }
    None
}

/// Whether every cell on the straight segment between two cells is free.
fn line_clear(penalty: &[f64], cols: usize, a: usize, b: usize) -> bool {
    let (r0, c0) = ((a / cols) as f64, (a % cols) as f64);
    let (r1, c1) = ((b / cols) as f64, (b % cols) as f64);
    let n = ((r1 - r0).abs().max((c1 - c0).abs()) * 2.0).ceil().max(1.0) as usize;
    (0..=n).all(|k| {
        let t = k as f64 / n as f64;
        let r = (r0 + t * (r1 - r0)).round() as usize;
        let c = (c0 + t * (c1 - c0)).round() as usize;
        penalty[r * cols + c] == 0.0
    })
}

fn resample(path: &[(f64, f64)], spacing: f64) -> Waypoints {
    let mut out = [(0.0, 0.0); WAYPOINT_COUNT];
    if spacing <= 0.0 || path.len() < 2 {
        return Waypoints(out);
    }
    let mut seg = 0;
    let mut seg_start = 0.0;
    for (k, slot) in out.iter_mut().enumerate() {
        let s = spacing * (k + 1) as f64;
        loop {
            let (a, b) = (path[seg], path[seg + 1]);
            let len = (b.0 - a.0).hypot(b.1 - a.1);
            if s <= seg_start + len || seg + 2 == path.len() {
                let t = if len > 0.0 {
                    ((s - seg_start) / len).min(1.0)
                } else {
                    1.0
                };
                *slot = (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1));
                break;
            }
            seg_start += len;
            seg += 1;
        }
    }
    Waypoints(out)
}

fn polyline_length(path: &[(f64, f64)]) -> f64 {
    path.windows(2)
        .map(|w| (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1))
        .sum()
}

/// Deterministic cost-map planner with hazard stop.
pub fn plan_waypoints(input: &PlannerInput<'_>, cfg: &PlannerConfig) -> Waypoints {
    let Some(latest) = input.history.last() else {
        return Waypoints::stopped();
    };
    if !(input.goal.0.is_finite() && input.goal.1.is_finite()) {
        return Waypoints::stopped();
    }
    let spec = latest.spec;
    let (rows, cols) = (spec.rows(), spec.cols());
    let origin = (0.0, 0.0);
    let eps = 1e-6;
    let goal = (
        input.goal.0.clamp(spec.x_min + eps, spec.x_max - eps),
        input.goal.1.clamp(spec.y_min + eps, spec.y_max - eps),
    );
    if goal.0.hypot(goal.1) < 1e-9 {
        return Waypoints::stopped();
    }
    let Some(start) = spec.cell_of_local(0, origin) else {
        return Waypoints::stopped();
    };
    let goal_cell = spec.cell_of_local(0, goal).expect("clamped into extents");

    let hazards = predicted_occupancy(input.history, cfg);
    let blocked = dilate(&hazards, cfg.ego_half_width_m + cfg.dilation_margin_m);
    let penalty: Vec<f64> = (0..rows * cols)
        .map(|i| {
            let mut p = 0.0;
            if blocked.values[i] > 0.0 {
                p += cfg.obstacle_cost;
            }
            if input.drivable.values[i] <= 0.0 {
                p += cfg.offroad_cost;
            }
            p
        })
        .collect();
    let s_idx = start.row * cols + start.col;
    let g_idx = goal_cell.row * cols + goal_cell.col;
    let Some(cells) = astar(&penalty, rows, cols, s_idx, g_idx) else {
        return Waypoints::stopped();
    };

    // String-pull through free cells.
    let mut keep = vec![cells[0]];
    let mut i = 0;
    while i + 1 < cells.len() {
        let mut j = cells.len() - 1;
        while j > i + 1 && !line_clear(&penalty, cols, cells[i], cells[j]) {
            j -= 1;
        }
        keep.push(cells[j]);
        i = j;
    }
    let mut path = vec![origin];
    for idx in &keep[1..keep.len().saturating_sub(1)] {
        path.push(spec.cell_center(0, Cell::new(idx / cols, idx % cols)));
    }
    path.push(goal);

    // Hazard stop: anything occupied near the first horizon of path ahead.
    let horizon = cfg.cruise_mps * HORIZON_S;
    let mut occupied: Vec<(f64, f64)> = Vec::new();
    for (k, v) in hazards.values.iter().enumerate() {
        if *v > 0.0 {
            let p = spec.cell_center(0, Cell::new(k / cols, k % cols));
            if p.0 >= 0.0 {
                occupied.push(p);
            }
        }
    }
    if !occupied.is_empty() {
        let step = spec.cell_m / 2.0;
        let lim = horizon.min(polyline_length(&path));
        let n = (lim / step).ceil() as usize;
        let r2 = cfg.hazard_stop_radius_m.powi(2);
        let samples = resample_dense(&path, step, n);
        for p in samples {
            if occupied
                .iter()
                .any(|o| (o.0 - p.0).powi(2) + (o.1 - p.1).powi(2) <= r2)
            {
                return Waypoints::stopped();
            }
        }
    }
    resample(&path, horizon / WAYPOINT_COUNT as f64)
}

fn resample_dense(path: &[(f64, f64)], step: f64, n: usize) -> Vec<(f64, f64)> {
    let mut out = vec![path[0]];
    let mut acc = 0.0;
    for w in path.windows(2) {
        let len = (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1);
        let mut s = (acc / step).floor() * step + step - acc;
        while s <= len && out.len() <= n {
            let t = s / len;
            out.push((w[0].0 + t * (w[1].0 - w[0].0), w[0].1 + t * (w[1].1 - w[0].1)));
            s += step;
        }
        acc += len;
    }
    out
}

/// Dual-PID controller. Returns the clamped command; the PID states advance
/// in place.
pub fn control_from_waypoints(
    wp: &Waypoints,
    current_speed: f64,
    lateral: &mut PidState,
    longitudinal: &mut PidState,
    cfg: &ControllerConfig,
) -> ControlCommand {
    let pts = wp.points();
    let (a, b) = (pts[WAYPOINT_COUNT - 2], pts[WAYPOINT_COUNT - 1]);
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let angle = if dx == 0.0 && dy == 0.0 { 0.0 } else { dy.atan2(dx) };
    let steer = lateral.step(angle) / cfg.max_steer_rad;

    let mut prev = (0.0, 0.0);
    let mut total = 0.0;
    for p in pts {
        total += (p.0 - prev.0).hypot(p.1 - prev.1);
        prev = *p;
    }
    let interval = HORIZON_S / WAYPOINT_COUNT as f64;
    let desired = total / WAYPOINT_COUNT as f64 / interval;
    let e = desired - current_speed;
    let u = longitudinal.step(e);
    let brake = desired < cfg.stop_speed_mps || e < -cfg.brake_margin_mps;
    ControlCommand {
        steer,
        throttle: if brake { 0.0 } else { cfg.k_e * u },
        brake: if brake { 1.0 } else { 0.0 },
    }
    .clamped()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pid_first_step() {
        let mut p = PidState::new(PidGains::LATERAL);
        // 1.14 has no exact binary form; the sum lands one ulp above it.
        assert!((p.step(1.0) - 1.14).abs() <= 2.0 * f64::EPSILON);
        assert_eq!(p.history().collect::<Vec<_>>(), vec![0.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn pid_steady_state() {
        for g in [PidGains::LATERAL, PidGains::LONGITUDINAL] {
            let mut p = PidState::new(g);
            let c = 0.7;
            let mut out = 0.0;
            for _ in 0..g.n {
                out = p.step(c);
            }
            assert!((out - c * (g.k_p + g.k_i)).abs() < 1e-12);
        }
        let mut p = PidState::new(PidGains::LONGITUDINAL);
        assert!((0..30).all(|_| p.step(0.0) == 0.0));
    }

    proptest! {
        #[test]
        fn pid_is_linear(xs in prop::collection::vec(-5.0..5.0f64, 1..30), alpha in -3.0..3.0f64) {
            let mut a = PidState::new(PidGains::LONGITUDINAL);
            let mut b = PidState::new(PidGains::LONGITUDINAL);
            for x in xs {
                let ya = a.step(x);
                let yb = b.step(alpha * x);
                prop_assert!((alpha * ya - yb).abs() < 1e-9);
            }
        }
    }

    fn empty(spec: &GridSpec) -> ScalarGrid {
        ScalarGrid::zeros(*spec, 0)
    }

    fn plan(history: &[ScalarGrid], goal: (f64, f64)) -> Waypoints {
        let spec = history[0].spec;
        let drivable = ScalarGrid::filled(spec, 0, 1.0);
        plan_waypoints(
            &PlannerInput {
                history,
                goal,
                drivable: &drivable,
            },
            &PlannerConfig::default(),
        )
    }

    #[test]
    fn empty_world_goal_ahead() {
        let spec = GridSpec::default();
        let wp = plan(&[empty(&spec)], (20.0, 0.0));
        for (k, p) in wp.points().iter().enumerate() {
            assert!((p.0 - (k + 1) as f64).abs() < 1e-9, "{p:?}");
            assert!(p.1.abs() < 1e-9);
        }
    }

    #[test]
    fn goal_at_ego_stops() {
        let spec = GridSpec::default();
        assert!(plan(&[empty(&spec)], (0.0, 0.0)).is_stop());
    }

    #[test]
    fn hazard_ahead_stops() {
        let spec = GridSpec::default();
        let mut g = empty(&spec);
        g.set(spec.cell_of_local(0, (3.0, 0.0)).unwrap(), 1.0);
        assert!(plan(&[g], (20.0, 0.0)).is_stop());
    }

    #[test]
    fn detours_around_distant_obstacle() {
        let spec = GridSpec::default();
        let mut g = empty(&spec);
        for x in 0..4 {
            for y in 0..4 {
                g.set(spec.cell_of_local(0, (28.0 + x as f64 * 0.5, -1.0 + y as f64 * 0.5)).unwrap(), 1.0);
            }
        }
        let wp = plan(&[g.clone()], (34.0, 0.0));
        assert!(!wp.is_stop());
        let blocked = dilate(&g, 1.3);
        for p in wp.points() {
            let c = spec.cell_of_local(0, *p).unwrap();
            assert_eq!(blocked.get(c), 0.0);
        }
    }

    #[test]
    fn moving_blob_is_swept() {
        let spec = GridSpec::default();
        let mut old = empty(&spec);
        let mut new = empty(&spec);
        old.set(spec.cell_of_local(0, (20.0, 6.0)).unwrap(), 1.0);
        new.set(spec.cell_of_local(0, (20.0, 4.0)).unwrap(), 1.0);
        let hist = [old.clone(), old.clone(), old.clone(), old, new];
        let pred = predicted_occupancy(&hist, &PlannerConfig::default());
        assert_eq!(pred.get(spec.cell_of_local(0, (20.0, 1.5)).unwrap()), 1.0);
        assert_eq!(pred.get(spec.cell_of_local(0, (20.0, 6.0)).unwrap()), 0.0);
    }

    #[test]
    fn controller_examples() {
        let cfg = ControllerConfig::default();
        let straight = Waypoints(std::array::from_fn(|k| ((k + 1) as f64, 0.0)));
        let mut lat = PidState::new(cfg.lateral);
        let mut lon = PidState::new(cfg.longitudinal);
        let cmd = control_from_waypoints(&straight, 5.0, &mut lat, &mut lon, &cfg);
        assert!(cmd.steer.abs() < 1e-12);
        assert_eq!(cmd.brake, 0.0);

        let cmd = control_from_waypoints(&Waypoints::stopped(), 5.0, &mut lat, &mut lon, &cfg);
        assert_eq!((cmd.brake, cmd.throttle), (1.0, 0.0));

        let mut pts = [(0.0, 0.0); WAYPOINT_COUNT];
        for (k, p) in pts.iter_mut().enumerate() {
            *p = ((k + 1) as f64, 0.0);
        }
        pts[9] = (pts[8].0 + 0.3f64.cos(), 0.3f64.sin());
        let mut lat = PidState::new(cfg.lateral);
        let mut lon = PidState::new(cfg.longitudinal);
        let cmd = control_from_waypoints(&Waypoints(pts), 5.0, &mut lat, &mut lon, &cfg);
        assert!((cmd.steer - 0.3 * 1.14 / 0.6).abs() < 1e-9);
    }

    #[test]
    fn clamping() {
        let c = ControlCommand {
            steer: 3.0,
            throttle: -1.0,
            brake: f64::NAN,
        }
        .clamped();
        assert_eq!(c, ControlCommand { steer: 1.0, throttle: 0.0, brake: 0.0 });
    }
}
