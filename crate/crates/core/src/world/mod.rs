//! Ground-truth world: layout, actors, triggers, RSU placement, kinematic
//! stepping and collision bookkeeping.

pub mod scenario;

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::driving::ControlCommand;
use crate::error::{Error, Result};
use crate::geometry::{ObjectClass, OrientedBox};
use crate::grid::{normalize_angle, Pose};
use crate::rng;

pub use scenario::{
    builtin_scenario_dir, resolve_scenario_path, ActorConfig, BehaviorConfig, EgoConfig,
    LayoutConfig, RsuPolicy, ScenarioConfig, TriggerConfig, VehicleParams, SCENARIO_DIR_ENV, SUITE,
};

/// World-frame binary raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub origin: (f64, f64),
    pub cell_m: f64,
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Raster {
    pub fn at(&self, p: (f64, f64)) -> bool {
        let i = ((p.0 - self.origin.0) / self.cell_m).floor();
        let j = ((p.1 - self.origin.1) / self.cell_m).floor();
        if i < 0.0 || j < 0.0 {
            return false;
        }
        let (i, j) = (i as usize, j as usize);
        i < self.width && j < self.height && self.data[j * self.width + i]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Obstacle {
    pub label: String,
    pub bbox: OrientedBox,
    pub tall: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoadLayout {
    pub drivable: Raster,
    pub obstacles: Vec<Obstacle>,
}

impl RoadLayout {
    pub fn is_drivable(&self, p: (f64, f64)) -> bool {
        self.drivable.at(p)
    }

    fn from_config(cfg: &LayoutConfig) -> Self {
        let obstacles: Vec<Obstacle> = cfg
            .obstacles
            .iter()
            .map(|o| Obstacle {
                label: o.label.clone(),
                bbox: OrientedBox::new(o.cx, o.cy, o.w, o.l, o.yaw, ObjectClass::Static),
                tall: o.tall,
            })
            .collect();
        let rects: Vec<OrientedBox> = cfg
            .drivable
            .iter()
            .map(|r| OrientedBox::new(r.cx, r.cy, r.w, r.l, r.yaw, ObjectClass::Static))
            .collect();
        let mut data = vec![false; cfg.width * cfg.height];
        for j in 0..cfg.height {
            for i in 0..cfg.width {
                let p = (
                    cfg.origin[0] + (i as f64 + 0.5) * cfg.cell_m,
                    cfg.origin[1] + (j as f64 + 0.5) * cfg.cell_m,
                );
                data[j * cfg.width + i] = rects.iter().any(|r| r.contains(p))
                    && !obstacles.iter().any(|o| o.bbox.contains(p));
            }
        }
        RoadLayout {
            drivable: Raster {
                origin: (cfg.origin[0], cfg.origin[1]),
                cell_m: cfg.cell_m,
                width: cfg.width,
                height: cfg.height,
                data,
            },
            obstacles,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Behavior {
    Scripted { path: Vec<(f64, f64)>, speed: f64 },
    ConstantVelocity { speed: f64 },
    EgoControlled,
    Parked,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Actor {
    pub id: u32,
    pub bbox: OrientedBox,
    pub speed: f64,
    pub behavior: Behavior,
    pub occludes_ground_sensors: bool,
    /// Pose at activation; scripted motion is measured from here.
    pub origin: Pose,
    pub activated_step: u64,
}

impl Actor {
    pub fn is_ego(&self) -> bool {
        matches!(self.behavior, Behavior::EgoControlled)
    }

    pub fn pose(&self) -> Pose {
        self.bbox.pose()
    }

    /// Scripted pose after `elapsed` seconds since activation.
    fn scripted_pose(&self, elapsed: f64) -> (Pose, f64) {
        match &self.behavior {
            Behavior::Scripted { path, speed } => {
                let mut remaining = speed * elapsed;
                let mut from = (self.origin.x, self.origin.y);
                let mut yaw = self.origin.yaw;
                for &to in path {
                    let seg = (to.0 - from.0).hypot(to.1 - from.1);
                    if seg <= 0.0 {
                        continue;
                    }
                    yaw = (to.1 - from.1).atan2(to.0 - from.0);
                    if remaining <= seg {
                        let t = remaining / seg;
                        let p = (from.0 + t * (to.0 - from.0), from.1 + t * (to.1 - from.1));
                        return (Pose::new(p.0, p.1, yaw), *speed);
                    }
                    remaining -= seg;
                    from = to;
                }
                (Pose::new(from.0, from.1, yaw), 0.0)
            }
            Behavior::ConstantVelocity { speed } => {
                let d = speed * elapsed;
                (self.origin.compose(&Pose::new(d, 0.0, 0.0)), *speed)
            }
            _ => (self.pose(), self.speed),
        }
    }
}

/// A navigation polyline with cumulative arc length.
#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub points: Vec<(f64, f64)>,
    pub cumulative: Vec<f64>,
}

impl Route {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::Scenario("route needs two points".into()));
        }
        let mut cumulative = vec![0.0];
        for w in points.windows(2) {
            let d = (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1);
            if d <= 0.0 {
                return Err(Error::Scenario("route has repeated points".into()));
            }
            cumulative.push(cumulative.last().unwrap() + d);
        }
        Ok(Route { points, cumulative })
    }

    pub fn length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    /// Point and heading at arc length `s`; extrapolates past either end
    /// along the first or last segment.
    pub fn point_at(&self, s: f64) -> ((f64, f64), f64) {
        let n = self.points.len();
        let seg = if s <= 0.0 {
            0
        } else {
            match self.cumulative.iter().position(|&c| c >= s) {
                Some(0) => 0,
                Some(i) => i - 1,
                None => n - 2,
            }
        };
        let a = self.points[seg];
        let b = self.points[seg + 1];
        let len = self.cumulative[seg + 1] - self.cumulative[seg];
        let t = (s - self.cumulative[seg]) / len;
        let heading = (b.1 - a.1).atan2(b.0 - a.0);
        ((a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1)), heading)
    }

    /// Arc length of the closest point on the route to `p`.
    pub fn project(&self, p: (f64, f64)) -> f64 {
        let mut best = (f64::INFINITY, 0.0);
        for (i, w) in self.points.windows(2).enumerate() {
            let (a, b) = (w[0], w[1]);
            let (dx, dy) = (b.0 - a.0, b.1 - a.1);
            let len2 = dx * dx + dy * dy;
            let t = (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0);
            let q = (a.0 + t * dx, a.1 + t * dy);
            let d = (p.0 - q.0).hypot(p.1 - q.1);
            if d < best.0 {
                best = (d, self.cumulative[i] + t * len2.sqrt());
            }
        }
        best.1
    }

    /// Same route shifted sideways by `offset` meters (positive = left).
    pub fn offset(&self, offset: f64) -> Result<Route> {
        let n = self.points.len();
        let normal = |i: usize| {
            let (a, b) = (self.points[i], self.points[i + 1]);
            let len = (b.0 - a.0).hypot(b.1 - a.1);
            (-(b.1 - a.1) / len, (b.0 - a.0) / len)
        };
        let pts = (0..n)
            .map(|i| {
                let nrm = if i == 0 {
                    normal(0)
                } else if i == n - 1 {
                    normal(n - 2)
                } else {
                    let (a, b) = (normal(i - 1), normal(i));
                    let (x, y) = (a.0 + b.0, a.1 + b.1);
                    let len = x.hypot(y).max(1e-9);
                    (x / len, y / len)
                };
                let p = self.points[i];
                (p.0 + offset * nrm.0, p.1 + offset * nrm.1)
            })
            .collect();
        Route::new(pts)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollisionKind {
    Pedestrian,
    Vehicle,
    Layout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollisionEvent {
    pub step: u64,
    pub ego_id: u32,
    pub kind: CollisionKind,
    /// Other actor, or `None` for layout contact.
    pub other: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PendingTrigger {
    pub ego: u32,
    pub anchor: (f64, f64),
    pub trigger_distance: f64,
    pub hazard: Actor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum ContactKey {
    Actor(u32),
    Layout,
}

/// Complete ground-truth state. Actors are kept sorted by id.
#[derive(Debug, Clone)]
pub struct WorldState {
    pub time_step: u64,
    pub dt: f64,
    pub vehicle: VehicleParams,
    pub layout: RoadLayout,
    pub actors: Vec<Actor>,
    pub routes: BTreeMap<u32, Route>,
    pub rsus: Vec<Pose>,
    pub rsu_policy: RsuPolicy,
    rsu_window: Option<u64>,
    pub pending: Vec<PendingTrigger>,
    /// Hazard actors whose trigger has fired.
    pub fired: BTreeSet<u32>,
    pub events: Vec<CollisionEvent>,
    contacts: BTreeSet<(u32, ContactKey)>,
}

/// Build the initial world from a scenario and an episode seed.
pub fn load_scenario(cfg: &ScenarioConfig, episode_seed: u64) -> Result<WorldState> {
    cfg.validate()?;
    let layout = RoadLayout::from_config(&cfg.layout);
    let veh = cfg.vehicle;
    let base_route = Route::new(cfg.egos.route.iter().map(|p| (p[0], p[1])).collect())?;

    let mut jitter_rng = rng::stream(episode_seed, &[cfg.seed, 0x7a1e]);
    let mut actors: Vec<Actor> = Vec::new();
    let mut pending = Vec::new();
    for a in &cfg.actors {
        let (w, l) = a
            .size
            .map(|s| (s[0], s[1]))
            .unwrap_or_else(|| a.class.default_size());
        let speed_scale = if cfg.jitter.speed_frac > 0.0 {
            1.0 + jitter_rng.random_range(-cfg.jitter.speed_frac..=cfg.jitter.speed_frac)
        } else {
            1.0
        };
        let behavior = match &a.behavior {
            BehaviorConfig::Parked => Behavior::Parked,
            BehaviorConfig::ConstantVelocity { speed } => Behavior::ConstantVelocity {
                speed: speed * speed_scale,
            },
            BehaviorConfig::Scripted { speed, path } => Behavior::Scripted {
                path: path.iter().map(|p| (p[0], p[1])).collect(),
                speed: speed * speed_scale,
            },
        };
        let pose = Pose::new(a.pose[0], a.pose[1], a.pose[2]);
        let speed = match behavior {
            Behavior::Scripted { speed, .. } | Behavior::ConstantVelocity { speed } => speed,
            _ => 0.0,
        };
        let mut actor = Actor {
            id: a.id,
            bbox: OrientedBox::at_pose(&pose, w, l, a.class),
            speed,
            behavior,
            occludes_ground_sensors: a.occludes.unwrap_or(a.class == ObjectClass::Vehicle),
            origin: pose,
            activated_step: 0,
        };
        if a.active {
            // Scripted paths start facing their first segment.
            let (p, _) = actor.scripted_pose(0.0);
            actor.bbox = OrientedBox::at_pose(&p, w, l, a.class);
            actors.push(actor);
        } else {
            let t = cfg
                .triggers
                .iter()
                .find(|t| t.hazard_actor == a.id)
                .ok_or_else(|| Error::Scenario(format!("inactive actor {} has no trigger", a.id)))?;
            let jitter = if cfg.jitter.trigger_m > 0.0 {
                jitter_rng.random_range(-cfg.jitter.trigger_m..=cfg.jitter.trigger_m)
            } else {
                0.0
            };
            pending.push(PendingTrigger {
                ego: t.ego,
                anchor: t
                    .anchor
                    .map(|p| (p[0], p[1]))
                    .unwrap_or((pose.x, pose.y)),
                trigger_distance: (t.trigger_distance + jitter).max(0.0),
                hazard: actor,
            });
        }
    }

    let mut routes = BTreeMap::new();
    let lane = cfg.egos.lane_width;
    for k in 0..cfg.egos.count {
        // Spawn pattern: first at route start, second 12 m ahead, third
        // 12 m behind, fourth and fifth on the adjacent right/left lanes.
        let (route, s0) = match k {
            0 => (base_route.clone(), 0.0),
            1 => (base_route.clone(), 12.0),
            2 => (base_route.clone(), -12.0),
            3 => (base_route.offset(-lane)?, 0.0),
            _ => (base_route.offset(lane)?, 0.0),
        };
        let id = k as u32;
        let mut placed = None;
        for attempt in 0..=100u32 {
            // 0, +1, -1, +2, -2, ... meters along the route.
            let delta = if attempt == 0 {
                0.0
            } else if attempt % 2 == 1 {
                attempt.div_ceil(2) as f64
            } else {
                -((attempt / 2) as f64)
            };
            let (p, heading) = route.point_at(s0 + delta);
            let bbox = OrientedBox::new(p.0, p.1, veh.width_m, veh.length_m, heading, ObjectClass::Vehicle);
            let on_road = bbox.corners().iter().all(|c| layout.drivable.at(*c));
            let clear = !actors.iter().any(|a| a.bbox.overlaps(&bbox))
                && !layout.obstacles.iter().any(|o| o.bbox.overlaps(&bbox));
            if on_road && clear {
                placed = Some(bbox);
                break;
            }
        }
        let bbox = placed.ok_or(Error::SpawnPlacement(id))?;
        actors.push(Actor {
            id,
            bbox,
            speed: cfg.egos.initial_speed,
            behavior: Behavior::EgoControlled,
            occludes_ground_sensors: true,
            origin: bbox.pose(),
            activated_step: 0,
        });
        routes.insert(id, route);
    }
    actors.sort_by_key(|a| a.id);

    let mut state = WorldState {
        time_step: 0,
        dt: cfg.dt,
        vehicle: veh,
        layout,
        actors,
        routes,
        rsus: Vec::new(),
        rsu_policy: cfg.rsu_policy.clone(),
        rsu_window: None,
        pending,
        fired: BTreeSet::new(),
        events: Vec::new(),
        contacts: BTreeSet::new(),
    };
    state.update_rsus();
    state.fire_triggers();
    Ok(state)
}

impl WorldState {
    pub fn actor(&self, id: u32) -> Option<&Actor> {
        self.actors
            .binary_search_by_key(&id, |a| a.id)
            .ok()
            .map(|i| &self.actors[i])
    }

    pub fn ego_ids(&self) -> Vec<u32> {
        self.actors.iter().filter(|a| a.is_ego()).map(|a| a.id).collect()
    }

    pub fn time_s(&self) -> f64 {
        self.time_step as f64 * self.dt
    }

    /// Remove an ego that has left the episode (route finished or blocked).
    /// Its route stays for scoring.
    pub fn retire(&mut self, id: u32) -> bool {
        let before = self.actors.len();
        self.actors.retain(|a| a.id != id || !a.is_ego());
        self.contacts.retain(|(e, k)| *e != id && *k != ContactKey::Actor(id));
        self.actors.len() != before
    }

    /// Advance one tick. Egos without a command coast.
    pub fn step(&mut self, controls: &BTreeMap<u32, ControlCommand>) {
        let veh = self.vehicle;
        let dt = self.dt;
        let next = self.time_step + 1;
        for actor in self.actors.iter_mut() {
            match actor.behavior {
                Behavior::EgoControlled => {
                    let cmd = controls.get(&actor.id).copied().unwrap_or_default().clamped();
                    let delta = cmd.steer * veh.max_steer_rad;
                    let v = (actor.speed + (cmd.throttle * veh.max_accel - cmd.brake * veh.max_brake) * dt)
                        .clamp(0.0, veh.v_max);
                    let yaw = normalize_angle(actor.bbox.yaw + v / veh.wheelbase_m * delta.tan() * dt);
                    let (s, c) = yaw.sin_cos();
                    actor.speed = v;
                    actor.bbox.cx += v * dt * c;
                    actor.bbox.cy += v * dt * s;
                    actor.bbox.yaw = yaw;
                }
                Behavior::Scripted { .. } | Behavior::ConstantVelocity { .. } => {
                    let elapsed = (next - actor.activated_step) as f64 * dt;
                    let (p, v) = actor.scripted_pose(elapsed);
                    actor.bbox.cx = p.x;
                    actor.bbox.cy = p.y;
                    actor.bbox.yaw = p.yaw;
                    actor.speed = v;
                }
                Behavior::Parked => {}
            }
        }
        self.time_step = next;
        self.fire_triggers();
        self.update_rsus();
        let new_events = self.check_collisions();
        self.events.extend(new_events);
    }

    fn fire_triggers(&mut self) {
        let mut i = 0;
        while i < self.pending.len() {
            let t = &self.pending[i];
            let armed = self
                .actor(t.ego)
                .map(|e| (e.bbox.cx - t.anchor.0).hypot(e.bbox.cy - t.anchor.1) <= t.trigger_distance)
                .unwrap_or(false);
            if armed {
                let t = self.pending.remove(i);
                let mut hazard = t.hazard;
                hazard.activated_step = self.time_step;
                let (p, _) = hazard.scripted_pose(0.0);
                hazard.bbox.cx = p.x;
                hazard.bbox.cy = p.y;
                hazard.bbox.yaw = p.yaw;
                self.fired.insert(hazard.id);
                let pos = self.actors.partition_point(|a| a.id < hazard.id);
                self.actors.insert(pos, hazard);
            } else {
                i += 1;
            }
        }
    }

    fn update_rsus(&mut self) {
        match self.rsu_policy.clone() {
            RsuPolicy::None => self.rsus.clear(),
            RsuPolicy::Fixed { poses } => {
                self.rsus = poses.iter().map(|p| Pose::new(p[0], p[1], p[2])).collect();
            }
            RsuPolicy::FollowEgo {
                ego,
                ahead_m,
                period_s,
                margin_m,
            } => {
                let window = (self.time_s() / period_s + 1e-9).floor() as u64;
                if self.rsu_window == Some(window) {
                    return;
                }
                if let Some(e) = self.actor(ego) {
                    let pose = place_rsu(&self.layout, &e.pose(), ahead_m, margin_m);
                    self.rsus = vec![pose];
                    self.rsu_window = Some(window);
                }
            }
        }
    }

    /// New collision contacts this tick (oriented-box overlap for actors,
    /// footprint corners off the drivable raster for layout). A contact is
    /// reported once and re-armed only after the pair separates.
    pub fn check_collisions(&mut self) -> Vec<CollisionEvent> {
        let mut now: BTreeSet<(u32, ContactKey)> = BTreeSet::new();
        let mut kinds: BTreeMap<(u32, ContactKey), CollisionKind> = BTreeMap::new();
        for ego in self.actors.iter().filter(|a| a.is_ego()) {
            for other in &self.actors {
                if other.id == ego.id || !ego.bbox.overlaps(&other.bbox) {
                    continue;
                }
                let key = (ego.id, ContactKey::Actor(other.id));
                let kind = match other.bbox.class {
                    ObjectClass::Pedestrian => CollisionKind::Pedestrian,
                    ObjectClass::Static => CollisionKind::Layout,
                    _ => CollisionKind::Vehicle,
                };
                now.insert(key);
                kinds.insert(key, kind);
            }
            if ego.bbox.corners().iter().any(|c| !self.layout.drivable.at(*c)) {
                let key = (ego.id, ContactKey::Layout);
                now.insert(key);
                kinds.insert(key, CollisionKind::Layout);
            }
        }
        let events = now
            .difference(&self.contacts)
            .map(|key| CollisionEvent {
                step: self.time_step,
                ego_id: key.0,
                kind: kinds[key],
                other: match key.1 {
                    ContactKey::Actor(id) => Some(id),
                    ContactKey::Layout => None,
                },
            })
            .collect();
        self.contacts = now;
        events
    }
}

/// Roadside unit pose: `ahead_m` in front of the ego along its heading,
/// pushed sideways to the right road edge and then `margin_m` back toward
/// the road.
pub fn place_rsu(layout: &RoadLayout, ego: &Pose, ahead_m: f64, margin_m: f64) -> Pose {
    let base = ego.to_world((ahead_m, 0.0));
    let right = |d: f64| ego.to_world((ahead_m, -d));
    let raster = &layout.drivable;
    if !raster.at(base) {
        return Pose::new(base.0, base.1, ego.yaw);
    }
    let step = 0.05;
    let mut inside = 0.0;
    let mut outside = None;
    let mut d = step;
    while d <= 50.0 {
        if raster.at(right(d)) {
            inside = d;
        } else {
            outside = Some(d);
            break;
        }
        d += step;
    }
    let Some(mut out) = outside else {
        let p = right(inside);
        return Pose::new(p.0, p.1, ego.yaw);
    };
    for _ in 0..60 {
        let mid = 0.5 * (inside + out);
        if raster.at(right(mid)) {
            inside = mid;
        } else {
            out = mid;
        }
    }
    let p = right((out - margin_m).max(0.0));
    Pose::new(p.0, p.1, ego.yaw)
}
