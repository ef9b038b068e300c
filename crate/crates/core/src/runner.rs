//! Closed-loop episode orchestration and parameter sweeps.
//!
//! Each step is two-phase: every agent senses, plans and communicates from
//! the same world snapshot, then all egos' commands are applied at once.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::comm::{
    build_request_map, cells_to_budget, comm_volume_log2, pack_message, pool_masks, solve_selection, Channel,
    ChannelConfig, DetectionMessage, Message, RequestMap, Transmit,
};
use crate::driving::{
    control_from_waypoints, ego_drivable, plan_waypoints, ControlCommand, ControllerConfig, PidState,
    PlannerConfig, PlannerInput, Waypoints, HISTORY_FRAMES, HORIZON_S, WAYPOINT_COUNT,
};
use crate::error::{Error, Result};
use crate::fusion::{align_messages, decode_pyramid, fuse, late_fuse};
use crate::geometry::{bev_iou, ObjectClass, OrientedBox};
use crate::grid::{warp_scalar, FeaturePyramid, GridSpec, Pose, ScalarGrid};
use crate::metrics::{
    ade_fde, average_precision_frames, collision_rates, driving_score, infraction_score, mean_ap, mean_speed,
    route_completion, CollisionCounts, CommReport, EpisodeReport, EvalFrame, InfractionKind, InfractionLedger,
    NearWaypointTally, PerceptionReport, PlanningReport, RouteReport, SweepRow, REPORT_VERSION,
};
use crate::par;
use crate::rng;
use crate::sensing::{
    confidence_map, decode_heads, encode, footprint_cells, nms, rasterize_occupancy, ClassCodebook, Detection, DetectorConfig,
    SensorAgent, SensorModel,
};
use crate::world::{load_scenario, ScenarioConfig, WorldState};

/// Agent ids at and above this value are roadside units.
pub const RSU_ID_BASE: u32 = 1_000_000;

const AP_IOU: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    NoFusion,
    LateFusion,
    CodrivingConfidenceOnly,
    CodrivingDrivingRequest,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::NoFusion,
        Strategy::LateFusion,
        Strategy::CodrivingConfidenceOnly,
        Strategy::CodrivingDrivingRequest,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::NoFusion => "no_fusion",
            Strategy::LateFusion => "late_fusion",
            Strategy::CodrivingConfidenceOnly => "codriving_confidence_only",
            Strategy::CodrivingDrivingRequest => "codriving_driving_request",
        }
    }

    pub fn shares_features(self) -> bool {
        matches!(self, Strategy::CodrivingConfidenceOnly | Strategy::CodrivingDrivingRequest)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy `{s}`")))
    }
}

/// Per-link, per-step feature budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    /// Every level-0 cell may be sent.
    Full,
    /// Compression exponent `k`: `b = floor(X·Y / 2^k)` cells.
    CompressionLog2(f64),
    /// Explicit level-0 cell count.
    Cells(usize),
}

impl Budget {
    pub fn cells(&self, total: usize) -> usize {
        match *self {
            Budget::Full => total,
            Budget::CompressionLog2(k) => (total as f64 / k.exp2()).floor().max(0.0) as usize,
            Budget::Cells(b) => b.min(total),
        }
    }

    /// Value reported in the `bandwidth_log2` column.
    pub fn log2_label(&self) -> Option<f64> {
        match *self {
            Budget::CompressionLog2(k) => Some(k),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    pub strategy: Strategy,
    pub budget: Budget,
    /// Latency and pose noise; the element budget is derived from `budget`.
    pub channel: ChannelConfig,
    pub spec: GridSpec,
    pub channels: usize,
    pub sigma_m: f64,
    pub seed: u64,
    /// Overrides the scenario's limit when set.
    pub step_limit: Option<u64>,
    pub collab_range_m: f64,
    /// Distance along the route to the planner goal.
    pub goal_lookahead_m: f64,
    /// Detections centred this close to the ego's own footprint are dropped.
    pub self_mask_margin_m: f64,
    /// Distance thresholds of the near-waypoint statistic.
    pub near_deltas_m: Vec<f64>,
    pub sensor: SensorModel,
    pub detector: DetectorConfig,
    pub planner: PlannerConfig,
    pub controller: ControllerConfig,
}

impl RunConfig {
    pub fn new(scenario: ScenarioConfig, strategy: Strategy) -> Self {
        RunConfig {
            scenario,
            strategy,
            budget: Budget::Full,
            channel: ChannelConfig::default(),
            spec: GridSpec::default(),
            channels: 32,
            sigma_m: 2.0,
            seed: 0,
            step_limit: None,
            collab_range_m: 70.0,
            goal_lookahead_m: 24.0,
            self_mask_margin_m: 1.0,
            near_deltas_m: vec![2.0, 5.0],
            sensor: SensorModel::default(),
            detector: DetectorConfig::default(),
            planner: PlannerConfig::default(),
            controller: ControllerConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.spec.validate()?;
        if self.spec.rows() % 4 != 0 || self.spec.cols() % 4 != 0 {
            return Err(Error::Config("grid must be divisible by 4 for three levels".into()));
        }
        if self.step_limit == Some(0) {
            return Err(Error::Config("step limit must be positive".into()));
        }
        if !(self.sigma_m > 0.0) {
            return Err(Error::Config("sigma_m must be positive".into()));
        }
        if let Budget::CompressionLog2(k) = self.budget {
            if !k.is_finite() || k < 0.0 {
                return Err(Error::Config(format!("compression exponent {k} must be finite and ≥ 0")));
            }
        }
        let c = &self.channel;
        if !(c.latency_ms >= 0.0 && c.pose_sigma_t >= 0.0 && c.pose_sigma_r_deg >= 0.0) {
            return Err(Error::Config("latency and pose noise must be non-negative".into()));
        }
        if self.near_deltas_m.iter().any(|d| !(*d >= 0.0 && d.is_finite())) {
            return Err(Error::Config("near-waypoint thresholds must be finite and ≥ 0".into()));
        }
        ClassCodebook::new(self.channels, 3)?;
        Ok(())
    }

    fn budget_cells(&self) -> usize {
        self.budget.cells(self.spec.cells())
    }

    /// Explicit limit, else the scenario's, else twice the cruise time over
    /// the longest route plus the blocked window.
    pub fn effective_step_limit(&self, world: &WorldState) -> u64 {
        if let Some(n) = self.step_limit {
            return n;
        }
        if self.scenario.limits.step_limit > 0 {
            return self.scenario.limits.step_limit;
        }
        let longest = world.routes.values().map(|r| r.length()).fold(0.0, f64::max);
        let seconds = 2.0 * longest / self.planner.cruise_mps + self.scenario.limits.min_speed_window_s;
        (seconds / world.dt).ceil() as u64
    }
}

/// Everything one step decided, for replay comparisons and protocol checks.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTrace {
    pub step: u64,
    pub controls: BTreeMap<u32, ControlCommand>,
    pub poses: BTreeMap<u32, Pose>,
    /// Collaborators each ego addressed this step.
    pub collaborators: BTreeMap<u32, Vec<u32>>,
    pub messages_sent: u64,
}

#[derive(Debug, Clone)]
pub struct Episode {
    pub report: EpisodeReport,
    pub trace: Vec<StepTrace>,
    /// Messages still in flight when the episode ended.
    pub dropped_in_flight: u64,
    /// Near-waypoint tallies against each ego's intended route, one per
    /// entry of `RunConfig::near_deltas_m`.
    pub near_waypoints: Vec<(f64, NearWaypointTally)>,
    /// Per ego and step, the detections and ground truth scored for AP.
    pub frames: Vec<EvalFrame>,
    /// The same frames scored with each ego's single-agent detections.
    pub single_frames: Vec<EvalFrame>,
}

struct EgoState {
    id: u32,
    lateral: PidState,
    longitudinal: PidState,
    single_hist: VecDeque<(Pose, ScalarGrid)>,
    fused_hist: VecDeque<(Pose, ScalarGrid)>,
    truth_hist: VecDeque<(Pose, ScalarGrid)>,
    traveled: Vec<(f64, f64)>,
    distance_m: f64,
    active_steps: u64,
    slow_steps: u64,
    finished: bool,
    ledger: InfractionLedger,
}

#[derive(Clone, Copy)]
struct AgentInfo {
    id: u32,
    sensor: SensorAgent,
}

struct Sensed {
    pyramid: FeaturePyramid,
    detections: Vec<Detection>,
    confidence: ScalarGrid,
    occupancy: ScalarGrid,
}

struct EgoOutcome {
    plan: Waypoints,
    occupancy: ScalarGrid,
    truth_occupancy: ScalarGrid,
    frame: EvalFrame,
    single_detections: Vec<Detection>,
    ade_fde: Option<(f64, f64)>,
}

/// Planner history: past frames warped into the current pose, then `now`.
fn history_frames(hist: &VecDeque<(Pose, ScalarGrid)>, pose: &Pose, now: &ScalarGrid) -> Vec<ScalarGrid> {
    let mut out: Vec<ScalarGrid> = hist.iter().map(|(p, g)| warp_scalar(g, p, pose, 0.0)).collect();
    out.push(now.clone());
    out
}

fn push_history(hist: &mut VecDeque<(Pose, ScalarGrid)>, pose: Pose, g: ScalarGrid) {
    hist.push_back((pose, g));
    while hist.len() > HISTORY_FRAMES - 1 {
        hist.pop_front();
    }
}

/// Ground-truth road users in `pose`'s frame, excluding `self_id`.
fn truth_boxes(world: &WorldState, self_id: u32, pose: &Pose, spec: &GridSpec) -> Vec<(u32, OrientedBox)> {
    world
        .actors
        .iter()
        .filter(|a| a.id != self_id && a.bbox.class != ObjectClass::Static)
        .map(|a| (a.id, a.bbox.to_frame(pose)))
        .filter(|(_, b)| spec.contains_local((b.cx, b.cy)))
        .collect()
}

/// Detections scored for AP: inside the extents, and not matching an object
/// whose center lies outside them. Those objects are neither hits nor misses.
fn scored_detections(
    dets: Vec<Detection>,
    world: &WorldState,
    self_id: u32,
    pose: &Pose,
    spec: &GridSpec,
) -> Vec<Detection> {
    let outside: Vec<OrientedBox> = world
        .actors
        .iter()
        .filter(|a| a.id != self_id && a.bbox.class != ObjectClass::Static)
        .map(|a| a.bbox.to_frame(pose))
        .filter(|b| !spec.contains_local((b.cx, b.cy)))
        .collect();
    dets.into_iter()
        .filter(|d| spec.contains_local((d.bbox.cx, d.bbox.cy)))
        .filter(|d| {
            !outside
                .iter()
                .any(|b| b.class == d.bbox.class && bev_iou(b, &d.bbox) >= AP_IOU)
        })
        .collect()
}

/// Remove the ego's own vehicle detection. Other classes near the bumper
/// stay visible.
fn drop_self(dets: Vec<Detection>, half_l: f64, half_w: f64) -> Vec<Detection> {
    dets.into_iter()
        .filter(|d| {
            d.bbox.class != ObjectClass::Vehicle || !(d.bbox.cx.abs() <= half_l && d.bbox.cy.abs() <= half_w)
        })
        .collect()
}

/// Route points ahead of the ego at the planner's waypoint spacing, in the
/// ego frame.
fn intended_waypoints(world: &WorldState, id: u32, pose: &Pose, cruise: f64) -> Vec<(f64, f64)> {
    let route = &world.routes[&id];
    let s = route.project((pose.x, pose.y));
    let spacing = cruise * HORIZON_S / WAYPOINT_COUNT as f64;
    (1..=WAYPOINT_COUNT)
        .map(|k| pose.to_local(route.point_at(s + k as f64 * spacing).0))
        .collect()
}

/// Simulate one episode.
pub fn run_episode(cfg: &RunConfig) -> Result<Episode> {
    cfg.validate()?;
    let mut world = load_scenario(&cfg.scenario, cfg.seed)?;
    let spec = cfg.spec;
    let codebook = ClassCodebook::new(cfg.channels, 3)?;
    let b_cells = cfg.budget_cells();
    let mut channel_cfg = cfg.channel;
    channel_cfg.budget_elements = Some(cells_to_budget(b_cells, cfg.channels));
    let mut feature_channel: Channel<Message> = Channel::new(channel_cfg);
    let mut detection_channel: Channel<DetectionMessage> = Channel::new(channel_cfg);
    let step_limit = cfg.effective_step_limit(&world);
    let veh = world.vehicle;
    let (half_l, half_w) = (
        veh.length_m / 2.0 + cfg.self_mask_margin_m,
        veh.width_m / 2.0 + cfg.self_mask_margin_m,
    );
    let min_speed = cfg.scenario.limits.min_speed_mps;
    let blocked_steps = (cfg.scenario.limits.min_speed_window_s / world.dt).ceil().max(1.0) as u64;

    let mut egos: Vec<EgoState> = world
        .ego_ids()
        .into_iter()
        .map(|id| {
            let p = world.actor(id).expect("ego exists").pose();
            EgoState {
                id,
                lateral: PidState::new(cfg.controller.lateral),
                longitudinal: PidState::new(cfg.controller.longitudinal),
                single_hist: VecDeque::new(),
                fused_hist: VecDeque::new(),
                truth_hist: VecDeque::new(),
                traveled: vec![(p.x, p.y)],
                distance_m: 0.0,
                active_steps: 0,
                slow_steps: 0,
                finished: false,
                ledger: InfractionLedger::default(),
            }
        })
        .collect();

    let mut trace = Vec::new();
    let mut frames: Vec<EvalFrame> = Vec::new();
    let mut single_frames: Vec<EvalFrame> = Vec::new();
    let mut displacement: Vec<(f64, f64)> = Vec::new();
    let mut per_step_bytes = Vec::new();
    let mut per_step_log2 = Vec::new();
    let mut near: Vec<(f64, NearWaypointTally)> = cfg
        .near_deltas_m
        .iter()
        .map(|d| (*d, NearWaypointTally::default()))
        .collect();
    let mut steps_run = 0;

    while steps_run < step_limit {
        let active: Vec<usize> = (0..egos.len()).filter(|&k| !egos[k].finished).collect();
        if active.is_empty() {
            break;
        }
        let now = world.time_step;

        // Phase 1: sensing for every agent from the snapshot.
        let mut agents: Vec<AgentInfo> = active
            .iter()
            .map(|&k| {
                let id = egos[k].id;
                AgentInfo {
                    id,
                    sensor: SensorAgent {
                        pose: world.actor(id).expect("active ego").pose(),
                        elevated: false,
                        actor_id: Some(id),
                    },
                }
            })
            .collect();
        if cfg.strategy != Strategy::NoFusion {
            for (k, p) in world.rsus.iter().enumerate() {
                agents.push(AgentInfo {
                    id: RSU_ID_BASE + k as u32,
                    sensor: SensorAgent {
                        pose: *p,
                        elevated: true,
                        actor_id: None,
                    },
                });
            }
        }
        let sensed: Vec<Sensed> = par::map_slice(&agents, |a| -> Result<Sensed> {
            let seed = rng::mix(cfg.seed, &[0x656e_636f, a.id as u64, now]);
            let pyramid = encode(&world, &a.sensor, &spec, &codebook, &cfg.sensor, seed);
            let f = decode_pyramid(&pyramid)?;
            let heads = decode_heads(&f, &spec, &codebook)?;
            let mut detections = nms(&heads, &cfg.detector, &spec);
            if a.sensor.actor_id.is_some() {
                detections = drop_self(detections, half_l, half_w);
            }
            let occupancy = rasterize_occupancy(&detections, &spec);
            Ok(Sensed {
                pyramid,
                detections,
                confidence: confidence_map(&heads.scores),
                occupancy,
            })
        })
        .into_iter()
        .collect::<Result<_>>()?;

        // Phase 2: single-agent plans, which drive the request maps.
        let ego_count = active.len();
        let goals: Vec<(f64, f64)> = active
            .iter()
            .enumerate()
            .map(|(n, &k)| {
                let route = &world.routes[&egos[k].id];
                let pose = agents[n].sensor.pose;
                let s = route.project((pose.x, pose.y));
                pose.to_local(route.point_at(s + cfg.goal_lookahead_m).0)
            })
            .collect();
        let drivable: Vec<ScalarGrid> = par::map_range(ego_count, |n| {
            ego_drivable(&world.layout, &agents[n].sensor.pose, &spec)
        });
        let single_plans: Vec<Waypoints> = par::map_range(ego_count, |n| {
            let e = &egos[active[n]];
            let hist = history_frames(&e.single_hist, &agents[n].sensor.pose, &sensed[n].occupancy);
            plan_waypoints(
                &PlannerInput {
                    history: &hist,
                    goal: goals[n],
                    drivable: &drivable[n],
                },
                &cfg.planner,
            )
        });

        // Phase 3: request, select, pack and send.
        let mut collaborators: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
        let mut links: Vec<(usize, usize)> = Vec::new();
        if cfg.strategy != Strategy::NoFusion {
            for n in 0..ego_count {
                let pi = agents[n].sensor.pose;
                let list = collaborators.entry(agents[n].id).or_default();
                for (j, a) in agents.iter().enumerate() {
                    if j != n && pi.distance(&a.sensor.pose) <= cfg.collab_range_m {
                        list.push(a.id);
                        links.push((n, j));
                    }
                }
            }
        }
        let own_requests: Vec<RequestMap> = match cfg.strategy {
            Strategy::CodrivingDrivingRequest => (0..agents.len())
                .map(|j| {
                    if j < ego_count {
                        build_request_map(single_plans[j].points(), cfg.sigma_m, &spec)
                    } else {
                        Ok(RequestMap::empty(spec))
                    }
                })
                .collect::<Result<_>>()?,
            Strategy::CodrivingConfidenceOnly => (0..agents.len())
                .map(|j| {
                    if j < ego_count {
                        RequestMap::uniform(spec)
                    } else {
                        RequestMap::empty(spec)
                    }
                })
                .collect(),
            _ => Vec::new(),
        };
        let mut step_bytes = 0u64;
        let mut ratios: Vec<f64> = Vec::new();
        let sent_before = feature_channel.sent + detection_channel.sent;
        match cfg.strategy {
            Strategy::NoFusion => {}
            Strategy::LateFusion => {
                for &(n, j) in &links {
                    let msg = DetectionMessage {
                        sender: agents[j].id,
                        send_step: now,
                        sender_pose: agents[j].sensor.pose,
                        detections: sensed[j].detections.clone(),
                    };
                    step_bytes += msg.bytes();
                    detection_channel.send(msg, agents[n].id, now, world.dt);
                }
            }
            Strategy::CodrivingConfidenceOnly | Strategy::CodrivingDrivingRequest => {
                let msgs: Vec<Message> = par::map_slice(&links, |&(n, j)| -> Result<Message> {
                    let pj = agents[j].sensor.pose;
                    let request = match cfg.strategy {
                        Strategy::CodrivingDrivingRequest => {
                            let pi = agents[n].sensor.pose;
                            let pts: Vec<(f64, f64)> = single_plans[n]
                                .points()
                                .iter()
                                .map(|p| pj.to_local(pi.to_world(*p)))
                                .collect();
                            let mut r = build_request_map(&pts, cfg.sigma_m, &spec)?.grid;
                            let body = OrientedBox::at_pose(&pi, 2.0 * half_w, 2.0 * half_l, ObjectClass::Vehicle);
                            for c in footprint_cells(&spec, &body.to_frame(&pj)) {
                                r.set(c, 0.0);
                            }
                            r
                        }
                        _ => ScalarGrid::filled(spec, 0, 1.0),
                    };
                    let mask = solve_selection(&sensed[j].confidence, &request, b_cells)?;
                    let masks = pool_masks(mask)?;
                    pack_message(&sensed[j].pyramid, &masks, agents[j].id, pj, &own_requests[j], now)
                })
                .into_iter()
                .collect::<Result<_>>()?;
                for (msg, &(n, _)) in msgs.into_iter().zip(&links) {
                    step_bytes += msg.bytes();
                    ratios.push(msg.levels[0].indices.len() as f64 / spec.cells() as f64);
                    feature_channel.send(msg, agents[n].id, now, world.dt);
                }
            }
        }
        let messages_sent = feature_channel.sent + detection_channel.sent - sent_before;
        per_step_bytes.push(step_bytes);
        let log2 = if cfg.strategy.shares_features() && !ratios.is_empty() {
            let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
            comm_volume_log2(spec.rows(), spec.cols(), mean, cfg.channels)
        } else if step_bytes > 0 && messages_sent > 0 {
            (step_bytes as f64 / messages_sent as f64).log2()
        } else {
            f64::NEG_INFINITY
        };
        per_step_log2.push(log2.is_finite().then_some(log2));

        // Phase 4: deliveries.
        let mut inbox: BTreeMap<u32, Vec<Message>> = BTreeMap::new();
        for (r, m) in feature_channel.deliver(now) {
            inbox.entry(r).or_default().push(m);
        }
        let mut det_inbox: BTreeMap<u32, Vec<DetectionMessage>> = BTreeMap::new();
        for (r, m) in detection_channel.deliver(now) {
            det_inbox.entry(r).or_default().push(m);
        }

        // Phase 5: collaborative perception, planning and the reference plan.
        let outcomes: Vec<EgoOutcome> = par::map_range(ego_count, |n| -> Result<EgoOutcome> {
            let e = &egos[active[n]];
            let id = e.id;
            let pose = agents[n].sensor.pose;
            let (dets, occupancy) = match cfg.strategy {
                Strategy::NoFusion => (sensed[n].detections.clone(), sensed[n].occupancy.clone()),
                Strategy::LateFusion => {
                    let neighbors: Vec<Vec<Detection>> = det_inbox
                        .get(&id)
                        .map(|v| v.iter().map(|m| m.in_frame(&pose)).collect())
                        .unwrap_or_default();
                    let d = drop_self(
                        late_fuse(&sensed[n].detections, &neighbors, cfg.detector.iou_threshold),
                        half_l,
                        half_w,
                    );
                    let occ = rasterize_occupancy(&d, &spec);
                    (d, occ)
                }
                _ => {
                    let msgs = inbox.get(&id).map(|v| v.as_slice()).unwrap_or(&[]);
                    if msgs.is_empty() {
                        (sensed[n].detections.clone(), sensed[n].occupancy.clone())
                    } else {
                        let set = align_messages(id, &sensed[n].pyramid, &pose, &spec, msgs)?;
                        let f = decode_pyramid(&fuse(&set)?)?;
                        let heads = decode_heads(&f, &spec, &codebook)?;
                        let d = drop_self(nms(&heads, &cfg.detector, &spec), half_l, half_w);
                        let occ = rasterize_occupancy(&d, &spec);
                        (d, occ)
                    }
                }
            };
            let plan = if cfg.strategy == Strategy::NoFusion {
                single_plans[n]
            } else {
                let hist = history_frames(&e.fused_hist, &pose, &occupancy);
                plan_waypoints(
                    &PlannerInput {
                        history: &hist,
                        goal: goals[n],
                        drivable: &drivable[n],
                    },
                    &cfg.planner,
                )
            };
            let truth = truth_boxes(&world, id, &pose, &spec);
            let truth_dets: Vec<Detection> = truth
                .iter()
                .map(|(_, b)| Detection { bbox: *b, score: 1.0 })
                .collect();
            let truth_occupancy = rasterize_occupancy(&truth_dets, &spec);
            let hist = history_frames(&e.truth_hist, &pose, &truth_occupancy);
            let reference = plan_waypoints(
                &PlannerInput {
                    history: &hist,
                    goal: goals[n],
                    drivable: &drivable[n],
                },
                &cfg.planner,
            );
            let ade = ade_fde(plan.points(), reference.points()).ok();
            Ok(EgoOutcome {
                plan,
                occupancy,
                truth_occupancy,
                frame: EvalFrame {
                    detections: scored_detections(dets, &world, id, &pose, &spec),
                    ground_truth: truth.into_iter().map(|(_, b)| b).collect(),
                },
                single_detections: scored_detections(sensed[n].detections.clone(), &world, id, &pose, &spec),
                ade_fde: ade,
            })
        })
        .into_iter()
        .collect::<Result<_>>()?;

        // Near-waypoint statistics against the intended route.
        for (n, &k) in active.iter().enumerate() {
            let id = egos[k].id;
            let pose = agents[n].sensor.pose;
            let intended = intended_waypoints(&world, id, &pose, cfg.planner.cruise_mps);
            let truth = truth_boxes(&world, id, &pose, &spec);
            let pts: Vec<(f64, f64)> = truth.iter().map(|(_, b)| (b.cx, b.cy)).collect();
            let hazard: Vec<bool> = truth.iter().map(|(a, _)| world.fired.contains(a)).collect();
            for (d, t) in near.iter_mut() {
                t.add(&pts, &hazard, &intended, *d);
            }
        }

        // Phase 6: control and world step.
        let mut controls = BTreeMap::new();
        let mut poses = BTreeMap::new();
        for (n, (&k, out)) in active.iter().zip(outcomes).enumerate() {
            let e = &mut egos[k];
            let speed = world.actor(e.id).expect("active ego").speed;
            let cmd = control_from_waypoints(&out.plan, speed, &mut e.lateral, &mut e.longitudinal, &cfg.controller);
            controls.insert(e.id, cmd);
            poses.insert(e.id, agents[n].sensor.pose);
            let pose = agents[n].sensor.pose;
            push_history(&mut e.single_hist, pose, sensed[n].occupancy.clone());
            push_history(&mut e.fused_hist, pose, out.occupancy);
            push_history(&mut e.truth_hist, pose, out.truth_occupancy);
            single_frames.push(EvalFrame {
                detections: out.single_detections,
                ground_truth: out.frame.ground_truth.clone(),
            });
            frames.push(out.frame);
            if let Some(d) = out.ade_fde {
                displacement.push(d);
            }
        }
        trace.push(StepTrace {
            step: now,
            controls: controls.clone(),
            poses,
            collaborators,
            messages_sent,
        });
        let events_before = world.events.len();
        world.step(&controls);
        steps_run += 1;
        for ev in &world.events[events_before..] {
            if let Some(e) = egos.iter_mut().find(|e| e.id == ev.ego_id) {
                e.ledger.push(ev.step, ev.kind.into());
            }
        }

        // Bookkeeping: completion and blocked egos leave the episode.
        for &k in &active {
            let e = &mut egos[k];
            let actor = world.actor(e.id).expect("active ego");
            let p = (actor.bbox.cx, actor.bbox.cy);
            let last = *e.traveled.last().expect("start recorded");
            e.distance_m += (p.0 - last.0).hypot(p.1 - last.1);
            e.traveled.push(p);
            e.active_steps += 1;
            e.slow_steps = if actor.speed < min_speed { e.slow_steps + 1 } else { 0 };
            let rc = route_completion(&e.traveled, &world.routes[&e.id]);
            if rc >= 100.0 {
                e.finished = true;
            } else if e.slow_steps >= blocked_steps {
                e.ledger.push(world.time_step, InfractionKind::MinSpeedViolation);
                e.finished = true;
            }
            if e.finished {
                world.retire(e.id);
            }
        }
    }
    for e in egos.iter_mut().filter(|e| !e.finished) {
        e.ledger.push(world.time_step, InfractionKind::ScenarioTimeout);
    }

    let routes: Vec<RouteReport> = egos
        .iter()
        .map(|e| {
            let rc = route_completion(&e.traveled, &world.routes[&e.id]);
            let is = infraction_score(&e.ledger.kinds());
            let km = e.distance_m / 1000.0;
            RouteReport {
                ego: e.id,
                ds: driving_score(rc, is),
                rc,
                is,
                collisions: CollisionCounts {
                    pedestrian: e.ledger.count(InfractionKind::PedestrianCollision),
                    vehicle: e.ledger.count(InfractionKind::VehicleCollision),
                    layout: e.ledger.count(InfractionKind::LayoutCollision),
                },
                infractions: e.ledger.events.clone(),
                distance_km: km,
                mean_speed: mean_speed(e.distance_m, e.active_steps as f64 * world.dt),
                rates: collision_rates(&e.ledger, km),
            }
        })
        .collect();
    let ap30: Vec<(ObjectClass, Option<f64>)> = [ObjectClass::Vehicle, ObjectClass::Cyclist, ObjectClass::Pedestrian]
        .into_iter()
        .map(|c| (c, average_precision_frames(&frames, c, AP_IOU)))
        .collect();
    let map30 = mean_ap(&ap30.iter().map(|(_, v)| *v).collect::<Vec<_>>());
    let (ade, fde) = if displacement.is_empty() {
        (None, None)
    } else {
        let n = displacement.len() as f64;
        (
            Some(displacement.iter().map(|d| d.0).sum::<f64>() / n),
            Some(displacement.iter().map(|d| d.1).sum::<f64>() / n),
        )
    };
    let dropped = (feature_channel.in_flight() + detection_channel.in_flight()) as u64;
    let report = EpisodeReport {
        version: REPORT_VERSION,
        scenario: cfg.scenario.name.clone(),
        strategy: cfg.strategy.name().to_string(),
        seed: cfg.seed,
        steps: steps_run,
        global: EpisodeReport::aggregate(&routes),
        routes,
        comm: CommReport {
            bytes_total: feature_channel.total_bytes() + detection_channel.total_bytes(),
            messages_sent: feature_channel.sent + detection_channel.sent,
            messages_delivered: feature_channel.delivered + detection_channel.delivered,
            per_step_bytes,
            per_step_log2,
        },
        perception: PerceptionReport { ap30, map30 },
        planning: PlanningReport { ade, fde },
    };
    Ok(Episode {
        report,
        trace,
        dropped_in_flight: dropped,
        near_waypoints: near,
        frames,
        single_frames,
    })
}

/// The swept parameter and its values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Compression exponents.
    Bandwidth(Vec<f64>),
    LatencyMs(Vec<f64>),
    /// Applied to both translation (m) and rotation (deg).
    PoseSigma(Vec<f64>),
    /// `count` selection rates drawn log-uniformly from `[2^-12, 1]`.
    RateSampling { count: usize, seed: u64 },
}

impl SweepAxis {
    pub fn values(&self) -> Vec<f64> {
        match self {
            SweepAxis::Bandwidth(v) | SweepAxis::LatencyMs(v) | SweepAxis::PoseSigma(v) => v.clone(),
            SweepAxis::RateSampling { count, seed } => sample_log_rates(*count, *seed)
                .into_iter()
                .map(|r| -r.log2())
                .collect(),
        }
    }

    /// `base` with this axis set to `value`.
    pub fn apply(&self, base: &RunConfig, value: f64) -> RunConfig {
        let mut c = base.clone();
        match self {
            SweepAxis::Bandwidth(_) | SweepAxis::RateSampling { .. } => c.budget = Budget::CompressionLog2(value),
            SweepAxis::LatencyMs(_) => c.channel.latency_ms = value,
            SweepAxis::PoseSigma(_) => {
                c.channel.pose_sigma_t = value;
                c.channel.pose_sigma_r_deg = value;
            }
        }
        c
    }
}

/// Selection rates `2^u`, `u ~ U[-12, 0]`, from a seeded stream.
pub fn sample_log_rates(count: usize, seed: u64) -> Vec<f64> {
    let mut g = rng::stream(seed, &[0x7261_7465]);
    (0..count).map(|_| g.random_range(-12.0..=0.0f64).exp2()).collect()
}

fn row(cfg: &RunConfig, report: &EpisodeReport) -> SweepRow {
    SweepRow {
        strategy: cfg.strategy.name().to_string(),
        bandwidth_log2: cfg.budget.log2_label(),
        latency_ms: cfg.channel.latency_ms,
        pose_sigma: cfg.channel.pose_sigma_t,
        seed: Some(cfg.seed),
        ds: report.global.ds,
        rc: report.global.rc,
        is: report.global.is,
        ped_rate: report.global.ped_rate,
        veh_rate: report.global.veh_rate,
        layout_rate: report.global.layout_rate,
        mean_speed: report.global.mean_speed,
        map30: report.perception.map30,
        ade: report.planning.ade,
        fde: report.planning.fde,
        bytes_total: report.comm.bytes_total as f64,
    }
}

fn mean_opt(v: &[Option<f64>]) -> Option<f64> {
    let p: Vec<f64> = v.iter().flatten().copied().collect();
    (!p.is_empty()).then(|| p.iter().sum::<f64>() / p.len() as f64)
}

/// Mean over a group of per-seed rows; optional fields average what is
/// present.
pub fn mean_row(rows: &[SweepRow]) -> SweepRow {
    let n = rows.len().max(1) as f64;
    let m = |f: &dyn Fn(&SweepRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let o = |f: &dyn Fn(&SweepRow) -> Option<f64>| mean_opt(&rows.iter().map(f).collect::<Vec<_>>());
    SweepRow {
        strategy: rows[0].strategy.clone(),
        bandwidth_log2: rows[0].bandwidth_log2,
        latency_ms: rows[0].latency_ms,
        pose_sigma: rows[0].pose_sigma,
        seed: None,
        ds: m(&|r| r.ds),
        rc: m(&|r| r.rc),
        is: m(&|r| r.is),
        ped_rate: o(&|r| r.ped_rate),
        veh_rate: o(&|r| r.veh_rate),
        layout_rate: o(&|r| r.layout_rate),
        mean_speed: m(&|r| r.mean_speed),
        map30: o(&|r| r.map30),
        ade: o(&|r| r.ade),
        fde: o(&|r| r.fde),
        bytes_total: m(&|r| r.bytes_total),
    }
}

/// Every (strategy × axis value × seed) run, then one mean row per
/// (strategy × value).
pub fn sweep(base: &RunConfig, axis: &SweepAxis, strategies: &[Strategy], seeds: &[u64]) -> Result<Vec<SweepRow>> {
    let values = axis.values();
    if values.is_empty() || strategies.is_empty() || seeds.is_empty() {
        return Err(Error::Config("sweep needs values, strategies and seeds".into()));
    }
    let mut jobs = Vec::new();
    for &s in strategies {
        for &v in &values {
            for &seed in seeds {
                let mut c = axis.apply(base, v);
                c.strategy = s;
                c.seed = seed;
                jobs.push(c);
            }
        }
    }
    let rows: Vec<SweepRow> = par::map_slice(&jobs, |c| run_episode(c).map(|e| row(c, &e.report)))
        .into_iter()
        .collect::<Result<_>>()?;
    let means: Vec<SweepRow> = rows.chunks(seeds.len()).map(mean_row).collect();
    Ok(rows.into_iter().chain(means).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
        assert!("bogus".parse::<Strategy>().is_err());
    }

    #[test]
    fn budget_cells() {
        assert_eq!(Budget::Full.cells(4608), 4608);
        assert_eq!(Budget::CompressionLog2(3.0).cells(4608), 576);
        assert_eq!(Budget::CompressionLog2(9.0).cells(4608), 9);
        assert_eq!(Budget::CompressionLog2(13.0).cells(4608), 0);
        assert_eq!(Budget::Cells(10_000).cells(4608), 4608);
    }

    #[test]
    fn rate_sampling_replays() {
        let a = sample_log_rates(20, 5);
        assert_eq!(a, sample_log_rates(20, 5));
        assert_ne!(a, sample_log_rates(20, 6));
        assert!(a.iter().all(|r| (2f64.powi(-12)..=1.0).contains(r)));
    }
}

