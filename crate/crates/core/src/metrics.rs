//! Driving, perception and planning metrics, plus the report and CSV
//! formats.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{bev_iou, ObjectClass, OrientedBox};
use crate::sensing::Detection;
use crate::world::{CollisionKind, Route};

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfractionKind {
    PedestrianCollision,
    VehicleCollision,
    LayoutCollision,
    ScenarioTimeout,
    MinSpeedViolation,
    EmergencyYieldFailure,
}

impl InfractionKind {
    /// Multiplicative penalty applied per event.
    pub fn factor(self) -> f64 {
        match self {
            InfractionKind::PedestrianCollision => 0.50,
            InfractionKind::VehicleCollision => 0.60,
            InfractionKind::LayoutCollision => 0.65,
            InfractionKind::ScenarioTimeout => 0.7,
            InfractionKind::MinSpeedViolation => 0.7,
            InfractionKind::EmergencyYieldFailure => 0.7,
        }
    }
}

impl From<CollisionKind> for InfractionKind {
    fn from(k: CollisionKind) -> Self {
        match k {
            CollisionKind::Pedestrian => InfractionKind::PedestrianCollision,
            CollisionKind::Vehicle => InfractionKind::VehicleCollision,
            CollisionKind::Layout => InfractionKind::LayoutCollision,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Infraction {
    pub step: u64,
    pub kind: InfractionKind,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct InfractionLedger {
    pub events: Vec<Infraction>,
}

impl InfractionLedger {
    pub fn push(&mut self, step: u64, kind: InfractionKind) {
        self.events.push(Infraction { step, kind });
    }

    pub fn count(&self, kind: InfractionKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    pub fn kinds(&self) -> Vec<InfractionKind> {
        self.events.iter().map(|e| e.kind).collect()
    }
}

/// Product of per-event factors, starting from 1.
pub fn infraction_score(kinds: &[InfractionKind]) -> f64 {
    kinds.iter().map(|k| k.factor()).product()
}

/// Percent of route arc length covered: the running maximum of projections,
/// capped at 100.
pub fn route_completion(traveled: &[(f64, f64)], route: &Route) -> f64 {
    let best = traveled
        .iter()
        .map(|p| route.project(*p))
        .fold(0.0, f64::max);
    (100.0 * best / route.length()).clamp(0.0, 100.0)
}

pub fn driving_score(rc: f64, is: f64) -> f64 {
    rc * is
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionRates {
    pub pedestrian: f64,
    pub vehicle: f64,
    pub layout: f64,
}

/// Collisions per kilometer; absent for zero distance.
pub fn collision_rates(ledger: &InfractionLedger, km: f64) -> Option<CollisionRates> {
    if !(km > 0.0) {
        return None;
    }
    Some(CollisionRates {
        pedestrian: ledger.count(InfractionKind::PedestrianCollision) as f64 / km,
        vehicle: ledger.count(InfractionKind::VehicleCollision) as f64 / km,
        layout: ledger.count(InfractionKind::LayoutCollision) as f64 / km,
    })
}

pub fn mean_speed(distance_m: f64, time_s: f64) -> f64 {
    if time_s > 0.0 {
        distance_m / time_s
    } else {
        0.0
    }
}

/// One evaluated frame: detections and ground truth in the same frame.
#[derive(Debug, Clone, Default)]
pub struct EvalFrame {
    pub detections: Vec<Detection>,
    pub ground_truth: Vec<OrientedBox>,
}

/// All-point-interpolated AP for one class over a set of frames. Detections
/// are ranked globally by score; each is matched greedily within its frame
/// to the best unmatched ground truth with IoU ≥ `iou_threshold`. `None` when
/// the class has no ground truth.
pub fn average_precision_frames(frames: &[EvalFrame], class: ObjectClass, iou_threshold: f64) -> Option<f64> {
    let total_gt: usize = frames
        .iter()
        .map(|f| f.ground_truth.iter().filter(|g| g.class == class).count())
        .sum();
    if total_gt == 0 {
        return None;
    }
    let mut ranked: Vec<(f64, usize, &OrientedBox)> = Vec::new();
    for (fi, f) in frames.iter().enumerate() {
        for d in f.detections.iter().filter(|d| d.bbox.class == class) {
            ranked.push((d.score, fi, &d.bbox));
        }
    }
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut used: Vec<Vec<bool>> = frames.iter().map(|f| vec![false; f.ground_truth.len()]).collect();
    let mut hits = Vec::with_capacity(ranked.len());
    for (_, fi, b) in ranked {
        let mut best: Option<(f64, usize)> = None;
        for (gi, g) in frames[fi].ground_truth.iter().enumerate() {
            if g.class != class || used[fi][gi] {
                continue;
            }
            let iou = bev_iou(b, g);
            if iou >= iou_threshold && best.is_none_or(|(v, _)| iou > v) {
                best = Some((iou, gi));
            }
        }
        match best {
            Some((_, gi)) => {
                used[fi][gi] = true;
                hits.push(true);
            }
            None => hits.push(false),
        }
    }
    Some(ap_from_hits(&hits, total_gt))
}

/// Area under the all-point interpolated precision–recall curve.
pub fn ap_from_hits(hits: &[bool], total_gt: usize) -> f64 {
    if total_gt == 0 {
        return 0.0;
    }
    let mut tp = 0usize;
    let mut recall = Vec::with_capacity(hits.len());
    let mut precision = Vec::with_capacity(hits.len());
    for (k, h) in hits.iter().enumerate() {
        if *h {
            tp += 1;
        }
        recall.push(tp as f64 / total_gt as f64);
        precision.push(tp as f64 / (k + 1) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_r = 0.0;
    for (r, p) in recall.iter().zip(&precision) {
        ap += (r - prev_r) * p;
        prev_r = *r;
    }
    ap
}

/// Single-frame convenience form of [`average_precision_frames`]; `0` when
/// there is no ground truth of the class.
pub fn average_precision(dets: &[Detection], gts: &[OrientedBox], class: ObjectClass, iou_threshold: f64) -> f64 {
    let frame = EvalFrame {
        detections: dets.to_vec(),
        ground_truth: gts.to_vec(),
    };
    average_precision_frames(std::slice::from_ref(&frame), class, iou_threshold).unwrap_or(0.0)
}

/// Unweighted mean over classes that have ground truth.
pub fn mean_ap(per_class: &[Option<f64>]) -> Option<f64> {
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    if present.is_empty() {
        None
    } else {
        Some(present.iter().sum::<f64>() / present.len() as f64)
    }
}

pub fn ade_fde(predicted: &[(f64, f64)], reference: &[(f64, f64)]) -> Result<(f64, f64)> {
    if predicted.len() != reference.len() || predicted.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "{} predicted vs {} reference waypoints",
            predicted.len(),
            reference.len()
        )));
    }
    let d: Vec<f64> = predicted
        .iter()
        .zip(reference)
        .map(|(a, b)| (a.0 - b.0).hypot(a.1 - b.1))
        .collect();
    Ok((d.iter().sum::<f64>() / d.len() as f64, *d.last().unwrap()))
}

/// Fractions of all objects and of hazardous objects lying within `delta_w`
/// of some waypoint. Each is absent when its population is empty.
pub fn near_waypoint_stats(
    objects: &[(f64, f64)],
    hazard: &[bool],
    waypoints: &[(f64, f64)],
    delta_w: f64,
) -> (Option<f64>, Option<f64>) {
    let mut t = NearWaypointTally::default();
    t.add(objects, hazard, waypoints, delta_w);
    t.fractions()
}

/// Near-waypoint counts pooled over many frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct NearWaypointTally {
    pub objects: usize,
    pub objects_near: usize,
    pub hazards: usize,
    pub hazards_near: usize,
}

impl NearWaypointTally {
    pub fn add(&mut self, objects: &[(f64, f64)], hazard: &[bool], waypoints: &[(f64, f64)], delta_w: f64) {
        for (i, p) in objects.iter().enumerate() {
            let near = waypoints
                .iter()
                .any(|w| (p.0 - w.0).hypot(p.1 - w.1) <= delta_w);
            let is_hazard = hazard.get(i).copied().unwrap_or(false);
            self.objects += 1;
            self.objects_near += near as usize;
            self.hazards += is_hazard as usize;
            self.hazards_near += (is_hazard && near) as usize;
        }
    }

    pub fn fractions(&self) -> (Option<f64>, Option<f64>) {
        let f = |n: usize, d: usize| (d > 0).then(|| n as f64 / d as f64);
        (f(self.objects_near, self.objects), f(self.hazards_near, self.hazards))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CollisionCounts {
    pub pedestrian: usize,
    pub vehicle: usize,
    pub layout: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteReport {
    pub ego: u32,
    pub ds: f64,
    pub rc: f64,
    pub is: f64,
    pub collisions: CollisionCounts,
    pub infractions: Vec<Infraction>,
    pub distance_km: f64,
    pub mean_speed: f64,
    pub rates: Option<CollisionRates>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalReport {
    pub ds: f64,
    pub rc: f64,
    pub is: f64,
    pub mean_speed: f64,
    pub ped_rate: Option<f64>,
    pub veh_rate: Option<f64>,
    pub layout_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommReport {
    pub bytes_total: u64,
    pub messages_sent: u64,
    pub messages_delivered: u64,
    pub per_step_bytes: Vec<u64>,
    /// `log2` volume of the mean selection ratio per step; `null` for zero.
    pub per_step_log2: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerceptionReport {
    pub ap30: Vec<(ObjectClass, Option<f64>)>,
    pub map30: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanningReport {
    pub ade: Option<f64>,
    pub fde: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub version: u32,
    pub scenario: String,
    pub strategy: String,
    pub seed: u64,
    pub steps: u64,
    pub routes: Vec<RouteReport>,
    pub global: GlobalReport,
    pub comm: CommReport,
    pub perception: PerceptionReport,
    pub planning: PlanningReport,
}

impl EpisodeReport {
    /// Route means; rates average over routes that moved.
    pub fn aggregate(routes: &[RouteReport]) -> GlobalReport {
        let n = routes.len().max(1) as f64;
        let mean = |f: &dyn Fn(&RouteReport) -> f64| routes.iter().map(f).sum::<f64>() / n;
        let rate = |f: &dyn Fn(&CollisionRates) -> f64| {
            let v: Vec<f64> = routes.iter().filter_map(|r| r.rates.as_ref().map(f)).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        GlobalReport {
            ds: mean(&|r| r.ds),
            rc: mean(&|r| r.rc),
            is: mean(&|r| r.is),
            mean_speed: mean(&|r| r.mean_speed),
            ped_rate: rate(&|c| c.pedestrian),
            veh_rate: rate(&|c| c.vehicle),
            layout_rate: rate(&|c| c.layout),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: EpisodeReport = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        if r.version != REPORT_VERSION {
            return Err(Error::Parse(format!("unsupported report version {}", r.version)));
        }
        Ok(r)
    }
}

pub const CSV_HEADER: &str = "strategy,bandwidth_log2,latency_ms,pose_sigma,seed,DS,RC,IS,ped_rate,veh_rate,layout_rate,mean_speed,mAP30,ADE,FDE,bytes_total";

/// One sweep result; `seed` is `None` on aggregate rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub strategy: String,
    pub bandwidth_log2: Option<f64>,
    pub latency_ms: f64,
    pub pose_sigma: f64,
    pub seed: Option<u64>,
    pub ds: f64,
    pub rc: f64,
    pub is: f64,
    pub ped_rate: Option<f64>,
    pub veh_rate: Option<f64>,
    pub layout_rate: Option<f64>,
    pub mean_speed: f64,
    pub map30: Option<f64>,
    pub ade: Option<f64>,
    pub fde: Option<f64>,
    pub bytes_total: f64,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl SweepRow {
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.strategy,
            opt(self.bandwidth_log2),
            self.latency_ms,
            self.pose_sigma,
            self.seed.map_or_else(|| "mean".to_string(), |s| s.to_string()),
            self.ds,
            self.rc,
            self.is,
            opt(self.ped_rate),
            opt(self.veh_rate),
            opt(self.layout_rate),
            self.mean_speed,
            opt(self.map30),
            opt(self.ade),
            opt(self.fde),
            self.bytes_total,
        );
        s
    }
}

pub fn write_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv());
        out.push('\n');
    }
    out
}
