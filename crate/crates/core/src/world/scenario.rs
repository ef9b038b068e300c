//! Scenario file schema (TOML) and loading.
//!
//! A scenario file is versioned; `version = 1` is the only layout accepted
//! today. Every field is written back on save, so `load → save → load`
//! reproduces the same [`ScenarioConfig`] value and the same text.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ObjectClass;

pub const SCENARIO_VERSION: u32 = 1;

/// Environment variable naming the directory searched for scenario names.
pub const SCENARIO_DIR_ENV: &str = "COOPDRIVE_SCENARIO_DIR";

/// The scripted hazard scenarios shipped with the crate.
pub const SUITE: [&str; 6] = [
    "occluded_ped",
    "corner_cyclist",
    "platoon_kiosk",
    "parked_van_jogger",
    "blind_intersection_car",
    "market_street_ped",
];

/// Directory holding the bundled scenario files.
pub fn builtin_scenario_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

/// Path for a scenario argument: an existing file is used as is; otherwise
/// `<name>.toml` is looked up in `$COOPDRIVE_SCENARIO_DIR`, then in the
/// bundled directory.
pub fn resolve_scenario_path(arg: &str) -> PathBuf {
    let direct = Path::new(arg);
    if direct.is_file() {
        return direct.to_path_buf();
    }
    let file = if arg.ends_with(".toml") { arg.to_string() } else { format!("{arg}.toml") };
    if let Some(dir) = std::env::var_os(SCENARIO_DIR_ENV) {
        let p = Path::new(&dir).join(&file);
        if p.is_file() {
            return p;
        }
    }
    let bundled = builtin_scenario_dir().join(&file);
    if bundled.is_file() {
        bundled
    } else {
        direct.to_path_buf()
    }
}

fn default_dt() -> f64 {
    0.2
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub version: u32,
    pub name: String,
    pub seed: u64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub vehicle: VehicleParams,
    #[serde(default)]
    pub limits: EpisodeLimits,
    #[serde(default)]
    pub jitter: Jitter,
    pub layout: LayoutConfig,
    pub egos: EgoConfig,
    pub rsu_policy: RsuPolicy,
    #[serde(default)]
    pub actors: Vec<ActorConfig>,
    #[serde(default)]
    pub triggers: Vec<TriggerConfig>,
}

/// Kinematic bicycle parameters shared by every ego vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VehicleParams {
    pub wheelbase_m: f64,
    pub max_steer_rad: f64,
    pub max_accel: f64,
    pub max_brake: f64,
    pub v_max: f64,
    pub width_m: f64,
    pub length_m: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        VehicleParams {
            wheelbase_m: 2.5,
            max_steer_rad: 0.6,
            max_accel: 3.0,
            max_brake: 8.0,
            v_max: 10.0,
            width_m: 2.0,
            length_m: 4.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpisodeLimits {
    /// Hard cap on simulated steps; 0 derives a cap from route length.
    pub step_limit: u64,
    pub min_speed_mps: f64,
    pub min_speed_window_s: f64,
}

impl Default for EpisodeLimits {
    fn default() -> Self {
        EpisodeLimits {
            step_limit: 0,
            min_speed_mps: 0.5,
            min_speed_window_s: 30.0,
        }
    }
}

/// Seeded per-episode perturbation of hazard timing. Zero disables it.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Jitter {
    /// Hazard speeds are scaled by a uniform factor in `1 ± speed_frac`.
    pub speed_frac: f64,
    /// Trigger distances move by a uniform offset in `± trigger_m`.
    pub trigger_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutConfig {
    /// World coordinate of raster cell `(0, 0)`'s lower corner.
    pub origin: [f64; 2],
    pub cell_m: f64,
    /// Raster size in cells along world x and world y.
    pub width: usize,
    pub height: usize,
    /// Union of rectangles forming the drivable surface.
    pub drivable: Vec<RectConfig>,
    #[serde(default)]
    pub obstacles: Vec<ObstacleConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RectConfig {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub l: f64,
    #[serde(default)]
    pub yaw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleConfig {
    pub label: String,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub l: f64,
    #[serde(default)]
    pub yaw: f64,
    /// Building height: blocks elevated roadside sensors too.
    #[serde(default)]
    pub tall: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EgoConfig {
    /// Number of collaborative ego vehicles (1 to 5).
    pub count: usize,
    pub route: Vec<[f64; 2]>,
    #[serde(default)]
    pub initial_speed: f64,
    #[serde(default = "default_lane_width")]
    pub lane_width: f64,
}

fn default_lane_width() -> f64 {
    3.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RsuPolicy {
    None,
    FollowEgo {
        ego: u32,
        #[serde(default = "default_rsu_ahead")]
        ahead_m: f64,
        #[serde(default = "default_rsu_period")]
        period_s: f64,
        #[serde(default = "default_rsu_margin")]
        margin_m: f64,
    },
    Fixed {
        poses: Vec<[f64; 3]>,
    },
}

fn default_rsu_ahead() -> f64 {
    12.0
}
fn default_rsu_period() -> f64 {
    5.0
}
fn default_rsu_margin() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActorConfig {
    pub id: u32,
    pub class: ObjectClass,
    /// `[x, y, yaw]` in world coordinates.
    pub pose: [f64; 3],
    /// `[width, length]`; class default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<[f64; 2]>,
    pub behavior: BehaviorConfig,
    /// Inactive actors only appear when a trigger fires.
    #[serde(default = "default_true")]
    pub active: bool,
    /// Whether the actor blocks ground-level sensors; vehicles do by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub occludes: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BehaviorConfig {
    Parked,
    ConstantVelocity { speed: f64 },
    /// Follows `path` (starting from the actor pose) at constant speed and
    /// stays at its end.
    Scripted { speed: f64, path: Vec<[f64; 2]> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriggerConfig {
    pub hazard_actor: u32,
    pub trigger_distance: f64,
    /// Ego whose distance arms the trigger.
    #[serde(default)]
    pub ego: u32,
    /// Point the distance is measured to; the hazard's spawn point if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor: Option<[f64; 2]>,
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig =
            toml::from_str(text).map_err(|e| Error::Scenario(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Scenario(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = self.to_toml_string()?;
        std::fs::write(path, text).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Schema checks beyond what deserialization enforces.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Scenario(m));
        if self.version != SCENARIO_VERSION {
            return bad(format!("unsupported scenario version {}", self.version));
        }
        if !(self.dt > 0.0) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        let l = &self.layout;
        if !(l.cell_m > 0.0) || l.width == 0 || l.height == 0 {
            return bad("layout raster must have positive cell size and extent".into());
        }
        for r in &l.drivable {
            if !(r.w > 0.0 && r.l > 0.0) {
                return bad("drivable rectangles need positive size".into());
            }
        }
        for o in &l.obstacles {
            if !(o.w > 0.0 && o.l > 0.0) {
                return bad(format!("obstacle {} needs positive size", o.label));
            }
        }
        if !(1..=5).contains(&self.egos.count) {
            return bad(format!("ego count {} outside 1..=5", self.egos.count));
        }
        let route = &self.egos.route;
        if route.len() < 2 {
            return bad("route needs at least two points".into());
        }
        for w in route.windows(2) {
            if w[0] == w[1] {
                return bad("route has repeated consecutive points".into());
            }
        }
        let mut ids: Vec<u32> = self.actors.iter().map(|a| a.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return bad("duplicate actor id".into());
        }
        if ids.iter().any(|&id| (id as usize) < self.egos.count) {
            return bad(format!(
                "actor ids below {} are reserved for egos",
                self.egos.count
            ));
        }
        for a in &self.actors {
            if let Some([w, len]) = a.size {
                if !(w > 0.0 && len > 0.0) {
                    return bad(format!("actor {} needs positive size", a.id));
                }
            }
            match &a.behavior {
                BehaviorConfig::Scripted { speed, path } => {
                    if path.is_empty() || *speed < 0.0 {
                        return bad(format!("actor {} scripted path invalid", a.id));
                    }
                }
                BehaviorConfig::ConstantVelocity { speed } if *speed < 0.0 => {
                    return bad(format!("actor {} negative speed", a.id));
                }
                _ => {}
            }
        }
        for t in &self.triggers {
            let Some(a) = self.actors.iter().find(|a| a.id == t.hazard_actor) else {
                return bad(format!("trigger refers to unknown actor {}", t.hazard_actor));
            };
            if a.active {
                return bad(format!("trigger hazard {} must start inactive", a.id));
            }
            if (t.ego as usize) >= self.egos.count || t.trigger_distance < 0.0 {
                return bad(format!("trigger for actor {} is malformed", a.id));
            }
        }
        if let RsuPolicy::FollowEgo { ego, period_s, .. } = &self.rsu_policy {
            if (*ego as usize) >= self.egos.count || !(*period_s > 0.0) {
                return bad("rsu policy refers to an unknown ego or bad period".into());
            }
        }
        Ok(())
    }
}
