//! Counterfactual experiment generation.
//!
//! An experiment pairs an observed rollout `AB` (initial scene A) with a
//! counterfactual rollout `CD` whose initial scene C is A after a
//! do-operation, both under the same hidden masses. Candidates are filtered
//! by two threshold tests over exhaustively enumerated mass assignments:
//!
//! * identifiability: no alternative masses may reproduce AB (distance
//!   below ε) while changing CD (distance above ε);
//! * counterfactuality: flipping at least one mass must move CD by ≥ ε.

mod export;
mod generate;
mod filters;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::Rng;
use crate::sim::{self, Aabb, Body, Scene, SimError, Trajectory, Vec2};
use rand::Rng as _;

pub use export::{
    export_dataset, load_dataset, load_experiment, read_manifest, sha256_hex, Manifest,
};
pub use generate::{
    choose_working_eps, generate_candidate, generate_dataset, generate_experiment, log_grid,
    threshold_sweep, BalanceLedger, CandidateOutcome, Filters, GenerationReport, Rejection,
    RejectionReason, SweepRow,
};
pub use filters::{
    counterfactuality_from_outcomes, counterfactuality_test, identifiability_distances,
    identifiability_from_outcomes, identifiability_test, traj_distance, CounterfactualityVerdict,
    IdentifiabilityVerdict, Outcomes,
};

/// Discrete mass values each body may take.
pub const MASS_ALPHABET: [f64; 2] = [1.0, 10.0];
/// Largest body count whose 2^N mass assignments are enumerated.
pub const MAX_ENUMERATED_BODIES: usize = 6;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Sim(#[from] SimError),

    #[error("trajectory shapes differ: {0}")]
    ShapeMismatch(String),

    #[error("{0} bodies exceed the enumeration budget of {MAX_ENUMERATED_BODIES} (2^N mass combinations)")]
    CombinatorialBudget(usize),

    #[error("threshold must be positive, got {0}")]
    Threshold(f64),

    #[error("no valid placement after {0} tries")]
    Placement(usize),

    #[error("invalid do-operation: {0}")]
    DoOperation(String),

    #[error("invalid confounders: {0}")]
    Confounders(String),

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("gave up after {attempts} candidates with {accepted} accepted")]
    Exhausted { attempts: u64, accepted: usize },
}

/// Masses of combination `index` over `n` bodies. Body 0 is the most
/// significant bit, so increasing indices enumerate mass tuples in
/// lexicographic order.
pub fn mass_combination(index: usize, n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| MASS_ALPHABET[(index >> (n - 1 - k)) & 1])
        .collect()
}

/// Inverse of [`mass_combination`]; `None` if a mass is not in the alphabet.
pub fn combination_index(masses: &[f64]) -> Option<usize> {
    let n = masses.len();
    masses.iter().enumerate().try_fold(0usize, |acc, (k, &m)| {
        let bit = MASS_ALPHABET.iter().position(|&a| a == m)?;
        Some(acc | (bit << (n - 1 - k)))
    })
}

/// Human-readable ledger cell label, e.g. `1,10,1`.
pub fn combination_label(index: usize, n: usize) -> String {
    mass_combination(index, n)
        .iter()
        .map(|m| format!("{m}"))
        .collect::<Vec<_>>()
        .join(",")
}

/// The hidden physical parameters of an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfounderSet {
    pub masses: Vec<f64>,
    pub initial_velocities: Vec<Vec2>,
}

impl ConfounderSet {
    pub fn validate(&self, n_bodies: usize) -> Result<(), BenchError> {
        if self.masses.len() != n_bodies || self.initial_velocities.len() != n_bodies {
            return Err(BenchError::Confounders(format!(
                "expected {n_bodies} entries, got {} masses and {} velocities",
                self.masses.len(),
                self.initial_velocities.len()
            )));
        }
        if combination_index(&self.masses).is_none() {
            return Err(BenchError::Confounders(format!(
                "masses {:?} outside alphabet {MASS_ALPHABET:?}",
                self.masses
            )));
        }
        Ok(())
    }

    pub fn combination(&self) -> Option<usize> {
        combination_index(&self.masses)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DoKind {
    Remove,
    Shift,
}

impl DoKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DoKind::Remove => "remove",
            DoKind::Shift => "shift",
        }
    }
}

/// An intervention turning initial scene A into C.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoOperation {
    pub kind: DoKind,
    pub target: usize,
    /// Displacement for `shift`; zero for `remove`.
    pub delta: Vec2,
}

impl DoOperation {
    pub fn remove(target: usize) -> Self {
        DoOperation {
            kind: DoKind::Remove,
            target,
            delta: Vec2::ZERO,
        }
    }

    pub fn shift(target: usize, delta: Vec2) -> Self {
        DoOperation {
            kind: DoKind::Shift,
            target,
            delta,
        }
    }

    pub fn apply(&self, scene: &Scene) -> Result<Scene, BenchError> {
        if self.target >= scene.len() {
            return Err(BenchError::DoOperation(format!(
                "target {} out of range for {} bodies",
                self.target,
                scene.len()
            )));
        }
        let mut out = scene.clone();
        match self.kind {
            DoKind::Remove => {
                out.bodies.remove(self.target);
            }
            DoKind::Shift => {
                out.bodies[self.target].position += self.delta;
            }
        }
        out.validate()
            .map_err(|e| BenchError::DoOperation(e.to_string()))?;
        Ok(out)
    }

    /// Indices (in A) of the bodies present in C, in C's order.
    pub fn survivors(&self, n_bodies: usize) -> Vec<usize> {
        (0..n_bodies)
            .filter(|&i| !(self.kind == DoKind::Remove && i == self.target))
            .collect()
    }

    /// Restricts per-body values of A to the bodies present in C.
    pub fn restrict<T: Clone>(&self, values: &[T]) -> Vec<T> {
        self.survivors(values.len())
            .into_iter()
            .map(|i| values[i].clone())
            .collect()
    }

    pub fn magnitude(&self) -> f64 {
        self.delta.norm()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    /// Several moving balls in a walled box; remove or shift interventions.
    Balls,
    /// One moving ball and one resting ball of a different radius; shift
    /// interventions along a coordinate axis.
    Collision,
}

impl ScenarioKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::Balls => "balls",
            ScenarioKind::Collision => "collision",
        }
    }
}

impl std::str::FromStr for ScenarioKind {
    type Err = BenchError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "balls" => Ok(ScenarioKind::Balls),
            "collision" => Ok(ScenarioKind::Collision),
            other => Err(BenchError::Scenario(format!("unknown scenario `{other}`"))),
        }
    }
}

/// Which body-body contacts the observed rollout must contain for scene A
/// to be kept.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContactRequirement {
    None,
    /// At least one body-body collision.
    Any,
    /// Every body collides at least once.
    All,
}

/// Duration and sampling rate of a rollout.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Horizon {
    pub duration: f64,
    pub fps: f64,
}

impl Horizon {
    pub fn simulate(&self, scene: &Scene, masses: &[f64]) -> Result<Trajectory, SimError> {
        sim::simulate(scene, masses, self.duration, self.fps)
    }

    pub fn n_frames(&self) -> usize {
        sim::frame_count(self.duration, self.fps)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    pub n_objects: usize,
    pub horizon: Horizon,
    pub radius_range: (f64, f64),
    pub speed_range: (f64, f64),
    /// Inner and outer radius of the shift annulus.
    pub shift_range: (f64, f64),
    pub ab_contacts: ContactRequirement,
    /// Scene-A draws allowed before a candidate is abandoned.
    pub max_scene_tries: usize,
    /// Do-operations tried per candidate.
    pub max_do_trials: usize,
    /// Placement resamples for one body or one shift.
    pub max_placement_tries: usize,
    /// Distinct appearance indices available for `visual_id`.
    pub palette_size: u8,
}

impl ScenarioConfig {
    pub fn balls(n_objects: usize) -> Self {
        ScenarioConfig {
            kind: ScenarioKind::Balls,
            n_objects,
            horizon: Horizon {
                duration: 3.0,
                fps: 25.0,
            },
            radius_range: (0.03, 0.08),
            speed_range: (0.25, 0.6),
            shift_range: (0.08, 0.25),
            ab_contacts: ContactRequirement::All,
            max_scene_tries: 200,
            max_do_trials: 100,
            max_placement_tries: 100,
            palette_size: 6,
        }
    }

    pub fn collision() -> Self {
        ScenarioConfig {
            kind: ScenarioKind::Collision,
            n_objects: 2,
            horizon: Horizon {
                duration: 3.0,
                fps: 25.0,
            },
            radius_range: (0.03, 0.08),
            speed_range: (0.25, 0.6),
            shift_range: (0.04, 0.15),
            ab_contacts: ContactRequirement::All,
            max_scene_tries: 200,
            max_do_trials: 100,
            max_placement_tries: 100,
            palette_size: 6,
        }
    }

    pub fn for_kind(kind: ScenarioKind, n_objects: usize) -> Self {
        match kind {
            ScenarioKind::Balls => Self::balls(n_objects),
            ScenarioKind::Collision => Self::collision(),
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: String| Err(BenchError::Scenario(m));
        if self.n_objects == 0 {
            return bad("n_objects must be at least 1".into());
        }
        if self.n_objects > MAX_ENUMERATED_BODIES {
            return Err(BenchError::CombinatorialBudget(self.n_objects));
        }
        if self.kind == ScenarioKind::Collision && self.n_objects != 2 {
            return bad("the collision scenario has exactly 2 bodies".into());
        }
        let (r0, r1) = self.radius_range;
        if !(r0 > 0.0 && r0 <= r1 && r1 < 0.25) {
            return bad(format!("radius range {r0}..{r1}"));
        }
        let (s0, s1) = self.speed_range;
        if !(s0 >= 0.0 && s0 <= s1 && s1.is_finite()) {
            return bad(format!("speed range {s0}..{s1}"));
        }
        let (d0, d1) = self.shift_range;
        if !(d0 >= 0.0 && d0 <= d1 && d1 < 1.0) {
            return bad(format!("shift range {d0}..{d1}"));
        }
        if self.palette_size == 0 {
            return bad("palette_size must be positive".into());
        }
        sim::substeps_per_frame(self.horizon.fps)?;
        if !(self.horizon.duration > 0.0) {
            return bad("duration must be positive".into());
        }
        Ok(())
    }

    pub fn allowed_kinds(&self, n_bodies: usize) -> &'static [DoKind] {
        match (self.kind, n_bodies) {
            (ScenarioKind::Balls, n) if n >= 2 => &[DoKind::Remove, DoKind::Shift],
            _ => &[DoKind::Shift],
        }
    }

    /// Draws an initial scene A (masses set to 1; the caller assigns them).
    pub fn sample_scene(&self, rng: &mut Rng) -> Result<Scene, BenchError> {
        match self.kind {
            ScenarioKind::Balls => self.sample_balls(rng),
            ScenarioKind::Collision => self.sample_collision(rng),
        }
    }

    fn sample_visual_ids(&self, n: usize, rng: &mut Rng) -> Vec<u8> {
        let mut palette: Vec<u8> = (0..self.palette_size).collect();
        // partial Fisher-Yates: distinct colours when the palette allows it
        for i in 0..n.min(palette.len()) {
            let j = rng.random_range(i..palette.len());
            palette.swap(i, j);
        }
        (0..n).map(|i| palette[i % palette.len()]).collect()
    }

    fn sample_balls(&self, rng: &mut Rng) -> Result<Scene, BenchError> {
        let ids = self.sample_visual_ids(self.n_objects, rng);
        let mut bodies: Vec<Body> = Vec::with_capacity(self.n_objects);
        for &id in ids.iter() {
            let radius = rng.random_range(self.radius_range.0..=self.radius_range.1);
            let mut placed = None;
            for _ in 0..self.max_placement_tries {
                let p = Vec2::new(
                    rng.random_range(radius..=1.0 - radius),
                    rng.random_range(radius..=1.0 - radius),
                );
                let clear = bodies.iter().all(|b| {
                    let r = b.radius + radius;
                    (b.position - p).norm_sq() > r * r
                });
                if clear {
                    placed = Some(p);
                    break;
                }
            }
            let position = placed.ok_or(BenchError::Placement(self.max_placement_tries))?;
            let speed = rng.random_range(self.speed_range.0..=self.speed_range.1);
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            bodies.push(Body::new(position, Vec2::from_angle(angle) * speed, radius, 1.0, id));
        }
        Ok(Scene::new(bodies)?)
    }

    fn sample_collision(&self, rng: &mut Rng) -> Result<Scene, BenchError> {
        let ids = self.sample_visual_ids(2, rng);
        let (r0, r1) = self.radius_range;
        let mid = 0.5 * (r0 + r1);
        // moving ball from the lower half of the range, resting ball from the upper
        let r_moving = rng.random_range(r0..=mid);
        let r_rest = rng.random_range(mid..=r1);
        let rest = Vec2::new(rng.random_range(0.35..=0.65), rng.random_range(0.35..=0.65));
        for _ in 0..self.max_placement_tries {
            let dir = Vec2::from_angle(rng.random_range(0.0..std::f64::consts::TAU));
            let dist = rng.random_range(0.2..=0.35);
            let start = rest + dir * dist;
            if !Aabb::UNIT.contains_disc(start, r_moving) {
                continue;
            }
            // aim at the resting ball with a random impact parameter
            let speed = rng.random_range(self.speed_range.0..=self.speed_range.1);
            let reach = r_moving + r_rest;
            let aim = rest + Vec2::new(-dir.y, dir.x) * rng.random_range(-0.7 * reach..=0.7 * reach);
            let v = (aim - start) / (aim - start).norm() * speed;
            let bodies = vec![
                Body::new(start, v, r_moving, 1.0, ids[0]),
                Body::new(rest, Vec2::ZERO, r_rest, 1.0, ids[1]),
            ];
            if let Ok(scene) = Scene::new(bodies) {
                return Ok(scene);
            }
        }
        Err(BenchError::Placement(self.max_placement_tries))
    }

    /// Draws a do-operation valid for `scene` (in bounds, no overlap).
    pub fn sample_do_operation(
        &self,
        scene: &Scene,
        rng: &mut Rng,
    ) -> Result<DoOperation, BenchError> {
        let kinds = self.allowed_kinds(scene.len());
        if scene.is_empty() {
            return Err(BenchError::DoOperation("empty scene".into()));
        }
        let kind = kinds[rng.random_range(0..kinds.len())];
        match kind {
            DoKind::Remove => Ok(DoOperation::remove(rng.random_range(0..scene.len()))),
            DoKind::Shift => {
                let target = match self.kind {
                    ScenarioKind::Collision => 0,
                    ScenarioKind::Balls => rng.random_range(0..scene.len()),
                };
                for _ in 0..self.max_placement_tries {
                    let magnitude = rng.random_range(self.shift_range.0..=self.shift_range.1);
                    let delta = match self.kind {
                        ScenarioKind::Balls => {
                            Vec2::from_angle(rng.random_range(0.0..std::f64::consts::TAU))
                                * magnitude
                        }
                        ScenarioKind::Collision => {
                            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                            if rng.random_bool(0.5) {
                                Vec2::new(sign * magnitude, 0.0)
                            } else {
                                Vec2::new(0.0, sign * magnitude)
                            }
                        }
                    };
                    let op = DoOperation::shift(target, delta);
                    if op.apply(scene).is_ok() {
                        return Ok(op);
                    }
                }
                Err(BenchError::Placement(self.max_placement_tries))
            }
        }
    }
}

/// A generated observed/counterfactual pair with its hidden parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub id: String,
    pub scenario: ScenarioKind,
    pub seed: u64,
    pub horizon: Horizon,
    pub eps: f64,
    pub scene_a: Scene,
    pub traj_ab: Trajectory,
    pub do_op: DoOperation,
    pub scene_c: Scene,
    pub traj_cd: Trajectory,
    pub confounders: ConfounderSet,
    /// Bodies (indexed as in A) whose mass flip changes CD by at least ε.
    pub consequential_k: Vec<usize>,
}

impl Experiment {
    pub fn id_for_seed(seed: u64) -> String {
        format!("{seed:016x}")
    }

    pub fn n_bodies(&self) -> usize {
        self.scene_a.len()
    }

    /// For each body of A, its index in C (`None` if removed).
    pub fn slot_map(&self) -> Vec<Option<usize>> {
        let survivors = self.do_op.survivors(self.n_bodies());
        (0..self.n_bodies())
            .map(|i| survivors.iter().position(|&s| s == i))
            .collect()
    }
}
