//! Exact, deterministic 2D rigid-ball dynamics.
//!
//! Bodies move ballistically between contact events. Each substep
//! (at most [`MAX_SUBSTEP`]) is integrated event by event: the earliest
//! swept-sphere time of impact among all pairs and walls is found in closed
//! form, every body drifts to it, and all contacts at that instant are
//! resolved with perfectly elastic impulses. There is no randomness anywhere
//! in this module.

mod trajectory;
mod vec2;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use trajectory::{BodyState, Trajectory};
pub use vec2::Vec2;

/// Internal integration rate in Hz.
pub const SUBSTEP_RATE: u32 = 250;
pub const MAX_SUBSTEP: f64 = 1.0 / SUBSTEP_RATE as f64;
/// Pairwise impulse sweeps used to settle simultaneous contacts.
pub const MAX_CONTACT_ITERATIONS: usize = 16;
const MAX_EVENTS_PER_SUBSTEP: usize = 512;
const CONTACT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid body {index}: {reason}")]
    InvalidBody { index: usize, reason: String },

    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error(
        "bodies {a} and {b} move {displacement:.5} relative to each other within one \
         substep, more than the smallest radius {min_radius:.5}; use a smaller substep"
    )]
    Tunnelling {
        a: usize,
        b: usize,
        displacement: f64,
        min_radius: f64,
    },

    #[error("non-finite state encountered at frame {frame}")]
    NonFinite { frame: usize },

    #[error("invalid timing: {0}")]
    Timing(String),

    #[error("expected {expected} masses, got {got}")]
    MassCount { expected: usize, got: usize },

    #[error("contact resolution did not settle within one substep")]
    EventBudget,

    #[error("malformed trajectory: {0}")]
    Malformed(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Body {
    pub position: Vec2,
    pub velocity: Vec2,
    pub radius: f64,
    pub mass: f64,
    pub visual_id: u8,
}

impl Body {
    pub fn new(position: Vec2, velocity: Vec2, radius: f64, mass: f64, visual_id: u8) -> Self {
        Body {
            position,
            velocity,
            radius,
            mass,
            visual_id,
        }
    }

    pub fn momentum(&self) -> Vec2 {
        self.velocity * self.mass
    }

    pub fn kinetic_energy(&self) -> f64 {
        0.5 * self.mass * self.velocity.norm_sq()
    }

    fn check(&self, index: usize) -> Result<(), SimError> {
        let bad = |reason: &str| SimError::InvalidBody {
            index,
            reason: reason.to_string(),
        };
        if !(self.radius > 0.0) || !self.radius.is_finite() {
            return Err(bad("radius must be positive and finite"));
        }
        if !(self.mass > 0.0) || !self.mass.is_finite() {
            return Err(bad("mass must be positive and finite"));
        }
        if !self.position.is_finite() || !self.velocity.is_finite() {
            return Err(bad("non-finite position or velocity"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec2,
    pub max: Vec2,
}

impl Aabb {
    pub const UNIT: Aabb = Aabb {
        min: Vec2::ZERO,
        max: Vec2::new(1.0, 1.0),
    };

    pub fn contains_disc(&self, center: Vec2, radius: f64) -> bool {
        center.x - radius >= self.min.x
            && center.x + radius <= self.max.x
            && center.y - radius >= self.min.y
            && center.y + radius <= self.max.y
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub bodies: Vec<Body>,
    /// Elastic walls; `None` for an unbounded plane.
    pub bounds: Option<Aabb>,
    pub gravity: Vec2,
}

impl Scene {
    /// Builds a scene in the unit box without gravity.
    pub fn new(bodies: Vec<Body>) -> Result<Self, SimError> {
        Self::with_bounds(bodies, Some(Aabb::UNIT))
    }

    pub fn with_bounds(bodies: Vec<Body>, bounds: Option<Aabb>) -> Result<Self, SimError> {
        let scene = Scene {
            bodies,
            bounds,
            gravity: Vec2::ZERO,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        for (i, b) in self.bodies.iter().enumerate() {
            b.check(i)?;
            if let Some(bounds) = &self.bounds {
                if !bounds.contains_disc(b.position, b.radius) {
                    return Err(SimError::InvalidBody {
                        index: i,
                        reason: "body outside bounds".into(),
                    });
                }
            }
        }
        if let Some((i, j)) = self.first_overlap() {
            return Err(SimError::InvalidScene(format!("bodies {i} and {j} overlap")));
        }
        Ok(())
    }

    pub fn first_overlap(&self) -> Option<(usize, usize)> {
        for i in 0..self.bodies.len() {
            for j in i + 1..self.bodies.len() {
                let (a, b) = (&self.bodies[i], &self.bodies[j]);
                let r = a.radius + b.radius;
                if (a.position - b.position).norm_sq() < r * r * (1.0 - CONTACT_TOLERANCE) {
                    return Some((i, j));
                }
            }
        }
        None
    }

    pub fn len(&self) -> usize {
        self.bodies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bodies.is_empty()
    }

    /// Copy of the scene with body masses replaced.
    pub fn with_masses(&self, masses: &[f64]) -> Result<Scene, SimError> {
        if masses.len() != self.bodies.len() {
            return Err(SimError::MassCount {
                expected: self.bodies.len(),
                got: masses.len(),
            });
        }
        let mut scene = self.clone();
        for (i, (b, &m)) in scene.bodies.iter_mut().zip(masses).enumerate() {
            b.mass = m;
            b.check(i)?;
        }
        Ok(scene)
    }

    pub fn total_momentum(&self) -> Vec2 {
        self.bodies.iter().fold(Vec2::ZERO, |acc, b| acc + b.momentum())
    }

    pub fn kinetic_energy(&self) -> f64 {
        self.bodies.iter().map(Body::kinetic_energy).sum()
    }

    pub fn min_radius(&self) -> f64 {
        self.bodies
            .iter()
            .map(|b| b.radius)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Result of an elastic two-body impulse.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CollisionOutcome {
    pub first: Body,
    pub second: Body,
    /// False when the bodies were already separating (no impulse applied).
    pub applied: bool,
}

/// Applies the perfectly elastic impulse along the line of centres.
///
/// Only mass ratios enter the update, so scaling both masses by a common
/// factor leaves the result unchanged.
pub fn resolve_collision(b1: &Body, b2: &Body) -> CollisionOutcome {
    let unchanged = CollisionOutcome {
        first: *b1,
        second: *b2,
        applied: false,
    };
    let offset = b2.position - b1.position;
    let dist = offset.norm();
    if dist == 0.0 {
        return unchanged;
    }
    let n = offset / dist;
    let vn = (b2.velocity - b1.velocity).dot(n);
    if vn >= 0.0 {
        return unchanged;
    }
    // v1' = v1 + 2 m2/(m1+m2) vn n,  v2' = v2 - 2 m1/(m1+m2) vn n
    let w1 = 2.0 / (1.0 + b1.mass / b2.mass);
    let w2 = 2.0 / (1.0 + b2.mass / b1.mass);
    let mut first = *b1;
    let mut second = *b2;
    first.velocity += n * (w1 * vn);
    second.velocity -= n * (w2 * vn);
    CollisionOutcome {
        first,
        second,
        applied: true,
    }
}

fn pair_time_of_impact(a: &Body, b: &Body) -> Option<f64> {
    let p = b.position - a.position;
    let v = b.velocity - a.velocity;
    let half_b = p.dot(v);
    if half_b >= 0.0 {
        return None;
    }
    let r = a.radius + b.radius;
    let c = p.norm_sq() - r * r;
    if c <= 0.0 {
        return Some(0.0);
    }
    let a2 = v.norm_sq();
    let disc = half_b * half_b - a2 * c;
    if disc < 0.0 {
        return None;
    }
    Some(c / (-half_b + disc.sqrt()))
}

fn wall_time_of_impact(b: &Body, bounds: &Aabb) -> Option<f64> {
    let axis = |pos: f64, vel: f64, lo: f64, hi: f64| -> Option<f64> {
        if vel < 0.0 {
            Some(((pos - b.radius - lo) / -vel).max(0.0))
        } else if vel > 0.0 {
            Some(((hi - pos - b.radius) / vel).max(0.0))
        } else {
            None
        }
    };
    let tx = axis(b.position.x, b.velocity.x, bounds.min.x, bounds.max.x);
    let ty = axis(b.position.y, b.velocity.y, bounds.min.y, bounds.max.y);
    match (tx, ty) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    }
}

fn reflect_off_walls(b: &mut Body, bounds: &Aabb) -> bool {
    let tol = CONTACT_TOLERANCE * b.radius;
    let mut changed = false;
    if b.velocity.x < 0.0 && b.position.x - b.radius <= bounds.min.x + tol {
        b.velocity.x = -b.velocity.x;
        changed = true;
    }
    if b.velocity.x > 0.0 && b.position.x + b.radius >= bounds.max.x - tol {
        b.velocity.x = -b.velocity.x;
        changed = true;
    }
    if b.velocity.y < 0.0 && b.position.y - b.radius <= bounds.min.y + tol {
        b.velocity.y = -b.velocity.y;
        changed = true;
    }
    if b.velocity.y > 0.0 && b.position.y + b.radius >= bounds.max.y - tol {
        b.velocity.y = -b.velocity.y;
        changed = true;
    }
    changed
}

fn in_contact(a: &Body, b: &Body) -> bool {
    let r = (a.radius + b.radius) * (1.0 + CONTACT_TOLERANCE);
    (a.position - b.position).norm_sq() <= r * r
}

/// A body-body impulse recorded during simulation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Contact {
    /// Index of the frame interval `[frame, frame + 1)` the impulse fell in.
    pub frame: usize,
    pub a: usize,
    pub b: usize,
}

/// Resolves every contact present at the current instant, sweeping pairs in
/// index order until nothing changes.
fn resolve_contacts(
    bodies: &mut [Body],
    bounds: Option<&Aabb>,
    mut log: Option<&mut Vec<(usize, usize)>>,
) {
    for _ in 0..MAX_CONTACT_ITERATIONS {
        let mut changed = false;
        for i in 0..bodies.len() {
            for j in i + 1..bodies.len() {
                if !in_contact(&bodies[i], &bodies[j]) {
                    continue;
                }
                let out = resolve_collision(&bodies[i], &bodies[j]);
                if out.applied {
                    bodies[i] = out.first;
                    bodies[j] = out.second;
                    changed = true;
                    if let Some(log) = log.as_deref_mut() {
                        log.push((i, j));
                    }
                }
            }
        }
        if let Some(bounds) = bounds {
            for b in bodies.iter_mut() {
                changed |= reflect_off_walls(b, bounds);
            }
        }
        if !changed {
            break;
        }
    }
}

fn check_tunnelling(bodies: &[Body], h: f64) -> Result<(), SimError> {
    let min_radius = bodies
        .iter()
        .map(|b| b.radius)
        .fold(f64::INFINITY, f64::min);
    for i in 0..bodies.len() {
        for j in i + 1..bodies.len() {
            let displacement = (bodies[i].velocity - bodies[j].velocity).norm() * h;
            if displacement > min_radius {
                return Err(SimError::Tunnelling {
                    a: i,
                    b: j,
                    displacement,
                    min_radius,
                });
            }
        }
    }
    Ok(())
}

/// Advances bodies by one substep of length `h` with exact contact timing.
fn substep(
    bodies: &mut [Body],
    bounds: Option<&Aabb>,
    gravity: Vec2,
    h: f64,
    mut log: Option<&mut Vec<(usize, usize)>>,
) -> Result<(), SimError> {
    check_tunnelling(bodies, h)?;
    if gravity != Vec2::ZERO {
        for b in bodies.iter_mut() {
            b.velocity += gravity * h;
        }
    }
    let mut remaining = h;
    for _ in 0..MAX_EVENTS_PER_SUBSTEP {
        let mut next: Option<f64> = None;
        for i in 0..bodies.len() {
            if let Some(bounds) = bounds {
                if let Some(t) = wall_time_of_impact(&bodies[i], bounds) {
                    next = Some(next.map_or(t, |n| n.min(t)));
                }
            }
            for j in i + 1..bodies.len() {
                if let Some(t) = pair_time_of_impact(&bodies[i], &bodies[j]) {
                    next = Some(next.map_or(t, |n| n.min(t)));
                }
            }
        }
        match next {
            Some(t) if t <= remaining => {
                for b in bodies.iter_mut() {
                    b.position += b.velocity * t;
                }
                remaining -= t;
                resolve_contacts(bodies, bounds, log.as_deref_mut());
            }
            _ => {
                for b in bodies.iter_mut() {
                    b.position += b.velocity * remaining;
                }
                return Ok(());
            }
        }
    }
    Err(SimError::EventBudget)
}

/// Advances a scene by `dt`, split into equal substeps no longer than
/// [`MAX_SUBSTEP`].
pub fn step(scene: &Scene, dt: f64) -> Result<Scene, SimError> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(SimError::Timing(format!("dt must be positive, got {dt}")));
    }
    let n = (dt / MAX_SUBSTEP - 1e-9).ceil().max(1.0) as usize;
    let h = dt / n as f64;
    let mut next = scene.clone();
    for _ in 0..n {
        substep(&mut next.bodies, scene.bounds.as_ref(), scene.gravity, h, None)?;
    }
    Ok(next)
}

/// Number of substeps per recorded frame at `fps`.
pub fn substeps_per_frame(fps: f64) -> Result<usize, SimError> {
    if !(fps > 0.0) || !fps.is_finite() {
        return Err(SimError::Timing(format!("fps must be positive, got {fps}")));
    }
    let ratio = f64::from(SUBSTEP_RATE) / fps;
    let rounded = ratio.round();
    if rounded < 1.0 || (ratio - rounded).abs() > 1e-9 {
        return Err(SimError::Timing(format!(
            "fps {fps} does not divide the substep rate {SUBSTEP_RATE}"
        )));
    }
    Ok(rounded as usize)
}

/// Frames recorded for a duration at a frame rate (t = 0 included, the
/// instant t = duration excluded).
pub fn frame_count(duration: f64, fps: f64) -> usize {
    (duration * fps).round().max(1.0) as usize
}

/// Simulates `scene` under the given body masses and records frames at `fps`.
pub fn simulate(
    scene: &Scene,
    masses: &[f64],
    duration: f64,
    fps: f64,
) -> Result<Trajectory, SimError> {
    run(scene, masses, duration, fps, None)
}

/// Like [`simulate`], also returning every body-body impulse in time order.
pub fn simulate_with_contacts(
    scene: &Scene,
    masses: &[f64],
    duration: f64,
    fps: f64,
) -> Result<(Trajectory, Vec<Contact>), SimError> {
    let mut contacts = Vec::new();
    let traj = run(scene, masses, duration, fps, Some(&mut contacts))?;
    Ok((traj, contacts))
}

fn run(
    scene: &Scene,
    masses: &[f64],
    duration: f64,
    fps: f64,
    mut contacts: Option<&mut Vec<Contact>>,
) -> Result<Trajectory, SimError> {
    let per_frame = substeps_per_frame(fps)?;
    if !(duration > 0.0) || !duration.is_finite() {
        return Err(SimError::Timing(format!(
            "duration must be positive, got {duration}"
        )));
    }
    let mut current = scene.with_masses(masses)?;
    let n_frames = frame_count(duration, fps);
    let mut states = Vec::with_capacity(n_frames);
    let mut pairs = Vec::new();
    states.push(BodyState::capture(&current.bodies));
    for frame in 1..n_frames {
        for _ in 0..per_frame {
            let log = contacts.as_ref().map(|_| &mut pairs);
            substep(
                &mut current.bodies,
                scene.bounds.as_ref(),
                scene.gravity,
                MAX_SUBSTEP,
                log,
            )?;
        }
        if let Some(out) = contacts.as_deref_mut() {
            out.extend(pairs.drain(..).map(|(a, b)| Contact {
                frame: frame - 1,
                a,
                b,
            }));
        }
        let snapshot = BodyState::capture(&current.bodies);
        if snapshot
            .iter()
            .any(|s| !s.position.is_finite() || !s.velocity.is_finite())
        {
            return Err(SimError::NonFinite { frame });
        }
        states.push(snapshot);
    }
    Ok(Trajectory { fps, states })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ball(x: f64, y: f64, vx: f64, vy: f64, r: f64, m: f64) -> Body {
        Body::new(Vec2::new(x, y), Vec2::new(vx, vy), r, m, 0)
    }

    #[test]
    fn free_motion_shifts_position() {
        let scene = Scene::with_bounds(vec![ball(0.0, 0.0, 1.0, 0.0, 0.05, 1.0)], None).unwrap();
        let next = step(&scene, 1.0).unwrap();
        let p = next.bodies[0].position;
        assert!((p.x - 1.0).abs() < 1e-12 && p.y.abs() < 1e-15, "{p:?}");
    }

    #[test]
    fn equal_masses_swap_velocities_head_on() {
        let scene = Scene::with_bounds(
            vec![
                ball(0.3, 0.5, 1.0, 0.0, 0.05, 1.0),
                ball(0.7, 0.5, -1.0, 0.0, 0.05, 1.0),
            ],
            None,
        )
        .unwrap();
        let next = step(&scene, 0.5).unwrap();
        assert_eq!(next.bodies[0].velocity, Vec2::new(-1.0, 0.0));
        assert_eq!(next.bodies[1].velocity, Vec2::new(1.0, 0.0));
    }

    #[test]
    fn unequal_masses_follow_closed_form() {
        let scene = Scene::with_bounds(
            vec![
                ball(0.2, 0.5, 1.0, 0.0, 0.05, 10.0),
                ball(0.5, 0.5, 0.0, 0.0, 0.05, 1.0),
            ],
            None,
        )
        .unwrap();
        let next = step(&scene, 0.4).unwrap();
        assert!((next.bodies[0].velocity.x - 9.0 / 11.0).abs() < 1e-12);
        assert!((next.bodies[1].velocity.x - 20.0 / 11.0).abs() < 1e-12);
    }

    #[test]
    fn resolve_collision_closed_form_and_flags() {
        let a = ball(0.0, 0.0, 1.0, 0.0, 0.05, 10.0);
        let b = ball(0.1, 0.0, 0.0, 0.0, 0.05, 1.0);
        let out = resolve_collision(&a, &b);
        assert!(out.applied);
        assert!((out.first.velocity.x - 9.0 / 11.0).abs() < 1e-12);
        assert!((out.second.velocity.x - 20.0 / 11.0).abs() < 1e-12);

        let sep = resolve_collision(&out.first, &out.second);
        assert!(!sep.applied);
        assert_eq!(sep.first, out.first);
    }

    #[test]
    fn oblique_contact_keeps_tangential_components() {
        let d = 0.1 / 2f64.sqrt();
        let a = ball(0.0, 0.0, 1.0, 0.0, 0.05, 1.0);
        let b = ball(d, d, 0.0, 0.0, 0.05, 1.0);
        let out = resolve_collision(&a, &b);
        assert!(out.applied);
        let n = Vec2::new(1.0, 1.0) / 2f64.sqrt();
        let t = Vec2::new(-n.y, n.x);
        assert!((out.first.velocity.dot(t) - a.velocity.dot(t)).abs() < 1e-12);
        assert!((out.second.velocity.dot(t) - b.velocity.dot(t)).abs() < 1e-12);
    }

    #[test]
    fn wall_bounce_is_elastic() {
        let scene = Scene::new(vec![ball(0.9, 0.5, 1.0, 0.0, 0.05, 1.0)]).unwrap();
        let next = step(&scene, 0.1).unwrap();
        let b = next.bodies[0];
        assert_eq!(b.velocity, Vec2::new(-1.0, 0.0));
        // reaches the wall at t = 0.05, then travels back for 0.05
        assert!((b.position.x - 0.9).abs() < 1e-12, "{}", b.position.x);
    }

    #[test]
    fn tunnelling_is_reported() {
        let scene = Scene::with_bounds(
            vec![
                ball(0.0, 0.0, 20.0, 0.0, 0.03, 1.0),
                ball(0.5, 0.0, -20.0, 0.0, 0.03, 1.0),
            ],
            None,
        )
        .unwrap();
        let err = step(&scene, 0.01).unwrap_err();
        assert!(matches!(err, SimError::Tunnelling { .. }), "{err}");
        assert!(err.to_string().contains("smaller substep"));
    }

    #[test]
    fn invalid_inputs_rejected() {
        assert!(Scene::new(vec![ball(0.5, 0.5, 0.0, 0.0, 0.0, 1.0)]).is_err());
        assert!(Scene::new(vec![ball(0.5, 0.5, 0.0, 0.0, 0.05, -1.0)]).is_err());
        assert!(Scene::new(vec![
            ball(0.5, 0.5, 0.0, 0.0, 0.05, 1.0),
            ball(0.52, 0.5, 0.0, 0.0, 0.05, 1.0)
        ])
        .is_err());
        let scene = Scene::new(vec![ball(0.5, 0.5, 0.0, 0.0, 0.05, 1.0)]).unwrap();
        assert!(simulate(&scene, &[1.0], 1.0, 7.0).is_err());
        assert!(simulate(&scene, &[1.0, 1.0], 1.0, 25.0).is_err());
        assert!(step(&scene, 0.0).is_err());
    }

    #[test]
    fn free_flight_matches_closed_form() {
        let scene = Scene::with_bounds(
            vec![
                ball(0.1, 0.1, 0.3, 0.2, 0.05, 1.0),
                ball(0.9, 0.1, -0.1, 0.25, 0.04, 10.0),
            ],
            None,
        )
        .unwrap();
        let traj = simulate(&scene, &[1.0, 10.0], 2.0, 25.0).unwrap();
        assert_eq!(traj.n_frames(), 50);
        for (f, frame) in traj.states.iter().enumerate() {
            let t = f as f64 / 25.0;
            for (b, s) in scene.bodies.iter().zip(frame) {
                let expect = b.position + b.velocity * t;
                assert!((s.position - expect).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn collision_instant_bracketed_by_sampling() {
        // contact when the gap of 0.3 - 0.1 closes at relative speed 0.8
        let scene = Scene::with_bounds(
            vec![
                ball(0.2, 0.5, 0.4, 0.0, 0.05, 1.0),
                ball(0.5, 0.5, -0.4, 0.0, 0.05, 1.0),
            ],
            None,
        )
        .unwrap();
        let t_contact = 0.2 / 0.8;
        for fps in [25.0, 5.0] {
            let traj = simulate(&scene, &[1.0, 1.0], 1.0, fps).unwrap();
            let (best, _) = traj
                .states
                .iter()
                .enumerate()
                .map(|(i, s)| (i, (s[0].position - s[1].position).norm()))
                .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
            let t_best = best as f64 / fps;
            assert!((t_best - t_contact).abs() <= 1.0 / fps + 1e-12, "fps {fps}");
        }
    }
}
