use rayon::prelude::*;

use super::{
    combination_index, mass_combination, BenchError, DoOperation, Horizon,
    MAX_ENUMERATED_BODIES,
};
use crate::sim::{Scene, Trajectory};

/// Σ over frames and bodies of the Euclidean position gap.
pub fn traj_distance(t1: &Trajectory, t2: &Trajectory) -> Result<f64, BenchError> {
    if t1.n_frames() != t2.n_frames() || t1.n_bodies() != t2.n_bodies() || t1.fps != t2.fps {
        return Err(BenchError::ShapeMismatch(format!(
            "{}x{} @ {} fps vs {}x{} @ {} fps",
            t1.n_frames(),
            t1.n_bodies(),
            t1.fps,
            t2.n_frames(),
            t2.n_bodies(),
            t2.fps
        )));
    }
    let mut total = 0.0;
    for (f1, f2) in t1.states.iter().zip(&t2.states) {
        for (a, b) in f1.iter().zip(f2) {
            total += (a.position - b.position).norm();
        }
    }
    Ok(total)
}

/// Rollouts of A and C under every mass combination of A's bodies.
#[derive(Clone, Debug)]
pub struct Outcomes {
    pub n_bodies: usize,
    pub ab: Vec<Trajectory>,
    cd: Vec<Trajectory>,
    /// Full combination index → index into `cd` (combinations over survivors).
    cd_index: Vec<usize>,
}

impl Outcomes {
    pub fn simulate_ab(scene_a: &Scene, horizon: &Horizon) -> Result<Vec<Trajectory>, BenchError> {
        let n = scene_a.len();
        if n > MAX_ENUMERATED_BODIES {
            return Err(BenchError::CombinatorialBudget(n));
        }
        (0..1usize << n)
            .into_par_iter()
            .map(|i| Ok(horizon.simulate(scene_a, &mass_combination(i, n))?))
            .collect()
    }

    pub fn new(
        ab: Vec<Trajectory>,
        scene_c: &Scene,
        do_op: &DoOperation,
        horizon: &Horizon,
    ) -> Result<Outcomes, BenchError> {
        let n = ab.len().trailing_zeros() as usize;
        if ab.len() != 1 << n || do_op.survivors(n).len() != scene_c.len() {
            return Err(BenchError::ShapeMismatch(format!(
                "{} AB rollouts, {} bodies in C",
                ab.len(),
                scene_c.len()
            )));
        }
        let m = scene_c.len();
        let cd: Vec<Trajectory> = (0..1usize << m)
            .into_par_iter()
            .map(|i| Ok(horizon.simulate(scene_c, &mass_combination(i, m))?))
            .collect::<Result<_, BenchError>>()?;
        let cd_index = (0..1usize << n)
            .map(|i| {
                combination_index(&do_op.restrict(&mass_combination(i, n)))
                    .expect("alphabet masses")
            })
            .collect();
        Ok(Outcomes {
            n_bodies: n,
            ab,
            cd,
            cd_index,
        })
    }

    pub fn simulate(
        scene_a: &Scene,
        scene_c: &Scene,
        do_op: &DoOperation,
        horizon: &Horizon,
    ) -> Result<Outcomes, BenchError> {
        let ab = Self::simulate_ab(scene_a, horizon)?;
        Self::new(ab, scene_c, do_op, horizon)
    }

    pub fn cd(&self, combination: usize) -> &Trajectory {
        &self.cd[self.cd_index[combination]]
    }

    pub fn n_combinations(&self) -> usize {
        self.ab.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IdentifiabilityVerdict {
    pub identifiable: bool,
    /// First offending alternative combination, lexicographically.
    pub witness: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CounterfactualityVerdict {
    pub counterfactual: bool,
    /// Bodies (A indexing) whose single mass flip moves CD by at least ε.
    pub consequential_k: Vec<usize>,
}

/// `(z', d_AB(z, z'), d_CD(z, z'))` for every alternative `z' ≠ z`.
pub fn identifiability_distances(
    outcomes: &Outcomes,
    z: usize,
) -> Result<Vec<(usize, f64, f64)>, BenchError> {
    (0..outcomes.n_combinations())
        .filter(|&alt| alt != z)
        .map(|alt| {
            let da = traj_distance(&outcomes.ab[z], &outcomes.ab[alt])?;
            let dc = traj_distance(outcomes.cd(z), outcomes.cd(alt))?;
            Ok((alt, da, dc))
        })
        .collect()
}

pub fn identifiability_from_outcomes(
    outcomes: &Outcomes,
    z: usize,
    eps: f64,
) -> Result<IdentifiabilityVerdict, BenchError> {
    check_eps(eps)?;
    let witness = identifiability_distances(outcomes, z)?
        .into_iter()
        .find(|&(_, da, dc)| da < eps && dc > eps)
        .map(|(alt, _, _)| alt);
    Ok(IdentifiabilityVerdict {
        identifiable: witness.is_none(),
        witness,
    })
}

pub fn counterfactuality_from_outcomes(
    outcomes: &Outcomes,
    z: usize,
    eps: f64,
) -> Result<CounterfactualityVerdict, BenchError> {
    check_eps(eps)?;
    let n = outcomes.n_bodies;
    let mut consequential_k = Vec::new();
    for k in 0..n {
        let flipped = z ^ (1 << (n - 1 - k));
        if traj_distance(outcomes.cd(flipped), outcomes.cd(z))? >= eps {
            consequential_k.push(k);
        }
    }
    Ok(CounterfactualityVerdict {
        counterfactual: !consequential_k.is_empty(),
        consequential_k,
    })
}

fn check_eps(eps: f64) -> Result<(), BenchError> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(BenchError::Threshold(eps))
    }
}

fn z_index(masses: &[f64], n: usize) -> Result<usize, BenchError> {
    if masses.len() != n {
        return Err(BenchError::Confounders(format!(
            "{} masses for {n} bodies",
            masses.len()
        )));
    }
    combination_index(masses)
        .ok_or_else(|| BenchError::Confounders(format!("masses {masses:?} outside alphabet")))
}

/// Rejects (returns `identifiable = false`) iff some alternative mass
/// assignment keeps AB within ε while moving CD beyond ε.
pub fn identifiability_test(
    scene_a: &Scene,
    do_op: &DoOperation,
    masses: &[f64],
    eps: f64,
    horizon: &Horizon,
) -> Result<IdentifiabilityVerdict, BenchError> {
    check_eps(eps)?;
    let z = z_index(masses, scene_a.len())?;
    let scene_c = do_op.apply(scene_a)?;
    let outcomes = Outcomes::simulate(scene_a, &scene_c, do_op, horizon)?;
    identifiability_from_outcomes(&outcomes, z, eps)
}

/// Checks that flipping at least one surviving body's mass moves CD by ε.
pub fn counterfactuality_test(
    scene_a: &Scene,
    do_op: &DoOperation,
    masses: &[f64],
    eps: f64,
    horizon: &Horizon,
) -> Result<CounterfactualityVerdict, BenchError> {
    check_eps(eps)?;
    let n = scene_a.len();
    z_index(masses, n)?;
    let scene_c = do_op.apply(scene_a)?;
    let survivors = do_op.survivors(n);
    let zc = do_op.restrict(masses);
    let base = horizon.simulate(&scene_c, &zc)?;
    let mut consequential_k = Vec::new();
    for (ci, &k) in survivors.iter().enumerate() {
        let mut flipped = zc.clone();
        flipped[ci] = if flipped[ci] == super::MASS_ALPHABET[0] {
            super::MASS_ALPHABET[1]
        } else {
            super::MASS_ALPHABET[0]
        };
        if traj_distance(&horizon.simulate(&scene_c, &flipped)?, &base)? >= eps {
            consequential_k.push(k);
        }
    }
    Ok(CounterfactualityVerdict {
        counterfactual: !consequential_k.is_empty(),
        consequential_k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{Body, BodyState, Vec2};

    const H: Horizon = Horizon {
        duration: 2.0,
        fps: 25.0,
    };

    fn ball(x: f64, y: f64, vx: f64, vy: f64, r: f64, id: u8) -> Body {
        Body::new(Vec2::new(x, y), Vec2::new(vx, vy), r, 1.0, id)
    }

    fn track(offset: f64, frames: usize) -> Trajectory {
        Trajectory {
            fps: 25.0,
            states: (0..frames)
                .map(|f| {
                    vec![BodyState {
                        position: Vec2::new(0.1 + offset, f as f64 * 0.01),
                        velocity: Vec2::ZERO,
                    }]
                })
                .collect(),
        }
    }

    #[test]
    fn distance_basics() {
        let a = track(0.0, 10);
        assert_eq!(traj_distance(&a, &a).unwrap(), 0.0);
        let b = track(0.25, 10);
        assert!((traj_distance(&a, &b).unwrap() - 2.5).abs() < 1e-12);
        assert_eq!(traj_distance(&a, &b).unwrap(), traj_distance(&b, &a).unwrap());
        assert!(traj_distance(&a, &track(0.0, 9)).is_err());
    }

    #[test]
    fn masses_do_not_matter_without_contact() {
        let scene = Scene::new(vec![
            ball(0.2, 0.2, 0.1, 0.0, 0.05, 0),
            ball(0.2, 0.8, 0.1, 0.0, 0.05, 1),
        ])
        .unwrap();
        let t1 = H.simulate(&scene, &[1.0, 1.0]).unwrap();
        let t2 = H.simulate(&scene, &[10.0, 1.0]).unwrap();
        assert_eq!(traj_distance(&t1, &t2).unwrap(), 0.0);
        let op = DoOperation::shift(0, Vec2::new(0.1, 0.0));
        let v = identifiability_test(&scene, &op, &[1.0, 10.0], 1e-3, &H).unwrap();
        assert!(v.identifiable);
        let c = counterfactuality_test(&scene, &op, &[1.0, 10.0], 1e-3, &H).unwrap();
        assert!(!c.counterfactual);
    }

    #[test]
    fn single_body_is_never_counterfactual() {
        let scene = Scene::new(vec![ball(0.5, 0.5, 0.3, 0.2, 0.05, 0)]).unwrap();
        let op = DoOperation::shift(0, Vec2::new(0.1, 0.0));
        let c = counterfactuality_test(&scene, &op, &[10.0], 1e-9, &H).unwrap();
        assert!(!c.counterfactual);
    }

    /// Balls miss in AB; the shift puts body 0 on a collision course in CD.
    fn miss_then_hit() -> (Scene, DoOperation) {
        let scene = Scene::new(vec![
            ball(0.2, 0.3, 0.3, 0.0, 0.05, 0),
            ball(0.6, 0.5, 0.0, 0.0, 0.06, 1),
        ])
        .unwrap();
        (scene, DoOperation::shift(0, Vec2::new(0.0, 0.2)))
    }

    #[test]
    fn hidden_masses_revealed_only_in_cd_are_rejected() {
        let (scene, op) = miss_then_hit();
        let h = H;
        let v = identifiability_test(&scene, &op, &[1.0, 1.0], 0.5, &h).unwrap();
        assert!(!v.identifiable);
        // brute force: every alternative leaves AB untouched (no contact)
        let c = op.apply(&scene).unwrap();
        let base_ab = h.simulate(&scene, &[1.0, 1.0]).unwrap();
        let base_cd = h.simulate(&c, &[1.0, 1.0]).unwrap();
        let mut offending = Vec::new();
        for i in 1..4 {
            let z = mass_combination(i, 2);
            let da = traj_distance(&base_ab, &h.simulate(&scene, &z).unwrap()).unwrap();
            let dc = traj_distance(&base_cd, &h.simulate(&c, &z).unwrap()).unwrap();
            assert_eq!(da, 0.0);
            if dc > 0.5 {
                offending.push(i);
            }
        }
        assert_eq!(offending, vec![1, 2]);
        assert_eq!(v.witness, Some(1));
    }

    #[test]
    fn mass_sensitive_collision_is_counterfactual_for_both_bodies() {
        let (scene, op) = miss_then_hit();
        let c = counterfactuality_test(&scene, &op, &[1.0, 1.0], 0.5, &H).unwrap();
        assert!(c.counterfactual);
        assert_eq!(c.consequential_k, vec![0, 1]);
        let outcomes = Outcomes::simulate(&scene, &op.apply(&scene).unwrap(), &op, &H).unwrap();
        assert_eq!(
            counterfactuality_from_outcomes(&outcomes, 0, 0.5).unwrap(),
            c
        );
    }

    #[test]
    fn tiny_threshold_accepts_generic_trajectories() {
        // both balls collide in AB, so any mass change moves AB
        let scene = Scene::new(vec![
            ball(0.2, 0.5, 0.3, 0.0, 0.05, 0),
            ball(0.6, 0.5, 0.0, 0.0, 0.06, 1),
        ])
        .unwrap();
        let op = DoOperation::shift(0, Vec2::new(0.0, 0.05));
        for i in 0..4 {
            let v = identifiability_test(&scene, &op, &mass_combination(i, 2), 1e-12, &H).unwrap();
            assert!(v.identifiable);
        }
    }

    #[test]
    fn remove_restricts_cd_enumeration() {
        let (scene, _) = miss_then_hit();
        let op = DoOperation::remove(1);
        let c = counterfactuality_test(&scene, &op, &[1.0, 10.0], 1e-9, &H).unwrap();
        assert!(!c.counterfactual);
        let v = identifiability_test(&scene, &op, &[1.0, 10.0], 1e-9, &H).unwrap();
        assert!(v.identifiable);
    }

    #[test]
    fn bad_threshold_is_refused() {
        let (scene, op) = miss_then_hit();
        assert!(identifiability_test(&scene, &op, &[1.0, 1.0], 0.0, &H).is_err());
        assert!(counterfactuality_test(&scene, &op, &[1.0, 1.0], -1.0, &H).is_err());
    }
}
