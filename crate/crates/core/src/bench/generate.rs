use std::collections::BTreeMap;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::filters::{
    counterfactuality_from_outcomes, identifiability_distances, identifiability_from_outcomes,
    Outcomes,
};
use super::{
    mass_combination, BenchError, ConfounderSet, ContactRequirement, Experiment, ScenarioConfig,
};
use crate::rng::{derive, seeded, Rng};
use crate::sim::{self, Scene, Trajectory};

/// Candidates evaluated per generation round. Fixed so results do not depend
/// on the worker count.
const BATCH: usize = 16;

/// Which rejection tests a dataset applies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Filters {
    pub identifiability: bool,
    pub counterfactuality: bool,
}

impl Filters {
    pub const ALL: Filters = Filters {
        identifiability: true,
        counterfactuality: true,
    };
    /// Counterfactuality only; used as the "unfiltered" control set.
    pub const COUNTERFACTUAL_ONLY: Filters = Filters {
        identifiability: false,
        counterfactuality: true,
    };
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RejectionReason {
    #[serde(rename = "identifiability")]
    Identifiability,
    #[serde(rename = "counterfactuality")]
    Counterfactuality,
    #[serde(rename = "no-valid-do-op")]
    NoValidDoOp,
    /// No scene A met the contact requirement within the redraw budget.
    #[serde(rename = "no-contact-scene")]
    NoContactScene,
}

impl RejectionReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectionReason::Identifiability => "identifiability",
            RejectionReason::Counterfactuality => "counterfactuality",
            RejectionReason::NoValidDoOp => "no-valid-do-op",
            RejectionReason::NoContactScene => "no-contact-scene",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rejection {
    pub reason: RejectionReason,
    pub combination: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum CandidateOutcome {
    Accepted(Box<Experiment>),
    Rejected(Rejection),
}

/// Accepted-experiment counts per mass combination.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BalanceLedger {
    pub counts: Vec<u64>,
}

impl BalanceLedger {
    pub fn new(n_bodies: usize) -> Self {
        BalanceLedger {
            counts: vec![0; 1 << n_bodies],
        }
    }

    /// Least-represented combination; ties go to the lowest index.
    pub fn next_combination(&self) -> usize {
        let mut best = 0;
        for (i, &c) in self.counts.iter().enumerate() {
            if c < self.counts[best] {
                best = i;
            }
        }
        best
    }

    pub fn record(&mut self, combination: usize) {
        self.counts[combination] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// max/min cell count (infinite if a cell is empty and another is not).
    pub fn imbalance(&self) -> f64 {
        let max = self.counts.iter().copied().max().unwrap_or(0);
        let min = self.counts.iter().copied().min().unwrap_or(0);
        match (min, max) {
            (_, 0) => 1.0,
            (0, _) => f64::INFINITY,
            _ => max as f64 / min as f64,
        }
    }
}

fn contacts_ok(requirement: ContactRequirement, n: usize, contacts: &[sim::Contact]) -> bool {
    match requirement {
        ContactRequirement::None => true,
        ContactRequirement::Any => !contacts.is_empty(),
        ContactRequirement::All => {
            let mut touched = vec![false; n];
            for c in contacts {
                touched[c.a] = true;
                touched[c.b] = true;
            }
            touched.into_iter().all(|t| t)
        }
    }
}

/// Draws scene A, assigns masses and simulates AB, redrawing until the
/// scenario's contact requirement holds.
fn sample_observed(
    cfg: &ScenarioConfig,
    masses: &[f64],
    rng: &mut Rng,
) -> Result<(Scene, Trajectory), BenchError> {
    for _ in 0..cfg.max_scene_tries {
        let scene = match cfg.sample_scene(rng) {
            Ok(s) => s.with_masses(masses)?,
            Err(BenchError::Placement(_)) => continue,
            Err(e) => return Err(e),
        };
        let (traj, contacts) = sim::simulate_with_contacts(
            &scene,
            masses,
            cfg.horizon.duration,
            cfg.horizon.fps,
        )?;
        if contacts_ok(cfg.ab_contacts, scene.len(), &contacts) {
            return Ok((scene, traj));
        }
    }
    Err(BenchError::Placement(cfg.max_scene_tries))
}

/// One pass of the generation loop for a given mass combination: sample A,
/// simulate B, search do-operations, emit or reject.
pub fn generate_candidate(
    cfg: &ScenarioConfig,
    eps: f64,
    filters: Filters,
    combination: usize,
    seed: u64,
) -> Result<CandidateOutcome, BenchError> {
    cfg.validate()?;
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(BenchError::Threshold(eps));
    }
    let n = cfg.n_objects;
    let masses = mass_combination(combination, n);
    let mut rng = seeded(seed);
    let (scene_a, traj_ab) = match sample_observed(cfg, &masses, &mut rng) {
        Ok(v) => v,
        Err(BenchError::Placement(_)) => {
            return Ok(CandidateOutcome::Rejected(Rejection {
                reason: RejectionReason::NoContactScene,
                combination,
                seed,
            }))
        }
        Err(e) => return Err(e),
    };
    let ab = Outcomes::simulate_ab(&scene_a, &cfg.horizon)?;
    debug_assert_eq!(ab[combination], traj_ab);

    let mut any_placed = false;
    let mut passed_counterfactuality = false;
    for _ in 0..cfg.max_do_trials {
        let op = match cfg.sample_do_operation(&scene_a, &mut rng) {
            Ok(op) => op,
            Err(BenchError::Placement(_)) => continue,
            Err(e) => return Err(e),
        };
        any_placed = true;
        let scene_c = op.apply(&scene_a)?;
        let outcomes = Outcomes::new(ab.clone(), &scene_c, &op, &cfg.horizon)?;
        let cf = counterfactuality_from_outcomes(&outcomes, combination, eps)?;
        if filters.counterfactuality && !cf.counterfactual {
            continue;
        }
        passed_counterfactuality = true;
        if filters.identifiability
            && !identifiability_from_outcomes(&outcomes, combination, eps)?.identifiable
        {
            continue;
        }
        let traj_cd = outcomes.cd(combination).clone();
        let confounders = ConfounderSet {
            masses: masses.clone(),
            initial_velocities: scene_a.bodies.iter().map(|b| b.velocity).collect(),
        };
        return Ok(CandidateOutcome::Accepted(Box::new(Experiment {
            id: Experiment::id_for_seed(seed),
            scenario: cfg.kind,
            seed,
            horizon: cfg.horizon,
            eps,
            scene_a,
            traj_ab,
            do_op: op,
            scene_c,
            traj_cd,
            confounders,
            consequential_k: cf.consequential_k,
        })));
    }
    let reason = if !any_placed {
        RejectionReason::NoValidDoOp
    } else if passed_counterfactuality {
        RejectionReason::Identifiability
    } else {
        RejectionReason::Counterfactuality
    };
    Ok(CandidateOutcome::Rejected(Rejection {
        reason,
        combination,
        seed,
    }))
}

/// Runs the loop once with the ledger's least-represented combination.
pub fn generate_experiment(
    cfg: &ScenarioConfig,
    eps: f64,
    filters: Filters,
    ledger: &BalanceLedger,
    seed: u64,
) -> Result<CandidateOutcome, BenchError> {
    generate_candidate(cfg, eps, filters, ledger.next_combination(), seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub attempts: u64,
    pub accepted: usize,
    pub rejections: BTreeMap<String, u64>,
    pub ledger: BalanceLedger,
}

/// Generates `n` accepted experiments. Candidates run in fixed-size rounds;
/// each round assigns combinations from the ledger as if every candidate
/// were accepted, then commits results in candidate order.
pub fn generate_dataset(
    cfg: &ScenarioConfig,
    eps: f64,
    filters: Filters,
    n: usize,
    seed: u64,
    max_attempts: u64,
) -> Result<(Vec<Experiment>, GenerationReport), BenchError> {
    cfg.validate()?;
    let mut ledger = BalanceLedger::new(cfg.n_objects);
    let mut experiments = Vec::with_capacity(n);
    let mut rejections: BTreeMap<String, u64> = BTreeMap::new();
    let mut attempts = 0u64;
    while experiments.len() < n {
        if attempts >= max_attempts {
            return Err(BenchError::Exhausted {
                attempts,
                accepted: experiments.len(),
            });
        }
        let mut provisional = ledger.clone();
        let jobs: Vec<(usize, u64)> = (0..BATCH as u64)
            .map(|j| {
                let combo = provisional.next_combination();
                provisional.record(combo);
                (combo, derive(seed, "candidate", attempts + j))
            })
            .collect();
        let results: Vec<Result<CandidateOutcome, BenchError>> = jobs
            .par_iter()
            .map(|&(combo, s)| generate_candidate(cfg, eps, filters, combo, s))
            .collect();
        for result in results {
            if experiments.len() >= n || attempts >= max_attempts {
                break;
            }
            attempts += 1;
            match result? {
                CandidateOutcome::Accepted(exp) => {
                    ledger.record(exp.confounders.combination().expect("alphabet"));
                    experiments.push(*exp);
                }
                CandidateOutcome::Rejected(r) => {
                    *rejections.entry(r.reason.as_str().to_string()).or_default() += 1;
                }
            }
        }
    }
    let report = GenerationReport {
        attempts,
        accepted: experiments.len(),
        rejections,
        ledger,
    };
    Ok((experiments, report))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub eps: f64,
    pub rejected: usize,
    pub total: usize,
    pub percent: f64,
}

/// Identifiability rejection rate across a threshold grid, measured on
/// unfiltered candidates (random masses, random do-operation).
pub fn threshold_sweep(
    cfg: &ScenarioConfig,
    eps_grid: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<Vec<SweepRow>, BenchError> {
    cfg.validate()?;
    if eps_grid.is_empty() {
        return Err(BenchError::Threshold(f64::NAN));
    }
    if let Some(&bad) = eps_grid.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
        return Err(BenchError::Threshold(bad));
    }
    if eps_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(BenchError::Scenario("threshold grid must increase".into()));
    }
    let n = cfg.n_objects;
    let per_candidate: Vec<Vec<(f64, f64)>> = (0..n_samples as u64)
        .into_par_iter()
        .map(|i| -> Result<Vec<(f64, f64)>, BenchError> {
            let mut rng = seeded(derive(seed, "sweep", i));
            let combination = rng.random_range(0..1usize << n);
            let masses = mass_combination(combination, n);
            loop {
                let (scene_a, _) = sample_observed(cfg, &masses, &mut rng)?;
                let op = match cfg.sample_do_operation(&scene_a, &mut rng) {
                    Ok(op) => op,
                    Err(BenchError::Placement(_)) => continue,
                    Err(e) => return Err(e),
                };
                let scene_c = op.apply(&scene_a)?;
                let outcomes = Outcomes::simulate(&scene_a, &scene_c, &op, &cfg.horizon)?;
                return Ok(identifiability_distances(&outcomes, combination)?
                    .into_iter()
                    .map(|(_, da, dc)| (da, dc))
                    .collect());
            }
        })
        .collect::<Result<_, _>>()?;
    Ok(eps_grid
        .iter()
        .map(|&eps| {
            let rejected = per_candidate
                .iter()
                .filter(|d| d.iter().any(|&(da, dc)| da < eps && dc > eps))
                .count();
            SweepRow {
                eps,
                rejected,
                total: n_samples,
                percent: 100.0 * rejected as f64 / n_samples.max(1) as f64,
            }
        })
        .collect())
}

/// The grid point with the highest rejection rate (first one on ties).
pub fn choose_working_eps(rows: &[SweepRow]) -> Option<f64> {
    let mut best: Option<&SweepRow> = None;
    for r in rows {
        if best.is_none_or(|b| r.percent > b.percent) {
            best = Some(r);
        }
    }
    best.map(|r| r.eps)
}

/// Logarithmically spaced grid from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points < 2 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..points)
        .map(|i| (a + (b - a) * i as f64 / (points - 1) as f64).exp())
        .collect()
}
