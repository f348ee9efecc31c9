use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::bench::{Experiment, MASS_ALPHABET};
use crate::error::{Error, Result};
use crate::nn::{clip_grad_norm, Adam, Dense, Graph, GraphNet, Gru, NnError, ParamStore, Tensor, Var};
use crate::rng::{derive, seeded};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub hidden: usize,
    pub gru_hidden: usize,
    pub lr: f64,
    pub steps: usize,
    pub batch: usize,
    /// Uses every `stride`-th observed frame.
    pub stride: usize,
    pub train_fraction: f64,
    /// Replaces labels by coin flips (chance-level control).
    pub shuffle_labels: bool,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            hidden: 32,
            gru_hidden: 32,
            lr: 1e-3,
            steps: 3000,
            batch: 16,
            stride: 2,
            train_fraction: 0.8,
            shuffle_labels: false,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeScores {
    /// Over every body of the held-out experiments.
    pub accuracy: f64,
    /// Over bodies whose mass flip changes the counterfactual outcome.
    pub corrected: f64,
    pub n_test: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeComparison {
    pub filtered: ProbeScores,
    pub unfiltered: ProbeScores,
}

struct Case {
    frames: Vec<Tensor>,
    labels: Vec<f64>,
    consequential: Vec<bool>,
}

/// Per-body rows `[x, y, vx, vy, Δvx, Δvy]` of the observed leg, where Δv
/// is the velocity change since the previous kept frame.
fn case(e: &Experiment, stride: usize) -> Case {
    let kept: Vec<_> = e.traj_ab.states.iter().step_by(stride).collect();
    let frames = kept
        .iter()
        .enumerate()
        .map(|(t, f)| {
            let prev = kept[t.saturating_sub(1)];
            Tensor::new(
                &[f.len(), 6],
                f.iter()
                    .zip(prev.iter())
                    .flat_map(|(s, p)| {
                        [
                            s.position.x,
                            s.position.y,
                            s.velocity.x,
                            s.velocity.y,
                            s.velocity.x - p.velocity.x,
                            s.velocity.y - p.velocity.y,
                        ]
                    })
                    .collect(),
            )
        })
        .collect();
    let heavy = MASS_ALPHABET[1];
    Case {
        frames,
        labels: e.confounders.masses.iter().map(|&m| f64::from(m == heavy)).collect(),
        consequential: (0..e.n_bodies()).map(|k| e.consequential_k.contains(&k)).collect(),
    }
}

struct Probe {
    gn: GraphNet,
    gru: Gru,
    head: Dense,
    store: ParamStore,
}

impl Probe {
    fn new(cfg: &ProbeConfig, d: usize) -> Probe {
        let gn = GraphNet::new("probe.gn", d, &[cfg.hidden], cfg.hidden, cfg.hidden);
        let gru = Gru::new("probe.gru", cfg.hidden, cfg.gru_hidden, 1);
        let head = Dense::new("probe.head", cfg.gru_hidden, 1);
        let mut store = ParamStore::new();
        let mut rng = seeded(derive(cfg.seed, "probe-init", 0));
        gn.init(&mut store, &mut rng);
        gru.init(&mut store, &mut rng);
        head.init(&mut store, &mut rng);
        Probe { gn, gru, head, store }
    }

    /// Logits `[B·K, 1]` for cases sharing `K` and length.
    fn logits(&self, g: &mut Graph, batch: &[&Case]) -> Result<Var, NnError> {
        let k = batch[0].labels.len();
        let mut state = self.gru.zero_state(g, batch.len() * k);
        let mut h = state[0];
        for t in 0..batch[0].frames.len() {
            let rows: Vec<f64> = batch.iter().flat_map(|c| c.frames[t].data.iter().copied()).collect();
            let d = batch[0].frames[t].cols();
            let x = g.input(Tensor::new(&[batch.len() * k, d], rows));
            let e = self.gn.forward(g, &self.store, x, k)?;
            let e = g.relu(e);
            h = self.gru.step(g, &self.store, e, &mut state)?;
        }
        self.head.forward(g, &self.store, h)
    }
}

/// Trains a mass classifier on `train` and scores it on `test`.
fn fit_and_score(train: &[Case], test: &[Case], cfg: &ProbeConfig) -> Result<ProbeScores> {
    let d = train[0].frames[0].cols();
    let mut probe = Probe::new(cfg, d);
    let mut groups: std::collections::BTreeMap<(usize, usize), Vec<usize>> = Default::default();
    for (i, c) in train.iter().enumerate() {
        groups.entry((c.labels.len(), c.frames.len())).or_default().push(i);
    }
    let groups: Vec<Vec<usize>> = groups.into_values().collect();
    let mut rng = seeded(derive(cfg.seed, "probe-batches", 0));
    let adam = Adam::new(cfg.lr);
    for _ in 0..cfg.steps {
        let mut idx = groups[rng.random_range(0..groups.len())].clone();
        idx.shuffle(&mut rng);
        idx.truncate(cfg.batch);
        let batch: Vec<&Case> = idx.iter().map(|&i| &train[i]).collect();
        let targets: Vec<f64> = batch.iter().flat_map(|c| c.labels.iter().copied()).collect();
        let mut g = Graph::new();
        let logits = probe.logits(&mut g, &batch)?;
        let loss = g.bce_with_logits(logits, &targets)?;
        g.backward(loss)?;
        let mut grads = g.param_grads();
        clip_grad_norm(&mut grads, 10.0);
        adam.step(&mut probe.store, &grads)?;
    }
    let (mut hit, mut n, mut chit, mut cn) = (0usize, 0usize, 0usize, 0usize);
    for c in test {
        let mut g = Graph::new();
        let logits = probe.logits(&mut g, &[c])?;
        for ((&z, &y), &cons) in g.value(logits).data.iter().zip(&c.labels).zip(&c.consequential) {
            let ok = f64::from(z > 0.0) == y;
            hit += usize::from(ok);
            n += 1;
            if cons {
                chit += usize::from(ok);
                cn += 1;
            }
        }
    }
    Ok(ProbeScores {
        accuracy: hit as f64 / n.max(1) as f64,
        corrected: if cn == 0 { f64::NAN } else { chit as f64 / cn as f64 },
        n_test: test.len(),
    })
}

/// Mass-classification accuracy of a graph-network + GRU probe trained on
/// ground-truth observed trajectories of one dataset.
pub fn probe_accuracy(exps: &[Experiment], cfg: &ProbeConfig) -> Result<ProbeScores> {
    if exps.len() < 4 {
        return Err(Error::Invalid("probe needs at least 4 experiments".into()));
    }
    if cfg.stride == 0 || cfg.steps == 0 || !(0.0..1.0).contains(&cfg.train_fraction) {
        return Err(Error::config("probe", "stride and steps must be positive, train_fraction in (0,1)"));
    }
    let mut cases: Vec<Case> = exps.iter().map(|e| case(e, cfg.stride)).collect();
    if cfg.shuffle_labels {
        let mut rng = seeded(derive(cfg.seed, "probe-shuffle", 0));
        for c in &mut cases {
            c.labels.iter_mut().for_each(|y| *y = f64::from(rng.random_bool(0.5)));
        }
    }
    let n_train = ((exps.len() as f64 * cfg.train_fraction) as usize).clamp(1, exps.len() - 1);
    let (train, test) = cases.split_at(n_train);
    fit_and_score(train, test, cfg)
}

/// Probe accuracy on a dataset built with the identifiability filter and
/// on one built without it.
pub fn confounder_probe(filtered: &[Experiment], unfiltered: &[Experiment], cfg: &ProbeConfig) -> Result<ProbeComparison> {
    Ok(ProbeComparison {
        filtered: probe_accuracy(filtered, cfg)?,
        unfiltered: probe_accuracy(unfiltered, cfg)?,
    })
}
