//! Counterfactual dynamics over keypoint states.
//!
//! A graph network + GRU reads the observed sequence and keeps its last
//! hidden vector per keypoint as the confounder estimate `u_k`. The initial
//! counterfactual state is lifted by `E` into a larger latent space, rolled
//! out autoregressively as `σ(t+1) = σ(t) + W·v(t) + b` where `v` comes from
//! a graph network over `[σ_k, u_k]` followed by a GRU, and mapped back by
//! `Δ` (GRU over time, then a graph network).

mod oracle;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::derender::DivergenceGuard;
use crate::error::{Error, Result};
use crate::nn::{clip_grad_norm, Adam, Dense, Graph, GraphNet, Gru, NnError, ParamStore, Tensor, Var};
use crate::rng::{derive, seeded};

pub use oracle::{
    appearance_coefficients, encoded_sample, keypoint_inputs, observe, oracle_sample, oracle_sequence, predict_cd, Leg, Observation, Prediction,
    Renderer,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodyConfig {
    /// Shape coefficients per keypoint; rows have `2(c + 3)` values.
    pub c: usize,
    pub d_u: usize,
    pub d_sigma: usize,
    /// Width of graph-network hidden layers and messages.
    pub hidden: usize,
    pub gn_layers: usize,
    pub gru_layers: usize,
    pub gru_hidden: usize,
    pub gamma3: f64,
    pub lr: f64,
    /// Without it `E` and `Δ` are identities and dynamics run on raw states.
    pub state_encoder: bool,
    pub batch: usize,
    pub steps: usize,
    pub max_grad_norm: f64,
    /// Grows the supervised horizon linearly from 2 frames to the full
    /// sequence over training.
    pub curriculum: bool,
    pub seed: u64,
}

impl Default for CodyConfig {
    fn default() -> Self {
        CodyConfig {
            c: 5,
            d_u: 32,
            d_sigma: 64,
            hidden: 64,
            gn_layers: 2,
            gru_layers: 2,
            gru_hidden: 64,
            gamma3: 1.0,
            lr: 1e-4,
            state_encoder: true,
            batch: 16,
            steps: 1000,
            max_grad_norm: 10.0,
            curriculum: false,
            seed: 0,
        }
    }
}

impl CodyConfig {
    pub fn state_dim(&self) -> usize {
        2 * (self.c + 3)
    }

    fn latent_dim(&self) -> usize {
        if self.state_encoder {
            self.d_sigma
        } else {
            self.state_dim()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [self.c, self.d_u, self.d_sigma, self.hidden, self.gn_layers, self.gru_layers, self.gru_hidden, self.batch];
        if dims.contains(&0) {
            return Err(Error::config("cody", "dimensions, layer counts and batch must be positive"));
        }
        if !(self.gamma3 >= 0.0) {
            return Err(Error::config("gamma3", "must be non-negative"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::config("lr", "must be positive"));
        }
        Ok(())
    }
}

/// One training or evaluation case: the observed sequence, the
/// counterfactual initial state and (for training) the target sequence.
/// Rows are `[K][state_dim]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub observed: Vec<Vec<Vec<f64>>>,
    pub start: Vec<Vec<f64>>,
    /// `target[0]` is the state at the initial frame.
    pub target: Vec<Vec<Vec<f64>>>,
}

impl Sample {
    pub fn k(&self) -> usize {
        self.start.len()
    }
}

struct Layers {
    cf_gn: GraphNet,
    cf_gru: Gru,
    enc: GraphNet,
    dyn_gn: GraphNet,
    dyn_gru: Gru,
    head: Dense,
    dec_gru: Gru,
    dec_gn: GraphNet,
}

impl Layers {
    fn new(cfg: &CodyConfig) -> Layers {
        let (d, h, ds) = (cfg.state_dim(), cfg.hidden, cfg.latent_dim());
        let hidden = vec![h; cfg.gn_layers - 1];
        Layers {
            cf_gn: GraphNet::new("cf.gn", d, &hidden, h, h),
            cf_gru: Gru::new("cf.gru", h, cfg.d_u, cfg.gru_layers),
            enc: GraphNet::new("enc", d, &hidden, h, ds),
            dyn_gn: GraphNet::new("dyn.gn", ds + cfg.d_u, &hidden, h, h),
            dyn_gru: Gru::new("dyn.gru", h, cfg.gru_hidden, cfg.gru_layers),
            head: Dense::new("dyn.head", cfg.gru_hidden, ds),
            dec_gru: Gru::new("dec.gru", ds, h, 1),
            dec_gn: GraphNet::new("dec.gn", h, &hidden, h, d),
        }
    }
}

pub struct Cody {
    pub cfg: CodyConfig,
    pub store: ParamStore,
    layers: Layers,
}

impl std::fmt::Debug for Cody {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Cody")
            .field("cfg", &self.cfg)
            .field("params", &self.store.n_values(true))
            .finish()
    }
}

/// Stacks `[B][K][D]` into a `[B·K, D]` tensor.
fn stack(rows: &[&Vec<Vec<f64>>]) -> Tensor {
    let k = rows[0].len();
    let d = rows[0][0].len();
    Tensor::new(
        &[rows.len() * k, d],
        rows.iter().flat_map(|r| r.iter().flat_map(|v| v.iter().copied())).collect(),
    )
}

fn unstack(t: &Tensor, b: usize) -> Vec<Vec<Vec<f64>>> {
    let k = t.rows() / b;
    (0..b)
        .map(|i| (0..k).map(|j| t.row(i * k + j).to_vec()).collect())
        .collect()
}

impl Cody {
    pub fn new(cfg: CodyConfig) -> Result<Cody> {
        cfg.validate()?;
        let layers = Layers::new(&cfg);
        let mut store = ParamStore::new();
        let mut rng = seeded(derive(cfg.seed, "cody-init", 0));
        layers.cf_gn.init(&mut store, &mut rng);
        layers.cf_gru.init(&mut store, &mut rng);
        layers.dyn_gn.init(&mut store, &mut rng);
        layers.dyn_gru.init(&mut store, &mut rng);
        layers.head.init_zero(&mut store);
        if cfg.state_encoder {
            layers.enc.init(&mut store, &mut rng);
            layers.dec_gru.init(&mut store, &mut rng);
            layers.dec_gn.init(&mut store, &mut rng);
        }
        Ok(Cody { cfg, store, layers })
    }

    fn check(&self, s: &Sample) -> Result<()> {
        let d = self.cfg.state_dim();
        let k = s.k();
        let ok_frame = |f: &Vec<Vec<f64>>| f.len() == k && f.iter().all(|r| r.len() == d);
        if k == 0 || s.observed.is_empty() {
            return Err(Error::Invalid("sample needs keypoints and an observed sequence".into()));
        }
        if !ok_frame(&s.start) || !s.observed.iter().all(ok_frame) || !s.target.iter().all(ok_frame) {
            return Err(Error::Invalid(format!("sample rows must be {k} keypoints of width {d}")));
        }
        Ok(())
    }

    /// Confounder estimate `[B·K, d_u]`.
    fn estimate_vars(&self, g: &mut Graph, observed: &[Var], k: usize) -> Result<Var, NnError> {
        let rows = g.shape(observed[0])[0];
        let mut state = self.layers.cf_gru.zero_state(g, rows);
        let mut out = state[state.len() - 1];
        for &x in observed {
            let e = self.layers.cf_gn.forward(g, &self.store, x, k)?;
            let e = g.relu(e);
            out = self.layers.cf_gru.step(g, &self.store, e, &mut state)?;
        }
        Ok(out)
    }

    fn encode_vars(&self, g: &mut Graph, s: Var, k: usize) -> Result<Var, NnError> {
        if self.cfg.state_encoder {
            self.layers.enc.forward(g, &self.store, s, k)
        } else {
            Ok(s)
        }
    }

    fn decode_vars(&self, g: &mut Graph, sigmas: &[Var], k: usize) -> Result<Vec<Var>, NnError> {
        if !self.cfg.state_encoder {
            return Ok(sigmas.to_vec());
        }
        let rows = g.shape(sigmas[0])[0];
        let mut state = self.layers.dec_gru.zero_state(g, rows);
        sigmas
            .iter()
            .map(|&s| {
                let h = self.layers.dec_gru.step(g, &self.store, s, &mut state)?;
                self.layers.dec_gn.forward(g, &self.store, h, k)
            })
            .collect()
    }

    /// `steps + 1` latent states starting at `sigma0`.
    fn rollout_vars(&self, g: &mut Graph, sigma0: Var, u: Var, k: usize, steps: usize) -> Result<Vec<Var>, NnError> {
        let rows = g.shape(sigma0)[0];
        let mut state = self.layers.dyn_gru.zero_state(g, rows);
        let mut sigmas = vec![sigma0];
        for _ in 0..steps {
            let cur = sigmas[sigmas.len() - 1];
            let x = g.concat_cols(&[cur, u])?;
            let m = self.layers.dyn_gn.forward(g, &self.store, x, k)?;
            let m = g.relu(m);
            let v = self.layers.dyn_gru.step(g, &self.store, m, &mut state)?;
            let delta = self.layers.head.forward(g, &self.store, v)?;
            sigmas.push(g.add(cur, delta)?);
        }
        Ok(sigmas)
    }

    /// Predicted state sequences (length `steps + 1`) for a batch of
    /// samples sharing `K` and the observed length.
    fn forward(&self, g: &mut Graph, batch: &[&Sample], steps: usize) -> Result<Vec<Var>, NnError> {
        let k = batch[0].k();
        let t_obs = batch[0].observed.len();
        let observed: Vec<Var> = (0..t_obs)
            .map(|t| g.input(stack(&batch.iter().map(|s| &s.observed[t]).collect::<Vec<_>>())))
            .collect();
        let u = self.estimate_vars(g, &observed, k)?;
        let start = g.input(stack(&batch.iter().map(|s| &s.start).collect::<Vec<_>>()));
        let sigma0 = self.encode_vars(g, start, k)?;
        let sigmas = self.rollout_vars(g, sigma0, u, k, steps)?;
        self.decode_vars(g, &sigmas, k)
    }

    fn batch_loss(&self, g: &mut Graph, batch: &[&Sample], horizon: usize) -> Result<Var, NnError> {
        let k = batch[0].k();
        let preds = self.forward(g, batch, horizon - 1)?;
        let mut terms = Vec::with_capacity(2 * horizon);
        let truth: Vec<Var> = (0..horizon)
            .map(|t| g.input(stack(&batch.iter().map(|s| &s.target[t]).collect::<Vec<_>>())))
            .collect();
        for (&p, &y) in preds.iter().zip(&truth) {
            terms.push(g.mse(p, y)?);
        }
        if self.cfg.state_encoder && self.cfg.gamma3 > 0.0 {
            let sig: Vec<Var> = truth
                .iter()
                .map(|&y| self.encode_vars(g, y, k))
                .collect::<Result<_, _>>()?;
            let back = self.decode_vars(g, &sig, k)?;
            for (&b, &y) in back.iter().zip(&truth) {
                let m = g.mse(b, y)?;
                terms.push(g.scale(m, self.cfg.gamma3));
            }
        }
        let mut total = terms[0];
        for &t in &terms[1..] {
            total = g.add(total, t)?;
        }
        Ok(g.scale(total, 1.0 / horizon as f64))
    }

    /// Loss and gradients on a batch; `horizon` frames of the target are
    /// supervised.
    pub fn loss_and_grads(&self, batch: &[&Sample], horizon: usize) -> Result<(f64, Vec<(String, Vec<f64>)>)> {
        for s in batch {
            self.check(s)?;
            if s.target.len() < horizon || horizon < 2 {
                return Err(Error::Invalid(format!("horizon {horizon} exceeds target length")));
            }
        }
        let mut g = Graph::new();
        let loss = self.batch_loss(&mut g, batch, horizon)?;
        g.backward(loss)?;
        Ok((g.value(loss).item(), g.param_grads()))
    }

    pub fn loss(&self, batch: &[&Sample], horizon: usize) -> Result<f64> {
        for s in batch {
            self.check(s)?;
        }
        let mut g = Graph::new();
        let loss = self.batch_loss(&mut g, batch, horizon)?;
        g.check_finite()?;
        Ok(g.value(loss).item())
    }

    /// Per-keypoint confounder estimates `[K][d_u]`.
    pub fn estimate_confounders(&self, observed: &[Vec<Vec<f64>>]) -> Result<Vec<Vec<f64>>> {
        if observed.is_empty() {
            return Err(Error::Invalid("empty observed sequence".into()));
        }
        let k = observed[0].len();
        let mut g = Graph::new();
        let xs: Vec<Var> = observed.iter().map(|f| g.input(stack(&[f]))).collect();
        let u = self.estimate_vars(&mut g, &xs, k)?;
        g.check_finite()?;
        Ok(unstack(g.value(u), 1).remove(0))
    }

    pub fn encode_state(&self, s: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let d = self.cfg.state_dim();
        if s.is_empty() || s.iter().any(|r| r.len() != d) {
            return Err(Error::Invalid(format!("state rows must have width {d}")));
        }
        let mut g = Graph::new();
        let x = g.input(stack(&[&s.to_vec()]));
        let sig = self.encode_vars(&mut g, x, s.len())?;
        Ok(unstack(g.value(sig), 1).remove(0))
    }

    pub fn decode_states(&self, sigmas: &[Vec<Vec<f64>>]) -> Result<Vec<Vec<Vec<f64>>>> {
        let ds = self.cfg.latent_dim();
        if sigmas.is_empty() || sigmas.iter().flatten().any(|r| r.len() != ds) {
            return Err(Error::Invalid(format!("latent rows must have width {ds}")));
        }
        let k = sigmas[0].len();
        let mut g = Graph::new();
        let vars: Vec<Var> = sigmas.iter().map(|s| g.input(stack(&[s]))).collect();
        let out = self.decode_vars(&mut g, &vars, k)?;
        Ok(out.iter().map(|&v| unstack(g.value(v), 1).remove(0)).collect())
    }

    /// Latent rollout of `steps` displacements from `sigma0`.
    pub fn rollout(&self, sigma0: &[Vec<f64>], u: &[Vec<f64>], steps: usize) -> Result<Vec<Vec<Vec<f64>>>> {
        if steps == 0 {
            return Err(Error::Invalid("rollout needs at least one step".into()));
        }
        if sigma0.len() != u.len() {
            return Err(Error::Invalid("latent and confounder keypoint counts differ".into()));
        }
        let k = sigma0.len();
        let mut g = Graph::new();
        let s0 = g.input(stack(&[&sigma0.to_vec()]));
        let uv = g.input(stack(&[&u.to_vec()]));
        let sig = self.rollout_vars(&mut g, s0, uv, k, steps)?;
        if let Err(NnError::NonFinite { op }) = g.check_finite() {
            let bad = sig.iter().position(|&v| !g.value(v).is_finite()).unwrap_or(0);
            return Err(Error::Diverged(format!("rollout step {bad}: non-finite value in `{op}`")));
        }
        Ok(sig.iter().map(|&v| unstack(g.value(v), 1).remove(0)).collect())
    }

    /// Predicted state sequence of `steps + 1` frames.
    pub fn predict(&self, observed: &[Vec<Vec<f64>>], start: &[Vec<f64>], steps: usize) -> Result<Vec<Vec<Vec<f64>>>> {
        let s = Sample {
            observed: observed.to_vec(),
            start: start.to_vec(),
            target: Vec::new(),
        };
        Ok(self.predict_batch(&[&s], steps)?.remove(0))
    }

    /// Predictions for samples that share `K` and observed length.
    pub fn predict_batch(&self, batch: &[&Sample], steps: usize) -> Result<Vec<Vec<Vec<Vec<f64>>>>> {
        for s in batch {
            self.check(s)?;
        }
        let mut g = Graph::new();
        let out = self.forward(&mut g, batch, steps)?;
        g.check_finite()?;
        let per_t: Vec<Vec<Vec<Vec<f64>>>> = out.iter().map(|&v| unstack(g.value(v), batch.len())).collect();
        Ok((0..batch.len())
            .map(|b| per_t.iter().map(|f| f[b].clone()).collect())
            .collect())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
        let path = dir.join("cody.json");
        let body = serde_json::to_vec_pretty(&self.cfg).expect("config serializes");
        std::fs::write(&path, body).map_err(Error::io(&path))?;
        self.store.save(&dir.join("cody.ckpt"))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Cody> {
        let path = dir.join("cody.json");
        let text = std::fs::read_to_string(&path).map_err(Error::io(&path))?;
        let cfg: CodyConfig = serde_json::from_str(&text).map_err(Error::json(&path))?;
        let mut model = Cody::new(cfg)?;
        let store = ParamStore::load(&dir.join("cody.ckpt"))?;
        if let Some(missing) = model.store.names().find(|n| !store.contains(n)) {
            return Err(Error::Format {
                path: dir.join("cody.ckpt"),
                reason: format!("missing parameter `{missing}`"),
            });
        }
        model.store = store;
        Ok(model)
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct CodyReport {
    pub losses: Vec<f64>,
}

/// Samples grouped so each batch shares `K` and sequence lengths.
fn shape_key(s: &Sample) -> (usize, usize, usize) {
    (s.k(), s.observed.len(), s.target.len())
}

/// Trains on `samples` (all observed and target sequences precomputed).
/// Continues from `model` when given.
pub fn train_cody(samples: &[Sample], cfg: &CodyConfig, model: Option<Cody>) -> Result<(Cody, CodyReport)> {
    if samples.is_empty() {
        return Err(Error::Invalid("empty training set".into()));
    }
    let mut model = match model {
        Some(m) => m,
        None => Cody::new(cfg.clone())?,
    };
    let mut groups: std::collections::BTreeMap<(usize, usize, usize), Vec<usize>> = Default::default();
    for (i, s) in samples.iter().enumerate() {
        model.check(s)?;
        if s.target.len() < 2 {
            return Err(Error::Invalid("targets need at least two frames".into()));
        }
        groups.entry(shape_key(s)).or_default().push(i);
    }
    let groups: Vec<Vec<usize>> = groups.into_values().collect();
    let mut rng = seeded(derive(cfg.seed, "cody-batches", model.store.step));
    let adam = Adam::new(cfg.lr);
    let mut guard = DivergenceGuard::default();
    let mut report = CodyReport::default();
    for step in 0..cfg.steps {
        let group = &groups[rng.random_range(0..groups.len())];
        let mut idx = group.clone();
        idx.shuffle(&mut rng);
        idx.truncate(cfg.batch);
        let batch: Vec<&Sample> = idx.iter().map(|&i| &samples[i]).collect();
        let full = batch[0].target.len();
        let horizon = if cfg.curriculum {
            (2 + (full - 2) * (step + 1) / cfg.steps).min(full)
        } else {
            full
        };
        let (loss, mut grads) = model.loss_and_grads(&batch, horizon)?;
        guard.observe(step, loss)?;
        clip_grad_norm(&mut grads, cfg.max_grad_norm);
        adam.step(&mut model.store, &grads)?;
        report.losses.push(loss);
    }
    Ok((model, report))
}

/// Which parts of the model an ablation variant keeps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variant {
    pub state_encoder: bool,
    pub coefficients: bool,
    /// Keypoints per object.
    pub keypoints_per_object: usize,
}

impl Variant {
    pub fn label(&self) -> String {
        format!(
            "{}-{}-k{}n",
            if self.state_encoder { "enc" } else { "noenc" },
            if self.coefficients { "coef" } else { "nocoef" },
            self.keypoints_per_object
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub kp_mse: f64,
    pub psnr: Option<f64>,
}

/// Comparison table for the requested variants; `run` trains and scores one
/// variant.
pub fn ablate<F>(variants: &[Variant], mut run: F) -> Result<Vec<AblationRow>>
where
    F: FnMut(&Variant) -> Result<(f64, Option<f64>)>,
{
    variants
        .iter()
        .map(|v| {
            let (kp_mse, psnr) = run(v)?;
            Ok(AblationRow {
                variant: v.label(),
                kp_mse,
                psnr,
            })
        })
        .collect()
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("variant,kp_mse,psnr\n");
    for r in rows {
        let psnr = r.psnr.map_or(String::new(), |p| format!("{p}"));
        out.push_str(&format!("{},{},{}\n", r.variant, r.kp_mse, psnr));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn small() -> CodyConfig {
        CodyConfig {
            c: 1,
            d_u: 4,
            d_sigma: 6,
            hidden: 5,
            gn_layers: 2,
            gru_layers: 1,
            gru_hidden: 5,
            batch: 2,
            ..CodyConfig::default()
        }
    }

    fn random_seq(t: usize, k: usize, d: usize, rng: &mut crate::rng::Rng) -> Vec<Vec<Vec<f64>>> {
        (0..t)
            .map(|_| (0..k).map(|_| (0..d).map(|_| rng.random_range(0.0..1.0)).collect()).collect())
            .collect()
    }

    fn sample(seed: u64) -> Sample {
        let mut rng = seeded(seed);
        let target = random_seq(4, 3, 8, &mut rng);
        Sample {
            observed: random_seq(5, 3, 8, &mut rng),
            start: target[0].clone(),
            target,
        }
    }

    fn permute(rows: &[Vec<f64>], p: &[usize]) -> Vec<Vec<f64>> {
        p.iter().map(|&i| rows[i].clone()).collect()
    }

    #[test]
    fn confounders_are_equivariant_and_deterministic() {
        let m = Cody::new(small()).unwrap();
        let s = sample(1);
        let u = m.estimate_confounders(&s.observed).unwrap();
        assert_eq!(u, m.estimate_confounders(&s.observed).unwrap());
        let p = [2, 0, 1];
        let obs: Vec<_> = s.observed.iter().map(|f| permute(f, &p)).collect();
        let up = m.estimate_confounders(&obs).unwrap();
        for (a, b) in permute(&u, &p).iter().flatten().zip(up.iter().flatten()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(m.estimate_confounders(&[]).is_err());
    }

    #[test]
    fn encoder_is_equivariant_and_decoder_keeps_length() {
        let m = Cody::new(small()).unwrap();
        let s = sample(2);
        let e = m.encode_state(&s.start).unwrap();
        let p = [1, 2, 0];
        let ep = m.encode_state(&permute(&s.start, &p)).unwrap();
        for (a, b) in permute(&e, &p).iter().flatten().zip(ep.iter().flatten()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(m.decode_states(&[e]).unwrap().len(), 1);
        assert!(m.encode_state(&[vec![0.0; 3]]).is_err());
    }

    #[test]
    fn zero_head_keeps_latent_constant() {
        let m = Cody::new(small()).unwrap();
        let s = sample(3);
        let u = m.estimate_confounders(&s.observed).unwrap();
        let sig = m.encode_state(&s.start).unwrap();
        let roll = m.rollout(&sig, &u, 1).unwrap();
        assert_eq!(roll.len(), 2);
        let roll = m.rollout(&sig, &u, 5).unwrap();
        assert!(roll.iter().all(|r| *r == sig));
        assert!(m.rollout(&sig, &u, 0).is_err());
    }

    #[test]
    fn predictions_are_equivariant() {
        let mut m = Cody::new(small()).unwrap();
        let mut rng = seeded(9);
        let shape = m.store.get("dyn.head.w").unwrap().shape.clone();
        m.store.insert_uniform("dyn.head.w", &shape, 0.5, &mut rng);
        let s = sample(4);
        let pred = m.predict(&s.observed, &s.start, 3).unwrap();
        assert_eq!(pred.len(), 4);
        let p = [2, 1, 0];
        let obs: Vec<_> = s.observed.iter().map(|f| permute(f, &p)).collect();
        let pp = m.predict(&obs, &permute(&s.start, &p), 3).unwrap();
        for (a, b) in pred.iter().zip(&pp) {
            for (x, y) in permute(a, &p).iter().flatten().zip(b.iter().flatten()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gamma3_zero_is_pure_prediction() {
        let s = sample(5);
        let cfg = CodyConfig { gamma3: 0.0, ..small() };
        let m = Cody::new(cfg).unwrap();
        let pred = m.predict(&s.observed, &s.start, 3).unwrap();
        let mut mse = 0.0;
        for (p, y) in pred.iter().zip(&s.target) {
            let (mut se, mut n) = (0.0, 0.0);
            for (a, b) in p.iter().flatten().zip(y.iter().flatten()) {
                se += (a - b) * (a - b);
                n += 1.0;
            }
            mse += se / n;
        }
        let l = m.loss(&[&s], 4).unwrap();
        assert!((l - mse / 4.0).abs() < 1e-12);
        let with = Cody::new(small()).unwrap().loss(&[&s], 4).unwrap();
        assert!(with > l);
    }

    #[test]
    fn identity_variant_without_encoder() {
        let cfg = CodyConfig { state_encoder: false, ..small() };
        let m = Cody::new(cfg).unwrap();
        let s = sample(6);
        assert_eq!(m.encode_state(&s.start).unwrap(), s.start);
        let pred = m.predict(&s.observed, &s.start, 2).unwrap();
        assert!(pred.iter().all(|f| *f == s.start));
    }

    #[test]
    fn training_is_deterministic_and_learns() {
        let samples: Vec<Sample> = (0..4).map(sample).collect();
        let cfg = CodyConfig { steps: 40, lr: 1e-2, ..small() };
        let (a, ra) = train_cody(&samples, &cfg, None).unwrap();
        let (b, rb) = train_cody(&samples, &cfg, None).unwrap();
        assert_eq!(ra.losses, rb.losses);
        assert_eq!(a.store.to_bytes(), b.store.to_bytes());
        assert!(ra.losses.last().unwrap() < &ra.losses[0]);
        let dir = tempfile::tempdir().unwrap();
        a.save(dir.path()).unwrap();
        let back = Cody::load(dir.path()).unwrap();
        assert_eq!(back.store.to_bytes(), a.store.to_bytes());
    }

    #[test]
    fn ablation_table_has_a_row_per_variant() {
        let vs = [
            Variant { state_encoder: true, coefficients: true, keypoints_per_object: 1 },
            Variant { state_encoder: false, coefficients: true, keypoints_per_object: 2 },
        ];
        let rows = ablate(&vs, |v| Ok((if v.state_encoder { 1.0 } else { 2.0 }, None))).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].variant, "noenc-coef-k2n");
        assert!(ablation_csv(&rows).lines().count() == 3);
    }
}
