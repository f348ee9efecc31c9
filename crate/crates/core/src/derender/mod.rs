//! Keypoint + coefficient autoencoder.
//!
//! A shared convolutional backbone maps a frame to dense features `F`,
//! `K` keypoints (spatial soft-argmax) and `C + 1` sigmoid coefficients per
//! keypoint. The decoder renders Gaussian maps at the keypoints, deforms them
//! with the fixed filter bank scaled by the coefficients, stacks them with
//! the *source* features and upsamples back to a frame.

mod states;

use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::bench::Experiment;
use crate::error::{Error, Result};
use crate::nn::{Adam, Calibration, Conv, ConvBlock, Graph, Mlp, NnError, ParamStore, Tensor, Var};
use crate::render::{rasterize_discs, FilterBank, Frame, Keypoint, KeypointState, StateDecoder, KERNEL_SIZE};
use crate::rng::{derive, seeded, Rng};
use crate::sim::Trajectory;

pub use states::{read_state_csv, StateSequence};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DerenderConfig {
    /// Keypoint count.
    pub k: usize,
    /// Shape coefficients per keypoint (a gate is added on top).
    pub c: usize,
    /// When false keypoints render as plain Gaussians with no coefficients.
    pub coefficients: bool,
    pub gamma1: f64,
    pub gamma2: f64,
    pub lr: f64,
    pub frame_size: usize,
    /// Backbone width; the deepest blocks use twice this.
    pub width: usize,
    /// Channels of the dense feature map `F`.
    pub feature_channels: usize,
    /// Gaussian width in normalized image coordinates.
    pub sigma: f64,
    pub batch: usize,
    pub steps: usize,
    pub seed: u64,
}

impl Default for DerenderConfig {
    fn default() -> Self {
        DerenderConfig {
            k: 3,
            c: 5,
            coefficients: true,
            gamma1: 1e4,
            gamma2: 0.1,
            lr: 1e-3,
            frame_size: 64,
            width: 16,
            feature_channels: 16,
            sigma: 0.1,
            batch: 8,
            steps: 2000,
            seed: 0,
        }
    }
}

impl DerenderConfig {
    pub fn feature_size(&self) -> usize {
        self.frame_size / 4
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::config("k", "must be at least 1"));
        }
        if self.c == 0 {
            return Err(Error::config("c", "must be at least 1"));
        }
        if !(self.gamma1 > 0.0) || !(self.gamma2 > 0.0) {
            return Err(Error::config("gamma", "loss weights must be positive"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::config("lr", "must be positive"));
        }
        if self.frame_size < 16 || self.frame_size % 4 != 0 {
            return Err(Error::config("frame_size", "must be a multiple of 4, at least 16"));
        }
        if self.width == 0 || self.feature_channels == 0 || self.batch == 0 {
            return Err(Error::config("width", "sizes must be positive"));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::config("sigma", "must be positive"));
        }
        Ok(())
    }

    /// Channels of the decoder's keypoint maps.
    fn map_channels(&self) -> usize {
        if self.coefficients {
            self.k * self.c
        } else {
            self.k
        }
    }
}

/// Output of the encoder for one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedImage {
    /// `[feature_channels, s, s]` with `s = frame_size / 4`.
    pub features: Tensor,
    pub state: KeypointState,
}

struct Layers {
    backbone: [ConvBlock; 4],
    f_head: Conv,
    k_head: Conv,
    c_head: Mlp,
    refine: [ConvBlock; 3],
    out: Conv,
}

impl Layers {
    fn new(cfg: &DerenderConfig) -> Layers {
        let (w, fs) = (cfg.width, cfg.feature_size());
        Layers {
            backbone: [
                ConvBlock::new("enc.0", 3, w, 3, 1),
                ConvBlock::new("enc.1", w, w, 3, 2),
                ConvBlock::new("enc.2", w, 2 * w, 3, 2),
                ConvBlock::new("enc.3", 2 * w, 2 * w, 3, 1),
            ],
            f_head: Conv::new("feat", 2 * w, cfg.feature_channels, 1, 1),
            k_head: Conv::new("kp", 2 * w, cfg.k, 1, 1),
            c_head: Mlp::new("coef", &[2 * w * fs * fs, 64, cfg.k * (cfg.c + 1)]),
            refine: [
                ConvBlock::new("dec.0", cfg.feature_channels + cfg.map_channels(), 2 * w, 3, 1),
                ConvBlock::new("dec.1", 2 * w, w, 3, 1),
                ConvBlock::new("dec.2", w, w, 3, 1),
            ],
            out: Conv::new("dec.out", w, 3, 3, 1),
        }
    }

    fn init(&self, store: &mut ParamStore, rng: &mut Rng, coefficients: bool) {
        for b in &self.backbone {
            b.init(store, rng);
        }
        self.f_head.init(store, rng);
        self.k_head.init(store, rng);
        if coefficients {
            self.c_head.init(store, rng);
        }
        for b in &self.refine {
            b.init(store, rng);
        }
        self.out.init(store, rng);
    }
}

/// Graph handles of an encoded batch.
struct EncodedVars {
    features: Var,
    keypoints: Var,
    /// `[B, K·(C+1)]` in (0,1); absent without coefficients.
    coeffs: Option<Var>,
}

pub struct Derender {
    pub cfg: DerenderConfig,
    pub store: ParamStore,
    layers: Layers,
    bank: Tensor,
    calibrated: bool,
}

impl std::fmt::Debug for Derender {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Derender")
            .field("cfg", &self.cfg)
            .field("params", &self.store.n_values(true))
            .field("calibrated", &self.calibrated)
            .finish()
    }
}

fn bank_tensor(c: usize) -> Tensor {
    let bank = FilterBank::new(c);
    Tensor::new(
        &[c, 1, KERNEL_SIZE, KERNEL_SIZE],
        bank.kernels.iter().flat_map(|k| k.iter().copied()).collect(),
    )
}

fn frames_tensor(frames: &[&Frame]) -> Tensor {
    let (h, w) = (frames[0].height, frames[0].width);
    Tensor::new(
        &[frames.len(), 3, h, w],
        frames.iter().flat_map(|f| f.to_chw()).collect(),
    )
}

/// Rows `[start, end)` of the leading axis of a 4D variable.
fn batch_slice(g: &mut Graph, x: Var, start: usize, end: usize) -> Result<Var, NnError> {
    let s = g.shape(x).to_vec();
    let inner: usize = s[1..].iter().product();
    let flat = g.reshape(x, &[s[0], inner])?;
    let idx: Vec<usize> = (start..end).collect();
    let rows = g.gather_rows(flat, &idx)?;
    g.reshape(rows, &[end - start, s[1], s[2], s[3]])
}

impl Derender {
    pub fn new(cfg: DerenderConfig) -> Result<Derender> {
        cfg.validate()?;
        let layers = Layers::new(&cfg);
        let mut store = ParamStore::new();
        layers.init(&mut store, &mut seeded(derive(cfg.seed, "derender-init", 0)), cfg.coefficients);
        Ok(Derender {
            bank: bank_tensor(cfg.c),
            cfg,
            store,
            layers,
            calibrated: false,
        })
    }

    pub fn is_calibrated(&self) -> bool {
        self.calibrated
    }

    fn check_frame(&self, f: &Frame) -> Result<()> {
        if f.height != self.cfg.frame_size || f.width != self.cfg.frame_size {
            return Err(Error::Invalid(format!(
                "frame is {}×{}, model expects {}",
                f.height, f.width, self.cfg.frame_size
            )));
        }
        Ok(())
    }

    fn encode_vars(
        &self,
        g: &mut Graph,
        x: Var,
        mut calib: Option<&mut Calibration>,
    ) -> Result<EncodedVars, NnError> {
        let mut h = x;
        for b in &self.layers.backbone {
            h = b.forward(g, &self.store, h, calib.as_deref_mut())?;
        }
        let features = self.layers.f_head.forward(g, &self.store, h)?;
        let heat = self.layers.k_head.forward(g, &self.store, h)?;
        let keypoints = g.spatial_softargmax(heat)?;
        let coeffs = if self.cfg.coefficients {
            let s = g.shape(h).to_vec();
            let flat = g.reshape(h, &[s[0], s[1] * s[2] * s[3]])?;
            let logits = self.layers.c_head.forward(g, &self.store, flat)?;
            Some(g.sigmoid(logits))
        } else {
            None
        };
        Ok(EncodedVars {
            features,
            keypoints,
            coeffs,
        })
    }

    /// Keypoint maps for the decoder, `[B, map_channels, s, s]`.
    fn keypoint_maps(&self, g: &mut Graph, kp: Var, coeffs: Option<Var>) -> Result<Var, NnError> {
        let (fs, k, c) = (self.cfg.feature_size(), self.cfg.k, self.cfg.c);
        let b = g.shape(kp)[0];
        let maps = g.gaussian_maps(kp, self.cfg.sigma, fs, fs)?;
        let Some(coeffs) = coeffs else {
            return Ok(maps);
        };
        let single = g.reshape(maps, &[b * k, 1, fs, fs])?;
        let bank = g.input(self.bank.clone());
        let pad = KERNEL_SIZE / 2;
        let deformed = g.conv2d(single, bank, None, 1, pad)?;
        let deformed = g.reshape(deformed, &[b, k * c, fs, fs])?;
        let per_kp = g.reshape(coeffs, &[b * k, c + 1])?;
        let shape = g.slice_cols(per_kp, 0, c)?;
        let gate = g.slice_cols(per_kp, c, c + 1)?;
        let gates = g.concat_cols(&vec![gate; c])?;
        let scale = g.mul(shape, gates)?;
        let scale = g.reshape(scale, &[b, k * c])?;
        g.scale_channels(deformed, scale)
    }

    fn decode_vars(
        &self,
        g: &mut Graph,
        features: Var,
        kp: Var,
        coeffs: Option<Var>,
        mut calib: Option<&mut Calibration>,
    ) -> Result<Var, NnError> {
        let maps = self.keypoint_maps(g, kp, coeffs)?;
        let mut h = g.concat_channels(&[features, maps])?;
        h = self.layers.refine[0].forward(g, &self.store, h, calib.as_deref_mut())?;
        h = g.upsample2x(h)?;
        h = self.layers.refine[1].forward(g, &self.store, h, calib.as_deref_mut())?;
        h = g.upsample2x(h)?;
        h = self.layers.refine[2].forward(g, &self.store, h, calib.as_deref_mut())?;
        let out = self.layers.out.forward(g, &self.store, h)?;
        let t = g.tanh(out);
        let half = g.scale(t, 0.5);
        Ok(g.add_scalar(half, 0.5))
    }

    /// `γ₁·MSE(x, x̂) + γ₂·(MSE(∂x, ∂x̂) along both axes)`.
    fn loss(&self, g: &mut Graph, pred: Var, target: Var) -> Result<Var, NnError> {
        let mse = g.mse(pred, target)?;
        let l1 = g.scale(mse, self.cfg.gamma1);
        let mut total = l1;
        for axis in [2, 3] {
            let dp = g.spatial_diff(pred, axis)?;
            let dt = g.spatial_diff(target, axis)?;
            let m = g.mse(dp, dt)?;
            let m = g.scale(m, self.cfg.gamma2);
            total = g.add(total, m)?;
        }
        Ok(total)
    }

    /// Reconstruction of `targets` from the features of `sources`. With
    /// `calib`, normalization statistics are measured on this batch.
    fn pair_forward(
        &self,
        g: &mut Graph,
        sources: &[&Frame],
        targets: &[&Frame],
        calib: Option<&mut Calibration>,
    ) -> Result<(Var, Var), NnError> {
        let b = sources.len();
        let mut all: Vec<&Frame> = sources.to_vec();
        all.extend_from_slice(targets);
        let x = g.input(frames_tensor(&all));
        let mut calib = calib;
        let enc = self.encode_vars(g, x, calib.as_deref_mut())?;
        let feats = batch_slice(g, enc.features, 0, b)?;
        let kp_flat = g.reshape(enc.keypoints, &[2 * b, 2 * self.cfg.k])?;
        let idx: Vec<usize> = (b..2 * b).collect();
        let kp = g.gather_rows(kp_flat, &idx)?;
        let kp = g.reshape(kp, &[b, self.cfg.k, 2])?;
        let coeffs = match enc.coeffs {
            Some(cf) => Some(g.gather_rows(cf, &idx)?),
            None => None,
        };
        let pred = self.decode_vars(g, feats, kp, coeffs, calib)?;
        let target = batch_slice(g, x, b, 2 * b)?;
        Ok((pred, target))
    }

    /// Freezes normalization statistics measured on one batch of pairs.
    pub fn calibrate(&mut self, sources: &[&Frame], targets: &[&Frame]) -> Result<()> {
        let mut g = Graph::new();
        let mut cal = Calibration::default();
        self.pair_forward(&mut g, sources, targets, Some(&mut cal))?;
        cal.apply(&mut self.store)?;
        self.calibrated = true;
        Ok(())
    }

    /// Loss on a batch and its parameter gradients.
    pub fn loss_and_grads(
        &self,
        sources: &[&Frame],
        targets: &[&Frame],
    ) -> Result<(f64, Vec<(String, Vec<f64>)>)> {
        let mut g = Graph::new();
        let (pred, target) = self.pair_forward(&mut g, sources, targets, None)?;
        let loss = self.loss(&mut g, pred, target)?;
        g.backward(loss)?;
        Ok((g.value(loss).item(), g.param_grads()))
    }

    pub fn encode(&self, frame: &Frame) -> Result<EncodedImage> {
        Ok(self.encode_batch(&[frame])?.remove(0))
    }

    pub fn encode_batch(&self, frames: &[&Frame]) -> Result<Vec<EncodedImage>> {
        if frames.is_empty() {
            return Ok(Vec::new());
        }
        for f in frames {
            self.check_frame(f)?;
        }
        let mut g = Graph::new();
        let x = g.input(frames_tensor(frames));
        let enc = self.encode_vars(&mut g, x, None)?;
        g.check_finite()?;
        let (k, c) = (self.cfg.k, self.cfg.c);
        let feats = g.value(enc.features);
        let per = feats.len() / frames.len();
        let fshape = feats.shape[1..].to_vec();
        let kps = &g.value(enc.keypoints).data;
        Ok((0..frames.len())
            .map(|b| EncodedImage {
                features: Tensor::new(&fshape, feats.data[b * per..(b + 1) * per].to_vec()),
                state: KeypointState {
                    keypoints: (0..k)
                        .map(|j| Keypoint {
                            x: kps[(b * k + j) * 2],
                            y: kps[(b * k + j) * 2 + 1],
                            coeffs: match enc.coeffs {
                                Some(cf) => {
                                    let row = g.value(cf).row(b);
                                    row[j * (c + 1)..(j + 1) * (c + 1)].to_vec()
                                }
                                None => vec![1.0; c + 1],
                            },
                        })
                        .collect(),
                },
            })
            .collect())
    }

    /// Renders `state` on top of source features. Reads nothing from the
    /// target frame.
    pub fn decode(&self, features: &Tensor, state: &KeypointState) -> Result<Frame> {
        let (k, c, fs) = (self.cfg.k, self.cfg.c, self.cfg.feature_size());
        if features.shape != [self.cfg.feature_channels, fs, fs] {
            return Err(Error::Invalid(format!("feature shape {:?}", features.shape)));
        }
        if state.k() != k || state.keypoints.iter().any(|kp| kp.coeffs.len() != c + 1) {
            return Err(Error::Invalid(format!(
                "state needs {k} keypoints with {} coefficients",
                c + 1
            )));
        }
        let mut g = Graph::new();
        let mut fshape = vec![1];
        fshape.extend_from_slice(&features.shape);
        let f = g.input(Tensor::new(&fshape, features.data.clone()));
        let kp = g.input(Tensor::new(
            &[1, k, 2],
            state.keypoints.iter().flat_map(|p| [p.x, p.y]).collect(),
        ));
        let coeffs = self.cfg.coefficients.then(|| {
            g.input(Tensor::new(
                &[1, k * (c + 1)],
                state.keypoints.iter().flat_map(|p| p.coeffs.iter().copied()).collect(),
            ))
        });
        let out = self.decode_vars(&mut g, f, kp, coeffs, None)?;
        g.check_finite()?;
        let n = self.cfg.frame_size;
        Ok(Frame::from_chw(n, n, &g.value(out).data))
    }

    /// Per-frame states with implicit-Euler derivatives.
    pub fn encode_trajectory(&self, frames: &[Frame]) -> Result<StateSequence> {
        let mut states = Vec::with_capacity(frames.len());
        for chunk in frames.chunks(16) {
            let refs: Vec<&Frame> = chunk.iter().collect();
            states.extend(self.encode_batch(&refs)?.into_iter().map(|e| e.state));
        }
        Ok(StateSequence::from_states(&states))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
        let cfg_path = dir.join("derender.json");
        let body = serde_json::to_vec_pretty(&self.cfg).expect("config serializes");
        std::fs::write(&cfg_path, body).map_err(Error::io(&cfg_path))?;
        self.store.save(&dir.join("derender.ckpt"))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Derender> {
        let cfg_path = dir.join("derender.json");
        let text = std::fs::read_to_string(&cfg_path).map_err(Error::io(&cfg_path))?;
        let cfg: DerenderConfig = serde_json::from_str(&text).map_err(Error::json(&cfg_path))?;
        let mut model = Derender::new(cfg)?;
        let store = ParamStore::load(&dir.join("derender.ckpt"))?;
        for name in model.store.names().map(String::from).collect::<Vec<_>>() {
            let t = store
                .get(&name)
                .ok_or_else(|| Error::Format {
                    path: dir.join("derender.ckpt"),
                    reason: format!("missing parameter `{name}`"),
                })?
                .clone();
            model.store.set(&name, t)?;
        }
        model.store = store;
        model.calibrated = true;
        Ok(model)
    }
}

/// Decoder bound to one set of source features.
pub struct BoundDecoder<'a> {
    pub model: &'a Derender,
    pub features: Tensor,
}

impl StateDecoder for BoundDecoder<'_> {
    fn is_trained(&self) -> bool {
        self.model.store.step > 0
    }

    fn decode_state(&self, state: &KeypointState) -> Result<Frame> {
        self.model.decode(&self.features, state)
    }
}

/// Training pair: source from the head of the sequence, target from its
/// last `n_frames / 6` frames.
pub fn sample_pair(n_frames: usize, rng: &mut Rng) -> Result<(usize, usize)> {
    let tail = n_frames / 6;
    if tail == 0 || n_frames < 2 * tail {
        return Err(Error::Invalid(format!("{n_frames} frames are too few for pair sampling")));
    }
    let split = n_frames - tail;
    Ok((rng.random_range(0..split), rng.random_range(split..n_frames)))
}

pub const EVAL_PAIR: (usize, usize) = (25, 50);

pub fn eval_pair(n_frames: usize) -> Result<(usize, usize)> {
    if n_frames <= EVAL_PAIR.1 {
        return Err(Error::Invalid(format!(
            "evaluation pair needs at least {} frames, got {n_frames}",
            EVAL_PAIR.1 + 1
        )));
    }
    Ok(EVAL_PAIR)
}

pub fn render_frame(exp: &Experiment, traj: &Trajectory, counterfactual: bool, t: usize, size: usize) -> Frame {
    let scene = if counterfactual { &exp.scene_c } else { &exp.scene_a };
    let discs: Vec<([f64; 2], f64, u8)> = scene
        .bodies
        .iter()
        .zip(&traj.states[t])
        .map(|(b, s)| ([s.position.x, s.position.y], b.radius, b.visual_id))
        .collect();
    rasterize_discs(&discs, size)
}

/// Rendered `(source, target)` frames of the CD leg.
pub fn pair_frames(exp: &Experiment, pair: (usize, usize), size: usize) -> (Frame, Frame) {
    (
        render_frame(exp, &exp.traj_cd, true, pair.0, size),
        render_frame(exp, &exp.traj_cd, true, pair.1, size),
    )
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub losses: Vec<f64>,
}

/// Steps over which the loss may exceed 10× its initial value before
/// training is aborted.
pub const DIVERGENCE_PATIENCE: usize = 100;

/// Tracks the divergence rule: loss above 10× the first loss for
/// [`DIVERGENCE_PATIENCE`] consecutive steps.
#[derive(Clone, Debug, Default)]
pub struct DivergenceGuard {
    initial: Option<f64>,
    run: usize,
}

impl DivergenceGuard {
    pub fn observe(&mut self, step: usize, loss: f64) -> Result<()> {
        if !loss.is_finite() {
            return Err(Error::Diverged(format!("non-finite loss at step {step}")));
        }
        let initial = *self.initial.get_or_insert(loss);
        if loss > 10.0 * initial {
            self.run += 1;
            if self.run >= DIVERGENCE_PATIENCE {
                return Err(Error::Diverged(format!(
                    "loss {loss:.4e} above 10× initial {initial:.4e} for {} steps (step {step})",
                    self.run
                )));
            }
        } else {
            self.run = 0;
        }
        Ok(())
    }
}

/// Trains on pairs drawn from the CD sequences of `train`. Continues from
/// `model` when given.
pub fn train_derender(
    train: &[Experiment],
    cfg: &DerenderConfig,
    model: Option<Derender>,
) -> Result<(Derender, TrainReport)> {
    if train.is_empty() {
        return Err(Error::Invalid("empty training set".into()));
    }
    let mut model = match model {
        Some(m) => m,
        None => Derender::new(cfg.clone())?,
    };
    let size = cfg.frame_size;
    let mut rng = seeded(derive(cfg.seed, "derender-pairs", model.store.step));
    let batch = |rng: &mut Rng| -> Result<(Vec<Frame>, Vec<Frame>)> {
        let mut src = Vec::with_capacity(cfg.batch);
        let mut tgt = Vec::with_capacity(cfg.batch);
        for _ in 0..cfg.batch {
            let e = &train[rng.random_range(0..train.len())];
            let pair = sample_pair(e.traj_cd.n_frames(), rng)?;
            let (s, t) = pair_frames(e, pair, size);
            src.push(s);
            tgt.push(t);
        }
        Ok((src, tgt))
    };
    if !model.calibrated {
        let (s, t) = batch(&mut rng)?;
        model.calibrate(&s.iter().collect::<Vec<_>>(), &t.iter().collect::<Vec<_>>())?;
    }
    let adam = Adam::new(cfg.lr);
    let mut guard = DivergenceGuard::default();
    let mut report = TrainReport::default();
    for step in 0..cfg.steps {
        let (s, t) = batch(&mut rng)?;
        let (loss, grads) =
            model.loss_and_grads(&s.iter().collect::<Vec<_>>(), &t.iter().collect::<Vec<_>>())?;
        guard.observe(step, loss)?;
        adam.step(&mut model.store, &grads)?;
        report.losses.push(loss);
    }
    Ok((model, report))
}

/// Mean PSNR of reconstructing the evaluation target from the source
/// features, and of copying the source frame, over `test`.
pub fn heldout_psnr(model: &Derender, test: &[Experiment]) -> Result<(f64, f64)> {
    use rayon::prelude::*;
    if test.is_empty() {
        return Err(Error::Invalid("empty evaluation set".into()));
    }
    let size = model.cfg.frame_size;
    let rows = test
        .par_iter()
        .map(|e| -> Result<(f64, f64)> {
            let pair = eval_pair(e.traj_cd.n_frames())?;
            let (src, tgt) = pair_frames(e, pair, size);
            let enc = model.encode_batch(&[&src, &tgt])?;
            let recon = model.decode(&enc[0].features, &enc[1].state)?;
            Ok((
                crate::eval::frame_psnr(&recon, &tgt)?,
                crate::eval::frame_psnr(&src, &tgt)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = rows.len() as f64;
    Ok((
        rows.iter().map(|r| r.0).sum::<f64>() / n,
        rows.iter().map(|r| r.1).sum::<f64>() / n,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::Frame;

    fn tiny() -> DerenderConfig {
        DerenderConfig {
            frame_size: 16,
            width: 4,
            feature_channels: 4,
            k: 2,
            c: 3,
            batch: 2,
            ..DerenderConfig::default()
        }
    }

    fn disc_frame(x: f64, y: f64, size: usize) -> Frame {
        rasterize_discs(&[([x, y], 0.15, 0)], size)
    }

    #[test]
    fn encode_is_deterministic_and_bounded() {
        let m = Derender::new(tiny()).unwrap();
        let f = disc_frame(0.3, 0.6, 16);
        let a = m.encode(&f).unwrap();
        let b = m.encode(&f).unwrap();
        assert_eq!(a, b);
        for kp in &a.state.keypoints {
            assert!((0.0..=1.0).contains(&kp.x) && (0.0..=1.0).contains(&kp.y));
            assert!(kp.coeffs.iter().all(|c| (0.0..=1.0).contains(c)));
        }
        assert_eq!(a.features.shape, vec![4, 4, 4]);
        assert!(m.encode(&disc_frame(0.3, 0.6, 32)).is_err());
    }

    #[test]
    fn decode_ignores_everything_but_features_and_state() {
        let m = Derender::new(tiny()).unwrap();
        let src = m.encode(&disc_frame(0.3, 0.6, 16)).unwrap();
        let tgt = m.encode(&disc_frame(0.7, 0.2, 16)).unwrap();
        let a = m.decode(&src.features, &tgt.state).unwrap();
        let b = m.decode(&src.features, &tgt.state).unwrap();
        assert_eq!(a, b);
        assert!(a.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn loss_is_pure_mse_without_gradient_weight() {
        let m = Derender::new(tiny()).unwrap();
        let mut g = Graph::new();
        let p = g.input(Tensor::new(&[1, 1, 2, 2], vec![0.0, 1.0, 0.5, 0.25]));
        let t = g.input(Tensor::new(&[1, 1, 2, 2], vec![0.5, 0.5, 0.5, 0.5]));
        let mut m0 = m;
        m0.cfg.gamma2 = 0.0;
        let l = m0.loss(&mut g, p, t).unwrap();
        let mse = (0.25 + 0.25 + 0.0 + 0.0625) / 4.0;
        assert_eq!(g.value(l).item(), 1e4 * mse);
        let c = g.input(Tensor::filled(&[1, 1, 3, 3], 0.4));
        let d = g.spatial_diff(c, 3).unwrap();
        assert!(g.value(d).data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_gate_silences_a_keypoint() {
        let m = Derender::new(tiny()).unwrap();
        let mut g = Graph::new();
        let kp = g.input(Tensor::new(&[1, 2, 2], vec![0.3, 0.3, 0.7, 0.7]));
        let co = g.input(Tensor::new(&[1, 8], vec![0.5, 0.5, 0.5, 0.0, 0.9, 0.2, 0.4, 1.0]));
        let maps = m.keypoint_maps(&mut g, kp, Some(co)).unwrap();
        let v = g.value(maps);
        let plane = 16;
        assert!(v.data[..3 * plane].iter().all(|&x| x == 0.0));
        assert!(v.data[3 * plane..].iter().any(|&x| x > 0.0));
    }

    #[test]
    fn pair_sampling_rules() {
        let mut rng = seeded(3);
        for _ in 0..200 {
            let (s, t) = sample_pair(150, &mut rng).unwrap();
            assert!(s <= 124 && (125..150).contains(&t));
        }
        let a = sample_pair(75, &mut seeded(9)).unwrap();
        assert_eq!(a, sample_pair(75, &mut seeded(9)).unwrap());
        assert_eq!(eval_pair(75).unwrap(), (25, 50));
        assert!(eval_pair(50).is_err());
        assert!(sample_pair(5, &mut rng).is_err());
    }

    #[test]
    fn divergence_guard() {
        let mut g = DivergenceGuard::default();
        g.observe(0, 1.0).unwrap();
        for s in 1..DIVERGENCE_PATIENCE {
            g.observe(s, 11.0).unwrap();
        }
        assert!(g.observe(DIVERGENCE_PATIENCE, 11.0).is_err());
        assert!(DivergenceGuard::default().observe(0, f64::NAN).is_err());
    }

    #[test]
    fn training_step_reduces_loss_and_checkpoints() {
        let cfg = DerenderConfig {
            steps: 0,
            ..tiny()
        };
        let mut m = Derender::new(cfg).unwrap();
        let srcs = [disc_frame(0.3, 0.3, 16), disc_frame(0.6, 0.4, 16)];
        let tgts = [disc_frame(0.5, 0.3, 16), disc_frame(0.6, 0.7, 16)];
        let s: Vec<&Frame> = srcs.iter().collect();
        let t: Vec<&Frame> = tgts.iter().collect();
        m.calibrate(&s, &t).unwrap();
        let adam = Adam::new(1e-2);
        let (first, _) = m.loss_and_grads(&s, &t).unwrap();
        for _ in 0..30 {
            let (_, grads) = m.loss_and_grads(&s, &t).unwrap();
            adam.step(&mut m.store, &grads).unwrap();
        }
        let (last, _) = m.loss_and_grads(&s, &t).unwrap();
        assert!(last < first, "{last} !< {first}");

        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path()).unwrap();
        let back = Derender::load(dir.path()).unwrap();
        let a = m.encode(&srcs[0]).unwrap();
        assert_eq!(a, back.encode(&srcs[0]).unwrap());
    }
}
