use crate::bench::Experiment;
use crate::derender::{Derender, StateSequence};
use crate::error::{Error, Result};
use crate::render::{colour, rasterize_discs, Frame, Keypoint, KeypointState};
use crate::sim::{Body, Scene, Trajectory};

use super::{Cody, Sample};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Leg {
    Observed,
    Counterfactual,
}

/// Fixed appearance coefficients of a body: its colour channels, then its
/// radius (scaled by 10), then 0.5 for any remaining slots.
pub fn appearance_coefficients(body: &Body, c: usize) -> Vec<f64> {
    let rgb = colour(body.visual_id);
    (0..c)
        .map(|i| match i {
            0..=2 => rgb[i],
            3 => (body.radius * 10.0).min(1.0),
            _ => 0.5,
        })
        .collect()
}

fn keypoint(body: &Body, x: f64, y: f64, c: usize, gate: f64) -> Keypoint {
    let mut coeffs = appearance_coefficients(body, c);
    coeffs.push(gate);
    Keypoint { x, y, coeffs }
}

/// Everything a model may see of an experiment: the observed leg and the
/// counterfactual initial scene. The counterfactual outcome is not part of
/// it.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub scene_a: Scene,
    pub traj_ab: Trajectory,
    pub scene_c: Scene,
    /// For each body of A, its index in C (`None` if removed).
    pub slot_map: Vec<Option<usize>>,
}

pub fn observe(exp: &Experiment) -> Observation {
    Observation {
        scene_a: exp.scene_a.clone(),
        traj_ab: exp.traj_ab.clone(),
        scene_c: exp.scene_c.clone(),
        slot_map: exp.slot_map(),
    }
}

impl Observation {
    /// Ground-truth keypoint states of the observed leg, one slot per body.
    pub fn observed_states(&self, c: usize) -> StateSequence {
        let states: Vec<KeypointState> = self
            .traj_ab
            .states
            .iter()
            .map(|frame| KeypointState {
                keypoints: self
                    .scene_a
                    .bodies
                    .iter()
                    .zip(frame)
                    .map(|(b, s)| keypoint(b, s.position.x, s.position.y, c, 1.0))
                    .collect(),
            })
            .collect();
        StateSequence::from_states(&states)
    }

    /// Ground-truth state of the counterfactual initial frame with a zero
    /// derivative. Removed bodies keep their slot, static, with gate 0.
    pub fn start_state(&self, c: usize) -> Vec<Vec<f64>> {
        let state = KeypointState {
            keypoints: self
                .scene_a
                .bodies
                .iter()
                .zip(&self.slot_map)
                .map(|(a, slot)| match slot {
                    Some(j) => {
                        let b = &self.scene_c.bodies[*j];
                        keypoint(b, b.position.x, b.position.y, c, 1.0)
                    }
                    None => keypoint(a, a.position.x, a.position.y, c, 0.0),
                })
                .collect(),
        };
        StateSequence::from_states(&[state]).frames.remove(0)
    }

    pub fn observed_frames(&self, size: usize) -> Vec<Frame> {
        self.traj_ab
            .states
            .iter()
            .map(|frame| {
                let discs: Vec<_> = self
                    .scene_a
                    .bodies
                    .iter()
                    .zip(frame)
                    .map(|(b, s)| ([s.position.x, s.position.y], b.radius, b.visual_id))
                    .collect();
                rasterize_discs(&discs, size)
            })
            .collect()
    }

    pub fn start_frame(&self, size: usize) -> Frame {
        crate::render::rasterize(&self.scene_c, size)
    }
}

/// Ground-truth keypoint states of either leg in A's slot order.
pub fn oracle_sequence(exp: &Experiment, leg: Leg, c: usize) -> StateSequence {
    match leg {
        Leg::Observed => observe(exp).observed_states(c),
        Leg::Counterfactual => {
            let slots = exp.slot_map();
            let states: Vec<KeypointState> = exp
                .traj_cd
                .states
                .iter()
                .map(|frame| KeypointState {
                    keypoints: exp
                        .scene_a
                        .bodies
                        .iter()
                        .zip(&slots)
                        .map(|(a, slot)| match slot {
                            Some(j) => {
                                let b = &exp.scene_c.bodies[*j];
                                let p = frame[*j].position;
                                keypoint(b, p.x, p.y, c, 1.0)
                            }
                            None => keypoint(a, a.position.x, a.position.y, c, 0.0),
                        })
                        .collect(),
                })
                .collect();
            StateSequence::from_states(&states)
        }
    }
}

/// Training or evaluation case on ground-truth keypoints.
pub fn oracle_sample(exp: &Experiment, c: usize) -> Sample {
    let obs = observe(exp);
    Sample {
        observed: obs.observed_states(c).frames,
        start: obs.start_state(c),
        target: oracle_sequence(exp, Leg::Counterfactual, c).frames,
    }
}

/// How predicted states become frames.
#[derive(Clone, Copy, Debug)]
pub enum Renderer<'a> {
    /// Rasterize discs with the appearance of A's bodies; slots whose gate
    /// is below one half are not drawn.
    Raster { size: usize },
    /// Learned decoder on the features of the counterfactual initial frame.
    Decoder(&'a Derender),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub states: StateSequence,
    pub frames: Vec<Frame>,
}

/// Observed keypoint sequence and counterfactual start state, from
/// `encoder` when given, otherwise from ground truth.
pub fn keypoint_inputs(obs: &Observation, encoder: Option<&Derender>, c: usize) -> Result<(StateSequence, Vec<Vec<f64>>)> {
    let (observed, start) = match encoder {
        None => (obs.observed_states(c), obs.start_state(c)),
        Some(enc) => {
            let size = enc.cfg.frame_size;
            let ab = enc
                .encode_trajectory(&obs.observed_frames(size))
                .map_err(Error::in_stage("encode observed"))?;
            let start = enc
                .encode(&obs.start_frame(size))
                .map_err(Error::in_stage("encode start"))?;
            let start = StateSequence::from_states(&[start.state]).frames.remove(0);
            (ab, start)
        }
    };
    if observed.c != c {
        return Err(Error::Invalid(format!(
            "keypoint source has {} coefficients, dynamics model expects {c}",
            observed.c
        )));
    }
    Ok((observed, start))
}

/// Training case on keypoints detected by a frozen encoder; targets are
/// the encodings of the rendered counterfactual frames.
pub fn encoded_sample(exp: &Experiment, enc: &Derender, c: usize) -> Result<Sample> {
    let obs = observe(exp);
    let (observed, start) = keypoint_inputs(&obs, Some(enc), c)?;
    let size = enc.cfg.frame_size;
    let frames: Vec<Frame> = (0..exp.traj_cd.n_frames())
        .map(|t| crate::derender::render_frame(exp, &exp.traj_cd, true, t, size))
        .collect();
    let target = enc.encode_trajectory(&frames).map_err(Error::in_stage("encode counterfactual"))?;
    Ok(Sample {
        observed: observed.frames,
        start,
        target: target.frames,
    })
}

/// Forecasts the counterfactual outcome from the observation alone.
/// Keypoints come from `encoder` when given, otherwise from ground truth.
pub fn predict_cd(
    obs: &Observation,
    encoder: Option<&Derender>,
    model: &Cody,
    renderer: Renderer<'_>,
    steps: usize,
) -> Result<Prediction> {
    let c = model.cfg.c;
    let (observed, start) = keypoint_inputs(obs, encoder, c)?;
    let rows = model
        .predict(&observed.frames, &start, steps)
        .map_err(Error::in_stage("rollout"))?;
    let states = StateSequence { c, frames: rows };
    let frames = match renderer {
        Renderer::Raster { size } => (0..states.len())
            .map(|t| {
                let s = states.state(t);
                let discs: Vec<_> = s
                    .keypoints
                    .iter()
                    .zip(&obs.scene_a.bodies)
                    .filter(|(kp, _)| kp.gate() >= 0.5)
                    .map(|(kp, b)| ([kp.x, kp.y], b.radius, b.visual_id))
                    .collect();
                rasterize_discs(&discs, size)
            })
            .collect(),
        Renderer::Decoder(dec) => {
            let size = dec.cfg.frame_size;
            let feats = dec
                .encode(&obs.start_frame(size))
                .map_err(Error::in_stage("encode start"))?
                .features;
            (0..states.len())
                .map(|t| {
                    let mut s = states.state(t);
                    for kp in &mut s.keypoints {
                        kp.x = kp.x.clamp(0.0, 1.0);
                        kp.y = kp.y.clamp(0.0, 1.0);
                        kp.coeffs.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
                    }
                    dec.decode(&feats, &s)
                })
                .collect::<Result<_>>()
                .map_err(Error::in_stage("decode"))?
        }
    };
    Ok(Prediction { states, frames })
}
