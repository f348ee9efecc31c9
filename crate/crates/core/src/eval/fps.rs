use serde::{Deserialize, Serialize};

use crate::bench::Experiment;
use crate::cody::{train_cody, CodyConfig, Sample};
use crate::derender::StateSequence;
use crate::error::{Error, Result};
use crate::render::{Keypoint, KeypointState};
use crate::sim::Trajectory;

use super::position_mse;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FpsRow {
    pub fps: f64,
    /// Final-frame position MSE of the trained predictor.
    pub mse: f64,
    /// Final-frame position MSE of holding the last observed position.
    pub constant_mse: f64,
    pub n_train: usize,
    pub n_test: usize,
}

fn states(traj: &Trajectory) -> StateSequence {
    let frames: Vec<KeypointState> = traj
        .states
        .iter()
        .map(|f| KeypointState {
            keypoints: f
                .iter()
                .map(|s| Keypoint {
                    x: s.position.x,
                    y: s.position.y,
                    coeffs: vec![0.5, 1.0],
                })
                .collect(),
        })
        .collect();
    StateSequence::from_states(&frames)
}

/// Windows of one second of history followed by one second to predict.
fn windows(traj: &Trajectory, fps: f64) -> Result<Vec<Sample>> {
    let t = traj.resample(fps)?;
    let seq = states(&t);
    let w = fps.round() as usize;
    let mut out = Vec::new();
    let mut offset = 0;
    while offset + 2 * w < seq.len() {
        let last = offset + w;
        out.push(Sample {
            observed: seq.frames[offset..=last].to_vec(),
            start: seq.frames[last].clone(),
            target: seq.frames[last..=last + w].to_vec(),
        });
        offset += w;
    }
    Ok(out)
}

fn final_mse(pred: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<f64> {
    let p: Vec<[f64; 2]> = pred.iter().map(|r| [r[0], r[1]]).collect();
    let t: Vec<[f64; 2]> = truth.iter().map(|r| [r[0], r[1]]).collect();
    let present = vec![true; t.len()];
    position_mse(&[p], &[t], &present)
}

/// Trains a recurrent graph-network predictor per frame rate on the
/// observed legs of `train` and reports final-frame error on `test`.
pub fn fps_study(train: &[Experiment], test: &[Experiment], grid: &[f64], cfg: &CodyConfig) -> Result<Vec<FpsRow>> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::Invalid("fps study needs training and test experiments".into()));
    }
    if cfg.c != 1 || cfg.state_encoder {
        return Err(Error::config("fps", "the predictor runs on raw states with one coefficient"));
    }
    grid.iter()
        .map(|&fps| {
            let collect = |exps: &[Experiment]| -> Result<Vec<Sample>> {
                let mut v = Vec::new();
                for e in exps {
                    v.extend(windows(&e.traj_ab, fps)?);
                }
                Ok(v)
            };
            let tr = collect(train)?;
            let te = collect(test)?;
            if tr.is_empty() || te.is_empty() {
                return Err(Error::Invalid(format!("trajectories too short for 2 s windows at {fps} fps")));
            }
            let (model, _) = train_cody(&tr, cfg, None)?;
            let steps = te[0].target.len() - 1;
            let (mut mse, mut constant) = (0.0, 0.0);
            for chunk in te.chunks(32) {
                let refs: Vec<&Sample> = chunk.iter().collect();
                for (s, p) in chunk.iter().zip(model.predict_batch(&refs, steps)?) {
                    mse += final_mse(&p[steps], &s.target[steps])?;
                    constant += final_mse(&s.start, &s.target[steps])?;
                }
            }
            Ok(FpsRow {
                fps,
                mse: mse / te.len() as f64,
                constant_mse: constant / te.len() as f64,
                n_train: tr.len(),
                n_test: te.len(),
            })
        })
        .collect()
}

pub fn fps_csv(rows: &[FpsRow]) -> String {
    let mut out = String::from("fps,mse,constant_mse,n_train,n_test\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{},{}\n", r.fps, r.mse, r.constant_mse, r.n_train, r.n_test));
    }
    out
}
