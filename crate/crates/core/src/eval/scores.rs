use serde::{Deserialize, Serialize};

use crate::cody::{Cody, Sample};
use crate::error::{Error, Result};

use super::{copy_baselines_keypoint, position_mse, positions, present_slots};

/// Mean keypoint-space position MSE over a held-out set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeypointScores {
    pub model: f64,
    pub copy_b: f64,
    pub copy_c: f64,
    pub n: usize,
}

/// Rolls `model` out over each sample's full target horizon.
pub fn keypoint_scores(model: &Cody, samples: &[Sample]) -> Result<KeypointScores> {
    if samples.is_empty() {
        return Err(Error::Invalid("no samples to score".into()));
    }
    let gate = 2 + model.cfg.c;
    let (mut m, mut b, mut c) = (0.0, 0.0, 0.0);
    for s in samples {
        let steps = s.target.len() - 1;
        let pred = model.predict(&s.observed, &s.start, steps)?;
        let present = present_slots(&s.target, gate);
        m += position_mse(&positions(&pred), &positions(&s.target), &present)?;
        let copy = copy_baselines_keypoint(&s.observed, &s.start, &s.target, gate)?;
        b += copy.copy_b;
        c += copy.copy_c;
    }
    let n = samples.len() as f64;
    Ok(KeypointScores { model: m / n, copy_b: b / n, copy_c: c / n, n: samples.len() })
}
