use crate::error::{Error, Result};
use crate::render::Frame;

use super::{position_mse, psnr};

/// Keypoint positions of `[T][K][row]` state frames.
pub fn positions(frames: &[Vec<Vec<f64>>]) -> Vec<Vec<[f64; 2]>> {
    frames
        .iter()
        .map(|f| f.iter().map(|r| [r[0], r[1]]).collect())
        .collect()
}

/// Slots present (gate ≥ ½) in the first ground-truth frame; `gate` is the
/// column of the gate coefficient.
pub fn present_slots(gt: &[Vec<Vec<f64>>], gate: usize) -> Vec<bool> {
    gt.first()
        .map(|f| f.iter().map(|r| r[gate] >= 0.5).collect())
        .unwrap_or_default()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CopyScores {
    /// Emits the observed outcome as the prediction.
    pub copy_b: f64,
    /// Repeats the counterfactual initial state.
    pub copy_c: f64,
}

/// Keypoint-space position MSE of both copy baselines against `gt`.
pub fn copy_baselines_keypoint(
    observed: &[Vec<Vec<f64>>],
    start: &[Vec<f64>],
    gt: &[Vec<Vec<f64>>],
    gate: usize,
) -> Result<CopyScores> {
    if observed.len() < gt.len() {
        return Err(Error::Invalid("observed leg shorter than the counterfactual one".into()));
    }
    let present = present_slots(gt, gate);
    let truth = positions(gt);
    let b = positions(&observed[..gt.len()]);
    let c = positions(&vec![start.to_vec(); gt.len()]);
    Ok(CopyScores {
        copy_b: position_mse(&b, &truth, &present)?,
        copy_c: position_mse(&c, &truth, &present)?,
    })
}

/// Pixel-space PSNR of both copy baselines.
pub fn copy_baselines_pixel(observed: &[Frame], start: &Frame, gt: &[Frame]) -> Result<CopyScores> {
    if observed.len() < gt.len() {
        return Err(Error::Invalid("observed leg shorter than the counterfactual one".into()));
    }
    Ok(CopyScores {
        copy_b: psnr(&observed[..gt.len()], gt)?,
        copy_c: psnr(&vec![start.clone(); gt.len()], gt)?,
    })
}
