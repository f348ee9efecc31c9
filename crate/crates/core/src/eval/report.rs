use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bench::{DoKind, Experiment};
use crate::cody::{keypoint_inputs, observe, oracle_sequence, predict_cd, Cody, Leg, Renderer};
use crate::derender::{render_frame, Derender};
use crate::error::{Error, Result};
use crate::render::Frame;

use super::{
    copy_baselines_keypoint, copy_baselines_pixel, l_psnr, mot_metrics, position_mse, positions, present_slots,
    psnr, DoopRecord, MATCH_RADIUS,
};

/// Foreground threshold for L-PSNR masks.
pub const MASK_THRESH: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentMetrics {
    pub id: String,
    pub do_kind: DoKind,
    pub do_magnitude: f64,
    pub psnr: f64,
    /// `None` when the ground truth has no foreground.
    pub l_psnr: Option<f64>,
    pub kp_mse: f64,
    pub mota: f64,
    pub motp: f64,
    pub copy_b_psnr: f64,
    pub copy_c_psnr: f64,
    pub copy_b_mse: f64,
    pub copy_c_mse: f64,
}

/// Means over experiments; NaN and missing entries are skipped.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n: usize,
    pub psnr: f64,
    pub l_psnr: f64,
    pub kp_mse: f64,
    pub mota: f64,
    pub motp: f64,
    pub copy_b_psnr: f64,
    pub copy_c_psnr: f64,
    pub copy_b_mse: f64,
    pub copy_c_mse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config_hash: String,
    pub seed: u64,
    pub rows: Vec<ExperimentMetrics>,
    pub aggregate: Aggregate,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for v in values.filter(|v| !v.is_nan()) {
        s += v;
        n += 1;
    }
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Scores one counterfactual prediction. Keypoints come from `encoder`
/// when given (and the decoder renders), otherwise from ground truth with
/// rasterized frames of `size` pixels.
pub fn evaluate_experiment(exp: &Experiment, encoder: Option<&Derender>, model: &Cody, size: usize) -> Result<ExperimentMetrics> {
    let c = model.cfg.c;
    let size = encoder.map_or(size, |e| e.cfg.frame_size);
    let obs = observe(exp);
    let steps = exp.traj_cd.n_frames() - 1;
    let renderer = match encoder {
        Some(enc) => Renderer::Decoder(enc),
        None => Renderer::Raster { size },
    };
    let pred = predict_cd(&obs, encoder, model, renderer, steps)?;
    let gt_frames: Vec<Frame> = (0..=steps).map(|t| render_frame(exp, &exp.traj_cd, true, t, size)).collect();

    let (observed, start) = keypoint_inputs(&obs, encoder, c)?;
    let (gt_states, present) = match encoder {
        None => {
            let s = oracle_sequence(exp, Leg::Counterfactual, c).frames;
            let p = present_slots(&s, 2 + c);
            (s, p)
        }
        Some(enc) => {
            let s = enc.encode_trajectory(&gt_frames)?.frames;
            let p = vec![true; s[0].len()];
            (s, p)
        }
    };
    let kp_mse = position_mse(&positions(&pred.states.frames), &positions(&gt_states), &present)?;
    let copy_kp = copy_baselines_keypoint(&observed.frames, &start, &gt_states, 2 + c)?;
    let copy_px = copy_baselines_pixel(&obs.observed_frames(size), &obs.start_frame(size), &gt_frames)?;

    let pred_tracks: Vec<Vec<Option<[f64; 2]>>> = pred
        .states
        .frames
        .iter()
        .map(|f| f.iter().map(|r| Some([r[0], r[1]])).collect())
        .collect();
    let gt_tracks: Vec<Vec<Option<[f64; 2]>>> = exp
        .traj_cd
        .states
        .iter()
        .map(|f| f.iter().map(|s| Some([s.position.x, s.position.y])).collect())
        .collect();
    let mot = mot_metrics(&pred_tracks, &gt_tracks, MATCH_RADIUS)?;

    let background = Frame::background(size);
    let l = match l_psnr(&pred.frames, &gt_frames, &background, MASK_THRESH) {
        Ok(v) => Some(v),
        Err(Error::Invalid(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(ExperimentMetrics {
        id: exp.id.clone(),
        do_kind: exp.do_op.kind,
        do_magnitude: exp.do_op.delta.norm(),
        psnr: psnr(&pred.frames, &gt_frames)?,
        l_psnr: l,
        kp_mse,
        mota: mot.mota,
        motp: mot.motp,
        copy_b_psnr: copy_px.copy_b,
        copy_c_psnr: copy_px.copy_c,
        copy_b_mse: copy_kp.copy_b,
        copy_c_mse: copy_kp.copy_c,
    })
}

impl MetricsReport {
    pub fn new(config_hash: &str, seed: u64, rows: Vec<ExperimentMetrics>) -> MetricsReport {
        let aggregate = Aggregate {
            n: rows.len(),
            psnr: mean(rows.iter().map(|r| r.psnr)),
            l_psnr: mean(rows.iter().filter_map(|r| r.l_psnr)),
            kp_mse: mean(rows.iter().map(|r| r.kp_mse)),
            mota: mean(rows.iter().map(|r| r.mota)),
            motp: mean(rows.iter().map(|r| r.motp)),
            copy_b_psnr: mean(rows.iter().map(|r| r.copy_b_psnr)),
            copy_c_psnr: mean(rows.iter().map(|r| r.copy_c_psnr)),
            copy_b_mse: mean(rows.iter().map(|r| r.copy_b_mse)),
            copy_c_mse: mean(rows.iter().map(|r| r.copy_c_mse)),
        };
        MetricsReport {
            config_hash: config_hash.to_string(),
            seed,
            rows,
            aggregate,
        }
    }

    pub fn doop_records(&self) -> Vec<DoopRecord> {
        self.rows
            .iter()
            .map(|r| DoopRecord {
                kind: r.do_kind,
                magnitude: r.do_magnitude,
                psnr: r.psnr,
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "id,do_kind,do_magnitude,psnr,l_psnr,kp_mse,mota,motp,copy_b_psnr,copy_c_psnr,copy_b_mse,copy_c_mse,config_hash,seed\n",
        );
        for r in &self.rows {
            let l = r.l_psnr.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.id,
                r.do_kind.as_str(),
                r.do_magnitude,
                r.psnr,
                l,
                r.kp_mse,
                r.mota,
                r.motp,
                r.copy_b_psnr,
                r.copy_c_psnr,
                r.copy_b_mse,
                r.copy_c_mse,
                self.config_hash,
                self.seed
            ));
        }
        out
    }

    /// Writes `report.csv` and `summary.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
        let csv = dir.join("report.csv");
        std::fs::write(&csv, self.to_csv()).map_err(Error::io(&csv))?;
        let summary = serde_json::json!({
            "config_hash": self.config_hash,
            "seed": self.seed,
            "aggregate": self.aggregate,
        });
        let path = dir.join("summary.json");
        let text = serde_json::to_string_pretty(&summary).map_err(Error::json(&path))?;
        std::fs::write(&path, text + "\n").map_err(Error::io(&path))
    }
}

/// Scores every experiment in parallel, in input order.
pub fn evaluate(
    exps: &[Experiment],
    encoder: Option<&Derender>,
    model: &Cody,
    size: usize,
    config_hash: &str,
    seed: u64,
) -> Result<MetricsReport> {
    let rows = exps
        .par_iter()
        .map(|e| evaluate_experiment(e, encoder, model, size).map_err(|err| Error::Invalid(format!("{}: {err}", e.id))))
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport::new(config_hash, seed, rows))
}
