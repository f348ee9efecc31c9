use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use crate::bench::{
    choose_working_eps, export_dataset, generate_dataset, load_dataset, log_grid, threshold_sweep, Experiment,
};
use crate::cody::{encoded_sample, observe, oracle_sample, predict_cd, train_cody as fit_cody, Cody, Renderer, Sample};
use crate::derender::{train_derender as fit_derender, BoundDecoder, Derender};
use crate::error::{Error, Result};
use crate::eval::{doop_impact, evaluate, fps_csv, fps_study, MetricsReport};
use crate::render::{contact_sheet, latent_sweep, rasterize, write_png, SweepComponent};

use super::config::{split_of, RunConfig, Split};

/// Experiments of a dataset grouped by split, each in dataset order.
#[derive(Clone, Debug, Default)]
pub struct Splits {
    pub train: Vec<Experiment>,
    pub val: Vec<Experiment>,
    pub test: Vec<Experiment>,
}

pub fn split_dataset(exps: Vec<Experiment>) -> Splits {
    let mut s = Splits::default();
    for e in exps {
        match split_of(&e.id) {
            Split::Train => s.train.push(e),
            Split::Val => s.val.push(e),
            Split::Test => s.test.push(e),
        }
    }
    s
}

fn load_splits(cfg: &RunConfig) -> Result<Splits> {
    if !cfg.data_dir.join("manifest.json").exists() {
        return Err(Error::Prerequisite(format!(
            "dataset at {} (run `cfphys gen` first)",
            cfg.data_dir.display()
        )));
    }
    let (_, exps) = load_dataset(&cfg.data_dir)?;
    Ok(split_dataset(exps))
}

fn nonempty<'a>(exps: &'a [Experiment], what: &str) -> Result<&'a [Experiment]> {
    if exps.is_empty() {
        return Err(Error::Invalid(format!("the {what} split is empty; generate more experiments")));
    }
    Ok(exps)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    }
    std::fs::write(path, text).map_err(Error::io(path))
}

/// Appends `step,loss` rows, writing the header for a fresh file.
fn append_losses(path: &Path, first_step: u64, losses: &[f64], fresh: bool) -> Result<()> {
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(!fresh)
        .truncate(fresh)
        .open(path)
        .map_err(Error::io(path))?;
    let mut text = String::new();
    if fresh {
        text.push_str("step,loss\n");
    }
    for (i, l) in losses.iter().enumerate() {
        let _ = writeln!(text, "{},{l}", first_step + i as u64);
    }
    f.write_all(text.as_bytes()).map_err(Error::io(path))
}

pub fn gen(cfg: &RunConfig, frames: bool) -> Result<()> {
    let scenario = cfg.scenario_config();
    let (exps, report) = generate_dataset(&scenario, cfg.eps, cfg.filters, cfg.n_experiments, cfg.seed, cfg.max_attempts)?;
    let manifest = export_dataset(&exps, &cfg.data_dir, frames.then_some(cfg.derender.frame_size))?;
    cfg.echo(&cfg.data_dir)?;
    println!(
        "generated {} experiments in {} attempts (config {})",
        report.accepted,
        report.attempts,
        cfg.hash()
    );
    for (reason, n) in &report.rejections {
        println!("  rejected {reason}: {n}");
    }
    for (cell, n) in &manifest.cells {
        println!("  masses {cell}: {n}");
    }
    println!("manifest hash {}", manifest.hash);
    Ok(())
}

pub fn eps_sweep(cfg: &RunConfig) -> Result<()> {
    let grid = log_grid(cfg.sweep.lo, cfg.sweep.hi, cfg.sweep.points);
    let rows = threshold_sweep(&cfg.scenario_config(), &grid, cfg.sweep.candidates, cfg.seed)?;
    let hash = cfg.hash();
    let mut csv = String::from("eps,rejected,total,percent,config_hash\n");
    for r in &rows {
        let _ = writeln!(csv, "{},{},{},{},{hash}", r.eps, r.rejected, r.total, r.percent);
    }
    let dir = cfg.stage_dir("study");
    write_text(&dir.join("eps_sweep.csv"), &csv)?;
    cfg.echo(&dir)?;
    print!("{csv}");
    if let Some(e) = choose_working_eps(&rows) {
        println!("working eps {e}");
    }
    Ok(())
}

pub fn fps(cfg: &RunConfig) -> Result<()> {
    let splits = load_splits(cfg)?;
    let mut grid = cfg.fps_grid.clone();
    let base = splits.train.first().map_or(cfg.fps, |e| e.horizon.fps);
    if !grid.contains(&base) {
        grid.push(base);
    }
    let model = crate::cody::CodyConfig {
        c: 1,
        state_encoder: false,
        ..cfg.cody.clone()
    };
    let rows = fps_study(nonempty(&splits.train, "train")?, nonempty(&splits.test, "test")?, &grid, &model)?;
    let hash = cfg.hash();
    let csv: String = fps_csv(&rows)
        .lines()
        .enumerate()
        .map(|(i, l)| if i == 0 { format!("{l},config_hash\n") } else { format!("{l},{hash}\n") })
        .collect();
    let dir = cfg.stage_dir("study");
    write_text(&dir.join("fps.csv"), &csv)?;
    cfg.echo(&dir)?;
    print!("{csv}");
    Ok(())
}

fn load_derender(cfg: &RunConfig) -> Result<Derender> {
    let dir = cfg.stage_dir("derender");
    if !dir.join("derender.ckpt").exists() {
        return Err(Error::Prerequisite(format!(
            "derender checkpoint at {} (train it first or pass --oracle-keypoints)",
            dir.display()
        )));
    }
    Derender::load(&dir)
}

fn load_cody(cfg: &RunConfig) -> Result<Cody> {
    let dir = cfg.stage_dir("cody");
    if !dir.join("cody.ckpt").exists() {
        return Err(Error::Prerequisite(format!("cody checkpoint at {}", dir.display())));
    }
    Cody::load(&dir)
}

pub fn train_derender(cfg: &RunConfig, resume: bool) -> Result<()> {
    let splits = load_splits(cfg)?;
    let dir = cfg.stage_dir("derender");
    let start = if resume { Some(load_derender(cfg)?) } else { None };
    let (model, rep) = fit_derender(nonempty(&splits.train, "train")?, &cfg.derender, start)?;
    model.save(&dir)?;
    let first = model.store.step - rep.losses.len() as u64;
    append_losses(&dir.join("losses.csv"), first, &rep.losses, !resume)?;
    cfg.echo(&dir)?;
    println!(
        "derender: {} steps, final loss {:.4}",
        model.store.step,
        rep.losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn samples(cfg: &RunConfig, exps: &[Experiment], encoder: Option<&Derender>) -> Result<Vec<Sample>> {
    use rayon::prelude::*;
    match encoder {
        None => Ok(exps.iter().map(|e| oracle_sample(e, cfg.cody.c)).collect()),
        Some(enc) => exps.par_iter().map(|e| encoded_sample(e, enc, cfg.cody.c)).collect(),
    }
}

pub fn train_cody(cfg: &RunConfig, resume: bool) -> Result<()> {
    let encoder = if cfg.oracle_keypoints { None } else { Some(load_derender(cfg)?) };
    let splits = load_splits(cfg)?;
    let train = samples(cfg, nonempty(&splits.train, "train")?, encoder.as_ref())?;
    let dir = cfg.stage_dir("cody");
    let start = if resume { Some(load_cody(cfg)?) } else { None };
    let (model, rep) = fit_cody(&train, &cfg.cody, start)?;
    model.save(&dir)?;
    let first = model.store.step - rep.losses.len() as u64;
    append_losses(&dir.join("losses.csv"), first, &rep.losses, !resume)?;
    cfg.echo(&dir)?;
    println!(
        "cody: {} steps on {} keypoints, final loss {:.5}",
        model.store.step,
        if cfg.oracle_keypoints { "oracle" } else { "detected" },
        rep.losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

pub fn eval(cfg: &RunConfig, png: usize) -> Result<MetricsReport> {
    let model = load_cody(cfg)?;
    let encoder = if cfg.oracle_keypoints { None } else { Some(load_derender(cfg)?) };
    let splits = load_splits(cfg)?;
    let test = nonempty(&splits.test, "test")?;
    let report = evaluate(test, encoder.as_ref(), &model, cfg.raster_size, &cfg.hash(), cfg.seed)?;
    let dir = cfg.stage_dir("eval");
    report.write(&dir)?;
    cfg.echo(&dir)?;
    write_text(
        &dir.join("audit.txt"),
        "model inputs: observed AB sequence, counterfactual initial frame C\n\
         counterfactual outcome D: scoring only\n",
    )?;
    for e in test.iter().take(png) {
        let renderer = match &encoder {
            Some(enc) => Renderer::Decoder(enc),
            None => Renderer::Raster { size: cfg.raster_size },
        };
        let pred = predict_cd(&observe(e), encoder.as_ref(), &model, renderer, e.traj_cd.n_frames() - 1)?;
        let out = dir.join("rollouts").join(&e.id);
        std::fs::create_dir_all(&out).map_err(Error::io(&out))?;
        write_text(&out.join("states.csv"), &pred.states.to_csv_string())?;
        for (t, f) in pred.frames.iter().enumerate() {
            write_png(&out.join(format!("{t:04}.png")), f)?;
        }
    }
    let a = &report.aggregate;
    println!("n {}", a.n);
    println!("psnr {:.3} (copy B {:.3}, copy C {:.3})", a.psnr, a.copy_b_psnr, a.copy_c_psnr);
    println!("l_psnr {:.3}", a.l_psnr);
    println!("kp_mse {:.5} (copy B {:.5}, copy C {:.5})", a.kp_mse, a.copy_b_mse, a.copy_c_mse);
    println!("mota {:.3} motp {:.4}", a.mota, a.motp);
    Ok(report)
}

pub fn doop(cfg: &RunConfig) -> Result<()> {
    let report = eval(cfg, 0)?;
    let d = doop_impact(&report.doop_records(), 4);
    let dir = cfg.stage_dir("study");
    write_text(&dir.join("doop.csv"), &d.to_csv())?;
    cfg.echo(&dir)?;
    print!("{}", d.to_csv());
    if let Some(gap) = d.shift_minus_remove {
        println!("shift minus remove {gap:.3} dB");
    }
    Ok(())
}

pub fn render_sweep(cfg: &RunConfig, keypoint: usize, component: &str, points: usize) -> Result<()> {
    let model = load_derender(cfg)?;
    let splits = load_splits(cfg)?;
    let exp = splits
        .test
        .first()
        .or(splits.train.first())
        .ok_or_else(|| Error::Invalid("empty dataset".into()))?;
    let component: SweepComponent = component.parse()?;
    let grid: Vec<f64> = (0..points)
        .map(|i| {
            let u = if points < 2 { 0.5 } else { i as f64 / (points - 1) as f64 };
            match component {
                SweepComponent::X | SweepComponent::Y => 0.1 + 0.8 * u,
                SweepComponent::Coeff(_) => 1.0 - u,
            }
        })
        .collect();
    let frame = rasterize(&exp.scene_a, model.cfg.frame_size);
    let enc = model.encode(&frame)?;
    let decoder = BoundDecoder {
        model: &model,
        features: enc.features,
    };
    let frames = latent_sweep(&enc.state, keypoint, component, &grid, &decoder)?;
    let sheet = contact_sheet(&frames, points.max(1))?;
    let path = cfg.out_dir.join("render_sweep.png");
    std::fs::create_dir_all(&cfg.out_dir).map_err(Error::io(&cfg.out_dir))?;
    write_png(&path, &sheet)?;
    println!("wrote {}", path.display());
    Ok(())
}

pub fn report(cfg: &RunConfig) -> Result<()> {
    let mut md = format!("# cfphys report\n\nconfig {}\n", cfg.hash());
    let summary = cfg.stage_dir("eval").join("summary.json");
    if summary.exists() {
        let text = std::fs::read_to_string(&summary).map_err(Error::io(&summary))?;
        let v: serde_json::Value = serde_json::from_str(&text).map_err(Error::json(&summary))?;
        md.push_str("\n## Evaluation\n\n| metric | value |\n|---|---|\n");
        if let Some(agg) = v["aggregate"].as_object() {
            for (k, val) in agg {
                let _ = writeln!(md, "| {k} | {val} |");
            }
        }
    }
    for name in ["eps_sweep.csv", "fps.csv", "doop.csv"] {
        let p = cfg.stage_dir("study").join(name);
        if p.exists() {
            let text = std::fs::read_to_string(&p).map_err(Error::io(&p))?;
            let _ = write!(md, "\n## {name}\n\n```\n{text}```\n");
        }
    }
    if md.lines().count() <= 3 {
        return Err(Error::Prerequisite(format!("no outputs under {}", cfg.out_dir.display())));
    }
    write_text(&cfg.out_dir.join("report.md"), &md)?;
    print!("{md}");
    Ok(())
}
