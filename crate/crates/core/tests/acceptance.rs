//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any fails.
//!
//! Pass criterion numbers as arguments to run a subset:
//! `cargo test --test acceptance -- 1 11`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::Rng as _;

use cfphys::bench::{
    generate_dataset, log_grid, mass_combination, threshold_sweep, Experiment, Filters, ScenarioConfig,
    MASS_ALPHABET,
};
use cfphys::cody::{observe, oracle_sample, predict_cd, train_cody, Cody, CodyConfig, Renderer};
use cfphys::derender::{heldout_psnr, train_derender, Derender, DerenderConfig};
use cfphys::eval::{
    confounder_probe, fps_study, keypoint_scores, min_cost_assignment, mot_metrics, ProbeConfig,
};
use cfphys::nn::{check_gradients, ConvBlock, Dense, GraphNet, Gru, ParamStore};
use cfphys::rng::seeded;
use cfphys::sim::{self, resolve_collision, Body, Scene, Trajectory, Vec2};

/// Working identifiability threshold of the balls scenario.
const EPS: f64 = 47.5;
const SEEDS: [u64; 3] = [0, 1, 2];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn within(limit: Duration, start: Instant) -> (bool, String) {
    let t = start.elapsed();
    (t <= limit, format!("{:.1}s of {}s", t.as_secs_f64(), limit.as_secs()))
}

fn majority(flags: &[bool]) -> bool {
    2 * flags.iter().filter(|&&f| f).count() > flags.len()
}

fn balls(n: usize, filters: Filters, seed: u64) -> Vec<Experiment> {
    generate_dataset(&ScenarioConfig::balls(3), EPS, filters, n, seed, 1_000_000)
        .expect("generation")
        .0
}

// 1 -------------------------------------------------------------------------

fn physics_oracle() -> Verdict {
    let start = Instant::now();
    let mut rng = seeded(101);
    let (mut worst_p, mut worst_e) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let m1 = rng.random_range(0.5..20.0);
        let m2 = rng.random_range(0.5..20.0);
        let (r1, r2) = (rng.random_range(0.02..0.1), rng.random_range(0.02..0.1));
        // Second ball at rest somewhere ahead; first aimed inside the contact
        // cross-section so they must meet.
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let dir = Vec2::from_angle(angle);
        let perp = Vec2::new(-dir.y, dir.x);
        let miss = rng.random_range(-0.9..0.9) * (r1 + r2);
        let p1 = Vec2::new(0.0, 0.0);
        let p2 = p1 + dir * 0.5 + perp * miss;
        let speed = rng.random_range(0.2..2.0);
        let b1 = Body::new(p1, dir * speed, r1, m1, 0);
        let b2 = Body::new(p2, Vec2::from_angle(rng.random_range(0.0..6.3)) * 0.05, r2, m2, 1);
        let scene = Scene::with_bounds(vec![b1, b2], None).expect("scene");
        let traj = sim::simulate(&scene, &[m1, m2], 2.0, 25.0).expect("simulate");
        let p0 = scene.total_momentum();
        let e0 = scene.kinetic_energy();
        let last = traj.states.last().expect("frames");
        let p = last[0].velocity * m1 + last[1].velocity * m2;
        let e = 0.5 * m1 * last[0].velocity.norm_sq() + 0.5 * m2 * last[1].velocity.norm_sq();
        worst_p = worst_p.max((p - p0).norm() / p0.norm());
        worst_e = worst_e.max((e - e0).abs() / e0);

        // Direct impulse on touching discs.
        let t1 = Body::new(Vec2::ZERO, dir * speed, r1, m1, 0);
        let t2 = Body::new(dir * (r1 + r2) + perp * 0.0, Vec2::ZERO, r2, m2, 1);
        let out = resolve_collision(&t1, &t2);
        assert!(out.applied);
        let q = out.first.momentum() + out.second.momentum();
        let q0 = t1.momentum() + t2.momentum();
        worst_p = worst_p.max((q - q0).norm() / q0.norm());
        let k = out.first.kinetic_energy() + out.second.kinetic_energy();
        let k0 = t1.kinetic_energy() + t2.kinetic_energy();
        worst_e = worst_e.max((k - k0).abs() / k0);
    }
    let heavy = Body::new(Vec2::new(0.3, 0.5), Vec2::new(1.0, 0.0), 0.05, 10.0, 0);
    let light = Body::new(Vec2::new(0.4, 0.5), Vec2::ZERO, 0.05, 1.0, 1);
    let out = resolve_collision(&heavy, &light);
    let closed = (out.first.velocity.x - 9.0 / 11.0).abs().max((out.second.velocity.x - 20.0 / 11.0).abs());
    let (fast, t) = within(Duration::from_secs(10), start);
    verdict(
        worst_p <= 1e-9 && worst_e <= 1e-6 && closed <= 1e-12 && fast,
        format!("momentum {worst_p:.1e}, energy {worst_e:.1e}, closed form {closed:.1e}, {t}"),
    )
}

// 2 -------------------------------------------------------------------------

fn gradient_checks() -> Verdict {
    let start = Instant::now();
    const H: f64 = 1e-5;
    const TOL: f64 = 1e-4;
    let mut worst: Vec<(&str, f64)> = Vec::new();
    let mut record = |name: &'static str, e: f64| match worst.iter_mut().find(|(n, _)| *n == name) {
        Some(w) => w.1 = w.1.max(e),
        None => worst.push((name, e)),
    };
    for seed in 0..20u64 {
        let mut rng = seeded(1000 + seed);

        let mut s = ParamStore::new();
        let dense = Dense::new("d", 4, 3);
        dense.init(&mut s, &mut rng);
        s.insert_uniform("x", &[5, 4], 1.0, &mut rng);
        let e = check_gradients(&s, |g, s| {
            let x = g.param(s, "x")?;
            let y = dense.forward(g, s, x)?;
            let y = g.tanh(y);
            Ok(g.sum_sq(y))
        }, H)
        .expect("dense");
        record("dense", e);

        let mut s = ParamStore::new();
        let conv = ConvBlock::new("c", 2, 3, 3, 1 + (seed as usize % 2));
        conv.init(&mut s, &mut rng);
        s.insert_uniform("img", &[2, 2, 6, 5], 1.0, &mut rng);
        let e = check_gradients(&s, |g, s| {
            let x = g.param(s, "img")?;
            let y = conv.forward(g, s, x, None)?;
            Ok(g.sum_sq(y))
        }, H)
        .expect("conv");
        record("conv", e);

        let mut s = ParamStore::new();
        let gru = Gru::new("g", 3, 4, 1 + (seed as usize % 2));
        gru.init(&mut s, &mut rng);
        s.insert_uniform("x", &[2, 3], 1.0, &mut rng);
        let e = check_gradients(&s, |g, s| {
            let x = g.param(s, "x")?;
            let mut h = gru.zero_state(g, 2);
            let a = gru.step(g, s, x, &mut h)?;
            let b = gru.step(g, s, x, &mut h)?;
            let o = g.add(a, b)?;
            Ok(g.sum_sq(o))
        }, H)
        .expect("gru");
        record("gru", e);

        let mut s = ParamStore::new();
        let gn = GraphNet::new("n", 3, &[5], 4, 2);
        gn.init(&mut s, &mut rng);
        s.insert_uniform("x", &[6, 3], 1.0, &mut rng);
        let k = 2 + (seed as usize % 2);
        let e = check_gradients(&s, |g, s| {
            let x = g.param(s, "x")?;
            let y = gn.forward(g, s, x, k)?;
            Ok(g.sum_sq(y))
        }, H)
        .expect("graph net");
        record("graph-net", e);

        let mut s = ParamStore::new();
        s.insert_uniform("m", &[2, 3, 5, 6], 2.0, &mut rng);
        let e = check_gradients(&s, |g, s| {
            let m = g.param(s, "m")?;
            let kp = g.spatial_softargmax(m)?;
            let maps = g.gaussian_maps(kp, 0.2, 4, 4)?;
            let a = g.sum_sq(kp);
            let b = g.sum_sq(maps);
            g.add(a, b)
        }, H)
        .expect("soft-argmax");
        record("soft-argmax", e);

        let mut s = ParamStore::new();
        s.insert_uniform("a", &[4, 3], 1.0, &mut rng);
        s.insert_uniform("b", &[4, 3], 1.0, &mut rng);
        let targets: Vec<f64> = (0..12).map(|_| f64::from(rng.random_bool(0.5))).collect();
        let e = check_gradients(&s, |g, s| {
            let a = g.param(s, "a")?;
            let b = g.param(s, "b")?;
            let m = g.mse(a, b)?;
            let c = g.bce_with_logits(a, &targets)?;
            g.add(m, c)
        }, H)
        .expect("losses");
        record("losses", e);
    }
    let max = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    let (fast, t) = within(Duration::from_secs(120), start);
    let names: Vec<String> = worst.iter().map(|(n, e)| format!("{n} {e:.0e}")).collect();
    verdict(max < TOL && fast, format!("20 instances each, worst {}; {t}", names.join(", ")))
}

// 3 -------------------------------------------------------------------------

fn distance(a: &Trajectory, b: &Trajectory) -> f64 {
    a.states
        .iter()
        .zip(&b.states)
        .flat_map(|(fa, fb)| fa.iter().zip(fb).map(|(x, y)| (x.position - y.position).norm()))
        .sum()
}

fn filter_soundness() -> Verdict {
    let start = Instant::now();
    let exps = balls(200, Filters::ALL, 303);
    let (mut violations, mut bad_witnesses, mut empty) = (0, 0, 0);
    for e in &exps {
        let n = e.n_bodies();
        let slots = e.slot_map();
        let run = |z: &[f64]| {
            let ab = e.horizon.simulate(&e.scene_a, z).expect("ab");
            let mut zc = vec![0.0; e.scene_c.len()];
            for (a, s) in slots.iter().enumerate() {
                if let Some(j) = s {
                    zc[*j] = z[a];
                }
            }
            let cd = e.horizon.simulate(&e.scene_c, &zc).expect("cd");
            (ab, cd)
        };
        let z = e.confounders.masses.clone();
        let (ab, cd) = run(&z);
        for combo in 0..1usize << n {
            let alt = mass_combination(combo, n);
            if alt == z {
                continue;
            }
            let (ab2, cd2) = run(&alt);
            if distance(&ab, &ab2) < e.eps && distance(&cd, &cd2) > e.eps {
                violations += 1;
            }
        }
        if e.consequential_k.is_empty() {
            empty += 1;
        }
        for &k in &e.consequential_k {
            let mut flip = z.clone();
            flip[k] = if flip[k] == MASS_ALPHABET[0] { MASS_ALPHABET[1] } else { MASS_ALPHABET[0] };
            if distance(&cd, &run(&flip).1) < e.eps {
                bad_witnesses += 1;
            }
        }
    }
    let (fast, t) = within(Duration::from_secs(300), start);
    verdict(
        violations == 0 && bad_witnesses == 0 && empty == 0 && fast,
        format!(
            "{} experiments: {violations} identifiability violations, {bad_witnesses} failed witnesses, {empty} without witness; {t}",
            exps.len()
        ),
    )
}

// 4 -------------------------------------------------------------------------

fn threshold_shape() -> Verdict {
    let grid = log_grid(0.1, 10_000.0, 21);
    let rows = threshold_sweep(&ScenarioConfig::balls(3), &grid, 500, 404).expect("sweep");
    let (first, last) = (rows[0].percent, rows[rows.len() - 1].percent);
    let (imax, best) = rows
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.percent.total_cmp(&b.1.percent))
        .map(|(i, r)| (i, r.percent))
        .expect("rows");
    let interior = imax > 0 && imax + 1 < rows.len();
    verdict(
        first <= 2.0 && last <= 2.0 && interior && best >= 10.0,
        format!(
            "500 candidates: {first:.1}% at eps {:.1}, peak {best:.1}% at eps {:.1}, {last:.1}% at eps {:.0}",
            grid[0], grid[imax], grid[grid.len() - 1]
        ),
    )
}

// 5 -------------------------------------------------------------------------

fn confounder_identification() -> Verdict {
    let start = Instant::now();
    let mut flags = Vec::new();
    let mut parts = Vec::new();
    for seed in SEEDS {
        let filtered = balls(1000, Filters::ALL, seed);
        let unfiltered = balls(1000, Filters::COUNTERFACTUAL_ONLY, seed);
        let cfg = ProbeConfig {
            seed,
            ..Default::default()
        };
        let r = confounder_probe(&filtered, &unfiltered, &cfg).expect("probe");
        let gap = r.filtered.accuracy - r.unfiltered.accuracy;
        let ok = gap >= 0.05 && r.filtered.corrected >= r.filtered.accuracy;
        flags.push(ok);
        parts.push(format!(
            "seed {seed}: {:.1}% vs {:.1}% (corrected {:.1}%)",
            100.0 * r.filtered.accuracy,
            100.0 * r.unfiltered.accuracy,
            100.0 * r.filtered.corrected
        ));
    }
    let (fast, t) = within(Duration::from_secs(1800), start);
    verdict(majority(&flags) && fast, format!("{}; {t}", parts.join("; ")))
}

// 6 -------------------------------------------------------------------------

fn temporal_resolution() -> Verdict {
    let start = Instant::now();
    let mut flags = Vec::new();
    let mut parts = Vec::new();
    for seed in SEEDS {
        let exps = balls(500, Filters::ALL, seed);
        let (train, test) = exps.split_at(400);
        let cfg = CodyConfig {
            c: 1,
            state_encoder: false,
            hidden: 32,
            gru_hidden: 32,
            d_sigma: 32,
            d_u: 16,
            lr: 3e-3,
            steps: 3000,
            seed,
            ..Default::default()
        };
        let rows = fps_study(train, test, &[5.0, 25.0], &cfg).expect("fps study");
        flags.push(rows[1].mse < rows[0].mse);
        parts.push(format!("seed {seed}: 25fps {:.4} vs 5fps {:.4}", rows[1].mse, rows[0].mse));
    }
    let (fast, t) = within(Duration::from_secs(1800), start);
    verdict(majority(&flags) && fast, format!("{}; {t}", parts.join("; ")))
}

// 7 + 8 ---------------------------------------------------------------------

struct DynamicsRun {
    seed: u64,
    with_encoder: f64,
    without_encoder: f64,
    copy_b: f64,
    copy_c: f64,
}

fn dynamics_runs() -> (Vec<DynamicsRun>, Duration) {
    let start = Instant::now();
    let runs = SEEDS
        .iter()
        .map(|&seed| {
            let exps = balls(900, Filters::ALL, seed);
            let samples: Vec<_> = exps.iter().map(|e| oracle_sample(e, 1)).collect();
            let (train, test) = samples.split_at(800);
            let fit = |state_encoder: bool| {
                let cfg = CodyConfig {
                    c: 1,
                    hidden: 32,
                    gru_hidden: 32,
                    d_sigma: 32,
                    d_u: 16,
                    lr: 3e-3,
                    steps: 1500,
                    state_encoder,
                    seed,
                    ..Default::default()
                };
                let (m, _) = train_cody(train, &cfg, None).expect("train");
                keypoint_scores(&m, test).expect("score")
            };
            let with = fit(true);
            let without = fit(false);
            DynamicsRun {
                seed,
                with_encoder: with.model,
                without_encoder: without.model,
                copy_b: with.copy_b,
                copy_c: with.copy_c,
            }
        })
        .collect();
    (runs, start.elapsed())
}

fn cody_vs_copy(runs: &[DynamicsRun], took: Duration) -> Verdict {
    let flags: Vec<bool> = runs.iter().map(|r| r.with_encoder < r.copy_b.min(r.copy_c)).collect();
    let parts: Vec<String> = runs
        .iter()
        .map(|r| {
            format!(
                "seed {}: {:.2} vs copy B {:.2}, copy C {:.2} (x1e-3)",
                r.seed,
                1e3 * r.with_encoder,
                1e3 * r.copy_b,
                1e3 * r.copy_c
            )
        })
        .collect();
    let fast = took <= Duration::from_secs(3600);
    verdict(
        majority(&flags) && fast,
        format!("{}; {:.1}s of 3600s", parts.join("; "), took.as_secs_f64()),
    )
}

fn encoder_ablation(runs: &[DynamicsRun]) -> Verdict {
    let flags: Vec<bool> = runs.iter().map(|r| r.with_encoder <= r.without_encoder).collect();
    let parts: Vec<String> = runs
        .iter()
        .map(|r| format!("seed {}: {:.2} with vs {:.2} without (x1e-3)", r.seed, 1e3 * r.with_encoder, 1e3 * r.without_encoder))
        .collect();
    verdict(majority(&flags), parts.join("; "))
}

// 9 -------------------------------------------------------------------------

fn coefficient_ablation() -> Verdict {
    let start = Instant::now();
    let exps = balls(150, Filters::COUNTERFACTUAL_ONLY, 1);
    let (train, test) = exps.split_at(100);
    let cfg = |coefficients: bool| DerenderConfig {
        k: 3,
        frame_size: 32,
        width: 16,
        feature_channels: 16,
        steps: 3000,
        coefficients,
        ..Default::default()
    };
    let (with, _) = train_derender(train, &cfg(true), None).expect("train");
    let (with_psnr, copy) = heldout_psnr(&with, test).expect("psnr");
    let (without, _) = train_derender(train, &cfg(false), None).expect("train");
    let (without_psnr, _) = heldout_psnr(&without, test).expect("psnr");
    let (fast, t) = within(Duration::from_secs(7200), start);
    verdict(
        with_psnr > without_psnr && with_psnr - copy >= 3.0 && fast,
        format!("{with_psnr:.2} dB with vs {without_psnr:.2} dB without, copy source {copy:.2} dB; {t}"),
    )
}

// 10 ------------------------------------------------------------------------

fn noisy_outcome(e: &Experiment, rng: &mut cfphys::rng::Rng) -> Experiment {
    let mut e = e.clone();
    for frame in &mut e.traj_cd.states {
        for s in frame {
            s.position = Vec2::new(rng.random(), rng.random());
            s.velocity = Vec2::new(rng.random(), rng.random());
        }
    }
    e
}

fn no_peeking() -> Verdict {
    let exps = balls(20, Filters::ALL, 1010);
    let oracle = Cody::new(CodyConfig {
        c: 1,
        hidden: 16,
        gru_hidden: 16,
        d_sigma: 16,
        d_u: 8,
        ..Default::default()
    })
    .expect("model");
    let enc = Derender::new(DerenderConfig {
        k: 3,
        c: 2,
        frame_size: 16,
        width: 4,
        feature_channels: 4,
        ..Default::default()
    })
    .expect("encoder");
    let learned = Cody::new(CodyConfig {
        c: 2,
        hidden: 16,
        gru_hidden: 16,
        d_sigma: 16,
        d_u: 8,
        ..Default::default()
    })
    .expect("model");
    let mut rng = seeded(1011);
    let mut changed = 0;
    for e in &exps {
        let noisy = noisy_outcome(e, &mut rng);
        let steps = e.traj_cd.n_frames() - 1;
        let a = predict_cd(&observe(e), None, &oracle, Renderer::Raster { size: 16 }, steps).expect("predict");
        let b = predict_cd(&observe(&noisy), None, &oracle, Renderer::Raster { size: 16 }, steps).expect("predict");
        let c = predict_cd(&observe(e), Some(&enc), &learned, Renderer::Decoder(&enc), steps).expect("predict");
        let d = predict_cd(&observe(&noisy), Some(&enc), &learned, Renderer::Decoder(&enc), steps).expect("predict");
        let same = |x: &cfphys::cody::Prediction, y: &cfphys::cody::Prediction| {
            let bits = |p: &cfphys::cody::Prediction| -> Vec<u64> {
                p.states
                    .frames
                    .iter()
                    .flatten()
                    .flatten()
                    .chain(p.frames.iter().flat_map(|f| f.data.iter()))
                    .map(|v| v.to_bits())
                    .collect()
            };
            bits(x) == bits(y)
        };
        if !same(&a, &b) || !same(&c, &d) {
            changed += 1;
        }
    }
    verdict(changed == 0, format!("{changed} of {} predictions changed (oracle and learned keypoints)", exps.len()))
}

// 11 ------------------------------------------------------------------------

fn mot_and_assignment() -> Verdict {
    let frames = |pts: &[[f64; 2]], t: usize| -> Vec<Vec<Option<[f64; 2]>>> {
        (0..t).map(|_| pts.iter().map(|p| Some(*p)).collect()).collect()
    };
    let gt = frames(&[[0.2, 0.2], [0.7, 0.6]], 10);
    let perfect = mot_metrics(&gt, &gt, 0.05).expect("mot");
    let mut missing = gt.clone();
    missing[3][0] = None;
    missing[7][1] = None;
    let miss = mot_metrics(&missing, &gt, 0.05).expect("mot");

    let mut rng = seeded(1111);
    let mut mismatches = 0;
    for _ in 0..100 {
        let k = rng.random_range(1..=5);
        let cost: Vec<Vec<f64>> = (0..k).map(|_| (0..k).map(|_| rng.random_range(0.0..10.0)).collect()).collect();
        let a = min_cost_assignment(&cost);
        let got: f64 = a.iter().enumerate().map(|(i, j)| cost[i][j.expect("square")]).sum();
        let mut perm: Vec<usize> = (0..k).collect();
        let mut best = f64::INFINITY;
        permutations(&mut perm, 0, &mut |p| {
            best = best.min(p.iter().enumerate().map(|(i, &j)| cost[i][j]).sum());
        });
        if (got - best).abs() > 1e-9 {
            mismatches += 1;
        }
    }
    let ok = perfect.mota == 1.0 && perfect.motp == 0.0 && (miss.mota - 0.9).abs() < 1e-12 && mismatches == 0;
    verdict(
        ok,
        format!(
            "perfect MOTA {} MOTP {}, two misses MOTA {}, {mismatches} of 100 assignments off optimum",
            perfect.mota, perfect.motp, miss.mota
        ),
    )
}

fn permutations(p: &mut Vec<usize>, i: usize, f: &mut dyn FnMut(&[usize])) {
    if i == p.len() {
        f(p);
        return;
    }
    for j in i..p.len() {
        p.swap(i, j);
        permutations(p, i + 1, f);
        p.swap(i, j);
    }
}

// 12 ------------------------------------------------------------------------

fn dir_bytes(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).expect("read dir") {
            let p = entry.expect("entry").path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).expect("prefix").display().to_string();
                out.push((rel, std::fs::read(&p).expect("read")));
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Verdict {
    let once = || {
        let root = tempfile::tempdir().expect("tempdir");
        let exps = balls(12, Filters::ALL, 1212);
        let manifest = cfphys::bench::export_dataset(&exps, &root.path().join("data"), Some(16)).expect("export");
        let dcfg = DerenderConfig {
            frame_size: 16,
            width: 4,
            feature_channels: 4,
            steps: 5,
            batch: 4,
            seed: 3,
            ..Default::default()
        };
        let (d, _) = train_derender(&exps, &dcfg, None).expect("derender");
        d.save(&root.path().join("derender")).expect("save");
        let samples: Vec<_> = exps.iter().map(|e| oracle_sample(e, 1)).collect();
        let ccfg = CodyConfig {
            c: 1,
            hidden: 8,
            gru_hidden: 8,
            d_sigma: 8,
            d_u: 4,
            steps: 5,
            batch: 4,
            seed: 3,
            ..Default::default()
        };
        let (m, _) = train_cody(&samples, &ccfg, None).expect("cody");
        m.save(&root.path().join("cody")).expect("save");
        (manifest.hash, dir_bytes(root.path()))
    };
    let (h1, a) = once();
    let (h2, b) = once();
    let differing: Vec<&str> = a
        .iter()
        .zip(&b)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    verdict(
        h1 == h2 && a.len() == b.len() && differing.is_empty(),
        format!("{} files compared, {} differ, manifest {}", a.len(), differing.len(), &h1[..12]),
    )
}

fn main() {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wants = |n: u32| selected.is_empty() || selected.contains(&n);
    let mut results: Vec<(u32, &str, Verdict)> = Vec::new();
    let mut run = |n: u32, name: &'static str, f: &dyn Fn() -> Verdict| {
        let v = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        println!("criterion {n:>2} {} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        results.push((n, name, v));
    };
    let basic: [(u32, &str, fn() -> Verdict); 9] = [
        (1, "physics oracle", physics_oracle),
        (2, "gradient checks", gradient_checks),
        (3, "filter soundness", filter_soundness),
        (4, "threshold sweep shape", threshold_shape),
        (10, "no-peeking audit", no_peeking),
        (11, "MOT metrics", mot_and_assignment),
        (12, "determinism", determinism),
        (5, "confounder identification", confounder_identification),
        (6, "temporal resolution", temporal_resolution),
    ];
    for (n, name, f) in basic {
        if wants(n) {
            run(n, name, &f);
        }
    }
    if wants(7) || wants(8) {
        match catch_unwind(dynamics_runs) {
            Ok((runs, took)) => {
                if wants(7) {
                    run(7, "dynamics vs copy baselines", &|| cody_vs_copy(&runs, took));
                }
                if wants(8) {
                    run(8, "state-encoder ablation", &|| encoder_ablation(&runs));
                }
            }
            Err(_) => {
                for n in [7, 8] {
                    if wants(n) {
                        run(n, "dynamics training", &|| verdict(false, "training panicked"));
                    }
                }
            }
        }
    }
    if wants(9) {
        run(9, "coefficient ablation", &coefficient_ablation);
    }
    results.sort_by_key(|r| r.0);
    let failed: Vec<u32> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!(
        "acceptance: {} of {} criteria passed",
        results.len() - failed.len(),
        results.len()
    );
    if !failed.is_empty() {
        println!("failed: {failed:?}");
        std::process::exit(1);
    }
}
