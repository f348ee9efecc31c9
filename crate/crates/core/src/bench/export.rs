use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{combination_label, ConfounderSet, DoOperation, Experiment, Horizon, ScenarioKind};
use crate::error::{Error, Result};
use crate::render::{encode_png, rasterize_trajectory};
use crate::sim::{Scene, Trajectory, Vec2};

pub const MANIFEST: &str = "manifest.json";

/// Per-experiment `meta.json`. Scenes are kept whole so radii and
/// appearance survive a reload; trajectories live in the CSV files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Meta {
    id: String,
    scenario: ScenarioKind,
    seed: u64,
    fps: f64,
    duration: f64,
    masses: Vec<f64>,
    initial_velocities: Vec<Vec2>,
    do_op: DoOperation,
    eps: f64,
    consequential_k: Vec<usize>,
    scene_a: Scene,
    scene_c: Scene,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub n_experiments: usize,
    pub frame_size: Option<usize>,
    /// Working threshold per scenario.
    pub eps: BTreeMap<String, f64>,
    /// Accepted experiments per mass combination label (e.g. `1,10,1`).
    pub cells: BTreeMap<String, u64>,
    pub do_op_kinds: BTreeMap<String, u64>,
    /// Experiment paths relative to the root, in generation order.
    pub experiments: Vec<String>,
    /// SHA-256 of every written file, keyed by relative path.
    pub files: BTreeMap<String, String>,
    /// SHA-256 over the manifest with this field empty.
    pub hash: String,
}

impl Manifest {
    fn seal(mut self) -> Manifest {
        self.hash.clear();
        let body = serde_json::to_vec(&self).expect("manifest serializes");
        self.hash = hex::encode(Sha256::digest(&body));
        self
    }

    pub fn verify(&self) -> bool {
        self.clone().seal().hash == self.hash
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(Error::io(path))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(Error::io(path))
}

/// Files of one experiment as `(relative path, bytes)`.
fn experiment_files(e: &Experiment, frame_size: Option<usize>) -> Result<Vec<(String, Vec<u8>)>> {
    let meta = Meta {
        id: e.id.clone(),
        scenario: e.scenario,
        seed: e.seed,
        fps: e.horizon.fps,
        duration: e.horizon.duration,
        masses: e.confounders.masses.clone(),
        initial_velocities: e.confounders.initial_velocities.clone(),
        do_op: e.do_op,
        eps: e.eps,
        consequential_k: e.consequential_k.clone(),
        scene_a: e.scene_a.clone(),
        scene_c: e.scene_c.clone(),
    };
    let mut files = vec![
        (
            "meta.json".to_string(),
            serde_json::to_vec_pretty(&meta).expect("meta serializes"),
        ),
        ("ab.csv".to_string(), e.traj_ab.to_csv_string().into_bytes()),
        ("cd.csv".to_string(), e.traj_cd.to_csv_string().into_bytes()),
    ];
    if let Some(size) = frame_size {
        for (leg, scene, traj) in [("ab", &e.scene_a, &e.traj_ab), ("cd", &e.scene_c, &e.traj_cd)] {
            for (i, frame) in rasterize_trajectory(scene, traj, size).iter().enumerate() {
                files.push((format!("{leg}/frame_{i:04}.png"), encode_png(frame)?));
            }
        }
    }
    Ok(files)
}

/// Writes `<root>/<scenario>/<id>/{meta.json, ab.csv, cd.csv, ab/, cd/}`
/// and `<root>/manifest.json`. Frames are rendered when `frame_size` is set.
pub fn export_dataset(
    experiments: &[Experiment],
    root: &Path,
    frame_size: Option<usize>,
) -> Result<Manifest> {
    create_dir(root)?;
    let written: Vec<Vec<(String, String)>> = experiments
        .par_iter()
        .map(|e| -> Result<Vec<(String, String)>> {
            let rel = format!("{}/{}", e.scenario.as_str(), e.id);
            let dir = root.join(&rel);
            create_dir(&dir)?;
            if frame_size.is_some() {
                create_dir(&dir.join("ab"))?;
                create_dir(&dir.join("cd"))?;
            }
            experiment_files(e, frame_size)?
                .into_iter()
                .map(|(name, bytes)| {
                    write_file(&dir.join(&name), &bytes)?;
                    Ok((format!("{rel}/{name}"), sha256_hex(&bytes)))
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut manifest = Manifest {
        n_experiments: experiments.len(),
        frame_size,
        eps: BTreeMap::new(),
        cells: BTreeMap::new(),
        do_op_kinds: BTreeMap::new(),
        experiments: Vec::new(),
        files: written.into_iter().flatten().collect(),
        hash: String::new(),
    };
    for e in experiments {
        manifest.eps.insert(e.scenario.as_str().to_string(), e.eps);
        let n = e.n_bodies();
        let label = e
            .confounders
            .combination()
            .map_or_else(|| "other".to_string(), |c| combination_label(c, n));
        *manifest.cells.entry(label).or_default() += 1;
        *manifest
            .do_op_kinds
            .entry(e.do_op.kind.as_str().to_string())
            .or_default() += 1;
        manifest
            .experiments
            .push(format!("{}/{}", e.scenario.as_str(), e.id));
    }
    let manifest = manifest.seal();
    let path = root.join(MANIFEST);
    write_file(
        &path,
        &serde_json::to_vec_pretty(&manifest).expect("manifest serializes"),
    )?;
    Ok(manifest)
}

fn read_trajectory(path: &Path, fps: f64) -> Result<Trajectory> {
    let file = std::fs::File::open(path).map_err(Error::io(path))?;
    Trajectory::read_csv(std::io::BufReader::new(file), Some(fps)).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

pub fn load_experiment(dir: &Path) -> Result<Experiment> {
    let meta_path = dir.join("meta.json");
    let text = std::fs::read_to_string(&meta_path).map_err(Error::io(&meta_path))?;
    let meta: Meta = serde_json::from_str(&text).map_err(Error::json(&meta_path))?;
    let traj_ab = read_trajectory(&dir.join("ab.csv"), meta.fps)?;
    let traj_cd = read_trajectory(&dir.join("cd.csv"), meta.fps)?;
    Ok(Experiment {
        id: meta.id,
        scenario: meta.scenario,
        seed: meta.seed,
        horizon: Horizon {
            duration: meta.duration,
            fps: meta.fps,
        },
        eps: meta.eps,
        scene_a: meta.scene_a,
        traj_ab,
        do_op: meta.do_op,
        scene_c: meta.scene_c,
        traj_cd,
        confounders: ConfounderSet {
            masses: meta.masses,
            initial_velocities: meta.initial_velocities,
        },
        consequential_k: meta.consequential_k,
    })
}

pub fn read_manifest(root: &Path) -> Result<Manifest> {
    let path = root.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(Error::io(&path))?;
    serde_json::from_str(&text).map_err(Error::json(&path))
}

/// Loads every experiment listed in `<root>/manifest.json`, in order.
pub fn load_dataset(root: &Path) -> Result<(Manifest, Vec<Experiment>)> {
    let manifest = read_manifest(root)?;
    let dirs: Vec<PathBuf> = manifest.experiments.iter().map(|r| root.join(r)).collect();
    let experiments = dirs
        .par_iter()
        .map(|d| load_experiment(d))
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, experiments))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{generate_dataset, Filters, ScenarioConfig};

    #[test]
    fn export_layout_and_round_trip() {
        let mut cfg = ScenarioConfig::balls(3);
        cfg.horizon.duration = 1.0;
        let (exps, _) = generate_dataset(&cfg, 0.5, Filters::ALL, 2, 9, 10_000).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let m = export_dataset(&exps[..1], dir.path(), Some(16)).unwrap();
        let e = &exps[0];
        let base = dir.path().join("balls").join(&e.id);
        for f in ["meta.json", "ab.csv", "cd.csv", "ab/frame_0000.png", "cd/frame_0024.png"] {
            assert!(base.join(f).is_file(), "{f}");
        }
        assert_eq!(m.cells.values().sum::<u64>(), 1);
        assert!(m.verify());
        assert_eq!(load_experiment(&base).unwrap(), *e);

        let dir2 = tempfile::tempdir().unwrap();
        let all = export_dataset(&exps, dir2.path(), None).unwrap();
        let again = export_dataset(&exps, dir2.path(), None).unwrap();
        assert_eq!(all.hash, again.hash);
        assert_eq!(all.cells.values().sum::<u64>() as usize, exps.len());
        assert_eq!(all.do_op_kinds.values().sum::<u64>() as usize, exps.len());
        let (m2, back) = load_dataset(dir2.path()).unwrap();
        assert_eq!(m2, all);
        assert_eq!(back, exps);
    }
}
