use std::path::Path;

use draec::scene::{generate_scene, save_scene, SceneMeta};
use rayon::prelude::*;
use serde::Serialize;

use crate::grid::{run_config, ExperimentSpec, GridArgs};
use crate::{io_error, CliResult, ConfigArgs};

pub const MANIFEST: &str = "manifest.toml";

#[derive(Serialize)]
struct Manifest<'a> {
    sample_rate: u32,
    spec: &'a ExperimentSpec,
    scene: Vec<ManifestEntry>,
}

#[derive(Serialize)]
struct ManifestEntry {
    dir: String,
    cell: usize,
    trial: usize,
    meta: SceneMeta,
}

pub fn scene_dir_name(index: usize) -> String {
    format!("scene-{index:04}")
}

pub fn run(config: &ConfigArgs, grid: &GridArgs, out: &Path) -> CliResult<()> {
    let run = run_config(config)?;
    let spec = grid.resolve()?;
    std::fs::create_dir_all(out).map_err(|e| io_error(out, e))?;
    let fs = run.stft.sample_rate_hz;
    let jobs = spec.jobs();
    let entries = jobs
        .par_iter()
        .enumerate()
        .map(|(i, job)| {
            let cfg = spec.scene_config(&run.scene, &job.cell);
            let scene = generate_scene(&cfg, fs, job.seed)?;
            let dir = scene_dir_name(i);
            save_scene(&out.join(&dir), &scene)?;
            Ok(ManifestEntry {
                dir,
                cell: job.cell_index,
                trial: job.trial,
                meta: scene.meta,
            })
        })
        .collect::<draec::Result<Vec<_>>>()?;
    let manifest = Manifest {
        sample_rate: fs,
        spec: &spec,
        scene: entries,
    };
    let text = toml::to_string(&manifest)
        .map_err(|e| crate::CliError::runtime("manifest", e.to_string()))?;
    let path = out.join(MANIFEST);
    std::fs::write(&path, text).map_err(|e| io_error(&path, e))?;
    println!(
        "wrote {} scene(s) to {}",
        manifest.scene.len(),
        out.display()
    );
    Ok(())
}
