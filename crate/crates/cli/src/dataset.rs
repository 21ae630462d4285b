//! Dataset directories: a manifest plus per-view camera, feature and ground
//! truth files, written by `gen-scene` and consumed by every other command.
//!
//! All paths inside the manifest are relative to the manifest's directory, so
//! a dataset directory can be moved or copied wholesale.

use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crossview_core::error::{Error, Result};
use crossview_core::io;
use crossview_core::synth::{Dataset, DatasetView};

pub const MANIFEST_NAME: &str = "manifest.toml";

#[derive(Serialize, Deserialize)]
pub struct Manifest {
    pub kind: String,
    pub version: u32,
    pub seed: u64,
    pub eta: f64,
    pub noise: f64,
    pub bound_center: [f64; 3],
    pub bound_radius: f64,
    pub scene: String,
    pub rig: String,
    pub views: Vec<ViewEntry>,
}

#[derive(Serialize, Deserialize)]
pub struct ViewEntry {
    pub index: usize,
    pub camera: String,
    pub features: String,
    pub truth: String,
    pub labeled: bool,
}

/// Writes the per-view artifacts plus the manifest that ties them together.
/// The ground truth of every view is stored — evaluation needs it — but the
/// manifest's `labeled` flags decide what training is allowed to read.
pub fn save_dataset(dir: &Path, dataset: &Dataset, seed: u64, eta: f64, noise: f64) -> Result<()> {
    let mut views = Vec::with_capacity(dataset.views.len());
    for (i, view) in dataset.views.iter().enumerate() {
        let entry = ViewEntry {
            index: i,
            camera: format!("cam_{i:02}.toml"),
            features: format!("feat_{i:02}.feat"),
            truth: format!("gt_{i:02}.pbm"),
            labeled: view.labeled,
        };
        io::save_camera(dir.join(&entry.camera), &view.camera)?;
        io::save_features(dir.join(&entry.features), &view.features)?;
        io::save_mask(dir.join(&entry.truth), &dataset.eval_truth[i])?;
        views.push(entry);
    }
    let manifest = Manifest {
        kind: "crossview-dataset".into(),
        version: 1,
        seed,
        eta,
        noise,
        bound_center: [
            dataset.bound_center.x,
            dataset.bound_center.y,
            dataset.bound_center.z,
        ],
        bound_radius: dataset.bound_radius,
        scene: "scene.toml".into(),
        rig: "rig.toml".into(),
        views,
    };
    let text = toml::to_string_pretty(&manifest).map_err(|e| Error::Format {
        path: dir.join(MANIFEST_NAME).display().to_string(),
        msg: format!("cannot encode manifest: {e}"),
    })?;
    io::write_text_atomic(dir.join(MANIFEST_NAME), &text)
}

pub fn load_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_NAME);
    let text = std::fs::read_to_string(&path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })?;
    let manifest: Manifest = toml::from_str(&text).map_err(|e| Error::Format {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    if manifest.kind != "crossview-dataset" || manifest.version != 1 {
        return Err(Error::Format {
            path: path.display().to_string(),
            msg: format!(
                "not a version-1 crossview dataset (kind {:?}, version {})",
                manifest.kind, manifest.version
            ),
        });
    }
    Ok(manifest)
}

/// Reassembles the dataset a directory describes. Unlabeled views come back
/// with `truth: None`; their ground truth lives only in `eval_truth`.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = load_manifest(dir)?;
    let mut views = Vec::with_capacity(manifest.views.len());
    let mut eval_truth = Vec::with_capacity(manifest.views.len());
    for (i, entry) in manifest.views.iter().enumerate() {
        if entry.index != i {
            return Err(Error::Format {
                path: dir.join(MANIFEST_NAME).display().to_string(),
                msg: format!("view list out of order at position {i} (index {})", entry.index),
            });
        }
        let camera = io::load_camera(dir.join(&entry.camera))?;
        let features = io::load_features(dir.join(&entry.features))?;
        let truth = io::load_mask(dir.join(&entry.truth))?;
        views.push(DatasetView {
            camera,
            features,
            truth: entry.labeled.then(|| truth.clone()),
            labeled: entry.labeled,
        });
        eval_truth.push(truth);
    }
    Ok(Dataset {
        views,
        eval_truth,
        bound_center: Vector3::new(
            manifest.bound_center[0],
            manifest.bound_center[1],
            manifest.bound_center[2],
        ),
        bound_radius: manifest.bound_radius,
    })
}
