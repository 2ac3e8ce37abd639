//! Dataset disk layout and external ingestion.
//!
//! Layout (written by generation, read by ingestion):
//!
//! ```text
//! <root>/manifest.txt
//! <root>/<category>/<uid>/image.png
//! <root>/<category>/<uid>/cloud.ssmppc
//! ```
//!
//! The manifest is flat `key = value` plus one `sample = <uid> <category>
//! <train|test>` line per sample. External trees without a manifest ingest
//! every `<category>/<uid>` pair as training data.

use super::{Dataset, Sample, Split};
use crate::cloud::farthest_point_sample;
use crate::cloud_io;
use crate::error::{Error, Result};
use crate::img::Image;
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

pub fn save_dataset(root: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    let root = root.as_ref();
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut manifest = String::new();
    manifest.push_str("format = ssmp-dataset-v1\n");
    manifest.push_str(&format!("seed = {}\n", dataset.seed));
    manifest.push_str(&format!("n_points = {}\n", dataset.n_points));
    manifest.push_str(&format!("img_size = {}\n", dataset.img_size));
    manifest.push_str(&format!("categories = {}\n", dataset.categories.join(",")));
    for s in &dataset.samples {
        manifest.push_str(&format!("sample = {} {} {}\n", s.uid, s.category, s.split));
        let dir = root.join(&s.category).join(&s.uid);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        s.image.save_png(dir.join("image.png"))?;
        if let Some(cloud) = s.eval_ground_truth() {
            cloud_io::save_cloud(dir.join(format!("cloud.{}", cloud_io::CLOUD_EXT)), cloud)?;
        }
    }
    fs::write(root.join("manifest.txt"), manifest)
        .map_err(|e| Error::io(root.join("manifest.txt"), e))
}

/// Loads a dataset written by [`save_dataset`]. Labeled flags are not
/// persisted; re-derive them with [`super::split_labeled`].
pub fn load_dataset(root: impl AsRef<Path>) -> Result<Dataset> {
    let root = root.as_ref();
    let manifest_path = root.join("manifest.txt");
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let mut seed = 0u64;
    let mut n_points = 0usize;
    let mut img_size = 0usize;
    let mut categories = Vec::new();
    let mut sample_lines = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::invalid(format!("manifest line without '=': {line:?}")));
        };
        let (key, value) = (key.trim(), value.trim());
        match key {
            "format" => {
                if value != "ssmp-dataset-v1" {
                    return Err(Error::invalid(format!("unknown dataset format {value:?}")));
                }
            }
            "seed" => seed = value.parse().map_err(|_| Error::invalid("bad seed"))?,
            "n_points" => n_points = value.parse().map_err(|_| Error::invalid("bad n_points"))?,
            "img_size" => img_size = value.parse().map_err(|_| Error::invalid("bad img_size"))?,
            "categories" => categories = value.split(',').map(|s| s.trim().to_string()).collect(),
            "sample" => sample_lines.push(value.to_string()),
            other => return Err(Error::invalid(format!("unknown manifest key {other:?}"))),
        }
    }
    let mut samples = Vec::with_capacity(sample_lines.len());
    for line in sample_lines {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::invalid(format!("bad sample line {line:?}")));
        }
        let (uid, category, split) = (fields[0], fields[1], fields[2]);
        let split = match split {
            "train" => Split::Train,
            "test" => Split::Test,
            other => return Err(Error::invalid(format!("bad split {other:?}"))),
        };
        let dir = root.join(category).join(uid);
        let image = Image::load_png(dir.join("image.png"))?;
        let cloud_path = dir.join(format!("cloud.{}", cloud_io::CLOUD_EXT));
        let cloud = if cloud_path.exists() {
            Some(cloud_io::load_cloud(&cloud_path)?.with_category(category))
        } else {
            None
        };
        samples.push(Sample::new(
            uid.to_string(),
            category.to_string(),
            image,
            cloud,
            split,
        ));
    }
    Ok(Dataset {
        samples,
        categories,
        n_points,
        img_size,
        seed,
    })
}

/// Ingests an external `<root>/<category>/<uid>/{image.png, cloud.ssmppc}`
/// tree. Invalid samples are skipped with a logged reason; if more than 10%
/// of the candidates are skipped the whole ingestion aborts. Clouds larger
/// than `n_points` are downsampled by farthest point sampling.
pub fn ingest_external(root: impl AsRef<Path>, n_points: usize, seed: u64) -> Result<Dataset> {
    let root = root.as_ref();
    let mut candidates: Vec<(String, String)> = Vec::new();
    let entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut category_dirs: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    category_dirs.sort();
    for category in &category_dirs {
        let dir = root.join(category);
        let mut uids: Vec<String> = fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_dir())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .collect();
        uids.sort();
        for uid in uids {
            candidates.push((category.clone(), uid));
        }
    }
    if candidates.is_empty() {
        return Err(Error::invalid(format!(
            "no <category>/<uid> directories under {root:?}"
        )));
    }

    let mut samples = Vec::new();
    let mut skipped = 0usize;
    let mut img_size = 0usize;
    for (category, uid) in &candidates {
        let dir = root.join(category).join(uid);
        let result = (|| -> Result<Sample> {
            let image = Image::load_png(dir.join("image.png"))?;
            if !image.is_finite_unit() {
                return Err(Error::invalid("image pixels outside [0,1]"));
            }
            let cloud =
                cloud_io::load_cloud(dir.join(format!("cloud.{}", cloud_io::CLOUD_EXT)))?;
            let cloud = if cloud.len() > n_points {
                farthest_point_sample(&cloud, n_points, seed)?
            } else if cloud.len() < n_points {
                return Err(Error::invalid(format!(
                    "cloud has {} points, need at least {n_points}",
                    cloud.len()
                )));
            } else {
                cloud
            };
            Ok(Sample::new(
                uid.clone(),
                category.clone(),
                image,
                Some(cloud.with_category(category)),
                Split::Train,
            ))
        })();
        match result {
            Ok(s) => {
                if img_size == 0 {
                    img_size = s.image.height;
                }
                samples.push(s);
            }
            Err(e) => {
                skipped += 1;
                log::warn!("skipping {category}/{uid}: {e}");
            }
        }
    }
    if skipped * 10 > candidates.len() {
        return Err(Error::invalid(format!(
            "{skipped} of {} samples unreadable; aborting ingestion",
            candidates.len()
        )));
    }
    let categories: Vec<String> = {
        let mut set = BTreeMap::new();
        for s in &samples {
            set.insert(s.category.clone(), ());
        }
        set.into_keys().collect()
    };
    Ok(Dataset {
        samples,
        categories,
        n_points,
        img_size,
        seed,
    })
}
