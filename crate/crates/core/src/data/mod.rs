//! Synthetic shapes, the viewpoint occlusion protocol, resampling and point
//! cloud files.

mod format;
mod occlusion;
mod shapes;

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::PointCloud;
use crate::model::{ModelConfig, TrainingSample};
use crate::nn::mix_seed;
use crate::scalar::Real;

pub use format::{parse_pcf, parse_xyz, read_cloud, to_pcf, to_xyz, write_cloud, CloudFormat, PCF_MAGIC};
pub use occlusion::{occlude, resample, Occlusion, OcclusionSpec, TRAIN_FRACTION_RANGE};
pub use shapes::{generate_shape, Shape, ShapeKind, ShapeSpec};

/// A generated training example and how it was made.
#[derive(Clone, Debug)]
pub struct SyntheticSample<T> {
    pub shape: ShapeSpec,
    pub occlusion: OcclusionSpec,
    pub sample: TrainingSample<T>,
}

/// Example `index` of the synthetic set for `seed`: kinds cycle through
/// [`ShapeKind::ALL`], dimensions and occlusion are random per example.
pub fn synthetic_sample<T: Real>(cfg: &ModelConfig, index: usize, seed: u64) -> Result<SyntheticSample<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, index as u64]));
    let kind = ShapeKind::ALL[index % ShapeKind::ALL.len()];
    let shape = ShapeSpec { shape: kind.random(&mut rng), samples: cfg.gt_points, seed: rng.random() };
    let occlusion = OcclusionSpec::random(&mut rng, cfg.input_points, cfg.missing_points);
    let gt = generate_shape::<T>(&shape)?;
    let parts = occlude(&gt, &occlusion)?;
    Ok(SyntheticSample {
        shape,
        occlusion,
        sample: TrainingSample { partial: parts.partial, gt, missing: parts.missing },
    })
}

pub fn synthetic_dataset<T: Real>(cfg: &ModelConfig, count: usize, seed: u64) -> Result<Vec<SyntheticSample<T>>> {
    (0..count).map(|i| synthetic_sample(cfg, i, seed)).collect()
}

/// How a saved sample was generated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub shape: ShapeSpec,
    pub occlusion: OcclusionSpec,
}

/// Meta file written next to each sample's clouds.
pub const SAMPLE_META: &str = "meta.json";

/// Writes `gt.pcf`, `partial.pcf`, `missing.pcf` and [`SAMPLE_META`] into
/// `dir`, creating it if needed.
pub fn save_sample<T: Real>(dir: impl AsRef<Path>, sample: &SyntheticSample<T>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    write_cloud(&sample.sample.gt, dir.join("gt.pcf"))?;
    write_cloud(&sample.sample.partial, dir.join("partial.pcf"))?;
    write_cloud(&sample.sample.missing, dir.join("missing.pcf"))?;
    let meta = SampleMeta { shape: sample.shape, occlusion: sample.occlusion };
    std::fs::write(dir.join(SAMPLE_META), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

pub fn load_sample<T: Real>(dir: impl AsRef<Path>) -> Result<TrainingSample<T>> {
    let dir = dir.as_ref();
    Ok(TrainingSample {
        gt: read_cloud(dir.join("gt.pcf"))?,
        partial: read_cloud(dir.join("partial.pcf"))?,
        missing: read_cloud(dir.join("missing.pcf"))?,
    })
}

/// Subdirectories of `root` holding a sample, in name order.
pub fn sample_dirs(root: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root.as_ref())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("partial.pcf").is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(invalid(format!("{}: no sample directories found", root.as_ref().display())));
    }
    Ok(dirs)
}

pub fn load_dataset<T: Real>(root: impl AsRef<Path>) -> Result<Vec<TrainingSample<T>>> {
    sample_dirs(root)?.iter().map(load_sample).collect()
}

/// Unit cube surface with the `z = +0.5` face removed from the partial scan;
/// `missing_idx` lists the GT indices on that face.
#[derive(Clone, Debug)]
pub struct FaceFixture<T> {
    pub gt: PointCloud<T>,
    pub partial: PointCloud<T>,
    pub missing_idx: Vec<usize>,
}

pub fn cube_minus_face<T: Real>(points: usize, seed: u64) -> Result<FaceFixture<T>> {
    let spec = ShapeSpec { shape: Shape::Cube { half_extent: 0.5 }, samples: points, seed };
    let gt = generate_shape::<T>(&spec)?;
    let top = T::lit(0.5);
    let (missing_idx, kept): (Vec<usize>, Vec<usize>) = (0..gt.len()).partition(|&i| gt.points()[i][2] == top);
    let partial = gt.select(&kept);
    Ok(FaceFixture { gt, partial, missing_idx })
}
