//! Image I/O, preprocessing, dataset splitting and synthetic rain.

pub mod io;
pub mod rain;
pub mod resize;
pub mod scene;
pub mod synth;

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use io::{load_grayscale, read_manifest, save_pgm, write_manifest, write_pgm, Gray8};
pub use rain::{synthesize_half_degraded, synthesize_rain, RainConfig};
pub use resize::resize_bilinear;
pub use scene::procedural_scene;
pub use synth::SyntheticConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct ImagePair {
    pub rainy: Tensor,
    pub clean: Tensor,
    pub id: String,
}

impl ImagePair {
    pub fn new(rainy: Tensor, clean: Tensor, id: impl Into<String>) -> Result<Self> {
        rainy.same_shape(&clean)?;
        Ok(Self {
            rainy,
            clean,
            id: id.into(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Seeded 80/10/10 split over distinct ids.
///
/// Repeated ids (e.g. every rainy variant of one clean image) collapse into one
/// group, so all variants land in the same split. Validation and test each get
/// `floor(n / 10)` groups; the remainder goes to training.
pub fn split_dataset(ids: &[String], seed: u64) -> DatasetSplit {
    let mut seen = HashSet::new();
    let mut unique: Vec<String> = ids.iter().filter(|id| seen.insert(id.as_str())).cloned().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    unique.shuffle(&mut rng);
    let n = unique.len();
    let n_val = n / 10;
    let n_test = n / 10;
    let test = unique.split_off(n - n_test);
    let val = unique.split_off(n - n_test - n_val);
    DatasetSplit {
        train: unique,
        val,
        test,
    }
}

/// Loads one rainy/clean pair, optionally resizing both images. The id is the
/// rainy file's stem.
pub fn load_pair(rainy_path: &Path, clean_path: &Path, resize: Option<(usize, usize)>) -> Result<ImagePair> {
    let mut rainy = load_grayscale(rainy_path)?;
    let mut clean = load_grayscale(clean_path)?;
    if let Some((h, w)) = resize {
        rainy = resize_bilinear(&rainy, h, w)?;
        clean = resize_bilinear(&clean, h, w)?;
    }
    if rainy.shape() != clean.shape() {
        return Err(Error::image(
            rainy_path,
            format!("size {:?} differs from clean image {:?}", rainy.shape(), clean.shape()),
        ));
    }
    let id = rainy_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    ImagePair::new(rainy, clean, id)
}

pub fn load_pairs(manifest: impl AsRef<Path>, resize: Option<(usize, usize)>) -> Result<Vec<ImagePair>> {
    read_manifest(manifest)?
        .iter()
        .map(|(r, c)| load_pair(r, c, resize))
        .collect()
}
