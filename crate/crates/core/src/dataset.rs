//! Paired `(x̄, y)` datasets on disk and synthetic textured test images.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{add_noise, apply_forward, save_kernel, NoiseModel, SaturatedBlurModel};
use crate::io;
use crate::tensor::Image;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairEntry {
    pub name: String,
    /// Paths are relative to the manifest directory.
    pub clean: String,
    pub measured: String,
    pub noise_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub kernels: Vec<String>,
    pub delta: f64,
    pub sigma: f64,
    pub seed: u64,
    pub pairs: Vec<PairEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPair {
    pub clean: Image,
    pub measured: Image,
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file() && matches!(io::extension(p).as_deref(), Some("pgm") | Some("f32t"))
        })
        .collect();
    paths.sort();
    Ok(paths)
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Reads every `.pgm` / `.f32t` image in `dir`, sorted by name. Unreadable
/// files are skipped with a warning.
pub fn read_image_dir(dir: impl AsRef<Path>) -> Result<Vec<(String, Image)>> {
    let mut out = Vec::new();
    for path in list_images(dir.as_ref())? {
        match io::read_image(&path) {
            Ok(img) => {
                let stem = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                out.push((stem, img));
            }
            Err(e) => log::warn!("skipping {}: {e}", path.display()),
        }
    }
    Ok(out)
}

/// Simulates `y = F(x̄) + w` for every image in `clean_dir`.
///
/// Layout of `out_dir`: `clean/` and `measured/` (F32T, `y` unclipped),
/// `preview/` (PGM, clipped), `kernels/` and `manifest.json`. Image `i`
/// (in name order) is perturbed with noise seed `noise.seed + i`.
pub fn simulate_dataset(
    clean_dir: impl AsRef<Path>,
    model: &SaturatedBlurModel,
    noise: &NoiseModel,
    out_dir: impl AsRef<Path>,
) -> Result<usize> {
    let clean_dir = clean_dir.as_ref();
    let out_dir = out_dir.as_ref();
    let images = read_image_dir(clean_dir)?;
    if images.is_empty() {
        return Err(Error::Config(format!(
            "no readable images in {}",
            clean_dir.display()
        )));
    }
    for sub in ["clean", "measured", "preview", "kernels"] {
        create_dir(&out_dir.join(sub))?;
    }

    let mut kernels = Vec::new();
    for (k, kernel) in model.kernels().iter().enumerate() {
        let rel = format!("kernels/kernel_{k}.f32t");
        save_kernel(out_dir.join(&rel), kernel)?;
        kernels.push(rel);
    }

    let mut pairs = Vec::new();
    for (i, (name, x)) in images.iter().enumerate() {
        let nm = NoiseModel::new(noise.sigma, noise.seed.wrapping_add(i as u64))?;
        let y = add_noise(&apply_forward(model, x)?, &nm)?;
        let clean = format!("clean/{name}.f32t");
        let measured = format!("measured/{name}.f32t");
        io::write_f32t(out_dir.join(&clean), x.as_tensor())?;
        io::write_f32t(out_dir.join(&measured), y.as_tensor())?;
        io::write_pgm(out_dir.join(format!("preview/{name}_clean.pgm")), x)?;
        io::write_pgm(out_dir.join(format!("preview/{name}_measured.pgm")), &y)?;
        pairs.push(PairEntry {
            name: name.clone(),
            clean,
            measured,
            noise_seed: nm.seed,
        });
    }

    let manifest = Manifest {
        kernels,
        delta: model.saturation().delta,
        sigma: noise.sigma,
        seed: noise.seed,
        pairs,
    };
    let path = out_dir.join(MANIFEST_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)
        .map_err(|e| Error::io(&path, e))?;
    Ok(manifest.pairs.len())
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Manifest> {
    let path = dir.as_ref().join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Loads the pairs listed in `dir/manifest.json`.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Vec<TrainingPair>> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    manifest
        .pairs
        .iter()
        .map(|p| {
            let clean = Image::from_tensor(io::read_f32t(dir.join(&p.clean))?)?;
            let measured = Image::from_tensor(io::read_f32t(dir.join(&p.measured))?)?;
            if clean.as_tensor().shape() != measured.as_tensor().shape() {
                return Err(Error::shape(
                    clean.as_tensor().shape(),
                    measured.as_tensor().shape(),
                ));
            }
            Ok(TrainingPair { clean, measured })
        })
        .collect()
}

/// Deterministic piecewise-smooth image with edges and fine texture,
/// valued in `[0.05, 0.95]`.
pub fn synthetic_image(height: usize, width: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (hf, wf) = (height as f64, width as f64);
    let g0 = rng.random_range(0.25..0.75);
    let gi = rng.random_range(-0.3..0.3);
    let gj = rng.random_range(-0.3..0.3);

    enum Shape {
        Rect(f64, f64, f64, f64),
        Disc(f64, f64, f64),
    }
    let n_shapes = rng.random_range(4..9);
    let shapes: Vec<(Shape, f64)> = (0..n_shapes)
        .map(|_| {
            let level = rng.random_range(0.05..0.95);
            let shape = if rng.random_bool(0.5) {
                let (i0, j0) = (rng.random_range(0.0..hf), rng.random_range(0.0..wf));
                let (dh, dw) = (
                    rng.random_range(0.15..0.5) * hf,
                    rng.random_range(0.15..0.5) * wf,
                );
                Shape::Rect(i0, j0, i0 + dh, j0 + dw)
            } else {
                let r = rng.random_range(0.08..0.3) * hf.min(wf);
                Shape::Disc(rng.random_range(0.0..hf), rng.random_range(0.0..wf), r)
            };
            (shape, level)
        })
        .collect();
    let (fi, fj) = (rng.random_range(0.3..1.2), rng.random_range(0.3..1.2));
    let (amp, phase) = (rng.random_range(0.03..0.08), rng.random_range(0.0..6.0));

    Image::from_fn(height, width, |i, j| {
        let (y, x) = (i as f64, j as f64);
        let mut v = g0 + gi * (y / hf - 0.5) + gj * (x / wf - 0.5);
        for (shape, level) in &shapes {
            let inside = match *shape {
                Shape::Rect(i0, j0, i1, j1) => y >= i0 && y < i1 && x >= j0 && x < j1,
                Shape::Disc(ci, cj, r) => (y - ci).powi(2) + (x - cj).powi(2) <= r * r,
            };
            if inside {
                v = *level;
            }
        }
        v += amp * (fi * y + phase).sin() * (fj * x).cos();
        v.clamp(0.05, 0.95)
    })
}

/// Writes `count` synthetic images as PGM into `dir`.
pub fn write_synthetic_set(
    dir: impl AsRef<Path>,
    count: usize,
    height: usize,
    width: usize,
    seed: u64,
) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    create_dir(dir)?;
    (0..count)
        .map(|i| {
            let path = dir.join(format!("img_{i:03}.pgm"));
            io::write_pgm(
                &path,
                &synthetic_image(height, width, seed.wrapping_add(i as u64)),
            )?;
            Ok(path)
        })
        .collect()
}
