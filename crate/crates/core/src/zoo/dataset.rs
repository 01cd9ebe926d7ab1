use super::scene::{CarBox, Scene, SceneConfig};
use super::ZooError;
use crate::tensor::{Shape, Tensor};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub seed: u64,
    pub n: usize,
    pub config: SceneConfig,
    pub classes: Vec<String>,
    pub images: Vec<String>,
    pub masks: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRecord {
    pub image: String,
    pub boxes: Vec<CarBox>,
}

/// Generates `n` scenes in parallel; scene `i` depends only on `(seed, i)`.
pub fn generate_scenes(config: &SceneConfig, n: usize, seed: u64) -> Vec<Scene> {
    (0..n as u64)
        .into_par_iter()
        .map(|i| config.generate(seed, i))
        .collect()
}

fn image_name(i: usize) -> String {
    format!("{i:04}.png")
}

/// Writes `n` scenes plus masks, boxes and a manifest under `out`.
pub fn gen_dataset(config: &SceneConfig, n: usize, seed: u64, out: &Path) -> Result<DatasetManifest, ZooError> {
    if n == 0 {
        return Err(ZooError::Config("n must be >= 1".into()));
    }
    config.validate().map_err(ZooError::Config)?;
    let scenes = generate_scenes(config, n, seed);
    for sub in ["images", "masks"] {
        fs::create_dir_all(out.join(sub)).map_err(|e| ZooError::io(&out.join(sub), e))?;
    }
    scenes
        .par_iter()
        .enumerate()
        .try_for_each(|(i, scene)| -> Result<(), ZooError> {
            let name = image_name(i);
            write_rgb_png(&scene.image, &out.join("images").join(&name))?;
            write_mask_png(&scene.mask, config.size, &out.join("masks").join(&name))
        })?;
    let boxes: Vec<BoxRecord> = scenes
        .iter()
        .enumerate()
        .map(|(i, s)| BoxRecord {
            image: format!("images/{}", image_name(i)),
            boxes: s.boxes.clone(),
        })
        .collect();
    write_json(&out.join("boxes.json"), &boxes)?;
    let manifest = DatasetManifest {
        format_version: 1,
        seed,
        n,
        config: config.clone(),
        classes: vec!["background".into(), "flood".into(), "road".into()],
        images: (0..n).map(|i| format!("images/{}", image_name(i))).collect(),
        masks: (0..n).map(|i| format!("masks/{}", image_name(i))).collect(),
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ZooError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| ZooError::Format(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| ZooError::io(path, e))
}

/// A dataset read back from disk.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
    pub scenes: Vec<Scene>,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Dataset, ZooError> {
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| ZooError::io(&path, e))?;
        let manifest: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| ZooError::Format(format!("{}: {e}", path.display())))?;
        let boxes_path = dir.join("boxes.json");
        let text = fs::read_to_string(&boxes_path).map_err(|e| ZooError::io(&boxes_path, e))?;
        let boxes: Vec<BoxRecord> =
            serde_json::from_str(&text).map_err(|e| ZooError::Format(format!("{}: {e}", boxes_path.display())))?;
        if boxes.len() != manifest.n || manifest.images.len() != manifest.n || manifest.masks.len() != manifest.n {
            return Err(ZooError::Format("manifest, boxes and file lists disagree on n".into()));
        }
        let scenes = (0..manifest.n)
            .into_par_iter()
            .map(|i| {
                let image = read_rgb_png(&dir.join(&manifest.images[i]))?;
                let mask = read_mask_png(&dir.join(&manifest.masks[i]))?;
                Ok(Scene {
                    image,
                    mask,
                    boxes: boxes[i].boxes.clone(),
                })
            })
            .collect::<Result<Vec<_>, ZooError>>()?;
        Ok(Dataset {
            root: dir.to_path_buf(),
            manifest,
            scenes,
        })
    }

    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }
}

pub fn write_rgb_png(image: &Tensor, path: &Path) -> Result<(), ZooError> {
    let s = image.shape();
    if s.n != 1 || s.c != 3 {
        return Err(ZooError::Format(format!("expected a (1,3,H,W) image, got {s}")));
    }
    let plane = s.plane();
    let mut buf = Vec::with_capacity(3 * plane);
    for p in 0..plane {
        for c in 0..3 {
            buf.push((image.data()[c * plane + p].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    let img = image::RgbImage::from_raw(s.w as u32, s.h as u32, buf).expect("sized buffer");
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| ZooError::Format(format!("{}: {e}", path.display())))
}

pub fn read_rgb_png(path: &Path) -> Result<Tensor, ZooError> {
    let img = image::open(path)
        .map_err(|e| ZooError::Format(format!("{}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0; 3 * w * h];
    for (p, px) in img.pixels().enumerate() {
        for c in 0..3 {
            data[c * w * h + p] = px[c] as f64 / 255.0;
        }
    }
    Ok(Tensor::from_vec(Shape::new(1, 3, h, w), data).expect("sized"))
}

fn write_mask_png(mask: &[u8], size: usize, path: &Path) -> Result<(), ZooError> {
    let img = image::GrayImage::from_raw(size as u32, size as u32, mask.to_vec()).expect("sized mask");
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| ZooError::Format(format!("{}: {e}", path.display())))
}

pub fn read_mask_png(path: &Path) -> Result<Vec<u8>, ZooError> {
    Ok(image::open(path)
        .map_err(|e| ZooError::Format(format!("{}: {e}", path.display())))?
        .to_luma8()
        .into_raw())
}
