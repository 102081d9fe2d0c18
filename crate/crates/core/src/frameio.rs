//! Frame decoding, dataset discovery and the train/test split.
//!
//! Datasets are laid out as `root/<class>/<video>/<frame files>`. Classes and
//! videos are ordered lexicographically and frames within a video follow
//! filename order, so the manifest never depends on directory-walk order.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageFormat, ImageReader};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::Frame;

pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

const FRAME_EXTENSIONS: [&str; 2] = ["pgm", "png"];

/// Decodes an 8-bit PGM or an 8/24-bit PNG into a grayscale frame.
pub fn load_frame(path: impl AsRef<Path>) -> Result<Frame> {
    let path = path.as_ref();
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    match reader.format() {
        Some(ImageFormat::Png) | Some(ImageFormat::Pnm) => {}
        other => {
            return Err(Error::UnsupportedFormat {
                path: path.to_path_buf(),
                message: format!("expected PGM or PNG, detected {other:?}"),
            })
        }
    }
    let image = reader.decode().map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let (width, height) = (image.width() as usize, image.height() as usize);
    if width == 0 || height == 0 {
        return Err(Error::Decode {
            path: path.to_path_buf(),
            message: "zero-sized image".into(),
        });
    }
    let pixels: Vec<f64> = match &image {
        DynamicImage::ImageLuma8(buf) => buf.as_raw().iter().map(|&v| v as f64).collect(),
        DynamicImage::ImageLumaA8(buf) => buf.as_raw().chunks_exact(2).map(|p| p[0] as f64).collect(),
        DynamicImage::ImageRgb8(buf) => buf.as_raw().chunks_exact(3).map(luma).collect(),
        DynamicImage::ImageRgba8(buf) => buf.as_raw().chunks_exact(4).map(luma).collect(),
        other => {
            return Err(Error::UnsupportedFormat {
                path: path.to_path_buf(),
                message: format!("unsupported pixel layout {:?}", other.color()),
            })
        }
    };
    Frame::new(width, height, pixels)
}

fn luma(rgb: &[u8]) -> f64 {
    LUMA_WEIGHTS[0] * rgb[0] as f64 + LUMA_WEIGHTS[1] * rgb[1] as f64 + LUMA_WEIGHTS[2] * rgb[2] as f64
}

/// Writes a frame as binary 8-bit PGM, rounding and clamping each pixel.
pub fn save_pgm(frame: &Frame, path: impl AsRef<Path>) -> Result<()> {
    save_pgm_bytes(&frame.to_u8(), frame.width(), frame.height(), path)
}

pub fn save_pgm_bytes(bytes: &[u8], width: usize, height: usize, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    PnmEncoder::new(BufWriter::new(file))
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(bytes, width as u32, height as u32, ExtendedColorType::L8)
        .map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoEntry {
    /// Class index into [`DatasetManifest::classes`].
    pub class: usize,
    /// `<class>/<video>` directory pair.
    pub id: String,
    pub frames: Vec<PathBuf>,
    pub split: Option<Split>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub classes: Vec<String>,
    pub videos: Vec<VideoEntry>,
}

impl DatasetManifest {
    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn videos_in(&self, split: Split) -> impl Iterator<Item = &VideoEntry> {
        self.videos.iter().filter(move |v| v.split == Some(split))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| Error::artifact(path, e))?;
        manifest.validate().map_err(|e| Error::artifact(path, e))?;
        Ok(manifest)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    fn validate(&self) -> Result<()> {
        for v in &self.videos {
            if v.class >= self.classes.len() {
                return Err(Error::Dataset(format!("video {} has class {} out of range", v.id, v.class)));
            }
            if v.frames.is_empty() {
                return Err(Error::Dataset(format!("video {} has no frames", v.id)));
            }
        }
        Ok(())
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.starts_with('.') {
            continue;
        }
        out.push((name, entry.path()));
    }
    out.sort();
    Ok(out)
}

fn is_frame_file(path: &Path) -> bool {
    path.is_file()
        && path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| FRAME_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Enumerates `root/<class>/<video>/<frames>` into a manifest with no split.
pub fn scan_dataset(root: impl AsRef<Path>) -> Result<DatasetManifest> {
    let root = root.as_ref();
    let mut classes = Vec::new();
    let mut videos = Vec::new();
    for (class_name, class_dir) in sorted_entries(root)? {
        if !class_dir.is_dir() {
            continue;
        }
        let class = classes.len();
        let mut n_videos = 0;
        for (video_name, video_dir) in sorted_entries(&class_dir)? {
            if !video_dir.is_dir() {
                continue;
            }
            let frames: Vec<PathBuf> = sorted_entries(&video_dir)?
                .into_iter()
                .map(|(_, p)| p)
                .filter(|p| is_frame_file(p))
                .collect();
            if frames.is_empty() {
                return Err(Error::Dataset(format!(
                    "video {} has no frame files",
                    video_dir.display()
                )));
            }
            videos.push(VideoEntry {
                class,
                id: format!("{class_name}/{video_name}"),
                frames,
                split: None,
            });
            n_videos += 1;
        }
        if n_videos == 0 {
            return Err(Error::Dataset(format!(
                "class directory {} contains no videos",
                class_dir.display()
            )));
        }
        classes.push(class_name);
    }
    if classes.is_empty() {
        return Err(Error::Dataset(format!("no class directories under {}", root.display())));
    }
    Ok(DatasetManifest { classes, videos })
}

/// Number of training videos for a class with `n` videos.
pub fn train_count(n: usize, train_fraction: f64) -> usize {
    match n {
        0 => 0,
        1 => 1,
        n => ((train_fraction * n as f64).round() as usize).clamp(1, n - 1),
    }
}

/// Assigns each video to Train or Test, class by class.
pub fn split_dataset(manifest: &DatasetManifest, train_fraction: f64, seed: u64) -> Result<DatasetManifest> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!("train fraction {train_fraction} outside (0, 1)")));
    }
    let mut out = manifest.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for class in 0..manifest.n_classes() {
        let mut members: Vec<usize> = (0..out.videos.len()).filter(|&i| out.videos[i].class == class).collect();
        if members.is_empty() {
            return Err(Error::Dataset(format!("class {} has no videos", manifest.classes[class])));
        }
        members.sort_by(|&a, &b| out.videos[a].id.cmp(&out.videos[b].id));
        members.shuffle(&mut rng);
        let n_train = train_count(members.len(), train_fraction);
        for (rank, &i) in members.iter().enumerate() {
            out.videos[i].split = Some(if rank < n_train { Split::Train } else { Split::Test });
        }
    }
    Ok(out)
}
