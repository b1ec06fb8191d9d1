use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use image::imageops::{resize, FilterType};

use crate::error::{Error, Result};
use crate::types::{FrameEntry, FrameManifest, ImageTensor, Split};

pub const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn ingestion(path: &Path, message: impl Into<String>) -> Error {
    Error::Ingestion {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Image files of a directory in file-name order.
fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| ingestion(dir, e.to_string()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image(p))
        .collect();
    files.sort();
    Ok(files)
}

/// Decodes every frame of a video with ffmpeg into `dir`.
fn extract_video(video: &Path, dir: &Path) -> Result<()> {
    let available = Command::new("ffmpeg").arg("-version").output().is_ok_and(|o| o.status.success());
    if !available {
        return Err(ingestion(
            video,
            "not an image directory and ffmpeg is not on PATH; extract the frames to a directory first",
        ));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let out = Command::new("ffmpeg")
        .args(["-loglevel", "error", "-nostdin", "-y", "-i"])
        .arg(video)
        .arg(dir.join("%06d.png"))
        .output()
        .map_err(|e| ingestion(video, e.to_string()))?;
    if !out.status.success() {
        return Err(ingestion(video, String::from_utf8_lossy(&out.stderr).trim().to_string()));
    }
    Ok(())
}

fn load_resized(path: &Path, height: usize, width: usize) -> Result<ImageTensor> {
    let img = image::open(path).map_err(|e| ingestion(path, e.to_string()))?.to_rgb8();
    let img = if (img.height() as usize, img.width() as usize) == (height, width) {
        img
    } else {
        resize(&img, width as u32, height as u32, FilterType::Triangle)
    };
    ImageTensor::from_rgb8(&img)
}

/// Keeps every `stride`-th frame of `input` (an image directory or a video
/// file), resizes it to exactly `height x width` and writes PNG frames plus a
/// manifest under `out_dir`. The first `round(n * train_ratio)` kept frames
/// form the train split. The camera tag is the input's file stem.
pub fn ingest_video(
    input: &Path,
    out_dir: &Path,
    (height, width): (usize, usize),
    stride: usize,
    train_ratio: f64,
    tags: &[(&str, &str)],
) -> Result<FrameManifest> {
    if stride == 0 {
        return Err(Error::Argument("stride must be at least 1".into()));
    }
    let camera = input
        .file_stem()
        .and_then(|s| s.to_str())
        .filter(|s| !s.is_empty())
        .unwrap_or("ingest")
        .to_string();
    let scratch = out_dir.join(".extract");
    let sources = if input.is_dir() {
        list_images(input)?
    } else if input.is_file() {
        extract_video(input, &scratch)?;
        list_images(&scratch)?
    } else {
        return Err(ingestion(input, "no such file or directory"));
    };
    if sources.is_empty() {
        return Err(ingestion(input, "contains no frames"));
    }
    let frames_dir = out_dir.join("frames");
    fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;
    let kept: Vec<&PathBuf> = sources.iter().step_by(stride).collect();
    let n_train = (kept.len() as f64 * train_ratio).round() as usize;
    let mut entries = Vec::with_capacity(kept.len());
    for (i, src) in kept.into_iter().enumerate() {
        let frame_id = format!("{camera}-{i:05}");
        let img = load_resized(src, height, width)?;
        let rel = Path::new("frames").join(format!("{frame_id}.png"));
        img.save_png(out_dir.join(&rel), tags)?;
        entries.push(FrameEntry {
            frame_id,
            path: rel,
            split: if i < n_train { Split::Train } else { Split::Test },
            camera: camera.clone(),
            labels: None,
        });
    }
    if scratch.exists() {
        fs::remove_dir_all(&scratch).map_err(|e| Error::io(&scratch, e))?;
    }
    let manifest = FrameManifest::new(out_dir, entries)?;
    manifest.write_with_header(out_dir.join("manifest.jsonl"), tags)?;
    Ok(manifest)
}
