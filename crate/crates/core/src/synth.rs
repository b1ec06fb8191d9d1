//! Synthetic surveillance-like frames with exact person boxes.
//!
//! A frame is a tinted gradient background with a periodic texture, a few
//! distractor blobs (discs and squares) and one or more figures. A figure is a
//! head ellipse over a torso rectangle and two leg bars; its label is the tight
//! bounding box of the painted pixels.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{
    clamp_image, BoundingBox, FrameEntry, FrameManifest, ImageTensor, Label, LabelSet, Provenance,
    Split, CHANNELS, PERSON_CLASS,
};

const PLACEMENT_RETRIES: usize = 200;
/// Narrowest figure in pixels; keeps two figure centres out of one 8-pixel cell.
const MIN_FIGURE_WIDTH: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Texture {
    Waves,
    Checker,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub camera: String,
    /// Inclusive range of figures per frame.
    pub figures: [usize; 2],
    /// Figure height as a fraction of the frame height.
    pub figure_scale: [f64; 2],
    /// Figure width over figure height.
    pub figure_aspect: [f64; 2],
    /// Background color before illumination.
    pub background: [f64; 3],
    /// Relative darkening from top to bottom.
    pub gradient: f64,
    pub texture: Texture,
    pub texture_amplitude: f64,
    /// Texture period in pixels.
    pub texture_period: f64,
    /// Inclusive range of distractor shapes per frame.
    pub distractors: [usize; 2],
    /// Global intensity scale applied last.
    pub illumination: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            height: 200,
            width: 320,
            camera: "cam-a".into(),
            figures: [1, 3],
            figure_scale: [0.35, 0.6],
            figure_aspect: [0.4, 0.55],
            background: [0.78, 0.74, 0.66],
            gradient: 0.15,
            texture: Texture::Waves,
            texture_amplitude: 0.05,
            texture_period: 12.0,
            distractors: [1, 3],
            illumination: 1.0,
            seed: 0,
        }
    }
}

impl SceneSpec {
    /// The second camera: darker, checker-textured, smaller figures.
    pub fn second_camera(&self) -> SceneSpec {
        SceneSpec {
            camera: "cam-b".into(),
            figure_scale: [self.figure_scale[0] * 0.9, self.figure_scale[1] * 0.9],
            texture: Texture::Checker,
            texture_amplitude: 0.04,
            texture_period: 6.0,
            illumination: self.illumination * 0.8,
            ..self.clone()
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.height < crate::types::MIN_SIDE || self.width < crate::types::MIN_SIDE {
            return bad(format!("scene {}x{} is too small", self.height, self.width));
        }
        if self.figures[0] < 1 || self.figures[0] > self.figures[1] {
            return bad(format!("figure count range {:?} must be non-empty and start at 1 or more", self.figures));
        }
        if self.distractors[0] > self.distractors[1] {
            return bad(format!("distractor range {:?} is empty", self.distractors));
        }
        let ordered = |r: [f64; 2]| r[0] > 0.0 && r[0] <= r[1];
        if !ordered(self.figure_scale) || self.figure_scale[1] > 1.0 || !ordered(self.figure_aspect) {
            return bad("figure scale and aspect ranges must be positive and ordered, scale at most 1".into());
        }
        if !(self.texture_period > 0.0) || !(self.illumination > 0.0) {
            return bad("texture period and illumination must be positive".into());
        }
        Ok(())
    }

    fn frame_rng(&self, index: usize) -> ChaCha8Rng {
        // FNV-1a over the camera tag keeps cameras on separate streams.
        let salt = self
            .camera
            .bytes()
            .fold(0xcbf2_9ce4_8422_2325_u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3));
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ salt);
        rng.set_stream(index as u64);
        rng
    }
}

struct Canvas {
    h: usize,
    w: usize,
    v: Vec<f64>,
}

impl Canvas {
    fn put(&mut self, x: usize, y: usize, c: [f64; 3]) {
        let i = (y * self.w + x) * CHANNELS;
        self.v[i..i + CHANNELS].copy_from_slice(&c);
    }

    fn rect(&mut self, x0: usize, y0: usize, x1: usize, y1: usize, c: [f64; 3], mask: &mut Option<&mut Extent>) {
        for y in y0..y1.min(self.h) {
            for x in x0..x1.min(self.w) {
                self.put(x, y, c);
                if let Some(m) = mask.as_deref_mut() {
                    m.add(x, y);
                }
            }
        }
    }

    /// Pixels whose centres fall inside the ellipse.
    fn ellipse(&mut self, cx: f64, cy: f64, rx: f64, ry: f64, c: [f64; 3], mask: &mut Option<&mut Extent>) {
        let y0 = (cy - ry).floor().max(0.0) as usize;
        let x0 = (cx - rx).floor().max(0.0) as usize;
        for y in y0..((cy + ry).ceil() as usize).min(self.h) {
            for x in x0..((cx + rx).ceil() as usize).min(self.w) {
                let dx = (x as f64 + 0.5 - cx) / rx;
                let dy = (y as f64 + 0.5 - cy) / ry;
                if dx * dx + dy * dy <= 1.0 {
                    self.put(x, y, c);
                    if let Some(m) = mask.as_deref_mut() {
                        m.add(x, y);
                    }
                }
            }
        }
    }
}

/// Bounding extent of painted pixels.
#[derive(Default)]
struct Extent(Option<(usize, usize, usize, usize)>);

impl Extent {
    fn add(&mut self, x: usize, y: usize) {
        self.0 = Some(match self.0 {
            None => (x, y, x, y),
            Some((a, b, c, d)) => (a.min(x), b.min(y), c.max(x), d.max(y)),
        });
    }
}

fn random_color(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> [f64; 3] {
    [rng.random_range(lo..hi), rng.random_range(lo..hi), rng.random_range(lo..hi)]
}

/// Renders frame `index` of a scene with its exact person boxes.
pub fn render_frame(scene: &SceneSpec, index: usize) -> Result<(ImageTensor, Vec<BoundingBox>)> {
    scene.validate()?;
    let (h, w) = (scene.height, scene.width);
    let mut rng = scene.frame_rng(index);
    let mut canvas = Canvas {
        h,
        w,
        v: vec![0.0; h * w * CHANNELS],
    };

    let tint: Vec<f64> = (0..3).map(|_| rng.random_range(-0.04..0.04)).collect();
    let (px, py) = (
        rng.random_range(0.0..scene.texture_period),
        rng.random_range(0.0..scene.texture_period),
    );
    let tau = std::f64::consts::TAU;
    for y in 0..h {
        let shade = 1.0 - scene.gradient * y as f64 / h as f64;
        for x in 0..w {
            let (fx, fy) = ((x as f64 + px) / scene.texture_period, (y as f64 + py) / scene.texture_period);
            let t = match scene.texture {
                Texture::Waves => (tau * fx).sin() * (tau * 0.7 * fy).sin(),
                Texture::Checker => {
                    if (fx.floor() + fy.floor()) as i64 % 2 == 0 {
                        1.0
                    } else {
                        -1.0
                    }
                }
            };
            let mut c = [0.0; 3];
            for (ch, v) in c.iter_mut().enumerate() {
                *v = (scene.background[ch] + tint[ch]) * shade + scene.texture_amplitude * t;
            }
            canvas.put(x, y, c);
        }
    }

    let n_distractors = rng.random_range(scene.distractors[0]..=scene.distractors[1]);
    for _ in 0..n_distractors {
        let size = (rng.random_range(0.08..0.18) * h as f64).round().max(2.0);
        let cx = rng.random_range(0.0..w as f64);
        let cy = rng.random_range(0.0..h as f64);
        let color = random_color(&mut rng, 0.2, 0.95);
        if rng.random_bool(0.5) {
            canvas.ellipse(cx, cy, size / 2.0, size / 2.0, color, &mut None);
        } else {
            let x0 = (cx - size / 2.0).max(0.0) as usize;
            let y0 = (cy - size / 2.0).max(0.0) as usize;
            canvas.rect(x0, y0, x0 + size as usize, y0 + size as usize, color, &mut None);
        }
    }

    let n_figures = rng.random_range(scene.figures[0]..=scene.figures[1]);
    let mut placed: Vec<(usize, usize, usize, usize)> = Vec::new();
    let mut boxes = Vec::with_capacity(n_figures);
    for f in 0..n_figures {
        let mut spot = None;
        for _ in 0..PLACEMENT_RETRIES {
            let fh = (rng.random_range(scene.figure_scale[0]..=scene.figure_scale[1]) * h as f64).round() as usize;
            let fw = ((rng.random_range(scene.figure_aspect[0]..=scene.figure_aspect[1]) * fh as f64).round() as usize)
                .max(MIN_FIGURE_WIDTH);
            if fh < 4 || fh > h || fw > w {
                continue;
            }
            let x0 = rng.random_range(0..=w - fw);
            let y0 = rng.random_range(0..=h - fh);
            // one pixel of clearance between figures
            let clear = placed.iter().all(|&(a, b, c, d)| {
                x0 + fw < a || c + 1 < x0 || y0 + fh < b || d + 1 < y0
            });
            if clear {
                spot = Some((x0, y0, fw, fh));
                break;
            }
        }
        let (x0, y0, fw, fh) = spot.ok_or_else(|| {
            Error::Generation(format!(
                "could not place figure {f} of frame {index} after {PLACEMENT_RETRIES} attempts"
            ))
        })?;
        let shirt = random_color(&mut rng, 0.05, 0.45);
        let pants = random_color(&mut rng, 0.02, 0.25);
        let skin_k = rng.random_range(0.45..0.9);
        let skin = [0.95 * skin_k, 0.75 * skin_k, 0.6 * skin_k];
        let mut extent = Extent::default();
        let mut mask = Some(&mut extent);
        let head_h = (fh as f64 * 0.25).max(2.0);
        let torso_end = y0 + (fh as f64 * 0.65).round() as usize;
        canvas.ellipse(x0 as f64 + fw as f64 / 2.0, y0 as f64 + head_h / 2.0, fw as f64 * 0.28, head_h / 2.0, skin, &mut mask);
        canvas.rect(x0, y0 + head_h.round() as usize, x0 + fw, torso_end, shirt, &mut mask);
        let leg = ((fw as f64) * 0.4).round().max(1.0) as usize;
        canvas.rect(x0, torso_end, x0 + leg, y0 + fh, pants, &mut mask);
        canvas.rect(x0 + fw - leg, torso_end, x0 + fw, y0 + fh, pants, &mut mask);
        let (a, b, c, d) = extent.0.expect("figure paints pixels");
        placed.push((a, b, c, d));
        boxes.push(BoundingBox::new(a as f64, b as f64, (c + 1) as f64, (d + 1) as f64)?);
    }

    for v in &mut canvas.v {
        *v *= scene.illumination;
    }
    Ok((clamp_image(h, w, CHANNELS, canvas.v)?, boxes))
}

/// Writes `n_frames` PNG frames under `out_dir/frames` plus `out_dir/manifest.jsonl`.
/// The first `round(n_frames * split_ratio)` frames form the train split.
/// `tags` are embedded as PNG text chunks and manifest header lines.
pub fn generate_dataset(
    scene: &SceneSpec,
    n_frames: usize,
    split_ratio: f64,
    out_dir: &Path,
    tags: &[(&str, &str)],
) -> Result<FrameManifest> {
    if n_frames == 0 {
        return Err(Error::Argument("n_frames must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&split_ratio) {
        return Err(Error::Argument(format!("split ratio {split_ratio} outside [0, 1]")));
    }
    let frames_dir = out_dir.join("frames");
    fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;
    let n_train = (n_frames as f64 * split_ratio).round() as usize;
    let mut entries = Vec::with_capacity(n_frames);
    for i in 0..n_frames {
        let frame_id = format!("{}-{i:05}", scene.camera);
        let (img, boxes) = render_frame(scene, i).map_err(|e| e.in_frame(&frame_id))?;
        let rel = Path::new("frames").join(format!("{frame_id}.png"));
        img.save_png(out_dir.join(&rel), tags)?;
        let labels = boxes
            .into_iter()
            .map(|bbox| Label {
                bbox,
                class_id: PERSON_CLASS,
                score: None,
            })
            .collect();
        entries.push(FrameEntry {
            labels: Some(LabelSet::new(frame_id.clone(), labels, Provenance::SyntheticExact)),
            frame_id,
            path: rel,
            split: if i < n_train { Split::Train } else { Split::Test },
            camera: scene.camera.clone(),
        });
    }
    let manifest = FrameManifest::new(out_dir, entries)?;
    manifest.write_with_header(out_dir.join("manifest.jsonl"), tags)?;
    Ok(manifest)
}

/// Two datasets of the same size from `scene` and its [`SceneSpec::second_camera`],
/// written under `out_dir/<camera>`.
pub fn two_camera_variant(
    scene: &SceneSpec,
    n_frames: usize,
    split_ratio: f64,
    out_dir: &Path,
    tags: &[(&str, &str)],
) -> Result<(FrameManifest, FrameManifest)> {
    let b = scene.second_camera();
    if b.camera == scene.camera {
        return Err(Error::Config("both cameras would share one tag".into()));
    }
    let ma = generate_dataset(scene, n_frames, split_ratio, &out_dir.join(&scene.camera), tags)?;
    let mb = generate_dataset(&b, n_frames, split_ratio, &out_dir.join(&b.camera), tags)?;
    Ok((ma, mb))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SceneSpec {
        SceneSpec {
            height: 48,
            width: 64,
            ..SceneSpec::default()
        }
    }

    #[test]
    fn boxes_are_inside_and_tight() {
        let scene = small();
        for i in 0..30 {
            let (img, boxes) = render_frame(&scene, i).unwrap();
            assert!((1..=3).contains(&boxes.len()));
            for b in &boxes {
                assert!(b.area() > 0.0);
                assert!(b.x_min() >= 0.0 && b.y_min() >= 0.0);
                assert!(b.x_max() <= 64.0 && b.y_max() <= 48.0);
                assert!(b.width() >= MIN_FIGURE_WIDTH as f64);
            }
            assert_eq!((img.height(), img.width()), (48, 64));
        }
    }

    #[test]
    fn figure_centres_use_distinct_grid_cells() {
        let scene = small();
        for i in 0..50 {
            let (_, boxes) = render_frame(&scene, i).unwrap();
            let mut cells: Vec<(i64, i64)> = boxes
                .iter()
                .map(|b| {
                    let (x, y) = b.center();
                    ((x / 8.0).floor() as i64, (y / 8.0).floor() as i64)
                })
                .collect();
            cells.sort_unstable();
            cells.dedup();
            assert_eq!(cells.len(), boxes.len());
        }
    }

    #[test]
    fn rendering_is_deterministic_per_frame() {
        let scene = small();
        assert_eq!(render_frame(&scene, 3).unwrap(), render_frame(&scene, 3).unwrap());
        assert_ne!(render_frame(&scene, 3).unwrap().0, render_frame(&scene, 4).unwrap().0);
    }

    #[test]
    fn placement_failure_is_reported() {
        let scene = SceneSpec {
            figures: [40, 40],
            ..small()
        };
        assert!(matches!(render_frame(&scene, 0), Err(Error::Generation(_))));
    }

    #[test]
    fn cameras_differ_in_brightness() {
        let a = small();
        let b = a.second_camera();
        let mean = |s: &SceneSpec| (0..20).map(|i| render_frame(s, i).unwrap().0.mean()).sum::<f64>() / 20.0;
        assert!(mean(&a) - mean(&b) >= 0.1);
    }
}
