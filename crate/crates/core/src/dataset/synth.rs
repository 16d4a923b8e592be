//! Deterministic synthetic data: bright squares over textured noise.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{format_annotation, DatasetError};
use crate::imaging::{save_pgm, GrayImage, Rect};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub window: usize,
    pub positives: usize,
    pub negatives: usize,
    pub negative_size: usize,
    pub scenes: usize,
    pub scene_width: usize,
    pub scene_height: usize,
    pub max_objects: usize,
    /// Scene objects are drawn at a scale in `[1, max_object_scale]`.
    pub max_object_scale: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            window: 24,
            positives: 600,
            negatives: 80,
            negative_size: 128,
            scenes: 50,
            scene_width: 160,
            scene_height: 120,
            max_objects: 2,
            max_object_scale: 2.0,
        }
    }
}

/// One rendered object: the annotated window and the square inside it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SceneObject {
    pub window: Rect,
    pub square: Rect,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthDataset {
    pub positives: Vec<GrayImage>,
    pub negatives: Vec<GrayImage>,
    pub scenes: Vec<(GrayImage, Vec<SceneObject>)>,
}

/// Blocky ground, per-pixel noise and small bright speckles; returns the
/// image and its base level. Speckles are at most 7 pixels on a side, below
/// the smallest object at any scan scale.
fn texture(rng: &mut ChaCha8Rng, w: usize, h: usize) -> (GrayImage, i32) {
    let level: i32 = rng.gen_range(30..=90);
    let block = 8;
    let bw = w.div_ceil(block);
    let offsets: Vec<i32> = (0..bw * h.div_ceil(block))
        .map(|_| rng.gen_range(-15..=15))
        .collect();
    let mut img = GrayImage::from_fn(w, h, |x, y| {
        let v = level + offsets[(y / block) * bw + x / block] + rng.gen_range(-12..=12);
        v.clamp(0, 255) as u8
    });
    for _ in 0..(w * h) / SPECKLE_AREA {
        let sw = rng.gen_range(2..=7).min(w);
        let sh = rng.gen_range(2..=7).min(h);
        let r = Rect::new(rng.gen_range(0..=w - sw), rng.gen_range(0..=h - sh), sw, sh);
        let bright = level + rng.gen_range(70..=140);
        fill(&mut img, r, bright, rng);
    }
    (img, level)
}

/// Ground pixels per speckle.
const SPECKLE_AREA: usize = 400;

fn fill(img: &mut GrayImage, r: Rect, level: i32, rng: &mut ChaCha8Rng) {
    for y in r.y..r.bottom() {
        for x in r.x..r.right() {
            img.set(x, y, (level + rng.gen_range(-4..=4)).clamp(0, 255) as u8);
        }
    }
}

/// Square placement inside a window of side `side` drawn at `scale`:
/// base side 10..=14 with up to 1 pixel of jitter, both scaled.
fn square_in(rng: &mut ChaCha8Rng, window: Rect, scale: f64) -> Rect {
    let base_side = rng.gen_range(10..=14) as f64;
    let jx = rng.gen_range(-1..=1) as f64;
    let jy = rng.gen_range(-1..=1) as f64;
    let side = (base_side * scale).round() as usize;
    let c = window.w as f64 / 2.0;
    let x = (c - side as f64 / 2.0 + jx * scale).round().max(0.0) as usize;
    let y = (c - side as f64 / 2.0 + jy * scale).round().max(0.0) as usize;
    let side = side.min(window.w - x).min(window.h - y);
    Rect::new(window.x + x, window.y + y, side, side)
}

pub fn synth_dataset(cfg: &SynthConfig) -> SynthDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let win = cfg.window;
    let positives = (0..cfg.positives)
        .map(|_| {
            let (mut img, level) = texture(&mut rng, win, win);
            let sq = square_in(&mut rng, Rect::new(0, 0, win, win), 1.0);
            let bright = level + rng.gen_range(70..=140);
            fill(&mut img, sq, bright, &mut rng);
            img
        })
        .collect();
    let negatives = (0..cfg.negatives)
        .map(|_| texture(&mut rng, cfg.negative_size, cfg.negative_size).0)
        .collect();
    let scenes = (0..cfg.scenes)
        .map(|_| {
            let (mut img, level) = texture(&mut rng, cfg.scene_width, cfg.scene_height);
            let want = rng.gen_range(1..=cfg.max_objects.max(1));
            let mut objects: Vec<SceneObject> = Vec::new();
            let mut attempts = 0;
            while objects.len() < want && attempts < 200 {
                attempts += 1;
                let scale = rng.gen_range(1.0..=cfg.max_object_scale.max(1.0));
                let side = (win as f64 * scale).round() as usize;
                if side > cfg.scene_width || side > cfg.scene_height {
                    continue;
                }
                let x = rng.gen_range(0..=cfg.scene_width - side);
                let y = rng.gen_range(0..=cfg.scene_height - side);
                let window = Rect::new(x, y, side, side);
                // Keep a margin so grouped boxes never merge across objects.
                let clear = objects.iter().all(|o| {
                    let grown = Rect::new(
                        o.window.x.saturating_sub(4),
                        o.window.y.saturating_sub(4),
                        o.window.w + 8,
                        o.window.h + 8,
                    );
                    grown.intersection_area(&window) == 0
                });
                if !clear {
                    continue;
                }
                let square = square_in(&mut rng, window, scale);
                let bright = level + rng.gen_range(70..=140);
                fill(&mut img, square, bright, &mut rng);
                objects.push(SceneObject { window, square });
            }
            objects.sort_by_key(|o| (o.window.y, o.window.x));
            (img, objects)
        })
        .collect();
    SynthDataset {
        positives,
        negatives,
        scenes,
    }
}

/// Paths written by [`write_synth`].
#[derive(Clone, Debug, PartialEq)]
pub struct SynthManifest {
    pub positives_dir: PathBuf,
    pub negatives_dir: PathBuf,
    pub scenes_dir: PathBuf,
    pub annotations: PathBuf,
    pub positives: usize,
    pub negatives: usize,
    pub scenes: usize,
    pub objects: usize,
}

impl SynthManifest {
    pub fn to_text(&self) -> String {
        format!(
            "positives {} {}\nnegatives {} {}\nscenes {} {}\nannotations {} {}\n",
            self.positives,
            self.positives_dir.display(),
            self.negatives,
            self.negatives_dir.display(),
            self.scenes,
            self.scenes_dir.display(),
            self.objects,
            self.annotations.display(),
        )
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn save(img: &GrayImage, path: PathBuf) -> Result<(), DatasetError> {
    save_pgm(img, &path).map_err(|source| DatasetError::Image { path, source })
}

/// Writes `positives/`, `negatives/` and `scenes/` (with
/// `scenes/annotations.txt`) under `dir`.
pub fn write_synth(data: &SynthDataset, dir: &Path) -> Result<SynthManifest, DatasetError> {
    let pos = dir.join("positives");
    let neg = dir.join("negatives");
    let scn = dir.join("scenes");
    for d in [&pos, &neg, &scn] {
        fs::create_dir_all(d).map_err(io_err(d))?;
    }
    for (i, img) in data.positives.iter().enumerate() {
        save(img, pos.join(format!("pos_{i:05}.pgm")))?;
    }
    for (i, img) in data.negatives.iter().enumerate() {
        save(img, neg.join(format!("neg_{i:05}.pgm")))?;
    }
    let mut ann = String::new();
    for (i, (img, objects)) in data.scenes.iter().enumerate() {
        let name = format!("scene_{i:05}.pgm");
        save(img, scn.join(&name))?;
        let boxes: Vec<Rect> = objects.iter().map(|o| o.window).collect();
        ann.push_str(&format_annotation(&name, &boxes));
        ann.push('\n');
    }
    let annotations = scn.join("annotations.txt");
    fs::write(&annotations, ann).map_err(io_err(&annotations))?;
    Ok(SynthManifest {
        positives_dir: pos,
        negatives_dir: neg,
        scenes_dir: scn,
        annotations,
        positives: data.positives.len(),
        negatives: data.negatives.len(),
        scenes: data.scenes.len(),
        objects: data.scenes.iter().map(|s| s.1.len()).sum(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CrossingKind {
    /// One square moving left to right across the middle.
    LeftToRight,
    /// Two squares in separate lanes moving in opposite directions.
    Opposite,
    /// No motion at all.
    Static,
}

impl CrossingKind {
    pub const ALL: [CrossingKind; 3] = [
        CrossingKind::LeftToRight,
        CrossingKind::Opposite,
        CrossingKind::Static,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CrossingKind::LeftToRight => "left_to_right",
            CrossingKind::Opposite => "opposite",
            CrossingKind::Static => "static",
        }
    }
}

/// 120×80 frames of static textured ground with moving 8×8 squares. The
/// first frame is empty ground so the background model starts clean.
pub fn crossing_sequence(kind: CrossingKind, seed: u64) -> Vec<GrayImage> {
    let (w, h, frames) = (120usize, 80usize, 36usize);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (ground, level) = texture(&mut rng, w, h);
    let movers: Vec<(i64, usize, i64)> = match kind {
        CrossingKind::LeftToRight => vec![(4, 30, 3)],
        CrossingKind::Opposite => vec![(4, 12, 3), (108, 58, -3)],
        CrossingKind::Static => vec![],
    };
    let bright = (level + 130).min(255) as u8;
    (0..frames)
        .map(|k| {
            let mut f = ground.clone();
            if k > 0 {
                for &(x0, y0, vx) in &movers {
                    let sx = x0 + vx * k as i64;
                    for y in y0..y0 + 8 {
                        for x in sx.max(0)..(sx + 8).min(w as i64) {
                            f.set(x as usize, y, bright);
                        }
                    }
                }
            }
            f
        })
        .collect()
}

/// Writes `frame_000001.pgm`, `frame_000002.pgm`, ... into `dir`.
pub fn write_frames(frames: &[GrayImage], dir: &Path) -> Result<(), DatasetError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (i, f) in frames.iter().enumerate() {
        save(f, dir.join(format!("frame_{:06}.pgm", i + 1)))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{encode_pgm, integral, rect_mean};

    fn small() -> SynthConfig {
        SynthConfig {
            positives: 40,
            negatives: 3,
            scenes: 6,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = synth_dataset(&small());
        let b = synth_dataset(&small());
        let bytes = |d: &SynthDataset| -> Vec<u8> {
            d.positives
                .iter()
                .chain(&d.negatives)
                .chain(d.scenes.iter().map(|s| &s.0))
                .flat_map(encode_pgm)
                .collect()
        };
        assert_eq!(bytes(&a), bytes(&b));
        let c = synth_dataset(&SynthConfig { seed: 1, ..small() });
        assert_ne!(bytes(&a), bytes(&c));
    }

    #[test]
    fn positives_have_bright_centers() {
        let d = synth_dataset(&SynthConfig {
            positives: 300,
            negatives: 0,
            scenes: 0,
            ..Default::default()
        });
        for p in &d.positives {
            let ii = integral(p);
            let center = Rect::new(6, 6, 12, 12);
            let c: f64 = rect_mean(&ii, center).unwrap();
            let total = crate::imaging::rect_sum(&ii, p.bounds()).unwrap() as f64;
            let inner = crate::imaging::rect_sum(&ii, center).unwrap() as f64;
            let surround = (total - inner) / (24.0 * 24.0 - 144.0);
            assert!(c - surround > 0.0);
        }
    }

    #[test]
    fn scene_objects_are_rendered_where_annotated() {
        let d = synth_dataset(&small());
        for (img, objects) in &d.scenes {
            assert!(!objects.is_empty());
            for o in objects {
                assert!(o.window.fits_within(img.width(), img.height()));
                assert_eq!(o.square.intersection_area(&o.window), o.square.area());
                let ii = integral(img);
                let inside: f64 = rect_mean(&ii, o.square).unwrap();
                assert!(inside > 100.0);
            }
            for (i, a) in objects.iter().enumerate() {
                for b in &objects[i + 1..] {
                    assert_eq!(a.window.intersection_area(&b.window), 0);
                }
            }
        }
    }

    #[test]
    fn writes_layout() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_synth(&synth_dataset(&small()), dir.path()).unwrap();
        assert_eq!(fs::read_dir(&m.positives_dir).unwrap().count(), 40);
        let anns = super::super::load_annotations(&m.annotations).unwrap();
        assert_eq!(anns.len(), 6);
        assert_eq!(anns.iter().map(|a| a.boxes.len()).sum::<usize>(), m.objects);
        let frames = crossing_sequence(CrossingKind::Opposite, 3);
        write_frames(&frames, &dir.path().join("f")).unwrap();
        assert!(dir.path().join("f/frame_000036.pgm").exists());
    }
}
