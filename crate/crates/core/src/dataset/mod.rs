//! Annotation files, detection-quality evaluation and the synthetic data
//! generator.

mod synth;

pub use synth::{
    crossing_sequence, synth_dataset, write_frames, write_synth, CrossingKind, SceneObject,
    SynthConfig, SynthDataset, SynthManifest,
};

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::detector::Detection;
use crate::imaging::{load_pgm, PgmError, Rect};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: PgmError,
    },
    #[error("line {line}: {detail}")]
    Malformed { line: usize, detail: String },
    #[error("line {line}: box {rect:?} exceeds {width}x{height} image {path}")]
    BoxOutOfBounds {
        line: usize,
        path: PathBuf,
        rect: Rect,
        width: usize,
        height: usize,
    },
    #[error("detections reference unknown image {0}")]
    UnknownImage(PathBuf),
    #[error("invalid evaluation input: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Annotation {
    pub image_path: PathBuf,
    pub boxes: Vec<Rect>,
    /// 1-based line number in the source file.
    pub line: usize,
}

/// Parses `<image_path> <n> x y w h ...` records. Blank lines and lines
/// starting with `#` are skipped; relative paths are joined onto `base_dir`.
pub fn parse_annotations(text: &str, base_dir: &Path) -> Result<Vec<Annotation>, DatasetError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut fields = trimmed.split_whitespace();
        let path = fields.next().expect("non-empty line");
        let bad = |detail: String| DatasetError::Malformed { line, detail };
        let n: usize = fields
            .next()
            .ok_or_else(|| bad("missing box count".into()))?
            .parse()
            .map_err(|_| bad("box count is not a non-negative integer".into()))?;
        let coords = fields
            .map(|f| {
                f.parse::<usize>()
                    .map_err(|_| bad(format!("bad coordinate {f:?}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if coords.len() != 4 * n {
            return Err(bad(format!(
                "{n} boxes need {} coordinates, found {}",
                4 * n,
                coords.len()
            )));
        }
        let boxes: Vec<Rect> = coords
            .chunks(4)
            .map(|c| Rect::new(c[0], c[1], c[2], c[3]))
            .collect();
        if let Some(r) = boxes.iter().find(|r| r.w == 0 || r.h == 0) {
            return Err(bad(format!("box {r:?} is empty")));
        }
        let p = Path::new(path);
        out.push(Annotation {
            image_path: if p.is_absolute() {
                p.to_path_buf()
            } else {
                base_dir.join(p)
            },
            boxes,
            line,
        });
    }
    Ok(out)
}

/// Loads an annotation file and checks every box against its image.
pub fn load_annotations(path: impl AsRef<Path>) -> Result<Vec<Annotation>, DatasetError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let anns = parse_annotations(&text, path.parent().unwrap_or(Path::new("")))?;
    for a in &anns {
        let img = load_pgm(&a.image_path).map_err(|source| DatasetError::Image {
            path: a.image_path.clone(),
            source,
        })?;
        if let Some(r) = a
            .boxes
            .iter()
            .find(|r| !r.fits_within(img.width(), img.height()))
        {
            return Err(DatasetError::BoxOutOfBounds {
                line: a.line,
                path: a.image_path.clone(),
                rect: *r,
                width: img.width(),
                height: img.height(),
            });
        }
    }
    Ok(anns)
}

pub fn format_annotation(path: &str, boxes: &[Rect]) -> String {
    let mut s = format!("{path} {}", boxes.len());
    for b in boxes {
        write!(s, " {} {} {} {}", b.x, b.y, b.w, b.h).unwrap();
    }
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageEval {
    pub image_path: PathBuf,
    pub ground_truth: usize,
    pub detections: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    /// `(detection index, ground-truth index)` pairs, detections in
    /// evaluation order.
    pub matches: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub images: usize,
    pub ground_truth: usize,
    pub detections: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub detection_rate: f64,
    pub false_positives_per_image: f64,
    pub precision: f64,
    pub recall: f64,
    pub iou_threshold: f64,
    pub per_image: Vec<ImageEval>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Evaluation order: score descending, then `(y, x, h, w)`.
fn eval_order<T: Scalar>(dets: &[Detection<T>]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..dets.len()).collect();
    idx.sort_by(|&a, &b| {
        let (da, db) = (&dets[a], &dets[b]);
        db.score
            .partial_cmp(&da.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(
                (da.rect.y, da.rect.x, da.rect.h, da.rect.w)
                    .cmp(&(db.rect.y, db.rect.x, db.rect.h, db.rect.w)),
            )
    });
    idx
}

/// Greedy one-to-one matching of one image's detections: each detection,
/// in evaluation order, takes the free ground-truth box of highest IoU
/// (lowest index on ties) if that IoU reaches `iou_threshold`.
pub fn match_image<T: Scalar>(
    dets: &[Detection<T>],
    truth: &[Rect],
    iou_threshold: f64,
) -> Vec<Option<usize>> {
    let mut taken = vec![false; truth.len()];
    let mut out = vec![None; dets.len()];
    for i in eval_order(dets) {
        let mut best: Option<(f64, usize)> = None;
        for (g, r) in truth.iter().enumerate() {
            if taken[g] {
                continue;
            }
            let iou = dets[i].rect.iou(r);
            if iou >= iou_threshold && best.is_none_or(|(b, _)| iou > b) {
                best = Some((iou, g));
            }
        }
        if let Some((_, g)) = best {
            taken[g] = true;
            out[i] = Some(g);
        }
    }
    out
}

/// Scores detections against annotations. Every image with detections must
/// be annotated; annotated images without an entry count as having none.
pub fn evaluate<T: Scalar>(
    detections: &[(PathBuf, Vec<Detection<T>>)],
    annotations: &[Annotation],
    iou_threshold: f64,
) -> Result<EvalReport, DatasetError> {
    if !(0.0..=1.0).contains(&iou_threshold) || iou_threshold == 0.0 {
        return Err(DatasetError::Invalid(format!(
            "IoU threshold must lie in (0, 1], got {iou_threshold}"
        )));
    }
    for (p, _) in detections {
        if !annotations.iter().any(|a| &a.image_path == p) {
            return Err(DatasetError::UnknownImage(p.clone()));
        }
    }
    let empty = Vec::new();
    let mut per_image = Vec::with_capacity(annotations.len());
    for a in annotations {
        let dets = detections
            .iter()
            .find(|(p, _)| p == &a.image_path)
            .map_or(&empty, |(_, d)| d);
        let m = match_image(dets, &a.boxes, iou_threshold);
        let order = eval_order(dets);
        let matches: Vec<(usize, usize)> =
            order.iter().filter_map(|&i| m[i].map(|g| (i, g))).collect();
        let tp = matches.len();
        per_image.push(ImageEval {
            image_path: a.image_path.clone(),
            ground_truth: a.boxes.len(),
            detections: dets.len(),
            true_positives: tp,
            false_positives: dets.len() - tp,
            matches,
        });
    }
    let gt: usize = per_image.iter().map(|e| e.ground_truth).sum();
    let nd: usize = per_image.iter().map(|e| e.detections).sum();
    let tp: usize = per_image.iter().map(|e| e.true_positives).sum();
    let fp = nd - tp;
    Ok(EvalReport {
        images: per_image.len(),
        ground_truth: gt,
        detections: nd,
        true_positives: tp,
        false_positives: fp,
        detection_rate: ratio(tp, gt),
        false_positives_per_image: if per_image.is_empty() {
            0.0
        } else {
            fp as f64 / per_image.len() as f64
        },
        precision: ratio(tp, nd),
        recall: ratio(tp, gt),
        iou_threshold,
        per_image,
    })
}

impl EvalReport {
    /// `key value` lines followed by one `image` line per image.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "images {}", self.images).unwrap();
        writeln!(s, "ground_truth {}", self.ground_truth).unwrap();
        writeln!(s, "detections {}", self.detections).unwrap();
        writeln!(s, "true_positives {}", self.true_positives).unwrap();
        writeln!(s, "false_positives {}", self.false_positives).unwrap();
        writeln!(s, "iou_threshold {:.6}", self.iou_threshold).unwrap();
        writeln!(s, "detection_rate {:.6}", self.detection_rate).unwrap();
        writeln!(
            s,
            "false_positives_per_image {:.6}",
            self.false_positives_per_image
        )
        .unwrap();
        writeln!(s, "precision {:.6}", self.precision).unwrap();
        writeln!(s, "recall {:.6}", self.recall).unwrap();
        for e in &self.per_image {
            writeln!(
                s,
                "image {} {} {} {} {}",
                e.image_path.display(),
                e.ground_truth,
                e.detections,
                e.true_positives,
                e.false_positives
            )
            .unwrap();
        }
        s
    }
}

/// One row of the operating-point table.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OperatingPoint {
    pub min_neighbors: usize,
    pub detection_rate: f64,
    pub false_positives_per_image: f64,
    pub precision: f64,
}

pub fn operating_points_csv(points: &[OperatingPoint]) -> String {
    let mut s = String::from("min_neighbors,detection_rate,false_positives_per_image,precision\n");
    for p in points {
        writeln!(
            s,
            "{},{:.6},{:.6},{:.6}",
            p.min_neighbors, p.detection_rate, p.false_positives_per_image, p.precision
        )
        .unwrap();
    }
    s
}
