//! Multi-scale sliding-window detection and detection grouping.
//!
//! The detector is scaled instead of the image: each scale pre-scales the
//! cascade's rectangles once and then slides over a single summed-area
//! table. Scales are `scale_step^k` for `k = 0, 1, ...`, restricted to
//! `[min_scale, max_scale]` and to windows that fit the image. The step
//! between windows is `max(1, round(stride * scale))`.

use std::fmt::Write as _;

use rayon::prelude::*;
use thiserror::Error;

use crate::cascade::{Cascade, ScaledCascade};
use crate::features::BaseWindow;
use crate::imaging::{GrayImage, IntegralImage, Rect, SummedArea};
use crate::scalar::Scalar;
use crate::window::Window;

#[derive(Debug, Error, PartialEq)]
pub enum DetectError {
    #[error("image {width}x{height} is smaller than the {side}-pixel base window")]
    ImageTooSmall {
        width: usize,
        height: usize,
        side: usize,
    },
    #[error("invalid scan configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed detection record {line:?}: {detail}")]
    MalformedRecord { line: String, detail: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanConfig {
    pub scale_step: f64,
    /// Window step in pixels at scale 1.
    pub stride: usize,
    pub min_scale: f64,
    pub max_scale: f64,
    pub group_min_neighbors: usize,
    pub group_overlap: f64,
    pub variance_floor: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            scale_step: 1.25,
            stride: 2,
            min_scale: 1.0,
            max_scale: f64::INFINITY,
            group_min_neighbors: 3,
            group_overlap: 0.3,
            variance_floor: 1.0,
        }
    }
}

impl ScanConfig {
    pub fn validate(&self) -> Result<(), DetectError> {
        let bad = |m: String| Err(DetectError::InvalidConfig(m));
        if !(self.scale_step > 1.0) || !self.scale_step.is_finite() {
            return bad(format!("scale_step must be > 1, got {}", self.scale_step));
        }
        if self.stride == 0 {
            return bad("stride must be at least 1".into());
        }
        if !(self.min_scale >= 1.0) || self.min_scale.is_infinite() {
            return bad(format!(
                "min_scale must be a finite value >= 1, got {}",
                self.min_scale
            ));
        }
        if !(self.max_scale >= self.min_scale) {
            return bad(format!(
                "max_scale {} is below min_scale {}",
                self.max_scale, self.min_scale
            ));
        }
        if !(0.0..=1.0).contains(&self.group_overlap) {
            return bad(format!(
                "group_overlap must lie in [0, 1], got {}",
                self.group_overlap
            ));
        }
        if !(self.variance_floor > 0.0) || !self.variance_floor.is_finite() {
            return bad(format!(
                "variance_floor must be positive, got {}",
                self.variance_floor
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection<T = f64> {
    pub rect: Rect,
    /// Score of the final cascade stage.
    pub score: T,
    pub scale: T,
}

/// Scan scales for an image, smallest first.
pub fn scan_scales(base: BaseWindow, width: usize, height: usize, cfg: &ScanConfig) -> Vec<f64> {
    let mut out = Vec::new();
    let mut k = 0i32;
    loop {
        let s = cfg.scale_step.powi(k);
        if s > cfg.max_scale || base.scaled_side(s) > width.min(height) {
            break;
        }
        if s >= cfg.min_scale {
            out.push(s);
        }
        k += 1;
    }
    out
}

/// Window step at `scale`.
#[inline]
pub fn scaled_stride(stride: usize, scale: f64) -> usize {
    ((stride as f64 * scale).round() as usize).max(1)
}

/// Top-left corners of every window of side `side` in a `width × height`
/// image, row-major.
pub fn window_origins(
    width: usize,
    height: usize,
    side: usize,
    step: usize,
) -> Vec<(usize, usize)> {
    if side > width || side > height {
        return Vec::new();
    }
    let xs: Vec<usize> = (0..=width - side).step_by(step).collect();
    (0..=height - side)
        .step_by(step)
        .flat_map(|y| xs.iter().map(move |&x| (x, y)))
        .collect()
}

/// Counters for the attentional speedup measurement.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ScanStats {
    pub windows: usize,
    pub rejected: usize,
    /// Sum of stages evaluated over rejected windows.
    pub rejected_stage_evaluations: usize,
}

impl ScanStats {
    pub fn mean_stages_per_rejection(&self) -> f64 {
        if self.rejected == 0 {
            0.0
        } else {
            self.rejected_stage_evaluations as f64 / self.rejected as f64
        }
    }

    fn merge(mut self, o: Self) -> Self {
        self.windows += o.windows;
        self.rejected += o.rejected;
        self.rejected_stage_evaluations += o.rejected_stage_evaluations;
        self
    }
}

fn scan_row<T: Scalar, S: SummedArea + Sync + ?Sized>(
    sc: &ScaledCascade<T>,
    ii: &S,
    y: usize,
    step: usize,
    floor: f64,
    out: &mut Vec<Detection<T>>,
) -> ScanStats {
    let side = sc.side();
    let mut stats = ScanStats::default();
    for x in (0..=ii.width() - side).step_by(step) {
        let rect = Rect::new(x, y, side, side);
        let inv = crate::window::inverse_sigma(ii, &rect, floor);
        let w = Window::from_parts(ii, (x, y), side, sc.scale(), inv);
        let o = sc.evaluate(&w);
        stats.windows += 1;
        if o.accept {
            out.push(Detection {
                rect,
                score: o.final_score,
                scale: sc.scale(),
            });
        } else {
            stats.rejected += 1;
            stats.rejected_stage_evaluations += o.stages_evaluated;
        }
    }
    stats
}

/// Raw detections plus scan counters, over a prebuilt integral.
pub fn scan_integral<T: Scalar, S: SummedArea + Sync + ?Sized>(
    c: &Cascade<T>,
    ii: &S,
    cfg: &ScanConfig,
) -> Result<(Vec<Detection<T>>, ScanStats), DetectError> {
    cfg.validate()?;
    let side = c.base_window().side();
    if ii.width() < side || ii.height() < side {
        return Err(DetectError::ImageTooSmall {
            width: ii.width(),
            height: ii.height(),
            side,
        });
    }
    let scaled: Vec<(ScaledCascade<T>, usize)> =
        scan_scales(c.base_window(), ii.width(), ii.height(), cfg)
            .into_iter()
            .map(|s| (c.scaled(T::lit(s)), scaled_stride(cfg.stride, s)))
            .filter(|(sc, _)| sc.side() <= ii.width().min(ii.height()))
            .collect();
    let rows: Vec<(usize, usize)> = scaled
        .iter()
        .enumerate()
        .flat_map(|(si, (sc, step))| {
            (0..=ii.height() - sc.side())
                .step_by(*step)
                .map(move |y| (si, y))
        })
        .collect();
    let parts: Vec<(Vec<Detection<T>>, ScanStats)> = rows
        .par_iter()
        .map(|&(si, y)| {
            let (sc, step) = &scaled[si];
            let mut dets = Vec::new();
            let stats = scan_row(sc, ii, y, *step, cfg.variance_floor, &mut dets);
            (dets, stats)
        })
        .collect();
    let mut dets = Vec::new();
    let mut stats = ScanStats::default();
    for (d, s) in parts {
        dets.extend(d);
        stats = stats.merge(s);
    }
    Ok((dets, stats))
}

/// Raw detections in `(scale, y, x)` order.
pub fn scan<T: Scalar>(
    c: &Cascade<T>,
    img: &GrayImage,
    cfg: &ScanConfig,
) -> Result<Vec<Detection<T>>, DetectError> {
    Ok(scan_integral(c, &IntegralImage::new(img), cfg)?.0)
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Cluster label of every detection: the smallest index in its connected
/// component under `iou >= overlap`.
pub fn cluster_labels<T>(dets: &[Detection<T>], overlap: f64) -> Vec<usize> {
    let n = dets.len();
    let mut ds = DisjointSet::new(n);
    for i in 0..n {
        for j in i + 1..n {
            if dets[i].rect.iou(&dets[j].rect) >= overlap {
                ds.union(i, j);
            }
        }
    }
    (0..n).map(|i| ds.find(i)).collect()
}

/// Merges overlapping raw detections. Clusters are emitted in order of
/// their first member.
pub fn group_detections<T: Scalar>(dets: &[Detection<T>], cfg: &ScanConfig) -> Vec<Detection<T>> {
    let labels = cluster_labels(dets, cfg.group_overlap);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); dets.len()];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push(i);
    }
    members
        .into_iter()
        .filter(|m| !m.is_empty() && m.len() >= cfg.group_min_neighbors.max(1))
        .map(|m| {
            let n = m.len() as f64;
            let mean = |f: &dyn Fn(&Rect) -> usize| {
                m.iter().map(|&i| f(&dets[i].rect) as f64).sum::<f64>() / n
            };
            let x0 = mean(&|r| r.x).round() as usize;
            let y0 = mean(&|r| r.y).round() as usize;
            let x1 = mean(&|r| r.right()).round() as usize;
            let y1 = mean(&|r| r.bottom()).round() as usize;
            let score = m
                .iter()
                .map(|&i| dets[i].score)
                .fold(T::neg_infinity(), |a, b| if b > a { b } else { a });
            let scale = m
                .iter()
                .map(|&i| dets[i].scale)
                .fold(T::zero(), |a, b| a + b)
                / T::from_count(m.len());
            Detection {
                rect: Rect::new(x0, y0, x1 - x0, y1 - y0),
                score,
                scale,
            }
        })
        .collect()
}

/// Sorts by score descending, then `(y, x, h, w)` ascending.
pub fn sort_detections<T: Scalar>(dets: &mut [Detection<T>]) {
    dets.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(
                (a.rect.y, a.rect.x, a.rect.h, a.rect.w)
                    .cmp(&(b.rect.y, b.rect.x, b.rect.h, b.rect.w)),
            )
    });
}

/// `group_detections(scan(..))`, sorted.
pub fn detect<T: Scalar>(
    c: &Cascade<T>,
    img: &GrayImage,
    cfg: &ScanConfig,
) -> Result<Vec<Detection<T>>, DetectError> {
    let raw = scan(c, img, cfg)?;
    let mut out = group_detections(&raw, cfg);
    sort_detections(&mut out);
    Ok(out)
}

/// One `x y w h score scale` record.
pub fn format_detection<T: Scalar>(d: &Detection<T>) -> String {
    format!(
        "{} {} {} {} {:.6} {:.6}",
        d.rect.x,
        d.rect.y,
        d.rect.w,
        d.rect.h,
        d.score.as_f64(),
        d.scale.as_f64()
    )
}

pub fn format_detections<T: Scalar>(dets: &[Detection<T>]) -> String {
    let mut s = String::new();
    for d in dets {
        writeln!(s, "{}", format_detection(d)).unwrap();
    }
    s
}

pub fn parse_detection(line: &str) -> Result<Detection<f64>, DetectError> {
    let err = |detail: &str| DetectError::MalformedRecord {
        line: line.to_string(),
        detail: detail.to_string(),
    };
    let f: Vec<&str> = line.split_whitespace().collect();
    if f.len() != 6 {
        return Err(err("expected 6 fields"));
    }
    let int = |s: &str| s.parse::<usize>().map_err(|_| err("bad integer"));
    let real = |s: &str| s.parse::<f64>().map_err(|_| err("bad number"));
    Ok(Detection {
        rect: Rect::new(int(f[0])?, int(f[1])?, int(f[2])?, int(f[3])?),
        score: real(f[4])?,
        scale: real(f[5])?,
    })
}
