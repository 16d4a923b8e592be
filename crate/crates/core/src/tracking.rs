//! Background subtraction, blob extraction, centroid tracking and
//! virtual-line crossing counts.

use std::fmt::Write as _;

use thiserror::Error;

use crate::detector::Detection;
use crate::imaging::{GrayImage, Rect};
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum TrackingError {
    #[error("frame is {width}x{height}, expected {expected_width}x{expected_height}")]
    ShapeMismatch {
        width: usize,
        height: usize,
        expected_width: usize,
        expected_height: usize,
    },
    #[error("virtual line endpoints must be distinct")]
    DegenerateLine,
    #[error("track history needs at least 2 points, has {0}")]
    ShortHistory(usize),
    #[error("invalid tracking configuration: {0}")]
    InvalidConfig(String),
}

/// Binary foreground mask, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            bits,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// 0/255 rendering for inspection.
    pub fn to_image(&self) -> GrayImage {
        GrayImage::from_fn(self.width, self.height, |x, y| {
            if self.get(x, y) {
                255
            } else {
                0
            }
        })
    }
}

/// Running-average background with an absolute-difference threshold.
#[derive(Clone, Debug)]
pub struct BackgroundModel<T = f64> {
    width: usize,
    height: usize,
    mean: Option<Vec<T>>,
    learning_rate: T,
    threshold: T,
}

impl<T: Scalar> BackgroundModel<T> {
    pub fn new(
        width: usize,
        height: usize,
        learning_rate: T,
        threshold: T,
    ) -> Result<Self, TrackingError> {
        if !(learning_rate > T::zero() && learning_rate <= T::one()) {
            return Err(TrackingError::InvalidConfig(format!(
                "background learning rate must lie in (0, 1], got {learning_rate}"
            )));
        }
        if !(threshold >= T::zero()) {
            return Err(TrackingError::InvalidConfig(format!(
                "foreground threshold must be >= 0, got {threshold}"
            )));
        }
        Ok(Self {
            width,
            height,
            mean: None,
            learning_rate,
            threshold,
        })
    }

    pub fn mean(&self) -> Option<&[T]> {
        self.mean.as_deref()
    }

    /// Foreground mask of `frame` against the current mean, then folds the
    /// frame into the mean. The first frame only initializes the mean.
    pub fn update(&mut self, frame: &GrayImage) -> Result<Mask, TrackingError> {
        if frame.width() != self.width || frame.height() != self.height {
            return Err(TrackingError::ShapeMismatch {
                width: frame.width(),
                height: frame.height(),
                expected_width: self.width,
                expected_height: self.height,
            });
        }
        let mut mask = Mask::new(self.width, self.height);
        match &mut self.mean {
            None => {
                self.mean = Some(
                    frame
                        .pixels()
                        .iter()
                        .map(|&p| T::from_count(usize::from(p)))
                        .collect(),
                );
            }
            Some(mean) => {
                let a = self.learning_rate;
                for (i, (m, &p)) in mean.iter_mut().zip(frame.pixels()).enumerate() {
                    let v = T::from_count(usize::from(p));
                    mask.bits[i] = (v - *m).abs() > self.threshold;
                    *m = (T::one() - a) * *m + a * v;
                }
            }
        }
        Ok(mask)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Blob<T = f64> {
    pub pixel_count: usize,
    pub bbox: Rect,
    pub centroid: (T, T),
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

fn union(parent: &mut [usize], a: usize, b: usize) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        parent[ra.max(rb)] = ra.min(rb);
    }
}

/// Component label of every pixel (`usize::MAX` for background); labels
/// are the row-major index of the component's first pixel.
pub fn label_components(mask: &Mask) -> Vec<usize> {
    let (w, h) = (mask.width, mask.height);
    let mut parent: Vec<usize> = (0..w * h).collect();
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            let i = y * w + x;
            // Already visited 8-neighbours: W, NW, N, NE.
            if x > 0 && mask.get(x - 1, y) {
                union(&mut parent, i, i - 1);
            }
            if y > 0 {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    if mask.get(nx, y - 1) {
                        union(&mut parent, i, (y - 1) * w + nx);
                    }
                }
            }
        }
    }
    (0..w * h)
        .map(|i| {
            if mask.bits[i] {
                find(&mut parent, i)
            } else {
                usize::MAX
            }
        })
        .collect()
}

/// 8-connected components with at least `min_area` pixels, ordered by
/// `(bbox.y, bbox.x)`.
pub fn extract_blobs<T: Scalar>(mask: &Mask, min_area: usize) -> Vec<Blob<T>> {
    let w = mask.width;
    let labels = label_components(mask);
    struct Acc {
        n: usize,
        sx: usize,
        sy: usize,
        x0: usize,
        y0: usize,
        x1: usize,
        y1: usize,
    }
    let mut accs: std::collections::BTreeMap<usize, Acc> = std::collections::BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        if l == usize::MAX {
            continue;
        }
        let (x, y) = (i % w, i / w);
        let a = accs.entry(l).or_insert(Acc {
            n: 0,
            sx: 0,
            sy: 0,
            x0: x,
            y0: y,
            x1: x,
            y1: y,
        });
        a.n += 1;
        a.sx += x;
        a.sy += y;
        a.x0 = a.x0.min(x);
        a.y0 = a.y0.min(y);
        a.x1 = a.x1.max(x);
        a.y1 = a.y1.max(y);
    }
    let mut blobs: Vec<Blob<T>> = accs
        .into_values()
        .filter(|a| a.n >= min_area)
        .map(|a| Blob {
            pixel_count: a.n,
            bbox: Rect::new(a.x0, a.y0, a.x1 - a.x0 + 1, a.y1 - a.y0 + 1),
            centroid: (
                T::from_count(a.sx) / T::from_count(a.n),
                T::from_count(a.sy) / T::from_count(a.n),
            ),
        })
        .collect();
    blobs.sort_by_key(|b| (b.bbox.y, b.bbox.x, b.bbox.h, b.bbox.w));
    blobs
}

/// Detections as blobs: the box is the blob, its center the centroid.
pub fn blobs_from_detections<T: Scalar>(dets: &[Detection<T>]) -> Vec<Blob<T>> {
    let half = T::lit(0.5);
    let mut blobs: Vec<Blob<T>> = dets
        .iter()
        .map(|d| Blob {
            pixel_count: d.rect.area(),
            bbox: d.rect,
            centroid: (
                T::from_count(d.rect.x) + T::from_count(d.rect.w) * half,
                T::from_count(d.rect.y) + T::from_count(d.rect.h) * half,
            ),
        })
        .collect();
    blobs.sort_by_key(|b| (b.bbox.y, b.bbox.x, b.bbox.h, b.bbox.w));
    blobs
}

#[derive(Clone, Debug, PartialEq)]
pub struct Track<T = f64> {
    pub id: u64,
    pub history: Vec<(usize, (T, T))>,
    pub missed_frames: usize,
    /// Last point strictly off the line, and whether the point right after
    /// it was exactly on the line.
    side_state: Option<SideState<T>>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct SideState<T> {
    side: i8,
    point: (T, T),
    on_line_after: Option<(T, T)>,
}

impl<T: Scalar> Track<T> {
    pub fn last(&self) -> (T, T) {
        self.history
            .last()
            .expect("tracks are created with one point")
            .1
    }
}

/// Directed segment `a → b`. Points with positive cross product
/// `(b − a) × (p − a)` lie on the positive side; a move from the negative
/// to the positive side counts `+1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VirtualLine<T = f64> {
    a: (T, T),
    b: (T, T),
}

impl<T: Scalar> VirtualLine<T> {
    pub fn new(a: (T, T), b: (T, T)) -> Result<Self, TrackingError> {
        if a == b {
            return Err(TrackingError::DegenerateLine);
        }
        Ok(Self { a, b })
    }

    /// Vertical line through the middle column, drawn bottom to top, so
    /// left-to-right motion counts `+1`.
    pub fn vertical_center(width: usize, height: usize) -> Self {
        let cx = T::from_count(width) * T::lit(0.5);
        Self {
            a: (cx, T::from_count(height)),
            b: (cx, T::zero()),
        }
    }

    pub fn endpoints(&self) -> ((T, T), (T, T)) {
        (self.a, self.b)
    }

    pub fn cross(&self, p: (T, T)) -> T {
        (self.b.0 - self.a.0) * (p.1 - self.a.1) - (self.b.1 - self.a.1) * (p.0 - self.a.0)
    }

    pub fn side(&self, p: (T, T)) -> i8 {
        let c = self.cross(p);
        if c > T::zero() {
            1
        } else if c < T::zero() {
            -1
        } else {
            0
        }
    }

    /// Whether a point on the infinite line lies within the segment.
    fn within(&self, p: (T, T)) -> bool {
        let d = (self.b.0 - self.a.0, self.b.1 - self.a.1);
        let t = ((p.0 - self.a.0) * d.0 + (p.1 - self.a.1) * d.1) / (d.0 * d.0 + d.1 * d.1);
        t >= T::zero() && t <= T::one()
    }

    /// Where the move `p → q` (strictly opposite sides) meets the line.
    fn intersection(&self, p: (T, T), q: (T, T)) -> (T, T) {
        let cp = self.cross(p);
        let cq = self.cross(q);
        let t = cp / (cp - cq);
        (p.0 + (q.0 - p.0) * t, p.1 + (q.1 - p.1) * t)
    }
}

/// Advances the side-tracking state with point `p`; returns the crossing
/// sign if `p` completes one.
fn step_side<T: Scalar>(
    state: &mut Option<SideState<T>>,
    line: &VirtualLine<T>,
    p: (T, T),
) -> Option<i8> {
    let s = line.side(p);
    if s == 0 {
        if let Some(st) = state {
            if st.on_line_after.is_none() {
                st.on_line_after = Some(p);
            }
        }
        return None;
    }
    let mut result = None;
    if let Some(st) = state {
        if st.side != s {
            let at = st
                .on_line_after
                .unwrap_or_else(|| line.intersection(st.point, p));
            if line.within(at) {
                result = Some(s);
            }
        }
    }
    *state = Some(SideState {
        side: s,
        point: p,
        on_line_after: None,
    });
    result
}

/// Net signed crossings along a track's history.
///
/// A point exactly on the line takes the side of the next point off it, so
/// touching the line and returning never counts.
pub fn count_crossings<T: Scalar>(
    track: &Track<T>,
    line: &VirtualLine<T>,
) -> Result<i64, TrackingError> {
    crossings_along(&track.history.iter().map(|h| h.1).collect::<Vec<_>>(), line)
}

pub fn crossings_along<T: Scalar>(
    points: &[(T, T)],
    line: &VirtualLine<T>,
) -> Result<i64, TrackingError> {
    if points.len() < 2 {
        return Err(TrackingError::ShortHistory(points.len()));
    }
    let mut state = None;
    Ok(points
        .iter()
        .filter_map(|&p| step_side(&mut state, line, p))
        .map(i64::from)
        .sum())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CrossingEvent {
    pub frame: usize,
    pub track_id: u64,
    pub direction: i8,
}

/// Active tracks plus id allocation.
#[derive(Clone, Debug)]
pub struct TrackSet<T = f64> {
    active: Vec<Track<T>>,
    retired: Vec<Track<T>>,
    next_id: u64,
    max_dist: T,
    max_missed: usize,
}

/// Greedy matching: all `(track, blob)` pairs within `max_dist`, sorted by
/// `(distance, track position, blob index)`, taken while both ends are free.
pub fn greedy_match<T: Scalar>(
    tracks: &[(T, T)],
    blobs: &[(T, T)],
    max_dist: T,
) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for (ti, t) in tracks.iter().enumerate() {
        for (bi, b) in blobs.iter().enumerate() {
            let d = ((t.0 - b.0).powi(2) + (t.1 - b.1).powi(2)).sqrt();
            if d <= max_dist {
                pairs.push((d, ti, bi));
            }
        }
    }
    pairs.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then((a.1, a.2).cmp(&(b.1, b.2)))
    });
    let mut t_used = vec![false; tracks.len()];
    let mut b_used = vec![false; blobs.len()];
    let mut out = Vec::new();
    for (_, ti, bi) in pairs {
        if !t_used[ti] && !b_used[bi] {
            t_used[ti] = true;
            b_used[bi] = true;
            out.push((ti, bi));
        }
    }
    out
}

impl<T: Scalar> TrackSet<T> {
    pub fn new(max_dist: T, max_missed: usize) -> Self {
        Self {
            active: Vec::new(),
            retired: Vec::new(),
            next_id: 0,
            max_dist,
            max_missed,
        }
    }

    /// Active tracks, by id.
    pub fn active(&self) -> &[Track<T>] {
        &self.active
    }

    pub fn retired(&self) -> &[Track<T>] {
        &self.retired
    }

    /// Associates one frame's blobs; returns crossings completed in it.
    pub fn associate(
        &mut self,
        frame: usize,
        blobs: &[Blob<T>],
        line: Option<&VirtualLine<T>>,
    ) -> Vec<CrossingEvent> {
        let last: Vec<(T, T)> = self.active.iter().map(|t| t.last()).collect();
        let cents: Vec<(T, T)> = blobs.iter().map(|b| b.centroid).collect();
        let matches = greedy_match(&last, &cents, self.max_dist);
        let mut t_blob = vec![None; self.active.len()];
        let mut b_used = vec![false; blobs.len()];
        for (ti, bi) in matches {
            t_blob[ti] = Some(bi);
            b_used[bi] = true;
        }
        let mut events = Vec::new();
        let mut keep = Vec::with_capacity(self.active.len());
        for (mut t, m) in std::mem::take(&mut self.active).into_iter().zip(t_blob) {
            match m {
                Some(bi) => {
                    let p = cents[bi];
                    t.history.push((frame, p));
                    t.missed_frames = 0;
                    if let Some(line) = line {
                        if let Some(direction) = step_side(&mut t.side_state, line, p) {
                            events.push(CrossingEvent {
                                frame,
                                track_id: t.id,
                                direction,
                            });
                        }
                    }
                    keep.push(t);
                }
                None => {
                    t.missed_frames += 1;
                    if t.missed_frames > self.max_missed {
                        self.retired.push(t);
                    } else {
                        keep.push(t);
                    }
                }
            }
        }
        for (bi, used) in b_used.into_iter().enumerate() {
            if used {
                continue;
            }
            let p = cents[bi];
            let mut t = Track {
                id: self.next_id,
                history: vec![(frame, p)],
                missed_frames: 0,
                side_state: None,
            };
            if let Some(line) = line {
                step_side(&mut t.side_state, line, p);
            }
            self.next_id += 1;
            keep.push(t);
        }
        self.active = keep;
        events
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackingConfig {
    pub learning_rate: f64,
    pub threshold: f64,
    pub min_blob_area: usize,
    pub max_dist: f64,
    pub max_missed: usize,
    /// `None` uses [`VirtualLine::vertical_center`].
    pub line: Option<((f64, f64), (f64, f64))>,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.02,
            threshold: 25.0,
            min_blob_area: 25,
            max_dist: 20.0,
            max_missed: 5,
            line: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrameRecord {
    pub index: usize,
    pub blobs: usize,
    pub tracks: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TrackingReport {
    pub frames: Vec<FrameRecord>,
    pub events: Vec<CrossingEvent>,
    pub up: usize,
    pub down: usize,
}

impl TrackingReport {
    /// `F`, `X` and `TOTAL` records, one per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut ev = self.events.iter().peekable();
        for f in &self.frames {
            writeln!(s, "F {} {} {}", f.index, f.blobs, f.tracks).unwrap();
            while let Some(e) = ev.next_if(|e| e.frame == f.index) {
                writeln!(s, "X {} {} {:+}", e.frame, e.track_id, e.direction).unwrap();
            }
        }
        writeln!(s, "TOTAL {} {}", self.up, self.down).unwrap();
        s
    }
}

/// Streaming pipeline state. Frames are numbered from 1.
pub struct Pipeline<T: Scalar = f64> {
    background: Option<BackgroundModel<T>>,
    tracks: TrackSet<T>,
    line: Option<VirtualLine<T>>,
    cfg: TrackingConfig,
    report: TrackingReport,
    shape: Option<(usize, usize)>,
}

impl<T: Scalar> Pipeline<T> {
    pub fn new(cfg: TrackingConfig) -> Result<Self, TrackingError> {
        if !(cfg.max_dist >= 0.0) {
            return Err(TrackingError::InvalidConfig(format!(
                "max_dist must be >= 0, got {}",
                cfg.max_dist
            )));
        }
        let line = match cfg.line {
            Some((a, b)) => Some(VirtualLine::new(
                (T::lit(a.0), T::lit(a.1)),
                (T::lit(b.0), T::lit(b.1)),
            )?),
            None => None,
        };
        // Validates the rates before any frame arrives.
        BackgroundModel::<T>::new(1, 1, T::lit(cfg.learning_rate), T::lit(cfg.threshold))?;
        Ok(Self {
            background: None,
            tracks: TrackSet::new(T::lit(cfg.max_dist), cfg.max_missed),
            line,
            cfg,
            report: TrackingReport::default(),
            shape: None,
        })
    }

    fn check_shape(&mut self, width: usize, height: usize) -> Result<(), TrackingError> {
        match self.shape {
            None => {
                self.shape = Some((width, height));
                if self.line.is_none() {
                    self.line = Some(VirtualLine::vertical_center(width, height));
                }
                Ok(())
            }
            Some((ew, eh)) if (ew, eh) != (width, height) => Err(TrackingError::ShapeMismatch {
                width,
                height,
                expected_width: ew,
                expected_height: eh,
            }),
            Some(_) => Ok(()),
        }
    }

    /// Motion-mask mode: background subtraction then blob extraction.
    pub fn push_frame(&mut self, frame: &GrayImage) -> Result<FrameRecord, TrackingError> {
        self.check_shape(frame.width(), frame.height())?;
        let bg = match &mut self.background {
            Some(bg) => bg,
            None => self.background.insert(BackgroundModel::new(
                frame.width(),
                frame.height(),
                T::lit(self.cfg.learning_rate),
                T::lit(self.cfg.threshold),
            )?),
        };
        let mask = bg.update(frame)?;
        let blobs = extract_blobs(&mask, self.cfg.min_blob_area);
        Ok(self.push_blobs(&blobs))
    }

    /// Detection mode: each detection becomes a blob.
    pub fn push_detections(
        &mut self,
        width: usize,
        height: usize,
        dets: &[Detection<T>],
    ) -> Result<FrameRecord, TrackingError> {
        self.check_shape(width, height)?;
        Ok(self.push_blobs(&blobs_from_detections(dets)))
    }

    fn push_blobs(&mut self, blobs: &[Blob<T>]) -> FrameRecord {
        let index = self.report.frames.len() + 1;
        let events = self.tracks.associate(index, blobs, self.line.as_ref());
        for e in &events {
            if e.direction > 0 {
                self.report.up += 1;
            } else {
                self.report.down += 1;
            }
        }
        self.report.events.extend(events);
        let rec = FrameRecord {
            index,
            blobs: blobs.len(),
            tracks: self.tracks.active().len(),
        };
        self.report.frames.push(rec);
        rec
    }

    pub fn tracks(&self) -> &TrackSet<T> {
        &self.tracks
    }

    pub fn report(&self) -> &TrackingReport {
        &self.report
    }

    pub fn finish(self) -> TrackingReport {
        self.report
    }
}

/// Runs the motion-mask pipeline over a frame sequence.
pub fn run_pipeline<'a, T: Scalar>(
    frames: impl IntoIterator<Item = &'a GrayImage>,
    cfg: &TrackingConfig,
) -> Result<TrackingReport, TrackingError> {
    let mut p = Pipeline::<T>::new(cfg.clone())?;
    for f in frames {
        p.push_frame(f)?;
    }
    Ok(p.finish())
}
