//! Haar-like features: weighted rectangle means over a square base window.
//!
//! A feature value is `f = Σ wᵢ·μᵢ` where `μᵢ` is the mean intensity of the
//! i-th rectangle and the weights sum to zero, so constant regions score 0.

use std::fmt;

use thiserror::Error;

use crate::imaging::{Rect, SummedArea};
use crate::scalar::{round_to_usize, Scalar};

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("a feature needs at least two rectangles, got {0}")]
    TooFewRects(usize),
    #[error("feature weights sum to {0}, expected exactly 0")]
    UnbalancedWeights(f64),
    #[error("rectangle {rect:?} does not fit a {side}-pixel base window")]
    OutsideWindow { rect: Rect, side: usize },
    #[error("scaled rectangle {rect:?} exceeds {width}x{height} image")]
    OutOfBounds {
        rect: Rect,
        width: usize,
        height: usize,
    },
    #[error("base window side must be at least 4, got {0}")]
    WindowTooSmall(usize),
    #[error("scale must be finite and >= 1, got {0}")]
    InvalidScale(f64),
    #[error("unknown feature kind `{0}`")]
    UnknownKind(String),
}

/// The five rectangle templates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FeatureKind {
    /// Two cells stacked vertically, light over dark: a horizontal edge.
    EdgeHorizontal,
    /// Two cells side by side: a vertical edge.
    EdgeVertical,
    /// Three cells stacked vertically: a horizontal bar.
    LineHorizontal,
    /// Three cells side by side: a vertical bar.
    LineVertical,
    /// 2×2 checkerboard.
    FourSquareDiagonal,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 5] = [
        FeatureKind::EdgeHorizontal,
        FeatureKind::EdgeVertical,
        FeatureKind::LineHorizontal,
        FeatureKind::LineVertical,
        FeatureKind::FourSquareDiagonal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::EdgeHorizontal => "edge-horizontal",
            FeatureKind::EdgeVertical => "edge-vertical",
            FeatureKind::LineHorizontal => "line-horizontal",
            FeatureKind::LineVertical => "line-vertical",
            FeatureKind::FourSquareDiagonal => "four-square-diagonal",
        }
    }

    pub fn from_name(name: &str) -> Result<Self, FeatureError> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| FeatureError::UnknownKind(name.to_string()))
    }

    /// Cell grid as (columns, rows).
    pub fn grid(self) -> (usize, usize) {
        match self {
            FeatureKind::EdgeHorizontal => (1, 2),
            FeatureKind::EdgeVertical => (2, 1),
            FeatureKind::LineHorizontal => (1, 3),
            FeatureKind::LineVertical => (3, 1),
            FeatureKind::FourSquareDiagonal => (2, 2),
        }
    }

    /// Default integer weights, one per cell in row-major order.
    pub fn default_weights(self) -> &'static [f64] {
        match self {
            FeatureKind::EdgeHorizontal | FeatureKind::EdgeVertical => &[1.0, -1.0],
            FeatureKind::LineHorizontal | FeatureKind::LineVertical => &[1.0, -2.0, 1.0],
            FeatureKind::FourSquareDiagonal => &[1.0, -1.0, -1.0, 1.0],
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Square detection window at base scale.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BaseWindow {
    side: usize,
}

impl BaseWindow {
    pub fn new(side: usize) -> Result<Self, FeatureError> {
        if side < 4 {
            return Err(FeatureError::WindowTooSmall(side));
        }
        Ok(Self { side })
    }

    #[inline]
    pub fn side(&self) -> usize {
        self.side
    }

    /// Side length of the window scaled by `scale`.
    #[inline]
    pub fn scaled_side<T: Scalar>(&self, scale: T) -> usize {
        round_to_usize(T::from_count(self.side) * scale)
    }
}

impl Default for BaseWindow {
    fn default() -> Self {
        Self { side: 24 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightedRect<T = f64> {
    pub rect: Rect,
    pub weight: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HaarFeature<T = f64> {
    kind: FeatureKind,
    rects: Vec<WeightedRect<T>>,
}

impl<T: Scalar> HaarFeature<T> {
    /// Validates `k >= 2` and that the weights sum to exactly zero.
    pub fn new(kind: FeatureKind, rects: Vec<WeightedRect<T>>) -> Result<Self, FeatureError> {
        if rects.len() < 2 {
            return Err(FeatureError::TooFewRects(rects.len()));
        }
        let sum: T = rects.iter().map(|r| r.weight).sum();
        if sum != T::zero() {
            return Err(FeatureError::UnbalancedWeights(sum.as_f64()));
        }
        if let Some(r) = rects.iter().find(|r| r.rect.w == 0 || r.rect.h == 0) {
            return Err(FeatureError::OutsideWindow {
                rect: r.rect,
                side: 0,
            });
        }
        Ok(Self { kind, rects })
    }

    /// Template `kind` with top-left corner `(x, y)` and cells of
    /// `cell_w × cell_h` pixels, carrying the default weights.
    pub fn from_template(
        kind: FeatureKind,
        x: usize,
        y: usize,
        cell_w: usize,
        cell_h: usize,
    ) -> Self {
        let (cols, rows) = kind.grid();
        let weights = kind.default_weights();
        let mut rects = Vec::with_capacity(cols * rows);
        for row in 0..rows {
            for col in 0..cols {
                rects.push(WeightedRect {
                    rect: Rect::new(x + col * cell_w, y + row * cell_h, cell_w, cell_h),
                    weight: T::lit(weights[row * cols + col]),
                });
            }
        }
        Self { kind, rects }
    }

    #[inline]
    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    #[inline]
    pub fn rects(&self) -> &[WeightedRect<T>] {
        &self.rects
    }

    pub fn fits(&self, window: BaseWindow) -> bool {
        self.rects
            .iter()
            .all(|r| r.rect.fits_within(window.side(), window.side()))
    }

    pub fn check_fits(&self, window: BaseWindow) -> Result<(), FeatureError> {
        match self
            .rects
            .iter()
            .find(|r| !r.rect.fits_within(window.side(), window.side()))
        {
            Some(r) => Err(FeatureError::OutsideWindow {
                rect: r.rect,
                side: window.side(),
            }),
            None => Ok(()),
        }
    }

    /// Converts the weights to another scalar type.
    pub fn cast<U: Scalar>(&self) -> HaarFeature<U> {
        HaarFeature {
            kind: self.kind,
            rects: self
                .rects
                .iter()
                .map(|r| WeightedRect {
                    rect: r.rect,
                    weight: U::lit(r.weight.as_f64()),
                })
                .collect(),
        }
    }
}

/// Scales each rectangle edge independently and rounds it to the nearest
/// pixel. Adjacent rectangles stay adjacent and every extent stays >= 1.
#[inline]
pub fn scale_rect<T: Scalar>(r: Rect, scale: T) -> Rect {
    if scale == T::one() {
        return r;
    }
    let edge = |v: usize| round_to_usize(T::from_count(v) * scale);
    let (x0, y0) = (edge(r.x), edge(r.y));
    let (x1, y1) = (edge(r.right()), edge(r.bottom()));
    Rect::new(x0, y0, x1 - x0, y1 - y0)
}

/// Feature with every rectangle scaled by `scale`.
///
/// Weights are left untouched: the feature combines rectangle means, so
/// the zero-sum identity holds whatever areas the rounding produces.
pub fn scale_feature<T: Scalar>(feat: &HaarFeature<T>, scale: T) -> HaarFeature<T> {
    HaarFeature {
        kind: feat.kind,
        rects: feat
            .rects
            .iter()
            .map(|r| WeightedRect {
                rect: scale_rect(r.rect, scale),
                weight: r.weight,
            })
            .collect(),
    }
}

/// One `w·μ` term. Every evaluation path goes through this so identical
/// inputs give bit-identical feature values.
#[inline]
pub(crate) fn mean_term<T: Scalar>(weight: T, sum: u64, area: usize) -> T {
    weight * (T::from_sum(sum) / T::from_count(area))
}

/// Evaluates `feat` on the window at `origin` scaled by `scale`: exactly
/// four summed-area reads per rectangle.
pub fn eval_feature<T: Scalar, S: SummedArea + ?Sized>(
    feat: &HaarFeature<T>,
    ii: &S,
    origin: (usize, usize),
    scale: T,
) -> Result<T, FeatureError> {
    if !(scale >= T::one()) || !scale.is_finite() {
        return Err(FeatureError::InvalidScale(scale.as_f64()));
    }
    let mut value = T::zero();
    for wr in &feat.rects {
        let r = scale_rect(wr.rect, scale).translate(origin.0, origin.1);
        if !r.fits_within(ii.width(), ii.height()) {
            return Err(FeatureError::OutOfBounds {
                rect: r,
                width: ii.width(),
                height: ii.height(),
            });
        }
        value += mean_term(
            wr.weight,
            crate::imaging::integral_rect_sum(ii, &r),
            r.area(),
        );
    }
    Ok(value)
}

/// Evaluates a feature whose rectangles are already scaled, translated by
/// `origin`. The caller guarantees the rectangles fit.
#[inline]
pub(crate) fn eval_placed<T: Scalar, S: SummedArea + ?Sized>(
    rects: &[WeightedRect<T>],
    ii: &S,
    origin: (usize, usize),
) -> T {
    let mut value = T::zero();
    for wr in rects {
        let r = wr.rect.translate(origin.0, origin.1);
        value += mean_term(
            wr.weight,
            crate::imaging::integral_rect_sum(ii, &r),
            r.area(),
        );
    }
    value
}

/// Cell sizes usable at `stride`: multiples of the stride no smaller than
/// `min_size`.
fn cell_sizes(stride: usize, min_size: usize, limit: usize) -> impl Iterator<Item = usize> {
    (1..)
        .map(move |m| m * stride)
        .skip_while(move |&s| s < min_size)
        .take_while(move |&s| s <= limit)
}

/// Every template placement inside the window, ordered by template, then
/// `y`, `x`, then cell height and cell width ascending. Positions step by
/// `stride`; cell extents are multiples of `stride` that are `>= min_size`.
pub fn enumerate_features<T: Scalar>(
    window: BaseWindow,
    stride: usize,
    min_size: usize,
) -> Vec<HaarFeature<T>> {
    enumerate_kinds(window, stride, min_size, &FeatureKind::ALL)
}

pub fn enumerate_kinds<T: Scalar>(
    window: BaseWindow,
    stride: usize,
    min_size: usize,
    kinds: &[FeatureKind],
) -> Vec<HaarFeature<T>> {
    let stride = stride.max(1);
    let min_size = min_size.max(1);
    let side = window.side();
    let mut out = Vec::new();
    for &kind in kinds {
        let (cols, rows) = kind.grid();
        for y in (0..side).step_by(stride) {
            for x in (0..side).step_by(stride) {
                for ch in cell_sizes(stride, min_size, (side - y) / rows) {
                    for cw in cell_sizes(stride, min_size, (side - x) / cols) {
                        out.push(HaarFeature::from_template(kind, x, y, cw, ch));
                    }
                }
            }
        }
    }
    out
}
