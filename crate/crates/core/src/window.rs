//! A placed, variance-normalized detection window.
//!
//! Feature values seen by classifiers are divided by the window's intensity
//! standard deviation (clamped below by a floor). Training samples and the
//! scanner both evaluate through this type, so they see identical values.

use crate::features::{eval_placed, scale_rect, BaseWindow, HaarFeature, WeightedRect};
use crate::imaging::{integral_rect_squared_sum, integral_rect_sum, Rect, SummedArea};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Window<'a, S: ?Sized, T = f64> {
    ii: &'a S,
    origin: (usize, usize),
    side: usize,
    scale: T,
    inv_sigma: T,
}

/// Reciprocal of the intensity standard deviation inside `r`, with the
/// deviation clamped to at least `floor`.
pub fn inverse_sigma<T: Scalar, S: SummedArea + ?Sized>(ii: &S, r: &Rect, floor: f64) -> T {
    let n = r.area() as f64;
    let sum = integral_rect_sum(ii, r) as f64;
    let sq = integral_rect_squared_sum(ii, r) as f64;
    let mean = sum / n;
    let var = (sq / n - mean * mean).max(0.0);
    T::lit(1.0 / var.sqrt().max(floor))
}

impl<'a, S: SummedArea + ?Sized, T: Scalar> Window<'a, S, T> {
    /// Returns `None` when the scaled window does not fit the image.
    pub fn new(
        ii: &'a S,
        base: BaseWindow,
        origin: (usize, usize),
        scale: T,
        variance_floor: f64,
    ) -> Option<Self> {
        if !(scale >= T::one()) || !scale.is_finite() {
            return None;
        }
        let side = base.scaled_side(scale);
        let rect = Rect::new(origin.0, origin.1, side, side);
        if side == 0 || !rect.fits_within(ii.width(), ii.height()) {
            return None;
        }
        Some(Self {
            ii,
            origin,
            side,
            scale,
            inv_sigma: inverse_sigma(ii, &rect, variance_floor),
        })
    }

    /// Rebuilds a window from a previously validated placement.
    #[inline]
    pub(crate) fn from_parts(
        ii: &'a S,
        origin: (usize, usize),
        side: usize,
        scale: T,
        inv_sigma: T,
    ) -> Self {
        Self {
            ii,
            origin,
            side,
            scale,
            inv_sigma,
        }
    }

    #[inline]
    pub fn rect(&self) -> Rect {
        Rect::new(self.origin.0, self.origin.1, self.side, self.side)
    }

    #[inline]
    pub fn scale(&self) -> T {
        self.scale
    }

    #[inline]
    pub fn origin(&self) -> (usize, usize) {
        self.origin
    }

    #[inline]
    pub fn inv_sigma(&self) -> T {
        self.inv_sigma
    }

    /// Normalized value of a base-scale feature. The feature must fit the
    /// base window this view was built for.
    #[inline]
    pub fn feature_value(&self, feat: &HaarFeature<T>) -> T {
        let mut value = T::zero();
        let one = self.scale == T::one();
        for wr in feat.rects() {
            let r = if one {
                wr.rect
            } else {
                scale_rect(wr.rect, self.scale)
            };
            let r = r.translate(self.origin.0, self.origin.1);
            debug_assert!(r.fits_within(self.ii.width(), self.ii.height()));
            value +=
                crate::features::mean_term(wr.weight, integral_rect_sum(self.ii, &r), r.area());
        }
        value * self.inv_sigma
    }

    /// Normalized value of rectangles already scaled to this window's scale.
    #[inline]
    pub(crate) fn placed_value(&self, rects: &[WeightedRect<T>]) -> T {
        eval_placed(rects, self.ii, self.origin) * self.inv_sigma
    }
}
