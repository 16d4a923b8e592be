//! Grayscale images, binary PGM I/O and summed-area tables.

mod integral;
mod pgm;

pub use integral::{integral, rect_mean, rect_squared_sum, rect_sum, IntegralImage, SummedArea};
pub(crate) use integral::{
    rect_squared_sum_unchecked as integral_rect_squared_sum,
    rect_sum_unchecked as integral_rect_sum,
};
pub use pgm::{decode_pgm, encode_pgm, load_pgm, save_pgm, PgmError};

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ImageError {
    #[error("image dimensions must be positive, got {width}x{height}")]
    EmptyImage { width: usize, height: usize },
    #[error("pixel buffer holds {actual} values, expected {expected}")]
    PixelCount { expected: usize, actual: usize },
    #[error("rectangle {rect:?} exceeds {width}x{height} image")]
    OutOfBounds {
        rect: Rect,
        width: usize,
        height: usize,
    },
    #[error("rectangle {0:?} has zero extent")]
    EmptyRect(Rect),
}

/// 8-bit grayscale image stored row-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::EmptyImage { width, height });
        }
        let expected = width * height;
        if pixels.len() != expected {
            return Err(ImageError::PixelCount {
                expected,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Image with every pixel set to `value`.
    ///
    /// Panics if either dimension is zero.
    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self::new(width, height, vec![value; width * height]).expect("non-empty image")
    }

    /// Builds an image by evaluating `f(x, y)` at every pixel.
    ///
    /// Panics if either dimension is zero.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(width, height, pixels).expect("non-empty image")
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
    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: u8) {
        self.pixels[y * self.width + x] = value;
    }

    pub fn bounds(&self) -> Rect {
        Rect::new(0, 0, self.width, self.height)
    }

    pub fn crop(&self, r: Rect) -> Result<GrayImage, ImageError> {
        r.check_within(self.width, self.height)?;
        Ok(GrayImage::from_fn(r.w, r.h, |x, y| {
            self.get(r.x + x, r.y + y)
        }))
    }

    /// Draws a 1-pixel outline of `r`, clipped to the image.
    pub fn draw_outline(&mut self, r: Rect, value: u8) {
        if r.w == 0 || r.h == 0 {
            return;
        }
        let x1 = (r.x + r.w - 1).min(self.width - 1);
        let y1 = (r.y + r.h - 1).min(self.height - 1);
        if r.x >= self.width || r.y >= self.height {
            return;
        }
        for x in r.x..=x1 {
            self.set(x, r.y, value);
            self.set(x, y1, value);
        }
        for y in r.y..=y1 {
            self.set(r.x, y, value);
            self.set(x1, y, value);
        }
    }
}

/// Axis-aligned pixel rectangle, `[x, x + w) × [y, y + h)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    #[inline]
    pub const fn new(x: usize, y: usize, w: usize, h: usize) -> Self {
        Self { x, y, w, h }
    }

    #[inline]
    pub fn area(&self) -> usize {
        self.w * self.h
    }

    #[inline]
    pub fn right(&self) -> usize {
        self.x + self.w
    }

    #[inline]
    pub fn bottom(&self) -> usize {
        self.y + self.h
    }

    #[inline]
    pub fn translate(&self, dx: usize, dy: usize) -> Rect {
        Rect::new(self.x + dx, self.y + dy, self.w, self.h)
    }

    #[inline]
    pub fn fits_within(&self, width: usize, height: usize) -> bool {
        self.right() <= width && self.bottom() <= height
    }

    pub fn check_within(&self, width: usize, height: usize) -> Result<(), ImageError> {
        if self.w == 0 || self.h == 0 {
            return Err(ImageError::EmptyRect(*self));
        }
        if !self.fits_within(width, height) {
            return Err(ImageError::OutOfBounds {
                rect: *self,
                width,
                height,
            });
        }
        Ok(())
    }

    pub fn intersection_area(&self, other: &Rect) -> usize {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = self.right().min(other.right());
        let y1 = self.bottom().min(other.bottom());
        if x1 <= x0 || y1 <= y0 {
            0
        } else {
            (x1 - x0) * (y1 - y0)
        }
    }

    /// Intersection over union; 0 when both rects are empty.
    pub fn iou(&self, other: &Rect) -> f64 {
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_mismatched_buffers() {
        assert_eq!(
            GrayImage::new(2, 2, vec![0; 3]),
            Err(ImageError::PixelCount {
                expected: 4,
                actual: 3
            })
        );
        assert!(matches!(
            GrayImage::new(0, 2, vec![]),
            Err(ImageError::EmptyImage { .. })
        ));
    }

    #[test]
    fn iou_of_identical_and_disjoint() {
        let a = Rect::new(0, 0, 10, 10);
        assert_eq!(a.iou(&a), 1.0);
        assert_eq!(a.iou(&Rect::new(10, 0, 10, 10)), 0.0);
        let half = Rect::new(5, 0, 10, 10);
        assert!((a.iou(&half) - 50.0 / 150.0).abs() < 1e-15);
    }

    #[test]
    fn crop_and_outline() {
        let img = GrayImage::from_fn(4, 3, |x, y| (x + 10 * y) as u8);
        let c = img.crop(Rect::new(1, 1, 2, 2)).unwrap();
        assert_eq!(c.pixels(), &[11, 12, 21, 22]);
        assert!(img.crop(Rect::new(3, 0, 2, 1)).is_err());

        let mut canvas = GrayImage::filled(5, 5, 0);
        canvas.draw_outline(Rect::new(1, 1, 3, 3), 255);
        assert_eq!(canvas.get(1, 1), 255);
        assert_eq!(canvas.get(3, 3), 255);
        assert_eq!(canvas.get(2, 2), 0);
        assert_eq!(canvas.get(0, 0), 0);
    }
}
