use super::{GrayImage, ImageError, Rect};
use crate::scalar::Scalar;

/// Read access to a summed-area table through its zero-padded corner grid.
///
/// `corner(x, y)` is the sum of all intensities at `x' < x`, `y' < y`, for
/// `0 <= x <= width` and `0 <= y <= height`. Row and column 0 are the
/// virtual zero border, so every rectangle sum is exactly four reads.
pub trait SummedArea {
    fn width(&self) -> usize;
    fn height(&self) -> usize;
    fn corner(&self, x: usize, y: usize) -> u64;
    fn corner_squared(&self, x: usize, y: usize) -> u64;
}

/// Summed-area table over intensities and squared intensities.
///
/// Cells are `u64`: a 65535×65535 image of 255s sums to about 1.1e12 and
/// its squared channel to about 2.8e14, both far below `u64::MAX`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntegralImage {
    width: usize,
    height: usize,
    // (width + 1) × (height + 1), first row and column are zero.
    cells: Vec<u64>,
    squared: Vec<u64>,
}

impl IntegralImage {
    pub fn new(image: &GrayImage) -> Self {
        let (w, h) = (image.width(), image.height());
        let stride = w + 1;
        let mut cells = vec![0u64; stride * (h + 1)];
        let mut squared = vec![0u64; stride * (h + 1)];
        let px = image.pixels();
        for y in 0..h {
            let mut row = 0u64;
            let mut row_sq = 0u64;
            let src = &px[y * w..(y + 1) * w];
            let above = y * stride;
            let here = (y + 1) * stride;
            for (x, &p) in src.iter().enumerate() {
                let p = u64::from(p);
                row += p;
                row_sq += p * p;
                cells[here + x + 1] = cells[above + x + 1] + row;
                squared[here + x + 1] = squared[above + x + 1] + row_sq;
            }
        }
        Self {
            width: w,
            height: h,
            cells,
            squared,
        }
    }

    /// Inclusive cumulative sum `Σ i(x', y')` over `x' <= x`, `y' <= y`.
    #[inline]
    pub fn cell(&self, x: usize, y: usize) -> u64 {
        self.cells[(y + 1) * (self.width + 1) + x + 1]
    }

    /// Inclusive cumulative sum of squared intensities.
    #[inline]
    pub fn squared_cell(&self, x: usize, y: usize) -> u64 {
        self.squared[(y + 1) * (self.width + 1) + x + 1]
    }
}

impl SummedArea for IntegralImage {
    #[inline]
    fn width(&self) -> usize {
        self.width
    }

    #[inline]
    fn height(&self) -> usize {
        self.height
    }

    #[inline]
    fn corner(&self, x: usize, y: usize) -> u64 {
        self.cells[y * (self.width + 1) + x]
    }

    #[inline]
    fn corner_squared(&self, x: usize, y: usize) -> u64 {
        self.squared[y * (self.width + 1) + x]
    }
}

impl<S: SummedArea + ?Sized> SummedArea for &S {
    fn width(&self) -> usize {
        (**self).width()
    }
    fn height(&self) -> usize {
        (**self).height()
    }
    fn corner(&self, x: usize, y: usize) -> u64 {
        (**self).corner(x, y)
    }
    fn corner_squared(&self, x: usize, y: usize) -> u64 {
        (**self).corner_squared(x, y)
    }
}

pub fn integral(image: &GrayImage) -> IntegralImage {
    IntegralImage::new(image)
}

/// Four-read rectangle sum with no bounds check beyond debug assertions.
#[inline]
pub(crate) fn rect_sum_unchecked<S: SummedArea + ?Sized>(ii: &S, r: &Rect) -> u64 {
    debug_assert!(r.fits_within(ii.width(), ii.height()));
    let (x1, y1) = (r.x + r.w, r.y + r.h);
    // D + A - B - C
    ii.corner(x1, y1) + ii.corner(r.x, r.y) - ii.corner(x1, r.y) - ii.corner(r.x, y1)
}

#[inline]
pub(crate) fn rect_squared_sum_unchecked<S: SummedArea + ?Sized>(ii: &S, r: &Rect) -> u64 {
    let (x1, y1) = (r.x + r.w, r.y + r.h);
    ii.corner_squared(x1, y1) + ii.corner_squared(r.x, r.y)
        - ii.corner_squared(x1, r.y)
        - ii.corner_squared(r.x, y1)
}

/// Sum of intensities inside `r`.
pub fn rect_sum<S: SummedArea + ?Sized>(ii: &S, r: Rect) -> Result<u64, ImageError> {
    r.check_within(ii.width(), ii.height())?;
    Ok(rect_sum_unchecked(ii, &r))
}

pub fn rect_squared_sum<S: SummedArea + ?Sized>(ii: &S, r: Rect) -> Result<u64, ImageError> {
    r.check_within(ii.width(), ii.height())?;
    Ok(rect_squared_sum_unchecked(ii, &r))
}

/// Mean intensity inside `r`.
pub fn rect_mean<T: Scalar, S: SummedArea + ?Sized>(ii: &S, r: Rect) -> Result<T, ImageError> {
    let sum = rect_sum(ii, r)?;
    Ok(T::from_sum(sum) / T::from_count(r.area()))
}
