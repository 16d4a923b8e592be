mod common;

use std::collections::HashSet;

use common::{default_cascade, held_out, plain_ground, training_data};
use haarscan::cascade::Cascade;
use haarscan::detector::{detect, scaled_stride, scan, scan_scales, window_origins, ScanConfig};
use haarscan::imaging::{GrayImage, Rect};

/// Two 12-pixel bright squares on dark ground, far apart.
fn two_square_image() -> (GrayImage, [Rect; 2]) {
    let mut img = plain_ground(128, 96, 5);
    let squares = [Rect::new(16, 18, 12, 12), Rect::new(94, 66, 12, 12)];
    for r in squares {
        for y in r.y..r.bottom() {
            for x in r.x..r.right() {
                img.set(x, y, 160 + ((x * 7 + y * 3) % 9) as u8);
            }
        }
    }
    (img, squares)
}

fn centre_inside(d: &Rect, r: &Rect) -> bool {
    let (cx, cy) = (d.x + d.w / 2, d.y + d.h / 2);
    (r.x..r.right()).contains(&cx) && (r.y..r.bottom()).contains(&cy)
}

#[test]
fn training_positive_at_origin_is_detected() {
    let c = default_cascade();
    let cfg = ScanConfig {
        min_scale: 1.0,
        max_scale: 1.0,
        ..Default::default()
    };
    let hits = scan(c, &training_data().positives[3], &cfg).unwrap();
    assert_eq!(hits.len(), 1);
    assert_eq!(hits[0].rect, Rect::new(0, 0, 24, 24));
}

#[test]
fn two_separated_squares_give_two_detections() {
    let (img, truth) = two_square_image();
    let dets = detect(default_cascade(), &img, &ScanConfig::default()).unwrap();
    assert_eq!(dets.len(), 2, "{dets:?}");
    for t in truth {
        assert!(
            dets.iter().any(|d| centre_inside(&d.rect, &t)),
            "{t:?} missed in {dets:?}"
        );
    }
}

#[test]
fn negated_contrast_gives_nothing() {
    let (img, _) = two_square_image();
    let negated = GrayImage::from_fn(img.width(), img.height(), |x, y| 255 - img.get(x, y));
    let dets = detect(default_cascade(), &negated, &ScanConfig::default()).unwrap();
    assert!(dets.is_empty(), "{dets:?}");
}

/// Area-weighted resampling of the `side`-pixel square at `(x0, y0)` down
/// to `base`×`base`.
fn resample(img: &GrayImage, x0: usize, y0: usize, side: usize, base: usize) -> Vec<f64> {
    let f = side as f64 / base as f64;
    let overlap = |a0: f64, a1: f64, b: usize| (a1.min(b as f64 + 1.0) - a0.max(b as f64)).max(0.0);
    let mut out = vec![0.0; base * base];
    for by in 0..base {
        let (ya, yb) = (by as f64 * f, (by + 1) as f64 * f);
        for bx in 0..base {
            let (xa, xb) = (bx as f64 * f, (bx + 1) as f64 * f);
            let mut acc = 0.0;
            for sy in ya.floor() as usize..(yb.ceil() as usize).min(side) {
                let wy = overlap(ya, yb, sy);
                for sx in xa.floor() as usize..(xb.ceil() as usize).min(side) {
                    acc += wy * overlap(xa, xb, sx) * img.get(x0 + sx, y0 + sy) as f64;
                }
            }
            out[by * base + bx] = acc / (f * f);
        }
    }
    out
}

/// Accept decision of a window evaluated by cropping it, rescaling the crop
/// to the base window and computing every rectangle mean pixel by pixel.
fn naive_accepts(
    c: &Cascade<f64>,
    img: &GrayImage,
    x0: usize,
    y0: usize,
    side: usize,
    floor: f64,
) -> bool {
    let base = c.base_window().side();
    let crop = resample(img, x0, y0, side, base);
    let n = (side * side) as f64;
    let (mut s, mut sq) = (0.0, 0.0);
    for y in y0..y0 + side {
        for x in x0..x0 + side {
            let v = img.get(x, y) as f64;
            s += v;
            sq += v * v;
        }
    }
    let mean = s / n;
    let sigma = (sq / n - mean * mean).max(0.0).sqrt().max(floor);
    for stage in c.stages() {
        let mut score = 0.0;
        for stump in stage.stumps() {
            let mut value = 0.0;
            for wr in stump.feature.rects() {
                let r = wr.rect;
                let mut acc = 0.0;
                for y in r.y..r.bottom() {
                    for x in r.x..r.right() {
                        acc += crop[y * base + x];
                    }
                }
                value += wr.weight * acc / r.area() as f64;
            }
            value /= sigma;
            let p = stump.polarity.sign::<f64>();
            if p * value < p * stump.threshold {
                score += stump.alpha;
            }
        }
        if score < stage.threshold() {
            return false;
        }
    }
    true
}

#[test]
fn scan_agrees_with_crop_and_rescale_scanner() {
    let c = default_cascade();
    let cfg = ScanConfig::default();
    let (two, _) = two_square_image();
    let mut fixtures = vec![two];
    fixtures.extend(held_out().scenes.iter().take(4).map(|(img, _)| img.clone()));

    let (mut windows, mut agree, mut both, mut either) = (0usize, 0usize, 0usize, 0usize);
    for img in &fixtures {
        let fast: HashSet<(usize, usize, usize)> = scan(c, img, &cfg)
            .unwrap()
            .iter()
            .map(|d| (d.rect.x, d.rect.y, d.rect.w))
            .collect();
        for scale in scan_scales(c.base_window(), img.width(), img.height(), &cfg) {
            let side = c.base_window().scaled_side(scale);
            let step = scaled_stride(cfg.stride, scale);
            for (x, y) in window_origins(img.width(), img.height(), side, step) {
                let a = fast.contains(&(x, y, side));
                let b = naive_accepts(c, img, x, y, side, cfg.variance_floor);
                windows += 1;
                agree += usize::from(a == b);
                both += usize::from(a && b);
                either += usize::from(a || b);
            }
        }
    }
    let rate = agree as f64 / windows as f64;
    eprintln!(
        "windows {windows} agreement {rate:.5} accepted-by-both {both} accepted-by-either {either}"
    );
    assert!(rate >= 0.99, "agreement {rate}");
    assert!(either > 0);
}
