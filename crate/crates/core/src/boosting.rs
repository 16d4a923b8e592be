//! Decision stumps over Haar features and discrete AdaBoost stage training.

use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::features::{BaseWindow, HaarFeature};
use crate::imaging::{GrayImage, IntegralImage, SummedArea};
use crate::scalar::Scalar;
use crate::window::Window;

/// Vote weight used when a stump separates the training set perfectly.
pub const PERFECT_ALPHA: f64 = 23.025850929940457; // ln(1e10)

#[derive(Debug, Error, PartialEq)]
pub enum BoostError {
    #[error("training needs both positive and negative samples ({positives} positive, {negatives} negative)")]
    DegenerateSamples { positives: usize, negatives: usize },
    #[error(
        "sample and weight counts differ ({values} values, {labels} labels, {weights} weights)"
    )]
    LengthMismatch {
        values: usize,
        labels: usize,
        weights: usize,
    },
    #[error("feature pool is empty")]
    NoFeatures,
    #[error("best weak learner in round {round} has weighted error {error} >= 0.5")]
    WeakLearnerFailed { round: usize, error: f64 },
    #[error("strong classifier has no stumps")]
    EmptyClassifier,
    #[error("invalid vote weight {0}")]
    InvalidAlpha(f64),
    #[error("stage threshold {threshold} exceeds total vote weight {total}")]
    ThresholdTooHigh { threshold: f64, total: f64 },
    #[error("sample window of {width}x{height} does not match base window {side}")]
    SampleShape {
        width: usize,
        height: usize,
        side: usize,
    },
    #[error("window does not fit the image")]
    OutOfBounds,
    #[error("round count must be at least 1")]
    NoRounds,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    #[inline]
    pub fn sign<T: Scalar>(self) -> T {
        match self {
            Polarity::Positive => T::one(),
            Polarity::Negative => -T::one(),
        }
    }

    pub fn as_i8(self) -> i8 {
        match self {
            Polarity::Positive => 1,
            Polarity::Negative => -1,
        }
    }

    pub fn from_i64(v: i64) -> Option<Self> {
        match v {
            1 => Some(Polarity::Positive),
            -1 => Some(Polarity::Negative),
            _ => None,
        }
    }
}

/// `h = 1` iff `p·f < p·θ`.
#[inline]
pub fn eval_stump<T: Scalar>(polarity: Polarity, threshold: T, value: T) -> u8 {
    let p: T = polarity.sign();
    u8::from(p * value < p * threshold)
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeakClassifier<T = f64> {
    pub feature: HaarFeature<T>,
    pub polarity: Polarity,
    pub threshold: T,
    pub alpha: T,
}

impl<T: Scalar> WeakClassifier<T> {
    #[inline]
    pub fn fires(&self, value: T) -> bool {
        eval_stump(self.polarity, self.threshold, value) == 1
    }
}

/// Weighted vote of stumps: passes when `Σ αₜ hₜ >= threshold`.
#[derive(Clone, Debug, PartialEq)]
pub struct StrongClassifier<T = f64> {
    stumps: Vec<WeakClassifier<T>>,
    threshold: T,
}

impl<T: Scalar> StrongClassifier<T> {
    pub fn new(stumps: Vec<WeakClassifier<T>>, threshold: T) -> Result<Self, BoostError> {
        if stumps.is_empty() {
            return Err(BoostError::EmptyClassifier);
        }
        if let Some(s) = stumps
            .iter()
            .find(|s| !s.alpha.is_finite() || s.alpha < T::zero())
        {
            return Err(BoostError::InvalidAlpha(s.alpha.as_f64()));
        }
        let total = alpha_sum(&stumps);
        if threshold.is_nan() || threshold > total {
            return Err(BoostError::ThresholdTooHigh {
                threshold: threshold.as_f64(),
                total: total.as_f64(),
            });
        }
        Ok(Self { stumps, threshold })
    }

    /// Classifier with the default threshold `½ Σ α`.
    pub fn with_default_threshold(stumps: Vec<WeakClassifier<T>>) -> Result<Self, BoostError> {
        let t = alpha_sum(&stumps) * T::lit(0.5);
        Self::new(stumps, t)
    }

    #[inline]
    pub fn stumps(&self) -> &[WeakClassifier<T>] {
        &self.stumps
    }

    #[inline]
    pub fn threshold(&self) -> T {
        self.threshold
    }

    pub fn alpha_sum(&self) -> T {
        alpha_sum(&self.stumps)
    }

    pub fn default_threshold(&self) -> T {
        self.alpha_sum() * T::lit(0.5)
    }

    /// `Σ αₜ hₜ` over the window, evaluating exactly one feature per stump.
    pub fn score<S: SummedArea + ?Sized>(&self, window: &Window<'_, S, T>) -> T {
        let mut score = T::zero();
        for s in &self.stumps {
            if s.fires(window.feature_value(&s.feature)) {
                score += s.alpha;
            }
        }
        score
    }

    #[inline]
    pub fn passes(&self, score: T) -> bool {
        score >= self.threshold
    }

    pub fn evaluate<S: SummedArea + ?Sized>(&self, window: &Window<'_, S, T>) -> (bool, T) {
        let score = self.score(window);
        (self.passes(score), score)
    }

    /// Same classifier with a different stage threshold.
    pub fn with_threshold(&self, threshold: T) -> Result<Self, BoostError> {
        Self::new(self.stumps.clone(), threshold)
    }
}

fn alpha_sum<T: Scalar>(stumps: &[WeakClassifier<T>]) -> T {
    stumps.iter().fold(T::zero(), |acc, s| acc + s.alpha)
}

/// Evaluates a stage on the window at `origin`, `scale`.
pub fn eval_strong<T: Scalar, S: SummedArea + ?Sized>(
    sc: &StrongClassifier<T>,
    ii: &S,
    base: BaseWindow,
    origin: (usize, usize),
    scale: T,
    variance_floor: f64,
) -> Result<(bool, T), BoostError> {
    let w = Window::new(ii, base, origin, scale, variance_floor).ok_or(BoostError::OutOfBounds)?;
    Ok(sc.evaluate(&w))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    Positive,
    Negative,
}

/// Training window: a placement inside a shared summed-area table.
///
/// Base-window crops (positives) sit at the origin of their own table at
/// scale 1; mined negatives point into the pool image they came from at
/// whatever scale the scanner found them, so they are evaluated exactly as
/// the detector sees them.
#[derive(Clone, Debug)]
pub struct Sample<T = f64> {
    source: Arc<IntegralImage>,
    base: BaseWindow,
    origin: (usize, usize),
    scale: T,
    inv_sigma: T,
    pub label: Label,
}

impl<T: Scalar> Sample<T> {
    pub fn from_crop(
        image: &GrayImage,
        base: BaseWindow,
        label: Label,
        variance_floor: f64,
    ) -> Result<Self, BoostError> {
        if image.width() != base.side() || image.height() != base.side() {
            return Err(BoostError::SampleShape {
                width: image.width(),
                height: image.height(),
                side: base.side(),
            });
        }
        let ii = Arc::new(IntegralImage::new(image));
        Self::from_placement(ii, base, (0, 0), T::one(), label, variance_floor)
            .ok_or(BoostError::OutOfBounds)
    }

    pub fn from_placement(
        source: Arc<IntegralImage>,
        base: BaseWindow,
        origin: (usize, usize),
        scale: T,
        label: Label,
        variance_floor: f64,
    ) -> Option<Self> {
        let inv_sigma = Window::new(&*source, base, origin, scale, variance_floor)?.inv_sigma();
        Some(Self {
            source,
            base,
            origin,
            scale,
            inv_sigma,
            label,
        })
    }

    #[inline]
    pub fn window(&self) -> Window<'_, IntegralImage, T> {
        Window::from_parts(
            &*self.source,
            self.origin,
            self.base.scaled_side(self.scale),
            self.scale,
            self.inv_sigma,
        )
    }

    #[inline]
    pub fn value(&self, feature: &HaarFeature<T>) -> T {
        self.window().feature_value(feature)
    }

    pub fn origin(&self) -> (usize, usize) {
        self.origin
    }

    pub fn base(&self) -> BaseWindow {
        self.base
    }

    pub fn scale(&self) -> T {
        self.scale
    }

    pub fn is_positive(&self) -> bool {
        self.label == Label::Positive
    }
}

/// Result of fitting one stump: polarity, threshold and weighted error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StumpFit<T = f64> {
    pub polarity: Polarity,
    pub threshold: T,
    pub error: T,
}

/// Optimal `(p, θ)` for one feature's values under the given weights.
///
/// Candidates are `-∞`, the midpoints between consecutive distinct values
/// and `+∞`. Ties in error go to the smaller threshold, then `p = +1`.
pub fn train_stump<T: Scalar>(
    values: &[T],
    labels: &[Label],
    weights: &[T],
) -> Result<StumpFit<T>, BoostError> {
    if values.len() != labels.len() || values.len() != weights.len() {
        return Err(BoostError::LengthMismatch {
            values: values.len(),
            labels: labels.len(),
            weights: weights.len(),
        });
    }
    let positives = labels.iter().filter(|&&l| l == Label::Positive).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(BoostError::DegenerateSamples {
            positives,
            negatives,
        });
    }
    let mut order: Vec<u32> = (0..values.len() as u32).collect();
    sort_by_value(values, &mut order);
    let (pos_total, neg_total) = class_totals(labels, weights);
    Ok(sweep(values, &order, labels, weights, pos_total, neg_total))
}

fn sort_by_value<T: Scalar>(values: &[T], order: &mut [u32]) {
    order.sort_unstable_by(|&a, &b| {
        values[a as usize]
            .partial_cmp(&values[b as usize])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
}

fn class_totals<T: Scalar>(labels: &[Label], weights: &[T]) -> (T, T) {
    let mut pos = T::zero();
    let mut neg = T::zero();
    for (l, &w) in labels.iter().zip(weights) {
        match l {
            Label::Positive => pos += w,
            Label::Negative => neg += w,
        }
    }
    (pos, neg)
}

/// Threshold strictly between `lo < hi`, as close to the midpoint as the
/// scalar type allows.
#[inline]
fn midpoint<T: Scalar>(lo: T, hi: T) -> T {
    let m = lo + (hi - lo) * T::lit(0.5);
    if m > lo {
        m
    } else {
        hi
    }
}

fn sweep<T: Scalar>(
    values: &[T],
    order: &[u32],
    labels: &[Label],
    weights: &[T],
    pos_total: T,
    neg_total: T,
) -> StumpFit<T> {
    // Everything is "above" θ = -∞.
    let mut best = StumpFit {
        polarity: Polarity::Positive,
        threshold: T::neg_infinity(),
        error: pos_total,
    };
    if neg_total < best.error {
        best = StumpFit {
            polarity: Polarity::Negative,
            threshold: T::neg_infinity(),
            error: neg_total,
        };
    }
    let mut pos_below = T::zero();
    let mut neg_below = T::zero();
    let n = order.len();
    for k in 0..n {
        let i = order[k] as usize;
        match labels[i] {
            Label::Positive => pos_below += weights[i],
            Label::Negative => neg_below += weights[i],
        }
        let threshold = if k + 1 == n {
            T::infinity()
        } else {
            let next = values[order[k + 1] as usize];
            if !(next > values[i]) {
                continue;
            }
            midpoint(values[i], next)
        };
        // p = +1 fires below θ; p = -1 fires above θ.
        let err_pos = neg_below + (pos_total - pos_below);
        let err_neg = (neg_total - neg_below) + pos_below;
        if err_pos < best.error {
            best = StumpFit {
                polarity: Polarity::Positive,
                threshold,
                error: err_pos,
            };
        }
        if err_neg < best.error {
            best = StumpFit {
                polarity: Polarity::Negative,
                threshold,
                error: err_neg,
            };
        }
    }
    best
}

/// Per-stage feature value cache: values and sorted sample order for every
/// feature. Memory is `features × samples × (size_of::<T>() + 4)` bytes.
struct FeatureCache<T> {
    values: Vec<T>,
    order: Vec<u32>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoundReport<T = f64> {
    pub feature_index: usize,
    pub error: T,
    pub alpha: T,
    /// Training error of the current classifier at threshold `½ Σ α`.
    pub training_error: T,
    /// The selected stump separated the weighted set perfectly; later
    /// rounds cannot change the classifier.
    pub perfect: bool,
}

/// Incremental AdaBoost over a fixed sample set.
pub struct StageTrainer<'a, T: Scalar> {
    samples: &'a [Sample<T>],
    features: &'a [HaarFeature<T>],
    labels: Vec<Label>,
    weights: Vec<T>,
    scores: Vec<T>,
    cache: Option<FeatureCache<T>>,
    stumps: Vec<WeakClassifier<T>>,
    selected: Vec<usize>,
    perfect: bool,
}

impl<'a, T: Scalar> StageTrainer<'a, T> {
    /// Weights start at `1/(2m)` for each of `m` negatives and `1/(2l)` for
    /// each of `l` positives.
    pub fn new(
        samples: &'a [Sample<T>],
        features: &'a [HaarFeature<T>],
        cache_features: bool,
    ) -> Result<Self, BoostError> {
        if features.is_empty() {
            return Err(BoostError::NoFeatures);
        }
        let labels: Vec<Label> = samples.iter().map(|s| s.label).collect();
        let positives = labels.iter().filter(|&&l| l == Label::Positive).count();
        let negatives = labels.len() - positives;
        if positives == 0 || negatives == 0 {
            return Err(BoostError::DegenerateSamples {
                positives,
                negatives,
            });
        }
        let wp = T::one() / T::from_count(2 * positives);
        let wn = T::one() / T::from_count(2 * negatives);
        let weights = labels
            .iter()
            .map(|l| if *l == Label::Positive { wp } else { wn })
            .collect();
        let cache = cache_features.then(|| build_cache(samples, features));
        Ok(Self {
            samples,
            features,
            labels,
            weights,
            scores: vec![T::zero(); samples.len()],
            cache,
            stumps: Vec::new(),
            selected: Vec::new(),
            perfect: false,
        })
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn stumps(&self) -> &[WeakClassifier<T>] {
        &self.stumps
    }

    /// Indices into the feature pool of the selected stumps, in order.
    pub fn selected_features(&self) -> &[usize] {
        &self.selected
    }

    pub fn is_perfect(&self) -> bool {
        self.perfect
    }

    fn normalize(&mut self) {
        let total: T = self.weights.iter().fold(T::zero(), |a, &w| a + w);
        for w in &mut self.weights {
            *w /= total;
        }
    }

    fn feature_values(&self, fi: usize) -> Vec<T> {
        match &self.cache {
            Some(c) => {
                let n = self.samples.len();
                c.values[fi * n..(fi + 1) * n].to_vec()
            }
            None => self
                .samples
                .iter()
                .map(|s| s.value(&self.features[fi]))
                .collect(),
        }
    }

    /// Globally best stump over the pool under the current weights. Ties in
    /// error go to the lower feature index, so the result does not depend
    /// on how the search is partitioned across threads.
    fn best_stump(&self) -> (usize, StumpFit<T>) {
        let (pos_total, neg_total) = class_totals(&self.labels, &self.weights);
        let n = self.samples.len();
        let pick = |a: (usize, StumpFit<T>), b: (usize, StumpFit<T>)| match a
            .1
            .error
            .partial_cmp(&b.1.error)
        {
            Some(std::cmp::Ordering::Less) => a,
            Some(std::cmp::Ordering::Greater) => b,
            _ => {
                if a.0 <= b.0 {
                    a
                } else {
                    b
                }
            }
        };
        match &self.cache {
            Some(c) => (0..self.features.len())
                .into_par_iter()
                .map(|fi| {
                    let values = &c.values[fi * n..(fi + 1) * n];
                    let order = &c.order[fi * n..(fi + 1) * n];
                    let fit = sweep(
                        values,
                        order,
                        &self.labels,
                        &self.weights,
                        pos_total,
                        neg_total,
                    );
                    (fi, fit)
                })
                .reduce_with(pick)
                .expect("non-empty pool"),
            None => (0..self.features.len())
                .into_par_iter()
                .map_init(
                    || (Vec::with_capacity(n), Vec::with_capacity(n)),
                    |(values, order): &mut (Vec<T>, Vec<u32>), fi| {
                        values.clear();
                        values.extend(self.samples.iter().map(|s| s.value(&self.features[fi])));
                        order.clear();
                        order.extend(0..n as u32);
                        sort_by_value(values, order);
                        let fit = sweep(
                            values,
                            order,
                            &self.labels,
                            &self.weights,
                            pos_total,
                            neg_total,
                        );
                        (fi, fit)
                    },
                )
                .reduce_with(pick)
                .expect("non-empty pool"),
        }
    }

    /// One boosting round: normalize, select, reweight.
    pub fn round(&mut self) -> Result<RoundReport<T>, BoostError> {
        self.normalize();
        let (fi, fit) = self.best_stump();
        let half = T::lit(0.5);
        if !(fit.error < half) {
            return Err(BoostError::WeakLearnerFailed {
                round: self.stumps.len() + 1,
                error: fit.error.as_f64(),
            });
        }
        let perfect = fit.error <= T::zero();
        let (alpha, beta) = if perfect {
            (T::lit(PERFECT_ALPHA), T::one())
        } else {
            let beta = fit.error / (T::one() - fit.error);
            ((T::one() / beta).ln(), beta)
        };
        let stump = WeakClassifier {
            feature: self.features[fi].clone(),
            polarity: fit.polarity,
            threshold: fit.threshold,
            alpha,
        };
        let values = self.feature_values(fi);
        for (i, &v) in values.iter().enumerate() {
            let fires = stump.fires(v);
            if fires {
                self.scores[i] += alpha;
            }
            let correct = fires == (self.labels[i] == Label::Positive);
            if correct && !perfect {
                self.weights[i] *= beta;
            }
        }
        self.normalize();
        self.stumps.push(stump);
        self.selected.push(fi);
        self.perfect = perfect;
        Ok(RoundReport {
            feature_index: fi,
            error: fit.error,
            alpha,
            training_error: self.training_error(),
            perfect,
        })
    }

    /// Current vote `Σ α h` of every training sample.
    pub fn scores(&self) -> &[T] {
        &self.scores
    }

    /// Unweighted misclassification rate at threshold `½ Σ α`.
    pub fn training_error(&self) -> T {
        let threshold = alpha_sum(&self.stumps) * T::lit(0.5);
        let wrong = self
            .scores
            .iter()
            .zip(&self.labels)
            .filter(|(&s, &l)| (s >= threshold) != (l == Label::Positive))
            .count();
        T::from_count(wrong) / T::from_count(self.labels.len())
    }

    pub fn classifier(&self) -> Result<StrongClassifier<T>, BoostError> {
        StrongClassifier::with_default_threshold(self.stumps.clone())
    }
}

fn build_cache<T: Scalar>(samples: &[Sample<T>], features: &[HaarFeature<T>]) -> FeatureCache<T> {
    let n = samples.len();
    let mut values = vec![T::zero(); n * features.len()];
    let mut order = vec![0u32; n * features.len()];
    values
        .par_chunks_mut(n.max(1))
        .zip(order.par_chunks_mut(n.max(1)))
        .zip(features.par_iter())
        .for_each(|((vals, ord), f)| {
            for (v, s) in vals.iter_mut().zip(samples) {
                *v = s.value(f);
            }
            for (k, o) in ord.iter_mut().enumerate() {
                *o = k as u32;
            }
            sort_by_value(vals, ord);
        });
    FeatureCache { values, order }
}

/// Runs `rounds` rounds of AdaBoost (fewer if a round is perfect) and
/// returns the stage at threshold `½ Σ α`.
pub fn train_stage<T: Scalar>(
    samples: &[Sample<T>],
    features: &[HaarFeature<T>],
    rounds: usize,
    cache_features: bool,
) -> Result<StrongClassifier<T>, BoostError> {
    if rounds == 0 {
        return Err(BoostError::NoRounds);
    }
    let mut trainer = StageTrainer::new(samples, features, cache_features)?;
    for _ in 0..rounds {
        let report = trainer.round()?;
        if report.perfect {
            break;
        }
    }
    trainer.classifier()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{enumerate_features, FeatureKind};
    use crate::imaging::integral;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn labels(pos: usize, neg: usize) -> Vec<Label> {
        let mut l = vec![Label::Positive; pos];
        l.extend(vec![Label::Negative; neg]);
        l
    }

    #[test]
    fn stump_boundary_cases() {
        assert_eq!(eval_stump(Polarity::Positive, 10.0, 5.0), 1);
        assert_eq!(eval_stump(Polarity::Positive, 10.0, 10.0), 0);
        assert_eq!(eval_stump(Polarity::Negative, 10.0, 5.0), 0);
        assert_eq!(eval_stump(Polarity::Negative, 10.0, 15.0), 1);
        assert_eq!(eval_stump(Polarity::Positive, f64::INFINITY, 1e300), 1);
        assert_eq!(eval_stump(Polarity::Negative, f64::INFINITY, 1e300), 0);
    }

    #[test]
    fn separable_one_dimensional() {
        let fit = train_stump(&[1.0, 2.0, 8.0, 9.0], &labels(2, 2), &[0.25; 4]).unwrap();
        assert_eq!(fit.error, 0.0);
        assert_eq!(fit.polarity, Polarity::Positive);
        assert!(fit.threshold > 2.0 && fit.threshold < 8.0);
        assert_eq!(fit.threshold, 5.0);
    }

    #[test]
    fn constant_values_give_min_class_weight() {
        let w = [0.1, 0.2, 0.3, 0.4];
        let fit = train_stump(&[3.0; 4], &labels(1, 3), &w).unwrap();
        assert_eq!(fit.error, 0.1);
        let fit = train_stump(&[3.0; 4], &labels(3, 1), &w).unwrap();
        assert_eq!(fit.error, 0.4);
    }

    #[test]
    fn single_class_is_degenerate() {
        assert!(matches!(
            train_stump(&[1.0, 2.0], &labels(2, 0), &[0.5, 0.5]),
            Err(BoostError::DegenerateSamples { .. })
        ));
        assert!(matches!(
            train_stump(&[1.0], &labels(1, 1), &[0.5, 0.5]),
            Err(BoostError::LengthMismatch { .. })
        ));
    }

    /// Exhaustive oracle: every candidate threshold and both polarities,
    /// error summed directly.
    fn exhaustive(values: &[f64], labels: &[Label], weights: &[f64]) -> StumpFit<f64> {
        let mut distinct: Vec<f64> = values.to_vec();
        distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
        distinct.dedup();
        let mut cands = vec![f64::NEG_INFINITY];
        for p in distinct.windows(2) {
            cands.push(midpoint(p[0], p[1]));
        }
        cands.push(f64::INFINITY);
        let mut best: Option<StumpFit<f64>> = None;
        for &t in &cands {
            for pol in [Polarity::Positive, Polarity::Negative] {
                let err: f64 = (0..values.len())
                    .filter(|&i| {
                        (eval_stump(pol, t, values[i]) == 1) != (labels[i] == Label::Positive)
                    })
                    .map(|i| weights[i])
                    .sum();
                if best.is_none_or(|b| err < b.error) {
                    best = Some(StumpFit {
                        polarity: pol,
                        threshold: t,
                        error: err,
                    });
                }
            }
        }
        best.unwrap()
    }

    #[test]
    fn sweep_matches_exhaustive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let n = 40;
            // Dyadic weights keep every partial sum exact.
            let raw: Vec<u64> = (0..n).map(|_| rng.gen_range(1..64)).collect();
            let total: u64 = raw.iter().sum();
            let weights: Vec<f64> = raw.iter().map(|&r| r as f64 / 1024.0).collect();
            let _ = total;
            let values: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(0..15))).collect();
            let mut labs: Vec<Label> = (0..n)
                .map(|_| {
                    if rng.gen_bool(0.5) {
                        Label::Positive
                    } else {
                        Label::Negative
                    }
                })
                .collect();
            labs[0] = Label::Positive;
            labs[1] = Label::Negative;
            let fit = train_stump(&values, &labs, &weights).unwrap();
            let oracle = exhaustive(&values, &labs, &weights);
            assert_eq!(fit, oracle);
        }
    }

    fn bright_side_window(left: bool, rng: &mut ChaCha8Rng) -> GrayImage {
        GrayImage::from_fn(4, 4, |x, _| {
            let bright = (x < 2) == left;
            let base: u8 = if bright { 200 } else { 40 };
            base + rng.gen_range(0..10)
        })
    }

    #[test]
    fn separable_toy_set_in_one_round() {
        let base = BaseWindow::new(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let mut samples = Vec::new();
        for i in 0..20 {
            let img = bright_side_window(i % 2 == 0, &mut rng);
            let label = if i % 2 == 0 {
                Label::Positive
            } else {
                Label::Negative
            };
            samples.push(Sample::<f64>::from_crop(&img, base, label, 1.0).unwrap());
        }
        let pool = enumerate_features(base, 1, 1);
        let mut trainer = StageTrainer::new(&samples, &pool, false).unwrap();
        let report = trainer.round().unwrap();
        assert_eq!(report.training_error, 0.0);
        assert!(report.perfect);
        assert_eq!(report.alpha, PERFECT_ALPHA);
        let stage = train_stage(&samples, &pool, 3, false).unwrap();
        assert_eq!(stage.stumps().len(), 1);
    }

    #[test]
    fn singleton_pool_round_equals_train_stump() {
        let base = BaseWindow::new(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let samples: Vec<Sample<f64>> = (0..30)
            .map(|i| {
                let img = GrayImage::from_fn(4, 4, |_, _| rng.gen());
                let label = if i < 12 {
                    Label::Positive
                } else {
                    Label::Negative
                };
                Sample::from_crop(&img, base, label, 1.0).unwrap()
            })
            .collect();
        let feat = HaarFeature::<f64>::from_template(FeatureKind::EdgeVertical, 0, 0, 2, 4);
        let pool = vec![feat.clone()];
        let stage = train_stage(&samples, &pool, 1, false).unwrap();

        let trainer = StageTrainer::new(&samples, &pool, false).unwrap();
        let mut w = trainer.weights().to_vec();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= total);
        let values: Vec<f64> = samples.iter().map(|s| s.value(&feat)).collect();
        let labs: Vec<Label> = samples.iter().map(|s| s.label).collect();
        let fit = train_stump(&values, &labs, &w).unwrap();
        let s = &stage.stumps()[0];
        assert_eq!((s.polarity, s.threshold), (fit.polarity, fit.threshold));
        assert_eq!(s.feature, feat);
    }

    fn noisy_samples(seed: u64) -> Vec<Sample<f64>> {
        let base = BaseWindow::new(6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..60)
            .map(|i| {
                let positive = i < 30;
                let img = GrayImage::from_fn(6, 6, |x, y| {
                    let bump = if positive && (1..4).contains(&x) && (2..5).contains(&y) {
                        40
                    } else {
                        0
                    };
                    (rng.gen_range(60..160) + bump) as u8
                });
                let label = if positive {
                    Label::Positive
                } else {
                    Label::Negative
                };
                Sample::from_crop(&img, base, label, 1.0).unwrap()
            })
            .collect()
    }

    #[test]
    fn weights_stay_normalized_and_alphas_positive() {
        let samples = noisy_samples(24);
        let pool = enumerate_features(BaseWindow::new(6).unwrap(), 1, 1);
        let mut trainer = StageTrainer::new(&samples, &pool, true).unwrap();
        for _ in 0..5 {
            let r = trainer.round().unwrap();
            assert!(r.error < 0.5 && r.alpha > 0.0);
            let s: f64 = trainer.weights().iter().sum();
            assert!((s - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn cached_and_streamed_search_agree() {
        let samples = noisy_samples(25);
        let pool = enumerate_features(BaseWindow::new(6).unwrap(), 1, 1);
        let a = train_stage(&samples, &pool, 6, true).unwrap();
        let b = train_stage(&samples, &pool, 6, false).unwrap();
        assert_eq!(a, b);
        let c = train_stage(&samples, &pool, 6, false).unwrap();
        assert_eq!(b, c);
    }

    #[test]
    fn strong_classifier_scoring() {
        let base = BaseWindow::new(4).unwrap();
        let img = GrayImage::from_fn(4, 4, |x, _| if x < 2 { 200 } else { 10 });
        let ii = integral(&img);
        let feat = HaarFeature::<f64>::from_template(FeatureKind::EdgeVertical, 0, 0, 2, 4);
        // Left-bright window gives a positive value; p = -1, θ = 0 fires.
        let stump = WeakClassifier {
            feature: feat,
            polarity: Polarity::Negative,
            threshold: 0.0,
            alpha: 1.0,
        };
        let stage = StrongClassifier::with_default_threshold(vec![stump]).unwrap();
        assert_eq!(stage.threshold(), 0.5);
        assert_eq!(
            eval_strong(&stage, &ii, base, (0, 0), 1.0, 1.0).unwrap(),
            (true, 1.0)
        );
        let flat = integral(&GrayImage::filled(4, 4, 0));
        let (pass, score) = eval_strong(&stage, &flat, base, (0, 0), 1.0, 1.0).unwrap();
        assert_eq!((pass, score), (false, 0.0));
        let vacuous = stage.with_threshold(0.0).unwrap();
        assert!(
            eval_strong(&vacuous, &flat, base, (0, 0), 1.0, 1.0)
                .unwrap()
                .0
        );
        assert!(stage.with_threshold(1.5).is_err());
        assert!(eval_strong(&stage, &flat, base, (1, 0), 1.0, 1.0).is_err());
    }
}
