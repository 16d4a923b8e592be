//! Stage-wise cascade training with bootstrapped negatives.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use super::{Cascade, StageStats, TrainingMetadata};
use crate::boosting::{BoostError, Label, Sample, StageTrainer, StrongClassifier};
use crate::detector::{scaled_stride, scan_scales, window_origins, ScanConfig};
use crate::features::{enumerate_features, BaseWindow, FeatureError, HaarFeature};
use crate::imaging::{GrayImage, IntegralImage};
use crate::scalar::Scalar;

pub const MIN_POSITIVES: usize = 50;

#[derive(Clone, Debug, PartialEq)]
pub struct CascadeTrainConfig {
    pub per_stage_min_detection: f64,
    pub per_stage_max_fp: f64,
    pub target_overall_fp: f64,
    pub max_stages: usize,
    pub stumps_per_stage_cap: usize,
    pub seed: u64,
    pub base_window: BaseWindow,
    /// Position and size step of the enumerated feature pool.
    pub feature_stride: usize,
    pub feature_min_size: usize,
    /// Negatives mined per stage; 0 means as many as training positives.
    pub negatives_per_stage: usize,
    pub validation_fraction: f64,
    pub variance_floor: f64,
    /// Geometry of the negative-mining scan.
    pub mining_scale_step: f64,
    pub mining_stride: usize,
    /// Keep every feature's values for the stage in memory.
    pub cache_features: bool,
}

impl Default for CascadeTrainConfig {
    fn default() -> Self {
        Self {
            per_stage_min_detection: 0.995,
            per_stage_max_fp: 0.5,
            target_overall_fp: 1e-3,
            max_stages: 20,
            stumps_per_stage_cap: 200,
            seed: 0,
            base_window: BaseWindow::default(),
            feature_stride: 2,
            feature_min_size: 1,
            negatives_per_stage: 0,
            validation_fraction: 0.2,
            variance_floor: 1.0,
            mining_scale_step: 1.25,
            mining_stride: 2,
            cache_features: false,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("need at least {MIN_POSITIVES} positives, got {0}")]
    TooFewPositives(usize),
    #[error("positive sample {index} is not a positive base-window sample")]
    BadPositive { index: usize },
    #[error("negative pool yields no windows accepted by the cascade so far")]
    EmptyPool,
    #[error(
        "stage {stage} cannot reach detection {target_detection} with false-positive rate <= {target_fp} \
         (best after {stumps} stumps: detection {detection}, false positives {fp})"
    )]
    StageUnattainable {
        stage: usize,
        stumps: usize,
        detection: f64,
        fp: f64,
        target_detection: f64,
        target_fp: f64,
    },
    #[error(transparent)]
    Boost(#[from] BoostError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

impl CascadeTrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        let open = |v: f64| v > 0.0 && v < 1.0;
        if !(self.per_stage_min_detection > 0.0 && self.per_stage_min_detection <= 1.0) {
            return bad(format!(
                "per_stage_min_detection must lie in (0, 1], got {}",
                self.per_stage_min_detection
            ));
        }
        if !open(self.per_stage_max_fp) {
            return bad(format!(
                "per_stage_max_fp must lie in (0, 1), got {}",
                self.per_stage_max_fp
            ));
        }
        if !open(self.target_overall_fp) {
            return bad(format!(
                "target_overall_fp must lie in (0, 1), got {}",
                self.target_overall_fp
            ));
        }
        if self.max_stages == 0 || self.stumps_per_stage_cap == 0 {
            return bad("max_stages and stumps_per_stage_cap must be at least 1".into());
        }
        if self.feature_stride == 0 || self.feature_min_size == 0 || self.mining_stride == 0 {
            return bad(
                "feature_stride, feature_min_size and mining_stride must be at least 1".into(),
            );
        }
        if !open(self.validation_fraction) {
            return bad(format!(
                "validation_fraction must lie in (0, 1), got {}",
                self.validation_fraction
            ));
        }
        if !(self.variance_floor > 0.0) || !self.variance_floor.is_finite() {
            return bad(format!(
                "variance_floor must be positive, got {}",
                self.variance_floor
            ));
        }
        if !(self.mining_scale_step > 1.0) || !self.mining_scale_step.is_finite() {
            return bad(format!(
                "mining_scale_step must be > 1, got {}",
                self.mining_scale_step
            ));
        }
        Ok(())
    }

    fn mining_scan(&self) -> ScanConfig {
        ScanConfig {
            scale_step: self.mining_scale_step,
            stride: self.mining_stride,
            variance_floor: self.variance_floor,
            ..ScanConfig::default()
        }
    }
}

/// Progress events emitted during training.
#[derive(Clone, Debug, PartialEq)]
pub enum TrainEvent {
    Round {
        stage: usize,
        round: usize,
        error: f64,
        detection: f64,
        false_positive_rate: f64,
    },
    Stage {
        stage: usize,
        stats: StageStats,
        overall_false_positive_rate: f64,
    },
}

/// Every window the mining scan visits, in shuffled order.
struct NegativePool<T> {
    images: Vec<Arc<IntegralImage>>,
    windows: Vec<(u32, u32, u32, f64)>,
    scales: std::marker::PhantomData<T>,
}

impl<T: Scalar> NegativePool<T> {
    fn new(pool: &[GrayImage], base: BaseWindow, cfg: &ScanConfig, rng: &mut ChaCha8Rng) -> Self {
        let images: Vec<Arc<IntegralImage>> = pool
            .iter()
            .map(|img| Arc::new(IntegralImage::new(img)))
            .collect();
        let mut windows = Vec::new();
        for (i, img) in pool.iter().enumerate() {
            for s in scan_scales(base, img.width(), img.height(), cfg) {
                let side = base.scaled_side(T::lit(s));
                for (x, y) in window_origins(
                    img.width(),
                    img.height(),
                    side,
                    scaled_stride(cfg.stride, s),
                ) {
                    windows.push((i as u32, x as u32, y as u32, s));
                }
            }
        }
        windows.shuffle(rng);
        Self {
            images,
            windows,
            scales: std::marker::PhantomData,
        }
    }

    fn sample(&self, k: usize, base: BaseWindow, floor: f64) -> Sample<T> {
        let (i, x, y, s) = self.windows[k];
        Sample::from_placement(
            Arc::clone(&self.images[i as usize]),
            base,
            (x as usize, y as usize),
            T::lit(s),
            Label::Negative,
            floor,
        )
        .expect("pool windows fit their image")
    }
}

fn rate(hits: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

struct StageOutcome<T: Scalar> {
    stage: StrongClassifier<T>,
    detection: f64,
    fp: f64,
}

fn train_one_stage<T: Scalar>(
    index: usize,
    samples: &[Sample<T>],
    validation: &[Sample<T>],
    features: &[HaarFeature<T>],
    cfg: &CascadeTrainConfig,
    observer: &mut dyn FnMut(&TrainEvent),
) -> Result<StageOutcome<T>, TrainError> {
    let mut trainer = StageTrainer::new(samples, features, cfg.cache_features)?;
    let mut val_scores = vec![T::zero(); validation.len()];
    let d = cfg.per_stage_min_detection;
    let allowed_misses = ((1.0 - d) * validation.len() as f64).floor() as usize;
    loop {
        let report = trainer.round()?;
        let stump = trainer.stumps().last().expect("round added a stump");
        for (score, s) in val_scores.iter_mut().zip(validation) {
            if stump.fires(s.value(&stump.feature)) {
                *score += stump.alpha;
            }
        }
        let classifier = trainer.classifier()?;
        let mut sorted = val_scores.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
        let lowered = sorted[allowed_misses.min(sorted.len() - 1)];
        let default = classifier.default_threshold();
        let threshold = if lowered < default { lowered } else { default };
        let stage = classifier.with_threshold(threshold)?;

        let detected = val_scores.iter().filter(|&&s| stage.passes(s)).count();
        let detection = rate(detected, validation.len());
        let (mut negs, mut fps) = (0, 0);
        for (s, &score) in samples.iter().zip(trainer.scores()) {
            if !s.is_positive() {
                negs += 1;
                fps += usize::from(stage.passes(score));
            }
        }
        let fp = rate(fps, negs);
        observer(&TrainEvent::Round {
            stage: index,
            round: trainer.stumps().len(),
            error: report.error.as_f64(),
            detection,
            false_positive_rate: fp,
        });
        if detection >= d && fp <= cfg.per_stage_max_fp {
            return Ok(StageOutcome {
                stage,
                detection,
                fp,
            });
        }
        if report.perfect || trainer.stumps().len() >= cfg.stumps_per_stage_cap {
            return Err(TrainError::StageUnattainable {
                stage: index,
                stumps: trainer.stumps().len(),
                detection,
                fp,
                target_detection: d,
                target_fp: cfg.per_stage_max_fp,
            });
        }
    }
}

pub fn train_cascade<T: Scalar>(
    positives: &[Sample<T>],
    negative_pool: &[GrayImage],
    cfg: &CascadeTrainConfig,
) -> Result<Cascade<T>, TrainError> {
    train_cascade_observed(positives, negative_pool, cfg, &mut |_| {})
}

/// Trains a cascade; `observer` sees every boosting round and finished
/// stage.
///
/// Positives are split into training and validation sets with the config
/// seed. The stage threshold starts at `½ Σ α` and is lowered to the
/// validation score that keeps the detection target. Negatives for each
/// stage are the first pool windows, in seeded shuffled order, that every
/// earlier stage accepts.
pub fn train_cascade_observed<T: Scalar>(
    positives: &[Sample<T>],
    negative_pool: &[GrayImage],
    cfg: &CascadeTrainConfig,
    observer: &mut dyn FnMut(&TrainEvent),
) -> Result<Cascade<T>, TrainError> {
    cfg.validate()?;
    if positives.len() < MIN_POSITIVES {
        return Err(TrainError::TooFewPositives(positives.len()));
    }
    let base = cfg.base_window;
    for (index, p) in positives.iter().enumerate() {
        if !p.is_positive() || p.base() != base {
            return Err(TrainError::BadPositive { index });
        }
    }
    let features: Vec<HaarFeature<T>> =
        enumerate_features(base, cfg.feature_stride, cfg.feature_min_size);
    if features.is_empty() {
        return Err(BoostError::NoFeatures.into());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..positives.len()).collect();
    order.shuffle(&mut rng);
    let n_val = ((positives.len() as f64 * cfg.validation_fraction).round() as usize)
        .clamp(1, positives.len() - 1);
    let validation: Vec<Sample<T>> = order[..n_val]
        .iter()
        .map(|&i| positives[i].clone())
        .collect();
    let train_pos: Vec<Sample<T>> = order[n_val..]
        .iter()
        .map(|&i| positives[i].clone())
        .collect();

    let scan = cfg.mining_scan();
    let pool = NegativePool::<T>::new(negative_pool, base, &scan, &mut rng);
    let needed = if cfg.negatives_per_stage == 0 {
        train_pos.len()
    } else {
        cfg.negatives_per_stage
    };

    let mut meta = TrainingMetadata {
        seed: cfg.seed,
        positives: train_pos.len(),
        validation_positives: validation.len(),
        negative_pool_images: negative_pool.len(),
        negative_pool_windows: pool.windows.len(),
        feature_pool: features.len(),
        per_stage_min_detection: cfg.per_stage_min_detection,
        per_stage_max_fp: cfg.per_stage_max_fp,
        target_overall_fp: cfg.target_overall_fp,
        overall_false_positive_rate: 1.0,
        variance_floor: cfg.variance_floor,
        stages: Vec::new(),
        warning: None,
    };
    let mut stages: Vec<StrongClassifier<T>> = Vec::new();
    let mut survivors: Vec<usize> = (0..pool.windows.len()).collect();

    while stages.len() < cfg.max_stages && meta.overall_false_positive_rate > cfg.target_overall_fp
    {
        if let Some(last) = stages.last() {
            survivors = survivors
                .into_par_iter()
                .filter(|&k| {
                    let s = pool.sample(k, base, cfg.variance_floor);
                    last.evaluate(&s.window()).0
                })
                .collect();
        }
        if survivors.is_empty() {
            if stages.is_empty() {
                return Err(TrainError::EmptyPool);
            }
            meta.warning = Some(format!(
                "negative pool exhausted after {} stages: no pool window passes the cascade",
                stages.len()
            ));
            break;
        }
        let take = needed.min(survivors.len());
        let mut samples = train_pos.clone();
        samples.extend(
            survivors[..take]
                .iter()
                .map(|&k| pool.sample(k, base, cfg.variance_floor)),
        );

        let index = stages.len();
        let outcome = train_one_stage(index, &samples, &validation, &features, cfg, observer)?;
        let stats = StageStats {
            stumps: outcome.stage.stumps().len(),
            negatives: take,
            pool_survivors: survivors.len(),
            detection_rate: outcome.detection,
            false_positive_rate: outcome.fp,
        };
        meta.overall_false_positive_rate *= outcome.fp;
        observer(&TrainEvent::Stage {
            stage: index,
            stats: stats.clone(),
            overall_false_positive_rate: meta.overall_false_positive_rate,
        });
        meta.stages.push(stats);
        stages.push(outcome.stage);
        if take < needed {
            meta.warning = Some(format!(
                "negative pool exhausted at stage {index}: {take} of {needed} negatives available"
            ));
            break;
        }
    }
    Ok(Cascade::new(base, stages, meta).expect("enumerated features fit the base window"))
}
