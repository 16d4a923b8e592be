//! Attentional cascade: stages are evaluated in order and the first
//! rejection ends evaluation of the window.

mod format;
mod train;

pub use format::{
    from_text, load_cascade, save_cascade, to_text, CascadeFormatError, FORMAT_VERSION,
};
pub use train::{
    train_cascade, train_cascade_observed, CascadeTrainConfig, TrainError, TrainEvent,
    MIN_POSITIVES,
};

use thiserror::Error;

use crate::boosting::{Polarity, StrongClassifier};
use crate::features::{scale_rect, BaseWindow, WeightedRect};
use crate::imaging::SummedArea;
use crate::scalar::Scalar;
use crate::window::Window;

#[derive(Debug, Error, PartialEq)]
pub enum CascadeError {
    #[error("cascade has no stages")]
    NoStages,
    #[error("stage {stage} stump {stump}: {detail}")]
    FeatureOutsideWindow {
        stage: usize,
        stump: usize,
        detail: String,
    },
    #[error("window does not fit the image")]
    OutOfBounds,
}

/// Measured statistics for one trained stage.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct StageStats {
    pub stumps: usize,
    pub negatives: usize,
    /// Pool windows accepted by all earlier stages when this stage's
    /// negatives were mined.
    pub pool_survivors: usize,
    pub detection_rate: f64,
    pub false_positive_rate: f64,
}

/// Training provenance stored alongside the stages.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct TrainingMetadata {
    pub seed: u64,
    pub positives: usize,
    pub validation_positives: usize,
    pub negative_pool_images: usize,
    pub negative_pool_windows: usize,
    pub feature_pool: usize,
    pub per_stage_min_detection: f64,
    pub per_stage_max_fp: f64,
    pub target_overall_fp: f64,
    /// Product of the per-stage false-positive rates.
    pub overall_false_positive_rate: f64,
    pub variance_floor: f64,
    pub stages: Vec<StageStats>,
    /// Set when training stopped early, e.g. the negative pool ran dry.
    pub warning: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CascadeOutcome<T = f64> {
    pub accept: bool,
    pub stages_evaluated: usize,
    /// Score of the last stage evaluated.
    pub final_score: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cascade<T = f64> {
    base_window: BaseWindow,
    stages: Vec<StrongClassifier<T>>,
    pub metadata: TrainingMetadata,
}

impl<T: Scalar> Cascade<T> {
    pub fn new(
        base_window: BaseWindow,
        stages: Vec<StrongClassifier<T>>,
        metadata: TrainingMetadata,
    ) -> Result<Self, CascadeError> {
        if stages.is_empty() {
            return Err(CascadeError::NoStages);
        }
        for (si, stage) in stages.iter().enumerate() {
            for (ti, stump) in stage.stumps().iter().enumerate() {
                stump.feature.check_fits(base_window).map_err(|e| {
                    CascadeError::FeatureOutsideWindow {
                        stage: si,
                        stump: ti,
                        detail: e.to_string(),
                    }
                })?;
            }
        }
        Ok(Self {
            base_window,
            stages,
            metadata,
        })
    }

    #[inline]
    pub fn base_window(&self) -> BaseWindow {
        self.base_window
    }

    #[inline]
    pub fn stages(&self) -> &[StrongClassifier<T>] {
        &self.stages
    }

    pub fn stump_count(&self) -> usize {
        self.stages.iter().map(|s| s.stumps().len()).sum()
    }

    /// Cascade made of the first `n` stages.
    pub fn truncated(&self, n: usize) -> Result<Self, CascadeError> {
        Self::new(
            self.base_window,
            self.stages[..n.min(self.stages.len())].to_vec(),
            self.metadata.clone(),
        )
    }

    /// Short-circuit evaluation.
    pub fn evaluate<S: SummedArea + ?Sized>(&self, window: &Window<'_, S, T>) -> CascadeOutcome<T> {
        let mut score = T::zero();
        for (i, stage) in self.stages.iter().enumerate() {
            let (pass, s) = stage.evaluate(window);
            score = s;
            if !pass {
                return CascadeOutcome {
                    accept: false,
                    stages_evaluated: i + 1,
                    final_score: score,
                };
            }
        }
        CascadeOutcome {
            accept: true,
            stages_evaluated: self.stages.len(),
            final_score: score,
        }
    }

    /// Every stage's decision and score, without short-circuiting.
    pub fn evaluate_all<S: SummedArea + ?Sized>(
        &self,
        window: &Window<'_, S, T>,
    ) -> Vec<(bool, T)> {
        self.stages.iter().map(|s| s.evaluate(window)).collect()
    }

    pub fn eval_cascade<S: SummedArea + ?Sized>(
        &self,
        ii: &S,
        origin: (usize, usize),
        scale: T,
        variance_floor: f64,
    ) -> Result<CascadeOutcome<T>, CascadeError> {
        let w = Window::new(ii, self.base_window, origin, scale, variance_floor)
            .ok_or(CascadeError::OutOfBounds)?;
        Ok(self.evaluate(&w))
    }

    /// Copy with every feature rectangle pre-scaled for one scan scale.
    pub fn scaled(&self, scale: T) -> ScaledCascade<T> {
        ScaledCascade {
            side: self.base_window.scaled_side(scale),
            scale,
            stages: self
                .stages
                .iter()
                .map(|st| ScaledStage {
                    threshold: st.threshold(),
                    stumps: st
                        .stumps()
                        .iter()
                        .map(|s| ScaledStump {
                            rects: s
                                .feature
                                .rects()
                                .iter()
                                .map(|r| WeightedRect {
                                    rect: scale_rect(r.rect, scale),
                                    weight: r.weight,
                                })
                                .collect(),
                            polarity: s.polarity,
                            threshold: s.threshold,
                            alpha: s.alpha,
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug)]
struct ScaledStump<T> {
    rects: Vec<WeightedRect<T>>,
    polarity: Polarity,
    threshold: T,
    alpha: T,
}

#[derive(Clone, Debug)]
struct ScaledStage<T> {
    stumps: Vec<ScaledStump<T>>,
    threshold: T,
}

/// A cascade with rectangles already scaled to one detector scale. Gives
/// results bit-identical to [`Cascade::evaluate`] at that scale.
#[derive(Clone, Debug)]
pub struct ScaledCascade<T = f64> {
    side: usize,
    scale: T,
    stages: Vec<ScaledStage<T>>,
}

impl<T: Scalar> ScaledCascade<T> {
    #[inline]
    pub fn side(&self) -> usize {
        self.side
    }

    #[inline]
    pub fn scale(&self) -> T {
        self.scale
    }

    pub fn evaluate<S: SummedArea + ?Sized>(&self, window: &Window<'_, S, T>) -> CascadeOutcome<T> {
        let mut score = T::zero();
        for (i, stage) in self.stages.iter().enumerate() {
            score = T::zero();
            for s in &stage.stumps {
                let v = window.placed_value(&s.rects);
                if crate::boosting::eval_stump(s.polarity, s.threshold, v) == 1 {
                    score += s.alpha;
                }
            }
            if !(score >= stage.threshold) {
                return CascadeOutcome {
                    accept: false,
                    stages_evaluated: i + 1,
                    final_score: score,
                };
            }
        }
        CascadeOutcome {
            accept: true,
            stages_evaluated: self.stages.len(),
            final_score: score,
        }
    }
}
