//! Question-answer trust for binary probabilistic predictions.
//!
//! A sample's trust is the model's confidence in the true class raised to
//! the reward exponent when the prediction is correct, or to the penalty
//! exponent when it is wrong. Confident wrong answers therefore score near
//! zero, and hesitant right answers score below one.

use serde::{Deserialize, Serialize};

use crate::{Error, Result, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrustConfig {
    pub reward_exponent: f64,
    pub penalty_exponent: f64,
    /// Predicted class is positive iff `prob >= threshold`.
    pub threshold: f64,
}

impl Default for TrustConfig {
    fn default() -> Self {
        Self {
            reward_exponent: 1.0,
            penalty_exponent: 1.0,
            threshold: 0.5,
        }
    }
}

impl TrustConfig {
    pub fn with_threshold(threshold: f64) -> Self {
        Self {
            threshold,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.reward_exponent > 0.0 && self.penalty_exponent > 0.0) {
            return Err(Error::Usage(format!(
                "trust exponents must be > 0, got reward {} and penalty {}",
                self.reward_exponent, self.penalty_exponent
            )));
        }
        if self.threshold.is_nan() {
            return Err(Error::Usage("trust threshold is NaN".into()));
        }
        Ok(())
    }
}

pub fn qa_trust<T: Scalar>(prob_pos: T, y_true: bool, cfg: &TrustConfig) -> Result<T> {
    if !(prob_pos >= T::zero() && prob_pos <= T::one()) {
        return Err(Error::Domain(format!("probability {prob_pos} outside [0, 1]")));
    }
    cfg.validate()?;
    let predicted = prob_pos >= T::lit(cfg.threshold);
    let confidence_in_truth = if y_true { prob_pos } else { T::one() - prob_pos };
    let exponent = if predicted == y_true {
        cfg.reward_exponent
    } else {
        cfg.penalty_exponent
    };
    Ok(confidence_in_truth.powf(T::lit(exponent)))
}

/// Mean question-answer trust over samples whose true label is `class`.
pub fn class_trust<T: Scalar>(probs: &[T], labels: &[bool], cfg: &TrustConfig, class: bool) -> Result<T> {
    if probs.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} probabilities but {} labels",
            probs.len(),
            labels.len()
        )));
    }
    let mut sum = T::zero();
    let mut count = 0usize;
    for (&p, &y) in probs.iter().zip(labels) {
        if y == class {
            sum = sum + qa_trust(p, y, cfg)?;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Usage(format!(
            "no samples of class {} to score",
            u8::from(class)
        )));
    }
    Ok(sum / T::from_usize(count).unwrap())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrustReport<T> {
    pub per_sample: Vec<T>,
    pub trust_pos: T,
    pub trust_neg: T,
    pub overall: T,
}

impl<T: Scalar> TrustReport<T> {
    /// Per-sample, per-class and overall trust. Both classes must be present.
    pub fn compute(probs: &[T], labels: &[bool], cfg: &TrustConfig) -> Result<Self> {
        if probs.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} probabilities but {} labels",
                probs.len(),
                labels.len()
            )));
        }
        let per_sample = probs
            .iter()
            .zip(labels)
            .map(|(&p, &y)| qa_trust(p, y, cfg))
            .collect::<Result<Vec<T>>>()?;
        let mean_where = |class: bool| -> Result<T> {
            let vals: Vec<T> = per_sample
                .iter()
                .zip(labels)
                .filter(|(_, &y)| y == class)
                .map(|(&t, _)| t)
                .collect();
            if vals.is_empty() {
                return Err(Error::Usage(format!(
                    "no samples of class {} to score",
                    u8::from(class)
                )));
            }
            Ok(vals.iter().fold(T::zero(), |s, &v| s + v) / T::from_usize(vals.len()).unwrap())
        };
        let trust_pos = mean_where(true)?;
        let trust_neg = mean_where(false)?;
        let overall = per_sample.iter().fold(T::zero(), |s, &v| s + v)
            / T::from_usize(per_sample.len()).unwrap();
        Ok(Self {
            per_sample,
            trust_pos,
            trust_neg,
            overall,
        })
    }
}
