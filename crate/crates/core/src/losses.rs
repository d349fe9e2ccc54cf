//! Cross-entropy baseline and the AUC-margin min-max surrogate.
//!
//! The AUC-margin objective, averaged over a batch of scores `h_i` in
//! `(0, 1)` with class prior `p`, margin `m` and auxiliaries `a`, `b`,
//! `alpha`, is the mean of
//!
//! ```text
//! f_i = (1-p)(h_i - a)^2 [y_i = 1] + p (h_i - b)^2 [y_i = 0]
//!     + 2 alpha (p(1-p) m + p h_i [y_i = 0] - (1-p) h_i [y_i = 1])
//!     - p(1-p) alpha^2
//! ```
//!
//! minimized over the model and `(a, b)`, maximized over `alpha >= 0`.

use serde::{Deserialize, Serialize};

use crate::model::sigmoid;
use crate::{Error, Result, Scalar};

pub const DEFAULT_MARGIN: f64 = 1.0;

/// Auxiliary variables of the AUC-margin objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AucState<T> {
    /// Positive-class score center.
    pub a: T,
    /// Negative-class score center.
    pub b: T,
    /// Dual variable, kept non-negative.
    pub alpha: T,
    pub margin: T,
    /// Positive-class fraction of the training split.
    pub prior: T,
}

impl<T: Scalar> AucState<T> {
    /// Zero auxiliaries for the given prior and margin.
    pub fn new(prior: T, margin: T) -> Result<Self> {
        let s = Self {
            a: T::zero(),
            b: T::zero(),
            alpha: T::zero(),
            margin,
            prior,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a.is_finite() && self.b.is_finite() && self.alpha.is_finite()) {
            return Err(Error::Domain("non-finite auxiliary variable".into()));
        }
        if self.alpha < T::zero() {
            return Err(Error::Domain(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.margin > T::zero()) {
            return Err(Error::Domain(format!("margin must be > 0, got {}", self.margin)));
        }
        if !(self.prior > T::zero() && self.prior < T::one()) {
            return Err(Error::Domain(format!(
                "prior must lie in (0, 1), got {}",
                self.prior
            )));
        }
        Ok(())
    }
}

/// Loss value and partial derivatives.
///
/// `d_scores` is taken with respect to whatever the loss consumes: logits
/// for cross-entropy, sigmoid scores for the AUC-margin loss.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGrad<T> {
    pub value: T,
    pub d_scores: Vec<T>,
    pub d_a: T,
    pub d_b: T,
    pub d_alpha: T,
}

impl<T: Scalar> LossGrad<T> {
    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
            && self.d_a.is_finite()
            && self.d_b.is_finite()
            && self.d_alpha.is_finite()
            && self.d_scores.iter().all(|v| v.is_finite())
    }
}

fn check_batch<T>(scores: &[T], labels: &[bool]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::Usage("empty batch".into()));
    }
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    Ok(())
}

/// Mean binary cross-entropy on raw logits.
pub fn bce_with_logits<T: Scalar>(logits: &[T], labels: &[bool]) -> Result<LossGrad<T>> {
    check_batch(logits, labels)?;
    let n = T::from_usize(logits.len()).unwrap();
    let mut value = T::zero();
    let mut d_scores = Vec::with_capacity(logits.len());
    for (&z, &y) in logits.iter().zip(labels) {
        let y = if y { T::one() } else { T::zero() };
        value = value + z.max(T::zero()) - z * y + (-z.abs()).exp().ln_1p();
        d_scores.push((sigmoid(z) - y) / n);
    }
    Ok(LossGrad {
        value: value / n,
        d_scores,
        d_a: T::zero(),
        d_b: T::zero(),
        d_alpha: T::zero(),
    })
}

/// AUC-margin loss on sigmoid scores, with exact partials in every block.
pub fn auc_margin_batch<T: Scalar>(
    scores: &[T],
    labels: &[bool],
    state: &AucState<T>,
) -> Result<LossGrad<T>> {
    check_batch(scores, labels)?;
    state.validate()?;
    if let Some(bad) = scores.iter().find(|&&h| !(h > T::zero() && h < T::one())) {
        return Err(Error::Domain(format!("score {bad} outside (0, 1)")));
    }
    let two = T::lit(2.0);
    let p = state.prior;
    let q = T::one() - p;
    let pq = p * q;
    let AucState { a, b, alpha, margin, .. } = *state;
    let n = T::from_usize(scores.len()).unwrap();

    let mut value = T::zero();
    let mut d_scores = Vec::with_capacity(scores.len());
    let (mut d_a, mut d_b, mut d_alpha) = (T::zero(), T::zero(), T::zero());
    for (&h, &y) in scores.iter().zip(labels) {
        let (f, dh, da, db, dal) = if y {
            let r = h - a;
            (
                q * r * r + two * alpha * (pq * margin - q * h) - pq * alpha * alpha,
                two * q * r - two * alpha * q,
                -two * q * r,
                T::zero(),
                two * (pq * margin - q * h) - two * pq * alpha,
            )
        } else {
            let r = h - b;
            (
                p * r * r + two * alpha * (pq * margin + p * h) - pq * alpha * alpha,
                two * p * r + two * alpha * p,
                T::zero(),
                -two * p * r,
                two * (pq * margin + p * h) - two * pq * alpha,
            )
        };
        value = value + f;
        d_scores.push(dh / n);
        d_a = d_a + da;
        d_b = d_b + db;
        d_alpha = d_alpha + dal;
    }
    Ok(LossGrad {
        value: value / n,
        d_scores,
        d_a: d_a / n,
        d_b: d_b / n,
        d_alpha: d_alpha / n,
    })
}

/// AUC-margin loss composed with the sigmoid: `d_scores` is w.r.t. logits.
pub fn auc_margin_logits<T: Scalar>(
    logits: &[T],
    labels: &[bool],
    state: &AucState<T>,
) -> Result<LossGrad<T>> {
    let scores: Vec<T> = logits.iter().map(|&z| sigmoid(z)).collect();
    let mut lg = auc_margin_batch(&scores, labels, state)?;
    for (d, &h) in lg.d_scores.iter_mut().zip(&scores) {
        *d = *d * h * (T::one() - h);
    }
    Ok(lg)
}

/// Stationary point of the AUC-margin loss in `(a, b, alpha)` for fixed
/// scores: the class means and the projected mean gap deficit.
///
/// The `alpha` formula is exact when the batch's positive fraction equals
/// the prior; the `a` and `b` components are exact for any batch.
pub fn inner_optima<T: Scalar>(scores: &[T], labels: &[bool], margin: T) -> Result<(T, T, T)> {
    check_batch(scores, labels)?;
    let (mut sp, mut np, mut sn, mut nn) = (T::zero(), 0usize, T::zero(), 0usize);
    for (&h, &y) in scores.iter().zip(labels) {
        if y {
            sp = sp + h;
            np += 1;
        } else {
            sn = sn + h;
            nn += 1;
        }
    }
    if np == 0 || nn == 0 {
        return Err(Error::Usage("batch must contain both classes".into()));
    }
    let a = sp / T::from_usize(np).unwrap();
    let b = sn / T::from_usize(nn).unwrap();
    let alpha = (margin + b - a).max(T::zero());
    Ok((a, b, alpha))
}

/// Fraction of positive labels. Both classes must be present.
pub fn estimate_prior(labels: &[bool]) -> Result<f64> {
    let pos = labels.iter().filter(|&&y| y).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::Usage(format!(
            "prior needs both classes, got {pos} positives out of {}",
            labels.len()
        )));
    }
    Ok(pos as f64 / labels.len() as f64)
}
