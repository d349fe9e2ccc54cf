//! SGD with momentum for the cross-entropy path, a projected primal-dual
//! step for the AUC-margin path, and the two learning-rate schedules.

use serde::{Deserialize, Serialize};

use crate::losses::{AucState, LossGrad};
use crate::model::ModelParams;
use crate::{Error, Result, Scalar};

pub const AUC_LR: f64 = 0.1;
pub const AUC_DECAY_EPOCH: usize = 15;
pub const AUC_DECAY_FACTOR: f64 = 0.1;
pub const CE_LR: f64 = 1e-3;
pub const CE_MOMENTUM: f64 = 0.9;
pub const CE_WEIGHT_DECAY: f64 = 1e-4;
pub const EPOCHS: usize = 30;

/// Heavy-ball SGD with L2 weight decay folded into the gradient.
#[derive(Clone, Debug)]
pub struct SgdState<T> {
    pub velocity: ModelParams<T>,
    pub lr: T,
    pub momentum: T,
    pub weight_decay: T,
}

impl<T: Scalar> SgdState<T> {
    pub fn new(params: &ModelParams<T>, lr: T, momentum: T, weight_decay: T) -> Result<Self> {
        if !(lr > T::zero()) {
            return Err(Error::Usage(format!("learning rate must be > 0, got {lr}")));
        }
        if !(momentum >= T::zero() && momentum < T::one()) {
            return Err(Error::Usage(format!("momentum must lie in [0, 1), got {momentum}")));
        }
        if !(weight_decay >= T::zero()) {
            return Err(Error::Usage(format!("weight decay must be >= 0, got {weight_decay}")));
        }
        Ok(Self {
            velocity: params.zeros_like(),
            lr,
            momentum,
            weight_decay,
        })
    }

    /// `v <- momentum v + (g + wd w)`, then `w <- w - lr v`.
    pub fn step(&mut self, params: &mut ModelParams<T>, grads: &ModelParams<T>) -> Result<()> {
        params.check_same_shape(grads, "sgd gradient")?;
        params.check_same_shape(&self.velocity, "sgd velocity")?;
        let (lr, mu, wd) = (self.lr, self.momentum, self.weight_decay);
        for ((w, &g), v) in params
            .iter_mut()
            .zip(grads.iter())
            .zip(self.velocity.iter_mut())
        {
            *v = mu * *v + g + wd * *w;
            *w = *w - lr * *v;
        }
        Ok(())
    }
}

pub fn sgd_step<T: Scalar>(
    params: &mut ModelParams<T>,
    grads: &ModelParams<T>,
    state: &mut SgdState<T>,
) -> Result<()> {
    state.step(params, grads)
}

/// Primal-dual step sizes for the AUC-margin path.
///
/// With `gamma > 0` and a reference point set, the primal gradient also
/// carries `gamma (w - w_ref)`, pulling the weights toward the reference.
#[derive(Clone, Debug)]
pub struct PesgState<T> {
    pub primal_lr: T,
    pub dual_lr: T,
    pub weight_decay: T,
    pub gamma: T,
    pub reference: Option<ModelParams<T>>,
    pub epoch: usize,
}

impl<T: Scalar> PesgState<T> {
    pub fn new(primal_lr: T, dual_lr: T, weight_decay: T) -> Result<Self> {
        if !(primal_lr > T::zero() && dual_lr > T::zero()) {
            return Err(Error::Usage(format!(
                "learning rates must be > 0, got primal {primal_lr}, dual {dual_lr}"
            )));
        }
        if !(weight_decay >= T::zero()) {
            return Err(Error::Usage(format!("weight decay must be >= 0, got {weight_decay}")));
        }
        Ok(Self {
            primal_lr,
            dual_lr,
            weight_decay,
            gamma: T::zero(),
            reference: None,
            epoch: 0,
        })
    }

    pub fn with_proximal(mut self, gamma: T) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn set_reference(&mut self, params: &ModelParams<T>) {
        self.reference = Some(params.clone());
    }

    /// Descent on `(a, b)`, projected ascent on `alpha`.
    pub fn step_auxiliaries(&self, aux: &mut AucState<T>, lg: &LossGrad<T>) -> Result<()> {
        if !(lg.d_a.is_finite() && lg.d_b.is_finite() && lg.d_alpha.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite auxiliary gradient (d_a {}, d_b {}, d_alpha {}) at epoch {}",
                lg.d_a, lg.d_b, lg.d_alpha, self.epoch
            )));
        }
        aux.a = aux.a - self.primal_lr * lg.d_a;
        aux.b = aux.b - self.primal_lr * lg.d_b;
        aux.alpha = (aux.alpha + self.dual_lr * lg.d_alpha).max(T::zero());
        Ok(())
    }

    /// Full primal-dual update of the model weights and the auxiliaries.
    pub fn step(
        &self,
        params: &mut ModelParams<T>,
        grads: &ModelParams<T>,
        aux: &mut AucState<T>,
        lg: &LossGrad<T>,
    ) -> Result<()> {
        params.check_same_shape(grads, "pesg gradient")?;
        if let Some(bad) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite model gradient at flat index {bad}, epoch {}",
                self.epoch
            )));
        }
        if aux.alpha < T::zero() {
            return Err(Error::Domain(format!("alpha must be >= 0 on entry, got {}", aux.alpha)));
        }
        self.step_auxiliaries(aux, lg)?;
        let (lr, wd) = (self.primal_lr, self.weight_decay);
        match (&self.reference, self.gamma > T::zero()) {
            (Some(reference), true) => {
                params.check_same_shape(reference, "proximal reference")?;
                let gamma = self.gamma;
                for ((w, &g), &r) in params.iter_mut().zip(grads.iter()).zip(reference.iter()) {
                    *w = *w - lr * (g + wd * *w + gamma * (*w - r));
                }
            }
            _ => {
                for (w, &g) in params.iter_mut().zip(grads.iter()) {
                    *w = *w - lr * (g + wd * *w);
                }
            }
        }
        Ok(())
    }
}

pub fn pesg_step<T: Scalar>(
    params: &mut ModelParams<T>,
    grads: &ModelParams<T>,
    aux: &mut AucState<T>,
    lg: &LossGrad<T>,
    state: &PesgState<T>,
) -> Result<()> {
    state.step(params, grads, aux, lg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    /// `base * factor^(number of milestones <= epoch)`.
    StepDecay {
        base_lr: f64,
        milestones: Vec<usize>,
        factor: f64,
    },
    /// Half-cosine from `base_lr` at epoch 0 to 0 at `total_epochs`.
    Cosine { base_lr: f64, total_epochs: usize },
}

impl Schedule {
    pub fn step_decay(base_lr: f64, milestones: Vec<usize>, factor: f64) -> Result<Self> {
        let s = Schedule::StepDecay {
            base_lr,
            milestones,
            factor,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn cosine(base_lr: f64, total_epochs: usize) -> Result<Self> {
        let s = Schedule::Cosine {
            base_lr,
            total_epochs,
        };
        s.validate()?;
        Ok(s)
    }

    /// Step decay at the default milestone.
    pub fn auc_default() -> Self {
        Schedule::StepDecay {
            base_lr: AUC_LR,
            milestones: vec![AUC_DECAY_EPOCH],
            factor: AUC_DECAY_FACTOR,
        }
    }

    pub fn ce_default() -> Self {
        Schedule::Cosine {
            base_lr: CE_LR,
            total_epochs: EPOCHS,
        }
    }

    pub fn base_lr(&self) -> f64 {
        match self {
            Schedule::StepDecay { base_lr, .. } | Schedule::Cosine { base_lr, .. } => *base_lr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr() > 0.0 && self.base_lr().is_finite()) {
            return Err(Error::Usage(format!("base lr must be > 0, got {}", self.base_lr())));
        }
        match self {
            Schedule::StepDecay {
                milestones, factor, ..
            } => {
                if !(*factor > 0.0 && *factor < 1.0) {
                    return Err(Error::Usage(format!("decay factor must lie in (0, 1), got {factor}")));
                }
                if milestones.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::Usage(format!(
                        "milestones must be strictly increasing, got {milestones:?}"
                    )));
                }
            }
            Schedule::Cosine { total_epochs, .. } => {
                if *total_epochs == 0 {
                    return Err(Error::Usage("cosine schedule needs total_epochs >= 1".into()));
                }
            }
        }
        Ok(())
    }

    /// Learning rate for a 0-indexed epoch. Cosine clamps past the end.
    pub fn lr(&self, epoch: usize) -> f64 {
        match self {
            Schedule::StepDecay {
                base_lr,
                milestones,
                factor,
            } => {
                let passed = milestones.iter().filter(|&&m| m <= epoch).count();
                base_lr * factor.powi(passed as i32)
            }
            Schedule::Cosine {
                base_lr,
                total_epochs,
            } => {
                let t = epoch.min(*total_epochs) as f64 / *total_epochs as f64;
                base_lr * (1.0 + (std::f64::consts::PI * t).cos()) / 2.0
            }
        }
    }
}

pub fn schedule_lr(schedule: &Schedule, epoch: usize) -> f64 {
    schedule.lr(epoch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{auc_margin_batch, inner_optima};
    use crate::model::{init_params, Activation, ModelSpec};

    fn params() -> ModelParams<f64> {
        init_params(&ModelSpec::new(vec![3, 2, 1], Activation::Relu).unwrap(), 3).unwrap()
    }

    fn constant_grads(p: &ModelParams<f64>, g: f64) -> ModelParams<f64> {
        let mut out = p.zeros_like();
        out.iter_mut().for_each(|v| *v = g);
        out
    }

    #[test]
    fn plain_sgd_reduction() {
        let mut p = params();
        let start = p.clone();
        let g = constant_grads(&p, 0.5);
        let mut s = SgdState::new(&p, 0.1, 0.0, 0.0).unwrap();
        s.step(&mut p, &g).unwrap();
        for (&a, &b) in p.iter().zip(start.iter()) {
            assert!((a - (b - 0.05)).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_gradient_fixed_point() {
        let mut p = params();
        let start = p.clone();
        let mut s = SgdState::new(&p, 0.1, 0.9, 0.0).unwrap();
        let z = p.zeros_like();
        s.step(&mut p, &z).unwrap();
        assert_eq!(p, start);
    }

    #[test]
    fn momentum_two_step_unroll() {
        let mut p = params();
        let start = p.clone();
        let g = constant_grads(&p, 2.0);
        let mut s = SgdState::new(&p, 0.01, 0.9, 0.0).unwrap();
        s.step(&mut p, &g).unwrap();
        s.step(&mut p, &g).unwrap();
        for (&a, &b) in p.iter().zip(start.iter()) {
            assert!((b - a - 0.01 * 2.0 * 2.9).abs() < 1e-14);
        }
    }

    #[test]
    fn sgd_rejects_bad_hyperparameters_and_shapes() {
        let p = params();
        assert!(SgdState::new(&p, 0.0, 0.9, 0.0).is_err());
        assert!(SgdState::new(&p, 0.1, 1.0, 0.0).is_err());
        assert!(SgdState::new(&p, 0.1, 0.5, -1.0).is_err());
        let other: ModelParams<f64> =
            init_params(&ModelSpec::new(vec![3, 1], Activation::Relu).unwrap(), 0).unwrap();
        let mut s = SgdState::new(&p, 0.1, 0.0, 0.0).unwrap();
        let mut q = p.clone();
        assert!(matches!(s.step(&mut q, &other), Err(Error::Shape(_))));
    }

    fn lossgrad(d_a: f64, d_b: f64, d_alpha: f64) -> LossGrad<f64> {
        LossGrad { value: 0.0, d_scores: vec![], d_a, d_b, d_alpha }
    }

    #[test]
    fn dual_projection_clamps_to_zero() {
        let s = PesgState::new(0.1, 0.1, 0.0).unwrap();
        let mut aux = AucState { a: 0.0, b: 0.0, alpha: 0.05, margin: 1.0, prior: 0.5 };
        s.step_auxiliaries(&mut aux, &lossgrad(0.0, 0.0, -10.0)).unwrap();
        assert_eq!(aux.alpha, 0.0);
    }

    #[test]
    fn pesg_zero_gradient_fixed_point() {
        let s = PesgState::new(0.1, 0.1, 0.0).unwrap();
        let mut p = params();
        let start = p.clone();
        let mut aux = AucState { a: 0.3, b: 0.2, alpha: 0.7, margin: 1.0, prior: 0.5 };
        let before = aux;
        let z = p.zeros_like();
        s.step(&mut p, &z, &mut aux, &lossgrad(0.0, 0.0, 0.0)).unwrap();
        assert_eq!(p, start);
        assert_eq!(aux, before);
    }

    #[test]
    fn pesg_non_finite_gradient_is_numerical_error() {
        let s = PesgState::new(0.1, 0.1, 0.0).unwrap();
        let mut p = params();
        let mut aux = AucState { a: 0.0, b: 0.0, alpha: 0.0, margin: 1.0, prior: 0.5 };
        let mut g = p.zeros_like();
        *g.iter_mut().next().unwrap() = f64::NAN;
        assert!(matches!(
            s.step(&mut p, &g, &mut aux, &lossgrad(0.0, 0.0, 0.0)),
            Err(Error::Numerical(_))
        ));
        let z = p.zeros_like();
        assert!(matches!(
            s.step(&mut p, &z, &mut aux, &lossgrad(f64::INFINITY, 0.0, 0.0)),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn proximal_term_pulls_toward_reference() {
        let mut s = PesgState::new(0.1, 0.1, 0.0).unwrap().with_proximal(1.0);
        let reference = params();
        s.set_reference(&reference);
        let mut p = reference.clone();
        p.iter_mut().for_each(|w| *w += 1.0);
        let mut aux = AucState { a: 0.0, b: 0.0, alpha: 0.0, margin: 1.0, prior: 0.5 };
        let z = p.zeros_like();
        s.step(&mut p, &z, &mut aux, &lossgrad(0.0, 0.0, 0.0)).unwrap();
        for (&w, &r) in p.iter().zip(reference.iter()) {
            assert!((w - r - 0.9).abs() < 1e-12);
        }
    }

    #[test]
    fn frozen_scores_converge_to_inner_optima() {
        let scores = [0.9f64, 0.7, 0.8, 0.2, 0.4, 0.1, 0.5, 0.3];
        let labels = [true, true, false, false, false, false, false, true];
        let prior = 3.0 / 8.0;
        let (a, b, alpha) = inner_optima(&scores, &labels, 1.0).unwrap();
        let s = PesgState::new(0.05, 0.05, 0.0).unwrap();
        let mut aux = AucState { a: 0.0, b: 0.0, alpha: 0.0, margin: 1.0, prior };
        for _ in 0..2000 {
            let lg = auc_margin_batch(&scores, &labels, &aux).unwrap();
            s.step_auxiliaries(&mut aux, &lg).unwrap();
            assert!(aux.alpha >= 0.0);
        }
        assert!((aux.a - a).abs() < 1e-3);
        assert!((aux.b - b).abs() < 1e-3);
        assert!((aux.alpha - alpha).abs() < 1e-3);
    }

    #[test]
    fn step_schedule_decays_at_epoch_fifteen() {
        let s = Schedule::auc_default();
        assert_eq!(s.lr(0), 0.1);
        assert_eq!(s.lr(14), 0.1);
        assert!((s.lr(15) - 0.01).abs() < 1e-17);
        assert!((s.lr(29) - 0.01).abs() < 1e-17);
    }

    #[test]
    fn cosine_schedule_points() {
        let s = Schedule::ce_default();
        assert_eq!(s.lr(0), 1e-3);
        assert!((s.lr(15) - 5e-4).abs() < 1e-18);
        assert!(s.lr(30).abs() < 1e-18);
        assert_eq!(s.lr(45), s.lr(30));
    }

    #[test]
    fn schedules_are_non_increasing() {
        let schedules = [
            Schedule::auc_default(),
            Schedule::ce_default(),
            Schedule::step_decay(1.0, vec![2, 5, 9], 0.5).unwrap(),
        ];
        for s in &schedules {
            for e in 0..60 {
                assert!(s.lr(e + 1) <= s.lr(e));
            }
        }
    }

    #[test]
    fn schedule_validation() {
        assert!(Schedule::step_decay(0.1, vec![5, 5], 0.1).is_err());
        assert!(Schedule::step_decay(0.1, vec![5], 1.0).is_err());
        assert!(Schedule::cosine(0.1, 0).is_err());
        assert!(Schedule::cosine(-0.1, 5).is_err());
    }
}
