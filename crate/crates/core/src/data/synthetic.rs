use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{DatasetTable, SplitMix64};
use crate::{Error, Result};

/// Reference class counts the default imbalance is scaled from.
pub const REFERENCE_NEGATIVES: usize = 13_794;
pub const REFERENCE_POSITIVES: usize = 2_158;

/// Two isotropic Gaussian classes separated along the first axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub dim: usize,
    pub n_neg: usize,
    pub n_pos: usize,
    pub mean_separation: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self::scaled(0.1)
    }
}

impl SyntheticSpec {
    /// Reference counts times `scale`, rounded down (at least one each).
    pub fn scaled(scale: f64) -> Self {
        let count = |n: usize| ((n as f64 * scale).floor() as usize).max(1);
        Self {
            dim: 8,
            n_neg: count(REFERENCE_NEGATIVES),
            n_pos: count(REFERENCE_POSITIVES),
            mean_separation: 2.0,
            noise_std: 1.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.n_neg == 0 || self.n_pos == 0 {
            return Err(Error::Usage(format!(
                "synthetic data needs positive dim and class counts, got dim {}, {} negatives, {} positives",
                self.dim, self.n_neg, self.n_pos
            )));
        }
        if !(self.mean_separation >= 0.0 && self.mean_separation.is_finite()) {
            return Err(Error::Usage(format!(
                "mean separation must be >= 0, got {}",
                self.mean_separation
            )));
        }
        if !(self.noise_std > 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Usage(format!("noise std must be > 0, got {}", self.noise_std)));
        }
        Ok(())
    }
}

/// Negatives ~ N(0, s^2 I) then positives ~ N(sep e_1, s^2 I), in that
/// row order.
pub fn gen_gaussian_mixture(spec: &SyntheticSpec) -> Result<DatasetTable> {
    spec.validate()?;
    let n = spec.n_neg + spec.n_pos;
    let mut rng = SplitMix64::new(spec.seed);
    let mut features = Array2::zeros((n, spec.dim));
    for (i, mut row) in features.rows_mut().into_iter().enumerate() {
        for v in row.iter_mut() {
            *v = spec.noise_std * rng.gaussian();
        }
        if i >= spec.n_neg {
            row[0] += spec.mean_separation;
        }
    }
    let labels = (0..n).map(|i| i >= spec.n_neg).collect();
    DatasetTable::new(
        features,
        labels,
        format!(
            "synthetic:dim={},neg={},pos={},sep={},noise={},seed={}",
            spec.dim, spec.n_neg, spec.n_pos, spec.mean_separation, spec.noise_std, spec.seed
        ),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::roc_auc;
    use statrs::distribution::{ContinuousCDF, Normal};

    #[test]
    fn default_counts_follow_reference_ratio() {
        let s = SyntheticSpec::default();
        assert_eq!((s.n_neg, s.n_pos), (1379, 215));
        assert!((s.n_neg as f64 / s.n_pos as f64 - 6.41).abs() < 0.01);
        let t = gen_gaussian_mixture(&s).unwrap();
        assert_eq!(t.class_counts(), (215, 1379));
    }

    #[test]
    fn deterministic_given_seed() {
        let s = SyntheticSpec { seed: 5, ..SyntheticSpec::scaled(0.01) };
        assert_eq!(gen_gaussian_mixture(&s).unwrap(), gen_gaussian_mixture(&s).unwrap());
        let other = SyntheticSpec { seed: 6, ..s.clone() };
        assert_ne!(
            gen_gaussian_mixture(&s).unwrap().features,
            gen_gaussian_mixture(&other).unwrap().features
        );
    }

    #[test]
    fn no_separation_means_chance_auc() {
        let s = SyntheticSpec { mean_separation: 0.0, seed: 3, ..SyntheticSpec::default() };
        let t = gen_gaussian_mixture(&s).unwrap();
        let x0: Vec<f64> = t.features.column(0).to_vec();
        assert!((roc_auc(&x0, &t.labels).unwrap() - 0.5).abs() < 0.05);
    }

    #[test]
    fn wide_separation_is_nearly_perfect() {
        // Bayes AUC for a unit-variance shift of 6 along one axis.
        let bayes = Normal::new(0.0, 1.0).unwrap().cdf(6.0 / 2f64.sqrt());
        assert!(bayes > 0.999);
        let s = SyntheticSpec { mean_separation: 6.0, noise_std: 1.0, seed: 1, ..SyntheticSpec::default() };
        let t = gen_gaussian_mixture(&s).unwrap();
        let x0: Vec<f64> = t.features.column(0).to_vec();
        assert!(roc_auc(&x0, &t.labels).unwrap() > 0.999);
    }

    #[test]
    fn rejects_invalid_specs() {
        let base = SyntheticSpec::default();
        assert!(gen_gaussian_mixture(&SyntheticSpec { n_pos: 0, ..base.clone() }).is_err());
        assert!(gen_gaussian_mixture(&SyntheticSpec { noise_std: 0.0, ..base.clone() }).is_err());
        assert!(gen_gaussian_mixture(&SyntheticSpec { dim: 0, ..base }).is_err());
    }
}
