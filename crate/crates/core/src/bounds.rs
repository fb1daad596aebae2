//! Closed-form generalization bounds for a model trained on periods
//! `0..t_te` and tested on period `t_te`.
//!
//! Every bound has the shape
//!
//! ```text
//! L* + eps + 2 sum_t a_t d_t + 4 sqrt( sum_t a_t^2 ln(m_t) / m_t * ln(2 / delta) )
//! ```
//!
//! where `a` is a weighting of the training periods that sums to one. Fine-
//! tuning with a proximal step weights periods geometrically; retraining
//! weights them by size. Logarithms are natural and the subgaussian scale is
//! fixed to 1, so rescaling the loss rescales the bound.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Non-negative period weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CoefficientVector(pub Vec<f64>);

impl CoefficientVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }
}

/// Inputs shared by the bound calculators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    /// Proximal mixing factor in (0, 1).
    pub gamma: f64,
    /// Index of the test period; training used periods `0..t_te`.
    pub t_te: usize,
    /// Size of the pretraining period.
    pub m0: f64,
    /// Common size of periods `1..t_te`.
    pub m1: f64,
    /// Confidence parameter in (0, 1).
    pub delta: f64,
    /// Shift measures `d_{t, t_te}` for `t = 0..t_te`.
    pub shifts: Vec<f64>,
    /// Best achievable test loss.
    #[serde(default)]
    pub l_star: f64,
    /// Optimization slack.
    #[serde(default)]
    pub epsilon: f64,
}

impl BoundInputs {
    /// Period sizes `[m0, m1, ..., m1]` of length `t_te`.
    pub fn sizes(&self) -> Vec<f64> {
        (0..self.t_te)
            .map(|t| if t == 0 { self.m0 } else { self.m1 })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_te == 0 {
            return Err(Error::InvalidArgument("t_te must be >= 1".into()));
        }
        if self.shifts.len() != self.t_te {
            return Err(Error::InvalidArgument(format!(
                "expected {} shift values, got {}",
                self.t_te,
                self.shifts.len()
            )));
        }
        if self.shifts.iter().any(|d| !(*d >= 0.0) || !d.is_finite()) {
            return Err(Error::InvalidArgument("shift values must be finite and >= 0".into()));
        }
        check_delta(self.delta)?;
        check_sizes(&self.sizes())?;
        if !(self.epsilon >= 0.0) {
            return Err(Error::InvalidArgument("epsilon must be >= 0".into()));
        }
        Ok(())
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("delta {delta} outside (0, 1)")))
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("gamma {gamma} outside (0, 1)")))
    }
}

fn check_sizes(sizes: &[f64]) -> Result<()> {
    if sizes.iter().any(|m| !(*m >= 2.0) || !m.is_finite()) {
        return Err(Error::InvalidArgument("dataset sizes must be finite and >= 2".into()));
    }
    Ok(())
}

/// Geometric weights of proximal fine-tuning:
/// `a_0 = g^(t_te-1)`, `a_t = (1-g) g^(t_te-t-1)`.
pub fn finetune_coefficients(gamma: f64, t_te: usize) -> Result<CoefficientVector> {
    check_gamma(gamma)?;
    if t_te == 0 {
        return Err(Error::InvalidArgument("t_te must be >= 1".into()));
    }
    let mut alpha = Vec::with_capacity(t_te);
    alpha.push(gamma.powi(t_te as i32 - 1));
    for t in 1..t_te {
        alpha.push((1.0 - gamma) * gamma.powi((t_te - t - 1) as i32));
    }
    Ok(CoefficientVector(alpha))
}

/// Size-proportional weights of full retraining.
pub fn retrain_coefficients(sizes: &[f64]) -> Result<CoefficientVector> {
    if sizes.is_empty() {
        return Err(Error::Empty("size vector"));
    }
    if sizes.iter().any(|m| !(*m > 0.0) || !m.is_finite()) {
        return Err(Error::InvalidArgument("dataset sizes must be positive".into()));
    }
    let total: f64 = sizes.iter().sum();
    Ok(CoefficientVector(sizes.iter().map(|m| m / total).collect()))
}

/// Bound for an arbitrary weighting, with sizes `[m0, m1, ...]` taken from
/// `inputs`.
pub fn general_bound(alpha: &CoefficientVector, inputs: &BoundInputs) -> Result<f64> {
    inputs.validate()?;
    general_bound_with_sizes(alpha, inputs, &inputs.sizes())
}

/// Bound for an arbitrary weighting and explicit period sizes.
pub fn general_bound_with_sizes(alpha: &CoefficientVector, inputs: &BoundInputs, sizes: &[f64]) -> Result<f64> {
    check_delta(inputs.delta)?;
    check_sizes(sizes)?;
    let a = alpha.as_slice();
    if a.len() != sizes.len() || a.len() != inputs.shifts.len() {
        return Err(Error::InvalidArgument(format!(
            "{} weights, {} sizes and {} shift values",
            a.len(),
            sizes.len(),
            inputs.shifts.len()
        )));
    }
    let shift: f64 = a.iter().zip(&inputs.shifts).map(|(a, d)| a * d).sum();
    let variance: f64 = a.iter().zip(sizes).map(|(a, m)| a * a * m.ln() / m).sum();
    Ok(inputs.l_star + inputs.epsilon + 2.0 * shift + 4.0 * (variance * (2.0 / inputs.delta).ln()).sqrt())
}

/// Fine-tuning bound in its displayed closed form. Requires `t_te >= 2`.
pub fn finetune_bound(inputs: &BoundInputs) -> Result<f64> {
    inputs.validate()?;
    check_gamma(inputs.gamma)?;
    if inputs.t_te < 2 {
        return Err(Error::InvalidArgument("fine-tuning bound needs t_te >= 2".into()));
    }
    let g = inputs.gamma;
    let t_te = inputs.t_te as i32;
    let d = &inputs.shifts;
    let mut shift = g.powi(t_te - 1) * d[0];
    for t in 1..inputs.t_te {
        shift += (1.0 - g) * g.powi(t_te - t as i32 - 1) * d[t];
    }
    let (m0, m1) = (inputs.m0, inputs.m1);
    let variance = g.powi(2 * t_te - 2) / (m0 / m0.ln())
        + (1.0 + g) * (1.0 - g.powi(2 * t_te - 4)) / ((1.0 - g) * (m1 / m1.ln()));
    Ok(inputs.l_star + inputs.epsilon + 2.0 * shift + 4.0 * (variance * (2.0 / inputs.delta).ln()).sqrt())
}

/// Retraining bound in its displayed closed form (after bounding every
/// `ln m_t` by `ln m0`).
pub fn retrain_bound(inputs: &BoundInputs) -> Result<f64> {
    inputs.validate()?;
    let (m0, m1) = (inputs.m0, inputs.m1);
    let total = m0 + (inputs.t_te as f64 - 1.0) * m1;
    let d = &inputs.shifts;
    let weighted: f64 = 2.0 * m0 * d[0] + d[1..].iter().map(|dt| 2.0 * m1 * dt).sum::<f64>();
    Ok(inputs.l_star
        + inputs.epsilon
        + weighted / total
        + 4.0 * (m0.ln() / total * (2.0 / inputs.delta).ln()).sqrt())
}

/// Result of the `bounds` calculator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    /// `None` when `t_te < 2`.
    pub ft_bound: Option<f64>,
    pub rt_bound: f64,
    pub ft_coefficients: CoefficientVector,
    pub rt_coefficients: CoefficientVector,
}

pub fn bound_report(inputs: &BoundInputs) -> Result<BoundReport> {
    inputs.validate()?;
    let ft_bound = if inputs.t_te >= 2 {
        Some(finetune_bound(inputs)?)
    } else {
        None
    };
    Ok(BoundReport {
        ft_bound,
        rt_bound: retrain_bound(inputs)?,
        ft_coefficients: finetune_coefficients(inputs.gamma, inputs.t_te)?,
        rt_coefficients: retrain_coefficients(&inputs.sizes())?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn inputs(t_te: usize, shifts: Vec<f64>) -> BoundInputs {
        BoundInputs {
            gamma: 0.5,
            t_te,
            m0: 1000.0,
            m1: 100.0,
            delta: 0.05,
            shifts,
            l_star: 0.0,
            epsilon: 0.0,
        }
    }

    #[test]
    fn finetune_coefficient_values() {
        assert_eq!(finetune_coefficients(0.3, 1).unwrap().0, vec![1.0]);
        assert_eq!(finetune_coefficients(0.5, 3).unwrap().0, vec![0.25, 0.25, 0.5]);
        assert!(finetune_coefficients(1.0, 3).is_err());
        assert!(finetune_coefficients(0.0, 3).is_err());
    }

    #[test]
    fn retrain_coefficient_values() {
        assert_eq!(retrain_coefficients(&[100.0, 50.0, 50.0]).unwrap().0, vec![0.5, 0.25, 0.25]);
        assert_eq!(retrain_coefficients(&[7.0, 7.0]).unwrap().0, vec![0.5, 0.5]);
        assert_eq!(retrain_coefficients(&[9.0]).unwrap().0, vec![1.0]);
        assert!(retrain_coefficients(&[9.0, 0.0]).is_err());
    }

    #[test]
    fn general_bound_single_term() {
        let mut inp = inputs(1, vec![0.3]);
        inp.m0 = 8.0;
        inp.delta = 2.0 / std::f64::consts::E;
        inp.l_star = 0.1;
        let got = general_bound(&CoefficientVector(vec![1.0]), &inp).unwrap();
        let expected = 0.1 + 0.6 + 4.0 * (8f64.ln() / 8.0).sqrt();
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn general_bound_vanishing_terms() {
        let mut inp = inputs(3, vec![0.0; 3]);
        inp.m0 = 1e12;
        inp.m1 = 1e12;
        inp.l_star = 0.2;
        inp.epsilon = 0.01;
        let alpha = finetune_coefficients(0.4, 3).unwrap();
        let got = general_bound(&alpha, &inp).unwrap();
        assert!((got - 0.21).abs() < 1e-4);
    }

    #[test]
    fn general_bound_rejects_bad_delta() {
        let mut inp = inputs(1, vec![0.0]);
        inp.delta = 1.0;
        assert!(general_bound(&CoefficientVector(vec![1.0]), &inp).is_err());
    }

    #[test]
    fn retrain_bound_collapses_at_first_period() {
        let mut inp = inputs(1, vec![0.4]);
        inp.l_star = 0.05;
        let got = retrain_bound(&inp).unwrap();
        let expected = 0.05 + 0.8 + 4.0 * ((1000f64.ln() / 1000.0) * (2.0 / 0.05f64).ln()).sqrt();
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn finetune_bound_needs_two_periods() {
        assert!(finetune_bound(&inputs(1, vec![0.1])).is_err());
        assert!(finetune_bound(&inputs(2, vec![0.1, 0.1])).is_ok());
    }

    #[test]
    fn retrain_variance_shrinks_with_more_periods() {
        let a = retrain_bound(&inputs(2, vec![0.0; 2])).unwrap();
        let b = retrain_bound(&inputs(5, vec![0.0; 5])).unwrap();
        assert!(b < a);
    }

    proptest! {
        #[test]
        fn coefficients_sum_to_one(gamma in 0.001f64..0.999, t_te in 1usize..40,
                                   sizes in prop::collection::vec(1.0f64..1e7, 1..40)) {
            let ft = finetune_coefficients(gamma, t_te).unwrap();
            prop_assert!((ft.sum() - 1.0).abs() < 1e-12);
            prop_assert!(ft.0.iter().all(|&a| a >= 0.0));
            for w in ft.0[1..].windows(2) {
                prop_assert!(w[1] > w[0]);
            }
            let rt = retrain_coefficients(&sizes).unwrap();
            prop_assert!((rt.sum() - 1.0).abs() < 1e-12);
        }
    }
}
