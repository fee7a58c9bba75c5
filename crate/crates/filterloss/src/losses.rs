//! Classification losses over logits, built on one kernel: a target
//! distribution `q` (one-hot or label-smoothed) and a focusing exponent
//! `gamma` that damps well-classified samples.
//!
//! Families:
//! * `ce` - plain cross entropy (one-hot `q`, `gamma = 0`)
//! * `label_smooth` - cross entropy against smoothed `q`
//! * `focal` - one-hot `q` with the `(1 - p)^gamma` factor
//! * `focal_logits` - focal value computed from log-softmax directly,
//!   so saturated logits never go through `exp` and back
//! * `ls_focal` - smoothed `q` and the focal factor combined
//!
//! At `gamma = 0` the focal families reduce to their plain counterparts
//! bit for bit, and at `epsilon = 0` the smoothed families do the same.
//! Probabilities are floored at [`P_FLOOR`] before the log so a fully
//! saturated wrong answer yields a large finite loss, never an infinity,
//! while staying far below anything reachable from moderate logits.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Probability floor applied inside `ln`; keeps saturated losses finite.
pub const P_FLOOR: f64 = 1e-300;

/// Default focusing exponent for the focal families.
pub const GAMMA_DEFAULT: f64 = 2.0;

/// Default smoothing mass for the label-smoothed families.
pub const EPSILON_DEFAULT: f64 = 0.1;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("logits have {rows} rows but {labels} labels were given")]
    LengthMismatch { rows: usize, labels: usize },
    #[error("row {row}: label {label} out of range for {classes} classes")]
    LabelRange { row: usize, label: usize, classes: usize },
    #[error("row {row}: non-finite logit")]
    NonFinite { row: usize },
    #[error("invalid loss parameter: {0}")]
    BadParam(String),
    #[error("weight vector has {got} entries, batch has {expected}")]
    WeightLength { expected: usize, got: usize },
    #[error("weight {value} at row {row} is not finite and nonnegative")]
    BadWeight { row: usize, value: f64 },
    #[error("all weights are zero, normalized reduction is undefined")]
    ZeroWeightSum,
    #[error("empty batch")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossFamily {
    Ce,
    LabelSmooth,
    Focal,
    FocalLogits,
    LsFocal,
}

impl LossFamily {
    pub fn name(self) -> &'static str {
        match self {
            LossFamily::Ce => "ce",
            LossFamily::LabelSmooth => "label_smooth",
            LossFamily::Focal => "focal",
            LossFamily::FocalLogits => "focal_logits",
            LossFamily::LsFocal => "ls_focal",
        }
    }

    pub fn parse(token: &str) -> Option<Self> {
        match token {
            "ce" => Some(LossFamily::Ce),
            "label_smooth" => Some(LossFamily::LabelSmooth),
            "focal" => Some(LossFamily::Focal),
            "focal_logits" => Some(LossFamily::FocalLogits),
            "ls_focal" => Some(LossFamily::LsFocal),
            _ => None,
        }
    }

    /// Whether `epsilon` shapes the target distribution.
    pub fn smooths(self) -> bool {
        matches!(self, LossFamily::LabelSmooth | LossFamily::LsFocal)
    }

    /// Whether `gamma` is active (zero otherwise).
    pub fn focuses(self) -> bool {
        matches!(self, LossFamily::Focal | LossFamily::FocalLogits | LossFamily::LsFocal)
    }
}

impl std::fmt::Display for LossFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossSpec {
    pub family: LossFamily,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_gamma() -> f64 {
    GAMMA_DEFAULT
}

fn default_epsilon() -> f64 {
    EPSILON_DEFAULT
}

impl LossSpec {
    pub fn new(family: LossFamily) -> Self {
        Self { family, gamma: GAMMA_DEFAULT, epsilon: EPSILON_DEFAULT }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        LossFamily::parse(name).map(Self::new)
    }

    pub fn validate(&self) -> Result<(), LossError> {
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(LossError::BadParam(format!("gamma {} must be finite and >= 0", self.gamma)));
        }
        if !(self.epsilon.is_finite() && (0.0..1.0).contains(&self.epsilon)) {
            return Err(LossError::BadParam(format!("epsilon {} must be in [0, 1)", self.epsilon)));
        }
        Ok(())
    }

    fn effective_gamma(&self) -> f64 {
        if self.family.focuses() {
            self.gamma
        } else {
            0.0
        }
    }

    fn effective_epsilon(&self) -> f64 {
        if self.family.smooths() {
            self.epsilon
        } else {
            0.0
        }
    }
}

/// Loss value and logit gradient for each sample in a batch, unreduced
/// and unweighted.
#[derive(Debug, Clone)]
pub struct PerSampleLoss {
    pub values: Vec<f64>,
    /// Row `i` is `d value_i / d logits_i`.
    pub grad_logits: Array2<f64>,
}

impl PerSampleLoss {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Computes the loss and its logit gradient for every row.
pub fn per_sample(
    spec: &LossSpec,
    logits: ArrayView2<'_, f64>,
    labels: &[usize],
) -> Result<PerSampleLoss, LossError> {
    spec.validate()?;
    let (n, classes) = logits.dim();
    if labels.len() != n {
        return Err(LossError::LengthMismatch { rows: n, labels: labels.len() });
    }
    if classes == 0 {
        return Err(LossError::BadParam("logits have zero columns".into()));
    }

    let gamma = spec.effective_gamma();
    let epsilon = spec.effective_epsilon();
    let smooth_off = epsilon / classes as f64;
    let smooth_on = (1.0 - epsilon) + smooth_off;

    let mut values = vec![0.0; n];
    let mut grad = Array2::<f64>::zeros((n, classes));
    let mut p = vec![0.0; classes];

    for r in 0..n {
        let y = labels[r];
        if y >= classes {
            return Err(LossError::LabelRange { row: r, label: y, classes });
        }
        let z = logits.row(r);
        let mut m = f64::NEG_INFINITY;
        for &v in z {
            if !v.is_finite() {
                return Err(LossError::NonFinite { row: r });
            }
            m = m.max(v);
        }
        let mut sumexp = 0.0;
        for (c, &v) in z.iter().enumerate() {
            p[c] = (v - m).exp();
            sumexp += p[c];
        }
        for pc in p.iter_mut() {
            *pc /= sumexp;
        }

        // value
        if spec.family == LossFamily::FocalLogits {
            let logp_y = z[y] - m - sumexp.ln();
            values[r] = -(1.0 - p[y]).powf(gamma) * logp_y;
        } else {
            let mut v = 0.0;
            for (c, &pc) in p.iter().enumerate() {
                let q = if c == y { smooth_on } else { smooth_off };
                if q != 0.0 {
                    v -= q * (1.0 - pc).powf(gamma) * pc.max(P_FLOOR).ln();
                }
            }
            values[r] = v;
        }

        // gradient, shared across families
        let mut s = 0.0;
        let mut grow = grad.row_mut(r);
        for (c, &pc) in p.iter().enumerate() {
            let q = if c == y { smooth_on } else { smooth_off };
            let u = 1.0 - pc;
            let g = if gamma == 0.0 {
                -1.0
            } else if u == 0.0 {
                0.0
            } else {
                gamma * pc * u.powf(gamma - 1.0) * pc.max(P_FLOOR).ln() - u.powf(gamma)
            };
            grow[c] = q * g;
            s += q * g;
        }
        for (c, &pc) in p.iter().enumerate() {
            grow[c] -= pc * s;
        }
    }

    Ok(PerSampleLoss { values, grad_logits: grad })
}

/// Scalar loss plus the matching logit gradient after weighting.
#[derive(Debug, Clone)]
pub struct WeightedLoss {
    pub loss: f64,
    pub grad_logits: Array2<f64>,
}

fn check_weights(per: &PerSampleLoss, weights: &[f64]) -> Result<(), LossError> {
    if per.is_empty() {
        return Err(LossError::Empty);
    }
    if weights.len() != per.len() {
        return Err(LossError::WeightLength { expected: per.len(), got: weights.len() });
    }
    for (row, &w) in weights.iter().enumerate() {
        if !(w.is_finite() && w >= 0.0) {
            return Err(LossError::BadWeight { row, value: w });
        }
    }
    Ok(())
}

fn reduce_by(per: &PerSampleLoss, weights: &[f64], denom: f64) -> WeightedLoss {
    let mut total = 0.0;
    for (v, &w) in per.values.iter().zip(weights) {
        total += w * v;
    }
    let mut grad = per.grad_logits.clone();
    for (mut row, &w) in grad.rows_mut().into_iter().zip(weights) {
        let scale = w / denom;
        row.mapv_inplace(|g| g * scale);
    }
    WeightedLoss { loss: total / denom, grad_logits: grad }
}

/// Weighted mean over the batch size: `sum(w_i * v_i) / n`. Zero-weight
/// samples dilute the average, which is the point when weights encode
/// how much each sample should count.
pub fn reduce_weighted(per: &PerSampleLoss, weights: &[f64]) -> Result<WeightedLoss, LossError> {
    check_weights(per, weights)?;
    Ok(reduce_by(per, weights, per.len() as f64))
}

/// Weighted mean over the weight mass: `sum(w_i * v_i) / sum(w_i)`.
pub fn reduce_weighted_normalized(
    per: &PerSampleLoss,
    weights: &[f64],
) -> Result<WeightedLoss, LossError> {
    check_weights(per, weights)?;
    let wsum: f64 = weights.iter().sum();
    if wsum <= 0.0 {
        return Err(LossError::ZeroWeightSum);
    }
    Ok(reduce_by(per, weights, wsum))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn spec(family: LossFamily, gamma: f64, epsilon: f64) -> LossSpec {
        LossSpec { family, gamma, epsilon }
    }

    #[test]
    fn ce_on_uniform_logits_is_ln_c() {
        let logits = array![[0.0, 0.0], [3.5, 3.5]];
        let out = per_sample(&LossSpec::new(LossFamily::Ce), logits.view(), &[0, 1]).unwrap();
        for v in &out.values {
            assert!((v - 2.0f64.ln()).abs() < 1e-15);
        }
        // classic p - onehot
        assert!((out.grad_logits[[0, 0]] + 0.5).abs() < 1e-15);
        assert!((out.grad_logits[[0, 1]] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn focal_damps_a_confident_correct_answer() {
        // logits chosen so p = [0.9, 0.1]
        let logits = array![[9.0f64.ln(), 0.0]];
        let out = per_sample(&spec(LossFamily::Focal, 2.0, 0.0), logits.view(), &[0]).unwrap();
        let expect = -(0.1f64.powi(2)) * 0.9f64.ln();
        assert!((out.values[0] - expect).abs() < 1e-12, "{} vs {expect}", out.values[0]);
    }

    #[test]
    fn label_smooth_worked_value() {
        // p = [0.9, 0.1], q = [0.95, 0.05]
        let logits = array![[9.0f64.ln(), 0.0]];
        let out = per_sample(&spec(LossFamily::LabelSmooth, 0.0, 0.1), logits.view(), &[0]).unwrap();
        assert!((out.values[0] - 0.21522174452463726).abs() < 1e-12);
    }

    #[test]
    fn focal_logits_matches_focal_at_moderate_logits() {
        let logits = array![[1.2, -0.7, 0.3], [-3.0, 2.0, 0.5], [4.0, 4.0, -4.0]];
        let labels = [2, 0, 1];
        let a = per_sample(&spec(LossFamily::Focal, 2.0, 0.0), logits.view(), &labels).unwrap();
        let b = per_sample(&spec(LossFamily::FocalLogits, 2.0, 0.0), logits.view(), &labels).unwrap();
        for (va, vb) in a.values.iter().zip(&b.values) {
            assert!((va - vb).abs() < 1e-12);
        }
        assert_eq!(a.grad_logits, b.grad_logits);
    }

    #[test]
    fn families_collapse_exactly_at_zero_parameters() {
        let logits = array![[1.0, -2.0, 0.5], [0.0, 0.1, -0.1]];
        let labels = [1, 2];
        let ce = per_sample(&spec(LossFamily::Ce, 0.0, 0.0), logits.view(), &labels).unwrap();

        let focal0 = per_sample(&spec(LossFamily::Focal, 0.0, 0.0), logits.view(), &labels).unwrap();
        assert_eq!(ce.values, focal0.values);
        assert_eq!(ce.grad_logits, focal0.grad_logits);

        let ls0 = per_sample(&spec(LossFamily::LabelSmooth, 0.0, 0.0), logits.view(), &labels).unwrap();
        assert_eq!(ce.values, ls0.values);
        assert_eq!(ce.grad_logits, ls0.grad_logits);

        let focal = per_sample(&spec(LossFamily::Focal, 2.0, 0.0), logits.view(), &labels).unwrap();
        let lsf_e0 = per_sample(&spec(LossFamily::LsFocal, 2.0, 0.0), logits.view(), &labels).unwrap();
        assert_eq!(focal.values, lsf_e0.values);
        assert_eq!(focal.grad_logits, lsf_e0.grad_logits);

        let ls = per_sample(&spec(LossFamily::LabelSmooth, 0.0, 0.1), logits.view(), &labels).unwrap();
        let lsf_g0 = per_sample(&spec(LossFamily::LsFocal, 0.0, 0.1), logits.view(), &labels).unwrap();
        assert_eq!(ls.values, lsf_g0.values);
        assert_eq!(ls.grad_logits, lsf_g0.grad_logits);
    }

    #[test]
    fn saturated_logits_stay_finite() {
        let logits = array![[-1000.0, 1000.0]];
        for family in [
            LossFamily::Ce,
            LossFamily::LabelSmooth,
            LossFamily::Focal,
            LossFamily::FocalLogits,
            LossFamily::LsFocal,
        ] {
            let out = per_sample(&LossSpec::new(family), logits.view(), &[0]).unwrap();
            assert!(out.values[0].is_finite(), "{family}");
            assert!(out.grad_logits.iter().all(|g| g.is_finite()), "{family}");
        }
    }

    #[test]
    fn reduction_divides_by_batch_size() {
        let per = PerSampleLoss {
            values: vec![2.0, 4.0],
            grad_logits: array![[1.0, -1.0], [2.0, -2.0]],
        };
        let out = reduce_weighted(&per, &[0.0, 1.0]).unwrap();
        assert_eq!(out.loss, 2.0);
        assert_eq!(out.grad_logits, array![[0.0, -0.0], [1.0, -1.0]]);

        let per4 = PerSampleLoss {
            values: vec![1.0, 2.0, 3.0, 4.0],
            grad_logits: Array2::zeros((4, 2)),
        };
        let out4 = reduce_weighted(&per4, &[1.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(out4.loss, 0.75);
    }

    #[test]
    fn normalized_reduction_divides_by_weight_mass() {
        let per = PerSampleLoss {
            values: vec![2.0, 4.0],
            grad_logits: Array2::zeros((2, 2)),
        };
        let out = reduce_weighted_normalized(&per, &[0.0, 1.0]).unwrap();
        assert_eq!(out.loss, 4.0);
        assert!(matches!(
            reduce_weighted_normalized(&per, &[0.0, 0.0]),
            Err(LossError::ZeroWeightSum)
        ));
    }

    #[test]
    fn reduction_rejects_bad_input() {
        let per = PerSampleLoss { values: vec![1.0], grad_logits: Array2::zeros((1, 2)) };
        assert!(matches!(
            reduce_weighted(&per, &[1.0, 1.0]),
            Err(LossError::WeightLength { expected: 1, got: 2 })
        ));
        assert!(matches!(
            reduce_weighted(&per, &[-0.5]),
            Err(LossError::BadWeight { row: 0, .. })
        ));
        let empty = PerSampleLoss { values: vec![], grad_logits: Array2::zeros((0, 2)) };
        assert!(matches!(reduce_weighted(&empty, &[]), Err(LossError::Empty)));
    }

    #[test]
    fn parameter_validation() {
        let logits = array![[0.0, 0.0]];
        assert!(per_sample(&spec(LossFamily::Focal, -1.0, 0.0), logits.view(), &[0]).is_err());
        assert!(per_sample(&spec(LossFamily::LabelSmooth, 0.0, 1.0), logits.view(), &[0]).is_err());
        assert!(matches!(
            per_sample(&LossSpec::new(LossFamily::Ce), logits.view(), &[2]),
            Err(LossError::LabelRange { row: 0, label: 2, classes: 2 })
        ));
        let bad = array![[f64::NAN, 0.0]];
        assert!(matches!(
            per_sample(&LossSpec::new(LossFamily::Ce), bad.view(), &[0]),
            Err(LossError::NonFinite { row: 0 })
        ));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let logits = array![[0.8, -0.3, 0.1], [-1.2, 0.4, 0.9]];
        let labels = [0, 2];
        let h = 1e-6;
        for family in [
            LossFamily::Ce,
            LossFamily::LabelSmooth,
            LossFamily::Focal,
            LossFamily::FocalLogits,
            LossFamily::LsFocal,
        ] {
            let s = LossSpec::new(family);
            let base = per_sample(&s, logits.view(), &labels).unwrap();
            for r in 0..2 {
                for c in 0..3 {
                    let mut plus = logits.clone();
                    plus[[r, c]] += h;
                    let mut minus = logits.clone();
                    minus[[r, c]] -= h;
                    let vp = per_sample(&s, plus.view(), &labels).unwrap().values[r];
                    let vm = per_sample(&s, minus.view(), &labels).unwrap().values[r];
                    let fd = (vp - vm) / (2.0 * h);
                    let an = base.grad_logits[[r, c]];
                    assert!(
                        (fd - an).abs() < 1e-6 * (1.0 + an.abs()),
                        "{family} grad[{r},{c}]: fd {fd} vs {an}"
                    );
                }
            }
        }
    }

    proptest! {
        #[test]
        fn value_is_shift_invariant(
            z in proptest::collection::vec(-30.0f64..30.0, 4),
            shift in -10.0f64..10.0,
            gamma in 0.0f64..4.0,
            eps in 0.0f64..0.5,
        ) {
            let logits = Array2::from_shape_vec((1, 4), z.clone()).unwrap();
            let shifted = logits.mapv(|v| v + shift);
            for family in [
                LossFamily::Ce,
                LossFamily::LabelSmooth,
                LossFamily::Focal,
                LossFamily::FocalLogits,
                LossFamily::LsFocal,
            ] {
                let s = spec(family, gamma, eps);
                let a = per_sample(&s, logits.view(), &[1]).unwrap().values[0];
                let b = per_sample(&s, shifted.view(), &[1]).unwrap().values[0];
                prop_assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()), "{family}: {a} vs {b}");
            }
        }

        #[test]
        fn gradient_rows_sum_to_zero(
            z in proptest::collection::vec(-20.0f64..20.0, 6),
            label in 0usize..3,
            gamma in 0.0f64..4.0,
            eps in 0.0f64..0.5,
        ) {
            let logits = Array2::from_shape_vec((2, 3), z).unwrap();
            let labels = [label, 2 - label];
            for family in [LossFamily::Focal, LossFamily::LsFocal, LossFamily::FocalLogits] {
                let s = spec(family, gamma, eps);
                let out = per_sample(&s, logits.view(), &labels).unwrap();
                for r in 0..2 {
                    let sum: f64 = out.grad_logits.row(r).sum();
                    prop_assert!(sum.abs() < 1e-12, "{family} row {r}: {sum}");
                }
            }
        }
    }
}
