//! Dense float64 tensors, a reverse-mode tape, Adam, and gradient checking.

mod checkpoint;
pub mod gradcheck;
mod optim;
mod params;
mod tape;
mod tensor;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use optim::{clip_global_norm, Adam, AdamState};
pub use params::{xavier_uniform, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("index error: {0}")]
    Index(String),
    #[error("numeric domain error: {0}")]
    Domain(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Probability vector from `logits`, computed with max subtraction.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>, NumericError> {
    if logits.is_empty() {
        return Err(NumericError::Shape("softmax of an empty vector".into()));
    }
    if let Some(bad) = logits.iter().find(|x| !x.is_finite()) {
        return Err(NumericError::Domain(format!("non-finite logit {bad}")));
    }
    let mut out = logits.to_vec();
    tape::softmax_in_place(&mut out);
    Ok(out)
}

/// Floor applied to probabilities before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// `−ln probs[target]`, with the probability clamped at [`PROB_FLOOR`].
pub fn cross_entropy(probs: &[f64], target: usize) -> Result<f64, NumericError> {
    let p = probs
        .get(target)
        .ok_or_else(|| NumericError::Index(format!("target {target} of {} classes", probs.len())))?;
    Ok(-p.max(PROB_FLOOR).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn softmax_symmetric_pair() {
        assert_eq!(softmax(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn softmax_one_two_three_against_extended_precision() {
        // exp(1), exp(2), exp(3) normalised, evaluated at 50 digits with mpmath.
        let want = [0.09003057317038046, 0.24472847105479764, 0.6652409557748219];
        let got = softmax(&[1.0, 2.0, 3.0]).unwrap();
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < 1e-15, "{g} vs {w}");
        }
    }

    #[test]
    fn softmax_rejects_non_finite() {
        assert!(matches!(softmax(&[1.0, f64::NAN]), Err(NumericError::Domain(_))));
        assert!(matches!(softmax(&[f64::INFINITY]), Err(NumericError::Domain(_))));
        assert!(softmax(&[]).is_err());
    }

    #[test]
    fn cross_entropy_cases() {
        assert_eq!(cross_entropy(&[0.0, 1.0, 0.0], 1).unwrap(), 0.0);
        let uniform = cross_entropy(&[0.25; 4], 2).unwrap();
        assert!((uniform - 1.3862943611198906).abs() < 1e-15);
        // −ln 0.3 at 50 digits: 1.2039728043259359926227462177618933...
        let ce = cross_entropy(&[0.7, 0.3], 1).unwrap();
        assert!((ce - 1.203972804325936).abs() < 1e-14);
        assert!(matches!(cross_entropy(&[0.5, 0.5], 2), Err(NumericError::Index(_))));
        assert!((cross_entropy(&[1.0, 0.0], 1).unwrap() - 27.631021115928547).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn softmax_on_simplex(v in proptest::collection::vec(-50.0f64..50.0, 1..20)) {
            let p = softmax(&v).unwrap();
            prop_assert!(p.iter().all(|&x| x >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn softmax_shift_invariant(v in proptest::collection::vec(-20.0f64..20.0, 1..10), c in -100.0f64..100.0) {
            let a = softmax(&v).unwrap();
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let b = softmax(&shifted).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
