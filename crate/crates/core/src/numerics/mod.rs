//! Dense tensors, reverse-mode gradients, initialization and Adam.

mod adam;
mod gradcheck;
mod init;
mod params;
mod tape;
mod tensor;

pub use adam::{adam_update, AdamConfig, AdamState};
pub use gradcheck::{finite_difference_check, relative_error, GradCheckReport};
pub use init::{param_seed, seeded_init, InitScheme};
pub use params::{Gradients, ParamStore};
pub use tape::{reverse_gradients, Tape, Var};
pub use tensor::Tensor;

use crate::error::{contract, Result};

/// `ln Σ exp(v_i)`, shifted by the maximum so large inputs do not overflow.
pub fn logsumexp(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(contract("logsumexp of an empty slice"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(contract("logsumexp input contains a non-finite value"));
    }
    Ok(logsumexp_unchecked(values))
}

pub(crate) fn logsumexp_unchecked(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let s: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + s.ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn logsumexp_examples() {
        assert!((logsumexp(&[0.0, 0.0]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(logsumexp(&[5.0]).unwrap(), 5.0);
        let big = logsumexp(&[1000.0, 1000.0]).unwrap();
        assert!((big - (1000.0 + std::f64::consts::LN_2)).abs() <= 1e-12 * 1000.0);
    }

    #[test]
    fn logsumexp_rejects_empty() {
        assert!(logsumexp(&[]).is_err());
        assert!(logsumexp(&[f64::NAN]).is_err());
    }

    #[test]
    fn logsumexp_matches_analytic_value() {
        let v = [0.3, -1.2, 2.5, 0.0];
        let direct: f64 = v.iter().map(|x: &f64| x.exp()).sum::<f64>().ln();
        let got = logsumexp(&v).unwrap();
        assert!(((got - direct) / direct).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn logsumexp_is_bounded_by_max(v in proptest::collection::vec(-500.0f64..500.0, 1..20)) {
            let lse = logsumexp(&v).unwrap();
            let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(lse >= max);
            prop_assert!(lse <= max + (v.len() as f64).ln() + 1e-12);
        }
    }
}
