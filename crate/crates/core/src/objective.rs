//! Creativity-weighted DPO loss and its derivative with respect to the
//! implicit-reward margin.

use crate::numeric::{sigmoid, softplus, tree_sum};
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ObjectiveError {
    #[error("empty batch")]
    EmptyBatch,
}

/// Total natural-log likelihoods of one preference pair under the policy
/// and the frozen reference, plus the pair's composite weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairLogits {
    pub policy_chosen_lp: f64,
    pub policy_rejected_lp: f64,
    pub ref_chosen_lp: f64,
    pub ref_rejected_lp: f64,
    pub weight: f64,
}

/// `β · [(π_c − ref_c) − (π_r − ref_r)]`, the scaled implicit-reward margin.
pub fn dpo_logit(p: &PairLogits, beta: f64) -> f64 {
    beta * ((p.policy_chosen_lp - p.ref_chosen_lp) - (p.policy_rejected_lp - p.ref_rejected_lp))
}

/// `−weight · ln σ(h)`, evaluated as `weight · ln(1 + e^(−h))`.
pub fn pair_loss(h: f64, weight: f64) -> f64 {
    if weight == 0.0 {
        return 0.0;
    }
    weight * softplus(-h)
}

/// `d pair_loss / dh = −weight · σ(−h)`.
pub fn pair_loss_grad(h: f64, weight: f64) -> f64 {
    -weight * sigmoid(-h)
}

/// Mean weighted loss over a batch.
pub fn batch_loss(pairs: &[PairLogits], beta: f64) -> Result<f64, ObjectiveError> {
    if pairs.is_empty() {
        return Err(ObjectiveError::EmptyBatch);
    }
    let losses: Vec<f64> = pairs.iter().map(|p| pair_loss(dpo_logit(p, beta), p.weight)).collect();
    Ok(tree_sum(&losses) / pairs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{exp, ln};
    use proptest::prelude::*;

    fn pl(pc: f64, pr: f64, rc: f64, rr: f64, w: f64) -> PairLogits {
        PairLogits { policy_chosen_lp: pc, policy_rejected_lp: pr, ref_chosen_lp: rc, ref_rejected_lp: rr, weight: w }
    }

    #[test]
    fn logit_cases() {
        assert_eq!(dpo_logit(&pl(-2.0, -3.0, -2.0, -3.0, 1.0), 0.5), 0.0);
        let p = pl(ln(3.0) - 1.0, -2.0, -1.0, -2.0, 1.0);
        assert!((dpo_logit(&p, 1.0) - ln(3.0)).abs() < 1e-15);
        assert_eq!(dpo_logit(&p, 2.0), 2.0 * dpo_logit(&p, 1.0));
    }

    #[test]
    fn loss_cases() {
        assert!((pair_loss(0.0, 1.0) - core::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(pair_loss(123.0, 0.0), 0.0);
        assert_eq!(pair_loss(f64::NEG_INFINITY, 0.0), 0.0);
        assert!((pair_loss(ln(3.0), 2.0) - 0.575364144903562).abs() < 1e-12);
        assert!((pair_loss(ln(3.0), 2.0) - 2.0 * ln(4.0 / 3.0)).abs() < 1e-14);
    }

    #[test]
    fn loss_is_finite_in_extreme_tails() {
        assert_eq!(pair_loss(-800.0, 1.0), 800.0);
        assert!(pair_loss(800.0, 1.0) >= 0.0);
        assert_eq!(pair_loss_grad(-800.0, 1.0), -1.0);
    }

    #[test]
    fn grad_cases() {
        assert_eq!(pair_loss_grad(0.0, 1.0), -0.5);
        assert_eq!(pair_loss_grad(3.0, 0.0), 0.0);
    }

    #[test]
    fn batch_cases() {
        let one = [pl(-1.0, -2.0, -1.5, -1.5, 1.3)];
        assert_eq!(batch_loss(&one, 0.7).unwrap(), pair_loss(dpo_logit(&one[0], 0.7), 1.3));
        assert_eq!(batch_loss(&[], 1.0), Err(ObjectiveError::EmptyBatch));
        let zeros = [pl(-1.0, -2.0, -3.0, -1.0, 0.0), pl(-5.0, -1.0, -1.0, -1.0, 0.0)];
        assert_eq!(batch_loss(&zeros, 1.0).unwrap(), 0.0);
        // two pairs whose losses are 0.2 and 0.6: choose h with softplus(-h) = loss
        let h_for = |l: f64| -ln(exp(l) - 1.0);
        let pairs = [pl(h_for(0.2), 0.0, 0.0, 0.0, 1.0), pl(h_for(0.6), 0.0, 0.0, 0.0, 1.0)];
        assert!((batch_loss(&pairs, 1.0).unwrap() - 0.4).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn grad_matches_central_difference(h in -10.0f64..10.0, w in 0.0f64..3.0) {
            let eps = 1e-5;
            let fd = (pair_loss(h + eps, w) - pair_loss(h - eps, w)) / (2.0 * eps);
            let an = pair_loss_grad(h, w);
            prop_assert!((an - fd).abs() / an.abs().max(1.0) < 1e-6);
        }

        #[test]
        fn loss_scales_with_weight(h in -50.0f64..50.0, w in 0.0f64..3.0, c in 0.1f64..10.0) {
            let a = pair_loss(h, w * c);
            let b = c * pair_loss(h, w);
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }
}
