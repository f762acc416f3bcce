//! Gradient-free KL-regularized policy improvement over the candidate set.
//!
//! `π_new(a) ∝ π_prior(a) · exp(α·Q(a))`, restricted to the sampled
//! candidates with the prior renormalized over them. Everything is computed
//! in log space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Alpha, CandidateEvaluation, ImprovedDistribution};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImprovementInput {
    pub prior_logprobs: Vec<f64>,
    pub q_values: Vec<f64>,
    pub alpha: Alpha,
}

impl ImprovementInput {
    pub fn new(prior_logprobs: Vec<f64>, q_values: Vec<f64>, alpha: Alpha) -> Result<Self> {
        let inp = ImprovementInput { prior_logprobs, q_values, alpha };
        inp.validate()?;
        Ok(inp)
    }

    pub fn from_candidates(candidates: &[CandidateEvaluation], alpha: Alpha) -> Result<Self> {
        Self::new(candidates.iter().map(|c| c.prior_logprob).collect(), candidates.iter().map(|c| c.q_value).collect(), alpha)
    }

    pub fn len(&self) -> usize {
        self.prior_logprobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prior_logprobs.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.prior_logprobs.is_empty() || self.prior_logprobs.len() != self.q_values.len() {
            return Err(Error::Validation(format!(
                "need equal non-empty prior/q vectors, got {} and {}",
                self.prior_logprobs.len(),
                self.q_values.len()
            )));
        }
        // a prior logprob of -inf is a legitimate zero-probability candidate
        if self.prior_logprobs.iter().any(|x| x.is_nan() || *x == f64::INFINITY) {
            return Err(Error::Validation("prior logprobs contain NaN or +inf".into()));
        }
        if self.prior_logprobs.iter().all(|x| *x == f64::NEG_INFINITY) {
            return Err(Error::Validation("prior has no mass on any candidate".into()));
        }
        if self.q_values.iter().any(|x| !x.is_finite()) {
            return Err(Error::Validation("q values must be finite".into()));
        }
        self.alpha.validate()?;
        Ok(())
    }

    /// Prior renormalized over the candidate support.
    pub fn prior_probs(&self) -> Vec<f64> {
        softmax(&self.prior_logprobs).0
    }
}

/// `ln Σ exp(x_i)` with max subtraction.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn softmax(ws: &[f64]) -> (Vec<f64>, f64) {
    let lz = log_sum_exp(ws);
    (ws.iter().map(|w| (w - lz).exp()).collect(), lz)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate().skip(1) {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn improve(inp: &ImprovementInput) -> Result<ImprovedDistribution> {
    inp.validate()?;
    match inp.alpha {
        Alpha::Finite(a) => {
            let ws: Vec<f64> = inp.prior_logprobs.iter().zip(&inp.q_values).map(|(lp, q)| if a == 0.0 { *lp } else { lp + a * q }).collect();
            let (candidate_probs, log_partition) = softmax(&ws);
            Ok(ImprovedDistribution { candidate_probs, log_partition, alpha: inp.alpha, chosen_index: argmax(&ws) })
        }
        Alpha::CriticOnly => {
            let mut best = 0;
            for i in 1..inp.len() {
                let (q, qb) = (inp.q_values[i], inp.q_values[best]);
                if q > qb || (q == qb && inp.prior_logprobs[i] > inp.prior_logprobs[best]) {
                    best = i;
                }
            }
            let mut candidate_probs = vec![0.0; inp.len()];
            candidate_probs[best] = 1.0;
            // limit of (1/α)·ln Z as α grows
            Ok(ImprovedDistribution { candidate_probs, log_partition: inp.q_values[best], alpha: inp.alpha, chosen_index: best })
        }
    }
}

/// Regularized objective `E_p[Q] − (1/α)·KL(p ‖ prior)` over the candidates.
///
/// At `α = 0` only the prior itself is feasible (every other `p` scores
/// `-inf`); the critic-only limit drops the KL term.
pub fn objective_value(probs: &[f64], inp: &ImprovementInput) -> Result<f64> {
    inp.validate()?;
    if probs.len() != inp.len() {
        return Err(Error::Validation(format!("expected {} probabilities, got {}", inp.len(), probs.len())));
    }
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::Validation("probabilities must be finite and non-negative".into()));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Validation(format!("probabilities sum to {total}, not 1")));
    }
    let expected_q: f64 = probs.iter().zip(&inp.q_values).map(|(p, q)| p * q).sum();
    let prior = inp.prior_probs();
    let kl: f64 = probs
        .iter()
        .zip(&prior)
        .map(|(p, r)| match (*p, *r) {
            (p, _) if p == 0.0 => 0.0,
            (_, r) if r == 0.0 => f64::INFINITY,
            (p, r) => p * (p / r).ln(),
        })
        .sum();
    Ok(match inp.alpha {
        Alpha::CriticOnly => expected_q,
        Alpha::Finite(a) if a == 0.0 => {
            let same = probs.iter().zip(&prior).all(|(p, r)| (p - r).abs() <= 1e-12);
            if same {
                expected_q
            } else {
                f64::NEG_INFINITY
            }
        }
        Alpha::Finite(a) => expected_q - kl / a,
    })
}

pub fn select_action<'a>(dist: &ImprovedDistribution, candidates: &'a [CandidateEvaluation]) -> Result<&'a str> {
    if dist.candidate_probs.len() != candidates.len() || dist.chosen_index >= candidates.len() {
        return Err(Error::Validation("distribution does not match candidates".into()));
    }
    Ok(&candidates[dist.chosen_index].action)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn inp(prior: &[f64], q: &[f64], alpha: Alpha) -> ImprovementInput {
        ImprovementInput::new(prior.iter().map(|p| p.ln()).collect(), q.to_vec(), alpha).unwrap()
    }

    #[test]
    fn zero_q_keeps_prior() {
        let d = improve(&inp(&[0.6, 0.4], &[0.0, 0.0], Alpha::Finite(1.0))).unwrap();
        assert!((d.candidate_probs[0] - 0.6).abs() < 1e-15);
        assert!((d.candidate_probs[1] - 0.4).abs() < 1e-15);
        assert_eq!(d.chosen_index, 0);
    }

    #[test]
    fn hand_evaluated_update() {
        let d = improve(&inp(&[0.5, 0.5], &[1.0, 0.0], Alpha::Finite(1.0))).unwrap();
        let e = std::f64::consts::E;
        assert!((d.candidate_probs[0] - e / (1.0 + e)).abs() < 1e-15);
        assert!((d.candidate_probs[0] - 0.731059).abs() < 1e-6);
        assert!((d.log_partition - (0.5 * e + 0.5).ln()).abs() < 1e-15);
    }

    #[test]
    fn alpha_zero_is_prior() {
        let i = inp(&[0.2, 0.5, 0.3], &[3.0, -2.0, 1.0], Alpha::Finite(0.0));
        let d = improve(&i).unwrap();
        assert_eq!(d.chosen_index, 1);
        for (p, r) in d.candidate_probs.iter().zip([0.2, 0.5, 0.3]) {
            assert!((p - r).abs() < 1e-15);
        }
        assert_eq!(objective_value(&[0.2, 0.5, 0.3], &i).unwrap(), 0.2 * 3.0 - 1.0 + 0.3);
        assert_eq!(objective_value(&[0.5, 0.2, 0.3], &i).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn critic_only_is_q_argmax() {
        let d = improve(&inp(&[0.7, 0.2, 0.1], &[0.0, 1.0, 0.5], Alpha::CriticOnly)).unwrap();
        assert_eq!(d.chosen_index, 1);
        assert_eq!(d.candidate_probs, vec![0.0, 1.0, 0.0]);
        // q tie falls back to the prior
        let t = improve(&inp(&[0.2, 0.7, 0.1], &[1.0, 1.0, 0.5], Alpha::CriticOnly)).unwrap();
        assert_eq!(t.chosen_index, 1);
    }

    #[test]
    fn ties_take_lowest_index() {
        let d = improve(&inp(&[0.5, 0.5], &[0.0, 0.0], Alpha::Finite(1.0))).unwrap();
        assert_eq!(d.chosen_index, 0);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(ImprovementInput::new(vec![], vec![], Alpha::Finite(1.0)).is_err());
        assert!(ImprovementInput::new(vec![0.0], vec![f64::NAN], Alpha::Finite(1.0)).is_err());
        assert!(ImprovementInput::new(vec![0.0], vec![1.0], Alpha::Finite(-1.0)).is_err());
        assert!(ImprovementInput::new(vec![0.0, 1.0], vec![1.0], Alpha::Finite(1.0)).is_err());
        let i = inp(&[0.5, 0.5], &[0.0, 0.0], Alpha::Finite(1.0));
        assert!(objective_value(&[0.5, 0.6], &i).is_err());
    }

    #[test]
    fn huge_alpha_does_not_overflow() {
        let d = improve(&inp(&[0.5, 0.5], &[23.0, -23.0], Alpha::Finite(1e4))).unwrap();
        assert_eq!(d.chosen_index, 0);
        assert!(d.candidate_probs.iter().all(|p| p.is_finite()));
        assert!((d.candidate_probs[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn saltshaker_flip() {
        let mk = |a: &str, lp: f64, q: f64| CandidateEvaluation { action: a.into(), prior_logprob: lp, rollout: None, belief: None, q_value: q };
        let cands = vec![mk("go to drawer 1", 0.5f64.ln(), -1.0), mk("take saltshaker 1 from cabinet 2", 0.3f64.ln(), 2.0)];
        let d = improve(&ImprovementInput::from_candidates(&cands, Alpha::Finite(1.0)).unwrap()).unwrap();
        assert_eq!(select_action(&d, &cands).unwrap(), "take saltshaker 1 from cabinet 2");
        let d0 = improve(&ImprovementInput::from_candidates(&cands, Alpha::Finite(0.0)).unwrap()).unwrap();
        assert_eq!(select_action(&d0, &cands).unwrap(), "go to drawer 1");
    }

    #[test]
    fn select_argmax() {
        let mk = |a: &str| CandidateEvaluation { action: a.into(), prior_logprob: 0.0, rollout: None, belief: None, q_value: 0.0 };
        let cands = vec![mk("a"), mk("b"), mk("c")];
        let d = improve(&inp(&[0.2, 0.5, 0.3], &[0.0; 3], Alpha::Finite(1.0))).unwrap();
        assert_eq!(select_action(&d, &cands).unwrap(), "b");
        let one = improve(&inp(&[1.0], &[0.3], Alpha::Finite(1.0))).unwrap();
        assert_eq!(select_action(&one, &cands[..1]).unwrap(), "a");
    }

    #[test]
    fn large_alpha_approaches_one_hot() {
        let i = |a| inp(&[0.5, 0.5], &[1.0, 0.0], Alpha::Finite(a));
        let mut last = 0.5;
        for a in [1.0, 5.0, 20.0, 100.0] {
            let p0 = improve(&i(a)).unwrap().candidate_probs[0];
            assert!(p0 > last);
            last = p0;
        }
        assert!(last > 1.0 - 1e-12);
    }

    #[test]
    fn alpha_sweep_moves_from_prior_to_critic() {
        let prior = [0.6, 0.3, 0.1];
        let q = [-1.0, 0.5, 2.0];
        let mut winners = Vec::new();
        let mut prev: Option<Vec<f64>> = None;
        let mut a = 0.0;
        while a <= 50.0 {
            let d = improve(&inp(&prior, &q, Alpha::Finite(a))).unwrap();
            if winners.last() != Some(&d.chosen_index) {
                winners.push(d.chosen_index);
            }
            if let Some(p) = prev {
                let jump = p.iter().zip(&d.candidate_probs).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
                assert!(jump < 0.05, "discontinuity at alpha {a}");
            }
            prev = Some(d.candidate_probs);
            a += 0.01;
        }
        assert_eq!(winners.first(), Some(&0));
        assert_eq!(winners.last(), Some(&2));
    }

    #[test]
    fn optimality_against_random_simplex() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let n = rng.random_range(2..=5);
            let prior: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
            let q: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let alpha = [0.5, 1.0, 2.0, 5.0, 10.0][rng.random_range(0..5)];
            let i = inp(&prior, &q, Alpha::Finite(alpha));
            let best = objective_value(&improve(&i).unwrap().candidate_probs, &i).unwrap();
            assert!(best >= objective_value(&i.prior_probs(), &i).unwrap() - 1e-9);
            for _ in 0..500 {
                let raw: Vec<f64> = (0..n).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
                let s: f64 = raw.iter().sum();
                let p: Vec<f64> = raw.iter().map(|x| x / s).collect();
                assert!(best >= objective_value(&p, &i).unwrap() - 1e-9);
            }
        }
    }

    proptest! {
        #[test]
        fn partition_irrelevance(lp in prop::collection::vec(-10.0f64..0.0, 1..6), qs in prop::collection::vec(-5.0f64..5.0, 6), a in 0.0f64..10.0) {
            let q = qs[..lp.len()].to_vec();
            let ws: Vec<f64> = lp.iter().zip(&q).map(|(l, q)| l + a * q).collect();
            let d = improve(&ImprovementInput::new(lp.clone(), q, Alpha::Finite(a)).unwrap()).unwrap();
            prop_assert_eq!(d.chosen_index, argmax(&ws));
            prop_assert!((d.candidate_probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert_eq!(d.chosen_index, argmax(&d.candidate_probs));
        }

        #[test]
        fn shift_invariance(lp in prop::collection::vec(-10.0f64..0.0, 1..6), qs in prop::collection::vec(-5.0f64..5.0, 6), a in 0.0f64..5.0, c in -10.0f64..10.0) {
            let q = qs[..lp.len()].to_vec();
            let shifted: Vec<f64> = q.iter().map(|x| x + c).collect();
            let d1 = improve(&ImprovementInput::new(lp.clone(), q, Alpha::Finite(a)).unwrap()).unwrap();
            let d2 = improve(&ImprovementInput::new(lp, shifted, Alpha::Finite(a)).unwrap()).unwrap();
            for (x, y) in d1.candidate_probs.iter().zip(&d2.candidate_probs) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }
    }
}
