//! Property tests over the numeric invariants of the scoring formulas.

use proptest::prelude::*;
use tlce::tensor::{cosine, log_softmax_ce, Tensor};
use tlce::training::{softabs_attention, SharpeningConfig};

fn nonzero_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-100.0f64..100.0, len..=len)
        .prop_filter("nonzero norm", |v| v.iter().any(|x| x.abs() > 1e-6))
}

proptest! {
    #[test]
    fn cosine_is_invariant_to_positive_rescaling(
        a in nonzero_vec(6),
        b in nonzero_vec(6),
        alpha in 1e-3f64..1e3,
        beta in 1e-3f64..1e3,
    ) {
        let ta = Tensor::from_vec(a.clone());
        let tb = Tensor::from_vec(b.clone());
        let base = cosine(&ta, &tb).unwrap();
        let sa = Tensor::from_vec(a.iter().map(|v| v * alpha).collect());
        let sb = Tensor::from_vec(b.iter().map(|v| v * beta).collect());
        let scaled = cosine(&sa, &sb).unwrap();
        prop_assert!((base - scaled).abs() < 1e-12);
        prop_assert!(base.abs() <= 1.0 + 1e-12);
    }

    /// For unit-normalized vectors, the nearest prototype under squared
    /// Euclidean distance is the argmax under cosine similarity.
    #[test]
    fn euclidean_and_cosine_rankings_agree_after_normalization(
        query in nonzero_vec(5),
        protos in prop::collection::vec(nonzero_vec(5), 2..8),
    ) {
        let q = Tensor::from_vec(query).l2_normalize().unwrap();
        let normed: Vec<Tensor> = protos
            .into_iter()
            .map(|p| Tensor::from_vec(p).l2_normalize().unwrap())
            .collect();

        let dist2 = |a: &Tensor, b: &Tensor| -> f64 {
            a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum()
        };
        let argmin_euclid = normed
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| dist2(&q, a).partial_cmp(&dist2(&q, b)).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        let argmax_cos = normed
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| {
                cosine(&q, a).unwrap().partial_cmp(&cosine(&q, b).unwrap()).unwrap()
            })
            .map(|(i, _)| i)
            .unwrap();
        prop_assert_eq!(argmin_euclid, argmax_cos);
    }

    #[test]
    fn ce_is_shift_invariant(
        logits in prop::collection::vec(-50.0f64..50.0, 2..10),
        shift in -100.0f64..100.0,
        target_frac in 0.0f64..1.0,
    ) {
        let target = ((logits.len() as f64 * target_frac) as usize).min(logits.len() - 1);
        let base = log_softmax_ce(&Tensor::from_vec(logits.clone()), target).unwrap();
        let shifted: Vec<f64> = logits.iter().map(|v| v + shift).collect();
        let moved = log_softmax_ce(&Tensor::from_vec(shifted), target).unwrap();
        prop_assert!((base - moved).abs() < 1e-9, "base={base} moved={moved}");
    }

    #[test]
    fn softabs_is_a_probability_vector(
        scores in prop::collection::vec(-1.0f64..1.0, 1..12),
    ) {
        let h = softabs_attention(&scores, &SharpeningConfig::default());
        prop_assert!(h.iter().all(|&v| v > 0.0));
        let sum: f64 = h.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn combine_is_monotone_in_rhd_scores(
        s_r in prop::collection::vec(-1.0f64..1.0, 4..=4),
        s_t in prop::collection::vec(-1.0f64..1.0, 4..=4),
        lambda in 0.01f64..1.0,
        bump in 0.001f64..0.5,
        idx in 0usize..4,
    ) {
        let cfg = tlce::ensemble::EnsembleConfig { lambda };
        let base = tlce::ensemble::combine(
            &Tensor::from_vec(s_r.clone()),
            &Tensor::from_vec(s_t.clone()),
            &cfg,
        )
        .unwrap();
        let mut bumped = s_r;
        bumped[idx] += bump;
        let out = tlce::ensemble::combine(
            &Tensor::from_vec(bumped),
            &Tensor::from_vec(s_t),
            &cfg,
        )
        .unwrap();
        prop_assert!(out.data()[idx] > base.data()[idx]);
    }
}
