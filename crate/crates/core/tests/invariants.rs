use proptest::prelude::*;
use wadg_core::diffmath::Tensor;
use wadg_core::losses::{
    mine_pairs, multi_similarity_loss, negative_pair_weight, pairwise_w1_estimate,
    positive_pair_weight, similarity_matrix, MinedPairs, MiningRule, MsHyperParams,
    SimilarityMatrix,
};
use wadg_core::model::{Linear, Mlp, MlpSpec};
use wadg_core::oracle::{exact_w1_assignment, reference_mining, reference_ms_pipeline, PointCloud};

/// Row-normalized embeddings with labels from {0, 1, 2}.
fn embeddings() -> impl Strategy<Value = (Tensor, Vec<usize>)> {
    (2usize..10, 2usize..5).prop_flat_map(|(n, d)| {
        (
            prop::collection::vec(prop::collection::vec(-1.0f64..1.0, d), n),
            prop::collection::vec(0usize..3, n),
        )
            .prop_filter_map("zero row", |(rows, labels)| {
                let rows: Option<Vec<Vec<f64>>> = rows
                    .into_iter()
                    .map(|r| {
                        let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
                        (norm > 1e-3).then(|| r.iter().map(|v| v / norm).collect())
                    })
                    .collect();
                Some((Tensor::from_rows(&rows?).ok()?, labels))
            })
    })
}

fn params() -> impl Strategy<Value = MsHyperParams> {
    (
        prop_oneof![Just(0.0), Just(1e-5), 0.0f64..0.5, Just(2.0)],
        any::<bool>(),
    )
        .prop_map(|(epsilon, max)| MsHyperParams {
            epsilon,
            mining: if max {
                MiningRule::MaxNegative
            } else {
                MiningRule::MinNegative
            },
            ..MsHyperParams::default()
        })
}

fn cloud(n: usize, d: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-3.0f64..3.0, n * d).prop_map(move |v| Tensor::matrix(n, d, v).unwrap())
}

fn rows_of(s: &SimilarityMatrix) -> Vec<Vec<f64>> {
    (0..s.len())
        .map(|i| (0..s.len()).map(|j| s.get(i, j)).collect())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn mining_matches_reference((e, labels) in embeddings(), p in params()) {
        let s = similarity_matrix(&e, &labels, &vec![0; labels.len()]).unwrap();
        let (positives, negatives) = reference_mining(&rows_of(&s), &labels, &p);
        prop_assert_eq!(mine_pairs(&s, &p), MinedPairs { positives, negatives });
    }

    #[test]
    fn loss_matches_reference((e, labels) in embeddings(), p in params()) {
        let s = similarity_matrix(&e, &labels, &vec![0; labels.len()]).unwrap();
        let ours = multi_similarity_loss(&s, &mine_pairs(&s, &p), &p).value;
        let reference = reference_ms_pipeline(&e, &labels, &p).loss;
        prop_assert!((ours - reference).abs() <= 1e-10, "{ours} vs {reference}");
    }

    #[test]
    fn loss_is_permutation_invariant((e, labels) in embeddings(), seed in any::<u64>()) {
        let n = labels.len();
        let mut order: Vec<usize> = (0..n).collect();
        // cheap deterministic shuffle
        let mut x = seed | 1;
        for i in (1..n).rev() {
            x ^= x << 13; x ^= x >> 7; x ^= x << 17;
            order.swap(i, (x % (i as u64 + 1)) as usize);
        }
        let p = MsHyperParams::default();
        let loss = |e: &Tensor, l: &[usize]| {
            let s = similarity_matrix(e, l, &vec![0; l.len()]).unwrap();
            multi_similarity_loss(&s, &mine_pairs(&s, &p), &p).value
        };
        let permuted_labels: Vec<usize> = order.iter().map(|&i| labels[i]).collect();
        let a = loss(&e, &labels);
        let b = loss(&e.select_rows(&order), &permuted_labels);
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{a} vs {b}");
    }

    #[test]
    fn pair_weights_are_loss_gradients((e, labels) in embeddings()) {
        let p = MsHyperParams::default();
        let n = labels.len();
        let s = similarity_matrix(&e, &labels, &vec![0; n]).unwrap();
        let mined = mine_pairs(&s, &p);
        let m = mined.active_anchors() as f64;
        prop_assume!(m > 0.0);
        let scaled = |t: &Tensor| {
            let sm = SimilarityMatrix::from_parts(t.clone(), labels.clone(), vec![0; n]).unwrap();
            m * multi_similarity_loss(&sm, &mined, &p).value
        };
        for i in 0..n {
            let pairs = mined.negatives[i].iter().map(|&j| (j, false))
                .chain(mined.positives[i].iter().map(|&j| (j, true)));
            for (j, positive) in pairs {
                let w = if positive {
                    -positive_pair_weight(&s, i, j, &mined.positives[i], &p).unwrap()
                } else {
                    negative_pair_weight(&s, i, j, &mined.negatives[i], &p).unwrap()
                };
                if w.abs() < 1e-4 {
                    continue;
                }
                let h = 1e-5;
                let at = |k: f64| {
                    let mut t = s.s.clone();
                    t.data_mut()[i * n + j] += k * h;
                    scaled(&t)
                };
                let fd = (8.0 * (at(1.0) - at(-1.0)) - (at(2.0) - at(-2.0))) / (12.0 * h);
                prop_assert!((fd - w).abs() <= 1e-5 * w.abs(), "pair ({i},{j}): {fd} vs {w}");
            }
        }
    }

    #[test]
    fn linear_unit_critic_lower_bounds_w1(
        (a, b) in (1usize..12, 1usize..4).prop_flat_map(|(n, d)| (cloud(n, d), cloud(n, d))),
        raw in prop::collection::vec(-1.0f64..1.0, 4),
        bias in -5.0f64..5.0,
    ) {
        let d = a.cols();
        let w: Vec<f64> = raw[..d].to_vec();
        let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assume!(norm > 1e-3);
        let layer = Linear {
            weight: Tensor::matrix(d, 1, w.iter().map(|v| v / norm).collect()).unwrap(),
            bias: Tensor::matrix(1, 1, vec![bias]).unwrap(),
        };
        let critic = Mlp::from_layers(MlpSpec::new(vec![d, 1]).unwrap(), vec![layer]).unwrap();
        let est = pairwise_w1_estimate(critic.apply(&a).unwrap().data(), critic.apply(&b).unwrap().data()).unwrap();
        let exact = exact_w1_assignment(&PointCloud::new(a).unwrap(), &PointCloud::new(b).unwrap()).unwrap();
        prop_assert!(est.abs() <= exact + 1e-9, "{est} > {exact}");
    }

    #[test]
    fn exact_w1_is_a_metric(
        (a, b, c) in (1usize..9, 1usize..4).prop_flat_map(|(n, d)| (cloud(n, d), cloud(n, d), cloud(n, d))),
    ) {
        let [a, b, c] = [a, b, c].map(|t| PointCloud::new(t).unwrap());
        let w = |x: &PointCloud, y: &PointCloud| exact_w1_assignment(x, y).unwrap();
        prop_assert!(w(&a, &a).abs() <= 1e-12);
        prop_assert!((w(&a, &b) - w(&b, &a)).abs() <= 1e-9);
        prop_assert!(w(&a, &c) <= w(&a, &b) + w(&b, &c) + 1e-9);
    }
}
