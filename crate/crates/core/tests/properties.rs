use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use semnet_core::corpus::{sample_segments, split_train_test, SampleMode};
use semnet_core::evaluation::{weighted_f1, ConfusionTable};
use semnet_core::model::triplet_loss;
use semnet_core::semantic_learner::{conv_stack_forward, ConvLayer, ConvStackConfig};
use semnet_core::tensor_core::{ops, ActivationKind, Init, ParameterStore};
use semnet_core::Tensor64;

fn vec_strategy(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0f64..50.0, len)
}

proptest! {
    #[test]
    fn softmax_is_a_distribution(x in prop::collection::vec(-500.0f64..500.0, 1..20)) {
        let p = ops::softmax(&Tensor64::vector(x.clone())).unwrap();
        let sum: f64 = p.data().iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        prop_assert!(p.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        // shift invariance
        let shifted = ops::softmax(&Tensor64::vector(x.iter().map(|v| v + 3.5).collect())).unwrap();
        for (a, b) in p.data().iter().zip(shifted.data()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn triplet_loss_bounds_and_scale_invariance(
        (v, p, n) in (1usize..12).prop_flat_map(|d| (vec_strategy(d), vec_strategy(d), vec_strategy(d))),
        margin in 0.0f64..1.0,
        scale in 0.01f64..100.0,
    ) {
        let nonzero = |x: &Vec<f64>| x.iter().map(|a| a * a).sum::<f64>() > 1e-6;
        prop_assume!(nonzero(&v) && nonzero(&p) && nonzero(&n));
        let t = |x: &Vec<f64>| Tensor64::vector(x.clone());
        let loss = triplet_loss(&t(&v), &t(&p), &t(&n), margin).unwrap();
        prop_assert!(loss >= 0.0);
        prop_assert!(loss <= 2.0 + margin + 1e-12);
        let scaled = |x: &Vec<f64>| Tensor64::vector(x.iter().map(|a| a * scale).collect());
        let loss2 = triplet_loss(&scaled(&v), &scaled(&p), &scaled(&n), margin).unwrap();
        prop_assert!((loss - loss2).abs() < 1e-9);
        // a video paired with itself as the positive loses at most the margin
        let self_loss = triplet_loss(&t(&v), &t(&v), &t(&n), margin).unwrap();
        prop_assert!(self_loss <= margin + 1e-12);
    }

    #[test]
    fn weighted_f1_range_and_label_permutation(
        pairs in prop::collection::vec((0usize..4, 0usize..4), 1..60),
        perm_seed in any::<u64>(),
    ) {
        let labels: Vec<String> = (0..4).map(|i| format!("c{i}")).collect();
        let truth: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let pred: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let f1 = weighted_f1(&ConfusionTable::from_predictions(labels.clone(), &truth, &pred).unwrap()).unwrap();
        prop_assert!((0.0..=1.0).contains(&f1));

        let mut perm: Vec<usize> = (0..4).collect();
        let mut s = perm_seed;
        for i in (1..4).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
            perm.swap(i, (s >> 33) as usize % (i + 1));
        }
        let truth_p: Vec<usize> = truth.iter().map(|&c| perm[c]).collect();
        let pred_p: Vec<usize> = pred.iter().map(|&c| perm[c]).collect();
        let f1_p = weighted_f1(&ConfusionTable::from_predictions(labels, &truth_p, &pred_p).unwrap()).unwrap();
        prop_assert!((f1 - f1_p).abs() < 1e-12);
        if truth == pred {
            prop_assert!((f1 - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn segment_sampling_invariants(frames in 1usize..300, segments in 1usize..40, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for mode in [SampleMode::Train, SampleMode::Eval] {
            let idx = sample_segments(frames, segments, mode, &mut rng);
            prop_assert_eq!(idx.len(), segments);
            prop_assert!(idx.iter().all(|&i| i < frames));
            prop_assert!(idx.windows(2).all(|w| w[0] <= w[1]));
            if frames >= segments {
                prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
                // one pick per span: segment i covers [i·T/L, (i+1)·T/L)
                for (i, &f) in idx.iter().enumerate() {
                    prop_assert!(f >= i * frames / segments && f < ((i + 1) * frames).div_ceil(segments).max(i * frames / segments + 1));
                }
            }
        }
        let a = sample_segments(frames, segments, SampleMode::Eval, &mut ChaCha8Rng::seed_from_u64(1));
        let b = sample_segments(frames, segments, SampleMode::Eval, &mut ChaCha8Rng::seed_from_u64(2));
        prop_assert_eq!(a, b);
    }

    #[test]
    fn stratified_split_partitions_every_class(
        counts in prop::collection::vec(2usize..30, 1..6),
        seed in any::<u64>(),
    ) {
        let labels: Vec<usize> = counts.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(c, n)).collect();
        let split = split_train_test(&labels, 0.8, seed).unwrap();
        let mut all: Vec<usize> = split.train.iter().chain(&split.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
        for (c, &n) in counts.iter().enumerate() {
            let tr = split.train.iter().filter(|&&i| labels[i] == c).count();
            prop_assert!(tr >= 1 && tr < n);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 100, ..ProptestConfig::default() })]

    #[test]
    fn conv_stack_halves_time_per_layer(
        layers in prop::collection::vec((1usize..6, prop::sample::select(vec![1usize, 3, 5])), 1..4),
        input_dim in 1usize..6,
        extra in 0usize..40,
        seed in any::<u64>(),
    ) {
        let output_dim = layers.last().unwrap().0;
        let cfg = ConvStackConfig {
            layers: layers.iter().map(|&(filters, kernel)| ConvLayer { filters, kernel }).collect(),
            input_dim,
            output_dim,
            activation: ActivationKind::Relu,
        };
        let len = cfg.min_len() + extra;
        let mut store = ParameterStore::<f64>::new();
        cfg.register(&mut store, seed).unwrap();
        let x: Tensor64 = Init::Normal { std: 1.0, seed }.materialize(&[len, input_dim]);
        let out = conv_stack_forward(&x, &cfg, &store).unwrap();
        let expected = len / 2usize.pow(layers.len() as u32);
        prop_assert_eq!(out.shape(), &[expected, output_dim][..]);
        prop_assert_eq!(cfg.output_len(len), expected);
        let short: Tensor64 = Init::Normal { std: 1.0, seed }.materialize(&[cfg.min_len() - 1, input_dim]);
        prop_assert!(conv_stack_forward(&short, &cfg, &store).is_err());
    }
}
