use semnet_core::corpus::{sample_segments, Corpus, SampleMode, SyntheticSpec};
use semnet_core::memory::MemoryState;
use semnet_core::model::{
    file_hash, load_checkpoint, save_checkpoint, train, Model, ModelVariant, TrainConfig, SSM_PROJECTION,
};
use semnet_core::rng::Rng;
use semnet_core::semantic_learner::{conv_stack_forward, summarize, DescriptorBank, DESCRIPTORS, DESCRIPTOR_WEIGHTS};
use semnet_core::tensor_core::Tensor;
use semnet_core::{Model64, Tensor64};
use rand::SeedableRng;

fn small_spec(items: usize) -> SyntheticSpec {
    SyntheticSpec {
        num_items: items,
        frames_per_item: 24,
        feature_dim: 10,
        seed: 5,
        ..SyntheticSpec::default()
    }
}

fn small_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 4,
        segments: 8,
        model_dim: 8,
        word_dim: 6,
        descriptors: 4,
        memory_slots: 4,
        conv_filters: vec![6],
        ..TrainConfig::default()
    }
}

fn model_for(variant: ModelVariant, corpus: &Corpus, cfg: TrainConfig) -> Model64 {
    Model::new(variant, cfg, corpus.feature_dim().unwrap(), corpus.token_index(), corpus.genres.clone()).unwrap()
}

#[test]
fn training_is_deterministic() {
    let corpus = Corpus::synthetic(&small_spec(12)).unwrap();
    for variant in ModelVariant::ALL {
        let run = || {
            let mut m = model_for(variant, &corpus, small_config(3));
            let out = train(&mut m, &corpus, |_, _| {}).unwrap();
            (m, out.loss_curve)
        };
        let (a, la) = run();
        let (b, lb) = run();
        assert_eq!(la, lb, "{variant}");
        assert_eq!(a, b, "{variant}");

        let dir = tempfile::tempdir().unwrap();
        let (pa, pb) = (dir.path().join("a.vsnt"), dir.path().join("b.vsnt"));
        save_checkpoint(&a, &pa).unwrap();
        save_checkpoint(&b, &pb).unwrap();
        assert_eq!(file_hash(&pa).unwrap(), file_hash(&pb).unwrap());
        assert_eq!(
            std::fs::read(pa.with_extension("vsnt.json")).unwrap(),
            std::fs::read(pb.with_extension("vsnt.json")).unwrap()
        );
    }
}

#[test]
fn different_seeds_give_different_models() {
    let corpus = Corpus::synthetic(&small_spec(12)).unwrap();
    let a = model_for(ModelVariant::SemNet, &corpus, small_config(1));
    let b = model_for(ModelVariant::SemNet, &corpus, TrainConfig { seed: 8, ..small_config(1) });
    assert_ne!(a.params, b.params);
}

#[test]
fn one_batch_overfits() {
    let corpus = Corpus::synthetic(&SyntheticSpec { num_items: 8, ..SyntheticSpec::default() }).unwrap();
    let cfg = TrainConfig {
        epochs: 200,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let mut m: Model<f32> =
        Model::new(ModelVariant::SemNet, cfg, corpus.feature_dim().unwrap(), corpus.token_index(), corpus.genres.clone())
            .unwrap();
    let out = train(&mut m, &corpus, |_, _| {}).unwrap();
    assert_eq!(out.optimizer_steps, 200);
    let (first, last) = (out.loss_curve[0], *out.loss_curve.last().unwrap());
    assert!(last < 0.05 * first, "loss went from {first} to {last}");
}

#[test]
fn checkpoint_round_trip() {
    let corpus = Corpus::synthetic(&small_spec(10)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for variant in ModelVariant::ALL {
        let mut m = model_for(variant, &corpus, small_config(2));
        train(&mut m, &corpus, |_, _| {}).unwrap();
        let path = dir.path().join(format!("{variant}.vsnt"));
        save_checkpoint(&m, &path).unwrap();
        let back: Model64 = load_checkpoint(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.embed_corpus(&corpus).unwrap(), m.embed_corpus(&corpus).unwrap());

        // resaving the loaded model gives the same bytes
        let again = dir.path().join(format!("{variant}-again.vsnt"));
        save_checkpoint(&back, &again).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    }
}

#[test]
fn tampered_checkpoint_config_is_rejected() {
    let corpus = Corpus::synthetic(&small_spec(6)).unwrap();
    let m = model_for(ModelVariant::Slm, &corpus, small_config(1));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.vsnt");
    save_checkpoint(&m, &path).unwrap();
    let side = path.with_extension("vsnt.json");
    let text = std::fs::read_to_string(&side).unwrap().replace("\"margin\": 0.2", "\"margin\": 0.3");
    std::fs::write(&side, text).unwrap();
    assert!(load_checkpoint::<f64>(&path).is_err());
}

#[test]
fn embeddings_are_deterministic_and_order_free() {
    let corpus = Corpus::synthetic(&small_spec(10)).unwrap();
    let mut m = model_for(ModelVariant::SemNet, &corpus, small_config(2));
    train(&mut m, &corpus, |_, _| {}).unwrap();
    let a = m.embed_corpus(&corpus).unwrap();
    assert_eq!(a, m.embed_corpus(&corpus).unwrap());

    let reversed: Vec<usize> = (0..corpus.len()).rev().collect();
    let b = m.embed_corpus(&corpus.subset(&reversed)).unwrap();
    for (i, &j) in reversed.iter().enumerate() {
        assert_eq!(a.videos.row(j), b.videos.row(i));
    }
}

/// Eval-mode batch normalization written out per element.
fn normalize(x: &Tensor64, m: &Model64) -> Tensor64 {
    let (l, f) = x.dims2().unwrap();
    let gamma = m.params.get("features.bn.gamma").unwrap();
    let beta = m.params.get("features.bn.beta").unwrap();
    let mut out = Vec::with_capacity(l * f);
    for t in 0..l {
        for j in 0..f {
            let v = (x.row(t)[j] - m.norm_stats.mean.data()[j]) / (m.norm_stats.var.data()[j] + 1e-5).sqrt();
            out.push(v * gamma.data()[j] + beta.data()[j]);
        }
    }
    Tensor::new(vec![l, f], out).unwrap()
}

fn eval_snippets(m: &Model64, corpus: &Corpus, i: usize) -> Tensor64 {
    let item = &corpus.items[i];
    let idx = sample_segments(item.features.num_frames(), m.config.segments, SampleMode::Eval, &mut Rng::seed_from_u64(0));
    item.features.select(&idx).unwrap().cast()
}

#[test]
fn ssm_with_identity_projection_returns_the_normalized_constant_frame() {
    let mut corpus = Corpus::synthetic(&small_spec(4)).unwrap();
    let f = corpus.feature_dim().unwrap();
    let frame: Vec<f32> = (0..f).map(|j| j as f32 * 0.25 - 1.0).collect();
    let frames: Vec<f32> = frame.iter().cycle().take(24 * f).copied().collect();
    corpus.items[0].features.frames = Tensor::new(vec![24, f], frames).unwrap();
    let mut m = model_for(ModelVariant::Ssm, &corpus, TrainConfig { model_dim: f, ..small_config(1) });
    *m.params.get_mut(SSM_PROJECTION).unwrap() = Tensor64::identity(f);
    let emb = m.embed_item(&corpus.items[0], None).unwrap();
    for (j, v) in emb.vector.data().iter().enumerate() {
        let expected = frame[j] as f64 / (1.0f64 + 1e-5).sqrt();
        assert!((v - expected).abs() < 1e-12, "feature {j}: {v} vs {expected}");
    }
}

#[test]
fn slm_embedding_is_the_semantic_summary() {
    let corpus = Corpus::synthetic(&small_spec(8)).unwrap();
    let mut m = model_for(ModelVariant::Slm, &corpus, small_config(2));
    train(&mut m, &corpus, |_, _| {}).unwrap();
    let cfg = m.config.conv_stack(m.feature_dim);
    let bank = DescriptorBank::new(m.params.get(DESCRIPTORS).unwrap().clone()).unwrap();
    let w_d = m.params.get(DESCRIPTOR_WEIGHTS).unwrap();
    for i in 0..corpus.len() {
        let h = conv_stack_forward(&normalize(&eval_snippets(&m, &corpus, i), &m), &cfg, &m.params).unwrap();
        let (s, traj) = summarize(&h, &bank, w_d).unwrap();
        assert_eq!(traj.shape(), &[cfg.output_len(m.config.segments), m.config.descriptors]);
        let got = m.embed_item(&corpus.items[i], None).unwrap();
        for (a, b) in got.vector.data().iter().zip(s.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn slm_ignores_memory() {
    let corpus = Corpus::synthetic(&small_spec(6)).unwrap();
    let m = model_for(ModelVariant::Slm, &corpus, small_config(1));
    assert!(!m.params.names().any(|n| n.starts_with("memory.")));
    let mut busy = MemoryState::zeros(4, 8);
    busy.reset(semnet_core::memory::ResetPolicy::SeededRandom, 99);
    busy.ages = vec![3, 1, 4, 1];
    let plain = m.embed_item(&corpus.items[2], None).unwrap();
    let with_memory = m.embed_item(&corpus.items[2], Some(&mut busy.clone())).unwrap();
    assert_eq!(plain, with_memory);
}

#[test]
fn semnet_outputs_lie_strictly_inside_the_unit_cube() {
    let corpus = Corpus::synthetic(&small_spec(10)).unwrap();
    let mut m = model_for(ModelVariant::SemNet, &corpus, small_config(3));
    train(&mut m, &corpus, |_, _| {}).unwrap();
    let emb = m.embed_corpus(&corpus).unwrap();
    assert!(emb.videos.data().iter().all(|v| v.abs() < 1.0));
    // a SemNet item without a memory state is a contract violation
    assert!(m.embed_item(&corpus.items[0], None).is_err());
    let mut mem = m.memory.clone();
    let one = m.embed_item(&corpus.items[3], Some(&mut mem)).unwrap();
    assert_eq!(one.vector.data(), emb.videos.row(3));
    // the cycle still advances context and ages, but nothing is written
    assert_eq!(mem.memory, m.memory.memory);
    assert_eq!(mem.step, m.memory.step + 1);
}
