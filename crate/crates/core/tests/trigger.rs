use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use replykit::corpus::{RawMessage, TokenizedMessage};
use replykit::eval::auc;
use replykit::nn::{Gradient, Mlp, SparseInput, Target};
use replykit::trigger::{
    balance, calibrate_threshold, extract_features, should_trigger, train_trigger, TriggerConfig, TriggerFeatures,
    TriggerModel, DENSE_DIM,
};

fn input(f: &TriggerFeatures) -> SparseInput {
    SparseInput {
        sparse: f.sparse.to_vec(),
        dense: f.dense.clone(),
    }
}

/// Positives carry one of a few "question" ids, negatives one of a few
/// "promo" ids; everything else is shared noise.
fn separable(n: usize, buckets: u32, rng: &mut ChaCha8Rng) -> Vec<(TriggerFeatures, bool)> {
    (0..n)
        .map(|_| {
            let y = rng.gen_bool(0.5);
            let marker = if y { rng.gen_range(0..4) } else { rng.gen_range(4..8) };
            let mut uni: Vec<u32> = (0..rng.gen_range(2..8)).map(|_| rng.gen_range(8..buckets)).collect();
            uni.push(marker);
            let bi = (0..3).map(|_| rng.gen_range(0..buckets)).collect();
            let subj = (0..2).map(|_| rng.gen_range(0..buckets)).collect();
            let dense = (0..DENSE_DIM).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
            (
                TriggerFeatures {
                    sparse: [uni, bi, subj],
                    dense,
                },
                y,
            )
        })
        .collect()
}

fn small_config() -> TriggerConfig {
    TriggerConfig {
        buckets: 512,
        embed_dim: 8,
        hidden: vec![16, 8],
        epochs: 8,
        learning_rate: 0.05,
        ..Default::default()
    }
}

#[test]
fn trigger_gradient_matches_central_differences() {
    let config = TriggerConfig {
        buckets: 32,
        embed_dim: 8,
        hidden: vec![8, 8, 8],
        ..Default::default()
    };
    let mlp = Mlp::init(config.shape(), 5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let batch = separable(2, 32, &mut rng);
    let mut grad = Gradient::default();
    let mut loss = 0.0;
    for (f, y) in &batch {
        loss += mlp.loss_and_grad(&input(f), Target::Binary(*y), &mut grad, None);
    }
    assert!(loss.is_finite());
    let emb = mlp.shape.embedding_params();
    let batch_loss = |m: &Mlp| batch.iter().map(|(f, y)| m.loss(&input(f), Target::Binary(*y))).sum::<f64>();
    let mut probes: Vec<usize> = grad.embedding.keys().copied().collect();
    probes.extend((0..60).map(|_| emb + rng.gen_range(0..mlp.params.len() - emb)));
    let h = 1e-5;
    let mut checked = 0;
    for i in probes {
        let analytic = if i < emb { grad.embedding[&i] } else { grad.dense[i - emb] };
        let mut plus = mlp.clone();
        plus.params[i] += h;
        let mut minus = mlp.clone();
        minus.params[i] -= h;
        let numeric = (batch_loss(&plus) - batch_loss(&minus)) / (2.0 * h);
        let scale = analytic.abs().max(numeric.abs());
        if scale < 1e-7 {
            continue;
        }
        let rel = (analytic - numeric).abs() / scale;
        assert!(rel < 1e-3, "param {i}: analytic {analytic} numeric {numeric}");
        checked += 1;
    }
    assert!(checked > 20, "only {checked} non-trivial probes");
}

#[test]
fn separable_data_is_learned() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let train = separable(2000, 512, &mut rng);
    let test = separable(1000, 512, &mut rng);
    let (model, losses) = train_trigger(&train, &small_config()).unwrap();
    assert!(losses.last().unwrap() < &losses[0]);
    let scores: Vec<f64> = test.iter().map(|(f, _)| model.score(f)).collect();
    let labels: Vec<bool> = test.iter().map(|e| e.1).collect();
    assert!(scores.iter().all(|s| (0.0..=1.0).contains(s)));
    let a = auc(&scores, &labels).unwrap();
    assert!(a >= 0.99, "AUC {a}");
    let correct = scores.iter().zip(&labels).filter(|(&s, &y)| should_trigger(s, 0.5) == y).count();
    assert!(correct as f64 >= 0.99 * test.len() as f64, "accuracy {correct}/1000");
}

#[test]
fn calibration_hits_target_fraction_on_held_out_scores() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let train = separable(2000, 512, &mut rng);
    let (model, _) = train_trigger(&train, &small_config()).unwrap();
    let held_out = separable(1500, 512, &mut rng);
    let scores: Vec<f64> = held_out.iter().map(|(f, _)| model.score(f)).collect();
    for target in [0.11, 0.3, 0.5] {
        let t = calibrate_threshold(&scores, target);
        let frac = scores.iter().filter(|&&s| should_trigger(s, t)).count() as f64 / scores.len() as f64;
        assert!((frac - target).abs() <= 0.01, "target {target}: got {frac}");
    }
}

#[test]
fn marker_feature_raises_the_score() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let train = separable(2000, 512, &mut rng);
    let (model, _) = train_trigger(&train, &small_config()).unwrap();
    let base = TriggerFeatures {
        sparse: [vec![100, 200], vec![], vec![300]],
        dense: vec![0.0; DENSE_DIM],
    };
    let mut with_pos = base.clone();
    with_pos.sparse[0].push(1);
    let mut with_neg = base.clone();
    with_neg.sparse[0].push(5);
    assert!(model.score(&with_pos) > model.score(&base));
    assert!(model.score(&with_neg) < model.score(&base));
}

#[test]
fn balancing_and_persistence() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut data: Vec<(u32, bool)> = (0..300).map(|i| (i, rng.gen_bool(0.2))).collect();
    data.push((999, true));
    let b = balance(&data, 3);
    let pos = b.iter().filter(|e| e.1).count();
    assert!(pos.abs_diff(b.len() - pos) <= 1);

    let train = separable(300, 512, &mut rng);
    let (model, _) = train_trigger(&train, &small_config()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trigger.rfsm");
    model.save(&path).unwrap();
    let back = TriggerModel::load(&path).unwrap();
    assert_eq!(back, model);
    for (f, _) in &train[..20] {
        assert_eq!(back.score(f).to_bits(), model.score(f).to_bits());
    }
}

#[test]
fn hashing_is_stable_across_calls() {
    let msg = TokenizedMessage {
        subject_tokens: vec!["lunch".into()],
        body_sentences: vec![vec!["are".into(), "you".into(), "free".into(), "?".into()]],
        normalized: true,
    };
    let raw = RawMessage {
        id: "m".into(),
        sender_in_address_book: true,
        ..Default::default()
    };
    let a = extract_features(&msg, &raw, 1 << 18);
    let b = extract_features(&msg, &raw, 1 << 18);
    assert_eq!(a, b);
    assert_eq!(a.sparse[0].len(), 4);
    assert_eq!(a.sparse[1].len(), 3);
    assert_eq!(a.sparse[2].len(), 1);
    assert_eq!(a.dense[0], 1.0);
}
