use asoftmax::angular::MarginConfig;
use asoftmax::dataio::{synth_blobs, LabeledBatch, SyntheticSpec};
use asoftmax::embedder::{
    checkpoint_load, checkpoint_save, embed, init_model, loss_and_gradients, train, train_step, Activation, ClassifierHead, EmbedderConfig,
    EmbedderError, LossKind, ModelState, TrainConfig,
};
use asoftmax::losses::asoftmax_loss_unchecked;
use asoftmax::numcore::{column_norms, Matrix, Rng};

fn train_cfg(kind: LossKind, m: u32, lr: f64, iterations: u64) -> TrainConfig {
    TrainConfig {
        iterations,
        batch_size: 2,
        learning_rate: lr,
        lr_decay_points: vec![],
        lr_decay_factor: 0.1,
        margin: MarginConfig { m, lambda_start: 20.0, lambda_min: 5.0, lambda_decay: 0.5 },
        loss_kind: kind,
    }
}

fn loss_of(state: &ModelState, batch: &LabeledBatch, cfg: &TrainConfig) -> f64 {
    loss_and_gradients(state, batch, cfg).unwrap().0.loss
}

fn check_pipeline(widths: Vec<usize>, kind: LossKind, m: u32, seed: u64) {
    let cfg = train_cfg(kind, m, 0.1, 1);
    let emb = EmbedderConfig { layer_widths: widths.clone(), activation: Activation::Relu, seed };
    let state = init_model(&emb, 3, kind).unwrap();
    let mut rng = Rng::new(seed + 100);
    let x = Matrix::from_vec(2, widths[0], (0..2 * widths[0]).map(|_| rng.normal()).collect()).unwrap();
    let batch = LabeledBatch::new(x, vec![0, 2], 3).unwrap();
    let (_, grads) = loss_and_gradients(&state, &batch, &cfg).unwrap();

    let h = 1e-6;
    for (l, g) in grads.layers.iter().enumerate() {
        let n_w = state.layers[l].weights.data().len();
        for i in 0..n_w + state.layers[l].biases.len() {
            let probe = |delta: f64| {
                let mut s = state.clone();
                if i < n_w {
                    s.layers[l].weights.data_mut()[i] += delta;
                } else {
                    s.layers[l].biases[i - n_w] += delta;
                }
                loss_of(&s, &batch, &cfg)
            };
            let fd = (probe(h) - probe(-h)) / (2.0 * h);
            let a = if i < n_w { g.weights.data()[i] } else { g.biases[i - n_w] };
            let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-7);
            assert!(err < 1e-4 || (a - fd).abs() < 1e-9, "{kind:?} layer {l} param {i}: analytic {a} vs numeric {fd}");
        }
    }
}

#[test]
fn whole_pipeline_gradients_single_layer() {
    for kind in [LossKind::Softmax, LossKind::Modified, LossKind::Asoftmax] {
        for seed in 0..5 {
            check_pipeline(vec![4, 3], kind, 3, seed);
        }
    }
}

#[test]
fn whole_pipeline_gradients_through_relu() {
    for kind in [LossKind::Softmax, LossKind::Modified, LossKind::Asoftmax] {
        for seed in 0..5 {
            check_pipeline(vec![4, 6, 3], kind, 2, seed);
        }
    }
}

fn blobs(k: usize, per_class: usize, dim: usize, spread: f64, seed: u64) -> LabeledBatch {
    synth_blobs(&SyntheticSpec { k_classes: k, per_class, dim, angular_spread: spread, radius_jitter: 0.2, seed }).unwrap().batch
}

#[test]
fn modified_softmax_decreases_loss_on_separable_blobs() {
    let data = blobs(2, 40, 4, 0.2, 3);
    let emb = EmbedderConfig { layer_widths: vec![4, 8, 3], activation: Activation::Relu, seed: 1 };
    let mut cfg = train_cfg(LossKind::Modified, 1, 0.05, 200);
    cfg.batch_size = 16;
    let state = init_model(&emb, 2, LossKind::Modified).unwrap();
    let initial = loss_of(&state, &data, &cfg);
    let (state, history) = train(state, &data, &cfg).unwrap();
    assert_eq!(history.len(), 200);
    let last = loss_of(&state, &data, &cfg);
    assert!(last < initial, "loss went from {initial} to {last}");
}

#[test]
fn classifier_columns_stay_unit_after_steps() {
    let data = blobs(4, 10, 5, 0.3, 8);
    let emb = EmbedderConfig { layer_widths: vec![5, 7, 4], activation: Activation::Relu, seed: 2 };
    let mut cfg = train_cfg(LossKind::Asoftmax, 4, 0.2, 25);
    cfg.batch_size = 8;
    let (state, _) = train(init_model(&emb, 4, LossKind::Asoftmax).unwrap(), &data, &cfg).unwrap();
    let ClassifierHead::Angular(w) = &state.head else { panic!("angular head expected") };
    for n in column_norms(w.matrix()) {
        assert!((n - 1.0).abs() < 1e-9);
    }
    assert_eq!(state.iteration, 25);
    assert!(state.anneal.unwrap().lambda < 20.0);
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let data = blobs(3, 4, 4, 0.3, 1);
    let emb = EmbedderConfig { layer_widths: vec![4, 3], activation: Activation::Relu, seed: 4 };
    let state = init_model(&emb, 3, LossKind::Asoftmax).unwrap();
    let cfg = train_cfg(LossKind::Asoftmax, 2, 0.0, 1);
    let (next, _) = train_step(state.clone(), &data, &cfg).unwrap();
    assert_eq!(next.layers, state.layers);
    assert_eq!(next.head, state.head);
    assert_eq!(next.iteration, 1);
}

#[test]
fn identical_seeds_identical_runs() {
    let data = blobs(3, 20, 6, 0.3, 5);
    let emb = EmbedderConfig { layer_widths: vec![6, 9, 3], activation: Activation::Relu, seed: 6 };
    let mut cfg = train_cfg(LossKind::Asoftmax, 3, 0.05, 60);
    cfg.batch_size = 10;
    let run = || train(init_model(&emb, 3, LossKind::Asoftmax).unwrap(), &data, &cfg).unwrap();
    let (a, ha) = run();
    let (b, hb) = run();
    assert_eq!(ha, hb);
    assert_eq!(checkpoint_save(&a), checkpoint_save(&b));
}

#[test]
fn checkpoint_preserves_embeddings_and_resumes() {
    let data = blobs(3, 20, 6, 0.3, 5);
    let emb = EmbedderConfig { layer_widths: vec![6, 9, 3], activation: Activation::Relu, seed: 6 };
    let mut cfg = train_cfg(LossKind::Asoftmax, 3, 0.05, 30);
    cfg.batch_size = 10;
    let (half, _) = train(init_model(&emb, 3, LossKind::Asoftmax).unwrap(), &data, &cfg).unwrap();
    let restored = checkpoint_load(&checkpoint_save(&half)).unwrap();
    assert_eq!(embed(&half, &data.features).unwrap(), embed(&restored, &data.features).unwrap());

    let (resumed, _) = train(restored, &data, &cfg).unwrap();
    cfg.iterations = 60;
    let (straight, _) = train(init_model(&emb, 3, LossKind::Asoftmax).unwrap(), &data, &cfg).unwrap();
    assert_eq!(checkpoint_save(&resumed), checkpoint_save(&straight));
}

#[test]
fn exploding_learning_rate_reports_divergence() {
    let data = blobs(3, 8, 4, 0.3, 2);
    let emb = EmbedderConfig { layer_widths: vec![4, 8, 3], activation: Activation::Relu, seed: 3 };
    let mut cfg = train_cfg(LossKind::Softmax, 1, 1e300, 50);
    cfg.batch_size = 8;
    let err = train(init_model(&emb, 3, LossKind::Softmax).unwrap(), &data, &cfg).unwrap_err();
    match err {
        EmbedderError::Diverged { lr, .. } => assert_eq!(lr, 1e300),
        other => panic!("expected divergence, got {other}"),
    }
}

#[test]
fn embedding_has_no_terminal_rectifier() {
    let emb = EmbedderConfig { layer_widths: vec![5, 8, 4], activation: Activation::Relu, seed: 9 };
    let state = init_model(&emb, 3, LossKind::Modified).unwrap();
    let mut rng = Rng::new(1);
    let x = Matrix::from_vec(20, 5, (0..100).map(|_| rng.normal()).collect()).unwrap();
    assert!(embed(&state, &x).unwrap().data().iter().any(|&v| v < 0.0));
}

#[test]
fn loss_grows_with_margin() {
    let mut rng = Rng::new(31);
    for _ in 0..50 {
        let x = Matrix::from_vec(4, 3, (0..12).map(|_| rng.normal()).collect()).unwrap();
        let w = asoftmax::numcore::normalize_columns(&Matrix::from_vec(3, 4, (0..12).map(|_| rng.normal()).collect()).unwrap(), 1e-12);
        let labels = vec![0, 1, 2, 3];
        let losses: Vec<f64> = (1..=4).map(|m| asoftmax_loss_unchecked(&x, &w, &labels, m, 0.0).unwrap().loss).collect();
        for pair in losses.windows(2) {
            assert!(pair[1] >= pair[0] - 1e-12, "{losses:?}");
        }
    }
}

#[test]
fn argmax_is_scale_covariant() {
    let mut rng = Rng::new(32);
    let w = asoftmax::numcore::normalize_columns(&Matrix::from_vec(4, 5, (0..20).map(|_| rng.normal()).collect()).unwrap(), 1e-12);
    for _ in 0..100 {
        let x: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
        let argmax = |s: f64| {
            let xs = Matrix::from_vec(1, 4, x.iter().map(|v| v * s).collect()).unwrap();
            let logits = asoftmax::numcore::matmul(&xs, &w).unwrap();
            (0..5).max_by(|&a, &b| logits[(0, a)].total_cmp(&logits[(0, b)])).unwrap()
        };
        let base = argmax(1.0);
        for s in [1e-3, 0.5, 7.0, 1e4] {
            assert_eq!(argmax(s), base);
        }
    }
}
