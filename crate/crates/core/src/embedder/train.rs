use serde::{Deserialize, Serialize};

use super::{forward, ClassifierHead, Dense, EmbedderError, ModelState};
use crate::angular::MarginConfig;
use crate::dataio::LabeledBatch;
use crate::losses::{self, advance_anneal, AnnealState, LossError, LossOutput};
use crate::numcore::{matmul, par, Matrix, NumError, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Softmax,
    Modified,
    Asoftmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Iterations at which the learning rate is multiplied by `lr_decay_factor`.
    #[serde(default)]
    pub lr_decay_points: Vec<u64>,
    #[serde(default = "default_decay_factor")]
    pub lr_decay_factor: f64,
    pub margin: MarginConfig,
    pub loss_kind: LossKind,
}

fn default_decay_factor() -> f64 {
    0.1
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), EmbedderError> {
        let bad = |msg: String| Err(EmbedderError::InvalidConfig(msg));
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad(format!("learning_rate = {} must be finite and >= 0", self.learning_rate));
        }
        if self.lr_decay_points.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("lr_decay_points {:?} must be strictly increasing", self.lr_decay_points));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor < 1.0) {
            return bad(format!("lr_decay_factor = {} must lie in (0, 1)", self.lr_decay_factor));
        }
        self.margin.validate().map_err(|e| EmbedderError::InvalidConfig(e.to_string()))
    }
}

/// Step-decayed learning rate at a global iteration.
pub fn learning_rate_at(cfg: &TrainConfig, iteration: u64) -> f64 {
    let passed = cfg.lr_decay_points.iter().filter(|&&p| iteration >= p).count();
    cfg.learning_rate * cfg.lr_decay_factor.powi(passed as i32)
}

/// Parameter gradients, laid out like the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
    pub head_weights: Matrix,
    pub head_biases: Option<Vec<f64>>,
}

fn current_anneal(state: &ModelState, margin: &MarginConfig) -> AnnealState {
    state.anneal.unwrap_or_else(|| AnnealState::new(margin))
}

fn head_loss(state: &ModelState, embeddings: &Matrix, labels: &[usize], cfg: &TrainConfig) -> Result<LossOutput, EmbedderError> {
    match (&state.head, cfg.loss_kind) {
        (ClassifierHead::Linear { weights, biases }, LossKind::Softmax) => Ok(losses::softmax_loss(embeddings, weights, biases, labels)?),
        (ClassifierHead::Angular(c), LossKind::Modified) => Ok(losses::modified_softmax_loss(embeddings, c.matrix(), labels)?),
        (ClassifierHead::Angular(c), LossKind::Asoftmax) => {
            let anneal = current_anneal(state, &cfg.margin);
            Ok(losses::asoftmax_loss(embeddings, c.matrix(), labels, &cfg.margin, &anneal)?)
        }
        (head, kind) => Err(EmbedderError::HeadMismatch { kind, head: head.name() }),
    }
}

/// Forward pass, selected loss, and backpropagation through every layer.
pub fn loss_and_gradients(state: &ModelState, batch: &LabeledBatch, cfg: &TrainConfig) -> Result<(LossOutput, Gradients), EmbedderError> {
    let fwd = forward(state, &batch.features)?;
    let embeddings = fwd.activations.last().expect("output layer");
    let out = head_loss(state, embeddings, &batch.labels, cfg)?;

    let n_layers = state.layers.len();
    let mut grads = Vec::with_capacity(n_layers);
    let mut upstream = out.grad_features.clone();
    for l in (0..n_layers).rev() {
        if l + 1 < n_layers {
            // relu'(z) = [z > 0]; the stored activation is relu(z).
            let act = &fwd.activations[l + 1];
            for (g, &a) in upstream.data_mut().iter_mut().zip(act.data()) {
                if a <= 0.0 {
                    *g = 0.0;
                }
            }
        }
        let input = &fwd.activations[l];
        let gw = matmul(&input.transpose(), &upstream)?;
        let gb: Vec<f64> = (0..upstream.cols()).map(|j| par::pairwise_sum(&upstream.column(j))).collect();
        if l > 0 {
            upstream = matmul(&upstream, &state.layers[l].weights.transpose())?;
        }
        grads.push(Dense { weights: gw, biases: gb });
    }
    grads.reverse();
    let grads = Gradients { layers: grads, head_weights: out.grad_weights.clone(), head_biases: out.grad_biases.clone() };
    Ok((out, grads))
}

/// One projected-SGD step on `batch`. Returns the loss before the update.
pub fn train_step(mut state: ModelState, batch: &LabeledBatch, cfg: &TrainConfig) -> Result<(ModelState, f64), EmbedderError> {
    if batch.is_empty() {
        return Err(EmbedderError::InvalidConfig("empty batch".into()));
    }
    let lr = learning_rate_at(cfg, state.iteration);
    let anneal = current_anneal(&state, &cfg.margin);
    let diverged = |reason: String| EmbedderError::Diverged { iteration: state.iteration, lambda: anneal.lambda, lr, reason };

    let (out, grads) = match loss_and_gradients(&state, batch, cfg) {
        Ok(v) => v,
        Err(EmbedderError::Loss(e @ LossError::NonFinite(_))) => return Err(diverged(e.to_string())),
        Err(EmbedderError::Num(e @ NumError::NonFinite { .. })) => return Err(diverged(e.to_string())),
        Err(e) => return Err(e),
    };
    if !out.loss.is_finite() {
        return Err(diverged("non-finite loss".into()));
    }

    for (layer, g) in state.layers.iter_mut().zip(&grads.layers) {
        layer.weights.sub_scaled(&g.weights, lr);
        for (b, gb) in layer.biases.iter_mut().zip(&g.biases) {
            *b -= lr * gb;
        }
    }
    match &mut state.head {
        ClassifierHead::Angular(c) => c.step(&grads.head_weights, lr),
        ClassifierHead::Linear { weights, biases } => {
            weights.sub_scaled(&grads.head_weights, lr);
            if let Some(gb) = &grads.head_biases {
                for (b, g) in biases.iter_mut().zip(gb) {
                    *b -= lr * g;
                }
            }
        }
    }
    if state.layers.iter().any(|l| !l.weights.is_finite() || l.biases.iter().any(|b| !b.is_finite())) || !state.head.weights().is_finite() {
        return Err(diverged("non-finite parameters after update".into()));
    }
    if cfg.loss_kind == LossKind::Asoftmax {
        state.anneal = Some(advance_anneal(anneal, &cfg.margin));
    }
    state.iteration += 1;
    Ok((state, out.loss))
}

/// Runs `cfg.iterations` minibatch steps. Each epoch's shuffle is seeded from
/// the model seed and the epoch index, so resumed runs replay the same batches.
pub fn train(mut state: ModelState, dataset: &LabeledBatch, cfg: &TrainConfig) -> Result<(ModelState, Vec<f64>), EmbedderError> {
    cfg.validate()?;
    let n = dataset.len();
    if n < cfg.batch_size {
        return Err(EmbedderError::InvalidConfig(format!("dataset has {n} samples, fewer than batch_size {}", cfg.batch_size)));
    }
    let per_epoch = (n / cfg.batch_size) as u64;
    let mut history = Vec::with_capacity(cfg.iterations as usize);
    let mut cached: Option<(u64, Vec<usize>)> = None;
    for _ in 0..cfg.iterations {
        let epoch = state.iteration / per_epoch;
        let pos = (state.iteration % per_epoch) as usize;
        if cached.as_ref().is_none_or(|(e, _)| *e != epoch) {
            let perm = Rng::derived(state.config.seed, 1_000 + epoch).permutation(n);
            cached = Some((epoch, perm));
        }
        let perm = &cached.as_ref().expect("permutation").1;
        let batch = dataset.select(&perm[pos * cfg.batch_size..(pos + 1) * cfg.batch_size]);
        let (next, loss) = train_step(state, &batch, cfg)?;
        state = next;
        history.push(loss);
    }
    Ok((state, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{synth_blobs, SyntheticSpec};
    use crate::embedder::{init_model, Activation, EmbedderConfig};
    use crate::numcore::column_norms;

    fn tcfg(kind: LossKind) -> TrainConfig {
        TrainConfig {
            iterations: 50,
            batch_size: 16,
            learning_rate: 0.05,
            lr_decay_points: vec![30],
            lr_decay_factor: 0.1,
            margin: MarginConfig { m: 4, lambda_start: 1000.0, lambda_min: 5.0, lambda_decay: 0.5 },
            loss_kind: kind,
        }
    }

    fn data() -> LabeledBatch {
        synth_blobs(&SyntheticSpec { k_classes: 3, per_class: 20, dim: 4, angular_spread: 0.3, radius_jitter: 0.2, seed: 2 }).unwrap().batch
    }

    fn model(kind: LossKind) -> ModelState {
        let cfg = EmbedderConfig { layer_widths: vec![4, 8, 3], activation: Activation::Relu, seed: 5 };
        init_model(&cfg, 3, kind).unwrap()
    }

    #[test]
    fn lr_schedule() {
        let c = TrainConfig { lr_decay_points: vec![10, 20], ..tcfg(LossKind::Modified) };
        assert_eq!(learning_rate_at(&c, 0), 0.05);
        assert!((learning_rate_at(&c, 10) - 0.005).abs() < 1e-15);
        assert!((learning_rate_at(&c, 25) - 0.0005).abs() < 1e-15);
    }

    #[test]
    fn zero_lr_keeps_parameters() {
        let cfg = TrainConfig { learning_rate: 0.0, ..tcfg(LossKind::Asoftmax) };
        let s0 = model(LossKind::Asoftmax);
        let (s1, _) = train_step(s0.clone(), &data(), &cfg).unwrap();
        assert_eq!(s1.layers, s0.layers);
        for (a, b) in s1.head.weights().data().iter().zip(s0.head.weights().data()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(s1.iteration, 1);
        assert_eq!(s1.anneal.unwrap().iteration, 1);
    }

    #[test]
    fn classifier_stays_unit() {
        for kind in [LossKind::Modified, LossKind::Asoftmax] {
            let (s, hist) = train(model(kind), &data(), &tcfg(kind)).unwrap();
            assert_eq!(hist.len(), 50);
            assert!(matches!(s.head, ClassifierHead::Angular(_)));
            for n in column_norms(s.head.weights()) {
                assert!((n - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn anneal_only_for_asoftmax() {
        let (s, _) = train(model(LossKind::Modified), &data(), &tcfg(LossKind::Modified)).unwrap();
        assert!(s.anneal.is_none());
        let (s, _) = train(model(LossKind::Asoftmax), &data(), &tcfg(LossKind::Asoftmax)).unwrap();
        let a = s.anneal.unwrap();
        assert_eq!(a.iteration, 50);
        assert!(a.lambda < 1000.0 && a.lambda >= 5.0);
    }

    #[test]
    fn deterministic_runs() {
        let a = train(model(LossKind::Softmax), &data(), &tcfg(LossKind::Softmax)).unwrap();
        let b = train(model(LossKind::Softmax), &data(), &tcfg(LossKind::Softmax)).unwrap();
        assert_eq!(a.1, b.1);
        assert_eq!(a.0, b.0);
    }

    #[test]
    fn head_mismatch_rejected() {
        let err = train_step(model(LossKind::Softmax), &data(), &tcfg(LossKind::Asoftmax)).unwrap_err();
        assert!(matches!(err, EmbedderError::HeadMismatch { .. }));
    }

    #[test]
    fn divergence_reports_context() {
        let cfg = TrainConfig { learning_rate: 1e300, ..tcfg(LossKind::Softmax) };
        let mut s = model(LossKind::Softmax);
        let d = data();
        let err = loop {
            match train_step(s, &d, &cfg) {
                Ok((next, _)) => s = next,
                Err(e) => break e,
            }
        };
        match err {
            EmbedderError::Diverged { lr, .. } => assert_eq!(lr, 1e300),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { lr_decay_points: vec![5, 5], ..tcfg(LossKind::Modified) }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..tcfg(LossKind::Modified) }.validate().is_err());
        assert!(TrainConfig { lr_decay_factor: 1.0, ..tcfg(LossKind::Modified) }.validate().is_err());
        let small = data().select(&[0, 1]);
        assert!(train(model(LossKind::Modified), &small, &tcfg(LossKind::Modified)).is_err());
    }
}
