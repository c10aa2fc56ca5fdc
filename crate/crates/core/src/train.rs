//! Full-batch training: encode, score, loss, backward and optimizer step once
//! per epoch. All randomness comes from one generator seeded by
//! [`TrainConfig::seed`].

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::eval::{evaluate_relations_with, EvalOptions, MetricsReport};
use crate::graph::{KnowledgeGraph, NormCoefficients, Triple};
use crate::loss::{
    entity_loss, entity_loss_grad, relation_loss, sample_negatives, EntityLoss, LossBreakdown,
};
use crate::model::{
    accumulate_bilinear, classifier_logits, classify_backward, encode, encode_backward,
    DecoderForm, ModelParams, ModelShape,
};
use crate::numeric::{sigmoid, softmax_rows, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => Err(Error::Validation(format!(
                "unknown optimizer {other:?} (expected adam or sgd)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub num_epochs: usize,
    pub learning_rate: f64,
    /// Weight of the negative-sample term.
    pub lambda: f64,
    /// Weight of the entity-classification term.
    pub alpha: f64,
    pub negatives: usize,
    pub seed: u64,
    pub decoder_form: DecoderForm,
    pub relational: bool,
    pub optimizer: OptimizerKind,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub entity_loss_enabled: bool,
    /// Validation interval in epochs; 0 disables periodic evaluation.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            num_layers: 2,
            hidden_dim: 32,
            num_epochs: 200,
            learning_rate: 0.01,
            lambda: 1.0,
            alpha: 1.0,
            negatives: 1,
            seed: 42,
            decoder_form: DecoderForm::Full,
            relational: false,
            optimizer: OptimizerKind::Adam,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            entity_loss_enabled: true,
            eval_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Validation(msg.to_string()));
        if self.num_layers < 1 {
            return fail("layers must be at least 1");
        }
        if self.hidden_dim < 1 {
            return fail("dim must be at least 1");
        }
        if self.negatives < 1 {
            return fail("negatives must be at least 1");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return fail("learning rate must be finite and nonnegative");
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return fail("lambda must be finite and nonnegative");
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return fail("alpha must be finite and nonnegative");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return fail("adam betas must lie in [0, 1)");
        }
        if self.adam_eps.is_nan() || self.adam_eps <= 0.0 {
            return fail("adam epsilon must be positive");
        }
        Ok(())
    }

    pub fn model_shape(&self, g: &KnowledgeGraph) -> ModelShape {
        self.model_shape_for(g.num_entities(), g.num_relations(), g.num_classes())
    }

    pub fn model_shape_for(&self, entities: usize, relations: usize, classes: usize) -> ModelShape {
        ModelShape {
            num_entities: entities,
            num_relations: relations,
            num_classes: classes,
            dim: self.hidden_dim,
            num_layers: self.num_layers,
            decoder_form: self.decoder_form,
            relational: self.relational,
        }
    }

    /// `(key, value)` pairs; [`TrainConfig::from_pairs`] inverts this exactly.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("layers", self.num_layers.to_string()),
            ("dim", self.hidden_dim.to_string()),
            ("epochs", self.num_epochs.to_string()),
            ("lr", self.learning_rate.to_string()),
            ("lambda", self.lambda.to_string()),
            ("alpha", self.alpha.to_string()),
            ("negatives", self.negatives.to_string()),
            ("seed", self.seed.to_string()),
            ("decoder", self.decoder_form.to_string()),
            ("relational", self.relational.to_string()),
            ("optimizer", self.optimizer.to_string()),
            ("beta1", self.adam_beta1.to_string()),
            ("beta2", self.adam_beta2.to_string()),
            ("eps", self.adam_eps.to_string()),
            ("entity_loss", self.entity_loss_enabled.to_string()),
            ("eval_every", self.eval_every.to_string()),
        ]
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Validation(format!("bad value {value:?} for {key}")))
        }
        let mut c = TrainConfig::default();
        for (key, value) in pairs {
            match key {
                "layers" => c.num_layers = parse(key, value)?,
                "dim" => c.hidden_dim = parse(key, value)?,
                "epochs" => c.num_epochs = parse(key, value)?,
                "lr" => c.learning_rate = parse(key, value)?,
                "lambda" => c.lambda = parse(key, value)?,
                "alpha" => c.alpha = parse(key, value)?,
                "negatives" => c.negatives = parse(key, value)?,
                "seed" => c.seed = parse(key, value)?,
                "decoder" => c.decoder_form = value.parse()?,
                "relational" => c.relational = parse(key, value)?,
                "optimizer" => c.optimizer = value.parse()?,
                "beta1" => c.adam_beta1 = parse(key, value)?,
                "beta2" => c.adam_beta2 = parse(key, value)?,
                "eps" => c.adam_eps = parse(key, value)?,
                "entity_loss" => c.entity_loss_enabled = parse(key, value)?,
                "eval_every" => c.eval_every = parse(key, value)?,
                other => return Err(Error::Validation(format!("unknown config key {other:?}"))),
            }
        }
        Ok(c)
    }
}

/// The fixed inputs of one loss evaluation.
pub struct Objective<'a> {
    pub graph: &'a KnowledgeGraph,
    pub norms: &'a NormCoefficients,
    pub config: &'a TrainConfig,
}

impl Objective<'_> {
    fn entity_term_on(&self) -> bool {
        self.config.entity_loss_enabled
            && self.graph.labels().is_some_and(|l| l.num_labeled() > 0)
    }

    /// Loss at `params` for the graph's triples and the given negatives.
    pub fn loss(&self, params: &ModelParams, negatives: &[Triple]) -> Result<LossBreakdown> {
        let acts = encode(self.graph, self.norms, params)?;
        let h = acts.last();
        let pos = self.probabilities(params, h, self.graph.triples())?;
        let neg = self.probabilities(params, h, negatives)?;
        let relation = relation_loss(&pos, &neg, self.config.lambda);
        let entity = if self.entity_term_on() {
            let probs = softmax_rows(&classifier_logits(h, params)?);
            entity_loss(&probs, &self.graph.labels().expect("checked").classes)?
        } else {
            EntityLoss { value: 0.0, active: false }
        };
        Ok(LossBreakdown::combine(relation, entity, self.config.alpha))
    }

    /// Loss and its exact gradient with respect to every parameter.
    pub fn loss_and_grad(
        &self,
        params: &ModelParams,
        negatives: &[Triple],
    ) -> Result<(LossBreakdown, ModelParams)> {
        let acts = encode(self.graph, self.norms, params)?;
        let h = acts.last();
        let mut grads = params.zeros_like();
        let mut grad_h = Matrix::zeros(h.rows(), h.cols());

        let positives = self.graph.triples();
        let pos = self.probabilities(params, h, positives)?;
        let neg = self.probabilities(params, h, negatives)?;
        let relation = relation_loss(&pos, &neg, self.config.lambda);

        // d(−log σ(s))/ds = σ(s) − 1 ; d(−log(1 − σ(s)))/ds = σ(s)
        let pos_scale = if positives.is_empty() { 0.0 } else { 1.0 / positives.len() as f64 };
        let neg_scale = if negatives.is_empty() {
            0.0
        } else {
            self.config.lambda / negatives.len() as f64
        };
        let form = params.shape.decoder_form;
        let sides = [(positives, &pos, pos_scale, true), (negatives, &neg, neg_scale, false)];
        for (triples, probs, scale, positive) in sides {
            for (t, &p) in triples.iter().zip(probs.iter()) {
                let grad_logit = if positive { (p - 1.0) * scale } else { p * scale };
                let (hi, hj) = (t.head.0, t.tail.0);
                let mut gi = vec![0.0; h.cols()];
                let mut gj = vec![0.0; h.cols()];
                accumulate_bilinear(
                    grad_logit,
                    h.row(hi),
                    h.row(hj),
                    &params.decoder[t.relation.0],
                    form,
                    &mut gi,
                    &mut gj,
                    &mut grads.decoder[t.relation.0],
                );
                for (o, v) in grad_h.row_mut(hi).iter_mut().zip(&gi) {
                    *o += v;
                }
                for (o, v) in grad_h.row_mut(hj).iter_mut().zip(&gj) {
                    *o += v;
                }
            }
        }

        let entity = if self.entity_term_on() {
            let labels = &self.graph.labels().expect("checked").classes;
            let probs = softmax_rows(&classifier_logits(h, params)?);
            let value = entity_loss(&probs, labels)?;
            let mut grad_logits = entity_loss_grad(&probs, labels)?;
            grad_logits.scale(self.config.alpha);
            let cg = classify_backward(&grad_logits, h, params)?;
            grads.classifier_weight = cg.weight;
            grads.classifier_bias = cg.bias;
            grad_h.add_scaled(1.0, &cg.h_final)?;
            value
        } else {
            EntityLoss { value: 0.0, active: false }
        };

        let (layers, embedding) = encode_backward(self.graph, self.norms, params, &acts, &grad_h)?;
        grads.layers = layers;
        grads.embedding = embedding;
        Ok((LossBreakdown::combine(relation, entity, self.config.alpha), grads))
    }

    fn probabilities(&self, params: &ModelParams, h: &Matrix, triples: &[Triple]) -> Result<Vec<f64>> {
        triples
            .iter()
            .map(|t| {
                if t.head.0 >= h.rows() || t.tail.0 >= h.rows() || t.relation.0 >= params.decoder.len() {
                    return Err(Error::Validation(format!("triple {t} outside the model")));
                }
                crate::model::score_logit(h.row(t.head.0), h.row(t.tail.0), t.relation, params)
                    .map(sigmoid)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// Bias-corrected Adam update of one tensor at step `t` (1-based).
pub fn adam_update(
    param: &mut Matrix,
    grad: &Matrix,
    m: &mut Matrix,
    v: &mut Matrix,
    t: u64,
    hp: &AdamHyper,
) -> Result<()> {
    for other in [grad, &*m, &*v] {
        if other.shape() != param.shape() {
            return Err(Error::shape("adam_step", param.shape(), other.shape()));
        }
    }
    let c1 = 1.0 - hp.beta1.powf(t as f64);
    let c2 = 1.0 - hp.beta2.powf(t as f64);
    let params = param.data_mut().iter_mut();
    let moments = m.data_mut().iter_mut().zip(v.data_mut().iter_mut());
    for ((p, &g), (mi, vi)) in params.zip(grad.data()).zip(moments) {
        *mi = hp.beta1 * *mi + (1.0 - hp.beta1) * g;
        *vi = hp.beta2 * *vi + (1.0 - hp.beta2) * g * g;
        let m_hat = *mi / c1;
        let v_hat = *vi / c2;
        *p -= hp.learning_rate * m_hat / (v_hat.sqrt() + hp.eps);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub first_moment: ModelParams,
    pub second_moment: ModelParams,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            step: 0,
        }
    }
}

fn check_same_layout(params: &ModelParams, grads: &ModelParams) -> Result<()> {
    let (a, b) = (params.tensors(), grads.tensors());
    if a.len() != b.len() {
        return Err(Error::Validation(format!(
            "{} parameter tensors but {} gradient tensors",
            a.len(),
            b.len()
        )));
    }
    for (x, y) in a.iter().zip(&b) {
        if x.shape() != y.shape() {
            return Err(Error::shape("optimizer step", x.shape(), y.shape()));
        }
    }
    Ok(())
}

pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut OptimizerState,
    hp: &AdamHyper,
) -> Result<()> {
    check_same_layout(params, grads)?;
    check_same_layout(params, &state.first_moment)?;
    state.step += 1;
    let t = state.step;
    let firsts = state.first_moment.tensors_mut();
    let seconds = state.second_moment.tensors_mut();
    for (((p, g), m), v) in params.tensors_mut().into_iter().zip(grads.tensors()).zip(firsts).zip(seconds) {
        adam_update(p, g, m, v, t, hp)?;
    }
    Ok(())
}

pub fn sgd_step(params: &mut ModelParams, grads: &ModelParams, learning_rate: f64) -> Result<()> {
    check_same_layout(params, grads)?;
    for (p, g) in params.tensors_mut().into_iter().zip(grads.tensors()) {
        p.add_scaled(-learning_rate, g)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<LossBreakdown>,
    /// `(epoch, report)` pairs, epochs counted from 1.
    pub evals: Vec<(usize, MetricsReport)>,
    /// Negatives emitted after the resampling budget ran out.
    pub exhausted_negatives: usize,
}

/// Step-wise trainer. [`train`] drives it to completion.
pub struct Trainer<'g> {
    graph: &'g KnowledgeGraph,
    norms: NormCoefficients,
    config: TrainConfig,
    params: ModelParams,
    optimizer: OptimizerState,
    rng: ChaCha8Rng,
    epoch: usize,
    last_negatives: Vec<Triple>,
    exhausted: usize,
}

impl<'g> Trainer<'g> {
    pub fn new(graph: &'g KnowledgeGraph, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if graph.num_entities() == 0 {
            return Err(Error::Validation("graph has no entities".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = ModelParams::init(config.model_shape(graph), &mut rng)?;
        Ok(Self {
            norms: graph.norm_coefficients(),
            optimizer: OptimizerState::new(&params),
            graph,
            config,
            params,
            rng,
            epoch: 0,
            last_negatives: Vec::new(),
            exhausted: 0,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn norms(&self) -> &NormCoefficients {
        &self.norms
    }

    /// Negatives drawn for the most recent epoch.
    pub fn last_negatives(&self) -> &[Triple] {
        &self.last_negatives
    }

    pub fn objective(&self) -> Objective<'_> {
        Objective {
            graph: self.graph,
            norms: &self.norms,
            config: &self.config,
        }
    }

    /// Runs one epoch and returns the loss measured before the update.
    pub fn step(&mut self) -> Result<LossBreakdown> {
        self.epoch += 1;
        let batch = sample_negatives(
            self.graph,
            self.graph.triples(),
            self.config.negatives,
            &mut self.rng,
        )?;
        self.exhausted += batch.exhausted;
        self.last_negatives = batch.samples.iter().map(|s| s.triple).collect();

        let objective = Objective {
            graph: self.graph,
            norms: &self.norms,
            config: &self.config,
        };
        let (loss, grads) = objective.loss_and_grad(&self.params, &self.last_negatives)?;
        if let Some(component) = loss.non_finite_component() {
            return Err(Error::NonFinite {
                epoch: self.epoch,
                component: component.to_string(),
            });
        }
        match self.config.optimizer {
            OptimizerKind::Adam => adam_step(
                &mut self.params,
                &grads,
                &mut self.optimizer,
                &AdamHyper {
                    learning_rate: self.config.learning_rate,
                    beta1: self.config.adam_beta1,
                    beta2: self.config.adam_beta2,
                    eps: self.config.adam_eps,
                },
            )?,
            OptimizerKind::Sgd => sgd_step(&mut self.params, &grads, self.config.learning_rate)?,
        }
        if !self.params.is_finite() {
            return Err(Error::NonFinite {
                epoch: self.epoch,
                component: "parameter".into(),
            });
        }
        Ok(loss)
    }
}

/// Trains for `config.num_epochs` epochs.
pub fn train(g: &KnowledgeGraph, config: &TrainConfig) -> Result<(ModelParams, TrainHistory)> {
    train_with_validation(g, config, &[], |_, _| {})
}

/// Like [`train`], evaluating on `valid` every `config.eval_every` epochs.
/// `on_epoch` sees each epoch number and its loss.
pub fn train_with_validation(
    g: &KnowledgeGraph,
    config: &TrainConfig,
    valid: &[Triple],
    mut on_epoch: impl FnMut(usize, &LossBreakdown),
) -> Result<(ModelParams, TrainHistory)> {
    let mut trainer = Trainer::new(g, config.clone())?;
    let mut history = TrainHistory::default();
    for _ in 0..config.num_epochs {
        let loss = trainer.step()?;
        on_epoch(trainer.epoch(), &loss);
        history.epochs.push(loss);
        if config.eval_every > 0 && !valid.is_empty() && trainer.epoch() % config.eval_every == 0 {
            let h = trainer.params().embed(g, trainer.norms())?;
            let opts = EvalOptions {
                seed: config.seed,
                ..EvalOptions::default()
            };
            let report = evaluate_relations_with(trainer.params(), g, &h, valid, &opts)?;
            history.evals.push((trainer.epoch(), report));
        }
    }
    history.exhausted_negatives = trainer.exhausted;
    Ok((trainer.into_params(), history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::EntityLabels;

    fn labeled_graph() -> KnowledgeGraph {
        let triples = [
            Triple::new(0, 0, 1),
            Triple::new(1, 1, 2),
            Triple::new(2, 0, 3),
            Triple::new(3, 1, 4),
            Triple::new(4, 0, 0),
        ];
        let labels = EntityLabels {
            num_classes: 2,
            classes: vec![Some(0), Some(1), None, Some(1), Some(0)],
        };
        KnowledgeGraph::build(&triples, 5, 2, Some(labels)).unwrap()
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            hidden_dim: 4,
            num_epochs: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn adam_single_scalar_step() {
        let hp = AdamHyper { learning_rate: 0.1, beta1: 0.9, beta2: 0.999, eps: 1e-8 };
        let mut p = Matrix::row_vector(&[0.0]);
        let (mut m, mut v) = (Matrix::zeros(1, 1), Matrix::zeros(1, 1));
        adam_update(&mut p, &Matrix::row_vector(&[1.0]), &mut m, &mut v, 1, &hp).unwrap();
        // m̂ = 1, v̂ = 1 after bias correction
        assert!((p.get(0, 0) + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
        assert!((m.get(0, 0) - 0.1).abs() < 1e-15);
        assert!((v.get(0, 0) - 0.001).abs() < 1e-15);
    }

    #[test]
    fn adam_zero_gradient_leaves_fresh_params_unchanged() {
        let hp = AdamHyper { learning_rate: 0.1, beta1: 0.9, beta2: 0.999, eps: 1e-8 };
        let mut p = Matrix::row_vector(&[0.3, -0.7]);
        let (mut m, mut v) = (Matrix::zeros(1, 2), Matrix::zeros(1, 2));
        adam_update(&mut p, &Matrix::zeros(1, 2), &mut m, &mut v, 1, &hp).unwrap();
        assert_eq!(p, Matrix::row_vector(&[0.3, -0.7]));

        // nonzero moments decay under a zero gradient
        let mut m = Matrix::row_vector(&[1.0, 1.0]);
        let mut v = Matrix::row_vector(&[1.0, 1.0]);
        adam_update(&mut p, &Matrix::zeros(1, 2), &mut m, &mut v, 2, &hp).unwrap();
        assert_eq!(m, Matrix::row_vector(&[0.9, 0.9]));
        assert_eq!(v, Matrix::row_vector(&[0.999, 0.999]));
    }

    #[test]
    fn adam_moves_against_constant_gradient() {
        let hp = AdamHyper { learning_rate: 0.01, beta1: 0.9, beta2: 0.999, eps: 1e-8 };
        let mut p = Matrix::row_vector(&[1.0]);
        let (mut m, mut v) = (Matrix::zeros(1, 1), Matrix::zeros(1, 1));
        let g = Matrix::row_vector(&[2.5]);
        adam_update(&mut p, &g, &mut m, &mut v, 1, &hp).unwrap();
        let after_one = p.get(0, 0);
        adam_update(&mut p, &g, &mut m, &mut v, 2, &hp).unwrap();
        assert!(after_one < 1.0 && p.get(0, 0) < after_one);
    }

    #[test]
    fn adam_rejects_shape_mismatch() {
        let hp = AdamHyper { learning_rate: 0.1, beta1: 0.9, beta2: 0.999, eps: 1e-8 };
        let mut p = Matrix::zeros(1, 2);
        let (mut m, mut v) = (Matrix::zeros(1, 2), Matrix::zeros(1, 2));
        assert!(adam_update(&mut p, &Matrix::zeros(2, 1), &mut m, &mut v, 1, &hp).is_err());
    }

    #[test]
    fn config_pairs_round_trip() {
        let c = TrainConfig {
            learning_rate: 0.0123456789,
            decoder_form: DecoderForm::Diagonal,
            relational: true,
            optimizer: OptimizerKind::Sgd,
            ..TrainConfig::default()
        };
        let pairs = c.to_pairs();
        let back = TrainConfig::from_pairs(pairs.iter().map(|(k, v)| (*k, v.as_str()))).unwrap();
        assert_eq!(back, c);
        assert!(TrainConfig::from_pairs([("bogus", "1")]).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { num_layers: 0, ..TrainConfig::default() },
            TrainConfig { hidden_dim: 0, ..TrainConfig::default() },
            TrainConfig { negatives: 0, ..TrainConfig::default() },
            TrainConfig { lambda: -1.0, ..TrainConfig::default() },
            TrainConfig { alpha: f64::NAN, ..TrainConfig::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let g = labeled_graph();
        let config = TrainConfig {
            optimizer: OptimizerKind::Sgd,
            learning_rate: 0.0,
            ..small_config()
        };
        let initial = Trainer::new(&g, config.clone()).unwrap().params().clone();
        let (params, history) = train(&g, &config).unwrap();
        assert_eq!(params, initial);
        assert_eq!(history.epochs.len(), 5);
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let g = labeled_graph();
        let (p1, h1) = train(&g, &small_config()).unwrap();
        let (p2, h2) = train(&g, &small_config()).unwrap();
        assert_eq!(h1, h2);
        for (a, b) in p1.tensors().iter().zip(p2.tensors()) {
            let bits = |m: &Matrix| m.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
    }

    #[test]
    fn alpha_zero_leaves_classifier_untouched() {
        let g = labeled_graph();
        let config = TrainConfig { alpha: 0.0, ..small_config() };
        let initial = Trainer::new(&g, config.clone()).unwrap().params().clone();
        let (params, _) = train(&g, &config).unwrap();
        assert_eq!(params.classifier_weight, initial.classifier_weight);
        assert_eq!(params.classifier_bias, initial.classifier_bias);
        assert_ne!(params.embedding, initial.embedding);

        // unlabeled graph: entity term absent entirely
        let unlabeled = g.with_labels(None).unwrap();
        let trainer = Trainer::new(&unlabeled, small_config()).unwrap();
        let loss = trainer.objective().loss(trainer.params(), &[]).unwrap();
        assert!(!loss.entity_active);
        assert_eq!(loss.total, loss.relation_pos + loss.relation_neg);
    }

    #[test]
    fn recorded_loss_matches_recomputation() {
        let g = labeled_graph();
        let mut trainer = Trainer::new(&g, small_config()).unwrap();
        for _ in 0..4 {
            let before = trainer.params().clone();
            let recorded = trainer.step().unwrap();
            let again = trainer.objective().loss(&before, trainer.last_negatives()).unwrap();
            assert!((recorded.total - again.total).abs() < 1e-9);
            assert!((recorded.entity - again.entity).abs() < 1e-9);
        }
    }

    #[test]
    fn periodic_validation_is_recorded() {
        let g = labeled_graph();
        let config = TrainConfig { eval_every: 2, ..small_config() };
        let valid = [Triple::new(0, 1, 3), Triple::new(2, 0, 4)];
        let (_, history) = train_with_validation(&g, &config, &valid, |_, _| {}).unwrap();
        let epochs: Vec<usize> = history.evals.iter().map(|(e, _)| *e).collect();
        assert_eq!(epochs, vec![2, 4]);
    }
}
