//! Graph-convolutional encoder, softmax entity classifier and bilinear
//! relation decoder, each with a hand-written backward pass.
//!
//! Embeddings are stored as rows, so a layer computes
//!
//! ```text
//! H' = act( Σ_j (1/c_ij) · H_j · W  +  H_i · W0 )
//! ```
//!
//! where `act` is ReLU on hidden layers and the identity on the last layer.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{EntityId, KnowledgeGraph, NormCoefficients, RelationId};
use crate::numeric::{matmul, relu, relu_backward, sigmoid, softmax_rows, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DecoderForm {
    /// One dense `d × d` matrix per relation.
    #[default]
    Full,
    /// One diagonal per relation, stored as a `1 × d` row.
    Diagonal,
}

impl fmt::Display for DecoderForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecoderForm::Full => "full",
            DecoderForm::Diagonal => "diag",
        })
    }
}

impl FromStr for DecoderForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(DecoderForm::Full),
            "diag" | "diagonal" => Ok(DecoderForm::Diagonal),
            other => Err(Error::Validation(format!(
                "unknown decoder form {other:?} (expected full or diag)"
            ))),
        }
    }
}

/// Everything needed to allocate a [`ModelParams`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelShape {
    pub num_entities: usize,
    pub num_relations: usize,
    pub num_classes: usize,
    pub dim: usize,
    pub num_layers: usize,
    pub decoder_form: DecoderForm,
    pub relational: bool,
}

/// Neighbor-aggregation weights of one layer.
#[derive(Debug, Clone, PartialEq)]
pub enum NeighborWeights {
    Shared(Matrix),
    PerRelation(Vec<Matrix>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnLayer {
    pub neighbor: NeighborWeights,
    pub self_loop: Matrix,
}

impl GcnLayer {
    fn zeros(d_in: usize, d_out: usize, relational: Option<usize>) -> Self {
        let neighbor = match relational {
            Some(r) => NeighborWeights::PerRelation(vec![Matrix::zeros(d_in, d_out); r]),
            None => NeighborWeights::Shared(Matrix::zeros(d_in, d_out)),
        };
        Self {
            neighbor,
            self_loop: Matrix::zeros(d_in, d_out),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.self_loop.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.self_loop.cols()
    }
}

/// All trainable parameters. Gradients and optimizer moments reuse this type.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub shape: ModelShape,
    /// Initial node features, one row per entity.
    pub embedding: Matrix,
    pub layers: Vec<GcnLayer>,
    /// `d × C`
    pub classifier_weight: Matrix,
    /// `1 × C`
    pub classifier_bias: Matrix,
    /// One block per relation: `d × d` (full) or `1 × d` (diagonal).
    pub decoder: Vec<Matrix>,
}

impl ModelParams {
    pub fn zeros(shape: ModelShape) -> Result<Self> {
        if shape.num_layers == 0 {
            return Err(Error::Validation("model needs at least one layer".into()));
        }
        if shape.dim == 0 {
            return Err(Error::Validation("hidden dimension must be positive".into()));
        }
        let d = shape.dim;
        let relational = shape.relational.then_some(shape.num_relations);
        let block = match shape.decoder_form {
            DecoderForm::Full => Matrix::zeros(d, d),
            DecoderForm::Diagonal => Matrix::zeros(1, d),
        };
        Ok(Self {
            shape,
            embedding: Matrix::zeros(shape.num_entities, d),
            layers: (0..shape.num_layers)
                .map(|_| GcnLayer::zeros(d, d, relational))
                .collect(),
            classifier_weight: Matrix::zeros(d, shape.num_classes),
            classifier_bias: Matrix::zeros(1, shape.num_classes),
            decoder: vec![block; shape.num_relations],
        })
    }

    /// Glorot-uniform weights, zero classifier bias.
    pub fn init<R: Rng + ?Sized>(shape: ModelShape, rng: &mut R) -> Result<Self> {
        let mut params = Self::zeros(shape)?;
        let names = params.tensor_names();
        for (name, m) in names.iter().zip(params.tensors_mut()) {
            if name == "classifier.bias" {
                continue;
            }
            glorot_uniform(m, rng);
        }
        Ok(params)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.shape).expect("shape already validated")
    }

    /// Stable, ordered names of every tensor, aligned with [`Self::tensors`].
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = vec!["embedding".to_string()];
        for (l, layer) in self.layers.iter().enumerate() {
            match &layer.neighbor {
                NeighborWeights::Shared(_) => names.push(format!("layer{l}.neighbor")),
                NeighborWeights::PerRelation(ws) => {
                    names.extend((0..ws.len()).map(|r| format!("layer{l}.neighbor.r{r}")))
                }
            }
            names.push(format!("layer{l}.self"));
        }
        names.push("classifier.weight".into());
        names.push("classifier.bias".into());
        names.extend((0..self.decoder.len()).map(|r| format!("decoder.r{r}")));
        names
    }

    pub fn tensors(&self) -> Vec<&Matrix> {
        let mut out = vec![&self.embedding];
        for layer in &self.layers {
            match &layer.neighbor {
                NeighborWeights::Shared(w) => out.push(w),
                NeighborWeights::PerRelation(ws) => out.extend(ws.iter()),
            }
            out.push(&layer.self_loop);
        }
        out.push(&self.classifier_weight);
        out.push(&self.classifier_bias);
        out.extend(self.decoder.iter());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = vec![&mut self.embedding];
        for layer in &mut self.layers {
            match &mut layer.neighbor {
                NeighborWeights::Shared(w) => out.push(w),
                NeighborWeights::PerRelation(ws) => out.extend(ws.iter_mut()),
            }
            out.push(&mut layer.self_loop);
        }
        out.push(&mut self.classifier_weight);
        out.push(&mut self.classifier_bias);
        out.extend(self.decoder.iter_mut());
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|m| m.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|m| m.is_finite())
    }

    /// Checks the parameters against a graph before any forward pass.
    pub fn check_graph(&self, g: &KnowledgeGraph) -> Result<()> {
        if self.embedding.rows() != g.num_entities() {
            return Err(Error::Validation(format!(
                "model has {} entity rows, graph has {} entities",
                self.embedding.rows(),
                g.num_entities()
            )));
        }
        if self.decoder.len() != g.num_relations() {
            return Err(Error::Validation(format!(
                "model has {} relation blocks, graph has {} relations",
                self.decoder.len(),
                g.num_relations()
            )));
        }
        Ok(())
    }

    /// Final-layer embeddings for every entity.
    pub fn embed(&self, g: &KnowledgeGraph, norms: &NormCoefficients) -> Result<Matrix> {
        let mut acts = encode(g, norms, self)?;
        Ok(acts.layers.pop().expect("at least one layer"))
    }
}

fn glorot_uniform<R: Rng + ?Sized>(m: &mut Matrix, rng: &mut R) {
    let (fan_in, fan_out) = m.shape();
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for x in m.data_mut() {
        *x = rng.gen_range(-limit..limit);
    }
}

/// Activations of every layer; index 0 is the input embedding table and the
/// last entry is the final representation.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeEmbeddings {
    pub layers: Vec<Matrix>,
}

impl NodeEmbeddings {
    pub fn last(&self) -> &Matrix {
        self.layers.last().expect("non-empty")
    }
}

/// `Σ_j h_j / c_ij`, split by relation when `per_relation` is set.
fn aggregate(
    g: &KnowledgeGraph,
    norms: &NormCoefficients,
    h: &Matrix,
    per_relation: bool,
) -> Vec<Matrix> {
    let buckets = if per_relation { g.num_relations() } else { 1 };
    let mut out = vec![Matrix::zeros(h.rows(), h.cols()); buckets];
    for i in 0..g.num_entities() {
        let id = EntityId(i);
        for (n, &c) in g.neighbors(id).iter().zip(norms.for_entity(id)) {
            let target = if per_relation { n.relation.0 } else { 0 };
            let src = h.row(n.entity.0);
            for (o, &v) in out[target].row_mut(i).iter_mut().zip(src) {
                *o += v / c;
            }
        }
    }
    out
}

fn check_layer(l: usize, layer: &GcnLayer, h: &Matrix, g: &KnowledgeGraph) -> Result<()> {
    if layer.input_dim() != h.cols() {
        return Err(Error::shape(
            format!("encoder layer {l}"),
            h.shape(),
            layer.self_loop.shape(),
        ));
    }
    match &layer.neighbor {
        NeighborWeights::Shared(w) if w.shape() != layer.self_loop.shape() => Err(Error::shape(
            format!("encoder layer {l} neighbor weight"),
            w.shape(),
            layer.self_loop.shape(),
        )),
        NeighborWeights::PerRelation(ws) if ws.len() != g.num_relations() => {
            Err(Error::Validation(format!(
                "encoder layer {l} has {} relation weights, graph has {} relations",
                ws.len(),
                g.num_relations()
            )))
        }
        NeighborWeights::PerRelation(ws) => match ws.iter().find(|w| w.shape() != layer.self_loop.shape()) {
            Some(w) => Err(Error::shape(
                format!("encoder layer {l} relation weight"),
                w.shape(),
                layer.self_loop.shape(),
            )),
            None => Ok(()),
        },
        _ => Ok(()),
    }
}

/// Forward pass of the encoder, keeping every activation for the backward pass.
pub fn encode(
    g: &KnowledgeGraph,
    norms: &NormCoefficients,
    params: &ModelParams,
) -> Result<NodeEmbeddings> {
    params.check_graph(g)?;
    let last = params.layers.len() - 1;
    let mut layers = Vec::with_capacity(params.layers.len() + 1);
    layers.push(params.embedding.clone());
    for (l, layer) in params.layers.iter().enumerate() {
        let h = &layers[l];
        check_layer(l, layer, h, g)?;
        let mut z = matmul(h, &layer.self_loop)?;
        match &layer.neighbor {
            NeighborWeights::Shared(w) => {
                let agg = aggregate(g, norms, h, false);
                z.add_scaled(1.0, &matmul(&agg[0], w)?)?;
            }
            NeighborWeights::PerRelation(ws) => {
                for (agg, w) in aggregate(g, norms, h, true).iter().zip(ws) {
                    z.add_scaled(1.0, &matmul(agg, w)?)?;
                }
            }
        }
        layers.push(if l == last { z } else { relu(&z) });
    }
    Ok(NodeEmbeddings { layers })
}

/// Adjoint of [`encode`]. Given `∂loss/∂H^(L)`, returns gradients for every
/// layer (same layout as `params.layers`) and for the embedding table.
pub fn encode_backward(
    g: &KnowledgeGraph,
    norms: &NormCoefficients,
    params: &ModelParams,
    acts: &NodeEmbeddings,
    grad_final: &Matrix,
) -> Result<(Vec<GcnLayer>, Matrix)> {
    if acts.layers.len() != params.layers.len() + 1 {
        return Err(Error::Validation(format!(
            "{} activation tables for {} layers",
            acts.layers.len(),
            params.layers.len()
        )));
    }
    if grad_final.shape() != acts.last().shape() {
        return Err(Error::shape(
            "encode_backward grad_final",
            grad_final.shape(),
            acts.last().shape(),
        ));
    }
    let last = params.layers.len() - 1;
    let mut layer_grads: Vec<GcnLayer> = Vec::with_capacity(params.layers.len());
    let mut grad = grad_final.clone();

    for l in (0..params.layers.len()).rev() {
        let layer = &params.layers[l];
        let input = &acts.layers[l];
        let grad_z = if l == last {
            grad
        } else {
            relu_backward(&grad, &acts.layers[l + 1])?
        };
        let input_t = input.transpose();

        let self_grad = matmul(&input_t, &grad_z)?;
        let mut grad_input = matmul(&grad_z, &layer.self_loop.transpose())?;

        let neighbor_grad = match &layer.neighbor {
            NeighborWeights::Shared(_) => {
                let agg = aggregate(g, norms, input, false);
                NeighborWeights::Shared(matmul(&agg[0].transpose(), &grad_z)?)
            }
            NeighborWeights::PerRelation(_) => NeighborWeights::PerRelation(
                aggregate(g, norms, input, true)
                    .iter()
                    .map(|agg| matmul(&agg.transpose(), &grad_z))
                    .collect::<Result<_>>()?,
            ),
        };

        // Scatter ∂Z_i · Wᵀ back onto every neighbor j of i, scaled by 1/c_ij.
        let projected: Vec<Matrix> = match &layer.neighbor {
            NeighborWeights::Shared(w) => vec![matmul(&grad_z, &w.transpose())?],
            NeighborWeights::PerRelation(ws) => ws
                .iter()
                .map(|w| matmul(&grad_z, &w.transpose()))
                .collect::<Result<_>>()?,
        };
        for i in 0..g.num_entities() {
            let id = EntityId(i);
            for (n, &c) in g.neighbors(id).iter().zip(norms.for_entity(id)) {
                let p = match &layer.neighbor {
                    NeighborWeights::Shared(_) => &projected[0],
                    NeighborWeights::PerRelation(_) => &projected[n.relation.0],
                };
                let src = p.row(i);
                for (o, &v) in grad_input.row_mut(n.entity.0).iter_mut().zip(src) {
                    *o += v / c;
                }
            }
        }

        layer_grads.push(GcnLayer {
            neighbor: neighbor_grad,
            self_loop: self_grad,
        });
        grad = grad_input;
    }
    layer_grads.reverse();
    Ok((layer_grads, grad))
}

/// `H · W_c + b_c`, one row of logits per entity.
pub fn classifier_logits(h_final: &Matrix, params: &ModelParams) -> Result<Matrix> {
    if h_final.cols() != params.classifier_weight.rows() {
        return Err(Error::shape(
            "classify",
            h_final.shape(),
            params.classifier_weight.shape(),
        ));
    }
    let mut logits = matmul(h_final, &params.classifier_weight)?;
    let bias = params.classifier_bias.row(0);
    for r in 0..logits.rows() {
        for (z, b) in logits.row_mut(r).iter_mut().zip(bias) {
            *z += b;
        }
    }
    Ok(logits)
}

/// Row-stochastic class probabilities.
pub fn classify(h_final: &Matrix, params: &ModelParams) -> Result<Matrix> {
    Ok(softmax_rows(&classifier_logits(h_final, params)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierGrads {
    pub weight: Matrix,
    pub bias: Matrix,
    pub h_final: Matrix,
}

/// Adjoint of [`classifier_logits`] given `∂loss/∂logits`.
///
/// For mean softmax cross-entropy the logit gradient is `(p − onehot) / n`;
/// see [`crate::loss::entity_loss_grad`].
pub fn classify_backward(
    grad_logits: &Matrix,
    h_final: &Matrix,
    params: &ModelParams,
) -> Result<ClassifierGrads> {
    let expected = (h_final.rows(), params.classifier_weight.cols());
    if grad_logits.shape() != expected {
        return Err(Error::shape(
            "classify_backward",
            grad_logits.shape(),
            expected,
        ));
    }
    let weight = matmul(&h_final.transpose(), grad_logits)?;
    let mut bias = Matrix::zeros(1, grad_logits.cols());
    for r in 0..grad_logits.rows() {
        for (b, g) in bias.row_mut(0).iter_mut().zip(grad_logits.row(r)) {
            *b += g;
        }
    }
    let h = matmul(grad_logits, &params.classifier_weight.transpose())?;
    Ok(ClassifierGrads {
        weight,
        bias,
        h_final: h,
    })
}

fn decoder_block(params: &ModelParams, r: RelationId, dim: usize) -> Result<&Matrix> {
    let block = params.decoder.get(r.0).ok_or_else(|| {
        Error::Validation(format!(
            "relation {} outside 0..{}",
            r.0,
            params.decoder.len()
        ))
    })?;
    let expected = match params.shape.decoder_form {
        DecoderForm::Full => (dim, dim),
        DecoderForm::Diagonal => (1, dim),
    };
    if block.shape() != expected {
        return Err(Error::shape("score_relation", block.shape(), expected));
    }
    Ok(block)
}

/// Bilinear logit `h_iᵀ R_r h_j` (or `Σ_k h_i[k]·diag_r[k]·h_j[k]`).
pub fn score_logit(h_i: &[f64], h_j: &[f64], r: RelationId, params: &ModelParams) -> Result<f64> {
    if h_i.len() != h_j.len() {
        return Err(Error::shape("score_relation", (1, h_i.len()), (1, h_j.len())));
    }
    let d = h_i.len();
    let block = decoder_block(params, r, d)?;
    Ok(match params.shape.decoder_form {
        DecoderForm::Full => (0..d)
            .map(|a| h_i[a] * block.row(a).iter().zip(h_j).map(|(x, y)| x * y).sum::<f64>())
            .sum(),
        DecoderForm::Diagonal => (0..d).map(|k| h_i[k] * block.get(0, k) * h_j[k]).sum(),
    })
}

/// Probability that `(i, r, j)` holds.
pub fn score_relation(h_i: &[f64], h_j: &[f64], r: RelationId, params: &ModelParams) -> Result<f64> {
    score_logit(h_i, h_j, r, params).map(sigmoid)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreGrads {
    pub head: Vec<f64>,
    pub tail: Vec<f64>,
    /// Same shape as the relation's decoder block.
    pub block: Matrix,
}

/// Adjoint of [`score_logit`] given `∂loss/∂logit`.
pub fn bilinear_backward(
    grad_logit: f64,
    h_i: &[f64],
    h_j: &[f64],
    r: RelationId,
    params: &ModelParams,
) -> Result<ScoreGrads> {
    let d = h_i.len();
    if h_j.len() != d {
        return Err(Error::shape("score_backward", (1, d), (1, h_j.len())));
    }
    let block = decoder_block(params, r, d)?;
    let mut head = vec![0.0; d];
    let mut tail = vec![0.0; d];
    let mut grad_block = Matrix::zeros(block.rows(), block.cols());
    accumulate_bilinear(
        grad_logit,
        h_i,
        h_j,
        block,
        params.shape.decoder_form,
        &mut head,
        &mut tail,
        &mut grad_block,
    );
    Ok(ScoreGrads {
        head,
        tail,
        block: grad_block,
    })
}

/// Adjoint of [`score_relation`] given `∂loss/∂probability`.
pub fn score_backward(
    grad_prob: f64,
    h_i: &[f64],
    h_j: &[f64],
    r: RelationId,
    params: &ModelParams,
) -> Result<ScoreGrads> {
    let p = score_relation(h_i, h_j, r, params)?;
    bilinear_backward(grad_prob * p * (1.0 - p), h_i, h_j, r, params)
}

/// Adds the logit adjoint into caller-owned buffers; the training loop uses
/// this directly to avoid per-triple allocation.
#[allow(clippy::too_many_arguments)]
pub(crate) fn accumulate_bilinear(
    grad_logit: f64,
    h_i: &[f64],
    h_j: &[f64],
    block: &Matrix,
    form: DecoderForm,
    grad_head: &mut [f64],
    grad_tail: &mut [f64],
    grad_block: &mut Matrix,
) {
    if grad_logit == 0.0 {
        return;
    }
    let d = h_i.len();
    match form {
        DecoderForm::Full => {
            for a in 0..d {
                let row = block.row(a);
                let mut r_hj = 0.0;
                for b in 0..d {
                    r_hj += row[b] * h_j[b];
                    grad_tail[b] += grad_logit * h_i[a] * row[b];
                }
                grad_head[a] += grad_logit * r_hj;
                let scaled = grad_logit * h_i[a];
                for (g, &y) in grad_block.row_mut(a).iter_mut().zip(h_j) {
                    *g += scaled * y;
                }
            }
        }
        DecoderForm::Diagonal => {
            let diag = block.row(0);
            let gb = grad_block.row_mut(0);
            for k in 0..d {
                grad_head[k] += grad_logit * diag[k] * h_j[k];
                grad_tail[k] += grad_logit * diag[k] * h_i[k];
                gb[k] += grad_logit * h_i[k] * h_j[k];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{KnowledgeGraph, Triple};
    use crate::testutil::{central_diff, rel_err};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn shape(n: usize, r: usize, c: usize, d: usize, l: usize) -> ModelShape {
        ModelShape {
            num_entities: n,
            num_relations: r,
            num_classes: c,
            dim: d,
            num_layers: l,
            decoder_form: DecoderForm::Full,
            relational: false,
        }
    }

    fn set_shared(layer: &mut GcnLayer, w: Matrix) {
        layer.neighbor = NeighborWeights::Shared(w);
    }

    #[test]
    fn two_node_hand_evaluation() {
        let g = KnowledgeGraph::build(&[Triple::new(0, 0, 1)], 2, 1, None).unwrap();
        let mut p = ModelParams::zeros(shape(2, 1, 0, 1, 1)).unwrap();
        p.embedding = Matrix::from_rows(&[[1.0], [2.0]]);
        set_shared(&mut p.layers[0], Matrix::from_rows(&[[1.0]]));
        let out = encode(&g, &g.norm_coefficients(), &p).unwrap();
        // node0 gets h1/c = 2/2, node1 gets h0/c = 1/2
        assert_eq!(out.last(), &Matrix::from_rows(&[[1.0], [0.5]]));
    }

    #[test]
    fn isolated_node_with_identity_self_weight() {
        let g = KnowledgeGraph::build(&[], 1, 1, None).unwrap();
        let mut p = ModelParams::zeros(shape(1, 1, 0, 2, 1)).unwrap();
        p.embedding = Matrix::from_rows(&[[-1.0, 3.0]]);
        p.layers[0].self_loop = Matrix::identity(2);
        set_shared(&mut p.layers[0], Matrix::from_rows(&[[5.0, 5.0], [5.0, 5.0]]));
        let out = encode(&g, &g.norm_coefficients(), &p).unwrap();
        // single layer is the linear output layer
        assert_eq!(out.last(), &p.embedding);
        // as a hidden layer the ReLU applies
        let mut p2 = ModelParams::zeros(shape(1, 1, 0, 2, 2)).unwrap();
        p2.embedding = p.embedding.clone();
        p2.layers[0].self_loop = Matrix::identity(2);
        let out2 = encode(&g, &g.norm_coefficients(), &p2).unwrap();
        assert_eq!(out2.layers[1], Matrix::from_rows(&[[0.0, 3.0]]));
    }

    #[test]
    fn zero_weights_give_zero_embeddings() {
        let g = KnowledgeGraph::build(&[Triple::new(0, 0, 1), Triple::new(1, 1, 2)], 3, 2, None)
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = ModelParams::init(shape(3, 2, 0, 3, 2), &mut rng).unwrap();
        for layer in &mut p.layers {
            *layer = GcnLayer::zeros(3, 3, None);
        }
        let out = encode(&g, &g.norm_coefficients(), &p).unwrap();
        for m in &out.layers[1..] {
            assert_eq!(m, &Matrix::zeros(3, 3));
        }
    }

    #[test]
    fn encode_rejects_mismatched_params() {
        let g = KnowledgeGraph::build(&[Triple::new(0, 0, 1)], 2, 1, None).unwrap();
        let p = ModelParams::zeros(shape(3, 1, 0, 2, 1)).unwrap();
        assert!(encode(&g, &g.norm_coefficients(), &p).is_err());
        let mut p = ModelParams::zeros(shape(2, 1, 0, 2, 2)).unwrap();
        p.layers[1].self_loop = Matrix::zeros(3, 2);
        let err = encode(&g, &g.norm_coefficients(), &p).unwrap_err();
        assert!(err.to_string().contains("layer 1"), "{err}");
    }

    #[test]
    fn encode_backward_zero_cotangent() {
        let g = KnowledgeGraph::build(&[Triple::new(0, 0, 1), Triple::new(2, 0, 1)], 3, 1, None)
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = ModelParams::init(shape(3, 1, 0, 2, 2), &mut rng).unwrap();
        let norms = g.norm_coefficients();
        let acts = encode(&g, &norms, &p).unwrap();
        let (layers, emb) = encode_backward(&g, &norms, &p, &acts, &Matrix::zeros(3, 2)).unwrap();
        assert_eq!(emb, Matrix::zeros(3, 2));
        for l in layers {
            assert_eq!(l, GcnLayer::zeros(2, 2, None));
        }
    }

    #[test]
    fn single_node_self_weight_adjoint() {
        let g = KnowledgeGraph::build(&[], 1, 1, None).unwrap();
        let mut p = ModelParams::zeros(shape(1, 1, 0, 3, 1)).unwrap();
        p.embedding = Matrix::from_rows(&[[0.5, -1.0, 2.0]]);
        let norms = g.norm_coefficients();
        let acts = encode(&g, &norms, &p).unwrap();
        let grad_final = Matrix::from_rows(&[[1.0, 2.0, -3.0]]);
        let (layers, _) = encode_backward(&g, &norms, &p, &acts, &grad_final).unwrap();
        // outer product h0 ⊗ grad_final
        let mut expected = Matrix::zeros(3, 3);
        for a in 0..3 {
            for b in 0..3 {
                expected.set(a, b, p.embedding.get(0, a) * grad_final.get(0, b));
            }
        }
        assert_eq!(layers[0].self_loop, expected);
    }

    fn encoder_fd_check(relational: bool) {
        let g = KnowledgeGraph::build(
            &[
                Triple::new(0, 0, 1),
                Triple::new(1, 1, 2),
                Triple::new(2, 0, 3),
                Triple::new(3, 1, 0),
                Triple::new(0, 1, 2),
            ],
            4,
            2,
            None,
        )
        .unwrap();
        let norms = g.norm_coefficients();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut s = shape(4, 2, 0, 3, 2);
        s.relational = relational;
        let p = ModelParams::init(s, &mut rng).unwrap();
        let mut weights = Matrix::zeros(4, 3);
        for x in weights.data_mut() {
            *x = rng.gen_range(-1.0..1.0);
        }
        let objective = |params: &ModelParams| -> f64 {
            let h = encode(&g, &norms, params).unwrap();
            crate::numeric::dot(h.last().data(), weights.data())
        };
        let acts = encode(&g, &norms, &p).unwrap();
        let (layers, emb) = encode_backward(&g, &norms, &p, &acts, &weights).unwrap();
        let mut analytic = p.zeros_like();
        analytic.layers = layers;
        analytic.embedding = emb;

        let names = p.tensor_names();
        for (k, (name, grad)) in names.iter().zip(analytic.tensors()).enumerate() {
            if name.starts_with("classifier") || name.starts_with("decoder") {
                continue;
            }
            let base = p.tensors()[k].data().to_vec();
            let numeric = central_diff(&base, 1e-5, |x| {
                let mut q = p.clone();
                q.tensors_mut()[k].data_mut().copy_from_slice(x);
                objective(&q)
            });
            for (a, n) in grad.data().iter().zip(&numeric) {
                assert!(rel_err(*a, *n) < 1e-4, "{name}: {a} vs {n}");
            }
        }
    }

    #[test]
    fn encode_backward_matches_finite_differences() {
        encoder_fd_check(false);
    }

    #[test]
    fn relational_encode_backward_matches_finite_differences() {
        encoder_fd_check(true);
    }

    #[test]
    fn classify_examples() {
        let p = ModelParams::zeros(shape(2, 1, 3, 2, 1)).unwrap();
        let h = Matrix::from_rows(&[[1.0, 2.0], [-3.0, 0.5]]);
        let probs = classify(&h, &p).unwrap();
        for x in probs.data() {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }

        let mut p = ModelParams::zeros(shape(1, 1, 2, 1, 1)).unwrap();
        p.classifier_weight = Matrix::from_rows(&[[1.0, -1.0]]);
        let probs = classify(&Matrix::from_rows(&[[2.0]]), &p).unwrap();
        let e4 = (4.0f64).exp();
        assert!((probs.get(0, 0) - e4 / (e4 + 1.0)).abs() < 1e-12);
        assert!((probs.get(0, 0) - 0.982).abs() < 1e-3);

        let mut shifted = p.clone();
        shifted.classifier_bias = Matrix::from_rows(&[[7.5, 7.5]]);
        let probs2 = classify(&Matrix::from_rows(&[[2.0]]), &shifted).unwrap();
        for (a, b) in probs.data().iter().zip(probs2.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn classify_rejects_wrong_width() {
        let p = ModelParams::zeros(shape(2, 1, 3, 2, 1)).unwrap();
        assert!(classify(&Matrix::zeros(2, 3), &p).is_err());
    }

    #[test]
    fn classify_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = ModelParams::init(shape(3, 1, 4, 3, 1), &mut rng).unwrap();
        let mut h = Matrix::zeros(3, 3);
        let mut w = Matrix::zeros(3, 4);
        for x in h.data_mut().iter_mut().chain(w.data_mut()) {
            *x = rng.gen_range(-1.0..1.0);
        }
        let g = classify_backward(&w, &h, &p).unwrap();
        let f = |h: &Matrix, p: &ModelParams| {
            crate::numeric::dot(classifier_logits(h, p).unwrap().data(), w.data())
        };
        let nh = central_diff(h.data(), 1e-5, |x| f(&Matrix::new(3, 3, x.to_vec()).unwrap(), &p));
        let nw = central_diff(p.classifier_weight.data(), 1e-5, |x| {
            let mut q = p.clone();
            q.classifier_weight.data_mut().copy_from_slice(x);
            f(&h, &q)
        });
        let nb = central_diff(p.classifier_bias.data(), 1e-5, |x| {
            let mut q = p.clone();
            q.classifier_bias.data_mut().copy_from_slice(x);
            f(&h, &q)
        });
        for (a, n) in g
            .h_final
            .data()
            .iter()
            .zip(&nh)
            .chain(g.weight.data().iter().zip(&nw))
            .chain(g.bias.data().iter().zip(&nb))
        {
            assert!(rel_err(*a, *n) < 1e-6, "{a} vs {n}");
        }

        let zero = classify_backward(&Matrix::zeros(3, 4), &h, &p).unwrap();
        assert_eq!(zero.weight, Matrix::zeros(3, 4));
        assert_eq!(zero.bias, Matrix::zeros(1, 4));
        assert_eq!(zero.h_final, Matrix::zeros(3, 3));
    }

    #[test]
    fn score_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = ModelParams::init(shape(2, 2, 0, 3, 1), &mut rng).unwrap();
        let h = [0.3, -0.2, 0.9];
        assert_eq!(score_relation(&[0.0; 3], &h, RelationId(1), &p).unwrap(), 0.5);

        let mut p = ModelParams::zeros(shape(2, 1, 0, 3, 1)).unwrap();
        p.decoder[0] = Matrix::identity(3);
        let e = [0.0, 1.0, 0.0];
        let s = score_relation(&e, &e, RelationId(0), &p).unwrap();
        assert!((s - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-15);
        assert!((s - 0.7311).abs() < 1e-4);

        assert!(score_relation(&e, &e, RelationId(1), &p).is_err());
    }

    #[test]
    fn full_and_diagonal_modes_agree_on_diagonal_blocks() {
        let diag = [0.5, -1.5, 2.0];
        let mut full = ModelParams::zeros(shape(2, 1, 0, 3, 1)).unwrap();
        let mut m = Matrix::zeros(3, 3);
        for k in 0..3 {
            m.set(k, k, diag[k]);
        }
        full.decoder[0] = m;
        let mut ds = shape(2, 1, 0, 3, 1);
        ds.decoder_form = DecoderForm::Diagonal;
        let mut dp = ModelParams::zeros(ds).unwrap();
        dp.decoder[0] = Matrix::row_vector(&diag);
        let (a, b) = ([0.2, 0.4, -0.7], [1.1, -0.3, 0.6]);
        let sf = score_logit(&a, &b, RelationId(0), &full).unwrap();
        let sd = score_logit(&a, &b, RelationId(0), &dp).unwrap();
        assert!((sf - sd).abs() < 1e-15);
    }

    #[test]
    fn symmetric_block_gives_symmetric_scores() {
        let mut p = ModelParams::zeros(shape(2, 1, 0, 2, 1)).unwrap();
        p.decoder[0] = Matrix::from_rows(&[[0.3, -1.0], [-1.0, 2.0]]);
        let (a, b) = ([0.5, 1.5], [-0.25, 0.75]);
        assert_eq!(
            score_relation(&a, &b, RelationId(0), &p).unwrap(),
            score_relation(&b, &a, RelationId(0), &p).unwrap()
        );
    }

    fn score_fd_check(form: DecoderForm) {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut s = shape(2, 2, 0, 4, 1);
        s.decoder_form = form;
        let p = ModelParams::init(s, &mut rng).unwrap();
        let hi: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let hj: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r = RelationId(1);
        let g = score_backward(1.0, &hi, &hj, r, &p).unwrap();

        let nh = central_diff(&hi, 1e-5, |x| score_relation(x, &hj, r, &p).unwrap());
        let nt = central_diff(&hj, 1e-5, |x| score_relation(&hi, x, r, &p).unwrap());
        let nb = central_diff(p.decoder[1].data(), 1e-5, |x| {
            let mut q = p.clone();
            q.decoder[1].data_mut().copy_from_slice(x);
            score_relation(&hi, &hj, r, &q).unwrap()
        });
        for (a, n) in g
            .head
            .iter()
            .zip(&nh)
            .chain(g.tail.iter().zip(&nt))
            .chain(g.block.data().iter().zip(&nb))
        {
            assert!(rel_err(*a, *n) < 1e-4, "{a} vs {n}");
        }

        // ∂p/∂h_i = σ'(s) · R h_j
        if form == DecoderForm::Full {
            let prob = score_relation(&hi, &hj, r, &p).unwrap();
            let rhj = matmul(&p.decoder[1], &Matrix::new(4, 1, hj.clone()).unwrap()).unwrap();
            for (a, b) in g.head.iter().zip(rhj.data()) {
                assert!((a - prob * (1.0 - prob) * b).abs() < 1e-15);
            }
        }

        let zero = score_backward(0.0, &hi, &hj, r, &p).unwrap();
        assert!(zero.head.iter().chain(&zero.tail).all(|&x| x == 0.0));
        assert_eq!(zero.block.max_abs(), 0.0);
    }

    #[test]
    fn score_backward_full_matches_finite_differences() {
        score_fd_check(DecoderForm::Full);
    }

    #[test]
    fn score_backward_diagonal_matches_finite_differences() {
        score_fd_check(DecoderForm::Diagonal);
    }

    #[test]
    fn encode_is_permutation_equivariant() {
        let triples = [
            Triple::new(0, 0, 1),
            Triple::new(1, 1, 2),
            Triple::new(2, 0, 3),
            Triple::new(4, 1, 0),
            Triple::new(3, 0, 4),
        ];
        // every node has degree 2, so neighbor sums are order-free and exact
        let perm = [3usize, 0, 4, 1, 2]; // old id -> new id
        let g = KnowledgeGraph::build(&triples, 5, 2, None).unwrap();
        let permuted: Vec<Triple> = triples
            .iter()
            .map(|t| Triple::new(perm[t.head.0], t.relation.0, perm[t.tail.0]))
            .collect();
        let g2 = KnowledgeGraph::build(&permuted, 5, 2, None).unwrap();

        for relational in [false, true] {
            let mut s = shape(5, 2, 0, 3, 2);
            s.relational = relational;
            let p = ModelParams::init(s, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
            let mut p2 = p.clone();
            for old in 0..5 {
                p2.embedding
                    .row_mut(perm[old])
                    .copy_from_slice(p.embedding.row(old));
            }
            let h = encode(&g, &g.norm_coefficients(), &p).unwrap();
            let h2 = encode(&g2, &g2.norm_coefficients(), &p2).unwrap();
            for old in 0..5 {
                assert_eq!(h.last().row(old), h2.last().row(perm[old]));
            }
        }
    }

    #[test]
    fn tensor_names_align_with_tensors() {
        let mut s = shape(3, 2, 2, 2, 2);
        s.relational = true;
        let p = ModelParams::zeros(s).unwrap();
        let names = p.tensor_names();
        assert_eq!(names.len(), p.tensors().len());
        assert_eq!(names[1], "layer0.neighbor.r0");
        assert_eq!(names.last().unwrap(), "decoder.r1");
        assert!(ModelParams::zeros(shape(3, 2, 2, 2, 0)).is_err());
    }
}
