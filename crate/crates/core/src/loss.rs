//! Negative sampling and the training objective.
//!
//! The relation term is binary cross-entropy with sampled negatives,
//! averaged per side:
//!
//! ```text
//! pos = −mean log p⁺        neg = −mean log(1 − p⁻)
//! total = pos + λ·neg + α·entity
//! ```

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{EntityId, KnowledgeGraph, Triple};
use crate::numeric::Matrix;

/// Probabilities are clamped into `[PROB_CLAMP, 1 − PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-12;

/// Resampling budget per negative before the last candidate is accepted.
pub const MAX_NEGATIVE_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CorruptedSlot {
    Head,
    Tail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NegativeSample {
    pub triple: Triple,
    /// Index of the corrupted positive in the input list.
    pub source: usize,
    pub corrupted_slot: CorruptedSlot,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NegativeBatch {
    pub samples: Vec<NegativeSample>,
    /// Negatives emitted after the attempt budget ran out; these may be known
    /// triples.
    pub exhausted: usize,
}

/// `k` head-or-tail corruptions per positive, filtered against the graph's
/// triples.
pub fn sample_negatives<R: Rng + ?Sized>(
    g: &KnowledgeGraph,
    positives: &[Triple],
    k: usize,
    rng: &mut R,
) -> Result<NegativeBatch> {
    sample_negatives_filtered(positives, g.num_entities(), k, rng, |t| g.contains_triple(t))
}

/// Like [`sample_negatives`] with a caller-supplied notion of "known".
pub fn sample_negatives_filtered<R: Rng + ?Sized>(
    positives: &[Triple],
    num_entities: usize,
    k: usize,
    rng: &mut R,
    is_known: impl Fn(&Triple) -> bool,
) -> Result<NegativeBatch> {
    if k == 0 {
        return Err(Error::Validation("negatives per positive must be at least 1".into()));
    }
    if num_entities == 0 && !positives.is_empty() {
        return Err(Error::Validation("cannot corrupt triples of an empty graph".into()));
    }
    let mut batch = NegativeBatch {
        samples: Vec::with_capacity(positives.len() * k),
        exhausted: 0,
    };
    for (source, pos) in positives.iter().enumerate() {
        for _ in 0..k {
            let mut attempt = 0;
            loop {
                attempt += 1;
                let slot = if rng.gen_bool(0.5) {
                    CorruptedSlot::Head
                } else {
                    CorruptedSlot::Tail
                };
                let e = EntityId(rng.gen_range(0..num_entities));
                let mut triple = *pos;
                match slot {
                    CorruptedSlot::Head => triple.head = e,
                    CorruptedSlot::Tail => triple.tail = e,
                }
                let known = is_known(&triple);
                if !known || attempt >= MAX_NEGATIVE_ATTEMPTS {
                    if known {
                        batch.exhausted += 1;
                    }
                    batch.samples.push(NegativeSample {
                        triple,
                        source,
                        corrupted_slot: slot,
                    });
                    break;
                }
            }
        }
    }
    Ok(batch)
}

#[inline]
pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Relation part of the objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelationLoss {
    pub positive: f64,
    pub negative: f64,
    pub lambda: f64,
}

impl RelationLoss {
    pub fn total(&self) -> f64 {
        self.positive + self.lambda * self.negative
    }
}

pub fn relation_loss(pos_scores: &[f64], neg_scores: &[f64], lambda: f64) -> RelationLoss {
    let mean = |xs: &[f64], f: &dyn Fn(f64) -> f64| {
        if xs.is_empty() {
            0.0
        } else {
            xs.iter().map(|&p| f(clamp_prob(p))).sum::<f64>() / xs.len() as f64
        }
    };
    RelationLoss {
        positive: mean(pos_scores, &|p| -p.ln()),
        negative: mean(neg_scores, &|p| -(1.0 - p).ln()),
        lambda,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntityLoss {
    pub value: f64,
    /// False when no entity carried a label.
    pub active: bool,
}

/// Mean `−log p(true class)` over labeled entities.
pub fn entity_loss(probs: &Matrix, labels: &[Option<usize>]) -> Result<EntityLoss> {
    check_labels(probs, labels)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for (row, label) in labels.iter().enumerate() {
        if let Some(c) = *label {
            total -= clamp_prob(probs.get(row, c)).ln();
            count += 1;
        }
    }
    Ok(if count == 0 {
        EntityLoss {
            value: 0.0,
            active: false,
        }
    } else {
        EntityLoss {
            value: total / count as f64,
            active: true,
        }
    })
}

/// Gradient of [`entity_loss`] with respect to the classifier logits:
/// `(p − onehot) / n_labeled` on labeled rows, zero elsewhere.
pub fn entity_loss_grad(probs: &Matrix, labels: &[Option<usize>]) -> Result<Matrix> {
    check_labels(probs, labels)?;
    let count = labels.iter().filter(|l| l.is_some()).count();
    let mut grad = Matrix::zeros(probs.rows(), probs.cols());
    if count == 0 {
        return Ok(grad);
    }
    let scale = 1.0 / count as f64;
    for (row, label) in labels.iter().enumerate() {
        if let Some(c) = *label {
            let g = grad.row_mut(row);
            for (gi, &p) in g.iter_mut().zip(probs.row(row)) {
                *gi = p * scale;
            }
            g[c] -= scale;
        }
    }
    Ok(grad)
}

fn check_labels(probs: &Matrix, labels: &[Option<usize>]) -> Result<()> {
    if labels.len() != probs.rows() {
        return Err(Error::Validation(format!(
            "{} labels for {} probability rows",
            labels.len(),
            probs.rows()
        )));
    }
    if let Some((i, c)) = labels
        .iter()
        .enumerate()
        .find_map(|(i, l)| l.filter(|&c| c >= probs.cols()).map(|c| (i, c)))
    {
        return Err(Error::Validation(format!(
            "entity {i} has label {c} outside 0..{}",
            probs.cols()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub relation_pos: f64,
    pub relation_neg: f64,
    pub entity: f64,
    pub total: f64,
    pub entity_active: bool,
}

impl LossBreakdown {
    pub fn combine(relation: RelationLoss, entity: EntityLoss, alpha: f64) -> Self {
        let entity_term = if entity.active { alpha * entity.value } else { 0.0 };
        Self {
            relation_pos: relation.positive,
            relation_neg: relation.negative,
            entity: entity.value,
            total: relation.total() + entity_term,
            entity_active: entity.active,
        }
    }

    /// Name of the first non-finite component, if any.
    pub fn non_finite_component(&self) -> Option<&'static str> {
        [
            ("relation_pos", self.relation_pos),
            ("relation_neg", self.relation_neg),
            ("entity", self.entity),
            ("total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(name, _)| name)
    }
}
