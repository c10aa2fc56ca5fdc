//! Link-prediction and entity-classification metrics.

use std::collections::HashSet;
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{EntityId, KnowledgeGraph, RelationId, Triple};
use crate::loss::sample_negatives_filtered;
use crate::model::{classify, score_relation, ModelParams};
use crate::numeric::{argmax, Matrix};

/// Header of the CSV row written by [`MetricsReport::csv_row`].
pub const CSV_HEADER: &str = "auc,precision,recall,f1,threshold,num_pos,num_neg";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairLabel {
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredPair {
    pub triple: Triple,
    pub score: f64,
    pub label: PairLabel,
}

impl ScoredPair {
    pub fn is_positive(&self) -> bool {
        self.label == PairLabel::Positive
    }
}

/// Mann–Whitney AUC with ties counted as one half.
///
/// Sorts once and walks tie groups, so it runs in `O(n log n)`.
pub fn auc(scored: &[ScoredPair]) -> Result<f64> {
    let num_pos = scored.iter().filter(|s| s.is_positive()).count();
    let num_neg = scored.len() - num_pos;
    if num_pos == 0 || num_neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUC needs positives and negatives (got {num_pos} and {num_neg})"
        )));
    }
    let mut order: Vec<&ScoredPair> = scored.iter().collect();
    order.sort_by(|a, b| a.score.total_cmp(&b.score));

    // Counts are integral halves; keep them doubled to stay exact.
    let mut wins_x2: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && order[j].score == order[i].score {
            j += 1;
        }
        let group = &order[i..j];
        let pos_in = group.iter().filter(|s| s.is_positive()).count() as u128;
        let neg_in = group.len() as u128 - pos_in;
        wins_x2 += pos_in * (2 * neg_below + neg_in);
        neg_below += neg_in;
        i = j;
    }
    Ok(wins_x2 as f64 / (2.0 * num_pos as f64 * num_neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prf1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when nothing scored at or above the threshold; precision is then
    /// reported as 1.0.
    pub no_predicted_positives: bool,
}

/// Precision, recall and F1 with "positive iff score ≥ threshold".
pub fn prf1(scored: &[ScoredPair], threshold: f64) -> Prf1 {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for s in scored {
        match (s.score >= threshold, s.is_positive()) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let no_predicted_positives = tp + fp == 0;
    let precision = if no_predicted_positives {
        1.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fn_ == 0 {
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    Prf1 {
        precision,
        recall,
        f1: harmonic_mean(precision, recall),
        no_predicted_positives,
    }
}

fn harmonic_mean(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub auc: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub threshold: f64,
    pub num_pos: usize,
    pub num_neg: usize,
    pub skipped: usize,
    pub no_predicted_positives: bool,
    pub entity_accuracy: Option<f64>,
    pub entity_macro_f1: Option<f64>,
}

impl MetricsReport {
    pub fn from_scores(scored: &[ScoredPair], threshold: f64) -> Result<Self> {
        let auc = auc(scored)?;
        let p = prf1(scored, threshold);
        let num_pos = scored.iter().filter(|s| s.is_positive()).count();
        Ok(Self {
            auc,
            precision: p.precision,
            recall: p.recall,
            f1: p.f1,
            threshold,
            num_pos,
            num_neg: scored.len() - num_pos,
            skipped: 0,
            no_predicted_positives: p.no_predicted_positives,
            entity_accuracy: None,
            entity_macro_f1: None,
        })
    }

    /// `key=value` lines, one metric per line.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "auc={}", self.auc);
        let _ = writeln!(out, "precision={}", self.precision);
        let _ = writeln!(out, "recall={}", self.recall);
        let _ = writeln!(out, "f1={}", self.f1);
        let _ = writeln!(out, "threshold={}", self.threshold);
        let _ = writeln!(out, "num_pos={}", self.num_pos);
        let _ = writeln!(out, "num_neg={}", self.num_neg);
        let _ = writeln!(out, "skipped={}", self.skipped);
        let _ = writeln!(out, "no_predicted_positives={}", self.no_predicted_positives);
        if let Some(acc) = self.entity_accuracy {
            let _ = writeln!(out, "entity_accuracy={acc}");
        }
        if let Some(f1) = self.entity_macro_f1 {
            let _ = writeln!(out, "entity_macro_f1={f1}");
        }
        out
    }

    /// One row matching [`CSV_HEADER`], without a trailing newline.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.auc, self.precision, self.recall, self.f1, self.threshold, self.num_pos, self.num_neg
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    /// Filtered negatives per evaluated positive.
    pub negatives: usize,
    pub seed: u64,
    pub threshold: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            negatives: 1,
            seed: 42,
            threshold: 0.5,
        }
    }
}

/// Scores each evaluation triple and `negatives` corruptions of it, filtered
/// against training and evaluation triples. Positives are scored in input
/// order, followed by all negatives.
pub fn score_eval_pairs(
    params: &ModelParams,
    g_train: &KnowledgeGraph,
    h_final: &Matrix,
    eval_triples: &[Triple],
    opts: &EvalOptions,
) -> Result<(Vec<ScoredPair>, usize)> {
    let in_range = |t: &Triple| {
        t.head.0 < g_train.num_entities()
            && t.tail.0 < g_train.num_entities()
            && t.relation.0 < g_train.num_relations()
    };
    let usable: Vec<Triple> = eval_triples.iter().copied().filter(in_range).collect();
    let skipped = eval_triples.len() - usable.len();

    let eval_set: HashSet<Triple> = usable.iter().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let negatives = sample_negatives_filtered(
        &usable,
        g_train.num_entities(),
        opts.negatives,
        &mut rng,
        |t| g_train.contains_triple(t) || eval_set.contains(t),
    )?;

    let score = |t: &Triple| {
        score_relation(h_final.row(t.head.0), h_final.row(t.tail.0), t.relation, params)
    };
    let mut scored = Vec::with_capacity(usable.len() + negatives.samples.len());
    for t in &usable {
        scored.push(ScoredPair {
            triple: *t,
            score: score(t)?,
            label: PairLabel::Positive,
        });
    }
    for n in &negatives.samples {
        scored.push(ScoredPair {
            triple: n.triple,
            score: score(&n.triple)?,
            label: PairLabel::Negative,
        });
    }
    Ok((scored, skipped))
}

/// Relation-prediction metrics on held-out triples.
pub fn evaluate_relations(
    params: &ModelParams,
    g_train: &KnowledgeGraph,
    eval_triples: &[Triple],
    opts: &EvalOptions,
) -> Result<MetricsReport> {
    let h_final = params.embed(g_train, &g_train.norm_coefficients())?;
    evaluate_relations_with(params, g_train, &h_final, eval_triples, opts)
}

/// [`evaluate_relations`] with precomputed final embeddings.
pub fn evaluate_relations_with(
    params: &ModelParams,
    g_train: &KnowledgeGraph,
    h_final: &Matrix,
    eval_triples: &[Triple],
    opts: &EvalOptions,
) -> Result<MetricsReport> {
    let (scored, skipped) = score_eval_pairs(params, g_train, h_final, eval_triples, opts)?;
    let mut report = MetricsReport::from_scores(&scored, opts.threshold)?;
    report.skipped = skipped;
    Ok(report)
}

/// Every entity as a tail for `(head, relation)`, by descending probability
/// with ties broken by entity id.
pub fn rank_tails(
    params: &ModelParams,
    h_final: &Matrix,
    head: EntityId,
    relation: RelationId,
) -> Result<Vec<(EntityId, f64)>> {
    if head.0 >= h_final.rows() {
        return Err(Error::Validation(format!("entity {} out of range", head.0)));
    }
    let mut ranked = (0..h_final.rows())
        .map(|t| Ok((EntityId(t), score_relation(h_final.row(head.0), h_final.row(t), relation, params)?)))
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
    Ok(ranked)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntityMetrics {
    pub accuracy: f64,
    pub macro_f1: f64,
}

/// Accuracy and macro-F1 of argmax predictions against true labels over the
/// masked entities. Macro-F1 averages over classes that occur among the
/// masked true labels.
pub fn entity_metrics(
    predicted: &[usize],
    labels: &[Option<usize>],
    eval_mask: &[bool],
) -> Result<EntityMetrics> {
    if predicted.len() != labels.len() || labels.len() != eval_mask.len() {
        return Err(Error::Validation(format!(
            "length mismatch: {} predictions, {} labels, {} mask entries",
            predicted.len(),
            labels.len(),
            eval_mask.len()
        )));
    }
    let mut pairs = Vec::new();
    for ((&pred, label), &on) in predicted.iter().zip(labels).zip(eval_mask) {
        if !on {
            continue;
        }
        let truth = label.ok_or_else(|| {
            Error::Validation("evaluation mask selects an unlabeled entity".into())
        })?;
        pairs.push((pred, truth));
    }
    if pairs.is_empty() {
        return Err(Error::UndefinedMetric(
            "entity evaluation mask selects no entities".into(),
        ));
    }
    let correct = pairs.iter().filter(|(p, t)| p == t).count();
    let mut classes: Vec<usize> = pairs.iter().map(|&(_, t)| t).collect();
    classes.sort_unstable();
    classes.dedup();
    let f1_sum: f64 = classes
        .iter()
        .map(|&c| {
            let tp = pairs.iter().filter(|&&(p, t)| p == c && t == c).count() as f64;
            let pred_c = pairs.iter().filter(|&&(p, _)| p == c).count() as f64;
            let true_c = pairs.iter().filter(|&&(_, t)| t == c).count() as f64;
            let precision = if pred_c == 0.0 { 0.0 } else { tp / pred_c };
            let recall = tp / true_c;
            harmonic_mean(precision, recall)
        })
        .sum();
    Ok(EntityMetrics {
        accuracy: correct as f64 / pairs.len() as f64,
        macro_f1: f1_sum / classes.len() as f64,
    })
}

/// Entity-classification metrics of the model's classifier head.
pub fn evaluate_entities(
    params: &ModelParams,
    g: &KnowledgeGraph,
    labels: &[Option<usize>],
    eval_mask: &[bool],
) -> Result<EntityMetrics> {
    let h_final = params.embed(g, &g.norm_coefficients())?;
    let probs = classify(&h_final, params)?;
    let predicted: Vec<usize> = (0..probs.rows())
        .map(|r| argmax(probs.row(r)).unwrap_or(0))
        .collect();
    entity_metrics(&predicted, labels, eval_mask)
}
