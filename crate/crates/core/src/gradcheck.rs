//! Finite-difference verification of the analytic gradients, plus the
//! built-in suite of small graphs the CLI and tests run it on.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{EntityLabels, KnowledgeGraph, Triple};
use crate::loss::sample_negatives;
use crate::model::{DecoderForm, ModelParams};
use crate::train::{Objective, TrainConfig};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Pass threshold on the worst relative error.
pub const MAX_REL_ERR: f64 = 1e-4;
/// Denominator floor so gradients that are zero up to rounding do not blow
/// up the relative error.
pub const REL_ERR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Path of the worst scalar, e.g. `layer1.self[0,2]`.
    pub worst_parameter: String,
    pub analytic: f64,
    pub numeric: f64,
    pub num_checked: usize,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < MAX_REL_ERR
    }
}

/// Compares the training gradient against central differences of the full
/// loss for every scalar parameter.
pub fn grad_check(g: &KnowledgeGraph, config: &TrainConfig) -> Result<GradCheckReport> {
    grad_check_with(g, config, |objective, params, negatives| {
        objective.loss_and_grad(params, negatives).map(|(_, grads)| grads)
    })
}

/// [`grad_check`] with a caller-supplied analytic gradient.
pub fn grad_check_with(
    g: &KnowledgeGraph,
    config: &TrainConfig,
    analytic: impl Fn(&Objective<'_>, &ModelParams, &[Triple]) -> Result<ModelParams>,
) -> Result<GradCheckReport> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let params = ModelParams::init(config.model_shape(g), &mut rng)?;
    let negatives: Vec<Triple> = sample_negatives(g, g.triples(), config.negatives, &mut rng)?
        .samples
        .into_iter()
        .map(|s| s.triple)
        .collect();
    let norms = g.norm_coefficients();
    let objective = Objective {
        graph: g,
        norms: &norms,
        config,
    };
    let grads = analytic(&objective, &params, &negatives)?;

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_parameter: String::new(),
        analytic: 0.0,
        numeric: 0.0,
        num_checked: 0,
    };
    let names = params.tensor_names();
    let mut probe = params.clone();
    for (k, name) in names.iter().enumerate() {
        let grad = grads.tensors()[k].clone();
        let cols = grad.cols();
        for idx in 0..grad.len() {
            let original = params.tensors()[k].data()[idx];
            probe.tensors_mut()[k].data_mut()[idx] = original + FD_STEP;
            let plus = objective.loss(&probe, &negatives)?.total;
            probe.tensors_mut()[k].data_mut()[idx] = original - FD_STEP;
            let minus = objective.loss(&probe, &negatives)?.total;
            probe.tensors_mut()[k].data_mut()[idx] = original;

            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = grad.data()[idx];
            let err = relative_error(a, numeric);
            report.num_checked += 1;
            if err > report.max_rel_err || report.worst_parameter.is_empty() {
                report.max_rel_err = err;
                report.worst_parameter = format!("{name}[{},{}]", idx / cols, idx % cols);
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

/// One small graph of the built-in suite.
#[derive(Debug, Clone)]
pub struct Topology {
    pub name: &'static str,
    pub graph: KnowledgeGraph,
}

fn topology(
    name: &'static str,
    n: usize,
    r: usize,
    edges: &[(usize, usize, usize)],
    classes: &[Option<usize>],
) -> Topology {
    let triples: Vec<Triple> = edges.iter().map(|&(h, rel, t)| Triple::new(h, rel, t)).collect();
    let labels = EntityLabels {
        num_classes: 3,
        classes: classes.to_vec(),
    };
    Topology {
        name,
        graph: KnowledgeGraph::build(&triples, n, r, Some(labels)).expect("static topology"),
    }
}

/// Five graphs of at most six nodes: an edge, a chain, a star, a cycle with
/// a chord, and a mixed graph with a self-loop, parallel relations and an
/// isolated node.
pub fn topologies() -> Vec<Topology> {
    vec![
        topology("pair", 2, 1, &[(0, 0, 1)], &[Some(0), Some(1)]),
        topology(
            "chain",
            4,
            2,
            &[(0, 0, 1), (1, 1, 2), (2, 0, 3)],
            &[Some(0), None, Some(2), Some(1)],
        ),
        topology(
            "star",
            5,
            2,
            &[(0, 0, 1), (0, 1, 2), (3, 0, 0), (4, 1, 0)],
            &[Some(2), Some(0), Some(0), Some(1), None],
        ),
        topology(
            "cycle",
            5,
            2,
            &[(0, 0, 1), (1, 1, 2), (2, 0, 3), (3, 1, 4), (4, 0, 0), (0, 1, 3)],
            &[Some(0), Some(1), Some(2), Some(0), Some(1)],
        ),
        topology(
            "mixed",
            6,
            2,
            &[(0, 0, 1), (0, 1, 1), (2, 0, 2), (3, 1, 4), (1, 0, 3), (4, 0, 2)],
            &[Some(1), None, Some(0), Some(2), Some(1), Some(0)],
        ),
    ]
}

/// Seeds run per topology.
pub const SUITE_SEEDS: [u64; 3] = [1, 2, 3];

/// Configuration for case `index` of the suite. The low bits of the index
/// select layers (1 or 2), dimension (2 or 4), decoder form and relational
/// mode, so fifteen cases cover every value of each knob.
pub fn suite_config(index: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        num_layers: 1 + index % 2,
        hidden_dim: if (index / 2).is_multiple_of(2) { 2 } else { 4 },
        decoder_form: if (index / 4).is_multiple_of(2) {
            DecoderForm::Full
        } else {
            DecoderForm::Diagonal
        },
        relational: (index / 8) % 2 == 1,
        negatives: 2,
        lambda: 0.7,
        alpha: 0.5,
        seed,
        ..TrainConfig::default()
    }
}

#[derive(Debug, Clone)]
pub struct SuiteCase {
    pub topology: &'static str,
    pub config: TrainConfig,
    pub report: GradCheckReport,
}

/// Runs every topology with every seed in `seeds` (normally
/// [`SUITE_SEEDS`]). `dim` and `layers` override the per-case defaults when
/// given.
pub fn run_suite(seeds: &[u64], dim: Option<usize>, layers: Option<usize>) -> Result<Vec<SuiteCase>> {
    let mut out = Vec::new();
    for (t, topo) in topologies().into_iter().enumerate() {
        for (s, &seed) in seeds.iter().enumerate() {
            let mut config = suite_config(t * seeds.len() + s, seed);
            if let Some(d) = dim {
                config.hidden_dim = d;
            }
            if let Some(l) = layers {
                config.num_layers = l;
            }
            let report = grad_check(&topo.graph, &config)?;
            out.push(SuiteCase {
                topology: topo.name,
                config,
                report,
            });
        }
    }
    Ok(out)
}
