//! The `kgr` command line. [`run`] holds all of the logic so it can be
//! driven in-process; `main` only forwards the process arguments.

use std::ffi::OsString;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::eval::{evaluate_entities, rank_tails, score_eval_pairs, EvalOptions, MetricsReport, PairLabel, CSV_HEADER};
use crate::gradcheck::{run_suite, MAX_REL_ERR, SUITE_SEEDS};
use crate::graph::{EntityId, RelationId, Triple};
use crate::io::{self, Dataset, ModelArtifact, Vocab};
use crate::model::DecoderForm;
use crate::train::{train_with_validation, OptimizerKind, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NON_FINITE: i32 = 2;
pub const EXIT_GRADCHECK: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "kgr", version, about = "Knowledge-graph reasoning with a graph-convolutional encoder")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a model on a triple file and save it.
    Train(TrainArgs),
    /// Score held-out triples against filtered negatives.
    Eval(EvalArgs),
    /// Rank tail entities for a (head, relation) query.
    Predict(PredictArgs),
    /// Check analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Write a synthetic dataset with planted structure.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    valid: Option<PathBuf>,
    /// Only read to fix the entity vocabulary.
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch loss CSV.
    #[arg(long)]
    history: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 1)]
    negatives: usize,
    #[arg(long, default_value_t = DecoderForm::Full)]
    decoder: DecoderForm,
    #[arg(long)]
    relational: bool,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = OptimizerKind::Adam)]
    optimizer: OptimizerKind,
    /// Validate every N epochs (0 = only at the end).
    #[arg(long, default_value_t = 0)]
    eval_every: usize,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long, default_value_t = 1)]
    negatives: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Append a metrics row, writing the header first if the file is new.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Write every scored pair as TSV.
    #[arg(long)]
    dump_scores: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    head: String,
    #[arg(long)]
    relation: String,
    #[arg(long, default_value_t = 10)]
    k: usize,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    /// Run a single seed instead of the built-in seed list.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    entities: usize,
    #[arg(long, default_value_t = 3)]
    relations: usize,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

/// Parses `args` (including the program name) and executes the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let target: &mut dyn Write = if e.use_stderr() { err } else { out };
            let _ = write!(target, "{}", e.render());
            return code;
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Predict(a) => cmd_predict(a, out),
        Command::Gradcheck(a) => cmd_gradcheck(a, out),
        Command::Synth(a) => cmd_synth(a, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            match e {
                Error::NonFinite { .. } => EXIT_NON_FINITE,
                _ => EXIT_USAGE,
            }
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes()).map_err(io_err(Path::new("<stdout>")))
}

fn cmd_train(a: TrainArgs, out: &mut dyn Write) -> Result<i32> {
    let config = TrainConfig {
        num_layers: a.layers,
        hidden_dim: a.dim,
        num_epochs: a.epochs,
        learning_rate: a.lr,
        lambda: a.lambda,
        alpha: a.alpha,
        negatives: a.negatives,
        seed: a.seed,
        decoder_form: a.decoder,
        relational: a.relational,
        optimizer: a.optimizer,
        eval_every: a.eval_every,
        ..TrainConfig::default()
    };
    config.validate()?;
    let data = Dataset::load(&a.train, a.valid.as_deref(), a.test.as_deref(), a.labels.as_deref())?;
    if data.graph.triples().is_empty() {
        return Err(Error::Validation(format!("{} contains no triples", a.train.display())));
    }

    let (params, history) = train_with_validation(&data.graph, &config, &data.valid_triples, |_, _| {})?;

    if let Some(path) = &a.history {
        let mut csv = String::from("epoch,relation_pos,relation_neg,entity,total\n");
        for (i, l) in history.epochs.iter().enumerate() {
            csv.push_str(&format!(
                "{},{},{},{},{}\n",
                i + 1,
                l.relation_pos,
                l.relation_neg,
                l.entity,
                l.total
            ));
        }
        fs::write(path, csv).map_err(io_err(path))?;
    }

    let artifact = ModelArtifact {
        config: config.clone(),
        entity_vocab: data.entity_vocab.clone(),
        relation_vocab: data.relation_vocab.clone(),
        class_vocab: data.class_vocab.clone(),
        train_triples: data.graph.triples().to_vec(),
        params,
    };
    io::save_model(&artifact, &a.out)?;

    if let Some(last) = history.epochs.last() {
        emit(
            out,
            &format!("epochs={} final_loss={}\n", history.epochs.len(), last.total),
        )?;
    }
    if history.exhausted_negatives > 0 {
        emit(out, &format!("exhausted_negatives={}\n", history.exhausted_negatives))?;
    }
    for (epoch, report) in &history.evals {
        emit(out, &format!("epoch={epoch} valid_auc={}\n", report.auc))?;
    }
    if !data.valid_triples.is_empty() {
        let opts = EvalOptions {
            seed: config.seed,
            ..EvalOptions::default()
        };
        let mut report =
            crate::eval::evaluate_relations(&artifact.params, &data.graph, &data.valid_triples, &opts)?;
        if let Some(labels) = data.graph.labels() {
            let m = evaluate_entities(&artifact.params, &data.graph, &labels.classes, &labels.mask())?;
            report.entity_accuracy = Some(m.accuracy);
            report.entity_macro_f1 = Some(m.macro_f1);
        }
        emit(out, &report.to_key_values())?;
    }
    emit(out, &format!("model={}\n", a.out.display()))?;
    Ok(EXIT_OK)
}

fn cmd_eval(a: EvalArgs, out: &mut dyn Write) -> Result<i32> {
    if a.negatives == 0 {
        return Err(Error::Validation("--negatives must be at least 1".into()));
    }
    let artifact = io::load_model(&a.model)?;
    let triples = io::load_triples_known(&a.test, &artifact.entity_vocab, &artifact.relation_vocab)?;
    if triples.is_empty() {
        return Err(Error::UndefinedMetric(format!(
            "{} contains no triples, so AUC has no positives",
            a.test.display()
        )));
    }
    let g = artifact.graph()?;
    let h = artifact.params.embed(&g, &g.norm_coefficients())?;
    let opts = EvalOptions {
        negatives: a.negatives,
        seed: a.seed,
        threshold: a.threshold,
    };
    let (scored, skipped) = score_eval_pairs(&artifact.params, &g, &h, &triples, &opts)?;
    let mut report = MetricsReport::from_scores(&scored, opts.threshold)?;
    report.skipped = skipped;

    if let Some(path) = &a.dump_scores {
        let mut tsv = String::from("head\trelation\ttail\tscore\tlabel\n");
        for s in &scored {
            let label = match s.label {
                PairLabel::Positive => 1,
                PairLabel::Negative => 0,
            };
            tsv.push_str(&format!(
                "{}\t{}\t{}\t{}\t{label}\n",
                vocab_name(&artifact.entity_vocab, s.triple.head.0),
                vocab_name(&artifact.relation_vocab, s.triple.relation.0),
                vocab_name(&artifact.entity_vocab, s.triple.tail.0),
                s.score
            ));
        }
        fs::write(path, tsv).map_err(io_err(path))?;
    }
    if let Some(path) = &a.csv {
        let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_err(path))?;
        let mut text = String::new();
        if fresh {
            text.push_str(CSV_HEADER);
            text.push('\n');
        }
        text.push_str(&report.csv_row());
        text.push('\n');
        file.write_all(text.as_bytes()).map_err(io_err(path))?;
    }
    emit(out, &report.to_key_values())?;
    Ok(EXIT_OK)
}

fn vocab_name(v: &Vocab, id: usize) -> &str {
    v.name(id).unwrap_or("?")
}

fn resolve(vocab: &Vocab, name: &str, kind: &str) -> Result<usize> {
    vocab.get(name).ok_or_else(|| {
        let near = vocab.nearest(name, 3);
        let hint = if near.is_empty() {
            String::new()
        } else {
            format!("; nearest: {}", near.join(", "))
        };
        Error::Validation(format!("unknown {kind} {name:?}{hint}"))
    })
}

fn cmd_predict(a: PredictArgs, out: &mut dyn Write) -> Result<i32> {
    if a.k == 0 {
        return Err(Error::Validation("--k must be at least 1".into()));
    }
    let artifact = io::load_model(&a.model)?;
    let head = resolve(&artifact.entity_vocab, &a.head, "entity")?;
    let relation = resolve(&artifact.relation_vocab, &a.relation, "relation")?;
    let g = artifact.graph()?;
    let h = artifact.params.embed(&g, &g.norm_coefficients())?;

    let ranked = rank_tails(&artifact.params, &h, EntityId(head), RelationId(relation))?;

    let mut text = String::from("rank\ttail\tscore\tknown\n");
    for (rank, &(tail, score)) in ranked.iter().take(a.k).enumerate() {
        let known = g.contains_triple(&Triple::new(head, relation, tail.0));
        text.push_str(&format!(
            "{}\t{}\t{score}\t{known}\n",
            rank + 1,
            vocab_name(&artifact.entity_vocab, tail.0)
        ));
    }
    emit(out, &text)?;
    Ok(EXIT_OK)
}

fn cmd_gradcheck(a: GradcheckArgs, out: &mut dyn Write) -> Result<i32> {
    if a.dim == Some(0) || a.layers == Some(0) {
        return Err(Error::Validation("--dim and --layers must be at least 1".into()));
    }
    let seeds: Vec<u64> = match a.seed {
        Some(s) => vec![s],
        None => SUITE_SEEDS.to_vec(),
    };
    let cases = run_suite(&seeds, a.dim, a.layers)?;
    let mut all_passed = true;
    let mut text = String::new();
    for chunk in cases.chunks(seeds.len()) {
        let worst = chunk
            .iter()
            .max_by(|x, y| x.report.max_rel_err.total_cmp(&y.report.max_rel_err))
            .expect("non-empty chunk");
        let passed = chunk.iter().all(|c| c.report.passed());
        all_passed &= passed;
        text.push_str(&format!(
            "{:<6} {} max_rel_err={:.3e} limit={MAX_REL_ERR:e} worst={} analytic={:.6e} numeric={:.6e} cases={}\n",
            worst.topology,
            if passed { "PASS" } else { "FAIL" },
            worst.report.max_rel_err,
            worst.report.worst_parameter,
            worst.report.analytic,
            worst.report.numeric,
            chunk.len()
        ));
    }
    emit(out, &text)?;
    Ok(if all_passed { EXIT_OK } else { EXIT_GRADCHECK })
}

fn cmd_synth(a: SynthArgs, out: &mut dyn Write) -> Result<i32> {
    let data = io::synth(a.entities, a.relations, a.classes, a.seed)?;
    data.write_dir(&a.out)?;
    emit(
        out,
        &format!(
            "wrote {} (train={} valid={} test={} entities={} relations={} classes={})\n",
            a.out.display(),
            data.graph.triples().len(),
            data.valid_triples.len(),
            data.test_triples.len(),
            data.entity_vocab.len(),
            data.relation_vocab.len(),
            data.class_vocab.len()
        ),
    )?;
    Ok(EXIT_OK)
}
