//! Triple and label files, the synthetic planted-structure generator, and
//! the model artifact container.
//!
//! Triple files are UTF-8 `head\trelation\ttail` lines; label files are
//! `entity\tclass` lines. A model artifact is a text header followed by raw
//! little-endian `f64` payloads:
//!
//! ```text
//! KGR1
//! config <n>            n lines of key=value
//! entities <n>          n names, id order
//! relations <n>
//! classes <n>
//! triples <n>           n lines of "head relation tail" ids (training graph)
//! tensors <n>           n lines of "name rows cols offset"
//! payload <bytes> <sha256 hex>
//! <raw bytes>
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{EntityLabels, KnowledgeGraph, Triple};
use crate::model::ModelParams;
use crate::train::TrainConfig;

pub const ARTIFACT_VERSION: &str = "KGR1";

/// Bidirectional name ↔ dense id map, ids assigned in first-seen order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_names<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let mut v = Self::new();
        for name in names {
            let name = name.into();
            if v.index.contains_key(&name) {
                return Err(Error::Validation(format!("duplicate vocabulary entry {name:?}")));
            }
            v.intern(&name);
        }
        Ok(v)
    }

    pub fn intern(&mut self, name: &str) -> usize {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len();
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Up to `limit` names closest to `query` by edit distance.
    pub fn nearest(&self, query: &str, limit: usize) -> Vec<&str> {
        let mut ranked: Vec<(usize, &str)> = self
            .names
            .iter()
            .map(|n| (strsim::levenshtein(query, n), n.as_str()))
            .collect();
        ranked.sort();
        ranked.into_iter().take(limit).map(|(_, n)| n).collect()
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn split_fields<'a>(line: &'a str, expected: usize, path: &Path, line_no: usize) -> Result<Vec<&'a str>> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != expected {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: format!("expected {expected} tab-separated fields, found {}", fields.len()),
        });
    }
    if let Some(pos) = fields.iter().position(|f| f.is_empty()) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: format!("field {} is empty", pos + 1),
        });
    }
    Ok(fields)
}

fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
        .filter(|(_, l)| !l.is_empty())
}

/// Parses triple lines, interning names into the given vocabularies.
pub fn parse_triples(
    text: &str,
    path: &Path,
    entities: &mut Vocab,
    relations: &mut Vocab,
) -> Result<Vec<Triple>> {
    let mut out = Vec::new();
    for (line_no, line) in lines(text) {
        let f = split_fields(line, 3, path, line_no)?;
        let head = entities.intern(f[0]);
        let relation = relations.intern(f[1]);
        let tail = entities.intern(f[2]);
        out.push(Triple::new(head, relation, tail));
    }
    Ok(out)
}

pub fn load_triples(path: &Path, entities: &mut Vocab, relations: &mut Vocab) -> Result<Vec<Triple>> {
    parse_triples(&read_text(path)?, path, entities, relations)
}

/// Triples whose names all resolve in fixed vocabularies; unknown names are
/// reported with their line number.
pub fn load_triples_known(path: &Path, entities: &Vocab, relations: &Vocab) -> Result<Vec<Triple>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (line_no, line) in lines(&text) {
        let f = split_fields(line, 3, path, line_no)?;
        let lookup = |vocab: &Vocab, name: &str, kind: &str| {
            vocab.get(name).ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: format!("unknown {kind} {name:?}"),
            })
        };
        out.push(Triple::new(
            lookup(entities, f[0], "entity")?,
            lookup(relations, f[1], "relation")?,
            lookup(entities, f[2], "entity")?,
        ));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelFile {
    pub labels: EntityLabels,
    pub classes: Vocab,
}

impl LabelFile {
    /// Labels for the graph, or `None` when nothing is labeled.
    pub fn into_graph_labels(self) -> Option<EntityLabels> {
        (self.labels.num_labeled() > 0).then_some(self.labels)
    }
}

pub fn parse_labels(text: &str, path: &Path, entities: &Vocab) -> Result<LabelFile> {
    let mut classes = Vocab::new();
    let mut per_entity = vec![None; entities.len()];
    for (line_no, line) in lines(text) {
        let f = split_fields(line, 2, path, line_no)?;
        let id = entities.get(f[0]).ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: format!("unknown entity {:?}", f[0]),
        })?;
        per_entity[id] = Some(classes.intern(f[1]));
    }
    Ok(LabelFile {
        labels: EntityLabels {
            num_classes: classes.len(),
            classes: per_entity,
        },
        classes,
    })
}

pub fn load_labels(path: &Path, entities: &Vocab) -> Result<LabelFile> {
    parse_labels(&read_text(path)?, path, entities)
}

#[derive(Debug, Clone)]
pub struct Dataset {
    /// Training triples with entity labels attached when available.
    pub graph: KnowledgeGraph,
    pub valid_triples: Vec<Triple>,
    pub test_triples: Vec<Triple>,
    pub entity_vocab: Vocab,
    pub relation_vocab: Vocab,
    pub class_vocab: Vocab,
}

impl Dataset {
    /// Loads the splits in train, valid, test order so ids follow first
    /// appearance across all of them.
    pub fn load(
        train: &Path,
        valid: Option<&Path>,
        test: Option<&Path>,
        labels: Option<&Path>,
    ) -> Result<Self> {
        let mut entities = Vocab::new();
        let mut relations = Vocab::new();
        let train_triples = load_triples(train, &mut entities, &mut relations)?;
        let mut split = |p: Option<&Path>| match p {
            Some(p) => load_triples(p, &mut entities, &mut relations),
            None => Ok(Vec::new()),
        };
        let valid_triples = split(valid)?;
        let test_triples = split(test)?;
        let label_file = match labels {
            Some(p) => Some(load_labels(p, &entities)?),
            None => None,
        };
        Self::assemble(train_triples, valid_triples, test_triples, entities, relations, label_file)
    }

    fn assemble(
        train: Vec<Triple>,
        valid_triples: Vec<Triple>,
        test_triples: Vec<Triple>,
        entity_vocab: Vocab,
        relation_vocab: Vocab,
        labels: Option<LabelFile>,
    ) -> Result<Self> {
        let (graph_labels, class_vocab) = match labels {
            Some(lf) => {
                let classes = lf.classes.clone();
                (lf.into_graph_labels(), classes)
            }
            None => (None, Vocab::new()),
        };
        let graph = KnowledgeGraph::build(&train, entity_vocab.len(), relation_vocab.len(), graph_labels)?;
        Ok(Self {
            graph,
            valid_triples,
            test_triples,
            entity_vocab,
            relation_vocab,
            class_vocab,
        })
    }

    fn render_triples(&self, triples: &[Triple]) -> String {
        let mut out = String::new();
        for t in triples {
            out.push_str(&self.entity_vocab.names()[t.head.0]);
            out.push('\t');
            out.push_str(&self.relation_vocab.names()[t.relation.0]);
            out.push('\t');
            out.push_str(&self.entity_vocab.names()[t.tail.0]);
            out.push('\n');
        }
        out
    }

    /// Writes `train.tsv`, `valid.tsv`, `test.tsv` and `labels.tsv`.
    ///
    /// Labels are written only for entities that occur in some split, so the
    /// label file always resolves against a vocabulary rebuilt from the
    /// triple files.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut seen = vec![false; self.entity_vocab.len()];
        let splits = [
            ("train.tsv", self.graph.triples()),
            ("valid.tsv", &self.valid_triples[..]),
            ("test.tsv", &self.test_triples[..]),
        ];
        for (_, triples) in &splits {
            for t in *triples {
                seen[t.head.0] = true;
                seen[t.tail.0] = true;
            }
        }
        // The training graph stores triples sorted; write them in that order.
        for (name, triples) in splits {
            write_file(&dir.join(name), self.render_triples(triples).as_bytes())?;
        }
        let mut labels = String::new();
        if let Some(l) = self.graph.labels() {
            for (id, class) in l.classes.iter().enumerate() {
                if let (Some(c), true) = (class, seen[id]) {
                    labels.push_str(&self.entity_vocab.names()[id]);
                    labels.push('\t');
                    labels.push_str(&self.class_vocab.names()[*c]);
                    labels.push('\n');
                }
            }
        }
        write_file(&dir.join("labels.tsv"), labels.as_bytes())
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Latent structure behind a synthetic dataset, indexed by internal entity
/// number (`e{i}` names).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthPlan {
    pub classes: Vec<usize>,
    pub communities: Vec<usize>,
    /// `(source class, target class)` per relation.
    pub rules: Vec<(usize, usize)>,
    pub num_communities: usize,
}

impl SynthPlan {
    /// Whether a triple over internal entity numbers follows the plan.
    pub fn admits(&self, head: usize, relation: usize, tail: usize) -> bool {
        let (src, dst) = self.rules[relation];
        self.classes[head] == src
            && self.classes[tail] == dst
            && self.communities[head] == self.communities[tail]
    }
}

/// Mean edges per entity in generated datasets.
pub const SYNTH_DENSITY: usize = 5;
/// Target number of entities per (class, community) cell.
const SYNTH_CELL_SIZE: usize = 10;

fn check_synth_args(num_entities: usize, num_relations: usize, num_classes: usize) -> Result<()> {
    if num_classes == 0 || num_relations == 0 {
        return Err(Error::Validation("synth needs at least one class and one relation".into()));
    }
    if num_entities < 2 * num_classes {
        return Err(Error::Validation(format!(
            "synth needs at least 2 entities per class ({num_entities} entities, {num_classes} classes)"
        )));
    }
    Ok(())
}

/// Class and community assignment for [`synth`]. Relation `r` links class
/// `r mod C` to class `(r + 1) mod C`, and only within a community.
pub fn synth_plan(
    num_entities: usize,
    num_relations: usize,
    num_classes: usize,
    seed: u64,
) -> Result<SynthPlan> {
    check_synth_args(num_entities, num_relations, num_classes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let num_communities = (num_entities / (num_classes * SYNTH_CELL_SIZE)).max(1);
    let mut order: Vec<usize> = (0..num_entities).collect();
    order.shuffle(&mut rng);
    let mut classes = vec![0; num_entities];
    let mut communities = vec![0; num_entities];
    for (pos, &e) in order.iter().enumerate() {
        classes[e] = pos % num_classes;
        communities[e] = (pos / num_classes) % num_communities;
    }
    let rules = (0..num_relations)
        .map(|r| (r % num_classes, (r + 1) % num_classes))
        .collect();
    Ok(SynthPlan {
        classes,
        communities,
        rules,
        num_communities,
    })
}

/// Planted-structure dataset: about [`SYNTH_DENSITY`] triples per entity,
/// every one admitted by [`synth_plan`], split 80/10/10, labeled with the
/// planted classes.
pub fn synth(num_entities: usize, num_relations: usize, num_classes: usize, seed: u64) -> Result<Dataset> {
    let plan = synth_plan(num_entities, num_relations, num_classes, seed)?;
    // Separate stream from the plan so changing the density never moves the
    // class assignment.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_7219_1e5a_f00d);

    let mut cells: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    for e in 0..num_entities {
        cells.entry((plan.classes[e], plan.communities[e])).or_default().push(e);
    }
    let mut candidates = Vec::new();
    for (r, &(src, dst)) in plan.rules.iter().enumerate() {
        for k in 0..plan.num_communities {
            let (Some(heads), Some(tails)) = (cells.get(&(src, k)), cells.get(&(dst, k))) else {
                continue;
            };
            for &h in heads {
                for &t in tails {
                    candidates.push((h, r, t));
                }
            }
        }
    }
    candidates.shuffle(&mut rng);
    candidates.truncate(SYNTH_DENSITY * num_entities);

    let n = candidates.len();
    let n_valid = n / 10;
    let n_test = n / 10;
    let n_train = n - n_valid - n_test;
    let (train_raw, rest) = candidates.split_at(n_train);
    let (valid_raw, test_raw) = rest.split_at(n_valid);

    // Intern in first-seen order over train, valid, test; entities that
    // never appear keep trailing ids.
    let mut entity_vocab = Vocab::new();
    let relation_vocab = Vocab::from_names((0..num_relations).map(|r| format!("r{r}")))?;
    let mut convert = |raw: &[(usize, usize, usize)]| -> Vec<Triple> {
        raw.iter()
            .map(|&(h, r, t)| {
                let head = entity_vocab.intern(&format!("e{h}"));
                let tail = entity_vocab.intern(&format!("e{t}"));
                Triple::new(head, r, tail)
            })
            .collect()
    };
    let train = convert(train_raw);
    let valid = convert(valid_raw);
    let test = convert(test_raw);
    for e in 0..num_entities {
        entity_vocab.intern(&format!("e{e}"));
    }

    let class_vocab = Vocab::from_names((0..num_classes).map(|c| format!("c{c}")))?;
    let mut per_entity = vec![None; num_entities];
    for (e, &c) in plan.classes.iter().enumerate() {
        per_entity[entity_vocab.get(&format!("e{e}")).expect("interned")] = Some(c);
    }
    let labels = LabelFile {
        labels: EntityLabels {
            num_classes,
            classes: per_entity,
        },
        classes: class_vocab,
    };
    Dataset::assemble(train, valid, test, entity_vocab, relation_vocab, Some(labels))
}

/// Everything needed to score triples with a trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelArtifact {
    pub config: TrainConfig,
    pub entity_vocab: Vocab,
    pub relation_vocab: Vocab,
    pub class_vocab: Vocab,
    /// Training triples; the encoder propagates over this graph.
    pub train_triples: Vec<Triple>,
    pub params: ModelParams,
}

impl ModelArtifact {
    /// Unlabeled training graph the model was fitted on.
    pub fn graph(&self) -> Result<KnowledgeGraph> {
        KnowledgeGraph::build(
            &self.train_triples,
            self.entity_vocab.len(),
            self.relation_vocab.len(),
            None,
        )
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = String::new();
        header.push_str(ARTIFACT_VERSION);
        header.push('\n');
        let config = self.config.to_pairs();
        header.push_str(&format!("config {}\n", config.len()));
        for (k, v) in config {
            header.push_str(&format!("{k}={v}\n"));
        }
        for (section, vocab) in [
            ("entities", &self.entity_vocab),
            ("relations", &self.relation_vocab),
            ("classes", &self.class_vocab),
        ] {
            header.push_str(&format!("{section} {}\n", vocab.len()));
            for name in vocab.names() {
                header.push_str(name);
                header.push('\n');
            }
        }
        header.push_str(&format!("triples {}\n", self.train_triples.len()));
        for t in &self.train_triples {
            header.push_str(&format!("{} {} {}\n", t.head.0, t.relation.0, t.tail.0));
        }

        let names = self.params.tensor_names();
        let tensors = self.params.tensors();
        header.push_str(&format!("tensors {}\n", tensors.len()));
        let mut payload = Vec::with_capacity(self.params.num_scalars() * 8);
        for (name, m) in names.iter().zip(&tensors) {
            header.push_str(&format!("{name} {} {} {}\n", m.rows(), m.cols(), payload.len()));
            for x in m.data() {
                payload.extend_from_slice(&x.to_le_bytes());
            }
        }
        let digest = hex_digest(&payload);
        header.push_str(&format!("payload {} {digest}\n", payload.len()));

        let mut out = header.into_bytes();
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut reader = HeaderReader { bytes, pos: 0 };
        let version = reader.line()?;
        if version != ARTIFACT_VERSION {
            return Err(Error::VersionMismatch {
                found: version.chars().take(32).collect(),
                expected: ARTIFACT_VERSION.into(),
            });
        }

        let n = reader.section("config")?;
        let mut pairs = Vec::with_capacity(n);
        for _ in 0..n {
            let line = reader.line()?;
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Header(format!("bad config line {line:?}")))?;
            pairs.push((k.to_string(), v.to_string()));
        }
        let config = TrainConfig::from_pairs(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;

        let mut vocab = |section: &str| -> Result<Vocab> {
            let n = reader.section(section)?;
            let names = (0..n).map(|_| reader.line().map(str::to_string)).collect::<Result<Vec<_>>>()?;
            Vocab::from_names(names)
        };
        let entity_vocab = vocab("entities")?;
        let relation_vocab = vocab("relations")?;
        let class_vocab = vocab("classes")?;

        let n = reader.section("triples")?;
        let mut train_triples = Vec::with_capacity(n);
        for _ in 0..n {
            let line = reader.line()?;
            let ids = parse_usizes(line, 3)?;
            train_triples.push(Triple::new(ids[0], ids[1], ids[2]));
        }

        let n = reader.section("tensors")?;
        let mut directory = Vec::with_capacity(n);
        for _ in 0..n {
            let line = reader.line()?;
            let (name, rest) = line
                .split_once(' ')
                .ok_or_else(|| Error::Header(format!("bad tensor line {line:?}")))?;
            let dims = parse_usizes(rest, 3)?;
            directory.push((name.to_string(), (dims[0], dims[1]), dims[2]));
        }

        let line = reader.line()?;
        let mut parts = line.split(' ');
        let (Some("payload"), Some(len), Some(digest), None) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(Error::Header(format!("bad payload line {line:?}")));
        };
        let payload_len: usize = len
            .parse()
            .map_err(|_| Error::Header(format!("bad payload length {len:?}")))?;
        let payload = &bytes[reader.pos..];
        if payload.len() < payload_len {
            return Err(Error::Truncated {
                expected: payload_len,
                found: payload.len(),
            });
        }
        if payload.len() > payload_len {
            return Err(Error::Header(format!(
                "{} trailing bytes after payload",
                payload.len() - payload_len
            )));
        }
        if hex_digest(payload) != digest {
            return Err(Error::Checksum);
        }

        let shape = config.model_shape_for(entity_vocab.len(), relation_vocab.len(), class_vocab.len());
        let mut params = ModelParams::zeros(shape)?;
        let names = params.tensor_names();
        if names.len() != directory.len() {
            return Err(Error::Header(format!(
                "{} tensors listed, configuration implies {}",
                directory.len(),
                names.len()
            )));
        }
        for ((expected_name, target), (name, dims, offset)) in
            names.iter().zip(params.tensors_mut()).zip(&directory)
        {
            if expected_name != name {
                return Err(Error::Header(format!("expected tensor {expected_name}, found {name}")));
            }
            if target.shape() != *dims {
                return Err(Error::ArtifactShape {
                    name: name.clone(),
                    expected: target.shape(),
                    found: *dims,
                });
            }
            let end = offset + target.len() * 8;
            if end > payload.len() {
                return Err(Error::Truncated {
                    expected: end,
                    found: payload.len(),
                });
            }
            for (x, chunk) in target.data_mut().iter_mut().zip(payload[*offset..end].chunks_exact(8)) {
                *x = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
            }
        }

        let artifact = Self {
            config,
            entity_vocab,
            relation_vocab,
            class_vocab,
            train_triples,
            params,
        };
        artifact.graph().map_err(|e| Error::Header(e.to_string()))?;
        Ok(artifact)
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn parse_usizes(s: &str, count: usize) -> Result<Vec<usize>> {
    let values: Vec<usize> = s
        .split(' ')
        .map(|x| x.parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Header(format!("bad integer list {s:?}")))?;
    if values.len() != count {
        return Err(Error::Header(format!("expected {count} integers in {s:?}")));
    }
    Ok(values)
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderReader<'a> {
    fn line(&mut self) -> Result<&'a str> {
        let rest = &self.bytes[self.pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Header("unexpected end of header".into()))?;
        self.pos += end + 1;
        std::str::from_utf8(&rest[..end]).map_err(|_| Error::Header("header is not UTF-8".into()))
    }

    fn section(&mut self, name: &str) -> Result<usize> {
        let line = self.line()?;
        line.strip_prefix(name)
            .and_then(|r| r.strip_prefix(' '))
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| Error::Header(format!("expected `{name} <count>`, found {line:?}")))
    }
}

pub fn save_model(artifact: &ModelArtifact, path: &Path) -> Result<()> {
    write_file(path, &artifact.to_bytes())
}

pub fn load_model(path: &Path) -> Result<ModelArtifact> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    ModelArtifact::from_bytes(&bytes)
}

/// Standard split file names inside a dataset directory.
pub fn split_paths(dir: &Path) -> [PathBuf; 4] {
    ["train.tsv", "valid.tsv", "test.tsv", "labels.tsv"].map(|f| dir.join(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DecoderForm;
    use rand::SeedableRng;

    fn p() -> PathBuf {
        PathBuf::from("fixture.tsv")
    }

    #[test]
    fn minimal_triple_file() {
        let (mut e, mut r) = (Vocab::new(), Vocab::new());
        let t = parse_triples("a\tr\tb\n", &p(), &mut e, &mut r).unwrap();
        assert_eq!(t, vec![Triple::new(0, 0, 1)]);
        assert_eq!((e.len(), r.len()), (2, 1));
        assert!(parse_triples("", &p(), &mut e, &mut r).unwrap().is_empty());
    }

    #[test]
    fn shared_vocab_reuses_ids() {
        let text = "x\tlikes\ty\ny\tlikes\tz\n";
        let (mut e, mut r) = (Vocab::new(), Vocab::new());
        let a = parse_triples(text, &p(), &mut e, &mut r).unwrap();
        let b = parse_triples(text, &p(), &mut e, &mut r).unwrap();
        assert_eq!(a, b);
        assert_eq!(e.names(), &["x", "y", "z"]);
    }

    #[test]
    fn five_line_fixture_with_duplicate() {
        let text = "a\tr\tb\nb\tr\tc\na\tr\tb\nc\ts\ta\nb\ts\tb\n";
        let (mut e, mut r) = (Vocab::new(), Vocab::new());
        let t = parse_triples(text, &p(), &mut e, &mut r).unwrap();
        assert_eq!(t.len(), 5);
        let g = KnowledgeGraph::build(&t, e.len(), r.len(), None).unwrap();
        assert_eq!(g.triples().len(), 4);
    }

    #[test]
    fn wrong_field_count_reports_line() {
        let (mut e, mut r) = (Vocab::new(), Vocab::new());
        let err = parse_triples("a\tr\tb\n\na\tr\n", &p(), &mut e, &mut r).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_triples("a\t\tb\n", &p(), &mut e, &mut r).is_err());
    }

    #[test]
    fn crlf_lines_are_accepted() {
        let (mut e, mut r) = (Vocab::new(), Vocab::new());
        parse_triples("a\tr\tb\r\n", &p(), &mut e, &mut r).unwrap();
        assert_eq!(e.names(), &["a", "b"]);
    }

    #[test]
    fn label_files() {
        let e = Vocab::from_names(["a", "b", "c"]).unwrap();
        let lf = parse_labels("a\tx\nb\ty\n", &p(), &e).unwrap();
        assert_eq!(lf.labels.mask(), vec![true, true, false]);
        assert_eq!(lf.labels.classes, vec![Some(0), Some(1), None]);

        let all = parse_labels("a\tx\nb\ty\nc\tx\n", &p(), &e).unwrap();
        assert!(all.labels.mask().iter().all(|&m| m));

        let empty = parse_labels("", &p(), &e).unwrap();
        assert_eq!(empty.labels.num_classes, 0);
        assert!(empty.into_graph_labels().is_none());

        let err = parse_labels("a\tx\nq\ty\n", &p(), &e).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err:?}");
    }

    #[test]
    fn nearest_names() {
        let v = Vocab::from_names(["paris", "berlin", "parma"]).unwrap();
        assert_eq!(v.nearest("pariss", 2), vec!["paris", "parma"]);
        assert!(Vocab::from_names(["a", "a"]).is_err());
    }

    #[test]
    fn synth_obeys_plan_and_split_sizes() {
        let d = synth(200, 3, 4, 42).unwrap();
        let plan = synth_plan(200, 3, 4, 42).unwrap();
        let internal = |id: usize| -> usize {
            d.entity_vocab.name(id).unwrap()[1..].parse().unwrap()
        };
        let all: Vec<Triple> = d
            .graph
            .triples()
            .iter()
            .chain(&d.valid_triples)
            .chain(&d.test_triples)
            .copied()
            .collect();
        assert_eq!(all.len(), 1000);
        for t in &all {
            assert!(plan.admits(internal(t.head.0), t.relation.0, internal(t.tail.0)));
        }
        assert_eq!((d.graph.triples().len(), d.valid_triples.len(), d.test_triples.len()), (800, 100, 100));
        let labels = d.graph.labels().unwrap();
        for id in 0..200 {
            assert_eq!(labels.classes[id], Some(plan.classes[internal(id)]));
        }
        // splits are disjoint
        for t in d.valid_triples.iter().chain(&d.test_triples) {
            assert!(!d.graph.contains_triple(t));
        }
    }

    #[test]
    fn synth_is_deterministic_and_validated() {
        let dir1 = tempfile::tempdir().unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        synth(120, 2, 3, 7).unwrap().write_dir(dir1.path()).unwrap();
        synth(120, 2, 3, 7).unwrap().write_dir(dir2.path()).unwrap();
        for (a, b) in split_paths(dir1.path()).iter().zip(split_paths(dir2.path())) {
            assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
        }
        assert!(synth(3, 1, 4, 0).is_err());
        assert!(synth(10, 0, 2, 0).is_err());
    }

    #[test]
    fn written_dataset_reloads() {
        let dir = tempfile::tempdir().unwrap();
        let d = synth(80, 2, 2, 3).unwrap();
        d.write_dir(dir.path()).unwrap();
        let [train, valid, test, labels] = split_paths(dir.path());
        let back = Dataset::load(&train, Some(&valid), Some(&test), Some(&labels)).unwrap();
        assert_eq!(back.graph.triples().len(), d.graph.triples().len());
        assert_eq!(back.valid_triples.len(), d.valid_triples.len());
        assert_eq!(back.class_vocab.len(), 2);
        assert!(back.graph.labels().unwrap().num_labeled() > 0);
    }

    fn artifact() -> ModelArtifact {
        let d = synth(40, 2, 2, 1).unwrap();
        let config = TrainConfig {
            hidden_dim: 3,
            decoder_form: DecoderForm::Diagonal,
            relational: true,
            ..TrainConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let params = ModelParams::init(config.model_shape(&d.graph), &mut rng).unwrap();
        ModelArtifact {
            config,
            entity_vocab: d.entity_vocab,
            relation_vocab: d.relation_vocab,
            class_vocab: d.class_vocab,
            train_triples: d.graph.triples().to_vec(),
            params,
        }
    }

    #[test]
    fn artifact_round_trip_is_bit_exact() {
        let a = artifact();
        let bytes = a.to_bytes();
        let back = ModelArtifact::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        for (x, y) in a.params.tensors().iter().zip(back.params.tensors()) {
            let bits = |m: &crate::numeric::Matrix| m.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(x), bits(y));
        }
        assert_eq!(back, a);
    }

    #[test]
    fn artifact_corruption_is_detected() {
        let bytes = artifact().to_bytes();

        let mut flipped = bytes.clone();
        let last = flipped.len() - 5;
        flipped[last] ^= 0x40;
        assert!(matches!(ModelArtifact::from_bytes(&flipped), Err(Error::Checksum)));

        let truncated = &bytes[..bytes.len() - 16];
        assert!(matches!(ModelArtifact::from_bytes(truncated), Err(Error::Truncated { .. })));

        let mut wrong_version = bytes.clone();
        wrong_version[3] = b'9';
        assert!(matches!(ModelArtifact::from_bytes(&wrong_version), Err(Error::VersionMismatch { .. })));

        let text = String::from_utf8_lossy(&bytes).into_owned();
        let header_end = bytes.len() - artifact().params.num_scalars() * 8;
        let header = &text[..header_end];
        let reshaped = header.replacen("embedding 40 3 0", "embedding 3 40 0", 1);
        assert_ne!(reshaped, header);
        let mut reshaped = reshaped.into_bytes();
        reshaped.extend_from_slice(&bytes[header_end..]);
        assert!(matches!(
            ModelArtifact::from_bytes(&reshaped),
            Err(Error::ArtifactShape { .. })
        ));
    }
}
