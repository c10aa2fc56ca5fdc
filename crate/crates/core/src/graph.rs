//! Immutable knowledge-graph store: deduplicated triples, bidirectional
//! neighbor lists and degree-based normalization coefficients.

use std::collections::HashSet;
use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntityId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RelationId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: usize, relation: usize, tail: usize) -> Self {
        Self {
            head: EntityId(head),
            relation: RelationId(relation),
            tail: EntityId(tail),
        }
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, r{}, {})", self.head.0, self.relation.0, self.tail.0)
    }
}

/// Whether the owning entity is the head (`Out`) or the tail (`In`) of the
/// triple that produced a neighbor entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    Out,
    In,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Neighbor {
    pub entity: EntityId,
    pub relation: RelationId,
    pub direction: Direction,
}

/// Per-entity class ids. `None` marks an unlabeled entity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityLabels {
    pub num_classes: usize,
    pub classes: Vec<Option<usize>>,
}

impl EntityLabels {
    pub fn mask(&self) -> Vec<bool> {
        self.classes.iter().map(Option::is_some).collect()
    }

    pub fn num_labeled(&self) -> usize {
        self.classes.iter().filter(|c| c.is_some()).count()
    }
}

#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    num_entities: usize,
    num_relations: usize,
    triples: Vec<Triple>,
    neighbors: Vec<Vec<Neighbor>>,
    triple_set: HashSet<Triple>,
    labels: Option<EntityLabels>,
}

impl KnowledgeGraph {
    /// Validates ids, drops duplicate triples and derives neighbor lists.
    ///
    /// The stored triple list is sorted, so any permutation of the same input
    /// yields an identical graph.
    pub fn build(
        triples: &[Triple],
        num_entities: usize,
        num_relations: usize,
        labels: Option<EntityLabels>,
    ) -> Result<Self> {
        for (line, t) in triples.iter().enumerate() {
            if t.head.0 >= num_entities || t.tail.0 >= num_entities {
                return Err(Error::Validation(format!(
                    "triple #{line} {t} references an entity outside 0..{num_entities}"
                )));
            }
            if t.relation.0 >= num_relations {
                return Err(Error::Validation(format!(
                    "triple #{line} {t} references a relation outside 0..{num_relations}"
                )));
            }
        }
        if let Some(labels) = &labels {
            if labels.classes.len() != num_entities {
                return Err(Error::Validation(format!(
                    "{} labels for {num_entities} entities",
                    labels.classes.len()
                )));
            }
            if let Some((i, c)) = labels
                .classes
                .iter()
                .enumerate()
                .find_map(|(i, c)| c.filter(|&c| c >= labels.num_classes).map(|c| (i, c)))
            {
                return Err(Error::Validation(format!(
                    "entity {i} has class {c} outside 0..{}",
                    labels.num_classes
                )));
            }
        }

        let mut unique: Vec<Triple> = triples.to_vec();
        unique.sort_unstable();
        unique.dedup();

        let mut neighbors = vec![Vec::new(); num_entities];
        for t in &unique {
            neighbors[t.head.0].push(Neighbor {
                entity: t.tail,
                relation: t.relation,
                direction: Direction::Out,
            });
            neighbors[t.tail.0].push(Neighbor {
                entity: t.head,
                relation: t.relation,
                direction: Direction::In,
            });
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }

        let triple_set = unique.iter().copied().collect();
        Ok(Self {
            num_entities,
            num_relations,
            triples: unique,
            neighbors,
            triple_set,
            labels,
        })
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn neighbors(&self, entity: EntityId) -> &[Neighbor] {
        &self.neighbors[entity.0]
    }

    pub fn degree(&self, entity: EntityId) -> usize {
        self.neighbors[entity.0].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.neighbors.iter().map(Vec::len).collect()
    }

    pub fn labels(&self) -> Option<&EntityLabels> {
        self.labels.as_ref()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.as_ref().map_or(0, |l| l.num_classes)
    }

    pub fn contains_triple(&self, t: &Triple) -> bool {
        self.triple_set.contains(t)
    }

    /// Same graph with the labels replaced.
    pub fn with_labels(&self, labels: Option<EntityLabels>) -> Result<Self> {
        Self::build(&self.triples, self.num_entities, self.num_relations, labels)
    }

    /// Computes `c_ij = sqrt((d_i + 1)(d_j + 1))` for every neighbor entry.
    pub fn norm_coefficients(&self) -> NormCoefficients {
        let adjusted: Vec<f64> = self.neighbors.iter().map(|n| n.len() as f64 + 1.0).collect();
        let per_entity = self
            .neighbors
            .iter()
            .enumerate()
            .map(|(i, list)| {
                list.iter()
                    .map(|n| (adjusted[i] * adjusted[n.entity.0]).sqrt())
                    .collect()
            })
            .collect();
        NormCoefficients { per_entity }
    }
}

/// Normalization coefficients aligned with [`KnowledgeGraph::neighbors`].
#[derive(Debug, Clone, PartialEq)]
pub struct NormCoefficients {
    per_entity: Vec<Vec<f64>>,
}

impl NormCoefficients {
    pub fn for_entity(&self, entity: EntityId) -> &[f64] {
        &self.per_entity[entity.0]
    }

    pub fn num_entities(&self) -> usize {
        self.per_entity.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn chain() -> KnowledgeGraph {
        KnowledgeGraph::build(&[Triple::new(0, 0, 1), Triple::new(1, 0, 2)], 3, 1, None).unwrap()
    }

    #[test]
    fn single_edge_neighbors() {
        let g = KnowledgeGraph::build(&[Triple::new(0, 0, 1)], 2, 1, None).unwrap();
        assert_eq!(
            g.neighbors(EntityId(0)),
            &[Neighbor {
                entity: EntityId(1),
                relation: RelationId(0),
                direction: Direction::Out
            }]
        );
        assert_eq!(
            g.neighbors(EntityId(1)),
            &[Neighbor {
                entity: EntityId(0),
                relation: RelationId(0),
                direction: Direction::In
            }]
        );
        assert_eq!(g.degrees(), vec![1, 1]);
        let c = g.norm_coefficients();
        assert_eq!(c.for_entity(EntityId(0)), &[2.0]);
        assert_eq!(c.for_entity(EntityId(1)), &[2.0]);
    }

    #[test]
    fn duplicates_are_stored_once() {
        let t = Triple::new(0, 0, 1);
        let g = KnowledgeGraph::build(&[t, t], 2, 1, None).unwrap();
        assert_eq!(g.triples(), &[t]);
        assert_eq!(g.degrees(), vec![1, 1]);
    }

    #[test]
    fn chain_degrees_and_coefficients() {
        let g = chain();
        assert_eq!(g.degrees(), vec![1, 2, 1]);
        let c = g.norm_coefficients();
        assert!((c.for_entity(EntityId(0))[0] - 6f64.sqrt()).abs() < 1e-15);
        assert_eq!(c.for_entity(EntityId(1)), &[6f64.sqrt(), 6f64.sqrt()]);
    }

    #[test]
    fn isolated_entity_has_no_coefficients() {
        let g = KnowledgeGraph::build(&[Triple::new(0, 0, 1)], 3, 1, None).unwrap();
        assert_eq!(g.degree(EntityId(2)), 0);
        assert!(g.norm_coefficients().for_entity(EntityId(2)).is_empty());
    }

    #[test]
    fn out_of_range_ids_are_rejected() {
        let err = KnowledgeGraph::build(&[Triple::new(0, 0, 1), Triple::new(0, 0, 5)], 2, 1, None)
            .unwrap_err();
        assert!(err.to_string().contains("#1"), "{err}");
        assert!(KnowledgeGraph::build(&[Triple::new(0, 2, 1)], 2, 1, None).is_err());
    }

    #[test]
    fn bad_labels_are_rejected() {
        let labels = EntityLabels {
            num_classes: 2,
            classes: vec![Some(0), Some(2)],
        };
        assert!(KnowledgeGraph::build(&[Triple::new(0, 0, 1)], 2, 1, Some(labels)).is_err());
    }

    #[test]
    fn contains_triple_distinguishes_relations() {
        let g = KnowledgeGraph::build(&[Triple::new(0, 0, 1)], 2, 2, None).unwrap();
        assert!(g.contains_triple(&Triple::new(0, 0, 1)));
        assert!(!g.contains_triple(&Triple::new(0, 1, 1)));
        assert!(!g.contains_triple(&Triple::new(1, 0, 0)));
    }

    #[test]
    fn contains_triple_agrees_with_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let triples: Vec<Triple> = (0..300)
            .map(|_| Triple::new(rng.gen_range(0..20), rng.gen_range(0..3), rng.gen_range(0..20)))
            .collect();
        let g = KnowledgeGraph::build(&triples, 20, 3, None).unwrap();
        let scan = |t: &Triple| g.triples().iter().any(|s| s == t);
        for t in g.triples() {
            assert!(g.contains_triple(t));
        }
        for _ in 0..1000 {
            let t = Triple::new(rng.gen_range(0..20), rng.gen_range(0..3), rng.gen_range(0..20));
            assert_eq!(g.contains_triple(&t), scan(&t));
        }
    }

    proptest! {
        #[test]
        fn degree_sum_and_order_independence(
            raw in proptest::collection::vec((0usize..8, 0usize..3, 0usize..8), 0..40),
            seed in any::<u64>(),
        ) {
            let triples: Vec<Triple> = raw.iter().map(|&(h, r, t)| Triple::new(h, r, t)).collect();
            let g = KnowledgeGraph::build(&triples, 8, 3, None).unwrap();
            prop_assert_eq!(g.degrees().iter().sum::<usize>(), 2 * g.triples().len());

            let mut shuffled = triples.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let g2 = KnowledgeGraph::build(&shuffled, 8, 3, None).unwrap();
            prop_assert_eq!(g.triples(), g2.triples());
            for e in 0..8 {
                prop_assert_eq!(g.neighbors(EntityId(e)), g2.neighbors(EntityId(e)));
            }

            let c = g.norm_coefficients();
            for e in 0..8 {
                for (n, &cij) in g.neighbors(EntityId(e)).iter().zip(c.for_entity(EntityId(e))) {
                    prop_assert!(cij > 0.0);
                    let back = g.neighbors(n.entity).iter().position(|m| m.entity == EntityId(e)).unwrap();
                    prop_assert_eq!(cij, c.for_entity(n.entity)[back]);
                }
            }
        }
    }
}
