//! Hierarchical vocabulary of binary words built with k-majority clustering.
//!
//! Nodes are stored in pre-order; leaves carry a word id (their rank among leaves in
//! pre-order) and an idf weight.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::bow::BowVector;
use crate::features::{hamming_distance, Descriptor, FrameFeatures, DESCRIPTOR_BITS};
use crate::io::{read_array, read_f64, read_u16, read_u32, read_u8, FormatError};

pub const VOCAB_MAGIC: &[u8; 4] = b"XVVC";
pub const VOCAB_VERSION: u16 = 1;
const NO_PARENT: u32 = u32::MAX;
const MAX_KMAJORITY_ITERS: usize = 15;

/// Levels above the leaves at which the direct index groups features.
pub const DEFAULT_DIRECT_INDEX_LEVELS_UP: u8 = 2;

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("branching factor must be at least 2 (got {0})")]
    BranchingFactor(usize),
    #[error("depth must be at least 1 (got {0})")]
    Depth(usize),
    #[error(transparent)]
    Format(#[from] FormatError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Word {
    pub id: u32,
    pub idf: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VocabNode {
    pub parent: Option<u32>,
    pub children: Vec<u32>,
    pub center: Descriptor,
    pub depth: u8,
    pub word: Option<Word>,
}

impl VocabNode {
    pub fn is_leaf(&self) -> bool {
        self.word.is_some()
    }
}

/// Per-frame map from a vocabulary node to the indices of the features routed through it.
pub type DirectIndex = BTreeMap<u32, Vec<u32>>;

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    branching: u8,
    depth: u8,
    nodes: Vec<VocabNode>,
    leaves: Vec<u32>,
    direct_index_levels_up: u8,
}

impl Vocabulary {
    pub fn branching_factor(&self) -> usize {
        self.branching as usize
    }

    pub fn depth(&self) -> usize {
        self.depth as usize
    }

    pub fn nodes(&self) -> &[VocabNode] {
        &self.nodes
    }

    pub fn node(&self, id: u32) -> &VocabNode {
        &self.nodes[id as usize]
    }

    pub fn word_count(&self) -> usize {
        self.leaves.len()
    }

    /// Node id of the leaf carrying `word`.
    pub fn leaf_of_word(&self, word: u32) -> u32 {
        self.leaves[word as usize]
    }

    pub fn direct_index_levels_up(&self) -> u8 {
        self.direct_index_levels_up
    }

    pub fn set_direct_index_levels_up(&mut self, levels: u8) {
        self.direct_index_levels_up = levels;
    }

    fn direct_index_depth(&self) -> u8 {
        self.depth.saturating_sub(self.direct_index_levels_up)
    }

    /// Greedy descent: at each level follow the child whose center is nearest
    /// (ties to the lowest child). Returns the node ids visited, root first.
    pub fn descend(&self, d: &Descriptor) -> Vec<u32> {
        let mut path = vec![0u32];
        let mut current = 0u32;
        while let Some(next) = self.nearest_child(current, d) {
            path.push(next);
            current = next;
        }
        path
    }

    fn nearest_child(&self, node: u32, d: &Descriptor) -> Option<u32> {
        self.nodes[node as usize]
            .children
            .iter()
            .copied()
            .min_by_key(|&c| hamming_distance(&self.nodes[c as usize].center, d))
    }

    /// Word reached by `d`.
    pub fn word_of(&self, d: &Descriptor) -> Word {
        let leaf = *self.descend(d).last().expect("path contains the root");
        self.nodes[leaf as usize]
            .word
            .expect("descent always ends at a leaf")
    }

    /// Bag-of-words vector (tf·idf, L1-normalized) and direct index for a frame.
    pub fn transform(&self, frame: &FrameFeatures) -> (BowVector, DirectIndex) {
        let di_depth = self.direct_index_depth() as usize;
        let mut tf: BTreeMap<u32, (u32, f64)> = BTreeMap::new();
        let mut direct: DirectIndex = BTreeMap::new();
        for (i, d) in frame.descriptors().enumerate() {
            let path = self.descend(d);
            let leaf = *path.last().expect("path contains the root");
            let word = self.nodes[leaf as usize].word.expect("leaf");
            tf.entry(word.id).or_insert((0, word.idf)).0 += 1;
            let di_node = path[di_depth.min(path.len() - 1)];
            direct.entry(di_node).or_default().push(i as u32);
        }
        let bow = BowVector::from_entries(tf.into_iter().map(|(w, (n, idf))| (w, n as f64 * idf)));
        (bow.normalized(), direct)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(VOCAB_MAGIC)?;
        w.write_all(&VOCAB_VERSION.to_le_bytes())?;
        w.write_all(&[self.branching, self.depth])?;
        w.write_all(&(self.nodes.len() as u32).to_le_bytes())?;
        for node in &self.nodes {
            w.write_all(&node.parent.unwrap_or(NO_PARENT).to_le_bytes())?;
            w.write_all(&[node.is_leaf() as u8])?;
            w.write_all(&node.center.to_bytes())?;
            if let Some(word) = node.word {
                w.write_all(&word.idf.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, FormatError> {
        let magic: [u8; 4] = read_array(&mut r)?;
        if &magic != VOCAB_MAGIC {
            return Err(FormatError::BadMagic {
                expected: *VOCAB_MAGIC,
                found: magic,
            });
        }
        let version = read_u16(&mut r)?;
        if version != VOCAB_VERSION {
            return Err(FormatError::Version {
                expected: VOCAB_VERSION,
                found: version,
            });
        }
        let branching = read_u8(&mut r)?;
        let depth = read_u8(&mut r)?;
        let count = read_u32(&mut r)? as usize;
        if count == 0 {
            return Err(FormatError::Invalid("vocabulary has no nodes".into()));
        }
        let mut nodes: Vec<VocabNode> = Vec::with_capacity(count.min(1 << 20));
        let mut leaves = Vec::new();
        for id in 0..count {
            let parent = read_u32(&mut r)?;
            let is_leaf = read_u8(&mut r)? != 0;
            let center = Descriptor::from_bytes(&read_array(&mut r)?);
            let parent = match (id, parent) {
                (0, NO_PARENT) => None,
                (0, _) => return Err(FormatError::Invalid("first node must be the root".into())),
                (_, p) if (p as usize) < id && !nodes[p as usize].is_leaf() => Some(p),
                (_, p) => {
                    return Err(FormatError::Invalid(format!(
                        "node {id} has invalid parent {p}"
                    )))
                }
            };
            let node_depth = parent.map_or(0, |p| nodes[p as usize].depth + 1);
            let word = if is_leaf {
                let idf = read_f64(&mut r)?;
                if !idf.is_finite() || idf < 0.0 {
                    return Err(FormatError::Invalid(format!("leaf {id} has idf {idf}")));
                }
                let w = Word {
                    id: leaves.len() as u32,
                    idf,
                };
                leaves.push(id as u32);
                Some(w)
            } else {
                None
            };
            if let Some(p) = parent {
                let siblings = &mut nodes[p as usize].children;
                siblings.push(id as u32);
                if siblings.len() > branching as usize {
                    return Err(FormatError::Invalid(format!(
                        "node {p} has more than {branching} children"
                    )));
                }
            }
            nodes.push(VocabNode {
                parent,
                children: Vec::new(),
                center,
                depth: node_depth,
                word,
            });
        }
        if let Some(bad) = nodes.iter().position(|n| !n.is_leaf() && n.children.is_empty()) {
            return Err(FormatError::Invalid(format!("internal node {bad} has no children")));
        }
        Ok(Vocabulary {
            branching,
            depth,
            nodes,
            leaves,
            direct_index_levels_up: DEFAULT_DIRECT_INDEX_LEVELS_UP,
        })
    }
}

/// Bitwise majority vote; ties resolve to 0.
pub fn majority(descriptors: impl IntoIterator<Item = Descriptor>) -> Descriptor {
    let mut counts = [0u32; DESCRIPTOR_BITS];
    let mut n = 0u32;
    for d in descriptors {
        n += 1;
        for (k, &word) in d.words().iter().enumerate() {
            let mut bits = word;
            while bits != 0 {
                let b = bits.trailing_zeros() as usize;
                counts[64 * k + b] += 1;
                bits &= bits - 1;
            }
        }
    }
    let mut out = Descriptor::ZERO;
    for (i, &c) in counts.iter().enumerate() {
        if 2 * c > n {
            out.set_bit(i, true);
        }
    }
    out
}

struct Builder<'a> {
    training: &'a [Descriptor],
    branching: usize,
    depth: usize,
    seed: u64,
    nodes: Vec<VocabNode>,
}

impl Builder<'_> {
    fn grow(&mut self, members: Vec<usize>, parent: Option<u32>, level: usize) -> u32 {
        let id = self.nodes.len() as u32;
        let center = majority(members.iter().map(|&i| self.training[i]));
        self.nodes.push(VocabNode {
            parent,
            children: Vec::new(),
            center,
            depth: level as u8,
            word: None,
        });
        let clusters = if level < self.depth && members.len() >= self.branching {
            self.k_majority(&members, id)
        } else {
            Vec::new()
        };
        if clusters.len() < 2 {
            // idf filled in after the tree is complete
            self.nodes[id as usize].word = Some(Word { id: 0, idf: 0.0 });
            return id;
        }
        for cluster in clusters {
            let child = self.grow(cluster, Some(id), level + 1);
            self.nodes[id as usize].children.push(child);
        }
        id
    }

    /// Splits `members` into at most `branching` non-empty clusters.
    fn k_majority(&self, members: &[usize], node_id: u32) -> Vec<Vec<usize>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(node_id as u64);
        let descs: Vec<Descriptor> = members.iter().map(|&i| self.training[i]).collect();

        // k-means++ seeding with squared Hamming distance
        let mut centers = vec![descs[rng.gen_range(0..descs.len())]];
        let mut nearest: Vec<u64> = descs
            .iter()
            .map(|d| (hamming_distance(d, &centers[0]) as u64).pow(2))
            .collect();
        while centers.len() < self.branching {
            let total: u64 = nearest.iter().sum();
            if total == 0 {
                break;
            }
            let mut target = rng.gen_range(0..total);
            let pick = nearest
                .iter()
                .position(|&w| {
                    if target < w {
                        true
                    } else {
                        target -= w;
                        false
                    }
                })
                .expect("target lies below the total weight");
            let c = descs[pick];
            for (n, d) in nearest.iter_mut().zip(&descs) {
                *n = (*n).min((hamming_distance(d, &c) as u64).pow(2));
            }
            centers.push(c);
        }

        let mut assignment = vec![usize::MAX; descs.len()];
        for _ in 0..MAX_KMAJORITY_ITERS {
            let mut changed = false;
            for (a, d) in assignment.iter_mut().zip(&descs) {
                let best = (0..centers.len())
                    .min_by_key(|&c| hamming_distance(d, &centers[c]))
                    .expect("at least one center");
                if *a != best {
                    *a = best;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
            for (c, center) in centers.iter_mut().enumerate() {
                let in_cluster: Vec<Descriptor> = descs
                    .iter()
                    .zip(&assignment)
                    .filter(|(_, &a)| a == c)
                    .map(|(d, _)| *d)
                    .collect();
                if !in_cluster.is_empty() {
                    *center = majority(in_cluster);
                }
            }
        }

        let mut clusters = vec![Vec::new(); centers.len()];
        for (&m, &a) in members.iter().zip(&assignment) {
            clusters[a].push(m);
        }
        clusters.retain(|c| !c.is_empty());
        clusters
    }
}

/// Trains a vocabulary of `branching`-ary depth-`depth` tree over `training`.
pub fn build_vocabulary(
    training: &[Descriptor],
    branching: usize,
    depth: usize,
    seed: u64,
) -> Result<Vocabulary, VocabError> {
    if training.is_empty() {
        return Err(VocabError::EmptyTrainingSet);
    }
    if !(2..=u8::MAX as usize).contains(&branching) {
        return Err(VocabError::BranchingFactor(branching));
    }
    if !(1..=u8::MAX as usize).contains(&depth) {
        return Err(VocabError::Depth(depth));
    }
    let mut builder = Builder {
        training,
        branching,
        depth,
        seed,
        nodes: Vec::new(),
    };
    builder.grow((0..training.len()).collect(), None, 0);

    let mut leaves = Vec::new();
    for (id, node) in builder.nodes.iter_mut().enumerate() {
        if let Some(word) = node.word.as_mut() {
            word.id = leaves.len() as u32;
            leaves.push(id as u32);
        }
    }
    let mut vocab = Vocabulary {
        branching: branching as u8,
        depth: depth as u8,
        nodes: builder.nodes,
        leaves,
        direct_index_levels_up: DEFAULT_DIRECT_INDEX_LEVELS_UP,
    };

    let mut hits = vec![0u64; vocab.word_count()];
    for d in training {
        hits[vocab.word_of(d).id as usize] += 1;
    }
    let n_train = training.len() as f64;
    for (word, &n) in hits.iter().enumerate() {
        let leaf = vocab.leaves[word] as usize;
        let idf = (n_train / n.max(1) as f64).ln();
        vocab.nodes[leaf].word.as_mut().expect("leaf").idf = idf.max(0.0);
    }
    Ok(vocab)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{InterestPoint, LocalFeature};

    fn frame_of(descs: &[Descriptor]) -> FrameFeatures {
        FrameFeatures::new(
            0,
            descs
                .iter()
                .map(|d| LocalFeature {
                    point: InterestPoint::default(),
                    descriptor: *d,
                })
                .collect(),
        )
    }

    fn random_corpus(n: usize, seed: u64) -> Vec<Descriptor> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| Descriptor::from_words(rng.gen())).collect()
    }

    #[test]
    fn majority_ties_to_zero() {
        let a = Descriptor::from_set_bits(&[0, 1]);
        let b = Descriptor::from_set_bits(&[1, 2]);
        assert_eq!(majority([a, b]), Descriptor::from_set_bits(&[1]));
        let c = Descriptor::from_set_bits(&[0, 2]);
        assert_eq!(majority([a, b, c]), Descriptor::from_set_bits(&[0, 1, 2]));
    }

    #[test]
    fn two_tight_clusters_split_into_two_leaves() {
        let low: Vec<usize> = (0..100).collect();
        let high: Vec<usize> = (150..250).collect();
        let a1 = Descriptor::from_set_bits(&low);
        let a2 = Descriptor::from_set_bits(&low[1..]);
        let b1 = Descriptor::from_set_bits(&high);
        let b2 = Descriptor::from_set_bits(&[&high[..], &[0]].concat());
        // brute force: majority of {a1,a2} ties at bit 0 -> 0
        let expect_a = Descriptor::from_set_bits(&low[1..]);
        let expect_b = Descriptor::from_set_bits(&high);
        for seed in 0..8 {
            let v = build_vocabulary(&[a1, b1, a2, b2], 2, 1, seed).unwrap();
            assert_eq!(v.word_count(), 2, "seed {seed}");
            let mut centers: Vec<Descriptor> = v
                .nodes()
                .iter()
                .filter(|n| n.is_leaf())
                .map(|n| n.center)
                .collect();
            centers.sort();
            let mut expected = vec![expect_a, expect_b];
            expected.sort();
            assert_eq!(centers, expected, "seed {seed}");
            assert_eq!(v.word_of(&a1), v.word_of(&a2));
            assert_ne!(v.word_of(&a1).id, v.word_of(&b1).id);
            // each leaf holds half the corpus: ln(4/2)
            for n in v.nodes().iter().filter(|n| n.is_leaf()) {
                assert!((n.word.unwrap().idf - 2f64.ln()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identical_training_set_gives_single_word_with_zero_idf() {
        let d = Descriptor::from_set_bits(&[3, 70, 200]);
        let v = build_vocabulary(&[d; 10], 10, 3, 1).unwrap();
        assert_eq!(v.word_count(), 1);
        assert_eq!(v.word_of(&Descriptor::ONES).id, 0);
        assert_eq!(v.node(v.leaf_of_word(0)).word.unwrap().idf, 0.0);
    }

    #[test]
    fn empty_training_rejected() {
        assert!(matches!(
            build_vocabulary(&[], 10, 6, 0),
            Err(VocabError::EmptyTrainingSet)
        ));
        assert!(build_vocabulary(&[Descriptor::ZERO], 1, 6, 0).is_err());
        assert!(build_vocabulary(&[Descriptor::ZERO], 2, 0, 0).is_err());
    }

    #[test]
    fn tree_shape_invariants() {
        let corpus = random_corpus(3000, 5);
        let v = build_vocabulary(&corpus, 6, 4, 11).unwrap();
        let mut ids = std::collections::HashSet::new();
        for (i, n) in v.nodes().iter().enumerate() {
            if n.is_leaf() {
                assert!(n.children.is_empty());
                assert!(ids.insert(n.word.unwrap().id));
                let idf = n.word.unwrap().idf;
                assert!(idf.is_finite() && idf >= 0.0);
            } else {
                assert!((1..=6).contains(&n.children.len()), "node {i}");
            }
            assert!(n.depth as usize <= 4);
            for &c in &n.children {
                assert!(c as usize > i, "pre-order");
            }
        }
        assert!(v.word_count() > 100);
    }

    #[test]
    fn deterministic_per_seed() {
        let corpus = random_corpus(500, 9);
        let a = build_vocabulary(&corpus, 5, 3, 42).unwrap();
        let b = build_vocabulary(&corpus, 5, 3, 42).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
    }

    #[test]
    fn transform_empty_frame() {
        let v = build_vocabulary(&random_corpus(100, 1), 4, 2, 0).unwrap();
        let (bow, di) = v.transform(&FrameFeatures::empty(3));
        assert!(bow.is_empty());
        assert!(di.is_empty());
    }

    #[test]
    fn transform_identical_multisets_equal() {
        let corpus = random_corpus(400, 2);
        let v = build_vocabulary(&corpus, 4, 3, 0).unwrap();
        let f1 = frame_of(&corpus[..50]);
        let mut rev = corpus[..50].to_vec();
        rev.reverse();
        let f2 = frame_of(&rev);
        assert_eq!(v.transform(&f1).0, v.transform(&f2).0);
    }

    #[test]
    fn transform_single_leaf_centroid() {
        let corpus = random_corpus(400, 3);
        let v = build_vocabulary(&corpus, 4, 3, 0).unwrap();
        // a leaf whose center the greedy descent reaches and whose idf is positive
        let leaf = v
            .nodes()
            .iter()
            .position(|n| {
                n.word.is_some_and(|w| w.idf > 0.0) && v.word_of(&n.center).id == n.word.unwrap().id
            })
            .expect("some leaf center routes to itself");
        let center = v.node(leaf as u32).center;
        let (bow, di) = v.transform(&frame_of(&[center]));
        assert_eq!(bow.len(), 1);
        let word = v.node(leaf as u32).word.unwrap().id;
        assert!((bow.get(word).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(di.values().flatten().count(), 1);
    }

    #[test]
    fn direct_index_covers_all_features_at_configured_depth() {
        let corpus = random_corpus(2000, 4);
        let v = build_vocabulary(&corpus, 4, 4, 0).unwrap();
        let frame = frame_of(&corpus[..200]);
        let (_, di) = v.transform(&frame);
        let mut all: Vec<u32> = di.values().flatten().copied().collect();
        all.sort();
        assert_eq!(all, (0..200).collect::<Vec<u32>>());
        for (&node, members) in &di {
            for &m in members {
                let path = v.descend(&corpus[m as usize]);
                assert!(path.contains(&node));
            }
            assert!(v.node(node).depth <= 2);
        }
    }

    #[test]
    fn file_round_trip() {
        let v = build_vocabulary(&random_corpus(600, 8), 5, 3, 1).unwrap();
        let bytes = v.to_bytes();
        assert_eq!(&bytes[..4], b"XVVC");
        let back = Vocabulary::read_from(&bytes[..]).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn file_rejects_bad_magic_and_truncation() {
        let v = build_vocabulary(&random_corpus(100, 8), 3, 2, 1).unwrap();
        let mut bytes = v.to_bytes();
        assert!(Vocabulary::read_from(&bytes[..bytes.len() - 1]).is_err());
        bytes[0] = b'Y';
        assert!(matches!(
            Vocabulary::read_from(&bytes[..]),
            Err(FormatError::BadMagic { .. })
        ));
    }
}
