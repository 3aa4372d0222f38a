//! Binary bag-of-words place recognition: a hierarchical vocabulary built by
//! k-medians in Hamming space, sparse TF-IDF vectors, L1 scoring and loop
//! queries against a keyframe map.

use std::cmp::Ordering;
use std::io::{Cursor, Read};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::descriptor::{Descriptor, DESCRIPTOR_BITS};
use crate::map::TopoMetricMap;
use crate::sim::Frame;

pub const VOCAB_MAGIC: &[u8; 8] = b"VTRVOC01";

const KMEDIANS_ITERS: usize = 12;

#[derive(Debug, Error)]
pub enum BowError {
    #[error("no descriptors provided")]
    NoDescriptors,
    #[error("invalid vocabulary shape: branching {branching}, depth {depth}")]
    BadShape { branching: u32, depth: u32 },
    #[error("not a vocabulary file (bad magic)")]
    BadMagic,
    #[error("vocabulary file is truncated")]
    Truncated,
    #[error("vocabulary node {0} references a missing child")]
    DanglingChild(u32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct VocabNode {
    pub descriptor: Descriptor,
    pub children: Vec<u32>,
    /// Word index for leaves.
    pub word: Option<u32>,
    /// IDF weight, meaningful on leaves only.
    pub weight: f64,
}

/// Vocabulary tree. Node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    pub branching: u32,
    pub depth: u32,
    pub seed: u64,
    pub nodes: Vec<VocabNode>,
    /// Node index of each word.
    words: Vec<u32>,
}

fn majority(descs: &[Descriptor], members: &[usize]) -> Descriptor {
    let mut counts = [0u32; DESCRIPTOR_BITS as usize];
    for &m in members {
        let d = &descs[m];
        for (i, c) in counts.iter_mut().enumerate() {
            *c += d.bit(i) as u32;
        }
    }
    let half = members.len() as u32;
    let mut out = Descriptor::ZERO;
    for (i, c) in counts.iter().enumerate() {
        if 2 * c > half {
            out.set_bit(i, true);
        }
    }
    out
}

fn nearest(centers: &[Descriptor], d: &Descriptor) -> usize {
    let mut best = 0;
    let mut best_d = u32::MAX;
    for (i, c) in centers.iter().enumerate() {
        let h = c.hamming(d);
        if h < best_d {
            best_d = h;
            best = i;
        }
    }
    best
}

/// k-medians++ seeding followed by Lloyd-style majority-bit updates.
fn kmedians(
    descs: &[Descriptor],
    members: &[usize],
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<usize>> {
    let mut centers = vec![descs[*members.choose(rng).unwrap()]];
    while centers.len() < k {
        let weights: Vec<f64> = members
            .iter()
            .map(|&m| {
                let h = centers.iter().map(|c| c.hamming(&descs[m])).min().unwrap() as f64;
                h * h
            })
            .collect();
        let total: f64 = weights.iter().sum();
        if total == 0.0 {
            break;
        }
        let mut target = rng.random::<f64>() * total;
        let mut pick = members[members.len() - 1];
        for (&m, w) in members.iter().zip(&weights) {
            if target < *w {
                pick = m;
                break;
            }
            target -= w;
        }
        centers.push(descs[pick]);
    }

    let mut assign: Vec<usize> = members
        .iter()
        .map(|&m| nearest(&centers, &descs[m]))
        .collect();
    for _ in 0..KMEDIANS_ITERS {
        let groups = group(members, &assign, centers.len());
        centers = groups
            .iter()
            .zip(&centers)
            .map(|(g, c)| if g.is_empty() { *c } else { majority(descs, g) })
            .collect();
        let next: Vec<usize> = members
            .iter()
            .map(|&m| nearest(&centers, &descs[m]))
            .collect();
        if next == assign {
            break;
        }
        assign = next;
    }
    group(members, &assign, centers.len())
        .into_iter()
        .filter(|g| !g.is_empty())
        .collect()
}

fn group(members: &[usize], assign: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut groups = vec![Vec::new(); k];
    for (&m, &a) in members.iter().zip(assign) {
        groups[a].push(m);
    }
    groups
}

impl Vocabulary {
    /// Hierarchical k-medians over `descriptors`. Deterministic for a seed.
    pub fn train(
        descriptors: &[Descriptor],
        branching: u32,
        depth: u32,
        seed: u64,
    ) -> Result<Self, BowError> {
        if descriptors.is_empty() {
            return Err(BowError::NoDescriptors);
        }
        if branching < 2 || depth < 1 {
            return Err(BowError::BadShape { branching, depth });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut vocab = Vocabulary {
            branching,
            depth,
            seed,
            nodes: vec![VocabNode {
                descriptor: Descriptor::ZERO,
                children: Vec::new(),
                word: None,
                weight: 0.0,
            }],
            words: Vec::new(),
        };
        let all: Vec<usize> = (0..descriptors.len()).collect();
        let mut leaf_counts = Vec::new();
        vocab.grow(0, descriptors, &all, 0, &mut rng, &mut leaf_counts);
        let n = descriptors.len() as f64;
        for (w, &node) in vocab.words.iter().enumerate() {
            vocab.nodes[node as usize].weight = (1.0 + n / leaf_counts[w] as f64).ln();
        }
        Ok(vocab)
    }

    fn grow(
        &mut self,
        node: usize,
        descs: &[Descriptor],
        members: &[usize],
        level: u32,
        rng: &mut ChaCha8Rng,
        leaf_counts: &mut Vec<usize>,
    ) {
        let distinct = {
            let mut seen: Vec<Descriptor> = members.iter().map(|&m| descs[m]).collect();
            seen.sort_unstable();
            seen.dedup();
            seen.len()
        };
        let groups = if level < self.depth && distinct > 1 {
            kmedians(descs, members, (self.branching as usize).min(distinct), rng)
        } else {
            Vec::new()
        };
        if groups.len() < 2 {
            self.nodes[node].word = Some(self.words.len() as u32);
            self.words.push(node as u32);
            leaf_counts.push(members.len());
            return;
        }
        for g in groups {
            let idx = self.nodes.len();
            self.nodes.push(VocabNode {
                descriptor: majority(descs, &g),
                children: Vec::new(),
                word: None,
                weight: 0.0,
            });
            self.nodes[node].children.push(idx as u32);
            self.grow(idx, descs, &g, level + 1, rng, leaf_counts);
        }
    }

    /// Single-level vocabulary with the given word centroids and weights.
    pub fn flat(words: Vec<(Descriptor, f64)>) -> Self {
        let mut nodes = vec![VocabNode {
            descriptor: Descriptor::ZERO,
            children: (1..=words.len() as u32).collect(),
            word: None,
            weight: 0.0,
        }];
        let mut ids = Vec::new();
        for (i, (d, w)) in words.into_iter().enumerate() {
            ids.push(nodes.len() as u32);
            nodes.push(VocabNode {
                descriptor: d,
                children: Vec::new(),
                word: Some(i as u32),
                weight: w,
            });
        }
        Vocabulary {
            branching: ids.len().max(2) as u32,
            depth: 1,
            seed: 0,
            nodes,
            words: ids,
        }
    }

    pub fn word_count(&self) -> usize {
        self.words.len()
    }

    pub fn word_descriptor(&self, word: u32) -> Descriptor {
        self.nodes[self.words[word as usize] as usize].descriptor
    }

    pub fn word_weight(&self, word: u32) -> f64 {
        self.nodes[self.words[word as usize] as usize].weight
    }

    /// Descends by minimum Hamming distance, ties to the lowest child index.
    pub fn quantize(&self, d: &Descriptor) -> u32 {
        let mut node = &self.nodes[0];
        while !node.children.is_empty() {
            let mut best = node.children[0];
            let mut best_d = u32::MAX;
            for &c in &node.children {
                let h = self.nodes[c as usize].descriptor.hamming(d);
                if h < best_d {
                    best_d = h;
                    best = c;
                }
            }
            node = &self.nodes[best as usize];
        }
        node.word.expect("leaf carries a word")
    }

    pub fn to_bow(&self, descriptors: &[Descriptor]) -> Result<BowVector, BowError> {
        if descriptors.is_empty() {
            return Err(BowError::NoDescriptors);
        }
        let mut counts = vec![0u32; self.words.len()];
        for d in descriptors {
            counts[self.quantize(d) as usize] += 1;
        }
        let n = descriptors.len() as f64;
        Ok(BowVector::from_weights(
            counts
                .iter()
                .enumerate()
                .filter(|(_, c)| **c > 0)
                .map(|(w, c)| (w as u32, *c as f64 / n * self.word_weight(w as u32))),
        ))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(VOCAB_MAGIC);
        out.write_u32::<LittleEndian>(self.branching).unwrap();
        out.write_u32::<LittleEndian>(self.depth).unwrap();
        out.write_u64::<LittleEndian>(self.seed).unwrap();
        out.write_u32::<LittleEndian>(self.nodes.len() as u32)
            .unwrap();
        for n in &self.nodes {
            out.extend_from_slice(&n.descriptor.to_bytes());
            out.write_f64::<LittleEndian>(n.weight).unwrap();
            out.write_u32::<LittleEndian>(n.word.unwrap_or(u32::MAX))
                .unwrap();
            out.write_u32::<LittleEndian>(n.children.len() as u32)
                .unwrap();
            for c in &n.children {
                out.write_u32::<LittleEndian>(*c).unwrap();
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, BowError> {
        let mut r = Cursor::new(bytes);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| BowError::Truncated)?;
        if &magic != VOCAB_MAGIC {
            return Err(BowError::BadMagic);
        }
        let t = |_| BowError::Truncated;
        let branching = r.read_u32::<LittleEndian>().map_err(t)?;
        let depth = r.read_u32::<LittleEndian>().map_err(t)?;
        let seed = r.read_u64::<LittleEndian>().map_err(t)?;
        let count = r.read_u32::<LittleEndian>().map_err(t)?;
        let mut nodes = Vec::with_capacity(count.min(1 << 20) as usize);
        let mut words = Vec::new();
        for i in 0..count {
            let mut d = [0u8; 32];
            r.read_exact(&mut d).map_err(t)?;
            let weight = r.read_f64::<LittleEndian>().map_err(t)?;
            let word = r.read_u32::<LittleEndian>().map_err(t)?;
            let nc = r.read_u32::<LittleEndian>().map_err(t)?;
            let mut children = Vec::with_capacity(nc.min(1 << 16) as usize);
            for _ in 0..nc {
                let c = r.read_u32::<LittleEndian>().map_err(t)?;
                if c >= count {
                    return Err(BowError::DanglingChild(i));
                }
                children.push(c);
            }
            let word = (word != u32::MAX).then_some(word);
            if let Some(w) = word {
                if words.len() <= w as usize {
                    words.resize(w as usize + 1, u32::MAX);
                }
                words[w as usize] = i;
            }
            nodes.push(VocabNode {
                descriptor: Descriptor::from_bytes(&d),
                children,
                word,
                weight,
            });
        }
        if nodes.is_empty() || words.contains(&u32::MAX) {
            return Err(BowError::Truncated);
        }
        Ok(Vocabulary {
            branching,
            depth,
            seed,
            nodes,
            words,
        })
    }

    /// Content hash embedded in map headers.
    pub fn content_hash(&self) -> u64 {
        let digest = Sha256::digest(self.to_bytes());
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }
}

/// Sparse L1-normalized word histogram, sorted by word id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BowVector(Vec<(u32, f64)>);

impl BowVector {
    /// Normalizes to unit L1 norm; non-positive weights are dropped and
    /// repeated words are summed.
    pub fn from_weights<I: IntoIterator<Item = (u32, f64)>>(weights: I) -> Self {
        let mut v: Vec<(u32, f64)> = weights.into_iter().filter(|(_, w)| *w > 0.0).collect();
        v.sort_by_key(|(w, _)| *w);
        let mut merged: Vec<(u32, f64)> = Vec::with_capacity(v.len());
        for (w, x) in v {
            match merged.last_mut() {
                Some((lw, lx)) if *lw == w => *lx += x,
                _ => merged.push((w, x)),
            }
        }
        let total: f64 = merged.iter().map(|(_, x)| x).sum();
        if total > 0.0 {
            for (_, x) in &mut merged {
                *x /= total;
            }
        }
        BowVector(merged)
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.0
    }

    pub fn get(&self, word: u32) -> Option<f64> {
        self.0
            .binary_search_by_key(&word, |(w, _)| *w)
            .ok()
            .map(|i| self.0[i].1)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// L1 score `1 - 0.5 * sum |a_w - b_w|`, in `[0, 1]`.
pub fn similarity(a: &BowVector, b: &BowVector) -> f64 {
    let (a, b) = (&a.0, &b.0);
    let (mut i, mut j) = (0, 0);
    let mut l1 = 0.0;
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            Ordering::Less => {
                l1 += a[i].1;
                i += 1;
            }
            Ordering::Greater => {
                l1 += b[j].1;
                j += 1;
            }
            Ordering::Equal => {
                l1 += (a[i].1 - b[j].1).abs();
                i += 1;
                j += 1;
            }
        }
    }
    l1 += a[i..].iter().map(|(_, x)| x).sum::<f64>();
    l1 += b[j..].iter().map(|(_, x)| x).sum::<f64>();
    (1.0 - 0.5 * l1).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopCandidate {
    pub keyframe: u64,
    pub score: f64,
    /// Index into the keyframe's attachments when the hit came from one.
    pub attachment: Option<usize>,
}

/// Which keyframes a loop query may return.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exclusion {
    None,
    /// Skip the most recent `n` alive keyframes (teach-time self matches).
    RecentKeyframes(usize),
}

/// Scores `bow` against every alive keyframe and every attachment that has
/// a BoW vector. Returns hits with score >= `tau`, best first; ties go to
/// the lowest keyframe id, keyframe before its attachments.
pub fn query_loops(
    map: &TopoMetricMap,
    bow: &BowVector,
    tau: f64,
    exclusion: Exclusion,
) -> Vec<LoopCandidate> {
    let alive: Vec<u64> = map.alive_ids().collect();
    let cutoff = match exclusion {
        Exclusion::None => alive.len(),
        Exclusion::RecentKeyframes(n) => alive.len().saturating_sub(n),
    };
    let mut out = Vec::new();
    for &id in &alive[..cutoff] {
        let kf = map.keyframe(id).expect("alive keyframe exists");
        if let Some(b) = &kf.bow {
            let s = similarity(bow, b);
            if s >= tau {
                out.push(LoopCandidate {
                    keyframe: id,
                    score: s,
                    attachment: None,
                });
            }
        }
        for (i, att) in kf.attached.iter().enumerate() {
            if let Some(b) = &att.bow {
                let s = similarity(bow, b);
                if s >= tau {
                    out.push(LoopCandidate {
                        keyframe: id,
                        score: s,
                        attachment: Some(i),
                    });
                }
            }
        }
    }
    out.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.keyframe.cmp(&b.keyframe))
            .then(
                a.attachment
                    .map_or(0, |i| i + 1)
                    .cmp(&b.attachment.map_or(0, |i| i + 1)),
            )
    });
    out
}

/// Convenience wrapper that quantizes the frame first. Empty frames yield
/// no candidates.
pub fn query_frame(
    map: &TopoMetricMap,
    frame: &Frame,
    vocab: &Vocabulary,
    tau: f64,
    exclusion: Exclusion,
) -> Vec<LoopCandidate> {
    match vocab.to_bow(&frame.descriptors()) {
        Ok(bow) => query_loops(map, &bow, tau, exclusion),
        Err(_) => Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_descs(n: usize, seed: u64) -> Vec<Descriptor> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| Descriptor::random(&mut rng)).collect()
    }

    #[test]
    fn separable_data_gives_two_leaves() {
        let mut descs = vec![Descriptor::ZERO; 10];
        descs.extend(vec![Descriptor::ONES; 10]);
        let v = Vocabulary::train(&descs, 2, 1, 3).unwrap();
        assert_eq!(v.word_count(), 2);
        let mut centroids: Vec<Descriptor> = (0..2).map(|w| v.word_descriptor(w)).collect();
        centroids.sort();
        assert_eq!(centroids, vec![Descriptor::ZERO, Descriptor::ONES]);
        assert_ne!(v.quantize(&Descriptor::ZERO), v.quantize(&Descriptor::ONES));
    }

    #[test]
    fn single_distinct_descriptor_single_leaf() {
        let d = random_descs(1, 1)[0];
        let v = Vocabulary::train(&vec![d; 30], 8, 3, 0).unwrap();
        assert_eq!(v.word_count(), 1);
        let bow = v.to_bow(&[d, d]).unwrap();
        assert_eq!(bow.entries(), &[(0, 1.0)]);
    }

    #[test]
    fn training_is_deterministic_and_bounded() {
        let descs = random_descs(2000, 2);
        let a = Vocabulary::train(&descs, 4, 3, 11).unwrap();
        let b = Vocabulary::train(&descs, 4, 3, 11).unwrap();
        assert_eq!(a, b);
        assert!(a.word_count() <= 64);
        assert!(a
            .nodes
            .iter()
            .all(|n| n.children.len() <= 4 && n.weight >= 0.0));
        assert_eq!(a.content_hash(), b.content_hash());
    }

    #[test]
    fn train_rejects_bad_input() {
        assert!(matches!(
            Vocabulary::train(&[], 2, 1, 0),
            Err(BowError::NoDescriptors)
        ));
        assert!(Vocabulary::train(&random_descs(4, 0), 1, 1, 0).is_err());
    }

    #[test]
    fn term_frequencies_with_uniform_idf() {
        let v = Vocabulary::flat(vec![(Descriptor::ZERO, 1.0), (Descriptor::ONES, 1.0)]);
        let bow = v
            .to_bow(&[
                Descriptor::ZERO,
                Descriptor::ZERO,
                Descriptor::ZERO,
                Descriptor::ONES,
            ])
            .unwrap();
        assert_eq!(bow.entries(), &[(0, 0.75), (1, 0.25)]);
        assert!(v.to_bow(&[]).is_err());
    }

    #[test]
    fn duplicated_input_gives_same_vector() {
        let descs = random_descs(500, 3);
        let v = Vocabulary::train(&descs, 8, 2, 0).unwrap();
        let mut doubled = descs[..50].to_vec();
        doubled.extend_from_slice(&descs[..50]);
        assert_eq!(v.to_bow(&descs[..50]).unwrap(), v.to_bow(&doubled).unwrap());
    }

    #[test]
    fn similarity_cases() {
        let a = BowVector::from_weights([(1, 1.0)]);
        let b = BowVector::from_weights([(1, 0.5), (2, 0.5)]);
        assert_eq!(similarity(&a, &a), 1.0);
        assert!((similarity(&a, &b) - 0.5).abs() < 1e-15);
        assert_eq!(similarity(&a, &BowVector::from_weights([(3, 2.0)])), 0.0);
        assert_eq!(similarity(&a, &b), similarity(&b, &a));
    }

    #[test]
    fn bow_is_l1_normalized() {
        let descs = random_descs(800, 4);
        let v = Vocabulary::train(&descs, 8, 3, 1).unwrap();
        let bow = v.to_bow(&descs[100..180]).unwrap();
        let sum: f64 = bow.entries().iter().map(|(_, w)| w).sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert!(bow.entries().iter().all(|(_, w)| *w > 0.0));
    }

    #[test]
    fn vocabulary_bytes_round_trip() {
        let v = Vocabulary::train(&random_descs(600, 5), 4, 2, 9).unwrap();
        let bytes = v.to_bytes();
        assert_eq!(Vocabulary::from_bytes(&bytes).unwrap(), v);
        assert!(matches!(
            Vocabulary::from_bytes(b"NOTAVOCAB"),
            Err(BowError::BadMagic)
        ));
        assert!(matches!(
            Vocabulary::from_bytes(&bytes[..bytes.len() - 3]),
            Err(BowError::Truncated)
        ));
    }
}
