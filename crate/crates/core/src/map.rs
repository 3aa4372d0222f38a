//! Topo-metric keyframe map.
//!
//! The map is a chain of keyframes, each storing only its transform relative
//! to its predecessor, plus optional loop and cluster links. There are no
//! global poses anywhere: any transform between two keyframes is obtained by
//! composing the stored relative transforms along the chain.
//!
//! All transforms and points are in camera coordinates. A link `(j, T)` on
//! keyframe `i` stores `T` as the pose of `i` in `j`'s frame for loop links
//! and the pose of `j` in `i`'s frame for cluster links, matching the
//! direction in which each is composed.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Cursor, Read};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use log::warn;
use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::descriptor::{Descriptor, Feature, DESCRIPTOR_BITS};
use crate::place_recognition::{BowVector, Vocabulary};
use crate::sim::Frame;
use crate::Pose3;

pub const MAP_MAGIC: &[u8; 8] = b"VTRMAP01";

/// Keyframe cadence used during teach.
pub const DEFAULT_KEYFRAME_CADENCE: usize = 5;

#[derive(Debug, Error, PartialEq)]
pub enum MapError {
    #[error("keyframe {0} does not exist or was erased")]
    NotAlive(u64),
    #[error("loop link {from} -> {to} must point to an earlier keyframe")]
    ForwardLoop { from: u64, to: u64 },
    #[error("cluster link {from} -> {to} must point to a later keyframe")]
    BackwardCluster { from: u64, to: u64 },
    #[error("keyframe {to} is not reachable from {from} along the chain")]
    NotOnChain { from: u64, to: u64 },
    #[error("keyframe {0}: features and points differ in length")]
    Misaligned(u64),
    #[error("not a map file (bad magic)")]
    BadMagic,
    #[error("map file is truncated")]
    Truncated,
    #[error("unsupported descriptor width {0}")]
    DescriptorWidth(u32),
    #[error("keyframe record {index} declares {declared} bytes but holds {actual}")]
    RecordLength {
        index: u64,
        declared: u32,
        actual: usize,
    },
    #[error("keyframe {from} references missing keyframe {to}")]
    DanglingId { from: u64, to: u64 },
    #[error("duplicate or unordered keyframe id {0}")]
    UnorderedId(u64),
    #[error("{0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("map was built with vocabulary {expected:016x}, got {actual:016x}")]
    VocabularyMismatch { expected: u64, actual: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Link {
    pub target: u64,
    pub rel: Pose3,
}

/// A repeat-time observation attached to a map keyframe.
#[derive(Debug, Clone, PartialEq)]
pub struct LowLevelFrame {
    pub features: Vec<Feature>,
    pub points: Vec<Vector3<f64>>,
    /// Pose of this frame in the anchor keyframe's coordinates.
    pub anchor_offset: Pose3,
    pub bow: Option<BowVector>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Keyframe {
    pub id: u64,
    /// Pose of this keyframe in its predecessor's frame.
    pub t_prev: Pose3,
    pub features: Vec<Feature>,
    pub points: Vec<Vector3<f64>>,
    pub bow: Option<BowVector>,
    pub loop_link: Option<Link>,
    pub cluster_link: Option<Link>,
    pub attached: Vec<LowLevelFrame>,
}

impl Keyframe {
    pub fn new(id: u64, t_prev: Pose3, features: Vec<Feature>, points: Vec<Vector3<f64>>) -> Self {
        Self {
            id,
            t_prev,
            features: features.iter().map(Feature::quantized).collect(),
            points,
            bow: None,
            loop_link: None,
            cluster_link: None,
            attached: Vec::new(),
        }
    }

    pub fn descriptors(&self) -> Vec<Descriptor> {
        self.features.iter().map(|f| f.descriptor).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TopoMetricMap {
    keyframes: BTreeMap<u64, Keyframe>,
    alive: BTreeSet<u64>,
    /// Content hash of the vocabulary the map was indexed with (0 if none).
    pub vocab_hash: u64,
    next_id: u64,
}

impl TopoMetricMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.alive.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alive.is_empty()
    }

    pub fn head_id(&self) -> Option<u64> {
        self.alive.first().copied()
    }

    pub fn tail_id(&self) -> Option<u64> {
        self.alive.last().copied()
    }

    pub fn is_alive(&self, id: u64) -> bool {
        self.alive.contains(&id)
    }

    pub fn alive_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.alive.iter().copied()
    }

    pub fn keyframes(&self) -> impl Iterator<Item = &Keyframe> + '_ {
        self.alive.iter().map(|id| &self.keyframes[id])
    }

    pub fn keyframe(&self, id: u64) -> Option<&Keyframe> {
        self.alive.contains(&id).then(|| &self.keyframes[&id])
    }

    pub fn keyframe_mut(&mut self, id: u64) -> Option<&mut Keyframe> {
        if self.alive.contains(&id) {
            self.keyframes.get_mut(&id)
        } else {
            None
        }
    }

    /// Appends a keyframe after the current tail and returns its id.
    pub fn push_keyframe(
        &mut self,
        t_prev: Pose3,
        features: Vec<Feature>,
        points: Vec<Vector3<f64>>,
    ) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        self.keyframes
            .insert(id, Keyframe::new(id, t_prev, features, points));
        self.alive.insert(id);
        id
    }

    /// Marks a keyframe as erased. It stays addressable as a tombstone until
    /// [`TopoMetricMap::compact`].
    pub(crate) fn erase(&mut self, id: u64) {
        self.alive.remove(&id);
    }

    /// Physically drops erased keyframes.
    pub fn compact(&mut self) {
        let alive = &self.alive;
        self.keyframes.retain(|id, _| alive.contains(id));
    }

    /// Next keyframe along the chain: the cluster link target when present,
    /// else the next alive id.
    pub fn successor(&self, id: u64) -> Option<u64> {
        let kf = self.keyframe(id)?;
        match kf.cluster_link {
            Some(l) => Some(l.target),
            None => self.alive.range(id + 1..).next().copied(),
        }
    }

    /// Transform of the step `id -> successor(id)`: pose of the successor in
    /// `id`'s frame.
    pub fn step_transform(&self, id: u64) -> Option<(u64, Pose3)> {
        let kf = self.keyframe(id)?;
        match kf.cluster_link {
            Some(l) => Some((l.target, l.rel)),
            None => {
                let next = self.alive.range(id + 1..).next().copied()?;
                Some((next, self.keyframes[&next].t_prev))
            }
        }
    }

    /// Alive keyframes from head to tail following successor links.
    pub fn chain(&self) -> Vec<u64> {
        let mut out = Vec::new();
        let mut cur = self.head_id();
        while let Some(id) = cur {
            out.push(id);
            cur = self.successor(id);
        }
        out
    }

    /// Pose of `to` expressed in `from`'s frame, composed along the chain.
    pub fn chain_transform(&self, from: u64, to: u64) -> Result<Pose3, MapError> {
        if !self.is_alive(from) {
            return Err(MapError::NotAlive(from));
        }
        if !self.is_alive(to) {
            return Err(MapError::NotAlive(to));
        }
        let mut acc = Pose3::identity();
        let mut cur = from;
        while cur != to {
            let (next, step) = self
                .step_transform(cur)
                .ok_or(MapError::NotOnChain { from, to })?;
            if next > to {
                return Err(MapError::NotOnChain { from, to });
            }
            acc = acc.compose(&step);
            cur = next;
        }
        Ok(acc)
    }

    /// Records a loop from `id` back to the earlier keyframe `target`, with
    /// `rel` the pose of `id` in `target`'s frame.
    pub fn attach_loop(&mut self, id: u64, target: u64, rel: Pose3) -> Result<(), MapError> {
        if !self.is_alive(id) {
            return Err(MapError::NotAlive(id));
        }
        if !self.is_alive(target) {
            return Err(MapError::NotAlive(target));
        }
        if target >= id {
            return Err(MapError::ForwardLoop {
                from: id,
                to: target,
            });
        }
        self.keyframes.get_mut(&id).unwrap().loop_link = Some(Link { target, rel });
        Ok(())
    }

    /// Computes BoW vectors for every keyframe and attachment.
    pub fn index_bow(&mut self, vocab: &Vocabulary) {
        for id in self.alive.iter() {
            let kf = self.keyframes.get_mut(id).unwrap();
            kf.bow = vocab.to_bow(&kf.descriptors()).ok();
            for att in &mut kf.attached {
                let descs: Vec<Descriptor> = att.features.iter().map(|f| f.descriptor).collect();
                att.bow = vocab.to_bow(&descs).ok();
            }
        }
        self.vocab_hash = vocab.content_hash();
    }

    pub fn check_vocabulary(&self, vocab: &Vocabulary) -> Result<(), MapError> {
        let actual = vocab.content_hash();
        if self.vocab_hash != 0 && self.vocab_hash != actual {
            return Err(MapError::VocabularyMismatch {
                expected: self.vocab_hash,
                actual,
            });
        }
        Ok(())
    }

    /// Checks link directions, id references, list alignment and that the
    /// successor walk from head reaches the tail through alive keyframes.
    pub fn validate(&self) -> Result<(), MapError> {
        for kf in self.keyframes() {
            if kf.features.len() != kf.points.len()
                || kf
                    .attached
                    .iter()
                    .any(|a| a.features.len() != a.points.len())
            {
                return Err(MapError::Misaligned(kf.id));
            }
            if let Some(l) = kf.loop_link {
                if l.target >= kf.id {
                    return Err(MapError::ForwardLoop {
                        from: kf.id,
                        to: l.target,
                    });
                }
                if !self.is_alive(l.target) {
                    return Err(MapError::DanglingId {
                        from: kf.id,
                        to: l.target,
                    });
                }
            }
            if let Some(l) = kf.cluster_link {
                if l.target <= kf.id {
                    return Err(MapError::BackwardCluster {
                        from: kf.id,
                        to: l.target,
                    });
                }
                if !self.is_alive(l.target) {
                    return Err(MapError::DanglingId {
                        from: kf.id,
                        to: l.target,
                    });
                }
            }
        }
        if let (Some(head), Some(tail)) = (self.head_id(), self.tail_id()) {
            let chain = self.chain();
            if chain.last() != Some(&tail) {
                return Err(MapError::NotOnChain {
                    from: head,
                    to: tail,
                });
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAP_MAGIC);
        out.write_u64::<LittleEndian>(self.alive.len() as u64)
            .unwrap();
        out.write_u32::<LittleEndian>(DESCRIPTOR_BITS).unwrap();
        out.write_u64::<LittleEndian>(self.vocab_hash).unwrap();
        for kf in self.keyframes() {
            let mut rec = Vec::new();
            rec.write_u64::<LittleEndian>(kf.id).unwrap();
            write_pose(&mut rec, &kf.t_prev);
            write_features(&mut rec, &kf.features, &kf.points);
            write_link(&mut rec, kf.loop_link.as_ref());
            write_link(&mut rec, kf.cluster_link.as_ref());
            rec.write_u32::<LittleEndian>(kf.attached.len() as u32)
                .unwrap();
            for att in &kf.attached {
                write_pose(&mut rec, &att.anchor_offset);
                write_features(&mut rec, &att.features, &att.points);
            }
            out.write_u32::<LittleEndian>(rec.len() as u32).unwrap();
            out.extend_from_slice(&rec);
        }
        out
    }

    /// Parses a VTRMAP/1 stream. Nothing is returned unless the whole stream
    /// parses and the resulting map validates.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, MapError> {
        let mut r = Cursor::new(bytes);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| MapError::BadMagic)?;
        if &magic != MAP_MAGIC {
            return Err(MapError::BadMagic);
        }
        let count = r.read_u64::<LittleEndian>().map_err(trunc)?;
        let width = r.read_u32::<LittleEndian>().map_err(trunc)?;
        if width != DESCRIPTOR_BITS {
            return Err(MapError::DescriptorWidth(width));
        }
        let vocab_hash = r.read_u64::<LittleEndian>().map_err(trunc)?;
        let mut map = TopoMetricMap {
            vocab_hash,
            ..Default::default()
        };
        for index in 0..count {
            let declared = r.read_u32::<LittleEndian>().map_err(trunc)?;
            let start = r.position() as usize;
            let end = start
                .checked_add(declared as usize)
                .filter(|e| *e <= bytes.len())
                .ok_or(MapError::Truncated)?;
            let mut rec = Cursor::new(&bytes[start..end]);
            let kf = read_keyframe(&mut rec)?;
            if rec.position() as usize != declared as usize {
                return Err(MapError::RecordLength {
                    index,
                    declared,
                    actual: rec.position() as usize,
                });
            }
            r.set_position(end as u64);
            if map
                .keyframes
                .last_key_value()
                .is_some_and(|(k, _)| *k >= kf.id)
            {
                return Err(MapError::UnorderedId(kf.id));
            }
            map.next_id = kf.id + 1;
            map.alive.insert(kf.id);
            map.keyframes.insert(kf.id, kf);
        }
        let rest = bytes.len() - r.position() as usize;
        if rest != 0 {
            return Err(MapError::TrailingBytes(rest));
        }
        for kf in map.keyframes.values() {
            for l in [kf.loop_link, kf.cluster_link].into_iter().flatten() {
                if !map.alive.contains(&l.target) {
                    return Err(MapError::DanglingId {
                        from: kf.id,
                        to: l.target,
                    });
                }
            }
        }
        map.validate()?;
        Ok(map)
    }
}

fn trunc(_: std::io::Error) -> MapError {
    MapError::Truncated
}

fn write_pose(out: &mut Vec<u8>, p: &Pose3) {
    for i in 0..3 {
        for j in 0..3 {
            out.write_f64::<LittleEndian>(p.rotation[(i, j)]).unwrap();
        }
    }
    for i in 0..3 {
        out.write_f64::<LittleEndian>(p.translation[i]).unwrap();
    }
}

fn read_pose(r: &mut Cursor<&[u8]>) -> Result<Pose3, MapError> {
    let mut v = [0.0; 12];
    for x in &mut v {
        *x = r.read_f64::<LittleEndian>().map_err(trunc)?;
    }
    // Stored rotations are used verbatim so the round trip is bit-exact.
    Ok(Pose3 {
        rotation: Matrix3::from_row_slice(&v[..9]),
        translation: Vector3::new(v[9], v[10], v[11]),
    })
}

fn write_features(out: &mut Vec<u8>, features: &[Feature], points: &[Vector3<f64>]) {
    out.write_u32::<LittleEndian>(features.len() as u32)
        .unwrap();
    for f in features {
        out.write_f32::<LittleEndian>(f.u as f32).unwrap();
        out.write_f32::<LittleEndian>(f.v as f32).unwrap();
        out.extend_from_slice(&f.descriptor.to_bytes());
    }
    for p in points {
        for i in 0..3 {
            out.write_f64::<LittleEndian>(p[i]).unwrap();
        }
    }
}

fn read_features(r: &mut Cursor<&[u8]>) -> Result<(Vec<Feature>, Vec<Vector3<f64>>), MapError> {
    let n = r.read_u32::<LittleEndian>().map_err(trunc)? as usize;
    let remaining = r.get_ref().len().saturating_sub(r.position() as usize);
    if n.saturating_mul(40 + 24) > remaining {
        return Err(MapError::Truncated);
    }
    let mut features = Vec::with_capacity(n);
    for _ in 0..n {
        let u = r.read_f32::<LittleEndian>().map_err(trunc)? as f64;
        let v = r.read_f32::<LittleEndian>().map_err(trunc)? as f64;
        let mut d = [0u8; 32];
        r.read_exact(&mut d).map_err(trunc)?;
        features.push(Feature::new(u, v, Descriptor::from_bytes(&d)));
    }
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let x = r.read_f64::<LittleEndian>().map_err(trunc)?;
        let y = r.read_f64::<LittleEndian>().map_err(trunc)?;
        let z = r.read_f64::<LittleEndian>().map_err(trunc)?;
        points.push(Vector3::new(x, y, z));
    }
    Ok((features, points))
}

fn write_link(out: &mut Vec<u8>, link: Option<&Link>) {
    match link {
        None => out.push(0),
        Some(l) => {
            out.push(1);
            out.write_u64::<LittleEndian>(l.target).unwrap();
            write_pose(out, &l.rel);
        }
    }
}

fn read_link(r: &mut Cursor<&[u8]>) -> Result<Option<Link>, MapError> {
    match r.read_u8().map_err(trunc)? {
        0 => Ok(None),
        _ => {
            let target = r.read_u64::<LittleEndian>().map_err(trunc)?;
            Ok(Some(Link {
                target,
                rel: read_pose(r)?,
            }))
        }
    }
}

fn read_keyframe(r: &mut Cursor<&[u8]>) -> Result<Keyframe, MapError> {
    let id = r.read_u64::<LittleEndian>().map_err(trunc)?;
    let t_prev = read_pose(r)?;
    let (features, points) = read_features(r)?;
    let loop_link = read_link(r)?;
    let cluster_link = read_link(r)?;
    let n_att = r.read_u32::<LittleEndian>().map_err(trunc)?;
    let mut attached = Vec::new();
    for _ in 0..n_att {
        let anchor_offset = read_pose(r)?;
        let (features, points) = read_features(r)?;
        attached.push(LowLevelFrame {
            features,
            points,
            anchor_offset,
            bow: None,
        });
    }
    Ok(Keyframe {
        id,
        t_prev,
        features,
        points,
        bow: None,
        loop_link,
        cluster_link,
        attached,
    })
}

/// Turns the teach frame stream into keyframes at a fixed cadence.
#[derive(Debug, Clone)]
pub struct TeachRecorder {
    pub cadence: usize,
    frames_since_keyframe: usize,
    started: bool,
    pending: Pose3,
}

impl Default for TeachRecorder {
    fn default() -> Self {
        Self::new(DEFAULT_KEYFRAME_CADENCE)
    }
}

impl TeachRecorder {
    pub fn new(cadence: usize) -> Self {
        Self {
            cadence: cadence.max(1),
            frames_since_keyframe: 0,
            started: false,
            pending: Pose3::identity(),
        }
    }

    /// Feeds one frame. Every `cadence`-th frame becomes a keyframe whose
    /// `t_prev` is the composed odometry since the previous keyframe. A due
    /// frame without features is skipped and the next frame is tried.
    pub fn insert_keyframe(&mut self, map: &mut TopoMetricMap, frame: &Frame) -> Option<u64> {
        let due = if self.started {
            self.pending = self.pending.compose(&frame.odom_delta);
            self.frames_since_keyframe += 1;
            self.frames_since_keyframe >= self.cadence
        } else {
            true
        };
        self.started = true;
        if !due {
            return None;
        }
        if frame.features.is_empty() {
            warn!("frame {} has no features; deferring keyframe", frame.id);
            return None;
        }
        let t_prev = if map.is_empty() {
            Pose3::identity()
        } else {
            self.pending
        };
        self.pending = Pose3::identity();
        self.frames_since_keyframe = 0;
        Some(map.push_keyframe(t_prev, frame.features.clone(), frame.points_cam.clone()))
    }

    /// Makes the last fed frame the tail keyframe if it is not one already.
    pub fn finish(&mut self, map: &mut TopoMetricMap, frame: &Frame) -> Option<u64> {
        if !self.started || self.frames_since_keyframe == 0 || frame.features.is_empty() {
            return None;
        }
        let t_prev = std::mem::take(&mut self.pending);
        self.frames_since_keyframe = 0;
        Some(map.push_keyframe(t_prev, frame.features.clone(), frame.points_cam.clone()))
    }
}
