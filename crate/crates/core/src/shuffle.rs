//! Coded shuffle messages for one reducer per function.
//!
//! For every (r+1)-subset A of servers and every k ∈ A, the values needed by
//! k and mapped by exactly A \ {k} form a group. The group is cut into r
//! segments, one per j ∈ A \ {k}. Server j ∈ A multicasts to A \ {j} the XOR
//! of segment (k, j) over all k ∈ A \ {j}; each receiver already knows every
//! XORed segment but its own.

use std::collections::BTreeMap;

use bitvec::prelude::*;
use num_rational::Ratio;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::job::{needed_values, IntermediateStore, JobSpec, LocalValues, Placement, ReduceAssignment, ValueId};
use crate::subset::{subsets, ServerSet};
use crate::{Bits, BitsRef};

/// Information content of a payload in bits, possibly fractional once padded
/// payloads are cut into pieces.
pub type InfoBits = Ratio<u64>;

/// Which piece of a sub-message a payload is. Coordinates are 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Piece {
    Whole,
    /// T_k^S(j): one of t/2 pieces cut at an edge switch.
    Split(usize),
    /// T_k^S(j, d): one of t/2 pieces of T_k^S(j) cut at an aggregation switch.
    Split2(usize, usize),
}

impl Piece {
    pub fn child(self, index: usize) -> Option<Piece> {
        match self {
            Piece::Whole => Some(Piece::Split(index)),
            Piece::Split(j) => Some(Piece::Split2(j, index)),
            Piece::Split2(..) => None,
        }
    }

    pub fn parent(self) -> Option<Piece> {
        match self {
            Piece::Whole => None,
            Piece::Split(_) => Some(Piece::Whole),
            Piece::Split2(j, _) => Some(Piece::Split(j)),
        }
    }

    /// Index of this piece among its siblings.
    pub fn sibling_index(self) -> Option<usize> {
        match self {
            Piece::Whole => None,
            Piece::Split(j) | Piece::Split2(_, j) => Some(j),
        }
    }
}

/// Identity of a payload in flight: T_sender^useful(piece).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MessageKey {
    pub sender: usize,
    pub useful: ServerSet,
    pub piece: Piece,
}

/// T_k^S, or one of its pieces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubMessage {
    pub sender: usize,
    pub useful: ServerSet,
    pub piece: Piece,
    pub payload: Bits,
    /// Payload bits minus padding.
    pub info: InfoBits,
}

impl SubMessage {
    pub fn key(&self) -> MessageKey {
        MessageKey { sender: self.sender, useful: self.useful, piece: self.piece }
    }

    pub fn len(&self) -> usize {
        self.payload.len()
    }

    pub fn is_empty(&self) -> bool {
        self.payload.is_empty()
    }

    /// Cut into `parts` non-overlapping equal pieces.
    pub fn split(&self, parts: usize) -> Result<Vec<SubMessage>> {
        let len = self.payload.len();
        if parts == 0 || !len.is_multiple_of(parts) {
            return Err(Error::Split { len, parts });
        }
        let step = len / parts;
        (0..parts)
            .map(|i| {
                let piece = self.piece.child(i).ok_or(Error::Split { len, parts })?;
                Ok(SubMessage {
                    sender: self.sender,
                    useful: self.useful,
                    piece,
                    payload: self.payload[i * step..(i + 1) * step].to_bitvec(),
                    info: self.info / parts as u64,
                })
            })
            .collect()
    }

    /// Reassemble a parent from all of its pieces, given in sibling order.
    pub fn join(pieces: &[&SubMessage]) -> Option<SubMessage> {
        let first = pieces.first()?;
        let parent = first.piece.parent()?;
        let mut payload = Bits::with_capacity(first.len() * pieces.len());
        let mut info = InfoBits::from_integer(0);
        for (i, p) in pieces.iter().enumerate() {
            if p.sender != first.sender
                || p.useful != first.useful
                || p.piece.parent() != Some(parent)
                || p.piece.sibling_index() != Some(i)
            {
                return None;
            }
            payload.extend_from_bitslice(&p.payload);
            info += p.info;
        }
        Some(SubMessage { sender: first.sender, useful: first.useful, piece: parent, payload, info })
    }
}

/// Bit layout of the groups and segments for one job.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SegmentLayout {
    /// Bits in each (A, k) group.
    pub group_bits: usize,
    /// Segments per group (= r).
    pub segments: usize,
    /// Group bits carried by each segment before zero fill; the last
    /// segment may carry fewer.
    pub segment_stride: usize,
    /// Transmitted segment length, a multiple of the piece granularity.
    pub segment_len: usize,
}

impl SegmentLayout {
    /// `granularity` is the number of equal pieces every sub-message must
    /// split into downstream (1 for a star, (t/2)² for a t-ary fat-tree).
    pub fn new(job: &JobSpec, granularity: usize) -> Self {
        let granularity = granularity.max(1);
        let group_bits = job.functions_per_group() * job.files_per_batch() * job.value_bits();
        let segments = job.load();
        let segment_stride = group_bits.div_ceil(segments);
        let segment_len = segment_stride.div_ceil(granularity) * granularity;
        SegmentLayout { group_bits, segments, segment_stride, segment_len }
    }

    /// Information bits of one coded sub-message, group_bits / r.
    pub fn info_bits(&self) -> InfoBits {
        InfoBits::new(self.group_bits as u64, self.segments as u64)
    }

    /// Group bits that land in segment `index`.
    fn carried(&self, index: usize) -> std::ops::Range<usize> {
        let start = (index * self.segment_stride).min(self.group_bits);
        let end = ((index + 1) * self.segment_stride).min(self.group_bits);
        start..end
    }

    pub fn is_padded(&self) -> bool {
        self.segment_len * self.segments != self.group_bits
    }
}

/// All coded sub-messages of a shuffle, in canonical order.
#[derive(Debug, Clone)]
pub struct MessageSet {
    pub layout: SegmentLayout,
    pub messages: Vec<SubMessage>,
}

impl MessageSet {
    pub fn sent_by(&self, sender: usize) -> impl Iterator<Item = &SubMessage> {
        self.messages.iter().filter(move |m| m.sender == sender)
    }

    pub fn sent_bits(&self, sender: usize) -> u64 {
        self.sent_by(sender).map(|m| m.len() as u64).sum()
    }

    pub fn sent_info(&self, sender: usize) -> InfoBits {
        self.sent_by(sender).map(|m| m.info).sum()
    }

    pub fn total_bits(&self) -> u64 {
        self.messages.iter().map(|m| m.len() as u64).sum()
    }

    pub fn total_info(&self) -> InfoBits {
        self.messages.iter().map(|m| m.info).sum()
    }
}

/// Values of group (A, `owner`) in ascending (q, n), read from `local`.
fn group_values(
    local: &LocalValues,
    placement: &Placement,
    assignment: &ReduceAssignment,
    subset: ServerSet,
    owner: usize,
) -> Option<Bits> {
    let mappers = subset.without(owner);
    let mut bits = Bits::new();
    for q in assignment.functions_reduced_by(ServerSet::singleton(owner)) {
        for n in placement.files_mapped_by(mappers) {
            bits.extend_from_bitslice(local.get(q, n)?);
        }
    }
    Some(bits)
}

/// XOR segment (owner, carrier) of group (A, owner) into `target`; the
/// zero padding past the carried bits leaves the tail unchanged.
fn xor_segment(target: &mut BitsRef, layout: &SegmentLayout, group: &Bits, subset: ServerSet, owner: usize, carrier: usize) {
    let index = subset.without(owner).position(carrier).expect("carrier in A \\ {owner}");
    let carried = &group[layout.carried(index)];
    *target.get_mut(..carried.len()).expect("segment fits the payload") ^= carried;
}

/// Build T_k for every server with segments padded to `granularity` pieces.
pub fn build_messages(
    job: &JobSpec,
    placement: &Placement,
    assignment: &ReduceAssignment,
    store: &IntermediateStore,
    granularity: usize,
) -> Result<MessageSet> {
    if job.reducers() != 1 {
        return Err(Error::UnsupportedCascade(job.reducers()));
    }
    let layout = SegmentLayout::new(job, granularity);
    let k_total = job.servers();
    let r = job.load();
    if r == k_total {
        return Ok(MessageSet { layout, messages: Vec::new() });
    }
    let groups: Vec<ServerSet> = subsets(k_total, r + 1).collect();
    let messages = groups
        .par_iter()
        .flat_map_iter(|&subset| {
            subset.iter().map(move |sender| {
                let local = store.local(sender);
                let mut payload = bitvec![u8, Msb0; 0; layout.segment_len];
                for owner in subset.without(sender).iter() {
                    let group = group_values(local, placement, assignment, subset, owner)
                        .expect("sender maps every file of the groups it serves");
                    xor_segment(&mut payload, &layout, &group, subset, owner, sender);
                }
                SubMessage {
                    sender,
                    useful: subset.without(sender),
                    piece: Piece::Whole,
                    payload,
                    info: layout.info_bits(),
                }
            })
        })
        .collect();
    Ok(MessageSet { layout, messages })
}

/// U_j: sub-messages addressed to a set containing `server`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UsefulSet {
    pub server: usize,
    pub messages: Vec<SubMessage>,
}

impl UsefulSet {
    pub fn total_bits(&self) -> u64 {
        self.messages.iter().map(|m| m.len() as u64).sum()
    }

    pub fn info(&self) -> InfoBits {
        self.messages.iter().map(|m| m.info).sum()
    }

    /// Sorted by key so sets assembled in different orders compare equal.
    pub fn canonical(mut self) -> Self {
        self.messages.sort_by_key(SubMessage::key);
        self
    }
}

pub fn useful_set(messages: &[SubMessage], server: usize) -> UsefulSet {
    UsefulSet {
        server,
        messages: messages
            .iter()
            .filter(|m| m.sender != server && m.useful.contains(server))
            .cloned()
            .collect(),
    }
}

pub type Recovered = BTreeMap<ValueId, Bits>;

fn failure(server: usize, reason: impl Into<String>) -> Error {
    Error::DecodeFailure { server, reason: reason.into() }
}

/// Check recovered values against the store's reference values and against
/// the exact list of values `server` needs.
fn verify_recovered(
    job: &JobSpec,
    placement: &Placement,
    assignment: &ReduceAssignment,
    store: &IntermediateStore,
    server: usize,
    recovered: &Recovered,
) -> Result<()> {
    let needed = needed_values(job, placement, assignment, server);
    if needed.len() != recovered.len() || !needed.iter().all(|id| recovered.contains_key(id)) {
        return Err(failure(
            server,
            format!("recovered {} values, needed {}", recovered.len(), needed.len()),
        ));
    }
    for (id, bits) in recovered {
        if *bits != store.reference(id.function, id.file) {
            return Err(failure(server, format!("v_(q={}, n={}) differs from the mapped value", id.function, id.file)));
        }
    }
    Ok(())
}

/// Peel every XOR in `useful` with locally mapped segments and recover all
/// values `server` needs, content-checked against the store.
pub fn decode(
    job: &JobSpec,
    placement: &Placement,
    assignment: &ReduceAssignment,
    store: &IntermediateStore,
    layout: &SegmentLayout,
    server: usize,
    useful: &UsefulSet,
) -> Result<Recovered> {
    if job.reducers() != 1 {
        return Err(Error::UnsupportedCascade(job.reducers()));
    }
    let local = store.local(server);
    let r = job.load();
    let mut by_subset: BTreeMap<ServerSet, Vec<&SubMessage>> = BTreeMap::new();
    for msg in &useful.messages {
        if msg.piece != Piece::Whole || msg.sender == server || !msg.useful.contains(server) {
            return Err(failure(server, format!("unexpected message {:?}", msg.key())));
        }
        if msg.useful.len() != r || msg.useful.contains(msg.sender) || msg.payload.len() != layout.segment_len {
            return Err(failure(server, format!("malformed message {:?}", msg.key())));
        }
        by_subset.entry(msg.useful.with(msg.sender)).or_default().push(msg);
    }

    let mut segments: BTreeMap<ServerSet, Vec<Option<Bits>>> = BTreeMap::new();
    for (subset, messages) in by_subset {
        // Side information: the groups of the other members, each built once.
        let others = subset.without(server);
        let mut known = Vec::with_capacity(others.len());
        for other in others.iter() {
            let group = group_values(local, placement, assignment, subset, other)
                .ok_or_else(|| failure(server, format!("cannot peel group {subset:?}: files not mapped")))?;
            known.push((other, group));
        }
        let slots = segments.entry(subset).or_insert_with(|| vec![None; r]);
        for msg in messages {
            let mut seg = msg.payload.clone();
            for (other, group) in known.iter().filter(|(other, _)| *other != msg.sender) {
                xor_segment(&mut seg, layout, group, subset, *other, msg.sender);
            }
            let index = others.position(msg.sender).expect("sender in A \\ {server}");
            if slots[index].replace(seg).is_some() {
                return Err(failure(server, format!("duplicate message {:?}", msg.key())));
            }
        }
    }

    let mut recovered = Recovered::new();
    for (subset, slots) in segments {
        let mut group = Bits::with_capacity(layout.group_bits);
        for (index, slot) in slots.into_iter().enumerate() {
            let seg = slot.ok_or_else(|| failure(server, format!("missing segment {index} of group {subset:?}")))?;
            let carried = layout.carried(index).len();
            if seg[carried..].any() {
                return Err(failure(server, format!("nonzero padding in segment {index} of group {subset:?}")));
            }
            group.extend_from_bitslice(&seg[..carried]);
        }
        let mappers = subset.without(server);
        let t = job.value_bits();
        let mut offset = 0;
        for q in assignment.functions_reduced_by(ServerSet::singleton(server)) {
            for n in placement.files_mapped_by(mappers) {
                recovered.insert(ValueId { function: q, file: n }, group[offset..offset + t].to_bitvec());
                offset += t;
            }
        }
    }
    verify_recovered(job, placement, assignment, store, server, &recovered)?;
    Ok(recovered)
}

/// Uncoded baseline: the lowest-indexed mapper of each needed value unicasts
/// it to the reducer. One sub-message per (sender, receiver) pair; works for
/// any number of reducers per function.
pub fn build_uncoded_messages(
    job: &JobSpec,
    placement: &Placement,
    assignment: &ReduceAssignment,
    store: &IntermediateStore,
) -> Vec<SubMessage> {
    let mut messages = Vec::new();
    for receiver in 0..job.servers() {
        let mut by_sender: BTreeMap<usize, Bits> = BTreeMap::new();
        for id in needed_values(job, placement, assignment, receiver) {
            let sender = placement.owners(id.file).iter().next().expect("every file has a mapper");
            let value = store.local(sender).get(id.function, id.file).expect("sender maps the file");
            by_sender.entry(sender).or_default().extend_from_bitslice(value);
        }
        for (sender, payload) in by_sender {
            let info = InfoBits::from_integer(payload.len() as u64);
            messages.push(SubMessage {
                sender,
                useful: ServerSet::singleton(receiver),
                piece: Piece::Whole,
                payload,
                info,
            });
        }
    }
    messages
}

pub fn decode_uncoded(
    job: &JobSpec,
    placement: &Placement,
    assignment: &ReduceAssignment,
    store: &IntermediateStore,
    server: usize,
    useful: &UsefulSet,
) -> Result<Recovered> {
    let needed = needed_values(job, placement, assignment, server);
    let t = job.value_bits();
    let mut recovered = Recovered::new();
    for msg in &useful.messages {
        let ids: Vec<ValueId> = needed
            .iter()
            .copied()
            .filter(|id| placement.owners(id.file).iter().next() == Some(msg.sender))
            .collect();
        if msg.payload.len() != ids.len() * t {
            return Err(failure(server, format!("payload from {} has {} bits", msg.sender, msg.payload.len())));
        }
        for (i, id) in ids.into_iter().enumerate() {
            recovered.insert(id, msg.payload[i * t..(i + 1) * t].to_bitvec());
        }
    }
    verify_recovered(job, placement, assignment, store, server, &recovered)?;
    Ok(recovered)
}
