//! Job parameters, symmetric file placement, reducer assignment and the Map phase.

use std::collections::BTreeMap;
use std::ops::Range;

use bitvec::prelude::*;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::subset::{binomial_u64, subsets, ServerSet, MAX_SERVERS};
use crate::{Bits, BitsRef};

/// Parameters of one distributed computing job.
///
/// `servers` is K, `load` is the computation load r, `reducers` is s (servers
/// that reduce each output function), `files` is N, `functions` is Q and
/// `value_bits` is the intermediate value length T.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct JobSpec {
    servers: usize,
    load: usize,
    reducers: usize,
    files: usize,
    functions: usize,
    value_bits: usize,
}

impl JobSpec {
    pub fn new(
        servers: usize,
        load: usize,
        reducers: usize,
        files: usize,
        functions: usize,
        value_bits: usize,
    ) -> Result<Self> {
        if servers == 0 || servers > MAX_SERVERS {
            return Err(Error::Range(format!("K = {servers} must lie in [1, {MAX_SERVERS}]")));
        }
        if !(1..=servers).contains(&load) {
            return Err(Error::Range(format!("r = {load} must lie in [1, K = {servers}]")));
        }
        if !(1..=servers).contains(&reducers) {
            return Err(Error::Range(format!("s = {reducers} must lie in [1, K = {servers}]")));
        }
        if files == 0 || functions == 0 || value_bits == 0 {
            return Err(Error::Range(format!(
                "N = {files}, Q = {functions} and T = {value_bits} must all be positive"
            )));
        }
        let placements = binom(servers, load);
        if !(files as u64).is_multiple_of(placements) {
            return Err(Error::Divisibility(format!(
                "binom(K={servers}, r={load}) = {placements} does not divide N = {files}"
            )));
        }
        let groups = binom(servers, reducers);
        if !(functions as u64).is_multiple_of(groups) {
            return Err(Error::Divisibility(format!(
                "binom(K={servers}, s={reducers}) = {groups} does not divide Q = {functions}"
            )));
        }
        Ok(JobSpec { servers, load, reducers, files, functions, value_bits })
    }

    pub fn servers(&self) -> usize {
        self.servers
    }

    pub fn load(&self) -> usize {
        self.load
    }

    pub fn reducers(&self) -> usize {
        self.reducers
    }

    pub fn files(&self) -> usize {
        self.files
    }

    pub fn functions(&self) -> usize {
        self.functions
    }

    pub fn value_bits(&self) -> usize {
        self.value_bits
    }

    /// Q·N·T, the normalizer of every load.
    pub fn total_bits(&self) -> u64 {
        (self.functions as u64) * (self.files as u64) * (self.value_bits as u64)
    }

    /// Files stored by each r-subset of servers.
    pub fn files_per_batch(&self) -> usize {
        self.files / binom(self.servers, self.load) as usize
    }

    /// Output functions owned by each s-subset of servers.
    pub fn functions_per_group(&self) -> usize {
        self.functions / binom(self.servers, self.reducers) as usize
    }
}

fn binom(n: usize, k: usize) -> u64 {
    binomial_u64(n as u64, k as u64).expect("binomials up to 64 fit in u64")
}

/// Canonical partition of `count` items into equal contiguous batches, one per
/// `size`-subset, with subsets in colex order.
#[derive(Debug, Clone)]
struct SubsetPartition {
    subset_size: usize,
    batch: usize,
    owners: Vec<ServerSet>,
    per_server: Vec<Vec<usize>>,
}

impl SubsetPartition {
    fn new(servers: usize, subset_size: usize, count: usize) -> Self {
        let owners: Vec<ServerSet> = subsets(servers, subset_size).collect();
        let batch = count / owners.len();
        let mut per_server = vec![Vec::new(); servers];
        for (rank, set) in owners.iter().enumerate() {
            for k in set.iter() {
                per_server[k].extend(rank * batch..(rank + 1) * batch);
            }
        }
        SubsetPartition { subset_size, batch, owners, per_server }
    }

    fn owners(&self, item: usize) -> ServerSet {
        self.owners[item / self.batch]
    }

    fn items_of(&self, set: ServerSet) -> Range<usize> {
        assert_eq!(set.len(), self.subset_size, "subset {set:?} has the wrong size");
        let rank = set.colex_rank() as usize;
        rank * self.batch..(rank + 1) * self.batch
    }
}

/// File placement M_k: each r-subset stores its own batch of files.
#[derive(Debug, Clone)]
pub struct Placement {
    inner: SubsetPartition,
}

impl Placement {
    /// Sorted file indices stored at `server`.
    pub fn files_of(&self, server: usize) -> &[usize] {
        &self.inner.per_server[server]
    }

    pub fn stores(&self, server: usize, file: usize) -> bool {
        self.owners(file).contains(server)
    }

    /// The r-subset that maps `file`.
    pub fn owners(&self, file: usize) -> ServerSet {
        self.inner.owners(file)
    }

    /// Files mapped by exactly the servers in `set` (which must have r members).
    pub fn files_mapped_by(&self, set: ServerSet) -> Range<usize> {
        self.inner.items_of(set)
    }

    pub fn batches(&self) -> &[ServerSet] {
        &self.inner.owners
    }

    /// Σ_k |M_k|.
    pub fn total_stored(&self) -> usize {
        self.inner.per_server.iter().map(Vec::len).sum()
    }
}

/// Reduce assignment W_k: each s-subset owns its own batch of output functions.
#[derive(Debug, Clone)]
pub struct ReduceAssignment {
    inner: SubsetPartition,
}

impl ReduceAssignment {
    pub fn functions_of(&self, server: usize) -> &[usize] {
        &self.inner.per_server[server]
    }

    pub fn reducers(&self, function: usize) -> ServerSet {
        self.inner.owners(function)
    }

    pub fn functions_reduced_by(&self, set: ServerSet) -> Range<usize> {
        self.inner.items_of(set)
    }
}

pub fn place_files(job: &JobSpec) -> Placement {
    Placement { inner: SubsetPartition::new(job.servers, job.load, job.files) }
}

pub fn assign_reducers(job: &JobSpec) -> ReduceAssignment {
    ReduceAssignment { inner: SubsetPartition::new(job.servers, job.reducers, job.functions) }
}

/// Identifies the intermediate value v_{q,n}. Orders by function, then file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct ValueId {
    pub function: usize,
    pub file: usize,
}

/// The T-bit intermediate value of `file` for `function`, keyed by `seed`.
///
/// ChaCha8 keyed with `(seed, function, file)`; any server that maps the
/// file computes the same bits.
pub fn intermediate_value(seed: u64, function: usize, file: usize, value_bits: usize) -> Bits {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(function as u64).to_le_bytes());
    key[16..24].copy_from_slice(&(file as u64).to_le_bytes());
    key[24..].copy_from_slice(b"cdc-map\0");
    let mut rng = ChaCha8Rng::from_seed(key);
    let mut bytes = vec![0u8; value_bits.div_ceil(8)];
    rng.fill_bytes(&mut bytes);
    let mut bits = Bits::from_vec(bytes);
    bits.truncate(value_bits);
    bits
}

/// Intermediate values one server computed for the files it stores.
#[derive(Debug, Clone)]
pub struct LocalValues {
    files: Vec<usize>,
    functions: usize,
    value_bits: usize,
    bits: Bits,
}

impl LocalValues {
    pub fn get(&self, function: usize, file: usize) -> Option<&BitsRef> {
        let pos = self.files.binary_search(&file).ok()?;
        let start = (pos * self.functions + function) * self.value_bits;
        Some(&self.bits[start..start + self.value_bits])
    }

    pub fn files(&self) -> &[usize] {
        &self.files
    }

    /// Number of values held, |M_k|·Q.
    pub fn len(&self) -> usize {
        self.files.len() * self.functions
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }
}

/// Output of the Map phase across all servers.
#[derive(Debug, Clone)]
pub struct IntermediateStore {
    seed: u64,
    value_bits: usize,
    files: usize,
    local: Vec<LocalValues>,
}

impl IntermediateStore {
    pub fn local(&self, server: usize) -> &LocalValues {
        &self.local[server]
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Recompute v_{q,n} from the seed, independent of any server's copy.
    pub fn reference(&self, function: usize, file: usize) -> Bits {
        intermediate_value(self.seed, function, file, self.value_bits)
    }

    /// Reference reduce output u_q over all N files.
    pub fn reference_output(&self, function: usize) -> ReduceDigest {
        let values: Vec<Bits> = (0..self.files).map(|n| self.reference(function, n)).collect();
        reduce_digest(values.iter().map(|v| v.as_bitslice()))
    }
}

pub fn map_phase(job: &JobSpec, placement: &Placement, seed: u64) -> IntermediateStore {
    let local = (0..job.servers)
        .into_par_iter()
        .map(|k| {
            let files = placement.files_of(k).to_vec();
            let mut bits = Bits::with_capacity(files.len() * job.functions * job.value_bits);
            for &n in &files {
                for q in 0..job.functions {
                    bits.extend_from_bitslice(&intermediate_value(seed, q, n, job.value_bits));
                }
            }
            LocalValues { files, functions: job.functions, value_bits: job.value_bits, bits }
        })
        .collect();
    IntermediateStore { seed, value_bits: job.value_bits, files: job.files, local }
}

/// {(q, n) : q ∈ W_k, n ∉ M_k}, ascending.
pub fn needed_values(
    job: &JobSpec,
    placement: &Placement,
    assignment: &ReduceAssignment,
    server: usize,
) -> Vec<ValueId> {
    let mut out = Vec::new();
    for &function in assignment.functions_of(server) {
        for file in 0..job.files {
            if !placement.stores(server, file) {
                out.push(ValueId { function, file });
            }
        }
    }
    out
}

pub type ReduceDigest = [u8; 32];

/// Stand-in for h_q: a SHA-256 over the ordered values v_{q,1..N}.
pub fn reduce_digest<'a>(values: impl IntoIterator<Item = &'a BitsRef>) -> ReduceDigest {
    let mut hasher = Sha256::new();
    for value in values {
        hasher.update((value.len() as u64).to_be_bytes());
        for chunk in value.chunks(8) {
            let mut byte = chunk.load_be::<u8>();
            byte <<= 8 - chunk.len();
            hasher.update([byte]);
        }
    }
    hasher.finalize().into()
}

/// Reduce phase at `server`: every q ∈ W_k from local and recovered values.
pub fn reduce_phase(
    job: &JobSpec,
    assignment: &ReduceAssignment,
    store: &IntermediateStore,
    server: usize,
    recovered: &BTreeMap<ValueId, Bits>,
) -> Result<Vec<(usize, ReduceDigest)>> {
    let local = store.local(server);
    assignment
        .functions_of(server)
        .iter()
        .map(|&q| {
            let values = (0..job.files)
                .map(|n| {
                    local
                        .get(q, n)
                        .or_else(|| recovered.get(&ValueId { function: q, file: n }).map(|b| b.as_bitslice()))
                        .ok_or_else(|| Error::DecodeFailure {
                            server,
                            reason: format!("missing v_(q={q}, n={n}) for reduce"),
                        })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((q, reduce_digest(values)))
        })
        .collect()
}
