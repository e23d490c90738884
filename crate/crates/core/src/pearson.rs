//! Pearson hashing over byte streams.
//!
//! A [`HashTable`] is a seeded permutation of `0..=255`. The 8-bit hash folds
//! a stream as `h <- T[h ^ x]` starting from `h = 0`. Wider hashes
//! concatenate digits: digit `j` uses the table of `seed ^ j` and the stream
//! whose first byte is replaced by `x_1 + j (mod 256)`.
//!
//! Because every table is a bijection, two streams that differ in exactly one
//! position always hash differently. With two or more altered positions the
//! final altered unit must hit one specific value to cancel the difference,
//! which is what [`collision_experiment`] and [`exhaustive_collision_count`]
//! measure.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::rng::SplitMix64;
use crate::{Error, Result};

#[derive(Clone, PartialEq, Eq)]
pub struct HashTable {
    table: [u8; 256],
    seed: u64,
}

impl core::fmt::Debug for HashTable {
    // The table is a secret; only show its seed.
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("HashTable")
            .field("seed", &self.seed)
            .finish_non_exhaustive()
    }
}

impl HashTable {
    /// Fisher-Yates shuffle of `0..=255` driven by SplitMix64(`seed`),
    /// swapping index `i` (from 255 down to 1) with `below(i + 1)`.
    pub fn generate(seed: u64) -> Self {
        let mut table = [0u8; 256];
        for (i, t) in table.iter_mut().enumerate() {
            *t = i as u8;
        }
        SplitMix64::new(seed).shuffle(&mut table);
        Self { table, seed }
    }

    /// `T[i] = i`. Hashing with it reduces to XOR-folding the stream.
    pub fn identity() -> Self {
        let mut table = [0u8; 256];
        for (i, t) in table.iter_mut().enumerate() {
            *t = i as u8;
        }
        Self { table, seed: 0 }
    }

    /// Wraps an explicit table; rejects anything that is not a permutation.
    pub fn from_permutation(table: [u8; 256], seed: u64) -> Result<Self> {
        if !is_permutation(&table) {
            return Err(Error::Invalid(
                "hash table is not a permutation of 0..=255".into(),
            ));
        }
        Ok(Self { table, seed })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn as_bytes(&self) -> &[u8; 256] {
        &self.table
    }

    #[inline(always)]
    pub fn lookup(&self, x: u8) -> u8 {
        self.table[x as usize]
    }

    /// 8-byte little-endian seed followed by the 256 table bytes.
    pub fn export_with_seed(&self) -> [u8; 264] {
        let mut out = [0u8; 264];
        out[..8].copy_from_slice(&self.seed.to_le_bytes());
        out[8..].copy_from_slice(&self.table);
        out
    }

    /// Folds `stream` into `h`.
    #[inline]
    pub fn fold(&self, mut h: u8, stream: &[u8]) -> u8 {
        for &x in stream {
            h = self.table[(h ^ x) as usize];
        }
        h
    }
}

pub fn gen_table(seed: u64) -> HashTable {
    HashTable::generate(seed)
}

fn is_permutation(table: &[u8; 256]) -> bool {
    let mut seen = [false; 256];
    for &v in table {
        if core::mem::replace(&mut seen[v as usize], true) {
            return false;
        }
    }
    true
}

/// Incremental 8-bit hasher; chunking the input does not change the result.
#[derive(Debug, Clone)]
pub struct PearsonHasher<'t> {
    table: &'t HashTable,
    state: u8,
    fed: usize,
}

impl<'t> PearsonHasher<'t> {
    pub fn new(table: &'t HashTable) -> Self {
        Self {
            table,
            state: 0,
            fed: 0,
        }
    }

    pub fn update(&mut self, chunk: &[u8]) {
        self.state = self.table.fold(self.state, chunk);
        self.fed += chunk.len();
    }

    pub fn finish(&self) -> Result<u8> {
        if self.fed == 0 {
            return Err(Error::Empty("cannot hash an empty stream"));
        }
        Ok(self.state)
    }
}

/// 8-bit Pearson hash of a non-empty stream.
pub fn hash_stream(table: &HashTable, stream: &[u8]) -> Result<u8> {
    if stream.is_empty() {
        return Err(Error::Empty("cannot hash an empty stream"));
    }
    Ok(table.fold(0, stream))
}

/// A hash of fixed width; equality compares every digit.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HashValue {
    digits: Vec<u8>,
}

impl HashValue {
    pub fn new(digits: Vec<u8>) -> Result<Self> {
        if digits.is_empty() {
            return Err(Error::Invalid(
                "hash width must be at least one unit".into(),
            ));
        }
        Ok(Self { digits })
    }

    pub fn width(&self) -> usize {
        self.digits.len()
    }

    pub fn digits(&self) -> &[u8] {
        &self.digits
    }
}

impl From<u8> for HashValue {
    fn from(h: u8) -> Self {
        Self { digits: vec![h] }
    }
}

/// Table seed for digit `j` of a widened hash.
#[inline]
pub fn digit_seed(seed: u64, j: usize) -> u64 {
    seed ^ j as u64
}

/// Widened Pearson hash with `width` digits (see module docs). Width 1 equals
/// `hash_stream(&gen_table(seed), stream)`.
pub fn hash_wide(seed: u64, stream: &[u8], width: usize) -> Result<HashValue> {
    if width == 0 {
        return Err(Error::Invalid(
            "hash width must be at least one unit".into(),
        ));
    }
    let tables: Vec<HashTable> = (0..width).map(|j| gen_table(digit_seed(seed, j))).collect();
    hash_wide_with(&tables, stream)
}

/// [`hash_wide`] with pre-generated digit tables (`tables[j]` for digit `j`).
pub fn hash_wide_with(tables: &[HashTable], stream: &[u8]) -> Result<HashValue> {
    let (&first, rest) = stream
        .split_first()
        .ok_or(Error::Empty("cannot hash an empty stream"))?;
    if tables.is_empty() {
        return Err(Error::Invalid(
            "hash width must be at least one unit".into(),
        ));
    }
    let digits = tables
        .iter()
        .enumerate()
        .map(|(j, t)| {
            let h = t.lookup(first.wrapping_add(j as u8));
            t.fold(h, rest)
        })
        .collect();
    Ok(HashValue { digits })
}

/// Outcome of a Monte-Carlo collision experiment.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CollisionStats {
    pub collisions: u64,
    pub trials: u64,
}

impl CollisionStats {
    pub fn rate(&self) -> f64 {
        self.collisions as f64 / self.trials as f64
    }

    pub fn merge(self, other: Self) -> Self {
        Self {
            collisions: self.collisions + other.collisions,
            trials: self.trials + other.trials,
        }
    }
}

/// Validates `(len, k, trials)` for [`collision_experiment`].
pub fn check_collision_params(len: usize, k: usize, trials: u64) -> Result<()> {
    if k < 2 {
        return Err(Error::Invalid(format!(
            "k = {k}: single alterations never collide; k must be at least 2"
        )));
    }
    if k > len {
        return Err(Error::Invalid(format!(
            "k = {k} exceeds stream length {len}"
        )));
    }
    if trials == 0 {
        return Err(Error::Invalid("at least one trial is required".into()));
    }
    Ok(())
}

/// Seed of trial `index` in an experiment seeded with `seed`.
#[inline]
pub fn trial_seed(seed: u64, index: u64) -> u64 {
    seed ^ index
}

/// One collision trial with its own generator.
///
/// Draws a uniform random stream of `len` bytes, picks `k` distinct
/// positions, rewrites the earliest of them with a uniformly chosen
/// *different* byte and every later one with a uniform byte, and reports
/// whether the two streams hash to the same value under `table`. Forcing the
/// first rewrite to change guarantees the streams differ; leaving the later
/// ones uniform makes the collision probability exactly 1/256 regardless of
/// `k`.
pub fn collision_trial(
    table: &HashTable,
    len: usize,
    k: usize,
    rng: &mut SplitMix64,
    scratch: &mut Vec<u8>,
) -> bool {
    scratch.clear();
    scratch.reserve(len);
    while scratch.len() < len {
        let word = rng.next_u64().to_le_bytes();
        let take = (len - scratch.len()).min(8);
        scratch.extend_from_slice(&word[..take]);
    }
    let positions = distinct_positions(rng, len, k);
    let first = positions[0];
    let prefix = table.fold(0, &scratch[..first]);
    let original = table.fold(prefix, &scratch[first..]);

    let old = scratch[first];
    scratch[first] = old.wrapping_add(1 + rng.below(255) as u8);
    for &p in &positions[1..] {
        scratch[p] = rng.below(256) as u8;
    }
    table.fold(prefix, &scratch[first..]) == original
}

/// `k` distinct sorted positions in `0..len` (Floyd's sampling).
fn distinct_positions(rng: &mut SplitMix64, len: usize, k: usize) -> Vec<usize> {
    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    for j in (len - k)..len {
        let t = rng.below_usize(j + 1);
        if chosen.contains(&t) {
            chosen.push(j);
        } else {
            chosen.push(t);
        }
    }
    chosen.sort_unstable();
    chosen
}

/// Runs trials `range` of an experiment. Trial `i` uses
/// `SplitMix64::new(trial_seed(seed, i))` and the table of `seed`, so any
/// partition of the trial range sums to the same totals.
pub fn collision_trials(
    len: usize,
    k: usize,
    seed: u64,
    range: core::ops::Range<u64>,
) -> CollisionStats {
    let table = gen_table(seed);
    let mut scratch = Vec::with_capacity(len);
    let mut collisions = 0;
    let trials = range.end.saturating_sub(range.start);
    for i in range {
        let mut rng = SplitMix64::new(trial_seed(seed, i));
        if collision_trial(&table, len, k, &mut rng, &mut scratch) {
            collisions += 1;
        }
    }
    CollisionStats { collisions, trials }
}

/// Monte-Carlo collision rate for `k` alterations in streams of `len` bytes.
pub fn collision_experiment(
    len: usize,
    k: usize,
    trials: u64,
    seed: u64,
) -> Result<CollisionStats> {
    check_collision_params(len, k, trials)?;
    Ok(collision_trials(len, k, seed, 0..trials))
}

/// Pearson analogue over a `2^bits`-symbol alphabet: `table` permutes
/// `0..2^bits` and the fold is `h <- T[h ^ x]` from `h = 0`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SmallTable {
    bits: u32,
    table: Vec<u8>,
}

impl SmallTable {
    pub fn new(bits: u32, table: Vec<u8>) -> Result<Self> {
        if !(1..=8).contains(&bits) || table.len() != 1 << bits {
            return Err(Error::Invalid(format!(
                "a {bits}-bit alphabet needs {} entries",
                1u32 << bits.min(8)
            )));
        }
        let mut seen = vec![false; table.len()];
        for &v in &table {
            let slot = seen
                .get_mut(v as usize)
                .ok_or_else(|| Error::Invalid("table value outside alphabet".into()))?;
            if core::mem::replace(slot, true) {
                return Err(Error::Invalid("table is not a permutation".into()));
            }
        }
        Ok(Self { bits, table })
    }

    /// Seeded permutation of the alphabet.
    pub fn generate(bits: u32, seed: u64) -> Result<Self> {
        let n = 1usize << bits.min(8);
        let mut table: Vec<u8> = (0..n).map(|v| v as u8).collect();
        SplitMix64::new(seed).shuffle(&mut table);
        Self::new(bits, table)
    }

    pub fn alphabet(&self) -> usize {
        self.table.len()
    }

    pub fn hash(&self, stream: &[u8]) -> u8 {
        stream
            .iter()
            .fold(0u8, |h, &x| self.table[(h ^ x) as usize])
    }
}

/// Exhaustive count over every stream of length `len`, every set of `k`
/// positions, and every rewrite allowed by the model of [`collision_trial`]
/// (earliest position: any different symbol; later positions: any symbol).
/// Returns `(collisions, cases)`.
pub fn exhaustive_collision_count(table: &SmallTable, len: usize, k: usize) -> Result<(u64, u64)> {
    check_collision_params(len, k, 1)?;
    let a = table.alphabet();
    let streams = (a as u64).checked_pow(len as u32).filter(|&n| n <= 1 << 24);
    let streams = streams
        .ok_or_else(|| Error::Invalid(format!("{a}^{len} streams is too many to enumerate")))?;
    let subsets = combinations(len, k);
    let (mut collisions, mut cases) = (0u64, 0u64);
    let mut stream = vec![0u8; len];
    let mut altered = vec![0u8; len];
    for code in 0..streams {
        let mut c = code;
        for s in stream.iter_mut() {
            *s = (c % a as u64) as u8;
            c /= a as u64;
        }
        let h = table.hash(&stream);
        for positions in &subsets {
            // Mixed-radix counter: (a - 1) choices for the first position, a for the rest.
            let radix: Vec<usize> = (0..k).map(|i| if i == 0 { a - 1 } else { a }).collect();
            let total: usize = radix.iter().product();
            for mut choice in 0..total {
                altered.copy_from_slice(&stream);
                for (i, &p) in positions.iter().enumerate() {
                    let d = choice % radix[i];
                    choice /= radix[i];
                    altered[p] = if i == 0 {
                        ((stream[p] as usize + 1 + d) % a) as u8
                    } else {
                        d as u8
                    };
                }
                cases += 1;
                if table.hash(&altered) == h {
                    collisions += 1;
                }
            }
        }
    }
    Ok((collisions, cases))
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::with_capacity(k), &mut out);
    out
}
