//! The scanner core: a hash database with threshold matching, false
//! positive measurement, and threshold calibration from benign distances.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::{hamming_words, DistanceMetric, HashError, PerceptualHash};

#[derive(Debug, Error)]
pub enum MatcherError {
    #[error("cannot build an empty database")]
    Empty,
    #[error(transparent)]
    Hash(#[from] HashError),
    #[error("benign set is empty")]
    EmptyBenignSet,
    #[error("false positive target {target} is unreachable: even t=0 flags {fpr_at_zero}")]
    UnreachableTarget { target: f64, fpr_at_zero: f64 },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid database file {path}: {reason}")]
    InvalidFormat { path: String, reason: String },
}

/// Where a database entry came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Legitimate,
    Poison,
}

impl Provenance {
    fn to_byte(self) -> u8 {
        match self {
            Provenance::Legitimate => 0,
            Provenance::Poison => 1,
        }
    }

    fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Provenance::Legitimate),
            1 => Some(Provenance::Poison),
            _ => None,
        }
    }
}

/// Deduplicated set of equal-length hashes with per-entry provenance.
/// Immutable after build; queries are read-only and thread-safe.
#[derive(Debug, Clone)]
pub struct HashDatabase {
    entries: Vec<PerceptualHash>,
    tags: Vec<Provenance>,
    len_bits: u16,
    duplicates_dropped: usize,
}

/// Matching configuration: the metric and its threshold.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MatchConfig {
    pub metric: DistanceMetric,
    pub threshold: f64,
}

impl MatchConfig {
    pub fn validate(&self, len_bits: u16) -> Result<(), HashError> {
        let max = self.metric.max_value(len_bits);
        if !(0.0..=max).contains(&self.threshold) || !self.threshold.is_finite() {
            return Err(HashError::InvalidSpec(format!(
                "threshold {} outside [0, {max}] for {}",
                self.threshold, self.metric
            )));
        }
        Ok(())
    }
}

/// Outcome of matching one hash against the database.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchResult {
    pub flagged: bool,
    /// Exact minimum distance over entries; infinite for an empty database.
    pub best_distance: f64,
    pub best_entry_provenance: Option<Provenance>,
}

impl HashDatabase {
    /// Builds a deduplicated database. Duplicate bit patterns collapse to
    /// the first occurrence (first tag wins); the drop count is retained.
    pub fn build(
        hashes: impl IntoIterator<Item = PerceptualHash>,
        tags: impl IntoIterator<Item = Provenance>,
    ) -> Result<Self, MatcherError> {
        let mut entries: Vec<PerceptualHash> = Vec::new();
        let mut kept_tags: Vec<Provenance> = Vec::new();
        let mut seen: HashMap<PerceptualHash, usize> = HashMap::new();
        let mut len_bits = None;
        let mut duplicates_dropped = 0usize;
        let mut tag_iter = tags.into_iter();
        for hash in hashes {
            let tag = tag_iter.next().unwrap_or(Provenance::Legitimate);
            match len_bits {
                None => len_bits = Some(hash.len_bits()),
                Some(n) if n != hash.len_bits() => {
                    return Err(MatcherError::Hash(HashError::LengthMismatch {
                        left: n,
                        right: hash.len_bits(),
                    }))
                }
                _ => {}
            }
            if seen.contains_key(&hash) {
                duplicates_dropped += 1;
            } else {
                seen.insert(hash.clone(), entries.len());
                entries.push(hash);
                kept_tags.push(tag);
            }
        }
        let len_bits = len_bits.ok_or(MatcherError::Empty)?;
        Ok(HashDatabase { entries, tags: kept_tags, len_bits, duplicates_dropped })
    }

    pub fn from_legitimate(hashes: impl IntoIterator<Item = PerceptualHash>) -> Result<Self, MatcherError> {
        Self::build(hashes, std::iter::repeat(Provenance::Legitimate))
    }

    /// A copy of this database with extra poison entries appended.
    pub fn with_poisons(
        &self,
        poisons: impl IntoIterator<Item = PerceptualHash>,
    ) -> Result<Self, MatcherError> {
        let hashes: Vec<PerceptualHash> = self.entries.iter().cloned().chain(poisons).collect();
        let tags = self.tags.iter().copied().chain(std::iter::repeat(Provenance::Poison));
        Self::build(hashes, tags)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len_bits(&self) -> u16 {
        self.len_bits
    }

    pub fn duplicates_dropped(&self) -> usize {
        self.duplicates_dropped
    }

    pub fn entries(&self) -> impl Iterator<Item = (&PerceptualHash, Provenance)> {
        self.entries.iter().zip(self.tags.iter().copied())
    }

    pub fn poison_count(&self) -> usize {
        self.tags.iter().filter(|t| **t == Provenance::Poison).count()
    }

    pub fn poison_fraction(&self) -> f64 {
        self.poison_count() as f64 / self.entries.len() as f64
    }

    /// Exact minimum Hamming distance and the index achieving it.
    fn min_hamming(&self, query: &PerceptualHash) -> Option<(u32, usize)> {
        let qw = query.words();
        self.entries
            .iter()
            .enumerate()
            .map(|(i, e)| (hamming_words(qw, e.words()), i))
            .min()
    }

    /// Flags a query iff its minimum distance is `<= threshold`. Boundary
    /// distances exactly at the threshold flag.
    pub fn flag(&self, query: &PerceptualHash, cfg: &MatchConfig) -> Result<MatchResult, MatcherError> {
        if !self.entries.is_empty() && query.len_bits() != self.len_bits {
            return Err(MatcherError::Hash(HashError::LengthMismatch {
                left: query.len_bits(),
                right: self.len_bits,
            }));
        }
        match self.min_hamming(query) {
            None => Ok(MatchResult {
                flagged: false,
                best_distance: f64::INFINITY,
                best_entry_provenance: None,
            }),
            Some((ham, idx)) => {
                let distance = cfg.metric.from_hamming(ham, self.len_bits);
                Ok(MatchResult {
                    flagged: distance <= cfg.threshold,
                    best_distance: distance,
                    best_entry_provenance: Some(self.tags[idx]),
                })
            }
        }
    }

    /// Minimum Hamming distances for a batch of queries.
    pub fn min_distances(&self, queries: &[PerceptualHash]) -> Result<Vec<u32>, MatcherError> {
        queries
            .par_iter()
            .map(|q| {
                if q.len_bits() != self.len_bits {
                    return Err(MatcherError::Hash(HashError::LengthMismatch {
                        left: q.len_bits(),
                        right: self.len_bits,
                    }));
                }
                Ok(self.min_hamming(q).map(|(h, _)| h).unwrap_or(u32::MAX))
            })
            .collect()
    }

    /// Fraction of `benign` flagged at `cfg`.
    pub fn false_positive_rate(
        &self,
        benign: &[PerceptualHash],
        cfg: &MatchConfig,
    ) -> Result<f64, MatcherError> {
        if benign.is_empty() {
            return Err(MatcherError::EmptyBenignSet);
        }
        let dists = self.min_distances(benign)?;
        let flagged = dists
            .iter()
            .filter(|&&h| cfg.metric.from_hamming(h, self.len_bits) <= cfg.threshold)
            .count();
        Ok(flagged as f64 / benign.len() as f64)
    }

    /// The FPR-versus-threshold curve over the full discrete grid of the
    /// metric, plus the largest threshold keeping FPR at or below target.
    pub fn calibrate_threshold(
        &self,
        benign: &[PerceptualHash],
        metric: DistanceMetric,
        target_fpr: f64,
    ) -> Result<Calibration, MatcherError> {
        if benign.is_empty() {
            return Err(MatcherError::EmptyBenignSet);
        }
        let dists = self.min_distances(benign)?;
        let n = self.len_bits as usize;
        // Histogram of min distances over the discrete Hamming grid.
        let mut counts = vec![0usize; n + 1];
        for &d in &dists {
            counts[(d as usize).min(n)] += 1;
        }
        let total = benign.len() as f64;
        let mut curve = Vec::with_capacity(n + 1);
        let mut cumulative = 0usize;
        let mut best: Option<f64> = None;
        for ham in 0..=n {
            cumulative += counts[ham];
            let fpr = cumulative as f64 / total;
            let t = metric.from_hamming(ham as u32, self.len_bits);
            if fpr <= target_fpr {
                best = Some(t);
            }
            curve.push((t, fpr));
        }
        match best {
            Some(threshold) => Ok(Calibration { threshold, curve, target_fpr }),
            None => Err(MatcherError::UnreachableTarget {
                target: target_fpr,
                fpr_at_zero: curve[0].1,
            }),
        }
    }

    /// Serializes to the binary database format:
    /// magic `CSDB`, format version u16, hash bit length u16, entry count
    /// u64 (all big-endian), then per entry the hash as a big-endian bit
    /// block followed by a one-byte provenance tag.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), MatcherError> {
        let path = path.as_ref();
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(b"CSDB");
        buf.extend_from_slice(&DB_FORMAT_VERSION.to_be_bytes());
        buf.extend_from_slice(&self.len_bits.to_be_bytes());
        buf.extend_from_slice(&(self.entries.len() as u64).to_be_bytes());
        for (hash, tag) in self.entries() {
            buf.extend_from_slice(&hash.to_bytes());
            buf.push(tag.to_byte());
        }
        let mut file = std::fs::File::create(path).map_err(|source| MatcherError::Io {
            path: path.display().to_string(),
            source,
        })?;
        file.write_all(&buf).map_err(|source| MatcherError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MatcherError> {
        let path = path.as_ref();
        let mut file = std::fs::File::open(path).map_err(|source| MatcherError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut buf = Vec::new();
        file.read_to_end(&mut buf).map_err(|source| MatcherError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let bad = |reason: &str| MatcherError::InvalidFormat {
            path: path.display().to_string(),
            reason: reason.to_string(),
        };
        if buf.len() < 16 || &buf[0..4] != b"CSDB" {
            return Err(bad("missing CSDB magic"));
        }
        let version = u16::from_be_bytes([buf[4], buf[5]]);
        if version != DB_FORMAT_VERSION {
            return Err(bad(&format!("unsupported format version {version}")));
        }
        let len_bits = u16::from_be_bytes([buf[6], buf[7]]);
        if len_bits == 0 || len_bits % 8 != 0 {
            return Err(bad(&format!("invalid bit length {len_bits}")));
        }
        let count = u64::from_be_bytes(buf[8..16].try_into().unwrap()) as usize;
        let entry_len = len_bits as usize / 8 + 1;
        if buf.len() != 16 + count * entry_len {
            return Err(bad(&format!(
                "expected {} bytes for {count} entries, file has {}",
                16 + count * entry_len,
                buf.len()
            )));
        }
        let mut hashes = Vec::with_capacity(count);
        let mut tags = Vec::with_capacity(count);
        for i in 0..count {
            let start = 16 + i * entry_len;
            let hash_bytes = &buf[start..start + entry_len - 1];
            let tag_byte = buf[start + entry_len - 1];
            hashes.push(
                PerceptualHash::from_bytes(hash_bytes, len_bits, 100.0)
                    .map_err(MatcherError::Hash)?,
            );
            tags.push(
                Provenance::from_byte(tag_byte)
                    .ok_or_else(|| bad(&format!("invalid provenance byte {tag_byte}")))?,
            );
        }
        Self::build(hashes, tags)
    }
}

pub const DB_FORMAT_VERSION: u16 = 1;

/// Result of calibrating the detection threshold against benign hashes.
#[derive(Debug, Clone)]
pub struct Calibration {
    /// Largest grid threshold whose FPR stays at or below the target.
    pub threshold: f64,
    /// Full (threshold, FPR) curve over the discrete Hamming grid.
    pub curve: Vec<(f64, f64)>,
    pub target_fpr: f64,
}

/// Distribution of pairwise distances between two hash sets, for the
/// benign-pairs inspection plot. Both sampling modes are supported since
/// deployments differ on which they report.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairSampling {
    AllPairs,
    RandomPairs { count: usize, seed: u64 },
}

pub fn pairwise_distance_histogram(
    a: &[PerceptualHash],
    b: &[PerceptualHash],
    metric: DistanceMetric,
    sampling: PairSampling,
) -> Result<Vec<(f64, u64)>, MatcherError> {
    use rand::{Rng, SeedableRng};
    if a.is_empty() || b.is_empty() {
        return Err(MatcherError::EmptyBenignSet);
    }
    let len_bits = a[0].len_bits();
    let mut counts = vec![0u64; len_bits as usize + 1];
    match sampling {
        PairSampling::AllPairs => {
            for x in a {
                for y in b {
                    counts[x.hamming(y).map_err(MatcherError::Hash)? as usize] += 1;
                }
            }
        }
        PairSampling::RandomPairs { count, seed } => {
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
            for _ in 0..count {
                let x = &a[rng.gen_range(0..a.len())];
                let y = &b[rng.gen_range(0..b.len())];
                counts[x.hamming(y).map_err(MatcherError::Hash)? as usize] += 1;
            }
        }
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(h, c)| (metric.from_hamming(h as u32, len_bits), c))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn random_hash(rng: &mut impl Rng, bits: u16) -> PerceptualHash {
        PerceptualHash::from_bits((0..bits).map(|_| rng.gen_bool(0.5)), bits, 100.0)
    }

    #[test]
    fn build_dedupes_and_counts() {
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let a = random_hash(&mut rng, 256);
        let b = random_hash(&mut rng, 256);
        let c = random_hash(&mut rng, 256);
        let db = HashDatabase::build(
            vec![a.clone(), b.clone(), c.clone()],
            std::iter::repeat(Provenance::Legitimate),
        )
        .unwrap();
        assert_eq!(db.len(), 3);
        assert_eq!(db.duplicates_dropped(), 0);

        let db = HashDatabase::build(
            vec![a.clone(), a.clone()],
            vec![Provenance::Legitimate, Provenance::Poison],
        )
        .unwrap();
        assert_eq!(db.len(), 1);
        assert_eq!(db.duplicates_dropped(), 1);
        // First tag wins.
        assert_eq!(db.entries().next().unwrap().1, Provenance::Legitimate);
    }

    #[test]
    fn exact_member_flags_at_any_threshold() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let hashes: Vec<_> = (0..10).map(|_| random_hash(&mut rng, 256)).collect();
        let db = HashDatabase::from_legitimate(hashes.clone()).unwrap();
        let cfg = MatchConfig { metric: DistanceMetric::NormalizedL1, threshold: 0.0 };
        let r = db.flag(&hashes[3], &cfg).unwrap();
        assert!(r.flagged);
        assert_eq!(r.best_distance, 0.0);
    }

    #[test]
    fn threshold_boundary_flags_inclusively() {
        let base = PerceptualHash::zero(256, 100.0);
        let mut at_16 = base.clone();
        for i in 0..16 {
            at_16.set_bit(i);
        }
        let db = HashDatabase::from_legitimate(vec![base]).unwrap();
        // 16/256 = 0.0625 exactly at threshold: flags.
        let cfg = MatchConfig { metric: DistanceMetric::NormalizedL1, threshold: 0.0625 };
        assert!(db.flag(&at_16, &cfg).unwrap().flagged);
        // Just below the distance: not flagged.
        let cfg = MatchConfig { metric: DistanceMetric::NormalizedL1, threshold: 0.0624 };
        assert!(!db.flag(&at_16, &cfg).unwrap().flagged);
    }

    #[test]
    fn fpr_counts_exactly() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let db_hashes: Vec<_> = (0..50).map(|_| random_hash(&mut rng, 64)).collect();
        let db = HashDatabase::from_legitimate(db_hashes.clone()).unwrap();
        let cfg = MatchConfig { metric: DistanceMetric::Hamming, threshold: 0.0 };
        // 1 of 100 queries is an exact member.
        let mut queries: Vec<_> = (0..99).map(|_| random_hash(&mut rng, 64)).collect();
        queries.push(db_hashes[0].clone());
        let fpr = db.false_positive_rate(&queries, &cfg).unwrap();
        assert!(fpr >= 0.01 && fpr < 0.05, "fpr {fpr}");
    }

    #[test]
    fn calibration_matches_exhaustive_sweep() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let db_hashes: Vec<_> = (0..200).map(|_| random_hash(&mut rng, 64)).collect();
        let benign: Vec<_> = (0..300).map(|_| random_hash(&mut rng, 64)).collect();
        let db = HashDatabase::from_legitimate(db_hashes).unwrap();
        let target = 0.05;
        let cal = db.calibrate_threshold(&benign, DistanceMetric::Hamming, target).unwrap();
        // Exhaustive oracle over every grid threshold.
        let mut best = None;
        for t in 0..=64u32 {
            let cfg = MatchConfig { metric: DistanceMetric::Hamming, threshold: t as f64 };
            if db.false_positive_rate(&benign, &cfg).unwrap() <= target {
                best = Some(t as f64);
            }
        }
        assert_eq!(cal.threshold, best.unwrap());
        // The curve is monotone non-decreasing.
        for w in cal.curve.windows(2) {
            assert!(w[1].1 >= w[0].1);
        }
    }

    #[test]
    fn calibrate_full_target_returns_metric_max() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let db = HashDatabase::from_legitimate((0..10).map(|_| random_hash(&mut rng, 64)))
            .unwrap();
        let benign: Vec<_> = (0..10).map(|_| random_hash(&mut rng, 64)).collect();
        let cal = db.calibrate_threshold(&benign, DistanceMetric::NormalizedL1, 1.0).unwrap();
        assert_eq!(cal.threshold, 1.0);
    }

    #[test]
    fn calibrate_unreachable_when_benign_in_db() {
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let shared = random_hash(&mut rng, 64);
        let db = HashDatabase::from_legitimate(vec![shared.clone()]).unwrap();
        let err = db.calibrate_threshold(&[shared], DistanceMetric::Hamming, 0.001);
        assert!(matches!(err, Err(MatcherError::UnreachableTarget { .. })));
    }

    #[test]
    fn empty_database_signals_not_flagged() {
        let db = HashDatabase {
            entries: vec![],
            tags: vec![],
            len_bits: 256,
            duplicates_dropped: 0,
        };
        let q = PerceptualHash::zero(256, 100.0);
        let cfg = MatchConfig { metric: DistanceMetric::Hamming, threshold: 10.0 };
        let r = db.flag(&q, &cfg).unwrap();
        assert!(!r.flagged);
        assert!(r.best_distance.is_infinite());
        assert!(r.best_entry_provenance.is_none());
    }

    #[test]
    fn save_load_round_trip_is_byte_identical() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let hashes: Vec<_> = (0..20).map(|_| random_hash(&mut rng, 256)).collect();
        let tags: Vec<_> = (0..20)
            .map(|i| if i % 3 == 0 { Provenance::Poison } else { Provenance::Legitimate })
            .collect();
        let db = HashDatabase::build(hashes, tags).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.csdb");
        let p2 = dir.path().join("b.csdb");
        db.save(&p1).unwrap();
        let loaded = HashDatabase::load(&p1).unwrap();
        loaded.save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        assert_eq!(loaded.len(), db.len());
        assert_eq!(loaded.poison_count(), db.poison_count());
        for ((h1, t1), (h2, t2)) in db.entries().zip(loaded.entries()) {
            assert_eq!(h1, h2);
            assert_eq!(t1, t2);
        }
    }

    #[test]
    fn hundred_k_random_hashes_stay_unique() {
        // Birthday bound: 1e5 random 256-bit patterns collide with
        // probability ~1e-67; the spec example scales this down.
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let hashes: Vec<_> = (0..100_000).map(|_| {
            let mut h = PerceptualHash::zero(256, 100.0);
            for w in 0..4 {
                let word: u64 = rng.gen();
                for b in 0..64 {
                    if word >> b & 1 == 1 {
                        h.set_bit(w * 64 + b);
                    }
                }
            }
            h
        }).collect();
        let db = HashDatabase::from_legitimate(hashes).unwrap();
        assert!(db.len() >= 99_999);
    }
}
