//! Poison-set selection over scene hashes.
//!
//! The coverage objective being minimized is the sum over scene hashes of
//! the Hamming distance to the nearest selected hash. A Huang-style
//! k-modes clustering drives the objective down; a uniform-random
//! selection is the baseline. A Markov-inequality diagnostic relates the
//! objective to the miss probability at a given threshold.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::{hamming_words, HashError, PerceptualHash};

#[derive(Debug, Error)]
pub enum PoisonError {
    #[error("need at least {need} distinct hashes, got {found}")]
    InsufficientDistinctHashes { need: usize, found: usize },
    #[error(transparent)]
    Hash(#[from] HashError),
    #[error("scene hash set is empty")]
    EmptyScene,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionStrategy {
    Kmodes,
    Random,
}

impl std::fmt::Display for SelectionStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SelectionStrategy::Kmodes => write!(f, "kmodes"),
            SelectionStrategy::Random => write!(f, "random"),
        }
    }
}

/// A selected poison set. Every hash is one of the input scene hashes;
/// `source_index` points back into the input list.
#[derive(Debug, Clone)]
pub struct PoisonSet {
    pub hashes: Vec<PerceptualHash>,
    pub source_index: Vec<usize>,
    /// Coverage objective value (sum of per-image minimum Hamming
    /// distances) for the inputs the set was selected from.
    pub objective: f64,
    pub strategy: SelectionStrategy,
    /// False when the clustering hit its iteration cap before assignments
    /// stabilized; the best iterate is still returned.
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct KModesConfig {
    pub k: usize,
    pub restarts: usize,
    pub max_iterations: usize,
    pub seed: u64,
}

impl KModesConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        KModesConfig { k, restarts: 5, max_iterations: 100, seed }
    }
}

/// Exact coverage objective: for each scene hash, the Hamming distance to
/// the nearest poison, summed. Also returns the per-image minima.
pub fn objective(
    poisons: &[PerceptualHash],
    scene_hashes: &[PerceptualHash],
) -> Result<(f64, Vec<u32>), PoisonError> {
    if scene_hashes.is_empty() {
        return Err(PoisonError::EmptyScene);
    }
    let len_bits = scene_hashes[0].len_bits();
    for p in poisons {
        if p.len_bits() != len_bits {
            return Err(PoisonError::Hash(HashError::LengthMismatch {
                left: p.len_bits(),
                right: len_bits,
            }));
        }
    }
    let mins: Vec<u32> = scene_hashes
        .par_iter()
        .map(|s| {
            poisons
                .iter()
                .map(|p| hamming_words(p.words(), s.words()))
                .min()
                .unwrap_or(u32::MAX)
        })
        .collect();
    Ok((mins.iter().map(|&m| m as f64).sum(), mins))
}

/// Markov-inequality diagnostic at threshold `t` (same units as `metric`
/// distances, here raw Hamming): empirical miss rate P(min >= t) versus
/// the bound E[min] / t.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MarkovBoundReport {
    pub empirical_miss_rate: f64,
    pub expected_min_over_t: f64,
    pub holds: bool,
}

pub fn markov_bound_check(
    poisons: &[PerceptualHash],
    scene_hashes: &[PerceptualHash],
    t: f64,
) -> Result<MarkovBoundReport, PoisonError> {
    assert!(t > 0.0, "threshold must be positive");
    let (sum, mins) = objective(poisons, scene_hashes)?;
    let n = mins.len() as f64;
    let empirical_miss_rate = mins.iter().filter(|&&m| m as f64 >= t).count() as f64 / n;
    let expected_min_over_t = (sum / n) / t;
    Ok(MarkovBoundReport {
        empirical_miss_rate,
        expected_min_over_t,
        holds: empirical_miss_rate <= expected_min_over_t,
    })
}

fn distinct_count(hashes: &[PerceptualHash]) -> usize {
    let mut seen = std::collections::HashSet::new();
    for h in hashes {
        seen.insert(h);
    }
    seen.len()
}

/// Uniform sample (without replacement, over distinct bit patterns) from
/// the scene hashes.
pub fn random_select(
    scene_hashes: &[PerceptualHash],
    k: usize,
    seed: u64,
) -> Result<PoisonSet, PoisonError> {
    if scene_hashes.is_empty() {
        return Err(PoisonError::EmptyScene);
    }
    // First occurrence of each distinct pattern keeps its source index.
    let mut first_idx: Vec<usize> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, h) in scene_hashes.iter().enumerate() {
        if seen.insert(h) {
            first_idx.push(i);
        }
    }
    if first_idx.len() < k {
        return Err(PoisonError::InsufficientDistinctHashes { need: k, found: first_idx.len() });
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    first_idx.shuffle(&mut rng);
    let mut source_index: Vec<usize> = first_idx.into_iter().take(k).collect();
    source_index.sort_unstable();
    let hashes: Vec<PerceptualHash> =
        source_index.iter().map(|&i| scene_hashes[i].clone()).collect();
    let (obj, _) = objective(&hashes, scene_hashes)?;
    Ok(PoisonSet {
        hashes,
        source_index,
        objective: obj,
        strategy: SelectionStrategy::Random,
        converged: true,
    })
}

/// One k-modes restart, tracking the assignment-step objective trace.
struct RestartOutcome {
    modes: Vec<Vec<u64>>,
    assignment: Vec<usize>,
    objective_trace: Vec<f64>,
    converged: bool,
}

fn kmodes_restart(
    points: &[&[u64]],
    len_bits: usize,
    k: usize,
    max_iterations: usize,
    seed: u64,
) -> RestartOutcome {
    let n_words = points[0].len();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);

    // Random-point initialization with distinct bit patterns.
    let mut modes: Vec<Vec<u64>> = Vec::with_capacity(k);
    {
        let mut seen: std::collections::HashSet<&[u64]> = std::collections::HashSet::new();
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.shuffle(&mut rng);
        for idx in order {
            if seen.insert(points[idx]) {
                modes.push(points[idx].to_vec());
                if modes.len() == k {
                    break;
                }
            }
        }
    }
    debug_assert_eq!(modes.len(), k);

    let mut assignment = vec![usize::MAX; points.len()];
    let mut objective_trace = Vec::new();
    let mut converged = false;

    for _ in 0..max_iterations {
        // Assignment step: nearest mode, ties to the lowest cluster index.
        let new_assignment: Vec<usize> = points
            .par_iter()
            .map(|p| {
                let mut best = (u32::MAX, 0usize);
                for (c, m) in modes.iter().enumerate() {
                    let d = hamming_words(p, m);
                    if d < best.0 {
                        best = (d, c);
                    }
                }
                best.1
            })
            .collect();
        let step_objective: f64 = points
            .iter()
            .zip(&new_assignment)
            .map(|(p, &c)| hamming_words(p, &modes[c]) as f64)
            .sum();
        objective_trace.push(step_objective);
        let stable = new_assignment == assignment;
        assignment = new_assignment;
        if stable {
            converged = true;
            break;
        }

        // Update step: per-bit majority within each cluster; ties keep the
        // previous mode's bit so the update never increases the objective.
        let mut ones = vec![vec![0u32; len_bits]; k];
        let mut sizes = vec![0u32; k];
        for (p, &c) in points.iter().zip(&assignment) {
            sizes[c] += 1;
            for (b, cnt) in ones[c].iter_mut().enumerate() {
                *cnt += (p[b >> 6] >> (b & 63) & 1) as u32;
            }
        }
        for c in 0..k {
            if sizes[c] == 0 {
                continue;
            }
            let mut new_mode = vec![0u64; n_words];
            for b in 0..len_bits {
                let one_votes = ones[c][b];
                let zero_votes = sizes[c] - one_votes;
                let bit = match one_votes.cmp(&zero_votes) {
                    std::cmp::Ordering::Greater => 1u64,
                    std::cmp::Ordering::Less => 0u64,
                    std::cmp::Ordering::Equal => modes[c][b >> 6] >> (b & 63) & 1,
                };
                new_mode[b >> 6] |= bit << (b & 63);
            }
            modes[c] = new_mode;
        }

        // Empty-cluster repair: reseed from the point farthest from its
        // assigned mode, which can only lower that point's distance. Each
        // empty cluster claims a different point.
        let mut repair_used: std::collections::HashSet<usize> = std::collections::HashSet::new();
        for c in 0..k {
            if sizes[c] > 0 {
                continue;
            }
            let far = points
                .iter()
                .enumerate()
                .filter(|(i, _)| !repair_used.contains(i))
                .map(|(i, p)| (hamming_words(p, &modes[assignment[i]]), std::cmp::Reverse(i)))
                .max();
            if let Some((_, std::cmp::Reverse(far_idx))) = far {
                repair_used.insert(far_idx);
                modes[c] = points[far_idx].to_vec();
                sizes[c] = 1;
            }
        }
    }

    RestartOutcome { modes, assignment, objective_trace, converged }
}

/// Full k-modes selection: best of `cfg.restarts` independent runs by the
/// coverage objective, with each converged cluster represented by its
/// medoid among the input hashes.
pub fn kmodes_select(
    scene_hashes: &[PerceptualHash],
    cfg: &KModesConfig,
) -> Result<PoisonSet, PoisonError> {
    kmodes_select_traced(scene_hashes, cfg).map(|(set, _)| set)
}

/// Like [`kmodes_select`], also returning the per-iteration objective
/// trace of the winning restart for monotonicity checks.
pub fn kmodes_select_traced(
    scene_hashes: &[PerceptualHash],
    cfg: &KModesConfig,
) -> Result<(PoisonSet, Vec<f64>), PoisonError> {
    if scene_hashes.is_empty() {
        return Err(PoisonError::EmptyScene);
    }
    let distinct = distinct_count(scene_hashes);
    if distinct < cfg.k {
        return Err(PoisonError::InsufficientDistinctHashes { need: cfg.k, found: distinct });
    }
    assert!(cfg.restarts >= 1, "at least one restart required");
    let len_bits = scene_hashes[0].len_bits();
    for h in scene_hashes {
        if h.len_bits() != len_bits {
            return Err(PoisonError::Hash(HashError::LengthMismatch {
                left: h.len_bits(),
                right: len_bits,
            }));
        }
    }
    assert!(cfg.max_iterations >= 1, "at least one iteration required");
    let points: Vec<&[u64]> = scene_hashes.iter().map(|h| h.words()).collect();

    // Restarts are independent; each is snapped and scored, and the merge
    // takes the lowest final objective with the restart index as the
    // deterministic tie-break.
    let outcomes: Vec<Result<(f64, usize, Vec<usize>, bool, Vec<f64>), PoisonError>> = (0
        ..cfg.restarts)
        .into_par_iter()
        .map(|r| {
            let outcome = kmodes_restart(
                &points,
                len_bits as usize,
                cfg.k,
                cfg.max_iterations,
                crate::seeds::substream_indexed(cfg.seed, "kmodes-restart", r as u64),
            );
            let snapped = snap_to_medoids(&outcome.assignment, scene_hashes, &points, cfg.k);
            let source_index =
                medoid_refine(snapped, scene_hashes, &points, cfg.max_iterations);
            let snapped: Vec<PerceptualHash> =
                source_index.iter().map(|&i| scene_hashes[i].clone()).collect();
            let (obj, _) = objective(&snapped, scene_hashes)?;
            Ok((obj, r, source_index, outcome.converged, outcome.objective_trace))
        })
        .collect();
    let mut best: Option<(f64, usize, Vec<usize>, bool, Vec<f64>)> = None;
    for outcome in outcomes {
        let o = outcome?;
        best = match best {
            None => Some(o),
            Some(b) if (o.0, o.1) < (b.0, b.1) => Some(o),
            Some(b) => Some(b),
        };
    }
    let (obj, _, source_index, converged, trace) = best.expect("restarts >= 1");
    let hashes: Vec<PerceptualHash> =
        source_index.iter().map(|&i| scene_hashes[i].clone()).collect();
    Ok((
        PoisonSet {
            hashes,
            source_index,
            objective: obj,
            strategy: SelectionStrategy::Kmodes,
            converged,
        },
        trace,
    ))
}

/// Replaces each cluster's synthetic mode with an input hash. The
/// replacement is the cluster medoid — the input hash minimizing that
/// cluster's summed distance — searched over every input so the final set
/// never pays more than it must for the input-point restriction. Clusters
/// are processed largest first and claim distinct bit patterns; emptied
/// clusters fall back to the unclaimed input farthest from the hashes
/// chosen so far.
fn snap_to_medoids(
    assignment: &[usize],
    scene_hashes: &[PerceptualHash],
    points: &[&[u64]],
    k: usize,
) -> Vec<usize> {
    let mut clusters: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &c) in assignment.iter().enumerate() {
        clusters[c].push(i);
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by_key(|&c| std::cmp::Reverse(clusters[c].len()));

    let mut taken_patterns: std::collections::HashSet<&PerceptualHash> =
        std::collections::HashSet::new();
    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    for &c in &order {
        if clusters[c].is_empty() {
            continue;
        }
        let medoid = points
            .par_iter()
            .enumerate()
            .filter(|(i, _)| !taken_patterns.contains(&scene_hashes[*i]))
            .map(|(i, cand)| {
                let cost: u64 = clusters[c]
                    .iter()
                    .map(|&m| hamming_words(cand, points[m]) as u64)
                    .sum();
                (cost, i)
            })
            .min()
            .expect("distinct >= k leaves candidates");
        taken_patterns.insert(&scene_hashes[medoid.1]);
        chosen.push(medoid.1);
    }
    // Emptied clusters still spend their budget: cover the farthest
    // unclaimed input.
    while chosen.len() < k {
        let far = points
            .par_iter()
            .enumerate()
            .filter(|(i, _)| !taken_patterns.contains(&scene_hashes[*i]))
            .map(|(i, p)| {
                let nearest = chosen
                    .iter()
                    .map(|&s| hamming_words(p, points[s]))
                    .min()
                    .unwrap_or(u32::MAX);
                (nearest, std::cmp::Reverse(i))
            })
            .max()
            .expect("distinct >= k leaves candidates");
        let idx = far.1 .0;
        taken_patterns.insert(&scene_hashes[idx]);
        chosen.push(idx);
    }
    chosen.sort_unstable();
    chosen
}

/// Input-point center refinement: alternate nearest-center assignment with
/// a per-cluster medoid update over the cluster's own members (the
/// current center included), until stable. Both half-steps are
/// non-increasing in the coverage objective, so this only improves the
/// snapped selection while keeping every center an input hash.
fn medoid_refine(
    mut centers: Vec<usize>,
    scene_hashes: &[PerceptualHash],
    points: &[&[u64]],
    max_iterations: usize,
) -> Vec<usize> {
    let k = centers.len();
    let mut assignment: Vec<usize> = Vec::new();
    for _ in 0..max_iterations {
        let new_assignment: Vec<usize> = points
            .par_iter()
            .map(|p| {
                let mut best = (u32::MAX, 0usize);
                for (c, &center) in centers.iter().enumerate() {
                    let d = hamming_words(p, points[center]);
                    if d < best.0 {
                        best = (d, c);
                    }
                }
                best.1
            })
            .collect();
        let stable = new_assignment == assignment;
        assignment = new_assignment;
        if stable {
            break;
        }
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
        for (i, &c) in assignment.iter().enumerate() {
            members[c].push(i);
        }
        for c in 0..k {
            if members[c].is_empty() {
                continue;
            }
            let current_cost: u64 = members[c]
                .iter()
                .map(|&m| hamming_words(points[centers[c]], points[m]) as u64)
                .sum();
            let best = members[c]
                .par_iter()
                .map(|&cand| {
                    let cost: u64 = members[c]
                        .iter()
                        .map(|&m| hamming_words(points[cand], points[m]) as u64)
                        .sum();
                    (cost, cand)
                })
                .min()
                .expect("cluster nonempty");
            if best.0 < current_cost {
                centers[c] = best.1;
            }
        }
    }
    // Distinctness can erode if two clusters converge on one pattern;
    // repair from the farthest unclaimed inputs.
    let mut seen: std::collections::HashSet<&PerceptualHash> = std::collections::HashSet::new();
    let mut kept: Vec<usize> = Vec::with_capacity(k);
    for &c in &centers {
        if seen.insert(&scene_hashes[c]) {
            kept.push(c);
        }
    }
    while kept.len() < k {
        let far = points
            .iter()
            .enumerate()
            .filter(|(i, _)| !seen.contains(&scene_hashes[*i]))
            .map(|(i, p)| {
                let nearest =
                    kept.iter().map(|&s| hamming_words(p, points[s])).min().unwrap_or(u32::MAX);
                (nearest, std::cmp::Reverse(i))
            })
            .max()
            .expect("distinct >= k leaves candidates");
        let idx = far.1 .0;
        seen.insert(&scene_hashes[idx]);
        kept.push(idx);
    }
    kept.sort_unstable();
    kept
}
