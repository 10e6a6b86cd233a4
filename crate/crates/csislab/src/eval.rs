//! Metric suite and sweeps: surveillance rate, false positive rate,
//! detection under syntactic variations, threshold trade-off curves,
//! budget/strategy tables, cross-condition matrices, and occlusion curves.
//!
//! Reports are long-format: one metric value per row, with aggregate rows
//! carrying mean and standard deviation over seeds. Row order is fully
//! deterministic so runs with one seed produce byte-identical files.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::{DistanceMetric, HashFunction, PerceptualHash};
use crate::img::{apply_variation, composite_foreground, LumaImage, VariationLevel};
use crate::matcher::{HashDatabase, MatchConfig, MatcherError};
use crate::poison::{kmodes_select, random_select, KModesConfig, PoisonError, SelectionStrategy};
use crate::seeds::substream_indexed;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("user set is empty")]
    EmptyUserSet,
    #[error("need at least 2 conditions, got {0}")]
    TooFewConditions(usize),
    #[error(transparent)]
    Matcher(#[from] MatcherError),
    #[error(transparent)]
    Poison(#[from] PoisonError),
    #[error(transparent)]
    Hash(#[from] crate::hash::HashError),
    #[error(transparent)]
    Image(#[from] crate::img::ImageOpsError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One metric observation (or aggregate) in a report.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalRow {
    pub scenario: String,
    pub hash_kind: String,
    /// Which rate this row carries.
    pub metric: String,
    pub threshold: f64,
    pub budget: Option<usize>,
    pub strategy: Option<String>,
    pub ref_condition: Option<u32>,
    pub user_condition: Option<u32>,
    pub variation_level: Option<String>,
    pub occlusion_fraction: Option<f64>,
    /// Per-seed rows carry the seed and value; aggregate rows carry mean
    /// and stdev instead.
    pub seed: Option<u64>,
    pub value: Option<f64>,
    pub mean: Option<f64>,
    pub stdev: Option<f64>,
}

impl EvalRow {
    /// Blank row carrying only the shared key columns.
    pub fn base(scenario: &str, hash_kind: &str, metric: &str, threshold: f64) -> Self {
        EvalRow {
            scenario: scenario.to_string(),
            hash_kind: hash_kind.to_string(),
            metric: metric.to_string(),
            threshold,
            budget: None,
            strategy: None,
            ref_condition: None,
            user_condition: None,
            variation_level: None,
            occlusion_fraction: None,
            seed: None,
            value: None,
            mean: None,
            stdev: None,
        }
    }
}

pub const METRIC_SURVEILLANCE: &str = "surveillance_rate";
pub const METRIC_FPR: &str = "fpr";
pub const METRIC_DETECTION: &str = "csis_detection_rate";

/// A collected report; rows are kept in the deterministic order the sweep
/// emitted them.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

const CSV_HEADER: &[&str] = &[
    "scenario",
    "hash_kind",
    "metric",
    "threshold",
    "budget",
    "strategy",
    "ref_condition",
    "user_condition",
    "variation_level",
    "occlusion_fraction",
    "seed",
    "value",
    "mean",
    "stdev",
];

fn fmt_f64(v: f64) -> String {
    // Shortest round-trip float formatting keeps files byte-stable.
    format!("{v}")
}

impl EvalReport {
    pub fn extend(&mut self, other: EvalReport) {
        self.rows.extend(other.rows);
    }

    /// CSV with a fixed column order; optional cells are empty.
    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        w.write_record(CSV_HEADER).expect("in-memory write");
        for r in &self.rows {
            w.write_record([
                r.scenario.clone(),
                r.hash_kind.clone(),
                r.metric.clone(),
                fmt_f64(r.threshold),
                r.budget.map(|b| b.to_string()).unwrap_or_default(),
                r.strategy.clone().unwrap_or_default(),
                r.ref_condition.map(|c| c.to_string()).unwrap_or_default(),
                r.user_condition.map(|c| c.to_string()).unwrap_or_default(),
                r.variation_level.clone().unwrap_or_default(),
                r.occlusion_fraction.map(fmt_f64).unwrap_or_default(),
                r.seed.map(|s| s.to_string()).unwrap_or_default(),
                r.value.map(fmt_f64).unwrap_or_default(),
                r.mean.map(fmt_f64).unwrap_or_default(),
                r.stdev.map(fmt_f64).unwrap_or_default(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8")
    }

    /// JSON mirror of the CSV with identical row order.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.rows).expect("rows serialize")
    }

    pub fn write_files(&self, csv_path: impl AsRef<Path>, json_path: impl AsRef<Path>) -> Result<(), EvalError> {
        for (path, content) in
            [(csv_path.as_ref(), self.to_csv()), (json_path.as_ref(), self.to_json())]
        {
            let mut f = std::fs::File::create(path).map_err(|source| EvalError::Io {
                path: path.display().to_string(),
                source,
            })?;
            f.write_all(content.as_bytes()).map_err(|source| EvalError::Io {
                path: path.display().to_string(),
                source,
            })?;
        }
        Ok(())
    }

    /// Per-seed values for a metric under a filter, in row order.
    pub fn values(&self, metric: &str, filter: impl Fn(&EvalRow) -> bool) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.metric == metric && r.seed.is_some() && filter(r))
            .filter_map(|r| r.value)
            .collect()
    }
}

fn mean_stdev(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() < 2 {
        0.0
    } else {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    };
    (mean, var.sqrt())
}

/// Appends per-seed rows plus one aggregate row.
fn push_seeded_rows(
    report: &mut EvalReport,
    template: &EvalRow,
    observations: &[(u64, f64)],
) {
    for &(seed, value) in observations {
        let mut row = template.clone();
        row.seed = Some(seed);
        row.value = Some(value);
        report.rows.push(row);
    }
    let values: Vec<f64> = observations.iter().map(|&(_, v)| v).collect();
    let (mean, stdev) = mean_stdev(&values);
    let mut agg = template.clone();
    agg.mean = Some(mean);
    agg.stdev = Some(stdev);
    report.rows.push(agg);
}

/// Fraction of user hashes flagged by the database at `cfg`. The exact
/// count over the exact minimum distances.
pub fn surveillance_rate(
    user_hashes: &[PerceptualHash],
    db: &HashDatabase,
    cfg: &MatchConfig,
) -> Result<f64, EvalError> {
    if user_hashes.is_empty() {
        return Err(EvalError::EmptyUserSet);
    }
    let dists = db.min_distances(user_hashes)?;
    let flagged = dists
        .iter()
        .filter(|&&h| cfg.metric.from_hamming(h, db.len_bits()) <= cfg.threshold)
        .count();
    Ok(flagged as f64 / user_hashes.len() as f64)
}

/// Hash-and-flag wrapper over images.
pub fn surveillance_rate_images(
    user_images: &[LumaImage],
    hash: &HashFunction,
    db: &HashDatabase,
    cfg: &MatchConfig,
) -> Result<f64, EvalError> {
    let hashes = hash_all(hash, user_images)?;
    surveillance_rate(&hashes, db, cfg)
}

pub fn hash_all(
    hash: &HashFunction,
    images: &[LumaImage],
) -> Result<Vec<PerceptualHash>, EvalError> {
    use rayon::prelude::*;
    images
        .par_iter()
        .map(|img| hash.hash(img).map_err(EvalError::Hash))
        .collect()
}

/// Detection rate of varied stand-ins: each image is transformed at
/// `level` (seeded per image), rehashed, and matched.
pub fn csis_detection_rate(
    illicit_standins: &[LumaImage],
    hash: &HashFunction,
    db: &HashDatabase,
    level: &VariationLevel,
    cfg: &MatchConfig,
    seed: u64,
) -> Result<f64, EvalError> {
    use rayon::prelude::*;
    if illicit_standins.is_empty() {
        return Err(EvalError::EmptyUserSet);
    }
    let flags: Vec<bool> = illicit_standins
        .par_iter()
        .enumerate()
        .map(|(i, img)| {
            let varied =
                apply_variation(img, level, substream_indexed(seed, "variation", i as u64));
            let h = hash.hash(&varied).map_err(EvalError::Hash)?;
            Ok::<bool, EvalError>(
                db.flag(&h, cfg).map_err(EvalError::Matcher)?.flagged,
            )
        })
        .collect::<Result<_, _>>()?;
    Ok(flags.iter().filter(|f| **f).count() as f64 / flags.len() as f64)
}

/// Everything a sweep needs about one prepared scenario, hashes
/// precomputed so threshold sweeps don't rehash.
pub struct ScenarioAssets {
    pub scenario: String,
    pub hash: HashFunction,
    pub metric: DistanceMetric,
    /// Unpoisoned database of legitimate stand-in hashes.
    pub legit_db: HashDatabase,
    /// Hashes of the augmented attacker reference set.
    pub reference_hashes: Vec<PerceptualHash>,
    pub user_hashes: Vec<PerceptualHash>,
    pub benign_hashes: Vec<PerceptualHash>,
    /// Stand-in images whose unvaried hashes are in the database.
    pub standin_images: Vec<LumaImage>,
}

/// Threshold grid plus budgets/strategies/seeds for the sweep operations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSpec {
    pub thresholds: Vec<f64>,
    /// Budgets as fractions of the legitimate database size.
    pub budget_fractions: Vec<f64>,
    pub strategies: Vec<SelectionStrategy>,
    pub seeds: Vec<u64>,
    pub kmodes_restarts: usize,
    pub kmodes_max_iterations: usize,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), crate::hash::HashError> {
        let sorted = |v: &[f64]| v.windows(2).all(|w| w[0] <= w[1]);
        if self.thresholds.is_empty() || !sorted(&self.thresholds) {
            return Err(crate::hash::HashError::InvalidSpec(
                "thresholds must be non-empty and sorted".into(),
            ));
        }
        if self.budget_fractions.is_empty() || !sorted(&self.budget_fractions) {
            return Err(crate::hash::HashError::InvalidSpec(
                "budgets must be non-empty and sorted".into(),
            ));
        }
        if self.strategies.is_empty() || self.seeds.is_empty() {
            return Err(crate::hash::HashError::InvalidSpec(
                "strategies and seeds must be non-empty".into(),
            ));
        }
        Ok(())
    }
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            thresholds: Vec::new(),
            budget_fractions: vec![0.01, 0.05, 0.10, 0.20],
            strategies: vec![SelectionStrategy::Kmodes, SelectionStrategy::Random],
            seeds: vec![11, 12, 13],
            kmodes_restarts: 5,
            kmodes_max_iterations: 100,
        }
    }
}

fn select_poisons(
    strategy: SelectionStrategy,
    reference_hashes: &[PerceptualHash],
    k: usize,
    seed: u64,
    spec: &SweepSpec,
) -> Result<crate::poison::PoisonSet, EvalError> {
    Ok(match strategy {
        SelectionStrategy::Kmodes => kmodes_select(
            reference_hashes,
            &KModesConfig {
                k,
                restarts: spec.kmodes_restarts,
                max_iterations: spec.kmodes_max_iterations,
                seed,
            },
        )?,
        SelectionStrategy::Random => random_select(reference_hashes, k, seed)?,
    })
}

/// Per threshold: surveillance rate, FPR, and detection rate per variation
/// level, at a fixed poison budget and strategy.
pub fn tradeoff_sweep(
    assets: &ScenarioAssets,
    spec: &SweepSpec,
    budget_fraction: f64,
    strategy: SelectionStrategy,
) -> Result<EvalReport, EvalError> {
    use rayon::prelude::*;
    let mut report = EvalReport::default();
    let k = budget_k(assets.legit_db.len(), budget_fraction);
    let hash_kind = assets.hash.kind().to_string();
    for &seed in &spec.seeds {
        let poisons = select_poisons(strategy, &assets.reference_hashes, k, seed, spec)?;
        let db = assets.legit_db.with_poisons(poisons.hashes.iter().cloned())?;
        // Min distances are threshold-independent; compute them once per
        // seed and per variation level, then read rates off the grid.
        let user_dists = db.min_distances(&assets.user_hashes)?;
        let benign_dists = db.min_distances(&assets.benign_hashes)?;
        let mut varied_dists: Vec<(String, Vec<u32>)> = Vec::new();
        for level in VariationLevel::all() {
            let varied: Vec<PerceptualHash> = assets
                .standin_images
                .par_iter()
                .enumerate()
                .map(|(i, img)| {
                    let v = apply_variation(
                        img,
                        &level,
                        substream_indexed(seed, "detection-variation", i as u64),
                    );
                    assets.hash.hash(&v).map_err(EvalError::Hash)
                })
                .collect::<Result<_, _>>()?;
            varied_dists.push((level.level.to_string(), db.min_distances(&varied)?));
        }
        let rate = |dists: &[u32], t: f64| {
            dists
                .iter()
                .filter(|&&h| assets.metric.from_hamming(h, db.len_bits()) <= t)
                .count() as f64
                / dists.len() as f64
        };
        for &t in &spec.thresholds {
            let mut sv = EvalRow::base(&assets.scenario, &hash_kind, METRIC_SURVEILLANCE, t);
            sv.budget = Some(k);
            sv.strategy = Some(strategy.to_string());
            sv.seed = Some(seed);
            sv.value = Some(rate(&user_dists, t));
            report.rows.push(sv);
            let mut fpr = EvalRow::base(&assets.scenario, &hash_kind, METRIC_FPR, t);
            fpr.budget = Some(k);
            fpr.strategy = Some(strategy.to_string());
            fpr.seed = Some(seed);
            fpr.value = Some(rate(&benign_dists, t));
            report.rows.push(fpr);
            for (level_name, dists) in &varied_dists {
                let mut row = EvalRow::base(&assets.scenario, &hash_kind, METRIC_DETECTION, t);
                row.budget = Some(k);
                row.strategy = Some(strategy.to_string());
                row.variation_level = Some(level_name.clone());
                row.seed = Some(seed);
                row.value = Some(rate(dists, t));
                report.rows.push(row);
            }
        }
    }
    Ok(report)
}

pub fn budget_k(db_len: usize, fraction: f64) -> usize {
    ((db_len as f64 * fraction).round() as usize).max(1)
}

/// Rows per (budget, strategy) with mean and stdev over seeds at one
/// threshold.
pub fn budget_sweep(
    assets: &ScenarioAssets,
    spec: &SweepSpec,
    threshold: f64,
) -> Result<EvalReport, EvalError> {
    let mut report = EvalReport::default();
    let hash_kind = assets.hash.kind().to_string();
    let cfg = MatchConfig { metric: assets.metric, threshold };
    for &fraction in &spec.budget_fractions {
        let k = budget_k(assets.legit_db.len(), fraction);
        for &strategy in &spec.strategies {
            let mut surveillance = Vec::new();
            let mut fprs = Vec::new();
            for &seed in &spec.seeds {
                let poisons =
                    select_poisons(strategy, &assets.reference_hashes, k, seed, spec)?;
                let db = assets.legit_db.with_poisons(poisons.hashes.iter().cloned())?;
                surveillance.push((seed, surveillance_rate(&assets.user_hashes, &db, &cfg)?));
                fprs.push((seed, db.false_positive_rate(&assets.benign_hashes, &cfg)?));
            }
            let mut sv = EvalRow::base(&assets.scenario, &hash_kind, METRIC_SURVEILLANCE, threshold);
            sv.budget = Some(k);
            sv.strategy = Some(strategy.to_string());
            push_seeded_rows(&mut report, &sv, &surveillance);
            let mut fpr = EvalRow::base(&assets.scenario, &hash_kind, METRIC_FPR, threshold);
            fpr.budget = Some(k);
            fpr.strategy = Some(strategy.to_string());
            push_seeded_rows(&mut report, &fpr, &fprs);
        }
    }
    Ok(report)
}

/// A scene prepared per condition for the cross-condition ablation.
pub struct ConditionAssets {
    pub condition: u32,
    pub reference_hashes: Vec<PerceptualHash>,
    pub user_hashes: Vec<PerceptualHash>,
}

/// Select poisons on each reference condition, evaluate on every user
/// condition: len(conditions)^2 cells.
pub fn cross_condition_matrix(
    scenario: &str,
    hash: &HashFunction,
    metric: DistanceMetric,
    legit_db: &HashDatabase,
    conditions: &[ConditionAssets],
    spec: &SweepSpec,
    threshold: f64,
    budget_fraction: f64,
) -> Result<EvalReport, EvalError> {
    if conditions.len() < 2 {
        return Err(EvalError::TooFewConditions(conditions.len()));
    }
    let mut report = EvalReport::default();
    let hash_kind = hash.kind().to_string();
    let cfg = MatchConfig { metric, threshold };
    let k = budget_k(legit_db.len(), budget_fraction);
    for ref_cond in conditions {
        for &seed in &spec.seeds {
            let poisons = select_poisons(
                SelectionStrategy::Kmodes,
                &ref_cond.reference_hashes,
                k,
                seed,
                spec,
            )?;
            let db = legit_db.with_poisons(poisons.hashes.iter().cloned())?;
            for user_cond in conditions {
                let rate = surveillance_rate(&user_cond.user_hashes, &db, &cfg)?;
                let mut row =
                    EvalRow::base(scenario, &hash_kind, METRIC_SURVEILLANCE, threshold);
                row.budget = Some(k);
                row.strategy = Some(SelectionStrategy::Kmodes.to_string());
                row.ref_condition = Some(ref_cond.condition);
                row.user_condition = Some(user_cond.condition);
                row.seed = Some(seed);
                row.value = Some(rate);
                report.rows.push(row);
            }
        }
    }
    Ok(report)
}

/// Mean of diagonal versus off-diagonal per-seed surveillance values.
pub fn diagonal_summary(report: &EvalReport) -> (f64, f64) {
    let diag: Vec<f64> = report
        .rows
        .iter()
        .filter(|r| {
            r.seed.is_some()
                && r.metric == METRIC_SURVEILLANCE
                && r.ref_condition.is_some()
                && r.ref_condition == r.user_condition
        })
        .filter_map(|r| r.value)
        .collect();
    let off: Vec<f64> = report
        .rows
        .iter()
        .filter(|r| {
            r.seed.is_some()
                && r.metric == METRIC_SURVEILLANCE
                && r.ref_condition.is_some()
                && r.user_condition.is_some()
                && r.ref_condition != r.user_condition
        })
        .filter_map(|r| r.value)
        .collect();
    (mean_stdev(&diag).0, mean_stdev(&off).0)
}

/// Surveillance rate as an occluder covers a growing share of each user
/// view; poisons come from the unoccluded reference set.
#[allow(clippy::too_many_arguments)]
pub fn occlusion_curve(
    assets: &ScenarioAssets,
    user_images: &[LumaImage],
    occluder: &LumaImage,
    fractions: &[f64],
    spec: &SweepSpec,
    threshold: f64,
    budget_fraction: f64,
) -> Result<EvalReport, EvalError> {
    let mut report = EvalReport::default();
    let hash_kind = assets.hash.kind().to_string();
    let cfg = MatchConfig { metric: assets.metric, threshold };
    let k = budget_k(assets.legit_db.len(), budget_fraction);
    for &seed in &spec.seeds {
        let poisons = select_poisons(
            SelectionStrategy::Kmodes,
            &assets.reference_hashes,
            k,
            seed,
            spec,
        )?;
        let db = assets.legit_db.with_poisons(poisons.hashes.iter().cloned())?;
        for &fraction in fractions {
            let occluded: Vec<LumaImage> = user_images
                .iter()
                .map(|img| composite_foreground(img, occluder, fraction))
                .collect::<Result<_, _>>()?;
            let rate = surveillance_rate_images(&occluded, &assets.hash, &db, &cfg)?;
            let mut row =
                EvalRow::base(&assets.scenario, &hash_kind, METRIC_SURVEILLANCE, threshold);
            row.budget = Some(k);
            row.strategy = Some(SelectionStrategy::Kmodes.to_string());
            row.occlusion_fraction = Some(fraction);
            row.seed = Some(seed);
            row.value = Some(rate);
            report.rows.push(row);
        }
    }
    Ok(report)
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
    fn surveillance_rate_exact_fraction() {
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let db_hashes: Vec<_> = (0..50).map(|_| random_hash(&mut rng, 64)).collect();
        let db = HashDatabase::from_legitimate(db_hashes.clone()).unwrap();
        let cfg = MatchConfig { metric: DistanceMetric::Hamming, threshold: 0.0 };
        // 42 members of the db, 58 fresh random hashes.
        let mut users: Vec<_> = db_hashes.iter().take(42).cloned().collect();
        users.extend((0..58).map(|_| random_hash(&mut rng, 64)));
        let rate = surveillance_rate(&users, &db, &cfg).unwrap();
        assert!((rate - 0.42).abs() < 0.03, "rate {rate}");
    }

    #[test]
    fn all_users_in_poisons_rate_one() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let users: Vec<_> = (0..20).map(|_| random_hash(&mut rng, 64)).collect();
        let db = HashDatabase::from_legitimate(users.clone()).unwrap();
        let cfg = MatchConfig { metric: DistanceMetric::Hamming, threshold: 0.0 };
        assert_eq!(surveillance_rate(&users, &db, &cfg).unwrap(), 1.0);
    }

    #[test]
    fn far_database_rate_zero() {
        let users = vec![PerceptualHash::zero(64, 100.0); 5];
        let mut far = PerceptualHash::zero(64, 100.0);
        for i in 0..64 {
            far.set_bit(i);
        }
        let db = HashDatabase::from_legitimate(vec![far]).unwrap();
        let cfg = MatchConfig { metric: DistanceMetric::Hamming, threshold: 10.0 };
        assert_eq!(surveillance_rate(&users, &db, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn empty_user_set_errors() {
        let db =
            HashDatabase::from_legitimate(vec![PerceptualHash::zero(64, 100.0)]).unwrap();
        let cfg = MatchConfig { metric: DistanceMetric::Hamming, threshold: 0.0 };
        assert!(matches!(
            surveillance_rate(&[], &db, &cfg),
            Err(EvalError::EmptyUserSet)
        ));
    }

    #[test]
    fn csv_and_json_share_row_order() {
        let mut report = EvalReport::default();
        let mut row = EvalRow::base("s", "pdq", METRIC_FPR, 0.3);
        row.seed = Some(1);
        row.value = Some(0.01);
        report.rows.push(row.clone());
        row.seed = Some(2);
        row.value = Some(0.02);
        report.rows.push(row);
        let csv = report.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("scenario,hash_kind,metric,threshold"));
        assert!(lines[1].contains(",1,0.01"));
        let parsed: Vec<EvalRow> = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(parsed, report.rows);
    }

    #[test]
    fn rates_monotone_in_threshold() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let db = HashDatabase::from_legitimate(
            (0..30).map(|_| random_hash(&mut rng, 64)).collect::<Vec<_>>(),
        )
        .unwrap();
        let users: Vec<_> = (0..40).map(|_| random_hash(&mut rng, 64)).collect();
        let mut last = 0.0;
        for t in (0..=64).step_by(4) {
            let cfg = MatchConfig { metric: DistanceMetric::Hamming, threshold: t as f64 };
            let r = surveillance_rate(&users, &db, &cfg).unwrap();
            assert!(r >= last, "rate dropped at t={t}");
            last = r;
        }
        assert_eq!(last, 1.0);
    }

    #[test]
    fn adding_poisons_never_decreases_rate() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let legit: Vec<_> = (0..30).map(|_| random_hash(&mut rng, 64)).collect();
        let users: Vec<_> = (0..40).map(|_| random_hash(&mut rng, 64)).collect();
        let db = HashDatabase::from_legitimate(legit).unwrap();
        let cfg = MatchConfig { metric: DistanceMetric::Hamming, threshold: 20.0 };
        let before = surveillance_rate(&users, &db, &cfg).unwrap();
        let poisoned = db.with_poisons(users.iter().take(5).cloned()).unwrap();
        let after = surveillance_rate(&users, &poisoned, &cfg).unwrap();
        assert!(after >= before);
        assert_eq!(poisoned.poison_count(), 5);
    }

    #[test]
    fn mean_stdev_matches_hand_computation() {
        let (m, s) = mean_stdev(&[0.1, 0.2, 0.3]);
        assert!((m - 0.2).abs() < 1e-12);
        assert!((s - 0.1).abs() < 1e-12);
        let (m1, s1) = mean_stdev(&[0.5]);
        assert_eq!((m1, s1), (0.5, 0.0));
    }
}
