//! End-to-end pipeline: profile a scene, augment, hash, select poisons,
//! craft delivery images, inject, and evaluate. Every run is addressed by
//! a digest of its configuration and seed, and all randomness flows from
//! one root seed through named substreams, so reruns are byte-identical.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::attack::{craft_batch, AttackConfig, AttackError};
use crate::eval::{
    budget_k, budget_sweep, cross_condition_matrix, hash_all, occlusion_curve, tradeoff_sweep,
    ConditionAssets, EvalError, EvalReport, ScenarioAssets, SweepSpec,
};
use crate::hash::{DistanceMetric, HashError, HashFunction, HashFunctionSpec, PerceptualHash};
use crate::img::{augment, AugmentationConfig, ImageOpsError, LumaImage};
use crate::matcher::{HashDatabase, MatcherError, PairSampling};
use crate::poison::{kmodes_select, KModesConfig, PoisonError, PoisonSet, SelectionStrategy};
use crate::scene::{synth_corpus, synth_scene, CorpusRole, CorpusSpec, SceneDataset, SceneError};

#[derive(Debug, Error)]
#[error("stage {stage} failed: {message}")]
pub struct PipelineError {
    pub stage: &'static str,
    pub message: String,
}

impl PipelineError {
    fn new(stage: &'static str, message: impl std::fmt::Display) -> Self {
        PipelineError { stage, message: message.to_string() }
    }
}

macro_rules! stage_err {
    ($stage:literal) => {
        |e| PipelineError::new($stage, e)
    };
}

/// Corpus and view counts at scale 1.0 (desk scale).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CorpusSizes {
    /// Legitimate database size |C|.
    pub database: usize,
    pub benign: usize,
    pub delivery_pool: usize,
    pub reference_views: usize,
    pub augmented_reference: usize,
    pub user_views: usize,
}

impl Default for CorpusSizes {
    fn default() -> Self {
        CorpusSizes {
            database: 2000,
            benign: 2000,
            delivery_pool: 420,
            reference_views: 500,
            augmented_reference: 5000,
            user_views: 500,
        }
    }
}

impl CorpusSizes {
    fn scaled(&self, scale: f64) -> CorpusSizes {
        let s = |v: usize| ((v as f64 * scale).round() as usize).max(1);
        CorpusSizes {
            database: s(self.database),
            benign: s(self.benign),
            delivery_pool: s(self.delivery_pool),
            reference_views: s(self.reference_views),
            augmented_reference: s(self.augmented_reference),
            user_views: s(self.user_views),
        }
    }
}

/// What gets injected into the database: the selected poison hashes
/// themselves, or the hashes of the crafted delivery images (with the
/// uncrafted remainder injected directly).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InjectSource {
    Poisons,
    Crafted,
}

/// Full pipeline configuration. Serializes to/from TOML; the CLI layers
/// environment and flag overrides on top.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub scenario: String,
    pub seed: u64,
    /// Single multiplier over all corpus sizes; 1.0 is desk scale.
    pub scale: f64,
    /// Rayon worker threads; 0 keeps the library default.
    pub workers: usize,
    pub out_dir: PathBuf,
    /// Write per-view PNGs of the generated scene (slower, larger runs).
    pub write_images: bool,
    pub hash: HashFunctionSpec,
    pub metric: DistanceMetric,
    pub target_fpr: f64,
    pub sizes: CorpusSizes,
    /// Scene condition ids; the first is the primary scenario condition.
    pub conditions: Vec<u32>,
    pub augmentation_rotation_degrees: f32,
    pub augmentation_translate_fraction: f32,
    pub augmentation_scale_min: f32,
    pub augmentation_scale_max: f32,
    pub augmentation_shear_degrees: f32,
    pub augmentation_perspective_fraction: f32,
    pub attack: AttackConfig,
    /// How many poisons get delivery images crafted (0 = all of them).
    pub craft_poison_cap: usize,
    /// Candidate pool attacks per poison (0 = whole remaining pool).
    pub craft_candidate_cap: usize,
    pub inject_source: InjectSource,
    pub sweep: SweepSpec,
    /// Budget fraction used by the headline evaluation and trade-off sweep.
    pub budget_fraction: f64,
    pub occlusion_fractions: Vec<f64>,
    /// Optional directories of user-supplied photos standing in for the
    /// synthetic corpora.
    pub standin_dir: Option<PathBuf>,
    pub benign_dir: Option<PathBuf>,
    pub delivery_pool_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scenario: "desk".to_string(),
            seed: 7,
            scale: 1.0,
            workers: 0,
            out_dir: PathBuf::from("runs"),
            write_images: false,
            hash: HashFunctionSpec::pdq(),
            metric: DistanceMetric::NormalizedL1,
            target_fpr: 0.01,
            sizes: CorpusSizes::default(),
            conditions: vec![0, 1, 2],
            augmentation_rotation_degrees: 8.0,
            augmentation_translate_fraction: 0.05,
            augmentation_scale_min: 0.9,
            augmentation_scale_max: 1.1,
            augmentation_shear_degrees: 3.0,
            augmentation_perspective_fraction: 0.03,
            attack: AttackConfig::nes(0),
            craft_poison_cap: 6,
            craft_candidate_cap: 2,
            inject_source: InjectSource::Poisons,
            sweep: SweepSpec {
                thresholds: vec![
                    0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5,
                ],
                ..SweepSpec::default()
            },
            budget_fraction: 0.05,
            occlusion_fractions: vec![0.0, 0.1, 0.25, 0.5, 0.75, 1.0],
            standin_dir: None,
            benign_dir: None,
            delivery_pool_dir: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(stage_err!("validate"))
    }

    pub fn from_toml_file(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| {
            PipelineError::new(
                "validate",
                format!("config file {}: {e}", path.as_ref().display()),
            )
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Content digest over the canonical serialized config; the run
    /// directory is named by it.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        let hex: String = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
        hex[..12].to_string()
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let fail = |msg: String| Err(PipelineError::new("validate", msg));
        self.hash.validate().map_err(stage_err!("validate"))?;
        self.attack.validate().map_err(stage_err!("validate"))?;
        self.sweep.validate().map_err(stage_err!("validate"))?;
        if !(self.scale > 0.0) {
            return fail(format!("scale must be positive, got {}", self.scale));
        }
        if !(0.0..=1.0).contains(&self.target_fpr) {
            return fail(format!("target_fpr {} outside [0, 1]", self.target_fpr));
        }
        if self.conditions.is_empty() {
            return fail("conditions must be non-empty".into());
        }
        let sizes = self.sizes.scaled(self.scale);
        if sizes.augmented_reference < sizes.reference_views {
            return fail(format!(
                "augmented_reference {} below reference_views {}",
                sizes.augmented_reference, sizes.reference_views
            ));
        }
        let max_budget = self
            .sweep
            .budget_fractions
            .iter()
            .cloned()
            .fold(self.budget_fraction, f64::max);
        let max_k = budget_k(sizes.database, max_budget);
        if sizes.delivery_pool < max_k {
            return fail(format!(
                "delivery_pool {} smaller than the largest poison budget {max_k}",
                sizes.delivery_pool
            ));
        }
        if !(0.0..=1.0).contains(&self.budget_fraction) {
            return fail(format!("budget_fraction {} outside [0, 1]", self.budget_fraction));
        }
        for &f in &self.occlusion_fractions {
            if !(0.0..=1.0).contains(&f) {
                return fail(format!("occlusion fraction {f} outside [0, 1]"));
            }
        }
        for dir in [&self.standin_dir, &self.benign_dir, &self.delivery_pool_dir]
            .into_iter()
            .flatten()
        {
            if !dir.is_dir() {
                return fail(format!("dataset path {} is not a directory", dir.display()));
            }
        }
        Ok(())
    }

    fn augmentation(&self, target_count: usize, seed: u64) -> AugmentationConfig {
        AugmentationConfig {
            target_count,
            rotation_degrees: self.augmentation_rotation_degrees,
            translate_fraction: self.augmentation_translate_fraction,
            scale_min: self.augmentation_scale_min,
            scale_max: self.augmentation_scale_max,
            shear_degrees: self.augmentation_shear_degrees,
            perspective_fraction: self.augmentation_perspective_fraction,
            seed,
        }
    }
}

/// Timing and details of one completed stage.
#[derive(Debug, Clone, Serialize)]
pub struct StageRecord {
    pub stage: String,
    pub seconds: f64,
    pub detail: serde_json::Value,
}

#[derive(Debug, Serialize)]
pub struct PipelineOutcome {
    pub run_dir: PathBuf,
    pub digest: String,
    pub calibrated_threshold: f64,
    pub fpr_at_threshold: f64,
    pub surveillance_rate: f64,
    pub stages: Vec<StageRecord>,
}

/// Writes the execution plan without running anything.
pub fn dry_run(cfg: &RunConfig) -> Result<PathBuf, PipelineError> {
    cfg.validate()?;
    let run_dir = cfg.out_dir.join(cfg.digest());
    std::fs::create_dir_all(&run_dir).map_err(stage_err!("validate"))?;
    let sizes = cfg.sizes.scaled(cfg.scale);
    let plan = serde_json::json!({
        "digest": cfg.digest(),
        "scenario": cfg.scenario,
        "stages": [
            "scene", "corpora", "augment", "hash", "calibrate",
            "poison", "craft", "inject", "evaluate", "report",
        ],
        "sizes": sizes,
        "conditions": cfg.conditions,
        "config": serde_json::to_value(cfg).expect("config serializes"),
    });
    let path = run_dir.join("plan.json");
    std::fs::write(&path, serde_json::to_string_pretty(&plan).expect("plan serializes"))
        .map_err(stage_err!("validate"))?;
    Ok(path)
}

struct StageClock {
    records: Vec<StageRecord>,
    started: std::time::Instant,
}

impl StageClock {
    fn new() -> Self {
        StageClock { records: Vec::new(), started: std::time::Instant::now() }
    }

    fn done(&mut self, stage: &str, detail: serde_json::Value) {
        self.records.push(StageRecord {
            stage: stage.to_string(),
            seconds: self.started.elapsed().as_secs_f64(),
            detail,
        });
        self.started = std::time::Instant::now();
    }
}

fn load_or_synth(dir: &Option<PathBuf>, spec: &CorpusSpec) -> Result<Vec<LumaImage>, SceneError> {
    match dir {
        Some(d) => Ok(crate::scene::load_corpus(d, spec, crate::scene::DecodePolicy::Skip)?.images),
        None => Ok(synth_corpus(spec)),
    }
}

pub fn write_poison_file(path: &Path, set: &PoisonSet) -> std::io::Result<()> {
    let mut out = String::new();
    for (hash, &src) in set.hashes.iter().zip(&set.source_index) {
        let record = serde_json::json!({
            "hash": hash.to_hex(),
            "source_index": src,
            "strategy": set.strategy.to_string(),
        });
        out.push_str(&record.to_string());
        out.push('\n');
    }
    std::fs::write(path, out)
}

/// Reads a poison file written by [`write_poison_file`].
pub fn read_poison_file(path: &Path) -> Result<PoisonSet, PipelineError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| PipelineError::new("poison", format!("{}: {e}", path.display())))?;
    let mut hashes = Vec::new();
    let mut source_index = Vec::new();
    let mut strategy = SelectionStrategy::Kmodes;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let v: serde_json::Value = serde_json::from_str(line)
            .map_err(|e| PipelineError::new("poison", format!("bad poison record: {e}")))?;
        let hex = v["hash"]
            .as_str()
            .ok_or_else(|| PipelineError::new("poison", "poison record missing hash"))?;
        hashes.push(PerceptualHash::from_hex(hex).map_err(stage_err!("poison"))?);
        source_index.push(v["source_index"].as_u64().unwrap_or(0) as usize);
        if v["strategy"].as_str() == Some("random") {
            strategy = SelectionStrategy::Random;
        }
    }
    Ok(PoisonSet { hashes, source_index, objective: 0.0, strategy, converged: true })
}

/// Scenario assets shared by the full run and the sweep-only entry point.
struct Prepared {
    run_dir: PathBuf,
    digest: String,
    clock: StageClock,
    scenes: Vec<SceneDataset>,
    standins: Vec<LumaImage>,
    pool: Vec<LumaImage>,
    hash: HashFunction,
    benign_hashes: Vec<PerceptualHash>,
    reference_hashes: Vec<Vec<PerceptualHash>>,
    user_hashes: Vec<Vec<PerceptualHash>>,
    legit_db: HashDatabase,
    threshold: f64,
}

fn prepare(cfg: &RunConfig) -> Result<Prepared, PipelineError> {
    cfg.validate()?;
    if cfg.workers > 0 {
        // Ignore the error if a global pool already exists (tests, reruns).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build_global();
    }
    let digest = cfg.digest();
    let run_dir = cfg.out_dir.join(&digest);
    std::fs::create_dir_all(&run_dir).map_err(stage_err!("validate"))?;
    std::fs::write(run_dir.join("config.toml"), cfg.to_toml()).map_err(stage_err!("validate"))?;
    let mut clock = StageClock::new();
    let sizes = cfg.sizes.scaled(cfg.scale);
    let seed = |name: &str| crate::seeds::substream(cfg.seed, name);

    // Scene views per condition.
    let scenes: Vec<SceneDataset> = cfg
        .conditions
        .iter()
        .map(|&c| synth_scene(seed("scene"), c, sizes.reference_views, sizes.user_views))
        .collect();
    if cfg.write_images {
        let img_dir = run_dir.join("scene");
        std::fs::create_dir_all(&img_dir).map_err(stage_err!("scene"))?;
        let mut manifest = Vec::new();
        for scene in &scenes {
            for (split, images) in [("reference", &scene.reference), ("user", &scene.user)] {
                for (i, img) in images.iter().enumerate() {
                    let name = format!("c{}_{split}_{i:05}.png", scene.condition);
                    img.save_png(img_dir.join(&name)).map_err(stage_err!("scene"))?;
                    manifest.push(crate::scene::ManifestRecord {
                        path: format!("scene/{name}"),
                        role: split.to_string(),
                        condition: scene.condition,
                        split: split.to_string(),
                    });
                }
            }
        }
        crate::scene::write_manifest(run_dir.join("manifest.jsonl"), &manifest)
            .map_err(stage_err!("scene"))?;
    }
    clock.done(
        "scene",
        serde_json::json!({
            "conditions": cfg.conditions,
            "reference_views": sizes.reference_views,
            "user_views": sizes.user_views,
        }),
    );

    // Stand-in corpora.
    let standins = load_or_synth(
        &cfg.standin_dir,
        &CorpusSpec {
            role: CorpusRole::IllicitStandin,
            count: sizes.database,
            seed: seed("standins"),
        },
    )
    .map_err(stage_err!("corpora"))?;
    let benign = load_or_synth(
        &cfg.benign_dir,
        &CorpusSpec { role: CorpusRole::Benign, count: sizes.benign, seed: seed("benign") },
    )
    .map_err(stage_err!("corpora"))?;
    let pool = load_or_synth(
        &cfg.delivery_pool_dir,
        &CorpusSpec {
            role: CorpusRole::DeliveryPool,
            count: sizes.delivery_pool,
            seed: seed("delivery-pool"),
        },
    )
    .map_err(stage_err!("corpora"))?;
    clock.done(
        "corpora",
        serde_json::json!({
            "standins": standins.len(),
            "benign": benign.len(),
            "delivery_pool": pool.len(),
        }),
    );

    // Augment and hash one condition at a time so only one expanded
    // reference set is in memory at once.
    let hash = HashFunction::from_spec(&cfg.hash).map_err(stage_err!("hash"))?;
    let mut reference_hashes: Vec<Vec<PerceptualHash>> = Vec::with_capacity(scenes.len());
    for scene in &scenes {
        let expanded = augment(
            &scene.reference,
            &cfg.augmentation(sizes.augmented_reference, seed("augment")),
        )
        .map_err(stage_err!("augment"))?;
        reference_hashes.push(hash_all(&hash, &expanded).map_err(stage_err!("hash"))?);
    }
    clock.done("augment", serde_json::json!({ "augmented_reference": sizes.augmented_reference }));

    let standin_hashes = hash_all(&hash, &standins).map_err(stage_err!("hash"))?;
    let benign_hashes = hash_all(&hash, &benign).map_err(stage_err!("hash"))?;
    let user_hashes: Vec<Vec<PerceptualHash>> = scenes
        .iter()
        .map(|s| hash_all(&hash, &s.user))
        .collect::<Result<_, _>>()
        .map_err(stage_err!("hash"))?;
    let legit_db = HashDatabase::from_legitimate(standin_hashes.iter().cloned())
        .map_err(stage_err!("hash"))?;
    legit_db.save(run_dir.join("database_legit.csdb")).map_err(stage_err!("hash"))?;
    clock.done(
        "hash",
        serde_json::json!({
            "database": legit_db.len(),
            "duplicates_dropped": legit_db.duplicates_dropped(),
        }),
    );

    // Calibrate the threshold from benign distances to the clean database,
    // and persist the full FPR-versus-threshold curve.
    let calibration = legit_db
        .calibrate_threshold(&benign_hashes, cfg.metric, cfg.target_fpr)
        .map_err(stage_err!("calibrate"))?;
    let threshold = calibration.threshold;
    let mut curve_report = EvalReport::default();
    for &(t, fpr) in &calibration.curve {
        let mut row = crate::eval::EvalRow::base(
            &cfg.scenario,
            &hash.kind().to_string(),
            crate::eval::METRIC_FPR,
            t,
        );
        row.seed = Some(cfg.seed);
        row.value = Some(fpr);
        curve_report.rows.push(row);
    }
    curve_report
        .write_files(run_dir.join("pairwise_curve.csv"), run_dir.join("pairwise_curve.json"))
        .map_err(stage_err!("calibrate"))?;
    let histogram = crate::matcher::pairwise_distance_histogram(
        &benign_hashes,
        &standin_hashes,
        cfg.metric,
        PairSampling::RandomPairs { count: 100_000, seed: seed("pairwise") },
    )
    .map_err(stage_err!("calibrate"))?;
    let hist_json: Vec<serde_json::Value> = histogram
        .iter()
        .filter(|&&(_, c)| c > 0)
        .map(|&(d, c)| serde_json::json!({"distance": d, "count": c}))
        .collect();
    std::fs::write(
        run_dir.join("pairwise_histogram.json"),
        serde_json::to_string_pretty(&hist_json).expect("histogram serializes"),
    )
    .map_err(stage_err!("calibrate"))?;
    clock.done(
        "calibrate",
        serde_json::json!({ "threshold": threshold, "target_fpr": cfg.target_fpr }),
    );

    Ok(Prepared {
        run_dir,
        digest,
        clock,
        scenes,
        standins,
        pool,
        hash,
        benign_hashes,
        reference_hashes,
        user_hashes,
        legit_db,
        threshold,
    })
}

impl Prepared {
    fn assets(&self, scenario: &str, metric: DistanceMetric) -> ScenarioAssets {
        ScenarioAssets {
            scenario: scenario.to_string(),
            hash: self.hash.clone(),
            metric,
            legit_db: self.legit_db.clone(),
            reference_hashes: self.reference_hashes[0].clone(),
            user_hashes: self.user_hashes[0].clone(),
            benign_hashes: self.benign_hashes.clone(),
            standin_images: self.standins.clone(),
        }
    }

    /// Emits the sweep report files: budget table, trade-off curves,
    /// cross-condition matrix, and occlusion curve.
    fn emit_sweeps(&mut self, cfg: &RunConfig) -> Result<(), PipelineError> {
        let assets = self.assets(&cfg.scenario, cfg.metric);
        let threshold = self.threshold;

        let budget_report =
            budget_sweep(&assets, &cfg.sweep, threshold).map_err(stage_err!("evaluate"))?;
        budget_report
            .write_files(
                self.run_dir.join("budget_table.csv"),
                self.run_dir.join("budget_table.json"),
            )
            .map_err(stage_err!("evaluate"))?;

        // The trade-off grid always includes the calibrated threshold.
        let mut sweep_with_t = cfg.sweep.clone();
        if !sweep_with_t.thresholds.contains(&threshold) {
            sweep_with_t.thresholds.push(threshold);
            sweep_with_t.thresholds.sort_by(f64::total_cmp);
        }
        let tradeoff_report =
            tradeoff_sweep(&assets, &sweep_with_t, cfg.budget_fraction, SelectionStrategy::Kmodes)
                .map_err(stage_err!("evaluate"))?;
        tradeoff_report
            .write_files(self.run_dir.join("tradeoff.csv"), self.run_dir.join("tradeoff.json"))
            .map_err(stage_err!("evaluate"))?;

        if cfg.conditions.len() >= 2 {
            let condition_assets: Vec<ConditionAssets> = cfg
                .conditions
                .iter()
                .enumerate()
                .map(|(i, &c)| ConditionAssets {
                    condition: c,
                    reference_hashes: self.reference_hashes[i].clone(),
                    user_hashes: self.user_hashes[i].clone(),
                })
                .collect();
            let cross_report = cross_condition_matrix(
                &cfg.scenario,
                &self.hash,
                cfg.metric,
                &self.legit_db,
                &condition_assets,
                &cfg.sweep,
                threshold,
                cfg.budget_fraction,
            )
            .map_err(stage_err!("evaluate"))?;
            cross_report
                .write_files(
                    self.run_dir.join("cross_matrix.csv"),
                    self.run_dir.join("cross_matrix.json"),
                )
                .map_err(stage_err!("evaluate"))?;
        }

        let occluder = person_silhouette(crate::seeds::substream(cfg.seed, "occluder"));
        let occlusion_report = occlusion_curve(
            &assets,
            &self.scenes[0].user,
            &occluder,
            &cfg.occlusion_fractions,
            &cfg.sweep,
            threshold,
            cfg.budget_fraction,
        )
        .map_err(stage_err!("evaluate"))?;
        occlusion_report
            .write_files(self.run_dir.join("occlusion.csv"), self.run_dir.join("occlusion.json"))
            .map_err(stage_err!("evaluate"))?;
        Ok(())
    }
}

/// Runs only the evaluation sweeps (no poison file, no crafting): the
/// `sweep` CLI entry point.
pub fn run_sweeps(cfg: &RunConfig) -> Result<PipelineOutcome, PipelineError> {
    let mut prepared = prepare(cfg)?;
    prepared.emit_sweeps(cfg)?;
    prepared.clock.done("evaluate", serde_json::json!({"threshold": prepared.threshold}));
    let outcome = PipelineOutcome {
        run_dir: prepared.run_dir.clone(),
        digest: prepared.digest.clone(),
        calibrated_threshold: prepared.threshold,
        fpr_at_threshold: f64::NAN,
        surveillance_rate: f64::NAN,
        stages: prepared.clock.records,
    };
    std::fs::write(
        prepared.run_dir.join("run.json"),
        serde_json::to_string_pretty(&outcome).expect("outcome serializes"),
    )
    .map_err(stage_err!("report"))?;
    Ok(outcome)
}

/// Runs the full pipeline. On failure the error names the stage; partial
/// artifacts stay in the run directory.
pub fn run_pipeline(cfg: &RunConfig) -> Result<PipelineOutcome, PipelineError> {
    let mut prepared = prepare(cfg)?;
    let seed = |name: &str| crate::seeds::substream(cfg.seed, name);
    let run_dir = prepared.run_dir.clone();

    // Poison selection on the primary condition.
    let k = budget_k(prepared.legit_db.len(), cfg.budget_fraction);
    let poisons = kmodes_select(
        &prepared.reference_hashes[0],
        &KModesConfig {
            k,
            restarts: cfg.sweep.kmodes_restarts,
            max_iterations: cfg.sweep.kmodes_max_iterations,
            seed: seed("poison"),
        },
    )
    .map_err(stage_err!("poison"))?;
    write_poison_file(&run_dir.join("poisons.jsonl"), &poisons).map_err(stage_err!("poison"))?;
    prepared.clock.done(
        "poison",
        serde_json::json!({
            "budget": k,
            "objective": poisons.objective,
            "converged": poisons.converged,
        }),
    );

    // Craft delivery images for a capped prefix of the poison list.
    let craft_count = if cfg.craft_poison_cap == 0 {
        poisons.hashes.len()
    } else {
        cfg.craft_poison_cap.min(poisons.hashes.len())
    };
    let craft_subset = PoisonSet {
        hashes: poisons.hashes[..craft_count].to_vec(),
        source_index: poisons.source_index[..craft_count].to_vec(),
        objective: poisons.objective,
        strategy: poisons.strategy,
        converged: poisons.converged,
    };
    let attack_cfg = AttackConfig { seed: seed("craft"), ..cfg.attack };
    let crafted =
        craft_batch(&prepared.pool, &craft_subset, &prepared.hash, &attack_cfg, cfg.craft_candidate_cap)
            .map_err(stage_err!("craft"))?;
    let craft_dir = run_dir.join("crafted");
    std::fs::create_dir_all(&craft_dir).map_err(stage_err!("craft"))?;
    let mut craft_log = String::new();
    for entry in &crafted {
        let name = format!("delivery_{:04}.png", entry.poison_index);
        entry.result.image.save_png(craft_dir.join(&name)).map_err(stage_err!("craft"))?;
        let record = serde_json::json!({
            "source": entry.source_index,
            "target": craft_subset.hashes[entry.poison_index].to_hex(),
            "initial_distance": entry.result.initial_distance,
            "final_distance": entry.result.final_distance,
            "linf": entry.result.linf_actual,
            "l2": entry.result.l2_distance,
            "queries": entry.result.queries_used,
            "image": format!("crafted/{name}"),
        });
        craft_log.push_str(&record.to_string());
        craft_log.push('\n');
    }
    std::fs::write(run_dir.join("craft_log.jsonl"), craft_log).map_err(stage_err!("craft"))?;
    prepared.clock.done(
        "craft",
        serde_json::json!({
            "crafted": crafted.len(),
            "median_final_distance":
                median(crafted.iter().map(|e| e.result.final_distance).collect()),
        }),
    );

    // Inject. The realistic path swaps in the crafted images' hashes for
    // the poisons that were actually crafted.
    let injected_hashes: Vec<PerceptualHash> = match cfg.inject_source {
        InjectSource::Poisons => poisons.hashes.clone(),
        InjectSource::Crafted => {
            let mut hashes: Vec<PerceptualHash> = crafted
                .iter()
                .map(|e| prepared.hash.hash(&e.result.image))
                .collect::<Result<_, _>>()
                .map_err(stage_err!("inject"))?;
            hashes.extend(poisons.hashes[craft_count..].iter().cloned());
            hashes
        }
    };
    let poisoned_db = prepared
        .legit_db
        .with_poisons(injected_hashes.iter().cloned())
        .map_err(stage_err!("inject"))?;
    poisoned_db.save(run_dir.join("database_poisoned.csdb")).map_err(stage_err!("inject"))?;
    prepared.clock.done(
        "inject",
        serde_json::json!({
            "entries": poisoned_db.len(),
            "poison_fraction": poisoned_db.poison_fraction(),
        }),
    );

    // Headline rates at the calibrated threshold, then the sweep reports.
    let cfg_match = crate::matcher::MatchConfig { metric: cfg.metric, threshold: prepared.threshold };
    let headline_rate =
        crate::eval::surveillance_rate(&prepared.user_hashes[0], &poisoned_db, &cfg_match)
            .map_err(stage_err!("evaluate"))?;
    let headline_fpr = poisoned_db
        .false_positive_rate(&prepared.benign_hashes, &cfg_match)
        .map_err(stage_err!("evaluate"))?;
    prepared.emit_sweeps(cfg)?;
    prepared.clock.done(
        "evaluate",
        serde_json::json!({
            "surveillance_rate": headline_rate,
            "fpr": headline_fpr,
            "threshold": prepared.threshold,
        }),
    );

    let outcome = PipelineOutcome {
        run_dir: run_dir.clone(),
        digest: prepared.digest,
        calibrated_threshold: prepared.threshold,
        fpr_at_threshold: headline_fpr,
        surveillance_rate: headline_rate,
        stages: prepared.clock.records,
    };
    std::fs::write(
        run_dir.join("run.json"),
        serde_json::to_string_pretty(&outcome).expect("outcome serializes"),
    )
    .map_err(stage_err!("report"))?;
    Ok(outcome)
}

fn median(mut values: Vec<f64>) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        (values[mid - 1] + values[mid]) / 2.0
    }
}

/// A dark person-shaped silhouette (head disk over a torso slab) on a
/// light backing, used as the occluder in the foreground ablation.
pub fn person_silhouette(seed: u64) -> LumaImage {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
    let dim = 96u32;
    let tone = rng.gen_range(0.05f32..0.2);
    LumaImage::from_fn(dim, dim, |x, y| {
        let fx = x as f32 / dim as f32;
        let fy = y as f32 / dim as f32;
        let head = (fx - 0.5).powi(2) + (fy - 0.18).powi(2) <= 0.13f32.powi(2);
        let torso = fy > 0.30 && (fx - 0.5).abs() < 0.22 + 0.1 * (fy - 0.3);
        if head || torso {
            tone
        } else {
            0.85
        }
    })
}

impl From<HashError> for PipelineError {
    fn from(e: HashError) -> Self {
        PipelineError::new("hash", e)
    }
}
impl From<MatcherError> for PipelineError {
    fn from(e: MatcherError) -> Self {
        PipelineError::new("matcher", e)
    }
}
impl From<PoisonError> for PipelineError {
    fn from(e: PoisonError) -> Self {
        PipelineError::new("poison", e)
    }
}
impl From<AttackError> for PipelineError {
    fn from(e: AttackError) -> Self {
        PipelineError::new("craft", e)
    }
}
impl From<EvalError> for PipelineError {
    fn from(e: EvalError) -> Self {
        PipelineError::new("evaluate", e)
    }
}
impl From<ImageOpsError> for PipelineError {
    fn from(e: ImageOpsError) -> Self {
        PipelineError::new("image", e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trip_is_identity() {
        let cfg = RunConfig::default();
        let toml_text = cfg.to_toml();
        let back = RunConfig::from_toml_str(&toml_text).unwrap();
        assert_eq!(back.to_toml(), toml_text);
        assert_eq!(back.digest(), cfg.digest());
    }

    #[test]
    fn digest_changes_with_seed() {
        let a = RunConfig::default();
        let b = RunConfig { seed: a.seed + 1, ..a.clone() };
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn validation_rejects_undersized_pool() {
        let mut cfg = RunConfig::default();
        cfg.sizes.delivery_pool = 1;
        let err = cfg.validate().unwrap_err();
        assert_eq!(err.stage, "validate");
        assert!(err.message.contains("delivery_pool"));
    }

    #[test]
    fn validation_rejects_missing_dataset_dir() {
        let mut cfg = RunConfig::default();
        cfg.benign_dir = Some(PathBuf::from("/nonexistent/benign"));
        let err = cfg.validate().unwrap_err();
        assert!(err.message.contains("/nonexistent/benign"));
    }

    #[test]
    fn dry_run_writes_plan_only() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig { out_dir: dir.path().to_path_buf(), ..RunConfig::default() };
        let plan = dry_run(&cfg).unwrap();
        assert!(plan.ends_with("plan.json"));
        assert!(plan.exists());
        let run_dir = plan.parent().unwrap();
        let files: Vec<_> = std::fs::read_dir(run_dir).unwrap().collect();
        assert_eq!(files.len(), 1, "dry run must not write artifacts");
    }

    #[test]
    fn poison_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.jsonl");
        let mut h = PerceptualHash::zero(64, 100.0);
        h.set_bit(3);
        let set = PoisonSet {
            hashes: vec![h.clone()],
            source_index: vec![9],
            objective: 1.0,
            strategy: SelectionStrategy::Kmodes,
            converged: true,
        };
        write_poison_file(&path, &set).unwrap();
        let back = read_poison_file(&path).unwrap();
        assert_eq!(back.hashes, vec![h]);
        assert_eq!(back.source_index, vec![9]);
    }
}
