//! `csislab` — command-line front end for the content-scanning simulation
//! toolkit. Subcommands expose each pipeline stage plus an end-to-end
//! runner; logs are line-delimited JSON on stderr, artifacts land in the
//! run directory.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use csislab::attack::{craft_batch, AttackConfig};
use csislab::eval::surveillance_rate;
use csislab::hash::{DistanceMetric, HashFunction, HashFunctionSpec, PerceptualHash};
use csislab::img::{augment, AugmentationConfig};
use csislab::matcher::{HashDatabase, MatchConfig, Provenance};
use csislab::pipeline::{
    dry_run, read_poison_file, run_pipeline, run_sweeps, write_poison_file, InjectSource,
    RunConfig,
};
use csislab::poison::{kmodes_select, random_select, KModesConfig};
use csislab::scene::{load_dir_all, synth_scene, DecodePolicy, ManifestRecord};
use csislab::LumaImage;

#[derive(Parser)]
#[command(
    name = "csislab",
    about = "Simulate hash-based client-side image scanning and measure its surveillance risk",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum HashKindArg {
    Pdq,
    SurrogateProjection,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Hamming,
    NormalizedL1,
}

impl From<MetricArg> for DistanceMetric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Hamming => DistanceMetric::Hamming,
            MetricArg::NormalizedL1 => DistanceMetric::NormalizedL1,
        }
    }
}

#[derive(Args)]
struct HashSpecArgs {
    /// Hash function family.
    #[arg(long, value_enum, default_value = "pdq")]
    hash_kind: HashKindArg,
    /// Output bits (surrogate only; pdq is fixed at 256).
    #[arg(long, default_value_t = 256)]
    bits: u16,
    /// Projection seed (surrogate only).
    #[arg(long, default_value_t = 0)]
    hash_seed: u64,
}

impl HashSpecArgs {
    fn spec(&self) -> HashFunctionSpec {
        match self.hash_kind {
            HashKindArg::Pdq => HashFunctionSpec::pdq(),
            HashKindArg::SurrogateProjection => {
                HashFunctionSpec::surrogate(self.bits, self.hash_seed)
            }
        }
    }

    fn function(&self) -> Result<HashFunction> {
        HashFunction::from_spec(&self.spec()).context("invalid hash spec")
    }
}

#[derive(Subcommand)]
enum Command {
    /// Hash image files and print hex digests.
    Hash {
        #[command(flatten)]
        spec: HashSpecArgs,
        /// Emit one JSON record per file instead of plain lines.
        #[arg(long)]
        json: bool,
        /// PNG or JPEG files to hash.
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Hash database operations.
    #[command(subcommand)]
    Db(DbCommand),
    /// Expand a reference directory with random view transforms.
    Augment {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Total number of output images, originals included.
        #[arg(long)]
        target: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 15.0)]
        rotation_degrees: f32,
        #[arg(long, default_value_t = 0.10)]
        translate_fraction: f32,
        #[arg(long, default_value_t = 0.8)]
        scale_min: f32,
        #[arg(long, default_value_t = 1.2)]
        scale_max: f32,
        #[arg(long, default_value_t = 5.0)]
        shear_degrees: f32,
        #[arg(long, default_value_t = 0.05)]
        perspective_fraction: f32,
    },
    /// Scene dataset generation.
    #[command(subcommand)]
    Scene(SceneCommand),
    /// Poison-set selection.
    #[command(subcommand)]
    Poison(PoisonCommand),
    /// Craft poison delivery images for a poison set.
    Craft {
        /// Poison set file (line-delimited records with hex hashes).
        #[arg(long)]
        poisons: PathBuf,
        /// Directory of candidate delivery images.
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        spec: HashSpecArgs,
        #[arg(long, value_enum, default_value = "nes")]
        mode: AttackModeArg,
        /// Max per-pixel perturbation.
        #[arg(long, default_value_t = 8.0 / 255.0)]
        linf_budget: f32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Candidates attacked per poison (0 = whole remaining pool).
        #[arg(long, default_value_t = 0)]
        candidate_cap: usize,
    },
    /// Append poison hashes to a database file.
    Inject {
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        poisons: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Flag a directory of images against a database and report rates.
    Eval {
        #[arg(long)]
        db: PathBuf,
        /// Images standing in for user captures.
        #[arg(long)]
        user_dir: PathBuf,
        /// Optional benign images for a false-positive rate.
        #[arg(long)]
        benign_dir: Option<PathBuf>,
        #[arg(long)]
        threshold: f64,
        #[arg(long, value_enum, default_value = "normalized-l1")]
        metric: MetricArg,
        #[command(flatten)]
        spec: HashSpecArgs,
    },
    /// Run the evaluation sweeps (budget table, trade-off, cross-condition,
    /// occlusion) without crafting.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run the full pipeline end to end.
    Run {
        #[command(flatten)]
        run: RunArgs,
        /// Validate the config and write the plan without running.
        #[arg(long)]
        dry_run: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum AttackModeArg {
    Nes,
    ProjectedGradient,
}

#[derive(Subcommand)]
enum DbCommand {
    /// Build a database from images or a hex-hash list.
    Build {
        #[arg(long)]
        out: PathBuf,
        /// Directory of images to hash.
        #[arg(long, conflicts_with = "hashes")]
        input: Option<PathBuf>,
        /// File with one lowercase hex hash per line.
        #[arg(long)]
        hashes: Option<PathBuf>,
        /// Tag entries as poison instead of legitimate.
        #[arg(long)]
        poison: bool,
        /// Keep only the first N images (lexicographic).
        #[arg(long)]
        count: Option<usize>,
        #[command(flatten)]
        spec: HashSpecArgs,
    },
    /// Print database statistics as JSON.
    Stats { db: PathBuf },
    /// Merge databases; duplicate bit patterns keep their first tag.
    Merge {
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

#[derive(Subcommand)]
enum SceneCommand {
    /// Render a synthetic scene and write reference/user views.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        base_seed: u64,
        #[arg(long, default_value_t = 0)]
        condition: u32,
        #[arg(long, default_value_t = 100)]
        reference: usize,
        #[arg(long, default_value_t = 50)]
        user: usize,
    },
}

#[derive(Subcommand)]
enum PoisonCommand {
    /// Select a poison set from scene hashes.
    Select {
        /// File with one lowercase hex hash per line.
        #[arg(long, conflicts_with = "input")]
        hashes: Option<PathBuf>,
        /// Directory of scene images to hash first.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "kmodes")]
        strategy: StrategyArg,
        #[arg(long)]
        budget: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        restarts: usize,
        #[arg(long, default_value_t = 100)]
        max_iterations: usize,
        #[command(flatten)]
        spec: HashSpecArgs,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Kmodes,
    Random,
}

/// Shared flags for `run` and `sweep`. Precedence: flags over environment
/// (`CSISLAB_*`) over the config file over built-in defaults.
#[derive(Args)]
struct RunArgs {
    /// TOML config file; omit to start from defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    budget_fraction: Option<f64>,
    #[arg(long)]
    target_fpr: Option<f64>,
    #[arg(long)]
    write_images: Option<bool>,
}

fn log_record(level: &str, stage: &str, message: &str, extra: serde_json::Value) {
    let mut record = serde_json::json!({
        "level": level,
        "stage": stage,
        "message": message,
    });
    if let (Some(obj), Some(extra_obj)) = (record.as_object_mut(), extra.as_object()) {
        for (k, v) in extra_obj {
            obj.insert(k.clone(), v.clone());
        }
    }
    eprintln!("{record}");
}

fn env_override<T: std::str::FromStr>(name: &str) -> Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    match std::env::var(name) {
        Ok(v) => v
            .parse::<T>()
            .map(Some)
            .map_err(|e| anyhow::anyhow!("bad {name}={v}: {e}")),
        Err(_) => Ok(None),
    }
}

impl RunArgs {
    fn build_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_toml_file(path)
                .map_err(|e| anyhow::anyhow!("{e}"))?,
            None => RunConfig::default(),
        };
        // Environment overrides.
        if let Some(v) = env_override::<u64>("CSISLAB_SEED")? {
            cfg.seed = v;
        }
        if let Some(v) = env_override::<f64>("CSISLAB_SCALE")? {
            cfg.scale = v;
        }
        if let Some(v) = env_override::<String>("CSISLAB_OUT_DIR")? {
            cfg.out_dir = PathBuf::from(v);
        }
        if let Some(v) = env_override::<usize>("CSISLAB_WORKERS")? {
            cfg.workers = v;
        }
        if let Some(v) = env_override::<String>("CSISLAB_SCENARIO")? {
            cfg.scenario = v;
        }
        if let Some(v) = env_override::<f64>("CSISLAB_BUDGET_FRACTION")? {
            cfg.budget_fraction = v;
        }
        if let Some(v) = env_override::<f64>("CSISLAB_TARGET_FPR")? {
            cfg.target_fpr = v;
        }
        if let Some(v) = env_override::<bool>("CSISLAB_WRITE_IMAGES")? {
            cfg.write_images = v;
        }
        if let Some(v) = env_override::<usize>("CSISLAB_CRAFT_POISON_CAP")? {
            cfg.craft_poison_cap = v;
        }
        if let Some(v) = env_override::<String>("CSISLAB_INJECT_SOURCE")? {
            cfg.inject_source = match v.as_str() {
                "poisons" => InjectSource::Poisons,
                "crafted" => InjectSource::Crafted,
                other => bail!("bad CSISLAB_INJECT_SOURCE={other}"),
            };
        }
        // Flag overrides win.
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.scale {
            cfg.scale = v;
        }
        if let Some(v) = &self.out_dir {
            cfg.out_dir = v.clone();
        }
        if let Some(v) = self.workers {
            cfg.workers = v;
        }
        if let Some(v) = &self.scenario {
            cfg.scenario = v.clone();
        }
        if let Some(v) = self.budget_fraction {
            cfg.budget_fraction = v;
        }
        if let Some(v) = self.target_fpr {
            cfg.target_fpr = v;
        }
        if let Some(v) = self.write_images {
            cfg.write_images = v;
        }
        Ok(cfg)
    }
}

fn read_hex_hashes(path: &PathBuf) -> Result<Vec<PerceptualHash>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        out.push(
            PerceptualHash::from_hex(line)
                .with_context(|| format!("{}:{}", path.display(), i + 1))?,
        );
    }
    if out.is_empty() {
        bail!("{} holds no hashes", path.display());
    }
    Ok(out)
}

fn hash_directory(dir: &PathBuf, hash: &HashFunction) -> Result<Vec<PerceptualHash>> {
    let corpus = load_dir_all(dir, DecodePolicy::Skip)?;
    for (path, err) in &corpus.skipped {
        log_record("warn", "hash", "skipped undecodable file", serde_json::json!({
            "path": path, "error": err,
        }));
    }
    corpus
        .images
        .iter()
        .map(|img| hash.hash(img).context("hashing image"))
        .collect()
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            log_record("error", "cli", &format!("{e:#}"), serde_json::json!({}));
            std::process::exit(1);
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Hash { spec, json, files } => {
            let hash = spec.function()?;
            for file in files {
                let img = LumaImage::decode_file(&file)?;
                let h = hash.hash(&img)?;
                if json {
                    println!(
                        "{}",
                        serde_json::json!({
                            "file": file.display().to_string(),
                            "hex": h.to_hex(),
                            "quality": h.quality(),
                            "bits": h.len_bits(),
                        })
                    );
                } else {
                    println!("{}  {}", h.to_hex(), file.display());
                }
            }
            Ok(())
        }
        Command::Db(cmd) => run_db(cmd),
        Command::Augment {
            input,
            out,
            target,
            seed,
            rotation_degrees,
            translate_fraction,
            scale_min,
            scale_max,
            shear_degrees,
            perspective_fraction,
        } => {
            let corpus = load_dir_all(&input, DecodePolicy::Skip)?;
            let cfg = AugmentationConfig {
                target_count: target,
                rotation_degrees,
                translate_fraction,
                scale_min,
                scale_max,
                shear_degrees,
                perspective_fraction,
                seed,
            };
            let images = augment(&corpus.images, &cfg)?;
            std::fs::create_dir_all(&out)?;
            for (i, img) in images.iter().enumerate() {
                img.save_png(out.join(format!("aug_{i:06}.png")))?;
            }
            log_record("info", "augment", "wrote augmented set", serde_json::json!({
                "count": images.len(), "out": out.display().to_string(),
            }));
            Ok(())
        }
        Command::Scene(SceneCommand::Synth { out, base_seed, condition, reference, user }) => {
            let dataset = synth_scene(base_seed, condition, reference, user);
            std::fs::create_dir_all(&out)?;
            let mut manifest = Vec::new();
            for (split, images) in
                [("reference", &dataset.reference), ("user", &dataset.user)]
            {
                let dir = out.join(split);
                std::fs::create_dir_all(&dir)?;
                for (i, img) in images.iter().enumerate() {
                    let name = format!("{split}_{i:05}.png");
                    img.save_png(dir.join(&name))?;
                    manifest.push(ManifestRecord {
                        path: format!("{split}/{name}"),
                        role: split.to_string(),
                        condition,
                        split: split.to_string(),
                    });
                }
            }
            csislab::scene::write_manifest(out.join("manifest.jsonl"), &manifest)?;
            log_record("info", "scene", "synthesized scene", serde_json::json!({
                "reference": dataset.reference.len(),
                "user": dataset.user.len(),
                "condition": condition,
            }));
            Ok(())
        }
        Command::Poison(PoisonCommand::Select {
            hashes,
            input,
            strategy,
            budget,
            out,
            seed,
            restarts,
            max_iterations,
            spec,
        }) => {
            let scene_hashes = match (&hashes, &input) {
                (Some(path), _) => read_hex_hashes(path)?,
                (None, Some(dir)) => hash_directory(dir, &spec.function()?)?,
                (None, None) => bail!("provide --hashes or --input"),
            };
            let set = match strategy {
                StrategyArg::Kmodes => kmodes_select(
                    &scene_hashes,
                    &KModesConfig { k: budget, restarts, max_iterations, seed },
                )?,
                StrategyArg::Random => random_select(&scene_hashes, budget, seed)?,
            };
            write_poison_file(&out, &set)?;
            log_record("info", "poison", "selected poison set", serde_json::json!({
                "budget": budget,
                "strategy": set.strategy.to_string(),
                "objective": set.objective,
                "converged": set.converged,
                "out": out.display().to_string(),
            }));
            Ok(())
        }
        Command::Craft { poisons, pool, out, spec, mode, linf_budget, seed, candidate_cap } => {
            let hash = spec.function()?;
            let set = read_poison_file(&poisons).map_err(|e| anyhow::anyhow!("{e}"))?;
            let pool_imgs = load_dir_all(&pool, DecodePolicy::Skip)?.images;
            let mut cfg = match mode {
                AttackModeArg::Nes => AttackConfig::nes(seed),
                AttackModeArg::ProjectedGradient => AttackConfig::projected_gradient(seed),
            };
            cfg.linf_budget = linf_budget;
            let entries = craft_batch(&pool_imgs, &set, &hash, &cfg, candidate_cap)?;
            std::fs::create_dir_all(&out)?;
            let mut log = String::new();
            for entry in &entries {
                let name = format!("delivery_{:04}.png", entry.poison_index);
                entry.result.image.save_png(out.join(&name))?;
                let record = serde_json::json!({
                    "source": entry.source_index,
                    "target": set.hashes[entry.poison_index].to_hex(),
                    "initial_distance": entry.result.initial_distance,
                    "final_distance": entry.result.final_distance,
                    "linf": entry.result.linf_actual,
                    "l2": entry.result.l2_distance,
                    "queries": entry.result.queries_used,
                    "image": name,
                });
                log.push_str(&record.to_string());
                log.push('\n');
            }
            std::fs::write(out.join("craft_log.jsonl"), log)?;
            log_record("info", "craft", "crafted delivery images", serde_json::json!({
                "count": entries.len(), "out": out.display().to_string(),
            }));
            Ok(())
        }
        Command::Inject { db, poisons, out } => {
            let database = HashDatabase::load(&db)?;
            let set = read_poison_file(&poisons).map_err(|e| anyhow::anyhow!("{e}"))?;
            let poisoned = database.with_poisons(set.hashes.iter().cloned())?;
            poisoned.save(&out)?;
            log_record("info", "inject", "wrote poisoned database", serde_json::json!({
                "entries": poisoned.len(),
                "poison_fraction": poisoned.poison_fraction(),
                "out": out.display().to_string(),
            }));
            Ok(())
        }
        Command::Eval { db, user_dir, benign_dir, threshold, metric, spec } => {
            let database = HashDatabase::load(&db)?;
            let hash = spec.function()?;
            let cfg = MatchConfig { metric: metric.into(), threshold };
            cfg.validate(database.len_bits())?;
            let user_hashes = hash_directory(&user_dir, &hash)?;
            let rate = surveillance_rate(&user_hashes, &database, &cfg)?;
            let fpr = match &benign_dir {
                Some(dir) => {
                    let benign = hash_directory(dir, &hash)?;
                    Some(database.false_positive_rate(&benign, &cfg)?)
                }
                None => None,
            };
            println!(
                "{}",
                serde_json::json!({
                    "surveillance_rate": rate,
                    "fpr": fpr,
                    "threshold": threshold,
                    "db_entries": database.len(),
                    "poison_fraction": database.poison_fraction(),
                })
            );
            Ok(())
        }
        Command::Sweep { run } => {
            let cfg = run.build_config()?;
            let outcome = run_sweeps(&cfg).map_err(|e| {
                log_record("error", e.stage, &e.message, serde_json::json!({}));
                anyhow::anyhow!("{e}")
            })?;
            log_record("info", "sweep", "sweeps complete", serde_json::json!({
                "run_dir": outcome.run_dir.display().to_string(),
                "threshold": outcome.calibrated_threshold,
            }));
            println!("{}", outcome.run_dir.display());
            Ok(())
        }
        Command::Run { run, dry_run: dry } => {
            let cfg = run.build_config()?;
            if dry {
                let plan = dry_run(&cfg).map_err(|e| anyhow::anyhow!("{e}"))?;
                log_record("info", "plan", "dry run complete", serde_json::json!({
                    "plan": plan.display().to_string(),
                }));
                println!("{}", plan.display());
                return Ok(());
            }
            let outcome = run_pipeline(&cfg).map_err(|e| {
                log_record("error", e.stage, &e.message, serde_json::json!({}));
                anyhow::anyhow!("{e}")
            })?;
            for stage in &outcome.stages {
                log_record("info", &stage.stage, "stage complete", serde_json::json!({
                    "seconds": stage.seconds,
                    "detail": stage.detail,
                }));
            }
            println!(
                "{}",
                serde_json::json!({
                    "run_dir": outcome.run_dir.display().to_string(),
                    "threshold": outcome.calibrated_threshold,
                    "surveillance_rate": outcome.surveillance_rate,
                    "fpr": outcome.fpr_at_threshold,
                })
            );
            Ok(())
        }
    }
}

fn run_db(cmd: DbCommand) -> Result<()> {
    match cmd {
        DbCommand::Build { out, input, hashes, poison, count, spec } => {
            let mut collected: Vec<PerceptualHash> = match (&input, &hashes) {
                (Some(dir), None) => hash_directory(dir, &spec.function()?)?,
                (None, Some(path)) => read_hex_hashes(path)?,
                _ => bail!("provide exactly one of --input or --hashes"),
            };
            if let Some(n) = count {
                collected.truncate(n);
            }
            let tag = if poison { Provenance::Poison } else { Provenance::Legitimate };
            let db = HashDatabase::build(collected, std::iter::repeat(tag))?;
            db.save(&out)?;
            log_record("info", "db", "built database", serde_json::json!({
                "entries": db.len(),
                "duplicates_dropped": db.duplicates_dropped(),
                "out": out.display().to_string(),
            }));
            Ok(())
        }
        DbCommand::Stats { db } => {
            let database = HashDatabase::load(&db)?;
            println!(
                "{}",
                serde_json::json!({
                    "entries": database.len(),
                    "bits": database.len_bits(),
                    "poison_entries": database.poison_count(),
                    "poison_fraction": database.poison_fraction(),
                    "duplicates_dropped_at_build": database.duplicates_dropped(),
                })
            );
            Ok(())
        }
        DbCommand::Merge { out, inputs } => {
            let mut hashes: Vec<PerceptualHash> = Vec::new();
            let mut tags: Vec<Provenance> = Vec::new();
            for path in &inputs {
                let db = HashDatabase::load(path)?;
                for (h, t) in db.entries() {
                    hashes.push(h.clone());
                    tags.push(t);
                }
            }
            let merged = HashDatabase::build(hashes, tags)?;
            merged.save(&out)?;
            log_record("info", "db", "merged databases", serde_json::json!({
                "inputs": inputs.len(),
                "entries": merged.len(),
                "duplicates_dropped": merged.duplicates_dropped(),
                "out": out.display().to_string(),
            }));
            Ok(())
        }
    }
}
