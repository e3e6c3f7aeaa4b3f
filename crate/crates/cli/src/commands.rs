//! Subcommand definitions and their implementations.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{ArgGroup, Args, Parser, Subcommand};
use cpforge::active::{curve_to_csv, run_with_oracle, QueryStrategy, SessionConfig};
use cpforge::clustering::{select_k, ClusterReport, Standardization};
use cpforge::content::{Band, ControlParams, FEATURE_COUNT};
use cpforge::cp::{generate_cps, CpSet};
use cpforge::dataset::{read_labeled, write_labeled};
use cpforge::dda::{run_adaptive, PlayerSim};
use cpforge::level::{generate_level, CpSource};
use cpforge::quality::train;
use cpforge::sampler::sample_dataset;
use cpforge::{Dataset, QualityModel};

use crate::config::{require_file, require_parent, Config};
use crate::error::{AppError, Result};
use crate::server;
use crate::validate::validate_file;

#[derive(Debug, Parser)]
#[command(name = "cpforge", version, about = "Constructive-primitive level generation toolkit")]
pub struct Cli {
    /// TOML file with paths and hyperparameters; flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample raw segments into a dataset file.
    Sample(SampleArgs),
    /// Cluster a dataset and write the cluster report.
    Cluster(ClusterArgs),
    /// Label segments with the oracle, or serve the annotation API.
    Annotate(AnnotateArgs),
    /// Train a quality model from a labeled set.
    Train(TrainArgs),
    /// Generate constructive primitives with a trained model.
    GenCps(GenCpsArgs),
    /// Assemble a level from constructive primitives.
    GenLevel(GenLevelArgs),
    /// Run adaptive difficulty against a simulated player.
    Adapt(AdaptArgs),
    /// Re-derive the invariants of generated files.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[arg(long = "in", value_name = "DATASET")]
    pub input: Option<PathBuf>,
    /// Fixed cluster count; by default k is chosen by silhouette.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[group(skip)]
#[command(group(ArgGroup::new("mode").required(true).args(["oracle", "serve"])))]
pub struct AnnotateArgs {
    /// Label every query with the golden oracle.
    #[arg(long)]
    pub oracle: bool,
    /// Serve the HTTP annotation API.
    #[arg(long)]
    pub serve: bool,
    #[arg(long = "in", value_name = "DATASET")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub clusters: Option<PathBuf>,
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Model file (oracle mode).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Labeled-set file (oracle mode).
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Learning curve CSV (oracle mode).
    #[arg(long)]
    pub curve: Option<PathBuf>,
    /// Listening port (serve mode); overrides CPFORGE_PORT.
    #[arg(long)]
    pub port: Option<u16>,
    /// Directory for finished sessions (serve mode).
    #[arg(long)]
    pub sessions: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long = "in", value_name = "LABELS")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenCpsArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub max_attempts: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenLevelArgs {
    /// CP set to draw from. Without it, CPs are generated on the fly with `--model`.
    #[arg(long = "in", value_name = "CPS")]
    pub input: Option<PathBuf>,
    #[arg(long, conflicts_with = "input")]
    pub model: Option<PathBuf>,
    #[arg(long, requires = "model")]
    pub theta: Option<f64>,
    #[arg(long)]
    pub length: Option<usize>,
    #[arg(long, value_name = "LO:HI")]
    pub enemy_density: Option<Band>,
    #[arg(long, value_name = "LO:HI")]
    pub gap_frequency: Option<Band>,
    #[arg(long, value_name = "LO:HI")]
    pub difficulty: Option<Band>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AdaptArgs {
    #[arg(long = "in", value_name = "CPS")]
    pub input: Option<PathBuf>,
    /// Simulated player skill.
    #[arg(long)]
    pub player: Option<f64>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(required = true)]
    pub paths: Vec<PathBuf>,
    /// Model used to re-check CP membership in CP sets and levels.
    #[arg(long)]
    pub model: Option<PathBuf>,
}

fn input(flag: &Option<PathBuf>, default: &Path) -> Result<PathBuf> {
    let p = flag.clone().unwrap_or_else(|| default.to_path_buf());
    require_file(&p)?;
    Ok(p)
}

fn output(flag: &Option<PathBuf>, default: &Path) -> Result<PathBuf> {
    let p = flag.clone().unwrap_or_else(|| default.to_path_buf());
    require_parent(&p)?;
    Ok(p)
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| AppError::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let f = fs::File::open(path).map_err(|e| AppError::io(path, e))?;
    Dataset::read_jsonl(BufReader::new(f)).map_err(|e| AppError::record(path, e))
}

pub fn load_clusters(path: &Path) -> Result<ClusterReport> {
    let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| AppError::Parse {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

pub fn load_cps(path: &Path) -> Result<CpSet> {
    let f = fs::File::open(path).map_err(|e| AppError::io(path, e))?;
    CpSet::read(BufReader::new(f)).map_err(|e| AppError::record(path, e))
}

pub fn execute(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    match cli.command {
        Command::Sample(a) => sample(&cfg, a),
        Command::Cluster(a) => cluster(&cfg, a),
        Command::Annotate(a) if a.serve => serve(&cfg, a),
        Command::Annotate(a) => annotate_oracle(&cfg, a),
        Command::Train(a) => train_cmd(&cfg, a),
        Command::GenCps(a) => gen_cps(&cfg, a),
        Command::GenLevel(a) => gen_level(&cfg, a),
        Command::Adapt(a) => adapt(&cfg, a),
        Command::Validate(a) => validate(a),
    }
}

fn sample(cfg: &Config, a: SampleArgs) -> Result<()> {
    let out = output(&a.out, &cfg.paths.dataset)?;
    let count = a.count.unwrap_or(cfg.sampler.count);
    let params = cfg.sampler.params(a.seed.unwrap_or(cfg.seed));
    let ds = sample_dataset(count, &params)?;
    let mut bytes = Vec::new();
    ds.write_jsonl(&mut bytes).map_err(|e| AppError::record(&out, e))?;
    write(&out, bytes)?;
    println!("sampled {} segments -> {}", ds.len(), out.display());
    Ok(())
}

fn cluster(cfg: &Config, a: ClusterArgs) -> Result<()> {
    let path = input(&a.input, &cfg.paths.dataset)?;
    let out = output(&a.out, &cfg.paths.clusters)?;
    let ds = load_dataset(&path)?;
    let rows: Vec<[f64; FEATURE_COUNT]> = ds.features().iter().map(|f| f.to_vec()).collect();
    let x = Standardization::fit(&rows).apply_all(&rows);
    let ids: Vec<u64> = ds.records().iter().map(|r| r.id).collect();
    let range = match a.k {
        Some(k) => k..=k,
        None => cfg.annotation.k_min..=cfg.annotation.k_max,
    };
    let result = select_k(&x, &ids, range, a.seed.unwrap_or(cfg.seed))?;
    let report = result.report();
    let mut text = serde_json::to_string(&report).expect("report serialises");
    text.push('\n');
    write(&out, text)?;
    println!(
        "k = {}, silhouette {:.4}, sizes {:?} -> {}",
        report.k,
        report.silhouette,
        report.sizes,
        out.display()
    );
    Ok(())
}

fn session_config(cfg: &Config, budget: Option<usize>, seed: Option<u64>) -> SessionConfig {
    SessionConfig {
        budget: budget.unwrap_or(cfg.annotation.budget),
        holdout_frac: cfg.annotation.holdout_frac,
        seed: seed.unwrap_or(cfg.seed),
        strict: false,
        hyper: cfg.training.hyper(),
    }
}

fn annotate_oracle(cfg: &Config, a: AnnotateArgs) -> Result<()> {
    let ds_path = input(&a.input, &cfg.paths.dataset)?;
    let cl_path = input(&a.clusters, &cfg.paths.clusters)?;
    let model_out = output(&a.out, &cfg.paths.model)?;
    let labels_out = output(&a.labels, &cfg.paths.labels)?;
    if let Some(c) = &a.curve {
        require_parent(c)?;
    }
    let ds = Arc::new(load_dataset(&ds_path)?);
    let report = load_clusters(&cl_path)?;
    let scfg = session_config(cfg, a.budget, a.seed);
    let run = run_with_oracle(ds, &report.medoid_ids, &scfg, QueryStrategy::Uncertainty)?;

    run.model.save(&model_out)?;
    let mut bytes = Vec::new();
    write_labeled(&run.session.labeled_records(), &mut bytes).map_err(|e| AppError::record(&labels_out, e))?;
    write(&labels_out, bytes)?;
    if let Some(c) = &a.curve {
        write(c, curve_to_csv(&run.curve))?;
    }
    let m = run.session.metrics();
    println!(
        "labeled {} of budget {}, holdout accuracy {:.4} -> {}, {}",
        m.labeled,
        m.budget,
        m.holdout_accuracy,
        model_out.display(),
        labels_out.display()
    );
    Ok(())
}

fn serve(cfg: &Config, a: AnnotateArgs) -> Result<()> {
    let ds_path = input(&a.input, &cfg.paths.dataset)?;
    let cl_path = input(&a.clusters, &cfg.paths.clusters)?;
    let port = match a.port {
        Some(p) => p,
        None => cfg.port()?,
    };
    let sessions = a.sessions.unwrap_or_else(|| cfg.paths.sessions.clone());
    let state = server::ServerState::new(
        Arc::new(load_dataset(&ds_path)?),
        ds_path,
        load_clusters(&cl_path)?.medoid_ids,
        session_config(cfg, a.budget, a.seed),
        sessions,
    );
    let rt = tokio::runtime::Runtime::new().map_err(|e| AppError::io(Path::new("<runtime>"), e))?;
    rt.block_on(server::serve(Arc::new(state), port))
}

fn train_cmd(cfg: &Config, a: TrainArgs) -> Result<()> {
    let path = input(&a.input, &cfg.paths.labels)?;
    let out = output(&a.out, &cfg.paths.model)?;
    let f = fs::File::open(&path).map_err(|e| AppError::io(&path, e))?;
    let recs = read_labeled(BufReader::new(f)).map_err(|e| AppError::record(&path, e))?;
    let labeled: Vec<_> = recs.iter().map(|r| (r.features, r.label)).collect();
    let model = train(&labeled, cfg.training.hyper())?;
    model.save(&out)?;
    println!("trained on {} labels, model {} -> {}", labeled.len(), model.id(), out.display());
    Ok(())
}

fn gen_cps(cfg: &Config, a: GenCpsArgs) -> Result<()> {
    let model_path = input(&a.model, &cfg.paths.model)?;
    let out = output(&a.out, &cfg.paths.cps)?;
    let model = QualityModel::load(&model_path)?;
    let params = cfg.sampler.params(a.seed.unwrap_or(cfg.seed));
    let set = generate_cps(
        &model,
        a.count.unwrap_or(cfg.cps.count),
        &params,
        a.theta.unwrap_or(cfg.cps.theta),
        a.max_attempts.unwrap_or(cfg.cps.max_attempts),
    )?;
    let mut bytes = Vec::new();
    set.write(&mut bytes).map_err(|e| AppError::record(&out, e))?;
    write(&out, bytes)?;
    let per_bin: Vec<usize> = set.bins().iter().map(Vec::len).collect();
    println!(
        "kept {} CPs from {} candidates (rate {:.3}), per bin {:?} -> {}",
        set.len(),
        set.stats.attempts,
        set.stats.acceptance_rate(),
        per_bin,
        out.display()
    );
    Ok(())
}

fn gen_level(cfg: &Config, a: GenLevelArgs) -> Result<()> {
    let out = output(&a.out, &cfg.paths.level)?;
    let control = ControlParams {
        enemy_density: a.enemy_density,
        gap_frequency: a.gap_frequency,
        difficulty: a.difficulty,
    };
    let seed = a.seed.unwrap_or(cfg.seed);
    let length = a.length.unwrap_or(cfg.level.length);
    let level = if let Some(model_path) = &a.model {
        require_file(model_path)?;
        let model = QualityModel::load(model_path)?;
        let sampler = cfg.sampler.params(seed);
        let source = CpSource::OnTheFly {
            model: &model,
            sampler: &sampler,
            theta: a.theta.unwrap_or(cfg.cps.theta),
            batch: cfg.level.batch,
        };
        generate_level(source, length, &control, seed)?
    } else {
        let set = load_cps(&input(&a.input, &cfg.paths.cps)?)?;
        generate_level(CpSource::Set(&set), length, &control, seed)?
    };
    write(&out, level.to_text())?;
    println!(
        "level of {} segments, mean difficulty {:.3} -> {}",
        level.segments.len(),
        level.mean_difficulty(),
        out.display()
    );
    Ok(())
}

fn adapt(cfg: &Config, a: AdaptArgs) -> Result<()> {
    let set = load_cps(&input(&a.input, &cfg.paths.cps)?)?;
    let out = output(&a.out, &cfg.paths.trace)?;
    let seed = a.seed.unwrap_or(cfg.seed);
    let skill = a.player.unwrap_or(cfg.dda.player);
    let episodes = a.episodes.unwrap_or(cfg.dda.episodes);
    let mut player = PlayerSim::new(skill, seed);
    let run = run_adaptive(&set, &mut player, episodes, seed, &cfg.dda.config())?;
    write(&out, run.trace.to_csv())?;
    let tail = cfg.dda.tail.min(run.trace.len());
    let s = run.trace.summary(tail)?;
    println!(
        "{} episodes, last {}: difficulty {:.3}, perf {:.3}, reward {:.3} -> {}",
        s.episodes,
        s.tail,
        s.tail_mean_difficulty,
        s.tail_mean_perf,
        s.tail_mean_reward,
        out.display()
    );
    Ok(())
}

fn validate(a: ValidateArgs) -> Result<()> {
    let model = match &a.model {
        Some(p) => {
            require_file(p)?;
            Some(QualityModel::load(p)?)
        }
        None => None,
    };
    let mut first_failure = None;
    for path in &a.paths {
        let report = validate_file(path, model.as_ref())?;
        for p in &report.problems {
            println!("{}: {p}", path.display());
        }
        if report.is_clean() {
            println!("{}: clean {} ({} items)", path.display(), report.kind, report.items);
        } else if first_failure.is_none() {
            first_failure = Some(AppError::Invalid {
                path: path.clone(),
                count: report.problems.len(),
            });
        }
    }
    first_failure.map_or(Ok(()), Err)
}
