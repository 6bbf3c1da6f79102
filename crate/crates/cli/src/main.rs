use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use recokit::pipeline::{self, DataConfig, PipelineConfig, PipelineError, SplitConfig, Stage, TuningSummary};
use recokit::protocol::{self, RecommendationRow};
use recokit::{GroupBy, Model, ModelParams, SplitMethod};

/// Exit status for command-line usage errors.
const USAGE: u8 = 64;

#[derive(Parser)]
#[command(name = "recokit", version, about = "Offline recommender experiments", arg_required_else_help = true)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Pipeline config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Worker threads; overrides the config.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Split an interactions file into train/[validation]/test CSVs.
    Split(SplitArgs),
    /// Fit a model and write it to <output>/model.json.
    Train(TrainArgs),
    /// Score a truth file, or print top-k for one user.
    Recommend(RecommendArgs),
    /// Print a metrics report for predictions and/or recommendations.
    Evaluate(EvaluateArgs),
    /// Search hyperparameters over the config's `[tune]` space.
    Tune(TuneArgs),
    /// Run the whole pipeline from a config.
    Run,
    /// Write a synthetic planted low-rank interactions file.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Random,
    Chrono,
    Stratified,
}

#[derive(Clone, Copy, ValueEnum)]
enum GroupArg {
    User,
    Item,
}

#[derive(Args)]
struct SplitArgs {
    /// Interactions file; overrides the config's data source.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    /// Comma-separated, e.g. 0.8,0.2
    #[arg(long, value_delimiter = ',')]
    ratios: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    group_by: Option<GroupArg>,
    #[arg(long)]
    min_interactions: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    /// Training files; several are concatenated.
    #[arg(long, num_args = 1.., required = true)]
    train: Vec<PathBuf>,
    /// Algorithm with default parameters, instead of the config's model.
    #[arg(long)]
    algorithm: Option<String>,
    /// Take the best parameters from a tuning summary.
    #[arg(long, conflicts_with = "algorithm")]
    params: Option<PathBuf>,
}

#[derive(Args)]
struct RecommendArgs {
    #[arg(long)]
    model: PathBuf,
    /// Truth file; writes predictions.csv and recommendations.csv.
    #[arg(long, required_unless_present = "user")]
    truth: Option<PathBuf>,
    /// Print this user's recommendations to stdout.
    #[arg(long)]
    user: Option<String>,
    #[arg(long)]
    k: Option<usize>,
    /// Keep already-seen items in the lists.
    #[arg(long)]
    keep_seen: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    truth: PathBuf,
    #[arg(long, required_unless_present = "preds")]
    recs: Option<PathBuf>,
    #[arg(long)]
    preds: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    /// Minimum truth rating counted as relevant.
    #[arg(long)]
    threshold: Option<f64>,
    /// Extra interaction files whose items count toward coverage.
    #[arg(long, num_args = 1..)]
    catalog: Vec<PathBuf>,
}

#[derive(Args)]
struct TuneArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    validation: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    users: Option<usize>,
    #[arg(long)]
    items: Option<usize>,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    density: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
    /// File name inside the output directory.
    #[arg(long, default_value = "interactions.csv")]
    name: String,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(USAGE),
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), PipelineError> {
    let Cli { global, command } = cli;
    let seed_flag = global.seed.is_some();
    let mut config = match &global.config {
        Some(path) => PipelineConfig::load(path)?,
        None => bare_config(),
    };
    if let Some(seed) = global.seed {
        config.seed = seed;
    }
    if let Some(output) = global.output {
        config.output = output;
    }
    if let Some(workers) = global.workers {
        config.workers = Some(workers);
    }
    if config.workers == Some(0) {
        return Err(PipelineError::new(Stage::Config, "workers must be at least 1"));
    }
    if let Command::Run = command {
        let manifest = pipeline::run_pipeline(&config)?;
        print!("{}", manifest.metrics.to_json());
        return Ok(());
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = config.workers {
        builder = builder.num_threads(w);
    }
    let pool = builder.build().map_err(|e| PipelineError::new(Stage::Config, e))?;
    pool.install(|| match command {
        Command::Split(args) => split(config, args),
        Command::Train(args) => train(config, args),
        Command::Recommend(args) => recommend(config, args),
        Command::Evaluate(args) => evaluate(config, args),
        Command::Tune(args) => tune(config, args),
        Command::Synth(args) => synth(config, seed_flag, args),
        Command::Run => unreachable!(),
    })
}

/// A config with no data source, used when `--config` is absent.
fn bare_config() -> PipelineConfig {
    PipelineConfig {
        seed: 0,
        output: PathBuf::from("output"),
        workers: None,
        data: DataConfig::default(),
        split: SplitConfig {
            method: SplitMethod::Random,
            ratios: vec![0.8, 0.2],
            seed: None,
            group_by: GroupBy::User,
            min_interactions: 1,
        },
        model: ModelParams::default(),
        tune: None,
        evaluate: Default::default(),
    }
}

fn create_output(config: &PipelineConfig, stage: Stage) -> Result<&Path, PipelineError> {
    let dir = config.output.as_path();
    fs::create_dir_all(dir)
        .map_err(|e| PipelineError::new(stage, format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

fn load(path: &Path, config: &PipelineConfig) -> Result<recokit::InteractionSet, PipelineError> {
    recokit::load_interactions(path, &config.data.schema).map_err(|e| PipelineError::new(Stage::Data, e))
}

fn split(mut config: PipelineConfig, args: SplitArgs) -> Result<(), PipelineError> {
    if let Some(input) = args.input {
        config.data.path = Some(input);
        config.data.synthetic = None;
    }
    if let Some(m) = args.method {
        config.split.method = match m {
            MethodArg::Random => SplitMethod::Random,
            MethodArg::Chrono => SplitMethod::Chrono,
            MethodArg::Stratified => SplitMethod::Stratified,
        };
    }
    if let Some(r) = args.ratios {
        config.split.ratios = r;
    }
    if let Some(g) = args.group_by {
        config.split.group_by = match g {
            GroupArg::User => GroupBy::User,
            GroupArg::Item => GroupBy::Item,
        };
    }
    if let Some(m) = args.min_interactions {
        config.split.min_interactions = m;
    }
    if config.data.path.is_none() && config.data.synthetic.is_none() {
        return Err(PipelineError::new(Stage::Config, "no data source: pass --input or a config with [data]"));
    }
    config.split_spec().map_err(|e| PipelineError::new(Stage::Config, e))?;
    let data = pipeline::load_data(&config)?;
    let parts = pipeline::split_data(&config, &data)?;
    let dir = create_output(&config, Stage::Split)?;
    for name in pipeline::write_split(&parts, dir)? {
        println!("{}", dir.join(name).display());
    }
    Ok(())
}

fn train(config: PipelineConfig, args: TrainArgs) -> Result<(), PipelineError> {
    let params = match (&args.algorithm, &args.params) {
        (Some(name), _) => name
            .parse::<recokit::models::Algorithm>()
            .map_err(|e| PipelineError::new(Stage::Config, e))?
            .default_params(),
        (None, Some(path)) => {
            let text = fs::read_to_string(path)
                .map_err(|e| PipelineError::new(Stage::Config, format!("cannot read {}: {e}", path.display())))?;
            let summary: TuningSummary = serde_json::from_str(&text)
                .map_err(|e| PipelineError::new(Stage::Config, format!("{}: {e}", path.display())))?;
            summary.best_params
        }
        (None, None) => config.model.clone(),
    };
    params.validate().map_err(|e| PipelineError::new(Stage::Config, e))?;
    let set = pipeline::load_concat(&args.train, &config.data.schema).map_err(|e| PipelineError::new(Stage::Data, e))?;
    let model = pipeline::train_model(&config, &set, &params)?;
    let dir = create_output(&config, Stage::Train)?;
    let path = dir.join("model.json");
    model.save(&path).map_err(|e| PipelineError::new(Stage::Train, e))?;
    println!("{}", path.display());
    Ok(())
}

fn load_model(path: &Path) -> Result<Model, PipelineError> {
    Model::load(path).map_err(|e| PipelineError::new(Stage::Data, e))
}

fn recommend(mut config: PipelineConfig, args: RecommendArgs) -> Result<(), PipelineError> {
    if let Some(k) = args.k {
        config.evaluate.k = k;
    }
    if args.keep_seen {
        config.evaluate.remove_seen = false;
    }
    let opts = &config.evaluate;
    if opts.k < 1 {
        return Err(PipelineError::new(Stage::Config, "k must be at least 1"));
    }
    let model = load_model(&args.model)?;
    if let Some(user) = &args.user {
        let rows: Vec<RecommendationRow> = model
            .recommend(user, opts.k, opts.remove_seen)
            .into_iter()
            .enumerate()
            .map(|(r, (item, score))| RecommendationRow {
                user: user.clone(),
                item: item.to_owned(),
                score,
                rank: r + 1,
            })
            .collect();
        let stdout = io::stdout();
        protocol::recommendations_to_writer(&rows, stdout.lock()).map_err(|e| PipelineError::new(Stage::Evaluate, e))?;
    }
    if let Some(truth) = &args.truth {
        let truth = load(truth, &config)?;
        let scored = protocol::score_model(&model, &truth, opts);
        let dir = create_output(&config, Stage::Evaluate)?;
        let at = |e| PipelineError::new(Stage::Evaluate, e);
        protocol::write_predictions(&scored.predictions, dir.join("predictions.csv")).map_err(at)?;
        protocol::write_recommendations(&scored.recommendations, dir.join("recommendations.csv")).map_err(at)?;
    }
    Ok(())
}

fn evaluate(mut config: PipelineConfig, args: EvaluateArgs) -> Result<(), PipelineError> {
    if let Some(k) = args.k {
        config.evaluate.k = k;
    }
    if args.threshold.is_some() {
        config.evaluate.relevance_threshold = args.threshold;
    }
    let truth = load(&args.truth, &config)?;
    let data = |e| PipelineError::new(Stage::Data, e);
    let preds = args.preds.as_ref().map(protocol::read_predictions).transpose().map_err(data)?;
    let recs = args.recs.as_ref().map(protocol::read_recommendations).transpose().map_err(data)?;
    let extra = pipeline::load_concat(&args.catalog, &config.data.schema).map_err(data)?;
    let catalog: Vec<&str> = extra.items().ids().iter().map(String::as_str).collect();
    let report = protocol::evaluate(&truth, preds.as_deref(), recs.as_deref(), &config.evaluate, &catalog)
        .map_err(|e| PipelineError::new(Stage::Evaluate, e))?;
    io::stdout()
        .write_all(report.to_json().as_bytes())
        .map_err(|e| PipelineError::new(Stage::Evaluate, e))
}

fn tune(config: PipelineConfig, args: TuneArgs) -> Result<(), PipelineError> {
    if config.tune.is_none() {
        return Err(PipelineError::new(Stage::Config, "tuning needs a config with a [tune] section"));
    }
    config.param_space()?;
    let train = load(&args.train, &config)?;
    let validation = load(&args.validation, &config)?;
    let outcome = pipeline::tune(&config, &train, &validation)?;
    let dir = create_output(&config, Stage::Tune)?;
    for name in outcome.write(&config, dir)? {
        println!("{}", dir.join(name).display());
    }
    Ok(())
}

/// Uses the config's `[data.synthetic]` when present. The base seed applies
/// unless the config pins `synthetic.seed` and `--seed` is not given.
fn synth(config: PipelineConfig, seed_flag: bool, args: SynthArgs) -> Result<(), PipelineError> {
    let mut spec = config.data.synthetic.clone().unwrap_or_default();
    if seed_flag || !config.data.synthetic_seed_given {
        spec.seed = config.seed;
    }
    spec.n_users = args.users.unwrap_or(spec.n_users);
    spec.n_items = args.items.unwrap_or(spec.n_items);
    spec.rank = args.rank.unwrap_or(spec.rank);
    spec.density = args.density.unwrap_or(spec.density);
    spec.noise_sigma = args.noise.unwrap_or(spec.noise_sigma);
    spec.validate().map_err(|e| PipelineError::new(Stage::Config, e))?;
    let data = recokit::generate_synthetic(&spec).map_err(|e| PipelineError::new(Stage::Data, e))?;
    let dir = create_output(&config, Stage::Data)?;
    let path = dir.join(&args.name);
    recokit::write_interactions(&data.set, &path).map_err(|e| PipelineError::new(Stage::Data, e))?;
    println!("{}", path.display());
    Ok(())
}
