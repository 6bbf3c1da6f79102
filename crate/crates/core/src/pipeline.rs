//! Config-driven runs: load, split, optionally tune, train, evaluate, report.
//!
//! Every stage is exposed on its own so the CLI can run them one at a time
//! over intermediate files; [`run_pipeline`] chains them and writes a
//! [`RunManifest`] last.

use std::collections::BTreeMap;
use std::error::Error as StdError;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::interactions::{self, DataError, InteractionSet, Schema, SyntheticSpec};
use crate::metrics::MetricReport;
use crate::models::{self, Model, ModelParams};
use crate::protocol::{self, EvalOptions, ScoredOutput};
use crate::rng;
use crate::splitters::{self, GroupBy, Split, SplitMethod, SplitSpec};
use crate::tuning::{self, Axis, Objective, ParamSpace, SearchContext, SearchResult};

/// Pipeline stage, used to pick the process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Config,
    Data,
    Split,
    Train,
    Tune,
    Evaluate,
}

impl Stage {
    pub fn exit_code(self) -> i32 {
        match self {
            Stage::Config => 1,
            Stage::Data => 2,
            Stage::Split => 3,
            Stage::Train => 4,
            Stage::Tune => 5,
            Stage::Evaluate => 6,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Data => "data",
            Stage::Split => "split",
            Stage::Train => "train",
            Stage::Tune => "tune",
            Stage::Evaluate => "evaluate",
        }
    }
}

#[derive(Debug)]
pub struct PipelineError {
    pub stage: Stage,
    pub source: Box<dyn StdError + Send + Sync>,
}

impl PipelineError {
    pub fn new(stage: Stage, source: impl Into<Box<dyn StdError + Send + Sync>>) -> Self {
        PipelineError {
            stage,
            source: source.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.stage.exit_code()
    }
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} stage failed: {}", self.stage.name(), self.source)
    }
}

impl StdError for PipelineError {
    fn source(&self) -> Option<&(dyn StdError + 'static)> {
        Some(&*self.source)
    }
}

fn at<E: Into<Box<dyn StdError + Send + Sync>>>(stage: Stage) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError::new(stage, e)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub schema: Schema,
    pub synthetic: Option<SyntheticSpec>,
    /// Whether `synthetic.seed` was written in the config; otherwise the
    /// base seed is used.
    #[serde(skip)]
    pub synthetic_seed_given: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    #[serde(default = "default_method")]
    pub method: SplitMethod,
    pub ratios: Vec<f64>,
    /// Derived from the base seed when absent.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub group_by: GroupBy,
    #[serde(default = "one")]
    pub min_interactions: usize,
}

fn default_method() -> SplitMethod {
    SplitMethod::Random
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Grid,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneConfig {
    pub strategy: Strategy,
    #[serde(default)]
    pub space: BTreeMap<String, Axis>,
    /// Number of random-search trials.
    #[serde(default)]
    pub budget: Option<usize>,
    pub objective: Objective,
    /// Fit the final model on train and validation together.
    #[serde(default = "yes")]
    pub retrain_on_validation: bool,
    /// Largest grid accepted.
    #[serde(default = "default_max_trials")]
    pub max_trials: usize,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn yes() -> bool {
    true
}

fn default_max_trials() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    /// Worker threads; all available cores when absent.
    #[serde(default)]
    pub workers: Option<usize>,
    pub data: DataConfig,
    pub split: SplitConfig,
    #[serde(default)]
    pub model: ModelParams,
    #[serde(default)]
    pub tune: Option<TuneConfig>,
    #[serde(default)]
    pub evaluate: EvalOptions,
}

fn default_output() -> PathBuf {
    PathBuf::from("output")
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, PipelineError> {
        let mut config: PipelineConfig = toml::from_str(text).map_err(at(Stage::Config))?;
        let raw: toml::Table = text.parse().map_err(at(Stage::Config))?;
        config.data.synthetic_seed_given = raw
            .get("data")
            .and_then(|d| d.get("synthetic"))
            .and_then(|s| s.get("seed"))
            .is_some();
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| PipelineError::new(Stage::Config, format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Checks everything that can be checked without touching data.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::new(Stage::Config, m));
        match (&self.data.path, &self.data.synthetic) {
            (Some(_), Some(_)) => return bad("data has both `path` and `synthetic`; give exactly one".into()),
            (None, None) => return bad("data needs either `path` or `synthetic`".into()),
            (None, Some(spec)) => spec.validate().map_err(at(Stage::Config))?,
            (Some(_), None) => {}
        }
        if self.workers == Some(0) {
            return bad("workers must be at least 1".into());
        }
        self.split_spec().map_err(at(Stage::Config))?;
        self.model.validate().map_err(at(Stage::Config))?;
        if self.evaluate.k < 1 {
            return bad("evaluate.k must be at least 1".into());
        }
        match &self.tune {
            Some(tune) => {
                if self.split.ratios.len() != 3 {
                    return bad("tuning needs a three-part split (train, validation, test)".into());
                }
                tune.objective.validate().map_err(at(Stage::Config))?;
                self.param_space()?;
                if tune.strategy == Strategy::Random && tune.budget.unwrap_or(0) < 1 {
                    return bad("random search needs `budget` of at least 1".into());
                }
            }
            None if self.split.ratios.len() == 3 => {
                return bad("a validation part is only used by `[tune]`; use two ratios".into());
            }
            None => {}
        }
        Ok(())
    }

    pub fn split_seed(&self) -> u64 {
        self.split.seed.unwrap_or(rng::mix(self.seed, rng::STREAM_SPLIT))
    }

    pub fn model_seed(&self) -> u64 {
        rng::mix(self.seed, rng::STREAM_MODEL)
    }

    pub fn tune_seed(&self) -> u64 {
        self.tune
            .as_ref()
            .and_then(|t| t.seed)
            .unwrap_or(rng::mix(self.seed, rng::STREAM_TUNE))
    }

    pub fn split_spec(&self) -> Result<SplitSpec, splitters::SplitError> {
        SplitSpec::new(self.split.ratios.clone(), self.split_seed())?
            .with_group_by(self.split.group_by)
            .with_min_interactions(self.split.min_interactions)
    }

    pub fn param_space(&self) -> Result<ParamSpace, PipelineError> {
        let axes = self.tune.as_ref().map(|t| t.space.clone()).unwrap_or_default();
        ParamSpace::new(self.model.clone(), axes).map_err(at(Stage::Config))
    }

    /// SHA-256 of the canonical JSON form. Output location and worker count
    /// do not change results and are left out.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("output");
            map.remove("workers");
        }
        if self.data.synthetic.is_some() && !self.data.synthetic_seed_given {
            value["data"]["synthetic"]["seed"] = serde_json::Value::Null;
        }
        // serde_json maps are sorted, so key order in the file is irrelevant
        let canonical = serde_json::to_string(&value).expect("value serializes");
        hex(&Sha256::digest(canonical.as_bytes()))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Loads the interaction file or generates the synthetic data set.
pub fn load_data(config: &PipelineConfig) -> Result<InteractionSet, PipelineError> {
    match (&config.data.path, &config.data.synthetic) {
        (Some(path), _) => interactions::load_interactions(path, &config.data.schema).map_err(at(Stage::Data)),
        (None, Some(spec)) => {
            let mut spec = spec.clone();
            if !config.data.synthetic_seed_given {
                spec.seed = config.seed;
            }
            Ok(interactions::generate_synthetic(&spec).map_err(at(Stage::Data))?.set)
        }
        (None, None) => Err(PipelineError::new(Stage::Config, "no data source configured")),
    }
}

pub fn split_data(config: &PipelineConfig, set: &InteractionSet) -> Result<Split, PipelineError> {
    let spec = config.split_spec().map_err(at(Stage::Config))?;
    splitters::split(set, &spec, config.split.method).map_err(at(Stage::Split))
}

/// Part file names for a two- or three-way split.
pub fn part_names(n_parts: usize) -> &'static [&'static str] {
    if n_parts == 3 {
        &["train.csv", "validation.csv", "test.csv"]
    } else {
        &["train.csv", "test.csv"]
    }
}

pub fn write_split(split: &Split, dir: &Path) -> Result<Vec<String>, PipelineError> {
    let names = part_names(split.parts.len());
    for (part, name) in split.parts.iter().zip(names) {
        interactions::write_interactions(part, dir.join(name)).map_err(at(Stage::Split))?;
    }
    Ok(names.iter().map(|s| s.to_string()).collect())
}

/// Outcome of the tuning stage.
#[derive(Debug, Clone)]
pub struct TuneOutcome {
    pub result: SearchResult,
    /// Config model params with the best trial's values applied.
    pub best_params: ModelParams,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TuningSummary {
    pub strategy: Strategy,
    pub objective: Objective,
    pub n_trials: usize,
    pub n_failed: usize,
    pub best_trial_index: usize,
    pub best_objective_value: f64,
    pub best_params: ModelParams,
}

/// Runs the configured search on the train and validation parts.
pub fn tune(
    config: &PipelineConfig,
    train: &InteractionSet,
    validation: &InteractionSet,
) -> Result<TuneOutcome, PipelineError> {
    let tune = config
        .tune
        .as_ref()
        .ok_or_else(|| PipelineError::new(Stage::Config, "config has no `[tune]` section"))?;
    let space = config.param_space()?;
    let ctx = SearchContext {
        train,
        validation,
        objective: tune.objective.clone(),
        eval: config.evaluate.clone(),
        catalog: train.items().ids().iter().map(String::as_str).collect(),
        seed: config.tune_seed(),
    };
    let result = match tune.strategy {
        Strategy::Grid => tuning::grid_search(&space, &ctx, tune.max_trials),
        Strategy::Random => tuning::random_search(&space, &ctx, tune.budget.unwrap_or(0)),
    }
    .map_err(at(Stage::Tune))?;
    let best_params = match result.best_trial() {
        Some(best) => space.bind(&best.params).map_err(at(Stage::Tune))?,
        None => config.model.clone(),
    };
    Ok(TuneOutcome { result, best_params })
}

impl TuneOutcome {
    pub fn summary(&self, config: &PipelineConfig) -> Option<TuningSummary> {
        let tune = config.tune.as_ref()?;
        let best = self.result.best_trial()?;
        Some(TuningSummary {
            strategy: tune.strategy,
            objective: tune.objective.clone(),
            n_trials: self.result.trials.len(),
            n_failed: self.result.trials.iter().filter(|t| !t.succeeded()).count(),
            best_trial_index: best.trial_index,
            best_objective_value: best.objective_value.expect("best trial succeeded"),
            best_params: self.best_params.clone(),
        })
    }

    /// Writes `trials.jsonl` and, when some trial succeeded,
    /// `tuning_summary.json`. Fails if every trial failed.
    pub fn write(&self, config: &PipelineConfig, dir: &Path) -> Result<Vec<String>, PipelineError> {
        write_text(&dir.join("trials.jsonl"), &self.result.trials_jsonl(), Stage::Tune)?;
        let Some(summary) = self.summary(config) else {
            return Err(PipelineError::new(Stage::Tune, "every trial failed"));
        };
        let json = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
        write_text(&dir.join("tuning_summary.json"), &json, Stage::Tune)?;
        Ok(vec!["trials.jsonl".into(), "tuning_summary.json".into()])
    }
}

/// Fits `params`, seeding it from the base seed unless it carries its own.
pub fn train_model(config: &PipelineConfig, train: &InteractionSet, params: &ModelParams) -> Result<Model, PipelineError> {
    let params = params.clone().with_default_seed(config.model_seed());
    models::fit(train, &params).map_err(at(Stage::Train))
}

/// Scores `model` on `test` and computes the report.
pub fn evaluate_model(
    model: &Model,
    test: &InteractionSet,
    opts: &EvalOptions,
    catalog: &[&str],
) -> Result<(ScoredOutput, MetricReport), PipelineError> {
    let scored = protocol::score_model(model, test, opts);
    let report = protocol::evaluate(
        test,
        Some(&scored.predictions),
        Some(&scored.recommendations),
        opts,
        catalog,
    )
    .map_err(at(Stage::Evaluate))?;
    Ok((scored, report))
}

fn write_text(path: &Path, text: &str, stage: Stage) -> Result<(), PipelineError> {
    fs::write(path, text).map_err(|e| PipelineError::new(stage, format!("cannot write {}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub toolkit_version: String,
    pub config_hash: String,
    pub seed: u64,
    /// Seconds per stage, in execution order.
    pub stage_seconds: Vec<(String, f64)>,
    /// Seconds per tuning trial, by trial index.
    pub trial_seconds: Vec<f64>,
    /// Files written to the output directory, manifest excluded.
    pub artifacts: Vec<String>,
    pub metrics: MetricReport,
}

impl RunManifest {
    /// Writes via a temporary file and a rename so readers never see a
    /// partial manifest.
    pub fn write_atomic(&self, dir: &Path) -> std::io::Result<()> {
        let tmp = dir.join(".manifest.json.tmp");
        let json = serde_json::to_string_pretty(self).expect("manifest serializes") + "\n";
        fs::write(&tmp, json)?;
        fs::rename(&tmp, dir.join("manifest.json"))
    }
}

struct Clock {
    stages: Vec<(String, f64)>,
    started: Instant,
}

impl Clock {
    fn new() -> Self {
        Clock {
            stages: Vec::new(),
            started: Instant::now(),
        }
    }

    fn lap(&mut self, stage: Stage) {
        self.stages
            .push((stage.name().to_owned(), self.started.elapsed().as_secs_f64()));
        self.started = Instant::now();
    }
}

/// Runs every stage and writes all artifacts plus `manifest.json` into
/// `config.output`.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunManifest, PipelineError> {
    config.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = config.workers {
        builder = builder.num_threads(w);
    }
    let pool = builder.build().map_err(at(Stage::Config))?;
    pool.install(|| run_stages(config))
}

fn run_stages(config: &PipelineConfig) -> Result<RunManifest, PipelineError> {
    let dir = &config.output;
    fs::create_dir_all(dir)
        .map_err(|e| PipelineError::new(Stage::Config, format!("cannot create {}: {e}", dir.display())))?;
    let mut clock = Clock::new();
    clock.lap(Stage::Config);

    let data = load_data(config)?;
    log::info!("loaded {} interactions", data.len());
    clock.lap(Stage::Data);

    let split = split_data(config, &data)?;
    let mut artifacts = write_split(&split, dir)?;
    clock.lap(Stage::Split);

    let (train, test) = (&split.parts[0], &split.parts[split.parts.len() - 1]);
    let mut trial_seconds = Vec::new();
    let (params, fit_on) = match &config.tune {
        Some(tune) => {
            let validation = &split.parts[1];
            let outcome = self::tune(config, train, validation)?;
            trial_seconds = outcome.result.trials.iter().map(|t| t.wall_time_seconds).collect();
            artifacts.extend(outcome.write(config, dir)?);
            clock.lap(Stage::Tune);
            let fit_on = if tune.retrain_on_validation {
                InteractionSet::concat(&[train, validation])
            } else {
                train.clone()
            };
            (outcome.best_params, fit_on)
        }
        None => (config.model.clone(), train.clone()),
    };

    let model = train_model(config, &fit_on, &params)?;
    model.save(dir.join("model.json")).map_err(at(Stage::Train))?;
    artifacts.push("model.json".into());
    clock.lap(Stage::Train);

    let catalog: Vec<&str> = data.items().ids().iter().map(String::as_str).collect();
    let (scored, report) = evaluate_model(&model, test, &config.evaluate, &catalog)?;
    protocol::write_predictions(&scored.predictions, dir.join("predictions.csv")).map_err(at(Stage::Evaluate))?;
    protocol::write_recommendations(&scored.recommendations, dir.join("recommendations.csv"))
        .map_err(at(Stage::Evaluate))?;
    write_text(&dir.join("metrics.json"), &report.to_json(), Stage::Evaluate)?;
    artifacts.extend(["predictions.csv", "recommendations.csv", "metrics.json"].map(String::from));
    clock.lap(Stage::Evaluate);

    let manifest = RunManifest {
        toolkit_version: crate::VERSION.to_owned(),
        config_hash: config.hash(),
        seed: config.seed,
        stage_seconds: clock.stages,
        trial_seconds,
        artifacts,
        metrics: report,
    };
    manifest.write_atomic(dir).map_err(at(Stage::Evaluate))?;
    Ok(manifest)
}

/// Reads interaction files with the default schema and concatenates them in
/// order under one index.
pub fn load_concat(paths: &[PathBuf], schema: &Schema) -> Result<InteractionSet, DataError> {
    let mut all = Vec::new();
    for p in paths {
        all.extend_from_slice(interactions::load_interactions(p, schema)?.interactions());
    }
    InteractionSet::from_interactions(all)
}
