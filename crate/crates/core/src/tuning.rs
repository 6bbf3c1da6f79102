//! Grid and random hyperparameter search.
//!
//! Each trial fits on the training part with a seed derived from the search
//! seed and the trial index, scores the validation part, and records one
//! metric as its objective. Trials run in parallel on the current rayon
//! pool; results are always collected in trial-index order.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interactions::InteractionSet;
use crate::metrics::METRIC_NAMES;
use crate::models::{self, Algorithm, ModelParams};
use crate::protocol::{self, EvalOptions};
use crate::rng;

#[derive(Debug, Error, PartialEq)]
pub enum TuneError {
    #[error("axis `{0}` is continuous; grid search needs discrete values")]
    ContinuousAxisInGrid(String),
    #[error("grid has {size} points, over the budget cap of {cap}")]
    BudgetExceeded { size: usize, cap: usize },
    #[error("search budget must be at least 1")]
    InvalidBudget,
    #[error("invalid axis `{name}`: {reason}")]
    InvalidAxis { name: String, reason: String },
    #[error("unknown objective metric `{0}`")]
    UnknownMetric(String),
}

/// A single hyperparameter value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Bool(bool),
    Int(i64),
    Float(f64),
    Text(String),
}

impl ParamValue {
    fn to_json(&self) -> serde_json::Value {
        match self {
            ParamValue::Bool(b) => (*b).into(),
            ParamValue::Int(i) => (*i).into(),
            ParamValue::Float(f) => (*f).into(),
            ParamValue::Text(s) => s.clone().into(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    #[default]
    Linear,
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscreteAxis {
    pub values: Vec<ParamValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuousAxis {
    pub low: f64,
    pub high: f64,
    #[serde(default)]
    pub scale: Scale,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Axis {
    Discrete(DiscreteAxis),
    Continuous(ContinuousAxis),
}

impl Axis {
    pub fn discrete(values: Vec<ParamValue>) -> Self {
        Axis::Discrete(DiscreteAxis { values })
    }

    pub fn continuous(low: f64, high: f64, scale: Scale) -> Self {
        Axis::Continuous(ContinuousAxis { low, high, scale })
    }

    fn validate(&self, name: &str) -> Result<(), TuneError> {
        let invalid = |reason: &str| {
            Err(TuneError::InvalidAxis {
                name: name.to_owned(),
                reason: reason.to_owned(),
            })
        };
        match self {
            Axis::Discrete(d) if d.values.is_empty() => invalid("value list is empty"),
            Axis::Continuous(c) if !(c.low.is_finite() && c.high.is_finite() && c.low < c.high) => {
                invalid("range needs finite low < high")
            }
            Axis::Continuous(c) if c.scale == Scale::Log && c.low <= 0.0 => invalid("log scale needs low > 0"),
            _ => Ok(()),
        }
    }

    /// Draws one value: uniform over a list, uniform on a linear range, or
    /// log-uniform on a log range.
    fn draw(&self, rng: &mut impl Rng) -> ParamValue {
        match self {
            Axis::Discrete(d) => d.values[rng.random_range(0..d.values.len())].clone(),
            Axis::Continuous(c) => {
                let u: f64 = rng.random();
                ParamValue::Float(match c.scale {
                    Scale::Linear => c.low + u * (c.high - c.low),
                    Scale::Log => {
                        let (a, b) = (c.low.ln(), c.high.ln());
                        (a + u * (b - a)).exp()
                    }
                })
            }
        }
    }
}

/// Search domain for one algorithm; axes are kept ordered by name.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpace {
    base: ModelParams,
    axes: BTreeMap<String, Axis>,
}

impl ParamSpace {
    /// `base` supplies the algorithm and every parameter not searched.
    pub fn new(base: ModelParams, axes: BTreeMap<String, Axis>) -> Result<Self, TuneError> {
        let space = ParamSpace { base, axes };
        for (name, axis) in &space.axes {
            axis.validate(name)?;
            if name == "seed" || name == "algorithm" {
                return Err(TuneError::InvalidAxis {
                    name: name.clone(),
                    reason: "cannot be searched".into(),
                });
            }
            let probe = match axis {
                Axis::Discrete(d) => d.values[0].clone(),
                Axis::Continuous(c) => ParamValue::Float(c.low),
            };
            let mut fields = serde_json::to_value(&space.base).expect("params serialize");
            if fields.get(name).is_none() {
                return Err(TuneError::InvalidAxis {
                    name: name.clone(),
                    reason: format!("not a parameter of {}", space.algorithm().name()),
                });
            }
            set_field(&mut fields, name, &probe);
            serde_json::from_value::<ModelParams>(fields).map_err(|e| TuneError::InvalidAxis {
                name: name.clone(),
                reason: e.to_string(),
            })?;
        }
        Ok(space)
    }

    pub fn algorithm(&self) -> Algorithm {
        self.base.algorithm()
    }

    pub fn base(&self) -> &ModelParams {
        &self.base
    }

    pub fn axes(&self) -> &BTreeMap<String, Axis> {
        &self.axes
    }

    /// Applies an assignment to the base parameters.
    pub fn bind(&self, assignment: &BTreeMap<String, ParamValue>) -> Result<ModelParams, String> {
        let mut fields = serde_json::to_value(&self.base).expect("params serialize");
        for (name, value) in assignment {
            set_field(&mut fields, name, value);
        }
        serde_json::from_value(fields).map_err(|e| e.to_string())
    }

    /// Cartesian product in lexicographic axis order, the first axis
    /// varying slowest. Fails on continuous axes.
    pub fn grid(&self) -> Result<Vec<BTreeMap<String, ParamValue>>, TuneError> {
        let mut points = vec![BTreeMap::new()];
        for (name, axis) in &self.axes {
            let Axis::Discrete(d) = axis else {
                return Err(TuneError::ContinuousAxisInGrid(name.clone()));
            };
            points = points
                .into_iter()
                .flat_map(|p| {
                    d.values.iter().map(move |v| {
                        let mut next = p.clone();
                        next.insert(name.clone(), v.clone());
                        next
                    })
                })
                .collect();
        }
        Ok(points)
    }

    pub fn grid_size(&self) -> Result<usize, TuneError> {
        self.axes.iter().try_fold(1usize, |acc, (name, axis)| match axis {
            Axis::Discrete(d) => Ok(acc.saturating_mul(d.values.len())),
            Axis::Continuous(_) => Err(TuneError::ContinuousAxisInGrid(name.clone())),
        })
    }

    /// Random-search draw for trial `trial`. Every axis reads its own stream
    /// keyed by `(seed, trial, axis name)`.
    pub fn draw(&self, seed: u64, trial: usize) -> BTreeMap<String, ParamValue> {
        let trial_seed = rng::mix(seed, trial as u64);
        self.axes
            .iter()
            .map(|(name, axis)| {
                let mut rng = rng::seeded(rng::mix(trial_seed, rng::name_key(name)));
                (name.clone(), axis.draw(&mut rng))
            })
            .collect()
    }
}

/// Writes `value` into `fields[name]`, rounding floats into integer fields.
fn set_field(fields: &mut serde_json::Value, name: &str, value: &ParamValue) {
    let slot = &mut fields[name];
    let integral = slot.is_u64() || slot.is_i64();
    *slot = match value {
        ParamValue::Float(f) if integral && f.is_finite() => serde_json::Value::from(f.round() as i64),
        other => other.to_json(),
    };
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    #[default]
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Objective {
    pub metric: String,
    #[serde(default)]
    pub direction: Direction,
}

impl Objective {
    pub fn new(metric: &str, direction: Direction) -> Result<Self, TuneError> {
        let objective = Objective {
            metric: metric.to_owned(),
            direction,
        };
        objective.validate()?;
        Ok(objective)
    }

    pub fn validate(&self) -> Result<(), TuneError> {
        if METRIC_NAMES.contains(&self.metric.as_str()) {
            Ok(())
        } else {
            Err(TuneError::UnknownMetric(self.metric.clone()))
        }
    }

    fn better(&self, candidate: f64, incumbent: f64) -> bool {
        match self.direction {
            Direction::Minimize => candidate < incumbent,
            Direction::Maximize => candidate > incumbent,
        }
    }
}

/// One evaluated configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub trial_index: usize,
    pub params: BTreeMap<String, ParamValue>,
    pub objective_metric: String,
    /// `None` for failed trials.
    pub objective_value: Option<f64>,
    /// Why the trial failed, if it did.
    pub failure: Option<String>,
    /// Reported with run timings, not in the trial table.
    #[serde(skip)]
    pub wall_time_seconds: f64,
}

impl Trial {
    pub fn succeeded(&self) -> bool {
        self.failure.is_none()
    }
}

/// Index (into `trials`) of the best successful trial; ties go to the
/// lowest trial index.
pub fn select_best(trials: &[Trial], objective: &Objective) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (pos, t) in trials.iter().enumerate() {
        let Some(v) = t.objective_value.filter(|_| t.succeeded()) else {
            continue;
        };
        if best.is_none_or(|(_, b)| objective.better(v, b)) {
            best = Some((pos, v));
        }
    }
    best.map(|(pos, _)| pos)
}

/// Data and settings shared by every trial.
#[derive(Debug, Clone)]
pub struct SearchContext<'a> {
    pub train: &'a InteractionSet,
    pub validation: &'a InteractionSet,
    pub objective: Objective,
    pub eval: EvalOptions,
    /// Item ids counted in the coverage denominator besides the validation
    /// and recommended items.
    pub catalog: Vec<&'a str>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub trials: Vec<Trial>,
    /// Position of the best trial in `trials`; `None` when every trial failed.
    pub best: Option<usize>,
}

impl SearchResult {
    pub fn best_trial(&self) -> Option<&Trial> {
        self.best.map(|b| &self.trials[b])
    }

    /// One JSON object per line.
    pub fn trials_jsonl(&self) -> String {
        self.trials
            .iter()
            .map(|t| serde_json::to_string(t).expect("trial serializes") + "\n")
            .collect()
    }
}

fn run_trial(space: &ParamSpace, ctx: &SearchContext<'_>, index: usize, assignment: BTreeMap<String, ParamValue>) -> Trial {
    let started = Instant::now();
    let outcome = (|| -> Result<f64, String> {
        let mut params = space.bind(&assignment)?;
        params.set_seed(rng::mix(ctx.seed, index as u64));
        let model = models::fit(ctx.train, &params).map_err(|e| e.to_string())?;
        let scored = protocol::score_model(&model, ctx.validation, &ctx.eval);
        let report = protocol::evaluate(
            ctx.validation,
            Some(&scored.predictions),
            Some(&scored.recommendations),
            &ctx.eval,
            &ctx.catalog,
        )
        .map_err(|e| e.to_string())?;
        report
            .get(&ctx.objective.metric)
            .ok_or_else(|| format!("{} is undefined on the validation data", ctx.objective.metric))
    })();
    let (objective_value, failure) = match outcome {
        Ok(v) => (Some(v), None),
        Err(e) => {
            log::warn!("trial {index} failed: {e}");
            (None, Some(e))
        }
    };
    Trial {
        trial_index: index,
        params: assignment,
        objective_metric: ctx.objective.metric.clone(),
        objective_value,
        failure,
        wall_time_seconds: started.elapsed().as_secs_f64(),
    }
}

fn run_all(space: &ParamSpace, ctx: &SearchContext<'_>, assignments: Vec<BTreeMap<String, ParamValue>>) -> SearchResult {
    let trials: Vec<Trial> = assignments
        .into_par_iter()
        .enumerate()
        .map(|(index, a)| run_trial(space, ctx, index, a))
        .collect();
    let best = select_best(&trials, &ctx.objective);
    SearchResult { trials, best }
}

/// Evaluates every grid point, refusing grids larger than `max_trials`.
pub fn grid_search(space: &ParamSpace, ctx: &SearchContext<'_>, max_trials: usize) -> Result<SearchResult, TuneError> {
    ctx.objective.validate()?;
    let size = space.grid_size()?;
    if size > max_trials {
        return Err(TuneError::BudgetExceeded { size, cap: max_trials });
    }
    Ok(run_all(space, ctx, space.grid()?))
}

/// Evaluates `budget` independent draws from `space`.
pub fn random_search(space: &ParamSpace, ctx: &SearchContext<'_>, budget: usize) -> Result<SearchResult, TuneError> {
    ctx.objective.validate()?;
    if budget < 1 {
        return Err(TuneError::InvalidBudget);
    }
    let assignments = (0..budget).map(|t| space.draw(ctx.seed, t)).collect();
    Ok(run_all(space, ctx, assignments))
}
