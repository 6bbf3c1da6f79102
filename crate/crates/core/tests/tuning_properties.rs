use std::collections::BTreeMap;

use recokit::models::AlsParams;
use recokit::protocol::EvalOptions;
use recokit::splitters;
use recokit::tuning::{self, Axis, Direction, Objective, ParamValue, Scale, SearchContext, SearchResult};
use recokit::{generate_synthetic, InteractionSet, ModelParams, ParamSpace, SplitMethod, SplitSpec, SyntheticSpec};

fn planted_parts() -> (InteractionSet, InteractionSet) {
    let set = generate_synthetic(&SyntheticSpec { seed: 5, ..SyntheticSpec::default() }).unwrap().set;
    let mut parts = splitters::split(&set, &SplitSpec::new(vec![0.8, 0.2], 1).unwrap(), SplitMethod::Random)
        .unwrap()
        .parts;
    let validation = parts.pop().unwrap();
    (parts.pop().unwrap(), validation)
}

fn ints(values: &[i64]) -> Axis {
    Axis::discrete(values.iter().map(|&v| ParamValue::Int(v)).collect())
}

fn floats(values: &[f64]) -> Axis {
    Axis::discrete(values.iter().map(|&v| ParamValue::Float(v)).collect())
}

fn als_space(axes: Vec<(&str, Axis)>) -> ParamSpace {
    ParamSpace::new(
        ModelParams::Als(AlsParams::default()),
        axes.into_iter().map(|(n, a)| (n.to_owned(), a)).collect(),
    )
    .unwrap()
}

fn ctx<'a>(train: &'a InteractionSet, validation: &'a InteractionSet, objective: Objective) -> SearchContext<'a> {
    SearchContext {
        train,
        validation,
        objective,
        eval: EvalOptions::default(),
        catalog: Vec::new(),
        seed: 17,
    }
}

fn rescan(result: &SearchResult, direction: Direction) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (pos, t) in result.trials.iter().enumerate() {
        if let Some(v) = t.objective_value {
            let better = match (best, direction) {
                (None, _) => true,
                (Some((_, b)), Direction::Minimize) => v < b,
                (Some((_, b)), Direction::Maximize) => v > b,
            };
            if better {
                best = Some((pos, v));
            }
        }
    }
    best.map(|b| b.0)
}

#[test]
fn grid_best_matches_rescan_and_planted_rank() {
    let (train, validation) = planted_parts();
    let space = als_space(vec![("factors", ints(&[1, 2, 3, 4])), ("iterations", ints(&[20]))]);
    let rmse = Objective::new("rmse", Direction::Minimize).unwrap();
    let result = tuning::grid_search(&space, &ctx(&train, &validation, rmse), 100).unwrap();
    assert_eq!(result.trials.len(), 4);
    assert_eq!(result.best, rescan(&result, Direction::Minimize));
    assert_eq!(result.best_trial().unwrap().params["factors"], ParamValue::Int(3));

    let ndcg = Objective::new("ndcg_at_k", Direction::Maximize).unwrap();
    let result = tuning::grid_search(&space, &ctx(&train, &validation, ndcg), 100).unwrap();
    assert_eq!(result.best, rescan(&result, Direction::Maximize));
}

#[test]
fn single_point_grid_is_its_own_best() {
    let (train, validation) = planted_parts();
    let space = als_space(vec![("factors", ints(&[2]))]);
    let objective = Objective::new("mae", Direction::Minimize).unwrap();
    let result = tuning::grid_search(&space, &ctx(&train, &validation, objective), 1).unwrap();
    assert_eq!(result.trials.len(), 1);
    assert_eq!(result.best, Some(0));
}

#[test]
fn grid_refuses_budget_overrun_and_continuous_axes() {
    let (train, validation) = planted_parts();
    let objective = Objective::new("rmse", Direction::Minimize).unwrap();
    let c = ctx(&train, &validation, objective);
    let big = als_space(vec![("factors", ints(&[1, 2, 3])), ("regularization", floats(&[0.1, 0.2]))]);
    assert_eq!(
        tuning::grid_search(&big, &c, 5).unwrap_err(),
        tuning::TuneError::BudgetExceeded { size: 6, cap: 5 }
    );
    let cont = als_space(vec![("regularization", Axis::continuous(0.01, 1.0, Scale::Log))]);
    assert!(matches!(tuning::grid_search(&cont, &c, 5), Err(tuning::TuneError::ContinuousAxisInGrid(_))));
    assert_eq!(tuning::random_search(&cont, &c, 0).unwrap_err(), tuning::TuneError::InvalidBudget);
}

#[test]
fn random_search_is_reproducible_and_thread_independent() {
    let (train, validation) = planted_parts();
    let space = als_space(vec![
        ("factors", ints(&[2, 3, 4])),
        ("regularization", Axis::continuous(0.01, 1.0, Scale::Log)),
        ("iterations", ints(&[5])),
    ]);
    let objective = Objective::new("rmse", Direction::Minimize).unwrap();
    let c = ctx(&train, &validation, objective);
    let a = tuning::random_search(&space, &c, 6).unwrap();
    let b = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| tuning::random_search(&space, &c, 6).unwrap());
    assert_eq!(a.trials_jsonl(), b.trials_jsonl());
    assert_eq!(a.best, b.best);
    assert_eq!(a.best, rescan(&a, Direction::Minimize));
    // a longer run repeats the shorter one as its prefix
    let longer = tuning::random_search(&space, &c, 8).unwrap();
    assert_eq!(&longer.trials_jsonl()[..a.trials_jsonl().len()], a.trials_jsonl());
}

#[test]
fn forced_configuration_with_budget_one() {
    let (train, validation) = planted_parts();
    let space = als_space(vec![("factors", ints(&[2])), ("regularization", floats(&[0.3]))]);
    let objective = Objective::new("rmse", Direction::Minimize).unwrap();
    let result = tuning::random_search(&space, &ctx(&train, &validation, objective), 1).unwrap();
    let expected: BTreeMap<String, ParamValue> =
        [("factors".to_string(), ParamValue::Int(2)), ("regularization".to_string(), ParamValue::Float(0.3))]
            .into_iter()
            .collect();
    assert_eq!(result.trials[0].params, expected);
    assert_eq!(result.best, Some(0));
}

#[test]
fn log_scale_draws_are_log_uniform() {
    let space = als_space(vec![("regularization", Axis::continuous(1e-4, 1e-1, Scale::Log))]);
    let draws: Vec<f64> = (0..10_000)
        .map(|t| match space.draw(9, t)["regularization"] {
            ParamValue::Float(v) => v,
            ref other => panic!("{other:?}"),
        })
        .collect();
    assert!(draws.iter().all(|&v| (1e-4..=1e-1).contains(&v)));
    let below = draws.iter().filter(|&&v| v < 1e-3).count() as f64 / draws.len() as f64;
    assert!((below - 1.0 / 3.0).abs() <= 0.02, "fraction below 1e-3: {below}");
}

#[test]
fn adding_axes_leaves_existing_draws_alone() {
    let one = als_space(vec![("regularization", Axis::continuous(1e-4, 1e-1, Scale::Log))]);
    let two = als_space(vec![
        ("regularization", Axis::continuous(1e-4, 1e-1, Scale::Log)),
        ("factors", ints(&[1, 2, 3, 4, 5])),
        ("init_sigma", Axis::continuous(0.01, 0.5, Scale::Linear)),
    ]);
    for t in 0..100 {
        assert_eq!(one.draw(4, t)["regularization"], two.draw(4, t)["regularization"]);
    }
}

#[test]
fn diverging_trials_are_recorded_and_skipped() {
    let (train, validation) = planted_parts();
    let space = ParamSpace::new(
        ModelParams::SgdMf(recokit::models::SgdMfParams { factors: 3, epochs: 5, ..Default::default() }),
        [("learning_rate".to_string(), floats(&[0.01, 100.0]))].into_iter().collect(),
    )
    .unwrap();
    let objective = Objective::new("rmse", Direction::Minimize).unwrap();
    let result = tuning::grid_search(&space, &ctx(&train, &validation, objective), 10).unwrap();
    assert!(result.trials[0].succeeded());
    assert!(!result.trials[1].succeeded());
    assert_eq!(result.trials[1].objective_value, None);
    assert_eq!(result.best, Some(0));
}
