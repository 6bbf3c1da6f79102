#![allow(dead_code)]

use std::collections::{BTreeMap, HashSet};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use recokit::splitters::{self, allocate, allocate_covering};
use recokit::{GroupBy, Interaction, InteractionSet, SplitMethod, SplitSpec};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random interactions whose rating is the input position, so every row is
/// distinct and its original position can be read back from any part.
/// Timestamps come from a small range to force ties.
pub fn positional_set(rng: &mut impl Rng, n: usize, n_users: usize, n_items: usize) -> InteractionSet {
    let rows = (0..n)
        .map(|p| {
            Interaction::new(
                format!("u{}", rng.random_range(0..n_users)),
                format!("i{}", rng.random_range(0..n_items)),
                p as f64,
                rng.random_range(0..50u64),
            )
        })
        .collect();
    InteractionSet::from_interactions(rows).unwrap()
}

pub fn random_ratios(rng: &mut impl Rng) -> Vec<f64> {
    let parts = rng.random_range(2..=3usize);
    let raw: Vec<f64> = (0..parts).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut ratios: Vec<f64> = raw.iter().map(|r| r / total).collect();
    // absorb rounding so the sum is within the accepted tolerance
    let rest: f64 = ratios[1..].iter().sum();
    ratios[0] = 1.0 - rest;
    ratios
}

fn position(x: &Interaction) -> usize {
    x.rating as usize
}

fn group_key(x: &Interaction, by: GroupBy) -> &str {
    match by {
        GroupBy::User => &x.user,
        GroupBy::Item => &x.item,
    }
}

/// Every documented splitter invariant for one `(set, spec, method)`.
pub fn check_split(set: &InteractionSet, spec: &SplitSpec, method: SplitMethod) -> Result<(), String> {
    let split = splitters::split(set, spec, method).map_err(|e| e.to_string())?;
    let again = splitters::split(set, spec, method).map_err(|e| e.to_string())?;
    if split != again {
        return Err("not deterministic".into());
    }
    if split.parts.len() != spec.n_parts() {
        return Err("wrong number of parts".into());
    }
    for part in &split.parts {
        if !part.shares_indices_with(set) {
            return Err("part does not share the parent index".into());
        }
    }

    // partition: every position exactly once
    let mut seen = vec![0usize; set.len()];
    for part in &split.parts {
        for x in part.interactions() {
            seen[position(x)] += 1;
        }
    }
    if seen.iter().any(|&c| c != 1) {
        return Err("parts are not a partition of the input".into());
    }

    let n = set.len() as f64;
    match method {
        SplitMethod::Random => {
            for (part, r) in split.parts.iter().zip(spec.ratios()) {
                if (part.len() as f64 - r * n).abs() >= 1.0 {
                    return Err(format!("part size {} vs quota {}", part.len(), r * n));
                }
            }
        }
        SplitMethod::Chrono | SplitMethod::Stratified => {
            // per group: (timestamp, position) of each part's members
            let mut groups: BTreeMap<&str, Vec<Vec<(u64, usize)>>> = BTreeMap::new();
            for (k, part) in split.parts.iter().enumerate() {
                for x in part.interactions() {
                    groups.entry(group_key(x, spec.group_by)).or_insert_with(|| vec![Vec::new(); spec.n_parts()])[k]
                        .push((x.timestamp, position(x)));
                }
            }
            let min_size = match method {
                SplitMethod::Chrono => spec.n_parts(),
                _ => spec.n_parts().max(spec.min_interactions),
            };
            let mut all_large = true;
            for (g, parts) in &groups {
                let size: usize = parts.iter().map(Vec::len).sum();
                let sizes: Vec<usize> = parts.iter().map(Vec::len).collect();
                if size < min_size {
                    all_large = false;
                    if sizes[0] != size {
                        return Err(format!("small group {g} not wholly in part 0"));
                    }
                    continue;
                }
                let plain = allocate(size, spec.ratios());
                let expected = match method {
                    SplitMethod::Chrono => plain.clone(),
                    _ => allocate_covering(size, spec.ratios()),
                };
                if sizes != expected {
                    return Err(format!("group {g} sizes {sizes:?}, expected {expected:?}"));
                }
                if expected == plain {
                    for (s, r) in sizes.iter().zip(spec.ratios()) {
                        if (*s as f64 - r * size as f64).abs() >= 1.0 {
                            return Err(format!("group {g} part size {s} vs quota {}", r * size as f64));
                        }
                    }
                }
                if method == SplitMethod::Chrono {
                    for w in parts.windows(2) {
                        let (Some(a), Some(b)) = (w[0].iter().max(), w[1].iter().min()) else { continue };
                        if a > b {
                            return Err(format!("group {g}: key {a:?} precedes {b:?} across parts"));
                        }
                    }
                } else if sizes.contains(&0) {
                    return Err(format!("group {g} missing from a part"));
                }
            }
            if method == SplitMethod::Stratified && all_large {
                let sets: Vec<HashSet<&str>> = split
                    .parts
                    .iter()
                    .map(|p| p.interactions().iter().map(|x| group_key(x, spec.group_by)).collect())
                    .collect();
                if sets.windows(2).any(|w| w[0] != w[1]) {
                    return Err("group sets differ across parts".into());
                }
            }
        }
    }
    Ok(())
}

/// A random ranking instance: per user a recommendation list (distinct
/// items) and a relevant set.
pub struct RankingCase {
    pub n_items: usize,
    pub k: usize,
    pub users: Vec<(Vec<usize>, Vec<usize>)>,
}

pub fn ranking_case(rng: &mut impl Rng) -> RankingCase {
    let n_users = rng.random_range(1..=10usize);
    let n_items = rng.random_range(1..=20usize);
    let k = rng.random_range(1..=10usize);
    let users = (0..n_users)
        .map(|_| {
            let mut pool: Vec<usize> = (0..n_items).collect();
            for i in (1..pool.len()).rev() {
                pool.swap(i, rng.random_range(0..=i));
            }
            let len = rng.random_range(0..=n_items.min(k + 3));
            let recs = pool[..len].to_vec();
            let rel: Vec<usize> = (0..n_items).filter(|_| rng.random_bool(0.3)).collect();
            (recs, rel)
        })
        .collect();
    RankingCase { n_items, k, users }
}

/// Brute-force `(precision, recall, ndcg, map, coverage)`; `None` when no
/// user has a relevant item.
pub fn ranking_oracle(case: &RankingCase) -> Option<[f64; 5]> {
    let k = case.k;
    let mut sums = [0.0; 4];
    let mut users = 0usize;
    let mut covered: Vec<usize> = Vec::new();
    for (recs, rel) in &case.users {
        if rel.is_empty() {
            continue;
        }
        users += 1;
        let top: Vec<usize> = recs.iter().take(k).copied().collect();
        for &i in &top {
            if !covered.contains(&i) {
                covered.push(i);
            }
        }
        let hit = |i: &usize| rel.contains(i);
        let hits = top.iter().filter(|i| hit(i)).count() as f64;
        sums[0] += hits / k as f64;
        sums[1] += hits / rel.len() as f64;
        let mut dcg = 0.0;
        for (j, i) in top.iter().enumerate() {
            if hit(i) {
                dcg += 1.0 / (j as f64 + 2.0).log2();
            }
        }
        let ideal = rel.len().min(k);
        let mut idcg = 0.0;
        for j in 0..ideal {
            idcg += 1.0 / (j as f64 + 2.0).log2();
        }
        sums[2] += dcg / idcg;
        let mut ap = 0.0;
        for j in 0..top.len() {
            if hit(&top[j]) {
                let hits_so_far = top[..=j].iter().filter(|i| hit(i)).count() as f64;
                ap += hits_so_far / (j + 1) as f64;
            }
        }
        sums[3] += ap / ideal as f64;
    }
    if users == 0 {
        return None;
    }
    let u = users as f64;
    Some([
        sums[0] / u,
        sums[1] / u,
        sums[2] / u,
        sums[3] / u,
        covered.len() as f64 / case.n_items as f64,
    ])
}

/// Brute-force `(rmse, mae, r_squared, explained_variance)`.
pub fn rating_oracle(truth: &[f64], pred: &[f64]) -> (f64, f64, Option<f64>, Option<f64>) {
    let n = truth.len() as f64;
    let mut sse = 0.0;
    let mut sae = 0.0;
    for i in 0..truth.len() {
        sse += (truth[i] - pred[i]).powi(2);
        sae += (truth[i] - pred[i]).abs();
    }
    let mean_t = truth.iter().sum::<f64>() / n;
    let sst: f64 = truth.iter().map(|t| (t - mean_t).powi(2)).sum();
    let residuals: Vec<f64> = truth.iter().zip(pred).map(|(t, p)| t - p).collect();
    let mean_r = residuals.iter().sum::<f64>() / n;
    let var_r = residuals.iter().map(|r| (r - mean_r).powi(2)).sum::<f64>() / n;
    let var_t = sst / n;
    let defined = truth.len() >= 2 && truth.iter().any(|&t| t != truth[0]);
    (
        (sse / n).sqrt(),
        sae / n,
        defined.then(|| 1.0 - sse / sst),
        defined.then(|| 1.0 - var_r / var_t),
    )
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + b.abs())
}
