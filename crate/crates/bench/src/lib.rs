//! Shared fixtures for the criterion benches.

use recokit::{generate_synthetic, InteractionSet, SplitMethod, SplitSpec, SyntheticSpec};

/// Planted low-rank ratings of the given shape.
pub fn planted(n_users: usize, n_items: usize, seed: u64) -> InteractionSet {
    let spec = SyntheticSpec {
        n_users,
        n_items,
        seed,
        ..SyntheticSpec::default()
    };
    generate_synthetic(&spec).expect("valid spec").set
}

/// 80/20 stratified train/test parts of `set`.
pub fn train_test(set: &InteractionSet) -> (InteractionSet, InteractionSet) {
    let spec = SplitSpec::new(vec![0.8, 0.2], 1).expect("valid ratios");
    let mut parts = recokit::splitters::split(set, &spec, SplitMethod::Stratified)
        .expect("splittable")
        .parts;
    let test = parts.pop().unwrap();
    (parts.pop().unwrap(), test)
}
