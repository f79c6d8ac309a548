//! Warm and cold evaluation splits.

use crate::dataset::{InteractionTable, SplitMode, SplitSpec, SplitTag};
use crate::error::{Error, Result};
use crate::rng::derive_rng;
use rand::seq::SliceRandom;

/// Per-user random partition by the configured ratios. Valid and test
/// counts are floored, the remainder goes to train; users with fewer
/// than 3 interactions fall entirely into train (counted in the
/// returned short-user total).
pub fn make_warm_split(table: &InteractionTable, spec: &SplitSpec) -> Result<(InteractionTable, usize)> {
    spec.validate()?;
    if spec.mode != SplitMode::Warm {
        return Err(Error::Config("make_warm_split requires mode=warm".into()));
    }
    let mut rng = derive_rng(spec.seed, "warm-split");
    let mut out = table.clone();

    let mut per_user: Vec<Vec<usize>> = vec![Vec::new(); table.n_users];
    for (k, it) in table.interactions.iter().enumerate() {
        per_user[it.user].push(k);
    }

    let mut short_users = 0usize;
    for indices in per_user.iter_mut() {
        let n = indices.len();
        if n == 0 {
            continue;
        }
        if n < 3 {
            short_users += 1;
            for &k in indices.iter() {
                out.interactions[k].tag = SplitTag::Train;
            }
            continue;
        }
        indices.shuffle(&mut rng);
        let n_valid = (n as f64 * spec.valid_ratio).floor() as usize;
        let n_test = (n as f64 * spec.test_ratio).floor() as usize;
        let n_train = n - n_valid - n_test;
        for (pos, &k) in indices.iter().enumerate() {
            out.interactions[k].tag = if pos < n_train {
                SplitTag::Train
            } else if pos < n_train + n_valid {
                SplitTag::Valid
            } else {
                SplitTag::Test
            };
        }
    }
    Ok((out, short_users))
}

/// Removes a random fraction of items from training entirely: half of
/// the selected items' interactions become validation, half test.
/// Returns the retagged table and the sorted cold item indices.
pub fn make_cold_split(
    table: &InteractionTable,
    spec: &SplitSpec,
) -> Result<(InteractionTable, Vec<usize>)> {
    spec.validate()?;
    if spec.mode != SplitMode::Cold {
        return Err(Error::Config("make_cold_split requires mode=cold".into()));
    }
    let n_cold = (table.n_items as f64 * spec.cold_fraction).floor() as usize;
    if n_cold == 0 {
        return Err(Error::Config(format!(
            "cold fraction {} selects zero of {} items",
            spec.cold_fraction, table.n_items
        )));
    }
    let mut rng = derive_rng(spec.seed, "cold-split");
    let mut items: Vec<usize> = (0..table.n_items).collect();
    items.shuffle(&mut rng);
    let mut cold: Vec<usize> = items[..n_cold].to_vec();
    cold.sort_unstable();

    let n_valid_items = n_cold / 2;
    let valid_items: std::collections::HashSet<usize> =
        items[..n_valid_items].iter().copied().collect();
    let cold_set: std::collections::HashSet<usize> = cold.iter().copied().collect();

    let mut out = table.clone();
    for it in &mut out.interactions {
        it.tag = if !cold_set.contains(&it.item) {
            SplitTag::Train
        } else if valid_items.contains(&it.item) {
            SplitTag::Valid
        } else {
            SplitTag::Test
        };
    }
    Ok((out, cold))
}
