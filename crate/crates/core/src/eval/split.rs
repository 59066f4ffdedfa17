//! Stratified train/validation/test assignment.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::EvalError;
use crate::model::{Class, LabelSet, Masks};

pub const DEFAULT_RATIOS: [f64; 3] = [0.6, 0.2, 0.2];

/// Splits `total` items into three integer shares proportional to `ratios`:
/// floors first, then the leftover units go to the largest fractional parts
/// (earlier share first on ties).
pub fn largest_remainder(total: usize, ratios: [f64; 3]) -> [usize; 3] {
    let exact = ratios.map(|r| total as f64 * r);
    let mut counts = exact.map(|x| (x + 1e-9).floor() as usize);
    let assigned: usize = counts.iter().sum();
    let mut order = [0usize, 1, 2];
    let frac = |k: usize| exact[k] - counts[k] as f64;
    order.sort_by(|&a, &b| frac(b).total_cmp(&frac(a)).then(a.cmp(&b)));
    for &k in order.iter().take(total.saturating_sub(assigned)) {
        counts[k] += 1;
    }
    counts
}

fn check_ratios(ratios: [f64; 3]) -> Result<(), EvalError> {
    let sum: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(EvalError::Ratios(ratios));
    }
    Ok(())
}

/// Shuffles each class with its own seeded stream and cuts it into
/// train/val/test by [`largest_remainder`]. Mask entries are sorted.
pub fn split_labels(labels: &LabelSet, ratios: [f64; 3], seed: u64) -> Result<Masks, EvalError> {
    check_ratios(ratios)?;
    let mut masks = Masks::default();
    for class in [Class::Normal, Class::Ponzi] {
        let mut members = labels.members(class);
        if members.len() < 3 {
            return Err(EvalError::TooFewMembers {
                class: class as u8,
                count: members.len(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(class as u64);
        members.shuffle(&mut rng);
        let [tr, va, _] = largest_remainder(members.len(), ratios);
        masks.train.extend_from_slice(&members[..tr]);
        masks.val.extend_from_slice(&members[tr..tr + va]);
        masks.test.extend_from_slice(&members[tr + va..]);
    }
    masks.train.sort_unstable();
    masks.val.sort_unstable();
    masks.test.sort_unstable();
    Ok(masks)
}
