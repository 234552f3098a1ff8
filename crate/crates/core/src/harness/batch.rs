use rand::seq::index::sample;
use rand::Rng;

use super::config::ReplaySampling;
use crate::selection::UsageCounts;
use crate::stream::Example;

/// Replay probabilities `p_i ∝ 1 / c_i`. Zero counts are treated as one.
pub fn count_inverse_weights(counts: &[u64]) -> Vec<f64> {
    let w: Vec<f64> = counts.iter().map(|&c| 1.0 / c.max(1) as f64).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// `n` uniform draws from `pool`, without replacement when the pool is big
/// enough and with replacement otherwise.
pub fn sample_uniform<'a, R: Rng + ?Sized>(pool: &[&'a Example], n: usize, rng: &mut R) -> Vec<&'a Example> {
    if pool.is_empty() || n == 0 {
        return Vec::new();
    }
    if pool.len() >= n {
        sample(rng, pool.len(), n).into_iter().map(|i| pool[i]).collect()
    } else {
        (0..n).map(|_| pool[rng.random_range(0..pool.len())]).collect()
    }
}

/// Sequential weighted draws without replacement, renormalising after each
/// pick. Once every item is taken the remaining draws reuse the original
/// weights with replacement.
pub fn sample_weighted<R: Rng + ?Sized>(weights: &[f64], n: usize, rng: &mut R) -> Vec<usize> {
    let mut live = weights.to_vec();
    let mut with_replacement = false;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut total: f64 = live.iter().sum();
        if total <= 0.0 {
            live.copy_from_slice(weights);
            with_replacement = true;
            total = live.iter().sum();
        }
        if total <= 0.0 {
            break;
        }
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        // fallback guards against rounding pushing target past the last bucket
        let mut pick = live.iter().rposition(|&w| w > 0.0).unwrap();
        for (i, &w) in live.iter().enumerate() {
            acc += w;
            if w > 0.0 && target < acc {
                pick = i;
                break;
            }
        }
        out.push(pick);
        if !with_replacement {
            live[pick] = 0.0;
        }
    }
    out
}

/// A selection-phase batch: the newly accepted examples plus `b − |new|`
/// replayed examples of `selected`. Every member's usage count is bumped.
pub fn form_batch<'a, R: Rng + ?Sized>(
    new: &[&'a Example],
    selected: &[&'a Example],
    replay: ReplaySampling,
    batch_size: usize,
    usage: &mut UsageCounts,
    rng: &mut R,
) -> Vec<&'a Example> {
    let replay_n = batch_size.saturating_sub(new.len());
    let mut batch: Vec<&Example> = new.to_vec();
    match replay {
        ReplaySampling::Uniform => batch.extend(sample_uniform(selected, replay_n, rng)),
        ReplaySampling::CountInverse => {
            let counts: Vec<u64> = selected.iter().map(|e| usage.get(e.id)).collect();
            let weights = count_inverse_weights(&counts);
            batch.extend(sample_weighted(&weights, replay_n, rng).into_iter().map(|i| selected[i]));
        }
    }
    for e in &batch {
        usage.increment(e.id);
    }
    batch
}
