use std::collections::HashMap;

use rand::seq::index;
use rand::Rng;

use super::{Dataset, Example};

/// Outcome of a draw from the unselected part of the pool.
#[derive(Debug, PartialEq)]
pub enum Draw<'a> {
    Example(&'a Example),
    Exhausted,
}

/// Uniform sampling over `pool \ excluded`.
///
/// Keeps the available indices in a dense vector plus a position map, so
/// draws and exclusions are O(1) regardless of how much has been excluded.
#[derive(Debug, Clone)]
pub struct PoolSource<'a> {
    pool: &'a Dataset,
    available: Vec<usize>,
    position: Vec<Option<usize>>,
    by_id: HashMap<u64, usize>,
}

impl<'a> PoolSource<'a> {
    pub fn new(pool: &'a Dataset) -> Self {
        let n = pool.len();
        PoolSource {
            pool,
            available: (0..n).collect(),
            position: (0..n).map(Some).collect(),
            by_id: pool.examples.iter().enumerate().map(|(i, e)| (e.id, i)).collect(),
        }
    }

    pub fn total_size(&self) -> usize {
        self.pool.len()
    }

    pub fn remaining(&self) -> usize {
        self.available.len()
    }

    pub fn is_excluded(&self, id: u64) -> bool {
        self.by_id.get(&id).is_none_or(|&i| self.position[i].is_none())
    }

    pub fn get(&self, id: u64) -> Option<&'a Example> {
        self.by_id.get(&id).map(|&i| &self.pool.examples[i])
    }

    /// Removes `id` from future draws. Returns false if it was unknown or
    /// already excluded.
    pub fn exclude(&mut self, id: u64) -> bool {
        let Some(&idx) = self.by_id.get(&id) else { return false };
        let Some(pos) = self.position[idx].take() else { return false };
        let last = self.available.pop().expect("available is non-empty");
        if last != idx {
            self.available[pos] = last;
            self.position[last] = Some(pos);
        }
        true
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Draw<'a> {
        if self.available.is_empty() {
            return Draw::Exhausted;
        }
        let pos = rng.random_range(0..self.available.len());
        Draw::Example(&self.pool.examples[self.available[pos]])
    }

    /// Up to `count` distinct available examples, uniformly without
    /// replacement. Empty iff the source is exhausted.
    pub fn draw_many<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<&'a Example> {
        let amount = count.min(self.available.len());
        if amount == 0 {
            return Vec::new();
        }
        if amount == 1 {
            return match self.draw(rng) {
                Draw::Example(e) => vec![e],
                Draw::Exhausted => Vec::new(),
            };
        }
        index::sample(rng, self.available.len(), amount)
            .into_iter()
            .map(|pos| &self.pool.examples[self.available[pos]])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn pool(n: usize) -> Dataset {
        let examples =
            (0..n).map(|i| Example { id: 100 + i as u64, features: vec![0.0], label: 0, clean_label: None }).collect();
        Dataset::new(1, 1, examples).unwrap()
    }

    #[test]
    fn single_item_pool() {
        let ds = pool(1);
        let mut src = PoolSource::new(&ds);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(src.draw(&mut rng), Draw::Example(&ds.examples[0]));
        assert!(src.exclude(100));
        assert_eq!(src.draw(&mut rng), Draw::Exhausted);
        assert!(src.draw_many(4, &mut rng).is_empty());
        assert!(!src.exclude(100));
        assert!(!src.exclude(7));
    }

    #[test]
    fn full_pass_enumerates_every_id_once() {
        let ds = pool(200);
        let mut src = PoolSource::new(&ds);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut seen = HashSet::new();
        while let Draw::Example(e) = src.draw(&mut rng) {
            assert!(seen.insert(e.id));
            assert!(src.exclude(e.id));
        }
        assert_eq!(seen.len(), 200);
        assert_eq!(src.remaining(), 0);
    }

    #[test]
    fn never_returns_excluded() {
        let ds = pool(20);
        let mut src = PoolSource::new(&ds);
        for id in 100..115 {
            src.exclude(id);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..500 {
            let Draw::Example(e) = src.draw(&mut rng) else { panic!() };
            assert!(e.id >= 115);
            assert!(!src.is_excluded(e.id));
        }
        let many = src.draw_many(10, &mut rng);
        assert_eq!(many.len(), 5);
        let ids: HashSet<u64> = many.iter().map(|e| e.id).collect();
        assert_eq!(ids.len(), 5);
    }

    #[test]
    fn draws_are_uniform() {
        // 10k draws over 5 items: each count ~ Binomial(10000, 0.2), σ = 40.
        let ds = pool(5);
        let src = PoolSource::new(&ds);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut counts = [0usize; 5];
        for _ in 0..10_000 {
            let Draw::Example(e) = src.draw(&mut rng) else { panic!() };
            counts[(e.id - 100) as usize] += 1;
        }
        let sigma = (10_000.0f64 * 0.2 * 0.8).sqrt();
        for c in counts {
            assert!((c as f64 - 2000.0).abs() <= 3.0 * sigma, "{counts:?}");
        }
    }
}
