use std::collections::HashMap;
use std::rc::Rc;

use crate::error::Result;

/// Recurrent states memoized by label prefix.
///
/// With the cache disabled every request recomputes (and counts as a miss),
/// which must not change any decoding result.
#[derive(Debug)]
pub struct StateCache<V> {
    enabled: bool,
    map: HashMap<Vec<usize>, Rc<V>>,
    hits: u64,
    misses: u64,
}

impl<V> StateCache<V> {
    pub fn new(enabled: bool) -> Self {
        Self {
            enabled,
            map: HashMap::new(),
            hits: 0,
            misses: 0,
        }
    }

    /// Returns the state for `prefix`, computing it on a miss. The flag is
    /// true on a hit.
    pub fn get_or_compute(&mut self, prefix: &[usize], compute: impl FnOnce() -> Result<V>) -> Result<(Rc<V>, bool)> {
        if self.enabled {
            if let Some(v) = self.map.get(prefix) {
                self.hits += 1;
                return Ok((Rc::clone(v), true));
            }
        }
        self.misses += 1;
        let v = Rc::new(compute()?);
        if self.enabled {
            self.map.insert(prefix.to_vec(), Rc::clone(&v));
        }
        Ok((v, false))
    }

    pub fn hits(&self) -> u64 {
        self.hits
    }

    pub fn misses(&self) -> u64 {
        self.misses
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shared_prefix_hits_once() {
        let mut c = StateCache::new(true);
        let mut calls = 0;
        for _ in 0..2 {
            c.get_or_compute(&[3, 4], || {
                calls += 1;
                Ok(7)
            })
            .unwrap();
        }
        assert_eq!((c.misses(), c.hits(), calls), (1, 1, 1));
    }

    #[test]
    fn disabled_cache_recomputes() {
        let mut c = StateCache::new(false);
        for _ in 0..2 {
            let (v, hit) = c.get_or_compute(&[1], || Ok(1)).unwrap();
            assert_eq!((*v, hit), (1, false));
        }
        assert_eq!((c.misses(), c.hits(), c.len()), (2, 0, 0));
    }
}
