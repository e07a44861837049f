use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Subject ids split into `k` folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CvPlan {
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<Vec<String>>,
}

impl CvPlan {
    /// Ids outside fold `i`, in plan order.
    pub fn training_ids(&self, fold: usize) -> Vec<String> {
        self.folds
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != fold)
            .flat_map(|(_, f)| f.iter().cloned())
            .collect()
    }
}

/// Sort the ids, shuffle them with `seed` and cut the result into `k`
/// contiguous folds whose sizes differ by at most one.
pub fn make_cv_plan(ids: &[String], k: usize, seed: u64) -> Result<CvPlan> {
    if k == 0 || k > ids.len() {
        return Err(Error::InvalidParameter(format!(
            "cannot split {} ids into {k} folds",
            ids.len()
        )));
    }
    let mut sorted = ids.to_vec();
    sorted.sort();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidParameter("duplicate subject ids".into()));
    }
    sorted.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (sorted.len() / k, sorted.len() % k);
    let mut folds = Vec::with_capacity(k);
    let mut it = sorted.into_iter();
    for f in 0..k {
        let size = base + usize::from(f < extra);
        folds.push(it.by_ref().take(size).collect());
    }
    Ok(CvPlan { k, seed, folds })
}
