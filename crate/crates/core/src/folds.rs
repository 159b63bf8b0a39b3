use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// Random partition of `0..n` into `k` folds whose sizes differ by at most one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    k: usize,
    fold: Vec<usize>,
    seed: u64,
}

pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::Config(format!("need at least two folds, got {k}")));
    }
    if n < k {
        return Err(Error::Precondition(format!("cannot split {n} units into {k} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from_seed(seed));
    let mut fold = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos % k;
    }
    Ok(FoldAssignment { k, fold, seed })
}

impl FoldAssignment {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.fold.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn fold_of(&self, i: usize) -> usize {
        self.fold[i]
    }

    pub fn assignment(&self) -> &[usize] {
        &self.fold
    }

    /// Units in fold `f`, ascending.
    pub fn members(&self, f: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.fold[i] == f).collect()
    }

    /// Units outside fold `f`, ascending.
    pub fn complement(&self, f: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.fold[i] != f).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &f in &self.fold {
            s[f] += 1;
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ten_into_five() {
        let f = make_folds(10, 5, 1).unwrap();
        assert_eq!(f.sizes(), vec![2; 5]);
    }

    #[test]
    fn ihdp_sized_split() {
        let mut s = make_folds(747, 5, 3).unwrap().sizes();
        s.sort_unstable();
        assert_eq!(s, vec![149, 149, 149, 150, 150]);
    }

    #[test]
    fn deterministic_and_validated() {
        assert_eq!(make_folds(50, 5, 7).unwrap(), make_folds(50, 5, 7).unwrap());
        assert_ne!(make_folds(50, 5, 7).unwrap(), make_folds(50, 5, 8).unwrap());
        assert!(make_folds(3, 5, 0).is_err());
        assert!(make_folds(10, 1, 0).is_err());
    }

    proptest! {
        #[test]
        fn partition_is_balanced(n in 2usize..400, k in 2usize..12, seed in any::<u64>()) {
            prop_assume!(n >= k);
            let f = make_folds(n, k, seed).unwrap();
            let s = f.sizes();
            prop_assert_eq!(s.iter().sum::<usize>(), n);
            prop_assert!(s.iter().max().unwrap() - s.iter().min().unwrap() <= 1);
            for j in 0..k {
                let (m, c) = (f.members(j), f.complement(j));
                prop_assert_eq!(m.len() + c.len(), n);
                prop_assert!(m.iter().all(|i| !c.contains(i)));
            }
        }
    }
}
