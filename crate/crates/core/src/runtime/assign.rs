use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::RuntimeError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AssignPolicy {
    /// Contiguous patch ids per worker rank.
    Block,
    /// Uniform draw per patch, then empty ranks are repaired.
    Random { seed: u64 },
}

/// Patch → rank map. Rank 0 owns the global model; ranks 1.. own patches.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RankAssignment {
    pub num_ranks: usize,
    pub policy: AssignPolicy,
    patch_rank: Vec<usize>,
}

impl RankAssignment {
    pub fn num_patches(&self) -> usize {
        self.patch_rank.len()
    }

    pub fn rank_of(&self, patch: usize) -> usize {
        self.patch_rank[patch]
    }

    pub fn patch_ranks(&self) -> &[usize] {
        &self.patch_rank
    }

    /// Patches owned by `rank`, ascending.
    pub fn owned(&self, rank: usize) -> Vec<usize> {
        (0..self.patch_rank.len()).filter(|&s| self.patch_rank[s] == rank).collect()
    }

    /// Patch count per rank, index 0 included (always 0).
    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.num_ranks];
        for &r in &self.patch_rank {
            c[r] += 1;
        }
        c
    }
}

pub fn assign_patches(num_patches: usize, num_ranks: usize, policy: AssignPolicy) -> Result<RankAssignment, RuntimeError> {
    if num_ranks < 2 {
        return Err(RuntimeError::Assignment(format!("need at least 2 ranks, got {num_ranks}")));
    }
    if num_patches == 0 {
        return Err(RuntimeError::Assignment("no patches to assign".into()));
    }
    let workers = num_ranks - 1;
    if workers > num_patches {
        return Err(RuntimeError::Assignment(format!(
            "{workers} worker ranks for {num_patches} patches would leave ranks idle"
        )));
    }
    let patch_rank = match policy {
        AssignPolicy::Block => {
            let base = num_patches / workers;
            let extra = num_patches % workers;
            let mut v = Vec::with_capacity(num_patches);
            for w in 0..workers {
                let n = base + usize::from(w < extra);
                v.extend(std::iter::repeat_n(w + 1, n));
            }
            v
        }
        AssignPolicy::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut v: Vec<usize> = (0..num_patches).map(|_| 1 + rng.gen_range(0..workers)).collect();
            repair_empty(&mut v, num_ranks);
            v
        }
    };
    Ok(RankAssignment {
        num_ranks,
        policy,
        patch_rank,
    })
}

/// Each empty rank takes the highest patch of the currently largest rank
/// (lowest rank on ties).
fn repair_empty(v: &mut [usize], num_ranks: usize) {
    loop {
        let mut counts = vec![0usize; num_ranks];
        for &r in v.iter() {
            counts[r] += 1;
        }
        let Some(empty) = (1..num_ranks).find(|&r| counts[r] == 0) else {
            return;
        };
        let largest = (1..num_ranks).fold(1, |best, r| if counts[r] > counts[best] { r } else { best });
        let victim = (0..v.len()).rev().find(|&s| v[s] == largest).expect("largest rank owns a patch");
        v[victim] = empty;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn block_examples() {
        let a = assign_patches(64, 65, AssignPolicy::Block).unwrap();
        assert!(a.counts()[1..].iter().all(|&c| c == 1));
        let a = assign_patches(64, 9, AssignPolicy::Block).unwrap();
        assert!(a.counts()[1..].iter().all(|&c| c == 8));
        assert_eq!(a.owned(2), (8..16).collect::<Vec<_>>());
    }

    #[test]
    fn random_is_deterministic_and_complete() {
        let a = assign_patches(128, 65, AssignPolicy::Random { seed: 1 }).unwrap();
        let b = assign_patches(128, 65, AssignPolicy::Random { seed: 1 }).unwrap();
        assert_eq!(a, b);
        assert!(a.counts()[1..].iter().all(|&c| c >= 1));
        let c = assign_patches(128, 65, AssignPolicy::Random { seed: 2 }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_requests() {
        assert!(assign_patches(8, 10, AssignPolicy::Block).is_err());
        assert!(assign_patches(8, 1, AssignPolicy::Block).is_err());
        assert!(assign_patches(0, 2, AssignPolicy::Block).is_err());
        assert!(assign_patches(8, 9, AssignPolicy::Block).is_ok());
    }

    proptest! {
        #[test]
        fn every_worker_owns_a_patch(p in 1usize..80, w in 1usize..80, seed in any::<u64>(), random in any::<bool>()) {
            prop_assume!(w <= p);
            let policy = if random { AssignPolicy::Random { seed } } else { AssignPolicy::Block };
            let a = assign_patches(p, w + 1, policy).unwrap();
            let counts = a.counts();
            prop_assert_eq!(counts[0], 0);
            prop_assert!(counts[1..].iter().all(|&c| c >= 1));
            prop_assert_eq!(counts.iter().sum::<usize>(), p);
            if !random {
                let (lo, hi) = (counts[1..].iter().min().unwrap(), counts[1..].iter().max().unwrap());
                prop_assert!(hi - lo <= 1);
                prop_assert!(a.patch_ranks().windows(2).all(|x| x[0] <= x[1]));
            }
        }
    }
}
