use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Indices kept by the 5x rule: when `count > limit`, a uniform sample of
/// `ceil(frac * count)` without replacement; otherwise all of them.
/// Returned in ascending order.
pub fn sample_level5(count: usize, frac: f64, limit: usize, seed: u64) -> Result<Vec<usize>> {
    if !(frac > 0.0 && frac <= 1.0) {
        return Err(Error::Config(format!("sampling fraction {frac} outside (0, 1]")));
    }
    if count <= limit {
        return Ok((0..count).collect());
    }
    let take = ((frac * count as f64).ceil() as usize).min(count);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, count, take).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Up to `n_per_cluster` members of each cluster, drawn uniformly without
/// replacement. Output is grouped by cluster id, ascending within each group.
pub fn cluster_sample(assignments: &[usize], n_per_cluster: usize, seed: u64) -> Vec<usize> {
    let k = assignments.iter().max().map_or(0, |m| m + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for c in 0..k {
        let members: Vec<usize> = assignments
            .iter()
            .enumerate()
            .filter(|(_, &a)| a == c)
            .map(|(i, _)| i)
            .collect();
        let mut picked: Vec<usize> = if members.len() <= n_per_cluster {
            members
        } else {
            sample(&mut rng, members.len(), n_per_cluster)
                .into_iter()
                .map(|j| members[j])
                .collect()
        };
        picked.sort_unstable();
        out.extend(picked);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn at_the_limit_everything_is_kept() {
        assert_eq!(sample_level5(50, 0.6, 50, 1).unwrap().len(), 50);
    }

    #[test]
    fn above_the_limit_sixty_percent() {
        let s = sample_level5(100, 0.6, 50, 1).unwrap();
        assert_eq!(s.len(), 60);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(s, sample_level5(100, 0.6, 50, 1).unwrap());
        assert_eq!(sample_level5(101, 0.6, 50, 1).unwrap().len(), 61);
    }

    #[test]
    fn bad_fraction_is_rejected() {
        assert!(sample_level5(10, 0.0, 5, 0).is_err());
        assert!(sample_level5(10, 1.5, 5, 0).is_err());
    }

    #[test]
    fn per_cluster_cap() {
        let mut assign = vec![0; 5];
        assign.extend(vec![1; 100]);
        let picked = cluster_sample(&assign, 20, 3);
        assert_eq!(picked.iter().filter(|&&i| i < 5).count(), 5);
        assert_eq!(picked.iter().filter(|&&i| i >= 5).count(), 20);
        assert_eq!(picked, cluster_sample(&assign, 20, 3));
    }
}
