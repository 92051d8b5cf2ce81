//! Balanced train/test splits that keep every group on one side.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    /// Sample indices, ascending.
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
    pub replicate: u64,
}

/// Samples of each class gathered into units (groups, or single samples),
/// in order of first appearance.
fn class_units(labels: &[i8], groups: Option<&[String]>) -> Result<[Vec<Vec<usize>>; 2]> {
    let mut units: [Vec<Vec<usize>>; 2] = [Vec::new(), Vec::new()];
    let class = |l: i8| usize::from(l > 0);
    match groups {
        None => {
            for (i, &l) in labels.iter().enumerate() {
                units[class(l)].push(vec![i]);
            }
        }
        Some(g) => {
            if g.len() != labels.len() {
                return Err(CliError::Data(format!("{} group ids for {} samples", g.len(), labels.len())));
            }
            let mut seen: std::collections::HashMap<&str, (usize, usize)> = Default::default();
            for (i, (&l, id)) in labels.iter().zip(g).enumerate() {
                match seen.get(id.as_str()) {
                    Some(&(c, k)) => {
                        if c != class(l) {
                            return Err(CliError::Data(format!("group '{id}' contains both classes")));
                        }
                        units[c][k].push(i);
                    }
                    None => {
                        let c = class(l);
                        seen.insert(id, (c, units[c].len()));
                        units[c].push(vec![i]);
                    }
                }
            }
        }
    }
    Ok(units)
}

/// Per class, `floor(frac * n0)` units go to training and `n0 - floor(frac * n0)`
/// to testing, where `n0` is the smaller class's unit count. Units beyond
/// that are left out. Replicates use separate streams of the seeded generator.
pub fn grouped_balanced_split(
    labels: &[i8],
    groups: Option<&[String]>,
    frac: f64,
    seed: u64,
    replicate: u64,
) -> Result<SplitPlan> {
    if !(frac > 0.0 && frac < 1.0) {
        return Err(CliError::Usage(format!("train fraction must lie in (0, 1), got {frac}")));
    }
    let mut units = class_units(labels, groups)?;
    let n0 = units[0].len().min(units[1].len());
    let n_train = (frac * n0 as f64).floor() as usize;
    let n_test = n0 - n_train;
    if n_train < 2 || n_test < 1 {
        return Err(CliError::SplitInfeasible(format!(
            "{} and {} units per class give {n_train} training and {n_test} test units per class; \
             need at least 2 and 1",
            units[0].len(),
            units[1].len()
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for class in units.iter_mut() {
        class.shuffle(&mut rng);
        train.extend(class[..n_train].iter().flatten());
        test.extend(class[n_train..n0].iter().flatten());
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitPlan { train, test, seed, replicate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn balanced(n: usize) -> Vec<i8> {
        (0..2 * n).map(|i| if i < n { -1 } else { 1 }).collect()
    }

    #[test]
    fn ten_per_class() {
        let t = balanced(10);
        let s = grouped_balanced_split(&t, None, 0.8, 3, 0).unwrap();
        let count = |idx: &[usize], c: i8| idx.iter().filter(|&&i| t[i] == c).count();
        assert_eq!((count(&s.train, -1), count(&s.train, 1)), (8, 8));
        assert_eq!((count(&s.test, -1), count(&s.test, 1)), (2, 2));
    }

    #[test]
    fn unbalanced_classes_use_smaller_count() {
        let mut t = vec![-1i8; 7];
        t.extend([1i8; 13]);
        let s = grouped_balanced_split(&t, None, 0.8, 1, 0).unwrap();
        assert_eq!(s.train.len(), 10);
        assert_eq!(s.test.len(), 4);
    }

    #[test]
    fn single_group_class_is_infeasible() {
        let t = balanced(5);
        let g: Vec<String> = (0..10).map(|i| if i < 5 { "a".into() } else { format!("s{i}") }).collect();
        let e = grouped_balanced_split(&t, Some(&g), 0.8, 1, 0).unwrap_err();
        assert!(matches!(e, CliError::SplitInfeasible(_)));
    }

    #[test]
    fn mixed_group_is_rejected() {
        let t = balanced(4);
        let g: Vec<String> = (0..8).map(|i| format!("g{}", i / 3)).collect();
        assert!(matches!(grouped_balanced_split(&t, Some(&g), 0.8, 1, 0), Err(CliError::Data(_))));
    }

    #[test]
    fn groups_never_leak() {
        let t = balanced(30);
        let g: Vec<String> = (0..60).map(|i| format!("subj{}", i / 3)).collect();
        for rep in 0..50 {
            let s = grouped_balanced_split(&t, Some(&g), 0.8, 9, rep).unwrap();
            let tr: HashSet<&str> = s.train.iter().map(|&i| g[i].as_str()).collect();
            assert!(s.test.iter().all(|&i| !tr.contains(g[i].as_str())));
            // 10 subjects per class: 8 train, 2 test, 3 samples each
            assert_eq!(s.train.len(), 48);
            assert_eq!(s.test.len(), 12);
        }
    }

    #[test]
    fn inclusion_frequency_near_fraction() {
        let t = balanced(10);
        let mut hits = vec![0usize; 20];
        for rep in 0..200 {
            for i in grouped_balanced_split(&t, None, 0.8, 5, rep).unwrap().train {
                hits[i] += 1;
            }
        }
        // each count is Binomial(200, 0.8), sd 0.028 on the frequency scale
        let dev: Vec<f64> = hits.iter().map(|&h| (h as f64 / 200.0 - 0.8).abs()).collect();
        assert!(dev.iter().sum::<f64>() / 20.0 <= 0.05);
        assert!(dev.iter().all(|&d| d <= 4.5 * 0.0283), "{hits:?}");
    }

    #[test]
    fn seeded_and_replicate_dependent() {
        let t = balanced(10);
        let a = grouped_balanced_split(&t, None, 0.8, 5, 1).unwrap();
        assert_eq!(a, grouped_balanced_split(&t, None, 0.8, 5, 1).unwrap());
        assert_ne!(a.train, grouped_balanced_split(&t, None, 0.8, 5, 2).unwrap().train);
    }
}
