use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Descriptor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub index_a: usize,
    pub index_b: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatcherParams {
    /// Nearest / second-nearest distance ratio; must lie in `(0, 1]`.
    pub ratio: f64,
}

impl Default for MatcherParams {
    fn default() -> Self {
        Self { ratio: 0.7 }
    }
}

/// Nearest and second-nearest squared distances plus the nearest index.
#[derive(Clone, Copy)]
struct Neighbors {
    best: usize,
    d1: f64,
    d2: f64,
}

fn nearest_two(row: impl Iterator<Item = f64>) -> Option<Neighbors> {
    let mut out: Option<Neighbors> = None;
    for (j, d) in row.enumerate() {
        match &mut out {
            None => {
                out = Some(Neighbors {
                    best: j,
                    d1: d,
                    d2: f64::INFINITY,
                })
            }
            Some(n) => {
                if d < n.d1 {
                    n.d2 = n.d1;
                    n.d1 = d;
                    n.best = j;
                } else if d < n.d2 {
                    n.d2 = d;
                }
            }
        }
    }
    out
}

/// Ratio-tested, mutually consistent nearest-neighbor matches, ordered by
/// `index_a`. With a single candidate in `b` the ratio test passes trivially.
pub fn match_descriptors(a: &[Descriptor], b: &[Descriptor], ratio: f64) -> Vec<Match> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let distances: Vec<Vec<f64>> = a
        .par_iter()
        .map(|da| b.iter().map(|db| da.distance_squared(db)).collect())
        .collect();

    // b's nearest neighbor in a, column-wise.
    let reverse_best: Vec<usize> = (0..b.len())
        .into_par_iter()
        .map(|j| {
            nearest_two(distances.iter().map(|row| row[j]))
                .map(|n| n.best)
                .unwrap_or(usize::MAX)
        })
        .collect();

    distances
        .iter()
        .enumerate()
        .filter_map(|(i, row)| {
            let n = nearest_two(row.iter().copied())?;
            let (d1, d2) = (n.d1.sqrt(), n.d2.sqrt());
            let passes_ratio = d1 < ratio * d2;
            (passes_ratio && reverse_best[n.best] == i).then_some(Match {
                index_a: i,
                index_b: n.best,
                distance: d1,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::DESCRIPTOR_LEN;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn random_descriptors(rng: &mut impl Rng, n: usize) -> Vec<Descriptor> {
        (0..n)
            .map(|_| {
                let mut v = [0.0f32; DESCRIPTOR_LEN];
                v.iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
                let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
                v.iter_mut().for_each(|x| *x /= norm);
                Descriptor(v)
            })
            .collect()
    }

    fn unit(axis: usize, scale: f32) -> Descriptor {
        let mut v = [0.0f32; DESCRIPTOR_LEN];
        v[axis] = scale;
        Descriptor(v)
    }

    /// All-pairs reference: scans every candidate explicitly, no shared helpers.
    fn brute_force(a: &[Descriptor], b: &[Descriptor], ratio: f64) -> Vec<Match> {
        let dist = |x: &Descriptor, y: &Descriptor| {
            let mut s = 0.0f64;
            for k in 0..DESCRIPTOR_LEN {
                let d = x.0[k] as f64 - y.0[k] as f64;
                s += d * d;
            }
            s.sqrt()
        };
        let mut out = Vec::new();
        for (i, da) in a.iter().enumerate() {
            let mut ds: Vec<(f64, usize)> = b.iter().enumerate().map(|(j, db)| (dist(da, db), j)).collect();
            ds.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
            let (d1, j) = ds[0];
            let d2 = ds.get(1).map_or(f64::INFINITY, |x| x.0);
            if !(d1 < ratio * d2) {
                continue;
            }
            let mut back: Vec<(f64, usize)> = a.iter().enumerate().map(|(k, dk)| (dist(dk, &b[j]), k)).collect();
            back.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
            if back[0].1 == i {
                out.push(Match { index_a: i, index_b: j, distance: d1 });
            }
        }
        out
    }

    #[test]
    fn self_matching_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let a = random_descriptors(&mut rng, 50);
        let m = match_descriptors(&a, &a, 0.7);
        assert_eq!(m.len(), 50);
        for (i, mm) in m.iter().enumerate() {
            assert_eq!((mm.index_a, mm.index_b, mm.distance), (i, i, 0.0));
        }
    }

    #[test]
    fn ratio_test_arithmetic() {
        // Nearest at 0.4, second at 0.5: 0.8 is not below 0.7.
        let a = vec![unit(0, 0.0)];
        let b = vec![unit(1, 0.4), unit(2, 0.5)];
        assert!(match_descriptors(&a, &b, 0.7).is_empty());
        assert_eq!(match_descriptors(&a, &b, 0.9).len(), 1);
    }

    #[test]
    fn empty_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let a = random_descriptors(&mut rng, 3);
        assert!(match_descriptors(&a, &[], 0.7).is_empty());
        assert!(match_descriptors(&[], &a, 0.7).is_empty());
    }

    #[test]
    fn matches_all_pairs_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let b = random_descriptors(&mut rng, 200);
        // Half of a are noisy copies of b so the ratio test has something to accept.
        let mut a = random_descriptors(&mut rng, 100);
        for d in b.iter().take(100) {
            let mut v = d.0;
            v.iter_mut().for_each(|x| *x += rng.gen_range(-0.05..0.05));
            a.push(Descriptor(v));
        }
        for ratio in [0.5, 0.7, 0.9, 1.0] {
            let fast = match_descriptors(&a, &b, ratio);
            assert_eq!(fast, brute_force(&a, &b, ratio));
            let ia: HashSet<_> = fast.iter().map(|m| m.index_a).collect();
            let ib: HashSet<_> = fast.iter().map(|m| m.index_b).collect();
            assert_eq!(ia.len(), fast.len());
            assert_eq!(ib.len(), fast.len());
        }
        assert!(match_descriptors(&a, &b, 0.7).len() >= 90);
    }
}
