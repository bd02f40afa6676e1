//! Strictly increasing multi-indices in lexicographic order.

/// Binomial coefficient `C(n, k)`; zero when `k > n`.
pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: usize = 1;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

/// All `k`-subsets of `0..n` as increasing index vectors, lexicographically ordered.
pub fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::with_capacity(binomial(n, k));
    if k > n {
        return out;
    }
    let mut current: Vec<usize> = (0..k).collect();
    loop {
        out.push(current.clone());
        // advance the rightmost index that still has room
        let mut pos = k;
        while pos > 0 {
            pos -= 1;
            if current[pos] < n - k + pos {
                current[pos] += 1;
                for q in pos + 1..k {
                    current[q] = current[q - 1] + 1;
                }
                break;
            }
            if pos == 0 {
                return out;
            }
        }
        if k == 0 {
            return out;
        }
    }
}

/// Position of an increasing multi-index inside `subsets(n, index.len())`.
pub fn subset_rank(n: usize, index: &[usize]) -> usize {
    let k = index.len();
    let mut rank = 0;
    let mut prev = 0;
    for (pos, &value) in index.iter().enumerate() {
        for skipped in prev..value {
            rank += binomial(n - skipped - 1, k - pos - 1);
        }
        prev = value + 1;
    }
    rank
}

/// The sums `Σ_{j∈J} values[j]` over all `m`-subsets `J`, in lexicographic order.
pub fn msums(values: &[f64], m: usize) -> Vec<f64> {
    subsets(values.len(), m)
        .iter()
        .map(|set| set.iter().map(|&j| values[j]).sum())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_match_binomial() {
        for n in 0..8 {
            for k in 0..=n {
                assert_eq!(subsets(n, k).len(), binomial(n, k), "n={n} k={k}");
            }
        }
        assert_eq!(binomial(3, 5), 0);
    }

    #[test]
    fn lexicographic_pairs() {
        assert_eq!(subsets(3, 2), vec![vec![0, 1], vec![0, 2], vec![1, 2]]);
        assert_eq!(subsets(3, 0), vec![Vec::<usize>::new()]);
    }

    #[test]
    fn rank_inverts_enumeration() {
        for n in 1..7 {
            for k in 0..=n {
                for (i, set) in subsets(n, k).iter().enumerate() {
                    assert_eq!(subset_rank(n, set), i);
                }
            }
        }
    }

    #[test]
    fn pair_sums() {
        assert_eq!(msums(&[1.0, 2.0, 3.0], 2), vec![3.0, 4.0, 5.0]);
    }
}
