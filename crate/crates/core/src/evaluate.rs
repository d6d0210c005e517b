//! Clustering agreement between true and decoded state sequences.

use crate::error::{Result, ThmmError};

/// Largest label count for which [`align_labels`] enumerates permutations.
pub const MAX_ALIGN_CLASSES: usize = 8;

/// A sequence of 1-based class labels.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Labeling(Vec<usize>);

impl Labeling {
    pub fn new(labels: Vec<usize>) -> Result<Self> {
        if labels.is_empty() {
            return Err(ThmmError::invalid("empty labeling"));
        }
        if labels.contains(&0) {
            return Err(ThmmError::invalid("labels are 1-based"));
        }
        Ok(Labeling(labels))
    }

    /// From 0-based state indices, as produced by the decoder.
    pub fn from_states(states: &[usize]) -> Result<Self> {
        Labeling::new(states.iter().map(|s| s + 1).collect())
    }

    pub fn labels(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max_label(&self) -> usize {
        *self.0.iter().max().expect("non-empty")
    }
}

fn check_lengths(a: &Labeling, b: &Labeling) -> Result<()> {
    if a.len() != b.len() {
        return Err(ThmmError::mismatch(format!(
            "labelings have lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

fn choose2(n: u64) -> u128 {
    let n = n as u128;
    n * n.saturating_sub(1) / 2
}

/// Adjusted Rand index from the contingency table.
///
/// When both partitions are trivial in the same way (all one class, or all
/// singletons) the index is undefined; 1 is returned, as both partitions
/// agree.
pub fn adjusted_rand_index(a: &Labeling, b: &Labeling) -> Result<f64> {
    check_lengths(a, b)?;
    let n = a.len();
    if n < 2 {
        return Err(ThmmError::invalid("ARI needs at least two elements"));
    }
    let table = contingency(a, b);
    let cells: u128 = table.iter().flatten().map(|&c| choose2(c)).sum();
    let rows: u128 = table.iter().map(|r| choose2(r.iter().sum())).sum();
    let cols: u128 = (0..table[0].len())
        .map(|j| choose2(table.iter().map(|r| r[j]).sum()))
        .sum();
    let total = choose2(n as u64) as f64;
    let expected = rows as f64 * cols as f64 / total;
    let max_index = 0.5 * (rows as f64 + cols as f64);
    if max_index == expected {
        return Ok(1.0);
    }
    Ok((cells as f64 - expected) / (max_index - expected))
}

fn contingency(a: &Labeling, b: &Labeling) -> Vec<Vec<u64>> {
    let mut table = vec![vec![0u64; b.max_label()]; a.max_label()];
    for (x, y) in a.labels().iter().zip(b.labels()) {
        table[x - 1][y - 1] += 1;
    }
    table
}

/// Relabeling of predicted classes that best matches the truth.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alignment {
    /// `mapping[k]` is the new label of predicted label `k + 1`.
    pub mapping: Vec<usize>,
    /// Number of positions on which truth and relabeled prediction agree.
    pub trace: usize,
}

impl Alignment {
    pub fn apply(&self, pred: &Labeling) -> Labeling {
        Labeling(pred.labels().iter().map(|&l| self.mapping[l - 1]).collect())
    }
}

/// Exhaustive search over relabelings of `pred` for the one maximizing the
/// confusion-matrix trace; the lexicographically first wins ties.
pub fn align_labels(truth: &Labeling, pred: &Labeling) -> Result<Alignment> {
    check_lengths(truth, pred)?;
    let m = truth.max_label().max(pred.max_label());
    if m > MAX_ALIGN_CLASSES {
        return Err(ThmmError::invalid(format!(
            "alignment supports at most {MAX_ALIGN_CLASSES} classes, got {m}"
        )));
    }
    // counts[k][l]: predicted k+1 with truth l+1
    let mut counts = vec![vec![0usize; m]; m];
    for (t, p) in truth.labels().iter().zip(pred.labels()) {
        counts[p - 1][t - 1] += 1;
    }
    let mut perm: Vec<usize> = (0..m).collect();
    let mut best = (score(&counts, &perm), perm.clone());
    while next_permutation(&mut perm) {
        let s = score(&counts, &perm);
        if s > best.0 {
            best = (s, perm.clone());
        }
    }
    Ok(Alignment {
        mapping: best.1.iter().map(|l| l + 1).collect(),
        trace: best.0,
    })
}

fn score(counts: &[Vec<usize>], perm: &[usize]) -> usize {
    perm.iter().enumerate().map(|(k, &l)| counts[k][l]).sum()
}

fn next_permutation(v: &mut [usize]) -> bool {
    let n = v.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

/// `m x m` counts with rows indexed by truth and columns by prediction,
/// where `m` is the largest label in either sequence.
pub fn confusion_matrix(truth: &Labeling, pred: &Labeling) -> Result<Vec<Vec<usize>>> {
    check_lengths(truth, pred)?;
    let m = truth.max_label().max(pred.max_label());
    let mut table = vec![vec![0usize; m]; m];
    for (t, p) in truth.labels().iter().zip(pred.labels()) {
        table[t - 1][p - 1] += 1;
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lab(v: &[usize]) -> Labeling {
        Labeling::new(v.to_vec()).unwrap()
    }

    #[test]
    fn ari_examples() {
        let a = lab(&[1, 1, 2, 2, 3]);
        assert_eq!(adjusted_rand_index(&a, &a).unwrap(), 1.0);
        assert_eq!(adjusted_rand_index(&lab(&[1, 1, 2, 2]), &lab(&[2, 2, 1, 1])).unwrap(), 1.0);
        let v = adjusted_rand_index(&lab(&[1, 1, 1, 2, 2, 2]), &lab(&[1, 1, 2, 2, 3, 3])).unwrap();
        assert!((v - 8.0 / 33.0).abs() < 1e-12, "{v}");
    }

    #[test]
    fn ari_errors() {
        assert!(adjusted_rand_index(&lab(&[1, 2]), &lab(&[1])).is_err());
        assert!(adjusted_rand_index(&lab(&[1]), &lab(&[1])).is_err());
        assert!(Labeling::new(vec![]).is_err());
        assert!(Labeling::new(vec![0, 1]).is_err());
    }

    #[test]
    fn alignment_examples() {
        let t = lab(&[1, 1, 2, 2, 3]);
        let id = align_labels(&t, &t).unwrap();
        assert_eq!(id.mapping, vec![1, 2, 3]);

        let swapped = lab(&[2, 2, 1, 1, 3]);
        assert_eq!(align_labels(&t, &swapped).unwrap().mapping, vec![2, 1, 3]);

        let al = align_labels(&t, &lab(&[3, 3, 1, 1, 2])).unwrap();
        assert_eq!(al.mapping, vec![2, 3, 1]);
        assert_eq!(al.trace, 5);
        assert_eq!(al.apply(&lab(&[3, 3, 1, 1, 2])), t);

        assert!(align_labels(&lab(&[9, 1]), &lab(&[1, 2])).is_err());
    }

    #[test]
    fn confusion_examples() {
        let t = lab(&[1, 1, 2, 3, 3, 3]);
        assert_eq!(
            confusion_matrix(&t, &t).unwrap(),
            vec![vec![2, 0, 0], vec![0, 1, 0], vec![0, 0, 3]]
        );
        let truth = lab(&[1, 2]);
        let pred = lab(&[2, 1]);
        let aligned = align_labels(&truth, &pred).unwrap().apply(&pred);
        assert_eq!(confusion_matrix(&truth, &aligned).unwrap(), vec![vec![1, 0], vec![0, 1]]);
        assert_eq!(
            confusion_matrix(&lab(&[1, 1, 2]), &lab(&[1, 2, 2])).unwrap(),
            vec![vec![1, 1], vec![0, 1]]
        );
        assert!(confusion_matrix(&lab(&[1]), &lab(&[1, 1])).is_err());
    }
}
