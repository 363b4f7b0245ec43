//! Chromosome-aware SNP pairing for `Ŝ`.
//!
//! SNPs on different chromosomes are treated as independent. A perfect cross-chromosome
//! pairing exists iff the total is even and the largest chromosome holds no more SNPs
//! than all others combined; pairing one SNP from each of the two currently largest
//! chromosomes preserves that condition, so repeating it always completes.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use log::warn;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimators::{FreqPanel, PairedPanel};

/// SNP count per chromosome label.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChromCounts {
    counts: Vec<(String, usize)>,
}

impl ChromCounts {
    pub fn new(counts: Vec<(String, usize)>) -> Result<Self> {
        let mut labels: Vec<&str> = counts.iter().map(|(l, _)| l.as_str()).collect();
        labels.sort_unstable();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidParameter("duplicate chromosome label".into()));
        }
        if counts.iter().any(|&(_, c)| c == 0) {
            return Err(Error::InvalidParameter(
                "chromosome counts must be positive".into(),
            ));
        }
        Ok(ChromCounts { counts })
    }

    pub fn from_panel(panel: &FreqPanel) -> Option<Self> {
        let mut map: BTreeMap<&str, usize> = BTreeMap::new();
        for c in panel.chrom() {
            *map.entry(c.as_deref()?).or_default() += 1;
        }
        Some(ChromCounts {
            counts: map.into_iter().map(|(l, c)| (l.to_string(), c)).collect(),
        })
    }

    pub fn counts(&self) -> &[(String, usize)] {
        &self.counts
    }

    pub fn total(&self) -> usize {
        self.counts.iter().map(|(_, c)| c).sum()
    }

    fn describe(&self) -> String {
        let mut sorted = self.counts.clone();
        sorted.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        sorted
            .iter()
            .map(|(l, c)| format!("{l}={c}"))
            .collect::<Vec<_>>()
            .join(", ")
    }
}

/// True iff the total is even and the largest count is at most the sum of the others.
pub fn pairing_feasible(counts: &ChromCounts) -> bool {
    let total = counts.total();
    let max = counts.counts.iter().map(|(_, c)| *c).max().unwrap_or(0);
    total.is_multiple_of(2) && max <= total - max
}

/// How the pairing was produced, for reporting.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PairingMethod {
    CrossChromosome,
    /// Chromosome labels were missing; rows paired as `(1,2), (3,4), ...`.
    Consecutive,
}

#[derive(Clone, Debug)]
pub struct PairingOutcome {
    pub pairing: PairedPanel,
    /// Row indices left unpaired.
    pub discarded: Vec<usize>,
    pub method: PairingMethod,
}

#[derive(PartialEq, Eq)]
struct Slot<'a> {
    remaining: usize,
    label: &'a str,
    chrom: usize,
}

impl Ord for Slot<'_> {
    // max-heap: larger count first, then smaller label
    fn cmp(&self, other: &Self) -> Ordering {
        self.remaining
            .cmp(&other.remaining)
            .then_with(|| other.label.cmp(self.label))
    }
}

impl PartialOrd for Slot<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Pairs the panel's SNPs so that the two members of every pair lie on different
/// chromosomes. Within a chromosome SNPs are used in file order. With an odd total,
/// the last SNP of the largest chromosome is dropped first.
///
/// Without chromosome labels (any `.`), falls back to consecutive pairing and logs a warning.
pub fn pair_snps(panel: &FreqPanel) -> Result<PairingOutcome> {
    let n = panel.n_snps();
    if n == 0 {
        return Err(Error::EmptyPanel);
    }
    if panel.chrom().iter().any(Option::is_none) {
        warn!("chromosome labels missing; pairing consecutive rows, independence within pairs is not checked");
        return Ok(PairingOutcome {
            pairing: PairedPanel::consecutive(n),
            discarded: if n % 2 == 1 { vec![n - 1] } else { vec![] },
            method: PairingMethod::Consecutive,
        });
    }

    let mut by_chrom: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (k, c) in panel.chrom().iter().enumerate() {
        by_chrom
            .entry(c.as_deref().unwrap_or_default())
            .or_default()
            .push(k);
    }
    let mut groups: Vec<(&str, Vec<usize>)> = by_chrom.into_iter().collect();

    let mut discarded = Vec::new();
    if n % 2 == 1 {
        let largest = groups
            .iter()
            .enumerate()
            .max_by(|a, b| {
                a.1 .1
                    .len()
                    .cmp(&b.1 .1.len())
                    .then_with(|| b.1 .0.cmp(a.1 .0))
            })
            .map(|(g, _)| g)
            .expect("non-empty panel has a chromosome");
        discarded.push(
            groups[largest]
                .1
                .pop()
                .expect("largest chromosome is non-empty"),
        );
    }

    let counts = ChromCounts {
        counts: groups
            .iter()
            .filter(|(_, idx)| !idx.is_empty())
            .map(|(l, idx)| (l.to_string(), idx.len()))
            .collect(),
    };
    if !pairing_feasible(&counts) {
        return Err(Error::PairingInfeasible(counts.describe()));
    }

    let mut cursor = vec![0usize; groups.len()];
    let mut heap: BinaryHeap<Slot> = groups
        .iter()
        .enumerate()
        .filter(|(_, (_, idx))| !idx.is_empty())
        .map(|(g, (label, idx))| Slot {
            remaining: idx.len(),
            label,
            chrom: g,
        })
        .collect();

    let mut pairs = Vec::with_capacity(n / 2);
    while let Some(mut first) = heap.pop() {
        let mut second = heap
            .pop()
            .expect("feasible counts never leave a single chromosome");
        let a = groups[first.chrom].1[cursor[first.chrom]];
        let b = groups[second.chrom].1[cursor[second.chrom]];
        cursor[first.chrom] += 1;
        cursor[second.chrom] += 1;
        pairs.push((a, b));
        first.remaining -= 1;
        second.remaining -= 1;
        for slot in [first, second] {
            if slot.remaining > 0 {
                heap.push(slot);
            }
        }
    }

    Ok(PairingOutcome {
        pairing: PairedPanel::new(pairs)?,
        discarded,
        method: PairingMethod::CrossChromosome,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(c: &[usize]) -> ChromCounts {
        ChromCounts::new(
            c.iter()
                .enumerate()
                .map(|(i, &n)| (format!("c{i}"), n))
                .collect(),
        )
        .unwrap()
    }

    fn labelled_panel(labels: &[&str]) -> FreqPanel {
        let rows: Vec<Vec<f64>> = (0..labels.len()).map(|k| vec![k as f64, 0.0]).collect();
        FreqPanel::from_rows(&rows)
            .unwrap()
            .with_chromosomes(labels.iter().map(|l| Some(l.to_string())).collect())
            .unwrap()
    }

    #[test]
    fn feasibility_examples() {
        assert!(pairing_feasible(&counts(&[3, 2, 1])));
        assert!(!pairing_feasible(&counts(&[5, 1])));
        assert!(!pairing_feasible(&counts(&[2, 2, 1])));
        assert!(pairing_feasible(&counts(&[2, 2, 2])));
    }

    #[test]
    fn chrom_counts_validation() {
        assert!(ChromCounts::new(vec![("a".into(), 1), ("a".into(), 2)]).is_err());
        assert!(ChromCounts::new(vec![("a".into(), 0)]).is_err());
    }

    #[test]
    fn three_two_one() {
        let p = labelled_panel(&["A", "A", "A", "B", "B", "C"]);
        let out = pair_snps(&p).unwrap();
        assert_eq!(out.pairing.len(), 3);
        assert!(out.discarded.is_empty());
        for &(a, b) in out.pairing.pairs() {
            assert_ne!(p.chrom()[a], p.chrom()[b]);
        }
        assert_eq!(out.pairing.pairs(), &[(0, 3), (1, 4), (2, 5)]);
    }

    #[test]
    fn equal_thirds_succeed() {
        // the naive "smallest joins largest" rule strands chromosome B here
        let p = labelled_panel(&["A", "A", "B", "B", "C", "C"]);
        let out = pair_snps(&p).unwrap();
        assert_eq!(out.pairing.len(), 3);
        for &(a, b) in out.pairing.pairs() {
            assert_ne!(p.chrom()[a], p.chrom()[b]);
        }
    }

    #[test]
    fn single_pair() {
        let p = labelled_panel(&["A", "B"]);
        assert_eq!(pair_snps(&p).unwrap().pairing.pairs(), &[(0, 1)]);
    }

    #[test]
    fn odd_total_then_infeasible() {
        let p = labelled_panel(&["A", "A", "A", "A", "B"]);
        match pair_snps(&p) {
            Err(Error::PairingInfeasible(msg)) => assert_eq!(msg, "A=3, B=1"),
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn odd_total_drops_last_of_largest() {
        let p = labelled_panel(&["A", "B", "A", "B", "A"]);
        let out = pair_snps(&p).unwrap();
        assert_eq!(out.discarded, vec![4]);
        assert_eq!(out.pairing.len(), 2);
    }

    #[test]
    fn missing_labels_fall_back_to_consecutive() {
        let p = FreqPanel::from_rows(&vec![vec![0.1, 0.2]; 5]).unwrap();
        let out = pair_snps(&p).unwrap();
        assert_eq!(out.method, PairingMethod::Consecutive);
        assert_eq!(out.pairing.pairs(), &[(0, 1), (2, 3)]);
        assert_eq!(out.discarded, vec![4]);
    }

    #[test]
    fn deterministic() {
        let p = labelled_panel(&["X", "Y", "Z", "X", "Y", "Z", "X", "Y"]);
        assert_eq!(
            pair_snps(&p).unwrap().pairing,
            pair_snps(&p).unwrap().pairing
        );
    }
}
