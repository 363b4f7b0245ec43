//! Root bipartition search.
//!
//! Populations on opposite sides of the root share no drift, so their covariance
//! (in `Σ`, in `V = V(Σ)` up to a constant, and in `Σ1`) is smallest. The search returns
//! the bipartition minimizing the mean of `M_ij` over unordered cross pairs.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::symcore::SymMat;

/// Largest `m` searched exhaustively (`2^(m-1) - 1` bipartitions).
pub const EXHAUSTIVE_CAP: usize = 22;

/// Relative tolerance (to `max |M_ij|`) within which two scores count as tied.
pub const TIE_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchMode {
    Exhaustive,
    Greedy,
    Auto,
}

impl FromStr for SearchMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exhaustive" => Ok(SearchMode::Exhaustive),
            "greedy" => Ok(SearchMode::Greedy),
            "auto" => Ok(SearchMode::Auto),
            other => Err(Error::InvalidParameter(format!(
                "unknown search mode '{other}'"
            ))),
        }
    }
}

impl fmt::Display for SearchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SearchMode::Exhaustive => "exhaustive",
            SearchMode::Greedy => "greedy",
            SearchMode::Auto => "auto",
        })
    }
}

/// Which statistic the searched matrix came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Statistic {
    Vhat,
    Shat,
    Other,
}

impl fmt::Display for Statistic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Statistic::Vhat => "vhat",
            Statistic::Shat => "shat",
            Statistic::Other => "other",
        })
    }
}

/// Bipartition of populations `0..m`; `group_a` always contains population 0.
#[derive(Clone, Debug, PartialEq)]
pub struct RootPartition {
    pub group_a: Vec<usize>,
    pub group_b: Vec<usize>,
    /// Mean of `M_ij` over `i` in A, `j` in B.
    pub score: f64,
    pub method: Statistic,
    /// The mode actually run (never `Auto`).
    pub mode: SearchMode,
    /// Number of bipartitions tied with the winner; only counted by the exhaustive scan.
    pub n_tied: usize,
}

impl RootPartition {
    pub fn with_method(mut self, method: Statistic) -> Self {
        self.method = method;
        self
    }

    pub fn to_json(&self, pop_names: &[String]) -> RootSplitJson {
        let names = |g: &[usize]| g.iter().map(|&i| pop_names[i].clone()).collect();
        RootSplitJson {
            group_a: names(&self.group_a),
            group_b: names(&self.group_b),
            score: self.score,
            method: self.method,
            mode: self.mode,
        }
    }
}

/// Serialized root split, populations by name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RootSplitJson {
    pub group_a: Vec<String>,
    pub group_b: Vec<String>,
    pub score: f64,
    pub method: Statistic,
    pub mode: SearchMode,
}

/// Membership of populations `1..m` in group B, bit `i - 1` for population `i`.
type Mask = u64;

fn groups_of(mask: Mask, m: usize) -> (Vec<usize>, Vec<usize>) {
    let (mut a, mut b) = (vec![0], vec![]);
    for i in 1..m {
        if mask >> (i - 1) & 1 == 1 {
            b.push(i);
        } else {
            a.push(i);
        }
    }
    (a, b)
}

fn in_b(mask: Mask, i: usize) -> bool {
    i > 0 && mask >> (i - 1) & 1 == 1
}

fn cross_mean(m: &SymMat, mask: Mask) -> f64 {
    let dim = m.dim();
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..dim {
        if in_b(mask, i) {
            continue;
        }
        for j in 1..dim {
            if in_b(mask, j) {
                sum += m.get(i, j);
                count += 1;
            }
        }
    }
    sum / count as f64
}

/// Canonical order among tied candidates: smaller group A, then lexicographic group A.
fn canonical_cmp(x: Mask, y: Mask, m: usize) -> Ordering {
    let (ax, _) = groups_of(x, m);
    let (ay, _) = groups_of(y, m);
    ax.len().cmp(&ay.len()).then_with(|| ax.cmp(&ay))
}

fn tie_tol(m: &SymMat) -> f64 {
    TIE_TOL * m.max_abs().max(f64::MIN_POSITIVE)
}

fn check_dim(m: &SymMat) -> Result<()> {
    if m.dim() < 2 {
        return Err(Error::DimTooSmall(m.dim()));
    }
    if !m.is_finite() {
        return Err(Error::InvalidParameter(
            "matrix has non-finite entries".into(),
        ));
    }
    Ok(())
}

fn all_scores(m: &SymMat) -> Vec<(Mask, f64)> {
    let total: Mask = 1 << (m.dim() - 1);
    (1..total)
        .into_par_iter()
        .map(|mask| (mask, cross_mean(m, mask)))
        .collect()
}

fn exhaustive(m: &SymMat) -> RootPartition {
    let dim = m.dim();
    let scores = all_scores(m);
    let best = scores.iter().map(|&(_, s)| s).fold(f64::INFINITY, f64::min);
    let tol = tie_tol(m);
    let tied: Vec<Mask> = scores
        .iter()
        .filter(|&&(_, s)| s <= best + tol)
        .map(|&(mask, _)| mask)
        .collect();
    let winner = tied
        .iter()
        .copied()
        .min_by(|&x, &y| canonical_cmp(x, y, dim))
        .expect("at least one bipartition");
    let (group_a, group_b) = groups_of(winner, dim);
    RootPartition {
        group_a,
        group_b,
        score: cross_mean(m, winner),
        method: Statistic::Other,
        mode: SearchMode::Exhaustive,
        n_tied: tied.len(),
    }
}

/// Local search from `{0} | {1..m}`: apply the best strictly improving single-population
/// move until none is left. Works on a `Vec<bool>` so any `m` is accepted.
fn greedy(m: &SymMat) -> RootPartition {
    let dim = m.dim();
    let tol = tie_tol(m);
    let mut b = vec![true; dim];
    b[0] = false;
    let score = |b: &[bool]| {
        let mut sum = 0.0;
        let mut count = 0usize;
        for i in 0..dim {
            for j in 0..dim {
                if !b[i] && b[j] {
                    sum += m.get(i, j);
                    count += 1;
                }
            }
        }
        sum / count as f64
    };
    let mut current = score(&b);
    loop {
        let size_b = b.iter().filter(|&&x| x).count();
        let mut best: Option<(usize, f64)> = None;
        for i in 1..dim {
            if b[i] && size_b == 1 {
                continue;
            }
            b[i] = !b[i];
            let s = score(&b);
            b[i] = !b[i];
            if s < current - tol && best.is_none_or(|(_, bs)| s < bs) {
                best = Some((i, s));
            }
        }
        match best {
            Some((i, s)) => {
                b[i] = !b[i];
                current = s;
            }
            None => break,
        }
    }
    let group_a = (0..dim).filter(|&i| !b[i]).collect();
    let group_b = (0..dim).filter(|&i| b[i]).collect();
    RootPartition {
        group_a,
        group_b,
        score: current,
        method: Statistic::Other,
        mode: SearchMode::Greedy,
        n_tied: 1,
    }
}

pub fn find_root_split(m: &SymMat, mode: SearchMode) -> Result<RootPartition> {
    check_dim(m)?;
    let dim = m.dim();
    match mode {
        SearchMode::Exhaustive if dim > EXHAUSTIVE_CAP => Err(Error::TooManyPopulations {
            m: dim,
            cap: EXHAUSTIVE_CAP,
        }),
        SearchMode::Exhaustive => Ok(exhaustive(m)),
        SearchMode::Greedy => Ok(greedy(m)),
        SearchMode::Auto if dim <= EXHAUSTIVE_CAP => Ok(exhaustive(m)),
        SearchMode::Auto => Ok(greedy(m)),
    }
}

/// One line of [`split_report`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankedSplit {
    pub group_a: Vec<usize>,
    pub group_b: Vec<usize>,
    pub score: f64,
}

/// Every bipartition with its score, ascending; tied scores in canonical order.
pub fn split_report(m: &SymMat) -> Result<Vec<RankedSplit>> {
    check_dim(m)?;
    let dim = m.dim();
    if dim > EXHAUSTIVE_CAP {
        return Err(Error::TooManyPopulations {
            m: dim,
            cap: EXHAUSTIVE_CAP,
        });
    }
    let tol = tie_tol(m);
    let mut scores = all_scores(m);
    // sort by score, then group ties canonically by walking runs within tolerance
    scores.sort_by(|x, y| x.1.total_cmp(&y.1));
    let mut out = Vec::with_capacity(scores.len());
    let mut start = 0;
    while start < scores.len() {
        let mut end = start + 1;
        while end < scores.len() && scores[end].1 <= scores[start].1 + tol {
            end += 1;
        }
        let run = &mut scores[start..end];
        run.sort_by(|x, y| canonical_cmp(x.0, y.0, dim));
        for &(mask, score) in run.iter() {
            let (group_a, group_b) = groups_of(mask, dim);
            out.push(RankedSplit {
                group_a,
                group_b,
                score,
            });
        }
        start = end;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symcore::apply_v;

    fn mat(rows: &[&[f64]]) -> SymMat {
        SymMat::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    /// Sequential-split covariance without the x0 factor: Σ_ij = (i-1) s for i < j (1-based).
    fn caterpillar(m: usize, t: f64, b: f64) -> SymMat {
        let seg = t - b + b / 0.025;
        SymMat::from_fn(m, |i, j| {
            if i == j {
                i as f64 * seg + (m - 1 - i) as f64 * t
            } else {
                i.min(j) as f64 * seg
            }
        })
        .unwrap()
    }

    /// Independent brute force over subsets given as explicit group-A vectors.
    fn brute_force(m: &SymMat) -> Vec<usize> {
        let dim = m.dim();
        let mut best: Option<(f64, Vec<usize>)> = None;
        for bits in 0u32..(1 << dim) {
            let a: Vec<usize> = (0..dim).filter(|&i| bits >> i & 1 == 1).collect();
            if !a.contains(&0) || a.len() == dim {
                continue;
            }
            let b: Vec<usize> = (0..dim).filter(|i| !a.contains(i)).collect();
            let mut s = 0.0;
            for &i in &a {
                for &j in &b {
                    s += m.get(i, j);
                }
            }
            let s = s / (a.len() * b.len()) as f64;
            if best.as_ref().is_none_or(|(bs, _)| s < *bs) {
                best = Some((s, a));
            }
        }
        best.unwrap().1
    }

    #[test]
    fn two_populations() {
        let m = mat(&[&[3.0, -7.0], &[-7.0, 1.0]]);
        let p = find_root_split(&m, SearchMode::Auto).unwrap();
        assert_eq!((p.group_a, p.group_b), (vec![0], vec![1]));
        assert_eq!(split_report(&m).unwrap().len(), 1);
    }

    #[test]
    fn sequential_split_scenario_m5() {
        let sigma = caterpillar(5, 0.00275, 0.00005);
        let v = apply_v(&sigma);
        assert_eq!(brute_force(&v), vec![0]);
        let p = find_root_split(&v, SearchMode::Exhaustive).unwrap();
        assert_eq!((p.group_a, p.group_b), (vec![0], vec![1, 2, 3, 4]));
        let report = split_report(&v).unwrap();
        assert_eq!(report.len(), 15);
        assert!(report.windows(2).all(|w| w[0].score <= w[1].score));
    }

    #[test]
    fn three_leaf_tree() {
        let sigma = mat(&[&[1.0, 0.0, 0.0], &[0.0, 2.0, 1.0], &[0.0, 1.0, 2.0]]);
        let p = find_root_split(&sigma, SearchMode::Exhaustive).unwrap();
        assert_eq!(
            (p.group_a.clone(), p.group_b.clone()),
            (vec![0], vec![1, 2])
        );
        assert_eq!(p.score, 0.0);
        let report = split_report(&sigma).unwrap();
        assert_eq!(report.len(), 3);
        assert_eq!(report[0].group_a, vec![0]);
        assert_eq!(report[1].score, 0.5);
    }

    #[test]
    fn star_tree_ties_break_canonically() {
        let sigma = mat(&[
            &[1.0, 0.0, 0.0, 0.0],
            &[0.0, 2.0, 0.0, 0.0],
            &[0.0, 0.0, 3.0, 0.0],
            &[0.0, 0.0, 0.0, 4.0],
        ]);
        let p = find_root_split(&sigma, SearchMode::Exhaustive).unwrap();
        assert_eq!(p.group_a, vec![0]);
        assert_eq!(p.n_tied, 7);
        let report = split_report(&sigma).unwrap();
        assert!(report.iter().all(|r| r.score == 0.0));
        assert_eq!(report[0].group_a, vec![0]);
        assert_eq!(report[1].group_a, vec![0, 1]);
        assert_eq!(report[6].group_a, vec![0, 2, 3]);
    }

    #[test]
    fn shift_by_e_keeps_argmin() {
        let sigma = caterpillar(6, 0.01, 0.001);
        let shifted = &sigma + &SymMat::ones(6).unwrap().scale(0.37);
        let p = find_root_split(&sigma, SearchMode::Exhaustive).unwrap();
        let q = find_root_split(&shifted, SearchMode::Exhaustive).unwrap();
        assert_eq!(p.group_a, q.group_a);
        assert!((q.score - p.score - 0.37).abs() < 1e-12);
    }

    #[test]
    fn greedy_finds_caterpillar_root() {
        let v = apply_v(&caterpillar(30, 0.00275, 0.00005));
        let p = find_root_split(&v, SearchMode::Auto).unwrap();
        assert_eq!(p.mode, SearchMode::Greedy);
        assert_eq!(p.group_a, vec![0]);
        assert_eq!(p.group_b, (1..30).collect::<Vec<_>>());
    }

    #[test]
    fn greedy_leaves_a_local_minimum() {
        let m = mat(&[
            &[1.0, 0.2, 0.9, 0.1],
            &[0.2, 1.0, 0.3, 0.8],
            &[0.9, 0.3, 1.0, 0.2],
            &[0.1, 0.8, 0.2, 1.0],
        ]);
        let p = find_root_split(&m, SearchMode::Greedy).unwrap();
        assert_eq!(p.group_a, brute_force(&m));
    }

    #[test]
    fn limits() {
        let big = SymMat::identity(23).unwrap();
        assert!(matches!(
            find_root_split(&big, SearchMode::Exhaustive),
            Err(Error::TooManyPopulations { m: 23, cap: 22 })
        ));
        assert!(split_report(&big).is_err());
        assert!("fast".parse::<SearchMode>().is_err());
    }

    #[test]
    fn json_uses_names() {
        let sigma = mat(&[&[1.0, 0.0, 0.0], &[0.0, 2.0, 1.0], &[0.0, 1.0, 2.0]]);
        let p = find_root_split(&sigma, SearchMode::Auto)
            .unwrap()
            .with_method(Statistic::Vhat);
        let names = vec!["YRI".to_string(), "CEU".to_string(), "CHB".to_string()];
        let json = serde_json::to_value(p.to_json(&names)).unwrap();
        assert_eq!(
            json,
            serde_json::json!({
                "group_a": ["YRI"], "group_b": ["CEU", "CHB"], "score": 0.0,
                "method": "vhat", "mode": "exhaustive"
            })
        );
    }
}
