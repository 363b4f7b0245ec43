//! Moment-based estimators computed from a SNP-by-population frequency panel.
//!
//! Every estimator here is a linear image of an averaged outer product. The outer
//! products are summed over fixed-size SNP chunks in parallel, each chunk with
//! compensated summation, and the chunk partials are folded in chunk order, so the
//! result is bit-identical for a given chunk size no matter how many threads run.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::symcore::{apply_d, apply_v, apply_w, SymMat};

pub const DEFAULT_CHUNK_SIZE: usize = 16_384;

/// Per-SNP, per-population values (allele frequencies or arbitrary reals), row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreqPanel {
    n_pops: usize,
    values: Vec<f64>,
    snp_ids: Vec<String>,
    chrom: Vec<Option<String>>,
    pop_names: Vec<String>,
    is_frequency: bool,
}

impl FreqPanel {
    /// Builds a panel with generated SNP ids (`snp1`, ...), population names
    /// (`pop1`, ...) and no chromosome labels.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.first().map(|r| r.len()).unwrap_or(0);
        let mut values = Vec::with_capacity(rows.len() * m);
        for (k, row) in rows.iter().enumerate() {
            if row.len() != m {
                return Err(Error::ShapeMismatch(format!(
                    "row {} has {} values, expected {}",
                    k + 1,
                    row.len(),
                    m
                )));
            }
            values.extend_from_slice(row);
        }
        let n = rows.len();
        Self::new(
            m,
            values,
            (1..=n).map(|k| format!("snp{k}")).collect(),
            vec![None; n],
            (1..=m).map(|i| format!("pop{i}")).collect(),
        )
    }

    pub fn new(
        n_pops: usize,
        values: Vec<f64>,
        snp_ids: Vec<String>,
        chrom: Vec<Option<String>>,
        pop_names: Vec<String>,
    ) -> Result<Self> {
        if n_pops < 2 {
            return Err(Error::DimTooSmall(n_pops));
        }
        if pop_names.len() != n_pops {
            return Err(Error::ShapeMismatch(format!(
                "{} population names for {} columns",
                pop_names.len(),
                n_pops
            )));
        }
        if !values.len().is_multiple_of(n_pops) {
            return Err(Error::ShapeMismatch(format!(
                "{} values do not fill rows of {}",
                values.len(),
                n_pops
            )));
        }
        let n = values.len() / n_pops;
        if snp_ids.len() != n || chrom.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "{} rows but {} SNP ids and {} chromosome labels",
                n,
                snp_ids.len(),
                chrom.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / n_pops,
                col: pos % n_pops,
            });
        }
        Ok(FreqPanel {
            n_pops,
            values,
            snp_ids,
            chrom,
            pop_names,
            is_frequency: false,
        })
    }

    /// Flags the panel as frequency data and checks every value lies in `[0, 1]`.
    pub fn into_frequencies(mut self) -> Result<Self> {
        for (pos, &v) in self.values.iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                let (k, i) = (pos / self.n_pops, pos % self.n_pops);
                return Err(Error::NotAFrequency {
                    snp: self.snp_ids[k].clone(),
                    pop: self.pop_names[i].clone(),
                    value: v,
                });
            }
        }
        self.is_frequency = true;
        Ok(self)
    }

    pub fn with_chromosomes(mut self, chrom: Vec<Option<String>>) -> Result<Self> {
        if chrom.len() != self.n_snps() {
            return Err(Error::ShapeMismatch(format!(
                "{} chromosome labels for {} SNPs",
                chrom.len(),
                self.n_snps()
            )));
        }
        self.chrom = chrom;
        Ok(self)
    }

    pub fn with_pop_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n_pops {
            return Err(Error::ShapeMismatch(format!(
                "{} population names for {} columns",
                names.len(),
                self.n_pops
            )));
        }
        self.pop_names = names;
        Ok(self)
    }

    #[inline]
    pub fn n_snps(&self) -> usize {
        self.values.len() / self.n_pops
    }

    #[inline]
    pub fn n_pops(&self) -> usize {
        self.n_pops
    }

    #[inline]
    pub fn row(&self, k: usize) -> &[f64] {
        &self.values[k * self.n_pops..(k + 1) * self.n_pops]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn snp_ids(&self) -> &[String] {
        &self.snp_ids
    }

    pub fn chrom(&self) -> &[Option<String>] {
        &self.chrom
    }

    pub fn pop_names(&self) -> &[String] {
        &self.pop_names
    }

    pub fn is_frequency(&self) -> bool {
        self.is_frequency
    }

    /// Same metadata, new values (used by sampling and clamping).
    pub(crate) fn with_values(&self, values: Vec<f64>) -> FreqPanel {
        debug_assert_eq!(values.len(), self.values.len());
        FreqPanel {
            values,
            ..self.clone()
        }
    }
}

/// Disjoint pairs of SNP row indices; `Ŝ` averages outer products of within-pair differences.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairedPanel {
    pairs: Vec<(usize, usize)>,
}

impl PairedPanel {
    /// Rejects any index used more than once.
    pub fn new(pairs: Vec<(usize, usize)>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(pairs.len() * 2);
        for &(a, b) in &pairs {
            for idx in [a, b] {
                if !seen.insert(idx) {
                    return Err(Error::RepeatedPairIndex(idx));
                }
            }
        }
        Ok(PairedPanel { pairs })
    }

    /// `(0,1), (2,3), ...`; an odd trailing row is left out.
    pub fn consecutive(n: usize) -> Self {
        PairedPanel {
            pairs: (0..n / 2).map(|k| (2 * k, 2 * k + 1)).collect(),
        }
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub(crate) fn check_against(&self, n: usize) -> Result<()> {
        if self.pairs.is_empty() {
            return Err(Error::EmptyPairing);
        }
        for &(a, b) in &self.pairs {
            for index in [a, b] {
                if index >= n {
                    return Err(Error::PairIndexOutOfRange { index, n });
                }
            }
        }
        Ok(())
    }
}

/// Known per-SNP means `mu_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct KnownMeans(Vec<f64>);

impl KnownMeans {
    pub fn new(mu: Vec<f64>) -> Result<Self> {
        if let Some(row) = mu.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row, col: 0 });
        }
        Ok(KnownMeans(mu))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Kahan-compensated accumulator for a packed symmetric matrix.
#[derive(Clone)]
struct PackedKahan {
    sum: Vec<f64>,
    comp: Vec<f64>,
}

impl PackedKahan {
    fn new(len: usize) -> Self {
        PackedKahan {
            sum: vec![0.0; len],
            comp: vec![0.0; len],
        }
    }

    #[inline]
    fn add_at(&mut self, k: usize, x: f64) {
        let y = x - self.comp[k];
        let t = self.sum[k] + y;
        self.comp[k] = (t - self.sum[k]) - y;
        self.sum[k] = t;
    }

    fn add_outer(&mut self, x: &[f64]) {
        let m = x.len();
        let mut k = 0;
        for i in 0..m {
            let xi = x[i];
            for &xj in &x[i..] {
                self.add_at(k, xi * xj);
                k += 1;
            }
        }
    }

    fn merge(&mut self, other: &PackedKahan) {
        for k in 0..self.sum.len() {
            self.add_at(k, other.sum[k]);
            self.add_at(k, -other.comp[k]);
        }
    }
}

/// `sum_k x_k x_k^t` over `count` items, where `fill(k, buf)` writes item `k` into `buf`.
fn chunked_outer_sum<F>(count: usize, m: usize, chunk_size: usize, fill: F) -> Vec<f64>
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    let chunk_size = chunk_size.max(1);
    let len = m * (m + 1) / 2;
    let n_chunks = count.div_ceil(chunk_size);
    let partials: Vec<PackedKahan> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = PackedKahan::new(len);
            let mut buf = vec![0.0; m];
            let end = ((c + 1) * chunk_size).min(count);
            for k in c * chunk_size..end {
                fill(k, &mut buf);
                acc.add_outer(&buf);
            }
            acc
        })
        .collect();
    let mut total = PackedKahan::new(len);
    for p in &partials {
        total.merge(p);
    }
    total.sum
}

fn averaged(m: usize, sum: Vec<f64>, denom: f64) -> Result<SymMat> {
    SymMat::from_packed(m, sum.into_iter().map(|v| v / denom).collect())
}

/// `Y = (1/n) sum_k X^k (X^k)^t`.
pub fn moment_matrix(panel: &FreqPanel) -> Result<SymMat> {
    moment_matrix_chunked(panel, DEFAULT_CHUNK_SIZE)
}

pub fn moment_matrix_chunked(panel: &FreqPanel, chunk_size: usize) -> Result<SymMat> {
    let n = panel.n_snps();
    if n == 0 {
        return Err(Error::EmptyPanel);
    }
    let m = panel.n_pops();
    let sum = chunked_outer_sum(n, m, chunk_size, |k, buf| buf.copy_from_slice(panel.row(k)));
    averaged(m, sum, n as f64)
}

/// `Σ̂_ij = (1/n) sum_k (X_i^k - mu_k)(X_j^k - mu_k)` with known means.
pub fn sigma_hat(panel: &FreqPanel, means: &KnownMeans) -> Result<SymMat> {
    let n = panel.n_snps();
    if means.0.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} means for {} SNPs",
            means.0.len(),
            n
        )));
    }
    if n == 0 {
        return Err(Error::EmptyPanel);
    }
    let m = panel.n_pops();
    let sum = chunked_outer_sum(n, m, DEFAULT_CHUNK_SIZE, |k, buf| {
        let mu = means.0[k];
        for (b, x) in buf.iter_mut().zip(panel.row(k)) {
            *b = x - mu;
        }
    });
    averaged(m, sum, n as f64)
}

/// `Ŵ`: covariance around each SNP's across-population mean, `W(Y)`.
pub fn w_hat(panel: &FreqPanel) -> Result<SymMat> {
    Ok(apply_w(&moment_matrix(panel)?))
}

/// `D̂_ij = (1/n) sum_k (X_i^k - X_j^k)^2`, computed as `D(Y)`.
pub fn d_hat(panel: &FreqPanel) -> Result<SymMat> {
    Ok(apply_d(&moment_matrix(panel)?))
}

/// `V̂ = Y - (1/n) sum_k mu_hat_k^2 E`, computed in one pass as `V(Y)`.
pub fn v_hat(panel: &FreqPanel) -> Result<SymMat> {
    Ok(apply_v(&moment_matrix(panel)?))
}

/// The three single-pass statistics from one moment matrix.
#[derive(Clone, Debug)]
pub struct Estimates {
    pub moment: SymMat,
    pub w: SymMat,
    pub d: SymMat,
    pub v: SymMat,
}

pub fn estimate_all(panel: &FreqPanel, chunk_size: usize) -> Result<Estimates> {
    let moment = moment_matrix_chunked(panel, chunk_size)?;
    Ok(Estimates {
        w: apply_w(&moment),
        d: apply_d(&moment),
        v: apply_v(&moment),
        moment,
    })
}

/// `Ŝ = (1/(2P)) sum_pairs (X^b - X^a)(X^b - X^a)^t` over the `P` pairs.
pub fn s_hat(panel: &FreqPanel, pairing: &PairedPanel) -> Result<SymMat> {
    s_hat_chunked(panel, pairing, DEFAULT_CHUNK_SIZE)
}

pub fn s_hat_chunked(
    panel: &FreqPanel,
    pairing: &PairedPanel,
    chunk_size: usize,
) -> Result<SymMat> {
    pairing.check_against(panel.n_snps())?;
    let m = panel.n_pops();
    let pairs = pairing.pairs();
    let sum = chunked_outer_sum(pairs.len(), m, chunk_size, |k, buf| {
        let (a, b) = pairs[k];
        for ((d, xa), xb) in buf.iter_mut().zip(panel.row(a)).zip(panel.row(b)) {
            *d = xb - xa;
        }
    });
    averaged(m, sum, 2.0 * pairs.len() as f64)
}
