//! Binomial sampling-bias corrections for panels of sample allele frequencies.
//!
//! With `X^s = Z / (2N)`, `Z ~ Bin(2N, X)`, the sampling noise adds a diagonal matrix to the
//! expected outer-product moments. The per-entry bias term comes in two forms:
//!
//! * [`BiasForm::Paper`]: `x(1-x) / (8 N^2 (N-1))`, the published correction, kept verbatim.
//! * [`BiasForm::Alt`]: `x(1-x) / (2N-1)`, which is unbiased for `E[(X^s - X)^2] = X(1-X)/(2N)`
//!   when `x` is the sample frequency, since `E[X^s(1-X^s)] = X(1-X)(1 - 1/(2N))`.
//!
//! The two disagree numerically; the paper form is the default.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{estimate_all, FreqPanel, PairedPanel, DEFAULT_CHUNK_SIZE};
use crate::symcore::{apply_d, apply_v, apply_w, SymMat};

/// Diploid sample sizes `N_ik`, one per panel cell, row-major like [`FreqPanel`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSizes {
    n_pops: usize,
    sizes: Vec<u32>,
}

impl SampleSizes {
    pub fn new(n_pops: usize, sizes: Vec<u32>) -> Result<Self> {
        if n_pops == 0 || !sizes.len().is_multiple_of(n_pops) {
            return Err(Error::ShapeMismatch(format!(
                "{} sample sizes do not fill rows of {}",
                sizes.len(),
                n_pops
            )));
        }
        Ok(SampleSizes { n_pops, sizes })
    }

    /// Every cell set to `n`.
    pub fn uniform(n_snps: usize, n_pops: usize, n: u32) -> Self {
        SampleSizes {
            n_pops,
            sizes: vec![n; n_snps * n_pops],
        }
    }

    pub fn n_snps(&self) -> usize {
        self.sizes.len() / self.n_pops
    }

    pub fn n_pops(&self) -> usize {
        self.n_pops
    }

    #[inline]
    pub fn row(&self, k: usize) -> &[u32] {
        &self.sizes[k * self.n_pops..(k + 1) * self.n_pops]
    }

    pub fn sizes(&self) -> &[u32] {
        &self.sizes
    }

    /// Shape must match the panel and every `N_ik` must be at least 2.
    pub fn validate_for(&self, panel: &FreqPanel) -> Result<()> {
        if self.n_pops != panel.n_pops() || self.n_snps() != panel.n_snps() {
            return Err(Error::ShapeMismatch(format!(
                "sample sizes are {}x{}, panel is {}x{}",
                self.n_snps(),
                self.n_pops,
                panel.n_snps(),
                panel.n_pops()
            )));
        }
        if let Some(pos) = self.sizes.iter().position(|&s| s < 2) {
            let (k, i) = (pos / self.n_pops, pos % self.n_pops);
            return Err(Error::SampleSizeTooSmall {
                snp: panel.snp_ids()[k].clone(),
                pop: panel.pop_names()[i].clone(),
                size: self.sizes[pos],
            });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BiasForm {
    #[default]
    Paper,
    Alt,
}

impl BiasForm {
    /// Bias contribution of one cell with sample frequency `x` and diploid size `n`.
    #[inline]
    pub fn term(self, x: f64, n: u32) -> f64 {
        let n = n as f64;
        let het = x * (1.0 - x);
        match self {
            BiasForm::Paper => het / (8.0 * n * n * (n - 1.0)),
            BiasForm::Alt => het / (2.0 * n - 1.0),
        }
    }
}

impl fmt::Display for BiasForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BiasForm::Paper => "paper",
            BiasForm::Alt => "alt",
        })
    }
}

impl FromStr for BiasForm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(BiasForm::Paper),
            "alt" => Ok(BiasForm::Alt),
            other => Err(Error::InvalidParameter(format!(
                "bias form must be 'paper' or 'alt', got '{other}'"
            ))),
        }
    }
}

/// Sums `term` over the listed rows for each population, in chunk order.
fn diagonal_sum(
    panel: &FreqPanel,
    sizes: &SampleSizes,
    rows: &[usize],
    form: BiasForm,
) -> Vec<f64> {
    let m = panel.n_pops();
    let partials: Vec<Vec<f64>> = rows
        .par_chunks(DEFAULT_CHUNK_SIZE)
        .map(|chunk| {
            let mut acc = vec![0.0; m];
            for &k in chunk {
                for ((a, &x), &n) in acc.iter_mut().zip(panel.row(k)).zip(sizes.row(k)) {
                    *a += form.term(x, n);
                }
            }
            acc
        })
        .collect();
    let mut total = vec![0.0; m];
    for p in partials {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    total
}

fn diagonal_matrix(diag: &[f64]) -> Result<SymMat> {
    SymMat::from_fn(diag.len(), |i, j| if i == j { diag[i] } else { 0.0 })
}

/// Bias of the moment matrix `Y^s`: diagonal with `(1/n) sum_k term(X_i^{s,k}, N_ik)`.
pub fn bias_moment(panel: &FreqPanel, sizes: &SampleSizes, form: BiasForm) -> Result<SymMat> {
    sizes.validate_for(panel)?;
    let n = panel.n_snps();
    if n == 0 {
        return Err(Error::EmptyPanel);
    }
    let rows: Vec<usize> = (0..n).collect();
    let sum = diagonal_sum(panel, sizes, &rows, form);
    diagonal_matrix(&sum.iter().map(|s| s / n as f64).collect::<Vec<_>>())
}

/// Bias-corrected `(Ŵ, D̂, V̂)`.
#[derive(Clone, Debug)]
pub struct Corrected {
    pub w: SymMat,
    pub d: SymMat,
    pub v: SymMat,
    pub bias: SymMat,
}

/// `(Ŵ - W(B), D̂ - D(B), V̂ - V(B))` with `B` = [`bias_moment`].
pub fn corrected_estimates(
    panel: &FreqPanel,
    sizes: &SampleSizes,
    form: BiasForm,
) -> Result<Corrected> {
    let bias = bias_moment(panel, sizes, form)?;
    let est = estimate_all(panel, DEFAULT_CHUNK_SIZE)?;
    Ok(Corrected {
        w: &est.w - &apply_w(&bias),
        d: &est.d - &apply_d(&bias),
        v: &est.v - &apply_v(&bias),
        bias,
    })
}

/// Bias of `Ŝ`: diagonal with `(1/(2P)) sum_pairs [term(a) + term(b)]`.
pub fn bias_s(
    panel: &FreqPanel,
    pairing: &PairedPanel,
    sizes: &SampleSizes,
    form: BiasForm,
) -> Result<SymMat> {
    sizes.validate_for(panel)?;
    pairing.check_against(panel.n_snps())?;
    let rows: Vec<usize> = pairing.pairs().iter().flat_map(|&(a, b)| [a, b]).collect();
    let sum = diagonal_sum(panel, sizes, &rows, form);
    let denom = 2.0 * pairing.len() as f64;
    diagonal_matrix(&sum.iter().map(|s| s / denom).collect::<Vec<_>>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{moment_matrix, s_hat, v_hat};

    fn panel(rows: &[&[f64]]) -> FreqPanel {
        FreqPanel::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn is_diagonal(a: &SymMat) -> bool {
        (0..a.dim()).all(|i| (0..a.dim()).all(|j| i == j || a.get(i, j) == 0.0))
    }

    #[test]
    fn bias_moment_single_snp() {
        let p = panel(&[&[0.5, 0.5]]);
        let b = bias_moment(&p, &SampleSizes::uniform(1, 2, 10), BiasForm::Paper).unwrap();
        assert!((b.get(0, 0) - 0.25 / 7200.0).abs() < 1e-18);
        assert!((b.get(0, 0) - 3.4722e-5).abs() < 1e-9);
        assert_eq!(b.get(0, 1), 0.0);
    }

    #[test]
    fn fixed_alleles_contribute_nothing() {
        let p = panel(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let s = SampleSizes::uniform(2, 2, 7);
        for form in [BiasForm::Paper, BiasForm::Alt] {
            assert_eq!(bias_moment(&p, &s, form).unwrap().max_abs(), 0.0);
            assert_eq!(
                bias_s(&p, &PairedPanel::consecutive(2), &s, form)
                    .unwrap()
                    .max_abs(),
                0.0
            );
            let c = corrected_estimates(&p, &s, form).unwrap();
            assert_eq!(c.v, v_hat(&p).unwrap());
        }
    }

    #[test]
    fn equal_rows_average_to_one_row() {
        let one = bias_moment(
            &panel(&[&[0.3, 0.6]]),
            &SampleSizes::uniform(1, 2, 12),
            BiasForm::Paper,
        )
        .unwrap();
        let two = bias_moment(
            &panel(&[&[0.3, 0.6], &[0.3, 0.6]]),
            &SampleSizes::uniform(2, 2, 12),
            BiasForm::Paper,
        )
        .unwrap();
        assert!(one.max_abs_diff(&two) < 1e-20);
    }

    #[test]
    fn uniform_bias_gives_constant_distance_correction() {
        // every cell has the same term β, so D(B) is 2β off the diagonal
        let p = panel(&[&[0.5, 0.5, 0.5], &[0.5, 0.5, 0.5]]);
        let s = SampleSizes::uniform(2, 3, 10);
        let beta = BiasForm::Paper.term(0.5, 10);
        let c = corrected_estimates(&p, &s, BiasForm::Paper).unwrap();
        let raw = crate::estimators::d_hat(&p).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 0.0 } else { -2.0 * beta };
                assert!((c.d.get(i, j) - raw.get(i, j) - expect).abs() < 1e-18);
            }
        }
    }

    #[test]
    fn corrected_v_is_v_of_corrected_moment() {
        let p = panel(&[&[0.1, 0.4, 0.8], &[0.5, 0.35, 0.2], &[0.9, 0.6, 0.05]]);
        let s = SampleSizes::new(3, vec![5, 6, 7, 8, 9, 10, 11, 12, 13]).unwrap();
        for form in [BiasForm::Paper, BiasForm::Alt] {
            let c = corrected_estimates(&p, &s, form).unwrap();
            let y = moment_matrix(&p).unwrap();
            let expect = apply_v(&(&y - &c.bias));
            assert!(c.v.max_abs_diff(&expect) < 1e-15);
            assert!(is_diagonal(&c.bias));
            assert!(c.bias.diagonal().iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn bias_s_examples() {
        let p = panel(&[&[0.5, 0.5], &[0.5, 0.5]]);
        let s = SampleSizes::uniform(2, 2, 10);
        let pairs = PairedPanel::consecutive(2);
        let b = bias_s(&p, &pairs, &s, BiasForm::Paper).unwrap();
        assert!((b.get(0, 0) - 0.25 / 7200.0).abs() < 1e-18);
        assert!(is_diagonal(&b));

        // doubling N scales each term by N^2 (N-1) / ((2N)^2 (2N-1))
        let p = panel(&[&[0.3, 0.7], &[0.2, 0.9]]);
        let n = 10u32;
        let b1 = bias_s(&p, &pairs, &SampleSizes::uniform(2, 2, n), BiasForm::Paper).unwrap();
        let b2 = bias_s(
            &p,
            &pairs,
            &SampleSizes::uniform(2, 2, 2 * n),
            BiasForm::Paper,
        )
        .unwrap();
        let nf = n as f64;
        let ratio = nf * nf * (nf - 1.0) / ((2.0 * nf).powi(2) * (2.0 * nf - 1.0));
        for i in 0..2 {
            assert!((b2.get(i, i) / b1.get(i, i) - ratio).abs() < 1e-12);
        }
        // sanity: bias_s uses the same sample frequencies Ŝ does
        assert!(s_hat(&p, &pairs).is_ok());
    }

    #[test]
    fn rejects_small_or_misshaped_sizes() {
        let p = panel(&[&[0.5, 0.5]]);
        let err = bias_moment(
            &p,
            &SampleSizes::new(2, vec![10, 1]).unwrap(),
            BiasForm::Alt,
        )
        .unwrap_err();
        match err {
            Error::SampleSizeTooSmall { snp, pop, size } => {
                assert_eq!((snp.as_str(), pop.as_str(), size), ("snp1", "pop2", 1));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            bias_moment(&p, &SampleSizes::uniform(2, 2, 10), BiasForm::Paper),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn bias_form_parses() {
        assert_eq!("alt".parse::<BiasForm>().unwrap(), BiasForm::Alt);
        assert_eq!("paper".parse::<BiasForm>().unwrap(), BiasForm::Paper);
        assert!("other".parse::<BiasForm>().is_err());
        assert_eq!(BiasForm::Alt.term(0.5, 10), 0.25 / 19.0);
    }
}
