//! Drift on a rooted tree under the normal approximation, and the sequential-split
//! bottleneck scenario.
//!
//! A SNP with root frequency `x0` has leaf value `x0 + C_r + sum_{e on path} C_e`, where
//! `C_r ~ N(0, tau v)`, `C_e ~ N(0, d_e v)` and `v = x0 (1 - x0)`. The leaf covariance is
//! therefore `v (tau E + shared path drift)`.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::biascorr::SampleSizes;
use crate::error::{Error, Result};
use crate::estimators::FreqPanel;
use crate::symcore::SymMat;

/// Distribution of the per-SNP root frequency `x0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "lowercase")]
pub enum RootFreqLaw {
    Fixed { x0: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl Default for RootFreqLaw {
    fn default() -> Self {
        RootFreqLaw::Uniform { lo: 0.05, hi: 0.95 }
    }
}

impl RootFreqLaw {
    pub fn validate(&self) -> Result<()> {
        match *self {
            RootFreqLaw::Fixed { x0 } if (0.0..=1.0).contains(&x0) => Ok(()),
            RootFreqLaw::Uniform { lo, hi } if 0.0 <= lo && lo < hi && hi <= 1.0 => Ok(()),
            other => Err(Error::InvalidParameter(format!(
                "invalid root frequency law {other}"
            ))),
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            RootFreqLaw::Fixed { x0 } => x0,
            RootFreqLaw::Uniform { lo, hi } => rng.random_range(lo..hi),
        }
    }

    /// `E[x0 (1 - x0)]`.
    pub fn mean_heterozygosity(&self) -> f64 {
        match *self {
            RootFreqLaw::Fixed { x0 } => x0 * (1.0 - x0),
            RootFreqLaw::Uniform { lo, hi } => {
                let mean = 0.5 * (lo + hi);
                let second = (lo * lo + lo * hi + hi * hi) / 3.0;
                mean - second
            }
        }
    }

    /// `Var(x0)`.
    pub fn variance(&self) -> f64 {
        match *self {
            RootFreqLaw::Fixed { .. } => 0.0,
            RootFreqLaw::Uniform { lo, hi } => (hi - lo).powi(2) / 12.0,
        }
    }
}

impl fmt::Display for RootFreqLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RootFreqLaw::Fixed { x0 } => write!(f, "{x0}"),
            RootFreqLaw::Uniform { lo, hi } => write!(f, "uniform:{lo}:{hi}"),
        }
    }
}

/// Parses `0.5` (fixed) or `uniform:0.05:0.95`.
impl FromStr for RootFreqLaw {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("cannot parse root frequency law '{s}'"));
        let law = if let Some(rest) = s.strip_prefix("uniform:") {
            let (lo, hi) = rest.split_once(':').ok_or_else(bad)?;
            RootFreqLaw::Uniform {
                lo: lo.trim().parse().map_err(|_| bad())?,
                hi: hi.trim().parse().map_err(|_| bad())?,
            }
        } else {
            RootFreqLaw::Fixed {
                x0: s.trim().parse().map_err(|_| bad())?,
            }
        };
        law.validate()?;
        Ok(law)
    }
}

/// Rooted tree with per-edge drift lengths and a root tip of variance `tau`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeModel {
    /// `parent[v]` is `None` exactly for the root.
    parent: Vec<Option<usize>>,
    /// Drift on the edge from `v` to its parent (ignored for the root).
    edge_drift: Vec<f64>,
    /// Node of leaf `i`, in population order.
    leaves: Vec<usize>,
    root_tip_var: f64,
    root_freq_law: RootFreqLaw,
    /// Nodes with every parent before its children.
    #[serde(skip)]
    order: Vec<usize>,
}

impl TreeModel {
    pub fn new(
        parent: Vec<Option<usize>>,
        edge_drift: Vec<f64>,
        leaves: Vec<usize>,
        root_tip_var: f64,
        root_freq_law: RootFreqLaw,
    ) -> Result<Self> {
        let n = parent.len();
        let bad = |msg: String| Err(Error::InvalidTree(msg));
        if edge_drift.len() != n {
            return bad(format!("{} drift values for {} nodes", edge_drift.len(), n));
        }
        if let Some(v) = edge_drift
            .iter()
            .position(|d| !(d.is_finite() && *d >= 0.0))
        {
            return bad(format!(
                "edge above node {v} has invalid drift {}",
                edge_drift[v]
            ));
        }
        if !(root_tip_var.is_finite() && root_tip_var >= 0.0) {
            return bad(format!(
                "root tip variance {root_tip_var} must be non-negative"
            ));
        }
        root_freq_law.validate()?;
        let roots: Vec<usize> = (0..n).filter(|&v| parent[v].is_none()).collect();
        if roots.len() != 1 {
            return bad(format!("expected one root, found {}", roots.len()));
        }
        let mut children = vec![Vec::new(); n];
        for (v, p) in parent.iter().enumerate() {
            if let Some(p) = *p {
                if p >= n {
                    return bad(format!("node {v} has parent {p} out of range"));
                }
                children[p].push(v);
            }
        }
        let mut order = Vec::with_capacity(n);
        let mut stack = vec![roots[0]];
        while let Some(v) = stack.pop() {
            order.push(v);
            stack.extend(children[v].iter().rev());
        }
        if order.len() != n {
            return bad("tree is not connected or contains a cycle".into());
        }
        let childless: Vec<usize> = (0..n).filter(|&v| children[v].is_empty()).collect();
        let mut sorted_leaves = leaves.clone();
        sorted_leaves.sort_unstable();
        if sorted_leaves != childless {
            return bad("leaf list must name every childless node exactly once".into());
        }
        if leaves.len() < 2 {
            return Err(Error::DimTooSmall(leaves.len()));
        }
        Ok(TreeModel {
            parent,
            edge_drift,
            leaves,
            root_tip_var,
            root_freq_law,
            order,
        })
    }

    /// Two leaves hanging off the root with drifts `sigma1`, `sigma2`.
    pub fn two_leaf(sigma1: f64, sigma2: f64, tau: f64, law: RootFreqLaw) -> Result<Self> {
        Self::new(
            vec![None, Some(0), Some(0)],
            vec![0.0, sigma1, sigma2],
            vec![1, 2],
            tau,
            law,
        )
    }

    /// Leaf 1 on its own root branch (`sigma11`); leaves 2 and 3 below an internal
    /// edge `sigma12` with pendant edges `sigma2`, `sigma3`.
    pub fn three_leaf(
        sigma11: f64,
        sigma12: f64,
        sigma2: f64,
        sigma3: f64,
        tau: f64,
        law: RootFreqLaw,
    ) -> Result<Self> {
        Self::new(
            vec![None, Some(0), Some(0), Some(2), Some(2)],
            vec![0.0, sigma11, sigma12, sigma2, sigma3],
            vec![1, 3, 4],
            tau,
            law,
        )
    }

    pub fn n_leaves(&self) -> usize {
        self.leaves.len()
    }

    pub fn root_tip_var(&self) -> f64 {
        self.root_tip_var
    }

    pub fn root_freq_law(&self) -> RootFreqLaw {
        self.root_freq_law
    }

    pub fn with_root_freq_law(mut self, law: RootFreqLaw) -> Result<Self> {
        law.validate()?;
        self.root_freq_law = law;
        Ok(self)
    }

    pub fn with_root_tip_var(mut self, tau: f64) -> Result<Self> {
        if !(tau.is_finite() && tau >= 0.0) {
            return Err(Error::InvalidTree(format!(
                "root tip variance {tau} must be non-negative"
            )));
        }
        self.root_tip_var = tau;
        Ok(self)
    }

    fn path_to_root(&self, mut v: usize) -> Vec<usize> {
        let mut path = Vec::new();
        while let Some(p) = self.parent[v] {
            path.push(v);
            v = p;
        }
        path
    }

    /// `tau E + shared path drift`, without the `x0 (1 - x0)` factor. Path sums use
    /// compensated summation so repeated equal edges add up to within an ulp of the product.
    pub fn covariance_kernel(&self) -> SymMat {
        let paths: Vec<Vec<usize>> = self.leaves.iter().map(|&l| self.path_to_root(l)).collect();
        SymMat::from_fn(self.leaves.len(), |i, j| {
            let mut sum = TwoSum::default();
            sum.add(self.root_tip_var);
            for e in paths[i].iter().filter(|e| paths[j].contains(e)) {
                sum.add(self.edge_drift[*e]);
            }
            sum.value()
        })
        .expect("trees have at least two leaves")
    }
}

/// Neumaier compensated sum.
#[derive(Default)]
struct TwoSum {
    sum: f64,
    comp: f64,
}

impl TwoSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// `Σ` for a fixed root frequency: `x0 (1 - x0) (tau E + shared path drift)`.
pub fn theoretical_sigma(tree: &TreeModel, x0: f64) -> Result<SymMat> {
    if !(0.0..=1.0).contains(&x0) {
        return Err(Error::InvalidParameter(format!(
            "root frequency {x0} outside [0, 1]"
        )));
    }
    Ok(tree.covariance_kernel().scale(x0 * (1.0 - x0)))
}

/// `Σ` averaged over the tree's root frequency law (the target of `V̂` after `V`).
pub fn expected_sigma(tree: &TreeModel) -> SymMat {
    tree.covariance_kernel()
        .scale(tree.root_freq_law.mean_heterozygosity())
}

/// `Σ1 = Σ0 + Var(x0) E`, the expectation of `Ŝ` when SNP means vary with `x0`.
pub fn expected_sigma1(tree: &TreeModel) -> SymMat {
    let m = tree.n_leaves();
    &expected_sigma(tree)
        + &SymMat::ones(m)
            .expect("m >= 2")
            .scale(tree.root_freq_law.variance())
}

/// Sequential splits at equidistant times, each outbranching lineage bottlenecked.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioParams {
    pub m: usize,
    /// Split spacing `T`.
    pub t_split: f64,
    /// Bottleneck duration `B`.
    pub b_duration: f64,
    /// Population size during the bottleneck, relative to the original size.
    pub bottleneck_factor: f64,
    pub x0_law: RootFreqLaw,
}

impl ScenarioParams {
    pub fn short_branch(m: usize) -> Self {
        ScenarioParams {
            m,
            t_split: 0.00275,
            b_duration: 0.00005,
            bottleneck_factor: 0.025,
            x0_law: RootFreqLaw::default(),
        }
    }

    pub fn long_branch(m: usize) -> Self {
        ScenarioParams {
            m,
            t_split: 0.1375,
            b_duration: 0.0025,
            bottleneck_factor: 0.025,
            x0_law: RootFreqLaw::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParameter(msg.to_string()));
        if self.m < 2 {
            return Err(Error::DimTooSmall(self.m));
        }
        if !(self.t_split.is_finite() && self.t_split > 0.0) {
            return bad("split spacing T must be positive");
        }
        if !(self.b_duration >= 0.0 && self.b_duration <= self.t_split) {
            return bad("bottleneck duration B must lie in [0, T]");
        }
        if !(self.bottleneck_factor > 0.0 && self.bottleneck_factor <= 1.0) {
            return bad("bottleneck factor must lie in (0, 1]");
        }
        self.x0_law.validate()
    }

    /// Drift of one bottlenecked inter-split segment, `T - B + B / factor`.
    pub fn segment_drift(&self) -> f64 {
        self.t_split - self.b_duration + self.b_duration / self.bottleneck_factor
    }
}

/// Caterpillar tree: population 1 hangs off the root with drift `(m-1) T`; population
/// `i >= 2` splits from `i-1` at time `T (m + 1 - i)` before present, and every lineage
/// created by a split carries one bottlenecked segment.
pub fn scenario_tree(params: &ScenarioParams) -> Result<TreeModel> {
    params.validate()?;
    let m = params.m;
    let t = params.t_split;
    let seg = params.segment_drift();

    // node 0: root; nodes 1..=m: leaves; then internal chain nodes c_2..c_{m-1}
    let mut parent = vec![None; m + 1];
    let mut drift = vec![0.0; m + 1];
    let chain_node = |parent: &mut Vec<Option<usize>>, drift: &mut Vec<f64>, above: usize| {
        parent.push(Some(above));
        drift.push(seg);
        parent.len() - 1
    };

    parent[1] = Some(0);
    drift[1] = (m - 1) as f64 * t;
    let mut above = 0;
    for i in 2..m {
        let c = chain_node(&mut parent, &mut drift, above);
        parent[i] = Some(c);
        drift[i] = (m - i) as f64 * t;
        above = c;
    }
    parent[m] = Some(above);
    drift[m] = seg;

    TreeModel::new(parent, drift, (1..=m).collect(), 0.0, params.x0_law)
}

/// Knobs for [`simulate_panel`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_snps: usize,
    pub seed: u64,
    /// Clamp leaf values to `[0, 1]`; biases `V̂` relative to the normal theory.
    pub clamp: bool,
    /// SNPs per linkage block; SNPs in one block share their drift increments.
    pub block_size: usize,
    /// Blocks are dealt round-robin onto this many chromosomes (labels `1..=n_chrom`).
    pub n_chrom: usize,
}

impl SimConfig {
    pub fn new(n_snps: usize, seed: u64) -> Self {
        SimConfig {
            n_snps,
            seed,
            clamp: false,
            block_size: 1,
            n_chrom: 22,
        }
    }
}

/// Stream ids for the two uses of a seed.
const DRIFT_STREAM: u64 = 0;
const SAMPLING_STREAM: u64 = 1 << 63;

fn substream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Draws a panel of `n_snps` SNPs on the tree's leaves. Each linkage block draws from
/// its own ChaCha stream keyed by `(seed, block index)`, so output does not depend on
/// the number of worker threads.
pub fn simulate_panel(tree: &TreeModel, cfg: &SimConfig) -> Result<FreqPanel> {
    if cfg.n_snps == 0 {
        return Err(Error::InvalidParameter("n_snps must be at least 1".into()));
    }
    if cfg.block_size == 0 || cfg.n_chrom == 0 {
        return Err(Error::InvalidParameter(
            "block size and chromosome count must be positive".into(),
        ));
    }
    let m = tree.n_leaves();
    let n_nodes = tree.parent.len();
    let sd_edge: Vec<f64> = tree.edge_drift.iter().map(|d| d.sqrt()).collect();
    let sd_root = tree.root_tip_var.sqrt();
    let law = tree.root_freq_law;

    let mut values = vec![0.0; cfg.n_snps * m];
    values
        .par_chunks_mut(cfg.block_size * m)
        .enumerate()
        .for_each(|(block, out)| {
            let mut rng = substream(cfg.seed, DRIFT_STREAM + block as u64);
            // standardized displacement of every node, shared by the block
            let mut offset = vec![0.0; n_nodes];
            for &v in &tree.order {
                let z: f64 = rng.sample(StandardNormal);
                offset[v] = match tree.parent[v] {
                    None => sd_root * z,
                    Some(p) => offset[p] + sd_edge[v] * z,
                };
            }
            for row in out.chunks_mut(m) {
                let x0 = law.sample(&mut rng);
                let sd = (x0 * (1.0 - x0)).sqrt();
                for (x, &leaf) in row.iter_mut().zip(&tree.leaves) {
                    let v = x0 + sd * offset[leaf];
                    *x = if cfg.clamp { v.clamp(0.0, 1.0) } else { v };
                }
            }
        });

    let n = cfg.n_snps;
    let chrom = (0..n)
        .map(|k| Some(((k / cfg.block_size) % cfg.n_chrom + 1).to_string()))
        .collect();
    FreqPanel::new(
        m,
        values,
        (1..=n).map(|k| format!("snp{k}")).collect(),
        chrom,
        (1..=m).map(|i| format!("pop{i}")).collect(),
    )
}

/// Sample frequencies `Z / (2N)` with `Z ~ Bin(2N, X)`, plus how many population values
/// had to be truncated into `[0, 1]` first. SNP `k` draws from stream `(seed, k)`.
pub fn binomial_sample(
    panel: &FreqPanel,
    sizes: &SampleSizes,
    seed: u64,
) -> Result<(FreqPanel, usize)> {
    let m = panel.n_pops();
    if sizes.n_pops() != m || sizes.n_snps() != panel.n_snps() {
        return Err(Error::ShapeMismatch(format!(
            "sample sizes are {}x{}, panel is {}x{}",
            sizes.n_snps(),
            sizes.n_pops(),
            panel.n_snps(),
            m
        )));
    }
    if let Some(pos) = sizes.sizes().iter().position(|&s| s == 0) {
        return Err(Error::InvalidParameter(format!(
            "sample size must be positive (SNP {}, population {})",
            panel.snp_ids()[pos / m],
            panel.pop_names()[pos % m]
        )));
    }
    let results: Vec<(Vec<f64>, usize)> = (0..panel.n_snps())
        .into_par_iter()
        .map(|k| {
            let mut rng = substream(seed, SAMPLING_STREAM + k as u64);
            let mut clamped = 0;
            let row = panel
                .row(k)
                .iter()
                .zip(sizes.row(k))
                .map(|(&x, &n)| {
                    let p = x.clamp(0.0, 1.0);
                    if p != x {
                        clamped += 1;
                    }
                    let trials = 2 * n as u64;
                    let z = Binomial::new(trials, p)
                        .expect("p in [0, 1]")
                        .sample(&mut rng);
                    z as f64 / trials as f64
                })
                .collect();
            (row, clamped)
        })
        .collect();
    let clamped = results.iter().map(|(_, c)| c).sum();
    let values = results.into_iter().flat_map(|(r, _)| r).collect();
    Ok((panel.with_values(values).into_frequencies()?, clamped))
}
