use std::path::PathBuf;

use popcov::estimators::{estimate_all, s_hat, FreqPanel, DEFAULT_CHUNK_SIZE};
use popcov::lsfit::{ls_pair as ls_pair_core, MatrixSubspace};
use popcov::pairing::pair_snps;
use popcov::rootsplit::{find_root_split, SearchMode};
use popcov::symcore::{self, OperatorKind, SymMat};
use popcov::treesim::{
    expected_sigma, expected_sigma1, scenario_tree, simulate_panel, theoretical_sigma, RootFreqLaw,
    ScenarioParams, SimConfig,
};
use popcov::{io, BiasForm, SampleSizes};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

type Rows = Vec<Vec<f64>>;

fn err(e: popcov::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_sym(rows: Rows) -> PyResult<SymMat> {
    SymMat::from_rows(&rows).map_err(err)
}

fn kind_of(name: &str) -> PyResult<OperatorKind> {
    match name {
        "W" | "w" => Ok(OperatorKind::W),
        "D" | "d" => Ok(OperatorKind::D),
        "V" | "v" => Ok(OperatorKind::V),
        "-D/2" | "halfnegd" => Ok(OperatorKind::HalfNegD),
        other => Err(PyValueError::new_err(format!("unknown operator '{other}'"))),
    }
}

/// Allele-frequency panel: one row per SNP, one column per population.
#[pyclass(name = "Panel", frozen)]
struct PyPanel {
    inner: FreqPanel,
}

#[pymethods]
impl PyPanel {
    #[new]
    #[pyo3(signature = (rows, chrom=None, pop_names=None))]
    fn new(
        rows: Rows,
        chrom: Option<Vec<Option<String>>>,
        pop_names: Option<Vec<String>>,
    ) -> PyResult<Self> {
        let mut panel = FreqPanel::from_rows(&rows).map_err(err)?;
        if let Some(c) = chrom {
            panel = panel.with_chromosomes(c).map_err(err)?;
        }
        if let Some(names) = pop_names {
            panel = panel.with_pop_names(names).map_err(err)?;
        }
        Ok(PyPanel { inner: panel })
    }

    /// Reads a panel TSV (gzip accepted with a `.gz` suffix).
    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(PyPanel {
            inner: io::read_panel(&path).map_err(err)?,
        })
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        io::write_panel(&path, &self.inner).map_err(err)
    }

    #[getter]
    fn n_snps(&self) -> usize {
        self.inner.n_snps()
    }

    #[getter]
    fn n_pops(&self) -> usize {
        self.inner.n_pops()
    }

    #[getter]
    fn pop_names(&self) -> Vec<String> {
        self.inner.pop_names().to_vec()
    }

    #[getter]
    fn chrom(&self) -> Vec<Option<String>> {
        self.inner.chrom().to_vec()
    }

    fn rows(&self) -> Rows {
        (0..self.inner.n_snps())
            .map(|k| self.inner.row(k).to_vec())
            .collect()
    }

    /// `(Ŵ, D̂, V̂)`, optionally corrected for binomial sampling with uniform size `sample_size`.
    #[pyo3(signature = (sample_size=None, bias_form="paper"))]
    fn estimates(&self, sample_size: Option<u32>, bias_form: &str) -> PyResult<(Rows, Rows, Rows)> {
        match sample_size {
            None => {
                let est = estimate_all(&self.inner, DEFAULT_CHUNK_SIZE).map_err(err)?;
                Ok((est.w.to_rows(), est.d.to_rows(), est.v.to_rows()))
            }
            Some(n) => {
                let form: BiasForm = bias_form.parse().map_err(err)?;
                let sizes = SampleSizes::uniform(self.inner.n_snps(), self.inner.n_pops(), n);
                let c = popcov::corrected_estimates(&self.inner, &sizes, form).map_err(err)?;
                Ok((c.w.to_rows(), c.d.to_rows(), c.v.to_rows()))
            }
        }
    }

    /// Cross-chromosome pairing as `(pairs, discarded)`.
    fn pairing(&self) -> PyResult<(Vec<(usize, usize)>, Vec<usize>)> {
        let out = pair_snps(&self.inner).map_err(err)?;
        Ok((out.pairing.pairs().to_vec(), out.discarded))
    }

    /// `Ŝ` over the cross-chromosome pairing.
    fn s_hat(&self) -> PyResult<Rows> {
        let out = pair_snps(&self.inner).map_err(err)?;
        Ok(s_hat(&self.inner, &out.pairing).map_err(err)?.to_rows())
    }

    fn __repr__(&self) -> String {
        format!(
            "Panel(n_snps={}, n_pops={})",
            self.inner.n_snps(),
            self.inner.n_pops()
        )
    }
}

/// Root bipartition; `group_a` holds population 0.
#[pyclass(name = "RootSplit", frozen, get_all)]
struct PyRootSplit {
    group_a: Vec<usize>,
    group_b: Vec<usize>,
    score: f64,
    mode: String,
    n_tied: usize,
}

#[pymethods]
impl PyRootSplit {
    fn __repr__(&self) -> String {
        format!(
            "RootSplit({:?} | {:?}, score={:e})",
            self.group_a, self.group_b, self.score
        )
    }
}

/// Least-squares fits of `V̂` in `L` and `Ŵ` in `W(L)`.
#[pyclass(name = "LsPair", frozen, get_all)]
struct PyLsPair {
    v_fit: Rows,
    w_fit: Rows,
    consistent: bool,
    gap: f64,
}

#[pyfunction]
fn apply_w(a: Rows) -> PyResult<Rows> {
    Ok(symcore::apply_w(&to_sym(a)?).to_rows())
}

#[pyfunction]
fn apply_d(a: Rows) -> PyResult<Rows> {
    Ok(symcore::apply_d(&to_sym(a)?).to_rows())
}

#[pyfunction]
fn apply_v(a: Rows) -> PyResult<Rows> {
    Ok(symcore::apply_v(&to_sym(a)?).to_rows())
}

/// Operator norm of `W`, `D`, `V` or `-D/2` on `m x m` symmetric matrices.
#[pyfunction]
fn operator_norm(kind: &str, m: usize) -> PyResult<f64> {
    symcore::operator_norm(kind_of(kind)?, m).map_err(err)
}

#[pyfunction]
fn kernel_dim(kind: &str, m: usize) -> PyResult<usize> {
    symcore::kernel_dim(kind_of(kind)?, m).map_err(err)
}

/// Bipartition minimizing the mean cross-group entry; `mode` is `auto`, `exhaustive` or `greedy`.
#[pyfunction]
#[pyo3(signature = (matrix, mode="auto"))]
fn root_split(matrix: Rows, mode: &str) -> PyResult<PyRootSplit> {
    let mode: SearchMode = mode.parse().map_err(err)?;
    let p = find_root_split(&to_sym(matrix)?, mode).map_err(err)?;
    Ok(PyRootSplit {
        group_a: p.group_a,
        group_b: p.group_b,
        score: p.score,
        mode: p.mode.to_string(),
        n_tied: p.n_tied,
    })
}

#[pyfunction]
fn ls_pair(vhat: Rows, what: Rows, basis: Vec<Rows>) -> PyResult<PyLsPair> {
    let vhat = to_sym(vhat)?;
    let basis = basis
        .into_iter()
        .map(to_sym)
        .collect::<PyResult<Vec<_>>>()?;
    let l = MatrixSubspace::spanned_by(vhat.dim(), basis).map_err(err)?;
    let pair = ls_pair_core(&vhat, &to_sym(what)?, &l).map_err(err)?;
    Ok(PyLsPair {
        v_fit: pair.v_fit.to_rows(),
        w_fit: pair.w_fit.to_rows(),
        consistent: pair.consistent,
        gap: pair.gap,
    })
}

fn scenario(m: usize, t: f64, b: f64, factor: f64, x0: Option<f64>) -> PyResult<ScenarioParams> {
    let law = match x0 {
        Some(x0) => RootFreqLaw::Fixed { x0 },
        None => RootFreqLaw::default(),
    };
    let p = ScenarioParams {
        m,
        t_split: t,
        b_duration: b,
        bottleneck_factor: factor,
        x0_law: law,
    };
    p.validate().map_err(err)?;
    Ok(p)
}

/// Simulated panel under the sequential-split scenario. `x0=None` draws root
/// frequencies uniformly from `[0.05, 0.95]`.
#[pyfunction]
#[pyo3(signature = (m, n, seed, t=0.00275, b=0.00005, factor=0.025, x0=None, block_size=1))]
#[allow(clippy::too_many_arguments)]
fn simulate_scenario(
    py: Python<'_>,
    m: usize,
    n: usize,
    seed: u64,
    t: f64,
    b: f64,
    factor: f64,
    x0: Option<f64>,
    block_size: usize,
) -> PyResult<PyPanel> {
    let tree = scenario_tree(&scenario(m, t, b, factor, x0)?).map_err(err)?;
    let cfg = SimConfig {
        block_size,
        ..SimConfig::new(n, seed)
    };
    let panel = py.detach(|| simulate_panel(&tree, &cfg)).map_err(err)?;
    Ok(PyPanel { inner: panel })
}

/// `(Σ, V(Σ), Σ1)` expected under the scenario's root-frequency law.
#[pyfunction]
#[pyo3(signature = (m, t=0.00275, b=0.00005, factor=0.025, x0=None))]
fn scenario_targets(
    m: usize,
    t: f64,
    b: f64,
    factor: f64,
    x0: Option<f64>,
) -> PyResult<(Rows, Rows, Rows)> {
    let tree = scenario_tree(&scenario(m, t, b, factor, x0)?).map_err(err)?;
    let sigma = expected_sigma(&tree);
    Ok((
        sigma.to_rows(),
        symcore::apply_v(&sigma).to_rows(),
        expected_sigma1(&tree).to_rows(),
    ))
}

/// Closed-form scenario covariance for a fixed root frequency.
#[pyfunction]
#[pyo3(signature = (m, x0, t=0.00275, b=0.00005, factor=0.025))]
fn scenario_sigma(m: usize, x0: f64, t: f64, b: f64, factor: f64) -> PyResult<Rows> {
    let tree = scenario_tree(&scenario(m, t, b, factor, Some(x0))?).map_err(err)?;
    Ok(theoretical_sigma(&tree, x0).map_err(err)?.to_rows())
}

#[pymodule]
#[pyo3(name = "popcov")]
fn popcov_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPanel>()?;
    m.add_class::<PyRootSplit>()?;
    m.add_class::<PyLsPair>()?;
    m.add_function(wrap_pyfunction!(apply_w, m)?)?;
    m.add_function(wrap_pyfunction!(apply_d, m)?)?;
    m.add_function(wrap_pyfunction!(apply_v, m)?)?;
    m.add_function(wrap_pyfunction!(operator_norm, m)?)?;
    m.add_function(wrap_pyfunction!(kernel_dim, m)?)?;
    m.add_function(wrap_pyfunction!(root_split, m)?)?;
    m.add_function(wrap_pyfunction!(ls_pair, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(scenario_targets, m)?)?;
    m.add_function(wrap_pyfunction!(scenario_sigma, m)?)?;
    Ok(())
}
