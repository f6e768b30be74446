//! Python bindings. Matrices cross the boundary as lists of rows.

use std::path::PathBuf;

use dncb_mf::eval::CellScore;
use dncb_mf::model::generate as generate_model;
use dncb_mf::randist::{sample_dncb as draw_dncb, BesselSampler};
use dncb_mf::{io, BesselParams, RngStream};
use ndarray::Array2;
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

create_exception!(
    dncbmf,
    DncbError,
    PyException,
    "Raised for any error reported by dncb-mf."
);

fn err(e: dncb_mf::Error) -> PyErr {
    DncbError::new_err(e.to_string())
}

type Rows = Vec<Vec<f64>>;

fn to_array(rows: Rows) -> PyResult<Array2<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(DncbError::new_err("rows have different lengths"));
    }
    Array2::from_shape_vec((n, m), rows.into_iter().flatten().collect()).map_err(|e| DncbError::new_err(e.to_string()))
}

fn to_rows<T: Copy + Into<f64>>(a: &Array2<T>) -> Rows {
    a.rows()
        .into_iter()
        .map(|r| r.iter().map(|&x| x.into()).collect())
        .collect()
}

#[pyclass(name = "Hyperparams", from_py_object)]
#[derive(Clone)]
pub struct PyHyperparams {
    inner: dncb_mf::Hyperparams,
}

#[pymethods]
impl PyHyperparams {
    #[new]
    #[pyo3(signature = (k=10, eps1=0.75, eps2=0.75, a0=0.1, b0=0.1, e0=0.1, f0=0.1))]
    fn new(k: usize, eps1: f64, eps2: f64, a0: f64, b0: f64, e0: f64, f0: f64) -> PyResult<Self> {
        let inner = dncb_mf::Hyperparams {
            eps1,
            eps2,
            a0,
            b0,
            e0,
            f0,
            k,
        };
        inner.validate().map_err(err)?;
        Ok(PyHyperparams { inner })
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k
    }
    #[getter]
    fn eps1(&self) -> f64 {
        self.inner.eps1
    }
    #[getter]
    fn eps2(&self) -> f64 {
        self.inner.eps2
    }

    fn __repr__(&self) -> String {
        let h = &self.inner;
        format!(
            "Hyperparams(k={}, eps1={}, eps2={}, a0={}, b0={}, e0={}, f0={})",
            h.k, h.eps1, h.eps2, h.a0, h.b0, h.e0, h.f0
        )
    }
}

#[pyclass(name = "SamplerConfig", from_py_object)]
#[derive(Clone)]
pub struct PySamplerConfig {
    inner: dncb_mf::SamplerConfig,
}

#[pymethods]
impl PySamplerConfig {
    #[new]
    #[pyo3(signature = (burnin=1000, total=2000, thin=20, seed=0, parallel=false))]
    fn new(burnin: usize, total: usize, thin: usize, seed: u64, parallel: bool) -> PyResult<Self> {
        let inner = dncb_mf::SamplerConfig {
            burnin,
            total,
            thin,
            seed,
            parallel,
        };
        inner.validate().map_err(err)?;
        Ok(PySamplerConfig { inner })
    }

    /// Number of saved snapshots.
    #[getter]
    fn n_snapshots(&self) -> usize {
        self.inner.n_snapshots()
    }

    fn __repr__(&self) -> String {
        let s = &self.inner;
        format!(
            "SamplerConfig(burnin={}, total={}, thin={}, seed={}, parallel={})",
            s.burnin,
            s.total,
            s.thin,
            s.seed,
            if s.parallel { "True" } else { "False" }
        )
    }
}

/// Matrix of proportions; values at 0 or 1 are clamped inward.
#[pyclass(name = "BetaMatrix", from_py_object)]
#[derive(Clone)]
pub struct PyBetaMatrix {
    inner: dncb_mf::BetaMatrix,
}

#[pymethods]
impl PyBetaMatrix {
    #[new]
    #[pyo3(signature = (values, row_ids=None, col_ids=None))]
    fn new(values: Rows, row_ids: Option<Vec<String>>, col_ids: Option<Vec<String>>) -> PyResult<Self> {
        let a = to_array(values)?;
        let inner = match (row_ids, col_ids) {
            (None, None) => dncb_mf::BetaMatrix::from_values(a),
            (r, c) => {
                let (n, m) = a.dim();
                let r = r.unwrap_or_else(|| (0..n).map(|i| format!("s{i}")).collect());
                let c = c.unwrap_or_else(|| (0..m).map(|j| format!("g{j}")).collect());
                dncb_mf::BetaMatrix::new(a, r, c)
            }
        }
        .map_err(err)?;
        Ok(PyBetaMatrix { inner })
    }

    /// Reads a tab-delimited matrix with a header row and a label column.
    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        io::read_beta_matrix(&path)
            .map(|inner| PyBetaMatrix { inner })
            .map_err(err)
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        io::write_beta_matrix(&path, &self.inner).map_err(err)
    }

    #[getter]
    fn values(&self) -> Rows {
        to_rows(self.inner.values())
    }
    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.inner.nrows(), self.inner.ncols())
    }
    #[getter]
    fn n_clamped(&self) -> usize {
        self.inner.n_clamped()
    }
    #[getter]
    fn row_ids(&self) -> Vec<String> {
        self.inner.row_ids().to_vec()
    }
    #[getter]
    fn col_ids(&self) -> Vec<String> {
        self.inner.col_ids().to_vec()
    }

    /// Keeps the `n` columns with the largest sample variance.
    fn top_variance_columns(&self, n: usize) -> Self {
        PyBetaMatrix {
            inner: self.inner.top_variance_columns(n),
        }
    }

    fn __repr__(&self) -> String {
        format!("BetaMatrix({}x{})", self.inner.nrows(), self.inner.ncols())
    }
}

#[pyclass(name = "HoldoutMask", from_py_object)]
#[derive(Clone)]
pub struct PyHoldoutMask {
    inner: dncb_mf::HoldoutMask,
}

#[pymethods]
impl PyHoldoutMask {
    #[new]
    fn new(nrows: usize, ncols: usize, cells: Vec<(usize, usize)>) -> PyResult<Self> {
        dncb_mf::HoldoutMask::from_cells(nrows, ncols, cells)
            .map(|inner| PyHoldoutMask { inner })
            .map_err(err)
    }

    #[getter]
    fn cells(&self) -> Vec<(usize, usize)> {
        self.inner.cells().to_vec()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __contains__(&self, cell: (usize, usize)) -> bool {
        self.inner.contains(cell.0, cell.1)
    }
}

#[pyclass(name = "FactorState", from_py_object)]
#[derive(Clone)]
pub struct PyFactorState {
    inner: dncb_mf::FactorState,
}

#[pymethods]
impl PyFactorState {
    #[new]
    fn new(theta1: Rows, theta2: Rows, phi: Rows) -> PyResult<Self> {
        dncb_mf::FactorState::new(to_array(theta1)?, to_array(theta2)?, to_array(phi)?)
            .map(|inner| PyFactorState { inner })
            .map_err(err)
    }

    #[getter]
    fn theta1(&self) -> Rows {
        to_rows(&self.inner.theta1)
    }
    #[getter]
    fn theta2(&self) -> Rows {
        to_rows(&self.inner.theta2)
    }
    #[getter]
    fn phi(&self) -> Rows {
        to_rows(&self.inner.phi)
    }

    /// `(lam1, lam2)` at cell `(i, j)`.
    fn rates(&self, i: usize, j: usize) -> PyResult<(f64, f64)> {
        let r = self.inner.rates(i, j).map_err(err)?;
        Ok((r.lam1, r.lam2))
    }

    /// `theta1 / (theta1 + theta2)`, elementwise.
    fn embedding(&self) -> Rows {
        to_rows(&dncb_mf::embedding(&self.inner).rho)
    }
}

#[pyclass(name = "PosteriorChain")]
pub struct PyPosteriorChain {
    inner: dncb_mf::PosteriorChain,
}

#[pymethods]
impl PyPosteriorChain {
    fn __len__(&self) -> usize {
        self.inner.snapshots.len()
    }

    /// Sweep numbers of the saved snapshots.
    #[getter]
    fn sweeps(&self) -> Vec<usize> {
        self.inner.snapshots.iter().map(|s| s.sweep).collect()
    }

    fn snapshot(&self, index: usize) -> PyResult<PyFactorState> {
        self.inner
            .snapshots
            .get(index)
            .map(|s| PyFactorState { inner: s.state.clone() })
            .ok_or_else(|| DncbError::new_err(format!("no snapshot {index}")))
    }

    /// `(sweep, log_joint)` pairs, one per sweep.
    #[getter]
    fn trace(&self) -> Vec<(usize, f64)> {
        self.inner.trace.iter().map(|t| (t.sweep, t.log_joint)).collect()
    }

    /// Posterior-mean embedding (rows are samples).
    fn mean_embedding(&self) -> PyResult<Rows> {
        self.inner
            .mean_embedding()
            .map(|e| to_rows(&e.rho))
            .ok_or_else(|| DncbError::new_err("chain has no snapshots"))
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        io::write_chain(&path, &self.inner).map_err(err)
    }
}

#[pyclass(name = "PpdReport", get_all)]
pub struct PyPpdReport {
    log_ppd_total: f64,
    scaled_ppd: f64,
    n_held_out: usize,
    n_scored: usize,
    n_clamped: usize,
    n_snapshots: usize,
    /// `(row, col, log_density or None)` per held-out cell.
    cells: Vec<(usize, usize, Option<f64>)>,
}

#[pymethods]
impl PyPpdReport {
    fn __repr__(&self) -> String {
        format!(
            "PpdReport(scaled_ppd={}, n_scored={}/{})",
            self.scaled_ppd, self.n_scored, self.n_held_out
        )
    }
}

impl From<dncb_mf::PpdReport> for PyPpdReport {
    fn from(r: dncb_mf::PpdReport) -> Self {
        PyPpdReport {
            log_ppd_total: r.log_ppd_total,
            scaled_ppd: r.scaled_ppd,
            n_held_out: r.n_held_out,
            n_scored: r.n_scored,
            n_clamped: r.n_clamped,
            n_snapshots: r.n_snapshots,
            cells: r
                .cells
                .iter()
                .map(|c: &CellScore| (c.row, c.col, c.log_density))
                .collect(),
        }
    }
}

/// Log density of the doubly non-central beta distribution.
#[pyfunction]
fn dncb_log_pdf(beta: f64, eps1: f64, eps2: f64, lam1: f64, lam2: f64) -> PyResult<f64> {
    dncb_mf::dncb_log_pdf(beta, eps1, eps2, lam1, lam2)
        .map(|l| l.ln())
        .map_err(err)
}

#[pyfunction]
fn dncb_mean(eps1: f64, eps2: f64, lam1: f64, lam2: f64) -> PyResult<f64> {
    dncb_mf::dncb_mean(eps1, eps2, lam1, lam2).map_err(err)
}

/// `n` draws from the doubly non-central beta distribution.
#[pyfunction]
#[pyo3(signature = (eps1, eps2, lam1, lam2, n, seed=0))]
fn sample_dncb(eps1: f64, eps2: f64, lam1: f64, lam2: f64, n: usize, seed: u64) -> PyResult<Vec<f64>> {
    let mut rng = RngStream::new(seed, 0);
    (0..n)
        .map(|_| draw_dncb(eps1, eps2, lam1, lam2, &mut rng).map_err(err))
        .collect()
}

/// `n` draws from the Bessel distribution with order `v` and argument `a`.
#[pyfunction]
#[pyo3(signature = (v, a, n, seed=0))]
fn sample_bessel(v: f64, a: f64, n: usize, seed: u64) -> PyResult<Vec<u64>> {
    let sampler = BesselSampler::new(BesselParams::new(v, a).map_err(err)?);
    let mut rng = RngStream::new(seed, 0);
    Ok((0..n).map(|_| sampler.sample(&mut rng)).collect())
}

/// Draws factors from the priors and a matrix from the model. Returns
/// `(data, truth)`.
#[pyfunction]
#[pyo3(signature = (nrows, ncols, hyper, seed=0))]
fn generate(nrows: usize, ncols: usize, hyper: &PyHyperparams, seed: u64) -> PyResult<(PyBetaMatrix, PyFactorState)> {
    let (state, sim) = generate_model(nrows, ncols, &hyper.inner, seed).map_err(err)?;
    Ok((PyBetaMatrix { inner: sim.data }, PyFactorState { inner: state }))
}

/// Uniformly random mask of `round(fraction * nrows * ncols)` cells.
#[pyfunction]
fn make_mask(nrows: usize, ncols: usize, fraction: f64, seed: u64) -> PyResult<PyHoldoutMask> {
    dncb_mf::make_mask(nrows, ncols, fraction, seed)
        .map(|inner| PyHoldoutMask { inner })
        .map_err(err)
}

/// Runs the Gibbs sampler. Masked cells are treated as missing.
#[pyfunction]
#[pyo3(signature = (data, hyper, config, mask=None))]
fn fit(
    py: Python<'_>,
    data: &PyBetaMatrix,
    hyper: &PyHyperparams,
    config: &PySamplerConfig,
    mask: Option<&PyHoldoutMask>,
) -> PyResult<PyPosteriorChain> {
    let (beta, h, c) = (&data.inner, &hyper.inner, &config.inner);
    let m = mask.map(|m| &m.inner);
    py.detach(|| dncb_mf::run(beta, m, h, c))
        .map(|inner| PyPosteriorChain { inner })
        .map_err(err)
}

/// Pointwise predictive density of the masked cells under the chain.
#[pyfunction]
fn ppd(py: Python<'_>, chain: &PyPosteriorChain, data: &PyBetaMatrix, mask: &PyHoldoutMask) -> PyResult<PyPpdReport> {
    let (c, b, m) = (&chain.inner, &data.inner, &mask.inner);
    py.detach(|| dncb_mf::ppd(c, b, m, &c.hyper))
        .map(PyPpdReport::from)
        .map_err(err)
}

/// Predictive density of a single beta distribution fitted by moments to
/// the unmasked cells.
#[pyfunction]
fn beta_baseline_ppd(data: &PyBetaMatrix, mask: &PyHoldoutMask) -> PyResult<PyPpdReport> {
    dncb_mf::beta_baseline_ppd(&data.inner, &mask.inner)
        .map(PyPpdReport::from)
        .map_err(err)
}

#[pymodule]
fn dncbmf(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("DncbError", m.py().get_type::<DncbError>())?;
    m.add_class::<PyHyperparams>()?;
    m.add_class::<PySamplerConfig>()?;
    m.add_class::<PyBetaMatrix>()?;
    m.add_class::<PyHoldoutMask>()?;
    m.add_class::<PyFactorState>()?;
    m.add_class::<PyPosteriorChain>()?;
    m.add_class::<PyPpdReport>()?;
    m.add_function(wrap_pyfunction!(dncb_log_pdf, m)?)?;
    m.add_function(wrap_pyfunction!(dncb_mean, m)?)?;
    m.add_function(wrap_pyfunction!(sample_dncb, m)?)?;
    m.add_function(wrap_pyfunction!(sample_bessel, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(make_mask, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(ppd, m)?)?;
    m.add_function(wrap_pyfunction!(beta_baseline_ppd, m)?)?;
    Ok(())
}
