use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use labfm::analysis::{self, SweepLine, SweepSpec};
use labfm::cli::DomainChoice;
use labfm::compact::{build_stencils, OptimizerConfig, Scheme};
use labfm::geometry::{generate_nodes, NodeSet};
use labfm::global::{apply_operator, assemble_global, Field, GlobalOperator};
use labfm::krylov::SolverConfig;
use labfm::labfm::OperatorKind;
use labfm::solvers;

fn to_py(e: labfm::Error) -> PyErr {
    if e.is_numerical() {
        PyRuntimeError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn scheme(label: char) -> PyResult<Scheme> {
    Scheme::from_label(label).map_err(to_py)
}

fn kind(name: &str) -> PyResult<OperatorKind> {
    OperatorKind::parse(name).ok_or_else(|| PyValueError::new_err(format!("unknown operator kind `{name}`")))
}

fn domain(name: &str) -> PyResult<DomainChoice> {
    match name {
        "periodic" => Ok(DomainChoice::Periodic),
        "punctured" => Ok(DomainChoice::Punctured),
        _ => Err(PyValueError::new_err(format!("unknown domain `{name}`"))),
    }
}

fn line(name: &str) -> PyResult<SweepLine> {
    [SweepLine::KyZero, SweepLine::KyEqKx, SweepLine::KyTwoKx, SweepLine::KxZero]
        .into_iter()
        .find(|l| l.as_str() == name)
        .ok_or_else(|| PyValueError::new_err(format!("unknown sweep line `{name}`")))
}

/// A generated node cloud.
#[pyclass(name = "NodeSet")]
struct PyNodeSet {
    inner: NodeSet,
}

#[pymethods]
impl PyNodeSet {
    #[new]
    #[pyo3(signature = (s, seed = 7, domain = "periodic"))]
    fn new(s: f64, seed: u64, domain: &str) -> PyResult<Self> {
        let spec = self::domain(domain)?.spec();
        Ok(Self {
            inner: generate_nodes(&spec, s, seed).map_err(to_py)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn x(&self) -> Vec<f64> {
        self.inner.positions.iter().map(|p| p[0]).collect()
    }

    #[getter]
    fn y(&self) -> Vec<f64> {
        self.inner.positions.iter().map(|p| p[1]).collect()
    }

    #[getter]
    fn boundary(&self) -> Vec<bool> {
        (0..self.inner.len()).map(|i| self.inner.is_boundary(i)).collect()
    }

    fn to_csv(&self) -> String {
        self.inner.to_csv_string()
    }
}

/// A global operator `B d = A φ` on a node set.
#[pyclass(name = "Operator")]
struct PyOperator {
    inner: GlobalOperator,
    fallbacks: usize,
}

#[pymethods]
impl PyOperator {
    #[new]
    fn new(nodes: &PyNodeSet, scheme: char, kind: &str) -> PyResult<Self> {
        let (inner, stencils) =
            assemble_global(&nodes.inner, self::scheme(scheme)?, self::kind(kind)?, &OptimizerConfig::default())
                .map_err(to_py)?;
        Ok(Self {
            inner,
            fallbacks: stencils.fallbacks(),
        })
    }

    #[getter]
    fn fallbacks(&self) -> usize {
        self.fallbacks
    }

    #[getter]
    fn is_explicit(&self) -> bool {
        self.inner.is_explicit()
    }

    fn apply(&self, values: Vec<f64>) -> PyResult<Vec<f64>> {
        let out = apply_operator(&self.inner, &Field::new(values), &SolverConfig::default()).map_err(to_py)?;
        Ok(out.values)
    }

    /// Largest real part and modulus of the generalised spectrum.
    fn spectrum_bounds(&self) -> PyResult<(f64, f64)> {
        let sp = analysis::stability_spectrum(&self.inner).map_err(to_py)?;
        Ok((sp.max_re(), sp.max_abs()))
    }
}

/// `(k/k_Ny, eps)` along one line, RMS over nodes.
#[pyfunction]
#[pyo3(signature = (nodes, scheme, kind, line = "ky0", samples = 64))]
fn resolving_power(nodes: &PyNodeSet, scheme: char, kind: &str, line: &str, samples: usize) -> PyResult<Vec<(f64, f64)>> {
    let sc = self::scheme(scheme)?;
    let k = self::kind(kind)?;
    let prepared = sc.prepare_nodes(&nodes.inner, k).map_err(to_py)?;
    let stencils = build_stencils(&prepared, sc, k, &OptimizerConfig::default()).map_err(to_py)?;
    let sweep = SweepSpec {
        line: self::line(line)?,
        samples,
    };
    let result = analysis::rms_resolving_power(&prepared, &stencils, &sweep).map_err(to_py)?;
    Ok(result.points.iter().map(|p| (p.k_over_kny, p.eps)).collect())
}

/// Where a sampled curve first exceeds each level.
#[pyfunction]
fn threshold_crossings(points: Vec<(f64, f64)>, levels: Vec<f64>) -> Vec<Option<f64>> {
    analysis::threshold_crossings(&points, &levels)
}

/// Relative L2 error of one operator on the top-hat test function.
#[pyfunction]
fn test_function_error(nodes: &PyNodeSet, scheme: char, kind: &str) -> PyResult<f64> {
    let (op, _) = assemble_global(&nodes.inner, self::scheme(scheme)?, self::kind(kind)?, &OptimizerConfig::default())
        .map_err(to_py)?;
    analysis::test_function_error(&nodes.inner, &op, &SolverConfig::default()).map_err(to_py)
}

#[pyfunction]
fn bessel_i(n: u32, z: f64) -> PyResult<f64> {
    solvers::bessel_i(n, z).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (x, t, re = 100.0, terms = 30))]
fn burgers_analytic(x: f64, t: f64, re: f64, terms: usize) -> PyResult<f64> {
    solvers::burgers_analytic(x, t, re, terms).map_err(to_py)
}

/// `[(s, nodes, l2_explicit, l2_compact, R)]` on the punctured square.
#[pyfunction]
#[pyo3(signature = (scheme, resolutions, seed = 7))]
fn poisson(scheme: char, resolutions: Vec<f64>, seed: u64) -> PyResult<Vec<(f64, usize, f64, f64, f64)>> {
    let compact = self::scheme(scheme)?;
    let table = solvers::run_poisson(
        compact.explicit_partner(),
        compact,
        &resolutions,
        seed,
        &OptimizerConfig::default(),
        &SolverConfig::poisson(),
    )
    .map_err(to_py)?;
    Ok(table.rows.iter().map(|r| (r.s, r.nodes, r.l2_explicit, r.l2_compact, r.r)).collect())
}

#[pymodule]
fn compact_labfm(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNodeSet>()?;
    m.add_class::<PyOperator>()?;
    m.add_function(wrap_pyfunction!(resolving_power, m)?)?;
    m.add_function(wrap_pyfunction!(threshold_crossings, m)?)?;
    m.add_function(wrap_pyfunction!(test_function_error, m)?)?;
    m.add_function(wrap_pyfunction!(bessel_i, m)?)?;
    m.add_function(wrap_pyfunction!(burgers_analytic, m)?)?;
    m.add_function(wrap_pyfunction!(poisson, m)?)?;
    Ok(())
}
