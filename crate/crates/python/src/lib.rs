//! Python bindings. Structured reports come back as plain dicts.

use dyadic_t1::carleson::{
    carleson_from_operator, cet1_testing_constant, cet2_testing_constant, embedding_sharp_constant,
    search_lambda,
};
use dyadic_t1::suite::{frozen, parse_presets, parse_seeds, workers_from_env};
use dyadic_t1::{
    build_stopping_tree, certify, generate_operator, generate_weight, BandOperator, CarlesonInstance,
    CertifyOptions, DyadicInterval, HaarSystem, OperatorKind, WeightGrid, WeightKind,
};
use nalgebra::DMatrix;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyAny;

fn err(e: dyadic_t1::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_dict<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

#[pyclass(name = "Weight", module = "dyadic_t1_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyWeight(WeightGrid);

#[pymethods]
impl PyWeight {
    /// `kind` is one of identity, scalar-power, rotating-diagonal, random-a2.
    #[staticmethod]
    #[pyo3(signature = (kind, d, depth, seed=0, eccentricity=4.0, angle_scale=1.0, exponent=0.5, center=0.5, turns=1.0))]
    #[allow(clippy::too_many_arguments)]
    fn generate(
        kind: &str,
        d: usize,
        depth: u32,
        seed: u64,
        eccentricity: f64,
        angle_scale: f64,
        exponent: f64,
        center: f64,
        turns: f64,
    ) -> PyResult<Self> {
        let kind = match kind {
            "identity" => WeightKind::Identity,
            "scalar-power" => WeightKind::ScalarPower { exponent, center },
            "rotating-diagonal" => WeightKind::RotatingDiagonal { eccentricity, turns },
            "random-a2" => WeightKind::RandomA2 { eccentricity, angle_scale },
            other => return Err(PyValueError::new_err(format!("unknown weight kind {other}"))),
        };
        generate_weight(&kind, d, depth, seed).map(Self).map_err(err)
    }

    /// Leaf averages as `2^depth` row-major `d×d` nested lists.
    #[staticmethod]
    fn from_leaves(depth: u32, leaves: Vec<Vec<Vec<f64>>>) -> PyResult<Self> {
        let d = leaves.first().map_or(0, Vec::len);
        let mats = leaves
            .iter()
            .map(|rows| {
                if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                    return Err(PyValueError::new_err("leaves must be square and of equal size"));
                }
                Ok(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
            })
            .collect::<PyResult<Vec<_>>>()?;
        WeightGrid::new(d, depth, mats).map(Self).map_err(err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        WeightGrid::from_json(text).map(Self).map_err(err)
    }

    fn to_json(&self) -> String {
        self.0.to_json()
    }

    #[getter]
    fn d(&self) -> usize {
        self.0.d()
    }

    #[getter]
    fn depth(&self) -> u32 {
        self.0.depth()
    }

    fn leaves(&self) -> Vec<Vec<Vec<f64>>> {
        self.0
            .leaves()
            .iter()
            .map(|m| m.row_iter().map(|r| r.iter().copied().collect()).collect())
            .collect()
    }

    fn a2(&self) -> PyResult<f64> {
        self.0.a2_characteristic().map_err(err)
    }

    fn inverse(&self) -> PyResult<Self> {
        self.0.inverse().map(Self).map_err(err)
    }

    /// Gram deviation from the identity and the Haar bound certificate.
    fn haar_check(&self) -> PyResult<(f64, f64)> {
        let sys = HaarSystem::build(&self.0).map_err(err)?;
        let n = sys.len();
        Ok(((sys.gram() - DMatrix::identity(n, n)).amax(), sys.haar_bound_certificate()))
    }

    fn stopping_tree<'py>(
        &self,
        py: Python<'py>,
        lambda_: f64,
        level: u32,
        index: u64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let root = DyadicInterval::new(level, index).map_err(err)?;
        let tree = build_stopping_tree(&self.0, &root, lambda_).map_err(err)?;
        to_dict(py, &tree)
    }

    fn lambda_search<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_dict(py, &search_lambda(&self.0).map_err(err)?)
    }

    fn __repr__(&self) -> String {
        format!("Weight(d={}, depth={})", self.0.d(), self.0.depth())
    }
}

#[pyclass(name = "Operator", module = "dyadic_t1_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyOperator(BandOperator);

#[pymethods]
impl PyOperator {
    /// `kind` is one of identity, zero, multiplier, shift, counterexample, random-band.
    #[staticmethod]
    #[pyo3(signature = (kind, d, depth, seed=0, radius=1, density=1.0, amplitude=1.0, left=1.0, right=1.0, k0=(1, 0)))]
    #[allow(clippy::too_many_arguments)]
    fn generate(
        kind: &str,
        d: usize,
        depth: u32,
        seed: u64,
        radius: u32,
        density: f64,
        amplitude: f64,
        left: f64,
        right: f64,
        k0: (u32, u64),
    ) -> PyResult<Self> {
        let kind = match kind {
            "identity" => OperatorKind::Identity,
            "zero" => OperatorKind::Zero,
            "multiplier" => OperatorKind::RandomMultiplier { amplitude },
            "shift" => OperatorKind::Shift { left, right },
            "counterexample" => OperatorKind::Counterexample {
                k0: DyadicInterval::new(k0.0, k0.1).map_err(err)?,
            },
            "random-band" => OperatorKind::RandomBand { radius, density },
            other => return Err(PyValueError::new_err(format!("unknown operator kind {other}"))),
        };
        generate_operator(&kind, d, depth, seed).map(Self).map_err(err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        BandOperator::from_json(text).map(Self).map_err(err)
    }

    fn to_json(&self) -> String {
        self.0.to_json()
    }

    #[getter]
    fn radius(&self) -> u32 {
        self.0.radius()
    }

    fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    fn is_band(&self, r: u32) -> bool {
        self.0.is_band(r)
    }

    #[pyo3(signature = (w, r, v=None))]
    fn well_localized<'py>(
        &self,
        py: Python<'py>,
        w: &PyWeight,
        r: u32,
        v: Option<&PyWeight>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let v = v.unwrap_or(w);
        to_dict(py, &self.0.is_well_localized(&w.0, &v.0, r).map_err(err)?)
    }

    #[pyo3(signature = (w, v=None))]
    fn norm(&self, w: &PyWeight, v: Option<&PyWeight>) -> PyResult<f64> {
        let v = v.unwrap_or(w);
        self.0.operator_norm(&w.0, &v.0).map_err(err)
    }

    #[pyo3(signature = (w, v=None, radius=None, c_cfg=None, samples=16, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn certify<'py>(
        &self,
        py: Python<'py>,
        w: &PyWeight,
        v: Option<&PyWeight>,
        radius: Option<u32>,
        c_cfg: Option<f64>,
        samples: usize,
        seed: u64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let v = v.unwrap_or(w);
        let opts = CertifyOptions {
            radius: radius.unwrap_or(self.0.radius()),
            c_cfg: c_cfg.unwrap_or(frozen::k_reg(w.0.d())),
            samples,
            seed,
        };
        let report = certify(&self.0, &w.0, &v.0, &opts).map_err(err)?;
        to_dict(py, &report)
    }

    /// The sequence built from the operator's off-band part against `W`.
    #[pyo3(signature = (w, v=None, radius=None))]
    fn carleson(&self, w: &PyWeight, v: Option<&PyWeight>, radius: Option<u32>) -> PyResult<PyCarleson> {
        let v = v.unwrap_or(w);
        carleson_from_operator(&self.0, &w.0, &v.0, radius.unwrap_or(self.0.radius()))
            .map(PyCarleson)
            .map_err(err)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Operator(d={}, depth={}, radius={}, entries={})",
            self.0.d(),
            self.0.depth(),
            self.0.radius(),
            self.0.len()
        )
    }
}

#[pyclass(name = "Carleson", module = "dyadic_t1_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyCarleson(CarlesonInstance);

#[pymethods]
impl PyCarleson {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        CarlesonInstance::from_json(text).map(Self).map_err(err)
    }

    fn to_json(&self) -> String {
        self.0.to_json()
    }

    fn scaled(&self, t: f64) -> PyResult<Self> {
        self.0.scaled(t).map(Self).map_err(err)
    }

    /// Testing constants `(first, second)` and the sharp embedding constant.
    fn constants(&self, w: &PyWeight) -> PyResult<(f64, f64, f64)> {
        Ok((
            cet1_testing_constant(&self.0, &w.0).map_err(err)?,
            cet2_testing_constant(&self.0, &w.0).map_err(err)?,
            embedding_sharp_constant(&self.0, &w.0).map_err(err)?,
        ))
    }
}

/// Runs the named presets over a seed range and returns the report dict.
#[pyfunction]
#[pyo3(signature = (presets="all", seeds="0..49", workers=None))]
fn run_sweep<'py>(
    py: Python<'py>,
    presets: &str,
    seeds: &str,
    workers: Option<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let presets = parse_presets(presets).map_err(err)?;
    let seeds = parse_seeds(seeds).map_err(err)?;
    let workers = workers.unwrap_or_else(workers_from_env);
    let report = py
        .detach(|| dyadic_t1::run_sweep(&presets, &seeds, workers))
        .map_err(err)?;
    py.import("json")?.call_method1("loads", (report.to_json(),))
}

#[pyfunction]
fn k_reg(d: usize) -> f64 {
    frozen::k_reg(d)
}

#[pymodule]
fn dyadic_t1_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyWeight>()?;
    m.add_class::<PyOperator>()?;
    m.add_class::<PyCarleson>()?;
    m.add_function(wrap_pyfunction!(run_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(k_reg, m)?)?;
    Ok(())
}
