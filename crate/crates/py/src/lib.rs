//! Python bindings for `kaclab`.

use std::path::{Path, PathBuf};

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use kaclab::config::SimConfig;
use kaclab::coupling::coupled_simulate;
use kaclab::ensemble::{Ensemble, SeedLineage};
use kaclab::harness::{self, Suite};
use kaclab::inequality;
use kaclab::integrator::{initial_ensemble, simulate as run_all, step_adaptive, StepOptions};
use kaclab::kernels::{eval_pair_kernels, povzner_gap as gap};
use kaclab::noise::NoiseKey;
use kaclab::observables;
use kaclab::oracle;
use kaclab::transport::{w2_exact as exact, w2_sliced as sliced, EmpiricalCloud};
use kaclab::{KacError, Mat3, Vec3};

create_exception!(kaclab_py, KaclabError, PyException);

fn err(e: KacError) -> PyErr {
    KaclabError::new_err(e.to_string())
}

fn vec3s(points: &[[f64; 3]]) -> Vec<Vec3> {
    points.iter().map(|p| Vec3::new(p[0], p[1], p[2])).collect()
}

fn arrays(points: &[Vec3]) -> Vec<[f64; 3]> {
    points.iter().map(|v| [v.x, v.y, v.z]).collect()
}

fn rows(m: &Mat3) -> [[f64; 3]; 3] {
    [0, 1, 2].map(|i| [0, 1, 2].map(|j| m[(i, j)]))
}

fn cloud(points: &[[f64; 3]]) -> PyResult<EmpiricalCloud> {
    EmpiricalCloud::from_vec3(&vec3s(points)).map_err(err)
}

/// Simulation parameters. Keyword arguments override the defaults; unknown
/// keys raise `KaclabError`.
#[pyclass(name = "Config", skip_from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: SimConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (**overrides))]
    fn new(py: Python<'_>, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let inner = match overrides {
            None => SimConfig::default(),
            Some(d) => {
                let text: String = py.import("json")?.call_method1("dumps", (d,))?.extract()?;
                serde_json::from_str::<SimConfig>(&text).map_err(|e| KaclabError::new_err(e.to_string()))?
            }
        };
        inner.validate().map_err(err)?;
        Ok(PyConfig { inner })
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(PyConfig {
            inner: SimConfig::from_str(text).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyConfig {
            inner: SimConfig::from_path(&path).map_err(err)?,
        })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma
    }

    #[getter]
    fn n_particles(&self) -> usize {
        self.inner.n_particles
    }

    #[getter]
    fn replicas(&self) -> usize {
        self.inner.replicas
    }

    #[getter]
    fn dt_time(&self) -> f64 {
        self.inner.dt_time
    }

    #[getter]
    fn horizon_time(&self) -> f64 {
        self.inner.horizon_time
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    fn __repr__(&self) -> String {
        let c = &self.inner;
        format!(
            "Config(gamma={}, n_particles={}, replicas={}, dt_time={}, horizon_time={}, seed={})",
            c.gamma, c.n_particles, c.replicas, c.dt_time, c.horizon_time, c.seed
        )
    }
}

/// One replica of the particle system.
#[pyclass(name = "Ensemble", skip_from_py_object)]
#[derive(Clone)]
struct PyEnsemble {
    inner: Ensemble,
}

#[pymethods]
impl PyEnsemble {
    #[new]
    #[pyo3(signature = (velocities, gamma, seed = 0, replica = 0))]
    fn new(velocities: Vec<[f64; 3]>, gamma: f64, seed: u64, replica: u64) -> PyResult<Self> {
        let lineage = SeedLineage { seed, replica, step: 0 };
        Ok(PyEnsemble {
            inner: Ensemble::new(vec3s(&velocities), gamma, lineage).map_err(err)?,
        })
    }

    /// Initial ensemble of `replica` as sampled by `config`.
    #[staticmethod]
    #[pyo3(signature = (config, replica = 0))]
    fn sample(config: &PyConfig, replica: u64) -> PyResult<Self> {
        Ok(PyEnsemble {
            inner: initial_ensemble(&config.inner, replica).map_err(err)?,
        })
    }

    #[getter]
    fn velocities(&self) -> Vec<[f64; 3]> {
        arrays(&self.inner.velocities)
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma
    }

    #[getter]
    fn time(&self) -> f64 {
        self.inner.time
    }

    #[getter]
    fn step_index(&self) -> u64 {
        self.inner.lineage.step
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// `(momentum, energy)` with energy `Σ|v|²`.
    fn conserved(&self) -> ([f64; 3], f64) {
        let c = self.inner.conserved();
        ([c.momentum.x, c.momentum.y, c.momentum.z], c.energy)
    }

    /// Advances `steps` steps of size `dt`; the noise is keyed by the
    /// ensemble's seed, replica and step index.
    #[pyo3(signature = (dt, steps = 1, energy_projection = false, noise = true))]
    fn advance(&self, py: Python<'_>, dt: f64, steps: u64, energy_projection: bool, noise: bool) -> PyResult<Self> {
        let opts = StepOptions {
            dt,
            energy_projection,
            noise,
            ..StepOptions::default()
        };
        let start = self.inner.clone();
        let out = py.detach(move || -> kaclab::Result<Ensemble> {
            opts.validate()?;
            let mut e = start;
            for _ in 0..steps {
                let key = NoiseKey::new(e.lineage.seed, e.lineage.replica, e.lineage.step);
                e = step_adaptive(&e, &opts, key)?.0;
            }
            Ok(e)
        });
        Ok(PyEnsemble { inner: out.map_err(err)? })
    }
}

/// Runs every replica of `config` in memory. Returns a dict with the final
/// velocities per replica and the pooled moments of the final states.
#[pyfunction]
fn simulate<'py>(py: Python<'py>, config: &PyConfig) -> PyResult<Bound<'py, PyDict>> {
    let cfg = config.inner.clone();
    let out = py.detach(move || run_all(&cfg)).map_err(err)?;
    let d = PyDict::new(py);
    let finals: Vec<Vec<[f64; 3]>> = out.logs.iter().map(|l| arrays(&l.final_state.velocities)).collect();
    d.set_item("final_velocities", finals)?;
    d.set_item("time", out.logs[0].final_state.time)?;
    d.set_item("p_values", out.moments.p_values.clone())?;
    d.set_item("moments", out.moments.moment_mean[0].clone())?;
    d.set_item("moment_stderr", out.moments.moment_stderr[0].clone())?;
    d.set_item("splits", out.logs.iter().map(|l| l.splits).collect::<Vec<_>>())?;
    Ok(d)
}

/// Shared-noise run of the configured law against its translate by `shift`.
#[pyfunction]
#[pyo3(signature = (config, shift, m_list = vec![1]))]
fn couple<'py>(py: Python<'py>, config: &PyConfig, shift: [f64; 3], m_list: Vec<usize>) -> PyResult<Bound<'py, PyDict>> {
    let cfg = config.inner.clone();
    let r = py
        .detach(move || {
            let a = cfg.initial_spec();
            let b = a.clone().shifted(Vec3::from(shift));
            coupled_simulate(&cfg, &a, &b, &m_list)
        })
        .map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("times", r.times)?;
    d.set_item("m_list", r.m_list)?;
    d.set_item("u_mean", r.u_mean)?;
    d.set_item("u_stderr", r.u_stderr)?;
    d.set_item("u0", r.u0)?;
    d.set_item("final_w2", r.final_w2.map(|e| (e.value, e.stderr)))?;
    Ok(d)
}

/// Writes a `simulate` run directory and returns its path.
#[pyfunction]
fn run_simulate(py: Python<'_>, config: &PyConfig) -> PyResult<PathBuf> {
    let cfg = config.inner.clone();
    py.detach(move || harness::run_simulate(&cfg)).map_err(err)
}

/// Writes a `couple` run directory and returns its path.
#[pyfunction]
fn run_couple(py: Python<'_>, config: &PyConfig) -> PyResult<PathBuf> {
    let cfg = config.inner.clone();
    py.detach(move || harness::run_couple(&cfg)).map_err(err)
}

/// Writes a `chaos` run directory and returns its path.
#[pyfunction]
fn run_chaos(py: Python<'_>, config: &PyConfig) -> PyResult<PathBuf> {
    let cfg = config.inner.clone();
    py.detach(move || harness::run_chaos(&cfg)).map_err(err)
}

/// Continues a stored replica for `horizon` more time units.
#[pyfunction]
fn resume(py: Python<'_>, snapshot: PathBuf, horizon: f64) -> PyResult<PathBuf> {
    py.detach(move || harness::resume(&snapshot, horizon)).map_err(err)
}

/// `(summary text, files whose checksum changed)`.
#[pyfunction]
fn report(run_dir: PathBuf) -> PyResult<(String, Vec<String>)> {
    let s = harness::report(&run_dir).map_err(err)?;
    Ok((s.text, s.checksum_failures))
}

/// Runs a verification suite. Returns `(passed, criteria)` where each
/// criterion is a dict with name, passed, measured, threshold and detail.
#[pyfunction]
#[pyo3(signature = (suite, run_dir = None))]
fn verify<'py>(py: Python<'py>, suite: &str, run_dir: Option<PathBuf>) -> PyResult<(bool, Bound<'py, PyList>)> {
    let suite = Suite::parse(suite).map_err(err)?;
    let report = py
        .detach(move || harness::verify(suite, run_dir.as_deref().map(Path::new)))
        .map_err(err)?;
    let list = PyList::empty(py);
    for c in &report.criteria {
        let d = PyDict::new(py);
        d.set_item("name", &c.name)?;
        d.set_item("passed", c.passed)?;
        d.set_item("measured", c.measured)?;
        d.set_item("threshold", c.threshold)?;
        d.set_item("detail", &c.detail)?;
        list.append(d)?;
    }
    Ok((report.passed, list))
}

/// `(A, B, σ)` at relative velocity `z`, matrices as nested lists.
#[pyfunction]
fn pair_kernels(z: [f64; 3], gamma: f64) -> PyResult<([[f64; 3]; 3], [f64; 3], [[f64; 3]; 3])> {
    let k = eval_pair_kernels(&Vec3::from(z), gamma).map_err(err)?;
    Ok((rows(&k.a_matrix), [k.b_vector.x, k.b_vector.y, k.b_vector.z], rows(&k.sigma_matrix)))
}

#[pyfunction]
fn povzner_gap(x: f64, y: f64, p: f64, gamma: f64) -> PyResult<f64> {
    gap(x, y, p, gamma).map_err(err)
}

#[pyfunction]
fn w2_exact(a: Vec<[f64; 3]>, b: Vec<[f64; 3]>) -> PyResult<f64> {
    exact(&cloud(&a)?, &cloud(&b)?).map_err(err)
}

/// `(estimate, stderr)` of the sliced distance.
#[pyfunction]
#[pyo3(signature = (a, b, n_projections = 64, seed = 0))]
fn w2_sliced(a: Vec<[f64; 3]>, b: Vec<[f64; 3]>, n_projections: usize, seed: u64) -> PyResult<(f64, f64)> {
    let e = sliced(&cloud(&a)?, &cloud(&b)?, n_projections, seed).map_err(err)?;
    Ok((e.value, e.stderr))
}

/// `(E|v|^p, stderr)` pooled over the given replicas.
#[pyfunction]
fn polynomial_moment(replicas: Vec<Vec<[f64; 3]>>, p: f64) -> PyResult<(f64, f64)> {
    let owned: Vec<Vec<Vec3>> = replicas.iter().map(|r| vec3s(r)).collect();
    let groups: Vec<&[Vec3]> = owned.iter().map(Vec::as_slice).collect();
    let e = observables::polynomial_moment(&groups, p).map_err(err)?;
    Ok((e.value, e.stderr))
}

#[pyfunction]
#[pyo3(signature = (samples, neighbor_k = 4))]
fn knn_entropy(samples: Vec<[f64; 3]>, neighbor_k: usize) -> PyResult<f64> {
    observables::knn_entropy(&vec3s(&samples), neighbor_k).map_err(err)
}

/// `(F_m^l(t), G_m^l(t))`.
#[pyfunction]
fn hierarchy_weights(m: usize, l: usize, a: f64, t: f64) -> PyResult<(f64, f64)> {
    inequality::hierarchy_weights(m, l, a, t).map_err(err)
}

#[pyfunction]
fn weight_bounds(m: usize, n: usize, a: f64, t: f64) -> (f64, f64, f64) {
    inequality::weight_bounds(m, n, a, t)
}

#[pyfunction]
fn exp_series_threshold(c_const: f64, gamma: f64) -> PyResult<f64> {
    inequality::exp_series_threshold(c_const, gamma).map_err(err)
}

#[pyfunction]
fn stability_rhs(m: usize, horizon: f64, u0: f64, eta: f64, c_const: f64) -> PyResult<f64> {
    inequality::stability_rhs(m, horizon, u0, eta, c_const).map_err(err)
}

#[pyfunction]
fn maxwellian_m4(m2: f64, m4_0: f64, t: f64) -> PyResult<f64> {
    oracle::maxwellian_m4_trajectory(m2, m4_0, t).map_err(err)
}

#[pyfunction]
fn equilibrium_moment(energy: f64, p: u32) -> PyResult<f64> {
    oracle::equilibrium_moments(energy, p).map_err(err)
}

#[pymodule]
fn kaclab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("KaclabError", m.py().get_type::<KaclabError>())?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyEnsemble>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(couple, m)?)?;
    m.add_function(wrap_pyfunction!(run_simulate, m)?)?;
    m.add_function(wrap_pyfunction!(run_couple, m)?)?;
    m.add_function(wrap_pyfunction!(run_chaos, m)?)?;
    m.add_function(wrap_pyfunction!(resume, m)?)?;
    m.add_function(wrap_pyfunction!(report, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(pair_kernels, m)?)?;
    m.add_function(wrap_pyfunction!(povzner_gap, m)?)?;
    m.add_function(wrap_pyfunction!(w2_exact, m)?)?;
    m.add_function(wrap_pyfunction!(w2_sliced, m)?)?;
    m.add_function(wrap_pyfunction!(polynomial_moment, m)?)?;
    m.add_function(wrap_pyfunction!(knn_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(hierarchy_weights, m)?)?;
    m.add_function(wrap_pyfunction!(weight_bounds, m)?)?;
    m.add_function(wrap_pyfunction!(exp_series_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(stability_rhs, m)?)?;
    m.add_function(wrap_pyfunction!(maxwellian_m4, m)?)?;
    m.add_function(wrap_pyfunction!(equilibrium_moment, m)?)?;
    Ok(())
}
