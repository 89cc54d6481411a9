//! Python bindings for the tapeformer pipeline.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use tapeformer::corpus;
use tapeformer::harness::{run_differential, DiffOptions};
use tapeformer::machine::{pm_run, tm_run, ResourceLimits, TmSpec};
use tapeformer::pm2tf::{self, TfWeights};
use tapeformer::runtime;
use tapeformer::tm2pm::{self, CompileArtifact};

/// `(symbol, state)` names, oldest first.
type TokenNames = Vec<(String, String)>;

fn py_err(e: tapeformer::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A validated Turing machine.
#[pyclass(name = "TuringMachine", module = "tapeformer_py", frozen)]
struct PyTuringMachine {
    inner: TmSpec,
}

#[pymethods]
impl PyTuringMachine {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = TmSpec::from_json(text).map_err(py_err)?;
        Ok(PyTuringMachine { inner })
    }

    /// One of the bundled machines: parity, palindrome, binary-increment,
    /// copy-compare, minimal.
    #[staticmethod]
    fn corpus(name: &str) -> PyResult<Self> {
        let e = corpus::entry(name)
            .ok_or_else(|| PyValueError::new_err(format!("unknown corpus machine `{name}`")))?;
        Ok(PyTuringMachine { inner: e.tm })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn states(&self) -> Vec<String> {
        self.inner.states().to_vec()
    }

    #[getter]
    fn symbols(&self) -> Vec<String> {
        self.inner.symbols().to_vec()
    }

    /// Returns `(answer, time_steps, space_cells)`.
    #[pyo3(signature = (input, max_steps = 10_000_000, max_space = 1 << 20))]
    fn run(
        &self,
        input: &str,
        max_steps: u64,
        max_space: usize,
    ) -> PyResult<(Option<u8>, u64, usize)> {
        let (s, _) = tm_run(
            &self.inner,
            input,
            ResourceLimits::new(max_steps, max_space),
        )
        .map_err(py_err)?;
        Ok((s.output_bit, s.time_steps, s.space_cells))
    }

    fn __repr__(&self) -> String {
        format!(
            "TuringMachine({} states, {} symbols)",
            self.inner.num_states(),
            self.inner.num_symbols()
        )
    }
}

/// An adapted Post machine compiled from a Turing machine.
#[pyclass(name = "CompiledPm", module = "tapeformer_py", frozen)]
struct PyCompiledPm {
    inner: CompileArtifact,
}

#[pymethods]
impl PyCompiledPm {
    #[getter]
    fn queue_size(&self) -> usize {
        self.inner.queue_size
    }

    #[getter]
    fn space_bound(&self) -> usize {
        self.inner.space_bound
    }

    fn pm_json(&self) -> String {
        self.inner.pm.to_json()
    }

    fn metadata_json(&self) -> String {
        self.inner.metadata_json()
    }

    /// Returns `(answer, steps, log)` with the log as `(symbol, state)` names.
    #[pyo3(signature = (input, max_steps = 10_000_000))]
    fn run(&self, input: &str, max_steps: u64) -> PyResult<(Option<u8>, u64, TokenNames)> {
        let pm = &self.inner.pm;
        let limits = ResourceLimits::new(max_steps, self.inner.queue_size + 1);
        let (s, log) = pm_run(pm, input, self.inner.queue_size, limits).map_err(py_err)?;
        let log = log
            .entries
            .iter()
            .map(|&(a, q)| (pm.symbol(a).to_string(), pm.state(q).to_string()))
            .collect();
        Ok((s.output_bit, s.time_steps, log))
    }

    fn __repr__(&self) -> String {
        format!(
            "CompiledPm({} states, queue size {})",
            self.inner.pm.num_states(),
            self.inner.queue_size
        )
    }
}

/// Transformer weights.
#[pyclass(name = "Weights", module = "tapeformer_py", frozen)]
struct PyWeights {
    inner: TfWeights,
}

#[pymethods]
impl PyWeights {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyWeights {
            inner: TfWeights::from_json(text).map_err(py_err)?,
        })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.layout.dim()
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.inner.layout.vocab
    }

    #[getter]
    fn window(&self) -> usize {
        self.inner.window
    }

    /// Runs the generator. Returns `(answer, tokens)` where `tokens` is the
    /// full context as `(symbol, state)` names.
    #[pyo3(signature = (input, max_steps = 10_000_000))]
    fn generate(&self, input: &str, max_steps: u64) -> PyResult<(Option<u8>, TokenNames)> {
        let g = runtime::generate(&self.inner, input, ResourceLimits::new(max_steps, 0))
            .map_err(py_err)?;
        let v = &self.inner.vocab;
        let tokens = g
            .context
            .iter()
            .map(|&t| (v.symbol_name(t).to_string(), v.state_name(t).to_string()))
            .collect();
        Ok((g.summary.answer, tokens))
    }

    /// Literal check for 3-symbol machines: list of `(name, passed)`.
    fn verify_literal(&self) -> PyResult<Vec<(String, bool)>> {
        let r = pm2tf::verify_paper_literal(&self.inner).map_err(py_err)?;
        Ok(r.checks.into_iter().map(|c| (c.name, c.passed)).collect())
    }
}

#[pyfunction]
fn compile_tm_to_pm(tm: &PyTuringMachine, space: usize) -> PyResult<PyCompiledPm> {
    Ok(PyCompiledPm {
        inner: tm2pm::compile_tm_to_pm(&tm.inner, space).map_err(py_err)?,
    })
}

/// Compiles the PM of `compiled`; the window defaults to its queue size.
#[pyfunction]
#[pyo3(signature = (compiled, window = None))]
fn compile_pm_to_tf(compiled: &PyCompiledPm, window: Option<usize>) -> PyResult<PyWeights> {
    let w = window.unwrap_or(compiled.inner.queue_size);
    Ok(PyWeights {
        inner: pm2tf::compile_pm_to_tf(&compiled.inner.pm, w).map_err(py_err)?,
    })
}

/// Runs a corpus machine on all three backends; returns the report row as
/// JSON.
#[pyfunction]
fn diff_row(machine: &str, input: &str) -> PyResult<String> {
    let e = corpus::entry(machine)
        .ok_or_else(|| PyValueError::new_err(format!("unknown corpus machine `{machine}`")))?;
    Ok(run_differential(&e, input, &DiffOptions::default()).to_json())
}

#[pymodule]
fn tapeformer_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTuringMachine>()?;
    m.add_class::<PyCompiledPm>()?;
    m.add_class::<PyWeights>()?;
    m.add_function(wrap_pyfunction!(compile_tm_to_pm, m)?)?;
    m.add_function(wrap_pyfunction!(compile_pm_to_tf, m)?)?;
    m.add_function(wrap_pyfunction!(diff_row, m)?)?;
    Ok(())
}
