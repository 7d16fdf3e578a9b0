//! Python bindings: load, validate, plan, compose, render and score designs.
//!
//! The plain functions in [`api`] hold the logic so they can be tested
//! without an interpreter; the `#[pyfunction]`s only convert errors.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

pub mod api {
    use super::*;
    use layered_design::codec::{
        export_training_conversation, parse_layer_output, serialize_layer_output, FontVocab, LayerInput, LayerOutput,
        Shuffle,
    };
    use layered_design::compose::{compose, ComposeOptions, HeuristicComposer};
    use layered_design::dataset::{design_from_record, design_to_record, DesignRecord};
    use layered_design::metrics::report::{score_design, DesignScores};
    use layered_design::metrics::SpectralResidual;
    use layered_design::planner::{plan_layers, PlannerMode};
    use layered_design::render::{render_state, FontStore, RenderOptions};
    use layered_design::{validate_design, Design, SemanticRole};

    pub fn load(json: &str, asset_root: &Path) -> Result<Design, String> {
        let record: DesignRecord = serde_json::from_str(json).map_err(|e| e.to_string())?;
        design_from_record(&record, asset_root).map_err(|e| e.to_string())
    }

    /// Design JSON with image paths as recorded; bitmaps are not written.
    pub fn to_json(design: &Design) -> String {
        serde_json::to_string_pretty(&design_to_record(design)).expect("record serializes")
    }

    pub fn violations(design: &Design) -> Vec<String> {
        validate_design(design).iter().map(|v| v.to_string()).collect()
    }

    pub fn render_png(design: &Design, level: u8, aliased: bool) -> Result<Vec<u8>, String> {
        let opts = if aliased { RenderOptions::aliased() } else { RenderOptions::default() };
        let state = render_state(design, level, &FontStore::builtin(), &opts).map_err(|e| e.to_string())?;
        let mut buf = Vec::new();
        state
            .image
            .write_to(&mut std::io::Cursor::new(&mut buf), image::ImageFormat::Png)
            .map_err(|e| e.to_string())?;
        Ok(buf)
    }

    pub fn scores(design: &Design) -> Result<DesignScores, String> {
        score_design(design, &SpectralResidual, &FontStore::builtin())
    }

    pub fn transcript(design: &Design, seed: Option<u64>) -> Result<String, String> {
        let shuffle = seed.map_or(Shuffle::Identity, Shuffle::Seeded);
        export_training_conversation(design, shuffle)
            .map(|c| c.to_transcript())
            .map_err(|e| e.to_string())
    }

    /// Heuristic layer plan, layer key to element ids.
    pub fn plan(design: &Design) -> Result<BTreeMap<&'static str, Vec<String>>, String> {
        let plan = plan_layers(&design.elements, &design.canvas, &PlannerMode::Heuristic).map_err(|e| e.to_string())?;
        Ok(SemanticRole::ALL
            .iter()
            .map(|r| (r.key(), plan.layer(*r).to_vec()))
            .collect())
    }

    pub fn compose_heuristic(design: &Design, seed: u64) -> Result<Design, String> {
        let opts = ComposeOptions {
            seed,
            ..ComposeOptions::default()
        };
        compose(design, &HeuristicComposer::default(), &opts)
            .map(|c| c.design)
            .map_err(|e| e.to_string())
    }

    fn layer_input(design: &Design, role: SemanticRole) -> Result<LayerInput, String> {
        let indices = design.plan.contiguous_indices();
        LayerInput::from_elements(role, design.plan.layer(role), &design.elements, &indices).map_err(|e| e.to_string())
    }

    pub fn role(layer: &str) -> Result<SemanticRole, String> {
        serde_json::from_value(serde_json::Value::String(layer.to_string()))
            .map_err(|_| format!("unknown layer `{layer}`"))
    }

    /// Parses an answer for one layer of `design` and returns it in the
    /// canonical wire format.
    pub fn normalize_answer(design: &Design, layer: &str, text: &str) -> Result<String, String> {
        let role = role(layer)?;
        let input = layer_input(design, role)?;
        let out = parse_layer_output(text, &input, &FontVocab::open()).map_err(|e| e.to_string())?;
        Ok(serialize_layer_output(&out))
    }

    /// Layer announcement sentence, e.g. `Now predict the text elements: ...`.
    pub fn announce(design: &Design, layer: &str) -> Result<String, String> {
        Ok(layer_input(design, role(layer)?)?.text())
    }

    /// Wire form of the design's own attributes for one layer.
    pub fn serialize_layer(design: &Design, layer: &str) -> Result<String, String> {
        let role = role(layer)?;
        let indices = design.plan.contiguous_indices();
        let records = design
            .plan
            .layer(role)
            .iter()
            .map(|id| {
                design
                    .attributes
                    .get(id)
                    .map(|a| layered_design::ElementAttributes {
                        index: indices[id],
                        ..a.clone()
                    })
                    .ok_or_else(|| format!("element `{id}` has no attributes"))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(serialize_layer_output(&LayerOutput { role, records }))
    }
}

fn py_err(e: String) -> PyErr {
    PyValueError::new_err(e)
}

/// A graphic design: canvas, elements, layer plan and attributes.
#[pyclass(name = "Design", module = "layered_design_py")]
pub struct PyDesign {
    inner: Arc<layered_design::Design>,
}

#[pymethods]
impl PyDesign {
    /// Parses design JSON; image paths resolve against `asset_root`.
    #[staticmethod]
    #[pyo3(signature = (json, asset_root = "."))]
    fn from_json(json: &str, asset_root: &str) -> PyResult<Self> {
        let d = api::load(json, Path::new(asset_root)).map_err(py_err)?;
        Ok(Self { inner: Arc::new(d) })
    }

    #[getter]
    fn id(&self) -> &str {
        &self.inner.id
    }

    #[getter]
    fn size(&self) -> (u32, u32) {
        (self.inner.canvas.width, self.inner.canvas.height)
    }

    #[getter]
    fn element_ids(&self) -> Vec<String> {
        self.inner.elements.iter().map(|e| e.id.clone()).collect()
    }

    /// Structural problems; empty for a valid, fully attributed design.
    fn validate(&self) -> Vec<String> {
        api::violations(&self.inner)
    }

    /// PNG bytes of canvas state `level` (1..=5).
    #[pyo3(signature = (level = 5, aliased = false))]
    fn render<'py>(&self, py: Python<'py>, level: u8, aliased: bool) -> PyResult<Bound<'py, PyBytes>> {
        let png = api::render_png(&self.inner, level, aliased).map_err(py_err)?;
        Ok(PyBytes::new(py, &png))
    }

    /// Layout metrics as a dict; absent metrics map to None.
    fn scores<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let s = api::scores(&self.inner).map_err(py_err)?;
        let d = PyDict::new(py);
        d.set_item("val", s.val)?;
        d.set_item("ove", s.ove)?;
        d.set_item("ali", s.ali)?;
        d.set_item("und_l", s.und_l)?;
        d.set_item("und_s", s.und_s)?;
        d.set_item("uti", s.uti)?;
        d.set_item("occ", s.occ)?;
        d.set_item("rea", s.rea)?;
        Ok(d)
    }

    /// Five-turn training transcript; `seed` shuffles within layers.
    #[pyo3(signature = (seed = None))]
    fn transcript(&self, seed: Option<u64>) -> PyResult<String> {
        api::transcript(&self.inner, seed).map_err(py_err)
    }

    fn announce(&self, layer: &str) -> PyResult<String> {
        api::announce(&self.inner, layer).map_err(py_err)
    }

    fn serialize_layer(&self, layer: &str) -> PyResult<String> {
        api::serialize_layer(&self.inner, layer).map_err(py_err)
    }

    /// Parses a model answer for `layer` and returns its canonical form.
    fn normalize_answer(&self, layer: &str, text: &str) -> PyResult<String> {
        api::normalize_answer(&self.inner, layer, text).map_err(py_err)
    }

    fn to_json(&self) -> String {
        api::to_json(&self.inner)
    }

    fn __repr__(&self) -> String {
        format!(
            "Design(id={:?}, size={}x{}, elements={})",
            self.inner.id,
            self.inner.canvas.width,
            self.inner.canvas.height,
            self.inner.elements.len()
        )
    }
}

/// Heuristic layer plan of the design's elements.
#[pyfunction]
fn plan(design: &PyDesign) -> PyResult<BTreeMap<&'static str, Vec<String>>> {
    api::plan(&design.inner).map_err(py_err)
}

/// Composes the design with the offline heuristic backend.
#[pyfunction]
#[pyo3(signature = (design, seed = 0))]
fn compose_heuristic(py: Python<'_>, design: &PyDesign, seed: u64) -> PyResult<PyDesign> {
    let inner = design.inner.clone();
    let out = py.detach(move || api::compose_heuristic(&inner, seed)).map_err(py_err)?;
    Ok(PyDesign { inner: Arc::new(out) })
}

#[pymodule]
fn layered_design_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDesign>()?;
    m.add_function(wrap_pyfunction!(plan, m)?)?;
    m.add_function(wrap_pyfunction!(compose_heuristic, m)?)?;
    Ok(())
}
