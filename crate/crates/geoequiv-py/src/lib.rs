use pyo3::prelude::*;

#[pymodule]
fn geoequiv_py(_m: &Bound<PyModule>) -> PyResult<()> { Ok(()) }
