//! Versioned text format for trained parameters.
//!
//! ```text
//! tsen-params 1
//! arch {"kind":"tsen","encoder":"lstm",...}
//! tensor m0.enc.l0.w_f 16 22
//! <rows*cols row-major values, space separated>
//! ...
//! ```
//!
//! Values are written in Rust's shortest round-trip form, so a read after a
//! write reproduces every parameter bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use super::{Architecture, Model};
use crate::error::{Error, Result};
use crate::numcore::{Matrix, ParamStore};

pub const PARAM_FILE_VERSION: u32 = 1;
const MAGIC: &str = "tsen-params";

pub fn render_params(model: &Model) -> Result<String> {
    let mut out = String::new();
    writeln!(out, "{MAGIC} {PARAM_FILE_VERSION}").unwrap();
    writeln!(out, "arch {}", serde_json::to_string(model.architecture())?).unwrap();
    for (_, name, m) in model.store().iter() {
        writeln!(out, "tensor {name} {} {}", m.rows(), m.cols()).unwrap();
        let vals: Vec<String> = m.as_slice().iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", vals.join(" ")).unwrap();
    }
    Ok(out)
}

pub fn parse_params(text: &str, origin: &Path) -> Result<Model> {
    let fail = |message: String| Error::ParamFile {
        path: origin.to_path_buf(),
        message,
    };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| fail("empty file".into()))?;
    match header.split_once(' ') {
        Some((MAGIC, v)) if v.trim() == PARAM_FILE_VERSION.to_string() => {}
        _ => return Err(fail(format!("unsupported header `{header}`"))),
    }
    let arch_line = lines.next().ok_or_else(|| fail("missing arch line".into()))?;
    let arch_json = arch_line
        .strip_prefix("arch ")
        .ok_or_else(|| fail("missing arch line".into()))?;
    let arch: Architecture =
        serde_json::from_str(arch_json).map_err(|e| fail(format!("bad architecture: {e}")))?;

    let mut store = ParamStore::new();
    while let Some(line) = lines.next() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let [tag, name, rows, cols] = parts.as_slice() else {
            return Err(fail(format!("malformed tensor header `{line}`")));
        };
        if *tag != "tensor" {
            return Err(fail(format!("expected `tensor`, found `{tag}`")));
        }
        let rows: usize = rows.parse().map_err(|_| fail(format!("bad row count in `{line}`")))?;
        let cols: usize = cols.parse().map_err(|_| fail(format!("bad column count in `{line}`")))?;
        let values = lines
            .next()
            .ok_or_else(|| fail(format!("missing values for `{name}`")))?
            .split_whitespace()
            .map(|v| v.parse::<f64>().map_err(|_| fail(format!("bad value `{v}` in `{name}`"))))
            .collect::<Result<Vec<_>>>()?;
        let m = Matrix::new(rows, cols, values).map_err(|e| fail(format!("{name}: {e}")))?;
        store.add(*name, m);
    }
    Model::from_parts(arch, store).map_err(|e| fail(e.to_string()))
}

pub fn write_params(model: &Model, path: &Path) -> Result<()> {
    crate::io::write_atomic(path, render_params(model)?.as_bytes())
}

pub fn read_params(path: &Path) -> Result<Model> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_params(&text, path)
}
