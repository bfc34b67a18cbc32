// SPDX-License-Identifier: Apache-2.0

//! Per-library templates that wrap one operator instance into a
//! self-contained single-operator model program.
//!
//! Every artifact starts with a header line carrying the instance's trace
//! line, so executors can recover the instance without side channels.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::corpus::{Library, OperatorInstance, ParamValue, TensorSpec};

pub const HEADER_PREFIX: &str = "# opera-instance: ";

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("library {0:?} has no model template")]
    UnsupportedLibrary(String),
    #[error("instance {id:?}: cannot render parameter {param:?}: {reason}")]
    Param { id: String, param: String, reason: String },
    #[error("instance {id:?}: cannot render input[{index}]: {reason}")]
    Input { id: String, index: usize, reason: String },
    #[error("writing model file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// A rendered single-operator model program.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelArtifact {
    pub instance_id: String,
    pub source: String,
    /// Set once the program has been written to disk.
    pub path: Option<PathBuf>,
}

impl ModelArtifact {
    /// Parses the instance back out of the header line.
    pub fn instance(&self) -> Option<OperatorInstance> {
        instance_from_source(&self.source)
    }

    /// Writes the program into `dir` under a name derived from the id.
    pub fn write_to(&mut self, dir: &Path) -> Result<&Path, RenderError> {
        let path = dir.join(format!("{}.py", file_stem(&self.instance_id)));
        std::fs::write(&path, &self.source).map_err(|source| RenderError::Io {
            path: path.clone(),
            source,
        })?;
        Ok(self.path.insert(path))
    }
}

/// Recovers the instance from a rendered program's header line.
pub fn instance_from_source(source: &str) -> Option<OperatorInstance> {
    let first = source.lines().next()?;
    let line = first.strip_prefix(HEADER_PREFIX)?;
    serde_json::from_str(line).ok()
}

/// File-name-safe form of an instance id. Distinct ids stay distinct: any
/// byte outside `[A-Za-z0-9-]` is hex-escaped.
pub fn file_stem(id: &str) -> String {
    let mut out = String::with_capacity(id.len());
    for b in id.bytes() {
        if b.is_ascii_alphanumeric() || b == b'-' {
            out.push(b as char);
        } else {
            let _ = write!(out, "_{b:02x}");
        }
    }
    out
}

pub fn render_model(inst: &OperatorInstance) -> Result<ModelArtifact, RenderError> {
    let body = match &inst.library {
        Library::PyTorch => render_pytorch(inst)?,
        Library::Keras => render_keras(inst)?,
        Library::Onnx => render_onnx(inst)?,
        Library::Other(name) => return Err(RenderError::UnsupportedLibrary(name.clone())),
    };
    Ok(ModelArtifact {
        instance_id: inst.instance_id.clone(),
        source: format!("{HEADER_PREFIX}{}\n{body}", inst.to_trace_line()),
        path: None,
    })
}

#[derive(Clone, Copy)]
enum Flavor {
    Torch,
    Keras,
    Onnx,
}

fn param_err(inst: &OperatorInstance, param: &str, reason: impl Into<String>) -> RenderError {
    RenderError::Param {
        id: inst.instance_id.clone(),
        param: param.to_string(),
        reason: reason.into(),
    }
}

fn py_float(x: f64) -> String {
    let s = format!("{x:?}");
    if s.contains(['.', 'e', 'E']) {
        s
    } else {
        format!("{s}.0")
    }
}

fn py_str(s: &str) -> String {
    serde_json::to_string(s).expect("strings serialize")
}

fn py_tuple(items: &[String]) -> String {
    match items {
        [one] => format!("({one},)"),
        _ => format!("({})", items.join(", ")),
    }
}

fn torch_dtype(dtype: &str) -> Option<&'static str> {
    Some(match dtype {
        "float16" => "torch.float16",
        "bfloat16" => "torch.bfloat16",
        "float32" => "torch.float32",
        "float64" => "torch.float64",
        "int8" => "torch.int8",
        "int16" => "torch.int16",
        "int32" => "torch.int32",
        "int64" => "torch.int64",
        "uint8" => "torch.uint8",
        "bool" => "torch.bool",
        "complex64" => "torch.complex64",
        "complex128" => "torch.complex128",
        _ => return None,
    })
}

fn onnx_dtype(dtype: &str) -> Option<&'static str> {
    Some(match dtype {
        "float16" => "TensorProto.FLOAT16",
        "bfloat16" => "TensorProto.BFLOAT16",
        "float32" => "TensorProto.FLOAT",
        "float64" => "TensorProto.DOUBLE",
        "int8" => "TensorProto.INT8",
        "int16" => "TensorProto.INT16",
        "int32" => "TensorProto.INT32",
        "int64" => "TensorProto.INT64",
        "uint8" => "TensorProto.UINT8",
        "bool" => "TensorProto.BOOL",
        "complex64" => "TensorProto.COMPLEX64",
        "complex128" => "TensorProto.COMPLEX128",
        _ => return None,
    })
}

fn numpy_dtype(dtype: &str) -> Option<&str> {
    match dtype {
        "bfloat16" => None,
        d => torch_dtype(d).map(|_| d),
    }
}

fn is_float_dtype(dtype: &str) -> bool {
    dtype.starts_with("float") || dtype.starts_with("bfloat") || dtype.starts_with("complex")
}

/// Concrete dims; a dynamic `-1` is rejected.
fn static_shape(t: &TensorSpec) -> Result<Vec<String>, String> {
    t.shape
        .iter()
        .map(|&d| {
            if d < 0 {
                Err("dynamic dimension -1 needs a concrete size here".to_string())
            } else {
                Ok(d.to_string())
            }
        })
        .collect()
}

/// Constant-data expression for a tensor-valued parameter.
fn tensor_expr(t: &TensorSpec, flavor: Flavor) -> Result<String, String> {
    let shape = py_tuple(&static_shape(t)?);
    match flavor {
        Flavor::Torch => {
            let dt = torch_dtype(&t.dtype).ok_or_else(|| format!("unknown dtype {:?}", t.dtype))?;
            Ok(format!("torch.ones({shape}, dtype={dt})"))
        }
        Flavor::Keras | Flavor::Onnx => {
            let dt = numpy_dtype(&t.dtype).ok_or_else(|| format!("unknown dtype {:?}", t.dtype))?;
            let arr = format!("np.ones({shape}, dtype={})", py_str(dt));
            Ok(match flavor {
                Flavor::Onnx => format!("numpy_helper.from_array({arr})"),
                _ => arr,
            })
        }
    }
}

fn value_expr(v: &ParamValue, flavor: Flavor) -> Result<Option<String>, String> {
    Ok(Some(match v {
        ParamValue::None => return Ok(None),
        ParamValue::Bool(b) => if *b { "True" } else { "False" }.to_string(),
        ParamValue::Int(i) => i.to_string(),
        ParamValue::Floating(x) => {
            if !x.is_finite() {
                return Err("non-finite float".into());
            }
            py_float(*x)
        }
        ParamValue::Text(s) => py_str(s),
        ParamValue::IntList(xs) => {
            let items: Vec<String> = xs.iter().map(i64::to_string).collect();
            match flavor {
                Flavor::Onnx => format!("[{}]", items.join(", ")),
                _ => py_tuple(&items),
            }
        }
        ParamValue::Tensor(t) => tensor_expr(t, flavor)?,
    }))
}

fn positional_index(name: &str) -> Option<usize> {
    name.strip_prefix("arg[")?.strip_suffix(']')?.parse().ok()
}

fn is_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Argument list: `arg[i]` pseudo-names first in index order, then keywords
/// in recorded order. `none` params are left out so library defaults apply.
fn call_args(inst: &OperatorInstance, flavor: Flavor) -> Result<Vec<String>, RenderError> {
    let mut positional: Vec<(usize, String)> = Vec::new();
    let mut keyword = Vec::new();
    for (name, value) in inst.params.iter() {
        let Some(expr) = value_expr(value, flavor).map_err(|r| param_err(inst, name, r))? else {
            continue;
        };
        if let Some(i) = positional_index(name) {
            positional.push((i, expr));
        } else if is_identifier(name) {
            keyword.push(format!("{name}={expr}"));
        } else {
            return Err(param_err(inst, name, "not a valid keyword name"));
        }
    }
    positional.sort_by_key(|(i, _)| *i);
    Ok(positional.into_iter().map(|(_, e)| e).chain(keyword).collect())
}

fn callee_is_class(op: &str) -> bool {
    op.rsplit('.')
        .next()
        .and_then(|last| last.chars().next())
        .is_some_and(|c| c.is_ascii_uppercase())
}

fn render_pytorch(inst: &OperatorInstance) -> Result<String, RenderError> {
    let args = call_args(inst, Flavor::Torch)?.join(", ");
    let mut inputs = Vec::new();
    for (i, t) in inst.inputs.iter().enumerate() {
        let input_err = |reason: String| RenderError::Input {
            id: inst.instance_id.clone(),
            index: i,
            reason,
        };
        let shape = py_tuple(&static_shape(t).map_err(input_err)?);
        let dt = torch_dtype(&t.dtype).ok_or_else(|| input_err(format!("unknown dtype {:?}", t.dtype)))?;
        inputs.push(if is_float_dtype(&t.dtype) {
            format!("torch.randn({shape}, dtype={dt})")
        } else if t.dtype == "bool" {
            format!("torch.randint(0, 2, {shape}).bool()")
        } else {
            format!("torch.randint(0, 8, {shape}, dtype={dt})")
        });
    }
    let op = &inst.op_signature;
    let (init, forward) = if callee_is_class(op) {
        (format!("self.op = {op}({args})"), "return self.op(*args)".to_string())
    } else {
        let extra = if args.is_empty() {
            String::new()
        } else {
            format!(", {args}")
        };
        ("pass".to_string(), format!("return {op}(*args{extra})"))
    };
    Ok(format!(
        "import sys

import torch


class Model(torch.nn.Module):
    def __init__(self):
        super().__init__()
        {init}

    def forward(self, *args):
        {forward}


torch.manual_seed(0)
inputs = [{inputs}]
model = Model().eval()
with torch.no_grad():
    traced = torch.jit.trace(model, tuple(inputs))
traced.save(sys.argv[1] if len(sys.argv) > 1 else \"model.pt\")
",
        inputs = inputs.join(", "),
    ))
}

fn render_keras(inst: &OperatorInstance) -> Result<String, RenderError> {
    let args = call_args(inst, Flavor::Keras)?.join(", ");
    let mut inputs = Vec::new();
    for (i, t) in inst.inputs.iter().enumerate() {
        let dt = numpy_dtype(&t.dtype).ok_or_else(|| RenderError::Input {
            id: inst.instance_id.clone(),
            index: i,
            reason: format!("unknown dtype {:?}", t.dtype),
        })?;
        let dims: Vec<String> = t
            .shape
            .iter()
            .map(|&d| if d < 0 { "None".to_string() } else { d.to_string() })
            .collect();
        let (batch, rest) = match dims.split_first() {
            Some((b, rest)) => (b.clone(), rest.to_vec()),
            None => ("None".to_string(), Vec::new()),
        };
        inputs.push(format!(
            "keras.Input(shape={}, batch_size={batch}, dtype={})",
            py_tuple(&rest),
            py_str(dt)
        ));
    }
    let op = &inst.op_signature;
    let call = if inputs.len() == 1 {
        "layer(inputs[0])"
    } else {
        "layer(inputs)"
    };
    Ok(format!(
        "import sys

import numpy as np
from tensorflow import keras

inputs = [{inputs}]
layer = {op}({args})
outputs = {call}
model = keras.Model(inputs, outputs)
model.save(sys.argv[1] if len(sys.argv) > 1 else \"model.keras\")
",
        inputs = inputs.join(", "),
    ))
}

fn render_onnx(inst: &OperatorInstance) -> Result<String, RenderError> {
    let mut attrs = Vec::new();
    for (name, value) in inst.params.iter() {
        if positional_index(name).is_some() || !is_identifier(name) {
            return Err(param_err(inst, name, "ONNX attributes must be named"));
        }
        if let Some(expr) = value_expr(value, Flavor::Onnx).map_err(|r| param_err(inst, name, r))? {
            attrs.push(format!("{name}={expr}"));
        }
    }
    let mut names = Vec::new();
    let mut infos = Vec::new();
    for (i, t) in inst.inputs.iter().enumerate() {
        let dt = onnx_dtype(&t.dtype).ok_or_else(|| RenderError::Input {
            id: inst.instance_id.clone(),
            index: i,
            reason: format!("unknown dtype {:?}", t.dtype),
        })?;
        let dims: Vec<String> = t
            .shape
            .iter()
            .enumerate()
            .map(|(k, &d)| {
                if d < 0 {
                    py_str(&format!("d{i}_{k}"))
                } else {
                    d.to_string()
                }
            })
            .collect();
        names.push(py_str(&format!("x{i}")));
        infos.push(format!(
            "helper.make_tensor_value_info(\"x{i}\", {dt}, [{}])",
            dims.join(", ")
        ));
    }
    let op_type = inst.op_signature.rsplit('.').next().unwrap_or(&inst.op_signature);
    let mut node_args = vec![
        py_str(op_type),
        format!("inputs=[{}]", names.join(", ")),
        "outputs=[\"y\"]".into(),
    ];
    node_args.extend(attrs);
    Ok(format!(
        "import sys

import numpy as np
import onnx
from onnx import TensorProto, helper, numpy_helper

node = helper.make_node({node})
graph = helper.make_graph(
    [node],
    \"opera\",
    [{infos}],
    [helper.make_tensor_value_info(\"y\", TensorProto.UNDEFINED, None)],
)
model = helper.make_model(graph)
onnx.save(model, sys.argv[1] if len(sys.argv) > 1 else \"model.onnx\")
",
        node = node_args.join(", "),
        infos = infos.join(", "),
    ))
}
