// SPDX-License-Identifier: Apache-2.0

#![allow(dead_code)]

use opera_core::corpus::{Library, OperatorInstance, ParamValue, Params, Source, TensorSpec};
use proptest::prelude::*;

pub fn param_value() -> impl Strategy<Value = ParamValue> {
    prop_oneof![
        any::<bool>().prop_map(ParamValue::Bool),
        (-3i64..4).prop_map(ParamValue::Int),
        prop_oneof![Just(0.0), -2.0f64..2.0].prop_map(ParamValue::Floating),
        prop::sample::select(vec!["same", "valid", "zeros"]).prop_map(|s| ParamValue::Text(s.into())),
        prop::collection::vec(-2i64..4, 0..4).prop_map(ParamValue::IntList),
        tensor().prop_map(ParamValue::Tensor),
        Just(ParamValue::None),
    ]
}

pub fn tensor() -> impl Strategy<Value = TensorSpec> {
    (
        prop::sample::select(vec!["float32", "int64", "float16"]),
        prop::collection::vec(1i64..5, 0..5),
    )
        .prop_map(|(d, s)| TensorSpec::new(d, s))
}

pub fn instance(id: String, ops: usize) -> impl Strategy<Value = OperatorInstance> {
    (
        0..ops,
        prop::collection::vec(param_value(), 1..4),
        prop::collection::vec(tensor(), 0..2),
        prop::sample::select(vec![Library::PyTorch, Library::Keras, Library::Onnx]),
        prop::sample::select(vec![Source::Human, Source::DocTer, Source::DeepRel]),
    )
        .prop_map(move |(op, values, inputs, library, source)| {
            let params: Params = values
                .into_iter()
                .enumerate()
                .map(|(i, v)| (format!("p{i}"), v))
                .collect();
            OperatorInstance {
                instance_id: id.clone(),
                library,
                op_signature: format!("lib.op{op}"),
                params,
                inputs,
                source,
            }
        })
}

/// Corpus with unique ids over a small operator vocabulary.
pub fn corpus(max: usize, prefix: &'static str) -> impl Strategy<Value = Vec<OperatorInstance>> {
    (0..=max).prop_flat_map(move |n| (0..n).map(|i| instance(format!("{prefix}{i}"), 4)).collect::<Vec<_>>())
}
