// SPDX-License-Identifier: Apache-2.0

//! Equivalence-class partitioning of parameter values.
//!
//! Every [`ParamValue`] maps to exactly one [`Subspace`]. Integers fall into
//! five classes with `-1`, `0` and `1` singled out; floats split at zero;
//! categorical values are their own class; tensors combine dtype, a rank
//! bucket and the set of integer classes of their dimensions.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use crate::corpus::{OperatorInstance, ParamValue, TensorSpec};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PartitionError {
    #[error("non-finite floating value {0}")]
    NonFinite(f64),
}

/// Integer subspaces: `(-inf, -2]`, `[-1]`, `[0]`, `[1]`, `[2, inf)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum IntClass {
    LeNeg2,
    Neg1,
    Zero,
    One,
    Ge2,
}

impl IntClass {
    pub fn label(self) -> &'static str {
        match self {
            IntClass::LeNeg2 => "INT_LE_NEG2",
            IntClass::Neg1 => "INT_NEG1",
            IntClass::Zero => "INT_ZERO",
            IntClass::One => "INT_ONE",
            IntClass::Ge2 => "INT_GE2",
        }
    }
}

/// Float subspaces: `(-inf, 0)`, `[0]`, `(0, inf)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FloatClass {
    Neg,
    Zero,
    Pos,
}

impl FloatClass {
    pub fn label(self) -> &'static str {
        match self {
            FloatClass::Neg => "FLT_NEG",
            FloatClass::Zero => "FLT_ZERO",
            FloatClass::Pos => "FLT_POS",
        }
    }
}

/// Tensor rank bucket: ranks 0 through 5 individually, then 6 and above.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RankClass {
    Exact(u8),
    Ge6,
}

impl RankClass {
    pub fn of(rank: usize) -> Self {
        if rank >= 6 {
            RankClass::Ge6
        } else {
            RankClass::Exact(rank as u8)
        }
    }
}

impl fmt::Display for RankClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RankClass::Exact(r) => write!(f, "DIM_{r}"),
            RankClass::Ge6 => f.write_str("DIM_GE6"),
        }
    }
}

/// The equivalence class a parameter value falls into.
///
/// `Display` renders the canonical label, e.g. `TEN(float32|DIM_4|{INT_ONE,INT_GE2})`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Subspace {
    Int(IntClass),
    Float(FloatClass),
    Cat(String),
    None,
    Tensor {
        dtype: String,
        rank: RankClass,
        dims: BTreeSet<IntClass>,
    },
    List {
        len: IntClass,
        elems: BTreeSet<IntClass>,
    },
}

fn write_set(f: &mut fmt::Formatter<'_>, set: &BTreeSet<IntClass>) -> fmt::Result {
    f.write_str("{")?;
    for (i, c) in set.iter().enumerate() {
        if i > 0 {
            f.write_str(",")?;
        }
        f.write_str(c.label())?;
    }
    f.write_str("}")
}

impl fmt::Display for Subspace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Subspace::Int(c) => f.write_str(c.label()),
            Subspace::Float(c) => f.write_str(c.label()),
            Subspace::Cat(v) => write!(f, "CAT:{v}"),
            Subspace::None => f.write_str("NONE"),
            Subspace::Tensor { dtype, rank, dims } => {
                write!(f, "TEN({dtype}|{rank}|")?;
                write_set(f, dims)?;
                f.write_str(")")
            }
            Subspace::List { len, elems } => {
                write!(f, "LIST({}|", len.label())?;
                write_set(f, elems)?;
                f.write_str(")")
            }
        }
    }
}

impl serde::Serialize for Subspace {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

pub fn partition_int(v: i64) -> IntClass {
    match v {
        i64::MIN..=-2 => IntClass::LeNeg2,
        -1 => IntClass::Neg1,
        0 => IntClass::Zero,
        1 => IntClass::One,
        _ => IntClass::Ge2,
    }
}

pub fn partition_float(v: f64) -> Result<FloatClass, PartitionError> {
    if !v.is_finite() {
        return Err(PartitionError::NonFinite(v));
    }
    Ok(if v < 0.0 {
        FloatClass::Neg
    } else if v == 0.0 {
        FloatClass::Zero
    } else {
        FloatClass::Pos
    })
}

fn int_set(values: &[i64]) -> BTreeSet<IntClass> {
    values.iter().map(|&v| partition_int(v)).collect()
}

pub fn partition_tensor(t: &TensorSpec) -> Subspace {
    Subspace::Tensor {
        dtype: t.dtype.clone(),
        rank: RankClass::of(t.rank()),
        dims: int_set(&t.shape),
    }
}

pub fn partition_value(v: &ParamValue) -> Result<Subspace, PartitionError> {
    Ok(match v {
        ParamValue::Bool(b) => Subspace::Cat(b.to_string()),
        ParamValue::Text(s) => Subspace::Cat(s.clone()),
        ParamValue::Int(i) => Subspace::Int(partition_int(*i)),
        ParamValue::Floating(x) => Subspace::Float(partition_float(*x)?),
        ParamValue::IntList(v) => Subspace::List {
            len: partition_int(v.len() as i64),
            elems: int_set(v),
        },
        ParamValue::Tensor(t) => partition_tensor(t),
        ParamValue::None => Subspace::None,
    })
}

/// A (parameter name, subspace) element of a coverage signature.
pub type Single = (String, Subspace);
/// Two singles with distinct names, lexicographically ordered by name.
pub type Pair = (Single, Single);

/// Singles and pairwise combinations covered by one instance.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CoverageSignature {
    pub singles: BTreeSet<Single>,
    pub pairs: BTreeSet<Pair>,
}

impl CoverageSignature {
    pub fn len(&self) -> usize {
        self.singles.len() + self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Subspace recorded for `name`, if the parameter is present.
    pub fn subspace_of(&self, name: &str) -> Option<&Subspace> {
        self.singles.iter().find(|(n, _)| n == name).map(|(_, s)| s)
    }

    /// Canonical label recorded for `name`, if the parameter is present.
    pub fn label_of(&self, name: &str) -> Option<String> {
        self.subspace_of(name).map(|s| s.to_string())
    }

    /// Whether the parameter `name` was recorded in the subspace labelled `label`.
    pub fn covers(&self, name: &str, label: &str) -> bool {
        self.label_of(name).is_some_and(|l| l == label)
    }
}

/// Pseudo-parameter name under which model input `i` participates.
pub fn input_name(i: usize) -> String {
    format!("input[{i}]")
}

pub fn signature_of(inst: &OperatorInstance) -> Result<CoverageSignature, PartitionError> {
    let mut elems: Vec<Single> = Vec::with_capacity(inst.params.len() + inst.inputs.len());
    for (name, value) in inst.params.iter() {
        elems.push((name.to_string(), partition_value(value)?));
    }
    for (i, t) in inst.inputs.iter().enumerate() {
        elems.push((input_name(i), partition_tensor(t)));
    }
    elems.sort();

    let mut pairs = BTreeSet::new();
    for (i, a) in elems.iter().enumerate() {
        for b in &elems[i + 1..] {
            if a.0 != b.0 {
                pairs.insert((a.clone(), b.clone()));
            }
        }
    }
    Ok(CoverageSignature {
        singles: elems.into_iter().collect(),
        pairs,
    })
}
