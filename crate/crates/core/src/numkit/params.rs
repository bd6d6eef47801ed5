use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayoutEntry {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// Ordered table of named parameter blocks for one architecture.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    arch_id: String,
    entries: Vec<LayoutEntry>,
    total: usize,
}

impl ParamLayout {
    /// Builds a contiguous layout from `(name, len)` pairs.
    pub fn contiguous(arch_id: impl Into<String>, blocks: &[(String, usize)]) -> Self {
        let mut entries = Vec::with_capacity(blocks.len());
        let mut offset = 0;
        for (name, len) in blocks {
            entries.push(LayoutEntry { name: name.clone(), offset, len: *len });
            offset += len;
        }
        Self { arch_id: arch_id.into(), entries, total: offset }
    }

    pub fn arch_id(&self) -> &str {
        &self.arch_id
    }

    pub fn entries(&self) -> &[LayoutEntry] {
        &self.entries
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn entry(&self, name: &str) -> Option<&LayoutEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

/// Flattened network parameters tagged with their layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
    layout: Arc<ParamLayout>,
}

impl ParamVector {
    pub fn new(layout: Arc<ParamLayout>, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.total() {
            return Err(Error::Layout(format!(
                "{} values for a layout of {}",
                values.len(),
                layout.total()
            )));
        }
        Ok(Self { values, layout })
    }

    pub fn zeros(layout: Arc<ParamLayout>) -> Self {
        let values = alloc::vec![0.0; layout.total()];
        Self { values, layout }
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn arch_id(&self) -> &str {
        self.layout.arch_id()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn block(&self, name: &str) -> Option<&[f64]> {
        self.layout.entry(name).map(|e| &self.values[e.offset..e.offset + e.len])
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || *self.layout == *other.layout
    }

    pub fn check_layout(&self, other: &ParamVector) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(Error::Layout(format!(
                "{} vs {}",
                self.layout.arch_id(),
                other.layout.arch_id()
            )))
        }
    }

    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        ParamVector::new(self.layout.clone(), values)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { values: self.values.iter().map(|v| v * c).collect(), layout: self.layout.clone() }
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| f64::max(m, v.abs()))
    }
}

/// Squared Euclidean distance between two parameter vectors of the same layout.
pub fn param_distance_sq(a: &ParamVector, b: &ParamVector) -> Result<f64> {
    a.check_layout(b)?;
    Ok(distance_sq(&a.values, &b.values))
}

pub(crate) fn distance_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
