//! Flat parameter storage with named segments.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use alloc::{format, vec};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> core::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Ordered list of named segments covering a flat vector without gaps.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ParamLayout {
    segments: Vec<Segment>,
    total: usize,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a segment. Names must be unique within a layout.
    pub fn push(&mut self, name: &str, shape: &[usize]) -> Result<()> {
        if self.segments.iter().any(|s| s.name == name) {
            return Err(Error::LayoutMismatch(format!("duplicate segment `{name}`")));
        }
        let seg = Segment {
            name: name.to_string(),
            offset: self.total,
            shape: shape.to_vec(),
        };
        self.total += seg.len();
        self.segments.push(seg);
        Ok(())
    }

    pub fn with(mut self, name: &str, shape: &[usize]) -> Result<Self> {
        self.push(name, shape)?;
        Ok(self)
    }

    pub fn total_len(&self) -> usize {
        self.total
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }
}

/// Parameter values together with the layout that names them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: ParamLayout,
}

impl ParamVector {
    pub fn zeros(layout: ParamLayout) -> Self {
        Self {
            values: vec![0.0; layout.total_len()],
            layout,
        }
    }

    pub fn from_values(layout: ParamLayout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.total_len() {
            return Err(Error::ShapeMismatch {
                what: "parameter values",
                expected: layout.total_len(),
                found: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("parameter {i} is not finite")));
        }
        Ok(Self { values, layout })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        self.layout.segment(name).map(|s| &self.values[s.range()])
    }

    pub fn segment_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let range = self.layout.segment(name)?.range();
        Some(&mut self.values[range])
    }

    /// Returns a copy with the same layout and different values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::from_values(self.layout.clone(), values)
    }

    pub(crate) fn expect_layout(&self, expected: &ParamLayout, what: &str) -> Result<()> {
        if &self.layout != expected {
            return Err(Error::LayoutMismatch(format!(
                "{what}: parameters do not match the architecture ({} vs {} values)",
                self.values.len(),
                expected.total_len()
            )));
        }
        Ok(())
    }
}
