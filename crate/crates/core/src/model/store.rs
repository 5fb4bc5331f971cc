//! Named-segment flat parameter storage.
//!
//! All trainable tensors of a network live in one contiguous vector with a
//! layout table mapping names to (offset, shape). Optimizer updates, global
//! gradient clipping, checkpoint serialization, and finite-difference probes
//! then operate on plain slices, while layer code reads shaped views.

use crate::error::{Error, Result};
use crate::scalar::Real;
use ndarray::{Array1, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use std::collections::HashMap;
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl SegmentSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Immutable layout shared by every tensor collection of one architecture.
#[derive(Debug, PartialEq, Eq)]
pub struct TensorLayout {
    entries: Vec<SegmentSpec>,
    by_name: HashMap<String, usize>,
    total: usize,
}

impl TensorLayout {
    pub fn build(segments: impl IntoIterator<Item = (String, Vec<usize>)>) -> Arc<Self> {
        let mut entries = Vec::new();
        let mut by_name = HashMap::new();
        let mut offset = 0usize;
        for (name, shape) in segments {
            let len: usize = shape.iter().product();
            assert!(
                by_name.insert(name.clone(), entries.len()).is_none(),
                "duplicate tensor name {name}"
            );
            entries.push(SegmentSpec { name, shape, offset });
            offset += len;
        }
        Arc::new(Self {
            entries,
            by_name,
            total: offset,
        })
    }

    pub fn total_len(&self) -> usize {
        self.total
    }

    pub fn entries(&self) -> &[SegmentSpec] {
        &self.entries
    }

    pub fn spec(&self, name: &str) -> &SegmentSpec {
        &self.entries[*self
            .by_name
            .get(name)
            .unwrap_or_else(|| panic!("unknown tensor {name}"))]
    }

    pub fn contains(&self, name: &str) -> bool {
        self.by_name.contains_key(name)
    }
}

/// One value per layout slot: parameters, gradients, or moment accumulators.
#[derive(Debug, Clone)]
pub struct FlatTensors<F> {
    layout: Arc<TensorLayout>,
    data: Array1<F>,
}

impl<F: Real> FlatTensors<F> {
    pub fn zeros(layout: Arc<TensorLayout>) -> Self {
        let data = Array1::zeros(layout.total_len());
        Self { layout, data }
    }

    pub fn layout(&self) -> &Arc<TensorLayout> {
        &self.layout
    }

    pub fn values(&self) -> &[F] {
        self.data.as_slice().expect("flat storage is contiguous")
    }

    pub fn values_mut(&mut self) -> &mut [F] {
        self.data
            .as_slice_mut()
            .expect("flat storage is contiguous")
    }

    pub fn array(&self) -> &Array1<F> {
        &self.data
    }

    pub fn array_mut(&mut self) -> &mut Array1<F> {
        &mut self.data
    }

    /// Raw value slice of one named segment.
    pub fn segment_values(&self, name: &str) -> &[F] {
        let spec = self.layout.spec(name);
        &self.values()[spec.offset..spec.offset + spec.len()]
    }

    fn segment_bounds(&self, name: &str, rank: usize) -> (usize, usize, &SegmentSpec) {
        let spec = self.layout.spec(name);
        assert!(
            spec.shape.len() == rank,
            "tensor {name} has rank {}, asked for {rank}",
            spec.shape.len()
        );
        (spec.offset, spec.offset + spec.len(), spec)
    }

    pub fn view1(&self, name: &str) -> ArrayView1<'_, F> {
        let (a, b, _) = self.segment_bounds(name, 1);
        self.data.slice(ndarray::s![a..b])
    }

    pub fn view1_mut(&mut self, name: &str) -> ArrayViewMut1<'_, F> {
        let (a, b, _) = self.segment_bounds(name, 1);
        self.data.slice_mut(ndarray::s![a..b])
    }

    pub fn view2(&self, name: &str) -> ArrayView2<'_, F> {
        let (a, b, spec) = self.segment_bounds(name, 2);
        let (r, c) = (spec.shape[0], spec.shape[1]);
        self.data
            .slice(ndarray::s![a..b])
            .into_shape_with_order((r, c))
            .expect("segment reshape")
    }

    pub fn view2_mut(&mut self, name: &str) -> ArrayViewMut2<'_, F> {
        let (a, b, spec) = self.segment_bounds(name, 2);
        let (r, c) = (spec.shape[0], spec.shape[1]);
        self.data
            .slice_mut(ndarray::s![a..b])
            .into_shape_with_order((r, c))
            .expect("segment reshape")
    }

    /// Copies a whole segment from another collection; shapes must agree.
    pub fn assign_segment(&mut self, name: &str, src: ArrayView1<'_, F>) -> Result<()> {
        let spec = self.layout.spec(name);
        if src.len() != spec.len() {
            return Err(Error::shape(
                "assign_segment",
                format!("{} values for {name}", spec.len()),
                format!("{}", src.len()),
            ));
        }
        let (a, b) = (spec.offset, spec.offset + spec.len());
        self.data.slice_mut(ndarray::s![a..b]).assign(&src);
        Ok(())
    }

    /// Elementwise accumulate (used for weight-sharing gradient sums).
    pub fn add_to_segment(&mut self, name: &str, src: ArrayView1<'_, F>) {
        let spec = self.layout.spec(name);
        assert_eq!(src.len(), spec.len(), "segment {name} length mismatch");
        let (a, b) = (spec.offset, spec.offset + spec.len());
        let mut dst = self.data.slice_mut(ndarray::s![a..b]);
        dst += &src;
    }

    pub fn cast<G: Real>(&self) -> FlatTensors<G> {
        FlatTensors {
            layout: Arc::clone(&self.layout),
            data: self.data.mapv(|v| G::from_f64(v.as_f64())),
        }
    }
}
