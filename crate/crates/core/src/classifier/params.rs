use crate::error::{Error, Result};

/// A named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub trainable: bool,
}

impl Tensor {
    pub fn zeros(name: &str, shape: &[usize]) -> Tensor {
        Tensor {
            name: name.to_string(),
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
            trainable: true,
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

/// Ordered collection of uniquely named tensors. Gradients use the same
/// type, aligned index-for-index with the parameters they belong to.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn push(&mut self, tensor: Tensor) -> Result<()> {
        if self.index_of(&tensor.name).is_some() {
            return Err(Error::InvalidInput(format!("duplicate parameter `{}`", tensor.name)));
        }
        self.tensors.push(tensor);
        Ok(())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.tensors.iter().position(|t| t.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.iter_mut().find(|t| t.name == name)
    }

    pub(crate) fn data(&self, name: &str) -> &[f64] {
        &self.get(name).unwrap_or_else(|| panic!("parameter {name} missing")).data
    }

    pub(crate) fn data_mut(&mut self, name: &str) -> &mut [f64] {
        &mut self
            .get_mut(name)
            .unwrap_or_else(|| panic!("parameter {name} missing"))
            .data
    }

    /// Mutable data of two distinct tensors at once.
    pub(crate) fn data_pair_mut(&mut self, a: &str, b: &str) -> (&mut [f64], &mut [f64]) {
        let ia = self.index_of(a).unwrap_or_else(|| panic!("parameter {a} missing"));
        let ib = self.index_of(b).unwrap_or_else(|| panic!("parameter {b} missing"));
        assert_ne!(ia, ib, "distinct tensors required");
        if ia < ib {
            let (lo, hi) = self.tensors.split_at_mut(ib);
            (&mut lo[ia].data, &mut hi[0].data)
        } else {
            let (lo, hi) = self.tensors.split_at_mut(ia);
            (&mut hi[0].data, &mut lo[ib].data)
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.tensors.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn zeros_like(&self) -> ParamStore {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: vec![0.0; t.numel()],
                    trainable: t.trainable,
                })
                .collect(),
        }
    }

    /// `self += scale · other` over tensors with matching positions.
    pub fn add_scaled(&mut self, other: &ParamStore, scale: f64) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += scale * y;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}
