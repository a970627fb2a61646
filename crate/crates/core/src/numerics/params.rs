use super::{DArray, NumericsError, Tape, Var};

/// Index of a named parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Ordered collection of named, trainable arrays.
///
/// Order is insertion order and is part of the serialized format.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    arrays: Vec<DArray>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, array: DArray) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.arrays.push(array.with_grad());
        ParamId(self.arrays.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &DArray {
        &self.arrays[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut DArray {
        &mut self.arrays[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.arrays.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &DArray)> {
        self.names.iter().map(String::as_str).zip(&self.arrays)
    }

    pub fn num_scalars(&self) -> usize {
        self.arrays.iter().map(DArray::len).sum()
    }

    pub fn zero_grad(&mut self) {
        self.arrays.iter_mut().for_each(DArray::zero_grad);
    }

    /// Copies the gradients recorded on `tape` for `binding` into the store.
    pub fn accumulate_grads(&mut self, tape: &Tape, binding: &Binding) {
        for (array, &var) in self.arrays.iter_mut().zip(&binding.vars) {
            if let Some(g) = tape.grad(var) {
                array.accumulate_grad(g);
            }
        }
    }

    /// L2 norm of the gradients of parameters whose name starts with `prefix`.
    pub fn grad_norm(&self, prefix: &str) -> f64 {
        self.iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .filter_map(|(_, a)| a.grad())
            .flat_map(|g| g.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Overwrites values from `other`, which must have identical names and shapes.
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<(), NumericsError> {
        if self.names != other.names {
            return Err(NumericsError::Contract("parameter names differ".into()));
        }
        for (dst, src) in self.arrays.iter_mut().zip(&other.arrays) {
            if dst.shape() != src.shape() {
                return Err(NumericsError::Dimension {
                    op: "copy_values_from",
                    lhs: dst.shape().to_vec(),
                    rhs: src.shape().to_vec(),
                });
            }
            dst.values_mut().copy_from_slice(src.values());
        }
        Ok(())
    }
}

/// Tape leaves for every parameter in a store, in store order.
#[derive(Debug, Clone)]
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl Tape {
    /// Records every parameter of `store` as a gradient-tracking leaf.
    pub fn bind(&mut self, store: &ParamStore) -> Binding {
        Binding {
            vars: store.arrays.iter().map(|a| self.leaf(a)).collect(),
        }
    }

    /// Records every parameter as a constant, for inference.
    pub fn bind_frozen(&mut self, store: &ParamStore) -> Binding {
        Binding {
            vars: store
                .arrays
                .iter()
                .map(|a| {
                    self.constant(a.shape(), a.values().to_vec())
                        .expect("stored arrays are well-formed")
                })
                .collect(),
        }
    }
}
