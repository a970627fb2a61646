use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::NumericsError;

/// Dense row-major `f64` array with an optional gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct DArray {
    shape: Vec<usize>,
    values: Vec<f64>,
    pub requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl DArray {
    pub fn new(shape: &[usize], values: Vec<f64>) -> Result<Self, NumericsError> {
        if shape.contains(&0) && !values.is_empty() {
            return Err(NumericsError::Shape(format!(
                "shape {shape:?} has a zero dimension but {} values",
                values.len()
            )));
        }
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(NumericsError::Shape(format!(
                "shape {shape:?} needs {n} values, got {}",
                values.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            values,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            values: vec![0.0; n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let mut a = Self::zeros(shape);
        a.values.iter_mut().for_each(|v| *v = value);
        a
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            values: vec![value],
            requires_grad: false,
            grad: None,
        }
    }

    /// Builds a 2-D array from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NumericsError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(NumericsError::Shape("ragged rows".into()));
        }
        Self::new(&[rows.len(), cols], rows.concat())
    }

    /// Zero-mean normal initialisation.
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let mut a = Self::zeros(shape);
        if std > 0.0 {
            let normal = Normal::new(0.0, std).expect("std is positive");
            a.values.iter_mut().for_each(|v| *v = normal.sample(rng));
        }
        a
    }

    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Self {
        let mut a = Self::zeros(shape);
        a.values
            .iter_mut()
            .for_each(|v| *v = rng.random_range(lo..hi));
        a
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Adds `delta` into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, delta: &[f64]) {
        assert_eq!(delta.len(), self.values.len(), "gradient length mismatch");
        match &mut self.grad {
            Some(g) => g.iter_mut().zip(delta).for_each(|(g, d)| *g += d),
            None => self.grad = Some(delta.to_vec()),
        }
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Number of rows when viewed as `rows × last_dim`.
    pub fn rows(&self) -> usize {
        rows_of(&self.shape)
    }

    pub fn last_dim(&self) -> usize {
        last_of(&self.shape)
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let n = self.last_dim();
        &self.values[r * n..(r + 1) * n]
    }
}

pub(crate) fn rows_of(shape: &[usize]) -> usize {
    match shape.len() {
        0 => 1,
        n => shape[..n - 1].iter().product(),
    }
}

pub(crate) fn last_of(shape: &[usize]) -> usize {
    shape.last().copied().unwrap_or(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_values() {
        assert!(DArray::new(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(DArray::new(&[2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn zero_grad_resets_to_zero() {
        let mut a = DArray::zeros(&[2, 2]).with_grad();
        a.accumulate_grad(&[1.0, 2.0, 3.0, 4.0]);
        a.accumulate_grad(&[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(a.grad().unwrap(), &[2.0, 3.0, 4.0, 5.0]);
        a.zero_grad();
        assert!(a.grad().unwrap().iter().all(|&g| g == 0.0));
        assert_eq!(a.grad().unwrap().len(), a.len());
    }

    #[test]
    fn row_view() {
        let a = DArray::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(a.rows(), 2);
        assert_eq!(a.row(1), &[3.0, 4.0]);
    }
}
