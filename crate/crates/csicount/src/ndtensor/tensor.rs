use std::cell::{Ref, RefCell};
use std::rc::Rc;

use crate::{Error, Result, Scalar};

struct Storage<T> {
    shape: Vec<usize>,
    data: Vec<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
}

/// Dense multi-dimensional array with optional gradient tracking.
///
/// Cloning a `Tensor` is cheap and aliases the same storage; gradient
/// accumulation is the only mutation performed by the engine after creation
/// (parameter updates go through [`Tensor::set_data`]).
pub struct Tensor<T> {
    inner: Rc<RefCell<Storage<T>>>,
}

impl<T> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Tensor {
            inner: Rc::new(RefCell::new(Storage {
                shape: shape.to_vec(),
                data,
                grad: None,
                requires_grad: false,
            })),
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        Tensor::from_vec(shape, vec![T::zero(); numel]).unwrap()
    }

    pub fn scalar(value: T) -> Self {
        Tensor::from_vec(&[], vec![value]).unwrap()
    }

    /// Leaf parameter: gradient is accumulated here by `backward`.
    pub fn param(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let t = Tensor::from_vec(shape, data)?;
        t.set_requires_grad(true);
        Ok(t)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.inner.borrow().data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.inner.borrow().shape.is_empty() || self.numel() == 1
    }

    pub fn data(&self) -> Ref<'_, [T]> {
        Ref::map(self.inner.borrow(), |s| s.data.as_slice())
    }

    pub fn data_clone(&self) -> Vec<T> {
        self.inner.borrow().data.clone()
    }

    pub fn item(&self) -> T {
        debug_assert_eq!(self.numel(), 1);
        self.inner.borrow().data[0]
    }

    /// Overwrite the stored values (optimizer updates, checkpoint loads).
    pub fn set_data(&self, data: Vec<T>) -> Result<()> {
        let mut s = self.inner.borrow_mut();
        if data.len() != s.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "set_data: expected {} elements, got {}",
                s.data.len(),
                data.len()
            )));
        }
        s.data = data;
        Ok(())
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.borrow().requires_grad
    }

    pub fn set_requires_grad(&self, v: bool) {
        self.inner.borrow_mut().requires_grad = v;
    }

    /// Accumulated gradient, if any reached this tensor during backward.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.borrow().grad.clone()
    }

    pub fn zero_grad(&self) {
        self.inner.borrow_mut().grad = None;
    }

    pub(crate) fn seed_grad(&self, value: T) {
        let mut s = self.inner.borrow_mut();
        let n = s.data.len();
        s.grad = Some(vec![value; n]);
    }

    /// Add `delta` into the gradient buffer (allocating zeros on first use).
    pub fn accumulate_grad(&self, delta: &[T]) {
        let mut s = self.inner.borrow_mut();
        debug_assert_eq!(delta.len(), s.data.len());
        let n = s.data.len();
        let g = s.grad.get_or_insert_with(|| vec![T::zero(); n]);
        for (gi, di) in g.iter_mut().zip(delta) {
            *gi = *gi + *di;
        }
    }

    pub fn ptr_eq(&self, other: &Tensor<T>) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }
}

impl<T: Scalar> std::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = self.inner.borrow();
        write!(
            f,
            "Tensor(shape={:?}, requires_grad={})",
            s.shape, s.requires_grad
        )
    }
}
