use std::cell::{Cell, RefCell};

use super::Tensor;
use crate::{Error, Result, Scalar};

type BackwardFn = Box<dyn FnOnce()>;

/// Ordered record of executed operations: the autodiff tape.
///
/// One forward/backward pass owns one `Graph`; concurrent passes must use
/// independent graphs. A second `backward` without a new forward is
/// rejected.
pub struct Graph<T> {
    tape: RefCell<Vec<BackwardFn>>,
    recording: bool,
    consumed: Cell<bool>,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            tape: RefCell::new(Vec::new()),
            recording: true,
            consumed: Cell::new(false),
            _marker: std::marker::PhantomData,
        }
    }

    /// A graph that records nothing; use for pure inference forwards.
    pub fn inference() -> Self {
        Graph {
            recording: false,
            ..Self::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    /// Push a backward closure. Closures run in reverse push order.
    pub fn record(&self, f: impl FnOnce() + 'static) {
        if self.recording {
            self.tape.borrow_mut().push(Box::new(f));
        }
    }

    pub fn num_ops(&self) -> usize {
        self.tape.borrow().len()
    }

    /// Replay the chain rule in exact reverse execution order, accumulating
    /// d(loss)/d(leaf) into every tracked leaf reachable from `loss`.
    pub fn backward(&self, loss: &Tensor<T>) -> Result<()> {
        if !loss.is_scalar() {
            return Err(Error::NonScalarLoss(loss.shape()));
        }
        if self.consumed.get() {
            return Err(Error::BackwardConsumed);
        }
        self.consumed.set(true);
        loss.seed_grad(T::one());
        let tape = std::mem::take(&mut *self.tape.borrow_mut());
        for f in tape.into_iter().rev() {
            f();
        }
        Ok(())
    }
}
