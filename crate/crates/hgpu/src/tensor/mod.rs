//! Dense f64 tensor engine with reverse-mode automatic differentiation.
//!
//! Everything the network needs is built from the primitives in this module:
//! row-major buffers, a Wengert tape recorded during the forward pass, and a
//! reverse traversal that accumulates gradients with `+=` on fan-out. All math
//! is 64-bit so finite-difference verification is reliable.

mod conv;
mod gradcheck;
mod kernels;
mod norm;
mod ops;

pub use gradcheck::{finite_diff_check, FdOptions, GradCheckReport, GradReport};
pub use norm::BatchNormState;

use std::cell::{Cell, RefCell};
use std::fmt;
use std::rc::Rc;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { len: usize, shape: Vec<usize> },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("invalid value: {0}")]
    Value(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

struct Inner {
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    grad: RefCell<Option<Vec<f64>>>,
    requires_grad: Cell<bool>,
}

/// Handle to a dense row-major f64 buffer. Cloning is cheap (shared storage).
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<Inner>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Tensor(shape={:?}, requires_grad={})",
            self.shape(),
            self.requires_grad()
        )
    }
}

impl Tensor {
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        if shape.iter().any(|&d| d == 0) {
            return Err(TensorError::Dimension(format!(
                "zero extent in shape {shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(TensorError::DataLength {
                len: data.len(),
                shape: shape.to_vec(),
            });
        }
        Ok(Tensor {
            inner: Rc::new(Inner {
                shape: shape.to_vec(),
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad: Cell::new(false),
            }),
        })
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        let numel: usize = shape.iter().product();
        Tensor::new(vec![value; numel], shape).expect("full: consistent by construction")
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor::new(vec![value], &[1]).expect("scalar")
    }

    /// A trainable leaf: gradients accumulate here during backward.
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        let t = Tensor::new(data, shape)?;
        t.inner.requires_grad.set(true);
        Ok(t)
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn data(&self) -> std::cell::Ref<'_, Vec<f64>> {
        self.inner.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.inner.data.borrow().clone()
    }

    /// Overwrite the buffer in place (shape is unchanged).
    pub fn set_data(&self, values: &[f64]) {
        let mut d = self.inner.data.borrow_mut();
        assert_eq!(values.len(), d.len(), "set_data: length mismatch");
        d.copy_from_slice(values);
    }

    pub fn item(&self) -> f64 {
        let d = self.inner.data.borrow();
        assert_eq!(d.len(), 1, "item() on non-scalar tensor");
        d[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad.get()
    }

    pub(crate) fn mark_requires_grad(&self) {
        self.inner.requires_grad.set(true);
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    pub(crate) fn clear_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    pub(crate) fn accumulate_grad(&self, contribution: &[f64]) {
        let mut g = self.inner.grad.borrow_mut();
        match g.as_mut() {
            Some(buf) => {
                for (a, b) in buf.iter_mut().zip(contribution) {
                    *a += b;
                }
            }
            None => *g = Some(contribution.to_vec()),
        }
    }

    pub(crate) fn seed_grad_ones(&self) {
        *self.inner.grad.borrow_mut() = Some(vec![1.0; self.numel()]);
    }

    pub fn is_finite(&self) -> bool {
        self.inner.data.borrow().iter().all(|v| v.is_finite())
    }

    fn same_buffer(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }
}

struct TapeEntry {
    op: &'static str,
    /// Kept so the tape is a record of inputs/outputs, not just closures.
    #[allow(dead_code)]
    inputs: Vec<Tensor>,
    output: Tensor,
    backward: Box<dyn Fn()>,
}

/// Wengert tape: forward ops append entries in execution order (topological by
/// construction); `backward` replays them once in reverse.
pub struct Tape {
    entries: RefCell<Vec<TapeEntry>>,
    recording: bool,
    corrupt_op: Option<String>,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

impl Tape {
    /// A recording tape for training / gradient computation.
    pub fn new() -> Tape {
        Tape {
            entries: RefCell::new(Vec::new()),
            recording: true,
            corrupt_op: None,
        }
    }

    /// A non-recording tape: forward values only, no backward graph.
    pub fn inference() -> Tape {
        Tape {
            entries: RefCell::new(Vec::new()),
            recording: false,
            corrupt_op: None,
        }
    }

    /// Test hook for the gradient checker's negative control: after the named
    /// op's backward runs, its first input gradient is perturbed, so a check
    /// against finite differences must fail for that op.
    pub fn with_corrupted_op(op: &str) -> Tape {
        Tape {
            entries: RefCell::new(Vec::new()),
            recording: true,
            corrupt_op: Some(op.to_string()),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.borrow().is_empty()
    }

    pub(crate) fn should_record(&self, inputs: &[&Tensor]) -> bool {
        self.recording && inputs.iter().any(|t| t.requires_grad())
    }

    pub(crate) fn record(
        &self,
        op: &'static str,
        inputs: &[&Tensor],
        output: &Tensor,
        backward: Box<dyn Fn()>,
    ) {
        output.mark_requires_grad();
        self.entries.borrow_mut().push(TapeEntry {
            op,
            inputs: inputs.iter().map(|t| (*t).clone()).collect(),
            output: output.clone(),
            backward,
        });
    }

    /// Reverse traversal: seeds `d loss / d loss = 1`, visits every entry
    /// exactly once in reverse execution order, accumulating gradients into
    /// inputs. Intermediate output grads are dropped once consumed; leaf
    /// (parameter) gradients survive the call.
    pub fn backward(&self, loss: &Tensor) -> Result<()> {
        if loss.numel() != 1 {
            return Err(TensorError::NonScalarLoss(loss.shape().to_vec()));
        }
        loss.seed_grad_ones();
        let entries = std::mem::take(&mut *self.entries.borrow_mut());
        for entry in entries.iter().rev() {
            if entry.output.has_grad() {
                (entry.backward)();
                if let Some(ref name) = self.corrupt_op {
                    if entry.op == name {
                        if let Some(first) = entry.inputs.first() {
                            let n = first.numel();
                            let mut poke = vec![0.0; n];
                            poke[0] = 0.5;
                            first.accumulate_grad(&poke);
                        }
                    }
                }
            }
            // The producer is the only reader of its output's gradient, and it
            // has just run; free the buffer unless the output is also the loss.
            if !entry.output.same_buffer(loss) {
                entry.output.clear_grad();
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_zero_extent() {
        assert!(Tensor::new(vec![], &[0, 3]).is_err());
    }

    #[test]
    fn new_rejects_length_mismatch() {
        assert!(Tensor::new(vec![1.0, 2.0], &[3]).is_err());
    }

    #[test]
    fn square_gradient_is_two_x() {
        // y = x*x at x = 3 -> dy/dx = 6
        let tape = Tape::new();
        let x = Tensor::param(vec![3.0], &[1]).unwrap();
        let y = tape.hadamard(&x, &x).unwrap();
        tape.backward(&y).unwrap();
        assert_eq!(x.grad().unwrap(), vec![6.0]);
    }

    #[test]
    fn fanout_accumulates() {
        // y = x + x -> dy/dx = 2
        let tape = Tape::new();
        let x = Tensor::param(vec![1.5], &[1]).unwrap();
        let y = tape.add(&x, &x).unwrap();
        tape.backward(&y).unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let tape = Tape::new();
        let x = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
        let y = tape.add(&x, &x).unwrap();
        assert!(matches!(
            tape.backward(&y),
            Err(TensorError::NonScalarLoss(_))
        ));
    }

    #[test]
    fn inference_tape_records_nothing() {
        let tape = Tape::inference();
        let x = Tensor::param(vec![1.0], &[1]).unwrap();
        let y = tape.hadamard(&x, &x).unwrap();
        assert!(tape.is_empty());
        assert!(!y.requires_grad());
    }

    #[test]
    fn intermediate_grads_are_released() {
        let tape = Tape::new();
        let x = Tensor::param(vec![2.0], &[1]).unwrap();
        let y = tape.hadamard(&x, &x).unwrap();
        let z = tape.hadamard(&y, &x).unwrap();
        tape.backward(&z).unwrap();
        // x is a leaf: d(x^3)/dx = 3x^2 = 12; y is intermediate and dropped.
        assert_eq!(x.grad().unwrap(), vec![12.0]);
        assert!(y.grad().is_none());
    }
}

// Raw kernel entry points for the perf example; not part of the public API.
#[doc(hidden)]
pub use kernels::im2col as bench_im2col;
#[doc(hidden)]
pub use kernels::matmul as bench_matmul;
#[doc(hidden)]
pub use kernels::softmax_rows as bench_softmax;
