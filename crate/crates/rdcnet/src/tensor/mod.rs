//! Minimal dense tensor engine with reverse-mode autodiff.
//!
//! Tensors are immutable after creation; gradients accumulate into a
//! per-tensor buffer during [`Tensor::backward`]. Only the operations the
//! network actually needs are implemented, all in NCHW layout.

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::ops::Deref;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};

pub mod conv;
pub mod ops;
pub mod optim;

pub use optim::{adam_step, cosine_lr, AdamConfig, ParamGroup};

use num_traits::Float;

/// Element type of the engine. f32 for training, f64 for gradient checking.
pub trait Scalar:
    Float
    + num_traits::NumAssignOps
    + fmt::Debug
    + Default
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64_(self) -> f64;
    fn from_f32(v: f32) -> Self;
    fn to_f32_(self) -> f32;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64_(self) -> f64 {
        self as f64
    }
    fn from_f32(v: f32) -> Self {
        v
    }
    fn to_f32_(self) -> f32 {
        self
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64_(self) -> f64 {
        self
    }
    fn from_f32(v: f32) -> Self {
        v as f64
    }
    fn to_f32_(self) -> f32 {
        self as f32
    }
}

static ALLOC_CURRENT: AtomicUsize = AtomicUsize::new(0);
static ALLOC_PEAK: AtomicUsize = AtomicUsize::new(0);

/// Byte-accounting for tensor element storage, used to verify that inference
/// memory stays constant with the iteration count.
pub mod alloc_stats {
    use super::*;

    pub fn current_bytes() -> usize {
        ALLOC_CURRENT.load(Ordering::SeqCst)
    }

    pub fn peak_bytes() -> usize {
        ALLOC_PEAK.load(Ordering::SeqCst)
    }

    /// Resets the high-water mark to the currently live amount.
    pub fn reset_peak() {
        let cur = ALLOC_CURRENT.load(Ordering::SeqCst);
        ALLOC_PEAK.store(cur, Ordering::SeqCst);
    }

    pub(super) fn add(bytes: usize) {
        let cur = ALLOC_CURRENT.fetch_add(bytes, Ordering::SeqCst) + bytes;
        ALLOC_PEAK.fetch_max(cur, Ordering::SeqCst);
    }

    pub(super) fn sub(bytes: usize) {
        ALLOC_CURRENT.fetch_sub(bytes, Ordering::SeqCst);
    }
}

/// Element storage that participates in the allocation accounting.
pub struct Buffer<T: Scalar> {
    data: Vec<T>,
}

impl<T: Scalar> Buffer<T> {
    pub fn zeros(len: usize) -> Self {
        Self::from_vec(vec![T::zero(); len])
    }

    pub fn from_vec(data: Vec<T>) -> Self {
        alloc_stats::add(data.len() * std::mem::size_of::<T>());
        Buffer { data }
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }
}

impl<T: Scalar> Drop for Buffer<T> {
    fn drop(&mut self) {
        alloc_stats::sub(self.data.len() * std::mem::size_of::<T>());
    }
}

impl<T: Scalar> Deref for Buffer<T> {
    type Target = [T];
    fn deref(&self) -> &[T] {
        &self.data
    }
}

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

thread_local! {
    static NO_GRAD: std::cell::Cell<bool> = const { std::cell::Cell::new(false) };
}

fn no_grad_active() -> bool {
    NO_GRAD.with(|f| f.get())
}

/// While the returned guard is alive, op outputs on this thread do not
/// record the graph: no parents are retained and no backward closures are
/// kept, so intermediates free as soon as they go out of scope.
pub fn no_grad() -> NoGradGuard {
    NoGradGuard {
        prev: NO_GRAD.with(|f| f.replace(true)),
    }
}

pub struct NoGradGuard {
    prev: bool,
}

impl Drop for NoGradGuard {
    fn drop(&mut self) {
        NO_GRAD.with(|f| f.set(self.prev));
    }
}

/// Gradient contributions an op sends to its parents, aligned with the
/// parent list. `None` means no gradient flows to that parent.
pub type ParentGrads<T> = Vec<Option<Vec<T>>>;

type BackwardFn<T> = Box<dyn Fn(&[T]) -> ParentGrads<T>>;

struct Inner<T: Scalar> {
    id: u64,
    shape: Vec<usize>,
    data: Buffer<T>,
    grad: RefCell<Option<Buffer<T>>>,
    track: bool,
    parents: Vec<Tensor<T>>,
    backward: Option<BackwardFn<T>>,
}

/// Dense n-dimensional array, cheaply clonable (shared storage).
pub struct Tensor<T: Scalar>(Rc<Inner<T>>);

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor(Rc::clone(&self.0))
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("track", &self.0.track)
            .finish()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("shape mismatch for {what}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        what: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: Vec<usize>, data: Vec<T>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "element count {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor(Rc::new(Inner {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data: Buffer::from_vec(data),
            grad: RefCell::new(None),
            track: false,
            parents: Vec::new(),
            backward: None,
        }))
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self::from_vec(shape, vec![T::zero(); n])
    }

    pub fn full(shape: Vec<usize>, value: T) -> Self {
        let n = shape.iter().product();
        Self::from_vec(shape, vec![value; n])
    }

    pub fn scalar(value: T) -> Self {
        Self::from_vec(vec![1], vec![value])
    }

    /// Marks the tensor as a parameter: gradients accumulate into it.
    pub fn tracked(self) -> Self {
        let inner = Inner {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape: self.0.shape.clone(),
            data: Buffer::from_vec(self.0.data.to_vec()),
            grad: RefCell::new(None),
            track: true,
            parents: Vec::new(),
            backward: None,
        };
        Tensor(Rc::new(inner))
    }

    /// Builds a tensor from an op result. Parents and the backward closure
    /// are only retained when gradients can flow.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<T>,
        parents: Vec<Tensor<T>>,
        backward: BackwardFn<T>,
    ) -> Self {
        let track = !no_grad_active() && parents.iter().any(|p| p.0.track);
        assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor(Rc::new(Inner {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data: Buffer::from_vec(data),
            grad: RefCell::new(None),
            track,
            parents: if track { parents } else { Vec::new() },
            backward: if track { Some(backward) } else { None },
        }))
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn len(&self) -> usize {
        self.0.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.0.data
    }

    pub fn track_grad(&self) -> bool {
        self.0.track
    }

    pub fn item(&self) -> T {
        assert_eq!(self.len(), 1, "item() on non-scalar tensor");
        self.0.data[0]
    }

    /// Accumulated gradient; zeros when no backward pass touched it yet.
    pub fn grad(&self) -> Vec<T> {
        match self.0.grad.borrow().as_ref() {
            Some(g) => g.to_vec(),
            None => vec![T::zero(); self.len()],
        }
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Overwrites the element data in place. Only valid for leaf parameters;
    /// panics if the tensor is an op output.
    pub fn set_data(&self, new: &[T]) {
        assert!(
            self.0.backward.is_none(),
            "set_data on a non-leaf tensor"
        );
        assert_eq!(new.len(), self.len());
        // Leaf tensors are never aliased through op graphs, and parameter
        // updates happen between forward passes.
        unsafe {
            let inner = Rc::as_ptr(&self.0) as *mut Inner<T>;
            (*inner).data.as_mut_slice().copy_from_slice(new);
        }
    }

    fn accumulate_grad(&self, delta: &[T]) {
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(buf) => {
                for (g, d) in buf.as_mut_slice().iter_mut().zip(delta) {
                    *g += *d;
                }
            }
            None => {
                *slot = Some(Buffer::from_vec(delta.to_vec()));
            }
        }
    }

    /// Detached copy: same values, no graph history, not tracked.
    pub fn detach(&self) -> Tensor<T> {
        Tensor::from_vec(self.0.shape.clone(), self.0.data.to_vec())
    }

    /// Reverse-mode sweep from a scalar loss. Accumulates dLoss/dT into the
    /// grad buffer of every reachable tracked tensor.
    pub fn backward(&self) -> Result<(), TensorError> {
        if self.len() != 1 {
            return Err(TensorError::Usage(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        // Postorder topological sort over the retained graph.
        let mut order: Vec<Tensor<T>> = Vec::new();
        let mut visited: HashMap<u64, ()> = HashMap::new();
        let mut stack: Vec<(Tensor<T>, usize)> = vec![(self.clone(), 0)];
        while let Some((node, child)) = stack.pop() {
            if child == 0 {
                if visited.contains_key(&node.0.id) {
                    continue;
                }
                visited.insert(node.0.id, ());
            }
            if child < node.0.parents.len() {
                let next = node.0.parents[child].clone();
                stack.push((node.clone(), child + 1));
                if !visited.contains_key(&next.0.id) {
                    stack.push((next, 0));
                }
            } else {
                order.push(node);
            }
        }

        // Flow gradients live in a scratch map so repeated backward passes
        // accumulate exactly once per pass into the persistent buffers.
        let mut flow: HashMap<u64, Vec<T>> = HashMap::new();
        flow.insert(self.0.id, vec![T::one()]);
        for node in order.iter().rev() {
            let grad_out = match flow.remove(&node.0.id) {
                Some(g) => g,
                None => continue,
            };
            if node.0.track {
                node.accumulate_grad(&grad_out);
            }
            if let Some(back) = node.0.backward.as_ref() {
                let parent_grads = back(&grad_out);
                debug_assert_eq!(parent_grads.len(), node.0.parents.len());
                for (parent, pg) in node.0.parents.iter().zip(parent_grads) {
                    if let Some(pg) = pg {
                        debug_assert_eq!(pg.len(), parent.len());
                        if !parent.0.track {
                            continue;
                        }
                        flow.entry(parent.0.id)
                            .and_modify(|acc| {
                                for (a, d) in acc.iter_mut().zip(&pg) {
                                    *a += *d;
                                }
                            })
                            .or_insert(pg);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grad_defaults_to_zero() {
        let t = Tensor::<f64>::zeros(vec![2, 3]).tracked();
        assert_eq!(t.grad(), vec![0.0; 6]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let t = Tensor::<f64>::zeros(vec![2]).tracked();
        assert!(t.backward().is_err());
    }

    #[test]
    fn buffer_accounting_balances() {
        let before = alloc_stats::current_bytes();
        {
            let _t = Tensor::<f32>::zeros(vec![16, 16]);
            assert!(alloc_stats::current_bytes() >= before + 16 * 16 * 4);
        }
        assert_eq!(alloc_stats::current_bytes(), before);
    }
}
