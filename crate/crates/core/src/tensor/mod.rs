//! Dense tensors with reverse-mode automatic differentiation.
//!
//! Tensors are immutable values. Each operation records its parents and a
//! backward closure, so a forward pass builds a DAG that [`backward`] walks in
//! reverse topological order, accumulating gradients per node.
//!
//! Real (`f64`) and complex (`Complex64`) storage share one tensor type. The
//! gradient of a complex intermediate is stored as `dL/d(re) + i*dL/d(im)`.
//! For a real-valued loss this is the conjugate of the Wirtinger derivative
//! (times two), the convention under which `p -= lr * grad` descends the loss
//! and under which finite differences on the real/imaginary parts match the
//! analytic gradient component-wise.
//!
//! Graphs are confined to a single thread (`Tensor` is intentionally `!Send`);
//! independent graphs on different threads never share nodes.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use num_complex::Complex64;

use crate::{Error, Result};

pub mod fft;
pub mod gradcheck;
mod ops;

pub use gradcheck::{gradcheck, gradcheck_scaled, GradCheckReport};

/// Element type of a tensor.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum DType {
    Real,
    Complex,
}

/// Flat row-major element buffer.
#[derive(Clone, Debug, PartialEq)]
pub enum Storage {
    Real(Vec<f64>),
    Complex(Vec<Complex64>),
}

impl Storage {
    pub fn len(&self) -> usize {
        match self {
            Storage::Real(v) => v.len(),
            Storage::Complex(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            Storage::Real(_) => DType::Real,
            Storage::Complex(_) => DType::Complex,
        }
    }

    pub fn as_real(&self) -> &[f64] {
        match self {
            Storage::Real(v) => v,
            Storage::Complex(_) => panic!("expected real storage, found complex"),
        }
    }

    pub fn as_complex(&self) -> &[Complex64] {
        match self {
            Storage::Complex(v) => v,
            Storage::Real(_) => panic!("expected complex storage, found real"),
        }
    }

    pub(crate) fn zeros(dtype: DType, n: usize) -> Storage {
        match dtype {
            DType::Real => Storage::Real(vec![0.0; n]),
            DType::Complex => Storage::Complex(vec![Complex64::new(0.0, 0.0); n]),
        }
    }

    pub(crate) fn add_in_place(&mut self, other: &Storage) {
        match (self, other) {
            (Storage::Real(a), Storage::Real(b)) => {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += *y;
                }
            }
            (Storage::Complex(a), Storage::Complex(b)) => {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += *y;
                }
            }
            _ => panic!("gradient dtype mismatch during accumulation"),
        }
    }

    /// True if every element is finite.
    pub fn all_finite(&self) -> bool {
        match self {
            Storage::Real(v) => v.iter().all(|x| x.is_finite()),
            Storage::Complex(v) => v.iter().all(|x| x.re.is_finite() && x.im.is_finite()),
        }
    }
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

type GradFn = Box<dyn Fn(&Inner, &Storage) -> Vec<Option<Storage>>>;

pub(crate) struct Inner {
    id: u64,
    shape: Vec<usize>,
    storage: Storage,
    parents: Vec<Tensor>,
    grad_fn: Option<GradFn>,
    requires_grad: bool,
}

/// Handle to an immutable tensor node; cloning shares the underlying value.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<Inner>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Tensor(id={}, shape={:?}, dtype={:?}, grad={})",
            self.inner.id,
            self.inner.shape,
            self.dtype(),
            self.inner.requires_grad
        )
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    if shape.iter().any(|&e| e == 0) {
        return Err(Error::Contract(format!(
            "tensor extents must be positive, got {shape:?}"
        )));
    }
    if numel(shape) != len {
        return Err(Error::Contract(format!(
            "shape {:?} implies {} elements but buffer has {}",
            shape,
            numel(shape),
            len
        )));
    }
    Ok(())
}

impl Tensor {
    fn new_inner(
        storage: Storage,
        shape: Vec<usize>,
        parents: Vec<Tensor>,
        grad_fn: Option<GradFn>,
        requires_grad: bool,
    ) -> Tensor {
        debug_assert_eq!(storage.len(), numel(&shape));
        Tensor {
            inner: Rc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                storage,
                parents,
                grad_fn,
                requires_grad,
            }),
        }
    }

    /// Op node: keeps the graph only when some parent needs gradients.
    pub(crate) fn make(
        storage: Storage,
        shape: Vec<usize>,
        parents: Vec<Tensor>,
        grad_fn: GradFn,
    ) -> Tensor {
        let requires = parents.iter().any(|p| p.requires_grad());
        if requires {
            Tensor::new_inner(storage, shape, parents, Some(grad_fn), true)
        } else {
            Tensor::new_inner(storage, shape, Vec::new(), None, false)
        }
    }

    /// Detached value node (no parents, no gradient flow).
    pub(crate) fn make_detached(storage: Storage, shape: Vec<usize>) -> Tensor {
        Tensor::new_inner(storage, shape, Vec::new(), None, false)
    }

    /// Constant leaf (gradients do not flow into it).
    pub fn from_vec(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        check_shape(shape, data.len())?;
        Ok(Tensor::new_inner(
            Storage::Real(data),
            shape.to_vec(),
            Vec::new(),
            None,
            false,
        ))
    }

    /// Constant complex leaf.
    pub fn from_complex_vec(data: Vec<Complex64>, shape: &[usize]) -> Result<Tensor> {
        check_shape(shape, data.len())?;
        Ok(Tensor::new_inner(
            Storage::Complex(data),
            shape.to_vec(),
            Vec::new(),
            None,
            false,
        ))
    }

    /// Trainable leaf: gradients accumulate for this node during backward.
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        check_shape(shape, data.len())?;
        Ok(Tensor::new_inner(
            Storage::Real(data),
            shape.to_vec(),
            Vec::new(),
            None,
            true,
        ))
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::make_detached(Storage::Real(vec![0.0; numel(shape)]), shape.to_vec())
    }

    pub fn ones(shape: &[usize]) -> Tensor {
        Tensor::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        Tensor::make_detached(Storage::Real(vec![value; numel(shape)]), shape.to_vec())
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor::make_detached(Storage::Real(vec![value]), Vec::new())
    }

    pub fn eye(n: usize) -> Tensor {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Tensor::make_detached(Storage::Real(data), vec![n, n])
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn numel(&self) -> usize {
        numel(&self.inner.shape)
    }

    pub fn dtype(&self) -> DType {
        self.inner.storage.dtype()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn storage(&self) -> &Storage {
        &self.inner.storage
    }

    /// Real element buffer; panics on complex tensors.
    pub fn real_data(&self) -> &[f64] {
        self.inner.storage.as_real()
    }

    /// Complex element buffer; panics on real tensors.
    pub fn complex_data(&self) -> &[Complex64] {
        self.inner.storage.as_complex()
    }

    /// Value of a single-element real tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() requires a single-element tensor");
        self.real_data()[0]
    }
}

// ── Backward pass ────────────────────────────────────────────────────────────

/// Gradients keyed by tensor id, produced by [`backward`].
#[derive(Debug)]
pub struct GradMap {
    grads: HashMap<u64, Storage>,
}

impl GradMap {
    pub fn get(&self, t: &Tensor) -> Option<&Storage> {
        self.grads.get(&t.id())
    }

    /// Gradient buffer of a real tensor, if one was accumulated.
    pub fn real(&self, t: &Tensor) -> Option<&[f64]> {
        self.get(t).map(|s| s.as_real())
    }
}

/// Reverse-mode sweep from a real scalar loss. Returns gradients for every
/// node on a path from a `requires_grad` leaf to the loss (leaves included).
pub fn backward(loss: &Tensor) -> Result<GradMap> {
    if loss.dtype() != DType::Real || loss.numel() != 1 {
        return Err(Error::Contract(format!(
            "backward requires a real scalar loss, got dtype {:?} with shape {:?}",
            loss.dtype(),
            loss.shape()
        )));
    }
    let mut grads = HashMap::new();
    if !loss.requires_grad() {
        return Ok(GradMap { grads });
    }

    // Iterative post-order DFS over the requires_grad subgraph.
    let mut topo: Vec<Tensor> = Vec::new();
    let mut seen: HashSet<u64> = HashSet::new();
    let mut stack: Vec<(Tensor, usize)> = vec![(loss.clone(), 0)];
    seen.insert(loss.id());
    while let Some((node, child)) = stack.pop() {
        let parents = &node.inner.parents;
        if child < parents.len() {
            stack.push((node.clone(), child + 1));
            let p = &parents[child];
            if p.requires_grad() && seen.insert(p.id()) {
                stack.push((p.clone(), 0));
            }
        } else {
            topo.push(node);
        }
    }

    grads.insert(loss.id(), Storage::Real(vec![1.0]));
    for node in topo.iter().rev() {
        let Some(g) = grads.get(&node.id()).cloned() else {
            continue;
        };
        let inner = &*node.inner;
        if let Some(grad_fn) = &inner.grad_fn {
            let parent_grads = grad_fn(inner, &g);
            debug_assert_eq!(parent_grads.len(), inner.parents.len());
            for (p, pg) in inner.parents.iter().zip(parent_grads) {
                if !p.requires_grad() {
                    continue;
                }
                if let Some(pg) = pg {
                    debug_assert_eq!(pg.len(), p.numel());
                    grads
                        .entry(p.id())
                        .and_modify(|acc| acc.add_in_place(&pg))
                        .or_insert(pg);
                }
            }
        }
    }
    Ok(GradMap { grads })
}

// ── Broadcasting machinery ────────────────────────────────────────────────────

/// NumPy-style broadcast of two shapes (align right, extents equal or 1).
pub(crate) fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for d in 0..rank {
        let ea = if d < rank - a.len() { 1 } else { a[d - (rank - a.len())] };
        let eb = if d < rank - b.len() { 1 } else { b[d - (rank - b.len())] };
        if ea != eb && ea != 1 && eb != 1 {
            return Err(Error::Dim {
                op,
                lhs: a.to_vec(),
                rhs: b.to_vec(),
            });
        }
        out[d] = ea.max(eb);
    }
    Ok(out)
}

/// Row-major strides of `shape`.
pub(crate) fn row_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut s = 1;
    for d in (0..shape.len()).rev() {
        strides[d] = s;
        s *= shape[d];
    }
    strides
}

/// Per-out-dimension read strides for an input broadcast to `out_shape`
/// (0 where the input is broadcast along that dimension).
pub(crate) fn bc_strides(in_shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let pad = out_shape.len() - in_shape.len();
    let in_str = row_strides(in_shape);
    let mut strides = vec![0; out_shape.len()];
    for d in pad..out_shape.len() {
        let id = d - pad;
        strides[d] = if in_shape[id] == 1 && out_shape[d] != 1 {
            0
        } else {
            in_str[id]
        };
    }
    strides
}

/// Iterate the flat indices of `out_shape` alongside two broadcast input
/// offsets, using an odometer so each step is O(1) amortized.
pub(crate) fn zip_map2<F: FnMut(usize, usize, usize)>(
    out_shape: &[usize],
    a_str: &[usize],
    b_str: &[usize],
    mut f: F,
) {
    let n = numel(out_shape);
    let rank = out_shape.len();
    let mut idx = vec![0usize; rank];
    let (mut ao, mut bo) = (0usize, 0usize);
    for out_i in 0..n {
        f(out_i, ao, bo);
        for d in (0..rank).rev() {
            idx[d] += 1;
            ao += a_str[d];
            bo += b_str[d];
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
            ao -= a_str[d] * out_shape[d];
            bo -= b_str[d] * out_shape[d];
        }
    }
}

pub(crate) fn zip_map1<F: FnMut(usize, usize)>(out_shape: &[usize], a_str: &[usize], mut f: F) {
    zip_map2(out_shape, a_str, &vec![0; out_shape.len()], |i, ao, _| {
        f(i, ao)
    });
}

/// Sum a gradient of shape `from` down to the broadcast source shape `to`.
pub(crate) fn reduce_to_shape(g: &Storage, from: &[usize], to: &[usize]) -> Storage {
    if from == to {
        return g.clone();
    }
    let t_str = bc_strides(to, from);
    match g {
        Storage::Real(gv) => {
            let mut out = vec![0.0; numel(to)];
            zip_map1(from, &t_str, |i, ti| out[ti] += gv[i]);
            Storage::Real(out)
        }
        Storage::Complex(gv) => {
            let mut out = vec![Complex64::new(0.0, 0.0); numel(to)];
            zip_map1(from, &t_str, |i, ti| out[ti] += gv[i]);
            Storage::Complex(out)
        }
    }
}

pub(crate) fn same_dtype(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dtype() != b.dtype() {
        return Err(Error::Contract(format!(
            "{op} requires matching dtypes, got {:?} and {:?}",
            a.dtype(),
            b.dtype()
        )));
    }
    Ok(())
}

pub(crate) fn check_axis(axis: usize, rank: usize) -> Result<()> {
    if axis >= rank {
        return Err(Error::Axis { axis, rank });
    }
    Ok(())
}
