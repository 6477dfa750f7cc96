//! Differentiable tensor operations.
//!
//! Binary elementwise ops broadcast NumPy-style; gradients are summed back to
//! each input's shape. Complex gradients follow the storage convention from
//! the module docs: for a C-linear map `y = M x` the pullback is `M^H g`, for
//! an elementwise product `a ⊙ b` it is `conj(b) ⊙ g`.

use num_complex::Complex64;

use super::{
    bc_strides, broadcast_shape, check_axis, numel, reduce_to_shape, row_strides, same_dtype,
    zip_map1, zip_map2, Inner, Storage, Tensor,
};
use crate::{Error, Result};

fn real_only(op: &'static str, t: &Tensor) -> Result<()> {
    match t.storage() {
        Storage::Real(_) => Ok(()),
        Storage::Complex(_) => Err(Error::Contract(format!(
            "{op} is defined for real tensors only"
        ))),
    }
}

fn complex_only(op: &'static str, t: &Tensor) -> Result<()> {
    match t.storage() {
        Storage::Complex(_) => Ok(()),
        Storage::Real(_) => Err(Error::Contract(format!(
            "{op} is defined for complex tensors only"
        ))),
    }
}

// ── Elementwise binary ───────────────────────────────────────────────────────

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        same_dtype("add", self, other)?;
        let out_shape = broadcast_shape("add", self.shape(), other.shape())?;
        let a_str = bc_strides(self.shape(), &out_shape);
        let b_str = bc_strides(other.shape(), &out_shape);
        let n = numel(&out_shape);
        let storage = match (self.storage(), other.storage()) {
            (Storage::Real(a), Storage::Real(b)) => {
                let mut o = vec![0.0; n];
                zip_map2(&out_shape, &a_str, &b_str, |i, ai, bi| o[i] = a[ai] + b[bi]);
                Storage::Real(o)
            }
            (Storage::Complex(a), Storage::Complex(b)) => {
                let mut o = vec![Complex64::new(0.0, 0.0); n];
                zip_map2(&out_shape, &a_str, &b_str, |i, ai, bi| o[i] = a[ai] + b[bi]);
                Storage::Complex(o)
            }
            _ => unreachable!(),
        };
        let grad = move |inner: &Inner, g: &Storage| {
            vec![
                Some(reduce_to_shape(g, &inner.shape, inner.parents[0].shape())),
                Some(reduce_to_shape(g, &inner.shape, inner.parents[1].shape())),
            ]
        };
        Ok(Tensor::make(
            storage,
            out_shape,
            vec![self.clone(), other.clone()],
            Box::new(grad),
        ))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        same_dtype("sub", self, other)?;
        let out_shape = broadcast_shape("sub", self.shape(), other.shape())?;
        let a_str = bc_strides(self.shape(), &out_shape);
        let b_str = bc_strides(other.shape(), &out_shape);
        let n = numel(&out_shape);
        let storage = match (self.storage(), other.storage()) {
            (Storage::Real(a), Storage::Real(b)) => {
                let mut o = vec![0.0; n];
                zip_map2(&out_shape, &a_str, &b_str, |i, ai, bi| o[i] = a[ai] - b[bi]);
                Storage::Real(o)
            }
            (Storage::Complex(a), Storage::Complex(b)) => {
                let mut o = vec![Complex64::new(0.0, 0.0); n];
                zip_map2(&out_shape, &a_str, &b_str, |i, ai, bi| o[i] = a[ai] - b[bi]);
                Storage::Complex(o)
            }
            _ => unreachable!(),
        };
        let grad = move |inner: &Inner, g: &Storage| {
            let ga = reduce_to_shape(g, &inner.shape, inner.parents[0].shape());
            let neg = match g {
                Storage::Real(v) => Storage::Real(v.iter().map(|x| -x).collect()),
                Storage::Complex(v) => Storage::Complex(v.iter().map(|x| -x).collect()),
            };
            let gb = reduce_to_shape(&neg, &inner.shape, inner.parents[1].shape());
            vec![Some(ga), Some(gb)]
        };
        Ok(Tensor::make(
            storage,
            out_shape,
            vec![self.clone(), other.clone()],
            Box::new(grad),
        ))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        same_dtype("mul", self, other)?;
        let out_shape = broadcast_shape("mul", self.shape(), other.shape())?;
        let a_str = bc_strides(self.shape(), &out_shape);
        let b_str = bc_strides(other.shape(), &out_shape);
        let n = numel(&out_shape);
        let storage = match (self.storage(), other.storage()) {
            (Storage::Real(a), Storage::Real(b)) => {
                let mut o = vec![0.0; n];
                zip_map2(&out_shape, &a_str, &b_str, |i, ai, bi| o[i] = a[ai] * b[bi]);
                Storage::Real(o)
            }
            (Storage::Complex(a), Storage::Complex(b)) => {
                let mut o = vec![Complex64::new(0.0, 0.0); n];
                zip_map2(&out_shape, &a_str, &b_str, |i, ai, bi| o[i] = a[ai] * b[bi]);
                Storage::Complex(o)
            }
            _ => unreachable!(),
        };
        let grad = move |inner: &Inner, g: &Storage| {
            let a = &inner.parents[0];
            let b = &inner.parents[1];
            let a_str = bc_strides(a.shape(), &inner.shape);
            let b_str = bc_strides(b.shape(), &inner.shape);
            let n = numel(&inner.shape);
            let ga = if a.requires_grad() {
                let full = match (g, b.storage()) {
                    (Storage::Real(gv), Storage::Real(bv)) => {
                        let mut o = vec![0.0; n];
                        zip_map1(&inner.shape, &b_str, |i, bi| o[i] = gv[i] * bv[bi]);
                        Storage::Real(o)
                    }
                    (Storage::Complex(gv), Storage::Complex(bv)) => {
                        let mut o = vec![Complex64::new(0.0, 0.0); n];
                        zip_map1(&inner.shape, &b_str, |i, bi| o[i] = gv[i] * bv[bi].conj());
                        Storage::Complex(o)
                    }
                    _ => unreachable!(),
                };
                Some(reduce_to_shape(&full, &inner.shape, a.shape()))
            } else {
                None
            };
            let gb = if b.requires_grad() {
                let full = match (g, a.storage()) {
                    (Storage::Real(gv), Storage::Real(av)) => {
                        let mut o = vec![0.0; n];
                        zip_map1(&inner.shape, &a_str, |i, ai| o[i] = gv[i] * av[ai]);
                        Storage::Real(o)
                    }
                    (Storage::Complex(gv), Storage::Complex(av)) => {
                        let mut o = vec![Complex64::new(0.0, 0.0); n];
                        zip_map1(&inner.shape, &a_str, |i, ai| o[i] = gv[i] * av[ai].conj());
                        Storage::Complex(o)
                    }
                    _ => unreachable!(),
                };
                Some(reduce_to_shape(&full, &inner.shape, b.shape()))
            } else {
                None
            };
            vec![ga, gb]
        };
        Ok(Tensor::make(
            storage,
            out_shape,
            vec![self.clone(), other.clone()],
            Box::new(grad),
        ))
    }
}

// ── Elementwise unary ────────────────────────────────────────────────────────

impl Tensor {
    pub fn neg(&self) -> Tensor {
        let storage = match self.storage() {
            Storage::Real(v) => Storage::Real(v.iter().map(|x| -x).collect()),
            Storage::Complex(v) => Storage::Complex(v.iter().map(|x| -x).collect()),
        };
        let grad = move |_inner: &Inner, g: &Storage| {
            let gp = match g {
                Storage::Real(v) => Storage::Real(v.iter().map(|x| -x).collect()),
                Storage::Complex(v) => Storage::Complex(v.iter().map(|x| -x).collect()),
            };
            vec![Some(gp)]
        };
        Tensor::make(
            storage,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(grad),
        )
    }

    /// Multiply every element by a real constant.
    pub fn scale(&self, c: f64) -> Tensor {
        let storage = match self.storage() {
            Storage::Real(v) => Storage::Real(v.iter().map(|x| c * x).collect()),
            Storage::Complex(v) => Storage::Complex(v.iter().map(|x| c * x).collect()),
        };
        let grad = move |_inner: &Inner, g: &Storage| {
            let gp = match g {
                Storage::Real(v) => Storage::Real(v.iter().map(|x| c * x).collect()),
                Storage::Complex(v) => Storage::Complex(v.iter().map(|x| c * x).collect()),
            };
            vec![Some(gp)]
        };
        Tensor::make(
            storage,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(grad),
        )
    }

    /// Add a real constant to every element (real tensors).
    pub fn add_scalar(&self, c: f64) -> Result<Tensor> {
        real_only("add_scalar", self)?;
        let v = self.real_data().iter().map(|x| x + c).collect();
        let grad = |_inner: &Inner, g: &Storage| vec![Some(g.clone())];
        Ok(Tensor::make(
            Storage::Real(v),
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(grad),
        ))
    }

    pub fn relu(&self) -> Result<Tensor> {
        real_only("relu", self)?;
        let v = self.real_data().iter().map(|x| x.max(0.0)).collect();
        // relu'(0) := 0
        let grad = |inner: &Inner, g: &Storage| {
            let x = inner.parents[0].real_data();
            let gv = g.as_real();
            let out = x
                .iter()
                .zip(gv)
                .map(|(x, g)| if *x > 0.0 { *g } else { 0.0 })
                .collect();
            vec![Some(Storage::Real(out))]
        };
        Ok(Tensor::make(
            Storage::Real(v),
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(grad),
        ))
    }

    pub fn sigmoid(&self) -> Result<Tensor> {
        real_only("sigmoid", self)?;
        let v: Vec<f64> = self.real_data().iter().map(|&x| sigmoid_stable(x)).collect();
        let grad = |inner: &Inner, g: &Storage| {
            let y = inner.storage.as_real();
            let gv = g.as_real();
            let out = y.iter().zip(gv).map(|(y, g)| g * y * (1.0 - y)).collect();
            vec![Some(Storage::Real(out))]
        };
        Ok(Tensor::make(
            Storage::Real(v),
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(grad),
        ))
    }

    pub fn ln(&self) -> Result<Tensor> {
        real_only("ln", self)?;
        let v = self.real_data().iter().map(|x| x.ln()).collect();
        let grad = |inner: &Inner, g: &Storage| {
            let x = inner.parents[0].real_data();
            let gv = g.as_real();
            let out = x.iter().zip(gv).map(|(x, g)| g / x).collect();
            vec![Some(Storage::Real(out))]
        };
        Ok(Tensor::make(
            Storage::Real(v),
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(grad),
        ))
    }

    /// Elementwise reciprocal `1/x` (real tensors).
    pub fn recip(&self) -> Result<Tensor> {
        real_only("recip", self)?;
        let v: Vec<f64> = self.real_data().iter().map(|x| 1.0 / x).collect();
        let grad = |inner: &Inner, g: &Storage| {
            let y = inner.storage.as_real();
            let gv = g.as_real();
            let out = y.iter().zip(gv).map(|(y, g)| -g * y * y).collect();
            vec![Some(Storage::Real(out))]
        };
        Ok(Tensor::make(
            Storage::Real(v),
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(grad),
        ))
    }

    /// Clamp to `[lo, hi]`; gradient passes only where the input lies inside.
    pub fn clamp(&self, lo: f64, hi: f64) -> Result<Tensor> {
        real_only("clamp", self)?;
        let v = self.real_data().iter().map(|x| x.clamp(lo, hi)).collect();
        let grad = move |inner: &Inner, g: &Storage| {
            let x = inner.parents[0].real_data();
            let gv = g.as_real();
            let out = x
                .iter()
                .zip(gv)
                .map(|(x, g)| if *x >= lo && *x <= hi { *g } else { 0.0 })
                .collect();
            vec![Some(Storage::Real(out))]
        };
        Ok(Tensor::make(
            Storage::Real(v),
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(grad),
        ))
    }

    /// Elementwise Huber penalty: `x²/2` for `|x| ≤ δ`, else `δ(|x| − δ/2)`.
    pub fn huber(&self, delta: f64) -> Result<Tensor> {
        real_only("huber", self)?;
        if delta <= 0.0 {
            return Err(Error::Contract(format!(
                "huber delta must be positive, got {delta}"
            )));
        }
        let v = self
            .real_data()
            .iter()
            .map(|&x| {
                let a = x.abs();
                if a <= delta {
                    0.5 * x * x
                } else {
                    delta * (a - 0.5 * delta)
                }
            })
            .collect();
        let grad = move |inner: &Inner, g: &Storage| {
            let x = inner.parents[0].real_data();
            let gv = g.as_real();
            let out = x
                .iter()
                .zip(gv)
                .map(|(x, g)| g * x.clamp(-delta, delta))
                .collect();
            vec![Some(Storage::Real(out))]
        };
        Ok(Tensor::make(
            Storage::Real(v),
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(grad),
        ))
    }

    /// Straight-through binarization: forward emits `1[x > threshold]`,
    /// backward passes the incoming gradient unchanged.
    pub fn binarize_st(&self, threshold: f64) -> Result<Tensor> {
        real_only("binarize_st", self)?;
        let v = self
            .real_data()
            .iter()
            .map(|&x| if x > threshold { 1.0 } else { 0.0 })
            .collect();
        let grad = |_inner: &Inner, g: &Storage| vec![Some(g.clone())];
        Ok(Tensor::make(
            Storage::Real(v),
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(grad),
        ))
    }

    /// Hard threshold with no gradient path (detached from the graph).
    pub fn hard_step(&self, threshold: f64) -> Result<Tensor> {
        real_only("hard_step", self)?;
        let v = self
            .real_data()
            .iter()
            .map(|&x| if x > threshold { 1.0 } else { 0.0 })
            .collect();
        Ok(Tensor::make_detached(
            Storage::Real(v),
            self.shape().to_vec(),
        ))
    }
}

/// Numerically stable logistic function (branch on sign).
pub fn sigmoid_stable(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

// ── Matrix multiplication ────────────────────────────────────────────────────

struct MmView<'a> {
    store: &'a Storage,
    shape: &'a [usize],
    transpose: bool,
    conj: bool,
}

/// Batched matmul over the last two axes with broadcastable leading axes.
/// `transpose`/`conj` apply to the logical operand without materializing it.
fn mm_batched(a: MmView, b: MmView) -> (Storage, Vec<usize>) {
    let ra = a.shape.len();
    let rb = b.shape.len();
    let (ar, ac) = (a.shape[ra - 2], a.shape[ra - 1]);
    let (br, bc) = (b.shape[rb - 2], b.shape[rb - 1]);
    let (la_r, la_c) = if a.transpose { (ac, ar) } else { (ar, ac) };
    let (lb_r, lb_c) = if b.transpose { (bc, br) } else { (br, bc) };
    debug_assert_eq!(la_c, lb_r, "contraction extents must agree");
    let k = la_c;

    let a_batch = &a.shape[..ra - 2];
    let b_batch = &b.shape[..rb - 2];
    let batch = broadcast_shape("matmul", a_batch, b_batch).expect("validated batch dims");
    let a_bstr = bc_strides(a_batch, &batch);
    let b_bstr = bc_strides(b_batch, &batch);
    let (slab_a, slab_b, slab_o) = (ar * ac, br * bc, la_r * lb_c);
    let mut out_shape = batch.clone();
    out_shape.push(la_r);
    out_shape.push(lb_c);

    macro_rules! mm_kernel {
        ($av:expr, $bv:expr, $zero:expr, $conj:ident) => {{
            let av = $av;
            let bv = $bv;
            let mut out = vec![$zero; numel(&batch) * slab_o];
            let mut cell = 0usize;
            zip_map2(&batch, &a_bstr, &b_bstr, |_, a_cell, b_cell| {
                let abase = a_cell * slab_a;
                let bbase = b_cell * slab_b;
                let obase = cell * slab_o;
                cell += 1;
                for i in 0..la_r {
                    for p in 0..k {
                        let aval = if a.transpose {
                            av[abase + p * ac + i]
                        } else {
                            av[abase + i * ac + p]
                        };
                        let aval = $conj(aval, a.conj);
                        let orow = obase + i * lb_c;
                        if b.transpose {
                            for j in 0..lb_c {
                                let bval = $conj(bv[bbase + j * bc + p], b.conj);
                                out[orow + j] += aval * bval;
                            }
                        } else {
                            let brow = bbase + p * bc;
                            for j in 0..lb_c {
                                let bval = $conj(bv[brow + j], b.conj);
                                out[orow + j] += aval * bval;
                            }
                        }
                    }
                }
            });
            out
        }};
    }

    #[inline]
    fn conj_r(x: f64, _c: bool) -> f64 {
        x
    }
    #[inline]
    fn conj_c(x: Complex64, c: bool) -> Complex64 {
        if c {
            x.conj()
        } else {
            x
        }
    }

    let storage = match (a.store, b.store) {
        (Storage::Real(av), Storage::Real(bv)) => {
            Storage::Real(mm_kernel!(av, bv, 0.0, conj_r))
        }
        (Storage::Complex(av), Storage::Complex(bv)) => {
            Storage::Complex(mm_kernel!(av, bv, Complex64::new(0.0, 0.0), conj_c))
        }
        _ => unreachable!("dtype validated by caller"),
    };
    (storage, out_shape)
}

impl Tensor {
    /// Batched matrix product contracting the last axis of `self` with the
    /// second-to-last axis of `other`. Complex gradients use the conjugate
    /// transpose, so `matmul` is valid inside complex attention blocks.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        same_dtype("matmul", self, other)?;
        if self.rank() < 2 || other.rank() < 2 {
            return Err(Error::Dim {
                op: "matmul",
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            });
        }
        let ra = self.rank();
        let rb = other.rank();
        if self.shape()[ra - 1] != other.shape()[rb - 2] {
            return Err(Error::Dim {
                op: "matmul",
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            });
        }
        broadcast_shape("matmul", &self.shape()[..ra - 2], &other.shape()[..rb - 2])?;

        let (storage, out_shape) = mm_batched(
            MmView {
                store: self.storage(),
                shape: self.shape(),
                transpose: false,
                conj: false,
            },
            MmView {
                store: other.storage(),
                shape: other.shape(),
                transpose: false,
                conj: false,
            },
        );

        let grad = move |inner: &Inner, g: &Storage| {
            let a = &inner.parents[0];
            let b = &inner.parents[1];
            let ga = if a.requires_grad() {
                // dA = G · B^H
                let (full, full_shape) = mm_batched(
                    MmView {
                        store: g,
                        shape: &inner.shape,
                        transpose: false,
                        conj: false,
                    },
                    MmView {
                        store: b.storage(),
                        shape: b.shape(),
                        transpose: true,
                        conj: true,
                    },
                );
                Some(reduce_to_shape(&full, &full_shape, a.shape()))
            } else {
                None
            };
            let gb = if b.requires_grad() {
                // dB = A^H · G
                let (full, full_shape) = mm_batched(
                    MmView {
                        store: a.storage(),
                        shape: a.shape(),
                        transpose: true,
                        conj: true,
                    },
                    MmView {
                        store: g,
                        shape: &inner.shape,
                        transpose: false,
                        conj: false,
                    },
                );
                Some(reduce_to_shape(&full, &full_shape, b.shape()))
            } else {
                None
            };
            vec![ga, gb]
        };
        Ok(Tensor::make(
            storage,
            out_shape,
            vec![self.clone(), other.clone()],
            Box::new(grad),
        ))
    }
}

// ── Reductions and softmax ───────────────────────────────────────────────────

/// Visit every line along `axis`: calls `f(base_offset, stride, line_index)`.
fn for_each_line<F: FnMut(usize, usize, usize)>(shape: &[usize], axis: usize, mut f: F) {
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut line = 0;
    for o in 0..outer {
        for i in 0..inner {
            f(o * len * inner + i, inner, line);
            line += 1;
        }
    }
}

fn reduced_shape(shape: &[usize], axis: usize, keepdim: bool) -> Vec<usize> {
    let mut out = shape.to_vec();
    if keepdim {
        out[axis] = 1;
    } else {
        out.remove(axis);
    }
    out
}

impl Tensor {
    /// Softmax along `axis` with max-subtraction; rows containing `-1e9`
    /// sentinels underflow to exact zero weight.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        real_only("softmax", self)?;
        check_axis(axis, self.rank())?;
        let x = self.real_data();
        let len = self.shape()[axis];
        let mut out = vec![0.0; x.len()];
        for_each_line(self.shape(), axis, |base, stride, _| {
            let mut m = f64::NEG_INFINITY;
            for k in 0..len {
                m = m.max(x[base + k * stride]);
            }
            let mut sum = 0.0;
            for k in 0..len {
                let e = (x[base + k * stride] - m).exp();
                out[base + k * stride] = e;
                sum += e;
            }
            for k in 0..len {
                out[base + k * stride] /= sum;
            }
        });
        let grad = move |inner: &Inner, g: &Storage| {
            let y = inner.storage.as_real();
            let gv = g.as_real();
            let mut out = vec![0.0; y.len()];
            let len = inner.shape[axis];
            for_each_line(&inner.shape, axis, |base, stride, _| {
                let mut dot = 0.0;
                for k in 0..len {
                    dot += gv[base + k * stride] * y[base + k * stride];
                }
                for k in 0..len {
                    let i = base + k * stride;
                    out[i] = y[i] * (gv[i] - dot);
                }
            });
            vec![Some(Storage::Real(out))]
        };
        Ok(Tensor::make(
            Storage::Real(out),
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(grad),
        ))
    }

    pub fn sum_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor> {
        real_only("sum_axis", self)?;
        check_axis(axis, self.rank())?;
        let x = self.real_data();
        let len = self.shape()[axis];
        let out_shape = reduced_shape(self.shape(), axis, keepdim);
        let mut out = vec![0.0; numel(&out_shape)];
        for_each_line(self.shape(), axis, |base, stride, line| {
            let mut s = 0.0;
            for k in 0..len {
                s += x[base + k * stride];
            }
            out[line] = s;
        });
        let in_shape = self.shape().to_vec();
        let grad = move |_inner: &Inner, g: &Storage| {
            let gv = g.as_real();
            let mut out = vec![0.0; numel(&in_shape)];
            let len = in_shape[axis];
            for_each_line(&in_shape, axis, |base, stride, line| {
                for k in 0..len {
                    out[base + k * stride] = gv[line];
                }
            });
            vec![Some(Storage::Real(out))]
        };
        Ok(Tensor::make(
            Storage::Real(out),
            out_shape,
            vec![self.clone()],
            Box::new(grad),
        ))
    }

    /// Max along `axis`; the gradient routes to the first maximal element.
    pub fn max_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor> {
        real_only("max_axis", self)?;
        check_axis(axis, self.rank())?;
        let x = self.real_data();
        let len = self.shape()[axis];
        let out_shape = reduced_shape(self.shape(), axis, keepdim);
        let mut out = vec![0.0; numel(&out_shape)];
        let mut argmax = vec![0usize; numel(&out_shape)];
        for_each_line(self.shape(), axis, |base, stride, line| {
            let mut best = f64::NEG_INFINITY;
            let mut best_i = base;
            for k in 0..len {
                let v = x[base + k * stride];
                if v > best {
                    best = v;
                    best_i = base + k * stride;
                }
            }
            out[line] = best;
            argmax[line] = best_i;
        });
        let in_numel = self.numel();
        let grad = move |_inner: &Inner, g: &Storage| {
            let gv = g.as_real();
            let mut out = vec![0.0; in_numel];
            for (line, &i) in argmax.iter().enumerate() {
                out[i] += gv[line];
            }
            vec![Some(Storage::Real(out))]
        };
        Ok(Tensor::make(
            Storage::Real(out),
            out_shape,
            vec![self.clone()],
            Box::new(grad),
        ))
    }

    /// Mean over all elements, producing a rank-0 scalar.
    pub fn mean_all(&self) -> Result<Tensor> {
        real_only("mean_all", self)?;
        let x = self.real_data();
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        let in_numel = self.numel();
        let grad = move |_inner: &Inner, g: &Storage| {
            let gv = g.as_real()[0] / in_numel as f64;
            vec![Some(Storage::Real(vec![gv; in_numel]))]
        };
        Ok(Tensor::make(
            Storage::Real(vec![m]),
            Vec::new(),
            vec![self.clone()],
            Box::new(grad),
        ))
    }

    /// Sum over all elements, producing a rank-0 scalar.
    pub fn sum_all(&self) -> Result<Tensor> {
        real_only("sum_all", self)?;
        let s = self.real_data().iter().sum::<f64>();
        let in_numel = self.numel();
        let grad = move |_inner: &Inner, g: &Storage| {
            let gv = g.as_real()[0];
            vec![Some(Storage::Real(vec![gv; in_numel]))]
        };
        Ok(Tensor::make(
            Storage::Real(vec![s]),
            Vec::new(),
            vec![self.clone()],
            Box::new(grad),
        ))
    }
}

// ── Shape manipulation ───────────────────────────────────────────────────────

fn permute_storage(s: &Storage, shape: &[usize], axes: &[usize]) -> (Storage, Vec<usize>) {
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let in_str = row_strides(shape);
    let read_str: Vec<usize> = axes.iter().map(|&a| in_str[a]).collect();
    match s {
        Storage::Real(v) => {
            let mut out = vec![0.0; v.len()];
            zip_map1(&out_shape, &read_str, |i, src| out[i] = v[src]);
            (Storage::Real(out), out_shape)
        }
        Storage::Complex(v) => {
            let mut out = vec![Complex64::new(0.0, 0.0); v.len()];
            zip_map1(&out_shape, &read_str, |i, src| out[i] = v[src]);
            (Storage::Complex(out), out_shape)
        }
    }
}

impl Tensor {
    pub fn reshape(&self, new_shape: &[usize]) -> Result<Tensor> {
        if new_shape.iter().any(|&e| e == 0) || numel(new_shape) != self.numel() {
            return Err(Error::Dim {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: new_shape.to_vec(),
            });
        }
        let grad = |_inner: &Inner, g: &Storage| vec![Some(g.clone())];
        Ok(Tensor::make(
            self.storage().clone(),
            new_shape.to_vec(),
            vec![self.clone()],
            Box::new(grad),
        ))
    }

    pub fn permute(&self, axes: &[usize]) -> Result<Tensor> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::Contract(format!(
                "permute axes {:?} are not a permutation of 0..{}",
                axes, rank
            )));
        }
        let (storage, out_shape) = permute_storage(self.storage(), self.shape(), axes);
        let mut inverse = vec![0usize; rank];
        for (d, &a) in axes.iter().enumerate() {
            inverse[a] = d;
        }
        let grad = move |inner: &Inner, g: &Storage| {
            let (gp, _) = permute_storage(g, &inner.shape, &inverse);
            vec![Some(gp)]
        };
        Ok(Tensor::make(
            storage,
            out_shape,
            vec![self.clone()],
            Box::new(grad),
        ))
    }

    /// Swap the trailing two axes (matrix transpose over batch dims).
    pub fn swap_last2(&self) -> Result<Tensor> {
        if self.rank() < 2 {
            return Err(Error::Contract(format!(
                "swap_last2 requires rank >= 2, got shape {:?}",
                self.shape()
            )));
        }
        let mut axes: Vec<usize> = (0..self.rank()).collect();
        axes.swap(self.rank() - 2, self.rank() - 1);
        self.permute(&axes)
    }

    pub fn broadcast_to(&self, target: &[usize]) -> Result<Tensor> {
        let bshape = broadcast_shape("broadcast_to", self.shape(), target)?;
        if bshape != target {
            return Err(Error::Dim {
                op: "broadcast_to",
                lhs: self.shape().to_vec(),
                rhs: target.to_vec(),
            });
        }
        let strides = bc_strides(self.shape(), target);
        let n = numel(target);
        let storage = match self.storage() {
            Storage::Real(v) => {
                let mut out = vec![0.0; n];
                zip_map1(target, &strides, |i, src| out[i] = v[src]);
                Storage::Real(out)
            }
            Storage::Complex(v) => {
                let mut out = vec![Complex64::new(0.0, 0.0); n];
                zip_map1(target, &strides, |i, src| out[i] = v[src]);
                Storage::Complex(out)
            }
        };
        let grad = move |inner: &Inner, g: &Storage| {
            vec![Some(reduce_to_shape(
                g,
                &inner.shape,
                inner.parents[0].shape(),
            ))]
        };
        Ok(Tensor::make(
            storage,
            target.to_vec(),
            vec![self.clone()],
            Box::new(grad),
        ))
    }

    /// Concatenate tensors along `axis`; extents must match elsewhere.
    pub fn concat(parts: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat requires at least one tensor".into()))?;
        check_axis(axis, first.rank())?;
        for p in parts.iter().skip(1) {
            same_dtype("concat", first, p)?;
            let compatible = p.rank() == first.rank()
                && p.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::Dim {
                    op: "concat",
                    lhs: first.shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
        }
        let mut out_shape = first.shape().to_vec();
        out_shape[axis] = parts.iter().map(|p| p.shape()[axis]).sum();
        let inner: usize = first.shape()[axis + 1..].iter().product();
        let outer: usize = first.shape()[..axis].iter().product();

        macro_rules! cat {
            ($get:ident, $zero:expr) => {{
                let mut out = Vec::with_capacity(numel(&out_shape));
                for o in 0..outer {
                    for p in parts {
                        let block = p.shape()[axis] * inner;
                        out.extend_from_slice(&p.storage().$get()[o * block..(o + 1) * block]);
                    }
                }
                out
            }};
        }
        let storage = match first.storage() {
            Storage::Real(_) => Storage::Real(cat!(as_real, 0.0)),
            Storage::Complex(_) => Storage::Complex(cat!(as_complex, Complex64::new(0.0, 0.0))),
        };

        let extents: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let grad = move |inner_node: &Inner, g: &Storage| {
            let total = inner_node.shape[axis] * inner;
            let mut offsets = Vec::with_capacity(extents.len());
            let mut acc = 0;
            for &e in &extents {
                offsets.push(acc * inner);
                acc += e;
            }
            macro_rules! split {
                ($gv:expr, $zero:expr, $wrap:path) => {
                    extents
                        .iter()
                        .zip(&offsets)
                        .map(|(&e, &off)| {
                            let block = e * inner;
                            let mut part = Vec::with_capacity(outer * block);
                            for o in 0..outer {
                                part.extend_from_slice(
                                    &$gv[o * total + off..o * total + off + block],
                                );
                            }
                            Some($wrap(part))
                        })
                        .collect::<Vec<_>>()
                };
            }
            match g {
                Storage::Real(gv) => split!(gv, 0.0, Storage::Real),
                Storage::Complex(gv) => split!(gv, Complex64::new(0.0, 0.0), Storage::Complex),
            }
        };
        Ok(Tensor::make(
            storage,
            out_shape,
            parts.to_vec(),
            Box::new(grad),
        ))
    }

    /// Contiguous slice of `len` extents starting at `start` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        check_axis(axis, self.rank())?;
        let extent = self.shape()[axis];
        if len == 0 || start + len > extent {
            return Err(Error::Contract(format!(
                "narrow range {start}..{} out of bounds for extent {extent}",
                start + len
            )));
        }
        let inner: usize = self.shape()[axis + 1..].iter().product();
        let outer: usize = self.shape()[..axis].iter().product();
        let mut out_shape = self.shape().to_vec();
        out_shape[axis] = len;

        macro_rules! take {
            ($get:ident) => {{
                let v = self.storage().$get();
                let mut out = Vec::with_capacity(outer * len * inner);
                for o in 0..outer {
                    let base = o * extent * inner + start * inner;
                    out.extend_from_slice(&v[base..base + len * inner]);
                }
                out
            }};
        }
        let storage = match self.storage() {
            Storage::Real(_) => Storage::Real(take!(as_real)),
            Storage::Complex(_) => Storage::Complex(take!(as_complex)),
        };
        let grad = move |inner_node: &Inner, g: &Storage| {
            let parent = &inner_node.parents[0];
            let mut out = Storage::zeros(g.dtype(), parent.numel());
            macro_rules! scatter {
                ($ov:expr, $gv:expr) => {
                    for o in 0..outer {
                        let dst = o * extent * inner + start * inner;
                        let src = o * len * inner;
                        $ov[dst..dst + len * inner].copy_from_slice(&$gv[src..src + len * inner]);
                    }
                };
            }
            match (&mut out, g) {
                (Storage::Real(ov), Storage::Real(gv)) => scatter!(ov, gv),
                (Storage::Complex(ov), Storage::Complex(gv)) => scatter!(ov, gv),
                _ => unreachable!(),
            }
            vec![Some(out)]
        };
        Ok(Tensor::make(
            storage,
            out_shape,
            vec![self.clone()],
            Box::new(grad),
        ))
    }

    /// Row lookup into a 2-d table: output shape is `idx_shape ++ [cols]`.
    /// The gradient scatter-adds into the gathered rows.
    pub fn gather_rows(&self, indices: &[usize], idx_shape: &[usize]) -> Result<Tensor> {
        real_only("gather_rows", self)?;
        if self.rank() != 2 {
            return Err(Error::Contract(format!(
                "gather_rows requires a rank-2 table, got shape {:?}",
                self.shape()
            )));
        }
        if indices.len() != numel(idx_shape) {
            return Err(Error::Contract(format!(
                "index buffer has {} entries but shape {:?} implies {}",
                indices.len(),
                idx_shape,
                numel(idx_shape)
            )));
        }
        let rows = self.shape()[0];
        let cols = self.shape()[1];
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::Contract(format!(
                "table index {bad} out of range for {rows} rows"
            )));
        }
        let table = self.real_data();
        let mut out = Vec::with_capacity(indices.len() * cols);
        for &r in indices {
            out.extend_from_slice(&table[r * cols..(r + 1) * cols]);
        }
        let mut out_shape = idx_shape.to_vec();
        out_shape.push(cols);
        let owned: Vec<usize> = indices.to_vec();
        let grad = move |_inner: &Inner, g: &Storage| {
            let gv = g.as_real();
            let mut acc = vec![0.0; rows * cols];
            for (i, &r) in owned.iter().enumerate() {
                for c in 0..cols {
                    acc[r * cols + c] += gv[i * cols + c];
                }
            }
            vec![Some(Storage::Real(acc))]
        };
        Ok(Tensor::make(
            Storage::Real(out),
            out_shape,
            vec![self.clone()],
            Box::new(grad),
        ))
    }
}

// ── Complex structure ────────────────────────────────────────────────────────

impl Tensor {
    /// Promote a real tensor to complex with zero imaginary part.
    pub fn to_complex(&self) -> Result<Tensor> {
        real_only("to_complex", self)?;
        let v = self
            .real_data()
            .iter()
            .map(|&x| Complex64::new(x, 0.0))
            .collect();
        let grad = |_inner: &Inner, g: &Storage| {
            let gv = g.as_complex();
            vec![Some(Storage::Real(gv.iter().map(|z| z.re).collect()))]
        };
        Ok(Tensor::make(
            Storage::Complex(v),
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(grad),
        ))
    }

    /// Assemble a complex tensor from real and imaginary parts.
    pub fn complex(re: &Tensor, im: &Tensor) -> Result<Tensor> {
        real_only("complex", re)?;
        real_only("complex", im)?;
        if re.shape() != im.shape() {
            return Err(Error::Dim {
                op: "complex",
                lhs: re.shape().to_vec(),
                rhs: im.shape().to_vec(),
            });
        }
        let v = re
            .real_data()
            .iter()
            .zip(im.real_data())
            .map(|(&r, &i)| Complex64::new(r, i))
            .collect();
        let grad = |_inner: &Inner, g: &Storage| {
            let gv = g.as_complex();
            vec![
                Some(Storage::Real(gv.iter().map(|z| z.re).collect())),
                Some(Storage::Real(gv.iter().map(|z| z.im).collect())),
            ]
        };
        Ok(Tensor::make(
            Storage::Complex(v),
            re.shape().to_vec(),
            vec![re.clone(), im.clone()],
            Box::new(grad),
        ))
    }

    /// Real part of a complex tensor.
    pub fn real(&self) -> Result<Tensor> {
        complex_only("real", self)?;
        let v = self.complex_data().iter().map(|z| z.re).collect();
        let grad = |_inner: &Inner, g: &Storage| {
            let gv = g.as_real();
            vec![Some(Storage::Complex(
                gv.iter().map(|&x| Complex64::new(x, 0.0)).collect(),
            ))]
        };
        Ok(Tensor::make(
            Storage::Real(v),
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(grad),
        ))
    }

    /// Imaginary part of a complex tensor.
    pub fn imag(&self) -> Result<Tensor> {
        complex_only("imag", self)?;
        let v = self.complex_data().iter().map(|z| z.im).collect();
        let grad = |_inner: &Inner, g: &Storage| {
            let gv = g.as_real();
            vec![Some(Storage::Complex(
                gv.iter().map(|&x| Complex64::new(0.0, x)).collect(),
            ))]
        };
        Ok(Tensor::make(
            Storage::Real(v),
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(grad),
        ))
    }

    pub fn conj(&self) -> Result<Tensor> {
        complex_only("conj", self)?;
        let v = self.complex_data().iter().map(|z| z.conj()).collect();
        let grad = |_inner: &Inner, g: &Storage| {
            let gv = g.as_complex();
            vec![Some(Storage::Complex(
                gv.iter().map(|z| z.conj()).collect(),
            ))]
        };
        Ok(Tensor::make(
            Storage::Complex(v),
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(grad),
        ))
    }

    /// Complex modulus `|z|`; the gradient at `z = 0` is defined as `0`.
    pub fn modulus(&self) -> Result<Tensor> {
        complex_only("modulus", self)?;
        let v = self.complex_data().iter().map(|z| z.norm()).collect();
        let grad = |inner: &Inner, g: &Storage| {
            let z = inner.parents[0].complex_data();
            let r = inner.storage.as_real();
            let gv = g.as_real();
            let out = z
                .iter()
                .zip(r)
                .zip(gv)
                .map(|((z, &r), &g)| {
                    if r == 0.0 {
                        Complex64::new(0.0, 0.0)
                    } else {
                        Complex64::new(g * z.re / r, g * z.im / r)
                    }
                })
                .collect();
            vec![Some(Storage::Complex(out))]
        };
        Ok(Tensor::make(
            Storage::Real(v),
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(grad),
        ))
    }
}
