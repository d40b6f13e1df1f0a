//! Differentiable primitives. Each operation computes its forward value and
//! registers the vector-Jacobian product that backward will replay.

use super::fft;
use super::{BackFn, DiffArray, Tape};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rustfft::num_complex::Complex64;

fn shape_err(op: &str, expected: String, got: String) -> Error {
    Error::Shape {
        op: op.to_string(),
        expected,
        got,
    }
}

fn same_tape(op: &str, a: &DiffArray, b: &DiffArray) -> Result<Tape> {
    if !a.tape().same_tape(b.tape()) {
        return Err(Error::Config(format!("{op}: operands from different tapes")));
    }
    Ok(a.tape().clone())
}

fn push(
    tape: &Tape,
    value: Tensor,
    needs: bool,
    back: impl Fn(&Tensor) -> Vec<(usize, Tensor)> + 'static,
) -> DiffArray {
    let back: Option<BackFn> = if needs { Some(Box::new(back)) } else { None };
    tape.push(value, needs, back)
}

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

pub fn add(a: &DiffArray, b: &DiffArray) -> Result<DiffArray> {
    let tape = same_tape("add", a, b)?;
    let (av, bv) = (a.value(), b.value());
    if av.shape() != bv.shape() {
        return Err(shape_err(
            "add",
            format!("{:?}", av.shape()),
            format!("{:?}", bv.shape()),
        ));
    }
    let out = Tensor::from_vec(
        av.shape(),
        av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect(),
    );
    let (ia, ib) = (a.id(), b.id());
    let needs = a.needs_grad() || b.needs_grad();
    Ok(push(&tape, out, needs, move |g| {
        vec![(ia, g.clone()), (ib, g.clone())]
    }))
}

pub fn sub(a: &DiffArray, b: &DiffArray) -> Result<DiffArray> {
    let tape = same_tape("sub", a, b)?;
    let (av, bv) = (a.value(), b.value());
    if av.shape() != bv.shape() {
        return Err(shape_err(
            "sub",
            format!("{:?}", av.shape()),
            format!("{:?}", bv.shape()),
        ));
    }
    let out = Tensor::from_vec(
        av.shape(),
        av.data().iter().zip(bv.data()).map(|(x, y)| x - y).collect(),
    );
    let (ia, ib) = (a.id(), b.id());
    let needs = a.needs_grad() || b.needs_grad();
    Ok(push(&tape, out, needs, move |g| {
        vec![(ia, g.clone()), (ib, g.map(|v| -v))]
    }))
}

pub fn mul(a: &DiffArray, b: &DiffArray) -> Result<DiffArray> {
    let tape = same_tape("mul", a, b)?;
    let (av, bv) = (a.value(), b.value());
    if av.shape() != bv.shape() {
        return Err(shape_err(
            "mul",
            format!("{:?}", av.shape()),
            format!("{:?}", bv.shape()),
        ));
    }
    let out = Tensor::from_vec(
        av.shape(),
        av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect(),
    );
    let (ia, ib) = (a.id(), b.id());
    let needs = a.needs_grad() || b.needs_grad();
    Ok(push(&tape, out, needs, move |g| {
        let ga = Tensor::from_vec(
            g.shape(),
            g.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect(),
        );
        let gb = Tensor::from_vec(
            g.shape(),
            g.data().iter().zip(av.data()).map(|(x, y)| x * y).collect(),
        );
        vec![(ia, ga), (ib, gb)]
    }))
}

pub fn div(a: &DiffArray, b: &DiffArray) -> Result<DiffArray> {
    let tape = same_tape("div", a, b)?;
    let (av, bv) = (a.value(), b.value());
    if av.shape() != bv.shape() {
        return Err(shape_err(
            "div",
            format!("{:?}", av.shape()),
            format!("{:?}", bv.shape()),
        ));
    }
    let out = Tensor::from_vec(
        av.shape(),
        av.data().iter().zip(bv.data()).map(|(x, y)| x / y).collect(),
    );
    let (ia, ib) = (a.id(), b.id());
    let needs = a.needs_grad() || b.needs_grad();
    Ok(push(&tape, out, needs, move |g| {
        let ga = Tensor::from_vec(
            g.shape(),
            g.data().iter().zip(bv.data()).map(|(x, y)| x / y).collect(),
        );
        let gb_data = g
            .data()
            .iter()
            .zip(av.data().iter().zip(bv.data()))
            .map(|(gv, (x, y))| -gv * x / (y * y))
            .collect();
        vec![(ia, ga), (ib, Tensor::from_vec(g.shape(), gb_data))]
    }))
}

pub fn scale(a: &DiffArray, c: f64) -> DiffArray {
    let out = a.with_value(|v| v.map(|x| x * c));
    let ia = a.id();
    push(a.tape(), out, a.needs_grad(), move |g| {
        vec![(ia, g.map(|v| v * c))]
    })
}

pub fn add_scalar(a: &DiffArray, c: f64) -> DiffArray {
    let out = a.with_value(|v| v.map(|x| x + c));
    let ia = a.id();
    push(a.tape(), out, a.needs_grad(), move |g| vec![(ia, g.clone())])
}

pub fn neg(a: &DiffArray) -> DiffArray {
    scale(a, -1.0)
}

pub fn square(a: &DiffArray) -> DiffArray {
    let av = a.value();
    let out = av.map(|x| x * x);
    let ia = a.id();
    push(a.tape(), out, a.needs_grad(), move |g| {
        let gd = g
            .data()
            .iter()
            .zip(av.data())
            .map(|(gv, x)| 2.0 * x * gv)
            .collect();
        vec![(ia, Tensor::from_vec(g.shape(), gd))]
    })
}

pub fn sqrt(a: &DiffArray) -> DiffArray {
    let out = a.with_value(|v| v.map(f64::sqrt));
    let yv = out.clone();
    let ia = a.id();
    push(a.tape(), out, a.needs_grad(), move |g| {
        let gd = g
            .data()
            .iter()
            .zip(yv.data())
            .map(|(gv, y)| 0.5 * gv / y)
            .collect();
        vec![(ia, Tensor::from_vec(g.shape(), gd))]
    })
}

pub fn exp(a: &DiffArray) -> DiffArray {
    let out = a.with_value(|v| v.map(f64::exp));
    let yv = out.clone();
    let ia = a.id();
    push(a.tape(), out, a.needs_grad(), move |g| {
        let gd = g
            .data()
            .iter()
            .zip(yv.data())
            .map(|(gv, y)| gv * y)
            .collect();
        vec![(ia, Tensor::from_vec(g.shape(), gd))]
    })
}

pub fn log(a: &DiffArray) -> DiffArray {
    let av = a.value();
    let out = av.map(f64::ln);
    let ia = a.id();
    push(a.tape(), out, a.needs_grad(), move |g| {
        let gd = g
            .data()
            .iter()
            .zip(av.data())
            .map(|(gv, x)| gv / x)
            .collect();
        vec![(ia, Tensor::from_vec(g.shape(), gd))]
    })
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

pub(crate) fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_deriv(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

pub fn gelu(a: &DiffArray) -> DiffArray {
    let av = a.value();
    let out = av.map(gelu_scalar);
    let ia = a.id();
    push(a.tape(), out, a.needs_grad(), move |g| {
        let gd = g
            .data()
            .iter()
            .zip(av.data())
            .map(|(gv, x)| gv * gelu_deriv(*x))
            .collect();
        vec![(ia, Tensor::from_vec(g.shape(), gd))]
    })
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

pub fn sum_all(a: &DiffArray) -> DiffArray {
    let av = a.value();
    let shape = av.shape().to_vec();
    let out = Tensor::scalar(av.sum());
    let ia = a.id();
    push(a.tape(), out, a.needs_grad(), move |g| {
        vec![(ia, Tensor::full(&shape, g.item()))]
    })
}

pub fn mean_all(a: &DiffArray) -> DiffArray {
    let n = a.with_value(|v| v.len());
    scale(&sum_all(a), 1.0 / n as f64)
}

/// `[rows, cols] -> [cols]`, summing down each column.
pub fn sum_axis0(a: &DiffArray) -> Result<DiffArray> {
    let av = a.value();
    if av.shape().len() != 2 {
        return Err(shape_err(
            "sum_axis0",
            "rank 2".into(),
            format!("{:?}", av.shape()),
        ));
    }
    let (r, c) = (av.rows(), av.cols());
    let mut out = vec![0.0; c];
    for i in 0..r {
        for (j, o) in out.iter_mut().enumerate() {
            *o += av.at2(i, j);
        }
    }
    let ia = a.id();
    Ok(push(
        a.tape(),
        Tensor::from_vec(&[c], out),
        a.needs_grad(),
        move |g| {
            let mut gd = vec![0.0; r * c];
            for i in 0..r {
                gd[i * c..(i + 1) * c].copy_from_slice(g.data());
            }
            vec![(ia, Tensor::from_vec(&[r, c], gd))]
        },
    ))
}

/// `[rows, cols] -> [rows]`, averaging along each row.
pub fn mean_axis1(a: &DiffArray) -> Result<DiffArray> {
    let av = a.value();
    if av.shape().len() != 2 {
        return Err(shape_err(
            "mean_axis1",
            "rank 2".into(),
            format!("{:?}", av.shape()),
        ));
    }
    let (r, c) = (av.rows(), av.cols());
    let out: Vec<f64> = (0..r)
        .map(|i| av.row(i).iter().sum::<f64>() / c as f64)
        .collect();
    let ia = a.id();
    Ok(push(
        a.tape(),
        Tensor::from_vec(&[r], out),
        a.needs_grad(),
        move |g| {
            let mut gd = vec![0.0; r * c];
            for i in 0..r {
                let v = g.data()[i] / c as f64;
                for x in gd[i * c..(i + 1) * c].iter_mut() {
                    *x = v;
                }
            }
            vec![(ia, Tensor::from_vec(&[r, c], gd))]
        },
    ))
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

/// Plain row-major matrix product used by forward and backward paths.
pub(crate) fn mm(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = (a.rows(), a.cols());
    let n = b.cols();
    debug_assert_eq!(b.rows(), k);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a.at2(i, p);
            if av == 0.0 {
                continue;
            }
            let brow = b.row(p);
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::from_vec(&[m, n], out)
}

pub(crate) fn transpose(a: &Tensor) -> Tensor {
    let (r, c) = (a.rows(), a.cols());
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a.at2(i, j);
        }
    }
    Tensor::from_vec(&[c, r], out)
}

pub fn matmul(a: &DiffArray, b: &DiffArray) -> Result<DiffArray> {
    let tape = same_tape("matmul", a, b)?;
    let (av, bv) = (a.value(), b.value());
    if av.shape().len() != 2 || bv.shape().len() != 2 || av.cols() != bv.rows() {
        return Err(shape_err(
            "matmul",
            format!("[m,k]x[k,n], got lhs {:?}", av.shape()),
            format!("{:?}", bv.shape()),
        ));
    }
    let out = mm(&av, &bv);
    let (ia, ib) = (a.id(), b.id());
    let needs = a.needs_grad() || b.needs_grad();
    Ok(push(&tape, out, needs, move |g| {
        let ga = mm(g, &transpose(&bv));
        let gb = mm(&transpose(&av), g);
        vec![(ia, ga), (ib, gb)]
    }))
}

pub fn transpose2d(a: &DiffArray) -> Result<DiffArray> {
    let av = a.value();
    if av.shape().len() != 2 {
        return Err(shape_err(
            "transpose",
            "rank 2".into(),
            format!("{:?}", av.shape()),
        ));
    }
    let out = transpose(&av);
    let ia = a.id();
    Ok(push(a.tape(), out, a.needs_grad(), move |g| {
        vec![(ia, transpose(g))]
    }))
}

/// Add a per-row bias: `[rows, cols] + [rows]`.
pub fn bias_add_rows(x: &DiffArray, b: &DiffArray) -> Result<DiffArray> {
    let tape = same_tape("bias_add_rows", x, b)?;
    let (xv, bv) = (x.value(), b.value());
    if xv.shape().len() != 2 || bv.shape() != [xv.rows()] {
        return Err(shape_err(
            "bias_add_rows",
            format!("[r,c]+[r], got x {:?}", xv.shape()),
            format!("{:?}", bv.shape()),
        ));
    }
    let r = xv.rows();
    let mut out = xv.clone();
    for i in 0..r {
        let bias = bv.data()[i];
        for v in out.row_mut(i) {
            *v += bias;
        }
    }
    let (ix, ib) = (x.id(), b.id());
    let needs = x.needs_grad() || b.needs_grad();
    Ok(push(&tape, out, needs, move |g| {
        let gb: Vec<f64> = (0..r).map(|i| g.row(i).iter().sum()).collect();
        vec![(ix, g.clone()), (ib, Tensor::from_vec(&[r], gb))]
    }))
}

// ---------------------------------------------------------------------------
// Shape manipulation
// ---------------------------------------------------------------------------

pub fn reshape(a: &DiffArray, shape: &[usize]) -> Result<DiffArray> {
    let av = a.value();
    let want: usize = shape.iter().product::<usize>().max(1);
    if want != av.len() {
        return Err(shape_err(
            "reshape",
            format!("{} elements", av.len()),
            format!("{shape:?}"),
        ));
    }
    let old_shape = av.shape().to_vec();
    let out = av.reshaped(shape);
    let ia = a.id();
    Ok(push(a.tape(), out, a.needs_grad(), move |g| {
        vec![(ia, g.reshaped(&old_shape))]
    }))
}

/// Rows `[start, start+len)` along the leading axis.
pub fn slice_axis0(a: &DiffArray, start: usize, len: usize) -> Result<DiffArray> {
    let av = a.value();
    if av.shape().is_empty() {
        return Err(shape_err("slice_axis0", "rank >= 1".into(), "scalar".into()));
    }
    let lead = av.shape()[0];
    if start + len > lead {
        return Err(Error::Config(format!(
            "slice_axis0: range {start}..{} out of bounds for axis of {lead}",
            start + len
        )));
    }
    let tail: usize = av.shape()[1..].iter().product::<usize>().max(1);
    let mut shape = av.shape().to_vec();
    shape[0] = len;
    let out = Tensor::from_vec(&shape, av.data()[start * tail..(start + len) * tail].to_vec());
    let ia = a.id();
    let full_shape = av.shape().to_vec();
    Ok(push(a.tape(), out, a.needs_grad(), move |g| {
        let mut gd = Tensor::zeros(&full_shape);
        gd.data_mut()[start * tail..(start + len) * tail].copy_from_slice(g.data());
        vec![(ia, gd)]
    }))
}

pub fn concat_axis0(parts: &[DiffArray]) -> Result<DiffArray> {
    if parts.is_empty() {
        return Err(Error::Config("concat_axis0: empty input".into()));
    }
    let tape = parts[0].tape().clone();
    let first = parts[0].value();
    let tail_shape = first.shape()[1..].to_vec();
    let tail: usize = tail_shape.iter().product::<usize>().max(1);
    let mut data = Vec::new();
    let mut rows = 0;
    let mut spans = Vec::with_capacity(parts.len());
    for p in parts {
        if !tape.same_tape(p.tape()) {
            return Err(Error::Config("concat_axis0: mixed tapes".into()));
        }
        let v = p.value();
        if v.shape().is_empty() || v.shape()[1..] != tail_shape[..] {
            return Err(shape_err(
                "concat_axis0",
                format!("trailing {tail_shape:?}"),
                format!("{:?}", v.shape()),
            ));
        }
        spans.push((p.id(), v.shape()[0]));
        rows += v.shape()[0];
        data.extend_from_slice(v.data());
    }
    let mut shape = vec![rows];
    shape.extend_from_slice(&tail_shape);
    let needs = parts.iter().any(|p| p.needs_grad());
    let tail_shape_b = tail_shape.clone();
    Ok(push(
        &tape,
        Tensor::from_vec(&shape, data),
        needs,
        move |g| {
            let mut out = Vec::with_capacity(spans.len());
            let mut offset = 0;
            for (pid, r) in &spans {
                let mut shape = vec![*r];
                shape.extend_from_slice(&tail_shape_b);
                let chunk = g.data()[offset * tail..(offset + r) * tail].to_vec();
                out.push((*pid, Tensor::from_vec(&shape, chunk)));
                offset += r;
            }
            out
        },
    ))
}

/// Select rows along the leading axis; indices may repeat.
pub fn gather_axis0(a: &DiffArray, idx: &[usize]) -> Result<DiffArray> {
    let av = a.value();
    if av.shape().is_empty() {
        return Err(shape_err("gather_axis0", "rank >= 1".into(), "scalar".into()));
    }
    let lead = av.shape()[0];
    if let Some(&bad) = idx.iter().find(|&&i| i >= lead) {
        return Err(Error::Config(format!(
            "gather_axis0: index {bad} out of bounds for axis of {lead}"
        )));
    }
    let tail: usize = av.shape()[1..].iter().product::<usize>().max(1);
    let mut shape = av.shape().to_vec();
    shape[0] = idx.len();
    let mut data = Vec::with_capacity(idx.len() * tail);
    for &i in idx {
        data.extend_from_slice(&av.data()[i * tail..(i + 1) * tail]);
    }
    let ia = a.id();
    let idx = idx.to_vec();
    let full_shape = av.shape().to_vec();
    Ok(push(
        a.tape(),
        Tensor::from_vec(&shape, data),
        a.needs_grad(),
        move |g| {
            let mut gd = Tensor::zeros(&full_shape);
            for (pos, &i) in idx.iter().enumerate() {
                let src = &g.data()[pos * tail..(pos + 1) * tail];
                let dst = &mut gd.data_mut()[i * tail..(i + 1) * tail];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
            vec![(ia, gd)]
        },
    ))
}

/// Cyclic shift along axis 1 of a rank-2 array: `out[i, j] = x[i, (j + shift) mod cols]`.
pub fn roll_axis1(a: &DiffArray, shift: isize) -> Result<DiffArray> {
    let av = a.value();
    if av.shape().len() != 2 {
        return Err(shape_err(
            "roll_axis1",
            "rank 2".into(),
            format!("{:?}", av.shape()),
        ));
    }
    let (r, c) = (av.rows(), av.cols());
    let m = c as isize;
    let mut out = Tensor::zeros(&[r, c]);
    for i in 0..r {
        for j in 0..c {
            let src = ((j as isize + shift).rem_euclid(m)) as usize;
            out.set2(i, j, av.at2(i, src));
        }
    }
    let ia = a.id();
    Ok(push(a.tape(), out, a.needs_grad(), move |g| {
        let mut gd = Tensor::zeros(&[r, c]);
        for i in 0..r {
            for j in 0..c {
                let src = ((j as isize + shift).rem_euclid(m)) as usize;
                let v = gd.at2(i, src) + g.at2(i, j);
                gd.set2(i, src, v);
            }
        }
        vec![(ia, gd)]
    }))
}

/// Stack rank-1 arrays of equal length as the columns of an `[n, parts]` matrix.
pub fn stack_cols(parts: &[DiffArray]) -> Result<DiffArray> {
    if parts.is_empty() {
        return Err(Error::Config("stack_cols: empty input".into()));
    }
    let tape = parts[0].tape().clone();
    let n = parts[0].value().len();
    let k = parts.len();
    let mut data = vec![0.0; n * k];
    let mut ids = Vec::with_capacity(k);
    for (c, p) in parts.iter().enumerate() {
        if !tape.same_tape(p.tape()) {
            return Err(Error::Config("stack_cols: mixed tapes".into()));
        }
        let v = p.value();
        if v.shape().len() != 1 || v.len() != n {
            return Err(shape_err(
                "stack_cols",
                format!("[{n}]"),
                format!("{:?}", v.shape()),
            ));
        }
        for (i, x) in v.data().iter().enumerate() {
            data[i * k + c] = *x;
        }
        ids.push(p.id());
    }
    let needs = parts.iter().any(|p| p.needs_grad());
    Ok(push(
        &tape,
        Tensor::from_vec(&[n, k], data),
        needs,
        move |g| {
            ids.iter()
                .enumerate()
                .map(|(c, &pid)| {
                    let col: Vec<f64> = (0..n).map(|i| g.data()[i * k + c]).collect();
                    (pid, Tensor::from_vec(&[n], col))
                })
                .collect()
        },
    ))
}

// ---------------------------------------------------------------------------
// Fourier transforms
// ---------------------------------------------------------------------------

fn last_axis_rows(shape: &[usize]) -> (usize, usize) {
    let d = *shape.last().unwrap();
    let rows = shape[..shape.len() - 1].iter().product::<usize>().max(1);
    (rows, d)
}

/// Real FFT along the last axis. `[.., d]` becomes `[.., 2, d/2+1]` with the
/// real plane first; `d` must be even.
pub fn rfft_op(a: &DiffArray) -> Result<DiffArray> {
    let av = a.value();
    if av.shape().is_empty() {
        return Err(shape_err("rfft", "rank >= 1".into(), "scalar".into()));
    }
    let (rows, d) = last_axis_rows(av.shape());
    if d % 2 != 0 {
        return Err(Error::Config(format!("rfft: length {d} must be even")));
    }
    let half = d / 2 + 1;
    let mut shape = av.shape()[..av.shape().len() - 1].to_vec();
    shape.push(2);
    shape.push(half);
    let mut data = vec![0.0; rows * 2 * half];
    for r in 0..rows {
        let spec = fft::rfft(&av.data()[r * d..(r + 1) * d]);
        for (k, c) in spec.iter().enumerate() {
            data[r * 2 * half + k] = c.re;
            data[r * 2 * half + half + k] = c.im;
        }
    }
    let ia = a.id();
    let in_shape = av.shape().to_vec();
    Ok(push(
        a.tape(),
        Tensor::from_vec(&shape, data),
        a.needs_grad(),
        move |g| {
            let mut gd = vec![0.0; rows * d];
            for r in 0..rows {
                let gre = &g.data()[r * 2 * half..r * 2 * half + half];
                let gim = &g.data()[r * 2 * half + half..(r + 1) * 2 * half];
                let mut full = vec![Complex64::new(0.0, 0.0); d];
                for k in 0..half {
                    full[k] = Complex64::new(gre[k], gim[k]);
                }
                let back = fft::idft_unnorm(&full);
                for j in 0..d {
                    gd[r * d + j] = back[j].re;
                }
            }
            vec![(ia, Tensor::from_vec(&in_shape, gd))]
        },
    ))
}

/// Inverse of [`rfft_op`]: `[.., 2, d/2+1]` back to `[.., d]`.
pub fn irfft_op(a: &DiffArray, d: usize) -> Result<DiffArray> {
    let av = a.value();
    let half = d / 2 + 1;
    let rank = av.shape().len();
    if d % 2 != 0 || rank < 2 || av.shape()[rank - 1] != half || av.shape()[rank - 2] != 2 {
        return Err(shape_err(
            "irfft",
            format!("[.., 2, {half}] with even d={d}"),
            format!("{:?}", av.shape()),
        ));
    }
    let rows = av.shape()[..rank - 2].iter().product::<usize>().max(1);
    let mut shape = av.shape()[..rank - 2].to_vec();
    shape.push(d);
    let mut data = vec![0.0; rows * d];
    for r in 0..rows {
        let re = &av.data()[r * 2 * half..r * 2 * half + half];
        let im = &av.data()[r * 2 * half + half..(r + 1) * 2 * half];
        let spec: Vec<Complex64> = re
            .iter()
            .zip(im)
            .map(|(&a, &b)| Complex64::new(a, b))
            .collect();
        data[r * d..(r + 1) * d].copy_from_slice(&fft::irfft(&spec, d));
    }
    let ia = a.id();
    let in_shape = av.shape().to_vec();
    Ok(push(
        a.tape(),
        Tensor::from_vec(&shape, data),
        a.needs_grad(),
        move |g| {
            let mut gd = vec![0.0; rows * 2 * half];
            for r in 0..rows {
                let row: Vec<Complex64> = g.data()[r * d..(r + 1) * d]
                    .iter()
                    .map(|&v| Complex64::new(v, 0.0))
                    .collect();
                let spec = fft::dft(&row);
                for k in 0..half {
                    let w = if k == 0 || k == d / 2 { 1.0 } else { 2.0 };
                    gd[r * 2 * half + k] = w / d as f64 * spec[k].re;
                    gd[r * 2 * half + half + k] = w / d as f64 * spec[k].im;
                }
            }
            vec![(ia, Tensor::from_vec(&in_shape, gd))]
        },
    ))
}

/// Apply a fixed Fourier symbol along the last axis of a real array:
/// `x -> irfft(symbol * rfft(x))`. The adjoint is the same operator with the
/// conjugated symbol.
pub fn fourier_multiplier(a: &DiffArray, symbol: &[Complex64]) -> Result<DiffArray> {
    let av = a.value();
    if av.shape().is_empty() {
        return Err(shape_err("fourier_multiplier", "rank >= 1".into(), "scalar".into()));
    }
    let (rows, d) = last_axis_rows(av.shape());
    if d % 2 != 0 {
        return Err(Error::Config(format!(
            "fourier_multiplier: length {d} must be even"
        )));
    }
    if symbol.len() != d / 2 + 1 {
        return Err(shape_err(
            "fourier_multiplier",
            format!("symbol of {} modes", d / 2 + 1),
            format!("{}", symbol.len()),
        ));
    }
    let apply = move |x: &[f64], sym: &[Complex64]| -> Vec<f64> {
        let mut out = Vec::with_capacity(x.len());
        for r in 0..x.len() / d {
            let mut spec = fft::rfft(&x[r * d..(r + 1) * d]);
            for (s, m) in spec.iter_mut().zip(sym) {
                *s *= m;
            }
            out.extend_from_slice(&fft::irfft(&spec, d));
        }
        out
    };
    let out = Tensor::from_vec(av.shape(), apply(av.data(), symbol));
    let ia = a.id();
    let conj: Vec<Complex64> = symbol.iter().map(|c| c.conj()).collect();
    let in_shape = av.shape().to_vec();
    let _ = rows;
    Ok(push(a.tape(), out, a.needs_grad(), move |g| {
        vec![(ia, Tensor::from_vec(&in_shape, apply(g.data(), &conj)))]
    }))
}

/// Forward pass of the spectral mixing layer, shared by the differentiable
/// op and the plain inference path. Returns the output and the retained
/// input spectra.
pub(crate) fn spectral_mix_forward(
    x: &Tensor,
    wr: &Tensor,
    wi: &Tensor,
) -> (Tensor, Vec<Vec<Complex64>>) {
    let (c_in, d) = (x.rows(), x.cols());
    let (modes, c_out) = (wr.shape()[0], wr.shape()[1]);
    let half = d / 2 + 1;
    let w_at = |w: &Tensor, k: usize, co: usize, ci: usize| w.data()[(k * c_out + co) * c_in + ci];
    let mut xhat = Vec::with_capacity(c_in);
    for ci in 0..c_in {
        xhat.push(fft::rfft(x.row(ci)));
    }
    let mut out = Tensor::zeros(&[c_out, d]);
    for co in 0..c_out {
        let mut yhat = vec![Complex64::new(0.0, 0.0); half];
        for (k, y) in yhat.iter_mut().enumerate().take(modes) {
            let mut acc = Complex64::new(0.0, 0.0);
            for (ci, xh) in xhat.iter().enumerate() {
                acc += Complex64::new(w_at(wr, k, co, ci), w_at(wi, k, co, ci)) * xh[k];
            }
            *y = acc;
        }
        out.row_mut(co).copy_from_slice(&fft::irfft(&yhat, d));
    }
    (out, xhat)
}

/// Per-mode complex channel mixing between real channel signals: the Fourier
/// layer of a spectral operator. Modes at index `>= modes` are truncated.
///
/// `x: [c_in, d]`, `wr/wi: [modes, c_out, c_in]` -> `[c_out, d]`.
pub fn spectral_mix(x: &DiffArray, wr: &DiffArray, wi: &DiffArray) -> Result<DiffArray> {
    let tape = same_tape("spectral_mix", x, wr)?;
    if !tape.same_tape(wi.tape()) {
        return Err(Error::Config("spectral_mix: operands from different tapes".into()));
    }
    let (xv, wrv, wiv) = (x.value(), wr.value(), wi.value());
    if xv.shape().len() != 2 || wrv.shape().len() != 3 || wrv.shape() != wiv.shape() {
        return Err(shape_err(
            "spectral_mix",
            "x [c_in, d], wr/wi [modes, c_out, c_in]".into(),
            format!("{:?}, {:?}, {:?}", xv.shape(), wrv.shape(), wiv.shape()),
        ));
    }
    let (c_in, d) = (xv.rows(), xv.cols());
    let (modes, c_out) = (wrv.shape()[0], wrv.shape()[1]);
    if wrv.shape()[2] != c_in {
        return Err(shape_err(
            "spectral_mix",
            format!("weights with c_in={c_in}"),
            format!("{:?}", wrv.shape()),
        ));
    }
    if d % 2 != 0 {
        return Err(Error::Config(format!("spectral_mix: length {d} must be even")));
    }
    let half = d / 2 + 1;
    if modes > half {
        return Err(Error::Config(format!(
            "spectral_mix: {modes} modes exceed the {half} available"
        )));
    }

    let w_at = move |w: &Tensor, k: usize, co: usize, ci: usize| w.data()[(k * c_out + co) * c_in + ci];

    let (out, xhat) = spectral_mix_forward(&xv, &wrv, &wiv);

    let (ix, iwr, iwi) = (x.id(), wr.id(), wi.id());
    let needs = x.needs_grad() || wr.needs_grad() || wi.needs_grad();
    Ok(push(&tape, out, needs, move |g| {
        // Adjoint of irfft: Ghat[co,k] = (w_k / d) * DFT(g_row)[k].
        let mut ghat = Vec::with_capacity(c_out);
        for co in 0..c_out {
            let row: Vec<Complex64> = g.row(co).iter().map(|&v| Complex64::new(v, 0.0)).collect();
            let spec = fft::dft(&row);
            let scaled: Vec<Complex64> = (0..half)
                .map(|k| {
                    let w = if k == 0 || k == d / 2 { 1.0 } else { 2.0 };
                    spec[k] * (w / d as f64)
                })
                .collect();
            ghat.push(scaled);
        }
        // Gradient w.r.t. x: Z[ci,k] = sum_co conj(W[k,co,ci]) Ghat[co,k],
        // mapped back through the rfft adjoint (zero-extended unnormalized idft).
        let mut gx = Tensor::zeros(&[c_in, d]);
        for ci in 0..c_in {
            let mut z = vec![Complex64::new(0.0, 0.0); d];
            for (k, zk) in z.iter_mut().enumerate().take(modes) {
                let mut acc = Complex64::new(0.0, 0.0);
                for (co, gh) in ghat.iter().enumerate() {
                    let w = Complex64::new(w_at(&wrv, k, co, ci), w_at(&wiv, k, co, ci));
                    acc += w.conj() * gh[k];
                }
                *zk = acc;
            }
            let back = fft::idft_unnorm(&z);
            for (j, b) in back.iter().enumerate() {
                gx.set2(ci, j, b.re);
            }
        }
        // Gradient w.r.t. weights: Ghat[co,k] * conj(X[ci,k]).
        let mut gwr = Tensor::zeros(&[modes, c_out, c_in]);
        let mut gwi = Tensor::zeros(&[modes, c_out, c_in]);
        for k in 0..modes {
            for co in 0..c_out {
                for (ci, xh) in xhat.iter().enumerate() {
                    let prod = ghat[co][k] * xh[k].conj();
                    gwr.data_mut()[(k * c_out + co) * c_in + ci] = prod.re;
                    gwi.data_mut()[(k * c_out + co) * c_in + ci] = prod.im;
                }
            }
        }
        vec![(ix, gx), (iwr, gwr), (iwi, gwi)]
    }))
}

// ---------------------------------------------------------------------------
// Neural-network pieces
// ---------------------------------------------------------------------------

/// Strided 2-D convolution with zero padding.
///
/// `x: [c_in, h, w]`, `weight: [c_out, c_in, kh, kw]`, `bias: [c_out]`.
pub fn conv2d(
    x: &DiffArray,
    weight: &DiffArray,
    bias: &DiffArray,
    stride: usize,
    pad: usize,
) -> Result<DiffArray> {
    let tape = same_tape("conv2d", x, weight)?;
    if !tape.same_tape(bias.tape()) {
        return Err(Error::Config("conv2d: operands from different tapes".into()));
    }
    let (xv, wv, bv) = (x.value(), weight.value(), bias.value());
    if xv.shape().len() != 3 || wv.shape().len() != 4 {
        return Err(shape_err(
            "conv2d",
            "x [c_in,h,w], weight [c_out,c_in,kh,kw]".into(),
            format!("{:?}, {:?}", xv.shape(), wv.shape()),
        ));
    }
    let (c_in, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
    let (c_out, kc, kh, kw) = (wv.shape()[0], wv.shape()[1], wv.shape()[2], wv.shape()[3]);
    if kc != c_in || bv.shape() != [c_out] {
        return Err(shape_err(
            "conv2d",
            format!("weight c_in={c_in}, bias [{c_out}]"),
            format!("{:?}, {:?}", wv.shape(), bv.shape()),
        ));
    }
    if stride == 0 || h + 2 * pad < kh || w + 2 * pad < kw {
        return Err(Error::Config(format!(
            "conv2d: kernel {kh}x{kw} does not fit input {h}x{w} with pad {pad}"
        )));
    }
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;

    let x_at = |t: &Tensor, ci: usize, i: isize, j: isize| -> f64 {
        if i < 0 || j < 0 || i >= h as isize || j >= w as isize {
            0.0
        } else {
            t.data()[(ci * h + i as usize) * w + j as usize]
        }
    };
    let w_at = move |t: &Tensor, co: usize, ci: usize, a: usize, b: usize| {
        t.data()[((co * c_in + ci) * kh + a) * kw + b]
    };

    let mut out = Tensor::zeros(&[c_out, oh, ow]);
    for co in 0..c_out {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = bv.data()[co];
                for ci in 0..c_in {
                    for a in 0..kh {
                        for b in 0..kw {
                            let iy = (oy * stride + a) as isize - pad as isize;
                            let jx = (ox * stride + b) as isize - pad as isize;
                            acc += w_at(&wv, co, ci, a, b) * x_at(&xv, ci, iy, jx);
                        }
                    }
                }
                out.data_mut()[(co * oh + oy) * ow + ox] = acc;
            }
        }
    }

    let (ix, iw, ib) = (x.id(), weight.id(), bias.id());
    let needs = x.needs_grad() || weight.needs_grad() || bias.needs_grad();
    Ok(push(&tape, out, needs, move |g| {
        let mut gx = Tensor::zeros(&[c_in, h, w]);
        let mut gw = Tensor::zeros(&[c_out, c_in, kh, kw]);
        let mut gb = Tensor::zeros(&[c_out]);
        for co in 0..c_out {
            for oy in 0..oh {
                for ox in 0..ow {
                    let gv = g.data()[(co * oh + oy) * ow + ox];
                    if gv == 0.0 {
                        continue;
                    }
                    gb.data_mut()[co] += gv;
                    for ci in 0..c_in {
                        for a in 0..kh {
                            for b in 0..kw {
                                let iy = (oy * stride + a) as isize - pad as isize;
                                let jx = (ox * stride + b) as isize - pad as isize;
                                if iy < 0 || jx < 0 || iy >= h as isize || jx >= w as isize {
                                    continue;
                                }
                                let xi = (ci * h + iy as usize) * w + jx as usize;
                                gw.data_mut()[((co * c_in + ci) * kh + a) * kw + b] +=
                                    gv * xv.data()[xi];
                                gx.data_mut()[xi] += gv * w_at(&wv, co, ci, a, b);
                            }
                        }
                    }
                }
            }
        }
        vec![(ix, gx), (iw, gw), (ib, gb)]
    }))
}

/// Row-wise softmax of a rank-2 array.
pub fn softmax_axis1(a: &DiffArray) -> Result<DiffArray> {
    let av = a.value();
    if av.shape().len() != 2 {
        return Err(shape_err(
            "softmax_axis1",
            "rank 2".into(),
            format!("{:?}", av.shape()),
        ));
    }
    let (r, c) = (av.rows(), av.cols());
    let mut out = Tensor::zeros(&[r, c]);
    for i in 0..r {
        let row = av.row(i);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (j, &v) in row.iter().enumerate() {
            let e = (v - m).exp();
            out.set2(i, j, e);
            z += e;
        }
        for j in 0..c {
            let v = out.at2(i, j) / z;
            out.set2(i, j, v);
        }
    }
    let yv = out.clone();
    let ia = a.id();
    Ok(push(a.tape(), out, a.needs_grad(), move |g| {
        let mut gd = Tensor::zeros(&[r, c]);
        for i in 0..r {
            let dot: f64 = (0..c).map(|j| g.at2(i, j) * yv.at2(i, j)).sum();
            for j in 0..c {
                gd.set2(i, j, yv.at2(i, j) * (g.at2(i, j) - dot));
            }
        }
        vec![(ia, gd)]
    }))
}

const NORM_EPS: f64 = 1e-12;

/// Normalize the leading-axis vector at every trailing position to unit L2
/// norm: feature maps `[channels, ...]` become channel-unit at each position.
pub fn normalize_axis0(a: &DiffArray) -> Result<DiffArray> {
    let av = a.value();
    if av.shape().is_empty() {
        return Err(shape_err("normalize_axis0", "rank >= 1".into(), "scalar".into()));
    }
    let c = av.shape()[0];
    let s: usize = av.shape()[1..].iter().product::<usize>().max(1);
    let mut out = av.clone();
    let mut norms = vec![0.0; s];
    for (p, n) in norms.iter_mut().enumerate() {
        let mut acc = 0.0;
        for ch in 0..c {
            let v = av.data()[ch * s + p];
            acc += v * v;
        }
        *n = (acc + NORM_EPS).sqrt();
        for ch in 0..c {
            out.data_mut()[ch * s + p] /= *n;
        }
    }
    let yv = out.clone();
    let ia = a.id();
    let shape = av.shape().to_vec();
    Ok(push(a.tape(), out, a.needs_grad(), move |g| {
        let mut gd = Tensor::zeros(&shape);
        for (p, n) in norms.iter().enumerate() {
            let mut dot = 0.0;
            for ch in 0..c {
                dot += g.data()[ch * s + p] * yv.data()[ch * s + p];
            }
            for ch in 0..c {
                let idx = ch * s + p;
                gd.data_mut()[idx] = (g.data()[idx] - yv.data()[idx] * dot) / n;
            }
        }
        vec![(ia, gd)]
    }))
}

/// Normalize each row of `[rows, cols]` (or a single rank-1 vector) to unit
/// L2 norm.
pub fn normalize_rows(a: &DiffArray) -> Result<DiffArray> {
    let av = a.value();
    let (r, c) = match av.shape() {
        [n] => (1usize, *n),
        [r, c] => (*r, *c),
        other => {
            return Err(shape_err(
                "normalize_rows",
                "rank 1 or 2".into(),
                format!("{other:?}"),
            ))
        }
    };
    let mut out = av.clone();
    let mut norms = vec![0.0; r];
    for (i, n) in norms.iter_mut().enumerate() {
        let row = &av.data()[i * c..(i + 1) * c];
        *n = (row.iter().map(|v| v * v).sum::<f64>() + NORM_EPS).sqrt();
        for v in out.data_mut()[i * c..(i + 1) * c].iter_mut() {
            *v /= *n;
        }
    }
    let yv = out.clone();
    let ia = a.id();
    let shape = av.shape().to_vec();
    Ok(push(a.tape(), out, a.needs_grad(), move |g| {
        let mut gd = Tensor::zeros(&shape);
        for (i, n) in norms.iter().enumerate() {
            let gr = &g.data()[i * c..(i + 1) * c];
            let yr = &yv.data()[i * c..(i + 1) * c];
            let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
            for j in 0..c {
                gd.data_mut()[i * c + j] = (gr[j] - yr[j] * dot) / n;
            }
        }
        vec![(ia, gd)]
    }))
}

/// InfoNCE loss from a square similarity matrix (anchors by positives).
///
/// Row `n` contributes `-s_nn/tau + log mean_{m != n} exp(s_nm/tau)`; the
/// result is the mean over rows. With a single row there are no negatives and
/// the alignment term alone is returned.
pub fn infonce_from_sim(sim: &DiffArray, tau: f64) -> Result<DiffArray> {
    if tau <= 0.0 {
        return Err(Error::Config(format!("infonce: tau must be positive, got {tau}")));
    }
    let sv = sim.value();
    if sv.shape().len() != 2 || sv.rows() != sv.cols() {
        return Err(shape_err(
            "infonce",
            "square [B,B]".into(),
            format!("{:?}", sv.shape()),
        ));
    }
    let b = sv.rows();
    let mut loss = 0.0;
    // Off-diagonal softmax weights per row, reused by the backward pass.
    let mut weights = Tensor::zeros(&[b, b]);
    for n in 0..b {
        loss -= sv.at2(n, n) / tau;
        if b > 1 {
            let mut m = f64::NEG_INFINITY;
            for j in 0..b {
                if j != n {
                    m = m.max(sv.at2(n, j) / tau);
                }
            }
            let mut z = 0.0;
            for j in 0..b {
                if j != n {
                    let e = (sv.at2(n, j) / tau - m).exp();
                    weights.set2(n, j, e);
                    z += e;
                }
            }
            for j in 0..b {
                if j != n {
                    let v = weights.at2(n, j) / z;
                    weights.set2(n, j, v);
                }
            }
            loss += m + z.ln() - ((b - 1) as f64).ln();
        }
    }
    loss /= b as f64;
    let ia = sim.id();
    Ok(push(
        sim.tape(),
        Tensor::scalar(loss),
        sim.needs_grad(),
        move |g| {
            let gv = g.item();
            let mut gd = Tensor::zeros(&[b, b]);
            for n in 0..b {
                gd.set2(n, n, -gv / (b as f64 * tau));
                for j in 0..b {
                    if j != n {
                        gd.set2(n, j, gv * weights.at2(n, j) / (b as f64 * tau));
                    }
                }
            }
            vec![(ia, gd)]
        },
    ))
}

/// Fixed per-column affine map on `[n, k]`: `y[i,c] = x[i,c] * scale[c] + shift[c]`.
pub fn affine_cols(x: &DiffArray, col_scale: &[f64], col_shift: &[f64]) -> Result<DiffArray> {
    let xv = x.value();
    if xv.shape().len() != 2 || xv.cols() != col_scale.len() || col_scale.len() != col_shift.len() {
        return Err(shape_err(
            "affine_cols",
            format!("[n,{}] with matching scale/shift", col_scale.len()),
            format!("{:?}", xv.shape()),
        ));
    }
    let (n, k) = (xv.rows(), xv.cols());
    let mut out = xv.clone();
    for i in 0..n {
        for c in 0..k {
            let v = out.at2(i, c) * col_scale[c] + col_shift[c];
            out.set2(i, c, v);
        }
    }
    let ia = x.id();
    let col_scale = col_scale.to_vec();
    Ok(push(x.tape(), out, x.needs_grad(), move |g| {
        let mut gd = g.clone();
        for i in 0..n {
            for c in 0..k {
                let v = gd.at2(i, c) * col_scale[c];
                gd.set2(i, c, v);
            }
        }
        vec![(ia, gd)]
    }))
}

/// Mean over frames of the squared relative L2 error against a fixed target:
/// `(1/F) sum_f ||p_f - t_f||^2 / ||t_f||^2`.
pub fn rel_sq_err(pred: &DiffArray, target: &Tensor) -> Result<DiffArray> {
    let pv = pred.value();
    if pv.shape() != target.shape() || pv.shape().len() != 2 {
        return Err(shape_err(
            "rel_sq_err",
            format!("{:?}", target.shape()),
            format!("{:?}", pv.shape()),
        ));
    }
    let (f, d) = (pv.rows(), pv.cols());
    let mut denom = vec![0.0; f];
    let mut loss = 0.0;
    for i in 0..f {
        let t = target.row(i);
        let p = pv.row(i);
        let nt: f64 = t.iter().map(|v| v * v).sum();
        if nt == 0.0 {
            return Err(Error::Config(format!(
                "rel_sq_err: target frame {i} has zero norm"
            )));
        }
        denom[i] = nt;
        let diff: f64 = p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum();
        loss += diff / nt;
    }
    loss /= f as f64;
    let ia = pred.id();
    let tv = target.clone();
    Ok(push(
        pred.tape(),
        Tensor::scalar(loss),
        pred.needs_grad(),
        move |g| {
            let gv = g.item();
            let mut gd = Tensor::zeros(&[f, d]);
            for i in 0..f {
                let s = 2.0 * gv / (f as f64 * denom[i]);
                for j in 0..d {
                    gd.set2(i, j, s * (pv.at2(i, j) - tv.at2(i, j)));
                }
            }
            vec![(ia, gd)]
        },
    ))
}

// ---------------------------------------------------------------------------
// Composites
// ---------------------------------------------------------------------------

pub fn dot(a: &DiffArray, b: &DiffArray) -> Result<DiffArray> {
    Ok(sum_all(&mul(a, b)?))
}

pub fn l2_norm(a: &DiffArray) -> DiffArray {
    sqrt(&sum_all(&square(a)))
}

/// Cosine similarity of two equally shaped arrays viewed as flat vectors.
pub fn cosine_similarity(a: &DiffArray, b: &DiffArray) -> Result<DiffArray> {
    let num = dot(a, b)?;
    let den = mul(&l2_norm(a), &l2_norm(b))?;
    div(&num, &den)
}
