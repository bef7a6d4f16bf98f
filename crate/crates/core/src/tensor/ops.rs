//! Elementwise arithmetic, reductions and channel concatenation.

use std::rc::Rc;

use super::{nctv, numel, Result, Tensor, TensorError};

#[derive(Clone, Copy)]
enum BinOp {
    Add,
    Sub,
    Mul,
}

impl BinOp {
    fn name(self) -> &'static str {
        match self {
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Mul => "mul",
        }
    }
}

/// For every element of `a`, the flat index of the `b` element it pairs with.
/// `b` is right-aligned against `a`; each of its dims equals `a`'s or is 1.
/// `None` means the shapes are identical.
fn broadcast_map(op: &'static str, a: &[usize], b: &[usize]) -> Result<Option<Vec<usize>>> {
    if a == b {
        return Ok(None);
    }
    let mismatch = || TensorError::ShapeMismatch {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    };
    if b.len() > a.len() {
        return Err(mismatch());
    }
    let off = a.len() - b.len();
    let mut strides = vec![0usize; a.len()];
    let mut s = 1;
    for i in (0..b.len()).rev() {
        if b[i] != a[off + i] && b[i] != 1 {
            return Err(mismatch());
        }
        if b[i] != 1 {
            strides[off + i] = s;
        }
        s *= b[i];
    }
    let n = numel(a);
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; a.len()];
    let mut cur = 0usize;
    for _ in 0..n {
        map.push(cur);
        for d in (0..a.len()).rev() {
            idx[d] += 1;
            cur += strides[d];
            if idx[d] < a[d] {
                break;
            }
            cur -= strides[d] * a[d];
            idx[d] = 0;
        }
    }
    Ok(Some(map))
}

impl Tensor {
    fn binary(&self, other: &Tensor, kind: BinOp) -> Result<Tensor> {
        let op = kind.name();
        let map = broadcast_map(op, self.shape(), other.shape())?.map(Rc::new);
        let data = {
            let a = self.data();
            let b = other.data();
            let f = |x: f64, y: f64| match kind {
                BinOp::Add => x + y,
                BinOp::Sub => x - y,
                BinOp::Mul => x * y,
            };
            match &map {
                None => a.iter().zip(b.iter()).map(|(&x, &y)| f(x, y)).collect(),
                Some(m) => a.iter().zip(m.iter()).map(|(&x, &j)| f(x, b[j])).collect(),
            }
        };
        let (lhs, rhs) = (self.clone(), other.clone());
        let nb = other.numel();
        Tensor::from_op(op, data, self.shape().to_vec(), &[self, other], move |g, needs| {
            let ga = needs[0].then(|| match kind {
                BinOp::Add | BinOp::Sub => g.to_vec(),
                BinOp::Mul => {
                    let b = rhs.data();
                    match &map {
                        None => g.iter().zip(b.iter()).map(|(g, y)| g * y).collect(),
                        Some(m) => g.iter().zip(m.iter()).map(|(g, &j)| g * b[j]).collect(),
                    }
                }
            });
            let gb = needs[1].then(|| {
                let a = lhs.data();
                let term = |i: usize| match kind {
                    BinOp::Add => g[i],
                    BinOp::Sub => -g[i],
                    BinOp::Mul => g[i] * a[i],
                };
                match &map {
                    None => (0..g.len()).map(term).collect(),
                    Some(m) => {
                        let mut acc = vec![0.0; nb];
                        for (i, &j) in m.iter().enumerate() {
                            acc[j] += term(i);
                        }
                        acc
                    }
                }
            });
            vec![ga, gb]
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, BinOp::Add)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, BinOp::Sub)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, BinOp::Mul)
    }

    /// Multiplies by a constant.
    pub fn scale(&self, s: f64) -> Result<Tensor> {
        let data = self.data().iter().map(|x| x * s).collect();
        Tensor::from_op("scale", data, self.shape().to_vec(), &[self], move |g, _| {
            vec![Some(g.iter().map(|x| x * s).collect())]
        })
    }

    pub fn relu(&self) -> Result<Tensor> {
        let data = self.data().iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        let input = self.clone();
        Tensor::from_op("relu", data, self.shape().to_vec(), &[self], move |g, _| {
            let x = input.data();
            vec![Some(
                g.iter()
                    .zip(x.iter())
                    .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
                    .collect(),
            )]
        })
    }

    pub fn sum(&self) -> Result<Tensor> {
        let total = self.data().iter().sum();
        let n = self.numel();
        Tensor::from_op("sum", vec![total], vec![1], &[self], move |g, _| vec![Some(vec![g[0]; n])])
    }

    pub fn mean(&self) -> Result<Tensor> {
        let n = self.numel();
        self.sum()?.scale(1.0 / n as f64)
    }

    /// Mean absolute difference over all elements. The subgradient of `|·|`
    /// at zero is taken as 0.
    pub fn mean_abs(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape() != other.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "mean_abs",
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            });
        }
        let n = self.numel() as f64;
        let value = {
            let (a, b) = (self.data(), other.data());
            a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum::<f64>() / n
        };
        let (lhs, rhs) = (self.clone(), other.clone());
        Tensor::from_op("mean_abs", vec![value], vec![1], &[self, other], move |g, needs| {
            let (a, b) = (lhs.data(), rhs.data());
            let s = g[0] / n;
            let sign: Vec<f64> = a.iter().zip(b.iter()).map(|(x, y)| sign(x - y) * s).collect();
            let gb = needs[1].then(|| sign.iter().map(|x| -x).collect());
            vec![needs[0].then_some(sign), gb]
        })
    }

    /// `Σ w|a−b| / Σ w` with constant non-negative weights, one per element.
    pub fn mean_abs_weighted(&self, other: &Tensor, weights: &[f64]) -> Result<Tensor> {
        if self.shape() != other.shape() || weights.len() != self.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "mean_abs_weighted",
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            });
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || weights.iter().any(|w| *w < 0.0) {
            return Err(TensorError::Invalid {
                op: "mean_abs_weighted",
                msg: "weights must be non-negative with a positive sum".into(),
            });
        }
        let value = {
            let (a, b) = (self.data(), other.data());
            a.iter()
                .zip(b.iter())
                .zip(weights)
                .map(|((x, y), w)| w * (x - y).abs())
                .sum::<f64>()
                / total
        };
        let (lhs, rhs) = (self.clone(), other.clone());
        let weights = weights.to_vec();
        Tensor::from_op("mean_abs_weighted", vec![value], vec![1], &[self, other], move |g, needs| {
            let (a, b) = (lhs.data(), rhs.data());
            let s = g[0] / total;
            let ga: Vec<f64> = a
                .iter()
                .zip(b.iter())
                .zip(&weights)
                .map(|((x, y), w)| sign(x - y) * w * s)
                .collect();
            let gb = needs[1].then(|| ga.iter().map(|x| -x).collect());
            vec![needs[0].then_some(ga), gb]
        })
    }

    /// Same values under a new shape with equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() || shape.contains(&0) {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        Tensor::from_op("reshape", self.to_vec(), shape.to_vec(), &[self], |g, _| vec![Some(g.to_vec())])
    }

    /// Concatenates `(Ci,T,V)` or `(N,Ci,T,V)` tensors along the channel axis.
    pub fn concat_channels(parts: &[Tensor]) -> Result<Tensor> {
        const OP: &str = "concat_channels";
        let first = parts.first().ok_or(TensorError::Invalid {
            op: OP,
            msg: "nothing to concatenate".into(),
        })?;
        let (n, _, t, v) = nctv(OP, first.shape())?;
        let rank = first.shape().len();
        let mut channels = Vec::with_capacity(parts.len());
        for p in parts {
            let (pn, pc, pt, pv) = nctv(OP, p.shape())?;
            if p.shape().len() != rank || (pn, pt, pv) != (n, t, v) {
                return Err(TensorError::ShapeMismatch {
                    op: OP,
                    lhs: first.shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
            channels.push(pc);
        }
        let plane = t * v;
        let total_c: usize = channels.iter().sum();
        let mut data = Vec::with_capacity(n * total_c * plane);
        for s in 0..n {
            for (p, &c) in parts.iter().zip(&channels) {
                let d = p.data();
                data.extend_from_slice(&d[s * c * plane..(s + 1) * c * plane]);
            }
        }
        let shape = super::with_channels(first.shape(), total_c);
        let refs: Vec<&Tensor> = parts.iter().collect();
        Tensor::from_op(OP, data, shape, &refs, move |g, needs| {
            let mut grads: Vec<Option<Vec<f64>>> = channels
                .iter()
                .zip(needs)
                .map(|(&c, &need)| need.then(|| Vec::with_capacity(n * c * plane)))
                .collect();
            for s in 0..n {
                let mut off = s * total_c * plane;
                for (slot, &c) in grads.iter_mut().zip(&channels) {
                    if let Some(buf) = slot {
                        buf.extend_from_slice(&g[off..off + c * plane]);
                    }
                    off += c * plane;
                }
            }
            grads
        })
    }

    /// Stacks equal-shape tensors along a new leading axis.
    pub fn stack(parts: &[Tensor]) -> Result<Tensor> {
        const OP: &str = "stack";
        let first = parts.first().ok_or(TensorError::Invalid {
            op: OP,
            msg: "nothing to stack".into(),
        })?;
        let mut data = Vec::with_capacity(first.numel() * parts.len());
        for p in parts {
            if p.shape() != first.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: OP,
                    lhs: first.shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
            data.extend_from_slice(&p.data());
        }
        let mut shape = vec![parts.len()];
        shape.extend_from_slice(first.shape());
        let each = first.numel();
        let refs: Vec<&Tensor> = parts.iter().collect();
        Tensor::from_op(OP, data, shape, &refs, move |g, needs| {
            needs
                .iter()
                .enumerate()
                .map(|(i, &need)| need.then(|| g[i * each..(i + 1) * each].to_vec()))
                .collect()
        })
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(data: &[f64], shape: &[usize]) -> Tensor {
        Tensor::new(data.to_vec(), shape).unwrap()
    }

    #[test]
    fn elementwise_examples() {
        assert_eq!(t(&[1.0, 2.0], &[2]).add(&t(&[3.0, 4.0], &[2])).unwrap().to_vec(), vec![4.0, 6.0]);
        assert_eq!(t(&[1.0, 9.0], &[2]).sub(&t(&[2.0], &[1])).unwrap().to_vec(), vec![-1.0, 7.0]);
        assert_eq!(t(&[5.0], &[1]).sub(&t(&[2.0], &[1])).unwrap().to_vec(), vec![3.0]);
    }

    #[test]
    fn mul_by_zeros_kills_gradient() {
        let x = Tensor::param(vec![1.5, -2.0, 0.3], &[3]).unwrap();
        let y = x.mul(&Tensor::zeros(&[3])).unwrap();
        assert_eq!(y.to_vec(), vec![0.0; 3]);
        y.sum().unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn broadcast_gradient_sums_over_broadcast_axes() {
        let a = Tensor::param((0..12).map(f64::from).collect(), &[2, 3, 2]).unwrap();
        let b = Tensor::param(vec![1.0, 2.0, 3.0], &[3, 1]).unwrap();
        let y = a.mul(&b).unwrap();
        assert_eq!(y.data()[2], 2.0 * 2.0);
        y.sum().unwrap().backward().unwrap();
        // d/db_j = Σ over the broadcast axes of a[.., j, ..]
        let a_vals = a.to_vec();
        let want: Vec<f64> = (0..3)
            .map(|j| (0..2).flat_map(|i| (0..2).map(move |k| (i, k))).map(|(i, k)| a_vals[i * 6 + j * 2 + k]).sum())
            .collect();
        assert_eq!(b.grad().unwrap(), want);
        assert_eq!(a.grad().unwrap(), vec![1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
    }

    #[test]
    fn incompatible_broadcast_is_rejected() {
        let a = t(&[1.0; 6], &[2, 3]);
        assert!(a.add(&t(&[1.0, 2.0], &[2])).is_err());
        assert!(t(&[1.0], &[1]).add(&a).is_err());
    }

    #[test]
    fn mean_abs_examples() {
        let x = t(&[1.0, -2.0], &[2]);
        assert_eq!(x.mean_abs(&x).unwrap().item(), 0.0);
        assert_eq!(t(&[1.0, 3.0], &[2]).mean_abs(&t(&[0.0, 1.0], &[2])).unwrap().item(), 1.5);
        assert!(x.mean_abs(&t(&[1.0], &[1])).is_err());
    }

    #[test]
    fn mean_abs_tie_has_zero_subgradient() {
        let x = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
        x.mean_abs(&t(&[1.0, 0.0], &[2])).unwrap().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 0.5]);
    }

    #[test]
    fn concat_then_slices_recover_inputs() {
        let a = t(&(0..8).map(f64::from).collect::<Vec<_>>(), &[2, 2, 2]);
        let b = t(&(100..112).map(f64::from).collect::<Vec<_>>(), &[3, 2, 2]);
        let c = Tensor::concat_channels(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(c.shape(), &[5, 2, 2]);
        assert_eq!(&c.data()[..8], &a.data()[..]);
        assert_eq!(&c.data()[8..], &b.data()[..]);
        assert!(Tensor::concat_channels(&[a, t(&[0.0; 6], &[1, 3, 2])]).is_err());
    }

    #[test]
    fn batched_concat_interleaves_per_sample() {
        let a = t(&[1.0, 2.0], &[2, 1, 1, 1]);
        let b = t(&[10.0, 20.0, 30.0, 40.0], &[2, 2, 1, 1]);
        let c = Tensor::concat_channels(&[a, b]).unwrap();
        assert_eq!(c.to_vec(), vec![1.0, 10.0, 20.0, 2.0, 30.0, 40.0]);
    }

    #[test]
    fn weighted_mean_abs_ignores_zero_weights() {
        let a = t(&[1.0, 5.0, 2.0], &[3]);
        let b = t(&[0.0, 0.0, 0.0], &[3]);
        let l = a.mean_abs_weighted(&b, &[1.0, 0.0, 1.0]).unwrap();
        assert_eq!(l.item(), 1.5);
    }
}
