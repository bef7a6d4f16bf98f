//! Contractions over the joint axis, pointwise channel mixing, temporal
//! convolution and temporal max pooling on `(C,T,V)` / `(N,C,T,V)` maps.

use super::gemm::{gemm, MatMut, MatRef};
use super::{nctv, with_channels, Result, Tensor, TensorError};

fn mismatch(op: &'static str, lhs: &[usize], rhs: &[usize]) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

fn check_bias(op: &'static str, bias: Option<&Tensor>, c: usize) -> Result<()> {
    match bias {
        Some(b) if b.shape() != [c] => Err(mismatch(op, &[c], b.shape())),
        _ => Ok(()),
    }
}

fn add_bias(out: &mut [f64], bias: &[f64], n: usize, plane: usize) {
    let c = bias.len();
    for s in 0..n {
        for (co, &b) in bias.iter().enumerate() {
            let start = (s * c + co) * plane;
            out[start..start + plane].iter_mut().for_each(|x| *x += b);
        }
    }
}

fn bias_grad(g: &[f64], n: usize, c: usize, plane: usize) -> Vec<f64> {
    let mut gb = vec![0.0; c];
    for s in 0..n {
        for (co, acc) in gb.iter_mut().enumerate() {
            let start = (s * c + co) * plane;
            *acc += g[start..start + plane].iter().sum::<f64>();
        }
    }
    gb
}

impl Tensor {
    /// `out[.., u] = Σ_v self[.., v] · a[v, u]`: contraction of the last axis
    /// with a `(V, U)` matrix. Differentiable in both arguments.
    pub fn matmul_lastdim(&self, a: &Tensor) -> Result<Tensor> {
        const OP: &str = "matmul_lastdim";
        let v = *self.shape().last().expect("tensors have rank >= 1");
        let &[av, u] = a.shape() else {
            return Err(mismatch(OP, self.shape(), a.shape()));
        };
        if av != v {
            return Err(mismatch(OP, self.shape(), a.shape()));
        }
        let rows = self.numel() / v;
        let mut out = vec![0.0; rows * u];
        gemm(
            rows,
            v,
            u,
            MatRef::rows(&self.data(), 0, v),
            MatRef::rows(&a.data(), 0, u),
            0.0,
            MatMut::rows(&mut out, 0, u),
        );
        let mut shape = self.shape().to_vec();
        *shape.last_mut().unwrap() = u;
        let (f, m) = (self.clone(), a.clone());
        Tensor::from_op(OP, out, shape, &[self, a], move |g, needs| {
            let gf = needs[0].then(|| {
                let mut gf = vec![0.0; rows * v];
                gemm(
                    rows,
                    u,
                    v,
                    MatRef::rows(g, 0, u),
                    MatRef::rows_t(&m.data(), 0, u),
                    0.0,
                    MatMut::rows(&mut gf, 0, v),
                );
                gf
            });
            let ga = needs[1].then(|| {
                let mut ga = vec![0.0; v * u];
                gemm(
                    v,
                    rows,
                    u,
                    MatRef::rows_t(&f.data(), 0, v),
                    MatRef::rows(g, 0, u),
                    0.0,
                    MatMut::rows(&mut ga, 0, u),
                );
                ga
            });
            vec![gf, ga]
        })
    }

    /// Pointwise channel mixing with `w: (Cout, Cin)` and optional bias
    /// `(Cout)`, applied independently at every `(t, v)`.
    pub fn conv1x1(&self, w: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
        const OP: &str = "conv1x1";
        let (n, cin, t, v) = nctv(OP, self.shape())?;
        let &[cout, wcin] = w.shape() else {
            return Err(mismatch(OP, self.shape(), w.shape()));
        };
        if wcin != cin {
            return Err(mismatch(OP, self.shape(), w.shape()));
        }
        check_bias(OP, bias, cout)?;
        let plane = t * v;
        let mut out = vec![0.0; n * cout * plane];
        {
            let (f, wd) = (self.data(), w.data());
            for s in 0..n {
                gemm(
                    cout,
                    cin,
                    plane,
                    MatRef::rows(&wd, 0, cin),
                    MatRef::rows(&f, s * cin * plane, plane),
                    0.0,
                    MatMut::rows(&mut out, s * cout * plane, plane),
                );
            }
        }
        if let Some(b) = bias {
            add_bias(&mut out, &b.data(), n, plane);
        }
        let shape = with_channels(self.shape(), cout);
        let (f, wt) = (self.clone(), w.clone());
        let mut parents = vec![self, w];
        parents.extend(bias);
        Tensor::from_op(OP, out, shape, &parents, move |g, needs| {
            let gf = needs[0].then(|| {
                let wd = wt.data();
                let mut gf = vec![0.0; n * cin * plane];
                for s in 0..n {
                    gemm(
                        cin,
                        cout,
                        plane,
                        MatRef::rows_t(&wd, 0, cin),
                        MatRef::rows(g, s * cout * plane, plane),
                        0.0,
                        MatMut::rows(&mut gf, s * cin * plane, plane),
                    );
                }
                gf
            });
            let gw = needs[1].then(|| {
                let fd = f.data();
                let mut gw = vec![0.0; cout * cin];
                for s in 0..n {
                    gemm(
                        cout,
                        plane,
                        cin,
                        MatRef::rows(g, s * cout * plane, plane),
                        MatRef::rows_t(&fd, s * cin * plane, plane),
                        1.0,
                        MatMut::rows(&mut gw, 0, cin),
                    );
                }
                gw
            });
            let mut grads = vec![gf, gw];
            if needs.len() == 3 {
                grads.push(needs[2].then(|| bias_grad(g, n, cout, plane)));
            }
            grads
        })
    }

    /// Convolution along the time axis with kernel `w: (Cout, Cin, K)`,
    /// dilation `d` and symmetric zero padding `d·(K−1)/2`, so `T` is kept.
    /// The joint axis is untouched. `K` must be odd.
    pub fn temporal_conv(&self, w: &Tensor, bias: Option<&Tensor>, dilation: usize) -> Result<Tensor> {
        const OP: &str = "temporal_conv";
        let (n, cin, t, v) = nctv(OP, self.shape())?;
        let &[cout, wcin, k] = w.shape() else {
            return Err(mismatch(OP, self.shape(), w.shape()));
        };
        if wcin != cin {
            return Err(mismatch(OP, self.shape(), w.shape()));
        }
        if k % 2 == 0 {
            return Err(TensorError::Invalid {
                op: OP,
                msg: format!("kernel size must be odd, got {k}"),
            });
        }
        if dilation == 0 {
            return Err(TensorError::Invalid {
                op: OP,
                msg: "dilation must be at least 1".into(),
            });
        }
        check_bias(OP, bias, cout)?;
        let plane = t * v;
        let taps = tap_ranges(k, dilation, t);
        let mut out = vec![0.0; n * cout * plane];
        {
            let (f, wd) = (self.data(), w.data());
            for s in 0..n {
                for tap in &taps {
                    gemm(
                        cout,
                        cin,
                        tap.len * v,
                        MatRef::new(&wd, tap.k, cin * k, k),
                        MatRef::new(&f, s * cin * plane + tap.src * v, plane, 1),
                        1.0,
                        MatMut::new(&mut out, s * cout * plane + tap.dst * v, plane, 1),
                    );
                }
            }
        }
        if let Some(b) = bias {
            add_bias(&mut out, &b.data(), n, plane);
        }
        let shape = with_channels(self.shape(), cout);
        let (f, wt) = (self.clone(), w.clone());
        let mut parents = vec![self, w];
        parents.extend(bias);
        Tensor::from_op(OP, out, shape, &parents, move |g, needs| {
            let gf = needs[0].then(|| {
                let wd = wt.data();
                let mut gf = vec![0.0; n * cin * plane];
                for s in 0..n {
                    for tap in &taps {
                        gemm(
                            cin,
                            cout,
                            tap.len * v,
                            MatRef::new(&wd, tap.k, k, cin * k),
                            MatRef::new(g, s * cout * plane + tap.dst * v, plane, 1),
                            1.0,
                            MatMut::new(&mut gf, s * cin * plane + tap.src * v, plane, 1),
                        );
                    }
                }
                gf
            });
            let gw = needs[1].then(|| {
                let fd = f.data();
                let mut gw = vec![0.0; cout * cin * k];
                for s in 0..n {
                    for tap in &taps {
                        gemm(
                            cout,
                            tap.len * v,
                            cin,
                            MatRef::new(g, s * cout * plane + tap.dst * v, plane, 1),
                            MatRef::new(&fd, s * cin * plane + tap.src * v, 1, plane),
                            1.0,
                            MatMut::new(&mut gw, tap.k, cin * k, k),
                        );
                    }
                }
                gw
            });
            let mut grads = vec![gf, gw];
            if needs.len() == 3 {
                grads.push(needs[2].then(|| bias_grad(g, n, cout, plane)));
            }
            grads
        })
    }

    /// Sliding maximum over time (window `k`, stride 1, padding `k/2`).
    /// Padding never wins; the gradient goes to the first maximal frame.
    pub fn maxpool_temporal(&self, k: usize) -> Result<Tensor> {
        const OP: &str = "maxpool_temporal";
        let (n, c, t, v) = nctv(OP, self.shape())?;
        if k % 2 == 0 {
            return Err(TensorError::Invalid {
                op: OP,
                msg: format!("window must be odd, got {k}"),
            });
        }
        let half = k / 2;
        let plane = t * v;
        let total = n * c * plane;
        let mut out = vec![0.0; total];
        let mut argmax = vec![0u32; total];
        {
            let f = self.data();
            for block in 0..n * c {
                let base = block * plane;
                for ti in 0..t {
                    let lo = ti.saturating_sub(half);
                    let hi = (ti + half).min(t - 1);
                    for vi in 0..v {
                        let mut best = base + lo * v + vi;
                        for tau in lo + 1..=hi {
                            let idx = base + tau * v + vi;
                            if f[idx] > f[best] {
                                best = idx;
                            }
                        }
                        let o = base + ti * v + vi;
                        out[o] = f[best];
                        argmax[o] = best as u32;
                    }
                }
            }
        }
        Tensor::from_op(OP, out, self.shape().to_vec(), &[self], move |g, _| {
            let mut gf = vec![0.0; total];
            for (o, &src) in argmax.iter().enumerate() {
                gf[src as usize] += g[o];
            }
            vec![Some(gf)]
        })
    }
}

/// One kernel tap: output frames `dst..dst+len` read input frames `src..src+len`.
struct Tap {
    k: usize,
    src: usize,
    dst: usize,
    len: usize,
}

fn tap_ranges(k: usize, dilation: usize, t: usize) -> Vec<Tap> {
    let half = (k / 2) as isize;
    (0..k)
        .filter_map(|tap| {
            let offset = (tap as isize - half) * dilation as isize;
            let dst = offset.min(0).unsigned_abs();
            let end = (t as isize).min(t as isize - offset);
            let len = end - dst as isize;
            (len > 0).then(|| Tap {
                k: tap,
                src: (dst as isize + offset) as usize,
                dst,
                len: len as usize,
            })
        })
        .collect()
}
