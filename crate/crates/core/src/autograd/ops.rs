use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use ndarray::{concatenate, s, Array3, ArrayD, ArrayView2, ArrayView3, Axis, IxDyn, Slice, Zip};

use super::{gemm, sum_to_shape, Arr, Tensor};

fn view2(a: &Arr, rows: usize, cols: usize) -> ArrayView2<'_, f64> {
    a.view().into_shape_with_order((rows, cols)).expect("standard layout")
}

fn view3(a: &Arr, n: usize, r: usize, c: usize) -> ArrayView3<'_, f64> {
    a.view().into_shape_with_order((n, r, c)).expect("standard layout")
}

fn reshaped<D: ndarray::Dimension>(a: ndarray::Array<f64, D>, shape: &[usize]) -> Arr {
    a.into_dyn().into_shape_with_order(IxDyn(shape)).expect("element count preserved")
}

/// Row-wise softmax over the last axis, in place.
pub(crate) fn softmax_lanes(a: &mut Arr) {
    let last = Axis(a.ndim() - 1);
    for mut lane in a.lanes_mut(last) {
        let m = lane.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        lane.mapv_inplace(|v| (v - m).exp());
        let s = lane.sum();
        lane.mapv_inplace(|v| v / s);
    }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

impl<'t> Tensor<'t> {
    fn binary(self, rhs: Tensor<'t>, f: fn(f64, f64) -> f64, kind: u8) -> Tensor<'t> {
        let a = self.value();
        let b = rhs.value();
        let out = if a.shape() == b.shape() {
            Zip::from(&*a).and(&*b).map_collect(|&x, &y| f(x, y))
        } else {
            match kind {
                0 => &*a + &*b,
                1 => &*a - &*b,
                2 => &*a * &*b,
                _ => &*a / &*b,
            }
        };
        let out = out.as_standard_layout().into_owned();
        self.tape.push(out, &[self.id, rhs.id], move || {
            move |g: &Arr, need: &[bool]| {
                let ga = need[0].then(|| {
                    let full = match kind {
                        0 | 1 => g.clone(),
                        2 => g * &*b,
                        _ => g / &*b,
                    };
                    sum_to_shape(full, a.shape())
                });
                let gb = need[1].then(|| {
                    let full = match kind {
                        0 => g.clone(),
                        1 => -g,
                        2 => g * &*a,
                        _ => -(g * &*a) / (&*b * &*b),
                    };
                    sum_to_shape(full.as_standard_layout().into_owned(), b.shape())
                });
                vec![ga, gb]
            }
        })
    }

    pub fn add(self, rhs: Tensor<'t>) -> Tensor<'t> {
        self.binary(rhs, |x, y| x + y, 0)
    }

    pub fn sub(self, rhs: Tensor<'t>) -> Tensor<'t> {
        self.binary(rhs, |x, y| x - y, 1)
    }

    pub fn mul(self, rhs: Tensor<'t>) -> Tensor<'t> {
        self.binary(rhs, |x, y| x * y, 2)
    }

    pub fn div(self, rhs: Tensor<'t>) -> Tensor<'t> {
        self.binary(rhs, |x, y| x / y, 3)
    }

    pub fn add_scalar(self, c: f64) -> Tensor<'t> {
        let out = self.value().mapv(|v| v + c);
        self.tape.push(out, &[self.id], || |g: &Arr, _: &[bool]| vec![Some(g.clone())])
    }

    pub fn mul_scalar(self, c: f64) -> Tensor<'t> {
        let out = self.value().mapv(|v| v * c);
        self.tape.push(out, &[self.id], move || move |g: &Arr, _: &[bool]| vec![Some(g * c)])
    }

    /// Elementwise op whose derivative is a function of input and output.
    fn unary(self, f: impl Fn(f64) -> f64, df: fn(f64, f64) -> f64) -> Tensor<'t> {
        let x = self.value();
        let y = Arc::new(x.mapv(f));
        let out = (*y).clone();
        self.tape.push(out, &[self.id], move || {
            move |g: &Arr, _: &[bool]| {
                let mut d = g.clone();
                Zip::from(&mut d).and(&*x).and(&*y).for_each(|d, &x, &y| *d *= df(x, y));
                vec![Some(d)]
            }
        })
    }

    pub fn neg(self) -> Tensor<'t> {
        self.mul_scalar(-1.0)
    }

    pub fn exp(self) -> Tensor<'t> {
        self.unary(f64::exp, |_, y| y)
    }

    pub fn tanh(self) -> Tensor<'t> {
        self.unary(f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn sigmoid(self) -> Tensor<'t> {
        self.unary(|v| 1.0 / (1.0 + (-v).exp()), |_, y| y * (1.0 - y))
    }

    pub fn relu(self) -> Tensor<'t> {
        self.unary(|v| v.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(self) -> Tensor<'t> {
        self.unary(gelu, |x, _| gelu_grad(x))
    }

    /// ELU with alpha = 1.
    pub fn elu(self) -> Tensor<'t> {
        self.unary(|v| if v > 0.0 { v } else { v.exp_m1() }, |x, y| if x > 0.0 { 1.0 } else { y + 1.0 })
    }

    pub fn square(self) -> Tensor<'t> {
        self.unary(|v| v * v, |x, _| 2.0 * x)
    }

    pub fn abs(self) -> Tensor<'t> {
        self.unary(f64::abs, |x, _| x.signum())
    }

    /// Softmax over the last axis.
    pub fn softmax(self) -> Tensor<'t> {
        let mut y = (*self.value()).clone();
        softmax_lanes(&mut y);
        let y = Arc::new(y);
        let out = (*y).clone();
        self.tape.push(out, &[self.id], move || {
            move |g: &Arr, _: &[bool]| {
                let last = Axis(g.ndim() - 1);
                let gy = g * &*y;
                let dot = gy.sum_axis(last).insert_axis(last);
                vec![Some(&gy - &(&*y * &dot))]
            }
        })
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`
    /// (both of the last-axis length).
    pub fn layer_norm(self, gamma: Tensor<'t>, beta: Tensor<'t>, eps: f64) -> Tensor<'t> {
        let x = self.value();
        let d = *x.shape().last().unwrap();
        let rows = x.len() / d;
        let gv = gamma.value();
        let bv = beta.value();
        assert_eq!(gv.shape(), [d], "layer_norm gamma shape");
        let x2 = view2(&x, rows, d);
        let mut xhat = ndarray::Array2::<f64>::zeros((rows, d));
        let mut inv = vec![0.0; rows];
        for (r, row) in x2.outer_iter().enumerate() {
            let mean = row.sum() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv[r] = is;
            xhat.row_mut(r).zip_mut_with(&row, |h, &v| *h = (v - mean) * is);
        }
        let gv1 = gv.view().into_shape_with_order(d).unwrap().to_owned();
        let bv1 = bv.view().into_shape_with_order(d).unwrap().to_owned();
        let y = &xhat * &gv1 + &bv1;
        let shape = x.shape().to_vec();
        let out = reshaped(y, &shape);
        self.tape.push(out, &[self.id, gamma.id, beta.id], move || {
            move |g: &Arr, need: &[bool]| {
                let g2 = view2(g, rows, d);
                let gx = need[0].then(|| {
                    let mut dx = ndarray::Array2::<f64>::zeros((rows, d));
                    for r in 0..rows {
                        let dh: Vec<f64> = (0..d).map(|j| g2[[r, j]] * gv1[j]).collect();
                        let m1 = dh.iter().sum::<f64>() / d as f64;
                        let m2 = (0..d).map(|j| dh[j] * xhat[[r, j]]).sum::<f64>() / d as f64;
                        for j in 0..d {
                            dx[[r, j]] = inv[r] * (dh[j] - m1 - xhat[[r, j]] * m2);
                        }
                    }
                    reshaped(dx, &shape)
                });
                let ggamma = need[1].then(|| (&g2 * &xhat).sum_axis(Axis(0)).into_dyn());
                let gbeta = need[2].then(|| g2.sum_axis(Axis(0)).into_dyn());
                vec![gx, ggamma, gbeta]
            }
        })
    }

    pub fn sum(self) -> Tensor<'t> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let out = ArrayD::from_elem(IxDyn(&[]), x.sum());
        self.tape.push(out, &[self.id], move || {
            move |g: &Arr, _: &[bool]| vec![Some(ArrayD::from_elem(IxDyn(&shape), g.sum()))]
        })
    }

    pub fn mean(self) -> Tensor<'t> {
        let n = self.value().len() as f64;
        self.sum().mul_scalar(1.0 / n)
    }

    pub fn sum_axis(self, axis: usize, keepdim: bool) -> Tensor<'t> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let mut out = x.sum_axis(Axis(axis));
        if keepdim {
            out = out.insert_axis(Axis(axis));
        }
        self.tape.push(out, &[self.id], move || {
            move |g: &Arr, _: &[bool]| {
                let g = if keepdim { g.clone() } else { g.clone().insert_axis(Axis(axis)) };
                let full = g.broadcast(IxDyn(&shape)).expect("broadcast back").to_owned();
                vec![Some(full)]
            }
        })
    }

    pub fn mean_axis(self, axis: usize, keepdim: bool) -> Tensor<'t> {
        let n = self.dim(axis) as f64;
        self.sum_axis(axis, keepdim).mul_scalar(1.0 / n)
    }

    /// Matrix product over the last two axes. `rhs` is either 2-D (shared
    /// across all leading axes of `self`) or has the same leading axes.
    pub fn matmul(self, rhs: Tensor<'t>) -> Tensor<'t> {
        let a = self.value();
        let b = rhs.value();
        let p = self.tape.precision;
        let (ash, bsh) = (a.shape().to_vec(), b.shape().to_vec());
        assert!(ash.len() >= 2 && bsh.len() >= 2, "matmul needs >= 2-D operands, got {ash:?} @ {bsh:?}");
        let (m, k) = (ash[ash.len() - 2], ash[ash.len() - 1]);
        let n = bsh[bsh.len() - 1];
        assert_eq!(k, bsh[bsh.len() - 2], "matmul inner dims {ash:?} @ {bsh:?}");
        let mut out_shape = ash[..ash.len() - 1].to_vec();
        out_shape.push(n);

        if bsh.len() == 2 {
            let rows = a.len() / k;
            let out = reshaped(gemm(view2(&a, rows, k), view2(&b, k, n), p), &out_shape);
            return self.tape.push(out, &[self.id, rhs.id], move || {
                move |g: &Arr, need: &[bool]| {
                    let g2 = view2(g, rows, n);
                    let ga = need[0].then(|| reshaped(gemm(g2, view2(&b, k, n).t(), p), &ash));
                    let gb = need[1].then(|| gemm(view2(&a, rows, k).t(), g2, p).into_dyn());
                    vec![ga, gb]
                }
            });
        }

        assert_eq!(ash[..ash.len() - 2], bsh[..bsh.len() - 2], "matmul batch dims {ash:?} @ {bsh:?}");
        let nb: usize = ash[..ash.len() - 2].iter().product();
        let mut out = Array3::<f64>::zeros((nb, m, n));
        {
            let (a3, b3) = (view3(&a, nb, m, k), view3(&b, nb, k, n));
            for i in 0..nb {
                out.slice_mut(s![i, .., ..]).assign(&gemm(a3.index_axis(Axis(0), i), b3.index_axis(Axis(0), i), p));
            }
        }
        self.tape.push(reshaped(out, &out_shape), &[self.id, rhs.id], move || {
            move |g: &Arr, need: &[bool]| {
                let g3 = view3(g, nb, m, n);
                let (a3, b3) = (view3(&a, nb, m, k), view3(&b, nb, k, n));
                let ga = need[0].then(|| {
                    let mut ga = Array3::<f64>::zeros((nb, m, k));
                    for i in 0..nb {
                        ga.slice_mut(s![i, .., ..])
                            .assign(&gemm(g3.index_axis(Axis(0), i), b3.index_axis(Axis(0), i).t(), p));
                    }
                    reshaped(ga, &ash)
                });
                let gb = need[1].then(|| {
                    let mut gb = Array3::<f64>::zeros((nb, k, n));
                    for i in 0..nb {
                        gb.slice_mut(s![i, .., ..])
                            .assign(&gemm(a3.index_axis(Axis(0), i).t(), g3.index_axis(Axis(0), i), p));
                    }
                    reshaped(gb, &bsh)
                });
                vec![ga, gb]
            }
        })
    }

    /// Scaled dot-product attention `softmax(q kᵀ · scale + mask) v` over the
    /// last two axes. `mask` is additive with shape `[Lq, Lk]`.
    pub fn attention(self, k: Tensor<'t>, v: Tensor<'t>, mask: Option<Arc<Arr>>, scale: f64) -> Tensor<'t> {
        let (qv, kv, vv) = (self.value(), k.value(), v.value());
        let p = self.tape.precision;
        let qs = qv.shape().to_vec();
        let nd = qs.len();
        assert!(nd >= 2);
        let (lq, d) = (qs[nd - 2], qs[nd - 1]);
        let lk = kv.shape()[nd - 2];
        let dv = vv.shape()[nd - 1];
        assert_eq!(kv.shape()[nd - 1], d, "attention key width");
        assert_eq!(vv.shape()[nd - 2], lk, "attention value length");
        let nb = qv.len() / (lq * d);
        if let Some(m) = &mask {
            assert_eq!(m.shape(), [lq, lk], "attention mask shape");
        }
        let (q3, k3, v3) = (view3(&qv, nb, lq, d), view3(&kv, nb, lk, d), view3(&vv, nb, lk, dv));
        let mut probs = Array3::<f64>::zeros((nb, lq, lk));
        let mut out = Array3::<f64>::zeros((nb, lq, dv));
        for i in 0..nb {
            let mut sc = gemm(q3.index_axis(Axis(0), i), k3.index_axis(Axis(0), i).t(), p) * scale;
            if let Some(m) = &mask {
                sc += &view2(m, lq, lk);
            }
            let mut sc = sc.into_dyn();
            softmax_lanes(&mut sc);
            let sc = sc.into_dimensionality::<ndarray::Ix2>().unwrap();
            out.slice_mut(s![i, .., ..]).assign(&gemm(sc.view(), v3.index_axis(Axis(0), i), p));
            probs.slice_mut(s![i, .., ..]).assign(&sc);
        }
        let mut out_shape = qs.clone();
        out_shape[nd - 1] = dv;
        let (ks, vs) = (kv.shape().to_vec(), vv.shape().to_vec());
        self.tape.push(reshaped(out, &out_shape), &[self.id, k.id, v.id], move || {
            move |g: &Arr, need: &[bool]| {
                let g3 = view3(g, nb, lq, dv);
                let (q3, k3, v3) = (view3(&qv, nb, lq, d), view3(&kv, nb, lk, d), view3(&vv, nb, lk, dv));
                let mut gq = Array3::<f64>::zeros((nb, lq, d));
                let mut gk = Array3::<f64>::zeros((nb, lk, d));
                let mut gv = Array3::<f64>::zeros((nb, lk, dv));
                for i in 0..nb {
                    let pi = probs.index_axis(Axis(0), i);
                    let gi = g3.index_axis(Axis(0), i);
                    if need[2] {
                        gv.slice_mut(s![i, .., ..]).assign(&gemm(pi.t(), gi, p));
                    }
                    if need[0] || need[1] {
                        let dp = gemm(gi, v3.index_axis(Axis(0), i).t(), p);
                        let mut ds = &dp * &pi;
                        let rowdot = ds.sum_axis(Axis(1)).insert_axis(Axis(1));
                        ds -= &(&pi * &rowdot);
                        ds *= scale;
                        if need[0] {
                            gq.slice_mut(s![i, .., ..]).assign(&gemm(ds.view(), k3.index_axis(Axis(0), i), p));
                        }
                        if need[1] {
                            gk.slice_mut(s![i, .., ..]).assign(&gemm(ds.t(), q3.index_axis(Axis(0), i), p));
                        }
                    }
                }
                vec![
                    need[0].then(|| reshaped(gq, &qs)),
                    need[1].then(|| reshaped(gk, &ks)),
                    need[2].then(|| reshaped(gv, &vs)),
                ]
            }
        })
    }

    pub fn reshape(self, shape: &[usize]) -> Tensor<'t> {
        let x = self.value();
        let old = x.shape().to_vec();
        assert_eq!(x.len(), shape.iter().product::<usize>(), "reshape {old:?} -> {shape:?}");
        let out = reshaped((*x).clone(), shape);
        self.tape.push(out, &[self.id], move || move |g: &Arr, _: &[bool]| vec![Some(reshaped(g.clone(), &old))])
    }

    pub fn permute(self, axes: &[usize]) -> Tensor<'t> {
        let x = self.value();
        let out = x.view().permuted_axes(IxDyn(axes)).as_standard_layout().into_owned();
        let mut inverse = vec![0; axes.len()];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        self.tape.push(out, &[self.id], move || {
            move |g: &Arr, _: &[bool]| {
                vec![Some(g.view().permuted_axes(IxDyn(&inverse)).as_standard_layout().into_owned())]
            }
        })
    }

    /// Swaps two axes.
    pub fn transpose(self, a: usize, b: usize) -> Tensor<'t> {
        let mut axes: Vec<usize> = (0..self.ndim()).collect();
        axes.swap(a, b);
        self.permute(&axes)
    }

    pub fn unsqueeze(self, axis: usize) -> Tensor<'t> {
        let mut shape = self.shape();
        shape.insert(axis, 1);
        self.reshape(&shape)
    }

    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Tensor<'t> {
        let x = self.value();
        let shape = x.shape().to_vec();
        assert!(start + len <= shape[axis], "narrow {start}+{len} beyond {shape:?} axis {axis}");
        let out = x.slice_axis(Axis(axis), Slice::from(start..start + len)).as_standard_layout().into_owned();
        self.tape.push(out, &[self.id], move || {
            move |g: &Arr, _: &[bool]| {
                let mut full = ArrayD::zeros(IxDyn(&shape));
                full.slice_axis_mut(Axis(axis), Slice::from(start..start + len)).assign(g);
                vec![Some(full)]
            }
        })
    }

    pub fn concat(parts: &[Tensor<'t>], axis: usize) -> Tensor<'t> {
        assert!(!parts.is_empty(), "concat of nothing");
        let tape = parts[0].tape;
        let values: Vec<Arc<Arr>> = parts.iter().map(|t| t.value()).collect();
        let views: Vec<_> = values.iter().map(|v| v.view()).collect();
        let out = concatenate(Axis(axis), &views).expect("concat shapes").as_standard_layout().into_owned();
        let sizes: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
        let ids: Vec<usize> = parts.iter().map(|t| t.id).collect();
        tape.push(out, &ids, move || {
            move |g: &Arr, need: &[bool]| {
                let mut start = 0;
                sizes
                    .iter()
                    .zip(need)
                    .map(|(&len, &n)| {
                        let piece = n.then(|| {
                            g.slice_axis(Axis(axis), Slice::from(start..start + len)).as_standard_layout().into_owned()
                        });
                        start += len;
                        piece
                    })
                    .collect()
            }
        })
    }

    /// Gathers entries along `axis`; indices may repeat.
    pub fn index_select(self, axis: usize, indices: &[usize]) -> Tensor<'t> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let out = x.select(Axis(axis), indices).as_standard_layout().into_owned();
        let indices = indices.to_vec();
        self.tape.push(out, &[self.id], move || {
            move |g: &Arr, _: &[bool]| {
                let mut full = ArrayD::zeros(IxDyn(&shape));
                for (j, &i) in indices.iter().enumerate() {
                    let mut dst = full.index_axis_mut(Axis(axis), i);
                    dst += &g.index_axis(Axis(axis), j);
                }
                vec![Some(full)]
            }
        })
    }
}

impl<'t> Add for Tensor<'t> {
    type Output = Tensor<'t>;
    fn add(self, rhs: Self) -> Self::Output {
        Tensor::add(self, rhs)
    }
}

impl<'t> Sub for Tensor<'t> {
    type Output = Tensor<'t>;
    fn sub(self, rhs: Self) -> Self::Output {
        Tensor::sub(self, rhs)
    }
}

impl<'t> Mul for Tensor<'t> {
    type Output = Tensor<'t>;
    fn mul(self, rhs: Self) -> Self::Output {
        Tensor::mul(self, rhs)
    }
}

impl<'t> Neg for Tensor<'t> {
    type Output = Tensor<'t>;
    fn neg(self) -> Self::Output {
        Tensor::neg(self)
    }
}
