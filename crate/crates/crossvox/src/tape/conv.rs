//! Strided/dilated 1-D and 2-D convolutions plus their transposed variants,
//! implemented as im2col + matmul. Backward passes recompute the column
//! matrices instead of caching them, keeping per-node memory flat.
//!
//! Layouts: inputs are [C, L] or [C, H, W] (no batch axis; batching is done
//! by building one graph per sample). Conv weights are [Cout, Cin, K...],
//! transposed-conv weights are [Cin, Cout, K...]. Padding is symmetric zeros.

use ndarray::{Array1, Array2, ArrayD, Axis};

use super::{as_2d, Graph, Var};

pub(crate) fn conv1d_out_len(l: usize, k: usize, stride: usize, dilation: usize, pad: usize) -> usize {
    (l + 2 * pad - dilation * (k - 1) - 1) / stride + 1
}

fn im2col_1d(
    x: &ArrayD<f64>,
    k: usize,
    stride: usize,
    dilation: usize,
    pad: usize,
) -> Array2<f64> {
    let (c_in, l) = (x.shape()[0], x.shape()[1]);
    let l_out = conv1d_out_len(l, k, stride, dilation, pad);
    let xs = x.as_slice().expect("contiguous input");
    let mut col = Array2::zeros((c_in * k, l_out));
    for ci in 0..c_in {
        let row_base = ci * k;
        let src = &xs[ci * l..(ci + 1) * l];
        for kk in 0..k {
            let mut row = col.row_mut(row_base + kk);
            let row = row.as_slice_mut().unwrap();
            let offset = kk * dilation as isize as usize; // kk * dilation
            for (o, slot) in row.iter_mut().enumerate() {
                let pos = (o * stride + offset) as isize - pad as isize;
                if pos >= 0 && (pos as usize) < l {
                    *slot = src[pos as usize];
                }
            }
        }
    }
    col
}

fn col2im_1d(
    col: &Array2<f64>,
    c_in: usize,
    l: usize,
    k: usize,
    stride: usize,
    dilation: usize,
    pad: usize,
) -> ArrayD<f64> {
    let l_out = col.ncols();
    let mut x = Array2::<f64>::zeros((c_in, l));
    for ci in 0..c_in {
        for kk in 0..k {
            let row = col.row(ci * k + kk);
            let row = row.as_slice().unwrap();
            let dst = x.row_mut(ci);
            let dst = dst.into_slice().unwrap();
            for (o, &v) in row.iter().enumerate() {
                let pos = (o * stride + kk * dilation) as isize - pad as isize;
                if pos >= 0 && (pos as usize) < l {
                    dst[pos as usize] += v;
                }
            }
        }
    }
    x.into_dyn()
}

fn im2col_2d(x: &ArrayD<f64>, k: usize, stride: usize, pad: usize) -> Array2<f64> {
    let (c_in, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let h_out = conv1d_out_len(h, k, stride, 1, pad);
    let w_out = conv1d_out_len(w, k, stride, 1, pad);
    let xs = x.as_slice().expect("contiguous input");
    let mut col = Array2::zeros((c_in * k * k, h_out * w_out));
    for ci in 0..c_in {
        let plane = &xs[ci * h * w..(ci + 1) * h * w];
        for kh in 0..k {
            for kw in 0..k {
                let mut row = col.row_mut((ci * k + kh) * k + kw);
                let row = row.as_slice_mut().unwrap();
                for oh in 0..h_out {
                    let ih = (oh * stride + kh) as isize - pad as isize;
                    if ih < 0 || ih as usize >= h {
                        continue;
                    }
                    let src_row = &plane[ih as usize * w..(ih as usize + 1) * w];
                    let dst_row = &mut row[oh * w_out..(oh + 1) * w_out];
                    for (ow, slot) in dst_row.iter_mut().enumerate() {
                        let iw = (ow * stride + kw) as isize - pad as isize;
                        if iw >= 0 && (iw as usize) < w {
                            *slot = src_row[iw as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

fn col2im_2d(
    col: &Array2<f64>,
    c_in: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> ArrayD<f64> {
    let h_out = conv1d_out_len(h, k, stride, 1, pad);
    let w_out = conv1d_out_len(w, k, stride, 1, pad);
    let mut x = vec![0.0f64; c_in * h * w];
    for ci in 0..c_in {
        let plane = &mut x[ci * h * w..(ci + 1) * h * w];
        for kh in 0..k {
            for kw in 0..k {
                let row = col.row((ci * k + kh) * k + kw);
                let row = row.as_slice().unwrap();
                for oh in 0..h_out {
                    let ih = (oh * stride + kh) as isize - pad as isize;
                    if ih < 0 || ih as usize >= h {
                        continue;
                    }
                    let src_row = &row[oh * w_out..(oh + 1) * w_out];
                    for (ow, &v) in src_row.iter().enumerate() {
                        let iw = (ow * stride + kw) as isize - pad as isize;
                        if iw >= 0 && (iw as usize) < w {
                            plane[ih as usize * w + iw as usize] += v;
                        }
                    }
                }
            }
        }
    }
    ArrayD::from_shape_vec(ndarray::IxDyn(&[c_in, h, w]), x).unwrap()
}

fn add_bias_rows(y: &mut Array2<f64>, b: &ArrayD<f64>) {
    for (mut row, &bv) in y.rows_mut().into_iter().zip(b.iter()) {
        row += bv;
    }
}

impl Graph {
    /// conv1d: x [Cin, L], w [Cout, Cin, K], b [Cout] -> [Cout, L_out]
    pub fn conv1d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        dilation: usize,
        pad: usize,
    ) -> Var {
        let xv = &self.values[x.0];
        let wv = &self.values[w.0];
        let (c_out, c_in, k) = (wv.shape()[0], wv.shape()[1], wv.shape()[2]);
        assert_eq!(xv.shape()[0], c_in, "conv1d channel mismatch");
        let l = xv.shape()[1];
        let l_out = conv1d_out_len(l, k, stride, dilation, pad);

        let col = im2col_1d(xv, k, stride, dilation, pad);
        let w2 = wv.view().into_shape_with_order((c_out, c_in * k)).unwrap().to_owned();
        let mut y = w2.dot(&col);
        add_bias_rows(&mut y, &self.values[b.0]);

        let (xi, wi, bi) = (x.0, w.0, b.0);
        let (x_needs, w_needs) = (self.needs_grad[x.0], self.needs_grad[w.0]);
        self.push_op(
            y.into_shape_with_order(ndarray::IxDyn(&[c_out, l_out])).unwrap(),
            &[x, w, b],
            Box::new(move |values, g, sink| {
                let g2 = as_2d(g);
                let wv = &values[wi];
                let w2 = wv.view().into_shape_with_order((c_out, c_in * k)).unwrap();
                if x_needs {
                    let dcol = w2.t().dot(&g2);
                    sink(xi, col2im_1d(&dcol, c_in, l, k, stride, dilation, pad));
                }
                if w_needs {
                    let col = im2col_1d(&values[xi], k, stride, dilation, pad);
                    let dw = g2.dot(&col.t());
                    sink(wi, dw.into_shape_with_order(ndarray::IxDyn(&[c_out, c_in, k])).unwrap());
                    sink(bi, g2.sum_axis(Axis(1)).into_dyn());
                }
            }),
        )
    }

    /// conv_transpose1d: x [Cin, L], w [Cin, Cout, K], b [Cout] -> [Cout, L_out]
    /// with L_out = (L-1)*stride + K - 2*pad.
    pub fn conv_transpose1d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Var {
        let xv = &self.values[x.0];
        let wv = &self.values[w.0];
        let (c_in, c_out, k) = (wv.shape()[0], wv.shape()[1], wv.shape()[2]);
        assert_eq!(xv.shape()[0], c_in, "conv_transpose1d channel mismatch");
        let l = xv.shape()[1];
        let l_out = (l - 1) * stride + k - 2 * pad;

        let x2 = as_2d(xv);
        let w2 = wv.view().into_shape_with_order((c_in, c_out * k)).unwrap().to_owned();
        let cols = w2.t().dot(&x2); // [Cout*K, L]
        let mut y = col2im_1d(&cols, c_out, l_out, k, stride, 1, pad)
            .into_dimensionality::<ndarray::Ix2>()
            .unwrap();
        add_bias_rows(&mut y, &self.values[b.0]);

        let (xi, wi, bi) = (x.0, w.0, b.0);
        let (x_needs, w_needs) = (self.needs_grad[x.0], self.needs_grad[w.0]);
        self.push_op(
            y.into_dyn(),
            &[x, w, b],
            Box::new(move |values, g, sink| {
                // forward was col2im, so backward gathers with im2col
                let gcol = im2col_1d(g, k, stride, 1, pad); // [Cout*K, L]
                if x_needs {
                    let wv = &values[wi];
                    let w2 = wv.view().into_shape_with_order((c_in, c_out * k)).unwrap();
                    sink(xi, w2.dot(&gcol).into_dyn());
                }
                if w_needs {
                    let x2 = as_2d(&values[xi]);
                    let dw = x2.dot(&gcol.t()); // [Cin, Cout*K]
                    sink(wi, dw.into_shape_with_order(ndarray::IxDyn(&[c_in, c_out, k])).unwrap());
                    let db: Array1<f64> = as_2d(g).sum_axis(Axis(1));
                    sink(bi, db.into_dyn());
                }
            }),
        )
    }

    /// conv2d: x [Cin, H, W], w [Cout, Cin, K, K], b [Cout] -> [Cout, H_out, W_out]
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Var {
        let xv = &self.values[x.0];
        let wv = &self.values[w.0];
        let (c_out, c_in, k) = (wv.shape()[0], wv.shape()[1], wv.shape()[2]);
        assert_eq!(wv.shape()[3], k, "square kernels only");
        assert_eq!(xv.shape()[0], c_in, "conv2d channel mismatch");
        let (h, wd) = (xv.shape()[1], xv.shape()[2]);
        let h_out = conv1d_out_len(h, k, stride, 1, pad);
        let w_out = conv1d_out_len(wd, k, stride, 1, pad);

        let col = im2col_2d(xv, k, stride, pad);
        let w2 = wv.view().into_shape_with_order((c_out, c_in * k * k)).unwrap().to_owned();
        let mut y = w2.dot(&col);
        add_bias_rows(&mut y, &self.values[b.0]);

        let (xi, wi, bi) = (x.0, w.0, b.0);
        let (x_needs, w_needs) = (self.needs_grad[x.0], self.needs_grad[w.0]);
        self.push_op(
            y.into_shape_with_order(ndarray::IxDyn(&[c_out, h_out, w_out])).unwrap(),
            &[x, w, b],
            Box::new(move |values, g, sink| {
                let g2 = g.view().into_shape_with_order((c_out, h_out * w_out)).unwrap();
                if x_needs {
                    let wv = &values[wi];
                    let w2 = wv.view().into_shape_with_order((c_out, c_in * k * k)).unwrap();
                    let dcol = w2.t().dot(&g2);
                    sink(xi, col2im_2d(&dcol, c_in, h, wd, k, stride, pad));
                }
                if w_needs {
                    let col = im2col_2d(&values[xi], k, stride, pad);
                    let dw = g2.dot(&col.t());
                    sink(
                        wi,
                        dw.into_shape_with_order(ndarray::IxDyn(&[c_out, c_in, k, k])).unwrap(),
                    );
                    sink(bi, g2.sum_axis(Axis(1)).into_dyn());
                }
            }),
        )
    }

    /// conv_transpose2d: x [Cin, H, W], w [Cin, Cout, K, K], b [Cout]
    /// -> [Cout, (H-1)*stride + K - 2*pad, ...]
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Var {
        let xv = &self.values[x.0];
        let wv = &self.values[w.0];
        let (c_in, c_out, k) = (wv.shape()[0], wv.shape()[1], wv.shape()[2]);
        assert_eq!(xv.shape()[0], c_in, "conv_transpose2d channel mismatch");
        let (h, wd) = (xv.shape()[1], xv.shape()[2]);
        let h_out = (h - 1) * stride + k - 2 * pad;
        let w_out = (wd - 1) * stride + k - 2 * pad;

        let x2 = xv.view().into_shape_with_order((c_in, h * wd)).unwrap();
        let w2 = wv.view().into_shape_with_order((c_in, c_out * k * k)).unwrap().to_owned();
        let cols = w2.t().dot(&x2); // [Cout*K*K, H*W]
        let y3 = col2im_2d(&cols, c_out, h_out, w_out, k, stride, pad);
        let mut y = y3.into_shape_with_order((c_out, h_out * w_out)).unwrap();
        add_bias_rows(&mut y, &self.values[b.0]);

        let (xi, wi, bi) = (x.0, w.0, b.0);
        let (x_needs, w_needs) = (self.needs_grad[x.0], self.needs_grad[w.0]);
        self.push_op(
            y.into_shape_with_order(ndarray::IxDyn(&[c_out, h_out, w_out])).unwrap(),
            &[x, w, b],
            Box::new(move |values, g, sink| {
                let gcol = im2col_2d(g, k, stride, pad); // [Cout*K*K, H*W]
                if x_needs {
                    let wv = &values[wi];
                    let w2 = wv.view().into_shape_with_order((c_in, c_out * k * k)).unwrap();
                    let dx = w2.dot(&gcol);
                    sink(xi, dx.into_shape_with_order(ndarray::IxDyn(&[c_in, h, wd])).unwrap());
                }
                if w_needs {
                    let x2 = values[xi].view().into_shape_with_order((c_in, h * wd)).unwrap();
                    let dw = x2.dot(&gcol.t()); // [Cin, Cout*K*K]
                    sink(
                        wi,
                        dw.into_shape_with_order(ndarray::IxDyn(&[c_in, c_out, k, k])).unwrap(),
                    );
                    let db = g
                        .view()
                        .into_shape_with_order((c_out, h_out * w_out))
                        .unwrap()
                        .sum_axis(Axis(1));
                    sink(bi, db.into_dyn());
                }
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use crate::tape::{finite_difference, relative_error};

    fn rand_arr(shape: &[usize], seed: u64) -> ArrayD<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ArrayD::from_shape_fn(IxDyn(shape), |_| rng.gen_range(-1.0..1.0))
    }

    /// Direct O(everything) conv1d used as an independent oracle.
    fn naive_conv1d(
        x: &ArrayD<f64>,
        w: &ArrayD<f64>,
        b: &ArrayD<f64>,
        stride: usize,
        dilation: usize,
        pad: usize,
    ) -> ArrayD<f64> {
        let (c_out, c_in, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
        let l = x.shape()[1];
        let l_out = conv1d_out_len(l, k, stride, dilation, pad);
        let mut y = ArrayD::zeros(IxDyn(&[c_out, l_out]));
        for co in 0..c_out {
            for o in 0..l_out {
                let mut acc = b[IxDyn(&[co])];
                for ci in 0..c_in {
                    for kk in 0..k {
                        let pos = (o * stride + kk * dilation) as isize - pad as isize;
                        if pos >= 0 && (pos as usize) < l {
                            acc += x[IxDyn(&[ci, pos as usize])] * w[IxDyn(&[co, ci, kk])];
                        }
                    }
                }
                y[IxDyn(&[co, o])] = acc;
            }
        }
        y
    }

    #[test]
    fn conv1d_matches_naive_oracle() {
        for &(stride, dilation, pad) in &[(1usize, 1usize, 1usize), (2, 1, 7), (1, 4, 8)] {
            let x = rand_arr(&[3, 40], 1);
            let w = rand_arr(&[5, 3, 3], 2);
            let b = rand_arr(&[5], 3);
            let mut g = Graph::new();
            let (xv, wv, bv) = (g.leaf(x.clone()), g.leaf(w.clone()), g.leaf(b.clone()));
            let y = g.conv1d(xv, wv, bv, stride, dilation, pad);
            let want = naive_conv1d(&x, &w, &b, stride, dilation, pad);
            assert_eq!(g.value(y).shape(), want.shape());
            for (a, e) in g.value(y).iter().zip(want.iter()) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    /// FD-check gradients of a scalar head through one operator.
    fn fd_check_op(
        build: impl Fn(&mut Graph, Var, Var, Var) -> Var,
        shapes: (&[usize], &[usize], &[usize]),
        seed: u64,
    ) {
        let x = rand_arr(shapes.0, seed);
        let w = rand_arr(shapes.1, seed + 1);
        let b = rand_arr(shapes.2, seed + 2);

        let mut g = Graph::new();
        let (xv, wv, bv) = (g.leaf(x.clone()), g.leaf(w.clone()), g.leaf(b.clone()));
        let y = build(&mut g, xv, wv, bv);
        let loss = g.mean_all(y);
        let grads = g.backward(loss);

        let mut rng = ChaCha8Rng::seed_from_u64(seed + 3);
        for (name, arr, var) in [("x", &x, xv), ("w", &w, wv), ("b", &b, bv)] {
            let analytic = grads.get(var).unwrap();
            let mut eval = |perturbed: &ArrayD<f64>| {
                let mut g2 = Graph::new();
                let xs = if name == "x" { perturbed.clone() } else { x.clone() };
                let ws = if name == "w" { perturbed.clone() } else { w.clone() };
                let bs = if name == "b" { perturbed.clone() } else { b.clone() };
                let (xv2, wv2, bv2) = (g2.leaf(xs), g2.leaf(ws), g2.leaf(bs));
                let y2 = build(&mut g2, xv2, wv2, bv2);
                let l2 = g2.mean_all(y2);
                g2.scalar(l2)
            };
            for _ in 0..4 {
                let coord: Vec<usize> =
                    arr.shape().iter().map(|&s| rng.gen_range(0..s)).collect();
                let fd = finite_difference(&mut eval, arr, &coord, 1e-6);
                let an = analytic[IxDyn(&coord)];
                assert!(
                    relative_error(an, fd) < 1e-5,
                    "{name} at {coord:?}: analytic {an}, fd {fd}"
                );
            }
        }
    }

    #[test]
    fn conv1d_gradients() {
        fd_check_op(|g, x, w, b| g.conv1d(x, w, b, 2, 1, 7), (&[2, 32], &[4, 2, 15], &[4]), 10);
        fd_check_op(|g, x, w, b| g.conv1d(x, w, b, 1, 4, 4), (&[3, 30], &[3, 3, 3], &[3]), 20);
    }

    #[test]
    fn conv_transpose1d_gradients_and_shape() {
        let mut g = Graph::new();
        let x = g.leaf(rand_arr(&[4, 16], 30));
        let w = g.leaf(rand_arr(&[4, 2, 15], 31));
        let b = g.leaf(rand_arr(&[2], 32));
        let y = g.conv_transpose1d(x, w, b, 2, 7);
        assert_eq!(g.value(y).shape(), &[2, 15 * 1 + 15 * 2 - 14 + 1]); // (16-1)*2+15-14 = 31
        fd_check_op(
            |g, x, w, b| g.conv_transpose1d(x, w, b, 2, 7),
            (&[4, 16], &[4, 2, 15], &[2]),
            33,
        );
    }

    #[test]
    fn conv_transpose1d_inverts_conv_shape() {
        // stride-2 conv then stride-2 transpose recovers the length (even L)
        let mut g = Graph::new();
        let x = g.leaf(rand_arr(&[1, 64], 40));
        let w1 = g.leaf(rand_arr(&[8, 1, 15], 41));
        let b1 = g.leaf(rand_arr(&[8], 42));
        let down = g.conv1d(x, w1, b1, 2, 1, 7);
        assert_eq!(g.value(down).shape(), &[8, 32]);
        let w2 = g.leaf(rand_arr(&[8, 1, 15], 43));
        let b2 = g.leaf(rand_arr(&[1], 44));
        let up = g.conv_transpose1d(down, w2, b2, 2, 7);
        assert_eq!(g.value(up).shape(), &[1, 63]); // odd: (32-1)*2+15-14
    }

    #[test]
    fn conv2d_gradients_and_shape() {
        let mut g = Graph::new();
        let x = g.leaf(rand_arr(&[2, 16, 16], 50));
        let w = g.leaf(rand_arr(&[4, 2, 4, 4], 51));
        let b = g.leaf(rand_arr(&[4], 52));
        let y = g.conv2d(x, w, b, 2, 1);
        assert_eq!(g.value(y).shape(), &[4, 8, 8]);
        fd_check_op(|g, x, w, b| g.conv2d(x, w, b, 2, 1), (&[2, 16, 16], &[4, 2, 4, 4], &[4]), 53);
    }

    #[test]
    fn conv_transpose2d_gradients_and_shape() {
        let mut g = Graph::new();
        let x = g.leaf(rand_arr(&[4, 8, 8], 60));
        let w = g.leaf(rand_arr(&[4, 2, 4, 4], 61));
        let b = g.leaf(rand_arr(&[2], 62));
        let y = g.conv_transpose2d(x, w, b, 2, 1);
        assert_eq!(g.value(y).shape(), &[2, 16, 16]);
        fd_check_op(
            |g, x, w, b| g.conv_transpose2d(x, w, b, 2, 1),
            (&[4, 8, 8], &[4, 2, 4, 4], &[2]),
            63,
        );
    }

    #[test]
    fn dilated_conv_receptive_field_span() {
        // one-hot input through two dilated layers: nonzero output span equals
        // the receptive field 1 + sum((k-1)*d)
        let l = 101usize;
        let mut x = ArrayD::zeros(IxDyn(&[1, l]));
        x[IxDyn(&[0, 50])] = 1.0;
        let mut g = Graph::new();
        let xv = g.constant(x);
        let w1 = g.constant(ArrayD::from_elem(IxDyn(&[1, 1, 3]), 1.0));
        let b = g.constant(ArrayD::zeros(IxDyn(&[1])));
        let h1 = g.conv1d(xv, w1, b, 1, 4, 4);
        let w2 = g.constant(ArrayD::from_elem(IxDyn(&[1, 1, 3]), 1.0));
        let y = g.conv1d(h1, w2, b, 1, 8, 8);
        let nonzero: Vec<usize> = g
            .value(y)
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(i, _)| i)
            .collect();
        let span = nonzero.last().unwrap() - nonzero.first().unwrap() + 1;
        assert_eq!(span, 1 + 2 * 4 + 2 * 8);
    }
}
