//! Minimal reverse-mode autodiff over `ndarray` f64 tensors.
//!
//! Define-by-run: every op appends a node to a [`Graph`] and records a
//! closure that maps the node's output gradient to contributions on its
//! parents. Graphs are built per training step (or per sample) and dropped;
//! a [`Gradients`] table is produced by [`Graph::backward`].
//!
//! Gradient propagation is skipped through subtrees whose leaves were
//! inserted with [`Graph::constant`], so frozen networks (e.g. the
//! discriminator during a generator step) cost no weight-gradient work.

mod conv;
mod optim;
mod spectral;

pub use optim::Adam;

use ndarray::{ArrayD, IxDyn};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

type BackwardFn = Box<dyn Fn(&[ArrayD<f64>], &ArrayD<f64>, &mut dyn FnMut(usize, ArrayD<f64>))>;

pub struct Graph {
    values: Vec<ArrayD<f64>>,
    needs_grad: Vec<bool>,
    backward_ops: Vec<Option<BackwardFn>>,
}

/// Per-node gradients produced by a backward pass.
pub struct Gradients {
    grads: Vec<Option<ArrayD<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&ArrayD<f64>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<ArrayD<f64>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self { values: Vec::new(), needs_grad: Vec::new(), backward_ops: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Trainable leaf.
    pub fn leaf(&mut self, value: ArrayD<f64>) -> Var {
        self.push(value, true, None)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: ArrayD<f64>) -> Var {
        self.push(value, false, None)
    }

    pub fn scalar_const(&mut self, value: f64) -> Var {
        self.constant(ArrayD::from_elem(IxDyn(&[]), value))
    }

    pub fn value(&self, v: Var) -> &ArrayD<f64> {
        &self.values[v.0]
    }

    pub fn scalar(&self, v: Var) -> f64 {
        debug_assert_eq!(self.values[v.0].len(), 1);
        *self.values[v.0].iter().next().unwrap()
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.needs_grad[v.0]
    }

    fn push(&mut self, value: ArrayD<f64>, needs_grad: bool, op: Option<BackwardFn>) -> Var {
        self.values.push(value);
        self.needs_grad.push(needs_grad);
        self.backward_ops.push(op);
        Var(self.values.len() - 1)
    }

    pub(crate) fn push_op(&mut self, value: ArrayD<f64>, parents: &[Var], op: BackwardFn) -> Var {
        let needs = parents.iter().any(|p| self.needs_grad[p.0]);
        self.push(value, needs, if needs { Some(op) } else { None })
    }

    /// Reverse sweep from a scalar node. Returns gradients for every node on
    /// the differentiable path (including intermediates).
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.values[loss.0].len(), 1, "backward target must be scalar");
        let mut grads: Vec<Option<ArrayD<f64>>> = vec![None; self.values.len()];
        grads[loss.0] = Some(ArrayD::from_elem(self.values[loss.0].raw_dim(), 1.0));
        for i in (0..=loss.0).rev() {
            if grads[i].is_none() {
                continue;
            }
            let Some(op) = &self.backward_ops[i] else { continue };
            let g = grads[i].take().unwrap();
            op(&self.values, &g, &mut |parent, contrib| {
                if !self.needs_grad[parent] {
                    return;
                }
                match &mut grads[parent] {
                    Some(acc) => *acc += &contrib,
                    slot @ None => *slot = Some(contrib),
                }
            });
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    // ---- elementwise -------------------------------------------------------

    fn unary(
        &mut self,
        x: Var,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64) -> f64 + 'static,
    ) -> Var {
        let y = self.values[x.0].mapv(&f);
        let xi = x.0;
        self.push_op(
            y,
            &[x],
            Box::new(move |values, g, sink| {
                let dx = ndarray::Zip::from(g).and(&values[xi]).map_collect(|&go, &xv| go * df(xv));
                sink(xi, dx);
            }),
        )
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(x, |v| -v, |_| -1.0)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        // subgradient 0 at the kink
        self.unary(x, f64::abs, |v| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, |v| {
            let t = v.tanh();
            1.0 - t * t
        })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        fn sig(v: f64) -> f64 {
            1.0 / (1.0 + (-v).exp())
        }
        self.unary(x, sig, |v| {
            let s = sig(v);
            s * (1.0 - s)
        })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), |v| if v > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn leaky_relu(&mut self, x: Var, alpha: f64) -> Var {
        self.unary(
            x,
            move |v| if v > 0.0 { v } else { alpha * v },
            move |v| if v > 0.0 { 1.0 } else { alpha },
        )
    }

    pub fn ln(&mut self, x: Var) -> Var {
        self.unary(x, f64::ln, |v| 1.0 / v)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, move |v| c * v, move |_| c)
    }

    pub fn add_const(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, move |v| v + c, |_| 1.0)
    }

    /// y = ln(1 + x) * k
    pub fn log1p_scaled(&mut self, x: Var, k: f64) -> Var {
        self.unary(x, move |v| v.ln_1p() * k, move |v| k / (1.0 + v))
    }

    /// y = exp(k * x) - 1
    pub fn expm1_scaled(&mut self, x: Var, k: f64) -> Var {
        self.unary(x, move |v| (k * v).exp_m1(), move |v| k * (k * v).exp())
    }

    fn binary_same_shape(
        &mut self,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        dfa: impl Fn(f64, f64) -> f64 + 'static,
        dfb: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Var {
        assert_eq!(self.values[a.0].shape(), self.values[b.0].shape(), "shape mismatch");
        let y = ndarray::Zip::from(&self.values[a.0])
            .and(&self.values[b.0])
            .map_collect(|&x, &z| f(x, z));
        let (ai, bi) = (a.0, b.0);
        self.push_op(
            y,
            &[a, b],
            Box::new(move |values, g, sink| {
                let da = ndarray::Zip::from(g)
                    .and(&values[ai])
                    .and(&values[bi])
                    .map_collect(|&go, &x, &z| go * dfa(x, z));
                sink(ai, da);
                let db = ndarray::Zip::from(g)
                    .and(&values[ai])
                    .and(&values[bi])
                    .map_collect(|&go, &x, &z| go * dfb(x, z));
                sink(bi, db);
            }),
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary_same_shape(a, b, |x, z| x + z, |_, _| 1.0, |_, _| 1.0)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary_same_shape(a, b, |x, z| x - z, |_, _| 1.0, |_, _| -1.0)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary_same_shape(a, b, |x, z| x * z, |_, z| z, |x, _| x)
    }

    /// Elementwise product with a fixed array (masking).
    pub fn mul_array(&mut self, x: Var, c: ArrayD<f64>) -> Var {
        assert_eq!(self.values[x.0].shape(), c.shape(), "shape mismatch");
        let y = &self.values[x.0] * &c;
        let xi = x.0;
        self.push_op(
            y,
            &[x],
            Box::new(move |_, g, sink| {
                sink(xi, g * &c);
            }),
        )
    }

    // ---- reductions & scalar wiring ---------------------------------------

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.values[x.0].sum();
        let shape = self.values[x.0].raw_dim();
        let xi = x.0;
        self.push_op(
            ArrayD::from_elem(IxDyn(&[]), s),
            &[x],
            Box::new(move |_, g, sink| {
                let go = *g.iter().next().unwrap();
                sink(xi, ArrayD::from_elem(shape.clone(), go));
            }),
        )
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.values[x.0].len() as f64;
        let s = self.sum_all(x);
        self.scale(s, 1.0 / n)
    }

    /// Weighted sum of scalar nodes: sum_i w_i * x_i.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Var {
        let total: f64 = terms.iter().map(|(v, w)| self.scalar(*v) * w).sum();
        let saved: Vec<(usize, f64)> = terms.iter().map(|(v, w)| (v.0, *w)).collect();
        let parents: Vec<Var> = terms.iter().map(|(v, _)| *v).collect();
        self.push_op(
            ArrayD::from_elem(IxDyn(&[]), total),
            &parents,
            Box::new(move |_, g, sink| {
                let go = *g.iter().next().unwrap();
                for &(idx, w) in &saved {
                    sink(idx, ArrayD::from_elem(IxDyn(&[]), go * w));
                }
            }),
        )
    }

    /// Mean absolute difference of two same-shape nodes.
    pub fn l1_mean(&mut self, a: Var, b: Var) -> Var {
        let d = self.sub(a, b);
        let d = self.abs(d);
        self.mean_all(d)
    }

    // ---- linear algebra ----------------------------------------------------

    /// 2-D matrix product.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let av = as_2d(&self.values[a.0]);
        let bv = as_2d(&self.values[b.0]);
        assert_eq!(av.ncols(), bv.nrows(), "matmul inner dims");
        let y = av.dot(&bv).into_dyn();
        let (ai, bi) = (a.0, b.0);
        let (a_needs, b_needs) = (self.needs_grad[a.0], self.needs_grad[b.0]);
        self.push_op(
            y,
            &[a, b],
            Box::new(move |values, g, sink| {
                let gv = as_2d(g);
                if a_needs {
                    let bv = as_2d(&values[bi]);
                    sink(ai, gv.dot(&bv.t()).into_dyn());
                }
                if b_needs {
                    let av = as_2d(&values[ai]);
                    sink(bi, av.t().dot(&gv).into_dyn());
                }
            }),
        )
    }

    /// Concatenate along axis 0 (the channel axis for [C, ...] tensors).
    pub fn concat0(&mut self, a: Var, b: Var) -> Var {
        let av = &self.values[a.0];
        let bv = &self.values[b.0];
        let y = ndarray::concatenate(ndarray::Axis(0), &[av.view(), bv.view()])
            .expect("concat0 shapes");
        let (ai, bi) = (a.0, b.0);
        let split = av.shape()[0];
        self.push_op(
            y,
            &[a, b],
            Box::new(move |_, g, sink| {
                let (first, second) = g.view().split_at(ndarray::Axis(0), split);
                sink(ai, first.to_owned());
                sink(bi, second.to_owned());
            }),
        )
    }
}

pub(crate) fn as_2d(a: &ArrayD<f64>) -> ndarray::ArrayView2<'_, f64> {
    a.view().into_dimensionality::<ndarray::Ix2>().expect("expected 2-D tensor")
}

/// Central finite difference of a scalar function at one coordinate.
pub fn finite_difference(
    f: &mut dyn FnMut(&ArrayD<f64>) -> f64,
    x: &ArrayD<f64>,
    coord: &[usize],
    h: f64,
) -> f64 {
    let mut xp = x.clone();
    xp[IxDyn(coord)] += h;
    let fp = f(&xp);
    let mut xm = x.clone();
    xm[IxDyn(coord)] -= h;
    let fm = f(&xm);
    (fp - fm) / (2.0 * h)
}

/// Relative error with an absolute floor, as used by the gradient checks.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs()).max(1e-8);
    (a - b).abs() / denom
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{ArrayD, IxDyn};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_arr(shape: &[usize], seed: u64) -> ArrayD<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ArrayD::from_shape_fn(IxDyn(shape), |_| rng.gen_range(-1.0..1.0))
    }

    /// FD-check d(sum of f(x))/dx at a handful of coordinates.
    fn fd_check(build: impl Fn(&mut Graph, Var) -> Var, x: ArrayD<f64>, tol: f64) {
        let mut g = Graph::new();
        let xv = g.leaf(x.clone());
        let y = build(&mut g, xv);
        let grads = g.backward(y);
        let analytic = grads.get(xv).unwrap();

        let mut eval = |xa: &ArrayD<f64>| {
            let mut g2 = Graph::new();
            let xv2 = g2.leaf(xa.clone());
            let y2 = build(&mut g2, xv2);
            g2.scalar(y2)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        for _ in 0..6 {
            let coord: Vec<usize> =
                x.shape().iter().map(|&s| rng.gen_range(0..s)).collect();
            let fd = finite_difference(&mut eval, &x, &coord, 1e-6);
            let an = analytic[IxDyn(&coord)];
            assert!(
                relative_error(an, fd) < tol,
                "coord {coord:?}: analytic {an}, fd {fd}"
            );
        }
    }

    #[test]
    fn unary_chain_gradients() {
        fd_check(
            |g, x| {
                let t = g.tanh(x);
                let s = g.sigmoid(t);
                let l = g.leaky_relu(s, 0.2);
                g.mean_all(l)
            },
            rand_arr(&[5, 7], 2),
            1e-6,
        );
    }

    #[test]
    fn log1p_expm1_gradients() {
        let x = rand_arr(&[6, 6], 3).mapv(|v| v.abs() + 0.1);
        fd_check(
            |g, x| {
                let c = g.log1p_scaled(x, 0.37);
                let d = g.expm1_scaled(c, 1.7);
                g.mean_all(d)
            },
            x,
            1e-6,
        );
    }

    #[test]
    fn mul_add_sub_gradients() {
        let b = rand_arr(&[4, 4], 7);
        fd_check(
            move |g, x| {
                let bc = g.constant(b.clone());
                let p = g.mul(x, bc);
                let q = g.add(p, x);
                let r = g.sub(q, p);
                g.sum_all(r)
            },
            rand_arr(&[4, 4], 8),
            1e-6,
        );
    }

    #[test]
    fn matmul_gradient_both_sides() {
        let b = rand_arr(&[5, 3], 11);
        // d/dA of sum(A.B)
        fd_check(
            {
                let b = b.clone();
                move |g, x| {
                    let bv = g.leaf(b.clone());
                    let y = g.matmul(x, bv);
                    g.sum_all(y)
                }
            },
            rand_arr(&[4, 5], 12),
            1e-6,
        );
        // d/dB of sum(A.B)
        let a = rand_arr(&[4, 5], 13);
        fd_check(
            move |g, x| {
                let av = g.leaf(a.clone());
                let y = g.matmul(av, x);
                g.sum_all(y)
            },
            b,
            1e-6,
        );
    }

    #[test]
    fn concat_gradient_splits() {
        let b = rand_arr(&[3, 4], 21);
        fd_check(
            move |g, x| {
                let bv = g.constant(b.clone());
                let c = g.concat0(x, bv);
                let c = g.tanh(c);
                g.mean_all(c)
            },
            rand_arr(&[2, 4], 22),
            1e-6,
        );
    }

    #[test]
    fn l1_mean_matches_hand_value() {
        let mut g = Graph::new();
        let a = g.leaf(ArrayD::from_shape_vec(IxDyn(&[2]), vec![1.0, 2.0]).unwrap());
        let b = g.constant(ArrayD::from_shape_vec(IxDyn(&[2]), vec![0.0, 0.0]).unwrap());
        let l = g.l1_mean(a, b);
        assert_eq!(g.scalar(l), 1.5);
    }

    #[test]
    fn weighted_sum_value_and_gradient() {
        let mut g = Graph::new();
        let a = g.leaf(ArrayD::from_elem(IxDyn(&[]), 2.0));
        let b = g.leaf(ArrayD::from_elem(IxDyn(&[]), 5.0));
        let t = g.weighted_sum(&[(a, 3.0), (b, 0.5)]);
        assert!((g.scalar(t) - 8.5).abs() < 1e-12);
        let grads = g.backward(t);
        assert!((grads.get(a).unwrap()[IxDyn(&[])] - 3.0).abs() < 1e-12);
        assert!((grads.get(b).unwrap()[IxDyn(&[])] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn constants_do_not_collect_gradients() {
        let mut g = Graph::new();
        let a = g.constant(rand_arr(&[3, 3], 31));
        let b = g.leaf(rand_arr(&[3, 3], 32));
        let m = g.mul(a, b);
        let s = g.sum_all(m);
        let grads = g.backward(s);
        assert!(grads.get(a).is_none());
        assert!(grads.get(b).is_some());
    }

    #[test]
    fn gradient_accumulates_over_shared_nodes() {
        // y = sum(x * x) => dy/dx = 2x via two uses of the same node
        let x = rand_arr(&[4], 41);
        let mut g = Graph::new();
        let xv = g.leaf(x.clone());
        let m = g.mul(xv, xv);
        let s = g.sum_all(m);
        let grads = g.backward(s);
        let got = grads.get(xv).unwrap();
        for (gv, xv_) in got.iter().zip(x.iter()) {
            assert!((gv - 2.0 * xv_).abs() < 1e-12);
        }
    }
}
