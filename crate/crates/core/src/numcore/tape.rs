//! Reverse-mode differentiation over the small operator set the parsing
//! network, the affinity transform and the graph discriminator are built from.
//!
//! A [`Tape`] records every operation eagerly; [`Tape::backward`] replays it
//! in reverse. Values are computed at record time, so a tape doubles as the
//! forward pass. Leaves are either trainable (registered under a name through
//! [`Tape::param`]) or constant; gradients are only propagated into subgraphs
//! that reach a trainable leaf.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::tensor::{matmul_nt_into, matmul_tn_into, Tensor};
use crate::error::{Error, Result};

/// Named parameter tensors; also used for gradients and optimizer state.
pub type ParamSet = BTreeMap<String, Tensor>;
pub type Gradients = ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Sparse linear map from rows of an input matrix to rows of an output
/// matrix: `out[r] = Σ w · in[src]` over `rows[r]`.
#[derive(Debug, Clone)]
pub struct RowMap {
    pub inputs: usize,
    pub rows: Vec<Vec<(usize, f64)>>,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    Relu(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    Transpose(Var),
    Sum(Var),
    Reshape(Var),
    Clamp(Var, f64, f64),
    GaussianKernel(Var, f64),
    RowPool(Var, Arc<RowMap>),
    Gather(Var, Arc<Vec<Option<usize>>>),
    NormalizeAdjacency(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
}

fn check2(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    if t.shape().len() != 2 {
        return Err(Error::arg(format!("{what}: expected 2-D tensor, got {:?}", t.shape())));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf registered under `name`.
    pub fn param(&mut self, name: &str, value: &Tensor) -> Var {
        self.nodes.push(Node {
            value: value.clone(),
            op: Op::Leaf,
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.push((name.to_string(), v));
        v
    }

    /// Registers every tensor of `set` as a parameter.
    pub fn params(&mut self, set: &ParamSet) -> BTreeMap<String, Var> {
        set.iter()
            .map(|(name, t)| (name.clone(), self.param(name, t)))
            .collect()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::arg(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(value, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    /// Adds a length-`m` bias to every row of an `n×m` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, m) = check2(self.value(x), "add_bias")?;
        if self.value(bias).len() != m {
            return Err(Error::arg(format!(
                "add_bias: bias of length {} for width {m}",
                self.value(bias).len()
            )));
        }
        let mut value = self.value(x).clone();
        let b = self.value(bias).data().to_vec();
        for row in value.data_mut().chunks_mut(m) {
            for (v, bv) in row.iter_mut().zip(&b) {
                *v += bv;
            }
        }
        Ok(self.push(value, Op::AddBias(x, bias), &[x, bias]))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let value = self.value(x).map(|v| v * c);
        self.push(value, Op::Scale(x, c), &[x])
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let value = self.value(x).map(|v| v + c);
        self.push(value, Op::AddScalar(x), &[x])
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::exp);
        self.push(value, Op::Exp(x), &[x])
    }

    pub fn log(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::ln);
        self.push(value, Op::Log(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::tanh);
        self.push(value, Op::Tanh(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        self.push(value, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        self.push(value, Op::Sigmoid(x), &[x])
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        check2(self.value(x), "softmax_rows")?;
        let value = softmax_rows(self.value(x));
        Ok(self.push(value, Op::SoftmaxRows(x), &[x]))
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (_, m) = check2(self.value(x), "log_softmax_rows")?;
        let mut value = self.value(x).clone();
        for row in value.data_mut().chunks_mut(m) {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        Ok(self.push(value, Op::LogSoftmaxRows(x), &[x]))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        check2(self.value(x), "transpose")?;
        let value = self.value(x).transpose();
        Ok(self.push(value, Op::Transpose(x), &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(value, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1) as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(x), &[x]))
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(x).map(|v| v.clamp(lo, hi));
        self.push(value, Op::Clamp(x, lo, hi), &[x])
    }

    /// `K[i,j] = exp(-‖x_i − x_j‖² / 2θ²)` over the rows of `x`.
    pub fn gaussian_kernel(&mut self, x: Var, theta: f64) -> Result<Var> {
        let (n, c) = check2(self.value(x), "gaussian_kernel")?;
        if theta <= 0.0 {
            return Err(Error::arg("gaussian_kernel: theta must be positive"));
        }
        let xs = self.value(x).data();
        let denom = 2.0 * theta * theta;
        let mut k = Tensor::zeros(&[n, n]);
        for i in 0..n {
            k.data_mut()[i * n + i] = 1.0;
            for j in 0..i {
                let d: f64 = (0..c)
                    .map(|ch| {
                        let diff = xs[i * c + ch] - xs[j * c + ch];
                        diff * diff
                    })
                    .sum();
                let v = (-d / denom).exp();
                k.data_mut()[i * n + j] = v;
                k.data_mut()[j * n + i] = v;
            }
        }
        Ok(self.push(k, Op::GaussianKernel(x, theta), &[x]))
    }

    pub fn row_pool(&mut self, x: Var, map: Arc<RowMap>) -> Result<Var> {
        let (n, c) = check2(self.value(x), "row_pool")?;
        if n != map.inputs {
            return Err(Error::arg(format!(
                "row_pool: map expects {} input rows, got {n}",
                map.inputs
            )));
        }
        let xs = self.value(x).data();
        let mut out = Tensor::zeros(&[map.rows.len(), c]);
        for (r, entries) in map.rows.iter().enumerate() {
            let orow = &mut out.data_mut()[r * c..(r + 1) * c];
            for &(src, w) in entries {
                for (o, v) in orow.iter_mut().zip(&xs[src * c..(src + 1) * c]) {
                    *o += w * v;
                }
            }
        }
        Ok(self.push(out, Op::RowPool(x, map), &[x]))
    }

    /// Flat gather with zero fill: `out[i] = x[index[i]]` or 0 for `None`.
    pub fn gather(&mut self, x: Var, index: Arc<Vec<Option<usize>>>, shape: Vec<usize>) -> Result<Var> {
        let xs = self.value(x).data();
        if index.iter().flatten().any(|&i| i >= xs.len()) {
            return Err(Error::arg("gather: index out of range"));
        }
        let data = index.iter().map(|i| i.map_or(0.0, |i| xs[i])).collect();
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::Gather(x, index), &[x]))
    }

    /// `D̂^{-1/2} (A + I) D̂^{-1/2}` with `D̂` the row sums of `A + I`.
    pub fn normalize_adjacency(&mut self, a: Var) -> Result<Var> {
        let value = normalize_adjacency(self.value(a))?;
        Ok(self.push(value, Op::NormalizeAdjacency(a), &[a]))
    }

    /// Gradients of the scalar `loss` with respect to every registered parameter.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::arg("backward: loss must be a scalar"));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let mut out = Gradients::new();
        for (name, v) in &self.params {
            let g = grads[v.0]
                .clone()
                .unwrap_or_else(|| Tensor::zeros(self.value(*v).shape()));
            out.insert(name.clone(), g);
        }
        Ok(out)
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, op: &Op, out: &Tensor, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match *op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                let (n, k, m) = (av.rows(), av.cols(), bv.cols());
                if self.wants(a) {
                    let mut ga = vec![0.0; n * k];
                    matmul_nt_into(g.data(), bv.data(), &mut ga, n, m, k);
                    self.accumulate(grads, a, Tensor::new(av.shape().to_vec(), ga).unwrap());
                }
                if self.wants(b) {
                    let mut gb = vec![0.0; k * m];
                    matmul_tn_into(av.data(), g.data(), &mut gb, n, k, m);
                    self.accumulate(grads, b, Tensor::new(bv.shape().to_vec(), gb).unwrap());
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, a, g.clone());
                self.accumulate(grads, b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, a, g.clone());
                self.accumulate(grads, b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                if self.wants(a) {
                    self.accumulate(grads, a, g.zip_map(self.value(b), |x, y| x * y));
                }
                if self.wants(b) {
                    self.accumulate(grads, b, g.zip_map(self.value(a), |x, y| x * y));
                }
            }
            Op::AddBias(x, bias) => {
                self.accumulate(grads, x, g.clone());
                if self.wants(bias) {
                    let m = self.value(bias).len();
                    let mut gb = vec![0.0; m];
                    for row in g.data().chunks(m) {
                        for (acc, v) in gb.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    let shape = self.value(bias).shape().to_vec();
                    self.accumulate(grads, bias, Tensor::new(shape, gb).unwrap());
                }
            }
            Op::Scale(x, c) => self.accumulate(grads, x, g.map(|v| v * c)),
            Op::AddScalar(x) => self.accumulate(grads, x, g.clone()),
            Op::Exp(x) => self.accumulate(grads, x, g.zip_map(out, |gv, y| gv * y)),
            Op::Log(x) => self.accumulate(grads, x, g.zip_map(self.value(x), |gv, xv| gv / xv)),
            Op::Tanh(x) => self.accumulate(grads, x, g.zip_map(out, |gv, y| gv * (1.0 - y * y))),
            Op::Relu(x) => self.accumulate(
                grads,
                x,
                g.zip_map(self.value(x), |gv, xv| if xv > 0.0 { gv } else { 0.0 }),
            ),
            Op::Sigmoid(x) => self.accumulate(grads, x, g.zip_map(out, |gv, y| gv * y * (1.0 - y))),
            Op::SoftmaxRows(x) => {
                let m = out.cols();
                let mut gx = g.clone();
                for (grow, yrow) in gx.data_mut().chunks_mut(m).zip(out.data().chunks(m)) {
                    let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                    for (gv, y) in grow.iter_mut().zip(yrow) {
                        *gv = y * (*gv - dot);
                    }
                }
                self.accumulate(grads, x, gx);
            }
            Op::LogSoftmaxRows(x) => {
                let m = out.cols();
                let mut gx = g.clone();
                for (grow, yrow) in gx.data_mut().chunks_mut(m).zip(out.data().chunks(m)) {
                    let total: f64 = grow.iter().sum();
                    for (gv, y) in grow.iter_mut().zip(yrow) {
                        *gv -= y.exp() * total;
                    }
                }
                self.accumulate(grads, x, gx);
            }
            Op::Transpose(x) => self.accumulate(grads, x, g.transpose()),
            Op::Sum(x) => {
                let gv = g.data()[0];
                self.accumulate(grads, x, Tensor::full(self.value(x).shape(), gv));
            }
            Op::Reshape(x) => {
                let shape = self.value(x).shape().to_vec();
                self.accumulate(grads, x, g.clone().reshape(shape).unwrap());
            }
            Op::Clamp(x, lo, hi) => self.accumulate(
                grads,
                x,
                g.zip_map(self.value(x), |gv, xv| if xv > lo && xv < hi { gv } else { 0.0 }),
            ),
            Op::GaussianKernel(x, theta) => {
                let xv = self.value(x);
                let (n, c) = (xv.rows(), xv.cols());
                let xs = xv.data();
                let (gs, ks) = (g.data(), out.data());
                let inv = 1.0 / (theta * theta);
                let mut gx = Tensor::zeros(&[n, c]);
                for i in 0..n {
                    for j in 0..n {
                        if i == j {
                            continue;
                        }
                        let w = (gs[i * n + j] + gs[j * n + i]) * ks[i * n + j] * inv;
                        if w == 0.0 {
                            continue;
                        }
                        for ch in 0..c {
                            gx.data_mut()[i * c + ch] -= w * (xs[i * c + ch] - xs[j * c + ch]);
                        }
                    }
                }
                self.accumulate(grads, x, gx);
            }
            Op::RowPool(x, ref map) => {
                let c = out.cols();
                let mut gx = Tensor::zeros(&[map.inputs, c]);
                for (r, entries) in map.rows.iter().enumerate() {
                    let grow = &g.data()[r * c..(r + 1) * c];
                    for &(src, w) in entries {
                        let dst = &mut gx.data_mut()[src * c..(src + 1) * c];
                        for (d, gv) in dst.iter_mut().zip(grow) {
                            *d += w * gv;
                        }
                    }
                }
                self.accumulate(grads, x, gx);
            }
            Op::Gather(x, ref index) => {
                let mut gx = Tensor::zeros(self.value(x).shape());
                for (gv, i) in g.data().iter().zip(index.iter()) {
                    if let Some(i) = *i {
                        gx.data_mut()[i] += gv;
                    }
                }
                self.accumulate(grads, x, gx);
            }
            Op::NormalizeAdjacency(a) => {
                let av = self.value(a);
                let n = av.rows();
                let ad = av.data();
                let gd = g.data();
                // Â = A + I, s = rowsum(Â)^{-1/2}, out = Â_ij s_i s_j
                let hat = |i: usize, j: usize| ad[i * n + j] + if i == j { 1.0 } else { 0.0 };
                let s: Vec<f64> = (0..n)
                    .map(|i| (0..n).map(|j| hat(i, j)).sum::<f64>().powf(-0.5))
                    .collect();
                let mut ds = vec![0.0; n];
                for i in 0..n {
                    for j in 0..n {
                        let t = gd[i * n + j] * hat(i, j);
                        ds[i] += t * s[j];
                        ds[j] += t * s[i];
                    }
                }
                // ds_i/dd_i = -½ d_i^{-3/2} = -½ s_i³
                let dd: Vec<f64> = (0..n).map(|i| -0.5 * s[i].powi(3) * ds[i]).collect();
                let mut ga = Tensor::zeros(&[n, n]);
                for i in 0..n {
                    for j in 0..n {
                        ga.data_mut()[i * n + j] = gd[i * n + j] * s[i] * s[j] + dd[i];
                    }
                }
                self.accumulate(grads, a, ga);
            }
        }
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn softmax_rows(x: &Tensor) -> Tensor {
    let m = x.cols();
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(m) {
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

pub fn normalize_adjacency(a: &Tensor) -> Result<Tensor> {
    let (n, m) = check2(a, "normalize_adjacency")?;
    if n != m {
        return Err(Error::arg(format!("adjacency must be square, got {n}x{m}")));
    }
    let mut hat = a.clone();
    for i in 0..n {
        hat.data_mut()[i * n + i] += 1.0;
    }
    let s: Vec<f64> = (0..n).map(|i| hat.row(i).iter().sum::<f64>().powf(-0.5)).collect();
    for i in 0..n {
        for j in 0..n {
            hat.data_mut()[i * n + j] *= s[i] * s[j];
        }
    }
    Ok(hat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::grad_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Runs `build` on a fresh tape with `x` as the sole parameter and checks
    /// the analytic gradient against central differences.
    fn check_op(x: Tensor, build: impl Fn(&mut Tape, Var) -> Var) {
        let err = grad_check(
            |p: &Tensor| {
                let mut tape = Tape::new();
                let v = tape.param("x", p);
                let loss = build(&mut tape, v);
                let grads = tape.backward(loss)?;
                Ok((tape.scalar(loss), grads["x"].clone()))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "relative error {err}");
    }

    /// Contracts an arbitrary-shaped output against fixed weights so every
    /// output entry influences the scalar.
    fn contract(tape: &mut Tape, y: Var, seed: u64) -> Var {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = random(tape.value(y).shape(), &mut rng);
        let w = tape.constant(w);
        let p = tape.mul(y, w).unwrap();
        tape.sum(p)
    }

    #[test]
    fn elementwise_ops_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&[3, 4], &mut rng);
        check_op(x.clone(), |t, v| {
            let y = t.tanh(v);
            contract(t, y, 2)
        });
        check_op(x.clone(), |t, v| {
            let y = t.sigmoid(v);
            contract(t, y, 3)
        });
        check_op(x.clone(), |t, v| {
            let y = t.exp(v);
            contract(t, y, 4)
        });
        check_op(x.map(|v| v.abs() + 0.5), |t, v| {
            let y = t.log(v);
            contract(t, y, 5)
        });
        check_op(x.clone(), |t, v| {
            let y = t.relu(v);
            contract(t, y, 6)
        });
        check_op(x.clone(), |t, v| {
            let y = t.mul(v, v).unwrap();
            let y = t.add_scalar(y, 2.0);
            contract(t, y, 7)
        });
        check_op(x.map(|v| v * 0.4 + 0.5), |t, v| {
            let y = t.clamp(v, 0.2, 0.8);
            contract(t, y, 8)
        });
    }

    #[test]
    fn matrix_ops_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random(&[4, 3], &mut rng);
        let w = random(&[3, 5], &mut rng);
        let b = random(&[5], &mut rng);
        check_op(x.clone(), |t, v| {
            let wv = t.constant(w.clone());
            let bv = t.constant(b.clone());
            let y = t.matmul(v, wv).unwrap();
            let y = t.add_bias(y, bv).unwrap();
            contract(t, y, 12)
        });
        check_op(w.clone(), |t, v| {
            let xv = t.constant(x.clone());
            let y = t.matmul(xv, v).unwrap();
            contract(t, y, 13)
        });
        check_op(b.clone(), |t, v| {
            let z = t.constant(Tensor::zeros(&[4, 5]));
            let y = t.add_bias(z, v).unwrap();
            contract(t, y, 14)
        });
        check_op(x.clone(), |t, v| {
            let y = t.softmax_rows(v).unwrap();
            contract(t, y, 15)
        });
        check_op(x.clone(), |t, v| {
            let y = t.log_softmax_rows(v).unwrap();
            contract(t, y, 16)
        });
        check_op(x.clone(), |t, v| {
            let y = t.transpose(v).unwrap();
            contract(t, y, 17)
        });
        check_op(x.clone(), |t, v| {
            let y = t.gaussian_kernel(v, 0.9).unwrap();
            contract(t, y, 18)
        });
    }

    #[test]
    fn structural_ops_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = random(&[5, 2], &mut rng);
        let map = Arc::new(RowMap {
            inputs: 5,
            rows: vec![vec![(0, 0.5), (3, 0.5)], vec![(1, 1.0)], vec![(2, 0.2), (4, 0.8)]],
        });
        check_op(x.clone(), |t, v| {
            let y = t.row_pool(v, map.clone()).unwrap();
            contract(t, y, 22)
        });
        let index = Arc::new(vec![Some(0), None, Some(9), Some(0), Some(4), None]);
        check_op(x.clone(), |t, v| {
            let y = t.gather(v, index.clone(), vec![3, 2]).unwrap();
            contract(t, y, 23)
        });
        let mut a = random(&[4, 4], &mut rng).map(|v| v.abs());
        a = a.zip_map(&a.transpose(), |p, q| 0.5 * (p + q));
        check_op(a, |t, v| {
            let y = t.normalize_adjacency(v).unwrap();
            contract(t, y, 24)
        });
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::scalar(2.0));
        let p = tape.param("p", &Tensor::scalar(3.0));
        let y = tape.mul(c, p).unwrap();
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.len(), 1);
        assert_eq!(grads["p"].data(), &[2.0]);
    }

    #[test]
    fn shape_errors_are_reported() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 2]));
        assert!(tape.add(a, b).is_err());
        assert!(tape.matmul(a, a).is_err());
        assert!(tape.backward(a).is_err());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(&[6, 19], &mut rng).map(|v| v * 30.0);
        let y = softmax_rows(&x);
        for r in 0..6 {
            assert!((y.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let _ = rng.random::<f64>();
    }
}
