//! Tape-based reverse-mode automatic differentiation.
//!
//! Every operation appends a node holding its forward value and the handles of
//! its inputs. Nodes are created after their inputs, so the node order is a
//! topological order and [`Tape::backward`] is a single reverse sweep.
//!
//! ```
//! use sembcs::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap().with_requires_grad(true));
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.sum(sq);
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(x).unwrap(), &[2.0, 4.0, 6.0]);
//! ```

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom, Padding};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    MatMul(Var, Var),
    BatchMatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    /// Hard threshold at 0.5 with a straight-through (identity) backward.
    Binarize(Var),
    DepthToSpace(Var, usize),
    SpaceToDepth(Var, usize),
    Reshape(Var),
    Concat(Vec<Var>),
    Sum(Var),
    SumSquares(Var),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Records a computation graph and differentiates scalar outputs.
#[derive(Default, Debug)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds a leaf. Gradients are tracked iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, mut tensor: Tensor) -> Var {
        tensor.zero_grad();
        self.push(tensor, Op::Leaf)
    }

    /// Adds a leaf that never receives gradients.
    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a node, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.value.zero_grad();
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].value.requires_grad())
    }

    fn result(&mut self, shape: &[usize], data: Vec<f64>, op: Op, inputs: &[Var]) -> Var {
        let rg = self.tracked(inputs);
        let t = Tensor::from_vec(shape, data)
            .expect("internal: op produced inconsistent shape")
            .with_requires_grad(rg);
        self.push(t, op)
    }

    /// Cross-correlation of `input [N,H,W,Cin]` with `kernel [k,k,Cin,Cout]`.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: Padding,
    ) -> Result<Var> {
        let geom = ConvGeom::resolve(self.shape(input), self.shape(kernel), stride, padding)?;
        if let Some(b) = bias {
            if self.shape(b) != [geom.cout] {
                return Err(Error::shape("conv2d bias", self.shape(b), &[geom.cout]));
            }
        }
        let out = kernels::conv2d_forward(
            self.value(input).data(),
            self.value(kernel).data(),
            bias.map(|b| self.value(b).data()),
            &geom,
        );
        let mut inputs = vec![input, kernel];
        inputs.extend(bias);
        Ok(self.result(
            &geom.out_shape(),
            out,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            },
            &inputs,
        ))
    }

    /// Dense product of `[m,k]` and `[k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.result(&[m, n], out, Op::MatMul(a, b), &[a, b]))
    }

    /// Batched product of `[b,m,k]` and `[b,k,n]`.
    pub fn batch_matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(Error::shape("batch_matmul", sa, sb));
        }
        let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(bs * m * n);
        for i in 0..bs {
            out.extend(kernels::matmul(
                &ad[i * m * k..(i + 1) * m * k],
                &bd[i * k * n..(i + 1) * k * n],
                m,
                k,
                n,
            ));
        }
        Ok(self.result(&[bs, m, n], out, Op::BatchMatMul(a, b), &[a, b]))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(name, self.shape(a), self.shape(b)));
        }
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.result(&shape, out, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out: Vec<f64> = self.value(a).data().iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        self.result(&shape, out, op, &[a])
    }

    /// Multiplication by a scalar constant.
    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, kernels::sigmoid, Op::Sigmoid(a))
    }

    /// `1` where the input is strictly above 0.5, else `0`. Backward passes the
    /// output gradient through unchanged.
    pub fn binarize(&mut self, a: Var) -> Var {
        self.unary(a, |x| if x > 0.5 { 1.0 } else { 0.0 }, Op::Binarize(a))
    }

    pub fn depth_to_space(&mut self, a: Var, r: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 4 || r == 0 || !s[3].is_multiple_of(r * r) {
            return Err(Error::shape("depth_to_space", &s, &[r, r]));
        }
        let out = kernels::depth_to_space(self.value(a).data(), &s, r);
        Ok(self.result(
            &[s[0], s[1] * r, s[2] * r, s[3] / (r * r)],
            out,
            Op::DepthToSpace(a, r),
            &[a],
        ))
    }

    pub fn space_to_depth(&mut self, a: Var, r: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 4 || r == 0 || !s[1].is_multiple_of(r) || !s[2].is_multiple_of(r) {
            return Err(Error::shape("space_to_depth", &s, &[r, r]));
        }
        let out = kernels::space_to_depth(self.value(a).data(), &s, r);
        Ok(self.result(
            &[s[0], s[1] / r, s[2] / r, s[3] * r * r],
            out,
            Op::SpaceToDepth(a, r),
            &[a],
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.value(a).numel() {
            return Err(Error::shape("reshape", self.shape(a), shape));
        }
        let data = self.value(a).data().to_vec();
        Ok(self.result(shape, data, Op::Reshape(a), &[a]))
    }

    /// Concatenation along the last axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        let lead = self
            .shape(*first)
            .split_last()
            .map(|(_, l)| l.to_vec())
            .unwrap_or_default();
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let s = self.shape(*p);
            match s.split_last() {
                Some((&w, l)) if l == lead.as_slice() => widths.push(w),
                _ => return Err(Error::shape("concat", self.shape(*first), s)),
            }
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(*p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        Ok(self.result(&shape, out, Op::Concat(parts.to_vec()), parts))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.result(&[], vec![s], Op::Sum(a), &[a])
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().map(|x| x * x).sum();
        self.result(&[], vec![s], Op::SumSquares(a), &[a])
    }

    /// Propagates `d loss / d node` into every tracked node reachable from
    /// `loss`. Repeated calls accumulate.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].value.requires_grad() {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            self.nodes[i].value.accumulate_grad(&g)?;
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let needs = |v: Var| nodes[v.0].value.requires_grad();
        // Helper returning a mutable gradient buffer for an input, or None if untracked.
        fn slot<'a>(
            nodes: &[Node],
            grads: &'a mut [Option<Vec<f64>>],
            v: Var,
        ) -> Option<&'a mut Vec<f64>> {
            if !nodes[v.0].value.requires_grad() {
                return None;
            }
            let n = nodes[v.0].value.numel();
            Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
        }
        fn add_into(buf: &mut [f64], g: &[f64]) {
            for (b, x) in buf.iter_mut().zip(g) {
                *b += x;
            }
        }

        match &nodes[i].op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            } => {
                let x = nodes[input.0].value.data();
                let k = nodes[kernel.0].value.data();
                let mut gi = needs(*input).then(|| vec![0.0; x.len()]);
                let mut gk = needs(*kernel).then(|| vec![0.0; k.len()]);
                let mut gb = bias.filter(|b| needs(*b)).map(|_| vec![0.0; geom.cout]);
                kernels::conv2d_backward(
                    x,
                    k,
                    g,
                    geom,
                    gi.as_deref_mut(),
                    gk.as_deref_mut(),
                    gb.as_deref_mut(),
                );
                if let Some(gi) = gi {
                    add_into(slot(nodes, grads, *input).unwrap(), &gi);
                }
                if let Some(gk) = gk {
                    add_into(slot(nodes, grads, *kernel).unwrap(), &gk);
                }
                if let (Some(gb), Some(b)) = (gb, bias) {
                    add_into(slot(nodes, grads, *b).unwrap(), &gb);
                }
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (nodes[a.0].value.shape(), nodes[b.0].value.shape());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (ad, bd) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                let mut da = needs(*a).then(|| vec![0.0; m * k]);
                let mut db = needs(*b).then(|| vec![0.0; k * n]);
                kernels::matmul_backward(ad, bd, g, m, k, n, da.as_deref_mut(), db.as_deref_mut());
                if let Some(da) = da {
                    add_into(slot(nodes, grads, *a).unwrap(), &da);
                }
                if let Some(db) = db {
                    add_into(slot(nodes, grads, *b).unwrap(), &db);
                }
            }
            Op::BatchMatMul(a, b) => {
                let (sa, sb) = (nodes[a.0].value.shape(), nodes[b.0].value.shape());
                let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
                let (ad, bd) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                let mut da = needs(*a).then(|| vec![0.0; bs * m * k]);
                let mut db = needs(*b).then(|| vec![0.0; bs * k * n]);
                for t in 0..bs {
                    let (ra, rb, rc) = (
                        t * m * k..(t + 1) * m * k,
                        t * k * n..(t + 1) * k * n,
                        t * m * n..(t + 1) * m * n,
                    );
                    kernels::matmul_backward(
                        &ad[ra.clone()],
                        &bd[rb.clone()],
                        &g[rc],
                        m,
                        k,
                        n,
                        da.as_deref_mut().map(|d| &mut d[ra]),
                        db.as_deref_mut().map(|d| &mut d[rb]),
                    );
                }
                if let Some(da) = da {
                    add_into(slot(nodes, grads, *a).unwrap(), &da);
                }
                if let Some(db) = db {
                    add_into(slot(nodes, grads, *b).unwrap(), &db);
                }
            }
            Op::Add(a, b) => {
                if let Some(s) = slot(nodes, grads, *a) {
                    add_into(s, g);
                }
                if let Some(s) = slot(nodes, grads, *b) {
                    add_into(s, g);
                }
            }
            Op::Sub(a, b) => {
                if let Some(s) = slot(nodes, grads, *a) {
                    add_into(s, g);
                }
                if let Some(s) = slot(nodes, grads, *b) {
                    for (x, d) in s.iter_mut().zip(g) {
                        *x -= d;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                if let Some(s) = slot(nodes, grads, *a) {
                    for ((x, d), bv) in s.iter_mut().zip(g).zip(bd) {
                        *x += d * bv;
                    }
                }
                if let Some(s) = slot(nodes, grads, *b) {
                    for ((x, d), av) in s.iter_mut().zip(g).zip(ad) {
                        *x += d * av;
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(s) = slot(nodes, grads, *a) {
                    for (x, d) in s.iter_mut().zip(g) {
                        *x += d * c;
                    }
                }
            }
            Op::Relu(a) => {
                let ad = nodes[a.0].value.data();
                if let Some(s) = slot(nodes, grads, *a) {
                    for ((x, d), &v) in s.iter_mut().zip(g).zip(ad) {
                        if v > 0.0 {
                            *x += d;
                        }
                    }
                }
            }
            Op::Sigmoid(a) => {
                let y = nodes[i].value.data();
                if let Some(s) = slot(nodes, grads, *a) {
                    for ((x, d), &yv) in s.iter_mut().zip(g).zip(y) {
                        *x += d * yv * (1.0 - yv);
                    }
                }
            }
            Op::Binarize(a) | Op::Reshape(a) => {
                if let Some(s) = slot(nodes, grads, *a) {
                    add_into(s, g);
                }
            }
            Op::DepthToSpace(a, r) => {
                let shape = nodes[i].value.shape();
                let back = kernels::space_to_depth(g, shape, *r);
                if let Some(s) = slot(nodes, grads, *a) {
                    add_into(s, &back);
                }
            }
            Op::SpaceToDepth(a, r) => {
                let shape = nodes[i].value.shape();
                let back = kernels::depth_to_space(g, shape, *r);
                if let Some(s) = slot(nodes, grads, *a) {
                    add_into(s, &back);
                }
            }
            Op::Concat(parts) => {
                let total = *nodes[i].value.shape().last().unwrap();
                let rows = g.len() / total.max(1);
                let mut offset = 0;
                for p in parts {
                    let w = *nodes[p.0].value.shape().last().unwrap();
                    if let Some(s) = slot(nodes, grads, *p) {
                        for r in 0..rows {
                            add_into(
                                &mut s[r * w..(r + 1) * w],
                                &g[r * total + offset..r * total + offset + w],
                            );
                        }
                    }
                    offset += w;
                }
            }
            Op::Sum(a) => {
                if let Some(s) = slot(nodes, grads, *a) {
                    for x in s.iter_mut() {
                        *x += g[0];
                    }
                }
            }
            Op::SumSquares(a) => {
                let ad = nodes[a.0].value.data();
                if let Some(s) = slot(nodes, grads, *a) {
                    for (x, &v) in s.iter_mut().zip(ad) {
                        *x += 2.0 * v * g[0];
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::from_vec(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn conv_of_ones_sums_window() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[1, 2, 2, 1], 1.0));
        let k = tape.constant(Tensor::full(&[2, 2, 1, 1], 1.0));
        let y = tape.conv2d(x, k, None, 2, Padding::Valid).unwrap();
        assert_eq!(tape.shape(y), &[1, 1, 1, 1]);
        assert_eq!(tape.value(y).data(), &[4.0]);
    }

    #[test]
    fn conv_shape_errors_name_both_shapes() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 4, 4, 3]));
        let k = tape.constant(Tensor::zeros(&[2, 2, 2, 1]));
        let err = tape.conv2d(x, k, None, 2, Padding::Valid).unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("[1, 4, 4, 3]") && msg.contains("[2, 2, 2, 1]"),
            "{msg}"
        );
    }

    #[test]
    fn matmul_small_cases() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = tape.constant(t(&[2, 1], &[5.0, 6.0]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[17.0, 39.0]);

        let id = tape.constant(Tensor::eye(3));
        let m = tape.constant(t(&[3, 2], &[1.0, -2.0, 3.5, 0.0, 7.0, 8.0]));
        let p = tape.matmul(id, m).unwrap();
        assert_eq!(tape.value(p), tape.value(m));

        assert!(tape.matmul(a, m).is_err());
    }

    #[test]
    fn elementwise_definitions() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3], &[0.0, -3.0, 3.0]).with_requires_grad(true));
        let s = tape.sigmoid(x);
        assert_eq!(tape.value(s).data()[0], 0.5);
        let r = tape.relu(x);
        assert_eq!(tape.value(r).data(), &[0.0, 0.0, 3.0]);
        let l = tape.sum(s);
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(x).unwrap()[0], 0.25);

        let y = tape.constant(Tensor::zeros(&[2]));
        assert!(tape.add(x, y).is_err());
        assert!(tape.mul(x, y).is_err());
    }

    #[test]
    fn depth_to_space_smallest_case() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 1, 1, 4], &[1.0, 2.0, 3.0, 4.0]));
        let y = tape.depth_to_space(x, 2).unwrap();
        assert_eq!(tape.shape(y), &[1, 2, 2, 1]);
        assert_eq!(tape.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);
        let z = tape.constant(Tensor::zeros(&[1, 1, 1, 6]));
        assert!(tape.depth_to_space(z, 2).is_err());
    }

    #[test]
    fn backward_simple_losses() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2, 2], &[1.0, -2.0, 3.0, 0.5]).with_requires_grad(true));
        let l = tape.sum(x);
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0; 4]);

        tape.zero_grad();
        let sq = tape.mul(x, x).unwrap();
        let l2 = tape.sum(sq);
        tape.backward(l2).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0, -4.0, 6.0, 1.0]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]).with_requires_grad(true));
        let y = tape.scale(x, 3.0);
        let l = tape.sum(y);
        tape.backward(l).unwrap();
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[6.0, 6.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[2]).with_requires_grad(true));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn binarize_is_strict_with_identity_backward() {
        let mut tape = Tape::new();
        let g = tape.leaf(t(&[4], &[0.6, 0.4, 0.5, 0.9]).with_requires_grad(true));
        let m = tape.binarize(g);
        assert_eq!(tape.value(m).data(), &[1.0, 0.0, 0.0, 1.0]);
        let w = tape.constant(t(&[4], &[2.0, -1.0, 0.5, 3.0]));
        let p = tape.mul(w, m).unwrap();
        let l = tape.sum(p);
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(g).unwrap(), &[2.0, -1.0, 0.5, 3.0]);
        assert_eq!(tape.grad(g), tape.grad(m));
    }

    #[test]
    fn concat_last_axis() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(&[2, 1], &[1.0, 2.0]).with_requires_grad(true));
        let b = tape.leaf(t(&[2, 2], &[3.0, 4.0, 5.0, 6.0]).with_requires_grad(true));
        let c = tape.concat(&[a, b]).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let w = tape.constant(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let p = tape.mul(c, w).unwrap();
        let l = tape.sum(p);
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(a).unwrap(), &[1.0, 4.0]);
        assert_eq!(tape.grad(b).unwrap(), &[2.0, 3.0, 5.0, 6.0]);
    }

    #[test]
    fn untracked_graph_has_no_grads() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[2], 1.0));
        let l = tape.sum(x);
        tape.backward(l).unwrap();
        assert!(tape.grad(x).is_none());
    }
}
