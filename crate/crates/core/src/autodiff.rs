//! Reverse-mode differentiation over a linear tape of dense `f64` tensors.
//!
//! Every operation evaluates eagerly and appends a node; node inputs always
//! precede the node, so the tape is topologically ordered by construction and
//! [`Tape::backward`] is a single reverse sweep.

use crate::error::{Error, Result};

/// A dense tensor that lives outside any tape, typically a model parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {numel} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![v],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// Scalar node times tensor.
    ScalarMul { scalar: Var, tensor: Var },
    Scale(Var, f64),
    MatVec(Var, Var),
    VecMat(Var, Var),
    Concat(Vec<Var>),
    Tanh(Var),
    MaskedLogSoftmax(Var, Vec<bool>),
    Gather(Var, usize),
    Row(Var, usize),
    Sum(Var),
    Mean(Var),
    Hinge(Var),
}

#[derive(Debug, Clone)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_str(s: &[usize]) -> String {
    format!("{s:?}")
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Tape {
            nodes: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a tensor as an input; gradients flow to it iff `requires_grad`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(t.shape.clone(), t.data.clone(), Op::Leaf, t.requires_grad)
    }

    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape, data)?;
        Ok(self.push(t.shape, t.data, Op::Leaf, false))
    }

    pub fn constant_vec(&mut self, data: Vec<f64>) -> Var {
        let n = data.len();
        self.push(vec![n], data, Op::Leaf, false)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.push(vec![], vec![v], Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Value of a single-element node.
    pub fn scalar_value(&self, v: Var) -> f64 {
        let n = &self.nodes[v.0];
        debug_assert_eq!(n.value.len(), 1);
        n.value[0]
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::Shape(format!("{what}: {} vs {}", shape_str(sa), shape_str(sb))));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(self.shape(a).to_vec(), value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x - y).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(self.shape(a).to_vec(), value, Op::Sub(a, b), rg))
    }

    /// Elementwise product. A single-element operand multiplies every entry
    /// of the other; no other broadcasting is supported.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (na, nb) = (self.value(a).len(), self.value(b).len());
        if self.shape(a) != self.shape(b) && (na == 1 || nb == 1) {
            let (scalar, tensor) = if na == 1 { (a, b) } else { (b, a) };
            let s = self.value(scalar)[0];
            let value = self.value(tensor).iter().map(|x| s * x).collect();
            let rg = self.rg(a) || self.rg(b);
            return Ok(self.push(
                self.shape(tensor).to_vec(),
                value,
                Op::ScalarMul { scalar, tensor },
                rg,
            ));
        }
        self.same_shape(a, b, "mul")?;
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(self.shape(a).to_vec(), value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).iter().map(|x| c * x).collect();
        let rg = self.rg(a);
        self.push(self.shape(a).to_vec(), value, Op::Scale(a, c), rg)
    }

    /// `m [r x c] * v [c] -> [r]`.
    pub fn matvec(&mut self, m: Var, v: Var) -> Result<Var> {
        let (sm, sv) = (self.shape(m), self.shape(v));
        if sm.len() != 2 || sv.len() != 1 || sm[1] != sv[0] {
            return Err(Error::Shape(format!("matvec: {} x {}", shape_str(sm), shape_str(sv))));
        }
        let (r, c) = (sm[0], sm[1]);
        let mv = self.value(m);
        let vv = self.value(v);
        let value = (0..r)
            .map(|i| mv[i * c..(i + 1) * c].iter().zip(vv).map(|(a, b)| a * b).sum())
            .collect();
        let rg = self.rg(m) || self.rg(v);
        Ok(self.push(vec![r], value, Op::MatVec(m, v), rg))
    }

    /// `v [r] * m [r x c] -> [c]`.
    pub fn vecmat(&mut self, v: Var, m: Var) -> Result<Var> {
        let (sv, sm) = (self.shape(v), self.shape(m));
        if sm.len() != 2 || sv.len() != 1 || sm[0] != sv[0] {
            return Err(Error::Shape(format!("vecmat: {} x {}", shape_str(sv), shape_str(sm))));
        }
        let (r, c) = (sm[0], sm[1]);
        let mv = self.value(m);
        let vv = self.value(v);
        let mut value = vec![0.0; c];
        for i in 0..r {
            let s = vv[i];
            if s == 0.0 {
                continue;
            }
            for (o, x) in value.iter_mut().zip(&mv[i * c..(i + 1) * c]) {
                *o += s * x;
            }
        }
        let rg = self.rg(m) || self.rg(v);
        Ok(self.push(vec![c], value, Op::VecMat(v, m), rg))
    }

    /// Concatenates 1-D tensors end to end.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let total = self.check_vectors(parts, "concat")?;
        self.concat_impl(parts, vec![total])
    }

    /// Stacks equal-length vectors as the rows of a matrix.
    pub fn stack(&mut self, rows: &[Var]) -> Result<Var> {
        if rows.is_empty() {
            return Err(Error::Shape("stack: no rows".into()));
        }
        self.check_vectors(rows, "stack")?;
        let width = self.shape(rows[0])[0];
        if rows.iter().any(|&r| self.shape(r)[0] != width) {
            return Err(Error::Shape("stack: rows differ in length".into()));
        }
        self.concat_impl(rows, vec![rows.len(), width])
    }

    fn check_vectors(&self, parts: &[Var], what: &str) -> Result<usize> {
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 1 {
                return Err(Error::Shape(format!("{what}: expected vectors, got {}", shape_str(s))));
            }
            total += s[0];
        }
        Ok(total)
    }

    fn concat_impl(&mut self, parts: &[Var], shape: Vec<usize>) -> Result<Var> {
        let mut value = Vec::with_capacity(shape.iter().product());
        let mut rg = false;
        for &p in parts {
            value.extend_from_slice(self.value(p));
            rg |= self.rg(p);
        }
        Ok(self.push(shape, value, Op::Concat(parts.to_vec()), rg))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).iter().map(|x| x.tanh()).collect();
        let rg = self.rg(a);
        self.push(self.shape(a).to_vec(), value, Op::Tanh(a), rg)
    }

    /// Log-softmax over the entries with `mask[i] == true`; the rest are set
    /// to negative infinity and cannot be gathered.
    pub fn masked_log_softmax(&mut self, logits: Var, mask: &[bool]) -> Result<Var> {
        let s = self.shape(logits);
        if s.len() != 1 || s[0] != mask.len() {
            return Err(Error::Shape(format!(
                "masked_log_softmax: logits {} with mask of length {}",
                shape_str(s),
                mask.len()
            )));
        }
        let x = self.value(logits);
        let max = x
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(v, _)| *v)
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY && !mask.iter().any(|&m| m) {
            return Err(Error::FullyMasked);
        }
        let lse = max
            + x.iter()
                .zip(mask)
                .filter(|(_, &m)| m)
                .map(|(v, _)| (v - max).exp())
                .sum::<f64>()
                .ln();
        let value = x
            .iter()
            .zip(mask)
            .map(|(v, &m)| if m { v - lse } else { f64::NEG_INFINITY })
            .collect();
        let rg = self.rg(logits);
        Ok(self.push(
            vec![mask.len()],
            value,
            Op::MaskedLogSoftmax(logits, mask.to_vec()),
            rg,
        ))
    }

    /// Single entry of a 1-D tensor as a scalar.
    pub fn gather(&mut self, a: Var, index: usize) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 1 || index >= s[0] {
            return Err(Error::Shape(format!("gather: index {index} into {}", shape_str(s))));
        }
        let v = self.value(a)[index];
        if v == f64::NEG_INFINITY {
            if let Op::MaskedLogSoftmax(..) = self.nodes[a.0].op {
                return Err(Error::Shape(format!("gather: index {index} is masked")));
            }
        }
        let rg = self.rg(a);
        Ok(self.push(vec![], vec![v], Op::Gather(a, index), rg))
    }

    /// Row `index` of a matrix.
    pub fn row(&mut self, m: Var, index: usize) -> Result<Var> {
        let s = self.shape(m);
        if s.len() != 2 || index >= s[0] {
            return Err(Error::Shape(format!("row: index {index} into {}", shape_str(s))));
        }
        let c = s[1];
        let value = self.value(m)[index * c..(index + 1) * c].to_vec();
        let rg = self.rg(m);
        Ok(self.push(vec![c], value, Op::Row(m, index), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = self.value(a).iter().sum();
        let rg = self.rg(a);
        self.push(vec![], vec![v], Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(Error::Shape("mean of an empty tensor".into()));
        }
        let v = self.value(a).iter().sum::<f64>() / n as f64;
        let rg = self.rg(a);
        Ok(self.push(vec![], vec![v], Op::Mean(a), rg))
    }

    /// `max(0, x)` elementwise; the subgradient at exactly zero is zero.
    pub fn hinge(&mut self, a: Var) -> Var {
        let value = self.value(a).iter().map(|&x| x.max(0.0)).collect();
        let rg = self.rg(a);
        self.push(self.shape(a).to_vec(), value, Op::Hinge(a), rg)
    }

    /// Sums a list of scalars (an empty list gives zero).
    pub fn sum_scalars(&mut self, items: &[Var]) -> Result<Var> {
        if items.is_empty() {
            return Ok(self.scalar(0.0));
        }
        for &i in items {
            if self.value(i).len() != 1 {
                return Err(Error::Shape("sum_scalars: non-scalar item".into()));
            }
        }
        let parts: Vec<Var> = items.to_vec();
        let cat = self.concat_scalars(&parts);
        Ok(self.sum(cat))
    }

    fn concat_scalars(&mut self, items: &[Var]) -> Var {
        let value: Vec<f64> = items.iter().map(|&i| self.value(i)[0]).collect();
        let rg = items.iter().any(|&i| self.rg(i));
        self.push(vec![items.len()], value, Op::Concat(items.to_vec()), rg)
    }

    /// Packs scalar nodes into a vector node.
    pub fn pack(&mut self, items: &[Var]) -> Result<Var> {
        for &i in items {
            if self.value(i).len() != 1 {
                return Err(Error::Shape("pack: non-scalar item".into()));
            }
        }
        Ok(self.concat_scalars(items))
    }

    /// Propagates d(output)/d(node) to every node that requires a gradient.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = &self.nodes[output.0];
        if out.value.len() != 1 {
            return Err(Error::NotScalar(out.shape.clone()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(vec![1.0]);

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    self.accum(&mut grads, *a, |acc| add_into(acc, &g));
                    self.accum(&mut grads, *b, |acc| add_into(acc, &g));
                }
                Op::Sub(a, b) => {
                    self.accum(&mut grads, *a, |acc| add_into(acc, &g));
                    self.accum(&mut grads, *b, |acc| {
                        acc.iter_mut().zip(&g).for_each(|(o, x)| *o -= x)
                    });
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    self.accum(&mut grads, *a, |acc| {
                        for ((o, x), y) in acc.iter_mut().zip(&g).zip(vb) {
                            *o += x * y;
                        }
                    });
                    self.accum(&mut grads, *b, |acc| {
                        for ((o, x), y) in acc.iter_mut().zip(&g).zip(va) {
                            *o += x * y;
                        }
                    });
                }
                Op::ScalarMul { scalar, tensor } => {
                    let s = self.value(*scalar)[0];
                    let vt = self.value(*tensor);
                    let ds: f64 = g.iter().zip(vt).map(|(x, y)| x * y).sum();
                    self.accum(&mut grads, *scalar, |acc| acc[0] += ds);
                    self.accum(&mut grads, *tensor, |acc| {
                        acc.iter_mut().zip(&g).for_each(|(o, x)| *o += s * x)
                    });
                }
                Op::Scale(a, c) => {
                    self.accum(&mut grads, *a, |acc| {
                        acc.iter_mut().zip(&g).for_each(|(o, x)| *o += c * x)
                    });
                }
                Op::MatVec(m, v) => {
                    let c = self.shape(*m)[1];
                    let (vm, vv) = (self.value(*m), self.value(*v));
                    self.accum(&mut grads, *m, |acc| {
                        for (i, gi) in g.iter().enumerate() {
                            if *gi == 0.0 {
                                continue;
                            }
                            for (o, x) in acc[i * c..(i + 1) * c].iter_mut().zip(vv) {
                                *o += gi * x;
                            }
                        }
                    });
                    self.accum(&mut grads, *v, |acc| {
                        for (i, gi) in g.iter().enumerate() {
                            if *gi == 0.0 {
                                continue;
                            }
                            for (o, x) in acc.iter_mut().zip(&vm[i * c..(i + 1) * c]) {
                                *o += gi * x;
                            }
                        }
                    });
                }
                Op::VecMat(v, m) => {
                    let c = self.shape(*m)[1];
                    let (vm, vv) = (self.value(*m), self.value(*v));
                    self.accum(&mut grads, *m, |acc| {
                        for (i, vi) in vv.iter().enumerate() {
                            if *vi == 0.0 {
                                continue;
                            }
                            for (o, x) in acc[i * c..(i + 1) * c].iter_mut().zip(&g) {
                                *o += vi * x;
                            }
                        }
                    });
                    self.accum(&mut grads, *v, |acc| {
                        for (i, o) in acc.iter_mut().enumerate() {
                            *o += vm[i * c..(i + 1) * c].iter().zip(&g).map(|(a, b)| a * b).sum::<f64>();
                        }
                    });
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let n = self.value(*p).len();
                        let slice = &g[off..off + n];
                        self.accum(&mut grads, *p, |acc| add_into(acc, slice));
                        off += n;
                    }
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    self.accum(&mut grads, *a, |acc| {
                        for ((o, x), yi) in acc.iter_mut().zip(&g).zip(y) {
                            *o += x * (1.0 - yi * yi);
                        }
                    });
                }
                Op::MaskedLogSoftmax(a, mask) => {
                    let y = &node.value;
                    let gsum: f64 = g.iter().zip(mask).filter(|(_, &m)| m).map(|(x, _)| x).sum();
                    self.accum(&mut grads, *a, |acc| {
                        for i in 0..acc.len() {
                            if mask[i] {
                                acc[i] += g[i] - y[i].exp() * gsum;
                            }
                        }
                    });
                }
                Op::Gather(a, index) => {
                    self.accum(&mut grads, *a, |acc| acc[*index] += g[0]);
                }
                Op::Row(m, index) => {
                    let c = self.shape(*m)[1];
                    self.accum(&mut grads, *m, |acc| {
                        add_into(&mut acc[index * c..(index + 1) * c], &g)
                    });
                }
                Op::Sum(a) => {
                    self.accum(&mut grads, *a, |acc| acc.iter_mut().for_each(|o| *o += g[0]));
                }
                Op::Mean(a) => {
                    let n = self.value(*a).len() as f64;
                    self.accum(&mut grads, *a, |acc| {
                        acc.iter_mut().for_each(|o| *o += g[0] / n)
                    });
                }
                Op::Hinge(a) => {
                    let x = self.value(*a);
                    self.accum(&mut grads, *a, |acc| {
                        for ((o, gi), xi) in acc.iter_mut().zip(&g).zip(x) {
                            if *xi > 0.0 {
                                *o += gi;
                            }
                        }
                    });
                }
            }
            // Leaves keep their gradient for the caller.
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    fn accum(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.rg(v) {
            return;
        }
        let slot = &mut grads[v.0];
        let acc = slot.get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
        f(acc);
    }
}

fn add_into(acc: &mut [f64], g: &[f64]) {
    acc.iter_mut().zip(g).for_each(|(o, x)| *o += x);
}

/// Gradients of one backward pass, available for leaf nodes.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// `None` when `v` is not on any path to the output.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of a leaf with zeros when it did not influence the output.
    pub fn wrt(&self, v: Var, numel: usize) -> Vec<f64> {
        self.get(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; numel])
    }

    /// Adds the gradient of `v` into `tensor.grad`.
    pub fn accumulate_into(&self, v: Var, tensor: &mut Tensor) {
        if !tensor.requires_grad {
            return;
        }
        let acc = tensor.grad.get_or_insert_with(|| vec![0.0; tensor.data.len()]);
        if let Some(g) = self.get(v) {
            add_into(acc, g);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// (parameter, component) with the largest relative error.
    pub worst: Option<(usize, usize)>,
    pub components: usize,
}

/// Compares reverse-mode gradients of `f` against central differences
/// `(f(p + h e_i) - f(p - h e_i)) / 2h` for every component of every
/// parameter. Relative error is `|a - n| / max(1e-8, |a| + |n|)`.
pub fn grad_check<F>(params: &[Tensor], step: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {step}")));
    }
    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.leaf(p)).collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.scalar_value(out);
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("grad_check objective evaluated to {v}")));
        }
        Ok(v)
    };

    let mut tape = Tape::new();
    let leaves: Vec<Tensor> = params.iter().cloned().map(Tensor::with_grad).collect();
    let vars: Vec<Var> = leaves.iter().map(|p| tape.leaf(p)).collect();
    let out = f(&mut tape, &vars)?;
    if !tape.scalar_value(out).is_finite() {
        return Err(Error::NonFinite("grad_check objective is not finite".into()));
    }
    let grads = tape.backward(out)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: None,
        components: 0,
    };
    let mut work = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        let analytic = grads.wrt(vars[pi], p.numel());
        for ci in 0..p.numel() {
            let orig = p.data[ci];
            work[pi].data[ci] = orig + step;
            let plus = eval(&work)?;
            work[pi].data[ci] = orig - step;
            let minus = eval(&work)?;
            work[pi].data[ci] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[ci];
            let abs = (a - numeric).abs();
            let rel = abs / (a.abs() + numeric.abs()).max(1e-8);
            report.components += 1;
            report.max_abs_error = report.max_abs_error.max(abs);
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some((pi, ci));
            }
        }
    }
    Ok(report)
}
