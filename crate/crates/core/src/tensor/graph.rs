use rand::Rng;

use super::{axis_blocks, broadcast_map, broadcast_shape, strides, Tensor};
use crate::error::{dim_err, Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
enum BinKind {
    Add,
    Sub,
    Mul,
}

/// Index map from output elements to input elements; `None` means identity.
type IndexMap = Option<Vec<usize>>;

#[derive(Debug)]
enum Op {
    Leaf,
    Binary {
        kind: BinKind,
        a: Var,
        b: Var,
        map_a: IndexMap,
        map_b: IndexMap,
    },
    Scale(Var, f64),
    MatMul {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        shared_rhs: bool,
    },
    Gather {
        x: Var,
        map: Vec<usize>,
    },
    Reshape(Var),
    Relu(Var),
    Gelu(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    Sum(Var),
    Mean(Var),
    MeanAxis {
        x: Var,
        axis: usize,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    ScatterRows {
        base: Var,
        src: Var,
        rows: Vec<Vec<usize>>,
        len: usize,
        width: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Tape of operations recorded in execution order. Nodes are only ever appended,
/// so the recorded order is a topological order and the graph is acyclic.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, mut value: Tensor, requires_grad: bool) -> Var {
        value.requires_grad = requires_grad;
        value.grad = None;
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; never receives a gradient.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad.as_deref()
    }

    fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad
    }

    fn push(&mut self, mut value: Tensor, op: Op, inputs: &[Var], name: &str) -> Result<Var> {
        value.check_finite(name)?;
        value.requires_grad = inputs.iter().any(|&v| self.requires_grad(v));
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    fn binary(&mut self, a: Var, b: Var, kind: BinKind) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let out_shape = broadcast_shape(&sa, &sb)?;
        let map_a = (sa != out_shape).then(|| broadcast_map(&sa, &out_shape));
        let map_b = (sb != out_shape).then(|| broadcast_map(&sb, &out_shape));
        let da = self.value(a).data();
        let db = self.value(b).data();
        let numel: usize = out_shape.iter().product();
        let f = |x: f64, y: f64| match kind {
            BinKind::Add => x + y,
            BinKind::Sub => x - y,
            BinKind::Mul => x * y,
        };
        let data: Vec<f64> = (0..numel)
            .map(|i| {
                let ia = map_a.as_ref().map_or(i, |m| m[i]);
                let ib = map_b.as_ref().map_or(i, |m| m[i]);
                f(da[ia], db[ib])
            })
            .collect();
        let value = Tensor::new(&out_shape, data)?;
        self.push(
            value,
            Op::Binary {
                kind,
                a,
                b,
                map_a,
                map_b,
            },
            &[a, b],
            "binary op",
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinKind::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinKind::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinKind::Mul)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let src = self.value(x);
        let data = src.data().iter().map(|v| v * factor).collect();
        let value = Tensor::new(src.shape(), data)?;
        self.push(value, Op::Scale(x, factor), &[x], "scale")
    }

    /// `[..., m, k] x [k, n]` or `[..., m, k] x [..., k, n]` with equal leading dims.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() < 2 || sb.len() < 2 {
            return Err(dim_err!("matmul needs rank >= 2, got {sa:?} x {sb:?}"));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != kb {
            return Err(dim_err!("matmul inner dimensions differ: {sa:?} x {sb:?}"));
        }
        let lead = &sa[..sa.len() - 2];
        let shared_rhs = sb.len() == 2;
        if !shared_rhs && lead != &sb[..sb.len() - 2] {
            return Err(dim_err!("matmul batch dimensions differ: {sa:?} x {sb:?}"));
        }
        let batch: usize = lead.iter().product();
        let da = self.value(a).data();
        let db = self.value(b).data();
        let mut out = vec![0.0; batch * m * n];
        for g in 0..batch {
            let a_blk = &da[g * m * k..(g + 1) * m * k];
            let b_blk = if shared_rhs {
                db
            } else {
                &db[g * k * n..(g + 1) * k * n]
            };
            matmul_kernel(a_blk, b_blk, m, k, n, &mut out[g * m * n..(g + 1) * m * n]);
        }
        let mut shape = lead.to_vec();
        shape.extend([m, n]);
        let value = Tensor::new(&shape, out)?;
        self.push(
            value,
            Op::MatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                shared_rhs,
            },
            &[a, b],
            "matmul",
        )
    }

    fn gather(&mut self, x: Var, shape: Vec<usize>, map: Vec<usize>, name: &str) -> Result<Var> {
        let src = self.value(x).data();
        let data = map.iter().map(|&i| src[i]).collect();
        let value = Tensor::new(&shape, data)?;
        self.push(value, Op::Gather { x, map }, &[x], name)
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&a| a >= shape.len() || std::mem::replace(&mut seen[a], true)) {
            return Err(dim_err!("invalid permutation {axes:?} for shape {shape:?}"));
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let in_strides = strides(&shape);
        let perm_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
        let numel = shape.iter().product();
        let mut map = Vec::with_capacity(numel);
        let mut idx = vec![0usize; out_shape.len()];
        for _ in 0..numel {
            map.push(idx.iter().zip(&perm_strides).map(|(i, s)| i * s).sum());
            for ax in (0..out_shape.len()).rev() {
                idx[ax] += 1;
                if idx[ax] < out_shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        self.gather(x, out_shape, map, "permute")
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let nd = self.shape(x).len();
        if nd < 2 {
            return Err(dim_err!("transpose needs rank >= 2"));
        }
        let mut axes: Vec<usize> = (0..nd).collect();
        axes.swap(nd - 2, nd - 1);
        self.permute(x, &axes)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        self.push(value, Op::Reshape(x), &[x], "reshape")
    }

    pub fn broadcast_to(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let src = self.shape(x).to_vec();
        if broadcast_shape(&src, shape)? != shape {
            return Err(dim_err!("cannot broadcast {src:?} to {shape:?}"));
        }
        let map = broadcast_map(&src, shape);
        self.gather(x, shape.to_vec(), map, "broadcast")
    }

    /// Slice of `len` entries along `axis` starting at `start`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(dim_err!(
                "narrow({axis}, {start}, {len}) out of range for {shape:?}"
            ));
        }
        let (outer, full, inner) = axis_blocks(&shape, axis);
        let mut map = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            for l in start..start + len {
                let base = (o * full + l) * inner;
                map.extend(base..base + inner);
            }
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        self.gather(x, out_shape, map, "narrow")
    }

    /// Selects `rows[g]` along the second-to-last axis for each leading slice `g`.
    pub fn gather_rows(&mut self, x: Var, rows: &[Vec<usize>]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (groups, len, width) = row_blocks(&shape)?;
        let count = rows.first().map_or(0, Vec::len);
        if rows.len() != groups || count == 0 || rows.iter().any(|r| r.len() != count || r.iter().any(|&i| i >= len)) {
            return Err(dim_err!("row selection does not fit shape {shape:?}"));
        }
        let mut map = Vec::with_capacity(groups * count * width);
        for (g, sel) in rows.iter().enumerate() {
            for &r in sel {
                let base = (g * len + r) * width;
                map.extend(base..base + width);
            }
        }
        let mut out_shape = shape;
        let nd = out_shape.len();
        out_shape[nd - 2] = count;
        self.gather(x, out_shape, map, "gather_rows")
    }

    /// Copy of `base` with rows `rows[g]` of each leading slice replaced by `src`.
    pub fn scatter_rows(&mut self, base: Var, src: Var, rows: &[Vec<usize>]) -> Result<Var> {
        let shape = self.shape(base).to_vec();
        let src_shape = self.shape(src).to_vec();
        let (groups, len, width) = row_blocks(&shape)?;
        let (sg, count, sw) = row_blocks(&src_shape)?;
        if sg != groups || sw != width || rows.len() != groups || rows.iter().any(|r| r.len() != count || r.iter().any(|&i| i >= len)) {
            return Err(dim_err!("scatter of {src_shape:?} into {shape:?} does not fit"));
        }
        let mut data = self.value(base).data().to_vec();
        let sd = self.value(src).data();
        for (g, sel) in rows.iter().enumerate() {
            for (j, &r) in sel.iter().enumerate() {
                let dst = (g * len + r) * width;
                let from = (g * count + j) * width;
                data[dst..dst + width].copy_from_slice(&sd[from..from + width]);
            }
        }
        let value = Tensor::new(&shape, data)?;
        self.push(
            value,
            Op::ScatterRows {
                base,
                src,
                rows: rows.to_vec(),
                len,
                width,
            },
            &[base, src],
            "scatter_rows",
        )
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| dim_err!("concat of zero tensors"))?;
        let ref_shape = self.shape(*first).to_vec();
        if axis >= ref_shape.len() {
            return Err(dim_err!("concat axis {axis} out of range"));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == ref_shape.len()
                && s.iter()
                    .zip(&ref_shape)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(dim_err!("concat shapes {s:?} and {ref_shape:?} differ"));
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_blocks(&ref_shape, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let len = self.shape(v)[axis];
                let src = self.value(v).data();
                data.extend_from_slice(&src[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = ref_shape;
        shape[axis] = total;
        let value = Tensor::new(&shape, data)?;
        self.push(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
            "concat",
        )
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let src = self.value(x);
        let data = src.data().iter().map(|&v| v.max(0.0)).collect();
        let value = Tensor::new(src.shape(), data)?;
        self.push(value, Op::Relu(x), &[x], "relu")
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let src = self.value(x);
        let data = src
            .data()
            .iter()
            .map(|&v| 0.5 * v * (1.0 + (GELU_C * (v + GELU_A * v * v * v)).tanh()))
            .collect();
        let value = Tensor::new(src.shape(), data)?;
        self.push(value, Op::Gelu(x), &[x], "gelu")
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let src = self.value(x);
        if axis >= src.ndim() {
            return Err(dim_err!("softmax axis {axis} out of range for {:?}", src.shape()));
        }
        if !src.is_finite() {
            return Err(Error::Numeric("softmax input contains NaN or Inf".into()));
        }
        let (outer, len, inner) = axis_blocks(src.shape(), axis);
        let d = src.data();
        let mut out = vec![0.0; d.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |l: usize| (o * len + l) * inner + i;
                let max = (0..len).map(|l| d[at(l)]).fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for l in 0..len {
                    let e = (d[at(l)] - max).exp();
                    out[at(l)] = e;
                    sum += e;
                }
                for l in 0..len {
                    out[at(l)] /= sum;
                }
            }
        }
        let value = Tensor::new(src.shape(), out)?;
        self.push(value, Op::Softmax { x, axis }, &[x], "softmax")
    }

    /// Normalizes the last axis to zero mean and unit variance, then applies `gamma`/`beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let width = *shape.last().ok_or_else(|| dim_err!("layer_norm of a scalar"))?;
        if self.shape(gamma) != [width] || self.shape(beta) != [width] {
            return Err(dim_err!(
                "layer_norm affine params must have shape [{width}]"
            ));
        }
        let d = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let rows = d.len() / width;
        let mut xhat = vec![0.0; d.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; d.len()];
        for r in 0..rows {
            let row = &d[r * width..(r + 1) * width];
            let mean = row.iter().sum::<f64>() / width as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / width as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..width {
                let h = (row[j] - mean) * is;
                xhat[r * width + j] = h;
                out[r * width + j] = h * g[j] + b[j];
            }
        }
        let value = Tensor::new(&shape, out)?;
        self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
            "layer_norm",
        )
    }

    /// Inverted dropout. Identity (no new node) in eval mode or at rate 0.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        rate: f64,
        train: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !train || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - rate;
        let src = self.value(x);
        let mask: Vec<f64> = (0..src.numel())
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let data = src.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Tensor::new(src.shape(), data)?;
        self.push(value, Op::Dropout { x, mask }, &[x], "dropout")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x], "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let d = self.value(x).data();
        let s = d.iter().sum::<f64>() / d.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(x), &[x], "mean")
    }

    /// Mean along `axis`, keeping it as a size-1 dimension.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(dim_err!("mean axis {axis} out of range for {shape:?}"));
        }
        let (outer, len, inner) = axis_blocks(&shape, axis);
        let d = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                for i in 0..inner {
                    out[o * inner + i] += d[(o * len + l) * inner + i];
                }
            }
        }
        out.iter_mut().for_each(|v| *v /= len as f64);
        let mut out_shape = shape;
        out_shape[axis] = 1;
        let value = Tensor::new(&out_shape, out)?;
        self.push(value, Op::MeanAxis { x, axis }, &[x], "mean_axis")
    }

    /// Mean squared error between two same-shaped tensors.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        if self.shape(pred) != self.shape(target) {
            return Err(dim_err!(
                "loss shapes differ: {:?} vs {:?}",
                self.shape(pred),
                self.shape(target)
            ));
        }
        let diff = self.sub(pred, target)?;
        let sq = self.mul(diff, diff)?;
        self.mean(sq)
    }

    /// Populates gradients of every node reachable from `loss` that requires one.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        for node in &mut self.nodes {
            node.value.grad = None;
        }
        if !self.requires_grad(loss) {
            return Ok(());
        }
        self.nodes[loss.0].value.grad = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(grad) = self.nodes[i].value.grad.as_deref() else {
                continue;
            };
            let contributions = self.input_grads(i, grad);
            for (v, g) in contributions {
                if !self.requires_grad(v) {
                    continue;
                }
                let target = &mut self.nodes[v.0].value;
                match target.grad.as_mut() {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => target.grad = Some(g),
                }
            }
        }
        for node in &self.nodes {
            if let Some(g) = &node.value.grad {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Numeric("non-finite gradient".into()));
                }
            }
        }
        Ok(())
    }

    /// Gradient contributions of node `i` to each of its inputs.
    fn input_grads(&self, i: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[i];
        let zeros = |v: Var| vec![0.0; self.value(v).numel()];
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::Binary {
                kind,
                a,
                b,
                map_a,
                map_b,
            } => {
                let (da, db) = (self.value(*a).data(), self.value(*b).data());
                let mut ga = zeros(*a);
                let mut gb = zeros(*b);
                for (j, &gj) in g.iter().enumerate() {
                    let ia = map_a.as_ref().map_or(j, |m| m[j]);
                    let ib = map_b.as_ref().map_or(j, |m| m[j]);
                    match kind {
                        BinKind::Add => {
                            ga[ia] += gj;
                            gb[ib] += gj;
                        }
                        BinKind::Sub => {
                            ga[ia] += gj;
                            gb[ib] -= gj;
                        }
                        BinKind::Mul => {
                            ga[ia] += gj * db[ib];
                            gb[ib] += gj * da[ia];
                        }
                    }
                }
                vec![(*a, ga), (*b, gb)]
            }
            Op::Scale(x, f) => vec![(*x, g.iter().map(|v| v * f).collect())],
            Op::MatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                shared_rhs,
            } => {
                let (m, k, n) = (*m, *k, *n);
                let (da, db) = (self.value(*a).data(), self.value(*b).data());
                let mut ga = zeros(*a);
                let mut gb = zeros(*b);
                for bt in 0..*batch {
                    let gc = &g[bt * m * n..(bt + 1) * m * n];
                    let a_blk = &da[bt * m * k..(bt + 1) * m * k];
                    let b_off = if *shared_rhs { 0 } else { bt * k * n };
                    let b_blk = &db[b_off..b_off + k * n];
                    let ga_blk = &mut ga[bt * m * k..(bt + 1) * m * k];
                    // dA = dC * B^T
                    for r in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for c in 0..n {
                                s += gc[r * n + c] * b_blk[p * n + c];
                            }
                            ga_blk[r * k + p] += s;
                        }
                    }
                    // dB = A^T * dC
                    let gb_blk = &mut gb[b_off..b_off + k * n];
                    for r in 0..m {
                        for p in 0..k {
                            let av = a_blk[r * k + p];
                            for c in 0..n {
                                gb_blk[p * n + c] += av * gc[r * n + c];
                            }
                        }
                    }
                }
                vec![(*a, ga), (*b, gb)]
            }
            Op::Gather { x, map } => {
                let mut gx = zeros(*x);
                for (j, &src) in map.iter().enumerate() {
                    gx[src] += g[j];
                }
                vec![(*x, gx)]
            }
            Op::Reshape(x) => vec![(*x, g.to_vec())],
            Op::Relu(x) => {
                let d = self.value(*x).data();
                vec![(
                    *x,
                    g.iter()
                        .zip(d)
                        .map(|(gj, &v)| if v > 0.0 { *gj } else { 0.0 })
                        .collect(),
                )]
            }
            Op::Gelu(x) => {
                let d = self.value(*x).data();
                vec![(
                    *x,
                    g.iter()
                        .zip(d)
                        .map(|(gj, &v)| {
                            let t = (GELU_C * (v + GELU_A * v * v * v)).tanh();
                            let dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * v * v);
                            gj * (0.5 * (1.0 + t) + 0.5 * v * dt)
                        })
                        .collect(),
                )]
            }
            Op::Softmax { x, axis } => {
                let y = node.value.data();
                let (outer, len, inner) = axis_blocks(node.value.shape(), *axis);
                let mut gx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |l: usize| (o * len + l) * inner + i;
                        let dot: f64 = (0..len).map(|l| g[at(l)] * y[at(l)]).sum();
                        for l in 0..len {
                            gx[at(l)] = y[at(l)] * (g[at(l)] - dot);
                        }
                    }
                }
                vec![(*x, gx)]
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let gam = self.value(*gamma).data();
                let width = gam.len();
                let mut gx = vec![0.0; g.len()];
                let mut gg = vec![0.0; width];
                let mut gb = vec![0.0; width];
                for (r, &is) in inv_std.iter().enumerate() {
                    let row = r * width..(r + 1) * width;
                    let gy = &g[row.clone()];
                    let xh = &xhat[row.clone()];
                    let mut sum_d = 0.0;
                    let mut sum_dx = 0.0;
                    for j in 0..width {
                        let dxh = gy[j] * gam[j];
                        sum_d += dxh;
                        sum_dx += dxh * xh[j];
                        gg[j] += gy[j] * xh[j];
                        gb[j] += gy[j];
                    }
                    let w = width as f64;
                    for j in 0..width {
                        let dxh = gy[j] * gam[j];
                        gx[r * width + j] = is / w * (w * dxh - sum_d - xh[j] * sum_dx);
                    }
                }
                vec![(*x, gx), (*gamma, gg), (*beta, gb)]
            }
            Op::Dropout { x, mask } => {
                vec![(*x, g.iter().zip(mask).map(|(a, m)| a * m).collect())]
            }
            Op::Sum(x) => vec![(*x, vec![g[0]; self.value(*x).numel()])],
            Op::Mean(x) => {
                let n = self.value(*x).numel();
                vec![(*x, vec![g[0] / n as f64; n])]
            }
            Op::MeanAxis { x, axis } => {
                let (outer, len, inner) = axis_blocks(self.shape(*x), *axis);
                let mut gx = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for l in 0..len {
                        for i in 0..inner {
                            gx[(o * len + l) * inner + i] = g[o * inner + i] / len as f64;
                        }
                    }
                }
                vec![(*x, gx)]
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = axis_blocks(node.value.shape(), *axis);
                let mut offset = 0;
                let mut out = Vec::with_capacity(inputs.len());
                for &v in inputs {
                    let len = self.shape(v)[*axis];
                    let mut gv = Vec::with_capacity(outer * len * inner);
                    for o in 0..outer {
                        let start = (o * total + offset) * inner;
                        gv.extend_from_slice(&g[start..start + len * inner]);
                    }
                    offset += len;
                    out.push((v, gv));
                }
                out
            }
            Op::ScatterRows {
                base,
                src,
                rows,
                len,
                width,
            } => {
                let mut gbase = g.to_vec();
                let count = rows.first().map_or(0, Vec::len);
                let mut gsrc = vec![0.0; rows.len() * count * width];
                for (grp, sel) in rows.iter().enumerate() {
                    for (j, &r) in sel.iter().enumerate() {
                        let at = (grp * len + r) * width;
                        let to = (grp * count + j) * width;
                        gsrc[to..to + width].copy_from_slice(&g[at..at + width]);
                        gbase[at..at + width].iter_mut().for_each(|v| *v = 0.0);
                    }
                }
                vec![(*base, gbase), (*src, gsrc)]
            }
        }
    }
}

fn row_blocks(shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(dim_err!("row ops need rank >= 2, got {shape:?}"));
    }
    let nd = shape.len();
    Ok((shape[..nd - 2].iter().product(), shape[nd - 2], shape[nd - 1]))
}

fn matmul_kernel(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let b_row = &b[p * n..(p + 1) * n];
            for (o, bv) in row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

#[cfg(test)]
mod tests;
