//! Reverse-mode differentiation on an explicit tape.
//!
//! Nodes are appended in forward order, which is already a topological
//! order, so the backward pass is a single reverse sweep that visits each
//! node exactly once. Each node's backward closure maps the node's output
//! gradient to one gradient tensor per parent; values a closure needs are
//! captured by clone at construction time (everything here is small).

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

type BackFn = Box<dyn Fn(&Tensor) -> Vec<Tensor>>;

struct Node {
    value: Tensor,
    grad: Tensor,
    parents: Vec<usize>,
    back: Option<BackFn>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].grad
    }

    fn push(&mut self, value: Tensor, parents: Vec<usize>, back: Option<BackFn>) -> NodeId {
        let grad = Tensor::zeros_like(&value);
        self.nodes.push(Node {
            value,
            grad,
            parents,
            back,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Custom operation hook for ops defined outside this module
    /// (the transducer lattice loss and the distillation KL).
    pub(crate) fn push_custom(
        &mut self,
        value: Tensor,
        parents: Vec<NodeId>,
        back: BackFn,
    ) -> NodeId {
        let parents = parents.into_iter().map(|p| p.0).collect();
        self.push(value, parents, Some(back))
    }

    /// Input or parameter node; gradients accumulate but nothing flows past it.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, vec![], None)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let va = self.value(a).clone();
        let vb = self.value(b).clone();
        let out = va.matmul(&vb)?;
        let back: BackFn = Box::new(move |g: &Tensor| {
            let k = va.last_dim();
            let n = vb.shape()[1];
            let m = va.leading_numel();
            let g2 = g.reshape(vec![m, n]).expect("grad shape");
            let bt = vb.transpose2().expect("rank 2");
            let ga = g2
                .matmul(&bt)
                .expect("shapes agree")
                .reshape(va.shape().to_vec())
                .expect("shape");
            let a2 = va.reshape(vec![m, k]).expect("shape");
            let gb = a2.transpose2().expect("rank 2").matmul(&g2).expect("shapes agree");
            vec![ga, gb]
        });
        Ok(self.push(out, vec![a.0, b.0], Some(back)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.value(a).add(self.value(b))?;
        let back: BackFn = Box::new(|g: &Tensor| vec![g.clone(), g.clone()]);
        Ok(self.push(out, vec![a.0, b.0], Some(back)))
    }

    /// `a[...×n] + bias[n]`, bias broadcast over all leading axes.
    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let va = self.value(a);
        let vb = self.value(bias);
        let n = va.last_dim();
        if vb.shape() != [n] {
            return Err(Error::Dimension(format!(
                "add_row: {:?} + bias {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let rows = va.leading_numel();
        let mut data = va.data().to_vec();
        for r in 0..rows {
            for j in 0..n {
                data[r * n + j] += vb.data()[j];
            }
        }
        let out = Tensor::new(va.shape().to_vec(), data)?;
        let back: BackFn = Box::new(move |g: &Tensor| {
            let mut gb = vec![0.0; n];
            for r in 0..rows {
                for j in 0..n {
                    gb[j] += g.data()[r * n + j];
                }
            }
            vec![g.clone(), Tensor::new(vec![n], gb).expect("shape")]
        });
        Ok(self.push(out, vec![a.0, bias.0], Some(back)))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let out = self.value(a).scale(c);
        let back: BackFn = Box::new(move |g: &Tensor| vec![g.scale(c)]);
        self.push(out, vec![a.0], Some(back))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let va = self.value(a).clone();
        let out = va.map(|v| v.max(0.0));
        let back: BackFn = Box::new(move |g: &Tensor| {
            let data = g
                .data()
                .iter()
                .zip(va.data())
                .map(|(&g, &v)| if v > 0.0 { g } else { 0.0 })
                .collect();
            vec![Tensor::new(va.shape().to_vec(), data).expect("shape")]
        });
        self.push(out, vec![a.0], Some(back))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(f64::tanh);
        let saved = out.clone();
        let back: BackFn = Box::new(move |g: &Tensor| {
            let data = g
                .data()
                .iter()
                .zip(saved.data())
                .map(|(&g, &y)| g * (1.0 - y * y))
                .collect();
            vec![Tensor::new(saved.shape().to_vec(), data).expect("shape")]
        });
        self.push(out, vec![a.0], Some(back))
    }

    /// Concatenate two rank-2 tensors along the last axis.
    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let va = self.value(a);
        let vb = self.value(b);
        let (m, p) = va.dims2()?;
        let (m2, q) = vb.dims2()?;
        if m != m2 {
            return Err(Error::Dimension(format!(
                "concat_cols: {:?} vs {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let mut data = Vec::with_capacity(m * (p + q));
        for r in 0..m {
            data.extend_from_slice(&va.data()[r * p..(r + 1) * p]);
            data.extend_from_slice(&vb.data()[r * q..(r + 1) * q]);
        }
        let out = Tensor::new(vec![m, p + q], data)?;
        let back: BackFn = Box::new(move |g: &Tensor| {
            let mut ga = vec![0.0; m * p];
            let mut gb = vec![0.0; m * q];
            for r in 0..m {
                let row = &g.data()[r * (p + q)..(r + 1) * (p + q)];
                ga[r * p..(r + 1) * p].copy_from_slice(&row[..p]);
                gb[r * q..(r + 1) * q].copy_from_slice(&row[p..]);
            }
            vec![
                Tensor::new(vec![m, p], ga).expect("shape"),
                Tensor::new(vec![m, q], gb).expect("shape"),
            ]
        });
        Ok(self.push(out, vec![a.0, b.0], Some(back)))
    }

    /// Row lookup: `table[V̂×E]` gathered by `ids` into `[len×E]`.
    /// Backward scatters gradients by id.
    pub fn embedding(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let vt = self.value(table);
        let (rows, e) = vt.dims2()?;
        if let Some(&bad) = ids.iter().find(|&&id| id >= rows) {
            return Err(Error::Index(format!(
                "embedding id {} out of range (table has {} rows)",
                bad, rows
            )));
        }
        let mut data = Vec::with_capacity(ids.len() * e);
        for &id in ids {
            data.extend_from_slice(&vt.data()[id * e..(id + 1) * e]);
        }
        let out = Tensor::new(vec![ids.len(), e], data)?;
        let ids_saved = ids.to_vec();
        let back: BackFn = Box::new(move |g: &Tensor| {
            let mut gt = vec![0.0; rows * e];
            for (r, &id) in ids_saved.iter().enumerate() {
                for j in 0..e {
                    gt[id * e + j] += g.data()[r * e + j];
                }
            }
            vec![Tensor::new(vec![rows, e], gt).expect("shape")]
        });
        Ok(self.push(out, vec![table.0], Some(back)))
    }

    /// log-softmax over the last axis with max-subtraction.
    pub fn log_softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let va = self.value(a);
        let k = va.last_dim();
        if k == 0 || va.rank() == 0 {
            return Err(Error::Dimension("log_softmax: empty last axis".into()));
        }
        let rows = va.leading_numel();
        let mut data = va.data().to_vec();
        for r in 0..rows {
            let row = &mut data[r * k..(r + 1) * k];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let out = Tensor::new(va.shape().to_vec(), data)?;
        let saved = out.clone();
        let back: BackFn = Box::new(move |g: &Tensor| {
            let mut gd = g.data().to_vec();
            for r in 0..rows {
                let gs: f64 = g.data()[r * k..(r + 1) * k].iter().sum();
                for j in 0..k {
                    gd[r * k + j] -= saved.data()[r * k + j].exp() * gs;
                }
            }
            vec![Tensor::new(saved.shape().to_vec(), gd).expect("shape")]
        });
        Ok(self.push(out, vec![a.0], Some(back)))
    }

    /// Zero out whole rows (first axis) selected by `mask`.
    pub fn mask_rows(&mut self, a: NodeId, mask: &[bool]) -> Result<NodeId> {
        let va = self.value(a);
        if va.rank() < 1 || va.shape()[0] != mask.len() {
            return Err(Error::Dimension(format!(
                "mask_rows: {} rows vs {} mask entries",
                va.shape()[0],
                mask.len()
            )));
        }
        let row_len = va.numel() / mask.len();
        let mut data = va.data().to_vec();
        for (r, &m) in mask.iter().enumerate() {
            if m {
                data[r * row_len..(r + 1) * row_len].fill(0.0);
            }
        }
        let out = Tensor::new(va.shape().to_vec(), data)?;
        let mask_saved = mask.to_vec();
        let back: BackFn = Box::new(move |g: &Tensor| {
            let mut gd = g.data().to_vec();
            for (r, &m) in mask_saved.iter().enumerate() {
                if m {
                    gd[r * row_len..(r + 1) * row_len].fill(0.0);
                }
            }
            vec![Tensor::new(g.shape().to_vec(), gd).expect("shape")]
        });
        Ok(self.push(out, vec![a.0], Some(back)))
    }

    /// DFSMN memory term: `m_t = p_t + Σ_i left_i ⊙ p_{t−i} + Σ_j right_j ⊙ p_{t+j}`,
    /// with out-of-range taps contributing zero. Taps are per-channel vectors.
    pub fn fsmn_memory(&mut self, p: NodeId, left: NodeId, right: NodeId) -> Result<NodeId> {
        let vp = self.value(p).clone();
        let vl = self.value(left).clone();
        let vr = self.value(right).clone();
        let (t_len, h) = vp.dims2()?;
        let (n1, hl) = vl.dims2()?;
        let (n2, hr) = vr.dims2()?;
        if hl != h || hr != h {
            return Err(Error::Dimension(format!(
                "fsmn_memory: channel dims {} / {} / {}",
                h, hl, hr
            )));
        }
        let mut data = vp.data().to_vec();
        for t in 0..t_len {
            for i in 1..=n1 {
                if t >= i {
                    for c in 0..h {
                        data[t * h + c] += vl.data()[(i - 1) * h + c] * vp.data()[(t - i) * h + c];
                    }
                }
            }
            for j in 1..=n2 {
                if t + j < t_len {
                    for c in 0..h {
                        data[t * h + c] += vr.data()[(j - 1) * h + c] * vp.data()[(t + j) * h + c];
                    }
                }
            }
        }
        let out = Tensor::new(vec![t_len, h], data)?;
        let back: BackFn = Box::new(move |g: &Tensor| {
            let mut gp = g.data().to_vec();
            let mut gl = vec![0.0; n1 * h];
            let mut gr = vec![0.0; n2 * h];
            for t in 0..t_len {
                for i in 1..=n1 {
                    if t >= i {
                        for c in 0..h {
                            // m_t gets left_i ⊙ p_{t−i}
                            gp[(t - i) * h + c] += vl.data()[(i - 1) * h + c] * g.data()[t * h + c];
                            gl[(i - 1) * h + c] += vp.data()[(t - i) * h + c] * g.data()[t * h + c];
                        }
                    }
                }
                for j in 1..=n2 {
                    if t + j < t_len {
                        for c in 0..h {
                            gp[(t + j) * h + c] += vr.data()[(j - 1) * h + c] * g.data()[t * h + c];
                            gr[(j - 1) * h + c] += vp.data()[(t + j) * h + c] * g.data()[t * h + c];
                        }
                    }
                }
            }
            vec![
                Tensor::new(vec![t_len, h], gp).expect("shape"),
                Tensor::new(vec![n1, h], gl).expect("shape"),
                Tensor::new(vec![n2, h], gr).expect("shape"),
            ]
        });
        Ok(self.push(out, vec![p.0, left.0, right.0], Some(back)))
    }

    /// `out[t,u,:] = a[t,:] + b[u,:]` — the joiner's broadcast sum.
    pub fn outer_add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let va = self.value(a);
        let vb = self.value(b);
        let (t_len, j) = va.dims2()?;
        let (u_len, j2) = vb.dims2()?;
        if j != j2 {
            return Err(Error::Dimension(format!(
                "outer_add: {:?} vs {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let mut data = Vec::with_capacity(t_len * u_len * j);
        for t in 0..t_len {
            for u in 0..u_len {
                for c in 0..j {
                    data.push(va.data()[t * j + c] + vb.data()[u * j + c]);
                }
            }
        }
        let out = Tensor::new(vec![t_len, u_len, j], data)?;
        let back: BackFn = Box::new(move |g: &Tensor| {
            let mut ga = vec![0.0; t_len * j];
            let mut gb = vec![0.0; u_len * j];
            for t in 0..t_len {
                for u in 0..u_len {
                    for c in 0..j {
                        let gv = g.data()[(t * u_len + u) * j + c];
                        ga[t * j + c] += gv;
                        gb[u * j + c] += gv;
                    }
                }
            }
            vec![
                Tensor::new(vec![t_len, j], ga).expect("shape"),
                Tensor::new(vec![u_len, j], gb).expect("shape"),
            ]
        });
        Ok(self.push(out, vec![a.0, b.0], Some(back)))
    }

    /// Free reshape; backward reshapes the gradient back.
    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let old_shape = self.value(a).shape().to_vec();
        let out = self.value(a).reshape(shape)?;
        let back: BackFn = Box::new(move |g: &Tensor| {
            vec![g.reshape(old_shape.clone()).expect("same numel")]
        });
        Ok(self.push(out, vec![a.0], Some(back)))
    }

    /// Reverse sweep from `root` (must be a scalar). Each node is visited
    /// exactly once, in reverse construction (topological) order.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        if self.nodes[root.0].value.numel() != 1 {
            return Err(Error::Dimension("backward: root must be a scalar".into()));
        }
        if !self.nodes[root.0].value.is_finite() {
            return Err(Error::Numerical("backward: non-finite loss value".into()));
        }
        self.nodes[root.0].grad = Tensor::scalar(1.0);
        for i in (0..=root.0).rev() {
            let parent_grads = match &self.nodes[i].back {
                Some(back) => back(&self.nodes[i].grad),
                None => continue,
            };
            let parents = self.nodes[i].parents.clone();
            debug_assert_eq!(parent_grads.len(), parents.len());
            for (p, g) in parents.into_iter().zip(parent_grads) {
                self.nodes[p].grad.add_assign(&g)?;
            }
        }
        Ok(())
    }
}
