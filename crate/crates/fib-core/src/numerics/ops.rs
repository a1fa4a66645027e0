//! Differentiable op constructors.
//!
//! Each op computes its forward value eagerly, then (when any input needs
//! a gradient) attaches a closure that maps the output gradient to parent
//! gradient contributions. Closures capture value copies, never the
//! output tensor, so graphs cannot form reference cycles.

use super::tensor::{Op, Tensor};
use crate::{Error, Result};

fn dims2(t: &Tensor) -> (usize, usize) {
    let s = t.shape();
    match s.len() {
        2 => (s[0], s[1]),
        1 => (1, s[0]),
        _ => panic!("op expects 1-d or 2-d tensor, got {s:?}"),
    }
}

impl Tensor {
    /// Matrix product of an m×k and a k×n tensor.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (m, k) = dims2(self);
        let (k2, n) = dims2(rhs);
        if k != k2 {
            return Err(Error::shape("matmul", &self.shape(), &rhs.shape()));
        }
        let a = self.value_vec();
        let b = rhs.value_vec();
        let mut out = vec![0.0; m * n];
        matmul_into(&a, &b, m, k, n, &mut out);

        if !self.needs_grad() && !rhs.needs_grad() {
            return Ok(Tensor::constant(vec![m, n], out));
        }
        let (pa, pb) = (self.clone(), rhs.clone());
        let (na, nb) = (self.needs_grad(), rhs.needs_grad());
        let op = Op {
            parents: vec![self.clone(), rhs.clone()],
            backward: Box::new(move |g| {
                if na {
                    // dA = G * B^T
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        for j in 0..n {
                            let gij = g[i * n + j];
                            if gij == 0.0 {
                                continue;
                            }
                            for l in 0..k {
                                da[i * k + l] += gij * b[l * n + j];
                            }
                        }
                    }
                    pa.accumulate_grad(&da);
                }
                if nb {
                    // dB = A^T * G
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        for l in 0..k {
                            let ail = a[i * k + l];
                            if ail == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                db[l * n + j] += ail * g[i * n + j];
                            }
                        }
                    }
                    pb.accumulate_grad(&db);
                }
            }),
        };
        Ok(Tensor::from_op(vec![m, n], out, op))
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        if self.shape() != rhs.shape() {
            return Err(Error::shape("add", &self.shape(), &rhs.shape()));
        }
        let out: Vec<f64> = self
            .values()
            .iter()
            .zip(rhs.values().iter())
            .map(|(x, y)| x + y)
            .collect();
        if !self.needs_grad() && !rhs.needs_grad() {
            return Ok(Tensor::constant(self.shape(), out));
        }
        let (pa, pb) = (self.clone(), rhs.clone());
        let (na, nb) = (self.needs_grad(), rhs.needs_grad());
        let op = Op {
            parents: vec![self.clone(), rhs.clone()],
            backward: Box::new(move |g| {
                if na {
                    pa.accumulate_grad(g);
                }
                if nb {
                    pb.accumulate_grad(g);
                }
            }),
        };
        Ok(Tensor::from_op(self.shape(), out, op))
    }

    /// Adds a length-n bias vector to every row of an m×n tensor.
    pub fn add_bias(&self, bias: &Tensor) -> Result<Tensor> {
        let (m, n) = dims2(self);
        if bias.len() != n {
            return Err(Error::shape("add_bias", &self.shape(), &bias.shape()));
        }
        let bv = bias.value_vec();
        let out: Vec<f64> = self
            .values()
            .iter()
            .enumerate()
            .map(|(idx, x)| x + bv[idx % n])
            .collect();
        if !self.needs_grad() && !bias.needs_grad() {
            return Ok(Tensor::constant(self.shape(), out));
        }
        let (pa, pb) = (self.clone(), bias.clone());
        let (na, nb) = (self.needs_grad(), bias.needs_grad());
        let op = Op {
            parents: vec![self.clone(), bias.clone()],
            backward: Box::new(move |g| {
                if na {
                    pa.accumulate_grad(g);
                }
                if nb {
                    pb.accumulate_grad_with(|gb| {
                        for i in 0..m {
                            for j in 0..n {
                                gb[j] += g[i * n + j];
                            }
                        }
                    });
                }
            }),
        };
        Ok(Tensor::from_op(self.shape(), out, op))
    }

    /// Hadamard (elementwise) product.
    pub fn hadamard(&self, rhs: &Tensor) -> Result<Tensor> {
        if self.shape() != rhs.shape() {
            return Err(Error::shape("hadamard", &self.shape(), &rhs.shape()));
        }
        let a = self.value_vec();
        let b = rhs.value_vec();
        let out: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
        if !self.needs_grad() && !rhs.needs_grad() {
            return Ok(Tensor::constant(self.shape(), out));
        }
        let (pa, pb) = (self.clone(), rhs.clone());
        let (na, nb) = (self.needs_grad(), rhs.needs_grad());
        let op = Op {
            parents: vec![self.clone(), rhs.clone()],
            backward: Box::new(move |g| {
                if na {
                    let da: Vec<f64> = g.iter().zip(&b).map(|(gi, bi)| gi * bi).collect();
                    pa.accumulate_grad(&da);
                }
                if nb {
                    let db: Vec<f64> = g.iter().zip(&a).map(|(gi, ai)| gi * ai).collect();
                    pb.accumulate_grad(&db);
                }
            }),
        };
        Ok(Tensor::from_op(self.shape(), out, op))
    }

    /// Multiplication by a compile-time constant.
    pub fn scale(&self, c: f64) -> Tensor {
        let out: Vec<f64> = self.values().iter().map(|x| x * c).collect();
        if !self.needs_grad() {
            return Tensor::constant(self.shape(), out);
        }
        let p = self.clone();
        let op = Op {
            parents: vec![self.clone()],
            backward: Box::new(move |g| {
                let d: Vec<f64> = g.iter().map(|gi| gi * c).collect();
                p.accumulate_grad(&d);
            }),
        };
        Tensor::from_op(self.shape(), out, op)
    }

    /// Logistic sigmoid, computed in the numerically stable branch form.
    pub fn sigmoid(&self) -> Tensor {
        let out: Vec<f64> = self
            .values()
            .iter()
            .map(|&x| {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            })
            .collect();
        if !self.needs_grad() {
            return Tensor::constant(self.shape(), out);
        }
        let p = self.clone();
        let y = out.clone();
        let op = Op {
            parents: vec![self.clone()],
            backward: Box::new(move |g| {
                let d: Vec<f64> = g.iter().zip(&y).map(|(gi, yi)| gi * yi * (1.0 - yi)).collect();
                p.accumulate_grad(&d);
            }),
        };
        Tensor::from_op(self.shape(), out, op)
    }

    pub fn tanh(&self) -> Tensor {
        let out: Vec<f64> = self.values().iter().map(|x| x.tanh()).collect();
        if !self.needs_grad() {
            return Tensor::constant(self.shape(), out);
        }
        let p = self.clone();
        let y = out.clone();
        let op = Op {
            parents: vec![self.clone()],
            backward: Box::new(move |g| {
                let d: Vec<f64> = g.iter().zip(&y).map(|(gi, yi)| gi * (1.0 - yi * yi)).collect();
                p.accumulate_grad(&d);
            }),
        };
        Tensor::from_op(self.shape(), out, op)
    }

    /// Row-wise softmax of an m×n tensor (max-shifted for stability).
    pub fn softmax_rows(&self) -> Tensor {
        let (m, n) = dims2(self);
        let v = self.value_vec();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            softmax_row(&v[i * n..(i + 1) * n], &mut out[i * n..(i + 1) * n]);
        }
        if !self.needs_grad() {
            return Tensor::constant(self.shape(), out);
        }
        let p = self.clone();
        let y = out.clone();
        let op = Op {
            parents: vec![self.clone()],
            backward: Box::new(move |g| {
                // dx_i = y_i * (g_i - <g, y>) per row
                let mut d = vec![0.0; m * n];
                for i in 0..m {
                    let row = i * n..(i + 1) * n;
                    let dot: f64 = g[row.clone()]
                        .iter()
                        .zip(&y[row.clone()])
                        .map(|(gi, yi)| gi * yi)
                        .sum();
                    for j in 0..n {
                        let idx = i * n + j;
                        d[idx] = y[idx] * (g[idx] - dot);
                    }
                }
                p.accumulate_grad(&d);
            }),
        };
        Tensor::from_op(self.shape(), out, op)
    }

    /// Sum of all entries, as a scalar tensor.
    pub fn sum(&self) -> Tensor {
        let s: f64 = self.values().iter().sum();
        if !self.needs_grad() {
            return Tensor::scalar(s);
        }
        let p = self.clone();
        let n = self.len();
        let op = Op {
            parents: vec![self.clone()],
            backward: Box::new(move |g| {
                p.accumulate_grad(&vec![g[0]; n]);
            }),
        };
        Tensor::from_op(vec![1], vec![s], op)
    }

    /// Mean of all entries, as a scalar tensor.
    pub fn mean(&self) -> Tensor {
        let n = self.len();
        let s: f64 = self.values().iter().sum();
        let mv = s / n as f64;
        if !self.needs_grad() {
            return Tensor::scalar(mv);
        }
        let p = self.clone();
        let op = Op {
            parents: vec![self.clone()],
            backward: Box::new(move |g| {
                p.accumulate_grad(&vec![g[0] / n as f64; n]);
            }),
        };
        Tensor::from_op(vec![1], vec![mv], op)
    }

    /// Rows `r0..r1` of an m×n tensor.
    pub fn slice_rows(&self, r0: usize, r1: usize) -> Result<Tensor> {
        let (m, n) = dims2(self);
        if r0 > r1 || r1 > m {
            return Err(Error::shape("slice_rows", &self.shape(), &[r0, r1]));
        }
        let out = self.values()[r0 * n..r1 * n].to_vec();
        let rows = r1 - r0;
        if !self.needs_grad() {
            return Ok(Tensor::constant(vec![rows, n], out));
        }
        let p = self.clone();
        let op = Op {
            parents: vec![self.clone()],
            backward: Box::new(move |g| {
                p.accumulate_grad_with(|gp| {
                    for (i, gi) in g.iter().enumerate() {
                        gp[r0 * n + i] += gi;
                    }
                });
            }),
        };
        Ok(Tensor::from_op(vec![rows, n], out, op))
    }

    /// Columns `c0..c1` of an m×n tensor.
    pub fn slice_cols(&self, c0: usize, c1: usize) -> Result<Tensor> {
        let (m, n) = dims2(self);
        if c0 > c1 || c1 > n {
            return Err(Error::shape("slice_cols", &self.shape(), &[c0, c1]));
        }
        let w = c1 - c0;
        let v = self.values();
        let mut out = Vec::with_capacity(m * w);
        for i in 0..m {
            out.extend_from_slice(&v[i * n + c0..i * n + c1]);
        }
        drop(v);
        if !self.needs_grad() {
            return Ok(Tensor::constant(vec![m, w], out));
        }
        let p = self.clone();
        let op = Op {
            parents: vec![self.clone()],
            backward: Box::new(move |g| {
                p.accumulate_grad_with(|gp| {
                    for i in 0..m {
                        for j in 0..w {
                            gp[i * n + c0 + j] += g[i * w + j];
                        }
                    }
                });
            }),
        };
        Ok(Tensor::from_op(vec![m, w], out, op))
    }

    /// Replicates a length-n vector (or 1×n tensor) into m rows.
    pub fn broadcast_rows(&self, m: usize) -> Tensor {
        let n = self.len();
        let v = self.value_vec();
        let mut out = Vec::with_capacity(m * n);
        for _ in 0..m {
            out.extend_from_slice(&v);
        }
        if !self.needs_grad() {
            return Tensor::constant(vec![m, n], out);
        }
        let p = self.clone();
        let op = Op {
            parents: vec![self.clone()],
            backward: Box::new(move |g| {
                p.accumulate_grad_with(|gp| {
                    for i in 0..m {
                        for j in 0..n {
                            gp[j] += g[i * n + j];
                        }
                    }
                });
            }),
        };
        Tensor::from_op(vec![m, n], out, op)
    }
}

/// Row lookup: builds a `len(ids)`×d tensor from rows of a table.
///
/// This is the embedding op; backward scatter-adds into the picked rows.
pub fn pick_rows(table: &Tensor, ids: &[usize]) -> Result<Tensor> {
    let (v, d) = dims2(table);
    for &id in ids {
        if id >= v {
            return Err(Error::Validation(format!(
                "row index {id} out of range for table with {v} rows"
            )));
        }
    }
    let tv = table.values();
    let mut out = Vec::with_capacity(ids.len() * d);
    for &id in ids {
        out.extend_from_slice(&tv[id * d..(id + 1) * d]);
    }
    drop(tv);
    let m = ids.len();
    if !table.needs_grad() {
        return Ok(Tensor::constant(vec![m, d], out));
    }
    let p = table.clone();
    let ids = ids.to_vec();
    let op = Op {
        parents: vec![table.clone()],
        backward: Box::new(move |g| {
            p.accumulate_grad_with(|gp| {
                for (i, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        gp[id * d + j] += g[i * d + j];
                    }
                }
            });
        }),
    };
    Ok(Tensor::from_op(vec![m, d], out, op))
}

/// Concatenates same-height tensors side by side.
pub fn concat_cols(parts: &[Tensor]) -> Result<Tensor> {
    assert!(!parts.is_empty(), "concat_cols of nothing");
    let m = dims2(&parts[0]).0;
    let widths: Vec<usize> = parts.iter().map(|p| dims2(p).1).collect();
    for p in parts {
        if dims2(p).0 != m {
            return Err(Error::shape("concat_cols", &parts[0].shape(), &p.shape()));
        }
    }
    let total: usize = widths.iter().sum();
    let mut out = vec![0.0; m * total];
    let mut col = 0;
    for (p, &w) in parts.iter().zip(&widths) {
        let v = p.values();
        for i in 0..m {
            out[i * total + col..i * total + col + w].copy_from_slice(&v[i * w..(i + 1) * w]);
        }
        col += w;
    }
    if !parts.iter().any(|p| p.needs_grad()) {
        return Ok(Tensor::constant(vec![m, total], out));
    }
    let caps: Vec<(Tensor, bool)> = parts.iter().map(|p| (p.clone(), p.needs_grad())).collect();
    let widths_c = widths.clone();
    let op = Op {
        parents: parts.to_vec(),
        backward: Box::new(move |g| {
            let mut col = 0;
            for ((p, needs), &w) in caps.iter().zip(&widths_c) {
                if *needs {
                    let mut d = vec![0.0; m * w];
                    for i in 0..m {
                        d[i * w..(i + 1) * w]
                            .copy_from_slice(&g[i * total + col..i * total + col + w]);
                    }
                    p.accumulate_grad(&d);
                }
                col += w;
            }
        }),
    };
    Ok(Tensor::from_op(vec![m, total], out, op))
}

/// Stacks same-width tensors on top of each other.
pub fn concat_rows(parts: &[Tensor]) -> Result<Tensor> {
    assert!(!parts.is_empty(), "concat_rows of nothing");
    let n = dims2(&parts[0]).1;
    for p in parts {
        if dims2(p).1 != n {
            return Err(Error::shape("concat_rows", &parts[0].shape(), &p.shape()));
        }
    }
    let heights: Vec<usize> = parts.iter().map(|p| dims2(p).0).collect();
    let total: usize = heights.iter().sum();
    let mut out = Vec::with_capacity(total * n);
    for p in parts {
        out.extend_from_slice(&p.values());
    }
    if !parts.iter().any(|p| p.needs_grad()) {
        return Ok(Tensor::constant(vec![total, n], out));
    }
    let caps: Vec<(Tensor, bool, usize)> = parts
        .iter()
        .zip(&heights)
        .map(|(p, &h)| (p.clone(), p.needs_grad(), h))
        .collect();
    let op = Op {
        parents: parts.to_vec(),
        backward: Box::new(move |g| {
            let mut row = 0;
            for (p, needs, h) in &caps {
                if *needs {
                    p.accumulate_grad(&g[row * n..(row + h) * n]);
                }
                row += h;
            }
        }),
    };
    Ok(Tensor::from_op(vec![total, n], out, op))
}

/// Mean negative log-likelihood of `targets` under row-wise softmax of
/// `logits`, fused through log-sum-exp so a vanishing target probability
/// can never produce `log(0)`.
pub fn softmax_cross_entropy_mean(logits: &Tensor, targets: &[usize]) -> Result<Tensor> {
    let (m, n) = dims2(logits);
    if targets.len() != m {
        return Err(Error::shape("softmax_cross_entropy", &[m, n], &[targets.len()]));
    }
    for &t in targets {
        if t >= n {
            return Err(Error::Validation(format!(
                "target class {t} out of range for {n} classes"
            )));
        }
    }
    let v = logits.value_vec();
    let mut probs = vec![0.0; m * n];
    let mut loss = 0.0;
    for i in 0..m {
        let row = &v[i * n..(i + 1) * n];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for j in 0..n {
            let e = (row[j] - max).exp();
            probs[i * n + j] = e;
            z += e;
        }
        for j in 0..n {
            probs[i * n + j] /= z;
        }
        // -log p(target) = log(z) + max - logit[target]
        loss += z.ln() + max - row[targets[i]];
    }
    loss /= m as f64;

    if !logits.needs_grad() {
        return Ok(Tensor::scalar(loss));
    }
    let p = logits.clone();
    let targets = targets.to_vec();
    let op = Op {
        parents: vec![logits.clone()],
        backward: Box::new(move |g| {
            let scale = g[0] / m as f64;
            let mut d = vec![0.0; m * n];
            for i in 0..m {
                for j in 0..n {
                    let ind = if j == targets[i] { 1.0 } else { 0.0 };
                    d[i * n + j] = scale * (probs[i * n + j] - ind);
                }
            }
            p.accumulate_grad(&d);
        }),
    };
    Ok(Tensor::from_op(vec![1], vec![loss], op))
}

fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, &x) in out.iter_mut().zip(row) {
        *o = (x - max).exp();
        z += *o;
    }
    for o in out.iter_mut() {
        *o /= z;
    }
}

/// `i*k` loop order so the inner loop streams both operands.
fn matmul_into(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        for l in 0..k {
            let ail = a[i * k + l];
            if ail == 0.0 {
                continue;
            }
            let brow = &b[l * n..(l + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += ail * brow[j];
            }
        }
    }
}
