//! Dense tensor primitives with hand-written reverse-mode rules, plus the
//! central-difference checker used to certify every gradient in the crate.
//!
//! All arithmetic is `f64`. Operations work on slices where they can; a
//! [`Tensor`] is only a shape plus a flat row-major buffer.

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{FanError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(FanError::Dimension(format!("shape {shape:?} has a zero dimension")));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(FanError::Dimension(format!(
                "shape {shape:?} needs {len} entries, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Width of a row: product of all trailing dimensions.
    pub fn row_len(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.row_len();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let w = self.row_len();
        &mut self.data[i * w..(i + 1) * w]
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// How weight decay treats a parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    /// Lookup table: only rows that received gradient this step are decayed.
    Embedding,
}

/// A learnable tensor together with its gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
    pub kind: ParamKind,
}

impl Param {
    pub fn new(value: Tensor, kind: ParamKind) -> Self {
        let grad = Tensor::zeros(value.shape());
        Param { value, grad, kind }
    }

    pub fn zeros(shape: &[usize], kind: ParamKind) -> Self {
        Param::new(Tensor::zeros(shape), kind)
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// A model exposing its parameters by stable name and order.
pub trait ParamSet {
    fn params(&self) -> Vec<(String, &Param)>;
    fn params_mut(&mut self) -> Vec<(String, &mut Param)>;

    fn zero_grad(&mut self) {
        for (_, p) in self.params_mut() {
            p.zero_grad();
        }
    }

    fn parameter_count(&self) -> usize {
        self.params().iter().map(|(_, p)| p.value.len()).sum()
    }

    /// Fails naming the first tensor holding a NaN or infinity.
    fn check_finite(&self) -> Result<()> {
        for (name, p) in self.params() {
            if !p.value.is_finite() {
                return Err(FanError::Numeric(format!("parameter {name} became non-finite")));
            }
        }
        Ok(())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y = W·x + b` for `W: [n_out × n_in]`.
pub fn affine(x: &[f64], w: &Tensor, b: &[f64]) -> Result<Vec<f64>> {
    if w.shape().len() != 2 || w.shape()[1] != x.len() || w.shape()[0] != b.len() {
        return Err(FanError::Dimension(format!(
            "affine: W {:?} cannot map x [{}] onto b [{}]",
            w.shape(),
            x.len(),
            b.len()
        )));
    }
    Ok((0..w.rows()).map(|i| dot(w.row(i), x) + b[i]).collect())
}

/// Reverse rule for [`affine`]; gradients are accumulated, not overwritten.
///
/// `dx` may be `None` when the input is a constant.
pub fn affine_backward(
    x: &[f64],
    w: &Tensor,
    dy: &[f64],
    dx: Option<&mut [f64]>,
    dw: Option<&mut Tensor>,
    db: Option<&mut [f64]>,
) {
    if let Some(dx) = dx {
        for (i, &g) in dy.iter().enumerate() {
            if g != 0.0 {
                for (d, &wij) in dx.iter_mut().zip(w.row(i)) {
                    *d += g * wij;
                }
            }
        }
    }
    if let Some(dw) = dw {
        for (i, &g) in dy.iter().enumerate() {
            if g != 0.0 {
                for (d, &xj) in dw.row_mut(i).iter_mut().zip(x) {
                    *d += g * xj;
                }
            }
        }
    }
    if let Some(db) = db {
        for (d, &g) in db.iter_mut().zip(dy) {
            *d += g;
        }
    }
}

pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(FanError::Dimension("softmax of an empty vector".into()));
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|&x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Given `y = softmax(v)` and `dL/dy`, returns `dL/dv`.
pub fn softmax_backward(y: &[f64], dy: &[f64]) -> Vec<f64> {
    let inner = dot(y, dy);
    y.iter().zip(dy).map(|(&yi, &gi)| yi * (gi - inner)).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(FanError::Dimension(format!(
            "cosine of vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(FanError::Degenerate("cosine similarity of a zero-norm vector".into()));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Partial derivatives of `cos(a, b)` with respect to `a` and `b`.
pub fn cosine_gradients(a: &[f64], b: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let cos = cosine_similarity(a, b)?;
    let (na, nb) = (norm(a), norm(b));
    let da = a
        .iter()
        .zip(b)
        .map(|(&ai, &bi)| bi / (na * nb) - cos * ai / (na * na))
        .collect();
    let db = a
        .iter()
        .zip(b)
        .map(|(&ai, &bi)| ai / (na * nb) - cos * bi / (nb * nb))
        .collect();
    Ok((da, db))
}

/// Outcome of a central-difference gradient audit.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub coordinates: usize,
    /// Parameter name, flat index, analytic and numeric value at the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
}

/// Compares the gradients stored in `params` against central differences of `loss`.
///
/// Coordinates are drawn round-robin over the parameter tensors so every
/// group is covered, and uniformly within each tensor. The relative error of
/// one coordinate is `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn finite_difference_check<P, F>(params: &P, loss: F, eps: f64, sample_count: usize, seed: u64) -> Result<GradCheck>
where
    P: ParamSet + Clone,
    F: Fn(&P) -> Result<f64>,
{
    if eps <= 0.0 {
        return Err(FanError::Config(format!(
            "finite-difference eps must be positive, got {eps}"
        )));
    }
    let base = loss(params)?;
    if !base.is_finite() {
        return Err(FanError::Numeric(format!("loss evaluated to {base}")));
    }
    let groups: Vec<(String, usize)> = params
        .params()
        .into_iter()
        .map(|(name, p)| (name, p.value.len()))
        .filter(|(_, len)| *len > 0)
        .collect();
    if groups.is_empty() {
        return Ok(GradCheck {
            max_rel_error: 0.0,
            coordinates: 0,
            worst: None,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Distribute coordinates over groups, drawing distinct indices where possible.
    let mut picks: Vec<(usize, usize)> = Vec::with_capacity(sample_count);
    for (g, (_, len)) in groups.iter().enumerate() {
        let share = sample_count / groups.len() + usize::from(g < sample_count % groups.len());
        if share <= *len {
            picks.extend(sample_indices(&mut rng, *len, share).into_iter().map(|i| (g, i)));
        } else {
            picks.extend((0..share).map(|_| (g, rng.gen_range(0..*len))));
        }
    }

    let mut probe = params.clone();
    let mut report = GradCheck {
        max_rel_error: 0.0,
        coordinates: picks.len(),
        worst: None,
    };
    for (g, idx) in picks {
        let name = &groups[g].0;
        let (analytic, original) = {
            let (_, p) = &params.params()[g];
            (p.grad.data()[idx], p.value.data()[idx])
        };
        set_coordinate(&mut probe, g, idx, original + eps);
        let up = loss(&probe)?;
        set_coordinate(&mut probe, g, idx, original - eps);
        let down = loss(&probe)?;
        set_coordinate(&mut probe, g, idx, original);
        if !up.is_finite() || !down.is_finite() {
            return Err(FanError::Numeric(format!(
                "loss became non-finite perturbing {name}[{idx}]"
            )));
        }
        let numeric = (up - down) / (2.0 * eps);
        let denom = analytic.abs().max(numeric.abs()).max(1e-8);
        let rel = (analytic - numeric).abs() / denom;
        if report.worst.is_none() || rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst = Some((name.clone(), idx, analytic, numeric));
        }
    }
    Ok(report)
}

fn set_coordinate<P: ParamSet>(params: &mut P, group: usize, idx: usize, value: f64) {
    let mut all = params.params_mut();
    all[group].1.value.data_mut()[idx] = value;
}
