//! Piecewise convolutional sentence encoder.
//!
//! A sentence of `n` tokens becomes an `n × d` matrix of word plus
//! head/tail relative-position embeddings, is convolved by `m` filters of
//! several widths, max-pooled over the three entity-delimited segments and
//! squashed with `tanh`, giving a vector of length `3m`.

use std::ops::Range;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Sample, Span};
use crate::error::{FanError, Result};
use crate::numerics::{Param, ParamKind, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub word_dim: usize,
    pub pos_dim: usize,
    /// Relative offsets are clipped to `[-max_relative, max_relative]`.
    pub max_relative: usize,
    pub kernel_sizes: Vec<usize>,
    pub filters_per_size: usize,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            word_dim: 64,
            pos_dim: 8,
            max_relative: 30,
            kernel_sizes: vec![2, 3, 4, 5],
            filters_per_size: 8,
            dropout: 0.5,
        }
    }
}

impl EncoderConfig {
    /// Width `d` of one embedded token row.
    pub fn input_width(&self) -> usize {
        self.word_dim + 2 * self.pos_dim
    }

    /// Total filter count `m`.
    pub fn filter_count(&self) -> usize {
        self.kernel_sizes.len() * self.filters_per_size
    }

    pub fn output_dim(&self) -> usize {
        3 * self.filter_count()
    }

    pub fn validate(&self) -> Result<()> {
        if self.word_dim == 0 || self.pos_dim == 0 {
            return Err(FanError::Config("embedding dimensions must be positive".into()));
        }
        if self.kernel_sizes.is_empty() || self.kernel_sizes.contains(&0) || self.filters_per_size == 0 {
            return Err(FanError::Config(
                "need at least one filter, every kernel size >= 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(FanError::Config(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// Filters sharing one kernel width; row `f` of `weight` is filter `f`
/// flattened as `[k × d]`, oldest window row first.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBank {
    pub kernel: usize,
    pub weight: Param,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub word: Param,
    pub pos_head: Param,
    pub pos_tail: Param,
    pub conv: Vec<ConvBank>,
}

impl EncoderParams {
    pub fn zeros(config: &EncoderConfig, vocab_size: usize) -> Self {
        let positions = 2 * config.max_relative + 1;
        let d = config.input_width();
        EncoderParams {
            word: Param::zeros(&[vocab_size, config.word_dim], ParamKind::Embedding),
            pos_head: Param::zeros(&[positions, config.pos_dim], ParamKind::Embedding),
            pos_tail: Param::zeros(&[positions, config.pos_dim], ParamKind::Embedding),
            conv: config
                .kernel_sizes
                .iter()
                .map(|&k| ConvBank {
                    kernel: k,
                    weight: Param::zeros(&[config.filters_per_size, k * d], ParamKind::Weight),
                })
                .collect(),
        }
    }

    pub fn named(&self) -> Vec<(String, &Param)> {
        let mut out = vec![
            ("encoder.word".to_string(), &self.word),
            ("encoder.pos_head".to_string(), &self.pos_head),
            ("encoder.pos_tail".to_string(), &self.pos_tail),
        ];
        for (i, bank) in self.conv.iter().enumerate() {
            out.push((format!("encoder.conv{i}.k{}", bank.kernel), &bank.weight));
        }
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut out = vec![
            ("encoder.word".to_string(), &mut self.word),
            ("encoder.pos_head".to_string(), &mut self.pos_head),
            ("encoder.pos_tail".to_string(), &mut self.pos_tail),
        ];
        for (i, bank) in self.conv.iter_mut().enumerate() {
            out.push((format!("encoder.conv{i}.k{}", bank.kernel), &mut bank.weight));
        }
        out
    }

    pub fn filter_count(&self) -> usize {
        self.conv.iter().map(|b| b.weight.value.rows()).sum()
    }

    fn max_relative(&self) -> usize {
        (self.pos_head.value.rows() - 1) / 2
    }
}

/// Table row of the relative offset `j − anchor`, clipped to `±max_relative`.
pub fn position_index(j: usize, anchor: usize, max_relative: usize) -> usize {
    let offset = j as i64 - anchor as i64;
    let clipped = offset.clamp(-(max_relative as i64), max_relative as i64);
    (clipped + max_relative as i64) as usize
}

/// Embeds a sentence as rows `[word | pos_head | pos_tail]`.
pub fn embed(sample: &Sample, params: &EncoderParams) -> Result<Tensor> {
    let vocab = params.word.value.rows();
    let (dw, dp) = (params.word.value.row_len(), params.pos_head.value.row_len());
    let lmax = params.max_relative();
    let n = sample.tokens.len();
    if n == 0 {
        return Err(FanError::Dimension(format!("sample {} has no tokens", sample.id)));
    }
    let mut h = Tensor::zeros(&[n, dw + 2 * dp]);
    for (j, &tok) in sample.tokens.iter().enumerate() {
        if tok >= vocab {
            return Err(FanError::Vocabulary { id: tok, size: vocab });
        }
        let row = h.row_mut(j);
        row[..dw].copy_from_slice(params.word.value.row(tok));
        let ph = position_index(j, sample.head_span.start, lmax);
        let pt = position_index(j, sample.tail_span.start, lmax);
        row[dw..dw + dp].copy_from_slice(params.pos_head.value.row(ph));
        row[dw + dp..].copy_from_slice(params.pos_tail.value.row(pt));
    }
    Ok(h)
}

/// Convolves `h: [n × d]` with every row of `weight: [filters × k·d]`,
/// zero-padding `k − 1` rows on the left so each output has length `n`.
pub fn convolve(h: &Tensor, kernel: usize, weight: &Tensor) -> Vec<Vec<f64>> {
    let (n, d) = (h.rows(), h.row_len());
    (0..weight.rows())
        .map(|f| {
            let w = weight.row(f);
            (0..n)
                .map(|j| {
                    let mut acc = 0.0;
                    for r in 0..kernel {
                        // Window row r sits at position j + r − (k − 1).
                        if let Some(pos) = (j + r).checked_sub(kernel - 1) {
                            acc += crate::numerics::dot(&w[r * d..(r + 1) * d], h.row(pos));
                        }
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

/// The three pooling segments `[0, b1]`, `(b1, b2]`, `(b2, n)` where `b1`
/// and `b2` are the last tokens of the entity ending first and last.
pub fn segments(n: usize, head: Span, tail: Span) -> [Range<usize>; 3] {
    let b1 = head.last().min(tail.last()).min(n - 1);
    let b2 = head.last().max(tail.last()).min(n - 1);
    [0..b1 + 1, b1 + 1..b2 + 1, b2 + 1..n]
}

/// Segment-wise maxima with the winning position of each; an empty segment
/// pools to 0 and has no winner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pooled {
    pub values: [f64; 3],
    pub argmax: [Option<usize>; 3],
}

pub fn piecewise_max_pool(p: &[f64], head: Span, tail: Span) -> Pooled {
    let mut pooled = Pooled {
        values: [0.0; 3],
        argmax: [None; 3],
    };
    for (s, range) in segments(p.len(), head, tail).into_iter().enumerate() {
        for j in range {
            if pooled.argmax[s].is_none() || p[j] > pooled.values[s] {
                pooled.values[s] = p[j];
                pooled.argmax[s] = Some(j);
            }
        }
    }
    pooled
}

/// Everything the backward pass needs from one encoded sentence.
#[derive(Debug, Clone)]
pub struct SentenceTrace {
    /// Final representation (after tanh and dropout).
    pub v: Vec<f64>,
    activated: Vec<f64>,
    /// Per-coordinate dropout multiplier (0 or `1/(1−p)`); `None` at inference.
    mask: Option<Vec<f64>>,
    h: Tensor,
    /// Winning positions, `3` per filter in filter order.
    argmax: Vec<Option<usize>>,
    tokens: Vec<usize>,
    head_start: usize,
    tail_start: usize,
}

/// Encodes one sentence. Dropout with rate `dropout.1` is applied when an
/// RNG is supplied (training), never otherwise.
pub fn encode_sentence(
    sample: &Sample,
    params: &EncoderParams,
    dropout: Option<(&mut ChaCha8Rng, f64)>,
) -> Result<SentenceTrace> {
    let h = embed(sample, params)?;
    let m = params.filter_count();
    let mut activated = Vec::with_capacity(3 * m);
    let mut argmax = Vec::with_capacity(3 * m);
    for bank in &params.conv {
        for p in convolve(&h, bank.kernel, &bank.weight.value) {
            let pooled = piecewise_max_pool(&p, sample.head_span, sample.tail_span);
            activated.extend(pooled.values.iter().map(|x| x.tanh()));
            argmax.extend(pooled.argmax);
        }
    }
    let (v, mask) = match dropout {
        Some((rng, rate)) if rate > 0.0 => {
            let keep = 1.0 - rate;
            let mask: Vec<f64> = (0..activated.len())
                .map(|_| if rng.gen_bool(keep) { 1.0 / keep } else { 0.0 })
                .collect();
            (activated.iter().zip(&mask).map(|(a, m)| a * m).collect(), Some(mask))
        }
        _ => (activated.clone(), None),
    };
    Ok(SentenceTrace {
        v,
        activated,
        mask,
        h,
        argmax,
        tokens: sample.tokens.clone(),
        head_start: sample.head_span.start,
        tail_start: sample.tail_span.start,
    })
}

/// Inference-time representation.
pub fn encode(sample: &Sample, params: &EncoderParams) -> Result<Vec<f64>> {
    Ok(encode_sentence(sample, params, None)?.v)
}

/// Accumulates `dL/dθ` into the encoder gradient buffers given `dL/dv`.
pub fn backward_sentence(trace: &SentenceTrace, dv: &[f64], params: &mut EncoderParams) {
    let d = trace.h.row_len();
    let n = trace.h.rows();
    let mut dh = Tensor::zeros(&[n, d]);
    let mut touched = false;
    let mut filter = 0;
    for bank in &mut params.conv {
        let k = bank.kernel;
        for f in 0..bank.weight.value.rows() {
            for s in 0..3 {
                let idx = 3 * filter + s;
                let Some(j) = trace.argmax[idx] else { continue };
                let scale = trace.mask.as_ref().map_or(1.0, |m| m[idx]);
                let a = trace.activated[idx];
                let dp = dv[idx] * scale * (1.0 - a * a);
                if dp == 0.0 {
                    continue;
                }
                touched = true;
                for r in 0..k {
                    let Some(pos) = (j + r).checked_sub(k - 1) else {
                        continue;
                    };
                    let hrow = trace.h.row(pos);
                    let lo = r * d;
                    let grad_row = &mut bank.weight.grad.row_mut(f)[lo..lo + d];
                    for (g, &x) in grad_row.iter_mut().zip(hrow) {
                        *g += dp * x;
                    }
                    let wrow = &bank.weight.value.row(f)[lo..lo + d];
                    for (g, &w) in dh.row_mut(pos).iter_mut().zip(wrow) {
                        *g += dp * w;
                    }
                }
            }
            filter += 1;
        }
    }
    if !touched {
        return;
    }
    let (dw, dp) = (params.word.value.row_len(), params.pos_head.value.row_len());
    let lmax = params.max_relative();
    for (j, &tok) in trace.tokens.iter().enumerate() {
        let row = dh.row(j);
        add_into(params.word.grad.row_mut(tok), &row[..dw]);
        let ph = position_index(j, trace.head_start, lmax);
        let pt = position_index(j, trace.tail_start, lmax);
        add_into(params.pos_head.grad.row_mut(ph), &row[dw..dw + dp]);
        add_into(params.pos_tail.grad.row_mut(pt), &row[dw + dp..]);
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
