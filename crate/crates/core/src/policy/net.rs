use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::features::ContextFeatures;
use super::params::{Layout, PolicyParams};
use super::vocab::{Vocabulary, BOS, EOS};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PolicyError {
    #[error("{what} has length {got}, expected {expected}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("token id {id} is outside the vocabulary of size {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },
    #[error("token sequence is empty")]
    EmptySequence,
}

/// One generated response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledSequence {
    /// Emitted ids, ending in `<eos>` unless the length cap was hit.
    pub tokens: Vec<usize>,
    /// Log-probability of each emitted token under the untempered policy.
    pub per_token_logprob: Vec<f64>,
    pub text: String,
}

impl SampledSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn ended(&self) -> bool {
        self.tokens.last() == Some(&EOS)
    }
}

fn check_ctx(params: &PolicyParams, ctx: &ContextFeatures) -> Result<(), PolicyError> {
    let f = params.shape().features;
    if ctx.len() != f {
        return Err(PolicyError::ShapeMismatch {
            what: "context",
            expected: f,
            got: ctx.len(),
        });
    }
    Ok(())
}

fn check_tokens(params: &PolicyParams, tokens: &[usize]) -> Result<(), PolicyError> {
    let v = params.shape().vocab;
    match tokens.iter().find(|&&t| t >= v) {
        Some(&id) => Err(PolicyError::TokenOutOfRange { id, vocab: v }),
        None => Ok(()),
    }
}

/// `W_c · ctx + b_h`, constant over a sequence.
fn context_drive(p: &[f64], l: &Layout, h: usize, f: usize, ctx: &[f64]) -> Vec<f64> {
    let w_c = &p[l.w_c.clone()];
    let b_h = &p[l.b_h.clone()];
    (0..h)
        .map(|i| {
            b_h[i]
                + w_c[i * f..(i + 1) * f]
                    .iter()
                    .zip(ctx)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
        })
        .collect()
}

struct Net<'a> {
    p: &'a [f64],
    l: Layout,
    v: usize,
    d: usize,
    h: usize,
    drive: Vec<f64>,
}

impl<'a> Net<'a> {
    fn new(params: &'a PolicyParams, ctx: &ContextFeatures) -> Self {
        let s = params.shape();
        let l = s.layout();
        let drive = context_drive(params.as_slice(), &l, s.hidden, s.features, ctx.as_slice());
        Net {
            p: params.as_slice(),
            l,
            v: s.vocab,
            d: s.embed,
            h: s.hidden,
            drive,
        }
    }

    /// `tanh(W_h·state + W_x·E[prev] + drive)`.
    fn cell(&self, state: &[f64], prev: usize, out: &mut [f64]) {
        let (d, h) = (self.d, self.h);
        let w_h = &self.p[self.l.w_h.clone()];
        let w_x = &self.p[self.l.w_x.clone()];
        let e = &self.p[self.l.e.start + prev * d..self.l.e.start + (prev + 1) * d];
        for i in 0..h {
            let rec: f64 = w_h[i * h..(i + 1) * h]
                .iter()
                .zip(state)
                .map(|(a, b)| a * b)
                .sum();
            let inp: f64 = w_x[i * d..(i + 1) * d]
                .iter()
                .zip(e)
                .map(|(a, b)| a * b)
                .sum();
            out[i] = (rec + inp + self.drive[i]).tanh();
        }
    }

    /// `W_o·state + b_o`.
    fn logits(&self, state: &[f64], out: &mut [f64]) {
        let h = self.h;
        let w_o = &self.p[self.l.w_o.clone()];
        let b_o = &self.p[self.l.b_o.clone()];
        for (k, o) in out.iter_mut().enumerate().take(self.v) {
            *o = b_o[k]
                + w_o[k * h..(k + 1) * h]
                    .iter()
                    .zip(state)
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
        }
    }
}

/// Natural-log softmax, computed stably.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    logits.iter().map(|x| x - lse).collect()
}

/// Draws an index from `softmax(logits / temperature)`.
pub fn sample_token(logits: &[f64], temperature: f64, rng: &mut dyn RngCore) -> usize {
    let scaled: Vec<f64> = logits.iter().map(|x| x / temperature).collect();
    let lp = log_softmax(&scaled);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, l) in lp.iter().enumerate() {
        acc += l.exp();
        if u < acc {
            return i;
        }
    }
    lp.iter()
        .enumerate()
        .rev()
        .find(|(_, l)| l.is_finite())
        .map_or(lp.len() - 1, |(i, _)| i)
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

/// One recurrence step from an explicit hidden state. Returns the
/// next-token logits and the new state.
pub fn step_logits(
    params: &PolicyParams,
    ctx: &ContextFeatures,
    state: &[f64],
    prev_token: usize,
) -> Result<(Vec<f64>, Vec<f64>), PolicyError> {
    check_ctx(params, ctx)?;
    check_tokens(params, &[prev_token])?;
    let s = params.shape();
    if state.len() != s.hidden {
        return Err(PolicyError::ShapeMismatch {
            what: "state",
            expected: s.hidden,
            got: state.len(),
        });
    }
    let net = Net::new(params, ctx);
    let mut next = vec![0.0; s.hidden];
    net.cell(state, prev_token, &mut next);
    let mut logits = vec![0.0; s.vocab];
    net.logits(&next, &mut logits);
    Ok((logits, next))
}

fn generate(
    net: &Net<'_>,
    vocab: &Vocabulary,
    l_max: usize,
    mut choose: impl FnMut(&[f64]) -> usize,
) -> SampledSequence {
    let mut state = vec![0.0; net.h];
    let mut next = vec![0.0; net.h];
    let mut logits = vec![0.0; net.v];
    let mut prev = BOS;
    let mut tokens = Vec::new();
    let mut lps = Vec::new();
    for _ in 0..l_max {
        net.cell(&state, prev, &mut next);
        std::mem::swap(&mut state, &mut next);
        net.logits(&state, &mut logits);
        let tok = choose(&logits);
        lps.push(log_softmax(&logits)[tok]);
        tokens.push(tok);
        if tok == EOS {
            break;
        }
        prev = tok;
    }
    let text = vocab.detokenize(&tokens);
    SampledSequence {
        tokens,
        per_token_logprob: lps,
        text,
    }
}

/// `g` independent ancestral samples of at most `l_max` tokens, drawn with
/// logits divided by `temperature`.
pub fn sample_group(
    params: &PolicyParams,
    vocab: &Vocabulary,
    ctx: &ContextFeatures,
    g: usize,
    l_max: usize,
    temperature: f64,
    rng: &mut dyn RngCore,
) -> Result<Vec<SampledSequence>, PolicyError> {
    check_ctx(params, ctx)?;
    check_vocab(params, vocab)?;
    assert!(temperature > 0.0, "temperature must be positive");
    let net = Net::new(params, ctx);
    Ok((0..g)
        .map(|_| {
            generate(&net, vocab, l_max, |logits| {
                sample_token(logits, temperature, rng)
            })
        })
        .collect())
}

/// Most probable token at every step.
pub fn greedy_decode(
    params: &PolicyParams,
    vocab: &Vocabulary,
    ctx: &ContextFeatures,
    l_max: usize,
) -> Result<SampledSequence, PolicyError> {
    check_ctx(params, ctx)?;
    check_vocab(params, vocab)?;
    let net = Net::new(params, ctx);
    Ok(generate(&net, vocab, l_max, argmax))
}

fn check_vocab(params: &PolicyParams, vocab: &Vocabulary) -> Result<(), PolicyError> {
    let v = params.shape().vocab;
    if vocab.len() != v {
        return Err(PolicyError::ShapeMismatch {
            what: "vocabulary",
            expected: v,
            got: vocab.len(),
        });
    }
    Ok(())
}

/// Length of `tokens` up to and including the first `<eos>`.
pub fn effective_len(tokens: &[usize]) -> usize {
    tokens
        .iter()
        .position(|&t| t == EOS)
        .map_or(tokens.len(), |i| i + 1)
}

struct Trace {
    /// `hs[k]` is the state before emitting token `k`; `hs[0]` is zero.
    hs: Vec<Vec<f64>>,
    /// Log-probabilities over the vocabulary at each step.
    lps: Vec<Vec<f64>>,
}

fn forward(net: &Net<'_>, tokens: &[usize]) -> Trace {
    let mut hs = Vec::with_capacity(tokens.len() + 1);
    hs.push(vec![0.0; net.h]);
    let mut lps = Vec::with_capacity(tokens.len());
    let mut logits = vec![0.0; net.v];
    let mut prev = BOS;
    for &tok in tokens {
        let mut next = vec![0.0; net.h];
        net.cell(hs.last().expect("nonempty"), prev, &mut next);
        net.logits(&next, &mut logits);
        lps.push(log_softmax(&logits));
        hs.push(next);
        prev = tok;
    }
    Trace { hs, lps }
}

/// Teacher-forced log-probability of each token, up to and including the
/// first `<eos>`.
pub fn sequence_logprobs(
    params: &PolicyParams,
    ctx: &ContextFeatures,
    tokens: &[usize],
) -> Result<Vec<f64>, PolicyError> {
    check_ctx(params, ctx)?;
    check_tokens(params, tokens)?;
    let tokens = &tokens[..effective_len(tokens)];
    let trace = forward(&Net::new(params, ctx), tokens);
    Ok(tokens
        .iter()
        .zip(&trace.lps)
        .map(|(&t, lp)| lp[t])
        .collect())
}

/// Adds `∇ Σ_k weights[k] · log π(tokens[k] | tokens[..k])` to `out`.
/// Tokens after the first `<eos>` are ignored; `weights` must cover at least
/// the effective length.
pub fn accumulate_weighted_grad(
    params: &PolicyParams,
    ctx: &ContextFeatures,
    tokens: &[usize],
    weights: &[f64],
    out: &mut PolicyParams,
) -> Result<(), PolicyError> {
    check_ctx(params, ctx)?;
    check_tokens(params, tokens)?;
    let tokens = &tokens[..effective_len(tokens)];
    if weights.len() < tokens.len() {
        return Err(PolicyError::ShapeMismatch {
            what: "weights",
            expected: tokens.len(),
            got: weights.len(),
        });
    }
    if out.shape() != params.shape() {
        return Err(PolicyError::ShapeMismatch {
            what: "gradient buffer",
            expected: params.len(),
            got: out.len(),
        });
    }
    let s = params.shape();
    let (v, f, d, h) = (s.vocab, s.features, s.embed, s.hidden);
    let net = Net::new(params, ctx);
    let trace = forward(&net, tokens);
    let l = net.l.clone();
    let p = params.as_slice();
    let ctx = ctx.as_slice();
    let g = out.as_mut_slice();

    let mut dh_next = vec![0.0; h];
    let mut gl = vec![0.0; v];
    let mut da = vec![0.0; h];
    for k in (0..tokens.len()).rev() {
        let hk = &trace.hs[k + 1];
        let w = weights[k];
        let mut dh = std::mem::take(&mut dh_next);
        if w != 0.0 {
            for (j, lp) in trace.lps[k].iter().enumerate() {
                gl[j] = -w * lp.exp();
            }
            gl[tokens[k]] += w;
            for j in 0..v {
                let gj = gl[j];
                g[l.b_o.start + j] += gj;
                let row = l.w_o.start + j * h;
                for i in 0..h {
                    g[row + i] += gj * hk[i];
                    dh[i] += p[row + i] * gj;
                }
            }
        }
        for i in 0..h {
            da[i] = dh[i] * (1.0 - hk[i] * hk[i]);
        }
        let prev = if k == 0 { BOS } else { tokens[k - 1] };
        let h_prev = &trace.hs[k];
        let e_row = l.e.start + prev * d;
        dh_next = vec![0.0; h];
        for i in 0..h {
            let a = da[i];
            if a == 0.0 {
                continue;
            }
            g[l.b_h.start + i] += a;
            let wh = l.w_h.start + i * h;
            for j in 0..h {
                g[wh + j] += a * h_prev[j];
                dh_next[j] += p[wh + j] * a;
            }
            let wx = l.w_x.start + i * d;
            for j in 0..d {
                g[wx + j] += a * p[e_row + j];
                g[e_row + j] += p[wx + j] * a;
            }
            let wc = l.w_c.start + i * f;
            for j in 0..f {
                g[wc + j] += a * ctx[j];
            }
        }
    }
    Ok(())
}

/// Gradient of the summed sequence log-probability.
pub fn grad_sequence_logprob(
    params: &PolicyParams,
    ctx: &ContextFeatures,
    tokens: &[usize],
) -> Result<PolicyParams, PolicyError> {
    let mut out = PolicyParams::zeros(params.shape());
    accumulate_weighted_grad(params, ctx, tokens, &vec![1.0; tokens.len()], &mut out)?;
    Ok(out)
}
