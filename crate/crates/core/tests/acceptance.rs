//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any fails.

use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tsreason::grammar::{parse, validate_format, OutputMode, StructuredOutput, TAGS};
use tsreason::grpo::{grpo_objective, kl_penalty, normalize_advantages, GroupBatch, GrpoConfig};
use tsreason::harness::{
    cmd_ablate_group_size, cmd_ablate_rewards, cmd_eval, cmd_gen_data, cmd_sft, cmd_train,
    evaluate, replay, sampled_format_rate, DataKind, Experiment, ExperimentConfig, InitFrom,
};
use tsreason::judge::{Judge, RubricJudge, RubricSpec};
use tsreason::policy::{
    grad_sequence_logprob, log_softmax, sample_group, sample_token, sequence_logprobs,
    ContextFeatures, PolicyParams, PolicyShape, Vocabulary, BOS, EOS,
};
use tsreason::reward::{composite_reward, RewardWeights};
use tsreason::sft::{sft_loss, Example};
use tsreason::tasks::{generate_balanced, render_plot, PlotFamily, TaskInstance, TaskRegistry};

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(limit: Duration, took: Duration) -> Result<(), String> {
    ensure(took <= limit, || {
        format!("took {took:.1?}, limit {limit:?}")
    })
}

// ---------------------------------------------------------------- 1 grammar

/// Brute-force recognizer: locate every tag occurrence by scanning all
/// offsets, then check the tag sequence and the text between tags.
fn reference_recognizer(text: &str, mode: OutputMode) -> Option<Vec<String>> {
    let mut hits: Vec<(usize, usize)> = Vec::new();
    for start in 0..text.len() {
        for (t, tag) in TAGS.iter().enumerate() {
            if text.as_bytes()[start..].starts_with(tag.as_bytes()) {
                hits.push((start, t));
            }
        }
    }
    let expected: Vec<usize> = if mode.extension_enabled {
        vec![0, 1, 2, 3, 4, 5]
    } else {
        vec![0, 1, 2, 3]
    };
    if hits.iter().map(|h| h.1).collect::<Vec<_>>() != expected {
        return None;
    }
    let end = |i: usize| hits[i].0 + TAGS[hits[i].1].len();
    let blank = |s: &str| s.chars().all(|c| c.is_ascii_whitespace());
    let gap = |a: usize, b: usize| &text[a..b];
    if !blank(gap(0, hits[0].0)) || !blank(&text[end(hits.len() - 1)..]) {
        return None;
    }
    let mut spans = Vec::new();
    for pair in 0..expected.len() / 2 {
        let (open, close) = (2 * pair, 2 * pair + 1);
        let span = gap(end(open), hits[close].0);
        let trimmed = span.trim_matches(|c: char| c.is_ascii_whitespace());
        if trimmed.is_empty() {
            return None;
        }
        spans.push(trimmed.to_string());
        if pair > 0 && !blank(gap(end(open - 1), hits[open].0)) {
            return None;
        }
    }
    Some(spans)
}

fn spans_of(out: &StructuredOutput) -> Vec<String> {
    let mut v = vec![out.think.clone(), out.class_label.clone()];
    v.extend(out.extension.clone());
    v
}

fn agree(text: &str) -> Result<(), String> {
    for mode in [OutputMode::CLASSIFY, OutputMode::EXTENDED] {
        let ours = parse(text, mode).ok().map(|o| spans_of(&o));
        let reference = reference_recognizer(text, mode);
        if ours != reference || validate_format(text, mode) != u8::from(reference.is_some()) {
            return Err(format!(
                "disagree on {text:?} ({mode:?}): {ours:?} vs {reference:?}"
            ));
        }
    }
    Ok(())
}

fn grammar_oracle() -> Check {
    let t0 = Instant::now();
    let mut count = 0usize;
    // Every ordering of up to eight tag tokens (four blocks), with filler.
    for len in 0..=8u32 {
        for code in 0..6usize.pow(len) {
            let mut c = code;
            let mut s = String::new();
            for _ in 0..len {
                s.push_str(TAGS[c % 6]);
                s.push('a');
                c /= 6;
            }
            agree(&s)?;
            count += 1;
        }
    }
    // Short orderings with every choice of gap filler.
    let fillers = ["", " ", "x", " \n"];
    for len in 0..=4u32 {
        for code in 0..6usize.pow(len) {
            for fill in 0..fillers.len().pow(len + 1) {
                let (mut c, mut f) = (code, fill);
                let mut s = String::from(fillers[f % fillers.len()]);
                f /= fillers.len();
                for _ in 0..len {
                    s.push_str(TAGS[c % 6]);
                    s.push_str(fillers[f % fillers.len()]);
                    c /= 6;
                    f /= fillers.len();
                }
                agree(&s)?;
                count += 1;
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let pieces = [
        "<think>",
        "</think>",
        "<class>",
        "</class>",
        "<extension>",
        "</extension>",
        "<thin",
        "k>",
        "</",
        "<",
        ">",
        " ",
        "\t",
        "\n",
        "label",
        "é",
        "<class",
        "think>",
        "a b",
    ];
    for _ in 0..10_000 {
        let n = rng.random_range(0..14);
        let s: String = (0..n)
            .map(|_| pieces[rng.random_range(0..pieces.len())])
            .collect();
        agree(&s)?;
        count += 1;
    }
    within(Duration::from_secs(10), t0.elapsed())?;
    Ok(format!(
        "{count} strings agree in both modes, {:.1?}",
        t0.elapsed()
    ))
}

// ---------------------------------------------------------- 2 reward algebra

fn random_output(rng: &mut ChaCha8Rng, inst: &TaskInstance) -> String {
    let label = match rng.random_range(0..5) {
        0 => inst.gold.clone(),
        1 => inst.gold.to_uppercase(),
        2 => format!("  {}  ", inst.gold),
        3 => inst.classes[rng.random_range(0..inst.classes.len())].clone(),
        _ => "Zebra".to_string(),
    };
    let ext = ["enzyme biopsy", "be careful", "routine followup", "x"][rng.random_range(0..4)];
    let mut text = match rng.random_range(0..3) {
        0 => format!("<think>t</think><class>{label}</class>"),
        1 => format!("<think>dense</think> <class>{label}</class><extension>{ext}</extension>"),
        _ => format!("<class>{label}</class><think>t</think>"),
    };
    if rng.random_bool(0.2) {
        let cut = rng.random_range(0..text.len());
        text.truncate(cut);
        text = String::from_utf8_lossy(text.as_bytes()).into_owned();
    }
    text
}

fn reward_algebra() -> Check {
    let t0 = Instant::now();
    let reg = TaskRegistry::default();
    let rubric: std::collections::BTreeMap<_, _> =
        reg.tasks.iter().flat_map(|t| t.rubric.clone()).collect();
    let judge = RubricJudge::new(RubricSpec::new(rubric));
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let instances: Vec<TaskInstance> = reg
        .tasks
        .iter()
        .flat_map(|s| generate_balanced(s, 4, &mut rng))
        .collect();
    for i in 0..10_000 {
        let inst = &instances[rng.random_range(0..instances.len())];
        let text = random_output(&mut rng, inst);
        let w = RewardWeights::new(
            rng.random_range(0.0..2.0),
            rng.random_range(0.0..2.0),
            rng.random_range(0.0..2.0),
        )
        .map_err(|e| e.to_string())?;
        let mode = if rng.random_bool(0.5) {
            OutputMode::EXTENDED
        } else {
            OutputMode::CLASSIFY
        };
        let r = composite_reward(&text, inst, &w, mode, &judge).map_err(|e| e.to_string())?;
        let identity = w.lambda_fmt * f64::from(r.fmt)
            + w.lambda_hard * f64::from(r.hard)
            + w.lambda_soft * r.soft;
        ensure(r.total == identity, || {
            format!("case {i}: total {} != {identity}", r.total)
        })?;
        ensure(r.fmt == validate_format(&text, mode), || {
            format!("case {i}: fmt mismatch on {text:?}")
        })?;
        ensure(r.hard <= r.fmt, || {
            format!("case {i}: hard without format on {text:?}")
        })?;
        ensure(r.hard == 1 || r.soft == 0.0, || {
            format!("case {i}: soft {} with wrong label", r.soft)
        })?;
        ensure((0.0..=1.0).contains(&r.soft), || {
            format!("case {i}: soft {} out of range", r.soft)
        })?;
        ensure(mode.extension_enabled || r.soft == 0.0, || {
            format!("case {i}: soft outside extension mode")
        })?;
        if r.fmt == 1 {
            let out = parse(&text, mode).unwrap();
            let expected = out.class_label.trim().eq_ignore_ascii_case(&inst.gold);
            ensure(r.hard == u8::from(expected), || {
                format!("case {i}: hard mismatch on {text:?}")
            })?;
        }
    }
    within(Duration::from_secs(10), t0.elapsed())?;
    Ok(format!("10000 cases, {:.1?}", t0.elapsed()))
}

// --------------------------------------------------------------- 3 advantages

fn advantage_oracle() -> Check {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let g = rng.random_range(2..=16);
        let rewards: Vec<f64> = (0..g).map(|_| rng.random_range(-2.0..3.0)).collect();
        let eps = 1e-6;
        let ours = normalize_advantages(&rewards, eps).map_err(|e| e.to_string())?;
        // Two-pass direct arithmetic with a different summation order.
        let mut total = 0.0;
        for r in rewards.iter().rev() {
            total += r;
        }
        let mu = total / g as f64;
        let mut ss = 0.0;
        for r in rewards.iter().rev() {
            ss += (r - mu).powi(2);
        }
        let sigma = (ss / g as f64 + eps).sqrt();
        for (a, r) in ours.iter().zip(&rewards) {
            worst = worst.max((a - (r - mu) / sigma).abs());
        }
        let c = rng.random_range(-1.0..1.0);
        let flat = normalize_advantages(&vec![c; g], eps).map_err(|e| e.to_string())?;
        ensure(flat.iter().all(|&a| a == 0.0), || {
            format!("constant group gave {flat:?}")
        })?;
    }
    ensure(worst <= 1e-12, || format!("max deviation {worst:e}"))?;
    within(Duration::from_secs(5), t0.elapsed())?;
    Ok(format!("max deviation {worst:.1e}, {:.1?}", t0.elapsed()))
}

// ---------------------------------------------------------------- 4 gradients

struct Tiny {
    params: PolicyParams,
    ctx: ContextFeatures,
    tokens: Vec<usize>,
}

fn tiny(rng: &mut ChaCha8Rng, max_v: usize) -> Tiny {
    let v = rng.random_range(8..=max_v);
    let f = rng.random_range(1..=6);
    let d = rng.random_range(1..=16);
    let h = rng.random_range(1..=16);
    let params = PolicyParams::random(PolicyShape::new(v, f, d, h), 1.0, rng);
    let ctx = ContextFeatures((0..f).map(|_| rng.random_range(-1.5..1.5)).collect());
    let len = rng.random_range(1..=8);
    let tokens = (0..len).map(|_| rng.random_range(2..v)).collect();
    Tiny {
        params,
        ctx,
        tokens,
    }
}

fn max_rel_error(
    params: &PolicyParams,
    grad: &PolicyParams,
    f: impl Fn(&PolicyParams) -> f64,
) -> f64 {
    let step = 1e-5;
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        let mut hi = params.clone();
        hi.as_mut_slice()[i] += step;
        let mut lo = params.clone();
        lo.as_mut_slice()[i] -= step;
        let fd = (f(&hi) - f(&lo)) / (2.0 * step);
        let an = grad.as_slice()[i];
        worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-6));
    }
    worst
}

fn perturbed(p: &PolicyParams, scale: f64, rng: &mut ChaCha8Rng) -> PolicyParams {
    let mut q = p.clone();
    for x in q.as_mut_slice() {
        *x += rng.random_range(-scale..scale);
    }
    q
}

fn gradient_checks() -> Check {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let (mut seq_worst, mut sft_worst, mut obj_worst) = (0.0f64, 0.0f64, 0.0f64);
    let mut objective_cases = 0;
    for _ in 0..100 {
        let t = tiny(&mut rng, 16);
        let g = grad_sequence_logprob(&t.params, &t.ctx, &t.tokens).map_err(|e| e.to_string())?;
        seq_worst = seq_worst.max(max_rel_error(&t.params, &g, |p| {
            sequence_logprobs(p, &t.ctx, &t.tokens)
                .unwrap()
                .iter()
                .sum()
        }));

        let v = t.params.shape().vocab;
        let batch: Vec<Example> = (0..rng.random_range(1..=3))
            .map(|_| Example {
                ctx: ContextFeatures(
                    (0..t.ctx.len())
                        .map(|_| rng.random_range(-1.0..1.0))
                        .collect(),
                ),
                tokens: (0..rng.random_range(1..=8))
                    .map(|_| rng.random_range(2..v))
                    .collect(),
            })
            .collect();
        let (_, g) = sft_loss(&t.params, &batch).map_err(|e| e.to_string())?;
        sft_worst = sft_worst.max(max_rel_error(&t.params, &g, |p| {
            sft_loss(p, &batch).unwrap().0
        }));
    }
    while objective_cases < 100 {
        let t = tiny(&mut rng, 16);
        let vocab = Vocabulary::synthetic(t.params.shape().vocab);
        let old = perturbed(&t.params, 0.3, &mut rng);
        let reference = perturbed(&t.params, 0.3, &mut rng);
        let g = rng.random_range(2..=5);
        let seqs =
            sample_group(&old, &vocab, &t.ctx, g, 8, 1.0, &mut rng).map_err(|e| e.to_string())?;
        let rewards: Vec<f64> = (0..g).map(|_| rng.random_range(0.0..1.0)).collect();
        let batch = GroupBatch::new(t.ctx.clone(), seqs, rewards, &reference, 1e-6)
            .map_err(|e| e.to_string())?;
        let cfg = GrpoConfig {
            beta: rng.random_range(0.0..0.5),
            ..GrpoConfig::default()
        };
        // Central differences are meaningless across a clip kink; skip
        // instances where any ratio sits within reach of one.
        let lps: Vec<Vec<f64>> = batch
            .sequences
            .iter()
            .map(|s| sequence_logprobs(&t.params, &t.ctx, &s.tokens).unwrap())
            .collect();
        let near_kink = lps.iter().zip(&batch.old_logprobs).any(|(new, old)| {
            new.iter().zip(old).any(|(n, o)| {
                let rho = (n - o).exp();
                (rho - (1.0 + cfg.eps_clip)).abs() < 1e-3
                    || (rho - (1.0 - cfg.eps_clip)).abs() < 1e-3
            })
        });
        if near_kink {
            continue;
        }
        let obj = grpo_objective(&batch, &t.params, &cfg).map_err(|e| e.to_string())?;
        obj_worst = obj_worst.max(max_rel_error(&t.params, &obj.grad, |p| {
            grpo_objective(&batch, p, &cfg).unwrap().value
        }));
        objective_cases += 1;
    }
    let worst = seq_worst.max(sft_worst).max(obj_worst);
    ensure(worst < 1e-4, || {
        format!(
            "max relative error: logprob {seq_worst:e}, sft {sft_worst:e}, objective {obj_worst:e}"
        )
    })?;
    within(Duration::from_secs(120), t0.elapsed())?;
    Ok(format!(
        "100 instances each; max rel err logprob {seq_worst:.1e}, sft {sft_worst:.1e}, objective {obj_worst:.1e}, {:.1?}",
        t0.elapsed()
    ))
}

// ------------------------------------------------------- 5 on-policy identity

/// Gradient of `log π(tokens[k] | prefix)` by explicit backpropagation
/// through time, one token at a time.
fn reference_token_grad(
    p: &PolicyParams,
    ctx: &[f64],
    tokens: &[usize],
    k: usize,
    out: &mut [f64],
    weight: f64,
) {
    let s = p.shape();
    let l = s.layout();
    let (v, f, d, h) = (s.vocab, s.features, s.embed, s.hidden);
    let w = p.as_slice();
    let inputs: Vec<usize> = std::iter::once(BOS).chain(tokens.iter().copied()).collect();
    // states[t] = h_t, t = 0..=k+1 with h_0 = 0.
    let mut states = vec![vec![0.0; h]];
    for t in 0..=k {
        let prev = &states[t];
        let x = inputs[t];
        let mut next = vec![0.0; h];
        for i in 0..h {
            let mut a = w[l.b_h.start + i];
            for j in 0..h {
                a += w[l.w_h.start + i * h + j] * prev[j];
            }
            for j in 0..d {
                a += w[l.w_x.start + i * d + j] * w[l.e.start + x * d + j];
            }
            for j in 0..f {
                a += w[l.w_c.start + i * f + j] * ctx[j];
            }
            next[i] = a.tanh();
        }
        states.push(next);
    }
    let hk = &states[k + 1];
    let logits: Vec<f64> = (0..v)
        .map(|o| {
            w[l.b_o.start + o]
                + (0..h)
                    .map(|j| w[l.w_o.start + o * h + j] * hk[j])
                    .sum::<f64>()
        })
        .collect();
    let probs: Vec<f64> = log_softmax(&logits).iter().map(|x| x.exp()).collect();
    let dlogit: Vec<f64> = (0..v)
        .map(|o| f64::from(u8::from(o == tokens[k])) - probs[o])
        .collect();
    let mut dh = vec![0.0; h];
    for o in 0..v {
        out[l.b_o.start + o] += weight * dlogit[o];
        for j in 0..h {
            out[l.w_o.start + o * h + j] += weight * dlogit[o] * hk[j];
            dh[j] += dlogit[o] * w[l.w_o.start + o * h + j];
        }
    }
    for t in (1..=k + 1).rev() {
        let ht = &states[t];
        let hp = &states[t - 1];
        let x = inputs[t - 1];
        let da: Vec<f64> = (0..h).map(|i| dh[i] * (1.0 - ht[i] * ht[i])).collect();
        let mut dprev = vec![0.0; h];
        for i in 0..h {
            out[l.b_h.start + i] += weight * da[i];
            for j in 0..h {
                out[l.w_h.start + i * h + j] += weight * da[i] * hp[j];
                dprev[j] += da[i] * w[l.w_h.start + i * h + j];
            }
            for j in 0..d {
                out[l.w_x.start + i * d + j] += weight * da[i] * w[l.e.start + x * d + j];
                out[l.e.start + x * d + j] += weight * da[i] * w[l.w_x.start + i * d + j];
            }
            for j in 0..f {
                out[l.w_c.start + i * f + j] += weight * da[i] * ctx[j];
            }
        }
        dh = dprev;
    }
}

fn on_policy_reduction() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut worst_value = 0.0f64;
    let mut worst_grad = 0.0f64;
    for _ in 0..200 {
        let t = tiny(&mut rng, 8);
        let vocab = Vocabulary::synthetic(t.params.shape().vocab);
        let g = rng.random_range(2..=6);
        let seqs = sample_group(&t.params, &vocab, &t.ctx, g, 4, 1.0, &mut rng)
            .map_err(|e| e.to_string())?;
        let rewards: Vec<f64> = (0..g)
            .map(|_| f64::from(rng.random_range(0..3u8)))
            .collect();
        let batch = GroupBatch::new(t.ctx.clone(), seqs, rewards, &t.params, 1e-6)
            .map_err(|e| e.to_string())?;
        let cfg = GrpoConfig {
            beta: 0.05,
            ..GrpoConfig::default()
        };
        let obj = grpo_objective(&batch, &t.params, &cfg).map_err(|e| e.to_string())?;
        let mean_adv = batch.advantages.iter().sum::<f64>() / g as f64;
        worst_value = worst_value.max((obj.value - mean_adv).abs());

        let mut reference = vec![0.0; t.params.len()];
        for (seq, adv) in batch.sequences.iter().zip(&batch.advantages) {
            let n = seq
                .tokens
                .iter()
                .position(|&x| x == EOS)
                .map_or(seq.tokens.len(), |i| i + 1);
            for k in 0..n {
                reference_token_grad(
                    &t.params,
                    &t.ctx.0,
                    &seq.tokens,
                    k,
                    &mut reference,
                    adv / (g as f64 * n as f64),
                );
            }
        }
        for (a, b) in obj.grad.as_slice().iter().zip(&reference) {
            worst_grad = worst_grad.max((a - b).abs());
        }
    }
    ensure(worst_value <= 1e-10 && worst_grad <= 1e-10, || {
        format!("value deviation {worst_value:e}, gradient deviation {worst_grad:e}")
    })?;
    Ok(format!(
        "200 groups; value dev {worst_value:.1e}, gradient dev {worst_grad:.1e}"
    ))
}

// ---------------------------------------------------------------------- 6 KL

fn kl_soundness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for _ in 0..100_000 {
        let a = rng.random_range(-40.0..0.0);
        let b = rng.random_range(-40.0..0.0);
        let k = kl_penalty(a, b);
        ensure(k >= 0.0, || format!("k3({a}, {b}) = {k}"))?;
        ensure((k == 0.0) == (a == b) || (a - b).abs() < 1e-7, || {
            format!("k3({a}, {b}) = {k}")
        })?;
    }
    ensure(kl_penalty(-1.3, -1.3) == 0.0, || {
        "equal logprobs must give zero".into()
    })?;
    let mut details = Vec::new();
    for trial in 0..5 {
        let v = rng.random_range(2..=16);
        let p_logits: Vec<f64> = (0..v).map(|_| rng.random_range(-2.0..2.0)).collect();
        let q_logits: Vec<f64> = (0..v).map(|_| rng.random_range(-2.0..2.0)).collect();
        let (lp, lq) = (log_softmax(&p_logits), log_softmax(&q_logits));
        let exact: f64 = (0..v).map(|i| lp[i].exp() * (lp[i] - lq[i])).sum();
        let n = 10_000;
        let samples: Vec<f64> = (0..n)
            .map(|_| {
                let t = sample_token(&p_logits, 1.0, &mut rng);
                kl_penalty(lp[t], lq[t])
            })
            .collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        ensure((mean - exact).abs() <= 3.0 * se, || {
            format!("trial {trial}: MC {mean} vs exact {exact}, se {se}")
        })?;
        details.push(format!("{:.2}σ", (mean - exact).abs() / se));
    }
    Ok(format!(
        "k3 ≥ 0 on 1e5 pairs; MC deviations {}",
        details.join(", ")
    ))
}

// ------------------------------------------------------------ 7–10 learning

fn experiment(dir: &Path, edit: impl FnOnce(&mut ExperimentConfig)) -> Result<Experiment, String> {
    let mut c = ExperimentConfig {
        output_dir: dir.to_path_buf(),
        ..ExperimentConfig::default()
    };
    edit(&mut c);
    c.validate().map_err(|e| e.to_string())?;
    Experiment::new(c).map_err(|e| e.to_string())
}

fn rubric_judge(exp: &Experiment) -> Box<dyn Judge> {
    exp.judge().expect("rubric judge")
}

fn format_learning(dir: &Path) -> Check {
    let t0 = Instant::now();
    let exp = experiment(dir, |c| {
        c.tasks = vec!["rcw".into()];
        c.weights = RewardWeights::new(1.0, 0.0, 0.0).unwrap();
        c.init = InitFrom::Base;
        c.base.primer_epochs = 1;
        c.grpo.max_steps = Some(2000);
    })?;
    let mode = exp.mode();
    let mut rates = Vec::new();
    for seed in [1u64, 2, 3] {
        let policy = exp
            .initial_policy(seed, InitFrom::Base, mode)
            .map_err(|e| e.to_string())?;
        let held_out = exp.eval_instances(seed, 500);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let before = sampled_format_rate(&policy, &held_out, mode, 1, 1.0, 64, &mut rng)
            .map_err(|e| e.to_string())?;
        let mut state =
            tsreason::grpo::TrainState::new(policy.params.clone(), exp.config.grpo.optimizer);
        let judge = rubric_judge(&exp);
        exp.run_grpo(
            &policy,
            &mut state,
            exp.config.weights,
            mode,
            judge.as_ref(),
            exp.grpo_config(seed),
            |_, _| std::ops::ControlFlow::Continue(()),
        )
        .map_err(|e| e.to_string())?;
        let trained = policy.with_params(state.params);
        let after = sampled_format_rate(&trained, &held_out, mode, 1, 1.0, 64, &mut rng)
            .map_err(|e| e.to_string())?;
        rates.push(format!("seed {seed}: {before:.3}->{after:.3}"));
        ensure(after >= 0.95, || {
            format!(
                "seed {seed}: sampled format rate {after:.3} < 0.95 ({})",
                rates.join("; ")
            )
        })?;
    }
    within(Duration::from_secs(300), t0.elapsed())?;
    Ok(format!(
        "sampled format rate {}, {:.1?}",
        rates.join("; "),
        t0.elapsed()
    ))
}

fn accuracy_learning(dir: &Path) -> Check {
    let t0 = Instant::now();
    let exp = experiment(dir, |c| {
        c.tasks = vec!["rcw".into()];
        c.data.bayes_rate = Some(0.9);
        c.weights = RewardWeights::new(0.1, 0.9, 0.0).unwrap();
        c.sft.demos = 500;
        c.grpo.max_steps = Some(5000);
    })?;
    let mode = exp.mode();
    let judge = rubric_judge(&exp);
    let mut lines = Vec::new();
    let mut failures = Vec::new();
    for (init, floor) in [(InitFrom::Sft, 0.85), (InitFrom::Base, 0.70)] {
        let mut accs = Vec::new();
        for seed in [1u64, 2, 3] {
            let policy = exp
                .initial_policy(seed, init, mode)
                .map_err(|e| e.to_string())?;
            let mut state =
                tsreason::grpo::TrainState::new(policy.params.clone(), exp.config.grpo.optimizer);
            exp.run_grpo(
                &policy,
                &mut state,
                exp.config.weights,
                mode,
                judge.as_ref(),
                exp.grpo_config(seed),
                |_, _| std::ops::ControlFlow::Continue(()),
            )
            .map_err(|e| e.to_string())?;
            let report = evaluate(
                &policy.with_params(state.params),
                &exp.eval_instances(seed, 1000),
                mode,
                judge.as_ref(),
                64,
            )
            .map_err(|e| e.to_string())?;
            if report.accuracy < floor {
                failures.push(format!(
                    "{init:?} seed {seed}: {:.3} < {floor}",
                    report.accuracy
                ));
            }
            accs.push(format!("{:.3}", report.accuracy));
        }
        lines.push(format!("{init:?}+RL [{}]", accs.join(", ")));
    }
    ensure(failures.is_empty(), || {
        format!("{} ({})", failures.join("; "), lines.join("; "))
    })?;
    within(Duration::from_secs(900), t0.elapsed())?;
    Ok(format!("{}, {:.1?}", lines.join("; "), t0.elapsed()))
}

fn reward_ablation(dir: &Path) -> Check {
    let t0 = Instant::now();
    let exp = experiment(dir, |c| {
        c.tasks = vec!["emg".into()];
        c.grpo.max_steps = Some(3000);
        c.seeds = vec![1, 2, 3];
    })?;
    let (_, table) = cmd_ablate_rewards(&exp).map_err(|e| e.to_string())?;
    let row = |name: &str| {
        table
            .rows
            .iter()
            .find(|r| r.row.name == name)
            .expect("default row")
    };
    let (fmt, hard, both, soft) = (
        row("fmt-only"),
        row("hard-only"),
        row("fmt+hard"),
        row("fmt+hard+soft"),
    );
    let per_seed = |r: &tsreason::harness::RewardAblationRow| {
        r.runs
            .iter()
            .map(|x| format!("{:.3}", x.accuracy))
            .collect::<Vec<_>>()
            .join("/")
    };
    let summary = format!(
        "acc fmt-only {:.3} [{}] < hard-only {:.3} [{}] <= fmt+hard {:.3} [{}]; soft {:.3} -> {:.3}",
        fmt.mean_accuracy,
        per_seed(fmt),
        hard.mean_accuracy,
        per_seed(hard),
        both.mean_accuracy,
        per_seed(both),
        soft.mean_soft_init.unwrap_or(f64::NAN),
        soft.mean_soft_final.unwrap_or(f64::NAN),
    );
    ensure(
        fmt.mean_accuracy < hard.mean_accuracy && hard.mean_accuracy <= both.mean_accuracy,
        || format!("ordering violated: {summary}"),
    )?;
    let gain = soft.mean_soft_final.unwrap_or(0.0) - soft.mean_soft_init.unwrap_or(0.0);
    ensure(gain >= 0.1, || {
        format!("soft gain {gain:.3} < 0.1: {summary}")
    })?;
    Ok(format!("{summary}, {:.1?}", t0.elapsed()))
}

fn group_size_trend(dir: &Path) -> Check {
    let t0 = Instant::now();
    let exp = experiment(dir, |c| {
        c.tasks = vec!["rcw".into()];
        c.data.bayes_rate = Some(0.9);
        c.weights = RewardWeights::new(0.1, 0.9, 0.0).unwrap();
        c.init = InitFrom::Base;
        c.seeds = vec![1, 2, 3];
        c.ablation.sample_budget = 160_000;
    })?;
    let (_, table) = cmd_ablate_group_size(&exp, &[2, 8]).map_err(|e| e.to_string())?;
    let (g2, g8) = (&table.rows[0], &table.rows[1]);
    let summary = format!(
        "G=2 {:.3} ({} steps), G=8 {:.3} ({} steps)",
        g2.mean_accuracy, g2.steps, g8.mean_accuracy, g8.steps
    );
    ensure(g8.mean_accuracy >= g2.mean_accuracy - 0.02, || {
        summary.clone()
    })?;
    ensure(
        dir.join("group_size_g2_seed1.jsonl").exists() && dir.join("group_size_curve.png").exists(),
        || "per-G metrics or curve missing".into(),
    )?;
    Ok(format!("{summary}, {:.1?}", t0.elapsed()))
}

// -------------------------------------------------------------------- 11 plots

fn png_size(bytes: &[u8]) -> Option<(u32, u32)> {
    const SIG: [u8; 8] = [0x89, b'P', b'N', b'G', b'\r', b'\n', 0x1a, b'\n'];
    if bytes.len() < 24 || bytes[..8] != SIG || &bytes[12..16] != b"IHDR" {
        return None;
    }
    let w = u32::from_be_bytes(bytes[16..20].try_into().ok()?);
    let h = u32::from_be_bytes(bytes[20..24].try_into().ok()?);
    Some((w, h))
}

fn plot_renderer() -> Check {
    let expected = [
        (PlotFamily::Ecg, (980, 230)),
        (PlotFamily::Ctu, (562, 230)),
        (PlotFamily::Tee, (789, 239)),
        (PlotFamily::Rcw, (789, 239)),
        (PlotFamily::Emg, (789, 239)),
        (PlotFamily::Har, (389, 233)),
    ];
    let reg = TaskRegistry::default();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for (family, dims) in expected {
        let spec = reg
            .tasks
            .iter()
            .find(|t| t.plot_family == family)
            .unwrap_or(&reg.tasks[0]);
        let inst = &generate_balanced(spec, 2, &mut rng)[0];
        let a = render_plot(&inst.series, family).map_err(|e| e.to_string())?;
        let b = render_plot(&inst.series, family).map_err(|e| e.to_string())?;
        ensure(png_size(&a) == Some(dims), || {
            format!("{family}: size {:?}, expected {dims:?}", png_size(&a))
        })?;
        ensure(a == b, || format!("{family}: renders differ"))?;
    }
    Ok("6 families at 980x230, 562x230, 789x239, 389x233; repeat renders byte-identical".into())
}

// --------------------------------------------------------------- 12 replay

fn determinism(dir: &Path) -> Check {
    let exp = experiment(&dir.join("original"), |c| {
        c.tasks = vec!["rcw".into(), "emg".into()];
        c.extension = true;
        c.weights = RewardWeights::new(0.1, 0.9, 0.5).unwrap();
        c.data.train_size = 40;
        c.data.eval_size = 40;
        c.sft.demos = 40;
        c.sft.epochs = 1;
        c.base.primer_size = 20;
        c.grpo.max_steps = Some(30);
        c.checkpoint_every = 7;
    })?;
    let err = |e: tsreason::harness::CommandError| e.to_string();
    let mut manifests = vec![cmd_sft(&exp, 4).map_err(err)?.manifest_path];
    manifests.push(
        cmd_train(&exp, 4, None, false, None)
            .map_err(err)?
            .manifest_path,
    );
    let ckpt = exp
        .config
        .output_dir
        .join(tsreason::harness::TRAIN_CHECKPOINT);
    manifests.push(
        cmd_eval(&exp, 4, Some(&ckpt), Some(30), None)
            .map_err(err)?
            .0
            .manifest_path,
    );
    manifests.push(
        cmd_gen_data(&exp, 4, 10, DataKind::Demos)
            .map_err(err)?
            .manifest_path,
    );
    let mut checked = 0;
    for (i, m) in manifests.iter().enumerate() {
        let report = replay(m, &dir.join(format!("replay{i}"))).map_err(err)?;
        ensure(report.identical(), || {
            format!("{}: differs in {:?}", m.display(), report.mismatched)
        })?;
        checked += report.outcome.manifest.artifacts.len();
    }
    Ok(format!(
        "sft, train, eval, gen-data replayed; {checked} artifacts byte-identical"
    ))
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let sub = |name: &str| tmp.path().join(name);
    let criteria: Vec<(&str, Box<dyn Fn() -> Check>)> = vec![
        ("grammar oracle", Box::new(grammar_oracle)),
        ("reward algebra", Box::new(reward_algebra)),
        ("advantage oracle", Box::new(advantage_oracle)),
        ("gradient correctness", Box::new(gradient_checks)),
        ("on-policy reduction", Box::new(on_policy_reduction)),
        ("KL estimator soundness", Box::new(kl_soundness)),
        (
            "end-to-end format learning",
            Box::new(move || format_learning(&sub("c7"))),
        ),
        (
            "end-to-end accuracy learning",
            Box::new(move || accuracy_learning(&sub("c8"))),
        ),
        (
            "reward-composition trend",
            Box::new(move || reward_ablation(&sub("c9"))),
        ),
        (
            "group-size trend",
            Box::new(move || group_size_trend(&sub("c10"))),
        ),
        ("plot renderer", Box::new(plot_renderer)),
        (
            "determinism from manifest",
            Box::new(move || determinism(&sub("c12"))),
        ),
    ];
    let only: Option<usize> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if only.is_some_and(|k| k != i + 1) {
            continue;
        }
        match check() {
            Ok(detail) => println!("PASS [{:>2}] {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL [{:>2}] {name}: {why}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
