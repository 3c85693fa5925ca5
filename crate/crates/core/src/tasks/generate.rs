use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::series::TimeSeries;
use super::spec::{ramp, GeneratorParams, TaskSpec};
use super::stats::ChannelStats;

/// The hidden generating state of one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Latent {
    Upsweep {
        present: bool,
    },
    Morphology {
        shape: usize,
        position: usize,
        gap: usize,
    },
    Conjunction {
        high_amplitude: bool,
        fast: bool,
        phase: f64,
    },
    Level {
        class: usize,
        level: f64,
    },
}

/// One classification problem: series, prompt and gold label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub id: String,
    pub task: String,
    pub series: TimeSeries,
    pub prompt: String,
    pub gold: String,
    /// The task's full class set, in declaration order.
    pub classes: Vec<String>,
    pub latent: Latent,
    /// The noise-free component the deterministic rules are stated on.
    pub clean: TimeSeries,
}

fn gaussian(rng: &mut dyn RngCore) -> f64 {
    rng.sample(StandardNormal)
}

/// Draws the latent state for an instance whose generator targets class `target`.
pub fn sample_latent(spec: &TaskSpec, target: usize, rng: &mut dyn RngCore) -> Latent {
    let len = spec.length;
    match spec.generator {
        GeneratorParams::Upsweep { .. } => Latent::Upsweep {
            present: target == 0,
        },
        GeneratorParams::Morphology { .. } => {
            let gap = rng.random_range(6..=10);
            let position = rng.random_range(len / 8..(7 * len / 8).saturating_sub(gap));
            Latent::Morphology {
                shape: target.min(2),
                position,
                gap,
            }
        }
        GeneratorParams::Conjunction { .. } => {
            let (high_amplitude, fast) = if target == 0 {
                (true, true)
            } else {
                [(true, false), (false, true), (false, false)][rng.random_range(0..3)]
            };
            Latent::Conjunction {
                high_amplitude,
                fast,
                phase: rng.random_range(0.0..2.0 * PI),
            }
        }
        GeneratorParams::LatentLevel {
            level_spacing,
            emission_noise,
            ..
        } => Latent::Level {
            class: target,
            level: target as f64 * level_spacing + emission_noise * gaussian(rng),
        },
    }
}

fn pulse(t: usize, center: usize, width: f64, amplitude: f64) -> f64 {
    let d = t as f64 - center as f64;
    amplitude * (-d * d / (2.0 * width * width)).exp()
}

/// Noise-free signal for a latent state.
pub fn clean_signal(spec: &TaskSpec, latent: &Latent) -> TimeSeries {
    let len = spec.length;
    let dims = spec.channels.len();
    let mut columns = vec![vec![0.0; len]; dims];
    match (&spec.generator, latent) {
        (GeneratorParams::Upsweep { amplitude, .. }, Latent::Upsweep { present }) => {
            if *present {
                for (t, v) in columns[0].iter_mut().enumerate() {
                    *v = amplitude * ramp(t, len);
                }
            }
        }
        (
            GeneratorParams::Morphology { amplitude, .. },
            Latent::Morphology {
                shape,
                position,
                gap,
            },
        ) => {
            for (t, v) in columns[0].iter_mut().enumerate() {
                *v = match shape {
                    0 => pulse(t, *position, 1.0, *amplitude),
                    1 => {
                        pulse(t, *position, 1.0, *amplitude)
                            + pulse(t, position + gap, 1.0, *amplitude)
                    }
                    _ => pulse(t, *position, len as f64 / 10.0, *amplitude),
                };
            }
        }
        (
            GeneratorParams::Conjunction {
                low_amplitude,
                high_amplitude: high,
                slow_cycles,
                fast_cycles,
                ..
            },
            Latent::Conjunction {
                high_amplitude,
                fast,
                phase,
            },
        ) => {
            let amp = if *high_amplitude {
                *high
            } else {
                *low_amplitude
            };
            let cycles = if *fast { *fast_cycles } else { *slow_cycles };
            for (t, v) in columns[0].iter_mut().enumerate() {
                *v = amp * (2.0 * PI * cycles * t as f64 / len as f64 + phase).sin();
            }
        }
        (GeneratorParams::LatentLevel { channel, .. }, Latent::Level { level, .. }) => {
            columns[*channel].iter_mut().for_each(|v| *v = *level);
        }
        _ => panic!("latent state does not match the task's generator family"),
    }
    TimeSeries::from_columns(&columns, spec.channels.clone()).expect("generator output is valid")
}

fn noise_level(spec: &TaskSpec) -> f64 {
    match spec.generator {
        GeneratorParams::Upsweep { noise, .. }
        | GeneratorParams::Morphology { noise, .. }
        | GeneratorParams::Conjunction { noise, .. }
        | GeneratorParams::LatentLevel { noise, .. } => noise,
    }
}

/// Deterministic labelling rule on the noise-free signal. `None` for the
/// probabilistic regime, where the label is the latent class itself.
pub fn rule_label(spec: &TaskSpec, clean: &TimeSeries) -> Option<usize> {
    let xs = clean.channel(0);
    match spec.generator {
        GeneratorParams::Upsweep { .. } => {
            let rise = ChannelStats::compute(&xs).rise();
            Some(if rise > 1e-9 { 0 } else { 1 })
        }
        GeneratorParams::Morphology { amplitude, .. } => {
            let half = amplitude / 2.0;
            let peak = xs
                .iter()
                .enumerate()
                .fold(0, |best, (t, &v)| if v > xs[best] { t } else { best });
            let mut width = 1;
            let mut t = peak;
            while t > 0 && xs[t - 1] > half {
                width += 1;
                t -= 1;
            }
            t = peak;
            while t + 1 < xs.len() && xs[t + 1] > half {
                width += 1;
                t += 1;
            }
            let maxima = (0..xs.len())
                .filter(|&t| {
                    xs[t] > half
                        && (t == 0 || xs[t] > xs[t - 1])
                        && (t + 1 == xs.len() || xs[t] > xs[t + 1])
                })
                .count();
            Some(if width > 4 {
                2
            } else if maxima >= 2 {
                1
            } else {
                0
            })
        }
        GeneratorParams::Conjunction {
            low_amplitude,
            high_amplitude,
            slow_cycles,
            fast_cycles,
            ..
        } => {
            let stats = ChannelStats::compute(&xs);
            let high = stats.std > (low_amplitude + high_amplitude) / (2.0 * 2f64.sqrt());
            let fast = stats.zero_crossings as f64 > slow_cycles + fast_cycles;
            Some(if high && fast { 0 } else { 1 })
        }
        GeneratorParams::LatentLevel { .. } => None,
    }
}

/// Synthesizes an instance from a given latent state.
pub fn generate_from_latent(
    spec: &TaskSpec,
    latent: Latent,
    rng: &mut dyn RngCore,
) -> TaskInstance {
    let id = format!("{}-{:016x}", spec.name, rng.next_u64());
    let clean = clean_signal(spec, &latent);
    let noise = noise_level(spec);
    let rows = clean
        .rows()
        .iter()
        .map(|r| r.iter().map(|v| v + noise * gaussian(rng)).collect())
        .collect();
    let series = TimeSeries::new(rows, spec.channels.clone()).expect("generator output is valid");
    let class = match (&latent, rule_label(spec, &clean)) {
        (_, Some(c)) => c,
        (Latent::Level { class, .. }, None) => *class,
        _ => unreachable!("only the level family lacks a rule"),
    };
    TaskInstance {
        id,
        task: spec.name.clone(),
        series,
        prompt: spec.render_prompt(),
        gold: spec.classes[class].clone(),
        classes: spec.classes.clone(),
        latent,
        clean,
    }
}

/// One instance with a uniformly drawn target class.
pub fn generate_instance(spec: &TaskSpec, rng: &mut dyn RngCore) -> TaskInstance {
    let target = rng.random_range(0..spec.classes.len());
    let latent = sample_latent(spec, target, rng);
    generate_from_latent(spec, latent, rng)
}

/// `n` instances whose target classes cycle through the class set, shuffled.
pub fn generate_balanced(spec: &TaskSpec, n: usize, rng: &mut dyn RngCore) -> Vec<TaskInstance> {
    let k = spec.classes.len();
    let mut targets: Vec<usize> = (0..n).map(|i| i % k).collect();
    targets.shuffle(rng);
    targets
        .into_iter()
        .map(|target| {
            let latent = sample_latent(spec, target, rng);
            generate_from_latent(spec, latent, rng)
        })
        .collect()
}
