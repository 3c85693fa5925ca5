//! Built-in task registry: two analogs per reasoning regime.

use std::collections::BTreeMap;

use super::plot::PlotFamily;
use super::spec::{GeneratorParams, ReasoningKind, TaskSpec};
use crate::judge::ClassRubric;

const DEPTH_MARKERS: [&str; 5] = ["measure", "schedule", "verify", "compare", "record"];
const GENERIC_PHRASES: [&str; 3] = ["be careful", "monitor closely", "stay alert"];

fn words(ws: &[&str]) -> Vec<String> {
    ws.iter().map(|w| w.to_string()).collect()
}

struct ClassDef {
    label: &'static str,
    evidence: [&'static str; 2],
    keywords: [&'static str; 4],
}

#[allow(clippy::too_many_arguments)]
fn task(
    name: &str,
    kind: ReasoningKind,
    length: usize,
    channels: &[&str],
    plot_family: PlotFamily,
    generator: GeneratorParams,
    description: &str,
    classes: &[ClassDef],
) -> TaskSpec {
    let evidence = classes
        .iter()
        .map(|c| (c.label.to_string(), words(&c.evidence)))
        .collect::<BTreeMap<_, _>>();
    let rubric = classes
        .iter()
        .map(|c| {
            (
                c.label.to_string(),
                ClassRubric {
                    keywords: words(&c.keywords),
                    depth_markers: words(&DEPTH_MARKERS),
                    generic_phrases: words(&GENERIC_PHRASES),
                },
            )
        })
        .collect();
    TaskSpec {
        name: name.to_string(),
        kind,
        classes: classes.iter().map(|c| c.label.to_string()).collect(),
        length,
        channels: words(channels),
        plot_family,
        generator,
        prompt_template: format!(
            "{description} Classify the series into one of the following classes: {{classes}}. \
             Report the approximate minimum and maximum values of each channel and choose the \
             single best matching label for the whole series."
        ),
        evidence,
        rubric,
    }
}

pub(crate) fn default_tasks() -> Vec<TaskSpec> {
    use ReasoningKind::*;
    vec![
        task(
            "rcw",
            SimpleDeterministic,
            64,
            &["amplitude"],
            PlotFamily::Rcw,
            GeneratorParams::Upsweep {
                amplitude: 1.0,
                noise: 0.5,
            },
            "The plot shows a short underwater audio segment. A whale up-call appears as a \
             steady upward sweep hidden in background noise.",
            &[
                ClassDef {
                    label: "RightWhale",
                    evidence: ["upcall", "sweep"],
                    keywords: ["hydrophone", "vessel", "slowdown", "spectrogram"],
                },
                ClassDef {
                    label: "NoWhale",
                    evidence: ["background", "noise"],
                    keywords: ["archive", "ambient", "segment", "recalibrate"],
                },
            ],
        ),
        task(
            "tee",
            SimpleDeterministic,
            64,
            &["power"],
            PlotFamily::Tee,
            GeneratorParams::Morphology {
                amplitude: 1.0,
                noise: 0.05,
            },
            "The plot shows a radio-frequency power trace of an atmospheric discharge event. \
             Events differ by the shape of their pulses.",
            &[
                ClassDef {
                    label: "Impulsive",
                    evidence: ["single", "pulse"],
                    keywords: ["intracloud", "discharge", "locate", "origin"],
                },
                ClassDef {
                    label: "ImpulsivePair",
                    evidence: ["paired", "pulse"],
                    keywords: ["ionosphere", "reflection", "delay", "altitude"],
                },
                ClassDef {
                    label: "GradualIntraCloud",
                    evidence: ["broad", "buildup"],
                    keywords: ["storm", "charge", "growth", "radar"],
                },
            ],
        ),
        task(
            "emg",
            ComplexDeterministic,
            64,
            &["voltage"],
            PlotFamily::Emg,
            GeneratorParams::Conjunction {
                low_amplitude: 0.5,
                high_amplitude: 1.5,
                slow_cycles: 2.0,
                fast_cycles: 6.0,
                noise: 0.1,
            },
            "The plot shows a needle electromyography recording of a limb muscle. Both the \
             amplitude band and the firing rate matter.",
            &[
                ClassDef {
                    label: "Myopathy",
                    evidence: ["dense", "bursts"],
                    keywords: ["enzyme", "biopsy", "weakness", "proximal"],
                },
                ClassDef {
                    label: "Healthy",
                    evidence: ["sparse", "units"],
                    keywords: ["baseline", "routine", "followup", "reassure"],
                },
            ],
        ),
        task(
            "ecg",
            ComplexDeterministic,
            128,
            &["lead"],
            PlotFamily::Ecg,
            GeneratorParams::Conjunction {
                low_amplitude: 0.5,
                high_amplitude: 1.5,
                slow_cycles: 3.0,
                fast_cycles: 10.0,
                noise: 0.1,
            },
            "The plot shows a single-lead heart recording. A rhythm disorder shows both a large \
             deflection band and a rapid rate.",
            &[
                ClassDef {
                    label: "AtrialFibrillation",
                    evidence: ["rapid", "fibrillatory"],
                    keywords: ["anticoagulation", "holter", "rate", "cardiology"],
                },
                ClassDef {
                    label: "SinusRhythm",
                    evidence: ["regular", "beats"],
                    keywords: ["annual", "lifestyle", "rest", "normal"],
                },
            ],
        ),
        task(
            "har",
            Probabilistic,
            64,
            &["body_acc_x", "body_acc_y", "body_acc_z"],
            PlotFamily::Har,
            GeneratorParams::LatentLevel {
                level_spacing: 1.0,
                emission_noise: 0.3,
                noise: 0.3,
                channel: 2,
            },
            "The plot shows three accelerometer channels from a phone carried by a person. The \
             activity shifts the typical level of the vertical channel.",
            &[
                ClassDef {
                    label: "Laying",
                    evidence: ["still", "horizontal"],
                    keywords: ["posture", "sleep", "pressure", "reposition"],
                },
                ClassDef {
                    label: "Sitting",
                    evidence: ["still", "upright"],
                    keywords: ["desk", "stretch", "break", "ergonomics"],
                },
                ClassDef {
                    label: "Walking",
                    evidence: ["periodic", "strides"],
                    keywords: ["cadence", "steps", "gait", "pedometer"],
                },
            ],
        ),
        task(
            "ctu",
            Probabilistic,
            64,
            &["consumption"],
            PlotFamily::Ctu,
            GeneratorParams::LatentLevel {
                level_spacing: 1.0,
                emission_noise: 0.35,
                noise: 0.3,
                channel: 0,
            },
            "The plot shows a day of household electricity readings attributed to a computer. \
             The typical load level depends on the device.",
            &[
                ClassDef {
                    label: "Laptop",
                    evidence: ["light", "load"],
                    keywords: ["battery", "charger", "portable", "standby"],
                },
                ClassDef {
                    label: "Desktop",
                    evidence: ["heavy", "load"],
                    keywords: ["tower", "psu", "sleep", "tariff"],
                },
            ],
        ),
    ]
}
