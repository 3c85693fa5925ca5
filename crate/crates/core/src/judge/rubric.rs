use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Judge, JudgeError, JudgeScores};

/// Keyword sets for one class label.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassRubric {
    /// Class-specific terms; specificity is the fraction present.
    pub keywords: Vec<String>,
    /// Actionable-step markers; depth saturates in their distinct count.
    pub depth_markers: Vec<String>,
    /// Vague phrases that cost appropriateness.
    pub generic_phrases: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RubricSpec {
    pub version: String,
    pub classes: BTreeMap<String, ClassRubric>,
    /// Appropriateness lost per distinct generic phrase.
    pub generic_penalty: f64,
    /// Appropriateness lost per unit fraction of repeated words.
    pub repeat_penalty: f64,
    /// Words allowed before appropriateness falls off linearly, reaching zero
    /// at twice this length.
    pub max_words: usize,
    /// Shared reasoning words needed for full relevance.
    pub relevance_saturation: usize,
    /// Distinct depth markers needed for full depth.
    pub depth_saturation: usize,
}

impl RubricSpec {
    pub fn new(classes: BTreeMap<String, ClassRubric>) -> Self {
        RubricSpec {
            version: "1".to_string(),
            classes,
            generic_penalty: 0.5,
            repeat_penalty: 1.0,
            max_words: 12,
            relevance_saturation: 2,
            depth_saturation: 3,
        }
    }

    /// Short content hash; changes whenever any keyword or constant changes.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("rubric serializes");
        hex::encode(&Sha256::digest(&json)[..6])
    }
}

fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn contains_phrase(haystack: &[String], phrase: &[String]) -> bool {
    !phrase.is_empty() && haystack.windows(phrase.len()).any(|w| w == phrase)
}

/// Deterministic rubric scores for an extension. The class rubric is looked
/// up by the gold label; an unknown label scores zero specificity and depth.
pub fn rubric_score(
    extension: &str,
    gold: &str,
    reasoning: &str,
    _predicted: &str,
    rubric: &RubricSpec,
) -> JudgeScores {
    let ext = words(extension);
    if ext.is_empty() {
        return JudgeScores::default();
    }
    let empty = ClassRubric::default();
    let class = rubric.classes.get(gold).unwrap_or(&empty);
    let present: BTreeSet<&str> = ext.iter().map(String::as_str).collect();

    let keywords: BTreeSet<String> = class.keywords.iter().map(|k| k.to_lowercase()).collect();
    let specificity = if keywords.is_empty() {
        0.0
    } else {
        let hits = keywords
            .iter()
            .filter(|k| present.contains(k.as_str()))
            .count();
        (hits as f64 / keywords.len() as f64).min(1.0)
    };

    let generic_hits = class
        .generic_phrases
        .iter()
        .filter(|p| contains_phrase(&ext, &words(p)))
        .count();
    let n = ext.len() as f64;
    let repeated = (n - present.len() as f64) / n;
    let max_words = rubric.max_words.max(1) as f64;
    let excess = (n - max_words).max(0.0) / max_words;
    let appropriateness = 1.0
        - rubric.generic_penalty * generic_hits as f64
        - rubric.repeat_penalty * repeated
        - excess;

    let reasoning_words: BTreeSet<String> = words(reasoning).into_iter().collect();
    let shared = present
        .iter()
        .filter(|w| reasoning_words.contains(**w))
        .count();
    let relevance = shared as f64 / rubric.relevance_saturation.max(1) as f64;

    let markers: BTreeSet<String> = class
        .depth_markers
        .iter()
        .map(|m| m.to_lowercase())
        .collect();
    let depth_hits = markers
        .iter()
        .filter(|m| present.contains(m.as_str()))
        .count();
    let depth = depth_hits as f64 / rubric.depth_saturation.max(1) as f64;

    JudgeScores::new(specificity, appropriateness, relevance, depth)
}

/// Offline judge backed by [`rubric_score`].
#[derive(Debug, Clone)]
pub struct RubricJudge {
    pub rubric: RubricSpec,
}

impl RubricJudge {
    pub fn new(rubric: RubricSpec) -> Self {
        RubricJudge { rubric }
    }
}

impl Judge for RubricJudge {
    fn score(
        &self,
        extension: &str,
        gold: &str,
        reasoning: &str,
        predicted: &str,
    ) -> Result<JudgeScores, JudgeError> {
        Ok(rubric_score(
            extension,
            gold,
            reasoning,
            predicted,
            &self.rubric,
        ))
    }

    fn version(&self) -> String {
        format!(
            "rubric-v{}-{}",
            self.rubric.version,
            self.rubric.fingerprint()
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> RubricSpec {
        let class = ClassRubric {
            keywords: vec![
                "enzyme".into(),
                "biopsy".into(),
                "weakness".into(),
                "proximal".into(),
            ],
            depth_markers: vec!["measure".into(), "schedule".into(), "verify".into()],
            generic_phrases: vec!["be careful".into(), "monitor closely".into()],
        };
        RubricSpec::new([("Myopathy".to_string(), class)].into_iter().collect())
    }

    #[test]
    fn three_of_four_keywords() {
        let s = rubric_score(
            "enzyme biopsy proximal",
            "Myopathy",
            "",
            "Myopathy",
            &spec(),
        );
        assert_eq!(s.specificity, 0.75);
        assert_eq!(s.appropriateness, 1.0);
    }

    #[test]
    fn empty_extension_scores_zero() {
        assert_eq!(
            rubric_score("", "Myopathy", "dense", "Myopathy", &spec()),
            JudgeScores::default()
        );
        assert_eq!(
            rubric_score("  ... ", "Myopathy", "dense", "Myopathy", &spec()),
            JudgeScores::default()
        );
    }

    #[test]
    fn generic_phrase_is_penalized() {
        let s = rubric_score(
            "be careful",
            "Myopathy",
            "dense bursts",
            "Myopathy",
            &spec(),
        );
        assert_eq!(s.appropriateness, 0.5);
        assert_eq!(s.specificity, 0.0);
        let two = rubric_score(
            "be careful and monitor closely",
            "Myopathy",
            "",
            "Myopathy",
            &spec(),
        );
        assert_eq!(two.appropriateness, 0.0);
    }

    #[test]
    fn repetition_and_length_are_penalized() {
        let s = rubric_score(
            "enzyme enzyme biopsy biopsy",
            "Myopathy",
            "",
            "Myopathy",
            &spec(),
        );
        assert_eq!(s.appropriateness, 0.5);
        assert_eq!(s.specificity, 0.5);
        let long: Vec<String> = (0..18).map(|i| format!("w{i}")).collect();
        let s = rubric_score(&long.join(" "), "Myopathy", "", "Myopathy", &spec());
        assert_eq!(s.appropriateness, 0.5);
        let s = rubric_score(
            &[long.clone(), long].concat().join(" "),
            "Myopathy",
            "",
            "Myopathy",
            &spec(),
        );
        assert_eq!(s.appropriateness, 0.0);
    }

    #[test]
    fn relevance_and_depth_saturate() {
        let s = rubric_score(
            "dense bursts seen so measure schedule verify",
            "Myopathy",
            "dense bursts",
            "Myopathy",
            &spec(),
        );
        assert_eq!((s.relevance, s.depth), (1.0, 1.0));
        let s = rubric_score(
            "dense measure",
            "Myopathy",
            "dense bursts",
            "Myopathy",
            &spec(),
        );
        assert_eq!(s.relevance, 0.5);
        assert!((s.depth - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn specific_beats_generic() {
        let generic = rubric_score(
            "monitor strength",
            "Myopathy",
            "dense bursts",
            "Myopathy",
            &spec(),
        );
        let specific = rubric_score(
            "recommend blood tests to measure muscle enzyme levels and biopsy",
            "Myopathy",
            "dense bursts",
            "Myopathy",
            &spec(),
        );
        assert!(specific.mean() > generic.mean());
    }

    #[test]
    fn version_tracks_rubric_content() {
        let a = RubricJudge::new(spec());
        let mut changed = spec();
        changed.generic_penalty = 0.25;
        assert_ne!(a.version(), RubricJudge::new(changed).version());
        assert_eq!(a.version(), RubricJudge::new(spec()).version());
    }
}
