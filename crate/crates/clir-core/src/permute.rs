//! Expansion of bilingual triples into per-language-combination training
//! datasets: one training example per requested combination, with every
//! slot drawn from the slot language's side of the parallel data.

use std::collections::{BTreeMap, BTreeSet};

use crate::domain::{all_combos, LangCombo, Language, TrainingExample, Triple};
use crate::error::{Error, Result};

/// Which combinations to produce, checked against the languages negatives
/// actually exist in.
#[derive(Debug, Clone)]
pub struct PermutationPlan {
    combos: Vec<LangCombo>,
}

impl PermutationPlan {
    /// Validates that every requested combination can be served: a combo
    /// whose negative language has no texts is rejected here, at plan time.
    pub fn new(
        combos: Vec<LangCombo>,
        negatives_available_langs: &BTreeSet<Language>,
    ) -> Result<Self> {
        if combos.is_empty() {
            return Err(Error::Precondition("permutation plan with no combinations".into()));
        }
        let mut seen = BTreeSet::new();
        for combo in &combos {
            if !seen.insert(*combo) {
                return Err(Error::Precondition(format!(
                    "combination {combo} requested twice"
                )));
            }
            if !negatives_available_langs.contains(&combo.negative_lang) {
                return Err(Error::Precondition(format!(
                    "combination {combo} needs {} negatives but none are available",
                    combo.negative_lang
                )));
            }
        }
        Ok(PermutationPlan { combos })
    }

    /// All 8 combinations.
    pub fn full(negatives_available_langs: &BTreeSet<Language>) -> Result<Self> {
        PermutationPlan::new(all_combos(), negatives_available_langs)
    }

    pub fn combos(&self) -> &[LangCombo] {
        &self.combos
    }
}

/// Expands one triple into one training example per planned combination.
/// `negatives` maps each language to that language's ordered negative
/// texts (synthetic first, then mined).
pub fn expand(
    triple: &Triple,
    negatives: &BTreeMap<Language, Vec<String>>,
    plan: &PermutationPlan,
) -> Result<Vec<TrainingExample>> {
    let mut examples = Vec::with_capacity(plan.combos.len());
    for combo in &plan.combos {
        let negative_texts = negatives.get(&combo.negative_lang).ok_or_else(|| {
            Error::Precondition(format!(
                "triple {:?}: combination {combo} has no negatives slot for {}",
                triple.id, combo.negative_lang
            ))
        })?;
        examples.push(TrainingExample {
            anchor: triple.query.get(combo.query_lang).to_string(),
            positive: triple.positive.get(combo.positive_lang).to_string(),
            negatives: negative_texts.clone(),
            combo: *combo,
            source_triple_id: triple.id.clone(),
        });
    }
    Ok(examples)
}

/// File name convention for one combination's dataset.
pub fn train_file_name(combo: LangCombo) -> String {
    format!("train_{combo}.jsonl")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{parse_combo, BilingualText};

    fn both() -> BTreeSet<Language> {
        BTreeSet::from([Language::Ko, Language::En])
    }

    fn french_triple() -> Triple {
        Triple {
            id: "t1".into(),
            query: BilingualText::new(
                "프랑스어의 발음 규칙은 어떻게 되나요?",
                "What are the pronunciation rules in French?",
            ),
            positive: BilingualText::new(
                "프랑스어의 발음 규칙은 비교적 명확하고 체계적입니다.",
                "The pronunciation rules of French are relatively clear and systematic.",
            ),
            synthetic_negative: BilingualText::new(
                "프랑스어는 로망스어군 언어입니다.",
                "French is a Romance language.",
            ),
            metadata: Default::default(),
        }
    }

    fn negatives() -> BTreeMap<Language, Vec<String>> {
        BTreeMap::from([
            (
                Language::Ko,
                vec!["프랑스어는 로망스어군 언어입니다.".to_string(), "한국어 부정 1".to_string()],
            ),
            (
                Language::En,
                vec!["French is a Romance language.".to_string(), "english negative 1".to_string()],
            ),
        ])
    }

    #[test]
    fn koenen_slots() {
        let plan = PermutationPlan::new(vec![parse_combo("koenen").unwrap()], &both()).unwrap();
        let examples = expand(&french_triple(), &negatives(), &plan).unwrap();
        assert_eq!(examples.len(), 1);
        let example = &examples[0];
        assert!(example.anchor.starts_with("프랑스어의 발음 규칙은"));
        assert!(example.positive.starts_with("The pronunciation rules of French"));
        assert!(example.negatives.iter().all(|n| n.is_ascii()));
    }

    #[test]
    fn enkoko_slots() {
        let plan = PermutationPlan::new(vec![parse_combo("enkoko").unwrap()], &both()).unwrap();
        let examples = expand(&french_triple(), &negatives(), &plan).unwrap();
        let example = &examples[0];
        assert_eq!(example.anchor, "What are the pronunciation rules in French?");
        assert!(example.positive.starts_with("프랑스어의 발음 규칙은"));
        assert!(example.negatives.iter().all(|n| !n.is_ascii()));
    }

    #[test]
    fn full_plan_yields_eight() {
        let plan = PermutationPlan::full(&both()).unwrap();
        let examples = expand(&french_triple(), &negatives(), &plan).unwrap();
        assert_eq!(examples.len(), 8);
        // Anchor depends only on the combo's query language.
        for example in &examples {
            let expected = french_triple().query.get(example.combo.query_lang).to_string();
            assert_eq!(example.anchor, expected);
        }
    }

    #[test]
    fn plan_rejects_missing_negative_language() {
        let only_en = BTreeSet::from([Language::En]);
        let err =
            PermutationPlan::new(vec![parse_combo("koenko").unwrap()], &only_en).unwrap_err();
        assert!(err.to_string().contains("koenko"));
        assert!(err.to_string().contains("ko"));
    }

    #[test]
    fn negatives_never_mix_languages() {
        let plan = PermutationPlan::full(&both()).unwrap();
        let negatives = negatives();
        for example in expand(&french_triple(), &negatives, &plan).unwrap() {
            let expected = &negatives[&example.combo.negative_lang];
            assert_eq!(&example.negatives, expected);
        }
    }

    #[test]
    fn file_names() {
        assert_eq!(
            train_file_name(parse_combo("koenen").unwrap()),
            "train_koenen.jsonl"
        );
    }
}
