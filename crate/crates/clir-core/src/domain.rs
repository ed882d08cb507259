//! Domain vocabulary shared by every pipeline stage: languages, language
//! combinations, task directions, triples, training examples and scores.
//!
//! The canonical text forms produced by [`LangCombo`] (`"koenen"`) and
//! [`TaskDirection`] (`"en-ko"`) appear in CLI flags, file names and report
//! headers; those strings are the stable public contract.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One of the two languages a record can carry text in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    Ko,
    En,
}

impl Language {
    pub const ALL: [Language; 2] = [Language::Ko, Language::En];

    pub fn code(self) -> &'static str {
        match self {
            Language::Ko => "ko",
            Language::En => "en",
        }
    }

    pub fn parse(code: &str) -> Result<Language> {
        match code {
            "ko" => Ok(Language::Ko),
            "en" => Ok(Language::En),
            other => Err(Error::Parse(format!(
                "unknown language code {other:?} (expected \"ko\" or \"en\")"
            ))),
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Language {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Language::parse(s)
    }
}

/// Languages of the query, positive and negatives of one training dataset.
///
/// Rendered as the 6-character concatenation of the three codes, e.g.
/// `"koenen"` for a Korean query, English positive and English negatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LangCombo {
    pub query_lang: Language,
    pub positive_lang: Language,
    pub negative_lang: Language,
}

impl LangCombo {
    pub fn new(query_lang: Language, positive_lang: Language, negative_lang: Language) -> Self {
        LangCombo {
            query_lang,
            positive_lang,
            negative_lang,
        }
    }

    /// The language of one slot of a training example.
    pub fn slot_lang(&self, slot: ExampleSlot) -> Language {
        match slot {
            ExampleSlot::Anchor => self.query_lang,
            ExampleSlot::Positive => self.positive_lang,
            ExampleSlot::Negatives => self.negative_lang,
        }
    }

    pub fn render(&self) -> String {
        format!(
            "{}{}{}",
            self.query_lang, self.positive_lang, self.negative_lang
        )
    }
}

/// Slot of a training example addressed by a [`LangCombo`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExampleSlot {
    Anchor,
    Positive,
    Negatives,
}

/// Parses the 6-character combination form, e.g. `"koenko"`.
pub fn parse_combo(text: &str) -> Result<LangCombo> {
    if !text.is_ascii() || text.len() != 6 {
        return Err(Error::Parse(format!(
            "language combination {text:?} must be exactly 6 ASCII characters, got {}",
            text.chars().count()
        )));
    }
    let seg = |range: std::ops::Range<usize>, slot: &str| -> Result<Language> {
        let part = &text[range];
        Language::parse(part).map_err(|_| {
            Error::Parse(format!(
                "language combination {text:?}: {slot} segment {part:?} is not a language code"
            ))
        })
    };
    Ok(LangCombo {
        query_lang: seg(0..2, "query")?,
        positive_lang: seg(2..4, "positive")?,
        negative_lang: seg(4..6, "negatives")?,
    })
}

impl fmt::Display for LangCombo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

impl FromStr for LangCombo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_combo(s)
    }
}

impl Serialize for LangCombo {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.render())
    }
}

impl<'de> Deserialize<'de> for LangCombo {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        parse_combo(&text).map_err(serde::de::Error::custom)
    }
}

/// All 8 combinations in reporting row order.
pub fn all_combos() -> Vec<LangCombo> {
    ["kokoko", "kokoen", "koenko", "koenen", "enenen", "enenko", "enkoen", "enkoko"]
        .iter()
        .map(|s| parse_combo(s).expect("static combo table"))
        .collect()
}

/// Structural class of a combination, determined by which slots share a
/// language.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComboClass {
    /// All three slots in one language (kokoko, enenen).
    Mono,
    /// Query differs from positive, positive and negatives match
    /// (koenen, enkoko).
    PositiveNegativesMatch,
    /// Query differs from positive, query and negatives match
    /// (koenko, enkoen).
    QueryNegativesMatch,
    /// Query and positive match, negatives differ (kokoen, enenko).
    SameQueryPositive,
}

/// Classifies a combination by slot-language agreement. The four classes
/// partition all 8 combinations, two members each.
pub fn classify_combo(combo: LangCombo) -> ComboClass {
    let q = combo.query_lang;
    let p = combo.positive_lang;
    let n = combo.negative_lang;
    if q == p && p == n {
        ComboClass::Mono
    } else if q != p && p == n {
        ComboClass::PositiveNegativesMatch
    } else if q != p && q == n {
        ComboClass::QueryNegativesMatch
    } else {
        ComboClass::SameQueryPositive
    }
}

/// Languages of the query and the document pool of one retrieval task,
/// rendered as `"en-ko"` style.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TaskDirection {
    pub query_lang: Language,
    pub doc_lang: Language,
}

impl TaskDirection {
    pub fn new(query_lang: Language, doc_lang: Language) -> Self {
        TaskDirection {
            query_lang,
            doc_lang,
        }
    }

    pub fn is_cross(&self) -> bool {
        self.query_lang != self.doc_lang
    }

    pub fn is_mono(&self) -> bool {
        !self.is_cross()
    }

    pub fn render(&self) -> String {
        format!("{}-{}", self.query_lang, self.doc_lang)
    }

    /// All 4 directions in reporting column order: the two cross-lingual
    /// directions first, then the two mono-lingual ones.
    pub fn all() -> Vec<TaskDirection> {
        ["en-ko", "ko-en", "ko-ko", "en-en"]
            .iter()
            .map(|s| parse_direction(s).expect("static direction table"))
            .collect()
    }
}

/// Parses the `"xx-yy"` direction form.
pub fn parse_direction(text: &str) -> Result<TaskDirection> {
    let (q, d) = text.split_once('-').ok_or_else(|| {
        Error::Parse(format!(
            "task direction {text:?} must look like \"en-ko\" (query-docs)"
        ))
    })?;
    Ok(TaskDirection {
        query_lang: Language::parse(q)
            .map_err(|_| Error::Parse(format!("task direction {text:?}: bad query language {q:?}")))?,
        doc_lang: Language::parse(d)
            .map_err(|_| Error::Parse(format!("task direction {text:?}: bad document language {d:?}")))?,
    })
}

impl fmt::Display for TaskDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

impl FromStr for TaskDirection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_direction(s)
    }
}

impl Serialize for TaskDirection {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.render())
    }
}

impl<'de> Deserialize<'de> for TaskDirection {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        parse_direction(&text).map_err(serde::de::Error::custom)
    }
}

/// Text present in both languages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BilingualText {
    pub ko: String,
    pub en: String,
}

impl BilingualText {
    pub fn new(ko: impl Into<String>, en: impl Into<String>) -> Self {
        BilingualText {
            ko: ko.into(),
            en: en.into(),
        }
    }

    pub fn get(&self, lang: Language) -> &str {
        match lang {
            Language::Ko => &self.ko,
            Language::En => &self.en,
        }
    }

    pub fn is_complete(&self) -> bool {
        !self.ko.trim().is_empty() && !self.en.trim().is_empty()
    }
}

/// One generated bilingual record: a query, its relevant document and a
/// synthetic hard negative, each present in both languages. The canonical
/// JSONL form lives in the ingest module; this struct has no serde shape
/// of its own.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Triple {
    pub id: String,
    pub query: BilingualText,
    pub positive: BilingualText,
    pub synthetic_negative: BilingualText,
    /// Free-form carrier for auxiliary fields (classification category,
    /// task description, positive document id, ...).
    pub metadata: BTreeMap<String, String>,
}

impl Triple {
    /// Checks that all three fields carry non-empty text in both languages.
    pub fn validate(&self) -> Result<()> {
        for (name, text) in [
            ("user_query", &self.query),
            ("positive_document", &self.positive),
            ("hard_negative_document", &self.synthetic_negative),
        ] {
            if !text.is_complete() {
                return Err(Error::Precondition(format!(
                    "triple {:?}: field {name} must have non-empty text in both languages",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

/// One contrastive training example in a specific language combination.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub anchor: String,
    pub positive: String,
    /// Up to 6 negatives: the synthetic one first, then mined ones in
    /// descending similarity order. Shortfall shows up as a shorter list.
    pub negatives: Vec<String>,
    pub combo: LangCombo,
    pub source_triple_id: String,
}

/// An NDCG value expressed in percent, as it appears in result tables.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Score(f64);

impl Score {
    pub fn new(value: f64) -> Result<Score> {
        if !(0.0..=100.0).contains(&value) {
            return Err(Error::Precondition(format!(
                "score {value} outside [0, 100]"
            )));
        }
        Ok(Score(value))
    }

    /// Converts a raw NDCG in [0, 1] to its percent form.
    pub fn from_ndcg(ndcg: f64) -> Result<Score> {
        Score::new(ndcg * 100.0)
    }

    /// Full-precision value. Rounding happens only at display time.
    pub fn value(&self) -> f64 {
        self.0
    }

    /// Two-decimal display form used in rendered tables.
    pub fn display(&self) -> String {
        display_2dp(self.0)
    }
}

/// Two-decimal display of a non-negative score. Binary representation
/// error is snapped away at the 9th decimal so a value like the computed
/// mean of 93.16 and 79.41 (stored as 86.28499999999...) still displays as
/// 86.29, then the decimal value rounds half away from zero.
pub fn display_2dp(value: f64) -> String {
    debug_assert!(value >= 0.0);
    let nanos = (value * 1e9).round() as i64;
    let hundredths = (nanos + 5_000_000) / 10_000_000;
    format!("{}.{:02}", hundredths / 100, hundredths % 100)
}

impl fmt::Display for Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.display())
    }
}

impl TryFrom<f64> for Score {
    type Error = Error;

    fn try_from(value: f64) -> Result<Score> {
        Score::new(value)
    }
}

impl From<Score> for f64 {
    fn from(score: Score) -> f64 {
        score.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_combo_mixed_case() {
        let c = parse_combo("koenko").unwrap();
        assert_eq!(c.query_lang, Language::Ko);
        assert_eq!(c.positive_lang, Language::En);
        assert_eq!(c.negative_lang, Language::Ko);
    }

    #[test]
    fn parse_combo_all_same() {
        let c = parse_combo("kokoko").unwrap();
        assert_eq!(
            c,
            LangCombo::new(Language::Ko, Language::Ko, Language::Ko)
        );
    }

    #[test]
    fn parse_combo_malformed() {
        assert!(parse_combo("enx").is_err());
        assert!(parse_combo("").is_err());
        assert!(parse_combo("koenfr").is_err());
        assert!(parse_combo("가나다라마바").is_err());
        let err = parse_combo("koenxx").unwrap_err().to_string();
        assert!(err.contains("negatives"), "should name the bad segment: {err}");
    }

    #[test]
    fn all_combos_order_and_count() {
        let combos = all_combos();
        assert_eq!(combos.len(), 8);
        assert_eq!(combos[0].render(), "kokoko");
        let rendered: Vec<String> = combos.iter().map(|c| c.render()).collect();
        assert!(rendered.contains(&"koenen".to_string()));
        assert!(rendered.contains(&"enkoko".to_string()));
    }

    #[test]
    fn combo_round_trip() {
        for combo in all_combos() {
            assert_eq!(parse_combo(&combo.render()).unwrap(), combo);
        }
    }

    #[test]
    fn direction_round_trip() {
        for dir in TaskDirection::all() {
            assert_eq!(parse_direction(&dir.render()).unwrap(), dir);
        }
    }

    #[test]
    fn direction_cross_mono() {
        assert!(parse_direction("en-ko").unwrap().is_cross());
        assert!(parse_direction("ko-en").unwrap().is_cross());
        assert!(parse_direction("ko-ko").unwrap().is_mono());
        assert!(parse_direction("en-en").unwrap().is_mono());
    }

    #[test]
    fn classify_all_eight() {
        use ComboClass::*;
        let expected = [
            ("kokoko", Mono),
            ("enenen", Mono),
            ("koenen", PositiveNegativesMatch),
            ("enkoko", PositiveNegativesMatch),
            ("koenko", QueryNegativesMatch),
            ("enkoen", QueryNegativesMatch),
            ("kokoen", SameQueryPositive),
            ("enenko", SameQueryPositive),
        ];
        for (text, class) in expected {
            assert_eq!(classify_combo(parse_combo(text).unwrap()), class, "{text}");
        }
        // Exhaustive partition: two members per class.
        let mut counts = BTreeMap::new();
        for combo in all_combos() {
            *counts.entry(format!("{:?}", classify_combo(combo))).or_insert(0) += 1;
        }
        assert_eq!(counts.len(), 4);
        assert!(counts.values().all(|&n| n == 2));
    }

    #[test]
    fn score_bounds() {
        assert!(Score::new(0.0).is_ok());
        assert!(Score::new(100.0).is_ok());
        assert!(Score::new(-0.01).is_err());
        assert!(Score::new(100.5).is_err());
        assert_eq!(Score::new(85.805).unwrap().display(), "85.81");
        assert_eq!(Score::new((93.16 + 79.41) / 2.0).unwrap().display(), "86.29");
        assert_eq!(Score::new(80.0525).unwrap().display(), "80.05");
        assert_eq!(Score::new(100.0).unwrap().display(), "100.00");
        assert_eq!(Score::new(0.0).unwrap().display(), "0.00");
    }

    #[test]
    fn combo_serde_uses_canonical_form() {
        let combo = parse_combo("koenen").unwrap();
        assert_eq!(serde_json::to_string(&combo).unwrap(), "\"koenen\"");
        let back: LangCombo = serde_json::from_str("\"enkoko\"").unwrap();
        assert_eq!(back.render(), "enkoko");
    }
}
