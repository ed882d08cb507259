//! On-disk formats: triples, parallel corpora, query sets, qrels, embedding
//! matrices and tensor archives, plus the client for the external embedding
//! service.
//!
//! Every reader here rejects inputs its paired writer would never produce,
//! so write-then-read and read-then-write are identities on valid data.

pub mod emb1;
pub mod embed_http;
pub mod tensors;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::domain::{BilingualText, Language, Triple};
use crate::error::{Error, Result};

const TRIPLE_TEXT_KEYS: [(&str, &str); 3] = [
    ("user_query (kor)", "user_query (eng)"),
    ("positive_document (kor)", "positive_document (eng)"),
    ("hard_negative_document (kor)", "hard_negative_document (eng)"),
];

/// One document of a parallel corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusDoc {
    pub doc_id: String,
    pub text_ko: String,
    pub text_en: String,
}

impl CorpusDoc {
    pub fn text(&self, lang: Language) -> &str {
        match lang {
            Language::Ko => &self.text_ko,
            Language::En => &self.text_en,
        }
    }
}

/// A Korean-English parallel document collection.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParallelCorpus {
    pub docs: Vec<CorpusDoc>,
}

impl ParallelCorpus {
    pub fn new(docs: Vec<CorpusDoc>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(docs.len());
        for doc in &docs {
            if !seen.insert(doc.doc_id.as_str()) {
                return Err(Error::Precondition(format!(
                    "duplicate doc_id {:?}",
                    doc.doc_id
                )));
            }
            if doc.text_ko.trim().is_empty() || doc.text_en.trim().is_empty() {
                return Err(Error::Precondition(format!(
                    "doc {:?} must have non-empty text in both languages",
                    doc.doc_id
                )));
            }
        }
        Ok(ParallelCorpus { docs })
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn doc(&self, doc_id: &str) -> Option<&CorpusDoc> {
        self.docs.iter().find(|d| d.doc_id == doc_id)
    }

    /// doc_id -> text map for one language side.
    pub fn texts(&self, lang: Language) -> BTreeMap<String, String> {
        self.docs
            .iter()
            .map(|d| (d.doc_id.clone(), d.text(lang).to_string()))
            .collect()
    }
}

/// One evaluation query with its gold document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_id: String,
    pub text_ko: String,
    pub text_en: String,
    pub gold_doc_id: String,
}

impl QueryRecord {
    pub fn text(&self, lang: Language) -> &str {
        match lang {
            Language::Ko => &self.text_ko,
            Language::En => &self.text_en,
        }
    }
}

/// Relevance judgments: query_id -> doc_id -> graded relevance.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Qrels {
    pub entries: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    /// Checks that every listed query has at least one positive judgment.
    pub fn validate(&self) -> Result<()> {
        for (query_id, docs) in &self.entries {
            if !docs.values().any(|&rel| rel >= 1) {
                return Err(Error::Precondition(format!(
                    "query {query_id:?} has no judgment with relevance >= 1"
                )));
            }
        }
        Ok(())
    }

    pub fn for_query(&self, query_id: &str) -> Option<&BTreeMap<String, u32>> {
        self.entries.get(query_id)
    }
}

fn jsonl_lines(path: &Path) -> Result<impl Iterator<Item = std::io::Result<String>>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(BufReader::new(file).lines())
}

/// Reads the triple JSONL schema. The six bilingual text keys are canonical
/// and case-sensitive; unknown top-level fields are preserved in
/// [`Triple::metadata`] (non-string values as compact JSON).
pub fn read_triples(path: impl AsRef<Path>) -> Result<Vec<Triple>> {
    let path = path.as_ref();
    let mut triples = Vec::new();
    let mut seen_ids = HashSet::new();
    for (idx, line) in jsonl_lines(path)?.enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut object: serde_json::Map<String, Value> = serde_json::from_str(&line)
            .map_err(|e| Error::record(line_no, format!("not a JSON object: {e}")))?;

        let mut take_text = |key: &str| -> Result<String> {
            match object.remove(key) {
                Some(Value::String(s)) => Ok(s),
                Some(other) => Err(Error::record(
                    line_no,
                    format!("field {key:?} must be a string, got {other}"),
                )),
                None => Err(Error::record(line_no, format!("missing field {key:?}"))),
            }
        };
        let query = BilingualText::new(
            take_text(TRIPLE_TEXT_KEYS[0].0)?,
            take_text(TRIPLE_TEXT_KEYS[0].1)?,
        );
        let positive = BilingualText::new(
            take_text(TRIPLE_TEXT_KEYS[1].0)?,
            take_text(TRIPLE_TEXT_KEYS[1].1)?,
        );
        let synthetic_negative = BilingualText::new(
            take_text(TRIPLE_TEXT_KEYS[2].0)?,
            take_text(TRIPLE_TEXT_KEYS[2].1)?,
        );

        let id = match object.remove("id") {
            Some(Value::String(s)) => s,
            Some(other) => {
                return Err(Error::record(
                    line_no,
                    format!("field \"id\" must be a string, got {other}"),
                ))
            }
            None => format!("line{line_no:06}"),
        };

        let mut metadata = BTreeMap::new();
        if let Some(value) = object.remove("metadata") {
            let map: BTreeMap<String, Value> = serde_json::from_value(value).map_err(|e| {
                Error::record(line_no, format!("field \"metadata\" must be an object: {e}"))
            })?;
            for (k, v) in map {
                metadata.insert(k, value_to_string(v));
            }
        }
        for (k, v) in object {
            metadata.insert(k, value_to_string(v));
        }

        if !seen_ids.insert(id.clone()) {
            return Err(Error::record(line_no, format!("duplicate triple id {id:?}")));
        }
        let triple = Triple {
            id,
            query,
            positive,
            synthetic_negative,
            metadata,
        };
        triple
            .validate()
            .map_err(|e| Error::record(line_no, e.to_string()))?;
        triples.push(triple);
    }
    Ok(triples)
}

fn value_to_string(value: Value) -> String {
    match value {
        Value::String(s) => s,
        other => other.to_string(),
    }
}

#[derive(Serialize)]
struct TripleOut<'a> {
    id: &'a str,
    #[serde(rename = "user_query (kor)")]
    query_ko: &'a str,
    #[serde(rename = "user_query (eng)")]
    query_en: &'a str,
    #[serde(rename = "positive_document (kor)")]
    positive_ko: &'a str,
    #[serde(rename = "positive_document (eng)")]
    positive_en: &'a str,
    #[serde(rename = "hard_negative_document (kor)")]
    negative_ko: &'a str,
    #[serde(rename = "hard_negative_document (eng)")]
    negative_en: &'a str,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    metadata: &'a BTreeMap<String, String>,
}

/// Writes triples in the canonical JSONL schema, one object per line.
pub fn write_triples(triples: &[Triple], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for triple in triples {
        let record = TripleOut {
            id: &triple.id,
            query_ko: &triple.query.ko,
            query_en: &triple.query.en,
            positive_ko: &triple.positive.ko,
            positive_en: &triple.positive.en,
            negative_ko: &triple.synthetic_negative.ko,
            negative_en: &triple.synthetic_negative.en,
            metadata: &triple.metadata,
        };
        serde_json::to_writer(&mut out, &record)
            .map_err(|e| Error::Precondition(format!("triple {:?}: {e}", triple.id)))?;
        out.push(b'\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads the `{"doc_id", "text_ko", "text_en"}` corpus JSONL.
pub fn read_corpus(path: impl AsRef<Path>) -> Result<ParallelCorpus> {
    let path = path.as_ref();
    let mut docs = Vec::new();
    for (idx, line) in jsonl_lines(path)?.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: CorpusDoc = serde_json::from_str(&line)
            .map_err(|e| Error::record(idx + 1, format!("bad corpus record: {e}")))?;
        docs.push(doc);
    }
    ParallelCorpus::new(docs)
}

pub fn write_corpus(corpus: &ParallelCorpus, path: impl AsRef<Path>) -> Result<()> {
    write_jsonl(&corpus.docs, path)
}

/// Reads the `{"query_id", "text_ko", "text_en", "gold_doc_id"}` JSONL.
pub fn read_queries(path: impl AsRef<Path>) -> Result<Vec<QueryRecord>> {
    let path = path.as_ref();
    let mut queries = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in jsonl_lines(path)?.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let query: QueryRecord = serde_json::from_str(&line)
            .map_err(|e| Error::record(idx + 1, format!("bad query record: {e}")))?;
        if !seen.insert(query.query_id.clone()) {
            return Err(Error::record(
                idx + 1,
                format!("duplicate query_id {:?}", query.query_id),
            ));
        }
        queries.push(query);
    }
    Ok(queries)
}

pub fn write_queries(queries: &[QueryRecord], path: impl AsRef<Path>) -> Result<()> {
    write_jsonl(queries, path)
}

fn write_jsonl<T: Serialize>(records: &[T], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = std::io::BufWriter::new(file);
    for record in records {
        serde_json::to_writer(&mut writer, record)
            .map_err(|e| Error::Precondition(format!("record not serializable: {e}")))?;
        writer.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Reads TREC-style qrels: `query_id 0 doc_id relevance`, whitespace
/// separated, one judgment per line.
pub fn read_qrels(path: impl AsRef<Path>) -> Result<Qrels> {
    let path = path.as_ref();
    let mut qrels = Qrels::default();
    for (idx, line) in jsonl_lines(path)?.enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::record(
                line_no,
                format!("expected 4 fields \"query_id 0 doc_id relevance\", got {}", fields.len()),
            ));
        }
        let relevance: u32 = fields[3].parse().map_err(|_| {
            Error::record(line_no, format!("relevance {:?} is not a non-negative integer", fields[3]))
        })?;
        let previous = qrels
            .entries
            .entry(fields[0].to_string())
            .or_default()
            .insert(fields[2].to_string(), relevance);
        if previous.is_some() {
            return Err(Error::record(
                line_no,
                format!("duplicate judgment for query {:?} doc {:?}", fields[0], fields[2]),
            ));
        }
    }
    qrels.validate()?;
    Ok(qrels)
}

pub fn write_qrels(qrels: &Qrels, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for (query_id, docs) in &qrels.entries {
        for (doc_id, relevance) in docs {
            out.push_str(&format!("{query_id} 0 {doc_id} {relevance}\n"));
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Languages for which a parallel corpus can supply negative texts; with a
/// parallel corpus that is both.
pub fn corpus_languages(corpus: &ParallelCorpus) -> BTreeSet<Language> {
    let mut langs = BTreeSet::new();
    if !corpus.is_empty() {
        langs.insert(Language::Ko);
        langs.insert(Language::En);
    }
    langs
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_temp(content: &str, name: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(name);
        std::fs::write(&path, content).unwrap();
        (dir, path)
    }

    #[test]
    fn read_triples_full_record() {
        let line = r#"{"id":"t1","user_query (kor)":"프랑스어의 발음 규칙은 어떻게 되나요?","user_query (eng)":"What are the pronunciation rules in French?","positive_document (kor)":"프랑스어의 발음 규칙은 비교적 명확하고 체계적입니다.","positive_document (eng)":"The pronunciation rules of French are relatively clear and systematic.","hard_negative_document (kor)":"프랑스어는 로망스어군 언어입니다.","hard_negative_document (eng)":"French is a Romance language.","kdc":"760","positive_doc_id":"d3"}"#;
        let (_dir, path) = write_temp(line, "t.jsonl");
        let triples = read_triples(&path).unwrap();
        assert_eq!(triples.len(), 1);
        let t = &triples[0];
        assert_eq!(t.id, "t1");
        assert!(t.query.ko.starts_with("프랑스어의 발음"));
        assert_eq!(t.metadata.get("kdc").map(String::as_str), Some("760"));
        assert_eq!(t.metadata.get("positive_doc_id").map(String::as_str), Some("d3"));
    }

    #[test]
    fn read_triples_missing_field_names_it() {
        let line = r#"{"user_query (kor)":"질문","user_query (eng)":"q","positive_document (kor)":"문서","hard_negative_document (kor)":"아님","hard_negative_document (eng)":"not it"}"#;
        let (_dir, path) = write_temp(line, "t.jsonl");
        let err = read_triples(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("positive_document (eng)"), "{msg}");
        assert!(msg.contains("line 1"), "{msg}");
    }

    #[test]
    fn read_triples_empty_file() {
        let (_dir, path) = write_temp("", "t.jsonl");
        assert_eq!(read_triples(&path).unwrap(), vec![]);
    }

    #[test]
    fn triples_write_read_round_trip() {
        let triple = Triple {
            id: "t9".into(),
            query: BilingualText::new("질문", "question"),
            positive: BilingualText::new("정답 문서", "answer doc"),
            synthetic_negative: BilingualText::new("함정 문서", "trap doc"),
            metadata: BTreeMap::from([("positive_doc_id".into(), "d9".into())]),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        write_triples(std::slice::from_ref(&triple), &path).unwrap();
        let back = read_triples(&path).unwrap();
        assert_eq!(back, vec![triple]);
    }

    #[test]
    fn corpus_rejects_duplicate_ids() {
        let content = concat!(
            r#"{"doc_id":"d1","text_ko":"문서","text_en":"doc"}"#,
            "\n",
            r#"{"doc_id":"d1","text_ko":"다른","text_en":"other"}"#,
        );
        let (_dir, path) = write_temp(content, "c.jsonl");
        assert!(read_corpus(&path).is_err());
    }

    #[test]
    fn qrels_round_trip_and_validation() {
        let (_dir, path) = write_temp("q1 0 d1 1\nq1 0 d2 0\nq2 0 d3 2\n", "q.tsv");
        let qrels = read_qrels(&path).unwrap();
        assert_eq!(qrels.entries["q1"]["d1"], 1);
        assert_eq!(qrels.entries["q2"]["d3"], 2);

        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("q2.tsv");
        write_qrels(&qrels, &out).unwrap();
        assert_eq!(read_qrels(&out).unwrap(), qrels);
    }

    #[test]
    fn qrels_require_a_positive_per_query() {
        let (_dir, path) = write_temp("q1 0 d1 0\n", "q.tsv");
        assert!(read_qrels(&path).is_err());
    }

    #[test]
    fn corpus_and_queries_round_trip() {
        let corpus = ParallelCorpus::new(vec![
            CorpusDoc {
                doc_id: "d1".into(),
                text_ko: "한국어 본문".into(),
                text_en: "english body".into(),
            },
            CorpusDoc {
                doc_id: "d2".into(),
                text_ko: "두 번째 문서".into(),
                text_en: "second document".into(),
            },
        ])
        .unwrap();
        let queries = vec![QueryRecord {
            query_id: "q1".into(),
            text_ko: "질문".into(),
            text_en: "question".into(),
            gold_doc_id: "d1".into(),
        }];
        let dir = tempfile::tempdir().unwrap();
        let corpus_path = dir.path().join("c.jsonl");
        let queries_path = dir.path().join("q.jsonl");
        write_corpus(&corpus, &corpus_path).unwrap();
        write_queries(&queries, &queries_path).unwrap();
        assert_eq!(read_corpus(&corpus_path).unwrap(), corpus);
        assert_eq!(read_queries(&queries_path).unwrap(), queries);
    }
}
