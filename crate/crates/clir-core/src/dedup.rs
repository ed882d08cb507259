//! Min-hash deduplication of triples keyed on the English query.
//!
//! Texts are NFC-normalized and lowercased, shingled into character
//! n-grams, and signed with one min value per seeded permutation. A triple
//! is dropped when its query signature estimates Jaccard at or above the
//! threshold against any previously kept triple; the first occurrence
//! always wins. LSH banding narrows the candidate set but the decision is
//! always the signature comparison.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::domain::Triple;
use crate::error::{Error, Result};

/// Mersenne prime 2^61 - 1, the modulus of the permutation family.
const MINHASH_PRIME: u128 = (1 << 61) - 1;

/// Min-hash parameters. The defaults are surfaced as CLI flags because the
/// procedure they implement names no concrete values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DedupConfig {
    pub num_perms: usize,
    /// Character n-gram width.
    pub shingle: usize,
    /// Estimated-Jaccard drop threshold in (0, 1].
    pub threshold: f64,
    pub seed: u64,
}

impl Default for DedupConfig {
    fn default() -> Self {
        DedupConfig {
            num_perms: 128,
            shingle: 5,
            threshold: 0.8,
            seed: 42,
        }
    }
}

impl DedupConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_perms < 16 {
            return Err(Error::Precondition(format!(
                "num_perms must be at least 16, got {}",
                self.num_perms
            )));
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::Precondition(format!(
                "threshold must be in (0, 1], got {}",
                self.threshold
            )));
        }
        if self.shingle == 0 {
            return Err(Error::Precondition("shingle width must be positive".into()));
        }
        Ok(())
    }

    /// 4 rows per band when the permutation count allows it.
    fn rows_per_band(&self) -> usize {
        [4, 2, 1]
            .into_iter()
            .find(|&r| self.num_perms.is_multiple_of(r))
            .unwrap()
    }
}

/// One signature: the per-permutation minimum over the shingle set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MinHashSignature {
    pub values: Vec<u64>,
}

/// Fraction of equal positions, an unbiased estimate of shingle-set Jaccard.
pub fn estimate_jaccard(a: &MinHashSignature, b: &MinHashSignature) -> f64 {
    assert_eq!(a.values.len(), b.values.len(), "signatures from different configs");
    let matches = a
        .values
        .iter()
        .zip(&b.values)
        .filter(|(x, y)| x == y)
        .count();
    matches as f64 / a.values.len() as f64
}

/// NFC normalization plus lowercasing, applied before shingling.
pub fn canonical_text(text: &str) -> String {
    text.nfc().collect::<String>().to_lowercase()
}

/// Hashed character n-gram shingles of the canonical text. Texts shorter
/// than the shingle width become a single whole-text shingle.
fn shingle_hashes(canonical: &str, width: usize) -> Vec<u64> {
    let chars: Vec<char> = canonical.chars().collect();
    if chars.len() <= width {
        return vec![fnv1a_chars(&chars)];
    }
    let mut hashes: Vec<u64> = chars
        .windows(width)
        .map(fnv1a_chars)
        .collect();
    hashes.sort_unstable();
    hashes.dedup();
    hashes
}

fn fnv1a_chars(chars: &[char]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    let mut buf = [0u8; 4];
    for &c in chars {
        for byte in c.encode_utf8(&mut buf).as_bytes() {
            hash ^= u64::from(*byte);
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    hash
}

/// The permutation family `h -> (a*h + b) mod (2^61-1)`, drawn once per
/// config seed.
struct PermutationFamily {
    params: Vec<(u64, u64)>,
}

impl PermutationFamily {
    fn new(cfg: &DedupConfig) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
        let params = (0..cfg.num_perms)
            .map(|_| {
                let a = rng.gen_range(1..MINHASH_PRIME as u64);
                let b = rng.gen_range(0..MINHASH_PRIME as u64);
                (a, b)
            })
            .collect();
        PermutationFamily { params }
    }

    fn sign(&self, shingles: &[u64]) -> MinHashSignature {
        let values = self
            .params
            .iter()
            .map(|&(a, b)| {
                shingles
                    .iter()
                    .map(|&h| {
                        ((u128::from(a) * u128::from(h) + u128::from(b)) % MINHASH_PRIME) as u64
                    })
                    .min()
                    .expect("shingle set never empty")
            })
            .collect();
        MinHashSignature { values }
    }
}

/// Signs one text. Errors when the canonical text is empty.
pub fn signature(text: &str, cfg: &DedupConfig) -> Result<MinHashSignature> {
    cfg.validate()?;
    let family = PermutationFamily::new(cfg);
    signature_with(text, cfg, &family)
}

fn signature_with(
    text: &str,
    cfg: &DedupConfig,
    family: &PermutationFamily,
) -> Result<MinHashSignature> {
    let canonical = canonical_text(text);
    if canonical.is_empty() {
        return Err(Error::Precondition(
            "cannot sign empty text after normalization".into(),
        ));
    }
    Ok(family.sign(&shingle_hashes(&canonical, cfg.shingle)))
}

/// One dropped triple and the kept triple it duplicates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedTriple {
    pub id: String,
    pub duplicate_of: String,
}

/// Result of a deduplication pass.
#[derive(Debug, Clone, PartialEq)]
pub struct DedupOutcome {
    pub kept: Vec<Triple>,
    pub dropped: Vec<DroppedTriple>,
}

/// Deduplicates triples on their English queries, first occurrence wins.
/// Kept triples stay in input order.
pub fn dedup_triples(triples: Vec<Triple>, cfg: &DedupConfig) -> Result<DedupOutcome> {
    cfg.validate()?;
    let family = PermutationFamily::new(cfg);
    let signatures: Vec<MinHashSignature> = triples
        .par_iter()
        .map(|t| signature_with(&t.query.en, cfg, &family))
        .collect::<Result<_>>()?;

    let rows = cfg.rows_per_band();
    let bands = cfg.num_perms / rows;
    // band index -> band values -> indices into `kept`
    let mut buckets: Vec<HashMap<&[u64], Vec<usize>>> = vec![HashMap::new(); bands];

    let mut kept: Vec<Triple> = Vec::with_capacity(triples.len());
    let mut kept_signatures: Vec<&MinHashSignature> = Vec::with_capacity(triples.len());
    let mut dropped = Vec::new();

    for (triple, sig) in triples.iter().zip(&signatures) {
        let mut candidates: Vec<usize> = Vec::new();
        for (band, bucket) in buckets.iter().enumerate() {
            if let Some(indices) = bucket.get(&sig.values[band * rows..(band + 1) * rows]) {
                candidates.extend_from_slice(indices);
            }
        }
        candidates.sort_unstable();
        candidates.dedup();

        // Earliest kept match becomes the recorded original.
        let duplicate_of = candidates
            .into_iter()
            .find(|&k| estimate_jaccard(sig, kept_signatures[k]) >= cfg.threshold);

        match duplicate_of {
            Some(k) => dropped.push(DroppedTriple {
                id: triple.id.clone(),
                duplicate_of: kept[k].id.clone(),
            }),
            None => {
                let index = kept.len();
                for (band, bucket) in buckets.iter_mut().enumerate() {
                    bucket
                        .entry(&sig.values[band * rows..(band + 1) * rows])
                        .or_default()
                        .push(index);
                }
                kept.push(triple.clone());
                kept_signatures.push(sig);
            }
        }
    }
    Ok(DedupOutcome { kept, dropped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::BilingualText;
    use rand::seq::SliceRandom;

    fn triple(id: &str, query_en: &str) -> Triple {
        Triple {
            id: id.to_string(),
            query: BilingualText::new(format!("질문 {id}"), query_en),
            positive: BilingualText::new("문서", "document"),
            synthetic_negative: BilingualText::new("아님", "not it"),
            metadata: Default::default(),
        }
    }

    #[test]
    fn signature_is_deterministic() {
        let cfg = DedupConfig::default();
        let a = signature("the quick brown fox jumps over the lazy dog", &cfg).unwrap();
        let b = signature("the quick brown fox jumps over the lazy dog", &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.values.len(), cfg.num_perms);
    }

    #[test]
    fn seed_changes_the_permutation_family() {
        let base = DedupConfig::default();
        let reseeded = DedupConfig {
            seed: base.seed + 1,
            ..base.clone()
        };
        let a = signature("the same text signed twice", &base).unwrap();
        let b = signature("the same text signed twice", &reseeded).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn identical_texts_estimate_one() {
        let cfg = DedupConfig::default();
        let a = signature("같은 질문입니다 exactly the same", &cfg).unwrap();
        let b = signature("같은 질문입니다 exactly the same", &cfg).unwrap();
        assert_eq!(estimate_jaccard(&a, &b), 1.0);
    }

    #[test]
    fn normalization_folds_case_and_composition() {
        let cfg = DedupConfig::default();
        // "é" precomposed vs "e" + combining acute, plus a case difference.
        let a = signature("Caf\u{00e9} Seoul review", &cfg).unwrap();
        let b = signature("cafe\u{0301} seoul review", &cfg).unwrap();
        assert_eq!(estimate_jaccard(&a, &b), 1.0);
    }

    #[test]
    fn short_text_uses_whole_text_shingle() {
        let cfg = DedupConfig::default();
        let sig = signature("abc", &cfg).unwrap();
        assert_eq!(sig.values.len(), cfg.num_perms);
        assert!(signature("", &cfg).is_err());
    }

    /// Exact Jaccard on independently computed shingle sets, the oracle for
    /// the estimate-accuracy bound.
    fn exact_jaccard(a: &str, b: &str, width: usize) -> f64 {
        use std::collections::BTreeSet;
        let set = |text: &str| -> BTreeSet<String> {
            let canonical: String = text.nfc().collect::<String>().to_lowercase();
            let chars: Vec<char> = canonical.chars().collect();
            if chars.len() <= width {
                return BTreeSet::from([canonical]);
            }
            chars.windows(width).map(|w| w.iter().collect()).collect()
        };
        let sa = set(a);
        let sb = set(b);
        let intersection = sa.intersection(&sb).count() as f64;
        let union = sa.union(&sb).count() as f64;
        intersection / union
    }

    #[test]
    fn estimate_tracks_exact_jaccard() {
        let cfg = DedupConfig::default();
        let family = PermutationFamily::new(&cfg);
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let alphabet: Vec<char> = "abcdefghijklmnopqrstuvwxyz 가나다라마바사".chars().collect();

        let mut within = 0usize;
        let total = 150usize;
        for _ in 0..total {
            let base: String = (0..120)
                .map(|_| *alphabet.choose(&mut rng).unwrap())
                .collect();
            // Mutate a random fraction of characters to sweep Jaccard.
            let rate: f64 = rng.gen_range(0.0..0.4);
            let mutated: String = base
                .chars()
                .map(|c| {
                    if rng.gen_bool(rate) {
                        *alphabet.choose(&mut rng).unwrap()
                    } else {
                        c
                    }
                })
                .collect();
            let exact = exact_jaccard(&base, &mutated, cfg.shingle);
            let sig_a = signature_with(&base, &cfg, &family).unwrap();
            let sig_b = signature_with(&mutated, &cfg, &family).unwrap();
            if (estimate_jaccard(&sig_a, &sig_b) - exact).abs() <= 0.15 {
                within += 1;
            }
        }
        assert!(
            within as f64 / total as f64 >= 0.99,
            "only {within}/{total} estimates within 0.15 of exact Jaccard"
        );
    }

    #[test]
    fn exact_duplicate_dropped_with_provenance() {
        let cfg = DedupConfig::default();
        let triples = vec![
            triple("t1", "how do korean consonants assimilate in speech"),
            triple("t2", "how do korean consonants assimilate in speech"),
            triple("t3", "completely unrelated query about volcano formation"),
        ];
        let outcome = dedup_triples(triples, &cfg).unwrap();
        assert_eq!(outcome.kept.len(), 2);
        assert_eq!(outcome.kept[0].id, "t1");
        assert_eq!(outcome.kept[1].id, "t3");
        assert_eq!(
            outcome.dropped,
            vec![DroppedTriple {
                id: "t2".into(),
                duplicate_of: "t1".into()
            }]
        );
    }

    #[test]
    fn disjoint_vocabulary_kept() {
        let cfg = DedupConfig::default();
        let triples = vec![
            triple("t1", "aurora borealis photography guide"),
            triple("t2", "kimchi fermentation temperature control"),
        ];
        let outcome = dedup_triples(triples, &cfg).unwrap();
        assert_eq!(outcome.kept.len(), 2);
        assert!(outcome.dropped.is_empty());
    }

    #[test]
    fn dedup_is_idempotent_and_order_stable() {
        let cfg = DedupConfig::default();
        let mut triples = Vec::new();
        for i in 0..20 {
            triples.push(triple(
                &format!("u{i}"),
                &format!("unique query number {i} about topic {}", i * 31),
            ));
            triples.push(triple(
                &format!("d{i}"),
                &format!("unique query number {i} about topic {}", i * 31),
            ));
        }
        let first = dedup_triples(triples, &cfg).unwrap();
        let kept_ids: Vec<&str> = first.kept.iter().map(|t| t.id.as_str()).collect();
        let mut sorted = kept_ids.clone();
        sorted.sort_by_key(|id| id[1..].parse::<u32>().unwrap());
        assert_eq!(kept_ids, sorted, "kept order must follow input order");

        let second = dedup_triples(first.kept.clone(), &cfg).unwrap();
        assert_eq!(second.kept, first.kept);
        assert!(second.dropped.is_empty());
    }

    #[test]
    fn config_validation() {
        let mut cfg = DedupConfig {
            num_perms: 8,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        cfg.num_perms = 128;
        cfg.threshold = 0.0;
        assert!(cfg.validate().is_err());
        cfg.threshold = 1.0;
        assert!(cfg.validate().is_ok());
    }
}
