//! Degeneration and language-modeling metrics.
//!
//! The pure functions (`seq_rep_n`, `rep_l_from_predictions`, ...) operate on
//! token slices so they can be checked against brute-force oracles; the
//! model-level functions run a teacher-forced forward pass per sequence and
//! aggregate with fixed left-to-right f64 reductions so reports reproduce
//! byte-for-byte.
//!
//! Reports serialize as one flat JSON object (see
//! `schemas/metrics_report.schema.json`); histograms export as CSV with
//! columns token,id,count,frequency_rank ordered by id.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{TokenSequence, Vocabulary};
use crate::model::{LanguageModel, ModelError};
use crate::real::Real;

/// Published human-reference level of 4-gram sequence repetition on a large
/// word-level corpus; kept for table context, not desk-reproducible.
pub const HUMAN_SEQ_REP_4_REFERENCE: f64 = 0.006;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("empty input")]
    EmptyInput,
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("schema violation: {0}")]
    Schema(String),
}

/// Portion of duplicate n-grams in one continuation:
/// 1 - unique n-grams / total n-grams. `None` when the continuation is
/// shorter than n (callers skip such continuations).
pub fn seq_rep_n(continuation: &[u32], n: usize) -> Option<f64> {
    assert!(n >= 1);
    if continuation.len() < n {
        return None;
    }
    let total = continuation.len() - n + 1;
    let unique: BTreeSet<&[u32]> = continuation.windows(n).collect();
    Some(1.0 - unique.len() as f64 / total as f64)
}

/// Mean of [`seq_rep_n`] over continuations long enough to have n-grams.
pub fn mean_seq_rep_n<'a, I>(continuations: I, n: usize) -> Option<f64>
where
    I: IntoIterator<Item = &'a [u32]>,
{
    let mut sum = 0.0;
    let mut count = 0usize;
    for c in continuations {
        if let Some(v) = seq_rep_n(c, n) {
            sum += v;
            count += 1;
        }
    }
    (count > 0).then(|| sum / count as f64)
}

/// Fraction of predictions that occur within the previous `l` tokens of
/// their context. `preds[j]` is the model's top-1 prediction for `seq[j+1]`
/// given `seq[..=j]`; steps with fewer than `l` preceding tokens use the
/// truncated available context.
pub fn rep_l_from_predictions(seq: &[u32], preds: &[u32], l: usize) -> f64 {
    assert!(l >= 1);
    assert_eq!(preds.len() + 1, seq.len(), "one prediction per target");
    if preds.is_empty() {
        return 0.0;
    }
    let mut last_seen: HashMap<u32, usize> = HashMap::new();
    let mut hits = 0usize;
    for (j, &pred) in preds.iter().enumerate() {
        last_seen.insert(seq[j], j);
        let window_start = (j + 1).saturating_sub(l);
        if last_seen.get(&pred).is_some_and(|&pos| pos >= window_start) {
            hits += 1;
        }
    }
    hits as f64 / preds.len() as f64
}

/// Like [`rep_l_from_predictions`] but counts only wrong repeats: the
/// prediction must also differ from the ground-truth next token.
pub fn wrep_l_from_predictions(seq: &[u32], preds: &[u32], l: usize) -> f64 {
    assert!(l >= 1);
    assert_eq!(preds.len() + 1, seq.len(), "one prediction per target");
    if preds.is_empty() {
        return 0.0;
    }
    let mut last_seen: HashMap<u32, usize> = HashMap::new();
    let mut hits = 0usize;
    for (j, &pred) in preds.iter().enumerate() {
        last_seen.insert(seq[j], j);
        let window_start = (j + 1).saturating_sub(l);
        if pred != seq[j + 1] && last_seen.get(&pred).is_some_and(|&pos| pos >= window_start) {
            hits += 1;
        }
    }
    hits as f64 / preds.len() as f64
}

/// Number of distinct tokens.
pub fn uniq_count<'a, I>(tokens: I) -> u64
where
    I: IntoIterator<Item = &'a u32>,
{
    let set: BTreeSet<u32> = tokens.into_iter().copied().collect();
    set.len() as u64
}

/// Exact token counts.
pub fn token_histogram<'a, I>(tokens: I) -> BTreeMap<u32, u64>
where
    I: IntoIterator<Item = &'a u32>,
{
    let mut hist = BTreeMap::new();
    for &t in tokens {
        *hist.entry(t).or_insert(0) += 1;
    }
    hist
}

/// Writes a histogram as CSV rows token,id,count,frequency_rank, ordered by
/// id. frequency_rank is 1-based over (descending count, ascending id).
pub fn export_histogram_csv(
    histogram: &BTreeMap<u32, u64>,
    vocab: &Vocabulary,
    path: &Path,
) -> Result<(), MetricsError> {
    let mut by_count: Vec<(u32, u64)> = histogram.iter().map(|(&id, &c)| (id, c)).collect();
    by_count.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let rank: BTreeMap<u32, usize> =
        by_count.iter().enumerate().map(|(i, &(id, _))| (id, i + 1)).collect();

    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["token", "id", "count", "frequency_rank"])?;
    for (&id, &count) in histogram {
        let token = vocab.token_of(id).unwrap_or("<invalid>");
        writer.write_record([
            token,
            &id.to_string(),
            &count.to_string(),
            &rank[&id].to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// Reads back a histogram CSV written by [`export_histogram_csv`].
pub fn read_histogram_csv(path: &Path) -> Result<BTreeMap<u32, u64>, MetricsError> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut hist = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let id: u32 = record
            .get(1)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| MetricsError::Schema("bad id column".into()))?;
        let count: u64 = record
            .get(2)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| MetricsError::Schema("bad count column".into()))?;
        hist.insert(id, count);
    }
    Ok(hist)
}

/// Teacher-forced per-sequence pass: summed negative log-likelihood, number
/// of scored steps, argmax predictions.
fn score_sequence<T: Real, M: LanguageModel<T>>(
    model: &M,
    seq: &[u32],
) -> Result<(f64, usize, Vec<u32>), MetricsError> {
    assert!(seq.len() >= 2, "need at least one transition");
    let logits = model.logits(&seq[..seq.len() - 1])?;
    let mut nll = 0.0f64;
    let mut preds = Vec::with_capacity(logits.rows());
    for t in 0..logits.rows() {
        let row = logits.row(t);
        let mut max = f64::NEG_INFINITY;
        let mut arg = 0usize;
        for (i, &x) in row.iter().enumerate() {
            let v = x.as_f64();
            if v.is_nan() {
                return Err(MetricsError::NonFinite(format!("NaN logit at step {t}")));
            }
            if v > max {
                max = v;
                arg = i;
            }
        }
        let z: f64 = row.iter().map(|&x| (x.as_f64() - max).exp()).sum();
        let target = seq[t + 1] as usize;
        nll -= row[target].as_f64() - max - z.ln();
        preds.push(arg as u32);
    }
    Ok((nll, logits.rows(), preds))
}

/// exp(mean per-token negative log-likelihood) over the sequences.
pub fn perplexity<T: Real, M: LanguageModel<T>>(
    model: &M,
    sequences: &[TokenSequence],
) -> Result<f64, MetricsError> {
    if sequences.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut nll = 0.0f64;
    let mut steps = 0usize;
    for seq in sequences {
        let (n, s, _) = score_sequence(model, &seq.ids)?;
        nll += n;
        steps += s;
    }
    Ok((nll / steps as f64).exp())
}

/// Fraction of steps where the argmax prediction equals the ground truth.
pub fn next_token_accuracy<T: Real, M: LanguageModel<T>>(
    model: &M,
    sequences: &[TokenSequence],
) -> Result<f64, MetricsError> {
    if sequences.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut hits = 0usize;
    let mut steps = 0usize;
    for seq in sequences {
        let (_, _, preds) = score_sequence(model, &seq.ids)?;
        for (j, &p) in preds.iter().enumerate() {
            if p == seq.ids[j + 1] {
                hits += 1;
            }
        }
        steps += preds.len();
    }
    Ok(hits as f64 / steps as f64)
}

/// Token-level metrics of one model over a split: ppl, acc, rep/l, wrep/l,
/// and the number of unique next-token predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitEval {
    pub ppl: f64,
    pub acc: f64,
    pub rep_l: f64,
    pub wrep_l: f64,
    pub uniq: u64,
    pub l: usize,
}

pub fn evaluate_split<T: Real, M: LanguageModel<T>>(
    model: &M,
    sequences: &[TokenSequence],
    l: usize,
) -> Result<SplitEval, MetricsError> {
    if sequences.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut nll = 0.0f64;
    let mut steps = 0usize;
    let mut hits = 0usize;
    let mut rep_sum = 0.0f64;
    let mut wrep_sum = 0.0f64;
    let mut distinct: BTreeSet<u32> = BTreeSet::new();
    for seq in sequences {
        let (n, s, preds) = score_sequence(model, &seq.ids)?;
        nll += n;
        steps += s;
        for (j, &p) in preds.iter().enumerate() {
            if p == seq.ids[j + 1] {
                hits += 1;
            }
            distinct.insert(p);
        }
        rep_sum += rep_l_from_predictions(&seq.ids, &preds, l) * preds.len() as f64;
        wrep_sum += wrep_l_from_predictions(&seq.ids, &preds, l) * preds.len() as f64;
    }
    Ok(SplitEval {
        ppl: (nll / steps as f64).exp(),
        acc: hits as f64 / steps as f64,
        rep_l: rep_sum / steps as f64,
        wrep_l: wrep_sum / steps as f64,
        uniq: distinct.len() as u64,
        l,
    })
}

/// Named scalar metrics plus the continuation token histogram. The `model`
/// and `search` tags label rows in combined comparison tables; null fields
/// mark metrics that do not apply (the human reference has no ppl, acc, or
/// wrep).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub model: String,
    pub search: String,
    pub seq_rep_n: BTreeMap<u32, f64>,
    pub rep_l: BTreeMap<u32, f64>,
    pub wrep_l: BTreeMap<u32, f64>,
    pub uniq: Option<u64>,
    pub uniq_seq: u64,
    pub ppl: Option<f64>,
    pub acc: Option<f64>,
    pub token_histogram: BTreeMap<u32, u64>,
}

impl MetricsReport {
    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json_str(raw: &str) -> Result<Self, MetricsError> {
        let value: serde_json::Value =
            serde_json::from_str(raw).map_err(|e| MetricsError::Schema(e.to_string()))?;
        validate_report_json(&value)?;
        serde_json::from_value(value).map_err(|e| MetricsError::Schema(e.to_string()))
    }
}

/// The schema shipped with the crate.
pub const METRICS_REPORT_SCHEMA: &str = include_str!("../schemas/metrics_report.schema.json");

/// Validates a JSON value against the shipped report schema (the subset of
/// JSON Schema it uses: type unions, required, properties,
/// additionalProperties).
pub fn validate_report_json(value: &serde_json::Value) -> Result<(), MetricsError> {
    let schema: serde_json::Value =
        serde_json::from_str(METRICS_REPORT_SCHEMA).expect("embedded schema parses");
    validate_against(value, &schema, "$").map_err(MetricsError::Schema)
}

fn type_matches(value: &serde_json::Value, ty: &str) -> bool {
    match ty {
        "object" => value.is_object(),
        "array" => value.is_array(),
        "string" => value.is_string(),
        "number" => value.is_number(),
        "integer" => value.is_u64() || value.is_i64(),
        "boolean" => value.is_boolean(),
        "null" => value.is_null(),
        _ => false,
    }
}

fn validate_against(
    value: &serde_json::Value,
    schema: &serde_json::Value,
    at: &str,
) -> Result<(), String> {
    if let Some(ty) = schema.get("type") {
        let allowed: Vec<&str> = match ty {
            serde_json::Value::String(s) => vec![s.as_str()],
            serde_json::Value::Array(list) => {
                list.iter().filter_map(|v| v.as_str()).collect()
            }
            _ => return Err(format!("{at}: malformed schema type")),
        };
        if !allowed.iter().any(|t| type_matches(value, t)) {
            return Err(format!("{at}: expected type {allowed:?}"));
        }
    }
    if let Some(required) = schema.get("required").and_then(|r| r.as_array()) {
        let obj = value.as_object().ok_or_else(|| format!("{at}: expected object"))?;
        for key in required.iter().filter_map(|k| k.as_str()) {
            if !obj.contains_key(key) {
                return Err(format!("{at}: missing required key {key:?}"));
            }
        }
    }
    if let Some(obj) = value.as_object() {
        let props = schema.get("properties").and_then(|p| p.as_object());
        let additional = schema.get("additionalProperties");
        for (key, child) in obj {
            let child_schema = props.and_then(|p| p.get(key));
            match (child_schema, additional) {
                (Some(s), _) => validate_against(child, s, &format!("{at}.{key}"))?,
                (None, Some(serde_json::Value::Bool(false))) => {
                    return Err(format!("{at}: unexpected key {key:?}"));
                }
                (None, Some(s)) if s.is_object() => {
                    validate_against(child, s, &format!("{at}.{key}"))?
                }
                _ => {}
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocabulary, TokenizeMode};
    use crate::mat::Mat;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn seq_rep_zero_when_all_unique() {
        assert_eq!(seq_rep_n(&[1, 2, 3, 4, 5], 2), Some(0.0));
    }

    #[test]
    fn seq_rep_hand_example() {
        // A B A B A B: 5 bigrams, 2 unique -> 0.6.
        let v = seq_rep_n(&[0, 1, 0, 1, 0, 1], 2).unwrap();
        assert!((v - 0.6).abs() < 1e-12);
    }

    #[test]
    fn seq_rep_short_continuation_is_skipped() {
        assert_eq!(seq_rep_n(&[1, 2], 4), None);
        assert_eq!(mean_seq_rep_n([&[1u32, 2][..]], 4), None);
    }

    #[test]
    fn seq_rep_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let len = rng.random_range(4..30);
            let ids: Vec<u32> = (0..len).map(|_| rng.random_range(0..5)).collect();
            let n = rng.random_range(1..4);
            let total = (len - n + 1) as f64;
            let v = seq_rep_n(&ids, n).unwrap();
            assert!(v >= 0.0 && v <= 1.0 - 1.0 / total + 1e-12);
        }
    }

    /// Brute-force window-scan oracle for rep/wrep.
    fn rep_oracle(seq: &[u32], preds: &[u32], l: usize, wrong_only: bool) -> f64 {
        let mut hits = 0usize;
        for (j, &pred) in preds.iter().enumerate() {
            let target_pos = j + 1;
            let start = target_pos.saturating_sub(l);
            let in_window = seq[start..target_pos].contains(&pred);
            let wrong = pred != seq[target_pos];
            if in_window && (!wrong_only || wrong) {
                hits += 1;
            }
        }
        hits as f64 / preds.len() as f64
    }

    #[test]
    fn rep_zero_for_absent_predictions() {
        // Predictions of a token never present in context.
        let seq = vec![0u32, 1, 2, 3, 4];
        let preds = vec![9u32, 9, 9, 9];
        assert_eq!(rep_l_from_predictions(&seq, &preds, 3), 0.0);
    }

    #[test]
    fn rep_hand_built_table() {
        // Five-token sequence with fixed predictions, l = 2.
        let seq = vec![3u32, 1, 3, 2, 1];
        let preds = vec![1u32, 3, 1, 3];
        let got = rep_l_from_predictions(&seq, &preds, 2);
        let expect = rep_oracle(&seq, &preds, 2, false);
        assert_eq!(got, expect);
        // Hand count: windows for targets at 1..4 are [3],[3 1],[1 3],[3 2];
        // predictions 1,3,1,3 hit at steps 2, 3, and 4.
        assert!((got - 0.75).abs() < 1e-12);
    }

    #[test]
    fn wrep_never_exceeds_rep() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..200 {
            let len = rng.random_range(2..30);
            let seq: Vec<u32> = (0..len).map(|_| rng.random_range(0..6)).collect();
            let preds: Vec<u32> = (0..len - 1).map(|_| rng.random_range(0..6)).collect();
            let l = rng.random_range(1..8);
            let rep = rep_l_from_predictions(&seq, &preds, l);
            let wrep = wrep_l_from_predictions(&seq, &preds, l);
            assert!(wrep <= rep + 1e-15);
            assert_eq!(rep, rep_oracle(&seq, &preds, l, false));
            assert_eq!(wrep, rep_oracle(&seq, &preds, l, true));
        }
    }

    #[test]
    fn uniq_counts() {
        assert_eq!(uniq_count(&[5u32, 5, 5]), 1);
        assert_eq!(uniq_count(&[0u32, 1, 0, 2]), 3);
    }

    #[test]
    fn uniq_matches_sort_dedupe_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let len = rng.random_range(1..40);
            let ids: Vec<u32> = (0..len).map(|_| rng.random_range(0..12)).collect();
            let mut sorted = ids.clone();
            sorted.sort_unstable();
            sorted.dedup();
            assert_eq!(uniq_count(&ids), sorted.len() as u64);
        }
    }

    #[test]
    fn histogram_counts_and_conservation() {
        let hist = token_histogram(&[0u32, 0, 1]);
        assert_eq!(hist.get(&0), Some(&2));
        assert_eq!(hist.get(&1), Some(&1));
        let total: u64 = hist.values().sum();
        assert_eq!(total, 3);
    }

    #[test]
    fn histogram_csv_round_trip() {
        let vocab = build_vocabulary("a b a c, \"q\"", TokenizeMode::Word, 1).unwrap();
        let ids = vocab.encode("a b a c, c, \"q\"");
        let hist = token_histogram(&ids);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hist.csv");
        export_histogram_csv(&hist, &vocab, &path).unwrap();
        let back = read_histogram_csv(&path).unwrap();
        assert_eq!(back, hist);
    }

    /// Fixed-table model for perplexity and accuracy tests.
    struct TableModel {
        rows: Mat<f64>,
    }

    impl LanguageModel<f64> for TableModel {
        fn vocab_size(&self) -> usize {
            self.rows.cols()
        }
        fn logits(&self, ids: &[u32]) -> Result<Mat<f64>, ModelError> {
            let mut out = Mat::zeros(ids.len(), self.rows.cols());
            for (t, &id) in ids.iter().enumerate() {
                out.row_mut(t).copy_from_slice(self.rows.row(id as usize));
            }
            Ok(out)
        }
    }

    #[test]
    fn uniform_model_ppl_is_vocab_size() {
        let model = TableModel { rows: Mat::zeros(6, 6) };
        let seqs = vec![TokenSequence::training_block(vec![0, 1, 2, 3, 4, 5])];
        let ppl = perplexity(&model, &seqs).unwrap();
        assert!((ppl - 6.0).abs() < 1e-9, "{ppl}");
    }

    #[test]
    fn deterministic_model_on_own_chain_is_perfect() {
        // 0 -> 1 -> 2 -> 0 with near-certain transitions.
        let mut rows = Mat::zeros(3, 3);
        rows.row_mut(0).copy_from_slice(&[-40.0, 40.0, -40.0]);
        rows.row_mut(1).copy_from_slice(&[-40.0, -40.0, 40.0]);
        rows.row_mut(2).copy_from_slice(&[40.0, -40.0, -40.0]);
        let model = TableModel { rows };
        let seqs = vec![TokenSequence::training_block(vec![0, 1, 2, 0, 1, 2, 0])];
        let acc = next_token_accuracy(&model, &seqs).unwrap();
        assert_eq!(acc, 1.0);
        let ppl = perplexity(&model, &seqs).unwrap();
        assert!((ppl - 1.0).abs() < 1e-9, "{ppl}");
    }

    #[test]
    fn ppl_matches_independent_log_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let mut rows = Mat::zeros(5, 5);
        for r in 0..5 {
            for c in 0..5 {
                rows.set(r, c, rng.random_range(-2.0..2.0));
            }
        }
        let model = TableModel { rows };
        let seqs: Vec<TokenSequence> = (0..4)
            .map(|_| {
                TokenSequence::training_block(
                    (0..10).map(|_| rng.random_range(0..5u32)).collect(),
                )
            })
            .collect();
        let ppl = perplexity(&model, &seqs).unwrap();

        // Independent recomputation with its own softmax and accumulation.
        let mut total = 0.0f64;
        let mut count = 0usize;
        for seq in &seqs {
            for j in 0..seq.ids.len() - 1 {
                let row = model.rows.row(seq.ids[j] as usize);
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = row.iter().map(|&x| (x - max).exp()).sum();
                let p = (row[seq.ids[j + 1] as usize] - max).exp() / z;
                total -= p.ln();
                count += 1;
            }
        }
        let expect = (total / count as f64).exp();
        assert!((ppl - expect).abs() / expect < 1e-10, "{ppl} vs {expect}");
    }

    #[test]
    fn ppl_and_acc_invariant_under_reordering() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut rows = Mat::zeros(4, 4);
        for r in 0..4 {
            for c in 0..4 {
                rows.set(r, c, rng.random_range(-1.0..1.0));
            }
        }
        let model = TableModel { rows };
        let seqs: Vec<TokenSequence> = (0..3)
            .map(|_| {
                TokenSequence::training_block((0..8).map(|_| rng.random_range(0..4u32)).collect())
            })
            .collect();
        let mut reversed = seqs.clone();
        reversed.reverse();
        // Equal step counts make the means identical up to reduction order;
        // the values must agree to near machine precision.
        let a = perplexity(&model, &seqs).unwrap();
        let b = perplexity(&model, &reversed).unwrap();
        assert!((a - b).abs() < 1e-12);
        let aa = next_token_accuracy(&model, &seqs).unwrap();
        let bb = next_token_accuracy(&model, &reversed).unwrap();
        assert_eq!(aa, bb);
    }

    #[test]
    fn nan_logit_is_an_error() {
        let mut rows = Mat::zeros(2, 2);
        rows.set(0, 0, f64::NAN);
        let model = TableModel { rows };
        let seqs = vec![TokenSequence::training_block(vec![0, 1, 0])];
        assert!(matches!(perplexity(&model, &seqs), Err(MetricsError::NonFinite(_))));
    }

    #[test]
    fn report_round_trips_and_validates() {
        let report = MetricsReport {
            model: "mle".into(),
            search: "greedy".into(),
            seq_rep_n: [(4u32, 0.31)].into_iter().collect(),
            rep_l: [(128u32, 0.52)].into_iter().collect(),
            wrep_l: [(128u32, 0.22)].into_iter().collect(),
            uniq: Some(812),
            uniq_seq: 450,
            ppl: Some(31.5),
            acc: Some(0.39),
            token_histogram: [(0u32, 12u64), (3, 4)].into_iter().collect(),
        };
        let raw = report.to_json_string();
        let back = MetricsReport::from_json_str(&raw).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn schema_rejects_extra_and_missing_keys() {
        let mut value: serde_json::Value = serde_json::from_str(
            &MetricsReport {
                model: "human".into(),
                search: "-".into(),
                seq_rep_n: BTreeMap::new(),
                rep_l: BTreeMap::new(),
                wrep_l: BTreeMap::new(),
                uniq: None,
                uniq_seq: 0,
                ppl: None,
                acc: None,
                token_histogram: BTreeMap::new(),
            }
            .to_json_string(),
        )
        .unwrap();
        assert!(validate_report_json(&value).is_ok());
        value["surprise"] = serde_json::json!(1);
        assert!(validate_report_json(&value).is_err());
        let obj = value.as_object_mut().unwrap();
        obj.remove("surprise");
        obj.remove("ppl");
        assert!(validate_report_json(&value).is_err());
    }
}
