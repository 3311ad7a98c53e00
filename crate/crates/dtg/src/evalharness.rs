//! Evaluation harness: marginal perplexity, minimal-pair accuracy,
//! targeted surprisal suites, and unlabeled attachment score.
//!
//! Every metric is computed per sentence (or per pair) independently and
//! reduced deterministically, so runs parallelize across a worker count
//! without changing results. Randomized proposal sources derive their
//! per-sentence seeds from sentence *content*, which makes every metric
//! invariant under reordering of the input corpus.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::decode::{beam_search, marginal_logprob, DecodeError, ProposalSet};
use crate::model::Model;
use crate::synth::AgreementPair;
use crate::treebank::{DepTree, TreebankError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty evaluation input")]
    EmptyCorpus,
    #[error("corpus size mismatch: {predicted} predicted trees vs {gold} gold trees")]
    CorpusSizeMismatch { predicted: usize, gold: usize },
    #[error("length mismatch at sentence {index}: {predicted} predicted tokens vs {gold} gold")]
    LengthMismatch { index: usize, predicted: usize, gold: usize },
    #[error("word index {index} outside sentence {sentence} (length {len})")]
    IndexOutOfSentence { sentence: usize, index: usize, len: usize },
    #[error("unknown sentence id {sentence} in surprisal test")]
    UnknownSentence { sentence: usize },
    #[error("bad surprisal suite at line {line}: {detail}")]
    BadSuite { line: usize, detail: String },
    #[error("bad minimal-pair file at line {line}: {detail}")]
    BadPairs { line: usize, detail: String },
    #[error("decode error: {0}")]
    Decode(#[from] DecodeError),
    #[error("model error: {0}")]
    Model(#[from] crate::model::ModelError),
    #[error("treebank error: {0}")]
    Treebank(#[from] TreebankError),
}

/// How to obtain candidate trees for marginalization.
#[derive(Debug, Clone)]
pub enum ProposalSource {
    /// Exhaustive enumeration of projective trees (small sentences only).
    Enumerate { cap: usize },
    /// Seeded random distinct projective trees. The effective seed mixes in
    /// a hash of the sentence, so results do not depend on corpus order.
    Rollouts { samples: usize, seed: u64 },
}

impl ProposalSource {
    fn build(&self, words: &[String], extra_salt: u64) -> Result<ProposalSet, DecodeError> {
        match self {
            ProposalSource::Enumerate { cap } => ProposalSet::enumerate(words, *cap),
            ProposalSource::Rollouts { samples, seed } => {
                let mixed = seed ^ extra_salt;
                ProposalSet::rollouts(words, *samples, mixed)
            }
        }
    }
}

pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn sentence_salt(words: &[String]) -> u64 {
    fnv1a64(words.join(" ").as_bytes())
}

/// Stable short fingerprint of a model's resolved configuration, vocabulary,
/// and training step; stamped into every report so results can be traced
/// back to the checkpoint that produced them.
pub fn config_fingerprint(model: &Model) -> String {
    let mut text = crate::model::render_config_text(&model.config);
    text.push_str(&model.vocab.to_text());
    text.push_str(&format!("step={}\n", model.step));
    format!("{:016x}", fnv1a64(text.as_bytes()))
}

/// Runs `f` over `items` on up to `jobs` threads and returns results in
/// input order. Each index is written exactly once, so the reduction is
/// deterministic regardless of scheduling.
pub(crate) fn map_indexed<T, R, F>(jobs: usize, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync,
{
    let jobs = jobs.max(1).min(items.len().max(1));
    if jobs <= 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let mut out: Vec<Option<R>> = (0..items.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let f = &f;
        let handles: Vec<_> = (0..jobs)
            .map(|j| {
                scope.spawn(move || {
                    let mut part = Vec::new();
                    let mut i = j;
                    while i < items.len() {
                        part.push((i, f(i, &items[i])));
                        i += jobs;
                    }
                    part
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("evaluation worker panicked") {
                out[i] = Some(r);
            }
        }
    });
    out.into_iter().map(|o| o.expect("index not produced")).collect()
}

fn collect_results<R>(results: Vec<Result<R, EvalError>>) -> Result<Vec<R>, EvalError> {
    let mut out = Vec::with_capacity(results.len());
    for r in results {
        out.push(r?);
    }
    Ok(out)
}

/// A uniformly shaped evaluation result: one headline value plus the
/// per-item breakdown it was reduced from.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub metric: String,
    pub value: f64,
    pub breakdown: Vec<(String, f64)>,
    pub fingerprint: String,
}

impl EvalReport {
    /// Human-oriented aligned table.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("metric       {}\n", self.metric));
        out.push_str(&format!("value        {:.6}\n", self.value));
        out.push_str(&format!("fingerprint  {}\n", self.fingerprint));
        if !self.breakdown.is_empty() {
            let width = self
                .breakdown
                .iter()
                .map(|(k, _)| k.len())
                .max()
                .unwrap_or(0)
                .max(12);
            out.push_str(&format!("{:-<1$}\n", "", width + 15));
            for (key, value) in &self.breakdown {
                out.push_str(&format!("{key:<width$}  {value:>13.6}\n"));
            }
        }
        out
    }

    /// Machine-oriented `key=value` lines; floats use the shortest
    /// round-trip representation.
    pub fn render_kv(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("metric={}\n", self.metric));
        out.push_str(&format!("value={}\n", self.value));
        out.push_str(&format!("fingerprint={}\n", self.fingerprint));
        for (key, value) in &self.breakdown {
            out.push_str(&format!("item.{key}={value}\n"));
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Perplexity
// ---------------------------------------------------------------------------

/// One sentence's contribution to perplexity.
#[derive(Debug, Clone)]
pub struct SentenceScore {
    pub text: String,
    pub words: usize,
    pub logprob: f64,
}

/// Marginal perplexity over a corpus.
///
/// The headline value is `exp(-total_logprob / total_words)` where
/// `total_words` counts whitespace-separated surface words only; the
/// end-of-sentence event contributes to the log-probability but not to the
/// denominator. That convention is recorded here and in the report
/// breakdown (`*.words` entries) so numbers are comparable across runs.
#[derive(Debug, Clone)]
pub struct PplReport {
    pub ppl: f64,
    pub total_words: usize,
    pub total_logprob: f64,
    pub per_sentence: Vec<SentenceScore>,
    pub fingerprint: String,
}

impl PplReport {
    pub fn report(&self) -> EvalReport {
        let mut breakdown = Vec::new();
        for (i, s) in self.per_sentence.iter().enumerate() {
            breakdown.push((format!("sent{}.logprob", i + 1), s.logprob));
            breakdown.push((format!("sent{}.words", i + 1), s.words as f64));
        }
        EvalReport {
            metric: "perplexity".to_string(),
            value: self.ppl,
            breakdown,
            fingerprint: self.fingerprint.clone(),
        }
    }
}

/// Computes marginal perplexity of `sentences` under the model, using
/// `source` to build each sentence's candidate-tree set.
pub fn perplexity(
    model: &Model,
    sentences: &[Vec<String>],
    source: &ProposalSource,
    jobs: usize,
) -> Result<PplReport, EvalError> {
    if sentences.is_empty() || sentences.iter().all(|s| s.is_empty()) {
        return Err(EvalError::EmptyCorpus);
    }
    let scored = collect_results(map_indexed(jobs, sentences, |_, words| {
        let proposals = source.build(words, sentence_salt(words))?;
        let logprob = marginal_logprob(model, &proposals)?;
        Ok(SentenceScore { text: words.join(" "), words: words.len(), logprob })
    }))?;
    let total_words: usize = scored.iter().map(|s| s.words).sum();
    let total_logprob: f64 = scored.iter().map(|s| s.logprob).sum();
    Ok(PplReport {
        ppl: (-total_logprob / total_words as f64).exp(),
        total_words,
        total_logprob,
        per_sentence: scored,
        fingerprint: config_fingerprint(model),
    })
}

// ---------------------------------------------------------------------------
// Minimal pairs
// ---------------------------------------------------------------------------

/// A tagged grammatical/ungrammatical sentence pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MinimalPair {
    pub tag: String,
    pub good: String,
    pub bad: String,
}

impl From<&AgreementPair> for MinimalPair {
    fn from(p: &AgreementPair) -> Self {
        MinimalPair { tag: p.tag.clone(), good: p.good.text(), bad: p.bad.text() }
    }
}

/// Parses the tab-separated pair format: `tag<TAB>good<TAB>bad`, one pair
/// per line; blank lines and `#` comments are ignored.
pub fn parse_pairs_tsv(text: &str) -> Result<Vec<MinimalPair>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(EvalError::BadPairs {
                line: i + 1,
                detail: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        out.push(MinimalPair {
            tag: fields[0].to_string(),
            good: fields[1].to_string(),
            bad: fields[2].to_string(),
        });
    }
    Ok(out)
}

pub fn render_pairs_tsv(pairs: &[MinimalPair]) -> String {
    let mut out = String::new();
    for p in pairs {
        out.push_str(&format!("{}\t{}\t{}\n", p.tag, p.good, p.bad));
    }
    out
}

/// One scored pair: full credit when the grammatical side wins, half
/// credit on exact ties.
#[derive(Debug, Clone)]
pub struct PairOutcome {
    pub tag: String,
    pub good_logprob: f64,
    pub bad_logprob: f64,
    pub credit: f64,
}

#[derive(Debug, Clone)]
pub struct PairsReport {
    pub accuracy: f64,
    /// `(tag, accuracy, count)` per tag, sorted by tag.
    pub per_tag: Vec<(String, f64, usize)>,
    pub outcomes: Vec<PairOutcome>,
    pub fingerprint: String,
}

impl PairsReport {
    pub fn report(&self) -> EvalReport {
        let mut breakdown: Vec<(String, f64)> = self
            .outcomes
            .iter()
            .enumerate()
            .map(|(i, o)| (format!("pair{}.credit", i + 1), o.credit))
            .collect();
        for (tag, acc, _) in &self.per_tag {
            breakdown.push((format!("tag.{tag}"), *acc));
        }
        EvalReport {
            metric: "minimal-pair-accuracy".to_string(),
            value: self.accuracy,
            breakdown,
            fingerprint: self.fingerprint.clone(),
        }
    }
}

fn credit_of(good: f64, bad: f64) -> f64 {
    if good > bad {
        1.0
    } else if good < bad {
        0.0
    } else {
        0.5
    }
}

fn finish_pairs(model: &Model, outcomes: Vec<PairOutcome>) -> PairsReport {
    let accuracy = outcomes.iter().map(|o| o.credit).sum::<f64>() / outcomes.len() as f64;
    let mut tags: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for o in &outcomes {
        let e = tags.entry(o.tag.clone()).or_insert((0.0, 0));
        e.0 += o.credit;
        e.1 += 1;
    }
    let per_tag = tags
        .into_iter()
        .map(|(tag, (sum, n))| (tag, sum / n as f64, n))
        .collect();
    PairsReport { accuracy, per_tag, outcomes, fingerprint: config_fingerprint(model) }
}

/// Scores each pair by comparing marginal log-probabilities of the two
/// sentences under the same proposal source. For seeded rollouts the two
/// sides share one seed derived symmetrically from both sentences, so
/// relabeling good/bad flips every outcome exactly.
pub fn minimal_pairs(
    model: &Model,
    pairs: &[MinimalPair],
    source: &ProposalSource,
    jobs: usize,
) -> Result<PairsReport, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    let outcomes = collect_results(map_indexed(jobs, pairs, |_, pair| {
        let good: Vec<String> = pair.good.split_whitespace().map(String::from).collect();
        let bad: Vec<String> = pair.bad.split_whitespace().map(String::from).collect();
        if good.is_empty() || bad.is_empty() {
            return Err(EvalError::EmptyCorpus);
        }
        let salt = sentence_salt(&good) ^ sentence_salt(&bad);
        let good_lp = marginal_logprob(model, &source.build(&good, salt)?)?;
        let bad_lp = marginal_logprob(model, &source.build(&bad, salt)?)?;
        Ok(PairOutcome {
            tag: pair.tag.clone(),
            good_logprob: good_lp,
            bad_logprob: bad_lp,
            credit: credit_of(good_lp, bad_lp),
        })
    }))?;
    Ok(finish_pairs(model, outcomes))
}

/// Scores agreement pairs by their joint probability under the shared gold
/// tree skeleton — the cheap, structure-controlled variant used for
/// generator-produced pairs where both sides carry identical heads.
pub fn minimal_pairs_gold(
    model: &Model,
    pairs: &[AgreementPair],
    jobs: usize,
) -> Result<PairsReport, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    let outcomes = collect_results(map_indexed(jobs, pairs, |_, pair| {
        let good_lp = model.score_joint(&pair.good)?;
        let bad_lp = model.score_joint(&pair.bad)?;
        Ok(PairOutcome {
            tag: pair.tag.clone(),
            good_logprob: good_lp,
            bad_logprob: bad_lp,
            credit: credit_of(good_lp, bad_lp),
        })
    }))?;
    Ok(finish_pairs(model, outcomes))
}

// ---------------------------------------------------------------------------
// Surprisal suites
// ---------------------------------------------------------------------------

/// A reference to one word's surprisal: `s(<sentence_id>, <word_index>)`,
/// both 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SuiteTerm {
    pub sentence: usize,
    pub word: usize,
}

/// One inequality over sums of word surprisals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuiteTest {
    pub tag: String,
    pub lhs: Vec<SuiteTerm>,
    pub rhs: Vec<SuiteTerm>,
    /// `true` for `>`, `false` for `>=`.
    pub strict: bool,
}

/// A parsed surprisal-test suite: numbered sentences plus inequality tests.
#[derive(Debug, Clone, Default)]
pub struct Suite {
    pub sentences: BTreeMap<usize, Vec<String>>,
    pub tests: Vec<SuiteTest>,
}

fn parse_term(raw: &str, line: usize) -> Result<SuiteTerm, EvalError> {
    let raw = raw.trim();
    let inner = raw
        .strip_prefix("s(")
        .and_then(|r| r.strip_suffix(')'))
        .ok_or_else(|| EvalError::BadSuite {
            line,
            detail: format!("expected `s(<sent>,<word>)`, found `{raw}`"),
        })?;
    let mut parts = inner.split(',');
    let parse_num = |p: Option<&str>| -> Result<usize, EvalError> {
        p.map(str::trim)
            .and_then(|v| v.parse::<usize>().ok())
            .ok_or_else(|| EvalError::BadSuite {
                line,
                detail: format!("bad term arguments in `{raw}`"),
            })
    };
    let sentence = parse_num(parts.next())?;
    let word = parse_num(parts.next())?;
    if parts.next().is_some() {
        return Err(EvalError::BadSuite {
            line,
            detail: format!("too many arguments in `{raw}`"),
        });
    }
    Ok(SuiteTerm { sentence, word })
}

fn parse_side(raw: &str, line: usize) -> Result<Vec<SuiteTerm>, EvalError> {
    raw.split('+').map(|t| parse_term(t, line)).collect()
}

/// Parses the suite format:
///
/// ```text
/// # comment
/// sent 1 the cat near the dogs sleeps
/// sent 2 the cat sleeps
/// test distractor s(1,6) > s(2,3)
/// test sums s(1,1) + s(1,2) >= s(2,1)
/// ```
pub fn parse_suite(text: &str) -> Result<Suite, EvalError> {
    let mut suite = Suite::default();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix("sent ") {
            let mut it = rest.split_whitespace();
            let id: usize = it
                .next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| EvalError::BadSuite {
                    line: line_no,
                    detail: "missing sentence id".to_string(),
                })?;
            let words: Vec<String> = it.map(String::from).collect();
            if words.is_empty() {
                return Err(EvalError::BadSuite {
                    line: line_no,
                    detail: format!("sentence {id} has no words"),
                });
            }
            if suite.sentences.insert(id, words).is_some() {
                return Err(EvalError::BadSuite {
                    line: line_no,
                    detail: format!("duplicate sentence id {id}"),
                });
            }
        } else if let Some(rest) = line.strip_prefix("test ") {
            let (tag, expr) = rest.split_once(char::is_whitespace).ok_or_else(|| {
                EvalError::BadSuite {
                    line: line_no,
                    detail: "test needs a tag and an expression".to_string(),
                }
            })?;
            let (lhs_raw, rhs_raw, strict) = if let Some((l, r)) = expr.split_once(">=") {
                (l, r, false)
            } else if let Some((l, r)) = expr.split_once('>') {
                (l, r, true)
            } else {
                return Err(EvalError::BadSuite {
                    line: line_no,
                    detail: "expected `>` or `>=` comparator".to_string(),
                });
            };
            suite.tests.push(SuiteTest {
                tag: tag.to_string(),
                lhs: parse_side(lhs_raw, line_no)?,
                rhs: parse_side(rhs_raw, line_no)?,
                strict,
            });
        } else {
            return Err(EvalError::BadSuite {
                line: line_no,
                detail: format!("unrecognized line `{line}`"),
            });
        }
    }
    Ok(suite)
}

pub fn render_suite(suite: &Suite) -> String {
    let mut out = String::new();
    for (id, words) in &suite.sentences {
        out.push_str(&format!("sent {id} {}\n", words.join(" ")));
    }
    for t in &suite.tests {
        let side = |terms: &[SuiteTerm]| {
            terms
                .iter()
                .map(|t| format!("s({},{})", t.sentence, t.word))
                .collect::<Vec<_>>()
                .join(" + ")
        };
        let op = if t.strict { ">" } else { ">=" };
        out.push_str(&format!("test {} {} {} {}\n", t.tag, side(&t.lhs), op, side(&t.rhs)));
    }
    out
}

#[derive(Debug, Clone)]
pub struct SuiteOutcome {
    pub tag: String,
    pub lhs_total: f64,
    pub rhs_total: f64,
    pub holds: bool,
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    /// Unweighted mean of per-tag accuracies.
    pub macro_avg: f64,
    /// `(tag, accuracy, count)` per tag, sorted by tag.
    pub per_tag: Vec<(String, f64, usize)>,
    pub outcomes: Vec<SuiteOutcome>,
    pub fingerprint: String,
}

impl SuiteReport {
    pub fn report(&self) -> EvalReport {
        let mut breakdown: Vec<(String, f64)> = self
            .per_tag
            .iter()
            .map(|(tag, acc, _)| (format!("tag.{tag}"), *acc))
            .collect();
        for (i, o) in self.outcomes.iter().enumerate() {
            breakdown.push((
                format!("test{}.holds", i + 1),
                if o.holds { 1.0 } else { 0.0 },
            ));
        }
        EvalReport {
            metric: "surprisal-suite-macro-accuracy".to_string(),
            value: self.macro_avg,
            breakdown,
            fingerprint: self.fingerprint.clone(),
        }
    }
}

/// Evaluates every test in the suite against beam-search surprisals
/// computed once per sentence.
pub fn surprisal_suite(
    model: &Model,
    suite: &Suite,
    beam_size: usize,
    word_beam: usize,
    jobs: usize,
) -> Result<SuiteReport, EvalError> {
    if suite.tests.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    let entries: Vec<(usize, Vec<String>)> =
        suite.sentences.iter().map(|(id, w)| (*id, w.clone())).collect();
    let surprisals = collect_results(map_indexed(jobs, &entries, |_, (id, words)| {
        let beam = beam_search(model, words, beam_size, word_beam)?;
        Ok((*id, beam.surprisals))
    }))?;
    let by_id: BTreeMap<usize, Vec<f64>> = surprisals.into_iter().collect();
    let side_total = |terms: &[SuiteTerm]| -> Result<f64, EvalError> {
        let mut total = 0.0;
        for term in terms {
            let values = by_id
                .get(&term.sentence)
                .ok_or(EvalError::UnknownSentence { sentence: term.sentence })?;
            if term.word == 0 || term.word > values.len() {
                return Err(EvalError::IndexOutOfSentence {
                    sentence: term.sentence,
                    index: term.word,
                    len: values.len(),
                });
            }
            total += values[term.word - 1];
        }
        Ok(total)
    };
    let mut outcomes = Vec::with_capacity(suite.tests.len());
    for test in &suite.tests {
        let lhs_total = side_total(&test.lhs)?;
        let rhs_total = side_total(&test.rhs)?;
        let holds = if test.strict { lhs_total > rhs_total } else { lhs_total >= rhs_total };
        outcomes.push(SuiteOutcome { tag: test.tag.clone(), lhs_total, rhs_total, holds });
    }
    let mut tags: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for o in &outcomes {
        let e = tags.entry(o.tag.clone()).or_insert((0.0, 0));
        e.0 += if o.holds { 1.0 } else { 0.0 };
        e.1 += 1;
    }
    let per_tag: Vec<(String, f64, usize)> = tags
        .into_iter()
        .map(|(tag, (sum, n))| (tag, sum / n as f64, n))
        .collect();
    let macro_avg =
        per_tag.iter().map(|(_, acc, _)| acc).sum::<f64>() / per_tag.len() as f64;
    Ok(SuiteReport {
        macro_avg,
        per_tag,
        outcomes,
        fingerprint: config_fingerprint(model),
    })
}

// ---------------------------------------------------------------------------
// Unlabeled attachment score
// ---------------------------------------------------------------------------

fn is_punct(form: &str) -> bool {
    !form.is_empty() && form.chars().all(|c| c.is_ascii_punctuation())
}

/// Token-weighted unlabeled attachment score over raw head vectors: the
/// fraction of tokens across the whole corpus whose predicted head matches
/// gold. Predicted heads are not required to form valid trees (a parser may
/// emit anything); gold trees supply the forms used for punctuation
/// filtering. With `skip_punct`, tokens whose gold form is all punctuation
/// are excluded from both numerator and denominator (off by default in
/// [`uas`]).
pub fn uas_heads(
    predicted: &[Vec<usize>],
    gold: &[DepTree],
    skip_punct: bool,
) -> Result<f64, EvalError> {
    if predicted.len() != gold.len() {
        return Err(EvalError::CorpusSizeMismatch {
            predicted: predicted.len(),
            gold: gold.len(),
        });
    }
    if gold.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    let mut correct = 0usize;
    let mut total = 0usize;
    for (index, (p, g)) in predicted.iter().zip(gold).enumerate() {
        if p.len() != g.len() {
            return Err(EvalError::LengthMismatch {
                index,
                predicted: p.len(),
                gold: g.len(),
            });
        }
        for i in 1..=g.len() {
            if skip_punct && is_punct(g.form(i)) {
                continue;
            }
            total += 1;
            if p[i - 1] == g.heads()[i - 1] {
                correct += 1;
            }
        }
    }
    if total == 0 {
        return Err(EvalError::EmptyCorpus);
    }
    Ok(correct as f64 / total as f64)
}

/// [`uas_heads`] for predictions that are themselves trees.
pub fn uas_filtered(
    predicted: &[DepTree],
    gold: &[DepTree],
    skip_punct: bool,
) -> Result<f64, EvalError> {
    let heads: Vec<Vec<usize>> = predicted.iter().map(|t| t.heads().to_vec()).collect();
    uas_heads(&heads, gold, skip_punct)
}

/// Token-weighted unlabeled attachment score with no token filtering.
pub fn uas(predicted: &[DepTree], gold: &[DepTree]) -> Result<f64, EvalError> {
    uas_filtered(predicted, gold, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Model, ModelConfig};
    use crate::transitions::{State, System, Transition, TransitionKind};
    use crate::treebank::{count_projective_trees, Corpus, DepTree};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn words(text: &str) -> Vec<String> {
        text.split_whitespace().map(String::from).collect()
    }

    fn tiny_model(forms: &[&str], seed: u64) -> Model {
        let trees: Vec<DepTree> = vec![DepTree::new(
            forms.iter().map(|f| crate::treebank::Token::new(*f)).collect(),
            (0..forms.len())
                .map(|i| if i + 1 == forms.len() { 0 } else { forms.len() })
                .collect(),
        )
        .unwrap()];
        let corpus = Corpus::from_trees(trees, 1);
        let mut config = ModelConfig::tiny(System::Standard, corpus.vocab.size());
        config.seed = seed;
        Model::new(config, corpus.vocab.clone()).unwrap()
    }

    fn uniform_model(forms: &[&str]) -> Model {
        let mut model = tiny_model(forms, 5);
        model.params.out_w.fill(0.0);
        model.params.out_b.fill(0.0);
        model
    }

    #[test]
    fn uniform_model_perplexity_matches_the_closed_form() {
        // Under uniform next-symbol distributions every arc-standard
        // derivation of an n-word sentence has probability V^-(2n+1), so
        // the exact marginal is ln(T_n) - (2n+1) ln V with T_n the number
        // of projective trees.
        let model = uniform_model(&["a", "b", "c"]);
        let v = model.config.vocab_size as f64;
        let sents = vec![words("a b c"), words("c b a")];
        let report =
            perplexity(&model, &sents, &ProposalSource::Enumerate { cap: 100 }, 1).unwrap();
        let t3 = count_projective_trees(3) as f64;
        let expect_lp = t3.ln() - 7.0 * v.ln();
        for s in &report.per_sentence {
            assert!((s.logprob - expect_lp).abs() < 1e-9, "lp {} vs {}", s.logprob, expect_lp);
        }
        let expect_ppl = (-2.0 * expect_lp / 6.0).exp();
        assert!((report.ppl - expect_ppl).abs() < 1e-9);
        // The uniform model can never beat surface-vocabulary perplexity.
        assert!(report.ppl >= v);
    }

    #[test]
    fn restricting_the_proposal_set_cannot_lower_perplexity() {
        let model = tiny_model(&["a", "b", "c", "d"], 11);
        let sents = vec![words("a b c d"), words("d c a b")];
        let full =
            perplexity(&model, &sents, &ProposalSource::Enumerate { cap: 1000 }, 1).unwrap();
        let subset =
            perplexity(&model, &sents, &ProposalSource::Rollouts { samples: 4, seed: 3 }, 1)
                .unwrap();
        assert!(subset.ppl >= full.ppl - 1e-9, "{} < {}", subset.ppl, full.ppl);
    }

    #[test]
    fn corpus_order_does_not_change_perplexity() {
        let model = tiny_model(&["a", "b", "c", "d"], 11);
        let sents = vec![words("a b c"), words("b a d c"), words("d d")];
        let mut reversed = sents.clone();
        reversed.reverse();
        let source = ProposalSource::Rollouts { samples: 5, seed: 9 };
        let fwd = perplexity(&model, &sents, &source, 1).unwrap();
        let rev = perplexity(&model, &reversed, &source, 2).unwrap();
        assert_eq!(fwd.ppl.to_bits(), rev.ppl.to_bits());
    }

    #[test]
    fn empty_input_is_reported() {
        let model = tiny_model(&["a"], 1);
        let err = perplexity(&model, &[], &ProposalSource::Enumerate { cap: 10 }, 1);
        assert!(matches!(err, Err(EvalError::EmptyCorpus)));
        let err = minimal_pairs(&model, &[], &ProposalSource::Enumerate { cap: 10 }, 1);
        assert!(matches!(err, Err(EvalError::EmptyCorpus)));
    }

    #[test]
    fn identical_pair_sentences_score_half() {
        let model = tiny_model(&["a", "b"], 2);
        let pairs = vec![MinimalPair {
            tag: "tie".to_string(),
            good: "a b".to_string(),
            bad: "a b".to_string(),
        }];
        let report =
            minimal_pairs(&model, &pairs, &ProposalSource::Enumerate { cap: 10 }, 1).unwrap();
        assert_eq!(report.accuracy, 0.5);
    }

    #[test]
    fn swapping_pair_labels_mirrors_the_accuracy() {
        let model = tiny_model(&["a", "b", "c"], 3);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let lex = ["a", "b", "c"];
        let mut pairs = Vec::new();
        for _ in 0..40 {
            let n = rng.random_range(2..=4);
            let sample = |rng: &mut ChaCha8Rng| {
                (0..n)
                    .map(|_| lex[rng.random_range(0..lex.len())])
                    .collect::<Vec<_>>()
                    .join(" ")
            };
            let good = sample(&mut rng);
            let bad = sample(&mut rng);
            pairs.push(MinimalPair { tag: "rand".to_string(), good, bad });
        }
        let swapped: Vec<MinimalPair> = pairs
            .iter()
            .map(|p| MinimalPair { tag: p.tag.clone(), good: p.bad.clone(), bad: p.good.clone() })
            .collect();
        let source = ProposalSource::Rollouts { samples: 4, seed: 21 };
        let fwd = minimal_pairs(&model, &pairs, &source, 1).unwrap();
        let rev = minimal_pairs(&model, &swapped, &source, 1).unwrap();
        assert!((fwd.accuracy + rev.accuracy - 1.0).abs() < 1e-12);
    }

    #[test]
    fn untrained_model_sits_at_chance_on_random_pairs() {
        let model = tiny_model(&["a", "b", "c", "d", "e"], 29);
        let lex = ["a", "b", "c", "d", "e"];
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let mut pairs = Vec::new();
        for _ in 0..1000 {
            let n = 4;
            let mut sample = || {
                (0..n)
                    .map(|_| lex[rng.random_range(0..lex.len())])
                    .collect::<Vec<_>>()
                    .join(" ")
            };
            let good = sample();
            let bad = sample();
            pairs.push(MinimalPair { tag: "chance".to_string(), good, bad });
        }
        let source = ProposalSource::Rollouts { samples: 4, seed: 77 };
        let report = minimal_pairs(&model, &pairs, &source, 4).unwrap();
        assert!(
            (report.accuracy - 0.5).abs() <= 0.05,
            "untrained accuracy {} drifted from chance",
            report.accuracy
        );
    }

    #[test]
    fn gold_tree_pair_scoring_is_tie_symmetric() {
        let model = tiny_model(&["x", "y"], 4);
        let pairs = crate::synth::generate_pairs(6, 2).unwrap();
        let report = minimal_pairs_gold(&model, &pairs, 1).unwrap();
        assert_eq!(report.outcomes.len(), 6);
        for o in &report.outcomes {
            assert!(o.good_logprob.is_finite() && o.bad_logprob.is_finite());
        }
    }

    #[test]
    fn suite_text_round_trips_through_the_parser() {
        let text = "\
# agreement suite
sent 1 the cat sleeps
sent 2 the cat sleep
test agr s(2,3) > s(1,3)
test sums s(1,1) + s(1,2) >= s(2,1)
";
        let suite = parse_suite(text).unwrap();
        assert_eq!(suite.sentences.len(), 2);
        assert_eq!(suite.tests.len(), 2);
        assert_eq!(suite.tests[0].lhs, vec![SuiteTerm { sentence: 2, word: 3 }]);
        assert!(suite.tests[0].strict);
        assert!(!suite.tests[1].strict);
        let rendered = render_suite(&suite);
        let reparsed = parse_suite(&rendered).unwrap();
        assert_eq!(reparsed.tests, suite.tests);
        assert_eq!(reparsed.sentences, suite.sentences);
    }

    #[test]
    fn malformed_suites_are_rejected_with_line_numbers() {
        let err = parse_suite("sent 1 a b\nnonsense here\n");
        assert!(matches!(err, Err(EvalError::BadSuite { line: 2, .. })));
        let err = parse_suite("test t s(1,2) < s(1,3)\n");
        assert!(matches!(err, Err(EvalError::BadSuite { line: 1, .. })));
        let err = parse_suite("test t s(1) > s(1,2)\n");
        assert!(matches!(err, Err(EvalError::BadSuite { line: 1, .. })));
    }

    #[test]
    fn tautological_comparisons_always_hold() {
        let model = tiny_model(&["a", "b"], 6);
        let suite = parse_suite("sent 1 a b\ntest tauto s(1,2) >= s(1,2)\n").unwrap();
        let report = surprisal_suite(&model, &suite, 64, 64, 1).unwrap();
        assert_eq!(report.macro_avg, 1.0);
    }

    #[test]
    fn out_of_range_word_indices_are_flagged() {
        let model = tiny_model(&["a", "b"], 6);
        let suite = parse_suite("sent 1 a b\ntest t s(1,5) > s(1,1)\n").unwrap();
        let err = surprisal_suite(&model, &suite, 16, 16, 1);
        assert!(matches!(
            err,
            Err(EvalError::IndexOutOfSentence { sentence: 1, index: 5, len: 2 })
        ));
        let suite = parse_suite("sent 1 a b\ntest t s(9,1) > s(1,1)\n").unwrap();
        let err = surprisal_suite(&model, &suite, 16, 16, 1);
        assert!(matches!(err, Err(EvalError::UnknownSentence { sentence: 9 })));
    }

    /// Independent prefix-marginal oracle: enumerate canonical derivation
    /// prefixes with a DFS over the transition system and score each with
    /// the batch scorer, then reduce word-boundary masses by logsumexp.
    fn dfs_surprisals(model: &Model, sentence: &[String]) -> (Vec<f64>, f64) {
        fn lse(values: &[f64]) -> f64 {
            let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
        }
        fn explore(
            model: &Model,
            sentence: &[String],
            state: &State,
            seq: &mut Vec<Transition>,
            generated: usize,
            boundary: &mut Vec<Vec<f64>>,
            complete: &mut Vec<f64>,
        ) {
            let done = generated == sentence.len();
            if done && state.is_terminal() {
                complete.push(crate::decode::score_sequence(model, seq).unwrap());
                return;
            }
            for kind in state.legal_transitions(done) {
                if kind == TransitionKind::End {
                    continue;
                }
                if !state.sampling_legal(kind, done) || !state.canonical(kind) {
                    continue;
                }
                let t = match kind {
                    TransitionKind::Gen => Transition::Gen(sentence[generated].clone()),
                    TransitionKind::LeftArc(k) => Transition::LeftArc(k),
                    TransitionKind::RightArc(k) => Transition::RightArc(k),
                    TransitionKind::Pop => Transition::Pop,
                    TransitionKind::End => unreachable!(),
                };
                let mut next = state.clone();
                next.apply(&t).unwrap();
                seq.push(t);
                let next_generated = if kind == TransitionKind::Gen {
                    boundary[generated]
                        .push(crate::decode::score_sequence(model, seq).unwrap());
                    generated + 1
                } else {
                    generated
                };
                explore(model, sentence, &next, seq, next_generated, boundary, complete);
                seq.pop();
            }
        }
        let n = sentence.len();
        let mut boundary: Vec<Vec<f64>> = vec![Vec::new(); n];
        let mut complete = Vec::new();
        let state = State::new(model.config.system);
        explore(model, sentence, &state, &mut Vec::new(), 0, &mut boundary, &mut complete);
        let masses: Vec<f64> = boundary.iter().map(|b| lse(b)).collect();
        let mut surprisals = Vec::with_capacity(n);
        let mut prev = 0.0;
        for m in &masses {
            surprisals.push(prev - m);
            prev = *m;
        }
        let end_term = prev - lse(&complete);
        (surprisals, end_term)
    }

    #[test]
    fn exhaustive_beam_matches_the_dfs_prefix_oracle() {
        let model = tiny_model(&["a", "b", "c"], 23);
        let sentence = words("c a b");
        let beam = beam_search(&model, &sentence, 4096, 4096).unwrap();
        let (oracle_s, oracle_end) = dfs_surprisals(&model, &sentence);
        assert_eq!(beam.surprisals.len(), oracle_s.len());
        for (b, o) in beam.surprisals.iter().zip(&oracle_s) {
            assert!((b - o).abs() < 1e-6, "beam {b} vs oracle {o}");
        }
        assert!((beam.end_term - oracle_end).abs() < 1e-6);
        // Inequality outcomes therefore coincide as well.
        for i in 0..oracle_s.len() {
            for j in 0..oracle_s.len() {
                assert_eq!(
                    beam.surprisals[i] > beam.surprisals[j],
                    oracle_s[i] > oracle_s[j]
                );
            }
        }
    }

    #[test]
    fn uas_counts_token_weighted_head_matches() {
        let gold = vec![DepTree::from_heads(vec![2, 0, 4, 2]).unwrap()];
        // Predicted heads need not form a valid tree.
        let pred = vec![vec![2, 0, 4, 4]];
        assert!((uas_heads(&pred, &gold, false).unwrap() - 0.75).abs() < 1e-12);
        assert!((uas(&gold, &gold).unwrap() - 1.0).abs() < 1e-12);
        // Token weighting across sentences: (2 + 3) / (2 + 4).
        let gold2 = vec![
            DepTree::from_heads(vec![2, 0]).unwrap(),
            DepTree::from_heads(vec![2, 0, 4, 2]).unwrap(),
        ];
        let pred2 = vec![vec![2, 0], vec![2, 0, 4, 4]];
        assert!((uas_heads(&pred2, &gold2, false).unwrap() - 5.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn uas_rejects_mismatched_inputs() {
        let a = vec![DepTree::from_heads(vec![0]).unwrap()];
        let b = vec![DepTree::from_heads(vec![2, 0]).unwrap()];
        assert!(matches!(
            uas(&a, &b),
            Err(EvalError::LengthMismatch { index: 0, predicted: 1, gold: 2 })
        ));
        assert!(matches!(
            uas(&a, &[]),
            Err(EvalError::CorpusSizeMismatch { predicted: 1, gold: 0 })
        ));
        assert!(matches!(uas(&[], &[]), Err(EvalError::EmptyCorpus)));
    }

    #[test]
    fn punctuation_filtering_is_off_by_default_and_configurable() {
        let gold = vec![DepTree::new(
            vec![
                crate::treebank::Token::new("a"),
                crate::treebank::Token::new("b"),
                crate::treebank::Token::new("."),
            ],
            vec![2, 0, 2],
        )
        .unwrap()];
        let pred = vec![gold[0].with_heads(vec![2, 0, 1]).unwrap()];
        assert!((uas(&pred, &gold).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!((uas_filtered(&pred, &gold, true).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn report_values_are_reproducible_from_their_breakdown() {
        let model = tiny_model(&["a", "b", "c"], 8);
        let pairs = vec![
            MinimalPair { tag: "t1".into(), good: "a b".into(), bad: "b a".into() },
            MinimalPair { tag: "t2".into(), good: "a c".into(), bad: "c c".into() },
            MinimalPair { tag: "t1".into(), good: "b c".into(), bad: "c b".into() },
        ];
        let report = minimal_pairs(&model, &pairs, &ProposalSource::Enumerate { cap: 10 }, 1)
            .unwrap()
            .report();
        let credits: Vec<f64> = report
            .breakdown
            .iter()
            .filter(|(k, _)| k.ends_with(".credit"))
            .map(|(_, v)| *v)
            .collect();
        let recomputed = credits.iter().sum::<f64>() / credits.len() as f64;
        assert!((recomputed - report.value).abs() < 1e-12);
        let kv = report.render_kv();
        assert!(kv.contains(&format!("value={}", report.value)));
        assert!(kv.contains("fingerprint="));
        let table = report.render_table();
        assert!(table.contains("minimal-pair-accuracy"));
    }

    #[test]
    fn pair_files_round_trip_and_reject_bad_rows() {
        let pairs = vec![
            MinimalPair { tag: "agr".into(), good: "a b c".into(), bad: "a b d".into() },
            MinimalPair { tag: "agr".into(), good: "x y".into(), bad: "x z".into() },
        ];
        let text = render_pairs_tsv(&pairs);
        assert_eq!(parse_pairs_tsv(&text).unwrap(), pairs);
        let err = parse_pairs_tsv("only\ttwo\n");
        assert!(matches!(err, Err(EvalError::BadPairs { line: 1, .. })));
    }

    #[test]
    fn fingerprints_track_configuration_and_training_step() {
        let a = tiny_model(&["a", "b"], 1);
        let mut b = tiny_model(&["a", "b"], 1);
        assert_eq!(config_fingerprint(&a), config_fingerprint(&b));
        b.step = 777;
        assert_ne!(config_fingerprint(&a), config_fingerprint(&b));
    }
}
