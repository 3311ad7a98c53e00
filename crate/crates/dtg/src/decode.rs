//! Constrained generation, word-synchronous beam search with per-word
//! surprisals, and marginal sentence probabilities over proposal sets.
//!
//! All decoding runs through an incremental session that extends one
//! expanded row at a time, reusing cached keys and values, so a step
//! costs linear rather than quadratic work in the prefix length.

use crate::attnmask::{
    build_masks_with_clip, expand, expand_step, root_item, AttnMaskError, ExpandedItem, Masker,
};
use crate::model::{bucket, gelu, Model, ModelError, LN_EPS};
use crate::transitions::{replay, Transition, TransitionKind, TransitionsError};
use crate::treebank::{
    enumerate_projective_trees, parse_conllu, random_projective_tree, serialize_conllu, DepTree,
    ParseOptions, Token, TreebankError, END_ID, RESERVED,
};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashSet;
use thiserror::Error;

/// Errors from sampling, search, and proposal handling.
#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("no legal transition available ({context})")]
    NoLegalTransition { context: String },
    #[error("empty proposal set")]
    EmptyProposal,
    #[error("beam exhausted before the sentence completed")]
    BeamExhausted,
    #[error("empty sentence")]
    EmptySentence,
    #[error("malformed proposal block: {detail}")]
    MalformedProposal { detail: String },
    #[error("illegal step during decoding: {reason}")]
    IllegalStep { reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Mask(#[from] AttnMaskError),
    #[error(transparent)]
    Transitions(#[from] TransitionsError),
    #[error(transparent)]
    Treebank(#[from] TreebankError),
}

fn logsumexp(vals: &[f64]) -> f64 {
    let best = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !best.is_finite() {
        return best;
    }
    best + vals.iter().map(|v| (v - best).exp()).sum::<f64>().ln()
}

fn ln_vec(x: &[f64], gamma: &Array1<f32>, beta: &Array1<f32>) -> Vec<f64> {
    let d = x.len() as f64;
    let mean = x.iter().sum::<f64>() / d;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
    let istd = 1.0 / (var + LN_EPS).sqrt();
    x.iter()
        .enumerate()
        .map(|(j, v)| gamma[j] as f64 * ((v - mean) * istd) + beta[j] as f64)
        .collect()
}

fn matvec(w: &Array2<f32>, x: &[f64], b: &Array1<f32>) -> Vec<f64> {
    let (rows, cols) = (w.nrows(), w.ncols());
    let mut out = vec![0.0; rows];
    for i in 0..rows {
        let mut acc = b[i] as f64;
        for j in 0..cols {
            acc += w[[i, j]] as f64 * x[j];
        }
        out[i] = acc;
    }
    out
}

/// An incremental decoding state: parser state, mask builder, cached
/// keys/values per layer, and the logits of the newest predicting row.
#[derive(Clone)]
pub struct DecoderSession<'m> {
    model: &'m Model,
    state: crate::transitions::State,
    masker: Masker,
    kcache: Vec<Vec<Vec<f64>>>,
    vcache: Vec<Vec<Vec<f64>>>,
    last_logits: Vec<f64>,
    last_logz: f64,
    /// Cumulative log-probability of the chosen steps.
    pub log_prob: f64,
    /// Word forms generated so far.
    pub words: Vec<String>,
    /// Transitions taken so far.
    pub seq: Vec<Transition>,
    /// Symbol ids of the taken transitions (deterministic tie-break key).
    pub sym_ids: Vec<u32>,
}

impl<'m> DecoderSession<'m> {
    pub fn new(model: &'m Model) -> Result<Self, DecodeError> {
        let layers = model.config.layers;
        let mut session = DecoderSession {
            model,
            state: crate::transitions::State::new(model.config.system),
            masker: Masker::with_clip(model.config.system, model.config.rel_clip_k),
            kcache: vec![Vec::new(); layers],
            vcache: vec![Vec::new(); layers],
            last_logits: Vec::new(),
            last_logz: 0.0,
            log_prob: 0.0,
            words: Vec::new(),
            seq: Vec::new(),
            sym_ids: Vec::new(),
        };
        let root = root_item();
        session.push_row(&root)?;
        Ok(session)
    }

    pub fn state(&self) -> &crate::transitions::State {
        &self.state
    }

    /// Log-probability the current position assigns to one next symbol.
    pub fn step_logprob(&self, symbol: u32) -> f64 {
        self.last_logits[symbol as usize] - self.last_logz
    }

    /// Log-probability of deciding `<END>` here; the state must be
    /// terminal for the decision to be legal.
    pub fn end_logprob(&self) -> f64 {
        self.step_logprob(END_ID)
    }

    /// Extends the session by one transition, returning the step's
    /// log-probability (also accumulated onto `log_prob`).
    pub fn advance(&mut self, t: &Transition) -> Result<f64, DecodeError> {
        let symbol = t.symbol_id(&self.model.vocab);
        let gain = self.step_logprob(symbol);
        let items = expand_step(&self.state, t, &self.words, &self.model.vocab, self.seq.len())?;
        for item in &items {
            self.push_row(item)?;
        }
        self.state
            .apply(t)
            .map_err(|e| DecodeError::IllegalStep { reason: e.reason })?;
        if let Transition::Gen(form) = t {
            self.words.push(form.clone());
        }
        self.seq.push(t.clone());
        self.sym_ids.push(symbol);
        self.log_prob += gain;
        Ok(gain)
    }

    /// Runs one expanded row through the decoder, appending to the
    /// key/value caches and (for predicting rows) refreshing the
    /// next-symbol logits.
    fn push_row(&mut self, item: &ExpandedItem) -> Result<(), DecodeError> {
        let cfg = &self.model.config;
        let p = &self.model.params;
        let (heads, dh, d) = (cfg.heads, cfg.head_dim(), cfg.model_dim);
        let scale = 1.0 / (dh as f64).sqrt();
        let row = self.masker.step(item)?;
        let mut x = self.model.embed_one(item)?;
        for (l, lp) in p.layers.iter().enumerate() {
            let hn = ln_vec(&x, &lp.ln1.gamma, &lp.ln1.beta);
            let q = matvec(&lp.wq, &hn, &lp.bq);
            self.kcache[l].push(matvec(&lp.wk, &hn, &lp.bk));
            self.vcache[l].push(matvec(&lp.wv, &hn, &lp.bv));
            let kc = &self.kcache[l];
            let vc = &self.vcache[l];
            let mut ctx = vec![0.0; d];
            for a in 0..heads {
                let lo = a * dh;
                let mut scores = Vec::with_capacity(row.attend.len());
                let mut best = f64::NEG_INFINITY;
                for (&j, &r) in row.attend.iter().zip(&row.relpos) {
                    let mut s = 0.0;
                    for c in 0..dh {
                        s += q[lo + c] * kc[j][lo + c];
                    }
                    s *= scale;
                    s += lp.rel[[a, bucket(item.form, r, cfg.rel_clip_k)]] as f64;
                    scores.push(s);
                    if s > best {
                        best = s;
                    }
                }
                if !best.is_finite() {
                    return Err(DecodeError::Model(ModelError::NonFinite {
                        detail: format!("attention scores at decode row {}", row.position),
                    }));
                }
                let mut z = 0.0;
                for s in &mut scores {
                    *s = (*s - best).exp();
                    z += *s;
                }
                for (&j, w) in row.attend.iter().zip(&scores) {
                    let w = w / z;
                    for c in 0..dh {
                        ctx[lo + c] += w * vc[j][lo + c];
                    }
                }
            }
            let o = matvec(&lp.wo, &ctx, &lp.bo);
            for (xi, oi) in x.iter_mut().zip(&o) {
                *xi += oi;
            }
            let f = ln_vec(&x, &lp.ln2.gamma, &lp.ln2.beta);
            let pre = matvec(&lp.w1, &f, &lp.b1);
            let act: Vec<f64> = pre.iter().map(|&v| gelu(v)).collect();
            let out = matvec(&lp.w2, &act, &lp.b2);
            for (xi, oi) in x.iter_mut().zip(&out) {
                *xi += oi;
            }
        }
        if item.predicts {
            let y = ln_vec(&x, &p.ln_f.gamma, &p.ln_f.beta);
            let logits = matvec(&p.out_w, &y, &p.out_b);
            self.last_logz = logsumexp(&logits);
            self.last_logits = logits;
        }
        Ok(())
    }

    /// Legal-and-sensible next transitions, paired with their symbol
    /// ids. `None` stands for the `<END>` decision. GEN fans out over
    /// the whole lexical vocabulary.
    fn candidates(&self, generation_done: bool) -> Vec<(Option<Transition>, u32)> {
        let vocab = &self.model.vocab;
        let mut out = Vec::new();
        for kind in self.state.legal_transitions(generation_done) {
            if !self.state.sampling_legal(kind, generation_done) || !self.state.canonical(kind) {
                continue;
            }
            match kind {
                TransitionKind::Gen => {
                    for id in RESERVED as u32..vocab.size() as u32 {
                        if vocab.is_lexical(id) {
                            out.push((Some(Transition::Gen(vocab.form_of(id))), id));
                        }
                    }
                }
                TransitionKind::LeftArc(k) => {
                    let t = Transition::LeftArc(k);
                    let id = t.symbol_id(vocab);
                    out.push((Some(t), id));
                }
                TransitionKind::RightArc(k) => {
                    let t = Transition::RightArc(k);
                    let id = t.symbol_id(vocab);
                    out.push((Some(t), id));
                }
                TransitionKind::Pop => out.push((Some(Transition::Pop), POP_SYMBOL)),
                TransitionKind::End => out.push((None, END_ID)),
            }
        }
        out
    }

    /// Structural (non-GEN, non-END) continuations under the sampling
    /// and canonicality filters.
    fn structural_candidates(&self, generation_done: bool) -> Vec<Transition> {
        self.candidates(generation_done)
            .into_iter()
            .filter_map(|(t, _)| t)
            .filter(|t| !matches!(t, Transition::Gen(_)))
            .collect()
    }

    fn can_gen(&self) -> bool {
        self.state.sampling_legal(TransitionKind::Gen, false)
            && self.state.canonical(TransitionKind::Gen)
    }
}

const POP_SYMBOL: u32 = crate::treebank::POP_ID;

/// A sampled sentence with its derivation.
#[derive(Debug, Clone)]
pub struct SampleOutcome {
    pub words: Vec<String>,
    pub tree: DepTree,
    pub seq: Vec<Transition>,
    /// Joint log-probability of the sampled derivation including the
    /// end decision.
    pub log_prob: f64,
}

/// Samples one sentence and tree from the model. Illegal transitions
/// are excluded outright (probability zero); generation stops at the
/// end decision or runs the deterministic closing schedule once
/// `max_words` is reached (which may add at most one word). At
/// `temperature` zero the sample is the greedy decode.
pub fn constrained_sample(
    model: &Model,
    max_words: usize,
    temperature: f64,
    seed: u64,
) -> Result<SampleOutcome, DecodeError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut session = DecoderSession::new(model)?;
    loop {
        if session.words.len() < max_words {
            let candidates = session.candidates(false);
            if candidates.is_empty() {
                return Err(DecodeError::NoLegalTransition {
                    context: format!("after {} steps", session.seq.len()),
                });
            }
            match pick(&session, &candidates, temperature, &mut rng) {
                None => {
                    session.log_prob += session.end_logprob();
                    break;
                }
                Some(t) => {
                    session.advance(&t)?;
                }
            }
        } else {
            match session.state.completion_step() {
                None => {
                    session.log_prob += session.end_logprob();
                    break;
                }
                Some(TransitionKind::Gen) => {
                    let words: Vec<(Option<Transition>, u32)> = session
                        .candidates(false)
                        .into_iter()
                        .filter(|(t, _)| matches!(t, Some(Transition::Gen(_))))
                        .collect();
                    if words.is_empty() {
                        return Err(DecodeError::NoLegalTransition {
                            context: "closing schedule needs a word".into(),
                        });
                    }
                    let t = pick(&session, &words, temperature, &mut rng).expect("gen candidate");
                    session.advance(&t)?;
                }
                Some(kind) => {
                    let t = structural_transition(kind);
                    session.advance(&t)?;
                }
            }
        }
    }
    let tree = replay(model.config.system, &session.seq)?;
    Ok(SampleOutcome {
        words: session.words.clone(),
        tree,
        seq: session.seq.clone(),
        log_prob: session.log_prob,
    })
}

fn structural_transition(kind: TransitionKind) -> Transition {
    match kind {
        TransitionKind::LeftArc(k) => Transition::LeftArc(k),
        TransitionKind::RightArc(k) => Transition::RightArc(k),
        TransitionKind::Pop => Transition::Pop,
        TransitionKind::Gen | TransitionKind::End => {
            unreachable!("not a structural transition")
        }
    }
}

/// Samples one candidate (or the end decision, `None`) from the model's
/// next-symbol distribution restricted to the candidate set.
fn pick(
    session: &DecoderSession,
    candidates: &[(Option<Transition>, u32)],
    temperature: f64,
    rng: &mut ChaCha8Rng,
) -> Option<Transition> {
    let logits: Vec<f64> =
        candidates.iter().map(|(_, id)| session.last_logits[*id as usize]).collect();
    let choice = if temperature <= 0.0 {
        let mut best = 0usize;
        for (i, l) in logits.iter().enumerate() {
            if *l > logits[best] {
                best = i;
            }
        }
        best
    } else {
        let scaled: Vec<f64> = logits.iter().map(|l| l / temperature).collect();
        let z = logsumexp(&scaled);
        let mut u: f64 = rng.random();
        let mut chosen = candidates.len() - 1;
        for (i, s) in scaled.iter().enumerate() {
            u -= (s - z).exp();
            if u <= 0.0 {
                chosen = i;
                break;
            }
        }
        chosen
    };
    candidates[choice].0.clone()
}

/// Orders hypotheses best-first: higher score wins; equal scores break
/// lexicographically on the taken symbol ids, so growing the beam only
/// ever appends hypotheses (containment).
fn prune<'m>(mut pool: Vec<DecoderSession<'m>>, cap: usize) -> Vec<DecoderSession<'m>> {
    pool.sort_by(|a, b| {
        b.log_prob
            .total_cmp(&a.log_prob)
            .then_with(|| a.sym_ids.cmp(&b.sym_ids))
    });
    pool.truncate(cap);
    pool
}

/// Word-synchronous beam search output.
#[derive(Debug, Clone)]
pub struct BeamOutcome {
    /// Per-word surprisals in nats, aligned with the input words.
    pub surprisals: Vec<f64>,
    /// Mass spent on closing the structure and the end decision after
    /// the final word.
    pub end_term: f64,
    /// Approximate log p(sentence): log-sum-exp over completed
    /// hypotheses.
    pub log_prob: f64,
    /// Highest-scoring complete derivation.
    pub best_seq: Vec<Transition>,
    pub best_tree: DepTree,
    pub best_log_prob: f64,
}

/// Word-synchronous beam search over the model for a fixed sentence.
/// Hypotheses advance through structural transitions (at most `2n+4`
/// consecutive ones) until they generate the next word; the beam is
/// pruned to `beam_size` at every word boundary and the in-word frontier
/// to `word_beam`. Surprisal at word `t` is the drop in beam log-mass:
/// `logsumexp(beam t−1) − logsumexp(beam t)`.
pub fn beam_search(
    model: &Model,
    words: &[String],
    beam_size: usize,
    word_beam: usize,
) -> Result<BeamOutcome, DecodeError> {
    if words.is_empty() {
        return Err(DecodeError::EmptySentence);
    }
    let beam_size = beam_size.max(1);
    let word_beam = word_beam.max(1);
    let cap = 2 * words.len() + 4;
    let mut beam = vec![DecoderSession::new(model)?];
    let mut prev_lse = 0.0;
    let mut surprisals = Vec::with_capacity(words.len());
    for word in words {
        let mut arrived: Vec<DecoderSession> = Vec::new();
        let mut frontier = beam;
        let mut steps = 0usize;
        loop {
            for h in &frontier {
                if h.can_gen() {
                    let mut c = h.clone();
                    c.advance(&Transition::Gen(word.clone()))?;
                    arrived.push(c);
                }
            }
            if steps == cap {
                break;
            }
            let mut next = Vec::new();
            for h in &frontier {
                for t in h.structural_candidates(false) {
                    let mut c = h.clone();
                    c.advance(&t)?;
                    next.push(c);
                }
            }
            if next.is_empty() {
                break;
            }
            frontier = prune(next, word_beam);
            steps += 1;
        }
        if arrived.is_empty() {
            return Err(DecodeError::BeamExhausted);
        }
        beam = prune(arrived, beam_size);
        let lse = logsumexp(&beam.iter().map(|h| h.log_prob).collect::<Vec<_>>());
        surprisals.push(prev_lse - lse);
        prev_lse = lse;
    }
    // Close every surviving hypothesis structurally and take <END>.
    let mut complete: Vec<DecoderSession> = Vec::new();
    let mut frontier = beam;
    let mut steps = 0usize;
    loop {
        for h in &frontier {
            if h.state.is_terminal() {
                let mut c = h.clone();
                c.log_prob += c.end_logprob();
                complete.push(c);
            }
        }
        if steps == cap {
            break;
        }
        let mut next = Vec::new();
        for h in &frontier {
            for t in h.structural_candidates(true) {
                let mut c = h.clone();
                c.advance(&t)?;
                next.push(c);
            }
        }
        if next.is_empty() {
            break;
        }
        frontier = prune(next, word_beam);
        steps += 1;
    }
    if complete.is_empty() {
        return Err(DecodeError::BeamExhausted);
    }
    let complete = prune(complete, beam_size);
    let log_prob = logsumexp(&complete.iter().map(|h| h.log_prob).collect::<Vec<_>>());
    let end_term = prev_lse - log_prob;
    let best = &complete[0];
    let best_tree = replay(model.config.system, &best.seq)?;
    Ok(BeamOutcome {
        surprisals,
        end_term,
        log_prob,
        best_seq: best.seq.clone(),
        best_tree,
        best_log_prob: best.log_prob,
    })
}

/// A set of candidate trees for one sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProposalSet {
    pub trees: Vec<DepTree>,
    /// Where the trees came from, recorded in reports.
    pub source: String,
}

impl ProposalSet {
    /// Wraps explicit trees, checking they are distinct, projective,
    /// and over one and the same sentence.
    pub fn new(trees: Vec<DepTree>, source: impl Into<String>) -> Result<Self, DecodeError> {
        if trees.is_empty() {
            return Err(DecodeError::EmptyProposal);
        }
        let forms: Vec<&str> = trees[0].tokens().iter().map(|t| t.form.as_str()).collect();
        let mut seen = HashSet::new();
        for tree in &trees {
            let these: Vec<&str> = tree.tokens().iter().map(|t| t.form.as_str()).collect();
            if these != forms {
                return Err(DecodeError::MalformedProposal {
                    detail: "trees cover different sentences".into(),
                });
            }
            if !tree.is_projective() {
                return Err(DecodeError::MalformedProposal {
                    detail: format!("non-projective tree over {:?}", tree.text()),
                });
            }
            if !seen.insert(tree.heads().to_vec()) {
                return Err(DecodeError::MalformedProposal {
                    detail: "duplicate tree in proposal set".into(),
                });
            }
        }
        Ok(ProposalSet { trees, source: source.into() })
    }

    /// Every projective tree over the sentence (feasible up to about
    /// ten words; `cap` bounds the count defensively).
    pub fn enumerate(words: &[String], cap: usize) -> Result<Self, DecodeError> {
        if words.is_empty() {
            return Err(DecodeError::EmptySentence);
        }
        let tokens: Vec<Token> = words.iter().map(Token::new).collect();
        let mut trees = Vec::new();
        for heads in enumerate_projective_trees(words.len(), cap)? {
            trees.push(DepTree::new(tokens.clone(), heads)?);
        }
        ProposalSet::new(trees, "enumeration")
    }

    /// Distinct random projective trees from seeded draws; the fallback
    /// proposal source for sentences too long to enumerate.
    pub fn rollouts(words: &[String], samples: usize, seed: u64) -> Result<Self, DecodeError> {
        if words.is_empty() {
            return Err(DecodeError::EmptySentence);
        }
        if samples == 0 {
            return Err(DecodeError::EmptyProposal);
        }
        let tokens: Vec<Token> = words.iter().map(Token::new).collect();
        let mut seen = HashSet::new();
        let mut trees = Vec::new();
        let mut attempt = 0u64;
        while trees.len() < samples && attempt < samples as u64 * 64 {
            let heads = random_projective_tree(words.len(), seed.wrapping_add(attempt))?;
            attempt += 1;
            if seen.insert(heads.clone()) {
                trees.push(DepTree::new(tokens.clone(), heads)?);
            }
        }
        ProposalSet::new(trees, format!("rollouts(seed={seed})"))
    }

    pub fn words(&self) -> Vec<String> {
        self.trees[0].tokens().iter().map(|t| t.form.clone()).collect()
    }
}

/// Lower bound on log p(sentence): log-sum-exp of the joint scores of
/// the proposal trees. With a full enumeration the bound is exact.
pub fn marginal_logprob(model: &Model, proposals: &ProposalSet) -> Result<f64, DecodeError> {
    if proposals.trees.is_empty() {
        return Err(DecodeError::EmptyProposal);
    }
    let mut scores = Vec::with_capacity(proposals.trees.len());
    for tree in &proposals.trees {
        scores.push(model.score_joint(tree)?);
    }
    Ok(logsumexp(&scores))
}

/// Reranking outcome: the winning tree and every candidate's score.
#[derive(Debug, Clone)]
pub struct RerankOutcome {
    pub best_index: usize,
    pub best_tree: DepTree,
    pub scores: Vec<f64>,
}

/// Picks the proposal tree with the highest joint score; ties keep the
/// earliest tree in enumeration order.
pub fn rerank(model: &Model, proposals: &ProposalSet) -> Result<RerankOutcome, DecodeError> {
    if proposals.trees.is_empty() {
        return Err(DecodeError::EmptyProposal);
    }
    let mut scores = Vec::with_capacity(proposals.trees.len());
    for tree in &proposals.trees {
        scores.push(model.score_joint(tree)?);
    }
    let mut best = 0usize;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    Ok(RerankOutcome { best_index: best, best_tree: proposals.trees[best].clone(), scores })
}

/// Joint log-probability of an explicit transition sequence (its parse
/// need not be canonical), including the end decision when the sequence
/// reaches a terminal state.
pub fn score_sequence(model: &Model, seq: &[Transition]) -> Result<f64, DecodeError> {
    let items = expand(model.config.system, seq, &model.vocab)?;
    let bundle = build_masks_with_clip(model.config.system, &items, model.config.rel_clip_k)?;
    let logits = model.forward(&items, &bundle)?;
    let mut total = 0.0;
    for (&pos, &target) in bundle.prediction_positions.iter().zip(&bundle.target_ids) {
        total += crate::model::log_softmax_at(&logits, pos, target as usize);
    }
    Ok(total)
}

/// One surprisal record: sentence id, word position (1-based), the
/// word, and its surprisal in nats.
#[derive(Debug, Clone, PartialEq)]
pub struct SurprisalRow {
    pub sentence: usize,
    pub index: usize,
    pub word: String,
    pub surprisal: f64,
}

/// Tab-separated surprisal lines: sentence id, word index, word, nats.
pub fn render_surprisal_tsv(rows: &[SurprisalRow]) -> String {
    let mut out = String::from("sentence\tindex\tword\tsurprisal\n");
    for r in rows {
        out.push_str(&format!("{}\t{}\t{}\t{:.9}\n", r.sentence, r.index, r.word, r.surprisal));
    }
    out
}

pub fn parse_surprisal_tsv(text: &str) -> Result<Vec<SurprisalRow>, DecodeError> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 && line.starts_with("sentence\t") {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(DecodeError::MalformedProposal {
                detail: format!("surprisal line {}: expected 4 fields", lineno + 1),
            });
        }
        let parse_idx = |f: &str| {
            f.parse::<usize>().map_err(|_| DecodeError::MalformedProposal {
                detail: format!("surprisal line {}: bad index {f:?}", lineno + 1),
            })
        };
        out.push(SurprisalRow {
            sentence: parse_idx(fields[0])?,
            index: parse_idx(fields[1])?,
            word: fields[2].to_string(),
            surprisal: fields[3].parse::<f64>().map_err(|_| DecodeError::MalformedProposal {
                detail: format!("surprisal line {}: bad value {:?}", lineno + 1, fields[3]),
            })?,
        });
    }
    Ok(out)
}

/// Serializes proposal sets as blocks of CoNLL lines, each preceded by
/// a `# tree k` comment; sets are separated implicitly by the tree
/// counter resetting to 1.
pub fn render_proposals(sets: &[ProposalSet]) -> String {
    let mut out = String::new();
    for set in sets {
        for (k, tree) in set.trees.iter().enumerate() {
            out.push_str(&format!("# tree {}\n", k + 1));
            out.push_str(&serialize_conllu(tree));
            out.push('\n');
        }
    }
    out
}

/// Parses proposal files produced by [`render_proposals`]. A block is a
/// `# tree k` comment plus CoNLL token lines; a `k` of 1 starts a new
/// sentence's set.
pub fn parse_proposals(text: &str) -> Result<Vec<ProposalSet>, DecodeError> {
    let mut sets: Vec<Vec<DepTree>> = Vec::new();
    let mut current: Vec<DepTree> = Vec::new();
    for block in text.split("\n\n") {
        let block = block.trim();
        if block.is_empty() {
            continue;
        }
        let header = block.lines().next().unwrap_or_default();
        let k = header
            .strip_prefix("# tree ")
            .and_then(|rest| rest.trim().parse::<usize>().ok())
            .ok_or_else(|| DecodeError::MalformedProposal {
                detail: format!("block must start with '# tree k', got {header:?}"),
            })?;
        let corpus = parse_conllu(block, &ParseOptions::default())?;
        if corpus.trees.len() != 1 {
            return Err(DecodeError::MalformedProposal {
                detail: format!("tree block {k} holds {} sentences", corpus.trees.len()),
            });
        }
        if k == 1 && !current.is_empty() {
            sets.push(std::mem::take(&mut current));
        }
        current.push(corpus.trees.into_iter().next().unwrap());
    }
    if !current.is_empty() {
        sets.push(current);
    }
    sets.into_iter().map(|trees| ProposalSet::new(trees, "file")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::transitions::{extract_oracle, System};
    use crate::treebank::{Corpus, LA_ID, RA_ID};
    use approx::assert_abs_diff_eq;

    fn sentence(words: &[&str]) -> Vec<String> {
        words.iter().map(|w| w.to_string()).collect()
    }

    fn test_model(system: System) -> Model {
        let trees = vec![
            DepTree::new(
                vec![Token::new("a"), Token::new("b"), Token::new("c"), Token::new("d")],
                vec![2, 0, 2, 3],
            )
            .unwrap(),
            DepTree::new(vec![Token::new("e"), Token::new("f")], vec![2, 0]).unwrap(),
        ];
        let corpus = Corpus::from_trees(trees, 1);
        let mut vocab = corpus.vocab;
        vocab.set_swift_kmax(8);
        let mut config = ModelConfig::tiny(system, vocab.size());
        config.seed = 13;
        Model::new(config, vocab).unwrap()
    }

    #[test]
    fn first_sampled_transition_is_always_gen() {
        for system in [System::Standard, System::Eager, System::Swift, System::Hybrid] {
            let model = test_model(system);
            for seed in 0..25 {
                let out = constrained_sample(&model, 5, 1.0, seed).unwrap();
                assert!(
                    matches!(out.seq[0], Transition::Gen(_)),
                    "{system}: started with {}",
                    out.seq[0]
                );
            }
        }
    }

    #[test]
    fn samples_replay_to_projective_trees_within_budget() {
        for system in [System::Standard, System::Eager, System::Swift, System::Hybrid] {
            let model = test_model(system);
            for seed in 0..60 {
                let out = constrained_sample(&model, 6, 1.0, seed).unwrap();
                assert!(out.words.len() <= 7, "{system}: {} words", out.words.len());
                let replayed = replay(system, &out.seq).unwrap();
                assert_eq!(replayed, out.tree, "{system} seed {seed}");
                assert!(out.tree.is_projective(), "{system} seed {seed}");
                assert_eq!(
                    out.tree.tokens().iter().map(|t| t.form.clone()).collect::<Vec<_>>(),
                    out.words
                );
            }
        }
    }

    #[test]
    fn zero_temperature_sampling_is_deterministic_greedy() {
        let model = test_model(System::Standard);
        let a = constrained_sample(&model, 6, 0.0, 1).unwrap();
        let b = constrained_sample(&model, 6, 0.0, 999).unwrap();
        assert_eq!(a.seq, b.seq);
        // The first step must be the argmax over lexical symbols.
        let session = DecoderSession::new(&model).unwrap();
        let vocab = &model.vocab;
        let mut best = None::<(f64, u32)>;
        for id in RESERVED as u32..vocab.size() as u32 {
            if vocab.is_lexical(id) {
                let lp = session.step_logprob(id);
                if best.map_or(true, |(b, _)| lp > b) {
                    best = Some((lp, id));
                }
            }
        }
        let expect = vocab.form_of(best.unwrap().1);
        assert_eq!(a.seq[0], Transition::Gen(expect));
    }

    #[test]
    fn sampled_derivation_scores_match_batch_scoring() {
        for system in [System::Standard, System::Eager] {
            let model = test_model(system);
            for seed in [3u64, 17, 40] {
                let out = constrained_sample(&model, 5, 1.0, seed).unwrap();
                let batch = score_sequence(&model, &out.seq).unwrap();
                assert_abs_diff_eq!(out.log_prob, batch, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn singleton_proposal_equals_joint_score() {
        let model = test_model(System::Standard);
        let tree = DepTree::new(
            vec![Token::new("a"), Token::new("b"), Token::new("c")],
            vec![2, 0, 2],
        )
        .unwrap();
        let set = ProposalSet::new(vec![tree.clone()], "test").unwrap();
        let marginal = marginal_logprob(&model, &set).unwrap();
        assert_abs_diff_eq!(marginal, model.score_joint(&tree).unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn marginal_grows_monotonically_with_more_proposals() {
        let model = test_model(System::Standard);
        let words = sentence(&["a", "b", "c", "d"]);
        let full = ProposalSet::enumerate(&words, usize::MAX).unwrap();
        let sub3 = ProposalSet::new(full.trees[..3].to_vec(), "subset").unwrap();
        let sub5 = ProposalSet::new(full.trees[..5].to_vec(), "subset").unwrap();
        let m3 = marginal_logprob(&model, &sub3).unwrap();
        let m5 = marginal_logprob(&model, &sub5).unwrap();
        let mf = marginal_logprob(&model, &full).unwrap();
        assert!(m5 >= m3);
        assert!(mf >= m5);
    }

    #[test]
    fn full_enumeration_matches_brute_force_sum() {
        let model = test_model(System::Standard);
        let words = sentence(&["a", "b", "c"]);
        let set = ProposalSet::enumerate(&words, usize::MAX).unwrap();
        assert_eq!(set.trees.len(), 7);
        let brute: f64 =
            set.trees.iter().map(|t| model.score_joint(t).unwrap().exp()).sum();
        let marginal = marginal_logprob(&model, &set).unwrap();
        assert_abs_diff_eq!(marginal, brute.ln(), epsilon = 1e-12);
    }

    #[test]
    fn wide_beam_reproduces_exact_marginalization() {
        let model = test_model(System::Standard);
        let words = sentence(&["a", "b", "c"]);
        let exact =
            marginal_logprob(&model, &ProposalSet::enumerate(&words, usize::MAX).unwrap())
                .unwrap();
        let beam = beam_search(&model, &words, 4096, 4096).unwrap();
        assert_abs_diff_eq!(beam.log_prob, exact, epsilon = 1e-6);
    }

    #[test]
    fn beam_log_prob_is_monotone_in_beam_size() {
        let model = test_model(System::Standard);
        let words = sentence(&["a", "b", "c", "d"]);
        let small = beam_search(&model, &words, 2, 2).unwrap();
        let large = beam_search(&model, &words, 50, 50).unwrap();
        assert!(
            large.log_prob >= small.log_prob - 1e-12,
            "{} < {}",
            large.log_prob,
            small.log_prob
        );
    }

    #[test]
    fn surprisals_telescope_to_the_total_log_prob() {
        for system in [System::Standard, System::Eager] {
            let model = test_model(system);
            let words = sentence(&["a", "b", "c", "d"]);
            let out = beam_search(&model, &words, 8, 8).unwrap();
            let total: f64 = out.surprisals.iter().sum::<f64>() + out.end_term;
            assert_abs_diff_eq!(total, -out.log_prob, epsilon = 1e-9);
            assert_eq!(out.surprisals.len(), words.len());
        }
    }

    #[test]
    fn best_beam_hypothesis_score_matches_batch_scoring() {
        for system in [System::Standard, System::Eager] {
            let model = test_model(system);
            let words = sentence(&["a", "b", "c"]);
            let out = beam_search(&model, &words, 8, 8).unwrap();
            let batch = score_sequence(&model, &out.best_seq).unwrap();
            assert_abs_diff_eq!(out.best_log_prob, batch, epsilon = 1e-9);
        }
    }

    #[test]
    fn constant_logit_model_yields_closed_form_surprisals() {
        let mut model = test_model(System::Standard);
        // Kill all context-dependence: logits become the output bias.
        model.params.out_w.fill(0.0);
        model.params.out_b.fill(-4.0);
        let v = model.vocab.size();
        for id in 0..v as u32 {
            if model.vocab.is_lexical(id) {
                model.params.out_b[id as usize] = 2.0;
            }
        }
        model.params.out_b[RA_ID as usize] = 0.0;
        model.params.out_b[LA_ID as usize] = -8.0;
        model.params.out_b[END_ID as usize] = 1.0;
        let logits: Vec<f64> = model.params.out_b.iter().map(|&b| b as f64).collect();
        let z = logsumexp(&logits);
        let words = sentence(&["a", "b", "c"]);
        let out = beam_search(&model, &words, 1, 1).unwrap();
        for (w, s) in words.iter().zip(&out.surprisals) {
            let id = model.vocab.id_of(w) as usize;
            assert_abs_diff_eq!(*s, z - logits[id], epsilon = 1e-9);
        }
        // Best closing is the all-right-arc chain plus the end decision.
        let expect_end = 3.0 * (z - logits[RA_ID as usize]) + (z - logits[END_ID as usize]);
        assert_abs_diff_eq!(out.end_term, expect_end, epsilon = 1e-9);
        assert_eq!(out.best_tree.heads(), &[0, 1, 2]);
    }

    #[test]
    fn rerank_returns_the_argmax_tree() {
        let model = test_model(System::Standard);
        let words = sentence(&["a", "b", "c", "d"]);
        let set = ProposalSet::enumerate(&words, usize::MAX).unwrap();
        let out = rerank(&model, &set).unwrap();
        let mut best = 0;
        for (i, t) in set.trees.iter().enumerate() {
            if model.score_joint(t).unwrap() > model.score_joint(&set.trees[best]).unwrap() {
                best = i;
            }
        }
        assert_eq!(out.best_index, best);
        assert_eq!(out.best_tree, set.trees[best]);
        assert_eq!(out.scores.len(), set.trees.len());
    }

    #[test]
    fn empty_proposals_are_rejected() {
        let model = test_model(System::Standard);
        assert!(matches!(ProposalSet::new(vec![], "x"), Err(DecodeError::EmptyProposal)));
        let set = ProposalSet {
            trees: vec![],
            source: "forced".into(),
        };
        assert!(matches!(marginal_logprob(&model, &set), Err(DecodeError::EmptyProposal)));
        assert!(matches!(rerank(&model, &set), Err(DecodeError::EmptyProposal)));
    }

    #[test]
    fn rollout_proposals_are_distinct_and_projective() {
        let words: Vec<String> = (0..12).map(|i| format!("w{i}")).collect();
        let set = ProposalSet::rollouts(&words, 25, 7).unwrap();
        assert_eq!(set.trees.len(), 25);
        let mut seen = HashSet::new();
        for t in &set.trees {
            assert!(t.is_projective());
            assert!(seen.insert(t.heads().to_vec()));
        }
        // Same seed reproduces the same set.
        assert_eq!(ProposalSet::rollouts(&words, 25, 7).unwrap(), set);
    }

    #[test]
    fn proposal_files_round_trip_with_grouping() {
        let s1 = ProposalSet::enumerate(&sentence(&["a", "b"]), usize::MAX).unwrap();
        let s2 = ProposalSet::enumerate(&sentence(&["c", "d", "e"]), usize::MAX).unwrap();
        let text = render_proposals(&[s1.clone(), s2.clone()]);
        let back = parse_proposals(&text).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].trees, s1.trees);
        assert_eq!(back[1].trees, s2.trees);
    }

    #[test]
    fn surprisal_tsv_round_trips() {
        let rows = vec![
            SurprisalRow { sentence: 1, index: 1, word: "the".into(), surprisal: 3.25 },
            SurprisalRow { sentence: 1, index: 2, word: "cat".into(), surprisal: 7.5 },
            SurprisalRow { sentence: 2, index: 1, word: "dogs".into(), surprisal: 0.125 },
        ];
        let text = render_surprisal_tsv(&rows);
        assert_eq!(parse_surprisal_tsv(&text).unwrap(), rows);
    }

    #[test]
    fn incremental_session_matches_batch_forward_on_oracle_paths() {
        for system in [System::Standard, System::Eager, System::Swift, System::Hybrid] {
            let model = test_model(system);
            let tree = DepTree::new(
                vec![Token::new("a"), Token::new("b"), Token::new("c"), Token::new("d")],
                vec![2, 0, 2, 3],
            )
            .unwrap();
            let seq = extract_oracle(system, &tree).unwrap();
            let mut session = DecoderSession::new(&model).unwrap();
            for t in &seq {
                session.advance(t).unwrap();
            }
            assert!(session.state.is_terminal());
            let total = session.log_prob + session.end_logprob();
            assert_abs_diff_eq!(total, model.score_joint(&tree).unwrap(), epsilon = 1e-9);
        }
    }

    #[test]
    fn unknown_words_fall_back_to_the_unknown_symbol() {
        let model = test_model(System::Standard);
        let words = sentence(&["a", "zzz-not-in-vocab", "c"]);
        let out = beam_search(&model, &words, 4, 4).unwrap();
        assert_eq!(out.surprisals.len(), 3);
        assert!(out.log_prob.is_finite());
    }
}
