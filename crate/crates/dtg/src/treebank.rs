//! Dependency trees, CoNLL-style I/O, projectivity, exhaustive and random
//! projective-tree generation, vocabularies, and subword alignment.
//!
//! Conventions used throughout the crate:
//!
//! * Tokens of a sentence are numbered `1..=n`; position `0` is the
//!   artificial `<ROOT>` token.
//! * A tree is stored as a head vector `heads` where `heads[i]` is the
//!   1-based head of token `i + 1`, and `0` means the token attaches to
//!   `<ROOT>`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Vocabulary id of the artificial root token `<ROOT>`.
pub const ROOT_ID: u32 = 0;
/// Vocabulary id of the end-of-sequence symbol `<END>`.
pub const END_ID: u32 = 1;
/// Vocabulary id of the left-arc transition symbol.
pub const LA_ID: u32 = 2;
/// Vocabulary id of the right-arc transition symbol.
pub const RA_ID: u32 = 3;
/// Vocabulary id of the second (non-predicting) left-arc composition row.
pub const LA2_ID: u32 = 4;
/// Vocabulary id of the second (non-predicting) right-arc composition row.
pub const RA2_ID: u32 = 5;
/// Vocabulary id of the pop transition symbol.
pub const POP_ID: u32 = 6;
/// Vocabulary id of the unknown-word symbol `<UNK>`.
pub const UNK_ID: u32 = 7;
/// Number of reserved vocabulary ids preceding the lexical block.
pub const RESERVED: usize = 8;

/// Errors produced by treebank parsing, validation, and tree generation.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TreebankError {
    #[error("line {line}: malformed line ({detail})")]
    MalformedLine { line: usize, detail: String },
    #[error("line {line}: head field is not an integer: {text:?}")]
    NonIntegerHead { line: usize, text: String },
    #[error("sentence {sentence}: head {head} out of range for {len} tokens")]
    HeadOutOfRange { sentence: usize, head: usize, len: usize },
    #[error("sentence {sentence}: token {token} is its own head")]
    SelfHead { sentence: usize, token: usize },
    #[error("sentence {sentence}: cycle detected through token {token}")]
    CycleDetected { sentence: usize, token: usize },
    #[error("sentence {sentence}: expected exactly one root token, found {roots}")]
    NotSingleRoot { sentence: usize, roots: usize },
    #[error("sentence {sentence}: tree is not projective")]
    NonProjective { sentence: usize },
    #[error("{detail}")]
    TooLarge { detail: String },
    #[error("unknown form {form:?}")]
    UnknownForm { form: String },
    #[error("io error: {0}")]
    Io(String),
}

/// A single word of a sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub form: String,
}

impl Token {
    pub fn new(form: impl Into<String>) -> Self {
        Token { form: form.into() }
    }
}

/// A dependency tree over one sentence.
///
/// Construction validates that the head vector is a well-formed tree:
/// heads in range, no self-loops, exactly one root, and no cycles.
/// Projectivity is *not* required here; use [`DepTree::is_projective`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepTree {
    tokens: Vec<Token>,
    heads: Vec<usize>,
}

impl DepTree {
    pub fn new(tokens: Vec<Token>, heads: Vec<usize>) -> Result<Self, TreebankError> {
        validate_heads(&heads, 0)?;
        if tokens.len() != heads.len() {
            return Err(TreebankError::MalformedLine {
                line: 0,
                detail: format!(
                    "{} tokens but {} heads",
                    tokens.len(),
                    heads.len()
                ),
            });
        }
        Ok(DepTree { tokens, heads })
    }

    /// Builds a tree over placeholder forms `w1..wn` from a head vector.
    pub fn from_heads(heads: Vec<usize>) -> Result<Self, TreebankError> {
        let tokens = (1..=heads.len()).map(|i| Token::new(format!("w{i}"))).collect();
        DepTree::new(tokens, heads)
    }

    /// Replaces the head vector, keeping the tokens. Used to attach a
    /// candidate tree skeleton to a concrete sentence.
    pub fn with_heads(&self, heads: Vec<usize>) -> Result<Self, TreebankError> {
        DepTree::new(self.tokens.clone(), heads)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn heads(&self) -> &[usize] {
        &self.heads
    }

    /// Form of the 1-based token `i`.
    pub fn form(&self, i: usize) -> &str {
        &self.tokens[i - 1].form
    }

    /// 1-based head of the 1-based token `i` (0 for the root token).
    pub fn head(&self, i: usize) -> usize {
        self.heads[i - 1]
    }

    /// The 1-based index of the token attached to `<ROOT>`.
    pub fn root(&self) -> usize {
        self.heads.iter().position(|&h| h == 0).map(|i| i + 1).unwrap_or(0)
    }

    /// True iff the yield of every subtree is a contiguous span.
    pub fn is_projective(&self) -> bool {
        heads_are_projective(&self.heads)
    }

    /// Sentence text with forms joined by single spaces.
    pub fn text(&self) -> String {
        let forms: Vec<&str> = self.tokens.iter().map(|t| t.form.as_str()).collect();
        forms.join(" ")
    }
}

fn validate_heads(heads: &[usize], sentence: usize) -> Result<(), TreebankError> {
    let n = heads.len();
    let mut roots = 0;
    for (i, &h) in heads.iter().enumerate() {
        if h > n {
            return Err(TreebankError::HeadOutOfRange { sentence, head: h, len: n });
        }
        if h == i + 1 {
            return Err(TreebankError::SelfHead { sentence, token: i + 1 });
        }
        if h == 0 {
            roots += 1;
        }
    }
    if n > 0 && roots != 1 {
        return Err(TreebankError::NotSingleRoot { sentence, roots });
    }
    // Walk ancestor chains; any chain longer than n tokens must revisit a node.
    for start in 1..=n {
        let mut node = start;
        let mut steps = 0;
        while node != 0 {
            node = heads[node - 1];
            steps += 1;
            if steps > n {
                return Err(TreebankError::CycleDetected { sentence, token: start });
            }
        }
    }
    Ok(())
}

/// Projectivity of a bare head vector (`heads[i]` is the head of token
/// `i + 1`; `0` is the root). Every subtree yield must be contiguous.
pub fn heads_are_projective(heads: &[usize]) -> bool {
    let n = heads.len();
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n + 1];
    for (i, &h) in heads.iter().enumerate() {
        children[h].push(i + 1);
    }
    // Iterative post-order: yield of node = self + yields of children;
    // contiguous iff max - min + 1 == size.
    let mut min = vec![0usize; n + 1];
    let mut max = vec![0usize; n + 1];
    let mut size = vec![0usize; n + 1];
    let mut order = Vec::with_capacity(n);
    let mut stack: Vec<usize> = children[0].clone();
    while let Some(v) = stack.pop() {
        order.push(v);
        stack.extend(children[v].iter().copied());
    }
    for &v in order.iter().rev() {
        min[v] = v;
        max[v] = v;
        size[v] = 1;
        for &c in &children[v] {
            min[v] = min[v].min(min[c]);
            max[v] = max[v].max(max[c]);
            size[v] += size[c];
        }
        if max[v] - min[v] + 1 != size[v] {
            return false;
        }
    }
    true
}

/// What to do with non-projective sentences during parsing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NonProjectivePolicy {
    /// Drop the sentence and keep going (the default).
    #[default]
    Skip,
    /// Fail the whole parse on the first non-projective sentence.
    Reject,
}

/// Options controlling [`parse_conllu`].
#[derive(Debug, Clone)]
pub struct ParseOptions {
    pub nonprojective: NonProjectivePolicy,
    /// Forms occurring fewer than this many times map to `<UNK>`.
    pub min_freq: usize,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions { nonprojective: NonProjectivePolicy::Skip, min_freq: 1 }
    }
}

/// A set of parsed sentences together with the vocabulary built from them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub trees: Vec<DepTree>,
    pub vocab: Vocab,
    pub skipped_nonprojective: usize,
}

impl Corpus {
    /// Builds a corpus (and its vocabulary) from already-validated trees.
    pub fn from_trees(trees: Vec<DepTree>, min_freq: usize) -> Self {
        let vocab = Vocab::from_trees(&trees, min_freq);
        Corpus { trees, vocab, skipped_nonprojective: 0 }
    }
}

/// Parses CoNLL-style text: one token per line, blank line between
/// sentences, `#` comment lines ignored. Accepts either full 10-column
/// rows (id, form, ..., head in column 7) or compact 3-field rows
/// (id, form, head). Range ids like `1-2` and decimal ids like `1.1`
/// are skipped.
pub fn parse_conllu(text: &str, opts: &ParseOptions) -> Result<Corpus, TreebankError> {
    let mut trees = Vec::new();
    let mut skipped = 0usize;
    let mut forms: Vec<String> = Vec::new();
    let mut heads: Vec<usize> = Vec::new();
    let mut sentence_idx = 0usize;

    let finish = |forms: &mut Vec<String>,
                      heads: &mut Vec<usize>,
                      sentence_idx: &mut usize,
                      trees: &mut Vec<DepTree>,
                      skipped: &mut usize|
     -> Result<(), TreebankError> {
        if forms.is_empty() {
            return Ok(());
        }
        *sentence_idx += 1;
        let hs = std::mem::take(heads);
        let ts: Vec<Token> = std::mem::take(forms).into_iter().map(Token::new).collect();
        validate_heads(&hs, *sentence_idx)?;
        if !heads_are_projective(&hs) {
            match opts.nonprojective {
                NonProjectivePolicy::Skip => {
                    *skipped += 1;
                    return Ok(());
                }
                NonProjectivePolicy::Reject => {
                    return Err(TreebankError::NonProjective { sentence: *sentence_idx });
                }
            }
        }
        trees.push(DepTree { tokens: ts, heads: hs });
        Ok(())
    };

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            finish(&mut forms, &mut heads, &mut sentence_idx, &mut trees, &mut skipped)?;
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let fields: Vec<&str> = if fields.len() >= 3 {
            fields
        } else {
            line.split_whitespace().collect()
        };
        let (id_field, form_field, head_field) = match fields.len() {
            3 => (fields[0], fields[1], fields[2]),
            n if n >= 8 => (fields[0], fields[1], fields[6]),
            n => {
                return Err(TreebankError::MalformedLine {
                    line: line_no,
                    detail: format!("expected 3 or >=8 fields, found {n}"),
                })
            }
        };
        // Multiword ranges ("1-2") and empty nodes ("1.1") carry no tree arcs.
        if id_field.contains('-') || id_field.contains('.') {
            continue;
        }
        let id: usize = id_field.parse().map_err(|_| TreebankError::MalformedLine {
            line: line_no,
            detail: format!("token id {id_field:?} is not a positive integer"),
        })?;
        if id != forms.len() + 1 {
            return Err(TreebankError::MalformedLine {
                line: line_no,
                detail: format!("token id {id} out of sequence (expected {})", forms.len() + 1),
            });
        }
        let head: usize = head_field.parse().map_err(|_| TreebankError::NonIntegerHead {
            line: line_no,
            text: head_field.to_string(),
        })?;
        forms.push(form_field.to_string());
        heads.push(head);
    }
    finish(&mut forms, &mut heads, &mut sentence_idx, &mut trees, &mut skipped)?;

    let vocab = Vocab::from_trees(&trees, opts.min_freq);
    Ok(Corpus { trees, vocab, skipped_nonprojective: skipped })
}

/// Renders one tree as a 10-column CoNLL block (unused columns are `_`).
pub fn serialize_conllu(tree: &DepTree) -> String {
    let mut out = String::new();
    for i in 1..=tree.len() {
        let _ = writeln!(
            out,
            "{}\t{}\t_\t_\t_\t_\t{}\t_\t_\t_",
            i,
            tree.form(i),
            tree.head(i)
        );
    }
    out
}

/// Renders a whole corpus as CoNLL text with blank lines between sentences.
pub fn serialize_corpus(trees: &[DepTree]) -> String {
    let mut out = String::new();
    for tree in trees {
        out.push_str(&serialize_conllu(tree));
        out.push('\n');
    }
    out
}

/// Number of projective single-root trees over `n` tokens.
///
/// Computed by interval dynamic programming: `subtree(l)` counts rooted
/// projective subtrees spanning `l` tokens, `seq(l)` counts partitions of
/// `l` tokens into a sequence of complete subtrees.
pub fn count_projective_trees(n: usize) -> u128 {
    if n == 0 {
        return 0;
    }
    let mut subtree = vec![0u128; n + 1];
    let mut seq = vec![0u128; n + 1];
    seq[0] = 1;
    for l in 1..=n {
        let mut f = 0u128;
        for r in 1..=l {
            f += seq[r - 1] * seq[l - r];
        }
        subtree[l] = f;
        let mut g = 0u128;
        for first in 1..=l {
            g += subtree[first] * seq[l - first];
        }
        seq[l] = g;
    }
    subtree[n]
}

const ENUMERATION_MAX_N: usize = 10;

/// Enumerates every projective dependency tree over `n` tokens as head
/// vectors, in a fixed deterministic order. Supports `n <= 10`; refuses
/// with [`TreebankError::TooLarge`] beyond that or when the number of
/// trees exceeds `cap`.
pub fn enumerate_projective_trees(n: usize, cap: usize) -> Result<Vec<Vec<usize>>, TreebankError> {
    if n > ENUMERATION_MAX_N {
        return Err(TreebankError::TooLarge {
            detail: format!("cannot enumerate trees over {n} tokens (limit {ENUMERATION_MAX_N})"),
        });
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let count = count_projective_trees(n);
    if count > cap as u128 {
        return Err(TreebankError::TooLarge {
            detail: format!("{count} projective trees over {n} tokens exceed cap {cap}"),
        });
    }
    let mut out = Vec::with_capacity(count as usize);
    for (root, arcs) in subtrees_over(1, n) {
        let mut heads = vec![0usize; n];
        for (dep, head) in arcs {
            heads[dep - 1] = head;
        }
        heads[root - 1] = 0;
        out.push(heads);
    }
    debug_assert_eq!(out.len() as u128, count);
    Ok(out)
}

type ArcList = Vec<(usize, usize)>;

/// All projective subtrees whose yield is exactly `[lo, hi]`, as
/// (root, arcs) pairs in deterministic order (root ascending, then left
/// partition order, then right partition order).
fn subtrees_over(lo: usize, hi: usize) -> Vec<(usize, ArcList)> {
    let mut out = Vec::new();
    for r in lo..=hi {
        let lefts = sequences_over(lo, r - 1);
        let rights = sequences_over(r + 1, hi);
        for (lroots, larcs) in &lefts {
            for (rroots, rarcs) in &rights {
                let mut arcs = larcs.clone();
                arcs.extend(rarcs.iter().copied());
                for &c in lroots.iter().chain(rroots.iter()) {
                    arcs.push((c, r));
                }
                out.push((r, arcs));
            }
        }
    }
    out
}

/// All ways to cover `[lo, hi]` with a sequence of complete projective
/// subtrees, as (block roots, arcs) pairs. The empty interval has one
/// covering: no blocks.
fn sequences_over(lo: usize, hi: usize) -> Vec<(Vec<usize>, ArcList)> {
    if lo > hi || hi == 0 {
        return vec![(Vec::new(), Vec::new())];
    }
    let mut out = Vec::new();
    for split in lo..=hi {
        for (broot, barcs) in subtrees_over(lo, split) {
            for (rest_roots, rest_arcs) in sequences_over(split + 1, hi) {
                let mut roots = Vec::with_capacity(rest_roots.len() + 1);
                roots.push(broot);
                roots.extend(rest_roots.iter().copied());
                let mut arcs = barcs.clone();
                arcs.extend(rest_arcs.iter().copied());
                out.push((roots, arcs));
            }
        }
    }
    out
}

/// Draws a random projective tree over `n` tokens, deterministically from
/// `seed`. For `n <= 10` the draw is uniform over the full enumeration;
/// for larger `n` it falls back to a random generative arc-standard
/// transition rollout, which is valid and projective but not uniform.
pub fn random_projective_tree(n: usize, seed: u64) -> Result<Vec<usize>, TreebankError> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if n <= ENUMERATION_MAX_N {
        let trees = enumerate_projective_trees(n, usize::MAX)?;
        let pick = rng.random_range(0..trees.len());
        return Ok(trees[pick].clone());
    }
    Ok(random_rollout_tree(n, &mut rng))
}

/// Random arc-standard rollout: GEN pushes the next token, LEFTARC and
/// RIGHTARC reduce the top two stack items, and the final RIGHTARC onto
/// the root sentinel is only taken once all tokens are generated.
fn random_rollout_tree(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut heads = vec![0usize; n];
    // Stack holds 1-based token indices with a 0 sentinel for the root.
    let mut stack: Vec<usize> = vec![0];
    let mut generated = 0usize;
    loop {
        #[derive(Clone, Copy)]
        enum Mv {
            Gen,
            Left,
            Right,
        }
        let mut legal: Vec<Mv> = Vec::with_capacity(3);
        if generated < n {
            legal.push(Mv::Gen);
        }
        if stack.len() >= 3 {
            legal.push(Mv::Left);
            legal.push(Mv::Right);
        } else if stack.len() == 2 && generated == n {
            legal.push(Mv::Right);
        }
        if legal.is_empty() {
            break;
        }
        match legal[rng.random_range(0..legal.len())] {
            Mv::Gen => {
                generated += 1;
                stack.push(generated);
            }
            Mv::Left => {
                let top = stack.pop().unwrap();
                let second = stack.pop().unwrap();
                heads[second - 1] = top;
                stack.push(top);
            }
            Mv::Right => {
                let top = stack.pop().unwrap();
                let second = *stack.last().unwrap();
                heads[top - 1] = second;
                if stack.len() == 1 && generated == n {
                    break;
                }
            }
        }
    }
    heads
}

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

/// Maps word forms to contiguous ids after a fixed reserved block, with
/// optional extra arc symbols for distance-parameterised transitions
/// (`LA[k]`/`RA[k]` for `k >= 2`) allocated after the lexical block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    forms: Vec<String>,
    index: HashMap<String, u32>,
    swift_kmax: usize,
}

impl Default for Vocab {
    fn default() -> Self {
        Vocab::new()
    }
}

impl Vocab {
    pub fn new() -> Self {
        Vocab { forms: Vec::new(), index: HashMap::new(), swift_kmax: 1 }
    }

    /// Builds a vocabulary from trees in first-occurrence order, dropping
    /// forms that occur fewer than `min_freq` times.
    pub fn from_trees(trees: &[DepTree], min_freq: usize) -> Self {
        let mut freical: HashMap<&str, usize> = HashMap::new();
        let mut order: Vec<&str> = Vec::new();
        for tree in trees {
            for tok in tree.tokens() {
                let e = freical.entry(tok.form.as_str()).or_insert(0);
                if *e == 0 {
                    order.push(tok.form.as_str());
                }
                *e += 1;
            }
        }
        let mut vocab = Vocab::new();
        for form in order {
            if freical[form] >= min_freq.max(1) {
                vocab.insert(form);
            }
        }
        vocab
    }

    /// Inserts a form if absent and returns its id.
    pub fn insert(&mut self, form: &str) -> u32 {
        if let Some(&id) = self.index.get(form) {
            return id;
        }
        let id = (RESERVED + self.forms.len()) as u32;
        self.forms.push(form.to_string());
        self.index.insert(form.to_string(), id);
        id
    }

    /// Id of a form, falling back to `<UNK>` for unknown forms.
    pub fn id_of(&self, form: &str) -> u32 {
        self.index.get(form).copied().unwrap_or(UNK_ID)
    }

    /// Id of a form, or an error for unknown forms.
    pub fn id_of_strict(&self, form: &str) -> Result<u32, TreebankError> {
        self.index
            .get(form)
            .copied()
            .ok_or_else(|| TreebankError::UnknownForm { form: form.to_string() })
    }

    pub fn contains(&self, form: &str) -> bool {
        self.index.contains_key(form)
    }

    /// Number of lexical forms (excluding reserved and arc-distance ids).
    pub fn lexical_len(&self) -> usize {
        self.forms.len()
    }

    /// Total vocabulary size: reserved block, lexical block, then
    /// `LA[k]`/`RA[k]` pairs for `k = 2..=swift_kmax`.
    pub fn size(&self) -> usize {
        RESERVED + self.forms.len() + 2 * (self.swift_kmax.saturating_sub(1))
    }

    pub fn swift_kmax(&self) -> usize {
        self.swift_kmax
    }

    /// Declares the maximum arc distance `k` for which `LA[k]`/`RA[k]`
    /// symbols exist. `k = 1` reuses the plain LA/RA ids.
    pub fn set_swift_kmax(&mut self, kmax: usize) {
        self.swift_kmax = kmax.max(1);
    }

    fn swift_base(&self) -> u32 {
        (RESERVED + self.forms.len()) as u32
    }

    /// Id of `LA[k]`. Requires `1 <= k <= swift_kmax`.
    pub fn la_id(&self, k: usize) -> u32 {
        assert!(k >= 1 && k <= self.swift_kmax, "LA[{k}] outside declared range");
        if k == 1 {
            LA_ID
        } else {
            self.swift_base() + 2 * (k as u32 - 2)
        }
    }

    /// Id of `RA[k]`. Requires `1 <= k <= swift_kmax`.
    pub fn ra_id(&self, k: usize) -> u32 {
        assert!(k >= 1 && k <= self.swift_kmax, "RA[{k}] outside declared range");
        if k == 1 {
            RA_ID
        } else {
            self.swift_base() + 2 * (k as u32 - 2) + 1
        }
    }

    /// If `id` is an arc-distance symbol `LA[k]`/`RA[k]` (with `k >= 2`),
    /// returns `(is_left, k)`.
    pub fn arc_distance_of(&self, id: u32) -> Option<(bool, usize)> {
        let base = self.swift_base();
        let top = self.size() as u32;
        if id >= base && id < top {
            let off = (id - base) as usize;
            Some((off % 2 == 0, off / 2 + 2))
        } else {
            None
        }
    }

    pub fn is_lexical(&self, id: u32) -> bool {
        (id as usize) >= RESERVED && (id as usize) < RESERVED + self.forms.len()
    }

    /// Human-readable name of any id.
    pub fn form_of(&self, id: u32) -> String {
        match id {
            ROOT_ID => "<ROOT>".to_string(),
            END_ID => "<END>".to_string(),
            LA_ID => "LA".to_string(),
            RA_ID => "RA".to_string(),
            LA2_ID => "LA2".to_string(),
            RA2_ID => "RA2".to_string(),
            POP_ID => "POP".to_string(),
            UNK_ID => "<UNK>".to_string(),
            _ => {
                let idx = id as usize - RESERVED;
                if idx < self.forms.len() {
                    self.forms[idx].clone()
                } else if let Some((left, k)) = self.arc_distance_of(id) {
                    if left {
                        format!("LA[{k}]")
                    } else {
                        format!("RA[{k}]")
                    }
                } else {
                    format!("<id:{id}>")
                }
            }
        }
    }

    /// One lexical form per line; line number equals id minus the
    /// reserved-block size.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for form in &self.forms {
            out.push_str(form);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Self {
        let mut vocab = Vocab::new();
        for line in text.lines() {
            if !line.is_empty() {
                vocab.insert(line);
            }
        }
        vocab
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TreebankError> {
        std::fs::write(path, self.to_text()).map_err(|e| TreebankError::Io(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TreebankError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| TreebankError::Io(e.to_string()))?;
        Ok(Vocab::from_text(&text))
    }
}

// ---------------------------------------------------------------------------
// Subword alignment
// ---------------------------------------------------------------------------

/// Splits a word form into subword pieces. Returns `None` when the form
/// cannot be segmented.
pub trait Tokenizer {
    fn split(&self, form: &str) -> Option<Vec<String>>;
}

/// The trivial tokenizer: every word is a single piece.
pub struct IdentityTokenizer;

impl Tokenizer for IdentityTokenizer {
    fn split(&self, form: &str) -> Option<Vec<String>> {
        Some(vec![form.to_string()])
    }
}

/// Where one word's subword pieces live inside a subtoken-level sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordSpan {
    /// 1-based position of the word's first subtoken.
    pub start: usize,
    /// Number of subtokens.
    pub len: usize,
    /// The original word form.
    pub form: String,
}

impl WordSpan {
    /// 1-based position of the word's last subtoken.
    pub fn last(&self) -> usize {
        self.start + self.len - 1
    }
}

/// Expands a word-level tree to a subtoken-level tree plus the word
/// boundary table. Non-final pieces of a word attach to the word's last
/// piece; the dependency arcs of the original tree connect last pieces.
pub fn subword_align(
    tree: &DepTree,
    tokenizer: &dyn Tokenizer,
) -> Result<(DepTree, Vec<WordSpan>), TreebankError> {
    let mut spans: Vec<WordSpan> = Vec::with_capacity(tree.len());
    let mut sub_tokens: Vec<Token> = Vec::new();
    for i in 1..=tree.len() {
        let form = tree.form(i);
        let pieces = tokenizer
            .split(form)
            .filter(|p| !p.is_empty())
            .ok_or_else(|| TreebankError::UnknownForm { form: form.to_string() })?;
        spans.push(WordSpan { start: sub_tokens.len() + 1, len: pieces.len(), form: form.to_string() });
        sub_tokens.extend(pieces.into_iter().map(Token::new));
    }
    let mut heads = vec![0usize; sub_tokens.len()];
    for (w, span) in spans.iter().enumerate() {
        let last = span.last();
        for p in span.start..last {
            heads[p - 1] = last;
        }
        let word_head = tree.head(w + 1);
        heads[last - 1] = if word_head == 0 { 0 } else { spans[word_head - 1].last() };
    }
    let sub_tree = DepTree::new(sub_tokens, heads)?;
    Ok((sub_tree, spans))
}

/// Inverse of [`subword_align`]: rebuilds the word-level tree from a
/// subtoken-level tree and its boundary table.
pub fn collapse_subwords(
    sub_tree: &DepTree,
    spans: &[WordSpan],
) -> Result<DepTree, TreebankError> {
    let mut last_to_word: HashMap<usize, usize> = HashMap::new();
    for (w, span) in spans.iter().enumerate() {
        last_to_word.insert(span.last(), w + 1);
    }
    let mut tokens = Vec::with_capacity(spans.len());
    let mut heads = Vec::with_capacity(spans.len());
    for span in spans {
        tokens.push(Token::new(span.form.clone()));
        let sub_head = sub_tree.head(span.last());
        let word_head = if sub_head == 0 {
            0
        } else {
            *last_to_word.get(&sub_head).ok_or_else(|| TreebankError::MalformedLine {
                line: 0,
                detail: format!("subtoken head {sub_head} is not a word-final position"),
            })?
        };
        heads.push(word_head);
    }
    DepTree::new(tokens, heads)
}
