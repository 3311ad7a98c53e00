//! Generative dependency transition systems.
//!
//! All four systems generate a sentence and its projective dependency tree
//! in one pass. GEN produces the next word; arc transitions attach words.
//! In arc-standard, GEN pushes the word straight onto the stack. In the
//! other systems the freshest word sits in a one-slot buffer (`bufferHead`)
//! until the next GEN implicitly shifts it onto the stack, so explicit
//! SHIFT transitions never appear.
//!
//! Per-system transition effects, with the stack written bottom-to-top and
//! `b` the buffer head:
//!
//! * arc-standard — `LA`: `[.., i, j] -> [.., j]` with arc `j -> i`;
//!   `RA`: `[.., i, j] -> [.., i]` with arc `i -> j`.
//! * arc-eager — `LA`: arc `b -> top`, pops the (headless) top; `RA`: arc
//!   `top -> b`, pushes `b` as a headed item; `POP` drops a headed top.
//! * arc-swift — `LA[k]`: arc `b -> stack[k]` popping the top `k` items
//!   (the upper `k - 1` must be headed, the k-th headless); `RA[k]`: arc
//!   `stack[k] -> b` popping the upper `k - 1` headed items and pushing
//!   `b` headed.
//! * arc-hybrid — `LA`: arc `b -> top`, pops the top; `RA` behaves like
//!   arc-standard (with the buffer head standing in for the top while
//!   present). Its oracle sequences coincide with arc-standard's.
//!
//! The artificial `<ROOT>` token occupies the bottom of the stack; the
//! sentence root attaches to it exactly once.

use std::fmt;

use crate::treebank::{DepTree, Token, TreebankError, Vocab, LA_ID, POP_ID, RA_ID};
use thiserror::Error;

/// The four generative transition systems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum System {
    Standard,
    Eager,
    Swift,
    Hybrid,
}

impl System {
    pub fn name(&self) -> &'static str {
        match self {
            System::Standard => "arc-standard",
            System::Eager => "arc-eager",
            System::Swift => "arc-swift",
            System::Hybrid => "arc-hybrid",
        }
    }

    pub fn parse(text: &str) -> Option<System> {
        match text.trim().to_ascii_lowercase().as_str() {
            "arc-standard" | "standard" => Some(System::Standard),
            "arc-eager" | "eager" => Some(System::Eager),
            "arc-swift" | "swift" => Some(System::Swift),
            "arc-hybrid" | "hybrid" => Some(System::Hybrid),
            _ => None,
        }
    }
}

impl fmt::Display for System {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One concrete transition. Arc distances are 1 except under arc-swift.
/// The end-of-derivation decision is not a transition: sequences end when
/// the state is terminal.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Transition {
    Gen(String),
    LeftArc(usize),
    RightArc(usize),
    Pop,
}

impl Transition {
    pub fn kind(&self) -> TransitionKind {
        match self {
            Transition::Gen(_) => TransitionKind::Gen,
            Transition::LeftArc(k) => TransitionKind::LeftArc(*k),
            Transition::RightArc(k) => TransitionKind::RightArc(*k),
            Transition::Pop => TransitionKind::Pop,
        }
    }

    /// The vocabulary id this transition occupies as a sequence symbol.
    /// GEN maps through the lexical vocabulary (unknown forms to `<UNK>`).
    pub fn symbol_id(&self, vocab: &Vocab) -> u32 {
        match self {
            Transition::Gen(form) => vocab.id_of(form),
            Transition::LeftArc(k) => {
                if *k == 1 {
                    LA_ID
                } else {
                    vocab.la_id(*k)
                }
            }
            Transition::RightArc(k) => {
                if *k == 1 {
                    RA_ID
                } else {
                    vocab.ra_id(*k)
                }
            }
            Transition::Pop => POP_ID,
        }
    }
}

impl fmt::Display for Transition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Transition::Gen(form) => write!(f, "GEN:{form}"),
            Transition::LeftArc(1) => write!(f, "LA"),
            Transition::LeftArc(k) => write!(f, "LA:{k}"),
            Transition::RightArc(1) => write!(f, "RA"),
            Transition::RightArc(k) => write!(f, "RA:{k}"),
            Transition::Pop => write!(f, "POP"),
        }
    }
}

/// Transition shape without the generated word, plus the end decision.
/// This is what legality reasons about: every word shares GEN's legality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TransitionKind {
    Gen,
    LeftArc(usize),
    RightArc(usize),
    Pop,
    End,
}

/// Errors from oracle extraction, replay, and sequence parsing.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransitionsError {
    #[error("illegal transition {transition} at index {index}: {reason}")]
    IllegalTransition { index: usize, transition: String, reason: String },
    #[error("incomplete parse: {detail}")]
    IncompleteParse { detail: String },
    #[error("oracle stuck: {detail}")]
    OracleStuck { detail: String },
    #[error("unrecognized transition symbol {symbol:?}")]
    BadSymbol { symbol: String },
    #[error(transparent)]
    Treebank(#[from] TreebankError),
}

/// Why a single transition cannot apply in the current state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IllegalStep {
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Entry {
    /// 1-based token index; 0 is the `<ROOT>` sentinel.
    token: usize,
    /// Whether this item already received its head (arc-eager/swift).
    headed: bool,
    /// Canonical-derivation flags (arc-standard/hybrid): set when a GEN
    /// declined the arc pair this item tops, cleared as the pair changes.
    la_block: bool,
    ra_block: bool,
}

impl Entry {
    fn fresh(token: usize) -> Entry {
        Entry { token, headed: false, la_block: false, ra_block: false }
    }
}

/// A parser configuration mid-derivation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct State {
    system: System,
    entries: Vec<Entry>,
    buffer_head: Option<usize>,
    bh_la_block: bool,
    bh_ra_block: bool,
    heads: Vec<Option<usize>>,
    root_used: bool,
}

impl State {
    pub fn new(system: System) -> State {
        State {
            system,
            entries: vec![Entry::fresh(0)],
            buffer_head: None,
            bh_la_block: false,
            bh_ra_block: false,
            heads: Vec::new(),
            root_used: false,
        }
    }

    pub fn system(&self) -> System {
        self.system
    }

    /// Stack token indices, bottom first (index 0 is `<ROOT>` while present).
    pub fn stack(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.token).collect()
    }

    pub fn buffer_head(&self) -> Option<usize> {
        self.buffer_head
    }

    /// Head assignments so far; index `i` holds the head of token `i + 1`.
    pub fn heads(&self) -> &[Option<usize>] {
        &self.heads
    }

    pub fn n_generated(&self) -> usize {
        self.heads.len()
    }

    pub fn root_used(&self) -> bool {
        self.root_used
    }

    fn top(&self) -> Option<&Entry> {
        self.entries.last()
    }

    /// Entry at depth `k` from the top (1-based), if any.
    fn at_depth(&self, k: usize) -> Option<&Entry> {
        if k >= 1 && k <= self.entries.len() {
            Some(&self.entries[self.entries.len() - k])
        } else {
            None
        }
    }

    fn any_headless(&self) -> bool {
        self.entries.iter().any(|e| e.token != 0 && !e.headed)
    }

    /// True when the derivation is complete and `<END>` may be decided.
    pub fn is_terminal(&self) -> bool {
        match self.system {
            System::Standard => {
                self.entries.len() == 1 && self.entries[0].token == 0 && self.root_used
            }
            System::Hybrid => {
                self.entries.len() == 1
                    && self.entries[0].token == 0
                    && self.buffer_head.is_none()
                    && self.root_used
            }
            System::Eager => {
                self.entries.is_empty() && self.buffer_head.is_none() && self.root_used
            }
            System::Swift => {
                self.buffer_head.is_none()
                    && self.root_used
                    && !self.any_headless()
                    && self.heads.iter().all(|h| h.is_some())
            }
        }
    }

    /// Legality of a transition shape. `generation_done` gates GEN (and,
    /// for arc-eager, the final pop of the `<ROOT>` sentinel).
    ///
    /// A terminal state admits `<END>`; under arc-swift it also still
    /// admits GEN, because a finished parse fragment can keep growing.
    /// The other systems cannot usefully generate past their terminal
    /// configurations, so everything but `<END>` is refused there.
    pub fn legal(&self, kind: TransitionKind, generation_done: bool) -> bool {
        match kind {
            TransitionKind::End => return self.is_terminal(),
            TransitionKind::Gen => {
                if generation_done {
                    return false;
                }
                return match self.system {
                    System::Standard | System::Hybrid => !self.is_terminal(),
                    System::Eager => !self.entries.is_empty(),
                    System::Swift => true,
                };
            }
            _ => {}
        }
        match (self.system, kind) {
            (_, TransitionKind::End) | (_, TransitionKind::Gen) => unreachable!(),

            (System::Standard, TransitionKind::LeftArc(1)) => {
                self.entries.len() >= 3
            }
            (System::Standard, TransitionKind::RightArc(1)) => {
                self.entries.len() >= 2
                    && (self.entries[self.entries.len() - 2].token != 0 || !self.root_used)
            }
            (System::Standard, _) => false,

            (System::Eager, TransitionKind::LeftArc(1)) => {
                self.buffer_head.is_some()
                    && self.top().is_some_and(|t| t.token != 0 && !t.headed)
            }
            (System::Eager, TransitionKind::RightArc(1)) => {
                self.buffer_head.is_some()
                    && self.top().is_some_and(|t| t.token != 0 || !self.root_used)
            }
            (System::Eager, TransitionKind::Pop) => match self.top() {
                Some(t) if t.token != 0 => t.headed,
                Some(_root) => {
                    // The sentinel leaves last, once its dependent is
                    // complete and no pending word remains. Further words
                    // could never attach from here (they would need a
                    // second root), so this needs no generation gate.
                    self.entries.len() == 1
                        && self.buffer_head.is_none()
                        && self.root_used
                }
                None => false,
            },
            (System::Eager, _) => false,

            (System::Swift, TransitionKind::LeftArc(k)) => {
                self.buffer_head.is_some()
                    && k >= 1
                    && self.at_depth(k).is_some_and(|e| e.token != 0 && !e.headed)
                    && (1..k).all(|d| self.at_depth(d).is_some_and(|e| e.headed))
            }
            (System::Swift, TransitionKind::RightArc(k)) => {
                self.buffer_head.is_some()
                    && k >= 1
                    && self.at_depth(k).is_some_and(|e| e.token != 0 || !self.root_used)
                    && (1..k).all(|d| self.at_depth(d).is_some_and(|e| e.headed))
            }
            (System::Swift, _) => false,

            (System::Hybrid, TransitionKind::LeftArc(1)) => {
                self.buffer_head.is_some() && self.top().is_some_and(|t| t.token != 0)
            }
            (System::Hybrid, TransitionKind::RightArc(1)) => {
                if self.buffer_head.is_some() {
                    self.top().is_some_and(|t| t.token != 0 || !self.root_used)
                } else {
                    self.entries.len() >= 2
                        && (self.entries[self.entries.len() - 2].token != 0 || !self.root_used)
                }
            }
            (System::Hybrid, _) => false,
        }
    }

    /// All legal transition shapes, in a fixed order: GEN, LA(s), RA(s),
    /// POP, END.
    pub fn legal_transitions(&self, generation_done: bool) -> Vec<TransitionKind> {
        let mut out = Vec::new();
        if self.legal(TransitionKind::Gen, generation_done) {
            out.push(TransitionKind::Gen);
        }
        let max_k = if self.system == System::Swift { self.entries.len() } else { 1 };
        for k in 1..=max_k.max(1) {
            if self.legal(TransitionKind::LeftArc(k), generation_done) {
                out.push(TransitionKind::LeftArc(k));
            }
        }
        for k in 1..=max_k.max(1) {
            if self.legal(TransitionKind::RightArc(k), generation_done) {
                out.push(TransitionKind::RightArc(k));
            }
        }
        if self.legal(TransitionKind::Pop, generation_done) {
            out.push(TransitionKind::Pop);
        }
        if self.legal(TransitionKind::End, generation_done) {
            out.push(TransitionKind::End);
        }
        out
    }

    /// Canonical-derivation filter for arc-standard/hybrid: an arc pair
    /// declined by a GEN may not be formed later unless the pair changed.
    /// Always true for the other systems (and for legal GEN/POP/END).
    pub fn canonical(&self, kind: TransitionKind) -> bool {
        match self.system {
            System::Standard => match kind {
                TransitionKind::LeftArc(_) => !self.top().is_some_and(|t| t.la_block),
                TransitionKind::RightArc(_) => !self.top().is_some_and(|t| t.ra_block),
                _ => true,
            },
            System::Hybrid => match kind {
                TransitionKind::LeftArc(_) => !self.bh_la_block,
                TransitionKind::RightArc(_) => {
                    if self.buffer_head.is_some() {
                        !self.bh_ra_block
                    } else {
                        !self.top().is_some_and(|t| t.ra_block)
                    }
                }
                _ => true,
            },
            _ => true,
        }
    }

    /// Legality restricted so that every reachable configuration can still
    /// finish as a valid single-rooted tree. Used during sampling and
    /// search; plain [`State::legal`] admits a few dead-end GEN/POP/arc
    /// choices that this filter removes.
    pub fn sampling_legal(&self, kind: TransitionKind, generation_done: bool) -> bool {
        if !self.legal(kind, generation_done) {
            return false;
        }
        let lone_used_root =
            self.entries.len() == 1 && self.entries[0].token == 0 && self.root_used;
        match (self.system, kind) {
            (System::Eager, TransitionKind::Gen) | (System::Swift, TransitionKind::Gen) => {
                !lone_used_root
            }
            (System::Eager, TransitionKind::Pop) => {
                // Never expose a bare used sentinel under a pending word.
                !(self.buffer_head.is_some() && self.entries.len() == 2 && self.root_used)
            }
            (System::Swift, TransitionKind::LeftArc(k)) => {
                !(k + 1 == self.entries.len() && self.root_used)
            }
            _ => true,
        }
    }

    /// Whether the derivation can reach a terminal state without any
    /// further GEN. Drives the soft word-budget cutoff during sampling.
    pub fn completable_without_gen(&self) -> bool {
        let lone_used_root =
            self.entries.len() == 1 && self.entries[0].token == 0 && self.root_used;
        match self.system {
            System::Standard => self.entries.len() >= 2 || self.root_used,
            System::Hybrid => {
                self.entries.len() + usize::from(self.buffer_head.is_some()) >= 2
                    || self.root_used
            }
            System::Eager | System::Swift => {
                if self.buffer_head.is_some() {
                    !lone_used_root
                } else {
                    !self.any_headless() && self.root_used
                }
            }
        }
    }

    /// Deterministic next step of the shortest closing schedule: attach
    /// everything pending and head toward a terminal state. Returns `None`
    /// exactly on terminal states. A `Gen` answer means one more word is
    /// required before the parse can close (at most one ever is, so a
    /// sampler that switches to this schedule once its word budget runs
    /// out overshoots the budget by at most one word).
    pub fn completion_step(&self) -> Option<TransitionKind> {
        if self.is_terminal() {
            return None;
        }
        match self.system {
            System::Standard => {
                if self.entries.len() >= 2 {
                    Some(TransitionKind::RightArc(1))
                } else {
                    Some(TransitionKind::Gen)
                }
            }
            System::Hybrid => {
                if self.buffer_head.is_some() || self.entries.len() >= 2 {
                    Some(TransitionKind::RightArc(1))
                } else {
                    Some(TransitionKind::Gen)
                }
            }
            System::Eager => {
                if self.buffer_head.is_some() {
                    // Clear the stack down to whatever the buffer head must
                    // attach to; with the root still unclaimed that is the
                    // root itself, otherwise the nearest remaining entry.
                    let must_clear = if self.root_used {
                        self.any_headless()
                    } else {
                        self.entries.len() > 1
                    };
                    if must_clear {
                        match self.top() {
                            Some(top) if top.token != 0 && !top.headed => {
                                Some(TransitionKind::LeftArc(1))
                            }
                            _ => Some(TransitionKind::Pop),
                        }
                    } else {
                        Some(TransitionKind::RightArc(1))
                    }
                } else if self.root_used && !self.any_headless() {
                    Some(TransitionKind::Pop)
                } else {
                    Some(TransitionKind::Gen)
                }
            }
            System::Swift => {
                if self.buffer_head.is_some() {
                    let shallowest_headless = (1..=self.entries.len()).find(|&k| {
                        let e = self.at_depth(k).unwrap();
                        e.token != 0 && !e.headed
                    });
                    if let Some(k) = shallowest_headless {
                        Some(TransitionKind::LeftArc(k))
                    } else if !self.root_used {
                        Some(TransitionKind::RightArc(self.entries.len()))
                    } else {
                        Some(TransitionKind::RightArc(1))
                    }
                } else {
                    Some(TransitionKind::Gen)
                }
            }
        }
    }

    fn record_arc(&mut self, dep: usize, head: usize) {
        debug_assert!(dep >= 1);
        self.heads[dep - 1] = Some(head);
        if head == 0 {
            self.root_used = true;
        }
    }

    /// Implicit shift: move a pending buffer head onto the stack (headless),
    /// carrying its canonical flags.
    fn shift_buffer(&mut self) {
        if let Some(b) = self.buffer_head.take() {
            let mut e = Entry::fresh(b);
            e.la_block = self.bh_la_block;
            e.ra_block = self.bh_ra_block;
            self.entries.push(e);
            self.bh_la_block = false;
            self.bh_ra_block = false;
        }
    }

    /// Applies one transition, or explains why it cannot apply. GEN is
    /// accepted whenever the state is not terminal; use
    /// [`State::legal`] with `generation_done` for decode-time gating.
    /// The arc-eager sentinel pop is likewise accepted once the parse
    /// below it is complete.
    pub fn apply(&mut self, t: &Transition) -> Result<(), IllegalStep> {
        let kind = t.kind();
        let replay_ok = self.legal(kind, false);
        if !replay_ok {
            return Err(IllegalStep { reason: self.describe_illegal(kind) });
        }
        match (self.system, t) {
            (System::Standard, Transition::Gen(_)) => {
                if let Some(top) = self.entries.last_mut() {
                    top.la_block = true;
                    top.ra_block = true;
                }
                self.heads.push(None);
                self.entries.push(Entry::fresh(self.heads.len()));
            }
            (System::Standard, Transition::LeftArc(_)) => {
                let top = self.entries.pop().unwrap();
                let second = self.entries.pop().unwrap();
                self.record_arc(second.token, top.token);
                self.entries.push(Entry::fresh(top.token));
            }
            (System::Standard, Transition::RightArc(_)) => {
                let top = self.entries.pop().unwrap();
                let second = self.entries.last_mut().unwrap();
                second.ra_block = false;
                let head = second.token;
                self.record_arc(top.token, head);
            }

            (System::Eager, Transition::Gen(_)) => {
                self.shift_buffer();
                self.heads.push(None);
                self.buffer_head = Some(self.heads.len());
            }
            (System::Eager, Transition::LeftArc(_)) => {
                let top = self.entries.pop().unwrap();
                self.record_arc(top.token, self.buffer_head.unwrap());
            }
            (System::Eager, Transition::RightArc(_)) => {
                let head = self.top().unwrap().token;
                let b = self.buffer_head.take().unwrap();
                self.record_arc(b, head);
                let mut e = Entry::fresh(b);
                e.headed = true;
                self.entries.push(e);
            }
            (System::Eager, Transition::Pop) => {
                self.entries.pop();
            }

            (System::Swift, Transition::Gen(_)) => {
                self.shift_buffer();
                self.heads.push(None);
                self.buffer_head = Some(self.heads.len());
            }
            (System::Swift, Transition::LeftArc(k)) => {
                let dep = self.at_depth(*k).unwrap().token;
                self.record_arc(dep, self.buffer_head.unwrap());
                self.entries.truncate(self.entries.len() - k);
            }
            (System::Swift, Transition::RightArc(k)) => {
                let head = self.at_depth(*k).unwrap().token;
                let b = self.buffer_head.take().unwrap();
                self.record_arc(b, head);
                self.entries.truncate(self.entries.len() - (k - 1));
                let mut e = Entry::fresh(b);
                e.headed = true;
                self.entries.push(e);
            }

            (System::Hybrid, Transition::Gen(_)) => {
                if self.buffer_head.is_some() {
                    self.bh_la_block = true;
                    self.bh_ra_block = true;
                    self.shift_buffer();
                } else if let Some(top) = self.entries.last_mut() {
                    top.la_block = true;
                    top.ra_block = true;
                }
                self.heads.push(None);
                self.buffer_head = Some(self.heads.len());
            }
            (System::Hybrid, Transition::LeftArc(_)) => {
                let top = self.entries.pop().unwrap();
                self.record_arc(top.token, self.buffer_head.unwrap());
                self.bh_la_block = false;
                self.bh_ra_block = false;
            }
            (System::Hybrid, Transition::RightArc(_)) => {
                if let Some(b) = self.buffer_head.take() {
                    let head = self.top().unwrap().token;
                    self.record_arc(b, head);
                    let top = self.entries.last_mut().unwrap();
                    top.ra_block = false;
                    self.bh_la_block = false;
                    self.bh_ra_block = false;
                } else {
                    let top = self.entries.pop().unwrap();
                    let second = self.entries.last_mut().unwrap();
                    second.ra_block = false;
                    let head = second.token;
                    self.record_arc(top.token, head);
                }
            }

            (_, Transition::Pop) => {
                unreachable!("legality check admitted an unsupported transition")
            }
        }
        Ok(())
    }

    fn describe_illegal(&self, kind: TransitionKind) -> String {
        let stack: Vec<String> = self.entries.iter().map(|e| e.token.to_string()).collect();
        format!(
            "{kind:?} not applicable under {} (stack [{}], buffer {:?}, root_used {})",
            self.system,
            stack.join(" "),
            self.buffer_head,
            self.root_used
        )
    }
}

/// The legality set as a free function, mirroring [`State::legal_transitions`].
pub fn legal_transitions(state: &State, generation_done: bool) -> Vec<TransitionKind> {
    state.legal_transitions(generation_done)
}

/// Deterministic oracle: the canonical transition sequence generating
/// `tree` under `system`. Arcs are taken as early as possible, with
/// LEFTARC preferred over RIGHTARC, and POP only when required.
pub fn extract_oracle(system: System, tree: &DepTree) -> Result<Vec<Transition>, TransitionsError> {
    let n = tree.len();
    let mut state = State::new(system);
    let mut seq = Vec::new();
    let mut next = 1usize;
    let step_cap = 6 * n + 12;

    // A state can be terminal (eligible for `<END>`) while words remain to
    // generate — under arc-swift every completed prefix parse is such a
    // state — so the loop keeps going until the whole sentence is out.
    while next <= n || !state.is_terminal() {
        if seq.len() > step_cap {
            return Err(TransitionsError::OracleStuck {
                detail: format!("exceeded {step_cap} steps on {n} tokens under {system}"),
            });
        }
        let t = match system {
            System::Standard => oracle_step_standard(&state, tree, next, n),
            System::Eager => oracle_step_eager(&state, tree, next, n),
            System::Swift => oracle_step_swift(&state, tree, next, n),
            System::Hybrid => oracle_step_hybrid(&state, tree, next, n),
        };
        let t = t.ok_or_else(|| TransitionsError::OracleStuck {
            detail: format!(
                "no applicable transition under {system} (stack {:?}, buffer {:?}, next {next})",
                state.stack(),
                state.buffer_head()
            ),
        })?;
        if let Transition::Gen(_) = &t {
            next += 1;
        }
        state.apply(&t).map_err(|e| TransitionsError::OracleStuck {
            detail: format!("oracle chose an illegal transition {t}: {}", e.reason),
        })?;
        seq.push(t);
    }
    Ok(seq)
}

/// A token's gold subtree is fully assembled: every gold dependent has
/// been generated and attached.
fn gold_deps_attached(state: &State, tree: &DepTree, tok: usize) -> bool {
    (1..=tree.len())
        .filter(|&j| tree.head(j) == tok)
        .all(|j| j <= state.n_generated() && state.heads()[j - 1].is_some())
}

fn oracle_step_standard(
    state: &State,
    tree: &DepTree,
    next: usize,
    n: usize,
) -> Option<Transition> {
    let stack = state.stack();
    if stack.len() >= 2 {
        let top = stack[stack.len() - 1];
        let second = stack[stack.len() - 2];
        if second != 0 && tree.head(second) == top && gold_deps_attached(state, tree, second) {
            return Some(Transition::LeftArc(1));
        }
        if tree.head(top) == second && gold_deps_attached(state, tree, top) {
            return Some(Transition::RightArc(1));
        }
    }
    if next <= n {
        return Some(Transition::Gen(tree.form(next).to_string()));
    }
    None
}

fn oracle_step_hybrid(state: &State, tree: &DepTree, next: usize, n: usize) -> Option<Transition> {
    // The buffer head plays the arc-standard top; the stack top plays the
    // arc-standard second. With an empty buffer the stack pair applies.
    let stack = state.stack();
    let pair = match state.buffer_head() {
        Some(b) => stack.last().map(|&i| (i, b)),
        None => {
            if stack.len() >= 2 {
                Some((stack[stack.len() - 2], stack[stack.len() - 1]))
            } else {
                None
            }
        }
    };
    if let Some((i, j)) = pair {
        if i != 0 && tree.head(i) == j && gold_deps_attached(state, tree, i) {
            return Some(Transition::LeftArc(1));
        }
        if tree.head(j) == i && gold_deps_attached(state, tree, j) {
            return Some(Transition::RightArc(1));
        }
    }
    if next <= n {
        return Some(Transition::Gen(tree.form(next).to_string()));
    }
    None
}

fn oracle_step_eager(state: &State, tree: &DepTree, next: usize, n: usize) -> Option<Transition> {
    let stack = state.stack();
    if let Some(b) = state.buffer_head() {
        if let Some(&top) = stack.last() {
            let top_headed = top == 0 || state.heads()[top - 1].is_some();
            if top != 0 && !top_headed && tree.head(top) == b {
                return Some(Transition::LeftArc(1));
            }
            if tree.head(b) == top {
                return Some(Transition::RightArc(1));
            }
            // Pop a finished top when the pending word interacts with
            // something strictly below it.
            if top != 0 && top_headed {
                let below = &stack[..stack.len() - 1];
                let interacts =
                    below.iter().any(|&k| tree.head(b) == k || (k != 0 && tree.head(k) == b));
                if interacts {
                    return Some(Transition::Pop);
                }
            }
        }
        if next <= n {
            return Some(Transition::Gen(tree.form(next).to_string()));
        }
        return None;
    }
    if next <= n {
        return Some(Transition::Gen(tree.form(next).to_string()));
    }
    // Drain: everything is generated and attached; pop the stack away.
    if !stack.is_empty() {
        return Some(Transition::Pop);
    }
    None
}

fn oracle_step_swift(state: &State, tree: &DepTree, next: usize, n: usize) -> Option<Transition> {
    let stack = state.stack();
    if let Some(b) = state.buffer_head() {
        // Unique LEFTARC candidate: the shallowest headless item, with
        // everything above it already headed.
        let mut la_depth = None;
        for d in 1..=stack.len() {
            let tok = stack[stack.len() - d];
            if tok == 0 {
                break;
            }
            let headed = state.heads()[tok - 1].is_some();
            if !headed {
                la_depth = Some((d, tok));
                break;
            }
        }
        if let Some((d, tok)) = la_depth {
            if tree.head(tok) == b {
                return Some(Transition::LeftArc(d));
            }
        }
        // Unique RIGHTARC candidate: the depth of the pending word's gold
        // head, reachable only over headed items.
        let h = tree.head(b);
        for d in 1..=stack.len() {
            let tok = stack[stack.len() - d];
            if tok == h {
                let path_headed =
                    (1..d).all(|u| {
                        let t = stack[stack.len() - u];
                        t != 0 && state.heads()[t - 1].is_some()
                    });
                if path_headed {
                    return Some(Transition::RightArc(d));
                }
                break;
            }
            if tok == 0 {
                break;
            }
        }
    }
    if next <= n {
        return Some(Transition::Gen(tree.form(next).to_string()));
    }
    None
}

/// Executes a transition sequence and reconstructs the generated tree.
/// Fails with [`TransitionsError::IllegalTransition`] at the first bad
/// step and [`TransitionsError::IncompleteParse`] when the sequence ends
/// in a non-terminal state.
pub fn replay(system: System, seq: &[Transition]) -> Result<DepTree, TransitionsError> {
    let mut state = State::new(system);
    let mut forms = Vec::new();
    for (index, t) in seq.iter().enumerate() {
        state.apply(t).map_err(|e| TransitionsError::IllegalTransition {
            index,
            transition: t.to_string(),
            reason: e.reason,
        })?;
        if let Transition::Gen(form) = t {
            forms.push(form.clone());
        }
    }
    if !state.is_terminal() {
        return Err(TransitionsError::IncompleteParse {
            detail: format!(
                "sequence ends non-terminal (stack {:?}, buffer {:?}, {} tokens)",
                state.stack(),
                state.buffer_head(),
                state.n_generated()
            ),
        });
    }
    let heads: Vec<usize> = state.heads().iter().map(|h| h.unwrap()).collect();
    let tokens: Vec<Token> = forms.into_iter().map(Token::new).collect();
    Ok(DepTree::new(tokens, heads)?)
}

/// The arc-hybrid oracle of a tree equals the arc-standard oracle.
pub fn hybrid_equals_standard(tree: &DepTree) -> Result<bool, TransitionsError> {
    let a = extract_oracle(System::Standard, tree)?;
    let b = extract_oracle(System::Hybrid, tree)?;
    Ok(a == b)
}

/// One sentence's transitions as a space-separated line.
pub fn serialize_transitions(seq: &[Transition]) -> String {
    let parts: Vec<String> = seq.iter().map(|t| t.to_string()).collect();
    parts.join(" ")
}

/// Parses one space-separated transition line.
pub fn parse_transitions(line: &str) -> Result<Vec<Transition>, TransitionsError> {
    let mut out = Vec::new();
    for sym in line.split_whitespace() {
        let t = if let Some(form) = sym.strip_prefix("GEN:") {
            Transition::Gen(form.to_string())
        } else if sym == "LA" {
            Transition::LeftArc(1)
        } else if sym == "RA" {
            Transition::RightArc(1)
        } else if sym == "POP" {
            Transition::Pop
        } else if let Some(k) = sym.strip_prefix("LA:") {
            Transition::LeftArc(k.parse().map_err(|_| TransitionsError::BadSymbol {
                symbol: sym.to_string(),
            })?)
        } else if let Some(k) = sym.strip_prefix("RA:") {
            Transition::RightArc(k.parse().map_err(|_| TransitionsError::BadSymbol {
                symbol: sym.to_string(),
            })?)
        } else {
            return Err(TransitionsError::BadSymbol { symbol: sym.to_string() });
        };
        out.push(t);
    }
    Ok(out)
}
