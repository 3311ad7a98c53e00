//! Attention-mask construction for transition sequences.
//!
//! A transition sequence is first *expanded*: every arc transition is
//! duplicated into a composition row plus a follow-up row, a root row is
//! prepended, and each generated word becomes a token row. Over the
//! expanded items this module builds the binary attention matrix (which
//! earlier positions each row may attend) and the stack-depth relative
//! position matrix, either in one shot or row by row.

use crate::transitions::{State, System, Transition};
use crate::treebank::{Vocab, END_ID, LA2_ID, POP_ID, RA2_ID, ROOT_ID};
use thiserror::Error;

/// Default clip for stack depths in the relative-position matrix.
pub const DEFAULT_CLIP: usize = 16;

/// Relative-position value marking the self column on composition and
/// pop rows, kept positive so it can never collide with a stack depth.
pub const SELF_POS: i32 = 1;

/// Relative-position value of a head column on composition rows.
pub const HEAD_POS: i32 = 0;

/// Relative-position value of dependent (and consumed in-between)
/// columns on composition rows.
pub const DEP_POS: i32 = -1;

/// Errors from sequence expansion and mask construction.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AttnMaskError {
    /// The transition sequence cannot be replayed.
    #[error("illegal transition at step {index}: {reason}")]
    IllegalTransition { index: usize, reason: String },
    /// The item stream asks for more stack material than exists.
    #[error("row {row}: {detail}")]
    StackUnderflow { row: usize, detail: String },
    /// A serialized mask artifact does not parse.
    #[error("malformed mask artifact: {detail}")]
    MalformedArtifact { detail: String },
}

/// How a row attends: over the visible stack, as an arc composition, or
/// as a stack pop (arc-eager only).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttnForm {
    Stack,
    Compose,
    PopStack,
}

/// Semantic kind of one expanded position. Arc kinds carry the arc
/// distance `k` (always 1 outside arc-swift).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ItemKind {
    Root,
    Token(u32),
    LaCompose(usize),
    RaCompose(usize),
    La2(usize),
    Ra2(usize),
    Pop,
}

/// One position of an expanded sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpandedItem {
    pub kind: ItemKind,
    pub form: AttnForm,
    /// Whether this row carries a next-transition prediction. False
    /// exactly on composition rows.
    pub predicts: bool,
    /// The prediction target (next transition symbol, or `<END>`), when
    /// known; `None` on non-predicting rows and on the final row of an
    /// unfinished prefix.
    pub target: Option<u32>,
    /// Input symbol id for the embedding table.
    pub input_id: u32,
    /// Head token id carried by arc rows.
    pub head_id: Option<u32>,
}

/// Attention mask, relative positions, and prediction layout for one
/// expanded sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskBundle {
    /// Number of rows (and columns), the expanded length.
    pub rows: usize,
    /// `attend[i][j]` is true when row `i` may attend column `j`.
    pub attend: Vec<Vec<bool>>,
    /// Relative positions, defined where `attend` is true (0 elsewhere).
    pub relpos: Vec<Vec<i32>>,
    /// Indices of rows that carry a prediction target.
    pub prediction_positions: Vec<usize>,
    /// Target symbol ids aligned with `prediction_positions`.
    pub target_ids: Vec<u32>,
}

/// One emitted mask row: attended columns (ascending) with their
/// relative positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskRow {
    pub position: usize,
    pub attend: Vec<usize>,
    pub relpos: Vec<i32>,
}

/// Arc-hybrid sequences coincide with arc-standard sequences (the
/// pending word stands in for the stack top), so they share one mask
/// layout.
fn mask_system(system: System) -> System {
    match system {
        System::Hybrid => System::Standard,
        s => s,
    }
}

fn token_vocab_id(token: usize, forms: &[String], vocab: &Vocab) -> u32 {
    if token == 0 {
        ROOT_ID
    } else {
        vocab.id_of(&forms[token - 1])
    }
}

/// Head token (word index; 0 for the root sentinel) of the arc about to
/// be applied in `state`.
fn arc_head_token(state: &State, left: bool, k: usize) -> Option<usize> {
    let stack = state.stack();
    match state.system() {
        System::Standard => {
            if left {
                stack.last().copied()
            } else {
                stack.len().checked_sub(2).map(|i| stack[i])
            }
        }
        System::Eager => {
            if left {
                state.buffer_head()
            } else {
                stack.last().copied()
            }
        }
        System::Swift => {
            if left {
                state.buffer_head()
            } else {
                stack.len().checked_sub(k).map(|i| stack[i])
            }
        }
        // The pending word stands in for the arc-standard stack top.
        System::Hybrid => {
            if left {
                state.buffer_head()
            } else if state.buffer_head().is_some() {
                stack.last().copied()
            } else {
                stack.len().checked_sub(2).map(|i| stack[i])
            }
        }
    }
}

/// The root sentinel item that begins every expanded sequence.
pub fn root_item() -> ExpandedItem {
    ExpandedItem {
        kind: ItemKind::Root,
        form: AttnForm::Stack,
        predicts: true,
        target: None,
        input_id: ROOT_ID,
        head_id: None,
    }
}

/// The expanded items introduced by one transition, given the state it
/// is applied in and the word forms generated so far. GEN and POP yield
/// one row; arcs yield a composition row plus its follow-up row.
pub fn expand_step(
    state: &State,
    t: &Transition,
    forms: &[String],
    vocab: &Vocab,
    index: usize,
) -> Result<Vec<ExpandedItem>, AttnMaskError> {
    match t {
        Transition::Gen(form) => Ok(vec![ExpandedItem {
            kind: ItemKind::Token(vocab.id_of(form)),
            form: AttnForm::Stack,
            predicts: true,
            target: None,
            input_id: vocab.id_of(form),
            head_id: None,
        }]),
        Transition::LeftArc(k) | Transition::RightArc(k) => {
            let left = matches!(t, Transition::LeftArc(_));
            let head_token = arc_head_token(state, left, *k).ok_or_else(|| {
                AttnMaskError::IllegalTransition {
                    index,
                    reason: format!("no head available for {t}"),
                }
            })?;
            let head_id = token_vocab_id(head_token, forms, vocab);
            let (compose_kind, two_kind, two_id) = if left {
                (ItemKind::LaCompose(*k), ItemKind::La2(*k), LA2_ID)
            } else {
                (ItemKind::RaCompose(*k), ItemKind::Ra2(*k), RA2_ID)
            };
            Ok(vec![
                ExpandedItem {
                    kind: compose_kind,
                    form: AttnForm::Compose,
                    predicts: false,
                    target: None,
                    input_id: t.symbol_id(vocab),
                    head_id: Some(head_id),
                },
                ExpandedItem {
                    kind: two_kind,
                    form: AttnForm::Stack,
                    predicts: true,
                    target: None,
                    input_id: two_id,
                    head_id: Some(head_id),
                },
            ])
        }
        Transition::Pop => Ok(vec![ExpandedItem {
            kind: ItemKind::Pop,
            form: AttnForm::PopStack,
            predicts: true,
            target: None,
            input_id: POP_ID,
            head_id: None,
        }]),
    }
}

/// Expands a legal transition sequence into attention items: a root row,
/// one token row per generated word, a composition row plus a follow-up
/// row per arc, and a pop row per pop. Rows other than compositions
/// carry the next transition's symbol as their prediction target; the
/// final predicting row targets `<END>` when the sequence is complete.
pub fn expand(
    system: System,
    seq: &[Transition],
    vocab: &Vocab,
) -> Result<Vec<ExpandedItem>, AttnMaskError> {
    let mut state = State::new(system);
    let mut forms: Vec<String> = Vec::new();
    let mut items = vec![root_item()];
    for (index, t) in seq.iter().enumerate() {
        items.extend(expand_step(&state, t, &forms, vocab, index)?);
        if let Transition::Gen(form) = t {
            forms.push(form.clone());
        }
        state.apply(t).map_err(|e| AttnMaskError::IllegalTransition {
            index,
            reason: e.reason,
        })?;
    }
    let terminal = state.is_terminal();
    let mut next = 0usize;
    for item in items.iter_mut().filter(|it| it.predicts) {
        item.target = if next < seq.len() {
            Some(seq[next].symbol_id(vocab))
        } else if terminal {
            Some(END_ID)
        } else {
            None
        };
        next += 1;
    }
    Ok(items)
}

/// Incremental mask builder: folds expanded items into mask rows while
/// tracking the stack of visible positions, the masked set, and the
/// pending-word position.
#[derive(Debug, Clone)]
pub struct Masker {
    system: System,
    clip: usize,
    /// Visible stack positions, bottom to top.
    stack: Vec<usize>,
    /// Mask flag per emitted position.
    masked: Vec<bool>,
    /// Position of the pending (not yet shifted) word, if any.
    buffer_head: Option<usize>,
}

impl Masker {
    pub fn new(system: System) -> Self {
        Masker::with_clip(system, DEFAULT_CLIP)
    }

    pub fn with_clip(system: System, clip: usize) -> Self {
        Masker {
            system: mask_system(system),
            clip: clip.max(1),
            stack: Vec::new(),
            masked: Vec::new(),
            buffer_head: None,
        }
    }

    /// Positions emitted so far.
    pub fn len(&self) -> usize {
        self.masked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masked.is_empty()
    }

    /// Visible positions in depth order: the pending word first (depth
    /// 0) when present, then the stack from top to bottom.
    fn depth_order(&self) -> Vec<usize> {
        let mut order = Vec::with_capacity(self.stack.len() + 1);
        if let Some(b) = self.buffer_head {
            order.push(b);
        }
        order.extend(self.stack.iter().rev().copied());
        order
    }

    fn clip_depth(&self, depth: usize) -> i32 {
        -(depth.min(self.clip) as i32)
    }

    fn underflow(&self, row: usize, detail: &str) -> AttnMaskError {
        AttnMaskError::StackUnderflow { row, detail: detail.to_string() }
    }

    /// Assembles a row from (column, relpos) pairs, sorted by column.
    fn finish_row(&self, position: usize, mut cols: Vec<(usize, i32)>) -> MaskRow {
        cols.sort_by_key(|&(c, _)| c);
        cols.dedup_by_key(|&mut (c, _)| c);
        MaskRow {
            position,
            attend: cols.iter().map(|&(c, _)| c).collect(),
            relpos: cols.iter().map(|&(_, r)| r).collect(),
        }
    }

    /// Row over the visible set at current depths, optionally including
    /// the row itself as a self column.
    fn visible_row(&self, position: usize, self_col: Option<i32>) -> MaskRow {
        let mut cols: Vec<(usize, i32)> = self
            .depth_order()
            .into_iter()
            .enumerate()
            .map(|(d, c)| (c, self.clip_depth(d)))
            .collect();
        if let Some(r) = self_col {
            cols.push((position, r));
        }
        self.finish_row(position, cols)
    }

    /// Extends the mask by one item, returning its attention row. The
    /// fold over an expanded sequence reproduces [`build_masks`] exactly.
    pub fn step(&mut self, item: &ExpandedItem) -> Result<MaskRow, AttnMaskError> {
        let pos = self.masked.len();
        self.masked.push(false);
        match (&item.kind, self.system) {
            (ItemKind::Root, _) => {
                self.stack.push(pos);
                Ok(self.visible_row(pos, None))
            }
            (ItemKind::Token(_), System::Standard) => {
                self.stack.push(pos);
                Ok(self.visible_row(pos, None))
            }
            (ItemKind::Token(_), _) => {
                // A new word displaces the pending one onto the stack.
                if let Some(b) = self.buffer_head.take() {
                    self.stack.push(b);
                }
                self.buffer_head = Some(pos);
                Ok(self.visible_row(pos, None))
            }
            (ItemKind::La2(_), _) | (ItemKind::Ra2(_), _) => Ok(self.visible_row(pos, None)),

            (ItemKind::LaCompose(_), System::Standard)
            | (ItemKind::RaCompose(_), System::Standard) => {
                let left = matches!(item.kind, ItemKind::LaCompose(_));
                let top = self
                    .stack
                    .pop()
                    .ok_or_else(|| self.underflow(pos, "composition over an empty stack"))?;
                let second = self
                    .stack
                    .pop()
                    .ok_or_else(|| self.underflow(pos, "composition over a single entry"))?;
                let (head, dep) = if left { (top, second) } else { (second, top) };
                self.masked[head] = true;
                self.masked[dep] = true;
                self.stack.push(pos);
                Ok(self.finish_row(pos, vec![(pos, SELF_POS), (head, HEAD_POS), (dep, DEP_POS)]))
            }

            (ItemKind::LaCompose(_), System::Eager) => {
                let dep = self
                    .stack
                    .pop()
                    .ok_or_else(|| self.underflow(pos, "left composition over an empty stack"))?;
                let head = self
                    .buffer_head
                    .take()
                    .ok_or_else(|| self.underflow(pos, "left composition without a pending word"))?;
                self.masked[dep] = true;
                self.masked[head] = true;
                // The composed result stands in for the pending word.
                self.buffer_head = Some(pos);
                Ok(self.finish_row(pos, vec![(pos, SELF_POS), (head, HEAD_POS), (dep, DEP_POS)]))
            }
            (ItemKind::RaCompose(_), System::Eager) => {
                let head = self
                    .stack
                    .pop()
                    .ok_or_else(|| self.underflow(pos, "right composition over an empty stack"))?;
                let dep = self.buffer_head.take().ok_or_else(|| {
                    self.underflow(pos, "right composition without a pending word")
                })?;
                // Only the head is masked: the dependent stays visible,
                // pushed above the composed result which replaces the
                // head in place.
                self.masked[head] = true;
                self.stack.push(pos);
                self.stack.push(dep);
                Ok(self.finish_row(pos, vec![(pos, SELF_POS), (head, HEAD_POS), (dep, DEP_POS)]))
            }

            (ItemKind::LaCompose(k), System::Swift) => {
                let k = *k;
                if self.stack.len() < k {
                    return Err(self.underflow(pos, "left composition deeper than the stack"));
                }
                let head = self
                    .buffer_head
                    .take()
                    .ok_or_else(|| self.underflow(pos, "left composition without a pending word"))?;
                let mut cols = vec![(pos, SELF_POS), (head, HEAD_POS)];
                // Top k entries leave the stack: the deepest is the
                // dependent, the ones above were consumed in between.
                for _ in 0..k {
                    let p = self.stack.pop().unwrap();
                    self.masked[p] = true;
                    cols.push((p, DEP_POS));
                }
                self.masked[head] = true;
                self.buffer_head = Some(pos);
                Ok(self.finish_row(pos, cols))
            }
            (ItemKind::RaCompose(k), System::Swift) => {
                let k = *k;
                if self.stack.len() < k {
                    return Err(self.underflow(pos, "right composition deeper than the stack"));
                }
                let dep = self.buffer_head.take().ok_or_else(|| {
                    self.underflow(pos, "right composition without a pending word")
                })?;
                let mut cols = vec![(pos, SELF_POS), (dep, DEP_POS)];
                for _ in 1..k {
                    let p = self.stack.pop().unwrap();
                    self.masked[p] = true;
                    cols.push((p, DEP_POS));
                }
                let head = self.stack.pop().unwrap();
                self.masked[head] = true;
                cols.push((head, HEAD_POS));
                self.stack.push(pos);
                self.stack.push(dep);
                Ok(self.finish_row(pos, cols))
            }

            (ItemKind::Pop, System::Eager) => {
                let top = self
                    .stack
                    .pop()
                    .ok_or_else(|| self.underflow(pos, "pop over an empty stack"))?;
                self.masked[top] = true;
                Ok(self.visible_row(pos, Some(SELF_POS)))
            }
            (ItemKind::Pop, _) => {
                Err(self.underflow(pos, "pop outside arc-eager"))
            }

            (ItemKind::LaCompose(_), System::Hybrid)
            | (ItemKind::RaCompose(_), System::Hybrid) => unreachable!(),
        }
    }
}

/// Builds the full mask bundle for an expanded sequence with the default
/// depth clip.
pub fn build_masks(system: System, items: &[ExpandedItem]) -> Result<MaskBundle, AttnMaskError> {
    build_masks_with_clip(system, items, DEFAULT_CLIP)
}

/// Builds the full mask bundle, clipping stack depths at `clip`.
pub fn build_masks_with_clip(
    system: System,
    items: &[ExpandedItem],
    clip: usize,
) -> Result<MaskBundle, AttnMaskError> {
    let rows = items.len();
    let mut masker = Masker::with_clip(system, clip);
    let mut attend = vec![vec![false; rows]; rows];
    let mut relpos = vec![vec![0i32; rows]; rows];
    let mut prediction_positions = Vec::new();
    let mut target_ids = Vec::new();
    for (i, item) in items.iter().enumerate() {
        let row = masker.step(item)?;
        debug_assert_eq!(row.position, i);
        for (&c, &r) in row.attend.iter().zip(&row.relpos) {
            attend[i][c] = true;
            relpos[i][c] = r;
        }
        if item.predicts {
            if let Some(t) = item.target {
                prediction_positions.push(i);
                target_ids.push(t);
            }
        }
    }
    Ok(MaskBundle { rows, attend, relpos, prediction_positions, target_ids })
}

/// The relative-position matrix alone.
pub fn build_relpos(
    system: System,
    items: &[ExpandedItem],
) -> Result<Vec<Vec<i32>>, AttnMaskError> {
    Ok(build_masks(system, items)?.relpos)
}

/// Serializes a mask bundle as a line-oriented text artifact.
pub fn serialize_mask(system: System, bundle: &MaskBundle) -> String {
    let mut out = String::new();
    out.push_str("mask v1\n");
    out.push_str(&format!("system {}\n", system.name()));
    out.push_str(&format!("rows {}\n", bundle.rows));
    for row in &bundle.attend {
        out.push_str("attend ");
        for &a in row {
            out.push(if a { '1' } else { '0' });
        }
        out.push('\n');
    }
    for (i, row) in bundle.relpos.iter().enumerate() {
        out.push_str("relpos");
        for (j, &r) in row.iter().enumerate() {
            if bundle.attend[i][j] {
                out.push_str(&format!(" {r}"));
            } else {
                out.push_str(" .");
            }
        }
        out.push('\n');
    }
    out.push_str("predictions");
    for p in &bundle.prediction_positions {
        out.push_str(&format!(" {p}"));
    }
    out.push('\n');
    out.push_str("targets");
    for t in &bundle.target_ids {
        out.push_str(&format!(" {t}"));
    }
    out.push('\n');
    out
}

/// Parses the text artifact produced by [`serialize_mask`].
pub fn parse_mask(text: &str) -> Result<(System, MaskBundle), AttnMaskError> {
    let bad = |detail: &str| AttnMaskError::MalformedArtifact { detail: detail.to_string() };
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("mask v1") {
        return Err(bad("missing `mask v1` header"));
    }
    let system_line = lines.next().ok_or_else(|| bad("missing system line"))?;
    let system = system_line
        .strip_prefix("system ")
        .and_then(System::parse)
        .ok_or_else(|| bad("unrecognized system line"))?;
    let rows_line = lines.next().ok_or_else(|| bad("missing rows line"))?;
    let rows: usize = rows_line
        .strip_prefix("rows ")
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| bad("unrecognized rows line"))?;
    let mut attend = Vec::with_capacity(rows);
    for _ in 0..rows {
        let line = lines.next().ok_or_else(|| bad("missing attend row"))?;
        let bits = line.strip_prefix("attend ").ok_or_else(|| bad("expected attend row"))?;
        if bits.len() != rows {
            return Err(bad("attend row has the wrong width"));
        }
        attend.push(bits.chars().map(|c| c == '1').collect::<Vec<bool>>());
    }
    let mut relpos = Vec::with_capacity(rows);
    for i in 0..rows {
        let line = lines.next().ok_or_else(|| bad("missing relpos row"))?;
        let body = line.strip_prefix("relpos").ok_or_else(|| bad("expected relpos row"))?;
        let cells: Vec<&str> = body.split_whitespace().collect();
        if cells.len() != rows {
            return Err(bad("relpos row has the wrong width"));
        }
        let mut row = vec![0i32; rows];
        for (j, cell) in cells.iter().enumerate() {
            if *cell == "." {
                if attend[i][j] {
                    return Err(bad("relpos undefined on an attended column"));
                }
            } else {
                row[j] = cell.parse().map_err(|_| bad("non-integer relpos cell"))?;
            }
        }
        relpos.push(row);
    }
    let pred_line = lines.next().ok_or_else(|| bad("missing predictions line"))?;
    let prediction_positions = pred_line
        .strip_prefix("predictions")
        .ok_or_else(|| bad("expected predictions line"))?
        .split_whitespace()
        .map(|s| s.parse().map_err(|_| bad("non-integer prediction position")))
        .collect::<Result<Vec<usize>, _>>()?;
    let target_line = lines.next().ok_or_else(|| bad("missing targets line"))?;
    let target_ids = target_line
        .strip_prefix("targets")
        .ok_or_else(|| bad("expected targets line"))?
        .split_whitespace()
        .map(|s| s.parse().map_err(|_| bad("non-integer target id")))
        .collect::<Result<Vec<u32>, _>>()?;
    if prediction_positions.len() != target_ids.len() {
        return Err(bad("predictions and targets differ in length"));
    }
    Ok((system, MaskBundle { rows, attend, relpos, prediction_positions, target_ids }))
}

/// Human-readable label of an item's input column.
pub fn item_label(item: &ExpandedItem, vocab: &Vocab) -> String {
    match &item.kind {
        ItemKind::Root => "<ROOT>".to_string(),
        ItemKind::Token(id) => vocab.form_of(*id),
        ItemKind::LaCompose(k) => format!("{}+{}", arc_name("LA", *k), head_form(item, vocab)),
        ItemKind::RaCompose(k) => format!("{}+{}", arc_name("RA", *k), head_form(item, vocab)),
        ItemKind::La2(k) => format!("{}+{}", arc_name("LA2", *k), head_form(item, vocab)),
        ItemKind::Ra2(k) => format!("{}+{}", arc_name("RA2", *k), head_form(item, vocab)),
        ItemKind::Pop => "POP".to_string(),
    }
}

fn arc_name(base: &str, k: usize) -> String {
    if k == 1 {
        base.to_string()
    } else {
        format!("{base}[{k}]")
    }
}

fn head_form(item: &ExpandedItem, vocab: &Vocab) -> String {
    item.head_id.map(|h| vocab.form_of(h)).unwrap_or_else(|| "?".to_string())
}

/// Tabular dump of an expanded sequence and its mask: one line per row
/// with input label, attention form, attended columns, and the
/// prediction target.
pub fn debug_table(items: &[ExpandedItem], bundle: &MaskBundle, vocab: &Vocab) -> String {
    let mut out = String::new();
    out.push_str("row  input                 attn      attends                    predicts\n");
    for (i, item) in items.iter().enumerate() {
        let form = match item.form {
            AttnForm::Stack => "STACK",
            AttnForm::Compose => "COMPOSE",
            AttnForm::PopStack => "POPSTACK",
        };
        let cols: Vec<String> = bundle.attend[i]
            .iter()
            .enumerate()
            .filter(|(_, a)| **a)
            .map(|(j, _)| j.to_string())
            .collect();
        let target = match item.target {
            Some(t) if vocab.is_lexical(t) => format!("GEN({})", vocab.form_of(t)),
            Some(t) => vocab.form_of(t),
            None => "-".to_string(),
        };
        out.push_str(&format!(
            "{i:>3}  {:<20}  {form:<8}  {:<25}  {target}\n",
            item_label(item, vocab),
            cols.join(" "),
        ));
    }
    out
}
