//! Command-line interface wiring every module into reproducible,
//! fingerprinted runs.
//!
//! Exit codes: `0` success, `1` usage error (bad flags, unknown
//! subcommand), `2` data error (unreadable or malformed inputs, model
//! failures). Every command stamps a config fingerprint — a stable hash of
//! its fully resolved parameters — into its primary output, and all
//! randomness flows from one `--seed` through per-purpose derived streams,
//! so a rerun with the same fingerprint produces byte-identical artifacts.

use std::fmt;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::attnmask::{build_masks_with_clip, debug_table, expand, serialize_mask, AttnMaskError};
use crate::decode::{
    beam_search, constrained_sample, parse_proposals, render_surprisal_tsv, rerank, DecodeError,
    ProposalSet, SurprisalRow,
};
use crate::evalharness::{
    config_fingerprint, fnv1a64, minimal_pairs, parse_pairs_tsv, parse_suite, perplexity,
    render_pairs_tsv, surprisal_suite, uas_filtered, EvalError, EvalReport, ProposalSource,
};
use crate::model::{
    apply_config_entry, load_checkpoint, render_config_text, save_checkpoint, Model, ModelConfig,
    ModelError, OptState, Optimizer, TrainSchedule,
};
use crate::synth;
use crate::transitions::{
    extract_oracle, parse_transitions, replay, serialize_transitions, System, TransitionsError,
};
use crate::treebank::{
    parse_conllu, serialize_corpus, Corpus, DepTree, ParseOptions, Token, TreebankError,
};

/// Environment variable that redirects relative output paths into a
/// different base directory.
pub const OUT_DIR_ENV: &str = "DTG_OUT_DIR";

const DEFAULT_SWIFT_KMAX: usize = 16;

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) | CliError::Data(msg) => write!(f, "{msg}"),
        }
    }
}

macro_rules! data_error_from {
    ($($ty:ty),*) => {
        $(impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::Data(e.to_string())
            }
        })*
    };
}

data_error_from!(
    TreebankError,
    TransitionsError,
    AttnMaskError,
    ModelError,
    DecodeError,
    EvalError,
    io::Error
);

fn parse_system(raw: &str) -> Result<System, String> {
    System::parse(raw).ok_or_else(|| {
        format!("unknown transition system `{raw}` (use arc-standard, arc-eager, arc-swift, or arc-hybrid)")
    })
}

/// Generative dependency parsing as language modeling: oracles, attention
/// masks, training, constrained generation, and evaluation.
#[derive(Debug, Parser)]
#[command(name = "dtg", version, disable_help_subcommand = true)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Extract oracle transition sequences from a CoNLL treebank.
    Oracle(OracleArgs),
    /// Rebuild trees from transition lines and print them as CoNLL.
    Replay(ReplayArgs),
    /// Expand derivations into attention-mask bundles.
    Mask(MaskArgs),
    /// Train a model on a treebank and write a checkpoint.
    Train(TrainArgs),
    /// Draw mask-constrained samples from a checkpoint.
    Sample(SampleArgs),
    /// Score trees by joint derivation log-probability.
    Score(ScoreArgs),
    /// Marginal perplexity of sentences under proposal trees.
    Ppl(PplArgs),
    /// Minimal-pair accuracy from a tab-separated pair file.
    Pairs(PairsArgs),
    /// Per-word surprisals or surprisal-inequality suites via beam search.
    Surprisal(SurprisalArgs),
    /// Pick the best tree per sentence from a proposal set.
    Rerank(RerankArgs),
    /// Enumerate all projective trees over n words.
    Enumerate(EnumerateArgs),
    /// Generate the synthetic agreement treebank and pair files.
    Synth(SynthArgs),
}

/// Runs the CLI against process arguments and stdout.
pub fn main_entry() -> i32 {
    let mut stdout = io::stdout();
    run_from(std::env::args(), &mut stdout)
}

/// Runs the CLI with explicit arguments and output sink; returns the exit
/// code. The first argument is the program name.
pub fn run_from<I, S>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match run(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code()
        }
    }
}

fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Oracle(a) => cmd_oracle(a, out),
        Cmd::Replay(a) => cmd_replay(a, out),
        Cmd::Mask(a) => cmd_mask(a, out),
        Cmd::Train(a) => cmd_train(a, out),
        Cmd::Sample(a) => cmd_sample(a, out),
        Cmd::Score(a) => cmd_score(a, out),
        Cmd::Ppl(a) => cmd_ppl(a, out),
        Cmd::Pairs(a) => cmd_pairs(a, out),
        Cmd::Surprisal(a) => cmd_surprisal(a, out),
        Cmd::Rerank(a) => cmd_rerank(a, out),
        Cmd::Enumerate(a) => cmd_enumerate(a, out),
        Cmd::Synth(a) => cmd_synth(a, out),
    }
}

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

/// Derives an independent seed stream from the run seed and a fixed label.
fn derived_seed(seed: u64, label: &str) -> u64 {
    seed ^ fnv1a64(label.as_bytes())
}

/// Resolves an output path, honoring the output-directory override for
/// relative paths.
fn resolve_out(path: &Path) -> PathBuf {
    match std::env::var_os(OUT_DIR_ENV) {
        Some(base) if path.is_relative() => PathBuf::from(base).join(path),
        _ => path.to_path_buf(),
    }
}

fn write_artifact(path: &Path, contents: &str) -> Result<(), CliError> {
    let resolved = resolve_out(path);
    if let Some(parent) = resolved.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(&resolved, contents)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", resolved.display())))
}

fn read_input(path: &Path) -> Result<String, CliError> {
    if path == Path::new("-") {
        let mut buf = String::new();
        io::Read::read_to_string(&mut io::stdin(), &mut buf)?;
        return Ok(buf);
    }
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))
}

/// Stable hash of a command's fully resolved parameters.
fn run_fingerprint(command: &str, entries: &[(&str, String)]) -> String {
    let mut text = format!("command={command}\n");
    for (k, v) in entries {
        text.push_str(&format!("{k}={v}\n"));
    }
    format!("{:016x}", fnv1a64(text.as_bytes()))
}

/// Emits primary output either to a file artifact or the stdout sink.
fn emit(dest: &Option<PathBuf>, out: &mut dyn Write, contents: &str) -> Result<(), CliError> {
    match dest {
        Some(path) => write_artifact(path, contents),
        None => {
            out.write_all(contents.as_bytes())?;
            Ok(())
        }
    }
}

fn parse_treebank(text: &str) -> Result<Corpus, CliError> {
    let corpus = parse_conllu(text, &ParseOptions::default())?;
    if corpus.skipped_nonprojective > 0 {
        eprintln!("note: skipped {} non-projective sentence(s)", corpus.skipped_nonprojective);
    }
    if corpus.trees.is_empty() {
        return Err(CliError::Data("treebank contains no usable sentences".to_string()));
    }
    Ok(corpus)
}

fn load_model(path: &Path) -> Result<(Model, Option<OptState>), CliError> {
    load_checkpoint(path).map_err(|e| {
        CliError::Data(format!("cannot load checkpoint {}: {e}", path.display()))
    })
}

fn sentences_from_lines(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| l.split_whitespace().map(String::from).collect())
        .collect()
}

/// Shared proposal-source flags for marginal-based metrics.
#[derive(Debug, Args)]
struct ProposalArgs {
    /// Proposal source: `enumerate` (exhaustive, short sentences only) or
    /// `rollouts` (seeded random distinct projective trees).
    #[arg(long, default_value = "rollouts")]
    proposals: String,
    /// Cap on enumerated trees per sentence.
    #[arg(long, default_value_t = 10_000)]
    cap: usize,
    /// Number of rollout trees per sentence.
    #[arg(long, default_value_t = 32)]
    samples: usize,
}

impl ProposalArgs {
    fn source(&self, seed: u64) -> Result<ProposalSource, CliError> {
        match self.proposals.as_str() {
            "enumerate" => Ok(ProposalSource::Enumerate { cap: self.cap }),
            "rollouts" => Ok(ProposalSource::Rollouts {
                samples: self.samples,
                seed: derived_seed(seed, "proposal-rollouts"),
            }),
            other => Err(CliError::Usage(format!(
                "unknown proposal source `{other}` (use enumerate or rollouts)"
            ))),
        }
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("proposals", self.proposals.clone()),
            ("cap", self.cap.to_string()),
            ("samples", self.samples.to_string()),
        ]
    }
}

fn report_block(report: &EvalReport, fingerprint: &str) -> String {
    format!(
        "# config-fingerprint={fingerprint}\n{}\n{}",
        report.render_table(),
        report.render_kv()
    )
}

// ---------------------------------------------------------------------------
// oracle / replay / mask
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
struct OracleArgs {
    /// Transition system.
    #[arg(long, value_parser = parse_system, default_value = "arc-standard")]
    system: System,
    /// CoNLL treebank file (`-` for stdin).
    #[arg(long)]
    input: PathBuf,
    /// Output file; defaults to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_oracle(a: OracleArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let corpus = parse_treebank(&read_input(&a.input)?)?;
    let fp = run_fingerprint(
        "oracle",
        &[("system", a.system.name().to_string()), ("input", a.input.display().to_string())],
    );
    let mut text = format!("# config-fingerprint={fp}\n");
    for tree in &corpus.trees {
        let seq = extract_oracle(a.system, tree)?;
        text.push_str(&serialize_transitions(&seq));
        text.push('\n');
    }
    emit(&a.out, out, &text)
}

#[derive(Debug, Args)]
struct ReplayArgs {
    #[arg(long, value_parser = parse_system, default_value = "arc-standard")]
    system: System,
    /// Transition lines file (`-` for stdin); one derivation per line.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_replay(a: ReplayArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let text = read_input(&a.input)?;
    let mut trees = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let seq = parse_transitions(line)?;
        trees.push(replay(a.system, &seq)?);
    }
    if trees.is_empty() {
        return Err(CliError::Data("no transition lines in input".to_string()));
    }
    let fp = run_fingerprint(
        "replay",
        &[("system", a.system.name().to_string()), ("input", a.input.display().to_string())],
    );
    let body = format!("# config-fingerprint={fp}\n{}", serialize_corpus(&trees));
    emit(&a.out, out, &body)
}

#[derive(Debug, Args)]
struct MaskArgs {
    #[arg(long, value_parser = parse_system, default_value = "arc-standard")]
    system: System,
    /// CoNLL treebank, or transition lines with `--transitions`.
    #[arg(long)]
    input: PathBuf,
    /// Treat the input as transition lines instead of CoNLL.
    #[arg(long)]
    transitions: bool,
    /// Print the row-by-row expansion table instead of the raw mask dump.
    #[arg(long)]
    debug_table: bool,
    /// Relative-position clipping depth.
    #[arg(long, default_value_t = 16)]
    clip: usize,
    /// Largest arc distance given symbols in the arc-swift vocabulary.
    #[arg(long, default_value_t = DEFAULT_SWIFT_KMAX)]
    swift_kmax: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_mask(a: MaskArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let text = read_input(&a.input)?;
    let sequences: Vec<Vec<crate::transitions::Transition>> = if a.transitions {
        let mut seqs = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            seqs.push(parse_transitions(line)?);
        }
        seqs
    } else {
        let corpus = parse_treebank(&text)?;
        let mut seqs = Vec::new();
        for tree in &corpus.trees {
            seqs.push(extract_oracle(a.system, tree)?);
        }
        seqs
    };
    if sequences.is_empty() {
        return Err(CliError::Data("no derivations in input".to_string()));
    }
    let trees: Vec<DepTree> =
        sequences.iter().map(|s| replay(a.system, s)).collect::<Result<_, _>>()?;
    let mut vocab = Corpus::from_trees(trees, 1).vocab;
    if a.system == System::Swift {
        vocab.set_swift_kmax(a.swift_kmax);
    }
    let fp = run_fingerprint(
        "mask",
        &[
            ("system", a.system.name().to_string()),
            ("input", a.input.display().to_string()),
            ("transitions", a.transitions.to_string()),
            ("debug_table", a.debug_table.to_string()),
            ("clip", a.clip.to_string()),
            ("swift_kmax", a.swift_kmax.to_string()),
        ],
    );
    let mut body = format!("# config-fingerprint={fp}\n");
    for seq in &sequences {
        let items = expand(a.system, seq, &vocab)?;
        let bundle = build_masks_with_clip(a.system, &items, a.clip)?;
        if a.debug_table {
            body.push_str(&debug_table(&items, &bundle, &vocab));
        } else {
            body.push_str(&serialize_mask(a.system, &bundle));
        }
        body.push('\n');
    }
    emit(&a.out, out, &body)
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
struct TrainArgs {
    /// CoNLL training treebank.
    #[arg(long)]
    treebank: PathBuf,
    #[arg(long, value_parser = parse_system, default_value = "arc-standard")]
    system: System,
    /// Directory for checkpoint.dtg, train_log.tsv, and config.txt.
    #[arg(long)]
    out_dir: PathBuf,
    /// Model config file of `key=value` lines; command-line `--set`
    /// entries take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model config override, e.g. `--set layers=2` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Resume training from an existing checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    #[arg(long, default_value_t = 3e-4)]
    lr: f64,
    #[arg(long, default_value_t = 1000)]
    warmup: usize,
    #[arg(long, default_value_t = 0.01)]
    weight_decay: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    #[arg(long, default_value_t = 1.0)]
    grad_clip: f64,
    /// `adamw` or `sgd`.
    #[arg(long, default_value = "adamw")]
    optimizer: String,
    /// Learning-rate multiplier for the embedding table.
    #[arg(long, default_value_t = 1.0)]
    emb_lr_mult: f64,
    /// Drop surface forms rarer than this from the vocabulary.
    #[arg(long, default_value_t = 1)]
    min_freq: usize,
    #[arg(long, default_value_t = DEFAULT_SWIFT_KMAX)]
    swift_kmax: usize,
    /// Master seed; parameter init, shuffling, and dropout derive from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker cap (training itself is the single-threaded reference).
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Log every N steps.
    #[arg(long, default_value_t = 50)]
    log_every: usize,
}

fn cmd_train(a: TrainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let text = read_input(&a.treebank)?;
    let corpus = {
        let opts = ParseOptions { min_freq: a.min_freq, ..ParseOptions::default() };
        let corpus = parse_conllu(&text, &opts)?;
        if corpus.skipped_nonprojective > 0 {
            eprintln!(
                "note: skipped {} non-projective sentence(s)",
                corpus.skipped_nonprojective
            );
        }
        if corpus.trees.is_empty() {
            return Err(CliError::Data("treebank contains no usable sentences".to_string()));
        }
        corpus
    };
    let mut vocab = corpus.vocab.clone();
    if a.system == System::Swift {
        vocab.set_swift_kmax(a.swift_kmax);
    }

    let (mut model, mut opt_state) = match &a.resume {
        Some(path) => {
            let (model, state) = load_model(path)?;
            if model.config.system != a.system {
                return Err(CliError::Usage(format!(
                    "checkpoint was trained with {}, but --system is {}",
                    model.config.system.name(),
                    a.system.name()
                )));
            }
            (model, state)
        }
        None => {
            let mut config = ModelConfig::desk_default(a.system, vocab.size());
            if let Some(path) = &a.config {
                for (i, line) in read_input(path)?.lines().enumerate() {
                    let line = line.trim();
                    if line.is_empty() || line.starts_with('#') {
                        continue;
                    }
                    let (key, value) = line.split_once('=').ok_or_else(|| {
                        CliError::Usage(format!(
                            "{}:{}: expected key=value",
                            path.display(),
                            i + 1
                        ))
                    })?;
                    apply_config_entry(&mut config, key.trim(), value.trim())
                        .map_err(CliError::Usage)?;
                }
            }
            for entry in &a.set {
                let (key, value) = entry.split_once('=').ok_or_else(|| {
                    CliError::Usage(format!("--set expects key=value, found `{entry}`"))
                })?;
                apply_config_entry(&mut config, key.trim(), value.trim())
                    .map_err(CliError::Usage)?;
            }
            // The vocabulary always comes from the data; the system from the
            // command line.
            config.system = a.system;
            config.vocab_size = vocab.size();
            config.seed = a.seed;
            (Model::new(config, vocab)?, None)
        }
    };

    let schedule = TrainSchedule {
        steps: a.steps,
        batch_size: a.batch_size,
        lr: a.lr,
        warmup: a.warmup,
        weight_decay: a.weight_decay,
        grad_clip: if a.grad_clip > 0.0 { Some(a.grad_clip) } else { None },
        optimizer: Optimizer::parse(&a.optimizer)
            .ok_or_else(|| CliError::Usage(format!("unknown optimizer `{}`", a.optimizer)))?,
        emb_lr_mult: a.emb_lr_mult,
        seed: derived_seed(a.seed, "train-shuffle"),
    };

    let examples = crate::model::examples_from_corpus(
        &corpus,
        model.config.system,
        &model.vocab,
        model.config.rel_clip_k,
    )?;

    let mut fingerprint_entries = vec![
        ("system", a.system.name().to_string()),
        ("config", render_config_text(&model.config).replace('\n', ";")),
        ("steps", a.steps.to_string()),
        ("batch_size", a.batch_size.to_string()),
        ("lr", a.lr.to_string()),
        ("warmup", a.warmup.to_string()),
        ("weight_decay", a.weight_decay.to_string()),
        ("grad_clip", a.grad_clip.to_string()),
        ("optimizer", a.optimizer.clone()),
        ("emb_lr_mult", a.emb_lr_mult.to_string()),
        ("min_freq", a.min_freq.to_string()),
        ("seed", a.seed.to_string()),
        ("sentences", corpus.trees.len().to_string()),
    ];
    if let Some(r) = &a.resume {
        fingerprint_entries.push(("resume", r.display().to_string()));
    }
    let fp = run_fingerprint("train", &fingerprint_entries);

    let mut log_lines = String::from("step\tloss\tlr\n");
    let log_every = a.log_every.max(1);
    let mut progress = |step: usize, loss: f64, lr: f64| {
        if step % log_every == 0 || step + 1 == a.steps {
            log_lines.push_str(&format!("{step}\t{loss:.6}\t{lr:.6e}\n"));
            eprintln!("step {step}: loss {loss:.4} lr {lr:.3e}");
        }
    };

    let report = match opt_state.as_mut() {
        Some(state) => {
            crate::model::train_with_state(&mut model, &examples, &schedule, state, Some(&mut progress))?
        }
        None => {
            let (report, state) =
                crate::model::train(&mut model, &examples, &schedule, Some(&mut progress))?;
            opt_state = Some(state);
            report
        }
    };

    let ckpt_path = resolve_out(&a.out_dir.join("checkpoint.dtg"));
    if let Some(parent) = ckpt_path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    save_checkpoint(&ckpt_path, &model, opt_state.as_ref())?;
    write_artifact(&a.out_dir.join("train_log.tsv"), &log_lines)?;
    let config_text = format!(
        "{}fingerprint={fp}\nsteps_run={}\nfinal_lr={:.6e}\n",
        render_config_text(&model.config),
        report.steps_run,
        report.final_lr
    );
    write_artifact(&a.out_dir.join("config.txt"), &config_text)?;

    let final_loss = report.losses.last().copied().unwrap_or(f64::NAN);
    writeln!(
        out,
        "# config-fingerprint={fp}\ntrained {} step(s) on {} sentence(s); final loss {final_loss:.4}\ncheckpoint {}",
        report.steps_run,
        corpus.trees.len(),
        ckpt_path.display()
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// sample / score
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
struct SampleArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 10)]
    samples: usize,
    /// Word budget; the closing schedule may add at most one word.
    #[arg(long, default_value_t = 20)]
    max_words: usize,
    /// Softmax temperature; 0 is greedy.
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Print sampled trees as CoNLL blocks instead of transition lines.
    #[arg(long)]
    conllu: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_sample(a: SampleArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let (model, _) = load_model(&a.checkpoint)?;
    let fp = run_fingerprint(
        "sample",
        &[
            ("model", config_fingerprint(&model)),
            ("samples", a.samples.to_string()),
            ("max_words", a.max_words.to_string()),
            ("temperature", a.temperature.to_string()),
            ("seed", a.seed.to_string()),
            ("conllu", a.conllu.to_string()),
        ],
    );
    let base = derived_seed(a.seed, "sample");
    let mut body = format!("# config-fingerprint={fp}\n");
    let mut trees = Vec::new();
    for i in 0..a.samples {
        let outcome = constrained_sample(&model, a.max_words, a.temperature, base.wrapping_add(i as u64))?;
        if a.conllu {
            trees.push(outcome.tree);
        } else {
            body.push_str(&format!(
                "{}\t{:.6}\n",
                serialize_transitions(&outcome.seq),
                outcome.log_prob
            ));
        }
    }
    if a.conllu {
        body.push_str(&serialize_corpus(&trees));
    }
    emit(&a.out, out, &body)
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// CoNLL trees to score.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_score(a: ScoreArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let (model, _) = load_model(&a.checkpoint)?;
    let corpus = parse_treebank(&read_input(&a.input)?)?;
    let fp = run_fingerprint(
        "score",
        &[("model", config_fingerprint(&model)), ("input", a.input.display().to_string())],
    );
    let mut body = format!("# config-fingerprint={fp}\nlogprob\tsentence\n");
    for tree in &corpus.trees {
        let lp = model.score_joint(tree)?;
        body.push_str(&format!("{lp:.9}\t{}\n", tree.text()));
    }
    emit(&a.out, out, &body)
}

// ---------------------------------------------------------------------------
// ppl / pairs / surprisal / rerank
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
struct PplArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Sentence file: one whitespace-tokenized sentence per line.
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    proposals: ProposalArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_ppl(a: PplArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let (model, _) = load_model(&a.checkpoint)?;
    let sentences = sentences_from_lines(&read_input(&a.input)?);
    let source = a.proposals.source(a.seed)?;
    let mut entries = vec![
        ("model", config_fingerprint(&model)),
        ("input", a.input.display().to_string()),
        ("seed", a.seed.to_string()),
    ];
    entries.extend(a.proposals.entries());
    let fp = run_fingerprint("ppl", &entries);
    let report = perplexity(&model, &sentences, &source, a.jobs)?;
    emit(&a.out, out, &report_block(&report.report(), &fp))
}

#[derive(Debug, Args)]
struct PairsArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Tab-separated pair file: `tag<TAB>good<TAB>bad` per line.
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    proposals: ProposalArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_pairs(a: PairsArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let (model, _) = load_model(&a.checkpoint)?;
    let pairs = parse_pairs_tsv(&read_input(&a.input)?)?;
    let source = a.proposals.source(a.seed)?;
    let mut entries = vec![
        ("model", config_fingerprint(&model)),
        ("input", a.input.display().to_string()),
        ("seed", a.seed.to_string()),
    ];
    entries.extend(a.proposals.entries());
    let fp = run_fingerprint("pairs", &entries);
    let report = minimal_pairs(&model, &pairs, &source, a.jobs)?;
    emit(&a.out, out, &report_block(&report.report(), &fp))
}

#[derive(Debug, Args)]
struct SurprisalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Surprisal-inequality suite file.
    #[arg(long)]
    suite: Option<PathBuf>,
    /// Plain sentence file; prints per-word surprisal rows instead.
    #[arg(long)]
    sentences: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    beam: usize,
    /// Within-word beam width; defaults to --beam.
    #[arg(long)]
    word_beam: Option<usize>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_surprisal(a: SurprisalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if a.suite.is_some() == a.sentences.is_some() {
        return Err(CliError::Usage(
            "surprisal needs exactly one of --suite or --sentences".to_string(),
        ));
    }
    let (model, _) = load_model(&a.checkpoint)?;
    let word_beam = a.word_beam.unwrap_or(a.beam);
    let fp_entries = |input: &Path| {
        vec![
            ("model", config_fingerprint(&model)),
            ("input", input.display().to_string()),
            ("beam", a.beam.to_string()),
            ("word_beam", word_beam.to_string()),
        ]
    };
    match (&a.suite, &a.sentences) {
        (Some(path), None) => {
            let suite = parse_suite(&read_input(path)?)?;
            let fp = run_fingerprint("surprisal-suite", &fp_entries(path));
            let report = surprisal_suite(&model, &suite, a.beam, word_beam, a.jobs)?;
            emit(&a.out, out, &report_block(&report.report(), &fp))
        }
        (None, Some(path)) => {
            let sentences = sentences_from_lines(&read_input(path)?);
            if sentences.is_empty() {
                return Err(CliError::Data("no sentences in input".to_string()));
            }
            let fp = run_fingerprint("surprisal-words", &fp_entries(path));
            let beams = crate::evalharness::map_indexed(a.jobs, &sentences, |_, words| {
                beam_search(&model, words, a.beam, word_beam)
            });
            let mut rows = Vec::new();
            let mut tail = String::new();
            for (i, result) in beams.into_iter().enumerate() {
                let beam = result?;
                for (j, s) in beam.surprisals.iter().enumerate() {
                    rows.push(SurprisalRow {
                        sentence: i + 1,
                        index: j + 1,
                        word: sentences[i][j].clone(),
                        surprisal: *s,
                    });
                }
                tail.push_str(&format!("# sent{}.end_term={:.9}\n", i + 1, beam.end_term));
                tail.push_str(&format!("# sent{}.logprob={:.9}\n", i + 1, beam.log_prob));
            }
            let body = format!("# config-fingerprint={fp}\n{}{tail}", render_surprisal_tsv(&rows));
            emit(&a.out, out, &body)
        }
        _ => Err(CliError::Usage(
            "surprisal needs exactly one of --suite or --sentences".to_string(),
        )),
    }
}

#[derive(Debug, Args)]
struct RerankArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Proposal file with `# tree k` headers grouping CoNLL blocks.
    #[arg(long)]
    proposals: Option<PathBuf>,
    /// Sentence file; proposal sets are generated as seeded rollouts.
    #[arg(long)]
    sentences: Option<PathBuf>,
    /// Rollout trees per sentence when generating proposals.
    #[arg(long, default_value_t = 20)]
    rollouts: usize,
    /// Gold CoNLL trees; adds an attachment-score report.
    #[arg(long)]
    gold: Option<PathBuf>,
    /// Skip tokens whose gold form is entirely punctuation.
    #[arg(long)]
    skip_punct: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_rerank(a: RerankArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let (model, _) = load_model(&a.checkpoint)?;
    let sets: Vec<ProposalSet> = match (&a.proposals, &a.sentences) {
        (Some(path), None) => parse_proposals(&read_input(path)?)?,
        (None, Some(path)) => {
            let sentences = sentences_from_lines(&read_input(path)?);
            let base = derived_seed(a.seed, "rerank-rollouts");
            let mut sets = Vec::with_capacity(sentences.len());
            for words in &sentences {
                let salt = fnv1a64(words.join(" ").as_bytes());
                sets.push(ProposalSet::rollouts(words, a.rollouts, base ^ salt)?);
            }
            sets
        }
        _ => {
            return Err(CliError::Usage(
                "rerank needs exactly one of --proposals or --sentences".to_string(),
            ))
        }
    };
    if sets.is_empty() {
        return Err(CliError::Data("no proposal sets in input".to_string()));
    }
    let fp = run_fingerprint(
        "rerank",
        &[
            ("model", config_fingerprint(&model)),
            ("sets", sets.len().to_string()),
            ("rollouts", a.rollouts.to_string()),
            ("seed", a.seed.to_string()),
            ("skip_punct", a.skip_punct.to_string()),
        ],
    );
    let outcomes = crate::evalharness::map_indexed(a.jobs, &sets, |_, set| rerank(&model, set));
    let mut best = Vec::with_capacity(sets.len());
    let mut notes = String::new();
    for (i, outcome) in outcomes.into_iter().enumerate() {
        let outcome = outcome?;
        notes.push_str(&format!(
            "# sent{}.best={} score={:.9}\n",
            i + 1,
            outcome.best_index + 1,
            outcome.scores[outcome.best_index]
        ));
        best.push(outcome.best_tree);
    }
    let mut body = format!("# config-fingerprint={fp}\n{notes}{}", serialize_corpus(&best));
    if let Some(path) = &a.gold {
        let gold = parse_treebank(&read_input(path)?)?;
        let score = uas_filtered(&best, &gold.trees, a.skip_punct)?;
        body.push_str(&format!("# uas={score:.6}\n"));
    }
    emit(&a.out, out, &body)
}

// ---------------------------------------------------------------------------
// enumerate / synth
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
struct EnumerateArgs {
    /// Sentence length (placeholder forms w1..wn).
    #[arg(long)]
    n: Option<usize>,
    /// Space-separated words to enumerate over instead of placeholders.
    #[arg(long)]
    words: Option<String>,
    #[arg(long, default_value_t = 100_000)]
    cap: usize,
    /// Print only the tree count.
    #[arg(long)]
    count_only: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_enumerate(a: EnumerateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let words: Vec<String> = match (&a.n, &a.words) {
        (Some(n), None) => (1..=*n).map(|i| format!("w{i}")).collect(),
        (None, Some(text)) => text.split_whitespace().map(String::from).collect(),
        _ => {
            return Err(CliError::Usage(
                "enumerate needs exactly one of --n or --words".to_string(),
            ))
        }
    };
    if words.is_empty() {
        return Err(CliError::Usage("cannot enumerate over zero words".to_string()));
    }
    let n = words.len();
    let fp = run_fingerprint(
        "enumerate",
        &[("n", n.to_string()), ("words", words.join(" ")), ("cap", a.cap.to_string())],
    );
    let heads = crate::treebank::enumerate_projective_trees(n, a.cap)?;
    let mut body = format!("# config-fingerprint={fp}\n# count={}\n", heads.len());
    if !a.count_only {
        let tokens: Vec<Token> = words.iter().map(Token::new).collect();
        let trees: Vec<DepTree> = heads
            .into_iter()
            .map(|h| DepTree::new(tokens.clone(), h))
            .collect::<Result<_, _>>()?;
        body.push_str(&serialize_corpus(&trees));
    }
    emit(&a.out, out, &body)
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Training sentences to generate.
    #[arg(long, default_value_t = 5000)]
    sentences: usize,
    /// Held-out sentences (separate derived seed).
    #[arg(long, default_value_t = 200)]
    heldout: usize,
    /// Agreement minimal pairs to generate.
    #[arg(long, default_value_t = 200)]
    pairs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for train.conllu, heldout.conllu, and pairs.tsv.
    #[arg(long)]
    out_dir: PathBuf,
}

fn cmd_synth(a: SynthArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let fp = run_fingerprint(
        "synth",
        &[
            ("sentences", a.sentences.to_string()),
            ("heldout", a.heldout.to_string()),
            ("pairs", a.pairs.to_string()),
            ("seed", a.seed.to_string()),
        ],
    );
    let train = synth::generate_trees(a.sentences, derived_seed(a.seed, "synth-train"))?;
    let heldout = synth::generate_trees(a.heldout, derived_seed(a.seed, "synth-heldout"))?;
    let pairs = synth::generate_pairs(a.pairs, derived_seed(a.seed, "synth-pairs"))?;
    let pair_rows: Vec<crate::evalharness::MinimalPair> =
        pairs.iter().map(crate::evalharness::MinimalPair::from).collect();
    write_artifact(&a.out_dir.join("train.conllu"), &serialize_corpus(&train))?;
    write_artifact(&a.out_dir.join("heldout.conllu"), &serialize_corpus(&heldout))?;
    write_artifact(
        &a.out_dir.join("pairs.tsv"),
        &format!("# config-fingerprint={fp}\n{}", render_pairs_tsv(&pair_rows)),
    )?;
    writeln!(
        out,
        "# config-fingerprint={fp}\nwrote {} train, {} held-out sentence(s), {} pair(s) to {}",
        train.len(),
        heldout.len(),
        pairs.len(),
        resolve_out(&a.out_dir).display()
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::treebank::parse_conllu;

    struct TempDir(PathBuf);

    impl TempDir {
        fn new(label: &str) -> Self {
            let path = std::env::temp_dir().join(format!(
                "dtg-cli-{label}-{}-{}",
                std::process::id(),
                std::time::SystemTime::now()
                    .duration_since(std::time::UNIX_EPOCH)
                    .unwrap()
                    .as_nanos()
            ));
            std::fs::create_dir_all(&path).unwrap();
            TempDir(path)
        }

        fn file(&self, name: &str, contents: &str) -> PathBuf {
            let path = self.0.join(name);
            std::fs::write(&path, contents).unwrap();
            path
        }

        fn path(&self, name: &str) -> PathBuf {
            self.0.join(name)
        }
    }

    impl Drop for TempDir {
        fn drop(&mut self) {
            let _ = std::fs::remove_dir_all(&self.0);
        }
    }

    fn run_cli(args: &[&str]) -> (i32, String) {
        let mut out = Vec::new();
        let argv = std::iter::once("dtg").chain(args.iter().copied());
        let code = run_from(argv, &mut out);
        (code, String::from_utf8(out).unwrap())
    }

    fn figure_block() -> &'static str {
        "1\tThere\t2\n2\tis\t0\n3\ta\t4\n4\tdifference\t2\n\n"
    }

    #[test]
    fn oracle_prints_the_expected_transition_line() {
        let dir = TempDir::new("oracle");
        let input = dir.file("in.conllu", figure_block());
        let (code, out) =
            run_cli(&["oracle", "--system", "arc-standard", "--input", input.to_str().unwrap()]);
        assert_eq!(code, 0);
        let lines: Vec<&str> = out.lines().collect();
        assert!(lines[0].starts_with("# config-fingerprint="));
        assert_eq!(lines[1], "GEN:There GEN:is LA GEN:a GEN:difference LA RA RA");
    }

    #[test]
    fn oracle_then_replay_round_trips_the_treebank() {
        let dir = TempDir::new("roundtrip");
        let input = dir.file("in.conllu", figure_block());
        let oracle_out = dir.path("oracle.txt");
        let (code, _) = run_cli(&[
            "oracle",
            "--system",
            "arc-eager",
            "--input",
            input.to_str().unwrap(),
            "--out",
            oracle_out.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        let (code, out) = run_cli(&[
            "replay",
            "--system",
            "arc-eager",
            "--input",
            oracle_out.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        let replayed = parse_conllu(&out, &ParseOptions::default()).unwrap();
        let original = parse_conllu(figure_block(), &ParseOptions::default()).unwrap();
        assert_eq!(replayed.trees, original.trees);
    }

    #[test]
    fn mask_debug_table_shows_the_expanded_rows() {
        let dir = TempDir::new("mask");
        let input = dir.file("in.conllu", figure_block());
        let (code, out) = run_cli(&[
            "mask",
            "--debug-table",
            "--input",
            input.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        // Header + fingerprint + 13 expansion rows for the 4-word example.
        assert_eq!(out.lines().filter(|l| l.contains("STACK") || l.contains("COMPOSE")).count(), 13);
        assert!(out.contains("GEN(There)"));
    }

    #[test]
    fn unknown_flags_and_missing_files_use_distinct_exit_codes() {
        let (code, _) = run_cli(&["oracle", "--system", "bogus", "--input", "x"]);
        assert_eq!(code, 1);
        let (code, _) = run_cli(&["nonsense"]);
        assert_eq!(code, 1);
        let (code, _) = run_cli(&["oracle", "--input", "/definitely/not/here.conllu"]);
        assert_eq!(code, 2);
        let (code, _) = run_cli(&["surprisal", "--checkpoint", "x"]);
        assert_eq!(code, 1);
    }

    #[test]
    fn help_exits_cleanly() {
        let (code, _) = run_cli(&["--help"]);
        assert_eq!(code, 0);
    }

    fn train_tiny(dir: &TempDir, out_name: &str, seed: u64) -> PathBuf {
        let treebank = serialize_corpus(&synth::generate_trees(30, 3).unwrap());
        let input = dir.file(&format!("{out_name}-train.conllu"), &treebank);
        let out_dir = dir.path(out_name);
        let (code, _) = run_cli(&[
            "train",
            "--treebank",
            input.to_str().unwrap(),
            "--out-dir",
            out_dir.to_str().unwrap(),
            "--set",
            "layers=1",
            "--set",
            "heads=2",
            "--set",
            "model_dim=16",
            "--set",
            "ff_dim=32",
            "--steps",
            "3",
            "--batch-size",
            "4",
            "--warmup",
            "1",
            "--seed",
            &seed.to_string(),
        ]);
        assert_eq!(code, 0);
        out_dir.join("checkpoint.dtg")
    }

    #[test]
    fn train_writes_reloadable_fingerprinted_artifacts() {
        let dir = TempDir::new("train");
        let ckpt = train_tiny(&dir, "run1", 5);
        let (model, state) = load_checkpoint(&ckpt).unwrap();
        assert_eq!(model.config.layers, 1);
        assert_eq!(model.step, 3);
        assert!(state.is_some());
        let config = std::fs::read_to_string(dir.path("run1").join("config.txt")).unwrap();
        assert!(config.contains("fingerprint="));
        let log = std::fs::read_to_string(dir.path("run1").join("train_log.tsv")).unwrap();
        assert!(log.starts_with("step\tloss\tlr\n"));

        // Identical config → byte-identical checkpoint artifact.
        let ckpt2 = train_tiny(&dir, "run2", 5);
        assert_eq!(std::fs::read(&ckpt).unwrap(), std::fs::read(&ckpt2).unwrap());
        let ckpt3 = train_tiny(&dir, "run3", 6);
        assert_ne!(std::fs::read(&ckpt).unwrap(), std::fs::read(&ckpt3).unwrap());
    }

    #[test]
    fn sample_score_ppl_pairs_and_rerank_run_end_to_end() {
        let dir = TempDir::new("e2e");
        let ckpt = train_tiny(&dir, "model", 1);
        let ckpt = ckpt.to_str().unwrap();

        let (code, out) = run_cli(&[
            "sample",
            "--checkpoint",
            ckpt,
            "--samples",
            "3",
            "--max-words",
            "6",
            "--seed",
            "9",
        ]);
        assert_eq!(code, 0);
        assert_eq!(out.lines().filter(|l| l.starts_with("GEN:")).count(), 3);

        let scored = dir.file("score.conllu", figure_block());
        let (code, out) = run_cli(&["score", "--checkpoint", ckpt, "--input", scored.to_str().unwrap()]);
        assert_eq!(code, 0);
        assert!(out.lines().any(|l| l.ends_with("There is a difference")));

        let sents = dir.file("sents.txt", "the cat sleeps today\nthe dogs sleep often\n");
        let (code, out) = run_cli(&[
            "ppl",
            "--checkpoint",
            ckpt,
            "--input",
            sents.to_str().unwrap(),
            "--proposals",
            "rollouts",
            "--samples",
            "4",
        ]);
        assert_eq!(code, 0);
        assert!(out.contains("metric=perplexity"));
        assert!(out.contains("value="));

        let pairs = dir.file(
            "pairs.tsv",
            "agr\tthe cat sleeps today\tthe cat sleep today\n",
        );
        let (code, out) = run_cli(&[
            "pairs",
            "--checkpoint",
            ckpt,
            "--input",
            pairs.to_str().unwrap(),
            "--proposals",
            "rollouts",
            "--samples",
            "4",
        ]);
        assert_eq!(code, 0);
        assert!(out.contains("minimal-pair-accuracy"));

        let (code, out) = run_cli(&[
            "rerank",
            "--checkpoint",
            ckpt,
            "--sentences",
            sents.to_str().unwrap(),
            "--rollouts",
            "5",
        ]);
        assert_eq!(code, 0);
        assert!(out.contains("# sent1.best="));
    }

    #[test]
    fn surprisal_modes_emit_rows_or_reports() {
        let dir = TempDir::new("surprisal");
        let ckpt = train_tiny(&dir, "model", 2);
        let ckpt = ckpt.to_str().unwrap();
        let sents = dir.file("sents.txt", "the cat sleeps today\n");
        let (code, out) = run_cli(&[
            "surprisal",
            "--checkpoint",
            ckpt,
            "--sentences",
            sents.to_str().unwrap(),
            "--beam",
            "8",
        ]);
        assert_eq!(code, 0);
        assert!(out.contains("sentence\tindex\tword\tsurprisal"));
        assert!(out.contains("# sent1.end_term="));

        let suite = dir.file(
            "suite.txt",
            "sent 1 the cat sleeps today\nsent 2 the cat sleep today\ntest agr s(2,3) >= s(2,3)\n",
        );
        let (code, out) = run_cli(&[
            "surprisal",
            "--checkpoint",
            ckpt,
            "--suite",
            suite.to_str().unwrap(),
            "--beam",
            "8",
        ]);
        assert_eq!(code, 0);
        assert!(out.contains("surprisal-suite-macro-accuracy"));
        assert!(out.contains("value=1"));
    }

    #[test]
    fn enumerate_counts_match_the_closed_form() {
        let (code, out) = run_cli(&["enumerate", "--n", "3", "--count-only"]);
        assert_eq!(code, 0);
        assert!(out.contains("# count=7"));
        let (code, out) = run_cli(&["enumerate", "--words", "a b"]);
        assert_eq!(code, 0);
        assert!(out.contains("# count=2"));
        let trees = parse_conllu(&out, &ParseOptions::default()).unwrap().trees;
        assert_eq!(trees.len(), 2);
        assert!(trees.iter().all(|t| t.form(1) == "a" && t.form(2) == "b"));
        let (code, _) = run_cli(&["enumerate"]);
        assert_eq!(code, 1);
    }

    #[test]
    fn synth_writes_the_corpus_bundle() {
        let dir = TempDir::new("synth");
        let out_dir = dir.path("data");
        let (code, _) = run_cli(&[
            "synth",
            "--sentences",
            "20",
            "--heldout",
            "5",
            "--pairs",
            "6",
            "--seed",
            "4",
            "--out-dir",
            out_dir.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        let train = std::fs::read_to_string(out_dir.join("train.conllu")).unwrap();
        assert_eq!(parse_conllu(&train, &ParseOptions::default()).unwrap().trees.len(), 20);
        let pairs = std::fs::read_to_string(out_dir.join("pairs.tsv")).unwrap();
        assert_eq!(parse_pairs_tsv(&pairs).unwrap().len(), 6);
        assert!(std::fs::read_to_string(out_dir.join("heldout.conllu")).is_ok());
    }

    #[test]
    fn output_directory_override_redirects_relative_paths() {
        let dir = TempDir::new("envdir");
        // Env mutation: run single-threaded against a unique variable use.
        std::env::set_var(OUT_DIR_ENV, dir.0.to_str().unwrap());
        let (code, _) = run_cli(&[
            "synth",
            "--sentences",
            "3",
            "--heldout",
            "1",
            "--pairs",
            "2",
            "--out-dir",
            "nested/data",
        ]);
        std::env::remove_var(OUT_DIR_ENV);
        assert_eq!(code, 0);
        assert!(dir.0.join("nested/data/train.conllu").exists());
    }
}
