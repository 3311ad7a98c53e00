//! Checkpoint container: a single binary file holding the model
//! configuration, the vocabulary, every parameter tensor, and (when
//! training is resumable) optimizer moments.
//!
//! Layout, all integers little-endian:
//! magic `DTGCKPT1`, config text block, vocabulary text block, the
//! step counter, named tensor records (name, shape, f32 data), and
//! named optimizer records. Tensors are stored exactly as held in
//! memory, so save → load → save is byte-identical.

use super::optim::OptState;
use super::{ArcRepr, Model, ModelConfig, ModelError};
use crate::transitions::System;
use crate::treebank::Vocab;
use std::path::Path;

const MAGIC: &[u8; 8] = b"DTGCKPT1";

/// Renders a configuration as `key=value` lines.
pub fn render_config_text(config: &ModelConfig) -> String {
    format!(
        "system={}\nlayers={}\nheads={}\nmodel_dim={}\nff_dim={}\nvocab_size={}\nrel_clip_k={}\narc_repr={}\ndropout={}\nseed={}\n",
        config.system.name(),
        config.layers,
        config.heads,
        config.model_dim,
        config.ff_dim,
        config.vocab_size,
        config.rel_clip_k,
        config.arc_repr.name(),
        config.dropout,
        config.seed,
    )
}

/// Parses `key=value` lines into a configuration. Blank lines and `#`
/// comments are ignored; unknown keys are errors so typos surface.
pub fn parse_config_text(text: &str) -> Result<ModelConfig, ModelError> {
    let mut config = ModelConfig::desk_default(System::Standard, crate::treebank::RESERVED);
    let mut saw_vocab = false;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| ModelError::BadCheckpoint {
            detail: format!("config line {}: expected key=value, got {line:?}", lineno + 1),
        })?;
        apply_config_entry(&mut config, key.trim(), value.trim()).map_err(|detail| {
            ModelError::BadCheckpoint { detail: format!("config line {}: {detail}", lineno + 1) }
        })?;
        if key.trim() == "vocab_size" {
            saw_vocab = true;
        }
    }
    if !saw_vocab {
        return Err(ModelError::BadCheckpoint { detail: "config is missing vocab_size".into() });
    }
    Ok(config)
}

/// Applies one `key=value` override to a configuration. Shared by the
/// config parser and command-line `--config` flags.
pub fn apply_config_entry(
    config: &mut ModelConfig,
    key: &str,
    value: &str,
) -> Result<(), String> {
    let parse_usize =
        |v: &str| v.parse::<usize>().map_err(|_| format!("{key}: not a count: {v:?}"));
    match key {
        "system" => {
            config.system =
                System::parse(value).ok_or_else(|| format!("unknown system {value:?}"))?;
        }
        "layers" => config.layers = parse_usize(value)?,
        "heads" => config.heads = parse_usize(value)?,
        "model_dim" => config.model_dim = parse_usize(value)?,
        "ff_dim" => config.ff_dim = parse_usize(value)?,
        "vocab_size" => config.vocab_size = parse_usize(value)?,
        "rel_clip_k" => config.rel_clip_k = parse_usize(value)?,
        "arc_repr" => {
            config.arc_repr = ArcRepr::parse(value)
                .ok_or_else(|| format!("unknown arc representation {value:?}"))?;
        }
        "dropout" => {
            config.dropout =
                value.parse::<f64>().map_err(|_| format!("dropout: not a number: {value:?}"))?;
        }
        "seed" => {
            config.seed =
                value.parse::<u64>().map_err(|_| format!("seed: not an integer: {value:?}"))?;
        }
        other => return Err(format!("unknown config key {other:?}")),
    }
    Ok(())
}

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_block(out: &mut Vec<u8>, bytes: &[u8]) {
    push_u32(out, bytes.len() as u32);
    out.extend_from_slice(bytes);
}

fn push_f32s(out: &mut Vec<u8>, data: &[f32]) {
    out.reserve(data.len() * 4);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        if self.pos + n > self.bytes.len() {
            return Err(ModelError::BadCheckpoint {
                detail: format!("truncated at byte {} (wanted {n} more)", self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn block(&mut self) -> Result<&'a [u8], ModelError> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    fn text_block(&mut self) -> Result<String, ModelError> {
        let raw = self.block()?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| ModelError::BadCheckpoint { detail: "text block is not UTF-8".into() })
    }

    fn f32s(&mut self, count: usize) -> Result<Vec<f32>, ModelError> {
        let raw = self.take(count * 4)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

/// Serializes a model (and optionally optimizer state) to `path`.
pub fn save_checkpoint(
    path: impl AsRef<Path>,
    model: &Model,
    opt: Option<&OptState>,
) -> Result<(), ModelError> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    push_block(&mut out, render_config_text(&model.config).as_bytes());
    push_block(&mut out, model.vocab.to_text().as_bytes());
    push_u64(&mut out, model.step);
    let tensors = model.params.tensors();
    push_u32(&mut out, tensors.len() as u32);
    for (name, shape, data) in &tensors {
        push_block(&mut out, name.as_bytes());
        out.push(shape.len() as u8);
        for &dim in shape {
            push_u32(&mut out, dim as u32);
        }
        push_f32s(&mut out, data);
    }
    match opt {
        None => push_u32(&mut out, 0),
        Some(state) => {
            push_u32(&mut out, (tensors.len() * 2) as u32);
            for (prefix, moments) in [("adam.m.", &state.m), ("adam.v.", &state.v)] {
                for ((name, _, _), data) in tensors.iter().zip(moments) {
                    push_block(&mut out, format!("{prefix}{name}").as_bytes());
                    push_u64(&mut out, data.len() as u64);
                    push_f32s(&mut out, data);
                }
            }
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads a checkpoint back into a model and optional optimizer state.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Model, Option<OptState>), ModelError> {
    let bytes = std::fs::read(path)?;
    let mut r = Reader { bytes: &bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(ModelError::BadCheckpoint { detail: "bad magic; not a checkpoint".into() });
    }
    let config = parse_config_text(&r.text_block()?)?;
    let vocab = Vocab::from_text(&r.text_block()?);
    let step = r.u64()?;
    let mut model = Model::new(config, vocab)?;
    model.step = step;
    let n_tensors = r.u32()? as usize;
    let expected: Vec<(String, Vec<usize>)> =
        model.params.tensors().into_iter().map(|(n, s, _)| (n, s)).collect();
    if n_tensors != expected.len() {
        return Err(ModelError::BadCheckpoint {
            detail: format!("{} tensors stored but the model has {}", n_tensors, expected.len()),
        });
    }
    for (t, (want_name, want_shape)) in expected.iter().enumerate() {
        let name = String::from_utf8(r.block()?.to_vec())
            .map_err(|_| ModelError::BadCheckpoint { detail: "tensor name not UTF-8".into() })?;
        if &name != want_name {
            return Err(ModelError::BadCheckpoint {
                detail: format!("tensor {t}: stored {name:?}, expected {want_name:?}"),
            });
        }
        let ndim = r.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        if &shape != want_shape {
            return Err(ModelError::BadCheckpoint {
                detail: format!("tensor {name}: stored shape {shape:?}, expected {want_shape:?}"),
            });
        }
        let count: usize = shape.iter().product();
        let data = r.f32s(count)?;
        model.params.tensors_mut()[t].1.copy_from_slice(&data);
    }
    let n_opt = r.u32()? as usize;
    let opt = if n_opt == 0 {
        None
    } else {
        if n_opt != expected.len() * 2 {
            return Err(ModelError::BadCheckpoint {
                detail: format!(
                    "{} optimizer records stored but {} expected",
                    n_opt,
                    expected.len() * 2
                ),
            });
        }
        let mut state = OptState::zeros_like(&model);
        for (prefix, moments) in
            [("adam.m.", &mut state.m), ("adam.v.", &mut state.v)]
        {
            for (t, (want_name, _)) in expected.iter().enumerate() {
                let name = String::from_utf8(r.block()?.to_vec()).map_err(|_| {
                    ModelError::BadCheckpoint { detail: "optimizer name not UTF-8".into() }
                })?;
                let want = format!("{prefix}{want_name}");
                if name != want {
                    return Err(ModelError::BadCheckpoint {
                        detail: format!("optimizer record: stored {name:?}, expected {want:?}"),
                    });
                }
                let len = r.u64()? as usize;
                if len != moments[t].len() {
                    return Err(ModelError::BadCheckpoint {
                        detail: format!(
                            "optimizer record {name}: {len} values, expected {}",
                            moments[t].len()
                        ),
                    });
                }
                moments[t] = r.f32s(len)?;
            }
        }
        Some(state)
    };
    if r.pos != bytes.len() {
        return Err(ModelError::BadCheckpoint {
            detail: format!("{} trailing bytes after the last record", bytes.len() - r.pos),
        });
    }
    Ok((model, opt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::optim::{toy_examples, train, TrainSchedule};
    use crate::model::ModelConfig;

    fn trained_model() -> (Model, OptState) {
        let (corpus, examples) = toy_examples(20, 11).unwrap();
        let mut config = ModelConfig::tiny(System::Standard, corpus.vocab.size());
        config.seed = 3;
        let mut model = Model::new(config, corpus.vocab).unwrap();
        let schedule =
            TrainSchedule { steps: 3, batch_size: 4, warmup: 1, ..TrainSchedule::default() };
        let (_, opt) = train(&mut model, &examples, &schedule, None).unwrap();
        (model, opt)
    }

    #[test]
    fn config_text_round_trips_every_field() {
        let mut config = ModelConfig::desk_default(System::Eager, 321);
        config.arc_repr = ArcRepr::ArcOnly;
        config.dropout = 0.1;
        config.seed = 99;
        let text = render_config_text(&config);
        let back = parse_config_text(&text).unwrap();
        assert_eq!(back, config);
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let err = parse_config_text("vocab_size=10\nwat=1\n").unwrap_err();
        assert!(err.to_string().contains("unknown config key"), "{err}");
    }

    #[test]
    fn checkpoints_round_trip_bit_for_bit() {
        let (model, opt) = trained_model();
        let dir = std::env::temp_dir().join(format!("ckpt-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.ckpt");
        save_checkpoint(&path, &model, Some(&opt)).unwrap();
        let first = std::fs::read(&path).unwrap();
        let (loaded, loaded_opt) = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.params, model.params);
        assert_eq!(loaded.config, model.config);
        assert_eq!(loaded.vocab, model.vocab);
        assert_eq!(loaded.step, model.step);
        assert_eq!(loaded_opt.as_ref(), Some(&opt));
        let again = dir.join("again.ckpt");
        save_checkpoint(&again, &loaded, loaded_opt.as_ref()).unwrap();
        assert_eq!(std::fs::read(&again).unwrap(), first);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn checkpoints_without_optimizer_state_load_as_none() {
        let (model, _) = trained_model();
        let dir = std::env::temp_dir().join(format!("ckpt-noopt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.ckpt");
        save_checkpoint(&path, &model, None).unwrap();
        let (loaded, opt) = load_checkpoint(&path).unwrap();
        assert!(opt.is_none());
        assert_eq!(loaded.params, model.params);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn corrupted_files_are_reported_not_misread() {
        let (model, _) = trained_model();
        let dir = std::env::temp_dir().join(format!("ckpt-corrupt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.ckpt");
        save_checkpoint(&path, &model, None).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        let bad_magic = dir.join("magic.ckpt");
        std::fs::write(&bad_magic, &bytes).unwrap();
        assert!(matches!(
            load_checkpoint(&bad_magic),
            Err(ModelError::BadCheckpoint { .. })
        ));
        let mut clipped = std::fs::read(&path).unwrap();
        clipped.truncate(clipped.len() / 2);
        let truncated = dir.join("short.ckpt");
        std::fs::write(&truncated, &clipped).unwrap();
        assert!(matches!(
            load_checkpoint(&truncated),
            Err(ModelError::BadCheckpoint { .. })
        ));
        std::fs::remove_dir_all(&dir).ok();
    }
}
