//! Flat `key = value` run configurations. Every [`RunConfig`] field is a key;
//! missing keys keep their desk-scale default.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::ModelKind;
use crate::training::{DistortionTarget, RunConfig};

fn list<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "none".to_string(), T::to_string)
}

/// Renders every field, one per line, in declaration order.
pub fn to_text(c: &RunConfig) -> String {
    let scales = c
        .lr_scales
        .iter()
        .map(|(p, f)| format!("{p}:{f}"))
        .collect::<Vec<_>>()
        .join(",");
    let pairs: Vec<(&str, String)> = vec![
        ("height", c.height.to_string()),
        ("width", c.width.to_string()),
        ("block", c.block.to_string()),
        ("n_b", c.n_b.to_string()),
        ("n_max", c.n_max.to_string()),
        ("gamma", c.gamma.to_string()),
        ("learning_rate", c.learning_rate.to_string()),
        ("batch_size", c.batch_size.to_string()),
        ("lr_scales", scales),
        ("max_epochs", c.max_epochs.to_string()),
        ("warmup_epochs", c.warmup_epochs.to_string()),
        ("patience", c.patience.to_string()),
        ("seed", c.seed.to_string()),
        ("target_n_avg", opt(&c.target_n_avg)),
        ("fen_width", c.fen_width.to_string()),
        ("anet_width", c.anet_width.to_string()),
        ("dnet_factors", list(&c.dnet_factors)),
        ("dnet_widths", list(&c.dnet_widths)),
        ("distortion", c.distortion.name().to_string()),
        ("model", c.model.name().to_string()),
        ("fix_n_avg", opt(&c.fix_n_avg)),
        ("navg_tolerance", c.navg_tolerance.to_string()),
        ("gamma_min", c.gamma_min.to_string()),
        ("gamma_max", c.gamma_max.to_string()),
        ("probe_epochs", c.probe_epochs.to_string()),
        ("max_probes", c.max_probes.to_string()),
        ("monotone_tolerance", c.monotone_tolerance.to_string()),
    ];
    pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

fn value<T: std::str::FromStr>(v: &str, pos: usize, key: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Parse {
        position: pos,
        message: format!("bad value {v:?} for {key}"),
    })
}

fn optional<T: std::str::FromStr>(v: &str, pos: usize, key: &str) -> Result<Option<T>> {
    if v == "none" || v.is_empty() {
        Ok(None)
    } else {
        value(v, pos, key).map(Some)
    }
}

fn usize_list(v: &str, pos: usize, key: &str) -> Result<Vec<usize>> {
    v.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| value(s.trim(), pos, key))
        .collect()
}

/// Parses a configuration on top of [`RunConfig::desk`]. `#` starts a comment.
pub fn parse(text: &str) -> Result<RunConfig> {
    let mut c = RunConfig::desk();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let pos = offset;
        offset += line.len();
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (key, v) = body.split_once('=').ok_or_else(|| Error::Parse {
            position: pos,
            message: format!("expected key = value, got {body:?}"),
        })?;
        let (key, v) = (key.trim(), v.trim());
        match key {
            "height" => c.height = value(v, pos, key)?,
            "width" => c.width = value(v, pos, key)?,
            "block" => c.block = value(v, pos, key)?,
            "n_b" => c.n_b = value(v, pos, key)?,
            "n_max" => c.n_max = value(v, pos, key)?,
            "gamma" => c.gamma = value(v, pos, key)?,
            "learning_rate" => c.learning_rate = value(v, pos, key)?,
            "batch_size" => c.batch_size = value(v, pos, key)?,
            "lr_scales" => {
                c.lr_scales = v
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| {
                        let (p, f) = s.trim().rsplit_once(':').ok_or_else(|| Error::Parse {
                            position: pos,
                            message: format!("expected prefix:factor, got {s:?}"),
                        })?;
                        Ok((p.to_string(), value(f, pos, key)?))
                    })
                    .collect::<Result<_>>()?
            }
            "max_epochs" => c.max_epochs = value(v, pos, key)?,
            "warmup_epochs" => c.warmup_epochs = value(v, pos, key)?,
            "patience" => c.patience = value(v, pos, key)?,
            "seed" => c.seed = value(v, pos, key)?,
            "target_n_avg" => c.target_n_avg = optional(v, pos, key)?,
            "fen_width" => c.fen_width = value(v, pos, key)?,
            "anet_width" => c.anet_width = value(v, pos, key)?,
            "dnet_factors" => c.dnet_factors = usize_list(v, pos, key)?,
            "dnet_widths" => c.dnet_widths = usize_list(v, pos, key)?,
            "distortion" => {
                c.distortion = DistortionTarget::parse(v).ok_or_else(|| Error::Parse {
                    position: pos,
                    message: format!("unknown distortion target {v:?}"),
                })?
            }
            "model" => {
                c.model = ModelKind::parse(v).ok_or_else(|| Error::Parse {
                    position: pos,
                    message: format!("unknown model {v:?}"),
                })?
            }
            "fix_n_avg" => c.fix_n_avg = optional(v, pos, key)?,
            "navg_tolerance" => c.navg_tolerance = value(v, pos, key)?,
            "gamma_min" => c.gamma_min = value(v, pos, key)?,
            "gamma_max" => c.gamma_max = value(v, pos, key)?,
            "probe_epochs" => c.probe_epochs = value(v, pos, key)?,
            "max_probes" => c.max_probes = value(v, pos, key)?,
            "monotone_tolerance" => c.monotone_tolerance = value(v, pos, key)?,
            _ => {
                return Err(Error::Parse {
                    position: pos,
                    message: format!("unknown key {key:?}"),
                })
            }
        }
    }
    Ok(c)
}

pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
    parse(&std::fs::read_to_string(path)?)
}

pub fn save(path: impl AsRef<Path>, config: &RunConfig) -> Result<()> {
    std::fs::write(path, to_text(config))?;
    Ok(())
}
