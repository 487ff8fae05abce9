//! Text files holding the ragged per-block measurements of one image.
//!
//! ```text
//! SEMBCS-MEASUREMENTS 1
//! geometry <H> <W> <B>
//! n_b <n_b>
//! n_max <n_max>
//! <mask bits> <n_b base values> <n_s stage-two values>     one line per block
//! ```
//!
//! Blocks are listed row-major; values are written in shortest round-trip
//! form, so reading a file back is exact.

use std::fmt::Write as _;
use std::path::Path;

use crate::blocks::{BlockGeometry, BlockMeasurements, MeasurementSet};
use crate::error::{Error, Result};

pub const HEADER: &str = "SEMBCS-MEASUREMENTS 1";

pub fn to_text(set: &MeasurementSet) -> Result<String> {
    set.validate()?;
    let g = set.geometry;
    let mut out = format!(
        "{HEADER}\ngeometry {} {} {}\nn_b {}\nn_max {}\n",
        g.height(),
        g.width(),
        g.block(),
        set.n_b,
        set.n_max
    );
    for b in &set.blocks {
        out.extend(b.mask.iter().map(|&m| if m { '1' } else { '0' }));
        for v in b.base.iter().chain(&b.selected) {
            write!(out, " {v:e}").expect("write to String");
        }
        out.push('\n');
    }
    Ok(out)
}

struct Lines<'a> {
    iter: std::str::SplitInclusive<'a, char>,
    pos: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        let line = self.iter.next().ok_or_else(|| Error::Parse {
            position: self.pos,
            message: format!("unexpected end of file, expected {what}"),
        })?;
        let at = self.pos;
        self.pos += line.len();
        Ok((at, line.trim_end_matches(['\n', '\r'])))
    }
}

fn bad(position: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        position,
        message: message.into(),
    }
}

fn fields<const N: usize>(line: (usize, &str), key: &str) -> Result<[usize; N]> {
    let (at, text) = line;
    let mut parts = text.split_whitespace();
    if parts.next() != Some(key) {
        return Err(bad(at, format!("expected `{key}` line")));
    }
    let vals: Vec<usize> = parts
        .map(|p| p.parse().map_err(|_| bad(at, format!("bad integer {p:?}"))))
        .collect::<Result<_>>()?;
    vals.try_into()
        .map_err(|_| bad(at, format!("`{key}` takes {N} values")))
}

pub fn parse(text: &str) -> Result<MeasurementSet> {
    let mut lines = Lines {
        iter: text.split_inclusive('\n'),
        pos: 0,
    };
    let (at, head) = lines.next("header")?;
    if head.trim() != HEADER {
        return Err(bad(at, format!("expected header {HEADER:?}")));
    }
    let [h, w, b] = fields::<3>(lines.next("geometry")?, "geometry")?;
    let geometry = BlockGeometry::new(h, w, b)?;
    let [n_b] = fields::<1>(lines.next("n_b")?, "n_b")?;
    let [n_max] = fields::<1>(lines.next("n_max")?, "n_max")?;
    let mut blocks = Vec::with_capacity(geometry.num_blocks());
    for k in 0..geometry.num_blocks() {
        let (at, line) = lines.next(&format!("block {k}"))?;
        let mut parts = line.split_whitespace();
        let bits = parts.next().ok_or_else(|| bad(at, "empty block line"))?;
        if bits.len() != n_max || !bits.bytes().all(|c| c == b'0' || c == b'1') {
            return Err(bad(at, format!("block {k}: mask must be {n_max} bits")));
        }
        let mask: Vec<bool> = bits.bytes().map(|c| c == b'1').collect();
        let values: Vec<f64> = parts
            .map(|p| p.parse().map_err(|_| bad(at, format!("bad number {p:?}"))))
            .collect::<Result<_>>()?;
        let n_s = mask.iter().filter(|&&m| m).count();
        if values.len() != n_b + n_s {
            return Err(bad(
                at,
                format!(
                    "block {k}: expected {} values, found {}",
                    n_b + n_s,
                    values.len()
                ),
            ));
        }
        blocks.push(BlockMeasurements {
            mask,
            base: values[..n_b].to_vec(),
            selected: values[n_b..].to_vec(),
        });
    }
    for line in lines.iter.by_ref() {
        if !line.trim().is_empty() {
            return Err(bad(lines.pos, "unexpected data after the last block"));
        }
        lines.pos += line.len();
    }
    let set = MeasurementSet {
        geometry,
        n_b,
        n_max,
        blocks,
    };
    set.validate()?;
    Ok(set)
}

pub fn save(path: impl AsRef<Path>, set: &MeasurementSet) -> Result<()> {
    std::fs::write(path, to_text(set)?)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<MeasurementSet> {
    parse(&std::fs::read_to_string(path)?)
}
