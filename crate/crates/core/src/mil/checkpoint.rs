//! Text checkpoint container.
//!
//! ```text
//! wsi-mil-checkpoint 1
//! arch <amil|admil|hybrid>
//! embed_dim <M>
//! attn_dim <L>
//! head_hidden <w1,w2,...|->
//! param <rows> <cols>
//! <rows lines of cols space-separated f64 bit patterns, 16 hex digits each>
//! ...
//! ```
//!
//! Parameters appear in [`MilModel::params`] order. Values are stored as raw
//! IEEE-754 bits so a round trip is exact. Optimizer state is not saved.

use std::fmt::Write as _;
use std::path::Path;

use crate::diff::Tensor2D;
use crate::error::{Error, Result};

use super::{Architecture, MilModel, ModelDims};

const MAGIC: &str = "wsi-mil-checkpoint 1";

pub fn checkpoint_to_string(model: &MilModel) -> String {
    let mut s = String::new();
    let hidden = if model.dims.head_hidden.is_empty() {
        "-".to_string()
    } else {
        model
            .dims
            .head_hidden
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join(",")
    };
    let _ = writeln!(s, "{MAGIC}");
    let _ = writeln!(s, "arch {}", model.arch);
    let _ = writeln!(s, "embed_dim {}", model.dims.embed_dim);
    let _ = writeln!(s, "attn_dim {}", model.dims.attn_dim);
    let _ = writeln!(s, "head_hidden {hidden}");
    for p in model.params() {
        let (r, c) = p.shape();
        let _ = writeln!(s, "param {r} {c}");
        for i in 0..r {
            let row: Vec<String> = p.value.row(i).iter().map(|v| format!("{:016x}", v.to_bits())).collect();
            let _ = writeln!(s, "{}", row.join(" "));
        }
    }
    s
}

fn field<'a>(lines: &mut impl Iterator<Item = &'a str>, key: &str) -> Result<&'a str> {
    let line = lines
        .next()
        .ok_or_else(|| Error::Format(format!("checkpoint ends before `{key}`")))?;
    line.strip_prefix(key)
        .and_then(|rest| rest.strip_prefix(' '))
        .ok_or_else(|| Error::Format(format!("expected `{key}`, found `{line}`")))
}

fn parse_num(s: &str) -> Result<usize> {
    s.trim()
        .parse()
        .map_err(|_| Error::Format(format!("bad integer `{s}`")))
}

pub fn checkpoint_from_str(text: &str) -> Result<MilModel> {
    let mut lines = text.lines();
    if lines.next() != Some(MAGIC) {
        return Err(Error::Format("not a version 1 checkpoint".into()));
    }
    let arch: Architecture = field(&mut lines, "arch")?
        .parse()
        .map_err(|_| Error::Format("unknown architecture".into()))?;
    let embed_dim = parse_num(field(&mut lines, "embed_dim")?)?;
    let attn_dim = parse_num(field(&mut lines, "attn_dim")?)?;
    let hidden = field(&mut lines, "head_hidden")?;
    let head_hidden = if hidden == "-" {
        Vec::new()
    } else {
        hidden.split(',').map(parse_num).collect::<Result<_>>()?
    };
    let dims = ModelDims {
        embed_dim,
        attn_dim,
        head_hidden,
    };
    let mut model = MilModel::new(arch, dims, 0).map_err(|e| Error::Format(e.to_string()))?;

    for param in model.params_mut() {
        let header = field(&mut lines, "param")?;
        let mut parts = header.split_whitespace();
        let r = parse_num(parts.next().unwrap_or(""))?;
        let c = parse_num(parts.next().unwrap_or(""))?;
        if (r, c) != param.shape() {
            return Err(Error::Format(format!(
                "parameter shape {r}x{c}, architecture expects {:?}",
                param.shape()
            )));
        }
        let mut values = Vec::with_capacity(r * c);
        for _ in 0..r {
            let line = lines
                .next()
                .ok_or_else(|| Error::Format("truncated parameter block".into()))?;
            for tok in line.split_whitespace() {
                let bits = u64::from_str_radix(tok, 16).map_err(|_| Error::Format(format!("bad value `{tok}`")))?;
                values.push(f64::from_bits(bits));
            }
        }
        *param = crate::diff::Param::new(Tensor2D::from_vec(r, c, values).map_err(|e| Error::Format(e.to_string()))?);
    }
    if lines.any(|l| !l.trim().is_empty()) {
        return Err(Error::Format("trailing data after the last parameter".into()));
    }
    Ok(model)
}

pub fn write_checkpoint(path: &Path, model: &MilModel) -> Result<()> {
    std::fs::write(path, checkpoint_to_string(model)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<MilModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_str(&text)
}
