//! SEGGRID binary grid files.
//!
//! Layout (little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "SGRD"
//! 4       1     kind: 0 = label, 1 = prob, 2 = embed, 3 = features
//! 5       4     height (u32)
//! 9       4     width (u32)
//! 13      4     channels (u32; 1 for label grids)
//! 17      ...   payload, row-major, channels last:
//!               label          -> height*width u16
//!               prob/embed/feat -> height*width*channels f32
//! ```
//!
//! Label files do not carry the class count; readers pass it in, or it is
//! taken as `max label + 1`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{EmbedGrid, FeatureMap, LabelGrid, ProbGrid};

pub const MAGIC: &[u8; 4] = b"SGRD";
const HEADER_LEN: usize = 17;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum GridKind {
    Label = 0,
    Prob = 1,
    Embed = 2,
    Features = 3,
}

impl TryFrom<u8> for GridKind {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            0 => Ok(GridKind::Label),
            1 => Ok(GridKind::Prob),
            2 => Ok(GridKind::Embed),
            3 => Ok(GridKind::Features),
            other => Err(Error::Format(format!("unknown grid kind {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Grid {
    Label(LabelGrid),
    Prob(ProbGrid),
    Embed(EmbedGrid),
    Features(FeatureMap),
}

impl Grid {
    pub fn kind(&self) -> GridKind {
        match self {
            Grid::Label(_) => GridKind::Label,
            Grid::Prob(_) => GridKind::Prob,
            Grid::Embed(_) => GridKind::Embed,
            Grid::Features(_) => GridKind::Features,
        }
    }

    pub fn into_label(self) -> Result<LabelGrid> {
        match self {
            Grid::Label(g) => Ok(g),
            other => Err(Error::Format(format!(
                "expected a label grid, found {:?}",
                other.kind()
            ))),
        }
    }

    pub fn into_prob(self) -> Result<ProbGrid> {
        match self {
            Grid::Prob(g) => Ok(g),
            other => Err(Error::Format(format!(
                "expected a probability grid, found {:?}",
                other.kind()
            ))),
        }
    }

    pub fn into_features(self) -> Result<FeatureMap> {
        match self {
            Grid::Features(g) => Ok(g),
            other => Err(Error::Format(format!(
                "expected a feature grid, found {:?}",
                other.kind()
            ))),
        }
    }
}

impl From<LabelGrid> for Grid {
    fn from(g: LabelGrid) -> Self {
        Grid::Label(g)
    }
}

impl From<ProbGrid> for Grid {
    fn from(g: ProbGrid) -> Self {
        Grid::Prob(g)
    }
}

impl From<EmbedGrid> for Grid {
    fn from(g: EmbedGrid) -> Self {
        Grid::Embed(g)
    }
}

impl From<FeatureMap> for Grid {
    fn from(g: FeatureMap) -> Self {
        Grid::Features(g)
    }
}

fn header(out: &mut Vec<u8>, kind: GridKind, h: usize, w: usize, ch: usize) {
    out.extend_from_slice(MAGIC);
    out.push(kind as u8);
    for v in [h, w, ch] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
}

fn push_f32(out: &mut Vec<u8>, values: &[f64]) {
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub fn encode(grid: &Grid) -> Vec<u8> {
    let mut out = Vec::new();
    match grid {
        Grid::Label(g) => {
            header(&mut out, GridKind::Label, g.height(), g.width(), 1);
            out.reserve(g.len() * 2);
            for &l in g.labels() {
                out.extend_from_slice(&l.to_le_bytes());
            }
        }
        Grid::Prob(g) => {
            header(
                &mut out,
                GridKind::Prob,
                g.height(),
                g.width(),
                g.num_classes(),
            );
            push_f32(&mut out, g.probs());
        }
        Grid::Embed(g) => {
            header(&mut out, GridKind::Embed, g.height(), g.width(), g.dim());
            push_f32(&mut out, g.vectors());
        }
        Grid::Features(g) => {
            header(
                &mut out,
                GridKind::Features,
                g.height(),
                g.width(),
                g.channels(),
            );
            push_f32(&mut out, g.values());
        }
    }
    out
}

fn read_u32(bytes: &[u8], at: usize) -> usize {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize
}

/// Parses a SEGGRID buffer. `num_classes` applies to label grids only.
pub fn decode(bytes: &[u8], num_classes: Option<usize>) -> Result<Grid> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "{} bytes is shorter than the header",
            bytes.len()
        )));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let kind = GridKind::try_from(bytes[4])?;
    let (h, w, ch) = (read_u32(bytes, 5), read_u32(bytes, 9), read_u32(bytes, 13));
    let payload = &bytes[HEADER_LEN..];
    let elem = if kind == GridKind::Label { 2 } else { 4 };
    if kind == GridKind::Label && ch != 1 {
        return Err(Error::Format(format!("label grid with {ch} channels")));
    }
    let expected = h
        .checked_mul(w)
        .and_then(|n| n.checked_mul(ch))
        .and_then(|n| n.checked_mul(elem))
        .ok_or_else(|| Error::Format("dimensions overflow".into()))?;
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "payload is {} bytes, header {h}x{w}x{ch} implies {expected}",
            payload.len()
        )));
    }
    match kind {
        GridKind::Label => {
            let labels: Vec<u16> = payload
                .chunks_exact(2)
                .map(|b| u16::from_le_bytes([b[0], b[1]]))
                .collect();
            let c = match num_classes {
                Some(c) => c,
                None => labels.iter().copied().max().map_or(1, |m| m as usize + 1),
            };
            Ok(Grid::Label(LabelGrid::new(h, w, c, labels)?))
        }
        _ => {
            let values: Vec<f64> = payload
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect();
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Format("non-finite payload value".into()));
            }
            // f32 storage: allow rounding of each entry when re-checking invariants.
            let tol = (ch as f64 * f32::EPSILON as f64).max(1e-6);
            Ok(match kind {
                GridKind::Prob => Grid::Prob(ProbGrid::with_tolerance(h, w, ch, values, tol)?),
                GridKind::Embed => Grid::Embed(EmbedGrid::from_unit(h, w, ch, values, tol)?),
                GridKind::Features => Grid::Features(FeatureMap::new(h, w, ch, values)?),
                GridKind::Label => unreachable!(),
            })
        }
    }
}

pub fn write_grid(grid: &Grid, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode(grid))?;
    Ok(())
}

pub fn read_grid(path: impl AsRef<Path>, num_classes: Option<usize>) -> Result<Grid> {
    decode(&fs::read(path)?, num_classes)
}
