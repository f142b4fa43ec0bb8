//! Versioned binary container for model parameters.
//!
//! Layout, little-endian: magic `QCKP`, `u16` version, `u32` length of a
//! `key=value` metadata block, the block, `u32` section count, then per
//! section a `u16` name length, the name, a `u8` rank, `u64` dims and the
//! `f64` payload.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::block::{Gate, LstmBlock};
use super::model::{CombinerSign, LinearHead, ModelSpec, RecoveryModel, Topology};
use crate::error::{Error, Result};

const MAGIC: [u8; 4] = *b"QCKP";
const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

/// A model plus free-form metadata and any extra named arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: RecoveryModel,
    pub meta: BTreeMap<String, String>,
    pub extra: Vec<Section>,
}

impl Checkpoint {
    pub fn new(model: RecoveryModel) -> Self {
        Self {
            model,
            meta: BTreeMap::new(),
            extra: Vec::new(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut meta = self.meta.clone();
        let spec = self.model.spec();
        let (topology, combiner) = match spec.topology {
            Topology::ThreeBlock(s) => ("three_block", s.name()),
            Topology::SingleBlock => ("single_block", "none"),
        };
        meta.insert("model.topology".into(), topology.into());
        meta.insert("model.combiner".into(), combiner.into());
        meta.insert("model.hidden".into(), spec.hidden.to_string());
        meta.insert("model.input_dim".into(), spec.input_dim.to_string());
        meta.insert("model.window_len".into(), spec.window_len.to_string());
        meta.insert("model.forget_bias_one".into(), spec.forget_bias_one.to_string());
        let text: String = meta.iter().map(|(k, v)| format!("{k}={v}\n")).collect();

        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());

        let sections: Vec<Section> = model_sections(&self.model)
            .into_iter()
            .chain(self.extra.iter().cloned())
            .collect();
        out.extend_from_slice(&(sections.len() as u32).to_le_bytes());
        for s in &sections {
            out.extend_from_slice(&(s.name.len() as u16).to_le_bytes());
            out.extend_from_slice(s.name.as_bytes());
            out.push(s.dims.len() as u8);
            for &d in &s.dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &s.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
        if magic != MAGIC {
            return Err(Error::UnknownMagic {
                found: magic,
                expected: MAGIC,
            });
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let meta_len = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(meta_len)?)
            .map_err(|_| Error::MalformedHeader("metadata is not UTF-8".into()))?;
        let mut meta = BTreeMap::new();
        for line in text.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::MalformedHeader(format!("metadata line {line:?}")))?;
            meta.insert(k.to_string(), v.to_string());
        }

        let count = r.u32()? as usize;
        let mut sections = BTreeMap::new();
        let mut order = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::MalformedHeader("section name is not UTF-8".into()))?
                .to_string();
            let rank = r.take(1)?[0] as usize;
            let dims = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = dims.iter().product();
            let raw = r.take(n.checked_mul(8).ok_or_else(|| {
                Error::MalformedHeader(format!("section {name} is too large"))
            })?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            order.push(name.clone());
            sections.insert(name.clone(), Section { name, dims, data });
        }
        if r.pos != bytes.len() {
            return Err(Error::MalformedHeader(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }

        let spec = spec_from_meta(&meta)?;
        let model = model_from_sections(spec, &mut sections)?;
        let extra = order
            .into_iter()
            .filter_map(|n| sections.remove(&n))
            .collect();
        for key in [
            "model.topology",
            "model.combiner",
            "model.hidden",
            "model.input_dim",
            "model.window_len",
            "model.forget_bias_one",
        ] {
            meta.remove(key);
        }
        Ok(Self { model, meta, extra })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn extra(&self, name: &str) -> Option<&Section> {
        self.extra.iter().find(|s| s.name == name)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::MalformedHeader(format!(
                    "need {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn model_sections(m: &RecoveryModel) -> Vec<Section> {
    let mut out = Vec::new();
    let cols = m.hidden_dim() + m.input_dim();
    for (blk, name) in m.blocks().iter().zip(m.topology().block_names()) {
        for g in Gate::ALL {
            out.push(Section {
                name: format!("{name}.W_{}", g.suffix()),
                dims: vec![m.hidden_dim(), cols],
                data: blk.gate_weights(g).iter().copied().collect(),
            });
        }
        for g in Gate::ALL {
            out.push(Section {
                name: format!("{name}.b_{}", g.suffix()),
                dims: vec![m.hidden_dim()],
                data: blk.gate_bias(g).to_vec(),
            });
        }
    }
    out.push(Section {
        name: "head.w".into(),
        dims: vec![m.hidden_dim()],
        data: m.head().w.to_vec(),
    });
    out.push(Section {
        name: "head.b".into(),
        dims: vec![1],
        data: vec![m.head().b],
    });
    out
}

fn meta_usize(meta: &BTreeMap<String, String>, key: &str) -> Result<usize> {
    meta.get(key)
        .ok_or_else(|| Error::MalformedHeader(format!("missing {key}")))?
        .parse()
        .map_err(|_| Error::MalformedHeader(format!("bad {key}")))
}

fn spec_from_meta(meta: &BTreeMap<String, String>) -> Result<ModelSpec> {
    let topology = match meta.get("model.topology").map(String::as_str) {
        Some("three_block") => {
            let sign: CombinerSign = meta
                .get("model.combiner")
                .ok_or_else(|| Error::MalformedHeader("missing model.combiner".into()))?
                .parse()?;
            Topology::ThreeBlock(sign)
        }
        Some("single_block") => Topology::SingleBlock,
        other => return Err(Error::MalformedHeader(format!("topology {other:?}"))),
    };
    Ok(ModelSpec {
        topology,
        hidden: meta_usize(meta, "model.hidden")?,
        input_dim: meta_usize(meta, "model.input_dim")?,
        window_len: meta_usize(meta, "model.window_len")?,
        forget_bias_one: meta.get("model.forget_bias_one").map(String::as_str) == Some("true"),
    })
}

fn take_section(
    sections: &mut BTreeMap<String, Section>,
    name: &str,
    dims: &[usize],
) -> Result<Vec<f64>> {
    let s = sections
        .remove(name)
        .ok_or_else(|| Error::MalformedHeader(format!("missing section {name}")))?;
    if s.dims != dims {
        return Err(Error::MalformedHeader(format!(
            "section {name} has shape {:?}, expected {dims:?}",
            s.dims
        )));
    }
    Ok(s.data)
}

fn model_from_sections(spec: ModelSpec, sections: &mut BTreeMap<String, Section>) -> Result<RecoveryModel> {
    let (hd, id) = (spec.hidden, spec.input_dim);
    let cols = hd + id;
    let mut blocks = Vec::new();
    for name in spec.topology.block_names() {
        let mut w = Vec::with_capacity(4 * hd * cols);
        let mut b = Vec::with_capacity(4 * hd);
        for g in Gate::ALL {
            w.extend(take_section(sections, &format!("{name}.W_{}", g.suffix()), &[hd, cols])?);
        }
        for g in Gate::ALL {
            b.extend(take_section(sections, &format!("{name}.b_{}", g.suffix()), &[hd])?);
        }
        let w = Array2::from_shape_vec((4 * hd, cols), w).unwrap();
        blocks.push(LstmBlock::from_parts(w, Array1::from(b), id)?);
    }
    let w = Array1::from(take_section(sections, "head.w", &[hd])?);
    let b = take_section(sections, "head.b", &[1])?[0];
    RecoveryModel::from_parts(spec, blocks, LinearHead { w, b })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let model = RecoveryModel::new(ModelSpec::three_block(4, 6, CombinerSign::Alternative), 3).unwrap();
        let mut ck = Checkpoint::new(model);
        ck.meta.insert("train.seed".into(), "3".into());
        ck.extra.push(Section {
            name: "norm.probe_truth".into(),
            dims: vec![2],
            data: vec![40.0, 100.0],
        });
        ck
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = sample();
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);

        let single = Checkpoint::new(RecoveryModel::new(ModelSpec::single_block(3, 5), 1).unwrap());
        assert_eq!(Checkpoint::from_bytes(&single.to_bytes()).unwrap(), single);
    }

    #[test]
    fn sections_are_named_per_gate() {
        let ck = sample();
        let names: Vec<String> = model_sections(&ck.model).into_iter().map(|s| s.name).collect();
        assert_eq!(names[0], "block_probe_pre.W_f");
        assert!(names.contains(&"block_conj_post.b_o".to_string()));
        assert_eq!(names.last().unwrap(), "head.b");
        assert_eq!(names.len(), 3 * 8 + 2);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = sample().to_bytes();
        let mut bad = bytes.clone();
        bad[1] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::UnknownMagic { .. })));
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::MalformedHeader(_))
        ));
        let mut v = bytes;
        v[4] = 7;
        assert!(matches!(Checkpoint::from_bytes(&v), Err(Error::UnsupportedVersion(7))));
    }
}
