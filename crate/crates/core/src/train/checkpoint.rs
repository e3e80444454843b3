//! Binary checkpoint layout, all integers little-endian:
//!
//! ```text
//! "MMVAECKP"            8 bytes
//! version               u32 (= 1)
//! section count         u32
//! per section:
//!   name length, name   u32, UTF-8
//!   payload length      u64
//!   payload
//! SHA-256 of all preceding bytes (32 bytes)
//! ```
//!
//! Sections, in order: `meta` (precision byte width u8, step u64, variant
//! tag), `config` (`key=value` text of the training configuration), `norm`
//! (audio then gaze: width u32, means, stds as f64), `params` (count u32;
//! per tensor: name, rank u32, dims u64, values) and optionally `optim`
//! (step u64, skipped u64, first then second moments per tensor). Real
//! values are stored at the checkpoint precision.
//!
//! Loading parses and verifies the whole file before anything is built.

use std::path::Path;

use sha2::{Digest, Sha256};

use super::{AdamState, TrainConfig};
use crate::error::{Error, Result};
use crate::features::ChannelStats;
use crate::io::KvFile;
use crate::model::{Model, ModelVariant, Normalization, ParamSet};
use crate::real::{Precision, Real};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"MMVAECKP";
const VERSION: u32 = 1;
const DIGEST: usize = 32;

/// Everything needed to rebuild a trained model.
///
/// Values are held as `f64`; a single-precision checkpoint only contains
/// values exactly representable in `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub precision: Precision,
    pub step: u64,
    pub config: TrainConfig,
    pub norm: Normalization,
    pub params: ParamSet<f64>,
    pub optim: Option<AdamState<f64>>,
}

impl Checkpoint {
    pub fn from_model<F: Real>(
        model: &Model<F>,
        config: &TrainConfig,
        step: u64,
        optim: Option<&AdamState<F>>,
    ) -> Self {
        let mut config = config.clone();
        config.model = model.config().clone();
        config.precision = F::PRECISION;
        Checkpoint {
            precision: F::PRECISION,
            step,
            config,
            norm: model.norm.clone(),
            params: model.params().cast(),
            optim: optim.map(AdamState::cast),
        }
    }

    pub fn variant(&self) -> ModelVariant {
        self.config.model.variant
    }

    pub fn model<F: Real>(&self) -> Result<Model<F>> {
        Model::from_params(self.config.model.clone(), self.params.cast(), self.norm.clone())
    }

    /// Like [`Checkpoint::model`], refusing checkpoints of another variant.
    pub fn model_of<F: Real>(&self, expected: ModelVariant) -> Result<Model<F>> {
        if self.variant() != expected {
            return Err(Error::VariantMismatch {
                expected: expected.tag().to_string(),
                found: self.variant().tag().to_string(),
            });
        }
        self.model()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        match self.precision {
            Precision::Single => self.encode::<f32>(),
            Precision::Double => self.encode::<f64>(),
        }
    }

    fn encode<F: Real>(&self) -> Vec<u8> {
        let mut sections: Vec<(&str, Vec<u8>)> = Vec::new();

        let mut meta = vec![F::BYTES as u8];
        meta.extend_from_slice(&self.step.to_le_bytes());
        put_str(&mut meta, self.variant().tag());
        sections.push(("meta", meta));

        sections.push(("config", self.config.to_kv().render().into_bytes()));

        let mut norm = Vec::new();
        for s in [&self.norm.audio, &self.norm.gaze] {
            put_u32(&mut norm, s.width() as u32);
            for &v in s.mean.iter().chain(&s.std) {
                norm.extend_from_slice(&v.to_le_bytes());
            }
        }
        sections.push(("norm", norm));

        let mut params = Vec::new();
        put_u32(&mut params, self.params.len() as u32);
        for (name, t) in self.params.iter() {
            put_str(&mut params, name);
            put_u32(&mut params, t.shape().len() as u32);
            for &d in t.shape() {
                params.extend_from_slice(&(d as u64).to_le_bytes());
            }
            put_reals::<F>(&mut params, t.data());
        }
        sections.push(("params", params));

        if let Some(o) = &self.optim {
            let mut optim = Vec::new();
            optim.extend_from_slice(&o.step.to_le_bytes());
            optim.extend_from_slice(&o.skipped.to_le_bytes());
            for buf in o.m.iter().chain(&o.v) {
                put_reals::<F>(&mut optim, buf);
            }
            sections.push(("optim", optim));
        }

        let mut out = MAGIC.to_vec();
        put_u32(&mut out, VERSION);
        put_u32(&mut out, sections.len() as u32);
        for (name, payload) in sections {
            put_str(&mut out, name);
            out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
            out.extend_from_slice(&payload);
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "header");
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::format("header", "bad magic; not a checkpoint"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format(
                "header",
                format!("unsupported version {version}, expected {VERSION}"),
            ));
        }
        let count = r.u32()?;
        let mut sections: Vec<(String, &[u8])> = Vec::new();
        for i in 0..count {
            let name = r.string()?;
            r.section = if name.is_empty() { format!("#{i}") } else { name.clone() };
            let len = r.u64()?;
            let available = r.remaining().saturating_sub(DIGEST) as u64;
            if len > available {
                return Err(Error::format(
                    r.section.clone(),
                    format!("declares {len} bytes, only {available} present"),
                ));
            }
            sections.push((name, r.take(len as usize)?));
        }
        let body = r.pos;
        r.section = "checksum".into();
        let stored = r.take(DIGEST)?;
        if r.remaining() != 0 {
            return Err(Error::format("checksum", "trailing bytes after the digest"));
        }
        if Sha256::digest(&bytes[..body]).as_slice() != stored {
            return Err(Error::format("checksum", "SHA-256 mismatch; file is corrupt"));
        }

        let find = |name: &str| {
            sections
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, p)| *p)
                .ok_or_else(|| Error::format(name, "section missing"))
        };
        if let Some((n, _)) = sections
            .iter()
            .find(|(n, _)| !["meta", "config", "norm", "params", "optim"].contains(&n.as_str()))
        {
            return Err(Error::format(n.clone(), "unknown section"));
        }

        let mut meta = Reader::new(find("meta")?, "meta");
        let width = meta.take(1)?[0];
        let precision = match width {
            4 => Precision::Single,
            8 => Precision::Double,
            w => return Err(Error::format("meta", format!("unsupported value width {w}"))),
        };
        let step = meta.u64()?;
        let variant: ModelVariant = meta
            .string()?
            .parse()
            .map_err(|e: Error| Error::format("meta", e.to_string()))?;
        meta.finish()?;

        let text = std::str::from_utf8(find("config")?)
            .map_err(|_| Error::format("config", "not UTF-8"))?;
        let config = KvFile::parse(text)
            .and_then(|kv| TrainConfig::from_kv(&kv))
            .map_err(|e| Error::format("config", e.to_string()))?;
        if config.model.variant != variant {
            return Err(Error::format("config", "variant disagrees with meta"));
        }

        let mut nr = Reader::new(find("norm")?, "norm");
        let mut stats = Vec::new();
        for _ in 0..2 {
            let w = nr.u32()? as usize;
            let mean = nr.f64s(w)?;
            let std = nr.f64s(w)?;
            stats.push(ChannelStats { mean, std });
        }
        nr.finish()?;
        let gaze = stats.pop().unwrap();
        let audio = stats.pop().unwrap();
        let norm = Normalization { audio, gaze };

        let mut pr = Reader::new(find("params")?, "params");
        let n = pr.u32()?;
        let mut params = ParamSet::default();
        for _ in 0..n {
            let name = pr.string()?;
            let rank = pr.u32()? as usize;
            if rank > 8 {
                return Err(Error::format("params", format!("`{name}` has rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(pr.u64()? as usize);
            }
            let len = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::format("params", format!("`{name}` shape overflows")))?;
            let data = pr.reals(width, len)?;
            let t = Tensor::new(shape, data).map_err(|e| Error::format("params", e.to_string()))?;
            params
                .push(name, t)
                .map_err(|e| Error::format("params", e.to_string()))?;
        }
        pr.finish()?;

        let optim = match sections.iter().find(|(n, _)| n == "optim") {
            None => None,
            Some((_, payload)) => {
                let mut or = Reader::new(payload, "optim");
                let step = or.u64()?;
                let skipped = or.u64()?;
                let lens: Vec<usize> = params.tensors().iter().map(Tensor::len).collect();
                let mut bufs = Vec::new();
                for &l in lens.iter().chain(&lens) {
                    bufs.push(or.reals(width, l)?);
                }
                or.finish()?;
                let v = bufs.split_off(lens.len());
                Some(AdamState {
                    m: bufs,
                    v,
                    step,
                    skipped,
                })
            }
        };

        let ckpt = Checkpoint {
            precision,
            step,
            config,
            norm,
            params,
            optim,
        };
        // Validates the shape table against the variant.
        ckpt.model::<f64>()?;
        Ok(ckpt)
    }

    /// Hex SHA-256 of the serialized checkpoint.
    pub fn sha256(&self) -> String {
        let bytes = self.to_bytes();
        hex_digest(&bytes[bytes.len() - DIGEST..])
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn put_reals<F: Real>(out: &mut Vec<u8>, values: &[f64]) {
    for &v in values {
        F::of(v).write_le(out);
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    section: String,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], section: &str) -> Self {
        Reader {
            bytes,
            pos: 0,
            section: section.to_string(),
        }
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::format(
                self.section.clone(),
                format!("truncated: needs {n} bytes at offset {}", self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| Error::format(self.section.clone(), "name is not UTF-8"))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        self.reals(8, n)
    }

    fn reals(&mut self, width: u8, n: usize) -> Result<Vec<f64>> {
        let bytes = n
            .checked_mul(width as usize)
            .ok_or_else(|| Error::format(self.section.clone(), "length overflows"))?;
        let raw = self.take(bytes)?;
        Ok(match width {
            4 => raw.chunks_exact(4).map(|c| f32::read_le(c) as f64).collect(),
            _ => raw.chunks_exact(8).map(f64::read_le).collect(),
        })
    }

    fn finish(&self) -> Result<()> {
        if self.remaining() == 0 {
            Ok(())
        } else {
            Err(Error::format(
                self.section.clone(),
                format!("{} unexpected trailing bytes", self.remaining()),
            ))
        }
    }
}
