//! Binary checkpoints (`FMCK`) for velocity fields and VAR models.
//!
//! Layout, all little-endian: magic, `u32` version, 4-byte kind tag, `u32`
//! activation tag, `u32` layer count, `u32` layer widths (count + 1), then
//! per layer the row-major `out x in` weight and the bias as `f64`. A
//! normalization block follows (`u32` dim, source mean and scale, target
//! mean and scale as `f64`, constant flags as one byte each for source then
//! target), then the `f64` horizon. A VAR model is one `d -> d` layer.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::baseline::VarModel;
use crate::dataset::{atomic_write, NormStats, Standardizer};
use crate::error::{Error, Result};
use crate::flow::{FieldKind, VelocityField};
use crate::nn::{Activation, Layer, Mlp};

pub const FMCK_MAGIC: &[u8; 4] = b"FMCK";
pub const FMCK_VERSION: u32 = 1;
const VAR_TAG: [u8; 4] = *b"VAR1";

#[derive(Debug, Clone, PartialEq)]
pub enum Checkpoint {
    Field(VelocityField),
    Var(VarModel),
}

impl Checkpoint {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Checkpoint::Field(f) => f.kind.name(),
            Checkpoint::Var(_) => "var",
        }
    }

    pub fn into_field(self) -> Result<VelocityField> {
        match self {
            Checkpoint::Field(f) => Ok(f),
            Checkpoint::Var(_) => Err(Error::Usage("expected a flow checkpoint, got a VAR model".into())),
        }
    }

    pub fn into_var(self) -> Result<VarModel> {
        match self {
            Checkpoint::Var(v) => Ok(v),
            Checkpoint::Field(f) => Err(Error::Usage(format!(
                "expected a VAR checkpoint, got a {} field",
                f.kind.name()
            ))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(FMCK_MAGIC);
        put_u32(&mut buf, FMCK_VERSION);
        match self {
            Checkpoint::Field(f) => {
                buf.extend_from_slice(&f.kind.tag());
                put_u32(&mut buf, f.net.activation().tag());
                put_layers(&mut buf, f.net.layers());
                put_norm(&mut buf, &f.norm);
                put_f64(&mut buf, f.horizon);
            }
            Checkpoint::Var(v) => {
                buf.extend_from_slice(&VAR_TAG);
                put_u32(&mut buf, Activation::default().tag());
                let layer = Layer {
                    weight: v.a.clone(),
                    bias: v.b.clone(),
                };
                put_layers(&mut buf, std::slice::from_ref(&layer));
                put_norm(&mut buf, &NormStats::identity(v.dim()));
                put_f64(&mut buf, 0.0);
            }
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != FMCK_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = r.u32()?;
        if version != FMCK_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let tag: [u8; 4] = r.take(4)?.try_into().unwrap();
        let act_tag = r.u32()?;
        let activation =
            Activation::from_tag(act_tag).ok_or_else(|| bad(format!("unknown activation tag {act_tag}")))?;
        let n_layers = r.u32()? as usize;
        if n_layers == 0 || n_layers > 1024 {
            return Err(bad(format!("implausible layer count {n_layers}")));
        }
        let widths = (0..=n_layers)
            .map(|_| r.u32().map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let mut layers = Vec::with_capacity(n_layers);
        for w in widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let weight = Array2::from_shape_vec((fan_out, fan_in), r.f64s(fan_in * fan_out)?)
                .map_err(|e| bad(e.to_string()))?;
            let bias = Array1::from(r.f64s(fan_out)?);
            layers.push(Layer { weight, bias });
        }
        let norm = r.norm()?;
        let horizon = r.f64()?;
        if r.pos != bytes.len() {
            return Err(bad(format!("{} trailing bytes", bytes.len() - r.pos)));
        }

        if tag == VAR_TAG {
            let layer = layers.pop().filter(|_| n_layers == 1).ok_or_else(|| bad("VAR model must have one layer"))?;
            return VarModel::new(layer.weight, layer.bias).map(Checkpoint::Var);
        }
        let kind = [FieldKind::Forecast, FieldKind::Gaussify]
            .into_iter()
            .find(|k| k.tag() == tag)
            .ok_or_else(|| bad(format!("unknown kind tag {:?}", String::from_utf8_lossy(&tag))))?;
        let net = Mlp::from_layers(layers, activation)?;
        VelocityField::new(net, kind, norm, horizon).map(Checkpoint::Field)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

pub fn save_field(field: &VelocityField, path: &Path) -> Result<()> {
    Checkpoint::Field(field.clone()).save(path)
}

pub fn load_field(path: &Path) -> Result<VelocityField> {
    Checkpoint::load(path)?.into_field()
}

fn bad(reason: impl Into<String>) -> Error {
    Error::format("checkpoint", reason)
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s<'a>(buf: &mut Vec<u8>, vs: impl IntoIterator<Item = &'a f64>) {
    for v in vs {
        put_f64(buf, *v);
    }
}

fn put_layers(buf: &mut Vec<u8>, layers: &[Layer]) {
    put_u32(buf, layers.len() as u32);
    put_u32(buf, layers[0].fan_in() as u32);
    for l in layers {
        put_u32(buf, l.fan_out() as u32);
    }
    for l in layers {
        // `iter` on a standard-layout array is row-major.
        put_f64s(buf, l.weight.iter());
        put_f64s(buf, l.bias.iter());
    }
}

fn put_norm(buf: &mut Vec<u8>, norm: &NormStats) {
    put_u32(buf, norm.source.dim() as u32);
    for s in [&norm.source, &norm.target] {
        put_f64s(buf, &s.mean);
        put_f64s(buf, &s.scale);
    }
    for s in [&norm.source, &norm.target] {
        buf.extend(s.constant.iter().map(|&c| c as u8));
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
            .ok_or_else(|| bad(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| bad("size overflow"))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn norm(&mut self) -> Result<NormStats> {
        let d = self.u32()? as usize;
        let mut halves = Vec::with_capacity(2);
        for _ in 0..2 {
            let mean = self.f64s(d)?;
            let scale = self.f64s(d)?;
            halves.push((mean, scale));
        }
        let mut sides = Vec::with_capacity(2);
        for (mean, scale) in halves {
            let constant = self.take(d)?.iter().map(|&b| b != 0).collect();
            sides.push(Standardizer {
                mean,
                scale,
                constant,
            });
        }
        let target = sides.pop().unwrap();
        let source = sides.pop().unwrap();
        let norm = NormStats { source, target };
        if !norm.is_finite() || norm.source.scale.iter().chain(&norm.target.scale).any(|&s| s <= 0.0) {
            return Err(bad("invalid normalization statistics"));
        }
        Ok(norm)
    }
}
