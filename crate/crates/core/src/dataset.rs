//! Paired-state datasets and the `FMDS` container.
//!
//! Layout of an `FMDS` file (all little-endian):
//!
//! ```text
//! "FMDS" | u32 version = 1 | u32 C | u32 H | u32 W | u64 count | f64 horizon
//! count x ( C*H*W f64 source state | C*H*W f64 target state )
//! ```
//!
//! A plain-text sidecar `<file>.meta` holds `key = value` lines (generator,
//! seed, normalization statistics, ...). Ensembles use the same container:
//! each pair is `(origin, member)`.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array1;

use crate::error::{Error, Result};
use crate::state::{Dims, State};

pub const FMDS_MAGIC: &[u8; 4] = b"FMDS";
pub const FMDS_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 3 * 4 + 8 + 8;

/// Per-dimension affine standardization `x -> (x - mean) / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// Population standard deviation; 1 for dimensions flagged constant.
    pub scale: Vec<f64>,
    pub constant: Vec<bool>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Standardizer {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
            constant: vec![false; dim],
        }
    }

    /// Population mean/std of `states`. Empty input yields the identity.
    pub fn fit<'a>(dim: usize, states: impl Iterator<Item = &'a State> + Clone) -> Self {
        let n = states.clone().count();
        if n == 0 {
            return Self::identity(dim);
        }
        let mut mean = vec![0.0; dim];
        for s in states.clone() {
            for (m, v) in mean.iter_mut().zip(s.iter()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; dim];
        for s in states {
            for ((acc, v), m) in var.iter_mut().zip(s.iter()).zip(&mean) {
                *acc += (v - m) * (v - m);
            }
        }
        let mut scale = Vec::with_capacity(dim);
        let mut constant = Vec::with_capacity(dim);
        for (v, m) in var.iter().zip(&mean) {
            let sd = (v / n as f64).sqrt();
            let flat = !(sd > 1e-12 * m.abs().max(1.0));
            constant.push(flat);
            scale.push(if flat { 1.0 } else { sd });
        }
        Standardizer {
            mean,
            scale,
            constant,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn is_identity(&self) -> bool {
        self.mean.iter().all(|&m| m == 0.0) && self.scale.iter().all(|&s| s == 1.0)
    }

    pub fn apply(&self, x: &State) -> State {
        Array1::from_iter(
            x.iter()
                .zip(self.mean.iter().zip(&self.scale))
                .map(|(v, (m, s))| (v - m) / s),
        )
    }

    pub fn invert(&self, x: &State) -> State {
        Array1::from_iter(
            x.iter()
                .zip(self.mean.iter().zip(&self.scale))
                .map(|(v, (m, s))| v * s + m),
        )
    }
}

/// Normalization of the two ends of each pair, fitted independently.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub source: Standardizer,
    pub target: Standardizer,
}

impl NormStats {
    pub fn identity(dim: usize) -> Self {
        NormStats {
            source: Standardizer::identity(dim),
            target: Standardizer::identity(dim),
        }
    }

    pub fn is_finite(&self) -> bool {
        [&self.source, &self.target]
            .iter()
            .all(|s| s.mean.iter().chain(&s.scale).all(|v| v.is_finite()))
    }
}

/// Ordered `key = value` annotations carried in the sidecar.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetMeta {
    pub generator: String,
    pub seed: u64,
    pub extra: Vec<(String, String)>,
}

impl DatasetMeta {
    pub fn new(generator: impl Into<String>, seed: u64) -> Self {
        DatasetMeta {
            generator: generator.into(),
            seed,
            extra: Vec::new(),
        }
    }

    pub fn with(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.extra.push((key.into(), value.to_string()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.extra
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

/// Paired samples `(q0, qT)` a fixed horizon apart.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dims: Dims,
    pub pairs: Vec<(State, State)>,
    pub horizon: f64,
    pub norm: NormStats,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(
        dims: Dims,
        pairs: Vec<(State, State)>,
        horizon: f64,
        meta: DatasetMeta,
    ) -> Result<Self> {
        for (a, b) in &pairs {
            dims.check(a)?;
            dims.check(b)?;
        }
        let d = dims.len();
        let norm = NormStats {
            source: Standardizer::fit(d, pairs.iter().map(|p| &p.0)),
            target: Standardizer::fit(d, pairs.iter().map(|p| &p.1)),
        };
        if !norm.is_finite() {
            return Err(Error::Generation(
                "dataset contains non-finite values".into(),
            ));
        }
        Ok(Dataset {
            dims,
            pairs,
            horizon,
            norm,
            meta,
        })
    }

    /// Treat a bare collection of states as a marginal (each pair is `(s, s)`).
    pub fn from_states(dims: Dims, states: Vec<State>, meta: DatasetMeta) -> Result<Self> {
        let pairs = states.into_iter().map(|s| (s.clone(), s)).collect();
        Self::new(dims, pairs, 0.0, meta)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn sources(&self) -> impl Iterator<Item = &State> + Clone {
        self.pairs.iter().map(|p| &p.0)
    }

    pub fn targets(&self) -> impl Iterator<Item = &State> + Clone {
        self.pairs.iter().map(|p| &p.1)
    }

    /// Split off the last `n` pairs (e.g. a held-out set). Statistics are refitted.
    pub fn split_tail(mut self, n: usize) -> Result<(Dataset, Dataset)> {
        let n = n.min(self.pairs.len());
        let tail = self.pairs.split_off(self.pairs.len() - n);
        let meta = self.meta.clone();
        Ok((
            Dataset::new(self.dims, self.pairs, self.horizon, meta.clone())?,
            Dataset::new(self.dims, tail, self.horizon, meta)?,
        ))
    }

    /// Mean and population SD over every target component.
    pub fn pooled_target_stats(&self) -> (f64, f64) {
        pooled_stats(self.targets())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_fmds(path, self.dims, self.horizon, &self.pairs)?;
        write_meta(&meta_path(path), &self.meta_lines())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let raw = read_fmds(path)?;
        let mut meta = DatasetMeta::default();
        if let Ok(lines) = read_meta(&meta_path(path)) {
            for (k, v) in lines {
                match k.as_str() {
                    "generator" => meta.generator = v,
                    "seed" => meta.seed = v.parse().unwrap_or_default(),
                    "count" | "dims" | "horizon" | "pooled_mean" | "pooled_std"
                    | "source_mean" | "source_std" | "target_mean" | "target_std" => {}
                    _ => meta.extra.push((k, v)),
                }
            }
        }
        Dataset::new(raw.dims, raw.pairs, raw.horizon, meta)
    }

    fn meta_lines(&self) -> Vec<(String, String)> {
        let (pm, ps) = self.pooled_target_stats();
        let mut lines = vec![
            ("generator".to_string(), self.meta.generator.clone()),
            ("seed".to_string(), self.meta.seed.to_string()),
            ("count".to_string(), self.len().to_string()),
            ("dims".to_string(), self.dims.to_string()),
            ("horizon".to_string(), fmt_f64(self.horizon)),
            ("pooled_mean".to_string(), fmt_f64(pm)),
            ("pooled_std".to_string(), fmt_f64(ps)),
            ("source_mean".to_string(), join(&self.norm.source.mean)),
            ("source_std".to_string(), join(&self.norm.source.scale)),
            ("target_mean".to_string(), join(&self.norm.target.mean)),
            ("target_std".to_string(), join(&self.norm.target.scale)),
        ];
        lines.extend(self.meta.extra.iter().cloned());
        lines
    }

    /// `y0_1,...,y0_d,yT_1,...,yT_d` rows; only sensible for small vector states.
    pub fn to_csv(&self) -> String {
        let d = self.dims.len();
        let mut out = String::new();
        let header: Vec<String> = (1..=d)
            .map(|i| format!("q0_{i}"))
            .chain((1..=d).map(|i| format!("qT_{i}")))
            .collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for (a, b) in &self.pairs {
            let row: Vec<String> = a.iter().chain(b.iter()).map(|v| fmt_f64(*v)).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

pub fn pooled_stats<'a>(states: impl Iterator<Item = &'a State> + Clone) -> (f64, f64) {
    let (mut n, mut sum) = (0usize, 0.0);
    for s in states.clone() {
        n += s.len();
        sum += s.sum();
    }
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = sum / n as f64;
    let ss: f64 = states
        .map(|s| s.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>())
        .sum();
    (mean, (ss / n as f64).sqrt())
}

/// Decoded contents of an `FMDS` file.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPairs {
    pub dims: Dims,
    pub horizon: f64,
    pub pairs: Vec<(State, State)>,
}

pub fn encode_fmds(dims: Dims, horizon: f64, pairs: &[(State, State)]) -> Vec<u8> {
    let d = dims.len();
    let mut buf = Vec::with_capacity(HEADER_LEN + pairs.len() * 2 * d * 8);
    buf.extend_from_slice(FMDS_MAGIC);
    buf.extend_from_slice(&FMDS_VERSION.to_le_bytes());
    for v in [dims.channels, dims.height, dims.width] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    buf.extend_from_slice(&(pairs.len() as u64).to_le_bytes());
    buf.extend_from_slice(&horizon.to_le_bytes());
    for (a, b) in pairs {
        for v in a.iter().chain(b.iter()) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

pub fn decode_fmds(bytes: &[u8]) -> Result<RawPairs> {
    let bad = |reason: String| Error::format("FMDS file", reason);
    if bytes.len() < HEADER_LEN {
        return Err(bad(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..4] != FMDS_MAGIC {
        return Err(bad("bad magic".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != FMDS_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let dims = Dims::grid(u32_at(8) as usize, u32_at(12) as usize, u32_at(16) as usize);
    if dims.is_empty() {
        return Err(bad("zero-sized state".into()));
    }
    let count = u64::from_le_bytes(bytes[20..28].try_into().unwrap()) as usize;
    let horizon = f64::from_le_bytes(bytes[28..36].try_into().unwrap());
    let d = dims.len();
    let expected = count
        .checked_mul(2 * d * 8)
        .and_then(|b| b.checked_add(HEADER_LEN))
        .ok_or_else(|| bad("size overflow".into()))?;
    if bytes.len() != expected {
        return Err(bad(format!(
            "expected {expected} bytes for {count} pairs of {dims}, found {}",
            bytes.len()
        )));
    }
    let mut values = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut pairs = Vec::with_capacity(count);
    for _ in 0..count {
        let a: State = values.by_ref().take(d).collect();
        let b: State = values.by_ref().take(d).collect();
        pairs.push((a, b));
    }
    Ok(RawPairs {
        dims,
        horizon,
        pairs,
    })
}

pub fn write_fmds(path: &Path, dims: Dims, horizon: f64, pairs: &[(State, State)]) -> Result<()> {
    atomic_write(path, &encode_fmds(dims, horizon, pairs))
}

pub fn read_fmds(path: &Path) -> Result<RawPairs> {
    decode_fmds(&fs::read(path)?)
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

pub fn write_meta(path: &Path, lines: &[(String, String)]) -> Result<()> {
    let mut text = String::new();
    for (k, v) in lines {
        let _ = writeln!(text, "{k} = {v}");
    }
    atomic_write(path, text.as_bytes())
}

pub fn read_meta(path: &Path) -> Result<Vec<(String, String)>> {
    parse_key_values(&fs::read_to_string(path)?)
}

/// Parse `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::format("key = value file", format!("line {} has no '='", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Write to a sibling temp file, then rename over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::Usage(format!("'{}' is not a file path", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = dir.join(tmp_name);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

/// Shortest round-trippable decimal form.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(" ")
}
