use std::path::Path;

use crate::dataset::{self, fmt_f64, RawPairs};
use crate::error::{Error, Result};
use crate::state::{all_finite, Dims, State};

/// Provenance of an ensemble.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EnsembleMeta {
    pub source: String,
    pub seed: u64,
    pub sigma: f64,
    pub horizon: f64,
    pub steps: usize,
    pub extra: Vec<(String, String)>,
}

impl EnsembleMeta {
    pub fn new(source: impl Into<String>) -> Self {
        EnsembleMeta {
            source: source.into(),
            ..Default::default()
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

    fn lines(&self, count: usize, dims: Dims) -> Vec<(String, String)> {
        let mut out = vec![
            ("source".to_string(), self.source.clone()),
            ("seed".to_string(), self.seed.to_string()),
            ("sigma".to_string(), fmt_f64(self.sigma)),
            ("horizon".to_string(), fmt_f64(self.horizon)),
            ("steps".to_string(), self.steps.to_string()),
            ("count".to_string(), count.to_string()),
            ("dims".to_string(), dims.to_string()),
        ];
        out.extend(self.extra.iter().cloned());
        out
    }

    fn from_lines(lines: Vec<(String, String)>) -> Self {
        let mut meta = EnsembleMeta::default();
        for (k, v) in lines {
            match k.as_str() {
                "source" => meta.source = v,
                "seed" => meta.seed = v.parse().unwrap_or_default(),
                "sigma" => meta.sigma = v.parse().unwrap_or_default(),
                "horizon" => meta.horizon = v.parse().unwrap_or_default(),
                "steps" => meta.steps = v.parse().unwrap_or_default(),
                "count" | "dims" => {}
                _ => meta.extra.push((k, v)),
            }
        }
        meta
    }
}

/// `M >= 1` finite states of one layout, treated as samples of one distribution.
///
/// `origins`, when present, records where each member came from (the input
/// state it was propagated or perturbed from).
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    dims: Dims,
    members: Vec<State>,
    origins: Option<Vec<State>>,
    pub meta: EnsembleMeta,
}

impl Ensemble {
    pub fn new(dims: Dims, members: Vec<State>, meta: EnsembleMeta) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Usage("an ensemble needs at least one member".into()));
        }
        for (i, m) in members.iter().enumerate() {
            dims.check(m)?;
            if !all_finite(m.as_slice().expect("contiguous state")) {
                return Err(Error::Usage(format!("ensemble member {i} is not finite")));
            }
        }
        Ok(Ensemble {
            dims,
            members,
            origins: None,
            meta,
        })
    }

    pub fn with_origins(mut self, origins: Vec<State>) -> Result<Self> {
        if origins.len() != self.members.len() {
            return Err(Error::shape(self.members.len(), origins.len()));
        }
        for o in &origins {
            self.dims.check(o)?;
        }
        self.origins = Some(origins);
        Ok(self)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn members(&self) -> &[State] {
        &self.members
    }

    pub fn origins(&self) -> Option<&[State]> {
        self.origins.as_deref()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn into_members(self) -> Vec<State> {
        self.members
    }

    /// Same members under a different layout of equal size.
    pub fn reshaped(mut self, dims: Dims) -> Result<Self> {
        if dims.len() != self.dims.len() {
            return Err(Error::shape(self.dims.len(), dims.len()));
        }
        self.dims = dims;
        Ok(self)
    }

    /// Reorder members (and origins) so that output `i` is input `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Ensemble {
            dims: self.dims,
            members: perm.iter().map(|&i| self.members[i].clone()).collect(),
            origins: self
                .origins
                .as_ref()
                .map(|o| perm.iter().map(|&i| o[i].clone()).collect()),
            meta: self.meta.clone(),
        }
    }

    /// Stored as `FMDS` pairs `(origin, member)`; members without a recorded
    /// origin are paired with themselves.
    pub fn write(&self, path: &Path) -> Result<()> {
        let pairs: Vec<(State, State)> = match &self.origins {
            Some(o) => o.iter().cloned().zip(self.members.iter().cloned()).collect(),
            None => self.members.iter().map(|m| (m.clone(), m.clone())).collect(),
        };
        dataset::write_fmds(path, self.dims, self.meta.horizon, &pairs)?;
        dataset::write_meta(
            &dataset::meta_path(path),
            &self.meta.lines(self.len(), self.dims),
        )
    }

    /// Members are the second element of each stored pair, so a dataset file
    /// reads as its target ensemble.
    pub fn read(path: &Path) -> Result<Self> {
        Self::read_side(path, Side::Target)
    }

    /// The first element of each stored pair, e.g. the initial states of a dataset.
    pub fn read_sources(path: &Path) -> Result<Self> {
        Self::read_side(path, Side::Source)
    }

    fn read_side(path: &Path, side: Side) -> Result<Self> {
        let RawPairs {
            dims,
            horizon,
            pairs,
        } = dataset::read_fmds(path)?;
        let mut meta = dataset::read_meta(&dataset::meta_path(path))
            .map(EnsembleMeta::from_lines)
            .unwrap_or_else(|_| EnsembleMeta::new(path.display().to_string()));
        meta.horizon = horizon;
        let (origins, members): (Vec<State>, Vec<State>) = pairs.into_iter().unzip();
        match side {
            Side::Target => Ensemble::new(dims, members, meta)?.with_origins(origins),
            Side::Source => Ensemble::new(dims, origins, meta),
        }
    }
}

enum Side {
    Source,
    Target,
}

/// FNV-1a over the little-endian bytes of a state; identifies a source state
/// in ensemble metadata.
pub fn state_hash(state: &State) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in state.iter() {
        for b in v.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    format!("{h:016x}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn rejects_empty_and_ragged() {
        assert!(Ensemble::new(Dims::vector(2), vec![], EnsembleMeta::new("x")).is_err());
        let r = Ensemble::new(
            Dims::vector(2),
            vec![array![1.0, 2.0], array![1.0]],
            EnsembleMeta::new("x"),
        );
        assert!(matches!(r, Err(Error::Shape { .. })));
        let r = Ensemble::new(Dims::vector(1), vec![array![f64::NAN]], EnsembleMeta::new("x"));
        assert!(r.is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.fmds");
        let meta = EnsembleMeta {
            source: "unit".into(),
            seed: 4,
            sigma: 0.2,
            horizon: 200.0,
            steps: 100,
            extra: vec![("family".into(), "normal".into())],
        };
        let e = Ensemble::new(Dims::vector(2), vec![array![1.0, 2.0], array![3.0, 4.0]], meta)
            .unwrap()
            .with_origins(vec![array![0.0, 0.0], array![0.5, 0.5]])
            .unwrap();
        e.write(&path).unwrap();
        let back = Ensemble::read(&path).unwrap();
        assert_eq!(back, e);
        let src = Ensemble::read_sources(&path).unwrap();
        assert_eq!(src.members()[1], array![0.5, 0.5]);
    }

    #[test]
    fn hash_is_stable() {
        assert_eq!(state_hash(&array![1.0, 2.0]), state_hash(&array![1.0, 2.0]));
        assert_ne!(state_hash(&array![1.0, 2.0]), state_hash(&array![2.0, 1.0]));
    }
}
