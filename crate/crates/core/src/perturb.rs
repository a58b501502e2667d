//! Ensembles of plausible neighbours of one state: encode with a gaussify
//! field, perturb the latent, decode each perturbed copy.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::ensemble::{state_hash, Ensemble, EnsembleMeta};
use crate::error::{Error, Result};
use crate::flow::{FieldKind, VelocityField};
use crate::integrate::{euler_forward, euler_reverse};
use crate::rng;
use crate::state::{Dims, State};

pub const DEFAULT_SIGMA: f64 = 0.2;
pub const DEFAULT_MEMBERS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseFamily {
    /// `sigma * N(0, 1)` per component.
    Normal,
    /// `sigma * U(-sqrt 3, sqrt 3)` per component; same variance as `Normal`.
    Uniform,
    /// `sigma` added to every component.
    Constant,
}

impl NoiseFamily {
    pub fn name(self) -> &'static str {
        match self {
            NoiseFamily::Normal => "normal",
            NoiseFamily::Uniform => "uniform",
            NoiseFamily::Constant => "constant",
        }
    }
}

impl std::str::FromStr for NoiseFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(NoiseFamily::Normal),
            "uniform" => Ok(NoiseFamily::Uniform),
            "constant" => Ok(NoiseFamily::Constant),
            other => Err(Error::Config(format!("unknown noise family '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub family: NoiseFamily,
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(family: NoiseFamily, sigma: f64, seed: u64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::Config(format!("noise amplitude must be >= 0, got {sigma}")));
        }
        Ok(NoiseSpec {
            family,
            sigma,
            seed,
        })
    }

    pub fn normal(sigma: f64, seed: u64) -> Result<Self> {
        Self::new(NoiseFamily::Normal, sigma, seed)
    }
}

/// Latent code of `q0` under a gaussify field.
pub fn encode(field: &VelocityField, q0: &State, n: usize) -> Result<State> {
    field.require(FieldKind::Gaussify)?;
    euler_forward(field, q0, n)
}

/// Physical state for a latent code; inverse of [`encode`].
pub fn decode(field: &VelocityField, z: &State, n: usize) -> Result<State> {
    field.require(FieldKind::Gaussify)?;
    euler_reverse(field, z, n)
}

pub fn perturb_latent(z: &State, spec: &NoiseSpec) -> State {
    if spec.sigma == 0.0 {
        return z.clone();
    }
    let mut r = rng::from_seed(spec.seed);
    let half_width = 3f64.sqrt();
    z.mapv(|v| match spec.family {
        NoiseFamily::Normal => {
            let w: f64 = StandardNormal.sample(&mut r);
            v + spec.sigma * w
        }
        NoiseFamily::Uniform => v + spec.sigma * r.random_range(-half_width..half_width),
        NoiseFamily::Constant => v + spec.sigma,
    })
}

/// Encode once, then decode `m` independently perturbed latents. Member `i`
/// uses noise stream `(spec.seed, i)`.
pub fn gen_perturbed_ensemble(
    field: &VelocityField,
    q0: &State,
    spec: &NoiseSpec,
    m: usize,
    n: usize,
) -> Result<Ensemble> {
    if m == 0 {
        return Err(Error::Usage("need at least one ensemble member".into()));
    }
    let z = encode(field, q0, n)?;
    let members: Vec<State> = (0..m)
        .into_par_iter()
        .map(|i| {
            let member_spec = NoiseSpec {
                seed: rng::derive(spec.seed, i as u64),
                ..*spec
            };
            decode(field, &perturb_latent(&z, &member_spec), n).map_err(|e| match e {
                Error::Divergence { at } => Error::Divergence {
                    at: format!("member {i}, {at}"),
                },
                other => other,
            })
        })
        .collect::<Result<_>>()?;
    let meta = EnsembleMeta {
        source: "perturbed".into(),
        seed: spec.seed,
        sigma: spec.sigma,
        horizon: 0.0,
        steps: n,
        extra: Vec::new(),
    }
    .with("family", spec.family.name())
    .with("source_hash", state_hash(q0));
    Ensemble::new(Dims::vector(q0.len()), members, meta)?.with_origins(vec![q0.clone(); m])
}
