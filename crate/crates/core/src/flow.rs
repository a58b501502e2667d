//! Flow-matching training: the linear interpolant, the velocity-matching
//! loss and the two training loops (forecast and gaussify).
//!
//! Both loops work in standardized coordinates. A forecast field maps
//! standardized sources to standardized targets; a gaussify field maps
//! standardized states to a standard normal latent.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::dataset::{Dataset, NormStats, Standardizer};
use crate::error::{Error, Result};
use crate::nn::{Activation, Adam, Batch, Mlp, TIME_EMBED};
use crate::rng;
use crate::state::State;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    Forecast,
    Gaussify,
}

impl FieldKind {
    pub fn tag(self) -> [u8; 4] {
        match self {
            FieldKind::Forecast => *b"FCST",
            FieldKind::Gaussify => *b"GAUS",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FieldKind::Forecast => "forecast",
            FieldKind::Gaussify => "gaussify",
        }
    }
}

impl std::str::FromStr for FieldKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forecast" => Ok(FieldKind::Forecast),
            "gaussify" => Ok(FieldKind::Gaussify),
            other => Err(Error::Config(format!(
                "unknown mode '{other}' (expected forecast or gaussify)"
            ))),
        }
    }
}

/// A trained velocity network together with the normalization it was trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    pub net: Mlp,
    pub kind: FieldKind,
    pub norm: NormStats,
    /// Physical time the flow spans; zero for gaussify fields.
    pub horizon: f64,
}

impl VelocityField {
    pub fn new(net: Mlp, kind: FieldKind, norm: NormStats, horizon: f64) -> Result<Self> {
        let d = net
            .state_dim()
            .ok_or_else(|| Error::Config("network input narrower than the time embedding".into()))?;
        if net.output_dim() != d {
            return Err(Error::shape(d, net.output_dim()));
        }
        if norm.source.dim() != d || norm.target.dim() != d {
            return Err(Error::shape(d, norm.source.dim()));
        }
        if kind == FieldKind::Gaussify && !norm.target.is_identity() {
            return Err(Error::Config("a gaussify field's latent side must be unnormalized".into()));
        }
        Ok(VelocityField {
            net,
            kind,
            norm,
            horizon,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.net.output_dim()
    }

    /// Velocity in the field's own (standardized) coordinates.
    pub fn velocity(&self, x: &[f64], t: f64) -> Result<State> {
        self.net.forward(x, t)
    }

    pub fn require(&self, kind: FieldKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Usage(format!(
                "expected a {} field, got a {} field",
                kind.name(),
                self.kind.name()
            )));
        }
        Ok(())
    }
}

/// `q_t = t*q1 + (1-t)*q0`. The matching velocity is `q1 - q0`.
pub fn interpolate(q0: &State, q1: &State, t: f64) -> Result<State> {
    if q0.len() != q1.len() {
        return Err(Error::shape(q0.len(), q1.len()));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Usage(format!("interpolation time {t} outside [0, 1]")));
    }
    Ok(q1.mapv(|v| t * v) + &q0.mapv(|v| (1.0 - t) * v))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            batch_size: 64,
            epochs: 200,
            seed: 0,
            hidden: vec![128, 128, 128],
            activation: Activation::Tanh,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        Ok(())
    }

    pub fn layer_dims(&self, state_dim: usize) -> Vec<usize> {
        let mut dims = vec![state_dim + TIME_EMBED];
        dims.extend(&self.hidden);
        dims.push(state_dim);
        dims
    }
}

/// Mean training loss per epoch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        self.epoch_losses.last().copied().unwrap_or(f64::NAN)
    }

    /// `epoch,mean_loss` lines.
    pub fn to_log(&self) -> String {
        let mut out = String::from("epoch,mean_loss\n");
        for (i, l) in self.epoch_losses.iter().enumerate() {
            out.push_str(&format!("{},{:?}\n", i + 1, l));
        }
        out
    }
}

fn to_matrix<'a>(d: usize, states: impl ExactSizeIterator<Item = &'a State>, s: &Standardizer) -> Array2<f64> {
    let n = states.len();
    let mut m = Array2::zeros((n, d));
    for (i, x) in states.enumerate() {
        m.row_mut(i).assign(&s.apply(x));
    }
    m
}

/// Minibatch Adam over seeded reshuffles. `fill` writes `(q_t, target)` for
/// sample `i` at time `t` into the two output rows.
fn run<F>(
    n: usize,
    d: usize,
    cfg: &TrainConfig,
    mut fill: F,
) -> Result<(Mlp, TrainReport)>
where
    F: FnMut(usize, f64, &mut rng::Rng, &mut [f64], &mut [f64]),
{
    cfg.validate()?;
    if n == 0 {
        return Err(Error::Usage("cannot train on an empty dataset".into()));
    }
    let mut net = Mlp::init(&cfg.layer_dims(d), cfg.activation, rng::derive(cfg.seed, 0))?;
    let mut opt = Adam::new(&net, cfg.lr);
    let mut r = rng::stream(cfg.seed, 1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut report = TrainReport::default();
    let mut last_finite = f64::NAN;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut r);
        let mut total = 0.0;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let b = chunk.len();
            let mut batch = Batch {
                states: Array2::zeros((b, d)),
                times: Vec::with_capacity(b),
                targets: Array2::zeros((b, d)),
            };
            for (row, &i) in chunk.iter().enumerate() {
                let t: f64 = r.random();
                batch.times.push(t);
                let mut qt = batch.states.row_mut(row);
                let mut target = batch.targets.row_mut(row);
                fill(
                    i,
                    t,
                    &mut r,
                    qt.as_slice_mut().expect("row-major"),
                    target.as_slice_mut().expect("row-major"),
                );
            }
            let (loss, grads) = net.loss_and_grad(&batch)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch: epoch + 1,
                    step,
                    last_finite,
                });
            }
            last_finite = loss;
            opt.step(&mut net, &grads)?;
            total += loss * b as f64;
        }
        report.epoch_losses.push(total / n as f64);
    }
    if !net.is_finite() {
        return Err(Error::NonFiniteLoss {
            epoch: cfg.epochs,
            step: 0,
            last_finite,
        });
    }
    Ok((net, report))
}

/// Regress `v(q_t, t)` onto `qT - q0` along `q_t = (1-t) q0 + t qT`, one `t`
/// per sample. Only the stored pairs are read.
pub fn train_forecast_flow(dataset: &Dataset, cfg: &TrainConfig) -> Result<(VelocityField, TrainReport)> {
    let d = dataset.dims.len();
    let x0 = to_matrix(d, dataset.pairs.iter().map(|p| &p.0), &dataset.norm.source);
    let x1 = to_matrix(d, dataset.pairs.iter().map(|p| &p.1), &dataset.norm.target);
    let (net, report) = run(dataset.len(), d, cfg, |i, t, _, qt, target| {
        let (a, b) = (x0.row(i), x1.row(i));
        for k in 0..d {
            qt[k] = (1.0 - t) * a[k] + t * b[k];
            target[k] = b[k] - a[k];
        }
    })?;
    let field = VelocityField::new(net, FieldKind::Forecast, dataset.norm.clone(), dataset.horizon)?;
    Ok((field, report))
}

/// Regress `u(q_t, t)` onto `z - q0` along `q_t = (1-t) q0 + t z`, with a
/// fresh `z ~ N(0, I)` per sample and step. Uses the source side of each pair.
pub fn train_gaussify_flow(states: &Dataset, cfg: &TrainConfig) -> Result<(VelocityField, TrainReport)> {
    let d = states.dims.len();
    let x0 = to_matrix(d, states.pairs.iter().map(|p| &p.0), &states.norm.source);
    let (net, report) = run(states.len(), d, cfg, |i, t, r, qt, target| {
        let a = x0.row(i);
        for k in 0..d {
            let z: f64 = r.sample(StandardNormal);
            qt[k] = (1.0 - t) * a[k] + t * z;
            target[k] = z - a[k];
        }
    })?;
    let norm = NormStats {
        source: states.norm.source.clone(),
        target: Standardizer::identity(d),
    };
    let field = VelocityField::new(net, FieldKind::Gaussify, norm, 0.0)?;
    Ok((field, report))
}

/// Evaluation-only velocity-matching loss.
pub fn fm_loss(field: &VelocityField, batch: &Batch) -> Result<f64> {
    field.net.loss(batch)
}

/// Interpolated points and target velocities for `pairs` at the given times,
/// in the field's standardized coordinates.
pub fn forecast_batch(field: &VelocityField, pairs: &[(State, State)], times: &[f64]) -> Result<Batch> {
    if pairs.len() != times.len() {
        return Err(Error::shape(pairs.len(), times.len()));
    }
    let d = field.state_dim();
    let mut batch = Batch {
        states: Array2::zeros((pairs.len(), d)),
        times: times.to_vec(),
        targets: Array2::zeros((pairs.len(), d)),
    };
    for (i, ((a, b), &t)) in pairs.iter().zip(times).enumerate() {
        let a = field.norm.source.apply(a);
        let b = field.norm.target.apply(b);
        batch.states.row_mut(i).assign(&interpolate(&a, &b, t)?);
        batch.targets.row_mut(i).assign(&(&b - &a));
    }
    Ok(batch)
}
