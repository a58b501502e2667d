//! Inference-time integration of learned fields over flow time `[0, 1]`,
//! Euler-Maruyama for the ODE/SDE cost contrast, and ensemble propagation.

use std::time::Instant;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::ensemble::{Ensemble, EnsembleMeta};
use crate::error::{Error, Result};
use crate::flow::VelocityField;
use crate::rng;
use crate::state::State;

/// Default number of Euler steps for trained fields.
pub const DEFAULT_STEPS: usize = 100;

/// Any component beyond this magnitude counts as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e8;

fn check_steps(n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::Usage("need at least one integration step".into()));
    }
    Ok(1.0 / n as f64)
}

fn diverged(x: &State) -> bool {
    x.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT)
}

/// Integrate in the field's own coordinates from flow time 0 to 1.
pub fn euler_forward_raw(field: &VelocityField, mut x: State, n: usize) -> Result<State> {
    let dt = check_steps(n)?;
    for j in 0..n {
        let t = j as f64 * dt;
        let u = field.velocity(x.as_slice().expect("contiguous"), t)?;
        x.scaled_add(dt, &u);
        if diverged(&x) {
            return Err(Error::Divergence {
                at: format!("step {}", j + 1),
            });
        }
    }
    Ok(x)
}

/// Integrate the negated field in its own coordinates from flow time 1 to 0.
pub fn euler_reverse_raw(field: &VelocityField, mut x: State, n: usize) -> Result<State> {
    let dt = check_steps(n)?;
    for j in 0..n {
        let t = 1.0 - j as f64 * dt;
        let u = field.velocity(x.as_slice().expect("contiguous"), t)?;
        x.scaled_add(-dt, &u);
        if diverged(&x) {
            return Err(Error::Divergence {
                at: format!("step {}", j + 1),
            });
        }
    }
    Ok(x)
}

/// `n` explicit Euler steps of the learned ODE, mapping a physical source
/// state to the field's target side (a forecast, or a latent for gaussify fields).
pub fn euler_forward(field: &VelocityField, q0: &State, n: usize) -> Result<State> {
    if q0.len() != field.state_dim() {
        return Err(Error::shape(field.state_dim(), q0.len()));
    }
    let x = euler_forward_raw(field, field.norm.source.apply(q0), n)?;
    Ok(field.norm.target.invert(&x))
}

/// `n` Euler steps backwards in flow time, undoing [`euler_forward`].
pub fn euler_reverse(field: &VelocityField, q1: &State, n: usize) -> Result<State> {
    if q1.len() != field.state_dim() {
        return Err(Error::shape(field.state_dim(), q1.len()));
    }
    let x = euler_reverse_raw(field, field.norm.target.apply(q1), n)?;
    Ok(field.norm.source.invert(&x))
}

/// Endpoints of `n_paths` Euler-Maruyama paths of
/// `dy = drift(t, y) dt + diffusion dW` over `[0, 1]`. Path `i` draws its
/// increments from stream `(seed, i)`.
pub fn euler_maruyama(
    drift: impl Fn(f64, f64) -> f64 + Sync,
    diffusion: f64,
    y0: f64,
    n: usize,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let h = check_steps(n)?;
    if n_paths == 0 {
        return Err(Error::Usage("need at least one path".into()));
    }
    let sqrt_h = h.sqrt();
    Ok((0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut r = rng::stream(seed, p as u64);
            let mut y = y0;
            for j in 0..n {
                let t = j as f64 * h;
                let dw: f64 = StandardNormal.sample(&mut r);
                y += h * drift(t, y) + diffusion * sqrt_h * dw;
            }
            y
        })
        .collect())
}

/// Push every member through [`euler_forward`]; member `i` of the result
/// depends only on member `i` of the input.
pub fn propagate_ensemble(field: &VelocityField, e0: &Ensemble, n: usize) -> Result<Ensemble> {
    if e0.dims().len() != field.state_dim() {
        return Err(Error::shape(field.state_dim(), e0.dims().len()));
    }
    let members: Vec<State> = e0
        .members()
        .par_iter()
        .enumerate()
        .map(|(i, q0)| {
            euler_forward(field, q0, n).map_err(|e| match e {
                Error::Divergence { at } => Error::Divergence {
                    at: format!("member {i}, {at}"),
                },
                other => other,
            })
        })
        .collect::<Result<_>>()?;
    let meta = EnsembleMeta {
        horizon: field.horizon,
        steps: n,
        ..e0.meta.clone()
    }
    .with("propagated_from", e0.meta.source.clone());
    let meta = EnsembleMeta {
        source: "forecast".into(),
        ..meta
    };
    Ensemble::new(e0.dims(), members, meta)?.with_origins(e0.members().to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    OdeEuler,
    SdeEulerMaruyama,
}

impl Scheme {
    pub fn label(self) -> &'static str {
        match self {
            Scheme::OdeEuler => "ODE",
            Scheme::SdeEulerMaruyama => "SDE",
        }
    }
}

/// Reference problems for the cost comparison: `dy = 1 dx` (ODE) and
/// `dy = dt + 0.2 dW` (SDE), both from `y(0) = 0` over `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostProblem {
    pub slope: f64,
    pub diffusion: f64,
    pub seed: u64,
}

impl Default for CostProblem {
    fn default() -> Self {
        CostProblem {
            slope: 1.0,
            diffusion: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub scheme: Scheme,
    pub steps: usize,
    pub op_count: u64,
    pub fn_call_count: u64,
    pub wall_time: f64,
    pub endpoint: f64,
}

impl CostReport {
    pub const CSV_HEADER: &'static str = "scheme,N,op_count,fn_calls,runtime_s";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.3e}",
            self.scheme.label(),
            self.steps,
            self.op_count,
            self.fn_call_count,
            self.wall_time
        )
    }
}

/// Instrumented single-path solve of the reference problem. Each ODE step is
/// one slope evaluation and two updates (`h*f`, add); each SDE step adds a
/// noise draw and its two updates (`0.2*dW`, add).
pub fn bench_integration(scheme: Scheme, n: usize, problem: &CostProblem) -> Result<CostReport> {
    let h = check_steps(n)?;
    let mut ops = 0u64;
    let mut calls = 0u64;
    let slope = |_t: f64, _y: f64, calls: &mut u64| {
        *calls += 1;
        problem.slope
    };
    let start = Instant::now();
    let mut y = 0.0_f64;
    match scheme {
        Scheme::OdeEuler => {
            for j in 0..n {
                let f = slope(j as f64 * h, y, &mut calls);
                let inc = h * f;
                y += inc;
                ops += 2;
            }
        }
        Scheme::SdeEulerMaruyama => {
            let mut r = rng::from_seed(problem.seed);
            let sqrt_h = h.sqrt();
            let mut noise = |calls: &mut u64| {
                *calls += 1;
                let z: f64 = StandardNormal.sample(&mut r);
                sqrt_h * z
            };
            for j in 0..n {
                let f = slope(j as f64 * h, y, &mut calls);
                let dw = noise(&mut calls);
                let drift = h * f;
                y += drift;
                let kick = problem.diffusion * dw;
                y += kick;
                ops += 4;
            }
        }
    }
    let wall_time = start.elapsed().as_secs_f64();
    Ok(CostReport {
        scheme,
        steps: n,
        op_count: ops,
        fn_call_count: calls,
        wall_time,
        endpoint: y,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::NormStats;
    use crate::flow::FieldKind;
    use crate::nn::{Activation, Mlp, TIME_EMBED};
    use crate::state::Dims;
    use ndarray::array;

    fn constant_field(c: &[f64]) -> VelocityField {
        let d = c.len();
        let mut net = Mlp::zeros(&[d + TIME_EMBED, 4, d], Activation::Tanh).unwrap();
        let last = net.layers().len() - 1;
        for (k, v) in c.iter().enumerate() {
            net.layers_mut()[last].bias[k] = *v;
        }
        VelocityField::new(net, FieldKind::Forecast, NormStats::identity(d), 1.0).unwrap()
    }

    fn close(a: &State, b: &State, tol: f64) -> bool {
        a.iter().zip(b.iter()).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn constant_field_forward_and_reverse() {
        let f = constant_field(&[0.5, -2.0]);
        let q0 = array![0.1, 0.3];
        for n in [1, 10, 100, 1000] {
            let q1 = euler_forward(&f, &q0, n).unwrap();
            assert!(close(&q1, &array![0.6, -1.7], 1e-12), "{n}: {q1}");
            let back = euler_reverse(&f, &q1, n).unwrap();
            assert!(close(&back, &q0, 1e-12));
            assert!(close(&euler_reverse(&f, &q0, n).unwrap(), &array![-0.4, 2.3], 1e-12));
        }
        let one = euler_forward(&f, &q0, 1).unwrap();
        let many = euler_forward(&f, &q0, 1000).unwrap();
        assert!(close(&one, &many, 1e-12));
    }

    #[test]
    fn zero_steps_rejected() {
        let f = constant_field(&[1.0]);
        assert!(matches!(euler_forward(&f, &array![0.0], 0), Err(Error::Usage(_))));
        assert!(euler_forward(&f, &array![0.0, 1.0], 3).is_err());
    }

    #[test]
    fn divergence_names_step() {
        let f = constant_field(&[1e9]);
        match euler_forward(&f, &array![0.0], 10) {
            Err(Error::Divergence { at }) => assert_eq!(at, "step 2"),
            other => panic!("{other:?}"),
        }
        let e = Ensemble::new(Dims::vector(1), vec![array![0.0]], EnsembleMeta::new("x")).unwrap();
        match propagate_ensemble(&f, &e, 10) {
            Err(Error::Divergence { at }) => assert!(at.starts_with("member 0")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn maruyama_without_noise_is_euler() {
        let ends = euler_maruyama(|_, _| 1.0, 0.0, 0.0, 100, 5, 1).unwrap();
        assert!(ends.iter().all(|y| (y - 1.0).abs() < 1e-12));
    }

    #[test]
    fn maruyama_moments() {
        let ends = euler_maruyama(|_, _| 1.0, 0.2, 0.0, 100, 10_000, 7).unwrap();
        let n = ends.len() as f64;
        let mean = ends.iter().sum::<f64>() / n;
        let sd = (ends.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((mean - 1.0).abs() < 0.01, "{mean}");
        assert!((sd - 0.2).abs() < 0.01, "{sd}");
        assert_eq!(ends, euler_maruyama(|_, _| 1.0, 0.2, 0.0, 100, 10_000, 7).unwrap());
    }

    #[test]
    fn bench_counts() {
        let p = CostProblem::default();
        for n in [1, 10, 100, 1000] {
            let r = bench_integration(Scheme::OdeEuler, n, &p).unwrap();
            assert_eq!((r.fn_call_count, r.op_count), (n as u64, 2 * n as u64));
            assert!((r.endpoint - 1.0).abs() < 1e-12);
            let r = bench_integration(Scheme::SdeEulerMaruyama, n, &p).unwrap();
            assert_eq!((r.fn_call_count, r.op_count), (2 * n as u64, 4 * n as u64));
        }
    }

    #[test]
    fn propagate_single_member_matches_forward() {
        let f = constant_field(&[0.25, 0.5]);
        let q = array![1.0, 2.0];
        let e = Ensemble::new(Dims::vector(2), vec![q.clone()], EnsembleMeta::new("x")).unwrap();
        let out = propagate_ensemble(&f, &e, 7).unwrap();
        assert_eq!(out.members()[0], euler_forward(&f, &q, 7).unwrap());
        assert_eq!(out.meta.steps, 7);
    }
}
