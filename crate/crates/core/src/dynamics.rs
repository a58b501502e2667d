//! Ground-truth systems: Lotka-Volterra with a classic RK4 oracle, a periodic
//! moving-blob image generator, and the observation operator.

use ndarray::{Array1, Array2};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::dataset::{Dataset, DatasetMeta};
use crate::error::{Error, Result};
use crate::rng;
use crate::state::{Dims, State};

/// Oracle step for the long-horizon predator-prey runs.
pub const ORACLE_DT: f64 = 1e-3;

const MAX_REDRAWS: usize = 1000;

/// Growth, predation, conversion and death rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LvParams {
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
    pub p4: f64,
}

impl Default for LvParams {
    fn default() -> Self {
        LvParams {
            p1: 2.0 / 3.0,
            p2: 4.0 / 3.0,
            p3: 1.0,
            p4: 1.0,
        }
    }
}

impl LvParams {
    pub fn new(p1: f64, p2: f64, p3: f64, p4: f64) -> Result<Self> {
        let p = LvParams { p1, p2, p3, p4 };
        if [p1, p2, p3, p4].iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(p)
        } else {
            Err(Error::Config(format!(
                "Lotka-Volterra rates must be positive, got {p:?}"
            )))
        }
    }

    /// Coexistence equilibrium `(p4/p3, p1/p2)`.
    pub fn fixed_point(&self) -> [f64; 2] {
        [self.p4 / self.p3, self.p1 / self.p2]
    }
}

pub fn lv_rhs(y: &[f64; 2], p: &LvParams) -> [f64; 2] {
    let [prey, pred] = *y;
    [
        p.p1 * prey - p.p2 * prey * pred,
        p.p3 * prey * pred - p.p4 * pred,
    ]
}

/// Conserved quantity `V = p3*y1 - p4*ln(y1) + p2*y2 - p1*ln(y2)`.
pub fn lv_first_integral(y: &[f64; 2], p: &LvParams) -> f64 {
    p.p3 * y[0] - p.p4 * y[0].ln() + p.p2 * y[1] - p.p1 * y[1].ln()
}

fn check_span(t0: f64, t1: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Config(format!("step size must be positive, got {dt}")));
    }
    if !(t1 > t0) {
        return Err(Error::Config(format!("need t1 > t0, got [{t0}, {t1}]")));
    }
    // Tolerate spans that are an integer number of steps up to rounding.
    let steps = ((t1 - t0) / dt - 1e-9).ceil().max(1.0);
    Ok(steps as usize)
}

#[inline]
fn axpy<const D: usize>(y: &[f64; D], h: f64, k: &[f64; D]) -> [f64; D] {
    std::array::from_fn(|i| y[i] + h * k[i])
}

/// Classic fourth-order Runge-Kutta from `t0` to `t1`; `visit` sees every
/// accepted `(t, y)`, starting with the initial state. The final step is
/// shortened so the last visit is exactly at `t1`.
pub fn rk4_visit<const D: usize>(
    rhs: impl Fn(f64, &[f64; D]) -> [f64; D],
    y0: [f64; D],
    t0: f64,
    t1: f64,
    dt: f64,
    mut visit: impl FnMut(f64, &[f64; D]),
) -> Result<[f64; D]> {
    let steps = check_span(t0, t1, dt)?;
    let mut y = y0;
    visit(t0, &y);
    for k in 0..steps {
        let t = t0 + k as f64 * dt;
        let t_next = if k + 1 == steps { t1 } else { t0 + (k + 1) as f64 * dt };
        let h = t_next - t;
        let k1 = rhs(t, &y);
        let k2 = rhs(t + 0.5 * h, &axpy(&y, 0.5 * h, &k1));
        let k3 = rhs(t + 0.5 * h, &axpy(&y, 0.5 * h, &k2));
        let k4 = rhs(t + h, &axpy(&y, h, &k3));
        for i in 0..D {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if !y.iter().all(|v| v.is_finite()) {
            return Err(Error::Divergence {
                at: format!("t = {t_next}"),
            });
        }
        visit(t_next, &y);
    }
    Ok(y)
}

/// Full RK4 trajectory, `(t, y)` per step including both endpoints.
pub fn rk4_integrate<const D: usize>(
    rhs: impl Fn(f64, &[f64; D]) -> [f64; D],
    y0: [f64; D],
    t0: f64,
    t1: f64,
    dt: f64,
) -> Result<Vec<(f64, [f64; D])>> {
    let mut traj = Vec::with_capacity(check_span(t0, t1, dt)? + 1);
    rk4_visit(rhs, y0, t0, t1, dt, |t, y| traj.push((t, *y)))?;
    Ok(traj)
}

/// Largest relative deviation of the first integral along an RK4 run.
pub fn lv_max_drift(y0: [f64; 2], p: &LvParams, horizon: f64, dt: f64) -> Result<f64> {
    let v0 = lv_first_integral(&y0, p);
    let mut worst = 0.0_f64;
    rk4_visit(
        |_, y| lv_rhs(y, p),
        y0,
        0.0,
        horizon,
        dt,
        |_, y| worst = worst.max(((lv_first_integral(y, p) - v0) / v0).abs()),
    )?;
    Ok(worst)
}

/// How initial predator-prey states are drawn.
#[derive(Debug, Clone, PartialEq)]
pub enum InitSampler {
    /// Isotropic normal around `mean`.
    Gaussian { mean: [f64; 2], std: f64 },
    /// Prey fixed at 1, predators uniform on `[lo, hi)`.
    FixedY1UniformY2 { lo: f64, hi: f64 },
}

impl InitSampler {
    pub fn paper_gaussian() -> Self {
        InitSampler::Gaussian {
            mean: [0.1, 0.3],
            std: 0.05,
        }
    }

    fn draw(&self, rng: &mut rng::Rng) -> [f64; 2] {
        match *self {
            InitSampler::Gaussian { mean, std } => {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                [mean[0] + std * a, mean[1] + std * b]
            }
            InitSampler::FixedY1UniformY2 { lo, hi } => [1.0, lo + (hi - lo) * rng.random::<f64>()],
        }
    }

    /// Draw until both components are strictly positive; invalid draws are
    /// rejected, never clipped.
    pub fn draw_positive(&self, rng: &mut rng::Rng) -> Result<[f64; 2]> {
        for _ in 0..MAX_REDRAWS {
            let y = self.draw(rng);
            if y.iter().all(|v| *v > 0.0 && v.is_finite()) {
                return Ok(y);
            }
        }
        Err(Error::Generation(format!(
            "{self:?} produced no positive state in {MAX_REDRAWS} draws"
        )))
    }

    fn describe(&self) -> String {
        match self {
            InitSampler::Gaussian { mean, std } => {
                format!("gaussian(mean=[{}, {}], std={std})", mean[0], mean[1])
            }
            InitSampler::FixedY1UniformY2 { lo, hi } => format!("fixed_y1_uniform_y2({lo}, {hi})"),
        }
    }
}

/// Initial states only: sample `i` uses stream `(seed, i)`, matching
/// [`gen_pp_dataset`].
pub fn sample_pp_initial(n: usize, sampler: &InitSampler, seed: u64) -> Result<Vec<[f64; 2]>> {
    (0..n)
        .into_par_iter()
        .map(|i| sampler.draw_positive(&mut rng::stream(seed, i as u64)))
        .collect()
}

/// Propagate each initial state with the RK4 oracle.
pub fn lv_propagate(
    initial: &[[f64; 2]],
    p: &LvParams,
    horizon: f64,
    dt: f64,
) -> Result<Vec<[f64; 2]>> {
    initial
        .par_iter()
        .map(|y0| rk4_visit(|_, y| lv_rhs(y, p), *y0, 0.0, horizon, dt, |_, _| {}))
        .collect()
}

/// `n` pairs `(y0, y(horizon))` with RK4 at step `dt`.
pub fn gen_pp_dataset(
    n: usize,
    horizon: f64,
    sampler: &InitSampler,
    p: &LvParams,
    seed: u64,
    dt: f64,
) -> Result<Dataset> {
    let initial = sample_pp_initial(n, sampler, seed)?;
    let finals = if n == 0 {
        Vec::new()
    } else {
        lv_propagate(&initial, p, horizon, dt)?
    };
    let pairs = initial
        .iter()
        .zip(&finals)
        .map(|(a, b)| (Array1::from(a.to_vec()), Array1::from(b.to_vec())))
        .collect();
    let generator = match sampler {
        InitSampler::Gaussian { .. } => "pp-gaussian",
        InitSampler::FixedY1UniformY2 { .. } => "pp-uniform-y2",
    };
    let meta = DatasetMeta::new(generator, seed)
        .with("sampler", sampler.describe())
        .with("lv_params", format!("{} {} {} {}", p.p1, p.p2, p.p3, p.p4))
        .with("dt", dt);
    Dataset::new(Dims::vector(2), pairs, horizon, meta)
}

/// Moving-blob generator settings.
#[derive(Debug, Clone, PartialEq)]
pub struct BlobConfig {
    pub height: usize,
    pub width: usize,
    /// Blob radius (Gaussian sigma) in pixels.
    pub radius: f64,
    /// Base velocity in pixels per unit time, `(rows, cols)`.
    pub velocity: [f64; 2],
    pub velocity_jitter: f64,
    pub horizon: f64,
    /// Peak intensity is drawn uniformly from this range (inside `[0, 1]`).
    pub amplitude: [f64; 2],
}

impl BlobConfig {
    pub fn new(height: usize, width: usize, velocity_jitter: f64) -> Self {
        BlobConfig {
            height,
            width,
            radius: 2.0,
            velocity: [1.0, 2.0],
            velocity_jitter,
            horizon: 2.0,
            amplitude: [0.5, 1.0],
        }
    }
}

/// Periodic Gaussian blob with peak `amp` at `(cy, cx)`.
pub fn render_blob(height: usize, width: usize, cy: f64, cx: f64, radius: f64, amp: f64) -> Array2<f64> {
    let wrap = |d: f64, n: usize| {
        let n = n as f64;
        let d = d.rem_euclid(n);
        d.min(n - d)
    };
    let two_r2 = 2.0 * radius * radius;
    Array2::from_shape_fn((height, width), |(r, c)| {
        let dy = wrap(r as f64 - cy, height);
        let dx = wrap(c as f64 - cx, width);
        amp * (-(dy * dy + dx * dx) / two_r2).exp()
    })
}

/// Circular shift by whole pixels; a permutation, so mass is preserved.
pub fn roll(frame: &Array2<f64>, dy: i64, dx: i64) -> Array2<f64> {
    let (h, w) = frame.dim();
    Array2::from_shape_fn((h, w), |(r, c)| {
        let sr = (r as i64 - dy).rem_euclid(h as i64) as usize;
        let sc = (c as i64 - dx).rem_euclid(w as i64) as usize;
        frame[[sr, sc]]
    })
}

/// Pairs `(frame at 0, frame at horizon)` of a blob advected on a torus. The
/// displacement is rounded to whole pixels.
pub fn gen_blob_dataset(n: usize, cfg: &BlobConfig, seed: u64) -> Result<Dataset> {
    if cfg.height < 8 || cfg.width < 8 {
        return Err(Error::Config(format!(
            "blob grids must be at least 8x8, got {}x{}",
            cfg.height, cfg.width
        )));
    }
    let pairs: Vec<(State, State)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, i as u64);
            let cy = r.random::<f64>() * cfg.height as f64;
            let cx = r.random::<f64>() * cfg.width as f64;
            let amp = cfg.amplitude[0] + (cfg.amplitude[1] - cfg.amplitude[0]) * r.random::<f64>();
            let jy: f64 = r.sample(StandardNormal);
            let jx: f64 = r.sample(StandardNormal);
            let vy = cfg.velocity[0] + cfg.velocity_jitter * jy;
            let vx = cfg.velocity[1] + cfg.velocity_jitter * jx;
            let frame = render_blob(cfg.height, cfg.width, cy, cx, cfg.radius, amp);
            let moved = roll(
                &frame,
                (vy * cfg.horizon).round() as i64,
                (vx * cfg.horizon).round() as i64,
            );
            (
                Array1::from_iter(frame.iter().copied()),
                Array1::from_iter(moved.iter().copied()),
            )
        })
        .collect();
    let meta = DatasetMeta::new("blob", seed)
        .with("radius", cfg.radius)
        .with("velocity", format!("{} {}", cfg.velocity[0], cfg.velocity[1]))
        .with("velocity_jitter", cfg.velocity_jitter)
        .with("amplitude", format!("{} {}", cfg.amplitude[0], cfg.amplitude[1]));
    Dataset::new(Dims::grid(1, cfg.height, cfg.width), pairs, cfg.horizon, meta)
}

/// `q = S y + eps`, `eps ~ N(0, sigma^2 I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationModel {
    selector: Array2<f64>,
    noise_sigma: f64,
}

impl ObservationModel {
    pub fn new(selector: Array2<f64>, noise_sigma: f64) -> Result<Self> {
        if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
            return Err(Error::Config(format!("noise sigma must be >= 0, got {noise_sigma}")));
        }
        if selector.nrows() == 0 || selector.nrows() > selector.ncols() {
            return Err(Error::Config(format!(
                "selector must have between 1 and {} rows, got {}",
                selector.ncols(),
                selector.nrows()
            )));
        }
        if !selector.iter().all(|v| v.is_finite()) {
            return Err(Error::Config("selector has non-finite entries".into()));
        }
        Ok(ObservationModel {
            selector,
            noise_sigma,
        })
    }

    pub fn identity(dim: usize, noise_sigma: f64) -> Result<Self> {
        Self::new(Array2::eye(dim), noise_sigma)
    }

    /// Keep the listed components of the full state.
    pub fn select(dim: usize, rows: &[usize], noise_sigma: f64) -> Result<Self> {
        let mut s = Array2::zeros((rows.len(), dim));
        for (i, &r) in rows.iter().enumerate() {
            if r >= dim {
                return Err(Error::Config(format!("row {r} outside state of size {dim}")));
            }
            s[[i, r]] = 1.0;
        }
        Self::new(s, noise_sigma)
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    pub fn observe(&self, y: &State, seed: u64) -> Result<State> {
        if y.len() != self.selector.ncols() {
            return Err(Error::shape(self.selector.ncols(), y.len()));
        }
        let mut q = self.selector.dot(y);
        if self.noise_sigma > 0.0 {
            let mut r = rng::from_seed(seed);
            for v in q.iter_mut() {
                let e: f64 = StandardNormal.sample(&mut r);
                *v += self.noise_sigma * e;
            }
        }
        Ok(q)
    }
}
