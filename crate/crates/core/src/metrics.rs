//! Ensemble comparison: pooled scores, the ensemble mean and SD states, and
//! MSE / MAE / SSIM between states.
//!
//! All standard deviations are population (divide-by-M) statistics.

use std::fmt;

use ndarray::Array1;

use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::state::{Dims, State};

pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const SSIM_WINDOW: usize = 8;

/// Elementwise mean over members.
pub fn ensemble_mean_state(e: &Ensemble) -> State {
    let m = e.len() as f64;
    let mut acc = Array1::zeros(e.dims().len());
    for s in e.members() {
        acc += s;
    }
    acc / m
}

/// Elementwise population standard deviation over members.
pub fn ensemble_sd_state(e: &Ensemble) -> State {
    let mean = ensemble_mean_state(e);
    let mut acc: State = Array1::zeros(e.dims().len());
    for s in e.members() {
        let d = s - &mean;
        acc += &(&d * &d);
    }
    acc.mapv(|v| (v / e.len() as f64).sqrt())
}

/// Mean over every component of every member.
pub fn mean_score(e: &Ensemble) -> f64 {
    let n = (e.len() * e.dims().len()) as f64;
    e.members().iter().map(|s| s.sum()).sum::<f64>() / n
}

/// Square root of the pooled variance about [`mean_score`].
pub fn std_score(e: &Ensemble) -> f64 {
    let mu = mean_score(e);
    let n = (e.len() * e.dims().len()) as f64;
    let ss: f64 = e
        .members()
        .iter()
        .map(|s| s.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>())
        .sum();
    (ss / n).sqrt()
}

fn check_same(a: &State, b: &State) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(Error::Usage("cannot compare empty states".into()));
    }
    Ok(())
}

pub fn mse(a: &State, b: &State) -> Result<f64> {
    check_same(a, b)?;
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

pub fn mae(a: &State, b: &State) -> Result<f64> {
    check_same(a, b)?;
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

/// SSIM of one window from its first and second moments.
fn ssim_from_moments(mx: f64, my: f64, vx: f64, vy: f64, cxy: f64, c1: f64, c2: f64) -> f64 {
    ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
}

/// Mean SSIM over non-overlapping 8x8 uniform windows of every channel.
/// Rows or columns beyond the last full window are ignored.
pub fn ssim(a: &State, b: &State, dims: Dims, dynamic_range: f64) -> Result<f64> {
    dims.check(a)?;
    dims.check(b)?;
    if dims.height < SSIM_WINDOW || dims.width < SSIM_WINDOW {
        return Err(Error::Usage(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} grids, got {}x{}",
            dims.height, dims.width
        )));
    }
    if !(dynamic_range > 0.0 && dynamic_range.is_finite()) {
        return Err(Error::Config(format!("dynamic range must be positive, got {dynamic_range}")));
    }
    let c1 = (SSIM_K1 * dynamic_range).powi(2);
    let c2 = (SSIM_K2 * dynamic_range).powi(2);
    let (h, w) = (dims.height, dims.width);
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut total = 0.0;
    let mut windows = 0usize;
    for c in 0..dims.channels {
        let base = c * h * w;
        for wy in (0..=h - SSIM_WINDOW).step_by(SSIM_WINDOW) {
            for wx in (0..=w - SSIM_WINDOW).step_by(SSIM_WINDOW) {
                let at = |s: &State, r: usize, col: usize| s[base + (wy + r) * w + wx + col];
                let (mut sx, mut sy) = (0.0, 0.0);
                for r in 0..SSIM_WINDOW {
                    for col in 0..SSIM_WINDOW {
                        sx += at(a, r, col);
                        sy += at(b, r, col);
                    }
                }
                let (mx, my) = (sx / n, sy / n);
                let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
                for r in 0..SSIM_WINDOW {
                    for col in 0..SSIM_WINDOW {
                        let dx = at(a, r, col) - mx;
                        let dy = at(b, r, col) - my;
                        vx += dx * dx;
                        vy += dy * dy;
                        cxy += dx * dy;
                    }
                }
                total += ssim_from_moments(mx, my, vx / n, vy / n, cxy / n, c1, c2);
                windows += 1;
            }
        }
    }
    Ok(total / windows as f64)
}

/// One comparison row: prediction vs truth.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub mean_score_pred: f64,
    pub mean_score_true: f64,
    pub std_score_pred: f64,
    pub std_score_true: f64,
    pub mean_state_mse: f64,
    pub mean_state_mae: f64,
    /// `None` where SSIM is undefined (non-grid states).
    pub mean_state_ssim: Option<f64>,
    pub sd_state_mse: f64,
    pub sd_state_mae: f64,
    pub sd_state_ssim: Option<f64>,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "method,mean_score,std_score,mean_state_mse,mean_state_mae,mean_state_ssim,sd_state_mse,sd_state_mae,sd_state_ssim,true_mean_score,true_std_score";

    pub fn csv_row(&self, method: &str) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6e}"));
        format!(
            "{method},{:.6e},{:.6e},{:.6e},{:.6e},{},{:.6e},{:.6e},{},{:.6e},{:.6e}",
            self.mean_score_pred,
            self.std_score_pred,
            self.mean_state_mse,
            self.mean_state_mae,
            opt(self.mean_state_ssim),
            self.sd_state_mse,
            self.sd_state_mae,
            opt(self.sd_state_ssim),
            self.mean_score_true,
            self.std_score_true,
        )
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"));
        writeln!(f, "                 predicted     truth")?;
        writeln!(f, "mean score     {:>11.4e} {:>11.4e}", self.mean_score_pred, self.mean_score_true)?;
        writeln!(f, "std dev score  {:>11.4e} {:>11.4e}", self.std_score_pred, self.std_score_true)?;
        writeln!(
            f,
            "mean state     mse {:.3e}  mae {:.3e}  ssim {}",
            self.mean_state_mse,
            self.mean_state_mae,
            opt(self.mean_state_ssim)
        )?;
        write!(
            f,
            "sd state       mse {:.3e}  mae {:.3e}  ssim {}",
            self.sd_state_mse,
            self.sd_state_mae,
            opt(self.sd_state_ssim)
        )
    }
}

/// Compare two ensembles of the same layout. `dynamic_range` is the declared
/// value range of the data and only affects SSIM.
pub fn compare(pred: &Ensemble, truth: &Ensemble, dynamic_range: f64) -> Result<MetricsReport> {
    if pred.dims() != truth.dims() {
        return Err(Error::shape(truth.dims().len(), pred.dims().len()));
    }
    let dims = pred.dims();
    let (pm, tm) = (ensemble_mean_state(pred), ensemble_mean_state(truth));
    let (ps, ts) = (ensemble_sd_state(pred), ensemble_sd_state(truth));
    let grid_ssim = |a: &State, b: &State| -> Result<Option<f64>> {
        if dims.is_grid() && dims.height >= SSIM_WINDOW && dims.width >= SSIM_WINDOW {
            ssim(a, b, dims, dynamic_range).map(Some)
        } else {
            Ok(None)
        }
    };
    Ok(MetricsReport {
        mean_score_pred: mean_score(pred),
        mean_score_true: mean_score(truth),
        std_score_pred: std_score(pred),
        std_score_true: std_score(truth),
        mean_state_mse: mse(&pm, &tm)?,
        mean_state_mae: mae(&pm, &tm)?,
        mean_state_ssim: grid_ssim(&pm, &tm)?,
        sd_state_mse: mse(&ps, &ts)?,
        sd_state_mae: mae(&ps, &ts)?,
        sd_state_ssim: grid_ssim(&ps, &ts)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::EnsembleMeta;
    use crate::rng;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn ens(dims: Dims, members: Vec<State>) -> Ensemble {
        Ensemble::new(dims, members, EnsembleMeta::new("t")).unwrap()
    }

    fn random_ensemble(dims: Dims, m: usize, seed: u64) -> Ensemble {
        let mut r = rng::from_seed(seed);
        let members = (0..m)
            .map(|_| Array1::from_shape_fn(dims.len(), |_| r.random_range(-2.0..3.0)))
            .collect();
        ens(dims, members)
    }

    /// Flat-loop oracle over `[member][component]`.
    fn oracle_mean_sd(e: &Ensemble) -> (Vec<f64>, Vec<f64>) {
        let m = e.len();
        let d = e.dims().len();
        let mut mean = vec![0.0; d];
        for i in 0..m {
            for k in 0..d {
                mean[k] += e.members()[i][k];
            }
        }
        for v in mean.iter_mut() {
            *v /= m as f64;
        }
        let mut sd = vec![0.0; d];
        for i in 0..m {
            for k in 0..d {
                sd[k] += (e.members()[i][k] - mean[k]).powi(2);
            }
        }
        for v in sd.iter_mut() {
            *v = (*v / m as f64).sqrt();
        }
        (mean, sd)
    }

    fn oracle_scores(e: &Ensemble) -> (f64, f64) {
        let flat: Vec<f64> = e.members().iter().flat_map(|s| s.iter().copied()).collect();
        let n = flat.len() as f64;
        let mu = flat.iter().sum::<f64>() / n;
        let var = flat.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
        (mu, var.sqrt())
    }

    #[test]
    fn single_member_statistics() {
        let e = ens(Dims::vector(2), vec![array![0.3, -1.0]]);
        assert_eq!(ensemble_mean_state(&e), array![0.3, -1.0]);
        assert_eq!(ensemble_sd_state(&e), array![0.0, 0.0]);
    }

    #[test]
    fn small_hand_examples() {
        let e = ens(Dims::vector(2), vec![array![0.0, 0.0], array![2.0, 4.0]]);
        assert_eq!(ensemble_mean_state(&e), array![1.0, 2.0]);
        assert_eq!(ensemble_sd_state(&e), array![1.0, 2.0]);
        let same = ens(Dims::vector(2), vec![array![1.0, 5.0]; 4]);
        assert_eq!(ensemble_sd_state(&same), array![0.0, 0.0]);
        let c = ens(Dims::vector(3), vec![array![0.7, 0.7, 0.7]; 5]);
        assert!((mean_score(&c) - 0.7).abs() < 1e-15);
        assert!(std_score(&c) < 1e-15);
    }

    #[test]
    fn mse_mae_examples() {
        let a = array![1.0, -2.0, 0.5];
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        assert_eq!(mae(&a, &a).unwrap(), 0.0);
        let b = a.mapv(|v| v + 2.0);
        assert_eq!(mse(&a, &b).unwrap(), 4.0);
        assert_eq!(mae(&a, &b).unwrap(), 2.0);
        assert!(mse(&a, &array![1.0]).is_err());
    }

    #[test]
    fn ssim_identity_is_exactly_one() {
        let e = random_ensemble(Dims::grid(3, 16, 16), 1, 4);
        let x = &e.members()[0];
        assert_eq!(ssim(x, x, e.dims(), 1.0).unwrap(), 1.0);
    }

    #[test]
    fn ssim_constant_images_closed_form() {
        let dims = Dims::grid(1, 8, 8);
        let a = Array1::zeros(64);
        let b = Array1::ones(64);
        let c1 = (0.01f64 * 1.0).powi(2);
        let c2 = (0.03f64 * 1.0).powi(2);
        let expect = (c1 * c2) / ((1.0 + c1) * c2);
        let got = ssim(&a, &b, dims, 1.0).unwrap();
        assert!((got - expect).abs() < 1e-15, "{got} vs {expect}");
        assert!((got - 1e-4 / (1.0 + 1e-4)).abs() < 1e-15);
    }

    #[test]
    fn ssim_rejects_small_grids() {
        let dims = Dims::grid(1, 7, 8);
        let a = Array1::zeros(56);
        assert!(ssim(&a, &a, dims, 1.0).is_err());
    }

    #[test]
    fn compare_identical_ensembles() {
        let e = random_ensemble(Dims::grid(1, 16, 16), 6, 2);
        let r = compare(&e, &e, 1.0).unwrap();
        assert_eq!(r.mean_state_mse, 0.0);
        assert_eq!(r.sd_state_mae, 0.0);
        assert_eq!(r.mean_score_pred, r.mean_score_true);
        assert_eq!(r.mean_state_ssim, Some(1.0));
        assert_eq!(r.sd_state_ssim, Some(1.0));

        let v = random_ensemble(Dims::vector(2), 6, 2);
        let r = compare(&v, &v, 1.0).unwrap();
        assert_eq!(r.mean_state_ssim, None);
        assert!(r.csv_row("x").contains(",NA,"));
        assert_eq!(r.csv_row("x").split(',').count(), MetricsReport::CSV_HEADER.split(',').count());
    }

    #[test]
    fn compare_rejects_mismatched_dims() {
        let a = random_ensemble(Dims::vector(2), 3, 1);
        let b = random_ensemble(Dims::vector(3), 3, 1);
        assert!(compare(&a, &b, 1.0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn statistics_match_flat_loop_oracle(
            c in 1usize..4, h in 1usize..17, w in 1usize..17, m in 1usize..51, seed in 0u64..1000,
        ) {
            let e = random_ensemble(Dims::grid(c, h, w), m, seed);
            let (om, osd) = oracle_mean_sd(&e);
            for (a, b) in ensemble_mean_state(&e).iter().zip(&om) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
            for (a, b) in ensemble_sd_state(&e).iter().zip(&osd) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
            let (mu, sd) = oracle_scores(&e);
            prop_assert!((mean_score(&e) - mu).abs() <= 1e-12);
            prop_assert!((std_score(&e) - sd).abs() <= 1e-12);
        }

        #[test]
        fn second_moment_identity(m in 1usize..30, d in 1usize..40, seed in 0u64..1000) {
            let e = random_ensemble(Dims::vector(d), m, seed);
            let n = (m * d) as f64;
            let second: f64 = e.members().iter().map(|s| s.iter().map(|v| v * v).sum::<f64>()).sum::<f64>() / n;
            let lhs = std_score(&e).powi(2) + mean_score(&e).powi(2);
            prop_assert!((lhs - second).abs() <= 1e-10);
        }

        #[test]
        fn report_is_permutation_invariant(m in 2usize..20, seed in 0u64..1000) {
            let dims = Dims::grid(1, 8, 16);
            let a = random_ensemble(dims, m, seed);
            let b = random_ensemble(dims, m + 1, seed + 1);
            let mut perm: Vec<usize> = (0..m).rev().collect();
            perm.rotate_left(seed as usize % m);
            let base = compare(&a, &b, 1.0).unwrap();
            let shuffled = compare(&a.permuted(&perm), &b, 1.0).unwrap();
            let close = |x: f64, y: f64| (x - y).abs() <= 1e-12 * x.abs().max(1.0);
            prop_assert!(close(base.mean_state_mse, shuffled.mean_state_mse));
            prop_assert!(close(base.sd_state_mse, shuffled.sd_state_mse));
            prop_assert!(close(base.mean_score_pred, shuffled.mean_score_pred));
            prop_assert!(close(base.std_score_pred, shuffled.std_score_pred));
            prop_assert!(close(base.mean_state_ssim.unwrap(), shuffled.mean_state_ssim.unwrap()));
        }

        #[test]
        fn ssim_is_symmetric_and_bounded(seed in 0u64..1000) {
            let e = random_ensemble(Dims::grid(2, 16, 8), 2, seed);
            let (x, y) = (&e.members()[0], &e.members()[1]);
            let s1 = ssim(x, y, e.dims(), 5.0).unwrap();
            let s2 = ssim(y, x, e.dims(), 5.0).unwrap();
            prop_assert_eq!(s1, s2);
            prop_assert!((-1.0..=1.0).contains(&s1));
        }
    }
}
