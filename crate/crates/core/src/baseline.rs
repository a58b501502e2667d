//! Single-lag vector autoregression `qT ≈ A q0 + b`, fitted by least squares.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2};

use crate::dataset::Dataset;
use crate::ensemble::{Ensemble, EnsembleMeta};
use crate::error::{Error, Result};
use crate::state::State;

/// Ridge added to the normal equations when the design is numerically rank deficient.
pub const RIDGE_LAMBDA: f64 = 1e-8;

/// Reciprocal condition estimate below which the plain normal equations are
/// considered singular.
const RCOND_LIMIT: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct VarModel {
    pub a: Array2<f64>,
    pub b: Array1<f64>,
    /// Whether the ridge fallback was needed.
    pub ridged: bool,
}

impl VarModel {
    pub fn new(a: Array2<f64>, b: Array1<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() || a.nrows() != b.len() {
            return Err(Error::shape(a.nrows(), b.len()));
        }
        if !a.iter().chain(b.iter()).all(|v| v.is_finite()) {
            return Err(Error::Fit("non-finite coefficients".into()));
        }
        Ok(VarModel {
            a,
            b,
            ridged: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn predict(&self, q0: &State) -> Result<State> {
        if q0.len() != self.dim() {
            return Err(Error::shape(self.dim(), q0.len()));
        }
        Ok(self.a.dot(q0) + &self.b)
    }
}

/// Ordinary least squares on `[q0, 1] -> qT` via the normal equations.
pub fn var_fit(dataset: &Dataset) -> Result<VarModel> {
    let d = dataset.dims.len();
    let n = dataset.len();
    if n < d + 1 {
        return Err(Error::Fit(format!(
            "need at least {} pairs for a {d}-dimensional fit, got {n}",
            d + 1
        )));
    }
    let p = d + 1;
    let mut gram = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DMatrix::<f64>::zeros(p, d);
    let mut x = DVector::<f64>::zeros(p);
    for (q0, qt) in &dataset.pairs {
        for k in 0..d {
            x[k] = q0[k];
        }
        x[d] = 1.0;
        gram.ger(1.0, &x, &x, 1.0);
        for (j, &y) in qt.iter().enumerate() {
            for k in 0..p {
                rhs[(k, j)] += x[k] * y;
            }
        }
    }

    let solve = |g: DMatrix<f64>| -> Option<DMatrix<f64>> {
        let chol = g.cholesky()?;
        let l = chol.l();
        let diag = l.diagonal();
        let (lo, hi) = diag
            .iter()
            .fold((f64::INFINITY, 0.0_f64), |(lo, hi), v| (lo.min(v.abs()), hi.max(v.abs())));
        if !(lo > 0.0) || (lo / hi).powi(2) < RCOND_LIMIT {
            return None;
        }
        Some(chol.solve(&rhs))
    };

    let (coef, ridged) = match solve(gram.clone()) {
        Some(c) => (c, false),
        None => {
            let ridged = &gram + DMatrix::<f64>::identity(p, p) * RIDGE_LAMBDA;
            let c = ridged
                .cholesky()
                .map(|ch| ch.solve(&rhs))
                .ok_or_else(|| Error::Fit("design matrix is singular even with ridge".into()))?;
            (c, true)
        }
    };

    let a = Array2::from_shape_fn((d, d), |(j, k)| coef[(k, j)]);
    let b = Array1::from_shape_fn(d, |j| coef[(d, j)]);
    let mut model = VarModel::new(a, b)?;
    model.ridged = ridged;
    Ok(model)
}

/// Apply the affine map memberwise.
pub fn var_predict(model: &VarModel, e0: &Ensemble) -> Result<Ensemble> {
    if e0.dims().len() != model.dim() {
        return Err(Error::shape(model.dim(), e0.dims().len()));
    }
    let members = e0
        .members()
        .iter()
        .map(|q| model.predict(q))
        .collect::<Result<Vec<_>>>()?;
    let meta = EnsembleMeta {
        source: "var".into(),
        ..e0.meta.clone()
    };
    Ensemble::new(e0.dims(), members, meta)?.with_origins(e0.members().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::DatasetMeta;
    use crate::rng;
    use crate::state::Dims;
    use ndarray::array;
    use rand::Rng as _;

    fn dataset(pairs: Vec<(State, State)>) -> Dataset {
        let d = pairs[0].0.len();
        Dataset::new(Dims::vector(d), pairs, 1.0, DatasetMeta::new("t", 0)).unwrap()
    }

    fn random_pairs(n: usize, d: usize, seed: u64) -> Vec<(State, State)> {
        let mut r = rng::from_seed(seed);
        (0..n)
            .map(|_| {
                (
                    Array1::from_shape_fn(d, |_| r.random_range(-1.0..1.0)),
                    Array1::from_shape_fn(d, |_| r.random_range(-1.0..1.0)),
                )
            })
            .collect()
    }

    fn residuals(model: &VarModel, ds: &Dataset) -> Vec<State> {
        ds.pairs
            .iter()
            .map(|(q0, qt)| model.predict(q0).unwrap() - qt)
            .collect()
    }

    #[test]
    fn recovers_exact_linear_model() {
        let mut r = rng::from_seed(1);
        let pairs = (0..20)
            .map(|_| {
                let q0 = array![r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)];
                let qt = q0.mapv(|v| 2.0 * v + 1.0);
                (q0, qt)
            })
            .collect();
        let m = var_fit(&dataset(pairs)).unwrap();
        for j in 0..2 {
            for k in 0..2 {
                let expect = if j == k { 2.0 } else { 0.0 };
                assert!((m.a[[j, k]] - expect).abs() < 1e-8);
            }
            assert!((m.b[j] - 1.0).abs() < 1e-8);
        }
        assert!(!m.ridged);
    }

    #[test]
    fn interpolates_minimal_sample() {
        let ds = dataset(random_pairs(4, 3, 2));
        let m = var_fit(&ds).unwrap();
        for r in residuals(&m, &ds) {
            assert!(r.iter().all(|v| v.abs() < 1e-8), "{r}");
        }
    }

    #[test]
    fn too_few_pairs() {
        let ds = dataset(random_pairs(3, 3, 2));
        assert!(matches!(var_fit(&ds), Err(Error::Fit(_))));
    }

    #[test]
    fn residuals_orthogonal_to_regressors() {
        let ds = dataset(random_pairs(200, 3, 5));
        let m = var_fit(&ds).unwrap();
        let res = residuals(&m, &ds);
        for j in 0..3 {
            let mut dots = [0.0; 4];
            for ((q0, _), r) in ds.pairs.iter().zip(&res) {
                for k in 0..3 {
                    dots[k] += q0[k] * r[j];
                }
                dots[3] += r[j];
            }
            assert!(dots.iter().all(|v| v.abs() < 1e-8), "{dots:?}");
        }
    }

    #[test]
    fn rank_deficient_design_uses_ridge() {
        // Second coordinate is a copy of the first.
        let mut r = rng::from_seed(9);
        let pairs = (0..30)
            .map(|_| {
                let x = r.random_range(-1.0..1.0);
                (array![x, x], array![3.0 * x, -x + 0.5])
            })
            .collect();
        let ds = dataset(pairs);
        let m = var_fit(&ds).unwrap();
        assert!(m.ridged);
        for res in residuals(&m, &ds) {
            assert!(res.iter().all(|v| v.abs() < 1e-6));
        }
    }

    #[test]
    fn refit_is_bit_identical() {
        let ds = dataset(random_pairs(50, 2, 3));
        assert_eq!(var_fit(&ds).unwrap(), var_fit(&ds).unwrap());
    }

    #[test]
    fn identity_model_and_permutations() {
        let model = VarModel::new(Array2::eye(2), Array1::zeros(2)).unwrap();
        let e = Ensemble::new(
            Dims::vector(2),
            vec![array![1.0, 2.0], array![3.0, 4.0], array![5.0, 6.0]],
            EnsembleMeta::new("x"),
        )
        .unwrap();
        let out = var_predict(&model, &e).unwrap();
        assert_eq!(out.members(), e.members());

        let fitted = var_fit(&dataset(random_pairs(10, 2, 1))).unwrap();
        let perm = [2, 0, 1];
        let a = var_predict(&fitted, &e.permuted(&perm)).unwrap();
        let b = var_predict(&fitted, &e).unwrap().permuted(&perm);
        assert_eq!(a.members(), b.members());
        assert!(var_predict(&fitted, &Ensemble::new(Dims::vector(1), vec![array![1.0]], EnsembleMeta::new("x")).unwrap()).is_err());
    }
}
