//! Joint Gaussian mixture over `(ε, ρ)` fitted by EM, and Gaussian mixture
//! regression of `ρ` given `ε`.

mod io;
mod kmeans;

use nalgebra::{Cholesky, SMatrix, SVector, Vector6};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::control::PseudoInverse;
use crate::error::{Error, Result};
use crate::exec::{self, Strategy};

pub use io::{load_model, save_model};
pub use kmeans::{kmeans_init, KMeans};

/// Input (`ε`) and output (`ρ`) dimensions.
pub const DIM_IN: usize = 6;
pub const DIM_OUT: usize = 6;
pub const JOINT_DIM: usize = DIM_IN + DIM_OUT;

/// Fewest training samples per mixture component accepted by [`em_fit`].
pub const MIN_SAMPLES_PER_COMPONENT: usize = 12;

pub type JointVector = SVector<f64, JOINT_DIM>;
pub type JointMatrix = SMatrix<f64, JOINT_DIM, JOINT_DIM>;
type InMatrix = SMatrix<f64, DIM_IN, DIM_IN>;
type CrossMatrix = SMatrix<f64, DIM_OUT, DIM_IN>;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// One `(ε, ρ)` sample tagged with its demonstration and time index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingPair {
    pub eps: Vector6<f64>,
    pub rho: Vector6<f64>,
    pub demo: usize,
    pub index: usize,
}

impl TrainingPair {
    pub fn joint(&self) -> JointVector {
        JointVector::from_fn(|i, _| {
            if i < DIM_IN {
                self.eps[i]
            } else {
                self.rho[i - DIM_IN]
            }
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingSet {
    pub pairs: Vec<TrainingPair>,
}

impl TrainingSet {
    pub fn new(pairs: Vec<TrainingPair>) -> Self {
        TrainingSet { pairs }
    }

    pub fn from_joint(points: &[JointVector]) -> Self {
        TrainingSet {
            pairs: points
                .iter()
                .enumerate()
                .map(|(n, x)| TrainingPair {
                    eps: x.fixed_rows::<DIM_IN>(0).into(),
                    rho: x.fixed_rows::<DIM_OUT>(DIM_IN).into(),
                    demo: 0,
                    index: n,
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn points(&self) -> Vec<JointVector> {
        self.pairs.iter().map(TrainingPair::joint).collect()
    }

    pub fn validate(&self) -> Result<()> {
        for p in &self.pairs {
            if p.eps.iter().chain(p.rho.iter()).any(|x| !x.is_finite()) {
                return Err(Error::Invariant(format!(
                    "non-finite training sample (demo {}, index {})",
                    p.demo, p.index
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmOptions {
    pub k: usize,
    /// Stop when the relative log-likelihood change drops below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Added to every covariance diagonal in each M-step.
    pub reg: f64,
    pub seed: u64,
    pub strategy: Strategy,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            k: 11,
            tol: 1e-6,
            max_iter: 500,
            reg: 1e-8,
            seed: 0,
            strategy: Strategy::default(),
        }
    }
}

/// Per-component quantities reused by density and regression evaluation.
#[derive(Debug, Clone)]
struct Component {
    joint_chol: JointMatrix,
    joint_log_norm: f64,
    in_chol: InMatrix,
    in_log_norm: f64,
    /// `Σ^{ρε} (Σ^{εε})⁻¹`
    slope: CrossMatrix,
}

#[derive(Debug, Clone)]
pub struct GmmModel {
    weights: Vec<f64>,
    means: Vec<JointVector>,
    covariances: Vec<JointMatrix>,
    /// Gain the training demonstrations were recorded with.
    pub lambda: f64,
    pub lhat_pinv: PseudoInverse,
    pub seed: u64,
    components: Vec<Component>,
}

impl PartialEq for GmmModel {
    fn eq(&self, other: &Self) -> bool {
        self.weights == other.weights
            && self.means == other.means
            && self.covariances == other.covariances
            && self.lambda == other.lambda
            && self.lhat_pinv == other.lhat_pinv
            && self.seed == other.seed
    }
}

/// Regression output together with the component responsibilities.
#[derive(Debug, Clone, PartialEq)]
pub struct GmrQuery {
    pub eps: Vector6<f64>,
    pub rho: Vector6<f64>,
    pub responsibilities: Vec<f64>,
}

fn lower_solve<const D: usize>(l: &SMatrix<f64, D, D>, b: &SVector<f64, D>) -> SVector<f64, D> {
    let mut y = *b;
    for i in 0..D {
        let mut s = y[i];
        for j in 0..i {
            s -= l[(i, j)] * y[j];
        }
        y[i] = s / l[(i, i)];
    }
    y
}

fn chol_factor<const D: usize>(m: &SMatrix<f64, D, D>) -> Option<(SMatrix<f64, D, D>, f64)> {
    let chol = Cholesky::new(*m)?;
    let l = chol.l();
    let log_det = 2.0 * (0..D).map(|i| l[(i, i)].ln()).sum::<f64>();
    if !log_det.is_finite() {
        return None;
    }
    Some((l, -0.5 * (D as f64 * LN_2PI + log_det)))
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl GmmModel {
    /// Builds and validates a model.
    pub fn new(
        weights: Vec<f64>,
        means: Vec<JointVector>,
        covariances: Vec<JointMatrix>,
        lambda: f64,
        lhat_pinv: PseudoInverse,
        seed: u64,
    ) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || covariances.len() != k {
            return Err(Error::Invariant(format!(
                "component count mismatch: {} weights, {} means, {} covariances",
                k,
                means.len(),
                covariances.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::Invariant(
                "mixture weights must be finite and non-negative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Invariant(format!(
                "mixture weights sum to {total}, not 1"
            )));
        }
        if means.iter().any(|m| m.iter().any(|x| !x.is_finite())) {
            return Err(Error::Invariant("non-finite component mean".into()));
        }
        let mut components = Vec::with_capacity(k);
        for (i, cov) in covariances.iter().enumerate() {
            let asym = (cov - cov.transpose()).abs().max();
            if !(asym <= 1e-12 * cov.abs().max().max(1.0)) {
                return Err(Error::Invariant(format!("covariance {i} is not symmetric")));
            }
            let (joint_chol, joint_log_norm) = chol_factor(cov).ok_or_else(|| {
                Error::Invariant(format!("covariance {i} is not positive definite"))
            })?;
            let s_ee: InMatrix = cov.fixed_view::<DIM_IN, DIM_IN>(0, 0).into();
            let s_re: CrossMatrix = cov.fixed_view::<DIM_OUT, DIM_IN>(DIM_IN, 0).into();
            let (in_chol, in_log_norm) = chol_factor(&s_ee).ok_or_else(|| {
                Error::SingularFit(format!("input block of covariance {i} is singular"))
            })?;
            // slope = S_re S_ee⁻¹, solved through the Cholesky factor
            let inv = Cholesky::new(s_ee)
                .ok_or_else(|| {
                    Error::SingularFit(format!("input block of covariance {i} is singular"))
                })?
                .inverse();
            components.push(Component {
                joint_chol,
                joint_log_norm,
                in_chol,
                in_log_norm,
                slope: s_re * inv,
            });
        }
        Ok(GmmModel {
            weights,
            means,
            covariances,
            lambda,
            lhat_pinv,
            seed,
            components,
        })
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[JointVector] {
        &self.means
    }

    pub fn covariances(&self) -> &[JointMatrix] {
        &self.covariances
    }

    /// `log π_i + log N(x; μ_i, Σ_i)` for every component.
    fn joint_log_terms(&self, x: &JointVector, out: &mut [f64]) {
        for (i, c) in self.components.iter().enumerate() {
            let z = lower_solve(&c.joint_chol, &(x - self.means[i]));
            out[i] = self.weights[i].ln() + c.joint_log_norm - 0.5 * z.norm_squared();
        }
    }

    /// Log-density of one joint sample.
    pub fn log_density(&self, x: &JointVector) -> f64 {
        let mut terms = vec![0.0; self.k()];
        self.joint_log_terms(x, &mut terms);
        log_sum_exp(&terms)
    }

    /// Responsibilities `h_i(ε)` of the input-space marginals.
    pub fn responsibilities(&self, eps: &Vector6<f64>) -> Vec<f64> {
        let mut terms: Vec<f64> = self
            .components
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let mu: Vector6<f64> = self.means[i].fixed_rows::<DIM_IN>(0).into();
                let z = lower_solve(&c.in_chol, &(eps - mu));
                self.weights[i].ln() + c.in_log_norm - 0.5 * z.norm_squared()
            })
            .collect();
        let lse = log_sum_exp(&terms);
        for t in terms.iter_mut() {
            *t = (*t - lse).exp();
        }
        terms
    }

    /// Conditional mean of component `i` at `eps`.
    pub fn component_conditional(&self, i: usize, eps: &Vector6<f64>) -> Vector6<f64> {
        let mu = &self.means[i];
        let mu_e: Vector6<f64> = mu.fixed_rows::<DIM_IN>(0).into();
        let mu_r: Vector6<f64> = mu.fixed_rows::<DIM_OUT>(DIM_IN).into();
        mu_r + self.components[i].slope * (eps - mu_e)
    }

    pub fn gmr_query(&self, eps: &Vector6<f64>) -> Result<GmrQuery> {
        if eps.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("non-finite regression input".into()));
        }
        let h = self.responsibilities(eps);
        if h.iter().any(|x| !x.is_finite()) {
            return Err(Error::SingularFit("responsibilities are not finite".into()));
        }
        let mut rho = Vector6::zeros();
        for (i, hi) in h.iter().enumerate() {
            if *hi > 0.0 {
                rho += self.component_conditional(i, eps) * *hi;
            }
        }
        Ok(GmrQuery {
            eps: *eps,
            rho,
            responsibilities: h,
        })
    }

    /// GMR estimate `ρ̂(ε)`.
    pub fn gmr_predict(&self, eps: &Vector6<f64>) -> Result<Vector6<f64>> {
        Ok(self.gmr_query(eps)?.rho)
    }
}

/// `Σ_n log Σ_i π_i N(x_n; μ_i, Σ_i)`.
pub fn log_likelihood(model: &GmmModel, data: &TrainingSet) -> f64 {
    log_likelihood_points(model, &data.points(), Strategy::Sequential)
}

fn log_likelihood_points(model: &GmmModel, points: &[JointVector], strategy: Strategy) -> f64 {
    exec::map(strategy, points, |x| model.log_density(x))
        .iter()
        .sum()
}

fn mean_and_cov(points: &[JointVector]) -> (JointVector, JointMatrix) {
    let n = points.len() as f64;
    let mean = points.iter().sum::<JointVector>() / n;
    let mut cov = JointMatrix::zeros();
    for x in points {
        let d = x - mean;
        cov += d * d.transpose();
    }
    (mean, cov / n)
}

/// Result of an EM run.
#[derive(Debug, Clone)]
pub struct EmFit {
    pub model: GmmModel,
    /// Log-likelihood after each E-step, starting from the initial parameters.
    pub log_likelihoods: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Fits a `k`-component mixture by EM, initialized by k-means++.
///
/// The returned model carries `lambda` and `lhat_pinv` as metadata so that
/// controllers can check they run with the settings the data was recorded with.
pub fn em_fit(
    data: &TrainingSet,
    opts: &EmOptions,
    lambda: f64,
    lhat_pinv: PseudoInverse,
) -> Result<EmFit> {
    data.validate()?;
    let k = opts.k;
    let points = data.points();
    let needed = k.max(1) * MIN_SAMPLES_PER_COMPONENT;
    if k == 0 || points.len() < needed {
        return Err(Error::TooFewPoints {
            needed,
            got: points.len(),
        });
    }
    let n = points.len();
    let (global_mean, global_cov) = mean_and_cov(&points);
    if global_cov.trace() <= 0.0 || points.iter().all(|x| *x == points[0]) {
        return Err(Error::SingularFit(
            "all training points are identical".into(),
        ));
    }
    let reg_eye = JointMatrix::identity() * opts.reg;

    let init = kmeans_init(&points, k, opts.seed)?;
    let mut weights = vec![0.0; k];
    let mut means = init.centers.clone();
    let mut covs = vec![global_cov + reg_eye; k];
    for i in 0..k {
        let members: Vec<JointVector> = points
            .iter()
            .zip(&init.assignments)
            .filter(|(_, a)| **a == i)
            .map(|(x, _)| *x)
            .collect();
        weights[i] = members.len() as f64 / n as f64;
        if members.len() >= 2 {
            let (m, c) = mean_and_cov(&members);
            means[i] = m;
            covs[i] = c + reg_eye;
        } else if members.is_empty() {
            means[i] = global_mean;
        }
    }
    normalize(&mut weights);
    let mut model =
        GmmModel::new(weights, means, covs, lambda, lhat_pinv, opts.seed).map_err(as_fit_error)?;

    let mut lls: Vec<f64> = Vec::new();
    let mut resp = vec![0.0; n * k];
    let mut converged = false;
    let mut iterations = 0;
    loop {
        // E-step: per-sample work may run in parallel, reductions stay in sample order
        let rows = exec::map(opts.strategy, &points, |x| {
            let mut t = vec![0.0; k];
            model.joint_log_terms(x, &mut t);
            let lse = log_sum_exp(&t);
            for v in t.iter_mut() {
                *v = (*v - lse).exp();
            }
            (lse, t)
        });
        let mut ll = 0.0;
        for (j, (lse, r)) in rows.into_iter().enumerate() {
            ll += lse;
            resp[j * k..(j + 1) * k].copy_from_slice(&r);
        }
        if !ll.is_finite() {
            return Err(Error::SingularFit(format!("log-likelihood became {ll}")));
        }
        if let Some(prev) = lls.last().copied() {
            let change: f64 = ll - prev;
            if change.abs() <= opts.tol * prev.abs().max(1e-300) {
                lls.push(ll);
                converged = true;
                break;
            }
        }
        lls.push(ll);
        if iterations >= opts.max_iter {
            break;
        }
        iterations += 1;

        // M-step, one component per work item
        let updates = exec::map_range(opts.strategy, k, |i| {
            let nk: f64 = (0..n).map(|j| resp[j * k + i]).sum();
            if nk <= f64::MIN_POSITIVE * 1e10 {
                return (0.0, model.means[i], model.covariances[i]);
            }
            let mut mu = JointVector::zeros();
            for (j, x) in points.iter().enumerate() {
                mu += x * resp[j * k + i];
            }
            mu /= nk;
            let mut cov = JointMatrix::zeros();
            for (j, x) in points.iter().enumerate() {
                let d = x - mu;
                cov += (d * d.transpose()) * resp[j * k + i];
            }
            cov /= nk;
            cov = (cov + cov.transpose()) * 0.5 + reg_eye;
            (nk, mu, cov)
        });
        let mut weights: Vec<f64> = updates.iter().map(|u| u.0 / n as f64).collect();
        normalize(&mut weights);
        let means = updates.iter().map(|u| u.1).collect();
        let covs = updates.iter().map(|u| u.2).collect();
        model = GmmModel::new(weights, means, covs, lambda, lhat_pinv, opts.seed)
            .map_err(as_fit_error)?;
    }
    Ok(EmFit {
        model,
        log_likelihoods: lls,
        iterations,
        converged,
    })
}

/// A parameter update that breaks a model invariant is a failed fit.
fn as_fit_error(e: Error) -> Error {
    match e {
        Error::Invariant(m) => Error::SingularFit(m),
        other => other,
    }
}

fn normalize(w: &mut [f64]) {
    let s: f64 = w.iter().sum();
    for x in w.iter_mut() {
        *x /= s;
    }
    // push the rounding residue into the largest weight
    let s: f64 = w.iter().sum();
    if let Some((imax, _)) = w.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)) {
        w[imax] += 1.0 - s;
    }
}

/// Cross-validated choice of the component count.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSearch {
    pub best_k: usize,
    /// `(k, mean held-out log-likelihood per sample)`; `-inf` when `k` could
    /// not be fitted on some fold.
    pub scores: Vec<(usize, f64)>,
}

/// Picks the component count with the highest held-out log-likelihood,
/// breaking ties towards smaller `k`.
///
/// With `folds == 1` there is nothing to hold out, so candidates are scored
/// on the training likelihood instead.
pub fn model_select_gridsearch(
    data: &TrainingSet,
    k_range: &[usize],
    folds: usize,
    opts: &EmOptions,
) -> Result<GridSearch> {
    if k_range.is_empty() {
        return Err(Error::Domain("empty component range".into()));
    }
    if folds == 0 {
        return Err(Error::Domain("need at least one fold".into()));
    }
    let points = data.points();
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(opts.seed));
    let dummy = PseudoInverse(SMatrix::zeros());

    let mut scores = Vec::with_capacity(k_range.len());
    for &k in k_range {
        let fold_opts = EmOptions { k, ..*opts };
        let mut total = 0.0;
        let mut count = 0usize;
        for f in 0..folds {
            let (train, test): (Vec<JointVector>, Vec<JointVector>) = if folds == 1 {
                (points.clone(), points.clone())
            } else {
                let mut train = Vec::new();
                let mut test = Vec::new();
                for (pos, &idx) in order.iter().enumerate() {
                    if pos % folds == f {
                        test.push(points[idx]);
                    } else {
                        train.push(points[idx]);
                    }
                }
                (train, test)
            };
            match em_fit(&TrainingSet::from_joint(&train), &fold_opts, 0.0, dummy) {
                Ok(fit) => {
                    total += log_likelihood_points(&fit.model, &test, opts.strategy);
                    count += test.len();
                }
                Err(Error::TooFewPoints { .. }) | Err(Error::SingularFit(_)) => {
                    total = f64::NEG_INFINITY;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        let score = if count > 0 && total.is_finite() {
            total / count as f64
        } else {
            f64::NEG_INFINITY
        };
        scores.push((k, score));
    }
    let best_k = scores
        .iter()
        .filter(|(_, s)| s.is_finite())
        .fold(None::<(usize, f64)>, |best, &(k, s)| match best {
            Some((bk, bs)) if bs > s || (bs == s && bk < k) => Some((bk, bs)),
            _ => Some((k, s)),
        })
        .map(|(k, _)| k)
        .ok_or_else(|| Error::SingularFit("no candidate component count could be fitted".into()))?;
    Ok(GridSearch { best_k, scores })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn zero_pinv() -> PseudoInverse {
        PseudoInverse(SMatrix::zeros())
    }

    fn gaussian_points(
        rng: &mut ChaCha8Rng,
        n: usize,
        mean: &JointVector,
        chol: &JointMatrix,
    ) -> Vec<JointVector> {
        (0..n)
            .map(|_| {
                let z = JointVector::from_fn(|_, _| StandardNormal.sample(rng));
                mean + chol * z
            })
            .collect()
    }

    fn random_spd(rng: &mut ChaCha8Rng) -> JointMatrix {
        let a = JointMatrix::from_fn(|_, _| rng.random_range(-1.0..1.0));
        a * a.transpose() + JointMatrix::identity() * 0.5
    }

    #[test]
    fn single_component_is_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let chol = JointMatrix::from_fn(|r, c| {
            if r >= c {
                rng.random_range(0.1..1.0)
            } else {
                0.0
            }
        });
        let pts = gaussian_points(&mut rng, 400, &JointVector::repeat(2.0), &chol);
        let data = TrainingSet::from_joint(&pts);
        let opts = EmOptions {
            k: 1,
            reg: 1e-8,
            ..Default::default()
        };
        let fit = em_fit(&data, &opts, 2.0, zero_pinv()).unwrap();
        let (mean, cov) = mean_and_cov(&pts);
        let m = &fit.model;
        assert_eq!(m.weights(), &[1.0]);
        assert!((m.means()[0] - mean).abs().max() < 1e-12);
        assert!(
            (m.covariances()[0] - (cov + JointMatrix::identity() * 1e-8))
                .abs()
                .max()
                < 1e-12
        );
    }

    #[test]
    fn recovers_two_separated_components() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let sigma = 0.5;
        let chol = JointMatrix::identity() * sigma;
        let m0 = JointVector::zeros();
        let m1 = JointVector::from_fn(|i, _| if i == 0 { 10.0 * sigma } else { 0.0 });
        let mut pts = gaussian_points(&mut rng, 1200, &m0, &chol);
        pts.extend(gaussian_points(&mut rng, 800, &m1, &chol));
        pts.shuffle(&mut rng);
        let opts = EmOptions {
            k: 2,
            ..Default::default()
        };
        let fit = em_fit(&TrainingSet::from_joint(&pts), &opts, 2.0, zero_pinv()).unwrap();
        let m = &fit.model;
        let (a, b) = if m.means()[0][0] < m.means()[1][0] {
            (0, 1)
        } else {
            (1, 0)
        };
        assert!((m.weights()[a] - 0.6).abs() < 0.05);
        assert!((m.weights()[b] - 0.4).abs() < 0.05);
        assert!((m.means()[a] - m0).abs().max() < 0.1 * sigma);
        assert!((m.means()[b] - m1).abs().max() < 0.1 * sigma);
        for w in fit.log_likelihoods.windows(2) {
            assert!(w[1] - w[0] >= -1e-9, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn rejects_degenerate_data() {
        let pts = vec![JointVector::repeat(0.3); 50];
        let opts = EmOptions {
            k: 2,
            ..Default::default()
        };
        assert!(matches!(
            em_fit(&TrainingSet::from_joint(&pts), &opts, 2.0, zero_pinv()),
            Err(Error::SingularFit(_))
        ));
        let few = vec![JointVector::repeat(0.3); 20];
        assert!(matches!(
            em_fit(&TrainingSet::from_joint(&few), &opts, 2.0, zero_pinv()),
            Err(Error::TooFewPoints {
                needed: 24,
                got: 20
            })
        ));
    }

    #[test]
    fn log_likelihood_at_standard_normal_mean() {
        let m = GmmModel::new(
            vec![1.0],
            vec![JointVector::zeros()],
            vec![JointMatrix::identity()],
            1.0,
            zero_pinv(),
            0,
        )
        .unwrap();
        let data = TrainingSet::from_joint(&[JointVector::zeros()]);
        let expected = JOINT_DIM as f64 * -0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((log_likelihood(&m, &data) - expected).abs() < 1e-12);
    }

    fn random_model(rng: &mut ChaCha8Rng, k: usize) -> GmmModel {
        let mut w: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
        normalize(&mut w);
        let means = (0..k)
            .map(|_| JointVector::from_fn(|_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let covs = (0..k).map(|_| random_spd(rng)).collect();
        GmmModel::new(w, means, covs, 2.0, zero_pinv(), 0).unwrap()
    }

    #[test]
    fn log_likelihood_is_additive_and_matches_naive_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let m = random_model(&mut rng, 3);
        let pts: Vec<JointVector> = (0..100)
            .map(|_| JointVector::from_fn(|_, _| rng.random_range(-1.5..1.5)))
            .collect();
        let ll = log_likelihood(&m, &TrainingSet::from_joint(&pts));
        let doubled: Vec<JointVector> = pts.iter().chain(pts.iter()).copied().collect();
        assert!((log_likelihood(&m, &TrainingSet::from_joint(&doubled)) - 2.0 * ll).abs() < 1e-9);

        // oracle: explicit density via determinant and inverse
        let naive: f64 = pts
            .iter()
            .map(|x| {
                (0..3)
                    .map(|i| {
                        let s = m.covariances()[i];
                        let d = x - m.means()[i];
                        let q = (d.transpose() * s.try_inverse().unwrap() * d)[0];
                        m.weights()[i] * (-0.5 * q).exp()
                            / ((2.0 * std::f64::consts::PI).powi(JOINT_DIM as i32)
                                * s.determinant())
                            .sqrt()
                    })
                    .sum::<f64>()
                    .ln()
            })
            .sum();
        assert!(
            (ll - naive).abs() < 1e-10 * naive.abs().max(1.0),
            "{ll} vs {naive}"
        );
    }

    #[test]
    fn single_component_gmr_is_gaussian_conditional() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let s = random_spd(&mut rng);
        let mu = JointVector::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let m = GmmModel::new(vec![1.0], vec![mu], vec![s], 2.0, zero_pinv(), 0).unwrap();
        // oracle: Schur-complement conditional mean with a general inverse
        let see = s.fixed_view::<6, 6>(0, 0).into_owned();
        let sre = s.fixed_view::<6, 6>(6, 0).into_owned();
        let see_inv = see.try_inverse().unwrap();
        for _ in 0..100 {
            let eps = Vector6::from_fn(|_, _| rng.random_range(-2.0..2.0));
            let want = mu.fixed_rows::<6>(6) + sre * see_inv * (eps - mu.fixed_rows::<6>(0));
            let got = m.gmr_predict(&eps).unwrap();
            assert!((got - want).abs().max() < 1e-10);
        }
    }

    #[test]
    fn uncorrelated_single_component_is_constant() {
        let mut s = JointMatrix::identity();
        s[(0, 0)] = 3.0;
        s[(8, 8)] = 0.2;
        let mu = JointVector::from_fn(|i, _| i as f64);
        let m = GmmModel::new(vec![1.0], vec![mu], vec![s], 2.0, zero_pinv(), 0).unwrap();
        let rho = m.gmr_predict(&Vector6::repeat(17.0)).unwrap();
        assert_eq!(rho, mu.fixed_rows::<6>(6).into_owned());
    }

    #[test]
    fn saturated_responsibility_picks_component() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mu0 = JointVector::zeros();
        let mu1 = JointVector::repeat(100.0);
        let m = GmmModel::new(
            vec![0.5, 0.5],
            vec![mu0, mu1],
            vec![random_spd(&mut rng), random_spd(&mut rng)],
            2.0,
            zero_pinv(),
            0,
        )
        .unwrap();
        let eps: Vector6<f64> = mu0.fixed_rows::<6>(0).into();
        let got = m.gmr_predict(&eps).unwrap();
        assert!((got - m.component_conditional(0, &eps)).abs().max() < 1e-6);
    }

    #[test]
    fn invalid_models_rejected() {
        let pinv = zero_pinv();
        let id = JointMatrix::identity();
        let z = JointVector::zeros();
        assert!(GmmModel::new(vec![0.6, 0.6], vec![z, z], vec![id, id], 1.0, pinv, 0).is_err());
        assert!(GmmModel::new(vec![1.0], vec![z], vec![-id], 1.0, pinv, 0).is_err());
        assert!(GmmModel::new(vec![], vec![], vec![], 1.0, pinv, 0).is_err());
        let mut asym = id;
        asym[(0, 1)] = 0.5;
        assert!(GmmModel::new(vec![1.0], vec![z], vec![asym], 1.0, pinv, 0).is_err());
    }

    #[test]
    fn grid_search_prefers_one_component_for_gaussian_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let pts = gaussian_points(
            &mut rng,
            600,
            &JointVector::zeros(),
            &JointMatrix::identity(),
        );
        let opts = EmOptions {
            seed: 3,
            ..Default::default()
        };
        let gs =
            model_select_gridsearch(&TrainingSet::from_joint(&pts), &[1, 2, 3, 4, 5], 5, &opts)
                .unwrap();
        assert_eq!(gs.best_k, 1, "{:?}", gs.scores);
        assert!(model_select_gridsearch(&TrainingSet::from_joint(&pts), &[], 5, &opts).is_err());
        assert!(model_select_gridsearch(&TrainingSet::from_joint(&pts), &[1], 0, &opts).is_err());
        let single =
            model_select_gridsearch(&TrainingSet::from_joint(&pts), &[1, 2], 1, &opts).unwrap();
        assert_eq!(single.scores.len(), 2);
    }

    #[test]
    fn parallel_and_sequential_fits_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let mut pts = gaussian_points(
            &mut rng,
            300,
            &JointVector::zeros(),
            &JointMatrix::identity(),
        );
        pts.extend(gaussian_points(
            &mut rng,
            300,
            &JointVector::repeat(3.0),
            &JointMatrix::identity(),
        ));
        let data = TrainingSet::from_joint(&pts);
        let seq = em_fit(
            &data,
            &EmOptions {
                k: 3,
                strategy: Strategy::Sequential,
                ..Default::default()
            },
            2.0,
            zero_pinv(),
        )
        .unwrap();
        let par = em_fit(
            &data,
            &EmOptions {
                k: 3,
                strategy: Strategy::Parallel,
                ..Default::default()
            },
            2.0,
            zero_pinv(),
        )
        .unwrap();
        assert_eq!(seq.model, par.model);
        assert_eq!(seq.log_likelihoods, par.log_likelihoods);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn responsibilities_are_a_distribution(seed in 0u64..1000, scale in 0.01f64..100.0) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let m = random_model(&mut rng, 4);
                let eps = Vector6::from_fn(|_, _| rng.random_range(-1.0..1.0) * scale);
                let h = m.responsibilities(&eps);
                prop_assert!(h.iter().all(|x| *x >= 0.0));
                prop_assert!((h.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }

            #[test]
            fn gmr_is_locally_lipschitz(seed in 0u64..1000) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let m = random_model(&mut rng, 3);
                let eps = Vector6::from_fn(|_, _| rng.random_range(-1.0..1.0));
                let delta = Vector6::from_fn(|_, _| rng.random_range(-1e-6..1e-6));
                let a = m.gmr_predict(&eps).unwrap();
                let b = m.gmr_predict(&(eps + delta)).unwrap();
                // bound: conditional slopes plus the spread of component means times the
                // responsibility gradient, generously over-approximated
                let c = 1e4;
                prop_assert!((b - a).norm() <= c * delta.norm());
            }
        }
    }

    #[test]
    fn affine_data_single_component_regression_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let a = SMatrix::<f64, 6, 6>::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let b = Vector6::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let pairs: Vec<TrainingPair> = (0..200)
            .map(|n| {
                let eps = Vector6::from_fn(|_, _| rng.random_range(-1.0..1.0));
                TrainingPair {
                    eps,
                    rho: a * eps + b,
                    demo: 0,
                    index: n,
                }
            })
            .collect();
        let data = TrainingSet::new(pairs.clone());
        let opts = EmOptions {
            k: 1,
            reg: 1e-10,
            ..Default::default()
        };
        let fit = em_fit(&data, &opts, 2.0, zero_pinv()).unwrap();
        for p in &pairs {
            let r = fit.model.gmr_predict(&p.eps).unwrap();
            assert!(
                (r - p.rho).abs().max() <= 1e-8,
                "{}",
                (r - p.rho).abs().max()
            );
        }
    }
}
