//! Numerical checks of two facts about weighted regression:
//!
//! * strictly positive per-sample weights leave the minimizer of a tabular
//!   Bellman regression unchanged;
//! * among linear unbiased weighted estimators, inverse-variance weights give
//!   the smallest covariance in positive-semidefinite order.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::rng::RngStreams;

/// Smallest eigenvalue still accepted as positive semidefinite.
pub const PSD_TOLERANCE: f64 = -1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum TheoryError {
    #[error("weight {0} is not strictly positive")]
    NonPositiveWeight(f64),
    #[error("noise variance {0} is not strictly positive")]
    NonPositiveVariance(f64),
    #[error("singular system")]
    Singular,
    #[error("malformed instance: {0}")]
    Malformed(String),
}

/// Finite MDP under a fixed stochastic policy. Tables are row-major:
/// `p[(s·k + a)·n + s']`, `r[s·k + a]`, `pi[s·k + a]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularMdp {
    pub n: usize,
    pub k: usize,
    pub p: Vec<f64>,
    pub r: Vec<f64>,
    pub gamma: f64,
    pub pi: Vec<f64>,
}

impl TabularMdp {
    pub fn new(n: usize, k: usize, p: Vec<f64>, r: Vec<f64>, gamma: f64, pi: Vec<f64>) -> Result<Self, TheoryError> {
        let bad = |m: &str| Err(TheoryError::Malformed(m.to_string()));
        if n == 0 || k == 0 || p.len() != n * k * n || r.len() != n * k || pi.len() != n * k {
            return bad("table sizes do not match (n, k)");
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return bad("discount must lie in (0, 1)");
        }
        let rows_ok = |v: &[f64], w: usize| {
            v.chunks(w)
                .all(|c| c.iter().all(|x| *x >= 0.0) && (c.iter().sum::<f64>() - 1.0).abs() <= 1e-12)
        };
        if !rows_ok(&p, n) || !rows_ok(&pi, k) {
            return bad("transition and policy rows must be distributions");
        }
        Ok(Self { n, k, p, r, gamma, pi })
    }

    pub fn random<R: Rng + ?Sized>(n: usize, k: usize, gamma: f64, rng: &mut R) -> Self {
        let mut dist = |len: usize| -> Vec<f64> {
            let raw: Vec<f64> = (0..len).map(|_| rng.random::<f64>() + 1e-3).collect();
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(|x| x / s).collect()
        };
        let p: Vec<f64> = (0..n * k).flat_map(|_| dist(n)).collect();
        let pi: Vec<f64> = (0..n).flat_map(|_| dist(k)).collect();
        let r = (0..n * k).map(|_| rng.random_range(-1.0..1.0)).collect();
        Self::new(n, k, p, r, gamma, pi).expect("generated tables are valid")
    }

    pub fn pairs(&self) -> usize {
        self.n * self.k
    }

    /// `P_π` on state-action pairs: `(P_π Q)(s,a) = Σ_{s'} P(s'|s,a) Σ_{a'} π(a'|s') Q(s',a')`.
    pub fn policy_transition(&self) -> DMatrix<f64> {
        let (n, k) = (self.n, self.k);
        DMatrix::from_fn(n * k, n * k, |i, j| {
            let (s2, a2) = (j / k, j % k);
            self.p[i * n + s2] * self.pi[s2 * k + a2]
        })
    }
}

/// Value-evaluation oracle: solves `(I − γP_π) Q = r`.
pub fn policy_evaluation(mdp: &TabularMdp) -> Result<Vec<f64>, TheoryError> {
    let m = mdp.pairs();
    let a = DMatrix::identity(m, m) - mdp.policy_transition() * mdp.gamma;
    let q = a
        .lu()
        .solve(&DVector::from_column_slice(&mdp.r))
        .ok_or(TheoryError::Singular)?;
    Ok(q.iter().copied().collect())
}

fn check_weights(w: &[f64]) -> Result<(), TheoryError> {
    match w.iter().find(|x| !(**x > 0.0)) {
        Some(&x) => Err(TheoryError::NonPositiveWeight(x)),
        None => Ok(()),
    }
}

/// Minimizer of the weighted Bellman regression loss on one-hot features.
///
/// With features `Φ = I` the stationarity condition of
/// `Σ w(s,a)·(Q(s,a) − r(s,a) − γ(P_π Q)(s,a))²` taken at its own target is
/// `ΦᵀW(Φ − γP_πΦ)θ = ΦᵀW r`, which is solved directly.
pub fn bellman_fixed_point(mdp: &TabularMdp, weights: &[f64]) -> Result<Vec<f64>, TheoryError> {
    let m = mdp.pairs();
    if weights.len() != m {
        return Err(TheoryError::Malformed(format!("{} weights for {m} pairs", weights.len())));
    }
    check_weights(weights)?;
    let phi = DMatrix::<f64>::identity(m, m);
    let w = DMatrix::from_diagonal(&DVector::from_column_slice(weights));
    let lhs = phi.transpose() * &w * (&phi - mdp.policy_transition() * &phi * mdp.gamma);
    let rhs = phi.transpose() * &w * DVector::from_column_slice(&mdp.r);
    let theta = lhs.lu().solve(&rhs).ok_or(TheoryError::Singular)?;
    Ok((&phi * theta).iter().copied().collect())
}

/// Fitted iteration: repeatedly regress (weighted least squares) onto the
/// Bellman target of the previous iterate until the sup-norm step is below `tol`.
pub fn fitted_bellman_iteration(
    mdp: &TabularMdp,
    weights: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>, TheoryError> {
    check_weights(weights)?;
    let m = mdp.pairs();
    let phi = DMatrix::<f64>::identity(m, m);
    let w = DMatrix::from_diagonal(&DVector::from_column_slice(weights));
    let normal = (phi.transpose() * &w * &phi).lu();
    let pp = mdp.policy_transition();
    let r = DVector::from_column_slice(&mdp.r);
    let mut q = DVector::zeros(m);
    for _ in 0..max_iter {
        let y = &r + &pp * &q * mdp.gamma;
        let next = &phi * normal.solve(&(phi.transpose() * &w * y)).ok_or(TheoryError::Singular)?;
        let step = (&next - &q).amax();
        q = next;
        if step < tol {
            break;
        }
    }
    Ok(q.iter().copied().collect())
}

/// `y = Φθ* + ε`, `ε ~ N(0, diag(σ²))`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearRegressionInstance {
    pub phi: DMatrix<f64>,
    pub theta_star: DVector<f64>,
    pub noise_var: Vec<f64>,
}

impl LinearRegressionInstance {
    pub fn new(phi: DMatrix<f64>, theta_star: DVector<f64>, noise_var: Vec<f64>) -> Result<Self, TheoryError> {
        if phi.nrows() != noise_var.len() || phi.ncols() != theta_star.len() || phi.nrows() < phi.ncols() {
            return Err(TheoryError::Malformed("design, parameter and noise sizes disagree".into()));
        }
        if let Some(&v) = noise_var.iter().find(|v| !(**v > 0.0)) {
            return Err(TheoryError::NonPositiveVariance(v));
        }
        if phi.rank(1e-10) < phi.ncols() {
            return Err(TheoryError::Malformed("design matrix is rank deficient".into()));
        }
        Ok(Self {
            phi,
            theta_star,
            noise_var,
        })
    }

    /// Gaussian design with `m ≥ d` rows and log-uniform noise variances in `[0.05, 20]`.
    pub fn random<R: Rng + ?Sized>(m: usize, d: usize, rng: &mut R) -> Self {
        loop {
            let phi = DMatrix::from_fn(m, d, |_, _| rng.sample(StandardNormal));
            let theta = DVector::from_fn(d, |_, _| rng.sample(StandardNormal));
            let var = (0..m).map(|_| (rng.random_range(0.05f64.ln()..20f64.ln())).exp()).collect();
            if let Ok(inst) = Self::new(phi, theta, var) {
                return inst;
            }
        }
    }

    pub fn samples(&self) -> usize {
        self.phi.nrows()
    }

    /// Inverse-variance weights `1/σ_i²`.
    pub fn gls_weights(&self) -> Vec<f64> {
        self.noise_var.iter().map(|v| 1.0 / v).collect()
    }

    /// `A = (ΦᵀWΦ)⁻¹ΦᵀW`, so that `θ̂ = A y`. Computed as `R⁻¹QᵀW^½` from
    /// the QR factorization of `W^½Φ` to avoid squaring the condition number.
    pub fn estimator_matrix(&self, weights: &[f64]) -> Result<DMatrix<f64>, TheoryError> {
        if weights.len() != self.samples() {
            return Err(TheoryError::Malformed("one weight per sample is required".into()));
        }
        check_weights(weights)?;
        if self.samples() == self.phi.ncols() {
            // square design: the weights cancel and A = Φ⁻¹
            return self.phi.clone().try_inverse().ok_or(TheoryError::Singular);
        }
        let root: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
        let whitened = DMatrix::from_fn(self.samples(), self.phi.ncols(), |i, j| root[i] * self.phi[(i, j)]);
        let qr = whitened.qr();
        let r = qr.r();
        let mut qt = qr.q().transpose();
        for (j, w) in root.iter().enumerate() {
            qt.column_mut(j).scale_mut(*w);
        }
        r.solve_upper_triangular(&qt).ok_or(TheoryError::Singular)
    }

    fn sigma_root(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_iterator(
            self.samples(),
            self.noise_var.iter().map(|v| v.sqrt()),
        ))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WlsEstimate {
    pub theta: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

/// Closed-form covariance `AΣAᵀ` of the weighted estimator.
pub fn wls_covariance(inst: &LinearRegressionInstance, weights: &[f64]) -> Result<DMatrix<f64>, TheoryError> {
    let b = inst.estimator_matrix(weights)? * inst.sigma_root();
    Ok(&b * b.transpose())
}

/// `θ̂ = (ΦᵀWΦ)⁻¹ΦᵀW y` for observations `y` together with the exact covariance.
pub fn wls_estimator(
    inst: &LinearRegressionInstance,
    weights: &[f64],
    y: &DVector<f64>,
) -> Result<WlsEstimate, TheoryError> {
    let a = inst.estimator_matrix(weights)?;
    if y.len() != inst.samples() {
        return Err(TheoryError::Malformed("observation length".into()));
    }
    let b = &a * inst.sigma_root();
    Ok(WlsEstimate {
        theta: &a * y,
        covariance: &b * b.transpose(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GapReport {
    /// Smallest eigenvalue of `Cov_challenger − Cov_GLS`.
    pub min_eigenvalue: f64,
    pub max_abs_entry: f64,
    pub psd: bool,
}

pub fn verify_gls_dominance(inst: &LinearRegressionInstance, challenger: &[f64]) -> Result<GapReport, TheoryError> {
    let gap = wls_covariance(inst, challenger)? - wls_covariance(inst, &inst.gls_weights())?;
    let sym = (&gap + gap.transpose()) * 0.5;
    let min_eigenvalue = SymmetricEigen::new(sym).eigenvalues.min();
    Ok(GapReport {
        min_eigenvalue,
        max_abs_entry: gap.amax(),
        psd: min_eigenvalue >= PSD_TOLERANCE,
    })
}

/// Empirical covariance (`n − 1` denominator) of `θ̂` over `n ≥ 1000` noise draws.
pub fn monte_carlo_covariance<R: Rng + ?Sized>(
    inst: &LinearRegressionInstance,
    weights: &[f64],
    n: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>, TheoryError> {
    if n < 1000 {
        return Err(TheoryError::Malformed(format!("{n} draws; at least 1000 are required")));
    }
    let a = inst.estimator_matrix(weights)?;
    let d = inst.phi.ncols();
    let mean_y = &inst.phi * &inst.theta_star;
    let sd: Vec<f64> = inst.noise_var.iter().map(|v| v.sqrt()).collect();
    let mut sum = DVector::zeros(d);
    let mut outer = DMatrix::zeros(d, d);
    let mut y = mean_y.clone();
    for _ in 0..n {
        for i in 0..y.len() {
            y[i] = mean_y[i] + sd[i] * rng.sample::<f64, _>(StandardNormal);
        }
        let t = &a * &y - &inst.theta_star;
        sum += &t;
        outer += &t * t.transpose();
    }
    let nf = n as f64;
    let mean = sum / nf;
    Ok((outer - &mean * mean.transpose() * nf) / (nf - 1.0))
}

/// Largest `|S_ij − C_ij| / SE_ij` where `SE_ij = sqrt((C_ij² + C_ii·C_jj) / n)` is the
/// Gaussian standard error of a sample covariance entry.
pub fn max_standardized_error(empirical: &DMatrix<f64>, exact: &DMatrix<f64>, n: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..exact.nrows() {
        for j in 0..exact.ncols() {
            let c = exact[(i, j)];
            let se = ((c * c + exact[(i, i)] * exact[(j, j)]) / n as f64).sqrt();
            worst = worst.max((empirical[(i, j)] - c).abs() / se);
        }
    }
    worst
}

#[derive(Clone, Debug, PartialEq)]
pub struct TheoryReport {
    pub mdp_instances: usize,
    /// Worst max-abs gap between weighted and unweighted minimizers, and between
    /// the unweighted minimizer and the evaluation oracle.
    pub worst_weight_gap: f64,
    pub worst_oracle_gap: f64,
    pub regression_instances: usize,
    pub worst_min_eigenvalue: f64,
    pub worked_gls_variance: f64,
    pub worked_uniform_variance: f64,
    pub mc_draws: usize,
    pub mc_max_standard_errors: f64,
}

impl TheoryReport {
    pub fn fixed_point_ok(&self) -> bool {
        self.worst_weight_gap < 1e-8 && self.worst_oracle_gap < 1e-8
    }

    pub fn dominance_ok(&self) -> bool {
        self.worst_min_eigenvalue >= PSD_TOLERANCE
    }

    pub fn worked_example_ok(&self) -> bool {
        (self.worked_gls_variance - 0.8).abs() < 1e-12 && (self.worked_uniform_variance - 1.25).abs() < 1e-12
    }

    pub fn monte_carlo_ok(&self) -> bool {
        self.mc_max_standard_errors < 5.0
    }

    pub fn passed(&self) -> bool {
        self.fixed_point_ok() && self.dominance_ok() && self.worked_example_ok() && self.monte_carlo_ok()
    }
}

/// Two-sample worked example: `Φ = [1, 1]ᵀ`, `σ² = (1, 4)`.
pub fn worked_example() -> LinearRegressionInstance {
    LinearRegressionInstance::new(
        DMatrix::from_column_slice(2, 1, &[1.0, 1.0]),
        DVector::from_column_slice(&[0.0]),
        vec![1.0, 4.0],
    )
    .expect("valid instance")
}

/// Runs every check: `mdp_instances` random MDPs (≤ 8 states, ≤ 4 actions)
/// where fitted iteration under random and unit weights is compared with the
/// direct solve of `(I − γP_π) Q = r`,
/// `regression_instances` random regressions (`m ≤ 20`, `d ≤ 5`) and one
/// Monte-Carlo comparison with `mc_draws` draws.
pub fn verify_all(mdp_instances: usize, regression_instances: usize, mc_draws: usize, seed: u64) -> Result<TheoryReport, TheoryError> {
    let streams = RngStreams::new(seed);
    let mut rng = streams.stream("theory-mdp");
    let (mut weight_gap, mut oracle_gap) = (0.0f64, 0.0f64);
    for _ in 0..mdp_instances {
        let n = rng.random_range(1..=8);
        let k = rng.random_range(1..=4);
        let gamma = rng.random_range(0.5..0.95);
        let mdp = TabularMdp::random(n, k, gamma, &mut rng);
        let w: Vec<f64> = (0..n * k).map(|_| rng.random_range(0.01..10.0)).collect();
        let weighted = fitted_bellman_iteration(&mdp, &w, 1e-13, 20_000)?;
        let plain = fitted_bellman_iteration(&mdp, &vec![1.0; n * k], 1e-13, 20_000)?;
        let oracle = policy_evaluation(&mdp)?;
        for i in 0..n * k {
            weight_gap = weight_gap.max((weighted[i] - plain[i]).abs());
            oracle_gap = oracle_gap.max((plain[i] - oracle[i]).abs());
        }
    }

    let mut rng = streams.stream("theory-gls");
    let mut worst_eig = f64::INFINITY;
    for _ in 0..regression_instances {
        let d = rng.random_range(1..=5);
        let m = rng.random_range(d..=20);
        let inst = LinearRegressionInstance::random(m, d, &mut rng);
        let challenger: Vec<f64> = (0..m).map(|_| rng.random_range(0.01..10.0)).collect();
        worst_eig = worst_eig.min(verify_gls_dominance(&inst, &challenger)?.min_eigenvalue);
    }

    let ex = worked_example();
    let gls = wls_covariance(&ex, &ex.gls_weights())?[(0, 0)];
    let uniform = wls_covariance(&ex, &[1.0, 1.0])?[(0, 0)];

    let mut rng = streams.stream("theory-mc");
    let inst = LinearRegressionInstance::random(12, 3, &mut rng);
    let w = inst.gls_weights();
    let exact = wls_covariance(&inst, &w)?;
    let emp = monte_carlo_covariance(&inst, &w, mc_draws, &mut rng)?;

    Ok(TheoryReport {
        mdp_instances,
        worst_weight_gap: weight_gap,
        worst_oracle_gap: oracle_gap,
        regression_instances,
        worst_min_eigenvalue: if regression_instances == 0 { 0.0 } else { worst_eig },
        worked_gls_variance: gls,
        worked_uniform_variance: uniform,
        mc_draws,
        mc_max_standard_errors: max_standardized_error(&emp, &exact, mc_draws),
    })
}
