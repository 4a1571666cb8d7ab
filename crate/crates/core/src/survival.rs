//! Cox proportional-hazards regression over track lifetimes. Coefficients
//! maximize the Breslow-tie partial likelihood with a small ridge penalty
//! (which keeps them finite under complete separation); the baseline
//! cumulative hazard comes from the Breslow estimator. The survival metric
//! `v` is the probability that a track outlives a fixed horizon given its
//! current single-frame metrics — low values flag unreliable instances.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Ridge penalty on standardized coefficients.
pub const RIDGE: f64 = 1e-4;
/// Convergence threshold on the max-norm of the penalized gradient.
pub const GRAD_TOL: f64 = 1e-8;
pub const MAX_ITERATIONS: usize = 100;

#[derive(Debug, Error)]
pub enum SurvivalError {
    #[error("need at least 2 events, found {0}")]
    NotEnoughEvents(usize),
    #[error("covariates and durations must be finite and non-negative")]
    NonFinite,
    #[error("samples disagree on covariate count")]
    RaggedCovariates,
    #[error("Newton iteration did not converge: {iterations} iterations, gradient max-norm {grad_norm:.3e}")]
    NonConvergence { iterations: usize, grad_norm: f64 },
    #[error("expected {expected} covariates, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("horizon must be positive, got {0}")]
    BadHorizon(f64),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad model file {path}: {message}")]
    BadModel { path: String, message: String },
}

/// One observation: per-frame covariates, the remaining lifetime of its
/// track in frames, and whether the track's end was observed (event) or the
/// sequence ended first (censored).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurvivalSample {
    pub covariates: Vec<f64>,
    pub duration: f64,
    pub event: bool,
}

/// Fitted Cox model: standardized coefficients, the standardization itself,
/// and the baseline cumulative hazard table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxModel {
    /// Coefficients on the standardized scale; constant covariates get 0.
    pub coefficients: Vec<f64>,
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    /// (duration, cumulative hazard) steps, strictly increasing in both.
    pub baseline: Vec<(f64, f64)>,
}

impl CoxModel {
    pub fn dim(&self) -> usize {
        self.coefficients.len()
    }

    /// Coefficients mapped back to the raw covariate scale.
    pub fn raw_coefficients(&self) -> Vec<f64> {
        self.coefficients
            .iter()
            .zip(&self.scales)
            .map(|(&b, &s)| b / s)
            .collect()
    }

    fn standardize(&self, covariates: &[f64]) -> Result<Vec<f64>, SurvivalError> {
        if covariates.len() != self.dim() {
            return Err(SurvivalError::DimensionMismatch {
                expected: self.dim(),
                got: covariates.len(),
            });
        }
        Ok(covariates
            .iter()
            .zip(self.means.iter().zip(&self.scales))
            .map(|(&x, (&m, &s))| (x - m) / s)
            .collect())
    }

    /// Baseline cumulative hazard at `t` (step function, 0 before the first
    /// event time).
    pub fn cumulative_hazard(&self, t: f64) -> f64 {
        let mut h = 0.0;
        for &(time, hazard) in &self.baseline {
            if time <= t {
                h = hazard;
            } else {
                break;
            }
        }
        h
    }

    /// Survival probability at `horizon`: exp(-H0(horizon) · exp(βᵀx)).
    /// Higher values mean more reliable instances.
    pub fn survival_score(&self, covariates: &[f64], horizon: f64) -> Result<f64, SurvivalError> {
        if !(horizon > 0.0) {
            return Err(SurvivalError::BadHorizon(horizon));
        }
        let x = self.standardize(covariates)?;
        let eta: f64 = x
            .iter()
            .zip(&self.coefficients)
            .map(|(xi, bi)| xi * bi)
            .sum();
        Ok((-self.cumulative_hazard(horizon) * eta.exp()).exp())
    }

    pub fn save(&self, path: &Path) -> Result<(), SurvivalError> {
        let file = VersionedModel {
            version: 1,
            model: self.clone(),
        };
        let body = serde_json::to_string_pretty(&file).expect("model serializes");
        std::fs::write(path, body + "\n").map_err(|source| SurvivalError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, SurvivalError> {
        let body = std::fs::read_to_string(path).map_err(|source| SurvivalError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let file: VersionedModel =
            serde_json::from_str(&body).map_err(|e| SurvivalError::BadModel {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
        if file.version != 1 {
            return Err(SurvivalError::BadModel {
                path: path.display().to_string(),
                message: format!("unsupported version {}", file.version),
            });
        }
        Ok(file.model)
    }
}

#[derive(Serialize, Deserialize)]
struct VersionedModel {
    version: u32,
    model: CoxModel,
}

/// Fits the Cox model by Newton iterations on the ridge-penalized Breslow
/// partial log-likelihood. Constant covariates are frozen at 0 (with a
/// warning on stderr); convergence requires the penalized gradient max-norm
/// to drop below [`GRAD_TOL`] within [`MAX_ITERATIONS`].
pub fn fit_cox(samples: &[SurvivalSample]) -> Result<CoxModel, SurvivalError> {
    let n_events = samples.iter().filter(|s| s.event).count();
    if n_events < 2 {
        return Err(SurvivalError::NotEnoughEvents(n_events));
    }
    let p = samples[0].covariates.len();
    if samples.iter().any(|s| s.covariates.len() != p) {
        return Err(SurvivalError::RaggedCovariates);
    }
    let finite = samples.iter().all(|s| {
        s.duration.is_finite() && s.duration >= 0.0 && s.covariates.iter().all(|x| x.is_finite())
    });
    if !finite {
        return Err(SurvivalError::NonFinite);
    }
    let n = samples.len();

    // standardize, freezing constant covariates
    let mut means = vec![0.0; p];
    let mut scales = vec![1.0; p];
    let mut active = vec![true; p];
    for j in 0..p {
        let mean = samples.iter().map(|s| s.covariates[j]).sum::<f64>() / n as f64;
        let var = samples
            .iter()
            .map(|s| (s.covariates[j] - mean).powi(2))
            .sum::<f64>()
            / n as f64;
        means[j] = mean;
        if var.sqrt() > 1e-12 {
            scales[j] = var.sqrt();
        } else {
            active[j] = false;
            eprintln!("warning: covariate {j} is constant; its coefficient is fixed at 0");
        }
    }
    let x: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| {
            s.covariates
                .iter()
                .enumerate()
                .map(|(j, &v)| if active[j] { (v - means[j]) / scales[j] } else { 0.0 })
                .collect()
        })
        .collect();

    // samples sorted by duration descending so risk sets grow incrementally
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| samples[b].duration.total_cmp(&samples[a].duration));

    let objective_and_derivs = |beta: &[f64], want_derivs: bool| {
        let eta: Vec<f64> = x
            .iter()
            .map(|xi| xi.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let w: Vec<f64> = eta.iter().map(|e| e.exp()).collect();
        let mut ll = 0.0;
        let mut grad = vec![0.0; p];
        let mut hess = vec![vec![0.0; p]; p]; // negative Hessian accumulates here
        let mut s0 = 0.0;
        let mut s1 = vec![0.0; p];
        let mut s2 = vec![vec![0.0; p]; p];
        let mut k = 0usize;
        while k < order.len() {
            // all samples tied at this duration enter the risk set first
            let t = samples[order[k]].duration;
            let mut group_end = k;
            while group_end < order.len() && samples[order[group_end]].duration == t {
                let i = order[group_end];
                s0 += w[i];
                for a in 0..p {
                    s1[a] += w[i] * x[i][a];
                    if want_derivs {
                        for b in a..p {
                            s2[a][b] += w[i] * x[i][a] * x[i][b];
                        }
                    }
                }
                group_end += 1;
            }
            let events: Vec<usize> = order[k..group_end]
                .iter()
                .copied()
                .filter(|&i| samples[i].event)
                .collect();
            if !events.is_empty() {
                let d = events.len() as f64;
                for &i in &events {
                    ll += eta[i];
                }
                ll -= d * s0.ln();
                if want_derivs {
                    for a in 0..p {
                        let mean_a = s1[a] / s0;
                        for &i in &events {
                            grad[a] += x[i][a];
                        }
                        grad[a] -= d * mean_a;
                        for b in a..p {
                            let cov = s2[a][b] / s0 - mean_a * (s1[b] / s0);
                            hess[a][b] += d * cov;
                        }
                    }
                }
            }
            k = group_end;
        }
        // ridge
        for a in 0..p {
            ll -= 0.5 * RIDGE * beta[a] * beta[a];
            if want_derivs {
                grad[a] -= RIDGE * beta[a];
                hess[a][a] += RIDGE;
                for b in 0..a {
                    hess[b][a] = hess[b][a]; // upper triangle already filled
                }
            }
        }
        // mirror to lower triangle
        if want_derivs {
            for a in 0..p {
                for b in 0..a {
                    hess[a][b] = hess[b][a];
                }
            }
        }
        (ll, grad, hess)
    };

    let mut beta = vec![0.0; p];
    let mut converged = false;
    let mut grad_norm = f64::INFINITY;
    for _ in 0..MAX_ITERATIONS {
        let (ll, mut grad, mut hess) = objective_and_derivs(&beta, true);
        for j in 0..p {
            if !active[j] {
                grad[j] = 0.0;
                for b in 0..p {
                    hess[j][b] = 0.0;
                    hess[b][j] = 0.0;
                }
                hess[j][j] = 1.0;
            }
        }
        grad_norm = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if grad_norm < GRAD_TOL {
            converged = true;
            break;
        }
        let step = solve(&hess, &grad).ok_or(SurvivalError::NonConvergence {
            iterations: MAX_ITERATIONS,
            grad_norm,
        })?;
        if grad_norm < 1e-4 {
            // close enough for undamped Newton; objective changes are below
            // evaluation noise here, so a line search would stall
            for (b, s) in beta.iter_mut().zip(&step) {
                *b += s;
            }
            continue;
        }
        // backtracking keeps the penalized objective non-decreasing
        let noise = 1e-12 * (1.0 + ll.abs());
        let mut scale = 1.0;
        let mut improved = false;
        for _ in 0..40 {
            let trial: Vec<f64> = beta
                .iter()
                .zip(&step)
                .map(|(b, s)| b + scale * s)
                .collect();
            let (trial_ll, _, _) = objective_and_derivs(&trial, false);
            if trial_ll >= ll - noise {
                beta = trial;
                improved = true;
                break;
            }
            scale *= 0.5;
        }
        if !improved {
            break; // step cannot improve; gradient check decides below
        }
    }
    if !converged {
        let (_, grad, _) = objective_and_derivs(&beta, true);
        let residual = grad
            .iter()
            .enumerate()
            .filter(|(j, _)| active[*j])
            .fold(0.0f64, |m, (_, g)| m.max(g.abs()));
        if residual >= GRAD_TOL {
            return Err(SurvivalError::NonConvergence {
                iterations: MAX_ITERATIONS,
                grad_norm: residual.max(grad_norm),
            });
        }
    }

    // Breslow baseline cumulative hazard at the fitted coefficients
    let w: Vec<f64> = x
        .iter()
        .map(|xi| {
            xi.iter()
                .zip(&beta)
                .map(|(a, b)| a * b)
                .sum::<f64>()
                .exp()
        })
        .collect();
    let mut baseline = Vec::new();
    let mut s0 = 0.0;
    let mut cumulative = 0.0;
    let mut steps: Vec<(f64, f64)> = Vec::new(); // (time, d/S0) in descending time
    let mut k = 0usize;
    while k < order.len() {
        let t = samples[order[k]].duration;
        let mut group_end = k;
        let mut d = 0.0;
        while group_end < order.len() && samples[order[group_end]].duration == t {
            let i = order[group_end];
            s0 += w[i];
            if samples[i].event {
                d += 1.0;
            }
            group_end += 1;
        }
        if d > 0.0 {
            steps.push((t, d / s0));
        }
        k = group_end;
    }
    for &(t, inc) in steps.iter().rev() {
        cumulative += inc;
        baseline.push((t, cumulative));
    }

    Ok(CoxModel {
        coefficients: beta,
        means,
        scales,
        baseline,
    })
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting. `None`
/// when the matrix is numerically singular.
fn solve(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a.iter().cloned().collect();
    let mut rhs = b.to_vec();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[pivot][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, pivot);
        rhs.swap(col, pivot);
        for row in (col + 1)..n {
            let f = m[row][col] / m[col][col];
            for c in col..n {
                m[row][c] -= f * m[col][c];
            }
            rhs[row] -= f * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = rhs[row];
        for c in (row + 1)..n {
            acc -= m[row][c] * x[c];
        }
        x[row] = acc / m[row][row];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample(covariates: Vec<f64>, duration: f64, event: bool) -> SurvivalSample {
        SurvivalSample {
            covariates,
            duration,
            event,
        }
    }

    /// Independent check: per-event Breslow partial log-likelihood with the
    /// ridge penalty, computed by brute-force risk-set sums.
    fn naive_penalized_ll(samples: &[SurvivalSample], means: &[f64], scales: &[f64], beta: &[f64]) -> f64 {
        let std = |s: &SurvivalSample| -> Vec<f64> {
            s.covariates
                .iter()
                .enumerate()
                .map(|(j, &v)| (v - means[j]) / scales[j])
                .collect()
        };
        let mut ll = 0.0;
        for s in samples.iter().filter(|s| s.event) {
            let xi = std(s);
            let eta: f64 = xi.iter().zip(beta).map(|(a, b)| a * b).sum();
            let risk: f64 = samples
                .iter()
                .filter(|r| r.duration >= s.duration)
                .map(|r| {
                    std(r)
                        .iter()
                        .zip(beta)
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
                        .exp()
                })
                .sum();
            ll += eta - risk.ln();
        }
        ll - 0.5 * RIDGE * beta.iter().map(|b| b * b).sum::<f64>()
    }

    #[test]
    fn constant_covariate_gets_zero() {
        let samples: Vec<SurvivalSample> = (0..20)
            .map(|i| sample(vec![3.0, i as f64 % 5.0], (i + 1) as f64, i % 3 != 0))
            .collect();
        let model = fit_cox(&samples).unwrap();
        assert_eq!(model.coefficients[0], 0.0);
        assert_eq!(model.raw_coefficients()[0], 0.0);
    }

    #[test]
    fn too_few_events_is_an_error() {
        let samples = vec![
            sample(vec![1.0], 2.0, false),
            sample(vec![0.0], 3.0, true),
            sample(vec![1.0], 4.0, false),
        ];
        assert!(matches!(
            fit_cox(&samples),
            Err(SurvivalError::NotEnoughEvents(1))
        ));
    }

    #[test]
    fn separated_binary_covariate_is_positive_and_beats_grid() {
        // group x=1 always fails strictly before group x=0
        let mut samples = Vec::new();
        for (i, d) in [1.0, 2.0, 3.0, 4.0].iter().enumerate() {
            samples.push(sample(vec![1.0], *d, true));
            samples.push(sample(vec![0.0], *d + 10.0, i % 2 == 0));
        }
        let model = fit_cox(&samples).unwrap();
        assert!(model.coefficients[0] > 0.0, "separation direction");

        let best_ll = naive_penalized_ll(&samples, &model.means, &model.scales, &model.coefficients);
        let mut grid_best = f64::NEG_INFINITY;
        let mut b = -5.0;
        while b <= 5.0 {
            grid_best = grid_best.max(naive_penalized_ll(&samples, &model.means, &model.scales, &[b]));
            b += 0.01;
        }
        assert!(
            best_ll >= grid_best - 1e-6,
            "fit {best_ll} vs grid {grid_best}"
        );
    }

    #[test]
    fn recovers_known_coefficient() {
        // exponential lifetimes with hazard exp(beta * x), beta = 1
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut samples = Vec::new();
        for _ in 0..300 {
            let x: f64 = rng.gen_range(-1.5..1.5);
            let u: f64 = rng.gen_range(0.0f64..1.0).max(1e-12);
            let t = -u.ln() / (0.2 * (1.0f64 * x).exp());
            samples.push(sample(vec![x], t, true));
        }
        let model = fit_cox(&samples).unwrap();
        let beta = model.raw_coefficients()[0];
        assert!((beta - 1.0).abs() < 0.25, "estimate {beta}");
    }

    #[test]
    fn survival_score_formula() {
        let model = CoxModel {
            coefficients: vec![0.0],
            means: vec![0.0],
            scales: vec![1.0],
            baseline: vec![(10.0, 0.5)],
        };
        // H0(10) = 0.5, beta'x = 0: v = exp(-0.5)
        let v = model.survival_score(&[3.7], 10.0).unwrap();
        assert!((v - (-0.5f64).exp()).abs() < 1e-12);
        // before the first event time the hazard is 0: v = 1
        assert_eq!(model.survival_score(&[0.0], 5.0).unwrap(), 1.0);
        // zero coefficients: identical for all covariates
        assert_eq!(
            model.survival_score(&[100.0], 10.0).unwrap(),
            model.survival_score(&[-40.0], 10.0).unwrap()
        );
    }

    #[test]
    fn score_is_monotone_in_risky_covariate() {
        let model = CoxModel {
            coefficients: vec![0.8],
            means: vec![0.0],
            scales: vec![1.0],
            baseline: vec![(5.0, 0.3), (10.0, 0.7)],
        };
        let mut last = f64::INFINITY;
        for x in [-2.0, -1.0, 0.0, 1.0, 2.0] {
            let v = model.survival_score(&[x], 10.0).unwrap();
            assert!(v > 0.0 && v <= 1.0);
            assert!(v < last);
            last = v;
        }
    }

    #[test]
    fn standardization_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut base = Vec::new();
        for i in 0..60 {
            let x: f64 = rng.gen_range(-1.0..1.0);
            let y: f64 = rng.gen_range(0.0..2.0);
            base.push(sample(vec![x, y], (i + 1) as f64 + x, i % 4 != 0));
        }
        let rescaled: Vec<SurvivalSample> = base
            .iter()
            .map(|s| {
                sample(
                    vec![s.covariates[0] * 250.0 - 3.0, s.covariates[1] * -0.01 + 7.0],
                    s.duration,
                    s.event,
                )
            })
            .collect();
        let m1 = fit_cox(&base).unwrap();
        let m2 = fit_cox(&rescaled).unwrap();
        for s in &base {
            let v1 = m1.survival_score(&s.covariates, 10.0).unwrap();
            let x2 = vec![s.covariates[0] * 250.0 - 3.0, s.covariates[1] * -0.01 + 7.0];
            let v2 = m2.survival_score(&x2, 10.0).unwrap();
            assert!((v1 - v2).abs() < 1e-9, "{v1} vs {v2}");
        }
    }

    #[test]
    fn model_file_round_trip() {
        let samples: Vec<SurvivalSample> = (0..30)
            .map(|i| sample(vec![(i % 7) as f64, (i % 3) as f64], (i + 1) as f64, i % 2 == 0))
            .collect();
        let model = fit_cox(&samples).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cox.json");
        model.save(&path).unwrap();
        let back = CoxModel::load(&path).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let model = CoxModel {
            coefficients: vec![0.1, 0.2],
            means: vec![0.0, 0.0],
            scales: vec![1.0, 1.0],
            baseline: vec![(1.0, 0.1)],
        };
        assert!(matches!(
            model.survival_score(&[1.0], 10.0),
            Err(SurvivalError::DimensionMismatch { expected: 2, got: 1 })
        ));
    }
}
