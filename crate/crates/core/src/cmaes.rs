//! Self-contained CMA-ES optimizer with an ask/tell interface.
//!
//! The implementation follows the standard covariance matrix adaptation
//! strategy: rank-mu and rank-one covariance updates, cumulative step-size
//! adaptation, and log-rank recombination weights over the better half of
//! each population. Candidate generation is a pure function of the RNG seed
//! and the generation counter, so a fixed seed reproduces every sample
//! stream regardless of how evaluations are scheduled.
//!
//! [`run`] adds the loop most callers want: the initial mean is always
//! evaluated first and tracked as best-so-far (so a search can never end
//! worse than its starting point), candidate evaluations within a generation
//! run in parallel, and per-generation fitness, step size, and wall-clock
//! splits are recorded for reporting.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use std::time::Instant;

use crate::error::{Error, Result};

/// Optimization direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Maximize,
    Minimize,
}

impl Mode {
    fn better(self, a: f64, b: f64) -> bool {
        match self {
            Mode::Maximize => a > b,
            Mode::Minimize => a < b,
        }
    }
}

/// Construction parameters for [`CmaState`].
#[derive(Debug, Clone)]
pub struct CmaesConfig {
    pub initial_mean: Vec<f64>,
    pub initial_sigma: f64,
    pub mode: Mode,
    /// Population size; defaults to `4 + floor(3 ln n)` when `None`.
    pub population_size: Option<usize>,
    pub seed: u64,
}

impl CmaesConfig {
    pub fn new(initial_mean: Vec<f64>, initial_sigma: f64, mode: Mode, seed: u64) -> Self {
        CmaesConfig {
            initial_mean,
            initial_sigma,
            mode,
            population_size: None,
            seed,
        }
    }
}

/// Evaluation and early-stop limits for [`run`].
#[derive(Debug, Clone, Copy)]
pub struct SearchBudget {
    /// Generations after the initial-mean evaluation; 0 evaluates only the
    /// initial mean.
    pub max_generations: usize,
    /// Consecutive generations without best-fitness improvement before the
    /// loop stops early.
    pub target_stagnation: usize,
}

impl SearchBudget {
    pub fn new(max_generations: usize) -> Self {
        SearchBudget {
            max_generations,
            target_stagnation: 10,
        }
    }

    pub fn with_stagnation(mut self, target_stagnation: usize) -> Self {
        self.target_stagnation = target_stagnation;
        self
    }

    /// Disables stagnation-based early stopping.
    pub fn without_early_stop(self) -> Self {
        self.with_stagnation(usize::MAX)
    }
}

/// Per-generation search log entry.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerationRecord {
    pub generation: u64,
    /// Best fitness seen so far, including the initial mean.
    pub best_fitness: f64,
    /// Mean fitness of this generation's candidates.
    pub mean_fitness: f64,
    pub sigma: f64,
    /// Wall-clock spent building candidate models this generation.
    pub elapsed_prune_s: f64,
    /// Wall-clock spent scoring candidate models this generation.
    pub elapsed_validate_s: f64,
}

/// One candidate's objective result plus its wall-clock split.
#[derive(Debug, Clone, Copy)]
pub struct Evaluation {
    pub fitness: f64,
    pub build_seconds: f64,
    pub score_seconds: f64,
}

impl Evaluation {
    /// An evaluation with no meaningful build/score split.
    pub fn plain(fitness: f64) -> Self {
        Evaluation {
            fitness,
            build_seconds: 0.0,
            score_seconds: 0.0,
        }
    }
}

/// Result of a completed [`run`].
#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub best_point: Vec<f64>,
    pub best_fitness: f64,
    pub history: Vec<GenerationRecord>,
    pub evaluations: usize,
    pub wall_seconds: f64,
}

/// A failed search, carrying the history accumulated before the failure.
#[derive(Debug)]
pub struct SearchError {
    pub error: Error,
    pub history: Vec<GenerationRecord>,
}

impl std::fmt::Display for SearchError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "search aborted after {} recorded generations: {}",
            self.history.len(),
            self.error
        )
    }
}

impl std::error::Error for SearchError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<SearchError> for Error {
    fn from(e: SearchError) -> Error {
        e.error
    }
}

/// CMA-ES strategy state.
pub struct CmaState {
    n: usize,
    lambda: usize,
    mu: usize,
    weights: Vec<f64>,
    mu_eff: f64,
    c_sigma: f64,
    d_sigma: f64,
    c_c: f64,
    c_1: f64,
    c_mu: f64,
    chi_n: f64,
    mode: Mode,
    seed: u64,
    mean: DVector<f64>,
    sigma: f64,
    cov: DMatrix<f64>,
    p_sigma: DVector<f64>,
    p_c: DVector<f64>,
    generation: u64,
    // Eigendecomposition of `cov`, refreshed lazily before sampling.
    eig_vectors: DMatrix<f64>,
    eig_sqrt: DVector<f64>,
    inv_sqrt_cov: DMatrix<f64>,
    decomposition_stale: bool,
    best: Option<(Vec<f64>, f64)>,
}

impl CmaState {
    pub fn new(config: &CmaesConfig) -> Result<Self> {
        let n = config.initial_mean.len();
        if n == 0 {
            return Err(Error::InvalidArgument(
                "search space has dimension 0".into(),
            ));
        }
        if !(config.initial_sigma.is_finite() && config.initial_sigma > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "initial sigma {} must be positive and finite",
                config.initial_sigma
            )));
        }
        if config.initial_mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "initial mean has non-finite entries".into(),
            ));
        }
        let nf = n as f64;
        let lambda = match config.population_size {
            Some(l) if l >= 2 => l,
            Some(l) => {
                return Err(Error::InvalidArgument(format!(
                    "population size {l} must be at least 2"
                )))
            }
            None => 4 + (3.0 * nf.ln()).floor() as usize,
        };
        let mu = lambda / 2;

        // Log-rank recombination weights over the mu best, normalized to 1.
        let raw: Vec<f64> = (0..mu)
            .map(|i| ((mu as f64) + 0.5).ln() - ((i + 1) as f64).ln())
            .collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();

        let c_sigma = (mu_eff + 2.0) / (nf + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / nf) / (nf + 4.0 + 2.0 * mu_eff / nf);
        let c_1 = 2.0 / ((nf + 1.3).powi(2) + mu_eff);
        let c_mu =
            (2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((nf + 2.0).powi(2) + mu_eff)).min(1.0 - c_1);
        let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));

        let mut state = CmaState {
            n,
            lambda,
            mu,
            weights,
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c_1,
            c_mu,
            chi_n,
            mode: config.mode,
            seed: config.seed,
            mean: DVector::from_column_slice(&config.initial_mean),
            sigma: config.initial_sigma,
            cov: DMatrix::identity(n, n),
            p_sigma: DVector::zeros(n),
            p_c: DVector::zeros(n),
            generation: 0,
            eig_vectors: DMatrix::identity(n, n),
            eig_sqrt: DVector::from_element(n, 1.0),
            inv_sqrt_cov: DMatrix::identity(n, n),
            decomposition_stale: false,
            best: None,
        };
        state.refresh_decomposition()?;
        Ok(state)
    }

    pub fn dimension(&self) -> usize {
        self.n
    }

    pub fn population_size(&self) -> usize {
        self.lambda
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Best candidate observed so far and its fitness.
    pub fn best(&self) -> Option<(&[f64], f64)> {
        self.best.as_ref().map(|(p, f)| (p.as_slice(), *f))
    }

    fn numeric_dump(&self, what: &str) -> Error {
        Error::Numeric(format!(
            "{what} at generation {} (sigma {:.3e}, mean {:?})",
            self.generation,
            self.sigma,
            self.mean.as_slice()
        ))
    }

    /// Re-diagonalizes the covariance, clamping the spectrum so the condition
    /// number stays at or below 1e14.
    fn refresh_decomposition(&mut self) -> Result<()> {
        self.cov = (&self.cov + self.cov.transpose()) * 0.5;
        let eig = nalgebra::SymmetricEigen::try_new(self.cov.clone(), f64::EPSILON, 500)
            .ok_or_else(|| self.numeric_dump("covariance eigendecomposition failed"))?;
        let max_eig = eig
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        if !max_eig.is_finite() || max_eig <= 0.0 {
            return Err(self.numeric_dump("covariance lost positive definiteness"));
        }
        let floor = max_eig / 1e14;
        let mut clamped = eig.eigenvalues.clone();
        let mut changed = false;
        for v in clamped.iter_mut() {
            if *v < floor {
                *v = floor;
                changed = true;
            }
        }
        if changed {
            let scaled =
                DMatrix::from_fn(self.n, self.n, |r, c| eig.eigenvectors[(r, c)] * clamped[c]);
            self.cov = &scaled * eig.eigenvectors.transpose();
            self.cov = (&self.cov + self.cov.transpose()) * 0.5;
        }
        self.eig_sqrt = clamped.map(f64::sqrt);
        let inv_scaled = DMatrix::from_fn(self.n, self.n, |r, c| {
            eig.eigenvectors[(r, c)] / self.eig_sqrt[c]
        });
        self.inv_sqrt_cov = &inv_scaled * eig.eigenvectors.transpose();
        self.eig_vectors = eig.eigenvectors;
        self.decomposition_stale = false;
        Ok(())
    }

    /// Samples this generation's candidate population.
    ///
    /// Candidates depend only on the seed and the generation counter, so
    /// asking again without an intervening tell returns the same set.
    pub fn ask(&mut self) -> Result<Vec<Vec<f64>>> {
        if self.decomposition_stale {
            self.refresh_decomposition()?;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.generation + 1);
        let mut out = Vec::with_capacity(self.lambda);
        for _ in 0..self.lambda {
            let z: DVector<f64> = DVector::from_fn(self.n, |_, _| StandardNormal.sample(&mut rng));
            let scaled = DVector::from_fn(self.n, |i, _| self.eig_sqrt[i] * z[i]);
            let x = &self.mean + (&self.eig_vectors * scaled) * self.sigma;
            out.push(x.as_slice().to_vec());
        }
        Ok(out)
    }

    fn offer_best(&mut self, point: &[f64], fitness: f64) {
        let replace = match &self.best {
            Some((_, held)) => self.mode.better(fitness, *held),
            None => true,
        };
        if replace {
            self.best = Some((point.to_vec(), fitness));
        }
    }

    /// Ranks the evaluated candidates and applies the mean, covariance, and
    /// step-size updates. Best-so-far never regresses.
    pub fn tell(&mut self, candidates: &[Vec<f64>], fitnesses: &[f64]) -> Result<()> {
        if candidates.len() != self.lambda || fitnesses.len() != self.lambda {
            return Err(Error::InvalidArgument(format!(
                "tell expects {} candidates and fitnesses, got {} and {}",
                self.lambda,
                candidates.len(),
                fitnesses.len()
            )));
        }
        if let Some(bad) = fitnesses.iter().find(|f| !f.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite fitness {bad} passed to tell"
            )));
        }
        if candidates.iter().any(|c| c.len() != self.n) {
            return Err(Error::InvalidArgument(
                "candidate dimension does not match the search space".into(),
            ));
        }

        let mut order: Vec<usize> = (0..self.lambda).collect();
        match self.mode {
            Mode::Minimize => order.sort_by(|&a, &b| fitnesses[a].total_cmp(&fitnesses[b])),
            Mode::Maximize => order.sort_by(|&a, &b| fitnesses[b].total_cmp(&fitnesses[a])),
        }
        let gen_best = order[0];
        self.offer_best(&candidates[gen_best], fitnesses[gen_best]);

        // A completely flat generation carries no selection information:
        // leave mean, paths, and covariance alone and widen the step size to
        // escape the plateau.
        if fitnesses.iter().all(|&f| f == fitnesses[0]) {
            self.sigma *= (0.2 + self.c_sigma / self.d_sigma).exp();
            self.generation += 1;
            return Ok(());
        }

        let old_mean = self.mean.clone();
        let ys: Vec<DVector<f64>> = order[..self.mu]
            .iter()
            .map(|&i| (DVector::from_column_slice(&candidates[i]) - &old_mean) / self.sigma)
            .collect();
        let mut y_w = DVector::zeros(self.n);
        for (w, y) in self.weights.iter().zip(&ys) {
            y_w += y * *w;
        }

        self.mean = &old_mean + &y_w * self.sigma;

        let gen_after = (self.generation + 1) as f64;
        self.p_sigma = &self.p_sigma * (1.0 - self.c_sigma)
            + (&self.inv_sqrt_cov * &y_w)
                * (self.c_sigma * (2.0 - self.c_sigma) * self.mu_eff).sqrt();
        let ps_norm = self.p_sigma.norm();
        let unbias = (1.0 - (1.0 - self.c_sigma).powf(2.0 * gen_after)).sqrt();
        let h_sigma = if ps_norm / unbias < (1.4 + 2.0 / (self.n as f64 + 1.0)) * self.chi_n {
            1.0
        } else {
            0.0
        };
        self.p_c = &self.p_c * (1.0 - self.c_c)
            + &y_w * (h_sigma * (self.c_c * (2.0 - self.c_c) * self.mu_eff).sqrt());

        let delta_h = (1.0 - h_sigma) * self.c_c * (2.0 - self.c_c);
        let mut rank_mu = DMatrix::zeros(self.n, self.n);
        for (w, y) in self.weights.iter().zip(&ys) {
            rank_mu += (y * y.transpose()) * *w;
        }
        self.cov = &self.cov * (1.0 - self.c_1 - self.c_mu + self.c_1 * delta_h)
            + (&self.p_c * self.p_c.transpose()) * self.c_1
            + rank_mu * self.c_mu;

        let exponent =
            ((self.c_sigma / self.d_sigma) * (ps_norm / self.chi_n - 1.0)).clamp(-20.0, 20.0);
        self.sigma = (self.sigma * exponent.exp()).clamp(1e-32, 1e32);

        self.generation += 1;
        self.decomposition_stale = true;
        Ok(())
    }
}

/// Runs a full ask/evaluate/tell loop under the given budget.
///
/// The initial mean is evaluated first and seeds best-so-far. Candidate
/// evaluations within a generation are fanned out on the current rayon pool
/// and gathered in candidate order, so results do not depend on worker count.
/// An objective error aborts the search, returning the history recorded so
/// far inside the [`SearchError`].
pub fn run<F>(
    config: &CmaesConfig,
    budget: &SearchBudget,
    objective: F,
) -> Result<SearchOutcome, SearchError>
where
    F: Fn(&[f64]) -> Result<Evaluation> + Sync,
{
    let started = Instant::now();
    let mut history: Vec<GenerationRecord> = Vec::new();
    let fail = |error: Error, history: &[GenerationRecord]| SearchError {
        error,
        history: history.to_vec(),
    };

    let mut state = CmaState::new(config).map_err(|e| fail(e, &history))?;
    let initial = objective(state.mean()).map_err(|e| fail(e, &history))?;
    if !initial.fitness.is_finite() {
        return Err(fail(
            Error::InvalidArgument(format!(
                "objective returned non-finite fitness {} for the initial mean",
                initial.fitness
            )),
            &history,
        ));
    }
    let mean_point = state.mean().to_vec();
    state.offer_best(&mean_point, initial.fitness);
    let mut evaluations = 1usize;
    history.push(GenerationRecord {
        generation: 0,
        best_fitness: initial.fitness,
        mean_fitness: initial.fitness,
        sigma: state.sigma(),
        elapsed_prune_s: initial.build_seconds,
        elapsed_validate_s: initial.score_seconds,
    });

    let mut stagnant = 0usize;
    for gen in 1..=budget.max_generations {
        let candidates = state.ask().map_err(|e| fail(e, &history))?;
        let results: Vec<Result<Evaluation>> =
            candidates.par_iter().map(|c| objective(c)).collect();
        let mut evals = Vec::with_capacity(results.len());
        for r in results {
            evals.push(r.map_err(|e| fail(e, &history))?);
        }
        evaluations += evals.len();
        let fitnesses: Vec<f64> = evals.iter().map(|e| e.fitness).collect();

        let before = state.best().map(|(_, f)| f);
        state
            .tell(&candidates, &fitnesses)
            .map_err(|e| fail(e, &history))?;
        let after = state.best().map(|(_, f)| f).unwrap();
        let improved = match before {
            Some(b) => state.mode().better(after, b),
            None => true,
        };
        stagnant = if improved { 0 } else { stagnant + 1 };

        history.push(GenerationRecord {
            generation: gen as u64,
            best_fitness: after,
            mean_fitness: fitnesses.iter().sum::<f64>() / fitnesses.len() as f64,
            sigma: state.sigma(),
            elapsed_prune_s: evals.iter().map(|e| e.build_seconds).sum(),
            elapsed_validate_s: evals.iter().map(|e| e.score_seconds).sum(),
        });

        if stagnant >= budget.target_stagnation {
            break;
        }
    }

    let (best_point, best_fitness) = state
        .best()
        .map(|(p, f)| (p.to_vec(), f))
        .expect("initial mean evaluation always seeds a best");
    Ok(SearchOutcome {
        best_point,
        best_fitness,
        history,
        evaluations,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}
