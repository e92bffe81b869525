//! (μ/μ_w, λ)-CMA-ES with full or separable covariance.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parallel;
use crate::seeding::{self, Rng};

/// Step size below which the search is considered collapsed.
pub const SIGMA_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovarianceMode {
    Full,
    #[default]
    Diagonal,
}

impl std::str::FromStr for CovarianceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(CovarianceMode::Full),
            "diagonal" => Ok(CovarianceMode::Diagonal),
            other => Err(Error::param(format!("unknown covariance mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CmaConfig {
    /// λ
    pub population: usize,
    /// μ; `None` means λ/2.
    pub parents: Option<usize>,
    pub sigma0: f64,
    pub max_generations: usize,
    pub mode: CovarianceMode,
    pub seed: u64,
}

impl Default for CmaConfig {
    fn default() -> Self {
        Self {
            population: 16,
            parents: None,
            sigma0: 0.3,
            max_generations: 300,
            mode: CovarianceMode::Diagonal,
            seed: 0,
        }
    }
}

impl CmaConfig {
    pub fn mu(&self) -> usize {
        self.parents.unwrap_or(self.population / 2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.population < 2 {
            return Err(Error::param("population must be at least 2"));
        }
        let mu = self.mu();
        if mu < 1 || mu > self.population {
            return Err(Error::param(format!("parent count {mu} outside [1, {}]", self.population)));
        }
        if !(self.sigma0 > 0.0) || !self.sigma0.is_finite() {
            return Err(Error::param("sigma0 must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Covariance {
    Full {
        c: DMatrix<f64>,
        /// Eigenvectors of `c`.
        b: DMatrix<f64>,
        /// Square roots of the eigenvalues.
        d: DVector<f64>,
    },
    Diagonal {
        c: DVector<f64>,
    },
}

/// Ask/tell optimizer state.
#[derive(Debug, Clone)]
pub struct CmaEs {
    n: usize,
    lambda: usize,
    weights: Vec<f64>,
    mueff: f64,
    cc: f64,
    cs: f64,
    c1: f64,
    cmu: f64,
    damps: f64,
    chi_n: f64,
    mean: DVector<f64>,
    sigma: f64,
    pc: DVector<f64>,
    ps: DVector<f64>,
    cov: Covariance,
    generation: usize,
    rng: Rng,
    /// Steps `y = (x - m) / σ` of the last `ask`.
    pending: Vec<DVector<f64>>,
    all_bad_streak: usize,
}

impl CmaEs {
    pub fn new(x0: &[f64], config: &CmaConfig) -> Result<Self> {
        config.validate()?;
        if x0.is_empty() {
            return Err(Error::param("CMA-ES needs at least one dimension"));
        }
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("non-finite starting point"));
        }
        let n = x0.len();
        let nf = n as f64;
        let lambda = config.population;
        let mu = config.mu();
        let raw: Vec<f64> = (1..=mu)
            .map(|i| ((lambda as f64 + 1.0) / 2.0).ln() - (i as f64).ln())
            .map(|w| w.max(0.0))
            .collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = if total > 0.0 {
            raw.iter().map(|w| w / total).collect()
        } else {
            vec![1.0 / mu as f64; mu]
        };
        let mueff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let cc = (4.0 + mueff / nf) / (nf + 4.0 + 2.0 * mueff / nf);
        let cs = (mueff + 2.0) / (nf + mueff + 5.0);
        let mut c1 = 2.0 / ((nf + 1.3).powi(2) + mueff);
        let mut cmu = (2.0 * (mueff - 2.0 + 1.0 / mueff) / ((nf + 2.0).powi(2) + mueff)).min(1.0 - c1);
        let cov = match config.mode {
            CovarianceMode::Full => Covariance::Full {
                c: DMatrix::identity(n, n),
                b: DMatrix::identity(n, n),
                d: DVector::from_element(n, 1.0),
            },
            CovarianceMode::Diagonal => {
                let scale = (nf + 2.0) / 3.0;
                c1 = (c1 * scale).min(1.0);
                cmu = (cmu * scale).min(1.0 - c1);
                Covariance::Diagonal {
                    c: DVector::from_element(n, 1.0),
                }
            }
        };
        let damps = 1.0 + 2.0 * (((mueff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + cs;
        let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));
        Ok(Self {
            n,
            lambda,
            weights,
            mueff,
            cc,
            cs,
            c1,
            cmu,
            damps,
            chi_n,
            mean: DVector::from_column_slice(x0),
            sigma: config.sigma0,
            pc: DVector::zeros(n),
            ps: DVector::zeros(n),
            cov,
            generation: 0,
            rng: seeding::rng(config.seed),
            pending: Vec::new(),
            all_bad_streak: 0,
        })
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn generation(&self) -> usize {
        self.generation
    }

    pub fn collapsed(&self) -> bool {
        self.sigma < SIGMA_FLOOR
    }

    /// Sample λ candidates.
    pub fn ask(&mut self) -> Vec<Vec<f64>> {
        let n = self.n;
        self.pending = (0..self.lambda)
            .map(|_| {
                let z = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut self.rng));
                match &self.cov {
                    Covariance::Full { b, d, .. } => b * z.component_mul(d),
                    Covariance::Diagonal { c } => z.zip_map(c, |z, c| z * c.sqrt()),
                }
            })
            .collect();
        self.pending
            .iter()
            .map(|y| (&self.mean + y * self.sigma).as_slice().to_vec())
            .collect()
    }

    /// Update from the fitness of the last `ask`; lower is better and
    /// non-finite values rank last.
    pub fn tell(&mut self, fitness: &[f64]) -> Result<()> {
        if fitness.len() != self.pending.len() {
            return Err(Error::DimensionMismatch {
                expected: self.pending.len(),
                got: fitness.len(),
            });
        }
        self.generation += 1;
        if fitness.iter().all(|f| !f.is_finite()) {
            self.all_bad_streak += 1;
            if self.all_bad_streak >= 2 {
                return Err(Error::ObjectiveDiverged);
            }
            return Ok(());
        }
        self.all_bad_streak = 0;
        let key = |f: f64| if f.is_finite() { f } else { f64::INFINITY };
        let mut order: Vec<usize> = (0..fitness.len()).collect();
        order.sort_by(|&a, &b| key(fitness[a]).total_cmp(&key(fitness[b])).then(a.cmp(&b)));

        let n = self.n as f64;
        let elites: Vec<&DVector<f64>> = order.iter().take(self.weights.len()).map(|&i| &self.pending[i]).collect();
        let mut y_w = DVector::zeros(self.n);
        for (w, y) in self.weights.iter().zip(&elites) {
            y_w += *y * *w;
        }
        self.mean += &y_w * self.sigma;

        let c_inv_sqrt_y = match &self.cov {
            Covariance::Full { b, d, .. } => b * (b.transpose() * &y_w).component_div(d),
            Covariance::Diagonal { c } => y_w.zip_map(c, |y, c| y / c.sqrt()),
        };
        self.ps = &self.ps * (1.0 - self.cs) + c_inv_sqrt_y * (self.cs * (2.0 - self.cs) * self.mueff).sqrt();
        let ps_norm = self.ps.norm();
        let decay = 1.0 - (1.0 - self.cs).powi(2 * self.generation as i32);
        let hsig = ps_norm / decay.sqrt() / self.chi_n < 1.4 + 2.0 / (n + 1.0);
        let h = if hsig { 1.0 } else { 0.0 };
        self.pc = &self.pc * (1.0 - self.cc) + &y_w * (h * (self.cc * (2.0 - self.cc) * self.mueff).sqrt());
        let keep = 1.0 - self.c1 - self.cmu + (1.0 - h) * self.c1 * self.cc * (2.0 - self.cc);

        match &mut self.cov {
            Covariance::Full { c, b, d } => {
                let mut next = &*c * keep + &self.pc * self.pc.transpose() * self.c1;
                for (w, y) in self.weights.iter().zip(&elites) {
                    next += *y * y.transpose() * (self.cmu * w);
                }
                let next = (&next + next.transpose()) * 0.5;
                let eig = SymmetricEigen::new(next.clone());
                *d = eig.eigenvalues.map(|v| v.max(1e-20).sqrt());
                *b = eig.eigenvectors;
                *c = next;
            }
            Covariance::Diagonal { c } => {
                let mut next = &*c * keep + self.pc.component_mul(&self.pc) * self.c1;
                for (w, y) in self.weights.iter().zip(&elites) {
                    next += y.component_mul(y) * (self.cmu * w);
                }
                *c = next.map(|v| v.max(1e-20));
            }
        }
        self.sigma *= ((self.cs / self.damps) * (ps_norm / self.chi_n - 1.0)).exp();
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: usize,
    /// Best fitness within this generation.
    pub best_fitness: f64,
    pub best_so_far: f64,
    /// Step size used to sample this generation.
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    MaxGenerations,
    SigmaCollapse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CmaResult {
    pub best: Vec<f64>,
    pub best_fitness: f64,
    pub history: Vec<GenerationRecord>,
    pub stop: StopReason,
}

/// Minimize `objective` from `x0`; population members are evaluated in parallel.
pub fn cma_es_minimize<F>(objective: F, x0: &[f64], config: &CmaConfig) -> Result<CmaResult>
where
    F: Fn(&[f64]) -> f64 + Sync + Send,
{
    let mut es = CmaEs::new(x0, config)?;
    let mut best = x0.to_vec();
    let mut best_fitness = f64::INFINITY;
    let mut history = Vec::with_capacity(config.max_generations);
    let mut stop = StopReason::MaxGenerations;
    for g in 0..config.max_generations {
        if es.collapsed() {
            stop = StopReason::SigmaCollapse;
            break;
        }
        let sigma = es.sigma();
        let candidates = es.ask();
        let fitness = parallel::map_slice(&candidates, |x| objective(x));
        let mut gen_best = f64::INFINITY;
        for (x, &f) in candidates.iter().zip(&fitness) {
            if f.is_finite() && f < gen_best {
                gen_best = f;
                if f < best_fitness {
                    best_fitness = f;
                    best.clone_from(x);
                }
            }
        }
        es.tell(&fitness)?;
        history.push(GenerationRecord {
            generation: g + 1,
            best_fitness: gen_best,
            best_so_far: best_fitness,
            sigma,
        });
    }
    Ok(CmaResult {
        best,
        best_fitness,
        history,
        stop,
    })
}
