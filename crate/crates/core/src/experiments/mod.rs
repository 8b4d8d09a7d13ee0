//! Desk-scale experiments: Wasserstein convergence rates, the matching lower
//! bound, the gain of covariance-weighted matching, dropout stability, the
//! two-layer mean-field run, random-network width trends and the MNIST
//! pipeline.
//!
//! Trials are independent and run through [`crate::par::map_range`]; trial
//! `j` at sweep point `i` draws from `RngState::new(seed).child(i).child(j)`,
//! so results do not depend on the thread count.

mod dropout;
mod meanfield;
mod repro;
mod width;

pub use dropout::{dropout_gap, DropoutGap};
pub use meanfield::{meanfield_lmc, meanfield_pair, MeanFieldConfig, MeanFieldReport};
pub use repro::{repro_mnist, DataSource, ReproConfig, ReproOutcome, ReproRow};
pub use width::{width_trend, WidthPoint, WidthTrendConfig};

use serde::{Deserialize, Serialize};

use crate::assignment::{pairwise_sq_dist, solve_lap, CostMatrix, Permutation};
use crate::error::{Error, Result};
use crate::numerics::{gaussian_rows, uniform_rows, CovarianceSpec, Matrix, RngState};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub m: usize,
    pub mean_cost: f64,
    pub std_err: f64,
}

/// Sweep points with the least-squares line through `(ln m, ln mean_cost)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub points: Vec<RatePoint>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn fit_slope(points: Vec<RatePoint>) -> Result<RateFit> {
    if points.len() < 2 {
        return Err(Error::Argument(format!("need at least 2 points, got {}", points.len())));
    }
    if points.windows(2).any(|w| w[1].m <= w[0].m) {
        return Err(Error::Argument("m values must be strictly increasing".into()));
    }
    if let Some(p) = points.iter().find(|p| !(p.mean_cost > 0.0) || !p.mean_cost.is_finite()) {
        return Err(Error::Argument(format!(
            "mean cost at m = {} is {}, must be positive",
            p.m, p.mean_cost
        )));
    }
    let xs: Vec<f64> = points.iter().map(|p| (p.m as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.mean_cost.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let r_squared = if syy > 0.0 { (1.0 - sse / syy).clamp(0.0, 1.0) } else { 1.0 };
    Ok(RateFit {
        points,
        slope,
        intercept,
        r_squared,
    })
}

/// Mean and standard error of the mean.
pub fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn check_sweep(ms: &[usize], trials: usize) -> Result<()> {
    if trials < 3 {
        return Err(Error::Config(format!("need at least 3 trials, got {trials}")));
    }
    if ms.len() < 3 {
        return Err(Error::Config(format!("need at least 3 sweep sizes, got {}", ms.len())));
    }
    if ms[0] == 0 || ms.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("sweep sizes must be positive and strictly increasing".into()));
    }
    Ok(())
}

/// Runs `trial(m, rng)` for every size and trial and returns the raw costs,
/// indexed `[size][trial]`.
pub fn sweep<F>(ms: &[usize], trials: usize, seed: u64, trial: F) -> Result<Vec<Vec<f64>>>
where
    F: Fn(usize, &mut RngState) -> Result<f64> + Sync + Send,
{
    let root = RngState::new(seed);
    let flat = par::map_range(ms.len() * trials, |job| {
        let (i, j) = (job / trials, job % trials);
        trial(ms[i], &mut root.child(i as u64).child(j as u64))
    });
    let flat: Vec<f64> = flat.into_iter().collect::<Result<_>>()?;
    Ok(flat.chunks(trials).map(<[f64]>::to_vec).collect())
}

/// Averages each size's trials and fits the log-log slope.
pub fn rate_sweep<F>(ms: &[usize], trials: usize, seed: u64, trial: F) -> Result<RateFit>
where
    F: Fn(usize, &mut RngState) -> Result<f64> + Sync + Send,
{
    check_sweep(ms, trials)?;
    let costs = sweep(ms, trials, seed, trial)?;
    fit_slope(points_from(ms, &costs))
}

fn points_from(ms: &[usize], costs: &[Vec<f64>]) -> Vec<RatePoint> {
    ms.iter()
        .zip(costs)
        .map(|(&m, c)| {
            let (mean_cost, std_err) = mean_and_stderr(c);
            RatePoint { m, mean_cost, std_err }
        })
        .collect()
}

/// `W₂²` between the uniform measures on the rows of `x` and `y`:
/// `min_π (1/m) Σ ‖xᵢ − y_{π(i)}‖²`.
pub fn two_sample_cost(x: &Matrix, y: &Matrix) -> Result<f64> {
    Ok(solve_lap(&pairwise_sq_dist(x, y)?).cost / x.rows() as f64)
}

/// Law of the sampled rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum RowLaw {
    Gaussian { spec: CovarianceSpec },
    Uniform { n: usize, half_width: f64 },
}

impl RowLaw {
    pub fn sample(&self, m: usize, rng: &mut RngState) -> Result<Matrix> {
        match self {
            RowLaw::Gaussian { spec } => gaussian_rows(m, spec, rng),
            RowLaw::Uniform { n, half_width } => uniform_rows(m, *n, *half_width, rng),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            RowLaw::Gaussian { spec } => spec.dim(),
            RowLaw::Uniform { n, .. } => *n,
        }
    }
}

/// Mean two-sample `W₂²` between independent `m`-samples of `law` for each
/// `m`, with the fitted log-log slope.
pub fn empirical_rate(law: &RowLaw, ms: &[usize], trials: usize, seed: u64) -> Result<RateFit> {
    rate_sweep(ms, trials, seed, |m, rng| {
        let x = law.sample(m, rng)?;
        let y = law.sample(m, rng)?;
        two_sample_cost(&x, &y)
    })
}

/// Head/tail profile of an approximately `k`-dimensional Gaussian in `ℝⁿ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LowDimProfile {
    pub n: usize,
    pub k: usize,
    /// Eigenvalue shared by the first `k` coordinates.
    pub head: f64,
    /// Target tail ratio `η = √(Σ tail λ) / (4 √(Σ head λ))`.
    pub eta: f64,
}

impl LowDimProfile {
    /// Tail eigenvalue giving exactly the requested `η`.
    pub fn tail(&self) -> f64 {
        if self.k >= self.n {
            return 0.0;
        }
        16.0 * self.eta * self.eta * self.k as f64 * self.head / (self.n - self.k) as f64
    }

    pub fn spec(&self) -> Result<CovarianceSpec> {
        if self.k == 0 || self.k > self.n {
            return Err(Error::Config(format!("need 1 ≤ k ≤ n, got k = {}, n = {}", self.k, self.n)));
        }
        if !(self.head > 0.0) || !(self.eta >= 0.0) {
            return Err(Error::Config("head eigenvalue must be positive and η nonnegative".into()));
        }
        if self.k == self.n {
            return CovarianceSpec::isotropic(self.n, self.head);
        }
        let tail = self.tail();
        if tail > self.head {
            return Err(Error::Config(format!("η = {} makes the tail exceed the head", self.eta)));
        }
        CovarianceSpec::new(vec![self.k, self.n - self.k], vec![self.head, tail])
    }

    /// `η` recomputed from the eigenvalue profile.
    pub fn realized_eta(&self) -> f64 {
        let tail_sum = (self.n - self.k.min(self.n)) as f64 * self.tail();
        tail_sum.sqrt() / (4.0 * (self.k as f64 * self.head).sqrt())
    }

    /// `η^{−k}`, the largest width for which the low-dimensional rate applies.
    pub fn regime_limit(&self) -> f64 {
        self.realized_eta().powi(-(self.k as i32))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowDimFit {
    pub profile: LowDimProfile,
    pub eta: f64,
    pub regime_limit: f64,
    /// Fit over the sweep sizes with `m ≤ η^{−k}`.
    pub fit: RateFit,
    /// Sweep sizes beyond the regime boundary, reported but not fitted.
    pub beyond: Vec<RatePoint>,
}

pub fn lowdim_rate(profile: &LowDimProfile, ms: &[usize], trials: usize, seed: u64) -> Result<LowDimFit> {
    let law = RowLaw::Gaussian { spec: profile.spec()? };
    check_sweep(ms, trials)?;
    let limit = profile.regime_limit();
    let costs = sweep(ms, trials, seed, |m, rng| {
        let x = law.sample(m, rng)?;
        let y = law.sample(m, rng)?;
        two_sample_cost(&x, &y)
    })?;
    let points = points_from(ms, &costs);
    let (inside, beyond): (Vec<_>, Vec<_>) = points.into_iter().partition(|p| p.m as f64 <= limit);
    Ok(LowDimFit {
        profile: *profile,
        eta: profile.realized_eta(),
        regime_limit: limit,
        fit: fit_slope(inside)?,
        beyond,
    })
}

/// `E min_Π (1/m)‖W_A − Π W_B‖²` for rows i.i.d. `N(0, variance · I_n)`,
/// i.e. the matching objective against inputs with `E[xxᵀ] = I_n`.
pub fn lower_bound_rate(n: usize, variance: f64, ms: &[usize], trials: usize, seed: u64) -> Result<RateFit> {
    let spec = CovarianceSpec::isotropic(n, variance)?;
    rate_sweep(ms, trials, seed, |m, rng| {
        let wa = gaussian_rows(m, &spec, rng)?;
        let wb = gaussian_rows(m, &spec, rng)?;
        two_sample_cost(&wa, &wb)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainReport {
    pub n: usize,
    pub rank: usize,
    /// Σ-cost of the permutation minimizing the plain Euclidean cost.
    pub naive: RateFit,
    /// Σ-cost of the permutation minimizing the Σ-cost itself.
    pub weighted: RateFit,
    pub instances: usize,
    /// Instances where the weighted permutation had a larger Σ-cost.
    pub dominance_violations: usize,
}

/// One gain instance: Σ-costs (per row) of the naive and the weighted
/// permutation for `Σ = Diag(1_ñ, 0_{n−ñ})`.
pub fn gain_instance(wa: &Matrix, wb: &Matrix, rank: usize) -> Result<(f64, f64)> {
    let cols: Vec<usize> = (0..rank).collect();
    let full = pairwise_sq_dist(wa, wb)?;
    let sigma: CostMatrix = pairwise_sq_dist(&wa.select_cols(&cols), &wb.select_cols(&cols))?;
    let naive: Permutation = solve_lap(&full).permutation;
    let weighted = solve_lap(&sigma);
    let m = wa.rows() as f64;
    Ok((sigma.cost_of(&naive) / m, weighted.cost / m))
}

pub fn gain_rates(n: usize, rank: usize, ms: &[usize], trials: usize, seed: u64) -> Result<GainReport> {
    if rank == 0 || rank > n {
        return Err(Error::Config(format!("need 1 ≤ ñ ≤ n, got ñ = {rank}, n = {n}")));
    }
    check_sweep(ms, trials)?;
    let spec = CovarianceSpec::fan_in(n)?;
    let root = RngState::new(seed);
    let pairs: Vec<(f64, f64)> = par::map_range(ms.len() * trials, |job| {
        let (i, j) = (job / trials, job % trials);
        let mut rng = root.child(i as u64).child(j as u64);
        let wa = gaussian_rows(ms[i], &spec, &mut rng)?;
        let wb = gaussian_rows(ms[i], &spec, &mut rng)?;
        gain_instance(&wa, &wb, rank)
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let violations = pairs.iter().filter(|(naive, w)| w > naive).count();
    let split = |pick: fn(&(f64, f64)) -> f64| -> Vec<Vec<f64>> {
        pairs.chunks(trials).map(|c| c.iter().map(pick).collect()).collect()
    };
    Ok(GainReport {
        n,
        rank,
        naive: fit_slope(points_from(ms, &split(|p| p.0)))?,
        weighted: fit_slope(points_from(ms, &split(|p| p.1)))?,
        instances: pairs.len(),
        dominance_violations: violations,
    })
}

/// `64, 128, …, 4096`.
pub fn doubling_sizes(from: usize, to: usize) -> Vec<usize> {
    std::iter::successors(Some(from), |&m| Some(m * 2))
        .take_while(|&m| m <= to)
        .collect()
}
