//! Gaussian mixture densities: evaluation, marginalization, exact
//! one-dimensional conditionals, seeded random generation and i.i.d. sampling.
//!
//! A [`GaussianMixture`] is immutable after construction and all invariants
//! (positive-definite covariances, normalized weights, consistent dimensions)
//! are enforced by the constructors, including the JSON deserialization path.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss::{exp_flush, log_sum_exp, GaussianPdf};
use crate::rng::{SeededRng, PRNG_NAME};

/// Relative tolerance for the covariance symmetry check.
const SYMMETRY_TOL: f64 = 1e-12;
/// Construction rejects weight vectors whose sum is further than this from 1.
const WEIGHT_GATE: f64 = 1e-9;

/// One weighted Gaussian component of a mixture.
#[derive(Clone, Debug)]
pub struct GaussianComponent {
    weight: f64,
    cov: DMatrix<f64>,
    pdf: GaussianPdf,
}

impl GaussianComponent {
    /// Validates the weight, covariance symmetry and positive definiteness
    /// (via a successful Cholesky factorization).
    pub fn new(weight: f64, mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if !weight.is_finite() || weight < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "component weight must be finite and >= 0, got {weight}"
            )));
        }
        let dim = mean.len();
        if dim == 0 {
            return Err(Error::InvalidArgument("component mean must be nonempty".into()));
        }
        if cov.nrows() != dim || cov.ncols() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: cov.nrows() });
        }
        if mean.iter().any(|v| !v.is_finite()) || cov.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("component parameters must be finite".into()));
        }
        for a in 0..dim {
            for b in (a + 1)..dim {
                let gap = (cov[(a, b)] - cov[(b, a)]).abs();
                if gap > SYMMETRY_TOL * cov[(a, b)].abs().max(1.0) {
                    return Err(Error::InvalidArgument(format!(
                        "covariance is not symmetric at ({a}, {b}): {} vs {}",
                        cov[(a, b)],
                        cov[(b, a)]
                    )));
                }
            }
        }
        let pdf = GaussianPdf::new(mean, cov.clone())?;
        Ok(Self { weight, cov, pdf })
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn mean(&self) -> &DVector<f64> {
        self.pdf.mean()
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn dim(&self) -> usize {
        self.pdf.dim()
    }

    pub(crate) fn log_pdf(&self, x: &DVector<f64>) -> f64 {
        self.pdf.log_pdf(x)
    }

    pub(crate) fn cholesky_lower(&self) -> DMatrix<f64> {
        self.pdf.lower()
    }

    fn with_weight(&self, weight: f64) -> Self {
        Self { weight, cov: self.cov.clone(), pdf: self.pdf.clone() }
    }
}

/// A normalized, finite mixture of Gaussian components.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "MixtureDto", into = "MixtureDto")]
pub struct GaussianMixture {
    dim: usize,
    components: Vec<GaussianComponent>,
}

impl GaussianMixture {
    /// Builds a mixture from components, normalizing the weights.
    ///
    /// Weight sums further than `1e-9` from 1 are rejected rather than
    /// silently rescaled; sums already at machine accuracy are kept bit-exact
    /// so that serialization round-trips are lossless.
    pub fn new(components: Vec<GaussianComponent>) -> Result<Self> {
        let Some(first) = components.first() else {
            return Err(Error::InvalidArgument("mixture needs at least one component".into()));
        };
        let dim = first.dim();
        for comp in &components {
            if comp.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: comp.dim() });
            }
        }
        let sum: f64 = components.iter().map(|c| c.weight).sum();
        if (sum - 1.0).abs() > WEIGHT_GATE {
            return Err(Error::WeightNormalization { sum });
        }
        let already_normalized = (sum - 1.0).abs() <= 64.0 * f64::EPSILON * components.len() as f64;
        let components = if already_normalized {
            components
        } else {
            components.into_iter().map(|c| { let w = c.weight / sum; c.with_weight(w) }).collect()
        };
        Ok(Self { dim, components })
    }

    /// Convenience constructor for a single-component mixture.
    pub fn single(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        Self::new(vec![GaussianComponent::new(1.0, mean, cov)?])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    /// Mixture density at `x`.
    pub fn density(&self, x: &DVector<f64>) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        Ok(self
            .components
            .iter()
            .map(|c| c.weight * exp_flush(c.log_pdf(x)))
            .sum())
    }

    /// Marginal mixture over the coordinates in `keep` (in the given order).
    pub fn marginal(&self, keep: &[usize]) -> Result<GaussianMixture> {
        if keep.is_empty() {
            return Err(Error::InvalidArgument("marginal index set is empty".into()));
        }
        let mut seen = vec![false; self.dim];
        for &idx in keep {
            if idx >= self.dim {
                return Err(Error::InvalidArgument(format!(
                    "marginal index {idx} out of range for dimension {}",
                    self.dim
                )));
            }
            if seen[idx] {
                return Err(Error::InvalidArgument(format!("duplicate marginal index {idx}")));
            }
            seen[idx] = true;
        }
        let components = self
            .components
            .iter()
            .map(|c| {
                let mean = DVector::from_iterator(keep.len(), keep.iter().map(|&i| c.mean()[i]));
                let cov = DMatrix::from_fn(keep.len(), keep.len(), |a, b| c.cov[(keep[a], keep[b])]);
                GaussianComponent::new(c.weight, mean, cov)
            })
            .collect::<Result<Vec<_>>>()?;
        GaussianMixture::new(components)
    }

    /// Exact one-dimensional conditional p(x_i | rest), where `rest` holds the
    /// remaining coordinates in ascending index order.
    ///
    /// Each component is conditioned with the usual Gaussian Schur-complement
    /// formulas; component weights are reweighted by the component marginal
    /// density at `rest` (computed in log space) and renormalized.
    pub fn conditional(&self, coordinate: usize, rest: &DVector<f64>) -> Result<GaussianMixture> {
        if self.dim < 2 {
            return Err(Error::InvalidArgument(
                "conditional requires a mixture of dimension >= 2".into(),
            ));
        }
        if coordinate >= self.dim {
            return Err(Error::InvalidArgument(format!(
                "conditional coordinate {coordinate} out of range for dimension {}",
                self.dim
            )));
        }
        if rest.len() != self.dim - 1 {
            return Err(Error::DimensionMismatch { expected: self.dim - 1, got: rest.len() });
        }
        let rest_idx: Vec<usize> = (0..self.dim).filter(|&j| j != coordinate).collect();
        let mut log_weights = Vec::with_capacity(self.components.len());
        let mut params = Vec::with_capacity(self.components.len());
        for comp in &self.components {
            let mean_rest =
                DVector::from_iterator(rest_idx.len(), rest_idx.iter().map(|&j| comp.mean()[j]));
            let cov_rest = DMatrix::from_fn(rest_idx.len(), rest_idx.len(), |a, b| {
                comp.cov[(rest_idx[a], rest_idx[b])]
            });
            let cross = DVector::from_iterator(
                rest_idx.len(),
                rest_idx.iter().map(|&j| comp.cov[(coordinate, j)]),
            );
            let marginal_pdf = GaussianPdf::new(mean_rest.clone(), cov_rest).map_err(|_| {
                Error::Numerical("conditioning covariance block is not positive definite".into())
            })?;
            let centered_solved = marginal_pdf.solve_centered(rest);
            let cond_mean = comp.mean()[coordinate] + cross.dot(&centered_solved);
            // Schur complement: var_i - cross' * cov_rest^{-1} * cross.
            let cond_var =
                comp.cov[(coordinate, coordinate)] - cross.dot(&marginal_pdf.solve(&cross));
            if !(cond_var > 0.0) {
                return Err(Error::Numerical(format!(
                    "conditional variance collapsed to {cond_var}"
                )));
            }
            log_weights.push(comp.weight.ln() + marginal_pdf.log_pdf(rest));
            params.push((cond_mean, cond_var));
        }
        let norm = log_sum_exp(&log_weights);
        if !norm.is_finite() {
            return Err(Error::Numerical(
                "conditional weights underflowed to zero for every component".into(),
            ));
        }
        let components = params
            .into_iter()
            .zip(&log_weights)
            .map(|((mean, var), lw)| {
                GaussianComponent::new(
                    (lw - norm).exp(),
                    DVector::from_element(1, mean),
                    DMatrix::from_element(1, 1, var),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        GaussianMixture::new(components)
    }

    /// Draws `n` i.i.d. samples: component choice by weight, then a Cholesky
    /// transform of standard normals. Deterministic for a fixed seed.
    pub fn sample_random(&self, seed: u64, n: usize) -> Result<Vec<DVector<f64>>> {
        if n == 0 {
            return Err(Error::InvalidArgument("sample count must be >= 1".into()));
        }
        let mut rng = SeededRng::new(seed);
        let lowers: Vec<DMatrix<f64>> =
            self.components.iter().map(|c| c.cholesky_lower()).collect();
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let u = rng.uniform01();
            let mut pick = self.components.len() - 1;
            let mut cum = 0.0;
            for (j, comp) in self.components.iter().enumerate() {
                cum += comp.weight;
                if u < cum {
                    pick = j;
                    break;
                }
            }
            let z = DVector::from_fn(self.dim, |_, _| rng.standard_normal());
            out.push(self.components[pick].mean() + &lowers[pick] * z);
        }
        Ok(out)
    }
}

/// Parameters of the seeded random-mixture generator.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixtureGenConfig {
    /// Component means are uniform in `[-mean_halfwidth, mean_halfwidth]^d`.
    pub mean_halfwidth: f64,
    /// Covariances are `A A' + cov_jitter I` with `A` entries uniform in
    /// `[-cov_entry_range, cov_entry_range] / sqrt(d)`.
    pub cov_entry_range: f64,
    pub cov_jitter: f64,
    /// Weights are drawn from a symmetric Dirichlet with this concentration.
    pub dirichlet_alpha: f64,
    /// Name of the pinned generator; the only supported value is `chacha8`.
    pub prng: String,
}

impl Default for MixtureGenConfig {
    fn default() -> Self {
        Self {
            mean_halfwidth: 5.0,
            cov_entry_range: 1.0,
            cov_jitter: 0.1,
            dirichlet_alpha: 1.0,
            prng: PRNG_NAME.to_string(),
        }
    }
}

impl MixtureGenConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mean_halfwidth > 0.0) {
            return Err(Error::InvalidArgument("mean_halfwidth must be > 0".into()));
        }
        if !(self.cov_entry_range > 0.0) {
            return Err(Error::InvalidArgument("cov_entry_range must be > 0".into()));
        }
        if !(self.cov_jitter > 0.0) {
            return Err(Error::InvalidArgument("cov_jitter must be > 0".into()));
        }
        if !(self.dirichlet_alpha > 0.0) {
            return Err(Error::InvalidArgument("dirichlet_alpha must be > 0".into()));
        }
        if self.prng != PRNG_NAME {
            return Err(Error::InvalidArgument(format!(
                "unsupported prng {:?}; only {PRNG_NAME:?} is pinned",
                self.prng
            )));
        }
        Ok(())
    }
}

/// Generates a random `dim`-dimensional mixture with `n_components`
/// components, bit-identically reproducible from `(seed, dim, n_components, gen)`.
pub fn random_mixture(
    seed: u64,
    dim: usize,
    n_components: usize,
    gen: &MixtureGenConfig,
) -> Result<GaussianMixture> {
    if dim == 0 {
        return Err(Error::InvalidArgument("dimension must be >= 1".into()));
    }
    if n_components == 0 {
        return Err(Error::InvalidArgument("component count must be >= 1".into()));
    }
    gen.validate()?;
    let mut rng = SeededRng::new(seed);
    let entry_scale = gen.cov_entry_range / (dim as f64).sqrt();
    let mut raw = Vec::with_capacity(n_components);
    for _ in 0..n_components {
        let mean =
            DVector::from_fn(dim, |_, _| rng.uniform(-gen.mean_halfwidth, gen.mean_halfwidth));
        // Row-major fill keeps the draw order independent of matrix storage.
        let mut factor_entries = Vec::with_capacity(dim * dim);
        for _ in 0..dim * dim {
            factor_entries.push(rng.uniform(-entry_scale, entry_scale));
        }
        let factor = DMatrix::from_row_slice(dim, dim, &factor_entries);
        let product = &factor * factor.transpose();
        let mut cov = DMatrix::from_fn(dim, dim, |a, b| 0.5 * (product[(a, b)] + product[(b, a)]));
        for i in 0..dim {
            cov[(i, i)] += gen.cov_jitter;
        }
        raw.push((mean, cov));
    }
    let gammas: Vec<f64> = (0..n_components).map(|_| rng.gamma(gen.dirichlet_alpha)).collect();
    let total: f64 = gammas.iter().sum();
    let components = raw
        .into_iter()
        .zip(gammas)
        .map(|((mean, cov), g)| GaussianComponent::new(g / total, mean, cov))
        .collect::<Result<Vec<_>>>()?;
    GaussianMixture::new(components)
}

/// Inserts `value` at position `index`, shifting the remaining coordinates up.
pub fn insert_coordinate(rest: &DVector<f64>, index: usize, value: f64) -> DVector<f64> {
    let dim = rest.len() + 1;
    assert!(index < dim, "insert index {index} out of range for dimension {dim}");
    DVector::from_fn(dim, |j, _| {
        if j < index {
            rest[j]
        } else if j == index {
            value
        } else {
            rest[j - 1]
        }
    })
}

/// Removes the coordinate at `index`.
pub fn remove_coordinate(x: &DVector<f64>, index: usize) -> DVector<f64> {
    assert!(index < x.len(), "remove index {index} out of range for dimension {}", x.len());
    DVector::from_fn(x.len() - 1, |j, _| if j < index { x[j] } else { x[j + 1] })
}

#[derive(Serialize, Deserialize)]
struct ComponentDto {
    weight: f64,
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct MixtureDto {
    dim: usize,
    components: Vec<ComponentDto>,
}

impl TryFrom<MixtureDto> for GaussianMixture {
    type Error = Error;

    fn try_from(dto: MixtureDto) -> Result<Self> {
        let components = dto
            .components
            .into_iter()
            .map(|c| {
                if c.mean.len() != dto.dim {
                    return Err(Error::DimensionMismatch { expected: dto.dim, got: c.mean.len() });
                }
                if c.cov.len() != dto.dim || c.cov.iter().any(|row| row.len() != dto.dim) {
                    return Err(Error::InvalidArgument(format!(
                        "covariance must be a {0}x{0} matrix",
                        dto.dim
                    )));
                }
                let flat: Vec<f64> = c.cov.into_iter().flatten().collect();
                GaussianComponent::new(
                    c.weight,
                    DVector::from_vec(c.mean),
                    DMatrix::from_row_slice(dto.dim, dto.dim, &flat),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        GaussianMixture::new(components)
    }
}

impl From<GaussianMixture> for MixtureDto {
    fn from(gm: GaussianMixture) -> Self {
        MixtureDto {
            dim: gm.dim,
            components: gm
                .components
                .iter()
                .map(|c| ComponentDto {
                    weight: c.weight,
                    mean: c.mean().iter().copied().collect(),
                    cov: (0..c.dim())
                        .map(|a| (0..c.dim()).map(|b| c.cov[(a, b)]).collect())
                        .collect(),
                })
                .collect(),
        }
    }
}
