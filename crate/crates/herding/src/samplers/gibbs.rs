//! Continuous herded Gibbs sampling.
//!
//! Instead of one d-dimensional herding optimization per sample, each sweep
//! updates one coordinate at a time. The coordinate objective combines the
//! smoothed exact conditional of the target with a conditional kernel density
//! estimate of all previous samples: with a kernel that factorizes over
//! coordinates, conditioning the sample KDE on the remaining coordinates
//! reduces to weighting sample `s` by `w_s = k(rest, rest^(s))`, the kernel
//! similarity between the current and the stored remaining coordinates. The
//! accepted coordinate maximizes
//!
//! ```text
//! (t+1)/t * E_{x'~p(x_i|rest)}[k_1(x_i, x')] - sum_s what_s k_1(x_i, x_i^(s)),
//! ```
//!
//! where `what_s` are the `w_s` normalized to sum to one (computed via
//! log-sum-exp). Every previous sample contributes, so no per-context herding
//! state is needed.

use std::time::{Duration, Instant};

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::gauss::{exp_flush, log_sum_exp};
use crate::kernels::{IsotropicGaussianKernel, MeanEmbedding};
use crate::mixtures::{remove_coordinate, GaussianMixture};
use crate::optim::{heuristic_starts_conditional, maximize_multistart, OptimConfig, SmoothObjective};

use super::{HerdingTrace, StepDiagnostics};

/// The one-dimensional coordinate objective of continuous herded Gibbs
/// sampling, with its sample weights and exact conditional exposed for
/// inspection.
pub struct ChgWeightFunction {
    conditional: GaussianMixture,
    embedding: MeanEmbedding,
    kern1: IsotropicGaussianKernel,
    scale: f64,
    sample_coords: Vec<f64>,
    weights: Vec<f64>,
    raw_weights: Vec<f64>,
    fallback: bool,
}

impl ChgWeightFunction {
    /// Builds the coordinate objective from the previous `samples` and the
    /// current sweep state `current` (only its coordinates other than
    /// `coordinate` are read).
    ///
    /// For one-dimensional targets the conditioning context is empty, every
    /// `w_s` is one, and the objective reduces to scaled kernel herding.
    pub fn new(
        gm: &GaussianMixture,
        kern: &IsotropicGaussianKernel,
        samples: &[DVector<f64>],
        coordinate: usize,
        current: &DVector<f64>,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument(
                "the weight function needs at least one previous sample".into(),
            ));
        }
        if kern.dim() != gm.dim() {
            return Err(Error::DimensionMismatch { expected: gm.dim(), got: kern.dim() });
        }
        if current.len() != gm.dim() {
            return Err(Error::DimensionMismatch { expected: gm.dim(), got: current.len() });
        }
        if coordinate >= gm.dim() {
            return Err(Error::InvalidArgument(format!(
                "coordinate {coordinate} out of range for dimension {}",
                gm.dim()
            )));
        }
        let dim = gm.dim();
        let t = samples.len();

        let (conditional, log_weights) = if dim == 1 {
            // Empty context: the conditional is the target itself and the
            // kernel product over zero coordinates weights every sample as 1.
            (gm.clone(), vec![0.0; t])
        } else {
            let rest = remove_coordinate(current, coordinate);
            let conditional = gm.conditional(coordinate, &rest)?;
            let log_weights = samples
                .iter()
                .map(|s| {
                    let rest_s = remove_coordinate(s, coordinate);
                    kern.log_eval_unchecked(rest.as_slice(), rest_s.as_slice())
                })
                .collect();
            (conditional, log_weights)
        };

        let raw_weights: Vec<f64> = log_weights.iter().map(|&lw| exp_flush(lw)).collect();
        let norm = log_sum_exp(&log_weights);
        let (weights, fallback) = if norm.is_finite() {
            (log_weights.iter().map(|&lw| (lw - norm).exp()).collect(), false)
        } else {
            // Every previous context is at effectively infinite distance;
            // weight them uniformly and flag it.
            (vec![1.0 / t as f64; t], true)
        };

        let kern1 = IsotropicGaussianKernel::new(kern.sigma_k(), 1)?;
        let embedding = MeanEmbedding::new(&kern1, &conditional)?;
        let sample_coords = samples.iter().map(|s| s[coordinate]).collect();
        Ok(Self {
            conditional,
            embedding,
            kern1,
            scale: (t + 1) as f64 / t as f64,
            sample_coords,
            weights,
            raw_weights,
            fallback,
        })
    }

    /// The exact one-dimensional conditional of the target.
    pub fn conditional(&self) -> &GaussianMixture {
        &self.conditional
    }

    /// Normalized sample weights; they sum to one unless the fallback fired.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Unnormalized kernel similarities `w_s = k(rest, rest^(s))`.
    pub fn raw_weights(&self) -> &[f64] {
        &self.raw_weights
    }

    /// True when all weights underflowed and the uniform fallback was used.
    pub fn used_uniform_fallback(&self) -> bool {
        self.fallback
    }

    pub fn value(&self, x_i: f64) -> f64 {
        self.value_and_gradient(x_i).0
    }

    pub fn gradient(&self, x_i: f64) -> f64 {
        self.value_and_gradient(x_i).1
    }

    fn value_and_gradient(&self, x_i: f64) -> (f64, f64) {
        let point = DVector::from_element(1, x_i);
        let (embed, embed_grad) = self.embedding.value_and_gradient(&point);
        let mut value = self.scale * embed;
        let mut grad = self.scale * embed_grad[0];
        let sigma_sq = self.kern1.sigma_k() * self.kern1.sigma_k();
        for (&coord, &weight) in self.sample_coords.iter().zip(&self.weights) {
            let k = exp_flush(self.kern1.log_eval_unchecked(&[x_i], &[coord]));
            if k > 0.0 {
                value -= weight * k;
                grad += weight * k * (x_i - coord) / sigma_sq;
            }
        }
        (value, grad)
    }

    /// The objective in optimizer form (arity 1).
    pub fn objective(&self) -> SmoothObjective<'_> {
        SmoothObjective::fused(1, move |x: &DVector<f64>| {
            let (value, grad) = self.value_and_gradient(x[0]);
            (value, DVector::from_element(1, grad))
        })
    }
}

/// Builds the coordinate weight function from a trace prefix; see
/// [`ChgWeightFunction::new`].
pub fn chg_weight_function(
    gm: &GaussianMixture,
    kern: &IsotropicGaussianKernel,
    trace: &HerdingTrace,
    coordinate: usize,
    current: &DVector<f64>,
) -> Result<ChgWeightFunction> {
    ChgWeightFunction::new(gm, kern, &trace.samples, coordinate, current)
}

/// Draws `n_samples` deterministic samples from `gm` by continuous herded
/// Gibbs sampling, starting from `init` (by convention kernel herding's first
/// sample, which the trace stores as sample 0).
///
/// Each subsequent sweep updates coordinates in ascending order; within a
/// sweep the conditioning context uses the coordinates already updated in
/// that sweep. The completed vector is emitted once per sweep.
pub fn continuous_herded_gibbs(
    gm: &GaussianMixture,
    kern: &IsotropicGaussianKernel,
    n_samples: usize,
    init: &DVector<f64>,
    cfg: &OptimConfig,
) -> Result<HerdingTrace> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("sample count must be >= 1".into()));
    }
    if kern.dim() != gm.dim() {
        return Err(Error::DimensionMismatch { expected: gm.dim(), got: kern.dim() });
    }
    if init.len() != gm.dim() {
        return Err(Error::DimensionMismatch { expected: gm.dim(), got: init.len() });
    }
    if init.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("init sample must be finite".into()));
    }
    cfg.validate()?;

    let dim = gm.dim();
    let mut trace = HerdingTrace::new(dim);
    // Sample 0 is supplied, not optimized; record the joint smoothed density
    // it maximized and charge it no wall time.
    let init_objective = MeanEmbedding::new(kern, gm)?.value(init);
    trace.push(
        init.clone(),
        StepDiagnostics {
            objective_value: init_objective,
            converged: true,
            wall_time: Duration::ZERO,
            optimizer_runs: 0,
            optimizer_starts: 0,
        },
    );

    for sweep in 1..n_samples {
        let mut x = trace.samples[sweep - 1].clone();
        let mut wall_time = Duration::ZERO;
        let mut converged = true;
        let mut starts_total = 0;
        let mut last_value = f64::NAN;
        for coordinate in 0..dim {
            let weight_fn = ChgWeightFunction::new(gm, kern, &trace.samples, coordinate, &x)
                .map_err(|e| Error::SweepStep { sweep, coordinate, source: Box::new(e) })?;
            let starts = heuristic_starts_conditional(weight_fn.conditional())?;
            let objective = weight_fn.objective();
            let started = Instant::now();
            let outcome = maximize_multistart(&objective, &starts, cfg)
                .map_err(|e| Error::SweepStep { sweep, coordinate, source: Box::new(e) })?;
            wall_time += started.elapsed();
            converged &= outcome.best.converged;
            starts_total += outcome.starts;
            last_value = outcome.best.value;
            x[coordinate] = outcome.best.argmax[0];
        }
        trace.push(
            x,
            StepDiagnostics {
                objective_value: last_value,
                converged,
                wall_time,
                optimizer_runs: dim,
                optimizer_starts: starts_total,
            },
        );
    }
    Ok(trace)
}
