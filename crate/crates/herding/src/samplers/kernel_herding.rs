//! Kernel herding: greedy deterministic sampling in the kernel's feature
//! space.
//!
//! Sample t+1 maximizes the smoothed target density minus the scaled kernel
//! density estimate of the samples drawn so far,
//!
//! ```text
//! x^(t+1) = argmax_x  E_{x'~p}[k(x, x')] - 1/(t+1) * sum_{s<=t} k(x, x^(s)),
//! ```
//!
//! so each new sample is pulled toward unexplored probability mass and pushed
//! away from previous samples. The first sample maximizes the smoothed
//! density alone.

use std::time::Instant;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::kernels::{IsotropicGaussianKernel, MeanEmbedding};
use crate::mixtures::GaussianMixture;
use crate::optim::{heuristic_starts, maximize_multistart, OptimConfig, SmoothObjective};

use super::{HerdingTrace, StepDiagnostics};

/// Draws `n_samples` deterministic samples from `gm` by kernel herding.
///
/// Each step runs a full-dimensional multistart maximization from the
/// mixture's heuristic start points. Optimizer failures carry the step index.
pub fn kernel_herding(
    gm: &GaussianMixture,
    kern: &IsotropicGaussianKernel,
    n_samples: usize,
    cfg: &OptimConfig,
) -> Result<HerdingTrace> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("sample count must be >= 1".into()));
    }
    if kern.dim() != gm.dim() {
        return Err(Error::DimensionMismatch { expected: gm.dim(), got: kern.dim() });
    }
    cfg.validate()?;

    let dim = gm.dim();
    let embedding = MeanEmbedding::new(kern, gm)?;
    let starts = heuristic_starts(gm);
    let sigma_sq = kern.sigma_k() * kern.sigma_k();
    let mut trace = HerdingTrace::new(dim);

    for step in 0..n_samples {
        let outcome = {
            let previous = &trace.samples;
            let scale = 1.0 / (previous.len() + 1) as f64;
            let objective = SmoothObjective::fused(dim, |x: &DVector<f64>| {
                let (mut value, mut grad) = embedding.value_and_gradient(x);
                for sample in previous {
                    let k = kern.eval(x.as_slice(), sample.as_slice()).expect("equal lengths");
                    if k > 0.0 {
                        value -= scale * k;
                        // d/dx of -scale * k(x, s) is  scale * k * (x - s) / sigma^2.
                        grad.axpy(scale * k / sigma_sq, &(x - sample), 1.0);
                    }
                }
                (value, grad)
            });
            let start_time = Instant::now();
            let outcome = maximize_multistart(&objective, &starts, cfg)
                .map_err(|e| Error::SamplerStep { step, source: Box::new(e) })?;
            (outcome, start_time.elapsed())
        };
        let (result, wall_time) = outcome;
        trace.push(
            result.best.argmax,
            StepDiagnostics {
                objective_value: result.best.value,
                converged: result.best.converged,
                wall_time,
                optimizer_runs: 1,
                optimizer_starts: result.starts,
            },
        );
    }
    Ok(trace)
}
