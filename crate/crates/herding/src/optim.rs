//! Multistart smooth maximization via BFGS with a strong Wolfe line search,
//! plus the mixture-derived heuristic start points used by the samplers.
//!
//! The optimizer is deterministic: no randomized restarts, and the multistart
//! winner is selected with a fixed lowest-index tie-break, so identical inputs
//! always produce bit-identical results.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixtures::GaussianMixture;

/// Ties in multistart selection are broken toward the earlier start when the
/// objective values are within this margin.
const TIE_TOL: f64 = 1e-12;

/// Quasi-Newton settings. The line search enforces the strong Wolfe
/// conditions with the given constants.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    /// Stop when the gradient sup-norm drops to this level.
    pub grad_tol: f64,
    pub max_iters: usize,
    /// Step for finite-difference gradients of objectives without one.
    pub fd_step: f64,
    pub wolfe_c1: f64,
    pub wolfe_c2: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self { grad_tol: 1e-8, max_iters: 200, fd_step: 1e-5, wolfe_c1: 1e-4, wolfe_c2: 0.9 }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.grad_tol > 0.0) {
            return Err(Error::InvalidArgument("grad_tol must be > 0".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_iters must be >= 1".into()));
        }
        if !(self.fd_step > 0.0) {
            return Err(Error::InvalidArgument("fd_step must be > 0".into()));
        }
        if !(0.0 < self.wolfe_c1 && self.wolfe_c1 < self.wolfe_c2 && self.wolfe_c2 < 1.0) {
            return Err(Error::InvalidArgument(
                "Wolfe constants must satisfy 0 < c1 < c2 < 1".into(),
            ));
        }
        Ok(())
    }
}

/// A differentiable objective of fixed arity.
///
/// Callers either supply an analytic gradient (possibly fused with the value
/// computation, which halves the work inside the line search) or fall back to
/// central finite differences.
pub struct SmoothObjective<'a> {
    arity: usize,
    #[allow(clippy::type_complexity)]
    eval: Box<dyn Fn(&DVector<f64>) -> (f64, DVector<f64>) + 'a>,
}

impl<'a> SmoothObjective<'a> {
    pub fn new(
        arity: usize,
        value: impl Fn(&DVector<f64>) -> f64 + 'a,
        gradient: impl Fn(&DVector<f64>) -> DVector<f64> + 'a,
    ) -> Self {
        Self { arity, eval: Box::new(move |x| (value(x), gradient(x))) }
    }

    /// Builds from a single closure returning value and gradient together.
    pub fn fused(arity: usize, eval: impl Fn(&DVector<f64>) -> (f64, DVector<f64>) + 'a) -> Self {
        Self { arity, eval: Box::new(eval) }
    }

    /// Builds from a value function alone, differentiating with central
    /// differences of step `fd_step`.
    pub fn from_value(arity: usize, value: impl Fn(&DVector<f64>) -> f64 + 'a, fd_step: f64) -> Self {
        let value = std::rc::Rc::new(value);
        let value_for_grad = value.clone();
        Self {
            arity,
            eval: Box::new(move |x| {
                let f = value(x);
                let mut grad = DVector::zeros(x.len());
                let mut probe = x.clone();
                for j in 0..x.len() {
                    probe[j] = x[j] + fd_step;
                    let up = value_for_grad(&probe);
                    probe[j] = x[j] - fd_step;
                    let down = value_for_grad(&probe);
                    probe[j] = x[j];
                    grad[j] = (up - down) / (2.0 * fd_step);
                }
                (f, grad)
            }),
        }
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        (self.eval)(x).0
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.eval)(x).1
    }

    pub fn value_and_gradient(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        (self.eval)(x)
    }
}

/// Result of a single maximization run.
#[derive(Clone, Debug)]
pub struct Maximum {
    pub argmax: DVector<f64>,
    pub value: f64,
    /// True iff the gradient tolerance was met within the iteration cap.
    pub converged: bool,
    pub iterations: usize,
}

/// Result of a multistart maximization.
#[derive(Clone, Debug)]
pub struct MultistartMaximum {
    pub best: Maximum,
    /// Index of the winning start (lowest index wins ties).
    pub start_index: usize,
    /// Number of starts attempted.
    pub starts: usize,
    /// Starts that failed with a non-finite objective and were skipped.
    pub failures: usize,
}

struct Probe {
    x: DVector<f64>,
    value: f64,
    grad: DVector<f64>,
}

fn probe(obj: &SmoothObjective, x: DVector<f64>) -> Result<Probe> {
    let (value, grad) = obj.value_and_gradient(&x);
    if !value.is_finite() {
        return Err(Error::NonFinite { what: "objective value", point: x.iter().copied().collect() });
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            what: "objective gradient",
            point: x.iter().copied().collect(),
        });
    }
    Ok(Probe { x, value, grad })
}

/// Maximizes `obj` from `start` by BFGS ascent (internally, minimization of
/// the negated objective). Returns the reached stationary point; `converged`
/// reports whether the gradient tolerance was met.
pub fn maximize(obj: &SmoothObjective, start: &DVector<f64>, cfg: &OptimConfig) -> Result<Maximum> {
    cfg.validate()?;
    if start.len() != obj.arity() {
        return Err(Error::DimensionMismatch { expected: obj.arity(), got: start.len() });
    }
    if start.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("start point must be finite".into()));
    }

    let n = start.len();
    // Work on the negated objective so the loop below is a plain minimizer.
    let mut current = probe(obj, start.clone()).map(negate)?;
    let mut inv_hessian = DMatrix::<f64>::identity(n, n);
    let mut scaled = false;
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..cfg.max_iters {
        if current.grad.amax() <= cfg.grad_tol {
            converged = true;
            break;
        }
        iterations += 1;

        let mut direction = -(&inv_hessian * &current.grad);
        let mut slope = current.grad.dot(&direction);
        if slope >= 0.0 {
            // Stale curvature made the direction non-descending; reset.
            inv_hessian = DMatrix::identity(n, n);
            scaled = false;
            direction = -current.grad.clone();
            slope = -current.grad.norm_squared();
            if slope >= 0.0 {
                break;
            }
        }

        let Some(next) = line_search(obj, &current, &direction, slope, cfg)? else {
            break; // No acceptable decrease along this direction.
        };

        let step = &next.x - &current.x;
        let grad_change = &next.grad - &current.grad;
        let curvature = step.dot(&grad_change);
        if curvature > 1e-10 * step.norm() * grad_change.norm() {
            if !scaled {
                // Self-scaling of the initial inverse Hessian.
                inv_hessian *= curvature / grad_change.norm_squared();
                scaled = true;
            }
            bfgs_update(&mut inv_hessian, &step, &grad_change, curvature);
        }
        current = next;
    }

    if current.grad.amax() <= cfg.grad_tol {
        converged = true;
    }
    Ok(Maximum { argmax: current.x, value: -current.value, converged, iterations })
}

fn negate(mut p: Probe) -> Probe {
    p.value = -p.value;
    p.grad.neg_mut();
    p
}

/// BFGS inverse-Hessian update with precomputed curvature `s'y`.
fn bfgs_update(h: &mut DMatrix<f64>, s: &DVector<f64>, y: &DVector<f64>, sy: f64) {
    let hy = &*h * y;
    let yhy = y.dot(&hy);
    let rho = 1.0 / sy;
    // H <- H - rho (s (Hy)' + (Hy) s') + rho (1 + rho y'Hy) s s'
    h.ger(-rho, s, &hy, 1.0);
    h.ger(-rho, &hy, s, 1.0);
    h.ger(rho * (1.0 + rho * yhy), s, s, 1.0);
}

/// Strong Wolfe line search on the negated objective (bracket and zoom).
/// Returns the accepted probe, or `None` when no decrease is achievable.
fn line_search(
    obj: &SmoothObjective,
    from: &Probe,
    direction: &DVector<f64>,
    slope0: f64,
    cfg: &OptimConfig,
) -> Result<Option<Probe>> {
    let c1 = cfg.wolfe_c1;
    let c2 = cfg.wolfe_c2;
    let phi0 = from.value;
    let eval = |alpha: f64| -> Result<(Probe, f64)> {
        let x = &from.x + direction * alpha;
        let p = probe(obj, x).map(negate)?;
        let slope = p.grad.dot(direction);
        Ok((p, slope))
    };

    let sufficient = |alpha: f64, value: f64| value <= phi0 + c1 * alpha * slope0;

    let mut alpha_prev = 0.0;
    let mut value_prev = phi0;
    let mut trial_prev: Option<Probe> = None;
    let mut alpha = 1.0;
    const ALPHA_MAX: f64 = 1e8;

    for iter in 0..25 {
        let (trial, slope) = eval(alpha)?;
        if !sufficient(alpha, trial.value) || (iter > 0 && trial.value >= value_prev) {
            return zoom(eval, phi0, slope0, c1, c2, alpha_prev, trial_prev.take(), alpha);
        }
        if slope.abs() <= -c2 * slope0 {
            return Ok(Some(trial));
        }
        if slope >= 0.0 {
            return zoom(eval, phi0, slope0, c1, c2, alpha, Some(trial), alpha_prev);
        }
        alpha_prev = alpha;
        value_prev = trial.value;
        trial_prev = Some(trial);
        alpha = (2.0 * alpha).min(ALPHA_MAX);
        if alpha_prev >= ALPHA_MAX {
            break;
        }
    }
    // Expansion exhausted; fall back to the last decreasing trial if any.
    Ok(trial_prev.filter(|t| t.value < phi0))
}

/// Zoom phase: maintains a bracket whose `lo` end satisfies the
/// sufficient-decrease condition, and bisects until the curvature condition
/// holds or the bracket collapses. `lo` carries the probe already evaluated at
/// `alpha_lo` (absent when `alpha_lo` is 0, i.e. the step origin).
fn zoom(
    eval: impl Fn(f64) -> Result<(Probe, f64)>,
    phi0: f64,
    slope0: f64,
    c1: f64,
    c2: f64,
    mut alpha_lo: f64,
    mut lo: Option<Probe>,
    mut alpha_hi: f64,
) -> Result<Option<Probe>> {
    let sufficient = |alpha: f64, value: f64| value <= phi0 + c1 * alpha * slope0;
    let mut value_lo = lo.as_ref().map_or(phi0, |p| p.value);

    for _ in 0..40 {
        let alpha = 0.5 * (alpha_lo + alpha_hi);
        if (alpha_hi - alpha_lo).abs() <= 1e-14 * alpha_lo.abs().max(1.0) || alpha == alpha_lo {
            break;
        }
        let (trial, slope) = eval(alpha)?;
        if !sufficient(alpha, trial.value) || trial.value >= value_lo {
            alpha_hi = alpha;
        } else {
            if slope.abs() <= -c2 * slope0 {
                return Ok(Some(trial));
            }
            if slope * (alpha_hi - alpha_lo) >= 0.0 {
                alpha_hi = alpha_lo;
            }
            alpha_lo = alpha;
            value_lo = trial.value;
            lo = Some(trial);
        }
    }
    Ok(lo.filter(|p| p.value < phi0))
}

/// Runs [`maximize`] from every start and returns the best outcome.
///
/// Starts failing with a non-finite objective are skipped; if every start
/// fails the whole call errors. Ties within `1e-12` of the best value go to
/// the lowest start index, independent of evaluation order.
pub fn maximize_multistart(
    obj: &SmoothObjective,
    starts: &[DVector<f64>],
    cfg: &OptimConfig,
) -> Result<MultistartMaximum> {
    if starts.is_empty() {
        return Err(Error::InvalidArgument("multistart needs at least one start".into()));
    }
    let mut best: Option<(usize, Maximum)> = None;
    let mut failures = 0;
    let mut last_err = None;
    for (index, start) in starts.iter().enumerate() {
        match maximize(obj, start, cfg) {
            Ok(outcome) => {
                let better = match &best {
                    None => true,
                    Some((_, incumbent)) => outcome.value > incumbent.value + TIE_TOL,
                };
                if better {
                    best = Some((index, outcome));
                }
            }
            Err(err @ Error::NonFinite { .. }) => {
                failures += 1;
                last_err = Some(err);
            }
            Err(err) => return Err(err),
        }
    }
    match best {
        Some((start_index, best)) => {
            Ok(MultistartMaximum { best, start_index, starts: starts.len(), failures })
        }
        None => Err(last_err.unwrap_or(Error::AllStartsFailed { starts: starts.len() })),
    }
}

/// Full-dimensional heuristic starts: every component mean plus the 2d
/// axis-aligned points `mean +- sqrt(diag(cov))`, giving `M (2d + 1)` starts.
pub fn heuristic_starts(gm: &GaussianMixture) -> Vec<DVector<f64>> {
    let d = gm.dim();
    let mut starts = Vec::with_capacity(gm.n_components() * (2 * d + 1));
    for comp in gm.components() {
        starts.push(comp.mean().clone());
        for axis in 0..d {
            let sigma = comp.cov()[(axis, axis)].sqrt();
            let mut up = comp.mean().clone();
            up[axis] += sigma;
            starts.push(up);
            let mut down = comp.mean().clone();
            down[axis] -= sigma;
            starts.push(down);
        }
    }
    starts
}

/// One-dimensional heuristic starts for conditional objectives: each
/// conditional component mean and `mean +- sigma`, giving `3 M` starts
/// regardless of the ambient dimension.
pub fn heuristic_starts_conditional(conditional: &GaussianMixture) -> Result<Vec<DVector<f64>>> {
    if conditional.dim() != 1 {
        return Err(Error::DimensionMismatch { expected: 1, got: conditional.dim() });
    }
    let mut starts = Vec::with_capacity(3 * conditional.n_components());
    for comp in conditional.components() {
        let mean = comp.mean()[0];
        let sigma = comp.cov()[(0, 0)].sqrt();
        starts.push(DVector::from_element(1, mean));
        starts.push(DVector::from_element(1, mean + sigma));
        starts.push(DVector::from_element(1, mean - sigma));
    }
    Ok(starts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{IsotropicGaussianKernel, MeanEmbedding};
    use crate::mixtures::{GaussianComponent, GaussianMixture};

    fn vec1(x: f64) -> DVector<f64> {
        DVector::from_vec(vec![x])
    }

    fn quadratic() -> SmoothObjective<'static> {
        SmoothObjective::new(
            1,
            |x| -(x[0] - 3.0) * (x[0] - 3.0),
            |x| DVector::from_element(1, -2.0 * (x[0] - 3.0)),
        )
    }

    fn bimodal_embedding(w_left: f64) -> (GaussianMixture, MeanEmbedding) {
        let gm = GaussianMixture::new(vec![
            GaussianComponent::new(w_left, vec1(-2.0), DMatrix::from_element(1, 1, 0.25)).unwrap(),
            GaussianComponent::new(1.0 - w_left, vec1(2.0), DMatrix::from_element(1, 1, 0.25))
                .unwrap(),
        ])
        .unwrap();
        let kern = IsotropicGaussianKernel::new(0.1, 1).unwrap();
        let embedding = MeanEmbedding::new(&kern, &gm).unwrap();
        (gm, embedding)
    }

    fn grid_argmax(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> (f64, f64) {
        let mut best = (lo, f(lo));
        for i in 1..n {
            let x = lo + (hi - lo) * i as f64 / (n - 1) as f64;
            let v = f(x);
            if v > best.1 {
                best = (x, v);
            }
        }
        best
    }

    #[test]
    fn quadratic_converges() {
        let out = maximize(&quadratic(), &vec1(0.0), &OptimConfig::default()).unwrap();
        assert!(out.converged);
        assert!((out.argmax[0] - 3.0).abs() < 1e-6, "argmax {}", out.argmax[0]);
    }

    #[test]
    fn single_gaussian_embedding_peak() {
        let gm = GaussianMixture::single(vec1(1.5), DMatrix::from_element(1, 1, 0.8)).unwrap();
        let kern = IsotropicGaussianKernel::new(0.1, 1).unwrap();
        let embedding = MeanEmbedding::new(&kern, &gm).unwrap();
        let obj = SmoothObjective::fused(1, |x| embedding.value_and_gradient(x));
        for &start in &[0.2, 1.0, 2.8] {
            let out = maximize(&obj, &vec1(start), &OptimConfig::default()).unwrap();
            assert!((out.argmax[0] - 1.5).abs() < 1e-5, "start {start} -> {}", out.argmax[0]);
        }
    }

    #[test]
    fn local_maximizer_stays_in_basin() {
        let (_, embedding) = bimodal_embedding(0.5);
        let obj = SmoothObjective::fused(1, |x| embedding.value_and_gradient(x));
        let (left_peak, _) = grid_argmax(|x| embedding.value(&vec1(x)), -4.0, 0.0, 200_001);
        let out = maximize(&obj, &vec1(-1.7), &OptimConfig::default()).unwrap();
        assert!(
            (out.argmax[0] - left_peak).abs() < 1e-4,
            "expected left mode {left_peak}, got {}",
            out.argmax[0]
        );
    }

    #[test]
    fn finite_difference_fallback_matches_analytic() {
        let exact = quadratic();
        let fd = SmoothObjective::from_value(1, |x| -(x[0] - 3.0) * (x[0] - 3.0), 1e-5);
        let x = vec1(1.25);
        assert!((exact.gradient(&x)[0] - fd.gradient(&x)[0]).abs() < 1e-4);
        let out = maximize(&fd, &vec1(0.0), &OptimConfig::default()).unwrap();
        assert!((out.argmax[0] - 3.0).abs() < 1e-5);
    }

    #[test]
    fn non_finite_objective_reports_point() {
        let obj = SmoothObjective::new(
            1,
            |x| if x[0] > 0.5 { f64::NAN } else { -x[0] * x[0] },
            |x| DVector::from_element(1, -2.0 * x[0]),
        );
        let err = maximize(&obj, &vec1(1.0), &OptimConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }), "{err:?}");
    }

    #[test]
    fn multistart_matches_single_start_on_quadratic() {
        let obj = quadratic();
        let single = maximize(&obj, &vec1(0.0), &OptimConfig::default()).unwrap();
        let multi = maximize_multistart(
            &obj,
            &[vec1(0.0), vec1(10.0), vec1(-5.0)],
            &OptimConfig::default(),
        )
        .unwrap();
        assert!((multi.best.argmax[0] - single.argmax[0]).abs() < 1e-8);
        assert_eq!(multi.starts, 3);
    }

    #[test]
    fn multistart_picks_heavier_mode() {
        let (_, embedding) = bimodal_embedding(0.4);
        let obj = SmoothObjective::fused(1, |x| embedding.value_and_gradient(x));
        let (right_peak, right_val) = grid_argmax(|x| embedding.value(&vec1(x)), 0.0, 4.0, 200_001);
        let (_, left_val) = grid_argmax(|x| embedding.value(&vec1(x)), -4.0, 0.0, 200_001);
        assert!(right_val > left_val);
        let out =
            maximize_multistart(&obj, &[vec1(-2.0), vec1(2.0)], &OptimConfig::default()).unwrap();
        assert!((out.best.argmax[0] - right_peak).abs() < 1e-4);
        assert_eq!(out.start_index, 1);
    }

    #[test]
    fn multistart_tie_breaks_to_first_start() {
        // Symmetric double well: both starts reach maxima of identical value.
        let obj = SmoothObjective::new(
            1,
            |x| -(x[0] * x[0] - 1.0) * (x[0] * x[0] - 1.0),
            |x| DVector::from_element(1, -4.0 * x[0] * (x[0] * x[0] - 1.0)),
        );
        let out =
            maximize_multistart(&obj, &[vec1(0.9), vec1(-0.9)], &OptimConfig::default()).unwrap();
        assert_eq!(out.start_index, 0);
        assert!((out.best.argmax[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn multistart_ascends_from_every_start() {
        let (_, embedding) = bimodal_embedding(0.5);
        let obj = SmoothObjective::fused(1, |x| embedding.value_and_gradient(x));
        let starts = [vec1(-2.5), vec1(-0.4), vec1(0.1), vec1(3.1)];
        let mut best_single = f64::NEG_INFINITY;
        for start in &starts {
            let out = maximize(&obj, start, &OptimConfig::default()).unwrap();
            assert!(out.value >= obj.value(start) - 1e-12, "descent from {start}");
            best_single = best_single.max(out.value);
        }
        let multi = maximize_multistart(&obj, &starts, &OptimConfig::default()).unwrap();
        assert!(multi.best.value >= best_single - 1e-12);
    }

    #[test]
    fn maximize_is_deterministic() {
        let (_, embedding) = bimodal_embedding(0.45);
        let obj = SmoothObjective::fused(1, |x| embedding.value_and_gradient(x));
        let a = maximize(&obj, &vec1(-1.3), &OptimConfig::default()).unwrap();
        let b = maximize(&obj, &vec1(-1.3), &OptimConfig::default()).unwrap();
        assert_eq!(a.argmax[0].to_bits(), b.argmax[0].to_bits());
        assert_eq!(a.value.to_bits(), b.value.to_bits());
    }

    #[test]
    fn heuristic_start_layout() {
        let gm = GaussianMixture::single(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        let starts = heuristic_starts(&gm);
        let expect: Vec<Vec<f64>> = vec![
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![-1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, -1.0],
        ];
        assert_eq!(starts.len(), 5);
        for (s, e) in starts.iter().zip(expect) {
            assert_eq!(s.iter().copied().collect::<Vec<_>>(), e);
        }
    }

    #[test]
    fn heuristic_start_counts() {
        let gen = crate::mixtures::MixtureGenConfig::default();
        let gm = crate::mixtures::random_mixture(1, 10, 5, &gen).unwrap();
        assert_eq!(heuristic_starts(&gm).len(), 5 * (2 * 10 + 1));
        let gm2 = crate::mixtures::random_mixture(2, 4, 5, &gen).unwrap();
        let cond = gm2.conditional(0, &DVector::from_vec(vec![0.1, 0.2, -0.3])).unwrap();
        assert_eq!(heuristic_starts_conditional(&cond).unwrap().len(), 15);
    }
}
