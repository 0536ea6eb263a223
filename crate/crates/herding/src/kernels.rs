//! Isotropic Gaussian kernels and their closed-form expectations against
//! Gaussian mixtures.
//!
//! The kernel is the normalized density `k_n(x, y) = N(x; y, sigma_k^2 I_n)`,
//! so it factorizes over coordinates and every expectation against a Gaussian
//! mixture reduces to evaluating Gaussians with inflated covariances:
//!
//! - smoothed density (kernel mean embedding):
//!   `E_{x'~p}[k(x, x')] = sum_i w_i N(x; mu_i, cov_i + sigma_k^2 I)`
//! - double expectation:
//!   `E_{x,x'~p}[k(x, x')] = sum_{i,j} w_i w_j N(mu_i; mu_j, cov_i + cov_j + sigma_k^2 I)`
//! - mixture-mixture L2 inner product:
//!   `<a, b> = sum_{i,j} w_i v_j N(mu_i; nu_j, cov_i + lambda_j)`
//!
//! Everything is evaluated in log space and exponentiated last, so widely
//! separated components underflow to exact zeros instead of NaNs.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gauss::{exp_flush, GaussianPdf};
use crate::mixtures::GaussianMixture;

/// Isotropic Gaussian kernel with bandwidth `sigma_k), shared across all
/// subvector evaluations.
#[derive(Clone, Copy, Debug)]
pub struct IsotropicGaussianKernel {
    sigma_k: f64,
    dim: usize,
}

impl IsotropicGaussianKernel {
    pub fn new(sigma_k: f64, dim: usize) -> Result<Self> {
        if !(sigma_k > 0.0 && sigma_k.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "kernel bandwidth must be positive and finite, got {sigma_k}"
            )));
        }
        if dim == 0 {
            return Err(Error::InvalidArgument("kernel dimension must be >= 1".into()));
        }
        Ok(Self { sigma_k, dim })
    }

    pub fn sigma_k(&self) -> f64 {
        self.sigma_k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `sigma_k^2 I_n` for an n-dimensional slice of the kernel.
    pub fn cov(&self, n: usize) -> DMatrix<f64> {
        DMatrix::identity(n, n) * (self.sigma_k * self.sigma_k)
    }

    /// Kernel value for two equal-length vectors of any length (the kernel
    /// factorizes; full, single-coordinate and complement slices all share
    /// `sigma_k`).
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        Ok(exp_flush(self.log_eval(x, y)?))
    }

    /// Log kernel value; see [`Self::eval`].
    pub fn log_eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch { expected: x.len(), got: y.len() });
        }
        if x.is_empty() {
            return Err(Error::InvalidArgument("kernel arguments must be nonempty".into()));
        }
        Ok(self.log_eval_unchecked(x, y))
    }

    pub(crate) fn log_eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), y.len());
        let sq_dist: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        self.log_peak(x.len()) - 0.5 * sq_dist / (self.sigma_k * self.sigma_k)
    }

    /// `log k_n(x, x)`, the log of the kernel peak in n dimensions.
    pub(crate) fn log_peak(&self, n: usize) -> f64 {
        let two_pi_var = 2.0 * std::f64::consts::PI * self.sigma_k * self.sigma_k;
        -0.5 * n as f64 * two_pi_var.ln()
    }
}

/// Precomputed smoothed mixture `x -> E_{x'~p}[k(x, x')]` with its analytic
/// gradient. The samplers evaluate this many times per drawn sample, so the
/// inflated-covariance Cholesky factors are built once.
#[derive(Clone, Debug)]
pub struct MeanEmbedding {
    dim: usize,
    components: Vec<(f64, GaussianPdf)>,
}

impl MeanEmbedding {
    pub fn new(kern: &IsotropicGaussianKernel, gm: &GaussianMixture) -> Result<Self> {
        if kern.dim() != gm.dim() {
            return Err(Error::DimensionMismatch { expected: gm.dim(), got: kern.dim() });
        }
        let components = gm
            .components()
            .iter()
            .map(|c| {
                let inflated = c.cov() + kern.cov(gm.dim());
                GaussianPdf::new(c.mean().clone(), inflated).map(|pdf| (c.weight(), pdf))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { dim: gm.dim(), components })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        self.components.iter().map(|(w, pdf)| w * exp_flush(pdf.log_pdf(x))).sum()
    }

    pub fn value_and_gradient(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        debug_assert_eq!(x.len(), self.dim);
        let mut value = 0.0;
        let mut grad = DVector::zeros(self.dim);
        for (w, pdf) in &self.components {
            let term = w * exp_flush(pdf.log_pdf(x));
            if term > 0.0 {
                value += term;
                grad.axpy(-term, &pdf.solve_centered(x), 1.0);
            }
        }
        (value, grad)
    }
}

/// Smoothed mixture density `E_{x'~p}[k(x, x')]` at a single point.
pub fn mean_embedding(
    kern: &IsotropicGaussianKernel,
    gm: &GaussianMixture,
    x: &DVector<f64>,
) -> Result<f64> {
    Ok(mean_embedding_with_gradient(kern, gm, x)?.0)
}

/// Smoothed mixture density together with its gradient in `x`.
pub fn mean_embedding_with_gradient(
    kern: &IsotropicGaussianKernel,
    gm: &GaussianMixture,
    x: &DVector<f64>,
) -> Result<(f64, DVector<f64>)> {
    if x.len() != gm.dim() {
        return Err(Error::DimensionMismatch { expected: gm.dim(), got: x.len() });
    }
    let embedding = MeanEmbedding::new(kern, gm)?;
    Ok(embedding.value_and_gradient(x))
}

/// `E_{x,x'~p}[k(x, x')]`: the kernel double expectation under the mixture.
pub fn double_expectation(kern: &IsotropicGaussianKernel, gm: &GaussianMixture) -> Result<f64> {
    if kern.dim() != gm.dim() {
        return Err(Error::DimensionMismatch { expected: gm.dim(), got: kern.dim() });
    }
    let kernel_cov = kern.cov(gm.dim());
    let mut total = 0.0;
    for ci in gm.components() {
        for cj in gm.components() {
            let cov = ci.cov() + cj.cov() + &kernel_cov;
            let pdf = GaussianPdf::new(cj.mean().clone(), cov)?;
            total += ci.weight() * cj.weight() * exp_flush(pdf.log_pdf(ci.mean()));
        }
    }
    Ok(total)
}

/// L2 inner product `\int a(x) b(x) dx` of two Gaussian mixtures, in closed
/// form. Symmetric up to summation order.
pub fn gm_inner_product(a: &GaussianMixture, b: &GaussianMixture) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), got: b.dim() });
    }
    let mut total = 0.0;
    for ca in a.components() {
        for cb in b.components() {
            let cov = ca.cov() + cb.cov();
            let pdf = GaussianPdf::new(cb.mean().clone(), cov)?;
            total += ca.weight() * cb.weight() * exp_flush(pdf.log_pdf(ca.mean()));
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixtures::{random_mixture, GaussianComponent, MixtureGenConfig};

    fn vec1(x: f64) -> DVector<f64> {
        DVector::from_vec(vec![x])
    }

    fn single_1d(mean: f64, var: f64) -> GaussianMixture {
        GaussianMixture::single(vec1(mean), DMatrix::from_element(1, 1, var)).unwrap()
    }

    #[test]
    fn eval_peaks() {
        let kern = IsotropicGaussianKernel::new(0.1, 2).unwrap();
        let k1 = kern.eval(&[0.3], &[0.3]).unwrap();
        assert!((k1 - 3.989422804014327).abs() < 1e-9);
        let k2 = kern.eval(&[0.3, -0.2], &[0.3, -0.2]).unwrap();
        assert!((k2 - 15.915494309189535).abs() < 1e-9);
        // One-sigma falloff.
        let k_off = kern.eval(&[0.0], &[0.1]).unwrap();
        assert!((k_off - 3.989422804014327 * (-0.5f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn eval_rejects_mismatched_lengths() {
        let kern = IsotropicGaussianKernel::new(0.1, 2).unwrap();
        assert!(kern.eval(&[0.0, 1.0], &[0.0]).is_err());
        assert!(kern.eval(&[], &[]).is_err());
    }

    #[test]
    fn kernel_factorizes_over_coordinates() {
        let kern = IsotropicGaussianKernel::new(0.37, 4).unwrap();
        let x = [0.1, -2.0, 0.7, 1.3];
        let y = [0.0, -1.5, 0.9, 1.1];
        for i in 0..4 {
            let full = kern.eval(&x, &y).unwrap();
            let head = kern.eval(&[x[i]], &[y[i]]).unwrap();
            let rest_x: Vec<f64> =
                x.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| *v).collect();
            let rest_y: Vec<f64> =
                y.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| *v).collect();
            let tail = kern.eval(&rest_x, &rest_y).unwrap();
            assert!((full - head * tail).abs() <= 1e-12 * full.abs().max(1e-300));
        }
    }

    #[test]
    fn embedding_of_standard_normal() {
        let kern = IsotropicGaussianKernel::new(0.1, 1).unwrap();
        let gm = single_1d(0.0, 1.0);
        let value = mean_embedding(&kern, &gm, &vec1(0.0)).unwrap();
        let expected = 1.0 / (2.0 * std::f64::consts::PI * 1.01).sqrt();
        assert!((value - expected).abs() < 1e-12);
        assert!((value - 0.3969525).abs() < 1e-7);
    }

    #[test]
    fn embedding_peaks_at_single_gaussian_mean() {
        let kern = IsotropicGaussianKernel::new(0.1, 1).unwrap();
        let gm = single_1d(1.7, 0.4);
        let at_mean = mean_embedding(&kern, &gm, &vec1(1.7)).unwrap();
        for &dx in &[-0.5, -0.1, 0.1, 0.5] {
            assert!(at_mean > mean_embedding(&kern, &gm, &vec1(1.7 + dx)).unwrap());
        }
    }

    #[test]
    fn embedding_gradient_matches_finite_differences() {
        let gen = MixtureGenConfig::default();
        for seed in 0..3u64 {
            for &d in &[1usize, 2, 3] {
                let gm = random_mixture(seed * 31 + 5, d, 3, &gen).unwrap();
                let kern = IsotropicGaussianKernel::new(0.1, d).unwrap();
                let embedding = MeanEmbedding::new(&kern, &gm).unwrap();
                let mut rng = crate::rng::SeededRng::new(1000 + seed);
                for _ in 0..20 {
                    let pick = (rng.uniform01() * gm.n_components() as f64) as usize;
                    let comp = &gm.components()[pick.min(gm.n_components() - 1)];
                    let x = DVector::from_fn(d, |j, _| {
                        comp.mean()[j] + rng.uniform(-1.0, 1.0) * comp.cov()[(j, j)].sqrt()
                    });
                    let (_, grad) = embedding.value_and_gradient(&x);
                    let h = 1e-5;
                    for j in 0..d {
                        let mut xp = x.clone();
                        let mut xm = x.clone();
                        xp[j] += h;
                        xm[j] -= h;
                        let fd = (embedding.value(&xp) - embedding.value(&xm)) / (2.0 * h);
                        let scale = grad[j].abs().max(fd.abs()).max(1e-10);
                        assert!(
                            (grad[j] - fd).abs() <= 1e-5 * scale,
                            "d={d} seed={seed} coord {j}: analytic {} vs fd {fd}",
                            grad[j]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn double_expectation_standard_normal() {
        let kern = IsotropicGaussianKernel::new(0.1, 1).unwrap();
        let gm = single_1d(0.0, 1.0);
        let value = double_expectation(&kern, &gm).unwrap();
        let expected = 1.0 / (2.0 * std::f64::consts::PI * 2.01).sqrt();
        assert!((value - expected).abs() < 1e-12);
        assert!((value - 0.2814177).abs() < 1e-7);
    }

    #[test]
    fn double_expectation_invariant_under_component_order() {
        let gen = MixtureGenConfig::default();
        let gm = random_mixture(17, 2, 3, &gen).unwrap();
        let kern = IsotropicGaussianKernel::new(0.1, 2).unwrap();
        let comps: Vec<GaussianComponent> = gm.components().to_vec();
        let reversed =
            GaussianMixture::new(comps.into_iter().rev().collect()).unwrap();
        let a = double_expectation(&kern, &gm).unwrap();
        let b = double_expectation(&kern, &reversed).unwrap();
        assert!((a - b).abs() <= 1e-14 * a.abs());
    }

    #[test]
    fn double_expectation_far_separated_components() {
        let kern = IsotropicGaussianKernel::new(0.1, 1).unwrap();
        let gm = GaussianMixture::new(vec![
            GaussianComponent::new(0.5, vec1(-100.0), DMatrix::identity(1, 1)).unwrap(),
            GaussianComponent::new(0.5, vec1(100.0), DMatrix::identity(1, 1)).unwrap(),
        ])
        .unwrap();
        let value = double_expectation(&kern, &gm).unwrap();
        // Cross terms carry exp(-200^2 / (2 * 2.01)) < 1e-300 and flush to zero,
        // leaving the two within-component terms.
        let within = 0.25 / (2.0 * std::f64::consts::PI * 2.01).sqrt();
        assert!((value - 2.0 * within).abs() < 1e-15);
    }

    #[test]
    fn inner_product_standard_normal_with_itself() {
        let gm = single_1d(0.0, 1.0);
        let value = gm_inner_product(&gm, &gm).unwrap();
        let expected = 1.0 / (4.0 * std::f64::consts::PI).sqrt();
        assert!((value - expected).abs() < 1e-12);
        assert!((value - 0.2820948).abs() < 1e-7);
    }

    #[test]
    fn inner_product_far_separated() {
        let a = single_1d(0.0, 1.0);
        let b = single_1d(10.0, 1.0);
        let value = gm_inner_product(&a, &b).unwrap();
        // N(0; 10, 2) = exp(-25) / sqrt(4 pi).
        let expected = (-25.0f64).exp() / (4.0 * std::f64::consts::PI).sqrt();
        assert!((value - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn inner_product_positive_and_symmetric() {
        let gen = MixtureGenConfig::default();
        let a = random_mixture(3, 2, 4, &gen).unwrap();
        let b = random_mixture(4, 2, 3, &gen).unwrap();
        let ab = gm_inner_product(&a, &b).unwrap();
        let ba = gm_inner_product(&b, &a).unwrap();
        assert!(gm_inner_product(&a, &a).unwrap() > 0.0);
        assert!((ab - ba).abs() <= 1e-14 * ab.abs().max(1e-300));
    }

    #[test]
    fn embedding_is_inner_product_with_kernel_component() {
        let gen = MixtureGenConfig::default();
        for seed in 0..5u64 {
            let gm = random_mixture(seed, 2, 3, &gen).unwrap();
            let kern = IsotropicGaussianKernel::new(0.1, 2).unwrap();
            let x = DVector::from_vec(vec![0.4 * seed as f64 - 1.0, 0.3]);
            let me = mean_embedding(&kern, &gm, &x).unwrap();
            let point = GaussianMixture::single(x.clone(), kern.cov(2)).unwrap();
            let ip = gm_inner_product(&gm, &point).unwrap();
            assert!((me - ip).abs() <= 1e-12 * me.abs().max(1e-300), "me {me} vs ip {ip}");
        }
    }
}
