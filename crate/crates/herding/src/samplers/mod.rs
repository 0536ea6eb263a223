//! Deterministic sampling procedures: kernel herding, continuous herded Gibbs
//! sampling, and the discrete herded Gibbs sampler. The random baseline lives
//! on [`crate::mixtures::GaussianMixture::sample_random`].

use std::time::Duration;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

mod discrete;
mod gibbs;
mod kernel_herding;

pub use discrete::{discrete_herded_gibbs, DiscreteConditionalModel};
pub use gibbs::{chg_weight_function, continuous_herded_gibbs, ChgWeightFunction};
pub use kernel_herding::kernel_herding;

/// Per-sample diagnostics recorded by the herding samplers.
#[derive(Clone, Debug)]
pub struct StepDiagnostics {
    /// Objective value attained by the optimization that produced the sample
    /// (for a Gibbs sweep, the final coordinate's objective).
    pub objective_value: f64,
    /// Whether every optimizer run behind this sample met the gradient
    /// tolerance.
    pub converged: bool,
    /// Wall time spent inside optimization calls for this sample.
    pub wall_time: Duration,
    /// Number of multistart optimizations run for this sample (1 for kernel
    /// herding, d for a Gibbs sweep).
    pub optimizer_runs: usize,
    /// Total optimizer starts across those runs.
    pub optimizer_starts: usize,
}

/// An ordered list of deterministic samples with per-step diagnostics; the
/// samples double as the support of the implicit kernel density estimate the
/// herding recursions build up.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "TraceDto", into = "TraceDto")]
pub struct HerdingTrace {
    pub dim: usize,
    pub samples: Vec<DVector<f64>>,
    pub per_step: Vec<StepDiagnostics>,
}

impl HerdingTrace {
    pub fn new(dim: usize) -> Self {
        Self { dim, samples: Vec::new(), per_step: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub(crate) fn push(&mut self, sample: DVector<f64>, diagnostics: StepDiagnostics) {
        debug_assert_eq!(sample.len(), self.dim);
        self.samples.push(sample);
        self.per_step.push(diagnostics);
    }

    /// Flat CSV: header `index,x_1,..,x_d`, one row per sample.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "index")?;
        for j in 1..=self.dim {
            write!(out, ",x_{j}")?;
        }
        writeln!(out)?;
        for (i, sample) in self.samples.iter().enumerate() {
            write!(out, "{i}")?;
            for value in sample.iter() {
                write!(out, ",{value}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("CSV output is ASCII")
    }
}

#[derive(Serialize, Deserialize)]
struct StepDto {
    objective: f64,
    converged: bool,
    ms: f64,
}

#[derive(Serialize, Deserialize)]
struct TraceDto {
    dim: usize,
    samples: Vec<Vec<f64>>,
    diagnostics: Vec<StepDto>,
}

impl TryFrom<TraceDto> for HerdingTrace {
    type Error = Error;

    fn try_from(dto: TraceDto) -> Result<Self> {
        if dto.samples.len() != dto.diagnostics.len() {
            return Err(Error::InvalidArgument(format!(
                "trace has {} samples but {} diagnostic entries",
                dto.samples.len(),
                dto.diagnostics.len()
            )));
        }
        let samples = dto
            .samples
            .into_iter()
            .map(|s| {
                if s.len() != dto.dim {
                    return Err(Error::DimensionMismatch { expected: dto.dim, got: s.len() });
                }
                if s.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidArgument("trace samples must be finite".into()));
                }
                Ok(DVector::from_vec(s))
            })
            .collect::<Result<Vec<_>>>()?;
        // Optimizer run/start counts are in-memory diagnostics only; the wire
        // format carries objective, convergence flag and milliseconds.
        let per_step = dto
            .diagnostics
            .into_iter()
            .map(|d| StepDiagnostics {
                objective_value: d.objective,
                converged: d.converged,
                wall_time: Duration::from_secs_f64(d.ms.max(0.0) / 1e3),
                optimizer_runs: 0,
                optimizer_starts: 0,
            })
            .collect();
        Ok(Self { dim: dto.dim, samples, per_step })
    }
}

impl From<HerdingTrace> for TraceDto {
    fn from(trace: HerdingTrace) -> Self {
        TraceDto {
            dim: trace.dim,
            samples: trace.samples.iter().map(|s| s.iter().copied().collect()).collect(),
            diagnostics: trace
                .per_step
                .iter()
                .map(|d| StepDto {
                    objective: d.objective_value,
                    converged: d.converged,
                    ms: d.wall_time.as_secs_f64() * 1e3,
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_trace() -> HerdingTrace {
        let mut trace = HerdingTrace::new(2);
        trace.push(
            DVector::from_vec(vec![1.0, -0.5]),
            StepDiagnostics {
                objective_value: 0.25,
                converged: true,
                wall_time: Duration::from_millis(3),
                optimizer_runs: 1,
                optimizer_starts: 5,
            },
        );
        trace.push(
            DVector::from_vec(vec![0.125, 2.5]),
            StepDiagnostics {
                objective_value: 0.125,
                converged: false,
                wall_time: Duration::from_millis(1),
                optimizer_runs: 1,
                optimizer_starts: 5,
            },
        );
        trace
    }

    #[test]
    fn csv_layout() {
        let csv = toy_trace().to_csv_string();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines, vec!["index,x_1,x_2", "0,1,-0.5", "1,0.125,2.5"]);
    }

    #[test]
    fn json_schema_and_roundtrip() {
        let trace = toy_trace();
        let json = serde_json::to_value(&trace).unwrap();
        assert_eq!(json["dim"], 2);
        assert_eq!(json["samples"][0], serde_json::json!([1.0, -0.5]));
        assert_eq!(json["diagnostics"][0]["objective"], 0.25);
        assert_eq!(json["diagnostics"][0]["converged"], true);
        let back: HerdingTrace = serde_json::from_value(json).unwrap();
        assert_eq!(back.samples, trace.samples);
        assert_eq!(back.per_step[1].objective_value, 0.125);
    }

    #[test]
    fn json_rejects_inconsistent_trace() {
        let bad = serde_json::json!({
            "dim": 2,
            "samples": [[1.0, 2.0], [3.0]],
            "diagnostics": [
                {"objective": 0.0, "converged": true, "ms": 0.0},
                {"objective": 0.0, "converged": true, "ms": 0.0}
            ]
        });
        assert!(serde_json::from_value::<HerdingTrace>(bad).is_err());
    }
}
