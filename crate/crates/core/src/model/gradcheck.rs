//! Finite-difference audit of the adjoints stored in a [`CaptureBundle`].

use super::forward::{forward_with_capture, probed_score, Probe, ProbeTarget, SiteId};
use super::vocab::TriSequenceInput;
use super::weights::WeightSet;
use crate::error::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckEntry {
    pub site: SiteId,
    pub head: usize,
    pub target: ProbeTarget,
    pub row: usize,
    pub col: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Entries that needed the five-point stencil.
    pub refined: usize,
    /// Entries that also needed the reduced step.
    pub reduced: usize,
    pub worst: Option<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.worst.as_ref().map_or(0.0, |w| w.rel_err)
    }
}

/// `|a − f| / max(|a|, |f|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares every captured `∂/∂A`, `∂/∂Q`, `∂/∂K` entry with central differences of
/// the score under a probe of size `h`. The three-point estimate is used when it
/// is within `tol`; otherwise the five-point stencil (error `O(h⁴)`) is tried, and
/// if that also misses, both are repeated once at `h / 10`. The last step covers
/// probes whose `±2h` window straddles a ReLU kink.
pub fn check_capture_gradients(
    input: &TriSequenceInput,
    weights: &WeightSet,
    h: f64,
    tol: f64,
    floor: f64,
) -> Result<GradCheckReport> {
    let bundle = forward_with_capture(input, weights)?;
    let mut report = GradCheckReport::default();
    for site in &bundle.sites {
        for (head, cap) in site.heads.iter().enumerate() {
            for (target, value, grad) in [
                (ProbeTarget::Attention, &cap.a, &cap.grad_a),
                (ProbeTarget::Query, &cap.q, &cap.grad_q),
                (ProbeTarget::Key, &cap.k, &cap.grad_k),
            ] {
                for row in 0..value.rows() {
                    for col in 0..value.cols() {
                        let f = |delta: f64| {
                            probed_score(
                                input,
                                weights,
                                &Probe {
                                    site: site.id,
                                    head,
                                    target,
                                    row,
                                    col,
                                    delta,
                                },
                            )
                        };
                        let analytic = grad.get(row, col);
                        let (mut numeric, mut rel_err) = (0.0, f64::INFINITY);
                        for (i, step) in [h, h / 10.0].into_iter().enumerate() {
                            if i == 1 {
                                report.reduced += 1;
                            }
                            let d1 = f(step)? - f(-step)?;
                            numeric = d1 / (2.0 * step);
                            rel_err = relative_error(analytic, numeric, floor);
                            if rel_err < tol {
                                break;
                            }
                            let d2 = f(2.0 * step)? - f(-2.0 * step)?;
                            numeric = (8.0 * d1 - d2) / (12.0 * step);
                            rel_err = relative_error(analytic, numeric, floor);
                            if i == 0 {
                                report.refined += 1;
                            }
                            if rel_err < tol {
                                break;
                            }
                        }
                        report.checked += 1;
                        if report.worst.as_ref().map_or(true, |w| rel_err > w.rel_err) {
                            report.worst = Some(GradCheckEntry {
                                site: site.id,
                                head,
                                target,
                                row,
                                col,
                                analytic,
                                numeric,
                                rel_err,
                            });
                        }
                    }
                }
            }
        }
    }
    Ok(report)
}
