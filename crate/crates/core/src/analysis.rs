//! Small-gain certificates, merit monitoring and empirical gain estimates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::closed_loop::ClosedLoopTrace;
use crate::error::{FesError, Result};
use crate::linalg::{sym_eig_min_max, Matrix, Vector};
use crate::plant::LyapunovCertificate;

/// Where a constant came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstantSource {
    Analytic,
    /// Sup-ratio over random probes; a lower bound of the true constant.
    Empirical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledConstant {
    pub value: f64,
    pub source: ConstantSource,
}

impl LabeledConstant {
    pub fn analytic(value: f64) -> Self {
        LabeledConstant { value, source: ConstantSource::Analytic }
    }

    pub fn empirical(value: f64) -> Self {
        LabeledConstant { value, source: ConstantSource::Empirical }
    }
}

/// Inputs of the linear-rate small-gain bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateParts {
    pub lyapunov: LyapunovCertificate,
    pub l_v: LabeledConstant,
    pub l_z: LabeledConstant,
    pub l_t: LabeledConstant,
    pub l_g: LabeledConstant,
    pub l_q: LabeledConstant,
    /// Linear contraction rate of the algorithm in its metric.
    pub eta: f64,
    /// Metric of the merit function.
    #[serde(with = "crate::linalg::rows_serde")]
    pub metric: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityCertificate {
    #[serde(with = "crate::linalg::rows_serde")]
    pub p: Matrix,
    pub alpha3: f64,
    pub alpha4: f64,
    pub alpha5: f64,
    pub l_v: LabeledConstant,
    pub l_z: LabeledConstant,
    pub l_t: LabeledConstant,
    pub l_g: LabeledConstant,
    pub l_q: LabeledConstant,
    pub eta: f64,
    pub lambda_min_metric: f64,
    pub lambda_max_metric: f64,
    pub c1: f64,
    pub tau_bar: f64,
}

/// `c₁ = L_q L_T L_g √(α₄/α₃)(1 + L_z λ_max/((1−η)√λ_min))`.
#[allow(clippy::too_many_arguments)]
pub fn composite_constant(l_q: f64, l_t: f64, l_g: f64, alpha3: f64, alpha4: f64, l_z: f64, eta: f64, lambda_min: f64, lambda_max: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&eta) {
        return Err(FesError::InvalidParameter(format!("rate η = {eta} must lie in [0, 1)")));
    }
    if !(alpha3 > 0.0) || !(lambda_min > 0.0) {
        return Err(FesError::InvalidParameter("metric and Lyapunov bounds must be positive".into()));
    }
    Ok(l_q * l_t * l_g * (alpha4 / alpha3).sqrt() * (1.0 + l_z * lambda_max / ((1.0 - eta) * lambda_min.sqrt())))
}

/// Left side of the small-gain condition, `c e^{−2α₅τ}/(1 − e^{−α₅τ})` with `c = c₁L_V`.
pub fn small_gain_expression(c: f64, alpha5: f64, tau: f64) -> f64 {
    let q = (-alpha5 * tau).exp();
    c * q * q / (1.0 - q)
}

/// Sampling period above which the small-gain condition holds.
pub fn small_gain_threshold(c1: f64, l_v: f64, alpha5: f64) -> Result<f64> {
    if !(alpha5 > 0.0) {
        return Err(FesError::InvalidParameter("α₅ must be positive".into()));
    }
    let c = c1 * l_v;
    if !(c >= 0.0) || !c.is_finite() {
        return Err(FesError::InvalidParameter(format!("gain product {c} must be finite and nonnegative")));
    }
    if c == 0.0 {
        return Ok(0.0);
    }
    let mut hi = 1.0 / alpha5;
    while small_gain_expression(c, alpha5, hi) >= 1.0 {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if small_gain_expression(c, alpha5, mid) >= 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * hi.max(1.0) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

impl StabilityCertificate {
    pub fn from_parts(parts: &CertificateParts) -> Result<Self> {
        let ly = &parts.lyapunov;
        let (lmin, lmax) = sym_eig_min_max(&parts.metric);
        let c1 = composite_constant(parts.l_q.value, parts.l_t.value, parts.l_g.value, ly.alpha3, ly.alpha4, parts.l_z.value, parts.eta, lmin, lmax)?;
        let tau_bar = small_gain_threshold(c1, parts.l_v.value, ly.alpha5)?;
        Ok(StabilityCertificate {
            p: ly.p.clone(),
            alpha3: ly.alpha3,
            alpha4: ly.alpha4,
            alpha5: ly.alpha5,
            l_v: parts.l_v,
            l_z: parts.l_z,
            l_t: parts.l_t,
            l_g: parts.l_g,
            l_q: parts.l_q,
            eta: parts.eta,
            lambda_min_metric: lmin,
            lambda_max_metric: lmax,
            c1,
            tau_bar,
        })
    }

    /// Recomputes `c₁` from the stored constants.
    pub fn recompute_c1(&self) -> Result<f64> {
        composite_constant(
            self.l_q.value,
            self.l_t.value,
            self.l_g.value,
            self.alpha3,
            self.alpha4,
            self.l_z.value,
            self.eta,
            self.lambda_min_metric,
            self.lambda_max_metric,
        )
    }

    pub fn holds_at(&self, tau: f64) -> bool {
        small_gain_expression(self.c1 * self.l_v.value, self.alpha5, tau) < 1.0
    }
}

/// `L_V = |P ∂p/∂u| · r`: Lipschitz constant in `u` of `½|x − p(u,w)|²_P`
/// on the set `|x − p| ≤ r`.
pub fn lyapunov_input_gain(p: &Matrix, dp_du: &Matrix, radius: f64) -> f64 {
    crate::linalg::spectral_norm(&(p * dp_du)) * radius
}

/// Samples `k` with `W^{k+1} > W^k + slack` while `V^k < v_threshold`.
/// Samples without a Lyapunov value are not gated.
pub fn merit_monitor(trace: &ClosedLoopTrace, slack: f64, v_threshold: f64, from_sample: usize) -> Vec<usize> {
    trace
        .samples
        .windows(2)
        .filter(|p| p[0].k >= from_sample)
        .filter(|p| p[0].merit.is_finite() && p[1].merit.is_finite())
        .filter(|p| p[0].lyapunov.is_none_or(|v| v < v_threshold))
        .filter(|p| p[1].merit > p[0].merit + slack)
        .map(|p| p[0].k)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainEstimate {
    pub probes: usize,
    pub max_ratio: f64,
    /// Probe pair attaining the maximum.
    pub argmax: Option<(Vector, Vector)>,
}

/// Sup of `|f(a) − f(b)|/|a − b|` over seeded probe pairs drawn uniformly
/// from the ball of the given radius around `center`.
pub fn estimate_gain<F>(f: F, center: &Vector, radius: f64, probes: usize, seed: u64) -> GainEstimate
where
    F: Fn(&Vector) -> Vector,
{
    let n = center.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| {
        let dir = Vector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let r = radius * rng.gen::<f64>().powf(1.0 / n as f64);
        center + dir.normalize() * r
    };
    let mut est = GainEstimate { probes, max_ratio: 0.0, argmax: None };
    for _ in 0..probes {
        let a = draw(&mut rng);
        let b = draw(&mut rng);
        let den = (&a - &b).norm();
        if den == 0.0 {
            continue;
        }
        let ratio = (f(&a) - f(&b)).norm() / den;
        if ratio > est.max_ratio {
            est.max_ratio = ratio;
            est.argmax = Some((a, b));
        }
    }
    est
}
