//! Seeded random variates used by the samplers.
//!
//! Every chain owns one [`RngStream`]: a ChaCha8 generator keyed by a 64-bit
//! seed and placed on its own 64-bit stream, so chains sharing a seed draw
//! from disjoint keystreams.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamId {
    pub seed: u64,
    pub stream_id: u64,
}

#[derive(Debug, Clone)]
pub struct RngStream {
    id: StreamId,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            id: StreamId { seed, stream_id },
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.id.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.id.stream_id
    }

    pub fn id(&self) -> StreamId {
        self.id
    }

    /// Uniform draw on the open-closed interval (0, 1].
    pub fn uniform_pos(&mut self) -> f64 {
        1.0 - self.rng.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// `ln X` for `X ~ Gamma(shape, 1)`. Shapes below one use the
/// `Gamma(a) = Gamma(a + 1) · U^{1/a}` boost in log space so tiny shapes do
/// not underflow to zero.
fn log_gamma_variate(shape: f64, rng: &mut RngStream) -> f64 {
    if shape >= 1.0 {
        // Marsaglia–Tsang squeeze; shape validated by callers.
        let g: f64 = Gamma::new(shape, 1.0).expect("valid gamma shape").sample(rng);
        g.ln()
    } else {
        let g: f64 = Gamma::new(shape + 1.0, 1.0).expect("valid gamma shape").sample(rng);
        g.ln() + rng.uniform_pos().ln() / shape
    }
}

fn check_positive(values: &[f64], what: &str) -> Result<()> {
    if values.is_empty() {
        return Err(Error::InvalidParameter(format!("{what}: empty parameter vector")));
    }
    if let Some((k, a)) = values.iter().enumerate().find(|(_, a)| !(**a > 0.0 && a.is_finite())) {
        return Err(Error::InvalidParameter(format!(
            "{what}: entry {k} is {a}, must be positive and finite"
        )));
    }
    Ok(())
}

/// Draws a point on the simplex from `Dirichlet(alpha)` by normalising
/// independent gamma variates.
pub fn sample_dirichlet(alpha: &[f64], rng: &mut RngStream) -> Result<Vec<f64>> {
    let mut out = vec![0.0; alpha.len()];
    sample_dirichlet_into(alpha, rng, &mut out)?;
    Ok(out)
}

pub fn sample_dirichlet_into(alpha: &[f64], rng: &mut RngStream, out: &mut [f64]) -> Result<()> {
    check_positive(alpha, "dirichlet")?;
    debug_assert_eq!(alpha.len(), out.len());
    for (o, &a) in out.iter_mut().zip(alpha) {
        *o = log_gamma_variate(a, rng);
    }
    normalize_log_in_place(out);
    Ok(())
}

/// Exponentiates and normalises log-weights in place, subtracting the max first.
fn normalize_log_in_place(values: &mut [f64]) {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in values.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in values.iter_mut() {
        *v /= total;
    }
}

/// Index `k` with probability `weights[k] / Σ weights`.
pub fn sample_categorical(weights: &[f64], rng: &mut RngStream) -> Result<usize> {
    if weights.is_empty() {
        return Err(Error::InvalidParameter("categorical: empty weights".into()));
    }
    let mut total = 0.0;
    for (k, &w) in weights.iter().enumerate() {
        if !(w >= 0.0 && w.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "categorical: weight {k} is {w}"
            )));
        }
        total += w;
    }
    if total <= 0.0 {
        return Err(Error::InvalidParameter("categorical: all weights are zero".into()));
    }
    Ok(pick(weights, total, rng))
}

fn pick(weights: &[f64], total: f64, rng: &mut RngStream) -> usize {
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (k, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last_positive = k;
            if u < acc {
                return k;
            }
        }
    }
    last_positive
}

/// Categorical draw from unnormalised log-weights. Returns `None` when no
/// entry is finite, i.e. every weight is zero.
pub(crate) fn sample_categorical_log(
    log_weights: &[f64],
    scratch: &mut Vec<f64>,
    rng: &mut RngStream,
) -> Option<usize> {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    scratch.clear();
    let mut total = 0.0;
    for &lw in log_weights {
        let w = (lw - max).exp();
        total += w;
        scratch.push(w);
    }
    Some(pick(scratch, total, rng))
}

/// `InverseGamma(shape, scale)`: the reciprocal of a `Gamma(shape, rate = scale)` draw.
pub fn sample_inverse_gamma(shape: f64, scale: f64, rng: &mut RngStream) -> Result<f64> {
    if !(shape > 0.0 && shape.is_finite() && scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "inverse gamma: shape {shape}, scale {scale} must be positive"
        )));
    }
    let g: f64 = Gamma::new(shape, 1.0)
        .map_err(|e| Error::InvalidParameter(e.to_string()))?
        .sample(rng);
    Ok(scale / g)
}

pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    let mut out = logits.to_vec();
    softmax_in_place(&mut out)?;
    Ok(out)
}

pub fn softmax_in_place(values: &mut [f64]) -> Result<()> {
    if let Some(k) = values.iter().position(|v| v.is_nan()) {
        return Err(Error::InvalidParameter(format!("softmax: logit {k} is NaN")));
    }
    normalize_log_in_place(values);
    Ok(())
}

/// `ln Σ exp(x)` with max subtraction.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
