use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::DepthMap;

/// Global depth correction `gamma * d + beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineDepthParams {
    pub gamma: f64,
    pub beta: f64,
}

impl AffineDepthParams {
    pub const IDENTITY: AffineDepthParams = AffineDepthParams { gamma: 1.0, beta: 0.0 };
}

/// Sum of squared residuals of `gamma * est + beta - cond` over the joint mask.
pub fn affine_residual(est: &DepthMap, cond: &DepthMap, p: AffineDepthParams) -> f64 {
    joint(est, cond)
        .map(|(e, c)| {
            let r = p.gamma * e + p.beta - c;
            r * r
        })
        .sum()
}

fn joint<'a>(est: &'a DepthMap, cond: &'a DepthMap) -> impl Iterator<Item = (f64, f64)> + 'a {
    (0..est.len().min(cond.len())).filter_map(|i| Some((est.get_index(i)?, cond.get_index(i)?)))
}

/// Closed-form least squares fit of `cond ≈ gamma * est + beta` over pixels
/// valid in both maps.
///
/// Fails with `InsufficientOverlap` below two joint pixels and with
/// `DegenerateFit` when `est` is (numerically) constant or the slope is not
/// positive; see [`fit_scale_shift_or_fallback`] for the caller-side rule.
pub fn fit_scale_shift(est: &DepthMap, cond: &DepthMap) -> Result<AffineDepthParams> {
    est.ensure_same_dims(cond)?;
    // Two passes: means first, then centered moments, to keep cancellation small.
    let (mut n, mut se, mut sc) = (0usize, 0.0, 0.0);
    for (e, c) in joint(est, cond) {
        n += 1;
        se += e;
        sc += c;
    }
    if n < 2 {
        return Err(Error::InsufficientOverlap(n));
    }
    let me = se / n as f64;
    let mc = sc / n as f64;
    let (mut cov, mut var) = (0.0, 0.0);
    for (e, c) in joint(est, cond) {
        cov += (e - me) * (c - mc);
        var += (e - me) * (e - me);
    }
    cov /= n as f64;
    var /= n as f64;
    if var < 1e-12 {
        return Err(Error::DegenerateFit(format!("estimate variance {var:.3e} over {n} pixels")));
    }
    let gamma = cov / var;
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::DegenerateFit(format!("non-positive scale {gamma:.6}")));
    }
    Ok(AffineDepthParams { gamma, beta: mc - gamma * me })
}

/// [`fit_scale_shift`], falling back to a pure shift `mean(cond) - mean(est)`
/// on a degenerate fit. Insufficient overlap is still an error.
pub fn fit_scale_shift_or_fallback(est: &DepthMap, cond: &DepthMap) -> Result<(AffineDepthParams, bool)> {
    match fit_scale_shift(est, cond) {
        Ok(p) => Ok((p, false)),
        Err(Error::DegenerateFit(_)) => {
            let (mut n, mut diff) = (0usize, 0.0);
            for (e, c) in joint(est, cond) {
                n += 1;
                diff += c - e;
            }
            Ok((AffineDepthParams { gamma: 1.0, beta: diff / n as f64 }, true))
        }
        Err(e) => Err(e),
    }
}

/// Applies `gamma * d + beta` to valid pixels; results `<= 0` become invalid.
pub fn apply_affine(depth: &DepthMap, p: AffineDepthParams) -> DepthMap {
    let mut out = DepthMap::invalid(depth.width(), depth.height());
    for i in 0..depth.len() {
        if let Some(d) = depth.get_index(i) {
            let v = p.gamma * d + p.beta;
            if v > 0.0 {
                out.set_index(i, v);
            }
        }
    }
    out
}
