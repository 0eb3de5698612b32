/// KL divergence between Bernoulli(p) and Bernoulli(q), in nats, after
/// clamping both parameters to `[eps, 1 - eps]`.
pub fn kl_bernoulli(p: f64, q: f64, eps: f64) -> f64 {
    let p = p.clamp(eps, 1.0 - eps);
    let q = q.clamp(eps, 1.0 - eps);
    p * (p / q).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln()
}

/// Partial derivatives `(d/dp, d/dq)` of [`kl_bernoulli`]. Zero along an
/// argument that is clamped.
pub fn kl_bernoulli_grad(p: f64, q: f64, eps: f64) -> (f64, f64) {
    let pc = p.clamp(eps, 1.0 - eps);
    let qc = q.clamp(eps, 1.0 - eps);
    let dp = (pc / qc).ln() - ((1.0 - pc) / (1.0 - qc)).ln();
    let dq = -pc / qc + (1.0 - pc) / (1.0 - qc);
    (
        if pc == p { dp } else { 0.0 },
        if qc == q { dq } else { 0.0 },
    )
}
