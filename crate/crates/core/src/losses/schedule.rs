/// Adversarial warm-up coefficient `2 / (1 + exp(−δ·p)) − 1` for training
/// progress `p ∈ [0, 1]`.
pub fn lambda_d_schedule(progress: f64, delta: f64) -> f64 {
    2.0 / (1.0 + (-delta * progress).exp()) - 1.0
}
