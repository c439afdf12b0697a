use rand::Rng;

use crate::diffmath::{Tape, Tensor, Var};
use crate::error::{Result, WadgError};
use crate::model::{domain_pairs, Mlp, MlpVars, ModelBundle};

/// Added under the square root of the critic gradient norm.
pub const GP_EPS: f64 = 1e-20;

/// Empirical Kantorovich–Rubinstein estimate `mean(scores_i) − mean(scores_j)`.
pub fn pairwise_w1_estimate(scores_i: &[f64], scores_j: &[f64]) -> Result<f64> {
    if scores_i.is_empty() || scores_j.is_empty() {
        return Err(WadgError::Invalid(
            "Wasserstein estimate needs two nonempty batches".into(),
        ));
    }
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    Ok(mean(scores_i) - mean(scores_j))
}

fn check_groups(n: usize) -> Result<()> {
    if n < 2 {
        return Err(WadgError::Invalid(format!(
            "adversarial loss needs at least 2 domains, got {n}"
        )));
    }
    Ok(())
}

/// Sum of pairwise estimates over all unordered domain pairs, each scored by
/// its own critic (or the shared critic).
pub fn adversarial_loss(bundle: &ModelBundle, features: &[Tensor]) -> Result<f64> {
    check_groups(features.len())?;
    let mut total = 0.0;
    for (k, (i, j)) in domain_pairs(features.len()).into_iter().enumerate() {
        let critic = bundle.critic(Some(k))?;
        let si = critic.apply(&features[i])?;
        let sj = critic.apply(&features[j])?;
        total += pairwise_w1_estimate(si.data(), sj.data())?;
    }
    Ok(total)
}

/// Traced adversarial loss over per-domain feature nodes. `critic_vars` is
/// indexed like `bundle.critics`.
pub fn trace_adversarial(
    tape: &mut Tape,
    bundle: &ModelBundle,
    critic_vars: &[MlpVars],
    groups: &[Var],
) -> Result<Var> {
    check_groups(groups.len())?;
    let mut total: Option<Var> = None;
    for (k, (i, j)) in domain_pairs(groups.len()).into_iter().enumerate() {
        let c = bundle.critic_index(Some(k))?;
        let critic = &bundle.critics[c];
        for g in [groups[i], groups[j]] {
            if tape.value(g).rows() == 0 {
                return Err(WadgError::Invalid("empty domain batch".into()));
            }
        }
        let si = critic.forward(tape, &critic_vars[c], groups[i])?.output;
        let sj = critic.forward(tape, &critic_vars[c], groups[j])?.output;
        let mi = tape.mean(si)?;
        let mj = tape.mean(sj)?;
        let d = tape.sub(mi, mj)?;
        total = Some(match total {
            Some(t) => tape.add(t, d)?,
            None => d,
        });
    }
    Ok(total.expect("at least one pair"))
}

/// Interpolates `t·a + (1−t)·b` row by row, `t ~ U[0, 1]`, over the first
/// `min(rows)` rows.
fn interpolate<R: Rng>(a: &Tensor, b: &Tensor, rng: &mut R) -> Result<Tensor> {
    if a.cols() != b.cols() {
        return Err(WadgError::ShapeMismatch {
            op: "gradient_penalty",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let n = a.rows().min(b.rows());
    let c = a.cols();
    let mut data = Vec::with_capacity(n * c);
    for r in 0..n {
        let t: f64 = rng.gen();
        data.extend(
            a.row(r)
                .iter()
                .zip(b.row(r))
                .map(|(x, y)| t * x + (1.0 - t) * y),
        );
    }
    Tensor::matrix(n, c, data)
}

/// Traced `mean((‖∇D(x̂)‖₂ − 1)²)` over random interpolates of two batches.
pub fn trace_gradient_penalty<R: Rng>(
    tape: &mut Tape,
    critic: &Mlp,
    vars: &MlpVars,
    features_i: &Tensor,
    features_j: &Tensor,
    rng: &mut R,
) -> Result<Var> {
    let xhat = interpolate(features_i, features_j, rng)?;
    if xhat.rows() == 0 {
        return Err(WadgError::Invalid(
            "gradient penalty of empty batches".into(),
        ));
    }
    let g = critic.input_gradient(tape, vars, &xhat)?;
    let sq = tape.mul(g, g)?;
    let ss = tape.sum_rows(sq)?;
    let ss = tape.add_scalar(ss, GP_EPS)?;
    let norm = tape.sqrt(ss)?;
    let dev = tape.add_scalar(norm, -1.0)?;
    let dev2 = tape.mul(dev, dev)?;
    tape.mean(dev2)
}

/// Gradient penalty of the critic for `pair_id` on two feature batches.
pub fn gradient_penalty<R: Rng>(
    bundle: &ModelBundle,
    features_i: &Tensor,
    features_j: &Tensor,
    pair_id: Option<usize>,
    rng: &mut R,
) -> Result<f64> {
    let critic = bundle.critic(pair_id)?;
    let mut tape = Tape::untraced();
    let vars = critic.register(&mut tape);
    let gp = trace_gradient_penalty(&mut tape, critic, &vars, features_i, features_j, rng)?;
    Ok(tape.value(gp).data()[0])
}
