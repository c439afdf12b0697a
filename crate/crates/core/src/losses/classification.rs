use crate::diffmath::{Tape, Tensor, Var};
use crate::error::{Result, WadgError};

/// Mean cross-entropy of `logits [B×K]` against integer `labels`.
pub fn classification_loss(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let mut tape = Tape::untraced();
    let l = tape.leaf(logits.clone());
    let loss = trace_classification_loss(&mut tape, l, labels)?;
    Ok(tape.value(loss).data()[0])
}

/// Traced mean of `logsumexp(row) − row[label]`.
pub fn trace_classification_loss(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let t = tape.value(logits);
    let (b, k) = match t.shape() {
        [b, k] => (*b, *k),
        other => {
            return Err(WadgError::ShapeMismatch {
                op: "classification_loss",
                left: other.to_vec(),
                right: vec![labels.len()],
            })
        }
    };
    if b == 0 {
        return Err(WadgError::Invalid(
            "classification loss of an empty batch".into(),
        ));
    }
    if labels.len() != b {
        return Err(WadgError::ShapeMismatch {
            op: "classification_loss",
            left: t.shape().to_vec(),
            right: vec![labels.len()],
        });
    }
    if let Some(bad) = labels.iter().find(|&&y| y >= k) {
        return Err(WadgError::Invalid(format!(
            "label {bad} out of range for {k} classes"
        )));
    }
    let lse = tape.log_sum_exp_rows(logits)?;
    let picked = tape.gather(logits, labels)?;
    let nll = tape.sub(lse, picked)?;
    tape.mean(nll)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn saturated_correct_prediction_has_zero_loss() {
        let logits = Tensor::matrix(2, 3, vec![1e6, 0., 0., 0., 0., 1e6]).unwrap();
        assert!(classification_loss(&logits, &[0, 2]).unwrap() < 1e-12);
    }

    #[test]
    fn uniform_logits_give_ln_k() {
        let two = classification_loss(&Tensor::zeros(&[4, 2]), &[0, 1, 1, 0]).unwrap();
        assert!((two - 2f64.ln()).abs() < 1e-12);
        let five = classification_loss(&Tensor::zeros(&[3, 5]), &[0, 4, 2]).unwrap();
        assert!((five - 1.609438).abs() < 1e-6);
    }

    #[test]
    fn label_out_of_range_is_rejected() {
        assert!(classification_loss(&Tensor::zeros(&[1, 2]), &[2]).is_err());
        assert!(classification_loss(&Tensor::zeros(&[0, 2]), &[]).is_err());
    }
}
