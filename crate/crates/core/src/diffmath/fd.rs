use crate::diffmath::tensor::Tensor;
use crate::error::{Result, WadgError};

/// Central-difference gradient of a scalar function, one coordinate at a time.
pub fn finite_difference_gradient<F>(mut f: F, x: &Tensor, h: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(WadgError::Config(format!("step must be positive, got {h}")));
    }
    let mut probe = x.clone();
    let mut out = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = f(&probe).map_err(|e| WadgError::Coordinate {
            index: i,
            source: Box::new(e),
        })?;
        probe.data_mut()[i] = orig - h;
        let minus = f(&probe).map_err(|e| WadgError::Coordinate {
            index: i,
            source: Box::new(e),
        })?;
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (plus - minus) / (2.0 * h);
    }
    Ok(out)
}

/// Largest entrywise relative error `|a − b| / max(|a|, |b|, floor)`.
pub fn max_relative_error(analytic: &Tensor, numeric: &Tensor, floor: f64) -> f64 {
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}
