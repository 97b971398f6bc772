//! Deterministic gradient reduction across simulated workers.

use crate::error::Result;
use crate::gradient::Gradient;

/// Sum sub-gradients in their list order (worker slot order), which makes
/// the result independent of the physical completion order of workers.
/// Keys missing from a slot are treated as zero; a shape mismatch under a
/// shared key is rejected.
pub fn reduce_deterministic(sub_gradients: &[Gradient]) -> Result<Gradient> {
    let mut out = Gradient::new();
    for grad in sub_gradients {
        out.add_assign(grad)?;
    }
    Ok(out)
}

/// Mean over `sub_gradients.len()` slots, missing keys counting as zero.
pub fn reduce_mean(sub_gradients: &[Gradient]) -> Result<Gradient> {
    let mut out = reduce_deterministic(sub_gradients)?;
    if !sub_gradients.is_empty() {
        out.scale(1.0 / sub_gradients.len() as f64);
    }
    Ok(out)
}
