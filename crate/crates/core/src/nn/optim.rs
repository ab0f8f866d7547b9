// SPDX-License-Identifier: Apache-2.0

use super::{Gradients, ModelParameters, NnError};

/// `p ← p − lr·g` for every gradient entry. Parameters without a gradient are
/// left untouched.
pub fn sgd_step(params: &mut ModelParameters, grads: &Gradients, lr: f64) -> Result<(), NnError> {
    for (name, g) in grads.iter() {
        let p = params.get_mut(name)?;
        if p.shape() != g.shape() {
            return Err(NnError::ShapeMismatch(format!(
                "sgd `{name}`: param {:?} vs grad {:?}",
                p.shape(),
                g.shape()
            )));
        }
        if lr == 0.0 {
            continue;
        }
        for (pi, gi) in p.data_mut().iter_mut().zip(g.data()) {
            *pi -= lr * gi;
        }
    }
    Ok(())
}
