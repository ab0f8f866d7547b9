// SPDX-License-Identifier: Apache-2.0

use super::{Gradients, ModelParameters};

pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Largest relative error between the analytic gradient returned by `loss`
/// and central finite differences, over every parameter coordinate.
///
/// Relative error is `|a − n| / max(|a|, |n|, GRAD_CHECK_FLOOR)`. The floor
/// sits above the rounding noise of a central difference in f64 (about
/// `1e-16 / step`), so coordinates whose true gradient is zero do not register
/// as failures. Coordinates missing from the analytic gradients count as zero.
pub fn grad_check<F>(loss: F, params: &ModelParameters, step: f64) -> f64
where
    F: Fn(&ModelParameters) -> (f64, Gradients),
{
    let (_, analytic) = loss(params);
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    let names: Vec<String> = params.names().map(String::from).collect();
    for name in names {
        for i in 0..params.get(&name).expect("listed name").len() {
            let original = params.get(&name).expect("listed name").data()[i];
            probe.get_mut(&name).expect("cloned").data_mut()[i] = original + step;
            let up = loss(&probe).0;
            probe.get_mut(&name).expect("cloned").data_mut()[i] = original - step;
            let down = loss(&probe).0;
            probe.get_mut(&name).expect("cloned").data_mut()[i] = original;

            let numeric = (up - down) / (2.0 * step);
            let a = analytic.get(&name).map_or(0.0, |g| g.data()[i]);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
            worst = worst.max(rel);
        }
    }
    worst
}
