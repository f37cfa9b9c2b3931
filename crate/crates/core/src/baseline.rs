//! Triangle-weighted static exposure merge, used as a classical reference
//! point. Each linearized frame is weighted per pixel by a hat function of
//! its LDR value (well-exposed pixels count most, clipped ones vanish) and
//! the frames are averaged without any alignment, so moving content
//! produces the textbook ghosting this crate's network is meant to avoid.

use crate::error::Result;
use crate::hdr::{gamma_to_linear, BracketSample, REFERENCE_FRAME};
use crate::tensor::Tensor;

/// Hat weight peaked at mid-grey: `1 - |2L - 1|`.
fn hat(l: f64) -> f64 {
    1.0 - (2.0 * l - 1.0).abs()
}

/// Merges the bracket in linear radiance units. Pixels where every frame
/// is clipped fall back to the reference frame's linearized value.
pub fn triangle_merge(sample: &BracketSample, gamma: f64) -> Result<Tensor> {
    sample.validate()?;
    let lin: Vec<Tensor> = sample
        .ldr
        .iter()
        .zip(&sample.exposure_times)
        .map(|(l, &t)| gamma_to_linear(l, t, gamma))
        .collect::<Result<_>>()?;

    let shape = sample.ldr[0].shape();
    let mut out = vec![0.0; shape.numel()];
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        let mut wsum = 0.0;
        for f in 0..3 {
            let w = hat(sample.ldr[f].data()[i]);
            acc += w * lin[f].data()[i];
            wsum += w;
        }
        *o = if wsum > 1e-6 {
            acc / wsum
        } else {
            lin[REFERENCE_FRAME].data()[i]
        };
    }
    Tensor::new(shape, out)
}
