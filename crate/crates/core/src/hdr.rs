//! Radiometric preprocessing, tone mapping and the training losses.
//!
//! All image-domain quantities live in `[0, 1]` LDR space or linear
//! radiance. LDR frames are linearized with a fixed gamma and divided by
//! exposure time; losses compare mu-law tone-mapped images.

use crate::error::{Error, Result};
use crate::tensor::{Graph, NodeId, Tensor};

/// Index of the reference (medium-exposure) frame in a bracket.
pub const REFERENCE_FRAME: usize = 1;

/// Three differently exposed LDR frames of one scene plus the optional
/// ground-truth radiance, all aligned to the medium-exposure frame.
#[derive(Clone, Debug)]
pub struct BracketSample {
    /// LDR frames in `[0, 1]`, shape `(1, C, H, W)`, ordered short to long.
    pub ldr: [Tensor; 3],
    /// Exposure times, strictly increasing (`t = 2^bias`).
    pub exposure_times: [f64; 3],
    /// Linear-domain ground truth aligned with the reference frame.
    pub gt_hdr: Option<Tensor>,
}

impl BracketSample {
    pub fn validate(&self) -> Result<()> {
        let shape = self.ldr[0].shape();
        for (i, t) in self.ldr.iter().enumerate() {
            if t.shape() != shape {
                return Err(Error::Shape(format!(
                    "LDR frame {i} has shape {} but frame 0 has {shape}",
                    t.shape()
                )));
            }
            if t.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::Config(format!("LDR frame {i} leaves [0, 1]")));
            }
        }
        let t = &self.exposure_times;
        if !(t[0] > 0.0 && t[0] < t[1] && t[1] < t[2]) {
            return Err(Error::Config(format!(
                "exposure times must be positive and strictly increasing, got {t:?}"
            )));
        }
        if let Some(gt) = &self.gt_hdr {
            if gt.shape() != shape {
                return Err(Error::Shape(format!(
                    "ground truth shape {} does not match LDR shape {shape}",
                    gt.shape()
                )));
            }
            if gt.data().iter().any(|&v| v < 0.0) {
                return Err(Error::Config("ground truth has negative radiance".into()));
            }
        }
        Ok(())
    }
}

/// `t_i = 2^bias_i` with the middle frame conventionally at bias 0.
pub fn exposure_times_from_biases(biases: [f64; 3]) -> [f64; 3] {
    [
        2f64.powf(biases[0]),
        2f64.powf(biases[1]),
        2f64.powf(biases[2]),
    ]
}

/// Linearizes an LDR frame: `H = L^gamma / t`.
pub fn gamma_to_linear(ldr: &Tensor, t: f64, gamma: f64) -> Result<Tensor> {
    if t <= 0.0 {
        return Err(Error::Config(format!("exposure time must be positive, got {t}")));
    }
    if gamma <= 0.0 {
        return Err(Error::Config(format!("gamma must be positive, got {gamma}")));
    }
    Ok(ldr.map(|v| v.powf(gamma) / t))
}

/// Assembles the per-frame network inputs: each frame becomes the channel
/// concatenation of its LDR values and their linearized counterpart, so a
/// 3-channel bracket yields three 6-channel tensors.
pub fn build_input(sample: &BracketSample, gamma: f64) -> Result<[Tensor; 3]> {
    sample.validate()?;
    let mut out = Vec::with_capacity(3);
    for (ldr, &t) in sample.ldr.iter().zip(&sample.exposure_times) {
        let lin = gamma_to_linear(ldr, t, gamma)?;
        let s = ldr.shape();
        let mut data = Vec::with_capacity(2 * s.numel());
        let hw = s.height * s.width;
        for b in 0..s.batch {
            data.extend_from_slice(&ldr.data()[b * s.channels * hw..(b + 1) * s.channels * hw]);
            data.extend_from_slice(&lin.data()[b * s.channels * hw..(b + 1) * s.channels * hw]);
        }
        out.push(Tensor::new(
            crate::tensor::Shape::new(s.batch, 2 * s.channels, s.height, s.width),
            data,
        )?);
    }
    Ok([out[0].clone(), out[1].clone(), out[2].clone()])
}

/// Mu-law tone mapping `T(h) = log(1 + mu*h) / log(1 + mu)` on plain
/// tensors; negative inputs are clamped to zero first.
pub fn mu_law(h: &Tensor, mu: f64) -> Result<Tensor> {
    if mu <= 0.0 {
        return Err(Error::Config(format!("mu must be positive, got {mu}")));
    }
    let denom = (1.0 + mu).ln();
    Ok(h.map(|v| (1.0 + mu * v.max(0.0)).ln() / denom))
}

/// Graph-tracked clamp-then-tonemap used inside the losses. The clamp
/// passes gradient through wherever the value is strictly positive.
pub fn tonemap_node(g: &mut Graph, x: NodeId, mu: f64) -> Result<NodeId> {
    let clamped = g.clamp_min(x, 0.0)?;
    g.mu_law(clamped, mu)
}

/// Mean absolute difference of the tone-mapped images.
pub fn reconstruction_loss(g: &mut Graph, pred: NodeId, gt: NodeId, mu: f64) -> Result<NodeId> {
    if g.shape(pred) != g.shape(gt) {
        return Err(Error::Shape(format!(
            "reconstruction loss: {} vs {}",
            g.shape(pred),
            g.shape(gt)
        )));
    }
    let tp = tonemap_node(g, pred, mu)?;
    let tg = tonemap_node(g, gt, mu)?;
    let diff = g.sub(tp, tg)?;
    let abs = g.abs(diff)?;
    g.mean(abs)
}

/// Mean absolute difference of horizontal plus vertical Sobel responses of
/// the tone-mapped images.
pub fn sobel_loss(g: &mut Graph, pred: NodeId, gt: NodeId, mu: f64) -> Result<NodeId> {
    if g.shape(pred) != g.shape(gt) {
        return Err(Error::Shape(format!(
            "sobel loss: {} vs {}",
            g.shape(pred),
            g.shape(gt)
        )));
    }
    let tp = tonemap_node(g, pred, mu)?;
    let tg = tonemap_node(g, gt, mu)?;

    let px = g.sobel_x(tp)?;
    let gx = g.sobel_x(tg)?;
    let dx = g.sub(px, gx)?;
    let dx = g.abs(dx)?;
    let lx = g.mean(dx)?;

    let py = g.sobel_y(tp)?;
    let gy = g.sobel_y(tg)?;
    let dy = g.sub(py, gy)?;
    let dy = g.abs(dy)?;
    let ly = g.mean(dy)?;

    g.add(lx, ly)
}

/// `L_R + lambda * L_sobel`; the Sobel term is skipped entirely at
/// `lambda == 0` so that case is bit-exact with the reconstruction loss.
pub fn total_loss(
    g: &mut Graph,
    pred: NodeId,
    gt: NodeId,
    lambda: f64,
    mu: f64,
) -> Result<NodeId> {
    if lambda < 0.0 {
        return Err(Error::Config(format!("lambda must be non-negative, got {lambda}")));
    }
    let recon = reconstruction_loss(g, pred, gt, mu)?;
    if lambda == 0.0 {
        return Ok(recon);
    }
    let sobel = sobel_loss(g, pred, gt, mu)?;
    let weighted = g.scale(sobel, lambda)?;
    g.add(recon, weighted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::testutil::rng_tensor_in;
    use crate::tensor::Shape;

    fn sample(c: usize, h: usize, w: usize) -> BracketSample {
        let shape = Shape::new(1, c, h, w);
        BracketSample {
            ldr: [
                rng_tensor_in(shape, 1, 0.0, 1.0),
                rng_tensor_in(shape, 2, 0.0, 1.0),
                rng_tensor_in(shape, 3, 0.0, 1.0),
            ],
            exposure_times: exposure_times_from_biases([-2.0, 0.0, 2.0]),
            gt_hdr: Some(rng_tensor_in(shape, 4, 0.0, 2.0)),
        }
    }

    fn loss_value(f: impl FnOnce(&mut Graph, NodeId, NodeId) -> Result<NodeId>, pred: &Tensor, gt: &Tensor) -> f64 {
        let mut g = Graph::new();
        let p = g.leaf(pred.clone(), false).unwrap();
        let t = g.leaf(gt.clone(), false).unwrap();
        let l = f(&mut g, p, t).unwrap();
        g.value(l).item()
    }

    #[test]
    fn gamma_endpoints() {
        let one = Tensor::scalar(1.0);
        assert_eq!(gamma_to_linear(&one, 1.0, 2.2).unwrap().item(), 1.0);
        let zero = Tensor::scalar(0.0);
        assert_eq!(gamma_to_linear(&zero, 3.7, 2.2).unwrap().item(), 0.0);
        assert!(matches!(
            gamma_to_linear(&one, 0.0, 2.2),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn gamma_matches_scalar_oracle() {
        let l = Tensor::scalar(0.5);
        let got = gamma_to_linear(&l, 4.0, 2.2).unwrap().item();
        let want = 0.5f64.powf(2.2) / 4.0;
        assert!((got - want).abs() < 1e-12);
        // Monotone in L.
        let lo = gamma_to_linear(&Tensor::scalar(0.3), 4.0, 2.2).unwrap().item();
        assert!(lo < got);
    }

    #[test]
    fn gamma_commutes_with_cropping() {
        let x = rng_tensor_in(Shape::new(1, 3, 8, 8), 11, 0.0, 1.0);
        let lin = gamma_to_linear(&x, 0.25, 2.2).unwrap();
        let crop = |t: &Tensor| {
            Tensor::from_fn(Shape::new(1, 3, 4, 4), |b, c, y, xx| t.at(b, c, y + 2, xx + 2))
        };
        let a = crop(&lin);
        let b = gamma_to_linear(&crop(&x), 0.25, 2.2).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn build_input_assembles_pairs() {
        let s = sample(3, 8, 8);
        let inputs = build_input(&s, 2.2).unwrap();
        for (i, inp) in inputs.iter().enumerate() {
            assert_eq!(inp.shape(), Shape::new(1, 6, 8, 8));
            // First three channels are the LDR frame itself.
            for c in 0..3 {
                for y in 0..8 {
                    for x in 0..8 {
                        assert_eq!(inp.at(0, c, y, x), s.ldr[i].at(0, c, y, x));
                    }
                }
            }
        }
        // Channels 4-6 of the reference input linearize the reference frame.
        let lin = gamma_to_linear(&s.ldr[1], s.exposure_times[1], 2.2).unwrap();
        for c in 0..3 {
            for y in 0..8 {
                for x in 0..8 {
                    assert_eq!(inputs[1].at(0, c + 3, y, x), lin.at(0, c, y, x));
                }
            }
        }

        let mono = sample(1, 4, 4);
        let inputs = build_input(&mono, 2.2).unwrap();
        assert_eq!(inputs[0].shape(), Shape::new(1, 2, 4, 4));
    }

    #[test]
    fn mu_law_endpoints_exact() {
        let mu = 5000.0;
        assert_eq!(mu_law(&Tensor::scalar(0.0), mu).unwrap().item(), 0.0);
        assert_eq!(mu_law(&Tensor::scalar(1.0), mu).unwrap().item(), 1.0);
        assert!(matches!(mu_law(&Tensor::scalar(0.5), 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn mu_law_matches_log_oracle_and_is_monotone() {
        let mu = 5000.0;
        let at = |h: f64| mu_law(&Tensor::scalar(h), mu).unwrap().item();
        let want = (1.0 + mu * 0.1).ln() / (1.0 + mu).ln();
        assert!((at(0.1) - want).abs() < 1e-12);
        assert!(at(0.05) < at(0.1) && at(0.1) < at(0.2));

        // Strictly increasing on a grid spanning [0, 1].
        let mut prev = at(0.0);
        for i in 1..=100 {
            let v = at(i as f64 / 100.0);
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn mu_law_derivative_matches_finite_differences() {
        let mu: f64 = 5000.0;
        let denom = (1.0 + mu).ln();
        for &h in &[0.01, 0.1, 0.5, 0.9] {
            let analytic = mu / ((1.0 + mu * h) * denom);
            let step = 1e-6;
            let f = |x: f64| (1.0 + mu * x).ln() / denom;
            let numeric = (f(h + step) - f(h - step)) / (2.0 * step);
            assert!(((analytic - numeric) / numeric).abs() < 1e-6);
        }
    }

    #[test]
    fn reconstruction_loss_zero_on_identical_inputs() {
        let x = rng_tensor_in(Shape::new(1, 3, 6, 6), 20, 0.0, 2.0);
        let v = loss_value(|g, p, t| reconstruction_loss(g, p, t, 5000.0), &x, &x);
        assert_eq!(v, 0.0);
    }

    #[test]
    fn reconstruction_loss_first_order_in_small_perturbations() {
        let mu = 5000.0;
        let gt = rng_tensor_in(Shape::new(1, 1, 8, 8), 21, 0.1, 1.0);
        let eps = 1e-4;
        let pred = gt.map(|v| v + eps);
        let got = loss_value(|g, p, t| reconstruction_loss(g, p, t, mu), &pred, &gt);
        let denom = (1.0 + mu).ln();
        let expect: f64 = gt
            .data()
            .iter()
            .map(|&h| eps * mu / ((1.0 + mu * h) * denom))
            .sum::<f64>()
            / gt.numel() as f64;
        assert!((got - expect).abs() / expect < 0.05, "{got} vs {expect}");
    }

    #[test]
    fn reconstruction_loss_matches_scalar_loop_oracle() {
        let mu = 5000.0;
        let a = rng_tensor_in(Shape::new(1, 3, 5, 7), 22, 0.0, 1.5);
        let b = rng_tensor_in(Shape::new(1, 3, 5, 7), 23, 0.0, 1.5);
        let got = loss_value(|g, p, t| reconstruction_loss(g, p, t, mu), &a, &b);
        let denom = (1.0 + mu).ln();
        let tm = |v: f64| (1.0 + mu * v.max(0.0)).ln() / denom;
        let want: f64 = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| (tm(x) - tm(y)).abs())
            .sum::<f64>()
            / a.numel() as f64;
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn sobel_loss_vanishes_on_identical_and_constant_inputs() {
        let x = rng_tensor_in(Shape::new(1, 2, 6, 6), 24, 0.0, 1.0);
        assert_eq!(loss_value(|g, p, t| sobel_loss(g, p, t, 5000.0), &x, &x), 0.0);

        // Two different constants: every Sobel response vanishes because the
        // kernel rows/columns sum to zero over the replicated neighbourhood.
        let a = Tensor::full(Shape::new(1, 1, 6, 6), 0.3);
        let b = Tensor::full(Shape::new(1, 1, 6, 6), 0.8);
        assert_eq!(loss_value(|g, p, t| sobel_loss(g, p, t, 5000.0), &a, &b), 0.0);
    }

    #[test]
    fn sobel_loss_of_step_edge_matches_direct_correlation_oracle() {
        let mu = 5000.0;
        let shape = Shape::new(1, 1, 6, 6);
        // Vertical step edge at mid-width versus a flat image.
        let edge = Tensor::from_fn(shape, |_, _, _, x| if x < 3 { 0.1 } else { 0.9 });
        let flat = Tensor::full(shape, 0.1);
        let got = loss_value(|g, p, t| sobel_loss(g, p, t, mu), &edge, &flat);

        let denom = (1.0 + mu).ln();
        let tm = |v: f64| (1.0 + mu * v).ln() / denom;
        let te = edge.map(tm);
        let tf = flat.map(tm);
        let correlate = |img: &Tensor, k: &[f64; 9]| {
            Tensor::from_fn(shape, |b, c, y, x| {
                let mut acc = 0.0;
                for ky in 0..3 {
                    for kx in 0..3 {
                        let iy = (y as isize + ky - 1).clamp(0, 5) as usize;
                        let ix = (x as isize + kx - 1).clamp(0, 5) as usize;
                        acc += k[(ky * 3 + kx) as usize] * img.at(b, c, iy, ix);
                    }
                }
                acc
            })
        };
        use crate::tensor::{SOBEL_X, SOBEL_Y};
        let mut want = 0.0;
        for k in [&SOBEL_X, &SOBEL_Y] {
            let re = correlate(&te, k);
            let rf = correlate(&tf, k);
            want += re
                .data()
                .iter()
                .zip(rf.data())
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
                / re.numel() as f64;
        }
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn sobel_loss_invariant_to_common_constant_shift() {
        // Invariance lives in the tone-mapped domain where the Sobel
        // difference acts: shift both tone-mapped images by the same
        // constant (pulled back through the mu-law inverse) and the loss
        // must not move.
        let mu = 5000.0;
        let a = rng_tensor_in(Shape::new(1, 1, 8, 8), 25, 0.0, 0.5);
        let b = rng_tensor_in(Shape::new(1, 1, 8, 8), 26, 0.0, 0.5);
        let base = loss_value(|g, p, t| sobel_loss(g, p, t, mu), &a, &b);

        let shift = 0.05;
        let tm = |v: f64| (1.0 + mu * v).ln() / (1.0 + mu).ln();
        let tm_inv = |u: f64| ((1.0 + mu).powf(u) - 1.0) / mu;
        let a2 = a.map(|v| tm_inv(tm(v) + shift));
        let b2 = b.map(|v| tm_inv(tm(v) + shift));
        let shifted = loss_value(|g, p, t| sobel_loss(g, p, t, mu), &a2, &b2);
        assert!(
            (base - shifted).abs() < 1e-9,
            "shift moved the loss: {base} vs {shifted}"
        );
    }

    #[test]
    fn total_loss_composes() {
        let mu = 5000.0;
        let a = rng_tensor_in(Shape::new(1, 3, 6, 6), 27, 0.0, 1.5);
        let b = rng_tensor_in(Shape::new(1, 3, 6, 6), 28, 0.0, 1.5);

        let recon = loss_value(|g, p, t| reconstruction_loss(g, p, t, mu), &a, &b);
        let sobel = loss_value(|g, p, t| sobel_loss(g, p, t, mu), &a, &b);

        let zero_lambda = loss_value(|g, p, t| total_loss(g, p, t, 0.0, mu), &a, &b);
        assert_eq!(zero_lambda, recon);

        let quarter = loss_value(|g, p, t| total_loss(g, p, t, 0.25, mu), &a, &b);
        assert!((quarter - (recon + 0.25 * sobel)).abs() < 1e-12);

        assert_eq!(loss_value(|g, p, t| total_loss(g, p, t, 0.25, mu), &a, &a), 0.0);

        let mut g = Graph::new();
        let p = g.leaf(a, false).unwrap();
        let t = g.leaf(b, false).unwrap();
        assert!(matches!(
            total_loss(&mut g, p, t, -0.1, mu),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn losses_are_differentiable() {
        // Finite-difference spot check through the full loss composition.
        let mu = 5000.0;
        let lambda = 0.25;
        let pred = rng_tensor_in(Shape::new(1, 1, 4, 4), 29, 0.1, 1.0);
        let gt = rng_tensor_in(Shape::new(1, 1, 4, 4), 30, 0.1, 1.0);

        let eval = |p: &Tensor| {
            let mut g = Graph::new();
            let pn = g.leaf(p.clone(), true).unwrap();
            let tn = g.leaf(gt.clone(), false).unwrap();
            let l = total_loss(&mut g, pn, tn, lambda, mu).unwrap();
            (g.value(l).item(), g, pn, l)
        };
        let (_, mut g, pn, l) = eval(&pred);
        let grads = g.backward(l).unwrap();
        let analytic = grads.get(pn).unwrap();

        let step = 1e-5;
        for ei in [0usize, 5, 11, 15] {
            let mut d = pred.data().to_vec();
            d[ei] += step;
            let (lp, _, _, _) = eval(&Tensor::new(pred.shape(), d.clone()).unwrap());
            d[ei] -= 2.0 * step;
            let (lm, _, _, _) = eval(&Tensor::new(pred.shape(), d).unwrap());
            let numeric = (lp - lm) / (2.0 * step);
            let a = analytic.data()[ei];
            let denom = a.abs().max(numeric.abs()).max(1e-3);
            assert!(((a - numeric) / denom).abs() < 1e-4, "{a} vs {numeric}");
        }
    }

    #[test]
    fn validate_rejects_bad_brackets() {
        let mut s = sample(3, 4, 4);
        s.exposure_times = [1.0, 1.0, 4.0];
        assert!(matches!(s.validate(), Err(Error::Config(_))));

        let mut s = sample(3, 4, 4);
        s.ldr[2] = Tensor::full(Shape::new(1, 3, 4, 4), 1.5);
        assert!(matches!(s.validate(), Err(Error::Config(_))));

        let mut s = sample(3, 4, 4);
        s.gt_hdr = Some(Tensor::full(Shape::new(1, 3, 4, 4), -0.5));
        assert!(matches!(s.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn exposure_times_follow_biases() {
        assert_eq!(
            exposure_times_from_biases([-2.0, 0.0, 2.0]),
            [0.25, 1.0, 4.0]
        );
    }
}
