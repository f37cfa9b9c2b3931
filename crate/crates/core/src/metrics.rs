//! PSNR and SSIM in linear and tone-mapped domains, plus evaluation-report
//! assembly over a dataset.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::params_digest;
use crate::config::model_config_digest;
use crate::data::load_dataset;
use crate::error::{Error, Result};
use crate::hdr::mu_law;
use crate::model::{predict_sample, ModelConfig, ModelParams};
use crate::tensor::Tensor;

/// Reported in place of infinite PSNR so aggregation stays finite.
pub const PSNR_CAP_DB: f64 = 99.0;

/// SSIM window: 11 taps, Gaussian sigma 1.5, canonical stabilizers.
const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

pub fn mse(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    if pred.shape() != gt.shape() {
        return Err(Error::Shape(format!(
            "mse: {} vs {}",
            pred.shape(),
            gt.shape()
        )));
    }
    let sum: f64 = pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum();
    Ok(sum / pred.numel() as f64)
}

/// `10 * log10(peak^2 / MSE)`, capped at [`PSNR_CAP_DB`].
pub fn psnr(pred: &Tensor, gt: &Tensor, peak: f64) -> Result<f64> {
    if peak <= 0.0 {
        return Err(Error::Config(format!("peak must be positive, got {peak}")));
    }
    let e = mse(pred, gt)?;
    if e == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / e).log10()).min(PSNR_CAP_DB))
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = w.iter().sum();
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Mean structural similarity over all valid 11x11 windows, channels and
/// batch items.
pub fn ssim(pred: &Tensor, gt: &Tensor, dynamic_range: f64) -> Result<f64> {
    if pred.shape() != gt.shape() {
        return Err(Error::Shape(format!(
            "ssim: {} vs {}",
            pred.shape(),
            gt.shape()
        )));
    }
    if dynamic_range <= 0.0 {
        return Err(Error::Config(format!(
            "dynamic range must be positive, got {dynamic_range}"
        )));
    }
    let s = pred.shape();
    if s.height < SSIM_WINDOW || s.width < SSIM_WINDOW {
        return Err(Error::Geometry(format!(
            "ssim needs extents of at least {SSIM_WINDOW}, got {s}"
        )));
    }
    let c1 = (SSIM_K1 * dynamic_range) * (SSIM_K1 * dynamic_range);
    let c2 = (SSIM_K2 * dynamic_range) * (SSIM_K2 * dynamic_range);
    let w = gaussian_window();

    let planes: Vec<(usize, usize)> = (0..s.batch)
        .flat_map(|b| (0..s.channels).map(move |c| (b, c)))
        .collect();
    let sums: Vec<(f64, usize)> = planes
        .par_iter()
        .map(|&(b, c)| {
            let x = pred.plane(b, c);
            let y = gt.plane(b, c);
            plane_ssim_sum(x, y, s.height, s.width, &w, c1, c2)
        })
        .collect();
    let total: f64 = sums.iter().map(|(v, _)| v).sum();
    let count: usize = sums.iter().map(|(_, n)| n).sum();
    Ok(total / count as f64)
}

/// Weighted moments over one plane; returns (sum of window SSIM, count).
fn plane_ssim_sum(
    x: &[f64],
    y: &[f64],
    h: usize,
    w_extent: usize,
    w: &[f64; SSIM_WINDOW],
    c1: f64,
    c2: f64,
) -> (f64, usize) {
    let valid_h = h - SSIM_WINDOW + 1;
    let valid_w = w_extent - SSIM_WINDOW + 1;
    // Separable weighting: first blur rows, then columns.
    let weight_rows = |src: &[f64], dst: &mut Vec<f64>| {
        dst.clear();
        dst.resize(h * valid_w, 0.0);
        for r in 0..h {
            let row = &src[r * w_extent..(r + 1) * w_extent];
            let out = &mut dst[r * valid_w..(r + 1) * valid_w];
            for (j, o) in out.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (t, &wt) in w.iter().enumerate() {
                    acc += wt * row[j + t];
                }
                *o = acc;
            }
        }
    };
    let weight_cols = |src: &[f64], dst: &mut Vec<f64>| {
        dst.clear();
        dst.resize(valid_h * valid_w, 0.0);
        for i in 0..valid_h {
            let out = &mut dst[i * valid_w..(i + 1) * valid_w];
            for j in 0..valid_w {
                let mut acc = 0.0;
                for (t, &wt) in w.iter().enumerate() {
                    acc += wt * src[(i + t) * valid_w + j];
                }
                out[j] = acc;
            }
        }
    };
    let blur = |src: &[f64]| {
        let mut tmp = Vec::new();
        let mut out = Vec::new();
        weight_rows(src, &mut tmp);
        weight_cols(&tmp, &mut out);
        out
    };

    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();

    let mu_x = blur(x);
    let mu_y = blur(y);
    let m_xx = blur(&xx);
    let m_yy = blur(&yy);
    let m_xy = blur(&xy);

    let mut sum = 0.0;
    for i in 0..mu_x.len() {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let var_x = m_xx[i] - mx * mx;
        let var_y = m_yy[i] - my * my;
        let cov = m_xy[i] - mx * my;
        let num = (2.0 * mx * my + c1) * (2.0 * cov + c2);
        let den = (mx * mx + my * my + c1) * (var_x + var_y + c2);
        sum += num / den;
    }
    (sum, mu_x.len())
}

/// All four quality numbers for one prediction/ground-truth pair:
/// `(psnr_mu, psnr_l, ssim_mu, ssim_l)`. Both inputs are in the linear
/// domain; the mu-law variants tone-map first with peak/range 1.
pub fn quality(pred: &Tensor, gt: &Tensor, mu: f64) -> Result<(f64, f64, f64, f64)> {
    let tp = mu_law(pred, mu)?;
    let tg = mu_law(gt, mu)?;
    Ok((
        psnr(&tp, &tg, 1.0)?,
        psnr(pred, gt, 1.0)?,
        ssim(&tp, &tg, 1.0)?,
        ssim(pred, gt, 1.0)?,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub name: String,
    pub psnr_mu: f64,
    pub psnr_l: f64,
    pub ssim_mu: f64,
    pub ssim_l: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_sample: Vec<SampleMetrics>,
    pub mean_psnr_mu: f64,
    pub mean_psnr_l: f64,
    pub mean_ssim_mu: f64,
    pub mean_ssim_l: f64,
    /// Samples skipped because they carry no ground truth.
    pub skipped: usize,
    pub config_digest: String,
    pub checkpoint_digest: String,
}

impl EvalReport {
    pub fn assemble(
        per_sample: Vec<SampleMetrics>,
        skipped: usize,
        config_digest: String,
        checkpoint_digest: String,
    ) -> Result<Self> {
        if per_sample.is_empty() {
            return Err(Error::Config(
                "evaluation produced no scored samples".into(),
            ));
        }
        let n = per_sample.len() as f64;
        let mean = |f: fn(&SampleMetrics) -> f64| per_sample.iter().map(f).sum::<f64>() / n;
        Ok(EvalReport {
            mean_psnr_mu: mean(|m| m.psnr_mu),
            mean_psnr_l: mean(|m| m.psnr_l),
            mean_ssim_mu: mean(|m| m.ssim_mu),
            mean_ssim_l: mean(|m| m.ssim_l),
            per_sample,
            skipped,
            config_digest,
            checkpoint_digest,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("report does not parse: {e}")))
    }

    /// Human-readable table with one row per sample plus the means.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<20} {:>9} {:>9} {:>8} {:>8}\n",
            "sample", "psnr_mu", "psnr_l", "ssim_mu", "ssim_l"
        ));
        for m in &self.per_sample {
            out.push_str(&format!(
                "{:<20} {:>9.4} {:>9.4} {:>8.5} {:>8.5}\n",
                m.name, m.psnr_mu, m.psnr_l, m.ssim_mu, m.ssim_l
            ));
        }
        out.push_str(&format!(
            "{:<20} {:>9.4} {:>9.4} {:>8.5} {:>8.5}\n",
            "mean", self.mean_psnr_mu, self.mean_psnr_l, self.mean_ssim_mu, self.mean_ssim_l
        ));
        if self.skipped > 0 {
            out.push_str(&format!("skipped (no ground truth): {}\n", self.skipped));
        }
        out.push_str(&format!("config digest:     {}\n", self.config_digest));
        out.push_str(&format!("checkpoint digest: {}\n", self.checkpoint_digest));
        out
    }
}

/// Runs the model over every sample of a dataset directory (full frames,
/// padded and cropped as needed) and aggregates the four metrics.
pub fn evaluate(params: &ModelParams, cfg: &ModelConfig, dataset: &Path) -> Result<EvalReport> {
    let samples = load_dataset(dataset)?;
    let mut per_sample = Vec::new();
    let mut skipped = 0usize;
    for (name, sample) in &samples {
        let Some(gt) = &sample.gt_hdr else {
            skipped += 1;
            continue;
        };
        let pred = predict_sample(params, cfg, sample)?;
        let (psnr_mu, psnr_l, ssim_mu, ssim_l) = quality(&pred, gt, cfg.mu)?;
        per_sample.push(SampleMetrics {
            name: name.clone(),
            psnr_mu,
            psnr_l,
            ssim_mu,
            ssim_l,
        });
    }
    EvalReport::assemble(
        per_sample,
        skipped,
        model_config_digest(cfg),
        params_digest(params),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::testutil::{rng_tensor, rng_tensor_in};
    use crate::tensor::Shape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn psnr_reference_values() {
        // MSE 0.01 against a zero image: pred constant 0.1.
        let gt = Tensor::zeros(Shape::new(1, 1, 4, 4));
        let pred = Tensor::full(Shape::new(1, 1, 4, 4), 0.1);
        let v = psnr(&pred, &gt, 1.0).unwrap();
        assert!((v - 20.0).abs() < 1e-12, "{v}");

        assert_eq!(psnr(&gt, &gt, 1.0).unwrap(), PSNR_CAP_DB);
    }

    #[test]
    fn psnr_matches_scalar_mse_oracle() {
        let a = rng_tensor(Shape::new(1, 3, 6, 6), 1);
        let b = rng_tensor(Shape::new(1, 3, 6, 6), 2);
        let got = psnr(&a, &b, 1.0).unwrap();
        let mut acc = 0.0;
        for i in 0..a.numel() {
            let d = a.data()[i] - b.data()[i];
            acc += d * d;
        }
        let want = 10.0 * (1.0 / (acc / a.numel() as f64)).log10();
        assert!((got - want).abs() < 1e-9);
    }

    #[test]
    fn psnr_is_symmetric_and_monotone_in_noise() {
        let base = rng_tensor_in(Shape::new(1, 1, 8, 8), 3, 0.0, 1.0);
        let noisy = |amp: f64, seed: u64| {
            let n = rng_tensor(Shape::new(1, 1, 8, 8), seed);
            Tensor::from_fn(base.shape(), |b, c, y, x| {
                base.at(b, c, y, x) + amp * n.at(b, c, y, x)
            })
        };
        let p1 = psnr(&noisy(0.01, 4), &base, 1.0).unwrap();
        let p2 = psnr(&noisy(0.05, 4), &base, 1.0).unwrap();
        let p3 = psnr(&noisy(0.25, 4), &base, 1.0).unwrap();
        assert!(p1 > p2 && p2 > p3, "{p1} {p2} {p3}");

        let x = noisy(0.1, 5);
        assert_eq!(
            psnr(&x, &base, 1.0).unwrap(),
            psnr(&base, &x, 1.0).unwrap()
        );
    }

    #[test]
    fn ssim_is_one_exactly_on_identical_inputs() {
        let x = rng_tensor_in(Shape::new(1, 3, 16, 16), 6, 0.0, 1.0);
        assert_eq!(ssim(&x, &x, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn ssim_bounds_on_inverted_image() {
        let x = rng_tensor_in(Shape::new(1, 1, 16, 16), 7, 0.0, 1.0);
        let inv = x.map(|v| 1.0 - v);
        let v = ssim(&x, &inv, 1.0).unwrap();
        assert!(v < 0.5 && v > -1.0, "{v}");
    }

    #[test]
    fn ssim_is_symmetric() {
        let a = rng_tensor_in(Shape::new(1, 1, 12, 12), 8, 0.0, 1.0);
        let b = rng_tensor_in(Shape::new(1, 1, 12, 12), 9, 0.0, 1.0);
        assert_eq!(ssim(&a, &b, 1.0).unwrap(), ssim(&b, &a, 1.0).unwrap());
    }

    #[test]
    fn ssim_matches_direct_formula_oracle() {
        let a = rng_tensor_in(Shape::new(1, 2, 14, 13), 10, 0.0, 1.0);
        let b = rng_tensor_in(Shape::new(1, 2, 14, 13), 11, 0.0, 1.0);
        let got = ssim(&a, &b, 1.0).unwrap();

        // Direct sliding-window evaluation, no separable shortcut.
        let w = gaussian_window();
        let c1 = SSIM_K1 * SSIM_K1;
        let c2 = SSIM_K2 * SSIM_K2;
        let s = a.shape();
        let mut sum = 0.0;
        let mut count = 0usize;
        for bb in 0..s.batch {
            for cc in 0..s.channels {
                for i in 0..=s.height - SSIM_WINDOW {
                    for j in 0..=s.width - SSIM_WINDOW {
                        let (mut mx, mut my) = (0.0, 0.0);
                        let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
                        for dy in 0..SSIM_WINDOW {
                            for dx in 0..SSIM_WINDOW {
                                let wt = w[dy] * w[dx];
                                let xv = a.at(bb, cc, i + dy, j + dx);
                                let yv = b.at(bb, cc, i + dy, j + dx);
                                mx += wt * xv;
                                my += wt * yv;
                                sxx += wt * xv * xv;
                                syy += wt * yv * yv;
                                sxy += wt * xv * yv;
                            }
                        }
                        let var_x = sxx - mx * mx;
                        let var_y = syy - my * my;
                        let cov = sxy - mx * my;
                        let num = (2.0 * mx * my + c1) * (2.0 * cov + c2);
                        let den = (mx * mx + my * my + c1) * (var_x + var_y + c2);
                        sum += num / den;
                        count += 1;
                    }
                }
            }
        }
        let want = sum / count as f64;
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    }

    #[test]
    fn ssim_rejects_small_images() {
        let x = Tensor::zeros(Shape::new(1, 1, 8, 8));
        assert!(matches!(ssim(&x, &x, 1.0), Err(Error::Geometry(_))));
    }

    #[test]
    fn mu_metrics_compose_with_tone_mapping() {
        let mu = 5000.0;
        let a = rng_tensor_in(Shape::new(1, 1, 16, 16), 12, 0.0, 1.5);
        let b = rng_tensor_in(Shape::new(1, 1, 16, 16), 13, 0.0, 1.5);
        let (psnr_mu, _, ssim_mu, _) = quality(&a, &b, mu).unwrap();
        let ta = mu_law(&a, mu).unwrap();
        let tb = mu_law(&b, mu).unwrap();
        assert_eq!(psnr_mu, psnr(&ta, &tb, 1.0).unwrap());
        assert_eq!(ssim_mu, ssim(&ta, &tb, 1.0).unwrap());
    }

    #[test]
    fn report_means_and_round_trip() {
        let mk = |name: &str, base: f64| SampleMetrics {
            name: name.into(),
            psnr_mu: base,
            psnr_l: base + 1.0,
            ssim_mu: 0.9,
            ssim_l: 0.8,
        };
        let report = EvalReport::assemble(
            vec![mk("a", 30.0), mk("b", 34.0)],
            1,
            "cfg".into(),
            "ckpt".into(),
        )
        .unwrap();
        assert_eq!(report.mean_psnr_mu, 32.0);
        assert_eq!(report.mean_psnr_l, 33.0);

        let parsed = EvalReport::from_json(&report.to_json()).unwrap();
        assert_eq!(parsed, report);
        assert!(report.render_table().contains("skipped"));
    }

    #[test]
    fn report_round_trip_preserves_full_precision() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let noisy: Vec<SampleMetrics> = (0..5)
            .map(|i| SampleMetrics {
                name: format!("s{i}"),
                psnr_mu: rng.gen::<f64>() * 50.0,
                psnr_l: rng.gen::<f64>() * 50.0,
                ssim_mu: rng.gen(),
                ssim_l: rng.gen(),
            })
            .collect();
        let report =
            EvalReport::assemble(noisy, 0, "c".into(), "k".into()).unwrap();
        let parsed = EvalReport::from_json(&report.to_json()).unwrap();
        for (a, b) in report.per_sample.iter().zip(&parsed.per_sample) {
            assert_eq!(a.psnr_mu.to_bits(), b.psnr_mu.to_bits());
            assert_eq!(a.ssim_l.to_bits(), b.ssim_l.to_bits());
        }
    }
}
