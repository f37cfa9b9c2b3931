//! Separable single-level 2-D DWT/IDWT with orthonormal filters and
//! periodic (circular) boundary extension.
//!
//! The analysis of a length-`n` signal is `a[i] = sum_t f[t] * x[(2i+t) mod n]`
//! for each half-band filter `f`; synthesis is the exact transpose, which for
//! orthonormal filters is also the exact inverse. Oriented band names follow
//! the half-band order: `LH` is low-pass along rows and high-pass down
//! columns (vertical detail), `HL` the converse, `HH` diagonal.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, NodeId, Shape, Tensor};

/// Haar scaling filter.
const HAAR_LOW: [f64; 2] = [std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2];

/// Daubechies-2 scaling filter; standard orthonormal table, correctly
/// rounded from a 60-digit spectral factorization of the half-band
/// polynomial.
const DB2_LOW: [f64; 4] = [
    0.48296291314453416,
    0.83651630373780794,
    0.22414386804201339,
    -0.12940952255126037,
];

/// Daubechies-3 scaling filter, same provenance as [`DB2_LOW`].
const DB3_LOW: [f64; 6] = [
    0.33267055295008263,
    0.80689150931109255,
    0.45987750211849154,
    -0.13501102001025458,
    -0.085441273882026658,
    0.035226291885709533,
];

/// Symlet-2 scaling filter. At order 2 the least-asymmetric construction
/// coincides with Daubechies-2, so the published tables are identical.
const SYM2_LOW: [f64; 4] = DB2_LOW;

/// Supported wavelet families.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WaveletKind {
    Haar,
    Db2,
    Db3,
    Sym2,
}

impl WaveletKind {
    pub const ALL: [WaveletKind; 4] = [
        WaveletKind::Haar,
        WaveletKind::Db2,
        WaveletKind::Db3,
        WaveletKind::Sym2,
    ];

    pub fn analysis_low(&self) -> &'static [f64] {
        match self {
            WaveletKind::Haar => &HAAR_LOW,
            WaveletKind::Db2 => &DB2_LOW,
            WaveletKind::Db3 => &DB3_LOW,
            WaveletKind::Sym2 => &SYM2_LOW,
        }
    }

    /// Quadrature mirror of the low-pass: `g[t] = (-1)^t * h[L-1-t]`.
    pub fn analysis_high(&self) -> Vec<f64> {
        let h = self.analysis_low();
        let l = h.len();
        (0..l)
            .map(|t| {
                let v = h[l - 1 - t];
                if t % 2 == 0 {
                    v
                } else {
                    -v
                }
            })
            .collect()
    }

    /// Synthesis filters are the time-reversed analysis filters.
    pub fn synthesis_low(&self) -> Vec<f64> {
        self.analysis_low().iter().rev().copied().collect()
    }

    pub fn synthesis_high(&self) -> Vec<f64> {
        self.analysis_high().iter().rev().copied().collect()
    }

    pub fn name(&self) -> &'static str {
        match self {
            WaveletKind::Haar => "haar",
            WaveletKind::Db2 => "db2",
            WaveletKind::Db3 => "db3",
            WaveletKind::Sym2 => "sym2",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "haar" => Ok(WaveletKind::Haar),
            "db2" => Ok(WaveletKind::Db2),
            "db3" => Ok(WaveletKind::Db3),
            "sym2" => Ok(WaveletKind::Sym2),
            other => Err(Error::Config(format!(
                "unknown wavelet '{other}' (expected haar, db2, db3 or sym2)"
            ))),
        }
    }
}

impl std::fmt::Display for WaveletKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// The four half-resolution sub-bands of one DWT level.
#[derive(Clone, Debug)]
pub struct WaveletBands {
    pub ll: Tensor,
    pub lh: Tensor,
    pub hl: Tensor,
    pub hh: Tensor,
}

/// Band quadruple tracked in an autodiff graph.
#[derive(Clone, Copy, Debug)]
pub struct BandNodes {
    pub ll: NodeId,
    pub lh: NodeId,
    pub hl: NodeId,
    pub hh: NodeId,
}

fn check_even(shape: Shape) -> Result<()> {
    if shape.height % 2 != 0 || shape.width % 2 != 0 || shape.height == 0 || shape.width == 0 {
        return Err(Error::Geometry(format!(
            "dwt2 needs even spatial extents, got {shape}; pad inputs first"
        )));
    }
    Ok(())
}

/// Analysis along one axis of a plane held in `src` (length `n`, stride
/// `stride`, `count` parallel lines offset by `line_stride`).
fn analyze_lines(
    src: &[f64],
    n: usize,
    stride: usize,
    count: usize,
    line_stride: usize,
    low: &[f64],
    high: &[f64],
    out_low: &mut [f64],
    out_high: &mut [f64],
    out_stride: usize,
    out_line_stride: usize,
) {
    let half = n / 2;
    for line in 0..count {
        let base = line * line_stride;
        let obase = line * out_line_stride;
        for i in 0..half {
            let mut al = 0.0;
            let mut ah = 0.0;
            for (t, (&fl, &fh)) in low.iter().zip(high).enumerate() {
                let idx = (2 * i + t) % n;
                let v = src[base + idx * stride];
                al += fl * v;
                ah += fh * v;
            }
            out_low[obase + i * out_stride] = al;
            out_high[obase + i * out_stride] = ah;
        }
    }
}

/// Transpose of [`analyze_lines`]: scatters half-band coefficients back.
fn synthesize_lines(
    in_low: &[f64],
    in_high: &[f64],
    n: usize,
    in_stride: usize,
    count: usize,
    in_line_stride: usize,
    low: &[f64],
    high: &[f64],
    dst: &mut [f64],
    stride: usize,
    line_stride: usize,
) {
    let half = n / 2;
    for line in 0..count {
        let base = line * line_stride;
        let ibase = line * in_line_stride;
        for i in 0..half {
            let al = in_low[ibase + i * in_stride];
            let ah = in_high[ibase + i * in_stride];
            for (t, (&fl, &fh)) in low.iter().zip(high).enumerate() {
                let idx = (2 * i + t) % n;
                dst[base + idx * stride] += fl * al + fh * ah;
            }
        }
    }
}

/// One DWT level per channel. Output stacks the bands along the channel
/// axis as `[LL | LH | HL | HH]`, each at half resolution.
pub fn dwt2_stacked(x: &Tensor, kind: WaveletKind) -> Result<Tensor> {
    let s = x.shape();
    check_even(s)?;
    let low = kind.analysis_low();
    let high = kind.analysis_high();
    let (h, w) = (s.height, s.width);
    let (h2, w2) = (h / 2, w / 2);
    let out_shape = Shape::new(s.batch, 4 * s.channels, h2, w2);

    let planes = s.batch * s.channels;
    let band_planes: Vec<[Vec<f64>; 4]> = (0..planes)
        .into_par_iter()
        .map(|pi| {
            let (b, c) = (pi / s.channels, pi % s.channels);
            let src = x.plane(b, c);
            // Rows first: low/high halves at full height.
            let mut row_low = vec![0.0; h * w2];
            let mut row_high = vec![0.0; h * w2];
            analyze_lines(src, w, 1, h, w, low, &high, &mut row_low, &mut row_high, 1, w2);
            // Then columns of each half.
            let mut ll = vec![0.0; h2 * w2];
            let mut lh = vec![0.0; h2 * w2];
            let mut hl = vec![0.0; h2 * w2];
            let mut hh = vec![0.0; h2 * w2];
            analyze_lines(&row_low, h, w2, w2, 1, low, &high, &mut ll, &mut lh, w2, 1);
            analyze_lines(&row_high, h, w2, w2, 1, low, &high, &mut hl, &mut hh, w2, 1);
            [ll, lh, hl, hh]
        })
        .collect();

    let mut data = vec![0.0; out_shape.numel()];
    let hw2 = h2 * w2;
    for (pi, bands) in band_planes.iter().enumerate() {
        let (b, c) = (pi / s.channels, pi % s.channels);
        for (band, plane) in bands.iter().enumerate() {
            let off = (b * 4 * s.channels + band * s.channels + c) * hw2;
            data[off..off + hw2].copy_from_slice(plane);
        }
    }
    Ok(Tensor::from_parts(out_shape, data))
}

/// Exact inverse (and adjoint) of [`dwt2_stacked`].
pub fn idwt2_stacked(x: &Tensor, kind: WaveletKind) -> Result<Tensor> {
    let s = x.shape();
    if s.channels % 4 != 0 {
        return Err(Error::Shape(format!(
            "idwt2 expects stacked bands (channels divisible by 4), got {s}"
        )));
    }
    let c_out = s.channels / 4;
    let low = kind.analysis_low();
    let high = kind.analysis_high();
    let (h2, w2) = (s.height, s.width);
    let (h, w) = (2 * h2, 2 * w2);
    let out_shape = Shape::new(s.batch, c_out, h, w);

    let planes = s.batch * c_out;
    let rec_planes: Vec<Vec<f64>> = (0..planes)
        .into_par_iter()
        .map(|pi| {
            let (b, c) = (pi / c_out, pi % c_out);
            let ll = x.plane(b, c);
            let lh = x.plane(b, c_out + c);
            let hl = x.plane(b, 2 * c_out + c);
            let hh = x.plane(b, 3 * c_out + c);
            // Columns first (transpose of the forward's second stage).
            let mut row_low = vec![0.0; h * w2];
            let mut row_high = vec![0.0; h * w2];
            synthesize_lines(ll, lh, h, w2, w2, 1, low, &high, &mut row_low, w2, 1);
            synthesize_lines(hl, hh, h, w2, w2, 1, low, &high, &mut row_high, w2, 1);
            // Then rows.
            let mut out = vec![0.0; h * w];
            synthesize_lines(&row_low, &row_high, w, 1, h, w2, low, &high, &mut out, 1, w);
            out
        })
        .collect();

    let mut data = vec![0.0; out_shape.numel()];
    let hw = h * w;
    for (pi, plane) in rec_planes.iter().enumerate() {
        let (b, c) = (pi / c_out, pi % c_out);
        data[(b * c_out + c) * hw..(b * c_out + c + 1) * hw].copy_from_slice(plane);
    }
    Ok(Tensor::from_parts(out_shape, data))
}

/// One DWT level of a tensor, returned as a band quadruple.
pub fn dwt2(x: &Tensor, kind: WaveletKind) -> Result<WaveletBands> {
    let stacked = dwt2_stacked(x, kind)?;
    let s = stacked.shape();
    let c = s.channels / 4;
    let hw = s.height * s.width;
    let slice_band = |band: usize| {
        let mut data = vec![0.0; s.batch * c * hw];
        for b in 0..s.batch {
            let src = (b * 4 * c + band * c) * hw;
            data[b * c * hw..(b + 1) * c * hw]
                .copy_from_slice(&stacked.data()[src..src + c * hw]);
        }
        Tensor::from_parts(Shape::new(s.batch, c, s.height, s.width), data)
    };
    Ok(WaveletBands {
        ll: slice_band(0),
        lh: slice_band(1),
        hl: slice_band(2),
        hh: slice_band(3),
    })
}

/// Inverse of [`dwt2`].
pub fn idwt2(bands: &WaveletBands, kind: WaveletKind) -> Result<Tensor> {
    let s = bands.ll.shape();
    for (name, t) in [("lh", &bands.lh), ("hl", &bands.hl), ("hh", &bands.hh)] {
        if t.shape() != s {
            return Err(Error::Shape(format!(
                "idwt2 band {name} has shape {} but ll has {s}",
                t.shape()
            )));
        }
    }
    let stacked_shape = Shape::new(s.batch, 4 * s.channels, s.height, s.width);
    let hw = s.height * s.width;
    let mut data = vec![0.0; stacked_shape.numel()];
    for b in 0..s.batch {
        for (band, t) in [&bands.ll, &bands.lh, &bands.hl, &bands.hh].iter().enumerate() {
            let dst = (b * 4 * s.channels + band * s.channels) * hw;
            data[dst..dst + s.channels * hw]
                .copy_from_slice(&t.data()[b * s.channels * hw..(b + 1) * s.channels * hw]);
        }
    }
    idwt2_stacked(&Tensor::from_parts(stacked_shape, data), kind)
}

/// Graph-tracked DWT returning the four band nodes.
pub fn dwt2_node(g: &mut Graph, x: NodeId, kind: WaveletKind) -> Result<BandNodes> {
    let stacked = g.dwt2(x, kind)?;
    let c = g.shape(stacked).channels / 4;
    Ok(BandNodes {
        ll: g.slice_channels(stacked, 0, c)?,
        lh: g.slice_channels(stacked, c, c)?,
        hl: g.slice_channels(stacked, 2 * c, c)?,
        hh: g.slice_channels(stacked, 3 * c, c)?,
    })
}

/// Graph-tracked IDWT over four band nodes.
pub fn idwt2_node(g: &mut Graph, bands: &BandNodes, kind: WaveletKind) -> Result<NodeId> {
    let stacked = g.concat_channels(&[bands.ll, bands.lh, bands.hl, bands.hh])?;
    g.idwt2(stacked, kind)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::testutil::{max_abs_diff, rng_tensor};

    /// Independent oracle: direct 1-D filtering with explicit periodic
    /// indexing followed by downsample-by-2, applied separably.
    fn dwt2_oracle(x: &Tensor, kind: WaveletKind) -> WaveletBands {
        let s = x.shape();
        let low = kind.analysis_low().to_vec();
        let high = kind.analysis_high();
        let filt_1d = |line: &[f64], f: &[f64]| -> Vec<f64> {
            let n = line.len();
            (0..n / 2)
                .map(|i| {
                    f.iter()
                        .enumerate()
                        .map(|(t, &fv)| fv * line[(2 * i + t) % n])
                        .sum()
                })
                .collect()
        };
        let band = |row_f: &[f64], col_f: &[f64]| -> Tensor {
            Tensor::from_fn(
                Shape::new(s.batch, s.channels, s.height / 2, s.width / 2),
                |b, c, y, xx| {
                    // Rows first, then the chosen column filter.
                    let plane = x.plane(b, c);
                    let col: Vec<f64> = (0..s.height)
                        .map(|yy| {
                            let row: Vec<f64> =
                                plane[yy * s.width..(yy + 1) * s.width].to_vec();
                            filt_1d(&row, row_f)[xx]
                        })
                        .collect();
                    filt_1d(&col, col_f)[y]
                },
            )
        };
        WaveletBands {
            ll: band(&low, &low),
            lh: band(&low, &high),
            hl: band(&high, &low),
            hh: band(&high, &high),
        }
    }

    fn energy(t: &Tensor) -> f64 {
        t.data().iter().map(|v| v * v).sum()
    }

    #[test]
    fn filters_are_orthonormal() {
        for kind in WaveletKind::ALL {
            let h = kind.analysis_low();
            let g = kind.analysis_high();
            let sum: f64 = h.iter().sum();
            assert!(
                (sum - std::f64::consts::SQRT_2).abs() < 1e-12,
                "{kind}: low-pass sum {sum}"
            );
            let sq: f64 = h.iter().map(|v| v * v).sum();
            assert!((sq - 1.0).abs() < 1e-12, "{kind}: low-pass energy {sq}");
            let sqh: f64 = g.iter().map(|v| v * v).sum();
            assert!((sqh - 1.0).abs() < 1e-12, "{kind}: high-pass energy {sqh}");
            // Even-shift self-orthogonality and low/high orthogonality.
            for shift in (2..h.len()).step_by(2) {
                let dot: f64 = (0..h.len() - shift).map(|i| h[i] * h[i + shift]).sum();
                assert!(dot.abs() < 1e-12, "{kind}: shift {shift} dot {dot}");
            }
            let cross: f64 = h.iter().zip(&g).map(|(a, b)| a * b).sum();
            assert!(cross.abs() < 1e-12, "{kind}: low/high dot {cross}");
            // Synthesis filters are the time-reversed analysis filters.
            let rev: Vec<f64> = h.iter().rev().copied().collect();
            assert_eq!(kind.synthesis_low(), rev);
        }
    }

    #[test]
    fn haar_two_by_two_butterfly() {
        let (a, b, c, d) = (1.5, -0.25, 2.0, 0.75);
        let x = Tensor::new(Shape::new(1, 1, 2, 2), vec![a, b, c, d]).unwrap();
        let bands = dwt2(&x, WaveletKind::Haar).unwrap();
        let tol = 1e-12;
        assert!((bands.ll.item() - (a + b + c + d) / 2.0).abs() < tol);
        assert!((bands.lh.item() - (a + b - c - d) / 2.0).abs() < tol);
        assert!((bands.hl.item() - (a - b + c - d) / 2.0).abs() < tol);
        assert!((bands.hh.item() - (a - b - c + d) / 2.0).abs() < tol);
    }

    #[test]
    fn haar_constant_image_concentrates_in_ll() {
        let x = Tensor::full(Shape::new(1, 2, 6, 8), 7.0);
        let bands = dwt2(&x, WaveletKind::Haar).unwrap();
        for &v in bands.ll.data() {
            assert!((v - 14.0).abs() < 1e-12);
        }
        for t in [&bands.lh, &bands.hl, &bands.hh] {
            for &v in t.data() {
                assert!(v.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn idwt_of_constant_ll_restores_constant() {
        let c = 3.25;
        let half = Shape::new(1, 1, 4, 4);
        let bands = WaveletBands {
            ll: Tensor::full(half, 2.0 * c),
            lh: Tensor::zeros(half),
            hl: Tensor::zeros(half),
            hh: Tensor::zeros(half),
        };
        let x = idwt2(&bands, WaveletKind::Haar).unwrap();
        assert_eq!(x.shape(), Shape::new(1, 1, 8, 8));
        for &v in x.data() {
            assert!((v - c).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_direct_filter_bank_oracle() {
        for (ki, kind) in WaveletKind::ALL.into_iter().enumerate() {
            let x = rng_tensor(Shape::new(1, 3, 16, 16), 100 + ki as u64);
            let got = dwt2(&x, kind).unwrap();
            let want = dwt2_oracle(&x, kind);
            assert!(max_abs_diff(&got.ll, &want.ll) < 1e-10, "{kind} ll");
            assert!(max_abs_diff(&got.lh, &want.lh) < 1e-10, "{kind} lh");
            assert!(max_abs_diff(&got.hl, &want.hl) < 1e-10, "{kind} hl");
            assert!(max_abs_diff(&got.hh, &want.hh) < 1e-10, "{kind} hh");
        }
    }

    #[test]
    fn perfect_reconstruction_round_trip() {
        for (ki, kind) in WaveletKind::ALL.into_iter().enumerate() {
            for trial in 0..10 {
                let shape = Shape::new(1, 2, 4 + 2 * (trial % 4), 6 + 2 * (trial % 3));
                let x = rng_tensor(shape, 200 + 10 * ki as u64 + trial as u64);
                let bands = dwt2(&x, kind).unwrap();
                let back = idwt2(&bands, kind).unwrap();
                assert!(
                    max_abs_diff(&x, &back) < 1e-10,
                    "{kind} trial {trial} round trip"
                );
            }
        }
    }

    #[test]
    fn energy_is_preserved() {
        for (ki, kind) in WaveletKind::ALL.into_iter().enumerate() {
            let x = rng_tensor(Shape::new(2, 1, 12, 8), 300 + ki as u64);
            let bands = dwt2(&x, kind).unwrap();
            let total =
                energy(&bands.ll) + energy(&bands.lh) + energy(&bands.hl) + energy(&bands.hh);
            let rel = (total - energy(&x)).abs() / energy(&x);
            assert!(rel < 1e-9, "{kind}: energy off by {rel}");
        }
    }

    #[test]
    fn transform_is_linear() {
        for kind in [WaveletKind::Haar, WaveletKind::Db3] {
            let x = rng_tensor(Shape::new(1, 1, 8, 8), 400);
            let y = rng_tensor(Shape::new(1, 1, 8, 8), 401);
            let (a, b) = (1.75, -0.5);
            let mixed = Tensor::from_fn(x.shape(), |bb, c, yy, xx| {
                a * x.at(bb, c, yy, xx) + b * y.at(bb, c, yy, xx)
            });
            let bm = dwt2_stacked(&mixed, kind).unwrap();
            let bx = dwt2_stacked(&x, kind).unwrap();
            let by = dwt2_stacked(&y, kind).unwrap();
            for i in 0..bm.numel() {
                let want = a * bx.data()[i] + b * by.data()[i];
                assert!((bm.data()[i] - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn adjoint_identity_holds() {
        // <dwt2(x), y> == <x, idwt2(y)> for orthonormal periodized filters.
        for (ki, kind) in WaveletKind::ALL.into_iter().enumerate() {
            let x = rng_tensor(Shape::new(1, 2, 8, 8), 500 + ki as u64);
            let y = rng_tensor(Shape::new(1, 8, 4, 4), 600 + ki as u64);
            let fx = dwt2_stacked(&x, kind).unwrap();
            let by = idwt2_stacked(&y, kind).unwrap();
            let lhs: f64 = fx.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.data().iter().zip(by.data()).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10, "{kind}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn odd_extents_are_rejected() {
        let x = Tensor::zeros(Shape::new(1, 1, 5, 8));
        assert!(matches!(
            dwt2(&x, WaveletKind::Haar),
            Err(crate::error::Error::Geometry(_))
        ));
        let bands = Tensor::zeros(Shape::new(1, 3, 4, 4));
        assert!(matches!(
            idwt2_stacked(&bands, WaveletKind::Haar),
            Err(crate::error::Error::Shape(_))
        ));
    }

    #[test]
    fn band_shapes_and_parse_round_trip() {
        let x = rng_tensor(Shape::new(1, 3, 16, 12), 700);
        let bands = dwt2(&x, WaveletKind::Sym2).unwrap();
        let half = Shape::new(1, 3, 8, 6);
        for t in [&bands.ll, &bands.lh, &bands.hl, &bands.hh] {
            assert_eq!(t.shape(), half);
        }
        for kind in WaveletKind::ALL {
            assert_eq!(WaveletKind::parse(kind.name()).unwrap(), kind);
        }
        assert!(WaveletKind::parse("haar2").is_err());
    }
}
