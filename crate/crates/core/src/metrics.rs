//! Full-reference image quality: PSNR, UIQI, SCC and pixel-domain VIF.
//!
//! Inputs are `[C, H, W]` tensors on the 0–255 scale; every metric works in
//! 64-bit internally. Multi-channel images are handled per channel and
//! averaged, except SCC which pools all channels into one correlation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regularizers::MAX_INTENSITY;
use crate::tensor::Tensor;

/// Reported instead of +∞ when the two images are identical.
pub const PSNR_IDENTICAL_DB: f64 = 1000.0;

/// Below this a local variance counts as zero in VIF.
const VIF_EPS: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub peak: f64,
    pub uiqi_window: usize,
    pub vif_scales: usize,
    /// Variance of the additive HVS noise, σn².
    pub vif_noise_variance: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            peak: MAX_INTENSITY,
            uiqi_window: 8,
            vif_scales: 4,
            vif_noise_variance: 2.0,
        }
    }
}

/// One channel as `f64`.
struct Plane {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Plane {
    fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.w + x]
    }
}

fn planes(image: &Tensor) -> Result<Vec<Plane>> {
    let (c, h, w) = image.chw()?;
    Ok((0..c)
        .map(|ch| Plane {
            h,
            w,
            data: image.data()[ch * h * w..(ch + 1) * h * w].iter().map(|&v| v as f64).collect(),
        })
        .collect())
}

fn check_pair(reference: &Tensor, distorted: &Tensor, context: &'static str) -> Result<(usize, usize, usize)> {
    reference.same_shape(distorted, context)?;
    reference.chw()
}

/// `10·log10(peak² / MSE)` in decibels; [`PSNR_IDENTICAL_DB`] when MSE is 0.
pub fn psnr(reference: &Tensor, distorted: &Tensor, peak: f64) -> Result<f64> {
    reference.same_shape(distorted, "psnr")?;
    if reference.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let sse: f64 = reference
        .data()
        .iter()
        .zip(distorted.data())
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum();
    if sse == 0.0 {
        return Ok(PSNR_IDENTICAL_DB);
    }
    let mse = sse / reference.len() as f64;
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Universal image quality index, mean over every `window × window` block
/// at stride 1, averaged over channels.
///
/// Blocks where a denominator factor vanishes follow the reference
/// implementation: flat-vs-flat blocks use the luminance term only,
/// zero-mean blocks the structure term only, and blocks where both
/// vanish score 1.
pub fn uiqi(reference: &Tensor, distorted: &Tensor, window: usize) -> Result<f64> {
    let (_, h, w) = check_pair(reference, distorted, "uiqi")?;
    if window == 0 || h < window || w < window {
        return Err(Error::ImageTooSmall { height: h, width: w, min: window.max(1) });
    }
    if reference == distorted {
        return Ok(1.0);
    }
    let (refs, dists) = (planes(reference)?, planes(distorted)?);
    let n = (window * window) as f64;
    let mut total = 0.0;
    for (a, b) in refs.iter().zip(&dists) {
        let mut sum_q = 0.0;
        for y0 in 0..=h - window {
            for x0 in 0..=w - window {
                let (mut sa, mut sb, mut flat_a, mut flat_b) = (0.0, 0.0, true, true);
                let (a00, b00) = (a.at(y0, x0), b.at(y0, x0));
                for y in y0..y0 + window {
                    for x in x0..x0 + window {
                        let (va, vb) = (a.at(y, x), b.at(y, x));
                        sa += va;
                        sb += vb;
                        flat_a &= va == a00;
                        flat_b &= vb == b00;
                    }
                }
                let (ma, mb) = if flat_a && flat_b { (a00, b00) } else { (sa / n, sb / n) };
                let (mut vaa, mut vbb, mut vab) = (0.0, 0.0, 0.0);
                if !(flat_a && flat_b) {
                    for y in y0..y0 + window {
                        for x in x0..x0 + window {
                            let (da, db) = (a.at(y, x) - ma, b.at(y, x) - mb);
                            vaa += da * da;
                            vbb += db * db;
                            vab += da * db;
                        }
                    }
                }
                if flat_a {
                    vaa = 0.0;
                }
                if flat_b {
                    vbb = 0.0;
                }
                let contrast = vaa + vbb;
                let luminance = ma * ma + mb * mb;
                sum_q += match (contrast == 0.0, luminance == 0.0) {
                    (false, false) => 4.0 * vab * ma * mb / (contrast * luminance),
                    (true, false) => 2.0 * ma * mb / luminance,
                    (false, true) => 2.0 * vab / contrast,
                    (true, true) => 1.0,
                };
            }
        }
        total += sum_q / ((h - window + 1) * (w - window + 1)) as f64;
    }
    Ok(total / refs.len() as f64)
}

/// 3×3 Laplacian `[[0,−1,0],[−1,4,−1],[0,−1,0]]`, zero padded, same size.
fn laplacian(p: &Plane) -> Vec<f64> {
    let get = |y: isize, x: isize| {
        if y < 0 || x < 0 || y >= p.h as isize || x >= p.w as isize {
            0.0
        } else {
            p.at(y as usize, x as usize)
        }
    };
    let mut out = Vec::with_capacity(p.h * p.w);
    for y in 0..p.h as isize {
        for x in 0..p.w as isize {
            out.push(4.0 * get(y, x) - get(y - 1, x) - get(y + 1, x) - get(y, x - 1) - get(y, x + 1));
        }
    }
    out
}

/// Spatial correlation coefficient: Pearson correlation of the
/// Laplacian-filtered images, all channels pooled.
pub fn scc(reference: &Tensor, distorted: &Tensor) -> Result<f64> {
    let (_, h, w) = check_pair(reference, distorted, "scc")?;
    if h < 3 || w < 3 {
        return Err(Error::ImageTooSmall { height: h, width: w, min: 3 });
    }
    let filtered = |t: &Tensor| -> Result<Vec<f64>> { Ok(planes(t)?.iter().flat_map(laplacian).collect()) };
    let (a, b) = (filtered(reference)?, filtered(distorted)?);
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut vaa, mut vbb, mut vab) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(&b) {
        let (dx, dy) = (x - ma, y - mb);
        vaa += dx * dx;
        vbb += dy * dy;
        vab += dx * dy;
    }
    if vaa == 0.0 || vbb == 0.0 {
        return Err(Error::ZeroVariance);
    }
    if reference == distorted {
        return Ok(1.0);
    }
    Ok(vab / (vaa * vbb).sqrt())
}

/// Width of the Gaussian window at 0-based `scale` out of `scales`:
/// 17, 9, 5, 3 for four scales.
fn vif_window(scale: usize, scales: usize) -> usize {
    (1 << (scales - scale)) + 1
}

/// Smallest square image the `scales`-scale VIF can handle.
pub fn vif_min_size(scales: usize) -> usize {
    // walk backwards from the coarsest scale, which needs one full window
    let mut need = vif_window(scales - 1, scales);
    for s in (1..scales).rev() {
        // ceil(m/2) ≥ need  ⇔  m ≥ 2·need − 1, plus the valid-mode shrink
        need = 2 * need - 1 + vif_window(s, scales) - 1;
    }
    need.max(vif_window(0, scales))
}

/// Most scales (up to `max_scales`) that fit an `h × w` image.
pub fn vif_scales_for(h: usize, w: usize, max_scales: usize) -> Option<usize> {
    (1..=max_scales).rev().find(|&s| vif_min_size(s) <= h.min(w))
}

/// Normalized separable Gaussian taps of width `n` with σ = n/5.
fn gaussian_taps(n: usize) -> Vec<f64> {
    let sigma = n as f64 / 5.0;
    let c = (n as f64 - 1.0) / 2.0;
    let taps: Vec<f64> = (0..n).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / s).collect()
}

/// Valid-mode separable filtering.
fn filter_valid(p: &Plane, taps: &[f64]) -> Plane {
    let n = taps.len();
    let (oh, ow) = (p.h + 1 - n, p.w + 1 - n);
    let mut rows = vec![0.0; p.h * ow];
    for y in 0..p.h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * p.at(y, x + i)).sum();
        }
    }
    let mut data = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            data[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * rows[(y + i) * ow + x]).sum();
        }
    }
    Plane { h: oh, w: ow, data }
}

fn subsample(p: &Plane) -> Plane {
    let (h, w) = (p.h.div_ceil(2), p.w.div_ceil(2));
    let mut data = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            data.push(p.at(2 * y, 2 * x));
        }
    }
    Plane { h, w, data }
}

fn product(a: &Plane, b: &Plane) -> Plane {
    Plane {
        h: a.h,
        w: a.w,
        data: a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect(),
    }
}

/// Per-channel `(numerator, denominator)` sums of pixel-domain VIF.
fn vif_channel(reference: &Plane, distorted: &Plane, scales: usize, noise_variance: f64) -> (f64, f64) {
    let (mut num, mut den) = (0.0, 0.0);
    let mut r = Plane { h: reference.h, w: reference.w, data: reference.data.clone() };
    let mut d = Plane { h: distorted.h, w: distorted.w, data: distorted.data.clone() };
    for scale in 0..scales {
        let taps = gaussian_taps(vif_window(scale, scales));
        if scale > 0 {
            r = subsample(&filter_valid(&r, &taps));
            d = subsample(&filter_valid(&d, &taps));
        }
        let mu_r = filter_valid(&r, &taps);
        let mu_d = filter_valid(&d, &taps);
        let rr = filter_valid(&product(&r, &r), &taps);
        let dd = filter_valid(&product(&d, &d), &taps);
        let rd = filter_valid(&product(&r, &d), &taps);
        for i in 0..mu_r.data.len() {
            let (mr, md) = (mu_r.data[i], mu_d.data[i]);
            let mut s_r = (rr.data[i] - mr * mr).max(0.0);
            let s_d = (dd.data[i] - md * md).max(0.0);
            let s_rd = rd.data[i] - mr * md;
            let mut g = s_rd / (s_r + VIF_EPS);
            let mut sv = s_d - g * s_rd;
            if s_r < VIF_EPS {
                g = 0.0;
                sv = s_d;
                s_r = 0.0;
            }
            if s_d < VIF_EPS {
                g = 0.0;
                sv = 0.0;
            }
            if g < 0.0 {
                sv = s_d;
                g = 0.0;
            }
            sv = sv.max(VIF_EPS);
            num += (1.0 + g * g * s_r / (sv + noise_variance)).log2();
            den += (1.0 + s_r / noise_variance).log2();
        }
    }
    (num, den)
}

/// Pixel-domain visual information fidelity with the default four scales
/// and σn² = 2.
pub fn vif(reference: &Tensor, distorted: &Tensor) -> Result<f64> {
    let c = MetricConfig::default();
    vif_with(reference, distorted, c.vif_scales, c.vif_noise_variance)
}

/// Pixel-domain VIF, averaged over channels. A channel whose reference
/// carries no information (zero denominator) scores 1.
pub fn vif_with(reference: &Tensor, distorted: &Tensor, scales: usize, noise_variance: f64) -> Result<f64> {
    let (_, h, w) = check_pair(reference, distorted, "vif")?;
    if scales == 0 || noise_variance.is_nan() || noise_variance <= 0.0 {
        return Err(Error::InvalidConfig("vif needs at least one scale and positive noise variance".into()));
    }
    let min = vif_min_size(scales);
    if h < min || w < min {
        return Err(Error::ImageTooSmall { height: h, width: w, min });
    }
    if reference == distorted {
        return Ok(1.0);
    }
    let (refs, dists) = (planes(reference)?, planes(distorted)?);
    let total: f64 = refs
        .iter()
        .zip(&dists)
        .map(|(r, d)| {
            let (num, den) = vif_channel(r, d, scales, noise_variance);
            if den == 0.0 {
                1.0
            } else {
                num / den
            }
        })
        .sum();
    Ok(total / refs.len() as f64)
}

/// All four metrics for one (original, adversarial) pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub psnr: f64,
    pub uiqi: f64,
    pub scc: f64,
    /// `None` when the image is too small for even one VIF scale.
    pub vif: Option<f64>,
    pub vif_scales: usize,
}

impl QualityReport {
    /// Clamps both images to the display range, then evaluates every metric.
    /// VIF uses as many of the configured scales as the image size allows.
    pub fn compute(reference: &Tensor, distorted: &Tensor, config: &MetricConfig) -> Result<Self> {
        let (_, h, w) = check_pair(reference, distorted, "quality report")?;
        let r = reference.clamp(0.0, MAX_INTENSITY as f32);
        let d = distorted.clamp(0.0, MAX_INTENSITY as f32);
        let scales = vif_scales_for(h, w, config.vif_scales).unwrap_or(0);
        Ok(Self {
            psnr: psnr(&r, &d, config.peak)?,
            uiqi: uiqi(&r, &d, config.uiqi_window)?,
            scc: scc(&r, &d)?,
            vif: if scales > 0 {
                Some(vif_with(&r, &d, scales, config.vif_noise_variance)?)
            } else {
                None
            },
            vif_scales: scales,
        })
    }

    /// Column-wise mean; VIF averages over the pairs that have it.
    pub fn mean(reports: &[QualityReport]) -> Option<QualityReport> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        let vifs: Vec<f64> = reports.iter().filter_map(|r| r.vif).collect();
        Some(QualityReport {
            psnr: reports.iter().map(|r| r.psnr).sum::<f64>() / n,
            uiqi: reports.iter().map(|r| r.uiqi).sum::<f64>() / n,
            scc: reports.iter().map(|r| r.scc).sum::<f64>() / n,
            vif: (!vifs.is_empty()).then(|| vifs.iter().sum::<f64>() / vifs.len() as f64),
            vif_scales: reports.iter().map(|r| r.vif_scales).min().unwrap_or(0),
        })
    }
}
