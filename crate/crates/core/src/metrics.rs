//! Image quality metrics.
//!
//! SSIM follows the common reference defaults: a uniform 7 x 7 window, sample
//! (N - 1) covariance normalisation, `C₁ = (0.01 L)²`, `C₂ = (0.03 L)²` with `L`
//! the data range of the reference, averaged over all fully contained windows.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::Image;

pub const SSIM_WINDOW: usize = 7;

fn check_shapes(a: &Image, b: &Image) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::invalid(format!(
            "image shapes differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB; `+∞` when the images are identical.
pub fn psnr(image: &Image, reference: &Image, max_value: f64) -> Result<f64> {
    check_shapes(image, reference)?;
    if !(max_value.is_finite() && max_value > 0.0) {
        return Err(Error::invalid(format!(
            "max value must be positive, got {max_value}"
        )));
    }
    let n = image.values().len() as f64;
    let mse = image
        .values()
        .iter()
        .zip(reference.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (max_value * max_value / mse).log10())
}

/// Data range used for a reference image; constant references fall back to 1.
pub fn data_range(reference: &Image) -> f64 {
    let r = reference.value_range();
    if r > 0.0 {
        r
    } else {
        1.0
    }
}

/// Summed-area table with a zero first row and column.
struct Integral {
    width: usize,
    sums: Vec<f64>,
}

impl Integral {
    fn new(height: usize, width: usize, value: impl Fn(usize) -> f64) -> Self {
        let stride = width + 1;
        let mut sums = vec![0.0; (height + 1) * stride];
        for r in 0..height {
            let mut row_sum = 0.0;
            for c in 0..width {
                row_sum += value(r * width + c);
                sums[(r + 1) * stride + c + 1] = sums[r * stride + c + 1] + row_sum;
            }
        }
        Integral { width, sums }
    }

    fn window(&self, r: usize, c: usize, size: usize) -> f64 {
        let s = self.width + 1;
        let (r1, c1) = (r + size, c + size);
        self.sums[r1 * s + c1] - self.sums[r * s + c1] - self.sums[r1 * s + c]
            + self.sums[r * s + c]
    }
}

/// Mean structural similarity over all 7 x 7 windows.
pub fn ssim(image: &Image, reference: &Image) -> Result<f64> {
    check_shapes(image, reference)?;
    let (h, w) = image.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let l = data_range(reference);
    let c1 = (0.01 * l) * (0.01 * l);
    let c2 = (0.03 * l) * (0.03 * l);

    let x = image.values();
    let y = reference.values();
    let sx = Integral::new(h, w, |i| x[i]);
    let sy = Integral::new(h, w, |i| y[i]);
    let sxx = Integral::new(h, w, |i| x[i] * x[i]);
    let syy = Integral::new(h, w, |i| y[i] * y[i]);
    let sxy = Integral::new(h, w, |i| x[i] * y[i]);

    let np = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let cov_norm = np / (np - 1.0);
    let mut total = 0.0;
    let mut count = 0usize;
    for r in 0..=h - SSIM_WINDOW {
        for c in 0..=w - SSIM_WINDOW {
            let ux = sx.window(r, c, SSIM_WINDOW) / np;
            let uy = sy.window(r, c, SSIM_WINDOW) / np;
            let uxx = sxx.window(r, c, SSIM_WINDOW) / np;
            let uyy = syy.window(r, c, SSIM_WINDOW) / np;
            let uxy = sxy.window(r, c, SSIM_WINDOW) / np;
            let vx = cov_norm * (uxx - ux * ux);
            let vy = cov_norm * (uyy - uy * uy);
            let vxy = cov_norm * (uxy - ux * uy);
            let num = (2.0 * (ux * uy) + c1) * (2.0 * vxy + c2);
            let den = (ux * ux + uy * uy + c1) * (vx + vy + c2);
            total += num / den;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ItemMetrics {
    pub item: usize,
    /// `+∞` for an exact match.
    pub psnr_db: f64,
    pub ssim: f64,
    /// Peak value used for PSNR (the reference's data range).
    pub max_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub items: Vec<ItemMetrics>,
    /// Mean PSNR over items with a finite value; `None` if every item matched exactly.
    pub mean_psnr_db: Option<f64>,
    /// Number of items whose PSNR was infinite and excluded from the mean.
    pub infinite_psnr_count: usize,
    pub mean_ssim: f64,
}

impl MetricReport {
    /// `item,psnr_db,ssim` rows; infinite PSNR is written as `inf`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("item,psnr_db,ssim\n");
        for it in &self.items {
            let p = if it.psnr_db.is_finite() {
                format!("{}", it.psnr_db)
            } else {
                "inf".to_string()
            };
            out.push_str(&format!("{},{},{}\n", it.item, p, it.ssim));
        }
        out
    }

    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "items": self.items.iter().map(|it| serde_json::json!({
                "item": it.item,
                "psnr_db": it.psnr_db.is_finite().then_some(it.psnr_db),
                "psnr_infinite": !it.psnr_db.is_finite(),
                "ssim": it.ssim,
                "max_value": it.max_value,
            })).collect::<Vec<_>>(),
            "mean_psnr_db": self.mean_psnr_db,
            "infinite_psnr_count": self.infinite_psnr_count,
            "mean_ssim": self.mean_ssim,
            "count": self.items.len(),
        })
    }
}

/// Per-pair metrics and their means; pairs are `(reconstruction, reference)`.
pub fn dataset_metrics(pairs: &[(Image, Image)]) -> Result<MetricReport> {
    if pairs.is_empty() {
        return Err(Error::invalid("no image pairs to evaluate"));
    }
    let items = pairs
        .iter()
        .enumerate()
        .map(|(item, (img, reference))| {
            let max_value = data_range(reference);
            Ok(ItemMetrics {
                item,
                psnr_db: psnr(img, reference, max_value)?,
                ssim: ssim(img, reference)?,
                max_value,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let finite: Vec<f64> = items
        .iter()
        .map(|i| i.psnr_db)
        .filter(|p| p.is_finite())
        .collect();
    let mean_psnr_db =
        (!finite.is_empty()).then(|| finite.iter().sum::<f64>() / finite.len() as f64);
    let mean_ssim = items.iter().map(|i| i.ssim).sum::<f64>() / items.len() as f64;
    Ok(MetricReport {
        infinite_psnr_count: items.len() - finite.len(),
        items,
        mean_psnr_db,
        mean_ssim,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> Image {
        Image::new(h, w, (0..h * w).map(|i| f(i / w, i % w)).collect()).unwrap()
    }

    #[test]
    fn identical_images() {
        let a = img(12, 9, |r, c| ((r * 31 + c * 17) % 11) as f64 / 10.0);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn constant_offset_psnr() {
        let r = img(4, 4, |_, _| 0.0);
        let a = img(4, 4, |_, _| 0.1);
        assert!((psnr(&a, &r, 1.0).unwrap() - 20.0).abs() < 1e-12);
    }

    #[test]
    fn shifted_image_loses_luminance_similarity() {
        let r = img(10, 10, |r, c| ((r * 7 + c * 3) % 5) as f64 / 4.0);
        let a = img(10, 10, |r, c| ((r * 7 + c * 3) % 5) as f64 / 4.0 + 0.3);
        let s = ssim(&a, &r).unwrap();
        assert!(s < 1.0 && s > 0.0);
    }

    #[test]
    fn small_or_mismatched_rejected() {
        let a = img(6, 10, |_, _| 0.0);
        assert!(ssim(&a, &a).is_err());
        let b = img(10, 6, |_, _| 0.0);
        assert!(psnr(&a, &b, 1.0).is_err());
        assert!(psnr(&a, &a, 0.0).is_err());
    }

    #[test]
    fn dataset_means() {
        let r = img(8, 8, |r, c| ((r + c) % 2) as f64);
        let a = img(8, 8, |r, c| ((r + c) % 2) as f64 + 0.1);
        let single = dataset_metrics(&[(a.clone(), r.clone())]).unwrap();
        assert_eq!(single.mean_psnr_db, Some(single.items[0].psnr_db));
        assert_eq!(single.mean_ssim, single.items[0].ssim);
        assert!(dataset_metrics(&[]).is_err());

        let both = dataset_metrics(&[(a.clone(), r.clone()), (r.clone(), r.clone())]).unwrap();
        assert_eq!(both.infinite_psnr_count, 1);
        assert_eq!(both.mean_psnr_db, Some(single.items[0].psnr_db));
        assert!(both.to_csv().contains("1,inf,1"));
        assert_eq!(both.summary_json()["items"][1]["psnr_infinite"], true);
    }

    #[test]
    fn mean_of_ten_and_thirty() {
        // MSE 0.1 -> 10 dB, MSE 0.001 -> 30 dB with unit range
        let r = img(8, 8, |r, c| ((r + c) % 2) as f64);
        let shift = |d: f64| img(8, 8, move |rr, cc| ((rr + cc) % 2) as f64 + d);
        let rep = dataset_metrics(&[
            (shift(0.1f64.sqrt()), r.clone()),
            (shift(0.001f64.sqrt()), r),
        ])
        .unwrap();
        assert!((rep.items[0].psnr_db - 10.0).abs() < 1e-9);
        assert!((rep.items[1].psnr_db - 30.0).abs() < 1e-9);
        assert!((rep.mean_psnr_db.unwrap() - 20.0).abs() < 1e-9);
    }
}
