use std::path::Path;

use lumitex_geometry::Image;
use serde::{Deserialize, Serialize};

use crate::error::{RelightError, Result};

/// `10 log10(1 / mse)` for images in `[0, 1]`; identical images give
/// `f64::INFINITY`.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(RelightError::Shape(format!(
            "psnr of {}x{}x{} and {}x{}x{}",
            a.width, a.height, a.channels, b.width, b.height, b.channels
        )));
    }
    psnr_slices(&a.data, &b.data)
}

/// PSNR over the pixels where `mask` (one channel) is set.
pub fn psnr_masked(a: &Image, b: &Image, mask: &Image) -> Result<f64> {
    if !a.same_shape(b) || mask.width != a.width || mask.height != a.height || mask.channels != 1 {
        return Err(RelightError::Shape("psnr_masked: image or mask shapes differ".into()));
    }
    let c = a.channels;
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (i, &m) in mask.data.iter().enumerate() {
        if m > 0.5 {
            xs.extend_from_slice(&a.data[i * c..(i + 1) * c]);
            ys.extend_from_slice(&b.data[i * c..(i + 1) * c]);
        }
    }
    psnr_slices(&xs, &ys)
}

pub fn psnr_slices(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(RelightError::Shape(format!("psnr over {} and {} values", a.len(), b.len())));
    }
    let mse = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { 10.0 * (1.0 / mse).log10() })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub view: usize,
    pub psnr: f64,
}

/// CSV with header `view,psnr`; an infinite PSNR is written as `inf`.
pub fn write_metrics_csv(path: impl AsRef<Path>, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|source| RelightError::Io {
        path: path.as_ref().into(),
        source,
    })
}

pub fn read_metrics_csv(path: impl AsRef<Path>) -> Result<Vec<MetricRow>> {
    let mut r = csv::Reader::from_path(path.as_ref())?;
    r.deserialize().map(|row| row.map_err(RelightError::from)).collect()
}
