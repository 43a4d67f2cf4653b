use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{contour_mae, hausdorff, iou, mae, melt_pool_dimensions, r_squared, MeltPoolDimensions};
use crate::error::{Error, Result};
use crate::geometry::{extract_iso_contour, sdf_to_mask, MeltPoolContour, SdfGrid};
use crate::ingest::ProcessParams;

/// Metrics of one predicted cross-section against its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub sample_id: String,
    pub power_w: f64,
    pub velocity_m_s: f64,
    pub iou: f64,
    /// All zero when the prediction contains no melt pool.
    pub pred: MeltPoolDimensions,
    pub gt: MeltPoolDimensions,
    pub contour_mae_um: Option<f64>,
    pub hausdorff_um: Option<f64>,
    #[serde(default)]
    pub intersection_distance_um: Option<f64>,
}

/// Scores a predicted signed-distance image. IoU compares the rasterized
/// masks; the contour metrics use the zero level set of the prediction and the
/// exact ground-truth contour.
pub fn evaluate_prediction(
    sample_id: impl Into<String>,
    params: &ProcessParams,
    pred: &SdfGrid,
    gt: &SdfGrid,
    gt_contour: &MeltPoolContour,
) -> Result<SampleMetrics> {
    let iou = iou(&sdf_to_mask(pred), &sdf_to_mask(gt))?;
    let gt_dims = melt_pool_dimensions(gt_contour)?;
    let (pred_dims, cmae, hd) = match extract_iso_contour(pred, 0.0) {
        Ok(c) => (
            melt_pool_dimensions(&c)?,
            Some(contour_mae(&c, gt_contour)?),
            Some(hausdorff(&c, gt_contour)?),
        ),
        Err(Error::NoContour { .. }) => (MeltPoolDimensions::default(), None, None),
        Err(e) => return Err(e),
    };
    Ok(SampleMetrics {
        sample_id: sample_id.into(),
        power_w: params.power_w,
        velocity_m_s: params.velocity_m_s,
        iou,
        pred: pred_dims,
        gt: gt_dims,
        contour_mae_um: cmae,
        hausdorff_um: hd,
        intersection_distance_um: None,
    })
}

/// Dataset-level summary. Correlations are `None` when undefined (fewer than
/// two samples or a constant series).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub n: usize,
    pub pearson_r2_area: Option<f64>,
    pub pearson_r2_depth: Option<f64>,
    pub pearson_r2_width: Option<f64>,
    pub mae_area_um2: f64,
    pub mae_depth_um: f64,
    pub mae_width_um: f64,
    pub mean_iou: f64,
    pub std_iou: f64,
    pub mean_contour_mae_um: Option<f64>,
    pub mean_hausdorff_um: Option<f64>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Sample standard deviation; zero for fewer than two values.
pub(crate) fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

fn optional_r2(a: &[f64], b: &[f64]) -> Result<Option<f64>> {
    match r_squared(a, b) {
        Ok(r) => Ok(Some(r)),
        Err(Error::UndefinedCorrelation) | Err(Error::Validation(_)) if a.len() == b.len() => Ok(None),
        Err(e) => Err(e),
    }
}

impl Aggregates {
    pub fn from_samples(samples: &[SampleMetrics]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::validation("no samples to aggregate"));
        }
        let col = |f: &dyn Fn(&SampleMetrics) -> f64| samples.iter().map(f).collect::<Vec<f64>>();
        let (pa, ga) = (col(&|s| s.pred.area_um2), col(&|s| s.gt.area_um2));
        let (pd, gd) = (col(&|s| s.pred.depth_um), col(&|s| s.gt.depth_um));
        let (pw, gw) = (col(&|s| s.pred.width_um), col(&|s| s.gt.width_um));
        let ious = col(&|s| s.iou);
        let cm: Vec<f64> = samples.iter().filter_map(|s| s.contour_mae_um).collect();
        let hd: Vec<f64> = samples.iter().filter_map(|s| s.hausdorff_um).collect();
        Ok(Self {
            n: samples.len(),
            pearson_r2_area: optional_r2(&ga, &pa)?,
            pearson_r2_depth: optional_r2(&gd, &pd)?,
            pearson_r2_width: optional_r2(&gw, &pw)?,
            mae_area_um2: mae(&ga, &pa)?,
            mae_depth_um: mae(&gd, &pd)?,
            mae_width_um: mae(&gw, &pw)?,
            mean_iou: mean(&ious).unwrap_or(0.0),
            std_iou: std_dev(&ious),
            mean_contour_mae_um: mean(&cm),
            mean_hausdorff_um: mean(&hd),
        })
    }
}

/// Per-sample metrics plus their summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub aggregates: Aggregates,
    pub samples: Vec<SampleMetrics>,
}

impl MetricsReport {
    pub fn from_samples(samples: Vec<SampleMetrics>) -> Result<Self> {
        Ok(Self {
            aggregates: Aggregates::from_samples(&samples)?,
            samples,
        })
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        crate::ingest::write_json(path, self)
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per sample; missing values are empty cells.
pub fn write_samples_csv(path: &Path, samples: &[SampleMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "sample_id",
        "power_w",
        "velocity_m_s",
        "iou",
        "pred_depth_um",
        "pred_width_um",
        "pred_area_um2",
        "gt_depth_um",
        "gt_width_um",
        "gt_area_um2",
        "contour_mae_um",
        "hausdorff_um",
        "intersection_distance_um",
    ])?;
    for s in samples {
        w.write_record([
            s.sample_id.clone(),
            s.power_w.to_string(),
            s.velocity_m_s.to_string(),
            s.iou.to_string(),
            s.pred.depth_um.to_string(),
            s.pred.width_um.to_string(),
            s.pred.area_um2.to_string(),
            s.gt.depth_um.to_string(),
            s.gt.width_um.to_string(),
            s.gt.area_um2.to_string(),
            opt(s.contour_mae_um),
            opt(s.hausdorff_um),
            opt(s.intersection_distance_um),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(a: f64, p: f64, iou: f64) -> SampleMetrics {
        let dims = |x: f64| MeltPoolDimensions {
            depth_um: x,
            width_um: 2.0 * x,
            area_um2: x * x,
        };
        SampleMetrics {
            sample_id: format!("s{a}"),
            power_w: 100.0,
            velocity_m_s: 1.0,
            iou,
            pred: dims(p),
            gt: dims(a),
            contour_mae_um: Some((a - p).abs()),
            hausdorff_um: None,
            intersection_distance_um: None,
        }
    }

    #[test]
    fn aggregates_and_undefined_correlation() {
        let s = vec![sample(10.0, 11.0, 0.8), sample(20.0, 19.0, 0.9), sample(30.0, 30.0, 1.0)];
        let a = Aggregates::from_samples(&s).unwrap();
        assert_eq!(a.n, 3);
        assert!((a.mean_iou - 0.9).abs() < 1e-12);
        assert!((a.mae_depth_um - 2.0 / 3.0).abs() < 1e-12);
        assert!(a.pearson_r2_depth.unwrap() > 0.98);
        assert_eq!(a.mean_hausdorff_um, None);
        let one = Aggregates::from_samples(&s[..1]).unwrap();
        assert_eq!(one.pearson_r2_area, None);
    }

    #[test]
    fn csv_has_one_row_per_sample() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        write_samples_csv(&path, &[sample(1.0, 2.0, 0.5), sample(2.0, 2.0, 1.0)]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().nth(1).unwrap().ends_with(",1,,"));
    }
}
