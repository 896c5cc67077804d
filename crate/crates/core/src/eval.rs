//! Signal-level (PSNR) and detection-level (OLS, AP, mAP) evaluation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::catalog::{Annotation, ClassCatalog};
use crate::error::{Error, Result};
use crate::geometry::RadarGeometry;
use crate::grid::Grid;
use crate::maps::RAMap;

/// OLS thresholds 0.50, 0.55, …, 0.90.
pub const OLS_THRESHOLDS: [f64; 9] = [0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub range: f64,
    pub azimuth: f64,
    pub class_id: usize,
    pub score: f64,
}

impl Detection {
    pub fn from_annotation(a: &Annotation, score: f64) -> Self {
        Detection {
            range: a.range,
            azimuth: a.azimuth,
            class_id: a.class_id,
            score,
        }
    }
}

/// `10·log10(A² / MSE)` in dB; identical grids give `+∞`.
pub fn psnr_grid(x: &Grid, x_hat: &Grid, a_max: f64) -> Result<f64> {
    x.check_shape(x_hat)?;
    let mse = x
        .as_slice()
        .iter()
        .zip(x_hat.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / x.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (a_max * a_max / mse).log10())
}

pub fn psnr(x: &RAMap, x_hat: &RAMap, a_max: f64) -> Result<f64> {
    if !x.geometry().matches(x_hat.geometry()) {
        return Err(Error::Shape("PSNR between maps of different geometry".into()));
    }
    psnr_grid(x.grid(), x_hat.grid(), a_max)
}

fn cartesian(range: f64, azimuth: f64) -> (f64, f64) {
    (range * azimuth.sin(), range * azimuth.cos())
}

/// Object location similarity `exp(−Δd² / (2(r·κ)²))`, with `Δd` the
/// Cartesian distance in meters and `r` the ground-truth range.
pub fn ols_polar(pred: (f64, f64), gt: (f64, f64), kappa: f64) -> Result<f64> {
    let r = gt.0;
    if !(r > 0.0) {
        return Err(Error::domain("range", r, "(0, inf)"));
    }
    let (px, py) = cartesian(pred.0, pred.1);
    let (gx, gy) = cartesian(gt.0, gt.1);
    let d2 = (px - gx).powi(2) + (py - gy).powi(2);
    let s = r * kappa;
    Ok((-d2 / (2.0 * s * s)).exp())
}

pub fn ols(pred: &Detection, gt: &Annotation, kappa: f64) -> Result<f64> {
    ols_polar((pred.range, pred.azimuth), (gt.range, gt.azimuth), kappa)
}

/// Strict 3×3 local maxima with value `≥ min_score`, at bin centers, best
/// first. Within a plateau the earliest cell in scan order wins.
pub fn extract_peaks(
    map: &Grid,
    geometry: &RadarGeometry,
    class_id: usize,
    min_score: f64,
    max_peaks: usize,
) -> Vec<Detection> {
    let (rows, cols) = map.shape();
    let mut peaks = Vec::new();
    for i in 0..rows {
        for j in 0..cols {
            let v = map.get(i, j);
            if !(v > 0.0 && v >= min_score) {
                continue;
            }
            let mut is_peak = true;
            'nb: for di in -1isize..=1 {
                for dj in -1isize..=1 {
                    if di == 0 && dj == 0 {
                        continue;
                    }
                    let (ni, nj) = (i as isize + di, j as isize + dj);
                    if ni < 0 || nj < 0 || ni >= rows as isize || nj >= cols as isize {
                        continue;
                    }
                    let n = map.get(ni as usize, nj as usize);
                    let earlier = (ni, nj) < (i as isize, j as isize);
                    if n > v || (n == v && earlier) {
                        is_peak = false;
                        break 'nb;
                    }
                }
            }
            if is_peak {
                peaks.push(Detection {
                    range: geometry.range_center(i),
                    azimuth: geometry.azimuth_center(j),
                    class_id,
                    score: v.min(1.0),
                });
            }
        }
    }
    peaks.sort_by(|a, b| b.score.total_cmp(&a.score));
    peaks.truncate(max_peaks);
    peaks
}

fn score_order(dets: &[Detection]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..dets.len()).collect();
    idx.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    idx
}

/// Greedy suppression: keep the best remaining detection and drop every
/// same-class detection whose OLS against it reaches `threshold`.
pub fn nms(detections: &[Detection], threshold: f64, catalog: &ClassCatalog) -> Result<Vec<Detection>> {
    let mut kept: Vec<Detection> = Vec::new();
    for k in score_order(detections) {
        let d = detections[k];
        let kappa = catalog.spec(d.class_id)?.ols_kappa;
        let mut suppressed = false;
        for keep in kept.iter().filter(|keep| keep.class_id == d.class_id) {
            if ols_polar((d.range, d.azimuth), (keep.range, keep.azimuth), kappa)? >= threshold {
                suppressed = true;
                break;
            }
        }
        if !suppressed {
            kept.push(d);
        }
    }
    Ok(kept)
}

/// Average precision of one class at one OLS threshold over a set of frames.
///
/// Returns `None` when the class has neither ground truths nor predictions.
pub fn average_precision(
    preds: &[Vec<Detection>],
    gts: &[Vec<Annotation>],
    class_id: usize,
    tau: f64,
    kappa: f64,
) -> Result<Option<f64>> {
    if preds.len() != gts.len() {
        return Err(Error::Shape(format!(
            "{} prediction frames vs {} ground-truth frames",
            preds.len(),
            gts.len()
        )));
    }
    let n_gt: usize = gts
        .iter()
        .map(|f| f.iter().filter(|g| g.class_id == class_id).count())
        .sum();
    let mut ranked: Vec<(usize, Detection)> = preds
        .iter()
        .enumerate()
        .flat_map(|(f, ds)| ds.iter().filter(|d| d.class_id == class_id).map(move |d| (f, *d)))
        .collect();
    if n_gt == 0 {
        return Ok(if ranked.is_empty() { None } else { Some(0.0) });
    }
    ranked.sort_by(|a, b| b.1.score.total_cmp(&a.1.score));

    let mut matched: Vec<Vec<bool>> = gts.iter().map(|f| vec![false; f.len()]).collect();
    let mut tp_flags = Vec::with_capacity(ranked.len());
    for (f, d) in &ranked {
        let mut best: Option<(usize, f64)> = None;
        for (g_idx, g) in gts[*f].iter().enumerate() {
            if g.class_id != class_id || matched[*f][g_idx] {
                continue;
            }
            let s = ols(d, g, kappa)?;
            if best.map_or(true, |(_, b)| s > b) {
                best = Some((g_idx, s));
            }
        }
        match best {
            Some((g_idx, s)) if s >= tau => {
                matched[*f][g_idx] = true;
                tp_flags.push(true);
            }
            _ => tp_flags.push(false),
        }
    }

    let mut precision = Vec::with_capacity(tp_flags.len());
    let mut recall = Vec::with_capacity(tp_flags.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for &hit in &tp_flags {
        if hit {
            tp += 1;
        } else {
            fp += 1;
        }
        precision.push(tp as f64 / (tp + fp) as f64);
        recall.push(tp as f64 / n_gt as f64);
    }
    // monotone envelope from the right
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let mut ap = 0.0;
    let mut last_recall = 0.0;
    for (p, r) in precision.iter().zip(&recall) {
        ap += (r - last_recall) * p;
        last_recall = *r;
    }
    Ok(Some(ap))
}

/// Ground truth, predictions and optional PSNR of one evaluated frame.
#[derive(Debug, Clone, Default)]
pub struct FrameResult {
    pub scene: String,
    pub gts: Vec<Annotation>,
    pub preds: Vec<Detection>,
    pub psnr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassAp {
    pub class: String,
    /// One entry per [`OLS_THRESHOLDS`]; `None` when the class is excluded.
    pub ap: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PsnrStats {
    pub count: usize,
    pub mean: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

impl PsnrStats {
    fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return PsnrStats::default();
        }
        PsnrStats {
            count: values.len(),
            mean: Some(values.iter().sum::<f64>() / values.len() as f64),
            min: values.iter().copied().reduce(f64::min),
            max: values.iter().copied().reduce(f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneReport {
    pub scene: String,
    pub frames: usize,
    pub classes: Vec<ClassAp>,
    /// Mean AP over included classes and all thresholds.
    pub map: Option<f64>,
    /// Mean AP over included classes at OLS 0.5.
    pub ap50: Option<f64>,
    pub psnr: PsnrStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub scenes: Vec<SceneReport>,
    pub overall: SceneReport,
}

fn scene_report(name: &str, frames: &[&FrameResult], catalog: &ClassCatalog) -> Result<SceneReport> {
    let preds: Vec<Vec<Detection>> = frames.iter().map(|f| f.preds.clone()).collect();
    let gts: Vec<Vec<Annotation>> = frames.iter().map(|f| f.gts.clone()).collect();
    let mut classes = Vec::with_capacity(catalog.len());
    let (mut sum, mut n) = (0.0, 0usize);
    let (mut sum50, mut n50) = (0.0, 0usize);
    for (c, spec) in catalog.iter().enumerate() {
        let mut ap = Vec::with_capacity(OLS_THRESHOLDS.len());
        for (k, &tau) in OLS_THRESHOLDS.iter().enumerate() {
            let v = average_precision(&preds, &gts, c, tau, spec.ols_kappa)?;
            if let Some(v) = v {
                sum += v;
                n += 1;
                if k == 0 {
                    sum50 += v;
                    n50 += 1;
                }
            }
            ap.push(v);
        }
        classes.push(ClassAp { class: spec.name.clone(), ap });
    }
    let psnrs: Vec<f64> = frames.iter().filter_map(|f| f.psnr).collect();
    Ok(SceneReport {
        scene: name.to_string(),
        frames: frames.len(),
        classes,
        map: (n > 0).then(|| sum / n as f64),
        ap50: (n50 > 0).then(|| sum50 / n50 as f64),
        psnr: PsnrStats::of(&psnrs),
    })
}

/// Per-scene reports (scene names sorted) plus a pooled `overall` report.
pub fn evaluate(frames: &[FrameResult], catalog: &ClassCatalog) -> Result<EvalReport> {
    let mut by_scene: BTreeMap<&str, Vec<&FrameResult>> = BTreeMap::new();
    for f in frames {
        by_scene.entry(f.scene.as_str()).or_default().push(f);
    }
    let scenes = by_scene
        .iter()
        .map(|(name, fs)| scene_report(name, fs, catalog))
        .collect::<Result<Vec<_>>>()?;
    let all: Vec<&FrameResult> = frames.iter().collect();
    Ok(EvalReport {
        scenes,
        overall: scene_report("overall", &all, catalog)?,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v}"),
        None => "-".to_string(),
    }
}

fn fmt_pct(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{:.2}", 100.0 * v),
        None => "-".to_string(),
    }
}

fn fmt_db(v: Option<f64>) -> String {
    match v {
        Some(v) if v.is_infinite() => "inf".to_string(),
        Some(v) => format!("{v:.2}"),
        None => "-".to_string(),
    }
}

impl EvalReport {
    pub fn rows(&self) -> impl Iterator<Item = &SceneReport> {
        self.scenes.iter().chain(std::iter::once(&self.overall))
    }

    /// Aligned text table: one row per scene plus the pooled row.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<16} {:>7} {:>9} {:>11} {:>10}",
            "scene", "frames", "mAP(%)", "AP@0.5(%)", "PSNR(dB)"
        );
        for r in self.rows() {
            let _ = writeln!(
                s,
                "{:<16} {:>7} {:>9} {:>11} {:>10}",
                r.scene,
                r.frames,
                fmt_pct(r.map),
                fmt_pct(r.ap50),
                fmt_db(r.psnr.mean)
            );
        }
        let _ = writeln!(s);
        let mut header = format!("{:<16} {:<12}", "scene", "class");
        for t in OLS_THRESHOLDS {
            let _ = write!(header, " {:>6}", format!("{t:.2}"));
        }
        let _ = writeln!(s, "{header}");
        for r in self.rows() {
            for c in &r.classes {
                let mut line = format!("{:<16} {:<12}", r.scene, c.class);
                for v in &c.ap {
                    let _ = write!(line, " {:>6}", fmt_pct(*v));
                }
                let _ = writeln!(s, "{line}");
            }
        }
        s
    }

    /// `scene,class,tau,ap` rows, then `mAP`, `AP@0.5` and PSNR summaries.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("scene,class,tau,ap\n");
        for r in self.rows() {
            for c in &r.classes {
                for (t, v) in OLS_THRESHOLDS.iter().zip(&c.ap) {
                    let _ = writeln!(s, "{},{},{t:.2},{}", r.scene, c.class, fmt_opt(*v));
                }
            }
            let _ = writeln!(s, "{},all,mAP,{}", r.scene, fmt_opt(r.map));
            let _ = writeln!(s, "{},all,AP@0.5,{}", r.scene, fmt_opt(r.ap50));
            let _ = writeln!(s, "{},psnr,mean,{}", r.scene, fmt_opt(r.psnr.mean));
            let _ = writeln!(s, "{},psnr,min,{}", r.scene, fmt_opt(r.psnr.min));
            let _ = writeln!(s, "{},psnr,max,{}", r.scene, fmt_opt(r.psnr.max));
        }
        s
    }
}

/// Parses [`EvalReport::to_csv`] output into `(scene, class, tau) → value`.
pub fn parse_report_csv(text: &str) -> Result<BTreeMap<(String, String, String), Option<f64>>> {
    let mut out = BTreeMap::new();
    let mut lines = text.lines();
    if lines.next() != Some("scene,class,tau,ap") {
        return Err(Error::Format("missing report header".into()));
    }
    for (n, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(Error::Format(format!("report line {}: {line:?}", n + 2)));
        }
        let v = if f[3] == "-" {
            None
        } else {
            Some(f[3].parse::<f64>().map_err(|_| {
                Error::Format(format!("report line {}: bad value {:?}", n + 2, f[3]))
            })?)
        };
        out.insert((f[0].to_string(), f[1].to_string(), f[2].to_string()), v);
    }
    Ok(out)
}
