//! Precision/recall with tolerance-based correspondence and best F-measure.
//!
//! Predicted and ground-truth positives are paired one-to-one, greedily in
//! increasing distance, when within the tolerance. Counts are summed over
//! the whole dataset before precision and recall are computed, for each
//! threshold of a uniform sweep; the best F over the sweep is reported.

use std::fmt::Write as _;

use crate::config::{parse_value, unknown_key, Section};
use crate::error::{Result, SrnError};
use crate::image::{BinaryMap, ResponseMap};
use crate::postprocess::{binarize, nms_with_radius, MIN_COHERENCE};

/// Default tolerance as a fraction of the image diagonal.
pub const DEFAULT_TOLERANCE_FRAC: f64 = 0.0075;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub tolerance_frac: f64,
    /// Absolute tolerance in pixels; overrides `tolerance_frac` when set.
    pub tolerance_px: Option<f64>,
    pub thresholds: usize,
    pub nms_radius: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            tolerance_frac: DEFAULT_TOLERANCE_FRAC,
            tolerance_px: None,
            thresholds: 99,
            nms_radius: 2,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thresholds < 2 {
            return Err(SrnError::Config(format!(
                "eval.thresholds must be at least 2, got {}",
                self.thresholds
            )));
        }
        if !(self.tolerance_frac > 0.0) {
            return Err(SrnError::Config(
                "eval.tolerance_frac must be positive".into(),
            ));
        }
        if let Some(t) = self.tolerance_px {
            if !(t > 0.0) {
                return Err(SrnError::Config(
                    "eval.tolerance_px must be positive".into(),
                ));
            }
        }
        if self.nms_radius == 0 {
            return Err(SrnError::Config(
                "eval.nms_radius must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Tolerance in pixels for a `width x height` image.
    pub fn tolerance(&self, width: usize, height: usize) -> f64 {
        self.tolerance_px.unwrap_or_else(|| {
            self.tolerance_frac * ((width * width + height * height) as f64).sqrt()
        })
    }
}

impl Section for EvalConfig {
    const NAME: &'static str = "eval";

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let full = format!("eval.{key}");
        match key {
            "tolerance_frac" => self.tolerance_frac = parse_value(&full, value)?,
            "tolerance_px" => {
                self.tolerance_px = match value.trim() {
                    "auto" | "" => None,
                    v => Some(parse_value(&full, v)?),
                }
            }
            "thresholds" => self.thresholds = parse_value(&full, value)?,
            "nms_radius" => self.nms_radius = parse_value(&full, value)?,
            _ => return Err(unknown_key(Self::NAME, key)),
        }
        Ok(())
    }

    fn pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("tolerance_frac", self.tolerance_frac.to_string()),
            (
                "tolerance_px",
                self.tolerance_px.map_or("auto".into(), |t| t.to_string()),
            ),
            ("thresholds", self.thresholds.to_string()),
            ("nms_radius", self.nms_radius.to_string()),
        ]
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl std::ops::AddAssign for Counts {
    fn add_assign(&mut self, o: Counts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

/// One-to-one matching of predicted to ground-truth positives.
///
/// Candidate pairs within `tol` are first taken greedily in increasing
/// distance; ties go to the lower prediction index, then the lower
/// ground-truth index (row-major). Augmenting paths then extend the greedy
/// matching to maximum cardinality, since distance order alone can leave
/// several matchable pairs unmatched on dense maps.
pub fn correspond(pred: &BinaryMap, gt: &BinaryMap, tol: f64) -> Result<Counts> {
    if (pred.width, pred.height) != (gt.width, gt.height) {
        return Err(SrnError::Shape(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.width, pred.height, gt.width, gt.height
        )));
    }
    if !(tol > 0.0) {
        return Err(SrnError::Config(format!(
            "tolerance {tol} must be positive"
        )));
    }
    let preds: Vec<(usize, usize)> = pred.positives().collect();
    let gts: Vec<(usize, usize)> = gt.positives().collect();
    let mut gt_index = vec![usize::MAX; gt.width * gt.height];
    for (j, &(x, y)) in gts.iter().enumerate() {
        gt_index[y * gt.width + x] = j;
    }
    let r = tol.floor() as isize;
    let tol2 = tol * tol;
    let mut pairs: Vec<(i64, usize, usize)> = Vec::new();
    for (i, &(px, py)) in preds.iter().enumerate() {
        for dy in -r..=r {
            for dx in -r..=r {
                let d2 = (dx * dx + dy * dy) as i64;
                if d2 as f64 > tol2 {
                    continue;
                }
                let (x, y) = (px as isize + dx, py as isize + dy);
                if x < 0 || y < 0 || x >= gt.width as isize || y >= gt.height as isize {
                    continue;
                }
                let j = gt_index[y as usize * gt.width + x as usize];
                if j != usize::MAX {
                    pairs.push((d2, i, j));
                }
            }
        }
    }
    pairs.sort_unstable();
    let mut pred_match = vec![usize::MAX; preds.len()];
    let mut gt_match = vec![usize::MAX; gts.len()];
    let mut adj = vec![Vec::new(); preds.len()];
    let mut tp = 0;
    for &(_, i, j) in &pairs {
        adj[i].push(j);
        if pred_match[i] == usize::MAX && gt_match[j] == usize::MAX {
            pred_match[i] = j;
            gt_match[j] = i;
            tp += 1;
        }
    }
    tp += augment_to_maximum(&adj, &mut pred_match, &mut gt_match);
    Ok(Counts {
        tp,
        fp: preds.len() - tp,
        fn_: gts.len() - tp,
    })
}

/// Phases of depth-first augmenting-path search sharing one visited set;
/// stops after a phase that finds nothing. Returns the number of new matches.
fn augment_to_maximum(
    adj: &[Vec<usize>],
    pred_match: &mut [usize],
    gt_match: &mut [usize],
) -> usize {
    fn try_augment(
        u: usize,
        adj: &[Vec<usize>],
        seen: &mut [bool],
        pm: &mut [usize],
        gm: &mut [usize],
    ) -> bool {
        for &v in &adj[u] {
            if seen[v] {
                continue;
            }
            seen[v] = true;
            if gm[v] == usize::MAX || try_augment(gm[v], adj, seen, pm, gm) {
                pm[u] = v;
                gm[v] = u;
                return true;
            }
        }
        false
    }
    let mut added = 0;
    loop {
        let mut seen = vec![false; gt_match.len()];
        let mut found = 0;
        for u in 0..adj.len() {
            if pred_match[u] == usize::MAX
                && !adj[u].is_empty()
                && try_augment(u, adj, &mut seen, pred_match, gt_match)
            {
                found += 1;
            }
        }
        if found == 0 {
            return added;
        }
        added += found;
    }
}

/// `2pr / (p + r)`, 0 when `p + r = 0`.
pub fn fmeasure(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PRPoint {
    pub threshold: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

impl PRPoint {
    /// Precision is 1 with no predictions; recall is 1 with no ground truth.
    pub fn from_counts(threshold: f64, c: Counts) -> Self {
        let precision = if c.tp + c.fp == 0 {
            1.0
        } else {
            c.tp as f64 / (c.tp + c.fp) as f64
        };
        let recall = if c.tp + c.fn_ == 0 {
            1.0
        } else {
            c.tp as f64 / (c.tp + c.fn_) as f64
        };
        PRPoint {
            threshold,
            tp: c.tp,
            fp: c.fp,
            fn_: c.fn_,
            precision,
            recall,
            f: fmeasure(precision, recall),
        }
    }
}

/// Protocol constants recorded with every report.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSettings {
    pub thresholds: usize,
    pub nms_radius: usize,
    pub min_coherence: f64,
    pub tolerance_rule: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub curve: Vec<PRPoint>,
    pub best_f: f64,
    pub best_threshold: f64,
    /// Tolerance in pixels (of the first image when sizes differ).
    pub tolerance: f64,
    pub settings: EvalSettings,
}

/// `n` uniform thresholds in `(0, 1)`: `k / (n + 1)`.
pub fn thresholds(n: usize) -> Vec<f64> {
    (1..=n).map(|k| k as f64 / (n + 1) as f64).collect()
}

/// Per-threshold counts for one already-thinned response map.
pub fn image_counts(
    thinned: &ResponseMap,
    gt: &BinaryMap,
    ts: &[f64],
    tol: f64,
) -> Result<Vec<Counts>> {
    ts.iter()
        .map(|&t| correspond(&binarize(thinned, t), gt, tol))
        .collect()
}

/// Builds the report from per-image count vectors, summed in order.
pub fn report_from_counts(
    per_image: &[Vec<Counts>],
    ts: &[f64],
    tolerance: f64,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    if per_image.is_empty() {
        return Err(SrnError::Input("empty evaluation set".into()));
    }
    let mut totals = vec![Counts::default(); ts.len()];
    for counts in per_image {
        for (acc, c) in totals.iter_mut().zip(counts) {
            *acc += *c;
        }
    }
    let curve: Vec<PRPoint> = ts
        .iter()
        .zip(totals)
        .map(|(&t, c)| PRPoint::from_counts(t, c))
        .collect();
    let best = curve
        .iter()
        .fold(None::<&PRPoint>, |b, p| match b {
            Some(b) if b.f >= p.f => Some(b),
            _ => Some(p),
        })
        .expect("at least two thresholds");
    Ok(EvalReport {
        best_f: best.f,
        best_threshold: best.threshold,
        curve,
        tolerance,
        settings: EvalSettings {
            thresholds: ts.len(),
            nms_radius: cfg.nms_radius,
            min_coherence: MIN_COHERENCE,
            tolerance_rule: match cfg.tolerance_px {
                Some(t) => format!("{t} px"),
                None => format!("{} x diagonal", cfg.tolerance_frac),
            },
        },
    })
}

/// NMS once per map, then threshold sweep, correspondence, and ODS aggregation.
pub fn pr_curve(
    responses: &[ResponseMap],
    gts: &[BinaryMap],
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    cfg.validate()?;
    if responses.len() != gts.len() {
        return Err(SrnError::Input(format!(
            "{} responses for {} ground truths",
            responses.len(),
            gts.len()
        )));
    }
    if responses.is_empty() {
        return Err(SrnError::Input("empty evaluation set".into()));
    }
    let ts = thresholds(cfg.thresholds);
    let mut per_image = Vec::with_capacity(responses.len());
    for (r, g) in responses.iter().zip(gts) {
        let thinned = nms_with_radius(r, cfg.nms_radius)?;
        per_image.push(image_counts(
            &thinned,
            g,
            &ts,
            cfg.tolerance(g.width, g.height),
        )?);
    }
    report_from_counts(
        &per_image,
        &ts,
        cfg.tolerance(gts[0].width, gts[0].height),
        cfg,
    )
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,tp,fp,fn,precision,recall,f\n");
        for p in &self.curve {
            let _ = writeln!(
                out,
                "{:.6},{},{},{},{:.6},{:.6},{:.6}",
                p.threshold, p.tp, p.fp, p.fn_, p.precision, p.recall, p.f
            );
        }
        out
    }

    pub fn summary(&self) -> String {
        format!(
            "best_f={:.6} threshold={:.6} tolerance_px={:.6}",
            self.best_f, self.best_threshold, self.tolerance
        )
    }

    /// `key=value` record of the protocol.
    pub fn settings_text(&self) -> String {
        let s = &self.settings;
        format!(
            "matching=greedy_then_augmented\naggregation=dataset_counts\nnms=once_before_sweep\nnms_radius={}\nnms_sigma={}\nmin_coherence={}\nthresholds={}\ntolerance={}\ntolerance_px={:.6}\n",
            s.nms_radius, s.nms_radius, s.min_coherence, s.thresholds, s.tolerance_rule, self.tolerance
        )
    }

    /// Precision-recall plot with the best-F point marked.
    pub fn to_svg(&self) -> String {
        let (size, m) = (400.0, 40.0);
        let span = size - 2.0 * m;
        let px = |r: f64| m + r * span;
        let py = |p: f64| size - m - p * span;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" viewBox=\"0 0 {size} {size}\">"
        );
        let _ = writeln!(
            out,
            "<rect width=\"{size}\" height=\"{size}\" fill=\"white\"/>"
        );
        for k in 1..10 {
            let f = k as f64 / 10.0;
            let mut pts = Vec::new();
            for i in 0..=100 {
                let r = f / 2.0 + (1.0 - f / 2.0) * i as f64 / 100.0;
                let p = f * r / (2.0 * r - f);
                if (0.0..=1.0).contains(&p) {
                    pts.push(format!("{:.2},{:.2}", px(r), py(p)));
                }
            }
            let _ = writeln!(
                out,
                "<polyline points=\"{}\" fill=\"none\" stroke=\"#dddddd\" stroke-width=\"1\"/>",
                pts.join(" ")
            );
        }
        let _ = writeln!(
            out,
            "<rect x=\"{m}\" y=\"{m}\" width=\"{span}\" height=\"{span}\" fill=\"none\" stroke=\"black\"/>"
        );
        for k in 0..=10 {
            let v = k as f64 / 10.0;
            let _ = writeln!(
                out,
                "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"10\" text-anchor=\"middle\">{v:.1}</text>",
                px(v),
                size - m + 14.0
            );
            let _ = writeln!(
                out,
                "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"10\" text-anchor=\"end\">{v:.1}</text>",
                m - 4.0,
                py(v) + 3.0
            );
        }
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\" text-anchor=\"middle\">Recall</text>",
            size / 2.0,
            size - 6.0
        );
        let _ = writeln!(
            out,
            "<text x=\"12\" y=\"{:.1}\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 12 {:.1})\">Precision</text>",
            size / 2.0,
            size / 2.0
        );
        let pts: Vec<String> = self
            .curve
            .iter()
            .map(|p| format!("{:.2},{:.2}", px(p.recall), py(p.precision)))
            .collect();
        let _ = writeln!(
            out,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"#c0392b\" stroke-width=\"2\"/>",
            pts.join(" ")
        );
        if let Some(b) = self
            .curve
            .iter()
            .find(|p| p.threshold == self.best_threshold)
        {
            let _ = writeln!(
                out,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"#c0392b\"/>",
                px(b.recall),
                py(b.precision)
            );
        }
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\">F={:.3}</text>",
            m + 8.0,
            m + 16.0,
            self.best_f
        );
        out.push_str("</svg>\n");
        out
    }
}
