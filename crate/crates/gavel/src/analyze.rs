//! Option-selection bias, RMS bias, power-law learning-curve fits, and
//! report emission.
//!
//! Bias frequencies are computed only over answers with an extracted option,
//! for both the predicted and gold distributions, so the four components
//! always sum to zero. The power-law fit is closed-form least squares in
//! log-log space, with the coefficient of determination reported in the
//! original metric space.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{DomainTag, Label};
use crate::grade::{AggregateStats, GradedAnswer};

/// Per-option selection bias: predicted relative frequency minus gold
/// relative frequency, over the same answered set. Positive means
/// over-selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptionBias {
    pub bias: [f64; 4],
}

impl OptionBias {
    pub fn get(&self, label: Label) -> f64 {
        self.bias[label.index()]
    }
}

/// Power-law fit `accuracy = a * sample_size^b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub a: f64,
    pub b: f64,
    pub r_squared: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningCurvePoint {
    pub sample_size: usize,
    pub accuracy: f64,
}

#[derive(Debug, Error)]
pub enum AnalyzeError {
    #[error("empty pool: every answer in the group is malformed")]
    EmptyPool,
    #[error("insufficient points: {detail}")]
    InsufficientPoints { detail: String },
    #[error("nonpositive accuracy at sample size {sample_size}")]
    NonpositiveAccuracy { sample_size: usize },
    #[error("length mismatch: observed {observed} vs predicted {predicted}")]
    LengthMismatch { observed: usize, predicted: usize },
    #[error("degenerate variance: observations are constant but residuals are nonzero")]
    DegenerateVariance,
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Selection bias over a pool of graded answers. Answers without an
/// extracted option are excluded from both distributions.
pub fn option_bias(pool: &[GradedAnswer]) -> Result<OptionBias, AnalyzeError> {
    let answered: Vec<&GradedAnswer> = pool.iter().filter(|g| g.predicted.is_some()).collect();
    if answered.is_empty() {
        return Err(AnalyzeError::EmptyPool);
    }
    let n = answered.len() as f64;
    let mut predicted = [0.0f64; 4];
    let mut gold = [0.0f64; 4];
    for answer in &answered {
        predicted[answer.predicted.expect("filtered above").index()] += 1.0;
        gold[answer.gold.index()] += 1.0;
    }
    let mut bias = [0.0f64; 4];
    for i in 0..4 {
        bias[i] = predicted[i] / n - gold[i] / n;
    }
    Ok(OptionBias { bias })
}

/// Overall bias scalar: `(1/4) * sqrt(sum of squared per-option biases)`.
pub fn rms_bias(bias: &OptionBias) -> f64 {
    0.25 * bias.bias.iter().map(|b| b * b).sum::<f64>().sqrt()
}

/// Conventional root-mean-square alternative: `sqrt(mean of squared
/// biases)`, i.e. the 1/sqrt(4) factor sits inside the root.
pub fn rms_bias_conventional(bias: &OptionBias) -> f64 {
    (bias.bias.iter().map(|b| b * b).sum::<f64>() / 4.0).sqrt()
}

/// Coefficient of determination in the space of the supplied values.
/// Returns 1 when both residual and total sums of squares vanish.
pub fn r_squared(observed: &[f64], predicted: &[f64]) -> Result<f64, AnalyzeError> {
    if observed.is_empty() || observed.len() != predicted.len() {
        return Err(AnalyzeError::LengthMismatch {
            observed: observed.len(),
            predicted: predicted.len(),
        });
    }
    let mean = observed.iter().sum::<f64>() / observed.len() as f64;
    let ss_res: f64 = observed
        .iter()
        .zip(predicted.iter())
        .map(|(o, p)| (o - p).powi(2))
        .sum();
    let ss_tot: f64 = observed.iter().map(|o| (o - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        if ss_res == 0.0 {
            return Ok(1.0);
        }
        return Err(AnalyzeError::DegenerateVariance);
    }
    Ok(1.0 - ss_res / ss_tot)
}

/// Fit `accuracy = a * sample_size^b` by ordinary least squares on
/// `(ln x, ln y)`. The untrained baseline (sample size 0) must be excluded
/// by the caller. R^2 is computed in the original space against the
/// back-transformed curve.
pub fn fit_power_law(points: &[LearningCurvePoint]) -> Result<PowerLawFit, AnalyzeError> {
    for point in points {
        if point.sample_size == 0 {
            return Err(AnalyzeError::InsufficientPoints {
                detail: "sample size 0 is not fittable; exclude the baseline".to_string(),
            });
        }
        if point.accuracy <= 0.0 {
            return Err(AnalyzeError::NonpositiveAccuracy {
                sample_size: point.sample_size,
            });
        }
    }
    let distinct: std::collections::BTreeSet<usize> =
        points.iter().map(|p| p.sample_size).collect();
    if distinct.len() < 2 {
        return Err(AnalyzeError::InsufficientPoints {
            detail: format!(
                "need at least 2 distinct sample sizes, got {}",
                distinct.len()
            ),
        });
    }

    let ln_x: Vec<f64> = points.iter().map(|p| (p.sample_size as f64).ln()).collect();
    let ln_y: Vec<f64> = points.iter().map(|p| p.accuracy.ln()).collect();
    let n = points.len() as f64;
    let mean_x = ln_x.iter().sum::<f64>() / n;
    let mean_y = ln_y.iter().sum::<f64>() / n;
    let sxy: f64 = ln_x
        .iter()
        .zip(ln_y.iter())
        .map(|(x, y)| (x - mean_x) * (y - mean_y))
        .sum();
    let sxx: f64 = ln_x.iter().map(|x| (x - mean_x).powi(2)).sum();
    let b = sxy / sxx;
    let a = (mean_y - b * mean_x).exp();

    let observed: Vec<f64> = points.iter().map(|p| p.accuracy).collect();
    let predicted: Vec<f64> = points
        .iter()
        .map(|p| a * (p.sample_size as f64).powf(b))
        .collect();
    let r2 = match r_squared(&observed, &predicted) {
        Ok(v) => v,
        // constant observations perfectly reproduced by b = 0
        Err(AnalyzeError::DegenerateVariance) => f64::NEG_INFINITY,
        Err(e) => return Err(e),
    };
    Ok(PowerLawFit {
        a,
        b,
        r_squared: r2,
    })
}

// ---------------------------------------------------------------------------
// Report emission

/// Everything the report writer needs, already aggregated.
#[derive(Debug, Clone, Default)]
pub struct ReportBundle {
    /// Accuracy stats per (model, sample_size).
    pub accuracy_by_sample_size: Vec<AggregateStats>,
    /// Malformed-label stats per (model, sample_size).
    pub malformed_by_sample_size: Vec<AggregateStats>,
    /// (model, sample_size, domain, mean accuracy) rows.
    pub per_domain: Vec<(String, usize, DomainTag, f64)>,
    /// (model, sample_size, bias, rms, conventional rms) rows.
    pub biases: Vec<(String, usize, OptionBias, f64, f64)>,
    /// Learning-curve points and the fit per model.
    pub curves: Vec<(String, Vec<LearningCurvePoint>, Option<PowerLawFit>)>,
}

#[derive(Debug, Clone)]
pub struct ReportOptions {
    /// Also write a vector-graphic plot per learning curve and bias series.
    pub plots: bool,
}

impl Default for ReportOptions {
    fn default() -> ReportOptions {
        ReportOptions { plots: true }
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn fmt6(x: f64) -> String {
    format!("{x:.6}")
}

fn fmt9(x: f64) -> String {
    format!("{x:.9}")
}

fn write_file(
    out_dir: &Path,
    name: &str,
    content: &str,
    written: &mut Vec<PathBuf>,
) -> Result<(), AnalyzeError> {
    let path = out_dir.join(name);
    std::fs::write(&path, content).map_err(|source| AnalyzeError::Io {
        path: path.display().to_string(),
        source,
    })?;
    written.push(path);
    Ok(())
}

fn stats_table(stats: &[AggregateStats]) -> String {
    let mut out = String::from("model,sample_size,n_runs,mean,std,median,min,max\n");
    for s in stats {
        let model = s.group_key.get("model").cloned().unwrap_or_default();
        let sample_size = s.group_key.get("sample_size").cloned().unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            csv_field(&model),
            sample_size,
            s.n_runs,
            fmt6(s.mean),
            fmt6(s.std),
            fmt6(s.median),
            fmt6(s.min),
            fmt6(s.max)
        ));
    }
    out
}

/// Write the report artifacts: accuracy and malformed tables, per-domain
/// table, bias tables, learning curves with fit parameters, a summary
/// document, and (optionally) one plot per curve. Byte-deterministic for
/// identical inputs. Returns the files written.
pub fn emit_report(
    bundle: &ReportBundle,
    out_dir: impl AsRef<Path>,
    options: &ReportOptions,
) -> Result<Vec<PathBuf>, AnalyzeError> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|source| AnalyzeError::Io {
        path: out_dir.display().to_string(),
        source,
    })?;
    let mut written = Vec::new();
    let mut summary = String::from("# Evaluation report\n\n");

    write_file(
        out_dir,
        "accuracy_by_sample_size.csv",
        &stats_table(&bundle.accuracy_by_sample_size),
        &mut written,
    )?;
    summary.push_str("- accuracy_by_sample_size.csv: accuracy mean/std/median/min/max per (model, sample size)\n");

    write_file(
        out_dir,
        "malformed_by_sample_size.csv",
        &stats_table(&bundle.malformed_by_sample_size),
        &mut written,
    )?;
    summary.push_str(
        "- malformed_by_sample_size.csv: malformed-label counts per (model, sample size)\n",
    );

    let mut per_domain = String::from("model,sample_size,domain,accuracy\n");
    for (model, sample_size, domain, accuracy) in &bundle.per_domain {
        per_domain.push_str(&format!(
            "{},{},{},{}\n",
            csv_field(model),
            sample_size,
            csv_field(domain.canonical_name()),
            fmt6(*accuracy)
        ));
    }
    write_file(
        out_dir,
        "per_domain_accuracy.csv",
        &per_domain,
        &mut written,
    )?;
    summary.push_str("- per_domain_accuracy.csv: mean accuracy per (model, sample size, domain)\n");

    if bundle.biases.is_empty() {
        summary.push_str("- option bias tables omitted: no answered questions in any run pool\n");
    } else {
        let mut bias_table = String::from(
            "model,sample_size,bias_A,bias_B,bias_C,bias_D,rms_bias,rms_bias_conventional\n",
        );
        for (model, sample_size, bias, rms, conventional) in &bundle.biases {
            bias_table.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                csv_field(model),
                sample_size,
                fmt6(bias.get(Label::A)),
                fmt6(bias.get(Label::B)),
                fmt6(bias.get(Label::C)),
                fmt6(bias.get(Label::D)),
                fmt6(*rms),
                fmt6(*conventional)
            ));
        }
        write_file(out_dir, "option_bias.csv", &bias_table, &mut written)?;
        summary
            .push_str("- option_bias.csv: per-option bias and RMS bias per (model, sample size)\n");
    }

    let mut curve_table = String::from("model,sample_size,accuracy\n");
    let mut fit_table = String::from("model,a,b,r_squared\n");
    for (model, points, fit) in &bundle.curves {
        for point in points {
            curve_table.push_str(&format!(
                "{},{},{}\n",
                csv_field(model),
                point.sample_size,
                fmt6(point.accuracy)
            ));
        }
        if let Some(fit) = fit {
            fit_table.push_str(&format!(
                "{},{},{},{}\n",
                csv_field(model),
                fmt9(fit.a),
                fmt9(fit.b),
                fmt9(fit.r_squared)
            ));
        }
    }
    write_file(out_dir, "learning_curve.csv", &curve_table, &mut written)?;
    write_file(out_dir, "power_law_fit.csv", &fit_table, &mut written)?;
    summary.push_str("- learning_curve.csv / power_law_fit.csv: mean accuracy per sample size and the fitted a*x^b curve\n");

    for (model, points, fit) in &bundle.curves {
        if let Some(fit) = fit {
            summary.push_str(&format!(
                "\nmodel {model}: accuracy ~= {:.4} * n^{:.4} (R^2 = {:.4} over {} points)\n",
                fit.a,
                fit.b,
                fit.r_squared,
                points.len()
            ));
        }
    }
    if options.plots {
        for (model, points, fit) in &bundle.curves {
            if points.is_empty() {
                continue;
            }
            let svg = learning_curve_svg(model, points, fit.as_ref());
            write_file(
                out_dir,
                &format!("learning_curve_{model}.svg"),
                &svg,
                &mut written,
            )?;
        }
    }

    write_file(out_dir, "summary.md", &summary, &mut written)?;
    Ok(written)
}

/// A small standalone plot: observed points plus the fitted curve, data
/// embedded as plain SVG elements.
fn learning_curve_svg(
    model: &str,
    points: &[LearningCurvePoint],
    fit: Option<&PowerLawFit>,
) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const MARGIN: f64 = 50.0;
    let max_x = points.iter().map(|p| p.sample_size).max().unwrap_or(1) as f64;
    let to_px = |x: f64, y: f64| {
        let px = MARGIN + (x / max_x) * (W - 2.0 * MARGIN);
        let py = H - MARGIN - y.clamp(0.0, 1.0) * (H - 2.0 * MARGIN);
        (px, py)
    };
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n"
    ));
    svg.push_str(&format!(
        "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n<text x=\"{:.1}\" y=\"24\" font-family=\"monospace\" font-size=\"14\">accuracy vs train samples per domain ({model})</text>\n",
        MARGIN
    ));
    // axes
    let (x0, y0) = to_px(0.0, 0.0);
    let (x1, _) = to_px(max_x, 0.0);
    let (_, y1) = to_px(0.0, 1.0);
    svg.push_str(&format!(
        "<line x1=\"{x0:.1}\" y1=\"{y0:.1}\" x2=\"{x1:.1}\" y2=\"{y0:.1}\" stroke=\"black\"/>\n<line x1=\"{x0:.1}\" y1=\"{y0:.1}\" x2=\"{x0:.1}\" y2=\"{y1:.1}\" stroke=\"black\"/>\n"
    ));
    if let Some(fit) = fit {
        let mut path = String::new();
        let steps = 64;
        for i in 0..=steps {
            let x = max_x * (i as f64 / steps as f64);
            let y = if x > 0.0 {
                fit.a * x.powf(fit.b)
            } else {
                fit.a
            };
            let (px, py) = to_px(x, y);
            path.push_str(if i == 0 { "M" } else { "L" });
            path.push_str(&format!("{px:.1},{py:.1} "));
        }
        svg.push_str(&format!(
            "<path d=\"{}\" fill=\"none\" stroke=\"steelblue\" stroke-width=\"1.5\"/>\n",
            path.trim_end()
        ));
    }
    for point in points {
        let (px, py) = to_px(point.sample_size as f64, point.accuracy);
        svg.push_str(&format!(
            "<circle cx=\"{px:.1}\" cy=\"{py:.1}\" r=\"3\" fill=\"crimson\"><title>n={} acc={:.4}</title></circle>\n",
            point.sample_size, point.accuracy
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Group graded answers by an arbitrary key and compute bias per group,
/// skipping groups where every answer is malformed.
pub fn bias_by_group<'a, K: Ord + Clone>(
    pools: impl Iterator<Item = (K, &'a [GradedAnswer])>,
) -> BTreeMap<K, (OptionBias, f64, f64)> {
    let mut out = BTreeMap::new();
    for (key, pool) in pools {
        if let Ok(bias) = option_bias(pool) {
            let rms = rms_bias(&bias);
            let conventional = rms_bias_conventional(&bias);
            out.insert(key, (bias, rms, conventional));
        }
    }
    out
}
