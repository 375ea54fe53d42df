//! Rate-distortion trace artifacts: knee point, coverage score and report files.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::ot::Coupling;
use crate::refine::EditRecord;

/// One refinement step on the rate-distortion plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RdPoint {
    pub t: usize,
    pub rate: f64,
    pub distortion: f64,
    pub objective: f64,
    pub structure: f64,
    pub feature: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RdTrace {
    pub beta: f64,
    pub points: Vec<RdPoint>,
    /// Edits applied to produce each point (empty for t₀).
    pub edits: Vec<Vec<EditRecord>>,
    /// False when refinement aborted on a solver failure.
    pub complete: bool,
}

/// Per-line JSON record of a trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: usize,
    pub rate: f64,
    pub distortion: f64,
    pub structure: f64,
    pub feature: f64,
    pub objective: f64,
    #[serde(default)]
    pub edits: Vec<EditRecord>,
}

impl RdTrace {
    pub fn new(beta: f64) -> Self {
        Self {
            beta,
            points: Vec::new(),
            edits: Vec::new(),
            complete: true,
        }
    }

    pub fn records(&self) -> Vec<TraceRecord> {
        self.points
            .iter()
            .zip(&self.edits)
            .map(|(p, e)| TraceRecord {
                t: p.t,
                rate: p.rate,
                distortion: p.distortion,
                structure: p.structure,
                feature: p.feature,
                objective: p.objective,
                edits: e.clone(),
            })
            .collect()
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in self.records() {
            out.push_str(&serde_json::to_string(&r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl()?)?;
        Ok(())
    }

    /// Reads a JSON-lines trace; blank lines are skipped.
    pub fn read_jsonl(path: &Path, beta: f64) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::FileNotFound(path.to_path_buf())
            } else {
                Error::Io(e)
            }
        })?;
        let mut trace = Self::new(beta);
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: TraceRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })?;
            if trace.points.last().is_some_and(|p| p.t >= rec.t) {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: i + 1,
                    message: format!("iteration {} out of order", rec.t),
                });
            }
            trace.points.push(RdPoint {
                t: rec.t,
                rate: rec.rate,
                distortion: rec.distortion,
                objective: rec.objective,
                structure: rec.structure,
                feature: rec.feature,
            });
            trace.edits.push(rec.edits);
        }
        if trace.points.is_empty() {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: 0,
                message: "empty trace".into(),
            });
        }
        Ok(trace)
    }
}

fn minmax(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)))
}

fn unit_scale(x: f64, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        (x - lo) / (hi - lo)
    } else {
        0.0
    }
}

/// Trace points on min-max normalized (rate, distortion) axes.
pub fn normalized_coordinates(points: &[RdPoint]) -> Vec<(f64, f64)> {
    let r = minmax(points.iter().map(|p| p.rate));
    let d = minmax(points.iter().map(|p| p.distortion));
    points
        .iter()
        .map(|p| (unit_scale(p.rate, r), unit_scale(p.distortion, d)))
        .collect()
}

/// Index of the point farthest from the chord joining the first and last points.
///
/// Both axes are min-max normalized first. Ties go to the lower objective,
/// then the lower `t`; a collinear trace returns the lowest-objective point.
pub fn knee_point(points: &[RdPoint]) -> Result<usize> {
    if points.len() < 2 {
        return Err(Error::TraceTooShort);
    }
    let xy = normalized_coordinates(points);
    let (x0, y0) = xy[0];
    let (x1, y1) = xy[xy.len() - 1];
    let (dx, dy) = (x1 - x0, y1 - y0);
    let len = dx.hypot(dy);
    let dist: Vec<f64> = xy
        .iter()
        .map(|&(x, y)| {
            if len > 0.0 {
                (dy * (x - x0) - dx * (y - y0)).abs() / len
            } else {
                (x - x0).hypot(y - y0)
            }
        })
        .collect();

    let better = |a: usize, b: usize| -> bool {
        // is `a` preferred over `b` on the tie-breaking keys
        let (pa, pb) = (&points[a], &points[b]);
        pa.objective < pb.objective || (pa.objective == pb.objective && pa.t < pb.t)
    };
    let max = dist.iter().copied().fold(0.0, f64::max);
    if max < 1e-9 {
        let mut best = 0;
        for i in 1..points.len() {
            if better(i, best) {
                best = i;
            }
        }
        return Ok(best);
    }
    let mut best = 0;
    for i in 1..points.len() {
        let gap = dist[i] - dist[best];
        if gap > 1e-12 || (gap.abs() <= 1e-12 && better(i, best)) {
            best = i;
        }
    }
    Ok(best)
}

/// How the coverage tolerance quantile is taken.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PercentileMode {
    /// Over all N·M feature costs.
    #[default]
    AllEntries,
    /// Over each lecture unit's minimum feature cost.
    RowMinima,
}

pub const COVERAGE_PERCENTILE: f64 = 30.0;

/// Linear-interpolation percentile (inclusive endpoints), `p` in [0, 100].
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = (p / 100.0).clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    Ok(v[lo] + (rank - lo as f64) * (v[hi] - v[lo]))
}

/// Feature-distance tolerance used for coverage and the Op-A row-mass signal.
pub fn coverage_tolerance(m_feat: &Matrix, mode: PercentileMode) -> Result<f64> {
    if m_feat.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    match mode {
        PercentileMode::AllEntries => percentile(m_feat.as_standard_layout().as_slice().expect("contiguous"), COVERAGE_PERCENTILE),
        PercentileMode::RowMinima => {
            let mins: Vec<f64> = m_feat
                .rows()
                .into_iter()
                .map(|r| r.iter().copied().fold(f64::INFINITY, f64::min))
                .collect();
            percentile(&mins, COVERAGE_PERCENTILE)
        }
    }
}

/// Fraction of lecture units whose best-aligned node lies within the tolerance.
pub fn coverage(m_feat: &Matrix, pi: &Coupling) -> Result<f64> {
    coverage_with(m_feat, pi, PercentileMode::AllEntries)
}

pub fn coverage_with(m_feat: &Matrix, pi: &Coupling, mode: PercentileMode) -> Result<f64> {
    if m_feat.dim() != pi.shape() {
        return Err(Error::ShapeMismatch(format!(
            "feature cost {:?} vs coupling {:?}",
            m_feat.dim(),
            pi.shape()
        )));
    }
    let q = coverage_tolerance(m_feat, mode)?;
    let n = m_feat.nrows();
    let covered = (0..n).filter(|&i| m_feat[[i, pi.row_argmax(i)]] <= q).count();
    Ok(covered as f64 / n as f64)
}

/// `%.9g`-style rendering.
pub fn fmt_sig9(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { "0".into() } else { x.to_string() };
    }
    let exp = x.abs().log10().floor() as i32;
    if !(-5..9).contains(&exp) {
        let s = format!("{x:.8e}");
        let (mantissa, e) = s.split_once('e').expect("exponent");
        let mantissa = if mantissa.contains('.') {
            mantissa.trim_end_matches('0').trim_end_matches('.')
        } else {
            mantissa
        };
        return format!("{mantissa}e{e}");
    }
    let decimals = (8 - exp).max(0) as usize;
    let s = format!("{x:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// Rounds to nine significant digits so JSON output carries at most that many.
pub fn round_sig9(x: f64) -> f64 {
    fmt_sig9(x).parse().unwrap_or(x)
}

#[derive(Debug, Clone)]
pub struct ReportFiles {
    pub rd_curve: PathBuf,
    pub report: PathBuf,
    pub plot_data: PathBuf,
}

fn point_json(p: &RdPoint) -> Value {
    json!({
        "t": p.t,
        "rate": round_sig9(p.rate),
        "distortion": round_sig9(p.distortion),
        "objective": round_sig9(p.objective),
        "structure": round_sig9(p.structure),
        "feature": round_sig9(p.feature),
    })
}

pub const KNEE_METHOD: &str =
    "max perpendicular distance to the first-last chord on min-max normalized (rate, distortion) axes";

/// Writes `rd_curve.csv`, `report.json` and `plot_data.json` into `out`.
pub fn emit_report(
    trace: &RdTrace,
    coverage_before: Option<f64>,
    coverage_after: Option<f64>,
    knee: usize,
    config: &Value,
    out: &Path,
) -> Result<ReportFiles> {
    if trace.points.is_empty() || knee >= trace.points.len() {
        return Err(Error::TraceTooShort);
    }
    std::fs::create_dir_all(out)?;
    let files = ReportFiles {
        rd_curve: out.join("rd_curve.csv"),
        report: out.join("report.json"),
        plot_data: out.join("plot_data.json"),
    };

    let mut csv = String::from("t,rate,distortion,objective,structure,feature\n");
    for p in &trace.points {
        writeln!(
            csv,
            "{},{},{},{},{},{}",
            p.t,
            fmt_sig9(p.rate),
            fmt_sig9(p.distortion),
            fmt_sig9(p.objective),
            fmt_sig9(p.structure),
            fmt_sig9(p.feature)
        )
        .expect("write to string");
    }
    std::fs::write(&files.rd_curve, csv)?;

    let kp = &trace.points[knee];
    let report = json!({
        "knee_index": knee,
        "knee_point": point_json(kp),
        "knee_method": KNEE_METHOD,
        "coverage_before": coverage_before.map(round_sig9),
        "coverage_after": coverage_after.map(round_sig9),
        "beta": round_sig9(trace.beta),
        "points": trace.points.len(),
        "trace_complete": trace.complete,
        "config": config,
    });
    write_json(&files.report, &report)?;

    let r = minmax(trace.points.iter().map(|p| p.rate));
    let d = minmax(trace.points.iter().map(|p| p.distortion));
    let coords = normalized_coordinates(&trace.points);
    let points: Vec<Value> = trace
        .points
        .iter()
        .zip(&coords)
        .map(|(p, (x, y))| {
            json!({
                "t": p.t,
                "rate": round_sig9(p.rate),
                "distortion": round_sig9(p.distortion),
                "rate_norm": round_sig9(*x),
                "distortion_norm": round_sig9(*y),
            })
        })
        .collect();
    // iso-objective contours D = (L − R)/β in raw coordinates
    let iso: Vec<Value> = [-10.0, -5.0, 0.0, 5.0, 10.0]
        .iter()
        .map(|&off| {
            let level = kp.objective + off;
            json!({
                "offset": off,
                "objective": round_sig9(level),
                "slope": round_sig9(-1.0 / trace.beta),
                "intercept": round_sig9(level / trace.beta),
            })
        })
        .collect();
    let plot = json!({
        "points": points,
        "knee_index": knee,
        "rate_range": [round_sig9(r.0), round_sig9(r.1)],
        "distortion_range": [round_sig9(d.0), round_sig9(d.1)],
        "iso_objective": iso,
    });
    write_json(&files.plot_data, &plot)?;
    Ok(files)
}

pub(crate) fn write_json(path: &Path, v: &Value) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}
