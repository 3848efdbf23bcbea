//! Graph and report files.
//!
//! Graph files are line oriented:
//!
//! ```text
//! vg 1 <n>
//! e <i> <j> r11 r12 r13 r21 r22 r23 r31 r32 r33 gx gy gz
//! v <i> px py pz r11 r12 r13 r21 r22 r23 r31 r32 r33
//! ```
//!
//! `e` lines carry the relative rotation (row major) and the local direction.
//! Optional `v` lines carry ground truth; when present there must be one per
//! vertex. Blank lines and `#` comments are ignored. Reports are JSON.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{lambda_diagnostics, position_errors, EvaluationReport};
use crate::pipeline::{Method, OutlierFilter, PipelineConfig, PipelineOutput, PipelineTrace};
use crate::rotavg::angular_rotation_error;
use crate::types::{Edge, EdgeScales, PoseEstimate, Rotation, UnitVector3, Vec3, ViewingGraph};

pub const GRAPH_MAGIC: &str = "vg";
pub const GRAPH_VERSION: u32 = 1;
pub const REPORT_FORMAT: &str = "viewgraph-report/1";

/// Parsed graph file.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphFile {
    pub graph: ViewingGraph,
    pub truth: Option<PoseEstimate>,
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

fn numbers(line: usize, fields: &[&str]) -> Result<Vec<f64>> {
    fields
        .iter()
        .map(|f| {
            let x: f64 = f.parse().map_err(|_| parse_err(line, format!("`{f}` is not a number")))?;
            if x.is_finite() {
                Ok(x)
            } else {
                Err(parse_err(line, format!("`{f}` is not finite")))
            }
        })
        .collect()
}

fn index(line: usize, field: &str, n: usize) -> Result<usize> {
    let i: usize = field.parse().map_err(|_| parse_err(line, format!("`{field}` is not a vertex index")))?;
    if i >= n {
        return Err(parse_err(line, format!("vertex {i} outside 0..{n}")));
    }
    Ok(i)
}

fn rotation(line: usize, rows: &[f64]) -> Result<Rotation> {
    Rotation::from_row_slice(rows).map_err(|e| parse_err(line, e.to_string()))
}

impl GraphFile {
    pub fn parse(text: &str) -> Result<GraphFile> {
        let mut n = None;
        let mut edges = Vec::new();
        let mut edge_lines = HashMap::new();
        let mut truth: Vec<Option<(Vec3, Rotation)>> = Vec::new();
        let mut truth_seen = 0;
        for (k, raw) in text.lines().enumerate() {
            let line = k + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let fields: Vec<&str> = content.split_whitespace().collect();
            let Some(n) = n else {
                if fields.len() != 3 || fields[0] != GRAPH_MAGIC {
                    return Err(parse_err(line, format!("expected header `{GRAPH_MAGIC} {GRAPH_VERSION} <n>`")));
                }
                if fields[1] != GRAPH_VERSION.to_string() {
                    return Err(parse_err(line, format!("unsupported version `{}`", fields[1])));
                }
                let count: usize =
                    fields[2].parse().map_err(|_| parse_err(line, format!("`{}` is not a vertex count", fields[2])))?;
                if count < 2 {
                    return Err(parse_err(line, format!("a viewing graph needs at least 2 vertices, got {count}")));
                }
                n = Some(count);
                truth = vec![None; count];
                continue;
            };
            match fields[0] {
                "e" => {
                    if fields.len() != 15 {
                        return Err(parse_err(line, format!("edge line needs 14 values, got {}", fields.len() - 1)));
                    }
                    let (i, j) = (index(line, fields[1], n)?, index(line, fields[2], n)?);
                    if i == j {
                        return Err(parse_err(line, format!("self-loop on vertex {i}")));
                    }
                    if let Some(first) = edge_lines.insert((i.min(j), i.max(j)), line) {
                        return Err(parse_err(line, format!("duplicate edge ({i}, {j}), first given on line {first}")));
                    }
                    let v = numbers(line, &fields[3..])?;
                    let rel_rotation = rotation(line, &v[..9])?;
                    let direction_local = UnitVector3::new_normalize(Vec3::new(v[9], v[10], v[11]))
                        .map_err(|_| parse_err(line, "zero direction"))?;
                    edges.push(Edge { i, j, rel_rotation, direction_local });
                }
                "v" => {
                    if fields.len() != 14 {
                        return Err(parse_err(line, format!("vertex line needs 13 values, got {}", fields.len() - 1)));
                    }
                    let i = index(line, fields[1], n)?;
                    if truth[i].is_some() {
                        return Err(parse_err(line, format!("duplicate ground truth for vertex {i}")));
                    }
                    let v = numbers(line, &fields[2..])?;
                    truth[i] = Some((Vec3::new(v[0], v[1], v[2]), rotation(line, &v[3..])?));
                    truth_seen += 1;
                }
                other => return Err(parse_err(line, format!("unknown record `{other}`"))),
            }
        }
        let n = n.ok_or_else(|| parse_err(text.lines().count().max(1), "missing header"))?;
        let graph = ViewingGraph::new(n, edges)?;
        let truth = match truth_seen {
            0 => None,
            s if s == n => {
                let (positions, rotations) = truth.into_iter().map(|t| t.expect("all present")).unzip();
                Some(PoseEstimate::new(rotations, positions)?)
            }
            _ => {
                let missing: Vec<usize> = (0..n).filter(|&i| truth[i].is_none()).collect();
                return Err(Error::InvalidInput(format!("ground truth missing for vertices {missing:?}")));
            }
        };
        Ok(GraphFile { graph, truth })
    }

    /// Serializes with 17 significant digits so that values round-trip.
    pub fn render(&self) -> String {
        let mut out = format!("{GRAPH_MAGIC} {GRAPH_VERSION} {}\n", self.graph.vertex_count());
        let put = |out: &mut String, values: &mut dyn Iterator<Item = f64>| {
            for x in values {
                write!(out, " {x:.16e}").unwrap();
            }
            out.push('\n');
        };
        for e in self.graph.edges() {
            write!(out, "e {} {}", e.i, e.j).unwrap();
            put(&mut out, &mut e.rel_rotation.row_major().into_iter().chain(e.direction_local.as_vec().iter().copied()));
        }
        if let Some(truth) = &self.truth {
            for (i, (p, r)) in truth.positions.iter().zip(&truth.rotations).enumerate() {
                write!(out, "v {i}").unwrap();
                put(&mut out, &mut p.iter().copied().chain(r.row_major()));
            }
        }
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<GraphFile> {
        GraphFile::parse(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(std::fs::write(path, self.render())?)
    }
}

/// Outlier filter applied to graphs given on the command line when the
/// configuration does not choose one.
pub const INGEST_FILTER: OutlierFilter = OutlierFilter::Residual { threshold_deg: 30.0, rounds: 2 };

/// Reads a TOML pipeline configuration; missing keys take their defaults.
pub fn config_from_toml(text: &str) -> Result<PipelineConfig> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| config_err(text, e))?;
    let cfg = config_from_table(table)?;
    cfg.validate()?;
    Ok(cfg)
}

fn config_from_table(table: toml::Table) -> Result<PipelineConfig> {
    table.try_into().map_err(|e: toml::de::Error| Error::InvalidInput(format!("configuration: {}", e.message())))
}

/// Command-line variant of [`config_from_toml`]: `outlier_filter` defaults
/// to [`INGEST_FILTER`] instead of none.
pub fn parse_config(toml_text: Option<&str>) -> Result<PipelineConfig> {
    let table: toml::Table = match toml_text {
        Some(text) => text.parse().map_err(|e: toml::de::Error| config_err(text, e))?,
        None => toml::Table::new(),
    };
    let chose_filter = table.contains_key("outlier_filter");
    let mut cfg = config_from_table(table)?;
    if !chose_filter {
        cfg.outlier_filter = INGEST_FILTER;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn config_err(text: &str, e: toml::de::Error) -> Error {
    match e.span() {
        Some(span) => parse_err(text[..span.start].lines().count().max(1), e.message().to_string()),
        None => Error::InvalidInput(format!("configuration: {}", e.message())),
    }
}

/// Accuracy of a solution against ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub positions: EvaluationReport,
    /// Per-vertex rotation errors after alignment, radians.
    pub rotation_error_max: f64,
    pub rotation_error_mean: f64,
}

/// Evaluates `estimate` against `truth`. Scale diagnostics are included
/// when `scales` are given and all positive (the free-multiplier solver may
/// return negative multipliers, for which the log ratio is undefined).
pub fn evaluate(
    estimate: &PoseEstimate,
    truth: &PoseEstimate,
    scales: Option<(&EdgeScales, &[(usize, usize)])>,
) -> Result<Evaluation> {
    if estimate.len() != truth.len() {
        return Err(Error::InvalidInput(format!(
            "estimate has {} vertices, ground truth {}",
            estimate.len(),
            truth.len()
        )));
    }
    let mut positions = position_errors(&estimate.positions, &truth.positions)?;
    if let Some((scales, pairs)) = scales {
        if scales.as_slice().iter().all(|&l| l > 0.0) {
            let (ratios, frac) = lambda_diagnostics(scales, pairs, &estimate.positions)?;
            positions.lambda_log_ratios = ratios;
            positions.frac_at_bound = Some(frac);
        }
    }
    let rot = angular_rotation_error(&estimate.rotations, &truth.rotations)?;
    let rotation_error_max = rot.iter().copied().fold(0.0, f64::max);
    let rotation_error_mean = rot.iter().sum::<f64>() / rot.len() as f64;
    Ok(Evaluation { positions, rotation_error_max, rotation_error_mean })
}

/// Output of one solver run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub format: String,
    pub method: Method,
    pub config: PipelineConfig,
    pub estimate: PoseEstimate,
    /// Vertex pairs of the solved edges, aligned with `scales`.
    pub edges: Vec<(usize, usize)>,
    pub scales: EdgeScales,
    pub trace: PipelineTrace,
    pub iterations: usize,
    pub seconds: f64,
    pub evaluation: Option<Evaluation>,
}

impl ReportFile {
    pub fn new(method: Method, config: &PipelineConfig, out: PipelineOutput, seconds: f64) -> ReportFile {
        ReportFile {
            format: REPORT_FORMAT.to_string(),
            method,
            config: config.clone(),
            edges: out.graph.pairs().collect(),
            iterations: out.trace.entries.len(),
            estimate: out.estimate,
            scales: out.scales,
            trace: out.trace,
            seconds,
            evaluation: None,
        }
    }

    pub fn evaluate_against(&mut self, truth: &PoseEstimate) -> Result<()> {
        self.evaluation = Some(evaluate(&self.estimate, truth, Some((&self.scales, &self.edges)))?);
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::InvalidInput(format!("report serialization: {e}")))
    }

    pub fn from_json(text: &str) -> Result<ReportFile> {
        let report: ReportFile = serde_json::from_str(text)
            .map_err(|e| parse_err(e.line(), format!("malformed report: {e}")))?;
        if report.format != REPORT_FORMAT {
            return Err(Error::InvalidInput(format!("unsupported report format `{}`", report.format)));
        }
        Ok(report)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ReportFile> {
        ReportFile::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        Ok(std::fs::write(path, text)?)
    }
}
