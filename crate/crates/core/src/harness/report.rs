use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Agent,
    Baseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub index: usize,
    pub scenario: String,
    pub query_id: String,
    pub tags: Vec<String>,
    pub j: f64,
    pub f: f64,
    pub jf: f64,
    pub fallback_used: bool,
    pub steps: usize,
    pub parse_errors: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_ms: Option<f64>,
    /// Set when the scenario failed to load or the episode aborted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Load failures carry no score and stay out of the aggregates.
    #[serde(default)]
    pub load_error: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub miou: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_jf: Option<f64>,
    pub fallback_count: usize,
}

impl Aggregate {
    pub fn over<'a>(rows: impl Iterator<Item = &'a ReportRow>) -> Self {
        let rows: Vec<&ReportRow> = rows.filter(|r| !r.load_error).collect();
        let n = rows.len();
        let mean = |f: fn(&ReportRow) -> f64| {
            if n == 0 {
                None
            } else {
                Some(rows.iter().map(|r| f(r)).sum::<f64>() / n as f64)
            }
        };
        Aggregate {
            count: n,
            miou: mean(|r| r.j),
            mean_jf: mean(|r| r.jf),
            fallback_count: rows.iter().filter(|r| r.fallback_used).count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub overall: Aggregate,
    pub by_tag: BTreeMap<String, Aggregate>,
}

impl Aggregates {
    pub fn compute(rows: &[ReportRow]) -> Self {
        let mut tags: Vec<&str> = rows.iter().flat_map(|r| r.tags.iter().map(String::as_str)).collect();
        tags.sort_unstable();
        tags.dedup();
        Aggregates {
            overall: Aggregate::over(rows.iter()),
            by_tag: tags
                .into_iter()
                .map(|t| (t.to_string(), Aggregate::over(rows.iter().filter(|r| r.tags.iter().any(|x| x == t)))))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub suite_id: String,
    pub suite_fingerprint: String,
    pub config_fingerprint: String,
    pub mode: RunMode,
    pub rows: Vec<ReportRow>,
    pub aggregates: Aggregates,
}

impl EvalReport {
    pub fn error_rows(&self) -> usize {
        self.rows.iter().filter(|r| r.error.is_some()).count()
    }

    pub fn tag(&self, tag: &str) -> Option<&Aggregate> {
        self.aggregates.by_tag.get(tag)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_csv(&self) -> Result<String, HarnessError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "index",
            "scenario",
            "query_id",
            "tags",
            "j",
            "f",
            "jf",
            "fallback_used",
            "steps",
            "parse_errors",
            "wall_time_ms",
            "error",
        ])
        .map_err(|e| HarnessError::Io(e.to_string()))?;
        for r in &self.rows {
            w.write_record([
                r.index.to_string(),
                r.scenario.clone(),
                r.query_id.clone(),
                r.tags.join(";"),
                r.j.to_string(),
                r.f.to_string(),
                r.jf.to_string(),
                r.fallback_used.to_string(),
                r.steps.to_string(),
                r.parse_errors.to_string(),
                r.wall_time_ms.map(|t| t.to_string()).unwrap_or_default(),
                r.error.clone().unwrap_or_default(),
            ])
            .map_err(|e| HarnessError::Io(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| HarnessError::Io(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Writes `report.json` and `report.csv` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<(), HarnessError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| HarnessError::Io(format!("{}: {e}", dir.display())))?;
        let io = |p: &Path, e: std::io::Error| HarnessError::Io(format!("{}: {e}", p.display()));
        let json = dir.join("report.json");
        fs::write(&json, self.to_json()).map_err(|e| io(&json, e))?;
        let csv = dir.join("report.csv");
        fs::write(&csv, self.to_csv()?).map_err(|e| io(&csv, e))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let file = if path.is_dir() { path.join("report.json") } else { path.to_path_buf() };
        let text = fs::read_to_string(&file).map_err(|e| HarnessError::Io(format!("{}: {e}", file.display())))?;
        serde_json::from_str(&text).map_err(|e| HarnessError::Parse(format!("{}: {e}", file.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TagDelta {
    pub tag: String,
    pub count: usize,
    pub a_mean_jf: Option<f64>,
    pub b_mean_jf: Option<f64>,
    /// `a - b`
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub overall: TagDelta,
    pub by_tag: Vec<TagDelta>,
    pub a_wins: usize,
    pub b_wins: usize,
    pub ties: usize,
}

impl Comparison {
    pub fn tag(&self, tag: &str) -> Option<&TagDelta> {
        self.by_tag.iter().find(|d| d.tag == tag)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("comparison serializes")
    }
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let num = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        writeln!(f, "{:<28} {:>5} {:>8} {:>8} {:>8}", "tag", "n", "A", "B", "A-B")?;
        for d in std::iter::once(&self.overall).chain(&self.by_tag) {
            writeln!(
                f,
                "{:<28} {:>5} {:>8} {:>8} {:>8}",
                d.tag,
                d.count,
                num(d.a_mean_jf),
                num(d.b_mean_jf),
                num(d.delta)
            )?;
        }
        writeln!(f, "per-query wins: A {} / B {} / ties {}", self.a_wins, self.b_wins, self.ties)
    }
}

fn delta(tag: &str, a: Option<&Aggregate>, b: Option<&Aggregate>) -> TagDelta {
    let am = a.and_then(|x| x.mean_jf);
    let bm = b.and_then(|x| x.mean_jf);
    TagDelta {
        tag: tag.into(),
        count: a.map_or(0, |x| x.count).max(b.map_or(0, |x| x.count)),
        a_mean_jf: am,
        b_mean_jf: bm,
        delta: am.zip(bm).map(|(x, y)| x - y),
    }
}

pub fn compare_reports(a: &EvalReport, b: &EvalReport) -> Result<Comparison, HarnessError> {
    if a.suite_fingerprint != b.suite_fingerprint {
        return Err(HarnessError::Comparison(format!(
            "reports come from different suites ({} vs {})",
            a.suite_id, b.suite_id
        )));
    }
    let mut tags: Vec<&String> = a.aggregates.by_tag.keys().chain(b.aggregates.by_tag.keys()).collect();
    tags.sort();
    tags.dedup();
    let by_tag = tags
        .into_iter()
        .map(|t| delta(t, a.aggregates.by_tag.get(t), b.aggregates.by_tag.get(t)))
        .collect();
    let b_rows: BTreeMap<&str, &ReportRow> = b.rows.iter().map(|r| (r.query_id.as_str(), r)).collect();
    let (mut a_wins, mut b_wins, mut ties) = (0, 0, 0);
    for r in &a.rows {
        if let Some(o) = b_rows.get(r.query_id.as_str()) {
            if (r.jf - o.jf).abs() <= 1e-12 {
                ties += 1;
            } else if r.jf > o.jf {
                a_wins += 1;
            } else {
                b_wins += 1;
            }
        }
    }
    Ok(Comparison {
        overall: delta("overall", Some(&a.aggregates.overall), Some(&b.aggregates.overall)),
        by_tag,
        a_wins,
        b_wins,
        ties,
    })
}
