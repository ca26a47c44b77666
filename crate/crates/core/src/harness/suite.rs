use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::scenario::vocab::QueryTerms;
use crate::scenario::{generate_scenario, save_scenario, GenerationParams, Query, QueryKind, Scenario};
use crate::tools::{coarse_sample_indices, event_matches};

pub const SUITE_FILE: &str = "suite.json";
pub const TAG_SHORT_EVENT: &str = "short_event";
pub const TAG_AUDIO: &str = "audio";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteParams {
    pub seed: u64,
    pub num_scenarios: usize,
    pub generation: GenerationParams,
}

impl Default for SuiteParams {
    fn default() -> Self {
        SuiteParams {
            seed: 42,
            num_scenarios: 50,
            generation: GenerationParams::default(),
        }
    }
}

/// A list of scenario files. Paths are relative to the suite directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSuite {
    pub suite_id: String,
    /// K used when computing the `short_event` tag.
    pub coarse_k: u32,
    pub scenarios: Vec<PathBuf>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl BenchmarkSuite {
    pub fn scenario_path(&self, i: usize) -> PathBuf {
        self.base_dir.join(&self.scenarios[i])
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let file = if path.is_dir() { path.join(SUITE_FILE) } else { path.to_path_buf() };
        let text = fs::read_to_string(&file).map_err(|e| HarnessError::Io(format!("{}: {e}", file.display())))?;
        let mut suite: BenchmarkSuite =
            serde_json::from_str(&text).map_err(|e| HarnessError::Parse(format!("{}: {e}", file.display())))?;
        suite.base_dir = file.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(suite)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), HarnessError> {
        let file = dir.as_ref().join(SUITE_FILE);
        let mut text = serde_json::to_string_pretty(self).expect("suite serializes");
        text.push('\n');
        fs::write(&file, text).map_err(|e| HarnessError::Io(format!("{}: {e}", file.display())))
    }

    /// Hash over the raw bytes of every scenario file, in order. Unreadable
    /// files contribute their error text.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.suite_id.as_bytes());
        h.update(self.coarse_k.to_le_bytes());
        for (i, rel) in self.scenarios.iter().enumerate() {
            h.update(rel.to_string_lossy().as_bytes());
            match fs::read(self.scenario_path(i)) {
                Ok(bytes) => h.update(&bytes),
                Err(e) => h.update(e.to_string().as_bytes()),
            }
        }
        hex::encode(h.finalize())
    }
}

/// Query kinds for `n` scenarios: 40% category, 30% whole-video, the rest
/// segment-specific with the larger half short.
pub fn stratify(n: usize) -> Vec<QueryKind> {
    let category = (n as f64 * 0.4).round() as usize;
    let whole = ((n as f64 * 0.3).round() as usize).min(n - category.min(n));
    let segment = n - category.min(n) - whole;
    let short = segment.div_ceil(2);
    let mut kinds = Vec::with_capacity(n);
    kinds.extend(std::iter::repeat_n(QueryKind::CategoryLevel, category.min(n)));
    kinds.extend(std::iter::repeat_n(QueryKind::WholeVideo, whole));
    kinds.extend(std::iter::repeat_n(QueryKind::SegmentShort, short));
    kinds.extend(std::iter::repeat_n(QueryKind::SegmentLong, segment - short));
    kinds
}

fn scenario_seed(suite_seed: u64, index: usize, attempt: u64) -> u64 {
    suite_seed
        .wrapping_mul(1_000_003)
        .wrapping_add(index as u64 * 1_000)
        .wrapping_add(attempt)
}

/// Writes `suite.json` and `scenarios/scenario_NNN.json` under `out_dir`.
pub fn generate_suite(params: &SuiteParams, out_dir: impl AsRef<Path>) -> Result<BenchmarkSuite, HarnessError> {
    params
        .generation
        .validate()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let out_dir = out_dir.as_ref();
    let scen_dir = out_dir.join("scenarios");
    fs::create_dir_all(&scen_dir).map_err(|e| HarnessError::Io(format!("{}: {e}", scen_dir.display())))?;
    let mut paths = Vec::new();
    for (i, kind) in stratify(params.num_scenarios).into_iter().enumerate() {
        let gen = GenerationParams {
            query_kind: Some(kind),
            ..params.generation.clone()
        };
        let mut attempt = 0;
        let scenario = loop {
            match generate_scenario(scenario_seed(params.seed, i, attempt), &gen) {
                Ok(s) => break s,
                Err(_) if attempt < 50 => attempt += 1,
                Err(e) => return Err(HarnessError::Scenario(e.to_string())),
            }
        };
        let rel = PathBuf::from("scenarios").join(format!("scenario_{i:03}.json"));
        save_scenario(&scenario, out_dir.join(&rel)).map_err(|e| HarnessError::Scenario(e.to_string()))?;
        paths.push(rel);
    }
    let suite = BenchmarkSuite {
        suite_id: format!("suite-seed{}-n{}", params.seed, params.num_scenarios),
        coarse_k: params.generation.coarse_k,
        scenarios: paths,
        base_dir: out_dir.to_path_buf(),
    };
    suite.save(out_dir)?;
    Ok(suite)
}

pub fn reference_tag(query: &Query) -> String {
    query.gt_reference_type.as_str().to_ascii_lowercase()
}

/// A matching event no longer than 10% of the video that avoids every
/// coarse sample.
pub fn is_short_event(scenario: &Scenario, query: &Query, coarse_k: u32) -> bool {
    let t = scenario.num_frames();
    let Ok(samples) = coarse_sample_indices(t, coarse_k.min(t)) else {
        return false;
    };
    let terms = QueryTerms::parse(&query.expression);
    scenario.events.iter().any(|e| {
        let Some(subject) = scenario.object(&e.subject_id) else { return false };
        event_matches(&terms, e, subject)
            && f64::from(e.span.frame_count()) <= 0.1 * f64::from(t)
            && !samples.iter().any(|&s| e.span.contains(s))
    })
}

/// Difficulty tags, computed from the scenario rather than stored.
pub fn query_tags(scenario: &Scenario, query: &Query, coarse_k: u32) -> Vec<String> {
    let mut tags = vec![reference_tag(query)];
    if is_short_event(scenario, query, coarse_k) {
        tags.push(TAG_SHORT_EVENT.into());
    }
    if query.uses_audio {
        tags.push(TAG_AUDIO.into());
    }
    tags
}
