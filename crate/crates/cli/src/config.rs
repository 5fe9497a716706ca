use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use persumm_core::corpus::FilterPolicy;
use persumm_core::rewards::PremiseSet;
use persumm_core::Weights;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum PolicyName {
    Manual,
    Augment,
}

impl PolicyName {
    pub fn constants(self) -> FilterPolicy {
        match self {
            PolicyName::Manual => FilterPolicy::manual(),
            PolicyName::Augment => FilterPolicy::augmentation(),
        }
    }
}

/// Flat run configuration. Every field is optional in the file; flags
/// override file values and defaults fill the rest.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub policy: Option<PolicyName>,
    /// Explicit filter constants; replaces the named policy's constants.
    pub filter: Option<FilterPolicy>,
    pub cutoff: Option<f64>,
    pub threshold: Option<f64>,
    pub gammas: Option<Weights>,
    pub seed: Option<u64>,
    pub scores: Option<String>,
    pub embeddings: Option<String>,
    pub endpoint: Option<String>,
    pub jobs: Option<usize>,
    pub steps: Option<usize>,
    pub warmup: Option<usize>,
    pub lr: Option<f64>,
    pub batch: Option<usize>,
    pub premises: Option<PremiseSet>,
    #[serde(rename = "in")]
    pub input: Option<PathBuf>,
    #[serde(rename = "out")]
    pub output: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub forums: Option<PathBuf>,
    pub pairs: Option<PathBuf>,
    pub summaries: Option<PathBuf>,
    pub inputs: Option<PathBuf>,
    pub silver: Option<PathBuf>,
    pub texts: Option<PathBuf>,
    pub relevance: Option<PathBuf>,
    pub threads: Option<PathBuf>,
}

pub fn load(path: Option<&Path>) -> Result<RunConfig> {
    let Some(path) = path else { return Ok(RunConfig::default()) };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

/// `slot = flag` when the flag was given.
pub fn set<T>(slot: &mut Option<T>, flag: Option<T>) {
    if flag.is_some() {
        *slot = flag;
    }
}

pub fn require<'a, T>(slot: &'a Option<T>, name: &str) -> Result<&'a T> {
    slot.as_ref().with_context(|| format!("missing --{name} (flag or config file)"))
}

impl RunConfig {
    /// The effective configuration as JSON with unset fields omitted.
    pub fn echo(&self) -> Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(map) = &mut v {
            map.retain(|_, x| !x.is_null());
        }
        v
    }

    /// Fails when two referenced paths name the same file. A fixture used
    /// as both the score and the embedding backend counts once.
    pub fn check_distinct_paths(&self) -> Result<()> {
        let mut named: Vec<(&str, PathBuf)> = [
            ("in", &self.input),
            ("out", &self.output),
            ("report", &self.report),
            ("forums", &self.forums),
            ("pairs", &self.pairs),
            ("summaries", &self.summaries),
            ("inputs", &self.inputs),
            ("silver", &self.silver),
            ("texts", &self.texts),
            ("relevance", &self.relevance),
            ("threads", &self.threads),
        ]
        .into_iter()
        .filter_map(|(n, p)| p.clone().map(|p| (n, p)))
        .collect();
        let fixture = |spec: &Option<String>| spec.as_deref().filter(|s| is_fixture(s)).map(PathBuf::from);
        match (fixture(&self.scores), fixture(&self.embeddings)) {
            (Some(a), Some(b)) if same_file(&a, &b) => named.push(("scores", a)),
            (a, b) => {
                named.extend(a.map(|p| ("scores", p)));
                named.extend(b.map(|p| ("embeddings", p)));
            }
        }
        for (i, (na, pa)) in named.iter().enumerate() {
            for (nb, pb) in &named[i + 1..] {
                if same_file(pa, pb) {
                    bail!("--{na} and --{nb} both refer to {}", pa.display());
                }
            }
        }
        Ok(())
    }
}

fn is_fixture(spec: &str) -> bool {
    matches!(persumm_core::scoring::Backend::parse(spec), Ok(persumm_core::scoring::Backend::Fixture(_)))
}

fn resolve(p: &Path) -> PathBuf {
    p.canonicalize().or_else(|_| std::path::absolute(p)).unwrap_or_else(|_| p.to_path_buf())
}

fn same_file(a: &Path, b: &Path) -> bool {
    resolve(a) == resolve(b)
}

/// Parses `"0.9,0.1"` into mixing weights.
pub fn parse_gammas(s: &str) -> std::result::Result<Weights, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let [rl, ml] = parts.as_slice() else { return Err(format!("expected two comma-separated weights, got {s:?}")) };
    let rl: f64 = rl.parse().map_err(|e| format!("gamma_rl: {e}"))?;
    let ml: f64 = ml.parse().map_err(|e| format!("gamma_ml: {e}"))?;
    Weights::new(rl, ml).map_err(|e| e.to_string())
}
