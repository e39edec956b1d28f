//! Run summaries: JSON records per experiment and consolidated tables.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

/// One named check inside a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckRow {
    pub name: String,
    pub estimate: Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub se: Option<Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<Value>,
    /// Human-readable contract this row is judged against.
    pub contract: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub elapsed: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_paths: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub pass: bool,
}

impl CheckRow {
    pub fn scalar(name: &str, estimate: f64, contract: &str, pass: bool) -> Self {
        CheckRow {
            name: name.into(),
            estimate: serde_json::json!(estimate),
            se: None,
            target: None,
            contract: contract.into(),
            elapsed: None,
            n_paths: None,
            seed: None,
            pass,
        }
    }

    pub fn with_se(mut self, se: f64) -> Self {
        self.se = Some(serde_json::json!(se));
        self
    }

    pub fn with_target(mut self, target: Value) -> Self {
        self.target = Some(target);
        self
    }

    pub fn with_mc(mut self, elapsed: f64, n_paths: usize, seed: u64) -> Self {
        self.elapsed = Some(elapsed);
        self.n_paths = Some(n_paths);
        self.seed = Some(seed);
        self
    }
}

/// Full record of one experiment run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub experiment: String,
    pub model: String,
    /// Fully resolved configuration, defaults materialized.
    pub config: Value,
    pub results: Vec<CheckRow>,
    pub pass: bool,
    /// Wall-clock stamp; the only field allowed to differ between reruns.
    pub generated_unix_ms: u64,
}

impl RunSummary {
    pub fn new(experiment: &str, model: &str, config: Value, results: Vec<CheckRow>) -> Self {
        let pass = results.iter().all(|r| r.pass);
        RunSummary {
            experiment: experiment.into(),
            model: model.into(),
            config,
            results,
            pass,
            generated_unix_ms: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_millis() as u64)
                .unwrap_or(0),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("summary serializes");
        s.push('\n');
        s
    }

    pub fn write_json(&self, path: &Path) -> Result<(), CliError> {
        std::fs::write(path, self.to_json())
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }

    pub fn read_json(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::SchemaMismatch(format!("{}: {e}", path.display())))
    }

    /// One line per check on stdout.
    pub fn print(&self) {
        for row in &self.results {
            println!(
                "  [{}] {} — {} (estimate {})",
                if row.pass { "pass" } else { "FAIL" },
                row.name,
                row.contract,
                compact(&row.estimate),
            );
        }
        println!(
            "{} {}: {}",
            self.experiment,
            self.model,
            if self.pass { "PASS" } else { "FAIL" }
        );
    }
}

fn compact(v: &Value) -> String {
    match v {
        Value::Number(n) => n
            .as_f64()
            .map(|f| format!("{f:.6e}"))
            .unwrap_or_else(|| n.to_string()),
        other => other.to_string(),
    }
}

/// Renders merged summaries as CSV (17 significant digits on numbers come
/// from the rows themselves) and as a Markdown table with a roll-up verdict.
pub fn consolidate(summaries: &[(String, RunSummary)]) -> (String, String, bool) {
    let mut csv = String::from("source,experiment,model,seed,checks,failed,pass\n");
    let mut md = String::from(
        "| source | experiment | model | seed | checks | failed | pass |\n\
         |---|---|---|---|---|---|---|\n",
    );
    let mut all_pass = true;
    for (source, s) in summaries {
        let seed = s
            .results
            .iter()
            .find_map(|r| r.seed)
            .map(|v| v.to_string())
            .unwrap_or_default();
        let failed: Vec<&str> = s
            .results
            .iter()
            .filter(|r| !r.pass)
            .map(|r| r.name.as_str())
            .collect();
        all_pass &= s.pass;
        csv.push_str(&format!(
            "{source},{},{},{seed},{},{},{}\n",
            s.experiment,
            s.model,
            s.results.len(),
            failed.join(";"),
            if s.pass { "PASS" } else { "FAIL" }
        ));
        md.push_str(&format!(
            "| {source} | {} | {} | {seed} | {} | {} | {} |\n",
            s.experiment,
            s.model,
            s.results.len(),
            failed.join(", "),
            if s.pass { "PASS" } else { "FAIL" }
        ));
    }
    md.push_str(&format!(
        "\nOVERALL: {}\n",
        if all_pass { "PASS" } else { "FAIL" }
    ));
    (csv, md, all_pass)
}
