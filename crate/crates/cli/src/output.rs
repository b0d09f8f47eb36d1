//! In-memory output files with provenance, written to disk in one step.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::error::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Identifies the run that produced a file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new(command: &str, config_hash: String, seed: u64) -> Self {
        Self { tool: "perfcrd".into(), version: VERSION.into(), command: command.into(), config_hash, seed }
    }

    /// Leading comment line of every CSV file.
    pub fn csv_comment(&self) -> String {
        format!("# {} {} {} config={} seed={}\n", self.tool, self.version, self.command, self.config_hash, self.seed)
    }
}

/// Relative path to contents, in path order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Outputs {
    pub files: BTreeMap<String, Vec<u8>>,
}

impl Outputs {
    pub fn csv(&mut self, name: &str, prov: &Provenance, body: &str) {
        let mut text = prov.csv_comment();
        text.push_str(body);
        self.files.insert(name.into(), text.into_bytes());
    }

    /// Serializes `value` under `"provenance"` plus the value's own fields.
    pub fn json<T: Serialize>(&mut self, name: &str, prov: &Provenance, value: &T) {
        let mut v = serde_json::to_value(value).expect("output serializes");
        let wrapped = match v {
            serde_json::Value::Object(ref mut map) => {
                let mut out = serde_json::Map::new();
                out.insert("provenance".into(), serde_json::to_value(prov).expect("provenance serializes"));
                out.append(map);
                serde_json::Value::Object(out)
            }
            other => serde_json::json!({ "provenance": prov, "value": other }),
        };
        let mut text = serde_json::to_string_pretty(&wrapped).expect("output serializes");
        text.push('\n');
        self.files.insert(name.into(), text.into_bytes());
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.files.get(name).and_then(|b| std::str::from_utf8(b).ok())
    }

    pub fn write_to(&self, dir: &Path) -> Result<(), CliError> {
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(|e| CliError::Io(format!("{}: {e}", parent.display())))?;
            }
            std::fs::write(&path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        }
        Ok(())
    }
}

/// CSV text from rows of already formatted fields.
pub fn csv_table(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

/// Reads a CSV produced by this tool, skipping the provenance comment.
pub fn read_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<String>>), CliError> {
    let body: String = text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect();
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let header = r.headers().map_err(|e| CliError::Io(e.to_string()))?.iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(String::from).collect()).map_err(|e| CliError::Io(e.to_string())))
        .collect::<Result<_, _>>()?;
    Ok((header, rows))
}
