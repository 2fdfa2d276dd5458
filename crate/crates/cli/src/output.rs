//! Deterministic CSV and JSON rendering with a metadata header.

use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use urnedge::oracle::fmt17;

pub fn num(x: f64) -> String {
    fmt17(x)
}

/// CSV field, quoted when it contains a separator or a quote.
pub fn quote(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Provenance written ahead of every output.
pub struct Meta {
    pub command: String,
    pub config_sha256: String,
    pub tail_eps: f64,
    pub q_v: Option<f64>,
    pub seed: u64,
    pub reps: usize,
}

impl Meta {
    /// `config` must already hold the parsed model, kernel and options.
    pub fn new(command: &str, config: &Value, tail_eps: f64, q_v: Option<f64>, seed: u64, reps: usize) -> Self {
        let canonical = serde_json::to_string(config).expect("config serializes");
        Meta {
            command: command.to_string(),
            config_sha256: hex::encode(Sha256::digest(canonical.as_bytes())),
            tail_eps,
            q_v,
            seed,
            reps,
        }
    }

    fn pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("tool", format!("urnedge {}", env!("CARGO_PKG_VERSION"))),
            ("command", self.command.clone()),
            ("config_sha256", self.config_sha256.clone()),
            ("tail_eps", num(self.tail_eps)),
            ("q_v", self.q_v.map_or("auto".into(), num)),
            ("seed", self.seed.to_string()),
            ("reps", self.reps.to_string()),
        ]
    }

    /// `# key: value` lines, followed by command-specific extras.
    pub fn csv_header(&self, extra: &[(&str, String)]) -> String {
        let mut out = String::new();
        for (k, v) in self.pairs() {
            out.push_str(&format!("# {k}: {v}\n"));
        }
        for (k, v) in extra {
            out.push_str(&format!("# {k}: {v}\n"));
        }
        out
    }

    pub fn to_json(&self) -> Value {
        json!({
            "tool": format!("urnedge {}", env!("CARGO_PKG_VERSION")),
            "command": self.command,
            "config_sha256": self.config_sha256,
            "tail_eps": self.tail_eps,
            "q_v": self.q_v,
            "seed": self.seed,
            "reps": self.reps,
        })
    }
}

/// Pretty JSON document `{"meta": ..., <body fields>}`.
pub fn json_doc(meta: &Meta, body: Value) -> String {
    let mut doc = Map::new();
    doc.insert("meta".into(), meta.to_json());
    if let Value::Object(fields) = body {
        doc.extend(fields);
    }
    serde_json::to_string_pretty(&Value::Object(doc)).expect("document serializes") + "\n"
}

/// Numeric table with named columns.
pub struct Table {
    columns: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Table {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",") + "\n";
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|&x| num(x)).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> Value {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|row| {
                let obj: Map<String, Value> = self.columns.iter().cloned().zip(row.iter().map(|&x| json!(x))).collect();
                Value::Object(obj)
            })
            .collect();
        Value::Array(rows)
    }
}
