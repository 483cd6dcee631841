use std::path::Path;

use serde_json::{json, Value};

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug)]
pub enum CliError {
    Core(ldas::Error),
    Usage(String),
    InputChanged { path: String },
}

impl From<ldas::Error> for CliError {
    fn from(e: ldas::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Core(ldas::Error::Io { path: path.to_path_buf(), source })
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }

    /// `{"error": {"kind": ..., "message": ..., ...}}` on one line.
    pub fn to_json(&self) -> Value {
        let body = match self {
            CliError::Usage(m) => json!({ "kind": "usage", "message": m }),
            CliError::InputChanged { path } => json!({
                "kind": "input_changed",
                "message": format!("input '{path}' differs from the manifest hash"),
                "path": path,
            }),
            CliError::Core(e) => {
                let mut body = json!({ "kind": e.kind(), "message": e.to_string() });
                let mut inner = e;
                if let ldas::Error::AtIteration { iteration, source } = e {
                    body["iteration"] = json!(iteration);
                    inner = source;
                }
                match inner {
                    ldas::Error::InvalidValue { row, column, .. } => {
                        body["row"] = json!(row);
                        body["column"] = json!(column);
                    }
                    ldas::Error::RankDeficient { columns } => body["columns"] = json!(columns),
                    ldas::Error::Io { path, .. } => body["path"] = json!(path.display().to_string()),
                    _ => {}
                }
                body
            }
        };
        json!({ "error": body })
    }
}
