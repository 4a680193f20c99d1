use std::fs;
use std::path::{Path, PathBuf};

use rasp_evt::config::ExperimentConfig;
use serde::Serialize;

use crate::CliError;

/// The per-run directory `<output>/<config hash>/`.
pub struct RunDir {
    dir: PathBuf,
    header: String,
    hash: String,
    seed: u64,
}

impl RunDir {
    pub fn create(config: &ExperimentConfig) -> Result<Self, CliError> {
        let dir = Path::new(&config.output).join(config.short_hash());
        fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        Ok(RunDir {
            dir,
            header: config.header(),
            hash: config.short_hash(),
            seed: config.seed,
        })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    pub fn csv(&self, name: &str) -> Csv {
        let mut buf = Vec::new();
        buf.extend_from_slice(self.header.as_bytes());
        buf.push(b'\n');
        Csv {
            path: self.dir.join(name),
            writer: csv::WriterBuilder::new()
                .terminator(csv::Terminator::Any(b'\n'))
                .from_writer(buf),
        }
    }

    /// Writes `value` as pretty JSON with added `config_hash` and `seed` fields.
    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let mut map = serde_json::Map::new();
        map.insert("config_hash".into(), self.hash.clone().into());
        map.insert("seed".into(), self.seed.into());
        match serde_json::to_value(value).map_err(|e| CliError::Other(e.to_string()))? {
            serde_json::Value::Object(fields) => map.extend(fields),
            other => {
                map.insert("value".into(), other);
            }
        }
        let mut text = serde_json::to_string_pretty(&serde_json::Value::Object(map))
            .map_err(|e| CliError::Other(e.to_string()))?;
        text.push('\n');
        let path = self.dir.join(name);
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}

/// A CSV file buffered in memory; `,` separated, LF line endings.
pub struct Csv {
    path: PathBuf,
    writer: csv::Writer<Vec<u8>>,
}

impl Csv {
    pub fn row<I, S>(&mut self, fields: I) -> Result<(), CliError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer
            .write_record(fields)
            .map_err(|e| CliError::Other(e.to_string()))
    }

    pub fn write(self) -> Result<PathBuf, CliError> {
        let bytes = self.writer.into_inner().map_err(|e| CliError::Other(e.to_string()))?;
        fs::write(&self.path, bytes).map_err(|e| CliError::io(&self.path, e))?;
        Ok(self.path)
    }
}

pub fn num(v: f64) -> String {
    format!("{v:?}")
}

pub fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}
