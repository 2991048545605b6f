//! Report files. Every CSV row starts with the run's seed and config hash.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

/// Settings shared by every file a run writes.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub seed: u64,
    pub config_hash: String,
    pub out: PathBuf,
    pub strict: bool,
}

impl RunContext {
    pub fn path(&self, file: &str) -> PathBuf {
        self.out.join(file)
    }

    pub fn table(&self, file: &str, header: &[&str]) -> Result<Table> {
        Table::create(&self.path(file), self, header)
    }

    pub fn write_text(&self, file: &str, text: &str) -> Result<()> {
        let path = self.path(file);
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}

pub struct Table {
    writer: csv::Writer<BufWriter<File>>,
    prefix: [String; 2],
    path: PathBuf,
}

impl Table {
    fn create(path: &Path, ctx: &RunContext, header: &[&str]) -> Result<Table> {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        let mut writer = csv::Writer::from_writer(BufWriter::new(file));
        writer.write_record(["seed", "config_hash"].iter().chain(header))?;
        Ok(Table {
            writer,
            prefix: [ctx.seed.to_string(), ctx.config_hash.clone()],
            path: path.to_path_buf(),
        })
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        let prefix = self.prefix.iter().map(|s| s.as_bytes().to_vec());
        let record: Vec<Vec<u8>> = prefix.chain(fields.into_iter().map(|f| f.as_ref().to_vec())).collect();
        self.writer
            .write_record(&record)
            .with_context(|| format!("writing {}", self.path.display()))
    }

    pub fn finish(mut self) -> Result<()> {
        self.writer
            .flush()
            .with_context(|| format!("flushing {}", self.path.display()))
    }
}

/// Empty string for `None`, the value's text otherwise.
pub fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}
