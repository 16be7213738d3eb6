//! CSV tables and their all-or-nothing placement in the output directory.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

/// Formats a float so that it parses back to the same value. Very small and
/// very large magnitudes use exponent notation.
pub fn number(x: f64) -> String {
    let a = x.abs();
    if a != 0.0 && a.is_finite() && !(1e-4..1e15).contains(&a) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

/// An in-memory CSV file.
pub struct Table {
    name: String,
    writer: csv::Writer<Vec<u8>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        let mut writer = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        writer
            .write_record(header)
            .expect("writing to memory cannot fail");
        Table {
            name: name.to_string(),
            writer,
        }
    }

    pub fn row<I, S>(&mut self, fields: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer
            .write_record(fields)
            .expect("writing to memory cannot fail");
    }

    pub fn numbers(&mut self, values: &[f64]) {
        self.row(values.iter().map(|&v| number(v)));
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.writer
            .into_inner()
            .expect("flushing memory cannot fail")
    }
}

/// Writes every table to a temporary file in `dir`, then renames them all
/// into place. Nothing is renamed unless every write succeeded.
pub fn commit(dir: &Path, tables: Vec<Table>) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut staged = Vec::with_capacity(tables.len());
    let pid = std::process::id();
    for table in tables {
        let target = dir.join(table.name());
        let temp = dir.join(format!(".{}.{pid}.tmp", table.name()));
        let bytes = table.into_bytes();
        if let Err(e) = fs::write(&temp, bytes) {
            for (t, _) in &staged {
                let _ = fs::remove_file(t);
            }
            let _ = fs::remove_file(&temp);
            return Err(e).with_context(|| format!("writing {}", temp.display()));
        }
        staged.push((temp, target));
    }
    let mut written = Vec::with_capacity(staged.len());
    for (temp, target) in staged {
        fs::rename(&temp, &target)
            .with_context(|| format!("moving {} to {}", temp.display(), target.display()))?;
        written.push(target);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for x in [0.0, 1.0, -2.5, 0.1 + 0.2, 1e-30, 6.02e23, 123456.789, -3.3e-7] {
            assert_eq!(number(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(number(0.25), "0.25");
        assert_eq!(number(1e-30), "1e-30");
    }

    #[test]
    fn table_layout() {
        let mut t = Table::new("x.csv", &["a", "b"]);
        t.numbers(&[1.0, 0.5]);
        t.row(["unbounded", "2"]);
        assert_eq!(String::from_utf8(t.into_bytes()).unwrap(), "a,b\n1,0.5\nunbounded,2\n");
    }
}
