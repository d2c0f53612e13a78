use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::task::{Task, TaskLabels};

pub const MANIFEST_HEADER: [&str; 7] = ["path", "mos", "snr", "sti", "t60", "drr", "c50"];

/// One dataset entry: an audio or embedding file plus whatever labels are
/// known for it. Rows without labels are prediction-only.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub source_path: String,
    pub labels: TaskLabels,
}

impl ManifestRow {
    pub fn new(source_path: impl Into<String>, labels: TaskLabels) -> Self {
        Self {
            source_path: source_path.into(),
            labels,
        }
    }

    pub fn is_prediction_only(&self) -> bool {
        self.labels.is_empty()
    }

    /// Path of the source file, relative paths taken against `base`.
    pub fn resolve(&self, base: &Path) -> PathBuf {
        let p = Path::new(&self.source_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    }
}

pub fn read_manifest<R: Read>(reader: R) -> Result<Vec<ManifestRow>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Format(format!("manifest header: {e}")))?
        .clone();
    let mut columns = [0usize; 7];
    for (slot, name) in columns.iter_mut().zip(MANIFEST_HEADER) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema {
                column: name.to_string(),
            })?;
    }

    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            Error::Row {
                line,
                message: e.to_string(),
            }
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let row_err = |message: String| Error::Row { line, message };

        let path = record.get(columns[0]).unwrap_or("");
        if path.is_empty() {
            return Err(row_err("empty path".into()));
        }
        let mut labels = TaskLabels::new();
        for (task, &col) in Task::ALL.iter().zip(&columns[1..]) {
            let cell = record.get(col).unwrap_or("");
            if cell.is_empty() {
                continue;
            }
            let value: f64 = cell
                .parse()
                .map_err(|_| row_err(format!("column `{}`: cannot parse `{cell}`", task.column())))?;
            labels.set(*task, Some(value));
        }
        labels.validate().map_err(row_err)?;
        rows.push(ManifestRow::new(path, labels));
    }
    Ok(rows)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRow>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_manifest(file)
}

pub fn write_manifest<W: Write>(writer: W, rows: &[ManifestRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().from_writer(writer);
    let csv_err = |e: csv::Error| Error::Data(format!("manifest write: {e}"));
    w.write_record(MANIFEST_HEADER).map_err(csv_err)?;
    for row in rows {
        let mut record = vec![row.source_path.clone()];
        record.extend(
            Task::ALL
                .iter()
                .map(|&t| row.labels.get(t).map(|v| v.to_string()).unwrap_or_default()),
        );
        w.write_record(&record).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Data(format!("manifest write: {e}")))?;
    Ok(())
}

pub fn save_manifest(path: impl AsRef<Path>, rows: &[ManifestRow]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_manifest(std::io::BufWriter::new(file), rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(text: &str) -> Result<Vec<ManifestRow>> {
        read_manifest(text.as_bytes())
    }

    #[test]
    fn mos_only_row() {
        let rows = parse("path,mos,snr,sti,t60,drr,c50\na.wav,4.2,,,,,\n").unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].labels.get(Task::Mos), Some(4.2));
        assert!(Task::ALL[1..].iter().all(|&t| rows[0].labels.get(t).is_none()));
    }

    #[test]
    fn acoustics_row() {
        let rows = parse("path,mos,snr,sti,t60,drr,c50\nb.emb,,10.0,0.7,0.4,5.0,12.0\n").unwrap();
        let l = rows[0].labels;
        assert_eq!(l.get(Task::Mos), None);
        assert_eq!(l.get(Task::Snr), Some(10.0));
        assert_eq!(l.get(Task::Sti), Some(0.7));
        assert_eq!(l.get(Task::T60), Some(0.4));
        assert_eq!(l.get(Task::Drr), Some(5.0));
        assert_eq!(l.get(Task::C50), Some(12.0));
    }

    #[test]
    fn missing_column_is_named() {
        match parse("path,mos,snr,t60,drr,c50\na.wav,1,,,,\n") {
            Err(Error::Schema { column }) => assert_eq!(column, "sti"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_number_reports_line() {
        match parse("path,mos,snr,sti,t60,drr,c50\na.wav,4,,,,,\nb.wav,x,,,,,\n") {
            Err(Error::Row { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn out_of_range_label_rejected() {
        assert!(matches!(
            parse("path,mos,snr,sti,t60,drr,c50\na.wav,6,,,,,\n"),
            Err(Error::Row { line: 2, .. })
        ));
    }

    #[test]
    fn order_and_prediction_only_rows() {
        let rows = parse("path,mos,snr,sti,t60,drr,c50\nz.wav,,,,,,\na.wav,3,,,,,\n").unwrap();
        assert_eq!(rows[0].source_path, "z.wav");
        assert!(rows[0].is_prediction_only());
        assert!(!rows[1].is_prediction_only());
    }

    fn arb_row() -> impl Strategy<Value = ManifestRow> {
        (
            "[a-z][a-z0-9_/]{0,12}\\.(wav|sqe)",
            prop::option::of(1.0f64..=5.0),
            prop::option::of(-20.0f64..40.0),
            prop::option::of(0.0f64..=1.0),
            prop::option::of(0.0f64..3.0),
            prop::option::of(-10.0f64..20.0),
            prop::option::of(-10.0f64..30.0),
        )
            .prop_map(|(p, mos, snr, sti, t60, drr, c50)| {
                let mut l = TaskLabels::new();
                for (t, v) in Task::ALL.into_iter().zip([mos, snr, sti, t60, drr, c50]) {
                    l.set(t, v);
                }
                ManifestRow::new(p, l)
            })
    }

    proptest! {
        #[test]
        fn save_load_roundtrip(rows in prop::collection::vec(arb_row(), 0..20)) {
            let mut buf = Vec::new();
            write_manifest(&mut buf, &rows).unwrap();
            prop_assert_eq!(read_manifest(buf.as_slice()).unwrap(), rows);
        }
    }
}
