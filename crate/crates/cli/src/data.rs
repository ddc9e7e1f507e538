//! CSV ingestion and emission, and train-split standardization.

use std::fmt::Write as _;
use std::path::Path;

use ivdfm::diffcore::Tensor;
use log::warn;

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub values: Tensor,
    pub names: Vec<String>,
    /// Timestamp column, when one was named.
    pub labels: Option<Vec<String>>,
}

/// Read a numeric panel. Error locations are 1-based: data row (header
/// excluded) and file column.
pub fn ingest_csv(path: &Path, has_header: bool, timestamp_col: Option<usize>) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_csv(&text, has_header, timestamp_col)
}

pub fn parse_csv(text: &str, has_header: bool, timestamp_col: Option<usize>) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Option<Vec<String>> = if has_header {
        let h = reader.headers().map_err(|e| CliError::Data(format!("header: {e}")))?;
        Some(h.iter().map(str::to_string).collect())
    } else {
        None
    };
    let mut width = header.as_ref().map(Vec::len);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| CliError::Data(format!("row {row}: {e}")))?;
        let w = *width.get_or_insert(rec.len());
        if rec.len() != w {
            return Err(CliError::Data(format!(
                "row {row}: expected {w} fields, found {}",
                rec.len()
            )));
        }
        let mut vals = Vec::with_capacity(w);
        for (j, cell) in rec.iter().enumerate() {
            if Some(j) == timestamp_col {
                labels.push(cell.to_string());
                continue;
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| CliError::Data(format!("non-numeric cell {cell:?} at (row {row}, col {})", j + 1)))?;
            vals.push(v);
        }
        rows.push(vals);
    }
    let width = width.unwrap_or(0);
    if let Some(tc) = timestamp_col {
        if tc >= width {
            return Err(CliError::Data(format!(
                "timestamp column {tc} out of range for {width} columns"
            )));
        }
    }
    if rows.is_empty() {
        return Err(CliError::Data("no data rows".into()));
    }
    let mut names: Vec<String> = match header {
        Some(h) => h,
        None => (0..width).map(|j| format!("x{}", j + 1)).collect(),
    };
    if let Some(tc) = timestamp_col {
        names.remove(tc);
    }
    let values = Tensor::from_rows(&rows).map_err(|e| CliError::Data(e.to_string()))?;
    Ok(Dataset {
        values,
        names,
        labels: timestamp_col.map(|_| labels),
    })
}

/// 17 significant digits, enough to round-trip every `f64`.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

/// A CSV table under construction: header, rows of already formatted
/// cells, and a config-hash footer comment.
#[derive(Clone, Debug, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv_string(&self, config_hash: &str) -> String {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row).expect("in-memory write");
        }
        let mut out = String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 cells");
        writeln!(out, "# config-hash: {config_hash}").unwrap();
        out
    }

    pub fn write(&self, path: &Path, config_hash: &str) -> Result<()> {
        std::fs::write(path, self.to_csv_string(config_hash)).map_err(|e| CliError::io(path, e))
    }
}

/// Matrix as a table with the given column names.
pub fn matrix_table(names: &[String], values: &Tensor) -> Table {
    let mut t = Table::new(names.iter().cloned());
    for i in 0..values.rows() {
        t.push(values.row(i).iter().map(|&v| fmt_f64(v)).collect());
    }
    t
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scaler {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

/// Column means and population standard deviations of the training split;
/// zero deviations are replaced by 1.
pub fn fit_scaler(train: &Tensor) -> Result<Scaler> {
    let (t_len, n) = train.dims();
    if t_len < 2 {
        return Err(CliError::Data(format!("scaler needs more than one row, got {t_len}")));
    }
    let mut means = vec![0.0; n];
    let mut stds = vec![0.0; n];
    for j in 0..n {
        let col = train.column(j);
        let m = col.iter().sum::<f64>() / t_len as f64;
        let s = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / t_len as f64).sqrt();
        means[j] = m;
        stds[j] = if s > 1e-12 {
            s
        } else {
            warn!("column {j} is constant on the training split; leaving its scale at 1");
            1.0
        };
    }
    Ok(Scaler { means, stds })
}

pub fn apply_scaler(scaler: &Scaler, data: &Tensor) -> Result<Tensor> {
    if data.cols() != scaler.means.len() {
        return Err(CliError::Data(format!(
            "scaler was fit on {} columns, got {}",
            scaler.means.len(),
            data.cols()
        )));
    }
    let mut out = data.clone();
    for t in 0..data.rows() {
        for (j, v) in out.row_mut(t).iter_mut().enumerate() {
            *v = (*v - scaler.means[j]) / scaler.stds[j];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reads_small_file_with_header() {
        let d = parse_csv("a,b\n1,2\n3,4.5\n-1e-3,7\n", true, None).unwrap();
        assert_eq!(d.values.dims(), (3, 2));
        assert_eq!(d.names, vec!["a", "b"]);
        assert_eq!(d.values.get(1, 1), 4.5);
        assert_eq!(d.labels, None);
    }

    #[test]
    fn timestamp_column_becomes_labels() {
        let d = parse_csv("date,x,y\n2020-01-01,1,2\n2020-01-02,3,4\n", true, Some(0)).unwrap();
        assert_eq!(d.names, vec!["x", "y"]);
        assert_eq!(d.labels.unwrap(), vec!["2020-01-01", "2020-01-02"]);
        assert_eq!(d.values.row(1), &[3.0, 4.0]);
    }

    #[test]
    fn bad_cell_is_located() {
        let text = "a,b\n1,2\n1,2\n1,2\n1,2\n1,oops\n";
        let err = parse_csv(text, true, None).unwrap_err().to_string();
        assert!(err.contains("row 5, col 2"), "{err}");
        let err = parse_csv("a,b\n1,2\n3\n", true, None).unwrap_err().to_string();
        assert!(err.contains("row 2"), "{err}");
        assert!(parse_csv("a,b\n", true, None).is_err());
    }

    #[test]
    fn write_read_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = Tensor::matrix(
            7,
            3,
            (0..21)
                .map(|_| rng.random_range(-1e6..1e6) * rng.random::<f64>())
                .collect(),
        );
        let names: Vec<String> = ["p", "q", "r"].iter().map(|s| s.to_string()).collect();
        let text = matrix_table(&names, &m).to_csv_string("abc");
        assert!(text.ends_with("# config-hash: abc\n"));
        let back = parse_csv(&text, true, None).unwrap();
        assert!(back.values.max_abs_diff(&m) <= 1e-15 * 1e6);
        assert_eq!(back.values, m);
    }

    #[test]
    fn scaler_standardizes_training_split() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::matrix(50, 3, (0..150).map(|_| rng.random_range(-3.0..10.0)).collect());
        let s = fit_scaler(&x).unwrap();
        let z = apply_scaler(&s, &x).unwrap();
        for j in 0..3 {
            let col = z.column(j);
            let m = col.iter().sum::<f64>() / 50.0;
            let v = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 50.0;
            assert!(m.abs() < 1e-12 && (v.sqrt() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_column_is_only_shifted() {
        let x = Tensor::matrix(4, 2, vec![5.0, 1.0, 5.0, 2.0, 5.0, 3.0, 5.0, 4.0]);
        let s = fit_scaler(&x).unwrap();
        assert_eq!(s.stds[0], 1.0);
        let z = apply_scaler(&s, &x).unwrap();
        assert!(z.column(0).iter().all(|v| *v == 0.0));
        assert!(fit_scaler(&Tensor::zeros(1, 2)).is_err());
        assert!(apply_scaler(&s, &Tensor::zeros(3, 3)).is_err());
    }

    #[test]
    fn train_statistics_differ_from_self_standardization_under_shift() {
        let train = Tensor::matrix(4, 1, vec![0.0, 1.0, 2.0, 3.0]);
        let test = Tensor::matrix(3, 1, vec![10.0, 11.0, 12.0]);
        let s = fit_scaler(&train).unwrap();
        let a = apply_scaler(&s, &test).unwrap();
        let b = apply_scaler(&fit_scaler(&test).unwrap(), &test).unwrap();
        assert!(a.max_abs_diff(&b) > 1.0);
    }
}
