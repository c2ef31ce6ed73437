//! Balanced panel container and its delimited-text formats.
//!
//! The long format has one row per `(unit, time)` cell with columns
//! `unit,time,y,x1,...,xK`. Units and periods may be any labels; they are
//! ordered by first appearance and must form a complete grid. Observed
//! loadings (Φ) use one row per unit `unit,phi1,...`, and common regressors
//! (D) one row per period `time,d1,...`.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::numerical_rank;

/// Observed outcome and regressors for N units over T periods.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    y: DMatrix<f64>,
    x: Vec<DMatrix<f64>>,
    phi_observed: Option<DMatrix<f64>>,
    d_observed: Option<DMatrix<f64>>,
    residualized: bool,
}

impl PanelDataset {
    /// Builds a panel from `y` (N×T) and one N×T matrix per regressor.
    pub fn new(y: DMatrix<f64>, x: Vec<DMatrix<f64>>) -> Result<Self> {
        let (n, t) = y.shape();
        if n < 2 || t < 2 {
            return Err(Error::invalid(format!(
                "panel needs N >= 2 and T >= 2, got N={n}, T={t}"
            )));
        }
        for (k, xk) in x.iter().enumerate() {
            if xk.shape() != (n, t) {
                return Err(Error::dim(format!(
                    "regressor {} is {}x{}, expected {n}x{t}",
                    k + 1,
                    xk.nrows(),
                    xk.ncols()
                )));
            }
        }
        check_finite(&y, "y")?;
        for (k, xk) in x.iter().enumerate() {
            check_finite(xk, &format!("x{}", k + 1))?;
        }
        Ok(Self {
            y,
            x,
            phi_observed: None,
            d_observed: None,
            residualized: false,
        })
    }

    /// Attaches observed time-invariant loadings Φ (N×r₂, full column rank).
    pub fn with_phi(mut self, phi: DMatrix<f64>) -> Result<Self> {
        if phi.nrows() != self.n_units() {
            return Err(Error::dim(format!(
                "phi has {} rows, panel has {} units",
                phi.nrows(),
                self.n_units()
            )));
        }
        check_finite(&phi, "phi")?;
        let rank = numerical_rank(&phi);
        if rank < phi.ncols() {
            return Err(Error::RankDeficient {
                what: "observed loadings phi",
                rank,
                expected: phi.ncols(),
            });
        }
        self.phi_observed = Some(phi);
        Ok(self)
    }

    /// Attaches observed common regressors D (T×r₃, full column rank).
    pub fn with_common(mut self, d: DMatrix<f64>) -> Result<Self> {
        if d.nrows() != self.n_periods() {
            return Err(Error::dim(format!(
                "common regressors have {} rows, panel has {} periods",
                d.nrows(),
                self.n_periods()
            )));
        }
        check_finite(&d, "d")?;
        let rank = numerical_rank(&d);
        if rank < d.ncols() {
            return Err(Error::RankDeficient {
                what: "common regressors d",
                rank,
                expected: d.ncols(),
            });
        }
        self.d_observed = Some(d);
        Ok(self)
    }

    pub fn n_units(&self) -> usize {
        self.y.nrows()
    }

    pub fn n_periods(&self) -> usize {
        self.y.ncols()
    }

    pub fn n_regressors(&self) -> usize {
        self.x.len()
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn x(&self) -> &[DMatrix<f64>] {
        &self.x
    }

    pub fn phi_observed(&self) -> Option<&DMatrix<f64>> {
        self.phi_observed.as_ref()
    }

    pub fn d_observed(&self) -> Option<&DMatrix<f64>> {
        self.d_observed.as_ref()
    }

    /// True when the series were already projected off a common-regressor
    /// basis, in which case moment construction uses them as they are.
    pub fn is_residualized(&self) -> bool {
        self.residualized
    }

    pub(crate) fn into_residualized(mut self) -> Self {
        self.residualized = true;
        self
    }

    pub(crate) fn without_observed(mut self) -> Self {
        self.phi_observed = None;
        self.d_observed = None;
        self
    }

    /// Reads a long-format panel from a CSV file.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(file)
    }

    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| csv_error(e, 1))?
            .iter()
            .map(str::to_owned)
            .collect::<Vec<_>>();
        if headers.len() < 3 {
            return Err(Error::Parse {
                line: 1,
                message: "expected columns unit,time,y[,x1,...]".into(),
            });
        }
        let k = headers.len() - 3;

        let mut units: Vec<String> = Vec::new();
        let mut unit_idx: HashMap<String, usize> = HashMap::new();
        let mut times: Vec<String> = Vec::new();
        let mut time_idx: HashMap<String, usize> = HashMap::new();
        let mut cells: Vec<(usize, usize, Vec<f64>, usize)> = Vec::new();

        for (row, rec) in rdr.records().enumerate() {
            let line = row + 2;
            let rec = rec.map_err(|e| csv_error(e, line))?;
            if rec.len() != headers.len() {
                return Err(Error::Parse {
                    line,
                    message: format!("expected {} fields, found {}", headers.len(), rec.len()),
                });
            }
            let u = intern(&mut units, &mut unit_idx, &rec[0]);
            let t = intern(&mut times, &mut time_idx, &rec[1]);
            let vals = rec
                .iter()
                .skip(2)
                .enumerate()
                .map(|(j, s)| parse_value(s, line, &headers[j + 2]))
                .collect::<Result<Vec<_>>>()?;
            cells.push((u, t, vals, line));
        }

        let (n, t) = (units.len(), times.len());
        if n * t != cells.len() {
            return Err(Error::invalid(format!(
                "unbalanced panel: {} rows for {n} units x {t} periods",
                cells.len()
            )));
        }
        let mut y = DMatrix::from_element(n, t, f64::NAN);
        let mut x = vec![DMatrix::from_element(n, t, f64::NAN); k];
        let mut seen = vec![false; n * t];
        for (u, p, vals, line) in cells {
            if std::mem::replace(&mut seen[u * t + p], true) {
                return Err(Error::Parse {
                    line,
                    message: format!("duplicate cell ({}, {})", units[u], times[p]),
                });
            }
            y[(u, p)] = vals[0];
            for j in 0..k {
                x[j][(u, p)] = vals[j + 1];
            }
        }
        Self::new(y, x)
    }

    /// Writes the panel in long format with integer unit and time labels.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.to_csv_writer(file)
    }

    pub fn to_csv_writer<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = std::io::BufWriter::new(writer);
        write!(w, "unit,time,y")?;
        for k in 0..self.n_regressors() {
            write!(w, ",x{}", k + 1)?;
        }
        writeln!(w)?;
        for i in 0..self.n_units() {
            for t in 0..self.n_periods() {
                write!(w, "{},{},{:e}", i + 1, t + 1, self.y[(i, t)])?;
                for xk in &self.x {
                    write!(w, ",{:e}", xk[(i, t)])?;
                }
                writeln!(w)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Reads a side file with one labelled row per entity: `label,v1,...,vq`.
/// Rows are returned in file order.
pub fn read_side_matrix(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let file = std::fs::File::open(path)?;
    side_matrix_from_reader(file)
}

pub fn side_matrix_from_reader<R: Read>(reader: R) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| csv_error(e, 1))?
        .iter()
        .map(str::to_owned)
        .collect::<Vec<_>>();
    if headers.len() < 2 {
        return Err(Error::Parse {
            line: 1,
            message: "expected a label column and at least one value column".into(),
        });
    }
    let q = headers.len() - 1;
    let mut rows = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let line = row + 2;
        let rec = rec.map_err(|e| csv_error(e, line))?;
        if rec.len() != headers.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", headers.len(), rec.len()),
            });
        }
        for j in 0..q {
            rows.push(parse_value(&rec[j + 1], line, &headers[j + 1])?);
        }
    }
    let n = rows.len() / q;
    Ok(DMatrix::from_row_slice(n, q, &rows))
}

pub fn write_side_matrix(path: impl AsRef<Path>, m: &DMatrix<f64>, prefix: &str) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write!(w, "label")?;
    for j in 0..m.ncols() {
        write!(w, ",{prefix}{}", j + 1)?;
    }
    writeln!(w)?;
    for i in 0..m.nrows() {
        write!(w, "{}", i + 1)?;
        for j in 0..m.ncols() {
            write!(w, ",{:e}", m[(i, j)])?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

fn intern(labels: &mut Vec<String>, index: &mut HashMap<String, usize>, key: &str) -> usize {
    if let Some(&i) = index.get(key) {
        return i;
    }
    labels.push(key.to_owned());
    index.insert(key.to_owned(), labels.len() - 1);
    labels.len() - 1
}

fn parse_value(s: &str, line: usize, column: &str) -> Result<f64> {
    let v: f64 = s.parse().map_err(|_| Error::Parse {
        line,
        message: format!("column {column}: cannot parse {s:?} as a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            message: format!("column {column}: non-finite value {s:?}"),
        });
    }
    Ok(v)
}

fn csv_error(e: csv::Error, fallback_line: usize) -> Error {
    let line = e
        .position()
        .map(|p| p.line() as usize)
        .unwrap_or(fallback_line);
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

fn check_finite(m: &DMatrix<f64>, series: &str) -> Result<()> {
    for t in 0..m.ncols() {
        for i in 0..m.nrows() {
            if !m[(i, t)].is_finite() {
                return Err(Error::NonFinite {
                    unit: i,
                    period: t,
                    series: series.to_owned(),
                });
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite_with_index() {
        let mut y = DMatrix::zeros(3, 4);
        y[(2, 1)] = f64::NAN;
        match PanelDataset::new(y, vec![]) {
            Err(Error::NonFinite { unit, period, .. }) => assert_eq!((unit, period), (2, 1)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_unbalanced_csv() {
        let text = "unit,time,y,x1\n1,1,0.5,1\n1,2,0.1,2\n2,1,0.3,3\n";
        assert!(matches!(
            PanelDataset::from_csv_reader(text.as_bytes()),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn malformed_number_reports_line() {
        let text = "unit,time,y\na,1,0.5\na,2,oops\nb,1,1\nb,2,2\n";
        match PanelDataset::from_csv_reader(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let y = DMatrix::from_fn(3, 4, |i, t| (i as f64).sin() + 0.1 * t as f64 / 3.0);
        let x = vec![DMatrix::from_fn(3, 4, |i, t| (i * t) as f64 / 7.0)];
        let panel = PanelDataset::new(y, x).unwrap();
        let mut buf = Vec::new();
        panel.to_csv_writer(&mut buf).unwrap();
        let back = PanelDataset::from_csv_reader(buf.as_slice()).unwrap();
        assert_eq!(back, panel);
    }

    #[test]
    fn zero_phi_is_rank_deficient() {
        let panel = PanelDataset::new(DMatrix::zeros(3, 3), vec![]).unwrap();
        assert!(matches!(
            panel.with_phi(DMatrix::zeros(3, 1)),
            Err(Error::RankDeficient { .. })
        ));
    }
}
