use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Value written into missing covariate cells.
pub const MISSING_VALUE: f64 = -1.0;

/// Columns with at most this many distinct values are treated as flags and left unscaled.
pub const MAX_FLAG_LEVELS: usize = 3;

/// Right-censored cohort: one row per patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortTable {
    pub patient_ids: Vec<String>,
    pub columns: Vec<String>,
    /// Row-major covariates; missing cells hold NaN until imputed.
    pub x: Vec<Vec<f64>>,
    pub missing: Vec<Vec<bool>>,
    /// Days, strictly positive.
    pub time: Vec<f64>,
    /// 1 = event observed, 0 = censored.
    pub event: Vec<u8>,
}

impl CohortTable {
    pub fn new(
        patient_ids: Vec<String>,
        columns: Vec<String>,
        x: Vec<Vec<f64>>,
        time: Vec<f64>,
        event: Vec<u8>,
    ) -> Result<Self> {
        let missing = x.iter().map(|r| r.iter().map(|v| v.is_nan()).collect()).collect();
        let t = CohortTable {
            patient_ids,
            columns,
            x,
            missing,
            time,
            event,
        };
        t.validate()?;
        Ok(t)
    }

    fn validate(&self) -> Result<()> {
        let n = self.patient_ids.len();
        if self.x.len() != n || self.time.len() != n || self.event.len() != n || self.missing.len() != n {
            return Err(Error::arg("cohort columns have different lengths"));
        }
        let p = self.columns.len();
        if self.x.iter().any(|r| r.len() != p) || self.missing.iter().any(|r| r.len() != p) {
            return Err(Error::arg("covariate row width differs from column count"));
        }
        let mut seen = HashSet::new();
        for c in &self.columns {
            if !seen.insert(c) {
                return Err(Error::arg(format!("duplicate column '{c}'")));
            }
        }
        if let Some(i) = self.time.iter().position(|t| !(*t > 0.0) || !t.is_finite()) {
            return Err(Error::arg(format!("patient {}: time must be positive", self.patient_ids[i])));
        }
        if let Some(i) = self.event.iter().position(|&e| e > 1) {
            return Err(Error::arg(format!("patient {}: event must be 0 or 1", self.patient_ids[i])));
        }
        for (r, row) in self.x.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                if !self.missing[r][c] && !v.is_finite() {
                    return Err(Error::arg(format!("patient {}: non-finite '{}'", self.patient_ids[r], self.columns[c])));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.patient_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patient_ids.is_empty()
    }

    pub fn n_events(&self) -> usize {
        self.event.iter().filter(|&&e| e == 1).count()
    }

    pub fn has_missing(&self) -> bool {
        self.missing.iter().flatten().any(|&m| m)
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::arg(format!("unknown column '{name}'")))
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.x.iter().map(|r| r[j]).collect()
    }

    /// Keeps the named columns in the given order.
    pub fn select_columns(&self, names: &[String]) -> Result<Self> {
        let idx: Vec<usize> = names.iter().map(|n| self.column_index(n)).collect::<Result<_>>()?;
        Ok(CohortTable {
            patient_ids: self.patient_ids.clone(),
            columns: names.to_vec(),
            x: self.x.iter().map(|r| idx.iter().map(|&j| r[j]).collect()).collect(),
            missing: self.missing.iter().map(|r| idx.iter().map(|&j| r[j]).collect()).collect(),
            time: self.time.clone(),
            event: self.event.clone(),
        })
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        CohortTable {
            patient_ids: rows.iter().map(|&i| self.patient_ids[i].clone()).collect(),
            columns: self.columns.clone(),
            x: rows.iter().map(|&i| self.x[i].clone()).collect(),
            missing: rows.iter().map(|&i| self.missing[i].clone()).collect(),
            time: rows.iter().map(|&i| self.time[i]).collect(),
            event: rows.iter().map(|&i| self.event[i]).collect(),
        }
    }

    /// Rows whose patient id is in `ids`, in table order.
    pub fn select_ids(&self, ids: &HashSet<String>) -> Self {
        let rows: Vec<usize> = (0..self.len()).filter(|&i| ids.contains(&self.patient_ids[i])).collect();
        self.select_rows(&rows)
    }

    /// Appends columns keyed by patient id; patients absent from `values` get missing cells.
    pub fn join_columns(&self, names: &[String], values: &std::collections::HashMap<String, Vec<f64>>) -> Result<Self> {
        let mut out = self.clone();
        for n in names {
            if out.columns.contains(n) {
                return Err(Error::arg(format!("duplicate column '{n}'")));
            }
            out.columns.push(n.clone());
        }
        for (r, pid) in self.patient_ids.iter().enumerate() {
            match values.get(pid) {
                Some(v) if v.len() == names.len() => {
                    out.x[r].extend(v);
                    out.missing[r].extend(v.iter().map(|x| x.is_nan()));
                }
                Some(_) => return Err(Error::arg(format!("patient {pid}: joined row has wrong width"))),
                None => {
                    out.x[r].extend(std::iter::repeat_n(f64::NAN, names.len()));
                    out.missing[r].extend(std::iter::repeat_n(true, names.len()));
                }
            }
        }
        Ok(out)
    }

    /// Reads `patient_id, covariates..., time, event`; empty cells are missing.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file).map_err(|e| match e {
            Error::Argument(m) | Error::Ingestion(m) => Error::Ingestion(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn from_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(|s| s.to_string()).collect();
        let col = |name: &str| header.iter().position(|h| h == name);
        let (pid, tcol, ecol) = match (col("patient_id"), col("time"), col("event")) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => return Err(Error::Ingestion("cohort csv needs patient_id, time and event columns".into())),
        };
        let cov: Vec<usize> = (0..header.len()).filter(|&j| j != pid && j != tcol && j != ecol).collect();
        let mut ids = Vec::new();
        let mut x = Vec::new();
        let mut time = Vec::new();
        let mut event = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = line + 2;
            let num = |j: usize| -> Result<f64> {
                rec.get(j)
                    .unwrap_or("")
                    .parse::<f64>()
                    .map_err(|_| Error::Ingestion(format!("row {row}: bad value in '{}'", header[j])))
            };
            ids.push(rec.get(pid).unwrap_or("").to_string());
            time.push(num(tcol)?);
            event.push(match rec.get(ecol).unwrap_or("") {
                "0" => 0,
                "1" => 1,
                other => return Err(Error::Ingestion(format!("row {row}: event must be 0 or 1, got {other:?}"))),
            });
            x.push(
                cov.iter()
                    .map(|&j| if rec.get(j).unwrap_or("").is_empty() { Ok(f64::NAN) } else { num(j) })
                    .collect::<Result<Vec<f64>>>()?,
            );
        }
        let columns = cov.iter().map(|&j| header[j].clone()).collect();
        Self::new(ids, columns, x, time, event).map_err(|e| match e {
            Error::Argument(m) => Error::Ingestion(m),
            other => other,
        })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["patient_id".to_string()];
        header.extend(self.columns.iter().cloned());
        header.extend(["time".to_string(), "event".to_string()]);
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec = vec![self.patient_ids[i].clone()];
            rec.extend(
                self.x[i]
                    .iter()
                    .zip(&self.missing[i])
                    .map(|(v, &m)| if m { String::new() } else { format!("{v}") }),
            );
            rec.push(format!("{}", self.time[i]));
            rec.push(self.event[i].to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Replaces every missing cell with [`MISSING_VALUE`].
pub fn impute_missing(tbl: &CohortTable) -> CohortTable {
    let mut out = tbl.clone();
    for (row, miss) in out.x.iter_mut().zip(out.missing.iter_mut()) {
        for (v, m) in row.iter_mut().zip(miss.iter_mut()) {
            if *m {
                *v = MISSING_VALUE;
                *m = false;
            }
        }
    }
    out
}

/// Per-column affine map to the fitting scale. Flag-like columns keep
/// `(mean, scale) = (0, 1)`; constant columns are marked for exclusion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub constant: Vec<bool>,
}

impl Standardizer {
    pub fn fit(x: &[Vec<f64>], p: usize) -> Self {
        let n = x.len() as f64;
        let mut mean = vec![0.0; p];
        let mut scale = vec![1.0; p];
        let mut constant = vec![false; p];
        for j in 0..p {
            let mut levels: Vec<f64> = x.iter().map(|r| r[j]).collect();
            levels.sort_by(f64::total_cmp);
            levels.dedup();
            constant[j] = levels.len() <= 1;
            if levels.len() > MAX_FLAG_LEVELS {
                let m = x.iter().map(|r| r[j]).sum::<f64>() / n;
                let sd = (x.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n).sqrt();
                mean[j] = m;
                scale[j] = sd;
            }
        }
        Standardizer { mean, scale, constant }
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> CohortTable {
        CohortTable::new(
            vec!["A-1".into(), "A-2".into(), "B-1".into()],
            vec!["hpv".into(), "age".into()],
            vec![vec![1.0, 60.0], vec![f64::NAN, 55.0], vec![0.0, f64::NAN]],
            vec![100.0, 200.0, 300.0],
            vec![1, 0, 1],
        )
        .unwrap()
    }

    #[test]
    fn impute_rules() {
        let t = sample();
        assert!(t.has_missing());
        let i = impute_missing(&t);
        assert_eq!(i.x[1][0], -1.0);
        assert_eq!(i.x[2][1], -1.0);
        assert!(!i.has_missing());
        assert_eq!(impute_missing(&i), i);

        let all = CohortTable::new(
            vec!["a".into(), "b".into()],
            vec!["c".into()],
            vec![vec![f64::NAN], vec![f64::NAN]],
            vec![1.0, 2.0],
            vec![1, 1],
        )
        .unwrap();
        assert_eq!(impute_missing(&all).column(0), vec![-1.0, -1.0]);
    }

    #[test]
    fn validation() {
        let bad_time = CohortTable::new(vec!["a".into()], vec![], vec![vec![]], vec![0.0], vec![1]);
        assert!(bad_time.is_err());
        let bad_event = CohortTable::new(vec!["a".into()], vec![], vec![vec![]], vec![1.0], vec![2]);
        assert!(bad_event.is_err());
        let dup = CohortTable::new(vec!["a".into()], vec!["x".into(), "x".into()], vec![vec![1.0, 2.0]], vec![1.0], vec![1]);
        assert!(dup.is_err());
    }

    #[test]
    fn csv_round_trip() {
        let t = sample();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        t.write_csv(&p).unwrap();
        let back = CohortTable::read_csv(&p).unwrap();
        assert_eq!(back.columns, t.columns);
        assert_eq!(back.missing, t.missing);
        assert_eq!(back.time, t.time);
        assert_eq!(back.x[0], t.x[0]);
        std::fs::write(&p, "patient_id,x,time,event\na,1,5,2\n").unwrap();
        assert!(matches!(CohortTable::read_csv(&p), Err(Error::Ingestion(_))));
    }

    #[test]
    fn flags_stay_raw() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![(i % 2) as f64, i as f64, 3.0]).collect();
        let s = Standardizer::fit(&x, 3);
        assert_eq!((s.mean[0], s.scale[0]), (0.0, 1.0));
        assert!((s.mean[1] - 4.5).abs() < 1e-12);
        assert_eq!(s.constant, vec![false, false, true]);
    }
}
