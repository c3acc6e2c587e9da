//! CSV input and output for datasets.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{MixError, Result};
use crate::model::Dataset;

/// Which CSV columns are responses, predictors and (optionally) labels.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Schema {
    pub responses: Vec<String>,
    pub predictors: Vec<String>,
    #[serde(default)]
    pub label: Option<String>,
    /// Center every response and predictor column.
    #[serde(default)]
    pub center: bool,
    /// Append squares, pairwise products and an intercept to the predictors.
    #[serde(default)]
    pub expand_second_order: bool,
}

impl Schema {
    /// Responses named `y*` and predictors named `x*`, in header order, plus
    /// a `label` column if present.
    pub fn infer(header: &[String]) -> Self {
        Self {
            responses: header.iter().filter(|h| h.starts_with('y')).cloned().collect(),
            predictors: header.iter().filter(|h| h.starts_with('x')).cloned().collect(),
            label: header.iter().find(|h| h.as_str() == "label").cloned(),
            center: false,
            expand_second_order: false,
        }
    }
}

fn locate(header: &[String], names: &[String]) -> Result<Vec<usize>> {
    names
        .iter()
        .map(|name| {
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| MixError::InvalidInput(format!("column `{name}` not in header")))
        })
        .collect()
}

/// Squares, then pairwise products in `(a, b)` order with `a < b`.
pub fn second_order(x: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, p) = x.shape();
    let mut cols: Vec<Vec<f64>> = (0..p).map(|j| x.column(j).iter().copied().collect()).collect();
    for j in 0..p {
        cols.push(x.column(j).iter().map(|v| v * v).collect());
    }
    for a in 0..p {
        for b in a + 1..p {
            cols.push((0..n).map(|i| x[(i, a)] * x[(i, b)]).collect());
        }
    }
    DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i])
}

fn center_columns(m: &mut DMatrix<f64>) {
    let n = m.nrows() as f64;
    for mut col in m.column_iter_mut() {
        let mean = col.sum() / n;
        col.add_scalar_mut(-mean);
    }
}

/// Reads a dataset from CSV text with a header row.
pub fn read_csv<R: Read>(reader: R, schema: &Schema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if schema.responses.is_empty() || schema.predictors.is_empty() {
        return Err(MixError::InvalidInput("schema needs at least one response and one predictor".into()));
    }
    let ry = locate(&header, &schema.responses)?;
    let rx = locate(&header, &schema.predictors)?;
    let rl = match &schema.label {
        Some(l) => Some(locate(&header, std::slice::from_ref(l))?[0]),
        None => None,
    };

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut labels = Vec::new();
    let mut missing = Vec::new();
    let mut bad = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = r + 2;
        let mut cell = |c: usize| -> f64 {
            let raw = rec.get(c).unwrap_or("");
            if raw.is_empty() || raw.eq_ignore_ascii_case("na") || raw.eq_ignore_ascii_case("nan") {
                missing.push(format!("line {line}, column `{}`", header[c]));
                return f64::NAN;
            }
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => v,
                _ => {
                    bad.push(format!("line {line}, column `{}`: `{raw}`", header[c]));
                    f64::NAN
                }
            }
        };
        ys.extend(ry.iter().map(|&c| cell(c)));
        xs.extend(rx.iter().map(|&c| cell(c)));
        if let Some(c) = rl {
            let raw = rec.get(c).unwrap_or("");
            match raw.parse::<usize>() {
                Ok(v) => labels.push(v),
                Err(_) => bad.push(format!("line {line}, label `{raw}`")),
            }
        }
    }
    if !missing.is_empty() {
        return Err(MixError::InvalidInput(format!("missing values at {}", missing.join("; "))));
    }
    if !bad.is_empty() {
        return Err(MixError::InvalidInput(format!("non-numeric values at {}", bad.join("; "))));
    }
    let n = ys.len() / ry.len();
    let mut y = DMatrix::from_row_slice(n, ry.len(), &ys);
    let mut x = DMatrix::from_row_slice(n, rx.len(), &xs);
    if schema.expand_second_order {
        x = second_order(&x);
        if !schema.center {
            let p = x.ncols();
            x = x.insert_column(p, 1.0);
        }
    }
    if schema.center {
        center_columns(&mut x);
        center_columns(&mut y);
    }
    Dataset::new(x, y, rl.map(|_| labels))
}

pub fn read_csv_path(path: &Path, schema: Option<&Schema>) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    match schema {
        Some(s) => read_csv(file, s),
        None => {
            let mut rdr = csv::Reader::from_path(path)?;
            let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
            read_csv(file, &Schema::infer(&header))
        }
    }
}

/// Writes `y0..`, `x0..` and, when present, `label` columns.
pub fn write_csv<W: Write>(writer: W, data: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = (0..data.q()).map(|z| format!("y{z}")).collect();
    header.extend((0..data.p()).map(|j| format!("x{j}")));
    if data.labels().is_some() {
        header.push("label".into());
    }
    w.write_record(&header)?;
    for i in 0..data.n() {
        let mut rec: Vec<String> = data.y().row(i).iter().map(|v| format!("{v:?}")).collect();
        rec.extend(data.x().row(i).iter().map(|v| format!("{v:?}")));
        if let Some(l) = data.labels() {
            rec.push(l[i].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOY: &str = "y1,y2,x1,x2\n1,2,3,4\n5,6,7,8\n9,10,11,12\n";

    fn schema() -> Schema {
        Schema {
            responses: vec!["y1".into(), "y2".into()],
            predictors: vec!["x1".into(), "x2".into()],
            ..Default::default()
        }
    }

    #[test]
    fn toy_shape() {
        let d = read_csv(TOY.as_bytes(), &schema()).unwrap();
        assert_eq!((d.n(), d.q(), d.p()), (3, 2, 2));
        assert_eq!(d.x()[(2, 1)], 12.0);
        assert_eq!(d.y()[(1, 0)], 5.0);
    }

    #[test]
    fn expansion_on_three_predictors() {
        let csv = "y,a,b,c\n1,1,2,3\n2,2,1,0\n3,0,1,5\n4,1,1,1\n";
        let s = Schema {
            responses: vec!["y".into()],
            predictors: vec!["a".into(), "b".into(), "c".into()],
            expand_second_order: true,
            ..Default::default()
        };
        let d = read_csv(csv.as_bytes(), &s).unwrap();
        assert_eq!(d.p(), 10);
        let row: Vec<f64> = d.x().row(0).iter().copied().collect();
        assert_eq!(row, vec![1.0, 2.0, 3.0, 1.0, 4.0, 9.0, 2.0, 3.0, 6.0, 1.0]);
        let centered = read_csv(csv.as_bytes(), &Schema { center: true, ..s }).unwrap();
        assert_eq!(centered.p(), 9);
    }

    #[test]
    fn centering() {
        let d = read_csv(TOY.as_bytes(), &Schema { center: true, ..schema() }).unwrap();
        for c in d.x().column_iter().chain(d.y().column_iter()) {
            assert!(c.sum().abs() / 3.0 < 1e-10);
        }
    }

    #[test]
    fn missing_cells_are_listed() {
        let csv = "y1,y2,x1,x2\n1,,3,4\n5,6,NA,8\n";
        let err = read_csv(csv.as_bytes(), &schema()).unwrap_err().to_string();
        assert!(err.contains("line 2, column `y2`"), "{err}");
        assert!(err.contains("line 3, column `x1`"), "{err}");
    }

    #[test]
    fn non_numeric_is_an_error() {
        let csv = "y1,y2,x1,x2\n1,2,abc,4\n";
        assert!(read_csv(csv.as_bytes(), &schema()).unwrap_err().to_string().contains("abc"));
    }

    #[test]
    fn round_trip() {
        let x = DMatrix::from_row_slice(2, 2, &[0.1, -2.5, 1e-17, 3.0]);
        let y = DMatrix::from_row_slice(2, 1, &[1.0 / 3.0, 7.0]);
        let d = Dataset::new(x, y, Some(vec![0, 1])).unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, &d).unwrap();
        let header = vec!["y0".to_string(), "x0".into(), "x1".into(), "label".into()];
        let back = read_csv(buf.as_slice(), &Schema::infer(&header)).unwrap();
        assert_eq!(back, d);
    }
}
