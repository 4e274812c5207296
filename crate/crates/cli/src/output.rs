//! CSV artifacts. Floats are written as `{:.16e}` (17 significant digits)
//! with LF line endings.

use std::fs;
use std::path::Path;

use activeset_core::experiments::{GridCell, Method, TraceRecord};

use crate::CliError;

pub const HEATMAP_HEADER: [&str; 5] = ["x1", "x2", "method", "eps", "success_fraction"];

pub const TRAJECTORY_HEADER: [&str; 10] = [
    "eps",
    "iteration",
    "x1",
    "x2",
    "objective",
    "grad_norm",
    "method",
    "correct",
    "spurious",
    "exact_fraction",
];

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> String {
    let bytes = w.into_inner().expect("in-memory writer");
    String::from_utf8(bytes).expect("ASCII output")
}

/// Heatmap rows sorted by `(method, eps, x1, x2)`.
pub fn heatmap_csv(cells: &[GridCell]) -> String {
    let mut rows: Vec<(Method, f64, f64, f64, f64)> = Vec::new();
    for cell in cells {
        for level in &cell.levels {
            for m in Method::ALL {
                rows.push((
                    m,
                    level.eps,
                    cell.point[0],
                    cell.point[1],
                    level.fraction(m),
                ));
            }
        }
    }
    rows.sort_by(|a, b| {
        a.0.cmp(&b.0)
            .then(a.1.total_cmp(&b.1))
            .then(a.2.total_cmp(&b.2))
            .then(a.3.total_cmp(&b.3))
    });
    let mut w = writer();
    w.write_record(HEATMAP_HEADER).expect("in-memory writer");
    for (m, eps, x1, x2, frac) in rows {
        w.write_record([num(x1), num(x2), m.name().into(), num(eps), num(frac)])
            .expect("in-memory writer");
    }
    finish(w)
}

pub fn emit_heatmap_csv(cells: &[GridCell], path: &Path) -> Result<(), CliError> {
    if cells.is_empty() {
        return Err(CliError::Usage("no grid cells to write".into()));
    }
    write_file(path, &heatmap_csv(cells))
}

/// One block of rows per noise level, each listing every iterate for both
/// methods.
pub fn trajectory_csv(runs: &[(f64, Vec<TraceRecord>)]) -> String {
    let mut w = writer();
    w.write_record(TRAJECTORY_HEADER).expect("in-memory writer");
    for (eps, records) in runs {
        for r in records {
            for m in Method::ALL {
                let t = r.method(m);
                w.write_record([
                    num(*eps),
                    r.iteration.to_string(),
                    num(r.x[0]),
                    num(r.x[1]),
                    num(r.objective),
                    num(r.grad_norm),
                    m.name().into(),
                    num(t.correct),
                    num(t.spurious),
                    num(t.exact),
                ])
                .expect("in-memory writer");
            }
        }
    }
    finish(w)
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// A parsed heatmap row.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapRow {
    pub x1: f64,
    pub x2: f64,
    pub method: String,
    pub eps: f64,
    pub success_fraction: f64,
}

/// Reads a heatmap CSV. Row numbers in errors count data rows from 1.
pub fn read_heatmap_csv(path: &Path) -> Result<Vec<HeatmapRow>, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_heatmap_csv(&text)
}

pub fn parse_heatmap_csv(text: &str) -> Result<Vec<HeatmapRow>, CliError> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| CliError::Csv {
            row: 0,
            message: e.to_string(),
        })?
        .clone();
    let mut idx = [0usize; 5];
    for (slot, name) in idx.iter_mut().zip(HEATMAP_HEADER) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| CliError::MissingColumn(name.to_string()))?;
    }
    let mut rows = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let row = n + 1;
        let rec = rec.map_err(|e| CliError::Csv {
            row,
            message: e.to_string(),
        })?;
        let field = |k: usize| {
            rec.get(idx[k]).map(str::trim).ok_or_else(|| CliError::Csv {
                row,
                message: format!("missing `{}` field", HEATMAP_HEADER[k]),
            })
        };
        let float = |k: usize| -> Result<f64, CliError> {
            let s = field(k)?;
            s.parse().map_err(|_| CliError::Csv {
                row,
                message: format!("`{}` is not a number: `{s}`", HEATMAP_HEADER[k]),
            })
        };
        rows.push(HeatmapRow {
            x1: float(0)?,
            x2: float(1)?,
            method: field(2)?.to_string(),
            eps: float(3)?,
            success_fraction: float(4)?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use activeset_core::experiments::LevelOutcome;

    fn cell(point: [f64; 2], levels: &[(f64, f64, f64)]) -> GridCell {
        GridCell {
            index: (0, 0),
            point,
            levels: levels
                .iter()
                .map(|&(eps, lp, qp)| LevelOutcome {
                    eps,
                    trials: 1,
                    lp,
                    qp,
                })
                .collect(),
        }
    }

    #[test]
    fn rows_are_cross_product_sorted() {
        let cells = [
            cell([0.5, 0.0], &[(0.0, 1.0, 1.0), (0.1, 0.5, 0.25)]),
            cell([-0.5, 0.0], &[(0.0, 0.0, 1.0), (0.1, 0.0, 0.0)]),
        ];
        let csv = heatmap_csv(&cells);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 1 + 8);
        assert_eq!(lines[0], "x1,x2,method,eps,success_fraction");
        assert!(lines[1]
            .starts_with("-5.0000000000000000e-1,0.0000000000000000e0,lp,0.0000000000000000e0,"));
        assert!(lines[4].contains(",lp,1.0000000000000001e-1,5.0000000000000000e-1"));
        assert!(lines[5].contains(",qp,"));
        assert!(!csv.contains('\r'));
    }

    #[test]
    fn parse_round_trips() {
        let cells = [cell([0.1, 0.2], &[(0.0, 1.0, 0.5)])];
        let rows = parse_heatmap_csv(&heatmap_csv(&cells)).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].method, "qp");
        assert_eq!(rows[1].success_fraction, 0.5);
        assert_eq!(rows[0].x2, 0.2);
    }

    #[test]
    fn parse_errors_name_row_and_column() {
        let err = parse_heatmap_csv("x1,x2,method,success_fraction\n").unwrap_err();
        assert!(matches!(err, CliError::MissingColumn(ref c) if c == "eps"));
        let err =
            parse_heatmap_csv("x1,x2,method,eps,success_fraction\n0,0,lp,0,1\n0,zero,lp,0,1\n")
                .unwrap_err();
        assert!(matches!(err, CliError::Csv { row: 2, .. }), "{err}");
    }
}
