//! Wide-format daily sales file (`id columns + d_1..d_N`).

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Identity of one bottom-level (product × store) series.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SeriesIds {
    pub item_id: String,
    pub dept_id: String,
    pub cat_id: String,
    pub store_id: String,
    pub state_id: String,
}

impl SeriesIds {
    /// Bottom-level series key, `{item}_{store}`.
    pub fn key(&self) -> String {
        format!("{}_{}", self.item_id, self.store_id)
    }
}

/// Parsed wide sales table. `values[s][d - 1]` is the unit sales of series
/// `s` on day `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct SalesWide {
    pub series: Vec<SeriesIds>,
    pub n_days: usize,
    pub values: Vec<Vec<f64>>,
}

const ID_COLUMNS: [&str; 5] = ["item_id", "dept_id", "cat_id", "store_id", "state_id"];

pub fn load_sales(path: impl AsRef<Path>) -> Result<SalesWide> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_sales(file, &path.display().to_string())
}

/// Parse a sales table from any reader. `name` is used in error messages.
pub fn parse_sales<R: Read>(reader: R, name: &str) -> Result<SalesWide> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(name, 1, e.to_string()))?
        .clone();
    if headers.is_empty() {
        return Err(parse_err(name, 1, "missing header row"));
    }

    let mut id_pos = [usize::MAX; 5];
    for (slot, col) in id_pos.iter_mut().zip(ID_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == col)
            .ok_or_else(|| parse_err(name, 1, format!("missing column `{col}`")))?;
    }

    // Day columns must be d_1..d_N, contiguous and in order.
    let mut day_cols = Vec::new();
    for (pos, h) in headers.iter().enumerate() {
        if let Some(d) = h.strip_prefix("d_") {
            let d: usize = d
                .parse()
                .map_err(|_| parse_err(name, 1, format!("bad day column `{h}`")))?;
            if d != day_cols.len() + 1 {
                return Err(parse_err(
                    name,
                    1,
                    format!("day column `{h}` out of sequence, expected d_{}", day_cols.len() + 1),
                ));
            }
            day_cols.push(pos);
        }
    }
    if day_cols.is_empty() {
        return Err(parse_err(name, 1, "no d_<n> day columns"));
    }
    let n_days = day_cols.len();

    let mut series = Vec::new();
    let mut values = Vec::new();
    let mut seen = HashSet::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| parse_err(name, line, e.to_string()))?;
        if rec.len() != headers.len() {
            return Err(parse_err(
                name,
                line,
                format!("expected {} fields, found {}", headers.len(), rec.len()),
            ));
        }
        let field = |p: usize| rec.get(p).unwrap_or("").to_string();
        let ids = SeriesIds {
            item_id: field(id_pos[0]),
            dept_id: field(id_pos[1]),
            cat_id: field(id_pos[2]),
            store_id: field(id_pos[3]),
            state_id: field(id_pos[4]),
        };
        if !seen.insert((ids.item_id.clone(), ids.store_id.clone())) {
            return Err(Error::validation(format!(
                "{name} row {line}: duplicate (item_id, store_id) = ({}, {})",
                ids.item_id, ids.store_id
            )));
        }
        let mut row = Vec::with_capacity(n_days);
        for &p in &day_cols {
            let raw = rec.get(p).unwrap_or("").trim();
            let v: f64 = raw
                .parse()
                .map_err(|_| parse_err(name, line, format!("non-numeric sale `{raw}` in {}", &headers[p])))?;
            if !v.is_finite() {
                return Err(parse_err(name, line, format!("non-finite sale in {}", &headers[p])));
            }
            if v < 0.0 {
                return Err(Error::validation(format!(
                    "{name} row {line}: negative sale {v} in {}",
                    &headers[p]
                )));
            }
            if v.fract() != 0.0 {
                return Err(Error::validation(format!(
                    "{name} row {line}: non-integral sale {v} in {}",
                    &headers[p]
                )));
            }
            row.push(v);
        }
        series.push(ids);
        values.push(row);
    }

    Ok(SalesWide {
        series,
        n_days,
        values,
    })
}

/// Write in the M5 layout: `id,item_id,dept_id,cat_id,store_id,state_id,d_1..`.
pub fn write_sales<W: Write>(sales: &SalesWide, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["id".to_string()];
    header.extend(ID_COLUMNS.iter().map(|s| s.to_string()));
    header.extend((1..=sales.n_days).map(|d| format!("d_{d}")));
    w.write_record(&header).map_err(csv_err)?;
    for (ids, row) in sales.series.iter().zip(&sales.values) {
        let mut rec = vec![
            format!("{}_evaluation", ids.key()),
            ids.item_id.clone(),
            ids.dept_id.clone(),
            ids.cat_id.clone(),
            ids.store_id.clone(),
            ids.state_id.clone(),
        ];
        rec.extend(row.iter().map(|v| format!("{v}")));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("<sales writer>", e))?;
    Ok(())
}

fn parse_err(file: &str, row: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_string(),
        row,
        message: message.into(),
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Format {
        path: "<csv>".into(),
        message: e.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const HDR: &str = "id,item_id,dept_id,cat_id,store_id,state_id";

    #[test]
    fn minimal_file() {
        let text = format!(
            "{HDR},d_1,d_2,d_3,d_4,d_5\n\
             A_S1,A,D,C,S1,CA,0,1,2,0,3\n\
             B_S1,B,D,C,S1,CA,1,1,1,1,1\n"
        );
        let s = parse_sales(text.as_bytes(), "t").unwrap();
        assert_eq!(s.n_days, 5);
        assert_eq!(s.series.len(), 2);
        assert_eq!(s.values[0], vec![0.0, 1.0, 2.0, 0.0, 3.0]);
        assert_eq!(s.series[1].key(), "B_S1");
    }

    #[test]
    fn id_column_is_optional() {
        let text = "item_id,dept_id,cat_id,store_id,state_id,d_1\nA,D,C,S1,CA,4\n";
        let s = parse_sales(text.as_bytes(), "t").unwrap();
        assert_eq!(s.values[0], vec![4.0]);
    }

    #[test]
    fn negative_sale_is_validation_error() {
        let text = format!("{HDR},d_1,d_2\nA_S1,A,D,C,S1,CA,1,-1\n");
        let err = parse_sales(text.as_bytes(), "t").unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
    }

    #[test]
    fn malformed_row_reports_row_number() {
        let text = format!("{HDR},d_1\nA_S1,A,D,C,S1,CA,1\nB_S1,B,D,C,S1,CA,x\n");
        match parse_sales(text.as_bytes(), "t").unwrap_err() {
            Error::Parse { row, .. } => assert_eq!(row, 3),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn duplicate_series_rejected() {
        let text = format!("{HDR},d_1\nA_S1,A,D,C,S1,CA,1\nA_S1,A,D,C,S1,CA,2\n");
        assert!(matches!(
            parse_sales(text.as_bytes(), "t"),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn day_columns_must_be_contiguous() {
        let text = format!("{HDR},d_1,d_3\nA_S1,A,D,C,S1,CA,1,2\n");
        assert!(matches!(
            parse_sales(text.as_bytes(), "t"),
            Err(Error::Parse { row: 1, .. })
        ));
    }

    #[test]
    fn write_then_parse_round_trips() {
        let text = format!("{HDR},d_1,d_2\nA_S1,A,D,C,S1,CA,1,0\nB_S2,B,D,C,S2,TX,7,3\n");
        let s = parse_sales(text.as_bytes(), "t").unwrap();
        let mut buf = Vec::new();
        write_sales(&s, &mut buf).unwrap();
        assert_eq!(parse_sales(buf.as_slice(), "t").unwrap(), s);
    }
}
