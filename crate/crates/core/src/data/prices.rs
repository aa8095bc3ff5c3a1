//! Weekly sell prices per (store, item).

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use super::sales::csv_err;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PriceRow {
    pub store_id: String,
    pub item_id: String,
    pub wm_yr_wk: u32,
    pub sell_price: f64,
}

pub fn load_prices(path: impl AsRef<Path>) -> Result<Vec<PriceRow>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_prices(file, &path.display().to_string())
}

pub fn parse_prices<R: Read>(reader: R, name: &str) -> Result<Vec<PriceRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers().map_err(|e| perr(name, 1, e))?.clone();
    let col = |c: &str| {
        headers
            .iter()
            .position(|h| h == c)
            .ok_or_else(|| perr(name, 1, format!("missing column `{c}`")))
    };
    let (p_store, p_item, p_week, p_price) = (
        col("store_id")?,
        col("item_id")?,
        col("wm_yr_wk")?,
        col("sell_price")?,
    );

    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| perr(name, line, e))?;
        let get = |p: usize| rec.get(p).unwrap_or("").trim();
        let wm_yr_wk: u32 = get(p_week)
            .parse()
            .map_err(|_| perr(name, line, format!("bad wm_yr_wk `{}`", get(p_week))))?;
        let sell_price: f64 = get(p_price)
            .parse()
            .map_err(|_| perr(name, line, format!("bad sell_price `{}`", get(p_price))))?;
        if !(sell_price > 0.0) || !sell_price.is_finite() {
            return Err(Error::validation(format!(
                "{name} row {line}: sell_price must be positive, got {sell_price}"
            )));
        }
        let row = PriceRow {
            store_id: get(p_store).to_string(),
            item_id: get(p_item).to_string(),
            wm_yr_wk,
            sell_price,
        };
        if !seen.insert((row.store_id.clone(), row.item_id.clone(), wm_yr_wk)) {
            return Err(Error::validation(format!(
                "{name} row {line}: duplicate price for ({}, {}, {wm_yr_wk})",
                row.store_id, row.item_id
            )));
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_prices<W: Write>(rows: &[PriceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["store_id", "item_id", "wm_yr_wk", "sell_price"])
        .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.store_id.clone(),
            r.item_id.clone(),
            r.wm_yr_wk.to_string(),
            format!("{}", r.sell_price),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("<prices writer>", e))?;
    Ok(())
}

fn perr(file: &str, row: usize, msg: impl ToString) -> Error {
    Error::Parse {
        file: file.to_string(),
        row,
        message: msg.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_row() {
        let text = "store_id,item_id,wm_yr_wk,sell_price\nS1,I1,11101,2.50\n";
        let rows = parse_prices(text.as_bytes(), "p").unwrap();
        assert_eq!(
            rows,
            vec![PriceRow {
                store_id: "S1".into(),
                item_id: "I1".into(),
                wm_yr_wk: 11101,
                sell_price: 2.5
            }]
        );
    }

    #[test]
    fn duplicate_key_rejected() {
        let text = "store_id,item_id,wm_yr_wk,sell_price\nS1,I1,11101,2.50\nS1,I1,11101,2.75\n";
        assert!(matches!(
            parse_prices(text.as_bytes(), "p"),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn non_positive_price_rejected() {
        for p in ["0", "-1.5"] {
            let text = format!("store_id,item_id,wm_yr_wk,sell_price\nS1,I1,11101,{p}\n");
            assert!(matches!(
                parse_prices(text.as_bytes(), "p"),
                Err(Error::Validation(_))
            ));
        }
    }

    #[test]
    fn missing_weeks_accepted() {
        let text = "store_id,item_id,wm_yr_wk,sell_price\nS1,I1,11103,1.0\nS1,I2,11101,1.0\n";
        assert_eq!(parse_prices(text.as_bytes(), "p").unwrap().len(), 2);
    }
}
