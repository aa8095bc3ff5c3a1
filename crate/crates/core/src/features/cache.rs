//! Binary cache of assembled feature matrices.
//!
//! Layout: header (magic, version), the input key the matrix was built for,
//! the schema hash, a SHA-256 of the payload, then the payload. A payload
//! whose checksum does not match is reported as corrupt.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::binio::{hash64, Reader, Writer};
use crate::data::PanelDataset;
use crate::error::{Error, Result};

use super::matrix::{schema_hash, FeatureMatrix, FEATURE_VERSION};
use super::spec::FeatureConfig;

const MAGIC: &[u8; 4] = b"M5FM";

/// Content hash of a panel: ids, sales, calendar and prices.
pub fn panel_fingerprint(panel: &PanelDataset) -> u64 {
    let mut h = Sha256::new();
    for (s, ids) in panel.series().iter().enumerate() {
        h.update(ids.key().as_bytes());
        h.update([0u8]);
        h.update(ids.dept_id.as_bytes());
        h.update(ids.state_id.as_bytes());
        for v in panel.sales(s) {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    for c in panel.calendar() {
        h.update(format!("{c:?}").as_bytes());
    }
    for p in panel.price_rows() {
        h.update(format!("{}|{}|{}|{}", p.store_id, p.item_id, p.wm_yr_wk, p.sell_price.to_bits()).as_bytes());
    }
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

/// Key identifying a matrix build: panel contents, feature spec, the
/// target-encoding range and the rows requested.
pub fn cache_key(panel_fp: u64, config: &FeatureConfig, train_days: (usize, usize), rows: (usize, usize)) -> u64 {
    let text = format!(
        "v{FEATURE_VERSION}|{panel_fp:016x}|{}|{}-{}|{}-{}",
        config.to_toml(),
        train_days.0,
        train_days.1,
        rows.0,
        rows.1
    );
    hash64(text.as_bytes())
}

pub fn encode_matrix(m: &FeatureMatrix, config: &FeatureConfig, cardinalities: [usize; 5], key: u64) -> Vec<u8> {
    let mut p = Writer::default();
    p.str(&config.to_toml());
    for c in cardinalities {
        p.usize(c);
    }
    p.usize(m.n_rows);
    for s in &m.series {
        p.u32(*s);
    }
    for d in &m.days {
        p.u32(*d);
    }
    p.f64s(&m.target);
    p.f64s(&m.data);
    let payload = p.into_bytes();

    let mut w = Writer::with_header(MAGIC, FEATURE_VERSION);
    w.u64(key);
    w.u64(m.schema_hash);
    w.bytes(&Sha256::digest(&payload));
    w.bytes(&payload);
    w.into_bytes()
}

/// Decode a cache file. `Ok(None)` when it was built for a different key;
/// `Err(Format)` when it is corrupt.
pub fn decode_matrix(bytes: &[u8], key: u64, name: &str) -> Result<Option<FeatureMatrix>> {
    let mut r = Reader::open(bytes, MAGIC, FEATURE_VERSION, name)?;
    if r.u64()? != key {
        return Ok(None);
    }
    let schema = r.u64()?;
    let digest = r.bytes()?;
    let payload = r.bytes()?;
    r.finish()?;
    if Sha256::digest(&payload).as_slice() != digest.as_slice() {
        return Err(Error::Format {
            path: name.into(),
            message: "content hash mismatch".into(),
        });
    }
    let mut p = Reader::open_raw(&payload, name);
    let config = FeatureConfig::from_toml(&p.str()?)?;
    let mut card = [0usize; 5];
    for c in &mut card {
        *c = p.usize()?;
    }
    let columns = config.columns_for(card);
    if schema_hash(&columns) != schema {
        return Err(Error::SchemaMismatch {
            expected: schema,
            found: schema_hash(&columns),
        });
    }
    let n_rows = p.usize()?;
    let series = (0..n_rows).map(|_| p.u32()).collect::<Result<Vec<_>>>()?;
    let days = (0..n_rows).map(|_| p.u32()).collect::<Result<Vec<_>>>()?;
    let target = p.f64s()?;
    let data = p.f64s()?;
    p.finish()?;
    if target.len() != n_rows || data.len() != n_rows * columns.len() {
        return Err(Error::Format {
            path: name.into(),
            message: "matrix dimensions disagree".into(),
        });
    }
    Ok(Some(FeatureMatrix {
        columns,
        schema_hash: schema,
        n_rows,
        data,
        series,
        days,
        target,
        buffer_reads: 0,
    }))
}

pub fn save_matrix(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Outcome of a cache lookup.
#[derive(Debug)]
pub enum CacheLookup {
    Hit(FeatureMatrix),
    /// No file, or a file built from different inputs.
    Miss,
    /// The file exists but failed its integrity checks.
    Corrupt(Error),
}

pub fn load_matrix(path: &Path, key: u64) -> CacheLookup {
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(_) => return CacheLookup::Miss,
    };
    match decode_matrix(&bytes, key, &path.display().to_string()) {
        Ok(Some(m)) => CacheLookup::Hit(m),
        Ok(None) => CacheLookup::Miss,
        Err(e) => CacheLookup::Corrupt(e),
    }
}
