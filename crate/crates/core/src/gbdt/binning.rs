//! Quantile binning of feature columns.
//!
//! Bin 0 is reserved for missing values (`NaN`); bins `1..=n` hold values,
//! where value `v` falls in bin `1 + #{edges < v}`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

/// Values sampled per feature to choose bin edges.
const EDGE_SAMPLE: usize = 200_000;

#[derive(Debug, Clone, PartialEq)]
pub struct BinMapper {
    /// Upper edges of value bins `1..n-1`; the last value bin is open.
    pub edges: Vec<f64>,
}

impl BinMapper {
    /// Number of value bins (excluding the missing bin).
    pub fn n_value_bins(&self) -> usize {
        if self.edges.is_empty() {
            1
        } else {
            self.edges.len() + 1
        }
    }

    pub fn bin(&self, v: f64) -> u8 {
        if v.is_nan() {
            0
        } else {
            1 + self.edges.partition_point(|&e| e < v) as u8
        }
    }

    /// Raw-value threshold equivalent to "bin ≤ b".
    pub fn threshold(&self, b: u8) -> f64 {
        self.edges[b as usize - 1]
    }
}

/// Choose edges for one column. With at most `max_bin` distinct values
/// every value gets its own bin (edges at midpoints); otherwise edges sit
/// at equal-population quantiles of the distinct-value distribution.
pub fn fit_mapper(values: &[f64], max_bin: usize) -> BinMapper {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.len() > EDGE_SAMPLE {
        let step = v.len() as f64 / EDGE_SAMPLE as f64;
        v = (0..EDGE_SAMPLE).map(|i| v[(i as f64 * step) as usize]).collect();
    }
    v.sort_by(f64::total_cmp);
    let mut distinct: Vec<(f64, usize)> = Vec::new();
    for x in v.iter().copied() {
        match distinct.last_mut() {
            Some((d, c)) if *d == x => *c += 1,
            _ => distinct.push((x, 1)),
        }
    }
    if distinct.len() <= 1 {
        return BinMapper { edges: Vec::new() };
    }
    let mid = |a: f64, b: f64| a + (b - a) / 2.0;
    if distinct.len() <= max_bin {
        let edges = distinct.windows(2).map(|w| mid(w[0].0, w[1].0)).collect();
        return BinMapper { edges };
    }
    // Greedy equal-population cuts on the distinct values.
    let total = v.len() as f64;
    let mut edges = Vec::with_capacity(max_bin - 1);
    let mut cum = 0usize;
    let mut next_cut = 1;
    for w in distinct.windows(2) {
        cum += w[0].1;
        if next_cut >= max_bin {
            break;
        }
        let target = total * next_cut as f64 / max_bin as f64;
        if cum as f64 >= target {
            edges.push(mid(w[0].0, w[1].0));
            while next_cut < max_bin && cum as f64 >= total * next_cut as f64 / max_bin as f64 {
                next_cut += 1;
            }
        }
    }
    BinMapper { edges }
}

/// Column-major binned copy of a feature matrix.
#[derive(Debug, Clone)]
pub struct BinnedDataset {
    pub mappers: Vec<BinMapper>,
    /// `bins[f][row]`
    pub bins: Vec<Vec<u8>>,
    pub n_rows: usize,
}

/// Bin every column of `matrix` with at most `max_bin` value bins each.
pub fn build_histograms(matrix: &FeatureMatrix, max_bin: usize) -> Result<BinnedDataset> {
    if !(2..=255).contains(&max_bin) {
        return Err(Error::Config(format!("max_bin must lie in 2..=255, got {max_bin}")));
    }
    let n = matrix.n_rows();
    let cols: Vec<(BinMapper, Vec<u8>)> = (0..matrix.n_cols())
        .into_par_iter()
        .map(|f| {
            let col = matrix.column(f);
            if col.iter().any(|v| v.is_infinite()) {
                return Err(Error::validation(format!(
                    "feature {} has infinite values",
                    matrix.columns()[f].name
                )));
            }
            let m = fit_mapper(&col, max_bin);
            let bins = col.iter().map(|&v| m.bin(v)).collect();
            Ok((m, bins))
        })
        .collect::<Result<_>>()?;
    let (mappers, bins) = cols.into_iter().unzip();
    Ok(BinnedDataset {
        mappers,
        bins,
        n_rows: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn few_distinct_values_are_lossless() {
        let v = [3.0, 1.0, 2.0, 2.0, 1.0, f64::NAN];
        let m = fit_mapper(&v, 10);
        assert_eq!(m.n_value_bins(), 3);
        let b: Vec<u8> = v.iter().map(|x| m.bin(*x)).collect();
        assert_eq!(b, vec![3, 1, 2, 2, 1, 0]);
    }

    #[test]
    fn uniform_values_get_equal_population_bins() {
        let v: Vec<f64> = (0..1000).map(|i| i as f64 / 1000.0).collect();
        let m = fit_mapper(&v, 4);
        assert_eq!(m.n_value_bins(), 4);
        let mut counts = [0usize; 5];
        for x in &v {
            counts[m.bin(*x) as usize] += 1;
        }
        for c in &counts[1..] {
            assert!((*c as i64 - 250).abs() <= 1, "{counts:?}");
        }
    }

    #[test]
    fn all_missing_column_has_only_the_missing_bin() {
        let m = fit_mapper(&[f64::NAN; 5], 8);
        assert_eq!(m.bin(f64::NAN), 0);
        assert!(m.edges.is_empty());
    }

    #[test]
    fn threshold_agrees_with_bins() {
        let v: Vec<f64> = (0..500).map(|i| ((i * 37) % 101) as f64).collect();
        let m = fit_mapper(&v, 16);
        for b in 1..m.n_value_bins() as u8 {
            let t = m.threshold(b);
            for x in &v {
                assert_eq!(m.bin(*x) <= b, *x <= t);
            }
        }
    }
}
