//! Versioned binary model files.

use crate::binio::{Reader, Writer};
use crate::error::Result;

use super::{GbdtModel, GbdtParams, Node, Objective, Tree};

const MAGIC: &[u8; 4] = b"M5GB";
const VERSION: u32 = 1;

pub(super) fn write_params(w: &mut Writer, p: &GbdtParams) {
    w.u8(match p.objective {
        Objective::Tweedie => 0,
        Objective::SquaredError => 1,
    });
    w.f64(p.tweedie_variance_power);
    w.f64(p.learning_rate);
    w.usize(p.num_leaves);
    w.usize(p.min_data_in_leaf);
    w.f64(p.min_sum_hessian_in_leaf);
    w.f64(p.lambda_l2);
    w.usize(p.max_depth.map_or(0, |d| d + 1));
    w.f64(p.feature_fraction);
    w.f64(p.subsample);
    w.usize(p.subsample_freq);
    w.usize(p.max_bin);
    w.usize(p.n_estimators);
    w.bool(p.boost_from_average);
    w.u64(p.seed);
}

pub(super) fn read_params(r: &mut Reader) -> Result<GbdtParams> {
    let objective = match r.u8()? {
        0 => Objective::Tweedie,
        1 => Objective::SquaredError,
        _ => return Err(r.fail("unknown objective")),
    };
    Ok(GbdtParams {
        objective,
        tweedie_variance_power: r.f64()?,
        learning_rate: r.f64()?,
        num_leaves: r.usize()?,
        min_data_in_leaf: r.usize()?,
        min_sum_hessian_in_leaf: r.f64()?,
        lambda_l2: r.f64()?,
        max_depth: r.usize()?.checked_sub(1),
        feature_fraction: r.f64()?,
        subsample: r.f64()?,
        subsample_freq: r.usize()?,
        max_bin: r.usize()?,
        n_estimators: r.usize()?,
        boost_from_average: r.bool()?,
        seed: r.u64()?,
    })
}

pub(super) fn write_body(w: &mut Writer, m: &GbdtModel) {
    write_params(w, &m.params);
    w.f64(m.base_score);
    w.u64(m.schema_hash);
    w.usize(m.n_features);
    w.usize(m.trees.len());
    for t in &m.trees {
        w.usize(t.nodes.len());
        for n in &t.nodes {
            match *n {
                Node::Leaf { value } => {
                    w.u8(0);
                    w.f64(value);
                }
                Node::Split {
                    feature,
                    bin,
                    threshold,
                    default_left,
                    left,
                    right,
                } => {
                    w.u8(1);
                    w.u32(feature);
                    w.u8(bin);
                    w.f64(threshold);
                    w.bool(default_left);
                    w.u32(left);
                    w.u32(right);
                }
            }
        }
    }
}

pub(super) fn read_body(r: &mut Reader) -> Result<GbdtModel> {
    let params = read_params(r)?;
    let base_score = r.f64()?;
    let schema_hash = r.u64()?;
    let n_features = r.usize()?;
    let n_trees = r.usize()?;
    let mut trees = Vec::new();
    for _ in 0..n_trees {
        let n_nodes = r.usize()?;
        let mut nodes = Vec::new();
        for _ in 0..n_nodes {
            nodes.push(match r.u8()? {
                0 => Node::Leaf { value: r.f64()? },
                1 => {
                    let n = Node::Split {
                        feature: r.u32()?,
                        bin: r.u8()?,
                        threshold: r.f64()?,
                        default_left: r.bool()?,
                        left: r.u32()?,
                        right: r.u32()?,
                    };
                    if let Node::Split { feature, left, right, .. } = n {
                        if feature as usize >= n_features || left as usize >= n_nodes || right as usize >= n_nodes {
                            return Err(r.fail("tree node out of range"));
                        }
                    }
                    n
                }
                _ => return Err(r.fail("unknown node tag")),
            });
        }
        if nodes.is_empty() {
            return Err(r.fail("empty tree"));
        }
        trees.push(Tree { nodes });
    }
    Ok(GbdtModel {
        params,
        base_score,
        trees,
        schema_hash,
        n_features,
    })
}

pub(super) fn encode(m: &GbdtModel) -> Vec<u8> {
    let mut w = Writer::with_header(MAGIC, VERSION);
    write_body(&mut w, m);
    w.into_bytes()
}

pub(super) fn decode(bytes: &[u8], name: &str) -> Result<GbdtModel> {
    let mut r = Reader::open(bytes, MAGIC, VERSION, name)?;
    let m = read_body(&mut r)?;
    r.finish()?;
    Ok(m)
}
