//! Plot-ready CSV files for one prediction.
//!
//! Node indices are always those of the input mesh, so hierarchy levels can
//! be overlaid on the original positions.

use std::fs;
use std::io;
use std::path::Path;

use crate::oracle::{Split, Trajectory};
use crate::trainer::Prediction;

fn csv_err(e: csv::Error) -> io::Error {
    io::Error::other(e)
}

fn writer(path: &Path) -> io::Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(csv_err)
}

/// Keep flag of every input node at every level: a node is kept at level
/// `l` if it survived every selection up to and including `l`.
pub fn keep_per_level(nodes: usize, prediction: &Prediction) -> Vec<Vec<bool>> {
    prediction
        .levels
        .iter()
        .map(|lvl| {
            let mut keep = vec![false; nodes];
            for (i, &k) in lvl.keep_mask.iter().enumerate() {
                if k {
                    keep[lvl.fine.node_keys[i]] = true;
                }
            }
            keep
        })
        .collect()
}

/// Writes `nodes`, `edges`, `alpha_variance`, `hierarchy_l*` and
/// `challenging` files for time step `t`.
pub fn write_step(
    out: &Path,
    tr: &Trajectory,
    t: usize,
    prediction: &Prediction,
) -> io::Result<()> {
    let n = tr.node_count();
    let c = tr.channels;
    let truth = tr.delta(t);
    let keep = keep_per_level(n, prediction);
    let error: Vec<f64> = (0..n)
        .map(|i| {
            (0..c)
                .map(|k| (prediction.delta[i * c + k] - truth[i * c + k]).abs())
                .fold(0.0, f64::max)
        })
        .collect();

    let mut w = writer(&out.join(format!("nodes_t{t:04}.csv")))?;
    let mut header = vec!["node".to_string(), "x".into(), "y".into(), "type".into()];
    for k in 0..c {
        header.extend([
            format!("true_{k}"),
            format!("pred_{k}"),
            format!("abs_error_{k}"),
        ]);
    }
    header.extend((1..=keep.len()).map(|l| format!("keep_l{l}")));
    w.write_record(&header).map_err(csv_err)?;
    for i in 0..n {
        let [x, y] = tr.mesh.world_positions[i];
        let mut row = vec![
            i.to_string(),
            x.to_string(),
            y.to_string(),
            format!("{:?}", tr.mesh.node_types[i]),
        ];
        for k in 0..c {
            let (p, q) = (truth[i * c + k], prediction.delta[i * c + k]);
            row.extend([p.to_string(), q.to_string(), (q - p).abs().to_string()]);
        }
        row.extend(keep.iter().map(|lvl| u8::from(lvl[i]).to_string()));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;

    let mut edges = writer(&out.join(format!("edges_t{t:04}.csv")))?;
    edges
        .write_record(["level", "layer", "receiver", "sender", "alpha"])
        .map_err(csv_err)?;
    let mut var = writer(&out.join(format!("alpha_variance_t{t:04}.csv")))?;
    var.write_record(["level", "layer", "node", "degree", "alpha_variance"])
        .map_err(csv_err)?;
    let mut layer_of_level = vec![
        0usize;
        prediction
            .alphas
            .iter()
            .map(|a| a.level + 1)
            .max()
            .unwrap_or(0)
    ];
    for trace in &prediction.alphas {
        let layer = layer_of_level[trace.level];
        layer_of_level[trace.level] += 1;
        let g = &trace.graph;
        for (e, &(r, s)) in g.edges.iter().enumerate() {
            edges
                .write_record([
                    trace.level.to_string(),
                    layer.to_string(),
                    g.node_keys[r].to_string(),
                    g.node_keys[s].to_string(),
                    trace.alpha[e].to_string(),
                ])
                .map_err(csv_err)?;
        }
        for r in 0..g.node_count {
            let seg = &trace.alpha[g.segments[r]..g.segments[r + 1]];
            let mean = seg.iter().sum::<f64>() / seg.len() as f64;
            let v = seg.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / seg.len() as f64;
            var.write_record([
                trace.level.to_string(),
                layer.to_string(),
                g.node_keys[r].to_string(),
                seg.len().to_string(),
                v.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    edges.flush()?;
    var.flush()?;

    for lvl in &prediction.levels {
        let mut h = writer(&out.join(format!("hierarchy_t{t:04}_l{}.csv", lvl.level)))?;
        h.write_record(["receiver", "sender"]).map_err(csv_err)?;
        let key = |c: usize| lvl.fine.node_keys[lvl.coarse.fine_index_of[c]];
        for &(r, s) in &lvl.coarse.edges {
            h.write_record([key(r).to_string(), key(s).to_string()])
                .map_err(csv_err)?;
        }
        h.flush()?;
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| error[b].total_cmp(&error[a]).then(a.cmp(&b)));
    let top = n.div_ceil(10);
    let mut ch = writer(&out.join(format!("challenging_t{t:04}.csv")))?;
    let mut header = vec![
        "rank".to_string(),
        "node".into(),
        "x".into(),
        "y".into(),
        "abs_error".into(),
    ];
    header.extend((1..=keep.len()).map(|l| format!("keep_l{l}")));
    ch.write_record(&header).map_err(csv_err)?;
    for (rank, &i) in order[..top].iter().enumerate() {
        let [x, y] = tr.mesh.world_positions[i];
        let mut row = vec![
            rank.to_string(),
            i.to_string(),
            x.to_string(),
            y.to_string(),
            error[i].to_string(),
        ];
        row.extend(keep.iter().map(|lvl| u8::from(lvl[i]).to_string()));
        ch.write_record(&row).map_err(csv_err)?;
    }
    ch.flush()
}

pub fn write_readme(
    out: &Path,
    split: Split,
    trajectory: usize,
    steps: &[usize],
) -> io::Result<()> {
    let list = steps
        .iter()
        .map(|t| t.to_string())
        .collect::<Vec<_>>()
        .join(", ");
    let text = format!(
        "Export of {split} trajectory {trajectory} at time steps {list}.\n\
         \n\
         Node indices refer to the input mesh throughout. `tNNNN` is the time step.\n\
         \n\
         nodes_tNNNN.csv           position, node type, true and predicted one-step delta,\n\
         \x20                         absolute error per channel, keep flag per level\n\
         edges_tNNNN.csv           aggregation weight alpha of every edge, per level and layer\n\
         alpha_variance_tNNNN.csv  variance of alpha over each receiver's edges\n\
         hierarchy_tNNNN_lL.csv    edge list of the coarse graph built at level L\n\
         challenging_tNNNN.csv     the 10% of nodes with the largest error\n"
    );
    fs::write(out.join("README.txt"), text)
}
