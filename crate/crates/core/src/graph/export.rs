use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{check_features, Adjacency, GraphError, Result};
use crate::numerics::Tensor;

/// Upper-triangle edges `(i, j, w)` with `i < j` and `w > threshold`.
pub fn edge_list(a: &Adjacency, threshold: f64) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    for i in 0..a.n {
        for j in i + 1..a.n {
            let w = a.get(i, j);
            if w > threshold {
                out.push((i, j, w));
            }
        }
    }
    out
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> GraphError + '_ {
    move |source| GraphError::Io { path: path.to_path_buf(), source }
}

pub fn write_edges(path: &Path, a: &Adjacency, threshold: f64) -> Result<usize> {
    let edges = edge_list(a, threshold);
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    writeln!(w, "src,dst,weight").map_err(io_err(path))?;
    for (i, j, v) in &edges {
        writeln!(w, "{i},{j},{v}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(edges.len())
}

/// One row per node with the L2 norm of its feature vector.
pub fn write_nodes(path: &Path, x: &Tensor) -> Result<()> {
    let (n, f) = check_features(x.shape())?;
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    writeln!(w, "id,norm").map_err(io_err(path))?;
    for (id, row) in x.data().chunks(f.max(1)).take(n).enumerate() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        writeln!(w, "{id},{norm}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Writes `edges.csv` and `nodes.csv` into `dir`; returns the edge count.
pub fn export_graph(dir: &Path, x: &Tensor, a: &Adjacency, threshold: f64) -> Result<usize> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_nodes(&dir.join("nodes.csv"), x)?;
    write_edges(&dir.join("edges.csv"), a, threshold)
}

/// Rebuilds a symmetric `n`-node adjacency from an edge CSV.
pub fn read_edges(path: &Path, n: usize) -> Result<Adjacency> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let bad = |line: usize, msg: String| GraphError::Parse { path: path.to_path_buf(), line, msg };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "src,dst,weight")) => {}
        _ => return Err(bad(1, "expected header `src,dst,weight`".into())),
    }
    let mut a = Adjacency::zeros(n, n.saturating_sub(1));
    let mut band = 0;
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let [s, d, w] = fields.as_slice() else {
            return Err(bad(idx + 1, format!("expected 3 fields, got {}", fields.len())));
        };
        let i: usize = s.trim().parse().map_err(|e| bad(idx + 1, format!("src: {e}")))?;
        let j: usize = d.trim().parse().map_err(|e| bad(idx + 1, format!("dst: {e}")))?;
        let v: f64 = w.trim().parse().map_err(|e| bad(idx + 1, format!("weight: {e}")))?;
        if i >= n || j >= n || i == j {
            return Err(bad(idx + 1, format!("edge ({i}, {j}) invalid for {n} nodes")));
        }
        a.set(i, j, v);
        a.set(j, i, v);
        band = band.max(i.abs_diff(j));
    }
    a.band = band;
    Ok(a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::adjacency_correlation;

    #[test]
    fn round_trip_through_csv() {
        let x = Tensor::new(vec![4, 2], vec![1.0, 2.0, 3.0, -1.0, -2.0, 2.0, 1.0, 1.0]).unwrap();
        let a = adjacency_correlation(&x, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let count = export_graph(dir.path(), &x, &a, 0.0).unwrap();
        assert_eq!(count, 4);
        let back = read_edges(&dir.path().join("edges.csv"), 4).unwrap();
        assert_eq!(back.a, a.a);
        let nodes = fs::read_to_string(dir.path().join("nodes.csv")).unwrap();
        assert_eq!(nodes.lines().count(), 5);
        assert!(nodes.starts_with("id,norm\n0,2.23606797749979\n"));
    }

    #[test]
    fn threshold_drops_light_edges() {
        let mut a = Adjacency::zeros(3, 2);
        for (i, j, v) in [(0, 1, 0.5), (1, 2, 2.0)] {
            a.set(i, j, v);
            a.set(j, i, v);
        }
        assert_eq!(edge_list(&a, 1.0), vec![(1, 2, 2.0)]);
    }

    #[test]
    fn malformed_rows_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        fs::write(&p, "src,dst,weight\n0,5,1\n").unwrap();
        assert!(matches!(read_edges(&p, 3), Err(GraphError::Parse { line: 2, .. })));
    }
}
