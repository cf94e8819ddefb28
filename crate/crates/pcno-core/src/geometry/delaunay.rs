//! Tessellation fallback for mesh-free point clouds.
//!
//! Supports full-dimensional clouds only: d' = 1 (sort into segments) and
//! d' = 2 (Bowyer-Watson Delaunay triangulation). Manifold clouds must ship
//! their own topology.

use super::CellBlock;
use crate::error::{Error, Result};

pub fn tessellate_point_cloud(
    coords: &[f64],
    n: usize,
    dim: usize,
    intrinsic_dim: usize,
) -> Result<CellBlock> {
    match (dim, intrinsic_dim) {
        (1, 1) => tessellate_1d(coords, n),
        (2, 2) => tessellate_2d(coords, n),
        _ => Err(Error::InvalidConfig {
            field: "intrinsic_dim".into(),
            reason: format!(
                "tessellation fallback handles full-dimensional d'=1 or d'=2 clouds, got d={dim}, d'={intrinsic_dim}"
            ),
        }),
    }
}

fn tessellate_1d(coords: &[f64], n: usize) -> Result<CellBlock> {
    if n < 2 {
        return Err(Error::Mesh("need at least two points".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| coords[a].partial_cmp(&coords[b]).unwrap());
    let mut cells = CellBlock::new();
    for w in order.windows(2) {
        if coords[w[1]] == coords[w[0]] {
            return Err(Error::Mesh(format!(
                "duplicate points {} and {}",
                w[0], w[1]
            )));
        }
        let mut pair = [w[0], w[1]];
        pair.sort_unstable();
        cells.push(1, &pair);
    }
    Ok(cells)
}

/// Plain Bowyer-Watson with a super-triangle. Adequate for the desk-scale
/// clouds this crate generates; no exact predicates.
fn tessellate_2d(coords: &[f64], n: usize) -> Result<CellBlock> {
    if n < 3 {
        return Err(Error::Mesh("need at least three points".into()));
    }
    let pt = |i: usize| (coords[i * 2], coords[i * 2 + 1]);

    let (mut min_x, mut min_y) = (f64::INFINITY, f64::INFINITY);
    let (mut max_x, mut max_y) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for i in 0..n {
        let (x, y) = pt(i);
        min_x = min_x.min(x);
        min_y = min_y.min(y);
        max_x = max_x.max(x);
        max_y = max_y.max(y);
    }
    let span = (max_x - min_x).max(max_y - min_y).max(1e-12);
    let cx = 0.5 * (min_x + max_x);
    let cy = 0.5 * (min_y + max_y);

    // vertices n..n+3 form the super-triangle
    let mut pts: Vec<(f64, f64)> = (0..n).map(pt).collect();
    pts.push((cx - 20.0 * span, cy - span));
    pts.push((cx + 20.0 * span, cy - span));
    pts.push((cx, cy + 20.0 * span));

    #[derive(Clone, Copy)]
    struct Tri(usize, usize, usize);

    let circum_contains = |t: &Tri, p: (f64, f64)| -> bool {
        let (ax, ay) = pts[t.0];
        let (bx, by) = pts[t.1];
        let (cx, cy) = pts[t.2];
        // in-circle determinant, signs normalized by orientation
        let d = 2.0 * (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by));
        if d == 0.0 {
            return false;
        }
        let ux = ((ax * ax + ay * ay) * (by - cy)
            + (bx * bx + by * by) * (cy - ay)
            + (cx * cx + cy * cy) * (ay - by))
            / d;
        let uy = ((ax * ax + ay * ay) * (cx - bx)
            + (bx * bx + by * by) * (ax - cx)
            + (cx * cx + cy * cy) * (bx - ax))
            / d;
        let r2 = (ax - ux).powi(2) + (ay - uy).powi(2);
        (p.0 - ux).powi(2) + (p.1 - uy).powi(2) <= r2 * (1.0 + 1e-12)
    };

    let mut tris = vec![Tri(n, n + 1, n + 2)];
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| pts[a].partial_cmp(&pts[b]).unwrap());
    for w in order.windows(2) {
        if pts[w[0]] == pts[w[1]] {
            return Err(Error::Mesh(format!(
                "duplicate points {} and {}",
                w[0], w[1]
            )));
        }
    }

    for &p in &order {
        let mut bad: Vec<usize> = Vec::new();
        for (ti, t) in tris.iter().enumerate() {
            if circum_contains(t, pts[p]) {
                bad.push(ti);
            }
        }
        // boundary of the cavity = edges appearing exactly once
        let mut edges: Vec<(usize, usize)> = Vec::new();
        for &ti in &bad {
            let t = tris[ti];
            for (a, b) in [(t.0, t.1), (t.1, t.2), (t.2, t.0)] {
                let key = (a.min(b), a.max(b));
                if let Some(pos) = edges.iter().position(|&e| e == key) {
                    edges.swap_remove(pos);
                } else {
                    edges.push(key);
                }
            }
        }
        for &ti in bad.iter().rev() {
            tris.swap_remove(ti);
        }
        for (a, b) in edges {
            tris.push(Tri(a, b, p));
        }
    }

    let mut cells = CellBlock::new();
    for t in &tris {
        if t.0 >= n || t.1 >= n || t.2 >= n {
            continue;
        }
        let mut tri = [t.0, t.1, t.2];
        tri.sort_unstable();
        cells.push(2, &tri);
    }
    // deterministic cell order regardless of insertion history
    let mut collected: Vec<(u8, Vec<usize>)> = (0..cells.len())
        .map(|j| {
            let (nodes, d) = cells.cell(j);
            (d, nodes.to_vec())
        })
        .collect();
    collected.sort();
    let mut out = CellBlock::new();
    for (d, nodes) in collected {
        out.push(d, &nodes);
    }
    if out.is_empty() {
        return Err(Error::Mesh("triangulation produced no cells".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sorts_segments_in_1d() {
        let coords = [0.7, 0.1, 0.4];
        let cells = tessellate_point_cloud(&coords, 3, 1, 1).unwrap();
        assert_eq!(cells.len(), 2);
        assert_eq!(cells.cell(0).0, &[1, 2]);
        assert_eq!(cells.cell(1).0, &[0, 2]);
    }

    #[test]
    fn triangulates_unit_square_corners_plus_center() {
        let coords = [0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.5, 0.5];
        let cells = tessellate_point_cloud(&coords, 5, 2, 2).unwrap();
        assert_eq!(cells.len(), 4);
        // total area must be the unit square
        let mut area = 0.0;
        for j in 0..cells.len() {
            let (t, _) = cells.cell(j);
            let (ax, ay) = (coords[t[0] * 2], coords[t[0] * 2 + 1]);
            let (bx, by) = (coords[t[1] * 2], coords[t[1] * 2 + 1]);
            let (cx, cy) = (coords[t[2] * 2], coords[t[2] * 2 + 1]);
            area += 0.5 * ((bx - ax) * (cy - ay) - (cx - ax) * (by - ay)).abs();
        }
        assert!((area - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_manifold_clouds() {
        let coords = [0.0; 9];
        assert!(tessellate_point_cloud(&coords, 3, 3, 2).is_err());
    }
}
