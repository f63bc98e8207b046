//! Marching squares on a node-valued 2D array and sign-change cells in 3D.
//!
//! Corner values `>= level` count as above. Saddle cells (two diagonal
//! corners above, two below) are split according to the sign of the cell
//! center value, taken as the mean of the four corners: a center above the
//! level joins the two above-corners.

use std::collections::HashMap;

pub type Polyline = Vec<[f64; 2]>;

/// Edge identity shared between neighbouring cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Edge {
    /// Between nodes `(i, j)` and `(i + 1, j)`.
    AlongX(usize, usize),
    /// Between nodes `(i, j)` and `(i, j + 1)`.
    AlongY(usize, usize),
}

/// Contours `values == level` on a grid with node coordinates `xs` (axis 0)
/// and `ys` (axis 1); `values[i * ys.len() + j]`. Closed loops repeat their
/// first point at the end.
pub fn march(values: &[f64], xs: &[f64], ys: &[f64], level: f64) -> Vec<Polyline> {
    let (nx, ny) = (xs.len(), ys.len());
    assert_eq!(values.len(), nx * ny, "value array does not match the grid");
    if nx < 2 || ny < 2 {
        return Vec::new();
    }
    let v = |i: usize, j: usize| values[i * ny + j];
    let point = |e: Edge| -> [f64; 2] {
        let ((i0, j0), (i1, j1)) = match e {
            Edge::AlongX(i, j) => ((i, j), (i + 1, j)),
            Edge::AlongY(i, j) => ((i, j), (i, j + 1)),
        };
        let (a, b) = (v(i0, j0), v(i1, j1));
        let s = if b != a { ((level - a) / (b - a)).clamp(0.0, 1.0) } else { 0.5 };
        [
            xs[i0] + s * (xs[i1] - xs[i0]),
            ys[j0] + s * (ys[j1] - ys[j0]),
        ]
    };

    let mut segments: Vec<(Edge, Edge)> = Vec::new();
    for i in 0..nx - 1 {
        for j in 0..ny - 1 {
            let (bl, br, tr, tl) = (v(i, j), v(i + 1, j), v(i + 1, j + 1), v(i, j + 1));
            let above = |x: f64| x >= level;
            let case = above(bl) as u8
                | (above(br) as u8) << 1
                | (above(tr) as u8) << 2
                | (above(tl) as u8) << 3;
            let bottom = Edge::AlongX(i, j);
            let top = Edge::AlongX(i, j + 1);
            let left = Edge::AlongY(i, j);
            let right = Edge::AlongY(i + 1, j);
            let center_above = above(0.25 * (bl + br + tr + tl));
            match case {
                0 | 15 => {}
                1 | 14 => segments.push((left, bottom)),
                2 | 13 => segments.push((bottom, right)),
                3 | 12 => segments.push((left, right)),
                4 | 11 => segments.push((right, top)),
                6 | 9 => segments.push((bottom, top)),
                7 | 8 => segments.push((left, top)),
                5 => {
                    // bl and tr above
                    if center_above {
                        segments.push((bottom, right));
                        segments.push((top, left));
                    } else {
                        segments.push((left, bottom));
                        segments.push((right, top));
                    }
                }
                10 => {
                    // br and tl above
                    if center_above {
                        segments.push((left, bottom));
                        segments.push((right, top));
                    } else {
                        segments.push((bottom, right));
                        segments.push((top, left));
                    }
                }
                _ => unreachable!(),
            }
        }
    }
    link(&segments).into_iter().map(|chain| chain.into_iter().map(point).collect()).collect()
}

/// Joins segments sharing edges into chains; each edge joins at most two.
fn link(segments: &[(Edge, Edge)]) -> Vec<Vec<Edge>> {
    let mut incident: HashMap<Edge, Vec<usize>> = HashMap::new();
    for (k, (a, b)) in segments.iter().enumerate() {
        incident.entry(*a).or_default().push(k);
        incident.entry(*b).or_default().push(k);
    }
    let mut used = vec![false; segments.len()];
    let mut chains = Vec::new();

    let other = |k: usize, e: Edge| if segments[k].0 == e { segments[k].1 } else { segments[k].0 };
    let walk = |start_seg: usize, start: Edge, used: &mut Vec<bool>| -> Vec<Edge> {
        let mut chain = vec![start];
        let mut seg = start_seg;
        let mut at = start;
        loop {
            used[seg] = true;
            at = other(seg, at);
            chain.push(at);
            match incident[&at].iter().copied().find(|&s| !used[s]) {
                Some(next) => seg = next,
                None => break,
            }
        }
        chain
    };

    // open chains start at edges touched by a single segment
    let mut ends: Vec<Edge> = incident
        .iter()
        .filter(|(_, segs)| segs.len() == 1)
        .map(|(e, _)| *e)
        .collect();
    ends.sort_by_key(edge_key);
    for e in ends {
        let k = incident[&e][0];
        if !used[k] {
            chains.push(walk(k, e, &mut used));
        }
    }
    for k in 0..segments.len() {
        if !used[k] {
            chains.push(walk(k, segments[k].0, &mut used));
        }
    }
    chains
}

fn edge_key(e: &Edge) -> (usize, usize, u8) {
    match *e {
        Edge::AlongX(i, j) => (i, j, 0),
        Edge::AlongY(i, j) => (i, j, 1),
    }
}

/// Centers of cells whose corner values straddle `level` on a 3D grid,
/// `values[(i * ny + j) * nz + k]`.
pub fn sign_change_cells(values: &[f64], coords: [&[f64]; 3], level: f64) -> Vec<[f64; 3]> {
    let [xs, ys, zs] = coords;
    let (nx, ny, nz) = (xs.len(), ys.len(), zs.len());
    assert_eq!(values.len(), nx * ny * nz, "value array does not match the grid");
    let mut out = Vec::new();
    if nx < 2 || ny < 2 || nz < 2 {
        return out;
    }
    let v = |i: usize, j: usize, k: usize| values[(i * ny + j) * nz + k];
    for i in 0..nx - 1 {
        for j in 0..ny - 1 {
            for k in 0..nz - 1 {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for (di, dj, dk) in [
                    (0, 0, 0), (1, 0, 0), (0, 1, 0), (1, 1, 0),
                    (0, 0, 1), (1, 0, 1), (0, 1, 1), (1, 1, 1),
                ] {
                    let c = v(i + di, j + dj, k + dk);
                    lo = lo.min(c);
                    hi = hi.max(c);
                }
                if lo < level && hi >= level {
                    out.push([
                        0.5 * (xs[i] + xs[i + 1]),
                        0.5 * (ys[j] + ys[j + 1]),
                        0.5 * (zs[k] + zs[k + 1]),
                    ]);
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn all_positive_gives_nothing() {
        let xs = linspace(0.0, 1.0, 4);
        assert!(march(&[1.0; 16], &xs, &xs, 0.0).is_empty());
    }

    #[test]
    fn circle_is_one_closed_loop() {
        let xs = linspace(-2.0, 2.0, 41);
        let vals: Vec<f64> = xs
            .iter()
            .flat_map(|&x| xs.iter().map(move |&y| x.hypot(y) - 1.0))
            .collect();
        let lines = march(&vals, &xs, &xs, 0.0);
        assert_eq!(lines.len(), 1);
        let l = &lines[0];
        assert_eq!(l.first(), l.last());
        let dx = 0.1;
        for p in l {
            assert!((p[0].hypot(p[1]) - 1.0).abs() <= 2.0 * dx);
        }
    }

    #[test]
    fn saddle_follows_center_rule() {
        let xs = [0.0, 1.0];
        // bl = 1, br = -1, tl = -1, tr = 1 (case 5)
        let above_center = [1.0, -1.0, -1.0, 1.5];
        let lines = march(&above_center, &xs, &xs, 0.0);
        assert_eq!(lines.len(), 2);
        // center above: the lines cut off the below corners br = (1, 0) and tl = (0, 1)
        let mut cut: Vec<[f64; 2]> = lines.iter().map(|l| [
            0.5 * (l[0][0] + l[1][0]),
            0.5 * (l[0][1] + l[1][1]),
        ]).collect();
        cut.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!(cut[0][0] < 0.5 && cut[0][1] > 0.5, "tl corner cut off: {cut:?}");
        assert!(cut[1][0] > 0.5 && cut[1][1] < 0.5, "br corner cut off: {cut:?}");

        let below_center = [1.0, -1.5, -1.5, 1.0];
        let lines = march(&below_center, &xs, &xs, 0.0);
        assert_eq!(lines.len(), 2);
        let mut cut: Vec<[f64; 2]> = lines.iter().map(|l| [
            0.5 * (l[0][0] + l[1][0]),
            0.5 * (l[0][1] + l[1][1]),
        ]).collect();
        cut.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!(cut[0][0] < 0.5 && cut[0][1] < 0.5, "bl corner cut off: {cut:?}");
        assert!(cut[1][0] > 0.5 && cut[1][1] > 0.5, "tr corner cut off: {cut:?}");
    }

    #[test]
    fn sphere_cells_surround_radius() {
        let xs = linspace(-2.0, 2.0, 21);
        let mut vals = Vec::with_capacity(xs.len().pow(3));
        for &x in &xs {
            for &y in &xs {
                for &z in &xs {
                    vals.push((x * x + y * y + z * z).sqrt() - 1.0);
                }
            }
        }
        let pts = sign_change_cells(&vals, [&xs, &xs, &xs], 0.0);
        assert!(!pts.is_empty());
        for p in pts {
            let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            assert!((r - 1.0).abs() <= 0.2 * 3f64.sqrt());
        }
    }
}
