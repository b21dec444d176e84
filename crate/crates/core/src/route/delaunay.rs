//! Bowyer-Watson Delaunay triangulation of the walkable points.

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};

/// Undirected mesh edge, `a < b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub length: f64,
}

/// Triangulated walkable surface.
#[derive(Debug, Clone, PartialEq)]
pub struct NavMesh {
    vertices: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    edges: Vec<Edge>,
    duplicates_removed: usize,
}

impl NavMesh {
    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    /// Counter-clockwise vertex triples.
    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    /// Sorted by `(a, b)`.
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Input points dropped because they repeated an earlier point.
    pub fn duplicates_removed(&self) -> usize {
        self.duplicates_removed
    }

    /// Triangles whose circumcircle strictly contains another vertex, checked
    /// against every vertex. Empty for a valid Delaunay mesh.
    pub fn circumcircle_violations(&self, tol: f64) -> Vec<(usize, usize)> {
        let mut bad = Vec::new();
        for (ti, t) in self.triangles.iter().enumerate() {
            let [a, b, c] = t.map(|i| self.vertices[i]);
            for (vi, &p) in self.vertices.iter().enumerate() {
                if t.contains(&vi) {
                    continue;
                }
                if in_circle(a, b, c, p) > tol * in_circle_scale(a, b, c, p) {
                    bad.push((ti, vi));
                }
            }
        }
        bad
    }
}

pub(crate) fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

/// Positive when `d` lies strictly inside the circumcircle of the
/// counter-clockwise triangle `abc`.
pub(crate) fn in_circle(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> f64 {
    let (adx, ady) = (a[0] - d[0], a[1] - d[1]);
    let (bdx, bdy) = (b[0] - d[0], b[1] - d[1]);
    let (cdx, cdy) = (c[0] - d[0], c[1] - d[1]);
    let ad = adx * adx + ady * ady;
    let bd = bdx * bdx + bdy * bdy;
    let cd = cdx * cdx + cdy * cdy;
    adx * (bdy * cd - bd * cdy) - ady * (bdx * cd - bd * cdx) + ad * (bdx * cdy - bdy * cdx)
}

/// Magnitude bound of the terms of [`in_circle`], for relative tolerances.
fn in_circle_scale(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> f64 {
    let (adx, ady) = ((a[0] - d[0]).abs(), (a[1] - d[1]).abs());
    let (bdx, bdy) = ((b[0] - d[0]).abs(), (b[1] - d[1]).abs());
    let (cdx, cdy) = ((c[0] - d[0]).abs(), (c[1] - d[1]).abs());
    let ad = adx * adx + ady * ady;
    let bd = bdx * bdx + bdy * bdy;
    let cd = cdx * cdx + cdy * cdy;
    adx * (bdy * cd + bd * cdy) + ady * (bdx * cd + bd * cdx) + ad * (bdx * cdy + bdy * cdx)
}

const CIRCLE_EPS: f64 = 1e-12;

fn strictly_inside(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    in_circle(a, b, c, d) > CIRCLE_EPS * in_circle_scale(a, b, c, d)
}

fn cocircular(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    in_circle(a, b, c, d).abs() <= CIRCLE_EPS * in_circle_scale(a, b, c, d)
}

/// Triangulates `points`. Exact duplicates are dropped (first occurrence
/// kept, so vertex indices follow first appearance). When four or more
/// points are cocircular the diagonal whose smaller endpoint index is lower
/// is chosen.
pub fn delaunay_triangulate(points: &[[f64; 2]]) -> Result<NavMesh> {
    if let Some(p) = points.iter().find(|p| !(p[0].is_finite() && p[1].is_finite())) {
        return Err(Error::Domain(format!("non-finite point {p:?}")));
    }
    let mut seen = HashMap::new();
    let mut vertices = Vec::with_capacity(points.len());
    for p in points {
        let key = (p[0].to_bits(), p[1].to_bits());
        if let std::collections::hash_map::Entry::Vacant(e) = seen.entry(key) {
            e.insert(vertices.len());
            vertices.push(*p);
        }
    }
    let duplicates_removed = points.len() - vertices.len();
    if vertices.len() < 3 {
        return Err(Error::Domain(format!(
            "need at least 3 distinct points, got {}",
            vertices.len()
        )));
    }
    check_not_collinear(&vertices)?;

    let n = vertices.len();
    let (mut min, mut max) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in &vertices {
        for k in 0..2 {
            min[k] = min[k].min(p[k]);
            max[k] = max[k].max(p[k]);
        }
    }
    let span = (max[0] - min[0]).max(max[1] - min[1]);
    let (cx, cy) = ((min[0] + max[0]) / 2.0, (min[1] + max[1]) / 2.0);
    let big = span * 1.0e3;
    let mut all = vertices.clone();
    all.push([cx - big, cy - big]);
    all.push([cx + big, cy - big]);
    all.push([cx, cy + big]);

    let mut tris: Vec<[usize; 3]> = vec![[n, n + 1, n + 2]];
    for i in 0..n {
        let p = all[i];
        let (bad, keep): (Vec<[usize; 3]>, Vec<[usize; 3]>) = tris
            .into_iter()
            .partition(|t| strictly_inside(all[t[0]], all[t[1]], all[t[2]], p));
        tris = keep;
        let bad = if bad.is_empty() {
            // p sits on circumcircles only; split the triangle containing it
            containing_triangle(&all, &tris, p).map(|j| vec![tris.swap_remove(j)]).unwrap_or_default()
        } else {
            bad
        };

        // cavity boundary: directed edges of bad triangles with no twin
        let mut directed: BTreeMap<(usize, usize), bool> = BTreeMap::new();
        for t in &bad {
            for (u, v) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                if directed.remove(&(v, u)).is_none() {
                    directed.insert((u, v), true);
                }
            }
        }
        for &(u, v) in directed.keys() {
            if orient(all[u], all[v], p) > 0.0 {
                tris.push([u, v, i]);
            }
        }
    }
    tris.retain(|t| t.iter().all(|&v| v < n));

    flip_cocircular_ties(&vertices, &mut tris);
    tris.sort_unstable();

    let mut edges: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for t in &tris {
        for (u, v) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
            let key = (u.min(v), u.max(v));
            edges.entry(key).or_insert_with(|| dist(vertices[u], vertices[v]));
        }
    }
    let edges = edges.into_iter().map(|((a, b), length)| Edge { a, b, length }).collect();

    Ok(NavMesh { vertices, triangles: tris, edges, duplicates_removed })
}

fn containing_triangle(all: &[[f64; 2]], tris: &[[usize; 3]], p: [f64; 2]) -> Option<usize> {
    tris.iter().position(|t| {
        let [a, b, c] = t.map(|i| all[i]);
        orient(a, b, p) >= 0.0 && orient(b, c, p) >= 0.0 && orient(c, a, p) >= 0.0
    })
}

pub(crate) fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn check_not_collinear(v: &[[f64; 2]]) -> Result<()> {
    let a = v[0];
    let far = v
        .iter()
        .copied()
        .max_by(|p, q| dist(a, *p).total_cmp(&dist(a, *q)))
        .expect("non-empty");
    let base = dist(a, far);
    let tol = 1e-12 * base * base;
    if v.iter().any(|&p| orient(a, far, p).abs() > tol) {
        Ok(())
    } else {
        Err(Error::Collinear)
    }
}

/// Re-chooses the diagonal of every convex quad whose four corners are
/// cocircular: the diagonal with the smaller lower endpoint wins. Each flip
/// lowers the sorted multiset of edge minima, so the loop terminates.
fn flip_cocircular_ties(v: &[[f64; 2]], tris: &mut [[usize; 3]]) {
    loop {
        let mut owner: HashMap<(usize, usize), usize> = HashMap::new();
        for (ti, t) in tris.iter().enumerate() {
            for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                owner.insert((a, b), ti);
            }
        }
        let mut flipped = false;
        let mut keys: Vec<_> = owner.keys().copied().filter(|(a, b)| a < b).collect();
        keys.sort_unstable();
        for (u, w) in keys {
            let (Some(&t1), Some(&t2)) = (owner.get(&(u, w)), owner.get(&(w, u))) else {
                continue;
            };
            let x = third(&tris[t1], u, w);
            let y = third(&tris[t2], u, w);
            if x.min(y) >= u.min(w) {
                continue;
            }
            if !cocircular(v[u], v[w], v[x], v[y]) {
                continue;
            }
            // quad in ccw order: u, y, w, x
            if orient(v[u], v[y], v[x]) <= 0.0 || orient(v[y], v[w], v[x]) <= 0.0 {
                continue;
            }
            tris[t1] = [u, y, x];
            tris[t2] = [y, w, x];
            flipped = true;
            break;
        }
        if !flipped {
            return;
        }
    }
}

fn third(t: &[usize; 3], a: usize, b: usize) -> usize {
    *t.iter().find(|&&v| v != a && v != b).expect("triangle has a third vertex")
}
