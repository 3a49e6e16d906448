use std::collections::HashMap;

use nalgebra::Vector3;

use super::ransac::plane_basis;
use super::GeometryError;

/// Result of [`convex_hull`].
///
/// When all input points are coplanar (within tolerance) the hull is the 2D
/// hull in that plane: `planar` is set, `vertices` lists the polygon in
/// counter-clockwise order and `faces` is empty.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexHull {
    pub vertices: Vec<usize>,
    /// Triangles with outward (counter-clockwise) winding.
    pub faces: Vec<[usize; 3]>,
    pub planar: bool,
}

struct Face {
    verts: [usize; 3],
    normal: Vector3<f64>,
    offset: f64,
    outside: Vec<usize>,
    alive: bool,
}

impl Face {
    fn new(verts: [usize; 3], pts: &[Vector3<f64>]) -> Self {
        let [a, b, c] = verts;
        let n = (pts[b] - pts[a]).cross(&(pts[c] - pts[a]));
        let norm = n.norm();
        let normal = if norm > 0.0 { n / norm } else { Vector3::zeros() };
        Self {
            verts,
            normal,
            offset: -normal.dot(&pts[a]),
            outside: Vec::new(),
            alive: true,
        }
    }

    fn distance(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(p) + self.offset
    }

    fn edges(&self) -> [(usize, usize); 3] {
        let [a, b, c] = self.verts;
        [(a, b), (b, c), (c, a)]
    }
}

/// 3D convex hull by quickhull. Points within a small tolerance of a face
/// are treated as lying on the hull and are not reported as vertices.
pub fn convex_hull(points: &[Vector3<f64>]) -> Result<ConvexHull, GeometryError> {
    if points.len() < 3 {
        return Err(GeometryError::DegenerateInput(format!("{} points", points.len())));
    }
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let diag = (hi - lo).norm();
    if diag == 0.0 || !diag.is_finite() {
        return Err(GeometryError::DegenerateInput("coincident or non-finite points".into()));
    }
    let eps = 1e-11 * diag;

    // initial simplex
    let mut extremes = Vec::with_capacity(6);
    for axis in 0..3 {
        let (imin, imax) = points.iter().enumerate().fold((0, 0), |(a, b), (i, p)| {
            (
                if p[axis] < points[a][axis] { i } else { a },
                if p[axis] > points[b][axis] { i } else { b },
            )
        });
        extremes.push(imin);
        extremes.push(imax);
    }
    let mut best = (0.0, extremes[0], extremes[1]);
    for &i in &extremes {
        for &j in &extremes {
            let d = (points[i] - points[j]).norm_squared();
            if d > best.0 {
                best = (d, i, j);
            }
        }
    }
    let (i0, i1) = (best.1, best.2);
    let dir = (points[i1] - points[i0]).normalize();
    let (i2, d2) = argmax(points, |p| {
        let v = p - points[i0];
        (v - dir * v.dot(&dir)).norm()
    });
    if d2 <= eps {
        return Err(GeometryError::DegenerateInput("all points are collinear".into()));
    }
    let base = Face::new([i0, i1, i2], points);
    let (i3, d3) = argmax(points, |p| base.distance(p).abs());
    if d3 <= eps {
        let (u, v) = plane_basis(&base.normal);
        let flat: Vec<[f64; 2]> = points.iter().map(|p| [p.dot(&u), p.dot(&v)]).collect();
        return Ok(ConvexHull {
            vertices: convex_hull_2d(&flat),
            faces: Vec::new(),
            planar: true,
        });
    }

    let mut faces: Vec<Face> = Vec::new();
    let mut edge_owner: HashMap<(usize, usize), usize> = HashMap::new();
    let apex_above = base.distance(&points[i3]) > 0.0;
    let tetra = if apex_above {
        [[i0, i2, i1], [i0, i1, i3], [i1, i2, i3], [i2, i0, i3]]
    } else {
        [[i0, i1, i2], [i0, i3, i1], [i1, i3, i2], [i2, i3, i0]]
    };
    for verts in tetra {
        push_face(&mut faces, &mut edge_owner, Face::new(verts, points));
    }

    let simplex = [i0, i1, i2, i3];
    for (i, p) in points.iter().enumerate() {
        if simplex.contains(&i) {
            continue;
        }
        assign(&mut faces, 0..4, i, p, eps);
    }

    let mut pending: Vec<usize> = (0..faces.len()).filter(|&f| !faces[f].outside.is_empty()).collect();
    while let Some(fid) = pending.pop() {
        if !faces[fid].alive || faces[fid].outside.is_empty() {
            continue;
        }
        let eye = *faces[fid]
            .outside
            .iter()
            .max_by(|&&a, &&b| {
                faces[fid]
                    .distance(&points[a])
                    .total_cmp(&faces[fid].distance(&points[b]))
                    .then(b.cmp(&a))
            })
            .expect("non-empty outside set");
        let eye_p = points[eye];

        // visible region grown from the owning face
        let mut visible = vec![fid];
        let mut is_visible: HashMap<usize, bool> = HashMap::from([(fid, true)]);
        let mut cursor = 0;
        while cursor < visible.len() {
            let f = visible[cursor];
            cursor += 1;
            for (a, b) in faces[f].edges() {
                let Some(&g) = edge_owner.get(&(b, a)) else { continue };
                if is_visible.contains_key(&g) {
                    continue;
                }
                let vis = faces[g].distance(&eye_p) > eps;
                is_visible.insert(g, vis);
                if vis {
                    visible.push(g);
                }
            }
        }

        let mut horizon = Vec::new();
        for &f in &visible {
            for (a, b) in faces[f].edges() {
                let twin = edge_owner.get(&(b, a)).copied();
                if twin.is_none_or(|g| !is_visible.get(&g).copied().unwrap_or(false)) {
                    horizon.push((a, b));
                }
            }
        }

        let mut orphans = Vec::new();
        for &f in &visible {
            faces[f].alive = false;
            orphans.append(&mut faces[f].outside);
            for e in faces[f].edges() {
                if edge_owner.get(&e) == Some(&f) {
                    edge_owner.remove(&e);
                }
            }
        }
        let first_new = faces.len();
        for (a, b) in horizon {
            push_face(&mut faces, &mut edge_owner, Face::new([a, b, eye], points));
        }
        let new_range = first_new..faces.len();
        for i in orphans {
            if i != eye {
                assign(&mut faces, new_range.clone(), i, &points[i], eps);
            }
        }
        pending.extend(new_range.filter(|&f| !faces[f].outside.is_empty()));
    }

    let alive: Vec<[usize; 3]> = faces.iter().filter(|f| f.alive).map(|f| f.verts).collect();
    let mut vertices: Vec<usize> = alive.iter().flatten().copied().collect();
    vertices.sort_unstable();
    vertices.dedup();
    Ok(ConvexHull {
        vertices,
        faces: alive,
        planar: false,
    })
}

fn push_face(faces: &mut Vec<Face>, edge_owner: &mut HashMap<(usize, usize), usize>, face: Face) {
    let id = faces.len();
    for e in face.edges() {
        edge_owner.insert(e, id);
    }
    faces.push(face);
}

fn assign(faces: &mut [Face], candidates: std::ops::Range<usize>, i: usize, p: &Vector3<f64>, eps: f64) {
    let mut best: Option<(usize, f64)> = None;
    for f in candidates {
        let d = faces[f].distance(p);
        if d > eps && best.is_none_or(|(_, bd)| d > bd) {
            best = Some((f, d));
        }
    }
    if let Some((f, _)) = best {
        faces[f].outside.push(i);
    }
}

fn argmax(points: &[Vector3<f64>], f: impl Fn(&Vector3<f64>) -> f64) -> (usize, f64) {
    points
        .iter()
        .enumerate()
        .map(|(i, p)| (i, f(p)))
        .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best })
}

/// 2D convex hull (monotone chain). Returns indices in counter-clockwise
/// order without collinear boundary points.
pub fn convex_hull_2d(points: &[[f64; 2]]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..points.len()).collect();
    idx.sort_by(|&a, &b| {
        points[a][0]
            .total_cmp(&points[b][0])
            .then(points[a][1].total_cmp(&points[b][1]))
            .then(a.cmp(&b))
    });
    idx.dedup_by(|a, b| points[*a] == points[*b]);
    if idx.len() < 3 {
        return idx;
    }
    let cross = |o: usize, a: usize, b: usize| {
        (points[a][0] - points[o][0]) * (points[b][1] - points[o][1])
            - (points[a][1] - points[o][1]) * (points[b][0] - points[o][0])
    };
    let mut hull: Vec<usize> = Vec::with_capacity(2 * idx.len());
    for &i in &idx {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], i) <= 0.0 {
            hull.pop();
        }
        hull.push(i);
    }
    let lower = hull.len() + 1;
    for &i in idx.iter().rev().skip(1) {
        while hull.len() >= lower && cross(hull[hull.len() - 2], hull[hull.len() - 1], i) <= 0.0 {
            hull.pop();
        }
        hull.push(i);
    }
    hull.pop();
    hull
}

/// Shoelace area of a simple polygon.
pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut twice = 0.0;
    for i in 0..poly.len() {
        let [x0, y0] = poly[i];
        let [x1, y1] = poly[(i + 1) % poly.len()];
        twice += x0 * y1 - x1 * y0;
    }
    twice.abs() / 2.0
}
