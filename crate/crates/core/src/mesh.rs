//! Triangulations of the unit disc.
//!
//! [`build_disc_mesh`] places nodes on concentric rings and connects them with
//! an incremental Bowyer–Watson Delaunay triangulation ([`delaunay`]).

use std::collections::{BTreeMap, HashMap, HashSet};
use std::f64::consts::TAU;

use thiserror::Error;

/// Tolerance used by the orientation and in-circle predicates.
pub const PREDICATE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeshError {
    #[error("a disc mesh needs at least 3 boundary points, got {0}")]
    TooFewBoundaryPoints(usize),
    #[error("degenerate point set: {0}")]
    DegenerateInput(String),
    #[error("invalid mesh: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn dist(self, other: Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triangle {
    pub nodes: [usize; 3],
    pub region: i32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundaryEdge {
    pub nodes: [usize; 2],
    pub label: i32,
}

/// Twice the signed area of `(a, b, c)`; positive when counter-clockwise.
pub fn orient(a: Point2, b: Point2, c: Point2) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

/// Positive when `d` lies inside the circumcircle of the counter-clockwise
/// triangle `(a, b, c)`.
pub fn incircle(a: Point2, b: Point2, c: Point2, d: Point2) -> f64 {
    let (adx, ady) = (a.x - d.x, a.y - d.y);
    let (bdx, bdy) = (b.x - d.x, b.y - d.y);
    let (cdx, cdy) = (c.x - d.x, c.y - d.y);
    (adx * adx + ady * ady) * (bdx * cdy - cdx * bdy)
        + (bdx * bdx + bdy * bdy) * (cdx * ady - adx * cdy)
        + (cdx * cdx + cdy * cdy) * (adx * bdy - bdx * ady)
}

/// A conforming triangulation with counter-clockwise triangles.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    nodes: Vec<Point2>,
    triangles: Vec<Triangle>,
    boundary_edges: Vec<BoundaryEdge>,
    node_is_boundary: Vec<bool>,
}

impl Mesh {
    /// Validates and assembles a mesh.
    ///
    /// Every triangle must be counter-clockwise with positive area, every edge
    /// may be shared by at most two triangles, the boundary edges must be
    /// exactly the edges owned by one triangle, and a node is flagged
    /// boundary iff it lies on a boundary edge.
    pub fn new(
        nodes: Vec<Point2>,
        triangles: Vec<Triangle>,
        boundary_edges: Vec<BoundaryEdge>,
        node_is_boundary: Vec<bool>,
    ) -> Result<Mesh, MeshError> {
        let n = nodes.len();
        if node_is_boundary.len() != n {
            return Err(MeshError::Invalid(format!(
                "{} boundary flags for {n} nodes",
                node_is_boundary.len()
            )));
        }
        if let Some(i) = nodes.iter().position(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(MeshError::Invalid(format!("node {i} has non-finite coordinates")));
        }
        let mut counts: HashMap<(usize, usize), usize> = HashMap::new();
        for (t, tri) in triangles.iter().enumerate() {
            let [a, b, c] = tri.nodes;
            if a >= n || b >= n || c >= n {
                return Err(MeshError::Invalid(format!("triangle {t} references a missing node")));
            }
            if a == b || b == c || a == c {
                return Err(MeshError::Invalid(format!("triangle {t} repeats a node")));
            }
            if orient(nodes[a], nodes[b], nodes[c]) <= 0.0 {
                return Err(MeshError::Invalid(format!(
                    "triangle {t} is not counter-clockwise with positive area"
                )));
            }
            for (u, v) in [(a, b), (b, c), (c, a)] {
                *counts.entry(undirected(u, v)).or_default() += 1;
            }
        }
        if let Some((e, _)) = counts.iter().find(|(_, &c)| c > 2) {
            return Err(MeshError::Invalid(format!(
                "edge {e:?} is shared by more than two triangles"
            )));
        }
        let mut listed = HashSet::new();
        for (k, e) in boundary_edges.iter().enumerate() {
            let [u, v] = e.nodes;
            if u >= n || v >= n {
                return Err(MeshError::Invalid(format!(
                    "boundary edge {k} references a missing node"
                )));
            }
            if counts.get(&undirected(u, v)) != Some(&1) {
                return Err(MeshError::Invalid(format!(
                    "boundary edge {k} ({u}, {v}) is not an edge of exactly one triangle"
                )));
            }
            if !listed.insert(undirected(u, v)) {
                return Err(MeshError::Invalid(format!("boundary edge {k} is listed twice")));
            }
        }
        let open = counts.values().filter(|&&c| c == 1).count();
        if open != listed.len() {
            return Err(MeshError::Invalid(format!(
                "{open} edges belong to a single triangle but {} boundary edges are listed",
                listed.len()
            )));
        }
        let mut on_edge = vec![false; n];
        for &(u, v) in &listed {
            on_edge[u] = true;
            on_edge[v] = true;
        }
        if let Some(i) = (0..n).find(|&i| on_edge[i] != node_is_boundary[i]) {
            return Err(MeshError::Invalid(format!(
                "node {i} boundary flag disagrees with the boundary edges"
            )));
        }
        Ok(Mesh {
            nodes,
            triangles,
            boundary_edges,
            node_is_boundary,
        })
    }

    /// Builds a mesh from bare connectivity: the edges owned by one triangle
    /// become boundary edges (label 1, oriented as in their triangle) and all
    /// triangles get region 0.
    pub fn from_triangulation(nodes: Vec<Point2>, tris: Vec<[usize; 3]>) -> Result<Mesh, MeshError> {
        let mut owner: BTreeMap<(usize, usize), Option<(usize, usize)>> = BTreeMap::new();
        for &[a, b, c] in &tris {
            for (u, v) in [(a, b), (b, c), (c, a)] {
                owner
                    .entry(undirected(u, v))
                    .and_modify(|o| *o = None)
                    .or_insert(Some((u, v)));
            }
        }
        let mut node_is_boundary = vec![false; nodes.len()];
        let mut boundary_edges = Vec::new();
        for (u, v) in owner.into_values().flatten() {
            node_is_boundary[u] = true;
            node_is_boundary[v] = true;
            boundary_edges.push(BoundaryEdge {
                nodes: [u, v],
                label: 1,
            });
        }
        let triangles = tris.into_iter().map(|nodes| Triangle { nodes, region: 0 }).collect();
        Mesh::new(nodes, triangles, boundary_edges, node_is_boundary)
    }

    pub fn nodes(&self) -> &[Point2] {
        &self.nodes
    }

    pub fn triangles(&self) -> &[Triangle] {
        &self.triangles
    }

    pub fn boundary_edges(&self) -> &[BoundaryEdge] {
        &self.boundary_edges
    }

    pub fn node_is_boundary(&self) -> &[bool] {
        &self.node_is_boundary
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn vertices(&self, t: usize) -> [Point2; 3] {
        self.triangles[t].nodes.map(|i| self.nodes[i])
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.vertices(t);
        0.5 * orient(a, b, c)
    }

    pub fn centroid(&self, t: usize) -> Point2 {
        let [a, b, c] = self.vertices(t);
        Point2::new((a.x + b.x + c.x) / 3.0, (a.y + b.y + c.y) / 3.0)
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Unique undirected edges, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut set = HashSet::new();
        for tri in &self.triangles {
            let [a, b, c] = tri.nodes;
            for (u, v) in [(a, b), (b, c), (c, a)] {
                set.insert(undirected(u, v));
            }
        }
        let mut edges: Vec<_> = set.into_iter().collect();
        edges.sort_unstable();
        edges
    }

    /// `nodes - edges + triangles`; 1 for a triangulated disc.
    pub fn euler_characteristic(&self) -> i64 {
        self.nodes.len() as i64 - self.edges().len() as i64 + self.triangles.len() as i64
    }

    /// Shoelace area enclosed by the boundary edges, each taken in the
    /// direction its owning triangle traverses it.
    pub fn boundary_polygon_area(&self) -> f64 {
        let mut directed = HashSet::new();
        for tri in &self.triangles {
            let [a, b, c] = tri.nodes;
            directed.extend([(a, b), (b, c), (c, a)]);
        }
        self.boundary_edges
            .iter()
            .map(|e| {
                let [u, v] = e.nodes;
                let (u, v) = if directed.contains(&(u, v)) { (u, v) } else { (v, u) };
                let (p, q) = (self.nodes[u], self.nodes[v]);
                0.5 * (p.x * q.y - q.x * p.y)
            })
            .sum()
    }

    /// Smallest interior angle over all triangles, in degrees.
    pub fn min_angle_degrees(&self) -> f64 {
        let mut min = f64::INFINITY;
        for t in 0..self.triangles.len() {
            let [a, b, c] = self.vertices(t);
            for (p, q, r) in [(a, b, c), (b, c, a), (c, a, b)] {
                let (ux, uy) = (q.x - p.x, q.y - p.y);
                let (vx, vy) = (r.x - p.x, r.y - p.y);
                let angle = (ux * vy - uy * vx).abs().atan2(ux * vx + uy * vy);
                min = min.min(angle.to_degrees());
            }
        }
        min
    }

    /// Barycentric coordinates of `p` in triangle `t`.
    pub fn barycentric(&self, t: usize, p: Point2) -> [f64; 3] {
        let [a, b, c] = self.vertices(t);
        let total = orient(a, b, c);
        [
            orient(p, b, c) / total,
            orient(a, p, c) / total,
            orient(a, b, p) / total,
        ]
    }

    /// Triangle containing `p` and its barycentric coordinates; the lowest
    /// triangle index wins on shared edges.
    pub fn locate_point(&self, p: Point2) -> Option<(usize, [f64; 3])> {
        (0..self.triangles.len()).find_map(|t| {
            let bary = self.barycentric(t, p);
            bary.iter().all(|&l| l >= -PREDICATE_EPS).then_some((t, bary))
        })
    }
}

fn undirected(u: usize, v: usize) -> (usize, usize) {
    if u < v {
        (u, v)
    } else {
        (v, u)
    }
}

/// Maximum edge length over all triangles.
pub fn mesh_size(mesh: &Mesh) -> f64 {
    mesh.edges()
        .into_iter()
        .map(|(u, v)| mesh.nodes[u].dist(mesh.nodes[v]))
        .fold(0.0, f64::max)
}

/// Number of interior rings used for `n_boundary` boundary points.
pub fn ring_count(n_boundary: usize) -> usize {
    ((n_boundary as f64 / TAU).round() as usize).max(1)
}

/// Ring-based node layout for the unit disc: the center, then rings
/// `k = 1..R-1` at radius `k/R` with `round(n k / R)` points, then the `n`
/// boundary points `(cos 2πj/n, sin 2πj/n)`. Rings an odd number of steps in
/// from the boundary are rotated by half a spacing.
pub fn disc_points(n_boundary: usize) -> Vec<Point2> {
    let rings = ring_count(n_boundary);
    let mut pts = vec![Point2::new(0.0, 0.0)];
    for k in 1..rings {
        let radius = k as f64 / rings as f64;
        let count = (n_boundary as f64 * k as f64 / rings as f64).round() as usize;
        let offset = if (rings - k) % 2 == 1 { 0.5 } else { 0.0 };
        for j in 0..count {
            let angle = TAU * (j as f64 + offset) / count as f64;
            pts.push(Point2::new(radius * angle.cos(), radius * angle.sin()));
        }
    }
    for j in 0..n_boundary {
        let angle = TAU * j as f64 / n_boundary as f64;
        pts.push(Point2::new(angle.cos(), angle.sin()));
    }
    pts
}

/// Delaunay mesh of the unit disc with `n_boundary` equally spaced boundary
/// nodes. Boundary edges carry label 1, triangles region 0.
pub fn build_disc_mesh(n_boundary: usize) -> Result<Mesh, MeshError> {
    if n_boundary < 3 {
        return Err(MeshError::TooFewBoundaryPoints(n_boundary));
    }
    let pts = disc_points(n_boundary);
    let tris = delaunay(&pts)?;
    Mesh::from_triangulation(pts, tris)
}

const GHOST: usize = usize::MAX;

/// Bowyer–Watson insertion over a triangulation closed by a vertex at
/// infinity. A ghost triangle `[a, b, GHOST]` stands for the half-plane left
/// of the hull edge `a -> b`.
struct Builder<'a> {
    pts: &'a [Point2],
    tris: Vec<[usize; 3]>,
    alive: Vec<bool>,
    edges: HashMap<(usize, usize), usize>,
}

impl<'a> Builder<'a> {
    fn add(&mut self, v: [usize; 3]) {
        let id = self.tris.len();
        self.tris.push(v);
        self.alive.push(true);
        for k in 0..3 {
            self.edges.insert((v[k], v[(k + 1) % 3]), id);
        }
    }

    fn kill(&mut self, id: usize) {
        self.alive[id] = false;
        let v = self.tris[id];
        for k in 0..3 {
            let key = (v[k], v[(k + 1) % 3]);
            if self.edges.get(&key) == Some(&id) {
                self.edges.remove(&key);
            }
        }
    }

    fn in_conflict(&self, id: usize, p: Point2) -> bool {
        let [a, b, c] = self.tris[id];
        let (pa, pb) = (self.pts[a], self.pts[b]);
        if c == GHOST {
            let o = orient(pa, pb, p);
            if o > PREDICATE_EPS {
                return true;
            }
            // On the hull line: conflict only strictly inside the segment.
            o.abs() <= PREDICATE_EPS
                && (p.x - pa.x) * (pb.x - pa.x) + (p.y - pa.y) * (pb.y - pa.y) > 0.0
                && (p.x - pb.x) * (pa.x - pb.x) + (p.y - pb.y) * (pa.y - pb.y) > 0.0
        } else {
            incircle(pa, pb, self.pts[c], p) > PREDICATE_EPS
        }
    }

    fn contains(&self, id: usize, p: Point2) -> bool {
        let [a, b, c] = self.tris[id];
        if c == GHOST {
            return self.in_conflict(id, p);
        }
        let (pa, pb, pc) = (self.pts[a], self.pts[b], self.pts[c]);
        orient(pa, pb, p) >= -PREDICATE_EPS
            && orient(pb, pc, p) >= -PREDICATE_EPS
            && orient(pc, pa, p) >= -PREDICATE_EPS
    }

    fn insert(&mut self, pi: usize) -> Result<(), MeshError> {
        let p = self.pts[pi];
        // Newest triangles first: consecutive insertions are spatially close.
        let start = (0..self.tris.len())
            .rev()
            .filter(|&t| self.alive[t])
            .find(|&t| self.tris[t][2] != GHOST && self.contains(t, p))
            .or_else(|| {
                (0..self.tris.len())
                    .rev()
                    .find(|&t| self.alive[t] && self.tris[t][2] == GHOST && self.contains(t, p))
            })
            .ok_or_else(|| MeshError::DegenerateInput(format!("cannot locate point {pi}")))?;

        let mut cavity = vec![start];
        let mut seen: HashSet<usize> = HashSet::from([start]);
        let mut k = 0;
        while k < cavity.len() {
            let v = self.tris[cavity[k]];
            k += 1;
            for e in 0..3 {
                let (u, w) = (v[e], v[(e + 1) % 3]);
                if let Some(&nb) = self.edges.get(&(w, u)) {
                    if !seen.contains(&nb) && self.in_conflict(nb, p) {
                        seen.insert(nb);
                        cavity.push(nb);
                    }
                }
            }
        }

        let mut rim = Vec::new();
        for &t in &cavity {
            let v = self.tris[t];
            for e in 0..3 {
                let (u, w) = (v[e], v[(e + 1) % 3]);
                match self.edges.get(&(w, u)) {
                    Some(nb) if seen.contains(nb) => {}
                    _ => rim.push((u, w)),
                }
            }
        }
        for &t in &cavity {
            self.kill(t);
        }
        for (u, w) in rim {
            let tri = if u == GHOST {
                [w, pi, GHOST]
            } else if w == GHOST {
                [pi, u, GHOST]
            } else {
                if orient(self.pts[u], self.pts[w], p) <= 0.0 {
                    return Err(MeshError::DegenerateInput(format!(
                        "point {pi} produced a non-star-shaped cavity"
                    )));
                }
                [u, w, pi]
            };
            self.add(tri);
        }
        Ok(())
    }
}

/// Delaunay triangulation of `points` by incremental Bowyer–Watson insertion
/// in input order. Triangles are counter-clockwise and tile the convex hull.
pub fn delaunay(points: &[Point2]) -> Result<Vec<[usize; 3]>, MeshError> {
    if points.len() < 3 {
        return Err(MeshError::DegenerateInput(format!(
            "need at least 3 points, got {}",
            points.len()
        )));
    }
    if let Some(i) = points.iter().position(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return Err(MeshError::DegenerateInput(format!("point {i} is not finite")));
    }
    check_distinct(points)?;

    let (i0, i1) = (0, 1);
    let i2 = (2..points.len())
        .find(|&k| orient(points[i0], points[i1], points[k]).abs() > PREDICATE_EPS)
        .ok_or_else(|| MeshError::DegenerateInput("all points are collinear".into()))?;
    let (a, b, c) = if orient(points[i0], points[i1], points[i2]) > 0.0 {
        (i0, i1, i2)
    } else {
        (i0, i2, i1)
    };

    let mut builder = Builder {
        pts: points,
        tris: Vec::with_capacity(4 * points.len()),
        alive: Vec::with_capacity(4 * points.len()),
        edges: HashMap::with_capacity(6 * points.len()),
    };
    builder.add([a, b, c]);
    builder.add([b, a, GHOST]);
    builder.add([c, b, GHOST]);
    builder.add([a, c, GHOST]);
    for pi in 0..points.len() {
        if pi != i0 && pi != i1 && pi != i2 {
            builder.insert(pi)?;
        }
    }
    Ok(builder
        .tris
        .iter()
        .zip(&builder.alive)
        .filter(|(v, &alive)| alive && v[2] != GHOST)
        .map(|(v, _)| *v)
        .collect())
}

fn check_distinct(points: &[Point2]) -> Result<(), MeshError> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&i, &j| points[i].x.total_cmp(&points[j].x));
    for (k, &i) in order.iter().enumerate() {
        for &j in &order[k + 1..] {
            if points[j].x - points[i].x > PREDICATE_EPS {
                break;
            }
            if points[i].dist(points[j]) <= PREDICATE_EPS {
                return Err(MeshError::DegenerateInput(format!(
                    "points {} and {} coincide",
                    i.min(j),
                    i.max(j)
                )));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_triangle() -> Mesh {
        let nodes = vec![Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), Point2::new(0.0, 1.0)];
        Mesh::from_triangulation(nodes, vec![[0, 1, 2]]).unwrap()
    }

    fn inscribed_area(n: usize) -> f64 {
        n as f64 / 2.0 * (TAU / n as f64).sin()
    }

    pub(crate) fn brute_force_violations(pts: &[Point2], tris: &[[usize; 3]]) -> usize {
        tris.iter()
            .map(|&[a, b, c]| {
                (0..pts.len())
                    .filter(|&p| p != a && p != b && p != c)
                    .filter(|&p| incircle(pts[a], pts[b], pts[c], pts[p]) > PREDICATE_EPS)
                    .count()
            })
            .sum()
    }

    #[test]
    fn square_and_single_triangle() {
        let sq = [
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 0.0),
            Point2::new(1.0, 1.0),
            Point2::new(0.0, 1.0),
        ];
        let tris = delaunay(&sq).unwrap();
        assert_eq!(tris.len(), 2);
        let area: f64 = tris.iter().map(|&[a, b, c]| 0.5 * orient(sq[a], sq[b], sq[c])).sum();
        assert!((area - 1.0).abs() < 1e-15);

        let tri = delaunay(&sq[..3]).unwrap();
        assert_eq!(tri.len(), 1);
        let [a, b, c] = tri[0];
        assert!(orient(sq[a], sq[b], sq[c]) > 0.0);
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        let line: Vec<_> = (0..5).map(|i| Point2::new(i as f64, 2.0 * i as f64)).collect();
        assert!(matches!(delaunay(&line), Err(MeshError::DegenerateInput(_))));
        let dup = [Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), Point2::new(0.0, 0.0)];
        assert!(matches!(delaunay(&dup), Err(MeshError::DegenerateInput(_))));
        assert!(matches!(delaunay(&dup[..2]), Err(MeshError::DegenerateInput(_))));
        assert_eq!(build_disc_mesh(2), Err(MeshError::TooFewBoundaryPoints(2)));
    }

    #[test]
    fn random_points_are_delaunay() {
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        let pts: Vec<Point2> = (0..100)
            .map(|_| {
                let r = rng.gen::<f64>().sqrt();
                let t = rng.gen_range(0.0..TAU);
                Point2::new(r * t.cos(), r * t.sin())
            })
            .collect();
        let tris = delaunay(&pts).unwrap();
        assert_eq!(brute_force_violations(&pts, &tris), 0);
        for &[a, b, c] in &tris {
            assert!(orient(pts[a], pts[b], pts[c]) > 0.0);
        }
    }

    #[test]
    fn hexagon_fan() {
        let m = build_disc_mesh(6).unwrap();
        assert_eq!(m.n_nodes(), 7);
        assert_eq!(m.n_triangles(), 6);
        assert_eq!(m.boundary_edges().len(), 6);
        assert!((m.area() - 1.5 * 3f64.sqrt()).abs() < 1e-12);
        assert!((mesh_size(&m) - 1.0).abs() < 1e-12);
        assert_eq!(m.node_is_boundary().iter().filter(|&&b| !b).count(), 1);

        let (t, bary) = m.locate_point(Point2::new(0.0, 0.0)).unwrap();
        let center_slot = m.triangles()[t].nodes.iter().position(|&i| i == 0).unwrap();
        assert!((bary[center_slot] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disc_mesh_invariants() {
        for n in [3, 6, 12, 25, 50, 100, 200] {
            let m = build_disc_mesh(n).unwrap();
            assert_eq!(m.euler_characteristic(), 1, "n = {n}");
            assert!((m.area() - inscribed_area(n)).abs() < 1e-10, "n = {n}");
            assert!((m.area() - m.boundary_polygon_area()).abs() < 1e-10);
            let boundary: Vec<_> = (0..m.n_nodes()).filter(|&i| m.node_is_boundary()[i]).collect();
            assert_eq!(boundary.len(), n);
            for &i in &boundary {
                let p = m.nodes()[i];
                assert!((p.x * p.x + p.y * p.y - 1.0).abs() < 1e-12);
            }
            assert!(m.boundary_edges().iter().all(|e| e.label == 1));
        }
        let m = build_disc_mesh(200).unwrap();
        assert!((m.area() - std::f64::consts::PI).abs() > 5.1e-4);
        assert!((m.area() - std::f64::consts::PI).abs() < 5.3e-4);
    }

    #[test]
    fn disc_meshes_satisfy_empty_circumcircle() {
        for n in [12, 25, 50] {
            let m = build_disc_mesh(n).unwrap();
            let tris: Vec<_> = m.triangles().iter().map(|t| t.nodes).collect();
            assert_eq!(brute_force_violations(m.nodes(), &tris), 0, "n = {n}");
        }
    }

    #[test]
    fn minimum_angle_floor() {
        for n in [25, 50, 100, 200] {
            let m = build_disc_mesh(n).unwrap();
            assert!(m.min_angle_degrees() >= 15.0, "n = {n}: {}", m.min_angle_degrees());
        }
    }

    #[test]
    fn mesh_size_halves_under_refinement() {
        assert!((mesh_size(&unit_triangle()) - 2f64.sqrt()).abs() < 1e-15);
        for n in [25, 50, 100] {
            let coarse = mesh_size(&build_disc_mesh(n).unwrap());
            let fine = mesh_size(&build_disc_mesh(2 * n).unwrap());
            let ratio = coarse / fine;
            assert!((1.7..=2.3).contains(&ratio), "n = {n}: ratio {ratio}");
        }
    }

    #[test]
    fn locate_point_cases() {
        let m = build_disc_mesh(6).unwrap();
        assert!(m.locate_point(Point2::new(2.0, 0.0)).is_none());
        for n in [6, 50] {
            let m = build_disc_mesh(n).unwrap();
            let c = m.centroid(0);
            let (t, bary) = m.locate_point(c).unwrap();
            assert_eq!(t, 0);
            for l in bary {
                assert!((l - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn invalid_meshes_are_rejected() {
        let nodes = vec![Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), Point2::new(0.0, 1.0)];
        let cw = vec![Triangle {
            nodes: [0, 2, 1],
            region: 0,
        }];
        let edges = vec![
            BoundaryEdge {
                nodes: [0, 1],
                label: 1,
            },
            BoundaryEdge {
                nodes: [1, 2],
                label: 1,
            },
            BoundaryEdge {
                nodes: [2, 0],
                label: 1,
            },
        ];
        assert!(Mesh::new(nodes.clone(), cw, edges.clone(), vec![true; 3]).is_err());
        let ccw = vec![Triangle {
            nodes: [0, 1, 2],
            region: 0,
        }];
        assert!(Mesh::new(nodes.clone(), ccw.clone(), edges[..2].to_vec(), vec![true; 3]).is_err());
        assert!(Mesh::new(nodes.clone(), ccw.clone(), edges.clone(), vec![true, true, false]).is_err());
        let dangling = vec![Triangle {
            nodes: [0, 1, 5],
            region: 0,
        }];
        assert!(Mesh::new(nodes.clone(), dangling, edges.clone(), vec![true; 3]).is_err());
        assert!(Mesh::new(nodes, ccw, edges, vec![true; 3]).is_ok());
    }
}
