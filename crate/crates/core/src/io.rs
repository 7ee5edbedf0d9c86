//! Text formats: FreeFEM-style `.msh`, legacy ASCII VTK and CSV.
//!
//! `.msh` layout: a header `nv nt ne`, then `nv` lines `x y label`, `nt`
//! lines `i j k region` and `ne` lines `i j label`, with 1-based indices.

use std::fmt::Write as _;

use thiserror::Error;

use crate::fem::SolutionField;
use crate::mesh::{orient, BoundaryEdge, Mesh, MeshError, Point2, Triangle};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IoError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("field has {got} values but the mesh has {expected} nodes")]
    LengthMismatch { expected: usize, got: usize },
    #[error("invalid VTK document: {0}")]
    Vtk(String),
}

pub fn write_msh(mesh: &Mesh) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{} {} {}",
        mesh.n_nodes(),
        mesh.n_triangles(),
        mesh.boundary_edges().len()
    );
    for (p, &b) in mesh.nodes().iter().zip(mesh.node_is_boundary()) {
        let _ = writeln!(out, "{:.16e} {:.16e} {}", p.x, p.y, u8::from(b));
    }
    for t in mesh.triangles() {
        let [a, b, c] = t.nodes;
        let _ = writeln!(out, "{} {} {} {}", a + 1, b + 1, c + 1, t.region);
    }
    for e in mesh.boundary_edges() {
        let _ = writeln!(out, "{} {} {}", e.nodes[0] + 1, e.nodes[1] + 1, e.label);
    }
    out
}

/// A parsed mesh and the normalizations applied while reading it.
#[derive(Debug, Clone, PartialEq)]
pub struct MshRead {
    pub mesh: Mesh,
    pub warnings: Vec<String>,
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    /// Next non-blank line as whitespace-separated fields.
    fn next_fields(&mut self, section: &str, k: usize, total: usize) -> Result<(usize, Vec<&'a str>), IoError> {
        for (i, line) in self.inner.by_ref() {
            self.last = i + 1;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if !fields.is_empty() {
                return Ok((i + 1, fields));
            }
        }
        Err(IoError::Parse {
            line: self.last + 1,
            msg: format!("unexpected end of file in the {section} section ({k} of {total} entries read)"),
        })
    }
}

fn parse_field<T: std::str::FromStr>(line: usize, what: &str, s: &str) -> Result<T, IoError> {
    s.parse().map_err(|_| IoError::Parse {
        line,
        msg: format!("cannot parse {what} from `{s}`"),
    })
}

fn expect_len(line: usize, section: &str, fields: &[&str], min: usize) -> Result<(), IoError> {
    if fields.len() < min {
        return Err(IoError::Parse {
            line,
            msg: format!("{section} entry needs {min} fields, found {}", fields.len()),
        });
    }
    Ok(())
}

fn node_index(line: usize, s: &str, nv: usize) -> Result<usize, IoError> {
    let i: usize = parse_field(line, "node index", s)?;
    if i == 0 || i > nv {
        return Err(IoError::Parse {
            line,
            msg: format!("node index {i} outside 1..={nv}"),
        });
    }
    Ok(i - 1)
}

pub fn read_msh(text: &str) -> Result<Mesh, IoError> {
    Ok(read_msh_with_warnings(text)?.mesh)
}

/// Clockwise triangles are flipped to counter-clockwise and reported.
pub fn read_msh_with_warnings(text: &str) -> Result<MshRead, IoError> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        last: 0,
    };
    let (hl, header) = lines.next_fields("header", 0, 1)?;
    if header.len() != 3 {
        return Err(IoError::Parse {
            line: hl,
            msg: format!("header must be `nv nt ne`, found {} fields", header.len()),
        });
    }
    let nv: usize = parse_field(hl, "node count", header[0])?;
    let nt: usize = parse_field(hl, "triangle count", header[1])?;
    let ne: usize = parse_field(hl, "boundary edge count", header[2])?;

    let mut nodes = Vec::with_capacity(nv);
    let mut labels = Vec::with_capacity(nv);
    for k in 0..nv {
        let (ln, f) = lines.next_fields("vertex", k, nv)?;
        expect_len(ln, "vertex", &f, 3)?;
        nodes.push(Point2::new(parse_field(ln, "x", f[0])?, parse_field(ln, "y", f[1])?));
        labels.push(parse_field::<i64>(ln, "vertex label", f[2])?);
    }

    let mut warnings = Vec::new();
    let mut triangles = Vec::with_capacity(nt);
    for k in 0..nt {
        let (ln, f) = lines.next_fields("triangle", k, nt)?;
        expect_len(ln, "triangle", &f, 4)?;
        let mut ids = [0; 3];
        for (slot, s) in ids.iter_mut().zip(&f) {
            *slot = node_index(ln, s, nv)?;
        }
        let region = parse_field(ln, "region", f[3])?;
        let o = orient(nodes[ids[0]], nodes[ids[1]], nodes[ids[2]]);
        if o == 0.0 || !o.is_finite() {
            return Err(IoError::Parse {
                line: ln,
                msg: format!("triangle {} has zero area", k + 1),
            });
        }
        if o < 0.0 {
            ids.swap(1, 2);
            warnings.push(format!("line {ln}: triangle {} was clockwise; reoriented", k + 1));
        }
        triangles.push(Triangle { nodes: ids, region });
    }

    let mut edges = Vec::with_capacity(ne);
    let mut node_is_boundary = vec![false; nv];
    for k in 0..ne {
        let (ln, f) = lines.next_fields("boundary edge", k, ne)?;
        expect_len(ln, "boundary edge", &f, 3)?;
        let u = node_index(ln, f[0], nv)?;
        let v = node_index(ln, f[1], nv)?;
        node_is_boundary[u] = true;
        node_is_boundary[v] = true;
        edges.push(BoundaryEdge {
            nodes: [u, v],
            label: parse_field(ln, "edge label", f[2])?,
        });
    }
    let mismatched = (0..nv).filter(|&i| (labels[i] != 0) != node_is_boundary[i]).count();
    if mismatched > 0 {
        warnings.push(format!(
            "{mismatched} vertex labels disagree with the boundary edges; edges take precedence"
        ));
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    let mesh = Mesh::new(nodes, triangles, edges, node_is_boundary)?;
    Ok(MshRead { mesh, warnings })
}

/// Legacy ASCII VTK unstructured grid with one point scalar field.
pub fn write_vtk(mesh: &Mesh, values: &[f64], name: &str) -> Result<String, IoError> {
    let nv = mesh.n_nodes();
    if values.len() != nv {
        return Err(IoError::LengthMismatch {
            expected: nv,
            got: values.len(),
        });
    }
    let nt = mesh.n_triangles();
    let mut out = String::new();
    out.push_str("# vtk DataFile Version 2.0\n");
    out.push_str("P1 finite element solution\n");
    out.push_str("ASCII\n");
    out.push_str("DATASET UNSTRUCTURED_GRID\n");
    let _ = writeln!(out, "POINTS {nv} double");
    for p in mesh.nodes() {
        let _ = writeln!(out, "{:.16e} {:.16e} 0", p.x, p.y);
    }
    let _ = writeln!(out, "CELLS {nt} {}", 4 * nt);
    for t in mesh.triangles() {
        let [a, b, c] = t.nodes;
        let _ = writeln!(out, "3 {a} {b} {c}");
    }
    let _ = writeln!(out, "CELL_TYPES {nt}");
    for _ in 0..nt {
        out.push_str("5\n");
    }
    let _ = writeln!(out, "POINT_DATA {nv}");
    let _ = writeln!(out, "SCALARS {name} double 1");
    out.push_str("LOOKUP_TABLE default\n");
    for v in values {
        let _ = writeln!(out, "{v:.16e}");
    }
    Ok(out)
}

pub fn write_field_vtk(u: &SolutionField<'_>, name: &str) -> Result<String, IoError> {
    write_vtk(u.space().mesh(), u.values(), name)
}

/// Counts found by [`validate_vtk`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VtkSummary {
    pub n_points: usize,
    pub n_cells: usize,
    pub scalar_name: String,
}

/// Structural check of a document produced by [`write_vtk`]: section order,
/// declared counts, connectivity ranges and cell types.
pub fn validate_vtk(text: &str) -> Result<VtkSummary, IoError> {
    let bad = |m: String| IoError::Vtk(m);
    let mut lines = text.lines();
    let mut next = |what: &str| lines.next().ok_or_else(|| bad(format!("missing {what}")));
    if next("version line")? != "# vtk DataFile Version 2.0" {
        return Err(bad("first line must be `# vtk DataFile Version 2.0`".into()));
    }
    next("title")?;
    if next("format")?.trim() != "ASCII" {
        return Err(bad("only ASCII documents are supported".into()));
    }
    if next("dataset")?.trim() != "DATASET UNSTRUCTURED_GRID" {
        return Err(bad("expected DATASET UNSTRUCTURED_GRID".into()));
    }
    let keyword = |line: &str, key: &str| -> Result<Vec<usize>, IoError> {
        let mut f = line.split_whitespace();
        if f.next() != Some(key) {
            return Err(IoError::Vtk(format!("expected {key}, found `{line}`")));
        }
        Ok(f.filter_map(|s| s.parse().ok()).collect())
    };
    let np = *keyword(next("POINTS")?, "POINTS")?
        .first()
        .ok_or_else(|| bad("POINTS needs a count".into()))?;
    for k in 0..np {
        let f: Vec<f64> = next("point")?
            .split_whitespace()
            .filter_map(|s| s.parse().ok())
            .collect();
        if f.len() != 3 {
            return Err(bad(format!("point {k} needs 3 coordinates")));
        }
    }
    let cells = keyword(next("CELLS")?, "CELLS")?;
    let (nc, size) = match cells[..] {
        [nc, size] => (nc, size),
        _ => return Err(bad("CELLS needs a count and a size".into())),
    };
    let mut total = 0;
    for k in 0..nc {
        let f: Vec<usize> = next("cell")?
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| bad(format!("cell {k} has a non-integer entry"))))
            .collect::<Result<_, _>>()?;
        if f.is_empty() || f[0] + 1 != f.len() || f[1..].iter().any(|&i| i >= np) {
            return Err(bad(format!("cell {k} has malformed connectivity")));
        }
        total += f.len();
    }
    if total != size {
        return Err(bad(format!("CELLS size {size} but {total} integers present")));
    }
    let nct = *keyword(next("CELL_TYPES")?, "CELL_TYPES")?
        .first()
        .ok_or_else(|| bad("CELL_TYPES count".into()))?;
    if nct != nc {
        return Err(bad(format!("{nct} cell types for {nc} cells")));
    }
    for k in 0..nct {
        if next("cell type")?.trim() != "5" {
            return Err(bad(format!("cell {k} is not a triangle (type 5)")));
        }
    }
    let npd = *keyword(next("POINT_DATA")?, "POINT_DATA")?
        .first()
        .ok_or_else(|| bad("POINT_DATA count".into()))?;
    if npd != np {
        return Err(bad(format!("POINT_DATA {npd} for {np} points")));
    }
    let scalars: Vec<&str> = next("SCALARS")?.split_whitespace().collect();
    if scalars.len() < 3 || scalars[0] != "SCALARS" {
        return Err(bad("expected `SCALARS name type`".into()));
    }
    if next("LOOKUP_TABLE")?.trim() != "LOOKUP_TABLE default" {
        return Err(bad("expected LOOKUP_TABLE default".into()));
    }
    for k in 0..np {
        next("scalar")?
            .trim()
            .parse::<f64>()
            .map_err(|_| bad(format!("scalar {k} is not a number")))?;
    }
    if lines.any(|l| !l.trim().is_empty()) {
        return Err(bad("trailing content after the scalar block".into()));
    }
    Ok(VtkSummary {
        n_points: np,
        n_cells: nc,
        scalar_name: scalars[1].to_string(),
    })
}

/// `x,y,u` per node with a header row.
pub fn write_csv(mesh: &Mesh, values: &[f64]) -> Result<String, IoError> {
    if values.len() != mesh.n_nodes() {
        return Err(IoError::LengthMismatch {
            expected: mesh.n_nodes(),
            got: values.len(),
        });
    }
    let mut out = String::from("x,y,u\n");
    for (p, v) in mesh.nodes().iter().zip(values) {
        let _ = writeln!(out, "{:.16e},{:.16e},{:.16e}", p.x, p.y, v);
    }
    Ok(out)
}
