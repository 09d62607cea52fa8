//! UV-parametrized triangle meshes and the texel <-> surface lookup table.
//!
//! Atlas convention: `u` grows to the right, `v` grows downward, and texel
//! `(row, col)` of an `R x R` grid covers `[col/R, (col+1)/R) x [row/R, (row+1)/R)`.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Chart-overlap tolerance (atlas units) applied when loading a mesh: half a
/// texel of a 256-texel atlas. Tables re-check at their own resolution.
pub const DEFAULT_CHART_TOLERANCE: f64 = 0.5 / 256.0;

const BARY_EPS: f64 = 1e-6;

pub const BUNDLED_OBJ: &str = include_str!("../assets/humanoid.obj");
pub const BUNDLED_PARTS: &str = include_str!("../assets/parts.json");

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 3]>,
    pub uv_corners: Vec<[[f64; 2]; 3]>,
    pub part_labels: Vec<usize>,
    /// Part names indexed by part id (empty string for ids without a group).
    pub part_names: Vec<String>,
}

impl Mesh {
    pub fn num_parts(&self) -> usize {
        self.part_names.len()
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    /// Checks every mesh invariant; charts may overlap by at most `tolerance`
    /// (atlas units, measured as the thickness of the intersection region).
    pub fn validate(&self, tolerance: f64) -> Result<()> {
        let n = self.faces.len();
        if self.uv_corners.len() != n || self.part_labels.len() != n {
            return Err(Error::BadConfig(
                "per-face uv/part arrays do not match face count".into(),
            ));
        }
        for (f, face) in self.faces.iter().enumerate() {
            for &i in face {
                if i >= self.vertices.len() {
                    return Err(Error::BadIndex {
                        face: f,
                        kind: "vertex",
                        index: i as i64,
                        count: self.vertices.len(),
                    });
                }
            }
            for uv in &self.uv_corners[f] {
                if !(0.0..=1.0).contains(&uv[0]) || !(0.0..=1.0).contains(&uv[1]) {
                    return Err(Error::InvalidUv {
                        face: f,
                        u: uv[0],
                        v: uv[1],
                    });
                }
            }
            if self.part_labels[f] >= self.num_parts() {
                return Err(Error::UnknownPart(format!("label {}", self.part_labels[f])));
            }
        }
        check_chart_overlap(&self.uv_corners, tolerance)
    }
}

/// Parses the bundled low-poly humanoid (6 parts).
pub fn bundled_humanoid() -> Mesh {
    let parts = parse_part_table(BUNDLED_PARTS, Path::new("<bundled parts.json>"))
        .expect("bundled part table is valid");
    let mesh = parse_obj(BUNDLED_OBJ, &parts, Path::new("<bundled humanoid.obj>"))
        .expect("bundled mesh parses");
    mesh.validate(DEFAULT_CHART_TOLERANCE)
        .expect("bundled mesh is valid");
    mesh
}

/// Loads an OBJ file, reading part labels from `parts.json` next to it.
pub fn load_mesh(path: &Path) -> Result<Mesh> {
    let sidecar = path
        .parent()
        .map(|d| d.join("parts.json"))
        .unwrap_or_else(|| PathBuf::from("parts.json"));
    load_mesh_with_parts(path, &sidecar)
}

pub fn load_mesh_with_parts(obj: &Path, parts: &Path) -> Result<Mesh> {
    let table_text = fs::read_to_string(parts).map_err(|e| Error::io(parts, e))?;
    let table = parse_part_table(&table_text, parts)?;
    let text = fs::read_to_string(obj).map_err(|e| Error::io(obj, e))?;
    let mesh = parse_obj(&text, &table, obj)?;
    mesh.validate(DEFAULT_CHART_TOLERANCE)?;
    Ok(mesh)
}

pub fn parse_part_table(text: &str, path: &Path) -> Result<HashMap<String, usize>> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        msg: e.to_string(),
    })
}

/// Parses `v`, `vt`, `f`, and `g`/`usemtl` records. Polygons are fan
/// triangulated; other record types are ignored.
pub fn parse_obj(text: &str, parts: &HashMap<String, usize>, path: &Path) -> Result<Mesh> {
    let num_parts = parts.values().map(|&p| p + 1).max().unwrap_or(0);
    let mut part_names = vec![String::new(); num_parts];
    for (name, &id) in parts {
        part_names[id] = name.clone();
    }
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };

    let mut vertices = Vec::new();
    let mut uvs: Vec<[f64; 2]> = Vec::new();
    let mut faces = Vec::new();
    let mut uv_corners = Vec::new();
    let mut part_labels = Vec::new();
    let mut current: Option<usize> = None;

    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut tok = line.split_whitespace();
        let Some(kind) = tok.next() else { continue };
        match kind {
            "v" | "vt" => {
                let nums = tok
                    .map(|s| s.parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| parse_err(lineno, e.to_string()))?;
                if kind == "v" {
                    if nums.len() < 3 {
                        return Err(parse_err(lineno, "vertex needs 3 coordinates".into()));
                    }
                    vertices.push([nums[0], nums[1], nums[2]]);
                } else {
                    if nums.len() < 2 {
                        return Err(parse_err(lineno, "uv needs 2 coordinates".into()));
                    }
                    uvs.push([nums[0], nums[1]]);
                }
            }
            "g" | "usemtl" | "o" => {
                let name = tok.next().unwrap_or("");
                if kind == "o" && !parts.contains_key(name) {
                    continue;
                }
                current = Some(
                    *parts
                        .get(name)
                        .ok_or_else(|| Error::UnknownPart(name.to_string()))?,
                );
            }
            "f" => {
                let face_id = faces.len();
                let mut corners = Vec::new();
                for item in tok {
                    let mut fields = item.split('/');
                    let vi = fields
                        .next()
                        .filter(|s| !s.is_empty())
                        .ok_or_else(|| parse_err(lineno, format!("bad face corner {item:?}")))?;
                    let ti = fields.next().filter(|s| !s.is_empty());
                    let vi = resolve_index(vi, vertices.len(), face_id, "vertex", lineno, path)?;
                    let Some(ti) = ti else {
                        return Err(Error::MissingUvs { face: face_id });
                    };
                    let ti = resolve_index(ti, uvs.len(), face_id, "uv", lineno, path)?;
                    corners.push((vi, ti));
                }
                if corners.len() < 3 {
                    return Err(parse_err(lineno, "face needs at least 3 corners".into()));
                }
                let part = current.ok_or_else(|| Error::UnknownPart("<no group>".into()))?;
                for k in 1..corners.len() - 1 {
                    let tri = [corners[0], corners[k], corners[k + 1]];
                    faces.push([tri[0].0, tri[1].0, tri[2].0]);
                    uv_corners.push([uvs[tri[0].1], uvs[tri[1].1], uvs[tri[2].1]]);
                    part_labels.push(part);
                }
            }
            _ => {}
        }
    }
    Ok(Mesh {
        vertices,
        faces,
        uv_corners,
        part_labels,
        part_names,
    })
}

fn resolve_index(
    s: &str,
    count: usize,
    face: usize,
    kind: &'static str,
    line: usize,
    path: &Path,
) -> Result<usize> {
    let i: i64 = s.parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: format!("bad {kind} index {s:?}"),
    })?;
    let resolved = if i > 0 { i - 1 } else { count as i64 + i };
    if i == 0 || resolved < 0 || resolved >= count as i64 {
        return Err(Error::BadIndex {
            face,
            kind,
            index: i,
            count,
        });
    }
    Ok(resolved as usize)
}

// ---------------------------------------------------------------------------
// 2D triangle geometry

#[inline]
fn cross(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

#[inline]
fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

/// Edge function of directed edge `a -> b` at `p`, evaluated in a canonical
/// vertex order so that `edge(a, b, p) == -edge(b, a, p)` holds bit-exactly.
#[inline]
pub(crate) fn edge(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    if (a[0], a[1]) <= (b[0], b[1]) {
        cross(sub(b, a), sub(p, a))
    } else {
        -cross(sub(a, b), sub(p, b))
    }
}

/// Top-left rule for y-down coordinates and positively oriented triangles.
#[inline]
pub(crate) fn is_top_left(a: [f64; 2], b: [f64; 2]) -> bool {
    let d = sub(b, a);
    (d[1] == 0.0 && d[0] > 0.0) || d[1] < 0.0
}

/// Returns the barycentric coordinates of `p` (w.r.t. the original vertex
/// order) when `p` is covered under the top-left fill rule.
pub(crate) fn covered_barycentric(tri: [[f64; 2]; 3], p: [f64; 2]) -> Option<[f64; 3]> {
    let area = edge(tri[0], tri[1], tri[2]);
    if area == 0.0 {
        return None;
    }
    let (o, area) = if area > 0.0 {
        ([0usize, 1, 2], area)
    } else {
        ([0usize, 2, 1], -area)
    };
    let (a, b, c) = (tri[o[0]], tri[o[1]], tri[o[2]]);
    let wa = edge(b, c, p);
    let wb = edge(c, a, p);
    let wc = edge(a, b, p);
    let inside = |w: f64, e0: [f64; 2], e1: [f64; 2]| w > 0.0 || (w == 0.0 && is_top_left(e0, e1));
    if inside(wa, b, c) && inside(wb, c, a) && inside(wc, a, b) {
        let mut bary = [0.0; 3];
        bary[o[0]] = wa / area;
        bary[o[1]] = wb / area;
        bary[o[2]] = wc / area;
        Some(bary)
    } else {
        None
    }
}

/// Closest point on triangle `tri` to `p`, as (squared distance, barycentrics).
pub(crate) fn closest_point(tri: [[f64; 2]; 3], p: [f64; 2]) -> (f64, [f64; 3]) {
    let [a, b, c] = tri;
    let dot = |x: [f64; 2], y: [f64; 2]| x[0] * y[0] + x[1] * y[1];
    let ab = sub(b, a);
    let ac = sub(c, a);
    let ap = sub(p, a);
    let d1 = dot(ab, ap);
    let d2 = dot(ac, ap);
    let finish = |bary: [f64; 3]| {
        let q = [
            bary[0] * a[0] + bary[1] * b[0] + bary[2] * c[0],
            bary[0] * a[1] + bary[1] * b[1] + bary[2] * c[1],
        ];
        let d = sub(p, q);
        (dot(d, d), bary)
    };
    if d1 <= 0.0 && d2 <= 0.0 {
        return finish([1.0, 0.0, 0.0]);
    }
    let bp = sub(p, b);
    let d3 = dot(ab, bp);
    let d4 = dot(ac, bp);
    if d3 >= 0.0 && d4 <= d3 {
        return finish([0.0, 1.0, 0.0]);
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return finish([1.0 - v, v, 0.0]);
    }
    let cp = sub(p, c);
    let d5 = dot(ab, cp);
    let d6 = dot(ac, cp);
    if d6 >= 0.0 && d5 <= d6 {
        return finish([0.0, 0.0, 1.0]);
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return finish([1.0 - w, 0.0, w]);
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return finish([0.0, 1.0 - w, w]);
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    finish([1.0 - v - w, v, w])
}

/// Clips convex polygon `poly` against the counter-clockwise (positive
/// area) triangle `clip`.
fn clip_polygon(mut poly: Vec<[f64; 2]>, clip: [[f64; 2]; 3]) -> Vec<[f64; 2]> {
    for k in 0..3 {
        let (a, b) = (clip[k], clip[(k + 1) % 3]);
        let side = |p: [f64; 2]| cross(sub(b, a), sub(p, a));
        let mut out = Vec::with_capacity(poly.len() + 1);
        for i in 0..poly.len() {
            let p = poly[i];
            let q = poly[(i + 1) % poly.len()];
            let (sp, sq) = (side(p), side(q));
            if sp >= 0.0 {
                out.push(p);
            }
            if (sp >= 0.0) != (sq >= 0.0) {
                let t = sp / (sp - sq);
                out.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
            }
        }
        poly = out;
        if poly.is_empty() {
            break;
        }
    }
    poly
}

fn oriented(t: [[f64; 2]; 3]) -> [[f64; 2]; 3] {
    if cross(sub(t[1], t[0]), sub(t[2], t[0])) < 0.0 {
        [t[0], t[2], t[1]]
    } else {
        t
    }
}

/// Thickness (`2 * area / perimeter`) of the intersection of two triangles.
pub(crate) fn overlap_depth(a: [[f64; 2]; 3], b: [[f64; 2]; 3]) -> f64 {
    let poly = clip_polygon(oriented(a).to_vec(), oriented(b));
    if poly.len() < 3 {
        return 0.0;
    }
    let mut area = 0.0;
    let mut perim = 0.0;
    for i in 0..poly.len() {
        let p = poly[i];
        let q = poly[(i + 1) % poly.len()];
        area += cross(p, q);
        perim += (sub(q, p)[0].powi(2) + sub(q, p)[1].powi(2)).sqrt();
    }
    let area = 0.5 * area.abs();
    if perim == 0.0 {
        0.0
    } else {
        2.0 * area / perim
    }
}

fn bbox(t: &[[f64; 2]; 3]) -> ([f64; 2], [f64; 2]) {
    let mut lo = t[0];
    let mut hi = t[0];
    for p in &t[1..] {
        lo = [lo[0].min(p[0]), lo[1].min(p[1])];
        hi = [hi[0].max(p[0]), hi[1].max(p[1])];
    }
    (lo, hi)
}

fn check_chart_overlap(uv: &[[[f64; 2]; 3]], tolerance: f64) -> Result<()> {
    let boxes: Vec<_> = uv.iter().map(bbox).collect();
    for i in 0..uv.len() {
        for j in i + 1..uv.len() {
            let (alo, ahi) = boxes[i];
            let (blo, bhi) = boxes[j];
            if alo[0] >= bhi[0] || blo[0] >= ahi[0] || alo[1] >= bhi[1] || blo[1] >= ahi[1] {
                continue;
            }
            let depth = overlap_depth(uv[i], uv[j]);
            if depth > tolerance {
                return Err(Error::OverlappingCharts {
                    a: i,
                    b: j,
                    depth,
                    tolerance,
                });
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Texel table

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TexelEntry {
    pub face: usize,
    pub bary: [f64; 3],
    /// Filled by the seam-dilation pass rather than direct coverage.
    pub seam: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TexelTable {
    pub resolution: usize,
    /// Row-major, `None` for EMPTY texels.
    pub entries: Vec<Option<TexelEntry>>,
    pub part_of_texel: Vec<Option<usize>>,
}

impl TexelTable {
    #[inline]
    pub fn entry(&self, row: usize, col: usize) -> Option<TexelEntry> {
        self.entries[row * self.resolution + col]
    }

    #[inline]
    pub fn part(&self, row: usize, col: usize) -> Option<usize> {
        self.part_of_texel[row * self.resolution + col]
    }

    pub fn covered_count(&self) -> usize {
        self.entries.iter().filter(|e| e.is_some()).count()
    }

    pub fn covered_fraction(&self) -> f64 {
        self.covered_count() as f64 / self.entries.len() as f64
    }

    /// Row-major mask of non-EMPTY texels.
    pub fn coverage_mask(&self) -> Vec<bool> {
        self.entries.iter().map(|e| e.is_some()).collect()
    }

    pub fn parts_present(&self) -> Vec<usize> {
        let mut parts: Vec<usize> = self.part_of_texel.iter().flatten().copied().collect();
        parts.sort_unstable();
        parts.dedup();
        parts
    }
}

/// Rasterizes every UV triangle into an `resolution x resolution` grid.
///
/// Texel centers covered under the top-left rule store the exact barycentric
/// coordinates of the center (lowest face id wins). A second pass assigns
/// still-empty texels whose center lies within half a texel of some
/// triangle to the nearest such triangle, storing the barycentrics of the
/// closest surface point.
pub fn build_texel_table(mesh: &Mesh, resolution: usize) -> Result<TexelTable> {
    if resolution < 4 {
        return Err(Error::BadResolution(resolution));
    }
    mesh.validate(0.5 / resolution as f64)?;
    let r = resolution;
    let rf = r as f64;
    let mut entries: Vec<Option<TexelEntry>> = vec![None; r * r];
    let scaled: Vec<[[f64; 2]; 3]> = mesh
        .uv_corners
        .iter()
        .map(|t| t.map(|p| [p[0] * rf, p[1] * rf]))
        .collect();

    let texel_range = |lo: f64, hi: f64| -> (usize, usize) {
        let a = (lo - 0.5).ceil().max(0.0) as usize;
        let b = ((hi - 0.5).floor().min(rf - 1.0)).max(-1.0);
        (a, (b + 1.0) as usize)
    };

    for (f, tri) in scaled.iter().enumerate() {
        let (lo, hi) = bbox(tri);
        let (c0, c1) = texel_range(lo[0], hi[0]);
        let (r0, r1) = texel_range(lo[1], hi[1]);
        for row in r0..r1 {
            for col in c0..c1 {
                let idx = row * r + col;
                if entries[idx].is_some() {
                    continue;
                }
                let p = [col as f64 + 0.5, row as f64 + 0.5];
                if let Some(bary) = covered_barycentric(*tri, p) {
                    entries[idx] = Some(TexelEntry {
                        face: f,
                        bary,
                        seam: false,
                    });
                }
            }
        }
    }

    // Seam dilation: nearest triangle within half a texel.
    let covered: Vec<bool> = entries.iter().map(|e| e.is_some()).collect();
    let mut best: Vec<f64> = vec![f64::INFINITY; r * r];
    for (f, tri) in scaled.iter().enumerate() {
        let (lo, hi) = bbox(tri);
        let (c0, c1) = texel_range(lo[0] - 0.5, hi[0] + 0.5);
        let (r0, r1) = texel_range(lo[1] - 0.5, hi[1] + 0.5);
        for row in r0..r1 {
            for col in c0..c1 {
                let idx = row * r + col;
                if covered[idx] {
                    continue;
                }
                let p = [col as f64 + 0.5, row as f64 + 0.5];
                let (d2, bary) = closest_point(*tri, p);
                if d2 <= 0.25 && d2 < best[idx] {
                    best[idx] = d2;
                    entries[idx] = Some(TexelEntry {
                        face: f,
                        bary,
                        seam: true,
                    });
                }
            }
        }
    }

    let part_of_texel = entries
        .iter()
        .map(|e| e.map(|e| mesh.part_labels[e.face]))
        .collect();
    Ok(TexelTable {
        resolution,
        entries,
        part_of_texel,
    })
}

/// Barycentric combination of a face's UV corners.
pub fn surface_to_uv(mesh: &Mesh, face: usize, bary: [f64; 3]) -> Result<[f64; 2]> {
    let sum: f64 = bary.iter().sum();
    if bary.iter().any(|&b| !(b >= -BARY_EPS)) || (sum - 1.0).abs() > BARY_EPS {
        return Err(Error::BadBarycentric(bary));
    }
    let uv = mesh.uv_corners.get(face).ok_or(Error::BadIndex {
        face,
        kind: "face",
        index: face as i64,
        count: mesh.faces.len(),
    })?;
    Ok([
        bary[0] * uv[0][0] + bary[1] * uv[1][0] + bary[2] * uv[2][0],
        bary[0] * uv[0][1] + bary[1] * uv[1][1] + bary[2] * uv[2][1],
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_triangle() -> Mesh {
        Mesh {
            vertices: vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            faces: vec![[0, 1, 2]],
            uv_corners: vec![[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]],
            part_labels: vec![0],
            part_names: vec!["all".into()],
        }
    }

    fn table(parts: &[(&str, usize)]) -> HashMap<String, usize> {
        parts.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn bundled_humanoid_has_six_parts() {
        let m = bundled_humanoid();
        assert_eq!(m.num_parts(), 6);
        let mut labels = m.part_labels.clone();
        labels.dedup();
        assert_eq!(labels, vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(m.num_faces(), 72);
    }

    #[test]
    fn single_triangle_obj_parses() {
        let obj = "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvt 1 0\nvt 0 1\ng all\nf 1/1 2/2 3/3\n";
        let m = parse_obj(obj, &table(&[("all", 0)]), Path::new("t.obj")).unwrap();
        m.validate(DEFAULT_CHART_TOLERANCE).unwrap();
        assert_eq!(m, single_triangle());
    }

    #[test]
    fn missing_vt_is_reported() {
        let obj = "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\ng body\nf 1 2 3\n";
        let err = parse_obj(obj, &table(&[("body", 0)]), Path::new("t.obj")).unwrap_err();
        assert!(matches!(err, Error::MissingUvs { face: 0 }));
    }

    #[test]
    fn out_of_range_vertex_is_bad_index() {
        let obj = "v 0 0 0\nvt 0 0\ng body\nf 1/1 2/1 3/1\n";
        let err = parse_obj(obj, &table(&[("body", 0)]), Path::new("t.obj")).unwrap_err();
        assert!(matches!(err, Error::BadIndex { kind: "vertex", .. }));
    }

    #[test]
    fn negative_indices_resolve_relative() {
        let obj = "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvt 1 0\nvt 0 1\ng body\nf -3/-3 -2/-2 -1/-1\n";
        let m = parse_obj(obj, &table(&[("body", 0)]), Path::new("t.obj")).unwrap();
        assert_eq!(m.faces, vec![[0, 1, 2]]);
    }

    #[test]
    fn quads_are_fan_triangulated() {
        let obj = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvt 0 0\nvt 1 0\nvt 1 1\nvt 0 1\ng a\nf 1/1 2/2 3/3 4/4\n";
        let m = parse_obj(obj, &table(&[("a", 0)]), Path::new("q.obj")).unwrap();
        assert_eq!(m.faces, vec![[0, 1, 2], [0, 2, 3]]);
        m.validate(DEFAULT_CHART_TOLERANCE).unwrap();
    }

    #[test]
    fn overlapping_charts_are_rejected() {
        let mut m = single_triangle();
        m.vertices.push([0.0, 0.0, 1.0]);
        m.faces.push([0, 1, 3]);
        m.uv_corners.push([[0.1, 0.1], [0.6, 0.1], [0.1, 0.6]]);
        m.part_labels.push(0);
        assert!(matches!(
            m.validate(DEFAULT_CHART_TOLERANCE),
            Err(Error::OverlappingCharts { a: 0, b: 1, .. })
        ));
    }

    #[test]
    fn shared_edges_are_not_overlap() {
        let a = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let b = [[1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        assert!(overlap_depth(a, b) < 1e-12);
    }

    #[test]
    fn unknown_group_is_rejected() {
        let obj = "g cape\n";
        let err = parse_obj(obj, &table(&[("body", 0)]), Path::new("t.obj")).unwrap_err();
        assert!(matches!(err, Error::UnknownPart(_)));
    }

    #[test]
    fn full_atlas_triangle_half_plane() {
        let t = build_texel_table(&single_triangle(), 4).unwrap();
        for row in 0..4 {
            for col in 0..4 {
                let cu = (col as f64 + 0.5) / 4.0;
                let cv = (row as f64 + 0.5) / 4.0;
                let e = t.entry(row, col);
                let direct = e.is_some_and(|e| !e.seam);
                assert_eq!(direct, cu + cv < 1.0, "texel {row},{col}");
                // Centers exactly on the hypotenuse are within half a texel.
                assert_eq!(e.is_some(), cu + cv <= 1.0, "texel {row},{col}");
            }
        }
    }

    #[test]
    fn tiny_resolution_rejected() {
        assert!(matches!(
            build_texel_table(&single_triangle(), 3),
            Err(Error::BadResolution(3))
        ));
    }

    #[test]
    fn surface_to_uv_vertex_and_centroid() {
        let m = bundled_humanoid();
        let uv = m.uv_corners[5];
        assert_eq!(surface_to_uv(&m, 5, [1.0, 0.0, 0.0]).unwrap(), uv[0]);
        let third = 1.0 / 3.0;
        let c = surface_to_uv(&m, 5, [third, third, third]).unwrap();
        for k in 0..2 {
            let expect = (uv[0][k] + uv[1][k] + uv[2][k]) / 3.0;
            assert!((c[k] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn surface_to_uv_rejects_bad_barycentrics() {
        let m = single_triangle();
        assert!(matches!(
            surface_to_uv(&m, 0, [0.5, 0.6, 0.0]),
            Err(Error::BadBarycentric(_))
        ));
        assert!(matches!(
            surface_to_uv(&m, 0, [-0.1, 0.6, 0.5]),
            Err(Error::BadBarycentric(_))
        ));
    }

    #[test]
    fn shared_edge_texels_go_to_exactly_one_face() {
        // Two triangles splitting the unit square along the anti-diagonal;
        // at even resolution some texel centers sit exactly on that edge.
        let m = Mesh {
            vertices: vec![[0.0; 3]; 4],
            faces: vec![[0, 1, 2], [1, 3, 2]],
            uv_corners: vec![
                [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
                [[1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
            ],
            part_labels: vec![0, 0],
            part_names: vec!["a".into()],
        };
        for r in [4usize, 5, 8] {
            let rf = r as f64;
            for row in 0..r {
                for col in 0..r {
                    let p = [col as f64 + 0.5, row as f64 + 0.5];
                    let hits = m
                        .uv_corners
                        .iter()
                        .filter(|t| covered_barycentric(t.map(|q| [q[0] * rf, q[1] * rf]), p).is_some())
                        .count();
                    assert_eq!(hits, 1, "res {r} texel {row},{col}");
                }
            }
            let t = build_texel_table(&m, r).unwrap();
            assert_eq!(t.covered_count(), r * r);
        }
    }
}
