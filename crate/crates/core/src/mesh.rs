//! Layered quadrilateral meshes of the `x–σ` computational domain.
//!
//! The domain is the tensor product of a 1D free-surface mesh in `x` and a
//! set of `σ` layers with `σ = 0` on the bottom and `σ = 1` at the free
//! surface. Node numbering of every [`DofMap`] is column-major in `x`
//! (`global = ix * n_sigma_nodes + is`), which keeps the profile of the
//! assembled operators narrow.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BoundaryTag {
    FreeSurface,
    Bottom,
    WallLeft,
    WallRight,
}

impl BoundaryTag {
    pub fn as_str(self) -> &'static str {
        match self {
            BoundaryTag::FreeSurface => "FreeSurface",
            BoundaryTag::Bottom => "Bottom",
            BoundaryTag::WallLeft => "WallLeft",
            BoundaryTag::WallRight => "WallRight",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "FreeSurface" => Some(BoundaryTag::FreeSurface),
            "Bottom" => Some(BoundaryTag::Bottom),
            "WallLeft" => Some(BoundaryTag::WallLeft),
            "WallRight" => Some(BoundaryTag::WallRight),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceMesh1D {
    x_nodes: Vec<f64>,
}

impl SurfaceMesh1D {
    pub fn new(x_nodes: Vec<f64>) -> Result<Self> {
        if x_nodes.len() < 2 {
            return Err(Error::InvalidMesh("surface mesh needs at least one element".into()));
        }
        if x_nodes.windows(2).any(|w| !(w[1] > w[0])) || x_nodes.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidMesh("surface vertices must be finite and strictly increasing".into()));
        }
        Ok(Self { x_nodes })
    }

    pub fn uniform(x_min: f64, x_max: f64, n: usize) -> Result<Self> {
        if n == 0 || !(x_max > x_min) {
            return Err(Error::InvalidMesh(format!(
                "cannot build {n} surface elements on [{x_min}, {x_max}]"
            )));
        }
        let h = (x_max - x_min) / n as f64;
        let mut xs: Vec<f64> = (0..=n).map(|i| x_min + h * i as f64).collect();
        xs[n] = x_max;
        Self::new(xs)
    }

    pub fn x_nodes(&self) -> &[f64] {
        &self.x_nodes
    }

    pub fn n_elements(&self) -> usize {
        self.x_nodes.len() - 1
    }

    pub fn element_bounds(&self, e: usize) -> (f64, f64) {
        (self.x_nodes[e], self.x_nodes[e + 1])
    }

    /// Element containing `x` and the reference coordinate of `x` in it.
    pub fn locate(&self, x: f64) -> Option<(usize, f64)> {
        let xs = &self.x_nodes;
        if x < xs[0] || x > xs[xs.len() - 1] {
            return None;
        }
        let e = match xs.binary_search_by(|v| v.total_cmp(&x)) {
            Ok(i) => i.min(self.n_elements() - 1),
            Err(i) => i - 1,
        };
        let (a, b) = self.element_bounds(e);
        Some((e, 2.0 * (x - a) / (b - a) - 1.0))
    }
}

/// Still-water depth `h(x)` and its slope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Bathymetry {
    Flat { depth: f64 },
    /// Piecewise-linear profile through `(x, h)` points, held constant
    /// outside the first and last point.
    Piecewise { points: Vec<[f64; 2]> },
}

impl Bathymetry {
    pub fn depth(&self, x: f64) -> f64 {
        match self {
            Bathymetry::Flat { depth } => *depth,
            Bathymetry::Piecewise { points } => {
                let first = points[0];
                let last = points[points.len() - 1];
                if x <= first[0] {
                    return first[1];
                }
                if x >= last[0] {
                    return last[1];
                }
                let k = points.partition_point(|p| p[0] <= x);
                let (a, b) = (points[k - 1], points[k]);
                a[1] + (b[1] - a[1]) * (x - a[0]) / (b[0] - a[0])
            }
        }
    }

    /// `∂h/∂x`; at a kink the slope of the segment to the right is used.
    pub fn slope(&self, x: f64) -> f64 {
        match self {
            Bathymetry::Flat { .. } => 0.0,
            Bathymetry::Piecewise { points } => {
                if x < points[0][0] || x >= points[points.len() - 1][0] {
                    return 0.0;
                }
                let k = points.partition_point(|p| p[0] <= x);
                let (a, b) = (points[k - 1], points[k]);
                (b[1] - a[1]) / (b[0] - a[0])
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Bathymetry::Flat { depth } if *depth > 0.0 => Ok(()),
            Bathymetry::Flat { depth } => Err(Error::InvalidMesh(format!("non-positive depth {depth}"))),
            Bathymetry::Piecewise { points } => {
                if points.is_empty() {
                    return Err(Error::InvalidMesh("empty bathymetry profile".into()));
                }
                if points.windows(2).any(|w| !(w[1][0] > w[0][0])) {
                    return Err(Error::InvalidMesh("bathymetry abscissae must increase".into()));
                }
                if points.iter().any(|p| !(p[1] > 0.0)) {
                    return Err(Error::InvalidMesh("bathymetry depth must be positive".into()));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayeredMesh {
    surface: SurfaceMesh1D,
    sigma_levels: Vec<f64>,
    vertices: Vec<[f64; 2]>,
    quads: Vec<[usize; 4]>,
    boundary: Vec<(usize, usize, BoundaryTag)>,
}

impl LayeredMesh {
    /// Builds the tensor-product mesh of `surface` with the given `σ` levels
    /// (increasing from 0 to 1).
    pub fn from_layers(surface: SurfaceMesh1D, sigma_levels: Vec<f64>) -> Result<Self> {
        if sigma_levels.len() < 2 {
            return Err(Error::InvalidMesh("need at least one sigma layer".into()));
        }
        if sigma_levels[0] != 0.0 || sigma_levels[sigma_levels.len() - 1] != 1.0 {
            return Err(Error::InvalidMesh("sigma levels must run from 0 to 1".into()));
        }
        if sigma_levels.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidMesh("sigma levels must be strictly increasing".into()));
        }
        let nxv = surface.x_nodes.len();
        let nsv = sigma_levels.len();
        let vid = |ix: usize, is: usize| ix * nsv + is;
        let mut vertices = Vec::with_capacity(nxv * nsv);
        for &x in &surface.x_nodes {
            for &s in &sigma_levels {
                vertices.push([x, s]);
            }
        }
        let mut quads = Vec::with_capacity((nxv - 1) * (nsv - 1));
        for ex in 0..nxv - 1 {
            for es in 0..nsv - 1 {
                quads.push([vid(ex, es), vid(ex + 1, es), vid(ex + 1, es + 1), vid(ex, es + 1)]);
            }
        }
        let mut boundary = Vec::new();
        for ex in 0..nxv - 1 {
            boundary.push((vid(ex, 0), vid(ex + 1, 0), BoundaryTag::Bottom));
        }
        for es in 0..nsv - 1 {
            boundary.push((vid(nxv - 1, es), vid(nxv - 1, es + 1), BoundaryTag::WallRight));
        }
        for ex in (0..nxv - 1).rev() {
            boundary.push((vid(ex + 1, nsv - 1), vid(ex, nsv - 1), BoundaryTag::FreeSurface));
        }
        for es in (0..nsv - 1).rev() {
            boundary.push((vid(0, es + 1), vid(0, es), BoundaryTag::WallLeft));
        }
        Ok(Self {
            surface,
            sigma_levels,
            vertices,
            quads,
            boundary,
        })
    }

    pub fn surface(&self) -> &SurfaceMesh1D {
        &self.surface
    }

    pub fn sigma_levels(&self) -> &[f64] {
        &self.sigma_levels
    }

    pub fn n_x(&self) -> usize {
        self.surface.n_elements()
    }

    pub fn n_sigma(&self) -> usize {
        self.sigma_levels.len() - 1
    }

    pub fn n_elements(&self) -> usize {
        self.quads.len()
    }

    /// Element index of column `ex`, layer `es`.
    pub fn element_index(&self, ex: usize, es: usize) -> usize {
        ex * self.n_sigma() + es
    }

    /// `(ex, es)` of element `e`.
    pub fn element_position(&self, e: usize) -> (usize, usize) {
        (e / self.n_sigma(), e % self.n_sigma())
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn quads(&self) -> &[[usize; 4]] {
        &self.quads
    }

    pub fn boundary_edges(&self) -> &[(usize, usize, BoundaryTag)] {
        &self.boundary
    }

    /// Signed area of element `e` in `(x, σ)` coordinates (shoelace formula).
    pub fn element_area(&self, e: usize) -> f64 {
        let q = self.quads[e];
        let mut a = 0.0;
        for k in 0..4 {
            let p = self.vertices[q[k]];
            let r = self.vertices[q[(k + 1) % 4]];
            a += p[0] * r[1] - r[0] * p[1];
        }
        0.5 * a
    }
}

/// Uniform structured mesh with `n_x` columns and `n_sigma` uniform layers.
pub fn build_structured(
    x_min: f64,
    x_max: f64,
    n_x: usize,
    n_sigma: usize,
    bathymetry: &Bathymetry,
) -> Result<LayeredMesh> {
    if n_x == 0 || n_sigma == 0 {
        return Err(Error::InvalidMesh(format!(
            "element counts must be positive (n_x = {n_x}, n_sigma = {n_sigma})"
        )));
    }
    bathymetry.validate()?;
    let surface = SurfaceMesh1D::uniform(x_min, x_max, n_x)?;
    let mut levels: Vec<f64> = (0..=n_sigma).map(|k| k as f64 / n_sigma as f64).collect();
    levels[n_sigma] = 1.0;
    LayeredMesh::from_layers(surface, levels)
}

/// Continuous nodal numbering for a polynomial-order pair.
#[derive(Debug, Clone, PartialEq)]
pub struct DofMap {
    px: usize,
    ps: usize,
    n_x: usize,
    n_sigma: usize,
    nx_nodes: usize,
    ns_nodes: usize,
    x_coords: Vec<f64>,
    sigma_coords: Vec<f64>,
}

pub fn build_dofmap(mesh: &LayeredMesh, px: usize, ps: usize) -> Result<DofMap> {
    if px == 0 {
        return Err(Error::InvalidOrder(px));
    }
    if ps == 0 {
        return Err(Error::InvalidOrder(ps));
    }
    let bx = crate::basis::lgl_basis(px)?;
    let bs = crate::basis::lgl_basis(ps)?;
    let expand = |verts: &[f64], b: &crate::basis::BasisSet| {
        let p = b.order();
        let mut out = Vec::with_capacity((verts.len() - 1) * p + 1);
        for w in verts.windows(2) {
            let (a, c) = (w[0], w[1]);
            for (k, &xi) in b.nodes().iter().enumerate().take(p) {
                if k == 0 {
                    out.push(a);
                } else {
                    out.push(a + 0.5 * (xi + 1.0) * (c - a));
                }
            }
        }
        out.push(verts[verts.len() - 1]);
        out
    };
    let x_coords = expand(mesh.surface().x_nodes(), &bx);
    let sigma_coords = expand(mesh.sigma_levels(), &bs);
    Ok(DofMap {
        px,
        ps,
        n_x: mesh.n_x(),
        n_sigma: mesh.n_sigma(),
        nx_nodes: x_coords.len(),
        ns_nodes: sigma_coords.len(),
        x_coords,
        sigma_coords,
    })
}

impl DofMap {
    pub fn orders(&self) -> (usize, usize) {
        (self.px, self.ps)
    }

    pub fn n_dofs(&self) -> usize {
        self.nx_nodes * self.ns_nodes
    }

    pub fn nx_nodes(&self) -> usize {
        self.nx_nodes
    }

    pub fn ns_nodes(&self) -> usize {
        self.ns_nodes
    }

    pub fn n_elements(&self) -> usize {
        self.n_x * self.n_sigma
    }

    pub fn element_grid(&self) -> (usize, usize) {
        (self.n_x, self.n_sigma)
    }

    #[inline]
    pub fn global(&self, ix: usize, is: usize) -> usize {
        ix * self.ns_nodes + is
    }

    /// `(ix, is)` of a global node.
    #[inline]
    pub fn node_position(&self, g: usize) -> (usize, usize) {
        (g / self.ns_nodes, g % self.ns_nodes)
    }

    pub fn coords(&self, g: usize) -> (f64, f64) {
        let (ix, is) = self.node_position(g);
        (self.x_coords[ix], self.sigma_coords[is])
    }

    /// Nodal abscissae along a horizontal node line (also the surface nodes).
    pub fn x_coords(&self) -> &[f64] {
        &self.x_coords
    }

    pub fn sigma_coords(&self) -> &[f64] {
        &self.sigma_coords
    }

    /// Column and layer of element `e` (element ordering matches [`LayeredMesh`]).
    pub fn element_position(&self, e: usize) -> (usize, usize) {
        (e / self.n_sigma, e % self.n_sigma)
    }

    /// Local-to-global table of element `e`; local node `(a, b)` sits at
    /// position `a * (ps + 1) + b`.
    pub fn element_nodes(&self, e: usize) -> Vec<usize> {
        let (ex, es) = self.element_position(e);
        let mut out = Vec::with_capacity((self.px + 1) * (self.ps + 1));
        for a in 0..=self.px {
            for b in 0..=self.ps {
                out.push(self.global(ex * self.px + a, es * self.ps + b));
            }
        }
        out
    }

    pub fn boundary_nodes(&self, tag: BoundaryTag) -> Vec<usize> {
        match tag {
            BoundaryTag::FreeSurface => (0..self.nx_nodes).map(|ix| self.global(ix, self.ns_nodes - 1)).collect(),
            BoundaryTag::Bottom => (0..self.nx_nodes).map(|ix| self.global(ix, 0)).collect(),
            BoundaryTag::WallLeft => (0..self.ns_nodes).map(|is| self.global(0, is)).collect(),
            BoundaryTag::WallRight => (0..self.ns_nodes).map(|is| self.global(self.nx_nodes - 1, is)).collect(),
        }
    }

    /// Number of surface nodes (`n_x * P_x + 1`).
    pub fn n_surface(&self) -> usize {
        self.nx_nodes
    }

    /// Largest ratio between the vertical and horizontal stiffness couplings
    /// of the discrete operator, `(Δx / (d Δσ))²` per element, with `d` the
    /// smallest still-water depth under the element.
    pub fn discrete_anisotropy(&self, mesh: &LayeredMesh, bathymetry: &Bathymetry) -> f64 {
        let mut worst: f64 = 0.0;
        for e in 0..self.n_elements() {
            let (ex, es) = self.element_position(e);
            let (x0, x1) = mesh.surface().element_bounds(ex);
            let ds = mesh.sigma_levels()[es + 1] - mesh.sigma_levels()[es];
            let d = self.x_coords[ex * self.px..=(ex + 1) * self.px]
                .iter()
                .map(|&x| bathymetry.depth(x))
                .fold(f64::INFINITY, f64::min);
            let r = (x1 - x0) / (d * ds);
            worst = worst.max(r * r);
        }
        worst
    }
}

const MESH_HEADER: &str = "wavemg-mesh v1";

pub fn write_mesh(mesh: &LayeredMesh, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, mesh_to_string(mesh))?;
    Ok(())
}

pub fn mesh_to_string(mesh: &LayeredMesh) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{MESH_HEADER}");
    let _ = writeln!(s, "vertices {}", mesh.vertices.len());
    for (i, v) in mesh.vertices.iter().enumerate() {
        let _ = writeln!(s, "{i} {:?} {:?}", v[0], v[1]);
    }
    let _ = writeln!(s, "quads {}", mesh.quads.len());
    for q in &mesh.quads {
        let _ = writeln!(s, "{} {} {} {}", q[0], q[1], q[2], q[3]);
    }
    let _ = writeln!(s, "boundary {}", mesh.boundary.len());
    for (a, b, t) in &mesh.boundary {
        let _ = writeln!(s, "{a} {b} {}", t.as_str());
    }
    s
}

pub fn read_mesh(path: impl AsRef<Path>) -> Result<LayeredMesh> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_mesh(&text, path)
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    path: &'a Path,
    line: usize,
}

impl<'a> Lines<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            line: self.line,
            msg: msg.into(),
        }
    }

    fn next_fields(&mut self, what: &str) -> Result<Vec<&'a str>> {
        loop {
            match self.inner.next() {
                Some((i, l)) => {
                    self.line = i + 1;
                    let l = l.trim();
                    if l.is_empty() || l.starts_with('#') {
                        continue;
                    }
                    return Ok(l.split_whitespace().collect());
                }
                None => return Err(self.err(format!("unexpected end of file, expected {what}"))),
            }
        }
    }

    fn section(&mut self, name: &str) -> Result<usize> {
        let f = self.next_fields(name)?;
        if f.len() != 2 || f[0] != name {
            return Err(self.err(format!("expected `{name} <count>`")));
        }
        f[1].parse().map_err(|_| self.err(format!("invalid {name} count `{}`", f[1])))
    }

    fn num<T: std::str::FromStr>(&self, s: &str, field: &str) -> Result<T> {
        s.parse().map_err(|_| self.err(format!("invalid {field} `{s}`")))
    }
}

pub fn parse_mesh(text: &str, path: &Path) -> Result<LayeredMesh> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        path,
        line: 0,
    };
    let header = lines.next_fields("header")?;
    if header.join(" ") != MESH_HEADER {
        return Err(lines.err(format!("expected header `{MESH_HEADER}`")));
    }
    let nv = lines.section("vertices")?;
    let mut verts: Vec<Option<[f64; 2]>> = vec![None; nv];
    for _ in 0..nv {
        let f = lines.next_fields("vertex")?;
        if f.len() != 3 {
            return Err(lines.err("vertex line must be `id x sigma`"));
        }
        let id: usize = lines.num(f[0], "vertex id")?;
        let x: f64 = lines.num(f[1], "x coordinate")?;
        let s: f64 = lines.num(f[2], "sigma coordinate")?;
        if id >= nv || verts[id].is_some() {
            return Err(lines.err(format!("vertex id {id} out of range or duplicated")));
        }
        if !x.is_finite() || !(0.0..=1.0).contains(&s) {
            return Err(Error::InvalidMesh(format!(
                "vertex {id} has sigma = {s} outside [0, 1] or non-finite x"
            )));
        }
        verts[id] = Some([x, s]);
    }
    let verts: Vec<[f64; 2]> = verts.into_iter().map(|v| v.unwrap()).collect();
    let nq = lines.section("quads")?;
    let mut quads = Vec::with_capacity(nq);
    for _ in 0..nq {
        let f = lines.next_fields("quad")?;
        if f.len() != 4 {
            return Err(lines.err("quad line must list 4 vertex ids"));
        }
        let mut q = [0usize; 4];
        for k in 0..4 {
            q[k] = lines.num(f[k], "quad vertex id")?;
            if q[k] >= nv {
                return Err(lines.err(format!("quad references unknown vertex {}", q[k])));
            }
        }
        quads.push(q);
    }
    let nb = lines.section("boundary")?;
    let mut edges = Vec::with_capacity(nb);
    for _ in 0..nb {
        let f = lines.next_fields("boundary edge")?;
        if f.len() != 3 {
            return Err(lines.err("boundary line must be `v1 v2 TAG`"));
        }
        let a: usize = lines.num(f[0], "edge vertex id")?;
        let b: usize = lines.num(f[1], "edge vertex id")?;
        let tag = BoundaryTag::parse(f[2]).ok_or_else(|| lines.err(format!("unknown boundary tag `{}`", f[2])))?;
        if a >= nv || b >= nv {
            return Err(lines.err("boundary edge references unknown vertex"));
        }
        edges.push((a, b, tag));
    }
    let _ = lines;

    // Recover the layered structure and check the file describes exactly it.
    let mut xs: Vec<f64> = verts.iter().map(|v| v[0]).collect();
    let mut ss: Vec<f64> = verts.iter().map(|v| v[1]).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    ss.sort_by(f64::total_cmp);
    ss.dedup();
    if xs.len() * ss.len() != nv {
        return Err(Error::InvalidMesh("vertices do not form a layered x-sigma grid".into()));
    }
    let mesh = LayeredMesh::from_layers(SurfaceMesh1D::new(xs)?, ss)?;
    let coord_key = |v: [f64; 2]| (v[0].to_bits(), v[1].to_bits());
    let mut canon = std::collections::HashMap::with_capacity(nv);
    for (i, v) in mesh.vertices.iter().enumerate() {
        canon.insert(coord_key(*v), i);
    }
    let map: Vec<usize> = verts
        .iter()
        .map(|v| canon.get(&coord_key(*v)).copied())
        .collect::<Option<_>>()
        .ok_or_else(|| Error::InvalidMesh("vertices do not form a layered x-sigma grid".into()))?;

    let mut expected_quads: std::collections::HashSet<[usize; 4]> = mesh.quads.iter().copied().collect();
    for q in &quads {
        let mapped = q.map(|v| map[v]);
        // Accept any cyclic rotation of the counterclockwise vertex order.
        let found = (0..4).find_map(|r| {
            let rot = [mapped[r], mapped[(r + 1) % 4], mapped[(r + 2) % 4], mapped[(r + 3) % 4]];
            expected_quads.take(&rot)
        });
        if found.is_none() {
            return Err(Error::InvalidMesh(format!(
                "quad {:?} is not a counterclockwise cell of the layered grid",
                q
            )));
        }
    }
    if !expected_quads.is_empty() {
        return Err(Error::InvalidMesh(format!("{} grid cells have no quad", expected_quads.len())));
    }

    let mut expected: std::collections::HashMap<(usize, usize), BoundaryTag> = mesh
        .boundary
        .iter()
        .map(|&(a, b, t)| ((a.min(b), a.max(b)), t))
        .collect();
    for &(a, b, tag) in &edges {
        let (a, b) = (map[a], map[b]);
        match expected.remove(&(a.min(b), a.max(b))) {
            Some(t) if t == tag => {}
            Some(t) => {
                return Err(Error::InvalidMesh(format!(
                    "edge ({a}, {b}) tagged {} but lies on the {} boundary",
                    tag.as_str(),
                    t.as_str()
                )))
            }
            None => {
                return Err(Error::InvalidMesh(format!(
                    "edge ({a}, {b}) is not a boundary edge or is tagged twice"
                )))
            }
        }
    }
    if let Some(((a, b), t)) = expected.into_iter().next() {
        return Err(Error::InvalidMesh(format!(
            "boundary edge ({a}, {b}) on the {} side has no tag",
            t.as_str()
        )));
    }
    Ok(mesh)
}
