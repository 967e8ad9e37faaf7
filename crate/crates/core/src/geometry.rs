//! Nested Cartesian background meshes, the circular domain, and the per-level
//! active geometry: cell classification, ghost faces, vertex patches and their
//! coloring.
//!
//! Level `l` of a hierarchy subdivides the background square into
//! `2^(l+1) x 2^(l+1)` congruent cells. Cells, vertices and faces are addressed
//! by lattice coordinates; cell `(i, j)` has linear id `j * n + i`.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Axis-aligned square enclosing the domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SquareBox {
    pub lower: [f64; 2],
    pub upper: [f64; 2],
}

impl SquareBox {
    pub fn new(lower: [f64; 2], upper: [f64; 2]) -> Result<Self> {
        let width = upper[0] - lower[0];
        let height = upper[1] - lower[1];
        let scale = width.abs().max(height.abs()).max(1.0);
        if !(width > 0.0) || (width - height).abs() > 1e-12 * scale {
            return Err(Error::NonSquareBox { width, height });
        }
        Ok(Self { lower, upper })
    }

    pub fn side(&self) -> f64 {
        self.upper[0] - self.lower[0]
    }

    /// `[-1.21, 1.21]^2`, the box used throughout the experiments.
    pub fn standard() -> Self {
        Self {
            lower: [-1.21, -1.21],
            upper: [1.21, 1.21],
        }
    }
}

/// The nested family of uniform meshes `M_0 ⊏ M_1 ⊏ ... ⊏ M_L`.
#[derive(Debug, Clone)]
pub struct MeshHierarchy {
    domain_box: SquareBox,
    finest: usize,
}

impl MeshHierarchy {
    /// Builds levels `0..=finest` over `domain_box`.
    pub fn new(domain_box: SquareBox, finest: usize) -> Result<Self> {
        if finest > 20 {
            return Err(Error::Config(format!("level {finest} is out of range")));
        }
        Ok(Self { domain_box, finest })
    }

    pub fn domain_box(&self) -> SquareBox {
        self.domain_box
    }

    pub fn n_levels(&self) -> usize {
        self.finest + 1
    }

    pub fn finest(&self) -> usize {
        self.finest
    }

    pub fn level(&self, level: usize) -> LevelMesh {
        assert!(
            level <= self.finest,
            "level {level} beyond finest {}",
            self.finest
        );
        LevelMesh::new(self.domain_box, level)
    }
}

/// One uniform level of the hierarchy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelMesh {
    pub level: usize,
    pub lower: [f64; 2],
    /// Cells per side.
    pub n: usize,
    /// Cell side length.
    pub h: f64,
}

impl LevelMesh {
    pub fn new(domain_box: SquareBox, level: usize) -> Self {
        let n = 1usize << (level + 1);
        Self {
            level,
            lower: domain_box.lower,
            n,
            h: domain_box.side() / n as f64,
        }
    }

    pub fn n_cells(&self) -> usize {
        self.n * self.n
    }

    #[inline]
    pub fn cell_id(&self, i: usize, j: usize) -> usize {
        j * self.n + i
    }

    #[inline]
    pub fn cell_ij(&self, id: usize) -> (usize, usize) {
        (id % self.n, id / self.n)
    }

    /// Lower-left corner of cell `(i, j)`.
    #[inline]
    pub fn cell_origin(&self, i: usize, j: usize) -> [f64; 2] {
        [
            self.lower[0] + i as f64 * self.h,
            self.lower[1] + j as f64 * self.h,
        ]
    }

    pub fn cell_bounds(&self, i: usize, j: usize) -> CellBounds {
        let o = self.cell_origin(i, j);
        CellBounds {
            lower: o,
            upper: [o[0] + self.h, o[1] + self.h],
        }
    }

    pub fn vertex(&self, vi: usize, vj: usize) -> [f64; 2] {
        self.cell_origin(vi, vj)
    }

    /// Parent cell id on level `level - 1`.
    pub fn parent(&self, id: usize) -> usize {
        let (i, j) = self.cell_ij(id);
        (j / 2) * (self.n / 2) + i / 2
    }

    /// Child ids on level `level + 1`, ordered lexicographically.
    pub fn children(&self, id: usize) -> [usize; 4] {
        let (i, j) = self.cell_ij(id);
        let nf = 2 * self.n;
        let (fi, fj) = (2 * i, 2 * j);
        [
            fj * nf + fi,
            fj * nf + fi + 1,
            (fj + 1) * nf + fi,
            (fj + 1) * nf + fi + 1,
        ]
    }
}

/// Axis-aligned rectangle used for cells and sub-cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellBounds {
    pub lower: [f64; 2],
    pub upper: [f64; 2],
}

impl CellBounds {
    pub fn new(lower: [f64; 2], upper: [f64; 2]) -> Self {
        Self { lower, upper }
    }

    pub fn area(&self) -> f64 {
        (self.upper[0] - self.lower[0]) * (self.upper[1] - self.lower[1])
    }

    pub fn contains(&self, x: [f64; 2], tol: f64) -> bool {
        x[0] >= self.lower[0] - tol
            && x[0] <= self.upper[0] + tol
            && x[1] >= self.lower[1] - tol
            && x[1] <= self.upper[1] + tol
    }

    /// The four quadrants of the rectangle.
    pub fn bisect(&self) -> [CellBounds; 4] {
        let mx = 0.5 * (self.lower[0] + self.upper[0]);
        let my = 0.5 * (self.lower[1] + self.upper[1]);
        [
            CellBounds::new(self.lower, [mx, my]),
            CellBounds::new([mx, self.lower[1]], [self.upper[0], my]),
            CellBounds::new([self.lower[0], my], [mx, self.upper[1]]),
            CellBounds::new([mx, my], self.upper),
        ]
    }
}

/// Analytic circular level set `phi(x) = |x - c| - r`, negative inside.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Circle {
    pub center: [f64; 2],
    pub radius: f64,
}

impl Circle {
    pub fn new(center: [f64; 2], radius: f64) -> Self {
        Self { center, radius }
    }

    #[inline]
    pub fn evaluate(&self, x: [f64; 2]) -> f64 {
        (x[0] - self.center[0]).hypot(x[1] - self.center[1]) - self.radius
    }

    /// Unit gradient; undefined at the center, where `[0, 0]` is returned.
    pub fn gradient(&self, x: [f64; 2]) -> [f64; 2] {
        let d = [x[0] - self.center[0], x[1] - self.center[1]];
        let r = d[0].hypot(d[1]);
        if r == 0.0 {
            [0.0, 0.0]
        } else {
            [d[0] / r, d[1] / r]
        }
    }

    /// Distances from the center to the nearest point and the farthest corner of `cell`.
    pub fn distance_extremes(&self, cell: &CellBounds) -> (f64, f64) {
        let c = self.center;
        let nx = c[0].clamp(cell.lower[0], cell.upper[0]);
        let ny = c[1].clamp(cell.lower[1], cell.upper[1]);
        let near = (nx - c[0]).hypot(ny - c[1]);
        let fx = (cell.lower[0] - c[0])
            .abs()
            .max((cell.upper[0] - c[0]).abs());
        let fy = (cell.lower[1] - c[1])
            .abs()
            .max((cell.upper[1] - c[1]).abs());
        (near, fx.hypot(fy))
    }

    /// Exact classification of a rectangle against the disc.
    pub fn classify(&self, cell: &CellBounds) -> CellKind {
        let (near, far) = self.distance_extremes(cell);
        if near >= self.radius {
            CellKind::Outside
        } else if far <= self.radius {
            CellKind::Inside
        } else {
            CellKind::Cut
        }
    }
}

/// The physical domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Domain {
    /// The background square itself; boundary conditions are imposed strongly.
    FittedSquare,
    /// A disc cut out of the background mesh; Nitsche boundary conditions.
    Circle(Circle),
}

impl Domain {
    /// Unit disc centred at the origin.
    pub fn unit_circle() -> Self {
        Domain::Circle(Circle::new([0.0, 0.0], 1.0))
    }

    pub fn is_fitted(&self) -> bool {
        matches!(self, Domain::FittedSquare)
    }

    pub fn circle(&self) -> Option<&Circle> {
        match self {
            Domain::Circle(c) => Some(c),
            Domain::FittedSquare => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellKind {
    Inside,
    Cut,
    Outside,
}

impl CellKind {
    pub fn is_active(self) -> bool {
        !matches!(self, CellKind::Outside)
    }
}

/// Direction of a face normal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

/// Interior face between two neighboring cells. The normal points from
/// `first` to `second` along `normal`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Face {
    pub first: usize,
    pub second: usize,
    pub normal: Axis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatchKind {
    Interior,
    Cut,
}

/// The 2x2 block of cells around one vertex inside the domain.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchDescriptor {
    pub vertex: [usize; 2],
    /// Member cells, lexicographic: lower-left, lower-right, upper-left, upper-right.
    pub cells: [usize; 4],
    pub kind: PatchKind,
    /// Lattice color in `0..4`.
    pub color: usize,
    /// DoFs solved for by this patch (filled by the DoF handler).
    pub interior_dofs: Vec<usize>,
    /// All DoFs living on the patch cells (filled by the DoF handler).
    pub extended_dofs: Vec<usize>,
}

/// Everything the discretization needs to know about one level's geometry.
#[derive(Debug, Clone)]
pub struct ActiveGeometry {
    pub mesh: LevelMesh,
    pub domain: Domain,
    pub kinds: Vec<CellKind>,
    /// Cell ids of `M_{l,Omega}`, ascending.
    pub active_cells: Vec<usize>,
    /// Cell id -> position in `active_cells`, `usize::MAX` for outside cells.
    pub active_index: Vec<usize>,
    /// Cell ids of `M_{l,Gamma}`, ascending.
    pub cut_cells: Vec<usize>,
    pub ghost_faces: Vec<Face>,
    pub patches: Vec<PatchDescriptor>,
    /// Interior patches grouped by color.
    pub interior_colors: Vec<Vec<usize>>,
    /// Cut patches grouped by color.
    pub cut_colors: Vec<Vec<usize>>,
}

/// Classifies every cell of `mesh` against `domain`.
pub fn classify_cells(mesh: &LevelMesh, domain: &Domain) -> Vec<CellKind> {
    match domain {
        Domain::FittedSquare => vec![CellKind::Inside; mesh.n_cells()],
        Domain::Circle(circle) => (0..mesh.n_cells())
            .map(|id| {
                let (i, j) = mesh.cell_ij(id);
                circle.classify(&mesh.cell_bounds(i, j))
            })
            .collect(),
    }
}

/// Faces with both neighbors active and at least one neighbor cut, each listed once.
pub fn collect_ghost_faces(mesh: &LevelMesh, kinds: &[CellKind]) -> Vec<Face> {
    let n = mesh.n;
    let is_ghost = |a: usize, b: usize| {
        kinds[a].is_active()
            && kinds[b].is_active()
            && (kinds[a] == CellKind::Cut || kinds[b] == CellKind::Cut)
    };
    let mut faces = Vec::new();
    for j in 0..n {
        for i in 1..n {
            let (a, b) = (mesh.cell_id(i - 1, j), mesh.cell_id(i, j));
            if is_ghost(a, b) {
                faces.push(Face {
                    first: a,
                    second: b,
                    normal: Axis::X,
                });
            }
        }
    }
    for j in 1..n {
        for i in 0..n {
            let (a, b) = (mesh.cell_id(i, j - 1), mesh.cell_id(i, j));
            if is_ghost(a, b) {
                faces.push(Face {
                    first: a,
                    second: b,
                    normal: Axis::Y,
                });
            }
        }
    }
    faces
}

/// One patch per interior mesh vertex inside the domain, colored by the parity
/// of its lattice coordinates. Interior and cut patches get separate color sets.
pub fn build_patches(
    mesh: &LevelMesh,
    kinds: &[CellKind],
    domain: &Domain,
) -> Result<(Vec<PatchDescriptor>, Vec<Vec<usize>>, Vec<Vec<usize>>)> {
    let n = mesh.n;
    let mut patches = Vec::new();
    let mut interior_colors = vec![Vec::new(); 4];
    let mut cut_colors = vec![Vec::new(); 4];
    for vj in 1..n {
        for vi in 1..n {
            let inside = match domain {
                Domain::FittedSquare => true,
                Domain::Circle(c) => c.evaluate(mesh.vertex(vi, vj)) < 0.0,
            };
            if !inside {
                continue;
            }
            let cells = [
                mesh.cell_id(vi - 1, vj - 1),
                mesh.cell_id(vi, vj - 1),
                mesh.cell_id(vi - 1, vj),
                mesh.cell_id(vi, vj),
            ];
            if let Some(&bad) = cells.iter().find(|&&c| !kinds[c].is_active()) {
                return Err(Error::Structural(format!(
                    "vertex ({vi}, {vj}) lies inside the domain but its cell {bad} is inactive"
                )));
            }
            let kind = if cells.iter().any(|&c| kinds[c] == CellKind::Cut) {
                PatchKind::Cut
            } else {
                PatchKind::Interior
            };
            let color = (vi % 2) + 2 * (vj % 2);
            let index = patches.len();
            match kind {
                PatchKind::Interior => interior_colors[color].push(index),
                PatchKind::Cut => cut_colors[color].push(index),
            }
            patches.push(PatchDescriptor {
                vertex: [vi, vj],
                cells,
                kind,
                color,
                interior_dofs: Vec::new(),
                extended_dofs: Vec::new(),
            });
        }
    }
    Ok((patches, interior_colors, cut_colors))
}

impl ActiveGeometry {
    /// Classification, active set, ghost faces and patches of one level.
    pub fn build(mesh: LevelMesh, domain: Domain) -> Result<Self> {
        let kinds = classify_cells(&mesh, &domain);
        let mut active_cells = Vec::new();
        let mut active_index = vec![usize::MAX; mesh.n_cells()];
        let mut cut_cells = Vec::new();
        for (id, kind) in kinds.iter().enumerate() {
            if kind.is_active() {
                active_index[id] = active_cells.len();
                active_cells.push(id);
            }
            if *kind == CellKind::Cut {
                cut_cells.push(id);
            }
        }
        let ghost_faces = collect_ghost_faces(&mesh, &kinds);
        let (patches, interior_colors, cut_colors) = build_patches(&mesh, &kinds, &domain)?;
        Ok(Self {
            mesh,
            domain,
            kinds,
            active_cells,
            active_index,
            cut_cells,
            ghost_faces,
            patches,
            interior_colors,
            cut_colors,
        })
    }

    pub fn is_active(&self, cell: usize) -> bool {
        self.kinds[cell].is_active()
    }

    pub fn summary(&self) -> GeometrySummary {
        let count = |k: CellKind| self.kinds.iter().filter(|&&c| c == k).count();
        let cut_patches = self
            .patches
            .iter()
            .filter(|p| p.kind == PatchKind::Cut)
            .count();
        GeometrySummary {
            level: self.mesh.level,
            inside_cells: count(CellKind::Inside),
            cut_cells: count(CellKind::Cut),
            active_cells: self.active_cells.len(),
            ghost_faces: self.ghost_faces.len(),
            interior_patches: self.patches.len() - cut_patches,
            cut_patches,
        }
    }
}

/// Verifies that every active cell of `fine` has an active parent in `coarse`.
pub fn check_nestedness(coarse: &ActiveGeometry, fine: &ActiveGeometry) -> Result<()> {
    for &cell in &fine.active_cells {
        let parent = fine.mesh.parent(cell);
        if !coarse.is_active(parent) {
            return Err(Error::Structural(format!(
                "active cell {cell} on level {} has inactive parent {parent}",
                fine.mesh.level
            )));
        }
    }
    Ok(())
}

/// Per-level geometry counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GeometrySummary {
    pub level: usize,
    pub inside_cells: usize,
    pub cut_cells: usize,
    pub active_cells: usize,
    pub ghost_faces: usize,
    pub interior_patches: usize,
    pub cut_patches: usize,
}

impl GeometrySummary {
    pub const CSV_HEADER: &'static str =
        "level,inside_cells,cut_cells,active_cells,ghost_faces,interior_patches,cut_patches";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.level,
            self.inside_cells,
            self.cut_cells,
            self.active_cells,
            self.ghost_faces,
            self.interior_patches,
            self.cut_patches
        )
    }

    pub fn text(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "level {}: inside {} cut {} active {} ghost faces {} patches {} interior / {} cut",
            self.level,
            self.inside_cells,
            self.cut_cells,
            self.active_cells,
            self.ghost_faces,
            self.interior_patches,
            self.cut_patches
        );
        s
    }
}
