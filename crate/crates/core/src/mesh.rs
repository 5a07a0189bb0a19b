//! Structured cuboid meshes, patch decompositions and interface bookkeeping.
//!
//! The domain is a block of `nx × ny × nz` cubic cells of edge `patch_side`.
//! The global model meshes every cell with a coarse spacing and conforms to
//! the cell faces. Each patched cell additionally gets its own fine mesh,
//! built independently, so fine interface nodes only have to lie on the
//! same surfaces as the global ones.
//!
//! Setting `nz = 0` selects the 2D variant (quadrilaterals, edge interfaces).

use std::collections::{BTreeMap, BTreeSet, HashMap};

use thiserror::Error;

pub type Point = [f64; 3];

/// Relative tolerance used when checking that a spacing tiles a cube.
const DIVISIBILITY_TOL: f64 = 1e-9;

/// Quantum of the node hash, relative to the coarse spacing.
const QUANTUM_FACTOR: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("invalid grid configuration: `{field}` {reason}")]
    Config { field: &'static str, reason: String },
}

fn config_err(field: &'static str, reason: impl Into<String>) -> MeshError {
    MeshError::Config {
        field,
        reason: reason.into(),
    }
}

/// Which cells carry a fine patch. The complement is Ω⁰.
#[derive(Clone, Debug, PartialEq)]
pub enum PatchedCells {
    All,
    Subset(BTreeSet<usize>),
}

impl PatchedCells {
    pub fn contains(&self, cell: usize) -> bool {
        match self {
            PatchedCells::All => true,
            PatchedCells::Subset(set) => set.contains(&cell),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    /// `0` selects the 2D variant.
    pub nz: usize,
    pub patch_side: f64,
    pub h_global: f64,
    pub h_fine: f64,
    pub patched_cells: PatchedCells,
    /// Forces the global mesh onto the fine spacing so that fine and global
    /// interface nodes coincide (verification against a monolithic model).
    pub conforming_interfaces: bool,
}

impl GridSpec {
    /// Unit cubes, two coarse and eight fine elements per edge, full coverage.
    pub fn new(nx: usize, ny: usize, nz: usize) -> Self {
        GridSpec {
            nx,
            ny,
            nz,
            patch_side: 1.0,
            h_global: 0.5,
            h_fine: 0.125,
            patched_cells: PatchedCells::All,
            conforming_interfaces: false,
        }
    }

    pub fn with_sizes(mut self, patch_side: f64, h_global: f64, h_fine: f64) -> Self {
        self.patch_side = patch_side;
        self.h_global = h_global;
        self.h_fine = h_fine;
        self
    }

    pub fn with_patched(mut self, cells: impl IntoIterator<Item = usize>) -> Self {
        self.patched_cells = PatchedCells::Subset(cells.into_iter().collect());
        self
    }

    pub fn conforming(mut self, yes: bool) -> Self {
        self.conforming_interfaces = yes;
        self
    }

    pub fn dim(&self) -> usize {
        if self.nz == 0 {
            2
        } else {
            3
        }
    }

    /// Cell counts per axis; the third axis has one layer of zero thickness in 2D.
    pub fn cell_counts(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz.max(1)]
    }

    pub fn num_cells(&self) -> usize {
        let [a, b, c] = self.cell_counts();
        a * b * c
    }

    pub fn cell_index(&self, ijk: [usize; 3]) -> usize {
        ijk[0] + self.nx * (ijk[1] + self.ny * ijk[2])
    }

    pub fn cell_coords(&self, cell: usize) -> [usize; 3] {
        [
            cell % self.nx,
            (cell / self.nx) % self.ny,
            cell / (self.nx * self.ny),
        ]
    }

    pub fn cell_origin(&self, cell: usize) -> Point {
        let c = self.cell_coords(cell);
        let mut o = [0.0; 3];
        for d in 0..self.dim() {
            o[d] = c[d] as f64 * self.patch_side;
        }
        o
    }

    pub fn cell_center(&self, cell: usize) -> Point {
        let mut o = self.cell_origin(cell);
        for v in o.iter_mut().take(self.dim()) {
            *v += 0.5 * self.patch_side;
        }
        o
    }

    /// Spacing actually used by the global mesh.
    pub fn effective_h_global(&self) -> f64 {
        if self.conforming_interfaces {
            self.h_fine
        } else {
            self.h_global
        }
    }

    pub fn patched_list(&self) -> Vec<usize> {
        (0..self.num_cells())
            .filter(|&c| self.patched_cells.contains(c))
            .collect()
    }

    pub fn volume(&self) -> f64 {
        self.num_cells() as f64 * self.patch_side.powi(self.dim() as i32)
    }

    pub fn validate(&self) -> Result<(), MeshError> {
        if self.nx == 0 {
            return Err(config_err("nx", "must be at least 1"));
        }
        if self.ny == 0 {
            return Err(config_err("ny", "must be at least 1"));
        }
        if !(self.patch_side.is_finite() && self.patch_side > 0.0) {
            return Err(config_err("patch_side", "must be positive and finite"));
        }
        divisions(self.patch_side, self.h_global, "h_global")?;
        divisions(self.patch_side, self.h_fine, "h_fine")?;
        if self.h_fine > self.h_global * (1.0 + DIVISIBILITY_TOL) {
            return Err(config_err("h_fine", "must not exceed h_global"));
        }
        if let PatchedCells::Subset(set) = &self.patched_cells {
            if let Some(&bad) = set.iter().find(|&&c| c >= self.num_cells()) {
                return Err(config_err(
                    "patched_cells",
                    format!("cell {bad} outside 0..{}", self.num_cells()),
                ));
            }
        }
        Ok(())
    }
}

fn divisions(side: f64, h: f64, field: &'static str) -> Result<usize, MeshError> {
    if !(h.is_finite() && h > 0.0) {
        return Err(config_err(field, "must be positive and finite"));
    }
    let ratio = side / h;
    let n = ratio.round();
    if n < 1.0 || (ratio - n).abs() > DIVISIBILITY_TOL * ratio.max(1.0) {
        return Err(config_err(
            field,
            format!("does not divide patch_side ({side} / {h} = {ratio})"),
        ));
    }
    Ok(n as usize)
}

/// Axis-aligned structured grid of quadrilaterals (2D) or hexahedra (3D).
///
/// Nodes and elements are numbered lexicographically, x fastest. Element
/// connectivity follows the usual counter-clockwise bottom-then-top order.
#[derive(Clone, Debug)]
pub struct StructuredMesh {
    dim: usize,
    origin: Point,
    spacing: f64,
    divisions: [usize; 3],
    nodes: Vec<Point>,
    connectivity: Vec<usize>,
    node_index: HashMap<[i64; 3], usize>,
    quantum: f64,
}

impl StructuredMesh {
    /// `divisions[2]` is ignored when `dim == 2`.
    pub fn box_grid(
        dim: usize,
        origin: Point,
        spacing: f64,
        divisions: [usize; 3],
        quantum: f64,
    ) -> Self {
        assert!(dim == 2 || dim == 3, "dim must be 2 or 3");
        let mut div = divisions;
        if dim == 2 {
            div[2] = 0;
        }
        let (na, nb, nc) = (div[0] + 1, div[1] + 1, div[2] + 1);
        let mut nodes = Vec::with_capacity(na * nb * nc);
        let mut node_index = HashMap::with_capacity(na * nb * nc);
        for c in 0..nc {
            for b in 0..nb {
                for a in 0..na {
                    let mut p = [
                        origin[0] + a as f64 * spacing,
                        origin[1] + b as f64 * spacing,
                        origin[2] + c as f64 * spacing,
                    ];
                    if dim == 2 {
                        p[2] = origin[2];
                    }
                    node_index.insert(quantize(p, quantum), nodes.len());
                    nodes.push(p);
                }
            }
        }
        let mut mesh = StructuredMesh {
            dim,
            origin,
            spacing,
            divisions: div,
            nodes,
            connectivity: Vec::new(),
            node_index,
            quantum,
        };
        let npe = mesh.nodes_per_element();
        let mut conn = Vec::with_capacity(mesh.num_elements() * npe);
        for k in 0..div[2].max(1) {
            for j in 0..div[1] {
                for i in 0..div[0] {
                    let n = |a, b, c| mesh.node_at([a, b, c]);
                    conn.extend_from_slice(&[
                        n(i, j, k),
                        n(i + 1, j, k),
                        n(i + 1, j + 1, k),
                        n(i, j + 1, k),
                    ]);
                    if dim == 3 {
                        conn.extend_from_slice(&[
                            n(i, j, k + 1),
                            n(i + 1, j, k + 1),
                            n(i + 1, j + 1, k + 1),
                            n(i, j + 1, k + 1),
                        ]);
                    }
                }
            }
        }
        mesh.connectivity = conn;
        mesh
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn origin(&self) -> Point {
        self.origin
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn divisions(&self) -> [usize; 3] {
        self.divisions
    }

    pub fn nodes_per_element(&self) -> usize {
        1 << self.dim
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_elements(&self) -> usize {
        let [a, b, c] = self.divisions;
        a * b * c.max(1)
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn node(&self, n: usize) -> Point {
        self.nodes[n]
    }

    pub fn element(&self, e: usize) -> &[usize] {
        let npe = self.nodes_per_element();
        &self.connectivity[e * npe..(e + 1) * npe]
    }

    pub fn element_coords(&self, e: usize) -> Vec<Point> {
        self.element(e).iter().map(|&n| self.nodes[n]).collect()
    }

    pub fn node_at(&self, abc: [usize; 3]) -> usize {
        let [da, db, _] = self.divisions;
        abc[0] + (da + 1) * (abc[1] + (db + 1) * abc[2])
    }

    pub fn grid_index(&self, n: usize) -> [usize; 3] {
        let [da, db, _] = self.divisions;
        let (na, nb) = (da + 1, db + 1);
        [n % na, (n / na) % nb, n / (na * nb)]
    }

    pub fn element_grid_index(&self, e: usize) -> [usize; 3] {
        let [da, db, _] = self.divisions;
        [e % da, (e / da) % db, e / (da * db)]
    }

    pub fn element_at(&self, ijk: [usize; 3]) -> usize {
        let [da, db, _] = self.divisions;
        ijk[0] + da * (ijk[1] + db * ijk[2])
    }

    pub fn element_volume(&self) -> f64 {
        self.spacing.powi(self.dim as i32)
    }

    pub fn centroid(&self, e: usize) -> Point {
        let mut c = [0.0; 3];
        let nodes = self.element(e);
        for &n in nodes {
            for d in 0..3 {
                c[d] += self.nodes[n][d];
            }
        }
        c.map(|v| v / nodes.len() as f64)
    }

    /// Node id at (approximately) the given coordinates.
    pub fn lookup(&self, p: Point) -> Option<usize> {
        self.node_index.get(&quantize(p, self.quantum)).copied()
    }
}

fn quantize(p: Point, q: f64) -> [i64; 3] {
    p.map(|v| (v / q).round() as i64)
}

/// One face of a cell: the normal axis and whether it is the upper side.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct CellFace {
    pub axis: usize,
    pub upper: bool,
}

/// Interface Γˢ of one patch, seen from both representations.
#[derive(Clone, Debug)]
pub struct InterfaceDef {
    pub patch_id: usize,
    /// Cell faces that are interior to the domain.
    pub faces: Vec<CellFace>,
    /// Global mesh nodes on the closure of Γˢ (sorted). Includes nodes on the
    /// outer boundary; those carry homogeneous data and no interface unknowns.
    pub global_iface_nodes: Vec<usize>,
    /// Fine mesh nodes on Γˢ that are not on the outer boundary (sorted).
    pub fine_iface_nodes: Vec<usize>,
    /// For every node of `global_iface_nodes`, the patches whose cells touch it.
    pub neighbor_info: BTreeMap<usize, BTreeSet<usize>>,
}

#[derive(Clone, Debug)]
pub struct Patch {
    pub id: usize,
    pub cell: usize,
    pub fine: StructuredMesh,
    /// Fine nodes on ∂Ω.
    pub fine_on_boundary: Vec<bool>,
    pub interface: InterfaceDef,
}

#[derive(Clone, Debug)]
pub struct PatchDecomposition {
    spec: GridSpec,
    global: StructuredMesh,
    cells_per_axis: usize,
    element_cell: Vec<usize>,
    global_on_boundary: Vec<bool>,
    cell_patch: Vec<Option<usize>>,
    patches: Vec<Patch>,
}

/// Adjacency record of one global interface node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Adjacency {
    pub patches: BTreeSet<usize>,
    /// Some adjacent global element belongs to Ω⁰.
    pub touches_complement: bool,
}

pub fn generate_patch_grid(spec: &GridSpec) -> Result<PatchDecomposition, MeshError> {
    spec.validate()?;
    let dim = spec.dim();
    let hg = spec.effective_h_global();
    let ng = divisions(spec.patch_side, hg, "h_global")?;
    let nf = divisions(spec.patch_side, spec.h_fine, "h_fine")?;
    let counts = spec.cell_counts();
    let quantum = QUANTUM_FACTOR * hg;

    let mut gdiv = [counts[0] * ng, counts[1] * ng, counts[2] * ng];
    if dim == 2 {
        gdiv[2] = 0;
    }
    let global = StructuredMesh::box_grid(dim, [0.0; 3], hg, gdiv, quantum);

    let element_cell: Vec<usize> = (0..global.num_elements())
        .map(|e| {
            let g = global.element_grid_index(e);
            spec.cell_index([g[0] / ng, g[1] / ng, g[2] / ng])
        })
        .collect();

    let global_on_boundary: Vec<bool> = (0..global.num_nodes())
        .map(|n| {
            let g = global.grid_index(n);
            (0..dim).any(|d| g[d] == 0 || g[d] == gdiv[d])
        })
        .collect();

    let mut cell_patch = vec![None; spec.num_cells()];
    let mut patches = Vec::new();
    for cell in spec.patched_list() {
        let id = patches.len();
        cell_patch[cell] = Some(id);
        let mut fdiv = [nf; 3];
        if dim == 2 {
            fdiv[2] = 0;
        }
        let fine = StructuredMesh::box_grid(dim, spec.cell_origin(cell), spec.h_fine, fdiv, quantum);
        patches.push(Patch {
            id,
            cell,
            fine,
            fine_on_boundary: Vec::new(),
            interface: InterfaceDef {
                patch_id: id,
                faces: Vec::new(),
                global_iface_nodes: Vec::new(),
                fine_iface_nodes: Vec::new(),
                neighbor_info: BTreeMap::new(),
            },
        });
    }

    let mut decomp = PatchDecomposition {
        spec: spec.clone(),
        global,
        cells_per_axis: ng,
        element_cell,
        global_on_boundary,
        cell_patch,
        patches,
    };

    for s in 0..decomp.patches.len() {
        let cell = decomp.patches[s].cell;
        let cc = spec.cell_coords(cell);
        let faces: Vec<CellFace> = (0..dim)
            .flat_map(|axis| [false, true].map(|upper| CellFace { axis, upper }))
            .filter(|f| {
                if f.upper {
                    cc[f.axis] + 1 < counts[f.axis]
                } else {
                    cc[f.axis] > 0
                }
            })
            .collect();

        let mut gnodes = BTreeSet::new();
        for f in &faces {
            face_nodes(&decomp.global, dim, cc, ng, *f, &mut gnodes);
        }
        let neighbor_info = gnodes
            .iter()
            .map(|&n| (n, decomp.touching_patches(n)))
            .collect();

        let fine = &decomp.patches[s].fine;
        let fine_on_boundary: Vec<bool> = (0..fine.num_nodes())
            .map(|n| {
                let g = fine.grid_index(n);
                (0..dim).any(|d| {
                    (g[d] == 0 && cc[d] == 0) || (g[d] == nf && cc[d] + 1 == counts[d])
                })
            })
            .collect();
        let mut fnodes = BTreeSet::new();
        for f in &faces {
            face_nodes(fine, dim, [0; 3], nf, *f, &mut fnodes);
        }
        let fine_iface_nodes = fnodes.into_iter().filter(|&n| !fine_on_boundary[n]).collect();

        let patch = &mut decomp.patches[s];
        patch.fine_on_boundary = fine_on_boundary;
        patch.interface.faces = faces;
        patch.interface.global_iface_nodes = gnodes.into_iter().collect();
        patch.interface.fine_iface_nodes = fine_iface_nodes;
        patch.interface.neighbor_info = neighbor_info;
    }
    Ok(decomp)
}

/// Collects the nodes of `face` of the cell at `cell` (in cell units of
/// `per_cell` elements) into `out`.
fn face_nodes(
    mesh: &StructuredMesh,
    dim: usize,
    cell: [usize; 3],
    per_cell: usize,
    face: CellFace,
    out: &mut BTreeSet<usize>,
) {
    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    for d in 0..dim {
        lo[d] = cell[d] * per_cell;
        hi[d] = (cell[d] + 1) * per_cell;
    }
    let fixed = if face.upper { hi[face.axis] } else { lo[face.axis] };
    lo[face.axis] = fixed;
    hi[face.axis] = fixed;
    for c in lo[2]..=hi[2] {
        for b in lo[1]..=hi[1] {
            for a in lo[0]..=hi[0] {
                out.insert(mesh.node_at([a, b, c]));
            }
        }
    }
}

impl PatchDecomposition {
    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    pub fn global(&self) -> &StructuredMesh {
        &self.global
    }

    pub fn patches(&self) -> &[Patch] {
        &self.patches
    }

    pub fn num_patches(&self) -> usize {
        self.patches.len()
    }

    /// Coarse elements per cell edge.
    pub fn global_per_cell(&self) -> usize {
        self.cells_per_axis
    }

    pub fn element_cell(&self, e: usize) -> usize {
        self.element_cell[e]
    }

    pub fn patch_of_cell(&self, cell: usize) -> Option<usize> {
        self.cell_patch[cell]
    }

    pub fn global_on_boundary(&self, n: usize) -> bool {
        self.global_on_boundary[n]
    }

    /// Global elements of Ω⁰ (cells without a patch).
    pub fn complement_elements(&self) -> Vec<usize> {
        (0..self.global.num_elements())
            .filter(|&e| self.cell_patch[self.element_cell[e]].is_none())
            .collect()
    }

    /// Global elements of the zone Ω^{s,G} replaced by patch `s`.
    pub fn zone_elements(&self, s: usize) -> Vec<usize> {
        let cell = self.patches[s].cell;
        (0..self.global.num_elements())
            .filter(|&e| self.element_cell[e] == cell)
            .collect()
    }

    /// Cells whose closure contains global node `n`.
    pub fn touching_cells(&self, n: usize) -> Vec<usize> {
        let g = self.global.grid_index(n);
        let counts = self.spec.cell_counts();
        let ng = self.cells_per_axis;
        let mut per_axis: Vec<Vec<usize>> = Vec::with_capacity(3);
        for d in 0..3 {
            if d >= self.dim() {
                per_axis.push(vec![0]);
                continue;
            }
            let mut v = Vec::new();
            if g[d] % ng == 0 {
                if g[d] / ng > 0 {
                    v.push(g[d] / ng - 1);
                }
                if g[d] / ng < counts[d] {
                    v.push(g[d] / ng);
                }
            } else {
                v.push(g[d] / ng);
            }
            per_axis.push(v);
        }
        let mut cells = Vec::new();
        for &k in &per_axis[2] {
            for &j in &per_axis[1] {
                for &i in &per_axis[0] {
                    cells.push(self.spec.cell_index([i, j, k]));
                }
            }
        }
        cells.sort_unstable();
        cells
    }

    fn touching_patches(&self, n: usize) -> BTreeSet<usize> {
        self.touching_cells(n)
            .into_iter()
            .filter_map(|c| self.cell_patch[c])
            .collect()
    }
}

/// Maps every interface node of the global mesh that carries unknowns (not
/// on ∂Ω) to the patches sharing it.
pub fn interface_adjacency(decomp: &PatchDecomposition) -> BTreeMap<usize, Adjacency> {
    let mut out = BTreeMap::new();
    for patch in decomp.patches() {
        for &n in &patch.interface.global_iface_nodes {
            if decomp.global_on_boundary(n) || out.contains_key(&n) {
                continue;
            }
            let cells = decomp.touching_cells(n);
            let patches = cells.iter().filter_map(|&c| decomp.patch_of_cell(c)).collect();
            let touches_complement = cells.iter().any(|&c| decomp.patch_of_cell(c).is_none());
            out.insert(
                n,
                Adjacency {
                    patches,
                    touches_complement,
                },
            );
        }
    }
    out
}

/// Piecewise-constant coefficient (conductivity or Young's modulus).
#[derive(Clone, Debug, PartialEq)]
pub struct MaterialField {
    pub values: Vec<f64>,
    pub matrix_value: f64,
    pub inclusion_value: f64,
    pub inclusion_center: Point,
    pub inclusion_radius: f64,
}

impl MaterialField {
    pub fn homogeneous(num_elements: usize, value: f64) -> Self {
        MaterialField {
            values: vec![value; num_elements],
            matrix_value: value,
            inclusion_value: value,
            inclusion_center: [0.0; 3],
            inclusion_radius: 0.0,
        }
    }

    pub fn contrast(&self) -> f64 {
        self.matrix_value / self.inclusion_value
    }

    pub fn num_tagged(&self) -> usize {
        self.values
            .iter()
            .filter(|&&v| v == self.inclusion_value && v != self.matrix_value)
            .count()
    }
}

/// Tags every element whose centroid lies strictly inside the sphere.
pub fn tag_inclusion(
    mesh: &StructuredMesh,
    center: Point,
    radius: f64,
    matrix_value: f64,
    inclusion_value: f64,
) -> MaterialField {
    debug_assert!(radius >= 0.0);
    let r2 = radius * radius;
    let values = (0..mesh.num_elements())
        .map(|e| {
            let c = mesh.centroid(e);
            let d2: f64 = (0..3).map(|d| (c[d] - center[d]).powi(2)).sum();
            if d2 < r2 {
                inclusion_value
            } else {
                matrix_value
            }
        })
        .collect();
    MaterialField {
        values,
        matrix_value,
        inclusion_value,
        inclusion_center: center,
        inclusion_radius: radius,
    }
}
