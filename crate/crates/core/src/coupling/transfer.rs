//! Interpolation of global interface traces onto non-matching fine interface
//! nodes, and its transpose for nodal forces.

use crate::mesh::{InterfaceDef, Point, StructuredMesh};

use super::CouplingError;

/// Values within this fraction of the coarse spacing are snapped.
const SNAP: f64 = 1e-9;

/// Sparse `J`: rows are fine interface nodes, columns are the global nodes of
/// the interface closure (`InterfaceDef::global_iface_nodes`).
#[derive(Clone, Debug)]
pub struct TransferOperator {
    pub patch_id: usize,
    rows: Vec<Vec<(usize, f64)>>,
    ncols: usize,
}

impl TransferOperator {
    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    /// `J · g` for node-major vectors with `dpn` components per node.
    pub fn apply(&self, g: &[f64], dpn: usize) -> Vec<f64> {
        assert_eq!(g.len(), self.ncols * dpn);
        let mut out = vec![0.0; self.rows.len() * dpn];
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, w) in row {
                for c in 0..dpn {
                    out[i * dpn + c] += w * g[j * dpn + c];
                }
            }
        }
        out
    }

    /// `Jᵀ · f` for node-major vectors with `dpn` components per node.
    pub fn apply_transpose(&self, f: &[f64], dpn: usize) -> Vec<f64> {
        assert_eq!(f.len(), self.rows.len() * dpn);
        let mut out = vec![0.0; self.ncols * dpn];
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, w) in row {
                for c in 0..dpn {
                    out[j * dpn + c] += w * f[i * dpn + c];
                }
            }
        }
        out
    }

    /// Every row holds exactly one unit weight and no column is hit twice.
    pub fn is_permutation(&self) -> bool {
        let mut seen = vec![false; self.ncols];
        self.rows.iter().all(|row| {
            row.len() == 1 && row[0].1 == 1.0 && !std::mem::replace(&mut seen[row[0].0], true)
        })
    }
}

/// Builds `J` for one patch by locating each fine interface node on a face
/// of the global interface and evaluating the global shape functions there.
pub fn build_transfer(
    iface: &InterfaceDef,
    global: &StructuredMesh,
    fine: &StructuredMesh,
) -> Result<TransferOperator, CouplingError> {
    let dim = global.dim();
    let h = global.spacing();
    let tol = SNAP * h;
    let go = global.origin();
    let lo = fine.origin();
    let fdiv = fine.divisions();
    let mut hi = lo;
    for d in 0..dim {
        hi[d] = lo[d] + fdiv[d] as f64 * fine.spacing();
    }
    let cell_lo: Vec<usize> = (0..dim).map(|d| ((lo[d] - go[d]) / h).round() as usize).collect();
    let cell_hi: Vec<usize> = (0..dim).map(|d| ((hi[d] - go[d]) / h).round() as usize).collect();

    let mut rows = Vec::with_capacity(iface.fine_iface_nodes.len());
    for &n in &iface.fine_iface_nodes {
        let x = fine.node(n);
        let mut row = None;
        for face in &iface.faces {
            let plane = if face.upper { hi[face.axis] } else { lo[face.axis] };
            if (x[face.axis] - plane).abs() > tol {
                continue;
            }
            let mut grid = [0usize; 3];
            grid[face.axis] = if face.upper { cell_hi[face.axis] } else { cell_lo[face.axis] };
            // tangential axes: (index, local coordinate)
            let mut tang: Vec<(usize, usize, f64)> = Vec::with_capacity(2);
            let mut inside = true;
            for t in (0..dim).filter(|&t| t != face.axis) {
                let s = (x[t] - go[t]) / h;
                let i = (s.floor() as i64).clamp(cell_lo[t] as i64, cell_hi[t] as i64 - 1) as usize;
                let mut xi = s - i as f64;
                if xi < -SNAP || xi > 1.0 + SNAP {
                    inside = false;
                    break;
                }
                if xi.abs() < SNAP {
                    xi = 0.0;
                } else if (xi - 1.0).abs() < SNAP {
                    xi = 1.0;
                }
                tang.push((t, i, xi.clamp(0.0, 1.0)));
            }
            if !inside {
                continue;
            }
            let mut entries: Vec<(usize, f64)> = Vec::with_capacity(4);
            for corner in 0..(1usize << tang.len()) {
                let mut w = 1.0;
                let mut g = grid;
                for (k, &(t, i, xi)) in tang.iter().enumerate() {
                    if corner >> k & 1 == 1 {
                        w *= xi;
                        g[t] = i + 1;
                    } else {
                        w *= 1.0 - xi;
                        g[t] = i;
                    }
                }
                if w == 0.0 {
                    continue;
                }
                let node = global.node_at(g);
                let col = iface
                    .global_iface_nodes
                    .binary_search(&node)
                    .map_err(|_| locate_err(iface.patch_id, x))?;
                entries.push((col, w));
            }
            row = Some(entries);
            break;
        }
        rows.push(row.ok_or_else(|| locate_err(iface.patch_id, x))?);
    }
    Ok(TransferOperator {
        patch_id: iface.patch_id,
        rows,
        ncols: iface.global_iface_nodes.len(),
    })
}

fn locate_err(patch: usize, point: Point) -> CouplingError {
    CouplingError::Locate { patch, point }
}
