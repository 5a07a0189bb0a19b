//! Bilinear/trilinear element kernels with 2×2(×2) Gauss quadrature.

use crate::mesh::Point;

use super::{FemError, Physics, PhysicsKind};

const GAUSS: [f64; 2] = [-0.577_350_269_189_625_8, 0.577_350_269_189_625_8];

/// Reference coordinates of the element nodes, matching the mesh ordering.
const REF_NODES: [[f64; 3]; 8] = [
    [-1.0, -1.0, -1.0],
    [1.0, -1.0, -1.0],
    [1.0, 1.0, -1.0],
    [-1.0, 1.0, -1.0],
    [-1.0, -1.0, 1.0],
    [1.0, -1.0, 1.0],
    [1.0, 1.0, 1.0],
    [-1.0, 1.0, 1.0],
];

/// Shape function values and reference gradients at `xi`.
pub fn shape(dim: usize, xi: [f64; 3]) -> (Vec<f64>, Vec<[f64; 3]>) {
    let npe = 1 << dim;
    let mut n = Vec::with_capacity(npe);
    let mut dn = Vec::with_capacity(npe);
    for r in REF_NODES.iter().take(npe) {
        let f: Vec<f64> = (0..dim).map(|d| 0.5 * (1.0 + r[d] * xi[d])).collect();
        let mut grad = [0.0; 3];
        for d in 0..dim {
            grad[d] = 0.5 * r[d] * (0..dim).filter(|&e| e != d).map(|e| f[e]).product::<f64>();
        }
        n.push(f.iter().product());
        dn.push(grad);
    }
    (n, dn)
}

fn gauss_points(dim: usize) -> Vec<[f64; 3]> {
    let mut pts = Vec::new();
    let kz: &[f64] = if dim == 3 { &GAUSS } else { &[0.0] };
    for &z in kz {
        for &y in &GAUSS {
            for &x in &GAUSS {
                pts.push([x, y, z]);
            }
        }
    }
    pts
}

/// Inverse and determinant of the `dim × dim` Jacobian.
fn invert(dim: usize, j: [[f64; 3]; 3]) -> (f64, [[f64; 3]; 3]) {
    let mut inv = [[0.0; 3]; 3];
    if dim == 2 {
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        inv[0][0] = j[1][1] / det;
        inv[0][1] = -j[0][1] / det;
        inv[1][0] = -j[1][0] / det;
        inv[1][1] = j[0][0] / det;
        return (det, inv);
    }
    let det = j[0][0] * (j[1][1] * j[2][2] - j[1][2] * j[2][1])
        - j[0][1] * (j[1][0] * j[2][2] - j[1][2] * j[2][0])
        + j[0][2] * (j[1][0] * j[2][1] - j[1][1] * j[2][0]);
    inv[0][0] = (j[1][1] * j[2][2] - j[1][2] * j[2][1]) / det;
    inv[0][1] = (j[0][2] * j[2][1] - j[0][1] * j[2][2]) / det;
    inv[0][2] = (j[0][1] * j[1][2] - j[0][2] * j[1][1]) / det;
    inv[1][0] = (j[1][2] * j[2][0] - j[1][0] * j[2][2]) / det;
    inv[1][1] = (j[0][0] * j[2][2] - j[0][2] * j[2][0]) / det;
    inv[1][2] = (j[0][2] * j[1][0] - j[0][0] * j[1][2]) / det;
    inv[2][0] = (j[1][0] * j[2][1] - j[1][1] * j[2][0]) / det;
    inv[2][1] = (j[0][1] * j[2][0] - j[0][0] * j[2][1]) / det;
    inv[2][2] = (j[0][0] * j[1][1] - j[0][1] * j[1][0]) / det;
    (det, inv)
}

/// Isotropic constitutive matrix for unit Young's modulus, Voigt notation
/// with engineering shear strains. Plane strain in 2D.
fn elasticity_matrix(dim: usize, nu: f64) -> Vec<Vec<f64>> {
    let lambda = nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
    let mu = 1.0 / (2.0 * (1.0 + nu));
    let nstrain = if dim == 3 { 6 } else { 3 };
    let mut d = vec![vec![0.0; nstrain]; nstrain];
    for i in 0..dim {
        for j in 0..dim {
            d[i][j] = lambda;
        }
        d[i][i] += 2.0 * mu;
    }
    for i in dim..nstrain {
        d[i][i] = mu;
    }
    d
}

/// Strain-displacement rows contributed by one node with physical gradient `g`.
fn strain_rows(dim: usize, g: [f64; 3]) -> Vec<Vec<f64>> {
    if dim == 2 {
        vec![vec![g[0], 0.0], vec![0.0, g[1]], vec![g[1], g[0]]]
    } else {
        vec![
            vec![g[0], 0.0, 0.0],
            vec![0.0, g[1], 0.0],
            vec![0.0, 0.0, g[2]],
            vec![g[1], g[0], 0.0],
            vec![0.0, g[2], g[1]],
            vec![g[2], 0.0, g[0]],
        ]
    }
}

/// Element stiffness for unit coefficient (row-major, exactly symmetric) and
/// element load. `element` is only used for error reporting.
pub fn element_system(
    dim: usize,
    coords: &[Point],
    physics: &Physics,
    element: usize,
) -> Result<(Vec<f64>, Vec<f64>), FemError> {
    let npe = 1 << dim;
    let dpn = physics.dofs_per_node();
    let ndof = npe * dpn;
    let mut ke = vec![0.0; ndof * ndof];
    let mut fe = vec![0.0; ndof];
    let dmat = match physics.kind {
        PhysicsKind::Elasticity => Some(elasticity_matrix(dim, physics.poisson_ratio)),
        PhysicsKind::Poisson => None,
    };

    for xi in gauss_points(dim) {
        let (n, dn) = shape(dim, xi);
        let mut jac = [[0.0; 3]; 3];
        for a in 0..npe {
            for r in 0..dim {
                for c in 0..dim {
                    jac[r][c] += dn[a][r] * coords[a][c];
                }
            }
        }
        let (det, inv) = invert(dim, jac);
        if !(det > 0.0) {
            return Err(FemError::DegenerateElement {
                element,
                jacobian: det,
            });
        }
        // physical gradients: g = J^{-1} dN/dxi (rows of J are d/dxi)
        let grads: Vec<[f64; 3]> = dn
            .iter()
            .map(|d| {
                let mut g = [0.0; 3];
                for c in 0..dim {
                    for r in 0..dim {
                        g[c] += inv[c][r] * d[r];
                    }
                }
                g
            })
            .collect();

        match &dmat {
            None => {
                for a in 0..npe {
                    for b in a..npe {
                        let dot: f64 = (0..dim).map(|d| grads[a][d] * grads[b][d]).sum();
                        ke[a * ndof + b] += dot * det;
                    }
                    fe[a] += n[a] * physics.source[0] * det;
                }
            }
            Some(dm) => {
                let brows: Vec<Vec<Vec<f64>>> = grads.iter().map(|&g| strain_rows(dim, g)).collect();
                let nstrain = dm.len();
                for a in 0..npe {
                    // D·B_a
                    let mut db = vec![vec![0.0; dpn]; nstrain];
                    for s in 0..nstrain {
                        for t in 0..nstrain {
                            for c in 0..dpn {
                                db[s][c] += dm[s][t] * brows[a][t][c];
                            }
                        }
                    }
                    for b in a..npe {
                        for i in 0..dpn {
                            for j in 0..dpn {
                                let row = a * dpn + i;
                                let col = b * dpn + j;
                                if col < row {
                                    continue;
                                }
                                let v: f64 = (0..nstrain).map(|s| brows[b][s][j] * db[s][i]).sum();
                                ke[row * ndof + col] += v * det;
                            }
                        }
                    }
                    for i in 0..dpn {
                        fe[a * dpn + i] += n[a] * physics.source[i] * det;
                    }
                }
            }
        }
    }
    for r in 0..ndof {
        for c in 0..r {
            ke[r * ndof + c] = ke[c * ndof + r];
        }
    }
    Ok((ke, fe))
}
