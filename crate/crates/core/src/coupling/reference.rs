//! Single fine-mesh model of the whole structure, used to verify converged
//! coupling runs.

use crate::fem::{apply_dirichlet, assemble};
use crate::mesh::{MaterialField, StructuredMesh};

use super::system::{CoupledSystem, ProblemSetup};
use super::CouplingError;

#[derive(Clone, Debug)]
pub struct MonolithicSolution {
    pub mesh: StructuredMesh,
    pub field: Vec<f64>,
}

/// Solves the reference problem at `h_fine` with patch inclusions where the
/// grid is patched and plain matrix elsewhere.
pub fn monolithic_reference(setup: &ProblemSetup) -> Result<MonolithicSolution, CouplingError> {
    setup.validate()?;
    let g = &setup.grid;
    let dim = g.dim();
    let counts = g.cell_counts();
    let per = (g.patch_side / g.h_fine).round() as usize;
    let mut div = [0usize; 3];
    for d in 0..dim {
        div[d] = counts[d] * per;
    }
    let mesh = StructuredMesh::box_grid(dim, [0.0; 3], g.h_fine, div, g.h_fine * 1e-9);
    let r2 = setup.radius().powi(2);
    let values = (0..mesh.num_elements())
        .map(|e| {
            let c = mesh.centroid(e);
            let mut ijk = [0usize; 3];
            for d in 0..dim {
                ijk[d] = ((c[d] / g.patch_side).floor() as usize).min(counts[d] - 1);
            }
            let cell = g.cell_index(ijk);
            if !g.patched_cells.contains(cell) {
                return setup.matrix_value;
            }
            let center = setup.inclusion_center(cell);
            let d2: f64 = (0..3).map(|d| (c[d] - center[d]).powi(2)).sum();
            if d2 < r2 {
                setup.inclusion_value()
            } else {
                setup.matrix_value
            }
        })
        .collect();
    let material = MaterialField {
        values,
        ..MaterialField::homogeneous(0, setup.matrix_value)
    };
    let problem = assemble(&mesh, &setup.physics, &material, None)?;
    let dpn = setup.physics.dofs_per_node();
    let mut clamped = Vec::new();
    for n in 0..mesh.num_nodes() {
        let a = mesh.grid_index(n);
        if (0..dim).any(|d| a[d] == 0 || a[d] == div[d]) {
            clamped.extend((0..dpn).map(|c| (n * dpn + c, 0.0)));
        }
    }
    let field = apply_dirichlet(&problem, &clamped)?.solve(setup.solver)?;
    Ok(MonolithicSolution { mesh, field })
}

impl MonolithicSolution {
    /// Largest nodal deviation of the patch fields from the reference,
    /// relative to the reference's largest magnitude.
    pub fn max_relative_error(&self, system: &CoupledSystem, local_fields: &[Vec<f64>]) -> Result<f64, CouplingError> {
        let dpn = system.dofs_per_node();
        let scale = self.field.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut worst = 0.0f64;
        for (s, field) in local_fields.iter().enumerate() {
            let fine = &system.decomposition().patches()[s].fine;
            for n in 0..fine.num_nodes() {
                let x = fine.node(n);
                let m = self.mesh.lookup(x).ok_or(CouplingError::Locate { patch: s, point: x })?;
                for c in 0..dpn {
                    worst = worst.max((field[n * dpn + c] - self.field[m * dpn + c]).abs());
                }
            }
        }
        Ok(if scale > 0.0 { worst / scale } else { worst })
    }
}
