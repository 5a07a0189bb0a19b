//! Linear finite element problems on structured meshes: assembly, Dirichlet
//! elimination, reusable factorizations and nodal reactions.

mod dirichlet;
pub mod element;
pub mod solver;
pub mod sparse;

use std::collections::{BTreeSet, HashMap};

use thiserror::Error;

use crate::mesh::{MaterialField, StructuredMesh};

pub use dirichlet::{apply_dirichlet, DirichletSplit, ReducedProblem};
pub use solver::{factorize, Factorization, SolverKind};
pub use sparse::CsrMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FemError {
    #[error("element {element} is degenerate (jacobian determinant {jacobian})")]
    DegenerateElement { element: usize, jacobian: f64 },
    #[error("material has {got} values but the mesh has {expected} elements")]
    MaterialSize { expected: usize, got: usize },
    #[error("invalid physics: {0}")]
    Physics(String),
    #[error("dof {dof} constrained twice with conflicting values {first} and {second}")]
    ConflictingConstraint { dof: usize, first: f64, second: f64 },
    #[error("dof {dof} outside problem with {ndofs} dofs")]
    DofOutOfRange { dof: usize, ndofs: usize },
    #[error("matrix is not positive definite: pivot {pivot} = {value:e}")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("conjugate gradients stalled after {iterations} iterations (relative residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("vector length {got} does not match expected {expected}")]
    Dimension { expected: usize, got: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PhysicsKind {
    Poisson,
    Elasticity,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Physics {
    pub kind: PhysicsKind,
    pub poisson_ratio: f64,
    /// Constant body load, one entry per nodal dof.
    pub source: Vec<f64>,
}

impl Physics {
    /// Heat conduction with unit source.
    pub fn poisson() -> Self {
        Physics {
            kind: PhysicsKind::Poisson,
            poisson_ratio: 0.0,
            source: vec![1.0],
        }
    }

    /// Linear elasticity with ν = 0.3 and body force (1, …, 1).
    pub fn elasticity(dim: usize) -> Self {
        Physics {
            kind: PhysicsKind::Elasticity,
            poisson_ratio: 0.3,
            source: vec![1.0; dim],
        }
    }

    pub fn dofs_per_node(&self) -> usize {
        self.source.len()
    }

    pub fn validate(&self, dim: usize) -> Result<(), FemError> {
        match self.kind {
            PhysicsKind::Poisson if self.source.len() != 1 => {
                Err(FemError::Physics("poisson source must be scalar".into()))
            }
            PhysicsKind::Elasticity if self.source.len() != dim => Err(FemError::Physics(format!(
                "elasticity source must have {dim} components"
            ))),
            PhysicsKind::Elasticity if !(0.0..0.5).contains(&self.poisson_ratio) => Err(
                FemError::Physics(format!("poisson_ratio {} outside [0, 0.5)", self.poisson_ratio)),
            ),
            _ => Ok(()),
        }
    }
}

/// Stiffness `K` and load `f` over every dof of a mesh.
#[derive(Clone, Debug)]
pub struct AssembledProblem {
    pub stiffness: CsrMatrix,
    pub load: Vec<f64>,
    pub dofs_per_node: usize,
}

impl AssembledProblem {
    pub fn ndofs(&self) -> usize {
        self.load.len()
    }

    /// Nodal reaction `(K u − f)` at `dofs`.
    pub fn reaction(&self, u: &[f64], dofs: &[usize]) -> Result<Vec<f64>, FemError> {
        Ok(self.reaction_rows(dofs)?.apply(u))
    }

    /// Precomputed rows of `K` and `f` for repeated reaction evaluation.
    pub fn reaction_rows(&self, dofs: &[usize]) -> Result<ReactionRows, FemError> {
        let n = self.ndofs();
        if let Some(&dof) = dofs.iter().find(|&&d| d >= n) {
            return Err(FemError::DofOutOfRange { dof, ndofs: n });
        }
        let identity: Vec<Option<usize>> = (0..n).map(Some).collect();
        Ok(ReactionRows {
            rows: self.stiffness.extract(dofs, &identity, n),
            load: dofs.iter().map(|&d| self.load[d]).collect(),
        })
    }
}

#[derive(Clone, Debug)]
pub struct ReactionRows {
    rows: CsrMatrix,
    load: Vec<f64>,
}

impl ReactionRows {
    pub fn len(&self) -> usize {
        self.load.len()
    }

    pub fn is_empty(&self) -> bool {
        self.load.is_empty()
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        self.rows
            .matvec(u)
            .into_iter()
            .zip(&self.load)
            .map(|(ku, f)| ku - f)
            .collect()
    }
}

/// Assembles `K` and `f`; when `element_subset` is given only those elements
/// contribute (the dof numbering still spans the whole mesh).
pub fn assemble(
    mesh: &StructuredMesh,
    physics: &Physics,
    material: &MaterialField,
    element_subset: Option<&[usize]>,
) -> Result<AssembledProblem, FemError> {
    let dim = mesh.dim();
    physics.validate(dim)?;
    if material.values.len() != mesh.num_elements() {
        return Err(FemError::MaterialSize {
            expected: mesh.num_elements(),
            got: material.values.len(),
        });
    }
    let all: Vec<usize>;
    let elements: &[usize] = match element_subset {
        Some(s) => s,
        None => {
            all = (0..mesh.num_elements()).collect();
            &all
        }
    };
    let dpn = physics.dofs_per_node();
    let ndofs = mesh.num_nodes() * dpn;

    let mut pattern = vec![BTreeSet::new(); ndofs];
    for &e in elements {
        let dofs = element_dofs(mesh.element(e), dpn);
        for &r in &dofs {
            pattern[r].extend(dofs.iter().copied());
        }
    }
    let mut stiffness = CsrMatrix::from_pattern(ndofs, &pattern);
    let mut load = vec![0.0; ndofs];

    // Elements of a structured mesh share a handful of shapes; cache the
    // unit-coefficient kernels by relative node offsets.
    let quantum = mesh.spacing() * 1e-9;
    let mut cache: HashMap<Vec<i64>, (Vec<f64>, Vec<f64>)> = HashMap::new();
    for &e in elements {
        let coords = mesh.element_coords(e);
        let base = coords[0];
        let key: Vec<i64> = coords
            .iter()
            .flat_map(|p| (0..3).map(move |d| ((p[d] - base[d]) / quantum).round() as i64))
            .collect();
        if !cache.contains_key(&key) {
            let sys = element::element_system(dim, &coords, physics, e)?;
            cache.insert(key.clone(), sys);
        }
        let (ke, fe) = &cache[&key];
        let coef = material.values[e];
        let dofs = element_dofs(mesh.element(e), dpn);
        let nd = dofs.len();
        for (a, &r) in dofs.iter().enumerate() {
            for (b, &c) in dofs.iter().enumerate() {
                stiffness.add(r, c, coef * ke[a * nd + b]);
            }
            load[r] += fe[a];
        }
    }
    Ok(AssembledProblem {
        stiffness,
        load,
        dofs_per_node: dpn,
    })
}

pub fn element_dofs(nodes: &[usize], dpn: usize) -> Vec<usize> {
    nodes
        .iter()
        .flat_map(|&n| (0..dpn).map(move |c| n * dpn + c))
        .collect()
}

/// Dofs of a set of nodes, node-major.
pub fn node_dofs(nodes: impl IntoIterator<Item = usize>, dpn: usize) -> Vec<usize> {
    nodes
        .into_iter()
        .flat_map(|n| (0..dpn).map(move |c| n * dpn + c))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_patch_grid, GridSpec};

    fn bar(n: usize) -> StructuredMesh {
        let h = 1.0 / n as f64;
        StructuredMesh::box_grid(3, [0.0; 3], h, [n, 1, 1], 1e-12)
    }

    fn solve_bar(n: usize) -> (StructuredMesh, Vec<f64>) {
        let mesh = bar(n);
        let mat = MaterialField::homogeneous(mesh.num_elements(), 1.0);
        let prob = assemble(&mesh, &Physics::poisson(), &mat, None).unwrap();
        let fixed: Vec<(usize, f64)> = (0..mesh.num_nodes())
            .filter(|&v| {
                let x = mesh.node(v)[0];
                x == 0.0 || (x - 1.0).abs() < 1e-12
            })
            .map(|v| (v, 0.0))
            .collect();
        let red = apply_dirichlet(&prob, &fixed).unwrap();
        let u = red.solve(SolverKind::Direct).unwrap();
        (mesh, u)
    }

    fn exact(x: f64) -> f64 {
        x * (1.0 - x) / 2.0
    }

    #[test]
    fn bar_matches_parabola() {
        let (mesh, u) = solve_bar(8);
        for v in 0..mesh.num_nodes() {
            assert!((u[v] - exact(mesh.node(v)[0])).abs() < 0.125f64.powi(2));
        }
    }

    /// Error of the discrete field at element centroids, where the
    /// interpolation error of the parabola is h²/8.
    fn bar_centroid_error(n: usize) -> f64 {
        let (mesh, u) = solve_bar(n);
        (0..mesh.num_elements())
            .map(|e| {
                let avg = mesh.element(e).iter().map(|&v| u[v]).sum::<f64>() / 8.0;
                (avg - exact(mesh.centroid(e)[0])).abs()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn bar_error_decreases_with_refinement() {
        let e: Vec<f64> = [4, 8, 16].iter().map(|&n| bar_centroid_error(n)).collect();
        assert!(e[0] > e[1] && e[1] > e[2], "{e:?}");
        for (k, n) in [4, 8, 16].iter().enumerate() {
            let h = 1.0 / *n as f64;
            assert!((e[k] - h * h / 8.0).abs() < 1e-12, "{e:?}");
        }
    }

    #[test]
    fn assembled_matrix_exactly_symmetric() {
        let d = generate_patch_grid(&GridSpec::new(2, 1, 1)).unwrap();
        let fine = &d.patches()[0].fine;
        let mat = crate::mesh::tag_inclusion(fine, [0.5; 3], 0.25, 1.0, 0.01);
        for phys in [Physics::poisson(), Physics::elasticity(3)] {
            let p = assemble(fine, &phys, &mat, None).unwrap();
            let k = &p.stiffness;
            for i in 0..k.nrows() {
                for (j, v) in k.row(i) {
                    assert_eq!(v, k.get(j, i));
                }
            }
        }
    }

    #[test]
    fn subset_assembly_is_additive() {
        let d = generate_patch_grid(&GridSpec::new(2, 1, 1)).unwrap();
        let fine = &d.patches()[0].fine;
        let mat = crate::mesh::tag_inclusion(fine, [0.5; 3], 0.25, 1.0, 0.01);
        let phys = Physics::elasticity(3);
        let half: Vec<usize> = (0..fine.num_elements()).filter(|e| e % 3 == 0).collect();
        let rest: Vec<usize> = (0..fine.num_elements()).filter(|e| e % 3 != 0).collect();
        let all = assemble(fine, &phys, &mat, None).unwrap();
        let a = assemble(fine, &phys, &mat, Some(&half)).unwrap();
        let b = assemble(fine, &phys, &mat, Some(&rest)).unwrap();
        let scale = all.stiffness.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..all.ndofs() {
            for (j, v) in all.stiffness.row(i) {
                let sum = a.stiffness.get(i, j) + b.stiffness.get(i, j);
                assert!((v - sum).abs() <= 1e-14 * scale);
            }
            assert!((all.load[i] - a.load[i] - b.load[i]).abs() <= 1e-15);
        }
    }

    #[test]
    fn dirichlet_reaction_sum_is_minus_volume() {
        let d = generate_patch_grid(&GridSpec::new(2, 1, 1).with_sizes(1.0, 0.25, 0.25)).unwrap();
        let g = d.global();
        let mat = MaterialField::homogeneous(g.num_elements(), 1.0);
        let prob = assemble(g, &Physics::poisson(), &mat, None).unwrap();
        let fixed: Vec<usize> = (0..g.num_nodes()).filter(|&n| d.global_on_boundary(n)).collect();
        let cons: Vec<(usize, f64)> = fixed.iter().map(|&n| (n, 0.0)).collect();
        let u = apply_dirichlet(&prob, &cons).unwrap().solve(SolverKind::Direct).unwrap();
        let sum: f64 = prob.reaction(&u, &fixed).unwrap().iter().sum();
        assert!((sum + 2.0).abs() / 2.0 < 1e-10, "{sum}");

        let free: Vec<usize> = (0..g.num_nodes()).filter(|&n| !d.global_on_boundary(n)).collect();
        let lam = prob.reaction(&u, &free).unwrap();
        assert!(lam.iter().all(|v| v.abs() < 1e-12));
        assert!(matches!(
            prob.reaction(&u, &[g.num_nodes()]),
            Err(FemError::DofOutOfRange { .. })
        ));
    }

    #[test]
    fn free_floating_reaction_sums_to_negated_load() {
        let mesh = bar(3);
        let mat = MaterialField::homogeneous(mesh.num_elements(), 2.0);
        let prob = assemble(&mesh, &Physics::elasticity(3), &mat, None).unwrap();
        let u: Vec<f64> = (0..prob.ndofs()).map(|i| (i as f64 * 0.37).sin()).collect();
        let all: Vec<usize> = (0..prob.ndofs()).collect();
        let lam = prob.reaction(&u, &all).unwrap();
        for c in 0..3 {
            let s: f64 = lam.iter().skip(c).step_by(3).sum();
            let f: f64 = prob.load.iter().skip(c).step_by(3).sum();
            assert!((s + f).abs() < 1e-12, "{s} {f}");
        }
    }

    #[test]
    fn subset_reactions_balance_at_shared_node() {
        let mesh = StructuredMesh::box_grid(3, [0.0; 3], 0.5, [2, 1, 1], 1e-12);
        let mat = MaterialField::homogeneous(2, 1.0);
        let phys = Physics::poisson();
        let u: Vec<f64> = mesh.nodes().iter().map(|p| p[0] * p[0] + 0.3 * p[1]).collect();
        let left = assemble(&mesh, &phys, &mat, Some(&[0])).unwrap();
        let right = assemble(&mesh, &phys, &mat, Some(&[1])).unwrap();
        let all = assemble(&mesh, &phys, &mat, None).unwrap();
        let shared: Vec<usize> = (0..mesh.num_nodes()).filter(|&n| mesh.node(n)[0] == 0.5).collect();
        let l = left.reaction(&u, &shared).unwrap();
        let r = right.reaction(&u, &shared).unwrap();
        let t = all.reaction(&u, &shared).unwrap();
        for k in 0..shared.len() {
            assert!((l[k] + r[k] - t[k]).abs() < 1e-14);
        }
        // zero source, field varying only across the interface: the two
        // sides exert equal and opposite fluxes
        let nosrc = Physics {
            source: vec![0.0],
            ..Physics::poisson()
        };
        let u: Vec<f64> = mesh.nodes().iter().map(|p| 2.0 * p[0]).collect();
        let l = assemble(&mesh, &nosrc, &mat, Some(&[0])).unwrap().reaction(&u, &shared).unwrap();
        let r = assemble(&mesh, &nosrc, &mat, Some(&[1])).unwrap().reaction(&u, &shared).unwrap();
        for k in 0..shared.len() {
            assert!(l[k].abs() > 1e-3);
            assert!((l[k] + r[k]).abs() < 1e-14);
        }
    }

    #[test]
    fn contrast_hundred_elasticity_stays_spd() {
        let d = generate_patch_grid(&GridSpec::new(1, 1, 1)).unwrap();
        let p = &d.patches()[0];
        let mat = crate::mesh::tag_inclusion(&p.fine, [0.5; 3], 0.25, 1.0, 0.01);
        let prob = assemble(&p.fine, &Physics::elasticity(3), &mat, None).unwrap();
        let fixed: Vec<(usize, f64)> = node_dofs(
            (0..p.fine.num_nodes()).filter(|&n| p.fine_on_boundary[n]),
            3,
        )
        .into_iter()
        .map(|d| (d, 0.0))
        .collect();
        let red = apply_dirichlet(&prob, &fixed).unwrap();
        assert!(factorize(red.split.k_ff(), SolverKind::Direct).is_ok());
    }

    #[test]
    fn physics_validation() {
        assert!(Physics::elasticity(3).validate(3).is_ok());
        assert!(Physics::elasticity(2).validate(3).is_err());
        let bad = Physics {
            poisson_ratio: 0.5,
            ..Physics::elasticity(3)
        };
        assert!(bad.validate(3).is_err());
    }
}
