use std::collections::BTreeMap;

use super::{factorize, AssembledProblem, CsrMatrix, FemError, SolverKind};

/// Partition of the dofs into free and constrained sets, with the blocks of
/// `K` needed to lift arbitrary prescribed values.
#[derive(Clone, Debug)]
pub struct DirichletSplit {
    ndofs: usize,
    free: Vec<usize>,
    constrained: Vec<usize>,
    k_ff: CsrMatrix,
    k_fc: CsrMatrix,
    f_free: Vec<f64>,
}

impl DirichletSplit {
    /// `constrained` must be sorted and free of duplicates.
    pub fn new(problem: &AssembledProblem, constrained: &[usize]) -> Result<Self, FemError> {
        let n = problem.ndofs();
        let mut slot = vec![None; n];
        for (k, &d) in constrained.iter().enumerate() {
            if d >= n {
                return Err(FemError::DofOutOfRange { dof: d, ndofs: n });
            }
            slot[d] = Some(k);
        }
        let free: Vec<usize> = (0..n).filter(|&d| slot[d].is_none()).collect();
        let mut free_map = vec![None; n];
        for (k, &d) in free.iter().enumerate() {
            free_map[d] = Some(k);
        }
        Ok(DirichletSplit {
            ndofs: n,
            k_ff: problem.stiffness.extract(&free, &free_map, free.len()),
            k_fc: problem.stiffness.extract(&free, &slot, constrained.len()),
            f_free: free.iter().map(|&d| problem.load[d]).collect(),
            free,
            constrained: constrained.to_vec(),
        })
    }

    pub fn free(&self) -> &[usize] {
        &self.free
    }

    pub fn constrained(&self) -> &[usize] {
        &self.constrained
    }

    pub fn k_ff(&self) -> &CsrMatrix {
        &self.k_ff
    }

    pub fn f_free(&self) -> &[f64] {
        &self.f_free
    }

    /// Right-hand side `f_free − K_fc · u_c`.
    pub fn lift(&self, values: &[f64]) -> Vec<f64> {
        assert_eq!(values.len(), self.constrained.len());
        if values.iter().all(|&v| v == 0.0) {
            return self.f_free.clone();
        }
        let kc = self.k_fc.matvec(values);
        self.f_free.iter().zip(kc).map(|(f, k)| f - k).collect()
    }

    /// Full dof vector from free unknowns and prescribed values.
    pub fn expand(&self, free_values: &[f64], constrained_values: &[f64]) -> Vec<f64> {
        let mut u = vec![0.0; self.ndofs];
        for (&d, &v) in self.free.iter().zip(free_values) {
            u[d] = v;
        }
        for (&d, &v) in self.constrained.iter().zip(constrained_values) {
            u[d] = v;
        }
        u
    }
}

/// Reduced system for one set of prescribed values.
#[derive(Clone, Debug)]
pub struct ReducedProblem {
    pub split: DirichletSplit,
    pub prescribed: Vec<f64>,
    pub rhs: Vec<f64>,
}

impl ReducedProblem {
    /// Factorizes, solves and expands to a full dof vector.
    pub fn solve(&self, kind: SolverKind) -> Result<Vec<f64>, FemError> {
        let fact = factorize(self.split.k_ff(), kind)?;
        let x = fact.resolve(&self.rhs)?;
        Ok(self.split.expand(&x, &self.prescribed))
    }
}

pub fn apply_dirichlet(
    problem: &AssembledProblem,
    constrained: &[(usize, f64)],
) -> Result<ReducedProblem, FemError> {
    let mut map: BTreeMap<usize, f64> = BTreeMap::new();
    for &(dof, v) in constrained {
        if dof >= problem.ndofs() {
            return Err(FemError::DofOutOfRange {
                dof,
                ndofs: problem.ndofs(),
            });
        }
        if let Some(&prev) = map.get(&dof) {
            if prev != v {
                return Err(FemError::ConflictingConstraint {
                    dof,
                    first: prev,
                    second: v,
                });
            }
        }
        map.insert(dof, v);
    }
    let dofs: Vec<usize> = map.keys().copied().collect();
    let prescribed: Vec<f64> = map.values().copied().collect();
    let split = DirichletSplit::new(problem, &dofs)?;
    let rhs = split.lift(&prescribed);
    Ok(ReducedProblem {
        split,
        prescribed,
        rhs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{assemble, Physics};
    use crate::mesh::{MaterialField, StructuredMesh};

    fn cube() -> AssembledProblem {
        let mesh = StructuredMesh::box_grid(3, [0.0; 3], 1.0, [1, 1, 1], 1e-12);
        let mat = MaterialField::homogeneous(1, 1.0);
        assemble(&mesh, &Physics::poisson(), &mat, None).unwrap()
    }

    #[test]
    fn full_constraint_returns_prescribed() {
        let p = cube();
        let cons: Vec<(usize, f64)> = (0..8).map(|d| (d, d as f64)).collect();
        let red = apply_dirichlet(&p, &cons).unwrap();
        assert!(red.rhs.is_empty());
        let u = red.solve(SolverKind::Direct).unwrap();
        assert_eq!(u, (0..8).map(|d| d as f64).collect::<Vec<_>>());
    }

    #[test]
    fn homogeneous_lift_keeps_load() {
        let p = cube();
        let red = apply_dirichlet(&p, &[(0, 0.0), (6, 0.0)]).unwrap();
        let expected: Vec<f64> = red.split.free().iter().map(|&d| p.load[d]).collect();
        assert_eq!(red.rhs, expected);
    }

    #[test]
    fn linear_field_reproduced() {
        let phys = Physics {
            source: vec![0.0],
            ..Physics::poisson()
        };
        let mesh = StructuredMesh::box_grid(3, [0.0; 3], 0.25, [4, 2, 2], 1e-12);
        let mat = MaterialField::homogeneous(mesh.num_elements(), 3.0);
        let p = assemble(&mesh, &phys, &mat, None).unwrap();
        let cons: Vec<(usize, f64)> = (0..mesh.num_nodes())
            .filter_map(|n| {
                let x = mesh.node(n)[0];
                (x == 0.0 || x == 1.0).then_some((n, x))
            })
            .collect();
        let u = apply_dirichlet(&p, &cons).unwrap().solve(SolverKind::Direct).unwrap();
        for n in 0..mesh.num_nodes() {
            assert!((u[n] - mesh.node(n)[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn conflicting_constraints_rejected() {
        let p = cube();
        assert!(apply_dirichlet(&p, &[(1, 0.0), (1, 0.0)]).is_ok());
        assert_eq!(
            apply_dirichlet(&p, &[(1, 0.0), (1, 2.0)]).unwrap_err(),
            FemError::ConflictingConstraint {
                dof: 1,
                first: 0.0,
                second: 2.0
            }
        );
        assert!(matches!(
            apply_dirichlet(&p, &[(8, 0.0)]),
            Err(FemError::DofOutOfRange { dof: 8, .. })
        ));
    }
}
