use rayon::prelude::*;

use crate::fem::{
    assemble, factorize, node_dofs, AssembledProblem, DirichletSplit, Factorization, FemError, Physics,
    ReactionRows, SolverKind,
};
use crate::mesh::{
    generate_patch_grid, tag_inclusion, GridSpec, MaterialField, PatchDecomposition, Point, StructuredMesh,
};

use super::transfer::{build_transfer, TransferOperator};
use super::CouplingError;

/// Physical and numerical parameters of a coupled problem.
#[derive(Clone, Debug, PartialEq)]
pub struct ProblemSetup {
    pub grid: GridSpec,
    pub physics: Physics,
    /// Coefficient of the homogeneous matrix (global model and patch bulk).
    pub matrix_value: f64,
    /// Ratio matrix / inclusion; the inclusion is the softer phase.
    pub contrast: f64,
    /// `None` means a quarter of the patch side.
    pub inclusion_radius: Option<f64>,
    /// Offset of the inclusion centre from the cell centre.
    pub inclusion_offset: Point,
    pub solver: SolverKind,
}

impl ProblemSetup {
    pub fn new(grid: GridSpec, physics: Physics) -> Self {
        ProblemSetup {
            grid,
            physics,
            matrix_value: 1.0,
            contrast: 100.0,
            inclusion_radius: None,
            inclusion_offset: [0.0; 3],
            solver: SolverKind::Direct,
        }
    }

    pub fn poisson(grid: GridSpec) -> Self {
        Self::new(grid, Physics::poisson())
    }

    pub fn elasticity(grid: GridSpec) -> Self {
        let dim = grid.dim();
        Self::new(grid, Physics::elasticity(dim))
    }

    pub fn with_contrast(mut self, contrast: f64) -> Self {
        self.contrast = contrast;
        self
    }

    pub fn radius(&self) -> f64 {
        self.inclusion_radius.unwrap_or(self.grid.patch_side / 4.0)
    }

    pub fn inclusion_value(&self) -> f64 {
        self.matrix_value / self.contrast
    }

    pub fn inclusion_center(&self, cell: usize) -> Point {
        let c = self.grid.cell_center(cell);
        [
            c[0] + self.inclusion_offset[0],
            c[1] + self.inclusion_offset[1],
            c[2] + self.inclusion_offset[2],
        ]
    }

    pub fn validate(&self) -> Result<(), CouplingError> {
        self.grid.validate()?;
        self.physics.validate(self.grid.dim())?;
        if !(self.matrix_value > 0.0) || !self.matrix_value.is_finite() {
            return Err(CouplingError::Config(format!(
                "matrix_value must be positive, got {}",
                self.matrix_value
            )));
        }
        if !(self.contrast > 0.0) || !self.contrast.is_finite() {
            return Err(CouplingError::Config(format!(
                "contrast must be positive, got {}",
                self.contrast
            )));
        }
        let r = self.radius();
        if !(r >= 0.0) || !r.is_finite() {
            return Err(CouplingError::Config(format!("inclusion radius must be >= 0, got {r}")));
        }
        Ok(())
    }

    /// Fine-model coefficients of the patch occupying `cell`.
    pub fn fine_material(&self, mesh: &StructuredMesh, cell: usize) -> MaterialField {
        tag_inclusion(
            mesh,
            self.inclusion_center(cell),
            self.radius(),
            self.matrix_value,
            self.inclusion_value(),
        )
    }
}

/// Everything one patch worker needs: fine operators, transfer and index maps.
#[derive(Clone, Debug)]
pub struct LocalModel {
    pub patch_id: usize,
    pub transfer: TransferOperator,
    pub material: MaterialField,
    split: DirichletSplit,
    factorization: Factorization,
    /// Constrained fine dof → index into the fine interface dof vector, or
    /// `None` for a clamped outer-boundary dof.
    constrained_src: Vec<Option<usize>>,
    fine_reaction: ReactionRows,
    /// Coarse zone elements' reaction on the trace dofs.
    zone_reaction: ReactionRows,
    /// Global interface nodes of Γ^s not on ∂Ω; the patch trace layout.
    trace_nodes: Vec<usize>,
    /// Closure column of J → slot in `trace_nodes`.
    closure_to_trace: Vec<Option<usize>>,
    /// Patch trace dof → position in the shared interface vector.
    iface_index: Vec<usize>,
}

impl LocalModel {
    pub fn trace_nodes(&self) -> &[usize] {
        &self.trace_nodes
    }

    /// Positions of this patch's trace dofs in the shared interface vector.
    pub fn interface_index(&self) -> &[usize] {
        &self.iface_index
    }

    pub fn trace_len(&self) -> usize {
        self.iface_index.len()
    }
}

/// Fine solution of one patch and its interface reaction on the patch trace
/// dofs (already transferred with Jᵀ).
#[derive(Clone, Debug)]
pub struct LocalResult {
    pub field: Vec<f64>,
    pub reaction: Vec<f64>,
}

/// Assembled and factorized global and local models.
#[derive(Clone, Debug)]
pub struct CoupledSystem {
    setup: ProblemSetup,
    decomp: PatchDecomposition,
    dpn: usize,
    global: AssembledProblem,
    global_split: DirichletSplit,
    global_fact: Factorization,
    /// Sorted global dofs of the interface union (∂Ω excluded).
    iface_dofs: Vec<usize>,
    /// Interface index → position in the global free vector.
    iface_free_pos: Vec<usize>,
    complement: Option<ReactionRows>,
    locals: Vec<LocalModel>,
}

impl CoupledSystem {
    pub fn build(setup: &ProblemSetup) -> Result<Self, CouplingError> {
        setup.validate()?;
        let decomp = generate_patch_grid(&setup.grid)?;
        let dpn = setup.physics.dofs_per_node();
        let gmesh = decomp.global();

        let gmat = MaterialField::homogeneous(gmesh.num_elements(), setup.matrix_value);
        let global = assemble(gmesh, &setup.physics, &gmat, None)?;
        let clamped = node_dofs((0..gmesh.num_nodes()).filter(|&n| decomp.global_on_boundary(n)), dpn);
        let global_split = DirichletSplit::new(&global, &clamped)?;
        let global_fact = factorize(global_split.k_ff(), setup.solver)?;

        let mut iface_nodes: Vec<usize> = decomp
            .patches()
            .iter()
            .flat_map(|p| p.interface.global_iface_nodes.iter().copied())
            .filter(|&n| !decomp.global_on_boundary(n))
            .collect();
        iface_nodes.sort_unstable();
        iface_nodes.dedup();
        let iface_dofs = node_dofs(iface_nodes.iter().copied(), dpn);
        let mut free_pos = vec![usize::MAX; global.ndofs()];
        for (k, &d) in global_split.free().iter().enumerate() {
            free_pos[d] = k;
        }
        let iface_free_pos: Vec<usize> = iface_dofs.iter().map(|&d| free_pos[d]).collect();

        let omega0 = decomp.complement_elements();
        let complement = if omega0.is_empty() {
            None
        } else {
            let sub = assemble(gmesh, &setup.physics, &gmat, Some(&omega0))?;
            Some(sub.reaction_rows(&iface_dofs)?)
        };

        let locals = (0..decomp.num_patches())
            .into_par_iter()
            .map(|s| build_local(setup, &decomp, s, &iface_dofs))
            .collect::<Result<Vec<_>, _>>()?;
        log::debug!(
            "coupled system: {} global dofs, {} interface dofs, {} patches",
            global.ndofs(),
            iface_dofs.len(),
            locals.len()
        );

        Ok(CoupledSystem {
            setup: setup.clone(),
            decomp,
            dpn,
            global,
            global_split,
            global_fact,
            iface_dofs,
            iface_free_pos,
            complement,
            locals,
        })
    }

    pub fn setup(&self) -> &ProblemSetup {
        &self.setup
    }

    pub fn decomposition(&self) -> &PatchDecomposition {
        &self.decomp
    }

    pub fn dofs_per_node(&self) -> usize {
        self.dpn
    }

    pub fn num_patches(&self) -> usize {
        self.locals.len()
    }

    pub fn local(&self, s: usize) -> &LocalModel {
        &self.locals[s]
    }

    pub fn interface_dofs(&self) -> &[usize] {
        &self.iface_dofs
    }

    pub fn interface_len(&self) -> usize {
        self.iface_dofs.len()
    }

    pub fn global_problem(&self) -> &AssembledProblem {
        &self.global
    }

    /// Global displacement/temperature for immersed interface load `p`.
    pub fn global_solve(&self, p: &[f64]) -> Result<Vec<f64>, CouplingError> {
        assert_eq!(p.len(), self.iface_dofs.len());
        let mut rhs = self.global_split.f_free().to_vec();
        for (&pos, &v) in self.iface_free_pos.iter().zip(p) {
            rhs[pos] += v;
        }
        let x = self.global_fact.resolve(&rhs)?;
        let zeros = vec![0.0; self.global_split.constrained().len()];
        Ok(self.global_split.expand(&x, &zeros))
    }

    /// Trace of `u_G` on the non-clamped nodes of Γ^s, node-major.
    pub fn trace(&self, s: usize, u_g: &[f64]) -> Vec<f64> {
        let dpn = self.dpn;
        self.locals[s]
            .trace_nodes
            .iter()
            .flat_map(|&n| (0..dpn).map(move |c| u_g[n * dpn + c]))
            .collect()
    }

    pub fn local_solve(&self, s: usize, u_g: &[f64]) -> Result<LocalResult, CouplingError> {
        self.local_solve_trace(s, &self.trace(s, u_g))
    }

    /// Dirichlet solve of patch `s` driven by a trace in the patch layout.
    pub fn local_solve_trace(&self, s: usize, trace: &[f64]) -> Result<LocalResult, CouplingError> {
        let lm = &self.locals[s];
        let dpn = self.dpn;
        assert_eq!(trace.len(), lm.trace_len());
        let mut closure = vec![0.0; lm.transfer.ncols() * dpn];
        for (k, slot) in lm.closure_to_trace.iter().enumerate() {
            if let Some(t) = *slot {
                closure[k * dpn..(k + 1) * dpn].copy_from_slice(&trace[t * dpn..(t + 1) * dpn]);
            }
        }
        let fine_iface = lm.transfer.apply(&closure, dpn);
        let values: Vec<f64> = lm
            .constrained_src
            .iter()
            .map(|src| src.map_or(0.0, |i| fine_iface[i]))
            .collect();
        let rhs = lm.split.lift(&values);
        let x = lm
            .factorization
            .resolve(&rhs)
            .map_err(|source| CouplingError::Patch { patch: s, source })?;
        let field = lm.split.expand(&x, &values);
        let lam_fine = lm.fine_reaction.apply(&field);
        let lam_closure = lm.transfer.apply_transpose(&lam_fine, dpn);
        let mut reaction = vec![0.0; trace.len()];
        for (k, slot) in lm.closure_to_trace.iter().enumerate() {
            if let Some(t) = *slot {
                reaction[t * dpn..(t + 1) * dpn].copy_from_slice(&lam_closure[k * dpn..(k + 1) * dpn]);
            }
        }
        Ok(LocalResult { field, reaction })
    }

    /// Reaction of the unpatched global elements on the interface dofs.
    pub fn complement_reaction(&self, u_g: &[f64]) -> Vec<f64> {
        match &self.complement {
            Some(rows) => rows.apply(u_g),
            None => vec![0.0; self.iface_dofs.len()],
        }
    }

    /// Reaction of the global elements of patch zone `s`, in the patch trace
    /// layout.
    pub fn zone_reaction(&self, s: usize, u_g: &[f64]) -> Vec<f64> {
        self.locals[s].zone_reaction.apply(u_g)
    }

    /// Adds a patch-layout vector into the shared interface layout.
    pub fn scatter_add(&self, s: usize, patch_vec: &[f64], into: &mut [f64]) {
        for (&i, &v) in self.locals[s].iface_index.iter().zip(patch_vec) {
            into[i] += v;
        }
    }

    /// `r = −(Σ_s λ_F^s + λ_Ω0)`, patches summed in ascending id.
    pub fn residual(&self, reactions: &[Vec<f64>], complement: &[f64]) -> Vec<f64> {
        assert_eq!(reactions.len(), self.locals.len());
        let mut acc = complement.to_vec();
        for (s, lam) in reactions.iter().enumerate() {
            self.scatter_add(s, lam, &mut acc);
        }
        acc.iter_mut().for_each(|v| *v = -*v);
        acc
    }
}

fn build_local(
    setup: &ProblemSetup,
    decomp: &PatchDecomposition,
    s: usize,
    iface_dofs: &[usize],
) -> Result<LocalModel, CouplingError> {
    let patch = &decomp.patches()[s];
    let dpn = setup.physics.dofs_per_node();
    let annotate = |source: FemError| CouplingError::Patch { patch: s, source };
    let transfer = build_transfer(&patch.interface, decomp.global(), &patch.fine)?;
    let material = setup.fine_material(&patch.fine, patch.cell);
    let problem = assemble(&patch.fine, &setup.physics, &material, None).map_err(annotate)?;

    let fine_nodes = patch.fine.num_nodes();
    let mut iface_row = vec![None; fine_nodes];
    for (k, &n) in patch.interface.fine_iface_nodes.iter().enumerate() {
        iface_row[n] = Some(k);
    }
    let mut constrained = Vec::new();
    let mut constrained_src = Vec::new();
    for n in 0..fine_nodes {
        let row = iface_row[n];
        if row.is_none() && !patch.fine_on_boundary[n] {
            continue;
        }
        for c in 0..dpn {
            constrained.push(n * dpn + c);
            // boundary rows win: an interface node on ∂Ω is clamped
            constrained_src.push(if patch.fine_on_boundary[n] { None } else { row.map(|k| k * dpn + c) });
        }
    }
    let split = DirichletSplit::new(&problem, &constrained).map_err(annotate)?;
    let factorization = factorize(split.k_ff(), setup.solver).map_err(annotate)?;
    let fine_iface_dofs = node_dofs(patch.interface.fine_iface_nodes.iter().copied(), dpn);
    let fine_reaction = problem.reaction_rows(&fine_iface_dofs).map_err(annotate)?;

    let closure = &patch.interface.global_iface_nodes;
    let trace_nodes: Vec<usize> = closure
        .iter()
        .copied()
        .filter(|&n| !decomp.global_on_boundary(n))
        .collect();
    let mut next = 0;
    let closure_to_trace = closure
        .iter()
        .map(|&n| {
            (!decomp.global_on_boundary(n)).then(|| {
                next += 1;
                next - 1
            })
        })
        .collect();
    let gmat = MaterialField::homogeneous(decomp.global().num_elements(), setup.matrix_value);
    let zone = assemble(decomp.global(), &setup.physics, &gmat, Some(&decomp.zone_elements(s)))?;
    let zone_reaction = zone.reaction_rows(&node_dofs(trace_nodes.iter().copied(), dpn))?;
    let iface_index = node_dofs(trace_nodes.iter().copied(), dpn)
        .into_iter()
        .map(|d| iface_dofs.binary_search(&d).expect("trace dof on the interface"))
        .collect();

    Ok(LocalModel {
        patch_id: s,
        transfer,
        material,
        split,
        factorization,
        constrained_src,
        fine_reaction,
        zone_reaction,
        trace_nodes,
        closure_to_trace,
        iface_index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::solver::norm;

    fn poisson_2x1(contrast: f64) -> CoupledSystem {
        let grid = GridSpec::new(2, 1, 1).with_sizes(1.0, 0.25, 0.125);
        CoupledSystem::build(&ProblemSetup::poisson(grid).with_contrast(contrast)).unwrap()
    }

    #[test]
    fn zero_load_gives_uncorrected_model() {
        let sys = poisson_2x1(100.0);
        let u0 = sys.global_solve(&vec![0.0; sys.interface_len()]).unwrap();
        let prob = sys.global_problem();
        // interior equilibrium: K u = f away from ∂Ω
        let gmesh = sys.decomposition().global();
        let free: Vec<usize> = (0..gmesh.num_nodes()).filter(|&n| !sys.decomposition().global_on_boundary(n)).collect();
        let r = prob.reaction(&u0, &free).unwrap();
        assert!(norm(&r) < 1e-12);
    }

    #[test]
    fn global_solve_is_affine() {
        let sys = poisson_2x1(100.0);
        let n = sys.interface_len();
        let p1: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let p2: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).cos()).collect();
        let p12: Vec<f64> = p1.iter().zip(&p2).map(|(a, b)| a + b).collect();
        let u0 = sys.global_solve(&vec![0.0; n]).unwrap();
        let u1 = sys.global_solve(&p1).unwrap();
        let u2 = sys.global_solve(&p2).unwrap();
        let u12 = sys.global_solve(&p12).unwrap();
        for i in 0..u0.len() {
            let lhs = u12[i] - u0[i];
            let rhs = (u1[i] - u0[i]) + (u2[i] - u0[i]);
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn matching_patch_reaction_equals_zone_reaction() {
        // fine mesh = global mesh, contrast 1: identical discrete operators
        let grid = GridSpec::new(2, 1, 1).with_sizes(1.0, 0.25, 0.25);
        let sys = CoupledSystem::build(&ProblemSetup::poisson(grid).with_contrast(1.0)).unwrap();
        let p: Vec<f64> = (0..sys.interface_len()).map(|i| 0.1 * i as f64).collect();
        let u = sys.global_solve(&p).unwrap();
        for s in 0..sys.num_patches() {
            let lf = sys.local_solve(s, &u).unwrap().reaction;
            let lg = sys.zone_reaction(s, &u);
            let diff: Vec<f64> = lf.iter().zip(&lg).map(|(a, b)| a - b).collect();
            assert!(norm(&diff) <= 1e-10 * norm(&lg).max(1.0));
        }
    }

    #[test]
    fn zone_and_complement_reactions_balance_the_load() {
        // global equilibrium on the interface: λ_Ω0 + Σ_s λ_Z^s = p
        for (nx, patched) in [(2, vec![0, 1]), (3, vec![1])] {
            let grid = GridSpec::new(nx, 2, 1).with_sizes(1.0, 0.25, 0.125).with_patched(patched);
            let sys = CoupledSystem::build(&ProblemSetup::elasticity(grid)).unwrap();
            let p: Vec<f64> = (0..sys.interface_len()).map(|i| (0.7 * i as f64).sin()).collect();
            let u = sys.global_solve(&p).unwrap();
            let mut acc = sys.complement_reaction(&u);
            for s in 0..sys.num_patches() {
                sys.scatter_add(s, &sys.zone_reaction(s, &u), &mut acc);
            }
            let diff: Vec<f64> = acc.iter().zip(&p).map(|(a, b)| a - b).collect();
            assert!(norm(&diff) <= 1e-10 * norm(&p), "{}", norm(&diff));
        }
    }

    #[test]
    fn zero_data_zero_source_gives_zero_reaction() {
        let grid = GridSpec::new(2, 1, 1).with_sizes(1.0, 0.5, 0.2);
        let mut setup = ProblemSetup::poisson(grid);
        setup.physics.source = vec![0.0];
        let sys = CoupledSystem::build(&setup).unwrap();
        let t = vec![0.0; sys.local(0).trace_len()];
        let res = sys.local_solve_trace(0, &t).unwrap();
        assert!(res.reaction.iter().all(|&v| v == 0.0));
        let t1: Vec<f64> = (0..t.len()).map(|i| 1.0 + (i as f64).sin()).collect();
        let t2: Vec<f64> = t1.iter().map(|v| 2.0 * v).collect();
        let r1 = sys.local_solve_trace(0, &t1).unwrap().reaction;
        let r2 = sys.local_solve_trace(0, &t2).unwrap().reaction;
        for (a, b) in r1.iter().zip(&r2) {
            assert!((2.0 * a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn complement_reaction_cases() {
        // full coverage: empty Ω⁰
        let sys = poisson_2x1(100.0);
        let u = sys.global_solve(&vec![0.0; sys.interface_len()]).unwrap();
        assert!(sys.complement_reaction(&u).iter().all(|&v| v == 0.0));

        // one patch out of two: u_G = 0 gives −f from the Ω⁰ cube
        let grid = GridSpec::new(2, 1, 1).with_sizes(1.0, 0.25, 0.125).with_patched([0]);
        let sys = CoupledSystem::build(&ProblemSetup::poisson(grid)).unwrap();
        let zero = vec![0.0; sys.global_problem().ndofs()];
        let lam = sys.complement_reaction(&zero);
        // each of the 3x3 shared-face nodes touches four Ω⁰ elements, h³/8 each
        let h: f64 = 0.25;
        for v in &lam {
            assert!((v + h.powi(3) / 2.0).abs() < 1e-14, "{v}");
        }
        assert_eq!(lam.len(), 9);
    }

    #[test]
    fn residual_sums_in_shared_layout() {
        let sys = poisson_2x1(100.0);
        let n = sys.interface_len();
        let reacts: Vec<Vec<f64>> = (0..2).map(|s| vec![1.0 + s as f64; sys.local(s).trace_len()]).collect();
        let r = sys.residual(&reacts, &vec![0.5; n]);
        assert!(r.iter().all(|&v| v == -3.5));
        let doubled: Vec<Vec<f64>> = reacts.iter().map(|v| v.iter().map(|x| 2.0 * x).collect()).collect();
        let r2 = sys.residual(&doubled, &vec![1.0; n]);
        assert!(r.iter().zip(&r2).all(|(a, b)| 2.0 * a == *b));
    }

    #[test]
    fn invalid_setup_rejected() {
        let grid = GridSpec::new(1, 1, 1);
        let mut s = ProblemSetup::poisson(grid);
        s.contrast = 0.0;
        assert!(matches!(CoupledSystem::build(&s), Err(CouplingError::Config(_))));
        s.contrast = 100.0;
        s.inclusion_radius = Some(-1.0);
        assert!(CoupledSystem::build(&s).is_err());
    }
}
