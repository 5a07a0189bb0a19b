/// Outcome of one asynchronous convergence check.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AsyncDecision {
    /// Residual above tolerance: keep iterating.
    Continue,
    /// Residual below tolerance on possibly stale data: stop publishing new
    /// traces until every patch has answered the current one.
    Hold,
    Converged,
}

/// Stopping rule for asynchronous runs.
///
/// A residual below tolerance fixes a candidate trace iteration `K`. The run
/// is converged once every patch reaction stems from a trace `>= K` and the
/// residual, recomputed from those reactions, is still below tolerance.
#[derive(Clone, Debug, PartialEq)]
pub struct AsyncConvergence {
    pub tol: f64,
    candidate: Option<u64>,
}

impl AsyncConvergence {
    pub fn new(tol: f64) -> Self {
        AsyncConvergence { tol, candidate: None }
    }

    pub fn candidate(&self) -> Option<u64> {
        self.candidate
    }

    /// `current_trace`: iteration index of the latest published trace;
    /// `reaction_iters`: trace iteration behind each patch's latest reaction.
    pub fn observe(&mut self, rel: f64, current_trace: u64, reaction_iters: &[u64]) -> AsyncDecision {
        if rel > self.tol {
            self.candidate = None;
            return AsyncDecision::Continue;
        }
        let k = *self.candidate.get_or_insert(current_trace);
        if reaction_iters.iter().all(|&i| i >= k) {
            AsyncDecision::Converged
        } else {
            AsyncDecision::Hold
        }
    }
}
