use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;

use super::matrix::TransitionMatrix;
use super::{ChainState, MarkovError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Bound on `‖πP − π‖∞`.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stationary {
    pub pi: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Marks states that belong to a closed communicating class.
pub fn recurrent_states(p: &TransitionMatrix) -> Vec<bool> {
    let mut graph = DiGraph::<(), ()>::with_capacity(p.len(), p.nnz());
    let nodes: Vec<_> = (0..p.len()).map(|_| graph.add_node(())).collect();
    for (i, row) in p.rows.iter().enumerate() {
        for &(j, q) in row {
            if q > 0.0 {
                graph.add_edge(nodes[i], nodes[j], ());
            }
        }
    }
    let mut component = vec![0usize; p.len()];
    let sccs = tarjan_scc(&graph);
    for (c, scc) in sccs.iter().enumerate() {
        for n in scc {
            component[n.index()] = c;
        }
    }
    let mut closed = vec![true; sccs.len()];
    for (i, row) in p.rows.iter().enumerate() {
        if row.iter().any(|&(j, q)| q > 0.0 && component[j] != component[i]) {
            closed[component[i]] = false;
        }
    }
    component.iter().map(|&c| closed[c]).collect()
}

fn residual(p: &TransitionMatrix, x: &[f64]) -> f64 {
    p.left_mul(x)
        .iter()
        .zip(x)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// Long-run distribution of the chain started in `initial`.
///
/// Iterates the lazy chain `(I + P)/2`, which has the same stationary
/// vectors as `P` but is aperiodic, so deterministic cycles converge. Mass
/// left on transient states is then removed and the vector renormalized.
pub fn stationary_distribution(
    p: &TransitionMatrix,
    initial: ChainState,
    opts: &SolverOptions,
) -> Result<Stationary, MarkovError> {
    let start = p
        .index_of(initial)
        .ok_or_else(|| MarkovError::Invalid(format!("initial state {initial} is not in the matrix")))?;
    let n = p.len();
    let mut x = vec![0.0; n];
    x[start] = 1.0;
    let mut y = vec![0.0; n];
    let inner_tol = opts.tolerance * 0.1;
    let mut iterations = 0;
    let mut delta = f64::INFINITY;
    while iterations < opts.max_iterations {
        y.iter_mut().for_each(|v| *v = 0.0);
        for (i, row) in p.rows.iter().enumerate() {
            let xi = x[i];
            if xi == 0.0 {
                continue;
            }
            for &(j, q) in row {
                y[j] += xi * q;
            }
        }
        delta = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        iterations += 1;
        if delta < inner_tol {
            break;
        }
        for (a, b) in x.iter_mut().zip(&y) {
            *a = 0.5 * (*a + b);
        }
    }
    if delta >= inner_tol {
        return Err(MarkovError::NonConvergence {
            iterations,
            residual: delta,
        });
    }
    for (v, recurrent) in x.iter_mut().zip(recurrent_states(p)) {
        if !recurrent || *v < 0.0 {
            *v = 0.0;
        }
    }
    let total: f64 = x.iter().sum();
    x.iter_mut().for_each(|v| *v /= total);
    let r = residual(p, &x);
    if r >= opts.tolerance {
        return Err(MarkovError::NonConvergence {
            iterations,
            residual: r,
        });
    }
    Ok(Stationary {
        pi: x,
        iterations,
        residual: r,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::{StateKind, ThresholdLevels};

    fn matrix(rows: Vec<Vec<(usize, f64)>>) -> TransitionMatrix {
        let states = (0..rows.len() as u32)
            .map(|l| ChainState::new(StateKind::Off, l))
            .collect();
        let levels = ThresholdLevels {
            v_min: 0,
            v_sl: 1,
            v_tx: 1,
            v_rx1: 1,
            v_rx2: 1,
            v_max: 2,
        };
        TransitionMatrix { levels, states, rows }
    }

    fn off(l: u32) -> ChainState {
        ChainState::new(StateKind::Off, l)
    }

    #[test]
    fn swap_chain_is_uniform() {
        let p = matrix(vec![vec![(1, 1.0)], vec![(0, 1.0)]]);
        let s = stationary_distribution(&p, off(0), &SolverOptions::default()).unwrap();
        assert!((s.pi[0] - 0.5).abs() < 1e-12 && (s.pi[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn absorbing_state() {
        let p = matrix(vec![vec![(1, 1.0)], vec![(1, 1.0)]]);
        let s = stationary_distribution(&p, off(0), &SolverOptions::default()).unwrap();
        assert_eq!(s.pi, vec![0.0, 1.0]);
        assert_eq!(recurrent_states(&p), vec![false, true]);
    }

    #[test]
    fn transient_tail_feeds_a_cycle() {
        let p = matrix(vec![
            vec![(1, 1.0)],
            vec![(2, 1.0)],
            vec![(3, 1.0)],
            vec![(4, 1.0)],
            vec![(2, 1.0)],
        ]);
        let s = stationary_distribution(&p, off(0), &SolverOptions::default()).unwrap();
        for (i, v) in s.pi.iter().enumerate() {
            let want = if i >= 2 { 1.0 / 3.0 } else { 0.0 };
            assert!((v - want).abs() < 1e-10, "{i}: {v}");
        }
        assert!(s.residual < 1e-10);
    }

    #[test]
    fn iteration_cap_reports_residual() {
        let p = matrix(vec![vec![(1, 1.0)], vec![(2, 1.0)], vec![(0, 1.0)]]);
        let opts = SolverOptions {
            max_iterations: 3,
            ..SolverOptions::default()
        };
        match stationary_distribution(&p, off(0), &opts) {
            Err(MarkovError::NonConvergence { iterations, residual }) => {
                assert_eq!(iterations, 3);
                assert!(residual > 0.0);
            }
            other => panic!("{other:?}"),
        }
    }
}
