//! Closed-form per-station resource allocations for a fixed association:
//! the weighted proportionally fair split (each station divides itself in
//! proportion to its users' weights) and the static-slicing split (each
//! operator's fixed slice divided equally among its users at the station),
//! plus the per-operator static-slicing optimization.

use crate::error::{Error, Result};
use crate::model::{Allocation, Association, NetworkState, OperatorId, StationId};
use crate::solvers::{self, enumeration_guard, SolverParams};

/// Shared-system allocation for a fixed association:
/// f_ub = w_u / sum of weights at b. Per non-empty station the fractions
/// sum to exactly one; this is the unique maximizer of the network utility
/// over allocations for the given association.
pub fn mora_allocation(state: &NetworkState, x: &Association) -> Result<Allocation> {
    x.validate(state)?;
    let mut loads = vec![0.0; state.num_stations()];
    for user in state.users() {
        let b = x.station_of(user.id).expect("validated association is total");
        loads[b.0 as usize] += user.weight;
    }
    let mut f = Allocation::new();
    for user in state.users() {
        let b = x.station_of(user.id).unwrap();
        f.set(user.id, b, user.weight / loads[b.0 as usize]);
    }
    Ok(f)
}

/// Static-slicing allocation for a fixed association:
/// f_ub = s_o / (number of operator-o users at b). The slice fraction of
/// stations where the operator has no users stays unused; that is the
/// definition of the static baseline.
pub fn ss_allocation(state: &NetworkState, x: &Association) -> Result<Allocation> {
    x.validate(state)?;
    let num_ops = state.operators().len();
    let mut counts = vec![0usize; state.num_stations() * num_ops];
    for user in state.users() {
        let b = x.station_of(user.id).unwrap();
        counts[b.0 as usize * num_ops + user.operator.0 as usize] += 1;
    }
    let mut f = Allocation::new();
    for user in state.users() {
        let b = x.station_of(user.id).unwrap();
        let share = state.operator(user.operator)?.share;
        let n = counts[b.0 as usize * num_ops + user.operator.0 as usize];
        f.set(user.id, b, share / n as f64);
    }
    Ok(f)
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum SsMethod {
    /// Full enumeration of the operator's user associations (size-guarded).
    Exact,
    /// Best-response dynamics on the operator's slice.
    Greedy,
}

/// Optimizes one operator's user association under static slicing: the
/// operator owns a fixed fraction s_o of every station and splits it
/// equally among its users there. Returns the association restricted to
/// the operator's users and the matching slice allocation.
pub fn ss_optimize(
    state: &NetworkState,
    o: OperatorId,
    method: SsMethod,
) -> Result<(Association, Allocation)> {
    let op = state.operator(o)?;
    if op.user_ids.is_empty() {
        return Err(Error::IdleOperator(o));
    }
    let share = op.share;
    let user_ids: Vec<_> = op.user_ids.iter().copied().collect();

    let x = match method {
        SsMethod::Exact => {
            enumeration_guard(state.num_stations(), user_ids.len())?;
            exact_slice_association(state, &user_ids, share)?
        }
        SsMethod::Greedy => {
            // Distributed Greedy on the operator's own slice: a sub-instance
            // holding only this operator's users (normalized to share 1)
            // with rates scaled by the slice reproduces the slice rates
            // s_o * c_ub / n_ob exactly.
            let sub = slice_substate(state, o)?;
            let report = solvers::distributed_greedy(&sub, None, &SolverParams::default())?;
            report.final_association
        }
    };

    let mut counts = vec![0usize; state.num_stations()];
    for &u in &user_ids {
        counts[x.station_of(u).unwrap().0 as usize] += 1;
    }
    let mut f = Allocation::new();
    for &u in &user_ids {
        let b = x.station_of(u).unwrap();
        f.set(u, b, share / counts[b.0 as usize] as f64);
    }
    Ok((x, f))
}

/// The full static-slicing solution: every operator optimizes its own users
/// independently; associations and slice allocations are merged.
pub fn ss_solution(state: &NetworkState, method: SsMethod) -> Result<(Association, Allocation)> {
    let mut x = Association::new();
    for op in state.operators() {
        if op.user_ids.is_empty() {
            continue;
        }
        let (xo, _) = ss_optimize(state, op.id, method)?;
        for (u, b) in xo.iter() {
            x.set(u, b);
        }
    }
    let f = ss_allocation(state, &x)?;
    Ok((x, f))
}

/// Sub-instance seen by one operator under static slicing: only its users,
/// share renormalized to 1, rates scaled by the slice.
fn slice_substate(state: &NetworkState, o: OperatorId) -> Result<NetworkState> {
    let op = state.operator(o)?;
    let mut rates = crate::model::RateMatrix::new(state.num_stations());
    let mut users = Vec::new();
    for &u in &op.user_ids {
        let row: Vec<f64> = state
            .rates()
            .row(u)
            .expect("state is internally consistent")
            .iter()
            .map(|c| c * op.share)
            .collect();
        rates.set_row(u, row);
        let user = state.user(u)?;
        users.push(crate::model::UserSpec {
            id: u,
            operator: OperatorId(0),
            position: user.position,
        });
    }
    NetworkState::new(&[1.0], users, rates)
}

/// Exhaustive maximization of the operator utility over its users'
/// associations, with the slice split equally per station. Ties break to
/// the lexicographically first association.
fn exact_slice_association(
    state: &NetworkState,
    user_ids: &[crate::model::UserId],
    share: f64,
) -> Result<Association> {
    let num_stations = state.num_stations();
    let candidates: Vec<Vec<usize>> = user_ids
        .iter()
        .map(|&u| {
            (0..num_stations)
                .filter(|b| state.rate(u, StationId(*b as u32)) > 0.0)
                .collect()
        })
        .collect();
    let rates: Vec<Vec<f64>> = user_ids
        .iter()
        .map(|&u| state.rates().row(u).unwrap().to_vec())
        .collect();

    let n = user_ids.len();
    let mut assign = vec![0usize; n];
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut counts = vec![0usize; num_stations];

    // Depth-first enumeration in lexicographic order; strict improvement
    // keeps the first optimum.
    fn dfs(
        u: usize,
        n: usize,
        candidates: &[Vec<usize>],
        rates: &[Vec<f64>],
        share: f64,
        assign: &mut Vec<usize>,
        counts: &mut Vec<usize>,
        best: &mut Option<(f64, Vec<usize>)>,
    ) {
        if u == n {
            let mut utility = 0.0;
            for (i, &b) in assign.iter().enumerate() {
                utility += (share * rates[i][b] / counts[b] as f64).ln();
            }
            utility /= n as f64;
            if best.as_ref().map_or(true, |(w, _)| utility > *w) {
                *best = Some((utility, assign.clone()));
            }
            return;
        }
        for &b in &candidates[u] {
            assign[u] = b;
            counts[b] += 1;
            dfs(u + 1, n, candidates, rates, share, assign, counts, best);
            counts[b] -= 1;
        }
    }
    dfs(0, n, &candidates, &rates, share, &mut assign, &mut counts, &mut best);

    let (_, assignment) = best.ok_or_else(|| {
        Error::Infeasible("operator has a user with no reachable station".into())
    })?;
    Ok(Association::from_pairs(
        user_ids
            .iter()
            .zip(assignment)
            .map(|(&u, b)| (u, StationId(b as u32))),
    ))
}
