//! Association optimizers: the exact brute-force reference for small
//! instances, best-response dynamics (Distributed Greedy), its largest-gain
//! variant, and the budgeted semi-online adjustment run on join / leave /
//! move events, plus the SINR-style baseline and theorem fixtures.

mod engine;
pub mod fixtures;

pub use engine::{enumeration_guard, ENUMERATION_GUARD};
pub(crate) use engine::{
    brute_force, gllg_join_adjust, gllg_leave_adjust, gllg_move_adjust, run_distributed_greedy,
    run_greedy_largest_gain, EngineOutcome, Working, UNASSOC,
};

use crate::error::{Error, Result};
use crate::model::{Allocation, Association, NetworkState, StationId, UserId};

/// Tuning knobs shared by the iterative solvers.
#[derive(Clone, Debug, PartialEq)]
pub struct SolverParams {
    /// Reassociation budget of the semi-online adjustment.
    pub m: usize,
    /// Cap on total moves for the sweep-based solvers; None means 100 * |U|.
    pub max_iterations: Option<usize>,
    /// Hysteresis: a user only moves for a rate gain above 1 + epsilon_h.
    pub epsilon_h: f64,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams { m: 3, max_iterations: None, epsilon_h: 0.0 }
    }
}

impl SolverParams {
    pub fn with_budget(m: usize) -> Self {
        SolverParams { m, ..Default::default() }
    }

    fn validate(&self) -> Result<()> {
        if let Some(0) = self.max_iterations {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        if !(self.epsilon_h >= 0.0) {
            return Err(Error::Config("epsilon_h must be non-negative".into()));
        }
        Ok(())
    }
}

/// Outcome of one solver run. The utility trace starts at the first fully
/// associated configuration and gains one entry per association change, so
/// `utility_trace.len() == iterations + 1`. Every change after the baseline
/// moves an already-associated user, hence `reassociation_count ==
/// iterations`; a joining user's initial placement is part of the baseline.
#[derive(Clone, Debug, PartialEq)]
pub struct SolverReport {
    pub final_association: Association,
    pub final_allocation: Allocation,
    pub utility_trace: Vec<f64>,
    /// Selected gain ratio per change, aligned with the trace steps.
    pub gain_trace: Vec<f64>,
    pub reassociation_count: usize,
    pub converged: bool,
    pub iterations: usize,
}

fn report_from(w: &Working, out: engine::EngineOutcome) -> SolverReport {
    let iterations = out.utilities.len() - 1;
    debug_assert_eq!(iterations, out.reassociations);
    debug_assert_eq!(out.gains.len(), iterations);
    SolverReport {
        final_association: w.association(),
        final_allocation: w.mora_allocation(),
        utility_trace: out.utilities,
        gain_trace: out.gains,
        reassociation_count: out.reassociations,
        converged: out.converged,
        iterations,
    }
}

/// Global optimum of the weighted log-utility objective over all
/// associations (inner allocation closed-form), for instances within the
/// enumeration guard. Ties break to the lexicographically first
/// association in (user id, station index) order.
pub fn brute_force_mora(state: &NetworkState) -> Result<(Association, Allocation, f64)> {
    let mut w = Working::from_state(state, None)?;
    let (assign, utility) = engine::brute_force(&w)?;
    for (i, b) in assign.iter().enumerate() {
        w.assoc[i] = *b;
    }
    w.rebuild_loads();
    Ok((w.association(), w.mora_allocation(), utility))
}

/// Best-response sweeps in ascending user-id order. Users missing from
/// `x0` (or all of them, when `x0` is None) are first inserted greedily in
/// id order. Non-convergence within the move cap is reported, not fatal.
pub fn distributed_greedy(
    state: &NetworkState,
    x0: Option<&Association>,
    params: &SolverParams,
) -> Result<SolverReport> {
    params.validate()?;
    let mut w = Working::from_state(state, x0)?;
    let out = engine::run_distributed_greedy(&mut w, params)?;
    Ok(report_from(&w, out))
}

/// Like `distributed_greedy`, but each iteration moves the single user
/// with the globally largest rate-gain ratio.
pub fn greedy_largest_gain(
    state: &NetworkState,
    x0: Option<&Association>,
    params: &SolverParams,
) -> Result<SolverReport> {
    params.validate()?;
    let mut w = Working::from_state(state, x0)?;
    let out = engine::run_greedy_largest_gain(&mut w, params)?;
    Ok(report_from(&w, out))
}

/// Semi-online handling of a joining user: `state` already contains `v`,
/// `x` covers everyone else. At most m + 1 existing users are reassociated.
pub fn gllg_join(
    state: &NetworkState,
    x: &Association,
    v: UserId,
    params: &SolverParams,
) -> Result<SolverReport> {
    params.validate()?;
    state.user(v)?;
    if x.station_of(v).is_some() {
        return Err(Error::InvalidInstance(format!("joining user {v} is already associated")));
    }
    let mut w = Working::from_state(state, Some(x))?;
    for i in 0..w.len() {
        if w.ids[i] != v && w.assoc[i] == engine::UNASSOC {
            return Err(Error::Unassociated(w.ids[i]));
        }
    }
    let v_idx = w.index_of(v).expect("v is in the state");
    let out = engine::gllg_join_adjust(&mut w, v_idx, params)?;
    Ok(report_from(&w, out))
}

/// Semi-online handling of a departure: removes `v` and rebalances. The
/// returned association and trace describe the remaining users, whose
/// weights are rederived for the reduced population.
pub fn gllg_leave(
    state: &NetworkState,
    x: &Association,
    v: UserId,
    params: &SolverParams,
) -> Result<SolverReport> {
    params.validate()?;
    state.user(v)?;
    x.station_of(v).ok_or(Error::Unassociated(v))?;
    let mut w = Working::from_state(state, Some(x))?;
    let v_idx = w.index_of(v).expect("v is in the state");
    w.remove_user(v_idx);
    let out = engine::gllg_leave_adjust(&mut w, params)?;
    Ok(report_from(&w, out))
}

/// Semi-online handling of a rate change: `new_rates` replaces `v`'s row.
/// If no station now offers a gain above the hysteresis threshold the
/// association is left untouched; otherwise she moves and the departure /
/// joining adjustments run at her old and new stations.
pub fn gllg_move(
    state: &NetworkState,
    x: &Association,
    v: UserId,
    new_rates: &[f64],
    params: &SolverParams,
) -> Result<SolverReport> {
    params.validate()?;
    state.user(v)?;
    x.station_of(v).ok_or(Error::Unassociated(v))?;
    if new_rates.len() != state.num_stations() {
        return Err(Error::InvalidInstance(format!(
            "rate row for {v} has {} entries, expected {}",
            new_rates.len(),
            state.num_stations()
        )));
    }
    if !new_rates.iter().any(|c| *c > 0.0) {
        return Err(Error::Infeasible(format!("user {v} has no reachable station")));
    }
    let mut w = Working::from_state(state, Some(x))?;
    let v_idx = w.index_of(v).expect("v is in the state");
    w.set_row(v_idx, new_rates.to_vec());
    let out = engine::gllg_move_adjust(&mut w, v_idx, params)?;
    Ok(report_from(&w, out))
}

/// The max-rate baseline: every user independently picks the station with
/// the best achievable rate (the SINR order), ties to the lowest index.
pub fn sinr_association(state: &NetworkState) -> Association {
    let mut x = Association::new();
    for user in state.users() {
        let row = state.rates().row(user.id).expect("state consistent");
        let mut best: Option<(usize, f64)> = None;
        for (b, &c) in row.iter().enumerate() {
            if c <= 0.0 {
                continue;
            }
            if best.map_or(true, |(_, bc)| c > bc) {
                best = Some((b, c));
            }
        }
        if let Some((b, _)) = best {
            x.set(user.id, StationId(b as u32));
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{NetworkState, OperatorId, RateMatrix, UserSpec};
    use crate::testing::{random_association, random_instance};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn uniform_state(num_users: usize, num_stations: usize, rate: f64) -> NetworkState {
        let mut rates = RateMatrix::new(num_stations);
        for i in 0..num_users {
            rates.set_row(UserId(i as u32), vec![rate; num_stations]);
        }
        let users = (0..num_users)
            .map(|i| UserSpec::new(UserId(i as u32), OperatorId(0)))
            .collect();
        NetworkState::new(&[1.0], users, rates).unwrap()
    }

    #[test]
    fn brute_force_prefers_distinct_best_stations() {
        // each user's best station is distinct -> everyone gets her own
        let mut rates = RateMatrix::new(2);
        rates.set_row(UserId(0), vec![9e6, 1e6]);
        rates.set_row(UserId(1), vec![1e6, 9e6]);
        let users = vec![
            UserSpec::new(UserId(0), OperatorId(0)),
            UserSpec::new(UserId(1), OperatorId(0)),
        ];
        let state = NetworkState::new(&[1.0], users, rates).unwrap();
        let (x, f, _) = brute_force_mora(&state).unwrap();
        assert_eq!(x.station_of(UserId(0)), Some(StationId(0)));
        assert_eq!(x.station_of(UserId(1)), Some(StationId(1)));
        assert!((f.fraction(UserId(0), StationId(0)) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn brute_force_spreads_equal_users_over_stations() {
        // |B| equal users at unit rate: optimum is one per station, W = 0
        for b in [2usize, 3, 4] {
            let state = uniform_state(b, b, 1.0);
            let (x, _, w) = brute_force_mora(&state).unwrap();
            assert!(w.abs() < 1e-12, "W = {w}");
            let mut seen = std::collections::BTreeSet::new();
            for (_, st) in x.iter() {
                assert!(seen.insert(st), "station reused");
            }
        }
    }

    #[test]
    fn brute_force_guard_triggers() {
        let state = uniform_state(30, 4, 1.0);
        assert!(matches!(
            brute_force_mora(&state),
            Err(Error::EnumerationGuard { .. })
        ));
    }

    #[test]
    fn distributed_greedy_single_station_converges_without_moves() {
        let state = uniform_state(5, 1, 2e6);
        let report = distributed_greedy(&state, None, &SolverParams::default()).unwrap();
        assert!(report.converged);
        assert_eq!(report.iterations, 0);
        assert_eq!(report.reassociation_count, 0);
        assert_eq!(report.utility_trace.len(), 1);
    }

    #[test]
    fn distributed_greedy_reaches_equilibrium() {
        // Oracle: exhaustive per-user scan confirms no unilateral move
        // improves the mover's own rate.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let state = random_instance(&mut rng, 8, 3, 3);
            let report = distributed_greedy(&state, None, &SolverParams::default()).unwrap();
            if !report.converged {
                continue;
            }
            let w = Working::from_state(&state, Some(&report.final_association)).unwrap();
            for i in 0..w.len() {
                if let Some((_, ratio)) = w.best_gain(i) {
                    assert!(ratio <= 1.0 + 1e-12, "user can still gain {ratio}");
                }
            }
        }
    }

    #[test]
    fn distributed_greedy_within_one_nat_of_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..100 {
            let state = random_instance(&mut rng, 8, 3, 2);
            let report = distributed_greedy(&state, None, &SolverParams::default()).unwrap();
            if !report.converged {
                continue;
            }
            let (_, _, w_opt) = brute_force_mora(&state).unwrap();
            let w_eq = *report.utility_trace.last().unwrap();
            assert!(w_eq >= w_opt - 1.0 - 1e-9, "equilibrium {w_eq} vs optimum {w_opt}");
            assert!(w_eq <= w_opt + 1e-9);
        }
    }

    #[test]
    fn glg_trace_strictly_increases_for_large_gains() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let state = random_instance(&mut rng, 8, 3, 2);
            let report = greedy_largest_gain(&state, None, &SolverParams::default()).unwrap();
            for (i, gain) in report.gain_trace.iter().enumerate() {
                if *gain >= std::f64::consts::E {
                    assert!(
                        report.utility_trace[i + 1] > report.utility_trace[i],
                        "move with gain {gain} did not raise W"
                    );
                }
            }
        }
    }

    #[test]
    fn report_shape_invariants_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let state = random_instance(&mut rng, 10, 4, 3);
            for solver in [distributed_greedy, greedy_largest_gain] {
                let report = solver(&state, None, &SolverParams::default()).unwrap();
                assert_eq!(report.utility_trace.len(), report.iterations + 1);
                assert!(report.reassociation_count <= report.iterations);
                report.final_association.validate(&state).unwrap();
                report
                    .final_allocation
                    .validate(&state, &report.final_association)
                    .unwrap();
            }
        }
    }

    #[test]
    fn solver_runs_are_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let state = random_instance(&mut rng, 10, 4, 3);
        let params = SolverParams::default();
        let a = greedy_largest_gain(&state, None, &params).unwrap();
        let b = greedy_largest_gain(&state, None, &params).unwrap();
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
    }

    #[test]
    fn warm_start_respected() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let state = random_instance(&mut rng, 6, 3, 2);
        let x0 = random_association(&mut rng, &state);
        let report = distributed_greedy(&state, Some(&x0), &SolverParams::default()).unwrap();
        assert!(report.converged);
        // utility never handed back worse than a feasible completion exists
        assert!(report.utility_trace.last().unwrap().is_finite());
    }

    #[test]
    fn gllg_join_empty_network_single_station() {
        let mut rates = RateMatrix::new(1);
        rates.set_row(UserId(0), vec![5e6]);
        let state = NetworkState::new(
            &[1.0],
            vec![UserSpec::new(UserId(0), OperatorId(0))],
            rates,
        )
        .unwrap();
        let x = Association::new();
        let report = gllg_join(&state, &x, UserId(0), &SolverParams::default()).unwrap();
        assert_eq!(report.reassociation_count, 0);
        assert_eq!(report.final_association.station_of(UserId(0)), Some(StationId(0)));
    }

    #[test]
    fn gllg_join_rebalances_crowded_station() {
        // two stations, two equal users on station 0, newcomer joins with
        // equal rates everywhere: one incumbent should end up on station 1.
        let mut rates = RateMatrix::new(2);
        for i in 0..3 {
            rates.set_row(UserId(i), vec![6e6, 6e6]);
        }
        let users = (0..3).map(|i| UserSpec::new(UserId(i), OperatorId(0))).collect();
        let state = NetworkState::new(&[1.0], users, rates).unwrap();
        let x = Association::from_pairs([
            (UserId(0), StationId(0)),
            (UserId(1), StationId(0)),
        ]);
        let report = gllg_join(&state, &x, UserId(2), &SolverParams::default()).unwrap();
        let counts = [0, 1].map(|b| {
            report
                .final_association
                .iter()
                .filter(|(_, st)| st.0 as usize == b)
                .count()
        });
        // 3 users over 2 stations: best split is 2/1 (checked by enumeration
        // of all post-join associations: any 2/1 split attains the optimum)
        assert_eq!(counts.iter().max(), Some(&2));
        assert_eq!(counts.iter().min(), Some(&1));
        assert!(report.reassociation_count >= 1);
    }

    #[test]
    fn gllg_leave_lone_user_empties_network() {
        let mut rates = RateMatrix::new(2);
        rates.set_row(UserId(0), vec![5e6, 1e6]);
        let state = NetworkState::new(
            &[1.0],
            vec![UserSpec::new(UserId(0), OperatorId(0))],
            rates,
        )
        .unwrap();
        let x = Association::from_pairs([(UserId(0), StationId(0))]);
        let report = gllg_leave(&state, &x, UserId(0), &SolverParams::default()).unwrap();
        assert!(report.final_association.is_empty());
        assert_eq!(report.reassociation_count, 0);
        assert_eq!(report.utility_trace, vec![0.0]);
    }

    #[test]
    fn gllg_leave_backfills_from_loaded_station() {
        // loads {3, 1}; the station-1 user leaves; someone from station 0
        // should migrate over (enumeration confirms 2/2 is optimal).
        let mut rates = RateMatrix::new(2);
        for i in 0..4 {
            rates.set_row(UserId(i), vec![6e6, 6e6]);
        }
        let users = (0..4).map(|i| UserSpec::new(UserId(i), OperatorId(0))).collect();
        let state = NetworkState::new(&[1.0], users, rates).unwrap();
        let x = Association::from_pairs([
            (UserId(0), StationId(0)),
            (UserId(1), StationId(0)),
            (UserId(2), StationId(0)),
            (UserId(3), StationId(1)),
        ]);
        let report = gllg_leave(&state, &x, UserId(3), &SolverParams::default()).unwrap();
        let at1 = report
            .final_association
            .iter()
            .filter(|(_, st)| *st == StationId(1))
            .count();
        assert_eq!(at1, 1, "one user should migrate to the emptied station");
    }

    #[test]
    fn gllg_move_noop_when_rates_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let state = random_instance(&mut rng, 6, 3, 2);
        let report0 = distributed_greedy(&state, None, &SolverParams::default()).unwrap();
        let x = report0.final_association.clone();
        let v = state.users().next().unwrap().id;
        let row = state.rates().row(v).unwrap().to_vec();
        let report = gllg_move(&state, &x, v, &row, &SolverParams::default()).unwrap();
        assert_eq!(report.final_association, x);
        assert_eq!(report.reassociation_count, 0);
    }

    #[test]
    fn gllg_move_follows_dominant_rate() {
        // second station empties out and v's rate there doubles past her
        // current throughput: she must move.
        let mut rates = RateMatrix::new(2);
        rates.set_row(UserId(0), vec![5e6, 1e5]);
        rates.set_row(UserId(1), vec![5e6, 1e5]);
        let users = (0..2).map(|i| UserSpec::new(UserId(i), OperatorId(0))).collect();
        let state = NetworkState::new(&[1.0], users, rates).unwrap();
        let x = Association::from_pairs([
            (UserId(0), StationId(0)),
            (UserId(1), StationId(0)),
        ]);
        let report = gllg_move(
            &state,
            &x,
            UserId(0),
            &[5e6, 20e6],
            &SolverParams::default(),
        )
        .unwrap();
        assert_eq!(report.final_association.station_of(UserId(0)), Some(StationId(1)));
    }

    #[test]
    fn gllg_budgets_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..200 {
            let state = random_instance(&mut rng, 10, 4, 3);
            let m = rng.random_range(0..5usize);
            let params = SolverParams::with_budget(m);
            let report0 = distributed_greedy(&state, None, &SolverParams::default()).unwrap();
            let x = report0.final_association;

            let users: Vec<UserId> = state.users().map(|u| u.id).collect();
            let v = users[rng.random_range(0..users.len())];

            // leave budget: <= m + 1
            let leave = gllg_leave(&state, &x, v, &params).unwrap();
            assert!(leave.reassociation_count <= m + 1);

            // join budget: <= m + 1 reassociations of pre-existing users
            let mut x_reduced = x.clone();
            x_reduced.remove(v);
            let join = gllg_join(&state, &x_reduced, v, &params).unwrap();
            assert!(join.reassociation_count <= m + 1);

            // move budget: <= 2(m+1) + 1 association changes in total
            let new_row: Vec<f64> = (0..state.num_stations())
                .map(|_| {
                    if rng.random_bool(0.2) {
                        0.0
                    } else {
                        rng.random_range(1e6..1e8)
                    }
                })
                .collect();
            if new_row.iter().any(|c| *c > 0.0) {
                let mv = gllg_move(&state, &x, v, &new_row, &params).unwrap();
                assert!(mv.iterations <= 2 * (m + 1) + 1);
            }
        }
    }

    #[test]
    fn sinr_association_picks_per_user_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        for _ in 0..50 {
            let state = random_instance(&mut rng, 10, 4, 3);
            let x = sinr_association(&state);
            for user in state.users() {
                let row = state.rates().row(user.id).unwrap();
                let picked = x.station_of(user.id).unwrap();
                // oracle: plain argmax with first-wins ties
                let mut best = 0;
                for (b, c) in row.iter().enumerate() {
                    if *c > row[best] {
                        best = b;
                    }
                }
                assert_eq!(picked.0 as usize, best);
            }
        }
    }

    #[test]
    fn sinr_association_tie_breaks_low() {
        let state = uniform_state(3, 2, 1e6);
        let x = sinr_association(&state);
        for (_, b) in x.iter() {
            assert_eq!(b, StationId(0));
        }
    }
}
