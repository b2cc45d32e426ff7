//! Dense working representation shared by the association solvers and the
//! scenario driver. A `Working` owns a mutable copy of one instance
//! (users sorted by id, per-user rate rows, derived weights) plus the
//! current association; solver runs mutate it in place.
//!
//! Determinism rules baked in here: users are always scanned in ascending
//! id order, stations in ascending index order, and all comparisons are
//! strict, so the lowest user id / lowest station id wins every tie.

use crate::error::{Error, Result};
use crate::model::{Allocation, Association, NetworkState, StationId, UserId};
use crate::solvers::SolverParams;

pub(crate) const UNASSOC: usize = usize::MAX;

/// Guard for exhaustive enumeration: |B|^|U| may not exceed this.
pub const ENUMERATION_GUARD: f64 = 1e7;

pub fn enumeration_guard(num_stations: usize, num_users: usize) -> Result<()> {
    let candidates = (num_stations.max(1) as f64).powi(num_users as i32);
    if candidates > ENUMERATION_GUARD {
        return Err(Error::EnumerationGuard { candidates, guard: ENUMERATION_GUARD });
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub(crate) struct Working {
    pub ids: Vec<UserId>,
    pub weight: Vec<f64>,
    pub rate: Vec<Vec<f64>>,
    pub op_of: Vec<usize>,
    pub shares: Vec<f64>,
    pub num_stations: usize,
    /// Station index per user; UNASSOC when not placed yet.
    pub assoc: Vec<usize>,
    /// Sum of weights per station for the current association.
    pub loads: Vec<f64>,
}

/// Raw outcome of one engine run; wrapped into a `SolverReport` above.
#[derive(Clone, Debug, Default)]
pub(crate) struct EngineOutcome {
    /// W at the baseline and after every association change.
    pub utilities: Vec<f64>,
    /// Selected gain ratio per association change.
    pub gains: Vec<f64>,
    pub reassociations: usize,
    pub converged: bool,
}

fn xlnx(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln()
    } else {
        0.0
    }
}

impl Working {
    pub fn empty(shares: Vec<f64>, num_stations: usize) -> Self {
        Working {
            ids: Vec::new(),
            weight: Vec::new(),
            rate: Vec::new(),
            op_of: Vec::new(),
            shares,
            num_stations,
            assoc: Vec::new(),
            loads: vec![0.0; num_stations],
        }
    }

    pub fn from_state(state: &NetworkState, x0: Option<&Association>) -> Result<Self> {
        let mut w = Working::empty(
            state.operators().iter().map(|o| o.share).collect(),
            state.num_stations(),
        );
        for user in state.users() {
            w.ids.push(user.id);
            w.weight.push(user.weight);
            w.rate.push(state.rates().row(user.id).expect("state consistent").to_vec());
            w.op_of.push(user.operator.0 as usize);
            let station = match x0.and_then(|x| x.station_of(user.id)) {
                Some(b) => {
                    let bi = b.0 as usize;
                    if bi >= w.num_stations {
                        return Err(Error::UnknownStation(b));
                    }
                    if state.rate(user.id, b) <= 0.0 {
                        return Err(Error::InvalidInstance(format!(
                            "user {} started at station {} with zero rate",
                            user.id, b
                        )));
                    }
                    bi
                }
                None => UNASSOC,
            };
            w.assoc.push(station);
        }
        w.rebuild_loads();
        Ok(w)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn index_of(&self, id: UserId) -> Option<usize> {
        self.ids.binary_search(&id).ok()
    }

    pub fn rebuild_loads(&mut self) {
        self.loads.iter_mut().for_each(|l| *l = 0.0);
        for i in 0..self.ids.len() {
            let b = self.assoc[i];
            if b != UNASSOC {
                self.loads[b] += self.weight[i];
            }
        }
    }

    fn recompute_weights_of(&mut self, op: usize) {
        let count = self.op_of.iter().filter(|&&o| o == op).count();
        if count == 0 {
            return;
        }
        let w = self.shares[op] / count as f64;
        for i in 0..self.ids.len() {
            if self.op_of[i] == op {
                self.weight[i] = w;
            }
        }
    }

    /// Inserts an unassociated user, rederiving her operator's weights.
    pub fn add_user(&mut self, id: UserId, op: usize, rates: Vec<f64>) -> Result<usize> {
        assert_eq!(rates.len(), self.num_stations);
        if op >= self.shares.len() {
            return Err(Error::UnknownOperator(crate::model::OperatorId(op as u32)));
        }
        if !rates.iter().any(|c| *c > 0.0) {
            return Err(Error::Infeasible(format!("user {id} has no reachable station")));
        }
        let idx = match self.ids.binary_search(&id) {
            Ok(_) => return Err(Error::InvalidInstance(format!("duplicate user {id}"))),
            Err(i) => i,
        };
        self.ids.insert(idx, id);
        self.weight.insert(idx, 0.0);
        self.rate.insert(idx, rates);
        self.op_of.insert(idx, op);
        self.assoc.insert(idx, UNASSOC);
        self.recompute_weights_of(op);
        self.rebuild_loads();
        Ok(idx)
    }

    /// Drops a user; the rest of her operator's users regain weight.
    pub fn remove_user(&mut self, idx: usize) {
        let op = self.op_of[idx];
        self.ids.remove(idx);
        self.weight.remove(idx);
        self.rate.remove(idx);
        self.op_of.remove(idx);
        self.assoc.remove(idx);
        self.recompute_weights_of(op);
        self.rebuild_loads();
    }

    pub fn set_row(&mut self, idx: usize, rates: Vec<f64>) {
        assert_eq!(rates.len(), self.num_stations);
        self.rate[idx] = rates;
    }

    pub fn users_at(&self, station: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.assoc[i] == station).collect()
    }

    pub fn current_rate(&self, idx: usize) -> f64 {
        let b = self.assoc[idx];
        debug_assert!(b != UNASSOC);
        self.weight[idx] * self.rate[idx][b] / self.loads[b]
    }

    /// Rate the user would see after moving to `b`, accounting for her own
    /// weight landing on the destination load.
    pub fn rate_if_moved(&self, idx: usize, b: usize) -> f64 {
        if b == self.assoc[idx] {
            return self.current_rate(idx);
        }
        self.weight[idx] * self.rate[idx][b] / (self.loads[b] + self.weight[idx])
    }

    /// Best unilateral move for one user: (station, rate-gain ratio), ties
    /// broken toward the lowest station index. None if no alternative with
    /// positive rate exists.
    pub fn best_gain(&self, idx: usize) -> Option<(usize, f64)> {
        let cur = self.assoc[idx];
        debug_assert!(cur != UNASSOC);
        let r_cur = self.current_rate(idx);
        let mut best: Option<(usize, f64)> = None;
        for b in 0..self.num_stations {
            if b == cur || self.rate[idx][b] <= 0.0 {
                continue;
            }
            let ratio = self.rate_if_moved(idx, b) / r_cur;
            if best.map_or(true, |(_, r)| ratio > r) {
                best = Some((b, ratio));
            }
        }
        best
    }

    pub fn apply_move(&mut self, idx: usize, b: usize) {
        let from = self.assoc[idx];
        let w = self.weight[idx];
        if from != UNASSOC {
            self.loads[from] -= w;
        }
        self.loads[b] += w;
        self.assoc[idx] = b;
    }

    /// Greedy placement of a not-yet-associated user: the station giving
    /// her the largest post-join rate, given current loads.
    pub fn online_insert(&mut self, idx: usize) -> Result<usize> {
        debug_assert_eq!(self.assoc[idx], UNASSOC);
        let w = self.weight[idx];
        let mut best: Option<(usize, f64)> = None;
        for b in 0..self.num_stations {
            let c = self.rate[idx][b];
            if c <= 0.0 {
                continue;
            }
            let r = w * c / (self.loads[b] + w);
            if best.map_or(true, |(_, br)| r > br) {
                best = Some((b, r));
            }
        }
        let (b, _) =
            best.ok_or_else(|| Error::Infeasible(format!("user {} has no reachable station", self.ids[idx])))?;
        self.apply_move(idx, b);
        Ok(b)
    }

    /// W = sum_u w_u ln(w_u c / l_b) over the current association, computed
    /// from scratch (no incremental drift). -inf when some user sits on a
    /// zero-rate station.
    pub fn utility(&self) -> f64 {
        let mut loads = vec![0.0; self.num_stations];
        for i in 0..self.len() {
            debug_assert!(self.assoc[i] != UNASSOC, "utility of a partial association");
            loads[self.assoc[i]] += self.weight[i];
        }
        let mut user_term = 0.0;
        for i in 0..self.len() {
            let c = self.rate[i][self.assoc[i]];
            if c <= 0.0 {
                return f64::NEG_INFINITY;
            }
            let w = self.weight[i];
            user_term += w * (w * c).ln();
        }
        let load_term: f64 = loads.iter().map(|&l| xlnx(l)).sum();
        user_term - load_term
    }

    /// Utility change if `idx` moved to `b`, relative to the current
    /// configuration. Cheap delta form used only to rank candidate moves.
    pub fn utility_delta_if_moved(&self, idx: usize, b: usize) -> f64 {
        let from = self.assoc[idx];
        if b == from {
            return 0.0;
        }
        let w = self.weight[idx];
        let c_old = self.rate[idx][from];
        let c_new = self.rate[idx][b];
        if c_new <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let rate_term = if c_old > 0.0 {
            w * (c_new.ln() - c_old.ln())
        } else {
            f64::INFINITY
        };
        let lf = self.loads[from];
        let lt = self.loads[b];
        rate_term - (xlnx(lf - w) - xlnx(lf)) - (xlnx(lt + w) - xlnx(lt))
    }

    pub fn association(&self) -> Association {
        Association::from_pairs(
            (0..self.len())
                .filter(|&i| self.assoc[i] != UNASSOC)
                .map(|i| (self.ids[i], StationId(self.assoc[i] as u32))),
        )
    }

    /// The weighted proportionally fair split f_ub = w_u / l_b for the
    /// current association.
    pub fn mora_allocation(&self) -> Allocation {
        let mut loads = vec![0.0; self.num_stations];
        for i in 0..self.len() {
            if self.assoc[i] != UNASSOC {
                loads[self.assoc[i]] += self.weight[i];
            }
        }
        Allocation::from_pairs((0..self.len()).filter(|&i| self.assoc[i] != UNASSOC).map(|i| {
            let b = self.assoc[i];
            (self.ids[i], StationId(b as u32), self.weight[i] / loads[b])
        }))
    }

    /// Per-user allocated rates under f^M, ascending by user id.
    pub fn user_rates(&self) -> Vec<(UserId, f64)> {
        (0..self.len()).map(|i| (self.ids[i], self.current_rate(i))).collect()
    }
}

/// Places every unassociated user greedily, in ascending id order. This is
/// the pure online policy (and the initialization of the greedy solvers).
pub(crate) fn online_init(w: &mut Working) -> Result<()> {
    for i in 0..w.len() {
        if w.assoc[i] == UNASSOC {
            w.online_insert(i)?;
        }
    }
    Ok(())
}

/// Best-response sweeps in fixed user order until a full sweep triggers no
/// move. Each move is one iteration; the cap bounds total moves.
pub(crate) fn run_distributed_greedy(w: &mut Working, params: &SolverParams) -> Result<EngineOutcome> {
    online_init(w)?;
    let max_moves = params.max_iterations.unwrap_or(100 * w.len().max(1));
    let threshold = 1.0 + params.epsilon_h;
    let mut out = EngineOutcome { utilities: vec![w.utility()], ..Default::default() };
    'sweeps: loop {
        let mut moved = false;
        for i in 0..w.len() {
            if let Some((b, ratio)) = w.best_gain(i) {
                if ratio > threshold {
                    if out.reassociations >= max_moves {
                        out.converged = false;
                        break 'sweeps;
                    }
                    w.apply_move(i, b);
                    out.reassociations += 1;
                    out.utilities.push(w.utility());
                    out.gains.push(ratio);
                    moved = true;
                }
            }
        }
        if !moved {
            out.converged = true;
            break;
        }
    }
    Ok(out)
}

/// Moves, at each iteration, the single user with the globally largest
/// post-move rate gain. Ties break to the lowest user id, then station.
pub(crate) fn run_greedy_largest_gain(w: &mut Working, params: &SolverParams) -> Result<EngineOutcome> {
    online_init(w)?;
    let max_moves = params.max_iterations.unwrap_or(100 * w.len().max(1));
    let threshold = 1.0 + params.epsilon_h;
    let mut out = EngineOutcome { utilities: vec![w.utility()], ..Default::default() };
    loop {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..w.len() {
            if let Some((b, ratio)) = w.best_gain(i) {
                if best.map_or(true, |(_, _, r)| ratio > r) {
                    best = Some((i, b, ratio));
                }
            }
        }
        match best {
            Some((i, b, ratio)) if ratio > threshold => {
                if out.reassociations >= max_moves {
                    out.converged = false;
                    break;
                }
                w.apply_move(i, b);
                out.reassociations += 1;
                out.utilities.push(w.utility());
                out.gains.push(ratio);
            }
            _ => {
                out.converged = true;
                break;
            }
        }
    }
    Ok(out)
}

/// One bounded local step: the largest rate-gain move among `candidates`
/// (any destination station), applied if it beats the hysteresis threshold.
/// Returns (mover, origin, destination).
fn largest_gain_step(
    w: &mut Working,
    candidates: &[usize],
    threshold: f64,
    out: &mut EngineOutcome,
) -> Option<(usize, usize, usize)> {
    let mut best: Option<(usize, usize, f64)> = None;
    for &i in candidates {
        if let Some((b, ratio)) = w.best_gain(i) {
            if best.map_or(true, |(_, _, r)| ratio > r) {
                best = Some((i, b, ratio));
            }
        }
    }
    match best {
        Some((i, b, ratio)) if ratio > threshold => {
            let from = w.assoc[i];
            w.apply_move(i, b);
            out.reassociations += 1;
            out.utilities.push(w.utility());
            out.gains.push(ratio);
            Some((i, from, b))
        }
        _ => None,
    }
}

/// Final bounded step: among the candidates, the move that most improves
/// the network utility, applied only if it strictly improves it.
fn utility_step(w: &mut Working, candidates: &[usize], out: &mut EngineOutcome) {
    let mut best: Option<(usize, usize, f64)> = None;
    for &i in candidates {
        let cur = w.assoc[i];
        for b in 0..w.num_stations {
            if b == cur || w.rate[i][b] <= 0.0 {
                continue;
            }
            let delta = w.utility_delta_if_moved(i, b);
            if best.map_or(true, |(_, _, d)| delta > d) {
                best = Some((i, b, delta));
            }
        }
    }
    if let Some((i, b, delta)) = best {
        if delta > 0.0 {
            let before = *out.utilities.last().expect("baseline recorded");
            w.apply_move(i, b);
            out.reassociations += 1;
            let after = w.utility();
            out.utilities.push(after);
            out.gains.push(if before.is_finite() { after - before } else { f64::INFINITY });
        }
    }
}

fn sorted_union(a: Vec<usize>, b: Vec<usize>) -> Vec<usize> {
    let mut v = a;
    v.extend(b);
    v.sort_unstable();
    v.dedup();
    v
}

/// The two stations carrying the highest weight loads (ties toward the
/// lower index); candidate pool for departure rebalancing.
fn two_highest_load_stations(w: &Working) -> (usize, Option<usize>) {
    let mut order: Vec<usize> = (0..w.num_stations).collect();
    order.sort_by(|&a, &b| {
        w.loads[b].partial_cmp(&w.loads[a]).unwrap().then(a.cmp(&b))
    });
    (order[0], order.get(1).copied())
}

/// Bounded rebalancing loop shared by the join/leave/move entry points:
/// up to m-1 largest-gain moves restricted to the users of the previous
/// move's two stations, then one utility-maximizing move. Any step without
/// an improving candidate stops the whole adjustment.
fn local_rebalance_loop(
    w: &mut Working,
    mut current: usize,
    mut previous: usize,
    params: &SolverParams,
    out: &mut EngineOutcome,
) {
    let threshold = 1.0 + params.epsilon_h;
    for _ in 1..params.m {
        let candidates = sorted_union(w.users_at(current), w.users_at(previous));
        match largest_gain_step(w, &candidates, threshold, out) {
            Some((_, from, to)) => {
                current = to;
                previous = from;
            }
            None => return,
        }
    }
    let candidates = sorted_union(w.users_at(current), w.users_at(previous));
    utility_step(w, &candidates, out);
}

/// Joining side of the adjustment: the first rebalancing candidate pool is
/// the set of users at the station the newcomer picked, then the bounded
/// local loop takes over.
fn join_side(w: &mut Working, joined_station: usize, params: &SolverParams, out: &mut EngineOutcome) {
    if params.m == 0 {
        return;
    }
    let threshold = 1.0 + params.epsilon_h;
    let candidates = w.users_at(joined_station);
    if let Some((_, _, to)) = largest_gain_step(w, &candidates, threshold, out) {
        local_rebalance_loop(w, to, joined_station, params, out);
    }
}

/// Departure side of the adjustment: the first candidate pool is the users
/// of the two highest-load stations, who may now profit from the freed
/// capacity; afterwards the bounded local loop takes over.
fn leave_side(w: &mut Working, params: &SolverParams, out: &mut EngineOutcome) {
    if params.m == 0 || w.len() == 0 {
        return;
    }
    let threshold = 1.0 + params.epsilon_h;
    let (s1, s2) = two_highest_load_stations(w);
    let mut candidates = w.users_at(s1);
    if let Some(s2) = s2 {
        candidates = sorted_union(candidates, w.users_at(s2));
    }
    if let Some((_, from, to)) = largest_gain_step(w, &candidates, threshold, out) {
        local_rebalance_loop(w, to, from, params, out);
    }
}

/// Handles a user joining: greedy placement, then the joining-side
/// rebalancing rooted at her station.
pub(crate) fn gllg_join_adjust(w: &mut Working, v_idx: usize, params: &SolverParams) -> Result<EngineOutcome> {
    let b_joined = w.online_insert(v_idx)?;
    let mut out = EngineOutcome {
        utilities: vec![w.utility()],
        converged: true,
        ..Default::default()
    };
    join_side(w, b_joined, params, &mut out);
    Ok(out)
}

/// Handles a departure (the user is already removed from `w`).
pub(crate) fn gllg_leave_adjust(w: &mut Working, params: &SolverParams) -> Result<EngineOutcome> {
    let mut out = EngineOutcome {
        utilities: vec![w.utility()],
        converged: true,
        ..Default::default()
    };
    leave_side(w, params, &mut out);
    Ok(out)
}

/// Handles a rate change for one user (her row is already updated): if some
/// station now beats her current rate, she moves, then the old station runs
/// the departure logic and the new one the joining logic.
pub(crate) fn gllg_move_adjust(w: &mut Working, v_idx: usize, params: &SolverParams) -> Result<EngineOutcome> {
    let mut out = EngineOutcome {
        utilities: vec![w.utility()],
        converged: true,
        ..Default::default()
    };
    let threshold = 1.0 + params.epsilon_h;
    let improving = w.best_gain(v_idx).filter(|(_, ratio)| *ratio > threshold);
    let (new_station, ratio) = match improving {
        Some(v) => v,
        None => return Ok(out),
    };
    w.apply_move(v_idx, new_station);
    out.reassociations += 1;
    out.utilities.push(w.utility());
    out.gains.push(ratio);

    leave_side(w, params, &mut out);
    join_side(w, w.assoc[v_idx], params, &mut out);
    Ok(out)
}

/// Exhaustive maximization of W over all associations, inner allocation by
/// the closed-form split. Enumeration is lexicographic over users in id
/// order and candidate stations ascending, and only strict improvements
/// replace the incumbent, so the first optimum in that order wins.
pub(crate) fn brute_force(w: &Working) -> Result<(Vec<usize>, f64)> {
    enumeration_guard(w.num_stations, w.len())?;
    let n = w.len();
    if n == 0 {
        return Ok((Vec::new(), 0.0));
    }
    let candidates: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..w.num_stations).filter(|&b| w.rate[i][b] > 0.0).collect())
        .collect();
    // w_u ln(w_u c_ub), precomputed per feasible pair
    let terms: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..w.num_stations)
                .map(|b| {
                    if w.rate[i][b] > 0.0 {
                        w.weight[i] * (w.weight[i] * w.rate[i][b]).ln()
                    } else {
                        f64::NEG_INFINITY
                    }
                })
                .collect()
        })
        .collect();

    struct Dfs<'a> {
        w: &'a Working,
        candidates: &'a [Vec<usize>],
        terms: &'a [Vec<f64>],
        assign: Vec<usize>,
        loads: Vec<f64>,
        best: Option<(f64, Vec<usize>)>,
    }
    impl Dfs<'_> {
        fn run(&mut self, u: usize) {
            if u == self.assign.len() {
                self.evaluate();
                return;
            }
            for ci in 0..self.candidates[u].len() {
                self.assign[u] = self.candidates[u][ci];
                self.run(u + 1);
            }
        }
        fn evaluate(&mut self) {
            // loads recomputed exactly per leaf; no incremental drift
            self.loads.iter_mut().for_each(|l| *l = 0.0);
            let mut user_term = 0.0;
            for (u, &b) in self.assign.iter().enumerate() {
                self.loads[b] += self.w.weight[u];
                user_term += self.terms[u][b];
            }
            let load_term: f64 = self.loads.iter().map(|&l| xlnx(l)).sum();
            let utility = user_term - load_term;
            if self.best.as_ref().map_or(true, |(w, _)| utility > *w) {
                self.best = Some((utility, self.assign.clone()));
            }
        }
    }

    for (i, c) in candidates.iter().enumerate() {
        if c.is_empty() {
            return Err(Error::Infeasible(format!(
                "user {} has no reachable station",
                w.ids[i]
            )));
        }
    }
    let mut dfs = Dfs {
        w,
        candidates: &candidates,
        terms: &terms,
        assign: vec![0; n],
        loads: vec![0.0; w.num_stations],
        best: None,
    };
    dfs.run(0);
    let (utility, assign) = dfs.best.expect("at least one feasible association");
    Ok((assign, utility))
}
