//! The optimization instance: operators holding network shares, their users,
//! base stations (sectors), the achievable-rate matrix, and the association /
//! allocation variables, together with the weighted log-utility objective.
//!
//! Rates are bits/s throughout; utilities are in nats (natural logarithm), so
//! the `log(e)` bounds of the association theorems are exactly 1.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::error::{Error, Result};

/// Shares must sum to one within this tolerance.
pub const SHARE_SUM_TOL: f64 = 1e-9;
/// Per-station allocation fractions must sum to at most 1 + this tolerance.
pub const ALLOC_SUM_TOL: f64 = 1e-9;

macro_rules! id_type {
    ($name:ident, $prefix:literal) => {
        #[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
        pub struct $name(pub u32);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }
    };
}

id_type!(UserId, "u");
id_type!(StationId, "b");
id_type!(OperatorId, "op");

/// A tenant holding a network share. Shares across all operators sum to 1.
#[derive(Clone, Debug)]
pub struct Operator {
    pub id: OperatorId,
    pub share: f64,
    pub user_ids: BTreeSet<UserId>,
}

/// A mobile user. The weight is the operator share split equally across the
/// operator's current users (s_o / |U_o|), fixed at snapshot construction.
#[derive(Clone, Debug)]
pub struct User {
    pub id: UserId,
    pub operator: OperatorId,
    pub weight: f64,
    pub position: Option<(f64, f64)>,
}

/// Input description of a user, before weights are derived.
#[derive(Clone, Debug)]
pub struct UserSpec {
    pub id: UserId,
    pub operator: OperatorId,
    pub position: Option<(f64, f64)>,
}

impl UserSpec {
    pub fn new(id: UserId, operator: OperatorId) -> Self {
        UserSpec { id, operator, position: None }
    }
}

/// Achievable rate c_ub (bits/s) per (user, station) pair, dense per user.
#[derive(Clone, Debug, Default)]
pub struct RateMatrix {
    num_stations: usize,
    rows: BTreeMap<UserId, Vec<f64>>,
}

impl RateMatrix {
    pub fn new(num_stations: usize) -> Self {
        RateMatrix { num_stations, rows: BTreeMap::new() }
    }

    pub fn num_stations(&self) -> usize {
        self.num_stations
    }

    pub fn set_row(&mut self, user: UserId, rates: Vec<f64>) {
        assert_eq!(rates.len(), self.num_stations, "rate row length mismatch");
        self.rows.insert(user, rates);
    }

    pub fn remove_row(&mut self, user: UserId) {
        self.rows.remove(&user);
    }

    pub fn row(&self, user: UserId) -> Option<&[f64]> {
        self.rows.get(&user).map(|r| r.as_slice())
    }

    /// c_ub; zero for missing entries.
    pub fn rate(&self, user: UserId, station: StationId) -> f64 {
        self.rows
            .get(&user)
            .and_then(|r| r.get(station.0 as usize))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn rows(&self) -> impl Iterator<Item = (UserId, &[f64])> {
        self.rows.iter().map(|(id, r)| (*id, r.as_slice()))
    }
}

/// The user-to-station assignment x: a total map, one station per user.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Association {
    map: BTreeMap<UserId, StationId>,
}

impl Association {
    pub fn new() -> Self {
        Association { map: BTreeMap::new() }
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (UserId, StationId)>) -> Self {
        Association { map: pairs.into_iter().collect() }
    }

    pub fn station_of(&self, user: UserId) -> Option<StationId> {
        self.map.get(&user).copied()
    }

    pub fn set(&mut self, user: UserId, station: StationId) {
        self.map.insert(user, station);
    }

    pub fn remove(&mut self, user: UserId) -> Option<StationId> {
        self.map.remove(&user)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (UserId, StationId)> + '_ {
        self.map.iter().map(|(u, b)| (*u, *b))
    }

    /// Totality over the state's users, station indices in range, and a
    /// strictly positive rate at every assigned station.
    pub fn validate(&self, state: &NetworkState) -> Result<()> {
        for user in state.users() {
            let b = self.station_of(user.id).ok_or(Error::Unassociated(user.id))?;
            if b.0 as usize >= state.num_stations() {
                return Err(Error::UnknownStation(b));
            }
            if state.rate(user.id, b) <= 0.0 {
                return Err(Error::InvalidInstance(format!(
                    "user {} assigned to station {} with zero rate",
                    user.id, b
                )));
            }
        }
        for (u, _) in self.iter() {
            if state.user(u).is_err() {
                return Err(Error::UnknownUser(u));
            }
        }
        Ok(())
    }
}

/// The per-station resource split f. Each user holds a fraction of exactly
/// one station (her assigned one), so entries are keyed by user.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Allocation {
    map: BTreeMap<UserId, (StationId, f64)>,
}

impl Allocation {
    pub fn new() -> Self {
        Allocation { map: BTreeMap::new() }
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (UserId, StationId, f64)>) -> Self {
        Allocation { map: pairs.into_iter().map(|(u, b, f)| (u, (b, f))).collect() }
    }

    pub fn set(&mut self, user: UserId, station: StationId, fraction: f64) {
        self.map.insert(user, (station, fraction));
    }

    /// f_ub: zero unless b is the user's allocated station.
    pub fn fraction(&self, user: UserId, station: StationId) -> f64 {
        match self.map.get(&user) {
            Some(&(b, f)) if b == station => f,
            _ => 0.0,
        }
    }

    pub fn entry(&self, user: UserId) -> Option<(StationId, f64)> {
        self.map.get(&user).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (UserId, StationId, f64)> + '_ {
        self.map.iter().map(|(u, &(b, f))| (*u, b, f))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Fractions lie in [0, 1], are positive only where x assigns the user,
    /// and per-station sums do not exceed 1 (within tolerance).
    pub fn validate(&self, state: &NetworkState, x: &Association) -> Result<()> {
        let mut sums = vec![0.0; state.num_stations()];
        for (u, b, f) in self.iter() {
            if !(0.0..=1.0 + ALLOC_SUM_TOL).contains(&f) {
                return Err(Error::InvalidInstance(format!(
                    "allocation fraction {f} for user {u} out of range"
                )));
            }
            if f > 0.0 && x.station_of(u) != Some(b) {
                return Err(Error::InvalidInstance(format!(
                    "user {u} allocated resources at station {b} she is not associated with"
                )));
            }
            if (b.0 as usize) < sums.len() {
                sums[b.0 as usize] += f;
            } else {
                return Err(Error::UnknownStation(b));
            }
        }
        for (b, s) in sums.iter().enumerate() {
            if *s > 1.0 + ALLOC_SUM_TOL {
                return Err(Error::InvalidInstance(format!(
                    "station b{b} oversubscribed: allocated fraction {s}"
                )));
            }
        }
        Ok(())
    }
}

/// The full optimization instance: an immutable snapshot of operators, users,
/// stations and rates. Functional updates return fresh snapshots.
#[derive(Clone, Debug)]
pub struct NetworkState {
    operators: Vec<Operator>,
    users: BTreeMap<UserId, User>,
    num_stations: usize,
    rates: RateMatrix,
}

impl NetworkState {
    /// Builds and validates a snapshot. `shares[i]` belongs to operator i.
    /// Weights w_u = s_o / |U_o| are derived here.
    pub fn new(shares: &[f64], users: Vec<UserSpec>, rates: RateMatrix) -> Result<Self> {
        if shares.is_empty() {
            return Err(Error::InvalidInstance("no operators".into()));
        }
        let sum: f64 = shares.iter().sum();
        if (sum - 1.0).abs() > SHARE_SUM_TOL {
            return Err(Error::InvalidInstance(format!(
                "operator shares sum to {sum}, expected 1"
            )));
        }
        for (i, s) in shares.iter().enumerate() {
            if !(*s > 0.0 && *s <= 1.0) {
                return Err(Error::InvalidInstance(format!(
                    "share {s} of operator op{i} outside (0, 1]"
                )));
            }
        }
        let num_stations = rates.num_stations();
        let mut operators: Vec<Operator> = shares
            .iter()
            .enumerate()
            .map(|(i, s)| Operator {
                id: OperatorId(i as u32),
                share: *s,
                user_ids: BTreeSet::new(),
            })
            .collect();

        let mut user_map = BTreeMap::new();
        for spec in users {
            let op = operators
                .get_mut(spec.operator.0 as usize)
                .ok_or(Error::UnknownOperator(spec.operator))?;
            if !op.user_ids.insert(spec.id) {
                return Err(Error::InvalidInstance(format!("duplicate user {}", spec.id)));
            }
            let row = rates
                .row(spec.id)
                .ok_or_else(|| Error::InvalidInstance(format!("user {} has no rate row", spec.id)))?;
            if row.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
                return Err(Error::InvalidInstance(format!(
                    "user {} has a negative or non-finite rate",
                    spec.id
                )));
            }
            if !row.iter().any(|r| *r > 0.0) {
                return Err(Error::Infeasible(format!(
                    "user {} has no station with positive rate",
                    spec.id
                )));
            }
            user_map.insert(
                spec.id,
                User { id: spec.id, operator: spec.operator, weight: 0.0, position: spec.position },
            );
        }
        for (id, _) in rates.rows() {
            if !user_map.contains_key(&id) {
                return Err(Error::InvalidInstance(format!(
                    "rate row for unknown user {id}"
                )));
            }
        }

        let mut state = NetworkState { operators, users: user_map, num_stations, rates };
        state.recompute_weights();
        Ok(state)
    }

    fn recompute_weights(&mut self) {
        for op in &self.operators {
            let n = op.user_ids.len();
            if n == 0 {
                continue;
            }
            let w = op.share / n as f64;
            for id in &op.user_ids {
                self.users.get_mut(id).expect("operator user set in sync").weight = w;
            }
        }
    }

    pub fn num_stations(&self) -> usize {
        self.num_stations
    }

    pub fn stations(&self) -> impl Iterator<Item = StationId> {
        (0..self.num_stations as u32).map(StationId)
    }

    pub fn operators(&self) -> &[Operator] {
        &self.operators
    }

    pub fn operator(&self, o: OperatorId) -> Result<&Operator> {
        self.operators.get(o.0 as usize).ok_or(Error::UnknownOperator(o))
    }

    pub fn users(&self) -> impl Iterator<Item = &User> {
        self.users.values()
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn user(&self, u: UserId) -> Result<&User> {
        self.users.get(&u).ok_or(Error::UnknownUser(u))
    }

    pub fn rate(&self, u: UserId, b: StationId) -> f64 {
        self.rates.rate(u, b)
    }

    pub fn rates(&self) -> &RateMatrix {
        &self.rates
    }

    /// Operators holding a positive share but no active users this snapshot.
    /// They are excluded from the weight map; their share sits unused.
    pub fn idle_operators(&self) -> Vec<OperatorId> {
        self.operators
            .iter()
            .filter(|o| o.user_ids.is_empty())
            .map(|o| o.id)
            .collect()
    }

    pub fn with_user_added(&self, spec: UserSpec, rates: Vec<f64>) -> Result<NetworkState> {
        let mut next = self.clone();
        if next.users.contains_key(&spec.id) {
            return Err(Error::InvalidInstance(format!("duplicate user {}", spec.id)));
        }
        if !rates.iter().any(|r| *r > 0.0) {
            return Err(Error::Infeasible(format!(
                "user {} has no station with positive rate",
                spec.id
            )));
        }
        let op = next
            .operators
            .get_mut(spec.operator.0 as usize)
            .ok_or(Error::UnknownOperator(spec.operator))?;
        op.user_ids.insert(spec.id);
        next.rates.set_row(spec.id, rates);
        next.users.insert(
            spec.id,
            User { id: spec.id, operator: spec.operator, weight: 0.0, position: spec.position },
        );
        next.recompute_weights();
        Ok(next)
    }

    pub fn with_user_removed(&self, u: UserId) -> Result<NetworkState> {
        let mut next = self.clone();
        let user = next.users.remove(&u).ok_or(Error::UnknownUser(u))?;
        next.operators[user.operator.0 as usize].user_ids.remove(&u);
        next.rates.remove_row(u);
        next.recompute_weights();
        Ok(next)
    }

    pub fn with_rate_row(&self, u: UserId, rates: Vec<f64>) -> Result<NetworkState> {
        let mut next = self.clone();
        if !next.users.contains_key(&u) {
            return Err(Error::UnknownUser(u));
        }
        if !rates.iter().any(|r| *r > 0.0) {
            return Err(Error::Infeasible(format!(
                "user {u} has no station with positive rate"
            )));
        }
        next.rates.set_row(u, rates);
        Ok(next)
    }
}

/// Allocated rate of one user: r_u = f_{u,x(u)} * c_{u,x(u)}.
pub fn user_rate(state: &NetworkState, x: &Association, f: &Allocation, u: UserId) -> Result<f64> {
    state.user(u)?;
    let b = x.station_of(u).ok_or(Error::Unassociated(u))?;
    Ok(f.fraction(u, b) * state.rate(u, b))
}

/// The weight map w_u = s_o / |U_o|. Operators without active users are
/// simply absent (they contribute no entries).
pub fn compute_weights(state: &NetworkState) -> BTreeMap<UserId, f64> {
    state.users().map(|u| (u.id, u.weight)).collect()
}

/// Network utility W = sum_u w_u ln(r_u), in nats.
///
/// Any user with zero rate makes the objective undefined; that is reported
/// as an error rather than clipped.
pub fn network_utility(state: &NetworkState, x: &Association, f: &Allocation) -> Result<f64> {
    debug_assert!(x.validate(state).is_ok(), "association must be total and feasible");
    let mut total = 0.0;
    for user in state.users() {
        let r = user_rate(state, x, f, user.id)?;
        if r <= 0.0 {
            return Err(Error::ZeroRate(user.id));
        }
        total += user.weight * r.ln();
    }
    Ok(total)
}

/// Operator utility U_o = (1/|U_o|) sum_{u in U_o} ln(r_u), in nats.
pub fn operator_utility(
    state: &NetworkState,
    x: &Association,
    f: &Allocation,
    o: OperatorId,
) -> Result<f64> {
    let op = state.operator(o)?;
    if op.user_ids.is_empty() {
        return Err(Error::IdleOperator(o));
    }
    let mut total = 0.0;
    for &u in &op.user_ids {
        let r = user_rate(state, x, f, u)?;
        if r <= 0.0 {
            return Err(Error::ZeroRate(u));
        }
        total += r.ln();
    }
    Ok(total / op.user_ids.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_user_state(c: f64) -> NetworkState {
        let mut rates = RateMatrix::new(1);
        rates.set_row(UserId(0), vec![c]);
        NetworkState::new(&[1.0], vec![UserSpec::new(UserId(0), OperatorId(0))], rates).unwrap()
    }

    #[test]
    fn user_rate_full_allocation_identity() {
        let state = single_user_state(10e6);
        let x = Association::from_pairs([(UserId(0), StationId(0))]);
        let f = Allocation::from_pairs([(UserId(0), StationId(0), 1.0)]);
        assert_eq!(user_rate(&state, &x, &f, UserId(0)).unwrap(), 10e6);
    }

    #[test]
    fn user_rate_is_product_of_fraction_and_rate() {
        let state = single_user_state(8e6);
        let x = Association::from_pairs([(UserId(0), StationId(0))]);
        let f = Allocation::from_pairs([(UserId(0), StationId(0), 0.5)]);
        assert_eq!(user_rate(&state, &x, &f, UserId(0)).unwrap(), 4e6);
    }

    #[test]
    fn user_rate_unknown_user_errors() {
        let state = single_user_state(1.0);
        let x = Association::from_pairs([(UserId(0), StationId(0))]);
        let f = Allocation::from_pairs([(UserId(0), StationId(0), 1.0)]);
        assert!(matches!(
            user_rate(&state, &x, &f, UserId(9)),
            Err(Error::UnknownUser(UserId(9)))
        ));
    }

    #[test]
    fn user_rate_matches_termwise_sum_on_random_instance() {
        // Independent oracle: evaluate the defining sum over all stations.
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let state = crate::testing::random_instance(&mut rng, 4, 3, 2);
        let x = crate::testing::random_association(&mut rng, &state);
        let f = crate::allocation::mora_allocation(&state, &x).unwrap();
        for user in state.users() {
            let direct = user_rate(&state, &x, &f, user.id).unwrap();
            let mut summed = 0.0;
            for b in state.stations() {
                let x_ub = if x.station_of(user.id) == Some(b) { 1.0 } else { 0.0 };
                summed += f.fraction(user.id, b) * x_ub * state.rate(user.id, b);
            }
            assert!((direct - summed).abs() <= 1e-12 * summed.abs().max(1.0));
        }
    }

    #[test]
    fn weights_split_share_equally() {
        let mut rates = RateMatrix::new(1);
        for i in 0..4 {
            rates.set_row(UserId(i), vec![1.0]);
        }
        let users = (0..4).map(|i| UserSpec::new(UserId(i), OperatorId(0))).collect();
        let state = NetworkState::new(&[1.0], users, rates).unwrap();
        let w = compute_weights(&state);
        for i in 0..4 {
            assert!((w[&UserId(i)] - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn weights_follow_share_over_population() {
        // shares {0.5, 0.5} over populations {1, 2} -> weights {0.5, 0.25, 0.25}
        let mut rates = RateMatrix::new(1);
        for i in 0..3 {
            rates.set_row(UserId(i), vec![1.0]);
        }
        let users = vec![
            UserSpec::new(UserId(0), OperatorId(0)),
            UserSpec::new(UserId(1), OperatorId(1)),
            UserSpec::new(UserId(2), OperatorId(1)),
        ];
        let state = NetworkState::new(&[0.5, 0.5], users, rates).unwrap();
        let w = compute_weights(&state);
        assert!((w[&UserId(0)] - 0.5).abs() < 1e-15);
        assert!((w[&UserId(1)] - 0.25).abs() < 1e-15);
        assert!((w[&UserId(2)] - 0.25).abs() < 1e-15);

        // shares {0.6, 0.4} over populations {3, 2} -> all weights 0.2
        let mut rates = RateMatrix::new(1);
        for i in 0..5 {
            rates.set_row(UserId(i), vec![1.0]);
        }
        let users = (0..5)
            .map(|i| UserSpec::new(UserId(i), OperatorId(if i < 3 { 0 } else { 1 })))
            .collect();
        let state = NetworkState::new(&[0.6, 0.4], users, rates).unwrap();
        for u in state.users() {
            assert!((u.weight - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn idle_operator_is_flagged_and_excluded() {
        let mut rates = RateMatrix::new(1);
        rates.set_row(UserId(0), vec![1.0]);
        let state =
            NetworkState::new(&[0.7, 0.3], vec![UserSpec::new(UserId(0), OperatorId(0))], rates)
                .unwrap();
        assert_eq!(state.idle_operators(), vec![OperatorId(1)]);
        let w = compute_weights(&state);
        assert_eq!(w.len(), 1);
        assert!((w[&UserId(0)] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn network_utility_single_terms() {
        let state = single_user_state(2.0);
        let x = Association::from_pairs([(UserId(0), StationId(0))]);
        let f = Allocation::from_pairs([(UserId(0), StationId(0), 1.0)]);
        let w = network_utility(&state, &x, &f).unwrap();
        assert!((w - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn network_utility_two_unit_rates_is_zero() {
        let mut rates = RateMatrix::new(2);
        rates.set_row(UserId(0), vec![2.0, 0.0]);
        rates.set_row(UserId(1), vec![0.0, 2.0]);
        let users = vec![
            UserSpec::new(UserId(0), OperatorId(0)),
            UserSpec::new(UserId(1), OperatorId(0)),
        ];
        let state = NetworkState::new(&[1.0], users, rates).unwrap();
        let x = Association::from_pairs([(UserId(0), StationId(0)), (UserId(1), StationId(1))]);
        let f = Allocation::from_pairs([
            (UserId(0), StationId(0), 0.5),
            (UserId(1), StationId(1), 0.5),
        ]);
        // both rates are 1 -> W = 0
        let w = network_utility(&state, &x, &f).unwrap();
        assert!(w.abs() < 1e-15);
    }

    #[test]
    fn zero_rate_reports_infeasible() {
        let state = single_user_state(5.0);
        let x = Association::from_pairs([(UserId(0), StationId(0))]);
        let f = Allocation::from_pairs([(UserId(0), StationId(0), 0.0)]);
        assert!(matches!(
            network_utility(&state, &x, &f),
            Err(Error::ZeroRate(UserId(0)))
        ));
    }

    #[test]
    fn operator_utility_basics() {
        let state = single_user_state(std::f64::consts::E);
        let x = Association::from_pairs([(UserId(0), StationId(0))]);
        let f = Allocation::from_pairs([(UserId(0), StationId(0), 1.0)]);
        let u = operator_utility(&state, &x, &f, OperatorId(0)).unwrap();
        assert!((u - 1.0).abs() < 1e-12);
    }

    #[test]
    fn operator_utility_equal_rates_is_log_rate() {
        let mut rates = RateMatrix::new(2);
        rates.set_row(UserId(0), vec![6.0, 0.0]);
        rates.set_row(UserId(1), vec![0.0, 6.0]);
        let users = vec![
            UserSpec::new(UserId(0), OperatorId(0)),
            UserSpec::new(UserId(1), OperatorId(0)),
        ];
        let state = NetworkState::new(&[1.0], users, rates).unwrap();
        let x = Association::from_pairs([(UserId(0), StationId(0)), (UserId(1), StationId(1))]);
        let f = Allocation::from_pairs([
            (UserId(0), StationId(0), 1.0),
            (UserId(1), StationId(1), 1.0),
        ]);
        let u = operator_utility(&state, &x, &f, OperatorId(0)).unwrap();
        assert!((u - 6.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn utility_decomposes_over_operators() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let state = crate::testing::random_instance(&mut rng, 6, 3, 3);
            let x = crate::testing::random_association(&mut rng, &state);
            let f = crate::allocation::mora_allocation(&state, &x).unwrap();
            let w = network_utility(&state, &x, &f).unwrap();
            let mut combined = 0.0;
            for op in state.operators() {
                combined += op.share * operator_utility(&state, &x, &f, op.id).unwrap();
            }
            assert!((w - combined).abs() < 1e-12);
        }
    }

    #[test]
    fn state_rejects_bad_shares_and_rates() {
        let rates = RateMatrix::new(1);
        assert!(NetworkState::new(&[0.9], vec![], rates.clone()).is_err());
        assert!(NetworkState::new(&[], vec![], rates.clone()).is_err());

        let mut rates = RateMatrix::new(1);
        rates.set_row(UserId(0), vec![0.0]);
        assert!(matches!(
            NetworkState::new(&[1.0], vec![UserSpec::new(UserId(0), OperatorId(0))], rates),
            Err(Error::Infeasible(_))
        ));
    }
}
