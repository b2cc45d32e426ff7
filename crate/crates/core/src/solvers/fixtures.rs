//! Instance generators backing the hardness and online-gap results: the
//! three-dimensional-matching reduction (whose optimum has a closed form
//! exactly when a matching exists) and the join-then-depart script that
//! makes any no-reassociation online policy arbitrarily bad.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::{Association, NetworkState, OperatorId, RateMatrix, UserId, UserSpec};

/// A family of triples over index sets C, D, E of common size `n`. Triple
/// components are indices into C, D and E respectively.
#[derive(Clone, Debug)]
pub struct TripleFamily {
    pub n: usize,
    pub triples: Vec<(usize, usize, usize)>,
}

impl TripleFamily {
    pub fn new(n: usize, triples: Vec<(usize, usize, usize)>) -> Result<Self> {
        let family = TripleFamily { n, triples };
        family.validate()?;
        Ok(family)
    }

    pub fn num_triples(&self) -> usize {
        self.triples.len()
    }

    fn validate(&self) -> Result<()> {
        let (n, m) = (self.n, self.triples.len());
        if n == 0 {
            return Err(Error::InvalidInstance("empty element sets".into()));
        }
        if m < n {
            return Err(Error::InvalidInstance(format!(
                "{m} triples cannot match {n} elements"
            )));
        }
        let mut seen = [vec![false; n], vec![false; n], vec![false; n]];
        for &(c, d, e) in &self.triples {
            if c >= n || d >= n || e >= n {
                return Err(Error::InvalidInstance(format!(
                    "triple ({c}, {d}, {e}) out of range for n = {n}"
                )));
            }
            seen[0][c] = true;
            seen[1][d] = true;
            seen[2][e] = true;
        }
        for dim in &seen {
            if dim.iter().any(|covered| !covered) {
                return Err(Error::InvalidInstance(
                    "some element appears in no triple".into(),
                ));
            }
        }
        Ok(())
    }

    /// Exhaustive search for a perfect matching: `n` triples that cover
    /// every element of C, D and E exactly once. Independent of the
    /// optimization machinery; used as the test oracle.
    pub fn has_perfect_matching(&self) -> bool {
        fn recurse(
            family: &[(usize, usize, usize)],
            start: usize,
            picked: usize,
            n: usize,
            used: &mut [Vec<bool>; 3],
        ) -> bool {
            if picked == n {
                return true;
            }
            for i in start..family.len() {
                let (c, d, e) = family[i];
                if used[0][c] || used[1][d] || used[2][e] {
                    continue;
                }
                used[0][c] = true;
                used[1][d] = true;
                used[2][e] = true;
                if recurse(family, i + 1, picked + 1, n, used) {
                    return true;
                }
                used[0][c] = false;
                used[1][d] = false;
                used[2][e] = false;
            }
            false
        }
        let mut used = [vec![false; self.n], vec![false; self.n], vec![false; self.n]];
        recurse(&self.triples, 0, 0, self.n, &mut used)
    }

    /// Network utility of the reduction instance when a perfect matching
    /// exists: (n/m) ln(R/2) + ((m-n)/m) ln(R).
    pub fn matching_utility(&self, rate: f64) -> f64 {
        let n = self.n as f64;
        let m = self.num_triples() as f64;
        (n / m) * (rate / 2.0).ln() + ((m - n) / m) * rate.ln()
    }
}

/// Builds the reduction instance: one station per triple; one user per
/// element of D and E reaching (at rate R) the stations of the triples
/// containing it; and, per C element appearing in t_j triples, t_j - 1
/// "filler" users reaching all stations of that element's triples.
///
/// Element users carry weight 1/(2m) and filler users 1/m, realized with
/// two operators holding shares n/m and (m-n)/m over 2n and m-n users.
pub fn build_3dm_instance(family: &TripleFamily, rate: f64) -> Result<NetworkState> {
    family.validate()?;
    if !(rate > 0.0) {
        return Err(Error::InvalidInstance("rate must be positive".into()));
    }
    let n = family.n;
    let m = family.num_triples();
    let num_stations = m;

    let mut rates = RateMatrix::new(num_stations);
    let mut users = Vec::new();

    let row_for = |pred: &dyn Fn(&(usize, usize, usize)) -> bool| -> Vec<f64> {
        family
            .triples
            .iter()
            .map(|t| if pred(t) { rate } else { 0.0 })
            .collect()
    };

    // D-element users: ids 0..n; E-element users: ids n..2n.
    for j in 0..n {
        users.push(UserSpec::new(UserId(j as u32), OperatorId(0)));
        rates.set_row(UserId(j as u32), row_for(&|t| t.1 == j));
    }
    for j in 0..n {
        let id = UserId((n + j) as u32);
        users.push(UserSpec::new(id, OperatorId(0)));
        rates.set_row(id, row_for(&|t| t.2 == j));
    }

    // Filler users: t_j - 1 per C element, ids from 2n upward.
    let mut next = 2 * n as u32;
    let mut type_counts = vec![0usize; n];
    for &(c, _, _) in &family.triples {
        type_counts[c] += 1;
    }
    for (j, &t_j) in type_counts.iter().enumerate() {
        for _ in 1..t_j {
            let id = UserId(next);
            next += 1;
            users.push(UserSpec::new(id, OperatorId(1)));
            rates.set_row(id, row_for(&|t| t.0 == j));
        }
    }

    let share_elements = n as f64 / m as f64;
    if m > n {
        NetworkState::new(&[share_elements, 1.0 - share_elements], users, rates)
    } else {
        // no filler users; single operator of share 1 gives weight 1/(2n)
        NetworkState::new(&[1.0], users, rates)
    }
}

/// An event of a direct-rate script replayed against an online policy.
#[derive(Clone, Debug, PartialEq)]
pub enum ScriptEvent {
    Join { user: UserId, rates: Vec<f64> },
    Leave { user: UserId },
}

/// The join-then-depart script exhibiting the unbounded online gap:
/// `B^2` identical unit-rate users join, then everyone except the users
/// the online policy stacked on one station departs. The frozen online
/// association is worth -ln(B) while spreading the survivors is worth 0.
pub fn online_worst_case_fixture(num_stations: usize) -> Vec<ScriptEvent> {
    assert!(num_stations >= 2, "the gap needs at least two stations");
    let total = num_stations * num_stations;
    let mut events: Vec<ScriptEvent> = (0..total)
        .map(|i| ScriptEvent::Join {
            user: UserId(i as u32),
            rates: vec![1.0; num_stations],
        })
        .collect();

    // Replay the joins to find where the policy stacked users, then keep
    // one full station and let everyone else depart.
    let mut counts = vec![0usize; num_stations];
    let mut placed: BTreeMap<UserId, usize> = BTreeMap::new();
    for ev in &events {
        if let ScriptEvent::Join { user, rates } = ev {
            let b = online_pick(rates, &counts);
            counts[b] += 1;
            placed.insert(*user, b);
        }
    }
    let crowded = (0..num_stations)
        .max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)))
        .unwrap();
    let mut keep: Vec<UserId> = placed
        .iter()
        .filter(|(_, &b)| b == crowded)
        .map(|(u, _)| *u)
        .collect();
    keep.truncate(num_stations);
    for user in placed.keys() {
        if !keep.contains(user) {
            events.push(ScriptEvent::Leave { user: *user });
        }
    }
    events
}

fn online_pick(rates: &[f64], counts: &[usize]) -> usize {
    let mut best: Option<(usize, f64)> = None;
    for (b, &c) in rates.iter().enumerate() {
        if c <= 0.0 {
            continue;
        }
        let r = c / (counts[b] + 1) as f64;
        if best.map_or(true, |(_, br)| r > br) {
            best = Some((b, r));
        }
    }
    best.expect("at least one reachable station").0
}

/// Replays a script through the no-reassociation online policy (equal
/// weights, one operator): joins pick the station maximizing the joining
/// user's post-join rate; nobody ever moves afterwards. Returns the final
/// state and the frozen association.
pub fn replay_online(
    num_stations: usize,
    events: &[ScriptEvent],
) -> Result<(NetworkState, Association)> {
    let mut rows: BTreeMap<UserId, Vec<f64>> = BTreeMap::new();
    let mut assoc: BTreeMap<UserId, usize> = BTreeMap::new();
    let mut counts = vec![0usize; num_stations];

    for ev in events {
        match ev {
            ScriptEvent::Join { user, rates } => {
                if rows.contains_key(user) {
                    return Err(Error::InvalidInstance(format!("user {user} joined twice")));
                }
                if rates.len() != num_stations {
                    return Err(Error::InvalidInstance(format!(
                        "rate row for {user} has wrong length"
                    )));
                }
                let b = online_pick(rates, &counts);
                counts[b] += 1;
                rows.insert(*user, rates.clone());
                assoc.insert(*user, b);
            }
            ScriptEvent::Leave { user } => {
                let b = assoc.remove(user).ok_or(Error::UnknownUser(*user))?;
                rows.remove(user);
                counts[b] -= 1;
            }
        }
    }

    let mut rates = RateMatrix::new(num_stations);
    let mut users = Vec::new();
    for (user, row) in rows {
        rates.set_row(user, row);
        users.push(UserSpec::new(user, OperatorId(0)));
    }
    let state = NetworkState::new(&[1.0], users, rates)?;
    let x = Association::from_pairs(
        assoc
            .into_iter()
            .map(|(u, b)| (u, crate::model::StationId(b as u32))),
    );
    Ok((state, x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocation::mora_allocation;
    use crate::model::network_utility;
    use crate::solvers::brute_force_mora;

    #[test]
    fn trivial_family_matches_formula() {
        let family = TripleFamily::new(1, vec![(0, 0, 0)]).unwrap();
        assert!(family.has_perfect_matching());
        let state = build_3dm_instance(&family, 8.0).unwrap();
        assert_eq!(state.num_users(), 2);
        assert_eq!(state.num_stations(), 1);
        let (_, _, w) = brute_force_mora(&state).unwrap();
        assert!((w - (8.0f64 / 2.0).ln()).abs() < 1e-12);
        assert!((w - family.matching_utility(8.0)).abs() < 1e-12);
    }

    #[test]
    fn matching_family_attains_formula() {
        let family = TripleFamily::new(2, vec![(0, 0, 0), (1, 1, 1), (0, 1, 0)]).unwrap();
        assert!(family.has_perfect_matching());
        let state = build_3dm_instance(&family, 10.0).unwrap();
        // 4 element users + 1 filler (t_0 = 2)
        assert_eq!(state.num_users(), 5);
        let (_, _, w) = brute_force_mora(&state).unwrap();
        assert!((w - family.matching_utility(10.0)).abs() < 1e-9);
    }

    #[test]
    fn non_matching_family_stays_below_formula() {
        let family = TripleFamily::new(2, vec![(0, 0, 0), (1, 1, 0), (1, 0, 1)]).unwrap();
        assert!(!family.has_perfect_matching());
        let state = build_3dm_instance(&family, 10.0).unwrap();
        let (_, _, w) = brute_force_mora(&state).unwrap();
        assert!(w < family.matching_utility(10.0) - 1e-9);
    }

    #[test]
    fn malformed_families_are_rejected() {
        assert!(TripleFamily::new(0, vec![]).is_err());
        assert!(TripleFamily::new(2, vec![(0, 0, 0)]).is_err());
        assert!(TripleFamily::new(2, vec![(0, 0, 0), (0, 1, 2)]).is_err());
        // element d1 never appears
        assert!(TripleFamily::new(2, vec![(0, 0, 0), (1, 0, 1)]).is_err());
    }

    #[test]
    fn online_gap_matches_log_of_station_count() {
        for b in [2usize, 4] {
            let events = online_worst_case_fixture(b);
            let (state, x) = replay_online(b, &events).unwrap();
            assert_eq!(state.num_users(), b);
            let f = mora_allocation(&state, &x).unwrap();
            let w_online = network_utility(&state, &x, &f).unwrap();
            assert!((w_online + (b as f64).ln()).abs() < 1e-12);
            let (_, _, w_opt) = brute_force_mora(&state).unwrap();
            assert!(w_opt.abs() < 1e-12);
        }
    }

    #[test]
    fn online_gap_grows_with_stations() {
        let mut previous = 0.0;
        for b in [2usize, 3, 4, 5] {
            let events = online_worst_case_fixture(b);
            let (state, x) = replay_online(b, &events).unwrap();
            let f = mora_allocation(&state, &x).unwrap();
            let gap = -network_utility(&state, &x, &f).unwrap();
            assert!(gap > previous);
            previous = gap;
        }
    }
}
