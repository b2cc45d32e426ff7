//! Seeded random-instance generators used by the property suites, the
//! `verify` checks, and tests across the crate.

use rand::Rng;

use crate::model::{
    Association, NetworkState, OperatorId, RateMatrix, StationId, UserId, UserSpec,
};

/// A random feasible instance with up to the given dimensions. Every
/// operator keeps at least one user and every user keeps at least one
/// station with positive rate; some entries may be zeroed to exercise
/// coverage holes.
pub fn random_instance(
    rng: &mut impl Rng,
    max_users: usize,
    max_stations: usize,
    max_operators: usize,
) -> NetworkState {
    let num_ops = rng.random_range(1..=max_operators.max(1));
    let num_stations = rng.random_range(1..=max_stations.max(1));
    let num_users = rng.random_range(num_ops..=max_users.max(num_ops));

    let mut shares: Vec<f64> = (0..num_ops).map(|_| rng.random_range(0.2..1.0)).collect();
    let sum: f64 = shares.iter().sum();
    for s in &mut shares {
        *s /= sum;
    }
    // Exact renormalization so the 1e-9 share-sum invariant holds.
    let resum: f64 = shares.iter().sum();
    shares[0] += 1.0 - resum;

    let mut rates = RateMatrix::new(num_stations);
    let mut users = Vec::with_capacity(num_users);
    for i in 0..num_users {
        let op = if i < num_ops { i } else { rng.random_range(0..num_ops) };
        users.push(UserSpec::new(UserId(i as u32), OperatorId(op as u32)));
        let row = loop {
            let row: Vec<f64> = (0..num_stations)
                .map(|_| {
                    if rng.random_bool(0.15) {
                        0.0
                    } else {
                        // log-uniform rates between 1 Mb/s and 100 Mb/s
                        let ln = rng.random_range(1e6f64.ln()..1e8f64.ln());
                        ln.exp()
                    }
                })
                .collect();
            if row.iter().any(|r| *r > 0.0) {
                break row;
            }
        };
        rates.set_row(UserId(i as u32), row);
    }
    NetworkState::new(&shares, users, rates).expect("generated instance is valid")
}

/// Uniform random association over each user's positive-rate stations.
pub fn random_association(rng: &mut impl Rng, state: &NetworkState) -> Association {
    let mut x = Association::new();
    for user in state.users() {
        let candidates: Vec<StationId> = state
            .stations()
            .filter(|b| state.rate(user.id, *b) > 0.0)
            .collect();
        let b = candidates[rng.random_range(0..candidates.len())];
        x.set(user.id, b);
    }
    x
}
