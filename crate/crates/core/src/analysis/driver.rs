//! Replays a generated event stream against one association policy and
//! collects per-snapshot metrics. Shared policies maintain one working
//! instance; sliced (static-slicing) policies maintain one per operator
//! with rates scaled by the slice, which reproduces the slice rates
//! exactly.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::Instant;

use crate::channel::{mix, ChannelModel, McsTable};
use crate::error::{Error, Result};
use crate::model::{OperatorId, UserId};
use crate::scenario::{self, Event, Layout, ScenarioConfig};
use crate::solvers::{self, SolverParams, Working, UNASSOC};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Policy {
    /// Budgeted semi-online adjustment on each join / leave / rate change.
    Gllg,
    /// Best-response resweep to equilibrium after every event batch.
    Dg,
    /// Largest-gain resweep after every event batch.
    Glg,
    /// Static slicing, per-operator best-response association.
    DgSs,
    /// Static slicing, max-rate association.
    SinrSs,
    /// Exhaustive optimum after every event batch (size-guarded).
    Brute,
    /// Greedy association on join, never any reassociation.
    Online,
}

impl Policy {
    pub fn is_sliced(self) -> bool {
        matches!(self, Policy::DgSs | Policy::SinrSs)
    }

    pub const ALL: [Policy; 7] = [
        Policy::Gllg,
        Policy::Dg,
        Policy::Glg,
        Policy::DgSs,
        Policy::SinrSs,
        Policy::Brute,
        Policy::Online,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Policy::Gllg => "gllg",
            Policy::Dg => "dg",
            Policy::Glg => "glg",
            Policy::DgSs => "dg_ss",
            Policy::SinrSs => "sinr_ss",
            Policy::Brute => "brute",
            Policy::Online => "online",
        }
    }
}

impl std::str::FromStr for Policy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Policy> {
        Policy::ALL
            .iter()
            .copied()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown policy '{s}'")))
    }
}

/// Per-snapshot outputs.
#[derive(Clone, Debug)]
pub struct MetricsRecord {
    pub time_s: f64,
    /// W in nats; NaN when no users are active.
    pub utility: f64,
    /// Per-operator utility, NaN for operators without active users.
    pub operator_utils: Vec<f64>,
    pub idle_operators: Vec<OperatorId>,
    /// Allocated rate (bits/s) per active user.
    pub user_rates: Vec<(UserId, f64)>,
    pub active_users: usize,
    /// Cumulative reassociations of existing users up to this snapshot.
    pub reassociations_total: u64,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub records: Vec<MetricsRecord>,
    pub download_times_s: Vec<f64>,
    /// Wall-clock nanoseconds per handled policy event (diagnostics only;
    /// never part of deterministic outputs).
    pub event_handle_ns: Vec<u64>,
    pub total_reassociations: u64,
    /// Times a present user had no positive-rate sector (MCS mode).
    pub coverage_events: u64,
}

impl RunResult {
    fn steady<K: Fn(&MetricsRecord) -> f64>(&self, key: K) -> f64 {
        let skip = self.records.len() / 10;
        let values: Vec<f64> =
            self.records[skip..].iter().map(&key).filter(|v| v.is_finite()).collect();
        if values.is_empty() {
            return f64::NAN;
        }
        values.iter().sum::<f64>() / values.len() as f64
    }

    /// Time-averaged network utility after a 10% warm-up window.
    pub fn steady_mean_utility(&self) -> f64 {
        self.steady(|r| r.utility)
    }

    pub fn steady_mean_operator_utility(&self, op: OperatorId) -> f64 {
        self.steady(|r| r.operator_utils[op.0 as usize])
    }
}

struct Driver {
    layout: Layout,
    channel: ChannelModel,
    policy: Policy,
    params: SolverParams,
    shares: Vec<f64>,
    mult: f64,
    /// One engine for shared policies, one per operator for sliced ones.
    engines: Vec<Working>,
    positions: BTreeMap<UserId, (f64, f64)>,
    op_of: BTreeMap<UserId, OperatorId>,
    /// Present users currently out of coverage everywhere.
    parked: BTreeSet<UserId>,
    total_reassoc: u64,
    event_ns: Vec<u64>,
    coverage_events: u64,
}

impl Driver {
    fn engine_index(&self, op: OperatorId) -> usize {
        if self.policy.is_sliced() {
            op.0 as usize
        } else {
            0
        }
    }

    fn row_scale(&self, op: OperatorId) -> f64 {
        if self.policy.is_sliced() {
            self.shares[op.0 as usize] * self.mult
        } else {
            self.mult
        }
    }

    fn build_row(&self, user: UserId, op: OperatorId, time_s: f64) -> Vec<f64> {
        let pos = self.positions[&user];
        let scale = self.row_scale(op);
        self.channel
            .rate_row(&self.layout, user, pos, time_s)
            .into_iter()
            .map(|c| c * scale)
            .collect()
    }

    /// Membership change: user appears. Sliced and online policies place
    /// her immediately; sweep policies leave her for the batch reaction.
    fn admit(&mut self, user: UserId, op: OperatorId, time_s: f64) -> Result<()> {
        let row = self.build_row(user, op, time_s);
        if !row.iter().any(|c| *c > 0.0) {
            self.parked.insert(user);
            self.coverage_events += 1;
            return Ok(());
        }
        let ei = self.engine_index(op);
        let op_idx = if self.policy.is_sliced() { 0 } else { op.0 as usize };
        let idx = self.engines[ei].add_user(user, op_idx, row)?;
        match self.policy {
            Policy::Gllg => {
                let started = Instant::now();
                let out = solvers::gllg_join_adjust(&mut self.engines[ei], idx, &self.params)?;
                self.event_ns.push(started.elapsed().as_nanos() as u64);
                self.total_reassoc += out.reassociations as u64;
            }
            Policy::Online => {
                let started = Instant::now();
                self.engines[ei].online_insert(idx)?;
                self.event_ns.push(started.elapsed().as_nanos() as u64);
            }
            Policy::SinrSs => {
                let best = argmax_station(&self.engines[ei].rate[idx])
                    .expect("admitted user has coverage");
                self.engines[ei].apply_move(idx, best);
            }
            // placed by the group reaction
            Policy::Dg | Policy::Glg | Policy::DgSs | Policy::Brute => {}
        }
        Ok(())
    }

    /// Membership change: user disappears.
    fn depart(&mut self, user: UserId) -> Result<()> {
        if self.parked.remove(&user) {
            return Ok(());
        }
        let op = self.op_of[&user];
        let ei = self.engine_index(op);
        let idx = self.engines[ei]
            .index_of(user)
            .ok_or(Error::UnknownUser(user))?;
        self.engines[ei].remove_user(idx);
        if self.policy == Policy::Gllg {
            let started = Instant::now();
            let out = solvers::gllg_leave_adjust(&mut self.engines[ei], &self.params)?;
            self.event_ns.push(started.elapsed().as_nanos() as u64);
            self.total_reassoc += out.reassociations as u64;
        }
        Ok(())
    }

    /// Batch reaction of the sweep policies after membership or rate
    /// changes. No-op for the per-event and argmax policies.
    fn react(&mut self, _time_s: f64) -> Result<()> {
        match self.policy {
            Policy::Dg | Policy::DgSs => {
                let started = Instant::now();
                for ei in 0..self.engines.len() {
                    let out = solvers::run_distributed_greedy(&mut self.engines[ei], &self.params)?;
                    self.total_reassoc += out.reassociations as u64;
                }
                self.event_ns.push(started.elapsed().as_nanos() as u64);
            }
            Policy::Glg => {
                let started = Instant::now();
                let out = solvers::run_greedy_largest_gain(&mut self.engines[0], &self.params)?;
                self.total_reassoc += out.reassociations as u64;
                self.event_ns.push(started.elapsed().as_nanos() as u64);
            }
            Policy::Brute => {
                let started = Instant::now();
                let engine = &mut self.engines[0];
                let before: BTreeMap<UserId, usize> = (0..engine.len())
                    .filter(|&i| engine.assoc[i] != UNASSOC)
                    .map(|i| (engine.ids[i], engine.assoc[i]))
                    .collect();
                let (assign, _) = solvers::brute_force(engine)?;
                for (i, b) in assign.into_iter().enumerate() {
                    if before.get(&engine.ids[i]).is_some_and(|old| *old != b) {
                        self.total_reassoc += 1;
                    }
                    engine.assoc[i] = b;
                }
                engine.rebuild_loads();
                self.event_ns.push(started.elapsed().as_nanos() as u64);
            }
            Policy::SinrSs => {
                let started = Instant::now();
                for engine in &mut self.engines {
                    for i in 0..engine.len() {
                        let best = match argmax_station(&engine.rate[i]) {
                            Some(b) => b,
                            None => continue, // parked separately
                        };
                        if engine.assoc[i] == UNASSOC {
                            engine.assoc[i] = best;
                        } else if engine.assoc[i] != best {
                            engine.assoc[i] = best;
                            self.total_reassoc += 1;
                        }
                    }
                    engine.rebuild_loads();
                }
                self.event_ns.push(started.elapsed().as_nanos() as u64);
            }
            Policy::Gllg | Policy::Online => {}
        }
        Ok(())
    }

    /// Rate refresh at a snapshot boundary: every present user gets a new
    /// row (new position and/or shadowing epoch). The per-event policy
    /// handles each user as one rate-change event; the others take the
    /// batch and react once.
    fn refresh(&mut self, time_s: f64) -> Result<()> {
        let present: Vec<(UserId, OperatorId)> =
            self.op_of.iter().map(|(u, o)| (*u, *o)).collect();
        for (user, op) in present {
            let row = self.build_row(user, op, time_s);
            let covered = row.iter().any(|c| *c > 0.0);
            let ei = self.engine_index(op);
            if self.parked.contains(&user) {
                if covered {
                    self.parked.remove(&user);
                    self.admit_refreshed(user, op, row)?;
                }
                continue;
            }
            let idx = self.engines[ei].index_of(user).expect("present user in engine");
            if !covered {
                self.engines[ei].remove_user(idx);
                self.parked.insert(user);
                self.coverage_events += 1;
                if self.policy == Policy::Gllg {
                    let started = Instant::now();
                    let out = solvers::gllg_leave_adjust(&mut self.engines[ei], &self.params)?;
                    self.event_ns.push(started.elapsed().as_nanos() as u64);
                    self.total_reassoc += out.reassociations as u64;
                }
                continue;
            }
            self.engines[ei].set_row(idx, row);
            if self.policy == Policy::Gllg {
                let started = Instant::now();
                let out = solvers::gllg_move_adjust(&mut self.engines[ei], idx, &self.params)?;
                self.event_ns.push(started.elapsed().as_nanos() as u64);
                self.total_reassoc += out.reassociations as u64;
            }
        }
        self.react(time_s)
    }

    /// A parked user regaining coverage enters through the join path.
    fn admit_refreshed(&mut self, user: UserId, op: OperatorId, row: Vec<f64>) -> Result<()> {
        let ei = self.engine_index(op);
        let op_idx = if self.policy.is_sliced() { 0 } else { op.0 as usize };
        let idx = self.engines[ei].add_user(user, op_idx, row)?;
        match self.policy {
            Policy::Gllg => {
                let started = Instant::now();
                let out = solvers::gllg_join_adjust(&mut self.engines[ei], idx, &self.params)?;
                self.event_ns.push(started.elapsed().as_nanos() as u64);
                self.total_reassoc += out.reassociations as u64;
            }
            Policy::Online => {
                self.engines[ei].online_insert(idx)?;
            }
            Policy::SinrSs => {
                let best = argmax_station(&self.engines[ei].rate[idx]).expect("covered");
                self.engines[ei].apply_move(idx, best);
            }
            Policy::Dg | Policy::Glg | Policy::DgSs | Policy::Brute => {}
        }
        Ok(())
    }

    fn record(&self, time_s: f64) -> MetricsRecord {
        let num_ops = self.shares.len();
        let mut sums = vec![0.0; num_ops];
        let mut counts = vec![0usize; num_ops];
        let mut user_rates = Vec::new();
        for (ei, engine) in self.engines.iter().enumerate() {
            for i in 0..engine.len() {
                let op = if self.policy.is_sliced() { ei } else { engine.op_of[i] };
                let rate = engine.current_rate(i);
                sums[op] += rate.max(f64::MIN_POSITIVE).ln();
                counts[op] += 1;
                user_rates.push((engine.ids[i], rate));
            }
        }
        user_rates.sort_by_key(|(u, _)| *u);
        let mut operator_utils = vec![f64::NAN; num_ops];
        let mut idle_operators = Vec::new();
        let mut utility = 0.0;
        let mut any = false;
        for op in 0..num_ops {
            if counts[op] == 0 {
                idle_operators.push(OperatorId(op as u32));
                continue;
            }
            let u_o = sums[op] / counts[op] as f64;
            operator_utils[op] = u_o;
            utility += self.shares[op] * u_o;
            any = true;
        }
        MetricsRecord {
            time_s,
            utility: if any { utility } else { f64::NAN },
            operator_utils,
            idle_operators,
            active_users: self.op_of.len(),
            user_rates,
            reassociations_total: self.total_reassoc,
        }
    }
}

fn argmax_station(row: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (b, &c) in row.iter().enumerate() {
        if c <= 0.0 {
            continue;
        }
        if best.map_or(true, |(_, bc)| c > bc) {
            best = Some((b, c));
        }
    }
    best.map(|(b, _)| b)
}

/// Runs the configured scenario under one policy. All randomness derives
/// from `config.seed`; `rate_multiplier` scales every achievable rate
/// (the capacity axis of the savings search).
pub fn run_scenario(
    config: &ScenarioConfig,
    policy: Policy,
    rate_multiplier: f64,
) -> Result<RunResult> {
    config.validate()?;
    let layout = Layout::hex(config.rings, config.isd_m);
    let events = scenario::generate_events(config, &layout)?;
    let mcs = match &config.mcs_table_path {
        Some(p) => McsTable::from_file(Path::new(p))?,
        None => McsTable::default_table(),
    };
    let channel = ChannelModel::new(
        config.radio.clone(),
        config.rate_mode,
        mcs,
        mix(config.seed, 0xc4a71, 0, 0, 0),
    );
    let num_engines = if policy.is_sliced() { config.shares.len() } else { 1 };
    let engines = (0..num_engines)
        .map(|_| {
            if policy.is_sliced() {
                Working::empty(vec![1.0], layout.num_sectors())
            } else {
                Working::empty(config.shares.clone(), layout.num_sectors())
            }
        })
        .collect();
    let mut driver = Driver {
        layout,
        channel,
        policy,
        params: config.solver.clone(),
        shares: config.shares.clone(),
        mult: rate_multiplier,
        engines,
        positions: BTreeMap::new(),
        op_of: BTreeMap::new(),
        parked: BTreeSet::new(),
        total_reassoc: 0,
        event_ns: Vec::new(),
        coverage_events: 0,
    };

    let steps = (config.duration_s / config.snapshot_interval_s).floor() as usize;
    let mut records = Vec::with_capacity(steps + 1);
    let mut ev_idx = 0;
    let all_events = &events.events;
    let mut last_epoch = driver.channel.shadowing_epoch(0.0);

    for k in 0..=steps {
        let t = k as f64 * config.snapshot_interval_s;
        let mut moved = false;
        // process event groups with identical timestamps up to t
        while ev_idx < all_events.len() && all_events[ev_idx].time_s <= t + 1e-12 {
            let group_t = all_events[ev_idx].time_s;
            let mut membership_changed = false;
            while ev_idx < all_events.len()
                && (all_events[ev_idx].time_s - group_t).abs() <= 1e-12
            {
                match &all_events[ev_idx].event {
                    Event::Join { user, operator, position } => {
                        driver.positions.insert(*user, *position);
                        driver.op_of.insert(*user, *operator);
                        driver.admit(*user, *operator, group_t)?;
                        membership_changed = true;
                    }
                    Event::Leave { user } => {
                        driver.depart(*user)?;
                        driver.positions.remove(user);
                        driver.op_of.remove(user);
                        membership_changed = true;
                    }
                    Event::Move { user, position } => {
                        driver.positions.insert(*user, *position);
                        moved = true;
                    }
                }
                ev_idx += 1;
            }
            if membership_changed {
                driver.react(group_t)?;
            }
        }
        if k > 0 {
            let epoch = driver.channel.shadowing_epoch(t);
            let shadow_changed =
                driver.channel.params.shadowing_sigma_db > 0.0 && epoch != last_epoch;
            last_epoch = epoch;
            if moved || shadow_changed {
                driver.refresh(t)?;
            }
        }
        records.push(driver.record(t));
    }

    let dt = config.snapshot_interval_s;
    let download_times_s = scenario::simulate_downloads(
        records.iter().map(|r| (dt, r.user_rates.as_slice())),
        config.file_size_bits,
    );
    Ok(RunResult {
        records,
        download_times_s,
        event_handle_ns: driver.event_ns,
        total_reassociations: driver.total_reassoc,
        coverage_events: driver.coverage_events,
    })
}
