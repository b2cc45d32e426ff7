//! Simulation worlds: hexagonal sectorized layouts, user placement and
//! mobility, session churn, and the constant file-download traffic model.
//! Everything is driven by seeded RNG streams so a (config, seed) pair
//! reproduces the exact same event stream.

pub mod config;

pub use config::{MobilityConfig, MobilityKind, ScenarioConfig};

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::channel::mix;
use crate::error::{Error, Result};
use crate::model::{OperatorId, UserId};

/// Hexagonal grid of sites, three 120-degree sectors each, boresights at
/// 30 / 150 / 270 degrees.
#[derive(Clone, Debug)]
pub struct Layout {
    sites: Vec<(f64, f64)>,
    isd_m: f64,
}

pub const SECTORS_PER_SITE: usize = 3;
pub const SECTOR_BORESIGHTS_DEG: [f64; 3] = [30.0, 150.0, 270.0];

impl Layout {
    /// `rings` concentric hexagonal rings around a central site:
    /// 0 -> 1 site (3 sectors), 1 -> 7 sites (21), 2 -> 19 sites (57).
    pub fn hex(rings: u32, isd_m: f64) -> Layout {
        let r = rings as i64;
        let mut axial = Vec::new();
        for q in -r..=r {
            for s in -r..=r {
                let dist = (q.abs() + s.abs() + (q + s).abs()) / 2;
                if dist <= r {
                    axial.push((dist, q, s));
                }
            }
        }
        axial.sort();
        let sites = axial
            .into_iter()
            .map(|(_, q, s)| {
                let x = isd_m * (q as f64 + s as f64 / 2.0);
                let y = isd_m * (s as f64 * 3f64.sqrt() / 2.0);
                (x, y)
            })
            .collect();
        Layout { sites, isd_m }
    }

    pub fn num_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn num_sectors(&self) -> usize {
        self.sites.len() * SECTORS_PER_SITE
    }

    pub fn sites(&self) -> &[(f64, f64)] {
        &self.sites
    }

    pub fn isd_m(&self) -> f64 {
        self.isd_m
    }

    pub fn sector_site(&self, sector: usize) -> (f64, f64) {
        self.sites[sector / SECTORS_PER_SITE]
    }

    pub fn sector_boresight_deg(&self, sector: usize) -> f64 {
        SECTOR_BORESIGHTS_DEG[sector % SECTORS_PER_SITE]
    }

    /// Rectangle circumscribing the sites plus half an inter-site distance
    /// of margin; users live (and reflect) inside it.
    pub fn bounds(&self) -> Bounds {
        let mut min = (f64::INFINITY, f64::INFINITY);
        let mut max = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for &(x, y) in &self.sites {
            min.0 = min.0.min(x);
            min.1 = min.1.min(y);
            max.0 = max.0.max(x);
            max.1 = max.1.max(y);
        }
        let margin = self.isd_m / 2.0;
        Bounds {
            min: (min.0 - margin, min.1 - margin),
            max: (max.0 + margin, max.1 + margin),
        }
    }
}

/// Convenience free function matching the default 200 m inter-site
/// distance.
pub fn build_layout(rings: u32) -> Layout {
    Layout::hex(rings, 200.0)
}

#[derive(Clone, Copy, Debug)]
pub struct Bounds {
    pub min: (f64, f64),
    pub max: (f64, f64),
}

impl Bounds {
    pub fn sample_uniform(&self, rng: &mut impl Rng) -> (f64, f64) {
        (
            rng.random_range(self.min.0..self.max.0),
            rng.random_range(self.min.1..self.max.1),
        )
    }

    pub fn clamp(&self, p: (f64, f64)) -> (f64, f64) {
        (p.0.clamp(self.min.0, self.max.0), p.1.clamp(self.min.1, self.max.1))
    }
}

/// Per-user random-waypoint walker state.
#[derive(Clone, Debug)]
pub struct RwpState {
    pub position: (f64, f64),
    pub waypoint: (f64, f64),
    pub speed_mps: f64,
    pub pause_left_s: f64,
}

/// Initializes a walker near its long-run behavior: the position is drawn
/// uniformly along a segment between two uniform waypoints (capturing the
/// center bias of the stationary regime) and the walk continues toward the
/// far end.
pub fn rwp_init(bounds: &Bounds, mob: &MobilityConfig, rng: &mut impl Rng) -> RwpState {
    let a = bounds.sample_uniform(rng);
    let b = bounds.sample_uniform(rng);
    let t: f64 = rng.random_range(0.0..1.0);
    let position = (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1));
    RwpState {
        position,
        waypoint: b,
        speed_mps: sample_speed(mob, rng),
        pause_left_s: 0.0,
    }
}

fn sample_speed(mob: &MobilityConfig, rng: &mut impl Rng) -> f64 {
    if mob.speed_max_mps > mob.speed_min_mps {
        rng.random_range(mob.speed_min_mps..mob.speed_max_mps)
    } else {
        mob.speed_min_mps
    }
}

/// Advances one walker by `dt`: move toward the waypoint, pause on
/// arrival, then pick a fresh waypoint and speed. Deterministic under the
/// caller's seeded RNG.
pub fn rwp_step(
    state: &mut RwpState,
    dt: f64,
    bounds: &Bounds,
    mob: &MobilityConfig,
    rng: &mut impl Rng,
) -> (f64, f64) {
    let mut remaining = dt;
    while remaining > 0.0 {
        if state.pause_left_s > 0.0 {
            let wait = state.pause_left_s.min(remaining);
            state.pause_left_s -= wait;
            remaining -= wait;
            if state.pause_left_s > 0.0 {
                break;
            }
            state.waypoint = bounds.sample_uniform(rng);
            state.speed_mps = sample_speed(mob, rng);
            continue;
        }
        if state.speed_mps <= 0.0 {
            break;
        }
        let dx = state.waypoint.0 - state.position.0;
        let dy = state.waypoint.1 - state.position.1;
        let dist = (dx * dx + dy * dy).sqrt();
        let eta = dist / state.speed_mps;
        if eta > remaining {
            let step = state.speed_mps * remaining / dist;
            state.position.0 += dx * step;
            state.position.1 += dy * step;
            remaining = 0.0;
        } else {
            state.position = state.waypoint;
            remaining -= eta;
            state.pause_left_s = mob.pause_s;
            if mob.pause_s <= 0.0 {
                state.waypoint = bounds.sample_uniform(rng);
                state.speed_mps = sample_speed(mob, rng);
            }
        }
    }
    state.position = bounds.clamp(state.position);
    state.position
}

/// Draws `n` positions from the hotspot mixture: a fraction `theta` lands
/// Gaussian around uniformly chosen hotspot centers, the rest is uniform.
/// `theta = 0` degenerates to uniform placement.
pub fn hotspot_positions(
    n: usize,
    centers: &[(f64, f64)],
    radius_m: f64,
    theta: f64,
    bounds: &Bounds,
    rng: &mut impl Rng,
) -> Vec<(f64, f64)> {
    use rand_distr::StandardNormal;
    (0..n)
        .map(|_| {
            if !centers.is_empty() && rng.random_range(0.0..1.0) < theta {
                let c = centers[rng.random_range(0..centers.len())];
                let zx: f64 = StandardNormal.sample(rng);
                let zy: f64 = StandardNormal.sample(rng);
                bounds.clamp((c.0 + zx * radius_m, c.1 + zy * radius_m))
            } else {
                bounds.sample_uniform(rng)
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub enum Event {
    Join { user: UserId, operator: OperatorId, position: (f64, f64) },
    Leave { user: UserId },
    Move { user: UserId, position: (f64, f64) },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimedEvent {
    pub time_s: f64,
    pub event: Event,
}

/// Time-ordered world events; ties keep a fixed construction order
/// (joins, then leaves, then moves), so replay is total and deterministic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EventStream {
    pub events: Vec<TimedEvent>,
}

impl EventStream {
    /// Joins are unique, leave/move only touch present users, times are
    /// non-decreasing and within the horizon.
    pub fn validate(&self, duration_s: f64) -> Result<()> {
        let mut present = BTreeMap::new();
        let mut last = 0.0f64;
        for te in &self.events {
            if te.time_s < last || te.time_s > duration_s {
                return Err(Error::InvalidInstance(format!(
                    "event at {} out of order or past the horizon",
                    te.time_s
                )));
            }
            last = te.time_s;
            match &te.event {
                Event::Join { user, .. } => {
                    if present.insert(*user, ()).is_some() {
                        return Err(Error::InvalidInstance(format!("user {user} joined twice")));
                    }
                }
                Event::Leave { user } => {
                    if present.remove(user).is_none() {
                        return Err(Error::InvalidInstance(format!(
                            "leave for absent user {user}"
                        )));
                    }
                }
                Event::Move { user, .. } => {
                    if !present.contains_key(user) {
                        return Err(Error::InvalidInstance(format!(
                            "move for absent user {user}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

struct SessionPlan {
    user: UserId,
    operator: OperatorId,
    join_s: f64,
    leave_s: Option<f64>,
}

/// Generates the world's event stream: the initial population (sized by
/// density and shares), optional Poisson session churn with exponential
/// holding times, and per-snapshot Move events from the mobility model.
pub fn generate_events(config: &ScenarioConfig, layout: &Layout) -> Result<EventStream> {
    config.validate()?;
    let bounds = layout.bounds();
    let mut churn_rng = ChaCha8Rng::seed_from_u64(mix(config.seed, 0xc4u64, 0, 0, 0));
    let mut place_rng = ChaCha8Rng::seed_from_u64(mix(config.seed, 0x91ace, 0, 0, 0));

    let populations = config.population_per_operator(layout.num_sectors());
    let mut sessions: Vec<SessionPlan> = Vec::new();
    let mut next_id: u32 = 0;
    let churn = config.arrival_rate_per_operator > 0.0;
    let holding = if churn {
        Some(Exp::new(1.0 / config.mean_session_s).map_err(|_| {
            Error::Config("mean_session_s must be positive".into())
        })?)
    } else {
        None
    };

    for (op, &n_o) in populations.iter().enumerate() {
        let operator = OperatorId(op as u32);
        for _ in 0..n_o {
            let user = UserId(next_id);
            next_id += 1;
            let leave_s = holding.map(|h| h.sample(&mut churn_rng));
            sessions.push(SessionPlan { user, operator, join_s: 0.0, leave_s });
        }
        if churn {
            let mut t = 0.0;
            loop {
                let gap: f64 = Exp::new(config.arrival_rate_per_operator)
                    .expect("positive arrival rate")
                    .sample(&mut churn_rng);
                t += gap;
                if t >= config.duration_s {
                    break;
                }
                let user = UserId(next_id);
                next_id += 1;
                let hold = holding.expect("churn enabled").sample(&mut churn_rng);
                sessions.push(SessionPlan { user, operator, join_s: t, leave_s: Some(hold + t) });
            }
        }
    }

    // Hotspot centers, shared or per operator.
    let hotspot_centers: Vec<Vec<(f64, f64)>> = match config.mobility.model {
        MobilityKind::Hotspot => {
            let shared: Vec<(f64, f64)> = (0..config.mobility.hotspot_count)
                .map(|_| bounds.sample_uniform(&mut place_rng))
                .collect();
            (0..populations.len())
                .map(|_| {
                    if config.mobility.per_operator_hotspots {
                        (0..config.mobility.hotspot_count)
                            .map(|_| bounds.sample_uniform(&mut place_rng))
                            .collect()
                    } else {
                        shared.clone()
                    }
                })
                .collect()
        }
        _ => vec![Vec::new(); populations.len()],
    };

    // Initial positions and walker states.
    let mut walkers: BTreeMap<UserId, RwpState> = BTreeMap::new();
    let mut positions: BTreeMap<UserId, (f64, f64)> = BTreeMap::new();
    for s in &sessions {
        let mut user_rng = ChaCha8Rng::seed_from_u64(mix(config.seed, 0x30b, s.user.0 as u64, 0, 0));
        let pos = match config.mobility.model {
            MobilityKind::Static => bounds.sample_uniform(&mut user_rng),
            MobilityKind::Rwp => {
                let st = rwp_init(&bounds, &config.mobility, &mut user_rng);
                let p = st.position;
                walkers.insert(s.user, st);
                p
            }
            MobilityKind::Hotspot => hotspot_positions(
                1,
                &hotspot_centers[s.operator.0 as usize],
                config.mobility.hotspot_radius_m,
                config.mobility.hotspot_concentration,
                &bounds,
                &mut user_rng,
            )[0],
        };
        positions.insert(s.user, pos);
    }

    let mut events: Vec<TimedEvent> = Vec::new();
    for s in &sessions {
        events.push(TimedEvent {
            time_s: s.join_s,
            event: Event::Join {
                user: s.user,
                operator: s.operator,
                position: positions[&s.user],
            },
        });
    }
    for s in &sessions {
        if let Some(leave) = s.leave_s {
            if leave <= config.duration_s {
                events.push(TimedEvent { time_s: leave, event: Event::Leave { user: s.user } });
            }
        }
    }

    // Moves on the snapshot grid, random-waypoint model only.
    if matches!(config.mobility.model, MobilityKind::Rwp) {
        let dt = config.snapshot_interval_s;
        let steps = (config.duration_s / dt).floor() as usize;
        for k in 1..=steps {
            let t = k as f64 * dt;
            for s in &sessions {
                let joined_before = s.join_s < t;
                let still_here = s.leave_s.map_or(true, |l| l > t);
                if !(joined_before && still_here) {
                    continue;
                }
                let mut user_rng =
                    ChaCha8Rng::seed_from_u64(mix(config.seed, 0x30b, s.user.0 as u64, k as u64, 1));
                let walker = walkers.entry(s.user).or_insert_with(|| {
                    let mut init_rng =
                        ChaCha8Rng::seed_from_u64(mix(config.seed, 0x30b, s.user.0 as u64, 0, 0));
                    rwp_init(&bounds, &config.mobility, &mut init_rng)
                });
                let pos = rwp_step(walker, dt, &bounds, &config.mobility, &mut user_rng);
                events.push(TimedEvent { time_s: t, event: Event::Move { user: s.user, position: pos } });
            }
        }
    }

    events.sort_by(|a, b| a.time_s.partial_cmp(&b.time_s).unwrap());
    let stream = EventStream { events };
    stream.validate(config.duration_s)?;
    Ok(stream)
}

/// Turns per-snapshot rate trajectories into completed file-download
/// durations: every user downloads back-to-back files of the given size,
/// consuming her allocated rate; unfinished files at the horizon are
/// dropped.
pub fn simulate_downloads<'a>(
    steps: impl IntoIterator<Item = (f64, &'a [(UserId, f64)])>,
    file_size_bits: f64,
) -> Vec<f64> {
    assert!(file_size_bits > 0.0);
    struct DownloadState {
        remaining_bits: f64,
        started_s: f64,
    }
    let mut by_user: BTreeMap<UserId, DownloadState> = BTreeMap::new();
    let mut completions = Vec::new();
    let mut now = 0.0f64;
    for (dt, rates) in steps {
        for &(user, rate) in rates {
            let st = by_user
                .entry(user)
                .or_insert(DownloadState { remaining_bits: file_size_bits, started_s: now });
            if rate <= 0.0 {
                continue;
            }
            let mut offset = 0.0;
            loop {
                let finish_in = st.remaining_bits / rate;
                if offset + finish_in <= dt {
                    offset += finish_in;
                    completions.push(now + offset - st.started_s);
                    st.started_s = now + offset;
                    st.remaining_bits = file_size_bits;
                } else {
                    st.remaining_bits -= rate * (dt - offset);
                    break;
                }
            }
        }
        now += dt;
    }
    completions
}
