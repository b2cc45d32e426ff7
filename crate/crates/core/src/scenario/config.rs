//! Flat key=value scenario configuration. Lines hold `key = value` pairs,
//! '#' starts a comment, dotted keys group related knobs, and unknown keys
//! are errors so typos never pass silently. The full key list is
//! documented in the CLI help and the README.

use std::path::Path;

use crate::channel::{RadioParams, RateMode};
use crate::error::{Error, Result};
use crate::solvers::SolverParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MobilityKind {
    Static,
    Rwp,
    Hotspot,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MobilityConfig {
    pub model: MobilityKind,
    pub speed_min_mps: f64,
    pub speed_max_mps: f64,
    pub pause_s: f64,
    pub hotspot_count: usize,
    pub hotspot_radius_m: f64,
    pub hotspot_concentration: f64,
    pub per_operator_hotspots: bool,
}

impl Default for MobilityConfig {
    fn default() -> Self {
        MobilityConfig {
            model: MobilityKind::Rwp,
            speed_min_mps: 0.5,
            speed_max_mps: 1.5,
            pause_s: 2.0,
            hotspot_count: 3,
            hotspot_radius_m: 30.0,
            hotspot_concentration: 0.5,
            per_operator_hotspots: false,
        }
    }
}

/// Everything one simulation run needs: geometry, tenants, channel,
/// mobility, churn, traffic, solver knobs and the master seed.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub rings: u32,
    pub isd_m: f64,
    pub shares: Vec<f64>,
    /// Mean concurrent users per sector; populations split by share.
    pub user_density: f64,
    pub mobility: MobilityConfig,
    /// Session arrivals per operator per second; zero disables churn.
    pub arrival_rate_per_operator: f64,
    pub mean_session_s: f64,
    pub file_size_bits: f64,
    pub seed: u64,
    pub duration_s: f64,
    pub snapshot_interval_s: f64,
    pub radio: RadioParams,
    pub rate_mode: RateMode,
    pub mcs_table_path: Option<String>,
    pub solver: SolverParams,
    pub policy: String,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            rings: 1,
            isd_m: 200.0,
            shares: equal_shares(3),
            user_density: 10.0,
            mobility: MobilityConfig::default(),
            arrival_rate_per_operator: 0.0,
            mean_session_s: 60.0,
            file_size_bits: 16e6,
            seed: 1,
            duration_s: 10.0,
            snapshot_interval_s: 1.0,
            radio: RadioParams::default(),
            rate_mode: RateMode::Shannon,
            mcs_table_path: None,
            solver: SolverParams::default(),
            policy: "gllg".into(),
        }
    }
}

pub fn equal_shares(n: usize) -> Vec<f64> {
    let mut shares = vec![1.0 / n as f64; n];
    let sum: f64 = shares.iter().sum();
    shares[0] += 1.0 - sum;
    shares
}

impl ScenarioConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut config = ScenarioConfig::default();
        for (key, value) in parse_lines(text)? {
            config.apply(&key, &value)?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    /// Applies one `key=value` override (the CLI's --set flag).
    pub fn apply_override(&mut self, setting: &str) -> Result<()> {
        let (key, value) = setting
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{setting}' is not KEY=VALUE")))?;
        self.apply(key.trim(), value.trim())
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::Config(format!("invalid {what} '{value}' for key {key}"));
        let f = || value.parse::<f64>().map_err(|_| bad("number"));
        let u = || value.parse::<u64>().map_err(|_| bad("integer"));
        let b = || match value {
            "true" | "on" | "1" => Ok(true),
            "false" | "off" | "0" => Ok(false),
            _ => Err(bad("boolean")),
        };
        match key {
            "layout.rings" => self.rings = u()? as u32,
            "layout.isd_m" => self.isd_m = f()?,
            "operators.count" => {
                let n = u()? as usize;
                if n == 0 {
                    return Err(Error::Config("operators.count must be positive".into()));
                }
                self.shares = equal_shares(n);
            }
            "operators.shares" => {
                let shares: std::result::Result<Vec<f64>, _> =
                    value.split(',').map(|s| s.trim().parse::<f64>()).collect();
                self.shares = shares.map_err(|_| bad("share list"))?;
            }
            "users.density" => self.user_density = f()?,
            "mobility.model" => {
                self.mobility.model = match value {
                    "static" => MobilityKind::Static,
                    "rwp" => MobilityKind::Rwp,
                    "hotspot" => MobilityKind::Hotspot,
                    _ => return Err(bad("mobility model")),
                }
            }
            "mobility.speed_min_mps" => self.mobility.speed_min_mps = f()?,
            "mobility.speed_max_mps" => self.mobility.speed_max_mps = f()?,
            "mobility.pause_s" => self.mobility.pause_s = f()?,
            "mobility.hotspot_count" => self.mobility.hotspot_count = u()? as usize,
            "mobility.hotspot_radius_m" => self.mobility.hotspot_radius_m = f()?,
            "mobility.hotspot_concentration" => self.mobility.hotspot_concentration = f()?,
            "mobility.per_operator_hotspots" => self.mobility.per_operator_hotspots = b()?,
            "events.arrival_rate_per_operator" => self.arrival_rate_per_operator = f()?,
            "events.mean_session_s" => self.mean_session_s = f()?,
            "traffic.file_size_mbit" => self.file_size_bits = f()? * 1e6,
            "run.duration_s" => self.duration_s = f()?,
            "run.snapshot_interval_s" => self.snapshot_interval_s = f()?,
            "run.seed" => self.seed = u()?,
            "radio.tx_power_dbm" => self.radio.tx_power_dbm = f()?,
            "radio.noise_dbm" => self.radio.noise_dbm = f()?,
            "radio.carrier_ghz" => self.radio.carrier_ghz = f()?,
            "radio.bandwidth_hz" => self.radio.bandwidth_hz = f()?,
            "radio.antenna_gain_dbi" => self.radio.antenna_gain_dbi = f()?,
            "radio.front_to_back_db" => self.radio.front_to_back_db = f()?,
            "radio.shadowing_sigma_db" => self.radio.shadowing_sigma_db = f()?,
            "radio.shadowing_update_s" => self.radio.shadowing_update_s = f()?,
            "radio.fading" => self.radio.fading = b()?,
            "channel.mode" => self.rate_mode = value.parse()?,
            "channel.mcs_table" => self.mcs_table_path = Some(value.to_string()),
            "solver.m" => self.solver.m = u()? as usize,
            "solver.epsilon_h" => self.solver.epsilon_h = f()?,
            "solver.max_iterations" => self.solver.max_iterations = Some(u()? as usize),
            "policy" => self.policy = value.to_string(),
            _ => return Err(Error::Config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.shares.is_empty() {
            return Err(Error::Config("no operators configured".into()));
        }
        let sum: f64 = self.shares.iter().sum();
        if (sum - 1.0).abs() > crate::model::SHARE_SUM_TOL {
            return Err(Error::Config(format!("operator shares sum to {sum}, expected 1")));
        }
        if self.shares.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config("operator shares must be positive".into()));
        }
        if !(self.user_density > 0.0) {
            return Err(Error::Config("users.density must be positive".into()));
        }
        if !(self.snapshot_interval_s > 0.0) {
            return Err(Error::Config("run.snapshot_interval_s must be positive".into()));
        }
        if self.duration_s < 0.0 {
            return Err(Error::Config("run.duration_s must be non-negative".into()));
        }
        if !(self.file_size_bits > 0.0) {
            return Err(Error::Config("traffic.file_size_mbit must be positive".into()));
        }
        if self.arrival_rate_per_operator > 0.0 {
            if !(self.mean_session_s > 0.0) {
                return Err(Error::Config("events.mean_session_s must be positive".into()));
            }
            let equal = self
                .shares
                .iter()
                .all(|s| (s - self.shares[0]).abs() < 1e-12);
            if !equal {
                return Err(Error::Config(
                    "session churn assumes equal operator shares; per-operator targets \
                     would need share-weighted arrival rates"
                        .into(),
                ));
            }
        }
        if !(self.mobility.hotspot_concentration >= 0.0
            && self.mobility.hotspot_concentration <= 1.0)
        {
            return Err(Error::Config("hotspot concentration must lie in [0, 1]".into()));
        }
        if self.mobility.speed_min_mps < 0.0
            || self.mobility.speed_max_mps < self.mobility.speed_min_mps
        {
            return Err(Error::Config("mobility speed range is invalid".into()));
        }
        Ok(())
    }

    /// Target concurrent population per operator: |U| = density * sectors,
    /// split proportionally to shares by largest remainder, at least one
    /// user each.
    pub fn population_per_operator(&self, num_sectors: usize) -> Vec<usize> {
        let total = (self.user_density * num_sectors as f64).round().max(1.0) as usize;
        let mut counts: Vec<usize> = self
            .shares
            .iter()
            .map(|s| (total as f64 * s).floor() as usize)
            .collect();
        let assigned: usize = counts.iter().sum();
        let mut remainders: Vec<(f64, usize)> = self
            .shares
            .iter()
            .enumerate()
            .map(|(i, s)| (total as f64 * s - counts[i] as f64, i))
            .collect();
        remainders.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        for k in 0..total.saturating_sub(assigned) {
            counts[remainders[k % remainders.len()].1] += 1;
        }
        // every operator keeps at least one user
        for i in 0..counts.len() {
            while counts[i] == 0 {
                let donor = counts
                    .iter()
                    .enumerate()
                    .max_by_key(|(_, c)| **c)
                    .map(|(j, _)| j)
                    .unwrap();
                if counts[donor] <= 1 {
                    break;
                }
                counts[donor] -= 1;
                counts[i] += 1;
            }
        }
        counts
    }

    /// The arrival rate that keeps the mean churning population at the
    /// density target (population / mean session length).
    pub fn calibrated_arrival_rate(&self, num_sectors: usize) -> f64 {
        let per_op = self.population_per_operator(num_sectors);
        per_op[0] as f64 / self.mean_session_s
    }
}

fn parse_lines(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
        pairs.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_a_full_config() {
        let text = "
            # world
            layout.rings = 2
            operators.shares = 0.5, 0.3, 0.2
            users.density = 5
            mobility.model = hotspot
            mobility.hotspot_concentration = 0.8
            events.arrival_rate_per_operator = 0
            traffic.file_size_mbit = 4
            run.seed = 99     # inline comment
            channel.mode = mcs
            solver.m = 2
            policy = dg
        ";
        let cfg = ScenarioConfig::from_text(text).unwrap();
        assert_eq!(cfg.rings, 2);
        assert_eq!(cfg.shares, vec![0.5, 0.3, 0.2]);
        assert_eq!(cfg.mobility.model, MobilityKind::Hotspot);
        assert_eq!(cfg.seed, 99);
        assert_eq!(cfg.rate_mode, crate::channel::RateMode::Mcs);
        assert_eq!(cfg.solver.m, 2);
        assert_eq!(cfg.policy, "dg");
        assert_eq!(cfg.file_size_bits, 4e6);
    }

    #[test]
    fn unknown_keys_are_errors() {
        let err = ScenarioConfig::from_text("users.densty = 5").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("users.densty"));
    }

    #[test]
    fn malformed_values_are_errors() {
        assert!(ScenarioConfig::from_text("users.density = many").is_err());
        assert!(ScenarioConfig::from_text("users.density").is_err());
        assert!(ScenarioConfig::from_text("operators.shares = 0.5, 0.2").is_err());
        assert!(ScenarioConfig::from_text("radio.fading = maybe").is_err());
    }

    #[test]
    fn overrides_apply_after_file() {
        let mut cfg = ScenarioConfig::from_text("users.density = 5").unwrap();
        cfg.apply_override("users.density=7.5").unwrap();
        assert_eq!(cfg.user_density, 7.5);
        assert!(cfg.apply_override("nonsense").is_err());
    }

    #[test]
    fn population_split_follows_shares() {
        let mut cfg = ScenarioConfig::default();
        cfg.shares = vec![0.6, 0.4];
        cfg.user_density = 10.0;
        let pops = cfg.population_per_operator(3); // 30 users
        assert_eq!(pops, vec![18, 12]);

        cfg.shares = equal_shares(3);
        let pops = cfg.population_per_operator(7); // 70 users over 3 ops
        assert_eq!(pops.iter().sum::<usize>(), 70);
        assert!(pops.iter().all(|&p| p == 23 || p == 24));
    }

    #[test]
    fn churn_with_unequal_shares_is_rejected() {
        let mut cfg = ScenarioConfig::default();
        cfg.shares = vec![0.6, 0.4];
        cfg.arrival_rate_per_operator = 0.5;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
