//! Radio model producing the achievable-rate matrix from geometry: path
//! loss, sectorized antenna gain, log-normal shadowing, SINR against all
//! interfering sectors, and the Shannon or MCS-threshold rate mapping.
//!
//! All randomness is derived from a master seed plus the (user, sector,
//! epoch) triple, so matrices are reproducible and rows can be computed
//! in any order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{RateMatrix, UserId};
use crate::scenario::Layout;

/// Distances below this floor are clamped before the path-loss formula,
/// which diverges as the distance goes to zero.
pub const MIN_PATH_LOSS_DISTANCE_M: f64 = 3.0;

/// Radio-link parameters. Defaults follow a dense small-cell deployment:
/// 41 dBm transmit power, -104 dBm noise, 2.5 GHz carrier, 10 MHz band,
/// 17 dBi sector antennas, 8 dB log-normal shadowing redrawn every second.
#[derive(Clone, Debug, PartialEq)]
pub struct RadioParams {
    pub tx_power_dbm: f64,
    pub noise_dbm: f64,
    pub carrier_ghz: f64,
    pub bandwidth_hz: f64,
    pub antenna_gain_dbi: f64,
    /// Gain reduction outside the 120-degree sector.
    pub front_to_back_db: f64,
    pub shadowing_sigma_db: f64,
    pub shadowing_update_s: f64,
    /// Multiplicative fast-fading on the instantaneous SINR used for MCS
    /// selection only; the average SINR drives Shannon-mode rates.
    pub fading: bool,
}

impl Default for RadioParams {
    fn default() -> Self {
        RadioParams {
            tx_power_dbm: 41.0,
            noise_dbm: -104.0,
            carrier_ghz: 2.5,
            bandwidth_hz: 1e7,
            antenna_gain_dbi: 17.0,
            front_to_back_db: 25.0,
            shadowing_sigma_db: 8.0,
            shadowing_update_s: 1.0,
            fading: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RateMode {
    Shannon,
    Mcs,
}

impl std::str::FromStr for RateMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shannon" => Ok(RateMode::Shannon),
            "mcs" => Ok(RateMode::Mcs),
            other => Err(Error::Config(format!("unknown rate mode '{other}'"))),
        }
    }
}

/// dB-domain path loss: 36.7 log10(d) + 22.7 + 26 log10(f_c), distance in
/// meters (floored at `MIN_PATH_LOSS_DISTANCE_M`), carrier in GHz.
pub fn path_loss_db(distance_m: f64, carrier_ghz: f64) -> f64 {
    debug_assert!(distance_m >= 0.0, "negative distance");
    let d = distance_m.max(MIN_PATH_LOSS_DISTANCE_M);
    36.7 * d.log10() + 22.7 + 26.0 * carrier_ghz.log10()
}

/// SINR of the serving sector against the summed received power of every
/// other sector plus noise; all inputs linear (mW).
pub fn sinr_linear(serving: usize, rx_power_mw: &[f64], noise_mw: f64) -> f64 {
    let total: f64 = rx_power_mw.iter().sum();
    let interference = total - rx_power_mw[serving];
    rx_power_mw[serving] / (interference + noise_mw)
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

/// SINR-threshold table mapping channel quality to spectral efficiency.
#[derive(Clone, Debug, PartialEq)]
pub struct McsTable {
    entries: Vec<(f64, f64)>,
}

impl McsTable {
    /// The built-in 15-entry table (see `data/mcs_default.txt`).
    pub fn default_table() -> Self {
        Self::parse(include_str!("../data/mcs_default.txt")).expect("built-in table is valid")
    }

    /// Parses the two-column "sinr_db efficiency" format with '#' comments.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut cols = line.split_whitespace();
            let parse = |s: Option<&str>| -> Result<f64> {
                s.and_then(|v| v.parse().ok()).ok_or_else(|| {
                    Error::Config(format!("mcs table line {}: expected two numbers", lineno + 1))
                })
            };
            let sinr = parse(cols.next())?;
            let eff = parse(cols.next())?;
            if cols.next().is_some() {
                return Err(Error::Config(format!(
                    "mcs table line {}: too many columns",
                    lineno + 1
                )));
            }
            entries.push((sinr, eff));
        }
        let table = McsTable { entries };
        table.validate()?;
        Ok(table)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read mcs table {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::Config("mcs table is empty".into()));
        }
        for pair in self.entries.windows(2) {
            if pair[1].0 <= pair[0].0 {
                return Err(Error::Config("mcs thresholds must strictly increase".into()));
            }
            if pair[1].1 < pair[0].1 {
                return Err(Error::Config("mcs efficiencies must not decrease".into()));
            }
        }
        for &(sinr_db, eff) in &self.entries {
            let shannon = (1.0 + db_to_linear(sinr_db)).log2();
            if eff > shannon {
                return Err(Error::Config(format!(
                    "efficiency {eff} at {sinr_db} dB exceeds the channel capacity {shannon:.4}"
                )));
            }
            if eff <= 0.0 {
                return Err(Error::Config("efficiencies must be positive".into()));
            }
        }
        Ok(())
    }

    /// Spectral efficiency of the best scheme whose threshold is met; zero
    /// (out of coverage) below the first threshold.
    pub fn efficiency(&self, sinr_db: f64) -> f64 {
        let mut eff = 0.0;
        for &(threshold, e) in &self.entries {
            if sinr_db >= threshold {
                eff = e;
            } else {
                break;
            }
        }
        eff
    }

    pub fn entries(&self) -> &[(f64, f64)] {
        &self.entries
    }
}

/// Rate for a given average SINR: Shannon capacity of the band, or the
/// stepwise MCS efficiency (zero below the lowest threshold).
pub fn achievable_rate(sinr: f64, params: &RadioParams, mode: RateMode, mcs: &McsTable) -> f64 {
    debug_assert!(sinr >= 0.0);
    match mode {
        RateMode::Shannon => params.bandwidth_hz * (1.0 + sinr).log2(),
        RateMode::Mcs => {
            if sinr <= 0.0 {
                return 0.0;
            }
            params.bandwidth_hz * mcs.efficiency(linear_to_db(sinr))
        }
    }
}

/// Rate matrix plus the users left without any positive-rate sector
/// (possible only in MCS mode).
#[derive(Clone, Debug)]
pub struct BuiltRates {
    pub matrix: RateMatrix,
    pub out_of_coverage: Vec<UserId>,
}

/// The full radio model bound to a seed: builds reproducible rate
/// matrices for user positions at a given time.
#[derive(Clone, Debug)]
pub struct ChannelModel {
    pub params: RadioParams,
    pub mode: RateMode,
    pub mcs: McsTable,
    pub seed: u64,
}

impl ChannelModel {
    pub fn new(params: RadioParams, mode: RateMode, mcs: McsTable, seed: u64) -> Self {
        ChannelModel { params, mode, mcs, seed }
    }

    fn shadowing_epoch(&self, time_s: f64) -> u64 {
        if self.params.shadowing_update_s <= 0.0 {
            0
        } else {
            (time_s / self.params.shadowing_update_s).floor() as u64
        }
    }

    /// Log-normal shadowing sample (dB) for one link at one epoch;
    /// i.i.d. per (user, sector) pair, redrawn each update period.
    pub fn shadowing_db(&self, user: UserId, sector: usize, epoch: u64) -> f64 {
        if self.params.shadowing_sigma_db <= 0.0 {
            return 0.0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.seed, 0x5had, user.0 as u64, sector as u64, epoch));
        let z: f64 = StandardNormal.sample(&mut rng);
        z * self.params.shadowing_sigma_db
    }

    fn fading_gain(&self, user: UserId, sector: usize, epoch: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.seed, 0xfade, user.0 as u64, sector as u64, epoch));
        // Rayleigh amplitude -> exponential power gain with unit mean
        let g: f64 = Exp1.sample(&mut rng);
        g
    }

    /// Received power (mW) from every sector at one position.
    pub fn received_power_mw(
        &self,
        layout: &Layout,
        user: UserId,
        position: (f64, f64),
        epoch: u64,
    ) -> Vec<f64> {
        let p = &self.params;
        (0..layout.num_sectors())
            .map(|sector| {
                let site = layout.sector_site(sector);
                let dx = position.0 - site.0;
                let dy = position.1 - site.1;
                let distance = (dx * dx + dy * dy).sqrt();
                let bearing = dy.atan2(dx).to_degrees();
                let off = angle_difference_deg(bearing, layout.sector_boresight_deg(sector));
                let antenna = if off.abs() <= 60.0 {
                    p.antenna_gain_dbi
                } else {
                    p.antenna_gain_dbi - p.front_to_back_db
                };
                let gain_db = antenna - path_loss_db(distance, p.carrier_ghz)
                    + self.shadowing_db(user, sector, epoch);
                db_to_linear(p.tx_power_dbm + gain_db)
            })
            .collect()
    }

    /// Builds the full rate matrix for the given users and time.
    pub fn build_rate_matrix(
        &self,
        layout: &Layout,
        users: &[(UserId, (f64, f64))],
        time_s: f64,
    ) -> BuiltRates {
        let mut matrix = RateMatrix::new(layout.num_sectors());
        let mut out_of_coverage = Vec::new();
        for &(user, pos) in users {
            let row = self.rate_row(layout, user, pos, time_s);
            if !row.iter().any(|r| *r > 0.0) {
                out_of_coverage.push(user);
            }
            matrix.set_row(user, row);
        }
        BuiltRates { matrix, out_of_coverage }
    }

    /// One user's achievable rate toward every sector.
    pub fn rate_row(
        &self,
        layout: &Layout,
        user: UserId,
        position: (f64, f64),
        time_s: f64,
    ) -> Vec<f64> {
        let epoch = self.shadowing_epoch(time_s);
        let rx = self.received_power_mw(layout, user, position, epoch);
        let noise_mw = db_to_linear(self.params.noise_dbm);
        (0..rx.len())
            .map(|sector| {
                let avg_sinr = sinr_linear(sector, &rx, noise_mw);
                let sinr_for_mcs = if self.params.fading && self.mode == RateMode::Mcs {
                    avg_sinr * self.fading_gain(user, sector, epoch)
                } else {
                    avg_sinr
                };
                match self.mode {
                    RateMode::Shannon => {
                        achievable_rate(avg_sinr, &self.params, RateMode::Shannon, &self.mcs)
                    }
                    RateMode::Mcs => {
                        achievable_rate(sinr_for_mcs, &self.params, RateMode::Mcs, &self.mcs)
                    }
                }
            })
            .collect()
    }
}

fn angle_difference_deg(a: f64, b: f64) -> f64 {
    let mut d = (a - b) % 360.0;
    if d > 180.0 {
        d -= 360.0;
    }
    if d < -180.0 {
        d += 360.0;
    }
    d
}

/// splitmix64-style avalanche over a tag chain; derives independent RNG
/// streams from the master seed.
pub(crate) fn mix(seed: u64, tag: u64, a: u64, b: u64, c: u64) -> u64 {
    let mut h = seed;
    for v in [tag, a, b, c] {
        h = h.wrapping_add(0x9e3779b97f4a7c15).wrapping_add(v);
        h = (h ^ (h >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94d049bb133111eb);
        h ^= h >> 31;
    }
    h
}
