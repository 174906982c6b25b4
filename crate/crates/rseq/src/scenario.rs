//! Scenario configuration: one TOML file naming the input data and housing
//! every model parameter, with a `[mode.XX]` table per travel role.
//!
//! ```toml
//! net = "grid_net.tntp"
//! trips = "grid_trips.tntp"
//! modes = "grid_modes.txt"      # optional availability sidecar
//! output = "out/grid"
//!
//! capacity = 2
//! max_passengers = 2
//! detour_factor = 0.0
//!
//! [mode.DA]
//! alpha = 1.0
//! beta = 4.0
//! ```
//!
//! Relative paths resolve against the directory containing the config file.
//! Solver tolerances, iteration caps and penalty constants all have defaults
//! ([`crate::tolerances`]); a config only states what it changes. The
//! availability sidecar lists one OD per line with its comma-separated open
//! modes; ODs not listed (and every OD when no sidecar is named) may use all
//! four.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use serde::Deserialize;

use crate::assign::SolveConfig;
use crate::hypernet::OdDemand;
use crate::matchgen::{GenConfig, OdPair};
use crate::netio::{self, CostModel, Mode, ModeCostParams, NetioError, Network, NodeId};

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{path}: {err}")]
    Parse { path: String, err: String },
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Netio(#[from] NetioError),
}

/// Which parameter a sensitivity sweep varies.
///
/// `NuDRd` moves the platform's distance price: the driver compensation
/// `nu_d` of RD, with the passenger fare `nu_d` of RP held at half of it.
/// `AlphaDriver` moves the driver value of time, applied to DA and RD
/// together.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    NuDRd,
    AlphaDriver,
}

impl SweepParam {
    pub fn parse(s: &str) -> Option<SweepParam> {
        match s.trim().to_ascii_lowercase().as_str() {
            "nu_d_rd" | "nu_d" => Some(SweepParam::NuDRd),
            "alpha_driver" | "alpha" => Some(SweepParam::AlphaDriver),
            _ => None,
        }
    }

    pub fn key(&self) -> &'static str {
        match self {
            SweepParam::NuDRd => "nu_d_rd",
            SweepParam::AlphaDriver => "alpha_driver",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub param: SweepParam,
    pub from: f64,
    pub to: f64,
    pub steps: usize,
}

impl SweepSpec {
    /// Inclusive evenly spaced grid; a single step yields just `from`.
    pub fn grid(&self) -> Vec<f64> {
        if self.steps <= 1 {
            return vec![self.from];
        }
        let h = (self.to - self.from) / (self.steps - 1) as f64;
        (0..self.steps).map(|i| self.from + h * i as f64).collect()
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        if self.steps == 0 {
            return Err(ScenarioError::Validation("sweep needs at least one step".into()));
        }
        if !(self.from.is_finite() && self.to.is_finite()) || self.from > self.to {
            return Err(ScenarioError::Validation(format!(
                "sweep range [{}, {}] is empty or not finite",
                self.from, self.to
            )));
        }
        Ok(())
    }
}

/// A parsed and validated scenario.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    /// File stem of the config, used to head reports.
    pub name: String,
    pub net_path: PathBuf,
    pub trips_path: PathBuf,
    pub modes_path: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub cost_model: CostModel,
    pub match_config: GenConfig,
    pub solve_config: SolveConfig,
    /// Passenger-car equivalent of one transit rider in the VKT/VHT report.
    pub pt_pce: f64,
    /// Worker threads; 0 lets the runtime decide.
    pub threads: usize,
    pub deterministic: bool,
    /// Emit the per-iteration gap trace file.
    pub gap_trace: bool,
    pub sweep: Option<SweepSpec>,
}

/// Loaded network and demand, ready for pool generation and solving.
#[derive(Debug)]
pub struct Instance {
    pub network: Network,
    pub demands: Vec<OdDemand>,
    /// ODs whose travelers may drive for the platform.
    pub driver_ods: Vec<OdPair>,
    /// ODs whose travelers may ride as pooled passengers.
    pub passenger_ods: Vec<OdPair>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
struct RawMode {
    #[serde(default = "one")]
    alpha: f64,
    beta: f64,
    tau_t: f64,
    tau_d: f64,
    nu_t: f64,
    nu_d: f64,
    fixed: f64,
}

impl RawMode {
    fn into_params(self) -> ModeCostParams {
        ModeCostParams {
            alpha: self.alpha,
            beta: self.beta,
            tau_t: self.tau_t,
            tau_d: self.tau_d,
            nu_t: self.nu_t,
            nu_d: self.nu_d,
            fixed: self.fixed,
        }
    }
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawModes {
    #[serde(rename = "DA", default)]
    da: RawMode,
    #[serde(rename = "RD", default)]
    rd: RawMode,
    #[serde(rename = "RP", default)]
    rp: RawMode,
    #[serde(rename = "PT", default)]
    pt: RawMode,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    param: String,
    from: f64,
    to: f64,
    steps: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    net: String,
    trips: String,
    modes: Option<String>,
    output: Option<String>,

    #[serde(default)]
    pt_congested_time: bool,
    #[serde(default = "defaults::pt_pce")]
    pt_pce: f64,

    #[serde(default = "defaults::capacity")]
    capacity: u8,
    #[serde(default = "defaults::max_passengers")]
    max_passengers: u8,
    #[serde(default = "defaults::detour_factor")]
    detour_factor: f64,
    min_saving: Option<f64>,
    #[serde(default)]
    max_candidates_per_driver: usize,
    #[serde(default)]
    max_sequences: usize,

    #[serde(default = "defaults::eps_mode")]
    eps_mode: f64,
    #[serde(default = "defaults::eps_route")]
    eps_route: f64,
    #[serde(default = "defaults::eps_outer")]
    eps_outer: f64,
    #[serde(default = "defaults::inner_cap")]
    inner_cap: usize,
    #[serde(default = "defaults::outer_cap")]
    outer_cap: usize,
    #[serde(default = "defaults::sigma1")]
    sigma1: f64,
    #[serde(default = "defaults::sigma2")]
    sigma2: f64,
    #[serde(default = "defaults::gamma_grow")]
    gamma_grow: f64,
    #[serde(default = "defaults::gamma_shrink")]
    gamma_shrink: f64,
    #[serde(default)]
    check_invariants: bool,

    #[serde(default)]
    threads: usize,
    #[serde(default)]
    deterministic: bool,
    #[serde(default)]
    gap_trace: bool,

    mode: RawModes,
    sweep: Option<RawSweep>,
}

mod defaults {
    use crate::tolerances;

    pub fn pt_pce() -> f64 {
        3.0
    }
    pub fn capacity() -> u8 {
        2
    }
    pub fn max_passengers() -> u8 {
        2
    }
    pub fn detour_factor() -> f64 {
        1.5
    }
    pub fn eps_mode() -> f64 {
        tolerances::EPS_MODE
    }
    pub fn eps_route() -> f64 {
        tolerances::EPS_ROUTE
    }
    pub fn eps_outer() -> f64 {
        tolerances::EPS_OUTER
    }
    pub fn inner_cap() -> usize {
        tolerances::INNER_CAP
    }
    pub fn outer_cap() -> usize {
        tolerances::OUTER_CAP
    }
    pub fn sigma1() -> f64 {
        tolerances::PENALTY_GROWTH
    }
    pub fn sigma2() -> f64 {
        tolerances::PENALTY_SHRINK_RATIO
    }
    pub fn gamma_grow() -> f64 {
        1.9
    }
    pub fn gamma_shrink() -> f64 {
        0.1
    }
}

impl ScenarioConfig {
    pub fn from_file(path: &Path) -> Result<Self, ScenarioError> {
        let text = fs::read_to_string(path)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "scenario".into());
        Self::from_toml(&text, base, name).map_err(|e| match e {
            ScenarioError::Parse { err, .. } => ScenarioError::Parse {
                path: path.display().to_string(),
                err,
            },
            other => other,
        })
    }

    /// Parses config text with `base` as the directory for relative paths.
    pub fn from_toml(text: &str, base: &Path, name: String) -> Result<Self, ScenarioError> {
        let raw: RawScenario = toml::from_str(text).map_err(|e| ScenarioError::Parse {
            path: String::new(),
            err: e.to_string(),
        })?;

        let positive = |v: f64, what: &str| -> Result<(), ScenarioError> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(ScenarioError::Validation(format!("{what} must be positive, got {v}")))
            }
        };
        positive(raw.eps_mode, "eps_mode")?;
        positive(raw.eps_route, "eps_route")?;
        positive(raw.eps_outer, "eps_outer")?;
        positive(raw.sigma1, "sigma1")?;
        positive(raw.gamma_grow, "gamma_grow")?;
        positive(raw.gamma_shrink, "gamma_shrink")?;
        if raw.inner_cap == 0 || raw.outer_cap == 0 {
            return Err(ScenarioError::Validation("iteration caps must be at least 1".into()));
        }
        if !(raw.sigma2 > 0.0 && raw.sigma2 < 1.0) {
            return Err(ScenarioError::Validation(format!(
                "sigma2 must lie in (0, 1), got {}",
                raw.sigma2
            )));
        }
        if raw.detour_factor < 0.0 {
            return Err(ScenarioError::Validation("detour_factor must be non-negative".into()));
        }
        if raw.pt_pce < 0.0 {
            return Err(ScenarioError::Validation("pt_pce must be non-negative".into()));
        }
        if raw.max_passengers == 0 {
            return Err(ScenarioError::Validation("max_passengers must be at least 1".into()));
        }

        let cost_model = CostModel {
            params: [
                raw.mode.da.into_params(),
                raw.mode.rd.into_params(),
                raw.mode.rp.into_params(),
                raw.mode.pt.into_params(),
            ],
            pt_congested_time: raw.pt_congested_time,
        };
        cost_model.validate()?;

        let sweep = match raw.sweep {
            None => None,
            Some(s) => {
                let param = SweepParam::parse(&s.param).ok_or_else(|| {
                    ScenarioError::Validation(format!(
                        "unknown sweep parameter {:?} (expected nu_d_rd or alpha_driver)",
                        s.param
                    ))
                })?;
                let spec = SweepSpec { param, from: s.from, to: s.to, steps: s.steps };
                spec.validate()?;
                Some(spec)
            }
        };

        Ok(ScenarioConfig {
            name,
            net_path: base.join(&raw.net),
            trips_path: base.join(&raw.trips),
            modes_path: raw.modes.as_ref().map(|m| base.join(m)),
            output_dir: base.join(raw.output.as_deref().unwrap_or("out")),
            cost_model,
            match_config: GenConfig {
                capacity: raw.capacity,
                max_passengers: raw.max_passengers,
                detour_factor: raw.detour_factor,
                min_saving: raw.min_saving,
                max_candidates_per_driver: raw.max_candidates_per_driver,
                max_sequences: raw.max_sequences,
            },
            solve_config: SolveConfig {
                eps_mode: raw.eps_mode,
                eps_route: raw.eps_route,
                eps_outer: raw.eps_outer,
                inner_cap: raw.inner_cap,
                outer_cap: raw.outer_cap,
                sigma1: raw.sigma1,
                sigma2: raw.sigma2,
                gamma_grow: raw.gamma_grow,
                gamma_shrink: raw.gamma_shrink,
                check_invariants: raw.check_invariants,
            },
            pt_pce: raw.pt_pce,
            threads: raw.threads,
            deterministic: raw.deterministic,
            gap_trace: raw.gap_trace,
            sweep,
        })
    }

    /// Reads the network, trips and availability files into one instance.
    pub fn load_instance(&self) -> Result<Instance, ScenarioError> {
        let network = netio::parse_network(&self.net_path)?;
        let trips = netio::parse_trips(&self.trips_path)?;
        let availability = match &self.modes_path {
            Some(p) => Some(parse_modes_file(p)?),
            None => None,
        };

        let mut demands = Vec::with_capacity(trips.len());
        let mut seen: Vec<OdPair> = Vec::new();
        for (o, d, q) in trips.pairs() {
            let od = OdPair { o, d };
            let available = match &availability {
                None => [true; 4],
                Some(map) => {
                    seen.push(od);
                    map.get(&od).copied().unwrap_or([true; 4])
                }
            };
            if !available.iter().any(|&a| a) {
                return Err(ScenarioError::Validation(format!(
                    "OD {}->{} has demand {q} but no available mode",
                    o, d
                )));
            }
            demands.push(OdDemand { od, total: q, available });
        }
        if let Some(map) = &availability {
            for od in map.keys() {
                if !seen.contains(od) {
                    warn!("availability entry {}->{} has no demand; ignored", od.o, od.d);
                }
            }
        }

        let driver_ods: Vec<OdPair> =
            demands.iter().filter(|d| d.allows(Mode::Rd)).map(|d| d.od).collect();
        let passenger_ods: Vec<OdPair> =
            demands.iter().filter(|d| d.allows(Mode::Rp)).map(|d| d.od).collect();

        Ok(Instance { network, demands, driver_ods, passenger_ods })
    }

    /// Sets the swept parameter to `v` and revalidates the cost model.
    pub fn apply_sweep_value(&mut self, param: SweepParam, v: f64) -> Result<(), ScenarioError> {
        match param {
            SweepParam::NuDRd => {
                self.cost_model.params[Mode::Rd.index()].nu_d = v;
                self.cost_model.params[Mode::Rp.index()].nu_d = 0.5 * v;
            }
            SweepParam::AlphaDriver => {
                self.cost_model.params[Mode::Da.index()].alpha = v;
                self.cost_model.params[Mode::Rd.index()].alpha = v;
            }
        }
        self.cost_model.validate()?;
        Ok(())
    }
}

/// Availability sidecar: `origin destination MODE,MODE` per line, `#`
/// comments. Duplicate ODs and unknown mode names are errors.
fn parse_modes_file(path: &Path) -> Result<BTreeMap<OdPair, [bool; 4]>, ScenarioError> {
    let text = fs::read_to_string(path)?;
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (o, d, modes) = match (parts.next(), parts.next(), parts.next()) {
            (Some(o), Some(d), Some(m)) if parts.next().is_none() => (o, d, m),
            _ => {
                return Err(ScenarioError::Parse {
                    path: path.display().to_string(),
                    err: format!("line {}: expected 'origin destination MODES'", i + 1),
                })
            }
        };
        let parse_node = |s: &str| -> Result<NodeId, ScenarioError> {
            s.parse::<u32>().map(NodeId).map_err(|_| ScenarioError::Parse {
                path: path.display().to_string(),
                err: format!("line {}: bad node id {s:?}", i + 1),
            })
        };
        let od = OdPair { o: parse_node(o)?, d: parse_node(d)? };
        let mut available = [false; 4];
        for tok in modes.split(',') {
            let m = Mode::parse(tok).ok_or_else(|| ScenarioError::Parse {
                path: path.display().to_string(),
                err: format!("line {}: unknown mode {tok:?}", i + 1),
            })?;
            available[m.index()] = true;
        }
        if map.insert(od, available).is_some() {
            return Err(ScenarioError::Parse {
                path: path.display().to_string(),
                err: format!("line {}: duplicate OD {}->{}", i + 1, od.o, od.d),
            });
        }
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use std::io::Write;

    fn data_dir() -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("data")
    }

    #[test]
    fn grid_config_matches_bundled_fixture() {
        let cfg = ScenarioConfig::from_file(&data_dir().join("grid.toml")).unwrap();
        assert_eq!(cfg.cost_model.params, fixtures::grid_cost_model().params);
        assert_eq!(cfg.cost_model.pt_congested_time, true);
        assert_eq!(cfg.match_config, fixtures::grid_match_config());

        let inst = cfg.load_instance().unwrap();
        let net = fixtures::grid_network();
        assert_eq!(inst.network.links, net.links);
        assert_eq!(inst.demands, fixtures::grid_demands());
        assert_eq!(inst.driver_ods, fixtures::grid_driver_ods());
        assert_eq!(inst.passenger_ods, fixtures::grid_passenger_ods());
    }

    #[test]
    fn sioux_falls_config_loads() {
        let cfg = ScenarioConfig::from_file(&data_dir().join("siouxfalls.toml")).unwrap();
        let inst = cfg.load_instance().unwrap();
        assert_eq!(inst.network.node_count(), 24);
        assert_eq!(inst.network.links.len(), 76);
        assert_eq!(inst.demands.len(), 528);
        let total: f64 = inst.demands.iter().map(|d| d.total).sum();
        assert!((total - 360_600.0).abs() < 1e-6, "total {total}");
        // No sidecar: every OD may use all four modes.
        assert!(inst.demands.iter().all(|d| d.available == [true; 4]));
    }

    fn write_tmp(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        let mut f = fs::File::create(&p).unwrap();
        f.write_all(text.as_bytes()).unwrap();
        p
    }

    const TINY_NET: &str = "<NUMBER OF NODES> 2\n<END OF METADATA>\n1 2 1000 5 5 0.15 4 0 0 1 ;\n";
    const TINY_TRIPS: &str = "<END OF METADATA>\nOrigin 1\n 2 : 10;\n";

    #[test]
    fn defaults_fill_unstated_keys() {
        let dir = tempfile::tempdir().unwrap();
        write_tmp(dir.path(), "n.tntp", TINY_NET);
        write_tmp(dir.path(), "t.tntp", TINY_TRIPS);
        let cfg_path = write_tmp(
            dir.path(),
            "s.toml",
            "net = \"n.tntp\"\ntrips = \"t.tntp\"\n[mode.DA]\n[mode.RD]\n[mode.RP]\n[mode.PT]\n",
        );
        let cfg = ScenarioConfig::from_file(&cfg_path).unwrap();
        assert_eq!(cfg.solve_config.inner_cap, crate::tolerances::INNER_CAP);
        assert_eq!(cfg.match_config.capacity, 2);
        assert_eq!(cfg.pt_pce, 3.0);
        assert!(cfg.sweep.is_none());
        let inst = cfg.load_instance().unwrap();
        assert_eq!(inst.demands.len(), 1);
        assert_eq!(inst.demands[0].available, [true; 4]);
    }

    #[test]
    fn bad_tolerance_is_rejected() {
        let err = ScenarioConfig::from_toml(
            "net = \"n\"\ntrips = \"t\"\neps_mode = 0.0\n[mode.DA]\n",
            Path::new("."),
            "x".into(),
        )
        .unwrap_err();
        assert!(matches!(err, ScenarioError::Validation(_)), "{err}");
    }

    #[test]
    fn unknown_key_is_a_parse_error() {
        let err = ScenarioConfig::from_toml(
            "net = \"n\"\ntrips = \"t\"\nepsilon = 1.0\n[mode.DA]\n",
            Path::new("."),
            "x".into(),
        )
        .unwrap_err();
        assert!(matches!(err, ScenarioError::Parse { .. }), "{err}");
    }

    #[test]
    fn sweep_spec_validates_and_grids() {
        let text = "net = \"n\"\ntrips = \"t\"\n[mode.DA]\n[sweep]\nparam = \"nu_d_rd\"\nfrom = 0.0\nto = 2.0\nsteps = 5\n";
        let cfg = ScenarioConfig::from_toml(text, Path::new("."), "x".into()).unwrap();
        let sweep = cfg.sweep.unwrap();
        assert_eq!(sweep.grid(), vec![0.0, 0.5, 1.0, 1.5, 2.0]);

        let bad = "net = \"n\"\ntrips = \"t\"\n[mode.DA]\n[sweep]\nparam = \"nu_d_rd\"\nfrom = 2.0\nto = 0.0\nsteps = 5\n";
        assert!(ScenarioConfig::from_toml(bad, Path::new("."), "x".into()).is_err());
    }

    #[test]
    fn sweep_value_couples_passenger_fare() {
        let mut cfg = ScenarioConfig::from_toml(
            "net = \"n\"\ntrips = \"t\"\n[mode.RD]\nbeta = 4.0\n",
            Path::new("."),
            "x".into(),
        )
        .unwrap();
        cfg.apply_sweep_value(SweepParam::NuDRd, 2.0).unwrap();
        assert_eq!(cfg.cost_model.params[Mode::Rd.index()].nu_d, 2.0);
        assert_eq!(cfg.cost_model.params[Mode::Rp.index()].nu_d, 1.0);
        // Compensation above the driver's own distance cost prices shared
        // links negatively and must be refused.
        assert!(cfg.apply_sweep_value(SweepParam::NuDRd, 99.0).is_err());
    }

    #[test]
    fn modes_sidecar_restricts_and_rejects_junk() {
        let dir = tempfile::tempdir().unwrap();
        write_tmp(dir.path(), "n.tntp", TINY_NET);
        write_tmp(dir.path(), "t.tntp", TINY_TRIPS);
        write_tmp(dir.path(), "m.txt", "# comment\n1 2 DA,PT\n");
        let cfg_path = write_tmp(
            dir.path(),
            "s.toml",
            "net = \"n.tntp\"\ntrips = \"t.tntp\"\nmodes = \"m.txt\"\n[mode.DA]\n",
        );
        let cfg = ScenarioConfig::from_file(&cfg_path).unwrap();
        let inst = cfg.load_instance().unwrap();
        assert_eq!(inst.demands[0].available, [true, false, false, true]);
        assert!(inst.driver_ods.is_empty());

        write_tmp(dir.path(), "m.txt", "1 2 DA,XX\n");
        assert!(cfg.load_instance().is_err());
        write_tmp(dir.path(), "m.txt", "1 2 DA\n1 2 PT\n");
        assert!(cfg.load_instance().is_err(), "duplicate OD must fail");
    }
}
