//! Run reports and file outputs.
//!
//! A scenario run produces one directory: a one-page `summary.txt`, the CSV
//! tables `shares.csv`, `sequences.csv`, `links.csv`, `metrics.csv` (and
//! `gaps.csv` when the trace is requested), plus a self-contained snapshot
//! (`scenario.toml`, `net.tntp`, `trips.tntp`, `modes.txt`, `solution.json`)
//! that the `verify` command can re-check without the original input files.
//!
//! Vehicle metrics count drive-alone and platform-driver vehicles; transit
//! riders contribute passenger-kilometers scaled by the configured
//! passenger-car equivalent. Transit hours use free-flow times when transit
//! runs segregated.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::assign::{EquilibriumSolution, GapReport};
use crate::hypernet::{ClassId, OdDemand, Solution};
use crate::netio::{self, CostModel, LinkId, Mode, Network, TripTable};
use crate::scenario::ScenarioConfig;

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Netio(#[from] netio::NetioError),
    #[error("{path}: {err}")]
    Malformed { path: String, err: String },
}

/// Network-level travel totals of one solved state.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NetworkMetrics {
    /// Vehicle-kilometers of DA and RD vehicles.
    pub vkt_vehicle: f64,
    /// Vehicle-hours of DA and RD vehicles.
    pub vht_vehicle: f64,
    /// Transit passenger-kilometers as vehicle equivalents (PCE-scaled).
    pub vkt_transit: f64,
    /// Transit passenger-hours as vehicle equivalents.
    pub vht_transit: f64,
}

impl NetworkMetrics {
    pub fn vkt_total(&self) -> f64 {
        self.vkt_vehicle + self.vkt_transit
    }

    pub fn vht_total(&self) -> f64 {
        self.vht_vehicle + self.vht_transit
    }

    pub fn compute(
        net: &Network,
        cm: &CostModel,
        pt_pce: f64,
        vehicle_flows: &[f64],
        transit_flows: &[f64],
        times: &[f64],
    ) -> NetworkMetrics {
        let mut m = NetworkMetrics::default();
        for (li, link) in net.links.iter().enumerate() {
            let veh = vehicle_flows[li];
            let pt = transit_flows[li];
            let pt_time = if cm.pt_congested_time { times[li] } else { link.fft };
            m.vkt_vehicle += veh * link.length;
            m.vht_vehicle += veh * times[li] / 60.0;
            m.vkt_transit += pt_pce * pt * link.length;
            m.vht_transit += pt_pce * pt * pt_time / 60.0;
        }
        m
    }
}

/// Everything the summary page and the metrics table report about one run:
/// the ridesharing equilibrium next to its no-ridesharing baseline.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub scenario: String,
    pub converged: bool,
    pub gaps: GapReport,
    /// Share of travelers per chosen mode `[DA, RD, RP, PT]`.
    pub chosen_shares: [f64; 4],
    /// Shares by realized role: unmatched RD counts as DA, unmatched RP as PT.
    pub realized_shares: [f64; 4],
    pub baseline_shares: [f64; 4],
    pub metrics: NetworkMetrics,
    pub baseline_metrics: NetworkMetrics,
    /// Vehicles launched per period (DA plus every RD driver).
    pub vehicle_trips: f64,
    pub baseline_vehicle_trips: f64,
    pub pool_size: usize,
    pub wall_seconds: f64,
    /// Worst normalized residual from oracle verification, when it ran.
    pub verify_worst: Option<f64>,
}

fn pct_saved(base: f64, with: f64) -> f64 {
    if base <= 0.0 {
        0.0
    } else {
        100.0 * (base - with) / base
    }
}

impl RunReport {
    pub fn vkt_saved_pct(&self) -> f64 {
        pct_saved(self.baseline_metrics.vkt_total(), self.metrics.vkt_total())
    }

    pub fn vht_saved_pct(&self) -> f64 {
        pct_saved(self.baseline_metrics.vht_total(), self.metrics.vht_total())
    }

    pub fn trips_saved(&self) -> f64 {
        self.baseline_vehicle_trips - self.vehicle_trips
    }

    /// One-page plain-text summary.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let line = "-".repeat(64);
        s += &format!("scenario: {}\n", self.scenario);
        s += &format!(
            "status:   {} (G_M {:.3e}, G_N {:.3e}, infeasibility {:.3e})\n",
            if self.converged { "converged" } else { "NOT CONVERGED" },
            self.gaps.g_mode,
            self.gaps.g_route,
            self.gaps.infeasibility
        );
        s += &format!(
            "effort:   {} inner / {} outer iterations, {:.1} s, pool of {} sequences\n",
            self.gaps.inner_iterations, self.gaps.outer_iterations, self.wall_seconds, self.pool_size
        );
        if let Some(w) = self.verify_worst {
            s += &format!("oracle:   worst residual {:.3e}\n", w);
        }
        s += &format!("{line}\n");
        s += "mode      chosen    realized  baseline\n";
        for m in Mode::ALL {
            let i = m.index();
            s += &format!(
                "{:<8}  {:>6.2}%   {:>6.2}%   {:>6.2}%\n",
                m.to_string(),
                100.0 * self.chosen_shares[i],
                100.0 * self.realized_shares[i],
                100.0 * self.baseline_shares[i]
            );
        }
        s += &format!("{line}\n");
        s += &format!(
            "vehicle trips  {:>14.0}  baseline {:>14.0}  saved {:>10.0}\n",
            self.vehicle_trips,
            self.baseline_vehicle_trips,
            self.trips_saved()
        );
        s += &format!(
            "VKT            {:>14.0}  baseline {:>14.0}  saved {:>9.2}%\n",
            self.metrics.vkt_total(),
            self.baseline_metrics.vkt_total(),
            self.vkt_saved_pct()
        );
        s += &format!(
            "VHT            {:>14.0}  baseline {:>14.0}  saved {:>9.2}%\n",
            self.metrics.vht_total(),
            self.baseline_metrics.vht_total(),
            self.vht_saved_pct()
        );
        s
    }
}

/// Chosen-mode shares of a solved state.
pub fn chosen_shares(demands: &[OdDemand], sol: &EquilibriumSolution) -> [f64; 4] {
    let mut q = [0.0f64; 4];
    for ((_, m), v) in &sol.mode_demand {
        q[m.index()] += v;
    }
    let total: f64 = demands.iter().map(|d| d.total).sum();
    if total > 0.0 {
        for v in &mut q {
            *v /= total;
        }
    }
    q
}

/// Vehicles launched: every DA traveler and every RD chooser drives one.
pub fn vehicle_trips(sol: &EquilibriumSolution) -> f64 {
    sol.mode_demand
        .iter()
        .filter(|((_, m), _)| matches!(m, Mode::Da | Mode::Rd))
        .map(|(_, v)| v)
        .sum()
}

// ---------------------------------------------------------------------------
// CSV tables and the summary page

pub fn write_run(
    dir: &Path,
    report: &RunReport,
    net: &Network,
    rs: &EquilibriumSolution,
    baseline: &EquilibriumSolution,
    gap_trace: bool,
) -> Result<(), ReportError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("summary.txt"), report.summary())?;

    let mut w = csv::Writer::from_path(dir.join("shares.csv"))?;
    w.write_record(["mode", "chosen", "realized", "baseline"])?;
    for m in Mode::ALL {
        let i = m.index();
        w.write_record([
            m.to_string(),
            format!("{}", report.chosen_shares[i]),
            format!("{}", report.realized_shares[i]),
            format!("{}", report.baseline_shares[i]),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("sequences.csv"))?;
    w.write_record([
        "id",
        "route",
        "flow",
        "quota",
        "multiplier",
        "driver_cost_min",
        "driver_cost_max",
        "slot_costs",
    ])?;
    for s in &rs.sequences {
        let slots = s
            .slot_costs
            .iter()
            .map(|(od, c)| format!("{}-{}:{:.4}", od.o, od.d, c))
            .collect::<Vec<_>>()
            .join("|");
        w.write_record([
            s.id.to_string(),
            s.route.clone(),
            format!("{}", s.flow),
            format!("{}", s.quota),
            format!("{}", s.multiplier),
            format!("{}", s.driver_cost_min),
            format!("{}", s.driver_cost_max),
            slots,
        ])?;
    }
    w.flush()?;

    let transit = rs.solution.transit_flows(net.links.len());
    let base_transit = baseline.solution.transit_flows(net.links.len());
    let mut w = csv::Writer::from_path(dir.join("links.csv"))?;
    w.write_record([
        "from",
        "to",
        "length",
        "vehicle_flow",
        "transit_flow",
        "time",
        "baseline_vehicle_flow",
        "baseline_transit_flow",
        "baseline_time",
    ])?;
    for (li, link) in net.links.iter().enumerate() {
        w.write_record([
            link.from.to_string(),
            link.to.to_string(),
            format!("{}", link.length),
            format!("{}", rs.vehicle_flows[li]),
            format!("{}", transit[li]),
            format!("{}", rs.link_times[li]),
            format!("{}", baseline.vehicle_flows[li]),
            format!("{}", base_transit[li]),
            format!("{}", baseline.link_times[li]),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("metrics.csv"))?;
    w.write_record(["metric", "ridesharing", "baseline", "saved", "saved_pct"])?;
    let rows: [(&str, f64, f64); 5] = [
        ("vehicle_trips", report.vehicle_trips, report.baseline_vehicle_trips),
        ("vkt_vehicle", report.metrics.vkt_vehicle, report.baseline_metrics.vkt_vehicle),
        ("vkt_total", report.metrics.vkt_total(), report.baseline_metrics.vkt_total()),
        ("vht_vehicle", report.metrics.vht_vehicle, report.baseline_metrics.vht_vehicle),
        ("vht_total", report.metrics.vht_total(), report.baseline_metrics.vht_total()),
    ];
    for (name, with, base) in rows {
        w.write_record([
            name.to_string(),
            format!("{}", with),
            format!("{}", base),
            format!("{}", base - with),
            format!("{}", pct_saved(base, with)),
        ])?;
    }
    w.flush()?;

    if gap_trace {
        let mut w = csv::Writer::from_path(dir.join("gaps.csv"))?;
        w.write_record(["iteration", "g_mode", "g_route"])?;
        for (it, gm, gn) in &rs.gap_trace {
            w.write_record([it.to_string(), format!("{}", gm), format!("{}", gn)])?;
        }
        w.flush()?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Self-contained solution snapshot

#[derive(Serialize, Deserialize)]
struct SolutionFile {
    /// `"o-d"` then mode name.
    mode_demand: BTreeMap<String, BTreeMap<String, f64>>,
    quota: Vec<f64>,
    seq_flow: Vec<f64>,
    /// Class display key to link-index map.
    class_flows: BTreeMap<String, BTreeMap<u32, f64>>,
}

/// Writes `scenario.toml`, copies of the instance data and `solution.json`
/// into `dir`, so `verify` needs nothing outside the directory.
pub fn write_snapshot(
    dir: &Path,
    cfg: &ScenarioConfig,
    net: &Network,
    demands: &[OdDemand],
    sol: &Solution,
) -> Result<(), ReportError> {
    fs::create_dir_all(dir)?;
    netio::write_network(net, &dir.join("net.tntp"))?;

    let mut trips = TripTable::new(net.zones);
    for d in demands {
        trips.insert(d.od.o, d.od.d, d.total)?;
    }
    netio::write_trips(&trips, &dir.join("trips.tntp"))?;

    let mut modes = String::from("# origin destination comma-separated available modes\n");
    for d in demands {
        let open: Vec<String> =
            Mode::ALL.iter().filter(|m| d.allows(**m)).map(|m| m.to_string()).collect();
        modes += &format!("{} {} {}\n", d.od.o, d.od.d, open.join(","));
    }
    fs::write(dir.join("modes.txt"), modes)?;
    fs::write(dir.join("scenario.toml"), snapshot_toml(cfg))?;

    let mut file = SolutionFile {
        mode_demand: BTreeMap::new(),
        quota: sol.quota.clone(),
        seq_flow: sol.seq_flow.clone(),
        class_flows: BTreeMap::new(),
    };
    for ((od, m), q) in &sol.mode_demand {
        file.mode_demand
            .entry(format!("{}-{}", od.o, od.d))
            .or_default()
            .insert(m.to_string(), *q);
    }
    for (cid, flows) in &sol.class_flows {
        let entry: BTreeMap<u32, f64> = flows.iter().map(|(lid, f)| (lid.0, *f)).collect();
        file.class_flows.insert(cid.to_string(), entry);
    }
    let json = serde_json::to_string_pretty(&file).expect("solution serializes");
    fs::write(dir.join("solution.json"), json)?;
    Ok(())
}

/// Reads back a snapshot directory's `solution.json`.
pub fn read_solution(dir: &Path) -> Result<Solution, ReportError> {
    let path = dir.join("solution.json");
    let text = fs::read_to_string(&path)?;
    let file: SolutionFile = serde_json::from_str(&text).map_err(|e| ReportError::Malformed {
        path: path.display().to_string(),
        err: e.to_string(),
    })?;
    let bad = |err: String| ReportError::Malformed { path: path.display().to_string(), err };

    let mut sol = Solution {
        quota: file.quota,
        seq_flow: file.seq_flow,
        ..Solution::default()
    };
    for (od_key, per_mode) in file.mode_demand {
        let (o, d) = od_key
            .split_once('-')
            .ok_or_else(|| bad(format!("bad OD key {od_key:?}")))?;
        let o: u32 = o.parse().map_err(|_| bad(format!("bad OD key {od_key:?}")))?;
        let d: u32 = d.parse().map_err(|_| bad(format!("bad OD key {od_key:?}")))?;
        let od = crate::matchgen::OdPair::new(o, d);
        for (mode_key, q) in per_mode {
            let m = Mode::parse(&mode_key)
                .ok_or_else(|| bad(format!("unknown mode {mode_key:?}")))?;
            sol.mode_demand.insert((od, m), q);
        }
    }
    for (class_key, flows) in file.class_flows {
        let cid = ClassId::parse(&class_key)
            .ok_or_else(|| bad(format!("unknown class {class_key:?}")))?;
        let entry: BTreeMap<LinkId, f64> = flows.into_iter().map(|(l, f)| (LinkId(l), f)).collect();
        sol.class_flows.insert(cid, entry);
    }
    Ok(sol)
}

fn snapshot_toml(cfg: &ScenarioConfig) -> String {
    let mut s = String::from("# written by solve; verify re-reads this directory\n");
    s += "net = \"net.tntp\"\ntrips = \"trips.tntp\"\nmodes = \"modes.txt\"\noutput = \".\"\n\n";
    s += &format!("pt_congested_time = {}\n", cfg.cost_model.pt_congested_time);
    s += &format!("pt_pce = {:?}\n\n", cfg.pt_pce);

    let g = &cfg.match_config;
    s += &format!("capacity = {}\nmax_passengers = {}\n", g.capacity, g.max_passengers);
    s += &format!("detour_factor = {:?}\n", g.detour_factor);
    if let Some(ms) = g.min_saving {
        s += &format!("min_saving = {:?}\n", ms);
    }
    s += &format!("max_candidates_per_driver = {}\n", g.max_candidates_per_driver);
    s += &format!("max_sequences = {}\n\n", g.max_sequences);

    let sc = &cfg.solve_config;
    s += &format!("eps_mode = {:?}\neps_route = {:?}\neps_outer = {:?}\n", sc.eps_mode, sc.eps_route, sc.eps_outer);
    s += &format!("inner_cap = {}\nouter_cap = {}\n", sc.inner_cap, sc.outer_cap);
    s += &format!("sigma1 = {:?}\nsigma2 = {:?}\n", sc.sigma1, sc.sigma2);
    s += &format!("gamma_grow = {:?}\ngamma_shrink = {:?}\n\n", sc.gamma_grow, sc.gamma_shrink);

    for m in Mode::ALL {
        let p = cfg.cost_model.mode(m);
        s += &format!("[mode.{}]\n", m);
        s += &format!("alpha = {:?}\nbeta = {:?}\n", p.alpha, p.beta);
        s += &format!("tau_t = {:?}\ntau_d = {:?}\n", p.tau_t, p.tau_d);
        s += &format!("nu_t = {:?}\nnu_d = {:?}\n", p.nu_t, p.nu_d);
        s += &format!("fixed = {:?}\n\n", p.fixed);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::matchgen::OdPair;
    use crate::netio::{Link, NodeId};

    fn unit_link(from: u32, to: u32, length: f64) -> Link {
        Link {
            from: NodeId(from),
            to: NodeId(to),
            capacity: 1000.0,
            length,
            fft: 60.0,
            b: 0.0,
            power: 4.0,
            speed: 0.0,
            toll: 0.0,
            link_type: 1,
        }
    }

    #[test]
    fn metrics_count_vehicles_and_pce_transit() {
        // One link of 2 km at a fixed 60 minutes: 10 vehicles give 20 vkt and
        // 10 vht; 5 transit riders at PCE 3 add 30 vkt and 15 vht.
        let net = Network::new(2, 1, 2, vec![unit_link(1, 2, 2.0)]).unwrap();
        let cm = CostModel {
            params: [Default::default(); 4],
            pt_congested_time: false,
        };
        let m = NetworkMetrics::compute(&net, &cm, 3.0, &[10.0], &[5.0], &[60.0]);
        assert!((m.vkt_vehicle - 20.0).abs() < 1e-12);
        assert!((m.vht_vehicle - 10.0).abs() < 1e-12);
        assert!((m.vkt_transit - 30.0).abs() < 1e-12);
        assert!((m.vht_transit - 15.0).abs() < 1e-12);
        assert!((m.vkt_total() - 50.0).abs() < 1e-12);
    }

    #[test]
    fn segregated_transit_hours_use_free_flow_time() {
        let net = Network::new(2, 1, 2, vec![unit_link(1, 2, 1.0)]).unwrap();
        let cm = CostModel {
            params: [Default::default(); 4],
            pt_congested_time: false,
        };
        // Congested time 120 applies to vehicles only.
        let m = NetworkMetrics::compute(&net, &cm, 1.0, &[6.0], &[6.0], &[120.0]);
        assert!((m.vht_vehicle - 12.0).abs() < 1e-12);
        assert!((m.vht_transit - 6.0).abs() < 1e-12);
    }

    #[test]
    fn solution_snapshot_roundtrip() {
        let mut sol = Solution::default();
        sol.mode_demand.insert((OdPair::new(1, 16), Mode::Rd), 40_000.0);
        sol.mode_demand.insert((OdPair::new(4, 10), Mode::Rp), 20_000.0);
        sol.quota = vec![0.0, 20_000.0];
        sol.seq_flow = vec![0.0, 20_000.0];
        sol.class_flows
            .entry(ClassId::RdLevel { seq: 1, level: 0 })
            .or_default()
            .insert(LinkId(3), 123.5);
        sol.class_flows
            .entry(ClassId::DaSolo { od: OdPair::new(1, 16) })
            .or_default()
            .insert(LinkId(0), 1.0);

        let dir = tempfile::tempdir().unwrap();
        let cfg = ScenarioConfig::from_toml(
            "net = \"n\"\ntrips = \"t\"\n[mode.DA]\n",
            Path::new("."),
            "snap".into(),
        )
        .unwrap();
        let net = fixtures::grid_network();
        let demands = fixtures::grid_demands();
        write_snapshot(dir.path(), &cfg, &net, &demands, &sol).unwrap();

        let back = read_solution(dir.path()).unwrap();
        assert_eq!(back.mode_demand, sol.mode_demand);
        assert_eq!(back.quota, sol.quota);
        assert_eq!(back.seq_flow, sol.seq_flow);
        assert_eq!(back.class_flows, sol.class_flows);

        // The snapshot config and data files parse back to the same instance.
        let cfg2 = ScenarioConfig::from_file(&dir.path().join("scenario.toml")).unwrap();
        assert_eq!(cfg2.cost_model.params, cfg.cost_model.params);
        assert_eq!(cfg2.match_config, cfg.match_config);
        let inst = cfg2.load_instance().unwrap();
        assert_eq!(inst.network.links, net.links);
        assert_eq!(inst.demands, demands);
    }

    #[test]
    fn class_id_display_parse_roundtrip() {
        let ids = [
            ClassId::RdLevel { seq: 7, level: 3 },
            ClassId::RpSpan { seq: 2, slot: 1 },
            ClassId::DaSolo { od: OdPair::new(1, 16) },
            ClassId::RdQuit { od: OdPair::new(1, 16) },
            ClassId::PtSolo { od: OdPair::new(4, 10) },
            ClassId::RpQuit { od: OdPair::new(7, 13) },
        ];
        for id in ids {
            assert_eq!(ClassId::parse(&id.to_string()), Some(id));
        }
        assert_eq!(ClassId::parse("bogus:1:2"), None);
    }
}
