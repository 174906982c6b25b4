//! Solve the 4x4 corridor benchmark and print the equilibrium.
//!
//! The corridor has 40,000 travelers on 1-16 choosing between driving alone
//! and driving for the platform, plus 20,000 pooled-or-transit travelers on
//! each of the nested ODs 4-10 and 7-13. Sharing pays: the equilibrium puts
//! the whole pooling demand on the doubly-nested sequence.

use rseq::assign::{solve, SolveConfig};
use rseq::fixtures;
use rseq::matchgen::generate;

fn main() {
    env_logger::init();
    let net = fixtures::grid_network();
    let cm = fixtures::grid_cost_model();
    let pool = generate(
        &net,
        &fixtures::grid_driver_ods(),
        &fixtures::grid_passenger_ods(),
        &fixtures::grid_match_config(),
    )
    .expect("pool generation");
    let demands = fixtures::grid_demands();
    let out = solve(&net, &cm, &pool, &demands, &SolveConfig::default()).expect("solve");

    println!(
        "converged: {} ({} inner, {} outer)",
        out.converged, out.gaps.inner_iterations, out.gaps.outer_iterations
    );
    println!(
        "gaps: mode {:.3e}  route {:.3e}  infeasibility {:.3e}",
        out.gaps.g_mode, out.gaps.g_route, out.gaps.infeasibility
    );
    for d in &demands {
        for m in rseq::netio::Mode::ALL {
            if let Some(q) = out.mode_demand.get(&(d.od, m)) {
                let c = out.mode_costs.get(&(d.od, m)).copied().unwrap_or(f64::INFINITY);
                println!("od {}->{} {:?}: q {:.1} cost {:.3}", d.od.o, d.od.d, m, q, c);
            }
        }
    }
    for s in &out.sequences {
        if s.flow > 1.0 {
            println!(
                "seq {} [{}]: flow {:.1} quota {:.1} mu {:.2} driver {:.2}..{:.2} slots {:?}",
                s.id, s.route, s.flow, s.quota, s.multiplier, s.driver_cost_min, s.driver_cost_max, s.slot_costs
            );
        }
    }
    let mut shown = 0;
    for (li, (&v, &t)) in out.vehicle_flows.iter().zip(&out.link_times).enumerate() {
        if v > 1.0 && shown < 30 {
            let link = &net.links[li];
            println!("link {}->{}: {:.0} veh, t {:.3}", link.from, link.to, v, t);
            shown += 1;
        }
    }
    println!("realized shares [da rd rp pt]: {:?}", out.realized_shares);
    println!("wall: {:.2}s", out.wall_seconds);
}
