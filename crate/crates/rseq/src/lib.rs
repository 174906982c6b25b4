//! Equilibrium solver for a multi-passenger ridesharing market on a congested
//! road network.
//!
//! Travelers on each origin-destination pair split between driving alone (DA),
//! driving for the ridesharing platform (RD), riding as a pooled passenger (RP)
//! and public transit (PT). The platform matches drivers to ordered pickup and
//! dropoff chains ("matching sequences"), every vehicle movement congests the
//! network, and the solved state is a fixed point of four coupled choices:
//! mode, platform quota, driver-passenger bundling and route.
//!
//! The solver ([`assign`]) works on sequence bushes: per-level acyclic route
//! sets chained along each matching sequence, so passenger flows ride the
//! driver flows by construction and no paths are stored. An independent
//! brute-force reference ([`oracle`]) solves small instances by enumeration
//! and checks any solution against the equilibrium conditions.
//!
//! A typical scenario run is three lines:
//!
//! ```no_run
//! let cfg = rseq::scenario::ScenarioConfig::from_file("data/grid.cfg".as_ref()).unwrap();
//! let outcome = rseq::cli::run_scenario(&cfg).unwrap();
//! println!("{}", outcome.report.summary());
//! ```

pub mod assign;
pub mod bush;
pub mod cli;
pub mod fixtures;
pub mod hypernet;
pub mod matchgen;
pub mod netio;
pub mod oracle;
pub mod report;
pub mod scenario;
pub mod tolerances;
