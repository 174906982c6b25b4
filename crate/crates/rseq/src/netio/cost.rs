//! Generalized-cost model for the four travel roles.
//!
//! Every role prices a link as `a * time + b * distance` with coefficients
//! assembled from the mode parameters:
//!
//! * solo driver: `alpha * t + beta * d`
//! * platform driver, empty: same out-of-pocket terms as solo
//! * platform driver with passengers aboard: inconvenience `tau` is added and
//!   compensation `nu` subtracted, both on the shared portion only, which is
//!   exactly the set of links driven with passengers aboard
//! * pooled passenger: `alpha * t` plus inconvenience plus the fare `nu`
//! * transit rider: `alpha * t` plus crowding/fare terms; time is congested
//!   roadway time or the free-flow (segregated right-of-way) time depending on
//!   [`CostModel::pt_congested_time`]
//!
//! Driver compensation does not stack with occupancy: carrying two passengers
//! prices the same links as carrying one. Occupancy enters only through the
//! bundle objective, where each passenger aboard adds one passenger cost layer
//! on top of the driver layer.

use std::fmt;

use super::Link;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Mode {
    /// Drive alone.
    Da,
    /// Ridesharing driver.
    Rd,
    /// Ridesharing passenger.
    Rp,
    /// Public transit.
    Pt,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Da, Mode::Rd, Mode::Rp, Mode::Pt];

    pub fn index(self) -> usize {
        match self {
            Mode::Da => 0,
            Mode::Rd => 1,
            Mode::Rp => 2,
            Mode::Pt => 3,
        }
    }

    pub fn parse(s: &str) -> Option<Mode> {
        match s.trim().to_ascii_uppercase().as_str() {
            "DA" => Some(Mode::Da),
            "RD" => Some(Mode::Rd),
            "RP" => Some(Mode::Rp),
            "PT" => Some(Mode::Pt),
            _ => None,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Mode::Da => "DA",
            Mode::Rd => "RD",
            Mode::Rp => "RP",
            Mode::Pt => "PT",
        };
        f.write_str(s)
    }
}

/// Cost coefficients of one mode. Unused fields stay zero (for example `beta`
/// for non-driving modes).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeCostParams {
    /// Value of own travel time.
    pub alpha: f64,
    /// Driving cost per unit distance (fuel, wear).
    pub beta: f64,
    /// Sharing inconvenience per unit time.
    pub tau_t: f64,
    /// Sharing inconvenience per unit distance.
    pub tau_d: f64,
    /// Transfer per unit time: compensation received (driver) or paid (rider).
    pub nu_t: f64,
    /// Transfer per unit distance.
    pub nu_d: f64,
    /// Additive constant per trip (booking or access overhead).
    pub fixed: f64,
}

impl Default for ModeCostParams {
    fn default() -> Self {
        ModeCostParams {
            alpha: 1.0,
            beta: 0.0,
            tau_t: 0.0,
            tau_d: 0.0,
            nu_t: 0.0,
            nu_d: 0.0,
            fixed: 0.0,
        }
    }
}

/// One link-pricing rule. `RdWith` carries the onboard passenger count so the
/// bundle objective (driver plus passengers choosing one route together) can
/// be priced as a single layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CostLayer {
    Da,
    RdEmpty,
    /// Driver with `occupancy >= 1` passengers aboard, priced as driver layer
    /// plus `occupancy` passenger layers.
    RdWith {
        occupancy: u8,
    },
    Rp,
    Pt,
}

impl fmt::Display for CostLayer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CostLayer::Da => write!(f, "da"),
            CostLayer::RdEmpty => write!(f, "rd0"),
            CostLayer::RdWith { occupancy } => write!(f, "rd{occupancy}"),
            CostLayer::Rp => write!(f, "rp"),
            CostLayer::Pt => write!(f, "pt"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CostModel {
    pub params: [ModeCostParams; 4],
    /// Transit shares the congested roadway when true; otherwise it runs on
    /// segregated right-of-way at free-flow time.
    pub pt_congested_time: bool,
}

impl CostModel {
    pub fn mode(&self, m: Mode) -> &ModeCostParams {
        &self.params[m.index()]
    }

    /// Time and distance coefficients of a layer.
    pub fn coeffs(&self, layer: CostLayer) -> (f64, f64) {
        let da = self.mode(Mode::Da);
        let rd = self.mode(Mode::Rd);
        let rp = self.mode(Mode::Rp);
        let pt = self.mode(Mode::Pt);
        match layer {
            CostLayer::Da => (da.alpha, da.beta),
            CostLayer::RdEmpty => (rd.alpha, rd.beta),
            CostLayer::RdWith { occupancy } => {
                let (pa, pb) = self.coeffs(CostLayer::Rp);
                let a = rd.alpha + rd.tau_t - rd.nu_t;
                let b = rd.beta + rd.tau_d - rd.nu_d;
                (a + occupancy as f64 * pa, b + occupancy as f64 * pb)
            }
            CostLayer::Rp => (rp.alpha + rp.tau_t + rp.nu_t, rp.tau_d + rp.nu_d),
            CostLayer::Pt => (pt.alpha + pt.tau_t + pt.nu_t, pt.tau_d + pt.nu_d),
        }
    }

    /// Generalized cost of one link under `layer` given its congested time.
    #[inline]
    pub fn link_cost(&self, layer: CostLayer, link: &Link, time: f64) -> f64 {
        let (a, b) = self.coeffs(layer);
        let t = match layer {
            CostLayer::Pt if !self.pt_congested_time => link.fft,
            _ => time,
        };
        a * t + b * link.length
    }

    /// Sensitivity of the layer cost to vehicular flow on the link. Zero for
    /// segregated transit.
    #[inline]
    pub fn link_cost_derivative(&self, layer: CostLayer, link: &Link, veh_flow: f64) -> f64 {
        if matches!(layer, CostLayer::Pt) && !self.pt_congested_time {
            return 0.0;
        }
        let (a, _) = self.coeffs(layer);
        a * link.travel_time_derivative(veh_flow)
    }

    /// The driver-only share of a `RdWith` layer cost, used when decomposing
    /// bundle route costs back into per-member reports.
    pub fn driver_share(&self, link: &Link, time: f64) -> f64 {
        let rd = self.mode(Mode::Rd);
        let a = rd.alpha + rd.tau_t - rd.nu_t;
        let b = rd.beta + rd.tau_d - rd.nu_d;
        a * time + b * link.length
    }

    /// Rejects parameter sets that price any layer negatively. Shortest-path
    /// labels assume non-negative link costs, so compensation exceeding a
    /// driver's own time or distance cost is not representable.
    pub fn validate(&self) -> Result<(), super::NetioError> {
        let mut layers = vec![CostLayer::Da, CostLayer::RdEmpty, CostLayer::Rp, CostLayer::Pt];
        for occ in 1..=8 {
            layers.push(CostLayer::RdWith { occupancy: occ });
        }
        for layer in layers {
            let (a, b) = self.coeffs(layer);
            if a < 0.0 || b < 0.0 {
                return Err(super::NetioError::Validation(format!(
                    "layer {layer} has negative cost coefficient (time {a}, distance {b}); \
                     compensation cannot exceed the corresponding cost terms"
                )));
            }
        }
        // The driver share inside a pooled ride may not be negative either.
        let rd = self.mode(Mode::Rd);
        if rd.alpha + rd.tau_t - rd.nu_t < 0.0 || rd.beta + rd.tau_d - rd.nu_d < 0.0 {
            return Err(super::NetioError::Validation(
                "driver compensation exceeds driving cost on shared links".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netio::NodeId;

    fn link5() -> Link {
        Link {
            from: NodeId(1),
            to: NodeId(2),
            capacity: 10_000.0,
            length: 5.0,
            fft: 5.0,
            b: 0.15,
            power: 4.0,
            speed: 0.0,
            toll: 0.0,
            link_type: 1,
        }
    }

    fn grid_params() -> CostModel {
        crate::fixtures::grid_cost_model()
    }

    #[test]
    fn grid_layer_costs_at_congestion() {
        let cm = grid_params();
        let l = link5();
        let t = l.travel_time(20_000.0); // 17
        assert!((cm.link_cost(CostLayer::Da, &l, t) - 37.0).abs() < 1e-12);
        assert!((cm.link_cost(CostLayer::RdEmpty, &l, t) - 37.0).abs() < 1e-12);
        // Driver with one passenger pays t + 10 = 27.
        assert!((cm.driver_share(&l, t) - 27.0).abs() < 1e-12);
        assert!((cm.link_cost(CostLayer::Rp, &l, t) - 27.0).abs() < 1e-12);
        assert!((cm.link_cost(CostLayer::Pt, &l, t) - 32.0).abs() < 1e-12);
    }

    #[test]
    fn bundle_layer_adds_passenger_layers() {
        let cm = grid_params();
        let l = link5();
        let t = l.travel_time(20_000.0);
        let one = cm.link_cost(CostLayer::RdWith { occupancy: 1 }, &l, t);
        let two = cm.link_cost(CostLayer::RdWith { occupancy: 2 }, &l, t);
        assert!((one - (27.0 + 27.0)).abs() < 1e-12);
        assert!((two - (27.0 + 2.0 * 27.0)).abs() < 1e-12);
    }

    #[test]
    fn urban_parameter_table_passenger_cost() {
        // Passenger role with alpha=0.6, tau=(0.3/0.1), nu=(0.1/0.4) on a
        // link with time 10 and length 2 prices at 1.0*10 + 0.5*2 = 11.
        let cm = CostModel {
            params: [
                ModeCostParams { alpha: 1.0, beta: 1.0, ..Default::default() },
                ModeCostParams {
                    alpha: 1.0, beta: 1.0, tau_t: 0.3, tau_d: 0.2, nu_t: 0.3, nu_d: 0.7,
                    fixed: 0.0,
                },
                ModeCostParams {
                    alpha: 0.6, beta: 0.0, tau_t: 0.3, tau_d: 0.1, nu_t: 0.1, nu_d: 0.4,
                    fixed: 0.0,
                },
                ModeCostParams {
                    alpha: 0.4, beta: 0.0, tau_t: 0.6, tau_d: 0.6, nu_t: 0.0, nu_d: 0.4,
                    fixed: 0.0,
                },
            ],
            pt_congested_time: false,
        };
        let mut l = link5();
        l.fft = 10.0;
        l.length = 2.0;
        assert!((cm.link_cost(CostLayer::Rp, &l, 10.0) - 11.0).abs() < 1e-12);
        // Segregated transit ignores the congested time argument.
        assert!((cm.link_cost(CostLayer::Pt, &l, 99.0) - (10.0 + 2.0)).abs() < 1e-12);
        assert_eq!(cm.link_cost_derivative(CostLayer::Pt, &l, 20_000.0), 0.0);
    }

    #[test]
    fn fixed_time_plus_distance_example() {
        // A shared-ride layer worth t plus a 10-unit distance charge prices a
        // t=17 link at 27.
        let cm = grid_params();
        let l = link5();
        assert!((cm.driver_share(&l, 17.0) - 27.0).abs() < 1e-12);
    }
}
