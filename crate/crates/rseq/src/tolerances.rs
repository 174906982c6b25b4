//! Numerical tolerances and iteration limits used across the solver and tests.
//!
//! Everything that decides "converged or not" or "equal or not" lives here so
//! the values are pinned in one place. Units are noted per constant; "cost
//! units" means the generalized-cost unit of the scenario (minutes-equivalent
//! in the shipped data sets).

/// Mode-choice equilibrium gap threshold, cost units per traveler.
///
/// The inner loop stops only when the demand-weighted average gap between the
/// cost of the chosen mode and the cheapest available mode falls below this.
pub const EPS_MODE: f64 = 1e-2;

/// Sequence/route equilibrium gap threshold, cost units per traveler.
pub const EPS_ROUTE: f64 = 1e-2;

/// Outer-loop feasibility ratio threshold (dimensionless).
///
/// The augmented-Lagrangian outer loop stops when
/// `A / (A + g) <= EPS_OUTER`, where `A` is the penalty value and `g` the
/// equilibrium gap function. `A = 0` counts as converged regardless of `g`.
pub const EPS_OUTER: f64 = 5e-3;

/// Default inner iteration cap per outer iteration.
pub const INNER_CAP: usize = 5_000;

/// Default outer iteration cap.
pub const OUTER_CAP: usize = 20;

/// Penalty growth factor sigma_1 for the augmented Lagrangian.
pub const PENALTY_GROWTH: f64 = 2.0;

/// Required shrink ratio sigma_2: the quota-violation norm must fall below
/// `PENALTY_SHRINK_RATIO` times the previous outer value, else rho grows.
pub const PENALTY_SHRINK_RATIO: f64 = 0.25;

/// Matched passenger flows must equal their driver flows to within
/// `COUPLING_TOL_FACTOR * total_demand` (they are stored as one array, so the
/// check guards the exported state, not the representation).
pub const COUPLING_TOL_FACTOR: f64 = 1e-9;

/// Clamp for tiny negative flows produced by floating-point cancellation.
/// Anything below `-FLOW_CLAMP` is a real sign error and panics in debug.
pub const FLOW_CLAMP: f64 = 1e-9;

/// A link joins a bush only when it lowers a cheapest-route label by more
/// than this, cost units. Keeps equal-cost alternatives from churning the
/// link set between iterations.
pub const BUSH_IMPROVE_EPS: f64 = 1e-9;

/// Relative tolerance used when comparing solver flows and costs against
/// pinned reference values (1 percent).
pub const REF_REL_TOL: f64 = 1e-2;

/// Tighter relative tolerance for link-level quantities (0.5 percent).
pub const REF_LINK_REL_TOL: f64 = 5e-3;

/// Normalized residual threshold for the oracle's equilibrium checks.
///
/// Flow residuals are normalized by total demand, cost residuals by the mean
/// origin-destination travel cost.
pub const RESIDUAL_TOL: f64 = 1e-2;

/// Strict-improvement margin for the stability check, cost units. A blocking
/// coalition must improve every member by more than this to count.
pub const STABILITY_TOL: f64 = 1e-6;

/// A class or option counts as "used" when its flow exceeds
/// `USED_FLOW_FACTOR * total_demand`; smaller flows are numerical residue and
/// are excluded from flow-weighted averages and worst-case scans.
pub const USED_FLOW_FACTOR: f64 = 1e-7;

/// Quota projection stops when successive iterates move less than this
/// fraction of total quota.
pub const PROJECTION_TOL: f64 = 1e-10;

/// Iteration cap for the alternating-projection quota solve.
pub const PROJECTION_CAP: usize = 10_000;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thresholds_are_sane() {
        for eps in [EPS_MODE, EPS_ROUTE, EPS_OUTER, RESIDUAL_TOL] {
            assert!(eps > 0.0 && eps < 1.0, "threshold {eps} out of range");
        }
        assert!(PENALTY_GROWTH > 1.0);
        assert!(PENALTY_SHRINK_RATIO > 0.0 && PENALTY_SHRINK_RATIO < 1.0);
        assert!(COUPLING_TOL_FACTOR < 1e-6);
        assert!(STABILITY_TOL < EPS_ROUTE);
    }

    #[test]
    fn caps_are_positive() {
        assert!(INNER_CAP >= 100);
        assert!(OUTER_CAP >= 1);
        assert!(PROJECTION_CAP >= 100);
    }
}
