//! Exact solver for the platform's quota program by basis enumeration.
//!
//! The program is `max c.z` subject to `A z <= b`, `z >= 0` with `b >= 0`
//! (a packing program; `z = 0` is always feasible). Every basis of the
//! slack-extended system is enumerated, so the result is the exact optimum,
//! and on a degenerate optimal face the returned vertex is pinned by a
//! deterministic tie rule: smallest secondary cost first, then
//! lexicographically largest solution vector.
//!
//! Sized for test instances: the basis count must stay under a few million.

use super::OracleError;

#[derive(Debug, Clone)]
pub struct LpResult {
    pub z: Vec<f64>,
    pub objective: f64,
}

const PIVOT_EPS: f64 = 1e-11;
const FEAS_EPS: f64 = 1e-9;
const OBJ_EPS: f64 = 1e-9;

/// `tie_cost`, when given, selects among optimal vertices the one minimizing
/// `tie_cost.z` (the caller passes traveler costs so platform-indifferent
/// optima resolve in the travelers' favor).
pub fn solve_packing_lp(
    c: &[f64],
    rows: &[(Vec<f64>, f64)],
    tie_cost: Option<&[f64]>,
) -> Result<LpResult, OracleError> {
    let n = c.len();
    let m = rows.len();
    if m == 0 {
        // Without constraints the packing optimum is the origin; positive
        // coefficients would make it unbounded, which is outside the domain.
        if c.iter().any(|&ci| ci > 0.0) {
            return Err(OracleError::DomainExceeded(
                "unbounded program: positive payoff without constraints".into(),
            ));
        }
        return Ok(LpResult {
            z: vec![0.0; n],
            objective: 0.0,
        });
    }
    for (a, b) in rows {
        assert_eq!(a.len(), n, "row length mismatch");
        if *b < 0.0 {
            return Err(OracleError::DomainExceeded(format!(
                "packing row with negative bound {b}"
            )));
        }
    }
    // Boundedness precondition: every profitable variable is capped by a row.
    for j in 0..n {
        if c[j] > 0.0 && !rows.iter().any(|(a, _)| a[j] > 0.0) {
            return Err(OracleError::DomainExceeded(format!(
                "variable {j} has positive payoff but no covering row"
            )));
        }
    }

    let cols = n + m;
    let bases = binomial(cols as u128, m as u128);
    if bases > 2_000_000 {
        return Err(OracleError::LpTooLarge { bases });
    }

    let mut best: Option<(f64, f64, Vec<f64>)> = None; // (obj, tie, z)
    let mut subset: Vec<usize> = (0..m).collect();
    loop {
        if let Some(z) = try_basis(&subset, rows, n) {
            let obj: f64 = z.iter().zip(c).map(|(zi, ci)| zi * ci).sum();
            let tie: f64 = match tie_cost {
                Some(t) => z.iter().zip(t).map(|(zi, ti)| zi * ti).sum(),
                None => 0.0,
            };
            let better = match &best {
                None => true,
                Some((bo, bt, bz)) => {
                    let scale = 1.0 + bo.abs();
                    if obj > bo + OBJ_EPS * scale {
                        true
                    } else if obj < bo - OBJ_EPS * scale {
                        false
                    } else if tie < bt - OBJ_EPS * (1.0 + bt.abs()) {
                        true
                    } else if tie > bt + OBJ_EPS * (1.0 + bt.abs()) {
                        false
                    } else {
                        lex_greater(&z, bz)
                    }
                }
            };
            if better {
                best = Some((obj, tie, z));
            }
        }
        if !next_subset(&mut subset, cols) {
            break;
        }
    }
    let (objective, _, z) = best.ok_or(OracleError::LpInfeasible)?;
    Ok(LpResult { z, objective })
}

fn lex_greater(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if (x - y).abs() > FEAS_EPS {
            return x > y;
        }
    }
    false
}

/// Solves the basis system; returns the full-length solution (slack values
/// dropped) if the basis is non-singular and feasible.
fn try_basis(subset: &[usize], rows: &[(Vec<f64>, f64)], n: usize) -> Option<Vec<f64>> {
    let m = rows.len();
    // Column j < n is a structural variable, j >= n the slack of row j - n.
    let mut mat = vec![vec![0.0; m + 1]; m];
    for (r, (a, b)) in rows.iter().enumerate() {
        for (k, &j) in subset.iter().enumerate() {
            mat[r][k] = if j < n {
                a[j]
            } else if j - n == r {
                1.0
            } else {
                0.0
            };
        }
        mat[r][m] = *b;
    }
    // Gaussian elimination with partial pivoting.
    for col in 0..m {
        let mut piv = col;
        for r in col + 1..m {
            if mat[r][col].abs() > mat[piv][col].abs() {
                piv = r;
            }
        }
        if mat[piv][col].abs() < PIVOT_EPS {
            return None; // singular basis
        }
        mat.swap(col, piv);
        for r in 0..m {
            if r == col {
                continue;
            }
            let f = mat[r][col] / mat[col][col];
            if f == 0.0 {
                continue;
            }
            for k in col..=m {
                mat[r][k] -= f * mat[col][k];
            }
        }
    }
    let mut z = vec![0.0; n];
    for (k, &j) in subset.iter().enumerate() {
        let v = mat[k][m] / mat[k][k];
        if v < -FEAS_EPS {
            return None;
        }
        if j < n {
            z[j] = v.max(0.0);
        }
    }
    // Slack feasibility of non-basic rows is implied: slacks not in the
    // basis are zero, so check every row explicitly.
    for (a, b) in rows {
        let lhs: f64 = a.iter().zip(&z).map(|(ai, zi)| ai * zi).sum();
        if lhs > *b + FEAS_EPS * (1.0 + b.abs()) {
            return None;
        }
    }
    Some(z)
}

fn next_subset(s: &mut [usize], cols: usize) -> bool {
    let m = s.len();
    let mut i = m;
    while i > 0 {
        i -= 1;
        if s[i] < cols - (m - i) {
            s[i] += 1;
            for k in i + 1..m {
                s[k] = s[k - 1] + 1;
            }
            return true;
        }
    }
    false
}

fn binomial(n: u128, k: u128) -> u128 {
    let k = k.min(n - k);
    let mut r: u128 = 1;
    for i in 0..k {
        r = r.saturating_mul(n - i) / (i + 1);
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simple_bounded_program() {
        // max 3x + 2y, x + y <= 4, x <= 2: optimum x=2, y=2.
        let r = solve_packing_lp(
            &[3.0, 2.0],
            &[(vec![1.0, 1.0], 4.0), (vec![1.0, 0.0], 2.0)],
            None,
        )
        .unwrap();
        assert!((r.objective - 10.0).abs() < 1e-9);
        assert!((r.z[0] - 2.0).abs() < 1e-9);
        assert!((r.z[1] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_face_resolved_by_tie_cost() {
        // max x + y with x + y <= 1: the whole edge is optimal. The tie cost
        // prefers y.
        let r = solve_packing_lp(
            &[1.0, 1.0],
            &[(vec![1.0, 1.0], 1.0)],
            Some(&[5.0, 1.0]),
        )
        .unwrap();
        assert!((r.objective - 1.0).abs() < 1e-9);
        assert!(r.z[1] > 0.999 && r.z[0] < 1e-9);
    }

    #[test]
    fn lex_rule_without_tie_cost() {
        let r = solve_packing_lp(&[1.0, 1.0], &[(vec![1.0, 1.0], 1.0)], None).unwrap();
        // Lexicographically largest optimal vertex puts weight on z[0].
        assert!(r.z[0] > 0.999);
    }

    #[test]
    fn negative_payoff_stays_home() {
        let r = solve_packing_lp(&[-1.0, 0.0], &[(vec![1.0, 1.0], 5.0)], None).unwrap();
        assert_eq!(r.objective, 0.0);
        // Losing variable stays at zero; the indifferent one lands on its
        // bound by the lexicographic rule.
        assert!(r.z[0].abs() < 1e-9);
        assert!((r.z[1] - 5.0).abs() < 1e-9);
        // A tie cost flips the indifferent variable back to zero.
        let r = solve_packing_lp(&[-1.0, 0.0], &[(vec![1.0, 1.0], 5.0)], Some(&[0.0, 2.0])).unwrap();
        assert!(r.z.iter().all(|&v| v.abs() < 1e-9));
    }

    #[test]
    fn seat_coefficients_count_double() {
        // One driver row z1 + z2 <= 10, passenger row 2 z2 <= 10: a two-seat
        // sequence with payoff 4 beats two single runs at 3 until seats bind.
        let r = solve_packing_lp(
            &[3.0, 4.0],
            &[(vec![1.0, 1.0], 10.0), (vec![0.0, 2.0], 10.0)],
            None,
        )
        .unwrap();
        assert!((r.z[1] - 5.0).abs() < 1e-9);
        assert!((r.z[0] - 5.0).abs() < 1e-9);
        assert!((r.objective - 35.0).abs() < 1e-9);
    }
}
