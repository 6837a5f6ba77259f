//! Dense primal-dual interior-point QP solver.
//!
//! Exists so tests can cross-check the operator-splitting solver against a
//! structurally different algorithm. Not used on any production path; it has
//! no infeasibility certificates and simply reports failure to converge.

use nalgebra::{DMatrix, DVector};

use super::{objective_value, QpProblem};

const MAX_ITER: usize = 300;
const TOL: f64 = 1e-9;
const MU_TOL: f64 = 1e-11;
const SIGMA: f64 = 0.1;
const REG: f64 = 1e-11;

/// Solve `min 1/2 x'Px + q'x  s.t. l <= Ax <= u` to high accuracy.
/// Returns `None` when the iteration fails to converge (including on
/// infeasible problems).
pub fn solve_reference(prob: &QpProblem) -> Option<(DVector<f64>, f64)> {
    prob.validate().ok()?;
    let n = prob.n_vars();
    let m = prob.n_constraints();

    // split rows into equalities and one-sided inequalities Gx <= h
    let mut eq_rows: Vec<usize> = Vec::new();
    let mut g_rows: Vec<(usize, f64, f64)> = Vec::new(); // (row, sign, bound)
    for i in 0..m {
        let l = prob.l[i];
        let u = prob.u[i];
        if l.is_finite() && u.is_finite() && (u - l).abs() <= 1e-12 * (1.0 + u.abs()) {
            eq_rows.push(i);
            continue;
        }
        if u.is_finite() {
            g_rows.push((i, 1.0, u));
        }
        if l.is_finite() {
            g_rows.push((i, -1.0, -l));
        }
    }
    let p_eq = eq_rows.len();
    let mi = g_rows.len();

    let mut e_mat = DMatrix::zeros(p_eq, n);
    let mut d_vec = DVector::zeros(p_eq);
    for (r, &i) in eq_rows.iter().enumerate() {
        for j in 0..n {
            e_mat[(r, j)] = prob.a[(i, j)];
        }
        d_vec[r] = prob.l[i];
    }
    let mut g_mat = DMatrix::zeros(mi, n);
    let mut h_vec = DVector::zeros(mi);
    for (r, &(i, sign, bound)) in g_rows.iter().enumerate() {
        for j in 0..n {
            g_mat[(r, j)] = sign * prob.a[(i, j)];
        }
        h_vec[r] = bound;
    }

    let mut x = DVector::zeros(n);
    let mut nu = DVector::zeros(p_eq);
    let mut lam = DVector::from_element(mi, 1.0);
    let mut s = DVector::from_element(mi, 1.0);
    for i in 0..mi {
        let gap = h_vec[i]; // h - Gx at x = 0
        if gap > 1.0 {
            s[i] = gap;
        }
    }

    for _ in 0..MAX_ITER {
        let gx = &g_mat * &x;
        let ex = &e_mat * &x;
        let r_dual = &prob.p * &x + &prob.q + e_mat.tr_mul(&nu) + g_mat.tr_mul(&lam);
        let r_eq = &ex - &d_vec;
        let r_g = &gx + &s - &h_vec;
        let mu = if mi > 0 { lam.dot(&s) / mi as f64 } else { 0.0 };

        // true feasibility/stationarity, independent of the slack variable
        let viol_ineq = (0..mi).fold(0.0f64, |acc, i| acc.max(gx[i] - h_vec[i]));
        let scale_d = 1.0 + prob.q.amax().max((&prob.p * &x).amax());
        let scale_p = 1.0 + x.amax().max(h_vec.amax().max(if p_eq > 0 { d_vec.amax() } else { 0.0 }));
        let converged = r_dual.amax() <= TOL * scale_d
            && (p_eq == 0 || r_eq.amax() <= TOL * scale_p)
            && viol_ineq <= TOL * scale_p
            && mu <= MU_TOL.max(TOL * scale_d);
        if converged {
            return Some((x.clone(), objective_value(prob, &x)));
        }

        let mu_target = SIGMA * mu;
        // r_c = lam .* s - mu_target
        let mut w = DVector::zeros(mi); // (lam .* r_g - r_c) ./ s
        for i in 0..mi {
            let r_c = lam[i] * s[i] - mu_target;
            w[i] = (lam[i] * r_g[i] - r_c) / s[i];
        }

        let dim = n + p_eq;
        let mut kkt = DMatrix::zeros(dim, dim);
        let mut h_blk = prob.p.clone();
        if mi > 0 {
            let mut gs = g_mat.clone();
            for i in 0..mi {
                let f = (lam[i] / s[i]).sqrt();
                for j in 0..n {
                    gs[(i, j)] *= f;
                }
            }
            h_blk += gs.tr_mul(&gs);
        }
        for i in 0..n {
            h_blk[(i, i)] += REG;
        }
        kkt.view_mut((0, 0), (n, n)).copy_from(&h_blk);
        if p_eq > 0 {
            for r in 0..p_eq {
                for j in 0..n {
                    kkt[(n + r, j)] = e_mat[(r, j)];
                    kkt[(j, n + r)] = e_mat[(r, j)];
                }
                kkt[(n + r, n + r)] = -REG;
            }
        }
        let mut rhs = DVector::zeros(dim);
        let top = -&r_dual - g_mat.tr_mul(&w);
        for j in 0..n {
            rhs[j] = top[j];
        }
        for r in 0..p_eq {
            rhs[n + r] = -r_eq[r];
        }

        let sol = kkt.lu().solve(&rhs)?;
        let dx = DVector::from_iterator(n, (0..n).map(|j| sol[j]));
        let dnu = DVector::from_iterator(p_eq, (0..p_eq).map(|r| sol[n + r]));
        let gdx = &g_mat * &dx;
        let mut dlam = DVector::zeros(mi);
        let mut ds = DVector::zeros(mi);
        for i in 0..mi {
            let r_c = lam[i] * s[i] - mu_target;
            dlam[i] = (lam[i] * (r_g[i] + gdx[i]) - r_c) / s[i];
            ds[i] = -r_g[i] - gdx[i];
        }

        let mut alpha = 1.0f64;
        for i in 0..mi {
            if ds[i] < 0.0 {
                alpha = alpha.min(-s[i] / ds[i]);
            }
            if dlam[i] < 0.0 {
                alpha = alpha.min(-lam[i] / dlam[i]);
            }
        }
        alpha = (0.99 * alpha).min(1.0);
        if !alpha.is_finite() || alpha <= 1e-14 {
            return None;
        }

        x += alpha * &dx;
        nu += alpha * &dnu;
        for i in 0..mi {
            s[i] += alpha * ds[i];
            lam[i] += alpha * dlam[i];
            s[i] = s[i].max(1e-300);
            lam[i] = lam[i].max(1e-300);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return None;
        }
    }
    None
}
