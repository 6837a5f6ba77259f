//! Operator-splitting QP solver with polishing and infeasibility certificates.
//!
//! The iteration is the standard two-block ADMM on the splitting
//! `(x, z)` with `Ax = z`, solved through the reduced normal equations
//! `(P + sigma I + A' R A) x = rhs` so each step costs one cached Cholesky
//! backsolve. Convergence and certificates are always judged on the
//! *unscaled* data; Ruiz equilibration is purely internal.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::{kkt_residuals, objective_value, QpProblem, QpSettings, QpSolution, QpStatus};

const CHECK_INTERVAL: usize = 25;
const MIN_SCALING: f64 = 1e-4;
const MAX_SCALING: f64 = 1e4;
const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
// floor for adaptive proposals: tiny rho collapses the primal rate
const RHO_ADAPT_MIN: f64 = 1e-2;
const RHO_EQ_SCALE: f64 = 1e3;
const RHO_TRIGGER: f64 = 5.0;
const POLISH_REG: f64 = 1e-9;
const POLISH_REFINE: usize = 3;

struct Scaling {
    d: DVector<f64>,
    e: DVector<f64>,
    c: f64,
}

/// Modified Ruiz equilibration of `[P A'; A 0]` plus cost normalization.
fn ruiz(prob: &QpProblem, iters: usize) -> (QpProblem, Scaling) {
    let n = prob.n_vars();
    let m = prob.n_constraints();
    let mut p = prob.p.clone();
    let mut q = prob.q.clone();
    let mut a = prob.a.clone();
    let mut d = DVector::from_element(n, 1.0);
    let mut e = DVector::from_element(m, 1.0);
    let mut c = 1.0;

    let clamp = |v: f64| v.clamp(MIN_SCALING, MAX_SCALING);
    for _ in 0..iters {
        let mut dd = DVector::from_element(n, 1.0);
        for j in 0..n {
            let mut norm = 0.0f64;
            for i in 0..n {
                norm = norm.max(p[(i, j)].abs());
            }
            for i in 0..m {
                norm = norm.max(a[(i, j)].abs());
            }
            if norm > 0.0 {
                dd[j] = 1.0 / clamp(norm.sqrt());
            }
        }
        let mut de = DVector::from_element(m, 1.0);
        for i in 0..m {
            let mut norm = 0.0f64;
            for j in 0..n {
                norm = norm.max(a[(i, j)].abs());
            }
            if norm > 0.0 {
                de[i] = 1.0 / clamp(norm.sqrt());
            }
        }
        for i in 0..n {
            for j in 0..n {
                p[(i, j)] *= dd[i] * dd[j];
            }
        }
        for i in 0..m {
            for j in 0..n {
                a[(i, j)] *= de[i] * dd[j];
            }
        }
        for j in 0..n {
            q[j] *= dd[j];
            d[j] *= dd[j];
        }
        for i in 0..m {
            e[i] *= de[i];
        }

        // cost scaling keeps the objective O(1) relative to the constraints
        let mut mean_col = 0.0;
        for j in 0..n {
            let mut norm = 0.0f64;
            for i in 0..n {
                norm = norm.max(p[(i, j)].abs());
            }
            mean_col += norm;
        }
        if n > 0 {
            mean_col /= n as f64;
        }
        let denom = mean_col.max(q.amax());
        if denom > 0.0 {
            let gamma = 1.0 / clamp(denom);
            p *= gamma;
            q *= gamma;
            c *= gamma;
        }
    }

    let mut l = prob.l.clone();
    let mut u = prob.u.clone();
    for i in 0..m {
        if l[i].is_finite() {
            l[i] *= e[i];
        }
        if u[i].is_finite() {
            u[i] *= e[i];
        }
    }
    (QpProblem { p, q, a, l, u }, Scaling { d, e, c })
}

fn rho_vector(l: &DVector<f64>, u: &DVector<f64>, rho: f64) -> DVector<f64> {
    let m = l.len();
    let mut r = DVector::from_element(m, rho);
    for i in 0..m {
        if l[i].is_finite() && u[i].is_finite() && (u[i] - l[i]).abs() <= 1e-12 * (1.0 + u[i].abs()) {
            r[i] = (rho * RHO_EQ_SCALE).clamp(RHO_MIN, RHO_MAX);
        } else if !l[i].is_finite() && !u[i].is_finite() {
            r[i] = RHO_MIN;
        }
    }
    r
}

fn factorize(
    p: &DMatrix<f64>,
    a: &DMatrix<f64>,
    sigma: f64,
    rho: &DVector<f64>,
) -> Option<Cholesky<f64, Dyn>> {
    let n = p.ncols();
    let mut k = p.clone();
    for i in 0..n {
        k[(i, i)] += sigma;
    }
    if a.nrows() > 0 {
        let mut b = a.clone();
        for i in 0..a.nrows() {
            let s = rho[i].sqrt();
            for j in 0..n {
                b[(i, j)] *= s;
            }
        }
        k += b.tr_mul(&b);
    }
    Cholesky::new(k)
}

fn project(v: &mut DVector<f64>, l: &DVector<f64>, u: &DVector<f64>) {
    for i in 0..v.len() {
        v[i] = v[i].clamp(l[i], u[i]);
    }
}

struct Unscaled {
    x: DVector<f64>,
    y: DVector<f64>,
    z: DVector<f64>,
}

fn unscale(s: &Scaling, x: &DVector<f64>, y: &DVector<f64>, z: &DVector<f64>) -> Unscaled {
    let xu = x.component_mul(&s.d);
    let mut zu = z.clone();
    let mut yu = y.clone();
    for i in 0..zu.len() {
        zu[i] /= s.e[i];
        yu[i] *= s.e[i] / s.c;
    }
    Unscaled { x: xu, y: yu, z: zu }
}

/// OSQP-style primal infeasibility test on the unscaled delta-y direction.
fn primal_infeasible(prob: &QpProblem, dy: &DVector<f64>, eps: f64) -> bool {
    let norm = dy.amax();
    if norm <= 0.0 || !norm.is_finite() {
        return false;
    }
    let thresh = eps * norm;
    if prob.a.tr_mul(dy).amax() > thresh {
        return false;
    }
    let mut support = 0.0;
    for i in 0..dy.len() {
        let pos = dy[i].max(0.0);
        let neg = dy[i].min(0.0);
        if pos > 0.0 {
            if !prob.u[i].is_finite() {
                return false;
            }
            support += prob.u[i] * pos;
        }
        if neg < 0.0 {
            if !prob.l[i].is_finite() {
                return false;
            }
            support += prob.l[i] * neg;
        }
    }
    support <= -thresh
}

/// OSQP-style dual infeasibility (unboundedness) test on delta-x.
fn dual_infeasible(prob: &QpProblem, dx: &DVector<f64>, eps: f64) -> bool {
    let norm = dx.amax();
    if norm <= 0.0 || !norm.is_finite() {
        return false;
    }
    let thresh = eps * norm;
    if (&prob.p * dx).amax() > thresh {
        return false;
    }
    if prob.q.dot(dx) > -thresh {
        return false;
    }
    let adx = &prob.a * dx;
    for i in 0..adx.len() {
        let lo_fin = prob.l[i].is_finite();
        let up_fin = prob.u[i].is_finite();
        if lo_fin && up_fin {
            if adx[i].abs() > thresh {
                return false;
            }
        } else if up_fin {
            if adx[i] > thresh {
                return false;
            }
        } else if lo_fin && adx[i] < -thresh {
            return false;
        }
    }
    true
}

#[derive(Clone, Copy)]
enum ActiveRule {
    MultiplierSign,
    Proximity,
    Union,
}

/// Direct KKT solve on a guessed active set, with iterative refinement.
/// Returns a candidate primal/dual pair in unscaled space.
fn polish(
    prob: &QpProblem,
    x: &DVector<f64>,
    y: &DVector<f64>,
    rule: ActiveRule,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = prob.n_vars();
    let m = prob.n_constraints();
    let ax = &prob.a * x;

    let mut active: Vec<(usize, f64)> = Vec::new();
    for i in 0..m {
        let eq = prob.l[i].is_finite()
            && prob.u[i].is_finite()
            && (prob.u[i] - prob.l[i]).abs() <= 1e-12 * (1.0 + prob.u[i].abs());
        if eq {
            active.push((i, prob.l[i]));
            continue;
        }
        let prox_tol = 1e-6 * (1.0 + ax[i].abs());
        let near_lower = prob.l[i].is_finite() && ax[i] - prob.l[i] <= prox_tol;
        let near_upper = prob.u[i].is_finite() && prob.u[i] - ax[i] <= prox_tol;
        let (lower, upper) = match rule {
            ActiveRule::MultiplierSign => (y[i] < 0.0, y[i] > 0.0),
            ActiveRule::Proximity => (near_lower && !near_upper, near_upper && !near_lower),
            ActiveRule::Union => (y[i] < 0.0 || (near_lower && !near_upper), y[i] > 0.0 || (near_upper && !near_lower)),
        };
        if lower && prob.l[i].is_finite() {
            active.push((i, prob.l[i]));
        } else if upper && prob.u[i].is_finite() {
            active.push((i, prob.u[i]));
        }
    }

    let ma = active.len();
    let dim = n + ma;
    let mut kkt = DMatrix::zeros(dim, dim);
    kkt.view_mut((0, 0), (n, n)).copy_from(&prob.p);
    for i in 0..n {
        kkt[(i, i)] += POLISH_REG;
    }
    for (row, &(ci, _)) in active.iter().enumerate() {
        for j in 0..n {
            kkt[(n + row, j)] = prob.a[(ci, j)];
            kkt[(j, n + row)] = prob.a[(ci, j)];
        }
        kkt[(n + row, n + row)] = -POLISH_REG;
    }
    let mut rhs = DVector::zeros(dim);
    for j in 0..n {
        rhs[j] = -prob.q[j];
    }
    for (row, &(_, b)) in active.iter().enumerate() {
        rhs[n + row] = b;
    }

    let lu = kkt.clone().lu();
    let mut sol = lu.solve(&rhs)?;

    // refine against the unregularized system
    let mut kkt0 = kkt.clone();
    for i in 0..n {
        kkt0[(i, i)] -= POLISH_REG;
    }
    for row in 0..ma {
        kkt0[(n + row, n + row)] += POLISH_REG;
    }
    for _ in 0..POLISH_REFINE {
        let resid = &rhs - &kkt0 * &sol;
        if resid.amax() < 1e-14 * (1.0 + rhs.amax()) {
            break;
        }
        if let Some(corr) = lu.solve(&resid) {
            sol += corr;
        } else {
            break;
        }
    }
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }

    let xp = DVector::from_iterator(n, (0..n).map(|j| sol[j]));
    let mut yp = DVector::zeros(m);
    for (row, &(ci, _)) in active.iter().enumerate() {
        yp[ci] = sol[n + row];
    }
    Some((xp, yp))
}

fn residual_scales(prob: &QpProblem, un: &Unscaled) -> (f64, f64) {
    let ax = &prob.a * &un.x;
    let s_prim = ax.amax().max(un.z.amax());
    let s_dual = (&prob.p * &un.x)
        .amax()
        .max(prob.a.tr_mul(&un.y).amax())
        .max(prob.q.amax());
    (s_prim, s_dual)
}

pub fn solve(prob: &QpProblem, settings: &QpSettings) -> QpSolution {
    let n = prob.n_vars();
    let m = prob.n_constraints();
    let fail = |status: QpStatus| QpSolution {
        status,
        x: DVector::zeros(n),
        y: DVector::zeros(m),
        objective: f64::NAN,
        iterations: 0,
        primal_residual: f64::NAN,
        dual_residual: f64::NAN,
        polished: false,
    };
    if prob.validate().is_err() {
        return fail(QpStatus::NumericalError);
    }

    let (sp, scaling) = ruiz(prob, settings.scaling_iters);
    let mut rho_bar = settings.rho;
    let mut rho = rho_vector(&sp.l, &sp.u, rho_bar);
    let mut sigma = settings.sigma;
    let mut chol = match factorize(&sp.p, &sp.a, sigma, &rho) {
        Some(c) => c,
        None => {
            // PSD edge: bump the primal regularization a few times
            let mut found = None;
            for _ in 0..4 {
                sigma *= 100.0;
                if let Some(c) = factorize(&sp.p, &sp.a, sigma, &rho) {
                    found = Some(c);
                    break;
                }
            }
            match found {
                Some(c) => c,
                None => return fail(QpStatus::NumericalError),
            }
        }
    };

    let mut x = DVector::zeros(n);
    let mut z = DVector::zeros(m);
    let mut y = DVector::zeros(m);
    let mut y_prev_check = y.clone();
    let mut x_prev_check = x.clone();
    let mut refactors = 0usize;
    // refactorization is cheap on small systems and dominates on large ones
    let max_refactor = if n <= 200 { 40 } else { 8 };

    let mut iter = 0usize;
    while iter < settings.max_iter {
        iter += 1;

        // x-step through the cached factorization
        let mut rhs = sigma * &x - &sp.q;
        if m > 0 {
            let w = rho.component_mul(&z) - &y;
            rhs += sp.a.tr_mul(&w);
        }
        let x_tilde = chol.solve(&rhs);
        let z_tilde = if m > 0 { &sp.a * &x_tilde } else { DVector::zeros(0) };

        let alpha = settings.alpha;
        let x_next = alpha * &x_tilde + (1.0 - alpha) * &x;
        let mut z_cand = alpha * &z_tilde + (1.0 - alpha) * &z;
        for i in 0..m {
            z_cand[i] += y[i] / rho[i];
        }
        let mut z_next = z_cand.clone();
        project(&mut z_next, &sp.l, &sp.u);
        let mut y_next = y.clone();
        for i in 0..m {
            y_next[i] = rho[i] * (z_cand[i] - z_next[i]);
        }

        x = x_next;
        z = z_next;
        y = y_next;

        if x.iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
            return fail(QpStatus::NumericalError);
        }

        if iter % CHECK_INTERVAL == 0 || iter == settings.max_iter {
            let un = unscale(&scaling, &x, &y, &z);
            let ax = &prob.a * &un.x;
            let r_prim = if m > 0 { (&ax - &un.z).amax() } else { 0.0 };
            let r_dual = (&prob.p * &un.x + &prob.q + prob.a.tr_mul(&un.y)).amax();
            let (s_prim, s_dual) = residual_scales(prob, &un);
            let eps_prim = settings.eps_abs + settings.eps_rel * s_prim;
            let eps_dual = settings.eps_abs + settings.eps_rel * s_dual;

            if r_prim <= eps_prim && r_dual <= eps_dual {
                return finish(prob, settings, un, iter);
            }

            if m > 0 {
                let un_prev = unscale(&scaling, &x_prev_check, &y_prev_check, &z);
                let dy = &un.y - &un_prev.y;
                if primal_infeasible(prob, &dy, settings.eps_prim_inf) {
                    let mut sol = fail(QpStatus::PrimalInfeasible);
                    sol.iterations = iter;
                    sol.y = dy;
                    return sol;
                }
                let dx = &un.x - &un_prev.x;
                if dual_infeasible(prob, &dx, settings.eps_dual_inf) {
                    let mut sol = fail(QpStatus::DualInfeasible);
                    sol.iterations = iter;
                    sol.x = dx;
                    return sol;
                }
            }
            x_prev_check = x.clone();
            y_prev_check = y.clone();

            if settings.adaptive_rho && refactors < max_refactor && m > 0 {
                let num = r_prim / s_prim.max(1e-12);
                let den = (r_dual / s_dual.max(1e-12)).max(1e-18);
                let ratio = (num / den).sqrt();
                let proposed = (rho_bar * ratio).clamp(RHO_ADAPT_MIN, RHO_MAX);
                if proposed > rho_bar * RHO_TRIGGER || proposed < rho_bar / RHO_TRIGGER {
                    let candidate = rho_vector(&sp.l, &sp.u, proposed);
                    if let Some(c) = factorize(&sp.p, &sp.a, sigma, &candidate) {
                        chol = c;
                        rho_bar = proposed;
                        rho = candidate;
                        refactors += 1;
                    }
                }
            }
        }
    }

    // Iteration budget exhausted: polishing can still land the solution
    // exactly when the iterate has identified the right active set, and the
    // final status check decides honestly either way.
    let un = unscale(&scaling, &x, &y, &z);
    finish(prob, settings, un, settings.max_iter)
}

/// Post-convergence: try to polish, verify unscaled KKT residuals, and
/// assemble the final solution report.
fn finish(prob: &QpProblem, settings: &QpSettings, un: Unscaled, iterations: usize) -> QpSolution {
    let (mut best_x, mut best_y) = (un.x.clone(), un.y.clone());
    let (mut best_prim, mut best_dual) = kkt_residuals(prob, &best_x, &best_y);
    let mut best_score = best_prim.max(best_dual);
    let mut polished = false;

    // A polished candidate is accepted when it is at least as feasible and
    // stationary as the iterate and its objective does not exceed the
    // iterate's beyond tolerance: a feasible point whose objective matches
    // an eps-optimal point is itself eps-optimal, independent of how the
    // multipliers split across degenerate active rows. The band widens with
    // the iterate's own residual gap so a sharp polish of a sloppy iterate
    // is not rejected.
    let obj_un = objective_value(prob, &un.x);
    let ax_un = &prob.a * &un.x;
    let rel_gap = best_prim / (1.0 + ax_un.amax()) + best_dual / (1.0 + prob.q.amax());
    let obj_tol = (1e-6 + 10.0 * rel_gap) * (1.0 + obj_un.abs());
    for rule in [ActiveRule::MultiplierSign, ActiveRule::Union, ActiveRule::Proximity] {
        if let Some((xp, yp)) = polish(prob, &un.x, &un.y, rule) {
            let (pp, dp) = kkt_residuals(prob, &xp, &yp);
            let score = pp.max(dp);
            if score < best_score && objective_value(prob, &xp) <= obj_un + obj_tol {
                best_x = xp;
                best_y = yp;
                best_prim = pp;
                best_dual = dp;
                best_score = score;
                polished = true;
            }
        }
    }

    let ax = &prob.a * &best_x;
    let s_prim = ax.amax().max(1.0);
    let s_dual = (&prob.p * &best_x)
        .amax()
        .max(prob.a.tr_mul(&best_y).amax())
        .max(prob.q.amax())
        .max(1.0);
    let status = if best_prim <= settings.kkt_tol * s_prim && best_dual <= settings.kkt_tol * s_dual {
        QpStatus::Optimal
    } else {
        QpStatus::MaxIterations
    };

    QpSolution {
        status,
        objective: objective_value(prob, &best_x),
        x: best_x,
        y: best_y,
        iterations,
        primal_residual: best_prim,
        dual_residual: best_dual,
        polished,
    }
}
