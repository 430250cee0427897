//! Constraint rows of the legged complex and simple systems, as signed
//! violations with analytic Jacobians.
//!
//! Complex rows per index: joint angle/velocity/torque bounds on the
//! auxiliary variables, ground-reaction-force bounds, zero-force equalities
//! for swing legs from the contact schedule, a four-face friction pyramid,
//! the speed-dependent linear motor model, and terrain non-penetration for
//! every foot. The simple system keeps only the force-space rows (bounds,
//! contact, friction) with optimistically widened force bounds.

use nalgebra::{DMatrix, DVector};

use super::terrain::Terrain;
use super::{LeggedParams, N_LEGS, Q_FOOT};
use crate::model::RowMeta;

const JOINTS: usize = 12;

/// Row metadata for the complex constraint set under a stance bitmask.
/// Force bounds and friction rows exist only for stance legs; swing forces
/// are already pinned to zero by the contact equality rows, and duplicating
/// rows over pinned coordinates only degenerates the active set.
pub fn complex_meta(stance_mask: usize) -> Vec<RowMeta> {
    let mut m = Vec::new();
    for _ in 0..JOINTS {
        m.push(RowMeta::ineq("theta_max"));
        m.push(RowMeta::ineq("theta_min"));
    }
    for _ in 0..JOINTS {
        m.push(RowMeta::ineq("dtheta_max"));
        m.push(RowMeta::ineq("dtheta_min"));
    }
    for _ in 0..JOINTS {
        m.push(RowMeta::ineq("tau_max"));
        m.push(RowMeta::ineq("tau_min"));
    }
    for l in 0..N_LEGS {
        if stance_mask & (1 << l) != 0 {
            m.extend_from_slice(&grf_bound_meta());
        }
    }
    for l in 0..N_LEGS {
        if stance_mask & (1 << l) == 0 {
            m.push(RowMeta::eq("contact_zero_grf"));
            m.push(RowMeta::eq("contact_zero_grf"));
            m.push(RowMeta::eq("contact_zero_grf"));
        }
    }
    for l in 0..N_LEGS {
        if stance_mask & (1 << l) != 0 {
            for _ in 0..4 {
                m.push(RowMeta::ineq("friction"));
            }
        }
    }
    for _ in 0..JOINTS {
        m.push(RowMeta::ineq("motor_model_max"));
        m.push(RowMeta::ineq("motor_model_min"));
    }
    for l in 0..N_LEGS {
        if stance_mask & (1 << l) != 0 {
            // A stance foot exerts force through contact; the schedule's
            // implicit assumption becomes an explicit equality.
            m.push(RowMeta::eq("stance_contact"));
        } else {
            m.push(RowMeta::ineq("terrain"));
        }
    }
    m
}

fn grf_bound_meta() -> [RowMeta; 6] {
    [
        RowMeta::ineq("grf_x_max"),
        RowMeta::ineq("grf_x_min"),
        RowMeta::ineq("grf_y_max"),
        RowMeta::ineq("grf_y_min"),
        RowMeta::ineq("grf_z_max"),
        RowMeta::ineq("grf_z_min"),
    ]
}

/// Row metadata for the simple constraint set under a stance bitmask.
pub fn simple_meta(stance_mask: usize) -> Vec<RowMeta> {
    let mut m = Vec::new();
    for l in 0..N_LEGS {
        if stance_mask & (1 << l) != 0 {
            m.extend_from_slice(&grf_bound_meta());
        }
    }
    for l in 0..N_LEGS {
        if stance_mask & (1 << l) == 0 {
            m.push(RowMeta::eq("contact_zero_grf"));
            m.push(RowMeta::eq("contact_zero_grf"));
            m.push(RowMeta::eq("contact_zero_grf"));
        }
    }
    for l in 0..N_LEGS {
        if stance_mask & (1 << l) != 0 {
            for _ in 0..4 {
                m.push(RowMeta::ineq("friction"));
            }
        }
    }
    m
}

fn push_grf_rows(vals: &mut Vec<f64>, grf: &[f64], z_max: f64, t_max: f64) {
    vals.push(grf[0] - t_max);
    vals.push(-grf[0] - t_max);
    vals.push(grf[1] - t_max);
    vals.push(-grf[1] - t_max);
    vals.push(grf[2] - z_max);
    vals.push(-grf[2]);
}

fn push_friction_rows(vals: &mut Vec<f64>, grf: &[f64], mu: f64) {
    vals.push(grf[0] - mu * grf[2]);
    vals.push(-grf[0] - mu * grf[2]);
    vals.push(grf[1] - mu * grf[2]);
    vals.push(-grf[1] - mu * grf[2]);
}

/// Complex constraint values. `u_body` occupies the first 12 control slots;
/// `aux` is `[theta, dtheta, tau]`.
pub fn complex_values(
    x: &DVector<f64>,
    u: &DVector<f64>,
    aux: &DVector<f64>,
    stance_mask: usize,
    terrain: &Terrain,
    p: &LeggedParams,
) -> DVector<f64> {
    let mut vals = Vec::with_capacity(160);
    // Joint angle bounds (per joint type).
    for l in 0..N_LEGS {
        for j in 0..3 {
            let th = aux[3 * l + j];
            vals.push(th - p.theta_max[j]);
            vals.push(p.theta_min[j] - th);
        }
    }
    for k in 0..JOINTS {
        let dth = aux[JOINTS + k];
        vals.push(dth - p.dtheta_max);
        vals.push(-dth - p.dtheta_max);
    }
    for k in 0..JOINTS {
        let tau = aux[2 * JOINTS + k];
        vals.push(tau - p.tau_max);
        vals.push(-tau - p.tau_max);
    }
    for l in 0..N_LEGS {
        if stance_mask & (1 << l) != 0 {
            push_grf_rows(
                &mut vals,
                &[u[3 * l], u[3 * l + 1], u[3 * l + 2]],
                p.grf_z_max,
                p.grf_tangential_max,
            );
        }
    }
    for l in 0..N_LEGS {
        if stance_mask & (1 << l) == 0 {
            vals.push(u[3 * l]);
            vals.push(u[3 * l + 1]);
            vals.push(u[3 * l + 2]);
        }
    }
    for l in 0..N_LEGS {
        if stance_mask & (1 << l) != 0 {
            push_friction_rows(&mut vals, &[u[3 * l], u[3 * l + 1], u[3 * l + 2]], p.mu);
        }
    }
    let rate = p.tau_max / p.dtheta_max;
    for k in 0..JOINTS {
        let tau = aux[2 * JOINTS + k];
        let dth = aux[JOINTS + k];
        vals.push(tau - p.tau_max + rate * dth);
        vals.push(-tau - p.tau_max - rate * dth);
    }
    for l in 0..N_LEGS {
        let px = x[Q_FOOT.start + 3 * l];
        let py = x[Q_FOOT.start + 3 * l + 1];
        let pz = x[Q_FOOT.start + 3 * l + 2];
        vals.push(terrain.height(px, py) - pz);
    }
    DVector::from_vec(vals)
}

/// Jacobians of [`complex_values`] with respect to `(x, u, aux)`.
pub fn complex_jacobian(
    x: &DVector<f64>,
    _u: &DVector<f64>,
    _aux: &DVector<f64>,
    stance_mask: usize,
    terrain: &Terrain,
    p: &LeggedParams,
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let n_stance = stance_mask.count_ones() as usize;
    let n_contact = 3 * (N_LEGS - n_stance);
    let m = 24 + 24 + 24 + 6 * n_stance + n_contact + 4 * n_stance + 24 + N_LEGS;
    let mut jx = DMatrix::zeros(m, x.len());
    let mut ju = DMatrix::zeros(m, 24);
    let mut ja = DMatrix::zeros(m, 36);
    let mut r = 0;
    // Joint angle bounds.
    for k in 0..JOINTS {
        ja[(r, k)] = 1.0;
        r += 1;
        ja[(r, k)] = -1.0;
        r += 1;
    }
    for k in 0..JOINTS {
        ja[(r, JOINTS + k)] = 1.0;
        r += 1;
        ja[(r, JOINTS + k)] = -1.0;
        r += 1;
    }
    for k in 0..JOINTS {
        ja[(r, 2 * JOINTS + k)] = 1.0;
        r += 1;
        ja[(r, 2 * JOINTS + k)] = -1.0;
        r += 1;
    }
    for l in 0..N_LEGS {
        if stance_mask & (1 << l) != 0 {
            for c in 0..3 {
                ju[(r, 3 * l + c)] = 1.0;
                r += 1;
                ju[(r, 3 * l + c)] = -1.0;
                r += 1;
            }
        }
    }
    for l in 0..N_LEGS {
        if stance_mask & (1 << l) == 0 {
            for c in 0..3 {
                ju[(r, 3 * l + c)] = 1.0;
                r += 1;
            }
        }
    }
    for l in 0..N_LEGS {
        if stance_mask & (1 << l) != 0 {
            for (c, sign) in [(0usize, 1.0), (0, -1.0), (1, 1.0), (1, -1.0)] {
                ju[(r, 3 * l + c)] = sign;
                ju[(r, 3 * l + 2)] = -p.mu;
                r += 1;
            }
        }
    }
    let rate = p.tau_max / p.dtheta_max;
    for k in 0..JOINTS {
        ja[(r, 2 * JOINTS + k)] = 1.0;
        ja[(r, JOINTS + k)] = rate;
        r += 1;
        ja[(r, 2 * JOINTS + k)] = -1.0;
        ja[(r, JOINTS + k)] = -rate;
        r += 1;
    }
    for l in 0..N_LEGS {
        let px = x[Q_FOOT.start + 3 * l];
        let py = x[Q_FOOT.start + 3 * l + 1];
        let (gx, gy) = terrain.gradient(px, py);
        jx[(r, Q_FOOT.start + 3 * l)] = gx;
        jx[(r, Q_FOOT.start + 3 * l + 1)] = gy;
        jx[(r, Q_FOOT.start + 3 * l + 2)] = -1.0;
        r += 1;
    }
    debug_assert_eq!(r, m);
    (jx, ju, ja)
}

/// Simple constraint values over the reduced control (the forces).
pub fn simple_values(
    us: &DVector<f64>,
    stance_mask: usize,
    p: &LeggedParams,
) -> DVector<f64> {
    let mut vals = Vec::with_capacity(48);
    let z_max = p.grf_z_max * p.simple_grf_factor;
    let t_max = p.grf_tangential_max * p.simple_grf_factor;
    for l in 0..N_LEGS {
        if stance_mask & (1 << l) != 0 {
            push_grf_rows(&mut vals, &[us[3 * l], us[3 * l + 1], us[3 * l + 2]], z_max, t_max);
        }
    }
    for l in 0..N_LEGS {
        if stance_mask & (1 << l) == 0 {
            vals.push(us[3 * l]);
            vals.push(us[3 * l + 1]);
            vals.push(us[3 * l + 2]);
        }
    }
    for l in 0..N_LEGS {
        if stance_mask & (1 << l) != 0 {
            push_friction_rows(&mut vals, &[us[3 * l], us[3 * l + 1], us[3 * l + 2]], p.mu);
        }
    }
    DVector::from_vec(vals)
}

/// Jacobians of [`simple_values`] with respect to `(x_s, u_s)`.
pub fn simple_jacobian(
    n_xs: usize,
    stance_mask: usize,
    p: &LeggedParams,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let n_stance = stance_mask.count_ones() as usize;
    let n_contact = 3 * (N_LEGS - n_stance);
    let m = 6 * n_stance + n_contact + 4 * n_stance;
    let jx = DMatrix::zeros(m, n_xs);
    let mut ju = DMatrix::zeros(m, 12);
    let mut r = 0;
    for l in 0..N_LEGS {
        if stance_mask & (1 << l) != 0 {
            for c in 0..3 {
                ju[(r, 3 * l + c)] = 1.0;
                r += 1;
                ju[(r, 3 * l + c)] = -1.0;
                r += 1;
            }
        }
    }
    for l in 0..N_LEGS {
        if stance_mask & (1 << l) == 0 {
            for c in 0..3 {
                ju[(r, 3 * l + c)] = 1.0;
                r += 1;
            }
        }
    }
    for l in 0..N_LEGS {
        if stance_mask & (1 << l) != 0 {
            for (c, sign) in [(0usize, 1.0), (0, -1.0), (1, 1.0), (1, -1.0)] {
                ju[(r, 3 * l + c)] = sign;
                ju[(r, 3 * l + 2)] = -p.mu;
                r += 1;
            }
        }
    }
    debug_assert_eq!(r, m);
    (jx, ju)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::legged::stand_state;

    #[test]
    fn stance_vertical_force_has_friction_margin() {
        let p = LeggedParams::default();
        let x = stand_state(&p, 0.0, 0.0, 0.0);
        let mut u = DVector::zeros(24);
        u[2] = 100.0;
        let aux = DVector::zeros(36);
        let vals = complex_values(&x, &u, &aux, 0b1111, &Terrain::flat(0.0), &p);
        let meta = complex_meta(0b1111);
        for (v, m) in vals.iter().zip(&meta) {
            if m.name == "friction" {
                assert!(*v <= -69.9999 || *v == 0.0, "friction row {v}");
            }
        }
        // The first friction row of leg 0 has margin mu * 100 = 70.
        let idx = meta.iter().position(|m| m.name == "friction").unwrap();
        assert!((vals[idx] + 70.0).abs() < 1e-12);
    }

    #[test]
    fn tangential_overload_violates_pyramid() {
        let p = LeggedParams::default();
        let x = stand_state(&p, 0.0, 0.0, 0.0);
        let mut u = DVector::zeros(24);
        // Tangential force twice the normal force with mu = 0.7.
        u[0] = 200.0;
        u[2] = 100.0;
        let aux = DVector::zeros(36);
        let vals = complex_values(&x, &u, &aux, 0b1111, &Terrain::flat(0.0), &p);
        let meta = complex_meta(0b1111);
        let idx = meta.iter().position(|m| m.name == "friction").unwrap();
        assert!((vals[idx] - (200.0 - 70.0)).abs() < 1e-12);
    }

    #[test]
    fn motor_model_margins_match_hand_lines() {
        let p = LeggedParams::default();
        let x = stand_state(&p, 0.0, 0.0, 0.0);
        let u = DVector::zeros(24);
        let mut aux = DVector::zeros(36);
        aux[24] = p.tau_max; // joint 0 torque at the bound
        let vals = complex_values(&x, &u, &aux, 0b1111, &Terrain::flat(0.0), &p);
        let meta = complex_meta(0b1111);
        let idx = meta.iter().position(|m| m.name == "motor_model_max").unwrap();
        assert_eq!(vals[idx], 0.0);

        aux[12] = p.dtheta_max / 2.0; // joint 0 velocity at half limit
        let vals = complex_values(&x, &u, &aux, 0b1111, &Terrain::flat(0.0), &p);
        assert!((vals[idx] - p.tau_max / 2.0).abs() < 1e-12);
    }

    #[test]
    fn swing_leg_grf_violates_contact_rows() {
        let p = LeggedParams::default();
        let x = stand_state(&p, 0.0, 0.0, 0.0);
        let mut u = DVector::zeros(24);
        u[5] = 25.0; // leg 1 vertical force while swinging
        let aux = DVector::zeros(36);
        let mask = 0b1101; // leg 1 swings
        let vals = complex_values(&x, &u, &aux, mask, &Terrain::flat(0.0), &p);
        let meta = complex_meta(mask);
        let contact: Vec<f64> = vals
            .iter()
            .zip(&meta)
            .filter(|(_, m)| m.name == "contact_zero_grf")
            .map(|(v, _)| *v)
            .collect();
        assert_eq!(contact.len(), 3);
        assert_eq!(contact[2], 25.0);
    }

    #[test]
    fn jacobians_match_finite_differences() {
        use rand::{Rng, SeedableRng};
        let p = LeggedParams::default();
        let terrain = Terrain::from_profile(0.0, &[(0.4, 0.2)], 0.02);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let mask = 0b0111;
        let mut x = stand_state(&p, 0.0, 0.0, 0.0);
        for i in 0..x.len() {
            x[i] += rng.random_range(-0.1..0.1);
        }
        let u = DVector::from_fn(24, |_, _| rng.random_range(-40.0..40.0));
        let aux = DVector::from_fn(36, |_, _| rng.random_range(-1.0..1.0));
        let (jx, ju, ja) = complex_jacobian(&x, &u, &aux, mask, &terrain, &p);
        let h = 1e-7;
        let f = |x: &DVector<f64>, u: &DVector<f64>, a: &DVector<f64>| {
            complex_values(x, u, a, mask, &terrain, &p)
        };
        for j in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let fd = (f(&xp, &u, &aux) - f(&xm, &u, &aux)) / (2.0 * h);
            assert!((&fd - jx.column(j)).amax() < 1e-5, "x col {j}");
        }
        for j in 0..24 {
            let mut up = u.clone();
            let mut um = u.clone();
            up[j] += h;
            um[j] -= h;
            let fd = (f(&x, &up, &aux) - f(&x, &um, &aux)) / (2.0 * h);
            assert!((&fd - ju.column(j)).amax() < 1e-6, "u col {j}");
        }
        for j in 0..36 {
            let mut ap = aux.clone();
            let mut am = aux.clone();
            ap[j] += h;
            am[j] -= h;
            let fd = (f(&x, &u, &ap) - f(&x, &u, &am)) / (2.0 * h);
            assert!((&fd - ja.column(j)).amax() < 1e-6, "aux col {j}");
        }
    }
}
