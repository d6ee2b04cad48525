//! Rigidness posteriors: two-state chains along image rows and columns.

use rayon::prelude::*;

use super::{BatchView, DepthMap, EmissionTable, RigidnessMaps};

/// Posterior of the rigid state from one emission pair with equal priors.
#[inline]
pub fn local_posterior(log_rho: f64, log_mu: f64) -> f64 {
    let d = log_mu - log_rho;
    if d > 0.0 {
        let e = (-d).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + d.exp())
    }
}

/// Scaled forward-backward on a two-state chain with stay probability
/// `gamma` and a uniform initial distribution. Returns `q(W = 1)` per node.
pub fn forward_backward(log_rho: &[f64], log_mu: &[f64], gamma: f64) -> Vec<f64> {
    let n = log_rho.len();
    assert_eq!(n, log_mu.len());
    assert!(gamma > 0.0 && gamma <= 1.0, "gamma must lie in (0, 1]");
    if n == 0 {
        return Vec::new();
    }
    let flip = 1.0 - gamma;
    // Emissions rescaled per node so the larger is 1; the smaller is kept
    // off zero so a deterministic chain (gamma = 1) cannot underflow.
    let em: Vec<(f64, f64)> = log_rho
        .iter()
        .zip(log_mu)
        .map(|(&r, &m)| {
            let top = r.max(m);
            ((r - top).exp().max(1e-300), (m - top).exp().max(1e-300))
        })
        .collect();

    let mut fwd = vec![(0.0, 0.0); n];
    let mut a = (0.5 * em[0].0, 0.5 * em[0].1);
    let s = a.0 + a.1;
    a = (a.0 / s, a.1 / s);
    fwd[0] = a;
    for i in 1..n {
        let p1 = gamma * a.0 + flip * a.1;
        let p0 = flip * a.0 + gamma * a.1;
        let b = (p1 * em[i].0, p0 * em[i].1);
        let s = b.0 + b.1;
        a = (b.0 / s, b.1 / s);
        fwd[i] = a;
    }

    let mut out = vec![0.0; n];
    let mut beta = (1.0, 1.0);
    for i in (0..n).rev() {
        let (f1, f0) = fwd[i];
        let u1 = f1 * beta.0;
        let u0 = f0 * beta.1;
        out[i] = u1 / (u1 + u0);
        if i > 0 {
            let e1 = em[i].0 * beta.0;
            let e0 = em[i].1 * beta.1;
            let b1 = gamma * e1 + flip * e0;
            let b0 = flip * e1 + gamma * e0;
            let s = b1 + b0;
            beta = (b1 / s, b0 / s);
        }
    }
    out
}

#[inline]
fn logit(q: f64) -> f64 {
    let q = q.clamp(1e-300, 1.0 - 1e-16);
    q.ln() - (1.0 - q).ln()
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn smooth_frame(w: usize, h: usize, lr: &[f64], lm: &[f64], gamma: f64) -> Vec<f64> {
    let rows: Vec<f64> = (0..h)
        .into_par_iter()
        .flat_map_iter(|y| forward_backward(&lr[y * w..(y + 1) * w], &lm[y * w..(y + 1) * w], gamma))
        .collect();
    let cols: Vec<Vec<f64>> = (0..w)
        .into_par_iter()
        .map(|x| {
            let r: Vec<f64> = (0..h).map(|y| lr[y * w + x]).collect();
            let m: Vec<f64> = (0..h).map(|y| lm[y * w + x]).collect();
            forward_backward(&r, &m, gamma)
        })
        .collect();
    let mut out = rows;
    for (x, col) in cols.iter().enumerate() {
        for (y, qc) in col.iter().enumerate() {
            let i = y * w + x;
            out[i] = sigmoid(0.5 * (logit(out[i]) + logit(*qc)));
        }
    }
    out
}

/// Rigidness maps from a precomputed emission table. With `smooth` the row
/// and column chain posteriors are averaged in log-odds; without it each
/// pixel keeps its own emission posterior.
pub fn rigidness_from_emissions(table: &EmissionTable, gamma: f64, smooth: bool) -> RigidnessMaps {
    let (w, h, n) = (table.width(), table.height(), table.frames());
    let mut data = Vec::with_capacity(w * h * n);
    for k in 0..n {
        let (lr, lm) = (table.log_rho(k), table.log_mu(k));
        if smooth {
            data.extend(smooth_frame(w, h, lr, lm, gamma));
        } else {
            data.extend(lr.iter().zip(lm).map(|(&r, &m)| local_posterior(r, m)));
        }
    }
    RigidnessMaps::from_vec(w, h, n, data)
}

/// E-step: recompute emissions under `depth` and the view's poses, then
/// the rigidness posteriors.
pub fn update_rigidness(view: &BatchView, depth: &DepthMap, gamma: f64, smooth: bool) -> RigidnessMaps {
    let table = EmissionTable::compute(view, depth);
    rigidness_from_emissions(&table, gamma, smooth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Exhaustive marginals over all 2^n state sequences.
    fn brute_force(lr: &[f64], lm: &[f64], gamma: f64) -> Vec<f64> {
        let n = lr.len();
        let mut num = vec![0.0; n];
        let mut total = 0.0;
        for mask in 0u32..(1 << n) {
            let state = |i: usize| (mask >> i) & 1 == 1;
            let mut p = 0.5;
            for i in 0..n {
                if i > 0 {
                    p *= if state(i) == state(i - 1) { gamma } else { 1.0 - gamma };
                }
                p *= if state(i) { lr[i].exp() } else { lm[i].exp() };
            }
            total += p;
            for (i, v) in num.iter_mut().enumerate() {
                if state(i) {
                    *v += p;
                }
            }
        }
        num.iter().map(|v| v / total).collect()
    }

    #[test]
    fn matches_enumeration_on_short_chains() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in 1..=8 {
            for _ in 0..20 {
                let lr: Vec<f64> = (0..n).map(|_| rng.random_range(-6.0..2.0)).collect();
                let lm: Vec<f64> = (0..n).map(|_| rng.random_range(-6.0..2.0)).collect();
                let fb = forward_backward(&lr, &lm, 0.9);
                let bf = brute_force(&lr, &lm, 0.9);
                for (a, b) in fb.iter().zip(&bf) {
                    assert!((a - b).abs() < 1e-10, "n={n}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn single_node_is_local_posterior() {
        let q = forward_backward(&[-1.0], &[-2.5], 0.9);
        assert!((q[0] - local_posterior(-1.0, -2.5)).abs() < 1e-15);
    }

    #[test]
    fn uninformative_transition_gives_local_posteriors() {
        let lr = [-1.0, 0.5, -3.0, 2.0];
        let lm = [0.0, 0.0, -1.0, 1.0];
        let q = forward_backward(&lr, &lm, 0.5);
        for i in 0..4 {
            assert!((q[i] - local_posterior(lr[i], lm[i])).abs() < 1e-14);
        }
    }

    #[test]
    fn outlier_pixel_is_pulled_up_by_neighbours() {
        let mut lr = vec![0.0; 7];
        let lm = vec![-3.0; 7];
        lr[3] = -4.0;
        let q = forward_backward(&lr, &lm, 0.9);
        let bf = brute_force(&lr, &lm, 0.9);
        assert!((q[3] - bf[3]).abs() < 1e-12);
        assert!(q[3] > local_posterior(lr[3], lm[3]));
    }

    #[test]
    fn floored_emissions_stay_finite() {
        let lr = [-700.0, 0.0, -700.0, -700.0];
        let lm = [0.0, -700.0, -700.0, 5.0];
        let q = forward_backward(&lr, &lm, 1.0);
        assert!(q.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
    }

    #[test]
    fn equal_emissions_give_uniform_maps() {
        let table = EmissionTable::from_parts(5, 4, 2, vec![-1.0; 40], vec![-1.0; 40]);
        for smooth in [true, false] {
            let q = rigidness_from_emissions(&table, 0.9, smooth);
            assert!(q.frame(1).iter().all(|v| (v - 0.5).abs() < 1e-15));
        }
    }

    proptest! {
        #[test]
        fn posteriors_are_probabilities(
            lr in prop::collection::vec(-700.0f64..50.0, 1..40),
            seed in 0u64..1000,
            gamma in 0.5f64..=1.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let lm: Vec<f64> = lr.iter().map(|_| rng.random_range(-700.0..50.0)).collect();
            let q = forward_backward(&lr, &lm, gamma);
            prop_assert!(q.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
        }
    }
}
