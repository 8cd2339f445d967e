//! Reparameterized diagonal Gaussian squashed into the unit box by `tanh`.

use rand::Rng;
use rand_distr::StandardNormal;

use super::tape::{softplus, Tape, Var};
use super::tensor::{Real, Tensor};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LN_TWO_PI: f64 = 0.918_938_533_204_672_7;

/// `ln(1 - tanh(u)^2)` without cancellation for large `|u|`.
pub fn log_one_minus_tanh_sq<F: Real>(u: F) -> F {
    F::c(2.0) * (F::c(std::f64::consts::LN_2) - u - softplus(F::c(-2.0) * u))
}

pub fn standard_normal<F: Real, R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Tensor<F> {
    Tensor::from_fn(rows, cols, |_, _| F::c(rng.sample::<f64, _>(StandardNormal)))
}

/// Differentiable sample: returns `(action, log_prob)` with shapes
/// `B x A` and `B x 1`. `eps` holds the standard-normal draws.
pub fn squashed_sample<F: Real>(tape: &mut Tape<F>, mean: Var, log_std: Var, eps: &Tensor<F>) -> (Var, Var) {
    let log_std = tape.clamp(log_std, F::c(LOG_STD_MIN), F::c(LOG_STD_MAX));
    let std = tape.exp(log_std);
    let e = tape.constant(eps.clone());
    let noise = tape.mul(std, e);
    let u = tape.add(mean, noise);
    let action = tape.tanh(u);

    // log N(u; mean, std) = -eps^2/2 - log_std - ln(2π)/2
    let quad = tape.constant(eps.map(|x| F::c(-0.5) * x * x - F::c(HALF_LN_TWO_PI)));
    let gauss = tape.sub(quad, log_std);

    // ln(1 - tanh(u)^2) = 2 (ln 2 - u - softplus(-2u))
    let m2u = tape.scale(u, F::c(-2.0));
    let sp = tape.softplus(m2u);
    let u_sp = tape.add(u, sp);
    let inner = tape.neg(u_sp);
    let inner = tape.add_const(inner, F::c(std::f64::consts::LN_2));
    let jac = tape.scale(inner, F::c(2.0));

    let per_dim = tape.sub(gauss, jac);
    let log_prob = tape.sum_cols(per_dim);
    (action, log_prob)
}

/// Tape-free single-vector sample.
pub fn sample_squashed_gaussian<R: Rng + ?Sized>(mean: &[f64], log_std: &[f64], rng: &mut R) -> (Vec<f64>, f64) {
    let mut action = Vec::with_capacity(mean.len());
    let mut log_prob = 0.0;
    for (&m, &ls) in mean.iter().zip(log_std) {
        let ls = ls.clamp(LOG_STD_MIN, LOG_STD_MAX);
        let eps: f64 = rng.sample(StandardNormal);
        let u = m + ls.exp() * eps;
        action.push(u.tanh());
        log_prob += -0.5 * eps * eps - ls - HALF_LN_TWO_PI - log_one_minus_tanh_sq(u);
    }
    (action, log_prob)
}

/// Density of a squashed action in the open box `(-1, 1)^A`.
pub fn squashed_log_prob(action: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    action
        .iter()
        .zip(mean.iter().zip(log_std))
        .map(|(&a, (&m, &ls))| {
            let ls = ls.clamp(LOG_STD_MIN, LOG_STD_MAX);
            let u = a.atanh();
            let z = (u - m) / ls.exp();
            -0.5 * z * z - ls - HALF_LN_TWO_PI - log_one_minus_tanh_sq(u)
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn stable_jacobian_matches_direct_formula() {
        for &u in &[-3.0f64, -0.5, 0.0, 0.2, 1.7, 4.0] {
            let direct = (1.0 - u.tanh().powi(2)).ln();
            assert!((log_one_minus_tanh_sq(u) - direct).abs() < 1e-12);
        }
        // Far in the tail the direct formula underflows; the stable one does not.
        assert!(log_one_minus_tanh_sq(40.0f64).is_finite());
    }

    #[test]
    fn vanishing_std_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (a, _) = sample_squashed_gaussian(&[0.4, -1.2], &[-20.0, -20.0], &mut rng);
        assert!((a[0] - 0.4f64.tanh()).abs() < 1e-8);
        assert!((a[1] - (-1.2f64).tanh()).abs() < 1e-8);
    }

    #[test]
    fn actions_stay_inside_the_box() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10_000 {
            let (a, lp) = sample_squashed_gaussian(&[3.0, -3.0], &[2.0, 2.0], &mut rng);
            assert!(a.iter().all(|x| (-1.0..=1.0).contains(x)));
            assert!(lp.is_finite());
        }
    }

    #[test]
    fn log_prob_of_sample_agrees_with_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mean = [0.3, -0.8];
        let log_std = [-0.4, 0.1];
        for _ in 0..100 {
            let (a, lp) = sample_squashed_gaussian(&mean, &log_std, &mut rng);
            if a.iter().any(|x| x.abs() > 0.999_999) {
                continue;
            }
            assert!((lp - squashed_log_prob(&a, &mean, &log_std)).abs() < 1e-6);
        }
    }

    #[test]
    fn log_prob_matches_binned_density() {
        const N: usize = 1_000_000;
        const BINS: usize = 20;
        let (mean, log_std) = ([0.2], [-0.5]);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut counts = [0usize; BINS];
        for _ in 0..N {
            let (a, _) = sample_squashed_gaussian(&mean, &log_std, &mut rng);
            let b = ((a[0] + 1.0) / 2.0 * BINS as f64) as usize;
            counts[b.min(BINS - 1)] += 1;
        }
        let width = 2.0 / BINS as f64;
        let mut compared = 0;
        for (i, &c) in counts.iter().enumerate() {
            // At least 40k counts keeps sampling noise under 0.5%.
            if c < 40_000 {
                continue;
            }
            // Bin average of the claimed density, Simpson's rule.
            let lo = -1.0 + i as f64 * width;
            let k = 32;
            let dx = width / k as f64;
            let mass: f64 = (0..=k)
                .map(|j| {
                    let w = if j == 0 || j == k { 1.0 } else if j % 2 == 1 { 4.0 } else { 2.0 };
                    w * squashed_log_prob(&[lo + j as f64 * dx], &mean, &log_std).exp()
                })
                .sum::<f64>()
                * dx
                / 3.0;
            let empirical = c as f64 / (N as f64 * width);
            let exact = mass / width;
            assert!((empirical / exact - 1.0).abs() < 0.02, "bin {i}: {empirical} vs {exact}");
            compared += 1;
        }
        assert!(compared >= 8, "{compared}");
    }

    #[test]
    fn tape_sample_matches_plain_formula() {
        let mut tape = Tape::<f64>::new();
        let mean = tape.constant(Tensor::row(&[0.3, -0.8]));
        let log_std = tape.constant(Tensor::row(&[-0.4, 0.1]));
        let eps = Tensor::row(&[0.7, -1.3]);
        let (a, lp) = squashed_sample(&mut tape, mean, log_std, &eps);
        let u0 = 0.3 + (-0.4f64).exp() * 0.7;
        let u1 = -0.8 + (0.1f64).exp() * -1.3;
        assert!((tape.value(a).data[0] - u0.tanh()).abs() < 1e-15);
        assert!((tape.value(a).data[1] - u1.tanh()).abs() < 1e-15);
        let expect = squashed_log_prob(&[u0.tanh(), u1.tanh()], &[0.3, -0.8], &[-0.4, 0.1]);
        assert!((tape.value(lp).item() - expect).abs() < 1e-9);
    }
}
