#![allow(dead_code)]

use activity_hhmm::model::Hmm;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random probability vector with every entry bounded away from zero.
pub fn random_distribution(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut p: Vec<f64> = raw.iter().map(|x| x / total).collect();
    // push the rounding residue into the largest entry so the sum is 1 within 1e-12
    let residue = 1.0 - p.iter().sum::<f64>();
    let i = (0..n).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap();
    p[i] += residue;
    p
}

pub fn random_hmm(rng: &mut impl Rng, k: usize, v: usize) -> Hmm {
    let initial = random_distribution(rng, k);
    let transition = (0..k).map(|_| random_distribution(rng, k)).collect();
    let emission = (0..k).map(|_| random_distribution(rng, v)).collect();
    Hmm::new(initial, transition, emission).unwrap()
}

/// Exhaustive enumeration over all `K^T` hidden paths. Returns the joint
/// probability of the observations and the unnormalized mass of each final
/// state, both in linear space.
pub fn enumerate_paths(hmm: &Hmm, ys: &[usize]) -> (f64, Vec<f64>) {
    let k = hmm.n_states();
    let t = ys.len();
    let mut final_mass = vec![0.0; k];
    let mut path = vec![0usize; t];
    let n_paths = k.pow(t as u32);
    for code in 0..n_paths {
        let mut c = code;
        for slot in path.iter_mut() {
            *slot = c % k;
            c /= k;
        }
        let mut p = hmm.initial()[path[0]] * hmm.emission()[path[0]][ys[0]];
        for i in 1..t {
            p *= hmm.transition()[path[i - 1]][path[i]] * hmm.emission()[path[i]][ys[i]];
        }
        final_mass[path[t - 1]] += p;
    }
    (final_mass.iter().sum(), final_mass)
}

/// Filtered marginals `P(X_t | y_1..y_t)` for every prefix, by enumeration.
pub fn enumerate_filtered(hmm: &Hmm, ys: &[usize]) -> Vec<Vec<f64>> {
    (1..=ys.len())
        .map(|t| {
            let (total, mass) = enumerate_paths(hmm, &ys[..t]);
            mass.iter().map(|m| m / total).collect()
        })
        .collect()
}

pub fn rel_err(got: f64, want: f64) -> f64 {
    if want == 0.0 {
        got.abs()
    } else {
        ((got - want) / want).abs()
    }
}
