use rand::Rng;

use crate::real::Real;

/// He-uniform initialization: U(-sqrt(6/fan_in), +sqrt(6/fan_in)).
pub fn he_uniform<R: Real, G: Rng>(rng: &mut G, fan_in: usize, n: usize) -> Vec<R> {
    let limit = (6.0 / fan_in as f64).sqrt();
    (0..n)
        .map(|_| R::from_f64(rng.gen_range(-limit..limit)))
        .collect()
}
