use rand::Rng;

/// Pink (1/f) noise via Paul Kellet's three-pole filter of white noise,
/// scaled to roughly unit peak.
pub fn pink_noise<R: Rng>(rng: &mut R, n: usize) -> Vec<f32> {
    let (mut b0, mut b1, mut b2) = (0.0f32, 0.0f32, 0.0f32);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let white: f32 = rng.gen_range(-1.0..1.0);
        b0 = 0.99765 * b0 + white * 0.0990460;
        b1 = 0.96300 * b1 + white * 0.2965164;
        b2 = 0.57000 * b2 + white * 1.0526913;
        out.push((b0 + b1 + b2 + white * 0.1848) * 0.25);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn low_frequencies_carry_more_energy() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let x = pink_noise(&mut rng, 65536);
        // band energy via naive DFT at a few probe frequencies
        let band = |f0: f64, f1: f64| -> f64 {
            let mut e = 0.0;
            let mut f = f0;
            while f < f1 {
                let w = 2.0 * std::f64::consts::PI * f / 16000.0;
                let (mut re, mut im) = (0.0f64, 0.0f64);
                for (i, &s) in x.iter().enumerate().take(16384) {
                    re += s as f64 * (w * i as f64).cos();
                    im += s as f64 * (w * i as f64).sin();
                }
                e += re * re + im * im;
                f *= 1.3;
            }
            e
        };
        let low = band(40.0, 400.0);
        let high = band(2000.0, 8000.0 / 1.3);
        assert!(low > high, "pink spectrum should tilt down: {low} vs {high}");
    }

    #[test]
    fn bounded_amplitude() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x = pink_noise(&mut rng, 100_000);
        // the filter's tail response can spike past 1.0; just make sure it
        // stays in a sane range and is not stuck at zero
        let peak = x.iter().fold(0.0f32, |m, v| m.max(v.abs()));
        assert!(peak < 3.0, "peak = {peak}");
        assert!(peak > 0.05);
    }
}
