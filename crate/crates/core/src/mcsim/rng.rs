use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Which noise a block of variates feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Plant,
    Observation,
    Initial,
}

/// Standard normal variates for one simulated path.
///
/// Path `i` reads ChaCha8 stream `i` of the run seed. Every `(step, channel)`
/// block owns a fixed window of the stream, so each variate is a function of
/// `(seed, path, step, channel)` alone and never of thread scheduling.
pub struct PathNoise {
    rng: ChaCha8Rng,
    plant_words: u128,
    observation_words: u128,
    initial_words: u128,
}

/// Two 64-bit words per Box–Muller pair, two 32-bit words per 64-bit word.
fn window(count: usize) -> u128 {
    (count.div_ceil(2) * 4) as u128
}

impl PathNoise {
    pub fn new(seed: u64, path: u64, plant_dim: usize, obs_dim: usize, state_dim: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(path);
        Self {
            rng,
            plant_words: window(plant_dim),
            observation_words: window(obs_dim),
            initial_words: window(state_dim),
        }
    }

    fn offset(&self, step: usize, channel: Channel) -> u128 {
        let per_step = self.plant_words + self.observation_words;
        match channel {
            Channel::Initial => 0,
            Channel::Plant => self.initial_words + step as u128 * per_step,
            Channel::Observation => self.initial_words + step as u128 * per_step + self.plant_words,
        }
    }

    fn unit(&mut self) -> f64 {
        // (0, 1]: keeps the logarithm finite
        ((self.rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Fills `out` with the block keyed by `(step, channel)`.
    pub fn fill(&mut self, step: usize, channel: Channel, out: &mut [f64]) {
        let pos = self.offset(step, channel);
        if self.rng.get_word_pos() != pos {
            self.rng.set_word_pos(pos);
        }
        for pair in out.chunks_mut(2) {
            let radius = (-2.0 * self.unit().ln()).sqrt();
            let angle = std::f64::consts::TAU * self.unit();
            pair[0] = radius * angle.cos();
            if let Some(second) = pair.get_mut(1) {
                *second = radius * angle.sin();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blocks_do_not_depend_on_reading_order() {
        let mut forward = PathNoise::new(7, 3, 3, 2, 1);
        let mut scattered = PathNoise::new(7, 3, 3, 2, 1);
        let mut a = [0.0; 2];
        let mut b = [0.0; 2];
        for step in 0..5 {
            let mut skip = [0.0; 3];
            forward.fill(step, Channel::Plant, &mut skip);
            forward.fill(step, Channel::Observation, &mut a);
        }
        scattered.fill(4, Channel::Observation, &mut b);
        assert_eq!(a, b);
    }

    #[test]
    fn paths_and_channels_differ() {
        let mut p0 = PathNoise::new(1, 0, 1, 1, 1);
        let mut p1 = PathNoise::new(1, 1, 1, 1, 1);
        let (mut a, mut b, mut c) = ([0.0], [0.0], [0.0]);
        p0.fill(0, Channel::Plant, &mut a);
        p1.fill(0, Channel::Plant, &mut b);
        p0.fill(0, Channel::Observation, &mut c);
        assert_ne!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn moments_are_standard() {
        let mut noise = PathNoise::new(11, 0, 2, 0, 0);
        let n = 200_000;
        let (mut sum, mut sq) = (0.0, 0.0);
        let mut buf = [0.0; 2];
        for step in 0..n / 2 {
            noise.fill(step, Channel::Plant, &mut buf);
            for v in buf {
                sum += v;
                sq += v * v;
            }
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean * mean;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt());
        assert!((var - 1.0).abs() < 4.0 * (2.0 / n as f64).sqrt());
    }
}
