//! Seeded RNG and tensor initializers.
//!
//! The generator is a self-contained xoshiro256** so that identical
//! (kind, seed, shape) triples produce bit-identical values on every run and
//! every platform; checkpoints and loss traces are compared bytewise in tests.

use super::elem::Elem;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// xoshiro256** seeded via splitmix64.
#[derive(Clone, Debug)]
pub struct Rng {
    s: [u64; 4],
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        let mut sm = seed;
        let s = [
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
        ];
        Rng { s }
    }

    /// First draw of the stream derived for `tag`; used to seed per-parameter
    /// initializers so values depend only on (kind, seed, shape).
    pub fn seed_for(&self, tag: &str) -> u64 {
        self.derive(tag).next_u64()
    }

    /// Derive an independent stream, e.g. one per named parameter.
    pub fn derive(&self, tag: &str) -> Rng {
        let mut h: u64 = 0xcbf29ce484222325;
        for b in tag.as_bytes() {
            h ^= *b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        Rng::new(self.s[0] ^ h)
    }

    pub fn next_u64(&mut self) -> u64 {
        let result = self.s[1].wrapping_mul(5).rotate_left(7).wrapping_mul(9);
        let t = self.s[1] << 17;
        self.s[2] ^= self.s[0];
        self.s[3] ^= self.s[1];
        self.s[1] ^= self.s[2];
        self.s[0] ^= self.s[3];
        self.s[2] ^= t;
        self.s[3] = self.s[3].rotate_left(45);
        result
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [a, b).
    pub fn range(&mut self, a: f64, b: f64) -> f64 {
        a + (b - a) * self.uniform()
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.uniform() * n as f64) as usize % n
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        let u1 = (1.0 - self.uniform()).max(f64::MIN_POSITIVE);
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// How a tensor is filled at creation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Initializer {
    Zeros,
    Ones,
    Uniform { a: f64, b: f64 },
    /// Normal(0, std) resampled until within 2 std.
    TruncNormal { std: f64 },
    /// Uniform ±sqrt(1 / fan_in).
    FanInScaled { fan_in: usize },
}

impl Initializer {
    pub fn fill<E: Elem>(&self, seed: u64, n: usize) -> Vec<E> {
        let mut rng = Rng::new(seed);
        match *self {
            Initializer::Zeros => vec![E::ZERO; n],
            Initializer::Ones => vec![E::ONE; n],
            Initializer::Uniform { a, b } => {
                (0..n).map(|_| E::from_f64(rng.range(a, b))).collect()
            }
            Initializer::TruncNormal { std } => (0..n)
                .map(|_| {
                    let mut v = rng.normal();
                    while v.abs() > 2.0 {
                        v = rng.normal();
                    }
                    E::from_f64(v * std)
                })
                .collect(),
            Initializer::FanInScaled { fan_in } => {
                let bound = (1.0 / fan_in.max(1) as f64).sqrt();
                (0..n).map(|_| E::from_f64(rng.range(-bound, bound))).collect()
            }
        }
    }
}
