//! Counter-based random streams.
//!
//! Every draw is a pure function of `(seed, path, step, driver, counter)`, so a
//! path can be generated on any worker, in any order, and produce the same
//! numbers. The mixing function is SplitMix64's finalizer applied to a
//! chained combination of the key words.

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Position of a stream in the simulation: which path, which time step and
/// which risk driver it feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub path: u64,
    pub step: u64,
    pub driver: u64,
}

impl StreamKey {
    pub fn new(seed: u64, path: u64, step: u64, driver: u64) -> Self {
        Self {
            seed,
            path,
            step,
            driver,
        }
    }

    fn digest(&self) -> u64 {
        let mut h = mix64(self.seed.wrapping_add(GOLDEN));
        for word in [self.path, self.step, self.driver] {
            h = mix64(h ^ word.wrapping_mul(GOLDEN).wrapping_add(0x632b_e59b_d9b4_e019));
        }
        h
    }
}

/// A short stream of draws for one key.
#[derive(Debug, Clone)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(key: StreamKey) -> Self {
        Self {
            key: key.digest(),
            counter: 0,
        }
    }

    /// Stream for training-time randomness (initialisation, shuffling).
    pub fn from_seed(seed: u64, purpose: u64) -> Self {
        Self::new(StreamKey::new(seed, u64::MAX, purpose, u64::MAX))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key ^ mix64(self.counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform on the open interval (0, 1).
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Standard normal via Box-Muller, consuming two uniforms per draw.
    #[inline]
    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Index in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

/// Binomial(n, p) draw by inverse transform of a single uniform.
///
/// The pmf is walked upward from zero. For `p > 1/2` the complement is drawn
/// so the walk stays short; when the starting mass would underflow the pmf is
/// evaluated in log space.
pub fn binomial_inverse(n: u32, p: f64, u: f64) -> u32 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    if p > 0.5 {
        return n - binomial_inverse(n, 1.0 - p, 1.0 - u);
    }
    let nf = n as f64;
    let log_p0 = nf * (-p).ln_1p();
    if log_p0 > -700.0 {
        let ratio = p / (1.0 - p);
        let mut pmf = log_p0.exp();
        let mut cdf = pmf;
        let mut k = 0u32;
        while cdf < u && k < n {
            pmf *= (nf - k as f64) / (k as f64 + 1.0) * ratio;
            k += 1;
            cdf += pmf;
        }
        k
    } else {
        use statrs::function::gamma::ln_gamma;
        let ln_n = ln_gamma(nf + 1.0);
        let (lp, lq) = (p.ln(), (-p).ln_1p());
        let mut cdf = 0.0;
        for k in 0..=n {
            let kf = k as f64;
            let ln_pmf = ln_n - ln_gamma(kf + 1.0) - ln_gamma(nf - kf + 1.0) + kf * lp + (nf - kf) * lq;
            cdf += ln_pmf.exp();
            if cdf >= u {
                return k;
            }
        }
        n
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_pure_functions_of_key() {
        let key = StreamKey::new(7, 3, 11, 1);
        let a: Vec<u64> = (0..4).map({
            let mut r = CounterRng::new(key);
            move |_| r.next_u64()
        }).collect();
        let mut r = CounterRng::new(key);
        let b: Vec<u64> = (0..4).map(|_| r.next_u64()).collect();
        assert_eq!(a, b);
        let mut other = CounterRng::new(StreamKey::new(7, 4, 11, 1));
        assert_ne!(other.next_u64(), a[0]);
    }

    #[test]
    fn uniform_moments() {
        let mut r = CounterRng::new(StreamKey::new(1, 0, 0, 0));
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| r.uniform()).collect();
        let m = xs.iter().sum::<f64>() / n as f64;
        assert!((m - 0.5).abs() < 3.0 * (1.0f64 / 12.0 / n as f64).sqrt() * 2.0);
        assert!(xs.iter().all(|&x| x > 0.0 && x < 1.0));
    }

    #[test]
    fn normal_moments() {
        let mut r = CounterRng::new(StreamKey::new(2, 0, 0, 0));
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| r.normal()).collect();
        let m = xs.iter().sum::<f64>() / n as f64;
        let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64;
        assert!(m.abs() < 4.0 / (n as f64).sqrt());
        assert!((v - 1.0).abs() < 0.02);
    }

    #[test]
    fn binomial_edges_and_mean() {
        assert_eq!(binomial_inverse(10, 0.0, 0.3), 0);
        assert_eq!(binomial_inverse(10, 1.0, 0.3), 10);
        assert_eq!(binomial_inverse(0, 0.4, 0.3), 0);
        let mut r = CounterRng::new(StreamKey::new(3, 0, 0, 0));
        for &(n, p) in &[(1000u32, 0.9), (1000, 0.013), (5000, 0.45)] {
            let draws = 50_000;
            let s: f64 = (0..draws).map(|_| binomial_inverse(n, p, r.uniform()) as f64).sum();
            let m = s / draws as f64;
            let se = (n as f64 * p * (1.0 - p) / draws as f64).sqrt();
            assert!((m - n as f64 * p).abs() < 4.0 * se, "n={n} p={p} mean={m}");
        }
    }

    #[test]
    fn binomial_log_space_branch() {
        // n ln(1-p) < -700 forces the log-domain walk
        let n = 2000u32;
        let p = 0.45;
        let med = binomial_inverse(n, p, 0.5);
        assert!((med as i64 - 900).abs() <= 2);
        assert_eq!(binomial_inverse(n, p, 1.0 - 1e-300), n.min(binomial_inverse(n, p, 1.0 - 1e-300)));
    }
}
