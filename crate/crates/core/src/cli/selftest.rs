//! Avalanche experiment: flip one random bit of a random message and count
//! how many authenticator bits change.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::secassoc::{hmac_md5, HMAC_MD5_LEN};

pub const BAND: (f64, f64) = (0.45, 0.55);
pub const DEFAULT_TRIALS: usize = 1000;
const KEY_LEN: usize = 16;
const MAX_MESSAGE_LEN: usize = 64;
const MAC_BITS: f64 = (HMAC_MD5_LEN * 8) as f64;

#[derive(Debug, Clone, PartialEq)]
pub struct AvalancheReport {
    pub trials: usize,
    pub seed: u64,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl AvalancheReport {
    pub fn in_band(&self) -> bool {
        (BAND.0..=BAND.1).contains(&self.mean)
    }
}

impl fmt::Display for AvalancheReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "trials={} seed={} mean={:.6} min={:.6} max={:.6} band=[{}, {}] result={}",
            self.trials,
            self.seed,
            self.mean,
            self.min,
            self.max,
            BAND.0,
            BAND.1,
            if self.in_band() { "pass" } else { "fail" }
        )
    }
}

/// Runs the experiment with any 16-octet keyed MAC. Each trial draws a key,
/// a message of 1 to 64 octets and one bit position, in that order.
pub fn avalanche_with(trials: usize, seed: u64, mac: impl Fn(&[u8], &[u8]) -> [u8; HMAC_MD5_LEN]) -> AvalancheReport {
    assert!(trials >= 1, "at least one trial");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut sum, mut min, mut max) = (0.0, f64::MAX, f64::MIN);
    for _ in 0..trials {
        let mut key = [0u8; KEY_LEN];
        rng.fill(&mut key[..]);
        let len = rng.gen_range(1..=MAX_MESSAGE_LEN);
        let mut msg = vec![0u8; len];
        rng.fill(&mut msg[..]);
        let bit = rng.gen_range(0..len * 8);
        let before = mac(&key, &msg);
        msg[bit / 8] ^= 0x80 >> (bit % 8);
        let after = mac(&key, &msg);
        let changed: u32 = before.iter().zip(&after).map(|(x, y)| (x ^ y).count_ones()).sum();
        let frac = f64::from(changed) / MAC_BITS;
        sum += frac;
        min = min.min(frac);
        max = max.max(frac);
    }
    AvalancheReport {
        trials,
        seed,
        mean: sum / trials as f64,
        min,
        max,
    }
}

pub fn avalanche(trials: usize, seed: u64) -> AvalancheReport {
    avalanche_with(trials, seed, hmac_md5)
}
