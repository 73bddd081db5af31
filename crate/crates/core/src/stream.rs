//! Per-agent random streams.
//!
//! A run is keyed by `(master_seed, run_index)`. Each agent owns a ChaCha8
//! stream selected by its index and consumes exactly one 64-bit word per
//! step, so the word used by agent `j` at step `n` depends on nothing but
//! `(master_seed, run_index, j, n)`. Two runs that share a key and differ
//! only in other agents' states therefore see identical draws for agent `j`.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

const INIT_STREAM_BIT: u64 = 1 << 32;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 256-bit key for one run.
pub fn run_key(master_seed: u64, run_index: u64) -> [u8; 32] {
    let mut s = master_seed;
    let mut t = splitmix64(&mut s) ^ run_index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut t).to_le_bytes());
    }
    key
}

fn stream(key: [u8; 32], id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(id);
    rng
}

/// Uniform in [0, 1) from the top 53 bits.
#[inline]
pub fn unit(word: u64) -> f64 {
    (word >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[derive(Clone, Debug)]
pub struct AgentStreams {
    key: [u8; 32],
    agents: Vec<ChaCha8Rng>,
}

impl AgentStreams {
    pub fn new(master_seed: u64, run_index: u64, n_agents: usize) -> Self {
        let key = run_key(master_seed, run_index);
        let agents = (0..n_agents as u64).map(|j| stream(key, j)).collect();
        Self { key, agents }
    }

    #[inline]
    pub fn next_unit(&mut self, agent: usize) -> f64 {
        unit(self.agents[agent].next_u64())
    }

    /// Words consumed so far by `agent`.
    pub fn position(&self, agent: usize) -> u128 {
        // ChaCha word positions count 32-bit words.
        self.agents[agent].get_word_pos() / 2
    }

    /// Independent stream for drawing initial states, one word per agent.
    pub fn initial_unit(&self, agent: usize) -> f64 {
        unit(stream(self.key, INIT_STREAM_BIT | agent as u64).next_u64())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_keyed() {
        let mut a = AgentStreams::new(7, 0, 3);
        let mut b = AgentStreams::new(7, 0, 5);
        for _ in 0..10 {
            for j in 0..3 {
                assert_eq!(a.next_unit(j).to_bits(), b.next_unit(j).to_bits());
            }
        }
        assert_eq!(a.position(1), 10);
        let mut c = AgentStreams::new(7, 1, 3);
        let mut d = AgentStreams::new(8, 0, 3);
        let x = AgentStreams::new(7, 0, 3).next_unit(0);
        assert_ne!(x, c.next_unit(0));
        assert_ne!(x, d.next_unit(0));
    }

    #[test]
    fn agents_differ() {
        let mut a = AgentStreams::new(1, 1, 2);
        assert_ne!(a.next_unit(0), a.next_unit(1));
        assert_ne!(a.initial_unit(0), a.initial_unit(1));
    }

    #[test]
    fn unit_range() {
        assert_eq!(unit(0), 0.0);
        assert!(unit(u64::MAX) < 1.0);
    }
}
