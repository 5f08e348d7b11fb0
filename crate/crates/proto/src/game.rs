//! The forgery game played against the attestation device.
//!
//! The experimenter holds the key and a simulated device; the adversary
//! controls the device's memory and may call the measurement routine as an
//! oracle — through the simulator only, never touching the key — any number
//! of times. Given the game challenge, the adversary outputs a pair
//! `(M, sigma)`; it wins when `sigma` is the true measurement of `M` under
//! the game challenge while `M` differs from what the attested region held
//! at its oracle call. Honest oracle outputs are disqualified by that
//! inequality.

use rand::rngs::StdRng;
use rand::{RngCore, SeedableRng};
use rawb_core::model::MemoryLayout;
use rawb_core::swatt::{ct_eq, swatt_compute, Challenge, MasterKey};
use rawb_sim::{assemble, AttestOutcome, Machine, SimConfig};

/// Oracle access to the device's measurement routine.
pub struct SwattOracle<'a> {
    machine: &'a mut Machine,
    pub calls: u32,
    /// Attested-region contents at the most recent oracle call.
    pub last_ar: Option<Vec<u8>>,
}

impl SwattOracle<'_> {
    /// Length of the device's attested region.
    pub fn ar_len(&self) -> usize {
        self.machine.layout().ar_max as usize - self.machine.layout().ar_min as usize + 1
    }

    /// The adversary sets the attested contents and the challenge input,
    /// then runs the routine; the returned MAC is whatever lands in MR.
    pub fn call(&mut self, chal_input: &[u8; 32], ar_contents: &[u8]) -> [u8; 32] {
        assert_eq!(ar_contents.len(), self.ar_len(), "oracle runs on full images");
        let ar_min = self.machine.layout().ar_min;
        self.machine.poke(ar_min, ar_contents);
        self.calls += 1;
        self.last_ar = Some(ar_contents.to_vec());
        match self.machine.invoke_attestation(chal_input) {
            Ok(AttestOutcome::Completed { mac }) => mac,
            other => panic!("oracle attestation must complete, got {other:?}"),
        }
    }
}

/// One adversary strategy.
pub trait Adversary {
    fn name(&self) -> &'static str;

    /// Play one trial: observe the challenge, use the oracle at will,
    /// output a forgery attempt `(M, sigma)`.
    fn respond(&mut self, chal: &[u8; 32], oracle: &mut SwattOracle<'_>) -> (Vec<u8>, [u8; 32]);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GameReport {
    pub trials: u32,
    pub wins: u32,
    /// Outputs disqualified because `M` equals the attested contents at the
    /// adversary's oracle call.
    pub disqualified: u32,
}

/// Runs the game for `trials` independent challenges.
pub fn ra_game(
    key: &MasterKey,
    adversary: &mut dyn Adversary,
    trials: u32,
    ar_len: u16,
    seed: u64,
) -> GameReport {
    let mut machine = Machine::load(
        &MemoryLayout::default_base(),
        &assemble("loop: NOP\nJMP loop").unwrap(),
        &[0x5A; 16],
        key,
        &vec![0u8; ar_len as usize],
        SimConfig { record_trace: false, ..SimConfig::default() },
    )
    .expect("game machine loads");
    machine.step().expect("game machine runs");

    let mut rng = StdRng::seed_from_u64(seed);
    let mut report = GameReport { trials, ..Default::default() };
    for _ in 0..trials {
        let mut chal = [0u8; 32];
        rng.fill_bytes(&mut chal);
        let mut oracle = SwattOracle { machine: &mut machine, calls: 0, last_ar: None };
        let (m, sigma) = adversary.respond(&chal, &mut oracle);
        if oracle.last_ar.as_deref() == Some(&m[..]) {
            report.disqualified += 1;
            continue;
        }
        let true_mac = swatt_compute(key, &Challenge(chal), &m);
        if ct_eq(&sigma, &true_mac) {
            report.wins += 1;
        }
    }
    report
}

/// Outputs a random message and a random tag; no oracle use.
pub struct RandomGuessAdversary {
    rng: StdRng,
}

impl RandomGuessAdversary {
    pub fn new(seed: u64) -> Self {
        RandomGuessAdversary { rng: StdRng::seed_from_u64(seed) }
    }
}

impl Adversary for RandomGuessAdversary {
    fn name(&self) -> &'static str {
        "random-guess"
    }

    fn respond(&mut self, _chal: &[u8; 32], oracle: &mut SwattOracle<'_>) -> (Vec<u8>, [u8; 32]) {
        let mut m = vec![0u8; oracle.ar_len()];
        self.rng.fill_bytes(&mut m);
        let mut sigma = [0u8; 32];
        self.rng.fill_bytes(&mut sigma);
        (m, sigma)
    }
}

/// Replays the tag obtained for the previous trial's challenge.
pub struct ReplayAdversary {
    rng: StdRng,
    previous: Option<(Vec<u8>, [u8; 32])>,
}

impl ReplayAdversary {
    pub fn new(seed: u64) -> Self {
        ReplayAdversary { rng: StdRng::seed_from_u64(seed), previous: None }
    }
}

impl Adversary for ReplayAdversary {
    fn name(&self) -> &'static str {
        "replay"
    }

    fn respond(&mut self, chal: &[u8; 32], oracle: &mut SwattOracle<'_>) -> (Vec<u8>, [u8; 32]) {
        // Obtain a genuine tag for this challenge on adversary-chosen
        // contents, to be replayed against the next challenge.
        let mut contents = vec![0u8; oracle.ar_len()];
        self.rng.fill_bytes(&mut contents);
        let sigma = oracle.call(chal, &contents);
        let output = self
            .previous
            .take()
            .unwrap_or_else(|| (vec![0xFFu8; contents.len()], [0u8; 32]));
        self.previous = Some((contents, sigma));
        output
    }
}

/// Calls the oracle honestly and returns its exact input/output pair;
/// always disqualified by the `M != AR(t)` clause.
pub struct OracleHonestAdversary {
    rng: StdRng,
}

impl OracleHonestAdversary {
    pub fn new(seed: u64) -> Self {
        OracleHonestAdversary { rng: StdRng::seed_from_u64(seed) }
    }
}

impl Adversary for OracleHonestAdversary {
    fn name(&self) -> &'static str {
        "oracle-honest"
    }

    fn respond(&mut self, chal: &[u8; 32], oracle: &mut SwattOracle<'_>) -> (Vec<u8>, [u8; 32]) {
        let mut contents = vec![0u8; oracle.ar_len()];
        self.rng.fill_bytes(&mut contents);
        let sigma = oracle.call(chal, &contents);
        (contents, sigma)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key() -> MasterKey {
        MasterKey(core::array::from_fn(|i| (i * 11 + 5) as u8))
    }

    #[test]
    fn random_guess_never_wins() {
        let mut adv = RandomGuessAdversary::new(1);
        let report = ra_game(&key(), &mut adv, 500, 64, 99);
        assert_eq!(report.wins, 0);
        assert_eq!(report.disqualified, 0);
    }

    #[test]
    fn replay_never_wins() {
        let mut adv = ReplayAdversary::new(2);
        let report = ra_game(&key(), &mut adv, 200, 64, 100);
        assert_eq!(report.wins, 0);
    }

    #[test]
    fn honest_oracle_output_is_disqualified() {
        let mut adv = OracleHonestAdversary::new(3);
        let report = ra_game(&key(), &mut adv, 50, 64, 101);
        assert_eq!(report.wins, 0);
        assert_eq!(report.disqualified, 50);
    }

    #[test]
    fn oracle_returns_true_measurements() {
        // Sanity: the oracle's answer for (chal, M) is the real MAC, so an
        // adversary presenting it for the SAME challenge but different M
        // still loses.
        let k = key();
        let mut machine = Machine::load(
            &MemoryLayout::default_base(),
            &assemble("loop: NOP\nJMP loop").unwrap(),
            &[0x5A; 16],
            &k,
            &[0u8; 64],
            SimConfig { record_trace: false, ..SimConfig::default() },
        )
        .unwrap();
        machine.step().unwrap();
        let mut oracle = SwattOracle { machine: &mut machine, calls: 0, last_ar: None };
        let chal = [7u8; 32];
        let m = vec![0xABu8; 64];
        let sigma = oracle.call(&chal, &m);
        assert_eq!(sigma, swatt_compute(&k, &Challenge(chal), &m));
    }
}
