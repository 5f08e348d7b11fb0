//! Verifier and prover endpoints.
//!
//! The verifier issues one outstanding challenge at a time, recomputes the
//! expected MAC over its reference image and compares in constant time;
//! challenges are one-shot. In authenticated mode the challenge embeds a
//! strictly increasing counter so the device-side monotonic check never
//! rejects an honest verifier.
//!
//! The prover endpoint owns a simulated machine with the monitors enabled
//! and drives the call wrapper for each request. A mid-session reset
//! surfaces as a distinct reset notice rather than a timeout.

use std::io::{Read, Write};

use rand::rngs::StdRng;
use rand::{Rng, RngCore, SeedableRng};
use rawb_core::swatt::{ct_eq, hmac_sha256, swatt_compute, Challenge, MasterKey};
use rawb_sim::{AttestOutcome, Machine, SimError, WrapperOptions};
use thiserror::Error;

use crate::transport::{read_frame, write_frame, TransportError};
use crate::wire::{
    AttestationRequest, AttestationResponse, Message, ResetNotice, ResponseStatus, WireError,
};

#[derive(Debug, Error)]
pub enum ProtoError {
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("protocol error: {0}")]
    Protocol(String),
}

/// Why the verifier rejected a round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RejectCause {
    /// The presented challenge is not the outstanding one.
    NoSuchChallenge,
    /// The prover answered with a rejected status.
    ProverRejected,
    /// The MAC does not match the expected image.
    MacMismatch,
    /// The device reset mid-session.
    DeviceReset { cycle: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VerifierVerdict {
    Accept,
    Reject(RejectCause),
}

impl VerifierVerdict {
    pub fn accepted(&self) -> bool {
        matches!(self, VerifierVerdict::Accept)
    }
}

struct Outstanding {
    chal: [u8; 32],
    expected: Vec<u8>,
    auth: bool,
}

/// Verifier-side state: the shared key, the known-good image, the
/// challenge counter, and the single outstanding challenge.
pub struct VerifierState {
    key: MasterKey,
    expected_image: Vec<u8>,
    chal_counter: u128,
    outstanding: Option<Outstanding>,
    rng: StdRng,
}

impl VerifierState {
    pub fn new(key: MasterKey, expected_image: Vec<u8>, seed: Option<u64>) -> VerifierState {
        let rng = match seed {
            Some(s) => StdRng::seed_from_u64(s),
            None => StdRng::from_entropy(),
        };
        VerifierState {
            key,
            expected_image,
            chal_counter: 0,
            outstanding: None,
            rng,
        }
    }

    /// Restores the counter from persistent storage (authenticated mode).
    pub fn set_counter(&mut self, counter: u128) {
        self.chal_counter = counter;
    }

    pub fn counter(&self) -> u128 {
        self.chal_counter
    }

    pub fn expected_image(&self) -> &[u8] {
        &self.expected_image
    }

    /// Issues a new request and remembers it as the outstanding challenge.
    ///
    /// Plain mode uses 32 random bytes. Authenticated mode increments the
    /// counter and places it in the high half, guaranteeing every issued
    /// challenge compares strictly greater than all earlier ones; the token
    /// is the keyed MAC of the challenge.
    pub fn new_request(&mut self, auth: bool, region: Option<(u16, u16)>) -> AttestationRequest {
        self.new_request_expecting(auth, region, None)
    }

    /// Like [`VerifierState::new_request`], with an explicit reference
    /// image for region-specified requests.
    pub fn new_request_expecting(
        &mut self,
        auth: bool,
        region: Option<(u16, u16)>,
        expected: Option<Vec<u8>>,
    ) -> AttestationRequest {
        let mut chal = [0u8; 32];
        if auth {
            self.chal_counter += 1;
            chal[..16].copy_from_slice(&self.chal_counter.to_be_bytes());
            self.rng.fill_bytes(&mut chal[16..]);
        } else {
            self.rng.fill_bytes(&mut chal);
        }
        let auth_token = auth.then(|| hmac_sha256(&self.key.0, &chal));
        self.outstanding = Some(Outstanding {
            chal,
            expected: expected.unwrap_or_else(|| self.expected_image.clone()),
            auth,
        });
        AttestationRequest { chal, auth_token, region }
    }

    /// Checks a response against an outstanding challenge. The challenge is
    /// consumed either way: one shot per issue.
    pub fn check(&mut self, chal: &[u8; 32], response: &AttestationResponse) -> VerifierVerdict {
        let Some(outstanding) = self.outstanding.take() else {
            return VerifierVerdict::Reject(RejectCause::NoSuchChallenge);
        };
        if &outstanding.chal != chal {
            return VerifierVerdict::Reject(RejectCause::NoSuchChallenge);
        }
        if response.status != ResponseStatus::Ok {
            return VerifierVerdict::Reject(RejectCause::ProverRejected);
        }
        let expected = self.expected_mac_for(&outstanding);
        if ct_eq(&response.mac, &expected) {
            VerifierVerdict::Accept
        } else {
            VerifierVerdict::Reject(RejectCause::MacMismatch)
        }
    }

    fn expected_mac_for(&self, outstanding: &Outstanding) -> [u8; 32] {
        // Authenticated responses key the MAC on the token rather than the
        // challenge; both reduce to the two-call composition.
        if outstanding.auth {
            let token = hmac_sha256(&self.key.0, &outstanding.chal);
            let derived = hmac_sha256(&self.key.0, &token);
            hmac_sha256(&derived, &outstanding.expected)
        } else {
            swatt_compute(&self.key, &Challenge(outstanding.chal), &outstanding.expected)
        }
    }

    /// Random bytes from the verifier's seeded source (test plumbing).
    pub fn gen_bytes(&mut self, out: &mut [u8]) {
        self.rng.fill_bytes(out);
    }

    pub fn gen_range(&mut self, range: std::ops::Range<usize>) -> usize {
        self.rng.gen_range(range)
    }
}

/// Prover endpoint: owns the simulated device.
pub struct Prover {
    machine: Machine,
}

impl Prover {
    /// Wraps a loaded machine. The debug monitor switch is not reachable
    /// through the protocol: machines must have the monitors on.
    pub fn new(machine: Machine) -> Result<Prover, ProtoError> {
        if !machine.monitors_enabled() {
            return Err(ProtoError::Protocol(
                "prover machines must run with monitors enabled".into(),
            ));
        }
        Ok(Prover { machine })
    }

    pub fn machine(&self) -> &Machine {
        &self.machine
    }

    pub fn machine_mut(&mut self) -> &mut Machine {
        &mut self.machine
    }

    pub fn into_machine(self) -> Machine {
        self.machine
    }

    /// Serves one attestation request on the device.
    pub fn handle(&mut self, request: &AttestationRequest) -> Result<Message, ProtoError> {
        if !self.machine.is_idle() {
            // The device reset (or died) before the request could be
            // served; the connection observes a reset notice.
            let cycle = self
                .machine
                .trace()
                .first_reset_cycle()
                .unwrap_or_else(|| self.machine.cycle());
            return Ok(Message::ResetNotice(ResetNotice { cycle }));
        }
        let auth_device = self.machine.layout().has_ctr();
        // Tokens only mean something to the authenticated routine; the
        // region is honored only on authenticated requests.
        let token = if auth_device { request.auth_token.as_ref() } else { None };
        let region = if request.auth_token.is_some() && auth_device {
            request.region
        } else {
            None
        };
        let opts = WrapperOptions { disable_interrupts: true, region_override: region };
        let outcome = match self.machine.invoke_attestation_with(&request.chal, token, opts) {
            Ok(o) => o,
            Err(SimError::Layout(v)) => {
                return Err(ProtoError::Protocol(format!("requested region invalid: {v:?}")));
            }
            Err(e) => return Err(e.into()),
        };
        Ok(match outcome {
            AttestOutcome::Completed { mac } => {
                Message::Response(AttestationResponse { status: ResponseStatus::Ok, mac })
            }
            AttestOutcome::Rejected { .. } => Message::Response(AttestationResponse {
                status: ResponseStatus::Rejected,
                mac: [0u8; 32],
            }),
            AttestOutcome::ResetOccurred { cycle } => {
                Message::ResetNotice(ResetNotice { cycle })
            }
        })
    }

    /// Serves exactly one request on a connection.
    pub fn serve_connection(&mut self, conn: &mut (impl Read + Write)) -> Result<(), ProtoError> {
        let frame = read_frame(conn)?;
        let message = Message::decode(&frame)?;
        let Message::Request(request) = message else {
            return Err(ProtoError::Protocol("expected a request".into()));
        };
        let reply = self.handle(&request)?;
        write_frame(conn, &reply.encode())?;
        Ok(())
    }
}

/// Drives one verifier round over a connection: send the request, read the
/// reply, check it.
pub fn verifier_round(
    state: &mut VerifierState,
    conn: &mut (impl Read + Write),
    auth: bool,
    region: Option<(u16, u16)>,
    expected_override: Option<Vec<u8>>,
) -> Result<VerifierVerdict, ProtoError> {
    let request = state.new_request_expecting(auth, region, expected_override);
    write_frame(conn, &request.encode())?;
    let frame = read_frame(conn)?;
    match Message::decode(&frame)? {
        Message::Response(response) => Ok(state.check(&request.chal, &response)),
        Message::ResetNotice(notice) => {
            // Consume the challenge: the device rebooted.
            let _ = state.check(&request.chal, &AttestationResponse {
                status: ResponseStatus::Rejected,
                mac: [0; 32],
            });
            Ok(VerifierVerdict::Reject(RejectCause::DeviceReset { cycle: notice.cycle }))
        }
        Message::Request(_) => Err(ProtoError::Protocol("unexpected request".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::memory_pair;
    use rawb_core::model::MemoryLayout;
    use rawb_sim::{assemble, SimConfig};

    fn key() -> MasterKey {
        MasterKey(core::array::from_fn(|i| (i * 7 + 3) as u8))
    }

    fn machine(auth: bool, image: &[u8]) -> Machine {
        let layout = if auth {
            MemoryLayout::default_auth()
        } else {
            MemoryLayout::default_base()
        };
        let mut m = Machine::load(
            &layout,
            &assemble("loop: NOP\nJMP loop").unwrap(),
            &[0x5A; 16],
            &key(),
            image,
            SimConfig::default(),
        )
        .unwrap();
        m.step().unwrap();
        m
    }

    #[test]
    fn honest_round_trip_accepts() {
        let image = vec![0x42u8; 200];
        let mut verifier = VerifierState::new(key(), image.clone(), Some(1));
        let mut prover = Prover::new(machine(false, &image)).unwrap();
        let (mut v_end, mut p_end) = memory_pair();

        let request = verifier.new_request(false, None);
        write_frame(&mut v_end, &request.encode()).unwrap();
        prover.serve_connection(&mut p_end).unwrap();
        let frame = read_frame(&mut v_end).unwrap();
        let Message::Response(response) = Message::decode(&frame).unwrap() else {
            panic!("expected response");
        };
        assert_eq!(verifier.check(&request.chal, &response), VerifierVerdict::Accept);
    }

    #[test]
    fn tampered_image_is_rejected() {
        let image = vec![0x42u8; 200];
        let mut tampered = image.clone();
        tampered[77] ^= 0x01;
        let mut verifier = VerifierState::new(key(), image, Some(2));
        let mut prover = Prover::new(machine(false, &tampered)).unwrap();

        let request = verifier.new_request(false, None);
        let Message::Response(response) = prover.handle(&request).unwrap() else {
            panic!("expected response");
        };
        assert_eq!(
            verifier.check(&request.chal, &response),
            VerifierVerdict::Reject(RejectCause::MacMismatch)
        );
    }

    #[test]
    fn challenges_are_one_shot_and_bound() {
        let image = vec![1u8; 64];
        let mut verifier = VerifierState::new(key(), image.clone(), Some(3));
        let mut prover = Prover::new(machine(false, &image)).unwrap();

        let request = verifier.new_request(false, None);
        let Message::Response(response) = prover.handle(&request).unwrap() else {
            panic!()
        };
        // Correct MAC but presented for a different challenge.
        let other = [9u8; 32];
        assert_eq!(
            verifier.check(&other, &response),
            VerifierVerdict::Reject(RejectCause::NoSuchChallenge)
        );
        // The round consumed the challenge; replaying the response fails.
        assert_eq!(
            verifier.check(&request.chal, &response),
            VerifierVerdict::Reject(RejectCause::NoSuchChallenge)
        );
    }

    #[test]
    fn auth_challenges_strictly_increase_and_verify() {
        let image = vec![5u8; 64];
        let mut verifier = VerifierState::new(key(), image.clone(), Some(4));
        let r1 = verifier.new_request(true, None);
        let r2 = verifier.new_request(true, None);
        assert!(r2.chal > r1.chal, "issued challenges must increase");
        // The token verifies against the device-side recomputation.
        assert_eq!(r2.auth_token.unwrap(), hmac_sha256(&key().0, &r2.chal));
        // Plain mode carries no token bytes.
        let plain = verifier.new_request(false, None);
        assert!(plain.auth_token.is_none());
        assert_eq!(plain.encode().len(), 39);
    }

    #[test]
    fn auth_round_trip_and_replay_rejection() {
        let image = vec![0x66u8; 128];
        let mut verifier = VerifierState::new(key(), image.clone(), Some(5));
        let mut prover = Prover::new(machine(true, &image)).unwrap();

        let request = verifier.new_request(true, None);
        let Message::Response(response) = prover.handle(&request).unwrap() else {
            panic!()
        };
        assert_eq!(verifier.check(&request.chal, &response), VerifierVerdict::Accept);

        // Replaying the exact request: the device counter already advanced.
        let Message::Response(replayed) = prover.handle(&request).unwrap() else {
            panic!()
        };
        assert_eq!(replayed.status, ResponseStatus::Rejected);
    }

    #[test]
    fn reset_notice_surfaces_key_reading_prover() {
        // A machine whose program reads the key before it would respond.
        let layout = MemoryLayout::default_base();
        let image = vec![3u8; 64];
        let mut m = Machine::load(
            &layout,
            &assemble(&format!("LOAD r4, 0x{:04X}\nHALT", layout.k_min)).unwrap(),
            &[0x5A; 16],
            &key(),
            &image,
            SimConfig::default(),
        )
        .unwrap();
        // The malicious read happens before the request arrives.
        let _ = m.run(rawb_sim::StopCondition::MaxCycles(1)).unwrap();
        let mut prover = Prover::new(m).unwrap();
        let mut verifier = VerifierState::new(key(), image, Some(6));
        let (mut v_end, mut p_end) = memory_pair();
        let request = verifier.new_request(false, None);
        write_frame(&mut v_end, &request.encode()).unwrap();

        // Device: the pending violation resets the machine while serving.
        let frame = read_frame(&mut p_end).unwrap();
        let Message::Request(req) = Message::decode(&frame).unwrap() else {
            panic!()
        };
        let reply = prover.handle(&req).unwrap();
        assert_eq!(reply, Message::ResetNotice(ResetNotice { cycle: 0 }));
    }

    #[test]
    fn monitorless_machine_is_refused() {
        let layout = MemoryLayout::default_base();
        let m = Machine::load(
            &layout,
            &assemble("HALT").unwrap(),
            &[0x5A; 16],
            &key(),
            &[1u8; 8],
            SimConfig { monitors_enabled: false, ..SimConfig::default() },
        )
        .unwrap();
        assert!(Prover::new(m).is_err());
    }

    #[test]
    fn region_specified_auth_round() {
        let image = vec![0xC1u8; 256];
        let layout = MemoryLayout::default_auth();
        let mut prover = Prover::new(machine(true, &image)).unwrap();
        let mut verifier = VerifierState::new(key(), image.clone(), Some(7));

        let lo = layout.ar_min + 16;
        let hi = lo + 63;
        let window = image[16..80].to_vec();
        let request = verifier.new_request_expecting(true, Some((lo, hi)), Some(window));
        let Message::Response(response) = prover.handle(&request).unwrap() else {
            panic!()
        };
        assert_eq!(verifier.check(&request.chal, &response), VerifierVerdict::Accept);
    }
}
