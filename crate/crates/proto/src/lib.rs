//! The challenge-response attestation protocol: bit-exact wire format,
//! length-prefixed framing over TCP or an in-memory channel, verifier and
//! prover endpoints backed by the simulated device, and the forgery-game
//! harness.

pub mod endpoints;
pub mod game;
pub mod transport;
pub mod wire;

pub use endpoints::{
    verifier_round, ProtoError, Prover, RejectCause, VerifierState, VerifierVerdict,
};
pub use game::{
    ra_game, Adversary, GameReport, OracleHonestAdversary, RandomGuessAdversary, ReplayAdversary,
    SwattOracle,
};
pub use transport::{memory_pair, read_frame, write_frame, MemoryEndpoint, TransportError};
pub use wire::{
    AttestationRequest, AttestationResponse, Message, ResetNotice, ResponseStatus, WireError,
};
