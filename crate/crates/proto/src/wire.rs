//! Wire format of the attestation protocol.
//!
//! Every message starts with the fixed header `magic "VRSD", version 0x01,
//! type`. Multi-byte fields are big-endian. Three message types exist:
//!
//! ```text
//! Request (type 0x01):
//!   +0  magic "VRSD"      (4)
//!   +4  version = 0x01    (1)
//!   +5  type    = 0x01    (1)
//!   +6  flags              (1)   bit0 = auth token present
//!                                bit1 = region specified
//!   +7  chal              (32)
//!   +39 auth_token        (32, iff flags bit0)
//!   +.. ar_min, ar_max    (2+2 BE, iff flags bit1)
//!
//! Response (type 0x02):
//!   +6  status             (1)   0 = ok, 1 = rejected
//!   +7  mac               (32)   zero-filled when rejected
//!
//! Reset notice (type 0x03):
//!   +6  cycle              (8 BE)
//! ```
//!
//! Frame sizes are fixed given the flags: 39/71/43/75 bytes for requests,
//! 39 for responses, 14 for reset notices.

use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"VRSD";
pub const VERSION: u8 = 0x01;
pub const TYPE_REQUEST: u8 = 0x01;
pub const TYPE_RESPONSE: u8 = 0x02;
pub const TYPE_RESET_NOTICE: u8 = 0x03;

const FLAG_AUTH: u8 = 0x01;
const FLAG_REGION: u8 = 0x02;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttestationRequest {
    pub chal: [u8; 32],
    pub auth_token: Option<[u8; 32]>,
    /// Requested attested region, honored only on authenticated requests.
    pub region: Option<(u16, u16)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResponseStatus {
    Ok,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttestationResponse {
    pub status: ResponseStatus,
    /// Zero-filled when rejected.
    pub mac: [u8; 32],
}

/// The device reset mid-session; no response will come.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResetNotice {
    pub cycle: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    Request(AttestationRequest),
    Response(AttestationResponse),
    ResetNotice(ResetNotice),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("malformed frame at offset {offset}: {what}")]
pub struct WireError {
    pub offset: usize,
    pub what: String,
}

fn err(offset: usize, what: impl Into<String>) -> WireError {
    WireError { offset, what: what.into() }
}

impl AttestationRequest {
    pub fn encoded_len(&self) -> usize {
        39 + if self.auth_token.is_some() { 32 } else { 0 }
            + if self.region.is_some() { 4 } else { 0 }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(TYPE_REQUEST);
        let mut flags = 0u8;
        if self.auth_token.is_some() {
            flags |= FLAG_AUTH;
        }
        if self.region.is_some() {
            flags |= FLAG_REGION;
        }
        out.push(flags);
        out.extend_from_slice(&self.chal);
        if let Some(token) = &self.auth_token {
            out.extend_from_slice(token);
        }
        if let Some((lo, hi)) = self.region {
            out.extend_from_slice(&lo.to_be_bytes());
            out.extend_from_slice(&hi.to_be_bytes());
        }
        out
    }
}

impl AttestationResponse {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(39);
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(TYPE_RESPONSE);
        out.push(match self.status {
            ResponseStatus::Ok => 0,
            ResponseStatus::Rejected => 1,
        });
        out.extend_from_slice(&self.mac);
        out
    }
}

impl ResetNotice {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(14);
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(TYPE_RESET_NOTICE);
        out.extend_from_slice(&self.cycle.to_be_bytes());
        out
    }
}

impl Message {
    pub fn encode(&self) -> Vec<u8> {
        match self {
            Message::Request(r) => r.encode(),
            Message::Response(r) => r.encode(),
            Message::ResetNotice(n) => n.encode(),
        }
    }

    /// Decodes one message, rejecting bad magic, version, type, and any
    /// length that does not exactly match the flags.
    pub fn decode(bytes: &[u8]) -> Result<Message, WireError> {
        if bytes.len() < 6 {
            return Err(err(bytes.len(), "truncated header"));
        }
        if bytes[0..4] != MAGIC {
            return Err(err(0, "bad magic"));
        }
        if bytes[4] != VERSION {
            return Err(err(4, format!("unsupported version 0x{:02X}", bytes[4])));
        }
        match bytes[5] {
            TYPE_REQUEST => {
                if bytes.len() < 7 {
                    return Err(err(6, "missing flags"));
                }
                let flags = bytes[6];
                if flags & !(FLAG_AUTH | FLAG_REGION) != 0 {
                    return Err(err(6, format!("unknown flags 0x{flags:02X}")));
                }
                let expect = 39
                    + if flags & FLAG_AUTH != 0 { 32 } else { 0 }
                    + if flags & FLAG_REGION != 0 { 4 } else { 0 };
                if bytes.len() != expect {
                    return Err(err(
                        bytes.len().min(expect),
                        format!("request length {} != {expect}", bytes.len()),
                    ));
                }
                let mut chal = [0u8; 32];
                chal.copy_from_slice(&bytes[7..39]);
                let mut at = 39;
                let auth_token = if flags & FLAG_AUTH != 0 {
                    let mut t = [0u8; 32];
                    t.copy_from_slice(&bytes[at..at + 32]);
                    at += 32;
                    Some(t)
                } else {
                    None
                };
                let region = if flags & FLAG_REGION != 0 {
                    let lo = u16::from_be_bytes([bytes[at], bytes[at + 1]]);
                    let hi = u16::from_be_bytes([bytes[at + 2], bytes[at + 3]]);
                    if lo > hi {
                        return Err(err(at, "empty region"));
                    }
                    Some((lo, hi))
                } else {
                    None
                };
                Ok(Message::Request(AttestationRequest { chal, auth_token, region }))
            }
            TYPE_RESPONSE => {
                if bytes.len() != 39 {
                    return Err(err(
                        bytes.len().min(39),
                        format!("response length {} != 39", bytes.len()),
                    ));
                }
                let status = match bytes[6] {
                    0 => ResponseStatus::Ok,
                    1 => ResponseStatus::Rejected,
                    other => return Err(err(6, format!("bad status {other}"))),
                };
                let mut mac = [0u8; 32];
                mac.copy_from_slice(&bytes[7..39]);
                Ok(Message::Response(AttestationResponse { status, mac }))
            }
            TYPE_RESET_NOTICE => {
                if bytes.len() != 14 {
                    return Err(err(
                        bytes.len().min(14),
                        format!("reset notice length {} != 14", bytes.len()),
                    ));
                }
                let cycle = u64::from_be_bytes(bytes[6..14].try_into().unwrap());
                Ok(Message::ResetNotice(ResetNotice { cycle }))
            }
            other => Err(err(5, format!("unknown message type 0x{other:02X}"))),
        }
    }
}
