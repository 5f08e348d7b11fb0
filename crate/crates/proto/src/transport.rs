//! Length-prefixed framing over any byte stream, plus an in-memory duplex
//! channel for single-process tests.
//!
//! Each frame is a big-endian `u32` length followed by that many payload
//! bytes. One request per connection.

use std::collections::VecDeque;
use std::io::{self, Read, Write};
use std::sync::{Arc, Mutex};

use thiserror::Error;

/// Frames beyond this size are rejected outright.
pub const MAX_FRAME: u32 = 4096;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("frame of {0} bytes exceeds the {MAX_FRAME}-byte limit")]
    TooLarge(u32),
    #[error("connection closed mid-frame")]
    Closed,
}

pub fn write_frame(w: &mut impl Write, payload: &[u8]) -> Result<(), TransportError> {
    if payload.len() as u32 > MAX_FRAME {
        return Err(TransportError::TooLarge(payload.len() as u32));
    }
    w.write_all(&(payload.len() as u32).to_be_bytes())?;
    w.write_all(payload)?;
    w.flush()?;
    Ok(())
}

pub fn read_frame(r: &mut impl Read) -> Result<Vec<u8>, TransportError> {
    let mut len_bytes = [0u8; 4];
    read_exact_or_closed(r, &mut len_bytes)?;
    let len = u32::from_be_bytes(len_bytes);
    if len > MAX_FRAME {
        return Err(TransportError::TooLarge(len));
    }
    let mut payload = vec![0u8; len as usize];
    read_exact_or_closed(r, &mut payload)?;
    Ok(payload)
}

fn read_exact_or_closed(r: &mut impl Read, buf: &mut [u8]) -> Result<(), TransportError> {
    match r.read_exact(buf) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => Err(TransportError::Closed),
        Err(e) => Err(TransportError::Io(e)),
    }
}

/// One side of an in-memory duplex channel.
pub struct MemoryEndpoint {
    inbox: Arc<Mutex<VecDeque<u8>>>,
    outbox: Arc<Mutex<VecDeque<u8>>>,
}

/// Creates a connected pair of in-memory endpoints.
pub fn memory_pair() -> (MemoryEndpoint, MemoryEndpoint) {
    let a_to_b = Arc::new(Mutex::new(VecDeque::new()));
    let b_to_a = Arc::new(Mutex::new(VecDeque::new()));
    (
        MemoryEndpoint { inbox: b_to_a.clone(), outbox: a_to_b.clone() },
        MemoryEndpoint { inbox: a_to_b, outbox: b_to_a },
    )
}

impl Read for MemoryEndpoint {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let mut inbox = self.inbox.lock().unwrap();
        if inbox.is_empty() {
            // Sequential request/response use: an empty inbox means the
            // peer is done writing.
            return Ok(0);
        }
        let n = buf.len().min(inbox.len());
        for b in buf.iter_mut().take(n) {
            *b = inbox.pop_front().unwrap();
        }
        Ok(n)
    }
}

impl Write for MemoryEndpoint {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.outbox.lock().unwrap().extend(buf.iter().copied());
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}
