//! The trusted measurement routine as a scripted cycle plan.
//!
//! The routine executes as a signal-faithful script rather than compiled
//! micro-ISA code: the program counter walks monotonically from the first
//! to the last CR address while the cycles perform, in order, the reads and
//! writes the measurement flow implies (challenge in, key in, working
//! buffers to the exclusive stack, a full sweep of the attested region,
//! MAC out). The MAC value itself comes from the measurement functions in
//! `rawb_core::swatt`, computed over the bytes exactly as the sweep read
//! them; functional correctness of the crypto is pinned by its own vector
//! suite.
//!
//! The authenticated flow additionally reads the persistent counter and the
//! requester token, takes an early-exit path on stale or unauthenticated
//! requests, and commits the accepted challenge to the counter at the end.

use rawb_core::model::MemoryLayout;

/// One scripted cycle of the measurement routine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScriptAction {
    /// Read one challenge byte from MR.
    ReadChal(u8),
    /// Read one counter byte (authenticated variant).
    ReadCtr(u8),
    /// Read one master-key byte from KR.
    ReadKey(u8),
    /// Copy one key byte into the exclusive stack.
    WriteKeyCopy(u8),
    /// Read one token byte from the token buffer (authenticated variant).
    ReadToken(u8),
    /// Write one derived-key byte into the exclusive stack.
    WriteDerived(u8),
    /// Read one byte of the attested region.
    ReadAr(u16),
    /// Write one MAC byte to MR.
    WriteMac(u8),
    /// Commit one accepted-challenge byte to the counter.
    WriteCtr(u8),
    /// Final cycle at the last CR address; no memory access. Reject paths
    /// jump straight here.
    Finish,
}

/// Builds the action list for one invocation.
pub fn script_actions(auth: bool, ar_len: u16) -> Vec<ScriptAction> {
    let mut v = Vec::with_capacity(ar_len as usize + 320);
    for i in 0..32 {
        v.push(ScriptAction::ReadChal(i));
    }
    if auth {
        for i in 0..32 {
            v.push(ScriptAction::ReadCtr(i));
        }
    }
    for i in 0..64 {
        v.push(ScriptAction::ReadKey(i));
    }
    for i in 0..64 {
        v.push(ScriptAction::WriteKeyCopy(i));
    }
    if auth {
        for i in 0..32 {
            v.push(ScriptAction::ReadToken(i));
        }
    }
    for i in 0..32 {
        v.push(ScriptAction::WriteDerived(i));
    }
    for off in 0..ar_len {
        v.push(ScriptAction::ReadAr(off));
    }
    for i in 0..32 {
        v.push(ScriptAction::WriteMac(i));
    }
    if auth {
        for i in 0..32 {
            v.push(ScriptAction::WriteCtr(i));
        }
    }
    v.push(ScriptAction::Finish);
    v
}

/// Program-counter value presented at script cycle `idx` of `len` total:
/// first cycle at `cr_min`, last at `cr_max`, monotone non-decreasing and
/// strictly inside CR in between. Requires a CR of at least three
/// addresses.
pub fn script_pc(idx: usize, len: usize, layout: &MemoryLayout) -> u16 {
    debug_assert!(len >= 2);
    if idx == 0 {
        layout.cr_min
    } else if idx + 1 >= len {
        layout.cr_max
    } else {
        let walked = layout.cr_min as u32 + idx as u32;
        walked.min(layout.cr_max as u32 - 1) as u16
    }
}

/// Debug-only script edits used by attack scenarios. Not reachable from
/// the protocol path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScriptMutation {
    /// At script cycle `index`, jump out of CR before the last instruction.
    ExitEarlyAt { index: usize },
    /// At script cycle `index`, write one byte to an arbitrary address
    /// instead of the planned action.
    WriteAppAt { index: usize, addr: u16 },
}
