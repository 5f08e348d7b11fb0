//! Recorded execution traces: per-cycle signal records, event tags,
//! measured-span bookkeeping, CSV round-tripping, and monitor replay.

use rawb_core::hwmod::{Composed, MonitorKind};
use rawb_core::model::{CycleSignals, MemoryLayout};
use thiserror::Error;

/// Events attached to a cycle record beyond the raw signals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventTag {
    /// One or more monitors entered their Reset state this cycle; the hints
    /// are the spec ids the firing guards correspond to.
    ResetAsserted { spec_hints: Vec<u32> },
    IrqDelivered,
    RomWriteDropped { addr: u16 },
    Fault { opcode: u8 },
    Halted,
    SwattEntry,
    SwattExit,
    SwattReject,
    /// A scheduled DMA access was applied; `write` distinguishes bus writes.
    DmaApplied { write: bool },
}

impl EventTag {
    fn encode(&self) -> String {
        match self {
            EventTag::ResetAsserted { spec_hints } => {
                let ids: Vec<String> = spec_hints.iter().map(|i| i.to_string()).collect();
                format!("reset[{}]", ids.join("/"))
            }
            EventTag::IrqDelivered => "irq-delivered".into(),
            EventTag::RomWriteDropped { addr } => format!("rom-drop@0x{addr:04X}"),
            EventTag::Fault { opcode } => format!("fault#0x{opcode:02X}"),
            EventTag::Halted => "halt".into(),
            EventTag::SwattEntry => "swatt-entry".into(),
            EventTag::SwattExit => "swatt-exit".into(),
            EventTag::SwattReject => "swatt-reject".into(),
            EventTag::DmaApplied { write } => {
                if *write {
                    "dma-write".into()
                } else {
                    "dma-read".into()
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub cycle: u64,
    pub signals: CycleSignals,
    pub reset: bool,
    pub regs: [u16; 16],
    pub tags: Vec<EventTag>,
}

/// One contiguous span of cycles with the program counter inside CR,
/// with attested-region snapshots at entry and exit.
#[derive(Debug, Clone)]
pub struct MeasuredSpan {
    pub start: u64,
    pub end: Option<u64>,
    /// A reset fired inside the span; the measurement did not complete.
    pub aborted: bool,
    pub entry_snapshot: Vec<u8>,
    pub exit_snapshot: Option<Vec<u8>>,
}

impl MeasuredSpan {
    pub fn completed(&self) -> bool {
        !self.aborted && self.end.is_some()
    }
}

#[derive(Debug, Clone, Default)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
    pub spans: Vec<MeasuredSpan>,
    pub monitors_enabled: bool,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// First cycle whose record carries a reset assertion, if any.
    pub fn first_reset_cycle(&self) -> Option<u64> {
        self.records
            .iter()
            .find(|r| r.tags.iter().any(|t| matches!(t, EventTag::ResetAsserted { .. })))
            .map(|r| r.cycle)
    }

    /// Spec hints attached to the first reset assertion.
    pub fn first_reset_hints(&self) -> Vec<u32> {
        for r in &self.records {
            for t in &r.tags {
                if let EventTag::ResetAsserted { spec_hints } = t {
                    return spec_hints.clone();
                }
            }
        }
        Vec::new()
    }

    /// CSV dump: `cycle,pc,irq,r_en,w_en,d_addr,dma_en,dma_addr,reset,tags`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("cycle,pc,irq,r_en,w_en,d_addr,dma_en,dma_addr,reset,tags\n");
        for r in &self.records {
            let tags: Vec<String> = r.tags.iter().map(|t| t.encode()).collect();
            out.push_str(&format!(
                "{},0x{:04X},{},{},{},0x{:04X},{},0x{:04X},{},{}\n",
                r.cycle,
                r.signals.pc,
                r.signals.irq as u8,
                r.signals.r_en as u8,
                r.signals.w_en as u8,
                r.signals.d_addr,
                r.signals.dma_en as u8,
                r.signals.dma_addr,
                r.reset as u8,
                tags.join(";"),
            ));
        }
        out
    }
}

#[derive(Debug, Error)]
pub enum TraceCsvError {
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
}

/// A parsed CSV row: the signals plus the recorded reset bit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvRow {
    pub cycle: u64,
    pub signals: CycleSignals,
    pub reset: bool,
}

/// Parses the signal columns of a trace CSV (tags are ignored).
pub fn parse_trace_csv(text: &str) -> Result<Vec<CsvRow>, TraceCsvError> {
    let mut rows = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || (idx == 0 && line.starts_with("cycle,")) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 9 {
            return Err(TraceCsvError::Malformed {
                line: idx + 1,
                msg: format!("expected at least 9 fields, got {}", fields.len()),
            });
        }
        let num = |s: &str, what: &str| -> Result<u64, TraceCsvError> {
            let s = s.trim();
            let parsed = if let Some(h) = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
                u64::from_str_radix(h, 16).ok()
            } else {
                s.parse().ok()
            };
            parsed.ok_or_else(|| TraceCsvError::Malformed {
                line: idx + 1,
                msg: format!("bad {what} `{s}`"),
            })
        };
        let bit = |s: &str, what: &str| -> Result<bool, TraceCsvError> {
            match s.trim() {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(TraceCsvError::Malformed {
                    line: idx + 1,
                    msg: format!("bad {what} bit `{other}`"),
                }),
            }
        };
        rows.push(CsvRow {
            cycle: num(fields[0], "cycle")?,
            signals: CycleSignals {
                pc: num(fields[1], "pc")? as u16,
                irq: bit(fields[2], "irq")?,
                r_en: bit(fields[3], "r_en")?,
                w_en: bit(fields[4], "w_en")?,
                d_addr: num(fields[5], "d_addr")? as u16,
                dma_en: bit(fields[6], "dma_en")?,
                dma_addr: num(fields[7], "dma_addr")? as u16,
            },
            reset: bit(fields[8], "reset")?,
        });
    }
    Ok(rows)
}

/// Feeds recorded signals through fresh monitors and returns the reset bits
/// they produce; for a trace recorded with monitors enabled these must
/// reproduce the recorded bits cycle for cycle.
pub fn replay_reset_bits(
    rows: impl IntoIterator<Item = CycleSignals>,
    layout: &MemoryLayout,
) -> Vec<bool> {
    let composed = Composed::standard(layout);
    let mut state = composed.initial_state();
    rows.into_iter()
        .map(|signals| composed.step_signals(&mut state, &signals, layout))
        .collect()
}

/// Checks the reset-hold and register-zeroing semantics on a recorded
/// trace: within every maximal run of asserted reset that ends inside the
/// trace, the program counter stays nonzero until the final cycle, the
/// final cycle has PC = 0, and all registers read zero there.
pub fn check_reset_semantics(trace: &Trace) -> Result<usize, String> {
    let mut checked = 0;
    let records = &trace.records;
    let mut i = 0;
    while i < records.len() {
        if !records[i].reset {
            i += 1;
            continue;
        }
        let start = i;
        while i < records.len() && records[i].reset {
            i += 1;
        }
        let end = i - 1;
        let release = &records[end];
        if release.signals.pc != 0 {
            if i == records.len() {
                continue; // truncated mid-hold; no release to judge
            }
            return Err(format!(
                "cycle {}: reset released while PC = 0x{:04X}",
                release.cycle, release.signals.pc
            ));
        }
        for r in &records[start..end] {
            if r.signals.pc == 0 {
                return Err(format!(
                    "cycle {}: PC reached 0 but reset stayed asserted beyond it",
                    r.cycle
                ));
            }
        }
        if release.regs.iter().any(|&r| r != 0) {
            return Err(format!(
                "cycle {}: registers not zeroed at the release cycle: {:?}",
                release.cycle, release.regs
            ));
        }
        checked += 1;
    }
    Ok(checked)
}

/// Maps a firing monitor/clause pair to the spec id it enforces, used for
/// reset attribution in reports.
pub fn spec_hint(kind: MonitorKind, clause: Option<usize>, signals_in_cr: bool, irq: bool) -> u32 {
    match kind {
        MonitorKind::KeyAc => 2,
        MonitorKind::Atomicity => {
            if irq && signals_in_cr {
                5
            } else if signals_in_cr {
                4
            } else {
                3
            }
        }
        MonitorKind::ExclusiveStack => match clause {
            Some(2) => 7,
            _ => 6,
        },
        MonitorKind::DmaProtect => match clause {
            Some(1) => 9,
            Some(2) => 10,
            _ => 8,
        },
        MonitorKind::AuthCtr => match clause {
            Some(1) => 13,
            _ => 12,
        },
    }
}
