//! Trace-level property checks: temporal consistency of the attested
//! region across measured spans, and key confidentiality via taint
//! tracking.

use rawb_core::model::{CycleSignals, MemoryLayout};
use std::collections::HashSet;

use crate::trace::Trace;

/// Verdict of the temporal-consistency check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TemporalVerdict {
    /// Every completed measured span saw an unchanged attested region.
    /// `aborted` counts spans cut short by a reset, which carry no
    /// consistency obligation.
    Ok { completed: usize, aborted: usize },
    Violation { cycle: u64 },
}

impl TemporalVerdict {
    pub fn is_ok(&self) -> bool {
        matches!(self, TemporalVerdict::Ok { .. })
    }
}

fn modifies_ar(signals: &CycleSignals, layout: &MemoryLayout) -> bool {
    (signals.w_en && layout.in_ar(signals.d_addr))
        || (signals.dma_en && layout.in_ar(signals.dma_addr))
}

/// Attested memory must not change during a completed measurement: no
/// memory-modifying access touches AR inside the span, and the entry and
/// exit snapshots are bitwise identical.
pub fn check_temporal_consistency(trace: &Trace, layout: &MemoryLayout) -> TemporalVerdict {
    let mut completed = 0;
    let mut aborted = 0;
    for span in &trace.spans {
        if !span.completed() {
            aborted += 1;
            continue;
        }
        let end = span.end.expect("completed span has an end");
        for record in &trace.records {
            if record.cycle < span.start || record.cycle > end {
                continue;
            }
            if modifies_ar(&record.signals, layout) {
                return TemporalVerdict::Violation { cycle: record.cycle };
            }
        }
        if span.exit_snapshot.as_ref() != Some(&span.entry_snapshot) {
            return TemporalVerdict::Violation { cycle: end };
        }
        completed += 1;
    }
    TemporalVerdict::Ok { completed, aborted }
}

/// Verdict of the key-confidentiality check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConfidentialityVerdict {
    Ok { tainted_addresses: usize },
    Violation { cycle: u64, addr: u16 },
}

impl ConfidentialityVerdict {
    pub fn is_ok(&self) -> bool {
        matches!(self, ConfidentialityVerdict::Ok { .. })
    }
}

/// Tracks the taint set: key ROM plus every address the measured code
/// wrote, except the MAC region (and the counter in the authenticated
/// variant, both of which exist to carry public values out). Any read of a
/// tainted address from untrusted context, or any DMA access of one, must
/// coincide with an asserted reset in the same cycle.
pub fn check_key_confidentiality(trace: &Trace, layout: &MemoryLayout) -> ConfidentialityVerdict {
    let mut taint: HashSet<u16> = (layout.k_min..=layout.k_max).collect();
    for record in &trace.records {
        let s = &record.signals;
        let in_cr = layout.pc_in_cr(s.pc);

        // Reads are judged against the taint set as of the cycle start.
        if !record.reset {
            if !in_cr && s.r_en && taint.contains(&s.d_addr) {
                return ConfidentialityVerdict::Violation { cycle: record.cycle, addr: s.d_addr };
            }
            if s.dma_en && taint.contains(&s.dma_addr) {
                return ConfidentialityVerdict::Violation {
                    cycle: record.cycle,
                    addr: s.dma_addr,
                };
            }
        }

        // Writes by measured code extend the taint.
        if in_cr && !record.reset && s.w_en {
            let exempt = layout.in_mr(s.d_addr) || layout.in_ctr(s.d_addr);
            if !exempt {
                taint.insert(s.d_addr);
            }
        }
    }
    ConfidentialityVerdict::Ok { tainted_addresses: taint.len() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::machine::{DmaRequest, Machine, SimConfig, StopCondition};
    use crate::isa::assemble;
    use rawb_core::swatt::MasterKey;

    fn machine(text: &str, monitors: bool) -> Machine {
        let program = assemble(text).unwrap();
        Machine::load(
            &MemoryLayout::default_base(),
            &program,
            &[0x5A; 16],
            &MasterKey([7u8; 64]),
            &[0xAB; 64],
            SimConfig { monitors_enabled: monitors, ..SimConfig::default() },
        )
        .unwrap()
    }

    #[test]
    fn benign_attestation_is_temporally_consistent() {
        let mut m = machine("loop: NOP\nJMP loop", true);
        m.step().unwrap();
        m.invoke_attestation(&[1u8; 32]).unwrap();
        let verdict = check_temporal_consistency(m.trace(), m.layout());
        assert_eq!(verdict, TemporalVerdict::Ok { completed: 1, aborted: 0 });
    }

    #[test]
    fn dma_write_into_ar_mid_measurement_with_monitors_off_is_detected() {
        let mut m = machine("loop: NOP\nJMP loop", false);
        m.step().unwrap();
        let entry = m.cycle() + Machine::wrapper_prefix_len(false, &Default::default());
        // Mid-sweep: after the 160 setup cycles plus part of the 64-byte
        // sweep.
        let hit = entry + 160 + 30;
        m.schedule_dma(hit, DmaRequest { addr: m.layout().ar_min + 5, write: Some(0xEE) });
        m.invoke_attestation(&[1u8; 32]).unwrap();
        let verdict = check_temporal_consistency(m.trace(), m.layout());
        assert_eq!(verdict, TemporalVerdict::Violation { cycle: hit });
    }

    #[test]
    fn monitors_abort_the_same_attack() {
        let mut m = machine("loop: NOP\nJMP loop", true);
        m.step().unwrap();
        let entry = m.cycle() + Machine::wrapper_prefix_len(false, &Default::default());
        let hit = entry + 160 + 30;
        m.schedule_dma(hit, DmaRequest { addr: m.layout().ar_min + 5, write: Some(0xEE) });
        m.invoke_attestation(&[1u8; 32]).unwrap();
        let verdict = check_temporal_consistency(m.trace(), m.layout());
        assert_eq!(verdict, TemporalVerdict::Ok { completed: 0, aborted: 1 });
    }

    #[test]
    fn taint_flags_xs_read_after_attestation_with_monitors_off() {
        let layout = MemoryLayout::default_base();
        let mut m = machine(
            &format!("NOP\nLOAD r4, 0x{:04X}\nHALT", layout.xs_min),
            false,
        );
        // Run one NOP, attest (fills XS with key material), then let the
        // program read XS.
        m.step().unwrap();
        m.invoke_attestation(&[3u8; 32]).unwrap();
        m.run(StopCondition::Halt).unwrap();
        let verdict = check_key_confidentiality(m.trace(), m.layout());
        assert!(matches!(verdict, ConfidentialityVerdict::Violation { addr, .. } if addr == layout.xs_min));
    }

    #[test]
    fn taint_is_clean_when_monitors_reset_the_read() {
        let layout = MemoryLayout::default_base();
        let mut m = machine(
            &format!("NOP\nLOAD r4, 0x{:04X}\nHALT", layout.xs_min),
            true,
        );
        m.step().unwrap();
        m.invoke_attestation(&[3u8; 32]).unwrap();
        let _ = m.run(StopCondition::ResetObserved).unwrap();
        let verdict = check_key_confidentiality(m.trace(), m.layout());
        assert!(verdict.is_ok(), "{verdict:?}");
    }

    #[test]
    fn mr_reads_are_untainted() {
        let layout = MemoryLayout::default_base();
        let mut m = machine(
            &format!("NOP\nLOAD r4, 0x{:04X}\nHALT", layout.mac_addr),
            true,
        );
        m.step().unwrap();
        m.invoke_attestation(&[3u8; 32]).unwrap();
        m.run(StopCondition::Halt).unwrap();
        let verdict = check_key_confidentiality(m.trace(), m.layout());
        assert!(verdict.is_ok());
    }
}
