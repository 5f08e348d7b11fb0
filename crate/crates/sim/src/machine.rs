//! The cycle-level machine: a 16-bit core with the monitored bus signals,
//! a DMA controller and interrupt line driven by schedules, the composed
//! hardware monitors, reset semantics, and the trusted-routine call path.
//!
//! Modeling choices visible at this level:
//!
//! * Instruction fetch does not assert `r_en`; only data accesses do.
//! * Each cycle performs at most one CPU memory access; a scheduled DMA
//!   access may ride the same cycle on its own address lines.
//! * Memory and register effects of a cycle land even when the monitors
//!   fire in that cycle: the reset takes hold before the *next* instruction.
//! * A detected violation starts a two-cycle reset: the assert cycle, one
//!   settle cycle (no bus activity, stale PC), then all registers including
//!   PC read zero and execution resumes at address 0. Monitors release on
//!   seeing PC = 0 and their output stays high through that release cycle.
//! * The interrupt line asserts when an interrupt is scheduled and delivery
//!   is enabled; inside the wrapper or the measurement script an asserted
//!   line is visible to the monitors but not delivered to a handler.

use std::collections::{BTreeMap, BTreeSet};

use rawb_core::hwmod::{Composed, ComposedState};
use rawb_core::model::{CycleSignals, LayoutViolation, MemoryLayout};
use rawb_core::swatt::{ct_eq, hmac_sha256, MasterKey};
use thiserror::Error;

use crate::isa::{Instr, Program, INSTR_SIZE};
use crate::script::{script_actions, script_pc, ScriptAction, ScriptMutation};
use crate::trace::{spec_hint, EventTag, MeasuredSpan, Trace, TraceRecord};

pub const MEM_SIZE: usize = 1 << 16;
pub const DEFAULT_MAX_CYCLES: u64 = 1_000_000;

#[derive(Debug, Clone)]
pub struct SimConfig {
    /// Initial stack pointer (r1).
    pub stack_top: u16,
    /// Interrupt handler address used on delivery.
    pub irq_vector: u16,
    /// Scratch RAM word where the call wrapper parks the return address.
    pub ret_scratch: u16,
    /// Debug switch: when false the monitors are disconnected entirely.
    /// Off-limits to the protocol path; exists so the trace checkers can
    /// demonstrate the attacks the monitors prevent.
    pub monitors_enabled: bool,
    /// Record per-cycle trace rows (disable for bulk oracle runs).
    pub record_trace: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            stack_top: 0x0FF0,
            irq_vector: 0x0060,
            ret_scratch: 0x0300,
            monitors_enabled: true,
            record_trace: true,
        }
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid layout: {0:?}")]
    Layout(Vec<LayoutViolation>),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("program overlaps ROM at 0x{0:04X}")]
    RomOverlap(u16),
    #[error("machine is halted")]
    Halted,
    #[error("attestation cannot start: {0}")]
    NotIdle(String),
    #[error("cycle budget exhausted")]
    Budget,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HaltCause {
    Halt,
    Fault(u8),
}

/// A scheduled DMA bus access.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DmaRequest {
    pub addr: u16,
    /// `Some(value)` writes; `None` reads.
    pub write: Option<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopCondition {
    /// Run until the program halts (or faults).
    Halt,
    /// Run until a reset has been asserted and released (PC back at 0).
    ResetObserved,
    /// Run for at most this many further cycles.
    MaxCycles(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Halted(HaltCause),
    ResetReleased,
    MaxCyclesReached,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AttestOutcome {
    Completed { mac: [u8; 32] },
    Rejected { stale: bool },
    ResetOccurred { cycle: u64 },
}

#[derive(Debug, Clone, Copy)]
pub struct WrapperOptions {
    /// The correct wrapper disables interrupts around the call; the buggy
    /// variant used by the interrupt scenario leaves them on.
    pub disable_interrupts: bool,
    /// Attest a caller-specified region instead of the configured one.
    pub region_override: Option<(u16, u16)>,
}

impl Default for WrapperOptions {
    fn default() -> Self {
        WrapperOptions { disable_interrupts: true, region_override: None }
    }
}

#[derive(Debug, Clone, Copy)]
enum WrapperStep {
    WriteToken(u8),
    WriteChal(u8),
    Dint,
    PushReg(u8),
    WriteRetScratch,
    SaveSp,
    SetSp,
    EnterScript,
    RestoreSp,
    PopReg(u8),
    Eint,
}

#[derive(Debug, Clone)]
struct ScriptRun {
    actions: Vec<ScriptAction>,
    idx: usize,
    auth: bool,
    chal: [u8; 32],
    ctr: [u8; 32],
    key: [u8; 64],
    token: [u8; 32],
    verification: [u8; 32],
    derived: [u8; 32],
    data: Vec<u8>,
    mac: [u8; 32],
    rejected: Option<bool>, // Some(stale?)
    return_pc: u16,
    /// Entered by program control flow rather than the wrapper: return via
    /// the value on top of the stack.
    direct_entry: bool,
}

#[derive(Debug, Clone)]
struct AttestRun {
    chal: [u8; 32],
    token: Option<[u8; 32]>,
    resume_pc: u16,
    saved_sp: u16,
    re_enable_int: bool,
    outcome: Option<AttestOutcome>,
}

#[derive(Debug, Clone)]
enum Mode {
    Program,
    Wrapper { plan: Vec<WrapperStep>, idx: usize },
    Script(Box<ScriptRun>),
    ResetSettle { stale_pc: u16 },
}

pub struct Machine {
    layout: MemoryLayout,
    mem: Vec<u8>,
    regs: [u16; 16],
    z_flag: bool,
    int_enabled: bool,
    halted: Option<HaltCause>,
    cycle: u64,
    mode: Mode,
    monitors: Composed,
    mstate: ComposedState,
    monitors_enabled: bool,
    irq_schedule: BTreeSet<u64>,
    dma_schedule: BTreeMap<u64, DmaRequest>,
    record_trace: bool,
    trace: Trace,
    prev_pc_in_cr: bool,
    open_span: Option<usize>,
    attest: Option<AttestRun>,
    script_mutation: Option<ScriptMutation>,
    config: SimConfig,
}

impl Machine {
    /// Loads a machine image: key into KR, routine image into CR (both
    /// ROM-masked from then on), attested contents into AR (whose end is
    /// set from the content length), and the program into regular memory.
    pub fn load(
        layout: &MemoryLayout,
        program: &Program,
        swatt_image: &[u8],
        key: &MasterKey,
        ar_contents: &[u8],
        config: SimConfig,
    ) -> Result<Machine, SimError> {
        let mut layout = layout.clone();
        if ar_contents.is_empty() {
            return Err(SimError::Config("attested contents must be non-empty".into()));
        }
        let ar_end = layout.ar_min as u32 + ar_contents.len() as u32 - 1;
        if ar_end > 0xFFFF {
            return Err(SimError::Config("attested contents exceed the address space".into()));
        }
        layout.ar_max = ar_end as u16;
        layout.validate().map_err(SimError::Layout)?;
        let cr_size = layout.cr_max as u32 - layout.cr_min as u32 + 1;
        if cr_size < 3 {
            return Err(SimError::Config("CR must span at least three addresses".into()));
        }
        let kr_size = layout.k_max as u32 - layout.k_min as u32 + 1;
        if kr_size < 64 {
            return Err(SimError::Config("KR must hold the 64-byte key".into()));
        }
        if swatt_image.len() as u32 > cr_size {
            return Err(SimError::Config("routine image exceeds CR".into()));
        }

        let mut mem = vec![0u8; MEM_SIZE];
        // ROM contents.
        for (i, b) in swatt_image.iter().enumerate() {
            mem[layout.cr_min as usize + i] = *b;
        }
        for i in swatt_image.len()..cr_size as usize {
            mem[layout.cr_min as usize + i] = 0xFF;
        }
        for (i, b) in key.0.iter().enumerate() {
            mem[layout.k_min as usize + i] = *b;
        }
        // Attested contents.
        for (i, b) in ar_contents.iter().enumerate() {
            mem[layout.ar_min as usize + i] = *b;
        }
        // Program image; must stay clear of ROM.
        let p_start = program.origin as u32;
        let p_end = program.end();
        if p_end > 0x1_0000 {
            return Err(SimError::Config("program exceeds the address space".into()));
        }
        for addr in p_start..p_end {
            let a = addr as u16;
            if in_rom(&layout, a) {
                return Err(SimError::RomOverlap(a));
            }
        }
        for (i, b) in program.bytes.iter().enumerate() {
            mem[p_start as usize + i] = *b;
        }
        if layout.pc_in_cr(program.entry) || program.entry == 0 {
            return Err(SimError::Config("program entry must be nonzero and outside CR".into()));
        }

        let monitors = Composed::standard(&layout);
        let mstate = monitors.initial_state();
        let mut regs = [0u16; 16];
        regs[0] = program.entry;
        regs[1] = config.stack_top;
        Ok(Machine {
            layout,
            mem,
            regs,
            z_flag: false,
            int_enabled: true,
            halted: None,
            cycle: 0,
            mode: Mode::Program,
            monitors,
            mstate,
            monitors_enabled: config.monitors_enabled,
            irq_schedule: BTreeSet::new(),
            dma_schedule: BTreeMap::new(),
            record_trace: config.record_trace,
            trace: Trace {
                records: Vec::new(),
                spans: Vec::new(),
                monitors_enabled: config.monitors_enabled,
            },
            prev_pc_in_cr: false,
            open_span: None,
            attest: None,
            script_mutation: None,
            config,
        })
    }

    pub fn layout(&self) -> &MemoryLayout {
        &self.layout
    }

    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    pub fn regs(&self) -> &[u16; 16] {
        &self.regs
    }

    pub fn halted(&self) -> Option<HaltCause> {
        self.halted
    }

    /// True when the machine is executing ordinary application code and can
    /// accept an attestation call.
    pub fn is_idle(&self) -> bool {
        self.halted.is_none() && matches!(self.mode, Mode::Program)
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn take_trace(&mut self) -> Trace {
        std::mem::take(&mut self.trace)
    }

    pub fn monitors_enabled(&self) -> bool {
        self.monitors_enabled
    }

    /// Schedules the interrupt line for one cycle.
    pub fn schedule_irq(&mut self, cycle: u64) {
        self.irq_schedule.insert(cycle);
    }

    /// Schedules one DMA bus access.
    pub fn schedule_dma(&mut self, cycle: u64, request: DmaRequest) {
        self.dma_schedule.insert(cycle, request);
    }

    /// Installs a debug script edit (attack scenarios only).
    pub fn set_script_mutation(&mut self, mutation: Option<ScriptMutation>) {
        self.script_mutation = mutation;
    }

    /// Host window into memory, for tests and report tooling.
    pub fn peek(&self, addr: u16, len: usize) -> &[u8] {
        &self.mem[addr as usize..addr as usize + len]
    }

    /// Host write into memory. This is not a bus access: it models the
    /// adversary's ability to set up memory contents between cycles and is
    /// invisible to the monitors.
    pub fn poke(&mut self, addr: u16, bytes: &[u8]) {
        for (i, b) in bytes.iter().enumerate() {
            let a = addr as usize + i;
            if !in_rom(&self.layout, a as u16) {
                self.mem[a] = *b;
            }
        }
    }

    /// Current MAC-region contents.
    pub fn mac_bytes(&self) -> [u8; 32] {
        let mut out = [0u8; 32];
        out.copy_from_slice(self.peek(self.layout.mac_addr, 32));
        out
    }

    /// Current attested-region contents.
    pub fn ar_bytes(&self) -> Vec<u8> {
        let len = self.layout.ar_max as usize - self.layout.ar_min as usize + 1;
        self.peek(self.layout.ar_min, len).to_vec()
    }

    /// Current persistent-counter contents (authenticated variant).
    pub fn ctr_bytes(&self) -> Option<[u8; 32]> {
        self.layout.ctr.map(|(lo, _)| {
            let mut out = [0u8; 32];
            out.copy_from_slice(self.peek(lo, 32));
            out
        })
    }

    /// Digest over the ROM regions, for immutability checks.
    pub fn rom_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(self.peek(
            self.layout.cr_min,
            self.layout.cr_max as usize - self.layout.cr_min as usize + 1,
        ));
        out.extend_from_slice(self.peek(
            self.layout.k_min,
            self.layout.k_max as usize - self.layout.k_min as usize + 1,
        ));
        out
    }

    /// Re-points the attested region (authenticated region-specified
    /// requests). The new region must keep the layout valid.
    pub fn set_attested_region(&mut self, ar_min: u16, ar_max: u16) -> Result<(), SimError> {
        let mut candidate = self.layout.clone();
        candidate.ar_min = ar_min;
        candidate.ar_max = ar_max;
        candidate.validate().map_err(SimError::Layout)?;
        self.layout = candidate;
        Ok(())
    }

    fn mem16(&self, addr: u16) -> u16 {
        let lo = self.mem[addr as usize] as u16;
        let hi = self.mem[addr.wrapping_add(1) as usize] as u16;
        lo | hi << 8
    }

    fn write_byte(&mut self, addr: u16, value: u8, tags: &mut Vec<EventTag>) {
        if in_rom(&self.layout, addr) {
            tags.push(EventTag::RomWriteDropped { addr });
        } else {
            self.mem[addr as usize] = value;
        }
    }

    fn write16(&mut self, addr: u16, value: u16, tags: &mut Vec<EventTag>) {
        self.write_byte(addr, value as u8, tags);
        self.write_byte(addr.wrapping_add(1), (value >> 8) as u8, tags);
    }

    /// Executes one cycle, returning the bus signals and the reset line.
    pub fn step(&mut self) -> Result<(CycleSignals, bool), SimError> {
        if self.halted.is_some() {
            return Err(SimError::Halted);
        }
        let cycle = self.cycle;
        let was_settle = matches!(self.mode, Mode::ResetSettle { .. });
        let irq_line = !was_settle && self.irq_schedule.contains(&cycle) && self.int_enabled;
        let mut tags: Vec<EventTag> = Vec::new();

        // Direct program entry into the routine: control flow reached the
        // first CR address, so the script takes over this cycle.
        if matches!(self.mode, Mode::Program) && self.regs[0] == self.layout.cr_min {
            let return_pc = self.mem16(self.regs[1]);
            self.enter_script(return_pc, true);
        }

        // Phase 1: this cycle's signals, before any effects.
        #[derive(Clone, Copy)]
        enum Plan {
            Settle,
            Exec(Instr),
            BadOpcode(u8),
            IrqDeliver,
            Wrapper(WrapperStep),
            Script(ScriptAction),
            ScriptExitEarly,
            ScriptRogueWrite(u16),
        }
        let (mut signals, plan) = match &self.mode {
            Mode::ResetSettle { stale_pc } => (
                CycleSignals { pc: *stale_pc, ..Default::default() },
                Plan::Settle,
            ),
            Mode::Program => {
                if irq_line {
                    let sp = self.regs[1].wrapping_sub(2);
                    (
                        CycleSignals {
                            pc: self.regs[0],
                            irq: true,
                            w_en: true,
                            d_addr: sp,
                            ..Default::default()
                        },
                        Plan::IrqDeliver,
                    )
                } else {
                    let pc = self.regs[0];
                    let raw = [
                        self.mem[pc as usize],
                        self.mem[pc.wrapping_add(1) as usize],
                        self.mem[pc.wrapping_add(2) as usize],
                        self.mem[pc.wrapping_add(3) as usize],
                    ];
                    match Instr::decode(raw) {
                        Ok(instr) => {
                            let mut s = CycleSignals { pc, irq: irq_line, ..Default::default() };
                            match instr {
                                Instr::Load { addr, .. } => {
                                    s.r_en = true;
                                    s.d_addr = addr;
                                }
                                Instr::Store { addr, .. } => {
                                    s.w_en = true;
                                    s.d_addr = addr;
                                }
                                Instr::Call { .. } => {
                                    s.w_en = true;
                                    s.d_addr = self.regs[1].wrapping_sub(2);
                                }
                                Instr::Ret => {
                                    s.r_en = true;
                                    s.d_addr = self.regs[1];
                                }
                                _ => {}
                            }
                            (s, Plan::Exec(instr))
                        }
                        Err(op) => (
                            CycleSignals { pc, ..Default::default() },
                            Plan::BadOpcode(op),
                        ),
                    }
                }
            }
            Mode::Wrapper { plan, idx } => {
                let step = plan[*idx];
                let attest = self.attest.as_ref().expect("wrapper has an attest run");
                let pc = attest.resume_pc;
                let mut s = CycleSignals { pc, irq: irq_line, ..Default::default() };
                match step {
                    WrapperStep::WriteToken(i) => {
                        s.w_en = true;
                        s.d_addr = self.layout.vrf_auth.unwrap_or(0).wrapping_add(i as u16);
                    }
                    WrapperStep::WriteChal(i) => {
                        s.w_en = true;
                        s.d_addr = self.layout.mac_addr.wrapping_add(i as u16);
                    }
                    WrapperStep::PushReg(_) => {
                        s.w_en = true;
                        s.d_addr = self.regs[1].wrapping_sub(2);
                    }
                    WrapperStep::WriteRetScratch => {
                        s.w_en = true;
                        s.d_addr = self.config.ret_scratch;
                    }
                    WrapperStep::PopReg(_) => {
                        s.r_en = true;
                        s.d_addr = self.regs[1];
                    }
                    _ => {}
                }
                (s, Plan::Wrapper(step))
            }
            Mode::Script(run) => {
                let idx = run.idx;
                let len = run.actions.len();
                let pc = script_pc(idx, len, &self.layout);
                let mut s = CycleSignals { pc, irq: irq_line, ..Default::default() };
                match self.script_mutation {
                    Some(ScriptMutation::ExitEarlyAt { index }) if index == idx => {
                        s.pc = run.return_pc;
                        (s, Plan::ScriptExitEarly)
                    }
                    Some(ScriptMutation::WriteAppAt { index, addr }) if index == idx => {
                        s.w_en = true;
                        s.d_addr = addr;
                        (s, Plan::ScriptRogueWrite(addr))
                    }
                    _ => {
                        let action = run.actions[idx];
                        match action {
                            ScriptAction::ReadChal(i) => {
                                s.r_en = true;
                                s.d_addr = self.layout.mac_addr.wrapping_add(i as u16);
                            }
                            ScriptAction::ReadCtr(i) => {
                                s.r_en = true;
                                s.d_addr = self.layout.ctr.unwrap().0.wrapping_add(i as u16);
                            }
                            ScriptAction::ReadKey(i) => {
                                s.r_en = true;
                                s.d_addr = self.layout.k_min.wrapping_add(i as u16);
                            }
                            ScriptAction::WriteKeyCopy(i) => {
                                s.w_en = true;
                                s.d_addr = self.layout.xs_min.wrapping_add(i as u16);
                            }
                            ScriptAction::ReadToken(i) => {
                                s.r_en = true;
                                s.d_addr =
                                    self.layout.vrf_auth.unwrap_or(0).wrapping_add(i as u16);
                            }
                            ScriptAction::WriteDerived(i) => {
                                s.w_en = true;
                                s.d_addr = self.layout.xs_min.wrapping_add(64 + i as u16);
                            }
                            ScriptAction::ReadAr(off) => {
                                s.r_en = true;
                                s.d_addr = self.layout.ar_min.wrapping_add(off);
                            }
                            ScriptAction::WriteMac(i) => {
                                s.w_en = true;
                                s.d_addr = self.layout.mac_addr.wrapping_add(i as u16);
                            }
                            ScriptAction::WriteCtr(i) => {
                                s.w_en = true;
                                s.d_addr = self.layout.ctr.unwrap().0.wrapping_add(i as u16);
                            }
                            ScriptAction::Finish => {}
                        }
                        (s, Plan::Script(action))
                    }
                }
            }
        };

        // Phase 2: DMA overlay (the controller is held off during the reset
        // settle cycle).
        let dma = if was_settle { None } else { self.dma_schedule.get(&cycle).copied() };
        if let Some(req) = dma {
            signals.dma_en = true;
            signals.dma_addr = req.addr;
        }

        // Phase 3: measured-span bookkeeping (pre-effect memory).
        let pc_in_cr = self.layout.pc_in_cr(signals.pc);
        if pc_in_cr && !self.prev_pc_in_cr {
            self.trace.spans.push(MeasuredSpan {
                start: cycle,
                end: None,
                aborted: false,
                entry_snapshot: self.ar_bytes(),
                exit_snapshot: None,
            });
            self.open_span = Some(self.trace.spans.len() - 1);
        } else if !pc_in_cr && self.prev_pc_in_cr {
            if let Some(i) = self.open_span.take() {
                let snapshot = self.ar_bytes();
                let span = &mut self.trace.spans[i];
                span.end = Some(cycle - 1);
                span.exit_snapshot = Some(snapshot);
            }
        }
        self.prev_pc_in_cr = pc_in_cr;

        // Phase 4: monitors.
        let (reset_line, fired) = if self.monitors_enabled {
            self.monitors.step_symbol_attributed(
                &mut self.mstate,
                &rawb_core::model::abstract_signals(&signals, &self.layout),
            )
        } else {
            (false, Default::default())
        };
        if reset_line {
            if let Some(i) = self.open_span {
                self.trace.spans[i].aborted = true;
            }
        }

        // Phase 5: effects.
        match plan {
            Plan::Settle => {
                self.regs = [0u16; 16];
                self.z_flag = false;
                self.int_enabled = false;
                self.mode = Mode::Program;
            }
            Plan::BadOpcode(op) => {
                tags.push(EventTag::Fault { opcode: op });
                self.halted = Some(HaltCause::Fault(op));
            }
            Plan::IrqDeliver => {
                let sp = self.regs[1].wrapping_sub(2);
                let ret = self.regs[0];
                self.write16(sp, ret, &mut tags);
                self.regs[1] = sp;
                self.regs[0] = self.config.irq_vector;
                tags.push(EventTag::IrqDelivered);
            }
            Plan::Exec(instr) => self.exec_instr(instr, &mut tags),
            Plan::Wrapper(step) => self.exec_wrapper(step, &mut tags),
            Plan::Script(action) => self.exec_script(action, signals.pc, &mut tags),
            Plan::ScriptExitEarly => {
                // The routine "jumps out" before its last instruction; the
                // atomicity monitor resets at this very cycle.
                if let Mode::Script(run) = &self.mode {
                    self.regs[0] = run.return_pc;
                }
                self.mode = Mode::Program;
            }
            Plan::ScriptRogueWrite(addr) => {
                self.write_byte(addr, 0xAA, &mut tags);
                self.regs[0] = signals.pc;
                if let Mode::Script(run) = &mut self.mode {
                    run.idx += 1;
                }
            }
        }

        // Phase 6: DMA memory effect.
        if let Some(req) = dma {
            if let Some(value) = req.write {
                self.write_byte(req.addr, value, &mut tags);
            }
            tags.push(EventTag::DmaApplied { write: req.write.is_some() });
        }

        // Phase 7: reset trigger. The settle cycle itself never retriggers.
        let violated = self.monitors_enabled
            && !was_settle
            && self
                .monitors
                .members()
                .iter()
                .zip(&self.mstate)
                .any(|(m, s)| *s == m.reset_state());
        if violated && !fired.members.is_empty() {
            let hints: Vec<u32> = fired
                .members
                .iter()
                .map(|(kind, clause)| spec_hint(*kind, *clause, pc_in_cr, signals.irq))
                .collect();
            tags.push(EventTag::ResetAsserted { spec_hints: hints });
        }
        if violated && !matches!(self.mode, Mode::ResetSettle { .. }) {
            self.halted = None;
            if let Some(att) = &mut self.attest {
                if att.outcome.is_none() {
                    att.outcome = Some(AttestOutcome::ResetOccurred { cycle });
                }
            }
            self.mode = Mode::ResetSettle { stale_pc: signals.pc };
        }

        if self.halted == Some(HaltCause::Halt) {
            tags.push(EventTag::Halted);
        }

        // Phase 8: record.
        if self.record_trace {
            self.trace.records.push(TraceRecord {
                cycle,
                signals,
                reset: reset_line,
                regs: self.regs,
                tags,
            });
        }
        self.cycle += 1;
        Ok((signals, reset_line))
    }

    fn exec_instr(&mut self, instr: Instr, tags: &mut Vec<EventTag>) {
        let next_pc = self.regs[0].wrapping_add(INSTR_SIZE);
        match instr {
            Instr::Halt => {
                self.halted = Some(HaltCause::Halt);
            }
            Instr::Nop => self.regs[0] = next_pc,
            Instr::Movi { rd, imm } => {
                self.regs[rd as usize] = imm;
                self.regs[0] = next_pc;
            }
            Instr::Load { rd, addr } => {
                self.regs[rd as usize] = self.mem[addr as usize] as u16;
                self.regs[0] = next_pc;
            }
            Instr::Store { rs, addr } => {
                self.write_byte(addr, self.regs[rs as usize] as u8, tags);
                self.regs[0] = next_pc;
            }
            Instr::Add { rd, rs } => {
                let v = self.regs[rd as usize].wrapping_add(self.regs[rs as usize]);
                self.regs[rd as usize] = v;
                self.z_flag = v == 0;
                self.regs[0] = next_pc;
            }
            Instr::Sub { rd, rs } => {
                let v = self.regs[rd as usize].wrapping_sub(self.regs[rs as usize]);
                self.regs[rd as usize] = v;
                self.z_flag = v == 0;
                self.regs[0] = next_pc;
            }
            Instr::Cmp { rd, rs } => {
                self.z_flag = self.regs[rd as usize] == self.regs[rs as usize];
                self.regs[0] = next_pc;
            }
            Instr::Jmp { addr } => self.regs[0] = addr,
            Instr::Jz { addr } => {
                self.regs[0] = if self.z_flag { addr } else { next_pc };
            }
            Instr::Call { addr } => {
                let sp = self.regs[1].wrapping_sub(2);
                self.write16(sp, next_pc, tags);
                self.regs[1] = sp;
                self.regs[0] = addr;
            }
            Instr::Ret => {
                self.regs[0] = self.mem16(self.regs[1]);
                self.regs[1] = self.regs[1].wrapping_add(2);
            }
            Instr::Eint => {
                self.int_enabled = true;
                self.regs[0] = next_pc;
            }
            Instr::Dint => {
                self.int_enabled = false;
                self.regs[0] = next_pc;
            }
        }
    }

    fn exec_wrapper(&mut self, step: WrapperStep, tags: &mut Vec<EventTag>) {
        let att = self.attest.clone().expect("wrapper has an attest run");
        match step {
            WrapperStep::WriteToken(i) => {
                let base = self.layout.vrf_auth.expect("token writes need vrf_auth");
                let value = att.token.expect("token plan has token bytes")[i as usize];
                self.write_byte(base.wrapping_add(i as u16), value, tags);
            }
            WrapperStep::WriteChal(i) => {
                let addr = self.layout.mac_addr.wrapping_add(i as u16);
                self.write_byte(addr, att.chal[i as usize], tags);
            }
            WrapperStep::Dint => self.int_enabled = false,
            WrapperStep::PushReg(r) => {
                let sp = self.regs[1].wrapping_sub(2);
                let v = self.regs[r as usize];
                self.write16(sp, v, tags);
                self.regs[1] = sp;
            }
            WrapperStep::WriteRetScratch => {
                let scratch = self.config.ret_scratch;
                self.write16(scratch, att.resume_pc, tags);
            }
            WrapperStep::SaveSp => {
                if let Some(a) = &mut self.attest {
                    a.saved_sp = self.regs[1];
                }
            }
            WrapperStep::SetSp => self.regs[1] = self.layout.xs_min,
            WrapperStep::EnterScript => {
                self.enter_script(att.resume_pc, false);
                return; // mode changed; do not advance the wrapper index
            }
            WrapperStep::RestoreSp => self.regs[1] = att.saved_sp,
            WrapperStep::PopReg(r) => {
                self.regs[r as usize] = self.mem16(self.regs[1]);
                self.regs[1] = self.regs[1].wrapping_add(2);
            }
            WrapperStep::Eint => self.int_enabled = true,
        }
        if let Mode::Wrapper { plan, idx } = &mut self.mode {
            *idx += 1;
            if *idx == plan.len() {
                // Post sequence done: surface the outcome.
                self.mode = Mode::Program;
                self.regs[0] = att.resume_pc;
                let mac = self.mac_bytes();
                if let Some(a) = &mut self.attest {
                    if a.outcome.is_none() {
                        a.outcome = Some(AttestOutcome::Completed { mac });
                    }
                }
            }
        }
    }

    fn enter_script(&mut self, return_pc: u16, direct_entry: bool) {
        let auth = self.layout.has_ctr();
        let ar_len = self.layout.ar_max - self.layout.ar_min + 1;
        let run = ScriptRun {
            actions: script_actions(auth, ar_len),
            idx: 0,
            auth,
            chal: [0; 32],
            ctr: [0; 32],
            key: [0; 64],
            token: [0; 32],
            verification: [0; 32],
            derived: [0; 32],
            data: Vec::with_capacity(ar_len as usize),
            mac: [0; 32],
            rejected: None,
            return_pc,
            direct_entry,
        };
        self.mode = Mode::Script(Box::new(run));
    }

    fn exec_script(&mut self, action: ScriptAction, pc: u16, tags: &mut Vec<EventTag>) {
        self.regs[0] = pc;
        let Mode::Script(run) = &mut self.mode else {
            unreachable!("script effect outside script mode");
        };
        if run.idx == 0 {
            tags.push(EventTag::SwattEntry);
        }
        let layout = self.layout.clone();
        let finish_idx = run.actions.len() - 1;
        let mut jump_to_finish = false;
        match action {
            ScriptAction::ReadChal(i) => {
                run.chal[i as usize] = self.mem[layout.mac_addr.wrapping_add(i as u16) as usize];
            }
            ScriptAction::ReadCtr(i) => {
                let base = layout.ctr.unwrap().0;
                run.ctr[i as usize] = self.mem[base.wrapping_add(i as u16) as usize];
                if i == 31 && run.chal <= run.ctr {
                    run.rejected = Some(true);
                    jump_to_finish = true;
                    tags.push(EventTag::SwattReject);
                }
            }
            ScriptAction::ReadKey(i) => {
                run.key[i as usize] = self.mem[layout.k_min.wrapping_add(i as u16) as usize];
            }
            ScriptAction::WriteKeyCopy(i) => {
                let v = run.key[i as usize];
                let addr = layout.xs_min.wrapping_add(i as u16);
                let rom = in_rom(&layout, addr);
                if rom {
                    tags.push(EventTag::RomWriteDropped { addr });
                } else {
                    self.mem[addr as usize] = v;
                }
            }
            ScriptAction::ReadToken(i) => {
                let base = layout.vrf_auth.expect("auth script needs vrf_auth");
                run.token[i as usize] = self.mem[base.wrapping_add(i as u16) as usize];
                if i == 31 {
                    run.verification = hmac_sha256(&run.key, &run.chal);
                    if !ct_eq(&run.token, &run.verification) {
                        run.rejected = Some(false);
                        jump_to_finish = true;
                        tags.push(EventTag::SwattReject);
                    }
                }
            }
            ScriptAction::WriteDerived(i) => {
                if i == 0 {
                    run.derived = if run.auth {
                        hmac_sha256(&run.key, &run.verification)
                    } else {
                        hmac_sha256(&run.key, &run.chal)
                    };
                }
                let addr = layout.xs_min.wrapping_add(64 + i as u16);
                self.mem[addr as usize] = run.derived[i as usize];
            }
            ScriptAction::ReadAr(off) => {
                run.data.push(self.mem[layout.ar_min.wrapping_add(off) as usize]);
            }
            ScriptAction::WriteMac(i) => {
                if i == 0 {
                    run.mac = hmac_sha256(&run.derived, &run.data);
                }
                let addr = layout.mac_addr.wrapping_add(i as u16);
                self.mem[addr as usize] = run.mac[i as usize];
            }
            ScriptAction::WriteCtr(i) => {
                let base = layout.ctr.unwrap().0;
                self.mem[base.wrapping_add(i as u16) as usize] = run.chal[i as usize];
            }
            ScriptAction::Finish => {
                tags.push(EventTag::SwattExit);
                let rejected = run.rejected;
                let return_pc = run.return_pc;
                let direct = run.direct_entry;
                if direct {
                    self.regs[1] = self.regs[1].wrapping_add(2);
                    self.mode = Mode::Program;
                    self.regs[0] = return_pc;
                    return;
                }
                if let Some(stale) = rejected {
                    if let Some(a) = &mut self.attest {
                        a.outcome = Some(AttestOutcome::Rejected { stale });
                    }
                }
                // Hand control to the wrapper's post sequence.
                let mut post = vec![
                    WrapperStep::RestoreSp,
                    WrapperStep::PopReg(6),
                    WrapperStep::PopReg(5),
                ];
                if self.attest.as_ref().map(|a| a.re_enable_int).unwrap_or(false) {
                    post.push(WrapperStep::Eint);
                }
                self.mode = Mode::Wrapper { plan: post, idx: 0 };
                return;
            }
        }
        if jump_to_finish {
            run.idx = finish_idx;
        } else {
            run.idx += 1;
        }
    }

    /// The spec'd scripted-cycle listing for the routine as it would run
    /// from the current machine state.
    pub fn swatt_plan(&self) -> Vec<ScriptAction> {
        let ar_len = self.layout.ar_max - self.layout.ar_min + 1;
        script_actions(self.layout.has_ctr(), ar_len)
    }

    /// Emulates the call wrapper: copies the challenge (and token) to their
    /// designated addresses, disables interrupts, saves and redirects the
    /// stack pointer, transfers control to the routine, and restores state
    /// on return. Drives the machine until the attestation completes, the
    /// routine rejects the request, or a reset runs through its release.
    pub fn invoke_attestation(&mut self, chal: &[u8; 32]) -> Result<AttestOutcome, SimError> {
        self.invoke_attestation_with(chal, None, WrapperOptions::default())
    }

    pub fn invoke_attestation_with(
        &mut self,
        chal: &[u8; 32],
        token: Option<&[u8; 32]>,
        opts: WrapperOptions,
    ) -> Result<AttestOutcome, SimError> {
        if self.halted.is_some() {
            return Err(SimError::Halted);
        }
        if !matches!(self.mode, Mode::Program) {
            return Err(SimError::NotIdle("machine is not executing application code".into()));
        }
        let pc = self.regs[0];
        if self.layout.pc_in_cr(pc) || pc == 0 {
            return Err(SimError::NotIdle("caller must run outside CR".into()));
        }
        if token.is_some() && self.layout.vrf_auth.is_none() {
            return Err(SimError::Config("layout has no token buffer".into()));
        }
        // A region override applies to this invocation only; the configured
        // region is restored once the call returns.
        let configured_region = (self.layout.ar_min, self.layout.ar_max);
        if let Some((lo, hi)) = opts.region_override {
            self.set_attested_region(lo, hi)?;
        }

        let mut plan = Vec::new();
        if let Some(_t) = token {
            for i in 0..32 {
                plan.push(WrapperStep::WriteToken(i));
            }
        }
        for i in 0..32 {
            plan.push(WrapperStep::WriteChal(i));
        }
        if opts.disable_interrupts {
            plan.push(WrapperStep::Dint);
        }
        plan.push(WrapperStep::PushReg(5));
        plan.push(WrapperStep::PushReg(6));
        plan.push(WrapperStep::WriteRetScratch);
        plan.push(WrapperStep::SaveSp);
        plan.push(WrapperStep::SetSp);
        plan.push(WrapperStep::EnterScript);

        self.attest = Some(AttestRun {
            chal: *chal,
            token: token.copied(),
            resume_pc: pc,
            saved_sp: self.regs[1],
            re_enable_int: opts.disable_interrupts && self.int_enabled,
            outcome: None,
        });
        self.mode = Mode::Wrapper { plan, idx: 0 };

        let budget = self.cycle + DEFAULT_MAX_CYCLES;
        let result = loop {
            if self.cycle >= budget {
                break Err(SimError::Budget);
            }
            let (signals, _reset) = match self.step() {
                Ok(r) => r,
                Err(e) => break Err(e),
            };
            let outcome = self.attest.as_ref().and_then(|a| a.outcome.clone());
            match outcome {
                Some(AttestOutcome::ResetOccurred { cycle }) => {
                    // Drive through the release so the trace shows the full
                    // hold; the release cycle is the one with PC = 0.
                    if signals.pc == 0 {
                        self.attest = None;
                        break Ok(AttestOutcome::ResetOccurred { cycle });
                    }
                }
                Some(done @ (AttestOutcome::Completed { .. } | AttestOutcome::Rejected { .. })) => {
                    if matches!(self.mode, Mode::Program) {
                        self.attest = None;
                        break Ok(done);
                    }
                }
                None => {}
            }
        };
        if opts.region_override.is_some() {
            self.layout.ar_min = configured_region.0;
            self.layout.ar_max = configured_region.1;
        }
        result
    }

    /// The number of wrapper cycles before the routine's first cycle.
    pub fn wrapper_prefix_len(auth: bool, opts: &WrapperOptions) -> u64 {
        let token = if auth { 32 } else { 0 };
        let dint = if opts.disable_interrupts { 1 } else { 0 };
        token + 32 + dint + 2 + 1 + 1 + 1 + 1
    }

    /// Runs until the stop condition; a hard cycle budget always ends it.
    pub fn run(&mut self, stop: StopCondition) -> Result<StopReason, SimError> {
        let budget = match stop {
            StopCondition::MaxCycles(n) => n,
            _ => DEFAULT_MAX_CYCLES,
        };
        let end = self.cycle + budget;
        loop {
            if let Some(cause) = self.halted {
                return Ok(StopReason::Halted(cause));
            }
            if self.cycle >= end {
                return Ok(StopReason::MaxCyclesReached);
            }
            let (signals, reset) = self.step()?;
            if matches!(stop, StopCondition::ResetObserved) && reset && signals.pc == 0 {
                return Ok(StopReason::ResetReleased);
            }
        }
    }
}

fn in_rom(layout: &MemoryLayout, addr: u16) -> bool {
    layout.pc_in_cr(addr) || layout.in_kr(addr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::assemble;
    use rawb_core::swatt::{swatt_compute, Challenge};

    fn key() -> MasterKey {
        MasterKey(core::array::from_fn(|i| i as u8))
    }

    fn image() -> Vec<u8> {
        vec![0x5A; 64]
    }

    fn load_program(text: &str) -> Machine {
        let program = assemble(text).unwrap();
        Machine::load(
            &MemoryLayout::default_base(),
            &program,
            &image(),
            &key(),
            &[0xC3; 256],
            SimConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn empty_program_halts_with_one_record() {
        let mut m = load_program("HALT");
        let reason = m.run(StopCondition::Halt).unwrap();
        assert_eq!(reason, StopReason::Halted(HaltCause::Halt));
        assert_eq!(m.trace().len(), 1);
    }

    #[test]
    fn program_overlapping_rom_is_rejected() {
        let layout = MemoryLayout::default_base();
        let program = assemble(&format!(".org 0x{:04X}\nNOP\n", layout.cr_min)).unwrap();
        let err = Machine::load(&layout, &program, &image(), &key(), &[1], SimConfig::default());
        assert!(matches!(err, Err(SimError::RomOverlap(_))));
    }

    #[test]
    fn ar_bounds_follow_content_length() {
        let m = load_program("HALT");
        assert_eq!(m.layout().ar_max, m.layout().ar_min + 255);
    }

    #[test]
    fn key_read_resets_and_zeroes_registers() {
        let layout = MemoryLayout::default_base();
        let mut m = load_program(&format!(
            "MOVI r4, 7\nLOAD r4, 0x{:04X}\nHALT\n",
            layout.k_min
        ));
        // Cycle 0: MOVI. Cycle 1: the violating load.
        let (_, reset0) = m.step().unwrap();
        assert!(!reset0);
        let (signals, reset1) = m.step().unwrap();
        assert!(reset1, "key read outside CR must reset");
        assert!(signals.r_en && signals.d_addr == layout.k_min);
        // The load's effect still lands this cycle...
        assert_eq!(m.regs()[4], key().0[0] as u16);
        // ...but two cycles later everything reads zero.
        m.step().unwrap(); // settle
        let (signals, reset) = m.step().unwrap(); // release
        assert_eq!(signals.pc, 0);
        assert!(reset, "line stays high through the release cycle");
        assert!(m.regs().iter().all(|&r| r == 0));
    }

    #[test]
    fn dma_read_of_xs_resets() {
        let layout = MemoryLayout::default_base();
        let mut m = load_program("NOP\nNOP\nNOP\nHALT");
        m.schedule_dma(1, DmaRequest { addr: layout.xs_min, write: None });
        let (_, r0) = m.step().unwrap();
        assert!(!r0);
        let (signals, r1) = m.step().unwrap();
        assert!(signals.dma_en);
        assert!(r1);
    }

    #[test]
    fn nop_cycle_is_idle() {
        let mut m = load_program("NOP\nHALT");
        let (signals, reset) = m.step().unwrap();
        assert!(!signals.irq && !signals.r_en && !signals.w_en && !signals.dma_en);
        assert!(!reset);
    }

    #[test]
    fn signal_faithfulness_per_opcode() {
        let layout = MemoryLayout::default_base();
        let text = "MOVI r4, 1\nLOAD r4, 0x4000\nSTORE r4, 0x0900\nADD r4, r5\nSUB r4, r5\nCMP r4, r5\nJMP next\nnext: CALL fun\nHALT\nfun: RET\n".to_string();
        let mut m = load_program(&text);
        let expect: Vec<(bool, bool)> = vec![
            (false, false), // MOVI
            (true, false),  // LOAD
            (false, true),  // STORE
            (false, false), // ADD
            (false, false), // SUB
            (false, false), // CMP
            (false, false), // JMP
            (false, true),  // CALL pushes
            (true, false),  // RET pops
            (false, false), // HALT
        ];
        for (i, (r_en, w_en)) in expect.into_iter().enumerate() {
            let (signals, reset) = m.step().unwrap();
            assert_eq!((signals.r_en, signals.w_en), (r_en, w_en), "cycle {i}");
            assert!(!reset, "cycle {i}");
        }
        assert_eq!(m.halted(), Some(HaltCause::Halt));
        let _ = layout;
    }

    #[test]
    fn store_to_rom_is_dropped() {
        let layout = MemoryLayout::default_base();
        let before = [0x5A; 4];
        let mut m = load_program(&format!("MOVI r4, 0x77\nSTORE r4, 0x{:04X}\nHALT", layout.cr_min));
        m.step().unwrap();
        m.step().unwrap();
        assert_eq!(m.peek(layout.cr_min, 4), &before[..]);
        let dropped = m
            .trace()
            .records
            .iter()
            .any(|r| r.tags.iter().any(|t| matches!(t, EventTag::RomWriteDropped { .. })));
        assert!(dropped);
    }

    #[test]
    fn benign_attestation_matches_oracle() {
        let k = key();
        let ar = vec![0xC3; 256];
        let mut m = load_program("loop: NOP\nJMP loop");
        m.step().unwrap();
        let chal = [0x42u8; 32];
        let outcome = m.invoke_attestation(&chal).unwrap();
        let expected = swatt_compute(&k, &Challenge(chal), &ar);
        match outcome {
            AttestOutcome::Completed { mac } => assert_eq!(mac, expected),
            other => panic!("expected completion, got {other:?}"),
        }
        assert_eq!(m.mac_bytes(), expected);
        // Program resumes where it left off.
        assert!(m.halted().is_none());
        m.step().unwrap();
    }

    #[test]
    fn two_back_to_back_invocations_succeed() {
        let mut m = load_program("loop: NOP\nJMP loop");
        m.step().unwrap();
        let a = m.invoke_attestation(&[1u8; 32]).unwrap();
        assert!(matches!(a, AttestOutcome::Completed { .. }));
        // One ordinary instruction between the calls keeps the monitor walk
        // legal; the wrapper itself already executes outside CR.
        m.step().unwrap();
        let b = m.invoke_attestation(&[2u8; 32]).unwrap();
        assert!(matches!(b, AttestOutcome::Completed { .. }));
    }

    #[test]
    fn irq_mid_script_resets_when_wrapper_leaves_interrupts_on() {
        let mut m = load_program("loop: NOP\nJMP loop");
        m.step().unwrap();
        let entry =
            m.cycle() + Machine::wrapper_prefix_len(false, &WrapperOptions { disable_interrupts: false, region_override: None });
        m.schedule_irq(entry + 40);
        let outcome = m
            .invoke_attestation_with(
                &[7u8; 32],
                None,
                WrapperOptions { disable_interrupts: false, region_override: None },
            )
            .unwrap();
        assert_eq!(outcome, AttestOutcome::ResetOccurred { cycle: entry + 40 });
        // The correct wrapper masks the same interrupt.
        let mut m = load_program("loop: NOP\nJMP loop");
        m.step().unwrap();
        let entry = m.cycle() + Machine::wrapper_prefix_len(false, &WrapperOptions::default());
        m.schedule_irq(entry + 40);
        let outcome = m.invoke_attestation(&[7u8; 32]).unwrap();
        assert!(matches!(outcome, AttestOutcome::Completed { .. }));
    }

    #[test]
    fn dma_mid_script_resets_and_leaves_mr_unwritten() {
        let mut m = load_program("loop: NOP\nJMP loop");
        m.step().unwrap();
        let chal = [9u8; 32];
        let entry = m.cycle() + Machine::wrapper_prefix_len(false, &WrapperOptions::default());
        m.schedule_dma(entry + 100, DmaRequest { addr: 0x0100, write: None });
        let outcome = m.invoke_attestation(&chal).unwrap();
        assert_eq!(outcome, AttestOutcome::ResetOccurred { cycle: entry + 100 });
        // The MAC was never written: MR still holds the challenge.
        assert_eq!(m.mac_bytes(), chal);
    }

    #[test]
    fn rom_is_immutable_across_runs() {
        let layout = MemoryLayout::default_base();
        let mut m = load_program(&format!(
            "MOVI r4, 0x11\nSTORE r4, 0x{:04X}\nSTORE r4, 0x{:04X}\nHALT",
            layout.cr_min + 8,
            layout.k_min + 3,
        ));
        let before = m.rom_bytes();
        let _ = m.run(StopCondition::Halt);
        assert_eq!(m.rom_bytes(), before);
    }

    #[test]
    fn direct_call_into_routine_works() {
        let layout = MemoryLayout::default_base();
        let mut m = load_program(&format!("CALL 0x{:04X}\nHALT", layout.cr_min));
        let reason = m.run(StopCondition::Halt).unwrap();
        assert_eq!(reason, StopReason::Halted(HaltCause::Halt));
        // The script ran on an all-zero challenge (MR was zeroed at load).
        let expected = swatt_compute(&key(), &Challenge([0u8; 32]), &[0xC3; 256]);
        assert_eq!(m.mac_bytes(), expected);
    }

    #[test]
    fn jump_into_cr_middle_resets() {
        let layout = MemoryLayout::default_base();
        let mut m = load_program(&format!("JMP 0x{:04X}\nHALT", layout.cr_min + 8));
        let reason = m.run(StopCondition::ResetObserved).unwrap();
        assert_eq!(reason, StopReason::ResetReleased);
        assert_eq!(m.trace().first_reset_cycle(), Some(1));
        assert_eq!(m.trace().first_reset_hints(), vec![4]);
    }
}
