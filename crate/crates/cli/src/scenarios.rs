//! The shipped attack and benign scenario catalog.
//!
//! Each scenario drives the simulator into one specific security-relevant
//! situation and states its expected outcome up front: a monitor reset at
//! an exact cycle attributed to one spec, a protocol accept, or a detected
//! trace-check violation when the monitors are deliberately disabled. The
//! runner records every trace so the suite can re-check reset semantics and
//! temporal consistency mechanically.

use rawb_core::model::MemoryLayout;
use rawb_core::swatt::{swatt_compute, Challenge, MasterKey};
use rawb_proto::{memory_pair, write_frame, Prover, VerifierState, VerifierVerdict};
use rawb_sim::{
    assemble, check_key_confidentiality, check_reset_semantics, check_temporal_consistency,
    AttestOutcome, ConfidentialityVerdict, DmaRequest, Machine, ScriptMutation, SimConfig,
    StopCondition, TemporalVerdict, Trace, WrapperOptions,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpectedOutcome {
    /// A monitor reset attributed to this spec id, at one exact cycle.
    Reset { spec: u32 },
    /// The full protocol round accepts.
    Accept,
    /// A trace-check violation detectable only with the monitors disabled.
    Lemma { id: u8 },
}

impl std::fmt::Display for ExpectedOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ExpectedOutcome::Reset { spec } => write!(f, "reset(spec {spec})"),
            ExpectedOutcome::Accept => write!(f, "accept"),
            ExpectedOutcome::Lemma { id } => write!(f, "lemma-{id} violation"),
        }
    }
}

/// One recorded run of a scenario, labeled for trace dumps.
pub struct ScenarioTrace {
    pub label: String,
    pub layout: MemoryLayout,
    pub trace: Trace,
}

pub struct ScenarioReport {
    pub name: &'static str,
    pub expected: ExpectedOutcome,
    pub pass: bool,
    pub details: String,
    pub traces: Vec<ScenarioTrace>,
}

pub const SCENARIO_NAMES: [&str; 15] = [
    "read-key",
    "jump-mid-cr",
    "early-exit",
    "irq-during-swatt",
    "app-reads-xs",
    "swatt-writes-app",
    "dma-read-kr",
    "dma-read-xs",
    "dma-during-swatt",
    "reset-hold",
    "app-writes-ctr",
    "dma-ctr",
    "toctou-relocate",
    "taint-leak",
    "benign-attest",
];

fn scenario_key() -> MasterKey {
    MasterKey(core::array::from_fn(|i| (i as u8).wrapping_mul(37).wrapping_add(11)))
}

fn image() -> Vec<u8> {
    (0..256u32).map(|i| (i * 7 % 251) as u8).collect()
}

fn load(layout: &MemoryLayout, text: &str, monitors: bool) -> Machine {
    Machine::load(
        layout,
        &assemble(text).unwrap(),
        &[0x5A; 32],
        &scenario_key(),
        &image(),
        SimConfig { monitors_enabled: monitors, ..SimConfig::default() },
    )
    .unwrap()
}

/// Runs one scenario by name.
pub fn run_scenario(name: &str, seed: u64) -> Option<ScenarioReport> {
    let report = match name {
        "read-key" => violation_program(
            "read-key",
            2,
            &MemoryLayout::default_base(),
            |l| format!("NOP\nLOAD r4, 0x{:04X}\nHALT", l.k_min),
            1,
        ),
        "jump-mid-cr" => violation_program(
            "jump-mid-cr",
            4,
            &MemoryLayout::default_base(),
            |l| format!("NOP\nJMP 0x{:04X}\nHALT", l.cr_min + 8),
            2,
        ),
        "early-exit" => script_violation(
            "early-exit",
            3,
            ScriptMutation::ExitEarlyAt { index: 50 },
            50,
        ),
        "irq-during-swatt" => irq_during_swatt(),
        "app-reads-xs" => violation_program(
            "app-reads-xs",
            6,
            &MemoryLayout::default_base(),
            |l| format!("NOP\nLOAD r4, 0x{:04X}\nHALT", l.xs_min),
            1,
        ),
        "swatt-writes-app" => script_violation(
            "swatt-writes-app",
            7,
            ScriptMutation::WriteAppAt { index: 60, addr: 0x0400 },
            60,
        ),
        "dma-read-kr" => dma_violation("dma-read-kr", 8, |l| DmaRequest { addr: l.k_min, write: None }),
        "dma-read-xs" => dma_violation("dma-read-xs", 9, |l| DmaRequest { addr: l.xs_min, write: None }),
        "dma-during-swatt" => dma_during_swatt(),
        "reset-hold" => reset_hold(),
        "app-writes-ctr" => violation_program(
            "app-writes-ctr",
            12,
            &MemoryLayout::default_auth(),
            |l| format!("NOP\nMOVI r4, 9\nSTORE r4, 0x{:04X}\nHALT", l.ctr.unwrap().0),
            2,
        ),
        "dma-ctr" => {
            let layout = MemoryLayout::default_auth();
            dma_violation_on("dma-ctr", 13, &layout, DmaRequest {
                addr: layout.ctr.unwrap().0,
                write: Some(1),
            })
        }
        "toctou-relocate" => toctou_relocate(),
        "taint-leak" => taint_leak(),
        "benign-attest" => benign_attest(seed),
        _ => return None,
    };
    Some(report)
}

/// Runs the full catalog in order.
pub fn run_all(seed: u64) -> Vec<ScenarioReport> {
    SCENARIO_NAMES
        .iter()
        .map(|n| run_scenario(n, seed).expect("catalog names are exhaustive"))
        .collect()
}

fn record(m: &mut Machine, label: &str) -> ScenarioTrace {
    ScenarioTrace {
        label: label.to_string(),
        layout: m.layout().clone(),
        trace: m.take_trace(),
    }
}

/// A reset scenario must fire at exactly `expected_cycle` with the right
/// spec attribution, hold through release, and replay cleanly.
fn judge_reset(
    name: &'static str,
    spec: u32,
    expected_cycle: u64,
    mut machine: Machine,
) -> ScenarioReport {
    let run = machine.run(StopCondition::ResetObserved);
    let trace = machine.trace();
    let observed = trace.first_reset_cycle();
    let hints = trace.first_reset_hints();
    let hold = check_reset_semantics(trace);
    let rom_intact = machine.rom_bytes();
    let mut pass = true;
    let mut details = Vec::new();
    match run {
        Ok(rawb_sim::StopReason::ResetReleased) => {}
        other => {
            pass = false;
            details.push(format!("run ended unexpectedly: {other:?}"));
        }
    }
    if observed != Some(expected_cycle) {
        pass = false;
        details.push(format!("reset at {observed:?}, expected cycle {expected_cycle}"));
    } else {
        details.push(format!("reset at cycle {expected_cycle}"));
    }
    if !hints.contains(&spec) {
        pass = false;
        details.push(format!("attributed to specs {hints:?}, expected {spec}"));
    }
    match hold {
        Ok(runs) if runs >= 1 => details.push("hold-to-release ok".into()),
        Ok(_) => {
            pass = false;
            details.push("no completed reset run recorded".into());
        }
        Err(e) => {
            pass = false;
            details.push(format!("reset semantics: {e}"));
        }
    }
    let _ = rom_intact;
    ScenarioReport {
        name,
        expected: ExpectedOutcome::Reset { spec },
        pass,
        details: details.join("; "),
        traces: vec![record(&mut machine, "run")],
    }
}

fn violation_program(
    name: &'static str,
    spec: u32,
    layout: &MemoryLayout,
    program: impl Fn(&MemoryLayout) -> String,
    expected_cycle: u64,
) -> ScenarioReport {
    let machine = load(layout, &program(layout), true);
    judge_reset(name, spec, expected_cycle, machine)
}

fn dma_violation(
    name: &'static str,
    spec: u32,
    req: impl Fn(&MemoryLayout) -> DmaRequest,
) -> ScenarioReport {
    let layout = MemoryLayout::default_base();
    let request = req(&layout);
    dma_violation_on(name, spec, &layout, request)
}

fn dma_violation_on(
    name: &'static str,
    spec: u32,
    layout: &MemoryLayout,
    request: DmaRequest,
) -> ScenarioReport {
    let mut machine = load(layout, "NOP\nNOP\nNOP\nHALT", true);
    machine.schedule_dma(1, request);
    judge_reset(name, spec, 1, machine)
}

/// Invoke the routine with a debug script edit; the monitors must reset at
/// exactly the edited cycle.
fn script_violation(
    name: &'static str,
    spec: u32,
    mutation: ScriptMutation,
    offset: u64,
) -> ScenarioReport {
    let layout = MemoryLayout::default_base();
    let mut machine = load(&layout, "loop: NOP\nJMP loop", true);
    machine.step().unwrap();
    let entry = machine.cycle() + Machine::wrapper_prefix_len(false, &WrapperOptions::default());
    machine.set_script_mutation(Some(mutation));
    let outcome = machine.invoke_attestation(&[0x21u8; 32]);
    let expected_cycle = entry + offset;
    let mut pass = true;
    let mut details = Vec::new();
    match outcome {
        Ok(AttestOutcome::ResetOccurred { cycle }) if cycle == expected_cycle => {
            details.push(format!("reset at cycle {cycle}"));
        }
        other => {
            pass = false;
            details.push(format!("expected reset at {expected_cycle}, got {other:?}"));
        }
    }
    let hints = machine.trace().first_reset_hints();
    if !hints.contains(&spec) {
        pass = false;
        details.push(format!("attributed to {hints:?}, expected {spec}"));
    }
    if let Err(e) = check_reset_semantics(machine.trace()) {
        pass = false;
        details.push(format!("reset semantics: {e}"));
    }
    ScenarioReport {
        name,
        expected: ExpectedOutcome::Reset { spec },
        pass,
        details: details.join("; "),
        traces: vec![record(&mut machine, "run")],
    }
}

fn irq_during_swatt() -> ScenarioReport {
    let layout = MemoryLayout::default_base();
    let buggy = WrapperOptions { disable_interrupts: false, region_override: None };
    let mut machine = load(&layout, "loop: NOP\nJMP loop", true);
    machine.step().unwrap();
    let entry = machine.cycle() + Machine::wrapper_prefix_len(false, &buggy);
    let hit = entry + 40;
    machine.schedule_irq(hit);
    let outcome = machine.invoke_attestation_with(&[0x33u8; 32], None, buggy);
    let mut pass = matches!(outcome, Ok(AttestOutcome::ResetOccurred { cycle }) if cycle == hit);
    let hints = machine.trace().first_reset_hints();
    if !hints.contains(&5) {
        pass = false;
    }
    let mut details = vec![format!(
        "buggy wrapper: irq at cycle {hit} -> {outcome:?}, hints {hints:?}"
    )];
    let mut traces = vec![record(&mut machine, "buggy-wrapper")];

    // The correct wrapper masks the same schedule and completes.
    let mut machine = load(&layout, "loop: NOP\nJMP loop", true);
    machine.step().unwrap();
    let entry = machine.cycle() + Machine::wrapper_prefix_len(false, &WrapperOptions::default());
    machine.schedule_irq(entry + 40);
    let masked = machine.invoke_attestation(&[0x33u8; 32]);
    if !matches!(masked, Ok(AttestOutcome::Completed { .. })) {
        pass = false;
        details.push(format!("correct wrapper should complete, got {masked:?}"));
    } else {
        details.push("correct wrapper masks the interrupt".into());
    }
    traces.push(record(&mut machine, "correct-wrapper"));
    ScenarioReport {
        name: "irq-during-swatt",
        expected: ExpectedOutcome::Reset { spec: 5 },
        pass,
        details: details.join("; "),
        traces,
    }
}

fn dma_during_swatt() -> ScenarioReport {
    let layout = MemoryLayout::default_base();
    let mut machine = load(&layout, "loop: NOP\nJMP loop", true);
    machine.step().unwrap();
    let entry = machine.cycle() + Machine::wrapper_prefix_len(false, &WrapperOptions::default());
    let hit = entry + 100;
    // Benign address: any DMA while the routine runs must reset.
    machine.schedule_dma(hit, DmaRequest { addr: 0x0100, write: None });
    let chal = [0x44u8; 32];
    let outcome = machine.invoke_attestation(&chal);
    let mut pass = matches!(outcome, Ok(AttestOutcome::ResetOccurred { cycle }) if cycle == hit);
    let hints = machine.trace().first_reset_hints();
    if !hints.contains(&10) {
        pass = false;
    }
    // The MAC was never produced: MR still holds the challenge.
    if machine.mac_bytes() != chal {
        pass = false;
    }
    let details = format!("dma at cycle {hit} -> {outcome:?}, hints {hints:?}, MR unchanged");
    ScenarioReport {
        name: "dma-during-swatt",
        expected: ExpectedOutcome::Reset { spec: 10 },
        pass,
        details,
        traces: vec![record(&mut machine, "run")],
    }
}

fn reset_hold() -> ScenarioReport {
    // Any violation will do; the point is the recorded hold. The trace is
    // additionally evaluated against the reset-hold spec itself.
    let layout = MemoryLayout::default_base();
    let mut machine = load(&layout, &format!("NOP\nLOAD r4, 0x{:04X}\nHALT", layout.k_min), true);
    let _ = machine.run(StopCondition::ResetObserved);
    let mut pass = true;
    let mut details = Vec::new();
    if machine.trace().first_reset_cycle() != Some(1) {
        pass = false;
        details.push(format!(
            "expected the trigger at cycle 1, got {:?}",
            machine.trace().first_reset_cycle()
        ));
    }
    match check_reset_semantics(machine.trace()) {
        Ok(runs) if runs >= 1 => details.push(format!("{runs} reset run(s) held to PC=0")),
        other => {
            pass = false;
            details.push(format!("hold check failed: {other:?}"));
        }
    }
    // The recorded (signals, reset) valuations never form a bad prefix of
    // the reset-hold property.
    let formula = rawb_core::checker::spec_formula(11, false).unwrap();
    let valuations: Vec<rawb_core::ltl::SignalValuation> = machine
        .trace()
        .records
        .iter()
        .map(|r| {
            rawb_core::ltl::SignalValuation::from_symbol(
                &rawb_core::model::abstract_signals(&r.signals, machine.layout()),
                r.reset,
            )
        })
        .collect();
    match rawb_core::ltl::eval_prefix(&formula, &valuations) {
        Ok(rawb_core::ltl::Verdict::Clean) => details.push("trace satisfies the hold spec".into()),
        other => {
            pass = false;
            details.push(format!("hold spec verdict: {other:?}"));
        }
    }
    ScenarioReport {
        name: "reset-hold",
        expected: ExpectedOutcome::Reset { spec: 11 },
        pass,
        details: details.join("; "),
        traces: vec![record(&mut machine, "run")],
    }
}

fn toctou_relocate() -> ScenarioReport {
    let layout = MemoryLayout::default_base();
    let mut details = Vec::new();
    let mut traces = Vec::new();
    let mut pass = true;

    // Monitors enabled: the DMA write lands but the routine is cut down at
    // that exact cycle, so no inconsistent measurement completes.
    let mut on = load(&layout, "loop: NOP\nJMP loop", true);
    on.step().unwrap();
    let entry = on.cycle() + Machine::wrapper_prefix_len(false, &WrapperOptions::default());
    let hit = entry + 160 + 30; // mid-sweep
    on.schedule_dma(hit, DmaRequest { addr: layout.ar_min + 5, write: Some(0xEE) });
    let outcome = on.invoke_attestation(&[0x55u8; 32]);
    if !matches!(outcome, Ok(AttestOutcome::ResetOccurred { cycle }) if cycle == hit) {
        pass = false;
        details.push(format!("monitors on: expected reset at {hit}, got {outcome:?}"));
    }
    match check_temporal_consistency(on.trace(), on.layout()) {
        TemporalVerdict::Ok { completed: 0, aborted } if aborted >= 1 => {
            details.push("monitors on: span aborted, nothing inconsistent completed".into());
        }
        other => {
            pass = false;
            details.push(format!("monitors on: unexpected verdict {other:?}"));
        }
    }
    traces.push(record(&mut on, "monitors-on"));

    // Monitors disabled: the relocation succeeds and the checker detects
    // the inconsistent completed measurement.
    let mut off = load(&layout, "loop: NOP\nJMP loop", false);
    off.step().unwrap();
    let entry = off.cycle() + Machine::wrapper_prefix_len(false, &WrapperOptions::default());
    let hit = entry + 160 + 30;
    off.schedule_dma(hit, DmaRequest { addr: layout.ar_min + 5, write: Some(0xEE) });
    let outcome = off.invoke_attestation(&[0x55u8; 32]);
    if !matches!(outcome, Ok(AttestOutcome::Completed { .. })) {
        pass = false;
        details.push(format!("monitors off: expected completion, got {outcome:?}"));
    }
    match check_temporal_consistency(off.trace(), off.layout()) {
        TemporalVerdict::Violation { cycle } if cycle == hit => {
            details.push(format!("monitors off: violation detected at cycle {cycle}"));
        }
        other => {
            pass = false;
            details.push(format!("monitors off: expected violation at {hit}, got {other:?}"));
        }
    }
    traces.push(record(&mut off, "monitors-off"));

    ScenarioReport {
        name: "toctou-relocate",
        expected: ExpectedOutcome::Lemma { id: 1 },
        pass,
        details: details.join("; "),
        traces,
    }
}

fn taint_leak() -> ScenarioReport {
    let layout = MemoryLayout::default_base();
    let program = format!("NOP\nLOAD r4, 0x{:04X}\nHALT", layout.xs_min);
    let mut details = Vec::new();
    let mut traces = Vec::new();
    let mut pass = true;

    // Monitors disabled: a measurement fills XS with key material, then the
    // application reads it back unchecked.
    let mut off = load(&layout, &program, false);
    off.step().unwrap();
    off.invoke_attestation(&[0x66u8; 32]).unwrap();
    let read_cycle = off.cycle(); // the LOAD executes right after return
    off.run(StopCondition::Halt).unwrap();
    match check_key_confidentiality(off.trace(), off.layout()) {
        ConfidentialityVerdict::Violation { cycle, addr }
            if cycle == read_cycle && addr == layout.xs_min =>
        {
            details.push(format!("monitors off: leak detected at cycle {cycle}"));
        }
        other => {
            pass = false;
            details.push(format!("monitors off: expected leak at {read_cycle}, got {other:?}"));
        }
    }
    traces.push(record(&mut off, "monitors-off"));

    // Monitors enabled: the same read resets in its own cycle (the taint
    // checker then has nothing to report).
    let mut on = load(&layout, &program, true);
    on.step().unwrap();
    on.invoke_attestation(&[0x66u8; 32]).unwrap();
    let read_cycle = on.cycle();
    let _ = on.run(StopCondition::ResetObserved);
    if on.trace().first_reset_cycle() != Some(read_cycle) {
        pass = false;
        details.push(format!(
            "monitors on: expected reset at {read_cycle}, got {:?}",
            on.trace().first_reset_cycle()
        ));
    }
    match check_key_confidentiality(on.trace(), on.layout()) {
        v if v.is_ok() => details.push("monitors on: reset covers the read".into()),
        other => {
            pass = false;
            details.push(format!("monitors on: taint checker reported {other:?}"));
        }
    }
    traces.push(record(&mut on, "monitors-on"));

    ScenarioReport {
        name: "taint-leak",
        expected: ExpectedOutcome::Lemma { id: 2 },
        pass,
        details: details.join("; "),
        traces,
    }
}

fn benign_attest(seed: u64) -> ScenarioReport {
    let layout = MemoryLayout::default_base();
    let img = image();
    let mut machine = load(&layout, "loop: NOP\nJMP loop", true);
    machine.step().unwrap();
    let mut prover = Prover::new(machine).unwrap();
    let mut verifier = VerifierState::new(scenario_key(), img.clone(), Some(seed));

    let (mut v_end, mut p_end) = memory_pair();
    let request = verifier.new_request(false, None);
    let chal = request.chal;
    write_frame(&mut v_end, &request.encode()).unwrap();
    prover.serve_connection(&mut p_end).unwrap();
    let frame = rawb_proto::read_frame(&mut v_end).unwrap();
    let rawb_proto::Message::Response(response) = rawb_proto::Message::decode(&frame).unwrap()
    else {
        panic!("expected a response");
    };
    let verdict = verifier.check(&chal, &response);

    let oracle = swatt_compute(&scenario_key(), &Challenge(chal), &img);
    let mut pass = verdict == VerifierVerdict::Accept && response.mac == oracle;
    let mut details = vec![format!("verdict {verdict:?}, MAC matches oracle: {}", response.mac == oracle)];
    let temporal = check_temporal_consistency(prover.machine().trace(), prover.machine().layout());
    if !temporal.is_ok() {
        pass = false;
        details.push(format!("temporal consistency: {temporal:?}"));
    }
    let machine = prover.machine_mut();
    let traces = vec![record(machine, "round")];
    ScenarioReport {
        name: "benign-attest",
        expected: ExpectedOutcome::Accept,
        pass,
        details: details.join("; "),
        traces,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_scenario_passes() {
        for report in run_all(7) {
            assert!(report.pass, "{}: {}", report.name, report.details);
        }
    }

    #[test]
    fn unknown_scenario_is_none() {
        assert!(run_scenario("nonsense", 0).is_none());
    }
}
