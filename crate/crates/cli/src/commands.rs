//! Command implementations behind the CLI surface. Each returns the
//! process exit code: 0 success/verified/accept, 1 verification or
//! scenario failure, 2 protocol reject, 3 usage error.

use std::fs;
use std::io::Write as _;
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rawb_core::checker::{
    check_specs, dump_counterexample, mutate, parse_mutation, replay_counterexample,
    spec_formula, spec_ids, CheckResult,
};
use rawb_core::hwmod::Composed;
use rawb_core::ltl::Verdict;
use rawb_core::model::{parse_layout_config, MemoryLayout};
use rawb_core::swatt::MasterKey;
use rawb_sim::{
    assemble, parse_trace_csv, replay_reset_bits, DmaRequest, Machine, SimConfig, StopCondition,
};

use crate::scenarios::{run_all, run_scenario, ScenarioReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_REJECT: i32 = 2;
pub const EXIT_USAGE: i32 = 3;

fn usage_err(msg: impl std::fmt::Display) -> i32 {
    eprintln!("error: {msg}");
    EXIT_USAGE
}

/// Loads a layout file, or the default for the variant.
pub fn load_layout(path: Option<&Path>, auth: bool) -> Result<MemoryLayout, String> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            let layout = parse_layout_config(&text).map_err(|e| format!("{}: {e}", p.display()))?;
            if auth && !layout.has_ctr() {
                return Err(format!("{}: --auth needs ctr_min/ctr_max", p.display()));
            }
            Ok(layout)
        }
        None => Ok(if auth {
            MemoryLayout::default_auth()
        } else {
            MemoryLayout::default_base()
        }),
    }
}

fn load_key(path: Option<&Path>) -> Result<MasterKey, String> {
    let path = match path {
        Some(p) => p.to_path_buf(),
        None => std::env::var_os("VRASED_KEY_FILE")
            .map(PathBuf::from)
            .ok_or("no key: pass --key or set VRASED_KEY_FILE")?,
    };
    let bytes = fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    MasterKey::from_slice(&bytes)
        .ok_or_else(|| format!("{}: key file must be exactly 64 bytes", path.display()))
}

pub struct CheckOpts {
    pub layout: Option<PathBuf>,
    pub auth: bool,
    pub specs: Vec<u32>,
    pub mutate: Option<String>,
    pub out_dir: PathBuf,
}

/// Model-checks the composed monitors (optionally with one member mutated)
/// against the shipped specs and prints the report.
pub fn cmd_check(opts: &CheckOpts) -> i32 {
    let layout = match load_layout(opts.layout.as_deref(), opts.auth) {
        Ok(l) => l,
        Err(e) => return usage_err(e),
    };
    let ids = if opts.specs.is_empty() {
        spec_ids(opts.auth)
    } else {
        let valid = spec_ids(opts.auth);
        for id in &opts.specs {
            if !valid.contains(id) {
                return usage_err(format!(
                    "spec {id} is not checkable here (valid: {valid:?})"
                ));
            }
        }
        opts.specs.clone()
    };

    let mut composed = Composed::standard(&layout);
    if let Some(desc) = &opts.mutate {
        let mutation = match parse_mutation(desc) {
            Ok(m) => m,
            Err(e) => return usage_err(e),
        };
        let Some(idx) = composed.members().iter().position(|m| m.kind == mutation.target) else {
            return usage_err(format!(
                "monitor {} is not part of this composition",
                mutation.target.name()
            ));
        };
        match mutate(&composed.members()[idx], &mutation) {
            Ok(m) => composed.members_mut()[idx] = m,
            Err(e) => return usage_err(e),
        }
        println!("# checking with mutation {mutation}");
    }

    let started = Instant::now();
    let report = match check_specs(&composed, &ids, &layout, opts.auth) {
        Ok(r) => r,
        Err(e) => return usage_err(e),
    };
    let elapsed = started.elapsed();

    println!("spec  status          states  transitions  counterexample");
    let mut all_ok = true;
    for (id, result) in &report.entries {
        match result {
            CheckResult::Verified { states_explored, transitions } => {
                println!("{id:>4}  verified       {states_explored:>7}  {transitions:>11}  -");
            }
            CheckResult::Counterexample { trace, violated_at } => {
                all_ok = false;
                let path = opts.out_dir.join(format!("counterexample-spec{id:02}.txt"));
                let formula = spec_formula(*id, opts.auth).expect("checked ids");
                let replay = replay_counterexample(&composed, &formula, trace);
                let replay_note = match replay {
                    Ok(Verdict::Violated(i)) if i == *violated_at => "replay confirms",
                    _ => "replay DISAGREES",
                };
                if let Err(e) = fs::write(&path, dump_counterexample(trace)) {
                    eprintln!("warning: cannot write {}: {e}", path.display());
                }
                println!(
                    "{id:>4}  counterexample        -            -  len {} at cycle {} ({replay_note}) -> {}",
                    trace.len(),
                    violated_at,
                    path.display()
                );
            }
        }
    }
    println!("#\n# machine-readable:\n{}", report.to_csv());
    println!("# wall time: {:.3}s", elapsed.as_secs_f64());
    if all_ok {
        EXIT_OK
    } else {
        EXIT_FAIL
    }
}

/// Runs scenarios and prints one PASS/FAIL line each.
pub fn cmd_scenario(
    name: Option<&str>,
    all: bool,
    seed: u64,
    trace_dir: Option<&Path>,
) -> i32 {
    let reports: Vec<ScenarioReport> = if all {
        run_all(seed)
    } else {
        let Some(name) = name else {
            return usage_err("pass a scenario name or --all");
        };
        match run_scenario(name, seed) {
            Some(r) => vec![r],
            None => {
                return usage_err(format!(
                    "unknown scenario `{name}` (known: {})",
                    crate::scenarios::SCENARIO_NAMES.join(", ")
                ))
            }
        }
    };

    let mut failures = 0;
    for report in &reports {
        let status = if report.pass { "PASS" } else { "FAIL" };
        println!(
            "{status}  {:<18} expected {:<18} {}",
            report.name, report.expected.to_string(), report.details
        );
        if !report.pass {
            failures += 1;
        }
        if let Some(dir) = trace_dir {
            for t in &report.traces {
                let path = dir.join(format!("{}-{}.csv", report.name, t.label));
                if let Err(e) = fs::write(&path, t.trace.to_csv()) {
                    eprintln!("warning: cannot write {}: {e}", path.display());
                }
            }
        }
    }
    println!("{}/{} scenarios passed", reports.len() - failures, reports.len());
    if failures == 0 {
        EXIT_OK
    } else {
        EXIT_FAIL
    }
}

pub struct SimulateOpts {
    pub program: PathBuf,
    pub layout: Option<PathBuf>,
    pub auth: bool,
    pub key: Option<PathBuf>,
    pub image: Option<PathBuf>,
    pub max_cycles: u64,
    pub disable_monitors: bool,
    pub irq_at: Vec<u64>,
    pub dma_at: Vec<String>,
    pub trace_out: Option<PathBuf>,
    pub seed: u64,
}

fn parse_dma_spec(spec: &str) -> Result<(u64, DmaRequest), String> {
    // cycle:read:addr | cycle:write:addr:value
    let parts: Vec<&str> = spec.split(':').collect();
    let parse_num = |s: &str| -> Result<u64, String> {
        let s = s.trim();
        if let Some(h) = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
            u64::from_str_radix(h, 16).map_err(|_| format!("bad number `{s}`"))
        } else {
            s.parse().map_err(|_| format!("bad number `{s}`"))
        }
    };
    match parts.as_slice() {
        [cycle, "read", addr] => Ok((
            parse_num(cycle)?,
            DmaRequest { addr: parse_num(addr)? as u16, write: None },
        )),
        [cycle, "write", addr, value] => Ok((
            parse_num(cycle)?,
            DmaRequest { addr: parse_num(addr)? as u16, write: Some(parse_num(value)? as u8) },
        )),
        _ => Err(format!("bad DMA spec `{spec}` (cycle:read:addr or cycle:write:addr:value)")),
    }
}

/// Assembles and runs one program, dumping the trace.
pub fn cmd_simulate(opts: &SimulateOpts) -> i32 {
    let layout = match load_layout(opts.layout.as_deref(), opts.auth) {
        Ok(l) => l,
        Err(e) => return usage_err(e),
    };
    let text = match fs::read_to_string(&opts.program) {
        Ok(t) => t,
        Err(e) => return usage_err(format!("{}: {e}", opts.program.display())),
    };
    let program = match assemble(&text) {
        Ok(p) => p,
        Err(e) => return usage_err(format!("{}: {e}", opts.program.display())),
    };
    let key = match &opts.key {
        Some(p) => match load_key(Some(p)) {
            Ok(k) => k,
            Err(e) => return usage_err(e),
        },
        // A fixed development key keeps plain simulations self-contained.
        None => MasterKey(core::array::from_fn(|i| i as u8)),
    };
    let image = match &opts.image {
        Some(p) => match fs::read(p) {
            Ok(b) => b,
            Err(e) => return usage_err(format!("{}: {e}", p.display())),
        },
        None => vec![0u8; 1024],
    };
    let mut machine = match Machine::load(
        &layout,
        &program,
        &[0x5A; 32],
        &key,
        &image,
        SimConfig { monitors_enabled: !opts.disable_monitors, ..SimConfig::default() },
    ) {
        Ok(m) => m,
        Err(e) => return usage_err(e),
    };
    for c in &opts.irq_at {
        machine.schedule_irq(*c);
    }
    for spec in &opts.dma_at {
        match parse_dma_spec(spec) {
            Ok((cycle, req)) => machine.schedule_dma(cycle, req),
            Err(e) => return usage_err(e),
        }
    }
    let _ = opts.seed;
    let reason = match machine.run(StopCondition::MaxCycles(opts.max_cycles)) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_FAIL;
        }
    };
    let trace = machine.trace();
    let resets = trace.records.iter().filter(|r| r.reset).count();
    println!(
        "stopped: {reason:?} after {} cycles; {} cycles with reset asserted",
        trace.len(),
        resets
    );
    if let Some(cycle) = trace.first_reset_cycle() {
        println!("first reset at cycle {cycle}, attributed to specs {:?}", trace.first_reset_hints());
    }
    if let Some(path) = &opts.trace_out {
        if let Err(e) = fs::write(path, trace.to_csv()) {
            eprintln!("error: cannot write {}: {e}", path.display());
            return EXIT_FAIL;
        }
        println!("trace written to {}", path.display());
    }
    EXIT_OK
}

/// Re-feeds a dumped trace to fresh monitors and compares reset bits.
pub fn cmd_replay(trace_path: &Path, layout_path: Option<&Path>, auth: bool) -> i32 {
    let layout = match load_layout(layout_path, auth) {
        Ok(l) => l,
        Err(e) => return usage_err(e),
    };
    let text = match fs::read_to_string(trace_path) {
        Ok(t) => t,
        Err(e) => return usage_err(format!("{}: {e}", trace_path.display())),
    };
    let rows = match parse_trace_csv(&text) {
        Ok(r) => r,
        Err(e) => return usage_err(format!("{}: {e}", trace_path.display())),
    };
    let replayed = replay_reset_bits(rows.iter().map(|r| r.signals), &layout);
    let mut mismatches = 0;
    for (row, bit) in rows.iter().zip(&replayed) {
        if row.reset != *bit {
            if mismatches == 0 {
                eprintln!("cycle {}: recorded reset={} replayed={}", row.cycle, row.reset as u8, *bit as u8);
            }
            mismatches += 1;
        }
    }
    if mismatches == 0 {
        println!("replay ok: {} cycles, reset bits reproduced exactly", rows.len());
        EXIT_OK
    } else {
        println!("replay mismatch on {mismatches}/{} cycles", rows.len());
        EXIT_FAIL
    }
}

pub struct ProveOpts {
    pub listen: String,
    pub key: Option<PathBuf>,
    pub image: PathBuf,
    pub layout: Option<PathBuf>,
    pub auth: bool,
    pub once: bool,
}

/// Serves attestation over TCP, one request per connection, backed by a
/// simulated device. A device reset reboots the machine for the next
/// connection (the persistent counter survives, as flash would).
pub fn cmd_prove(opts: &ProveOpts) -> i32 {
    let layout = match load_layout(opts.layout.as_deref(), opts.auth) {
        Ok(l) => l,
        Err(e) => return usage_err(e),
    };
    let key = match load_key(opts.key.as_deref()) {
        Ok(k) => k,
        Err(e) => return usage_err(e),
    };
    let image = match fs::read(&opts.image) {
        Ok(b) if !b.is_empty() => b,
        Ok(_) => return usage_err("image file is empty"),
        Err(e) => return usage_err(format!("{}: {e}", opts.image.display())),
    };

    let boot = |ctr: Option<[u8; 32]>| -> Result<Machine, String> {
        let mut m = Machine::load(
            &layout,
            &assemble("loop: NOP\nJMP loop").unwrap(),
            &[0x5A; 32],
            &key,
            &image,
            SimConfig::default(),
        )
        .map_err(|e| e.to_string())?;
        if let (Some(bytes), Some((lo, _))) = (ctr, layout.ctr) {
            m.poke(lo, &bytes);
        }
        m.step().map_err(|e| e.to_string())?;
        Ok(m)
    };

    let listener = match TcpListener::bind(&opts.listen) {
        Ok(l) => l,
        Err(e) => return usage_err(format!("cannot listen on {}: {e}", opts.listen)),
    };
    println!("serving attestation on {}", listener.local_addr().unwrap());

    let mut machine = match boot(None) {
        Ok(m) => m,
        Err(e) => return usage_err(e),
    };
    for stream in listener.incoming() {
        let mut stream = match stream {
            Ok(s) => s,
            Err(e) => {
                eprintln!("accept failed: {e}");
                continue;
            }
        };
        if !machine.is_idle() {
            // The previous request reset the device; reboot, carrying the
            // flash-resident counter over.
            let ctr = machine.ctr_bytes();
            machine = match boot(ctr) {
                Ok(m) => m,
                Err(e) => return usage_err(e),
            };
            println!("device rebooted");
        }
        let mut prover = match rawb_proto::Prover::new(machine) {
            Ok(p) => p,
            Err(e) => return usage_err(e.to_string()),
        };
        let served = match prover.serve_connection(&mut stream) {
            Ok(()) => {
                println!("served one request");
                true
            }
            Err(e) => {
                eprintln!("session error: {e}");
                false
            }
        };
        machine = prover.into_machine();
        if opts.once && served {
            break;
        }
    }
    EXIT_OK
}

pub struct VerifyOpts {
    pub connect: String,
    pub key: Option<PathBuf>,
    pub image: PathBuf,
    pub layout: Option<PathBuf>,
    pub auth: bool,
    pub region: Option<(u16, u16)>,
    pub seed: Option<u64>,
    pub counter_file: Option<PathBuf>,
    pub replay_test: bool,
}

/// Issues one attestation request and prints the verdict.
pub fn cmd_verify(opts: &VerifyOpts) -> i32 {
    let layout = match load_layout(opts.layout.as_deref(), opts.auth) {
        Ok(l) => l,
        Err(e) => return usage_err(e),
    };
    let key = match load_key(opts.key.as_deref()) {
        Ok(k) => k,
        Err(e) => return usage_err(e),
    };
    let image = match fs::read(&opts.image) {
        Ok(b) if !b.is_empty() => b,
        Ok(_) => return usage_err("image file is empty"),
        Err(e) => return usage_err(format!("{}: {e}", opts.image.display())),
    };
    if opts.region.is_some() && !opts.auth {
        return usage_err("--region is honored only with --auth");
    }

    let mut verifier = rawb_proto::VerifierState::new(key, image.clone(), opts.seed);
    if let Some(path) = &opts.counter_file {
        if let Ok(bytes) = fs::read(path) {
            if bytes.len() == 16 {
                verifier.set_counter(u128::from_be_bytes(bytes.try_into().unwrap()));
            }
        }
    }

    // Region-specified requests compare against the matching image window.
    let expected = match opts.region {
        Some((lo, hi)) => {
            let base = layout.ar_min;
            if lo < base || hi as usize - base as usize >= image.len() {
                return usage_err("--region must fall inside the attested image");
            }
            Some(image[(lo - base) as usize..=(hi - base) as usize].to_vec())
        }
        None => None,
    };

    let round = |verifier: &mut rawb_proto::VerifierState| -> Result<rawb_proto::VerifierVerdict, String> {
        let mut conn = TcpStream::connect(&opts.connect).map_err(|e| e.to_string())?;
        verifier_round_logged(verifier, &mut conn, opts.auth, opts.region, expected.clone())
    };

    let verdict = match round(&mut verifier) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("transport error: {e}");
            return EXIT_FAIL;
        }
    };
    let mut code = print_verdict(&verdict);

    if opts.replay_test {
        // Deliberately reissue a consumed counter value: the authenticated
        // prover must reject the stale request.
        match replay_same_challenge(&verifier, opts) {
            Ok(rejected) => {
                if rejected {
                    println!("stale challenge rejected by the prover");
                    code = EXIT_REJECT;
                } else {
                    println!("stale challenge was ACCEPTED: freshness broken");
                    code = EXIT_FAIL;
                }
            }
            Err(e) => {
                eprintln!("replay test transport error: {e}");
                code = EXIT_FAIL;
            }
        }
    }

    if let Some(path) = &opts.counter_file {
        let _ = fs::write(path, verifier.counter().to_be_bytes());
    }
    code
}

fn verifier_round_logged(
    verifier: &mut rawb_proto::VerifierState,
    conn: &mut TcpStream,
    auth: bool,
    region: Option<(u16, u16)>,
    expected: Option<Vec<u8>>,
) -> Result<rawb_proto::VerifierVerdict, String> {
    rawb_proto::verifier_round(verifier, conn, auth, region, expected).map_err(|e| e.to_string())
}

fn print_verdict(verdict: &rawb_proto::VerifierVerdict) -> i32 {
    match verdict {
        rawb_proto::VerifierVerdict::Accept => {
            println!("Accept");
            EXIT_OK
        }
        rawb_proto::VerifierVerdict::Reject(cause) => {
            println!("Reject ({cause:?})");
            EXIT_REJECT
        }
    }
}

fn replay_same_challenge(
    verifier: &rawb_proto::VerifierState,
    opts: &VerifyOpts,
) -> Result<bool, String> {
    // Re-issue the just-consumed counter value (zero random suffix): the
    // device's monotonic check must reject it as stale.
    let mut chal = [0u8; 32];
    chal[..16].copy_from_slice(&verifier.counter().to_be_bytes());
    let key = load_key(opts.key.as_deref())?;
    let token = rawb_core::swatt::hmac_sha256(&key.0, &chal);
    let request = rawb_proto::AttestationRequest { chal, auth_token: Some(token), region: None };
    let mut conn = TcpStream::connect(&opts.connect).map_err(|e| e.to_string())?;
    rawb_proto::write_frame(&mut conn, &request.encode()).map_err(|e| e.to_string())?;
    let frame = rawb_proto::read_frame(&mut conn).map_err(|e| e.to_string())?;
    match rawb_proto::Message::decode(&frame).map_err(|e| e.to_string())? {
        rawb_proto::Message::Response(r) => Ok(r.status == rawb_proto::ResponseStatus::Rejected),
        other => Err(format!("unexpected reply {other:?}")),
    }
}

/// Writes a fresh random key file (convenience for demos).
pub fn cmd_keygen(path: &Path, seed: Option<u64>) -> i32 {
    let mut bytes = [0u8; 64];
    match seed {
        Some(s) => rand::rngs::StdRng::seed_from_u64(s).fill_bytes(&mut bytes),
        None => rand::rngs::OsRng.fill_bytes(&mut bytes),
    }
    match fs::File::create(path).and_then(|mut f| f.write_all(&bytes)) {
        Ok(()) => {
            println!("wrote 64-byte key to {}", path.display());
            EXIT_OK
        }
        Err(e) => usage_err(format!("{}: {e}", path.display())),
    }
}
