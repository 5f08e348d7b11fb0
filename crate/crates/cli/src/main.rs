use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rawb_cli::commands::{
    cmd_check, cmd_keygen, cmd_prove, cmd_replay, cmd_scenario, cmd_simulate, cmd_verify,
    CheckOpts, ProveOpts, SimulateOpts, VerifyOpts, EXIT_USAGE,
};

/// Remote-attestation verification workbench: model-check the hardware
/// monitors, simulate attack scenarios on the device model, and run the
/// challenge-response protocol end to end.
#[derive(Parser)]
#[command(name = "rawb", version, max_term_width = 100)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Model-check the monitor composition against the shipped specs.
    Check(CheckArgs),
    /// Run one shipped scenario, or the whole catalog.
    Scenario(ScenarioArgs),
    /// Assemble and run a program on the simulated device.
    Simulate(SimulateArgs),
    /// Re-feed a dumped trace to fresh monitors and compare reset bits.
    Replay(ReplayArgs),
    /// Serve attestation over TCP, backed by a simulated device.
    Prove(ProveArgs),
    /// Request one attestation from a prover and check the report.
    Verify(VerifyArgs),
    /// Generate a 64-byte key file.
    Keygen(KeygenArgs),
}

#[derive(Args)]
struct CheckArgs {
    /// Layout config file (defaults to the built-in layout).
    #[arg(long)]
    layout: Option<PathBuf>,
    /// Check the authenticated variant (adds the counter monitor and
    /// specs 12-13; relaxes spec 7 for counter writes).
    #[arg(long)]
    auth: bool,
    /// Check only these spec ids (repeatable). Default: all.
    #[arg(long = "spec")]
    specs: Vec<u32>,
    /// Apply a monitor mutation before checking, e.g. `keyac:drop-guard:0`,
    /// `atomicity:redirect-edge:midCR.otherwise:midCR`,
    /// `keyac:force-output:Reset:0`.
    #[arg(long)]
    mutate: Option<String>,
    /// Directory for counterexample dumps.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario name.
    name: Option<String>,
    /// Run the whole catalog.
    #[arg(long)]
    all: bool,
    /// Seed for scenario randomness.
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Directory for per-scenario trace dumps.
    #[arg(long)]
    trace_dir: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Program file (assembly text).
    #[arg(long)]
    program: PathBuf,
    #[arg(long)]
    layout: Option<PathBuf>,
    /// Use the authenticated default layout.
    #[arg(long)]
    auth: bool,
    /// 64-byte key file (defaults to a fixed development key).
    #[arg(long)]
    key: Option<PathBuf>,
    /// Attested-region contents (defaults to 1 KiB of zeros).
    #[arg(long)]
    image: Option<PathBuf>,
    #[arg(long, default_value_t = 100_000)]
    max_cycles: u64,
    /// Debug switch: disconnect the hardware monitors.
    #[arg(long)]
    disable_monitors: bool,
    /// Schedule the interrupt line at a cycle (repeatable).
    #[arg(long = "irq-at")]
    irq_at: Vec<u64>,
    /// Schedule a DMA access: `cycle:read:addr` or `cycle:write:addr:value`
    /// (repeatable).
    #[arg(long = "dma-at")]
    dma_at: Vec<String>,
    /// Write the trace CSV here.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ReplayArgs {
    /// Trace CSV produced by `simulate --trace` or `scenario --trace-dir`.
    #[arg(long)]
    trace: PathBuf,
    #[arg(long)]
    layout: Option<PathBuf>,
    #[arg(long)]
    auth: bool,
}

#[derive(Args)]
struct ProveArgs {
    /// Listen address, e.g. 127.0.0.1:7450.
    #[arg(long)]
    listen: String,
    /// 64-byte key file (or VRASED_KEY_FILE).
    #[arg(long)]
    key: Option<PathBuf>,
    /// Attested-region contents.
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    layout: Option<PathBuf>,
    #[arg(long)]
    auth: bool,
    /// Serve a single connection, then exit.
    #[arg(long)]
    once: bool,
}

#[derive(Args)]
struct VerifyArgs {
    /// Prover address, e.g. 127.0.0.1:7450.
    #[arg(long)]
    connect: String,
    #[arg(long)]
    key: Option<PathBuf>,
    /// Known-good image to verify against.
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    layout: Option<PathBuf>,
    #[arg(long)]
    auth: bool,
    /// Attest only this window, `min:max` in hex or decimal (needs --auth).
    #[arg(long)]
    region: Option<String>,
    /// Seed the challenge source (defaults to OS entropy).
    #[arg(long)]
    seed: Option<u64>,
    /// Persist the challenge counter across runs (auth mode).
    #[arg(long)]
    counter_file: Option<PathBuf>,
    /// Test flag: after the round, reissue the consumed counter value and
    /// expect the prover to reject it as stale.
    #[arg(long)]
    replay_test: bool,
}

#[derive(Args)]
struct KeygenArgs {
    /// Output path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

fn parse_region(spec: &str) -> Result<(u16, u16), String> {
    let (lo, hi) = spec
        .split_once(':')
        .ok_or_else(|| format!("bad region `{spec}`, expected min:max"))?;
    let num = |s: &str| -> Result<u16, String> {
        let s = s.trim();
        let v = if let Some(h) = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
            u32::from_str_radix(h, 16).map_err(|_| format!("bad number `{s}`"))?
        } else {
            s.parse::<u32>().map_err(|_| format!("bad number `{s}`"))?
        };
        if v > 0xFFFF {
            return Err(format!("`{s}` exceeds 16 bits"));
        }
        Ok(v as u16)
    };
    let lo = num(lo)?;
    let hi = num(hi)?;
    if lo > hi {
        return Err(format!("empty region `{spec}`"));
    }
    Ok((lo, hi))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // Help and version requests are not usage errors.
            use clap::error::ErrorKind;
            let _ = e.print();
            return if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                ExitCode::from(0)
            } else {
                ExitCode::from(EXIT_USAGE as u8)
            };
        }
    };
    let code = match cli.command {
        Command::Check(a) => cmd_check(&CheckOpts {
            layout: a.layout,
            auth: a.auth,
            specs: a.specs,
            mutate: a.mutate,
            out_dir: a.out_dir,
        }),
        Command::Scenario(a) => {
            cmd_scenario(a.name.as_deref(), a.all, a.seed, a.trace_dir.as_deref())
        }
        Command::Simulate(a) => cmd_simulate(&SimulateOpts {
            program: a.program,
            layout: a.layout,
            auth: a.auth,
            key: a.key,
            image: a.image,
            max_cycles: a.max_cycles,
            disable_monitors: a.disable_monitors,
            irq_at: a.irq_at,
            dma_at: a.dma_at,
            trace_out: a.trace,
            seed: a.seed,
        }),
        Command::Replay(a) => cmd_replay(&a.trace, a.layout.as_deref(), a.auth),
        Command::Prove(a) => cmd_prove(&ProveOpts {
            listen: a.listen,
            key: a.key,
            image: a.image,
            layout: a.layout,
            auth: a.auth,
            once: a.once,
        }),
        Command::Verify(a) => {
            let region = match a.region.as_deref().map(parse_region) {
                Some(Ok(r)) => Some(r),
                Some(Err(e)) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_USAGE as u8);
                }
                None => None,
            };
            cmd_verify(&VerifyOpts {
                connect: a.connect,
                key: a.key,
                image: a.image,
                layout: a.layout,
                auth: a.auth,
                region,
                seed: a.seed,
                counter_file: a.counter_file,
                replay_test: a.replay_test,
            })
        }
        Command::Keygen(a) => cmd_keygen(&a.out, a.seed),
    };
    ExitCode::from(code as u8)
}
