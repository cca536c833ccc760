use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use qudit_qkd::analysis::{self, ErrorMatrix};
use qudit_qkd::distill::{self, DistillParams, DEFAULT_K_MAX};
use qudit_qkd::netrun::{self, Conn, Role, RoleConfig};
use qudit_qkd::protocol::{self, EcMode, SessionStatus};
use qudit_qkd::threshold;
use qudit_qkd::verify;
use qudit_qkd::{ChannelModel, Field, SessionConfig};

#[derive(Parser, Debug)]
#[command(name = "qudit-qkd", version, about = "Qudit prepare-and-measure QKD workbench")]
struct Cli {
    /// TOML file with default values; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for the parallel parts (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a Monte Carlo session and estimate e_b and e_c.
    Simulate(SimulateArgs),
    /// Exact observables and error matrix of a channel.
    Analyze(AnalyzeArgs),
    /// Two-way distillation: parameter selection and simulation.
    Distill(DistillArgs),
    /// Scan the tolerable error-rate region.
    Threshold(ThresholdArgs),
    /// Exhaustive and randomized identity checks.
    Verify(VerifyArgs),
    /// Run one party of a networked session.
    Netrun(NetrunArgs),
}

#[derive(Args, Debug, Default)]
struct SessionArgs {
    #[arg(long)]
    n: Option<u32>,
    #[arg(long)]
    rounds: Option<u64>,
    /// Channel spec, e.g. z_flip:0.3 or custom:[(0.9,a=0,f=0x0),(0.1,a=1,f=0x6)].
    #[arg(long)]
    channel: Option<String>,
    #[arg(long)]
    sample_fraction: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    ec_mode: Option<EcModeArg>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum EcModeArg {
    InPair,
    Announcement,
}

impl From<EcModeArg> for EcMode {
    fn from(m: EcModeArg) -> Self {
        match m {
            EcModeArg::InPair => EcMode::InPair,
            EcModeArg::Announcement => EcMode::Announcement,
        }
    }
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    session: SessionArgs,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Per-round CSV log.
    #[arg(long)]
    log_csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[arg(long)]
    n: Option<u32>,
    #[arg(long)]
    channel: Option<String>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
struct DistillParamArgs {
    #[arg(long)]
    k: Option<u32>,
    /// Block size (odd) or "auto".
    #[arg(long)]
    r: Option<String>,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    css_target: Option<f64>,
    #[arg(long)]
    z_budget: Option<f64>,
}

#[derive(Args, Debug)]
struct DistillArgs {
    /// Error matrix p_I,p_x,p_y,p_z.
    #[arg(long, conflicts_with = "channel")]
    matrix: Option<String>,
    #[arg(long)]
    channel: Option<String>,
    #[arg(long)]
    n: Option<u32>,
    #[command(flatten)]
    params: DistillParamArgs,
    /// Pick the smallest feasible k and its block size.
    #[arg(long)]
    auto_params: bool,
    #[arg(long)]
    k_max: Option<u32>,
    /// Also run the procedure on this many i.i.d. labeled positions.
    #[arg(long)]
    simulate: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ThresholdArgs {
    #[arg(long)]
    n: Option<u32>,
    #[arg(long)]
    grid: Option<u32>,
    /// Grid points for e_11 on each (e_b, e_c) cell.
    #[arg(long)]
    e11_grid: Option<u32>,
    /// Per-row frontier CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// Degrees to check (default 2, 3 and 4).
    #[arg(long)]
    n: Vec<u32>,
    /// Random tuples where the space is not enumerated.
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum RoleArg {
    Alice,
    Bob,
    Eve,
}

#[derive(Args, Debug)]
struct NetrunArgs {
    #[arg(long, value_enum)]
    role: RoleArg,
    /// Address to accept the (upstream) peer on.
    #[arg(long)]
    listen: Option<String>,
    /// Alice's address (Bob or Eve connecting upstream).
    #[arg(long)]
    connect_alice: Option<String>,
    /// Bob's address, or the middlebox's when Alice sits behind one.
    #[arg(long)]
    connect_bob: Option<String>,
    #[command(flatten)]
    session: SessionArgs,
    #[command(flatten)]
    params: DistillParamArgs,
    /// JSON report path (default stdout).
    #[arg(long)]
    report: Option<PathBuf>,
    /// Middlebox only: record the action of every round.
    #[arg(long)]
    log_actions: bool,
    /// Seconds to wait for a peer frame or connection.
    #[arg(long, default_value_t = 120)]
    timeout: u64,
}

/// Values a config file may set. Unknown keys are rejected.
#[derive(Debug, Default, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    n: Option<u32>,
    rounds: Option<u64>,
    channel: Option<String>,
    seed: Option<u64>,
    sample_fraction: Option<f64>,
    ec_mode: Option<EcMode>,
    k: Option<u32>,
    r: Option<BlockSize>,
    k_max: Option<u32>,
    margin: Option<f64>,
    css_target: Option<f64>,
    z_budget: Option<f64>,
    grid: Option<u32>,
    e11_grid: Option<u32>,
    threads: Option<usize>,
    output: Option<PathBuf>,
    csv: Option<PathBuf>,
    log_csv: Option<PathBuf>,
    report: Option<PathBuf>,
    simulate: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(untagged)]
enum BlockSize {
    Auto,
    Fixed(u64),
}

impl<'de> Deserialize<'de> for BlockSize {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(r) => Ok(BlockSize::Fixed(r)),
            Raw::Text(t) => parse_block_size(&t).map_err(serde::de::Error::custom),
        }
    }
}

fn parse_block_size(text: &str) -> Result<BlockSize> {
    if text.eq_ignore_ascii_case("auto") {
        return Ok(BlockSize::Auto);
    }
    text.parse::<u64>()
        .map(BlockSize::Fixed)
        .map_err(|_| anyhow!("r: expected an odd integer or \"auto\", got {text:?}"))
}

fn load_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("config {}", path.display()))
}

fn session_config(args: &SessionArgs, file: &FileConfig) -> Result<SessionConfig> {
    let d = SessionConfig::default();
    let cfg = SessionConfig {
        n: args.n.or(file.n).unwrap_or(d.n),
        rounds: args.rounds.or(file.rounds).unwrap_or(d.rounds),
        channel: args.channel.clone().or_else(|| file.channel.clone()).unwrap_or(d.channel),
        sample_fraction: args.sample_fraction.or(file.sample_fraction).unwrap_or(d.sample_fraction),
        seed: args.seed.or(file.seed).unwrap_or(d.seed),
        ec_mode: args.ec_mode.map(EcMode::from).or(file.ec_mode).unwrap_or(d.ec_mode),
    };
    cfg.validate().map_err(|e| anyhow!("invalid config: {e}"))?;
    Ok(cfg)
}

/// Returns the parameters and whether r was "auto".
fn distill_params(args: &DistillParamArgs, file: &FileConfig) -> Result<(DistillParams, bool)> {
    let d = DistillParams::default();
    let r = match &args.r {
        Some(t) => Some(parse_block_size(t)?),
        None => file.r,
    };
    let (r, auto) = match r {
        Some(BlockSize::Fixed(r)) => (r, false),
        Some(BlockSize::Auto) => (d.r, true),
        None => (d.r, false),
    };
    let p = DistillParams {
        k: args.k.or(file.k).unwrap_or(d.k),
        r,
        css_target: args.css_target.or(file.css_target).unwrap_or(d.css_target),
        z_budget: args.z_budget.or(file.z_budget).unwrap_or(d.z_budget),
        margin: args.margin.or(file.margin).unwrap_or(d.margin),
    };
    p.validate().map_err(|e| anyhow!("invalid config: {e}"))?;
    Ok((p, auto))
}

fn emit(value: &serde_json::Value, path: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match path {
        Some(p) => std::fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            match writeln!(out, "{text}").and_then(|_| out.flush()) {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
                _ => Ok(()),
            }
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn fmt_estimate(e: &Option<protocol::Estimate>) -> String {
    match e {
        Some(e) => format!("{:.6} [{:.6}, {:.6}] ({}/{})", e.value, e.lower, e.upper, e.successes, e.trials),
        None => "undefined".into(),
    }
}

fn cmd_simulate(args: &SimulateArgs, file: &FileConfig) -> Result<u8> {
    let cfg = session_config(&args.session, file)?;
    let out = protocol::run_session(&cfg)?;
    if let Some(path) = args.log_csv.as_ref().or(file.log_csv.as_ref()) {
        let mut w = create(path)?;
        protocol::write_log_csv(&out.log, &mut w)?;
        w.flush()?;
    }
    let s = &out.stats;
    let output = args.output.as_ref().or(file.output.as_ref());
    if output.is_some() {
        println!("e_b: {}", fmt_estimate(&s.e_b));
        println!("e_c: {}", fmt_estimate(&s.e_c));
        println!("verdict: {}", verdict_word(s.status));
    } else {
        eprintln!("verdict: {}", verdict_word(s.status));
    }
    emit(&json!({ "config": cfg, "stats": s }), output.map(|p| p.as_path()))?;
    Ok(status_code(s.status))
}

fn verdict_word(s: SessionStatus) -> &'static str {
    match s {
        SessionStatus::Pass => "pass",
        SessionStatus::ConditionFailed => "fail",
        SessionStatus::InsufficientSift => "fail (no sifted sample)",
        SessionStatus::UndefinedEc => "fail (e_c undefined)",
    }
}

fn status_code(s: SessionStatus) -> u8 {
    if s == SessionStatus::Pass {
        0
    } else {
        2
    }
}

fn model_for(n: u32, channel: &str) -> Result<ChannelModel> {
    let field = Field::new(n).map_err(|e| anyhow!("n: {e}"))?;
    ChannelModel::parse(&field, channel).map_err(|e| anyhow!("channel: {e}"))
}

fn cmd_analyze(args: &AnalyzeArgs, file: &FileConfig) -> Result<u8> {
    let n = args.n.or(file.n).unwrap_or(2);
    let channel = args.channel.clone().or_else(|| file.channel.clone()).unwrap_or_else(|| "identity".into());
    let report = analysis::analyze(&model_for(n, &channel)?)?;
    let output = args.output.as_ref().or(file.output.as_ref());
    emit(
        &json!({ "config": { "n": n, "channel": channel }, "analysis": report }),
        output.map(|p| p.as_path()),
    )?;
    Ok(0)
}

fn parse_matrix(text: &str) -> Result<ErrorMatrix> {
    let v: Vec<f64> = text
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| anyhow!("matrix: {e}"))?;
    let [p_i, p_x, p_y, p_z] = v[..] else {
        bail!("matrix: expected four comma-separated probabilities, got {}", v.len());
    };
    let m = ErrorMatrix::new(p_i, p_x, p_y, p_z);
    if !m.is_valid(1e-9) {
        bail!("matrix: entries must be non-negative and sum to 1");
    }
    Ok(m)
}

fn cmd_distill(args: &DistillArgs, file: &FileConfig) -> Result<u8> {
    let (params, r_auto) = distill_params(&args.params, file)?;
    let auto = args.auto_params || r_auto;
    let k_max = args.k_max.or(file.k_max).unwrap_or(DEFAULT_K_MAX);
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let channel = args.channel.clone().or_else(|| file.channel.clone());
    let n = args.n.or(file.n).unwrap_or(2);
    let (matrix, analysis) = match (&args.matrix, channel) {
        (Some(text), _) => (parse_matrix(text)?, None),
        (None, Some(ch)) => {
            let report = analysis::analyze(&model_for(n, &ch)?)?;
            let m = report
                .error_matrix
                .ok_or_else(|| anyhow!("channel: {ch} has no error matrix (need e_c > 0 and a unitary mixture)"))?;
            (m, Some(report))
        }
        (None, None) => bail!("distill needs --matrix or --channel"),
    };
    let simulate = args.simulate.or(file.simulate).map(|len| (len, seed));
    let report = distill::distill_report(&matrix, &params, auto, k_max, simulate)?;
    let feasible = report.selection.feasible;
    let output = args.output.as_ref().or(file.output.as_ref());
    let config = json!({
        "matrix": matrix,
        "channel": analysis.as_ref().map(|a| a.channel.clone()),
        "n": analysis.as_ref().map(|a| a.n),
        "params": params,
        "auto_params": auto,
        "k_max": k_max,
        "seed": seed,
        "simulate": simulate.map(|s| s.0),
    });
    emit(
        &json!({ "config": config, "analysis": analysis, "report": report }),
        output.map(|p| p.as_path()),
    )?;
    Ok(if feasible { 0 } else { 2 })
}

fn cmd_threshold(args: &ThresholdArgs, file: &FileConfig) -> Result<u8> {
    let n = args.n.or(file.n).unwrap_or(2);
    let grid = args.grid.or(file.grid).unwrap_or(2000);
    let e11 = args.e11_grid.or(file.e11_grid).unwrap_or(threshold::DEFAULT_E11_GRID);
    let scan = threshold::e_max_scan_with(n, grid, e11)?;
    if let Some(path) = args.csv.as_ref().or(file.csv.as_ref()) {
        let mut w = create(path)?;
        threshold::write_csv(&scan, &mut w)?;
        w.flush()?;
    }
    let summary = threshold::ScanSummary::from(&scan);
    eprintln!("e_max = {} (refined {})", scan.e_max, scan.e_max_refined);
    let output = args.output.as_ref().or(file.output.as_ref());
    emit(
        &json!({ "config": { "n": n, "grid": grid, "e11_grid": e11 }, "threshold": summary }),
        output.map(|p| p.as_path()),
    )?;
    Ok(0)
}

fn cmd_verify(args: &VerifyArgs, file: &FileConfig) -> Result<u8> {
    let degrees = if !args.n.is_empty() {
        args.n.clone()
    } else if let Some(n) = file.n {
        vec![n]
    } else {
        vec![2, 3, 4]
    };
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let mut ok = true;
    let mut results = Vec::new();
    for n in degrees {
        let field = Field::new(n).map_err(|e| anyhow!("n: {e}"))?;
        let conj = if n <= 4 {
            verify::conjugation_exhaustive(&field)
        } else {
            verify::conjugation_random(&field, args.samples, seed)
        };
        let random = verify::conjugation_random(&field, args.samples, seed);
        let axioms = verify::field_axioms(&field, args.samples, seed);
        let tag = |good: bool| if good { "ok" } else { "FAILED" };
        println!(
            "n = {n} conjugation: {}/{} {}",
            conj.checked - conj.mismatches,
            conj.checked,
            tag(conj.ok())
        );
        println!(
            "n = {n} conjugation (random): {}/{} {}",
            random.checked - random.mismatches,
            random.checked,
            tag(random.ok())
        );
        println!(
            "n = {n} field axioms: {}/{} {}",
            axioms.checked - axioms.failures,
            axioms.checked,
            tag(axioms.failures == 0)
        );
        ok &= conj.ok() && random.ok() && axioms.failures == 0;
        results.push(json!({ "n": n, "conjugation": conj, "conjugation_random": random, "field_axioms": axioms }));
    }
    if let Some(p) = args.output.as_ref().or(file.output.as_ref()) {
        emit(&json!({ "config": { "samples": args.samples, "seed": seed }, "results": results }), Some(p))?;
    }
    Ok(if ok { 0 } else { 1 })
}

fn open_peer(listen: Option<&String>, connect: Option<&String>, wait: Duration, what: &str) -> Result<Conn> {
    let conn = match (listen, connect) {
        (Some(addr), None) => {
            let l = TcpListener::bind(addr).with_context(|| format!("binding {addr}"))?;
            netrun::accept_one(&l)?
        }
        (None, Some(addr)) => netrun::connect_retry(addr, wait).with_context(|| format!("connecting to {addr}"))?,
        (Some(_), Some(_)) => bail!("{what}: give either --listen or a --connect address, not both"),
        (None, None) => bail!("{what}: needs --listen or a --connect address"),
    };
    Ok(conn.with_timeout(wait))
}

fn cmd_netrun(args: &NetrunArgs, file: &FileConfig) -> Result<u8> {
    let session = session_config(&args.session, file)?;
    let (distill, auto) = distill_params(&args.params, file)?;
    if auto {
        bail!("r: netrun needs a fixed block size agreed by both parties");
    }
    let wait = Duration::from_secs(args.timeout);
    let role = match args.role {
        RoleArg::Alice => Role::Alice,
        RoleArg::Bob => Role::Bob,
        RoleArg::Eve => Role::Eve,
    };
    let config = RoleConfig { role, session, distill };
    config.validate().map_err(|e| anyhow!("invalid config: {e}"))?;
    let report_path = args.report.as_ref().or(file.report.as_ref());
    let (value, code) = match role {
        Role::Alice => {
            let conn = open_peer(args.listen.as_ref(), args.connect_bob.as_ref(), wait, "alice")?;
            let r = netrun::run_alice(&config, conn);
            let code = r.exit_code();
            (serde_json::to_value(&r)?, code)
        }
        Role::Bob => {
            let conn = open_peer(args.listen.as_ref(), args.connect_alice.as_ref(), wait, "bob")?;
            let r = netrun::run_bob(&config, conn);
            let code = r.exit_code();
            (serde_json::to_value(&r)?, code)
        }
        Role::Eve => {
            let Some(bob) = args.connect_bob.as_ref() else {
                bail!("eve: needs --connect-bob");
            };
            let up = open_peer(args.listen.as_ref(), args.connect_alice.as_ref(), wait, "eve")?;
            let down = netrun::connect_retry(bob, wait).with_context(|| format!("connecting to {bob}"))?;
            let r = netrun::run_eve(&config, up, down.with_timeout(wait), args.log_actions);
            let code = if r.error.is_some() { 1 } else { 0 };
            (serde_json::to_value(&r)?, code)
        }
    };
    emit(&json!({ "config": config, "report": value }), report_path.map(|p| p.as_path()))?;
    Ok(code as u8)
}

fn run(cli: &Cli) -> Result<u8> {
    let file = load_config(cli.config.as_deref())?;
    if let Some(t) = cli.threads.or(file.threads) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a, &file),
        Command::Analyze(a) => cmd_analyze(a, &file),
        Command::Distill(a) => cmd_distill(a, &file),
        Command::Threshold(a) => cmd_threshold(a, &file),
        Command::Verify(a) => cmd_verify(a, &file),
        Command::Netrun(a) => cmd_netrun(a, &file),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
