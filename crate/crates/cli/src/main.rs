//! `qforge` command-line front end.
//!
//! Exit codes: 0 success, 2 numerical failure, 3 invalid input.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use qforge::factor::{design, expand_plan, FactorPlan, TargetState};
use qforge::fock::DensityMatrix;
use qforge::herald::{build_herald_circuit, heralded_state_analytic, simulate_herald, DetectorKind, HeraldOutcome};
use qforge::presets::{Preset, PresetParams, CATALOG};
use qforge::sample::{sample_events, sweep_q, write_sweep_csv, SampleConfig};
use qforge::tomo::{
    apply_loss, mle_reconstruct, qutrit_diagnostics, read_samples_csv, sample_homodyne, write_samples_csv, MleConfig,
    PhaseStrategy,
};
use qforge::Complex64;
use serde::Serialize;
use serde_json::{json, Value};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(name = "qforge", version, about = "Design and verify heralded two-mode qudit states")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Factor a target state into a beam-splitter plan.
    Design(DesignArgs),
    /// Compare the closed-form heralded state with the full circuit simulation.
    Verify(VerifyArgs),
    /// Success probability over a grid of squeezing parameters.
    Sweep(SweepArgs),
    /// Monte Carlo heralding statistics at one squeezing parameter.
    Sample(SampleArgs),
    /// Loss, homodyne sampling and maximum-likelihood reconstruction.
    Tomo(TomoArgs),
    /// List the named target states.
    Presets,
}

#[derive(Args, Clone)]
struct PresetArgs {
    /// Named target (see `qforge presets`).
    #[arg(long)]
    preset: Option<String>,
    /// Photon number for `noon` and `basis`.
    #[arg(long = "N", value_name = "N")]
    n: Option<usize>,
    /// Photons in mode 2 for `basis`.
    #[arg(long)]
    k: Option<usize>,
    /// Complex amplitudes such as `0.6`, `0.8i` or `0.3-0.4i`.
    #[arg(long, allow_hyphen_values = true)]
    alpha: Option<Complex64>,
    #[arg(long, allow_hyphen_values = true)]
    beta: Option<Complex64>,
    #[arg(long, allow_hyphen_values = true)]
    gamma: Option<Complex64>,
}

impl PresetArgs {
    fn preset(&self) -> Result<Option<Preset>, CliError> {
        let Some(name) = &self.preset else { return Ok(None) };
        let params = PresetParams { n: self.n, k: self.k, alpha: self.alpha, beta: self.beta, gamma: self.gamma };
        Preset::parse(name, &params).map(Some).map_err(CliError::Input)
    }
}

#[derive(Args)]
struct DesignArgs {
    /// Target state JSON (`{"n": .., "coeffs": [[re, im], ..]}`).
    #[arg(long, conflicts_with = "preset")]
    target: Option<PathBuf>,
    #[command(flatten)]
    preset: PresetArgs,
    /// Rescale the target to unit norm instead of rejecting it.
    #[arg(long)]
    normalize: bool,
    /// Plan output path (stdout when absent).
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct PlanSource {
    /// Plan JSON written by `qforge design`, or a bare plan.
    #[arg(long, conflicts_with = "preset")]
    plan: Option<PathBuf>,
    #[command(flatten)]
    preset: PresetArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum Detector {
    Pnr,
    Threshold,
}

impl From<Detector> for DetectorKind {
    fn from(d: Detector) -> Self {
        match d {
            Detector::Pnr => DetectorKind::Pnr,
            Detector::Threshold => DetectorKind::Threshold,
        }
    }
}

#[derive(Args)]
struct HeraldArgs {
    /// Squeezing parameter `q = tanh r`.
    #[arg(long, default_value_t = 0.1)]
    q: f64,
    #[arg(long, value_enum, default_value = "pnr")]
    detector: Detector,
    /// Photon cutoff per source (default: photon number + 3).
    #[arg(long)]
    cutoff: Option<usize>,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    source: PlanSource,
    #[command(flatten)]
    herald: HeraldArgs,
    /// Largest tolerated disagreement between closed form and simulation (PNR only).
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    source: PlanSource,
    #[arg(long, value_enum, default_value = "pnr")]
    detector: Detector,
    #[arg(long)]
    cutoff: Option<usize>,
    #[arg(long, default_value_t = 0.01)]
    q_min: f64,
    #[arg(long, default_value_t = 0.3)]
    q_max: f64,
    #[arg(long, default_value_t = 30)]
    points: usize,
    /// Monte Carlo shots per point; 0 writes the analytic curve only.
    #[arg(long, default_value_t = 0)]
    shots: u64,
    #[arg(long, env = "QFORGE_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    source: PlanSource,
    #[command(flatten)]
    herald: HeraldArgs,
    #[arg(long, default_value_t = 1_000_000)]
    shots: u64,
    #[arg(long, env = "QFORGE_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct TomoArgs {
    /// Quadrature samples CSV to reconstruct from instead of simulating.
    #[arg(long, conflicts_with_all = ["preset", "density"])]
    samples: Option<PathBuf>,
    /// Two-mode density matrix JSON to simulate.
    #[arg(long, conflicts_with = "preset")]
    density: Option<PathBuf>,
    #[command(flatten)]
    preset: PresetArgs,
    /// Transmissivity applied to both modes before sampling.
    #[arg(long, default_value_t = 1.0)]
    eta: f64,
    #[arg(long, default_value_t = 100_000)]
    shots: usize,
    #[arg(long, env = "QFORGE_SEED", default_value_t = 0)]
    seed: u64,
    /// Local-oscillator phases: `uniform` or `grid:STEPS`.
    #[arg(long, default_value = "uniform", value_parser = parse_phase)]
    phases: PhaseStrategy,
    /// Largest total photon number in the reconstruction.
    #[arg(long, default_value_t = 2)]
    cutoff: usize,
    #[arg(long, default_value_t = 2000)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long, default_value_t = 0.05)]
    bin_width: f64,
    /// Also write the simulated samples here.
    #[arg(long)]
    samples_out: Option<PathBuf>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

fn parse_phase(s: &str) -> Result<PhaseStrategy, String> {
    match s.split_once(':') {
        None if s == "uniform" => Ok(PhaseStrategy::Uniform),
        Some(("grid", steps)) => match steps.parse() {
            Ok(steps) if steps > 0 => Ok(PhaseStrategy::Grid { steps }),
            _ => Err(format!("invalid grid size {steps:?}")),
        },
        _ => Err(format!("expected `uniform` or `grid:STEPS`, got {s:?}")),
    }
}

#[derive(Debug)]
enum CliError {
    Input(String),
    Numerical(String),
}

impl From<qforge::Error> for CliError {
    fn from(e: qforge::Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Input(e.to_string())
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}

fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| io_err(path, e))
}

/// Writes `value` as pretty JSON to `path`, or stdout when absent.
fn emit_json(value: &Value, path: Option<&Path>) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("JSON values serialize") + "\n";
    write_bytes(text.as_bytes(), path)
}

fn provenance(command: &str, config: Value, seed: Option<u64>) -> Value {
    json!({ "tool": "qforge", "version": VERSION, "command": command, "seed": seed, "config": config })
}

fn check_q(q: f64) -> CliResult<()> {
    if q > 0.0 && q < 1.0 {
        Ok(())
    } else {
        Err(CliError::Input(format!("q = {q} must lie in (0, 1)")))
    }
}

fn load_plan(source: &PlanSource) -> CliResult<(FactorPlan, Value)> {
    if let Some(path) = &source.plan {
        let text = read_text(path)?;
        let value: Value = serde_json::from_str(&text).map_err(|e| io_err(path, e))?;
        let plan_value = value.get("plan").cloned().unwrap_or(value);
        let plan = FactorPlan::from_json(&plan_value.to_string()).map_err(|e| io_err(path, e))?;
        return Ok((plan, json!({ "plan_file": path, "plan": plan_value })));
    }
    match source.preset.preset()? {
        Some(p) => Ok((p.plan()?, serde_json::to_value(&p).expect("preset serializes"))),
        None => Err(CliError::Input("give --plan FILE or --preset NAME".into())),
    }
}

fn factor_table(plan: &FactorPlan) -> String {
    let mut out = String::from("  k          t                      r              |t|^2    phase(deg)\n");
    for (k, f) in plan.factors().iter().enumerate() {
        out += &format!(
            "{:>3}  {:>+9.6}{:>+9.6}i  {:>+9.6}{:>+9.6}i  {:>8.6}  {:>9.3}\n",
            k + 1,
            f.t.re + 0.0,
            f.t.im + 0.0,
            f.r.re + 0.0,
            f.r.im + 0.0,
            f.transmissivity(),
            f.relative_phase().to_degrees() + 0.0
        );
    }
    out
}

fn cmd_design(args: &DesignArgs) -> CliResult<()> {
    let (target, config) = if let Some(path) = &args.target {
        let text = read_text(path)?;
        let target = if args.normalize {
            let raw: Value = serde_json::from_str(&text).map_err(|e| io_err(path, e))?;
            let coeffs: Vec<[f64; 2]> = serde_json::from_value(raw["coeffs"].clone()).map_err(|e| io_err(path, e))?;
            TargetState::normalized(coeffs.iter().map(|c| Complex64::new(c[0], c[1])).collect())?
        } else {
            TargetState::from_json(&text).map_err(|e| io_err(path, e))?
        };
        (target, json!({ "target_file": path, "normalize": args.normalize }))
    } else {
        match args.preset.preset()? {
            Some(p) => (p.target()?, serde_json::to_value(&p).expect("preset serializes")),
            None => return Err(CliError::Input("give --target FILE or --preset NAME".into())),
        }
    };
    let plan = match args.preset.preset()? {
        Some(p) => p.plan()?,
        None => design(&target)?,
    };
    let fidelity = expand_plan(&plan).fidelity(&target)?;
    let mut doc = provenance("design", config, None);
    doc["target"] = serde_json::from_str(&target.to_json()).expect("valid JSON");
    doc["plan"] = serde_json::from_str(&plan.to_json()).expect("valid JSON");
    doc["roundtrip_fidelity"] = json!(fidelity);
    let table = factor_table(&plan);
    emit_json(&doc, args.output.as_deref())?;
    if args.output.is_some() {
        write_bytes(table.as_bytes(), None)
    } else {
        eprint!("{table}");
        Ok(())
    }
}

fn outcome_json(o: &HeraldOutcome) -> Value {
    json!({
        "success_probability": o.success_probability,
        "purity": o.purity,
        "fidelity_to_target": o.fidelity_to_target,
        "truncated": o.truncated,
        "photon_number_distribution": o.density_matrix().photon_number_distribution(),
    })
}

fn cmd_verify(args: &VerifyArgs) -> CliResult<()> {
    let (plan, plan_cfg) = load_plan(&args.source)?;
    let h = &args.herald;
    check_q(h.q)?;
    if !(args.tol >= 0.0) {
        return Err(CliError::Input(format!("tolerance {} must be non-negative", args.tol)));
    }
    let cutoff = h.cutoff.unwrap_or(plan.n() + 3);
    let analytic = heralded_state_analytic(&plan, h.q)?;
    let spec = build_herald_circuit(&plan, h.q, h.detector.into(), cutoff)?;
    let sim = simulate_herald(&spec)?;
    if sim.truncated {
        eprintln!("warning: truncated source tail above tolerance; raise --cutoff");
    }
    let state_fidelity = sim.density_matrix().fidelity_pure(analytic.pure_state().expect("closed form is pure"))?;
    let prob_rel = (sim.success_probability / analytic.success_probability - 1.0).abs();
    let compared = matches!(h.detector, Detector::Pnr);
    let disagreement = (1.0 - state_fidelity).max(prob_rel);
    let config = json!({
        "source": plan_cfg, "q": h.q, "detector": DetectorKind::from(h.detector), "cutoff": cutoff, "tol": args.tol,
    });
    let mut doc = provenance("verify", config, None);
    doc["analytic"] = outcome_json(&analytic);
    doc["simulated"] = outcome_json(&sim);
    doc["agreement"] = json!({
        "state_fidelity": state_fidelity,
        "probability_relative_difference": prob_rel,
        "tolerance": args.tol,
        "checked": compared,
    });
    emit_json(&doc, args.output.as_deref())?;
    if compared && !(disagreement <= args.tol) {
        return Err(CliError::Numerical(format!(
            "closed form and simulation disagree by {disagreement:e} (tolerance {:e})",
            args.tol
        )));
    }
    Ok(())
}

fn q_grid(min: f64, max: f64, points: usize) -> CliResult<Vec<f64>> {
    check_q(min)?;
    check_q(max)?;
    if points == 0 || min > max || (points == 1 && min != max) {
        return Err(CliError::Input(format!("cannot build {points} points on [{min}, {max}]")));
    }
    Ok((0..points)
        .map(|i| if points == 1 { min } else { min + (max - min) * i as f64 / (points - 1) as f64 })
        .collect())
}

fn comment_lines(doc: &Value) -> Vec<String> {
    vec![serde_json::to_string(doc).expect("JSON values serialize")]
}

fn cmd_sweep(args: &SweepArgs) -> CliResult<()> {
    let (plan, plan_cfg) = load_plan(&args.source)?;
    let grid = q_grid(args.q_min, args.q_max, args.points)?;
    let cutoff = args.cutoff.unwrap_or(plan.n() + 3);
    let detector: DetectorKind = args.detector.into();
    let config = json!({
        "source": plan_cfg, "detector": detector, "cutoff": cutoff,
        "q_min": args.q_min, "q_max": args.q_max, "points": args.points, "shots": args.shots,
    });
    let doc = provenance("sweep", config, (args.shots > 0).then_some(args.seed));
    let mut buf = Vec::new();
    for line in comment_lines(&doc) {
        writeln!(buf, "# {line}").expect("writing to memory");
    }
    if args.shots > 0 {
        let cfg = SampleConfig { shots: args.shots, seed: args.seed, q: grid[0], detector, cutoff };
        write_sweep_csv(&sweep_q(&plan, &grid, &cfg)?, &mut buf)?;
    } else {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(["q", "analytic"]).map_err(csv_err)?;
        for &q in &grid {
            let p = match detector {
                DetectorKind::Pnr => heralded_state_analytic(&plan, q)?.success_probability,
                DetectorKind::Threshold => {
                    simulate_herald(&build_herald_circuit(&plan, q, detector, cutoff)?)?.success_probability
                }
            };
            w.write_record([q.to_string(), p.to_string()]).map_err(csv_err)?;
        }
        w.flush().map_err(|e| CliError::Input(e.to_string()))?;
    }
    write_bytes(&buf, args.output.as_deref())
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Input(e.to_string())
}

fn write_bytes(bytes: &[u8], path: Option<&Path>) -> CliResult<()> {
    match path {
        Some(p) => std::fs::write(p, bytes).map_err(|e| io_err(p, e)),
        None => match std::io::stdout().lock().write_all(bytes) {
            Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::Input(e.to_string())),
            _ => Ok(()),
        },
    }
}

fn cmd_sample(args: &SampleArgs) -> CliResult<()> {
    let (plan, plan_cfg) = load_plan(&args.source)?;
    let h = &args.herald;
    check_q(h.q)?;
    let cutoff = h.cutoff.unwrap_or(plan.n() + 3);
    let cfg = SampleConfig { shots: args.shots, seed: args.seed, q: h.q, detector: h.detector.into(), cutoff };
    let report = sample_events(&plan, &cfg)?;
    let config = json!({ "source": plan_cfg, "q": h.q, "detector": cfg.detector, "cutoff": cutoff, "shots": args.shots });
    let mut doc = provenance("sample", config, Some(args.seed));
    doc["report"] = to_value(&report);
    emit_json(&doc, args.output.as_deref())
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report serializes")
}

fn cmd_tomo(args: &TomoArgs) -> CliResult<()> {
    let mut config = json!({
        "cutoff": args.cutoff, "max_iter": args.max_iter, "tol": args.tol, "bin_width": args.bin_width,
    });
    let (samples, truth, seed) = if let Some(path) = &args.samples {
        let file = File::open(path).map_err(|e| io_err(path, e))?;
        config["samples_file"] = json!(path);
        (read_samples_csv(BufReader::new(file)).map_err(|e| io_err(path, e))?, None, None)
    } else {
        let ideal = if let Some(path) = &args.density {
            config["density_file"] = json!(path);
            DensityMatrix::from_json(&read_text(path)?).map_err(|e| io_err(path, e))?
        } else {
            let preset = args.preset.preset()?.unwrap_or(Preset::Qutrit);
            config["preset"] = to_value(&preset);
            DensityMatrix::from_pure(&preset.target()?.to_state_vector())
        };
        let truth = apply_loss(&ideal, args.eta)?;
        config["eta"] = json!(args.eta);
        config["shots"] = json!(args.shots);
        config["phases"] = to_value(&args.phases);
        let samples = sample_homodyne(&truth, args.shots, args.phases, args.seed)?;
        if let Some(path) = &args.samples_out {
            let doc = provenance("tomo", config.clone(), Some(args.seed));
            write_samples_csv(create(path)?, &samples, &comment_lines(&doc)).map_err(|e| io_err(path, e))?;
        }
        (samples, Some(truth), Some(args.seed))
    };
    let mle = MleConfig { cutoff: args.cutoff, max_iter: args.max_iter, tol: args.tol, bin_width: args.bin_width };
    let mut result = mle_reconstruct(&samples, &mle)?;
    let mut doc = provenance("tomo", config, seed);
    doc["samples"] = json!(samples.len());
    if let Some(truth) = &truth {
        let report = result.compare_qutrit(truth)?;
        doc["qutrit"] = to_value(&report);
        doc["truth_photon_number_distribution"] = json!(truth.photon_number_distribution());
        doc["fidelity_to_truth"] = json!(result.rho.fidelity(truth)?);
    } else if args.cutoff >= 2 {
        doc["qutrit"] = to_value(&qutrit_diagnostics(&result.rho, &result.rho)?);
    }
    doc["result"] = to_value(&result);
    emit_json(&doc, args.output.as_deref())
}

fn cmd_presets() {
    let mut out = String::new();
    for (name, what) in CATALOG {
        out += &format!("{name:<14} {what}\n");
    }
    let _ = std::io::stdout().lock().write_all(out.as_bytes());
}

fn run(cli: Cli) -> CliResult<()> {
    match &cli.command {
        Command::Design(a) => cmd_design(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Sample(a) => cmd_sample(a),
        Command::Tomo(a) => cmd_tomo(a),
        Command::Presets => {
            cmd_presets();
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(3) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
        Err(CliError::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(2)
        }
    }
}
