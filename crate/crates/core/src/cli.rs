//! Command-line front end.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 usage or input error, 3 synthesis
//! failure, 4 certification failure, 5 plug-and-play rejection.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::analysis::SmallGainReport;
use crate::bench::{build_plant, extension_block, MassArrayConfig};
use crate::estimator::{simulate, DisturbancePolicy, EstimatorNetwork, InputSchedule, SimulationOptions};
use crate::linalg::spectral_radius;
use crate::model::{PlantGraph, SubsystemId};
use crate::network::{CertifiedNetwork, GainsFile};
use crate::plant_file::{read_graph, write_graph, PlantFile, PlugInFile};
use crate::pnp::{self, Outcome, PlugIn, PnpOptions, PnpTransaction};
use crate::rpi::{verify_invariance, RpiDescriptor};
use crate::synthesis::attenuate::AttenuationNorm;
use crate::synthesis::search::SearchObjective;
use crate::synthesis::{
    certify_local, design_network, local_quantities, DeltaPolicy, DesignOptions, LocalView, StandardDesigner,
};
use crate::zonotope::contains_zonotope;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Subsystem id of the extension block written by `bench generate --extension`.
pub const EXTENSION_ID: SubsystemId = SubsystemId(5);
/// Host block of the extension.
pub const EXTENSION_HOST: SubsystemId = SubsystemId(2);
/// Strength of the extension links relative to the grid springs and dampers.
pub const EXTENSION_LINK_GAIN: f64 = 0.1;

#[derive(Debug, Parser)]
#[command(name = "pnp-dse", version, about = "Plug-and-play distributed state estimators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Design and certify an estimator for every subsystem.
    Synthesize {
        plant: PathBuf,
        #[command(flatten)]
        design: DesignArgs,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Recompute certificates of existing gains.
    Certify {
        plant: PathBuf,
        gains: PathBuf,
        /// Samples for the invariance check of each RPI set.
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Simulate plant and estimators and write a CSV trace.
    Simulate {
        plant: PathBuf,
        gains: PathBuf,
        #[arg(long, default_value_t = 100)]
        horizon: usize,
        /// `zero`, `const:V`, `sin:AMPLITUDE,FREQUENCY,PHASE` or `file:PATH`.
        #[arg(long, default_value = "sin:0.1,1,0")]
        input: String,
        #[arg(long, value_enum, default_value_t = DisturbanceArg::Uniform)]
        disturbance: DisturbanceArg,
        /// Initial estimation error: a random point of each RPI set, or zero.
        #[arg(long, value_enum, default_value_t = InitialArg::Rpi)]
        initial: InitialArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also test `e_i ∈ S_i` at every step.
        #[arg(long)]
        check_rpi: bool,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Add a subsystem and redesign its children.
    PlugIn {
        plant: PathBuf,
        gains: PathBuf,
        subsystem: PathBuf,
        #[command(flatten)]
        design: DesignArgs,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Remove a subsystem; survivors keep their estimators.
    Unplug {
        plant: PathBuf,
        gains: PathBuf,
        id: u32,
        /// Redesign the removed subsystem's children for performance.
        #[arg(long)]
        redesign: bool,
        #[command(flatten)]
        design: DesignArgs,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Benchmark plants.
    Bench {
        #[command(subcommand)]
        command: BenchCommand,
    },
}

#[derive(Debug, Subcommand)]
enum BenchCommand {
    /// Write the mass-spring-damper array as `plant.json`.
    Generate {
        /// Seed of the random masses.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// JSON or TOML file overriding the default array configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also write `extension.json`, a fifth block for plug-in.
        #[arg(long)]
        extension: bool,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum NormArg {
    Fro,
    One,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    Beta,
    BetaAndRate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DisturbanceArg {
    Zero,
    Uniform,
    Vertices,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum InitialArg {
    Rpi,
    Zero,
}

#[derive(Debug, Clone, Args)]
struct DesignArgs {
    #[arg(long, value_enum, default_value_t = NormArg::Fro)]
    norm: NormArg,
    /// Communication flag used for every link without an override (0 or 1).
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(0..=1))]
    delta_default: u8,
    /// Override `δ_ij` for child `i` and parent `j`, as `i,j,v`.
    #[arg(long = "delta", value_parser = parse_delta)]
    deltas: Vec<(u32, u32, bool)>,
    #[arg(long, default_value_t = 500)]
    eval_budget: usize,
    #[arg(long, value_enum, default_value_t = ObjectiveArg::BetaAndRate)]
    objective: ObjectiveArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_delta(s: &str) -> Result<(u32, u32, bool), String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let [i, j, v] = parts.as_slice() else {
        return Err(format!("expected i,j,v, got {s:?}"));
    };
    let id = |t: &str| t.parse::<u32>().map_err(|e| format!("bad subsystem id {t:?}: {e}"));
    let v = match *v {
        "0" => false,
        "1" => true,
        other => return Err(format!("δ must be 0 or 1, got {other:?}")),
    };
    Ok((id(i)?, id(j)?, v))
}

impl DesignArgs {
    fn options(&self) -> DesignOptions {
        let mut opts = DesignOptions {
            norm: match self.norm {
                NormArg::Fro => AttenuationNorm::Frobenius,
                NormArg::One => AttenuationNorm::One,
            },
            deltas: DeltaPolicy::all(self.delta_default == 1),
            ..DesignOptions::default()
        };
        for (i, j, v) in &self.deltas {
            opts.deltas.overrides.insert((SubsystemId(*i), SubsystemId(*j)), *v);
        }
        opts.search.eval_budget = self.eval_budget;
        opts.search.seed = self.seed;
        opts.search.objective = match self.objective {
            ObjectiveArg::Beta => SearchObjective::Beta,
            ObjectiveArg::BetaAndRate => SearchObjective::BetaAndRate,
        };
        opts
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({
            "norm": format!("{:?}", self.norm).to_lowercase(),
            "delta_default": self.delta_default,
            "delta_overrides": self.deltas,
            "eval_budget": self.eval_budget,
            "objective": format!("{:?}", self.objective),
            "seed": self.seed,
        })
    }
}

#[derive(Debug)]
enum CliError {
    Io(String),
    Input(String),
    Synthesis(String),
    Certification(String),
    Rejected(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Input(_) => 2,
            CliError::Synthesis(_) => 3,
            CliError::Certification(_) => 4,
            CliError::Rejected(_) => 5,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Io(m)
            | CliError::Input(m)
            | CliError::Synthesis(m)
            | CliError::Certification(m)
            | CliError::Rejected(m) => m,
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Synthesize { plant, design, out_dir } => cmd_synthesize(&plant, &design, &out_dir),
        Command::Certify {
            plant,
            gains,
            trials,
            seed,
            out_dir,
        } => cmd_certify(&plant, &gains, trials, seed, &out_dir),
        Command::Simulate {
            plant,
            gains,
            horizon,
            input,
            disturbance,
            initial,
            seed,
            check_rpi,
            out_dir,
        } => cmd_simulate(SimulateArgs {
            plant,
            gains,
            horizon,
            input,
            disturbance,
            initial,
            seed,
            check_rpi,
            out_dir,
        }),
        Command::PlugIn {
            plant,
            gains,
            subsystem,
            design,
            out_dir,
        } => cmd_plug_in(&plant, &gains, &subsystem, &design, &out_dir),
        Command::Unplug {
            plant,
            gains,
            id,
            redesign,
            design,
            out_dir,
        } => cmd_unplug(&plant, &gains, SubsystemId(id), redesign, &design, &out_dir),
        Command::Bench {
            command:
                BenchCommand::Generate {
                    seed,
                    config,
                    extension,
                    out_dir,
                },
        } => cmd_bench_generate(seed, config.as_deref(), extension, &out_dir),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificateSummary {
    pub certified: bool,
    pub spectral_radius: f64,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    pub rpi: Option<RpiDescriptor>,
}

impl CertificateSummary {
    fn new(report: &SmallGainReport, rpi: Option<RpiDescriptor>) -> Self {
        Self {
            certified: report.certified(),
            spectral_radius: report.schur_local.spectral_radius,
            beta: report.beta.map(|b| b.upper),
            gamma: report.gamma.map(|g| g.upper),
            rpi,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
struct ManifestBody<'a> {
    command: &'a str,
    seed: Option<u64>,
    plant_hash: String,
    config_hash: String,
    tool_version: &'static str,
    certificates: BTreeMap<SubsystemId, CertificateSummary>,
    outputs: Vec<String>,
}

#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    #[serde(flatten)]
    body: ManifestBody<'a>,
    /// SHA-256 of every field above; `timestamp` is not covered.
    content_hash: String,
    timestamp: u64,
}

fn sha256_json<T: Serialize>(value: &T) -> String {
    hex::encode(Sha256::digest(serde_json::to_vec(value).expect("serializable")))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_text(path, &text)
}

fn write_manifest(out_dir: &Path, body: ManifestBody<'_>) -> Result<(), CliError> {
    let manifest = RunManifest {
        content_hash: sha256_json(&body),
        body,
        timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
    };
    write_json(&out_dir.join("manifest.json"), &manifest)
}

fn prepare_out_dir(out_dir: &Path, inputs: &[&Path], outputs: &[&str]) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", out_dir.display())))?;
    let canonical = |p: &Path| std::fs::canonicalize(p).ok();
    let inputs: Vec<PathBuf> = inputs.iter().filter_map(|p| canonical(p)).collect();
    let mut paths = Vec::with_capacity(outputs.len());
    for name in outputs {
        let path = out_dir.join(name);
        if canonical(&path).is_some_and(|c| inputs.contains(&c)) {
            return Err(CliError::Input(format!(
                "output {} would overwrite an input file; choose another --out-dir",
                path.display()
            )));
        }
        paths.push(path);
    }
    Ok(paths)
}

fn load_graph(path: &Path) -> Result<PlantGraph, CliError> {
    read_graph(path).map_err(|e| CliError::Input(format!("plant {}: {e}", path.display())))
}

fn load_network(plant: &Path, gains: &Path) -> Result<(PlantGraph, CertifiedNetwork), CliError> {
    let graph = load_graph(plant)?;
    let file = GainsFile::read(gains).map_err(|e| CliError::Input(format!("gains {}: {e}", gains.display())))?;
    let net = file
        .into_network(graph.clone())
        .map_err(|e| CliError::Input(format!("gains {}: {e}", gains.display())))?;
    Ok((graph, net))
}

fn summaries(net: &CertifiedNetwork) -> BTreeMap<SubsystemId, CertificateSummary> {
    net.estimators
        .iter()
        .map(|(id, r)| (*id, CertificateSummary::new(&r.report, Some(r.rpi.descriptor))))
        .collect()
}

fn display_paths(paths: &[&PathBuf]) -> Vec<String> {
    paths.iter().map(|p| p.display().to_string()).collect()
}

#[derive(Debug, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
enum SubsystemOutcome {
    Certified {
        #[serde(flatten)]
        certificate: CertificateSummary,
        evaluations: usize,
        necessary_margin: f64,
    },
    Failed {
        stage: &'static str,
        reason: String,
    },
}

fn cmd_synthesize(plant: &Path, design: &DesignArgs, out_dir: &Path) -> Result<(), CliError> {
    let graph = load_graph(plant)?;
    let paths = prepare_out_dir(out_dir, &[plant], &["gains.json", "report.json", "manifest.json"])?;
    let designs = design_network(&graph, &StandardDesigner::new(design.options()));

    let report: BTreeMap<SubsystemId, SubsystemOutcome> = designs
        .iter()
        .map(|(id, d)| {
            let outcome = match d {
                Ok(d) => SubsystemOutcome::Certified {
                    certificate: CertificateSummary::new(&d.report, Some(d.rpi.descriptor)),
                    evaluations: d.evaluations,
                    necessary_margin: d.necessary.margin,
                },
                Err(e) => SubsystemOutcome::Failed {
                    stage: e.stage(),
                    reason: e.to_string(),
                },
            };
            (*id, outcome)
        })
        .collect();
    write_json(&paths[1], &report)?;

    let net = match CertifiedNetwork::from_designs(graph, designs) {
        Ok(net) => net,
        Err(failures) => {
            let lines: Vec<String> = failures
                .iter()
                .map(|(id, e)| format!("subsystem {id}: {}: {e}", e.stage()))
                .collect();
            return Err(CliError::Synthesis(lines.join("\n")));
        }
    };
    net.to_file()
        .write(&paths[0])
        .map_err(|e| CliError::Io(e.to_string()))?;
    let certificates = summaries(&net);
    for (id, c) in &certificates {
        println!(
            "subsystem {id}: beta {:.6} gamma {:.6} spectral radius {:.6}",
            c.beta.unwrap_or(f64::NAN),
            c.gamma.unwrap_or(f64::NAN),
            c.spectral_radius
        );
    }
    write_manifest(
        out_dir,
        ManifestBody {
            command: "synthesize",
            seed: Some(design.seed),
            plant_hash: net.plant_hash(),
            config_hash: sha256_json(&design.describe()),
            tool_version: TOOL_VERSION,
            certificates,
            outputs: display_paths(&[&paths[0], &paths[1], &paths[2]]),
        },
    )
}

#[derive(Debug, Serialize)]
struct CertifyEntry {
    #[serde(flatten)]
    certificate: CertificateSummary,
    rpi_contained: bool,
    containment_margin: f64,
    invariance_violations: usize,
}

#[derive(Debug, Serialize)]
struct CertifyReport {
    subsystems: BTreeMap<SubsystemId, CertifyEntry>,
    collective_spectral_radius: f64,
}

fn cmd_certify(plant: &Path, gains: &Path, trials: usize, seed: u64, out_dir: &Path) -> Result<(), CliError> {
    let (graph, net) = load_network(plant, gains)?;
    let paths = prepare_out_dir(out_dir, &[plant, gains], &["report.json", "manifest.json"])?;
    let mut entries = BTreeMap::new();
    let mut failures = Vec::new();
    for (id, rec) in &net.estimators {
        let view = LocalView::new(&graph, *id).map_err(|e| CliError::Input(format!("subsystem {id}: {e}")))?;
        let fail = |stage: &str, e: String| CliError::Certification(format!("subsystem {id}: {stage}: {e}"));
        let report = certify_local(&view, &rec.gains, Default::default()).map_err(|e| fail(e.stage(), e.to_string()))?;
        let lq = local_quantities(&view, &rec.gains).map_err(|e| fail(e.stage(), e.to_string()))?;
        let containment = contains_zonotope(&rec.rpi.generators, &view.subsystem.error_set);
        let invariance = verify_invariance(&rec.rpi, &lq.a_bar, &lq.psi, trials, seed);
        if !report.certified() {
            failures.push(format!("subsystem {id}: small_gain: β or γ not below 1"));
        }
        if !containment.contained {
            failures.push(format!("subsystem {id}: rpi: S not contained in E (margin {:.3e})", containment.margin));
        }
        if !invariance.holds() {
            failures.push(format!("subsystem {id}: rpi: {} invariance violations", invariance.violations));
        }
        entries.insert(
            *id,
            CertifyEntry {
                certificate: CertificateSummary::new(&report, Some(rec.rpi.descriptor)),
                rpi_contained: containment.contained,
                containment_margin: containment.margin,
                invariance_violations: invariance.violations,
            },
        );
    }
    let collective = net
        .collective()
        .map_err(|e| CliError::Input(e.to_string()))
        .and_then(|c| spectral_radius(&c.a_bar).map_err(|e| CliError::Certification(format!("collective: {e}"))))?;
    if collective >= 1.0 {
        failures.push(format!("collective: spectral radius {collective:.6} is not below 1"));
    }
    println!("collective spectral radius {collective:.6}");
    let certificates = entries.iter().map(|(id, e)| (*id, e.certificate.clone())).collect();
    write_json(
        &paths[0],
        &CertifyReport {
            subsystems: entries,
            collective_spectral_radius: collective,
        },
    )?;
    write_manifest(
        out_dir,
        ManifestBody {
            command: "certify",
            seed: Some(seed),
            plant_hash: net.plant_hash(),
            config_hash: sha256_json(&serde_json::json!({ "trials": trials })),
            tool_version: TOOL_VERSION,
            certificates,
            outputs: display_paths(&[&paths[0], &paths[1]]),
        },
    )?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Certification(failures.join("\n")))
    }
}

struct SimulateArgs {
    plant: PathBuf,
    gains: PathBuf,
    horizon: usize,
    input: String,
    disturbance: DisturbanceArg,
    initial: InitialArg,
    seed: u64,
    check_rpi: bool,
    out_dir: PathBuf,
}

fn parse_input(arg: &str) -> Result<InputSchedule, CliError> {
    let bad = |m: String| CliError::Input(format!("--input {arg:?}: {m}"));
    let num = |t: &str| t.trim().parse::<f64>().map_err(|e| bad(format!("{t:?}: {e}")));
    let (kind, rest) = arg.split_once(':').unwrap_or((arg, ""));
    match kind {
        "zero" => Ok(InputSchedule::Zero),
        "const" => Ok(InputSchedule::Constant { value: num(rest)? }),
        "sin" => {
            let parts: Vec<&str> = rest.split(',').collect();
            let [a, f, p] = parts.as_slice() else {
                return Err(bad("expected sin:AMPLITUDE,FREQUENCY,PHASE".into()));
            };
            Ok(InputSchedule::Sinusoid {
                amplitude: num(a)?,
                frequency: num(f)?,
                phase: num(p)?,
            })
        }
        "file" => {
            let text = std::fs::read_to_string(rest).map_err(|e| bad(e.to_string()))?;
            let values = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
            Ok(InputSchedule::Series { values })
        }
        other => Err(bad(format!("unknown input kind {other:?}"))),
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), CliError> {
    if args.horizon == 0 {
        return Err(CliError::Input("--horizon must be at least 1".into()));
    }
    let schedule = parse_input(&args.input)?;
    let (graph, net) = load_network(&args.plant, &args.gains)?;
    let paths = prepare_out_dir(&args.out_dir, &[&args.plant, &args.gains], &["trace.csv", "manifest.json"])?;
    let policy = match args.disturbance {
        DisturbanceArg::Zero => DisturbancePolicy::Zero,
        DisturbanceArg::Uniform => DisturbancePolicy::Uniform { seed: args.seed },
        DisturbanceArg::Vertices => DisturbancePolicy::Vertices { seed: args.seed },
    };
    let certificates = summaries(&net);
    let plant_hash = net.plant_hash();
    let mut sim = EstimatorNetwork::new(graph, net.gains(), net.rpi_sets())
        .map_err(|e| CliError::Input(format!("estimator: {e}")))?;
    if args.initial == InitialArg::Rpi {
        sim.offset_into_rpi(args.seed)
            .map_err(|e| CliError::Input(format!("estimator: {e}")))?;
    }
    let trace = simulate(
        &mut sim,
        &schedule,
        policy,
        args.horizon,
        SimulationOptions {
            check_rpi: args.check_rpi,
        },
    )
    .map_err(|e| CliError::Input(format!("simulation: {e}")))?;
    trace
        .write_csv_file(&paths[0])
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", paths[0].display())))?;
    println!(
        "max |e| at t = {}: {:.3e}; all errors in E: {}",
        args.horizon,
        trace.max_abs_error_at(args.horizon),
        trace.all_in_e()
    );
    write_manifest(
        &args.out_dir,
        ManifestBody {
            command: "simulate",
            seed: Some(args.seed),
            plant_hash,
            config_hash: sha256_json(&serde_json::json!({
                "horizon": args.horizon,
                "input": schedule,
                "disturbance": policy,
                "initial": format!("{:?}", args.initial).to_lowercase(),
                "check_rpi": args.check_rpi,
            })),
            tool_version: TOOL_VERSION,
            certificates,
            outputs: display_paths(&[&paths[0], &paths[1]]),
        },
    )
}

fn finish_transaction(
    command: &str,
    design: &DesignArgs,
    tx: PnpTransaction,
    next: Option<CertifiedNetwork>,
    paths: &[PathBuf],
    out_dir: &Path,
) -> Result<(), CliError> {
    write_json(&paths[0], &tx)?;
    println!("{}", serde_json::to_string(&tx).expect("serializable"));
    match (&tx.outcome, next) {
        (Outcome::Accepted, Some(net)) => {
            write_graph(&net.graph, &paths[1]).map_err(|e| CliError::Io(e.to_string()))?;
            net.to_file()
                .write(&paths[2])
                .map_err(|e| CliError::Io(e.to_string()))?;
            write_manifest(
                out_dir,
                ManifestBody {
                    command,
                    seed: Some(design.seed),
                    plant_hash: net.plant_hash(),
                    config_hash: sha256_json(&design.describe()),
                    tool_version: TOOL_VERSION,
                    certificates: summaries(&net),
                    outputs: display_paths(&[&paths[0], &paths[1], &paths[2], &paths[3]]),
                },
            )
        }
        (Outcome::Rejected { reason, stage, failing }, _) => Err(CliError::Rejected(format!(
            "subsystem {failing}: {stage}: {reason}"
        ))),
        (Outcome::Accepted, None) => unreachable!("accepted transactions carry a network"),
    }
}

const TRANSACTION_OUTPUTS: [&str; 4] = ["transaction.json", "plant.json", "gains.json", "manifest.json"];

fn cmd_plug_in(plant: &Path, gains: &Path, file: &Path, design: &DesignArgs, out_dir: &Path) -> Result<(), CliError> {
    let (_, net) = load_network(plant, gains)?;
    let plug: PlugIn = PlugInFile::read(file)
        .and_then(|f| f.to_plug_in())
        .map_err(|e| CliError::Input(format!("subsystem file {}: {e}", file.display())))?;
    let paths = prepare_out_dir(out_dir, &[plant, gains, file], &TRANSACTION_OUTPUTS)?;
    let (tx, next) = pnp::plug_in(&net, &plug, &StandardDesigner::new(design.options()));
    finish_transaction("plug-in", design, tx, next, &paths, out_dir)
}

fn cmd_unplug(
    plant: &Path,
    gains: &Path,
    id: SubsystemId,
    redesign: bool,
    design: &DesignArgs,
    out_dir: &Path,
) -> Result<(), CliError> {
    let (_, net) = load_network(plant, gains)?;
    let paths = prepare_out_dir(out_dir, &[plant, gains], &TRANSACTION_OUTPUTS)?;
    let opts = PnpOptions {
        seed: design.seed,
        ..PnpOptions::default()
    };
    let (tx, next) = pnp::unplug(&net, id, redesign, &StandardDesigner::new(design.options()), opts);
    finish_transaction("unplug", design, tx, next, &paths, out_dir)
}

fn cmd_bench_generate(seed: u64, config: Option<&Path>, extension: bool, out_dir: &Path) -> Result<(), CliError> {
    let mut cfg = match config {
        None => MassArrayConfig::default(),
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Input(format!("config {}: {e}", path.display())))?;
            let parsed = if path.extension().is_some_and(|e| e == "toml") {
                toml::from_str(&text).map_err(|e| e.to_string())
            } else {
                serde_json::from_str(&text).map_err(|e| e.to_string())
            };
            parsed.map_err(|e| CliError::Input(format!("config {}: {e}", path.display())))?
        }
    };
    cfg.seed = seed;
    let inputs: Vec<&Path> = config.into_iter().collect();
    let paths = prepare_out_dir(out_dir, &inputs, &["plant.json", "extension.json"])?;
    let bench = |e: crate::bench::BenchError| CliError::Input(format!("benchmark: {e}"));
    let graph = PlantGraph::new(build_plant(&cfg).map_err(bench)?).map_err(|e| CliError::Input(e.to_string()))?;
    PlantFile::from_graph(&graph)
        .write(&paths[0])
        .map_err(|e| CliError::Io(e.to_string()))?;
    println!("{}", paths[0].display());
    if extension {
        let (subsystem, host) =
            extension_block(&cfg, EXTENSION_ID, EXTENSION_HOST, EXTENSION_LINK_GAIN, seed.wrapping_add(1)).map_err(bench)?;
        let plug = PlugIn {
            subsystem,
            child_couplings: BTreeMap::from([(EXTENSION_HOST, host)]),
        };
        PlugInFile::from_plug_in(&plug)
            .write(&paths[1])
            .map_err(|e| CliError::Io(e.to_string()))?;
        println!("{}", paths[1].display());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delta_override_parsing() {
        assert_eq!(parse_delta("2,1,0"), Ok((2, 1, false)));
        assert_eq!(parse_delta(" 3 , 4 , 1 "), Ok((3, 4, true)));
        assert!(parse_delta("1,2").is_err());
        assert!(parse_delta("1,2,5").is_err());
    }

    #[test]
    fn input_schedule_parsing() {
        assert_eq!(parse_input("zero").unwrap(), InputSchedule::Zero);
        assert_eq!(parse_input("const:0.5").unwrap(), InputSchedule::Constant { value: 0.5 });
        assert_eq!(
            parse_input("sin:0.1,1,0").unwrap(),
            InputSchedule::Sinusoid {
                amplitude: 0.1,
                frequency: 1.0,
                phase: 0.0
            }
        );
        assert!(parse_input("sin:0.1").is_err());
        assert!(parse_input("ramp").is_err());
    }

    #[test]
    fn usage_errors_exit_with_two() {
        assert_eq!(run(["pnp-dse", "frobnicate"]), 2);
        assert_eq!(run(["pnp-dse", "synthesize", "p.json", "--delta", "1,2"]), 2);
    }
}
