//! Command-line front end: deterministic experiment orchestration with a
//! JSON report on stdout and optional file artifacts.
//!
//! Every run prints one `ExperimentReport` document whose `config` echo is
//! enough to reproduce it bit-exactly; `wall_clock_ms` is the only field
//! that varies between identical runs. Failures print a machine-readable
//! error object to stderr and exit with a code distinct per error class.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use qlsim_core::actions::{build_action, ActionDescriptor, ActionModel, TranslationAction};
use qlsim_core::error::Error;
use qlsim_core::group::GroupSpec;
use qlsim_core::harness::{
    run_d2x_reduction, run_ddh_pair_reduction, run_twist_reduction, twist_simulation_battery,
    Cloner, PairMaker,
};
use qlsim_core::lattice::{
    demo_params_16, demo_params_64, folklore_attack, folklore_h_marginal, folklore_note,
    fourier_equivalence_check, run_lattice_trials, sis_from_two_notes, support_verifier,
    transformed_fake_mass, LweParams,
};
use qlsim_core::lightning::{
    findh, findh_distribution, kgea_attack, kgea_attack_circuit, mint, verify, verify_prob,
    Banknote, BanknoteJson,
};
use qlsim_core::rega::{
    demo_params_169, demo_params_533, large_subgroup_element_count,
    large_subgroup_element_formula, serial_decode_collisions, validate_params, RegaBanknote,
    RegaBanknoteJson, RegaInstance, RegaStructure,
};
use qlsim_core::selftest::run_all;

const DEFAULT_SEED: u64 = 7;

#[derive(Parser)]
#[command(
    name = "qlsim",
    version,
    about = "Desk-scale simulator of quantum money over abelian group actions"
)]
struct Cli {
    /// Seed for every sampled step; the QLSIM_SEED env var is the fallback.
    #[arg(long, global = true, env = "QLSIM_SEED")]
    seed: Option<u64>,
    /// Report exact probabilities only; skip all sampling.
    #[arg(long, global = true)]
    exact: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mint a banknote: uniform serial, money state collapsed to its note.
    Mint {
        /// Group as cyclic factors, e.g. "35" or "2x3x5".
        #[arg(long, default_value = "8")]
        group: String,
        #[arg(long, value_enum, default_value_t = ActionKind::Translation)]
        action: ActionKind,
        /// Label width for the seeded-injection action.
        #[arg(long)]
        label_bits: Option<usize>,
        /// Write the banknote JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Verify a banknote file against its serial.
    Verify {
        #[arg(long)]
        note: PathBuf,
        /// Override serial residues, comma-separated.
        #[arg(long)]
        serial: Option<String>,
    },
    /// Read the serial out of a banknote file.
    Findh {
        #[arg(long)]
        note: PathBuf,
    },
    /// Forgery attempts against the mini-scheme.
    Attack {
        #[command(subcommand)]
        attack: AttackCommand,
    },
    /// Security-game reductions with built-in adversaries.
    Reduce {
        #[command(subcommand)]
        reduction: ReduceCommand,
    },
    /// The restricted-action verification scheme.
    Rega {
        #[command(subcommand)]
        rega: RegaCommand,
    },
    /// Truncated-Gaussian coset states and their counterfeits.
    Lattice {
        #[command(subcommand)]
        lattice: LatticeCommand,
    },
    /// Run the acceptance suite and print one pass/fail line per criterion.
    Selftest {
        /// Write the results as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum AttackCommand {
    /// Duplicate-and-read forgery with a quadratic phase correction.
    Kgea {
        #[arg(long, default_value = "101")]
        group: String,
        /// Sampled serial draws; 0 keeps the run analytic.
        #[arg(long, default_value_t = 0)]
        trials: u64,
        /// Cross-check through the gate-level circuit.
        #[arg(long)]
        circuit: bool,
        /// Write the sampled histogram as CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum ReduceCommand {
    /// Cloning-to-doubling distinguisher.
    D2x {
        #[arg(long, default_value = "8")]
        group: String,
        #[arg(long, value_enum, default_value_t = ClonerKind::Ideal)]
        cloner: ClonerKind,
        #[arg(long, default_value_t = 4)]
        trials: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Opposite-serial pair distinguisher.
    DdhPair {
        #[arg(long, default_value = "8")]
        group: String,
        #[arg(long, value_enum, default_value_t = PairKind::Complementary)]
        pair_maker: PairKind,
        #[arg(long, default_value_t = 4)]
        trials: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Twisted-game simulation over a wrapped untwisted action.
    Twist {
        #[arg(long, default_value = "12")]
        group: String,
        #[arg(long, default_value_t = 16)]
        label_bits: usize,
        #[arg(long, default_value_t = 4)]
        trials: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum RegaCommand {
    /// Mint a noisy-serial banknote on a validated toy parameter set.
    Mint {
        #[arg(long, value_enum, default_value_t = RegaPreset::Primary)]
        params: RegaPreset,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full round protocol against a banknote file.
    Verify {
        #[arg(long)]
        note: PathBuf,
        /// Override the claimed serial vector, comma-separated.
        #[arg(long)]
        serial_t: Option<String>,
    },
    /// Check the counting formula and serial decoding exhaustively.
    Lemmas {
        #[arg(long, default_value_t = 256)]
        max_n: u64,
    },
}

#[derive(Subcommand)]
enum LatticeCommand {
    /// Mint / counterfeit / double-spend trials with per-trial CSV rows.
    Folklore {
        #[arg(long, value_enum, default_value_t = LatticePreset::N64)]
        params: LatticePreset,
        #[arg(long, default_value_t = 8)]
        trials: usize,
        /// Write per-trial CSV rows here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Measure-and-resubmit counterfeit against both verifiers.
    Attack {
        #[arg(long, value_enum, default_value_t = LatticePreset::N64)]
        params: LatticePreset,
        #[arg(long, default_value_t = 8)]
        trials: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Double-spend extraction of short kernel vectors.
    Sis {
        #[arg(long, value_enum, default_value_t = LatticePreset::N64)]
        params: LatticePreset,
        #[arg(long, default_value_t = 8)]
        trials: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fidelity between the transformed note and its dual-width partner.
    Fourier {
        #[arg(long, value_enum, default_value_t = LatticePreset::N16)]
        params: LatticePreset,
        /// Serial residues, comma-separated.
        #[arg(long, default_value = "5")]
        h: String,
    },
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum ActionKind {
    Translation,
    Ggam,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClonerKind {
    Ideal,
    Measured,
    RandomState,
}

impl From<ClonerKind> for Cloner {
    fn from(k: ClonerKind) -> Self {
        match k {
            ClonerKind::Ideal => Cloner::Ideal,
            ClonerKind::Measured => Cloner::Measured,
            ClonerKind::RandomState => Cloner::RandomState,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PairKind {
    Complementary,
    SameSerial,
}

impl From<PairKind> for PairMaker {
    fn from(k: PairKind) -> Self {
        match k {
            PairKind::Complementary => PairMaker::Complementary,
            PairKind::SameSerial => PairMaker::SameSerial,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum RegaPreset {
    Primary,
    Secondary,
}

#[derive(Clone, Copy, ValueEnum)]
enum LatticePreset {
    #[value(name = "64")]
    N64,
    #[value(name = "16")]
    N16,
}

impl LatticePreset {
    fn params(self) -> LweParams {
        match self {
            LatticePreset::N64 => demo_params_64(),
            LatticePreset::N16 => demo_params_16(),
        }
    }

    fn name(self) -> &'static str {
        match self {
            LatticePreset::N64 => "64",
            LatticePreset::N16 => "16",
        }
    }
}

/// Failure classes, each with its own exit code and kebab-case error code.
enum CliError {
    Usage(String),
    UnknownCommand(String),
    Core(Error),
    BadFile(String),
    Io(std::io::Error),
    CriteriaFailed(usize),
}

impl CliError {
    fn code(&self) -> (&'static str, u8) {
        match self {
            CliError::Usage(_) => ("usage", 2),
            CliError::UnknownCommand(_) => ("unknown-command", 2),
            CliError::Core(e) => match e {
                Error::CapExceeded { .. } => ("cap-exceeded", 4),
                Error::QueryBudgetExhausted(_) | Error::RefereeViolation(_) => {
                    ("budget-violation", 5)
                }
                Error::Json(_) => ("bad-file", 6),
                _ => ("invalid-params", 3),
            },
            CliError::BadFile(_) => ("bad-file", 6),
            CliError::Io(_) => ("io-error", 7),
            CliError::CriteriaFailed(_) => ("criteria-failed", 8),
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Usage(m) | CliError::UnknownCommand(m) | CliError::BadFile(m) => m.clone(),
            CliError::Core(e) => e.to_string(),
            CliError::Io(e) => e.to_string(),
            CliError::CriteriaFailed(n) => format!("{n} acceptance criteria failed"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

/// Prints to stdout, exiting quietly when the consumer closed the pipe.
fn print_line(text: &str) {
    let mut out = std::io::stdout().lock();
    if writeln!(out, "{text}").is_err() {
        std::process::exit(0);
    }
}

#[derive(Serialize)]
struct ExperimentReport<M: Serialize> {
    version: &'static str,
    config: Value,
    metrics: M,
    wall_clock_ms: f64,
}

fn emit_report<M: Serialize>(config: Value, metrics: M, started: Instant) -> Result<(), CliError> {
    let report = ExperimentReport {
        version: env!("CARGO_PKG_VERSION"),
        config,
        metrics,
        wall_clock_ms: started.elapsed().as_secs_f64() * 1e3,
    };
    let text = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::BadFile(format!("report serialization failed: {e}")))?;
    print_line(&text);
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::BadFile(format!("serialization failed: {e}")))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::BadFile(format!("{}: {e}", path.display())))
}

fn parse_residues(s: &str) -> Result<Vec<u64>, CliError> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<u64>()
                .map_err(|e| CliError::Core(Error::ParamInvalid(format!("bad residue {p:?}: {e}"))))
        })
        .collect()
}

fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn make_descriptor(
    group: &str,
    action: ActionKind,
    label_bits: Option<usize>,
    seed: u64,
) -> Result<ActionDescriptor, CliError> {
    let spec: GroupSpec = group.parse()?;
    let model = TranslationAction::new(&spec);
    let mut desc = model.descriptor();
    if action == ActionKind::Ggam {
        desc.kind = "ggam".into();
        desc.label_bits = Some(label_bits.unwrap_or(24));
        desc.seed = Some(seed);
    }
    Ok(desc)
}

fn translation_base(group: &str) -> Result<Arc<dyn ActionModel>, CliError> {
    let spec: GroupSpec = group.parse()?;
    Ok(Arc::new(TranslationAction::new(&spec)))
}

fn run_mint(
    group: &str,
    action: ActionKind,
    label_bits: Option<usize>,
    seed: u64,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let started = Instant::now();
    let desc = make_descriptor(group, action, label_bits, seed)?;
    let model = build_action(&desc)?;
    let mut rng = seeded(seed);
    let note = mint(model.as_ref(), &mut rng)?;
    if let Some(path) = out {
        write_json(path, &note.to_json(model.as_ref()))?;
    }
    let accept = verify_prob(model.as_ref(), &note.serial, &note.state)?;
    let config = json!({
        "command": "mint",
        "action": desc,
        "seed": seed,
        "out": out.map(|p| p.display().to_string()),
    });
    emit_report(
        config,
        json!({
            "group": model.group().to_string(),
            "serial": note.serial.residues(),
            "accept_probability": accept,
        }),
        started,
    )
}

fn run_verify(
    note_path: &Path,
    serial: Option<&str>,
    seed: u64,
    exact: bool,
) -> Result<(), CliError> {
    let started = Instant::now();
    let parsed: BanknoteJson = read_json(note_path)?;
    let (model, note) = Banknote::from_json(&parsed)?;
    let claimed = match serial {
        Some(s) => model.group().element(parse_residues(s)?)?,
        None => note.serial.clone(),
    };
    let p = verify_prob(model.as_ref(), &claimed, &note.state)?;
    let accepted = if exact {
        None
    } else {
        let mut rng = seeded(seed);
        Some(verify(model.as_ref(), &claimed, &note.state, &mut rng)?.accepted)
    };
    let config = json!({
        "command": "verify",
        "note": note_path.display().to_string(),
        "serial": claimed.residues(),
        "seed": seed,
        "exact": exact,
    });
    emit_report(
        config,
        json!({
            "group": model.group().to_string(),
            "accept_probability": p,
            "accepted": accepted,
        }),
        started,
    )
}

fn run_findh(note_path: &Path, seed: u64, exact: bool) -> Result<(), CliError> {
    let started = Instant::now();
    let parsed: BanknoteJson = read_json(note_path)?;
    let (model, note) = Banknote::from_json(&parsed)?;
    let dist = findh_distribution(model.as_ref(), &note.state)?;
    let (best_idx, best_p) = dist
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("group is nonempty");
    let best = model.group().element_at(best_idx as u64)?;
    let sampled = if exact {
        None
    } else {
        let mut rng = seeded(seed);
        let (read, post) = findh(model.as_ref(), &note.state, &mut rng)?;
        let fidelity = post.fidelity(&note.state)?;
        Some(json!({ "serial": read.residues(), "post_fidelity": fidelity }))
    };
    let config = json!({
        "command": "findh",
        "note": note_path.display().to_string(),
        "seed": seed,
        "exact": exact,
    });
    emit_report(
        config,
        json!({
            "group": model.group().to_string(),
            "most_likely_serial": best.residues(),
            "probability": best_p,
            "sampled": sampled,
        }),
        started,
    )
}

fn run_kgea(
    group: &str,
    trials: u64,
    circuit: bool,
    seed: u64,
    exact: bool,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let started = Instant::now();
    let model = translation_base(group)?;
    let report = if circuit {
        kgea_attack_circuit(model.as_ref(), None)?
    } else {
        kgea_attack(model.as_ref(), None)?
    };
    let sampled = if trials > 0 && !exact {
        let mut rng = seeded(seed);
        let mut counts = vec![0u64; report.distribution.len()];
        for _ in 0..trials {
            counts[sample_discrete(&report.distribution, &mut rng)] += 1;
        }
        if let Some(path) = out {
            let mut csv = String::from("g,count,frequency\n");
            for (g, &c) in counts.iter().enumerate() {
                let _ = writeln!(csv, "{g},{c},{}", c as f64 / trials as f64);
            }
            fs::write(path, csv)?;
        }
        let max_freq = counts.iter().map(|&c| c as f64 / trials as f64).fold(0.0, f64::max);
        Some(json!({ "trials": trials, "max_frequency": max_freq }))
    } else {
        None
    };
    let config = json!({
        "command": "attack kgea",
        "group": group,
        "trials": trials,
        "circuit": circuit,
        "seed": seed,
        "exact": exact,
    });
    emit_report(
        config,
        json!({ "report": report, "sampled": sampled }),
        started,
    )
}

fn sample_discrete<R: rand::Rng>(dist: &[f64], rng: &mut R) -> usize {
    let mut u: f64 = rng.gen_range(0.0..1.0);
    for (i, &p) in dist.iter().enumerate() {
        if u < p {
            return i;
        }
        u -= p;
    }
    dist.len() - 1
}

fn run_reduce(reduction: ReduceCommand, seed: u64) -> Result<(), CliError> {
    let started = Instant::now();
    let mut rng = seeded(seed);
    match reduction {
        ReduceCommand::D2x {
            group,
            cloner,
            trials,
            out,
        } => {
            let base = translation_base(&group)?;
            let report = run_d2x_reduction(&base, cloner.into(), trials, &mut rng)?;
            if let Some(path) = &out {
                write_json(path, &report)?;
            }
            let config = json!({
                "command": "reduce d2x",
                "group": group,
                "cloner": report.strategy,
                "trials": trials,
                "seed": seed,
            });
            emit_report(config, report, started)
        }
        ReduceCommand::DdhPair {
            group,
            pair_maker,
            trials,
            out,
        } => {
            let base = translation_base(&group)?;
            let report = run_ddh_pair_reduction(&base, pair_maker.into(), trials, &mut rng)?;
            if let Some(path) = &out {
                write_json(path, &report)?;
            }
            let config = json!({
                "command": "reduce ddh-pair",
                "group": group,
                "pair_maker": report.strategy,
                "trials": trials,
                "seed": seed,
            });
            emit_report(config, report, started)
        }
        ReduceCommand::Twist {
            group,
            label_bits,
            trials,
            out,
        } => {
            let spec: GroupSpec = group.parse()?;
            let battery = twist_simulation_battery(&spec, label_bits, seed)?;
            let report = run_twist_reduction(&spec, label_bits, trials, &mut rng)?;
            if let Some(path) = &out {
                write_json(path, &report)?;
            }
            let config = json!({
                "command": "reduce twist",
                "group": group,
                "label_bits": label_bits,
                "trials": trials,
                "seed": seed,
            });
            emit_report(config, json!({ "battery": battery, "report": report }), started)
        }
    }
}

fn rega_instance(preset: RegaPreset) -> Result<(RegaInstance, &'static str), CliError> {
    let (params, name) = match preset {
        RegaPreset::Primary => (demo_params_169(), "primary"),
        RegaPreset::Secondary => (demo_params_533(), "secondary"),
    };
    let structure = RegaStructure::new(params)?;
    let model: Arc<dyn ActionModel> = Arc::new(TranslationAction::new(structure.group()));
    Ok((RegaInstance::with_structure(structure, model)?, name))
}

fn run_rega(rega: RegaCommand, seed: u64, exact: bool) -> Result<(), CliError> {
    let started = Instant::now();
    match rega {
        RegaCommand::Mint { params, out } => {
            let (inst, name) = rega_instance(params)?;
            let mut rng = seeded(seed);
            let note = inst.mint(&mut rng)?;
            if let Some(path) = &out {
                write_json(path, &note.to_json(&inst))?;
            }
            let report = validate_params(inst.params())?;
            let config = json!({
                "command": "rega mint",
                "params": name,
                "seed": seed,
                "out": out.map(|p| p.display().to_string()),
            });
            emit_report(
                config,
                json!({
                    "group": inst.group().to_string(),
                    "serial_t": note.serial_t,
                    "h_witness": note.h_witness.residues(),
                    "params_ok": report.all_ok(),
                }),
                started,
            )
        }
        RegaCommand::Verify { note, serial_t } => {
            let parsed: RegaBanknoteJson = read_json(&note)?;
            let (inst, banknote) = RegaBanknote::from_json(&parsed)?;
            let t = match &serial_t {
                Some(s) => parse_residues(s)?,
                None => banknote.serial_t.clone(),
            };
            let config = json!({
                "command": "rega verify",
                "note": note.display().to_string(),
                "serial_t": t,
                "seed": seed,
                "exact": exact,
            });
            if exact {
                let min_round = inst.min_round_zero_prob(&banknote.note, &t)?;
                let mean_round = inst.mean_round_zero_prob(&banknote.note, &t)?;
                emit_report(
                    config,
                    json!({
                        "min_round_zero_prob": min_round,
                        "mean_round_zero_prob": mean_round,
                        "lambda": inst.params().lambda,
                        "threshold_rounds": inst.params().threshold_rounds(),
                    }),
                    started,
                )
            } else {
                let mut rng = seeded(seed);
                let report = inst.verify(&t, &banknote.note, &mut rng)?;
                emit_report(config, report, started)
            }
        }
        RegaCommand::Lemmas { max_n } => {
            let mut pairs = 0u64;
            let mut formula_ok = true;
            for n in 1..=max_n {
                for d in (1..=n).filter(|d| n % d == 0) {
                    formula_ok &=
                        large_subgroup_element_count(n, d)? == large_subgroup_element_formula(d);
                    pairs += 1;
                }
            }
            let primary = serial_decode_collisions(&demo_params_169())?;
            let secondary = serial_decode_collisions(&demo_params_533())?;
            let config = json!({ "command": "rega lemmas", "max_n": max_n });
            emit_report(
                config,
                json!({
                    "subgroup_pairs_checked": pairs,
                    "count_formula_ok": formula_ok,
                    "decode_collisions_primary": primary,
                    "decode_collisions_secondary": secondary,
                    "params_primary": validate_params(&demo_params_169())?,
                    "params_secondary": validate_params(&demo_params_533())?,
                }),
                started,
            )
        }
    }
}

fn run_lattice(lattice: LatticeCommand, seed: u64) -> Result<(), CliError> {
    let started = Instant::now();
    match lattice {
        LatticeCommand::Folklore { params, trials, out } => {
            let p = params.params();
            let mut rng = seeded(seed);
            let records = run_lattice_trials(&p, trials, &mut rng)?;
            if let Some(path) = &out {
                let mut csv = String::from("trial,h,attack_pass,sis_nonzero,fidelity\n");
                for r in &records {
                    let h = r
                        .h
                        .iter()
                        .map(|x| x.to_string())
                        .collect::<Vec<_>>()
                        .join(" ");
                    let _ = writeln!(
                        csv,
                        "{},{},{},{},{}",
                        r.trial, h, r.attack_pass, r.sis_nonzero, r.fidelity
                    );
                }
                fs::write(path, csv)?;
            }
            let config = json!({
                "command": "lattice folklore",
                "params": params.name(),
                "trials": trials,
                "seed": seed,
                "out": out.map(|p| p.display().to_string()),
            });
            emit_report(
                config,
                json!({
                    "trials": records.len(),
                    "attack_pass_count": records.iter().filter(|r| r.attack_pass).count(),
                    "sis_nonzero_count": records.iter().filter(|r| r.sis_nonzero).count(),
                    "mean_counterfeit_fidelity":
                        records.iter().map(|r| r.fidelity).sum::<f64>() / records.len().max(1) as f64,
                }),
                started,
            )
        }
        LatticeCommand::Attack { params, trials, out } => {
            let p = params.params();
            let mut rng = seeded(seed);
            let marginal = folklore_h_marginal(&p)?;
            let mut rows = Vec::new();
            let mut mass_sum = 0.0;
            let mut support_all = true;
            for trial in 0..trials {
                let flat = sample_flat(&marginal, &mut rng);
                let h = flat_to_residues(flat, &p);
                let note = folklore_note(&p, &h)?;
                let (x, fake) = folklore_attack(&note, &mut rng)?;
                let support = support_verifier(&p, &h, &fake)?;
                let mass = transformed_fake_mass(&p, &x)?;
                support_all &= support == 1.0;
                mass_sum += mass;
                rows.push((trial, h, support, mass));
            }
            if let Some(path) = &out {
                let mut csv = String::from("trial,h,support_acceptance,projector_mass\n");
                for (trial, h, support, mass) in &rows {
                    let h = h.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
                    let _ = writeln!(csv, "{trial},{h},{support},{mass}");
                }
                fs::write(path, csv)?;
            }
            let config = json!({
                "command": "lattice attack",
                "params": params.name(),
                "trials": trials,
                "seed": seed,
            });
            emit_report(
                config,
                json!({
                    "support_acceptance_all_one": support_all,
                    "mean_projector_mass": mass_sum / trials.max(1) as f64,
                }),
                started,
            )
        }
        LatticeCommand::Sis { params, trials, out } => {
            let p = params.params();
            let mut rng = seeded(seed);
            let marginal = folklore_h_marginal(&p)?;
            let mut rows = Vec::new();
            for trial in 0..trials {
                let flat = sample_flat(&marginal, &mut rng);
                let h = flat_to_residues(flat, &p);
                let note = folklore_note(&p, &h)?;
                let sis = sis_from_two_notes(&p, &note, &note, &h, &mut rng)?;
                rows.push((trial, h, sis));
            }
            if let Some(path) = &out {
                let mut csv = String::from("trial,h,nonzero,kernel_ok,linf_norm\n");
                for (trial, h, sis) in &rows {
                    let h = h.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
                    let _ = writeln!(
                        csv,
                        "{trial},{h},{},{},{}",
                        sis.nonzero, sis.kernel_ok, sis.linf_norm
                    );
                }
                fs::write(path, csv)?;
            }
            let config = json!({
                "command": "lattice sis",
                "params": params.name(),
                "trials": trials,
                "seed": seed,
            });
            emit_report(
                config,
                json!({
                    "nonzero_count": rows.iter().filter(|(_, _, s)| s.nonzero).count(),
                    "kernel_ok_all": rows.iter().all(|(_, _, s)| s.kernel_ok),
                    "max_linf_norm": rows.iter().map(|(_, _, s)| s.linf_norm).max().unwrap_or(0),
                }),
                started,
            )
        }
        LatticeCommand::Fourier { params, h } => {
            let p = params.params();
            let residues = parse_residues(&h)?;
            let fidelity = fourier_equivalence_check(&p, &residues)?;
            let config = json!({
                "command": "lattice fourier",
                "params": params.name(),
                "h": residues,
            });
            emit_report(config, json!({ "fidelity": fidelity }), started)
        }
    }
}

fn sample_flat<R: rand::Rng>(marginal: &[f64], rng: &mut R) -> u64 {
    sample_discrete(marginal, rng) as u64
}

fn flat_to_residues(flat: u64, p: &LweParams) -> Vec<u64> {
    let mut v = vec![0u64; p.secret_dim];
    let mut rest = flat;
    for slot in v.iter_mut().rev() {
        *slot = rest % p.n_modulus;
        rest /= p.n_modulus;
    }
    v
}

fn run_selftest(seed: u64, out: Option<&Path>) -> Result<(), CliError> {
    let results = run_all(seed);
    print_line(&format!("acceptance run, seed {seed}"));
    for r in &results {
        let mark = if r.passed { "PASS" } else { "FAIL" };
        print_line(&format!(
            "[{mark}] {:>2} {:<32} {:>8.2}s  {}",
            r.id, r.name, r.seconds, r.detail
        ));
    }
    if let Some(path) = out {
        write_json(path, &results)?;
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(CliError::CriteriaFailed(failed));
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let seed = cli.seed.unwrap_or(DEFAULT_SEED);
    match cli.command {
        Command::Mint {
            group,
            action,
            label_bits,
            out,
        } => run_mint(&group, action, label_bits, seed, out.as_deref()),
        Command::Verify { note, serial } => {
            run_verify(&note, serial.as_deref(), seed, cli.exact)
        }
        Command::Findh { note } => run_findh(&note, seed, cli.exact),
        Command::Attack {
            attack: AttackCommand::Kgea {
                group,
                trials,
                circuit,
                out,
            },
        } => run_kgea(&group, trials, circuit, seed, cli.exact, out.as_deref()),
        Command::Reduce { reduction } => run_reduce(reduction, seed),
        Command::Rega { rega } => run_rega(rega, seed, cli.exact),
        Command::Lattice { lattice } => run_lattice(lattice, seed),
        Command::Selftest { out } => run_selftest(seed, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => match e.kind() {
            ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            ErrorKind::InvalidSubcommand | ErrorKind::UnknownArgument => {
                return fail(CliError::UnknownCommand(e.to_string()));
            }
            _ => return fail(CliError::Usage(e.to_string())),
        },
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e),
    }
}

fn fail(e: CliError) -> ExitCode {
    let (code, exit) = e.code();
    let object = json!({ "error": { "code": code, "message": e.message() } });
    eprintln!("{object}");
    ExitCode::from(exit)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_classes_map_to_distinct_exit_codes() {
        let cases = [
            CliError::Usage("u".into()).code(),
            CliError::Core(Error::ParamInvalid("p".into())).code(),
            CliError::Core(Error::CapExceeded {
                what: "dim",
                requested: 2,
                limit: 1,
            })
            .code(),
            CliError::Core(Error::QueryBudgetExhausted("oracle")).code(),
            CliError::BadFile("b".into()).code(),
            CliError::Io(std::io::Error::other("x")).code(),
            CliError::CriteriaFailed(1).code(),
        ];
        let mut exits: Vec<u8> = cases.iter().map(|(_, exit)| *exit).collect();
        exits.sort_unstable();
        exits.dedup();
        assert_eq!(exits.len(), cases.len());
        let mut codes: Vec<&str> = cases.iter().map(|(code, _)| *code).collect();
        codes.sort_unstable();
        codes.dedup();
        assert_eq!(codes.len(), cases.len());
    }

    #[test]
    fn residue_lists_parse_with_whitespace() {
        assert_eq!(parse_residues("1, 2,3").unwrap(), vec![1, 2, 3]);
        assert!(parse_residues("1,x").is_err());
    }

    #[test]
    fn discrete_sampling_respects_point_masses() {
        let mut rng = seeded(5);
        let dist = [0.0, 1.0, 0.0];
        for _ in 0..50 {
            assert_eq!(sample_discrete(&dist, &mut rng), 1);
        }
    }

    #[test]
    fn flat_indices_decode_in_row_major_order() {
        let p = demo_params_16();
        assert_eq!(flat_to_residues(5, &p), vec![5]);
    }
}
