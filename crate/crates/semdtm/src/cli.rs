//! `semdtm` command line.
//!
//! Exit codes: 0 success, 2 contract violation (enforce mode), 3 spec or
//! parse error, 4 ensemble disagreement, 5 I/O failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use semdtm_core::campaign::{run_baseline, CampaignError};
use semdtm_core::dsl::{check, list_predicates, parse_constraints, Phase};
use semdtm_core::ensemble::{shipped_set, EnsembleError, SHIPPED_SETS};
use semdtm_core::module::{Param, Params};
use semdtm_core::{
    inject, run_campaign, run_ensemble, ArrayMap, CampaignConfig, FaultKind, FaultSpec, Mode,
    NdArray,
};

use crate::io::{ensure_dir, write_atomic};
use crate::pipeline::{load_pipeline, read_array, Pipeline, ReadError, SpecError};
use crate::provenance::{export_report, ReportFormat};
use crate::reports::{CampaignDoc, EnsembleDoc, InjectionJson};
use crate::runner::{run_chain_in_order, RunChainError};
use crate::Settings;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VIOLATION: i32 = 2;
pub const EXIT_SPEC: i32 = 3;
pub const EXIT_DISAGREEMENT: i32 = 4;
pub const EXIT_IO: i32 = 5;

pub const CAMPAIGN_FILE: &str = "campaign.json";
pub const ENSEMBLE_FILE: &str = "ensemble.json";

#[derive(Debug, Parser)]
#[command(
    name = "semdtm",
    version,
    about = "Contract-checked array transformation chains"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// enforce withholds outputs of failing stages and halts; observe flags only
    #[arg(long, global = true, default_value = "enforce")]
    pub mode: Mode,
    /// Output directory for every file a command writes
    #[arg(long, global = true, default_value = "./out")]
    pub out: PathBuf,
    /// Master seed for every random choice
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Absolute tolerance for ensemble agreement
    #[arg(long, global = true, default_value = "1e-9")]
    pub tol: f64,
}

impl GlobalArgs {
    fn settings(&self) -> Settings {
        Settings {
            mode: self.mode,
            out: self.out.display().to_string(),
            seed: self.seed,
            tol: self.tol,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a grid against a constraint expression
    Check {
        grid: PathBuf,
        expr: String,
        /// Extra arrays for relational predicates, as NAME=FILE
        #[arg(long = "with", value_name = "NAME=FILE")]
        with: Vec<String>,
    },
    /// Run a pipeline spec, persisting every stage output and provenance
    Run {
        spec: PathBuf,
        /// Format of the stage report printed to standard output
        #[arg(long, default_value = "text")]
        report: ReportFormat,
    },
    /// Run a seeded fault-injection campaign against a pipeline spec
    Campaign {
        spec: PathBuf,
        /// Comma-separated fault kinds; all kinds when omitted
        #[arg(long, value_delimiter = ',')]
        kinds: Vec<FaultKind>,
        /// Trials per kind
        #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
        trials: u64,
        /// Compare faulted stages against alternate implementations when no contract fires
        #[arg(long)]
        ensemble: bool,
        /// Also run this many uninjected trials on random sources
        #[arg(long, value_name = "TRIALS")]
        baseline: Option<u64>,
    },
    /// Run a shipped variant set and vote on its outputs
    Ensemble {
        set: String,
        /// Input files; several files are stacked into one input
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Parameter as NAME=VALUE or NAME=V1,V2,...
        #[arg(long = "param", value_name = "NAME=VALUE")]
        params: Vec<String>,
        /// Replace the last variant with a faulted copy
        #[arg(long, value_name = "KIND[:MAGNITUDE]")]
        inject: Option<String>,
    },
    /// List the constraint predicates
    Predicates,
}

struct Failure {
    code: i32,
    message: String,
}

fn fail(code: i32, message: impl std::fmt::Display) -> Failure {
    Failure {
        code,
        message: message.to_string(),
    }
}

fn spec_failure(e: SpecError) -> Failure {
    let code = if e.is_io() { EXIT_IO } else { EXIT_SPEC };
    fail(code, e)
}

fn read_failure(e: ReadError) -> Failure {
    match e {
        ReadError::Io { .. } => fail(EXIT_IO, e),
        ReadError::Parse { .. } => fail(EXIT_SPEC, e),
    }
}

fn load(spec: &Path) -> Result<(Pipeline, ArrayMap), Failure> {
    let p = load_pipeline(spec).map_err(spec_failure)?;
    let sources = p.read_sources().map_err(read_failure)?;
    Ok((p, sources))
}

/// Parses arguments and runs one command. Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{text}");
                return EXIT_SPEC;
            }
            let _ = write!(out, "{text}");
            return EXIT_OK;
        }
    };
    match dispatch(&cli, out) {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn dispatch(cli: &Cli, out: &mut dyn Write) -> Result<i32, Failure> {
    let g = &cli.global;
    if !(g.tol.is_finite() && g.tol >= 0.0) {
        return Err(fail(
            EXIT_SPEC,
            format!("--tol must be finite and >= 0, got {}", g.tol),
        ));
    }
    match &cli.command {
        Command::Check { grid, expr, with } => cmd_check(grid, expr, with, out),
        Command::Run { spec, report } => cmd_run(spec, *report, &g.settings(), out),
        Command::Campaign {
            spec,
            kinds,
            trials,
            ensemble,
            baseline,
        } => cmd_campaign(
            spec,
            kinds,
            *trials as usize,
            *ensemble,
            *baseline,
            &g.settings(),
            out,
        ),
        Command::Ensemble {
            set,
            inputs,
            params,
            inject,
        } => cmd_ensemble(set, inputs, params, inject.as_deref(), &g.settings(), out),
        Command::Predicates => {
            for p in list_predicates() {
                let params: Vec<String> = p
                    .params
                    .iter()
                    .map(|(n, t)| format!("{n}:{}", t.as_str()))
                    .collect();
                let _ = writeln!(
                    out,
                    "{:<18} {:<3} ({}) {}",
                    p.name,
                    p.arity_label(),
                    params.join(", "),
                    p.description
                );
            }
            Ok(EXIT_OK)
        }
    }
}

fn cmd_check(
    grid: &Path,
    expr: &str,
    with: &[String],
    out: &mut dyn Write,
) -> Result<i32, Failure> {
    let expr = parse_constraints(expr).map_err(|e| fail(EXIT_SPEC, e))?;
    let subject = read_array(grid).map_err(read_failure)?.with_name("in");
    let mut context = ArrayMap::new();
    for w in with {
        let Some((name, path)) = w.split_once('=') else {
            return Err(fail(
                EXIT_SPEC,
                format!("--with expects NAME=FILE, got '{w}'"),
            ));
        };
        let a = read_array(Path::new(path)).map_err(read_failure)?;
        context.insert(name.to_string(), a.with_name(name));
    }
    context.insert("in".into(), subject.clone());
    let violations =
        check(&expr, &subject, &context, Phase::Pre).map_err(|e| fail(EXIT_SPEC, e))?;
    for v in &violations {
        let _ = writeln!(
            out,
            "{} {} observed={} expected {}",
            v.predicate, v.location, v.observed, v.expectation
        );
    }
    Ok(if violations.is_empty() {
        EXIT_OK
    } else {
        EXIT_VIOLATION
    })
}

fn cmd_run(
    spec: &Path,
    report: ReportFormat,
    settings: &Settings,
    out: &mut dyn Write,
) -> Result<i32, Failure> {
    let (p, sources) = load(spec)?;
    let order: Vec<usize> = (0..p.chain.stages.len()).collect();
    let result = run_chain_in_order(&p.chain, &sources, settings, &order).map_err(|e| match e {
        RunChainError::Io(e) => fail(EXIT_IO, e),
        RunChainError::Chain(e) => fail(EXIT_SPEC, e),
    })?;
    let _ = write!(out, "{}", export_report(&result.provenance, report));
    Ok(match &result.run.halted_at {
        Some(_) if settings.mode == Mode::Enforce => EXIT_VIOLATION,
        _ => EXIT_OK,
    })
}

fn campaign_failure(e: CampaignError) -> Failure {
    fail(EXIT_SPEC, e)
}

fn cmd_campaign(
    spec: &Path,
    kinds: &[FaultKind],
    trials: usize,
    ensemble: bool,
    baseline: Option<u64>,
    settings: &Settings,
    out: &mut dyn Write,
) -> Result<i32, Failure> {
    let (p, sources) = load(spec)?;
    let kinds = if kinds.is_empty() {
        FaultKind::ALL.to_vec()
    } else {
        kinds.to_vec()
    };
    let mut config = CampaignConfig::new(kinds.clone(), trials, settings.seed);
    config.ensemble = ensemble;
    config.tol = settings.tol;
    let report = run_campaign(&p.chain, &sources, &config).map_err(campaign_failure)?;
    let mut doc = CampaignDoc::new(settings, &spec.display().to_string(), &kinds, report);
    if let Some(n) = baseline {
        let b = run_baseline(&p.chain, &sources, n.max(1) as usize, settings.seed)
            .map_err(campaign_failure)?;
        doc.baseline = Some(b);
    }
    write_report(settings, CAMPAIGN_FILE, &doc.to_json())?;
    let _ = write!(out, "{}", doc.to_text());
    Ok(EXIT_OK)
}

fn write_report(settings: &Settings, name: &str, text: &str) -> Result<(), Failure> {
    let dir = Path::new(&settings.out);
    ensure_dir(dir).map_err(|e| fail(EXIT_IO, e))?;
    write_atomic(&dir.join(name), text.as_bytes()).map_err(|e| fail(EXIT_IO, e))
}

/// Parses `NAME=VALUE` or `NAME=V1,V2,...` (brackets optional).
pub fn parse_param(text: &str) -> Result<(String, Param), String> {
    let (name, value) = text
        .split_once('=')
        .ok_or_else(|| format!("parameter '{text}' must be NAME=VALUE"))?;
    let bracketed = value.starts_with('[') && value.ends_with(']');
    let body = if bracketed {
        &value[1..value.len() - 1]
    } else {
        value
    };
    let values = body
        .split(',')
        .map(|t| {
            semdtm_core::num::parse_real(t.trim())
                .ok_or_else(|| format!("parameter {name}: malformed number '{t}'"))
        })
        .collect::<Result<Vec<f64>, String>>()?;
    let param = if bracketed || values.len() > 1 {
        Param::Array(values)
    } else {
        Param::Scalar(values[0])
    };
    Ok((name.to_string(), param))
}

fn default_magnitude(kind: FaultKind) -> f64 {
    match kind {
        FaultKind::IndexShift => 1.0,
        FaultKind::UnitScale => 10.0,
        FaultKind::ParamPerturb => 0.1,
        _ => 0.0,
    }
}

fn parse_inject(text: &str) -> Result<(FaultKind, f64), String> {
    let (kind, mag) = match text.split_once(':') {
        Some((k, m)) => (k, Some(m)),
        None => (text, None),
    };
    let kind: FaultKind = kind.parse()?;
    let magnitude = match mag {
        Some(m) => {
            semdtm_core::num::parse_real(m).ok_or_else(|| format!("malformed magnitude '{m}'"))?
        }
        None => default_magnitude(kind),
    };
    Ok((kind, magnitude))
}

fn ensemble_failure(e: EnsembleError) -> Failure {
    match e {
        EnsembleError::UnknownSet(_) => fail(
            EXIT_SPEC,
            format!("{e} (shipped sets: {})", SHIPPED_SETS.join(", ")),
        ),
        other => fail(EXIT_SPEC, other),
    }
}

fn cmd_ensemble(
    set: &str,
    inputs: &[PathBuf],
    params: &[String],
    inject_arg: Option<&str>,
    settings: &Settings,
    out: &mut dyn Write,
) -> Result<i32, Failure> {
    let params: Params = params
        .iter()
        .map(|p| parse_param(p))
        .collect::<Result<_, _>>()
        .map_err(|e| fail(EXIT_SPEC, e))?;
    let mut vs = shipped_set(set, params).map_err(ensemble_failure)?;
    let arrays = inputs
        .iter()
        .map(|p| read_array(p).map_err(read_failure))
        .collect::<Result<Vec<_>, _>>()?;
    let slots = vs.variants()[0].input_slots().to_vec();
    let [slot] = slots.as_slice() else {
        return Err(fail(
            EXIT_SPEC,
            format!("variant set {set} takes {} inputs", slots.len()),
        ));
    };
    let input = if let [one] = arrays.as_slice() {
        one.clone()
    } else {
        NdArray::stack(&arrays.iter().collect::<Vec<_>>()).map_err(|e| fail(EXIT_SPEC, e))?
    };
    let bound: ArrayMap = [(slot.clone(), input.with_name(slot.clone()))].into();

    let mut injected = None;
    if let Some(text) = inject_arg {
        let (kind, magnitude) = parse_inject(text).map_err(|e| fail(EXIT_SPEC, e))?;
        let last = vs.variants().len() - 1;
        let victim = &vs.variants()[last];
        let target = if kind.targets_output() {
            victim.output_slots().first().cloned()
        } else {
            victim.params.keys().next().cloned()
        }
        .ok_or_else(|| fail(EXIT_SPEC, format!("{kind} has no target in {}", victim.id)))?;
        let fault = FaultSpec::new(kind, &victim.id, &target, magnitude, settings.seed);
        let faulted = inject(victim, &fault).map_err(|e| fail(EXIT_SPEC, e))?;
        injected = Some(InjectionJson {
            variant: victim.id.clone(),
            fault,
        });
        vs = vs.replace(last, faulted).map_err(ensemble_failure)?;
    }

    let report = run_ensemble(&vs, &bound, settings.tol).map_err(ensemble_failure)?;
    let doc = EnsembleDoc::new(settings, set, &report, injected);
    write_report(settings, ENSEMBLE_FILE, &doc.to_json())?;
    let _ = write!(out, "{}", doc.to_text());
    Ok(if report.unanimous || report.consensus.is_some() {
        EXIT_OK
    } else {
        EXIT_DISAGREEMENT
    })
}
