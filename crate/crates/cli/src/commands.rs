//! The four subcommands. Each writes its files into the output directory and
//! prints a one-line summary per file on stdout.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use duality_core::diagnostics::{build_report, duality_suite, trial_passes, DiagnosticsReport, DualityTrial};
use duality_core::gibbs::{default_estimands, run_chains};
use duality_core::output::{fmt_f64, to_json_string, CsvWriter};
use duality_core::{cavi_run, estimate, AnalyticMarginals, ChainTrace, Estimate, MeanFieldState};
use serde::{Deserialize, Serialize};

use crate::config::{self, Format, RunConfig};
use crate::{CliError, CommonArgs, DiagnoseArgs, Outcome, DEFAULT_OUT, OUT_ENV};

struct Prepared {
    config: RunConfig,
    model: Box<dyn AnalyticMarginals>,
    out: PathBuf,
}

fn prepare(args: &CommonArgs) -> Result<Prepared, CliError> {
    let mut config = config::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.override_seed(seed);
    }
    if args.parallel_chains == 0 {
        return Err(CliError::Config("--parallel-chains must be at least 1".into()));
    }
    let model = config.model.build()?;
    let out = args
        .out
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
        .or_else(|| config.output.directory.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    fs::create_dir_all(&out)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", out.display())))?;
    Ok(Prepared { config, model, out })
}

fn write_file<F>(path: &Path, f: F) -> Result<(), CliError>
where
    F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
{
    let file = File::create(path).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    f(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = to_json_string(value).map_err(|e| CliError::Runtime(format!("serializing {}: {e}", path.display())))?;
    write_file(path, |w| w.write_all(text.as_bytes()))
}

#[derive(Debug, Serialize)]
struct NamedEstimate {
    name: String,
    mean: f64,
    std_error: Option<f64>,
    n: usize,
}

#[derive(Debug, Serialize)]
struct EstimatesFile {
    family: String,
    block_dims: Vec<usize>,
    chains: usize,
    seeds: Vec<u64>,
    burn_in: usize,
    samples_per_chain: Vec<usize>,
    estimates: Vec<NamedEstimate>,
}

/// Saved mean-field state, as written by `run-cavi` and read by `diagnose --state`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateFile {
    pub family: String,
    pub block_dims: Vec<usize>,
    #[serde(flatten)]
    pub state: MeanFieldState,
}

fn trace_path(out: &Path, chains: usize, c: usize) -> PathBuf {
    if chains == 1 {
        out.join("trace.csv")
    } else {
        out.join(format!("trace_chain{}.csv", c + 1))
    }
}

fn chains(p: &Prepared, args: &CommonArgs) -> Result<Vec<ChainTrace>, CliError> {
    let cfg = p.config.gibbs()?;
    Ok(run_chains(p.model.as_ref(), cfg, args.parallel_chains)?)
}

pub fn run_gibbs(args: &CommonArgs) -> Result<Outcome, CliError> {
    let p = prepare(args)?;
    let traces = chains(&p, args)?;
    for (c, t) in traces.iter().enumerate() {
        write_file(&trace_path(&p.out, traces.len(), c), |w| t.write_csv(w))?;
    }
    let dec = p.model.decomposition();
    let mut estimates = Vec::new();
    for e in default_estimands(dec) {
        let parts = traces.iter().map(|t| estimate(t, &e)).collect::<Result<Vec<_>, _>>()?;
        let pooled = Estimate::pool(&parts)?;
        estimates.push(NamedEstimate {
            name: e.name(dec),
            mean: pooled.mean,
            std_error: pooled.std_error,
            n: pooled.n,
        });
    }
    let file = EstimatesFile {
        family: p.model.family().to_string(),
        block_dims: dec.block_dims().to_vec(),
        chains: traces.len(),
        seeds: traces.iter().map(|t| t.seed).collect(),
        burn_in: traces[0].burn_in,
        samples_per_chain: traces.iter().map(ChainTrace::len).collect(),
        estimates,
    };
    write_json(&p.out.join("estimates.json"), &file)?;
    Ok(Outcome::Passed)
}

pub fn run_cavi(args: &CommonArgs) -> Result<Outcome, CliError> {
    let p = prepare(args)?;
    let state = cavi_run(p.model.as_ref(), p.config.cavi()?)?;
    if !state.converged {
        println!(
            "cavi did not converge within {} cycles (last change {})",
            state.cycles,
            fmt_f64(state.last_change)
        );
    }
    let file = StateFile {
        family: p.model.family().to_string(),
        block_dims: p.model.decomposition().block_dims().to_vec(),
        state,
    };
    write_json(&p.out.join("cavi_state.json"), &file)?;
    Ok(Outcome::Passed)
}

fn load_state(path: &Path, model: &dyn AnalyticMarginals) -> Result<MeanFieldState, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let file: StateFile =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if file.family != model.family() || file.block_dims != model.decomposition().block_dims() {
        return Err(CliError::Config(format!(
            "{} holds a {} state with block dimensions {:?}, but the model is {} with {:?}",
            path.display(),
            file.family,
            file.block_dims,
            model.family(),
            model.decomposition().block_dims()
        )));
    }
    file.state
        .check_against(model)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(file.state)
}

pub fn diagnose(args: &DiagnoseArgs) -> Result<Outcome, CliError> {
    let p = prepare(&args.common)?;
    let model = p.model.as_ref();
    let state = match &args.state {
        Some(path) => load_state(path, model)?,
        None => cavi_run(model, p.config.cavi()?)?,
    };
    let traces = chains(&p, &args.common)?;
    let mut report: DiagnosticsReport = build_report(model, &traces, &state, &p.config.diagnostics)?;
    report.config = Some(
        serde_json::to_value(&p.config).map_err(|e| CliError::Runtime(format!("echoing config: {e}")))?,
    );
    if p.config.output.formats.contains(&Format::Json) {
        write_json(&p.out.join("report.json"), &report)?;
    }
    if p.config.output.formats.contains(&Format::Csv) {
        write_file(&p.out.join("report.csv"), |w| report.write_csv(w))?;
    }
    println!(
        "{} checks, {} failed",
        report.checks.len(),
        report.failures.len()
    );
    for f in &report.failures {
        eprintln!("failed: {f}");
    }
    for f in &report.flags {
        println!("flag: {f}");
    }
    Ok(if report.passed {
        Outcome::Passed
    } else {
        Outcome::DiagnosticsFailed
    })
}

fn write_gaps<W: Write>(w: W, trials: &[DualityTrial]) -> std::io::Result<()> {
    let mut csv = CsvWriter::new(w);
    csv.row(&["trial", "family", "gap", "at_optimum"])?;
    for t in trials {
        csv.row(&[
            t.trial.to_string(),
            t.family.name().to_string(),
            fmt_f64(t.gap),
            t.at_optimum.to_string(),
        ])?;
    }
    csv.flush()
}

pub fn verify_duality(args: &CommonArgs) -> Result<Outcome, CliError> {
    let p = prepare(args)?;
    let d = &p.config.duality;
    if d.trials == 0 {
        return Err(CliError::Config("duality.trials must be at least 1".into()));
    }
    if d.families.is_empty() {
        return Err(CliError::Config("duality.families must not be empty".into()));
    }
    let mut all = Vec::new();
    for &family in &d.families {
        all.extend(duality_suite(family, d.trials, d.seed)?);
    }
    write_file(&p.out.join("duality_gaps.csv"), |w| write_gaps(w, &all))?;
    let failed: Vec<&DualityTrial> = all.iter().filter(|t| !trial_passes(t)).collect();
    let min_gap = all.iter().map(|t| t.gap).fold(f64::INFINITY, f64::min);
    println!("{} problems, {} failed, smallest gap {}", all.len(), failed.len(), fmt_f64(min_gap));
    for t in &failed {
        eprintln!(
            "failed: {} trial {} (at_optimum = {}): gap {}",
            t.family.name(),
            t.trial,
            t.at_optimum,
            fmt_f64(t.gap)
        );
    }
    Ok(if failed.is_empty() {
        Outcome::Passed
    } else {
        Outcome::DiagnosticsFailed
    })
}
