//! Command-line front end: load a decision model, run the estimation
//! pipeline, answer evidence queries, optionally cross-check against the
//! oracles, and emit reports and plot data.

use clap::{Parser, ValueEnum};
use evi_core::model::{parse_model, DecisionModel};
use evi_core::{
    additivity_report, default_queries, nested_mc_evi, plot_data_csv, EngineError, EviPipeline,
    EviReport, EviResult, EvidenceSpec, OracleError, SampleConfig, SamplingError,
};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

/// Panels for the optional quadrature cross-check of each query.
const CHECK_PANELS: usize = 512;

/// Fixed oracle effort: enough iterations for a meaningful standard error
/// while keeping the default cross-check under a second on small models.
const ORACLE_OUTER: usize = 200;
const ORACLE_INNER: usize = 200;

#[derive(Copy, Clone, ValueEnum)]
enum OutputFormat {
    Table,
    Json,
    Csv,
}

#[derive(Parser)]
#[command(
    name = "evi",
    version,
    about = "Estimate the expected value of information for Monte Carlo decision models"
)]
struct RunArgs {
    /// Path to the decision model (JSON)
    #[arg(long)]
    model: PathBuf,

    /// Seed for scenario generation
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Number of Monte Carlo scenarios
    #[arg(long, default_value_t = 10_000)]
    samples: usize,

    /// Evidence query such as "perfect:x1,x2" or "rim:x1=4;perfect:x2"
    /// (repeatable; default is perfect information on each variable)
    #[arg(long)]
    evidence: Vec<String>,

    /// Cross-check the engine against the nested Monte Carlo oracle;
    /// writes additivity.csv and oracle.json into --out
    #[arg(long, requires = "out")]
    oracle: bool,

    /// Re-evaluate every query with the quadrature loss integral and warn
    /// on disagreement
    #[arg(long)]
    quadrature_check: bool,

    /// Report format printed to stdout
    #[arg(long, value_enum, default_value_t = OutputFormat::Table)]
    format: OutputFormat,

    /// Directory that receives report.json and plot.csv
    #[arg(long)]
    out: Option<PathBuf>,
}

enum CliError {
    /// Bad input: unreadable arguments, malformed model, bad evidence.
    Validation(String),
    /// The numbers refused: degenerate regression, failed evaluation.
    Numerical(String),
    /// The filesystem refused.
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Numerical(_) => 2,
            CliError::Io(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Numerical(m) | CliError::Io(m) => m,
        }
    }
}

fn classify_engine(error: EngineError) -> CliError {
    match &error {
        EngineError::Sampling(SamplingError::SampleTooSmall { .. })
        | EngineError::UnknownEvidenceVariable { .. }
        | EngineError::OverlappingEvidence { .. }
        | EngineError::RimBelowOne { .. }
        | EngineError::EvidenceSyntax { .. } => CliError::Validation(error.to_string()),
        _ => CliError::Numerical(error.to_string()),
    }
}

fn classify_oracle(error: OracleError) -> CliError {
    match error {
        OracleError::Engine(inner) => classify_engine(inner),
        other @ OracleError::Evaluation { .. } => CliError::Numerical(other.to_string()),
        other => CliError::Validation(other.to_string()),
    }
}

fn main() -> ExitCode {
    let args = match RunArgs::try_parse() {
        Ok(args) => args,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let start = Instant::now();
    match run_report(&args) {
        Ok(()) => {
            eprintln!("completed in {:.3?}", start.elapsed());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}

fn run_report(args: &RunArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.model)
        .map_err(|e| CliError::Io(format!("reading {}: {e}", args.model.display())))?;
    let model = parse_model(&text)
        .map_err(|e| CliError::Validation(format!("{}: {e}", args.model.display())))?;
    let queries = resolve_queries(args, &model)?;

    let config = SampleConfig {
        sample_size: args.samples,
        seed: args.seed,
    };
    let pipeline = EviPipeline::new(&model, &config).map_err(classify_engine)?;

    let mut results: Vec<EviResult> = queries
        .iter()
        .map(|q| pipeline.query(q).map_err(classify_engine))
        .collect::<Result<_, _>>()?;
    let closed_count = results.len();

    if args.quadrature_check {
        let mut checked_results = Vec::with_capacity(closed_count);
        for (query, closed) in queries.iter().zip(&results) {
            let checked = pipeline
                .query_quadrature(query, CHECK_PANELS)
                .map_err(classify_engine)?;
            if (checked.evi - closed.evi).abs() > 1e-6 * (1.0 + closed.evi.abs()) {
                eprintln!(
                    "warning: query '{}': closed form {} vs quadrature {}",
                    query.label(),
                    closed.evi,
                    checked.evi
                );
            }
            checked_results.push(checked);
        }
        results.extend(checked_results);
    }

    let label = args
        .model
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| args.model.display().to_string());
    let report = EviReport::build(&label, &pipeline, &results);
    for warning in &report.warnings {
        eprintln!("warning: {warning}");
    }

    let rendered = match args.format {
        OutputFormat::Table => report.to_table(),
        OutputFormat::Json => report.to_json(),
        OutputFormat::Csv => report.to_csv(),
    };
    print!("{rendered}");

    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Io(format!("creating {}: {e}", dir.display())))?;
        write_atomic(&dir.join("report.json"), report.to_json().as_bytes())?;
        write_atomic(
            &dir.join("plot.csv"),
            plot_data_csv(&results[..closed_count]).as_bytes(),
        )?;
        if args.oracle {
            write_oracle_artifacts(dir, &model, &config)?;
        }
    }
    Ok(())
}

fn resolve_queries(args: &RunArgs, model: &DecisionModel) -> Result<Vec<EvidenceSpec>, CliError> {
    if args.evidence.is_empty() {
        return Ok(default_queries(model));
    }
    let names = model.variable_names();
    args.evidence
        .iter()
        .map(|text| {
            let spec = EvidenceSpec::parse(text).map_err(classify_engine)?;
            spec.check(&names).map_err(classify_engine)?;
            Ok(spec)
        })
        .collect()
}

fn write_oracle_artifacts(
    dir: &Path,
    model: &DecisionModel,
    config: &SampleConfig,
) -> Result<(), CliError> {
    let additivity = additivity_report(model, config).map_err(classify_oracle)?;
    let mut csv = Vec::new();
    additivity
        .write_csv(&mut csv)
        .map_err(|e| CliError::Io(format!("rendering additivity table: {e}")))?;
    write_atomic(&dir.join("additivity.csv"), &csv)?;

    let all = EvidenceSpec::perfect_on(model.variable_names().iter().map(String::as_str));
    let estimate = nested_mc_evi(model, &all, ORACLE_OUTER, ORACLE_INNER, config.seed)
        .map_err(classify_oracle)?;
    let oracle_json = serde_json::json!({
        "method": estimate.method,
        "value": estimate.value,
        "standard_error": estimate.standard_error,
        "cost": estimate.cost,
        "settings": {
            "outer": ORACLE_OUTER,
            "inner": ORACLE_INNER,
            "seed": config.seed,
            "evidence": all.label(),
        },
    });
    let mut body = serde_json::to_string_pretty(&oracle_json)
        .map_err(|e| CliError::Io(format!("rendering oracle report: {e}")))?;
    body.push('\n');
    write_atomic(&dir.join("oracle.json"), body.as_bytes())
}

/// Writes through a temp file in the destination directory and renames, so
/// a crash never leaves a truncated artifact behind.
fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let io_err = |e: &dyn std::fmt::Display| CliError::Io(format!("writing {}: {e}", path.display()));
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_err(&e))?;
    tmp.write_all(contents).map_err(|e| io_err(&e))?;
    tmp.persist(path).map_err(|e| io_err(&e))?;
    // temp files are created private (0600); published artifacts should not be
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        std::fs::set_permissions(path, std::fs::Permissions::from_mode(0o644))
            .map_err(|e| io_err(&e))?;
    }
    Ok(())
}
