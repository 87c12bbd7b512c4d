use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use mppc_nrf::fit::{self, FitOptions, FitResult, DEFAULT_FIT_CEILING, DEFAULT_NMAX_CANDIDATES};
use mppc_nrf::io::{self, CurveRow, GridSpec, RunConfig};
use mppc_nrf::mc::{self, SimulationReport};
use mppc_nrf::metrics::{self, CurvePoint};
use mppc_nrf::{DetectorParams, Error, Result, StateKind, DEFAULT_TAIL_TOL, VERSION};

#[derive(Parser)]
#[command(name = "mppc-nrf", version, about = "Noise reduction factor of two multi-pixel photon counters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Model NRF against mean photon number per arm.
    Curve(CurveArgs),
    /// Fit (eta, P, n_max) to a measured NRF curve.
    Fit(FitArgs),
    /// Monte Carlo simulation; writes per-pulse photocounts and a report.
    Simulate(SimulateArgs),
    /// Reduce per-pulse photocount files to NRF against photon number.
    Convert(ConvertArgs),
    /// Low-intensity closed-form NRF values and effective efficiency.
    Limits(LimitsArgs),
}

#[derive(Args, Clone)]
struct DetectorArgs {
    /// Pixel quantum efficiency including optical losses.
    #[arg(long, default_value_t = 0.163)]
    eta: f64,
    /// Crosstalk probability.
    #[arg(long = "p-ct", default_value_t = 0.28)]
    p_ct: f64,
    /// Largest resolvable photocount.
    #[arg(long = "n-max", default_value_t = 3)]
    n_max: usize,
    /// Idler-arm efficiency when it differs from the signal arm.
    #[arg(long = "eta-i")]
    eta_i: Option<f64>,
    #[arg(long = "p-ct-i")]
    p_ct_i: Option<f64>,
    #[arg(long = "n-max-i")]
    n_max_i: Option<usize>,
}

impl DetectorArgs {
    fn params(&self) -> Result<(DetectorParams, DetectorParams)> {
        let s = DetectorParams::new(self.eta, self.p_ct, self.n_max)?;
        let i = DetectorParams::new(
            self.eta_i.unwrap_or(self.eta),
            self.p_ct_i.unwrap_or(self.p_ct),
            self.n_max_i.unwrap_or(self.n_max),
        )?;
        Ok((s, i))
    }
}

#[derive(Args)]
struct CurveArgs {
    #[arg(long, default_value = "coherent")]
    state: StateKind,
    #[command(flatten)]
    detector: DetectorArgs,
    #[arg(long = "mean-min", default_value_t = 0.05)]
    mean_min: f64,
    #[arg(long = "mean-max", default_value_t = 5.0)]
    mean_max: f64,
    #[arg(long, default_value_t = 50)]
    points: usize,
    /// Logarithmic grid spacing.
    #[arg(long)]
    log: bool,
    #[arg(long = "tail-tol", default_value_t = DEFAULT_TAIL_TOL)]
    tail_tol: f64,
    /// Curve CSV; standard output when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    /// JSON summary with the config echo and low-intensity limits.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long, default_value = "coherent")]
    state: StateKind,
    /// Aggregated CSV `mean_n,nrf[,nrf_err]`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long = "fit-ceiling", default_value_t = DEFAULT_FIT_CEILING)]
    fit_ceiling: f64,
    #[arg(long = "nmax-candidates", value_delimiter = ',', default_values_t = DEFAULT_NMAX_CANDIDATES)]
    nmax_candidates: Vec<usize>,
    #[arg(long = "tail-tol", default_value_t = DEFAULT_TAIL_TOL)]
    tail_tol: f64,
    /// JSON summary; standard output when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value = "coherent")]
    state: StateKind,
    #[command(flatten)]
    detector: DetectorArgs,
    /// Mean photon number per arm.
    #[arg(long, default_value_t = 1.0)]
    mean: f64,
    #[arg(long, default_value_t = 1_000_000)]
    pulses: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "tail-tol", default_value_t = DEFAULT_TAIL_TOL)]
    tail_tol: f64,
    /// Per-pulse CSV `pulse,n_s,n_i`.
    #[arg(long)]
    output: Option<PathBuf>,
    /// JSON report; standard output when omitted.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args)]
struct ConvertArgs {
    /// Per-pulse CSV files, one per intensity setting.
    #[arg(long, num_args = 1..)]
    input: Vec<PathBuf>,
    /// Per-pulse CSV recorded with the source blocked.
    #[arg(long)]
    dark: Option<PathBuf>,
    /// Single mean photocount to convert instead of reading files.
    #[arg(long = "mean-counts")]
    mean_counts: Option<f64>,
    /// Effective efficiency (1 + P) eta used for the conversion.
    #[arg(long = "eta-e", default_value_t = 0.17)]
    eta_e: f64,
    /// Uncertainty of eta_E, propagated multiplicatively to the photon number.
    #[arg(long = "eta-e-err")]
    eta_e_err: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Aggregated CSV; standard output when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct LimitsArgs {
    #[arg(long, default_value_t = 0.163)]
    eta: f64,
    #[arg(long = "p-ct", default_value_t = 0.28)]
    p_ct: f64,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Serialize)]
struct Limits {
    nrf_coherent: f64,
    nrf_sv: f64,
    effective_efficiency: f64,
}

impl Limits {
    fn of(params: &DetectorParams) -> Self {
        Limits {
            nrf_coherent: metrics::limit_nrf_coherent(params.p_ct),
            nrf_sv: metrics::limit_nrf_sv(params.p_ct, params.eta),
            effective_efficiency: metrics::effective_efficiency(params.eta, params.p_ct),
        }
    }
}

#[derive(Serialize)]
struct Summary<'a> {
    version: &'static str,
    config: &'a RunConfig,
    limits: Option<Limits>,
    curve: Option<&'a [CurvePoint]>,
    fit: Option<&'a FitResult>,
    simulation: Option<&'a SimulationReport>,
    analytic_nrf: Option<f64>,
}

impl<'a> Summary<'a> {
    fn new(config: &'a RunConfig) -> Self {
        Summary {
            version: VERSION,
            config,
            limits: None,
            curve: None,
            fit: None,
            simulation: None,
            analytic_nrf: None,
        }
    }
}

fn write_text(text: &str, path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn run_curve(args: CurveArgs) -> Result<()> {
    let (params_s, params_i) = args.detector.params()?;
    let grid = GridSpec {
        min: args.mean_min,
        max: args.mean_max,
        count: args.points,
        log: args.log,
    };
    let curve = metrics::nrf_curve(args.state, &params_s, &params_i, &grid.points()?, args.tail_tol)?;
    let rows: Vec<CurveRow> = curve
        .iter()
        .map(|p| CurveRow {
            mean_photons: p.mean_photons,
            nrf: p.nrf,
            nrf_err: None,
        })
        .collect();
    match &args.output {
        Some(path) => io::emit_curve_csv(&rows, path)?,
        None => io::write_curve_csv(&rows, std::io::stdout().lock())?,
    }
    if let Some(path) = &args.summary {
        let config = RunConfig {
            subcommand: "curve".into(),
            state: args.state,
            params_s,
            params_i,
            grid: Some(grid),
            mean: None,
            pulses: None,
            seed: None,
            nmax_candidates: vec![],
            fit_ceiling: DEFAULT_FIT_CEILING,
            inputs: vec![],
            output: args.output.clone(),
            tail_tol: args.tail_tol,
        };
        let mut summary = Summary::new(&config);
        summary.limits = Some(Limits::of(&params_s));
        summary.curve = Some(&curve);
        io::emit_summary_json(&summary, path)?;
    }
    Ok(())
}

fn run_fit(args: FitArgs) -> Result<()> {
    let dataset = io::ingest_dataset_csv(&args.input, args.state, args.fit_ceiling)?;
    let options = FitOptions {
        tail_tol: args.tail_tol,
        ..FitOptions::default()
    };
    let result = fit::fit(&dataset, &args.nmax_candidates, &options)?;
    let fitted = DetectorParams::new(result.eta_hat, result.p_hat, result.n_max_hat)?;
    let config = RunConfig {
        subcommand: "fit".into(),
        state: args.state,
        params_s: fitted,
        params_i: fitted,
        grid: None,
        mean: None,
        pulses: None,
        seed: None,
        nmax_candidates: args.nmax_candidates.clone(),
        fit_ceiling: args.fit_ceiling,
        inputs: vec![args.input.clone()],
        output: args.output.clone(),
        tail_tol: args.tail_tol,
    };
    let mut summary = Summary::new(&config);
    summary.limits = Some(Limits::of(&fitted));
    summary.fit = Some(&result);
    write_text(&io::summary_json_string(&summary)?, args.output.as_deref())
}

fn run_simulate(args: SimulateArgs) -> Result<()> {
    let (params_s, params_i) = args.detector.params()?;
    let (report, pulses) = mc::simulate_pulses(args.state, args.mean, &params_s, &params_i, args.pulses, args.seed)?;
    if let Some(path) = &args.output {
        io::emit_pulses_csv(&pulses, path)?;
    }
    let analytic = if args.mean > 0.0 {
        Some(mc::analytic_nrf(&report, args.tail_tol)?)
    } else {
        None
    };
    let config = RunConfig {
        subcommand: "simulate".into(),
        state: args.state,
        params_s,
        params_i,
        grid: None,
        mean: Some(args.mean),
        pulses: Some(args.pulses),
        seed: Some(args.seed),
        nmax_candidates: vec![],
        fit_ceiling: DEFAULT_FIT_CEILING,
        inputs: vec![],
        output: args.output.clone(),
        tail_tol: args.tail_tol,
    };
    let mut summary = Summary::new(&config);
    summary.limits = Some(Limits::of(&params_s));
    summary.simulation = Some(&report);
    summary.analytic_nrf = analytic;
    write_text(&io::summary_json_string(&summary)?, args.summary.as_deref())
}

fn run_convert(args: ConvertArgs) -> Result<()> {
    if let Some(counts) = args.mean_counts {
        let line = match args.eta_e_err {
            Some(err) => {
                let (n, e) = io::counts_to_photons_with_error(counts, args.eta_e, err)?;
                format!("{},{}\n", io::format_sig12(n), io::format_sig12(e))
            }
            None => format!("{}\n", io::format_sig12(io::counts_to_photons(counts, args.eta_e)?)),
        };
        return write_text(&line, args.output.as_deref());
    }
    if args.input.is_empty() {
        return Err(Error::InvalidParameter {
            name: "input",
            reason: "give --input files or --mean-counts".into(),
        });
    }

    let (dark_s, dark_i) = match &args.dark {
        Some(path) => {
            let dark = io::compute_nrf_from_records(&io::ingest_pulses_csv(path)?);
            match dark {
                Ok(d) => (d.mean_s, d.mean_i),
                // An all-zero dark run has nothing to subtract.
                Err(Error::Degenerate(_)) => (0.0, 0.0),
                Err(e) => return Err(e),
            }
        }
        None => (0.0, 0.0),
    };

    let mut out = String::from("mean_n,nrf,nrf_err");
    if args.eta_e_err.is_some() {
        out.push_str(",mean_n_err");
    }
    out.push('\n');
    for (idx, path) in args.input.iter().enumerate() {
        let records = io::ingest_pulses_csv(path)?;
        let raw = io::compute_nrf_from_records(&records)?;
        let (mean_s, mean_i) = io::subtract_background(raw.mean_s, raw.mean_i, dark_s, dark_i);
        let total = mean_s + mean_i;
        if total <= 0.0 {
            return Err(Error::Degenerate(format!(
                "{}: no photocounts left after background subtraction",
                path.display()
            )));
        }
        // Only the means are background corrected; the variance is not.
        let nrf = raw.variance / total;
        let table = io::records_to_table(&records);
        let nrf_err = mc::bootstrap_nrf_error(&table, 200, args.seed.wrapping_add(idx as u64))
            .ok()
            .map(|e| e * (raw.mean_s + raw.mean_i) / total);
        let mean_counts = total / 2.0;
        let row = match args.eta_e_err {
            Some(err) => {
                let (n, e) = io::counts_to_photons_with_error(mean_counts, args.eta_e, err)?;
                vec![n, nrf, nrf_err.unwrap_or(f64::NAN), e]
            }
            None => vec![
                io::counts_to_photons(mean_counts, args.eta_e)?,
                nrf,
                nrf_err.unwrap_or(f64::NAN),
            ],
        }
        .into_iter()
        .map(|v| if v.is_nan() { String::new() } else { io::format_sig12(v) })
        .collect::<Vec<_>>();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    write_text(&out, args.output.as_deref())
}

fn run_limits(args: LimitsArgs) -> Result<()> {
    let params = DetectorParams::new(args.eta, args.p_ct, 1)?;
    let limits = Limits::of(&params);
    write_text(&io::summary_json_string(&limits)?, args.output.as_deref())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Curve(a) => run_curve(a),
        Command::Fit(a) => run_fit(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Convert(a) => run_convert(a),
        Command::Limits(a) => run_limits(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
