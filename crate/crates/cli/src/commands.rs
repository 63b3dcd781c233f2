//! Subcommands.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use longclust_core::{
    corrected_rand, eval_alpha, eval_beta_row, fit, silhouette_scan, simulate_nonregressed,
    simulate_regressed, variation_of_information, FitConfig, FitReport, FlatLabeling, PanelDataset, SimConfig,
};

use crate::error::{CliError, Result};
use crate::indices::{build_indices, load_mapping};
use crate::labels::load_labels;
use crate::panel::{load_panel, save_panel};
use crate::params::{load_params, write_json, ParamsJson, TruthJson};

#[derive(Debug, Parser)]
#[command(name = "longclust", version, about = "Clustering of longitudinal data with time-varying cluster labels")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic panel and its true labels.
    Simulate(SimulateArgs),
    /// Fit the model to a panel CSV.
    Fit(FitArgs),
    /// Compare two labelings (VI and corrected Rand index).
    Eval(EvalArgs),
    /// Tabulate initial or transition probabilities along one covariate.
    Curves(CurvesArgs),
    /// Average silhouette of fitted hard labels for a range of K.
    Silhouette(SilhouetteArgs),
    /// Build a panel of standardized composite indices from raw variables.
    Indices(IndicesArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 10)]
    pub tmax: usize,
    #[arg(long = "K", visible_alias = "k", default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 2)]
    pub p: usize,
    /// Cluster probabilities depend on a random-walk covariate.
    #[arg(long)]
    pub regressed: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_data: PathBuf,
    #[arg(long)]
    pub out_truth: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long = "K", visible_alias = "k")]
    pub k: usize,
    /// Model initial and transition probabilities with the covariates.
    #[arg(long)]
    pub regressed: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// k-means restarts for the starting values.
    #[arg(long, default_value_t = 15)]
    pub restarts: usize,
    /// Relative log-likelihood change that stops the iterations.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iters: usize,
    /// Ridge penalty on the logistic coefficients.
    #[arg(long, default_value_t = 0.0)]
    pub ridge: f64,
    #[arg(long, default_value_t = 1)]
    pub coordinate_passes: usize,
    #[arg(long)]
    pub out_params: Option<PathBuf>,
    #[arg(long)]
    pub out_posteriors: Option<PathBuf>,
    #[arg(long)]
    pub out_trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub labels_a: PathBuf,
    #[arg(long)]
    pub labels_b: PathBuf,
}

#[derive(Debug, Args)]
pub struct CurvesArgs {
    #[arg(long)]
    pub params: PathBuf,
    /// `init` for the initial probabilities, or a 1-based source cluster.
    #[arg(long, default_value = "init")]
    pub row: String,
    /// 1-based covariate that varies along the grid.
    #[arg(long, default_value_t = 1)]
    pub covariate_index: usize,
    /// `lo:hi:points`.
    #[arg(long, default_value = "0:10:101", allow_hyphen_values = true)]
    pub grid: String,
    /// Comma-separated values for all covariates; the varying one is ignored.
    #[arg(long)]
    pub fixed_covariates: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SilhouetteArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub kmin: usize,
    #[arg(long, default_value_t = 6)]
    pub kmax: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub regressed: bool,
    #[arg(long, default_value_t = 15)]
    pub restarts: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IndicesArgs {
    /// Raw CSV with object_id, t and the raw variables.
    #[arg(long)]
    pub raw: PathBuf,
    /// JSON array of {"name": ..., "columns": [...]}.
    #[arg(long)]
    pub mapping: PathBuf,
    /// Standardize within values of this column instead of within `t`.
    #[arg(long)]
    pub period_column: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Fit(a) => cmd_fit(&a),
        Command::Eval(a) => {
            let line = cmd_eval(&a)?;
            println!("{line}");
            Ok(())
        }
        Command::Curves(a) => cmd_curves(&a),
        Command::Silhouette(a) => cmd_silhouette(&a),
        Command::Indices(a) => cmd_indices(&a),
    }
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    let f = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    Ok(std::io::BufWriter::new(f))
}

/// Writes `text` to `path`, or stdout when no path is given.
fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::io(p, e)),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).map_err(|e| CliError::io("<stdout>", e))
        }
    }
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let mut cfg = SimConfig::new(a.n, a.tmax, a.k, a.p, a.seed);
    cfg.regressed = a.regressed;
    let (ds, truth) = if a.regressed {
        simulate_regressed(&cfg)?
    } else {
        simulate_nonregressed(&cfg)?
    };
    save_panel(&a.out_data, &ds)?;
    let ids = ds.objects().iter().map(|o| o.id().to_string());
    write_json(&a.out_truth, &TruthJson::new(&truth, ids, a.seed))?;
    log::info!("wrote {} objects, {} observations", ds.n(), ds.total_observations());
    Ok(())
}

pub fn fit_config(a: &FitArgs) -> FitConfig {
    let mut c = FitConfig::new(a.k);
    if a.regressed {
        c = c.regressed();
    }
    c.seed = a.seed;
    c.kmeans_restarts = a.restarts;
    c.rel_tol = a.tol;
    c.max_iters = a.max_iters;
    c.ridge = a.ridge;
    c.coordinate_passes = a.coordinate_passes;
    c
}

pub fn cmd_fit(a: &FitArgs) -> Result<()> {
    let ds = load_panel(&a.data)?;
    if a.regressed && ds.d() == 0 {
        return Err(CliError::format(format!("{}: --regressed needs w_ columns", a.data.display())));
    }
    let config = fit_config(a);
    let report = fit(&ds, &config)?;
    if let Some(p) = &a.out_params {
        write_json(p, &ParamsJson::from_params(&report.params))?;
    }
    if let Some(p) = &a.out_posteriors {
        let mut w = create(p)?;
        write_posteriors(&mut w, &ds, &report).map_err(|e| CliError::io(p, e))?;
    }
    if let Some(p) = &a.out_trace {
        let mut w = create(p)?;
        write_trace(&mut w, &report.loglik_trace).map_err(|e| CliError::io(p, e))?;
    }
    println!(
        "loglik {} iterations {} converged {}",
        report.loglik(),
        report.iterations,
        report.converged
    );
    if !report.reinitializations.is_empty() {
        log::warn!("{} cluster reinitializations during fitting", report.reinitializations.len());
    }
    if report.separation_warnings > 0 {
        log::warn!(
            "logistic coefficients exceeded the separation bound {} times; consider --ridge",
            report.separation_warnings
        );
    }
    if !report.converged {
        let t = &report.loglik_trace;
        let n = t.len();
        let last_change = if n >= 2 { ((t[n - 1] - t[n - 2]) / t[n - 2]).abs() } else { f64::NAN };
        return Err(CliError::NotConverged {
            iterations: report.iterations,
            last_change,
        });
    }
    Ok(())
}

/// `id,t,p_1..p_K,hard` with one-based `t` and `hard`.
pub fn write_posteriors(w: &mut impl Write, ds: &PanelDataset, report: &FitReport) -> std::io::Result<()> {
    let k = report.params.k();
    let probs: Vec<String> = (1..=k).map(|c| format!("p_{c}")).collect();
    writeln!(w, "id,t,{},hard", probs.join(","))?;
    for ((o, post), hard) in ds.objects().iter().zip(&report.posteriors).zip(&report.hard_labels) {
        for (t, label) in hard.iter().enumerate() {
            let m: Vec<String> = post.marginal(t).iter().map(|v| v.to_string()).collect();
            writeln!(w, "{},{},{},{}", csv_field(o.id()), t + 1, m.join(","), label + 1)?;
        }
    }
    w.flush()
}

pub fn write_trace(w: &mut impl Write, trace: &[f64]) -> std::io::Result<()> {
    writeln!(w, "iteration,loglik")?;
    for (i, v) in trace.iter().enumerate() {
        writeln!(w, "{i},{v}")?;
    }
    w.flush()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn cmd_eval(a: &EvalArgs) -> Result<String> {
    let la = load_labels(&a.labels_a)?;
    let lb = load_labels(&a.labels_b)?;
    eval_line(&la, &lb)
}

pub fn eval_line(a: &FlatLabeling, b: &FlatLabeling) -> Result<String> {
    let vi = variation_of_information(a, b)?;
    let cri = corrected_rand(a, b)?;
    Ok(format!("VI {vi:.6} CRI {cri:.6}"))
}

/// Parses `lo:hi:points`.
pub fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || CliError::format(format!("grid {s:?}: expected lo:hi:points with points >= 2"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if n < 2 || !lo.is_finite() || !hi.is_finite() {
        return Err(bad());
    }
    Ok((0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect())
}

pub fn cmd_curves(a: &CurvesArgs) -> Result<()> {
    let params = load_params(&a.params)?;
    let table = curves_table(&params, a)?;
    emit(a.out.as_deref(), &table)
}

/// CSV `w,prob_1..prob_K` along the grid.
pub fn curves_table(params: &longclust_core::ModelParams, a: &CurvesArgs) -> Result<String> {
    let k = params.k();
    let d = match &params.transitions {
        longclust_core::TransitionModel::Regressed(l) => l.d(),
        longclust_core::TransitionModel::Fixed { .. } => 0,
    };
    let row = if a.row == "init" {
        None
    } else {
        let h: usize = a
            .row
            .parse()
            .ok()
            .filter(|h| (1..=k).contains(h))
            .ok_or_else(|| CliError::format(format!("--row {:?}: expected init or 1..{k}", a.row)))?;
        Some(h - 1)
    };
    let mut base = match &a.fixed_covariates {
        Some(s) => s
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|_| CliError::format(format!("--fixed-covariates: {v:?}"))))
            .collect::<Result<Vec<_>>>()?,
        None => vec![0.0; d],
    };
    if base.len() != d {
        return Err(CliError::format(format!(
            "--fixed-covariates has {} values; the model has d = {d}",
            base.len()
        )));
    }
    if d > 0 && !(1..=d).contains(&a.covariate_index) {
        return Err(CliError::format(format!("--covariate-index must be in 1..={d}")));
    }
    let mut out = String::from("w");
    for c in 1..=k {
        out.push_str(&format!(",prob_{c}"));
    }
    out.push('\n');
    for g in parse_grid(&a.grid)? {
        let w = if d > 0 {
            base[a.covariate_index - 1] = g;
            Some(base.as_slice())
        } else {
            None
        };
        let probs = match row {
            None => eval_alpha(&params.transitions, w)?,
            Some(h) => eval_beta_row(&params.transitions, h, w)?,
        };
        out.push_str(&g.to_string());
        for p in probs {
            out.push_str(&format!(",{p}"));
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn cmd_silhouette(a: &SilhouetteArgs) -> Result<()> {
    if a.kmin > a.kmax {
        return Err(CliError::format("--kmin exceeds --kmax"));
    }
    let ds = load_panel(&a.data)?;
    let mut config = FitConfig::new(a.kmin.max(1));
    if a.regressed {
        config = config.regressed();
    }
    config.seed = a.seed;
    config.kmeans_restarts = a.restarts;
    let ks: Vec<usize> = (a.kmin..=a.kmax).collect();
    let mut out = String::from("K,avg_silhouette\n");
    for (k, value) in silhouette_scan(&ds, &ks, &config) {
        match value {
            Ok(v) => out.push_str(&format!("{k},{v}\n")),
            Err(e) => {
                log::warn!("K = {k}: {e}");
                out.push_str(&format!("{k},NA\n"));
            }
        }
    }
    emit(a.out.as_deref(), &out)
}

pub fn cmd_indices(a: &IndicesArgs) -> Result<()> {
    let mapping = load_mapping(&a.mapping)?;
    let file = std::fs::File::open(&a.raw).map_err(|e| CliError::io(&a.raw, e))?;
    let ds = build_indices(file, &mapping, a.period_column.as_deref()).map_err(|e| match e {
        CliError::Format(m) => CliError::format(format!("{}: {m}", a.raw.display())),
        other => other,
    })?;
    save_panel(&a.out, &ds)
}
