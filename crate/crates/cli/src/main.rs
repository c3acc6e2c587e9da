use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mixrank::collection::RankMode;
use mixrank::ingest::{read_csv_path, write_csv, Schema};
use mixrank::metrics::JklConfig;
use mixrank::selection::SelectionMode;
use mixrank::simgen::generate;
use mixrank_cli::{
    evaluate_saved, fit, reproduce_table1, reselect, write_criterion_csv, FitOptions, Report, Setting,
    TruthFile,
};
use serde::Deserialize;

#[derive(Parser)]
#[command(name = "mixrank", version, about = "Sparse low-rank mixtures of multivariate regressions")]
struct Cli {
    /// Cap on worker threads.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// TOML file with default option values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Report destination; stdout when absent.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic dataset and its generating model.
    Simulate {
        #[arg(long, default_value = "p_lt_n")]
        setting: Setting,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory receiving train.csv, test.csv and truth.json.
        #[arg(long)]
        dir: PathBuf,
    },
    /// Build the model collection on a CSV dataset and select a model.
    Fit {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        schema: SchemaArgs,
        #[command(flatten)]
        opts: FitArgs,
        /// Also write the criterion table as CSV.
        #[arg(long)]
        criterion_csv: Option<PathBuf>,
    },
    /// Re-run model selection on a saved fit report.
    Select {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        selection_mode: Option<SelectionMode>,
        #[arg(long)]
        kappa: Option<f64>,
        #[arg(long)]
        criterion_csv: Option<PathBuf>,
    },
    /// Log-likelihood and, given the truth, divergence metrics of a saved fit.
    Evaluate {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        schema: SchemaArgs,
        #[arg(long, requires = "test")]
        truth: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        #[command(flatten)]
        jkl: JklArgs,
    },
    /// Repeated simulation study on one of the benchmark settings.
    #[command(name = "reproduce-table1")]
    ReproduceTable1 {
        #[arg(long, default_value = "p_lt_n")]
        setting: Setting,
        #[arg(long, default_value_t = 20)]
        runs: usize,
        #[command(flatten)]
        opts: FitArgs,
        #[command(flatten)]
        jkl: JklArgs,
    },
}

#[derive(Args, Default)]
struct SchemaArgs {
    /// Comma-separated response columns (default: columns starting with `y`).
    #[arg(long, value_delimiter = ',')]
    responses: Option<Vec<String>>,
    /// Comma-separated predictor columns (default: columns starting with `x`).
    #[arg(long, value_delimiter = ',')]
    predictors: Option<Vec<String>>,
    #[arg(long)]
    label: Option<String>,
    #[arg(long)]
    center: bool,
    #[arg(long)]
    expand_second_order: bool,
}

#[derive(Args, Default)]
struct FitArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    k_set: Option<Vec<usize>>,
    #[arg(long)]
    grid_size: Option<usize>,
    #[arg(long)]
    rank_min: Option<usize>,
    #[arg(long)]
    rank_max: Option<usize>,
    #[arg(long)]
    rank_mode: Option<RankMode>,
    #[arg(long)]
    selection_mode: Option<SelectionMode>,
    #[arg(long)]
    kappa: Option<f64>,
}

#[derive(Args, Default)]
struct JklArgs {
    /// JKL mixing weight.
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    mc_samples: Option<usize>,
    #[arg(long = "mc-seed")]
    mc_seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    workers: Option<usize>,
    k_set: Option<Vec<usize>>,
    grid_size: Option<usize>,
    rank_min: Option<usize>,
    rank_max: Option<usize>,
    rank_mode: Option<RankMode>,
    selection_mode: Option<SelectionMode>,
    kappa: Option<f64>,
    rho: Option<f64>,
    mc_samples: Option<usize>,
    center: Option<bool>,
    expand_second_order: Option<bool>,
}

fn load_config(path: Option<&Path>) -> Result<FileConfig> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

fn fit_options(a: &FitArgs, f: &FileConfig) -> FitOptions {
    let d = FitOptions::default();
    FitOptions {
        seed: a.seed.or(f.seed).unwrap_or(d.seed),
        k_set: a.k_set.clone().or_else(|| f.k_set.clone()).unwrap_or(d.k_set),
        grid_size: a.grid_size.or(f.grid_size).unwrap_or(d.grid_size),
        rank_min: a.rank_min.or(f.rank_min).unwrap_or(d.rank_min),
        rank_max: a.rank_max.or(f.rank_max).unwrap_or(d.rank_max),
        rank_mode: a.rank_mode.or(f.rank_mode).unwrap_or(d.rank_mode),
        selection_mode: a.selection_mode.or(f.selection_mode).unwrap_or(d.selection_mode),
        kappa: a.kappa.or(f.kappa),
    }
}

fn jkl_config(a: &JklArgs, f: &FileConfig, seed: u64) -> JklConfig {
    let d = JklConfig::default();
    JklConfig {
        rho: a.rho.or(f.rho).unwrap_or(d.rho),
        mc_samples: a.mc_samples.or(f.mc_samples).unwrap_or(d.mc_samples),
        seed: a.mc_seed.unwrap_or(seed),
    }
}

fn schema(a: &SchemaArgs, f: &FileConfig, path: &Path) -> Result<Schema> {
    let mut rdr = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut first = String::new();
    std::io::Read::read_to_string(&mut rdr, &mut first)?;
    let header: Vec<String> =
        first.lines().next().unwrap_or("").split(',').map(|s| s.trim().to_string()).collect();
    let inferred = Schema::infer(&header);
    Ok(Schema {
        responses: a.responses.clone().unwrap_or(inferred.responses),
        predictors: a.predictors.clone().unwrap_or(inferred.predictors),
        label: a.label.clone().or(inferred.label),
        center: a.center || f.center.unwrap_or(false),
        expand_second_order: a.expand_second_order || f.expand_second_order.unwrap_or(false),
    })
}

fn emit(report: &Report, output: Option<&Path>) -> Result<()> {
    match output {
        Some(p) => report.write(p),
        None => {
            print!("{}", report.to_json()?);
            Ok(())
        }
    }
}

fn run(cli: &Cli, file: &FileConfig, report: &mut Report) -> Result<()> {
    match &cli.command {
        Command::Simulate { setting, seed, dir } => {
            let seed = seed.or(file.seed).unwrap_or(0);
            let (train, test, truth) = generate(&setting.sim_config(seed))?;
            std::fs::create_dir_all(dir)?;
            write_csv(std::fs::File::create(dir.join("train.csv"))?, &train)?;
            write_csv(std::fs::File::create(dir.join("test.csv"))?, &test)?;
            let t = serde_json::to_string_pretty(&TruthFile::from(&truth))? + "\n";
            std::fs::write(dir.join("truth.json"), t)?;
        }
        Command::Fit { input, schema: s, opts, criterion_csv } => {
            let data = read_csv_path(input, Some(&schema(s, file, input)?))?;
            let out = fit(&data, &fit_options(opts, file))?;
            if let Some(p) = criterion_csv {
                write_criterion_csv(&out.report.selection.criterion_table, p)?;
            }
            report.fit = Some(out.report);
        }
        Command::Select { report: path, selection_mode, kappa, criterion_csv } => {
            let saved = Report::read(path)?;
            let Some(fit) = saved.fit else { bail!("{} holds no fit", path.display()) };
            let mode = selection_mode.or(file.selection_mode).unwrap_or(fit.options.selection_mode);
            let sel = reselect(&fit, mode, kappa.or(file.kappa))?;
            if let Some(p) = criterion_csv {
                write_criterion_csv(&sel.criterion_table, p)?;
            }
            report.selection = Some(sel);
        }
        Command::Evaluate { report: path, input, schema: s, truth, test, jkl } => {
            let saved = Report::read(path)?;
            let Some(fit) = saved.fit else { bail!("{} holds no fit", path.display()) };
            let sch = schema(s, file, input)?;
            let data = read_csv_path(input, Some(&sch))?;
            let jkl = jkl_config(jkl, file, fit.options.seed);
            let eval = match (truth, test) {
                (Some(t), Some(te)) => {
                    let text = std::fs::read_to_string(t).with_context(|| format!("reading {}", t.display()))?;
                    let truth: TruthFile = serde_json::from_str(&text)?;
                    let test = read_csv_path(te, Some(&sch))?;
                    evaluate_saved(&fit.model, &data, Some((&truth, &test)), &jkl)?
                }
                _ => evaluate_saved(&fit.model, &data, None, &jkl)?,
            };
            report.evaluation = Some(eval);
        }
        Command::ReproduceTable1 { setting, runs, opts, jkl } => {
            let opts = fit_options(opts, file);
            let jkl = jkl_config(jkl, file, opts.seed);
            report.table1 = Some(reproduce_table1(*setting, *runs, &opts, &jkl)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let name = match &cli.command {
        Command::Simulate { .. } => "simulate",
        Command::Fit { .. } => "fit",
        Command::Select { .. } => "select",
        Command::Evaluate { .. } => "evaluate",
        Command::ReproduceTable1 { .. } => "reproduce-table1",
    };
    let mut report = Report::new(name);
    let result = load_config(cli.config.as_deref()).and_then(|file| {
        if let Some(w) = cli.workers.or(file.workers) {
            rayon::ThreadPoolBuilder::new().num_threads(w.max(1)).build_global()?;
        }
        run(&cli, &file, &mut report)
    });
    match result {
        Ok(()) => {
            if name == "simulate" {
                return ExitCode::SUCCESS;
            }
            if let Err(e) = emit(&report, cli.output.as_deref()) {
                eprintln!("error: {e:#}");
                return ExitCode::FAILURE;
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            report.error = Some(format!("{e:#}"));
            let _ = emit(&report, cli.output.as_deref());
            ExitCode::FAILURE
        }
    }
}
