//! Command-line front end for the SSL disparity experiments.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ssl_disparity::harness::{
    self, bounds_report, evaluate, files, map_seeds, prepare_data, read_data, read_models,
    seed_dir, train_models, write_data, write_json, write_models, ExperimentConfig, Setting,
};
use ssl_disparity::mitigation::BalanceMode;
use ssl_disparity::ssl::Trace;
use ssl_disparity::Error;

#[derive(Parser)]
#[command(name = "ssl-disparity", version, about = "Disparate benefit of semi-supervised learning across sub-populations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw (or load) each seed's train and test data into seed_<s>/.
    GenData(Common),
    /// Train baseline, semi and ideal models on the data written by gen-data.
    Train(Common),
    /// Write seed_<s>/metrics.json from the trained models.
    Evaluate(Common),
    /// Write seed_<s>/bounds.json; needs hidden truth in the training data.
    Bounds(Common),
    /// All stages for every seed, then the aggregate.
    Run(Common),
    /// Run a family of settings into <out>/<setting>/ and a combined table.
    Sweep(SweepArgs),
    /// Recompute aggregate.json and table.csv from per-seed metrics.
    Report(ReportArgs),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to the config's output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated seeds replacing the config's list.
    #[arg(long, value_delimiter = ',')]
    seed_list: Option<Vec<u64>>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Total labeled counts, one setting each.
    #[arg(long, value_delimiter = ',', conflicts_with = "balance")]
    labels: Option<Vec<usize>>,
    /// Balance modes (none, balance_labeled, balance_both), one setting each.
    #[arg(long, value_delimiter = ',')]
    balance: Option<Vec<String>>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    out: PathBuf,
    /// Row label in table.csv.
    #[arg(long, default_value = "run")]
    setting: String,
}

enum Failure {
    Usage(String),
    Lib(Error),
    /// Already printed; carries the exit status.
    Reported(u8),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn exit_status(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 1,
        Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 1,
        Error::Diverged { .. } => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_status(&e))
        }
        Err(Failure::Reported(code)) => ExitCode::from(code),
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::GenData(c) => per_seed(&c, |cfg, s, dir| write_data(dir, &prepare_data(cfg, s)?)),
        Command::Train(c) => per_seed(&c, |cfg, s, dir| {
            let data = read_data(cfg, dir)?;
            let mut trace = Trace::new(Some(&data.test));
            let trained = train_models(cfg, s, &data, Some(&mut trace))?;
            write_models(dir, &trained, &trace)
        }),
        Command::Evaluate(c) => per_seed(&c, |cfg, _, dir| {
            let data = read_data(cfg, dir)?;
            let t = read_models(cfg, dir)?;
            let m = evaluate(&t.baseline, &t.semi, &t.ideal, &data.test, data.full.groups())?;
            write_json(&dir.join(files::METRICS), &m)
        }),
        Command::Bounds(c) => per_seed(&c, |cfg, _, dir| {
            let data = read_data(cfg, dir)?;
            let t = read_models(cfg, dir)?;
            write_json(&dir.join(files::BOUNDS), &bounds_report(&t, &data.test, cfg.delta)?)
        }),
        Command::Run(c) => {
            let (cfg, out) = load(&c)?;
            let summary = harness::run(&cfg, &out, c.jobs)?;
            print_summary(&summary.aggregate);
            match summary.first_error {
                Some(e) => Err(e.into()),
                None => Ok(()),
            }
        }
        Command::Sweep(a) => sweep(a),
        Command::Report(a) => {
            let agg = harness::report(&a.out, &a.setting)?;
            print!("{}", harness::render_table(&[(a.setting, agg)]));
            Ok(())
        }
    }
}

fn load(c: &Common) -> Result<(ExperimentConfig, PathBuf), Failure> {
    let mut cfg = ExperimentConfig::load(&c.config)?;
    if let Some(seeds) = &c.seed_list {
        cfg = cfg.with_seeds(seeds.clone());
    }
    cfg.validate()?;
    let out = c
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| Failure::Usage("no output directory: pass --out or set output_dir".into()))?;
    Ok((cfg, out))
}

fn per_seed<F>(c: &Common, stage: F) -> Result<(), Failure>
where
    F: Fn(&ExperimentConfig, u64, &Path) -> ssl_disparity::Result<()> + Sync,
{
    let (cfg, out) = load(c)?;
    let results = map_seeds(&cfg.seeds, c.jobs, |s| stage(&cfg, s, &seed_dir(&out, s)))?;
    let mut status = None;
    for (s, r) in results {
        if let Err(e) = r {
            eprintln!("error: seed {s}: {e}");
            status.get_or_insert(exit_status(&e));
        }
    }
    status.map_or(Ok(()), |code| Err(Failure::Reported(code)))
}

fn sweep(a: SweepArgs) -> Result<(), Failure> {
    let (cfg, out) = load(&a.common)?;
    let settings: Vec<Setting> = match (&a.labels, &a.balance) {
        (Some(totals), None) => harness::label_settings(&cfg, totals)?,
        (None, Some(modes)) => {
            let modes = modes
                .iter()
                .map(|m| parse_balance(m))
                .collect::<Result<Vec<_>, _>>()?;
            harness::balance_settings(&cfg, &modes)
        }
        _ => return Err(Failure::Usage("sweep needs exactly one of --labels or --balance".into())),
    };
    let results = harness::sweep(&settings, &out, a.common.jobs)?;
    let rows: Vec<_> = results.iter().map(|(n, r)| (n.clone(), r.aggregate.clone())).collect();
    print!("{}", harness::render_table(&rows));
    match results.into_iter().find_map(|(_, r)| r.first_error) {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

fn parse_balance(s: &str) -> Result<BalanceMode, Failure> {
    match s {
        "none" => Ok(BalanceMode::None),
        "balance_labeled" => Ok(BalanceMode::BalanceLabeled),
        "balance_both" => Ok(BalanceMode::BalanceBoth),
        other => Err(Failure::Usage(format!(
            "unknown balance mode {other:?} (expected none, balance_labeled or balance_both)"
        ))),
    }
}

fn print_summary(agg: &harness::Aggregate) {
    print!("{}", harness::render_table(&[("run".into(), agg.clone())]));
    if !agg.failed.is_empty() {
        eprintln!("{} seed(s) failed", agg.failed.len());
    }
}
