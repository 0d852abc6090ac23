use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use loadtl::campaign::{run_campaign, CampaignOptions};
use loadtl::config::CampaignConfig;
use loadtl::data::{load_csv, save_clean, CleaningRules};
use loadtl::evaluation::render_tables;
use loadtl::gradcheck::{check_architecture, Fault};
use loadtl::models::Arch;
use loadtl::strategy::collect_reports;
use loadtl::Error;

/// Environment variable that overrides `output_root` of a campaign config.
const OUTPUT_ROOT_ENV: &str = "LOADTL_OUTPUT_ROOT";

#[derive(Parser)]
#[command(name = "loadtl", version, about = "Transfer-learning experiments for building load forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Clean a raw hourly CSV and write the cleaned CSV plus a JSON sidecar.
    Clean {
        input: PathBuf,
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0.10)]
        missing_threshold: f64,
        #[arg(long, default_value_t = 3000)]
        max_zeros: usize,
    },
    /// Run the plans of a campaign config.
    Run {
        config: PathBuf,
        /// Only plans whose label contains this text (case-insensitive).
        #[arg(long)]
        filter: Option<String>,
        /// Concurrent (plan, seed) runs.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
    /// Aggregate finished runs into result tables.
    Report { out_root: PathBuf },
    /// Finite-difference gradient check of toy-sized models.
    Gradcheck {
        /// vanilla, informer, patchtst or all.
        #[arg(long, default_value = "all")]
        arch: String,
        #[arg(long, default_value_t = 3)]
        seed: u64,
        /// Corrupt one analytic gradient; the check must then fail.
        #[arg(long)]
        inject_fault: bool,
    },
}

/// Failure of a command: 1 for invalid input, 2 for runtime problems.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: if e.is_validation() { 1 } else { 2 },
            message: e.to_string(),
        }
    }
}

fn runtime(message: String) -> Failure {
    Failure { code: 2, message }
}

fn clean(input: &Path, out_dir: &Path, missing_threshold: f64, max_zeros: usize) -> Result<(), Failure> {
    let rules = CleaningRules {
        missing_threshold,
        max_zeros,
        ..Default::default()
    };
    let context = |e: Error| -> Failure {
        let f = Failure::from(e);
        Failure {
            message: format!("{}: {}", input.display(), f.message),
            ..f
        }
    };
    let raw = load_csv(input).map_err(context)?;
    let (rows, missing) = (raw.len(), raw.missing_cells());
    let ds = loadtl::data::clean_pipeline(raw, &rules).map_err(context)?;
    let path = save_clean(&ds, out_dir)?;
    if ds.removals.is_empty() && missing == 0 {
        println!("{}: already clean, nothing removed or filled", input.display());
    }
    for r in &ds.removals {
        println!("removed {r}");
    }
    if missing > 0 {
        println!("interpolated {missing} missing cells");
    }
    println!(
        "wrote {} ({rows} rows, {} buildings, features [{}])",
        path.display(),
        ds.n_buildings(),
        ds.schema()
            .features()
            .iter()
            .map(|f| f.to_string())
            .collect::<Vec<_>>()
            .join(", ")
    );
    Ok(())
}

fn run(config: &Path, filter: Option<String>, parallel: usize) -> Result<(), Failure> {
    let mut cfg = CampaignConfig::load(config)?;
    if let Ok(root) = std::env::var(OUTPUT_ROOT_ENV) {
        cfg.output_root = PathBuf::from(root);
    }
    let (_, plans) = cfg.validate()?;
    if parallel == 0 {
        return Err(Error::Config("--parallel must be at least 1".into()).into());
    }
    let out_root = cfg.output_root();
    let registry = cfg.load_registry()?;
    let opts = CampaignOptions { filter, parallel };
    let summary = run_campaign(&plans, &registry, &out_root, &opts)?;
    println!(
        "{} plan(s) selected: {} seed run(s) trained, {} reused, {} failed",
        summary.selected,
        summary.trained,
        summary.reused,
        summary.failures.len()
    );
    for (label, seed, err) in &summary.failures {
        eprintln!("failed: {label} seed {seed}: {err}");
    }
    if summary.failures.is_empty() {
        println!("artifacts under {}", out_root.display());
        Ok(())
    } else {
        Err(runtime(format!("{} seed run(s) failed", summary.failures.len())))
    }
}

fn report(out_root: &Path) -> Result<(), Failure> {
    let reports = collect_reports(out_root)?;
    if reports.is_empty() {
        return Err(Error::Config(format!("no finished runs under {}", out_root.display())).into());
    }
    let tables = render_tables(&reports)?;
    for w in &tables.warnings {
        eprintln!("warning: {w}");
    }
    for r in reports.iter().filter(|r| r.is_partial()) {
        eprintln!(
            "warning: {} {} {} -> {} {}h: partial mean over {} of {} seeds",
            r.key.arch,
            r.key.strategy,
            r.key.corpus,
            r.key.target,
            r.key.horizon,
            r.per_seed.len(),
            r.expected_seeds.len()
        );
    }
    let dir = out_root.join("results").join("tables");
    std::fs::create_dir_all(&dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
    for (name, contents) in &tables.files {
        let path = dir.join(name);
        std::fs::write(&path, contents).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn gradcheck(arch: &str, seed: u64, inject_fault: bool) -> Result<(), Failure> {
    let archs = if arch.eq_ignore_ascii_case("all") {
        Arch::ALL.to_vec()
    } else {
        vec![arch.parse::<Arch>()?]
    };
    let fault = inject_fault.then_some(Fault::ScaleGradient {
        param: 0,
        factor: 1.01,
    });
    let mut failed = Vec::new();
    for a in archs {
        let r = check_architecture(a, seed, fault)?;
        for p in &r.params {
            println!("{:<10} {:<40} {:>6} {:.3e}", a.name(), p.name, p.numel, p.max_rel_err);
        }
        let verdict = if r.passed() { "PASS" } else { "FAIL" };
        println!(
            "{verdict} {}: max relative error {:.3e} (tolerance {:.0e}) in {:.2}s",
            a.name(),
            r.max_rel_err(),
            r.tolerance,
            r.elapsed.as_secs_f64()
        );
        if !r.passed() {
            failed.push(a.name());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(runtime(format!("gradient check failed for {}", failed.join(", "))))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Clean {
            input,
            out_dir,
            missing_threshold,
            max_zeros,
        } => clean(&input, &out_dir, missing_threshold, max_zeros),
        Command::Run {
            config,
            filter,
            parallel,
        } => run(&config, filter, parallel),
        Command::Report { out_root } => report(&out_root),
        Command::Gradcheck {
            arch,
            seed,
            inject_fault,
        } => gradcheck(&arch, seed, inject_fault),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
