use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qstar::harness::{
    apply_ablation, build_model, evaluate, generate_data, gradcheck_suite, run_ablation_rows, train_observed, RunConfig,
    SUITE,
};
use qstar::synth::{generate_dataset, read_fixture, write_fixture, Codebooks, FeatureBundle, Split};
use qstar::Error;

#[derive(Parser)]
#[command(name = "qstar", version, about = "Audio-visual question answering on synthetic scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// key = value configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Where to write the result document
    #[arg(long)]
    out: Option<PathBuf>,
    /// Named ablation row, e.g. wo_tfi or rm_m
    #[arg(long)]
    ablate: Option<String>,
    /// none | keywords | declarative_translation | caption
    #[arg(long)]
    prompt_mode: Option<String>,
    /// a | b | c | d
    #[arg(long)]
    qgmc_variant: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration and report validation accuracy
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Also save the trained parameters here
        #[arg(long)]
        save_model: Option<PathBuf>,
    },
    /// Evaluate saved parameters
    Eval {
        #[command(flatten)]
        run: RunArgs,
        /// Parameter file written by `train --save-model`
        #[arg(long)]
        model: PathBuf,
        /// Directory of fixture files; defaults to the generated validation split
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train every row of the ablation suite
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated subset of rows
        #[arg(long)]
        rows: Option<String>,
    },
    /// Gradient-check every block and the full model
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of consecutive seeds
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write generated samples as fixture files
    GenData {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 16)]
        count: usize,
    },
}

fn resolve(run: &RunArgs) -> qstar::Result<RunConfig> {
    let mut cfg = match &run.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = run.seed {
        cfg.seed = s;
    }
    if let Some(m) = &run.prompt_mode {
        cfg.ablation.prompt_mode = m.parse()?;
    }
    if let Some(v) = &run.qgmc_variant {
        cfg.ablation.qgmc_variant = v.parse()?;
    }
    if let Some(a) = &run.ablate {
        cfg = apply_ablation(&cfg, a)?;
    }
    if let Some(o) = &run.out {
        cfg.output_path = Some(o.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn emit(path: Option<&Path>, text: &str) -> qstar::Result<()> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(p, text)?;
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn progress(name: &str, epoch: usize, loss: f64, lr: f64) {
    eprintln!("[{name}] epoch {epoch:>3}  loss {loss:.4}  lr {lr:.2e}");
}

fn run(cli: Cli) -> qstar::Result<()> {
    match cli.command {
        Command::Train { run, save_model } => {
            let cfg = resolve(&run)?;
            let label = run.ablate.as_deref().unwrap_or("full");
            let (model, report) = train_observed(&cfg, &mut |e, l, lr| progress(label, e, l, lr))?;
            eprintln!(
                "overall accuracy {:.4} in {:.1}s",
                report.accuracy.overall, report.wall_clock_seconds
            );
            if let Some(p) = save_model {
                model.save_params(p)?;
            }
            emit(cfg.output_path.as_deref(), &report.to_json())
        }
        Command::Eval { run, model, data } => {
            let cfg = resolve(&run)?;
            let generated = generate_data(&RunConfig {
                train_count: 1,
                ..cfg.clone()
            })?;
            let mut net = build_model(&cfg, &generated.codebooks)?;
            net.load_params(&model)?;
            let bundles = match data {
                Some(dir) => load_fixtures(&dir)?,
                None => generated.val,
            };
            let acc = evaluate(&net, &bundles, cfg.batch_size.max(64))?;
            emit(
                cfg.output_path.as_deref(),
                &serde_json::to_string_pretty(&acc).expect("accuracy serializes"),
            )
        }
        Command::Ablate { run, rows } => {
            let cfg = resolve(&run)?;
            let rows: Vec<String> = match rows {
                Some(r) => r.split(',').map(|s| s.trim().to_string()).collect(),
                None => SUITE.iter().map(|s| s.to_string()).collect(),
            };
            let names: Vec<&str> = rows.iter().map(String::as_str).collect();
            let table = run_ablation_rows(&cfg, &names, &mut progress)?;
            let tsv = table.to_tsv();
            eprint!("{tsv}");
            match &cfg.output_path {
                Some(p) => {
                    emit(Some(p), &table.to_json())?;
                    emit(Some(&p.with_extension("tsv")), &tsv)?;
                }
                None => println!("{}", table.to_json()),
            }
            Ok(())
        }
        Command::Gradcheck { seed, seeds, out } => {
            let mut all = Vec::new();
            for s in seed..seed + seeds {
                for r in gradcheck_suite(s)? {
                    println!("seed {s}: {r}");
                    all.push(r);
                }
            }
            if let Some(p) = out {
                emit(Some(&p), &serde_json::to_string_pretty(&all).expect("reports serialize"))?;
            }
            match all.iter().find(|r| !r.passed) {
                Some(r) => Err(Error::Numerical(format!("gradient check failed for {}", r.op_name))),
                None => Ok(()),
            }
        }
        Command::GenData { run, count } => {
            let cfg = resolve(&run)?;
            let dir = cfg
                .output_path
                .clone()
                .ok_or_else(|| Error::Config("gen-data needs --out <directory>".into()))?;
            fs::create_dir_all(&dir)?;
            let books = Codebooks::new(cfg.seed, &cfg.synth_config())?;
            for (i, s) in generate_dataset(cfg.seed, Split::Train, count, &books)?.iter().enumerate() {
                write_fixture(&s.bundle, dir.join(format!("sample_{i:05}.qstf")))?;
            }
            eprintln!("wrote {count} fixtures to {}", dir.display());
            Ok(())
        }
    }
}

fn load_fixtures(dir: &Path) -> qstar::Result<Vec<FeatureBundle>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "qstf"))
        .collect();
    paths.sort();
    paths.iter().map(read_fixture).collect()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) | Error::Unimplemented(_) => 2,
                Error::Numerical(_) => 3,
                _ => 1,
            })
        }
    }
}
