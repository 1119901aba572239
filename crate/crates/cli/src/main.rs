use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use cpon_core::harness::SeedSet;
use cpon_sim::{parse_config, run};
use serde_json::json;

const EXIT_CONFIG: u8 = 2;
const EXIT_SIMULATION: u8 = 3;

/// Penalty sweeps for coherent PON over DWDM MUX/DEMUX filters.
#[derive(Parser, Debug)]
#[command(name = "simulate", version)]
struct Cli {
    /// Run configuration file.
    config: PathBuf,
    /// Only calibrate the receivers and report the achieved sensitivity.
    #[arg(long)]
    check: bool,
    /// Worker threads; overrides CPON_WORKERS and the config.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write one SVG penalty plot per filter.
    #[arg(long)]
    plots: bool,
    /// Seed set id; overrides the config.
    #[arg(long)]
    seed_set: Option<u64>,
}

fn fail(code: u8, record: serde_json::Value) -> ExitCode {
    eprintln!("{record}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut cfg = match parse_config(&cli.config) {
        Ok(c) => c,
        Err(e) => return fail(EXIT_CONFIG, json!({"kind": "config", "line": e.line, "error": e.message})),
    };
    if let Ok(v) = std::env::var("CPON_WORKERS") {
        match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => cfg.workers = n,
            _ => return fail(EXIT_CONFIG, json!({"kind": "config", "error": format!("CPON_WORKERS: invalid value {v:?}")})),
        }
    }
    if let Some(n) = cli.workers {
        if n == 0 {
            return fail(EXIT_CONFIG, json!({"kind": "config", "error": "--workers must be at least 1"}));
        }
        cfg.workers = n;
    }
    if let Some(out) = cli.out {
        cfg.output_dir = out;
    }
    if let Some(id) = cli.seed_set {
        cfg.study.seeds = SeedSet::new(id);
    }
    cfg.plots |= cli.plots;
    if let Err(e) = std::fs::create_dir_all(&cfg.output_dir) {
        return fail(EXIT_CONFIG, json!({"kind": "config", "error": format!("output directory {}: {e}", cfg.output_dir.display())}));
    }

    let study = match run::study_for(&cfg) {
        Ok(s) => s,
        Err(e) => return fail(EXIT_CONFIG, json!({"kind": "config", "error": e.to_string()})),
    };
    let save_cache = |study: &cpon_core::harness::Study| {
        if let Some(path) = &cfg.calibration_cache {
            if let Err(e) = study.calibration_cache().save(path) {
                eprintln!("warning: calibration cache not saved: {e}");
            }
        }
    };

    if cli.check {
        let mut all_ok = true;
        for kind in run::receiver_kinds(&cfg) {
            match run::check(&study, kind) {
                Ok((line, ok)) => {
                    println!("{line}");
                    all_ok &= ok;
                }
                Err(e) => return fail(EXIT_SIMULATION, json!({"kind": "calibration", "receiver": format!("{kind:?}"), "error": e.to_string()})),
            }
        }
        save_cache(&study);
        return if all_ok { ExitCode::SUCCESS } else { ExitCode::from(EXIT_SIMULATION) };
    }

    let curves = match run::sweep(&study, &cfg, &mut |line| eprintln!("{line}")) {
        Ok(c) => c,
        Err(failures) => {
            save_cache(&study);
            for f in &failures {
                eprintln!("{}", f.record());
            }
            return ExitCode::from(EXIT_SIMULATION);
        }
    };
    save_cache(&study);
    match run::write_outputs(&cfg, &curves) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => fail(EXIT_SIMULATION, json!({"kind": "output", "error": e.to_string()})),
    }
}
