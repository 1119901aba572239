//! Sweep execution on a bounded worker pool.

use std::collections::VecDeque;
use std::fs;
use std::path::PathBuf;
use std::sync::{mpsc, Mutex};

use cpon_core::harness::{Architecture, PenaltyCurve, PenaltyPoint, ReceiverKind, Study};
use cpon_core::receiver::{CalibrationCache, BER_TOLERANCE, TARGET_BER};
use cpon_core::Error;
use serde_json::json;

use crate::config::RunConfig;
use crate::output;

#[derive(Debug, Clone, PartialEq)]
pub struct Job {
    pub architecture: Architecture,
    pub filter: usize,
    pub f_acc_ghz: f64,
}

#[derive(Debug)]
pub struct JobFailure {
    pub job: Job,
    pub filter: String,
    pub error: Error,
}

impl JobFailure {
    pub fn record(&self) -> serde_json::Value {
        json!({
            "kind": "simulation",
            "architecture": self.job.architecture.name(),
            "filter": self.filter,
            "f_acc_ghz": self.job.f_acc_ghz,
            "error": self.error.to_string(),
        })
    }
}

/// Jobs in output order: architecture, then filter, then grid.
pub fn jobs(cfg: &RunConfig) -> Vec<Job> {
    let mut out = Vec::new();
    for &architecture in &cfg.architectures {
        for filter in 0..cfg.filters.len() {
            for &f_acc_ghz in &cfg.f_acc_ghz {
                out.push(Job { architecture, filter, f_acc_ghz });
            }
        }
    }
    out
}

/// Runs `f` over `items` with `workers` threads; results come back in
/// input order. Only the calling thread sees `on_done`.
pub fn pool_map<T: Sync, R: Send>(
    items: &[T],
    workers: usize,
    f: impl Fn(&T) -> R + Sync,
    mut on_done: impl FnMut(usize, &R),
) -> Vec<R> {
    let queue = Mutex::new((0..items.len()).collect::<VecDeque<_>>());
    let (tx, rx) = mpsc::channel();
    let mut slots: Vec<Option<R>> = (0..items.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers.clamp(1, items.len().max(1)) {
            let tx = tx.clone();
            let (queue, f) = (&queue, &f);
            scope.spawn(move || loop {
                let next = queue.lock().expect("queue lock").pop_front();
                let Some(i) = next else { break };
                if tx.send((i, f(&items[i]))).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for (i, r) in rx {
            on_done(i, &r);
            slots[i] = Some(r);
        }
    });
    slots.into_iter().map(|r| r.expect("every job reports")).collect()
}

pub fn study_for(cfg: &RunConfig) -> Result<Study, Error> {
    let cache = match &cfg.calibration_cache {
        Some(p) => CalibrationCache::load(p)?,
        None => CalibrationCache::default(),
    };
    let mut sc = cfg.study.clone();
    if cfg.debug_dumps {
        sc.debug_dir = Some(cfg.output_dir.join("dsp-debug"));
    }
    Study::with_cache(sc, cache)
}

/// All penalty curves for the configured sweep, in job order.
pub fn sweep(study: &Study, cfg: &RunConfig, log: &mut dyn FnMut(&str)) -> Result<Vec<PenaltyCurve>, Vec<JobFailure>> {
    let jobs = jobs(cfg);
    let total = jobs.len();
    let mut done = 0;
    let results = pool_map(
        &jobs,
        cfg.workers,
        |j| study.penalty_point(j.architecture, &cfg.filters[j.filter], j.f_acc_ghz * 1e9),
        |i, r: &Result<PenaltyPoint, Error>| {
            done += 1;
            let j = &jobs[i];
            let what = match r {
                Ok(p) => format!("penalty {:.3} dB", p.penalty),
                Err(e) => format!("failed: {e}"),
            };
            log(&format!("[{done}/{total}] {} {} {} GHz: {what}", j.architecture, cfg.filters[j.filter].name(), j.f_acc_ghz));
        },
    );

    let mut failures = Vec::new();
    let mut points = Vec::new();
    for (job, r) in jobs.into_iter().zip(results) {
        match r {
            Ok(p) => points.push((job, p)),
            Err(error) => failures.push(JobFailure { filter: cfg.filters[job.filter].name(), job, error }),
        }
    }
    if !failures.is_empty() {
        return Err(failures);
    }

    let mut curves = Vec::new();
    for &arch in &cfg.architectures {
        let reference = study.reference_budget(arch).map_err(|error| {
            vec![JobFailure { job: Job { architecture: arch, filter: 0, f_acc_ghz: 0.0 }, filter: "flat".into(), error }]
        })?;
        for (fi, filter) in cfg.filters.iter().enumerate() {
            curves.push(PenaltyCurve {
                architecture: arch,
                filter: filter.name(),
                reference_budget: reference.budget_db,
                points: points.iter().filter(|(j, _)| j.architecture == arch && j.filter == fi).map(|(_, p)| *p).collect(),
            });
        }
    }
    Ok(curves)
}

/// Files written by [`write_outputs`], relative to the output directory.
pub fn write_outputs(cfg: &RunConfig, curves: &[PenaltyCurve]) -> std::io::Result<Vec<PathBuf>> {
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir)?;
    let seed = cfg.study.seeds.id;
    let mut written = Vec::new();
    let mut put = |name: String, text: String| -> std::io::Result<()> {
        let path = dir.join(name);
        fs::write(&path, text)?;
        written.push(path);
        Ok(())
    };
    put("penalties.csv".into(), output::csv(curves, seed))?;
    for c in curves {
        put(
            format!("{}__{}.csv", c.architecture, output::slug(&c.filter)),
            output::csv(std::slice::from_ref(c), seed),
        )?;
    }
    if cfg.plots {
        for f in &cfg.filters {
            let name = f.name();
            let group: Vec<&PenaltyCurve> = curves.iter().filter(|c| c.filter == name).collect();
            put(format!("penalty_{}.svg", output::slug(&name)), output::svg(&name, &group))?;
        }
    }
    Ok(written)
}

/// Calibration check line for one receiver kind and whether it lies
/// within 2% +- 0.2%.
pub fn check(study: &Study, kind: ReceiverKind) -> Result<(String, bool), Error> {
    let (cal, rerun) = study.verify_calibration(kind)?;
    let ok = (cal.achieved_ber - TARGET_BER).abs() <= BER_TOLERANCE && (rerun - TARGET_BER).abs() <= BER_TOLERANCE;
    let line = format!(
        "{kind:?}: sensitivity {:.2} dBm at BER {:.4} (re-run {:.4}), noise psd {:.4e} W/Hz, Es/N0 {:.2} dB: {}",
        cal.achieved_sensitivity,
        cal.achieved_ber,
        rerun,
        cal.noise_psd,
        cal.es_n0_db(cpon_core::harness::SYMBOL_RATE),
        if ok { "ok" } else { "OUT OF TOLERANCE" }
    );
    Ok((line, ok))
}

pub fn receiver_kinds(cfg: &RunConfig) -> Vec<ReceiverKind> {
    let mut kinds: Vec<ReceiverKind> = Vec::new();
    for a in &cfg.architectures {
        if !kinds.contains(&a.receiver()) {
            kinds.push(a.receiver());
        }
    }
    kinds
}
