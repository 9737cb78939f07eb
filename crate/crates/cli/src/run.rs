//! Orchestration: run a suite, then write every output single-threaded.

use std::path::Path;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::config::{Format, RunConfig};
use crate::output::{emit_plot_data, figures_for, format_tsv, to_json, ManifestEntry, OutputError, OutputWriter};
use crate::suites::{run_experiment, SuiteReport};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_CERTIFICATE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_ABORT: i32 = 3;

/// Everything here except `elapsed` is written to `summary.json`; wall time
/// would break byte-identical reruns, so it only goes to stderr.
#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub experiment: String,
    pub passed: bool,
    pub aborted: Option<String>,
    pub suites: Vec<SuiteReport>,
    pub manifest: Vec<ManifestEntry>,
    #[serde(skip)]
    pub elapsed: Duration,
}

impl RunSummary {
    pub fn exit_code(&self) -> i32 {
        if self.aborted.is_some() {
            EXIT_ABORT
        } else if self.passed {
            EXIT_PASS
        } else {
            EXIT_CERTIFICATE
        }
    }
}

/// Runs the configured experiment and writes its outputs to `dir`.
pub fn run(cfg: &RunConfig, dir: &Path) -> Result<RunSummary, OutputError> {
    let start = Instant::now();
    let result = run_experiment(cfg);
    let elapsed = start.elapsed();

    let mut w = OutputWriter::new(dir)?;
    let mut stored = cfg.clone();
    stored.output.directory = ".".into();
    w.write("config.toml", &stored.to_toml())?;

    let (suites, aborted) = match result {
        Ok(out) => {
            if cfg.output.formats.contains(&Format::Tsv) {
                for t in &out.tables {
                    w.write(&format!("{}.tsv", t.name), &format_tsv(t))?;
                }
            }
            if cfg.output.formats.contains(&Format::Json) {
                w.write("report.json", &to_json(&out.report))?;
            }
            if cfg.output.plot_data {
                emit_plot_data(&out.tables, &figures_for(cfg.experiment.kind), &mut w)?;
            }
            (vec![out.report], None)
        }
        Err(e) => (Vec::new(), Some(e.to_string())),
    };

    let mut summary = RunSummary {
        config_hash: cfg.hash(),
        experiment: cfg.experiment.kind.name().into(),
        passed: aborted.is_none() && suites.iter().all(|s| s.passed),
        aborted,
        suites,
        manifest: w.entries().to_vec(),
        elapsed,
    };
    w.write("summary.json", &to_json(&summary))?;
    let mut manifest = crate::suites::Table::new("manifest", &["file", "bytes", "sha256"]);
    for e in w.entries() {
        manifest.push(vec![e.file.as_str().into(), (e.bytes as usize).into(), e.sha256.as_str().into()]);
    }
    w.write("manifest.tsv", &format_tsv(&manifest))?;
    summary.manifest = w.entries().to_vec();
    Ok(summary)
}

/// Runs `f` on a dedicated pool of `threads` workers when given.
#[cfg(feature = "parallel")]
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .expect("thread pool")
            .install(f),
        None => f(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn with_threads<T: Send>(_threads: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    f()
}
