//! Delimited text, JSON reports, plot data and the file manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::ExperimentKind;
use crate::suites::{Cell, Table};

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("plot data: table '{0}' was not produced by this run")]
    MissingTable(String),
    #[error("plot data: series '{series}' is missing from table '{table}'")]
    MissingSeries { table: String, series: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ManifestEntry {
    pub file: String,
    pub bytes: u64,
    pub sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn format_cell(c: &Cell) -> String {
    match c {
        Cell::Int(i) => i.to_string(),
        Cell::Num(x) => format!("{x:.16e}"),
        Cell::Text(s) => s.clone(),
    }
}

/// Gnuplot-friendly: a `#` header, tab separated, one row per line.
pub fn format_tsv(table: &Table) -> String {
    let mut out = format!("# {}\n", table.columns.join("\t"));
    for row in &table.rows {
        let cells: Vec<String> = row.iter().map(format_cell).collect();
        out.push_str(&cells.join("\t"));
        out.push('\n');
    }
    out
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

/// Writes files under one directory and records each in a manifest.
#[derive(Debug)]
pub struct OutputWriter {
    dir: PathBuf,
    entries: Vec<ManifestEntry>,
}

impl OutputWriter {
    pub fn new(dir: &Path) -> Result<Self, OutputError> {
        fs::create_dir_all(dir).map_err(|source| OutputError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        Ok(Self {
            dir: dir.to_path_buf(),
            entries: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<(), OutputError> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(|source| OutputError::Io { path, source })?;
        self.entries.push(ManifestEntry {
            file: name.to_string(),
            bytes: contents.len() as u64,
            sha256: sha256_hex(contents.as_bytes()),
        });
        Ok(())
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

/// One plotted figure: selected columns of one table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FigureSpec {
    pub name: String,
    pub table: String,
    /// empty selects every column
    pub columns: Vec<String>,
}

impl FigureSpec {
    pub fn new(name: &str, table: &str, columns: &[&str]) -> Self {
        Self {
            name: name.into(),
            table: table.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
        }
    }
}

pub fn figures_for(kind: ExperimentKind) -> Vec<FigureSpec> {
    let stack = FigureSpec::new(
        "energy_stack",
        "energy_stack",
        &["t", "energy_tot", "cum_dissipation", "cum_ito", "cum_stochastic", "cum_cross", "identity_rhs", "residual"],
    );
    let moments = |table: &str| FigureSpec::new("moments", table, &["n", "order", "statistic", "mean", "std_error"]);
    match kind {
        ExperimentKind::SinglePath => vec![
            stack,
            FigureSpec::new(
                "dissipation",
                "ledger_path0",
                &["t", "diss_viscous", "diss_drag", "diss_friction", "diss_mobility", "diss_surface_mobility"],
            ),
        ],
        ExperimentKind::MonteCarlo => vec![
            FigureSpec::new("energy_mean", "ensemble_mean", &["t", "energy_tot_mean", "energy_tot_se"]),
            FigureSpec::new("residual_rms", "ensemble_mean", &["t", "residual_rms"]),
            moments("moments"),
        ],
        ExperimentKind::LadderDt => vec![FigureSpec::new(
            "residual_ladder",
            "ladder_dt",
            &["dt", "residual_rms", "residual_fit"],
        )],
        ExperimentKind::LadderN => vec![moments("ladder_n")],
        ExperimentKind::CertifyMoments => vec![moments("moments")],
        ExperimentKind::LadderDelta => vec![FigureSpec::new(
            "cauchy_ladder",
            "ladder_delta",
            &["delta", "cauchy_difference", "cauchy_fit"],
        )],
        ExperimentKind::CertifyYosida => vec![
            FigureSpec::new("yosida_bulk", "yosida_profiles_bulk", &[]),
            FigureSpec::new("yosida_surface", "yosida_profiles_surface", &[]),
        ],
        ExperimentKind::CertifyEnergy => vec![
            stack,
            FigureSpec::new("energy_defect", "energy_defect", &["t", "energy", "defect"]),
        ],
        ExperimentKind::CertifyKorn | ExperimentKind::CertifyInequality => Vec::new(),
    }
}

/// One file per figure plus `plot_manifest.tsv`; nothing is rendered.
/// Returns the figure files written.
pub fn emit_plot_data(
    tables: &[Table],
    specs: &[FigureSpec],
    writer: &mut OutputWriter,
) -> Result<Vec<String>, OutputError> {
    let mut figures = Vec::new();
    for spec in specs {
        let source = tables
            .iter()
            .find(|t| t.name == spec.table)
            .ok_or_else(|| OutputError::MissingTable(spec.table.clone()))?;
        let columns: Vec<String> = if spec.columns.is_empty() {
            source.columns.clone()
        } else {
            spec.columns.clone()
        };
        let idx: Vec<usize> = columns
            .iter()
            .map(|c| {
                source.column_index(c).ok_or_else(|| OutputError::MissingSeries {
                    table: spec.table.clone(),
                    series: c.clone(),
                })
            })
            .collect::<Result<_, _>>()?;
        let refs: Vec<&str> = columns.iter().map(|c| c.as_str()).collect();
        let mut fig = Table::new(&spec.name, &refs);
        for row in &source.rows {
            fig.push(idx.iter().map(|&i| row[i].clone()).collect());
        }
        figures.push((spec, fig));
    }
    let mut manifest = Table::new("plot_manifest", &["figure", "file", "source", "columns"]);
    let mut written = Vec::new();
    for (spec, fig) in &figures {
        let file = format!("plot_{}.tsv", spec.name);
        writer.write(&file, &format_tsv(fig))?;
        manifest.push(vec![
            spec.name.as_str().into(),
            file.as_str().into(),
            spec.table.as_str().into(),
            fig.columns.join(",").as_str().into(),
        ]);
        written.push(file);
    }
    writer.write("plot_manifest.tsv", &format_tsv(&manifest))?;
    Ok(written)
}
