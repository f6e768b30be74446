//! Batch commands behind the `dncb-mf` binary.
//!
//! Settings are resolved in three layers: built-in defaults, then the
//! `key=value` file given by `--config`, then command-line flags. Every
//! command writes a `manifest.txt` holding the resolved settings, and such a
//! manifest can be passed back as `--config` to repeat the run. Keys under
//! `run.` are informational and ignored on input.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::info;
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::eval::{beta_baseline_ppd, make_mask, ppd, HoldoutMask, PpdReport};
use crate::gibbs::{run, PosteriorChain, SamplerConfig};
use crate::io::{
    fmt_f64, read_beta_matrix, read_chain, read_mask, read_matrix, read_trace, sha256_file, write_beta_matrix,
    write_chain, write_embedding, write_factor, write_mask, write_trace, Manifest, Staging,
};
use crate::model::{generate, BetaMatrix, Hyperparams};

pub const MANIFEST: &str = "manifest.txt";
pub const DATA: &str = "data.tsv";
pub const MASK: &str = "mask.tsv";
pub const CHAIN: &str = "chain.tsv";
pub const TRACE: &str = "trace.tsv";
pub const EMBEDDING: &str = "embedding.tsv";
pub const REPORT: &str = "ppd.txt";
pub const CELLS: &str = "cells.tsv";

#[derive(Debug, Parser)]
#[command(name = "dncb-mf", version, about = "Doubly non-central beta matrix factorization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the Gibbs sampler on a matrix and save the posterior chain.
    Fit(Flags),
    /// Score held-out cells of a fitted run.
    Evaluate(Flags),
    /// Draw a synthetic matrix and its factors from the model.
    Generate(Flags),
    /// Posterior-mean embedding of a fitted run.
    Embed(Flags),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Fit(_) => "fit",
            Command::Evaluate(_) => "evaluate",
            Command::Generate(_) => "generate",
            Command::Embed(_) => "embed",
        }
    }

    pub fn flags(&self) -> &Flags {
        match self {
            Command::Fit(f) | Command::Evaluate(f) | Command::Generate(f) | Command::Embed(f) => f,
        }
    }
}

#[derive(Debug, Default, Clone, Args)]
pub struct Flags {
    /// key=value settings file (a previous run's manifest works).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Matrix file for fit; run directory for evaluate and embed.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Sets both shape parameters.
    #[arg(long)]
    pub eps0: Option<f64>,
    #[arg(long)]
    pub eps1: Option<f64>,
    #[arg(long)]
    pub eps2: Option<f64>,
    #[arg(long)]
    pub a0: Option<f64>,
    #[arg(long)]
    pub b0: Option<f64>,
    #[arg(long)]
    pub e0: Option<f64>,
    #[arg(long)]
    pub f0: Option<f64>,
    #[arg(long)]
    pub burnin: Option<usize>,
    /// Sweeps after burn-in.
    #[arg(long)]
    pub total: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub parallel: Option<bool>,
    /// Worker threads when running in parallel.
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub mask_fraction: Option<f64>,
    /// Defaults to the sampler seed.
    #[arg(long)]
    pub mask_seed: Option<u64>,
    #[arg(long)]
    pub mask_file: Option<PathBuf>,
    /// Keep the N columns with the largest sample variance.
    #[arg(long)]
    pub top_variance: Option<usize>,
    #[arg(long)]
    pub reads_methylated: Option<PathBuf>,
    #[arg(long)]
    pub reads_unmethylated: Option<PathBuf>,
    #[arg(long)]
    pub s0: Option<f64>,
    /// Rows of a generated matrix.
    #[arg(long)]
    pub rows: Option<usize>,
    /// Columns of a generated matrix.
    #[arg(long)]
    pub cols: Option<usize>,
    /// Also write per-cell scores.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub per_cell: Option<bool>,
}

impl Flags {
    fn pairs(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        macro_rules! push {
            ($($field:ident),*) => {$(
                if let Some(v) = &self.$field {
                    out.push((stringify!($field), v.to_string()));
                }
            )*};
        }
        macro_rules! push_path {
            ($($field:ident),*) => {$(
                if let Some(v) = &self.$field {
                    out.push((stringify!($field), v.display().to_string()));
                }
            )*};
        }
        push_path!(input, output, mask_file, reads_methylated, reads_unmethylated);
        push!(k, eps0, eps1, eps2, a0, b0, e0, f0, burnin, total, thin, seed, parallel, threads);
        push!(mask_fraction, mask_seed, top_variance, s0, rows, cols, per_cell);
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum MaskSpec {
    None,
    Random { fraction: f64, seed: Option<u64> },
    File(PathBuf),
}

/// Fully resolved settings of one command.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub hyper: Hyperparams,
    pub sampler: SamplerConfig,
    pub threads: Option<usize>,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub mask: MaskSpec,
    pub top_variance: Option<usize>,
    pub reads_methylated: Option<PathBuf>,
    pub reads_unmethylated: Option<PathBuf>,
    pub s0: f64,
    pub rows: Option<usize>,
    pub cols: Option<usize>,
    pub per_cell: bool,
}

/// Smoothing constant for read-count betas.
pub const DEFAULT_S0: f64 = 0.1;

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            hyper: Hyperparams::default(),
            sampler: SamplerConfig::default(),
            threads: None,
            input: None,
            output: None,
            mask: MaskSpec::None,
            top_variance: None,
            reads_methylated: None,
            reads_unmethylated: None,
            s0: DEFAULT_S0,
            rows: None,
            cols: None,
            per_cell: false,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse {value:?}: {e}")))
}

fn optional_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    if value.trim().is_empty() {
        Ok(None)
    } else {
        parse_value(key, value).map(Some)
    }
}

fn optional_path(value: &str) -> Option<PathBuf> {
    (!value.trim().is_empty()).then(|| PathBuf::from(value.trim()))
}

impl RunConfig {
    /// Applies one setting. Empty values clear optional settings.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let h = &mut self.hyper;
        let s = &mut self.sampler;
        match key {
            "k" => h.k = parse_value(key, value)?,
            "eps0" => {
                h.eps1 = parse_value(key, value)?;
                h.eps2 = h.eps1;
            }
            "eps1" => h.eps1 = parse_value(key, value)?,
            "eps2" => h.eps2 = parse_value(key, value)?,
            "a0" => h.a0 = parse_value(key, value)?,
            "b0" => h.b0 = parse_value(key, value)?,
            "e0" => h.e0 = parse_value(key, value)?,
            "f0" => h.f0 = parse_value(key, value)?,
            "burnin" => s.burnin = parse_value(key, value)?,
            "total" => s.total = parse_value(key, value)?,
            "thin" => s.thin = parse_value(key, value)?,
            "seed" => s.seed = parse_value(key, value)?,
            "parallel" => s.parallel = parse_value(key, value)?,
            "threads" => self.threads = optional_value(key, value)?,
            "input" => self.input = optional_path(value),
            "output" => self.output = optional_path(value),
            "mask_fraction" => {
                let seed = match &self.mask {
                    MaskSpec::Random { seed, .. } => *seed,
                    _ => None,
                };
                self.mask = match optional_value(key, value)? {
                    Some(fraction) => MaskSpec::Random { fraction, seed },
                    None => MaskSpec::None,
                };
            }
            "mask_seed" => {
                let seed = optional_value(key, value)?;
                match &mut self.mask {
                    MaskSpec::Random { seed: s, .. } => *s = seed,
                    _ if seed.is_none() => {}
                    _ => {
                        // a seed alone waits for a fraction
                        self.mask = MaskSpec::Random {
                            fraction: f64::NAN,
                            seed,
                        }
                    }
                }
            }
            "mask_file" => {
                if let Some(p) = optional_path(value) {
                    self.mask = MaskSpec::File(p);
                }
            }
            "top_variance" => self.top_variance = optional_value(key, value)?,
            "reads_methylated" => self.reads_methylated = optional_path(value),
            "reads_unmethylated" => self.reads_unmethylated = optional_path(value),
            "s0" => self.s0 = parse_value(key, value)?,
            "rows" => self.rows = optional_value(key, value)?,
            "cols" => self.cols = optional_value(key, value)?,
            "per_cell" => self.per_cell = parse_value(key, value)?,
            other => return Err(Error::Config(format!("unknown setting {other:?}"))),
        }
        Ok(())
    }

    /// Defaults, then the config file, then flags.
    pub fn resolve(flags: &Flags) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &flags.config {
            let file = Manifest::read(path)?;
            for (k, v) in file.entries() {
                if k.starts_with("run.") {
                    continue;
                }
                cfg.set(k, v)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            }
        }
        for (k, v) in flags.pairs() {
            cfg.set(k, &v)?;
        }
        Ok(cfg)
    }

    /// Checks everything that can be checked before any data is read.
    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        self.sampler.validate()?;
        if let MaskSpec::Random { fraction, .. } = self.mask {
            if !(fraction > 0.0 && fraction < 1.0) {
                return Err(Error::Config(format!(
                    "mask_fraction must lie in (0, 1), got {fraction}"
                )));
            }
        }
        if !(self.s0 > 0.0) || !self.s0.is_finite() {
            return Err(Error::Config(format!("s0 must be positive, got {}", self.s0)));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        if self.reads_methylated.is_some() != self.reads_unmethylated.is_some() {
            return Err(Error::Config(
                "reads_methylated and reads_unmethylated must be given together".into(),
            ));
        }
        Ok(())
    }

    /// Records the resolved settings.
    pub fn write_to(&self, m: &mut Manifest) {
        let h = &self.hyper;
        let s = &self.sampler;
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let opt = |x: Option<usize>| x.map(|x| x.to_string()).unwrap_or_default();
        m.set("input", path(&self.input));
        m.set("output", path(&self.output));
        m.set("k", h.k);
        m.set("eps1", fmt_f64(h.eps1));
        m.set("eps2", fmt_f64(h.eps2));
        m.set("a0", fmt_f64(h.a0));
        m.set("b0", fmt_f64(h.b0));
        m.set("e0", fmt_f64(h.e0));
        m.set("f0", fmt_f64(h.f0));
        m.set("burnin", s.burnin);
        m.set("total", s.total);
        m.set("thin", s.thin);
        m.set("seed", s.seed);
        m.set("parallel", s.parallel);
        m.set("threads", opt(self.threads));
        match &self.mask {
            MaskSpec::None => {}
            MaskSpec::Random { fraction, seed } => {
                m.set("mask_fraction", fmt_f64(*fraction));
                m.set("mask_seed", seed.unwrap_or(s.seed));
            }
            MaskSpec::File(p) => m.set("mask_file", p.display()),
        }
        m.set("top_variance", opt(self.top_variance));
        m.set("reads_methylated", path(&self.reads_methylated));
        m.set("reads_unmethylated", path(&self.reads_unmethylated));
        m.set("s0", fmt_f64(self.s0));
        m.set("rows", opt(self.rows));
        m.set("cols", opt(self.cols));
        m.set("per_cell", self.per_cell);
    }

    fn output(&self) -> Result<&Path> {
        self.output
            .as_deref()
            .ok_or_else(|| Error::Config("--output is required".into()))
    }

    fn input(&self) -> Result<&Path> {
        self.input
            .as_deref()
            .ok_or_else(|| Error::Config("--input is required".into()))
    }

    /// Runs `f` on a pool of `threads` workers if set, else on the global pool.
    fn with_pool<T: Send>(&self, f: impl FnOnce() -> T + Send) -> Result<T> {
        match self.threads {
            Some(n) => rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map(|pool| pool.install(f))
                .map_err(|e| Error::Config(format!("cannot start {n} threads: {e}"))),
            None => Ok(f()),
        }
    }
}

/// Methylated and unmethylated read counts of the same shape.
#[derive(Clone, Debug, PartialEq)]
pub struct ReadCounts {
    pub methylated: Array2<u64>,
    pub unmethylated: Array2<u64>,
    pub s0: f64,
}

impl ReadCounts {
    pub fn new(methylated: Array2<u64>, unmethylated: Array2<u64>, s0: f64) -> Result<Self> {
        if methylated.dim() != unmethylated.dim() {
            return Err(Error::Dimension(format!(
                "methylated counts {:?}, unmethylated counts {:?}",
                methylated.dim(),
                unmethylated.dim()
            )));
        }
        if !(s0 > 0.0) || !s0.is_finite() {
            return Err(Error::Config(format!("s0 must be positive, got {s0}")));
        }
        Ok(ReadCounts {
            methylated,
            unmethylated,
            s0,
        })
    }
}

/// Smoothed proportions `(s0 + d) / (2 s0 + d + u)`.
pub fn betas_from_reads(rc: &ReadCounts, row_ids: Vec<String>, col_ids: Vec<String>) -> Result<BetaMatrix> {
    let mut values = Array2::zeros(rc.methylated.dim());
    for ((v, &d), &u) in values.iter_mut().zip(rc.methylated.iter()).zip(rc.unmethylated.iter()) {
        let (d, u) = (d as f64, u as f64);
        *v = (rc.s0 + d) / (2.0 * rc.s0 + d + u);
    }
    BetaMatrix::new(values, row_ids, col_ids)
}

/// Data matrix as ingested, with digests of the files it came from.
struct Ingested {
    beta: BetaMatrix,
    digests: Vec<(String, String)>,
}

fn ingest(cfg: &RunConfig) -> Result<Ingested> {
    let mut digests = Vec::new();
    let beta = match (&cfg.reads_methylated, &cfg.reads_unmethylated) {
        (Some(pm), Some(pu)) => {
            let d = read_matrix::<u64>(pm)?;
            let u = read_matrix::<u64>(pu)?;
            if d.row_ids != u.row_ids || d.col_ids != u.col_ids {
                return Err(Error::Dimension(format!(
                    "{} and {} have different labels",
                    pm.display(),
                    pu.display()
                )));
            }
            digests.push(("run.reads_methylated_sha256".into(), sha256_file(pm)?));
            digests.push(("run.reads_unmethylated_sha256".into(), sha256_file(pu)?));
            betas_from_reads(&ReadCounts::new(d.values, u.values, cfg.s0)?, d.row_ids, d.col_ids)?
        }
        _ => {
            let path = cfg.input()?;
            digests.push(("run.input_sha256".into(), sha256_file(path)?));
            read_beta_matrix(path)?
        }
    };
    info!(
        "ingested {}x{} matrix, clamped {} cells",
        beta.nrows(),
        beta.ncols(),
        beta.n_clamped()
    );
    let beta = match cfg.top_variance {
        Some(n) => {
            let b = beta.top_variance_columns(n);
            info!("kept the {} highest-variance columns", b.ncols());
            b
        }
        None => beta,
    };
    Ok(Ingested { beta, digests })
}

fn resolve_mask(cfg: &RunConfig, nrows: usize, ncols: usize) -> Result<Option<HoldoutMask>> {
    match &cfg.mask {
        MaskSpec::None => Ok(None),
        MaskSpec::Random { fraction, seed } => {
            make_mask(nrows, ncols, *fraction, seed.unwrap_or(cfg.sampler.seed)).map(Some)
        }
        MaskSpec::File(p) => read_mask(p, nrows, ncols).map(Some),
    }
}

fn base_manifest(command: &str, cfg: &RunConfig) -> Manifest {
    let mut m = Manifest::new();
    m.set("run.command", command);
    m.set("run.version", env!("CARGO_PKG_VERSION"));
    cfg.write_to(&mut m);
    m
}

/// Summary of a finished fit.
#[derive(Clone, Debug)]
pub struct FitSummary {
    pub chain: PosteriorChain,
    pub n_clamped: usize,
    pub mask_cells: usize,
}

pub fn cmd_fit(cfg: &RunConfig) -> Result<FitSummary> {
    cfg.validate()?;
    let out = cfg.output()?;
    let data = ingest(cfg)?;
    let beta = &data.beta;
    let mask = resolve_mask(cfg, beta.nrows(), beta.ncols())?;
    let started = Instant::now();
    let chain = cfg.with_pool(|| run(beta, mask.as_ref(), &cfg.hyper, &cfg.sampler))??;
    let wall = started.elapsed().as_secs_f64();

    let stage = Staging::new(out)?;
    write_beta_matrix(&stage.path(DATA), beta)?;
    if let Some(mk) = &mask {
        write_mask(&stage.path(MASK), mk)?;
    }
    write_chain(&stage.path(CHAIN), &chain)?;
    write_trace(&stage.path(TRACE), &chain.trace)?;
    if let Some(emb) = chain.mean_embedding() {
        write_embedding(&stage.path(EMBEDDING), &emb, beta.row_ids())?;
    }
    let mut m = base_manifest("fit", cfg);
    for (k, v) in &data.digests {
        m.set(k.clone(), v);
    }
    m.set("run.n_rows", beta.nrows());
    m.set("run.n_cols", beta.ncols());
    m.set("run.n_clamped", beta.n_clamped());
    m.set("run.mask_cells", mask.as_ref().map_or(0, |mk| mk.len()));
    m.set("run.n_snapshots", chain.snapshots.len());
    m.set("run.wall_time_s", format!("{wall:.3}"));
    m.write(&stage.path(MANIFEST))?;
    stage.commit()?;
    info!(
        "fit: {} sweeps, {} snapshots, {wall:.1}s",
        cfg.sampler.n_sweeps(),
        chain.snapshots.len()
    );
    Ok(FitSummary {
        n_clamped: beta.n_clamped(),
        mask_cells: mask.map_or(0, |mk| mk.len()),
        chain,
    })
}

/// A fitted run read back from its directory.
pub struct FittedRun {
    pub config: RunConfig,
    pub data: BetaMatrix,
    pub chain: PosteriorChain,
}

/// Loads the settings, data and chain saved by `fit` in `dir`.
pub fn load_run(dir: &Path) -> Result<FittedRun> {
    let manifest_path = dir.join(MANIFEST);
    if !manifest_path.exists() {
        return Err(Error::Config(format!(
            "{} is not a fit directory (no {MANIFEST})",
            dir.display()
        )));
    }
    let config = RunConfig::resolve(&Flags {
        config: Some(manifest_path),
        ..Default::default()
    })?;
    let data = read_beta_matrix(&dir.join(DATA))?;
    let chain_path = dir.join(CHAIN);
    if !chain_path.exists() {
        return Err(Error::Config(format!("missing chain file {}", chain_path.display())));
    }
    let mut chain = read_chain(&chain_path, config.sampler.clone(), config.hyper.clone())?;
    let trace_path = dir.join(TRACE);
    if trace_path.exists() {
        chain.trace = read_trace(&trace_path)?;
    }
    if chain.dims() != Some((data.nrows(), data.ncols())) {
        return Err(Error::Dimension(format!(
            "chain is for {:?}, data is {}x{}",
            chain.dims(),
            data.nrows(),
            data.ncols()
        )));
    }
    Ok(FittedRun { config, data, chain })
}

fn check_distinct(input: &Path, output: &Path) -> Result<()> {
    let same = match (input.canonicalize(), output.canonicalize()) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    };
    if same {
        return Err(Error::Config(
            "--output must differ from the run directory given as --input".into(),
        ));
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct EvaluateSummary {
    pub report: PpdReport,
    pub baseline: PpdReport,
}

pub fn cmd_evaluate(cfg: &RunConfig) -> Result<EvaluateSummary> {
    cfg.validate()?;
    let dir = cfg.input()?;
    let out = cfg.output()?;
    check_distinct(dir, out)?;
    let fitted = load_run(dir)?;
    let (n, m) = (fitted.data.nrows(), fitted.data.ncols());
    let mask = match resolve_mask(cfg, n, m)? {
        Some(mk) => mk,
        None if dir.join(MASK).exists() => read_mask(&dir.join(MASK), n, m)?,
        None => {
            return Err(Error::Config(format!(
                "{} has no mask and none was given",
                dir.display()
            )))
        }
    };
    let hyper = &fitted.chain.hyper;
    let report = cfg.with_pool(|| ppd(&fitted.chain, &fitted.data, &mask, hyper))??;
    let baseline = beta_baseline_ppd(&fitted.data, &mask)?;

    let stage = Staging::new(out)?;
    let mut r = Manifest::new();
    r.set("log_ppd_total", fmt_f64(report.log_ppd_total));
    r.set("scaled_ppd", fmt_f64(report.scaled_ppd));
    r.set("n_held_out", report.n_held_out);
    r.set("n_scored", report.n_scored);
    r.set("n_clamped", report.n_clamped);
    r.set("n_snapshots", report.n_snapshots);
    r.set("baseline_log_ppd_total", fmt_f64(baseline.log_ppd_total));
    r.set("baseline_scaled_ppd", fmt_f64(baseline.scaled_ppd));
    r.write(&stage.path(REPORT))?;
    if cfg.per_cell {
        write_cells(&stage.path(CELLS), &fitted.data, &report)?;
    }
    let mut man = base_manifest("evaluate", cfg);
    man.set("run.chain_sha256", sha256_file(&dir.join(CHAIN))?);
    man.set("run.data_sha256", sha256_file(&dir.join(DATA))?);
    man.set("run.mask_cells", mask.len());
    man.write(&stage.path(MANIFEST))?;
    stage.commit()?;
    for c in report.cells.iter().filter(|c| c.error.is_some()) {
        log::warn!(
            "cell ({}, {}) not scored: {}",
            c.row,
            c.col,
            c.error.as_deref().unwrap_or("")
        );
    }
    info!(
        "scaled PPD {} over {} cells (single-beta baseline {})",
        report.scaled_ppd, report.n_scored, baseline.scaled_ppd
    );
    Ok(EvaluateSummary { report, baseline })
}

fn write_cells(path: &Path, data: &BetaMatrix, report: &PpdReport) -> Result<()> {
    use std::io::Write;
    let f = std::fs::File::create(path).map_err(|e| Error::io(format!("cannot create {}", path.display()), e))?;
    let mut w = std::io::BufWriter::new(f);
    let io = |e| Error::io(format!("cannot write {}", path.display()), e);
    writeln!(w, "row\tcol\tsample\tgene\tvalue\tclamped\tlog_density\terror").map_err(io)?;
    for c in &report.cells {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            c.row,
            c.col,
            data.row_ids()[c.row],
            data.col_ids()[c.col],
            fmt_f64(c.value),
            c.clamped,
            c.log_density.map(fmt_f64).unwrap_or_default(),
            c.error.as_deref().unwrap_or("")
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn cmd_generate(cfg: &RunConfig) -> Result<BetaMatrix> {
    cfg.validate()?;
    let out = cfg.output()?;
    let (n, m) = match (cfg.rows, cfg.cols) {
        (Some(n), Some(m)) if n > 0 && m > 0 => (n, m),
        _ => return Err(Error::Config("generate needs positive --rows and --cols".into())),
    };
    let (state, sim) = generate(n, m, &cfg.hyper, cfg.sampler.seed)?;
    let stage = Staging::new(out)?;
    write_beta_matrix(&stage.path(DATA), &sim.data)?;
    let rows = sim.data.row_ids().to_vec();
    let comps: Vec<String> = (1..=cfg.hyper.k).map(|c| format!("k{c}")).collect();
    let genes = sim.data.col_ids().to_vec();
    write_factor(&stage.path("theta1.tsv"), &rows, &comps, &state.theta1)?;
    write_factor(&stage.path("theta2.tsv"), &rows, &comps, &state.theta2)?;
    write_factor(&stage.path("phi.tsv"), &comps, &genes, &state.phi)?;
    let counts = |y: &Array2<u64>| y.mapv(|c| c as f64);
    write_factor(&stage.path("y1.tsv"), &rows, &genes, &counts(&sim.y1))?;
    write_factor(&stage.path("y2.tsv"), &rows, &genes, &counts(&sim.y2))?;
    base_manifest("generate", cfg).write(&stage.path(MANIFEST))?;
    stage.commit()?;
    info!("generated {n}x{m} matrix");
    Ok(sim.data)
}

pub fn cmd_embed(cfg: &RunConfig) -> Result<crate::model::Embedding> {
    cfg.validate()?;
    let dir = cfg.input()?;
    let out = cfg.output()?;
    check_distinct(dir, out)?;
    let fitted = load_run(dir)?;
    let emb = fitted
        .chain
        .mean_embedding()
        .ok_or_else(|| Error::Config("chain has no snapshots".into()))?;
    let stage = Staging::new(out)?;
    write_embedding(&stage.path(EMBEDDING), &emb, fitted.data.row_ids())?;
    let mut man = base_manifest("embed", cfg);
    man.set("run.chain_sha256", sha256_file(&dir.join(CHAIN))?);
    man.write(&stage.path(MANIFEST))?;
    stage.commit()?;
    Ok(emb)
}

/// Resolves settings and runs the chosen command.
pub fn execute(cli: &Cli) -> Result<()> {
    let cfg = RunConfig::resolve(cli.command.flags())?;
    match &cli.command {
        Command::Fit(_) => cmd_fit(&cfg).map(|_| ()),
        Command::Evaluate(_) => {
            let s = cmd_evaluate(&cfg)?;
            println!("scaled_ppd\t{}", fmt_f64(s.report.scaled_ppd));
            Ok(())
        }
        Command::Generate(_) => cmd_generate(&cfg).map(|_| ()),
        Command::Embed(_) => cmd_embed(&cfg).map(|_| ()),
    }
}
