use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use kex::archive::{Archive, Selection};
use kex::dictionary::{group_synsets, propose_keys, term_frequencies, Dictionary, SynsetId};
use kex::engine::{derive_dependency_graph, run_batch, EngineConfig, NamedDoc, RunReport, Sink, SqlSink, TsvSink};
use kex::fetcher::{fetch_and_archive, FetchJob};
use kex::mapping::{compile, load_schema, MappingFile};
use kex::pipeline::{run_pipeline, PipelineDef, StepRegistry};
use kex::structure::{analyze, build_paths, Extraction, ExtractionConfig, PathStrategy, XmlOptions};
use kex::validation::{
    collect_xpaths_from_files, conversion_report, coverage, expected_keys, occupation_ratios, sample_unmapped,
    XPathStats, DEFAULT_EXAMPLES,
};

#[derive(Parser)]
#[command(name = "kex", version, about = "Turn crawled documents into relational rows")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Download the URLs of a fetch job into the archive.
    Fetch {
        #[arg(long)]
        job: PathBuf,
        #[arg(long)]
        archive: PathBuf,
    },
    /// Convert HTML documents into key/value XML with a dictionary.
    Analyze(AnalyzeArgs),
    /// Map XML documents into database rows.
    Parse(ParseArgs),
    /// Validation reports.
    #[command(subcommand)]
    Validate(ValidateCommand),
    /// Dictionary tooling.
    #[command(subcommand)]
    Dict(DictCommand),
    /// Serve the HTTP API and, optionally, the UI bundle.
    Serve(ServeArgs),
}

#[derive(Args)]
struct ExtractionArgs {
    /// Dictionary JSON file.
    #[arg(long)]
    dict: PathBuf,
    /// Extraction settings as JSON; defaults apply when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Charset of the input files, overriding any declaration in them.
    #[arg(long)]
    charset: Option<String>,
    /// Path form used for keys and values, overriding the config file.
    #[arg(long, value_enum)]
    strategy: Option<StrategyArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Tagonly,
    Unique,
    Attr,
}

impl From<StrategyArg> for PathStrategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Tagonly => PathStrategy::TagOnly,
            StrategyArg::Unique => PathStrategy::UniqueTag,
            StrategyArg::Attr => PathStrategy::UniqueTagWithAttr,
        }
    }
}

impl ExtractionArgs {
    fn load(&self) -> Result<(Dictionary, ExtractionConfig)> {
        let dict = Dictionary::load(&self.dict).with_context(|| format!("loading {}", self.dict.display()))?;
        let mut config: ExtractionConfig = match &self.config {
            Some(p) => serde_json::from_slice(&fs::read(p)?).with_context(|| format!("parsing {}", p.display()))?,
            None => ExtractionConfig::default(),
        };
        if let Some(s) = self.strategy {
            config.strategy = s.into();
        }
        Ok((dict, config))
    }
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    extraction: ExtractionArgs,
    /// Nest keys under their dictionary parents.
    #[arg(long)]
    hierarchical: bool,
    #[arg(long, default_value = "document")]
    root: String,
    /// Directory receiving one `<name>.xml` per input, or `<record id>.xml`
    /// when reading from an archive.
    #[arg(long)]
    out: PathBuf,
    /// Archive to read HTML records from; requires --in.
    #[arg(long, requires = "selection")]
    archive: Option<PathBuf>,
    /// Record selection such as `bg` or `bg@2016-01-01..2016-01-31`.
    #[arg(long = "in")]
    selection: Option<String>,
    /// HTML files or directories, used instead of an archive.
    #[arg(required_unless_present = "archive", conflicts_with = "archive")]
    inputs: Vec<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SinkKind {
    Sql,
    Tsv,
}

#[derive(Args)]
struct ParseArgs {
    #[arg(long)]
    schema: PathBuf,
    #[arg(long)]
    mapping: PathBuf,
    /// Archive to read records from; requires --corpus.
    #[arg(long, requires = "corpus")]
    archive: Option<PathBuf>,
    /// Record selection such as `bg`, `bg@2016-01-01..2016-01-31` or `*`.
    #[arg(long)]
    corpus: Option<String>,
    /// Pipeline definition for archive records; passthrough when absent.
    #[arg(long)]
    pipeline: Option<PathBuf>,
    /// XML files or directories, used instead of an archive.
    #[arg(long = "input", conflicts_with = "archive")]
    inputs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "sql")]
    sink: SinkKind,
    /// SQL file, or directory of TSV files.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, default_value_t = 1000)]
    block_size: u64,
    #[arg(long, default_value_t = 10000)]
    flush_threshold: usize,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    #[arg(long)]
    no_cache: bool,
}

#[derive(Subcommand)]
enum ValidateCommand {
    /// Count every XML path over a corpus and write the statistics as JSON.
    Xpaths {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_EXAMPLES)]
        examples: usize,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Share of corpus paths bound by a mapping.
    Coverage {
        #[arg(long)]
        stats: PathBuf,
        #[arg(long)]
        mapping: PathBuf,
        /// Number of most frequent unmapped paths to list.
        #[arg(long, default_value_t = 10)]
        sample: usize,
    },
    /// How much of each HTML document the dictionary converts.
    Conversion {
        #[command(flatten)]
        extraction: ExtractionArgs,
        /// Expected keys; when absent, keys found in at least --min-ratio of
        /// the inputs are expected.
        #[arg(long, value_delimiter = ',')]
        expected: Vec<String>,
        #[arg(long, default_value_t = 0.5)]
        min_ratio: f64,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Share of rows held by each table, from a `parse` report.
    Occupation {
        #[arg(long)]
        report: PathBuf,
    },
}

#[derive(Subcommand)]
enum DictCommand {
    /// Propose a dictionary from frequent text nodes of sample HTML.
    Propose {
        #[arg(long)]
        lang: String,
        #[arg(long, default_value_t = 0.5)]
        min_ratio: f64,
        /// Similarity at which two terms join the same synset.
        #[arg(long, default_value_t = 0.9)]
        threshold: f64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long = "static")]
    static_dir: Option<PathBuf>,
    #[arg(long)]
    archive: Option<PathBuf>,
    #[arg(long)]
    pipeline: Option<PathBuf>,
    #[arg(long)]
    dictionaries: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    preview_workers: usize,
}

/// Files under `inputs`, expanding directories to their files with one of
/// `extensions`, in path order.
fn collect_files(inputs: &[PathBuf], extensions: &[&str]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for input in inputs {
        if input.is_dir() {
            for entry in walkdir::WalkDir::new(input).sort_by_file_name() {
                let entry = entry?;
                let ext = entry.path().extension().and_then(|e| e.to_str()).unwrap_or("");
                if entry.file_type().is_file() && extensions.iter().any(|x| x.eq_ignore_ascii_case(ext)) {
                    out.push(entry.into_path());
                }
            }
        } else if input.is_file() {
            out.push(input.clone());
        } else {
            bail!("no such file or directory: {}", input.display());
        }
    }
    Ok(out)
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn fetch(job: &Path, archive: &Path) -> Result<()> {
    let job = FetchJob::load(job)?;
    let archive = Archive::open(archive)?;
    let report = fetch_and_archive(&job, &archive)?;
    eprintln!("fetched {}, failed {}, skipped {}", report.fetched, report.failed, report.skipped);
    for f in &report.failures {
        eprintln!("  {}: {}", f.url, f.reason);
    }
    Ok(())
}

fn analyze_cmd(args: &AnalyzeArgs) -> Result<()> {
    let (dict, config) = args.extraction.load()?;
    let opts = XmlOptions { root: args.root.clone(), hierarchical: args.hierarchical };
    fs::create_dir_all(&args.out)?;
    if let (Some(archive), Some(selection)) = (&args.archive, &args.selection) {
        let archive = Archive::open(archive)?;
        for record in archive.select(&Selection::parse(selection)?)? {
            let (_, html) = archive.get(&record.id)?;
            let charset = args.extraction.charset.clone().or_else(|| record.charset());
            let (extraction, xml) = analyze(&html, charset.as_deref(), &dict, &config, &opts)
                .with_context(|| format!("analyzing record {}", record.id))?;
            fs::write(args.out.join(format!("{}.xml", record.id)), xml)?;
            eprintln!("{}: {} pairs", record.id, extraction.pairs.len());
        }
        return Ok(());
    }
    let files = collect_files(&args.inputs, &["html", "htm"])?;
    for path in &files {
        let html = fs::read(path)?;
        let (extraction, xml) = analyze(&html, args.extraction.charset.as_deref(), &dict, &config, &opts)
            .with_context(|| format!("analyzing {}", path.display()))?;
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        fs::write(args.out.join(format!("{stem}.xml")), xml)?;
        eprintln!("{}: {} pairs", path.display(), extraction.pairs.len());
    }
    Ok(())
}

fn parse_cmd(args: &ParseArgs) -> Result<()> {
    let schema = load_schema(&fs::read(&args.schema)?).context("loading schema")?;
    let mapping = MappingFile::parse(&fs::read(&args.mapping)?).context("loading mapping")?;
    let plan = compile(&mapping, &schema)?;
    let graph = derive_dependency_graph(&schema)?;
    let config = EngineConfig {
        workers: args.workers,
        block_size: args.block_size,
        flush_threshold: args.flush_threshold,
        batch_size: args.batch_size,
        cache: !args.no_cache,
    };
    let mut sink: Box<dyn Sink> = match args.sink {
        SinkKind::Sql => Box::new(SqlSink::new(BufWriter::new(fs::File::create(&args.out)?), &graph)?),
        SinkKind::Tsv => Box::new(TsvSink::new(&args.out, &graph)?),
    };
    let report: RunReport = match (&args.archive, &args.corpus) {
        (Some(archive), Some(corpus)) => {
            let archive = Archive::open(archive)?;
            let pipeline = match &args.pipeline {
                Some(p) => PipelineDef::load(p, &StepRegistry::with_builtins())?,
                None => PipelineDef::passthrough(),
            };
            let records = archive.select(&Selection::parse(corpus)?)?;
            run_batch(
                &records,
                |r| r.id.clone(),
                |r| run_pipeline(&pipeline, r, &archive).map_err(|e| e.to_string()),
                &plan,
                &graph,
                sink.as_mut(),
                &config,
            )?
        }
        _ => {
            if args.inputs.is_empty() {
                bail!("give either --archive with --corpus, or --input");
            }
            let files = collect_files(&args.inputs, &["xml"])?;
            run_batch(
                &files,
                |p| p.display().to_string(),
                |p| {
                    let bytes = fs::read(p).map_err(|e| e.to_string())?;
                    Ok(vec![NamedDoc { name: file_name(p), bytes }])
                },
                &plan,
                &graph,
                sink.as_mut(),
                &config,
            )?
        }
    };
    print_json(&report)?;
    if !report.failures.is_empty() {
        eprintln!("{} of {} items failed", report.failures.len(), report.docs + report.failures.len() as u64);
    }
    Ok(())
}

fn extract_files(files: &[PathBuf], ex: &ExtractionArgs) -> Result<(Dictionary, Vec<Extraction>)> {
    let (dict, config) = ex.load()?;
    let opts = XmlOptions::default();
    let mut out = Vec::new();
    for path in files {
        let html = fs::read(path)?;
        let (extraction, _) = analyze(&html, ex.charset.as_deref(), &dict, &config, &opts)
            .with_context(|| format!("analyzing {}", path.display()))?;
        out.push(extraction);
    }
    Ok((dict, out))
}

fn validate_cmd(cmd: &ValidateCommand) -> Result<()> {
    match cmd {
        ValidateCommand::Xpaths { out, examples, inputs } => {
            let files = collect_files(inputs, &["xml"])?;
            let stats = collect_xpaths_from_files(&files, *examples);
            fs::write(out, stats.to_json())?;
            eprintln!("{} paths over {} files", stats.len(), files.len());
            for s in &stats.skipped {
                eprintln!("  skipped {}: {}", s.file, s.error);
            }
        }
        ValidateCommand::Coverage { stats, mapping, sample } => {
            let stats = XPathStats::from_json(&fs::read(stats)?)?;
            let mapping = MappingFile::parse(&fs::read(mapping)?)?;
            let report = coverage(&stats, &mapping);
            let unmapped: Vec<serde_json::Value> = sample_unmapped(&report, &stats, *sample)
                .into_iter()
                .map(|(path, count)| serde_json::json!({"path": path, "count": count}))
                .collect();
            print_json(&serde_json::json!({"coverage": report, "unmappedSample": unmapped}))?;
        }
        ValidateCommand::Conversion { extraction, expected, min_ratio, inputs } => {
            let files = collect_files(inputs, &["html", "htm"])?;
            let (_, extractions) = extract_files(&files, extraction)?;
            let expected: Vec<SynsetId> = if expected.is_empty() {
                expected_keys(&extractions, *min_ratio)
            } else {
                expected.iter().map(|k| SynsetId::new(k.as_str())).collect()
            };
            let mut total = 0.0;
            for (path, ex) in files.iter().zip(&extractions) {
                let report = conversion_report(&file_name(path), ex, &expected);
                println!("{}", path.display());
                print!("{}", report.render());
                total += report.conversion_rate;
            }
            if !files.is_empty() {
                println!("mean conversion rate {:.4} over {} documents", total / files.len() as f64, files.len());
            }
        }
        ValidateCommand::Occupation { report } => {
            let value: serde_json::Value = serde_json::from_slice(&fs::read(report)?)?;
            let rows: BTreeMap<String, u64> = serde_json::from_value(value.get("rows").cloned().unwrap_or(value))
                .context("expected a parse report or a table-to-count object")?;
            print_json(&occupation_ratios(&rows)?)?;
        }
    }
    Ok(())
}

fn dict_cmd(cmd: &DictCommand) -> Result<()> {
    let DictCommand::Propose { lang, min_ratio, threshold, config, out, inputs } = cmd;
    let config: ExtractionConfig = match config {
        Some(p) => serde_json::from_slice(&fs::read(p)?)?,
        None => ExtractionConfig::default(),
    };
    let files = collect_files(inputs, &["html", "htm"])?;
    let sample = files
        .iter()
        .map(|p| Ok(build_paths(&fs::read(p)?, config.strategy)?))
        .collect::<Result<Vec<_>>>()?;
    let stats = term_frequencies(&sample)?;
    let candidates = propose_keys(&stats, *min_ratio);
    let dict = group_synsets(&candidates, *threshold, lang)?;
    dict.save(out)?;
    eprintln!("{} candidate terms grouped into {} synsets", candidates.len(), dict.len());
    Ok(())
}

fn serve_cmd(args: &ServeArgs) -> Result<()> {
    let config = kex_service::ServiceConfig {
        archive: args.archive.clone(),
        pipeline: args.pipeline.clone(),
        dictionaries: args.dictionaries.clone(),
        static_dir: args.static_dir.clone(),
        preview_workers: args.preview_workers,
    };
    let addr: SocketAddr = format!("{}:{}", args.host, args.port).parse().context("invalid host or port")?;
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(kex_service::serve(&config, addr))?;
    Ok(())
}

fn main() -> Result<()> {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    let cli = Cli::parse();
    match &cli.command {
        Command::Fetch { job, archive } => fetch(job, archive),
        Command::Analyze(args) => analyze_cmd(args),
        Command::Parse(args) => parse_cmd(args),
        Command::Validate(cmd) => validate_cmd(cmd),
        Command::Dict(cmd) => dict_cmd(cmd),
        Command::Serve(args) => serve_cmd(args),
    }?;
    std::io::stdout().flush()?;
    Ok(())
}
