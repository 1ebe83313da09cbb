//! `crowdseg` command-line front end: campaign ingest, fusion, evaluation,
//! synthesis, dataset assembly, reporting and the assist service.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod fsio;

use std::ffi::OsString;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use clap::Parser;
use crowdseg_assist::audit::AuditLog;
use crowdseg_assist::{AppState, Backend, Predictor, PredictorConfig};
use crowdseg_core::dataset::Variant;
use crowdseg_core::demo::DemoConfig;
use crowdseg_core::fusion::DEFAULT_THRESHOLD;
use crowdseg_core::ingest::{adapt_platform_export, assemble_campaign, read_campaign_document, CampaignDocument};
use crowdseg_core::metrics::{CiMethod, TTestVariant};
use crowdseg_core::ClassPalette;

use args::{BackendArg, Cli, Command, GeneratorArg, GeneratorFlags, TTestArg};
use commands::Generator;
use config::{endpoint, require_existing, require_path, RunConfig, DEFAULT_ADDR, DEFAULT_CONFIDENCE, DEFAULT_SEED, ENV_ASSIST_REMOTE_URL, ENV_GENERATOR_URL};
use error::CliError;

/// Parses `argv`, runs the subcommand and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn init_logging(verbosity: u8) {
    let level = match verbosity {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(level));
    let _ = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).try_init();
}

fn confidence(flag: Option<f64>, cfg: &RunConfig) -> Result<f64, CliError> {
    let c = flag.or(cfg.confidence).unwrap_or(DEFAULT_CONFIDENCE);
    if !(c > 0.0 && c < 1.0) {
        return Err(CliError::validation("InvalidArguments", format!("confidence {c} outside (0, 1)")));
    }
    Ok(c)
}

fn generator(flags: &GeneratorFlags, cfg: &RunConfig) -> Result<Generator, CliError> {
    let url = endpoint(flags.generator_url.clone(), ENV_GENERATOR_URL, cfg.generator_url.as_ref());
    let kind = match (flags.generator, cfg.generator.as_deref()) {
        (Some(GeneratorArg::Toy), _) => GeneratorArg::Toy,
        (Some(GeneratorArg::Remote), _) => GeneratorArg::Remote,
        (None, Some("toy")) => GeneratorArg::Toy,
        (None, Some("remote")) => GeneratorArg::Remote,
        (None, Some(other)) => return Err(CliError::validation("InvalidConfig", format!("generator {other:?} (toy, remote)"))),
        (None, None) if url.is_some() => GeneratorArg::Remote,
        (None, None) => GeneratorArg::Toy,
    };
    Ok(match kind {
        GeneratorArg::Toy => Generator::Toy,
        GeneratorArg::Remote => Generator::Remote {
            url: url.ok_or_else(|| CliError::validation("InvalidArguments", format!("remote generator needs --generator-url or {ENV_GENERATOR_URL}")))?,
            timeout: Duration::from_millis(cfg.generator_timeout_ms.unwrap_or(30_000)),
            retries: cfg.generator_retries.unwrap_or(1),
        },
    })
}

fn palette_for(campaign: Option<&PathBuf>, classes: Option<&Vec<String>>) -> Result<ClassPalette, CliError> {
    match (campaign, classes) {
        (Some(c), _) => Ok(read_campaign_document(c)?.palette),
        (None, Some(names)) => ClassPalette::from_names(names).map_err(CliError::from),
        (None, None) => Err(CliError::validation("InvalidArguments", "--campaign or --classes is required for the palette")),
    }
}

fn parse_variant(s: &str) -> Result<Variant, CliError> {
    s.parse().map_err(|e: String| CliError::validation("InvalidArguments", e))
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    init_logging(cli.verbose.max(cfg.verbosity.unwrap_or(0)));
    let seed_of = |flag: Option<u64>| flag.or(cfg.seed).unwrap_or(DEFAULT_SEED);
    let recipe = cfg.recipe.unwrap_or_default();
    let threshold_of = |flag: Option<u16>| flag.or(cfg.threshold).unwrap_or(DEFAULT_THRESHOLD);

    match cli.command {
        Command::Serve(a) => {
            cfg.check_subcommand("serve")?;
            let mut pc = cfg.predictor.clone().unwrap_or_default();
            if let Some(url) = endpoint(a.remote_url, ENV_ASSIST_REMOTE_URL, pc.remote_url.as_ref()) {
                pc.remote_url = Some(url);
                if a.backend.is_none() {
                    pc.backend = Backend::Remote;
                }
            }
            match a.backend {
                Some(BackendArg::Builtin) => {
                    pc.backend = Backend::Builtin;
                    pc.remote_url = None;
                }
                Some(BackendArg::Remote) => pc.backend = Backend::Remote,
                None => {}
            }
            pc.timeout_ms = a.timeout_ms.unwrap_or(pc.timeout_ms);
            pc.retries = a.retries.unwrap_or(pc.retries);
            serve(&pc, a.addr.or(cfg.addr.clone()).unwrap_or_else(|| DEFAULT_ADDR.into()), a.audit_log.or(cfg.audit_log.clone()))
        }
        Command::Ingest(a) => {
            cfg.check_subcommand("ingest")?;
            let out = require_path("out", a.out, &cfg.out)?;
            let doc = if let Some(platform) = a.platform {
                let export = fsio::read_json(&platform)?;
                let imported = adapt_platform_export(&export, &a.task_id)?;
                if imported.warning_count() > 0 {
                    eprintln!("warning: skipped {} unsupported result(s)", imported.warning_count());
                }
                let names = a.classes.or(cfg.classes.clone()).ok_or_else(|| CliError::validation("InvalidArguments", "--classes is required for a platform export"))?;
                imported.into_document(ClassPalette::from_names(&names)?, Vec::new())?
            } else {
                let path = require_existing("campaign", a.campaign, &cfg.campaign)?;
                fsio::ensure_distinct(&path, &out)?;
                let doc = read_campaign_document(&path)?;
                // decoding every mask is part of the validation
                assemble_campaign(doc.clone(), path.parent().unwrap_or(std::path::Path::new(".")))?;
                doc
            };
            let doc = canonical(doc);
            fsio::write_json(&out, &doc)?;
            println!("{} images, {} annotations, {} tasks", doc.images.len(), doc.annotations.len(), doc.tasks.len());
            Ok(())
        }
        Command::Merge(a) => {
            cfg.check_subcommand("merge")?;
            let campaign = require_existing("campaign", a.campaign, &cfg.campaign)?;
            let out = require_path("out", a.out, &cfg.out)?;
            let summary = commands::merge(&campaign, threshold_of(a.threshold), &out)?;
            println!("merged {} image(s) at threshold {}", summary.images.len(), summary.policy.threshold);
            Ok(())
        }
        Command::Eval(a) => {
            cfg.check_subcommand("eval")?;
            let pred = require_existing("pred", a.pred, &cfg.pred)?;
            let gt = require_existing("gt", a.gt, &cfg.gt)?;
            let out = require_path("out", a.out, &cfg.out)?;
            let palette = palette_for(a.campaign.as_ref().or(cfg.campaign.as_ref()), a.classes.as_ref().or(cfg.classes.as_ref()))?;
            let method = match a.bootstrap {
                Some(resamples) => CiMethod::Bootstrap { resamples, seed: seed_of(a.seed) },
                None => CiMethod::StudentT,
            };
            let name = a.name.unwrap_or_else(|| pred.file_name().map_or("pred".into(), |n| n.to_string_lossy().into_owned()));
            let report = commands::eval(&commands::EvalSettings {
                pred,
                gt,
                palette: Arc::new(palette),
                confidence: confidence(a.confidence, &cfg)?,
                method,
                name,
                out,
            })?;
            print!("{}", report.to_table());
            Ok(())
        }
        Command::Synth(a) => {
            cfg.check_subcommand("synth")?;
            let index = commands::synth(&commands::SynthSettings {
                campaign: require_existing("campaign", a.campaign, &cfg.campaign)?,
                out: require_path("out", a.out, &cfg.out)?,
                seed: seed_of(a.seed),
                recipe,
                generator: generator(&a.generator, &cfg)?,
            })?;
            println!("wrote {} synthetic image(s)", index.len());
            Ok(())
        }
        Command::Build(a) => {
            cfg.check_subcommand("build")?;
            let variant = a.variant.or(cfg.variant.clone()).ok_or_else(|| CliError::validation("InvalidArguments", "--variant is required"))?;
            let synthetic = a.synthetic.or(cfg.synthetic.clone());
            let manifest = commands::build(&commands::BuildSettings {
                campaign: require_existing("campaign", a.campaign, &cfg.campaign)?,
                variant: parse_variant(&variant)?,
                synthetic,
                out: require_path("out", a.out, &cfg.out)?,
                seed: seed_of(a.seed),
                threshold: threshold_of(a.gate.threshold),
                gate: cfg.gate(&a.gate),
                recipe,
            })?;
            let s = &manifest.summary;
            println!(
                "{}: {} real train, {} synthetic, {} crowd merged, {} test",
                manifest.name, s.real_train, s.synthetic, s.crowd_merged, s.test
            );
            Ok(())
        }
        Command::Report(a) => {
            cfg.check_subcommand("report")?;
            let evals = a
                .evals
                .iter()
                .map(|spec| {
                    let (name, dir) = spec.split_once('=').ok_or_else(|| CliError::validation("InvalidArguments", format!("--eval {spec:?} is not NAME=DIR")))?;
                    Ok((name.to_string(), PathBuf::from(dir)))
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            let out = require_path("out", a.out, &cfg.out)?;
            let variant = match a.test {
                TTestArg::Pooled => TTestVariant::Pooled,
                TTestArg::Welch => TTestVariant::Welch,
            };
            commands::report(&evals, variant, &out)?;
            print!("{}", std::fs::read_to_string(out.join("report.txt"))?);
            Ok(())
        }
        Command::Demo(a) => {
            cfg.check_subcommand("demo")?;
            let d = DemoConfig::default();
            let config = DemoConfig {
                n_pool: a.n_pool.unwrap_or(d.n_pool),
                n_crowd: a.n_crowd.unwrap_or(d.n_crowd),
                n_annotators: a.annotators.unwrap_or(d.n_annotators),
                size: a.size.unwrap_or(d.size),
                seed: a.seed.or(cfg.seed).unwrap_or(d.seed),
            };
            let out = require_path("out", a.out, &cfg.out)?;
            commands::write_demo(&out, &config)?;
            println!("demo campaign written to {} (seed {})", out.display(), config.seed);
            Ok(())
        }
        Command::Pipeline(a) => {
            cfg.check_subcommand("pipeline")?;
            let outcome = commands::pipeline(&commands::PipelineSettings {
                campaign: require_existing("campaign", a.campaign, &cfg.campaign)?,
                out: require_path("out", a.out, &cfg.out)?,
                seed: seed_of(a.seed),
                threshold: threshold_of(a.gate.threshold),
                gate: cfg.gate(&a.gate),
                confidence: confidence(a.confidence, &cfg)?,
                recipe,
                generator: generator(&a.generator, &cfg)?,
            })?;
            for m in &outcome.manifests {
                println!("{}: {} items", m.name, m.summary.total);
            }
            Ok(())
        }
    }
}

/// Sorted images, annotations and tasks; the palette keeps its order.
pub fn canonical(mut doc: CampaignDocument) -> CampaignDocument {
    doc.images.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    doc.annotations.sort_by(|a, b| {
        (&a.image_id, &a.annotator_id, &a.class_name, a.created_at).cmp(&(&b.image_id, &b.annotator_id, &b.class_name, b.created_at))
    });
    doc.tasks.sort_by(|a, b| a.task_id.cmp(&b.task_id));
    doc
}

fn serve(pc: &PredictorConfig, addr: String, audit: Option<PathBuf>) -> Result<(), CliError> {
    let predictor = Predictor::from_config(pc).map_err(|e| CliError::validation("InvalidConfig", e))?;
    let addr: std::net::SocketAddr = addr.parse().map_err(|e| CliError::validation("InvalidArguments", format!("--addr {addr}: {e}")))?;
    let audit = audit.map(|p| AuditLog::open(&p)).transpose()?;
    let state = Arc::new(AppState::new(predictor, audit));
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(crowdseg_assist::serve(addr, state))?;
    Ok(())
}
