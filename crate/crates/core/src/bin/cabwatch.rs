use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use chrono::{NaiveDate, TimeDelta, Utc};
use clap::{Args, Parser, Subcommand};

use cabwatch::gallery::{Enrollment, Gallery};
use cabwatch::report::{generate_report, render_report, ReportFormat, DEFAULT_CADENCE_HOURS};
use cabwatch::service::dispatch::{replay_dead_letter, Dispatcher};
use cabwatch::service::pipeline::{enroll_image, open_source, run_with, Perception};
use cabwatch::service::scenario::{write_scenario, Scenario};
use cabwatch::service::{PipelineConfig, ServiceError};
use cabwatch::tracker::{read_observation_log, replay, TrackerConfig};

/// Operator recognition and shift monitoring for locomotive cab cameras.
#[derive(Parser)]
#[command(name = "cabwatch", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Add an operator to the gallery from a face image.
    Enroll(EnrollArgs),
    /// Process a frame source: recognize, track shifts, raise alerts.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Frame directory, overriding the config's source.
        #[arg(long)]
        source_dir: Option<PathBuf>,
    },
    /// Build the daily shift report from an observation log.
    Report(ReportArgs),
    /// Inspect a gallery.
    Gallery {
        #[command(subcommand)]
        command: GalleryCommand,
    },
    /// Re-send alerts spooled in the dead-letter file.
    ReplayAlerts {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write a synthetic fixture scenario with a runnable config.
    Simulate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct EnrollArgs {
    #[arg(long)]
    gallery: PathBuf,
    #[arg(long)]
    id: String,
    #[arg(long)]
    name: String,
    #[arg(long)]
    image: PathBuf,
    /// Use the detector and embedder from this pipeline config instead of
    /// treating the whole image as the face.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Fixture identity tag for the mock embedder.
    #[arg(long)]
    tag: Option<String>,
    /// Overwrite an existing record with the same id.
    #[arg(long)]
    replace: bool,
    /// Mock embedder seed when no config is given.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    log: PathBuf,
    #[arg(long)]
    date: NaiveDate,
    #[arg(long, default_value = "text")]
    format: ReportFormat,
    /// Gallery for display names.
    #[arg(long)]
    gallery: Option<PathBuf>,
    /// Pipeline config for tracker settings, cadence and gallery.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    cadence: Option<u32>,
}

#[derive(Subcommand)]
enum GalleryCommand {
    List {
        #[arg(long)]
        gallery: PathBuf,
    },
}

/// An error with the process exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Failure { code: 1, error }
    }
}

impl From<ServiceError> for Failure {
    fn from(e: ServiceError) -> Self {
        Failure {
            code: e.exit_code() as u8,
            error: e.into(),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Enroll(args) => enroll(args),
        Command::Run { config, source_dir } => run(&config, source_dir.as_deref()),
        Command::Report(args) => report(args),
        Command::Gallery {
            command: GalleryCommand::List { gallery },
        } => list(&gallery),
        Command::ReplayAlerts { config } => replay_alerts(&config),
        Command::Simulate { out, seed } => simulate(&out, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn enroll(args: EnrollArgs) -> Result<(), Failure> {
    let mut gallery = if args.gallery.exists() {
        Gallery::load(&args.gallery).map_err(ServiceError::from)?
    } else {
        Gallery::new()
    };
    let perception = match &args.config {
        Some(path) => Perception::from_config(&PipelineConfig::load(path).map_err(ServiceError::from)?)?,
        None => Perception::whole_frame(args.seed),
    };
    let embedding = enroll_image(&perception, &args.image, args.tag.as_deref())?;
    gallery
        .enroll(
            Enrollment {
                operator_id: args.id.clone(),
                display_name: args.name,
                source_image_ref: args.image.display().to_string(),
                enrolled_at: Utc::now(),
            },
            embedding,
            args.replace,
        )
        .map_err(ServiceError::from)?;
    gallery.save(&args.gallery).map_err(ServiceError::from)?;
    println!("enrolled {} ({} records)", args.id, gallery.len());
    Ok(())
}

fn run(config: &Path, source_dir: Option<&Path>) -> Result<(), Failure> {
    let cfg = PipelineConfig::load(config).map_err(ServiceError::from)?;
    cfg.check_paths().map_err(ServiceError::from)?;
    let gallery = Gallery::load(&cfg.gallery_path).map_err(ServiceError::from)?;
    let perception = Perception::from_config(&cfg)?;
    let frames = open_source(&cfg, source_dir).map_err(ServiceError::from)?;
    let out = run_with(&cfg, &perception, &gallery, frames.into_iter().map(Ok))?;
    let s = &out.summary;
    println!(
        "frames {} (failed {}), detections {}, matches {}, unknown {}, alerts {} (overtime {}, trespass {})",
        s.frames_sampled,
        s.frames_failed,
        s.detections,
        s.matches,
        s.unknowns,
        s.alerts(),
        s.overtime_alerts,
        s.trespass_alerts
    );
    let d = &s.dispatch;
    println!(
        "dispatch: delivered {}, undelivered {}, rejected {}, local only {}",
        d.delivered, d.undelivered, d.rejected, d.local_only
    );
    if d.rejected > 0 {
        return Err(anyhow!(
            "webhook rejected {} alert(s); they were spooled to {}",
            d.rejected,
            cfg.dead_letter.display()
        )
        .into());
    }
    Ok(())
}

fn report(args: ReportArgs) -> Result<(), Failure> {
    let cfg = match &args.config {
        Some(p) => Some(PipelineConfig::load(p).map_err(ServiceError::from)?),
        None => None,
    };
    let tracker_cfg = cfg.as_ref().map_or_else(TrackerConfig::default, |c| c.tracker);
    let cadence = args
        .cadence
        .or(cfg.as_ref().map(|c| c.report_cadence_hours))
        .unwrap_or(DEFAULT_CADENCE_HOURS);
    let gallery_path = args.gallery.clone().or(cfg.as_ref().map(|c| c.gallery_path.clone()));
    let names: BTreeMap<String, String> = match gallery_path {
        Some(p) => Gallery::load(&p)
            .map_err(ServiceError::from)?
            .records()
            .iter()
            .map(|r| (r.operator_id.clone(), r.display_name.clone()))
            .collect(),
        None => BTreeMap::new(),
    };

    let log =
        read_observation_log(&args.log).with_context(|| format!("reading observation log {}", args.log.display()))?;
    let (tracker, _) = replay(&log, tracker_cfg).context("replaying observation log")?;
    let sessions = tracker.sessions();
    let report = generate_report(&log, &sessions, &names, args.date, cadence, Utc::now()).context("building report")?;
    let bytes = render_report(&report, args.format).context("rendering report")?;
    std::io::stdout().write_all(&bytes).context("writing report")?;
    Ok(())
}

fn list(gallery: &Path) -> Result<(), Failure> {
    let g = Gallery::load(gallery).map_err(ServiceError::from)?;
    println!("{} operators (gallery version {})", g.len(), g.version());
    for r in g.records() {
        println!(
            "{}\t{}\t{}\t{}",
            r.operator_id,
            r.display_name,
            cabwatch::timefmt::format(&r.enrolled_at),
            r.source_image_ref
        );
    }
    Ok(())
}

fn replay_alerts(config: &Path) -> Result<(), Failure> {
    let cfg = PipelineConfig::load(config).map_err(ServiceError::from)?;
    if cfg.webhook_url.is_none() {
        return Err(anyhow!("no webhook_url configured").into());
    }
    let dispatcher = Dispatcher::new(cfg.webhook_url.clone(), cfg.dispatch, cfg.dead_letter.clone())?;
    let s = replay_dead_letter(&cfg.dead_letter, dispatcher)?;
    println!(
        "replayed: delivered {}, undelivered {}, rejected {}",
        s.delivered, s.undelivered, s.rejected
    );
    Ok(())
}

fn simulate(out: &Path, seed: u64) -> Result<(), Failure> {
    let day = NaiveDate::from_ymd_opt(2017, 5, 17).expect("valid date");
    let at = |h: u32, m: u32| day.and_hms_opt(h, m, 0).expect("valid time").and_utc();
    let mut s = Scenario::new(at(6, 0), at(10, 0), TimeDelta::seconds(20))
        .identity("op01", "TK Tiwari", true)
        .identity("op02", "SK Sharma", true)
        .identity("op03", "RK Verma", true)
        .identity("visitor", "Unknown visitor", false)
        .present("op01", at(6, 0), at(8, 30))
        .present("op02", at(8, 0), at(10, 0))
        .present("op03", at(7, 0), at(7, 40))
        .present("visitor", at(9, 0), at(9, 20));
    s.seed = seed;
    let files = write_scenario(&s, out)?;
    println!("scenario written; run it with:");
    println!("  cabwatch run --config {}", files.config.display());
    Ok(())
}
