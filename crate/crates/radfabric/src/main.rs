use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use radfabric::agents::{self, AgentRole};
use radfabric::anatomy::{correlate, partition_lung_fields};
use radfabric::mcp::{ToolServer, ToolSpec};
use radfabric::pipeline::{
    self, Config, DatasetManifest, PipelineError, ReasonerKind, StudyInput,
};
use radfabric::raster::{Heatmap, RegionCode, SegmentationMask};
use radfabric::reasoning::TranscriptFormat;
use radfabric::reward::{self, load_ground_truth_csv};

const EXIT_INPUT_ERROR: u8 = 1;
const EXIT_REMOTE_FAILURE: u8 = 2;

#[derive(Parser)]
#[command(name = "radfabric", version, about = "Multi-agent chest X-ray diagnostic orchestration")]
struct Cli {
    /// Configuration file (JSON); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Expose the registered agents as MCP tools on a transport.
    Serve {
        /// Listen address for TCP transport; stdio when omitted.
        #[arg(long)]
        tcp: Option<String>,
    },
    /// Run the pipeline for one study id or a dataset directory with a
    /// manifest.json.
    Run {
        target: String,
        /// Run agents one at a time instead of fanning out.
        #[arg(long)]
        serial: bool,
    },
    /// Compute the accuracy table over persisted records.
    Eval {
        records_dir: PathBuf,
        ground_truth: PathBuf,
        /// Binarization threshold override.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Score a JSONL batch of reasoning transcripts.
    RewardScore {
        transcripts: PathBuf,
        ground_truth: PathBuf,
    },
    /// Correlate a heatmap grid against a segmentation mask.
    Correlate {
        heatmap: PathBuf,
        mask: PathBuf,
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Fixture store maintenance.
    Fixtures {
        #[command(subcommand)]
        command: FixturesCommand,
    },
}

#[derive(Subcommand)]
enum FixturesCommand {
    /// Check every study directory for parseable, in-range fixtures.
    Validate { dir: PathBuf },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successes; everything else is an
            // input error reported on stderr.
            if e.use_stderr() {
                eprintln!("{e}");
                return ExitCode::from(EXIT_INPUT_ERROR);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    let config = match &cli.config {
        Some(path) => match Config::load(path) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("{e}");
                return ExitCode::from(EXIT_INPUT_ERROR);
            }
        },
        None => Config::default(),
    };
    match run_command(cli.command, config) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(EXIT_INPUT_ERROR)
        }
    }
}

fn run_command(command: Command, mut config: Config) -> Result<ExitCode, PipelineError> {
    match command {
        Command::Serve { tcp } => serve(&config, tcp),
        Command::Run { target, serial } => {
            config.serial = config.serial || serial;
            run(&config, &target)
        }
        Command::Eval {
            records_dir,
            ground_truth,
            threshold,
        } => {
            let records = pipeline::load_records(&records_dir)?;
            let gt = load_ground_truth_csv(&ground_truth)
                .map_err(|e| PipelineError::Eval(e.to_string()))?;
            let table =
                pipeline::evaluate(&records, &gt, threshold.unwrap_or(config.threshold))?;
            print!("{}", table.render_text());
            Ok(ExitCode::SUCCESS)
        }
        Command::RewardScore {
            transcripts,
            ground_truth,
        } => {
            let gt = load_ground_truth_csv(&ground_truth)
                .map_err(|e| PipelineError::Eval(e.to_string()))?;
            let input = std::fs::File::open(&transcripts)
                .map_err(|e| PipelineError::Eval(format!("{}: {e}", transcripts.display())))?;
            let stdout = std::io::stdout();
            let mut out = BufWriter::new(stdout.lock());
            reward::score_batch(
                BufReader::new(input),
                &gt,
                &config.reward_weights,
                config.threshold,
                &TranscriptFormat::default(),
                &mut out,
            )
            .map_err(|e| PipelineError::Eval(e.to_string()))?;
            out.flush()
                .map_err(|e| PipelineError::Eval(e.to_string()))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Correlate { heatmap, mask, tau } => {
            correlate_cmd(&heatmap, &mask, tau.unwrap_or(config.tau))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Fixtures {
            command: FixturesCommand::Validate { dir },
        } => validate_fixtures(&dir),
    }
}

fn serve(config: &Config, tcp: Option<String>) -> Result<ExitCode, PipelineError> {
    let mut server = ToolServer::new();
    let registry = config.registry();
    let fixtures_dir = config.fixtures_dir.clone();
    for spec in registry {
        let store = agents::FixtureStore::new(&fixtures_dir);
        let schema = json!({
            "type": "object",
            "properties": {
                "study_id": {"type": "string"},
                "image_ref": {"type": "string"},
            },
            "required": ["study_id"],
        });
        let tool_name = match spec.role {
            AgentRole::Cxr => format!("cxr/{}", spec.name),
            AgentRole::Report => format!("report/{}", spec.name),
        };
        let description = format!("{} agent over the fixture store", spec.name);
        let handler: radfabric::mcp::ToolHandler = match spec.role {
            AgentRole::Cxr => Box::new(move |args: &Value| {
                let study_id = args["study_id"].as_str().unwrap_or("");
                let (scores, heatmaps) = store
                    .load_cxr(spec.id, study_id)
                    .map_err(|e| e.to_string())?;
                let score_obj: serde_json::Map<String, Value> = scores
                    .iter()
                    .map(|(p, v)| (p.to_string(), json!(v)))
                    .collect();
                let map_obj: serde_json::Map<String, Value> = heatmaps
                    .iter()
                    .map(|(p, h)| (p.to_string(), Value::String(h.to_grid_text())))
                    .collect();
                Ok(json!({"scores": score_obj, "heatmaps": map_obj}))
            }),
            AgentRole::Report => Box::new(move |args: &Value| {
                let study_id = args["study_id"].as_str().unwrap_or("");
                let text = store
                    .load_report(&spec.name, study_id)
                    .map_err(|e| e.to_string())?;
                Ok(json!({"text": text}))
            }),
        };
        let tool = ToolSpec {
            name: tool_name,
            description,
            input_schema: schema,
        };
        server
            .register(tool, handler)
            .map_err(|e| PipelineError::Config(e.to_string()))?;
    }
    match tcp {
        Some(addr) => {
            let handle = Arc::new(server)
                .serve_tcp(addr.as_str())
                .map_err(|e| PipelineError::Config(e.to_string()))?;
            eprintln!("listening on {}", handle.local_addr());
            // Foreground server: block until the process is killed.
            loop {
                std::thread::park();
            }
        }
        None => {
            server
                .serve_stdio()
                .map_err(|e| PipelineError::Config(e.to_string()))?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn run(config: &Config, target: &str) -> Result<ExitCode, PipelineError> {
    let target_path = Path::new(target);
    let manifest_path = target_path.join("manifest.json");
    let records = if target_path.is_dir() && manifest_path.exists() {
        let manifest = DatasetManifest::load(&manifest_path)?;
        let mut dataset_config = config.clone();
        dataset_config.fixtures_dir = target_path.to_path_buf();
        pipeline::run_dataset(&dataset_config, &manifest)?
    } else {
        let study_dir = config.fixtures_dir.join(target);
        if !study_dir.is_dir() {
            return Err(PipelineError::Manifest(format!(
                "{target} is neither a dataset directory with manifest.json \
                 nor a study id under {}",
                config.fixtures_dir.display()
            )));
        }
        let mask = study_dir
            .join("mask.grid")
            .exists()
            .then(|| "mask.grid".to_string());
        let input = StudyInput {
            study_id: target.to_string(),
            image: String::new(),
            mask,
        };
        vec![pipeline::run_study(config, &input)?]
    };
    let mut remote_failed = false;
    for record in &records {
        let status = if record.failed { "failed" } else { "ok" };
        println!(
            "{}: {status} (reasoner: {})",
            record.study_id,
            match record.provenance.reasoner {
                ReasonerKind::Remote => "remote",
                ReasonerKind::Fallback => "fallback",
            }
        );
        if record.failed
            && record
                .failures
                .iter()
                .any(|f| f.stage.starts_with("reasoner"))
        {
            remote_failed = true;
        }
    }
    if remote_failed {
        return Ok(ExitCode::from(EXIT_REMOTE_FAILURE));
    }
    if records.iter().any(|r| r.failed) {
        return Ok(ExitCode::from(EXIT_INPUT_ERROR));
    }
    Ok(ExitCode::SUCCESS)
}

fn correlate_cmd(heatmap: &Path, mask: &Path, tau: f64) -> Result<(), PipelineError> {
    let h = Heatmap::read_from(heatmap).map_err(|e| PipelineError::Eval(e.to_string()))?;
    let m = SegmentationMask::read_from(mask).map_err(|e| PipelineError::Eval(e.to_string()))?;
    // Whole-lung masks are partitioned first; already-refined masks pass
    // through untouched.
    let needs_partition = m
        .labels
        .iter()
        .any(|&r| r == RegionCode::LeftLung || r == RegionCode::RightLung);
    let m = if needs_partition {
        partition_lung_fields(&m).map_err(|e| PipelineError::Eval(e.to_string()))?
    } else {
        m
    };
    let c = correlate(&h, &m, tau).map_err(|e| PipelineError::Eval(e.to_string()))?;
    for (region, fraction) in &c.fractions {
        println!("{region:?} {fraction:.3}");
    }
    println!("dominant: {:?}", c.dominant_region);
    match c.centroid {
        Some((x, y)) => println!("centroid: ({x:.3}, {y:.3})"),
        None => println!("centroid: none"),
    }
    Ok(())
}

fn validate_fixtures(dir: &Path) -> Result<ExitCode, PipelineError> {
    let store = agents::FixtureStore::new(dir);
    let study_ids = store
        .study_ids()
        .map_err(|e| PipelineError::Manifest(e.to_string()))?;
    if study_ids.is_empty() {
        return Err(PipelineError::Manifest(format!(
            "no study directories under {}",
            dir.display()
        )));
    }
    let mut problems = Vec::new();
    for study_id in &study_ids {
        let study_dir = dir.join(study_id);
        let entries = std::fs::read_dir(&study_dir)
            .map_err(|e| PipelineError::Manifest(format!("{}: {e}", study_dir.display())))?;
        let mut checked = 0usize;
        for entry in entries.flatten() {
            let name = entry.file_name().to_string_lossy().into_owned();
            if let Some(rest) = name.strip_prefix("agent").and_then(|r| r.strip_suffix(".json")) {
                match rest.parse::<u32>() {
                    Ok(agent_id) => match store.load_cxr(agent_id, study_id) {
                        Ok((scores, _)) => {
                            checked += 1;
                            for (p, score) in scores {
                                if !(0.0..=1.0).contains(&score) {
                                    problems.push(format!(
                                        "{study_id}/{name}: score {score} for {p} outside [0, 1]"
                                    ));
                                }
                            }
                        }
                        Err(e) => problems.push(format!("{study_id}/{name}: {e}")),
                    },
                    Err(_) => problems.push(format!("{study_id}/{name}: bad agent id")),
                }
            } else if let Some(agent) =
                name.strip_prefix("report_").and_then(|r| r.strip_suffix(".txt"))
            {
                match store.load_report(agent, study_id) {
                    Ok(text) if text.trim().is_empty() => {
                        problems.push(format!("{study_id}/{name}: empty report"))
                    }
                    Ok(_) => checked += 1,
                    Err(e) => problems.push(format!("{study_id}/{name}: {e}")),
                }
            }
        }
        if checked == 0 {
            problems.push(format!("{study_id}: no agent or report fixtures"));
        }
    }
    if problems.is_empty() {
        println!("{} studies valid", study_ids.len());
        Ok(ExitCode::SUCCESS)
    } else {
        for p in &problems {
            eprintln!("{p}");
        }
        Err(PipelineError::Manifest(format!(
            "{} problem(s) found",
            problems.len()
        )))
    }
}
