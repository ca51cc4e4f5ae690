use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use oricf_core::inference::builtin_backends;
use oricf_core::offload::{RetryPolicy, Worker};
use oricf_core::orchestrator::{graph_dot, with_placement, BuildError, Pipeline, RunOptions, StopCondition};
use oricf_core::registry::Registry;
use oricf_core::spec::{parse_spec, DiagnosticList, PipelineSpec, PlacementTarget};
use oricf_core::telemetry::{build_report, Basis, HostSampler, PowerParams, Sampler, TelemetryError, UtilizationTrace};

use crate::{CmdResult, Failure, Status};

fn print_diagnostics(path: &Path, diags: &DiagnosticList) {
    for d in diags.iter() {
        eprintln!("{}: {d}", path.display());
    }
}

fn load_spec(path: &Path) -> Result<PipelineSpec, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::new(Status::Usage, format!("cannot read {}: {e}", path.display())))?;
    parse_spec(&text).map_err(|diags| {
        print_diagnostics(path, &diags);
        Failure::new(
            Status::Invalid,
            format!("{}: {} problem(s)", path.display(), diags.len()),
        )
    })
}

pub fn validate(path: &Path) -> CmdResult {
    load_spec(path).map(|_| ())
}

pub fn graph(path: &Path) -> CmdResult {
    let spec = load_spec(path)?;
    print!("{}", graph_dot(&spec));
    Ok(())
}

pub struct RunRequest {
    pub spec: PathBuf,
    pub duration: Option<Duration>,
    pub telemetry: Option<PathBuf>,
    pub sample_interval: Duration,
    pub placements: Vec<(String, PlacementTarget)>,
    pub timing: bool,
}

/// Host sampling on a background thread for the length of a run.
struct Recorder {
    stop: Arc<AtomicBool>,
    thread: JoinHandle<Result<UtilizationTrace, TelemetryError>>,
}

impl Recorder {
    fn start(interval: Duration) -> Result<Recorder, TelemetryError> {
        let mut sampler = HostSampler::unbounded(interval)?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let thread = thread::spawn(move || {
            let mut trace = UtilizationTrace::new(sampler.label());
            while !flag.load(Ordering::SeqCst) {
                match sampler.next_sample()? {
                    Some(s) => trace.push(s.t_s, s.util_pct)?,
                    None => break,
                }
            }
            Ok(trace)
        });
        Ok(Recorder { stop, thread })
    }

    fn finish(self) -> Result<UtilizationTrace, TelemetryError> {
        self.stop.store(true, Ordering::SeqCst);
        self.thread
            .join()
            .unwrap_or_else(|_| Err(TelemetryError::Unavailable("sampler thread panicked".into())))
    }
}

pub fn run(req: RunRequest) -> CmdResult {
    let spec = load_spec(&req.spec)?;
    let spec = with_placement(&spec, &req.placements).map_err(|e| Failure::new(Status::Usage, e.to_string()))?;
    let pipeline = Pipeline::build(&spec, &Registry::builtin(), RetryPolicy::default()).map_err(|e| match e {
        BuildError::Invalid(diags) => {
            print_diagnostics(&req.spec, &diags);
            Failure::new(Status::Invalid, "pipeline is invalid")
        }
        other => Failure::new(Status::Runtime, format!("startup failed: {other}")),
    })?;
    let recorder = req
        .telemetry
        .as_ref()
        .map(|_| Recorder::start(req.sample_interval))
        .transpose()
        .map_err(|e| Failure::new(Status::Runtime, format!("telemetry: {e}")))?;
    let options = RunOptions {
        stop: req.duration.map(StopCondition::Duration).unwrap_or_default(),
        timing: req.timing,
        ..RunOptions::default()
    };
    let mut report = pipeline.run(&options);
    if let (Some(rec), Some(path)) = (recorder, &req.telemetry) {
        let trace = rec
            .finish()
            .map_err(|e| Failure::new(Status::Runtime, format!("telemetry: {e}")))?;
        let file = fs::File::create(path)
            .map_err(|e| Failure::new(Status::Runtime, format!("cannot write {}: {e}", path.display())))?;
        trace
            .write_csv(file)
            .map_err(|e| Failure::new(Status::Runtime, format!("cannot write {}: {e}", path.display())))?;
        report.telemetry_trace = Some(path.display().to_string());
    }
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{}", report.to_json());
    let _ = out.flush();
    let failed = report.failed_nodes();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::new(
            Status::Runtime,
            format!("lost the worker of: {}", failed.join(", ")),
        ))
    }
}

pub fn worker(listen: &str) -> CmdResult {
    let worker = Worker::bind(listen, Arc::new(builtin_backends()))
        .map_err(|e| Failure::new(Status::Runtime, format!("cannot listen on {listen}: {e}")))?;
    let handle = worker
        .spawn()
        .map_err(|e| Failure::new(Status::Runtime, format!("cannot start worker: {e}")))?;
    eprintln!("oricf worker listening on {}", handle.addr());
    let (tx, rx) = mpsc::channel();
    ctrlc::set_handler(move || {
        let _ = tx.send(());
    })
    .map_err(|e| Failure::new(Status::Runtime, format!("cannot install signal handler: {e}")))?;
    let _ = rx.recv();
    eprintln!("oricf worker shutting down");
    handle.stop();
    Ok(())
}

pub struct ReportRequest {
    pub onboard: PathBuf,
    pub offload: PathBuf,
    pub p_idle: f64,
    pub p_full: f64,
    pub json: bool,
    pub basis: Basis,
}

fn load_trace(path: &Path) -> Result<UtilizationTrace, Failure> {
    UtilizationTrace::load_csv(path).map_err(|e| match e {
        TelemetryError::Io(_) => Failure::new(Status::Usage, format!("cannot read {e}")),
        other => Failure::new(Status::Invalid, format!("{}: {other}", path.display())),
    })
}

pub fn report(req: ReportRequest) -> CmdResult {
    let power = PowerParams::new(req.p_idle, req.p_full).map_err(|e| Failure::new(Status::Usage, e.to_string()))?;
    let onboard = load_trace(&req.onboard)?;
    let offload = load_trace(&req.offload)?;
    let report =
        build_report(&onboard, &offload, power, req.basis).map_err(|e| Failure::new(Status::Invalid, e.to_string()))?;
    if req.json {
        println!("{}", report.to_json());
    } else {
        print!("{}", report.to_table());
    }
    Ok(())
}
