use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use chronorpc::client::{Client, ClientConfig, ScheduleRequest, ServerHandle};
use chronorpc::harness::{
    experiment_i, experiment_ii, experiment_iii, parse_scenario, run_demo, run_scenario, write_samples_csv,
    write_summary, Check, Demo, ErrorReport, Profile, SpikeProfile,
};
use chronorpc::live::{LiveServer, TcpTransport};
use chronorpc::prediction::replay::replay;
use chronorpc::prediction::{Algorithm, DEFAULT_WINDOW};
use chronorpc::protocol::{DurationNs, OperationSpec, SchedulingRangeConfig};
use chronorpc::server::{ExecutionModel, ServerConfig};

#[derive(Parser)]
#[command(name = "chronorpc", version, about = "Time-triggered RPC scheduling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file in virtual time.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides the file's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reproduce one of the prediction experiments.
    Experiment {
        #[arg(value_enum)]
        which: Which,
        /// `key=value`; see the README for keys.
        #[arg(long = "param", value_name = "KEY=VALUE")]
        params: Vec<String>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate predictors over a recorded sample CSV.
    Replay {
        #[arg(long)]
        csv: PathBuf,
        /// Algorithm name or `all`.
        #[arg(long, default_value = "all")]
        algo: String,
        #[arg(long, default_value_t = DEFAULT_WINDOW)]
        window: usize,
        /// Output file; stdout if absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Server to take samples from when the input is a `run` samples file.
        #[arg(long, default_value_t = 0)]
        server: usize,
    },
    /// Run a multi-server use case and check it against the server logs.
    Demo {
        name: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the protocol over TCP until interrupted.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8830")]
        listen: String,
        #[arg(long, default_value = "30ms")]
        base: String,
        #[arg(long, default_value = "0ms")]
        sigma: String,
        #[arg(long, default_value = "15s")]
        max_future: String,
        #[arg(long, default_value = "3s")]
        max_past: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Drive the prediction loop against running servers.
    Live {
        #[arg(long, value_delimiter = ',', required = true)]
        servers: Vec<SocketAddr>,
        #[arg(long, default_value_t = 10)]
        samples: usize,
        #[arg(long, default_value = "500ms")]
        period: String,
        #[arg(long, default_value = "ft-average")]
        algo: String,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Which {
    #[value(name = "I")]
    One,
    #[value(name = "II")]
    Two,
    #[value(name = "III")]
    Three,
}

fn duration(text: &str) -> Result<DurationNs> {
    DurationNs::parse(text).with_context(|| format!("bad duration {text:?}"))
}

fn report_checks(checks: &[Check]) -> bool {
    for c in checks {
        let mark = if c.passed { "ok  " } else { "FAIL" };
        if c.detail.is_empty() {
            println!("{mark} {}", c.name);
        } else {
            println!("{mark} {} ({})", c.name, c.detail);
        }
    }
    checks.iter().all(|c| c.passed)
}

fn print_reports(rows: &[(String, &ErrorReport)]) {
    let Some((_, first)) = rows.first() else { return };
    print!("{:<24}", "run");
    for s in &first.per_algorithm {
        print!(" {:>12}", s.algorithm.name());
    }
    println!(" {:>8}", "samples");
    for (label, r) in rows {
        print!("{label:<24}");
        for s in &r.per_algorithm {
            print!(" {:>9.3} ms", s.mean_abs_error_ns / 1e6);
        }
        println!(" {:>8}", r.evaluated);
    }
}

fn write_summary_file(out: &Path, rows: &[(String, &ErrorReport)]) -> Result<()> {
    fs::create_dir_all(out)?;
    let path = out.join("summary.dat");
    write_summary(rows, fs::File::create(&path)?).with_context(|| format!("writing {}", path.display()))
}

fn cmd_run(scenario: &Path, seed: Option<u64>, out: &Path) -> Result<bool> {
    let text = fs::read_to_string(scenario).with_context(|| format!("reading {}", scenario.display()))?;
    let mut sc = parse_scenario(&text)?;
    if let Some(seed) = seed {
        sc.seed = seed;
    }
    let result = run_scenario(&sc)?;
    fs::create_dir_all(out)?;
    write_samples_csv(&sc, &result.records, fs::File::create(out.join("samples.csv"))?)?;
    let rows = [(sc.name.clone(), &result.report)];
    write_summary_file(out, &rows)?;
    print_reports(&rows);
    Ok(report_checks(&result.checks))
}

struct Params(Vec<(String, String)>);

impl Params {
    fn parse(raw: &[String]) -> Result<Params> {
        raw.iter()
            .map(|p| {
                p.split_once('=')
                    .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                    .with_context(|| format!("expected KEY=VALUE, got {p:?}"))
            })
            .collect::<Result<_>>()
            .map(Params)
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.0.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    fn check_known(&self, known: &[&str]) -> Result<()> {
        for (k, _) in &self.0 {
            if !known.contains(&k.as_str()) {
                bail!("unknown parameter {k:?}; expected one of {known:?}");
            }
        }
        Ok(())
    }

    fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        self.get(key)
            .map_or(Ok(default), |v| v.parse().with_context(|| format!("bad {key}")))
    }

    fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        self.get(key)
            .map_or(Ok(default), |v| v.parse().with_context(|| format!("bad {key}")))
    }

    fn duration_or(&self, key: &str, default: DurationNs) -> Result<DurationNs> {
        self.get(key).map_or(Ok(default), duration)
    }

    fn list<T>(&self, key: &str, default: Vec<T>, parse: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.split(',').map(|s| parse(s.trim())).collect(),
        }
    }
}

fn cmd_experiment(which: Which, raw: &[String], seed: u64, out: Option<&Path>) -> Result<bool> {
    let params = Params::parse(raw)?;
    let non_baseline = [Algorithm::Average, Algorithm::FtAverage, Algorithm::Kalman];
    let mut checks = Vec::new();
    match which {
        Which::One => {
            params.check_known(&["samples"])?;
            let results = experiment_i(&Profile::defaults(), params.usize_or("samples", 200)?, seed)?;
            let rows: Vec<(String, &ErrorReport)> =
                results.iter().map(|r| (r.scenario.name.clone(), &r.report)).collect();
            print_reports(&rows);
            for r in &results {
                let base = r.report.baseline_mean_ete_ns;
                let ok = non_baseline
                    .iter()
                    .all(|&a| r.report.mean_error(a).is_some_and(|e| e < base));
                checks.push(Check::new(
                    format!("{}: predictors beat baseline", r.scenario.name),
                    ok,
                    "",
                ));
            }
            if let Some(out) = out {
                write_summary_file(out, &rows)?;
            }
        }
        Which::Two => {
            params.check_known(&["samples", "periods", "bursts", "base", "sigma"])?;
            let model = ExecutionModel::gaussian(
                params.duration_or("base", DurationNs::from_millis(30))?,
                params.duration_or("sigma", DurationNs::from_millis(3))?,
            );
            let periods = params.list(
                "periods",
                [1, 2, 4, 8, 16].map(DurationNs::from_secs).to_vec(),
                duration,
            )?;
            let bursts = params.list("bursts", vec![1, 2, 4, 8, 16], |s| {
                s.parse::<usize>().with_context(|| format!("bad burst size {s:?}"))
            })?;
            let r = experiment_ii(&model, &periods, &bursts, params.usize_or("samples", 200)?, seed)?;
            let rows: Vec<(String, &ErrorReport)> = r
                .periodic
                .iter()
                .map(|(p, rep)| (format!("periodic-{p}"), rep))
                .chain(r.burst.iter().map(|(n, rep)| (format!("burst-{n}"), rep)))
                .collect();
            print_reports(&rows);
            let one_s = r.periodic.iter().find(|(p, _)| *p == DurationNs::from_secs(1));
            let four = r.burst.iter().find(|(n, _)| *n == 4);
            if let (Some((_, p)), Some((_, b))) = (one_s, four) {
                let ok = non_baseline
                    .iter()
                    .all(|&a| matches!((b.mean_error(a), p.mean_error(a)), (Some(be), Some(pe)) if be <= 2.0 * pe));
                checks.push(Check::new("burst of 4 within 2x of periodic 1s", ok, ""));
            }
            if let Some(out) = out {
                write_summary_file(out, &rows)?;
            }
        }
        Which::Three => {
            params.check_known(&["samples", "seeds", "p", "m", "base", "sigma"])?;
            let default = SpikeProfile::defaults().remove(0);
            let profile = SpikeProfile {
                base: params.duration_or("base", default.base)?,
                sigma: params.duration_or("sigma", default.sigma)?,
                probability: params.f64_or("p", default.probability)?,
                multiplier: params.f64_or("m", default.multiplier)?,
                ..default
            };
            let seeds: Vec<u64> = (seed..seed + params.usize_or("seeds", 5)? as u64).collect();
            let rows = experiment_iii(&[profile], params.usize_or("samples", 2000)?, &seeds)?;
            let table: Vec<(String, &ErrorReport)> = rows
                .iter()
                .map(|r| (r.result.scenario.name.clone(), &r.result.report))
                .collect();
            print_reports(&table);
            println!(
                "{:<24} {:>12} {:>12} {:>12} {:>12}",
                "post-spike window", "baseline", "average", "ft-average", "kalman"
            );
            for r in &rows {
                print!("{:<24}", r.result.scenario.name);
                for a in Algorithm::ALL {
                    match r.windows.get(a).and_then(|w| w.post_spike_ns) {
                        Some(v) => print!(" {:>9.3} ms", v / 1e6),
                        None => print!(" {:>12}", "-"),
                    }
                }
                println!();
                let e = |a| r.result.report.mean_error(a).unwrap_or(f64::INFINITY);
                let ft = e(Algorithm::FtAverage);
                checks.push(Check::new(
                    format!("{}: ft-average most resilient", r.result.scenario.name),
                    ft <= e(Algorithm::Average) && ft <= e(Algorithm::Kalman),
                    "",
                ));
            }
            if let Some(out) = out {
                write_summary_file(out, &table)?;
                for r in &rows {
                    let path = out.join(format!("{}.csv", r.result.scenario.name));
                    write_samples_csv(&r.result.scenario, &r.result.records, fs::File::create(path)?)?;
                }
            }
        }
    }
    Ok(report_checks(&checks))
}

/// Reduces a `run` samples file to one server's replay input.
fn samples_to_replay_input(text: &str, server: usize) -> Result<String> {
    let mut out = String::from("sequence,scheduled_time_ns,execution_time_ns\n");
    for (n, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            bail!("line {}: expected 8 fields", n + 1);
        }
        if f[2] == "baseline" && f[1].parse::<usize>().ok() == Some(server) {
            out.push_str(&format!("{},{},{}\n", f[0], f[3], f[4]));
        }
    }
    Ok(out)
}

fn cmd_replay(csv: &Path, algo: &str, window: usize, out: Option<&Path>, server: usize) -> Result<bool> {
    if window == 0 {
        bail!("window must be positive");
    }
    let algorithms: Vec<Algorithm> = if algo == "all" {
        Algorithm::ALL.to_vec()
    } else {
        vec![algo.parse()?]
    };
    let mut text = fs::read_to_string(csv).with_context(|| format!("reading {}", csv.display()))?;
    if text.starts_with("sample_index,") {
        text = samples_to_replay_input(&text, server)?;
    }
    let input = text.as_bytes();
    let rows = match out {
        Some(path) => replay(input, &algorithms, window, fs::File::create(path)?)?,
        None => replay(input, &algorithms, window, std::io::stdout().lock())?,
    };
    let n = rows.len().max(1) as f64;
    for (i, a) in algorithms.iter().enumerate() {
        let mean = rows.iter().map(|r| r.abs_error(i).as_nanos_f64()).sum::<f64>() / n;
        eprintln!(
            "{:<12} mean abs error {:.3} ms over {} samples",
            a.name(),
            mean / 1e6,
            rows.len()
        );
    }
    Ok(true)
}

fn cmd_demo(name: &str, seed: u64, out: Option<&Path>) -> Result<bool> {
    let demo: Demo = name.parse().map_err(anyhow::Error::msg)?;
    let report = run_demo(demo, seed)?;
    if let Some(out) = out {
        fs::create_dir_all(out)?;
        fs::write(out.join(format!("{demo}-log.csv")), report.log_csv())?;
    }
    println!("demo {demo} (seed {seed})");
    Ok(report_checks(&report.checks))
}

fn cmd_serve(listen: &str, base: &str, sigma: &str, future: &str, past: &str, seed: u64) -> Result<bool> {
    let range =
        SchedulingRangeConfig::new(duration(future)?, duration(past)?).context("range limits must be non-negative")?;
    let model = ExecutionModel::gaussian(duration(base)?, duration(sigma)?);
    model.validate().map_err(anyhow::Error::msg)?;
    let server = LiveServer::bind(
        listen,
        ServerConfig {
            range,
            model,
            seed,
            ..ServerConfig::default()
        },
    )?;
    println!("listening on {}", server.local_addr());
    loop {
        std::thread::park();
    }
}

fn cmd_live(servers: &[SocketAddr], samples: usize, period: &str, algo: &str) -> Result<bool> {
    let period = duration(period)?;
    let algorithm: Algorithm = algo.parse()?;
    let transport = TcpTransport::connect(servers)?;
    let mut client = Client::new(
        transport,
        ClientConfig {
            algorithm,
            ..ClientConfig::default()
        },
    );
    let op = OperationSpec::new("noop");
    println!(
        "{:>6} {:>6} {:>14} {:>14}",
        "sample", "server", "prediction_ms", "completion_ms"
    );
    for k in 0..samples {
        let td = client.now() + period;
        for (i, _) in servers.iter().enumerate() {
            let o = client.schedule_at_completion(&ScheduleRequest::new(ServerHandle(i), op.clone(), td))?;
            let err = o.execution_time.map_or(f64::NAN, |te| (te - td).as_millis_f64());
            println!("{k:>6} {i:>6} {:>14.3} {err:>14.3}", o.prediction_used.as_millis_f64());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { scenario, seed, out } => cmd_run(scenario, *seed, out),
        Command::Experiment {
            which,
            params,
            seed,
            out,
        } => cmd_experiment(*which, params, *seed, out.as_deref()),
        Command::Replay {
            csv,
            algo,
            window,
            out,
            server,
        } => cmd_replay(csv, algo, *window, out.as_deref(), *server),
        Command::Demo { name, seed, out } => cmd_demo(name, *seed, out.as_deref()),
        Command::Serve {
            listen,
            base,
            sigma,
            max_future,
            max_past,
            seed,
        } => cmd_serve(listen, base, sigma, max_future, max_past, *seed),
        Command::Live {
            servers,
            samples,
            period,
            algo,
        } => cmd_live(servers, *samples, period, algo),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
