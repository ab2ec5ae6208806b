//! `loopgbs`: compile programs, sample hypotheses, extract orbits and
//! correlators, validate sample sets.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use loopgbs::cert::{fixtures, DeviceCertificate};
use loopgbs::gaussian::{mean_photons, photon_covariance, InputKind};
use loopgbs::orbits::{features_to_csv, feature_vectors_with, orbit_histogram, FeatureOptions};
use loopgbs::pipeline::Device;
use loopgbs::sampling::{
    sample_classical, sample_distinguishable, sample_smsv_bruteforce, SampleSet, SamplerOptions, DEFAULT_PNR_CUTOFF,
    DISTINGUISHABLE,
};
use loopgbs::tdm::{compile_unitary, connectivity_profile, truncate_to_logical, CircuitProgram, LoopSpec};
use loopgbs::validation::{
    covariance_distance, covariance_noise_floor, grid_csv, sample_covariance, validate, ValidationConfig,
    ValidationReport,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

mod plots;

#[derive(Parser)]
#[command(name = "loopgbs", version, about = "Loop-based Gaussian boson sampler simulation and validation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compile a program to its transfer matrix and connectivity profile.
    Compile {
        #[command(flatten)]
        program: ProgramArgs,
        /// Certificate supplying loop phases for --random-program.
        #[arg(long)]
        certificate: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw samples under one hypothesis.
    Sample {
        #[arg(long)]
        hypothesis: String,
        #[command(flatten)]
        device: DeviceArgs,
        #[arg(long, default_value_t = 250_000)]
        shots: usize,
        /// Output sample file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Orbit histograms and feature vectors of a sample file.
    Orbits {
        #[arg(long)]
        samples: PathBuf,
        #[command(flatten)]
        range: RangeArgs,
        /// Photon number for the full orbit histogram; defaults to the most frequent.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Two-point photon-number correlators, optionally against analytic models.
    Correlators {
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        certificate: Option<String>,
        #[command(flatten)]
        program: ProgramArgs,
        #[arg(long, default_value = "low")]
        squeezing: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        resamples: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank the hypotheses against a sample file.
    Validate {
        #[arg(long)]
        samples: PathBuf,
        #[command(flatten)]
        device: DeviceArgs,
        #[command(flatten)]
        range: RangeArgs,
        /// Shots per simulated hypothesis; defaults to the size of the sample file.
        #[arg(long)]
        shots: Option<usize>,
        #[arg(long, default_value_t = 3.0)]
        threshold: f64,
        #[arg(long, default_value_t = 200)]
        resamples: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-render the summary and plot scripts of a stored validation report.
    Report {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ProgramArgs {
    /// Program JSON file.
    #[arg(long, conflicts_with = "random_program")]
    program: Option<PathBuf>,
    /// Draw transmissivities in [0.4, 0.6] and phases in [-π/2, π/2] from --seed.
    #[arg(long)]
    random_program: bool,
    /// Physical time bins of a random program.
    #[arg(long, default_value_t = 259)]
    modes: usize,
    /// Leading bins that only fill the loops.
    #[arg(long, default_value_t = 43)]
    fill: usize,
}

#[derive(Args)]
struct DeviceArgs {
    /// Certificate file or bundled name (jan-12, apr-04, low-0533).
    #[arg(long)]
    certificate: String,
    #[command(flatten)]
    program: ProgramArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Certificate squeezing label: low, medium, high or off.
    #[arg(long, default_value = "low")]
    squeezing: String,
    #[arg(long, default_value_t = DEFAULT_PNR_CUTOFF)]
    pnr_cutoff: u8,
    #[arg(long, default_value_t = default_threads())]
    threads: usize,
}

#[derive(Args)]
struct RangeArgs {
    #[arg(long, default_value_t = loopgbs::orbits::DEFAULT_N_MIN)]
    n_min: usize,
    #[arg(long, default_value_t = loopgbs::orbits::DEFAULT_N_MAX)]
    n_max: usize,
}

fn default_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 3 for resource limits, 2 for bad input, 1 otherwise.
fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<loopgbs::Error>() {
            return if err.is_resource() { 3 } else { 2 };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() || cause.downcast_ref::<serde_json::Error>().is_some() {
            return 2;
        }
    }
    1
}

fn load_certificate(spec: &str) -> Result<DeviceCertificate> {
    if let Some(c) = fixtures::by_name(spec) {
        return Ok(c);
    }
    DeviceCertificate::load(Path::new(spec)).with_context(|| format!("certificate {spec}"))
}

fn load_program(args: &ProgramArgs, loop_spec: Option<LoopSpec>, seed: u64) -> Result<Option<CircuitProgram>> {
    if let Some(path) = &args.program {
        let text = fs::read_to_string(path).with_context(|| format!("program {}", path.display()))?;
        return Ok(Some(CircuitProgram::from_json(&text).with_context(|| format!("program {}", path.display()))?));
    }
    if args.random_program {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = loop_spec.unwrap_or_default();
        return Ok(Some(CircuitProgram::random(spec, args.modes, args.fill, &mut rng)?));
    }
    Ok(None)
}

fn require_program(args: &ProgramArgs, loop_spec: Option<LoopSpec>, seed: u64) -> Result<CircuitProgram> {
    match load_program(args, loop_spec, seed)? {
        Some(p) => Ok(p),
        None => Err(loopgbs::Error::Input("pass --program FILE or --random-program".into()).into()),
    }
}

fn file_hash(path: &Path) -> Result<String> {
    Ok(loopgbs::hash_hex(&fs::read(path).with_context(|| format!("reading {}", path.display()))?))
}

/// Provenance record written next to every artifact.
fn write_meta(dir: &Path, seed: Option<u64>, inputs: serde_json::Value, extra: serde_json::Value) -> Result<()> {
    let meta = json!({
        "tool": "loopgbs",
        "version": env!("CARGO_PKG_VERSION"),
        "command": std::env::args().skip(1).collect::<Vec<_>>(),
        "seed": seed,
        "inputs": inputs,
        "results": extra,
    });
    fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Compile { program, certificate, seed, out } => {
            let spec = certificate.as_deref().map(load_certificate).transpose()?.map(|c| c.loop_spec()).transpose()?;
            let program = require_program(&program, spec, seed)?;
            let full = compile_unitary(&program)?;
            let logical = truncate_to_logical(&full, &program)?;
            fs::create_dir_all(&out)?;
            fs::write(out.join("transfer.csv"), full.to_csv())?;
            fs::write(out.join("transfer_logical.csv"), logical.to_csv())?;
            let mut profile = String::from("offset,mean_abs\n");
            for (k, v) in connectivity_profile(&logical).iter().enumerate() {
                profile.push_str(&format!("{k},{v:e}\n"));
            }
            fs::write(out.join("profile.csv"), profile)?;
            fs::write(out.join("program.json"), program.to_json())?;
            fs::write(out.join("profile.gp"), plots::PROFILE)?;
            let leakage = logical.acausal_leakage();
            write_meta(&out, Some(seed), json!({ "program": program.hash() }), json!({ "acausal_leakage": leakage }))?;
            println!("compiled {} bins ({} detected), acausal leakage {leakage:e}", program.n_physical_modes, logical.dim());
        }
        Command::Sample { hypothesis, device, shots, out } => {
            let cert = load_certificate(&device.certificate)?;
            let program = require_program(&device.program, Some(cert.loop_spec()?), device.seed)?;
            let dev = Device::from_certificate(program, &cert)?;
            let s = cert.squeezing(&device.squeezing)?;
            let opts = SamplerOptions { pnr_cutoff: device.pnr_cutoff, threads: device.threads };
            let mut set = if hypothesis == DISTINGUISHABLE {
                sample_distinguishable(&dev, s, shots, device.seed, opts)?
            } else {
                match hypothesis.parse::<InputKind>()? {
                    InputKind::Smsv => {
                        sample_smsv_bruteforce(&dev, s, shots, device.seed, device.pnr_cutoff as usize, opts)?
                    }
                    kind => sample_classical(kind, &dev, s, shots, device.seed, opts)?,
                }
            };
            set.meta.params.insert("squeezing_label".into(), device.squeezing.clone().into());
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            set.save(&out)?;
            let (mean, se) = set.total_mean();
            println!("{shots} {hypothesis} shots over {} modes, mean photons {mean:.4} ± {se:.4}", set.n_modes());
        }
        Command::Orbits { samples, range, n, out } => {
            let set = SampleSet::load(&samples)?;
            let features = feature_vectors_with(&set, range.n_min, range.n_max, &FeatureOptions::default())?;
            let n = n.unwrap_or_else(|| modal_total(&set));
            let histogram = orbit_histogram(&set, n);
            fs::create_dir_all(&out)?;
            fs::write(out.join("features.csv"), features_to_csv(&features))?;
            fs::write(out.join("histogram.csv"), histogram.to_csv())?;
            fs::write(out.join("orbits.gp"), plots::FEATURES)?;
            write_meta(
                &out,
                Some(set.meta.seed),
                json!({ "samples": file_hash(&samples)? }),
                json!({ "histogram_n": n, "feature_vectors": features.len() }),
            )?;
            println!("{} feature vectors in {}..={}, histogram at n = {n}", features.len(), range.n_min, range.n_max);
        }
        Command::Correlators { samples, certificate, program, squeezing, seed, resamples, out } => {
            let set = SampleSet::load(&samples)?;
            let observed = sample_covariance(&set);
            fs::create_dir_all(&out)?;
            fs::write(out.join("covariance_observed.csv"), grid_csv(&observed))?;
            let floor = covariance_noise_floor(&set, resamples, seed)?;
            let mut distances = serde_json::Map::new();
            if let Some(name) = certificate {
                let cert = load_certificate(&name)?;
                let program = require_program(&program, Some(cert.loop_spec()?), seed)?;
                let dev = Device::from_certificate(program, &cert)?;
                let s = cert.squeezing(&squeezing)?;
                for kind in [InputKind::Smsv, InputKind::Thermal, InputKind::Squashed] {
                    let c = photon_covariance(&dev.output_state(kind, s)?)?;
                    fs::write(out.join(format!("covariance_{kind}.csv")), grid_csv(&c))?;
                    let d = covariance_distance(&observed, &c)?;
                    let mean: f64 = mean_photons(&dev.output_state(kind, s)?).iter().sum();
                    distances.insert(kind.to_string(), json!({ "distance": d, "mean_photons": mean }));
                    println!("{kind:>9}: distance {:.4}, pearson {:.4}", d.frobenius, d.pearson);
                }
            }
            fs::write(out.join("covariance.gp"), plots::COVARIANCE)?;
            println!("noise floor {:.4} ± {:.4}", floor.mean, floor.std_dev);
            write_meta(
                &out,
                Some(seed),
                json!({ "samples": file_hash(&samples)? }),
                json!({ "noise_floor": floor, "models": distances }),
            )?;
        }
        Command::Validate { samples, device, range, shots, threshold, resamples, out } => {
            let set = SampleSet::load(&samples)?;
            let cert = load_certificate(&device.certificate)?;
            let program = require_program(&device.program, Some(cert.loop_spec()?), device.seed)?;
            let config = ValidationConfig {
                seed: device.seed,
                squeezing: device.squeezing.clone(),
                shots,
                n_min: range.n_min,
                n_max: range.n_max,
                resamples,
                threshold,
                pnr_cutoff: device.pnr_cutoff,
                threads: device.threads,
                ..Default::default()
            };
            let report = validate(&set, &program, &cert, &config)?;
            report.write_files(&out)?;
            write_report_extras(&report, &out)?;
            write_meta(
                &out,
                Some(device.seed),
                json!({ "samples": file_hash(&samples)?, "program": program.hash(), "certificate": cert.id() }),
                json!({ "verdict": report.verdict }),
            )?;
            print!("{}", summary(&report));
        }
        Command::Report { report, out } => {
            let text = fs::read_to_string(&report).with_context(|| format!("report {}", report.display()))?;
            let parsed = ValidationReport::from_json(&text)?;
            fs::create_dir_all(&out)?;
            fs::write(out.join("orbits.csv"), parsed.orbit_scatter_csv())?;
            write_report_extras(&parsed, &out)?;
            print!("{}", summary(&parsed));
        }
    }
    Ok(())
}

fn modal_total(set: &SampleSet) -> usize {
    let totals = set.totals();
    let max = totals.iter().copied().max().unwrap_or(0) as usize;
    let mut hist = vec![0usize; max + 1];
    for t in totals {
        hist[t as usize] += 1;
    }
    // first maximum
    hist.iter().enumerate().fold((0, 0), |best, (n, &c)| if c > best.1 { (n, c) } else { best }).0
}

fn write_report_extras(report: &ValidationReport, out: &Path) -> Result<()> {
    fs::write(out.join("summary.md"), summary(report))?;
    fs::write(out.join("orbits.gp"), plots::SCATTER)?;
    if !report.covariances.is_empty() {
        fs::write(out.join("covariance.gp"), plots::COVARIANCE)?;
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("-".into(), |v| format!("{v:.3}"))
}

fn summary(r: &ValidationReport) -> String {
    let mut s = format!(
        "# Validation\n\nsamples {} ({} shots, {} modes), certificate {}, seed {}\n\n",
        &r.samples_hash[..16],
        r.shots,
        r.n_modes,
        r.certificate,
        r.config.seed
    );
    s.push_str(&format!(
        "observed: mean photons {:.3}, plane z {}, line z {}, off-plane {}\n",
        r.observed_mean_photons,
        fmt_opt(r.observed_plane_rms_z),
        fmt_opt(r.observed_line_rms_z),
        r.off_plane.map_or("-".into(), |b| b.to_string())
    ));
    s.push_str(&format!("covariance noise floor {:.4} ± {:.4}\n\n", r.noise_floor.mean, r.noise_floor.std_dev));
    s.push_str("| hypothesis | plane z | orbit z | mean z | spread | cov distance |\n|---|---|---|---|---|---|\n");
    for h in &r.hypotheses {
        s.push_str(&format!(
            "| {} | {} | {} | {} | {} | {:.4} ({}) |\n",
            h.hypothesis,
            fmt_opt(h.plane_rms_z),
            fmt_opt(h.orbit_rms_z),
            fmt_opt(h.mean_photons_z),
            h.spread.map_or("-".into(), |v| format!("{v:.3e}")),
            h.covariance.frobenius,
            h.covariance_source
        ));
    }
    s.push_str(&format!("\nverdict: {}\n", r.verdict.join(" > ")));
    for w in &r.warnings {
        s.push_str(&format!("warning: {w}\n"));
    }
    s
}
