mod input;
mod output;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use k3h::heights::{HeightConfig, Heights, OrbitCache};
use k3h::hyperbolic::{format_letters, parse_letters};
use k3h::invariants::{
    invariance_report, radius_continuity, star_set, star_volume, total_height, write_csv, BoundaryHeight,
    CanonicalHeight,
};
use k3h::wehler::{WehlerModel, DEFAULT_GUARD_BITS, DEFAULT_SEED};
use serde_json::json;

use crate::input::{load_surface, parse_alpha, parse_point, Surface};
use crate::output::print_json;

const EXIT_INPUT: u8 = 1;
const EXIT_NONCONVERGED: u8 = 2;
const EXIT_VERIFY: u8 = 3;
/// In-memory orbit cache budget.
const CACHE_BYTES: usize = 1 << 30;
/// Radius jumps beyond this multiple of the median neighbor jump are
/// reported as discontinuities.
const JUMP_FACTOR: f64 = 10.0;

#[derive(Parser)]
#[command(name = "k3h", version, about = "Canonical heights on the boundary of the ample cone of Wehler K3 surfaces")]
struct Cli {
    #[command(flatten)]
    config: RunConfig,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug)]
pub struct RunConfig {
    /// Surface JSON ({"coeffs": 3x3x3 rationals}); defaults to the planted surface for --seed.
    #[arg(long, global = true)]
    surface: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, global = true, default_value_t = 60)]
    max_letters: usize,
    #[arg(long, global = true, env = "K3H_GUARD_BITS", default_value_t = DEFAULT_GUARD_BITS)]
    guard_bits: u64,
    #[arg(long, global = true, default_value_t = 720)]
    samples: usize,
    #[arg(long, global = true, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Directory for the persistent orbit cache.
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
}

impl RunConfig {
    fn check(&self) -> Result<()> {
        anyhow::ensure!(self.tol > 0.0 && self.tol.is_finite(), "tol: must be positive");
        anyhow::ensure!(self.max_letters >= 1, "max_letters: must be at least 1");
        anyhow::ensure!(self.samples >= 16, "samples: must be at least 16");
        Ok(())
    }

    fn height_config(&self) -> HeightConfig {
        HeightConfig { tol: self.tol, max_letters: self.max_letters, guard_bits: self.guard_bits, ..Default::default() }
    }

    fn engine(&self, surface: &Surface) -> Result<Heights> {
        let cache = OrbitCache::new(CACHE_BYTES, self.cache_dir.clone()).context("cache_dir: cannot create")?;
        Ok(Heights::new(WehlerModel::new(surface.surface.clone()), self.height_config(), cache))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Surface inspection.
    Surface {
        #[command(subcommand)]
        action: SurfaceCmd,
    },
    /// Rational point search.
    Point {
        #[command(subcommand)]
        action: PointCmd,
    },
    /// Exact orbit of a point under a word (letters 1..3, applied left to right).
    Orbit {
        #[arg(long)]
        point: String,
        #[arg(long)]
        word: String,
    },
    /// Canonical height at a boundary point: irr:a,b,c (diagonal coordinates) or cusp:k / cusp:a,b,c[@scale].
    Height {
        #[arg(long)]
        alpha: String,
        #[arg(long)]
        point: String,
    },
    /// Height pairing of a parabolic word.
    Vcan {
        #[arg(long)]
        word: String,
        #[arg(long)]
        point: String,
    },
    /// Star-set samples on the circle at infinity, written as CSV.
    Starset {
        #[arg(long)]
        point: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Total height and star volume over the orbit of a point.
    TotalHeight {
        #[arg(long)]
        point: String,
        #[arg(long, default_value_t = 0)]
        depth: usize,
    },
    /// Property suites.
    Verify {
        #[arg(long, value_enum, default_value_t = verify::Suite::All)]
        suite: verify::Suite,
        /// Lattice JSON ({"rank", "gram", "ample"}) checked by the lattice suite.
        #[arg(long)]
        lattice: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum SurfaceCmd {
    /// Validates the surface and prints its hash and sample points.
    Check,
}

#[derive(Subcommand)]
enum PointCmd {
    /// Points with affine coordinates and infinity in [-bound, bound].
    Find {
        #[arg(long, default_value_t = 3)]
        bound: i64,
    },
}

enum Outcome {
    Ok,
    NonConverged,
    VerifyFailed,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::NonConverged) => ExitCode::from(EXIT_NONCONVERGED),
        Ok(Outcome::VerifyFailed) => ExitCode::from(EXIT_VERIFY),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_INPUT)
        }
    }
}

fn converged(ok: bool) -> Outcome {
    if ok {
        Outcome::Ok
    } else {
        Outcome::NonConverged
    }
}

fn run(cli: Cli) -> Result<Outcome> {
    let cfg = cli.config;
    cfg.check()?;
    if let Command::Verify { suite, lattice } = &cli.command {
        let report = verify::run(&cfg, *suite, lattice.as_deref())?;
        print_json(&serde_json::to_value(&report)?);
        for p in report.properties.iter().filter(|p| !p.passed) {
            eprintln!("FAILED {}::{}: {}", p.suite, p.name, p.detail);
        }
        return Ok(if report.passed { Outcome::Ok } else { Outcome::VerifyFailed });
    }
    let surface = load_surface(cfg.surface.as_deref(), cfg.seed)?;
    match cli.command {
        Command::Surface { action: SurfaceCmd::Check } => {
            let report = input::check_surface(&surface)?;
            print_json(&report);
            Ok(Outcome::Ok)
        }
        Command::Point { action: PointCmd::Find { bound } } => {
            anyhow::ensure!(bound >= 0, "bound: must be non-negative");
            let pts: Vec<serde_json::Value> = surface
                .surface
                .find_points(bound)
                .iter()
                .map(|p| serde_json::from_str(&p.to_json()).expect("point JSON"))
                .collect();
            print_json(&json!(pts));
            Ok(Outcome::Ok)
        }
        Command::Orbit { point, word } => {
            let p = parse_point(&point, &surface)?;
            let letters = parse_letters(&word).context("word")?;
            let orbit = surface.surface.orbit(&p, &letters, cfg.guard_bits)?;
            let points: Vec<serde_json::Value> = orbit
                .points
                .iter()
                .map(|q| json!({"point": serde_json::from_str::<serde_json::Value>(&q.to_json()).expect("point JSON"), "bits": q.bits()}))
                .collect();
            print_json(&json!({
                "word": format_letters(&letters),
                "points": points,
                "period": orbit.period,
                "guard_hit": orbit.guard_hit,
            }));
            Ok(converged(!orbit.guard_hit))
        }
        Command::Height { alpha, point } => {
            let engine = cfg.engine(&surface)?;
            let alpha = parse_alpha(&alpha, &engine.model.lattice)?;
            let p = parse_point(&point, &surface)?;
            let h = engine.canonical_boundary_height(&alpha, &p)?;
            print_json(&serde_json::to_value(h)?);
            Ok(converged(h.converged))
        }
        Command::Vcan { word, point } => {
            let engine = cfg.engine(&surface)?;
            let letters = parse_letters(&word).context("word")?;
            let p = parse_point(&point, &surface)?;
            let h = engine.vcan_pairing(&letters, &p)?;
            print_json(&serde_json::to_value(h)?);
            Ok(converged(h.converged))
        }
        Command::Starset { point, out } => {
            let engine = cfg.engine(&surface)?;
            let p = parse_point(&point, &surface)?;
            let source = CanonicalHeight { engine: &engine, point: p };
            let samples = star_set(&engine.model.lattice, &source as &dyn BoundaryHeight, cfg.samples)?;
            let file = std::fs::File::create(&out).with_context(|| format!("out: cannot create {}", out.display()))?;
            write_csv(&samples, std::io::BufWriter::new(file))?;
            let rank = engine.model.lattice.rank();
            let total = total_height(&samples, rank);
            let volume = star_volume(&samples, rank);
            let (continuous, max_jump, median_jump) = radius_continuity(&samples, JUMP_FACTOR);
            let positive = samples.iter().all(|s| s.height.is_some_and(|h| h.value > 0.0));
            let flagged = total.flagged || volume.flagged;
            print_json(&json!({
                "csv": out.display().to_string(),
                "samples": samples.len(),
                "total_height": total,
                "volume": volume,
                "positive": positive,
                "continuous": continuous,
                "max_jump": max_jump,
                "median_jump": median_jump,
            }));
            Ok(converged(!flagged))
        }
        Command::TotalHeight { point, depth } => {
            let engine = cfg.engine(&surface)?;
            let p = parse_point(&point, &surface)?;
            let report = invariance_report(&engine, &p, depth, cfg.samples, |q| {
                Box::new(CanonicalHeight { engine: &engine, point: q.clone() })
            })?;
            let flagged = report.rows.iter().any(|r| r.total.flagged || r.volume.flagged);
            print_json(&serde_json::to_value(&report)?);
            Ok(converged(!flagged))
        }
        Command::Verify { .. } => unreachable!("handled above"),
    }
}
