use std::path::Path;

use anyhow::{Context, Result};
use clap::ValueEnum;
use k3h::heights::{HeightConfig, Heights, OrbitCache};
use k3h::hyperbolic::{from_diagonal, BoundaryPoint, Letter, CUSP_ANGLE};
use k3h::invariants::{
    radius_continuity, reduced_words, star_set, star_volume, total_height, write_csv, CanonicalHeight, ConstantHeight,
};
use k3h::lattice::{rat_vec, GramLattice, IsometryClass};
use k3h::wehler::{ns_action, PlantedSurface, SurfacePoint, WehlerModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::RunConfig;

/// Tolerance used by the height properties (coarser than the run default
/// so the suite stays fast).
const SUITE_TOL: f64 = 1e-3;
const SUITE_SAMPLES: usize = 64;
const RANDOM_POINTS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Lattice,
    Hyperbolic,
    Wehler,
    Heights,
    Invariants,
    All,
}

#[derive(Debug, Serialize)]
pub struct Property {
    pub suite: &'static str,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Serialize)]
pub struct Report {
    pub passed: bool,
    pub properties: Vec<Property>,
}

struct Recorder {
    suite: &'static str,
    out: Vec<Property>,
}

impl Recorder {
    fn new(suite: &'static str) -> Self {
        Self { suite, out: Vec::new() }
    }

    /// Records `check`; an `Err` counts as a failure with its message.
    fn check(&mut self, name: &'static str, check: impl FnOnce() -> Result<(bool, String)>) {
        let (passed, detail) = check().unwrap_or_else(|e| (false, format!("{e:#}")));
        self.out.push(Property { suite: self.suite, name, passed, detail });
    }
}

pub fn run(cfg: &RunConfig, suite: Suite, lattice: Option<&Path>) -> Result<Report> {
    let lat = match lattice {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("lattice: cannot read {}", path.display()))?;
            GramLattice::from_json(&text).context("lattice")?
        }
        None => GramLattice::wehler(),
    };
    let planted = PlantedSurface::generate(cfg.seed);
    let model = WehlerModel::new(planted.surface.clone());
    let mut props = Vec::new();
    let wants = |s: Suite| suite == s || suite == Suite::All;
    if wants(Suite::Lattice) {
        props.extend(lattice_suite(&lat));
    }
    if wants(Suite::Hyperbolic) {
        props.extend(hyperbolic_suite(&model, cfg.seed));
    }
    if wants(Suite::Wehler) {
        props.extend(wehler_suite(&model, &planted, cfg.seed));
    }
    let config = HeightConfig {
        tol: SUITE_TOL,
        max_letters: cfg.max_letters,
        guard_bits: cfg.guard_bits,
        ..Default::default()
    };
    let engine = Heights::new(model, config, OrbitCache::new(crate::CACHE_BYTES, cfg.cache_dir.clone())?);
    if wants(Suite::Heights) {
        props.extend(heights_suite(&engine, &planted));
    }
    if wants(Suite::Invariants) {
        props.extend(invariants_suite(&engine, &planted));
    }
    Ok(Report { passed: props.iter().all(|p| p.passed), properties: props })
}

fn letters_of(pair: (Letter, Letter)) -> Vec<Letter> {
    vec![pair.0, pair.1]
}

fn lattice_suite(lat: &GramLattice) -> Vec<Property> {
    let mut r = Recorder::new("lattice");
    r.check("involutions_are_isometries", || {
        let bad: Vec<Letter> = (1..=3).filter(|&l| !lat.is_isometry(&ns_action(l))).collect();
        Ok((bad.is_empty(), format!("non-isometric generators: {bad:?}")))
    });
    r.check("involutions_square_to_identity", || {
        for l in 1..=3 {
            let s = ns_action(l);
            if !s.mul(&s)?.is_identity() {
                return Ok((false, format!("sigma_{l}^2 != I")));
            }
        }
        Ok((true, String::new()))
    });
    r.check("exp_parabolic_round_trip", || {
        for pair in [(1, 2), (1, 3), (2, 3)] {
            let m = ns_action(pair.0).mul(&ns_action(pair.1))?;
            let iso = lat.classify(&m)?;
            let IsometryClass::Parabolic { e, power, xi } = iso.class else {
                return Ok((false, format!("sigma_{}sigma_{} is {}", pair.0, pair.1, iso.class.name())));
            };
            if lat.exp_parabolic(&e, &xi)? != m.pow(power)? {
                return Ok((false, format!("exp(n_xi) != M^{power} for {pair:?}")));
            }
        }
        Ok((true, String::new()))
    });
    r.check("parabolic_formula_s1s2", || {
        let m = ns_action(1).mul(&ns_action(2))?;
        let iso = lat.classify(&m)?;
        let IsometryClass::Parabolic { e, power, xi } = iso.class else {
            return Ok((false, format!("sigma_1sigma_2 is {}", iso.class.name())));
        };
        let expected = rat_vec(&[-1, 1, 0]);
        let norm = lat.ns_norm_sq(&m, &e)?;
        let ok = e == [0, 0, 1] && power == 1 && lat.equal_mod(&e, &xi, &expected) && norm == 4;
        Ok((ok, format!("E={e:?} power={power} |xi|^2={norm}")))
    });
    r.check("hyperbolic_spectral_radius", || {
        let m = ns_action(1).mul(&ns_action(2))?.mul(&ns_action(3))?;
        let lambda = lat.classify(&m)?.lambda().unwrap_or(f64::NAN);
        let want = 9.0 + 4.0 * 5f64.sqrt();
        Ok(((lambda - want).abs() < 1e-9, format!("lambda={lambda}")))
    });
    r.out
}

fn hyperbolic_suite(model: &WehlerModel, seed: u64) -> Vec<Property> {
    let (lat, ch) = (&model.lattice, &model.chamber);
    let mut r = Recorder::new("hyperbolic");
    r.check("cusps_on_two_walls", || {
        for c in ch.cusps() {
            let pairs: Vec<i64> = ch.walls().iter().map(|m| lat.pair_int(&c.class, m)).collect::<Result<_, _>>()?;
            if pairs.iter().filter(|&&p| p == 0).count() != 2 || pairs.iter().any(|&p| p < 0) {
                return Ok((false, format!("cusp {:?} pairings {pairs:?}", c.class)));
            }
        }
        Ok((true, String::new()))
    });
    r.check("cusp_translations_fix_cusps", || {
        for c in ch.cusps() {
            let m = ch.word_matrix(&c.translation)?;
            let iso = lat.classify(&m)?;
            if iso.fixed_null() != Some(c.class.as_slice()) || c.ns_norm_sq != 4u32 {
                return Ok((false, format!("cusp {:?}: {}", c.class, iso.class.name())));
            }
        }
        Ok((true, String::new()))
    });
    r.check("coding_reproduces_target", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        for _ in 0..10 {
            let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let target = from_diagonal(lat, &[1.0, theta.cos(), theta.sin()]);
            let coding = ch.code_vector(lat, &target, 40, CUSP_ANGLE)?;
            let back = ch.word_matrix(&coding.word.letters)?.apply_f64(&coding.reduced);
            let (u, v) = (lat.mass_normalize(&back), lat.mass_normalize(&target));
            let d = u.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if !coding.word.is_reduced() {
                return Ok((false, format!("unreduced word at theta={theta}")));
            }
            worst = worst.max(d);
        }
        Ok((worst < 1e-6, format!("max deviation {worst:.3e}")))
    });
    r.out
}

fn random_points(model: &WehlerModel, planted: &PlantedSurface, seed: u64) -> Result<Vec<SurfacePoint>> {
    let s = &model.surface;
    let starts: Vec<SurfacePoint> = planted
        .generic_points
        .iter()
        .chain(&planted.finite_orbit)
        .cloned()
        .chain(s.find_points(2))
        .filter(|p| (1..=3).all(|l| s.involution(l, p).is_ok()))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(RANDOM_POINTS);
    while out.len() < RANDOM_POINTS {
        let p = &starts[rng.gen_range(0..starts.len())];
        let len = rng.gen_range(0..5);
        let word: Vec<Letter> = (0..len).map(|_| rng.gen_range(1..=3)).collect();
        if let Ok(o) = s.orbit(p, &word, 1 << 16) {
            out.push(o.points.last().expect("orbit has a start").clone());
        }
    }
    Ok(out)
}

fn wehler_suite(model: &WehlerModel, planted: &PlantedSurface, seed: u64) -> Vec<Property> {
    let s = &model.surface;
    let mut r = Recorder::new("wehler");
    r.check("planted_points_on_surface", || {
        let ok = planted.generic_points.iter().chain(&planted.finite_orbit).all(|p| s.contains(p));
        Ok((ok, String::new()))
    });
    r.check("involutions_square_to_identity_on_points", || {
        let pts = random_points(model, planted, seed)?;
        for p in &pts {
            for l in 1..=3 {
                let q = s.involution(l, p)?;
                if !s.contains(&q) || s.involution(l, &q)? != *p {
                    return Ok((false, format!("sigma_{l} at {p}")));
                }
            }
        }
        Ok((true, format!("{} points", pts.len())))
    });
    r.check("finite_orbit_is_periodic", || {
        let o = s.orbit(&planted.finite_orbit[0], &[1, 2, 3].repeat(4), 1 << 16)?;
        Ok((o.period.is_some(), format!("period {:?}", o.period)))
    });
    r.out
}

fn heights_suite(engine: &Heights, planted: &PlantedSurface) -> Vec<Property> {
    let lat = &engine.model.lattice;
    let tol = engine.config.tol;
    let target = |theta: f64| BoundaryPoint::Irrational { dir: from_diagonal(lat, &[1.0, theta.cos(), theta.sin()]) };
    let p = &planted.generic_points[0];
    let mut r = Recorder::new("heights");
    r.check("finite_orbit_height_vanishes", || {
        let q = &planted.finite_orbit[0];
        let h = engine.canonical_boundary_height(&target(0.7), q)?;
        let v = engine.vcan_pairing(&[1, 2], q)?;
        Ok((h.value.abs() <= tol && v.value == 0.0, format!("h={} vcan={}", h.value, v.value)))
    });
    r.check("generic_height_positive", || {
        let h = engine.canonical_boundary_height(&target(0.7), p)?;
        Ok((h.value > 5.0 * tol, format!("h={}", h.value)))
    });
    r.check("equivariance", || {
        let alpha = target(0.7);
        for l in 1..=3 {
            let moved = BoundaryPoint::Irrational { dir: ns_action(l).apply_f64(&alpha.class()) };
            let a = engine.canonical_boundary_height(&moved, p)?;
            let b = engine.canonical_boundary_height(&alpha, &engine.model.surface.involution(l, p)?)?;
            if (a.value - b.value).abs() > 2.0 * (a.error_bound + b.error_bound) {
                return Ok((false, format!("sigma_{l}: {} vs {}", a.value, b.value)));
            }
        }
        Ok((true, String::new()))
    });
    r.check("cusp_height_homogeneous", || {
        let one = engine.rational_boundary_height(&[0, 0, 1], 1.0, p)?;
        let two = engine.rational_boundary_height(&[0, 0, 1], 2.0, p)?;
        Ok((two.value == 2.0 * one.value && one.value > 0.0, format!("{} {}", one.value, two.value)))
    });
    r.check("vcan_quadratic_in_power", || {
        let g: Vec<Letter> = letters_of((1, 2));
        let one = engine.vcan_pairing(&g, p)?;
        let two = engine.vcan_pairing(&g.repeat(2), p)?;
        let ratio = two.value / one.value;
        Ok(((ratio - 4.0).abs() <= 0.2, format!("ratio {ratio}")))
    });
    r.out
}

fn invariants_suite(engine: &Heights, planted: &PlantedSurface) -> Vec<Property> {
    let lat = &engine.model.lattice;
    let mut r = Recorder::new("invariants");
    r.check("constant_height_integrals", || {
        let s = star_set(lat, &ConstantHeight(2.0), SUITE_SAMPLES)?;
        let (t, v) = (total_height(&s, 3).value, star_volume(&s, 3).value);
        let want = std::f64::consts::PI;
        Ok(((t - want).abs() < 1e-12 && (v - want).abs() < 1e-9, format!("total {t} volume {v}")))
    });
    r.check("reduced_word_count", || {
        let n = reduced_words(3, 2).len();
        Ok((n == 10, format!("{n} words")))
    });
    r.check("star_set_positive_continuous_deterministic", || {
        let src = CanonicalHeight { engine, point: planted.generic_points[0].clone() };
        let s = star_set(lat, &src, SUITE_SAMPLES)?;
        let positive = s.iter().all(|x| x.height.is_some_and(|h| h.value > 0.0));
        let (continuous, max, median) = radius_continuity(&s, crate::JUMP_FACTOR);
        let (mut a, mut b) = (Vec::new(), Vec::new());
        write_csv(&s, &mut a)?;
        write_csv(&star_set(lat, &src, SUITE_SAMPLES)?, &mut b)?;
        Ok((
            positive && continuous && a == b,
            format!("positive={positive} continuous={continuous} (max jump {max:.3e}, median {median:.3e}) stable={}", a == b),
        ))
    });
    r.out
}
