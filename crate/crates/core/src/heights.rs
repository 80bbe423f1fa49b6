//! Canonical heights: boundary limits along the generator coding, hyperbolic
//! (Silverman) heights, and the quadratic growth pairing of parabolic
//! automorphisms.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use dashmap::DashMap;
use rug::Rational;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::hyperbolic::{BoundaryPoint, CodingEnd, HyperbolicError, Letter, CUSP_ANGLE};
use crate::lattice::{rat_to_f64, IntMatrix, IsometryClass, LatticeError};
use crate::wehler::{SurfacePoint, WehlerError, WehlerModel, DEFAULT_GUARD_BITS};

/// Consecutive small increments required by the stop rule.
pub const STALL_COUNT: usize = 3;
/// error_bound = ERROR_FACTOR × last increment.
pub const ERROR_FACTOR: f64 = 10.0;
/// Excursions at least this long are extrapolated to their exit.
pub const LONG_EXCURSION: usize = 6;
/// Points of one parity class needed before an excursion is extrapolated.
pub const EXTRAPOLATION_POINTS: usize = 4;
/// Longest excursion followed past the letter budget.
pub const EXCURSION_CAP: usize = 1_000_000;
/// Largest |⟨u, u⟩| accepted for a mass-1 boundary direction u.
pub const NULL_EPS: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HeightError {
    #[error(transparent)]
    Surface(#[from] WehlerError),
    #[error(transparent)]
    Geometry(#[from] HyperbolicError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error("word does not act hyperbolically")]
    NotHyperbolic,
    #[error("word does not act parabolically")]
    NotParabolic,
    #[error("class does not pair to zero with the fiber class")]
    NotInFiberComplement,
    #[error("too few orbit points before the bit guard ({0})")]
    TooFewPoints(usize),
    #[error("invalid target: {0}")]
    InvalidTarget(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeightValue {
    pub value: f64,
    #[serde(rename = "err")]
    pub error_bound: f64,
    #[serde(rename = "n")]
    pub n_used: usize,
    pub converged: bool,
}

impl HeightValue {
    pub fn exact(value: f64) -> Self {
        Self { value, error_bound: 0.0, n_used: 0, converged: true }
    }

    pub fn scaled(self, s: f64) -> Self {
        Self { value: self.value * s, error_bound: self.error_bound * s.abs(), ..self }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeightConfig {
    pub tol: f64,
    pub max_letters: usize,
    pub guard_bits: u64,
    /// Iterate count for the quadratic-growth fits.
    pub n_max: usize,
    /// Relative accuracy at which a fitted pairing counts as converged.
    pub fit_rel_tol: f64,
}

impl Default for HeightConfig {
    fn default() -> Self {
        Self { tol: 1e-4, max_letters: 60, guard_bits: DEFAULT_GUARD_BITS, n_max: 40, fit_rel_tol: 0.05 }
    }
}

/// Memo of orbit points keyed by (start point, word prefix). Entries are
/// inserted whole, so readers see a complete point or nothing. The optional
/// directory stores one content-addressed file per entry.
pub struct OrbitCache {
    mem: DashMap<(SurfacePoint, Vec<Letter>), SurfacePoint>,
    bytes: AtomicUsize,
    byte_budget: usize,
    dir: Option<PathBuf>,
}

impl OrbitCache {
    pub fn new(byte_budget: usize, dir: Option<PathBuf>) -> std::io::Result<Self> {
        if let Some(d) = &dir {
            fs::create_dir_all(d)?;
        }
        Ok(Self { mem: DashMap::new(), bytes: AtomicUsize::new(0), byte_budget, dir })
    }

    pub fn disabled() -> Self {
        Self { mem: DashMap::new(), bytes: AtomicUsize::new(0), byte_budget: 0, dir: None }
    }

    pub fn len(&self) -> usize {
        self.mem.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mem.is_empty()
    }

    fn file_for(dir: &Path, surface_hash: &str, start: &SurfacePoint, prefix: &[Letter]) -> PathBuf {
        let mut h = Sha256::new();
        h.update(surface_hash.as_bytes());
        h.update(b"|");
        h.update(start.to_json().as_bytes());
        h.update(b"|");
        h.update(prefix);
        dir.join(format!("{}.json", hex::encode(h.finalize())))
    }

    fn get(&self, surface_hash: &str, start: &SurfacePoint, prefix: &[Letter]) -> Option<SurfacePoint> {
        if self.byte_budget > 0 {
            if let Some(p) = self.mem.get(&(start.clone(), prefix.to_vec())) {
                return Some(p.clone());
            }
        }
        let dir = self.dir.as_ref()?;
        let text = fs::read_to_string(Self::file_for(dir, surface_hash, start, prefix)).ok()?;
        SurfacePoint::from_json(&text).ok()
    }

    fn put(&self, surface_hash: &str, start: &SurfacePoint, prefix: &[Letter], p: &SurfacePoint) {
        let size = (p.bits() as usize / 8 + 16) * 6 + prefix.len();
        if self.bytes.load(Ordering::Relaxed) + size <= self.byte_budget {
            self.bytes.fetch_add(size, Ordering::Relaxed);
            self.mem.insert((start.clone(), prefix.to_vec()), p.clone());
        }
        if let Some(dir) = &self.dir {
            let path = Self::file_for(dir, surface_hash, start, prefix);
            if !path.exists() {
                let tmp = path.with_extension(format!("tmp{}", std::process::id()));
                if fs::write(&tmp, p.to_json()).is_ok() {
                    let _ = fs::rename(&tmp, &path);
                }
            }
        }
    }
}

/// Height engine over a fixed model, configuration and orbit cache.
pub struct Heights {
    pub model: WehlerModel,
    pub config: HeightConfig,
    pub cache: OrbitCache,
}

/// Orbit walker that applies one letter at a time through the cache.
struct Walk<'a> {
    engine: &'a Heights,
    start: SurfacePoint,
    prefix: Vec<Letter>,
    current: SurfacePoint,
}

impl<'a> Walk<'a> {
    fn new(engine: &'a Heights, start: &SurfacePoint) -> Self {
        Self { engine, start: start.clone(), prefix: Vec::new(), current: start.clone() }
    }

    /// Applies a letter. Returns `None` once the bit guard is exceeded.
    fn step(&mut self, letter: Letter) -> Result<Option<&SurfacePoint>, HeightError> {
        self.prefix.push(letter);
        let hash = self.engine.model.surface_hash();
        let cache = &self.engine.cache;
        let next = match cache.get(hash, &self.start, &self.prefix) {
            Some(p) => p,
            None => {
                let p = self.engine.model.surface.involution(letter, &self.current)?;
                cache.put(hash, &self.start, &self.prefix, &p);
                p
            }
        };
        self.current = next;
        if self.current.bits() > self.engine.config.guard_bits {
            return Ok(None);
        }
        Ok(Some(&self.current))
    }
}

/// Stop rule: STALL_COUNT consecutive increments below tol, with the
/// resulting error bound within tol.
struct Stopper {
    tol: f64,
    prev: Option<f64>,
    last_inc: f64,
    small: usize,
    n: usize,
}

impl Stopper {
    fn new(tol: f64) -> Self {
        Self { tol, prev: None, last_inc: f64::INFINITY, small: 0, n: 0 }
    }

    /// Records an approximant; returns true when the rule fires.
    fn push(&mut self, a: f64) -> bool {
        if let Some(p) = self.prev {
            self.n += 1;
            // Zero approximants come from orbit points of Weil height 0 and
            // say nothing about the limit; a run of them is not a stall.
            if a == 0.0 && p == 0.0 {
                return false;
            }
            self.last_inc = (a - p).abs();
            if self.last_inc < self.tol {
                self.small += 1;
            } else {
                self.small = 0;
            }
        }
        self.prev = Some(a);
        self.done()
    }

    fn done(&self) -> bool {
        self.small >= STALL_COUNT && ERROR_FACTOR * self.last_inc <= self.tol
    }

    fn finish(&self) -> HeightValue {
        HeightValue {
            value: self.prev.unwrap_or(f64::NAN),
            error_bound: ERROR_FACTOR * self.last_inc,
            n_used: self.n,
            converged: self.done(),
        }
    }
}

/// Approximants aₖ of a boundary-height run, one per orbit step.
#[derive(Clone, Debug, Default)]
pub struct Trace {
    pub approximants: Vec<f64>,
}

impl Trace {
    pub fn increments(&self) -> Vec<f64> {
        self.approximants.windows(2).map(|w| (w[1] - w[0]).abs()).collect()
    }
}

const AMPLE: [i64; 3] = [1, 1, 1];
const AMPLE_F: [f64; 3] = [1.0, 1.0, 1.0];

impl Heights {
    pub fn new(model: WehlerModel, config: HeightConfig, cache: OrbitCache) -> Self {
        Self { model, config, cache }
    }

    pub fn orbit_point(&self, start: &SurfacePoint, word: &[Letter]) -> Result<Option<SurfacePoint>, HeightError> {
        let mut walk = Walk::new(self, start);
        for &l in word {
            if walk.step(l)?.is_none() {
                return Ok(None);
            }
        }
        Ok(Some(walk.current))
    }

    /// h^can(α; p) for any boundary point. Irrational rays are normalized
    /// to mass 1, computed, and rescaled by the mass.
    pub fn canonical_boundary_height(&self, alpha: &BoundaryPoint, p: &SurfacePoint) -> Result<HeightValue, HeightError> {
        Ok(self.canonical_boundary_height_traced(alpha, p)?.0)
    }

    pub fn canonical_boundary_height_traced(
        &self,
        alpha: &BoundaryPoint,
        p: &SurfacePoint,
    ) -> Result<(HeightValue, Trace), HeightError> {
        let lat = &self.model.lattice;
        match alpha {
            BoundaryPoint::Cusp { e, scale } => Ok((self.rational_boundary_height(e, *scale, p)?, Trace::default())),
            BoundaryPoint::Irrational { dir } => {
                if dir.len() != lat.rank() || dir.iter().any(|x| !x.is_finite()) {
                    return Err(HeightError::InvalidTarget("direction must be a finite 3-vector".into()));
                }
                let m = lat.mass(dir);
                if !(m > 0.0) {
                    return Err(HeightError::InvalidTarget("direction has non-positive mass".into()));
                }
                let unit: Vec<f64> = dir.iter().map(|x| x / m).collect();
                if lat.pair_f64(&unit, &unit).abs() > NULL_EPS {
                    return Err(HeightError::InvalidTarget("direction is not null".into()));
                }
                let (h, trace) = self.unit_boundary_height(&unit, p)?;
                Ok((h.scaled(m), trace))
            }
        }
    }

    fn unit_boundary_height(&self, unit: &[f64], p: &SurfacePoint) -> Result<(HeightValue, Trace), HeightError> {
        let lat = &self.model.lattice;
        let chamber = &self.model.chamber;
        let coding = chamber.code_vector(lat, unit, self.config.max_letters, CUSP_ANGLE)?;
        if let CodingEnd::Cusp { class, .. } = &coding.end {
            let cf: Vec<f64> = class.iter().map(|&x| x as f64).collect();
            let h = self.rational_boundary_height(class, 1.0 / lat.mass(&cf), p)?;
            return Ok((h, Trace::default()));
        }
        let letters = &coding.word.letters;
        // Long excursions with their exit length; one cut off by the letter
        // budget is followed past it in floating point.
        let mut owner: Vec<Option<(usize, usize)>> = vec![None; letters.len()];
        for e in coding.word.excursions.iter().filter(|e| e.len >= LONG_EXCURSION) {
            let mut exit = e.len;
            if e.start + e.len == letters.len() && coding.end == CodingEnd::MaxLetters {
                exit += chamber.excursion_tail(lat, &coding.reduced, letters[letters.len() - 1], e.pair, EXCURSION_CAP);
            }
            for slot in &mut owner[e.start..e.start + e.len] {
                *slot = Some((e.start, exit));
            }
        }
        let mut trace = Trace::default();
        let mut stop = Stopper::new(self.config.tol);
        let mut prefix = IntMatrix::identity(lat.rank());
        let mass_of = |m: &IntMatrix| -> Option<f64> {
            let l = m.apply(&AMPLE).ok()?;
            Some(lat.mass(&l.iter().map(|&x| x as f64).collect::<Vec<_>>()))
        };
        let (mut h, mut d) = (p.basis_height(&AMPLE_F), mass_of(&prefix).expect("identity"));
        trace.approximants.push(h / d);
        stop.push(h / d);
        // Heights and masses since the start of the current excursion.
        let (mut hs, mut ds) = (Vec::new(), Vec::new());
        let mut walk = Walk::new(self, p);
        for (i, &l) in letters.iter().enumerate() {
            let Ok(next) = prefix.mul(chamber.reflection(l)) else { break };
            let Some(dn) = mass_of(&next) else { break };
            match owner[i] {
                Some((start, _)) if i == start => {
                    hs = vec![h];
                    ds = vec![d];
                }
                Some(_) => {}
                None => {
                    hs.clear();
                    ds.clear();
                }
            }
            if walk.step(l)?.is_none() {
                break;
            }
            prefix = next;
            (h, d) = (walk.current.basis_height(&AMPLE_F), dn);
            let mut a = h / d;
            if let Some((_, exit)) = owner[i] {
                hs.push(h);
                ds.push(d);
                let j = hs.len() - 1;
                if let Some(x) = extrapolate_exit(&hs, &ds, exit) {
                    // The fit only sees the parity class of the exit, so
                    // other letters add no new approximant.
                    if j < exit && j % 2 != exit % 2 {
                        continue;
                    }
                    a = x;
                }
            }
            trace.approximants.push(a);
            if stop.push(a) {
                break;
            }
        }
        Ok((stop.finish(), trace))
    }

    /// Silverman height h^± for the automorphism applying `word`:
    /// lim λ^{−n}·h_{α}(gⁿp), α the expanding eigen-ray of the pullback
    /// (sign +), or the same for the inverse word (sign −).
    pub fn hyperbolic_canonical_height(&self, word: &[Letter], plus: bool, p: &SurfacePoint) -> Result<HeightValue, HeightError> {
        let letters: Vec<Letter> = if plus { word.to_vec() } else { word.iter().rev().copied().collect() };
        let m = self.model.chamber.word_matrix(&letters)?;
        let iso = self.model.lattice.classify(&m)?;
        let IsometryClass::Hyperbolic { lambda, expanded, .. } = iso.class else {
            return Err(HeightError::NotHyperbolic);
        };
        let mut stop = Stopper::new(self.config.tol);
        stop.push(p.basis_height(&expanded));
        let mut walk = Walk::new(self, p);
        let mut scale = 1.0;
        'outer: for _ in 0..self.config.max_letters {
            for &l in &letters {
                if walk.step(l)?.is_none() {
                    break 'outer;
                }
            }
            scale /= lambda;
            if stop.push(scale * walk.current.basis_height(&expanded)) {
                break;
            }
        }
        Ok(stop.finish())
    }

    fn parabolic_data(&self, word: &[Letter]) -> Result<(Vec<i64>, Vec<Rational>, Vec<Letter>), HeightError> {
        let m = self.model.chamber.word_matrix(word)?;
        let iso = self.model.lattice.classify(&m)?;
        let IsometryClass::Parabolic { e, power, xi } = iso.class else {
            return Err(HeightError::NotParabolic);
        };
        Ok((e, xi, word.repeat(power as usize)))
    }

    /// Heights h_L(gⁿp), n = 0..=n_max, for a real class L; `None` when the
    /// orbit of p under g is finite.
    fn fiber_heights(&self, letters: &[Letter], p: &SurfacePoint, class: &[f64]) -> Result<Option<Vec<f64>>, HeightError> {
        let mut out = vec![p.basis_height(class)];
        let mut walk = Walk::new(self, p);
        'outer: for _ in 0..self.config.n_max {
            for &l in letters {
                if walk.step(l)?.is_none() {
                    break 'outer;
                }
            }
            if walk.current == *p {
                return Ok(None);
            }
            out.push(walk.current.basis_height(class));
        }
        Ok(Some(out))
    }

    /// η(g, ξ(g)) at π_E(p): twice the n² coefficient of h_L(gⁿp) divided
    /// by ⟨L, E⟩, L the ample class (1,1,1).
    pub fn vcan_pairing(&self, word: &[Letter], p: &SurfacePoint) -> Result<HeightValue, HeightError> {
        let (e, _, letters) = self.parabolic_data(word)?;
        let deg = self.model.lattice.pair_int(&AMPLE, &e)? as f64;
        let Some(hs) = self.fiber_heights(&letters, p, &[1.0, 1.0, 1.0])? else {
            return Ok(HeightValue::exact(0.0));
        };
        let fit = fit_tail(&hs, 2)?;
        let value = 2.0 * fit.coeff / deg;
        let err = 2.0 * 3.0 * fit.stderr / deg + value.abs() / self.config.n_max as f64;
        Ok(HeightValue {
            value,
            error_bound: err,
            n_used: hs.len() - 1,
            converged: hs.len() - 1 == self.config.n_max && err <= self.config.tol.max(self.config.fit_rel_tol * value.abs()),
        })
    }

    /// Linear growth rate of h_{L⁰}(gⁿp) for a class L⁰ orthogonal to the
    /// fiber class of g.
    pub fn eta_h_telescoped(&self, word: &[Letter], class0: &[Rational], p: &SurfacePoint) -> Result<HeightValue, HeightError> {
        let (e, _, letters) = self.parabolic_data(word)?;
        let er: Vec<Rational> = e.iter().map(|&x| Rational::from(x)).collect();
        if self.model.lattice.gram_pair(class0, &er)? != 0 {
            return Err(HeightError::NotInFiberComplement);
        }
        let cls: Vec<f64> = class0.iter().map(rat_to_f64).collect();
        let Some(hs) = self.fiber_heights(&letters, p, &cls)? else {
            return Ok(HeightValue::exact(0.0));
        };
        let fit = fit_tail(&hs, 1)?;
        let err = 3.0 * fit.stderr + fit.coeff.abs() / self.config.n_max as f64;
        Ok(HeightValue {
            value: fit.coeff,
            error_bound: err,
            n_used: hs.len() - 1,
            converged: hs.len() - 1 == self.config.n_max && err <= self.config.tol.max(self.config.fit_rel_tol * fit.coeff.abs()),
        })
    }

    /// h^can at the cusp scale·E: the point is carried along the coding of
    /// E to a chamber cusp, where the value is scale·η/‖ξ‖².
    pub fn rational_boundary_height(&self, e: &[i64], scale: f64, p: &SurfacePoint) -> Result<HeightValue, HeightError> {
        let chamber = &self.model.chamber;
        let bp = BoundaryPoint::Cusp { e: e.to_vec(), scale };
        bp.validate(&self.model.lattice, chamber)?;
        let coding = chamber.code_integral(&self.model.lattice, e, usize::MAX)?;
        let CodingEnd::Cusp { index, multiple, .. } = coding.end else {
            return Err(HeightError::InvalidTarget("cusp class did not reduce to a chamber cusp".into()));
        };
        let Some(q) = self.orbit_point(p, &coding.word.letters)? else {
            return Err(HeightError::TooFewPoints(0));
        };
        let cusp = &chamber.cusps()[index];
        let v = self.vcan_pairing(&cusp.translation, &q)?;
        Ok(v.scaled(scale * multiple / rat_to_f64(&cusp.ns_norm_sq)))
    }

    /// Smallest n ≤ `bound` with gⁿp = p.
    pub fn finite_fiber_order(&self, word: &[Letter], p: &SurfacePoint, bound: usize) -> Result<FiberOrder, HeightError> {
        let (_, _, letters) = self.parabolic_data(word)?;
        let mut walk = Walk::new(self, p);
        let mut hs = vec![p.basis_height(&[1.0, 1.0, 1.0])];
        for n in 1..=bound {
            for &l in &letters {
                if walk.step(l)?.is_none() {
                    return Ok(FiberOrder::Exceeds { growth_ratio: growth_ratio(&hs) });
                }
            }
            if walk.current == *p {
                return Ok(FiberOrder::Order(n));
            }
            hs.push(walk.current.basis_height(&[1.0, 1.0, 1.0]));
        }
        Ok(FiberOrder::Exceeds { growth_ratio: growth_ratio(&hs) })
    }
}

fn growth_ratio(hs: &[f64]) -> f64 {
    let n = hs.len() - 1;
    if n < 2 {
        return f64::NAN;
    }
    hs[n] / hs[n / 2].max(f64::MIN_POSITIVE)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FiberOrder {
    Order(usize),
    /// No return within the bound; ratio h(g^N p)/h(g^{N/2} p).
    Exceeds { growth_ratio: f64 },
}

struct Fit {
    coeff: f64,
    stderr: f64,
}

/// Approximant at the exit of an excursion from its first steps. Along an
/// excursion both the height hs[j] and the mass ds[j] after j letters are
/// quadratic in j on each parity class (the masses exactly, the heights up
/// to a bounded term), so the height is fitted by least squares and the
/// mass interpolated on the parity class of `exit`. `None` until
/// `EXTRAPOLATION_POINTS` points of that class are known.
fn extrapolate_exit(hs: &[f64], ds: &[f64], exit: usize) -> Option<f64> {
    let j = hs.len() - 1;
    if j >= exit {
        return Some(hs[exit] / ds[exit]);
    }
    let idx: Vec<usize> = (0..=j).filter(|t| t % 2 == exit % 2).collect();
    if idx.len() < EXTRAPOLATION_POINTS {
        return None;
    }
    let centre = idx.iter().sum::<usize>() as f64 / idx.len() as f64;
    let x = DMatrix::from_fn(idx.len(), 3, |r, c| (idx[r] as f64 - centre).powi(2 - c as i32));
    let y = DVector::from_iterator(idx.len(), idx.iter().map(|&t| hs[t]));
    let beta = (x.transpose() * &x).try_inverse()? * x.transpose() * y;
    let u = exit as f64 - centre;
    let h = beta[0] * u * u + beta[1] * u + beta[2];
    let t: Vec<f64> = idx[idx.len() - 3..].iter().map(|&t| t as f64).collect();
    let e = exit as f64;
    let d: f64 = (0..3)
        .map(|a| {
            let (b, c) = ((a + 1) % 3, (a + 2) % 3);
            ds[t[a] as usize] * (e - t[b]) * (e - t[c]) / ((t[a] - t[b]) * (t[a] - t[c]))
        })
        .sum();
    Some(h / d)
}

/// Least-squares polynomial fit of hs[n] over the upper half n ∈ [N/2, N];
/// returns the leading coefficient (degree `deg`) and its standard error.
fn fit_tail(hs: &[f64], deg: usize) -> Result<Fit, HeightError> {
    let n = hs.len() - 1;
    let lo = n / 2;
    let m = n - lo + 1;
    if m < deg + 3 {
        return Err(HeightError::TooFewPoints(hs.len()));
    }
    let centre = (lo + n) as f64 / 2.0;
    let x = DMatrix::from_fn(m, deg + 1, |i, j| ((lo + i) as f64 - centre).powi((deg - j) as i32));
    let y = DVector::from_iterator(m, hs[lo..].iter().copied());
    let xtx = x.transpose() * &x;
    let inv = xtx.clone().try_inverse().ok_or(HeightError::TooFewPoints(hs.len()))?;
    let beta = &inv * x.transpose() * &y;
    let resid = &y - &x * &beta;
    let sigma2 = resid.norm_squared() / (m - deg - 1) as f64;
    Ok(Fit { coeff: beta[0], stderr: (sigma2 * inv[(0, 0)]).sqrt() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wehler::{PlantedSurface, DEFAULT_SEED};

    fn engine(tol: f64) -> (Heights, PlantedSurface) {
        let ps = PlantedSurface::generate(DEFAULT_SEED);
        let cfg = HeightConfig { tol, ..HeightConfig::default() };
        (Heights::new(WehlerModel::new(ps.surface.clone()), cfg, OrbitCache::new(1 << 28, None).unwrap()), ps)
    }

    #[test]
    fn height_value_json() {
        let h = HeightValue { value: 1.5, error_bound: 0.25, n_used: 7, converged: true };
        let s = serde_json::to_string(&h).unwrap();
        assert_eq!(s, r#"{"value":1.5,"err":0.25,"n":7,"converged":true}"#);
        assert_eq!(serde_json::from_str::<HeightValue>(&s).unwrap(), h);
    }

    #[test]
    fn stop_rule() {
        let mut s = Stopper::new(1e-3);
        for a in [1.0, 1.5, 1.6, 1.60001, 1.60002, 1.600021] {
            if s.push(a) {
                break;
            }
        }
        let h = s.finish();
        assert!(h.converged);
        assert!((h.error_bound - 10.0 * 1e-6).abs() < 1e-9);
        assert_eq!(h.value, 1.600021);
    }

    #[test]
    fn zero_run_is_not_a_stall() {
        let mut s = Stopper::new(1e-3);
        assert!(![0.0, 0.0, 0.0, 0.0, 0.0].iter().any(|&a| s.push(a)));
        assert!(!s.finish().converged);
    }

    #[test]
    fn disk_cache_survives_a_new_engine() {
        let dir = tempfile::tempdir().unwrap();
        let ps = PlantedSurface::generate(DEFAULT_SEED);
        let make = |budget| {
            let cache = OrbitCache::new(budget, Some(dir.path().to_path_buf())).unwrap();
            Heights::new(WehlerModel::new(ps.surface.clone()), HeightConfig::default(), cache)
        };
        let p = &ps.generic_points[0];
        let word = [1, 2, 3, 1];
        let first = make(1 << 20).orbit_point(p, &word).unwrap().unwrap();
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), word.len());
        let second = make(0);
        assert_eq!(second.orbit_point(p, &word).unwrap().unwrap(), first);
        assert!(second.cache.is_empty());
    }

    #[test]
    fn fit_recovers_quadratic() {
        let hs: Vec<f64> = (0..=40).map(|n| 0.7 * (n * n) as f64 - 3.0 * n as f64 + 2.0).collect();
        let f = fit_tail(&hs, 2).unwrap();
        assert!((f.coeff - 0.7).abs() < 1e-9);
        assert!(f.stderr < 1e-9);
    }

    #[test]
    fn finite_orbit_has_zero_heights() {
        let (h, ps) = engine(1e-4);
        let p = &ps.finite_orbit[0];
        assert_eq!(h.vcan_pairing(&[1, 2], p).unwrap().value, 0.0);
        assert_eq!(h.finite_fiber_order(&[1, 2], p, 10).unwrap(), FiberOrder::Order(2));
        assert_eq!(h.finite_fiber_order(&[2, 3], p, 10).unwrap(), FiberOrder::Order(1));
        let hp = h.hyperbolic_canonical_height(&[1, 2, 3], true, p).unwrap();
        assert!(hp.value.abs() <= 1e-4);
    }

    #[test]
    fn irrational_height_is_scale_equivariant_bitwise() {
        let (h, ps) = engine(1e-3);
        let dir = vec![0.9, 0.35, 0.2];
        let lat = &h.model.lattice;
        let null = null_direction(lat, 0.7);
        let p = &ps.generic_points[0];
        let a = h.canonical_boundary_height(&BoundaryPoint::Irrational { dir: null.clone() }, p).unwrap();
        let scaled: Vec<f64> = null.iter().map(|x| x * 4.0).collect();
        let b = h.canonical_boundary_height(&BoundaryPoint::Irrational { dir: scaled }, p).unwrap();
        assert_eq!(b.value, 4.0 * a.value);
        assert!(a.converged, "{a:?}");
        assert!(a.value > 0.0);
        assert!(matches!(
            h.canonical_boundary_height(&BoundaryPoint::Irrational { dir }, p),
            Err(HeightError::InvalidTarget(_))
        ));
    }

    #[test]
    fn cusp_height_scales_and_vanishes_on_finite_orbit() {
        let (h, ps) = engine(1e-4);
        let p = &ps.generic_points[0];
        let one = h.rational_boundary_height(&[0, 0, 1], 1.0, p).unwrap();
        let two = h.rational_boundary_height(&[0, 0, 1], 2.0, p).unwrap();
        assert_eq!(two.value, 2.0 * one.value);
        assert!(one.value > 0.0);
        let z = h.rational_boundary_height(&[0, 0, 1], 1.0, &ps.finite_orbit[1]).unwrap();
        assert_eq!(z.value, 0.0);
    }

    #[test]
    fn telescoped_slope_of_xi_matches_vcan() {
        let (h, ps) = engine(1e-4);
        let p = &ps.generic_points[1];
        let v = h.vcan_pairing(&[1, 2], p).unwrap();
        let xi: Vec<Rational> = [-1, 1, 0].iter().map(|&x| Rational::from(x)).collect();
        let s = h.eta_h_telescoped(&[1, 2], &xi, p).unwrap();
        assert!((v.value - s.value).abs() <= 2.0 * (v.error_bound + s.error_bound), "{v:?} {s:?}");
        let zero = vec![Rational::from(0); 3];
        assert_eq!(h.eta_h_telescoped(&[1, 2], &zero, p).unwrap().value.abs(), 0.0);
        let bad: Vec<Rational> = [1, 0, 0].iter().map(|&x| Rational::from(x)).collect();
        assert_eq!(h.eta_h_telescoped(&[1, 2], &bad, p).unwrap_err(), HeightError::NotInFiberComplement);
    }

    fn null_direction(lat: &crate::lattice::GramLattice, theta: f64) -> Vec<f64> {
        let t = crate::hyperbolic::diagonalize_form(lat);
        (&t * DVector::from_vec(vec![1.0, theta.cos(), theta.sin()])).iter().copied().collect()
    }
}
