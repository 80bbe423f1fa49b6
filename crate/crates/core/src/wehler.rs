//! Wehler surfaces: smooth (2,2,2) hypersurfaces in P¹×P¹×P¹ over ℚ, their
//! three Vieta involutions, and Weil heights of rational points.

use std::collections::HashMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rug::{Complete, Integer, Rational};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::hyperbolic::{Chamber, Letter};
use crate::lattice::{GramLattice, IntMatrix};

pub const DEFAULT_GUARD_BITS: u64 = 200_000;
pub const DEFAULT_SEED: u64 = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WehlerError {
    #[error("fiber of projection {index} is not finite at this point")]
    DegenerateFiber { index: usize },
    #[error("point is not on the surface")]
    NotOnSurface,
    #[error("projective point [0:0]")]
    ZeroPoint,
    #[error("surface equation is identically zero")]
    ZeroSurface,
    #[error("letter {0} is not a generator index")]
    BadLetter(Letter),
    #[error("invalid {field}: {msg}")]
    Parse { field: String, msg: String },
}

fn parse_err(field: &str, msg: impl fmt::Display) -> WehlerError {
    WehlerError::Parse { field: field.to_string(), msg: msg.to_string() }
}

/// Point of P¹ with coprime integer coordinates, normalized so that the
/// second coordinate is positive, or is zero with the first positive.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ProjPoint {
    a: Integer,
    b: Integer,
}

impl ProjPoint {
    pub fn new(a: Integer, b: Integer) -> Result<Self, WehlerError> {
        if a.cmp0().is_eq() && b.cmp0().is_eq() {
            return Err(WehlerError::ZeroPoint);
        }
        let g = a.gcd_ref(&b).complete();
        let (mut a, mut b) = if g == 1 { (a, b) } else { (a.div_exact(&g), b.div_exact(&g)) };
        if b < 0 || (b.cmp0().is_eq() && a < 0) {
            a = -a;
            b = -b;
        }
        Ok(Self { a, b })
    }

    pub fn from_i64(a: i64, b: i64) -> Result<Self, WehlerError> {
        Self::new(Integer::from(a), Integer::from(b))
    }

    /// The point t/1, or ∞ = [1:0].
    pub fn affine(t: i64) -> Self {
        Self::from_i64(t, 1).unwrap()
    }

    pub fn infinity() -> Self {
        Self::from_i64(1, 0).unwrap()
    }

    pub fn a(&self) -> &Integer {
        &self.a
    }

    pub fn b(&self) -> &Integer {
        &self.b
    }

    pub fn bits(&self) -> u64 {
        u64::from(self.a.significant_bits().max(self.b.significant_bits()))
    }

    /// log max(|a|, |b|).
    pub fn weil_height(&self) -> f64 {
        ln_abs(if self.a.cmp_abs(&self.b).is_gt() { &self.a } else { &self.b })
    }

    /// [t₁², t₀t₁, t₀²]: monomials of degree 2 indexed by the power of t₀.
    fn monomials(&self) -> [Integer; 3] {
        [self.b.square_ref().complete(), (&self.a * &self.b).complete(), self.a.square_ref().complete()]
    }
}

impl fmt::Display for ProjPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}:{}]", self.a, self.b)
    }
}

/// Natural logarithm of |n| for an integer of any size.
pub fn ln_abs(n: &Integer) -> f64 {
    if n.cmp0().is_eq() {
        return f64::NEG_INFINITY;
    }
    let (m, e) = n.to_f64_exp();
    m.abs().ln() + f64::from(e) * std::f64::consts::LN_2
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SurfacePoint {
    pub coords: [ProjPoint; 3],
}

impl SurfacePoint {
    pub fn new(x: ProjPoint, y: ProjPoint, z: ProjPoint) -> Self {
        Self { coords: [x, y, z] }
    }

    pub fn affine(x: i64, y: i64, z: i64) -> Self {
        Self::new(ProjPoint::affine(x), ProjPoint::affine(y), ProjPoint::affine(z))
    }

    pub fn bits(&self) -> u64 {
        self.coords.iter().map(ProjPoint::bits).max().unwrap_or(0)
    }

    /// Σ cᵢ·h(coordinate i) for a real class (c₁, c₂, c₃) in the hᵢ basis.
    pub fn basis_height(&self, class: &[f64]) -> f64 {
        self.coords.iter().zip(class).map(|(c, w)| if *w == 0.0 { 0.0 } else { w * c.weil_height() }).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&PointJson::from(self)).unwrap()
    }

    pub fn from_json(s: &str) -> Result<Self, WehlerError> {
        let raw: serde_json::Value = serde_json::from_str(s).map_err(|e| parse_err("point", e))?;
        let mut coords = Vec::with_capacity(3);
        for name in ["x", "y", "z"] {
            let arr = raw
                .get(name)
                .and_then(|v| v.as_array())
                .filter(|a| a.len() == 2)
                .ok_or_else(|| parse_err(name, "expected a pair of integer strings"))?;
            let mut ints = Vec::with_capacity(2);
            for v in arr {
                let s = match v {
                    serde_json::Value::String(s) => s.clone(),
                    serde_json::Value::Number(n) if n.is_i64() => n.to_string(),
                    _ => return Err(parse_err(name, "entries must be integer strings")),
                };
                ints.push(Integer::from_str_radix(s.trim(), 10).map_err(|_| parse_err(name, format!("bad integer {s:?}")))?);
            }
            let b = ints.pop().unwrap();
            let a = ints.pop().unwrap();
            coords.push(ProjPoint::new(a, b).map_err(|e| parse_err(name, e))?);
        }
        let z = coords.pop().unwrap();
        let y = coords.pop().unwrap();
        let x = coords.pop().unwrap();
        Ok(Self::new(x, y, z))
    }
}

impl fmt::Display for SurfacePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.coords[0], self.coords[1], self.coords[2])
    }
}

#[derive(Serialize, Deserialize)]
struct PointJson {
    x: [String; 2],
    y: [String; 2],
    z: [String; 2],
}

impl From<&SurfacePoint> for PointJson {
    fn from(p: &SurfacePoint) -> Self {
        let c = |q: &ProjPoint| [q.a.to_string(), q.b.to_string()];
        Self { x: c(&p.coords[0]), y: c(&p.coords[1]), z: c(&p.coords[2]) }
    }
}

/// Coefficients (A, B, C) of F restricted to a fiber of one projection,
/// F = A·t₀² + B·t₀t₁ + C·t₁².
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FiberQuadratic {
    pub a: Integer,
    pub b: Integer,
    pub c: Integer,
}

impl FiberQuadratic {
    pub fn eval(&self, t: &ProjPoint) -> Integer {
        let mut acc = Integer::from(t.a.square_ref()) * &self.a;
        acc += &self.b * Integer::from(&t.a * &t.b);
        acc += &self.c * Integer::from(t.b.square_ref());
        acc
    }

    /// The other root, given that `t` is a root.
    pub fn conjugate(&self, t: &ProjPoint, index: usize) -> Result<ProjPoint, WehlerError> {
        if self.a.cmp0().is_eq() && self.b.cmp0().is_eq() && self.c.cmp0().is_eq() {
            return Err(WehlerError::DegenerateFiber { index });
        }
        if !self.a.cmp0().is_eq() && !t.b.cmp0().is_eq() {
            let mut num = Integer::from(&self.b * &t.b);
            num += &self.a * &t.a;
            let den = Integer::from(&self.a * &t.b);
            return ProjPoint::new(-num, den);
        }
        if !t.b.cmp0().is_eq() {
            // A = 0 and t is the finite root: the other root is at infinity.
            Ok(ProjPoint::infinity())
        } else {
            ProjPoint::new(-self.c.clone(), self.b.clone())
        }
    }
}

/// F(x, y, z) = Σ c[a][b][c] x₀^a x₁^{2−a} y₀^b y₁^{2−b} z₀^c z₁^{2−c}.
#[derive(Clone, Debug, PartialEq)]
pub struct WehlerSurface {
    coeffs: Vec<Rational>,
    ints: Vec<Integer>,
}

fn idx(a: usize, b: usize, c: usize) -> usize {
    9 * a + 3 * b + c
}

impl WehlerSurface {
    /// Coefficients in index order (a, b, c), 27 entries.
    pub fn new(coeffs: Vec<Rational>) -> Result<Self, WehlerError> {
        if coeffs.len() != 27 {
            return Err(parse_err("coeffs", format!("expected 27 coefficients, got {}", coeffs.len())));
        }
        if coeffs.iter().all(|c| *c == 0) {
            return Err(WehlerError::ZeroSurface);
        }
        let mut den = Integer::from(1);
        for c in &coeffs {
            den.lcm_mut(c.denom());
        }
        let ints = coeffs.iter().map(|c| c.numer() * (&den / c.denom()).complete()).collect();
        Ok(Self { coeffs, ints })
    }

    pub fn from_i64(coeffs: &[i64]) -> Result<Self, WehlerError> {
        Self::new(coeffs.iter().map(|&c| Rational::from(c)).collect())
    }

    pub fn coeff(&self, a: usize, b: usize, c: usize) -> &Rational {
        &self.coeffs[idx(a, b, c)]
    }

    pub fn coeffs(&self) -> &[Rational] {
        &self.coeffs
    }

    pub fn from_json(s: &str) -> Result<Self, WehlerError> {
        #[derive(Deserialize)]
        struct Raw {
            coeffs: Vec<Vec<Vec<String>>>,
        }
        let raw: Raw = serde_json::from_str(s).map_err(|e| parse_err("coeffs", e))?;
        let mut out = Vec::with_capacity(27);
        if raw.coeffs.len() != 3 {
            return Err(parse_err("coeffs", "expected a 3×3×3 array"));
        }
        for (a, plane) in raw.coeffs.iter().enumerate() {
            if plane.len() != 3 || plane.iter().any(|r| r.len() != 3) {
                return Err(parse_err("coeffs", "expected a 3×3×3 array"));
            }
            for (b, row) in plane.iter().enumerate() {
                for (c, s) in row.iter().enumerate() {
                    let q = Rational::from_str_radix(s.trim(), 10)
                        .map_err(|_| parse_err(&format!("coeffs[{a}][{b}][{c}]"), format!("bad rational {s:?}")))?;
                    out.push(q);
                }
            }
        }
        Self::new(out)
    }

    pub fn to_json(&self) -> String {
        let nested: Vec<Vec<Vec<String>>> = (0..3)
            .map(|a| (0..3).map(|b| (0..3).map(|c| self.coeff(a, b, c).to_string()).collect()).collect())
            .collect();
        serde_json::to_string(&serde_json::json!({ "coeffs": nested })).unwrap()
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash_hex(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }

    /// Exact value of the integer-scaled equation at the point.
    pub fn eval(&self, p: &SurfacePoint) -> Integer {
        let [mx, my, mz] = [p.coords[0].monomials(), p.coords[1].monomials(), p.coords[2].monomials()];
        let mut acc = Integer::new();
        for a in 0..3 {
            for b in 0..3 {
                let mut inner = Integer::new();
                for c in 0..3 {
                    let k = &self.ints[idx(a, b, c)];
                    if !k.cmp0().is_eq() {
                        inner += k * &mz[c];
                    }
                }
                if !inner.cmp0().is_eq() {
                    inner *= &mx[a];
                    inner *= &my[b];
                    acc += inner;
                }
            }
        }
        acc
    }

    pub fn contains(&self, p: &SurfacePoint) -> bool {
        self.eval(p).cmp0().is_eq()
    }

    /// Quadratic in coordinate `index` (0-based) with the other two fixed.
    pub fn fiber_quadratic(&self, index: usize, p: &SurfacePoint) -> FiberQuadratic {
        let (j, k) = match index {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        let mj = p.coords[j].monomials();
        let mk = p.coords[k].monomials();
        let mut out = [Integer::new(), Integer::new(), Integer::new()];
        for (t, slot) in out.iter_mut().enumerate() {
            for u in 0..3 {
                // Σ_v c·mk[v] has small coefficients; one big product per u.
                let mut inner = Integer::new();
                for v in 0..3 {
                    let mut e = [0; 3];
                    e[index] = t;
                    e[j] = u;
                    e[k] = v;
                    let c = &self.ints[idx(e[0], e[1], e[2])];
                    if !c.cmp0().is_eq() {
                        inner += c * &mk[v];
                    }
                }
                if !inner.cmp0().is_eq() {
                    inner *= &mj[u];
                    *slot += inner;
                }
            }
        }
        let [c, b, a] = out;
        FiberQuadratic { a, b, c }
    }

    /// Vieta involution σᵢ (`letter` = i ∈ 1..=3): swap coordinate i for the
    /// other root of the fiber quadratic.
    pub fn involution(&self, letter: Letter, p: &SurfacePoint) -> Result<SurfacePoint, WehlerError> {
        if !(1..=3).contains(&letter) {
            return Err(WehlerError::BadLetter(letter));
        }
        let i = letter as usize - 1;
        let q = self.fiber_quadratic(i, p);
        let t = q.conjugate(&p.coords[i], i + 1)?;
        let mut out = p.clone();
        out.coords[i] = t;
        Ok(out)
    }

    /// Applies the letters in order, the first letter first.
    pub fn orbit(&self, p: &SurfacePoint, word: &[Letter], guard_bits: u64) -> Result<Orbit, WehlerError> {
        let mut points = vec![p.clone()];
        let mut seen: HashMap<SurfacePoint, usize> = HashMap::from([(p.clone(), 0)]);
        let mut period = None;
        for &l in word {
            let next = self.involution(l, points.last().unwrap())?;
            let over = next.bits() > guard_bits;
            points.push(next);
            if over {
                return Ok(Orbit { points, period, guard_hit: true });
            }
            let n = points.len() - 1;
            if period.is_none() {
                if let Some(&first) = seen.get(&points[n]) {
                    period = Some(n - first);
                } else {
                    seen.insert(points[n].clone(), n);
                }
            }
        }
        Ok(Orbit { points, period, guard_hit: false })
    }

    /// Rational points with x and y of height ≤ `bound` in the form [a:b],
    /// z solved from the fiber quadratic.
    pub fn find_points(&self, bound: i64) -> Vec<SurfacePoint> {
        let mut proj = Vec::new();
        for b in 0..=bound {
            for a in -bound..=bound {
                if let Ok(p) = ProjPoint::from_i64(a, b) {
                    if !proj.contains(&p) {
                        proj.push(p);
                    }
                }
            }
        }
        let mut out = Vec::new();
        for x in &proj {
            for y in &proj {
                let probe = SurfacePoint::new(x.clone(), y.clone(), ProjPoint::infinity());
                let q = self.fiber_quadratic(2, &probe);
                for z in rational_roots(&q) {
                    let p = SurfacePoint::new(x.clone(), y.clone(), z);
                    if !out.contains(&p) {
                        out.push(p);
                    }
                }
            }
        }
        out.sort();
        out
    }
}

/// Rational roots of A t₀² + B t₀t₁ + C t₁² (empty when the form vanishes).
pub fn rational_roots(q: &FiberQuadratic) -> Vec<ProjPoint> {
    if q.a.cmp0().is_eq() && q.b.cmp0().is_eq() && q.c.cmp0().is_eq() {
        return Vec::new();
    }
    let mut roots = Vec::new();
    if q.a.cmp0().is_eq() {
        roots.push(ProjPoint::infinity());
        if !q.b.cmp0().is_eq() {
            roots.extend(ProjPoint::new(-q.c.clone(), q.b.clone()));
        }
    } else {
        let disc = q.b.square_ref().complete() - Integer::from(4) * &q.a * &q.c;
        if disc >= 0 && disc.is_perfect_square() {
            {
                let s = disc.sqrt();
                let two_a = Integer::from(2) * &q.a;
                roots.extend(ProjPoint::new(-q.b.clone() + &s, two_a.clone()));
                roots.extend(ProjPoint::new(-q.b.clone() - &s, two_a));
            }
        }
    }
    roots.dedup();
    roots
}

#[derive(Clone, Debug)]
pub struct Orbit {
    /// Starting point followed by the image after each letter.
    pub points: Vec<SurfacePoint>,
    /// Steps between the first repeated point and its earlier occurrence.
    pub period: Option<usize>,
    /// The last point exceeded the bit guard and the orbit was cut short.
    pub guard_hit: bool,
}

/// NS action of σᵢ: fixes hⱼ (j ≠ i) and sends hᵢ to −hᵢ + 2hⱼ + 2hₖ.
pub fn ns_action(letter: Letter) -> IntMatrix {
    let i = letter as usize - 1;
    let cols: Vec<Vec<i64>> = (0..3)
        .map(|j| {
            if j == i {
                (0..3).map(|k| if k == i { -1 } else { 2 }).collect()
            } else {
                (0..3).map(|k| (k == j) as i64).collect()
            }
        })
        .collect();
    IntMatrix::from_columns(&cols).unwrap()
}

/// Default surface: pseudo-random coefficients in [−3, 3] from a seeded
/// generator, adjusted so that {(0,0,0), (2,0,0)} is a finite orbit and
/// three small generic points lie on the surface.
#[derive(Clone, Debug)]
pub struct PlantedSurface {
    pub surface: WehlerSurface,
    pub seed: u64,
    pub finite_orbit: Vec<SurfacePoint>,
    pub generic_points: Vec<SurfacePoint>,
}

const GENERIC_PLANTS: [[i64; 3]; 3] = [[1, 2, -1], [-1, 1, 2], [2, -1, 1]];

impl PlantedSurface {
    pub fn generate(seed: u64) -> Self {
        for k in 0..1000u64 {
            if let Some(p) = Self::attempt(seed.wrapping_add(k)) {
                return p;
            }
        }
        panic!("no admissible planted surface near seed {seed}");
    }

    fn attempt(seed: u64) -> Option<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut c: Vec<Rational> = (0..27).map(|_| Rational::from(rng.gen_range(-3i64..=3))).collect();
        // Finite orbit: x ↦ 2 − x swaps (0,0,0) and (2,0,0); both are
        // ramification points of the other two projections.
        c[idx(0, 0, 0)] = Rational::new();
        c[idx(0, 1, 0)] = Rational::new();
        c[idx(0, 0, 1)] = Rational::new();
        c[idx(2, 0, 0)] = Rational::from(1);
        c[idx(1, 0, 0)] = Rational::from(-2);
        c[idx(1, 1, 0)] = Rational::from(-2) * c[idx(2, 1, 0)].clone();
        c[idx(1, 0, 1)] = Rational::from(-2) * c[idx(2, 0, 1)].clone();
        // Solve for c222, c122, c212 so that the generic plants lie on F = 0.
        let unknowns = [idx(2, 2, 2), idx(1, 2, 2), idx(2, 1, 2)];
        for &u in &unknowns {
            c[u] = Rational::new();
        }
        let mut rows = Vec::new();
        for pt in GENERIC_PLANTS {
            let mono = |e: [usize; 3]| -> Rational {
                Rational::from(pt[0].pow(e[0] as u32) * pt[1].pow(e[1] as u32) * pt[2].pow(e[2] as u32))
            };
            let mut rest = Rational::new();
            for a in 0..3 {
                for b in 0..3 {
                    for cc in 0..3 {
                        rest += mono([a, b, cc]) * &c[idx(a, b, cc)];
                    }
                }
            }
            rows.push(vec![mono([2, 2, 2]), mono([1, 2, 2]), mono([2, 1, 2]), -rest]);
        }
        let sol = solve3(rows)?;
        for (u, v) in unknowns.iter().zip(sol) {
            c[*u] = v;
        }
        let surface = WehlerSurface::new(c).ok()?;
        let finite_orbit = vec![SurfacePoint::affine(0, 0, 0), SurfacePoint::affine(2, 0, 0)];
        let generic_points: Vec<SurfacePoint> =
            GENERIC_PLANTS.iter().map(|p| SurfacePoint::affine(p[0], p[1], p[2])).collect();
        // The finite orbit must avoid degenerate and vertical fibers.
        for p in &finite_orbit {
            for i in 0..3 {
                if surface.fiber_quadratic(i, p).a.cmp0().is_eq() {
                    return None;
                }
            }
        }
        for p in finite_orbit.iter().chain(&generic_points) {
            if !surface.contains(p) {
                return None;
            }
        }
        // Generic plants must have infinite orbits that run without
        // degenerate fibers for a while.
        for p in &generic_points {
            for word in [[1u8, 2, 3].repeat(3), [1u8, 2].repeat(4), [1u8, 3].repeat(4), [2u8, 3].repeat(4)] {
                let o = surface.orbit(p, &word, 10_000).ok()?;
                if o.period.is_some() {
                    return None;
                }
            }
        }
        Some(Self { surface, seed, finite_orbit, generic_points })
    }
}

fn solve3(mut m: Vec<Vec<Rational>>) -> Option<Vec<Rational>> {
    for col in 0..3 {
        let p = (col..3).find(|&r| m[r][col] != 0)?;
        m.swap(col, p);
        let inv = m[col][col].clone().recip();
        for x in m[col].iter_mut() {
            *x *= &inv;
        }
        for r in 0..3 {
            if r != col && m[r][col] != 0 {
                let f = m[r][col].clone();
                for k in 0..4 {
                    let t = Rational::from(&f * &m[col][k]);
                    m[r][k] -= t;
                }
            }
        }
    }
    Some(m.into_iter().map(|r| r[3].clone()).collect())
}

/// A Wehler surface with its lattice and reflection chamber.
#[derive(Clone, Debug)]
pub struct WehlerModel {
    pub lattice: GramLattice,
    pub chamber: Chamber,
    pub surface: WehlerSurface,
    hash: String,
}

impl WehlerModel {
    pub fn new(surface: WehlerSurface) -> Self {
        let lattice = GramLattice::wehler();
        let chamber = Chamber::wehler(&lattice);
        let hash = surface.hash_hex();
        Self { lattice, chamber, surface, hash }
    }

    pub fn surface_hash(&self) -> &str {
        &self.hash
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn planted() -> PlantedSurface {
        PlantedSurface::generate(DEFAULT_SEED)
    }

    #[test]
    fn conjugate_root_examples() {
        let q = FiberQuadratic { a: Integer::from(1), b: Integer::from(-3), c: Integer::from(2) };
        assert_eq!(q.conjugate(&ProjPoint::affine(1), 1).unwrap(), ProjPoint::affine(2));
        let dbl = FiberQuadratic { a: Integer::from(1), b: Integer::from(-4), c: Integer::from(4) };
        assert_eq!(dbl.conjugate(&ProjPoint::affine(2), 1).unwrap(), ProjPoint::affine(2));
        let zero = FiberQuadratic { a: Integer::new(), b: Integer::new(), c: Integer::new() };
        assert_eq!(zero.conjugate(&ProjPoint::affine(2), 2), Err(WehlerError::DegenerateFiber { index: 2 }));
        let lin = FiberQuadratic { a: Integer::new(), b: Integer::from(2), c: Integer::from(-6) };
        assert_eq!(lin.conjugate(&ProjPoint::affine(3), 1).unwrap(), ProjPoint::infinity());
        assert_eq!(lin.conjugate(&ProjPoint::infinity(), 1).unwrap(), ProjPoint::affine(3));
    }

    #[test]
    fn weil_height_examples() {
        assert!((ProjPoint::from_i64(3, 2).unwrap().weil_height() - 3f64.ln()).abs() < 1e-15);
        assert_eq!(ProjPoint::infinity().weil_height(), 0.0);
        assert_eq!(ProjPoint::from_i64(4, 6).unwrap(), ProjPoint::from_i64(2, 3).unwrap());
        assert!((ProjPoint::from_i64(4, 6).unwrap().weil_height() - 3f64.ln()).abs() < 1e-15);
        let big = Integer::from(1) << 5000u32;
        assert!((ln_abs(&big) - 5000.0 * std::f64::consts::LN_2).abs() < 1e-9);
    }

    #[test]
    fn basis_height_examples() {
        let p = SurfacePoint::new(ProjPoint::from_i64(3, 2).unwrap(), ProjPoint::infinity(), ProjPoint::affine(5));
        assert!((p.basis_height(&[1.0, 1.0, 1.0]) - (3f64.ln() + 5f64.ln())).abs() < 1e-15);
        assert_eq!(p.basis_height(&[0.0, 0.0, 0.0]), 0.0);
        let sum = p.basis_height(&[1.0, 0.5, 2.0]) + p.basis_height(&[0.25, 1.0, -1.0]);
        assert!((p.basis_height(&[1.25, 1.5, 1.0]) - sum).abs() < 1e-14);
    }

    #[test]
    fn planted_surface_has_its_points() {
        let ps = planted();
        for p in ps.finite_orbit.iter().chain(&ps.generic_points) {
            assert!(ps.surface.contains(p), "{p}");
        }
        let s = &ps.surface;
        assert_eq!(s.involution(1, &ps.finite_orbit[0]).unwrap(), ps.finite_orbit[1]);
        for p in &ps.finite_orbit {
            assert_eq!(s.involution(2, p).unwrap(), *p);
            assert_eq!(s.involution(3, p).unwrap(), *p);
        }
        let o = s.orbit(&ps.finite_orbit[0], &[1, 2, 3, 1, 3, 2], 1000).unwrap();
        assert!(o.period.is_some());
    }

    #[test]
    fn involutions_are_involutions_on_found_points() {
        let s = planted().surface;
        let pts = s.find_points(3);
        assert!(pts.len() >= 5);
        for p in &pts {
            assert!(s.contains(p));
            for l in 1..=3 {
                let Ok(q) = s.involution(l, p) else { continue };
                assert!(s.contains(&q));
                for k in 0..3 {
                    if k != l as usize - 1 {
                        assert_eq!(q.coords[k], p.coords[k]);
                    }
                }
                assert_eq!(s.involution(l, &q).unwrap(), *p);
            }
        }
    }

    #[test]
    fn perturbed_point_is_off_surface() {
        let ps = planted();
        let p = &ps.generic_points[0];
        let mut q = p.clone();
        q.coords[0] = ProjPoint::affine(2);
        assert!(!ps.surface.contains(&q));
        let s = p.clone();
        // Rescaled coordinates normalize to the same point.
        let r = SurfacePoint::new(ProjPoint::from_i64(3, 3).unwrap(), s.coords[1].clone(), s.coords[2].clone());
        assert_eq!(ps.surface.contains(&r), ps.surface.contains(&SurfacePoint::new(ProjPoint::affine(1), s.coords[1].clone(), s.coords[2].clone())));
    }

    #[test]
    fn orbit_word_then_reverse_returns() {
        let ps = planted();
        let p = &ps.generic_points[1];
        let w = [1u8, 3, 2, 1, 2, 3, 1];
        let mut full = w.to_vec();
        full.extend(w.iter().rev());
        let o = ps.surface.orbit(p, &full, DEFAULT_GUARD_BITS).unwrap();
        assert_eq!(o.points.last().unwrap(), p);
    }

    #[test]
    fn orbit_respects_bit_guard() {
        let ps = planted();
        let word = [1u8, 2, 3].repeat(30);
        let o = ps.surface.orbit(&ps.generic_points[0], &word, 2000).unwrap();
        assert!(o.guard_hit);
        assert!(o.points.len() < word.len() + 1);
    }

    #[test]
    fn ns_action_matrices() {
        assert_eq!(ns_action(1).rows(), vec![vec![-1, 0, 0], vec![2, 1, 0], vec![2, 0, 1]]);
        let lat = GramLattice::wehler();
        for l in 1..=3 {
            let m = ns_action(l);
            assert!(lat.is_isometry(&m));
            assert!(m.mul(&m).unwrap().is_identity());
        }
    }

    #[test]
    fn json_round_trips() {
        let ps = planted();
        let s2 = WehlerSurface::from_json(&ps.surface.to_json()).unwrap();
        assert_eq!(s2, ps.surface);
        let p = &ps.generic_points[2];
        assert_eq!(SurfacePoint::from_json(&p.to_json()).unwrap(), *p);
        let err = SurfacePoint::from_json(r#"{"x":["1","2"],"y":["a","1"],"z":["0","1"]}"#).unwrap_err();
        assert!(err.to_string().contains('y'));
    }
}
