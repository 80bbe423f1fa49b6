//! Hyperboloid model of the unit ample classes, the fundamental chamber of
//! the reflection group, and the generator coding of boundary rays.

use std::fmt;
use std::str::FromStr;

use rug::Rational;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::{GramLattice, IntMatrix, LatticeError};

/// Generator index, 1-based as in the word notation "1,2,3".
pub type Letter = u8;

/// Pairings above `-WALL_EPS` (for mass-normalized vectors) count as
/// satisfying a wall inequality.
pub const WALL_EPS: f64 = 1e-12;
/// Angular distance below which a float direction is declared a cusp. The
/// chord is a square root of a pairing, so roundoff alone puts exact cusp
/// directions near 1e-8.
pub const CUSP_ANGLE: f64 = 1e-6;
/// Largest |⟨w, w⟩| of a mass-1 target treated as null by the coding.
pub const NULL_DRIFT: f64 = 1e-8;
/// Largest coordinate of an integral null ray considered by cusp recognition.
pub const CUSP_HEIGHT_BOUND: i64 = 1_000_000;
/// Coding stops when the pulled-back frame is this much magnified; beyond it
/// f64 carries no information about the target.
pub const PRECISION_LIMIT: f64 = 1e12;
/// Alternating runs of at least this many letters are recorded as cusp
/// excursions.
pub const EXCURSION_MIN_LEN: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HyperbolicError {
    #[error("vector is not in the positive cone")]
    NonPositiveVector,
    #[error("target has non-positive mass or non-finite coordinates")]
    NotReducible,
    #[error("invalid boundary point: {0}")]
    InvalidBoundaryPoint(String),
    #[error("invalid chamber: {0}")]
    InvalidChamber(String),
    #[error("malformed word: {0}")]
    BadWord(String),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

/// A point of the blown-up boundary: an irrational null ray, or a rational
/// null class with a positive scale. For rank 3 the transverse direction at
/// a cusp carries no choice and is not stored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BoundaryPoint {
    Irrational {
        dir: Vec<f64>,
    },
    Cusp {
        #[serde(rename = "E")]
        e: Vec<i64>,
        scale: f64,
    },
}

impl BoundaryPoint {
    /// The class as a real vector (scale·E for cusps).
    pub fn class(&self) -> Vec<f64> {
        match self {
            BoundaryPoint::Irrational { dir } => dir.clone(),
            BoundaryPoint::Cusp { e, scale } => e.iter().map(|&x| x as f64 * scale).collect(),
        }
    }

    pub fn validate(&self, lattice: &GramLattice, chamber: &Chamber) -> Result<(), HyperbolicError> {
        let bad = |s: &str| Err(HyperbolicError::InvalidBoundaryPoint(s.to_string()));
        match self {
            BoundaryPoint::Irrational { dir } => {
                if dir.len() != lattice.rank() || dir.iter().any(|x| !x.is_finite()) {
                    return bad("direction has wrong length or non-finite entries");
                }
                let m = lattice.mass(dir);
                if m <= 0.0 {
                    return bad("direction has non-positive mass");
                }
                let u = lattice.mass_normalize(dir);
                if lattice.pair_f64(&u, &u).abs() > 1e-10 {
                    return bad("direction is not null");
                }
                let coding = chamber.code_vector(lattice, dir, 200, CUSP_ANGLE)?;
                if let CodingEnd::Cusp { .. } = coding.end {
                    return bad("direction is within the cusp threshold of a rational null ray");
                }
                Ok(())
            }
            BoundaryPoint::Cusp { e, scale } => {
                if e.len() != lattice.rank() {
                    return bad("E has wrong length");
                }
                if !(*scale > 0.0 && scale.is_finite()) {
                    return bad("scale must be positive");
                }
                if e.iter().all(|&x| x == 0) || lattice.pair_int(e, e)? != 0 {
                    return bad("E is not a nonzero null vector");
                }
                if lattice.pair_int(lattice.ample_class(), e)? <= 0 {
                    return bad("E is not in the closure of the positive cone");
                }
                let g = e.iter().fold(0i64, |g, &x| gcd(g, x.abs()));
                if g != 1 {
                    return bad("E is not primitive");
                }
                Ok(())
            }
        }
    }
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Maximal run alternating between two generators.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Excursion {
    pub start: usize,
    pub len: usize,
    pub pair: (Letter, Letter),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GeneratorWord {
    pub letters: Vec<Letter>,
    pub excursions: Vec<Excursion>,
    pub displacements: Vec<f64>,
}

impl GeneratorWord {
    pub fn from_letters(letters: Vec<Letter>) -> Self {
        let excursions = find_excursions(&letters);
        Self { letters, excursions, displacements: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.letters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.letters.is_empty()
    }

    pub fn is_reduced(&self) -> bool {
        self.letters.windows(2).all(|w| w[0] != w[1])
    }

    /// Splits the word into blocks: each excursion is one block, every other
    /// letter is its own block. Returns the end index of each block.
    pub fn block_ends(&self) -> Vec<usize> {
        let mut ends = Vec::new();
        let mut i = 0;
        let mut exc = self.excursions.iter().peekable();
        while i < self.letters.len() {
            match exc.peek() {
                Some(e) if e.start == i => {
                    i += e.len;
                    exc.next();
                }
                _ => i += 1,
            }
            ends.push(i);
        }
        ends
    }
}

impl fmt::Display for GeneratorWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", format_letters(&self.letters))
    }
}

impl FromStr for GeneratorWord {
    type Err = HyperbolicError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(Self::from_letters(parse_letters(s)?))
    }
}

pub fn format_letters(letters: &[Letter]) -> String {
    letters.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(",")
}

pub fn parse_letters(s: &str) -> Result<Vec<Letter>, HyperbolicError> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<Letter>()
                .ok()
                .filter(|&l| l >= 1)
                .ok_or_else(|| HyperbolicError::BadWord(format!("bad letter {t:?}")))
        })
        .collect()
}

fn find_excursions(letters: &[Letter]) -> Vec<Excursion> {
    let mut out = Vec::new();
    let mut start = 0;
    while start + 1 < letters.len() {
        let (a, b) = (letters[start], letters[start + 1]);
        let mut end = start + 2;
        while end < letters.len() && letters[end] == letters[end - 2] && a != b {
            end += 1;
        }
        let len = end - start;
        if a != b && len >= EXCURSION_MIN_LEN {
            out.push(Excursion { start, len, pair: (a.min(b), a.max(b)) });
            start = end;
        } else {
            start += 1;
        }
    }
    out
}

/// A cusp of the fundamental chamber together with a generator of its
/// translation subgroup.
#[derive(Clone, Debug)]
pub struct ChamberCusp {
    pub class: Vec<i64>,
    pub walls: [usize; 2],
    pub translation: Vec<Letter>,
    pub xi: Vec<Rational>,
    pub ns_norm_sq: Rational,
}

/// Fundamental chamber {v : ⟨v, mᵢ⟩ ≥ 0} of a reflection group with its
/// reflections and cusps.
#[derive(Clone, Debug)]
pub struct Chamber {
    walls: Vec<Vec<i64>>,
    wall_norms: Vec<f64>,
    reflections: Vec<IntMatrix>,
    cusps: Vec<ChamberCusp>,
}

/// How a coding terminated.
#[derive(Clone, Debug, PartialEq)]
pub enum CodingEnd {
    /// Reduced vector satisfies every wall inequality strictly.
    Interior,
    /// Target is (numerically) the ray of `class` = word·(multiple·cusp).
    Cusp { index: usize, class: Vec<i64>, multiple: f64 },
    MaxLetters,
    PrecisionLimit,
}

#[derive(Clone, Debug)]
pub struct Coding {
    pub word: GeneratorWord,
    /// Pulled-back target, mass-normalized.
    pub reduced: Vec<f64>,
    pub end: CodingEnd,
}

impl Coding {
    pub fn is_complete(&self) -> bool {
        matches!(self.end, CodingEnd::Interior | CodingEnd::Cusp { .. })
    }
}

impl Chamber {
    pub fn new(
        lattice: &GramLattice,
        walls: Vec<Vec<i64>>,
        cusps: Vec<(Vec<i64>, Vec<Letter>)>,
    ) -> Result<Self, HyperbolicError> {
        let bad = |s: String| HyperbolicError::InvalidChamber(s);
        let mut reflections = Vec::new();
        let mut wall_norms = Vec::new();
        let w0 = lattice.basepoint();
        for m in &walls {
            let mm = lattice.pair_int(m, m)?;
            if mm >= 0 {
                return Err(bad(format!("wall normal {m:?} is not spacelike")));
            }
            let mf: Vec<f64> = m.iter().map(|&x| x as f64).collect();
            if lattice.pair_f64(w0, &mf) <= 0.0 {
                return Err(bad(format!("reference class is not inside wall {m:?}")));
            }
            let s = lattice.reflection(m)?;
            if !lattice.is_isometry(&s) {
                return Err(bad(format!("reflection in {m:?} is not an isometry")));
            }
            reflections.push(s);
            wall_norms.push((-(mm as f64)).sqrt());
        }
        let mut chamber = Self { walls, wall_norms, reflections, cusps: Vec::new() };
        for (class, translation) in cusps {
            if lattice.pair_int(&class, &class)? != 0 {
                return Err(bad(format!("cusp {class:?} is not null")));
            }
            let on: Vec<usize> = (0..chamber.walls.len())
                .filter(|&i| lattice.pair_int(&class, &chamber.walls[i]).unwrap_or(1) == 0)
                .collect();
            if on.len() < 2 {
                return Err(bad(format!("cusp {class:?} lies on fewer than two walls")));
            }
            if (0..chamber.walls.len()).any(|i| lattice.pair_int(&class, &chamber.walls[i]).unwrap_or(-1) < 0) {
                return Err(bad(format!("cusp {class:?} is outside the chamber")));
            }
            let mat = chamber.word_matrix(&translation)?;
            let xi = lattice.parabolic_xi(&mat, &class)?;
            let ns_norm_sq = -lattice.gram_pair(&xi, &xi)?;
            if ns_norm_sq == 0 {
                return Err(bad(format!("translation at cusp {class:?} is trivial")));
            }
            chamber.cusps.push(ChamberCusp { class, walls: [on[0], on[1]], translation, xi, ns_norm_sq });
        }
        Ok(chamber)
    }

    /// Wall normals m₁ = (−1,1,1), m₂ = (1,−1,1), m₃ = (1,1,−1) with cusps
    /// h₁, h₂, h₃ and their translations σ₂σ₃, σ₁σ₃, σ₁σ₂.
    pub fn wehler(lattice: &GramLattice) -> Self {
        Self::new(
            lattice,
            vec![vec![-1, 1, 1], vec![1, -1, 1], vec![1, 1, -1]],
            vec![
                (vec![1, 0, 0], vec![2, 3]),
                (vec![0, 1, 0], vec![1, 3]),
                (vec![0, 0, 1], vec![1, 2]),
            ],
        )
        .expect("Wehler chamber is valid")
    }

    pub fn walls(&self) -> &[Vec<i64>] {
        &self.walls
    }

    pub fn reflections(&self) -> &[IntMatrix] {
        &self.reflections
    }

    pub fn reflection(&self, letter: Letter) -> &IntMatrix {
        &self.reflections[letter as usize - 1]
    }

    pub fn cusps(&self) -> &[ChamberCusp] {
        &self.cusps
    }

    pub fn num_generators(&self) -> usize {
        self.reflections.len()
    }

    /// Pullback matrix of the automorphism that applies the letters in
    /// order: M_{w₁}·M_{w₂}⋯M_{wₖ}.
    pub fn word_matrix(&self, letters: &[Letter]) -> Result<IntMatrix, HyperbolicError> {
        let n = self.reflections.first().map_or(0, |r| r.dim());
        let mut acc = IntMatrix::identity(n);
        for &l in letters {
            if l == 0 || l as usize > self.reflections.len() {
                return Err(HyperbolicError::BadWord(format!("letter {l} out of range")));
            }
            acc = acc.mul(self.reflection(l))?;
        }
        Ok(acc)
    }

    /// Normalized wall pairings ⟨v, mᵢ⟩/√(−⟨mᵢ, mᵢ⟩).
    pub fn wall_pairings(&self, lattice: &GramLattice, v: &[f64]) -> Vec<f64> {
        self.walls
            .iter()
            .zip(&self.wall_norms)
            .map(|(m, n)| {
                let mf: Vec<f64> = m.iter().map(|&x| x as f64).collect();
                lattice.pair_f64(v, &mf) / n
            })
            .collect()
    }

    fn most_violated(&self, pairings: &[f64], eps: f64) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, &p) in pairings.iter().enumerate() {
            if p < -eps && best.is_none_or(|(_, b)| p < b) {
                best = Some((i, p));
            }
        }
        best.map(|(i, _)| i)
    }

    /// Reduces a real target (null or positive) into the chamber by
    /// reflecting in the most violated wall; ties go to the smallest index.
    /// `cusp_angle` is the angular distance (visual metric from ω₀) below
    /// which the target is declared to be a chamber-cusp image.
    pub fn code_vector(
        &self,
        lattice: &GramLattice,
        target: &[f64],
        max_letters: usize,
        cusp_angle: f64,
    ) -> Result<Coding, HyperbolicError> {
        if target.len() != lattice.rank() || target.iter().any(|x| !x.is_finite()) {
            return Err(HyperbolicError::NotReducible);
        }
        let mass0 = lattice.mass(target);
        if !(mass0 > 0.0) {
            return Err(HyperbolicError::NotReducible);
        }
        let mut w: Vec<f64> = target.iter().map(|x| x / mass0).collect();
        // Reflections amplify roundoff transverse to the cone by up to λ per
        // letter, so null targets are pushed back onto the cone each step.
        let null_target = lattice.pair_f64(&w, &w).abs() <= NULL_DRIFT;
        // The original (mass-1) target equals scale · P · w.
        let mut scale = 1.0;
        let mut prefix = IntMatrix::identity(lattice.rank());
        let mut letters: Vec<Letter> = Vec::new();
        let end = loop {
            if let Some(end) = self.recognize_cusp(lattice, &w, scale, &prefix, cusp_angle) {
                break end;
            }
            let pairings = self.wall_pairings(lattice, &w);
            let Some(i) = self.most_violated(&pairings, WALL_EPS) else {
                break CodingEnd::Interior;
            };
            if letters.len() >= max_letters {
                break CodingEnd::MaxLetters;
            }
            if 1.0 / scale > PRECISION_LIMIT {
                break CodingEnd::PrecisionLimit;
            }
            let next = match prefix.mul(&self.reflections[i]) {
                Ok(p) => p,
                Err(_) => break CodingEnd::PrecisionLimit,
            };
            prefix = next;
            w = self.reflections[i].apply_f64(&w);
            let m = lattice.mass(&w);
            if !(m > 0.0) {
                return Err(HyperbolicError::NotReducible);
            }
            w.iter_mut().for_each(|x| *x /= m);
            if null_target {
                renull(lattice, &mut w);
            }
            scale *= m;
            letters.push(i as Letter + 1);
        };
        let mut word = GeneratorWord::from_letters(letters);
        word.displacements = displacement_sequence(lattice, self, &word, target);
        Ok(Coding { word, reduced: w, end })
    }

    /// Checks whether the pulled-back vector sits on a chamber cusp within
    /// the angular threshold, measured in the pulled-back frame. Measuring
    /// in the original frame would match every deep cusp image, since their
    /// horoballs shrink like the inverse square of the mass.
    fn recognize_cusp(
        &self,
        lattice: &GramLattice,
        w: &[f64],
        scale: f64,
        prefix: &IntMatrix,
        cusp_angle: f64,
    ) -> Option<CodingEnd> {
        for (index, cusp) in self.cusps.iter().enumerate() {
            let c: Vec<f64> = cusp.class.iter().map(|&x| x as f64).collect();
            // Chord² between mass-1 null rays u, v is 2⟨u, v⟩.
            let pair = lattice.pair_f64(w, &c).max(0.0) / lattice.mass(&c);
            let chord = (2.0 * pair).sqrt();
            let angle = 2.0 * (chord / 2.0).min(1.0).asin();
            if angle >= cusp_angle {
                continue;
            }
            let class = prefix.apply(&cusp.class).ok()?;
            if class.iter().any(|x| x.abs() > CUSP_HEIGHT_BOUND) {
                continue;
            }
            let cf: Vec<f64> = class.iter().map(|&x| x as f64).collect();
            let mass_c = lattice.mass(&cf);
            return Some(CodingEnd::Cusp { index, class, multiple: 1.0 / (mass_c * scale) });
        }
        None
    }

    /// Number of further letters continuing an alternating excursion in
    /// `pair` from the mass-1 null vector `reduced`, whose last letter was
    /// `last`, counted up to `cap`.
    pub fn excursion_tail(&self, lattice: &GramLattice, reduced: &[f64], last: Letter, pair: (Letter, Letter), cap: usize) -> usize {
        let mut w = reduced.to_vec();
        let mut last = last;
        let mut count = 0;
        while count < cap {
            let want = if last == pair.0 { pair.1 } else { pair.0 };
            match self.most_violated(&self.wall_pairings(lattice, &w), WALL_EPS) {
                Some(i) if i as Letter + 1 == want => {}
                _ => break,
            }
            w = self.reflections[want as usize - 1].apply_f64(&w);
            let m = lattice.mass(&w);
            if !(m > 0.0) {
                break;
            }
            w.iter_mut().for_each(|x| *x /= m);
            renull(lattice, &mut w);
            last = want;
            count += 1;
        }
        count
    }

    /// Exact reduction of an integral class (null or positive).
    pub fn code_integral(
        &self,
        lattice: &GramLattice,
        target: &[i64],
        max_letters: usize,
    ) -> Result<Coding, HyperbolicError> {
        if lattice.pair_int(lattice.ample_class(), target)? <= 0 || lattice.pair_int(target, target)? < 0 {
            return Err(HyperbolicError::NotReducible);
        }
        let mut w = target.to_vec();
        let mut letters = Vec::new();
        let end = loop {
            let pairings: Vec<f64> = self
                .walls
                .iter()
                .zip(&self.wall_norms)
                .map(|(m, n)| lattice.pair_int(&w, m).map(|p| p as f64 / n))
                .collect::<Result<_, _>>()?;
            let Some(i) = self.most_violated(&pairings, 0.0) else {
                break self.integral_cusp(lattice, &w, &letters)?;
            };
            if letters.len() >= max_letters {
                break CodingEnd::MaxLetters;
            }
            w = self.reflections[i].apply(&w)?;
            letters.push(i as Letter + 1);
        };
        let wf: Vec<f64> = w.iter().map(|&x| x as f64).collect();
        let tf: Vec<f64> = target.iter().map(|&x| x as f64).collect();
        let mut word = GeneratorWord::from_letters(letters);
        word.displacements = displacement_sequence(lattice, self, &word, &tf);
        Ok(Coding { word, reduced: lattice.mass_normalize(&wf), end })
    }

    fn integral_cusp(&self, lattice: &GramLattice, w: &[i64], letters: &[Letter]) -> Result<CodingEnd, HyperbolicError> {
        if lattice.pair_int(w, w)? != 0 {
            return Ok(CodingEnd::Interior);
        }
        for (index, cusp) in self.cusps.iter().enumerate() {
            let k = cusp.class.iter().position(|&x| x != 0).unwrap();
            if w[k] % cusp.class[k] != 0 {
                continue;
            }
            let mult = w[k] / cusp.class[k];
            if mult > 0 && w.iter().zip(&cusp.class).all(|(&a, &b)| a == mult * b) {
                let class = self.word_matrix(letters)?.apply(&cusp.class)?;
                return Ok(CodingEnd::Cusp { index, class, multiple: mult as f64 });
            }
        }
        Err(HyperbolicError::InvalidChamber(format!("null class {w:?} in the chamber is not a known cusp")))
    }

    pub fn code_boundary_ray(
        &self,
        lattice: &GramLattice,
        target: &BoundaryPoint,
        max_letters: usize,
    ) -> Result<Coding, HyperbolicError> {
        match target {
            BoundaryPoint::Irrational { dir } => self.code_vector(lattice, dir, max_letters, CUSP_ANGLE),
            BoundaryPoint::Cusp { e, .. } => self.code_integral(lattice, e, max_letters),
        }
    }
}

/// cosh d(u, v) = ⟨u, v⟩/√(⟨u,u⟩⟨v,v⟩).
pub fn hyp_distance(lattice: &GramLattice, u: &[f64], v: &[f64]) -> Result<f64, HyperbolicError> {
    let uu = lattice.pair_f64(u, u);
    let vv = lattice.pair_f64(v, v);
    if uu <= 0.0 || vv <= 0.0 || lattice.mass(u) <= 0.0 || lattice.mass(v) <= 0.0 {
        return Err(HyperbolicError::NonPositiveVector);
    }
    let c = lattice.pair_f64(u, v) / (uu * vv).sqrt();
    Ok(c.max(1.0).acosh())
}

/// ⟨v, E⟩ for a unit class v; v lies in the horoball H_{E,c} iff this is < c.
pub fn horoball_depth(lattice: &GramLattice, v: &[f64], e: &[f64]) -> f64 {
    lattice.pair_f64(v, e)
}

/// Default horoball parameter: a fixed fraction of the smallest pairing of
/// ω₀ with a chamber cusp.
pub fn default_horoball_c(lattice: &GramLattice, chamber: &Chamber) -> f64 {
    chamber
        .cusps()
        .iter()
        .map(|c| {
            let cf: Vec<f64> = c.class.iter().map(|&x| x as f64).collect();
            lattice.mass(&cf)
        })
        .fold(f64::INFINITY, f64::min)
        * 0.05
}

/// Signed distances between successive projections of the chamber centres
/// γ₁⋯γᵢ·ω₀ onto the geodesic from ω₀ to the target, one per block of the
/// word (a cusp excursion counts as a single block).
pub fn displacement_sequence(lattice: &GramLattice, chamber: &Chamber, word: &GeneratorWord, target: &[f64]) -> Vec<f64> {
    if word.is_empty() {
        return Vec::new();
    }
    let a = lattice.mass_normalize(target);
    let w0 = lattice.basepoint();
    let b: Vec<f64> = w0.iter().zip(&a).map(|(w, x)| 2.0 * w - x).collect();
    let param = |x: &[f64]| 0.5 * (lattice.pair_f64(x, &b) / lattice.pair_f64(x, &a)).ln();
    let mut centre = w0.to_vec();
    let mut out = Vec::new();
    let mut t_prev = param(&centre);
    // Centres are pushed forward by the prefix P_k = M_{a1}⋯M_{ak}; apply
    // letters right-to-left from the current prefix.
    let mut prefix = IntMatrix::identity(lattice.rank());
    let mut done = 0;
    for end in word.block_ends() {
        for &l in &word.letters[done..end] {
            prefix = match prefix.mul(chamber.reflection(l)) {
                Ok(p) => p,
                Err(_) => return out,
            };
        }
        done = end;
        centre = prefix.apply_f64(w0);
        let t = param(&centre);
        if !t.is_finite() {
            break;
        }
        out.push(t - t_prev);
        t_prev = t;
    }
    out
}

/// Empirical constants (δ, C₀) with δ·N − C₀ ≤ λ_a + ⋯ + λ_{a+N−1} for all
/// windows: δ is the mean displacement and C₀ the worst window deficit.
pub fn fit_displacement(displacements: &[f64]) -> (f64, f64) {
    let n = displacements.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let delta = displacements.iter().sum::<f64>() / n as f64;
    let mut c0 = 0.0f64;
    for a in 0..n {
        let mut s = 0.0;
        for (k, x) in displacements[a..].iter().enumerate() {
            s += x;
            c0 = c0.max(delta * (k + 1) as f64 - s);
        }
    }
    (delta, c0)
}

/// Moves a mass-1 vector along ω₀ onto the null cone (no-op when the
/// correction is not real).
fn renull(lattice: &GramLattice, w: &mut [f64]) {
    let q = lattice.pair_f64(w, w);
    let m = lattice.mass(w);
    let disc = m * m - q;
    if disc < 0.0 {
        return;
    }
    let t = -q / (m + disc.sqrt());
    for (x, b) in w.iter_mut().zip(lattice.basepoint()) {
        *x += t * b;
    }
    let m = lattice.mass(w);
    w.iter_mut().for_each(|x| *x /= m);
}

/// T·v for diagonal coordinates v (see `diagonalize_form`).
pub fn from_diagonal(lattice: &GramLattice, v: &[f64]) -> Vec<f64> {
    (diagonalize_form(lattice) * DVector::from_column_slice(v)).iter().copied().collect()
}

/// Basis change T with Tᵀ·G·T = diag(1, −1, …, −1) and first column ω₀.
pub fn diagonalize_form(lattice: &GramLattice) -> DMatrix<f64> {
    let n = lattice.rank();
    let mut cols: Vec<Vec<f64>> = vec![lattice.basepoint().to_vec()];
    for j in 0..n {
        if cols.len() == n {
            break;
        }
        let mut v = vec![0.0; n];
        v[j] = 1.0;
        // Two Gram–Schmidt passes for stability.
        for _ in 0..2 {
            let c0 = lattice.pair_f64(&v, &cols[0]);
            for (x, y) in v.iter_mut().zip(&cols[0]) {
                *x -= c0 * y;
            }
            for c in &cols[1..] {
                let ck = lattice.pair_f64(&v, c);
                for (x, y) in v.iter_mut().zip(c) {
                    *x += ck * y;
                }
            }
        }
        let nn = -lattice.pair_f64(&v, &v);
        if nn > 1e-10 {
            let s = nn.sqrt();
            cols.push(v.iter().map(|x| x / s).collect());
        }
    }
    DMatrix::from_fn(n, n, |i, j| cols[j][i])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (GramLattice, Chamber) {
        let lat = GramLattice::wehler();
        let ch = Chamber::wehler(&lat);
        (lat, ch)
    }

    #[test]
    fn chamber_walls_and_cusps_are_exact() {
        let (lat, ch) = setup();
        for m in ch.walls() {
            assert!(lat.pair_int(lat.ample_class(), m).unwrap() > 0);
        }
        for cusp in ch.cusps() {
            assert_eq!(lat.pair_int(&cusp.class, &cusp.class).unwrap(), 0);
            let zeros = ch.walls().iter().filter(|m| lat.pair_int(&cusp.class, m).unwrap() == 0).count();
            assert_eq!(zeros, 2);
            assert_eq!(cusp.ns_norm_sq, 4);
        }
    }

    #[test]
    fn hyp_distance_basics() {
        let (lat, ch) = setup();
        let w0 = lat.basepoint().to_vec();
        assert_eq!(hyp_distance(&lat, &w0, &w0).unwrap(), 0.0);
        let s1w0 = ch.reflection(1).apply_f64(&w0);
        let d1 = hyp_distance(&lat, &w0, &s1w0).unwrap();
        let d2 = hyp_distance(&lat, &s1w0, &w0).unwrap();
        assert_eq!(d1, d2);
        assert!(d1 > 0.0);
        assert_eq!(hyp_distance(&lat, &w0, &[1.0, 0.0, 0.0]), Err(HyperbolicError::NonPositiveVector));
    }

    #[test]
    fn hyperbolic_displacement_is_near_log_lambda() {
        let (lat, ch) = setup();
        let w0 = lat.basepoint().to_vec();
        let g = ch.word_matrix(&[1, 2, 3]).unwrap();
        let d = hyp_distance(&lat, &w0, &g.apply_f64(&w0)).unwrap();
        let log_lambda = (9.0 + 4.0 * 5f64.sqrt()).ln();
        assert!((d - log_lambda).abs() < 1.0, "d = {d}, log λ = {log_lambda}");
    }

    #[test]
    fn horoball_depth_examples() {
        let (lat, _) = setup();
        let w0 = lat.basepoint().to_vec();
        let e = [0.0, 0.0, 1.0];
        assert!((horoball_depth(&lat, &w0, &e) - 4.0 / 12f64.sqrt()).abs() < 1e-12);
        assert!((horoball_depth(&lat, &w0, &[0.0, 0.0, 2.0]) - 2.0 * horoball_depth(&lat, &w0, &e)).abs() < 1e-12);
        // Along the geodesic from ω₀ toward h₃ the depth decreases.
        let a = lat.mass_normalize(&e);
        let b: Vec<f64> = w0.iter().zip(&a).map(|(w, x)| 2.0 * w - x).collect();
        let mut last = f64::INFINITY;
        for k in 0..20 {
            let t = k as f64 * 0.5;
            let p: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (t.exp() * x + (-t).exp() * y) / 2.0).collect();
            let d = horoball_depth(&lat, &p, &e);
            assert!(d < last);
            last = d;
        }
    }

    #[test]
    fn coding_of_the_h3_cusp_is_empty() {
        let (lat, ch) = setup();
        let c = ch.code_boundary_ray(&lat, &BoundaryPoint::Cusp { e: vec![0, 0, 1], scale: 1.0 }, 60).unwrap();
        assert!(c.word.is_empty());
        assert_eq!(c.end, CodingEnd::Cusp { index: 2, class: vec![0, 0, 1], multiple: 1.0 });
    }

    #[test]
    fn coding_of_a_reflected_interior_ray_is_one_letter() {
        let (lat, ch) = setup();
        let v = ch.reflection(1).apply_f64(&[1.0, 2.0, 3.0]);
        let c = ch.code_vector(&lat, &v, 60, CUSP_ANGLE).unwrap();
        assert_eq!(c.word.to_string(), "1");
        assert_eq!(c.end, CodingEnd::Interior);
    }

    #[test]
    fn irrational_coding_runs_to_the_budget() {
        let (lat, ch) = setup();
        let t = diagonalize_form(&lat);
        let d = nalgebra::DVector::from_vec(vec![1.0, 0.3f64.cos(), 0.3f64.sin()]);
        let target: Vec<f64> = (&t * d).iter().copied().collect();
        let c = ch.code_vector(&lat, &target, 25, CUSP_ANGLE).unwrap();
        assert_eq!(c.word.len(), 25);
        assert_eq!(c.end, CodingEnd::MaxLetters);
        assert!(c.word.is_reduced());
        assert!(ch.wall_pairings(&lat, &c.reduced).iter().filter(|&&p| p < -1e-10).count() <= 1);
    }

    #[test]
    fn integral_cusp_is_recognized_through_its_word() {
        let (lat, ch) = setup();
        let e = ch.word_matrix(&[3, 1, 2, 1]).unwrap().apply(&[0, 0, 1]).unwrap();
        let c = ch.code_integral(&lat, &e, 60).unwrap();
        match c.end {
            CodingEnd::Cusp { class, .. } => assert_eq!(class, e),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn diagonalization() {
        let (lat, _) = setup();
        let t = diagonalize_form(&lat);
        let g = lat.gram().to_f64();
        let d = t.transpose() * g * &t;
        for i in 0..3 {
            for j in 0..3 {
                let want = if i != j { 0.0 } else if i == 0 { 1.0 } else { -1.0 };
                assert!((d[(i, j)] - want).abs() < 1e-12);
            }
        }
        assert_eq!(t, diagonalize_form(&lat));
        for k in 0..3 {
            assert!((t[(k, 0)] - lat.basepoint()[k]).abs() < 1e-15);
        }
        let th = 1.234f64;
        let v: Vec<f64> = (&t * nalgebra::DVector::from_vec(vec![1.0, th.cos(), th.sin()])).iter().copied().collect();
        assert!(lat.pair_f64(&v, &v).abs() < 1e-10);
    }

    #[test]
    fn word_parsing() {
        let w: GeneratorWord = "1,2,1,3".parse().unwrap();
        assert_eq!(w.letters, vec![1, 2, 1, 3]);
        assert_eq!(w.to_string(), "1,2,1,3");
        assert!("1,x".parse::<GeneratorWord>().is_err());
        assert!("0".parse::<GeneratorWord>().is_err());
    }

    #[test]
    fn excursions_and_blocks() {
        let w = GeneratorWord::from_letters(vec![3, 1, 2, 1, 2, 1, 3, 2]);
        assert_eq!(w.excursions, vec![Excursion { start: 1, len: 5, pair: (1, 2) }]);
        assert_eq!(w.block_ends(), vec![1, 6, 7, 8]);
    }

    #[test]
    fn boundary_point_json() {
        let p: BoundaryPoint = serde_json::from_str(r#"{"kind":"cusp","E":[0,0,1],"scale":1.0}"#).unwrap();
        assert_eq!(p, BoundaryPoint::Cusp { e: vec![0, 0, 1], scale: 1.0 });
        let q: BoundaryPoint = serde_json::from_str(r#"{"kind":"irrational","dir":[1.0,0.5,0.25]}"#).unwrap();
        assert_eq!(q, BoundaryPoint::Irrational { dir: vec![1.0, 0.5, 0.25] });
        let (lat, ch) = setup();
        assert!(p.validate(&lat, &ch).is_ok());
        assert!(BoundaryPoint::Cusp { e: vec![0, 0, 2], scale: 1.0 }.validate(&lat, &ch).is_err());
        assert!(BoundaryPoint::Cusp { e: vec![1, 1, 0], scale: 1.0 }.validate(&lat, &ch).is_err());
        assert!(q.validate(&lat, &ch).is_err());
    }
}
