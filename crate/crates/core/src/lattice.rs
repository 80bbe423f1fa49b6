//! Exact arithmetic in a Néron–Severi lattice of signature (1, ρ−1).
//!
//! Integer matrices act on column vectors of coordinates in the lattice
//! basis. Every identity that can be stated over ℤ or ℚ is checked exactly;
//! floating point is only used for spectral data (eigenvalues and eigen-rays
//! of hyperbolic isometries, operator norms).

use std::fmt;

use rug::{Complete, Integer, Rational};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Orders up to this bound are detected as finite.
pub const FINITE_ORDER_BOUND: u32 = 24;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatticeError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("gram matrix is not symmetric")]
    NotSymmetric,
    #[error("gram matrix has signature ({pos}, {neg}) with {zero} zero eigenvalues; expected (1, {})", .pos + .neg + .zero - 1)]
    BadSignature { pos: usize, neg: usize, zero: usize },
    #[error("reference class does not lie in the positive cone")]
    BasepointNotPositive,
    #[error("matrix does not preserve the intersection form")]
    NotIsometry,
    #[error("parabolic spectrum but no primitive integral fixed null vector")]
    NoIntegralFixedNullVector,
    #[error("isometry is not a parabolic translation for the given null vector")]
    NonParabolicInput,
    #[error("xi does not pair to zero with E")]
    XiNotOrthogonalToE,
    #[error("E is not a nonzero null vector")]
    NotNull,
    #[error("integer overflow in lattice arithmetic")]
    Overflow,
    #[error("result is not integral")]
    NonIntegral,
    #[error("malformed lattice description: {0}")]
    Parse(String),
}

/// Square integer matrix, row-major.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct IntMatrix {
    n: usize,
    data: Vec<i64>,
}

impl fmt::Debug for IntMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.rows()).finish()
    }
}

impl IntMatrix {
    pub fn identity(n: usize) -> Self {
        let mut data = vec![0; n * n];
        for i in 0..n {
            data[i * n + i] = 1;
        }
        Self { n, data }
    }

    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![0; n * n] }
    }

    pub fn from_rows(rows: &[Vec<i64>]) -> Result<Self, LatticeError> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for row in rows {
            if row.len() != n {
                return Err(LatticeError::DimensionMismatch { expected: n, got: row.len() });
            }
            data.extend_from_slice(row);
        }
        Ok(Self { n, data })
    }

    /// Builds a matrix whose j-th column is `cols[j]`, i.e. the image of the
    /// j-th basis vector.
    pub fn from_columns(cols: &[Vec<i64>]) -> Result<Self, LatticeError> {
        let n = cols.len();
        let mut m = Self::zeros(n);
        for (j, col) in cols.iter().enumerate() {
            if col.len() != n {
                return Err(LatticeError::DimensionMismatch { expected: n, got: col.len() });
            }
            for (i, &x) in col.iter().enumerate() {
                m.data[i * n + j] = x;
            }
        }
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> i64 {
        self.data[i * self.n + j]
    }

    pub fn rows(&self) -> Vec<Vec<i64>> {
        self.data.chunks(self.n.max(1)).map(|r| r.to_vec()).collect()
    }

    pub fn column(&self, j: usize) -> Vec<i64> {
        (0..self.n).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Self {
        let n = self.n;
        let mut t = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                t.data[j * n + i] = self.data[i * n + j];
            }
        }
        t
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::identity(self.n)
    }

    pub fn mul(&self, other: &IntMatrix) -> Result<IntMatrix, LatticeError> {
        if self.n != other.n {
            return Err(LatticeError::DimensionMismatch { expected: self.n, got: other.n });
        }
        let n = self.n;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                let mut acc: i128 = 0;
                for k in 0..n {
                    acc += self.get(i, k) as i128 * other.get(k, j) as i128;
                }
                out.data[i * n + j] = i64::try_from(acc).map_err(|_| LatticeError::Overflow)?;
            }
        }
        Ok(out)
    }

    pub fn pow(&self, k: u32) -> Result<IntMatrix, LatticeError> {
        let mut acc = Self::identity(self.n);
        for _ in 0..k {
            acc = acc.mul(self)?;
        }
        Ok(acc)
    }

    pub fn sub_identity(&self) -> IntMatrix {
        let mut m = self.clone();
        for i in 0..self.n {
            m.data[i * self.n + i] -= 1;
        }
        m
    }

    pub fn apply(&self, v: &[i64]) -> Result<Vec<i64>, LatticeError> {
        check_len(self.n, v.len())?;
        (0..self.n)
            .map(|i| {
                let acc: i128 = (0..self.n).map(|k| self.get(i, k) as i128 * v[k] as i128).sum();
                i64::try_from(acc).map_err(|_| LatticeError::Overflow)
            })
            .collect()
    }

    pub fn apply_f64(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| (0..self.n).map(|k| self.get(i, k) as f64 * v[k]).sum())
            .collect()
    }

    pub fn apply_rat(&self, v: &[Rational]) -> Vec<Rational> {
        (0..self.n)
            .map(|i| {
                let mut acc = Rational::new();
                for (k, x) in v.iter().enumerate() {
                    let c = self.get(i, k);
                    if c != 0 {
                        acc += Rational::from(c) * x;
                    }
                }
                acc
            })
            .collect()
    }

    pub fn to_f64(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j) as f64)
    }

    /// Largest singular value.
    pub fn operator_norm(&self) -> f64 {
        self.to_f64().singular_values().max()
    }
}

impl Serialize for IntMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for IntMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let rows = Vec::<Vec<i64>>::deserialize(d)?;
        IntMatrix::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

fn check_len(expected: usize, got: usize) -> Result<(), LatticeError> {
    if expected == got {
        Ok(())
    } else {
        Err(LatticeError::DimensionMismatch { expected, got })
    }
}

pub fn rat_vec(v: &[i64]) -> Vec<Rational> {
    v.iter().map(|&x| Rational::from(x)).collect()
}

/// Scales a nonzero rational vector to the primitive integral vector on the
/// same ray.
pub fn primitive_integral(v: &[Rational]) -> Result<Vec<i64>, LatticeError> {
    let mut den = Integer::from(1);
    for x in v {
        den.lcm_mut(x.denom());
    }
    let ints: Vec<Integer> = v.iter().map(|x| x.numer() * (&den / x.denom()).complete()).collect();
    let mut g = Integer::new();
    for x in &ints {
        g.gcd_mut(x);
    }
    if g.cmp0().is_eq() {
        return Err(LatticeError::NotNull);
    }
    ints.into_iter()
        .map(|x| x.div_exact(&g).to_i64().ok_or(LatticeError::Overflow))
        .collect()
}

/// Basis of the right kernel of a rational matrix given by rows.
pub fn rational_kernel(rows: &[Vec<Rational>], ncols: usize) -> Vec<Vec<Rational>> {
    let mut m: Vec<Vec<Rational>> = rows.to_vec();
    let mut pivots = Vec::new();
    let mut r = 0;
    for c in 0..ncols {
        let Some(p) = (r..m.len()).find(|&i| m[i][c] != 0) else {
            continue;
        };
        m.swap(r, p);
        let inv = m[r][c].clone().recip();
        for x in m[r].iter_mut() {
            *x *= &inv;
        }
        for i in 0..m.len() {
            if i != r && m[i][c] != 0 {
                let f = m[i][c].clone();
                for k in 0..ncols {
                    let t = Rational::from(&f * &m[r][k]);
                    m[i][k] -= t;
                }
            }
        }
        pivots.push(c);
        r += 1;
        if r == m.len() {
            break;
        }
    }
    let free: Vec<usize> = (0..ncols).filter(|c| !pivots.contains(c)).collect();
    free.iter()
        .map(|&f| {
            let mut v = vec![Rational::new(); ncols];
            v[f] = Rational::from(1);
            for (row, &pc) in pivots.iter().enumerate() {
                v[pc] = -m[row][f].clone();
            }
            v
        })
        .collect()
}

/// Classification of an isometry of the lattice.
#[derive(Clone, Debug, PartialEq)]
pub enum IsometryClass {
    FiniteOrder {
        order: u32,
    },
    /// `e` is the primitive integral fixed null class, oriented toward the
    /// reference class. `power` is the smallest exponent making the matrix
    /// unipotent; `xi` is the translation datum of that power.
    Parabolic {
        e: Vec<i64>,
        power: u32,
        xi: Vec<Rational>,
    },
    /// Spectral radius `lambda`; `expanded` and `contracted` are the
    /// mass-normalized eigen-rays for `lambda` and `1/lambda`.
    Hyperbolic {
        lambda: f64,
        expanded: Vec<f64>,
        contracted: Vec<f64>,
    },
}

impl IsometryClass {
    pub fn name(&self) -> &'static str {
        match self {
            IsometryClass::FiniteOrder { .. } => "finite-order",
            IsometryClass::Parabolic { .. } => "parabolic",
            IsometryClass::Hyperbolic { .. } => "hyperbolic",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Isometry {
    pub mat: IntMatrix,
    pub class: IsometryClass,
}

impl Isometry {
    pub fn lambda(&self) -> Option<f64> {
        match &self.class {
            IsometryClass::Hyperbolic { lambda, .. } => Some(*lambda),
            _ => None,
        }
    }

    pub fn fixed_null(&self) -> Option<&[i64]> {
        match &self.class {
            IsometryClass::Parabolic { e, .. } => Some(e),
            _ => None,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct LatticeJson {
    rank: usize,
    gram: Vec<Vec<i64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ample: Option<Vec<i64>>,
}

/// Integral lattice with a form of signature (1, ρ−1) and a reference
/// ample class ω₀ (stored both as an integral class and unit-normalized).
#[derive(Clone, Debug)]
pub struct GramLattice {
    rank: usize,
    gram: IntMatrix,
    ample_class: Vec<i64>,
    basepoint: Vec<f64>,
}

impl GramLattice {
    pub fn new(gram: IntMatrix, ample_class: Vec<i64>) -> Result<Self, LatticeError> {
        let rank = gram.dim();
        check_len(rank, ample_class.len())?;
        if gram != gram.transpose() {
            return Err(LatticeError::NotSymmetric);
        }
        let eig = nalgebra::SymmetricEigen::new(gram.to_f64());
        let scale = eig.eigenvalues.amax().max(1.0);
        let pos = eig.eigenvalues.iter().filter(|&&x| x > 1e-9 * scale).count();
        let neg = eig.eigenvalues.iter().filter(|&&x| x < -1e-9 * scale).count();
        let zero = rank - pos - neg;
        if pos != 1 || zero != 0 {
            return Err(LatticeError::BadSignature { pos, neg, zero });
        }
        let mut lat = Self { rank, gram, ample_class, basepoint: Vec::new() };
        let sq = lat.pair_int(&lat.ample_class, &lat.ample_class)?;
        if sq <= 0 {
            return Err(LatticeError::BasepointNotPositive);
        }
        let norm = (sq as f64).sqrt();
        lat.basepoint = lat.ample_class.iter().map(|&x| x as f64 / norm).collect();
        Ok(lat)
    }

    /// The lattice spanned by h₁, h₂, h₃ on a (2,2,2) surface in (P¹)³.
    pub fn wehler() -> Self {
        let gram = IntMatrix::from_rows(&[vec![0, 2, 2], vec![2, 0, 2], vec![2, 2, 0]]).unwrap();
        Self::new(gram, vec![1, 1, 1]).expect("Wehler lattice is hyperbolic")
    }

    /// Parses `{"rank": r, "gram": [[..]], "ample": [..]}`. Without an
    /// explicit ample class the all-ones vector is used.
    pub fn from_json(s: &str) -> Result<Self, LatticeError> {
        let j: LatticeJson = serde_json::from_str(s).map_err(|e| LatticeError::Parse(e.to_string()))?;
        let gram = IntMatrix::from_rows(&j.gram)?;
        check_len(j.rank, gram.dim())?;
        let ample = j.ample.unwrap_or_else(|| vec![1; j.rank]);
        Self::new(gram, ample)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&LatticeJson {
            rank: self.rank,
            gram: self.gram.rows(),
            ample: Some(self.ample_class.clone()),
        })
        .expect("lattice serializes")
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn gram(&self) -> &IntMatrix {
        &self.gram
    }

    pub fn ample_class(&self) -> &[i64] {
        &self.ample_class
    }

    /// Unit-normalized reference class ω₀.
    pub fn basepoint(&self) -> &[f64] {
        &self.basepoint
    }

    /// vᵀ·G·w over ℚ.
    pub fn gram_pair(&self, v: &[Rational], w: &[Rational]) -> Result<Rational, LatticeError> {
        check_len(self.rank, v.len())?;
        check_len(self.rank, w.len())?;
        let mut acc = Rational::new();
        for i in 0..self.rank {
            if v[i] == 0 {
                continue;
            }
            for j in 0..self.rank {
                let g = self.gram.get(i, j);
                if g != 0 && w[j] != 0 {
                    acc += Rational::from(g) * &v[i] * &w[j];
                }
            }
        }
        Ok(acc)
    }

    pub fn pair_int(&self, v: &[i64], w: &[i64]) -> Result<i64, LatticeError> {
        check_len(self.rank, v.len())?;
        check_len(self.rank, w.len())?;
        let mut acc: i128 = 0;
        for i in 0..self.rank {
            for j in 0..self.rank {
                acc += v[i] as i128 * self.gram.get(i, j) as i128 * w[j] as i128;
            }
        }
        i64::try_from(acc).map_err(|_| LatticeError::Overflow)
    }

    pub fn pair_f64(&self, v: &[f64], w: &[f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.rank {
            for j in 0..self.rank {
                let g = self.gram.get(i, j);
                if g != 0 {
                    acc += v[i] * g as f64 * w[j];
                }
            }
        }
        acc
    }

    /// Pairing with the reference class: M(v) = ⟨ω₀, v⟩.
    pub fn mass(&self, v: &[f64]) -> f64 {
        self.pair_f64(&self.basepoint, v)
    }

    pub fn mass_normalize(&self, v: &[f64]) -> Vec<f64> {
        let m = self.mass(v);
        v.iter().map(|x| x / m).collect()
    }

    /// Exact check of Mᵀ·G·M = G.
    pub fn is_isometry(&self, m: &IntMatrix) -> bool {
        if m.dim() != self.rank {
            return false;
        }
        match m.transpose().mul(&self.gram).and_then(|x| x.mul(m)) {
            Ok(p) => p == self.gram,
            Err(_) => false,
        }
    }

    pub fn classify(&self, m: &IntMatrix) -> Result<Isometry, LatticeError> {
        if !self.is_isometry(m) {
            return Err(LatticeError::NotIsometry);
        }
        // Exact tests first: numerically, a unipotent Jordan block has
        // eigenvalues perturbed by about the cube root of machine epsilon.
        let mut acc = IntMatrix::identity(self.rank);
        for k in 1..=FINITE_ORDER_BOUND {
            acc = match acc.mul(m) {
                Ok(a) => a,
                Err(_) => break,
            };
            if acc.is_identity() {
                return Ok(Isometry { mat: m.clone(), class: IsometryClass::FiniteOrder { order: k } });
            }
        }
        let mut acc = IntMatrix::identity(self.rank);
        for k in 1..=FINITE_ORDER_BOUND {
            acc = match acc.mul(m) {
                Ok(a) => a,
                Err(_) => break,
            };
            let n = acc.sub_identity();
            let cube = n.mul(&n).and_then(|n2| n2.mul(&n));
            if matches!(cube, Ok(ref c) if *c == IntMatrix::zeros(self.rank)) {
                let e = self.fixed_null_vector(&acc)?;
                let xi = self.parabolic_xi(&acc, &e)?;
                return Ok(Isometry {
                    mat: m.clone(),
                    class: IsometryClass::Parabolic { e, power: k, xi },
                });
            }
        }
        let eigs = m.to_f64().complex_eigenvalues();
        let (radius, lead) = eigs
            .iter()
            .map(|z| (z.norm(), *z))
            .fold((0.0f64, nalgebra::Complex::new(0.0, 0.0)), |acc, x| if x.0 > acc.0 { x } else { acc });
        if radius > 1.0 + 1e-4 {
            let lambda = radius;
            let sign = if lead.re < 0.0 { -1.0 } else { 1.0 };
            let expanded = self.eigen_ray(m, sign * lambda)?;
            let contracted = self.eigen_ray(m, sign / lambda)?;
            return Ok(Isometry {
                mat: m.clone(),
                class: IsometryClass::Hyperbolic { lambda, expanded, contracted },
            });
        }
        Err(LatticeError::NoIntegralFixedNullVector)
    }

    /// Mass-normalized real eigenvector for a real eigenvalue, oriented to
    /// positive mass.
    fn eigen_ray(&self, m: &IntMatrix, eigenvalue: f64) -> Result<Vec<f64>, LatticeError> {
        let a = m.to_f64() - DMatrix::identity(self.rank, self.rank) * eigenvalue;
        let svd = a.svd(false, true);
        let vt = svd.v_t.ok_or(LatticeError::NoIntegralFixedNullVector)?;
        let (idx, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc });
        let v: Vec<f64> = vt.row(idx).iter().copied().collect();
        let mass = self.mass(&v);
        Ok(v.iter().map(|x| x / mass).collect())
    }

    /// The isotropic direction inside ker(U − I) for a unipotent U.
    fn fixed_null_vector(&self, u: &IntMatrix) -> Result<Vec<i64>, LatticeError> {
        let rows: Vec<Vec<Rational>> = u.sub_identity().rows().iter().map(|r| rat_vec(r)).collect();
        let kernel = rational_kernel(&rows, self.rank);
        if kernel.is_empty() {
            return Err(LatticeError::NoIntegralFixedNullVector);
        }
        // Gram matrix restricted to the kernel; its radical is the null line.
        let k = kernel.len();
        let restricted: Vec<Vec<Rational>> = (0..k)
            .map(|i| (0..k).map(|j| self.gram_pair(&kernel[i], &kernel[j]).unwrap()).collect())
            .collect();
        let radical = rational_kernel(&restricted, k);
        if radical.len() != 1 {
            return Err(LatticeError::NoIntegralFixedNullVector);
        }
        let mut v = vec![Rational::new(); self.rank];
        for (c, basis) in radical[0].iter().zip(&kernel) {
            for (slot, b) in v.iter_mut().zip(basis) {
                *slot += Rational::from(c * b);
            }
        }
        let mut e = primitive_integral(&v)?;
        if self.pair_int(&self.ample_class, &e)? < 0 {
            e.iter_mut().for_each(|x| *x = -*x);
        }
        if self.pair_int(&e, &e)? != 0 {
            return Err(LatticeError::NoIntegralFixedNullVector);
        }
        Ok(e)
    }

    /// Translation datum ξ of a matrix fixing the null class `e`:
    /// M·v − v ≡ ⟨v, E⟩·ξ (mod E). The returned representative is M·v − v
    /// for the first scaled basis vector with ⟨v, E⟩ = 1; a second choice of
    /// v is used to confirm the result.
    pub fn parabolic_xi(&self, m: &IntMatrix, e: &[i64]) -> Result<Vec<Rational>, LatticeError> {
        check_len(self.rank, m.dim())?;
        check_len(self.rank, e.len())?;
        if e.iter().all(|&x| x == 0) || self.pair_int(e, e)? != 0 {
            return Err(LatticeError::NotNull);
        }
        if m.apply(e)? != e {
            return Err(LatticeError::NonParabolicInput);
        }
        let er = rat_vec(e);
        let ge: Vec<i64> = self.gram.apply(e)?;
        let candidates: Vec<usize> = (0..self.rank).filter(|&j| ge[j] != 0).collect();
        let first = candidates[0];
        let lift = |j: usize| -> Vec<Rational> {
            let mut v = vec![Rational::new(); self.rank];
            v[j] = Rational::from((1, ge[j]));
            v
        };
        let image = |v: &[Rational]| -> Vec<Rational> {
            m.apply_rat(v).into_iter().zip(v).map(|(a, b)| a - b).collect()
        };
        let xi = image(&lift(first));
        if self.gram_pair(&xi, &er)? != 0 {
            return Err(LatticeError::NonParabolicInput);
        }
        // Second lift: v + w with w ⊥ E; differences must lie on the E line.
        let second = if candidates.len() > 1 {
            lift(candidates[1])
        } else {
            let mut v = lift(first);
            if let Some(j) = (0..self.rank).find(|&j| ge[j] == 0) {
                v[j] += Rational::from(1);
            }
            v
        };
        let xi2 = image(&second);
        let diff: Vec<Rational> = xi2.iter().zip(&xi).map(|(a, b)| Rational::from(a - b)).collect();
        if !proportional_to(&diff, &er) {
            return Err(LatticeError::NonParabolicInput);
        }
        // Unipotent translation check: M = exp(n_ξ).
        if self.exp_parabolic_rat(e, &xi)? != rat_matrix(m) {
            return Err(LatticeError::NonParabolicInput);
        }
        Ok(xi)
    }

    /// ‖γ‖²_NS = −⟨ξ, ξ⟩ for a translation γ fixing `e`.
    pub fn ns_norm_sq(&self, m: &IntMatrix, e: &[i64]) -> Result<Rational, LatticeError> {
        let xi = self.parabolic_xi(m, e)?;
        Ok(-self.gram_pair(&xi, &xi)?)
    }

    /// I + n_ξ + ½n_ξ² with n_ξ(v) = ⟨v,E⟩ξ − ⟨v,ξ⟩E.
    pub fn exp_parabolic(&self, e: &[i64], xi: &[Rational]) -> Result<IntMatrix, LatticeError> {
        let cols = self.exp_parabolic_rat(e, xi)?;
        let mut out = IntMatrix::zeros(self.rank);
        for (i, row) in cols.iter().enumerate() {
            for (j, x) in row.iter().enumerate() {
                if *x.denom() != 1 {
                    return Err(LatticeError::NonIntegral);
                }
                out.data[i * self.rank + j] = x.numer().to_i64().ok_or(LatticeError::Overflow)?;
            }
        }
        if !self.is_isometry(&out) {
            return Err(LatticeError::NotIsometry);
        }
        Ok(out)
    }

    /// Rational matrix (rows) of exp(n_ξ).
    fn exp_parabolic_rat(&self, e: &[i64], xi: &[Rational]) -> Result<Vec<Vec<Rational>>, LatticeError> {
        check_len(self.rank, e.len())?;
        check_len(self.rank, xi.len())?;
        let er = rat_vec(e);
        if self.gram_pair(xi, &er)? != 0 {
            return Err(LatticeError::XiNotOrthogonalToE);
        }
        let half_norm = -self.gram_pair(xi, xi)? / Rational::from(2);
        let mut rows = vec![vec![Rational::new(); self.rank]; self.rank];
        for j in 0..self.rank {
            let mut v = vec![Rational::new(); self.rank];
            v[j] = Rational::from(1);
            let ve = self.gram_pair(&v, &er)?;
            let vx = self.gram_pair(&v, xi)?;
            for i in 0..self.rank {
                let mut x = v[i].clone();
                x += Rational::from(&ve * &xi[i]);
                x -= Rational::from(&vx * &er[i]);
                x += Rational::from(&ve * &half_norm) * &er[i];
                rows[i][j] = x;
            }
        }
        Ok(rows)
    }

    /// Representative of ξ mod E with zero entry at the first nonzero
    /// coordinate of E.
    pub fn reduce_mod(&self, e: &[i64], xi: &[Rational]) -> Vec<Rational> {
        let Some(k) = e.iter().position(|&x| x != 0) else {
            return xi.to_vec();
        };
        let c = Rational::from(&xi[k] / Rational::from(e[k]));
        xi.iter().zip(e).map(|(x, &ei)| x - Rational::from(ei) * &c).collect()
    }

    pub fn equal_mod(&self, e: &[i64], a: &[Rational], b: &[Rational]) -> bool {
        self.reduce_mod(e, a) == self.reduce_mod(e, b)
    }

    /// Integer reflection in the hyperplane orthogonal to `m`, if integral.
    pub fn reflection(&self, m: &[i64]) -> Result<IntMatrix, LatticeError> {
        let mm = self.pair_int(m, m)?;
        if mm == 0 {
            return Err(LatticeError::NonIntegral);
        }
        let gm = self.gram.apply(m)?;
        let mut out = IntMatrix::identity(self.rank);
        for j in 0..self.rank {
            // s(e_j) = e_j − 2⟨e_j, m⟩/⟨m, m⟩ · m
            let num = 2 * gm[j];
            if num % mm != 0 {
                return Err(LatticeError::NonIntegral);
            }
            let c = num / mm;
            for i in 0..self.rank {
                out.data[i * self.rank + j] -= c * m[i];
            }
        }
        Ok(out)
    }
}

fn rat_matrix(m: &IntMatrix) -> Vec<Vec<Rational>> {
    m.rows().iter().map(|r| rat_vec(r)).collect()
}

fn proportional_to(v: &[Rational], e: &[Rational]) -> bool {
    let Some(k) = e.iter().position(|x| *x != 0) else {
        return v.iter().all(|x| *x == 0);
    };
    let c = Rational::from(&v[k] / &e[k]);
    v.iter().zip(e).all(|(a, b)| *a == Rational::from(&c * b))
}

/// Approximates a rational by f64.
pub fn rat_to_f64(r: &Rational) -> f64 {
    r.to_f64()
}

/// Prints a rational as "p/q" (or "p" when integral).
pub fn rat_to_string(r: &Rational) -> String {
    r.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sigma(i: usize) -> IntMatrix {
        let mut cols: Vec<Vec<i64>> = (0..3).map(|j| (0..3).map(|k| (j == k) as i64).collect()).collect();
        cols[i] = (0..3).map(|k| if k == i { -1 } else { 2 }).collect();
        IntMatrix::from_columns(&cols).unwrap()
    }

    fn r(v: &[i64]) -> Vec<Rational> {
        rat_vec(v)
    }

    #[test]
    fn gram_pair_examples() {
        let lat = GramLattice::wehler();
        assert_eq!(lat.gram_pair(&r(&[1, 0, 0]), &r(&[0, 1, 0])).unwrap(), 2);
        assert_eq!(lat.gram_pair(&r(&[1, 0, 0]), &r(&[1, 0, 0])).unwrap(), 0);
        assert_eq!(lat.gram_pair(&r(&[1, 1, 1]), &r(&[1, 1, 1])).unwrap(), 12);
        assert!(matches!(
            lat.gram_pair(&r(&[1, 0]), &r(&[1, 0, 0])),
            Err(LatticeError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn rejects_bad_lattices() {
        let g = IntMatrix::from_rows(&[vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, -1]]).unwrap();
        assert!(matches!(GramLattice::new(g, vec![0, 0, 1]), Err(LatticeError::BadSignature { .. })));
        let g = IntMatrix::from_rows(&[vec![0, 1, 2], vec![2, 0, 2], vec![2, 2, 0]]).unwrap();
        assert_eq!(GramLattice::new(g, vec![1, 1, 1]).unwrap_err(), LatticeError::NotSymmetric);
        let g = IntMatrix::from_rows(&[vec![0, 2, 2], vec![2, 0, 2], vec![2, 2, 0]]).unwrap();
        assert_eq!(GramLattice::new(g, vec![1, 0, 0]).unwrap_err(), LatticeError::BasepointNotPositive);
    }

    #[test]
    fn json_round_trip() {
        let lat = GramLattice::from_json(r#"{"rank": 3, "gram": [[0,2,2],[2,0,2],[2,2,0]]}"#).unwrap();
        assert_eq!(lat.ample_class(), &[1, 1, 1]);
        let again = GramLattice::from_json(&lat.to_json()).unwrap();
        assert_eq!(again.gram(), lat.gram());
    }

    #[test]
    fn classify_examples() {
        let lat = GramLattice::wehler();
        let s1 = sigma(0);
        assert_eq!(lat.classify(&s1).unwrap().class, IsometryClass::FiniteOrder { order: 2 });
        let p = s1.mul(&sigma(1)).unwrap();
        match lat.classify(&p).unwrap().class {
            IsometryClass::Parabolic { e, power, .. } => {
                assert_eq!(e, vec![0, 0, 1]);
                assert_eq!(power, 1);
            }
            c => panic!("expected parabolic, got {c:?}"),
        }
        let h = p.mul(&sigma(2)).unwrap();
        let lambda = lat.classify(&h).unwrap().lambda().unwrap();
        assert!((lambda - (9.0 + 4.0 * 5f64.sqrt())).abs() < 1e-9);
    }

    #[test]
    fn classify_rejects_non_isometry() {
        let lat = GramLattice::wehler();
        let m = IntMatrix::from_rows(&[vec![1, 1, 0], vec![0, 1, 0], vec![0, 0, 1]]).unwrap();
        assert_eq!(lat.classify(&m).unwrap_err(), LatticeError::NotIsometry);
    }

    #[test]
    fn xi_and_norm_of_the_h3_translation() {
        let lat = GramLattice::wehler();
        let p = sigma(0).mul(&sigma(1)).unwrap();
        let e = [0, 0, 1];
        let xi = lat.parabolic_xi(&p, &e).unwrap();
        assert!(lat.equal_mod(&e, &xi, &r(&[-1, 1, 0])));
        assert_eq!(lat.reduce_mod(&e, &xi), r(&[-1, 1, 0]));
        assert_eq!(lat.ns_norm_sq(&p, &e).unwrap(), 4);
        assert_eq!(lat.exp_parabolic(&e, &xi).unwrap(), p);
        let id = IntMatrix::identity(3);
        assert!(lat.parabolic_xi(&id, &e).unwrap().iter().all(|x| *x == 0));
        assert_eq!(lat.exp_parabolic(&e, &r(&[0, 0, 0])).unwrap(), id);
    }

    #[test]
    fn xi_rejects_non_translations() {
        let lat = GramLattice::wehler();
        let h = sigma(0).mul(&sigma(1)).unwrap().mul(&sigma(2)).unwrap();
        assert_eq!(lat.parabolic_xi(&h, &[0, 0, 1]).unwrap_err(), LatticeError::NonParabolicInput);
        assert_eq!(
            lat.exp_parabolic(&[0, 0, 1], &r(&[1, 0, 0])).unwrap_err(),
            LatticeError::XiNotOrthogonalToE
        );
    }

    #[test]
    fn mass_examples() {
        let lat = GramLattice::wehler();
        let w0 = lat.basepoint().to_vec();
        assert!((lat.mass(&w0) - 1.0).abs() < 1e-12);
        let two: Vec<f64> = w0.iter().map(|x| 2.0 * x).collect();
        assert!((lat.mass(&two) - 2.0).abs() < 1e-12);
        assert!((lat.mass(&[0.0, 0.0, 1.0]) - 4.0 / 12f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn reflections_of_wehler_walls() {
        let lat = GramLattice::wehler();
        assert_eq!(lat.reflection(&[-1, 1, 1]).unwrap(), sigma(0));
        assert_eq!(lat.reflection(&[1, -1, 1]).unwrap(), sigma(1));
        assert_eq!(lat.reflection(&[1, 1, -1]).unwrap(), sigma(2));
    }

    #[test]
    fn kernel_of_rank_deficient_matrix() {
        let rows = vec![r(&[1, 2, 3]), r(&[2, 4, 6])];
        let k = rational_kernel(&rows, 3);
        assert_eq!(k.len(), 2);
        for v in &k {
            let dot: Rational = v.iter().zip(&rows[0]).map(|(a, b)| Rational::from(a * b)).sum();
            assert_eq!(dot, 0u32);
        }
    }
}
