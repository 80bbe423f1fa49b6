//! Orbit invariants of a point built from its boundary heights: star sets,
//! total height, star volume, and invariance reports over orbits.

use std::f64::consts::PI;
use std::io::{self, Write};

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::heights::{HeightValue, Heights};
use crate::hyperbolic::{diagonalize_form, format_letters, BoundaryPoint, Letter};
use crate::lattice::GramLattice;
use crate::wehler::SurfacePoint;

/// Fraction of non-converged samples above which an integral is flagged.
pub const MAX_NONCONVERGED_FRACTION: f64 = 0.05;
pub const MIN_SAMPLES: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InvariantError {
    #[error("at least {MIN_SAMPLES} samples are required, got {0}")]
    TooFewSamples(usize),
    #[error("star sets are implemented for rank 3 only (rank {0})")]
    UnsupportedRank(usize),
    #[error("orbit depth {0} exceeds 4")]
    DepthTooLarge(usize),
}

/// A source of boundary heights α ↦ h(α). The canonical source wraps a
/// height engine and a point; constants are used to check the quadrature.
pub trait BoundaryHeight: Sync {
    fn height(&self, alpha: &[f64]) -> Result<HeightValue, String>;
}

pub struct CanonicalHeight<'a> {
    pub engine: &'a Heights,
    pub point: SurfacePoint,
}

impl BoundaryHeight for CanonicalHeight<'_> {
    fn height(&self, alpha: &[f64]) -> Result<HeightValue, String> {
        self.engine
            .canonical_boundary_height(&BoundaryPoint::Irrational { dir: alpha.to_vec() }, &self.point)
            .map_err(|e| e.to_string())
    }
}

/// Homogeneous synthetic height c·M(α).
pub struct ConstantHeight(pub f64);

impl BoundaryHeight for ConstantHeight {
    fn height(&self, _alpha: &[f64]) -> Result<HeightValue, String> {
        Ok(HeightValue::exact(self.0))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StarSample {
    pub theta: f64,
    pub alpha: Vec<f64>,
    pub height: Option<HeightValue>,
    pub error: Option<String>,
}

impl StarSample {
    pub fn radius(&self) -> f64 {
        match &self.height {
            Some(h) if h.value > 0.0 => 1.0 / h.value,
            Some(_) => f64::INFINITY,
            None => f64::NAN,
        }
    }

    pub fn converged(&self) -> bool {
        self.height.is_some_and(|h| h.converged)
    }
}

/// Mass-one null classes T·(1, cos θ, sin θ) on a uniform grid.
pub fn circle_classes(lattice: &GramLattice, n: usize) -> Result<Vec<(f64, Vec<f64>)>, InvariantError> {
    if lattice.rank() != 3 {
        return Err(InvariantError::UnsupportedRank(lattice.rank()));
    }
    if n < MIN_SAMPLES {
        return Err(InvariantError::TooFewSamples(n));
    }
    let t = diagonalize_form(lattice);
    Ok((0..n)
        .map(|k| {
            let theta = 2.0 * PI * k as f64 / n as f64;
            let v = &t * DVector::from_vec(vec![1.0, theta.cos(), theta.sin()]);
            (theta, v.iter().copied().collect())
        })
        .collect())
}

/// Heights on the θ grid, evaluated in parallel and returned in θ order.
pub fn star_set(lattice: &GramLattice, source: &dyn BoundaryHeight, n: usize) -> Result<Vec<StarSample>, InvariantError> {
    Ok(circle_classes(lattice, n)?
        .into_par_iter()
        .map(|(theta, alpha)| match source.height(&alpha) {
            Ok(h) => StarSample { theta, alpha, height: Some(h), error: None },
            Err(e) => StarSample { theta, alpha, height: None, error: Some(e) },
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Integral {
    pub value: f64,
    /// Quadrature discrepancy against the half grid plus propagated height
    /// errors.
    pub err: f64,
    pub samples: usize,
    pub nonconverged: usize,
    pub failed: usize,
    pub flagged: bool,
}

fn weights_ok(samples: &[StarSample]) -> (usize, usize, bool) {
    let failed = samples.iter().filter(|s| s.height.is_none()).count();
    let nonconv = samples.iter().filter(|s| !s.converged()).count();
    let flagged = nonconv as f64 > MAX_NONCONVERGED_FRACTION * samples.len() as f64;
    (nonconv, failed, flagged)
}

/// ∫ h(α(θ))^{−(ρ−2)} dθ by the trapezoid rule on the periodic grid, with
/// a half-resolution comparison. Failed samples are left out and flagged.
pub fn total_height(samples: &[StarSample], rank: usize) -> Integral {
    let p = rank as i32 - 2;
    let n = samples.len();
    let h = 2.0 * PI / n as f64;
    let (mut full, mut half, mut herr) = (0.0, 0.0, 0.0);
    for (k, s) in samples.iter().enumerate() {
        let Some(v) = s.height else { continue };
        let f = v.value.powi(-p);
        full += f;
        if k % 2 == 0 {
            half += f;
        }
        herr += p as f64 * v.value.powi(-p - 1) * v.error_bound;
    }
    let value = h * full;
    let coarse = 2.0 * h * half;
    let (nonconverged, failed, flagged) = weights_ok(samples);
    Integral {
        value,
        err: (value - coarse).abs() + h * herr,
        samples: n,
        nonconverged,
        failed,
        flagged: flagged || failed > 0,
    }
}

const GL_NODES: [(f64, f64); 4] = [
    (-0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
    (-0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
    (0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
    (0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
];

/// ∫₀^R r^k dr by four-point Gauss–Legendre (exact for k ≤ 7).
fn radial_integral(radius: f64, k: i32) -> f64 {
    let half = radius / 2.0;
    GL_NODES.iter().map(|(x, w)| w * (half * (x + 1.0)).powi(k)).sum::<f64>() * half
}

/// Vol(S_p) = ∫dθ ∫₀^{1/h(θ)} r^{ρ−3} dr, integrated radially by quadrature
/// and in θ by the midpoint sum over the grid.
pub fn star_volume(samples: &[StarSample], rank: usize) -> Integral {
    let k = rank as i32 - 3;
    let n = samples.len();
    let dtheta = 2.0 * PI / n as f64;
    let radial: Vec<Option<(f64, f64)>> = samples
        .iter()
        .map(|s| {
            s.height.map(|v| {
                let r = 1.0 / v.value;
                let dr = v.error_bound / (v.value * v.value);
                (radial_integral(r, k), r.powi(k) * dr)
            })
        })
        .collect();
    let value: f64 = radial.iter().flatten().map(|(v, _)| v).sum::<f64>() * dtheta;
    let coarse: f64 = radial.iter().step_by(2).flatten().map(|(v, _)| v).sum::<f64>() * 2.0 * dtheta;
    let herr: f64 = radial.iter().flatten().map(|(_, e)| e).sum::<f64>() * dtheta;
    let (nonconverged, failed, flagged) = weights_ok(samples);
    Integral { value, err: (value - coarse).abs() + herr, samples: n, nonconverged, failed, flagged: flagged || failed > 0 }
}

/// Star-shape check on converged samples: all radii positive and finite,
/// and no jump between neighbours exceeds `factor` × the median jump.
pub fn radius_continuity(samples: &[StarSample], factor: f64) -> (bool, f64, f64) {
    let radii: Vec<f64> = samples.iter().filter(|s| s.converged()).map(StarSample::radius).collect();
    if radii.iter().any(|r| !(r.is_finite() && *r > 0.0)) || radii.len() < 2 {
        return (false, f64::NAN, f64::NAN);
    }
    let mut jumps: Vec<f64> = radii.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    jumps.push((radii[0] - radii[radii.len() - 1]).abs());
    let max = jumps.iter().copied().fold(0.0, f64::max);
    let mut sorted = jumps.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    (max <= factor * median, max, median)
}

/// CSV with columns theta,alpha0,alpha1,alpha2,height,err,converged,radius;
/// reals with 17 significant digits.
pub fn write_csv<W: Write>(samples: &[StarSample], mut out: W) -> io::Result<()> {
    writeln!(out, "theta,alpha0,alpha1,alpha2,height,err,converged,radius")?;
    for s in samples {
        let (h, e) = s.height.map_or((f64::NAN, f64::NAN), |h| (h.value, h.error_bound));
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            fmt17(s.theta),
            fmt17(s.alpha[0]),
            fmt17(s.alpha[1]),
            fmt17(s.alpha[2]),
            fmt17(h),
            fmt17(e),
            s.converged(),
            fmt17(s.radius())
        )?;
    }
    Ok(())
}

/// 17 significant digits in scientific notation.
pub fn fmt17(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}").to_lowercase()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub word: String,
    pub point: String,
    pub total: Integral,
    pub volume: Integral,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub rows: Vec<ReportRow>,
    /// max |h^tot(γp) − h^tot(p)| / h^tot(p) over the rows.
    pub max_deviation: f64,
    pub max_volume_deviation: f64,
}

/// Reduced words of length ≤ depth, shortest first.
pub fn reduced_words(generators: usize, depth: usize) -> Vec<Vec<Letter>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..depth {
        let mut next = Vec::new();
        for w in &frontier {
            for l in 1..=generators as Letter {
                if w.last() != Some(&l) {
                    let mut v: Vec<Letter> = w.clone();
                    v.push(l);
                    next.push(v);
                }
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Builds a report from per-point integrals (first row is the base point).
pub fn summarize(rows: Vec<ReportRow>) -> InvarianceReport {
    let base = rows.first().map_or(f64::NAN, |r| r.total.value);
    let vbase = rows.first().map_or(f64::NAN, |r| r.volume.value);
    let dev = |v: f64, b: f64| if v == b { 0.0 } else { ((v - b) / b).abs() };
    let max_deviation = rows.iter().map(|r| dev(r.total.value, base)).fold(0.0, f64::max);
    let max_volume_deviation = rows.iter().map(|r| dev(r.volume.value, vbase)).fold(0.0, f64::max);
    InvarianceReport { rows, max_deviation, max_volume_deviation }
}

/// Total height and star volume over the points γp, γ a reduced word of
/// length ≤ depth. `source` builds the height function for each point.
pub fn invariance_report<'e, F>(
    engine: &Heights,
    p: &SurfacePoint,
    depth: usize,
    n_samples: usize,
    source: F,
) -> Result<InvarianceReport, InvariantError>
where
    F: Fn(&SurfacePoint) -> Box<dyn BoundaryHeight + 'e>,
{
    if depth > 4 {
        return Err(InvariantError::DepthTooLarge(depth));
    }
    let lattice = &engine.model.lattice;
    let mut rows = Vec::new();
    for word in reduced_words(engine.model.chamber.num_generators(), depth) {
        let q = match engine.model.surface.orbit(p, &word, engine.config.guard_bits) {
            Ok(o) => o.points.last().unwrap().clone(),
            Err(e) => {
                rows.push(failed_row(&word, e.to_string(), n_samples));
                continue;
            }
        };
        let h = source(&q);
        let samples = star_set(lattice, h.as_ref(), n_samples)?;
        rows.push(ReportRow {
            word: format_letters(&word),
            point: q.to_string(),
            total: total_height(&samples, lattice.rank()),
            volume: star_volume(&samples, lattice.rank()),
        });
    }
    Ok(summarize(rows))
}

fn failed_row(word: &[Letter], msg: String, n: usize) -> ReportRow {
    let bad = Integral { value: f64::NAN, err: f64::NAN, samples: n, nonconverged: n, failed: n, flagged: true };
    ReportRow { word: format_letters(word), point: msg, total: bad.clone(), volume: bad }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lat() -> GramLattice {
        GramLattice::wehler()
    }

    #[test]
    fn circle_classes_have_mass_one_and_are_null() {
        let l = lat();
        for (_, a) in circle_classes(&l, 64).unwrap() {
            assert!((l.mass(&a) - 1.0).abs() < 1e-10);
            assert!(l.pair_f64(&a, &a).abs() < 1e-10);
        }
        assert_eq!(circle_classes(&l, 8).unwrap_err(), InvariantError::TooFewSamples(8));
    }

    #[test]
    fn constant_heights_integrate_exactly() {
        let l = lat();
        let one = star_set(&l, &ConstantHeight(1.0), 720).unwrap();
        assert!((total_height(&one, 3).value - 2.0 * PI).abs() < 1e-12);
        assert!((star_volume(&one, 3).value - 2.0 * PI).abs() < 1e-12);
        let two = star_set(&l, &ConstantHeight(2.0), 720).unwrap();
        assert!((total_height(&two, 3).value - PI).abs() < 1e-12);
        assert!((star_volume(&two, 3).value - PI).abs() < 1e-12);
        assert!(one.iter().all(|s| (s.radius() - 1.0).abs() < 1e-15));
        assert!(radius_continuity(&one, 10.0).1 == 0.0);
    }

    #[test]
    fn homogeneity_in_higher_rank_exponents() {
        // The integrands scale as λ^{−(ρ−2)}: check ρ = 4 on synthetic data.
        let l = lat();
        let s1 = star_set(&l, &ConstantHeight(1.5), 32).unwrap();
        let s2 = star_set(&l, &ConstantHeight(3.0), 32).unwrap();
        let r = total_height(&s1, 4).value / total_height(&s2, 4).value;
        assert!((r - 4.0).abs() < 1e-12);
        let v = star_volume(&s1, 4).value / star_volume(&s2, 4).value;
        assert!((v - 4.0).abs() < 1e-12);
    }

    #[test]
    fn gauss_legendre_is_exact_for_low_powers() {
        assert!((radial_integral(2.0, 0) - 2.0).abs() < 1e-15);
        assert!((radial_integral(2.0, 1) - 2.0).abs() < 1e-15);
        assert!((radial_integral(2.0, 3) - 4.0).abs() < 1e-13);
    }

    #[test]
    fn report_of_constant_heights_has_zero_deviation() {
        let rows: Vec<ReportRow> = (0..4)
            .map(|i| {
                let s = star_set(&lat(), &ConstantHeight(1.0), 64).unwrap();
                ReportRow { word: i.to_string(), point: String::new(), total: total_height(&s, 3), volume: star_volume(&s, 3) }
            })
            .collect();
        let r = summarize(rows);
        assert_eq!(r.max_deviation, 0.0);
        assert_eq!(r.max_volume_deviation, 0.0);
    }

    #[test]
    fn reduced_word_counts() {
        assert_eq!(reduced_words(3, 0).len(), 1);
        assert_eq!(reduced_words(3, 1).len(), 4);
        assert_eq!(reduced_words(3, 2).len(), 10);
    }

    #[test]
    fn csv_format() {
        let s = star_set(&lat(), &ConstantHeight(2.0), 16).unwrap();
        let mut buf = Vec::new();
        write_csv(&s, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 17);
        assert_eq!(lines[0], "theta,alpha0,alpha1,alpha2,height,err,converged,radius");
        assert!(lines[1].starts_with("0.0000000000000000e0,"));
        assert!(lines[1].ends_with(",2.0000000000000000e0,0.0000000000000000e0,true,5.0000000000000000e-1"));
    }
}
