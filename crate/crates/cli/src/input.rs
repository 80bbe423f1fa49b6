use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use k3h::hyperbolic::{from_diagonal, BoundaryPoint, Chamber};
use k3h::lattice::GramLattice;
use k3h::wehler::{PlantedSurface, SurfacePoint, WehlerSurface};
use serde_json::{json, Value};

/// Search bound used by `surface check`.
const CHECK_BOUND: i64 = 2;

pub struct Surface {
    pub surface: WehlerSurface,
    pub planted: Option<PlantedSurface>,
}

pub fn load_surface(path: Option<&Path>, seed: u64) -> Result<Surface> {
    match path {
        Some(path) => {
            let text =
                std::fs::read_to_string(path).with_context(|| format!("surface: cannot read {}", path.display()))?;
            let surface = WehlerSurface::from_json(&text).context("surface")?;
            Ok(Surface { surface, planted: None })
        }
        None => {
            let planted = PlantedSurface::generate(seed);
            Ok(Surface { surface: planted.surface.clone(), planted: Some(planted) })
        }
    }
}

/// `planted:i`, `finite:i`, or a path to a point JSON file.
pub fn parse_point(arg: &str, surface: &Surface) -> Result<SurfacePoint> {
    let listed = |kind: &str, idx: &str| -> Result<SurfacePoint> {
        let planted = surface.planted.as_ref().ok_or_else(|| anyhow!("point: {kind}:i needs the planted surface"))?;
        let list = if kind == "planted" { &planted.generic_points } else { &planted.finite_orbit };
        let i: usize = idx.parse().map_err(|_| anyhow!("point: bad index {idx:?}"))?;
        list.get(i).cloned().ok_or_else(|| anyhow!("point: index {i} out of range (have {})", list.len()))
    };
    let p = if let Some(idx) = arg.strip_prefix("planted:") {
        listed("planted", idx)?
    } else if let Some(idx) = arg.strip_prefix("finite:") {
        listed("finite", idx)?
    } else {
        let text = std::fs::read_to_string(arg).with_context(|| format!("point: cannot read {arg}"))?;
        SurfacePoint::from_json(&text).context("point")?
    };
    if !surface.surface.contains(&p) {
        bail!("point: {p} is not on the surface");
    }
    Ok(p)
}

/// `irr:a,b,c` in diagonal coordinates (projected radially onto the null
/// circle, mass 1), `cusp:k` for hₖ, or `cusp:a,b,c[@scale]`.
pub fn parse_alpha(arg: &str, lattice: &GramLattice) -> Result<BoundaryPoint> {
    let nums = |s: &str| -> Result<Vec<f64>> {
        s.split(',').map(|t| t.trim().parse::<f64>().map_err(|_| anyhow!("alpha: bad number {t:?}"))).collect()
    };
    if let Some(rest) = arg.strip_prefix("irr:") {
        let v = nums(rest)?;
        if v.len() != 3 || v.iter().any(|x| !x.is_finite()) {
            bail!("alpha: irr needs three finite coordinates");
        }
        let r = v[1].hypot(v[2]);
        if r == 0.0 {
            bail!("alpha: irr direction has no angular part");
        }
        let dir = from_diagonal(lattice, &[1.0, v[1] / r, v[2] / r]);
        return Ok(BoundaryPoint::Irrational { dir: lattice.mass_normalize(&dir) });
    }
    if let Some(rest) = arg.strip_prefix("cusp:") {
        let (class, scale) = match rest.split_once('@') {
            Some((c, s)) => (c, s.trim().parse::<f64>().map_err(|_| anyhow!("alpha: bad scale {s:?}"))?),
            None => (rest, 1.0),
        };
        let e: Vec<i64> = if class.contains(',') {
            class
                .split(',')
                .map(|t| t.trim().parse::<i64>().map_err(|_| anyhow!("alpha: bad integer {t:?}")))
                .collect::<Result<_>>()?
        } else {
            let k: usize = class.trim().parse().map_err(|_| anyhow!("alpha: bad cusp index {class:?}"))?;
            if !(1..=lattice.rank()).contains(&k) {
                bail!("alpha: cusp index must be 1..{}", lattice.rank());
            }
            (1..=lattice.rank()).map(|i| i64::from(i == k)).collect()
        };
        let alpha = BoundaryPoint::Cusp { e, scale };
        let chamber = Chamber::wehler(lattice);
        alpha.validate(lattice, &chamber).context("alpha")?;
        return Ok(alpha);
    }
    bail!("alpha: expected irr:a,b,c or cusp:...")
}

pub fn check_surface(surface: &Surface) -> Result<Value> {
    let s = &surface.surface;
    let points = s.find_points(CHECK_BOUND);
    let mut involutive = 0usize;
    let mut degenerate = Vec::new();
    for p in &points {
        let mut ok = true;
        for l in 1..=3u8 {
            match s.involution(l, p).and_then(|q| s.involution(l, &q)) {
                Ok(back) if back == *p => {}
                Ok(_) => bail!("surface: involution {l} is not an involution at {p}"),
                Err(e) => {
                    degenerate.push(format!("{p}: {e}"));
                    ok = false;
                }
            }
        }
        involutive += usize::from(ok);
    }
    let planted = surface.planted.as_ref().map(|pl| {
        json!({
            "seed": pl.seed,
            "generic_on_surface": pl.generic_points.iter().all(|p| s.contains(p)),
            "finite_orbit_on_surface": pl.finite_orbit.iter().all(|p| s.contains(p)),
        })
    });
    Ok(json!({
        "hash": s.hash_hex(),
        "coeffs": serde_json::from_str::<Value>(&s.to_json())?["coeffs"],
        "search_bound": CHECK_BOUND,
        "points_found": points.len(),
        "points_with_all_involutions": involutive,
        "degenerate": degenerate,
        "planted": planted,
    }))
}
