use rand::seq::index::sample;
use serde::Serialize;

use super::ParamMap;
use crate::error::{Error, Result};
use crate::rng::SeedStream;

#[derive(Debug, Clone)]
pub struct FdConfig {
    /// Central-difference step.
    pub h: f64,
    /// Maximum tolerated relative error.
    pub tol: f64,
    /// Denominator floor for relative errors, so near-zero gradients are
    /// judged on absolute error.
    pub abs_floor: f64,
    /// Check at most this many random coordinates per tensor; `None` checks all.
    pub max_coords_per_tensor: Option<usize>,
    pub seed: u64,
    /// A coordinate that fails at `h` is re-probed at `h/10`, `h/100`, …
    /// this many times, keeping the smallest error. A step that straddles
    /// a ReLU or hinge kink gives a wrong quotient; a wrong gradient stays
    /// wrong at every step.
    pub refinements: usize,
}

impl Default for FdConfig {
    fn default() -> Self {
        FdConfig {
            h: 1e-5,
            tol: 1e-6,
            abs_floor: 1e-6,
            max_coords_per_tensor: None,
            seed: 0,
            refinements: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FdEntry {
    pub name: String,
    pub coords_checked: usize,
    pub max_rel_err: f64,
    pub worst_coord: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FdReport {
    pub entries: Vec<FdEntry>,
    pub max_rel_err: f64,
    pub tol: f64,
    pub passed: bool,
}

impl FdReport {
    pub fn worst(&self) -> Option<&FdEntry> {
        self.entries
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compare `analytic` gradients of `f` against central differences.
///
/// `f` must be a pure function of `params`; it is evaluated twice at the
/// unperturbed point and any difference is reported as a contract error.
/// Parameters are restored bit-exactly after each probe.
pub fn finite_diff_check<F>(
    mut f: F,
    params: &mut ParamMap,
    analytic: &ParamMap,
    cfg: &FdConfig,
) -> Result<FdReport>
where
    F: FnMut(&ParamMap) -> Result<f64>,
{
    if !(cfg.h > 0.0) {
        return Err(Error::Param(format!(
            "finite-difference step {} must be > 0",
            cfg.h
        )));
    }
    let f0 = f(params)?;
    let f1 = f(params)?;
    if f0.to_bits() != f1.to_bits() {
        return Err(Error::Contract(format!(
            "objective is not deterministic ({f0} vs {f1}); disable or pin dropout"
        )));
    }

    let root = SeedStream::new(cfg.seed);
    let mut entries = Vec::new();
    for ti in 0..params.len() {
        let (name, len) = {
            let (n, t) = params.get_index(ti).expect("index in range");
            (n.clone(), t.len())
        };
        let grad = analytic
            .get(&name)
            .ok_or_else(|| Error::Contract(format!("no analytic gradient for {name}")))?;
        if grad.len() != len {
            return Err(Error::shape(format!(
                "gradient for {name} has {} entries, parameter has {len}",
                grad.len()
            )));
        }
        let coords: Vec<usize> = match cfg.max_coords_per_tensor {
            Some(k) if k < len => {
                let mut rng = root.child(ti as u64).rng();
                let mut c = sample(&mut rng, len, k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..len).collect(),
        };

        let mut entry = FdEntry {
            name: name.clone(),
            coords_checked: coords.len(),
            max_rel_err: 0.0,
            worst_coord: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for &c in &coords {
            let a = grad.data()[c];
            let mut h = cfg.h;
            let mut best = (f64::INFINITY, f64::NAN);
            for _ in 0..=cfg.refinements {
                let orig = params[ti].data()[c];
                params[ti].data_mut()[c] = orig + h;
                let fp = f(params);
                params[ti].data_mut()[c] = orig - h;
                let fm = f(params);
                params[ti].data_mut()[c] = orig;
                let numeric = (fp? - fm?) / (2.0 * h);
                let err = relative_error(a, numeric, cfg.abs_floor);
                if err < best.0 || best.1.is_nan() {
                    best = (if err.is_finite() { err } else { f64::INFINITY }, numeric);
                }
                if best.0 <= cfg.tol {
                    break;
                }
                h /= 10.0;
            }
            let (err, numeric) = best;
            if err > entry.max_rel_err {
                entry.max_rel_err = err;
                entry.worst_coord = c;
                entry.analytic = a;
                entry.numeric = numeric;
            }
        }
        entries.push(entry);
    }
    let max_rel_err = entries.iter().map(|e| e.max_rel_err).fold(0.0, f64::max);
    Ok(FdReport {
        passed: max_rel_err <= cfg.tol,
        max_rel_err,
        tol: cfg.tol,
        entries,
    })
}
