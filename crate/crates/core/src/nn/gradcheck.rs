//! Central finite-difference audit of analytic gradients.

use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;

use super::params::ParamStore;
use super::NnError;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Entries checked per tensor; larger tensors are subsampled.
    pub max_entries: usize,
    /// Smallest denominator of the relative error, in units of the loss
    /// magnitude. Central differences carry an absolute rounding error of
    /// about `eps * |loss| / step`, so smaller gradients cannot be judged.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            max_entries: usize::MAX,
            floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TensorReport {
    pub name: String,
    pub checked: usize,
    /// Entries sitting on a non-differentiable point (left and right
    /// differences disagree), excluded from the error.
    pub kinks: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorReport>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }

    pub fn checked(&self) -> usize {
        self.tensors.iter().map(|t| t.checked).sum()
    }

    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error() < tolerance
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    relative_error_floored(a, b, 1e-8)
}

fn relative_error_floored(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Compares the gradient accumulated by `grad` against central differences
/// of `loss`. `grad` must add d(loss)/d(params) into the store accumulators.
pub fn check<L, G>(
    store: &mut ParamStore,
    loss: L,
    grad: G,
    cfg: GradCheckConfig,
    rng: &mut ChaCha8Rng,
) -> Result<GradCheckReport, NnError>
where
    L: Fn(&ParamStore) -> Result<f64, NnError>,
    G: Fn(&mut ParamStore) -> Result<(), NnError>,
{
    store.zero_grad();
    grad(store)?;
    let analytic: Vec<Vec<f64>> = store.params().iter().map(|p| p.grad.clone()).collect();
    store.zero_grad();

    let h = cfg.step;
    let mut report = GradCheckReport::default();
    for pi in 0..analytic.len() {
        let n = analytic[pi].len();
        let entries: Vec<usize> = if n <= cfg.max_entries {
            (0..n).collect()
        } else {
            let mut idx = sample(rng, n, cfg.max_entries).into_vec();
            idx.sort_unstable();
            idx
        };
        let mut t = TensorReport {
            name: store.params()[pi].name.clone(),
            checked: 0,
            kinks: 0,
            max_rel_error: 0.0,
        };
        for i in entries {
            let orig = store.params()[pi].value[i];
            let at = |v: f64, s: &mut ParamStore| -> Result<f64, NnError> {
                s.params_mut()[pi].value[i] = v;
                loss(s)
            };
            let fp = at(orig + h, store)?;
            let fm = at(orig - h, store)?;
            let fd = (fp - fm) / (2.0 * h);
            let a = analytic[pi][i];
            let floor = (cfg.floor * fp.abs().max(fm.abs()).max(1.0)).max(1e-8);
            let mut err = relative_error_floored(a, fd, floor);
            // a kink inside the stencil spoils small steps less, rounding
            // noise spoils large steps less; a wrong gradient fails at all
            for scale in [0.1, 0.01, 10.0, 100.0] {
                if err < cfg.tolerance {
                    break;
                }
                let step = h * scale;
                let fd = (at(orig + step, store)? - at(orig - step, store)?) / (2.0 * step);
                err = err.min(relative_error_floored(a, fd, floor));
            }
            if err >= cfg.tolerance {
                let f0 = at(orig, store)?;
                let right = (fp - f0) / h;
                let left = (f0 - fm) / h;
                if relative_error(right, left) > 1e-2 {
                    t.kinks += 1;
                    err = 0.0;
                }
            }
            store.params_mut()[pi].value[i] = orig;
            t.checked += 1;
            t.max_rel_error = t.max_rel_error.max(err);
        }
        report.tensors.push(t);
    }
    Ok(report)
}
