use alloc::vec::Vec;

use rand::Rng;

use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// Central finite-difference check settings.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub step: f64,
    /// Number of randomly sampled coordinates; all coordinates if the leaves
    /// hold fewer.
    pub probes: usize,
    pub seed: u64,
    /// Skip coordinates whose `±step` perturbation changes a ReLU sign or a
    /// max-pool winner, where the central difference straddles a kink.
    pub avoid_branch_changes: bool,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            step: 1e-5,
            probes: 20,
            seed: 0,
            avoid_branch_changes: false,
        }
    }
}

/// One compared coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub leaf: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub probes: Vec<Probe>,
    /// Coordinates rejected because the perturbation changed a branch.
    pub skipped: usize,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.probes.iter().map(|p| p.rel_error).fold(0.0, f64::max)
    }
}

/// Compare reverse-mode gradients of the scalar program `f` against central
/// differences `(f(x+h) - f(x-h)) / 2h`.
///
/// `f` receives one graph leaf per tensor in `leaves`. The relative error of
/// a probe is `|a - n| / max(1e-12, |a| + |n|)`.
pub fn grad_check<F>(f: F, leaves: &[Tensor<f64>], cfg: GradCheck) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    if !(cfg.step > 0.0) {
        return Err(Error::usage("finite-difference step must be positive"));
    }
    let eval = |vals: &[Tensor<f64>]| -> Result<(f64, Vec<usize>)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.param(t.clone())).collect();
        let root = f(&mut g, &vars)?;
        let pattern = if cfg.avoid_branch_changes {
            g.branch_pattern()
        } else {
            Vec::new()
        };
        Ok((g.value(root).item(), pattern))
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = leaves.iter().map(|t| g.param(t.clone())).collect();
    let root = f(&mut g, &vars)?;
    let base_pattern = if cfg.avoid_branch_changes {
        g.branch_pattern()
    } else {
        Vec::new()
    };
    g.backward(root)?;
    let grads: Vec<Tensor<f64>> = vars
        .iter()
        .zip(leaves)
        .map(|(&v, t)| g.grad(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    drop(g);

    let total: usize = leaves.iter().map(Tensor::len).sum();
    let locate = |mut flat: usize| {
        let mut leaf = 0;
        while flat >= leaves[leaf].len() {
            flat -= leaves[leaf].len();
            leaf += 1;
        }
        (leaf, flat)
    };
    let exhaustive = total <= cfg.probes;
    let mut rng = stream_rng(cfg.seed, 0x6772_6164);
    let max_attempts = if exhaustive { total } else { 20 * cfg.probes };

    let mut work: Vec<Tensor<f64>> = leaves.to_vec();
    let mut probes = Vec::with_capacity(cfg.probes.min(total));
    let mut skipped = 0;
    for attempt in 0..max_attempts {
        if !exhaustive && probes.len() == cfg.probes {
            break;
        }
        let flat = if exhaustive { attempt } else { rng.random_range(0..total) };
        let (leaf, index) = locate(flat);
        let orig = work[leaf].data()[index];
        work[leaf].data_mut()[index] = orig + cfg.step;
        let (up, up_pattern) = eval(&work)?;
        work[leaf].data_mut()[index] = orig - cfg.step;
        let (down, down_pattern) = eval(&work)?;
        work[leaf].data_mut()[index] = orig;
        if up_pattern != base_pattern || down_pattern != base_pattern {
            skipped += 1;
            continue;
        }
        let numeric = (up - down) / (2.0 * cfg.step);
        let analytic = grads[leaf].data()[index];
        let rel_error = (analytic - numeric).abs() / f64::max(1e-12, analytic.abs() + numeric.abs());
        probes.push(Probe {
            leaf,
            index,
            analytic,
            numeric,
            rel_error,
        });
    }
    Ok(GradCheckReport { probes, skipped })
}
