use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{IvLabError, Result};
use crate::numerics::graph::{Graph, NodeId};
use crate::numerics::params::ParamSet;

/// Outcome of a central finite-difference comparison against `backward()`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub epsilon: f64,
    pub tolerance: f64,
    pub per_param: Vec<ParamCheck>,
    pub max_rel_err: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParamCheck {
    pub name: String,
    pub coords_checked: usize,
    pub max_rel_err: f64,
}

pub struct GradCheckOptions {
    pub epsilon: f64,
    pub tolerance: f64,
    /// Coordinates sampled per parameter tensor; `None` checks every one.
    pub samples_per_tensor: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            // Central differences trade truncation O(eps^2) against round-off
            // O(ulp/eps); 1e-4 keeps both below the 1e-4 tolerance for losses
            // of order one.
            epsilon: 1e-4,
            tolerance: 1e-4,
            samples_per_tensor: None,
            seed: 0,
        }
    }
}

/// Compare analytic gradients against central finite differences.
///
/// `build` records the loss as a fresh graph from the current parameter
/// values; it must be deterministic. The relative error uses denominator
/// `max(|a|, |b|, 1e-8)`.
pub fn finite_diff_check<F>(
    params: &mut ParamSet,
    build: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&ParamSet) -> Result<(Graph, NodeId)>,
{
    assert!(opts.epsilon > 0.0, "epsilon must be positive");
    let eval = |params: &ParamSet| -> Result<f64> {
        let (g, loss) = build(params)?;
        g.scalar_value(loss)
    };

    let base0 = eval(params)?;
    let base1 = eval(params)?;
    if base0.to_bits() != base1.to_bits() {
        return Err(IvLabError::NondeterministicClosure);
    }

    // analytic gradients
    params.zero_grad();
    {
        let (mut g, loss) = build(params)?;
        g.backward(loss, params)?;
    }
    let analytic: Vec<(String, Vec<f64>)> = params
        .iter()
        .filter(|(_, p)| p.trainable)
        .map(|(_, p)| (p.name.clone(), p.grad.data().to_vec()))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut per_param = Vec::new();
    let mut max_rel = 0.0f64;
    for (name, grad) in &analytic {
        let n = grad.len();
        let coords: Vec<usize> = match opts.samples_per_tensor {
            Some(k) if k < n => {
                let mut all: Vec<usize> = (0..n).collect();
                all.shuffle(&mut rng);
                let mut picked: Vec<usize> = all.into_iter().take(k).collect();
                picked.sort_unstable();
                picked
            }
            _ => (0..n).collect(),
        };
        let mut worst = 0.0f64;
        for &c in &coords {
            let id = params.id(name).unwrap();
            let orig = params.get(id).value.data()[c];
            params.get_mut(id).value.data_mut()[c] = orig + opts.epsilon;
            let plus = eval(params)?;
            params.get_mut(id).value.data_mut()[c] = orig - opts.epsilon;
            let minus = eval(params)?;
            params.get_mut(id).value.data_mut()[c] = orig;
            let fd = (plus - minus) / (2.0 * opts.epsilon);
            let a = grad[c];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
            worst = worst.max(rel);
        }
        max_rel = max_rel.max(worst);
        per_param.push(ParamCheck {
            name: name.clone(),
            coords_checked: coords.len(),
            max_rel_err: worst,
        });
    }

    Ok(GradCheckReport {
        epsilon: opts.epsilon,
        tolerance: opts.tolerance,
        per_param,
        max_rel_err: max_rel,
        pass: max_rel < opts.tolerance,
    })
}
