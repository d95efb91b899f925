//! Head selection (top-k by cross-task mean CE) and θ_c aggregation.

use std::collections::BTreeMap;

use crate::error::{IvLabError, Result};
use crate::iv::types::{CEMap, CausalHeadSet, InstructionVector, TaskConditionedActivations};
use crate::model::HeadLocation;

/// Rank heads by unweighted mean CE across tasks and keep the top k.
/// Ties break by (layer, head) ascending.
pub fn select_heads(ce_maps: &[CEMap], k: usize) -> Result<CausalHeadSet> {
    let Some(first) = ce_maps.first() else {
        return Err(IvLabError::InvalidArgument("no CE maps given".into()));
    };
    for m in ce_maps {
        if m.ce.keys().ne(first.ce.keys()) {
            return Err(IvLabError::InvalidArgument(
                "CE maps cover different head sets".into(),
            ));
        }
    }
    if k > first.ce.len() {
        return Err(IvLabError::InvalidArgument(format!(
            "k={k} exceeds {} scanned heads",
            first.ce.len()
        )));
    }
    let mut mean_ce: BTreeMap<HeadLocation, f64> = BTreeMap::new();
    for loc in first.ce.keys() {
        let sum: f64 = ce_maps.iter().map(|m| m.ce[loc]).sum();
        mean_ce.insert(*loc, sum / ce_maps.len() as f64);
    }
    let mut ranked: Vec<HeadLocation> = mean_ce.keys().copied().collect();
    ranked.sort_by(|a, b| {
        mean_ce[b]
            .partial_cmp(&mean_ce[a])
            .expect("finite CE values")
            .then_with(|| a.cmp(b))
    });
    ranked.truncate(k);
    Ok(CausalHeadSet {
        heads: ranked,
        k,
        mean_ce,
    })
}

/// θ_c = Σ_{(l,j) ∈ S} h̄^c_{lj}, summed in head order.
pub fn extract_iv(tca: &TaskConditionedActivations, s: &CausalHeadSet) -> Result<InstructionVector> {
    let mut constituents = BTreeMap::new();
    for loc in &s.heads {
        let (mean, _) = tca.means.get(loc).ok_or_else(|| {
            IvLabError::InvalidArgument(format!("head {loc:?} missing from activations"))
        })?;
        constituents.insert(*loc, mean.clone());
    }
    let d = constituents
        .values()
        .next()
        .map(|v| v.len())
        .ok_or_else(|| IvLabError::InvalidArgument("empty head set".into()))?;
    let mut theta = vec![0.0; d];
    for v in constituents.values() {
        for (t, x) in theta.iter_mut().zip(v) {
            *t += x;
        }
    }
    Ok(InstructionVector {
        task_id: tca.task_id.clone(),
        theta,
        constituents,
        fingerprint: tca.fingerprint.clone(),
        n_shots: tca.n_shots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(task: &str, ces: &[((usize, usize), f64)]) -> CEMap {
        CEMap {
            task_id: task.into(),
            fingerprint: "f".into(),
            ce: ces
                .iter()
                .map(|&((l, j), v)| (HeadLocation::new(l, j), v))
                .collect(),
            n_inputs: 1,
        }
    }

    #[test]
    fn mean_ranking_matches_hand_arithmetic() {
        // A: (0.3 + 0.0)/2 = 0.15; B: (0.1 + 0.3)/2 = 0.20 -> B wins at k=1
        let m1 = map("t1", &[((0, 0), 0.3), ((0, 1), 0.1)]);
        let m2 = map("t2", &[((0, 0), 0.0), ((0, 1), 0.3)]);
        let s = select_heads(&[m1, m2], 1).unwrap();
        assert_eq!(s.heads, vec![HeadLocation::new(0, 1)]);
    }

    #[test]
    fn single_map_keeps_its_order_and_k_all_heads() {
        let m1 = map("t", &[((0, 0), 0.2), ((0, 1), 0.5), ((1, 0), -0.1)]);
        let s = select_heads(std::slice::from_ref(&m1), 3).unwrap();
        assert_eq!(
            s.heads,
            vec![
                HeadLocation::new(0, 1),
                HeadLocation::new(0, 0),
                HeadLocation::new(1, 0)
            ]
        );
        assert!(select_heads(&[m1], 4).is_err());
        assert!(select_heads(&[], 1).is_err());
    }

    #[test]
    fn ties_break_by_layer_then_head() {
        let m1 = map("t", &[((1, 0), 0.5), ((0, 3), 0.5), ((0, 1), 0.5)]);
        let s = select_heads(&[m1], 2).unwrap();
        assert_eq!(
            s.heads,
            vec![HeadLocation::new(0, 1), HeadLocation::new(0, 3)]
        );
    }

    #[test]
    fn selection_is_permutation_invariant_over_tasks() {
        let m1 = map("a", &[((0, 0), 0.4), ((0, 1), 0.1)]);
        let m2 = map("b", &[((0, 0), -0.2), ((0, 1), 0.3)]);
        let s1 = select_heads(&[m1.clone(), m2.clone()], 2).unwrap();
        let s2 = select_heads(&[m2, m1], 2).unwrap();
        assert_eq!(s1, s2);
    }

    #[test]
    fn theta_is_exact_sum_and_linear() {
        let tca = TaskConditionedActivations {
            task_id: "t".into(),
            fingerprint: "f".into(),
            means: vec![
                (HeadLocation::new(0, 0), (vec![1.0, 2.0], 3)),
                (HeadLocation::new(1, 1), (vec![0.5, -1.0], 3)),
            ]
            .into_iter()
            .collect(),
            n_shots: 10,
            kept: 3,
            total: 3,
        };
        let s = CausalHeadSet {
            heads: vec![HeadLocation::new(0, 0), HeadLocation::new(1, 1)],
            k: 2,
            mean_ce: BTreeMap::new(),
        };
        let iv = extract_iv(&tca, &s).unwrap();
        assert_eq!(iv.theta, vec![1.5, 1.0]);
        assert_eq!(iv.recompute_theta(), iv.theta);

        // |S| = 1 -> theta equals that head's mean
        let s1 = CausalHeadSet {
            heads: vec![HeadLocation::new(1, 1)],
            k: 1,
            mean_ce: BTreeMap::new(),
        };
        assert_eq!(extract_iv(&tca, &s1).unwrap().theta, vec![0.5, -1.0]);

        // scaling every mean scales theta
        let mut scaled = tca.clone();
        for (_, (m, _)) in scaled.means.iter_mut() {
            for x in m.iter_mut() {
                *x *= 2.0;
            }
        }
        let iv2 = extract_iv(&scaled, &s).unwrap();
        assert_eq!(iv2.theta, vec![3.0, 2.0]);

        // missing head errors
        let bad = CausalHeadSet {
            heads: vec![HeadLocation::new(5, 5)],
            k: 1,
            mean_ce: BTreeMap::new(),
        };
        assert!(extract_iv(&tca, &bad).is_err());
    }
}
