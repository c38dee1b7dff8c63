//! Accuracy and average-precision evaluation.
//!
//! Accuracy uses a fixed decision threshold. Generators sharing an
//! architecture group are averaged into one merged type before the ID / OOD /
//! Total means, which are unweighted over merged types. Global AP equalizes
//! the test pool by seeded resampling before ranking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no samples")]
    Empty,
    #[error("{0} pool needs both classes to rank")]
    SingleClass(&'static str),
    #[error("sample for generator {0} has a non-finite probability")]
    NonFinite(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Id,
    Ood,
}

#[derive(Clone, Debug)]
pub struct ScoredSample {
    pub probability: f64,
    /// 0 real, 1 fake.
    pub label: u8,
    pub generator_id: String,
    pub architecture_group: String,
    pub domain: Domain,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AccuracySummary {
    pub per_generator: BTreeMap<String, f64>,
    /// One entry per architecture group, members averaged unweighted.
    pub per_type: BTreeMap<String, f64>,
    pub id_mean: Option<f64>,
    pub ood_mean: Option<f64>,
    pub total_mean: f64,
}

pub fn mean_accuracy(
    samples: &[ScoredSample],
    threshold: f64,
) -> Result<AccuracySummary, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut hits: BTreeMap<&str, (u64, u64)> = BTreeMap::new();
    let mut group_of: BTreeMap<&str, (&str, Domain)> = BTreeMap::new();
    for s in samples {
        if !s.probability.is_finite() {
            return Err(MetricsError::NonFinite(s.generator_id.clone()));
        }
        let predicted_fake = s.probability > threshold;
        let correct = predicted_fake == (s.label == 1);
        let e = hits.entry(&s.generator_id).or_insert((0, 0));
        e.0 += correct as u64;
        e.1 += 1;
        let entry = group_of
            .entry(&s.generator_id)
            .or_insert((&s.architecture_group, s.domain));
        // a type counts as ID as soon as any member sample is ID
        if s.domain == Domain::Id {
            entry.1 = Domain::Id;
        }
    }
    let per_generator: BTreeMap<String, f64> = hits
        .iter()
        .map(|(g, (c, n))| (g.to_string(), *c as f64 / *n as f64))
        .collect();
    let mut type_members: BTreeMap<&str, (f64, u32, Domain)> = BTreeMap::new();
    for (gen, (group, domain)) in &group_of {
        let acc = per_generator[*gen];
        let e = type_members.entry(group).or_insert((0.0, 0, Domain::Ood));
        e.0 += acc;
        e.1 += 1;
        if *domain == Domain::Id {
            e.2 = Domain::Id;
        }
    }
    let mut per_type = BTreeMap::new();
    let (mut id_sum, mut id_n, mut ood_sum, mut ood_n) = (0.0, 0u32, 0.0, 0u32);
    for (group, (sum, n, domain)) in &type_members {
        let acc = sum / *n as f64;
        per_type.insert(group.to_string(), acc);
        match domain {
            Domain::Id => {
                id_sum += acc;
                id_n += 1;
            }
            Domain::Ood => {
                ood_sum += acc;
                ood_n += 1;
            }
        }
    }
    let total_mean = (id_sum + ood_sum) / (id_n + ood_n) as f64;
    Ok(AccuracySummary {
        per_generator,
        per_type,
        id_mean: (id_n > 0).then(|| id_sum / id_n as f64),
        ood_mean: (ood_n > 0).then(|| ood_sum / ood_n as f64),
        total_mean,
    })
}

/// Ranked by probability descending, ties kept in input order; the score is
/// the mean over positives of the precision at each positive's rank.
pub fn average_precision(pairs: &[(f64, u8)]) -> Result<f64, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::Empty);
    }
    let positives = pairs.iter().filter(|(_, l)| *l == 1).count();
    if positives == 0 || positives == pairs.len() {
        return Err(MetricsError::SingleClass("ranking"));
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by(|&a, &b| {
        pairs[b].0.partial_cmp(&pairs[a].0).unwrap().then(a.cmp(&b))
    });
    let mut hits = 0u64;
    let mut sum = 0.0f64;
    for (rank0, &i) in order.iter().enumerate() {
        if pairs[i].1 == 1 {
            hits += 1;
            sum += hits as f64 / (rank0 as f64 + 1.0);
        }
    }
    Ok(sum / positives as f64)
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct GlobalAp {
    pub id: Option<f64>,
    pub ood: Option<f64>,
    pub total: f64,
}

/// Three-step equalized AP.
///
/// Step 1 tops up each generator inside an architecture group to the group's
/// largest member by drawing with replacement, then merges the group. Step 2
/// tops up each merged type to the largest type the same way. Step 3 ranks the
/// ID, OOD, and Total pools. Draw order is fixed: groups in lexicographic
/// order, members in lexicographic order, then types in lexicographic order,
/// all from one generator seeded with `resample_seed`; pools already at their
/// target size consume no draws.
pub fn global_ap(samples: &[ScoredSample], resample_seed: u64) -> Result<GlobalAp, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::Empty);
    }
    for s in samples {
        if !s.probability.is_finite() {
            return Err(MetricsError::NonFinite(s.generator_id.clone()));
        }
    }
    let mut groups: BTreeMap<&str, BTreeMap<&str, Vec<usize>>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        groups
            .entry(&s.architecture_group)
            .or_default()
            .entry(&s.generator_id)
            .or_default()
            .push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(resample_seed);
    let mut types: Vec<(Domain, Vec<usize>)> = Vec::new();
    for members in groups.values() {
        let target = members.values().map(Vec::len).max().unwrap();
        let mut pool = Vec::new();
        let mut domain = Domain::Ood;
        for indices in members.values() {
            pool.extend_from_slice(indices);
            for _ in indices.len()..target {
                pool.push(indices[rng.gen_range(0..indices.len())]);
            }
        }
        if pool.iter().any(|&i| samples[i].domain == Domain::Id) {
            domain = Domain::Id;
        }
        types.push((domain, pool));
    }
    let type_target = types.iter().map(|(_, p)| p.len()).max().unwrap();
    for (_, pool) in types.iter_mut() {
        let original = pool.len();
        for _ in original..type_target {
            pool.push(pool[rng.gen_range(0..original)]);
        }
    }
    let collect = |want: Option<Domain>| -> Vec<(f64, u8)> {
        types
            .iter()
            .filter(|(d, _)| want.is_none_or(|w| *d == w))
            .flat_map(|(_, pool)| pool.iter().map(|&i| (samples[i].probability, samples[i].label)))
            .collect()
    };
    let id_pool = collect(Some(Domain::Id));
    let ood_pool = collect(Some(Domain::Ood));
    Ok(GlobalAp {
        id: if id_pool.is_empty() { None } else { Some(average_precision(&id_pool)?) },
        ood: if ood_pool.is_empty() { None } else { Some(average_precision(&ood_pool)?) },
        total: average_precision(&collect(None))?,
    })
}

/// Everything one evaluation emits: thresholded accuracies at every level of
/// aggregation plus the equalized AP triple.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub threshold: f64,
    pub resample_seed: u64,
    pub per_generator_accuracy: BTreeMap<String, f64>,
    pub merged_generator_accuracy: BTreeMap<String, f64>,
    pub id_mean_acc: Option<f64>,
    pub ood_mean_acc: Option<f64>,
    pub total_mean_acc: f64,
    pub id_ap: Option<f64>,
    pub ood_ap: Option<f64>,
    pub total_ap: f64,
}

pub fn eval_report(
    samples: &[ScoredSample],
    threshold: f64,
    resample_seed: u64,
) -> Result<EvalReport, MetricsError> {
    let acc = mean_accuracy(samples, threshold)?;
    let ap = global_ap(samples, resample_seed)?;
    Ok(EvalReport {
        threshold,
        resample_seed,
        per_generator_accuracy: acc.per_generator,
        merged_generator_accuracy: acc.per_type,
        id_mean_acc: acc.id_mean,
        ood_mean_acc: acc.ood_mean,
        total_mean_acc: acc.total_mean,
        id_ap: ap.id,
        ood_ap: ap.ood,
        total_ap: ap.total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(gen: &str, group: &str, domain: Domain, label: u8, p: f64) -> ScoredSample {
        ScoredSample {
            probability: p,
            label,
            generator_id: gen.into(),
            architecture_group: group.into(),
            domain,
        }
    }

    /// n samples for one generator, `correct` of them classified right.
    fn gen_block(
        gen: &str,
        group: &str,
        domain: Domain,
        n: u32,
        correct: u32,
    ) -> Vec<ScoredSample> {
        (0..n)
            .map(|i| {
                let label = (i % 2) as u8;
                let right = i < correct;
                let p = match (label, right) {
                    (1, true) | (0, false) => 0.9,
                    _ => 0.1,
                };
                sample(gen, group, domain, label, p)
            })
            .collect()
    }

    #[test]
    fn architecture_groups_merge_before_the_mean() {
        let mut samples = gen_block("sd_a", "sd", Domain::Id, 10, 9);
        samples.extend(gen_block("sd_b", "sd", Domain::Id, 10, 7));
        samples.extend(gen_block("x", "x", Domain::Id, 10, 8));
        let r = mean_accuracy(&samples, 0.5).unwrap();
        assert_eq!(r.per_generator["sd_a"], 0.9);
        assert_eq!(r.per_type["sd"], 0.8);
        assert_eq!(r.total_mean, 0.8);
        assert_eq!(r.id_mean, Some(0.8));
        assert_eq!(r.ood_mean, None);
    }

    #[test]
    fn total_mean_weighs_merged_types_equally() {
        // 8 ID types at 0.966 and 12 OOD types at 0.867 average to 0.9066,
        // i.e. 0.907 at three decimals
        let mut samples = Vec::new();
        for i in 0..8 {
            samples.extend(gen_block(&format!("id{i}"), &format!("id{i}"), Domain::Id, 500, 483));
        }
        for i in 0..12 {
            samples.extend(gen_block(
                &format!("ood{i}"),
                &format!("ood{i}"),
                Domain::Ood,
                1000,
                867,
            ));
        }
        let r = mean_accuracy(&samples, 0.5).unwrap();
        assert!((r.id_mean.unwrap() - 0.966).abs() < 1e-12);
        assert!((r.ood_mean.unwrap() - 0.867).abs() < 1e-12);
        assert!((r.total_mean - 0.9066).abs() < 1e-12);
        assert_eq!((r.total_mean * 1000.0).round() / 1000.0, 0.907);
    }

    #[test]
    fn accuracy_is_order_and_duplication_invariant() {
        let mut samples = gen_block("a", "a", Domain::Id, 8, 6);
        samples.extend(gen_block("b", "b", Domain::Ood, 8, 4));
        let baseline = mean_accuracy(&samples, 0.5).unwrap();
        samples.reverse();
        let reversed = mean_accuracy(&samples, 0.5).unwrap();
        assert_eq!(baseline.total_mean, reversed.total_mean);
        let dup: Vec<_> =
            samples.iter().cloned().chain(gen_block("b", "b", Domain::Ood, 8, 4)).collect();
        assert_eq!(mean_accuracy(&dup, 0.5).unwrap().total_mean, baseline.total_mean);
    }

    #[test]
    fn ap_worked_examples() {
        assert!(
            (average_precision(&[(0.9, 1), (0.8, 0), (0.3, 1)]).unwrap() - (1.0 + 2.0 / 3.0) / 2.0)
                .abs()
                < 1e-15
        );
        assert_eq!(
            average_precision(&[(0.9, 0), (0.8, 0), (0.7, 0), (0.1, 1)]).unwrap(),
            0.25
        );
        assert_eq!(average_precision(&[(0.9, 1), (0.8, 1), (0.2, 0)]).unwrap(), 1.0);
    }

    #[test]
    fn ap_ties_resolve_in_input_order() {
        assert_eq!(average_precision(&[(0.5, 0), (0.5, 1)]).unwrap(), 0.5);
        assert_eq!(average_precision(&[(0.5, 1), (0.5, 0)]).unwrap(), 1.0);
    }

    #[test]
    fn ap_is_invariant_under_monotone_score_maps() {
        let pairs = [(0.9, 1), (0.7, 0), (0.6, 1), (0.2, 0), (0.1, 1)];
        let mapped: Vec<(f64, u8)> = pairs.iter().map(|&(p, l)| (p / 2.0 + 0.3, l)).collect();
        assert_eq!(
            average_precision(&pairs).unwrap(),
            average_precision(&mapped).unwrap()
        );
    }

    #[test]
    fn ap_rejects_degenerate_inputs() {
        assert!(matches!(average_precision(&[]), Err(MetricsError::Empty)));
        assert!(matches!(
            average_precision(&[(0.5, 1), (0.4, 1)]),
            Err(MetricsError::SingleClass(_))
        ));
    }

    #[test]
    fn global_ap_is_plain_ap_when_already_balanced() {
        let mut samples = gen_block("a", "a", Domain::Id, 10, 9);
        samples.extend(gen_block("b", "b", Domain::Ood, 10, 5));
        let pairs: Vec<(f64, u8)> = samples.iter().map(|s| (s.probability, s.label)).collect();
        let g = global_ap(&samples, 999).unwrap();
        assert_eq!(g.total, average_precision(&pairs).unwrap());
    }

    #[test]
    fn global_ap_is_deterministic_and_rebalances() {
        let mut samples = gen_block("tiny", "tiny", Domain::Id, 10, 10);
        samples.extend(gen_block("huge", "huge", Domain::Id, 400, 200));
        let a = global_ap(&samples, 5).unwrap();
        let b = global_ap(&samples, 5).unwrap();
        assert_eq!(a.total, b.total);
        // unweighted mean of per-generator APs is a different quantity
        let per_gen_mean = (average_precision(
            &samples[..10].iter().map(|s| (s.probability, s.label)).collect::<Vec<_>>(),
        )
        .unwrap()
            + average_precision(
                &samples[10..].iter().map(|s| (s.probability, s.label)).collect::<Vec<_>>(),
            )
            .unwrap())
            / 2.0;
        assert!((a.total - per_gen_mean).abs() > 1e-3);
    }

    #[test]
    fn global_ap_upsamples_group_members_to_the_largest() {
        let mut samples = gen_block("v1", "fam", Domain::Ood, 6, 6);
        samples.extend(gen_block("v2", "fam", Domain::Ood, 30, 15));
        samples.extend(gen_block("solo", "solo", Domain::Id, 60, 58));
        let g = global_ap(&samples, 11).unwrap();
        assert!(g.total > 0.0 && g.total <= 1.0);
        assert!(g.id.unwrap() > g.ood.unwrap());
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(mean_accuracy(&[], 0.5), Err(MetricsError::Empty)));
        assert!(matches!(global_ap(&[], 1), Err(MetricsError::Empty)));
    }

    #[test]
    fn ap_averaged_over_every_ranking_at_least_matches_prevalence() {
        // Fix descending scores and walk every arrangement of k positives
        // among n = 12 slots: individual rankings may dip below prevalence,
        // the mean over rankings may not.
        let n = 12usize;
        for k in 1..n {
            let mut total = 0.0;
            let mut count = 0u64;
            for mask in 0u32..(1 << n) {
                if mask.count_ones() as usize != k {
                    continue;
                }
                let pairs: Vec<(f64, u8)> = (0..n)
                    .map(|i| ((n - i) as f64, u8::from(mask >> i & 1 == 1)))
                    .collect();
                let ap = average_precision(&pairs).unwrap();
                assert!((0.0..=1.0 + 1e-12).contains(&ap));
                total += ap;
                count += 1;
            }
            let prevalence = k as f64 / n as f64;
            assert!(
                total / count as f64 >= prevalence - 1e-12,
                "k={k}: mean {} < prevalence {prevalence}",
                total / count as f64
            );
        }
    }

    #[test]
    fn eval_report_collects_accuracy_and_ap_consistently() {
        let mut samples = gen_block("a", "a", Domain::Id, 10, 9);
        samples.extend(gen_block("b", "b", Domain::Ood, 10, 7));
        let report = eval_report(&samples, 0.5, 3).unwrap();
        let acc = mean_accuracy(&samples, 0.5).unwrap();
        let ap = global_ap(&samples, 3).unwrap();
        assert_eq!(report.id_mean_acc, acc.id_mean);
        assert_eq!(report.ood_mean_acc, acc.ood_mean);
        assert_eq!(report.total_mean_acc, acc.total_mean);
        assert_eq!(report.total_ap, ap.total);
        assert_eq!(report.per_generator_accuracy.len(), 2);
        assert_eq!(report.merged_generator_accuracy.len(), 2);
        assert_eq!(report.threshold, 0.5);
        assert_eq!(report.resample_seed, 3);
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains("total_mean_acc"));
    }
}
