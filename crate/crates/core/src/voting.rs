//! Per-eye aggregation of image predictions into one decision.

use std::fs;
use std::path::Path;

use indexmap::IndexMap;

use crate::data::{Eye, ImageRecord, Manifest, Split};
use crate::error::{Error, Result};
use crate::model::{ModelSpec, Parameters};
use crate::train::{predict_records, MetricsReport, DECISION_THRESHOLD};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VoteRule {
    /// Each image casts a thresholded vote; the majority decides.
    #[default]
    Majority,
    /// Threshold the mean probability instead of counting votes.
    MeanProbability,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TieRule {
    #[default]
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoteOptions {
    pub threshold: f64,
    pub rule: VoteRule,
    pub tie_rule: TieRule,
}

impl Default for VoteOptions {
    fn default() -> Self {
        VoteOptions {
            threshold: DECISION_THRESHOLD,
            rule: VoteRule::Majority,
            tie_rule: TieRule::Positive,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vote {
    pub votes: Vec<u8>,
    pub decision: u8,
    pub tie_broken: bool,
}

pub fn vote(probs: &[f32], opts: &VoteOptions) -> Result<Vote> {
    if probs.is_empty() {
        return Err(Error::param("cannot vote over zero predictions"));
    }
    if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::param(format!("probability {p} outside [0, 1]")));
    }
    let votes: Vec<u8> = probs
        .iter()
        .map(|&p| (p as f64 >= opts.threshold) as u8)
        .collect();
    let (decision, tie_broken) = match opts.rule {
        VoteRule::Majority => {
            let pos = votes.iter().filter(|&&v| v == 1).count();
            let neg = votes.len() - pos;
            if pos == neg {
                ((opts.tie_rule == TieRule::Positive) as u8, true)
            } else {
                ((pos > neg) as u8, false)
            }
        }
        VoteRule::MeanProbability => {
            let mean = probs.iter().map(|&p| p as f64).sum::<f64>() / probs.len() as f64;
            ((mean >= opts.threshold) as u8, false)
        }
    };
    Ok(Vote {
        votes,
        decision,
        tie_broken,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupPrediction {
    pub patient_id: String,
    pub eye: Eye,
    pub probabilities: Vec<f32>,
    pub votes: Vec<u8>,
    pub decision: u8,
    pub tie_broken: bool,
    pub label: u8,
}

/// Groups records by `(patient_id, eye)` in first-appearance order and votes
/// within each group. `probs[i]` belongs to `records[i]`.
pub fn group_predictions(
    records: &[&ImageRecord],
    probs: &[f32],
    opts: &VoteOptions,
) -> Result<Vec<GroupPrediction>> {
    if records.len() != probs.len() {
        return Err(Error::shape(format!(
            "{} records but {} predictions",
            records.len(),
            probs.len()
        )));
    }
    let mut groups: IndexMap<(&str, Eye), (i64, Vec<f32>)> = IndexMap::new();
    for (r, &p) in records.iter().zip(probs) {
        let entry = groups.entry(r.group()).or_insert((r.label, Vec::new()));
        if entry.0 != r.label {
            return Err(Error::Data(format!(
                "group ({}, {}) mixes labels {} and {}",
                r.patient_id, r.eye, entry.0, r.label
            )));
        }
        entry.1.push(p);
    }
    groups
        .into_iter()
        .map(|((pid, eye), (label, probabilities))| {
            let v = vote(&probabilities, opts)?;
            Ok(GroupPrediction {
                patient_id: pid.to_owned(),
                eye,
                probabilities,
                votes: v.votes,
                decision: v.decision,
                tie_broken: v.tie_broken,
                label: label as u8,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupedReport {
    /// One sample per `(patient, eye)` group.
    pub eye_level: MetricsReport,
    pub image_level: MetricsReport,
    pub groups: Vec<GroupPrediction>,
}

pub fn grouped_report(records: &[&ImageRecord], probs: &[f32], opts: &VoteOptions) -> Result<GroupedReport> {
    let groups = group_predictions(records, probs, opts)?;
    let labels: Vec<u8> = groups.iter().map(|g| g.label).collect();
    let decisions: Vec<u8> = groups.iter().map(|g| g.decision).collect();
    let img_votes: Vec<u8> = groups.iter().flat_map(|g| g.votes.clone()).collect();
    let img_labels: Vec<u8> = groups
        .iter()
        .flat_map(|g| std::iter::repeat_n(g.label, g.votes.len()))
        .collect();
    Ok(GroupedReport {
        eye_level: MetricsReport::from_decisions(&labels, &decisions)?,
        image_level: MetricsReport::from_decisions(&img_labels, &img_votes)?,
        groups,
    })
}

/// Scores every image of `split`, votes per eye and reports both levels.
pub fn evaluate_grouped(
    spec: &ModelSpec,
    params: &Parameters,
    manifest: &Manifest,
    split: Split,
    opts: &VoteOptions,
) -> Result<GroupedReport> {
    let records: Vec<&ImageRecord> = manifest.in_split(split).collect();
    if records.is_empty() {
        return Err(Error::Data(format!("manifest has no {split} rows")));
    }
    for r in &records {
        if r.label != 0 && r.label != 1 {
            return Err(Error::Data(format!(
                "label {} on {} is not 0 or 1",
                r.label,
                r.path.display()
            )));
        }
    }
    let probs = predict_records(spec, params, manifest, &records)?;
    grouped_report(&records, &probs, opts)
}

pub const GROUPS_HEADER: [&str; 6] = [
    "patient_id",
    "eye",
    "n_images",
    "n_positive_votes",
    "decision",
    "label",
];

pub fn export_groups_csv(groups: &[GroupPrediction], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(&mut buf);
        w.write_record(GROUPS_HEADER)?;
        for g in groups {
            w.write_record([
                g.patient_id.clone(),
                g.eye.to_string(),
                g.votes.len().to_string(),
                g.votes.iter().filter(|&&v| v == 1).count().to_string(),
                g.decision.to_string(),
                g.label.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Probability that a strict majority of `k` independent voters, each wrong
/// with probability `e`, is wrong: `sum_{j > k/2} C(k, j) e^j (1-e)^(k-j)`.
/// Even `k` ties count as wrong with probability one half.
pub fn majority_error(e: f64, k: usize) -> f64 {
    let mut total = 0.0;
    let mut binom = 1.0f64;
    for j in 0..=k {
        if j > 0 {
            binom = binom * (k - j + 1) as f64 / j as f64;
        }
        let p = binom * e.powi(j as i32) * (1.0 - e).powi((k - j) as i32);
        if 2 * j > k {
            total += p;
        } else if 2 * j == k {
            total += 0.5 * p;
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Quality;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn decide(p: &[f32]) -> Vote {
        vote(p, &VoteOptions::default()).unwrap()
    }

    #[test]
    fn majority_examples() {
        let v = decide(&[0.9, 0.8, 0.2]);
        assert_eq!((v.votes, v.decision, v.tie_broken), (vec![1, 1, 0], 1, false));
        let v = decide(&[0.9, 0.1]);
        assert_eq!((v.decision, v.tie_broken), (1, true));
        assert_eq!(decide(&[0.1, 0.2, 0.3]).decision, 0);
        let neg = VoteOptions {
            tie_rule: TieRule::Negative,
            ..Default::default()
        };
        assert_eq!(vote(&[0.9, 0.1], &neg).unwrap().decision, 0);
    }

    #[test]
    fn mean_probability_mode() {
        let o = VoteOptions {
            rule: VoteRule::MeanProbability,
            ..Default::default()
        };
        // Two weak positives lose to one confident negative.
        assert_eq!(vote(&[0.55, 0.55, 0.0], &o).unwrap().decision, 0);
        assert_eq!(decide(&[0.55, 0.55, 0.0]).decision, 1);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            vote(&[], &VoteOptions::default()),
            Err(Error::Parameter(_))
        ));
        assert!(vote(&[1.5], &VoteOptions::default()).is_err());
    }

    fn rec(pid: &str, eye: Eye, label: i64) -> ImageRecord {
        ImageRecord {
            path: format!("{pid}{eye}{label}.ppm").into(),
            patient_id: pid.into(),
            eye,
            label,
            quality: Quality::High,
            split: Split::Test,
        }
    }

    #[test]
    fn majority_repairs_one_error_and_size_one_groups_match_images() {
        let rs = [rec("a", Eye::Left, 1), rec("a", Eye::Left, 1), rec("a", Eye::Left, 1)];
        let refs: Vec<&ImageRecord> = rs.iter().collect();
        let r = grouped_report(&refs, &[0.9, 0.2, 0.7], &VoteOptions::default()).unwrap();
        assert_eq!(r.eye_level.accuracy, 1.0);
        assert!((r.image_level.accuracy - 2.0 / 3.0).abs() < 1e-12);

        let rs = [rec("a", Eye::Left, 1), rec("a", Eye::Right, 0), rec("b", Eye::Left, 1)];
        let refs: Vec<&ImageRecord> = rs.iter().collect();
        let r = grouped_report(&refs, &[0.9, 0.7, 0.2], &VoteOptions::default()).unwrap();
        assert_eq!(r.eye_level, r.image_level);
    }

    #[test]
    fn inconsistent_group_is_named() {
        let rs = [rec("zed", Eye::Right, 1), rec("zed", Eye::Right, 0)];
        let refs: Vec<&ImageRecord> = rs.iter().collect();
        match group_predictions(&refs, &[0.1, 0.2], &VoteOptions::default()) {
            Err(Error::Data(m)) => assert!(m.contains("zed") && m.contains('R')),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn groups_csv() {
        let rs = [rec("a", Eye::Left, 1), rec("a", Eye::Left, 1), rec("b", Eye::Right, 0)];
        let refs: Vec<&ImageRecord> = rs.iter().collect();
        let g = group_predictions(&refs, &[0.9, 0.4, 0.3], &VoteOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.csv");
        export_groups_csv(&g, &p).unwrap();
        assert_eq!(
            fs::read_to_string(&p).unwrap(),
            "patient_id,eye,n_images,n_positive_votes,decision,label\na,L,2,1,1,1\nb,R,1,0,0,0\n"
        );
    }

    #[test]
    fn binomial_tail_matches_simulation() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for &(e, k) in &[(0.1, 3), (0.3, 3), (0.2, 5), (0.45, 7)] {
            let trials = 10_000;
            let mut wrong = 0;
            for _ in 0..trials {
                // label 1; each image independently wrong with prob e
                let probs: Vec<f32> = (0..k)
                    .map(|_| if rng.random_bool(e) { 0.1 } else { 0.9 })
                    .collect();
                if decide(&probs).decision == 0 {
                    wrong += 1;
                }
            }
            let sim = wrong as f64 / trials as f64;
            assert!((sim - majority_error(e, k)).abs() <= 0.02, "e={e} k={k}: {sim}");
        }
        assert!((majority_error(0.1, 3) - (3.0 * 0.01 * 0.9 + 0.001)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn permutation_invariant(mut p in proptest::collection::vec(0.0f32..=1.0, 1..9), seed in any::<u64>()) {
            let a = decide(&p);
            use rand::seq::SliceRandom;
            p.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let b = decide(&p);
            prop_assert_eq!((a.decision, a.tie_broken), (b.decision, b.tie_broken));
        }

        #[test]
        fn raising_a_probability_never_flips_to_negative(
            p in proptest::collection::vec(0.0f32..=1.0, 1..9),
            i in any::<prop::sample::Index>(),
            bump in 0.0f32..=1.0,
        ) {
            let before = decide(&p).decision;
            let mut q = p.clone();
            let j = i.index(q.len());
            q[j] = (q[j] + bump).min(1.0);
            prop_assert!(decide(&q).decision >= before);
        }
    }
}
