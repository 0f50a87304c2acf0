use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::manifest::{Eye, Manifest, Split};
use crate::error::{Error, Result};

/// Assigns whole `(patient_id, eye)` groups to the test split, in seeded
/// shuffled order, until the test split holds at least
/// `test_fraction * total` images. Everything else becomes train.
pub fn split(manifest: &Manifest, test_fraction: f64, seed: u64) -> Result<Manifest> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::param(format!(
            "test fraction must lie strictly between 0 and 1, got {test_fraction}"
        )));
    }
    let mut groups: IndexMap<(String, Eye), Vec<usize>> = IndexMap::new();
    for (i, r) in manifest.records.iter().enumerate() {
        groups
            .entry((r.patient_id.clone(), r.eye))
            .or_default()
            .push(i);
    }
    if groups.len() < 2 {
        return Err(Error::Split(format!(
            "{} (patient, eye) group(s) cannot fill both splits",
            groups.len()
        )));
    }

    let mut order: Vec<usize> = (0..groups.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let target = test_fraction * manifest.len() as f64;
    let mut out = manifest.clone();
    for r in &mut out.records {
        r.split = Split::Train;
    }
    let mut test_count = 0usize;
    let mut test_groups = 0usize;
    for g in order {
        if test_count as f64 >= target {
            break;
        }
        for &i in &groups[g] {
            out.records[i].split = Split::Test;
        }
        test_count += groups[g].len();
        test_groups += 1;
    }
    if test_groups == groups.len() {
        return Err(Error::Split(format!(
            "test fraction {test_fraction} leaves no group for training"
        )));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::manifest::{ImageRecord, Provenance, Quality};
    use std::collections::HashMap;

    pub(crate) fn grouped(patients: usize, per_eye: &[usize]) -> Manifest {
        let mut m = Manifest::new("/m", Provenance::Synthetic);
        for p in 0..patients {
            for (e, eye) in [Eye::Left, Eye::Right].into_iter().enumerate() {
                let k = per_eye[(2 * p + e) % per_eye.len()];
                for i in 0..k {
                    m.records.push(ImageRecord {
                        path: format!("p{p}{eye}{i}.ppm").into(),
                        patient_id: format!("p{p}"),
                        eye,
                        label: 0,
                        quality: Quality::High,
                        split: Split::Unassigned,
                    });
                }
            }
        }
        m
    }

    fn check_hygiene(m: &Manifest) {
        let mut seen: HashMap<(String, Eye), Split> = HashMap::new();
        for r in &m.records {
            let s = seen.entry((r.patient_id.clone(), r.eye)).or_insert(r.split);
            assert_eq!(*s, r.split);
        }
    }

    #[test]
    fn ten_patients_four_images() {
        // 10 patients x 2 eyes x 2 images = 40 images in groups of 2.
        let m = grouped(10, &[2]);
        let s = split(&m, 0.2, 1).unwrap();
        assert_eq!(s.in_split(Split::Test).count(), 8);
        check_hygiene(&s);
        assert_eq!(s, split(&m, 0.2, 1).unwrap());
    }

    #[test]
    fn greedy_overshoot_is_below_one_group() {
        // 10 patients x 2 eyes = 20 groups of 5 -> 100 images.
        let m = grouped(10, &[5]);
        for seed in 0..20 {
            let s = split(&m, 0.3, seed).unwrap();
            let n = s.in_split(Split::Test).count();
            assert!((30..35).contains(&n), "{n}");
            check_hygiene(&s);
        }
    }

    #[test]
    fn degenerate_inputs() {
        let m = grouped(1, &[3, 0]);
        assert!(matches!(split(&m, 0.2, 0), Err(Error::Split(_))));
        let m = grouped(3, &[2]);
        assert!(matches!(split(&m, 0.0, 0), Err(Error::Parameter(_))));
        assert!(matches!(split(&m, 1.0, 0), Err(Error::Parameter(_))));
        let m = grouped(1, &[2]);
        assert!(matches!(split(&m, 0.9, 0), Err(Error::Split(_))));
    }
}
