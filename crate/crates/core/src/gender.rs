use std::collections::BTreeMap;

use crate::manifest::{GenderLabel, GenderVote, Manifest};

pub const DEFAULT_AGREEMENT: f64 = 0.75;

/// Assigns a subject-level gender from per-image predictor votes.
///
/// A label is assigned when it covers at least `agreement` of the subject's
/// known (non-`unknown`) votes. Subjects with no known votes, or where
/// neither label reaches the agreement level, become `needs_review`.
pub fn assign_gender(manifest: Manifest, agreement: f64) -> Manifest {
    let labels = gender_labels(&manifest, agreement);
    manifest.with_gender_labels(labels)
}

pub fn gender_labels(manifest: &Manifest, agreement: f64) -> BTreeMap<String, GenderLabel> {
    manifest
        .subjects()
        .keys()
        .map(|subject| {
            let (mut male, mut female) = (0usize, 0usize);
            for r in manifest.subject_records(subject) {
                match r.gender_vote {
                    GenderVote::Male => male += 1,
                    GenderVote::Female => female += 1,
                    GenderVote::Unknown => {}
                }
            }
            (subject.clone(), label_for_votes(male, female, agreement))
        })
        .collect()
}

fn label_for_votes(male: usize, female: usize, agreement: f64) -> GenderLabel {
    let known = male + female;
    if known == 0 || male == female {
        return GenderLabel::NeedsReview;
    }
    let (count, label) = if male > female {
        (male, GenderLabel::Male)
    } else {
        (female, GenderLabel::Female)
    };
    if count as f64 / known as f64 >= agreement {
        label
    } else {
        GenderLabel::NeedsReview
    }
}

/// Overrides computed labels with manually assigned ones. Overrides for
/// subjects absent from the manifest are ignored.
pub fn apply_overrides(manifest: Manifest, overrides: &BTreeMap<String, GenderLabel>) -> Manifest {
    let mut labels = manifest.gender_labels().clone();
    for (subject, label) in overrides {
        if let Some(slot) = labels.get_mut(subject) {
            *slot = *label;
        }
    }
    manifest.with_gender_labels(labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::ImageRecord;
    use proptest::prelude::*;

    fn subject_with(subject: &str, votes: &[GenderVote]) -> Vec<ImageRecord> {
        votes
            .iter()
            .enumerate()
            .map(|(i, &v)| ImageRecord {
                image_id: format!("{subject}_{i:03}"),
                subject_id: subject.into(),
                embedding_index: i,
                roll: 0.0,
                pitch: 0.0,
                yaw: 0.0,
                gender_vote: v,
                source_path: String::new(),
            })
            .collect()
    }

    fn votes(male: usize, female: usize, unknown: usize) -> Vec<GenderVote> {
        let mut v = vec![GenderVote::Male; male];
        v.extend(vec![GenderVote::Female; female]);
        v.extend(vec![GenderVote::Unknown; unknown]);
        v
    }

    fn label_of(v: &[GenderVote]) -> GenderLabel {
        let m = Manifest::new(subject_with("S", v)).unwrap();
        assign_gender(m, DEFAULT_AGREEMENT)
            .gender_label("S")
            .unwrap()
    }

    #[test]
    fn eight_of_ten_is_male() {
        assert_eq!(label_of(&votes(8, 2, 0)), GenderLabel::Male);
    }

    #[test]
    fn unanimous() {
        assert_eq!(label_of(&votes(10, 0, 0)), GenderLabel::Male);
        assert_eq!(label_of(&votes(0, 4, 0)), GenderLabel::Female);
    }

    #[test]
    fn seven_of_ten_needs_review() {
        assert_eq!(label_of(&votes(7, 3, 0)), GenderLabel::NeedsReview);
    }

    #[test]
    fn exactly_three_quarters_passes() {
        assert_eq!(label_of(&votes(1, 3, 0)), GenderLabel::Female);
    }

    #[test]
    fn unknown_votes_excluded_from_denominator() {
        assert_eq!(label_of(&votes(3, 1, 20)), GenderLabel::Male);
        assert_eq!(label_of(&votes(0, 0, 5)), GenderLabel::NeedsReview);
    }

    #[test]
    fn overrides_replace_needs_review() {
        let m = assign_gender(
            Manifest::new(subject_with("S", &votes(5, 5, 0))).unwrap(),
            0.75,
        );
        assert_eq!(m.unlabeled_subjects(), vec!["S".to_string()]);
        let m = apply_overrides(
            m,
            &[
                ("S".into(), GenderLabel::Female),
                ("ghost".into(), GenderLabel::Male),
            ]
            .into(),
        );
        assert_eq!(m.gender_label("S"), Some(GenderLabel::Female));
        assert!(m.unlabeled_subjects().is_empty());
        assert_eq!(m.gender_labels().len(), 1);
    }

    proptest! {
        #[test]
        fn invariant_under_record_permutation(
            raw in prop::collection::vec(0u8..3, 1..40),
            shuffle_seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let v: Vec<GenderVote> = raw.iter().map(|x| match x {
                0 => GenderVote::Male, 1 => GenderVote::Female, _ => GenderVote::Unknown,
            }).collect();
            let mut records = subject_with("S", &v);
            let base = assign_gender(Manifest::new(records.clone()).unwrap(), 0.75);
            records.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(shuffle_seed));
            let shuffled = assign_gender(Manifest::new(records).unwrap(), 0.75);
            prop_assert_eq!(base.gender_labels(), shuffled.gender_labels());
        }
    }
}
