use patient_graph::cohort::{
    binarize_survival, binarized_name, generate_synthetic_cohort, load_cohort, save_cohort, SyntheticSpec, OS,
};
use patient_graph::{Cohort, Outcome, PatientRecord, SurvivalOutcome, Task};
use proptest::prelude::*;
use std::collections::BTreeMap;

fn survival_cohort(rows: &[(f64, bool, f64)]) -> Cohort {
    let patients = rows
        .iter()
        .enumerate()
        .map(|(i, &(t, e, x))| {
            let mut outcomes = BTreeMap::new();
            outcomes.insert(OS.to_string(), Outcome::Survival(SurvivalOutcome::new(t, e).unwrap()));
            PatientRecord {
                id: format!("P{i}"),
                features: vec![x],
                outcomes,
            }
        })
        .collect();
    Cohort::new(patients, vec!["f0".into()]).unwrap()
}

fn rows() -> impl Strategy<Value = Vec<(f64, bool, f64)>> {
    // whole days so the threshold boundary gets hit
    prop::collection::vec(((1u32..1500).prop_map(f64::from), any::<bool>(), -5.0..5.0f64), 1..60)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn binarization_drops_only_early_censoring(rows in rows(), threshold in prop::sample::select(vec![365.0, 730.0, 1000.0])) {
        let cohort = survival_cohort(&rows);
        let out = binarize_survival(&cohort, OS, threshold).unwrap();
        let name = binarized_name(OS);
        for p in out.cohort.patients() {
            let s = p.survival(OS).unwrap();
            prop_assert!(s.event || s.time_days > threshold);
            let label = p.binary(&name).unwrap().label();
            prop_assert_eq!(label == 1, s.time_days <= threshold);
        }
        prop_assert_eq!(out.cohort.len() + out.excluded.len(), cohort.len());
        let expected = rows.iter().filter(|(t, e, _)| !e && *t <= threshold).count();
        prop_assert_eq!(out.excluded.len(), expected);
    }

    #[test]
    fn save_then_load_is_identity(n in 5usize..40, p in 1usize..6, survival in any::<bool>(), seed in any::<u64>()) {
        let task = if survival { Task::Survival } else { Task::Classification };
        let spec = SyntheticSpec::with_leading_signal(n, p, task, &[1.0, -0.5], 0.3, seed);
        let cohort = generate_synthetic_cohort(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (f, e) = (dir.path().join("f.csv"), dir.path().join("e.csv"));
        save_cohort(&cohort, &f, &e).unwrap();
        let back = load_cohort(&f, &e).unwrap();
        prop_assert_eq!(back, cohort);
    }

    #[test]
    fn synthetic_generation_is_pure(n in 2usize..50, p in 1usize..8, seed in any::<u64>()) {
        let spec = SyntheticSpec::with_leading_signal(n, p, Task::Survival, &[2.0], 0.3, seed);
        let a = generate_synthetic_cohort(&spec).unwrap();
        let b = generate_synthetic_cohort(&spec.clone()).unwrap();
        prop_assert_eq!(a, b);
    }
}
