use super::*;
use crate::pipeline::{recording_instances, schema_from_recordings, PipelineConfig};

fn quiet(spec: &mut SynthSpec) {
    spec.noise_sigma = 0.0;
    spec.co_occurrence_rate = 0.0;
    spec.n_contexts = 0;
}

#[test]
fn spec_errors() {
    let mut s = SynthSpec::standard(3, 3, 1, 10, 0);
    s.holdout_pairs = vec![(1, 0), (1, 1), (1, 2)];
    assert!(matches!(generate(&s, 0), Err(Error::Spec(_))));
    s.holdout_pairs = vec![(0, 1), (1, 1), (2, 1)];
    assert!(matches!(cross_user_benchmark(&s, &SplitSpec::default(), 0), Err(Error::Spec(_))));
    let s = SynthSpec::standard(1, 3, 1, 10, 0);
    assert!(generate(&s, 0).is_err());
    let mut s = SynthSpec::standard(2, 2, 1, 10, 0);
    s.context_rate = 1.5;
    assert!(generate(&s, 0).is_err());
}

#[test]
fn noiseless_windows_repeat() {
    let mut s = SynthSpec::standard(2, 2, 0, 30, 1);
    quiet(&mut s);
    let d = generate(&s, 4).unwrap();
    let same: Vec<&Instance> = d.instances.iter().zip(&d.truth).filter(|(_, t)| t.user == 0 && t.activities == [1]).map(|(i, _)| i).collect();
    assert!(same.len() > 3);
    for w in same.windows(2) {
        assert_eq!(w[0].window.data, w[1].window.data);
        assert_eq!(w[0].features, w[1].features);
    }
}

#[test]
fn deterministic_per_seed() {
    let s = SynthSpec::standard(3, 3, 2, 20, 2);
    let a = generate(&s, 9).unwrap();
    let b = generate(&s, 9).unwrap();
    assert_eq!(a.instances, b.instances);
    assert_eq!(a.truth, b.truth);
    assert_ne!(generate(&s, 10).unwrap().instances, a.instances);
}

#[test]
fn labels_are_valid() {
    let s = SynthSpec::standard(3, 4, 2, 50, 3);
    let d = generate(&s, 1).unwrap();
    for (inst, t) in d.instances.iter().zip(&d.truth) {
        assert_eq!(inst.labels.user.iter().filter(|&&u| u).count(), 1);
        assert_eq!(inst.labels.user_index(), t.user);
        assert_eq!(inst.user_id, user_name(t.user));
        assert!(!t.activities.is_empty() && t.activities.len() <= 2);
        assert_eq!(inst.window.data.dim(), (6, 50));
    }
}

#[test]
fn nearest_centroid_separates_activities() {
    let mut s = SynthSpec::standard(2, 2, 0, 200, 5);
    s.co_occurrence_rate = 0.0;
    s.noise_sigma = 0.05;
    let d = generate(&s, 2).unwrap();
    let names = crate::pipeline::feature_names(&d.layout);
    // spectral features only: dominant bin and spectral entropy
    let cols: Vec<usize> = names.iter().enumerate().filter(|(_, n)| n.ends_with("dominant_bin") || n.ends_with("spectral_entropy")).map(|(i, _)| i).collect();
    assert!(!cols.is_empty());
    let x: Vec<Vec<f64>> = d.instances.iter().map(|i| cols.iter().map(|&c| i.features.values[c]).collect()).collect();
    let y: Vec<usize> = d.truth.iter().map(|t| t.activities[0]).collect();
    let (fit, eval): (Vec<usize>, Vec<usize>) = (0..x.len()).partition(|i| i % 2 == 0);
    let mut centroid = vec![vec![0.0; cols.len()]; 2];
    let mut count = [0.0; 2];
    for &i in &fit {
        count[y[i]] += 1.0;
        for k in 0..cols.len() {
            centroid[y[i]][k] += x[i][k];
        }
    }
    for a in 0..2 {
        centroid[a].iter_mut().for_each(|v| *v /= count[a]);
    }
    let dist = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    let correct = eval.iter().filter(|&&i| {
        let guess = if dist(&x[i], &centroid[0]) <= dist(&x[i], &centroid[1]) { 0 } else { 1 };
        guess == y[i]
    });
    let acc = correct.count() as f64 / eval.len() as f64;
    assert!(acc > 0.95, "accuracy {acc}");
}

#[test]
fn class_frequencies_match_spec() {
    let s = SynthSpec::standard(2, 4, 2, 2000, 6);
    let d = generate(&s, 3).unwrap();
    let n = d.instances.len() as f64;
    let within = |count: usize, p: f64| {
        let sd = (n * p * (1.0 - p)).sqrt();
        (count as f64 - n * p).abs() <= 3.0 * sd
    };
    for a in 0..4 {
        let c = d.instances.iter().filter(|i| i.labels.activities[a]).count();
        assert!(within(c, s.activity_rate()), "activity {a}: {c}");
    }
    for k in 0..2 {
        let c = d.instances.iter().filter(|i| i.labels.contexts[k]).count();
        assert!(within(c, s.context_rate), "context {k}: {c}");
    }
}

#[test]
fn holdout_routing() {
    let mut s = SynthSpec::standard(3, 3, 1, 60, 7);
    s.holdout_pairs = vec![(2, 0)];
    let b = cross_user_benchmark(&s, &SplitSpec::default(), 1).unwrap();
    let has = |set: &[Instance], u: usize, a: usize| set.iter().any(|i| i.labels.user_index() == u && i.labels.activities[a]);
    assert!(!has(&b.train, 2, 0), "held-out pair leaked into train");
    assert!(!has(&b.val, 2, 0));
    assert!(has(&b.train, 2, 1) && has(&b.train, 2, 2));
    assert!(has(&b.train, 0, 0) && has(&b.train, 1, 0));
    assert!(has(&b.test, 2, 0));
    assert_eq!(b.heldout_mask().iter().filter(|&&m| m).count(), b.test.iter().filter(|i| i.labels.user_index() == 2 && i.labels.activities[0]).count());
    assert_eq!(b.train.len() + b.val.len() + b.test.len(), 180);
}

#[test]
fn empty_holdout_is_a_plain_split() {
    let s = SynthSpec::standard(3, 3, 1, 10, 8);
    let b = cross_user_benchmark(&s, &SplitSpec::default(), 1).unwrap();
    assert_eq!((b.train.len(), b.val.len(), b.test.len()), (18, 6, 6));
    assert!(b.heldout_mask().iter().all(|&m| !m));
    // train features are standardized
    let dim = b.train[0].features.dim();
    for d in 0..dim {
        let mean = b.train.iter().map(|i| i.features.values[d]).sum::<f64>() / 18.0;
        assert!(mean.abs() < 1e-9);
    }
}

#[test]
fn recordings_feed_the_pipeline() {
    let s = SynthSpec::standard(2, 3, 2, 12, 9);
    let dir = tempfile::tempdir().unwrap();
    let names = write_recordings(&s, 5, 6.0, 1.5, dir.path()).unwrap();
    assert_eq!(names, vec!["user00", "user01"]);
    let recs: Vec<Recording> = names.iter().map(|n| Recording::read_dir(&dir.path().join(n)).unwrap()).collect();
    let schema = schema_from_recordings(&recs).unwrap();
    assert_eq!(schema.num_users(), 2);
    let layout = recs[0].layout();
    assert_eq!(layout, s.layout());
    let (inst, stats) = recording_instances(&recs[0], &layout, &schema, &PipelineConfig::default()).unwrap();
    assert!(stats.kept >= 12, "{stats:?}");
    assert!(inst.iter().all(|i| i.user_id == "user00"));
    assert!(inst.iter().all(|i| i.window.data.dim() == (6, 50)));
}

#[test]
fn similarity_and_subset_helpers() {
    let mk = |u: usize, a: usize| {
        let mut user = vec![false; 2];
        user[u] = true;
        let mut acts = vec![false; 2];
        acts[a] = true;
        LabelSet::new(acts, vec![], user).unwrap()
    };
    let labels = [mk(0, 0), mk(1, 0), mk(1, 1)];
    let refs: Vec<&LabelSet> = labels.iter().collect();
    let fused = ndarray::array![[1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
    let sim = cross_user_similarity(fused.view(), &refs).unwrap();
    assert!((sim - 1.0 / 2f64.sqrt()).abs() < 1e-12);
    let logits = ndarray::array![[1.0, -1.0], [-1.0, 1.0], [-1.0, 1.0]];
    // row 1 misses activity 0; restricted to rows 0 and 1 only activity 0 is present
    let m = subset_activity_mcc(logits.view(), &refs, &[true, true, false]).unwrap();
    assert_eq!(m, 0.0);
    let m = subset_activity_mcc(logits.view(), &refs, &[true, false, true]).unwrap();
    assert_eq!(m, 1.0);
}
