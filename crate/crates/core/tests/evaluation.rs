use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use voxface::data_pipeline::*;
use voxface::encoders::*;
use voxface::evaluation::*;
use voxface::gan::*;
use voxface::Error;
use voxface_nn::ParamStore;

fn randv(n: usize, rng: &mut impl Rng) -> Vec<f32> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

#[test]
fn cosine_distance_examples() {
    let a = [1.0f32, 2.0, -3.0];
    assert!(cosine_distance(&a, &a).unwrap().abs() < 1e-12);
    let neg: Vec<f32> = a.iter().map(|v| -v).collect();
    assert!((cosine_distance(&a, &neg).unwrap() - 2.0).abs() < 1e-12);
    assert!((cosine_distance(&[1.0, 0.0], &[0.0, 3.0]).unwrap() - 1.0).abs() < 1e-12);
    assert!(matches!(cosine_distance(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::InvalidInput(_))));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..1000 {
        let d = cosine_distance(&randv(16, &mut rng), &randv(16, &mut rng)).unwrap();
        assert!((0.0..=2.0).contains(&d));
    }
}

fn two_pass_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

#[test]
fn pearson_matches_the_two_pass_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for trial in 0..200 {
        let n = 3 + trial % 50;
        let x: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal) * 3.0 + 1.0).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.3 * v + rng.sample::<f64, _>(StandardNormal)).collect();
        let r = pearson(&x, &y).unwrap().r().unwrap();
        assert!((r - two_pass_pearson(&x, &y)).abs() < 1e-12);
    }
    // r = 0.5 with n = 10 gives t = 1.633 on 8 degrees of freedom.
    let x: Vec<f64> = (0..10).map(f64::from).collect();
    let mut y = vec![0.0; 10];
    // Construct y with correlation exactly 0.5 against x by mixing x with an orthogonal vector.
    let mx = 4.5;
    let u: Vec<f64> = x.iter().map(|v| v - mx).collect();
    let w: Vec<f64> = (0..10).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
    let proj = u.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / u.iter().map(|a| a * a).sum::<f64>();
    let w: Vec<f64> = w.iter().zip(&u).map(|(b, a)| b - proj * a).collect();
    let (nu, nw) = (u.iter().map(|a| a * a).sum::<f64>().sqrt(), w.iter().map(|a| a * a).sum::<f64>().sqrt());
    for i in 0..10 {
        y[i] = 0.5 * u[i] / nu + (0.75f64).sqrt() * w[i] / nw;
    }
    let c = pearson(&x, &y).unwrap();
    assert!((c.r().unwrap() - 0.5).abs() < 1e-12);
    assert!((c.p_value().unwrap() - 0.14111).abs() < 1e-4, "{c:?}");

    assert_eq!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap(), Correlation::Undefined);
    assert!(matches!(pearson(&[1.0, 2.0], &[1.0, 2.0]), Err(Error::InsufficientData(_))));
    let json = serde_json::to_value(Correlation::Undefined).unwrap();
    assert_eq!(json["status"], "undefined");
}

#[test]
fn binomial_p_values() {
    assert!((binomial_p_value(10, 10) - 0.5f64.powi(10)).abs() < 1e-15);
    assert!((binomial_p_value(5, 10) - 0.623046875).abs() < 1e-12);
    assert_eq!(binomial_p_value(0, 10), 1.0);
}

fn brute_force_rank(q: &[f32], gallery: &[Vec<f32>], metric: Metric) -> Vec<usize> {
    let dist = |g: &[f32]| -> f64 {
        match metric {
            Metric::L1 => q.iter().zip(g).map(|(a, b)| (*a as f64 - *b as f64).abs()).sum(),
            Metric::L2 => q.iter().zip(g).map(|(a, b)| (*a as f64 - *b as f64).powi(2)).sum::<f64>().sqrt(),
            Metric::CD => {
                let dot: f64 = q.iter().zip(g).map(|(a, b)| *a as f64 * *b as f64).sum();
                let nq: f64 = q.iter().map(|a| (*a as f64).powi(2)).sum::<f64>().sqrt();
                let ng: f64 = g.iter().map(|a| (*a as f64).powi(2)).sum::<f64>().sqrt();
                1.0 - dot / (nq * ng)
            }
        }
    };
    let mut out: Vec<usize> = Vec::new();
    let mut left: Vec<usize> = (0..gallery.len()).collect();
    // Selection sort: repeatedly take the first minimum.
    while !left.is_empty() {
        let mut best = 0;
        for j in 1..left.len() {
            if dist(&gallery[left[j]]) < dist(&gallery[left[best]]) {
                best = j;
            }
        }
        out.push(left.remove(best));
    }
    out
}

#[test]
fn rankings_match_a_brute_force_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10 {
        let mut gallery: Vec<Vec<f32>> = (0..100).map(|_| randv(8, &mut rng)).collect();
        // Exact duplicates exercise the index tie-break.
        gallery[37] = gallery[3].clone();
        gallery[90] = gallery[3].clone();
        let q = randv(8, &mut rng);
        for metric in Metric::ALL {
            assert_eq!(rank_gallery(&q, &gallery, metric).unwrap(), brute_force_rank(&q, &gallery, metric), "{metric}");
        }
        let planted = rank_gallery(&gallery[42], &gallery, Metric::L2).unwrap();
        assert_eq!(planted[0], 42);
    }
}

fn random_gallery(speakers: usize, per: usize, rng: &mut impl Rng) -> Gallery {
    Gallery {
        embeddings: (0..speakers * per).map(|_| randv(128, rng)).collect(),
        speakers: (0..speakers).flat_map(|s| std::iter::repeat_n(s, per)).collect(),
    }
}

#[test]
fn random_embeddings_retrieve_at_chance() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let gallery = random_gallery(100, 50, &mut rng);
    let queries: Vec<Query> = (0..1000)
        .map(|i| Query {
            embedding: randv(128, &mut rng),
            speaker: i % 100,
        })
        .collect();
    for metric in Metric::ALL {
        let r = retrieval_report(&queries, &gallery, metric).unwrap();
        let (t1, t10) = (r.top_k_acc[&1], r.top_k_acc[&10]);
        assert!((0.5..=2.0).contains(&t1), "{metric} top-1 {t1}");
        assert!((7.0..=13.0).contains(&t10), "{metric} top-10 {t10}");
        let accs: Vec<f64> = r.top_k_acc.values().copied().collect();
        assert!(accs.windows(2).all(|w| w[0] <= w[1]));
        assert!(accs.iter().all(|a| (0.0..=100.0).contains(a)));
        assert_eq!((r.gallery_size, r.n_queries), (5000, 1000));
    }
}

#[test]
fn retrieval_hits_and_invalid_queries() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let gallery = random_gallery(5, 3, &mut rng);
    let planted = Query {
        embedding: gallery.embeddings[7].clone(),
        speaker: gallery.speakers[7],
    };
    let r = retrieval_report(&[planted], &gallery, Metric::CD).unwrap();
    assert_eq!(r.top_k_acc[&1], 100.0);
    let stranger = Query {
        embedding: randv(128, &mut rng),
        speaker: 99,
    };
    assert!(matches!(retrieval_report(&[stranger], &gallery, Metric::L1), Err(Error::InvalidQuery(_))));
    let json = serde_json::to_value(&r).unwrap();
    assert_eq!(json["metric"], "CD");
    assert!(json["top_k_acc"]["10"].is_number());
}

#[test]
fn preference_counts_handle_ties_and_swaps() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let s: Vec<Vec<f32>> = (0..200).map(|_| randv(128, &mut rng)).collect();
    let a: Vec<Vec<f32>> = (0..200).map(|_| randv(128, &mut rng)).collect();
    let mut b: Vec<Vec<f32>> = (0..200).map(|_| randv(128, &mut rng)).collect();
    for i in 0..20 {
        b[i] = a[i].clone();
    }
    assert_eq!(preference_counts(&s, &a, &a).unwrap(), (0, 200));
    let (wins, ties) = preference_counts(&s, &a, &b).unwrap();
    let (wins_swapped, ties_swapped) = preference_counts(&s, &b, &a).unwrap();
    assert_eq!(ties, 20);
    assert_eq!(ties_swapped, ties);
    assert_eq!(wins_swapped, 200 - wins - ties);
}

struct Models {
    gan: GanModel,
    encoders: EncoderPair,
}

fn tiny_models(seed: u64) -> Models {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gen_store = ParamStore::new();
    let generator = Generator::new(GeneratorArch::tiny(), &mut gen_store, GEN_PREFIX, &mut rng).unwrap();
    let mut speech_store = ParamStore::new();
    let speech = SpeechEncoder::new(SpeechEncoderArch::tiny(), &mut speech_store, SPEECH_PREFIX, &mut rng).unwrap();
    Models {
        gan: GanModel {
            generator,
            gen_store,
            speech,
            speech_store,
        },
        encoders: EncoderPair::new(SpeechEncoderArch::tiny(), FaceEncoderArch::tiny(), seed + 1).unwrap(),
    }
}

impl Models {
    fn eval(&self) -> EvalModels<'_> {
        EvalModels {
            gan: &self.gan,
            encoders: &self.encoders,
        }
    }
}

fn toy(n_identities: usize, clips: usize, frames: usize) -> Dataset {
    let cfg = ToyConfig {
        n_identities,
        clips_per_identity: clips,
        frames_per_clip: frames,
        window_s: 0.1,
        image_size: 8,
        ..ToyConfig::default()
    };
    let audio = AudioConfig {
        sample_rate: 16_000,
        duration_s: 0.05,
        rms_reference: 0.01,
    };
    Dataset::from_sources(synthesize_sources(&cfg, 9).unwrap(), audio, ImageConfig { size: 8, flip: true }, None).unwrap()
}

#[test]
fn qta1_reports_and_degenerate_cases() {
    let m = tiny_models(1);
    let ds = toy(8, 1, 3);
    let items = ds.items(&(0..ds.len()).collect::<Vec<_>>());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let r = qta1_correlation(m.eval(), &ds, &items, 40, &mut rng).unwrap();
    assert_eq!((r.n_pairs, r.scatter.len()), (40, 40));
    assert!(r.scatter.iter().all(|p| (0.0..=2.0).contains(&p.cd_condition) && (0.0..=2.0).contains(&p.cd_face)));
    assert!(r.scatter.iter().all(|p| p.cd_condition > 0.0));
    let again = qta1_correlation(m.eval(), &ds, &items, 40, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(serde_json::to_string(&r).unwrap(), serde_json::to_string(&again).unwrap());
    assert!(matches!(qta1_correlation(m.eval(), &ds, &items, 2, &mut rng), Err(Error::InsufficientData(_))));

    let c = randv(128, &mut rng);
    let same: Vec<(Vec<f32>, Vec<f32>)> = (0..10).map(|_| (c.clone(), c.clone())).collect();
    let pairs = qta1_from_conditions(m.eval(), &same, &mut rng).unwrap();
    assert!(pairs.iter().all(|p| p.cd_condition.abs() < 1e-6));
    let flat: Vec<DistancePair> = pairs.iter().map(|p| DistancePair { cd_condition: 0.0, ..*p }).collect();
    assert_eq!(qta1_report("qta1", flat).unwrap().pearson, Correlation::Undefined);

    let dir = tempfile::tempdir().unwrap();
    write_scatter_png(&dir.path().join("s.png"), &r.scatter).unwrap();
    assert_eq!(read_png(&dir.path().join("s.png")).unwrap().width, 256);
}

#[test]
fn qta1_gender_control_regimes() {
    let m = tiny_models(2);
    let ds = toy(8, 1, 2);
    let items = ds.items(&(0..ds.len()).collect::<Vec<_>>());
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let r = qta1_gender_control(m.eval(), &ds, &items, 20, &mut rng).unwrap();
    assert_eq!((r.same.n_pairs, r.different.n_pairs), (20, 20));
    assert!(r.reference.is_some());
    let one_attr: Vec<ItemRef> = items.iter().copied().filter(|i| ds.attribute_of(i.clip) == Some("0")).collect();
    assert!(matches!(qta1_gender_control(m.eval(), &ds, &one_attr, 20, &mut rng), Err(Error::InsufficientData(_))));
}

#[test]
fn qta2_preference_and_fv_accuracy() {
    let m = tiny_models(3);
    let other = tiny_models(4);
    let ds = toy(10, 1, 3);
    let items = ds.items(&(0..ds.len()).collect::<Vec<_>>());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let gt = qta2_vf_preference(m.eval(), &ds, &items, Comparator::GroundTruth, &mut rng).unwrap();
    assert_eq!((gt.n, gt.comparator.as_str()), (30, "vs_ground_truth"));
    assert!((0.0..=1.0).contains(&gt.fraction));
    let selfcmp = qta2_vf_preference(m.eval(), &ds, &items, Comparator::OtherGenerator(&m.gan), &mut rng).unwrap();
    assert_eq!((selfcmp.fraction, selfcmp.tie_rate), (0.0, 1.0));
    let vs = qta2_vf_preference(m.eval(), &ds, &items, Comparator::OtherGenerator(&other.gan), &mut rng).unwrap();
    assert!(vs.binomial_p_value > 0.0 && vs.binomial_p_value <= 1.0);
    assert!(matches!(qta2_vf_preference(m.eval(), &ds, &[], Comparator::GroundTruth, &mut rng), Err(Error::InsufficientData(_))));
    assert!(matches!(qta2_fv_accuracy(m.eval(), &ds, &[], &mut rng), Err(Error::InsufficientData(_))));
}

#[test]
fn untrained_generator_fv_accuracy_is_at_chance() {
    let ds = toy(50, 2, 5);
    let items = ds.items(&(0..ds.len()).collect::<Vec<_>>());
    let mut accs = Vec::new();
    for seed in 0..4 {
        let m = tiny_models(10 + seed);
        let r = qta2_fv_accuracy(m.eval(), &ds, &items, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        assert_eq!(r.n, 500);
        accs.push(r.accuracy);
    }
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    assert!((mean - 0.5).abs() < 0.05, "accuracies {accs:?}");
}

#[test]
fn qta3_generates_queries_against_a_gallery() {
    let m = tiny_models(5);
    let ds = toy(6, 2, 3);
    let clips: Vec<usize> = (0..ds.len()).collect();
    let gallery = Gallery::build(m.eval(), &ds, &clips, 4).unwrap();
    assert_eq!(gallery.len(), 24);
    let speech: Vec<(usize, Vec<f32>)> = ds
        .items(&clips)
        .into_iter()
        .map(|i| (ds.identity_of(i.clip), ds.speech_fixed(i).unwrap().samples))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let reports = qta3_retrieval(m.eval(), &gallery, &speech, &Metric::ALL, Some(1.0), &mut rng).unwrap();
    assert_eq!(reports.len(), 3);
    for r in &reports {
        assert_eq!(r.n_queries, 36);
        assert_eq!(r.top_k_acc.keys().copied().collect::<Vec<_>>(), TOP_KS.to_vec());
    }
    let bad = vec![(77usize, speech[0].1.clone())];
    assert!(matches!(qta3_retrieval(m.eval(), &gallery, &bad, &[Metric::CD], None, &mut rng), Err(Error::InvalidQuery(_))));
}

#[test]
fn interpolation_endpoints() {
    let m = tiny_models(6);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (a, b, z) = (randv(128, &mut rng), randv(128, &mut rng), randv(128, &mut rng));
    let two = interpolate_grid(&m.gan, &a, &b, InterpolationTarget::ConditionC, &z, 2).unwrap();
    assert_eq!(two, m.gan.generate(&[&z, &z], &[&a, &b]).unwrap());
    let row = interpolate_grid(&m.gan, &a, &b, InterpolationTarget::LatentZ, &z, 7).unwrap();
    assert_eq!(row.len(), 7);
    assert_eq!(row[0], m.gan.generate(&[&a], &[&z]).unwrap()[0]);
    assert_eq!(row[6], m.gan.generate(&[&b], &[&z]).unwrap()[0]);
    assert!(interpolate_grid(&m.gan, &a, &b, InterpolationTarget::LatentZ, &z, 1).is_err());
}

#[test]
fn reference_results_are_embedded() {
    let r = reference_results();
    assert_eq!(r["qta2_vf"]["vs_ground_truth"], 76.65);
    assert_eq!(r["qta2_fv"]["accuracy"], 95.14);
    assert_eq!(r["retrieval"]["relid"]["CD"]["1"], 13.59);
    assert_eq!(r["inference_accuracy"]["train_vf"]["test_vf"]["10"], 54.33);
}
