mod common;

use std::collections::BTreeMap;

use common::{blobs, exhaustive_optimum, same_partition};

use proptest::prelude::*;
use rand::Rng as _;
use trajmem::nn::Mat;
use trajmem::priors::{
    assign_cluster, build_memory, build_prototypes, kmeans_fit, lloyd, nearest, objective, ClusterModel,
    PriorsArtifact, MAGIC,
};
use trajmem::rng;
use trajmem::scenario::Waypoint;
use trajmem::world_model::BehaviorTriplet;
use trajmem::Error;

#[test]
fn two_points_two_clusters() {
    let pts = vec![vec![1.0, 2.0], vec![-3.0, 0.5]];
    let (model, assign) = kmeans_fit(&pts, 2, 0).unwrap();
    assert_eq!(model.objective, 0.0);
    assert_ne!(assign[0], assign[1]);
    for (p, &a) in pts.iter().zip(&assign) {
        assert_eq!(&model.centroids[a], p);
    }
    assert!(matches!(kmeans_fit(&pts, 3, 0), Err(Error::InvalidArgument(_))));
    assert!(kmeans_fit(&pts, 0, 0).is_err());
}

#[test]
fn nine_point_blobs_match_the_exhaustive_optimum() {
    let pts = blobs();
    let (model, assign) = kmeans_fit(&pts, 3, 7).unwrap();
    let (best, labels) = exhaustive_optimum(&pts, 3);
    assert!((model.objective - best).abs() < 1e-9, "{} vs {best}", model.objective);
    assert!(same_partition(&assign, &labels));
    assert!(same_partition(&assign, &[0, 0, 0, 1, 1, 1, 2, 2, 2]));
}

#[test]
fn identical_points_single_cluster() {
    let pts = vec![vec![2.5, -1.0, 0.25]; 6];
    let (model, assign) = kmeans_fit(&pts, 1, 3).unwrap();
    assert_eq!(model.centroids, vec![pts[0].clone()]);
    assert_eq!(model.objective, 0.0);
    assert!(assign.iter().all(|&a| a == 0));
}

fn wps(v: &[f64]) -> Vec<Waypoint> {
    v.chunks(3)
        .map(|c| Waypoint {
            x: c[0],
            y: c[1],
            heading: c[2],
        })
        .collect()
}

fn model(centroids: Vec<Vec<f64>>) -> ClusterModel {
    ClusterModel {
        centroids,
        iterations: 0,
        objective: 0.0,
        seed: 0,
        heading_weight: 1.0,
    }
}

#[test]
fn assignment_exact_match_and_tie_rule() {
    let m = model(vec![
        vec![0.0, 0.0, 0.0],
        vec![2.0, 0.0, 0.0],
        vec![5.0, 5.0, 0.0],
        vec![4.0, 0.0, 0.0],
    ]);
    assert_eq!(assign_cluster(&wps(&[5.0, 5.0, 0.0]), &m), 2);
    // equidistant to the second and fourth centroids
    assert_eq!(assign_cluster(&wps(&[3.0, 0.0, 0.0]), &m), 1);
    assert_eq!(nearest(&[1.0, 0.0, 0.0], &m.centroids), (0, 1.0));
}

proptest! {
    #[test]
    fn assignment_matches_a_linear_scan(seed in 0u64..1000, m in 1usize..8, t in 1usize..5) {
        let mut r = rng::from_seed(seed);
        let cents: Vec<Vec<f64>> = (0..m).map(|_| (0..3 * t).map(|_| r.random_range(-10.0..10.0)).collect()).collect();
        let x: Vec<f64> = (0..3 * t).map(|_| r.random_range(-10.0..10.0)).collect();
        let mut best = 0;
        for k in 1..m {
            let d = |c: &Vec<f64>| c.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            if d(&cents[k]) < d(&cents[best]) {
                best = k;
            }
        }
        prop_assert_eq!(assign_cluster(&wps(&x), &model(cents.clone())), best);
        // uniform scaling of the whole space keeps the argmin
        let s = r.random_range(0.1..10.0);
        let scaled: Vec<Vec<f64>> = cents.iter().map(|c| c.iter().map(|v| v * s).collect()).collect();
        let xs: Vec<f64> = x.iter().map(|v| v * s).collect();
        prop_assert_eq!(assign_cluster(&wps(&xs), &model(scaled)), best);
    }

    #[test]
    fn lloyd_objective_never_increases(seed in 0u64..1000, n in 3usize..30, m in 1usize..4) {
        let mut r = rng::from_seed(seed);
        let pts: Vec<Vec<f64>> = (0..n).map(|_| (0..4).map(|_| r.random_range(-5.0..5.0)).collect()).collect();
        let init: Vec<Vec<f64>> = pts[..m].to_vec();
        let (cents, assign, trace) = lloyd(&pts, init, 100);
        for w in trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9, "{:?}", trace);
        }
        for (p, &a) in pts.iter().zip(&assign) {
            let (k, d) = nearest(p, &cents);
            let da = p.iter().zip(&cents[a]).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
            prop_assert!(k == a || (d - da).abs() < 1e-12);
        }
        prop_assert!((objective(&pts, &cents, &assign) - trace.last().unwrap()).abs() < 1e-9);
    }

    #[test]
    fn cluster_means_ignore_member_order(seed in 0u64..1000, n in 3usize..12) {
        let trip = triplets(n, seed);
        let assign: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let mut idx: Vec<usize> = (0..n).collect();
        let mut r = rng::from_seed(seed + 1);
        rand::seq::SliceRandom::shuffle(idx.as_mut_slice(), &mut r);
        let t2: Vec<BehaviorTriplet> = idx.iter().map(|&i| trip[i].clone()).collect();
        let a2: Vec<usize> = idx.iter().map(|&i| assign[i]).collect();
        prop_assert_eq!(build_prototypes(&trip, &assign, 3).unwrap(), build_prototypes(&t2, &a2, 3).unwrap());
        prop_assert_eq!(build_memory(&trip, &assign, 3).unwrap(), build_memory(&t2, &a2, 3).unwrap());
    }
}

fn triplets(n: usize, seed: u64) -> Vec<BehaviorTriplet> {
    let mut r = rng::from_seed(seed);
    (0..n)
        .map(|i| {
            let mut m = || Mat::from_vec(4, 3, (0..12).map(|_| r.random_range(-1.0f32..1.0)).collect());
            let h = m();
            let psi = m();
            BehaviorTriplet {
                sample_id: i as u64,
                domain_id: i % 3,
                h,
                psi,
                gt: wps(&[i as f64, 0.1 * i as f64, 0.0, 2.0 * i as f64, 0.0, 0.01]),
            }
        })
        .collect()
}

#[test]
fn singleton_and_pair_means() {
    let trip = triplets(3, 1);
    let assign = vec![0, 1, 1];
    let p = build_prototypes(&trip, &assign, 2).unwrap();
    let mem = build_memory(&trip, &assign, 2).unwrap();
    assert_eq!(p[0], trip[0].h);
    assert_eq!(mem[0], trip[0].psi);
    for k in 0..12 {
        let want = ((trip[1].h.data[k] as f64 + trip[2].h.data[k] as f64) / 2.0) as f32;
        assert_eq!(p[1].data[k], want);
    }
    assert!(matches!(
        build_prototypes(&trip, &[0, 0, 0], 2),
        Err(Error::InvalidArtifact(_))
    ));
    assert!(build_prototypes(&trip, &[0, 5, 0], 2).is_err());
}

#[test]
fn memory_matches_a_direct_mean_in_cluster_order() {
    let trip = triplets(5, 2);
    let assign = vec![2, 0, 1, 2, 0];
    let mem = build_memory(&trip, &assign, 3).unwrap();
    for (k, slot) in mem.iter().enumerate() {
        let members: Vec<&BehaviorTriplet> = trip
            .iter()
            .zip(&assign)
            .filter(|(_, &a)| a == k)
            .map(|(t, _)| t)
            .collect();
        for j in 0..12 {
            let mean = members.iter().map(|t| t.psi.data[j] as f64).sum::<f64>() / members.len() as f64;
            assert!((slot.data[j] as f64 - mean).abs() < 1e-6);
        }
    }
}

#[test]
fn single_cluster_prototype_is_the_global_mean() {
    let trip = triplets(7, 3);
    let art = PriorsArtifact::build(&trip, 1, 0, 1.0, BTreeMap::new()).unwrap();
    assert_eq!(art.counts, vec![7]);
    for j in 0..12 {
        let mean = trip.iter().map(|t| t.h.data[j] as f64).sum::<f64>() / 7.0;
        assert!((art.prototypes[0].data[j] as f64 - mean).abs() < 1e-6);
    }
}

#[test]
fn artifact_round_trips_and_rejects_damage() {
    let trip = triplets(9, 4);
    let mut prov = BTreeMap::new();
    prov.insert("behavior_set".to_string(), "00ff".to_string());
    let art = PriorsArtifact::build(&trip, 3, 5, 1.0, prov).unwrap();
    assert_eq!(art.counts.iter().sum::<usize>(), 9);
    assert_eq!((art.m(), art.tokens(), art.width(), art.horizon()), (3, 4, 3, 2));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("priors.bin");
    let sha = art.save(&path).unwrap();
    assert_eq!(sha, art.hash().unwrap());
    let back = PriorsArtifact::load(&path).unwrap();
    assert_eq!(back, art);
    // assignments against the loaded centroids agree with the fit
    for t in &trip {
        assert_eq!(
            assign_cluster(&t.gt, &back.cluster_model),
            assign_cluster(&t.gt, &art.cluster_model)
        );
    }

    let bytes = art.to_bytes().unwrap();
    assert_eq!(&bytes[..8], MAGIC);
    let mut bad = bytes.clone();
    let mid = bad.len() / 2;
    bad[mid] ^= 1;
    assert!(matches!(PriorsArtifact::from_bytes(&bad), Err(Error::Checksum { .. })));
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(matches!(PriorsArtifact::from_bytes(&magic), Err(Error::Format(_))));
    assert!(PriorsArtifact::from_bytes(&bytes[..20]).is_err());

    // a header claiming another token width, resealed with a valid digest
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let header = std::str::from_utf8(&bytes[16..16 + hlen]).unwrap();
    let forged = header.replacen("\"d\":3", "\"d\":4", 1);
    assert_ne!(forged, header);
    let mut body = MAGIC.to_vec();
    body.extend_from_slice(&(forged.len() as u64).to_le_bytes());
    body.extend_from_slice(forged.as_bytes());
    body.extend_from_slice(&bytes[16 + hlen..bytes.len() - 32]);
    let digest = rng::sha256_hex(&body);
    body.extend_from_slice(&hex::decode(digest).unwrap());
    assert!(matches!(PriorsArtifact::from_bytes(&body), Err(Error::Format(_))));
}

#[test]
fn build_is_deterministic() {
    let trip = triplets(12, 6);
    let a = PriorsArtifact::build(&trip, 3, 9, 1.0, BTreeMap::new()).unwrap();
    let b = PriorsArtifact::build(&trip, 3, 9, 1.0, BTreeMap::new()).unwrap();
    assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
}
