//! Acceptance run. Prints one PASS/FAIL line per criterion.
//!
//! Criteria 1 to 3 are checked on small fixed inputs. Criteria 4 to 7 train
//! on the benchmark configuration in `configs/benchmark.json`, three seeds.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use rand::Rng as _;

use common::{
    ami_oracle, blobs, contrastive_oracle, exhaustive_optimum, param_gradcheck, random_mat, random_priors,
    retrieval_oracle, same_partition, synthetic_samples,
};
use trajmem::config::RunConfig;
use trajmem::eval::{
    adjusted_mutual_info, closed_loop_suite, collision_metric, l2_metric, pdms_score, ClosedLoopReport,
    ConstantVelocity, GroundTruthReplay, HORIZONS,
};
use trajmem::geometry::Pose;
use trajmem::model::{patchify, ModelConfig};
use trajmem::nn::{Checkpoint, Mat};
use trajmem::pipeline::{closed_loop_templates, evaluate_policy, Evaluation, Selection};
use trajmem::policy::{
    contrastive_loss, memory_retrieve, objective_graph, stack_slots, train_stage3, Policy, PolicyState, Toggles,
};
use trajmem::priors::{assign_cluster, build_memory, build_prototypes, kmeans_fit, PriorsArtifact};
use trajmem::rng::{self, derive_seed};
use trajmem::scenario::dataset::waypoints_to_world;
use trajmem::scenario::sim::{AgentScript, AgentState, EGO_LENGTH, EGO_WIDTH};
use trajmem::scenario::{make_domain_specs, simulate_episode, Dataset, SimParams, Split, Waypoint, K_MAX};
use trajmem::world_model::{
    encode_behavior_set, export_behavior_set, flatten_trajectory, train_stage1, world_loss, BehaviorTriplet,
    WorldModelState,
};

const SEEDS: [u64; 3] = [0, 1, 2];
const ABLATION_GAIN: f64 = 0.15;
const SEEDS_NEEDED: usize = 2;
const SWEEP: [usize; 4] = [1, 3, 6, 12];
const SWEEP_SPREAD: f64 = 0.10;
const REPLAY_FLOOR: f64 = 95.0;
const ORACLE_TOL: f64 = 1e-6;
const GRAD_TOL: f64 = 1e-4;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn report(id: usize, name: &str, budget: Duration, f: impl FnOnce() -> Verdict) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f));
    let took = start.elapsed();
    let (pass, detail) = match outcome {
        Ok(v) => (v.pass && took <= budget, v.detail),
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        }
    };
    println!(
        "[{}] criterion {id} {name}: {detail} ({:.1} s of {} s)",
        if pass { "PASS" } else { "FAIL" },
        took.as_secs_f64(),
        budget.as_secs()
    );
    pass
}

fn runner(cases: u32) -> TestRunner {
    let config = Config {
        failure_persistence: None,
        ..Config::with_cases(cases)
    };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

// ---- criterion 1

fn oracle_suite() -> Verdict {
    let mut worst_con: f64 = 0.0;
    for seed in 0..5 {
        let v = random_mat(seed, 8, 8, 1.0);
        let protos: Vec<Mat<f64>> = (0..3)
            .map(|k| random_mat(50 + 3 * seed + k, 8, 8, 1.0).cast::<f32>().cast())
            .collect();
        let p32: Vec<Mat<f32>> = protos.iter().map(|m| m.cast()).collect();
        for pos in 0..3 {
            let got = contrastive_loss(&v, &p32, pos, 0.07).unwrap();
            worst_con = worst_con.max((got - contrastive_oracle(&v, &protos, pos, 0.07)).abs());
        }
    }

    let cfg = ModelConfig::tiny();
    let policy = Policy::new(&cfg).unwrap();
    let mut worst_mem: f64 = 0.0;
    for seed in 0..5 {
        let params = policy.init::<f64>(seed);
        let action = random_mat(seed + 10, 8, 8, 1.0);
        let mem64: Vec<Mat<f64>> = (0..3)
            .map(|k| random_mat(seed * 5 + k + 20, 8, 8, 1.0).cast::<f32>().cast())
            .collect();
        let mem: Vec<Mat<f32>> = mem64.iter().map(|m| m.cast()).collect();
        let (c, a) = memory_retrieve(&action, &mem, &params, &policy, 0.07).unwrap();
        let (c0, a0) = retrieval_oracle(&action, &mem64, params.expect("pol.proj.w"), 0.07);
        worst_mem = worst_mem.max(c.max_abs_diff(&c0)).max(a.max_abs_diff(&a0));
    }

    let pts = blobs();
    let (model, assign) = kmeans_fit(&pts, 3, 7).unwrap();
    let (best, labels) = exhaustive_optimum(&pts, 3);
    let kmeans_ok = (model.objective - best).abs() < 1e-9 && same_partition(&assign, &labels);

    let a = [0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 3, 0, 1, 2, 3, 0, 1, 2, 3];
    let b = [0, 0, 1, 1, 1, 2, 2, 2, 0, 0, 1, 2, 2, 0, 1, 1, 0, 2, 2, 1];
    let mut worst_ami: f64 = 0.0;
    let mut r = rng::from_seed(9);
    for _ in 0..5 {
        let x: Vec<usize> = (0..24).map(|_| r.random_range(0..4)).collect();
        let y: Vec<usize> = (0..24).map(|_| r.random_range(0..3)).collect();
        worst_ami = worst_ami.max((adjusted_mutual_info(&x, &y).unwrap() - ami_oracle(&x, &y)).abs());
    }
    worst_ami = worst_ami.max((adjusted_mutual_info(&a, &b).unwrap() - ami_oracle(&a, &b)).abs());

    verdict(
        worst_con < ORACLE_TOL && worst_mem < ORACLE_TOL && kmeans_ok && worst_ami < 1e-9,
        format!(
            "contrastive {worst_con:.1e}, retrieval {worst_mem:.1e}, k-means optimum {}, AMI {worst_ami:.1e}",
            if kmeans_ok { "matched" } else { "missed" }
        ),
    )
}

// ---- criterion 2

fn gradient_suite() -> Verdict {
    // world loss: predictor and aux paths against a frozen next-frame target
    let cfg = ModelConfig::tiny();
    let st = WorldModelState::<f64>::init(&cfg).unwrap();
    let sample = synthetic_samples(&cfg, 1, 4).remove(0);
    let target = st.encode(&sample.frame_t1.observation).unwrap().values;
    let gt = Mat::from_vec(cfg.horizon, 3, flatten_trajectory(&sample.gt_waypoints));
    let loss = |s: &WorldModelState<f64>| {
        let h = s.encode(&sample.frame_t.observation).unwrap().values;
        let psi = s.fuse_trajectory(&h, &sample.gt_waypoints).unwrap().values;
        let h_hat = s.predict_next(&psi).unwrap().values;
        let aux = s.aux_predict(&h).unwrap();
        world_loss(&h_hat, &target, &aux, &gt, cfg.lambda_aux).unwrap()
    };
    let analytic = st.sample_grad(&sample).unwrap();
    let step = 1e-5;
    let mut world_err: f64 = 0.0;
    for (name, m) in st.params.iter() {
        let (mut d2, mut a2, mut n2) = (0.0, 0.0, 0.0);
        for j in (0..m.len()).step_by((m.len() / 5).max(1)) {
            let mut plus = st.clone();
            plus.params.get_mut(name).unwrap().data[j] += step;
            let mut minus = st.clone();
            minus.params.get_mut(name).unwrap().data[j] -= step;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * step);
            let a = analytic.grads.expect(name).data[j];
            d2 += (a - numeric).powi(2);
            a2 += a * a;
            n2 += numeric * numeric;
        }
        world_err = world_err.max(d2.sqrt() / a2.sqrt().max(n2.sqrt()).max(1e-10));
    }

    // full planner objective, both module toggles on and off
    let cfg = ModelConfig {
        seed: 3,
        ..ModelConfig::tiny()
    };
    let samples = synthetic_samples(&cfg, 9, 3);
    let priors = random_priors(&cfg, &samples, 3);
    let policy = Policy::new(&cfg).unwrap();
    let params = policy.init::<f64>(3);
    let sample = &samples[0];
    let positive = assign_cluster(&sample.gt_waypoints, &priors.cluster_model);
    let patches = patchify::<f64>(&sample.frame_t.observation, &cfg).unwrap();
    let st = PolicyState {
        cfg: cfg.clone(),
        toggles: Toggles::FULL,
        params: params.clone(),
    };
    let target = st.encode(&sample.frame_t1.observation).unwrap();
    let gt = Mat::from_vec(cfg.horizon, 3, flatten_trajectory(&sample.gt_waypoints));
    let mut policy_err: f64 = 0.0;
    for toggles in [Toggles::FULL, Toggles::BASELINE] {
        let err = param_gradcheck(
            &params,
            |g, p| {
                let x = g.constant(patches.clone());
                let protos = g.constant(stack_slots::<f64>(&priors.prototypes));
                let mem = g.constant(stack_slots::<f64>(&priors.memory));
                let gt = g.constant(gt.clone());
                let t = g.constant(target.clone());
                objective_graph(&policy, g, p, x, protos, mem, cfg.clusters, positive, gt, t, toggles).0
            },
            8,
            4,
        );
        policy_err = policy_err.max(err);
    }
    verdict(
        world_err < GRAD_TOL && policy_err < GRAD_TOL,
        format!("world loss rel err {world_err:.1e}, planner objective rel err {policy_err:.1e} (tol {GRAD_TOL:.0e})"),
    )
}

// ---- criterion 3

fn static_agent_scene(mut scene: trajmem::scenario::Scene, pose: Pose, size: (f64, f64)) -> trajmem::scenario::Scene {
    let state = AgentState {
        agent_id: 0,
        x: pose.x,
        y: pose.y,
        heading: pose.heading,
        speed: 0.0,
        footprint: size,
    };
    scene.scripts = vec![AgentScript {
        agent_id: 0,
        lane_offset: 0.0,
        s0: 0.0,
        speed: 0.0,
        length: size.0,
        width: size.1,
    }];
    scene.agents = vec![vec![state; 64]];
    scene
}

fn tiny_triplets(n: usize, seed: u64) -> Vec<BehaviorTriplet> {
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
                gt: vec![Waypoint {
                    x: i as f64,
                    y: 0.1 * i as f64,
                    heading: 0.0,
                }],
            }
        })
        .collect()
}

fn invariant_suite() -> Verdict {
    let mut failed: Vec<String> = Vec::new();
    let mut groups = 0;
    let mut check = |name: &str, r: Result<(), String>| {
        groups += 1;
        if let Err(e) = r {
            failed.push(format!("{name}: {e}"));
        }
    };

    let cfg = ModelConfig::tiny();
    let policy = Policy::new(&cfg).unwrap();
    check(
        "attention rows",
        runner(32)
            .run(&(0u64..10_000, 1e-3f64..10.0, 1usize..6), |(seed, tau, m)| {
                let params = policy.init::<f64>(seed);
                let action = random_mat(seed, 8, 8, 1.0);
                let mem: Vec<Mat<f32>> = (0..m)
                    .map(|k| random_mat(seed + 11 * k as u64 + 1, 8, 8, 1.0).cast())
                    .collect();
                let (_, a) = memory_retrieve(&action, &mem, &params, &policy, tau).unwrap();
                for r in 0..8 {
                    prop_assert!(a.row(r).iter().all(|&x| x >= 0.0));
                    prop_assert!((a.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-6);
                }
                Ok(())
            })
            .map_err(|e| e.to_string()),
    );

    check(
        "prototype permutation",
        runner(32)
            .run(&(0u64..1000, 3usize..12), |(seed, n)| {
                let trip = tiny_triplets(n, seed);
                let assign: Vec<usize> = (0..n).map(|i| i % 3).collect();
                let mut idx: Vec<usize> = (0..n).collect();
                rand::seq::SliceRandom::shuffle(idx.as_mut_slice(), &mut rng::from_seed(seed + 1));
                let t2: Vec<BehaviorTriplet> = idx.iter().map(|&i| trip[i].clone()).collect();
                let a2: Vec<usize> = idx.iter().map(|&i| assign[i]).collect();
                prop_assert_eq!(
                    build_prototypes(&trip, &assign, 3).unwrap(),
                    build_prototypes(&t2, &a2, 3).unwrap()
                );
                prop_assert_eq!(
                    build_memory(&trip, &assign, 3).unwrap(),
                    build_memory(&t2, &a2, 3).unwrap()
                );
                Ok(())
            })
            .map_err(|e| e.to_string()),
    );

    check(
        "L2 identity and translation",
        runner(64)
            .run(&(0u64..10_000, -50.0f64..50.0, -50.0f64..50.0), |(seed, dx, dy)| {
                let mut r = rng::from_seed(seed);
                let mut traj = || {
                    (0..8)
                        .map(|_| Waypoint {
                            x: r.random_range(-20.0..20.0),
                            y: r.random_range(-20.0..20.0),
                            heading: 0.0,
                        })
                        .collect::<Vec<_>>()
                };
                let (p, g) = (traj(), traj());
                prop_assert_eq!(l2_metric(&g, &g, &HORIZONS).unwrap(), vec![0.0; 3]);
                let shift = |t: &[Waypoint]| {
                    t.iter()
                        .map(|w| Waypoint {
                            x: w.x + dx,
                            y: w.y + dy,
                            heading: w.heading,
                        })
                        .collect::<Vec<_>>()
                };
                let base = l2_metric(&p, &g, &HORIZONS).unwrap();
                let moved = l2_metric(&shift(&p), &shift(&g), &HORIZONS).unwrap();
                for (a, b) in base.iter().zip(&moved) {
                    prop_assert!((a - b).abs() < 1e-9);
                }
                Ok(())
            })
            .map_err(|e| e.to_string()),
    );

    let specs = make_domain_specs(3, 0).unwrap();
    let sim = SimParams {
        image_size: 8,
        ..SimParams::default()
    };
    let ep = simulate_episode(&specs[1], 0, 3, 0, &sim).unwrap();
    let base = ep.frames[0].ego;
    let plan: Vec<Waypoint> = (1..=8)
        .map(|i| Waypoint {
            x: 4.0 * i as f64,
            y: 0.0,
            heading: 0.0,
        })
        .collect();
    let world = waypoints_to_world(&base, &plan);
    check(
        "collision trivial and monotone",
        runner(48)
            .run(&(-6.0f64..6.0, 0usize..8), |(gap, at)| {
                let mut empty = ep.scene.clone();
                empty.scripts.clear();
                empty.agents.clear();
                let none = collision_metric(&plan, &base, &empty, 0, (EGO_LENGTH, EGO_WIDTH), &HORIZONS).unwrap();
                prop_assert_eq!(none, vec![false; 3]);
                let h = world[at].heading + std::f64::consts::FRAC_PI_2;
                let pose = Pose::new(
                    world[at].x + gap * h.cos(),
                    world[at].y + gap * h.sin(),
                    world[at].heading,
                );
                let big = static_agent_scene(ep.scene.clone(), pose, (4.0, 1.8));
                let small = static_agent_scene(ep.scene.clone(), pose, (2.0, 0.9));
                let full = collision_metric(&plan, &base, &big, 0, (EGO_LENGTH, EGO_WIDTH), &[4.0]).unwrap()[0];
                let shrunk =
                    collision_metric(&plan, &base, &small, 0, (EGO_LENGTH / 2.0, EGO_WIDTH / 2.0), &[4.0]).unwrap()[0];
                prop_assert!(!shrunk || full);
                Ok(())
            })
            .map_err(|e| e.to_string()),
    );

    check(
        "mini-PDMS gating and range",
        runner(64)
            .run(
                &(0usize..2, 0usize..2, 0.0f64..1.0, 0usize..2, 0usize..2),
                |(nc, dac, ep, ttc, c)| {
                    let s = pdms_score(nc as f64, dac as f64, ep, ttc as f64, c as f64);
                    prop_assert!((0.0..=100.0).contains(&s));
                    prop_assert_eq!(s == 0.0, nc * dac == 0 || (ep == 0.0 && ttc == 0 && c == 0));
                    Ok(())
                },
            )
            .map_err(|e| e.to_string()),
    );

    check(
        "blank-view padding and range",
        runner(8)
            .run(&(0u64..10_000, 0usize..6), |(seed, behavior)| {
                let sim = SimParams {
                    image_size: 8,
                    frames: 10,
                    ..SimParams::default()
                };
                let ep = simulate_episode(&specs[0], behavior, seed, 0, &sim).unwrap();
                let n = 3 * 8 * 8;
                for f in &ep.frames {
                    prop_assert!(f.observation.iter().all(|&x| (0.0..=1.0).contains(&x)));
                    for k in specs[0].num_views..K_MAX {
                        prop_assert!(f.observation[k * n..(k + 1) * n].iter().all(|&x| x == 0.0));
                    }
                }
                Ok(())
            })
            .map_err(|e| e.to_string()),
    );

    check(
        "AMI label renaming",
        runner(32)
            .run(&(0u64..10_000), |seed| {
                let mut r = rng::from_seed(seed);
                let a: Vec<usize> = (0..30).map(|_| r.random_range(0..4)).collect();
                let b: Vec<usize> = (0..30).map(|_| r.random_range(0..3)).collect();
                let renamed: Vec<usize> = a.iter().map(|x| 10 + 7 * (3 - x)).collect();
                let base = adjusted_mutual_info(&a, &b).unwrap();
                prop_assert!((adjusted_mutual_info(&renamed, &b).unwrap() - base).abs() < 1e-12);
                Ok(())
            })
            .map_err(|e| e.to_string()),
    );

    // file formats and byte-level determinism of the three stages
    let (model, mut scenario) = common::small_configs();
    scenario.train_episodes_per_domain = 1;
    let stages = || -> trajmem::Result<(Vec<u8>, Vec<u8>, Vec<u8>, Vec<u8>, String)> {
        let dir = tempfile::tempdir().map_err(|e| trajmem::Error::io(std::path::Path::new("tmp"), e))?;
        let ds_sha = Dataset::generate(&scenario)?.save(dir.path())?;
        let ds = Dataset::load(dir.path())?;
        let train = ds.samples(Split::Train);
        let wm = train_stage1::<f32>(&train, &model, None)?;
        let wm_bytes = wm.checkpoint(BTreeMap::new())?.to_bytes()?;
        let trip = export_behavior_set(&wm.state, &train)?;
        let set_bytes = encode_behavior_set(&trip, "00")?;
        let priors = PriorsArtifact::build(&trip, model.clusters, 1, model.heading_weight, BTreeMap::new())?;
        let priors_bytes = priors.to_bytes()?;
        let pol = train_stage3::<f32>(&train, &priors, &model, Toggles::FULL)?;
        let pol_bytes = pol
            .state
            .checkpoint(Some(&pol.optimizer), "00", BTreeMap::new(), pol.epochs_done)?
            .to_bytes()?;
        Ok((wm_bytes, set_bytes, priors_bytes, pol_bytes, ds_sha))
    };
    match (stages(), stages()) {
        (Ok(a), Ok(b)) => {
            check(
                "stage determinism",
                (a == b).then_some(()).ok_or("two runs differ".into()),
            );
            let back = Checkpoint::from_bytes(&a.0).and_then(|c| c.to_bytes());
            check(
                "checkpoint round trip",
                (back.ok().as_ref() == Some(&a.0))
                    .then_some(())
                    .ok_or("mismatch".into()),
            );
            let back = PriorsArtifact::from_bytes(&a.2).and_then(|p| p.to_bytes());
            check(
                "priors round trip",
                (back.ok().as_ref() == Some(&a.2))
                    .then_some(())
                    .ok_or("mismatch".into()),
            );
            let back = Checkpoint::from_bytes(&a.3).and_then(|c| c.to_bytes());
            check(
                "policy round trip",
                (back.ok().as_ref() == Some(&a.3))
                    .then_some(())
                    .ok_or("mismatch".into()),
            );
        }
        (Err(e), _) | (_, Err(e)) => check("stages", Err(e.to_string())),
    }

    let n_failed = failed.len();
    verdict(
        n_failed == 0,
        if n_failed == 0 {
            format!("{groups} property groups hold")
        } else {
            failed.join("; ")
        },
    )
}

// ---- criteria 4 to 7

fn benchmark_config(seed: u64) -> RunConfig {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/benchmark.json");
    RunConfig::load(std::path::Path::new(path)).unwrap().with_seed(seed)
}

struct Trained {
    state: PolicyState<f32>,
    eval: Evaluation,
}

struct SeedRun {
    cfg: RunConfig,
    dataset: Dataset,
    triplets: Vec<BehaviorTriplet>,
    priors: PriorsArtifact,
    variants: BTreeMap<&'static str, Trained>,
}

fn priors_for(cfg: &RunConfig, triplets: &[BehaviorTriplet], m: usize) -> PriorsArtifact {
    PriorsArtifact::build(
        triplets,
        m,
        derive_seed(cfg.seed, &["kmeans"]),
        cfg.model.heading_weight,
        BTreeMap::new(),
    )
    .unwrap()
}

fn train_and_eval(
    cfg: &RunConfig,
    dataset: &Dataset,
    priors: &PriorsArtifact,
    toggles: Toggles,
    selection: Selection,
) -> Trained {
    let out = train_stage3::<f32>(&dataset.samples(Split::Train), priors, &cfg.model, toggles).unwrap();
    let eval = evaluate_policy(&out.state, priors, dataset, cfg, selection).unwrap();
    Trained { state: out.state, eval }
}

fn seed_run(seed: u64) -> SeedRun {
    let cfg = benchmark_config(seed);
    let dataset = Dataset::generate(&cfg.scenario).unwrap();
    let train = dataset.samples(Split::Train);
    let wm = train_stage1::<f32>(&train, &cfg.model, None).unwrap();
    let triplets = export_behavior_set(&wm.state, &train).unwrap();
    let priors = priors_for(&cfg, &triplets, cfg.model.clusters);
    let mut variants = BTreeMap::new();
    let with_latents = Selection {
        open_loop: true,
        closed_loop: false,
        latents: seed == SEEDS[0],
    };
    for (name, toggles) in [
        ("baseline", Toggles::BASELINE),
        (
            "emar",
            Toggles {
                cltp: false,
                emar: true,
            },
        ),
        ("full", Toggles::FULL),
    ] {
        let t = Instant::now();
        let trained = train_and_eval(&cfg, &dataset, &priors, toggles, with_latents);
        println!(
            "    seed {seed} {name:<8} median avg L2 {:.3} m ({:.0} s)",
            median_l2(&trained.eval),
            t.elapsed().as_secs_f64()
        );
        variants.insert(name, trained);
    }
    SeedRun {
        cfg,
        dataset,
        triplets,
        priors,
        variants,
    }
}

fn median_l2(e: &Evaluation) -> f64 {
    e.open_loop.as_ref().expect("open loop was evaluated").median_avg_l2
}

fn ablation_trend(runs: &[SeedRun]) -> Verdict {
    let mut held = 0;
    let mut parts = Vec::new();
    for r in runs {
        let base = median_l2(&r.variants["baseline"].eval);
        let full = median_l2(&r.variants["full"].eval);
        let emar = median_l2(&r.variants["emar"].eval);
        let gain = (base - full) / base;
        let ok = gain >= ABLATION_GAIN && emar < base;
        held += ok as usize;
        parts.push(format!(
            "seed {}: baseline {base:.3} emar {emar:.3} full {full:.3} ({:+.1}%)",
            r.cfg.seed,
            -100.0 * gain
        ));
    }
    verdict(
        held >= SEEDS_NEEDED,
        format!("trend held in {held}/{} seeds; {}", runs.len(), parts.join(", ")),
    )
}

fn latent_gap(run: &SeedRun) -> Verdict {
    let lat = |name: &str| run.variants[name].eval.latents.clone().expect("latents were evaluated");
    let (full, base) = (lat("full"), lat("baseline"));
    let pass = full.visual.gap() > 0.0
        && full.action.gap() > 0.0
        && full.visual.gap() > base.visual.gap()
        && full.action.gap() > base.action.gap();
    verdict(
        pass,
        format!(
            "gap visual {:.3} (baseline {:.3}), action {:.3} (baseline {:.3})",
            full.visual.gap(),
            base.visual.gap(),
            full.action.gap(),
            base.action.gap()
        ),
    )
}

fn cluster_sweep(run: &SeedRun) -> Verdict {
    let open = Selection {
        open_loop: true,
        closed_loop: false,
        latents: false,
    };
    let mut l2 = BTreeMap::new();
    for m in SWEEP {
        let value = if m == run.cfg.model.clusters {
            median_l2(&run.variants["full"].eval)
        } else {
            let mut cfg = run.cfg.clone();
            cfg.model.clusters = m;
            let priors = priors_for(&cfg, &run.triplets, m);
            median_l2(&train_and_eval(&cfg, &run.dataset, &priors, Toggles::FULL, open).eval)
        };
        l2.insert(m, value);
    }
    let one = l2[&1];
    let worst = SWEEP[1..].iter().all(|m| l2[m] < one);
    let spread = (l2[&6] - l2[&12]).abs() / l2[&6].min(l2[&12]);
    let text: Vec<String> = l2.iter().map(|(m, v)| format!("M={m} {v:.3}")).collect();
    verdict(
        worst && spread < SWEEP_SPREAD,
        format!(
            "{}; M=1 worst {worst}, M=6 vs M=12 {:.1}%",
            text.join(" "),
            100.0 * spread
        ),
    )
}

fn closed_loop_sanity(run: &SeedRun) -> Verdict {
    let cfg = &run.cfg;
    let templates = closed_loop_templates(&run.dataset, cfg.eval.closed_loop_episodes_per_domain);
    let suite = |planner: &dyn trajmem::eval::Planner| -> ClosedLoopReport {
        closed_loop_suite(
            planner,
            &templates,
            &run.dataset.domains,
            cfg.scenario.sim.image_size,
            &cfg.eval.controller,
            cfg.seed,
        )
        .unwrap()
    };
    let t = cfg.model.horizon;
    let cv = suite(&ConstantVelocity { horizon: t });
    let replay = suite(&GroundTruthReplay { horizon: t });
    let policy = suite(&trajmem::eval::PolicyPlanner {
        state: &run.variants["full"].state,
        priors: Some(&run.priors),
    });
    verdict(
        cv.mini_pdms < policy.mini_pdms && replay.mini_pdms >= REPLAY_FLOOR,
        format!(
            "{} episodes: constant velocity {:.2}, trained {:.2}, gt replay {:.2}",
            templates.len(),
            cv.mini_pdms,
            policy.mini_pdms,
            replay.mini_pdms
        ),
    )
}

fn main() {
    let mut results = Vec::new();
    results.push(report(1, "oracle suite", Duration::from_secs(60), oracle_suite));
    results.push(report(2, "gradient suite", Duration::from_secs(120), gradient_suite));
    results.push(report(3, "invariant suite", Duration::from_secs(300), invariant_suite));

    let mut runs = Vec::new();
    results.push(report(4, "ablation trend", Duration::from_secs(45 * 60), || {
        runs = SEEDS.iter().map(|&s| seed_run(s)).collect();
        ablation_trend(&runs)
    }));
    let first = runs.first();
    let skipped = || verdict(false, "no benchmark run available");
    results.push(report(5, "latent structure gap", Duration::from_secs(45 * 60), || {
        first.map(latent_gap).unwrap_or_else(skipped)
    }));
    results.push(report(
        6,
        "cluster-count robustness",
        Duration::from_secs(45 * 60),
        || first.map(cluster_sweep).unwrap_or_else(skipped),
    ));
    results.push(report(7, "closed-loop sanity", Duration::from_secs(10 * 60), || {
        first.map(closed_loop_sanity).unwrap_or_else(skipped)
    }));

    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    // the trained-model criteria are reported; the suites gate the run
    if !results[..3].iter().all(|&p| p) {
        std::process::exit(1);
    }
}
