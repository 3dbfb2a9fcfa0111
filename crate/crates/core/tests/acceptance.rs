//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits nonzero if any hard criterion fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use autobrake::ddpg::{soft_update, ActorCritic, DdpgConfig, ReplayBuffer, Transition};
use autobrake::env::{compute_reward, BrakingEnv, EnvConfig, EpisodeEvent, OBS_DIM};
use autobrake::harness::{self, Algorithm, EvalPolicy, EvalReport, Overrides, RunConfig, TrainOutcome};
use autobrake::nn::{Activation, Network};
use autobrake::ppo::{clipped_objective, compute_gae, PpoAgent, PpoConfig, RolloutBuffer, RolloutCollector};
use autobrake::trial::{annotate_crossing, derive_speeds, Trial, TrialFrame, DEFAULT_ENTRY_THRESHOLD};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

const SEEDS: [u64; 3] = [1, 2, 3];
const SYNTHETIC_TRIALS: usize = 250;
const PPO_EPISODES: usize = 3000;
/// DDPG budget for the safety check; see README for the default budget.
const DDPG_ENV_STEPS: usize = 30_000;

struct Outcome {
    id: &'static str,
    title: &'static str,
    pass: bool,
    /// Soft criteria are reported but never fail the suite.
    hard: bool,
    detail: String,
}

impl Outcome {
    fn line(&self) -> String {
        let status = match (self.pass, self.hard) {
            (true, _) => "PASS",
            (false, true) => "FAIL",
            (false, false) => "FAIL (soft)",
        };
        format!("[{status}] {} {}: {}", self.id, self.title, self.detail)
    }
}

fn outcome(id: &'static str, title: &'static str, pass: bool, detail: String) -> Outcome {
    Outcome { id, title, pass, hard: true, detail }
}

// ---------------------------------------------------------------- C3

/// Reward written out directly with weights 0.1, 0.01, 0.01.
fn reward_oracle(v: f64, a: f64, jerk: f64, event: EpisodeEvent) -> f64 {
    let (eta, beta, mu) = (0.1, 0.01, 0.01);
    let accident = if event == EpisodeEvent::Accident { 1.0 } else { 0.0 };
    -(eta * v) * accident - beta * v - mu * a * jerk.abs()
}

fn c3_reward_oracle() -> Outcome {
    let cfg = EnvConfig::default();
    let events = [
        EpisodeEvent::Ongoing,
        EpisodeEvent::Accident,
        EpisodeEvent::Pass,
        EpisodeEvent::Cross,
        EpisodeEvent::Stop,
        EpisodeEvent::Timeout,
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let v = rng.random_range(0.0..15.0);
        let a = rng.random_range(0.0..1.0);
        let jerk = rng.random_range(-100.0..100.0);
        let e = events[rng.random_range(0..events.len())];
        worst = worst.max((compute_reward(v, a, jerk, e, &cfg) - reward_oracle(v, a, jerk, e)).abs());
    }
    let spot = [
        (compute_reward(10.0, 0.0, 0.0, EpisodeEvent::Accident, &cfg), -1.1),
        (compute_reward(0.0, 0.0, 0.0, EpisodeEvent::Stop, &cfg), 0.0),
        (compute_reward(11.11, 0.5, 40.0, EpisodeEvent::Ongoing, &cfg), -0.3111),
    ];
    let spot_ok = spot.iter().all(|(got, want)| (got - want).abs() < 1e-12);
    outcome(
        "C3",
        "reward oracle",
        worst <= 1e-12 && spot_ok,
        format!("max |diff| over 1000 tuples {worst:e}; spot values {:?}", spot.map(|s| s.0)),
    )
}

// ---------------------------------------------------------------- C4

fn waiting_trial() -> Trial {
    let frames = (0..=600)
        .map(|i| TrialFrame {
            t: i as f64 * 0.1,
            ped_x: 0.0,
            ped_y: 0.0,
            head_x: 1.0,
            head_y: 0.0,
            head_z: 0.0,
            ped_speed: 0.0,
        })
        .collect();
    let t = Trial {
        id: "wait".into(),
        frames,
        curb_y: 0.0,
        far_y: 7.0,
        crossing_start_idx: None,
        crossing_end_idx: None,
        wait_time: 0.0,
    };
    derive_speeds(annotate_crossing(t, DEFAULT_ENTRY_THRESHOLD)).unwrap()
}

fn c4_physics() -> Outcome {
    let cfg = EnvConfig::default();
    let trial = waiting_trial();
    let (mut env, _) = BrakingEnv::reset(&trial, &cfg).unwrap();
    let start = env.vehicle().pos_x;
    let last = loop {
        let r = env.step(1.0).unwrap();
        if r.event.is_terminal() {
            break r;
        }
    };
    let simulated = last.info.pos_x - start;
    let analytic = 11.11f64.powi(2) / (2.0 * 8.0);
    let gap = (analytic - simulated).abs();
    outcome(
        "C4",
        "full-brake stopping distance",
        last.event == EpisodeEvent::Stop && gap <= 1.12 && (analytic - 7.715).abs() < 5e-4,
        format!("simulated {simulated:.4} m, analytic {analytic:.4} m, gap {gap:.4} m (limit 1.12) after {} steps", last.info.step),
    )
}

// ---------------------------------------------------------------- C5

fn c5_gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for _ in 0..100 {
        let mut sizes = vec![rng.random_range(1..=6)];
        for _ in 0..rng.random_range(1..=3) {
            sizes.push(rng.random_range(1..=8));
        }
        let mut net = Network::init(&sizes, Activation::Tanh, &mut rng).unwrap();
        for p in net.param_slices_mut() {
            p.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        }
        let batch = rng.random_range(1..=4);
        let x = Array2::from_shape_fn((batch, net.input_dim()), |_| rng.random_range(-1.5..1.5));
        let w = Array2::from_shape_fn((batch, net.output_dim()), |_| rng.random_range(-1.0..1.0));
        let loss = |n: &Network| (n.predict(x.view()).unwrap() * &w).sum();
        let (_, cache) = net.forward(x.view()).unwrap();
        let grads = net.backward(&cache, w.view()).unwrap();
        let analytic: Vec<f64> = grads.layers.iter().flat_map(|g| g.weights.iter().chain(g.bias.iter()).copied().collect::<Vec<_>>()).collect();
        let mut k = 0;
        for slice in 0..net.param_slices().count() {
            let len = net.param_slices().nth(slice).unwrap().len();
            for j in 0..len {
                let mut plus = net.clone();
                let mut minus = net.clone();
                plus.param_slices_mut().nth(slice).unwrap()[j] += h;
                minus.param_slices_mut().nth(slice).unwrap()[j] -= h;
                let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
                let err = (analytic[k] - numeric).abs() / (analytic[k].abs() + numeric.abs()).max(1e-6);
                worst = worst.max(err);
                k += 1;
                checked += 1;
            }
        }
    }
    outcome(
        "C5",
        "gradient correctness",
        worst < 1e-4,
        format!("100 networks, {checked} parameters, worst relative error {worst:.2e} (limit 1e-4)"),
    )
}

// ---------------------------------------------------------------- C6

fn c6_ppo_mechanics() -> Outcome {
    let spot1 = clipped_objective(1.3, 2.0, 0.2);
    let spot2 = clipped_objective(0.5, -1.0, 0.2);
    let spots_ok = (spot1 - 2.4).abs() < 1e-12 && (spot2 + 0.8).abs() < 1e-12;

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut gae0, mut gae1) = (0.0f64, 0.0f64);
    let gamma = 0.99;
    for _ in 0..1000 {
        let r: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..10).map(|_| rng.random_range(-2.0..2.0)).collect();
        let dones: Vec<bool> = (0..10).map(|_| rng.random_bool(0.2)).collect();
        let boot = rng.random_range(-2.0..2.0);
        let (adv, _) = compute_gae(&r, &v, &dones, boot, gamma, 0.0).unwrap();
        for t in 0..10 {
            let next = if t + 1 < 10 { v[t + 1] } else { boot };
            let delta = r[t] + if dones[t] { 0.0 } else { gamma * next } - v[t];
            gae0 = gae0.max((adv[t] - delta).abs());
        }
        let (adv, _) = compute_gae(&r, &[0.0; 10], &[false; 10], 0.0, gamma, 1.0).unwrap();
        for t in 0..10 {
            let brute: f64 = (t..10).map(|k| gamma.powi((k - t) as i32) * r[k]).sum();
            gae1 = gae1.max((adv[t] - brute).abs());
        }
    }

    let trials: Vec<Trial> = harness::synthesize_trials(&Default::default(), 8, 6).unwrap();
    let mut agent = PpoAgent::new(PpoConfig::default(), &mut rng).unwrap();
    let mut collector = RolloutCollector::new(&trials, EnvConfig::default(), 6).unwrap();
    let mut buffer = RolloutBuffer::new(agent.config.buffer_size);
    collector.collect(&agent, &mut buffer, usize::MAX).unwrap();
    let report = agent.update(&mut buffer, &mut rng).unwrap();
    let ratio_dev = report.initial_ratio_max_deviation;

    outcome(
        "C6",
        "PPO mechanics",
        spots_ok && gae0 <= 1e-10 && gae1 <= 1e-10 && ratio_dev <= 1e-9,
        format!(
            "first-minibatch max |ratio-1| {ratio_dev:.1e}; clipped spots {spot1}, {spot2}; GAE max diff lambda=0 {gae0:.1e}, lambda=1 {gae1:.1e}"
        ),
    )
}

// ---------------------------------------------------------------- C7

fn c7_ddpg_mechanics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let sizes = [OBS_DIM, 16, 8, 1];
    let source = Network::init(&sizes, Activation::Tanh, &mut rng).unwrap();
    let target0 = Network::init(&sizes, Activation::Tanh, &mut rng).unwrap();
    let params = |n: &Network| n.param_slices().flat_map(|s| s.to_vec()).collect::<Vec<f64>>();
    let (s, t0) = (params(&source), params(&target0));

    let mut closed_form = true;
    for tau in [0.0, 0.5, 1.0] {
        let mut t = target0.clone();
        soft_update(&mut t, &source, tau).unwrap();
        let got = params(&t);
        let want: Vec<f64> = match tau {
            0.0 => t0.clone(),
            1.0 => s.clone(),
            _ => s.iter().zip(&t0).map(|(s, t)| (s + t) / 2.0).collect(),
        };
        closed_form &= got == want;
    }
    let mut half = Network::from_layers(vec![autobrake::nn::Layer {
        weights: Array2::from_elem((1, 1), 0.0),
        bias: ndarray::Array1::zeros(1),
        activation: Activation::Identity,
    }])
    .unwrap();
    let mut two = half.clone();
    two.param_slices_mut().next().unwrap()[0] = 2.0;
    soft_update(&mut half, &two, 0.5).unwrap();
    closed_form &= half.param_slices().next().unwrap()[0] == 1.0;

    let max_gap = |t: &Network| params(t).iter().zip(&s).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let gap0 = max_gap(&target0);
    let mut contraction = 0.0f64;
    for tau in [1e-3, 0.1] {
        let mut t = target0.clone();
        for k in 1..=200 {
            soft_update(&mut t, &source, tau).unwrap();
            contraction = contraction.max((max_gap(&t) - (1.0 - tau).powi(k) * gap0).abs());
        }
    }

    let mut buf = ReplayBuffer::new(100);
    for i in 0..100 {
        buf.store(Transition {
            state: [i as f64; OBS_DIM],
            action: 0.5,
            reward: 0.0,
            next_state: [0.0; OBS_DIM],
            done: false,
        })
        .unwrap();
    }
    let mut counts = [0usize; 100];
    for _ in 0..1000 {
        for i in buf.sample_indices(100, &mut rng).unwrap() {
            counts[i] += 1;
        }
    }
    let expected = 1000.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new(99.0).unwrap().cdf(chi2);

    let cfg = DdpgConfig::default();
    let nets = ActorCritic::new(&cfg, &mut rng).unwrap();
    let batch: Vec<Transition> = (0..64)
        .map(|i| Transition {
            state: std::array::from_fn(|_| rng.random_range(-1.0..1.0)),
            action: rng.random(),
            reward: rng.random_range(-2.0..0.0),
            next_state: std::array::from_fn(|_| rng.random_range(-1.0..1.0)),
            done: i % 2 == 0,
        })
        .collect();
    let y = ActorCritic::critic_targets(&nets.target_actor, &nets.target_critic, &batch, cfg.gamma).unwrap();
    let terminal_exact = batch.iter().zip(&y).filter(|(t, _)| t.done).all(|(t, y)| *y == t.reward);

    outcome(
        "C7",
        "DDPG mechanics",
        closed_form && contraction <= 1e-9 && p > 0.001 && terminal_exact,
        format!(
            "soft-update closed form {closed_form}; contraction max error {contraction:.1e}; replay chi2 {chi2:.1} (p = {p:.3}); terminal y = r {terminal_exact}"
        ),
    )
}

// ---------------------------------------------------------------- C8

fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn c8_determinism(root: &Path) -> Outcome {
    let mut details = Vec::new();
    let mut pass = true;
    for (algo, budget) in [("ppo", "episodes = 600"), ("ddpg", "env_steps = 3000")] {
        let out = root.join(format!("determinism_{algo}"));
        let text = format!("[run]\nalgorithm = \"{algo}\"\nseed = 11\n{budget}\nout = \"{}\"\n\n[trials]\nsynthetic_count = 40\n", out.display());
        let cfg = RunConfig::from_text(&text).unwrap().resolve(&Overrides::default()).unwrap();
        let mut snaps = Vec::new();
        for _ in 0..2 {
            let _ = fs::remove_dir_all(&out);
            let trained = harness::train(&cfg).unwrap();
            let policy = EvalPolicy::from_checkpoint(&trained.checkpoint).unwrap();
            let (_, test) = harness::resolve_trials(&cfg).unwrap();
            harness::evaluate(&policy, &test, &cfg.env, Some(&out.join("eval"))).unwrap();
            snaps.push((snapshot(&out), trained.log.len()));
        }
        let same = snaps[0].0 == snaps[1].0;
        pass &= same && snaps[0].1 > 0;
        details.push(format!("{algo}: {} files, {} log rows, identical {same}", snaps[0].0.len(), snaps[0].1));
    }
    outcome("C8", "determinism", pass, details.join("; "))
}

// ---------------------------------------------------------------- C1, C2, C9

struct Run {
    outcome: TrainOutcome,
    report: EvalReport,
}

fn run_config(root: &Path, algorithm: Algorithm, comfort: bool, seed: u64) -> RunConfig {
    let name = match (algorithm, comfort) {
        (Algorithm::Ppo, true) => "ppo1",
        (Algorithm::Ppo, false) => "ppo2",
        (Algorithm::Ddpg, _) => "ddpg",
    };
    let budget = match algorithm {
        Algorithm::Ppo => format!("episodes = {PPO_EPISODES}"),
        Algorithm::Ddpg => format!("env_steps = {DDPG_ENV_STEPS}"),
    };
    let text = format!("[run]\n{budget}\ncheckpoint_every = 0\n\n[trials]\nsynthetic_count = {SYNTHETIC_TRIALS}\nsynthetic_seed = 2020\nsplit_seed = 7\n");
    RunConfig::from_text(&text)
        .unwrap()
        .resolve(&Overrides {
            seed: Some(seed),
            out: Some(root.join(format!("{name}_seed{seed}"))),
            algorithm: Some(algorithm),
            comfort: Some(comfort),
            episodes: None,
        })
        .unwrap()
}

fn train_and_evaluate(cfg: &RunConfig) -> Run {
    let start = Instant::now();
    let outcome = harness::train(cfg).unwrap();
    let (train, test) = harness::resolve_trials(cfg).unwrap();
    assert_eq!((train.len(), test.len()), (200, 50));
    let policy = EvalPolicy::from_checkpoint(&outcome.checkpoint).unwrap();
    let (report, _) = harness::evaluate(&policy, &test, &cfg.env, Some(&cfg.run.out.join("eval"))).unwrap();
    println!(
        "    {} ({:.0}s): {} episodes, {} env steps, held-out mean |jerk| {:.3}, accidents {}, events {:?}",
        cfg.run.out.file_name().unwrap().to_string_lossy(),
        start.elapsed().as_secs_f64(),
        outcome.curve.len(),
        outcome.curve.last().map_or(0, |e| e.total_steps),
        report.mean_abs_jerk,
        report.accidents,
        report.events
    );
    Run { outcome, report }
}

fn experiment(root: &Path) -> Vec<Outcome> {
    let mut ppo1 = Vec::new();
    let mut ppo2 = Vec::new();
    let mut ddpg = Vec::new();
    for seed in SEEDS {
        ppo1.push(train_and_evaluate(&run_config(root, Algorithm::Ppo, true, seed)));
        ppo2.push(train_and_evaluate(&run_config(root, Algorithm::Ppo, false, seed)));
        ddpg.push(train_and_evaluate(&run_config(root, Algorithm::Ddpg, true, seed)));
    }

    let ratios: Vec<f64> = ppo1
        .iter()
        .zip(&ppo2)
        .map(|(a, b)| harness::compare(&a.report, &b.report).unwrap().jerk_ratio)
        .collect();
    let halved = ratios.iter().filter(|&&r| r <= 0.6).count();
    let c1 = outcome(
        "C1",
        "jerk halving (PPO1 vs PPO2)",
        halved >= 2,
        format!(
            "mean |jerk| ratio per seed {:?}; {halved}/3 seeds <= 0.6 (need 2)",
            ratios.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>()
        ),
    );

    let accidents = |runs: &[Run]| runs.iter().map(|r| r.report.accidents).collect::<Vec<_>>();
    let (a1, a2, a3) = (accidents(&ppo1), accidents(&ppo2), accidents(&ddpg));
    let all_episodes = ppo1.iter().chain(&ppo2).chain(&ddpg).all(|r| r.report.episodes == 50);
    let c2 = outcome(
        "C2",
        "safety on held-out trials",
        all_episodes && a1.iter().chain(&a2).chain(&a3).all(|&a| a == 0),
        format!("accidents per seed: PPO1 {a1:?}, PPO2 {a2:?}, DDPG {a3:?} (50 trials each)"),
    );

    let conv = |runs: &[Run]| runs.iter().map(|r| r.outcome.convergence_episode).collect::<Vec<_>>();
    let (cp, cd) = (conv(&ppo1), conv(&ddpg));
    let curves = ppo1.iter().chain(&ddpg).all(|r| r.outcome.out_dir.join("curve.csv").exists());
    let earlier = cp.iter().zip(&cd).filter(|(p, d)| matches!((p, d), (Some(p), Some(d)) if d < p)).count();
    let c9 = Outcome {
        id: "C9",
        title: "convergence comparison (reported)",
        pass: curves && cp.iter().chain(&cd).all(Option::is_some) && earlier >= 2,
        hard: false,
        detail: format!("90% convergence episode PPO1 {cp:?}, DDPG {cd:?}; DDPG earlier in {earlier}/3 seeds"),
    };
    vec![c1, c2, c9]
}

fn main() -> ExitCode {
    // Ignore libtest arguments such as filters; this binary always runs everything.
    let start = Instant::now();
    let root = tempfile::tempdir().unwrap();
    let mut outcomes = Vec::new();
    let mut record = |o: Outcome| {
        println!("{}", o.line());
        outcomes.push(o);
    };
    record(c3_reward_oracle());
    record(c4_physics());
    record(c5_gradients());
    record(c6_ppo_mechanics());
    record(c7_ddpg_mechanics());
    record(c8_determinism(root.path()));
    println!("running the PPO1 / PPO2 / DDPG experiment ({} seeds)...", SEEDS.len());
    for o in experiment(root.path()) {
        record(o);
    }

    outcomes.sort_by_key(|o| o.id);
    println!("\nacceptance summary ({:.0}s):", start.elapsed().as_secs_f64());
    for o in &outcomes {
        println!("{}", o.line());
    }
    if outcomes.iter().any(|o| o.hard && !o.pass) {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
