use proptest::prelude::{prop_assert, prop_assert_eq, proptest};
use selfmodel_core::env::{preset, reset, CrawlerEnv, Environment, TaskKind, TaskSpec, PRESET_NAMES};
use selfmodel_core::harness::{
    aggregate, run_cell, run_mfrl_cell, CellSpec, HarnessConfig, SweepSpec,
};
use selfmodel_core::nn::Activation;
use selfmodel_core::ppo::{train, PolicyValuePair, PpoConfig};
use selfmodel_core::rng::rng_from_seed;
use selfmodel_core::self_model::{collect_random, fit_self_model, FitConfig, ModelEnv};

fn small_harness() -> HarnessConfig {
    HarnessConfig {
        ppo: PpoConfig {
            rollout_batch: 128,
            minibatch_size: 32,
            epochs_per_update: 2,
            ..PpoConfig::default()
        },
        fit: FitConfig {
            hidden: vec![32],
            max_epochs: 10,
            ..FitConfig::default()
        },
        ppo_budget_model: 512,
        eval_episodes: 2,
        collect_episode_len: 50,
        crawler_overrides: Vec::new(),
    }
}

#[test]
fn both_arms_use_exactly_the_budget() {
    let h = small_harness();
    for (preset_name, budget) in [("crawler-2", 200), ("crawler-6", 333)] {
        let spec = CellSpec::new(preset_name, budget, TaskKind::Walk, 1, 5).unwrap();
        let r = run_cell(&spec, &h);
        assert!(r.is_ok(), "{:?}", r.error);
        assert_eq!(r.real_steps_mfrl, budget as u64);
        assert_eq!(r.real_steps_selfmodel, budget as u64);
        assert!(r.seed_resets_selfmodel > 0);
        let mfrl = run_mfrl_cell(&spec, &h).unwrap();
        assert_eq!(mfrl.real_usage.steps, budget as u64);
    }
}

#[test]
fn learned_model_env_never_steps_the_crawler() {
    let c = preset("crawler-4").unwrap();
    let data = collect_random(&c, 400, 50, 2).unwrap();
    let model = fit_self_model(
        &data,
        &FitConfig {
            hidden: vec![32, 32],
            activation: Activation::Tanh,
            max_epochs: 20,
            ..FitConfig::default()
        },
    )
    .unwrap();
    let real = CrawlerEnv::new(c.clone(), TaskSpec::jump(&c), 3).unwrap();
    let mut env = ModelEnv::new(&model, real);
    let mut agent = PolicyValuePair::new(c.observation_dim(), c.dof(), &mut rng_from_seed(1)).unwrap();
    let ppo = PpoConfig {
        rollout_batch: 256,
        total_step_budget: 1000,
        ..PpoConfig::default()
    };
    let log = train(&mut agent, &mut env, &ppo, 4).unwrap();
    assert_eq!(log.steps, 1000);
    assert_eq!(env.model_steps(), 1000);
    assert_eq!(env.real_usage().steps, 0);
    assert!(env.real_usage().resets >= 1);
}

#[test]
fn small_sweep_aggregates_every_cell() {
    let sweep = SweepSpec {
        master_seed: 3,
        presets: vec!["crawler-2".into(), "crawler-4".into()],
        budgets: vec![100],
        seeds_per_cell: 2,
        tasks: vec![TaskKind::Walk],
    };
    let h = HarnessConfig {
        ppo_budget_model: 256,
        ..small_harness()
    };
    let cells: Vec<_> = sweep.cells().unwrap().iter().map(|s| run_cell(s, &h)).collect();
    let result = aggregate(cells);
    assert_eq!(result.cells.len(), 4);
    assert_eq!(result.groups.len(), 2);
    assert!(result.groups.iter().all(|g| g.n_ok + g.n_failed == 2));
    assert_eq!(result.regressions.len(), 1);
}

proptest! {
    #[test]
    fn reset_observations_have_the_documented_shape(idx in 0usize..6, seed in 0u64..10_000) {
        let c = preset(PRESET_NAMES[idx]).unwrap();
        let (state, obs) = reset(&c, seed);
        prop_assert_eq!(obs.len(), 2 * c.dof() + 6);
        prop_assert!(state.is_finite());
        prop_assert_eq!(reset(&c, seed), (state, obs));
    }

    #[test]
    fn env_episodes_replay_exactly(seed in 0u64..1000) {
        let c = preset("crawler-2").unwrap();
        let run = || {
            let mut env = CrawlerEnv::new(c.clone(), TaskSpec::walk(&c), seed).unwrap();
            let mut out = vec![env.reset().unwrap()];
            for k in 0..30 {
                let a = [((k as f64) * 0.37).sin(), ((k as f64) * 0.11).cos()];
                out.push(env.step(&a).unwrap().observation);
            }
            out
        };
        prop_assert_eq!(run(), run());
    }
}
