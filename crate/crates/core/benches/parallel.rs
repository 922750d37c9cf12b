use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use oppo::agent::{collect, ActorState, AgentConfig, BonusSource};
use oppo::bandit::{build_bandit_tile, BanditTileConfig};
use oppo::harness::{run_seeds, ExperimentConfig};
use oppo::par::Execution;
use oppo::policy::PolicyTable;
use oppo::rng::{purpose, stream};
use oppo::testbed::{random_instance, InstanceSpec};
use oppo::verify::{verify_posterior_bounds, MonteCarloConfig};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn posterior_check(c: &mut Criterion) {
    let inst = random_instance(&InstanceSpec::default(), &mut stream(0, purpose::INSTANCE, 0)).unwrap();
    let mut group = c.benchmark_group("posterior_check");
    group.sample_size(10);
    for (name, exec) in MODES {
        let mc = MonteCarloConfig { samples: 2000, bootstrap_resamples: 50, exec, ..MonteCarloConfig::default() };
        group.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| verify_posterior_bounds(&inst.belief, &inst.policy, &mc).unwrap()));
    }
    group.finish();
}

fn rollout(c: &mut Criterion) {
    let env = build_bandit_tile(&BanditTileConfig::default()).unwrap();
    let logits = PolicyTable::zeros(env.num_states(), env.num_actions());
    let mut group = c.benchmark_group("rollout");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                let mut actors: Vec<ActorState> = (0..32).map(|n| ActorState::new(stream(0, purpose::ACTOR, n))).collect();
                let mut bonus = BonusSource::exact_count(env.num_states());
                collect(&env, &logits, &mut bonus, &mut actors, 64, exec).unwrap()
            })
        });
    }
    group.finish();
}

fn multi_seed(c: &mut Criterion) {
    let mut group = c.benchmark_group("multi_seed");
    group.sample_size(10);
    for (name, exec) in MODES {
        let cfg = ExperimentConfig {
            agent: AgentConfig { actors: 8, steps_per_actor: 64, ..AgentConfig::default() },
            total_timesteps: 8 * 64 * 20,
            seeds: (0..4).collect(),
            execution: exec,
            ..ExperimentConfig::default()
        };
        group.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| run_seeds(&cfg).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, posterior_check, rollout, multi_seed);
criterion_main!(benches);
