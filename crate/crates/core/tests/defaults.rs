//! Default hyperparameters against their reference values.

use autobrake::ddpg::DdpgConfig;
use autobrake::env::EnvConfig;
use autobrake::harness::{Overrides, RunConfig};
use autobrake::ppo::PpoConfig;

#[test]
fn ppo_table() {
    let c = PpoConfig::default();
    assert_eq!((c.batch_size, c.buffer_size, c.time_horizon), (64, 10240, 1024));
    assert_eq!((c.learning_rate, c.gamma), (1e-3, 0.99));
    assert_eq!(c.hidden_layers, [256, 256, 256]);
}

#[test]
fn ddpg_table() {
    let c = DdpgConfig::default();
    assert_eq!((c.buffer_size, c.minibatch), (10240, 128));
    assert_eq!((c.gamma, c.tau, c.actor_lr, c.critic_lr), (0.99, 1e-3, 1e-4, 1e-4));
    assert_eq!(c.hidden_layers, [256, 128]);
}

#[test]
fn reward_weights() {
    let c = EnvConfig::default();
    assert_eq!((c.eta, c.beta, c.mu), (0.1, 0.01, 0.01));
}

#[test]
fn algorithm_configurations() {
    let base = RunConfig::from_text("[trials]\nsynthetic_count = 5\n").unwrap();
    let ppo1 = base.clone().resolve(&Overrides::default()).unwrap();
    let ppo2 = base.clone().resolve(&Overrides { comfort: Some(false), ..Default::default() }).unwrap();
    assert_eq!(ppo1.env.mu, 0.01);
    assert_eq!(ppo2.env.mu, 0.0);
    assert!(ppo1.manifest().contains("mu = 0.01"));
}
