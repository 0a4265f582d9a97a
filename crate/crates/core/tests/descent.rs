use morphon::data::SyntheticConfig;
use morphon::loss::{total_loss, LossConfig};
use morphon::network::NetworkSpec;
use morphon::train::{fit, TrainConfig};
use morphon::Network;

#[test]
fn one_adam_step_reduces_loss_for_most_seeds() {
    let cfg = LossConfig::default();
    let pair = SyntheticConfig { count: 1, size: 32, seed: 9, ..Default::default() }.pair(0);
    let mut decreased = 0;
    for seed in 0..20 {
        let mut net = Network::build(NetworkSpec::morphon_small(8, 8), seed).unwrap();
        let pass = net.forward(&pair.rainy).unwrap();
        let before = net.backward(&pass, &pair.clean, &cfg).unwrap();
        net.step().unwrap();
        let after = total_loss(&net.infer(&pair.rainy).unwrap(), &pair.clean, &cfg).unwrap();
        if after < before {
            decreased += 1;
        }
    }
    assert!(decreased >= 18, "loss decreased for only {decreased} of 20 seeds");
}

#[test]
fn short_training_run_descends() {
    let pairs = SyntheticConfig { count: 20, size: 64, seed: 2, angle_spread: 30.0, ..Default::default() }
        .generate()
        .unwrap();
    let mut net = Network::build(NetworkSpec::morphon_small(5, 8), 1).unwrap();
    let cfg = TrainConfig { epochs: 30, batch_size: 1, loss: LossConfig::default(), seed: 1 };
    let mut losses = Vec::new();
    fit(&mut net, &pairs, &[], &cfg, |e| losses.push(e.train_loss)).unwrap();
    assert_eq!(losses.len(), 30);
    assert!(losses[29] < losses[0], "{losses:?}");
    assert_eq!(net.meta.epochs, 30);
}

#[test]
fn batched_training_descends() {
    let pairs = SyntheticConfig { count: 8, size: 32, seed: 4, ..Default::default() }.generate().unwrap();
    let mut net = Network::build(NetworkSpec::morphon_small(3, 8), 2).unwrap();
    let cfg = TrainConfig { epochs: 15, batch_size: 4, loss: LossConfig::default(), seed: 2 };
    let mut losses = Vec::new();
    fit(&mut net, &pairs, &[], &cfg, |e| losses.push(e.train_loss)).unwrap();
    assert!(losses.last().unwrap() < &losses[0], "{losses:?}");
    assert_eq!(net.optimizer.step_count, 30);
}
