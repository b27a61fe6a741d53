use sal_core::data::{generate, DataConfig, Dataset};
use sal_core::nn::{AdamConfig, EncoderConfig, InvDynConfig, PolicyConfig};
use sal_core::sim::SimConfig;
use sal_core::train::{train_policy, TrainConfig, Variant};

fn dataset() -> Dataset {
    generate(&DataConfig {
        n_traj: 20,
        seed: 11,
        tasks: vec!["pick-red".into(), "place-red-right".into()],
        sim: SimConfig {
            image_size: 16,
            ..SimConfig::default()
        },
        ..DataConfig::default()
    })
    .unwrap()
}

fn config(variant: Variant) -> TrainConfig {
    TrainConfig {
        horizon: 4,
        steps: 200,
        batch: 16,
        adam: AdamConfig {
            lr: 3e-3,
            ..AdamConfig::default()
        },
        encoder: EncoderConfig {
            image_size: 16,
            patch: 4,
            channels: 16,
            depth: 1,
            seed: 0,
        },
        policy: PolicyConfig {
            hidden: 64,
            ..PolicyConfig::default()
        },
        invdyn: InvDynConfig {
            dec_dim: 16,
            hidden: 64,
            ..InvDynConfig::default()
        },
        ..TrainConfig::default()
    }
    .with_variant(variant)
}

fn window_mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn loss_decreases_for_every_variant() {
    let data = dataset();
    for v in Variant::ALL {
        let (_, log) = train_policy(config(v), &data).unwrap();
        assert_eq!(log.len(), 200);
        let total: Vec<f64> = log.iter().map(|r| r.total).collect();
        let (first, last) = (window_mean(&total[..50]), window_mean(&total[150..]));
        assert!(last < first, "{v}: first-50 mean {first}, last-50 mean {last}");
        assert!(log.iter().all(|r| r.total.is_finite()));
        if v == Variant::Bc {
            assert!(log.iter().all(|r| r.l_inv == 0.0 && r.reversed_fraction == 0.0));
        } else {
            let inv: Vec<f64> = log.iter().map(|r| r.l_inv).collect();
            assert!(window_mean(&inv[150..]) < window_mean(&inv[..50]), "{v}: L_inv did not fall");
        }
    }
}

#[test]
fn aux_ptr_reverses_about_half_the_pairs() {
    let (_, log) = train_policy(config(Variant::AuxPtr), &dataset()).unwrap();
    let frac = window_mean(&log.iter().map(|r| r.reversed_fraction).collect::<Vec<_>>());
    assert!((frac - 0.5).abs() < 0.05, "{frac}");
}
