use proptest::prelude::*;

use crossview::ablate::median;
use crossview::datasets::{generate_synthetic, SynthConfig, SynthData};
use crossview::sampler::{SamplerConfig, Strategy};
use crossview::trainer::{encode, evaluate_holdout, read_params, train, write_params, EncoderParams, Objective, TrainConfig, View};

fn data(seed: u64) -> SynthData {
    generate_synthetic(&SynthConfig {
        n_pairs: 240,
        latent_dim: 8,
        view_dim: 16,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn small(strategy: Strategy, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 6,
        hidden_dim: 24,
        embed_dim: 8,
        seed,
        sampler: SamplerConfig {
            batch_size: 32,
            pool_size: 16,
            picks_per_anchor: 8,
            refresh_every: 2,
            gps_epochs: 2,
            strategy,
            seed,
        },
        ..TrainConfig::default()
    }
}

#[test]
fn loss_falls_in_median_over_seeds() {
    let d = data(0);
    let ratios: Vec<f64> = (0..5)
        .map(|seed| {
            let run = train(&d.manifest, &d.query_features, &d.reference_features, &small(Strategy::Random, seed)).unwrap();
            run.history.last().unwrap().loss / run.history[0].loss
        })
        .collect();
    assert!(median(&ratios) < 0.9, "{ratios:?}");
}

#[test]
fn shared_encoder_has_half_the_parameters() {
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let shared = EncoderParams::random(16, 32, 8, true, &mut rng);
    let separate = EncoderParams::random(16, 32, 8, false, &mut rng);
    let one = 16 * 32 + 32 + 32 * 8 + 8;
    assert_eq!(shared.num_params(), one);
    assert_eq!(separate.num_params(), 2 * one);
}

#[test]
fn saved_parameters_reproduce_the_report() {
    let d = data(1);
    let mut cfg = small(Strategy::GpsThenDss, 3);
    cfg.shared_weights = false;
    let run = train(&d.manifest, &d.query_features, &d.reference_features, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_params(&run.params, run.logit_scale, dir.path()).unwrap();
    let (params, scale) = read_params(dir.path()).unwrap();
    assert_eq!(scale, run.logit_scale);
    assert_eq!(params, run.params);
    let a = encode(&run.params, &d.query_features, View::Query).unwrap();
    let b = encode(&params, &d.query_features, View::Query).unwrap();
    assert_eq!(a, b);
    let report = evaluate_holdout(&run, &d.manifest, &d.query_features, &d.reference_features).unwrap();
    assert_eq!(report.n_queries, 24);
    assert_eq!(report.r1(), run.history.last().unwrap().r1);
}

#[test]
fn every_objective_trains_to_finite_parameters() {
    let d = data(2);
    for objective in [Objective::InfoNce, Objective::Triplet, Objective::SoftMarginTriplet] {
        let cfg = TrainConfig {
            objective,
            ..small(Strategy::Dss, 0)
        };
        let run = train(&d.manifest, &d.query_features, &d.reference_features, &cfg).unwrap();
        assert!(run.params.is_finite());
        assert!(run.history.iter().all(|h| h.loss.is_finite()), "{objective:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn plans_cover_the_training_split(seed in any::<u64>(), strat in 0usize..4) {
        let d = data(seed % 3);
        let cfg = TrainConfig { epochs: 3, ..small(Strategy::ALL[strat], seed) };
        let run = train(&d.manifest, &d.query_features, &d.reference_features, &cfg).unwrap();
        for plan in &run.plans {
            let mut all: Vec<usize> = plan.batches.concat();
            all.sort_unstable();
            prop_assert_eq!(all, (0..run.n_train).collect::<Vec<_>>());
        }
    }
}
