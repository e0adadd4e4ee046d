//! Longer-horizon training behavior on the full synthetic setup.

mod common;

use common::{random_micro_batch, stage_micro_batch};
use xslu::corpus::{generate_synthetic, GeneratorSpec};
use xslu::encoder::EncoderConfig;
use xslu::losses::{total_loss, CLConfig, LossWeights, Term, TermGates};
use xslu::numerics::Tape;
use xslu::train::{fit, AblationMode, OptimizerKind, SwitchConfig, TrainConfig};

#[test]
fn ce_only_loss_strictly_decreases_over_twenty_epochs() {
    let spec = GeneratorSpec::default();
    let data = generate_synthetic(&spec, 1).unwrap();
    let vocab = xslu::train::build_vocab(&data.train, &data.lexicon);
    let config = TrainConfig {
        weights: LossWeights {
            lambda_i: 1.0,
            lambda_s: 1.0,
            lambda_un_i: 0.0,
            lambda_un_s: 0.0,
            lambda_un_gis: 0.0,
            beta_i: 0.0,
            beta_s: 0.0,
            beta_j: 0.0,
            gamma1: 0.0,
            gamma2: 0.0,
        },
        cl: CLConfig::default(),
        encoder: EncoderConfig {
            dim: 16,
            hidden: 32,
            pooling: xslu::encoder::Pooling::Mean,
            dropout: 0.1,
        },
        switch: SwitchConfig {
            p: 0.5,
            target_langs: vec!["de".into()],
        },
        queue_capacity: 16,
        batch_size: 32,
        epochs: 20,
        optimizer: OptimizerKind::default(),
        ablation: AblationMode::Full,
        seed: 1,
    };
    let result = fit(&config, &data.train, &data.tests, &data.lexicon, &vocab).unwrap();
    assert_eq!(result.curves.len(), 20);
    for window in result.curves.windows(2) {
        assert!(
            window[1].total < window[0].total,
            "epoch {} total {} did not drop below epoch {} total {}",
            window[1].epoch,
            window[1].total,
            window[0].epoch,
            window[0].total
        );
    }
}

#[test]
fn every_term_is_non_negative_on_random_batches() {
    let weights = LossWeights::default();
    let cl = CLConfig::default();
    for seed in 0..50u64 {
        let mb = random_micro_batch(9000 + seed, true);
        let mut tape = Tape::new();
        let (params, items, snapshot) = stage_micro_batch(&mb, &mut tape, 1.0);
        let (_, b) = total_loss(
            &mut tape,
            &params,
            &items,
            &snapshot,
            &weights,
            &TermGates::all_on(),
            &cl,
            mb.space.o_index,
        )
        .unwrap();
        for t in Term::ALL {
            assert!(b.get(t) >= 0.0, "seed {seed}: {} = {}", t.name(), b.get(t));
        }
        // breakdown total equals the weighted combination it reports
        let recombined: f64 = Term::ALL
            .iter()
            .map(|&t| xslu::losses::term_weight(&weights, t) * b.get(t))
            .sum();
        assert!((b.total - recombined).abs() < 1e-12);
    }
}
