mod common;

use common::{discriminator_for, rng};
use proptest::prelude::*;
use rand::Rng;
use textgan::autodiff::Graph;
use textgan::corpus::IdMatrix;
use textgan::discriminator::{DiscInput, DiscriminatorModel};
use textgan::generator::{GeneratorConfig, GeneratorModel};
use textgan::training::{discriminator_update, new_adam, TrainConfig};
use textgan::Mode;

const V: usize = 20;
const A: usize = 4;

fn fresh(seed: u64) -> DiscriminatorModel {
    let gen = GeneratorModel::new(GeneratorConfig::desk_small(V), &mut rng(seed)).unwrap();
    discriminator_for(&gen, seed + 1)
}

fn random_seq<R: Rng>(r: &mut R) -> Vec<usize> {
    (0..r.gen_range(2..15)).map(|_| r.gen_range(5..V)).collect()
}

fn constant_seq<R: Rng>(r: &mut R) -> Vec<usize> {
    vec![A; r.gen_range(2..15)]
}

#[test]
fn untrained_scores_hover_around_one_half() {
    let disc = fresh(1);
    let mut r = rng(2);
    let seqs: Vec<Vec<usize>> = (0..256).map(|_| random_seq(&mut r)).collect();
    let scores = disc.scores(&seqs).unwrap();
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    assert!((0.3..0.7).contains(&mean), "{mean}");

    let real: Vec<Vec<usize>> = (0..256).map(|_| constant_seq(&mut r)).collect();
    let sr = disc.scores(&real).unwrap();
    let correct = sr.iter().filter(|&&s| s > 0.5).count() + scores.iter().filter(|&&s| s < 0.5).count();
    let acc = correct as f64 / 512.0;
    assert!((0.3..=0.7).contains(&acc), "{acc}");
}

#[test]
fn trained_scores_separate_and_depend_on_order() {
    let mut disc = fresh(3);
    let mut adam = new_adam(TrainConfig::default().disc_adam(), &disc);
    let mut r = rng(4);
    // Eval scores trail the training loss while the running batch-norm
    // statistics catch up, so this runs past the 50 steps that separation
    // itself needs.
    for _ in 0..100 {
        let real: Vec<Vec<usize>> = (0..16).map(|_| constant_seq(&mut r)).collect();
        let fake: Vec<Vec<usize>> = (0..16).map(|_| random_seq(&mut r)).collect();
        discriminator_update(&mut disc, &mut adam, &real, &fake, 1.0).unwrap();
    }
    let real: Vec<Vec<usize>> = (0..100).map(|_| constant_seq(&mut r)).collect();
    let fake: Vec<Vec<usize>> = (0..100).map(|_| random_seq(&mut r)).collect();
    let mean = |s: Vec<f64>| s.iter().sum::<f64>() / s.len() as f64;
    let (sr, sf) = (mean(disc.scores(&real).unwrap()), mean(disc.scores(&fake).unwrap()));
    assert!(sr >= 0.9, "real {sr}");
    assert!(sf <= 0.1, "fake {sf}");

    let found = (0..50).any(|_| {
        let mut s = random_seq(&mut r);
        s.extend([A, A, A]);
        let mut rev = s.clone();
        rev.reverse();
        (disc.disc_score(&s).unwrap() - disc.disc_score(&rev).unwrap()).abs() > 1e-6
    });
    assert!(found, "no reordering changed the score");
}

#[test]
fn one_hot_soft_input_matches_ids() {
    let disc = fresh(5);
    let seqs = vec![vec![1usize, 7, 9, 3], vec![4, 4, 12, 0]];
    let (ids, lengths) = IdMatrix::from_padded(&seqs, 0).unwrap();
    let mut g = Graph::new();
    let vars = disc.bind(&mut g, false);
    let hard = disc.forward(&mut g, &vars, DiscInput::Ids(&ids, &lengths), Mode::Eval).unwrap();
    let soft: Vec<_> = (0..4)
        .map(|t| {
            let mut oh = vec![0.0; 2 * V];
            for (b, s) in seqs.iter().enumerate() {
                oh[b * V + s[t]] = 1.0;
            }
            g.constant(vec![2, V], oh).unwrap()
        })
        .collect();
    let relaxed = disc.forward(&mut g, &vars, DiscInput::Soft(&soft), Mode::Eval).unwrap();
    for (a, b) in g.value(hard.logits).iter().zip(g.value(relaxed.logits)) {
        assert!((a - b).abs() < 1e-12);
    }
    assert_eq!(g.shape(hard.pooled), &[2, 3 * 64]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn padded_scoring_equals_individual(seed in any::<u64>(), n in 2usize..6) {
        let disc = fresh(7);
        let mut r = rng(seed);
        let seqs: Vec<Vec<usize>> = (0..n).map(|_| (0..r.gen_range(1..12)).map(|_| r.gen_range(0..V)).collect()).collect();
        let together = disc.scores(&seqs).unwrap();
        for (s, &t) in seqs.iter().zip(&together) {
            prop_assert!((disc.disc_score(s).unwrap() - t).abs() < 1e-8);
        }
    }
}
