#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use textgan::discriminator::{DiscriminatorConfig, DiscriminatorModel};
use textgan::generator::{GeneratorConfig, GeneratorModel};
use textgan::{Dropouts, EncoderKind};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn tiny_config(vocab: usize, embedding: usize, hidden: usize, layers: usize, dropouts: Dropouts) -> GeneratorConfig {
    GeneratorConfig {
        kind: EncoderKind::AwdLstm,
        vocab_size: vocab,
        embedding_size: embedding,
        hidden_size: hidden,
        num_layers: layers,
        bptt_len: 8,
        dropouts,
    }
}

pub fn tiny_generator(vocab: usize, seed: u64) -> GeneratorModel {
    GeneratorModel::new(tiny_config(vocab, 4, 6, 2, Dropouts::NONE), &mut rng(seed)).unwrap()
}

pub fn discriminator_for(gen: &GeneratorModel, seed: u64) -> DiscriminatorModel {
    DiscriminatorModel::init_from_generator(gen, DiscriminatorConfig::for_generator(&gen.config), &mut rng(seed)).unwrap()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|x| x / z).collect()
}
