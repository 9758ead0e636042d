//! Built-in desk-scale networks and the default architecture, embedded so
//! tests, the CLI and the browser demo all see identical bytes.

use crate::config::{parse_config, ArchConfig};
use crate::nn::{parse_network, Network};

pub const MLP3: &str = include_str!("../fixtures/mlp3.json");
pub const TINY_CNN: &str = include_str!("../fixtures/tiny_cnn.json");
pub const TINY_RESNET: &str = include_str!("../fixtures/tiny_resnet.json");
pub const TINY_VGG: &str = include_str!("../fixtures/tiny_vgg.json");
pub const DEFAULT_CONFIG: &str = include_str!("../fixtures/default_config.json");
pub const DEADLOCK_ASM: &str = include_str!("../fixtures/deadlock.asm");
/// Frozen reference output of tiny-cnn on the seed-1 input, computed once by
/// an independent scalar implementation.
pub const TINY_CNN_GOLDEN: &[u8] = include_bytes!("../fixtures/golden/tiny_cnn_out.bin");

/// Input seed the CLI uses when no input file is given.
pub const DEFAULT_INPUT_SEED: u64 = 1;

pub const FIXTURE_NAMES: [&str; 4] = ["mlp3", "tiny-cnn", "tiny-resnet", "tiny-vgg"];

pub fn fixture_source(name: &str) -> Option<&'static str> {
    match name {
        "mlp3" => Some(MLP3),
        "tiny-cnn" => Some(TINY_CNN),
        "tiny-resnet" => Some(TINY_RESNET),
        "tiny-vgg" => Some(TINY_VGG),
        _ => None,
    }
}

pub fn fixture_network(name: &str) -> Option<Network> {
    fixture_source(name).map(|s| parse_network(s).expect("fixtures parse"))
}

pub fn default_config() -> ArchConfig {
    parse_config(DEFAULT_CONFIG).expect("default config is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{generate_input, reference_inference};

    #[test]
    fn fixtures_parse_and_config_is_valid() {
        for name in FIXTURE_NAMES {
            let net = fixture_network(name).unwrap();
            assert!(!net.layers.is_empty());
        }
        let cfg = default_config();
        assert_eq!(cfg.cores(), 36);
    }

    #[test]
    fn tiny_cnn_matches_frozen_golden() {
        let net = fixture_network("tiny-cnn").unwrap();
        let input = generate_input(DEFAULT_INPUT_SEED, net.input_elems());
        let out = reference_inference(&net, &input).unwrap();
        let got: Vec<u8> = out.iter().map(|&v| v as u8).collect();
        assert_eq!(got, TINY_CNN_GOLDEN, "oracle diverged from the frozen reference");
    }
}
