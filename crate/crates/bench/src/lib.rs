//! Benchmark fixtures shared by the criterion targets.

use pixssr_core::network::{Model, ModelConfig};
use pixssr_core::rng::Rng;
use pixssr_core::ssm::SsmParams;
use pixssr_core::Tensor;

pub fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = Rng::from_seed(seed);
    Tensor::from_fn(shape, |_| rng.uniform())
}

pub fn scan_fixture(l: usize, c: usize, n: usize) -> (Tensor, SsmParams) {
    let mut rng = Rng::from_seed(7);
    let params = SsmParams::init(c, n, &mut rng);
    (rand_tensor(&[l, c], 11), params)
}

pub fn desk_model() -> Model {
    Model::new(ModelConfig {
        bands: 8,
        b_feat: 8,
        seed: 5,
        ..ModelConfig::default()
    })
    .expect("desk model")
}
