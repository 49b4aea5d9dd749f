#![no_main]

use libfuzzer_sys::fuzz_target;

use lesionforge::latent::LatentModel;
use lesionforge::rng::Stream;

fuzz_target!(|data: &[u8]| {
    if let Ok(model) = LatentModel::from_json_slice(data) {
        // drawing from a validated model must never panic
        if model.mean.len() <= 1024 && model.components.len() <= 64 {
            let mut rng = Stream::new(0x5eed);
            let x = model.sample(&mut rng);
            assert_eq!(x.len(), model.mean.len());
        }
    }
});
