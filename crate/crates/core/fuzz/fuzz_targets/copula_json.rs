#![no_main]

use libfuzzer_sys::fuzz_target;
use moment_knockoffs::copula::{equicorrelated_s, GaussianCopulaModel};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(model) = GaussianCopulaModel::from_json(text) {
        let sigma = model.correlation();
        assert_eq!(sigma.nrows(), model.dim());
        for i in 0..model.dim() {
            assert!((sigma[(i, i)] - 1.0).abs() <= 1e-9);
        }
        let _ = equicorrelated_s(&sigma);
        let again = serde_json::to_string(&model).unwrap();
        assert_eq!(GaussianCopulaModel::from_json(&again).unwrap(), model);
    }
});
