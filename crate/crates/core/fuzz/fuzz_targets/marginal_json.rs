#![no_main]

use libfuzzer_sys::fuzz_target;
use moment_knockoffs::marginals::MarginalModel;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(m) = MarginalModel::from_json(text) {
        for x in [-1e3, -1.0, 0.0, 0.5, 1e3] {
            let u = m.cdf(x);
            assert!((0.0..=1.0).contains(&u));
        }
        let _ = m.quantile(0.5);
    }
});
