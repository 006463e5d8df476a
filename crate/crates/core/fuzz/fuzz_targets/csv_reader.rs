#![no_main]

use libfuzzer_sys::fuzz_target;
use moment_knockoffs::DataMatrix;

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = DataMatrix::read_csv(data) {
        assert!(m.is_finite());
        assert_eq!(m.as_slice().len(), m.nrows() * m.ncols());
        let mut out = Vec::new();
        m.write_csv(&mut out).unwrap();
        assert_eq!(DataMatrix::read_csv(out.as_slice()).unwrap(), m);
    }
});
