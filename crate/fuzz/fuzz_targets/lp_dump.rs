#![no_main]

use libfuzzer_sys::fuzz_target;
use vpn_reserve::simplex::LinearProgram;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(lp) = LinearProgram::parse_dump(text) {
        let again = LinearProgram::parse_dump(&lp.to_dump()).expect("dump parses");
        assert_eq!(again, lp);
    }
});
