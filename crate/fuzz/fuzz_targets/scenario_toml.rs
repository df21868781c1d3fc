#![no_main]

use libfuzzer_sys::fuzz_target;
use vpn_reserve::scenario::Scenario;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(scenario) = Scenario::from_toml(text) {
        // a resolved scenario re-parses to itself
        let again = Scenario::from_toml(&scenario.to_toml()).expect("canonical TOML parses");
        assert_eq!(again.hash(), scenario.hash());
    }
});
