//! Trace files: arbitrary JSONL never panics the parser, and accepted
//! traces survive render/parse plus dependency extraction.

#![no_main]
use libfuzzer_sys::fuzz_target;
use statebsd::selector::extract_dependencies;
use statebsd::trace::{from_jsonl, to_jsonl};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(trace) = from_jsonl(text) else {
        return;
    };
    if trace.len() > 4096 {
        return;
    }
    let again = from_jsonl(&to_jsonl(&trace)).expect("rendered traces re-parse");
    assert_eq!(trace, again);
    let _ = extract_dependencies(&trace);
});
