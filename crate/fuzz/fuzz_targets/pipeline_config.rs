//! Config files: arbitrary JSON never panics, accepted configs
//! re-serialize to an equivalent config.

#![no_main]
use libfuzzer_sys::fuzz_target;
use statebsd::pipeline::PipelineConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(cfg) = serde_json::from_str::<PipelineConfig>(text) else {
        return;
    };
    let rendered = serde_json::to_string(&cfg).expect("configs serialize");
    let again: PipelineConfig = serde_json::from_str(&rendered).expect("rendered configs re-parse");
    assert_eq!(cfg, again);
});
