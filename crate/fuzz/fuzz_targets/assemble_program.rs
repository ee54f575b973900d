//! Assembler robustness: arbitrary text never panics, and anything that
//! assembles must survive a render/assemble round trip and a bounded run.

#![no_main]
use libfuzzer_sys::fuzz_target;
use statebsd::asm::{assemble, format_program};
use statebsd::isa::run_single;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(program) = assemble(text) else {
        return;
    };
    let rendered = format_program(&program);
    let again = assemble(&rendered).expect("rendered programs re-assemble");
    assert_eq!(program, again, "render/assemble round trip changed the program");
    // Execution may fault or loop; it must never panic.
    let _ = run_single(&program, 4096);
});
