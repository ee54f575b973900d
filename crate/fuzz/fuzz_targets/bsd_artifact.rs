//! Diagram artifacts: malformed JSON is rejected, accepted diagrams
//! round-trip and agree with their netlist lowering.

#![no_main]
use libfuzzer_sys::fuzz_target;
use statebsd::bsd::{to_netlist, BitVector, Bsd};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(bsd) = Bsd::deserialize(text) else {
        return;
    };
    let again = Bsd::deserialize(&bsd.serialize()).expect("accepted artifacts round-trip");
    let width = bsd.input_width();
    let netlist = to_netlist(&bsd);
    let probes: u32 = if width <= 12 { 1u32 << width } else { 4096 };
    for i in 0..probes {
        let x = BitVector::new(i.wrapping_mul(0x9e3779b9), width);
        let (bit, _) = bsd.evaluate(x).expect("width matches");
        assert_eq!(again.evaluate(x).unwrap().0, bit);
        assert_eq!(netlist.eval(x), bit, "netlist diverged from the diagram");
    }
});
