//! Every decodable 16-bit word must re-encode bit-exactly, and decode
//! failures are limited to reserved opcodes and nonzero format padding.

#![no_main]
use libfuzzer_sys::fuzz_target;
use statebsd::isa::{decode, encode, EncodedInstruction, IsaError};

fuzz_target!(|data: &[u8]| {
    if data.len() < 2 {
        return;
    }
    let bits = u16::from_le_bytes([data[0], data[1]]);
    match decode(EncodedInstruction(bits)) {
        Ok(inst) => {
            let back = encode(&inst).expect("decoded instructions re-encode");
            assert_eq!(back.bits(), bits, "round-trip mismatch for {bits:#06x}");
        }
        Err(IsaError::InvalidOpcode(op)) => assert!(op >= 14),
        Err(IsaError::InvalidEncoding(_)) => {
            let op = bits >> 12;
            assert!(matches!(op, 0..=5 | 12 | 13));
        }
        Err(other) => panic!("unexpected decode error: {other:?}"),
    }
});
