#![no_main]

use libfuzzer_sys::fuzz_target;

// input layout: [2-byte LE json length][json sidecar][binary payload]
fuzz_target!(|data: &[u8]| {
    if data.len() < 2 {
        return;
    }
    let split = u16::from_le_bytes([data[0], data[1]]) as usize;
    let rest = &data[2..];
    if split > rest.len() {
        return;
    }
    let (meta, bin) = rest.split_at(split);
    let _ = lesionforge::io::rawjson::volume_from_parts(meta, bin);
    let _ = lesionforge::io::rawjson::tensor_from_parts(meta, bin);
});
