#![no_main]

use std::io::Read;

use libfuzzer_sys::fuzz_target;

// cap decompressed payloads so corrupted gzip streams cannot balloon
const MAX_DECOMPRESSED: u64 = 16 << 20;

fuzz_target!(|data: &[u8]| {
    // gzip-wrapped inputs exercise the .nii.gz read path
    if data.len() >= 2 && data[0] == 0x1f && data[1] == 0x8b {
        let mut out = Vec::new();
        let mut dec = flate2::read::GzDecoder::new(data).take(MAX_DECOMPRESSED);
        if dec.read_to_end(&mut out).is_ok() {
            let _ = lesionforge::io::nifti::volume_from_bytes(&out);
        }
        return;
    }
    let _ = lesionforge::io::nifti::volume_from_bytes(data);
});
