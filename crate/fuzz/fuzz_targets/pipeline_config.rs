#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = lesionforge::pipeline::PipelineConfig::from_json_slice(data);
});
