#![allow(dead_code)]

use freemark_core::host::{HostBuild, HostConfig};
use freemark_core::keygen::{generate_keys, KeyGenConfig, KeyGenOutcome, WatermarkVector};
use freemark_core::numeric::SeededRng;

pub fn host() -> HostBuild {
    HostConfig::default().build().expect("default host trains")
}

pub fn watermark(bits: usize, seed: u64) -> WatermarkVector {
    WatermarkVector::random(bits, &mut SeededRng::new(seed)).unwrap()
}

pub fn keys(host: &HostBuild, b: &WatermarkVector, seed: u64) -> KeyGenOutcome {
    let cfg = KeyGenConfig {
        seed,
        ..KeyGenConfig::default()
    };
    generate_keys(&host.trained.checkpoint, &host.trigger, 1, b, &cfg).expect("keygen")
}
