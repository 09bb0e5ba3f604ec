#![allow(dead_code)]

use std::net::SocketAddr;
use std::sync::{Arc, OnceLock};

use ussim_core::models::{build_decoder, DecoderConfig};
use ussim_core::phantom::PhantomSpec;
use ussim_core::training::{Arch, CheckpointMeta, Model, ModelCheckpoint};
use ussim_service::{serve, AppState, SharedState};

/// Untrained desk-size decoder on the default phantom, built once per binary.
pub fn state() -> SharedState {
    static STATE: OnceLock<SharedState> = OnceLock::new();
    STATE
        .get_or_init(|| {
            let dec = build_decoder(&DecoderConfig::desk(), 21).unwrap();
            let ckpt = ModelCheckpoint::new(Model::Decoder(dec), CheckpointMeta::new(Arch::Decoder, 21));
            Arc::new(AppState::new(ckpt, PhantomSpec::default()).unwrap())
        })
        .clone()
}

/// Starts a server on an ephemeral port.
pub async fn spawn_server() -> SocketAddr {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let st = state();
    tokio::spawn(async move { serve(st, listener).await.unwrap() });
    addr
}

/// Apex pose tilted by `k` small steps, always inside the tracker volume.
pub fn pose(k: u64) -> [f64; 7] {
    let a = (k % 40) as f64 * 0.005;
    [a.cos(), a.sin(), 0.0, 0.0, (k % 17) as f64 - 8.0, 0.0, 120.0]
}
