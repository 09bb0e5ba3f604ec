//! Serves a trained simulator over HTTP (`/meta`, `/simulate`) and a
//! WebSocket pose stream (`/stream`).

pub mod error;
pub mod protocol;
mod server;
mod state;

pub use error::{ApiError, ErrorBody, ErrorDetail};
pub use protocol::{decode_response, encode_response, BlockInfo, Encoding, Meta, ResponseHeader, SimRequest, StreamRequest};
pub use server::{router, run, serve, ServiceConfig, SharedState, BIND_ENV, DEFAULT_BIND, RESPONSE_CONTENT_TYPE};
pub use state::{validate_pose, AppState, QUATERNION_TOLERANCE};
