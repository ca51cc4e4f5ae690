//! Remote execution of node inference.
//!
//! A length-prefixed binary protocol over TCP ([`codec`]), a worker daemon
//! that loads models per connection ([`worker`]), and a client proxy with
//! retry ([`proxy`]). The byte layout is specified in `PROTOCOL.md`.

pub mod codec;
pub mod proxy;
pub mod worker;

pub use codec::{
    decode_frame, decode_payload, encode_frame, encode_payload, CodecError, ErrorCode, Frame, Message, MsgType,
};
pub use proxy::{OffloadError, RemoteModelProxy, RetryPolicy};
pub use worker::{Worker, WorkerHandle};
