//! The camera peer: sharing schedule, wire format and lockstep request-reply session.

pub mod peer;
pub mod schedule;
pub mod transport;
pub mod wire;

pub use peer::{
    handle_query, run_peer, AnsweredEntry, PeerError, RecognitionLog, RoundEntry, SessionOptions,
};
pub use schedule::should_share;
pub use transport::{duplex_pipe, Endpoint};
pub use wire::{decode_query, encode_query, Message, QueryMessage, ReplyMessage, ReplyStatus};
