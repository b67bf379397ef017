//! The AI-O2 interface: payload schemas, the frame codec and the
//! strict-priority transport shared by simulation and service mode.

pub mod codec;
pub mod messages;
pub mod transport;

pub use codec::{decode, encode, read_frame, write_frame, CodecError, FrameDecoder, StreamError, MAX_PAYLOAD};
pub use messages::*;
pub use transport::{Delivery, LinkConfig, LinkError, LinkStats, SimLink};
