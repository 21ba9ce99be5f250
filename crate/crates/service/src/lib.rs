//! Session-oriented labelling service. An expert works through query
//! batches chosen from an unsupervised forest's scores, labels them, and
//! asks for an update round; every step is persisted so a restarted
//! service resumes where it stopped.

pub mod api;
pub mod error;
pub mod session;

pub use api::{router, AppState, DEFAULT_CONTEXT_SECONDS};
pub use error::ApiError;
pub use session::{DatasetSpec, Session, SessionConfig};
