//! Simulation of a protobuf RPC accelerator with schema-driven object
//! placement across host and device memory.

pub mod cu;
pub mod deser;
pub mod field_update;
pub mod harness;
pub mod layout;
pub mod link;
pub mod memory;
pub mod oracle;
pub mod platform;
pub mod schema;
pub mod ser;
pub mod value;
pub mod wire;
