//! Time-triggered remote operations.
//!
//! A client schedules operations on remote servers so that they *complete* at
//! a desired instant, by predicting each server's elapsed time of execution
//! (ETE) from runtime measurements.
//!
//! The server is a clock-agnostic state machine, so the same client and
//! server code runs under the deterministic simulator ([`sim`]) and over TCP
//! ([`live`]).

pub mod client;
pub mod harness;
pub mod live;
pub mod prediction;
pub mod probing;
pub mod protocol;
pub mod rng;
pub mod server;
pub mod sim;

pub use client::{Client, ClientConfig, ClientError, ScheduleOutcome, ScheduleRequest, ServerHandle, Transport};
pub use prediction::{Algorithm, EteSample, Prediction, Predictor};
pub use protocol::{DurationNs, Message, MessageId, OperationSpec, TimeInstant};
pub use server::{ExecutionModel, Server, ServerConfig};
