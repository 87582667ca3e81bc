//! Inputs shared by the criterion benches.

use chronorpc::prediction::EteSample;
use chronorpc::protocol::{DurationNs, Message, MessageId, OperationSpec, RpcMessage, TimeInstant};

/// A deterministic ETE stream around 30 ms, one sample per second.
pub fn sample_stream(len: usize) -> Vec<EteSample> {
    (0..len as u64)
        .map(|i| {
            let ts = TimeInstant::from_nanos(1_000_000_000 * (i as i64 + 1));
            let ete = DurationNs::from_micros(30_000 + ((i * 7919) % 13) as i64 * 250);
            EteSample::new(i, ts, ts + ete)
        })
        .collect()
}

/// A scheduled rpc with a couple of parameters, as the client sends it.
pub fn scheduled_rpc() -> Message {
    let op = OperationSpec::new("set-value")
        .with_param("key", "config")
        .with_param("value", "v2");
    let mut rpc = RpcMessage::scheduled(
        MessageId::new("m-42").expect("non-empty id"),
        op,
        TimeInstant::from_nanos(1_700_000_000_123_456_789),
    );
    rpc.get_time = true;
    rpc.notify = true;
    Message::Rpc(rpc)
}
