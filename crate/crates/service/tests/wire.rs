mod common;

use std::sync::Arc;

use common::{bump, engine, programs};
use serde_json::json;
use txmerge_core::partition::PartitionPolicy;
use txmerge_service::wire::{Client, ClientError, Server};
use txmerge_service::{BatchConfig, PolicyLevel, Service, Status};

#[test]
fn client_server_roundtrip() {
    let svc = Arc::new(Service::new(engine(4), programs(), BatchConfig::new(1, 4, 2)).unwrap());
    let mut server = Server::start("127.0.0.1:0", svc.clone()).unwrap();
    let mut c = Client::connect(server.local_addr()).unwrap();

    assert_eq!(c.health().unwrap()["workers"], json!(1));
    assert_eq!(c.invoke("bump", bump(1, 2)).unwrap(), Status::Ok(json!(12)));
    assert!(matches!(c.invoke("nope", bump(1, 2)).unwrap(), Status::Error(_)));

    let cfg = c.set_config(&BatchConfig::new(2, 8, 3)).unwrap();
    assert_eq!(cfg.workers, 2);
    assert_eq!(svc.workers(), 2);
    assert!(matches!(c.set_config(&BatchConfig::new(0, 8, 3)), Err(ClientError::Remote(_))));

    c.set_policy(PolicyLevel::Worker, &PartitionPolicy::hashed(5, 16)).unwrap();
    assert_eq!(svc.policy(PolicyLevel::Worker).version, 5);
    assert!(matches!(c.set_policy(PolicyLevel::Worker, &PartitionPolicy::hashed(5, 16)), Err(ClientError::Remote(_))));

    let stats = c.get_stats(true).unwrap();
    assert_eq!(stats.completed, 1);
    assert_eq!(stats.errors, 0);
    assert!(c.request("frobnicate", json!(null)).map(|s| matches!(s, Status::Error(_))).unwrap());
    server.stop();
}
