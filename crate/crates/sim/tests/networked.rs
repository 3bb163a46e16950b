use std::time::Duration;

use spms_core::{GateConfig, GateKind, LotConfig, Tariff};
use spms_mqtt::{Broker, BrokerConfig, ClientOptions, MqttClient, QoS};
use spms_sim::runner::{run, RunOptions};
use spms_sim::{load_scenario, SimConfig, Simulator};

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn publishes_through_broker_and_obeys_gate() {
    let broker = Broker::start(BrokerConfig { bind: "127.0.0.1:0".parse().unwrap(), ..Default::default() })
        .await
        .unwrap();
    let addr = broker.local_addr();

    let (watcher, mut seen) = MqttClient::connect(addr, ClientOptions::new("watcher")).await.unwrap();
    watcher.subscribe(&[("lot/L1/#", QoS::AtLeastOnce)]).await.unwrap();

    let lot = LotConfig {
        lot_id: "L1".into(),
        name: "Net".into(),
        lat: 0.0,
        lon: 0.0,
        slots: vec!["S1".into(), "S2".into()],
        gates: vec![GateConfig { gate_id: "IN".into(), kind: GateKind::Entry }],
        tariff: Tariff::default(),
        extras: Vec::new(),
    };
    let scenario = load_scenario(
        r#"{"at_ms":100,"action":"car_arrives","plate":"A","slot":"any"}
{"at_ms":300,"action":"car_departs","plate":"A"}"#,
    )
    .unwrap();
    let mut sim = Simulator::new(&lot, scenario, SimConfig { heartbeat_ms: 0 });

    let (client, incoming) = MqttClient::connect(addr, ClientOptions::new("sim-L1")).await.unwrap();
    let filters = sim.downlink_filters();
    client
        .subscribe(&[(filters[0].as_str(), QoS::AtLeastOnce), (filters[1].as_str(), QoS::AtLeastOnce)])
        .await
        .unwrap();
    // The command is queued before the run and applied at the first step.
    watcher.publish("lot/L1/gate/IN/cmd", "2000", QoS::AtLeastOnce).await.unwrap();
    tokio::time::sleep(Duration::from_millis(100)).await;

    let summary = run(&mut sim, &client, incoming, &RunOptions { rate: 10.0, linger_ms: 0 }).await.unwrap();
    assert_eq!(summary.published, 3);

    let mut got = Vec::new();
    while got.len() < 4 {
        let m = tokio::time::timeout(Duration::from_secs(2), seen.recv()).await.unwrap().unwrap();
        got.push(format!("{} {}", m.topic, String::from_utf8(m.payload).unwrap()));
    }
    assert_eq!(
        got,
        [
            "lot/L1/gate/IN/cmd 2000",
            "lot/L1/gate/IN/piezo 1",
            "lot/L1/slot/S1/ir 0",
            "lot/L1/slot/S1/ir 1",
        ]
    );
    assert!(sim.gate(&"IN".into()).unwrap().is_open());
    broker.shutdown().await;
}
