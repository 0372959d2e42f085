use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;

use vigil::global::{serve, Ack, AckStatus, Envelope, GalleryConfig, GlobalNode, Heartbeat, Payload, Store};
use vigil::model::{CameraId, FeatureRecord};

fn send(stream: &mut TcpStream, reader: &mut BufReader<TcpStream>, line: &str) -> Ack {
    stream.write_all(line.as_bytes()).unwrap();
    let mut buf = String::new();
    reader.read_line(&mut buf).unwrap();
    serde_json::from_str(&buf).unwrap()
}

#[test]
fn acks_dedupe_and_persist() {
    let dir = tempfile::tempdir().unwrap();
    let db = dir.path().join("global.db");
    let server =
        serve("127.0.0.1:0", GlobalNode::open(&db, GalleryConfig { feature_dim: Some(4), ..GalleryConfig::default() }).unwrap()).unwrap();
    let mut stream = TcpStream::connect(server.local_addr()).unwrap();
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let cam = CameraId::new("gate");

    let hb = Envelope::wrap(cam.clone(), 1, &Payload::Heartbeat(Heartbeat { frames_processed: 30 }), 10);
    assert_eq!(send(&mut stream, &mut reader, &hb.to_line()).status, AckStatus::Ok);
    assert_eq!(send(&mut stream, &mut reader, &hb.to_line()).status, AckStatus::Duplicate);

    let f = FeatureRecord::from_raw(vec![1.0, 0.0, 0.0, 0.0], cam.clone(), 7, 20, 0.8).unwrap();
    let fe = Envelope::wrap(cam.clone(), 2, &Payload::Feature(f), 20);
    assert_eq!(send(&mut stream, &mut reader, &fe.to_line()).status, AckStatus::Ok);

    let leak = Envelope::new(cam.clone(), 3, hb.kind, serde_json::json!({"frames_processed": 1, "thumbnail": "x"}), 30);
    let ack = send(&mut stream, &mut reader, &leak.to_line());
    assert_eq!(ack.status, AckStatus::Rejected);
    assert_eq!(ack.seq, Some(3));
    let garbage = send(&mut stream, &mut reader, "not json\n");
    assert_eq!(garbage.status, AckStatus::Rejected);

    drop((stream, reader));
    let node = server.shutdown();
    let stats = node.stats();
    assert_eq!((stats.accepted, stats.duplicates, stats.rejected, stats.features), (2, 1, 2, 1));
    drop(node);

    let store = Store::open_read_only(&db).unwrap();
    assert_eq!(store.count("events").unwrap(), 2);
    assert_eq!(store.count("features").unwrap(), 1);
    assert!(store.has_event(&cam, 2).unwrap());
    assert!(!store.has_event(&cam, 3).unwrap());
    assert!(store.privacy_audit().unwrap().is_ok());

    let reopened = GlobalNode::open(&db, GalleryConfig { feature_dim: Some(4), ..GalleryConfig::default() }).unwrap();
    assert_eq!(reopened.gallery().len(), 1);
}
