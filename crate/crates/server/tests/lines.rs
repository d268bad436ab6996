use std::sync::Arc;

use perfest_core::{EngineConfig, SessionRegistry};
use perfest_server::{bind, serve_lines, serve_tcp};
use serde_json::Value;
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};

fn request(model: &str, k: usize, acc: f64) -> String {
    format!("{{\"model\":\"{model}\",\"epoch\":{},\"val_acc\":{acc},\"val_loss\":1.0}}\n", 0.5 * k as f64)
}

#[tokio::test]
async fn stdio_style_stream_ends_with_stop() {
    let registry = Arc::new(SessionRegistry::new(EngineConfig::default()).unwrap());
    let mut input = String::new();
    for k in 1..=40 {
        // steadily rising, never settles: runs to the horizon
        input.push_str(&request("nn", k, k as f64 * 2.0));
    }
    input.push('\n');
    let mut out = Vec::new();
    serve_lines(registry, BufReader::new(input.as_bytes()), &mut out).await.unwrap();
    let lines: Vec<Value> = std::str::from_utf8(&out).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 40);
    let last = &lines[39];
    assert_eq!(last["action"], "stop");
    assert_eq!(last["stop_epoch"], 20.0);
    assert_eq!(last["converged"], false);
    assert_eq!(last["estimate"], 80.0);
    assert!(lines[..39].iter().all(|l| l["action"] == "continue"));
    let keys: Vec<&str> = lines[0].as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(keys.len(), 5);
}

#[tokio::test]
async fn tcp_connections_share_the_registry() {
    let registry = Arc::new(SessionRegistry::new(EngineConfig::default()).unwrap());
    let listener = bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(serve_tcp(listener, registry.clone()));

    let mut tasks = Vec::new();
    for m in 0..4 {
        tasks.push(tokio::spawn(async move {
            let stream = tokio::net::TcpStream::connect(addr).await.unwrap();
            let (read, mut write) = stream.into_split();
            let mut lines = BufReader::new(read).lines();
            let model = format!("m{m}");
            let a = 50.0 + m as f64;
            for k in 1..=40 {
                let acc = a - 2f64.powf(2.0 - k as f64);
                write.write_all(request(&model, k, acc).as_bytes()).await.unwrap();
                let v: Value = serde_json::from_str(&lines.next_line().await.unwrap().unwrap()).unwrap();
                assert_eq!(v["model"], model.as_str());
                if v["action"] == "stop" {
                    return (a, v);
                }
            }
            unreachable!()
        }));
    }
    for t in tasks {
        let (a, v) = t.await.unwrap();
        assert_eq!(v["converged"], true);
        assert!((v["estimate"].as_f64().unwrap() - a).abs() < 1e-3);
    }
    assert_eq!(registry.models().len(), 4);

    // a second connection continuing a finished model gets an error line
    let stream = tokio::net::TcpStream::connect(addr).await.unwrap();
    let (read, mut write) = stream.into_split();
    write.write_all(request("m0", 40, 10.0).as_bytes()).await.unwrap();
    let mut lines = BufReader::new(read).lines();
    let v: Value = serde_json::from_str(&lines.next_line().await.unwrap().unwrap()).unwrap();
    assert_eq!(v["error"], "session_finished");
}
