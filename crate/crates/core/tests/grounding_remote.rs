//! Remote grounding client against a local HTTP endpoint.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use base64::Engine;
use serde_json::Value;

use fly0::geometry::{CameraIntrinsics, PixelTarget, Pose};
use fly0::grounding::{Grounder, GroundingError, GroundingQuery, GroundingStatus, Image, RemoteConfig, RemoteGrounder};

struct Captured {
    request_line: String,
    headers: Vec<(String, String)>,
    body: Value,
}

/// Serves one request with `reply` as the body and reports what it received.
fn serve_once(reply: &'static str, delay: Duration) -> (String, mpsc::Receiver<Captured>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/ground", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut request_line = String::new();
        reader.read_line(&mut request_line).unwrap();
        let mut headers = Vec::new();
        loop {
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            let line = line.trim_end();
            if line.is_empty() {
                break;
            }
            let (k, v) = line.split_once(':').unwrap();
            headers.push((k.trim().to_ascii_lowercase(), v.trim().to_string()));
        }
        let len: usize = headers
            .iter()
            .find(|(k, _)| k == "content-length")
            .map(|(_, v)| v.parse().unwrap())
            .expect("content-length header");
        let mut body = vec![0u8; len];
        reader.read_exact(&mut body).unwrap();
        thread::sleep(delay);
        let mut stream = stream;
        let _ = write!(
            stream,
            "HTTP/1.1 200 OK\r\nContent-Type: text/plain\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
            reply.len()
        );
        let _ = tx.send(Captured {
            request_line: request_line.trim_end().to_string(),
            headers,
            body: serde_json::from_slice(&body).unwrap(),
        });
    });
    (url, rx)
}

fn query(width: u32, height: u32) -> GroundingQuery {
    let mut image = Image::filled(width, height, [10, 20, 30]);
    image.set_pixel(1, 2, [255, 0, 0]);
    GroundingQuery {
        image: Some(image),
        instruction: "fly to the blue tent".into(),
        intrinsics: CameraIntrinsics::new(8.0, 8.0, 8.0, 6.0, width, height).unwrap(),
        camera_pose: Pose::identity(),
        index: 0,
    }
}

#[test]
fn request_carries_prompt_image_and_token() {
    let (url, rx) = serve_once("Sure! ```json\n{\"found\": true, \"x\": 7.5, \"y\": 3}\n```", Duration::ZERO);
    let mut grounder = RemoteGrounder::new(RemoteConfig {
        url,
        token: Some("secret-token".into()),
        timeout: Duration::from_secs(10),
    });
    let q = query(16, 12);
    let result = grounder.ground(&q).unwrap();
    assert_eq!(result.status, GroundingStatus::Found);
    assert_eq!(result.pixel, Some(PixelTarget::new(7.5, 3.0)));
    assert!(result.latency >= 0.0);

    let got = rx.recv_timeout(Duration::from_secs(5)).unwrap();
    assert!(got.request_line.starts_with("POST /ground "), "{}", got.request_line);
    assert!(got.headers.contains(&("authorization".into(), "Bearer secret-token".into())));
    assert!(got.body["prompt"].as_str().unwrap().contains("fly to the blue tent"));
    assert_eq!(got.body["width"], 16);
    assert_eq!(got.body["height"], 12);
    let png = base64::engine::general_purpose::STANDARD
        .decode(got.body["image"].as_str().unwrap())
        .unwrap();
    let decoded = image::load_from_memory(&png).unwrap().to_rgb8();
    assert_eq!(decoded.dimensions(), (16, 12));
    assert_eq!(decoded.get_pixel(1, 2).0, [255, 0, 0]);
    assert_eq!(decoded.get_pixel(0, 0).0, [10, 20, 30]);
}

#[test]
fn absence_and_bad_replies() {
    let (url, _rx) = serve_once("{\"found\": false}", Duration::ZERO);
    let mut grounder = RemoteGrounder::new(RemoteConfig::new(url));
    assert_eq!(grounder.ground(&query(16, 12)).unwrap().status, GroundingStatus::Absent);

    let (url, _rx) = serve_once("{\"found\": true, \"x\": 900, \"y\": 1}", Duration::ZERO);
    let mut grounder = RemoteGrounder::new(RemoteConfig::new(url));
    assert!(matches!(grounder.ground(&query(16, 12)), Err(GroundingError::OutOfBounds { .. })));

    let (url, _rx) = serve_once("I cannot help with that.", Duration::ZERO);
    let mut grounder = RemoteGrounder::new(RemoteConfig::new(url));
    assert!(matches!(grounder.ground(&query(16, 12)), Err(GroundingError::ParseError(_))));
}

#[test]
fn transport_failures_are_unavailable() {
    // Nothing listens on a port that was just released.
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut grounder = RemoteGrounder::new(RemoteConfig::new(format!("http://127.0.0.1:{port}/")));
    assert!(matches!(grounder.ground(&query(16, 12)), Err(GroundingError::GroundingUnavailable(_))));

    let (url, _rx) = serve_once("{\"found\": false}", Duration::from_millis(1500));
    let mut grounder = RemoteGrounder::new(RemoteConfig {
        url,
        token: None,
        timeout: Duration::from_millis(200),
    });
    assert!(matches!(grounder.ground(&query(16, 12)), Err(GroundingError::GroundingUnavailable(_))));
}

#[test]
fn remote_needs_an_image() {
    let mut grounder = RemoteGrounder::new(RemoteConfig::new("http://127.0.0.1:9/"));
    let mut q = query(16, 12);
    q.image = None;
    assert!(matches!(grounder.ground(&q), Err(GroundingError::InvalidImage(_))));
}
