use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use h2r_core::clip::Clip;
use h2r_core::perception::remote::wire::*;
use h2r_core::perception::{segment, Backend, BackendSelection, Perception, PerceptionBackendConfig, RemoteClient};
use h2r_core::{Error, MaskSequence, VideoArray};

#[derive(Default)]
struct Counters {
    flaky: AtomicUsize,
    always_down: AtomicUsize,
}

/// Marks pixels with red > 0.5.
async fn seg(Json(req): Json<SegmentRequest>) -> Result<Json<SegmentResponse>, (StatusCode, Json<ErrorBody>)> {
    if req.prompt.is_empty() {
        return Err((StatusCode::UNPROCESSABLE_ENTITY, Json(ErrorBody { error: "empty prompt".into() })));
    }
    let v = decode_frames(&req.frames).unwrap();
    let masks = (0..v.frames())
        .map(|t| {
            let bits: Vec<bool> = v.frame_slice(t).chunks(3).map(|p| p[0] > 0.5).collect();
            encode_mask_frame(&bits)
        })
        .collect();
    Ok(Json(SegmentResponse { masks }))
}

/// Paints every pixel white; the client must restore the unmasked ones.
async fn inpaint(Json(req): Json<InpaintRequest>) -> Json<InpaintResponse> {
    let v = decode_frames(&req.frames).unwrap();
    let white = VideoArray::from_data(v.frames(), v.height(), v.width(), vec![1.0; v.data().len()]).unwrap();
    Json(InpaintResponse { frames: encode_frames(&white) })
}

async fn handpose(Json(req): Json<HandposeRequest>) -> Json<HandposeResponse> {
    let n = req.frames.len();
    Json(HandposeResponse {
        keypoints: (0..n).map(|t| [[t as f64, 1.0], [t as f64 + 2.0, 1.0], [t as f64 + 2.0, 3.0]]).collect(),
        confidence: (0..n).map(|t| if t == 1 { 0.0 } else { 0.9 }).collect(),
        boxes: None,
    })
}

async fn flaky(State(c): State<Arc<Counters>>, body: Json<SegmentRequest>) -> Result<Json<SegmentResponse>, StatusCode> {
    if c.flaky.fetch_add(1, Ordering::SeqCst) < 2 {
        return Err(StatusCode::SERVICE_UNAVAILABLE);
    }
    seg(body).await.map_err(|e| e.0)
}

async fn down(State(c): State<Arc<Counters>>) -> StatusCode {
    c.always_down.fetch_add(1, Ordering::SeqCst);
    StatusCode::BAD_GATEWAY
}

async fn slow() -> StatusCode {
    tokio::time::sleep(Duration::from_secs(3)).await;
    StatusCode::OK
}

fn serve(router: Router) -> SocketAddr {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, router).await.unwrap();
        });
    });
    rx.recv().unwrap()
}

fn server() -> (String, Arc<Counters>) {
    let counters = Arc::new(Counters::default());
    let good = Router::new()
        .route("/v1/segment", post(seg))
        .route("/v1/inpaint", post(inpaint))
        .route("/v1/handpose", post(handpose));
    let flaky_app = Router::new().route("/flaky/v1/segment", post(flaky)).route("/down/v1/segment", post(down));
    let slow_app = Router::new().route("/slow/v1/segment", post(slow));
    let app = good.merge(flaky_app.with_state(counters.clone())).merge(slow_app);
    (format!("http://{}", serve(app)), counters)
}

fn test_video() -> VideoArray {
    let mut v = VideoArray::zeros(3, 6, 5);
    for t in 0..3 {
        v.set_pixel(t, 2, t + 1, [1.0, 0.2, 0.2]);
        v.set_pixel(t, 4, 0, [0.4, 0.6, 0.8]);
    }
    v
}

fn clip(v: VideoArray) -> Clip {
    Clip { id: "c".into(), video: v, fps: 10.0, truth: None }
}

#[test]
fn segment_inpaint_handpose_round_trip() {
    let (url, _) = server();
    let client = RemoteClient::new(&url, Duration::from_secs(5), 0).unwrap();
    let v = test_video();
    let m = client.segment(&v, "robotic arm").unwrap();
    for t in 0..3 {
        assert_eq!(m.count(t), 1);
        assert!(m.get(t, 2, t + 1));
    }

    let sel = BackendSelection {
        segment: PerceptionBackendConfig::remote(&url),
        inpaint: PerceptionBackendConfig { dilation_radius: 0, ..PerceptionBackendConfig::remote(&url) },
        handpose: PerceptionBackendConfig::remote(&url),
    };
    let p = Perception::new(&sel).unwrap();
    let c = clip(v.clone());
    let out = p.inpaint(&c, &m).unwrap();
    for t in 0..3 {
        for y in 0..6 {
            for x in 0..5 {
                let want = if m.get(t, y, x) { [1.0; 3] } else { v.pixel(t, y, x) };
                assert_eq!(out.video.pixel(t, y, x), want);
            }
        }
    }

    let est = p.estimate_hand_keypoints(&c).unwrap();
    assert_eq!(est.keypoints.len(), 3);
    assert_eq!(est.keypoints.thumb_tip[2], [4.0, 1.0]);
    assert_eq!(est.keypoints.confidence[1], 0.0);
}

#[test]
fn client_is_shareable_across_threads() {
    let (url, _) = server();
    let client = Arc::new(RemoteClient::new(&url, Duration::from_secs(5), 0).unwrap());
    let v = test_video();
    let want = client.segment(&v, "person").unwrap();
    let handles: Vec<_> = (0..4)
        .map(|_| {
            let (client, v) = (client.clone(), v.clone());
            std::thread::spawn(move || client.segment(&v, "person").unwrap())
        })
        .collect();
    for h in handles {
        assert_eq!(h.join().unwrap(), want);
    }
}

#[test]
fn client_error_is_not_retried() {
    let (url, _) = server();
    let client = RemoteClient::new(&url, Duration::from_secs(5), 3).unwrap();
    match client.segment(&test_video(), "") {
        Err(Error::Remote { status, message, .. }) => {
            assert_eq!(status, 422);
            assert_eq!(message, "empty prompt");
        }
        other => panic!("expected remote error, got {other:?}"),
    }
}

#[test]
fn server_errors_are_retried() {
    let (url, counters) = server();
    let client = RemoteClient::new(format!("{url}/flaky"), Duration::from_secs(5), 2).unwrap();
    let m: MaskSequence = client.segment(&test_video(), "x").unwrap();
    assert_eq!(m.total(), 3);
    assert_eq!(counters.flaky.load(Ordering::SeqCst), 3);

    let client = RemoteClient::new(format!("{url}/down"), Duration::from_secs(5), 2).unwrap();
    match client.segment(&test_video(), "x") {
        Err(Error::Transport { attempts, status, .. }) => {
            assert_eq!(attempts, 3);
            assert_eq!(status, Some(502));
        }
        other => panic!("expected transport error, got {other:?}"),
    }
    assert_eq!(counters.always_down.load(Ordering::SeqCst), 3);
}

#[test]
fn timeouts_surface_as_transport_errors() {
    let (url, _) = server();
    let client = RemoteClient::new(format!("{url}/slow"), Duration::from_millis(200), 0).unwrap();
    assert!(matches!(
        client.segment(&test_video(), "x"),
        Err(Error::Transport { attempts: 1, status: None, .. })
    ));
}

#[test]
fn unreachable_endpoint_is_transport_error() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let cfg = PerceptionBackendConfig { max_retries: 1, timeout_s: 1.0, ..PerceptionBackendConfig::remote(format!("http://{addr}")) };
    let backend = Backend::from_config(&cfg).unwrap();
    let err = segment(&clip(test_video()), "robotic arm", &backend).unwrap_err();
    assert!(matches!(err, Error::Transport { attempts: 2, status: None, .. }), "{err:?}");
}
