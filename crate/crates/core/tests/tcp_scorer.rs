use std::net::TcpListener;
use std::thread;
use std::time::Duration;

use rdepth::guidance::client::TcpScorer;
use rdepth::guidance::protocol::{
    decode_request, encode_response, read_frame, write_frame, GuidanceResponse, STATUS_MODEL_FAILURE,
};
use rdepth::guidance::{sds_gradient, GuidanceConfig, ScoreRequest, Scorer};
use rdepth::refine::run_rng;
use rdepth::shading::LightingSample;
use rdepth::{Error, RgbGrid, Vec3Grid};

/// Serves `requests` frames, answering each with `reply(request)`.
fn serve(requests: usize, reply: fn(&rdepth::guidance::protocol::GuidanceRequest) -> GuidanceResponse) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    thread::spawn(move || {
        let (mut stream, _) = listener.accept().unwrap();
        for _ in 0..requests {
            let Ok(frame) = read_frame(&mut stream) else { return };
            let req = decode_request(&frame).unwrap();
            write_frame(&mut stream, &encode_response(&reply(&req))).unwrap();
        }
    });
    addr
}

fn echo(req: &rdepth::guidance::protocol::GuidanceRequest) -> GuidanceResponse {
    GuidanceResponse::Ok(req.noise.clone())
}

fn field(h: usize, w: usize, x: f64) -> Vec3Grid {
    let v = (0..h * w).map(|i| [x, 0.01 * (i / w) as f64, -0.02 * (i % w) as f64]).collect();
    Vec3Grid::new(h, w, v).unwrap()
}

#[test]
fn echo_server_round_trip() {
    let addr = serve(2, echo);
    let mut scorer = TcpScorer::connect(&addr, Duration::from_secs(5)).unwrap().with_model_side(None);
    let noised = field(5, 7, 0.25);
    let noise = field(5, 7, -0.5);
    let lighting = LightingSample::frontal();
    for t in [20, 500] {
        let out = scorer
            .predict_noise(&ScoreRequest {
                noised: &noised,
                noise: &noise,
                timestep: t,
                prompt: "a photo",
                lighting: &lighting,
            })
            .unwrap();
        // Values cross the wire as f32.
        for (a, b) in out.values().iter().zip(noise.values()) {
            for k in 0..3 {
                assert_eq!(a[k], b[k] as f32 as f64);
            }
        }
    }
}

#[test]
fn echo_server_gives_zero_signal_through_model_frame() {
    let addr = serve(1, echo);
    let mut scorer = TcpScorer::connect(&addr, Duration::from_secs(5)).unwrap().with_model_side(Some(16));
    let img = RgbGrid::from_fn(6, 10, |r, c| [0.1 * r as f64, 0.05 * c as f64, 0.5]).unwrap();
    let mut rng = run_rng(4, 0);
    let sig = sds_gradient(&img, &mut scorer, &GuidanceConfig::default(), &LightingSample::frontal(), &mut rng).unwrap();
    assert_eq!(sig.grad.shape(), (6, 10));
    assert!(sig.grad.values().iter().flatten().all(|v| v.abs() < 1e-6));
}

#[test]
fn failure_status_is_guidance_error() {
    let addr = serve(1, |_| GuidanceResponse::Failed {
        status: STATUS_MODEL_FAILURE,
        message: "out of memory".into(),
    });
    let mut scorer = TcpScorer::connect(&addr, Duration::from_secs(5)).unwrap().with_model_side(None);
    let x = field(3, 3, 0.0);
    let err = scorer
        .predict_noise(&ScoreRequest {
            noised: &x,
            noise: &x,
            timestep: 100,
            prompt: "",
            lighting: &LightingSample::frontal(),
        })
        .unwrap_err();
    assert!(matches!(err, Error::Guidance(ref m) if m.contains("out of memory")), "{err}");
}

#[test]
fn closed_connection_is_reported() {
    let addr = serve(0, echo);
    let mut scorer = TcpScorer::connect(&addr, Duration::from_secs(5)).unwrap().with_model_side(None);
    let x = field(3, 3, 0.0);
    let err = scorer
        .predict_noise(&ScoreRequest {
            noised: &x,
            noise: &x,
            timestep: 100,
            prompt: "",
            lighting: &LightingSample::frontal(),
        })
        .unwrap_err();
    assert!(matches!(err, Error::Guidance(_) | Error::Protocol(_)), "{err}");
}

#[test]
fn unreachable_scorer() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let err = TcpScorer::connect(&format!("127.0.0.1:{port}"), Duration::from_millis(500)).unwrap_err();
    assert!(matches!(err, Error::Guidance(_)));
}
