use std::io::Write;
use std::net::{TcpListener, TcpStream};
use std::sync::Arc;
use std::thread;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::remote::{encode_frame, read_frame, write_frame, Frame, FrameHeader};
use super::*;

fn random_image(w: usize, h: usize, rng: &mut ChaCha8Rng) -> Image {
    Image::from_data(
        w,
        h,
        (0..w * h * 3)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )
}

struct Fixed(Image);

impl ScoreProvider for Fixed {
    fn predict_noise(&self, _: &Image, _: usize, _: &str) -> Result<Image, GuidanceError> {
        Ok(self.0.clone())
    }
}

/// Prediction `a·x_t + b`, plus `k` when conditioned.
struct Affine {
    a: f64,
    b: f64,
    k: f64,
}

impl ScoreProvider for Affine {
    fn predict_noise(&self, x: &Image, _: usize, prompt: &str) -> Result<Image, GuidanceError> {
        let off = if prompt.is_empty() { 0.0 } else { self.k };
        Ok(Image::from_data(
            x.width,
            x.height,
            x.data.iter().map(|v| self.a * v + self.b + off).collect(),
        ))
    }
}

#[test]
fn add_noise_identities() {
    let s = NoiseSchedule::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random_image(4, 3, &mut rng);
    let e = random_image(4, 3, &mut rng);
    assert_eq!(add_noise(&s, &x, 0, &e).unwrap(), x);

    let q = NoiseSchedule::from_alphas_cumprod(&[0.25]).unwrap();
    let xt = add_noise(&q, &Image::zeros(4, 3), 1, &e).unwrap();
    for (a, b) in xt.data.iter().zip(&e.data) {
        assert!((a - 0.75f64.sqrt() * b).abs() < 1e-15);
    }

    for t in [1, 20, 500, 1000] {
        let xt = add_noise(&s, &x, t, &e).unwrap();
        for i in 0..x.data.len() {
            let rec = (xt.data[i] - s.alpha_bar(t).sqrt() * x.data[i]) / s.sigma(t);
            assert!((rec - e.data[i]).abs() < 1e-9);
        }
    }
    assert!(matches!(
        add_noise(&s, &x, 1001, &e),
        Err(GuidanceError::LevelOutOfRange { .. })
    ));
}

#[test]
fn cfg_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let c = random_image(3, 3, &mut rng);
    let u = random_image(3, 3, &mut rng);
    assert_eq!(cfg_combine(&u, &u, 7.5).unwrap(), u);
    let one = cfg_combine(&c, &u, 1.0).unwrap();
    for (a, b) in one.data.iter().zip(&c.data) {
        assert!((a - b).abs() < 1e-15);
    }
    let g = cfg_combine(&c, &Image::zeros(3, 3), 7.5).unwrap();
    for (a, b) in g.data.iter().zip(&c.data) {
        assert!((a - 7.5 * b).abs() < 1e-15);
    }
    assert!(cfg_combine(&c, &Image::zeros(2, 3), 1.0).is_err());
}

#[test]
fn sds_vanishes_for_exact_prediction_and_zero_weight() {
    let s = NoiseSchedule::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random_image(5, 4, &mut rng);
    let e = random_image(5, 4, &mut rng);
    let u = sds_update(&s, &x, &Fixed(e.clone()), "a cat", 7.5, 300, &e, 1.0).unwrap();
    assert!(u.gradient.data.iter().all(|&v| v == 0.0));
    let toy = ToyDiffusion::new(s.clone(), [0.2; 3], [0.5; 3], 0.1);
    let u = sds_update(&s, &x, &toy, "a cat", 7.5, 300, &e, 0.0).unwrap();
    assert!(u.gradient.data.iter().all(|&v| v == 0.0));
}

#[test]
fn sds_matches_closed_form_toy_posterior() {
    let s = NoiseSchedule::default();
    let (m_c, m_u, v) = ([0.1, 0.4, 0.9], [0.5, 0.5, 0.5], 0.05);
    let toy = ToyDiffusion::new(s.clone(), m_c, m_u, v);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random_image(1, 1, &mut rng);
    let e = random_image(1, 1, &mut rng);
    for (t, w, cfg) in [(20, 1.0, 1.0), (250, 0.7, 7.5), (500, 2.0, 3.0)] {
        let u = sds_update(&s, &x, &toy, "y", cfg, t, &e, w).unwrap();
        let a = s.alpha_bar(t);
        let sig = (1.0 - a).sqrt();
        for k in 0..3 {
            let xt = a.sqrt() * x.data[k] + sig * e.data[k];
            let pc = sig * (xt - a.sqrt() * m_c[k]) / (a * v + sig * sig);
            let pu = sig * (xt - a.sqrt() * m_u[k]) / (a * v + sig * sig);
            let expected = w * (pu + cfg * (pc - pu) - e.data[k]);
            assert!((u.gradient.data[k] - expected).abs() < 1e-6);
        }
    }
}

#[test]
fn ddim_invert_zero_prediction_scales() {
    let s = NoiseSchedule::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_image(3, 2, &mut rng);
    let zero = Fixed(Image::zeros(3, 2));
    let out = ddim_invert(&s, &x, 100, 150, 1, &zero).unwrap();
    let f = s.alpha_bar(250).sqrt() / s.alpha_bar(100).sqrt();
    for (a, b) in out.data.iter().zip(&x.data) {
        assert!((a - f * b).abs() < 1e-12);
    }
    let toy = ToyDiffusion::new(s.clone(), [0.0; 3], [0.3; 3], 0.5);
    assert_eq!(ddim_invert(&s, &x, 100, 0, 1, &toy).unwrap(), x);
    assert!(ddim_invert(&s, &x, 900, 200, 1, &toy).is_err());
}

#[test]
fn ddim_step_is_exactly_invertible_with_same_estimate() {
    let s = NoiseSchedule::default();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random_image(4, 4, &mut rng);
    let toy = ToyDiffusion::new(s.clone(), [0.0; 3], [0.3; 3], 0.5);
    for (from, to) in [(20, 120), (300, 400), (1, 999)] {
        let e = toy.predict_noise(&x, from, "").unwrap();
        let up = ddim_step(&s, &x, from, to, &e).unwrap();
        let back = ddim_step(&s, &up, to, from, &e).unwrap();
        for (a, b) in back.data.iter().zip(&x.data) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn ddim_denoise_then_invert_round_trips_on_toy() {
    let s = NoiseSchedule::default();
    let toy = ToyDiffusion::new(s.clone(), [0.0; 3], [0.3, -0.2, 0.1], 1e-4);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x_t = random_image(1, 1, &mut rng);
    let x_s = ddim_denoise(&s, &x_t, 300, 100, 100, &toy).unwrap();
    let back = ddim_invert(&s, &x_s, 200, 100, 100, &toy).unwrap();
    for (a, b) in back.data.iter().zip(&x_t.data) {
        assert!((a - b).abs() < 1e-5, "{a} vs {b}");
    }
}

#[test]
fn ism_identities() {
    let s = NoiseSchedule::default();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random_image(4, 3, &mut rng);
    let e = random_image(4, 3, &mut rng);

    // cond == uncond and delta 0: terms coincide
    let same = Affine {
        a: 0.3,
        b: 0.1,
        k: 0.0,
    };
    let u = ism_update(&s, &x, &same, "", 7.5, 200, 0, 1, &e, 1.0).unwrap();
    assert!(u.gradient.data.iter().all(|&v| v == 0.0));

    // constant prediction ignoring everything: zero for any delta
    let c = Fixed(Image::filled(4, 3, [0.4, -0.1, 0.2]));
    let u = ism_update(&s, &x, &c, "dog", 7.5, 300, 100, 1, &e, 1.0).unwrap();
    assert!(u.gradient.data.iter().all(|&v| v == 0.0));

    // constant conditional offset k, uncond independent of x_t
    let off = Affine {
        a: 0.0,
        b: 0.25,
        k: 0.6,
    };
    for (cfg, w) in [(1.0, 1.0), (7.5, 0.5)] {
        let u = ism_update(&s, &x, &off, "dog", cfg, 300, 100, 2, &e, w).unwrap();
        for v in &u.gradient.data {
            assert!((v - w * cfg * 0.6).abs() < 1e-12);
        }
        assert_eq!((u.t, u.s), (Some(300), Some(200)));
    }
    assert!(ism_update(&s, &x, &off, "dog", 1.0, 50, 100, 1, &e, 1.0).is_err());
}

#[test]
fn updates_are_linear_in_weight() {
    let s = NoiseSchedule::default();
    let toy = ToyDiffusion::new(s.clone(), [0.1; 3], [0.6; 3], 0.2);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = random_image(3, 3, &mut rng);
    let e = random_image(3, 3, &mut rng);
    let a = sds_update(&s, &x, &toy, "y", 7.5, 400, &e, 1.0).unwrap();
    let b = sds_update(&s, &x, &toy, "y", 7.5, 400, &e, 3.0).unwrap();
    let c = ism_update(&s, &x, &toy, "y", 7.5, 400, 100, 1, &e, 1.0).unwrap();
    let d = ism_update(&s, &x, &toy, "y", 7.5, 400, 100, 1, &e, 3.0).unwrap();
    for i in 0..x.data.len() {
        assert!((3.0 * a.gradient.data[i] - b.gradient.data[i]).abs() < 1e-12);
        assert!((3.0 * c.gradient.data[i] - d.gradient.data[i]).abs() < 1e-12);
    }
}

#[test]
fn photometric_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let r = random_image(6, 5, &mut rng);
    assert!(photometric_update(&r, &r)
        .unwrap()
        .gradient
        .data
        .iter()
        .all(|&v| v == 0.0));
    let shifted = Image::from_data(
        6,
        5,
        r.data
            .iter()
            .enumerate()
            .map(|(i, v)| v + [0.1, 0.2, 0.3][i % 3])
            .collect(),
    );
    let u = photometric_update(&shifted, &r).unwrap();
    for (i, v) in u.gradient.data.iter().enumerate() {
        assert!((v - [0.1, 0.2, 0.3][i % 3]).abs() < 1e-12);
    }
    let x = random_image(6, 5, &mut rng);
    let u = photometric_update(&x, &r).unwrap();
    for i in 0..x.data.len() {
        assert_eq!(u.gradient.data[i], x.data[i] - r.data[i]);
    }
}

#[test]
fn photometric_oracle_requires_reference() {
    let pose = CameraPose::new(4.0, 10.0, 80.0, 49.1, 8, 8);
    let img = Image::filled(8, 8, [0.5; 3]);
    let set = ReferenceSet {
        images: vec![(pose, img.clone())],
    };
    let oracle = PhotometricOracle::new(Arc::new(set));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let view = GuidanceView {
        pose,
        iteration: 0,
        total_iterations: 1,
    };
    assert!(oracle
        .update(&img, &view, &mut rng)
        .unwrap()
        .gradient
        .data
        .iter()
        .all(|&v| v == 0.0));
    let other = GuidanceView {
        pose: CameraPose::new(4.0, 11.0, 80.0, 49.1, 8, 8),
        ..view
    };
    assert!(matches!(
        oracle.update(&img, &other, &mut rng),
        Err(GuidanceError::MissingReference(_))
    ));
}

#[test]
fn level_sampling_stays_in_range_and_anneals() {
    let settings = ScoreSettings::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let pose = CameraPose::new(4.0, 0.0, 90.0, 49.1, 8, 8);
    let view = GuidanceView {
        pose,
        iteration: 0,
        total_iterations: 100,
    };
    for _ in 0..2000 {
        let t = settings.sample_level(1000, &view, &mut rng);
        assert!((20..=500).contains(&t));
    }
    let annealed = ScoreSettings {
        anneal: true,
        ..settings
    };
    let late = GuidanceView {
        iteration: 100,
        ..view
    };
    assert_eq!(annealed.sample_level(1000, &late, &mut rng), 20);
}

#[test]
fn score_guidance_has_image_shape_and_is_finite() {
    let s = NoiseSchedule::default();
    let toy: Arc<dyn ScoreProvider> =
        Arc::new(ToyDiffusion::new(s.clone(), [0.2; 3], [0.5; 3], 0.1));
    let pose = CameraPose::new(4.0, 0.0, 90.0, 49.1, 8, 8);
    let view = GuidanceView {
        pose,
        iteration: 0,
        total_iterations: 10,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = random_image(8, 6, &mut rng);
    for mode in [
        ScoreMode::Sds,
        ScoreMode::Ism {
            delta: 100,
            strides: 1,
        },
    ] {
        let g = ScoreGuidance {
            provider: toy.clone(),
            schedule: s.clone(),
            mode,
            settings: ScoreSettings {
                prompt: "y".into(),
                ..Default::default()
            },
        };
        let u = g.update(&x, &view, &mut rng).unwrap();
        assert!(u.gradient.same_shape(&x) && u.gradient.is_finite());
        assert!(u.mean_abs.is_finite() && u.loss.is_finite());
    }
}

// -- remote protocol --------------------------------------------------------

/// Echo server: `predict_noise` returns `cfg·x`, `encode`/`decode` return the
/// payload unchanged, `ping` answers `pong`. Malformed frames get an error
/// frame.
fn spawn_mock() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { break };
            thread::spawn(move || loop {
                let reply = match read_frame(&mut stream) {
                    Ok(f) => match f.header.op.as_str() {
                        "ping" => {
                            let mut h = FrameHeader::new("pong", Vec::new());
                            h.extra.insert("steps".into(), 1000.into());
                            Frame {
                                header: h,
                                payload: Vec::new(),
                            }
                        }
                        "predict_noise" => {
                            let cfg = f.header.cfg.unwrap_or(1.0) as f32;
                            Frame {
                                header: FrameHeader::new("predict_noise", f.header.shape.clone()),
                                payload: f.payload.iter().map(|v| v * cfg).collect(),
                            }
                        }
                        "encode" | "decode" => Frame {
                            header: FrameHeader::new(&f.header.op, f.header.shape),
                            payload: f.payload,
                        },
                        "bad_shape" => Frame {
                            header: FrameHeader::new("predict_noise", vec![1, 1, 3]),
                            payload: vec![0.0; 3],
                        },
                        op => Frame {
                            header: FrameHeader::error("unknown_op", op),
                            payload: Vec::new(),
                        },
                    },
                    Err(GuidanceError::Protocol { message, .. }) => {
                        let _ = write_frame(
                            &mut stream,
                            &Frame {
                                header: FrameHeader::error("malformed", &message),
                                payload: Vec::new(),
                            },
                        );
                        break;
                    }
                    Err(_) => break,
                };
                if write_frame(&mut stream, &reply).is_err() {
                    break;
                }
            });
        }
    });
    addr
}

#[test]
fn frame_round_trip_is_bit_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..200 {
        let n = rng.random_range(0..50);
        let payload: Vec<f32> = (0..n)
            .map(|_| f32::from_bits(rng.random::<u32>() & 0x7f7f_ffff))
            .collect();
        let mut header = FrameHeader::new("predict_noise", vec![n]);
        header.t = Some(rng.random_range(0..1000));
        header.prompt = Some("a ☃ on a table".into());
        header.cfg = Some(7.5);
        let f = Frame { header, payload };
        let bytes = encode_frame(&f).unwrap();
        let back = read_frame(&mut bytes.as_slice()).unwrap();
        assert_eq!(back.header, f.header);
        assert!(back
            .payload
            .iter()
            .zip(&f.payload)
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}

#[test]
fn truncated_frame_reports_offset() {
    let f = Frame {
        header: FrameHeader::new("encode", vec![2, 2, 3]),
        payload: vec![1.0; 12],
    };
    let bytes = encode_frame(&f).unwrap();
    let cut = &bytes[..bytes.len() - 5];
    match read_frame(&mut &cut[..]) {
        Err(GuidanceError::Protocol { offset, message }) => {
            assert_eq!(offset, bytes.len() - 5);
            assert!(message.contains("expected 48 bytes"), "{message}");
        }
        other => panic!("unexpected {other:?}"),
    }
    let bad = Frame {
        header: FrameHeader::new("encode", vec![2, 2]),
        payload: vec![1.0; 3],
    };
    assert!(encode_frame(&bad).is_err());
}

#[test]
fn remote_provider_round_trips_against_mock() {
    let addr = spawn_mock();
    let p = RemoteProvider::new(addr.clone());
    let pong = p.ping().unwrap();
    assert_eq!(pong.op, "pong");
    assert_eq!(pong.extra["steps"], 1000);

    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for i in 0..50 {
        let (w, h) = (rng.random_range(1..9), rng.random_range(1..9));
        let x = Image::from_data(
            w,
            h,
            (0..w * h * 3)
                .map(|_| rng.random_range(-3.0f32..3.0) as f64)
                .collect(),
        );
        let e = p.predict_noise(&x, i, "").unwrap();
        assert_eq!(e, x);
        let g = p.predict_guided(&x, i, "dog", 2.0).unwrap();
        assert!(g.data.iter().zip(&x.data).all(|(a, b)| *a == 2.0 * b));
        let lat = p.encode(&x).unwrap();
        assert_eq!(p.decode(&lat).unwrap(), x);
    }

    // concurrent callers share the pool
    let shared = Arc::new(p);
    let handles: Vec<_> = (0..4)
        .map(|k| {
            let p = shared.clone();
            thread::spawn(move || {
                let x = Image::filled(3, 2, [k as f64, 0.5, -1.0]);
                assert_eq!(p.predict_noise(&x, 10, "").unwrap(), x);
            })
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }

    let err = shared.call(&Frame {
        header: FrameHeader::new("nope", Vec::new()),
        payload: Vec::new(),
    });
    assert!(matches!(err, Err(GuidanceError::Remote { ref code, .. }) if code == "unknown_op"));

    let bad = shared
        .call(&Frame {
            header: FrameHeader::new("bad_shape", vec![2, 2, 3]),
            payload: vec![0.0; 12],
        })
        .unwrap();
    assert_eq!(bad.header.shape, vec![1, 1, 3]);
}

#[test]
fn remote_provider_rejects_wrong_response_shape() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    thread::spawn(move || {
        let (mut s, _) = listener.accept().unwrap();
        let _ = read_frame(&mut s).unwrap();
        write_frame(
            &mut s,
            &Frame {
                header: FrameHeader::new("predict_noise", vec![1, 1, 3]),
                payload: vec![0.0; 3],
            },
        )
        .unwrap();
    });
    let p = RemoteProvider::new(addr);
    let x = Image::zeros(2, 2);
    assert!(matches!(
        p.predict_noise(&x, 1, ""),
        Err(GuidanceError::Protocol { .. })
    ));
}

#[test]
fn malformed_header_gets_error_frame() {
    let addr = spawn_mock();
    let mut s = TcpStream::connect(addr).unwrap();
    let junk = b"{not json";
    s.write_all(&(junk.len() as u32).to_le_bytes()).unwrap();
    s.write_all(junk).unwrap();
    let reply = read_frame(&mut s).unwrap();
    assert_eq!(reply.header.op, "error");
    assert_eq!(reply.header.code.as_deref(), Some("malformed"));
}
